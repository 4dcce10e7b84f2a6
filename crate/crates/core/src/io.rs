//! Matrix Market and CSV ingestion, chain export, atomic file writes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain::{build_chain, webgraph_chain, ReversibleChain};
use crate::error::{Error, Result};
use crate::marked::MarkedChain;

/// Relative tolerance for the symmetry check on `general` input.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symmetry {
    General,
    Symmetric,
}

/// Coordinate matrix with duplicates summed, 0-based, row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct CooMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl CooMatrix {
    fn from_map(nrows: usize, ncols: usize, map: BTreeMap<(usize, usize), f64>) -> Self {
        Self { nrows, ncols, entries: map.into_iter().map(|((i, j), v)| (i, j, v)).collect() }
    }

    pub fn off_diagonal(&self) -> Vec<(usize, usize, f64)> {
        self.entries.iter().copied().filter(|&(i, j, _)| i != j).collect()
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Parse coordinate Matrix Market text. Symmetric storage is expanded to
/// both triangles.
pub fn parse_matrix_market(text: &str) -> Result<(CooMatrix, Symmetry)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, banner) = lines.next().ok_or_else(|| parse_err(1, "empty input"))?;
    let fields: Vec<String> = banner.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(parse_err(1, "expected '%%MatrixMarket matrix coordinate <field> <symmetry>'"));
    }
    if fields[2] != "coordinate" {
        return Err(parse_err(1, format!("unsupported format '{}'", fields[2])));
    }
    let pattern = match fields[3].as_str() {
        "real" | "integer" => false,
        "pattern" => true,
        other => return Err(parse_err(1, format!("unsupported field '{other}'"))),
    };
    let symmetry = match fields[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => return Err(parse_err(1, format!("unsupported symmetry '{other}'"))),
    };

    let mut data = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (size_line, size) = data.next().ok_or_else(|| parse_err(2, "missing size line"))?;
    let dims: Vec<usize> =
        size.split_whitespace().map(|s| s.parse().map_err(|_| parse_err(size_line, format!("bad size field '{s}'")))).collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(parse_err(size_line, "size line needs rows, columns and entry count"));
    }
    let (nrows, ncols, nnz) = (dims[0], dims[1], dims[2]);
    if symmetry == Symmetry::Symmetric && nrows != ncols {
        return Err(parse_err(size_line, "symmetric storage requires a square matrix"));
    }

    let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut count = 0;
    for (ln, line) in data {
        let tok: Vec<&str> = line.split_whitespace().collect();
        let want = if pattern { 2 } else { 3 };
        if tok.len() != want {
            return Err(parse_err(ln, format!("expected {want} fields, found {}", tok.len())));
        }
        let index = |s: &str, bound: usize| -> Result<usize> {
            let v: usize = s.parse().map_err(|_| parse_err(ln, format!("bad index '{s}'")))?;
            if v == 0 || v > bound {
                return Err(parse_err(ln, format!("index {v} outside 1..={bound}")));
            }
            Ok(v - 1)
        };
        let i = index(tok[0], nrows)?;
        let j = index(tok[1], ncols)?;
        let v: f64 = if pattern { 1.0 } else { tok[2].parse().map_err(|_| parse_err(ln, format!("bad value '{}'", tok[2])))? };
        if !v.is_finite() {
            return Err(parse_err(ln, "non-finite value"));
        }
        if symmetry == Symmetry::Symmetric && j > i {
            return Err(parse_err(ln, "symmetric storage must list the lower triangle only"));
        }
        *map.entry((i, j)).or_insert(0.0) += v;
        if symmetry == Symmetry::Symmetric && i != j {
            *map.entry((j, i)).or_insert(0.0) += v;
        }
        count += 1;
    }
    if count != nnz {
        return Err(parse_err(size_line, format!("header announces {nnz} entries, found {count}")));
    }
    Ok((CooMatrix::from_map(nrows, ncols, map), symmetry))
}

/// Reject a `general` matrix whose entries lack a matching transpose.
pub fn check_symmetric(m: &CooMatrix) -> Result<()> {
    if m.nrows != m.ncols {
        return Err(Error::ShapeMismatch { expected: "square matrix".into(), found: format!("{}x{}", m.nrows, m.ncols) });
    }
    let scale = m.entries.iter().fold(0.0f64, |a, e| a.max(e.2.abs()));
    let lookup: BTreeMap<(usize, usize), f64> = m.entries.iter().map(|&(i, j, v)| ((i, j), v)).collect();
    for &(i, j, v) in &m.entries {
        let t = lookup.get(&(j, i)).copied().unwrap_or(0.0);
        if (v - t).abs() > SYMMETRY_TOLERANCE * scale {
            return Err(Error::AsymmetricInput { i, j });
        }
    }
    Ok(())
}

/// Symmetric sparse matrix from a Matrix Market file.
pub fn load_matrix_market(path: &Path) -> Result<CooMatrix> {
    let text = std::fs::read_to_string(path)?;
    let (m, symmetry) = parse_matrix_market(&text)?;
    if symmetry == Symmetry::General {
        check_symmetric(&m)?;
    }
    Ok(m)
}

/// Matrix Market text; symmetric storage writes the lower triangle.
pub fn format_matrix_market(m: &CooMatrix, symmetry: Symmetry) -> String {
    let rows: Vec<&(usize, usize, f64)> = match symmetry {
        Symmetry::General => m.entries.iter().collect(),
        Symmetry::Symmetric => m.entries.iter().filter(|e| e.1 <= e.0).collect(),
    };
    let kind = match symmetry {
        Symmetry::General => "general",
        Symmetry::Symmetric => "symmetric",
    };
    let mut out = format!("%%MatrixMarket matrix coordinate real {kind}\n{} {} {}\n", m.nrows, m.ncols, rows.len());
    for (i, j, v) in rows {
        out.push_str(&format!("{} {} {:?}\n", i + 1, j + 1, v));
    }
    out
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// RFC 4180 CSV with a header row.
pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(|s| s.as_ref())).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// `(row, col, value)`.
pub type Triplet = (usize, usize, f64);

/// Undirected weighted edges from CSV with columns `source,target[,weight]`
/// (0-based). Returns the vertex count and symmetric triplets.
pub fn load_edge_list_csv(path: &Path) -> Result<(usize, Vec<Triplet>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut n = 0;
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() < 2 || record.len() > 3 {
            return Err(parse_err(line, "expected source,target[,weight]"));
        }
        let field = |k: usize| record.get(k).unwrap_or("");
        let a: usize = field(0).parse().map_err(|_| parse_err(line, format!("bad vertex '{}'", field(0))))?;
        let b: usize = field(1).parse().map_err(|_| parse_err(line, format!("bad vertex '{}'", field(1))))?;
        let w: f64 = if record.len() == 3 { field(2).parse().map_err(|_| parse_err(line, format!("bad weight '{}'", field(2))))? } else { 1.0 };
        if !(w > 0.0) || !w.is_finite() {
            return Err(parse_err(line, format!("weight must be positive, got {w}")));
        }
        if a == b {
            return Err(Error::SelfLoop(a));
        }
        n = n.max(a + 1).max(b + 1);
        let key = (a.min(b), a.max(b));
        *map.entry(key).or_insert(0.0) += w;
    }
    let triplets = map.into_iter().flat_map(|((a, b), w)| [(a, b, w), (b, a, w)]).collect();
    Ok((n, triplets))
}

/// How a file on disk describes a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    /// Symmetric adjacency, turned into the random walk `R = Diag⁻¹(deg)A − I`.
    MatrixMarketAdjacency,
    /// Off-diagonal rates `R_ij`; diagonal entries are ignored.
    MatrixMarketRates,
    EdgeListCsv,
}

pub fn load_chain(path: &Path, format: InputFormat) -> Result<ReversibleChain> {
    match format {
        InputFormat::MatrixMarketAdjacency => {
            let m = load_matrix_market(path)?;
            if let Some(&(i, _, _)) = m.entries.iter().find(|e| e.0 == e.1 && e.2 != 0.0) {
                return Err(Error::SelfLoop(i));
            }
            webgraph_chain(m.nrows, &m.off_diagonal())
        }
        InputFormat::MatrixMarketRates => {
            let text = std::fs::read_to_string(path)?;
            let (m, _) = parse_matrix_market(&text)?;
            if m.nrows != m.ncols {
                return Err(Error::ShapeMismatch { expected: "square matrix".into(), found: format!("{}x{}", m.nrows, m.ncols) });
            }
            build_chain(m.nrows, &m.off_diagonal(), None)
        }
        InputFormat::EdgeListCsv => {
            let (n, triplets) = load_edge_list_csv(path)?;
            webgraph_chain(n, &triplets)
        }
    }
}

/// Off-diagonal rates as a `general` Matrix Market matrix.
pub fn chain_to_matrix_market(chain: &ReversibleChain) -> String {
    let m = CooMatrix { nrows: chain.n(), ncols: chain.n(), entries: chain.entries() };
    format_matrix_market(&m, Symmetry::General)
}

pub fn save_chain(path: &Path, chain: &ReversibleChain) -> Result<()> {
    write_atomic(path, chain_to_matrix_market(chain).as_bytes())
}

/// Labels and stationary weights of an exported marked chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkedSidecar {
    pub set: Vec<usize>,
    /// `(marking position, state)` per marked-chain index.
    pub labels: Vec<(usize, usize)>,
    pub pruned: Vec<(usize, usize)>,
    pub stationary: Vec<f64>,
}

/// Rate matrix to `<stem>.mtx`, labels to `<stem>.json`.
pub fn save_marked(dir: &Path, stem: &str, mc: &MarkedChain) -> Result<()> {
    let mut entries = Vec::new();
    for s in 0..mc.m() {
        for &(t, r) in mc.transitions(s) {
            entries.push((s, t, r));
        }
    }
    entries.sort_by_key(|e| (e.0, e.1));
    let coo = CooMatrix { nrows: mc.m(), ncols: mc.m(), entries };
    write_atomic(&dir.join(format!("{stem}.mtx")), format_matrix_market(&coo, Symmetry::General).as_bytes())?;
    let sidecar =
        MarkedSidecar { set: mc.set().members().to_vec(), labels: mc.labels().to_vec(), pruned: mc.pruned().to_vec(), stationary: mc.stationary().to_vec() };
    write_json(&dir.join(format!("{stem}.json")), &sidecar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{k3, random_reversible};

    const K3_ADJ: &str = "%%MatrixMarket matrix coordinate real symmetric\n% triangle\n3 3 3\n2 1 1\n3 1 1\n3 2 1\n";

    #[test]
    fn symmetric_banner_expands_both_triangles() {
        let (m, sym) = parse_matrix_market(K3_ADJ).unwrap();
        assert_eq!(sym, Symmetry::Symmetric);
        assert_eq!(m.entries.len(), 6);
        assert!(m.entries.contains(&(0, 1, 1.0)) && m.entries.contains(&(1, 0, 1.0)));
    }

    #[test]
    fn general_input_must_be_symmetric() {
        let text = "%%MatrixMarket matrix coordinate real general\n3 3 2\n1 2 1.0\n2 3 1.0\n";
        let (m, _) = parse_matrix_market(text).unwrap();
        assert!(matches!(check_symmetric(&m), Err(Error::AsymmetricInput { .. })));
    }

    #[test]
    fn duplicates_are_summed() {
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 4\n1 2 0.5\n1 2 0.5\n2 1 1\n2 1 0\n";
        let (m, _) = parse_matrix_market(text).unwrap();
        assert_eq!(m.entries, vec![(0, 1, 1.0), (1, 0, 1.0)]);
        check_symmetric(&m).unwrap();
    }

    #[test]
    fn malformed_headers_are_parse_errors() {
        for text in [
            "",
            "%%MatrixMarket matrix array real general\n2 2\n1\n",
            "%MatrixMarket matrix coordinate real general\n2 2 0\n",
            "%%MatrixMarket matrix coordinate real general\n2 2\n",
            "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 2 1\n",
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1\n",
            "%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n1 2 1\n",
        ] {
            assert!(matches!(parse_matrix_market(text), Err(Error::Parse { .. })), "{text:?}");
        }
    }

    #[test]
    fn chain_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (idx, chain) in [k3(), random_reversible(25, 11)].into_iter().enumerate() {
            let path = dir.path().join(format!("c{idx}.mtx"));
            save_chain(&path, &chain).unwrap();
            let back = load_chain(&path, InputFormat::MatrixMarketRates).unwrap();
            let (a, b) = (chain.rate_matrix(), back.rate_matrix());
            let scale = (0..chain.n()).map(|i| chain.exit_rate(i)).fold(0.0, f64::max);
            for i in 0..chain.n() {
                for j in 0..chain.n() {
                    assert!((a[(i, j)] - b[(i, j)]).abs() <= 1e-14 * scale);
                }
            }
        }
    }

    #[test]
    fn adjacency_and_edge_list_agree() {
        let dir = tempfile::tempdir().unwrap();
        let mtx = dir.path().join("k3.mtx");
        write_atomic(&mtx, K3_ADJ.as_bytes()).unwrap();
        let csv_path = dir.path().join("k3.csv");
        write_atomic(&csv_path, b"source,target\n0,1\n0,2\n1,2\n").unwrap();
        let a = load_chain(&mtx, InputFormat::MatrixMarketAdjacency).unwrap();
        let b = load_chain(&csv_path, InputFormat::EdgeListCsv).unwrap();
        assert_eq!(a.entries(), b.entries());
        assert!(a.stationary().iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-14));
    }

    #[test]
    fn csv_writer_quotes_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_csv(&path, &["a", "b"], &[vec!["1".to_string(), "x,y".to_string()]]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n1,\"x,y\"\n");
    }
}
