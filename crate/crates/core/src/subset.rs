use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A nonempty set of selected states, kept sorted, with its complement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet {
    n: usize,
    members: Vec<usize>,
    complement: Vec<usize>,
}

impl IndexSet {
    pub fn new(n: usize, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptySelection);
        }
        let mut members = indices.to_vec();
        members.sort_unstable();
        for w in members.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateIndex(w[0]));
            }
        }
        if let Some(&last) = members.last() {
            if last >= n {
                return Err(Error::IndexOutOfRange { index: last, n });
            }
        }
        let mut in_set = vec![false; n];
        for &i in &members {
            in_set[i] = true;
        }
        let complement = (0..n).filter(|&i| !in_set[i]).collect();
        Ok(Self { n, members, complement })
    }

    pub fn full(n: usize) -> Self {
        Self { n, members: (0..n).collect(), complement: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn complement(&self) -> &[usize] {
        &self.complement
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.complement.is_empty()
    }

    /// Position of state `i` within the sorted members.
    pub fn position(&self, i: usize) -> Option<usize> {
        self.members.binary_search(&i).ok()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.position(i).is_some()
    }
}
