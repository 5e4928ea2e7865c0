use serde::{Deserialize, Serialize};

/// A subset of the vertices of a space, stored as a membership mask.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexSet {
    mask: Vec<bool>,
}

impl VertexSet {
    pub fn empty(n: usize) -> Self {
        Self { mask: vec![false; n] }
    }

    pub fn full(n: usize) -> Self {
        Self { mask: vec![true; n] }
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self { mask }
    }

    pub fn from_indices(n: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = vec![false; n];
        for i in indices {
            mask[i] = true;
        }
        Self { mask }
    }

    pub fn from_predicate(n: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        Self {
            mask: (0..n).map(&mut f).collect(),
        }
    }

    /// Size of the ambient vertex set.
    pub fn universe(&self) -> usize {
        self.mask.len()
    }

    #[inline]
    pub fn contains(&self, v: usize) -> bool {
        self.mask[v]
    }

    pub fn insert(&mut self, v: usize) {
        self.mask[v] = true;
    }

    pub fn remove(&mut self, v: usize) {
        self.mask[v] = false;
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_subset(&self, other: &VertexSet) -> bool {
        self.mask
            .iter()
            .zip(&other.mask)
            .all(|(&a, &b)| !a || b)
    }

    pub fn complement(&self) -> VertexSet {
        Self {
            mask: self.mask.iter().map(|&b| !b).collect(),
        }
    }

    pub fn difference(&self, other: &VertexSet) -> VertexSet {
        Self {
            mask: self
                .mask
                .iter()
                .zip(&other.mask)
                .map(|(&a, &b)| a && !b)
                .collect(),
        }
    }

    pub fn intersection(&self, other: &VertexSet) -> VertexSet {
        Self {
            mask: self
                .mask
                .iter()
                .zip(&other.mask)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }
}
