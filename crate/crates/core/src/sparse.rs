//! Sorted sparse feature vectors.

#[cfg(feature = "ip-counter")]
use std::cell::Cell;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    /// Builds from `(index, value)` pairs. Pairs are sorted; zero values are
    /// dropped. Returns `None` on a duplicate index or a non-finite value.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Option<Self> {
        pairs.sort_unstable_by_key(|p| p.0);
        let mut indices = Vec::with_capacity(pairs.len());
        let mut values = Vec::with_capacity(pairs.len());
        for (idx, val) in pairs {
            if !val.is_finite() {
                return None;
            }
            if indices.last() == Some(&idx) {
                return None;
            }
            if val != 0.0 {
                indices.push(idx);
                values.push(val);
            }
        }
        Some(Self { indices, values })
    }

    pub fn dense(values: &[f64]) -> Self {
        let pairs = values.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect();
        Self::from_pairs(pairs).expect("dense input is finite and unique")
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| (i as usize, v))
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_index(&self) -> Option<u32> {
        self.indices.last().copied()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// Divides by the Euclidean norm; empty vectors are left alone.
    pub fn normalize(&mut self) {
        let norm = self.norm();
        if norm > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= norm);
        }
    }

    /// Keeps only entries with index below `limit`.
    pub fn truncate_dim(&mut self, limit: u32) {
        let keep = self.indices.partition_point(|&i| i < limit);
        self.indices.truncate(keep);
        self.values.truncate(keep);
    }

    /// Inner product with a dense row.
    #[inline]
    pub fn dot(&self, row: &[f64]) -> f64 {
        #[cfg(feature = "ip-counter")]
        INNER_PRODUCTS.with(|c| c.set(c.get() + 1));
        self.iter().map(|(i, v)| v * row[i]).sum()
    }

    /// `row += alpha · self`
    #[inline]
    pub fn axpy_into(&self, alpha: f64, row: &mut [f64]) {
        for (i, v) in self.iter() {
            row[i] += alpha * v;
        }
    }
}

#[cfg(feature = "ip-counter")]
thread_local! {
    static INNER_PRODUCTS: Cell<u64> = const { Cell::new(0) };
}

/// Number of `SparseVector::dot` calls made on this thread so far.
#[cfg(feature = "ip-counter")]
pub fn inner_product_count() -> u64 {
    INNER_PRODUCTS.with(|c| c.get())
}
