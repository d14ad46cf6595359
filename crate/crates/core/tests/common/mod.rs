#![allow(dead_code)]

use unbiased_softmax::data::{Dataset, Example};
use unbiased_softmax::objective::{Formulation, ModelState};
use unbiased_softmax::sparse::SparseVector;

/// One unit-norm example of class 0 with two classes.
pub fn gap_instance() -> Dataset {
    Dataset::new("gap", vec![Example { label: 0, x: SparseVector::dense(&[1.0]) }], 2, 1)
}

/// State whose class-1 logit exceeds the label logit by `gap`, with `u = 0`.
pub fn gap_state(ds: &Dataset, gap: f64) -> ModelState {
    let mut s = ModelState::new(ds.k(), ds.d(), ds.n(), Formulation::Ours);
    s.row_mut(1)[0] = gap;
    s
}
