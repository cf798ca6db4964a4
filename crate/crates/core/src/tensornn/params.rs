use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    /// Vectors (biases, norm gains) are exempt from weight decay.
    pub is_matrix: bool,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

impl ParamLayout {
    pub fn matrix(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name.into(), rows, cols, true)
    }

    pub fn vector(&mut self, name: impl Into<String>, len: usize) -> ParamId {
        self.add(name.into(), 1, len, false)
    }

    fn add(&mut self, name: String, rows: usize, cols: usize, is_matrix: bool) -> ParamId {
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name,
            rows,
            cols,
            offset: self.total,
            is_matrix,
        });
        self.total += rows * cols;
        id
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }
}

/// Flat parameter (or gradient, or moment) buffer laid out by a [`ParamLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub data: Vec<F>,
}

impl<F: Scalar> Params<F> {
    pub fn zeros(layout: &ParamLayout) -> Self {
        Self {
            data: vec![F::zero(); layout.total],
        }
    }

    pub fn mat<'a>(&'a self, layout: &ParamLayout, id: ParamId) -> ArrayView2<'a, F> {
        let e = layout.entry(id);
        ArrayView2::from_shape((e.rows, e.cols), &self.data[e.range()]).expect("layout shape")
    }

    pub fn mat_mut<'a>(&'a mut self, layout: &ParamLayout, id: ParamId) -> ArrayViewMut2<'a, F> {
        let e = layout.entry(id);
        ArrayViewMut2::from_shape((e.rows, e.cols), &mut self.data[e.range()]).expect("layout shape")
    }

    pub fn vec<'a>(&'a self, layout: &ParamLayout, id: ParamId) -> ArrayView1<'a, F> {
        let e = layout.entry(id);
        ArrayView1::from(&self.data[e.range()])
    }

    pub fn vec_mut<'a>(&'a mut self, layout: &ParamLayout, id: ParamId) -> ArrayViewMut1<'a, F> {
        let e = layout.entry(id);
        ArrayViewMut1::from(&mut self.data[e.range()])
    }

    pub fn fill(&mut self, v: F) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Matrices from N(0, std), vectors named `*.gain` set to one, the rest zero.
    pub fn init<R: Rng>(layout: &ParamLayout, std: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(layout);
        let normal = Normal::new(0.0, std).expect("valid std");
        for e in &layout.entries {
            let slot = &mut p.data[e.range()];
            if e.is_matrix {
                slot.iter_mut().for_each(|x| *x = F::of(normal.sample(rng)));
            } else if e.name.ends_with(".gain") {
                slot.iter_mut().for_each(|x| *x = F::one());
            }
        }
        p
    }

    pub fn check_finite(&self, layout: &ParamLayout, what: &str) -> Result<()> {
        for e in &layout.entries {
            if self.data[e.range()].iter().any(|x| !x.is_finite()) {
                return Err(Error::numeric(format!("{what} {}", e.name)));
            }
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|&x| x.to_f64() * x.to_f64()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: F) {
        self.data.iter_mut().for_each(|x| *x = *x * s);
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn cast<G: Scalar>(&self) -> Params<G> {
        Params {
            data: self.data.iter().map(|&x| G::of(x.to_f64())).collect(),
        }
    }
}
