//! Convolution with a per-modality filter bank, tanh activation and global
//! max-pooling over windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::windowing::{make_windows, SequenceSample, WindowedSequence};

#[inline]
pub fn activate(x: f64) -> f64 {
    x.tanh()
}

/// Derivative of [`activate`].
#[inline]
pub fn activate_grad(x: f64) -> f64 {
    let t = x.tanh();
    1.0 - t * t
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The `u` filters of one modality. Every filter has dimension `d * h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub modality: usize,
    pub filters: Vec<Vec<f64>>,
}

impl FilterBank {
    pub fn zeros(modality: usize, count: usize, dim: usize) -> Self {
        FilterBank {
            modality,
            filters: vec![vec![0.0; dim]; count],
        }
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.filters.first().map_or(0, Vec::len)
    }

    pub fn squared_norm(&self) -> f64 {
        self.filters.iter().flatten().map(|x| x * x).sum()
    }
}

/// Common-space representation of one sample.
///
/// `indicators[k]` is the zero-based window index at which filter `k` attains
/// its maximum activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub indicators: Vec<usize>,
}

/// Max-pooled activation of one filter and the first window attaining it.
pub fn conv_max_pool(windows: &WindowedSequence, filter: &[f64]) -> Result<(f64, usize)> {
    if filter.len() != windows.dim() {
        return Err(Error::invalid(format!(
            "filter dimension {} does not match window dimension {}",
            filter.len(),
            windows.dim()
        )));
    }
    Ok(max_pool_unchecked(windows, filter))
}

pub(crate) fn max_pool_unchecked(windows: &WindowedSequence, filter: &[f64]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (t, y) in windows.iter().enumerate() {
        let a = activate(dot(filter, y));
        // strict comparison keeps the smallest index on ties
        if a > best.0 {
            best = (a, t);
        }
    }
    best
}

/// Embeds an already-windowed sample with every filter of `bank`.
pub fn embed_windows(windows: &WindowedSequence, bank: &FilterBank) -> Result<Embedding> {
    let mut values = Vec::with_capacity(bank.len());
    let mut indicators = Vec::with_capacity(bank.len());
    for w in &bank.filters {
        let (v, t) = conv_max_pool(windows, w)?;
        values.push(v);
        indicators.push(t);
    }
    Ok(Embedding { values, indicators })
}

pub fn embed(sample: &SequenceSample, bank: &FilterBank, h: usize) -> Result<Embedding> {
    if bank.modality != sample.modality {
        return Err(Error::invalid(format!(
            "filter bank belongs to modality {}, sample to modality {}",
            bank.modality, sample.modality
        )));
    }
    let windows = make_windows(sample, h)?;
    embed_windows(&windows, bank)
}

/// Linear classifier score `v . z`.
pub fn score(embedding: &Embedding, v: &[f64]) -> Result<f64> {
    if v.len() != embedding.values.len() {
        return Err(Error::invalid(format!(
            "classifier has dimension {}, embedding {}",
            v.len(),
            embedding.values.len()
        )));
    }
    Ok(dot(&embedding.values, v))
}
