//! Sliding-window encoding of instance sequences.
//!
//! A sample is an ordered list of `d`-dimensional instance vectors. With a
//! window of `h` instances, window `t` is the concatenation
//! `[x_t; x_{t+1}; ...; x_{t+h-1}]` of length `d * h`. Sequences shorter than
//! `h` are right-padded with zero instances so that exactly one window exists.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary class label used by the shared linear classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn value(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }
}

impl TryFrom<i32> for Label {
    type Error = String;

    fn try_from(v: i32) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(format!("label must be +1 or -1, got {other}")),
        }
    }
}

impl From<Label> for i32 {
    fn from(l: Label) -> i32 {
        match l {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }
}

/// One data point: a sequence of same-dimension instance vectors from one modality.
///
/// `modality` is a zero-based index in memory; dataset files use 1-based ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub modality: usize,
    pub label: Label,
    pub instances: Vec<Vec<f64>>,
}

impl SequenceSample {
    pub fn new(modality: usize, label: Label, instances: Vec<Vec<f64>>) -> Result<Self> {
        let sample = SequenceSample {
            modality,
            label,
            instances,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .instances
            .first()
            .ok_or_else(|| Error::invalid("sample has no instances"))?;
        let d = first.len();
        if d == 0 {
            return Err(Error::invalid("instance vectors must be non-empty"));
        }
        if let Some(pos) = self.instances.iter().position(|x| x.len() != d) {
            return Err(Error::invalid(format!(
                "instance {pos} has dimension {}, expected {d}",
                self.instances[pos].len()
            )));
        }
        Ok(())
    }

    /// Instance dimension `d`; zero for an (invalid) empty sample.
    pub fn dim(&self) -> usize {
        self.instances.first().map_or(0, Vec::len)
    }
}

/// The windows of one sample, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSequence {
    dim: usize,
    data: Vec<f64>,
    source_len: usize,
}

impl WindowedSequence {
    /// Dimension of every window vector (`d * h`).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn window(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Builds a windowed sequence from explicit window vectors.
    pub fn from_windows(windows: &[Vec<f64>]) -> Result<Self> {
        let dim = windows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("at least one window is required"))?;
        if dim == 0 || windows.iter().any(|w| w.len() != dim) {
            return Err(Error::invalid("windows must share one non-zero dimension"));
        }
        Ok(WindowedSequence {
            dim,
            data: windows.concat(),
            source_len: windows.len(),
        })
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }
}

/// Number of windows produced for a sequence of `seq_len` instances.
pub fn window_count(seq_len: usize, h: usize) -> usize {
    if seq_len >= h {
        seq_len - h + 1
    } else {
        1
    }
}

pub fn make_windows(sample: &SequenceSample, h: usize) -> Result<WindowedSequence> {
    if h == 0 {
        return Err(Error::invalid("window size must be at least 1"));
    }
    sample.validate()?;
    let d = sample.dim();
    let n = sample.instances.len();
    let count = window_count(n, h);
    let mut data = Vec::with_capacity(count * d * h);
    for t in 0..count {
        for offset in 0..h {
            match sample.instances.get(t + offset) {
                Some(x) => data.extend_from_slice(x),
                None => data.extend(std::iter::repeat_n(0.0, d)),
            }
        }
    }
    Ok(WindowedSequence {
        dim: d * h,
        data,
        source_len: n,
    })
}
