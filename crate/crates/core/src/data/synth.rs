use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::{Dataset, Record};
use crate::error::{Error, Result};
use crate::windowing::Label;

/// Parameters of the synthetic multi-modality generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub modalities: usize,
    pub classes: usize,
    pub per_class: usize,
    /// Instance dimension per modality (one entry is shared by all).
    pub dims: Vec<usize>,
    /// Inclusive range of sequence lengths.
    pub seq_len: (usize, usize),
    /// Distance between the anchors of two classes within one modality.
    pub separation: f64,
    /// Standard deviation of the per-coordinate instance noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            modalities: 2,
            classes: 2,
            per_class: 20,
            dims: vec![4, 6],
            seq_len: (3, 8),
            separation: 4.0,
            noise: 1.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    fn dim(&self, j: usize) -> usize {
        if self.dims.len() == 1 {
            self.dims[0]
        } else {
            self.dims[j]
        }
    }

    fn validate(&self) -> Result<()> {
        if self.modalities == 0 || self.classes == 0 || self.per_class == 0 {
            return Err(Error::invalid(
                "modalities, classes and per-class count must be >= 1",
            ));
        }
        if self.dims.len() != 1 && self.dims.len() != self.modalities {
            return Err(Error::invalid("give one dimension, or one per modality"));
        }
        if self.dims.contains(&0) {
            return Err(Error::invalid("dimensions must be >= 1"));
        }
        let (lo, hi) = self.seq_len;
        if lo == 0 || lo > hi {
            return Err(Error::invalid(
                "sequence length range must satisfy 1 <= min <= max",
            ));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::invalid("separation must be finite and >= 0"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise must be finite and >= 0"));
        }
        Ok(())
    }

    /// Class anchors of modality `j`, pairwise `separation` apart when
    /// `classes <= dim` (scaled, permuted basis vectors).
    pub fn anchors(&self, j: usize) -> Vec<Vec<f64>> {
        let d = self.dim(j);
        let radius = self.separation / std::f64::consts::SQRT_2;
        let mut rng = stream(self.seed, 1 + j as u64);
        if self.classes <= d {
            let mut axes: Vec<usize> = (0..d).collect();
            axes.shuffle(&mut rng);
            (0..self.classes)
                .map(|c| {
                    let mut a = vec![0.0; d];
                    a[axes[c]] = radius;
                    a
                })
                .collect()
        } else {
            // more classes than axes: random directions on the sphere of the same radius
            (0..self.classes)
                .map(|_| {
                    let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = g
                        .iter()
                        .map(|x| x * x)
                        .sum::<f64>()
                        .sqrt()
                        .max(f64::MIN_POSITIVE);
                    g.iter().map(|x| radius * x / norm).collect()
                })
                .collect()
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const SAMPLE_STREAM: u64 = 1 << 32;

/// Draws `per_class` sequences for every (modality, class). Classes are
/// numbered from 1; class 1 is labelled `+1`, every other class `-1`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut records = Vec::with_capacity(spec.modalities * spec.classes * spec.per_class);
    for j in 0..spec.modalities {
        let anchors = spec.anchors(j);
        let mut rng = stream(spec.seed, SAMPLE_STREAM + j as u64);
        for (c, anchor) in anchors.iter().enumerate() {
            for _ in 0..spec.per_class {
                let len = rng.random_range(spec.seq_len.0..=spec.seq_len.1);
                let seq = (0..len)
                    .map(|_| {
                        anchor
                            .iter()
                            .map(|a| {
                                let e: f64 = StandardNormal.sample(&mut rng);
                                a + spec.noise * e
                            })
                            .collect()
                    })
                    .collect();
                records.push(Record {
                    modality: j,
                    class: Some(c as i64 + 1),
                    label: Some(if c == 0 {
                        Label::Positive
                    } else {
                        Label::Negative
                    }),
                    seq,
                });
            }
        }
    }
    Dataset::new(records, (0..spec.modalities).map(|j| spec.dim(j)).collect())
}

/// Accuracy of assigning each sample (by its mean instance) to the nearest
/// class anchor of its modality; ties go to the lowest class.
pub fn nearest_anchor_accuracy(dataset: &Dataset, spec: &SynthSpec) -> f64 {
    let anchors: Vec<Vec<Vec<f64>>> = (0..spec.modalities).map(|j| spec.anchors(j)).collect();
    let mut correct = 0usize;
    for r in &dataset.records {
        let d = r.seq[0].len();
        let mean: Vec<f64> = (0..d)
            .map(|c| r.seq.iter().map(|x| x[c]).sum::<f64>() / r.seq.len() as f64)
            .collect();
        let mut best = (f64::INFINITY, 0);
        for (c, a) in anchors[r.modality].iter().enumerate() {
            let dist: f64 = mean.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum();
            if dist < best.0 {
                best = (dist, c);
            }
        }
        if r.class == Some(best.1 as i64 + 1) {
            correct += 1;
        }
    }
    correct as f64 / dataset.len() as f64
}
