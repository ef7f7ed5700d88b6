//! Central finite differences against analytic gradients.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::steps::{refresh_baseline, z_gradient_at, FilterSubproblem};
use super::TrainingSet;
use crate::conv::FilterBank;
use crate::error::{Error, Result};
use crate::objective::{augmented_lagrangian, Hyperparams, ModelParams, TrainState};
use crate::relevance::{laplacian, RelevanceMatrix};
use crate::windowing::{Label, SequenceSample};

/// Largest coordinate-wise relative error between central differences of `f`
/// at `point` and `analytic`, with its coordinate.
pub fn finite_diff_check<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    step: f64,
) -> Result<(f64, usize)>
where
    F: FnMut(&[f64]) -> f64,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::invalid("finite-difference step must be > 0"));
    }
    if point.len() != analytic.len() {
        return Err(Error::invalid("point and gradient dimensions differ"));
    }
    let mut x = point.to_vec();
    let mut worst = (0.0, 0);
    for c in 0..x.len() {
        let orig = x[c];
        x[c] = orig + step;
        let up = f(&x);
        x[c] = orig - step;
        let down = f(&x);
        x[c] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::Numerical(format!(
                "objective not finite while differencing coordinate {c}"
            )));
        }
        let numeric = (up - down) / (2.0 * step);
        let rel = (numeric - analytic[c]).abs() / (analytic[c].abs() + 1e-12);
        if rel > worst.0 || rel.is_nan() {
            worst = (rel, c);
        }
    }
    Ok(worst)
}

/// Deliberate gradient defects used as negative controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Injection {
    /// Negate the multiplier contribution in both analytic gradients.
    FlipMultiplierSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOutcome {
    pub trial: usize,
    pub z_error: f64,
    /// `(row, column)` of the worst `Z` coordinate.
    pub z_worst: (usize, usize),
    pub filter_error: f64,
    /// `(modality, filter, coordinate)` of the worst filter coordinate.
    pub filter_worst: (usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub outcomes: Vec<GradCheckOutcome>,
}

impl GradCheckReport {
    pub fn worst_z(&self) -> Option<&GradCheckOutcome> {
        self.outcomes
            .iter()
            .max_by(|a, b| a.z_error.total_cmp(&b.z_error))
    }

    pub fn worst_filter(&self) -> Option<&GradCheckOutcome> {
        self.outcomes
            .iter()
            .max_by(|a, b| a.filter_error.total_cmp(&b.filter_error))
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.outcomes
            .iter()
            .all(|o| o.z_error <= tol && o.filter_error <= tol)
    }
}

pub const GRAD_CHECK_STEP: f64 = 1e-5;

struct Instance {
    data: TrainingSet,
    params: ModelParams,
    state: TrainState,
    relevance: RelevanceMatrix,
    hp: Hyperparams,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let u = rng.random_range(1..=4);
    let theta = rng.random_range(2..=10);
    let h = rng.random_range(1..=3);
    let first = rng.random_range(1..theta);
    let dims = [rng.random_range(1..=4), rng.random_range(1..=4)];
    let samples: Vec<SequenceSample> = (0..theta)
        .map(|i| {
            let j = usize::from(i >= first);
            let len = rng.random_range(1..=8);
            let label = if rng.random_bool(0.5) {
                Label::Positive
            } else {
                Label::Negative
            };
            let instances = (0..len)
                .map(|_| (0..dims[j]).map(|_| rng.random_range(-1.5..1.5)).collect())
                .collect();
            SequenceSample {
                modality: j,
                label,
                instances,
            }
        })
        .collect();
    let hp = Hyperparams {
        lambda1: rng.random_range(0.01..1.0),
        lambda2: rng.random_range(0.01..1.0),
        beta: rng.random_range(0.1..3.0),
        filters: u,
        windows: vec![h],
        clamp_negative_relevance: false,
    };
    let data = TrainingSet::new(&samples, &hp)?;
    let banks = (0..2)
        .map(|j| FilterBank {
            modality: j,
            filters: (0..u)
                .map(|_| {
                    (0..data.filter_dim(j))
                        .map(|_| rng.random_range(-0.8..0.8))
                        .collect()
                })
                .collect(),
        })
        .collect();
    let params = ModelParams {
        banks,
        v: DVector::from_fn(u, |_, _| rng.random_range(-1.0..1.0)),
    };
    let (zbar, indicators) = refresh_baseline(&params, &data);
    let z = &zbar + DMatrix::from_fn(u, theta, |_, _| rng.random_range(-0.5..0.5));
    let multipliers = DMatrix::from_fn(u, theta, |_, _| rng.random_range(-1.0..1.0));
    let mut triples = Vec::new();
    for a in 0..theta {
        for b in a + 1..theta {
            match rng.random_range(0..3) {
                0 => triples.push((a, b, 1)),
                1 => triples.push((a, b, -1)),
                _ => {}
            }
        }
    }
    let relevance = RelevanceMatrix::from_triples(&triples, theta)?;
    Ok(Instance {
        data,
        params,
        state: TrainState {
            z,
            zbar,
            multipliers,
            indicators,
            outer_iter: 0,
        },
        relevance,
        hp,
    })
}

fn check_instance(
    inst: &Instance,
    trial: usize,
    inject: Option<Injection>,
) -> Result<GradCheckOutcome> {
    let graph = laplacian(&inst.relevance)?;
    let eta = inst.data.labels();
    let (u, theta) = inst.state.z.shape();

    let mut analytic_state = inst.state.clone();
    if inject == Some(Injection::FlipMultiplierSign) {
        analytic_state.multipliers = -&analytic_state.multipliers;
    }
    let grad = z_gradient_at(
        &inst.params.v,
        &inst.state.z,
        &analytic_state,
        eta,
        &graph,
        &inst.hp,
    )?;
    let mut probe = inst.state.clone();
    let (z_error, coord) = finite_diff_check(
        |x| {
            probe.z.copy_from_slice(x);
            augmented_lagrangian(&inst.params, &probe, eta, &graph, &inst.hp).unwrap_or(f64::NAN)
        },
        inst.state.z.as_slice(),
        grad.as_slice(),
        GRAD_CHECK_STEP,
    )?;
    let z_worst = (coord % u, coord / u);
    debug_assert!(z_worst.1 < theta);

    let mut filter_error = 0.0;
    let mut filter_worst = (0, 0, 0);
    for (j, bank) in inst.params.banks.iter().enumerate() {
        for (k, w) in bank.filters.iter().enumerate() {
            let sub = FilterSubproblem::new(&inst.data, &inst.state, j, k, &inst.hp);
            let taus = sub.indicators(w);
            let analytic = if inject == Some(Injection::FlipMultiplierSign) {
                let mut flipped = sub.clone();
                flipped.multipliers.iter_mut().for_each(|a| *a = -*a);
                flipped.gradient(w, &taus)
            } else {
                sub.gradient(w, &taus)
            };
            let (err, c) =
                finite_diff_check(|x| sub.value_fixed(x, &taus), w, &analytic, GRAD_CHECK_STEP)?;
            if err > filter_error || err.is_nan() {
                filter_error = err;
                filter_worst = (j, k, c);
            }
        }
    }
    Ok(GradCheckOutcome {
        trial,
        z_error,
        z_worst,
        filter_error,
        filter_worst,
    })
}

/// Checks both analytic gradients on `trials` seeded random instances
/// (`u <= 4`, `theta <= 10`, sequence length `<= 8`, `h <= 3`).
pub fn run_grad_check(
    trials: usize,
    seed: u64,
    inject: Option<Injection>,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outcomes = (0..trials)
        .map(|trial| {
            let inst = random_instance(&mut rng)?;
            check_instance(&inst, trial, inject)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradCheckReport { outcomes })
}
