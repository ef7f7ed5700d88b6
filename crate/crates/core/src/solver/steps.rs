//! The four block updates of one outer iteration plus the baseline refresh.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{SolverConfig, TrainingSet};
use crate::conv::{activate, activate_grad, dot, embed_windows, max_pool_unchecked, FilterBank};
use crate::error::{Error, Result};
use crate::objective::{z_objective, Hyperparams, ModelParams, TrainState};
use crate::relevance::GraphOperator;
use crate::windowing::WindowedSequence;

/// Halvings tried before an inner descent loop gives up.
pub const MAX_HALVINGS: usize = 20;

const FILTER_STREAM: u64 = 1;

/// Seeded filters, `v = 0`, `Z = Zbar`, zero multipliers.
pub fn init_state(
    data: &TrainingSet,
    hp: &Hyperparams,
    config: &SolverConfig,
) -> Result<(ModelParams, TrainState)> {
    hp.validate(data.modalities())?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(FILTER_STREAM);
    let scale = config.init_scale;
    let banks = (0..data.modalities())
        .map(|j| FilterBank {
            modality: j,
            filters: (0..hp.filters)
                .map(|_| {
                    (0..data.filter_dim(j))
                        .map(|_| {
                            if scale > 0.0 {
                                rng.random_range(-scale..scale)
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect(),
        })
        .collect();
    let params = ModelParams {
        banks,
        v: DVector::zeros(hp.filters),
    };
    let (zbar, indicators) = refresh_baseline(&params, data);
    let state = TrainState {
        z: zbar.clone(),
        multipliers: DMatrix::zeros(zbar.nrows(), zbar.ncols()),
        zbar,
        indicators,
        outer_iter: 0,
    };
    Ok((params, state))
}

/// Embeds every training sample with the current filters, returning `Zbar`
/// and the argmax indicator table.
pub fn refresh_baseline(
    params: &ModelParams,
    data: &TrainingSet,
) -> (DMatrix<f64>, Vec<Vec<usize>>) {
    let u = params.v.len();
    let embeddings: Vec<_> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let bank = &params.banks[data.modality(i)];
            embed_windows(data.windows(i), bank).expect("filter dimensions validated at init")
        })
        .collect();
    let mut zbar = DMatrix::zeros(u, data.len());
    let mut indicators = Vec::with_capacity(data.len());
    for (i, e) in embeddings.into_iter().enumerate() {
        zbar.set_column(i, &DVector::from_vec(e.values));
        indicators.push(e.indicators);
    }
    (zbar, indicators)
}

/// Recomputes indicators for every (sample, filter) and refreshes `Zbar`.
pub fn update_indicators(params: &ModelParams, data: &TrainingSet, state: &mut TrainState) {
    let (zbar, indicators) = refresh_baseline(params, data);
    state.zbar = zbar;
    state.indicators = indicators;
}

/// Gradient of `sum_i (eta_i - v.z_i)^2 + lambda1 |v|^2` with respect to `v`.
pub fn v_gradient(
    v: &DVector<f64>,
    z: &DMatrix<f64>,
    eta: &DVector<f64>,
    lambda1: f64,
) -> DVector<f64> {
    let residual = z.tr_mul(v) - eta;
    (z * residual) * 2.0 + v * (2.0 * lambda1)
}

/// Closed-form minimizer `(Z Z^T + lambda1 I)^{-1} Z eta`.
pub fn update_v(z: &DMatrix<f64>, eta: &DVector<f64>, lambda1: f64) -> Result<DVector<f64>> {
    if z.ncols() != eta.len() {
        return Err(Error::invalid(format!(
            "Z has {} columns but {} labels were given",
            z.ncols(),
            eta.len()
        )));
    }
    let u = z.nrows();
    let mut normal = z * z.transpose();
    for k in 0..u {
        normal[(k, k)] += lambda1;
    }
    let scale = normal.diagonal().amax().max(f64::MIN_POSITIVE);
    let singular = || {
        Error::Numerical(format!(
            "classifier normal matrix is singular (lambda1 = {lambda1}, embeddings rank-deficient)"
        ))
    };
    let chol = normal.clone().cholesky().ok_or_else(singular)?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, x| m.min(x * x));
    if min_pivot <= 1e-13 * scale {
        return Err(singular());
    }
    Ok(chol.solve(&(z * eta)))
}

/// Gradient of [`z_objective`]:
/// `2 v (v^T Z - eta^T) + 4 lambda2 Z L + A + beta (Z - Zbar)`.
pub fn z_gradient(
    params: &ModelParams,
    state: &TrainState,
    eta: &DVector<f64>,
    graph: &GraphOperator,
    hp: &Hyperparams,
) -> Result<DMatrix<f64>> {
    z_gradient_at(&params.v, &state.z, state, eta, graph, hp)
}

pub(crate) fn z_gradient_at(
    v: &DVector<f64>,
    z: &DMatrix<f64>,
    state: &TrainState,
    eta: &DVector<f64>,
    graph: &GraphOperator,
    hp: &Hyperparams,
) -> Result<DMatrix<f64>> {
    let (u, theta) = z.shape();
    if v.len() != u
        || eta.len() != theta
        || graph.size() != theta
        || state.zbar.shape() != (u, theta)
    {
        return Err(Error::invalid("shape mismatch in Z gradient"));
    }
    let residual = z.tr_mul(v) - eta;
    let mut grad = v * residual.transpose() * 2.0;
    grad += graph.right_mul(z) * (4.0 * hp.lambda2);
    grad += &state.multipliers;
    grad += (z - &state.zbar) * hp.beta;
    Ok(grad)
}

/// Outcome of one safeguarded inner descent loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerReport {
    pub steps: usize,
    pub entry: f64,
    pub exit: f64,
}

/// Safeguarded gradient descent on `Z` with step `1/t` and halving.
pub fn update_z(
    params: &ModelParams,
    state: &mut TrainState,
    eta: &DVector<f64>,
    graph: &GraphOperator,
    hp: &Hyperparams,
    config: &SolverConfig,
) -> Result<InnerReport> {
    let v = &params.v;
    let entry = z_objective(v, &state.z, state, eta, graph, hp)?;
    let mut current = entry;
    let mut z = state.z.clone();
    let mut steps = 0;
    for t in 1..=config.max_inner_iters {
        let grad = z_gradient_at(v, &z, state, eta, graph, hp)?;
        if grad.amax() == 0.0 {
            break;
        }
        let mut step = 1.0 / t as f64;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = &z - &grad * step;
            if let Ok(value) = z_objective(v, &trial, state, eta, graph, hp) {
                if value <= current {
                    accepted = Some((trial, value));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, value)) = accepted else {
            break;
        };
        let decrease = (current - value) / current.abs().max(f64::MIN_POSITIVE);
        z = trial;
        current = value;
        steps += 1;
        if decrease < config.tol_lagrangian {
            break;
        }
    }
    state.z = z;
    Ok(InnerReport {
        steps,
        entry,
        exit: current,
    })
}

/// The single-filter piece of the augmented Lagrangian: ridge on `w` plus the
/// constraint terms of every sample of the filter's modality.
#[derive(Debug, Clone)]
pub struct FilterSubproblem<'a> {
    pub windows: Vec<&'a WindowedSequence>,
    /// `[z_i]_k` for each sample of the modality.
    pub targets: Vec<f64>,
    /// `alpha_ik` for each sample of the modality.
    pub multipliers: Vec<f64>,
    pub lambda1: f64,
    pub beta: f64,
}

impl<'a> FilterSubproblem<'a> {
    pub fn new(
        data: &'a TrainingSet,
        state: &TrainState,
        modality: usize,
        filter: usize,
        hp: &Hyperparams,
    ) -> Self {
        let range = data.range(modality);
        FilterSubproblem {
            windows: range.clone().map(|i| data.windows(i)).collect(),
            targets: range.clone().map(|i| state.z[(filter, i)]).collect(),
            multipliers: range.map(|i| state.multipliers[(filter, i)]).collect(),
            lambda1: hp.lambda1,
            beta: hp.beta,
        }
    }

    pub fn indicators(&self, w: &[f64]) -> Vec<usize> {
        self.windows
            .iter()
            .map(|ys| max_pool_unchecked(ys, w).1)
            .collect()
    }

    fn assemble(&self, w: &[f64], pooled: impl Iterator<Item = f64>) -> f64 {
        let ridge: f64 = w.iter().map(|x| x * x).sum();
        let mut total = self.lambda1 * ridge;
        for ((z, a), p) in self.targets.iter().zip(&self.multipliers).zip(pooled) {
            let gap = z - p;
            total += a * gap + 0.5 * self.beta * gap * gap;
        }
        total
    }

    /// Objective with the max-pooling evaluated exactly.
    pub fn value(&self, w: &[f64]) -> f64 {
        self.assemble(w, self.windows.iter().map(|ys| max_pool_unchecked(ys, w).0))
    }

    /// Objective with the pooled window fixed by `indicators`.
    pub fn value_fixed(&self, w: &[f64], indicators: &[usize]) -> f64 {
        self.assemble(
            w,
            self.windows
                .iter()
                .zip(indicators)
                .map(|(ys, &t)| activate(dot(w, ys.window(t)))),
        )
    }

    /// Gradient of [`Self::value_fixed`] in `w`.
    pub fn gradient(&self, w: &[f64], indicators: &[usize]) -> Vec<f64> {
        let mut grad: Vec<f64> = w.iter().map(|x| 2.0 * self.lambda1 * x).collect();
        for (((ys, &t), z), a) in self
            .windows
            .iter()
            .zip(indicators)
            .zip(&self.targets)
            .zip(&self.multipliers)
        {
            let y = ys.window(t);
            let pre = dot(w, y);
            let coef = -(a + self.beta * (z - activate(pre))) * activate_grad(pre);
            for (g, yc) in grad.iter_mut().zip(y) {
                *g += coef * yc;
            }
        }
        grad
    }

    /// Alternates indicator refresh and safeguarded `1/t` gradient steps.
    /// A step is kept only if neither the fixed-indicator nor the exact
    /// objective increases.
    pub fn descend(&self, w: &mut Vec<f64>, config: &SolverConfig) -> InnerReport {
        let entry = self.value(w);
        let mut current = entry;
        let mut steps = 0;
        for t in 1..=config.max_inner_iters {
            let taus = self.indicators(w);
            let fixed = self.value_fixed(w, &taus);
            let grad = self.gradient(w, &taus);
            if grad.iter().all(|g| *g == 0.0) {
                break;
            }
            let mut step = 1.0 / t as f64;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let trial: Vec<f64> = w.iter().zip(&grad).map(|(x, g)| x - step * g).collect();
                let exact = self.value(&trial);
                if exact.is_finite() && exact <= current && self.value_fixed(&trial, &taus) <= fixed
                {
                    accepted = Some((trial, exact));
                    break;
                }
                step *= 0.5;
            }
            let Some((trial, value)) = accepted else {
                break;
            };
            let decrease = (current - value) / current.abs().max(f64::MIN_POSITIVE);
            *w = trial;
            current = value;
            steps += 1;
            if decrease < config.tol_lagrangian {
                break;
            }
        }
        InnerReport {
            steps,
            entry,
            exit: current,
        }
    }
}

/// Filter-dependent part of the augmented Lagrangian (all modalities and
/// filters, exact max-pooling).
pub fn filter_lagrangian(
    params: &ModelParams,
    state: &TrainState,
    data: &TrainingSet,
    hp: &Hyperparams,
) -> f64 {
    let mut total = 0.0;
    for (j, bank) in params.banks.iter().enumerate() {
        for (k, w) in bank.filters.iter().enumerate() {
            total += FilterSubproblem::new(data, state, j, k, hp).value(w);
        }
    }
    total
}

/// Gradient of the fixed-indicator objective for filter `k` of modality `j`.
pub fn filter_gradient(
    w: &[f64],
    indicators: &[usize],
    state: &TrainState,
    data: &TrainingSet,
    modality: usize,
    filter: usize,
    hp: &Hyperparams,
) -> Vec<f64> {
    FilterSubproblem::new(data, state, modality, filter, hp).gradient(w, indicators)
}

/// Updates every filter in modality-major, filter-minor order, then refreshes
/// `Zbar` and the indicator table.
pub fn update_filters(
    params: &mut ModelParams,
    state: &mut TrainState,
    data: &TrainingSet,
    hp: &Hyperparams,
    config: &SolverConfig,
) -> InnerReport {
    let mut report = InnerReport {
        steps: 0,
        entry: 0.0,
        exit: 0.0,
    };
    for j in 0..params.banks.len() {
        for k in 0..params.banks[j].filters.len() {
            let sub = FilterSubproblem::new(data, state, j, k, hp);
            let r = sub.descend(&mut params.banks[j].filters[k], config);
            report.steps += r.steps;
            report.entry += r.entry;
            report.exit += r.exit;
        }
    }
    update_indicators(params, data, state);
    report
}

/// `A <- A + beta (Z - Zbar)`.
pub fn update_multipliers(state: &mut TrainState, beta: f64) {
    let gap = &state.z - &state.zbar;
    state.multipliers += gap * beta;
}
