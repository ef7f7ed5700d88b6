//! ADMM solver for the cross-modal convolutional embedding objective.
//!
//! Each outer iteration updates, in order: the classifier `v` (closed form),
//! the free embeddings `Z` (safeguarded gradient descent), every filter
//! (alternating indicator / gradient steps), and the multipliers.

mod fdcheck;
mod steps;

use std::ops::Range;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use fdcheck::{
    finite_diff_check, run_grad_check, GradCheckOutcome, GradCheckReport, Injection,
};
pub use steps::{
    filter_gradient, filter_lagrangian, init_state, refresh_baseline, update_filters,
    update_indicators, update_multipliers, update_v, update_z, v_gradient, z_gradient,
    FilterSubproblem, InnerReport, MAX_HALVINGS,
};

use crate::error::{Error, Result};
use crate::objective::{
    augmented_lagrangian, constraint_residual, Hyperparams, ModelParams, TrainState,
};
use crate::relevance::{laplacian, GraphOperator, RelevanceMatrix};
use crate::windowing::{make_windows, SequenceSample, WindowedSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    /// Cap on gradient steps per `Z` update and per filter update.
    pub max_inner_iters: usize,
    /// Relative change of the Lagrangian below which a loop may stop.
    pub tol_lagrangian: f64,
    /// Constraint residual required for convergence.
    pub tol_residual: f64,
    pub seed: u64,
    /// Filters start uniform in `(-init_scale, init_scale)`.
    pub init_scale: f64,
    /// Worker threads for embedding refreshes; results do not depend on it.
    pub threads: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_outer_iters: 200,
            max_inner_iters: 50,
            tol_lagrangian: 1e-6,
            tol_residual: 1e-4,
            seed: 0,
            init_scale: 0.1,
            threads: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return Err(Error::invalid("iteration caps must be >= 1"));
        }
        if !(self.tol_lagrangian > 0.0 && self.tol_residual > 0.0) {
            return Err(Error::invalid("tolerances must be > 0"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid("init_scale must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Windowed training samples in modality-major order with their labels.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    windows: Vec<WindowedSequence>,
    modality: Vec<usize>,
    eta: DVector<f64>,
    ranges: Vec<Range<usize>>,
    filter_dims: Vec<usize>,
}

impl TrainingSet {
    /// Samples must be grouped by modality (`0, 0, ..., 1, 1, ...`), every
    /// modality in `0..m` non-empty, and instance dimensions consistent.
    pub fn new(samples: &[SequenceSample], hp: &Hyperparams) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let mut ranges: Vec<Range<usize>> = Vec::new();
        let mut inst_dims: Vec<usize> = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            s.validate()?;
            if s.modality == ranges.len() {
                ranges.push(i..i + 1);
                inst_dims.push(s.dim());
            } else if s.modality + 1 == ranges.len() {
                ranges[s.modality].end = i + 1;
                if s.dim() != inst_dims[s.modality] {
                    return Err(Error::invalid(format!(
                        "sample {i} has instance dimension {}, modality {} uses {}",
                        s.dim(),
                        s.modality,
                        inst_dims[s.modality]
                    )));
                }
            } else {
                return Err(Error::invalid(format!(
                    "sample {i} has modality {}; samples must be grouped by modality 0..m with none empty",
                    s.modality
                )));
            }
        }
        hp.validate(ranges.len())?;
        let windows = samples
            .iter()
            .map(|s| make_windows(s, hp.window(s.modality)))
            .collect::<Result<Vec<_>>>()?;
        let filter_dims = inst_dims
            .iter()
            .enumerate()
            .map(|(j, d)| d * hp.window(j))
            .collect();
        Ok(TrainingSet {
            windows,
            modality: samples.iter().map(|s| s.modality).collect(),
            eta: DVector::from_iterator(samples.len(), samples.iter().map(|s| s.label.value())),
            ranges,
            filter_dims,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn modalities(&self) -> usize {
        self.ranges.len()
    }

    pub fn modality(&self, i: usize) -> usize {
        self.modality[i]
    }

    pub fn windows(&self, i: usize) -> &WindowedSequence {
        &self.windows[i]
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.eta
    }

    /// Global indices of the samples of one modality.
    pub fn range(&self, modality: usize) -> Range<usize> {
        self.ranges[modality].clone()
    }

    pub fn modality_sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(ExactSizeIterator::len).collect()
    }

    /// Filter dimension `d_j * h_j` of one modality.
    pub fn filter_dim(&self, modality: usize) -> usize {
        self.filter_dims[modality]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub lagrangian: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    IterationCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    pub termination: Termination,
}

impl SolveReport {
    /// Plain-text trace: one `iteration lagrangian residual` line per outer iteration.
    pub fn trace_text(&self) -> String {
        self.trace
            .iter()
            .map(|r| format!("{} {:e} {:e}\n", r.iteration, r.lagrangian, r.residual))
            .collect()
    }
}

/// Owns the mutable optimization state and exposes each block update.
pub struct Solver<'a> {
    data: &'a TrainingSet,
    graph: GraphOperator,
    hp: Hyperparams,
    config: SolverConfig,
    params: ModelParams,
    state: TrainState,
    pool: rayon::ThreadPool,
    trace: Vec<TraceRow>,
}

impl<'a> Solver<'a> {
    pub fn new(
        data: &'a TrainingSet,
        relevance: &RelevanceMatrix,
        hp: &Hyperparams,
        config: &SolverConfig,
    ) -> Result<Self> {
        if relevance.size() != data.len() {
            return Err(Error::invalid(format!(
                "relevance covers {} samples, training set has {}",
                relevance.size(),
                data.len()
            )));
        }
        let graph = if hp.clamp_negative_relevance {
            laplacian(&relevance.clamp_negative())?
        } else {
            laplacian(relevance)?
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        let (params, state) = pool.install(|| init_state(data, hp, config))?;
        Ok(Solver {
            data,
            graph,
            hp: hp.clone(),
            config: config.clone(),
            params,
            state,
            pool,
            trace: Vec::new(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn graph(&self) -> &GraphOperator {
        &self.graph
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn data(&self) -> &TrainingSet {
        self.data
    }

    pub fn lagrangian(&self) -> Result<f64> {
        augmented_lagrangian(
            &self.params,
            &self.state,
            self.data.labels(),
            &self.graph,
            &self.hp,
        )
    }

    pub fn step_v(&mut self) -> Result<()> {
        self.params.v = update_v(&self.state.z, self.data.labels(), self.hp.lambda1)?;
        Ok(())
    }

    pub fn step_z(&mut self) -> Result<InnerReport> {
        update_z(
            &self.params,
            &mut self.state,
            self.data.labels(),
            &self.graph,
            &self.hp,
            &self.config,
        )
    }

    pub fn step_filters(&mut self) -> InnerReport {
        let Solver {
            data,
            hp,
            config,
            params,
            state,
            pool,
            ..
        } = self;
        pool.install(|| update_filters(params, state, data, hp, config))
    }

    pub fn step_multipliers(&mut self) {
        update_multipliers(&mut self.state, self.hp.beta);
    }

    /// One pass of the four updates; records and returns the trace row.
    pub fn outer_iteration(&mut self) -> Result<TraceRow> {
        let iteration = self.state.outer_iter + 1;
        let diverged = |trace: &[TraceRow]| Error::Diverged {
            iteration,
            trace: trace.to_vec(),
        };
        self.step_v().map_err(|e| match e {
            Error::Numerical(_) => diverged(&self.trace),
            other => other,
        })?;
        self.step_z().map_err(|_| diverged(&self.trace))?;
        self.step_filters();
        self.step_multipliers();
        self.state.outer_iter = iteration;
        let lagrangian = self.lagrangian().map_err(|_| diverged(&self.trace))?;
        let row = TraceRow {
            iteration,
            lagrangian,
            residual: constraint_residual(&self.state),
        };
        self.trace.push(row);
        Ok(row)
    }

    pub fn run(&mut self) -> Result<SolveReport> {
        let mut termination = Termination::IterationCap;
        let mut previous: Option<f64> = None;
        while self.state.outer_iter < self.config.max_outer_iters {
            let row = self.outer_iteration()?;
            if let Some(prev) = previous {
                let change = (row.lagrangian - prev).abs() / prev.abs().max(1.0);
                if change < self.config.tol_lagrangian && row.residual < self.config.tol_residual {
                    termination = Termination::Converged;
                    break;
                }
            }
            previous = Some(row.lagrangian);
        }
        Ok(SolveReport {
            iterations: self.trace.len(),
            trace: self.trace.clone(),
            termination,
        })
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }
}

/// Runs the solver to termination.
pub fn solve(
    data: &TrainingSet,
    relevance: &RelevanceMatrix,
    hp: &Hyperparams,
    config: &SolverConfig,
) -> Result<(ModelParams, SolveReport)> {
    let mut solver = Solver::new(data, relevance, hp, config)?;
    let report = solver.run()?;
    Ok((solver.into_params(), report))
}
