//! Scalar evaluation of the joint objective and its augmented Lagrangian.
//!
//! These are the normative definitions: every solver gradient is checked
//! against finite differences of the functions in this module.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conv::FilterBank;
use crate::error::{Error, Result};
use crate::relevance::{penalty_value, GraphOperator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Weight of the squared-norm regularizer on `v` and all filters.
    pub lambda1: f64,
    /// Weight of the cross-modal relevance penalty.
    pub lambda2: f64,
    /// Quadratic penalty on the embedding constraint.
    pub beta: f64,
    /// Filters per modality (`u`).
    pub filters: usize,
    /// Window size per modality. A single entry is shared by all modalities.
    pub windows: Vec<usize>,
    /// Replace `-1` relevance entries with `0` before training.
    #[serde(default)]
    pub clamp_negative_relevance: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda1: 0.1,
            lambda2: 0.01,
            beta: 1.0,
            filters: 8,
            windows: vec![2],
            clamp_negative_relevance: false,
        }
    }
}

impl Hyperparams {
    pub fn window(&self, modality: usize) -> usize {
        if self.windows.len() == 1 {
            self.windows[0]
        } else {
            self.windows[modality]
        }
    }

    pub fn validate(&self, modalities: usize) -> Result<()> {
        let finite = [self.lambda1, self.lambda2, self.beta]
            .iter()
            .all(|x| x.is_finite());
        if !finite || self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::invalid(
                "lambda1 and lambda2 must be finite and >= 0",
            ));
        }
        if self.beta <= 0.0 {
            return Err(Error::invalid("beta must be > 0"));
        }
        if self.filters == 0 {
            return Err(Error::invalid("at least one filter is required"));
        }
        if self.windows.is_empty() || self.windows.contains(&0) {
            return Err(Error::invalid("window sizes must be >= 1"));
        }
        if self.windows.len() != 1 && self.windows.len() != modalities {
            return Err(Error::invalid(format!(
                "{} window sizes given for {modalities} modalities",
                self.windows.len()
            )));
        }
        Ok(())
    }
}

/// Filter banks of every modality plus the shared classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub banks: Vec<FilterBank>,
    pub v: DVector<f64>,
}

/// Mutable optimization state. All matrices are `u x theta`, columns in
/// global (modality-major) sample order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Free embedding variables.
    pub z: DMatrix<f64>,
    /// Embeddings produced by the current filters.
    pub zbar: DMatrix<f64>,
    /// Lagrange multipliers of the constraint `Z = Zbar`.
    pub multipliers: DMatrix<f64>,
    /// `indicators[i][k]`: argmax window of filter `k` on sample `i`.
    pub indicators: Vec<Vec<usize>>,
    pub outer_iter: usize,
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("{what} is not finite")))
    }
}

pub fn classification_loss(v: &DVector<f64>, z: &DMatrix<f64>, eta: &DVector<f64>) -> Result<f64> {
    if z.nrows() != v.len() || z.ncols() != eta.len() {
        return Err(Error::invalid(format!(
            "shape mismatch: v has {} entries, Z is {}x{}, {} labels",
            v.len(),
            z.nrows(),
            z.ncols(),
            eta.len()
        )));
    }
    let residual = z.tr_mul(v) - eta;
    finite(residual.norm_squared(), "classification loss")
}

pub fn ridge_term(v: &DVector<f64>, banks: &[FilterBank]) -> f64 {
    v.norm_squared() + banks.iter().map(FilterBank::squared_norm).sum::<f64>()
}

pub fn joint_objective(
    params: &ModelParams,
    z: &DMatrix<f64>,
    eta: &DVector<f64>,
    graph: &GraphOperator,
    hp: &Hyperparams,
) -> Result<f64> {
    let loss = classification_loss(&params.v, z, eta)?;
    let ridge = ridge_term(&params.v, &params.banks);
    let penalty = penalty_value(z, graph)?;
    finite(
        loss + hp.lambda1 * ridge + hp.lambda2 * penalty,
        "joint objective",
    )
}

fn check_state_shapes(state: &TrainState) -> Result<()> {
    let shape = state.z.shape();
    if state.zbar.shape() != shape || state.multipliers.shape() != shape {
        return Err(Error::invalid(
            "Z, Zbar and the multiplier matrix must share one shape",
        ));
    }
    Ok(())
}

/// Constraint terms `<A, Z - Zbar> + beta/2 |Z - Zbar|^2`.
pub(crate) fn constraint_terms(
    z: &DMatrix<f64>,
    zbar: &DMatrix<f64>,
    multipliers: &DMatrix<f64>,
    beta: f64,
) -> f64 {
    let gap = z - zbar;
    multipliers.dot(&gap) + 0.5 * beta * gap.norm_squared()
}

pub fn augmented_lagrangian(
    params: &ModelParams,
    state: &TrainState,
    eta: &DVector<f64>,
    graph: &GraphOperator,
    hp: &Hyperparams,
) -> Result<f64> {
    check_state_shapes(state)?;
    let joint = joint_objective(params, &state.z, eta, graph, hp)?;
    let constraint = constraint_terms(&state.z, &state.zbar, &state.multipliers, hp.beta);
    finite(joint + constraint, "augmented Lagrangian")
}

/// The part of the augmented Lagrangian that depends on `Z`.
pub fn z_objective(
    v: &DVector<f64>,
    z: &DMatrix<f64>,
    state: &TrainState,
    eta: &DVector<f64>,
    graph: &GraphOperator,
    hp: &Hyperparams,
) -> Result<f64> {
    let loss = classification_loss(v, z, eta)?;
    let penalty = penalty_value(z, graph)?;
    let constraint = constraint_terms(z, &state.zbar, &state.multipliers, hp.beta);
    finite(loss + hp.lambda2 * penalty + constraint, "Z objective")
}

/// Largest absolute entry of `Z - Zbar`.
pub fn constraint_residual(state: &TrainState) -> f64 {
    (&state.z - &state.zbar).amax()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relevance::{laplacian, RelevanceMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Instance {
        params: ModelParams,
        state: TrainState,
        eta: DVector<f64>,
        s: DMatrix<f64>,
        hp: Hyperparams,
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
        let u = rng.random_range(1..5);
        let theta = rng.random_range(2..9);
        let mut s = DMatrix::zeros(theta, theta);
        for a in 0..theta {
            for b in 0..a {
                let v = [-1.0, 0.0, 1.0][rng.random_range(0..3)];
                s[(a, b)] = v;
                s[(b, a)] = v;
            }
        }
        let mut mat =
            |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let z = mat(u, theta);
        let zbar = mat(u, theta);
        let multipliers = mat(u, theta);
        let banks = (0..2)
            .map(|j| FilterBank {
                modality: j,
                filters: (0..u)
                    .map(|_| (0..3 + j).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect(),
            })
            .collect();
        Instance {
            params: ModelParams {
                banks,
                v: DVector::from_fn(u, |_, _| rng.random_range(-2.0..2.0)),
            },
            state: TrainState {
                z,
                zbar,
                multipliers,
                indicators: vec![vec![0; u]; theta],
                outer_iter: 0,
            },
            eta: DVector::from_fn(theta, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 }),
            s,
            hp: Hyperparams {
                lambda1: rng.random_range(0.0..1.0),
                lambda2: rng.random_range(0.0..1.0),
                beta: rng.random_range(0.1..3.0),
                filters: u,
                ..Hyperparams::default()
            },
        }
    }

    /// Term-by-term scalar evaluation with explicit loops.
    fn scalar_lagrangian(inst: &Instance) -> f64 {
        let (u, theta) = inst.state.z.shape();
        let col = |m: &DMatrix<f64>, i: usize| -> Vec<f64> { (0..u).map(|k| m[(k, i)]).collect() };
        let mut total = 0.0;
        for i in 0..theta {
            let zi = col(&inst.state.z, i);
            let pred: f64 = (0..u).map(|k| inst.params.v[k] * zi[k]).sum();
            total += (inst.eta[i] - pred).powi(2);
        }
        let mut ridge: f64 = inst.params.v.iter().map(|x| x * x).sum();
        for bank in &inst.params.banks {
            for w in &bank.filters {
                ridge += w.iter().map(|x| x * x).sum::<f64>();
            }
        }
        total += inst.hp.lambda1 * ridge;
        let mut pen = 0.0;
        for a in 0..theta {
            for b in 0..theta {
                let d: f64 = (0..u)
                    .map(|k| (inst.state.z[(k, a)] - inst.state.z[(k, b)]).powi(2))
                    .sum();
                pen += inst.s[(a, b)] * d;
            }
        }
        total += inst.hp.lambda2 * pen;
        for i in 0..theta {
            for k in 0..u {
                let gap = inst.state.z[(k, i)] - inst.state.zbar[(k, i)];
                total += inst.state.multipliers[(k, i)] * gap + 0.5 * inst.hp.beta * gap * gap;
            }
        }
        total
    }

    fn graph(s: &DMatrix<f64>) -> GraphOperator {
        laplacian(&RelevanceMatrix::from_dense(s.clone()).unwrap()).unwrap()
    }

    #[test]
    fn classification_loss_cases() {
        let z = DMatrix::from_element(2, 3, 0.3);
        let eta = DVector::from_vec(vec![1.0, -1.0, 1.0]);
        assert_eq!(
            classification_loss(&DVector::zeros(2), &z, &eta).unwrap(),
            3.0
        );

        let z1 = DMatrix::from_vec(1, 1, vec![0.5]);
        let v1 = DVector::from_vec(vec![1.0]);
        let eta1 = DVector::from_vec(vec![1.0]);
        assert_eq!(classification_loss(&v1, &z1, &eta1).unwrap(), 0.25);

        let fit = DMatrix::from_vec(1, 2, vec![1.0, -1.0]);
        let eta2 = DVector::from_vec(vec![1.0, -1.0]);
        assert_eq!(classification_loss(&v1, &fit, &eta2).unwrap(), 0.0);

        assert!(classification_loss(&v1, &z, &eta).is_err());
    }

    #[test]
    fn ridge_term_cases() {
        assert_eq!(
            ridge_term(&DVector::zeros(3), &[FilterBank::zeros(0, 2, 2)]),
            0.0
        );
        assert_eq!(ridge_term(&DVector::from_vec(vec![1.0, 1.0]), &[]), 2.0);
        let bank = FilterBank {
            modality: 0,
            filters: vec![vec![1.0, -2.0]],
        };
        let v = DVector::from_vec(vec![0.5]);
        let base = ridge_term(&v, std::slice::from_ref(&bank));
        let scaled_bank = FilterBank {
            modality: 0,
            filters: vec![vec![3.0, -6.0]],
        };
        assert!((ridge_term(&(v * 3.0), &[scaled_bank]) - 9.0 * base).abs() < 1e-12);
    }

    #[test]
    fn joint_objective_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = random_instance(&mut rng);
        let g = graph(&inst.s);
        let mut hp = inst.hp.clone();
        hp.lambda1 = 0.0;
        hp.lambda2 = 0.0;
        assert_eq!(
            joint_objective(&inst.params, &inst.state.z, &inst.eta, &g, &hp).unwrap(),
            classification_loss(&inst.params.v, &inst.state.z, &inst.eta).unwrap()
        );

        let theta = inst.eta.len();
        let u = inst.params.v.len();
        let zero_params = ModelParams {
            banks: vec![FilterBank::zeros(0, u, 3)],
            v: DVector::zeros(u),
        };
        let j = joint_objective(
            &zero_params,
            &DMatrix::zeros(u, theta),
            &inst.eta,
            &g,
            &inst.hp,
        );
        assert_eq!(j.unwrap(), theta as f64);

        for _ in 0..20 {
            let inst = random_instance(&mut rng);
            let g = graph(&inst.s);
            let sum = classification_loss(&inst.params.v, &inst.state.z, &inst.eta).unwrap()
                + inst.hp.lambda1 * ridge_term(&inst.params.v, &inst.params.banks)
                + inst.hp.lambda2 * penalty_value(&inst.state.z, &g).unwrap();
            let j = joint_objective(&inst.params, &inst.state.z, &inst.eta, &g, &inst.hp).unwrap();
            assert!((j - sum).abs() <= 1e-12 * sum.abs().max(1.0));
        }
    }

    #[test]
    fn lagrangian_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let inst = random_instance(&mut rng);
            let l = augmented_lagrangian(
                &inst.params,
                &inst.state,
                &inst.eta,
                &graph(&inst.s),
                &inst.hp,
            )
            .unwrap();
            let oracle = scalar_lagrangian(&inst);
            assert!(
                (l - oracle).abs() <= 1e-10 * oracle.abs().max(1.0),
                "{l} vs {oracle}"
            );
        }
    }

    #[test]
    fn lagrangian_reduces_to_joint_objective_when_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut inst = random_instance(&mut rng);
            inst.state.zbar = inst.state.z.clone();
            inst.state.multipliers.fill(0.0);
            let g = graph(&inst.s);
            let l =
                augmented_lagrangian(&inst.params, &inst.state, &inst.eta, &g, &inst.hp).unwrap();
            let j = joint_objective(&inst.params, &inst.state.z, &inst.eta, &g, &inst.hp).unwrap();
            assert!((l - j).abs() <= 1e-12);
        }
    }

    #[test]
    fn lagrangian_isolates_quadratic_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut inst = random_instance(&mut rng);
        let g = graph(&inst.s);
        inst.state.multipliers.fill(0.0);
        inst.state.zbar = inst.state.z.clone();
        let base =
            augmented_lagrangian(&inst.params, &inst.state, &inst.eta, &g, &inst.hp).unwrap();
        let e = DMatrix::from_fn(inst.state.z.nrows(), inst.state.z.ncols(), |_, _| {
            rng.random_range(-0.5..0.5)
        });
        inst.state.zbar = &inst.state.z - &e;
        let shifted =
            augmented_lagrangian(&inst.params, &inst.state, &inst.eta, &g, &inst.hp).unwrap();
        let expected = 0.5 * inst.hp.beta * e.norm_squared();
        assert!((shifted - base - expected).abs() < 1e-10);
    }

    #[test]
    fn joint_objective_ignores_relevance_when_lambda2_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut inst = random_instance(&mut rng);
        inst.hp.lambda2 = 0.0;
        let before = joint_objective(
            &inst.params,
            &inst.state.z,
            &inst.eta,
            &graph(&inst.s),
            &inst.hp,
        )
        .unwrap();
        let flipped = -inst.s.clone();
        let after = joint_objective(
            &inst.params,
            &inst.state.z,
            &inst.eta,
            &graph(&flipped),
            &inst.hp,
        )
        .unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn constraint_residual_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut inst = random_instance(&mut rng);
        inst.state.zbar = inst.state.z.clone();
        assert_eq!(constraint_residual(&inst.state), 0.0);
        inst.state.z[(0, 1)] += 0.3;
        assert!((constraint_residual(&inst.state) - 0.3).abs() < 1e-15);
        inst.state.multipliers.fill(7.0);
        assert!((constraint_residual(&inst.state) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn non_finite_values_are_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut inst = random_instance(&mut rng);
        inst.state.z[(0, 0)] = f64::NAN;
        let r = augmented_lagrangian(
            &inst.params,
            &inst.state,
            &inst.eta,
            &graph(&inst.s),
            &inst.hp,
        );
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams::default().validate(2).is_ok());
        let bad_beta = Hyperparams {
            beta: 0.0,
            ..Hyperparams::default()
        };
        assert!(bad_beta.validate(2).is_err());
        let windows = Hyperparams {
            windows: vec![2, 3, 4],
            ..Hyperparams::default()
        };
        assert!(windows.validate(2).is_err());
        let per_modality = Hyperparams {
            windows: vec![2, 3],
            ..Hyperparams::default()
        };
        assert_eq!(per_modality.window(1), 3);
    }
}
