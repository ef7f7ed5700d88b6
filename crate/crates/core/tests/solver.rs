use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xmcnn::objective::{augmented_lagrangian, constraint_residual, z_objective};
use xmcnn::solver::*;
use xmcnn::*;

fn random_samples(
    rng: &mut ChaCha8Rng,
    per_modality: [usize; 2],
    dims: [usize; 2],
) -> Vec<SequenceSample> {
    let mut out = Vec::new();
    for (j, &n) in per_modality.iter().enumerate() {
        for _ in 0..n {
            let len = rng.random_range(1..=6);
            let label = if rng.random_bool(0.5) {
                Label::Positive
            } else {
                Label::Negative
            };
            let seq = (0..len)
                .map(|_| (0..dims[j]).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            out.push(SequenceSample::new(j, label, seq).unwrap());
        }
    }
    out
}

fn random_relevance(rng: &mut ChaCha8Rng, theta: usize) -> RelevanceMatrix {
    let mut s = DMatrix::zeros(theta, theta);
    for a in 0..theta {
        for b in a + 1..theta {
            let x = [-1.0, 0.0, 1.0][rng.random_range(0..3)];
            s[(a, b)] = x;
            s[(b, a)] = x;
        }
    }
    RelevanceMatrix::from_dense(s).unwrap()
}

fn small_hp() -> Hyperparams {
    Hyperparams {
        filters: 3,
        windows: vec![2, 1],
        ..Hyperparams::default()
    }
}

fn zero_graph(theta: usize) -> GraphOperator {
    laplacian(&RelevanceMatrix::from_dense(DMatrix::zeros(theta, theta)).unwrap()).unwrap()
}

fn bare_state(z: DMatrix<f64>, zbar: DMatrix<f64>) -> TrainState {
    let (u, theta) = z.shape();
    TrainState {
        z,
        zbar,
        multipliers: DMatrix::zeros(u, theta),
        indicators: vec![vec![0; u]; theta],
        outer_iter: 0,
    }
}

#[test]
fn update_v_hand_cases() {
    let z = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
    let eta = DVector::from_vec(vec![1.0]);
    let v = update_v(&z, &eta, 1.0).unwrap();
    assert!((v[0] - 0.5).abs() < 1e-15 && v[1].abs() < 1e-15);

    let v = update_v(
        &DMatrix::zeros(3, 4),
        &DVector::from_vec(vec![1.0, -1.0, 1.0, 1.0]),
        0.1,
    )
    .unwrap();
    assert_eq!(v, DVector::zeros(3));
}

#[test]
fn update_v_singular_system_is_reported() {
    let z = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
    let err = update_v(&z, &DVector::from_vec(vec![1.0, -1.0]), 0.0).unwrap_err();
    assert!(matches!(err, Error::Numerical(ref m) if m.contains("singular")));
}

#[test]
fn update_v_zeroes_its_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let u = rng.random_range(1..6);
        let theta = rng.random_range(1..15);
        let z = DMatrix::from_fn(u, theta, |_, _| rng.random_range(-1.0..1.0));
        let eta = DVector::from_fn(theta, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
        let v = update_v(&z, &eta, 0.1).unwrap();
        assert!(v_gradient(&v, &z, &eta, 0.1).norm() <= 1e-8);
    }
}

#[test]
fn z_gradient_hand_cases() {
    let theta = 3;
    let graph = zero_graph(theta);
    let hp = Hyperparams {
        lambda2: 0.0,
        beta: 0.0,
        filters: 2,
        ..Hyperparams::default()
    };
    let params = ModelParams {
        banks: Vec::new(),
        v: DVector::from_vec(vec![1.0, 0.0]),
    };
    let state = bare_state(DMatrix::zeros(2, theta), DMatrix::zeros(2, theta));
    let eta = DVector::from_vec(vec![1.0, 1.0, 1.0]);
    let g = z_gradient(&params, &state, &eta, &graph, &hp).unwrap();
    for i in 0..theta {
        assert_eq!(g[(0, i)], -2.0);
        assert_eq!(g[(1, i)], 0.0);
    }

    // stationary at Z = Zbar with nothing else pulling
    let hp = Hyperparams {
        lambda2: 0.0,
        ..Hyperparams::default()
    };
    let zbar = DMatrix::from_fn(2, theta, |r, c| (r * 3 + c) as f64 * 0.1);
    let state = bare_state(zbar.clone(), zbar);
    let params = ModelParams {
        banks: Vec::new(),
        v: DVector::zeros(2),
    };
    let g = z_gradient(&params, &state, &eta, &graph, &hp).unwrap();
    assert_eq!(g.amax(), 0.0);
}

#[test]
fn z_gradient_rejects_shape_mismatch() {
    let params = ModelParams {
        banks: Vec::new(),
        v: DVector::zeros(3),
    };
    let state = bare_state(DMatrix::zeros(2, 4), DMatrix::zeros(2, 4));
    let eta = DVector::zeros(4);
    let err = z_gradient(
        &params,
        &state,
        &eta,
        &zero_graph(4),
        &Hyperparams::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn update_z_quadratic_toy_moves_toward_zbar() {
    let theta = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let zbar = DMatrix::from_fn(2, theta, |_, _| rng.random_range(-1.0..1.0));
    let z = DMatrix::from_fn(2, theta, |_, _| rng.random_range(-1.0..1.0));
    // beta = 1 would land on Zbar in a single unit step
    let hp = Hyperparams {
        lambda2: 0.0,
        beta: 0.5,
        filters: 2,
        ..Hyperparams::default()
    };
    let params = ModelParams {
        banks: Vec::new(),
        v: DVector::zeros(2),
    };
    let eta = DVector::zeros(theta);
    let graph = zero_graph(theta);
    let mut config = SolverConfig::default();
    let mut state = bare_state(z, zbar);
    let mut residual = constraint_residual(&state);
    config.max_inner_iters = 1;
    for _ in 0..5 {
        let r = update_z(&params, &mut state, &eta, &graph, &hp, &config).unwrap();
        assert_eq!(r.steps, 1);
        let next = constraint_residual(&state);
        assert!(next < residual, "{next} !< {residual}");
        residual = next;
    }
    config.max_inner_iters = 50;
    update_z(&params, &mut state, &eta, &graph, &hp, &config).unwrap();
    // prod_{t<=50} (1 - beta / t) is about 0.08
    assert!(constraint_residual(&state) < 0.1 * residual);
}

#[test]
fn update_z_leaves_stationary_point_alone() {
    let zbar = DMatrix::from_fn(2, 3, |r, c| (r + c) as f64);
    let mut state = bare_state(zbar.clone(), zbar.clone());
    let hp = Hyperparams {
        lambda2: 0.0,
        filters: 2,
        ..Hyperparams::default()
    };
    let params = ModelParams {
        banks: Vec::new(),
        v: DVector::zeros(2),
    };
    let r = update_z(
        &params,
        &mut state,
        &DVector::zeros(3),
        &zero_graph(3),
        &hp,
        &SolverConfig::default(),
    )
    .unwrap();
    assert_eq!(r.steps, 0);
    assert_eq!(state.z, zbar);
}

#[test]
fn update_z_never_increases_its_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let theta = 6;
        let u = 4;
        let zbar = DMatrix::from_fn(u, theta, |_, _| rng.random_range(-1.0..1.0));
        let mut state = bare_state(
            DMatrix::from_fn(u, theta, |_, _| rng.random_range(-1.0..1.0)),
            zbar,
        );
        state.multipliers = DMatrix::from_fn(u, theta, |_, _| rng.random_range(-0.5..0.5));
        let graph = laplacian(&random_relevance(&mut rng, theta)).unwrap();
        let params = ModelParams {
            banks: Vec::new(),
            v: DVector::from_fn(u, |_, _| rng.random_range(-1.0..1.0)),
        };
        let eta = DVector::from_fn(theta, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
        let hp = Hyperparams {
            filters: u,
            ..Hyperparams::default()
        };
        let before = z_objective(&params.v, &state.z, &state, &eta, &graph, &hp).unwrap();
        let r = update_z(
            &params,
            &mut state,
            &eta,
            &graph,
            &hp,
            &SolverConfig::default(),
        )
        .unwrap();
        let after = z_objective(&params.v, &state.z, &state, &eta, &graph, &hp).unwrap();
        assert_eq!(r.entry, before);
        assert!(after <= before);
        assert_eq!(after, r.exit);
    }
}

#[test]
fn filter_gradient_without_data_is_ridge() {
    let sub = FilterSubproblem {
        windows: Vec::new(),
        targets: Vec::new(),
        multipliers: Vec::new(),
        lambda1: 1.0,
        beta: 1.0,
    };
    let w = vec![0.3, -2.0, 5.0];
    assert_eq!(sub.gradient(&w, &[]), vec![0.6, -4.0, 10.0]);
}

#[test]
fn data_free_filters_shrink() {
    let sub = FilterSubproblem {
        windows: Vec::new(),
        targets: Vec::new(),
        multipliers: Vec::new(),
        lambda1: 0.1,
        beta: 1.0,
    };
    let mut w = vec![1.0, -2.0];
    let mut last = 5.0;
    let config = SolverConfig {
        max_inner_iters: 1,
        ..SolverConfig::default()
    };
    for _ in 0..10 {
        sub.descend(&mut w, &config);
        let norm: f64 = w.iter().map(|x| x * x).sum();
        assert!(norm < last);
        // one step of size 1 scales w by 1 - 2 lambda1
        assert!((norm - last * 0.64).abs() < 1e-12);
        last = norm;
    }
}

#[test]
fn saturated_filter_has_negligible_data_gradient() {
    let ws = WindowedSequence::from_windows(&[vec![1.0, 1.0]]).unwrap();
    let sub = FilterSubproblem {
        windows: vec![&ws],
        targets: vec![0.3],
        multipliers: vec![0.7],
        lambda1: 0.0,
        beta: 1.0,
    };
    let g = sub.gradient(&[15.0, 15.0], &[0]);
    assert!(g.iter().all(|x| x.abs() <= 1e-12));
}

struct Setup {
    data: TrainingSet,
    relevance: RelevanceMatrix,
    hp: Hyperparams,
}

fn setup(seed: u64) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = random_samples(&mut rng, [4, 3], [3, 2]);
    let hp = small_hp();
    let data = TrainingSet::new(&samples, &hp).unwrap();
    let relevance = random_relevance(&mut rng, samples.len());
    Setup {
        data,
        relevance,
        hp,
    }
}

#[test]
fn init_state_contract() {
    let s = setup(1);
    let config = SolverConfig {
        seed: 9,
        ..SolverConfig::default()
    };
    let (p1, st1) = init_state(&s.data, &s.hp, &config).unwrap();
    let (p2, st2) = init_state(&s.data, &s.hp, &config).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(st1, st2);
    assert_eq!(st1.multipliers.amax(), 0.0);
    assert_eq!(constraint_residual(&st1), 0.0);
    assert_eq!(p1.v, DVector::zeros(3));
    assert!(p1
        .banks
        .iter()
        .flat_map(|b| b.filters.iter().flatten())
        .all(|x| x.abs() < 0.1));
}

#[test]
fn filter_update_does_not_increase_filter_objective() {
    for seed in 0..10 {
        let s = setup(seed);
        let config = SolverConfig {
            seed,
            ..SolverConfig::default()
        };
        let mut solver = Solver::new(&s.data, &s.relevance, &s.hp, &config).unwrap();
        solver.step_v().unwrap();
        solver.step_z().unwrap();
        let before = filter_lagrangian(
            solver.params(),
            solver.state(),
            solver.data(),
            solver.hyperparams(),
        );
        let r = solver.step_filters();
        let after = filter_lagrangian(
            solver.params(),
            solver.state(),
            solver.data(),
            solver.hyperparams(),
        );
        assert!(r.exit <= r.entry);
        assert!(after <= before + 1e-12 * before.abs(), "{after} > {before}");
    }
}

#[test]
fn filters_ignore_other_modalities() {
    let s = setup(4);
    let config = SolverConfig::default();
    let (mut params, mut state) = init_state(&s.data, &s.hp, &config).unwrap();
    state.z.iter_mut().for_each(|x| *x += 0.2);
    let mut other = state.clone();
    // perturb the targets and multipliers of modality 1 only
    for i in s.data.range(1) {
        for k in 0..other.z.nrows() {
            other.z[(k, i)] = -0.9;
            other.multipliers[(k, i)] = 3.0;
        }
    }
    let mut params2 = params.clone();
    update_filters(&mut params, &mut state, &s.data, &s.hp, &config);
    update_filters(&mut params2, &mut other, &s.data, &s.hp, &config);
    assert_eq!(params.banks[0], params2.banks[0]);
    assert_ne!(params.banks[1], params2.banks[1]);
}

#[test]
fn multiplier_update_is_linear() {
    let e = DMatrix::from_fn(2, 3, |r, c| r as f64 - c as f64 * 0.5);
    let mut state = bare_state(e.clone(), DMatrix::zeros(2, 3));
    update_multipliers(&mut state, 1.0);
    assert_eq!(state.multipliers, e);
    update_multipliers(&mut state, 1.0);
    assert_eq!(state.multipliers, &e * 2.0);

    let zbar = DMatrix::from_element(2, 3, 0.4);
    let mut state = bare_state(zbar.clone(), zbar);
    state.multipliers = e.clone();
    update_multipliers(&mut state, 0.7);
    assert_eq!(state.multipliers, e);
}

#[test]
fn each_block_update_descends() {
    for seed in 0..5 {
        let s = setup(seed);
        let config = SolverConfig {
            seed,
            ..SolverConfig::default()
        };
        let mut solver = Solver::new(&s.data, &s.relevance, &s.hp, &config).unwrap();
        for _ in 0..3 {
            let l0 = solver.lagrangian().unwrap();
            solver.step_v().unwrap();
            let l1 = solver.lagrangian().unwrap();
            assert!(l1 <= l0 + 1e-12 * l0.abs());
            solver.step_z().unwrap();
            let l2 = solver.lagrangian().unwrap();
            assert!(l2 <= l1);
            solver.step_filters();
            let l3 = solver.lagrangian().unwrap();
            assert!(l3 <= l2 + 1e-12 * l2.abs());
            solver.step_multipliers();
        }
    }
}

#[test]
fn single_outer_iteration_and_determinism() {
    let s = setup(2);
    let config = SolverConfig {
        max_outer_iters: 1,
        seed: 5,
        ..SolverConfig::default()
    };
    let (_, report) = solve(&s.data, &s.relevance, &s.hp, &config).unwrap();
    assert_eq!(report.iterations, 1);
    assert_eq!(report.trace.len(), 1);
    assert_eq!(report.trace_text().lines().count(), 1);

    let config = SolverConfig {
        max_outer_iters: 8,
        seed: 5,
        ..SolverConfig::default()
    };
    let (p1, r1) = solve(&s.data, &s.relevance, &s.hp, &config).unwrap();
    let (p2, r2) = solve(&s.data, &s.relevance, &s.hp, &config).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(r1, r2);
    assert_eq!(r1.trace.len(), r1.iterations);
}

#[test]
fn thread_count_does_not_change_results() {
    let s = setup(6);
    let one = SolverConfig {
        max_outer_iters: 5,
        threads: 1,
        ..SolverConfig::default()
    };
    let four = SolverConfig {
        threads: 4,
        ..one.clone()
    };
    let (p1, r1) = solve(&s.data, &s.relevance, &s.hp, &one).unwrap();
    let (p4, r4) = solve(&s.data, &s.relevance, &s.hp, &four).unwrap();
    assert_eq!(p1, p4);
    assert_eq!(r1, r4);
}

#[test]
fn trace_matches_lagrangian_of_final_state() {
    let s = setup(8);
    let config = SolverConfig {
        max_outer_iters: 3,
        ..SolverConfig::default()
    };
    let mut solver = Solver::new(&s.data, &s.relevance, &s.hp, &config).unwrap();
    let report = solver.run().unwrap();
    let last = report.trace.last().unwrap();
    let value = augmented_lagrangian(
        solver.params(),
        solver.state(),
        solver.data().labels(),
        solver.graph(),
        &s.hp,
    )
    .unwrap();
    assert_eq!(last.lagrangian, value);
    assert_eq!(last.residual, constraint_residual(solver.state()));
}

#[test]
fn unbounded_penalty_reports_divergence_with_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples = random_samples(&mut rng, [20, 20], [3, 2]);
    let theta = samples.len();
    // two groups repelling each other make the penalty unbounded below
    let tags: Vec<(usize, i64)> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.modality, (i % 2) as i64))
        .collect();
    let relevance = RelevanceMatrix::from_labels(&tags);
    let hp = Hyperparams {
        lambda2: 1.0,
        ..small_hp()
    };
    let data = TrainingSet::new(&samples, &hp).unwrap();
    let config = SolverConfig {
        max_outer_iters: 200,
        ..SolverConfig::default()
    };
    match solve(&data, &relevance, &hp, &config) {
        Err(Error::Diverged { iteration, trace }) => {
            assert_eq!(trace.len() + 1, iteration);
            assert!(theta > 0);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn finite_diff_check_is_exact_on_quadratics() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let grad: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let (err, _) =
            finite_diff_check(|p| p.iter().map(|v| v * v).sum(), &x, &grad, 1e-5).unwrap();
        assert!(err <= 1e-9, "{err}");
    }
    assert!(finite_diff_check(|_| 0.0, &[1.0], &[0.0], 0.0).is_err());
    assert!(matches!(
        finite_diff_check(|_| f64::NAN, &[1.0], &[0.0], 1e-5),
        Err(Error::Numerical(_))
    ));
}

#[test]
fn grad_check_passes_and_catches_sign_error() {
    let report = run_grad_check(20, 0, None).unwrap();
    assert_eq!(report.outcomes.len(), 20);
    assert!(report.passed(1e-5), "{:?}", report.worst_z());
    let bad = run_grad_check(20, 0, Some(Injection::FlipMultiplierSign)).unwrap();
    assert!(!bad.passed(1e-5));
    assert_eq!(run_grad_check(5, 3, None).unwrap().outcomes.len(), 5);
}
