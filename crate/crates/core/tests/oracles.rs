use agetopk::bound::{bound_rhs, compute_b1, estimate_constants, BoundConstants, EstimateOptions};
use agetopk::channel::ChannelModel;
use agetopk::rng::seeded;
use agetopk::server::{init, run_rounds, step, RoundRngs, Setup};
use agetopk::task::{ClientData, LogisticTask, QuadraticTask, Task};
use agetopk::{ModelParams, Strategy, StrategyKind};
use nalgebra::DMatrix;

#[test]
fn power_iteration_matches_dense_eigensolver() {
    for (seed, d, curvature) in [(1, 5, 1.0), (2, 20, 3.5), (3, 50, 0.7)] {
        let q = QuadraticTask::random(d, curvature, &mut seeded(seed)).unwrap();
        let m = DMatrix::from_row_slice(d, d, q.matrix());
        let oracle = m.symmetric_eigen().eigenvalues.iter().copied().fold(f64::MIN, f64::max);
        let power = q.largest_eigenvalue();
        assert!((power - oracle).abs() <= 1e-6 * oracle, "d={d}: {power} vs {oracle}");
        assert!((oracle - curvature).abs() <= 1e-9 * curvature);
    }
}

#[test]
fn identity_and_identical_clients() {
    let q = QuadraticTask::identity(4);
    let center = vec![1.0, -2.0, 0.5, 0.0];
    let clients = vec![ClientData::Center(center.clone()); 3];
    let task = Task::Quadratic(q);
    let c = estimate_constants(&task, &clients, &[ModelParams::zeros(4)], EstimateOptions::default()).unwrap();
    assert_eq!(c.l, 1.0);
    assert_eq!(c.sigma_g_sq, 0.0);
    assert_eq!(c.f_star, 0.0);
    assert!((c.g_sq - 5.25).abs() < 1e-12);
}

#[test]
fn estimates_are_monotone_in_sample_points() {
    let mut rng = seeded(4);
    let q = QuadraticTask::random(8, 1.0, &mut rng).unwrap();
    let clients: Vec<ClientData> = q.client_centers(5, 1.0, 1.0, &mut rng).into_iter().map(ClientData::Center).collect();
    let task = Task::Quadratic(q);
    let points: Vec<ModelParams> = (0..6).map(|_| task.init_params(2.0, &mut rng).unwrap()).collect();
    let mut prev = (0.0, 0.0);
    for n in 1..=points.len() {
        let c = estimate_constants(&task, &clients, &points[..n], EstimateOptions::default()).unwrap();
        assert!(c.g_sq >= prev.0 && c.sigma_g_sq >= prev.1);
        prev = (c.g_sq, c.sigma_g_sq);
    }
}

#[test]
fn logistic_curvature_estimate_respects_closed_form_bound() {
    let data = agetopk::task::gen_synthetic(5, 3, 60, 2.0, &mut seeded(5)).unwrap();
    let task = Task::Logistic(LogisticTask { p: 5, classes: 3, l2: 0.0 });
    let clients = vec![ClientData::Samples(data.clone())];
    let theta = task.init_params(0.1, &mut seeded(6)).unwrap();
    let opts = EstimateOptions { descent_steps: 200, ..EstimateOptions::default() };
    let c = estimate_constants(&task, &clients, std::slice::from_ref(&theta), opts).unwrap();
    // softmax cross-entropy Hessian is bounded by ½ · max ‖[x, 1]‖²
    let max_sq = (0..data.len())
        .map(|i| data.sample(i).iter().map(|v| v * v).sum::<f64>() + 1.0)
        .fold(0.0, f64::max);
    assert!(c.l > 0.0 && c.l <= 0.5 * max_sq, "L={} cap={}", c.l, 0.5 * max_sq);
    assert!(c.f_star <= task.global_loss(&theta, &clients).unwrap());
}

fn constants() -> BoundConstants {
    BoundConstants {
        l: 1.5,
        g_sq: 3.0,
        sigma_g_sq: 0.7,
        mu_h: 1.0,
        sigma_h_sq: 0.2,
        sigma_z_sq: 0.05,
        gamma: 0.4,
        k: 10,
        n: 8,
        eta: 0.05,
        f0: 4.0,
        f_star: 0.5,
    }
}

#[test]
fn bound_monotonicity_suite() {
    let base = constants();
    let rhs = |c: BoundConstants| bound_rhs(&c, 100).unwrap();
    for w in [0.1, 0.3, 0.6, 0.9, 1.0].windows(2) {
        assert!(rhs(BoundConstants { gamma: w[1], ..base }) <= rhs(BoundConstants { gamma: w[0], ..base }));
        assert!(compute_b1(&BoundConstants { gamma: w[1], ..base }) < compute_b1(&BoundConstants { gamma: w[0], ..base }));
    }
    for w in [1usize, 2, 10, 100].windows(2) {
        assert!(rhs(BoundConstants { n: w[1], ..base }) <= rhs(BoundConstants { n: w[0], ..base }));
        assert!(compute_b1(&BoundConstants { n: w[1], ..base }) < compute_b1(&BoundConstants { n: w[0], ..base }));
    }
    for w in [0.0, 0.01, 0.5, 2.0].windows(2) {
        assert!(rhs(BoundConstants { sigma_z_sq: w[1], ..base }) >= rhs(BoundConstants { sigma_z_sq: w[0], ..base }));
        assert!(rhs(BoundConstants { sigma_h_sq: w[1], ..base }) >= rhs(BoundConstants { sigma_h_sq: w[0], ..base }));
        assert!(rhs(BoundConstants { sigma_g_sq: w[1], ..base }) >= rhs(BoundConstants { sigma_g_sq: w[0], ..base }));
    }
}

fn quad_setup(n: usize, d: usize, strategy: Strategy, channel: ChannelModel, eta: f64, seed: u64) -> Setup {
    let mut rng = seeded(seed);
    let q = QuadraticTask::random(d, 1.0, &mut rng).unwrap();
    let clients = q.client_centers(n, 1.0, 0.5, &mut rng).into_iter().map(ClientData::Center).collect();
    Setup { task: Task::Quadratic(q), clients, channel, strategy, eta, train_eval: None, test_eval: None }
}

#[test]
fn noise_free_full_mask_descends_monotonically() {
    let d = 10;
    let setup = quad_setup(4, d, Strategy::new(StrategyKind::TopK, d, d, d).unwrap(), ChannelModel::ideal(), 1.5, 7);
    let mut rngs = RoundRngs::from_seed(1);
    let state = init(&setup, ModelParams::new(vec![3.0; d]), &mut rngs).unwrap();
    let out = run_rounds(&setup, state, 200, &mut rngs).unwrap();
    assert!(out.aborted.is_none());
    for w in out.records.windows(2) {
        assert!(w[1].loss <= w[0].loss + 1e-15, "round {}: {} > {}", w[1].round, w[1].loss, w[0].loss);
    }
}

#[test]
fn update_is_local_to_the_mask() {
    let d = 30;
    let channel = ChannelModel::rayleigh(1.0, 0.01).unwrap();
    for kind in StrategyKind::ALL {
        let strategy = Strategy::normalized(kind, d, 12, 6).unwrap();
        let setup = quad_setup(5, d, strategy, channel, 0.3, 8);
        let mut rngs = RoundRngs::from_seed(2);
        let mut state = init(&setup, ModelParams::new(vec![1.0; d]), &mut rngs).unwrap();
        for _ in 0..40 {
            let (next, _) = step(&state, &setup, &mut rngs).unwrap();
            for j in 0..d {
                if !state.mask.contains(j) {
                    assert_eq!(next.theta.as_slice()[j].to_bits(), state.theta.as_slice()[j].to_bits());
                }
            }
            state = next;
        }
    }
}

/// Seed-averaged mean gradient norm over rounds 500..1000 and 1000..1500.
fn window_means(sigma_z_sq: f64, seeds: u64) -> (f64, f64) {
    let d = 20;
    let channel = ChannelModel::gaussian(1.0, 0.0, sigma_z_sq).unwrap();
    let strategy = Strategy::new(StrategyKind::AgeK, d, d, 5).unwrap();
    let (mut early, mut late) = (0.0, 0.0);
    for seed in 0..seeds {
        let setup = quad_setup(4, d, strategy, channel, 0.5, 9);
        let mut rngs = RoundRngs::from_seed(seed);
        let state = init(&setup, ModelParams::zeros(d), &mut rngs).unwrap();
        let out = run_rounds(&setup, state, 1500, &mut rngs).unwrap();
        early += out.records[500..1000].iter().map(|r| r.grad_norm_sq).sum::<f64>() / 500.0;
        late += out.records[1000..].iter().map(|r| r.grad_norm_sq).sum::<f64>() / 500.0;
    }
    (early / seeds as f64, late / seeds as f64)
}

#[test]
fn channel_noise_leaves_an_error_floor() {
    let (noisy_early, noisy_late) = window_means(0.01, 5);
    let (clean_early, clean_late) = window_means(0.0, 1);
    assert!(noisy_late > 0.5 * noisy_early, "noisy run should plateau: {noisy_early} -> {noisy_late}");
    assert!(clean_late < 0.1 * clean_early, "noise-free run should keep shrinking: {clean_early} -> {clean_late}");
    assert!(clean_late < 1e-3 * noisy_late);
}
