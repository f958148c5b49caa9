use super::*;
use crate::diffusion::{make_time_grid, tweedie, DiffusionSchedule, GaussianMixturePrior, GmmScore};
use crate::numerics::RngStream;
use crate::operators::{gaussian_kernel, LinearOperator, NonlinearOperator, ObservationOp};
use crate::Matrix;

fn std_model(d: usize) -> GmmScore {
    GmmScore::new(GaussianMixturePrior::standard_normal(d), DiffusionSchedule::default())
}

fn mixture_model(d: usize, seed: u64) -> GmmScore {
    GmmScore::new(
        GaussianMixturePrior::random(d, 3, seed).unwrap(),
        DiffusionSchedule::default(),
    )
}

fn solver(model: &GmmScore, algo: Algorithm) -> Solver<'_> {
    Solver::new(model, AlgoParams::defaults(algo)).unwrap()
}

fn solver_with(model: &GmmScore, p: AlgoParams) -> Solver<'_> {
    Solver::new(model, p).unwrap()
}

fn obs_linear(a: LinearOperator, x: &Vector, sigma: f64, seed: u64) -> Observation {
    Observation::generate(x, ObservationOp::Linear(a), sigma, &mut RngStream::new(seed, 99)).unwrap()
}

fn identity_op(n: usize) -> LinearOperator {
    LinearOperator::dense(&Matrix::identity(n, n)).unwrap()
}

/// Context with hand-picked noise levels; `eps` and `x0` are supplied.
fn manual_ctx(x_t: Vector, x0: Vector, ab_cur: f64, ab_prev: f64) -> StepContext {
    let eps = Vector::zeros(x_t.len());
    StepContext {
        x_t,
        t_cur: 500,
        t_prev: 250,
        ab_cur,
        ab_prev,
        eps,
        x0,
        prev_xhat: None,
    }
}

fn vecf(v: &[f64]) -> Vector {
    Vector::from_vec(v.to_vec())
}

fn ctx_at(s: &Solver<'_>, x_t: Vector, t: usize, tp: usize) -> StepContext {
    s.begin_step(x_t, t, tp, None, &mut RngStream::new(0, 0)).unwrap()
}

#[test]
fn tweedie_sampler_on_standard_normal() {
    let m = std_model(3);
    let s = solver(&m, Algorithm::Ddnm);
    let x = vecf(&[0.4, -1.0, 2.0]);
    let ctx = ctx_at(&s, x.clone(), 300, 200);
    let ab = m.alphabar(300).unwrap();
    assert!((&ctx.x0 - &x * ab.sqrt()).amax() < 1e-14);
    assert_eq!(ctx.eps, m.eps(&x, 300).unwrap());
}

#[test]
fn daps_single_step_sampler_is_tweedie() {
    let m = mixture_model(4, 2);
    let mut p = AlgoParams::defaults(Algorithm::Daps);
    p.daps.k_ddim = 1;
    let s = solver_with(&m, p);
    let x = vecf(&[0.1, 0.2, -0.3, 0.5]);
    let ctx = ctx_at(&s, x.clone(), 600, 300);
    assert_eq!(ctx.x0, tweedie(&m, &x, 600).unwrap());
}

#[test]
fn daps_sampler_matches_ddim_run() {
    let m = mixture_model(4, 2);
    let s = solver(&m, Algorithm::Daps);
    let x = vecf(&[0.1, 0.2, -0.3, 0.5]);
    let ctx = ctx_at(&s, x.clone(), 600, 300);
    let direct = crate::diffusion::ddim_run(&m, &x, 600, 5, 0.0, &mut RngStream::new(0, 0)).unwrap();
    assert_eq!(ctx.x0, direct);
}

#[test]
fn sampler_is_deterministic() {
    let m = mixture_model(4, 5);
    for algo in [Algorithm::Dps, Algorithm::Daps] {
        let s = solver(&m, algo);
        let x = vecf(&[0.3, 0.2, -0.1, 0.0]);
        assert_eq!(ctx_at(&s, x.clone(), 700, 400).x0, ctx_at(&s, x, 700, 400).x0);
    }
}

#[test]
fn ddnm_noiseless_projection() {
    let m = std_model(3);
    let s = solver(&m, Algorithm::Ddnm);
    let x0 = vecf(&[0.5, -0.2, 0.9]);
    let truth = vecf(&[1.0, 2.0, 3.0]);
    let ctx = manual_ctx(x0.clone(), x0.clone(), 0.5, 0.7);

    let obs = obs_linear(identity_op(3), &truth, 0.0, 0);
    let out = s.correct(&ctx, &obs, &mut RngStream::new(0, 0)).unwrap();
    assert!((&out - &truth).amax() < 1e-14);

    let obs = obs_linear(LinearOperator::mask(3, &[0, 2]).unwrap(), &truth, 0.0, 0);
    let out = s.correct(&ctx, &obs, &mut RngStream::new(0, 0)).unwrap();
    assert_eq!(out.as_slice(), &[1.0, -0.2, 3.0]);

    let twice = s.correct_from(&ctx, &out, &obs, &mut RngStream::new(0, 0)).unwrap();
    assert!((&twice - &out).amax() <= 1e-12);
}

#[test]
fn ddnm_noisy_with_full_weights_equals_projection() {
    let m = std_model(3);
    let s = solver(&m, Algorithm::Ddnm);
    let x0 = vecf(&[0.5, -0.2, 0.9]);
    let a = LinearOperator::mask(3, &[0, 1]).unwrap();
    let noisy = obs_linear(a.clone(), &vecf(&[1.0, 2.0, 3.0]), 0.05, 3);
    // sigma_prev = 0.707 >= sqrt(0.5) * 0.05: every lambda_k is 1.
    let ctx = manual_ctx(x0.clone(), x0.clone(), 0.3, 0.5);
    let out = s.correct(&ctx, &noisy, &mut RngStream::new(0, 0)).unwrap();
    let proj = &x0 + a.pinv_apply(&(&noisy.y - a.apply(&x0).unwrap())).unwrap();
    assert!((out - proj).amax() < 1e-15);
}

#[test]
fn ddnm_scaled_branch() {
    let m = std_model(1);
    let s = solver(&m, Algorithm::Ddnm);
    let a = LinearOperator::dense(&Matrix::from_element(1, 1, 2.0)).unwrap();
    let obs = Observation::new(vecf(&[1.0]), ObservationOp::Linear(a), 0.05).unwrap();
    let ctx = manual_ctx(vecf(&[0.0]), vecf(&[0.3]), 0.9, 0.9999);
    let out = s.correct(&ctx, &obs, &mut RngStream::new(0, 0)).unwrap();
    // lambda = s sigma' sqrt(1 - eta^2) / (sqrt(ab') sigma_y)
    let lam = 2.0 * 0.01 * (1.0f64 - 0.7225).sqrt() / (0.9999f64.sqrt() * 0.05);
    assert!((out[0] - (0.3 + lam * (0.5 - 0.3))).abs() < 1e-14);
}

#[test]
fn ddrm_branches() {
    let m = std_model(1);
    let a = LinearOperator::dense(&Matrix::from_element(1, 1, 2.0)).unwrap();
    let obs = Observation::new(vecf(&[1.0]), ObservationOp::Linear(a.clone()), 0.05).unwrap();
    let x0 = vecf(&[0.3]);

    let s = solver(&m, Algorithm::Ddrm);
    let mid = manual_ctx(x0.clone(), x0.clone(), 0.9, 0.9999);
    let out = s.correct(&mid, &obs, &mut RngStream::new(0, 0)).unwrap();
    assert!((out[0] - 0.34214472230020715).abs() < 1e-13, "{}", out[0]);

    let mut p = AlgoParams::defaults(Algorithm::Ddrm);
    p.eta_b = 0.7;
    let s = solver_with(&m, p);
    let third = manual_ctx(x0.clone(), x0.clone(), 0.3, 0.5);
    let out = s.correct(&third, &obs, &mut RngStream::new(0, 0)).unwrap();
    assert!((out[0] - 0.44).abs() < 1e-14);

    // eta_b = 0 keeps x0 on the third branch.
    p.eta_b = 0.0;
    let s = solver_with(&m, p);
    assert_eq!(s.correct(&third, &obs, &mut RngStream::new(0, 0)).unwrap(), x0);

    // Noiseless data always take the third branch: range coordinates become y-bar.
    let s = solver(&m, Algorithm::Ddrm);
    let clean = Observation::new(vecf(&[1.0]), ObservationOp::Linear(a), 0.0).unwrap();
    let out = s.correct(&mid, &clean, &mut RngStream::new(0, 0)).unwrap();
    assert!((out[0] - 0.5).abs() < 1e-15);
}

#[test]
fn dps_trivial_cases() {
    let m = mixture_model(4, 1);
    let truth = vecf(&[0.2, -0.1, 0.4, 0.0]);
    let obs = obs_linear(LinearOperator::mask(4, &[0, 2]).unwrap(), &truth, 0.0, 0);
    let mut p = AlgoParams::defaults(Algorithm::Dps);
    p.zeta = 0.0;
    let s = solver_with(&m, p);
    let ctx = ctx_at(&s, vecf(&[0.5, 0.1, -0.2, 0.3]), 400, 200);
    assert_eq!(s.correct(&ctx, &obs, &mut RngStream::new(0, 0)).unwrap(), ctx.x0);

    let s = solver(&m, Algorithm::Dps);
    let consistent = Observation::new(obs.op.apply(&ctx.x0).unwrap(), obs.op.clone(), 0.0).unwrap();
    assert_eq!(s.correct(&ctx, &consistent, &mut RngStream::new(0, 0)).unwrap(), ctx.x0);
}

#[test]
fn dps_gradient_matches_finite_differences() {
    let m = mixture_model(8, 3);
    let s = solver(&m, Algorithm::Dps);
    let mut r = RngStream::new(4, 0);
    let ops = [
        ObservationOp::Linear(LinearOperator::random_mask(8, 0.5, &mut r).unwrap()),
        ObservationOp::Nonlinear(NonlinearOperator::new(8, gaussian_kernel(1.0, 2).unwrap(), 1.5).unwrap()),
    ];
    for op in ops {
        for t in [50, 300, 700] {
            let x_t = r.standard_normal(8);
            let y = r.standard_normal(op.output_dim()) * 0.5;
            let obs = Observation::new(y.clone(), op.clone(), 0.05).unwrap();
            let ctx = ctx_at(&s, x_t.clone(), t, t / 2);
            let g = s.dps_xt_gradient(&ctx, &ctx.x0, &obs).unwrap();
            let f = |x: &Vector| {
                let x0 = tweedie(&m, x, t).unwrap();
                (&y - op.apply(&x0).unwrap()).norm_squared()
            };
            let h = 1e-5;
            let fd = Vector::from_fn(8, |i, _| {
                let mut e = Vector::zeros(8);
                e[i] = h;
                (f(&(&x_t + &e)) - f(&(&x_t - &e))) / (2.0 * h)
            });
            let rel = (&g - &fd).norm() / fd.norm();
            assert!(rel <= 1e-5, "t={t} rel={rel}");
        }
    }
}

#[test]
fn pigdm_on_standard_normal_identity_operator() {
    let m = std_model(3);
    let s = solver(&m, Algorithm::Pigdm);
    let x_t = vecf(&[0.3, -0.7, 1.1]);
    let y = vecf(&[0.5, 0.1, -0.4]);
    let sigma = 0.2;
    let obs = Observation::new(y.clone(), ObservationOp::Linear(identity_op(3)), sigma).unwrap();
    let (t, tp) = (400, 250);
    let ctx = ctx_at(&s, x_t.clone(), t, tp);
    let out = s.correct(&ctx, &obs, &mut RngStream::new(0, 0)).unwrap();
    // x0 = sqrt(ab) x_t and dx0/dx_t = sqrt(ab) I for N(0, I).
    let ab = m.alphabar(t).unwrap();
    let abp = m.alphabar(tp).unwrap();
    let c = sigma * sigma / (1.0 - ab);
    let x0 = &x_t * ab.sqrt();
    let expected = &x0 + (&y - &x0) * ((ab / abp).sqrt() * ab.sqrt() / (1.0 + c));
    assert!((out - expected).amax() <= 1e-10);
}

#[test]
fn pigdm_zero_residual_and_singular_case() {
    let m = mixture_model(4, 8);
    let s = solver(&m, Algorithm::Pigdm);
    let ctx = ctx_at(&s, vecf(&[0.1, 0.4, -0.5, 0.2]), 500, 300);
    let a = LinearOperator::mask(4, &[1, 3]).unwrap();
    let obs = Observation::new(a.apply(&ctx.x0).unwrap(), ObservationOp::Linear(a), 0.05).unwrap();
    assert_eq!(s.correct(&ctx, &obs, &mut RngStream::new(0, 0)).unwrap(), ctx.x0);

    let mut bad = manual_ctx(Vector::zeros(4), Vector::zeros(4), 1.0, 1.0);
    bad.t_cur = 0;
    assert!(matches!(
        s.correct(&bad, &obs, &mut RngStream::new(0, 0)),
        Err(Error::Singular(_))
    ));
}

#[test]
fn reddiff_cases() {
    let m = std_model(2);
    let a = identity_op(2);
    let y = vecf(&[1.0, -1.0]);
    let obs = Observation::new(y.clone(), ObservationOp::Linear(a), 0.0).unwrap();
    let x0 = vecf(&[0.2, 0.4]);
    let mut ctx = manual_ctx(x0.clone(), x0.clone(), 0.4, 0.6);

    let mut p = AlgoParams::defaults(Algorithm::Reddiff);
    p.lambda = 0.0;
    let out = solver_with(&m, p)
        .correct(&ctx, &obs, &mut RngStream::new(0, 0))
        .unwrap();
    assert_eq!(out, x0);

    p.lambda = 0.3;
    p.xi = 0.7;
    // First step: x0 - xi lambda 2 A^T (A x0 - y).
    let out = solver_with(&m, p)
        .correct(&ctx, &obs, &mut RngStream::new(0, 0))
        .unwrap();
    let expected = vecf(&[0.2 - 0.7 * 0.3 * 2.0 * (0.2 - 1.0), 0.4 - 0.7 * 0.3 * 2.0 * (0.4 + 1.0)]);
    assert!((out - expected).amax() < 1e-15);

    p.xi = 0.0;
    ctx.prev_xhat = Some(vecf(&[9.0, 8.0]));
    let out = solver_with(&m, p)
        .correct(&ctx, &obs, &mut RngStream::new(0, 0))
        .unwrap();
    assert_eq!(out.as_slice(), &[9.0, 8.0]);
}

#[test]
fn diffpir_closed_forms() {
    let m = std_model(3);
    let x0 = vecf(&[0.2, 0.4, -0.6]);
    let y = vecf(&[1.0, -1.0, 0.5]);
    let sigma = 0.1;
    let (ab, abp) = (0.5, 0.7);
    // rho = lambda sigma^2 ab / (1 - ab) = 1.
    let mut p = AlgoParams::defaults(Algorithm::Diffpir);
    p.lambda = (1.0 - ab) / (sigma * sigma * ab);
    let s = solver_with(&m, p);
    let ctx = manual_ctx(x0.clone(), x0.clone(), ab, abp);
    assert!((s.diffpir_rho(&ctx, sigma) - 1.0).abs() < 1e-14);
    let obs = Observation::new(y.clone(), ObservationOp::Linear(identity_op(3)), sigma).unwrap();
    let out = s.correct(&ctx, &obs, &mut RngStream::new(0, 0)).unwrap();
    assert!((out - (&y + &x0) / 2.0).amax() < 1e-14);

    let a = LinearOperator::random_hadamard(8, 0.5, &mut RngStream::new(2, 0)).unwrap();
    let truth = RngStream::new(3, 0).standard_normal(8);
    let clean = obs_linear(a.clone(), &truth, 0.0, 0);
    let x0 = RngStream::new(5, 0).standard_normal(8);
    let m8 = std_model(8);
    let s = solver(&m8, Algorithm::Diffpir);
    let ctx = manual_ctx(x0.clone(), x0.clone(), ab, abp);
    let out = s.correct(&ctx, &clean, &mut RngStream::new(0, 0)).unwrap();
    assert!((a.apply(&out).unwrap() - &clean.y).norm() <= 1e-8);
}

#[test]
fn diffpir_closed_form_agrees_with_inner_optimizer() {
    let m = std_model(8);
    let s = solver(&m, Algorithm::Diffpir);
    for seed in 0..10u64 {
        let a = LinearOperator::random_mask(8, 0.5, &mut RngStream::new(seed, 0)).unwrap();
        let obs = obs_linear(a, &RngStream::new(seed + 100, 0).standard_normal(8), 0.3, 4);
        let x0 = RngStream::new(seed + 200, 0).standard_normal(8);
        let ctx = manual_ctx(x0.clone(), x0.clone(), 0.6, 0.8);
        let rho = s.diffpir_rho(&ctx, obs.sigma_y);
        let closed = s.correct(&ctx, &obs, &mut RngStream::new(0, 0)).unwrap();
        let iterative = s.proximal_iterative(&x0, &obs, rho, 0.1, 500).unwrap();
        let err = (closed - iterative).amax();
        assert!(err <= 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn dmps_cases() {
    let m = std_model(1);
    let a = LinearOperator::dense(&Matrix::from_element(1, 1, 2.0)).unwrap();
    let obs = Observation::new(vecf(&[1.2]), ObservationOp::Linear(a.clone()), 0.1).unwrap();
    let ctx = manual_ctx(vecf(&[0.5]), vecf(&[0.4]), 0.64, 0.81);
    let s = solver(&m, Algorithm::Dmps);
    let out = s.correct(&ctx, &obs, &mut RngStream::new(0, 0)).unwrap();
    assert!((out[0] - 0.3854897301431225).abs() < 1e-14, "{}", out[0]);

    let mut p = AlgoParams::defaults(Algorithm::Dmps);
    p.lambda = 0.0;
    assert_eq!(
        solver_with(&m, p)
            .correct(&ctx, &obs, &mut RngStream::new(0, 0))
            .unwrap(),
        ctx.x0
    );

    // y = s x_t / sqrt(ab): zero innovation.
    let consistent = Observation::new(vecf(&[2.0 * 0.5 / 0.8]), ObservationOp::Linear(a.clone()), 0.1).unwrap();
    let out = s.correct(&ctx, &consistent, &mut RngStream::new(0, 0)).unwrap();
    assert_eq!(out, ctx.x0);

    let clean = Observation::new(vecf(&[1.0]), ObservationOp::Linear(a), 0.0).unwrap();
    let degenerate = manual_ctx(vecf(&[0.5]), vecf(&[0.4]), 1.0, 1.0);
    assert!(matches!(
        s.correct(&degenerate, &clean, &mut RngStream::new(0, 0)),
        Err(Error::Singular(_))
    ));
}

#[test]
fn resample_cases() {
    let m = std_model(3);
    let x0 = vecf(&[0.2, 0.4, -0.6]);
    let ctx = manual_ctx(x0.clone(), x0.clone(), 0.5, 0.7);
    let s = solver(&m, Algorithm::Resample);
    let consistent = Observation::new(x0.clone(), ObservationOp::Linear(identity_op(3)), 0.0).unwrap();
    assert_eq!(s.correct(&ctx, &consistent, &mut RngStream::new(0, 0)).unwrap(), x0);

    let y = vecf(&[1.0, -1.0, 0.5]);
    let obs = Observation::new(y.clone(), ObservationOp::Linear(identity_op(3)), 0.0).unwrap();
    let out = s.correct(&ctx, &obs, &mut RngStream::new(0, 0)).unwrap();
    // Heavy-ball on (x - y)^2 with lr 0.01, momentum 0.9: the error evolves
    // by e' = e - 0.02 (momentum sum), a stable linear recurrence.
    let (mut e, mut v) = (&x0 - &y, Vector::zeros(3));
    for _ in 0..50 {
        v = v * 0.9 + &e * 2.0;
        e -= &v * 0.01;
    }
    assert!((&out - (&y + &e)).amax() < 1e-12);
    assert!((&out - &y).norm() < (&x0 - &y).norm());

    let mut p = AlgoParams::defaults(Algorithm::Resample);
    p.exact_hc = true;
    let a = LinearOperator::mask(3, &[0, 2]).unwrap();
    let obs = Observation::new(vecf(&[5.0, 6.0]), ObservationOp::Linear(a), 0.0).unwrap();
    let out = solver_with(&m, p)
        .correct(&ctx, &obs, &mut RngStream::new(0, 0))
        .unwrap();
    assert_eq!(out.as_slice(), &[5.0, 0.4, 6.0]);

    p.exact_hc = false;
    p.inner_opt.steps = 0;
    let out = solver_with(&m, p)
        .correct(&ctx, &obs, &mut RngStream::new(0, 0))
        .unwrap();
    assert_eq!(out, x0);
}

#[test]
fn daps_step_size_and_trivial_cases() {
    let m = std_model(2);
    let s = solver(&m, Algorithm::Daps);
    assert_eq!(s.daps_step_size(1000), 1e-4);
    assert!((s.daps_step_size(0) - 1e-6).abs() < 1e-20);

    let x0 = vecf(&[0.3, -0.3]);
    let ctx = manual_ctx(x0.clone(), x0.clone(), 0.5, 0.7);
    let obs = Observation::new(vecf(&[1.0, 1.0]), ObservationOp::Linear(identity_op(2)), 0.05).unwrap();
    let mut p = AlgoParams::defaults(Algorithm::Daps);
    p.daps.n_langevin = 0;
    assert_eq!(
        solver_with(&m, p)
            .correct(&ctx, &obs, &mut RngStream::new(0, 0))
            .unwrap(),
        x0
    );

    p.daps.n_langevin = 10;
    p.daps.sigma_langevin = 0.0;
    assert!(matches!(
        solver_with(&m, p).correct(&ctx, &obs, &mut RngStream::new(0, 0)),
        Err(Error::Config(_))
    ));
}

#[test]
fn langevin_without_data_targets_anchor_gaussian() {
    // x' - a = (1 - h / r2)(x - a) + sqrt(2h) e has stationary variance
    // r2 / (1 - h / (2 r2)); with h / r2 = 0.5 that is 4 r2 / 3.
    let r2 = 0.3;
    let h = 0.5 * r2;
    let anchor = vecf(&[1.0, -2.0]);
    let mut sum = Vector::zeros(2);
    let mut sq = Vector::zeros(2);
    let n = 20_000;
    let burn = 50;
    langevin_chain(
        &anchor,
        &anchor,
        r2,
        h,
        n + burn,
        None,
        &mut RngStream::new(8, 0),
        |j, x| {
            if j >= burn {
                sum += x;
                sq += (x - &anchor).component_mul(&(x - &anchor));
            }
        },
    )
    .unwrap();
    let mean = sum / n as f64;
    let var = sq / n as f64;
    let stationary = r2 / (1.0 - 0.5 * h / r2);
    // Lag-one correlation 0.5 inflates the standard error by sqrt(3).
    let se = (stationary * 3.0 / n as f64).sqrt();
    for k in 0..2 {
        assert!((mean[k] - anchor[k]).abs() < 4.0 * se, "{mean}");
        assert!((var[k] / stationary - 1.0).abs() < 0.05, "{var}");
    }
}

#[test]
fn ddim_noiser_spot_checks() {
    let m = std_model(2);
    let s = solver(&m, Algorithm::Dps);
    let xhat = vecf(&[0.3, -0.4]);
    let mut ctx = manual_ctx(vecf(&[1.0, 1.0]), xhat.clone(), 0.3, 0.6);
    ctx.eps = vecf(&[0.5, -0.5]);

    let mut st = RngStream::new(1, 0);
    let out = s.noiser_ddim(&ctx, &xhat, 0.0, &mut st).unwrap();
    assert_eq!(st.counter, 0);
    let c2 = 0.4f64.sqrt();
    assert!((out - (&xhat * 0.6f64.sqrt() + &ctx.eps * c2)).amax() < 1e-15);

    let mut same = ctx.clone();
    same.ab_cur = 0.6;
    let mut st = RngStream::new(1, 0);
    s.noiser_ddim(&same, &xhat, 1.0, &mut st).unwrap();
    assert_eq!(st.counter, 0);

    let mut st = RngStream::new(1, 0);
    let out = s.noiser_ddim(&ctx, &xhat, 0.85, &mut st).unwrap();
    let e = RngStream::new(1, 0).standard_normal(2);
    let expected = &xhat * 0.6f64.sqrt() + &e * 0.4543441112511215 + &ctx.eps * 0.4399675312695569;
    assert!((out - expected).amax() < 1e-14);
}

#[test]
fn direct_noiser() {
    let m = std_model(1);
    let s = solver(&m, Algorithm::Reddiff);
    let xhat = vecf(&[0.7]);
    let final_ctx = manual_ctx(vecf(&[0.0]), xhat.clone(), 0.5, 1.0);
    assert_eq!(
        s.noiser_direct(&final_ctx, &xhat, &mut RngStream::new(0, 0)).unwrap(),
        xhat
    );

    let ctx = manual_ctx(vecf(&[0.0]), xhat.clone(), 0.3, 0.6);
    let a = s.noiser_direct(&ctx, &xhat, &mut RngStream::new(4, 1)).unwrap();
    assert_eq!(a, s.noiser_direct(&ctx, &xhat, &mut RngStream::new(4, 1)).unwrap());

    let mut st = RngStream::new(5, 0);
    let n = 10_000;
    let var = (0..n)
        .map(|_| (s.noiser_direct(&ctx, &xhat, &mut st).unwrap()[0] - 0.6f64.sqrt() * 0.7).powi(2))
        .sum::<f64>()
        / n as f64;
    assert!((var / 0.4 - 1.0).abs() < 0.05, "{var}");
}

#[test]
fn spectral_noisers() {
    let m = std_model(3);
    let a = LinearOperator::mask(3, &[0, 1]).unwrap();
    let xhat = vecf(&[0.2, -0.1, 0.5]);
    let mut ctx = manual_ctx(vecf(&[0.0; 3]), xhat.clone(), 0.3, 0.6);
    ctx.eps = vecf(&[0.4, 0.3, -0.8]);
    let (ab, sig) = (0.6f64, 0.4f64.sqrt());
    let eta = 0.85f64;

    for algo in [Algorithm::Ddrm, Algorithm::Ddnm] {
        let s = solver(&m, algo);
        let clean = Observation::new(vecf(&[0.0, 0.0]), ObservationOp::Linear(a.clone()), 0.0).unwrap();
        let out = s.noise(&ctx, &xhat, &clean, &mut RngStream::new(6, 0)).unwrap();
        let e = RngStream::new(6, 0).standard_normal(3);
        // Null coordinate: DDIM form with eps_theta; range: full fresh noise.
        let null = ab.sqrt() * 0.5 + (1.0 - eta * eta).sqrt() * sig * -0.8 + eta * sig * e[2];
        assert!((out[2] - null).abs() < 1e-15);
        for k in 0..2 {
            assert!((out[k] - (ab.sqrt() * xhat[k] + sig * e[k])).abs() < 1e-15);
        }

        // Middle branch: large observation noise.
        let noisy = Observation::new(vecf(&[0.0, 0.0]), ObservationOp::Linear(a.clone()), 2.0).unwrap();
        let out = s.noise(&ctx, &xhat, &noisy, &mut RngStream::new(6, 0)).unwrap();
        for k in 0..2 {
            assert!((out[k] - (ab.sqrt() * xhat[k] + eta * sig * e[k])).abs() < 1e-15);
        }
    }

    // Third branch with a small observation noise.
    let noisy = Observation::new(vecf(&[0.0, 0.0]), ObservationOp::Linear(a.clone()), 0.1).unwrap();
    let e = RngStream::new(6, 0).standard_normal(3);
    let out = solver(&m, Algorithm::Ddnm)
        .noise(&ctx, &xhat, &noisy, &mut RngStream::new(6, 0))
        .unwrap();
    let scale = (0.4f64 - 0.01 * 0.6).sqrt();
    assert!((out[0] - (ab.sqrt() * xhat[0] + scale * e[0])).abs() < 1e-15);

    let mut p = AlgoParams::defaults(Algorithm::Ddrm);
    p.eta_b = 30.0;
    let err = solver_with(&m, p).noise(&ctx, &xhat, &noisy, &mut RngStream::new(6, 0));
    assert!(matches!(err, Err(Error::Parameter(_))));
}

#[test]
fn diffpir_noiser() {
    let m = std_model(2);
    let s = solver(&m, Algorithm::Diffpir);
    let x_t = vecf(&[0.9, -0.3]);
    let ctx = ctx_at(&s, x_t.clone(), 500, 300);
    let xhat = vecf(&[0.1, 0.2]);

    let direct = s.noiser_direct(&ctx, &xhat, &mut RngStream::new(2, 0)).unwrap();
    let out = s.noiser_diffpir(&ctx, &xhat, 1.0, &mut RngStream::new(2, 0)).unwrap();
    assert!((out - direct).amax() < 1e-15);

    // With x_hat the Tweedie estimate and eta = 0 this is the DDIM step.
    let ddim = crate::diffusion::ddim_step(&m, &x_t, 500, 300, 0.0, None, &mut RngStream::new(0, 0)).unwrap();
    let out = s.noiser_diffpir(&ctx, &ctx.x0, 0.0, &mut RngStream::new(0, 0)).unwrap();
    assert!((out - ddim).amax() < 1e-14);

    let mut last = ctx.clone();
    last.ab_prev = 1.0;
    assert_eq!(
        s.noiser_diffpir(&last, &xhat, 0.3, &mut RngStream::new(0, 0)).unwrap(),
        xhat
    );
}

#[test]
fn resample_noiser() {
    let m = std_model(1);
    let xhat = vecf(&[0.4]);
    let mut ctx = manual_ctx(vecf(&[0.2]), vecf(&[0.1]), 0.6, 0.6);
    ctx.eps = vecf(&[0.5]);
    let s = solver(&m, Algorithm::Resample);
    // Equal noise levels: sigma^2 = 0 and the output is the re-encoding.
    let out = s.noiser_resample(&ctx, &xhat, &mut RngStream::new(0, 0)).unwrap();
    let (_, c2) = crate::diffusion::ddim_coefficients(0.6, 0.6, 1.0).unwrap();
    assert!((out[0] - (0.6f64.sqrt() * 0.1 + c2 * 0.5)).abs() < 1e-15);

    ctx.ab_cur = 0.3;
    let mut p = AlgoParams::defaults(Algorithm::Resample);
    p.gamma_rs = 1e8;
    let s_big = solver_with(&m, p);
    let mut st = RngStream::new(3, 0);
    let n = 10_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| s_big.noiser_resample(&ctx, &xhat, &mut st).unwrap()[0] - 0.6f64.sqrt() * 0.4)
        .collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
    assert!(mean.abs() < 4.0 * (0.4 / n as f64).sqrt(), "{mean}");
    assert!((var / 0.4 - 1.0).abs() < 0.05);

    // Blend noise at gamma = 100 against its closed-form variance.
    let s2: f64 = 100.0 * (0.4 / 0.3) * (1.0 - 0.3 / 0.6);
    let blend_var = s2 * 0.4 / (s2 + 0.4);
    let (c1, _) = crate::diffusion::ddim_coefficients(0.3, 0.6, 1.0).unwrap();
    let enc_var = (0.4 / (s2 + 0.4)).powi(2) * c1 * c1;
    let mut st = RngStream::new(4, 0);
    let draws: Vec<f64> = (0..n)
        .map(|_| s.noiser_resample(&ctx, &xhat, &mut st).unwrap()[0])
        .collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
    assert!((var / (blend_var + enc_var) - 1.0).abs() < 0.05, "{var}");
}

#[test]
fn dmps_noiser_uses_fixed_weights() {
    let m = std_model(1);
    let s = solver(&m, Algorithm::Dmps);
    let mut ctx = manual_ctx(vecf(&[0.0]), vecf(&[0.0]), 0.3, 0.6);
    ctx.eps = vecf(&[0.5]);
    let xhat = vecf(&[0.4]);
    let out = s
        .noise(
            &ctx,
            &xhat,
            &Observation::new(vecf(&[0.0]), ObservationOp::Linear(identity_op(1)), 0.0).unwrap(),
            &mut RngStream::new(1, 0),
        )
        .unwrap();
    let e = RngStream::new(1, 0).standard_normal(1)[0];
    let sig = 0.4f64.sqrt();
    let expected = 0.6f64.sqrt() * 0.4 + 0.85 * sig * e + (1.0f64 - 0.7225).sqrt() * sig * 0.5;
    assert!((out[0] - expected).abs() < 1e-15);
}

#[test]
fn single_step_ddnm_recovers_full_observation() {
    let m = mixture_model(4, 1);
    let s = solver(&m, Algorithm::Ddnm);
    let truth = vecf(&[0.1, 0.2, 0.3, 0.4]);
    let obs = obs_linear(identity_op(4), &truth, 0.0, 0);
    let grid = make_time_grid(m.schedule(), 1).unwrap();
    let out = s.run(&obs, &grid, &mut RngStream::new(1, 0)).unwrap();
    assert!((out - truth).amax() < 1e-14);
}

#[test]
fn noiseless_ddnm_is_consistent_after_many_steps() {
    let m = mixture_model(8, 2);
    let s = solver(&m, Algorithm::Ddnm);
    let a = LinearOperator::random_mask(8, 0.5, &mut RngStream::new(1, 0)).unwrap();
    let truth = m.prior().sample(&mut RngStream::new(2, 0));
    let obs = obs_linear(a.clone(), &truth, 0.0, 0);
    let grid = make_time_grid(m.schedule(), 200).unwrap();
    let out = s.run(&obs, &grid, &mut RngStream::new(3, 0)).unwrap();
    assert!((a.apply(&out).unwrap() - &obs.y).norm() <= 1e-8);
}

#[test]
fn every_algorithm_runs_deterministically() {
    let m = mixture_model(8, 4);
    let a = LinearOperator::random_mask(8, 0.5, &mut RngStream::new(1, 0)).unwrap();
    let truth = m.prior().sample(&mut RngStream::new(2, 0));
    let obs = obs_linear(a, &truth, 0.05, 3);
    let grid = make_time_grid(m.schedule(), 4).unwrap();
    for algo in Algorithm::ALL {
        let s = solver(&m, algo);
        let first = s.run(&obs, &grid, &mut RngStream::new(9, 1)).unwrap();
        let second = s.run(&obs, &grid, &mut RngStream::new(9, 1)).unwrap();
        assert_eq!(first, second, "{algo}");
        assert!(crate::numerics::all_finite(&first));
    }
}

#[test]
fn linear_only_algorithms_reject_nonlinear_operators() {
    let m = std_model(8);
    let op = ObservationOp::Nonlinear(NonlinearOperator::new(8, gaussian_kernel(1.0, 2).unwrap(), 1.0).unwrap());
    let obs = Observation::new(Vector::zeros(8), op, 0.05).unwrap();
    let grid = make_time_grid(m.schedule(), 3).unwrap();
    for algo in Algorithm::ALL {
        let r = solver(&m, algo).run(&obs, &grid, &mut RngStream::new(0, 0));
        if algo.requires_linear() {
            assert!(matches!(r, Err(Error::UnsupportedOperator(_))), "{algo}");
        } else {
            assert!(r.is_ok(), "{algo}: {r:?}");
        }
    }
}

#[test]
fn zero_strength_correctors_return_sampler_output() {
    let m = mixture_model(4, 6);
    let a = LinearOperator::mask(4, &[0, 3]).unwrap();
    let obs = obs_linear(a, &vecf(&[0.3, 0.1, -0.2, 0.5]), 0.05, 1);
    let x_t = vecf(&[0.2, -0.4, 0.1, 0.9]);
    let cases: Vec<AlgoParams> = {
        let mut v = Vec::new();
        let mut p = AlgoParams::defaults(Algorithm::Dps);
        p.zeta = 0.0;
        v.push(p);
        let mut p = AlgoParams::defaults(Algorithm::Dmps);
        p.lambda = 0.0;
        v.push(p);
        let mut p = AlgoParams::defaults(Algorithm::Reddiff);
        p.lambda = 0.0;
        v.push(p);
        let mut p = AlgoParams::defaults(Algorithm::Daps);
        p.daps.n_langevin = 0;
        v.push(p);
        let mut p = AlgoParams::defaults(Algorithm::Resample);
        p.inner_opt.steps = 0;
        v.push(p);
        v
    };
    for p in cases {
        let s = solver_with(&m, p);
        let ctx = ctx_at(&s, x_t.clone(), 400, 200);
        let out = s.correct(&ctx, &obs, &mut RngStream::new(0, 0)).unwrap();
        assert!((&out - &ctx.x0).amax() <= 1e-15, "{}", p.algorithm);
    }
    let op = ObservationOp::Nonlinear(NonlinearOperator::new(4, vec![0.25, 0.5, 0.25], 1.0).unwrap());
    let nl = Observation::new(vecf(&[0.1, 0.2, 0.3, 0.4]), op, 0.05).unwrap();
    let mut p = AlgoParams::defaults(Algorithm::Diffpir);
    p.inner_opt.steps = 0;
    let s = solver_with(&m, p);
    let ctx = ctx_at(&s, x_t, 400, 200);
    assert_eq!(s.correct(&ctx, &nl, &mut RngStream::new(0, 0)).unwrap(), ctx.x0);
}

#[test]
fn fuzzed_correctors_stay_finite() {
    let m = mixture_model(6, 12);
    let mut r = RngStream::new(77, 0);
    let grid_pairs = [(1000, 800), (600, 300), (200, 100), (20, 0), (5, 1)];
    for trial in 0..1000 {
        let algo = Algorithm::ALL[trial % 9];
        let mut p = AlgoParams::defaults(algo);
        let u = r.uniform(4);
        p.eta = u[0];
        p.lambda *= 2.0 * u[1];
        p.zeta *= 2.0 * u[2];
        p.xi = u[3];
        p.daps.n_langevin = 10;
        p.inner_opt.steps = 10;
        let s = solver_with(&m, p);
        let (t, tp) = grid_pairs[trial % grid_pairs.len()];
        let x_t = r.standard_normal(6) * (1.0 + 3.0 * r.uniform(1)[0]);
        let linear = algo.requires_linear() || trial % 2 == 0;
        let op = if linear {
            ObservationOp::Linear(LinearOperator::random_mask(6, 0.5, &mut r).unwrap())
        } else {
            ObservationOp::Nonlinear(NonlinearOperator::new(6, vec![0.25, 0.5, 0.25], 2.0).unwrap())
        };
        let sigma = if trial % 3 == 0 { 0.0 } else { 0.05 };
        let y = r.standard_normal(op.output_dim()) * 0.5;
        let obs = Observation::new(y, op, sigma).unwrap();
        let ctx = s.begin_step(x_t, t, tp, Some(r.standard_normal(6)), &mut r).unwrap();
        match s.correct(&ctx, &obs, &mut r) {
            Ok(out) => assert!(crate::numerics::all_finite(&out), "{algo} trial {trial}"),
            Err(Error::Convergence(_)) => {}
            Err(e) => panic!("{algo} trial {trial}: {e}"),
        }
    }
}
