use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eemsync::allan::weight_long;
use eemsync::decomp::{decompose, project_state, Basis, EnsembleWeight};
use eemsync::filters::{solve_stationary, DeterminateKf, StandardKf, StationaryKf};
use eemsync::linalg::spd_solve;
use eemsync::models::{reference, EnsembleModel};
use eemsync::simkit::{simulate, simulate_streaming, FreeRun, SimOptions, TrajectoryRecord};

fn random_weight(rng: &mut ChaCha8Rng, n: usize) -> EnsembleWeight {
    EnsembleWeight::normalized(DVector::from_fn(n, |_, _| rng.random_range(0.05..1.0))).unwrap()
}

fn max_deviation(m: &EnsembleModel, rec: &TrajectoryRecord, basis: Basis) -> f64 {
    let d = decompose(m, basis).unwrap();
    let mut kf = StandardKf::new(m);
    let mut dk = DeterminateKf::new(&d);
    let mut worst = 0.0f64;
    for k in 0..rec.steps {
        if k == 0 {
            kf.update(m, &rec.y[0]).unwrap();
            dk.update(&d, &m.meas.r, &rec.y[0]).unwrap();
        } else {
            kf.step(m, &rec.u[k - 1], &rec.y[k]).unwrap();
            dk.step(&d, &m.meas.r, &rec.u[k - 1], &rec.y[k]).unwrap();
        }
        let x = dk.state_estimate(&d);
        worst = worst.max((&x - &kf.xhat).amax() / kf.xhat.amax());
    }
    worst
}

#[test]
fn decomposed_filter_reproduces_standard_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for clocks in [vec![3, 9], vec![0, 5, 9], vec![1, 2, 4, 6, 8]] {
        let m = reference::subset(&clocks, 1.0).unwrap();
        let n = m.n;
        let inputs: Vec<DVector<f64>> =
            (0..2000).map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1e-12..1e-12))).collect();
        let mut policy = |k: usize, _: &DVector<f64>| Ok(inputs[k].clone());
        let rec = simulate(&m, &mut policy, 2000, 3, None).unwrap();
        for _ in 0..5 {
            let q = random_weight(&mut rng, n);
            let dev = max_deviation(&m, &rec, Basis::Eem(q));
            assert!(dev <= 1e-8, "N = {n}, EEM basis: {dev:e}");
        }
        for _ in 0..3 {
            let w = DMatrix::from_fn(2, 2 * n, |_, _| rng.random_range(-1.0..1.0));
            let dev = max_deviation(&m, &rec, Basis::General(w));
            assert!(dev <= 1e-8, "N = {n}, general basis: {dev:e}");
        }
    }
}

#[test]
fn normalized_innovations_match_measurement_dimension() {
    let m = reference::ensemble(1.0).unwrap();
    let d = decompose(&m, Basis::Eem(EnsembleWeight::uniform(10))).unwrap();
    let t = 100_000;
    let zero = DVector::zeros(10);
    let mut dk = DeterminateKf::new(&d);
    let mut total = 0.0;
    simulate_streaming(&m, &mut FreeRun { clocks: 10 }, t, 17, None, SimOptions::default(), |s| {
        if s.k > 0 {
            dk.predict(&d, &zero)?;
        }
        let e = s.y - &d.co * &dk.xi_o_minus;
        let cov = &d.co * &dk.p_oo_minus * d.co.transpose() + &m.meas.r;
        total += e.dot(&spd_solve(&cov, &DMatrix::from_column_slice(9, 1, e.as_slice()))?.column(0));
        dk.update(&d, &m.meas.r, s.y)
    })
    .unwrap();
    let mean = total / t as f64;
    assert!((mean / 9.0 - 1.0).abs() <= 0.1, "mean NIS {mean}");
}

#[test]
fn stationary_filter_error_matches_fixed_point_covariance() {
    let m = reference::ensemble(1.0).unwrap();
    let q = weight_long(&m.sigma2).unwrap();
    let d = decompose(&m, Basis::Eem(q)).unwrap();
    let g = solve_stationary(&d, &m.meas.r).unwrap();
    let t = 100_000;
    let zero = DVector::zeros(10);
    let mut kf = StationaryKf::new(&d);
    let mut sq = 0.0;
    simulate_streaming(&m, &mut FreeRun { clocks: 10 }, t, 23, None, SimOptions::default(), |s| {
        if s.k > 0 {
            kf.predict(&d, &zero)?;
        }
        if s.k >= t / 2 {
            let (xi_o, _) = project_state(s.x, &d)?;
            sq += (xi_o - &kf.xi_o_minus).norm_squared();
        }
        kf.update(&d, &g, s.y)
    })
    .unwrap();
    let empirical = sq / (t / 2) as f64;
    let expected = g.p_oo.trace();
    assert!((empirical / expected - 1.0).abs() <= 0.2, "{empirical:e} vs {expected:e}");
}
