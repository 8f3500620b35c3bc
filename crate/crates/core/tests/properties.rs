use nalgebra::{DMatrix, DVector, Vector2};
use proptest::prelude::*;

use eemsync::allan::{allan_pi, analytical_allan_clock, optimal_weight, weight_long, weight_short};
use eemsync::control::{ControlMode, ControllerConfig, EemController, SyncDestination};
use eemsync::decomp::{decompose, project_state, Basis, EnsembleWeight};
use eemsync::linalg::{controllability_matrix, observability_matrix, psd_cholesky, rank, sync_basis};
use eemsync::models::{build_ensemble, diagonal_covariance, reference, star_measurement, NoiseParams};
use eemsync::simkit::{simulate, simulate_streaming, simulate_with, FreeRun, SimOptions};

fn noise_strategy(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<NoiseParams>> {
    prop::collection::vec((-11.0..-9.0f64, -14.0..-12.0f64), n).prop_map(|v| {
        v.into_iter()
            .map(|(a, b)| NoiseParams::new(10f64.powf(a), 10f64.powf(b)).unwrap())
            .collect()
    })
}

fn model_of(params: &[NoiseParams], tau: f64) -> eemsync::models::EnsembleModel {
    let n = params.len();
    let std: Vec<f64> = (1..n).map(|i| 1e-15 * i as f64).collect();
    build_ensemble(params, star_measurement(n).unwrap(), diagonal_covariance(&std).unwrap(), tau).unwrap()
}

fn weight_from(raw: &[f64]) -> EnsembleWeight {
    EnsembleWeight::normalized(DVector::from_column_slice(raw)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn process_covariance_is_psd_and_unobservable_directions_vanish(
        params in noise_strategy(2..=6),
        tau in 0.1..100.0f64,
    ) {
        let m = model_of(&params, tau);
        prop_assert!((&m.big_q - m.big_q.transpose()).amax() <= 1e-12 * m.big_q.amax());
        prop_assert!(psd_cholesky(&m.big_q).is_ok());
        prop_assert_eq!((&m.big_c * sync_basis(m.n)).amax(), 0.0);
    }

    #[test]
    fn decomposition_structure(
        params in noise_strategy(2..=6),
        raw in prop::collection::vec(0.05..1.0f64, 6),
        w in prop::collection::vec(-1.0..1.0f64, 24),
    ) {
        let m = model_of(&params, 1.0);
        let n = m.n;
        let q = weight_from(&raw[..n]);
        let general = DMatrix::from_row_slice(2, 2 * n, &w[..4 * n]);
        let mut bases = vec![Basis::Eem(q.clone())];
        if let Ok(d) = decompose(&m, Basis::General(general.clone())) {
            // Badly conditioned random draws are skipped, not failed.
            if d.t.clone().try_inverse().is_some() && rank(&d.t) == 2 * n {
                bases.push(Basis::General(general));
            }
        }
        for basis in bases {
            let eem = matches!(basis, Basis::Eem(_));
            let d = decompose(&m, basis).unwrap();
            let eye = DMatrix::<f64>::identity(2 * n, 2 * n);
            prop_assert!((&d.t * &d.tinv - &eye).amax() <= 1e-9);
            let ta = d.transformed_dynamics(&m);
            let o = d.obs_dim();
            let upper_right = ta.view((0, o), (o, 2)).norm();
            prop_assert!(upper_right <= 1e-10 * m.big_a.norm());
            if eem {
                prop_assert_eq!(d.coupling.amax(), 0.0);
            }
            prop_assert_eq!(rank(&observability_matrix(&d.ao, &d.co)), o);
            prop_assert_eq!(rank(&controllability_matrix(&d.ao, &d.bo)), o);
        }
        let d = decompose(&m, Basis::Eem(q.clone())).unwrap();
        let vp = d.vplus.as_ref().unwrap();
        let id = DMatrix::<f64>::identity(n - 1, n - 1);
        prop_assert!((&m.meas.v * vp - id).amax() <= 1e-14);
        prop_assert!((q.as_vector().transpose() * vp).amax() <= 1e-15);
    }

    #[test]
    fn optimal_weight_is_positive_and_normalized(
        params in noise_strategy(2..=8),
        log_tau in -6.0..9.0f64,
    ) {
        let m = model_of(&params, 1.0);
        let q = optimal_weight(&m.sigma1, &m.sigma2, 10f64.powf(log_tau)).unwrap();
        prop_assert!(q.as_vector().iter().all(|v| *v > 0.0));
        prop_assert!((q.as_vector().sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn two_clock_optimal_path_is_monotone(params in noise_strategy(2..=2)) {
        let m = model_of(&params, 1.0);
        let q0 = weight_short(&m.sigma1).unwrap();
        let qi = weight_long(&m.sigma2).unwrap();
        let dir = (qi.as_vector()[0] - q0.as_vector()[0]).signum();
        let mut prev = q0.as_vector()[0];
        for e in -6..=9 {
            let q = optimal_weight(&m.sigma1, &m.sigma2, 10f64.powi(e)).unwrap().as_vector()[0];
            prop_assert!(dir * (q - prev) >= -1e-12, "q1 moved backwards at tau = 1e{}", e);
            prev = q;
        }
    }

    #[test]
    fn single_clock_weighted_variance_is_the_clock_variance(
        s1 in 1e-12..1e-9f64,
        s2 in 1e-15..1e-12f64,
        tau in 0.1..1e5f64,
    ) {
        let p = NoiseParams::new(s1, s2).unwrap();
        let d1 = DMatrix::from_element(1, 1, s1 * s1);
        let d2 = DMatrix::from_element(1, 1, s2 * s2);
        let q = EnsembleWeight::new(DVector::from_element(1, 1.0)).unwrap();
        let a = allan_pi(&q, &d1, &d2, tau).unwrap();
        let b = analytical_allan_clock(p, tau).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * b);
    }

    #[test]
    fn collective_input_leaves_relative_phases_unchanged(
        params in noise_strategy(2..=5),
        x0 in prop::collection::vec(-1e-6..1e-6f64, 10),
        c in prop::collection::vec(-1e-9..1e-9f64, 50),
    ) {
        let m = model_of(&params, 1.0);
        let n = m.n;
        let x0 = DVector::from_fn(2 * n, |i, _| x0[i]);
        let quiet = SimOptions { process_noise: false, measurement_noise: false };
        let mut collective = |k: usize, _y: &DVector<f64>| Ok(DVector::from_element(n, c[k]));
        let a = simulate_with(&m, &mut collective, 50, 1, Some(&x0), quiet).unwrap();
        let b = simulate_with(&m, &mut FreeRun { clocks: n }, 50, 1, Some(&x0), quiet).unwrap();
        for (xa, xb) in a.x.iter().zip(&b.x) {
            let ra = &m.meas.v * xa.rows(0, n);
            let rb = &m.meas.v * xb.rows(0, n);
            prop_assert!((ra - rb).amax() <= 1e-15);
        }
    }
}

#[test]
fn projected_unobservable_state_follows_weighted_noise() {
    let m = reference::subset(&[1, 3, 6, 9], 1.0).unwrap();
    let rec = simulate(&m, &mut FreeRun { clocks: 4 }, 2000, 11, None).unwrap();
    let qa = EnsembleWeight::uniform(4);
    let qb = weight_long(&m.sigma2).unwrap();
    let da = decompose(&m, Basis::Eem(qa)).unwrap();
    let db = decompose(&m, Basis::Eem(qb)).unwrap();
    for k in 0..rec.steps {
        let (oa, ba) = project_state(&rec.x[k], &da).unwrap();
        let (ob, _) = project_state(&rec.x[k], &db).unwrap();
        assert_eq!(oa, ob, "observable part depends on the weight at k = {k}");
        let (_, next) = project_state(&rec.x[k + 1], &da).unwrap();
        let drive = &da.ubar * &rec.v[k];
        let resid = next - &da.a * ba - drive;
        assert!(resid.amax() <= 1e-12 * rec.x[k + 1].amax().max(1e-12), "k = {k}");
    }
}

#[test]
fn unobservable_state_runs_free_between_collective_instants() {
    let m = reference::subset(&[0, 2, 9], 1.0).unwrap();
    let q = weight_short(&m.sigma1).unwrap();
    let mut cfg = ControllerConfig::new(q.clone(), 1.0, ControlMode::Balanced);
    cfg.m = 7;
    cfg.k_bo = eemsync::control::default_collective_gain(7, 1.0);
    let mut c = EemController::new(&m, cfg).unwrap();
    let rec = simulate(&m, &mut c, 700, 5, None).unwrap();
    let d = decompose(&m, Basis::Eem(q)).unwrap();
    let mut checked = 0;
    for k in (0..rec.steps).filter(|k| k % 7 != 0) {
        let (_, now) = project_state(&rec.x[k], &d).unwrap();
        let (_, next) = project_state(&rec.x[k + 1], &d).unwrap();
        let resid = next - &d.a * now - &d.ubar * &rec.v[k];
        assert!(resid.amax() <= 1e-12 * rec.x[k + 1].amax().max(1e-12), "k = {k}: {resid}");
        checked += 1;
    }
    assert_eq!(checked, 600);
}

#[test]
fn weighted_mean_dynamics_matches_analytical_allan() {
    let t = 1_000_000;
    let m = reference::ensemble(1.0).unwrap();
    let q = weight_long(&m.sigma2).unwrap();
    let mut dest = SyncDestination::new(q.clone(), Vector2::zeros(), 1.0);
    let mut series = Vec::with_capacity(t + 1);
    simulate_streaming(&m, &mut FreeRun { clocks: 10 }, t, 404, None, SimOptions::default(), |s| {
        series.push(dest.z);
        dest.advance(s.v)
    })
    .unwrap();
    series.push(dest.z);
    for (interval, tol) in [(1usize, 0.2), (10, 0.2), (100, 0.2), (10_000, 0.5)] {
        let est = eemsync::allan::statistical_allan(&series, 1.0, interval).unwrap();
        let exact = allan_pi(&q, &m.sigma1, &m.sigma2, interval as f64).unwrap();
        assert!((est / exact - 1.0).abs() <= tol, "interval {interval}: {est:e} vs {exact:e}");
    }
}

#[test]
fn equal_seeds_reproduce_controlled_runs() {
    let m = reference::subset(&[4, 7, 9], 1.0).unwrap();
    let run = || {
        let cfg = ControllerConfig::new(EnsembleWeight::uniform(3), 1.0, ControlMode::Balanced);
        let mut c = EemController::new(&m, cfg).unwrap();
        simulate(&m, &mut c, 500, 77, None).unwrap()
    };
    assert_eq!(run(), run());
}
