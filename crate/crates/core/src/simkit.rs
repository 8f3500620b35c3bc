//! Seeded stochastic simulation of the clock ensemble.
//!
//! At step `k` the simulator draws the measurement noise, forms
//! `y[k] = C x[k] + w[k]`, asks the control policy for `u[k]` (the policy never
//! sees `x`), draws the process noise and advances
//! `x[k+1] = A x[k] + B u[k] + v[k]`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_len, invalid, Result};
use crate::linalg::psd_cholesky;
use crate::models::{DiscreteClockModel, EnsembleModel};

const PROCESS_STREAM: u64 = 0;
const MEASUREMENT_STREAM: u64 = 1;

/// Maps the measurement at step `k` to the physical input `u[k]`.
pub trait ControlPolicy {
    fn input(&mut self, k: usize, y: &DVector<f64>) -> Result<DVector<f64>>;
}

impl<F> ControlPolicy for F
where
    F: FnMut(usize, &DVector<f64>) -> Result<DVector<f64>>,
{
    fn input(&mut self, k: usize, y: &DVector<f64>) -> Result<DVector<f64>> {
        self(k, y)
    }
}

/// Free-running clocks: `u ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct FreeRun {
    pub clocks: usize,
}

impl ControlPolicy for FreeRun {
    fn input(&mut self, _k: usize, _y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.clocks))
    }
}

/// Gaussian process and measurement noise from two independent ChaCha streams of one seed.
pub struct NoiseSampler {
    pub chol_q: DMatrix<f64>,
    pub chol_r: DMatrix<f64>,
    pub seed: u64,
    pub step: u64,
    process: ChaCha20Rng,
    measurement: ChaCha20Rng,
    scratch: DVector<f64>,
}

impl NoiseSampler {
    pub fn new(model: &EnsembleModel, seed: u64) -> Result<Self> {
        let chol_q = psd_cholesky(&model.big_q)?;
        let chol_r = psd_cholesky(&model.meas.r)?;
        let mut process = ChaCha20Rng::seed_from_u64(seed);
        process.set_stream(PROCESS_STREAM);
        let mut measurement = ChaCha20Rng::seed_from_u64(seed);
        measurement.set_stream(MEASUREMENT_STREAM);
        Ok(Self {
            scratch: DVector::zeros(chol_q.nrows().max(chol_r.nrows())),
            chol_q,
            chol_r,
            seed,
            step: 0,
            process,
            measurement,
        })
    }

    fn correlated(rng: &mut ChaCha20Rng, chol: &DMatrix<f64>, z: &mut DVector<f64>) -> DVector<f64> {
        let n = chol.nrows();
        for i in 0..n {
            z[i] = rng.sample(StandardNormal);
        }
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..=i {
                s += chol[(i, j)] * z[j];
            }
            out[i] = s;
        }
        out
    }

    pub fn process(&mut self) -> DVector<f64> {
        self.step += 1;
        Self::correlated(&mut self.process, &self.chol_q, &mut self.scratch)
    }

    pub fn measurement(&mut self) -> DVector<f64> {
        Self::correlated(&mut self.measurement, &self.chol_r, &mut self.scratch)
    }
}

/// `x[k+1] = A x + B u + v`.
pub fn step(
    model: &EnsembleModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    ensure_len("state", x.len(), model.state_dim())?;
    ensure_len("input", u.len(), model.n)?;
    ensure_len("process noise", v.len(), model.state_dim())?;
    Ok(advance(model, x, u, v))
}

// A ⊗ I_N and B ⊗ I_N applied without forming the products.
fn advance(model: &EnsembleModel, x: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let n = model.n;
    let tau = model.tau;
    let mut next = DVector::zeros(2 * n);
    for i in 0..n {
        next[i] = x[i] + tau * x[n + i] + tau * u[i] + v[i];
        next[n + i] = x[n + i] + u[i] + v[n + i];
    }
    next
}

/// Switches for the two noise sources; both on by default.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub process_noise: bool,
    pub measurement_noise: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            process_noise: true,
            measurement_noise: true,
        }
    }
}

/// Everything that happened at one step, handed to streaming observers.
pub struct StepView<'a> {
    pub k: usize,
    pub x: &'a DVector<f64>,
    pub y: &'a DVector<f64>,
    pub u: &'a DVector<f64>,
    pub v: &'a DVector<f64>,
    pub w: &'a DVector<f64>,
}

/// Runs `steps` steps without storing the trajectory; returns the final state `x[steps]`.
pub fn simulate_streaming<P, F>(
    model: &EnsembleModel,
    policy: &mut P,
    steps: usize,
    seed: u64,
    x0: Option<&DVector<f64>>,
    opts: SimOptions,
    mut observe: F,
) -> Result<DVector<f64>>
where
    P: ControlPolicy + ?Sized,
    F: FnMut(&StepView<'_>) -> Result<()>,
{
    if steps == 0 {
        return invalid("simulation horizon must be at least one step");
    }
    let mut x = match x0 {
        Some(x0) => {
            ensure_len("initial state", x0.len(), model.state_dim())?;
            x0.clone()
        }
        None => DVector::zeros(model.state_dim()),
    };
    let mut sampler = NoiseSampler::new(model, seed)?;
    let zero_w = DVector::zeros(model.meas_dim());
    let zero_v = DVector::zeros(model.state_dim());
    for k in 0..steps {
        let w = if opts.measurement_noise {
            sampler.measurement()
        } else {
            zero_w.clone()
        };
        let y = &model.big_c * &x + &w;
        let u = policy.input(k, &y)?;
        if u.len() != model.n {
            return invalid(format!(
                "control policy returned {} inputs at step {k}, expected {}",
                u.len(),
                model.n
            ));
        }
        let v = if opts.process_noise {
            sampler.process()
        } else {
            zero_v.clone()
        };
        observe(&StepView {
            k,
            x: &x,
            y: &y,
            u: &u,
            v: &v,
            w: &w,
        })?;
        x = advance(model, &x, &u, &v);
    }
    Ok(x)
}

/// One recorded simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub tau: f64,
    pub clocks: usize,
    pub steps: usize,
    /// `x[0..=T]`.
    pub x: Vec<DVector<f64>>,
    /// `y[0..T]`.
    pub y: Vec<DVector<f64>>,
    /// `h[0..=T]`.
    pub h: Vec<DVector<f64>>,
    /// `u[0..T]`.
    pub u: Vec<DVector<f64>>,
    /// Process noise `v[0..T]`, kept so that destinations can be replayed on it.
    pub v: Vec<DVector<f64>>,
    pub xhat: Option<Vec<DVector<f64>>>,
}

impl TrajectoryRecord {
    /// Clock reading deviation series of one clock.
    pub fn clock_series(&self, i: usize) -> Vec<f64> {
        self.h.iter().map(|h| h[i]).collect()
    }

    /// Writes `k, h_1..h_N, u_1..u_N` (plus `xhat_*` columns when present) for `k < T`.
    pub fn write_csv<W: Write>(&self, out: W, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.clocks).map(|i| format!("h_{i}")));
        header.extend((1..=self.clocks).map(|i| format!("u_{i}")));
        if let Some(xh) = &self.xhat {
            header.extend((1..=xh.first().map_or(0, |v| v.len())).map(|i| format!("xhat_{i}")));
        }
        wtr.write_record(&header)?;
        for k in (0..self.steps).step_by(stride) {
            let mut row = vec![k.to_string()];
            row.extend(self.h[k].iter().map(|v| sci(*v)));
            row.extend(self.u[k].iter().map(|v| sci(*v)));
            if let Some(xh) = &self.xhat {
                row.extend(xh[k].iter().map(|v| sci(*v)));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// 17 significant digits in scientific notation.
pub fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn simulate<P: ControlPolicy + ?Sized>(
    model: &EnsembleModel,
    policy: &mut P,
    steps: usize,
    seed: u64,
    x0: Option<&DVector<f64>>,
) -> Result<TrajectoryRecord> {
    simulate_with(model, policy, steps, seed, x0, SimOptions::default())
}

pub fn simulate_with<P: ControlPolicy + ?Sized>(
    model: &EnsembleModel,
    policy: &mut P,
    steps: usize,
    seed: u64,
    x0: Option<&DVector<f64>>,
    opts: SimOptions,
) -> Result<TrajectoryRecord> {
    let mut rec = TrajectoryRecord {
        tau: model.tau,
        clocks: model.n,
        steps,
        x: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps),
        h: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps),
        v: Vec::with_capacity(steps),
        xhat: None,
    };
    let last = simulate_streaming(model, policy, steps, seed, x0, opts, |s| {
        rec.x.push(s.x.clone());
        rec.h.push(s.x.rows(0, model.n).into_owned());
        rec.y.push(s.y.clone());
        rec.u.push(s.u.clone());
        rec.v.push(s.v.clone());
        Ok(())
    })?;
    rec.h.push(last.rows(0, model.n).into_owned());
    rec.x.push(last);
    Ok(rec)
}

/// Clock-reading adjustments `u'` that make a free-running clock read exactly like
/// one whose frequency was physically steered by `u`.
pub fn digital_imitation(model: &DiscreteClockModel, u: &[f64]) -> Vec<f64> {
    let mut eps = nalgebra::Vector2::zeros();
    u.iter()
        .map(|&uk| {
            let out = (model.c * eps)[0];
            eps = model.a * eps + model.b * uk;
            out
        })
        .collect()
}

/// `ε[k] = (C ⊗ 𝟙ᵀ/N) e[k]`: mean phase of a `2N`-dimensional error series.
pub fn reference_timescale(errors: &[DVector<f64>], clocks: usize) -> Result<Vec<f64>> {
    errors
        .iter()
        .map(|e| {
            ensure_len("estimation error", e.len(), 2 * clocks)?;
            Ok(mean_phase(e, clocks))
        })
        .collect()
}

pub(crate) fn mean_phase(e: &DVector<f64>, clocks: usize) -> f64 {
    e.rows(0, clocks).sum() / clocks as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_ensemble, discretize, reference, star_measurement, NoiseParams};

    fn two_clock(s1: f64, s2: f64) -> EnsembleModel {
        let p = NoiseParams::new(s1, s2).unwrap();
        build_ensemble(&[p, p], star_measurement(2).unwrap(), DMatrix::identity(1, 1), 1.0).unwrap()
    }

    #[test]
    fn step_examples() {
        let m = two_clock(1.0, 1.0);
        let z4 = DVector::zeros(4);
        let z2 = DVector::zeros(2);
        assert_eq!(step(&m, &z4, &z2, &z4).unwrap(), z4);
        let x = DVector::from_vec(vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(step(&m, &x, &z2, &z4).unwrap(), x);
        let x = DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(step(&m, &x, &z2, &z4).unwrap(), DVector::from_element(4, 1.0));
        assert!(step(&m, &DVector::zeros(3), &z2, &z4).is_err());
    }

    #[test]
    fn step_matches_kronecker_form() {
        let m = reference::subset(&[0, 3, 9], 2.5).unwrap();
        let x = DVector::from_fn(6, |i, _| (i as f64).sin());
        let u = DVector::from_fn(3, |i, _| 0.1 * i as f64);
        let v = DVector::from_fn(6, |i, _| 1e-3 * (i as f64).cos());
        let dense = &m.big_a * &x + &m.big_b * &u + &v;
        assert!((step(&m, &x, &u, &v).unwrap() - dense).amax() < 1e-15);
    }

    #[test]
    fn zero_noise_zero_policy_is_all_zero() {
        let m = two_clock(1.0, 1.0);
        let opts = SimOptions {
            process_noise: false,
            measurement_noise: false,
        };
        let rec = simulate_with(&m, &mut FreeRun { clocks: 2 }, 50, 3, None, opts).unwrap();
        assert!(rec.x.iter().all(|x| x.amax() == 0.0));
        assert!(rec.y.iter().all(|y| y.amax() == 0.0));
        assert_eq!(rec.x.len(), 51);
        assert_eq!(rec.u.len(), 50);
    }

    #[test]
    fn noiseless_relative_phases_stay_constant() {
        let m = reference::subset(&[1, 2, 3], 1.0).unwrap();
        let x0 = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.01, 0.01, 0.01]);
        let opts = SimOptions {
            process_noise: false,
            measurement_noise: false,
        };
        let rec = simulate_with(&m, &mut FreeRun { clocks: 3 }, 100, 0, Some(&x0), opts).unwrap();
        let rel0 = &m.meas.v * rec.x[0].rows(0, 3);
        for x in &rec.x {
            assert!((&m.meas.v * x.rows(0, 3) - &rel0).amax() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_record() {
        let m = reference::subset(&[0, 1, 2], 1.0).unwrap();
        let a = simulate(&m, &mut FreeRun { clocks: 3 }, 200, 17, None).unwrap();
        let b = simulate(&m, &mut FreeRun { clocks: 3 }, 200, 17, None).unwrap();
        assert_eq!(a, b);
        let c = simulate(&m, &mut FreeRun { clocks: 3 }, 200, 18, None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn record_is_consistent() {
        let m = reference::subset(&[0, 1, 2], 1.0).unwrap();
        let rec = simulate(&m, &mut FreeRun { clocks: 3 }, 30, 1, None).unwrap();
        for (x, h) in rec.x.iter().zip(&rec.h) {
            assert_eq!(&(&m.big_h * x), h);
        }
        for k in 0..30 {
            let next = step(&m, &rec.x[k], &rec.u[k], &rec.v[k]).unwrap();
            assert_eq!(next, rec.x[k + 1]);
        }
    }

    #[test]
    fn wrong_policy_dimension_is_rejected() {
        let m = two_clock(1.0, 0.0);
        let mut bad = |_k: usize, _y: &DVector<f64>| Ok(DVector::zeros(3));
        assert!(simulate(&m, &mut bad, 5, 0, None).is_err());
        assert!(simulate(&m, &mut FreeRun { clocks: 2 }, 0, 0, None).is_err());
    }

    #[test]
    fn process_noise_covariance_matches() {
        let m = reference::subset(&[0, 4, 9], 10.0).unwrap();
        let mut s = NoiseSampler::new(&m, 5).unwrap();
        let draws = 100_000;
        let mut acc = DMatrix::zeros(6, 6);
        for _ in 0..draws {
            let v = s.process();
            acc += &v * v.transpose();
        }
        acc /= draws as f64;
        let rel = (&acc - &m.big_q).norm() / m.big_q.norm();
        assert!(rel < 0.05, "relative Frobenius error {rel}");
        assert!((&s.chol_q * s.chol_q.transpose() - &m.big_q).amax() <= 1e-12 * m.big_q.amax());
    }

    #[test]
    fn imitation_of_unit_impulse() {
        let model = discretize(NoiseParams::new(1.0, 0.0).unwrap(), 1.0).unwrap();
        let mut u = vec![0.0; 6];
        u[0] = 1.0;
        assert_eq!(digital_imitation(&model, &u), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(digital_imitation(&model, &[0.0; 8]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn imitation_reproduces_physical_steering() {
        let noise = NoiseParams::new(0.17e-9, 0.15e-12).unwrap();
        let model = discretize(noise, 1.0).unwrap();
        let chol = model.q.cholesky().unwrap().l();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let steps = 500;
        let u: Vec<f64> = (0..steps).map(|k| 1e-12 * ((k as f64) * 0.1).sin()).collect();
        let adj = digital_imitation(&model, &u);
        let mut xp = nalgebra::Vector2::zeros();
        let mut xf = nalgebra::Vector2::zeros();
        for k in 0..steps {
            let h = (model.c * xp)[0];
            let h_adj = (model.c * xf)[0] + adj[k];
            assert!((h - h_adj).abs() <= 1e-12 * h.abs().max(1e-30), "step {k}: {h} vs {h_adj}");
            let z = nalgebra::Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let v = chol * z;
            xp = model.a * xp + model.b * u[k] + v;
            xf = model.a * xf + v;
        }
    }

    #[test]
    fn reference_timescale_is_mean_phase() {
        let e = vec![DVector::from_vec(vec![1.0, 2.0, 3.0, 9.0, 9.0, 9.0])];
        assert_eq!(reference_timescale(&e, 3).unwrap(), vec![2.0]);
        assert_eq!(reference_timescale(&[DVector::zeros(6)], 3).unwrap(), vec![0.0]);
        assert!(reference_timescale(&e, 2).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = two_clock(1.0, 0.0);
        let rec = simulate(&m, &mut FreeRun { clocks: 2 }, 3, 0, None).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf, 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "k,h_1,h_2,u_1,u_2");
        assert_eq!(lines.len(), 4);
        let fields: Vec<_> = lines[2].split(',').collect();
        let parsed: f64 = fields[1].parse().unwrap();
        assert_eq!(parsed, rec.h[1][0]);
        assert!(fields[1].contains('e'));
    }
}
