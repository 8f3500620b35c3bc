//! Explicit ensemble mean synchronization.
//!
//! The controller estimates the observable (relative) and unobservable (ensemble
//! mean) parts of the ensemble in the basis of a user-chosen weight `q` and feeds
//! them back:
//!
//! ```text
//! ω_o[k] = −F_o ξ̂_o⁻[k]
//! ω_ō[k] = −F_ō[k] ξ̂_ō⁻[k],   F_ō[k] = K_ō on k ≡ phase (mod m), 0 otherwise
//! u[k]   = V⁺ ω_o[k] + 𝟙 ω_ō[k]
//! ```
//!
//! With `F_ō ≡ 0` every clock follows the free-running weighted mean `Π(q)`.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix2, RowVector2, Vector2};

use crate::decomp::{decompose, expand_input, Basis, Decomposition, EnsembleWeight};
use crate::error::{ensure_len, invalid, Error, Result};
use crate::filters::{solve_stationary, DeterminateKf, StationaryGains, StationaryKf};
use crate::linalg::{kron, spectral_radius};
use crate::models::{input_vector, transition, EnsembleModel};
use crate::simkit::{sci, ControlPolicy, TrajectoryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    /// Synchronization only, `F_ō ≡ 0`.
    SyncOnly,
    /// Synchronization plus intermittent collective feedback.
    Balanced,
}

/// Which observer supplies the estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObserverKind {
    /// Constant stationary gains.
    Stationary,
    /// Time-varying determinate filter.
    Determinate,
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub q: EnsembleWeight,
    /// `(N−1) × 2(N−1)` observable feedback gain.
    pub f_o: DMatrix<f64>,
    pub k_bo: RowVector2<f64>,
    /// Collective-control period in steps.
    pub m: usize,
    /// Collective input is applied when `k % m == phase % m`.
    pub phase: usize,
    pub mode: ControlMode,
    pub observer: ObserverKind,
}

/// `[0.1/τ, 1] ⊗ I_{N−1}`.
pub fn default_obs_gain(n: usize, tau: f64) -> DMatrix<f64> {
    kron(
        &DMatrix::from_row_slice(1, 2, &[0.1 / tau, 1.0]),
        &DMatrix::identity(n - 1, n - 1),
    )
}

/// `[0.01/(mτ), 1]`.
pub fn default_collective_gain(m: usize, tau: f64) -> RowVector2<f64> {
    RowVector2::new(0.01 / (m as f64 * tau), 1.0)
}

pub const DEFAULT_PERIOD: usize = 200;

impl ControllerConfig {
    /// Default gains with `m = 200` and the stationary observer.
    pub fn new(q: EnsembleWeight, tau: f64, mode: ControlMode) -> Self {
        let n = q.len();
        Self {
            f_o: default_obs_gain(n, tau),
            k_bo: default_collective_gain(DEFAULT_PERIOD, tau),
            m: DEFAULT_PERIOD,
            phase: 0,
            mode,
            observer: ObserverKind::Stationary,
            q,
        }
    }

    /// Checks dimensions and the spectral conditions that apply to the mode.
    pub fn validate(&self, n: usize, tau: f64) -> Result<()> {
        ensure_len("ensemble weight", self.q.len(), n)?;
        if self.m == 0 {
            return invalid("collective-control period m must be at least 1");
        }
        let rho = check_obs_gain(&self.f_o, n, tau)?;
        if rho >= 1.0 {
            return invalid(format!(
                "observable feedback gain is not stabilizing: ρ(A_o − B_o F_o) = {rho}"
            ));
        }
        if self.mode == ControlMode::Balanced {
            let rho = check_collective_gain(&self.k_bo, self.m, tau)?;
            if rho >= 1.0 {
                return invalid(format!(
                    "collective feedback gain is not stabilizing: ρ(Aᵐ − Aᵐ⁻¹B K) = {rho}"
                ));
            }
        }
        Ok(())
    }

    pub fn collective_active(&self, k: usize) -> bool {
        self.mode == ControlMode::Balanced && k % self.m == self.phase % self.m
    }
}

/// `ρ(A_o − B_o F_o)`.
pub fn check_obs_gain(f_o: &DMatrix<f64>, n: usize, tau: f64) -> Result<f64> {
    if n < 2 || f_o.shape() != (n - 1, 2 * (n - 1)) {
        return invalid(format!(
            "observable feedback gain must be {}x{}, got {}x{}",
            n.saturating_sub(1),
            2 * n.saturating_sub(1),
            f_o.nrows(),
            f_o.ncols()
        ));
    }
    let eye = DMatrix::identity(n - 1, n - 1);
    let a = DMatrix::from_row_slice(2, 2, transition(tau).transpose().as_slice());
    let b = DMatrix::from_column_slice(2, 1, input_vector(tau).as_slice());
    Ok(spectral_radius(&(kron(&a, &eye) - kron(&b, &eye) * f_o)))
}

/// `ρ(Aᵐ − Aᵐ⁻¹ B K)` with `Aᵐ = [[1, mτ], [0, 1]]`, `Aᵐ⁻¹B = [mτ, 1]ᵀ`.
pub fn check_collective_gain(k_bo: &RowVector2<f64>, m: usize, tau: f64) -> Result<f64> {
    if m == 0 {
        return invalid("collective-control period m must be at least 1");
    }
    let mt = m as f64 * tau;
    let am = Matrix2::new(1.0, mt, 0.0, 1.0);
    let b = Vector2::new(mt, 1.0);
    let cl = am - b * k_bo;
    Ok(spectral_radius(&DMatrix::from_row_slice(2, 2, cl.transpose().as_slice())))
}

#[derive(Debug, Clone)]
enum Observer {
    Stationary(StationaryKf),
    Determinate(Box<DeterminateKf>),
}

/// Per-step record of the decomposed and physical inputs.
#[derive(Debug, Clone, Default)]
pub struct InputLog {
    pub omega_o: Vec<DVector<f64>>,
    pub omega_obar: Vec<f64>,
    pub u: Vec<DVector<f64>>,
}

impl InputLog {
    /// Writes `k, omega_o_1..omega_o_{N−1}, omega_obar, u_1..u_N`.
    pub fn write_csv<W: Write>(&self, out: W, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        let mut wtr = csv::Writer::from_writer(out);
        let n = self.u.first().map_or(0, |u| u.len());
        let mut header = vec!["k".to_string()];
        header.extend((1..n).map(|i| format!("omega_o_{i}")));
        header.push("omega_obar".into());
        header.extend((1..=n).map(|i| format!("u_{i}")));
        wtr.write_record(&header)?;
        for k in (0..self.u.len()).step_by(stride) {
            let mut row = vec![k.to_string()];
            row.extend(self.omega_o[k].iter().map(|v| sci(*v)));
            row.push(sci(self.omega_obar[k]));
            row.extend(self.u[k].iter().map(|v| sci(*v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Observer-based controller; plugs into the simulator as a [`ControlPolicy`].
#[derive(Debug, Clone)]
pub struct EemController {
    pub cfg: ControllerConfig,
    pub d: Decomposition,
    pub gains: StationaryGains,
    r: DMatrix<f64>,
    observer: Observer,
    pub log: Option<InputLog>,
}

impl EemController {
    pub fn new(model: &EnsembleModel, cfg: ControllerConfig) -> Result<Self> {
        cfg.validate(model.n, model.tau)?;
        Self::new_unchecked(model, cfg)
    }

    /// Builds the controller without the spectral checks, for studying
    /// destabilizing gains. Dimensions are still checked.
    pub fn new_unchecked(model: &EnsembleModel, cfg: ControllerConfig) -> Result<Self> {
        ensure_len("ensemble weight", cfg.q.len(), model.n)?;
        check_obs_gain(&cfg.f_o, model.n, model.tau)?;
        if cfg.m == 0 {
            return invalid("collective-control period m must be at least 1");
        }
        let d = decompose(model, Basis::Eem(cfg.q.clone()))?;
        let gains = solve_stationary(&d, &model.meas.r)?;
        let observer = match cfg.observer {
            ObserverKind::Stationary => Observer::Stationary(StationaryKf::new(&d)),
            ObserverKind::Determinate => Observer::Determinate(Box::new(DeterminateKf::new(&d))),
        };
        Ok(Self {
            cfg,
            d,
            gains,
            r: model.meas.r.clone(),
            observer,
            log: None,
        })
    }

    pub fn with_log(mut self) -> Self {
        self.log = Some(InputLog::default());
        self
    }

    /// Prior estimates `(ξ̂_o⁻[k], ξ̂_ō⁻[k])` for the next step.
    pub fn prior(&self) -> (&DVector<f64>, &DVector<f64>) {
        match &self.observer {
            Observer::Stationary(s) => (&s.xi_o_minus, &s.xi_obar_minus),
            Observer::Determinate(s) => (&s.xi_o_minus, &s.xi_obar_minus),
        }
    }

    /// Reconstructed posterior state estimate.
    pub fn state_estimate(&self) -> DVector<f64> {
        match &self.observer {
            Observer::Stationary(s) => s.state_estimate(&self.d),
            Observer::Determinate(s) => s.state_estimate(&self.d),
        }
    }

    /// Decomposed inputs from the current priors.
    pub fn feedback(&self, k: usize) -> (DVector<f64>, f64) {
        let (xo, xb) = self.prior();
        let omega_o = -(&self.cfg.f_o * xo);
        let omega_obar = if self.cfg.collective_active(k) {
            -(self.cfg.k_bo * xb)[0]
        } else {
            0.0
        };
        (omega_o, omega_obar)
    }

    /// Consumes `y[k]` and returns `u[k]`; the observer advances to `ξ̂⁻[k+1]`.
    pub fn step(&mut self, k: usize, y: &DVector<f64>) -> Result<DVector<f64>> {
        let (omega_o, omega_obar) = self.feedback(k);
        let u = expand_input(&omega_o, omega_obar, &self.d)?;
        match &mut self.observer {
            Observer::Stationary(s) => {
                s.update(&self.d, &self.gains, y)?;
                s.predict(&self.d, &u)?;
            }
            Observer::Determinate(s) => {
                s.update(&self.d, &self.r, y)?;
                s.predict(&self.d, &u)?;
            }
        }
        if let Some(log) = &mut self.log {
            log.omega_o.push(omega_o);
            log.omega_obar.push(omega_obar);
            log.u.push(u.clone());
        }
        Ok(u)
    }
}

impl ControlPolicy for EemController {
    fn input(&mut self, k: usize, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.step(k, y)
    }
}

/// Free-running weighted ensemble mean `Π(q)`, driven by the process noise of the ensemble.
#[derive(Debug, Clone)]
pub struct SyncDestination {
    pub q: EnsembleWeight,
    pub r: Vector2<f64>,
    pub z: f64,
    tau: f64,
}

impl SyncDestination {
    pub fn new(q: EnsembleWeight, r0: Vector2<f64>, tau: f64) -> Self {
        Self { z: r0[0], r: r0, q, tau }
    }

    /// Starts at `(I₂⊗qᵀ) x[0]`.
    pub fn from_state(q: EnsembleWeight, x0: &DVector<f64>, tau: f64) -> Result<Self> {
        let n = q.len();
        ensure_len("initial state", x0.len(), 2 * n)?;
        let qv = q.as_vector();
        let r0 = Vector2::new(qv.dot(&x0.rows(0, n)), qv.dot(&x0.rows(n, n)));
        Ok(Self::new(q, r0, tau))
    }

    /// `r ← A r + (I₂⊗qᵀ) v`.
    pub fn advance(&mut self, v: &DVector<f64>) -> Result<()> {
        let n = self.q.len();
        ensure_len("process noise", v.len(), 2 * n)?;
        let qv = self.q.as_vector();
        let (p, f) = (self.r[0], self.r[1]);
        self.r = Vector2::new(p + self.tau * f + qv.dot(&v.rows(0, n)), f + qv.dot(&v.rows(n, n)));
        self.z = self.r[0];
        Ok(())
    }
}

/// Destination states `r[0..=T]` replayed on the recorded process noise.
pub fn destination_trajectory(
    q: &EnsembleWeight,
    traj: &TrajectoryRecord,
) -> Result<Vec<Vector2<f64>>> {
    let x0 = traj
        .x
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty trajectory".into()))?;
    let mut dest = SyncDestination::from_state(q.clone(), x0, traj.tau)?;
    let mut out = Vec::with_capacity(traj.v.len() + 1);
    out.push(dest.r);
    for v in &traj.v {
        dest.advance(v)?;
        out.push(dest.r);
    }
    Ok(out)
}

/// `δ[k] = x[k] − (I₂⊗𝟙) r[k]`.
pub fn sync_error(traj: &TrajectoryRecord, dest: &[Vector2<f64>]) -> Result<Vec<DVector<f64>>> {
    if dest.len() != traj.x.len() {
        return invalid(format!(
            "destination has {} states, trajectory has {}",
            dest.len(),
            traj.x.len()
        ));
    }
    Ok(traj
        .x
        .iter()
        .zip(dest)
        .map(|(x, r)| sync_offset(x, r, traj.clocks))
        .collect())
}

pub(crate) fn sync_offset(x: &DVector<f64>, r: &Vector2<f64>, n: usize) -> DVector<f64> {
    DVector::from_fn(2 * n, |i, _| x[i] - r[i / n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::reference;
    use crate::simkit::simulate;

    #[test]
    fn gain_checks_match_hand_eigenvalues() {
        let rho = check_obs_gain(&default_obs_gain(10, 1.0), 10, 1.0).unwrap();
        assert!((rho - 0.9).abs() < 1e-12);
        let rho = check_obs_gain(&DMatrix::zeros(9, 18), 10, 1.0).unwrap();
        assert!((rho - 1.0).abs() < 1e-6);
        let rho = check_collective_gain(&default_collective_gain(200, 1.0), 200, 1.0).unwrap();
        assert!((rho - 0.99).abs() < 1e-12);
        let rho = check_collective_gain(&RowVector2::zeros(), 200, 1.0).unwrap();
        assert!((rho - 1.0).abs() < 1e-6);
        assert!(check_obs_gain(&DMatrix::zeros(3, 3), 10, 1.0).is_err());
    }

    #[test]
    fn zero_estimates_give_zero_input() {
        let m = reference::subset(&[0, 1, 2], 1.0).unwrap();
        let cfg = ControllerConfig::new(EnsembleWeight::uniform(3), 1.0, ControlMode::Balanced);
        let mut c = EemController::new(&m, cfg).unwrap();
        let u = c.step(0, &DVector::zeros(2)).unwrap();
        assert_eq!(u, DVector::zeros(3));
    }

    #[test]
    fn collective_input_only_on_period() {
        let m = reference::subset(&[0, 1, 2, 3], 1.0).unwrap();
        let mut cfg = ControllerConfig::new(EnsembleWeight::uniform(4), 1.0, ControlMode::Balanced);
        cfg.m = 20;
        cfg.k_bo = default_collective_gain(20, 1.0);
        let mut c = EemController::new(&m, cfg).unwrap().with_log();
        simulate(&m, &mut c, 200, 3, None).unwrap();
        let log = c.log.unwrap();
        for (k, w) in log.omega_obar.iter().enumerate() {
            if k % 20 != 0 {
                assert_eq!(*w, 0.0);
            } else if k > 0 {
                assert!(*w != 0.0);
            }
        }
    }

    #[test]
    fn destination_follows_weighted_noise() {
        let q = EnsembleWeight::new(DVector::from_vec(vec![0.25, 0.75])).unwrap();
        let mut d = SyncDestination::new(q, Vector2::new(1.0, 2.0), 0.5);
        d.advance(&DVector::from_vec(vec![4.0, 8.0, 1.0, 2.0])).unwrap();
        assert_eq!(d.r, Vector2::new(1.0 + 1.0 + 7.0, 2.0 + 1.75));
        assert_eq!(d.z, 9.0);
    }

    #[test]
    fn input_log_layout() {
        let log = InputLog {
            omega_o: vec![DVector::from_vec(vec![1.0, 2.0])],
            omega_obar: vec![3.0],
            u: vec![DVector::from_vec(vec![4.0, 5.0, 6.0])],
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf, 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first, "k,omega_o_1,omega_o_2,omega_obar,u_1,u_2,u_3");
    }
}
