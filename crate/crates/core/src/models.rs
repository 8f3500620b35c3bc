//! Second-order atomic clock models and their N-clock ensemble.
//!
//! Every clock carries a phase and a frequency state driven by white frequency
//! noise and random-walk frequency noise. Ensemble states are ordered
//! phase-block first: `x = [x₁₁ … x₁N, x₂₁ … x₂N]`, so the stacked system
//! matrices are the Kronecker products `A ⊗ I_N`, `B ⊗ I_N` and `C ⊗ V`.

use nalgebra::{DMatrix, Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{block_diag2, is_spd, kron, ones, rank};

/// Per-clock noise intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// White frequency noise standard deviation.
    pub sigma1: f64,
    /// Random-walk frequency noise standard deviation.
    pub sigma2: f64,
}

impl NoiseParams {
    pub fn new(sigma1: f64, sigma2: f64) -> Result<Self> {
        if !(sigma1.is_finite() && sigma2.is_finite()) || sigma1 < 0.0 || sigma2 < 0.0 {
            return invalid(format!(
                "noise standard deviations must be finite and non-negative (sigma1={sigma1}, sigma2={sigma2})"
            ));
        }
        if sigma1 == 0.0 && sigma2 == 0.0 {
            return invalid("noise standard deviations must not both be zero");
        }
        Ok(Self { sigma1, sigma2 })
    }
}

/// Exact zero-order-hold discretization of one clock.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteClockModel {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub c: RowVector2<f64>,
    pub q: Matrix2<f64>,
    pub tau: f64,
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return invalid(format!("sampling interval must be positive, got {tau}"));
    }
    Ok(())
}

/// `A = [[1, τ], [0, 1]]`.
pub fn transition(tau: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, tau, 0.0, 1.0)
}

/// `B = [τ, 1]ᵀ`.
pub fn input_vector(tau: f64) -> Vector2<f64> {
    Vector2::new(tau, 1.0)
}

pub fn output_row() -> RowVector2<f64> {
    RowVector2::new(1.0, 0.0)
}

/// Process covariance of one sampling interval for variances `s1 = σ₁²`, `s2 = σ₂²`.
pub(crate) fn process_covariance(s1: f64, s2: f64, tau: f64) -> Matrix2<f64> {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    Matrix2::new(
        tau * s1 + t3 / 3.0 * s2,
        t2 / 2.0 * s2,
        t2 / 2.0 * s2,
        tau * s2,
    )
}

pub fn discretize(noise: NoiseParams, tau: f64) -> Result<DiscreteClockModel> {
    check_tau(tau)?;
    Ok(DiscreteClockModel {
        a: transition(tau),
        b: input_vector(tau),
        c: output_row(),
        q: process_covariance(noise.sigma1.powi(2), noise.sigma2.powi(2), tau),
        tau,
    })
}

/// Which clock pairs are compared and how noisy each comparison is.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementStructure {
    /// `(N-1) × N` pair matrix with zero row sums.
    pub v: DMatrix<f64>,
    /// `(N-1) × (N-1)` measurement noise covariance.
    pub r: DMatrix<f64>,
}

impl MeasurementStructure {
    pub fn new(v: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n = v.ncols();
        if n < 2 || v.nrows() != n - 1 {
            return invalid(format!(
                "pair matrix V must be (N-1)xN with N >= 2, got {}x{}",
                v.nrows(),
                v.ncols()
            ));
        }
        if rank(&v) != n - 1 {
            return invalid("pair matrix V must have full row rank N-1");
        }
        let row_sums = &v * ones(n);
        let scale = v.amax();
        if row_sums.amax() > 1e-12 * scale {
            return invalid("pair matrix V must satisfy V·1 = 0 (every row sums to zero)");
        }
        if r.shape() != (n - 1, n - 1) {
            return invalid(format!(
                "measurement covariance R must be {}x{}, got {}x{}",
                n - 1,
                n - 1,
                r.nrows(),
                r.ncols()
            ));
        }
        if !is_spd(&r) {
            return invalid("measurement covariance R must be symmetric positive definite");
        }
        Ok(Self { v, r })
    }

    /// Star topology against clock N with diagonal covariance from per-pair standard deviations.
    pub fn star(std_devs: &[f64]) -> Result<Self> {
        let v = star_measurement(std_devs.len() + 1)?;
        Self::new(v, diagonal_covariance(std_devs)?)
    }

    pub fn clocks(&self) -> usize {
        self.v.ncols()
    }
}

/// `V = [I_{N-1} | -𝟙_{N-1}]`: every clock compared with clock N.
pub fn star_measurement(n: usize) -> Result<DMatrix<f64>> {
    if n < 2 {
        return invalid(format!("an ensemble needs at least two clocks, got {n}"));
    }
    let mut v = DMatrix::zeros(n - 1, n);
    for i in 0..n - 1 {
        v[(i, i)] = 1.0;
        v[(i, n - 1)] = -1.0;
    }
    Ok(v)
}

pub fn diagonal_covariance(std_devs: &[f64]) -> Result<DMatrix<f64>> {
    if let Some(s) = std_devs.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return invalid(format!("measurement standard deviations must be positive, got {s}"));
    }
    Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        std_devs.len(),
        std_devs.iter().map(|s| s * s),
    )))
}

/// Discretized N-clock ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub n: usize,
    pub tau: f64,
    pub noise: Vec<NoiseParams>,
    /// `diag(σ₁ᵢ²)`.
    pub sigma1: DMatrix<f64>,
    /// `diag(σ₂ᵢ²)`.
    pub sigma2: DMatrix<f64>,
    pub big_q: DMatrix<f64>,
    pub meas: MeasurementStructure,
    pub big_a: DMatrix<f64>,
    pub big_b: DMatrix<f64>,
    pub big_c: DMatrix<f64>,
    /// `C ⊗ I_N`, maps states to clock reading deviations.
    pub big_h: DMatrix<f64>,
}

/// Block process covariance `[[τΣ₁ + τ³/3 Σ₂, τ²/2 Σ₂], [τ²/2 Σ₂, τΣ₂]]`.
pub fn ensemble_covariance(sigma1: &DMatrix<f64>, sigma2: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let n = sigma1.nrows();
    let mut q = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let blk = process_covariance(sigma1[(i, j)], sigma2[(i, j)], tau);
            q[(i, j)] = blk[(0, 0)];
            q[(i, n + j)] = blk[(0, 1)];
            q[(n + i, j)] = blk[(1, 0)];
            q[(n + i, n + j)] = blk[(1, 1)];
        }
    }
    q
}

pub fn build_ensemble(
    params: &[NoiseParams],
    v: DMatrix<f64>,
    r: DMatrix<f64>,
    tau: f64,
) -> Result<EnsembleModel> {
    check_tau(tau)?;
    let n = params.len();
    if n < 2 {
        return invalid(format!("an ensemble needs at least two clocks, got {n}"));
    }
    if v.ncols() != n {
        return invalid(format!(
            "pair matrix V has {} columns but {} clocks were given",
            v.ncols(),
            n
        ));
    }
    let meas = MeasurementStructure::new(v, r)?;
    for p in params {
        NoiseParams::new(p.sigma1, p.sigma2)?;
    }
    let sigma1 = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        params.iter().map(|p| p.sigma1 * p.sigma1),
    ));
    let sigma2 = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        params.iter().map(|p| p.sigma2 * p.sigma2),
    ));
    let a = transition(tau);
    let b = input_vector(tau);
    let a = DMatrix::from_row_slice(2, 2, &[a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]]);
    let b = DMatrix::from_column_slice(2, 1, &[b[0], b[1]]);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let eye = DMatrix::identity(n, n);
    Ok(EnsembleModel {
        n,
        tau,
        noise: params.to_vec(),
        big_q: ensemble_covariance(&sigma1, &sigma2, tau),
        big_a: kron(&a, &eye),
        big_b: kron(&b, &eye),
        big_c: kron(&c, &meas.v),
        big_h: kron(&c, &eye),
        sigma1,
        sigma2,
        meas,
    })
}

impl EnsembleModel {
    pub fn state_dim(&self) -> usize {
        2 * self.n
    }

    pub fn meas_dim(&self) -> usize {
        self.n - 1
    }

    /// Single-clock `A` as a dynamic 2x2 matrix.
    pub fn a2(&self) -> DMatrix<f64> {
        let a = transition(self.tau);
        DMatrix::from_row_slice(2, 2, &[a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]])
    }

    pub fn b2(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[self.tau, 1.0])
    }

    /// `I₂ ⊗ V`.
    pub fn relative_map(&self) -> DMatrix<f64> {
        block_diag2(&self.meas.v)
    }

    /// Same model with a different process covariance used by a filter (noise model mismatch).
    pub fn with_noise(&self, params: &[NoiseParams]) -> Result<EnsembleModel> {
        build_ensemble(params, self.meas.v.clone(), self.meas.r.clone(), self.tau)
    }
}

/// Reference ten-clock ensemble used throughout the examples and bundled scenarios.
pub mod reference {
    use super::*;

    /// White frequency noise standard deviations, in units of 1e-9.
    pub const SIGMA1_E9: [f64; 10] = [
        0.1700, 0.0886, 0.1221, 0.1273, 0.2185, 0.1063, 0.1805, 0.2168, 0.0930, 0.1801,
    ];
    /// Random-walk frequency noise standard deviations, in units of 1e-12.
    pub const SIGMA2_E12: [f64; 10] = [
        0.1507, 0.0532, 0.0167, 0.0771, 0.2940, 0.0492, 0.0407, 0.0829, 0.0520, 0.0566,
    ];
    /// Measurement noise of pairs (i, 10), in units of 1e-14.
    pub const MEAS_E14: [f64; 9] = [
        0.4353, 0.0759, 0.4720, 0.1166, 0.4148, 0.0885, 0.0998, 0.2453, 0.0373,
    ];

    pub fn noise() -> Vec<NoiseParams> {
        SIGMA1_E9
            .iter()
            .zip(SIGMA2_E12.iter())
            .map(|(s1, s2)| NoiseParams {
                sigma1: s1 * 1e-9,
                sigma2: s2 * 1e-12,
            })
            .collect()
    }

    pub fn measurement_std() -> Vec<f64> {
        MEAS_E14.iter().map(|s| s * 1e-14).collect()
    }

    /// Ten clocks, star measurement against clock 10.
    pub fn ensemble(tau: f64) -> Result<EnsembleModel> {
        subset(&(0..10).collect::<Vec<_>>(), tau)
    }

    /// Sub-ensemble of the listed clocks (0-based). The last listed clock is the
    /// star centre; pair noise is taken from the row of the other clock when
    /// available and from the smallest tabulated value otherwise.
    pub fn subset(clocks: &[usize], tau: f64) -> Result<EnsembleModel> {
        if clocks.iter().any(|&c| c >= 10) {
            return invalid("reference ensemble has clocks 0..9");
        }
        let all = noise();
        let params: Vec<_> = clocks.iter().map(|&c| all[c]).collect();
        let meas = measurement_std();
        let fallback = meas.iter().cloned().fold(f64::INFINITY, f64::min);
        let std: Vec<f64> = clocks[..clocks.len().saturating_sub(1)]
            .iter()
            .map(|&c| if c < 9 { meas[c] } else { fallback })
            .collect();
        let v = star_measurement(clocks.len())?;
        build_ensemble(&params, v, diagonal_covariance(&std)?, tau)
    }
}
