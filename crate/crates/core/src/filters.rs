//! Kalman filters for the ensemble clock.
//!
//! * [`StandardKf`] runs the textbook recursion on the full `2N` state. Its
//!   covariance grows without bound along the synchronized directions while
//!   its gain converges.
//! * [`DeterminateKf`] runs the same filter in a decomposed basis and never
//!   forms the unobservable–unobservable covariance block, so every quantity it
//!   propagates converges.
//! * [`StationaryKf`] is the determinate filter with the constant gains from
//!   [`solve_stationary`].
//!
//! All filters are driven with the physical input `u[k-1]` and measurement `y[k]`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::decomp::{generalized_inverse, Decomposition, EnsembleWeight};
use crate::error::{ensure_len, Error, Result};
use crate::linalg::{block_diag2, kron, lu_solve, spd_right_solve, spectral_radius, symmetrize, unvec, vec};
use crate::models::EnsembleModel;

/// Full-state filter. Call [`StandardKf::update`] with `y[0]` first, then
/// [`StandardKf::step`] for every later step.
#[derive(Debug, Clone)]
pub struct StandardKf {
    pub xhat_minus: DVector<f64>,
    pub xhat: DVector<f64>,
    pub p_minus: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

/// `(A ⊗ I_N) M` for `M` with `2N` rows.
fn a_left(m: &mut DMatrix<f64>, n: usize, tau: f64) {
    for j in 0..m.ncols() {
        for i in 0..n {
            m[(i, j)] += tau * m[(n + i, j)];
        }
    }
}

/// `M (A ⊗ I_N)ᵀ` for `M` with `2N` columns.
fn a_right_t(m: &mut DMatrix<f64>, n: usize, tau: f64) {
    for i in 0..n {
        let freq = m.column(n + i).into_owned();
        m.column_mut(i).axpy(tau, &freq, 1.0);
    }
}

impl StandardKf {
    /// Prior at step 0 with `P⁻[0] = 𝐐`.
    pub fn new(model: &EnsembleModel) -> Self {
        Self::with_prior(DVector::zeros(model.state_dim()), model.big_q.clone(), model)
    }

    pub fn with_prior(xhat_minus: DVector<f64>, p_minus: DMatrix<f64>, model: &EnsembleModel) -> Self {
        Self {
            xhat: xhat_minus.clone(),
            p: p_minus.clone(),
            h: DMatrix::zeros(model.state_dim(), model.meas_dim()),
            xhat_minus,
            p_minus,
        }
    }

    pub fn predict(&mut self, model: &EnsembleModel, u_prev: &DVector<f64>) -> Result<()> {
        ensure_len("input", u_prev.len(), model.n)?;
        let n = model.n;
        let tau = model.tau;
        let mut x = self.xhat.clone();
        for i in 0..n {
            x[i] += tau * x[n + i] + tau * u_prev[i];
            x[n + i] += u_prev[i];
        }
        self.xhat_minus = x;
        let mut p = self.p.clone();
        a_left(&mut p, n, tau);
        a_right_t(&mut p, n, tau);
        p += &model.big_q;
        symmetrize(&mut p);
        self.p_minus = p;
        Ok(())
    }

    pub fn update(&mut self, model: &EnsembleModel, y: &DVector<f64>) -> Result<()> {
        ensure_len("measurement", y.len(), model.meas_dim())?;
        let n = model.n;
        let v = &model.meas.v;
        // P⁻Cᵀ with C = [V, 0]
        let pct = self.p_minus.columns(0, n) * v.transpose();
        let s = v * pct.rows(0, n) + &model.meas.r;
        let h = spd_right_solve(&pct, &s)?;
        let mut p = &self.p_minus - &h * pct.transpose();
        symmetrize(&mut p);
        let innov = y - v * self.xhat_minus.rows(0, n);
        self.xhat = &self.xhat_minus + &h * innov;
        self.p = p;
        self.h = h;
        Ok(())
    }

    pub fn step(&mut self, model: &EnsembleModel, u_prev: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
        self.predict(model, u_prev)?;
        self.update(model, y)
    }
}

/// One step of the full-state recursion as a pure state transition.
pub fn standard_kf_step(
    model: &EnsembleModel,
    state: &StandardKf,
    u_prev: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<StandardKf> {
    let mut next = state.clone();
    next.step(model, u_prev, y)?;
    Ok(next)
}

/// Decomposed filter without the diverging covariance block.
#[derive(Debug, Clone)]
pub struct DeterminateKf {
    pub xi_o_minus: DVector<f64>,
    pub xi_obar_minus: DVector<f64>,
    pub xi_o: DVector<f64>,
    pub xi_obar: DVector<f64>,
    pub p_oo_minus: DMatrix<f64>,
    pub p_bo_minus: DMatrix<f64>,
    pub p_oo: DMatrix<f64>,
    pub p_bo: DMatrix<f64>,
    pub h_o: DMatrix<f64>,
    pub h_bo: DMatrix<f64>,
}

impl DeterminateKf {
    /// Prior at step 0 with `P_oo⁻[0] = Q_o` and `P_ōo⁻[0] = Q_ōo`, matching `P⁻[0] = 𝐐`.
    pub fn new(d: &Decomposition) -> Self {
        let k = d.obs_dim();
        Self::with_prior(DVector::zeros(k), DVector::zeros(2), d.qo.clone(), d.qbo.clone())
    }

    pub fn with_prior(
        xi_o_minus: DVector<f64>,
        xi_obar_minus: DVector<f64>,
        p_oo_minus: DMatrix<f64>,
        p_bo_minus: DMatrix<f64>,
    ) -> Self {
        let k = xi_o_minus.len();
        Self {
            xi_o: xi_o_minus.clone(),
            xi_obar: xi_obar_minus.clone(),
            p_oo: p_oo_minus.clone(),
            p_bo: p_bo_minus.clone(),
            h_o: DMatrix::zeros(k, k / 2),
            h_bo: DMatrix::zeros(2, k / 2),
            xi_o_minus,
            xi_obar_minus,
            p_oo_minus,
            p_bo_minus,
        }
    }

    pub fn predict(&mut self, d: &Decomposition, u_prev: &DVector<f64>) -> Result<()> {
        ensure_len("input", u_prev.len(), d.n)?;
        self.xi_o_minus = &d.ao * &self.xi_o + &d.b_obs * u_prev;
        self.xi_obar_minus = &d.coupling * &self.xi_o + &d.a * &self.xi_obar + &d.b_unobs * u_prev;
        let mut p_oo = &d.ao * &self.p_oo * d.ao.transpose() + &d.qo;
        symmetrize(&mut p_oo);
        self.p_oo_minus = p_oo;
        self.p_bo_minus = (&d.coupling * &self.p_oo + &d.a * &self.p_bo) * d.ao.transpose() + &d.qbo;
        Ok(())
    }

    pub fn update(&mut self, d: &Decomposition, r: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
        ensure_len("measurement", y.len(), d.n - 1)?;
        let pct = &self.p_oo_minus * d.co.transpose();
        let s = &d.co * &pct + r;
        self.h_o = spd_right_solve(&pct, &s)?;
        self.h_bo = spd_right_solve(&(&self.p_bo_minus * d.co.transpose()), &s)?;
        let k = d.obs_dim();
        let ikc = DMatrix::identity(k, k) - &self.h_o * &d.co;
        let mut p_oo = &ikc * &self.p_oo_minus;
        symmetrize(&mut p_oo);
        self.p_oo = p_oo;
        self.p_bo = &self.p_bo_minus * ikc.transpose();
        let innov = y - &d.co * &self.xi_o_minus;
        self.xi_o = &self.xi_o_minus + &self.h_o * &innov;
        self.xi_obar = &self.xi_obar_minus + &self.h_bo * &innov;
        Ok(())
    }

    pub fn step(
        &mut self,
        d: &Decomposition,
        r: &DMatrix<f64>,
        u_prev: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<()> {
        self.predict(d, u_prev)?;
        self.update(d, r, y)
    }

    /// Posterior estimate in the original coordinates.
    pub fn state_estimate(&self, d: &Decomposition) -> DVector<f64> {
        d.reconstruct(&self.xi_o, &self.xi_obar)
    }
}

pub fn determinate_kf_step(
    d: &Decomposition,
    r: &DMatrix<f64>,
    state: &DeterminateKf,
    u_prev: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<DeterminateKf> {
    let mut next = state.clone();
    next.step(d, r, u_prev, y)?;
    Ok(next)
}

/// Fixed-point covariances and gains of the determinate filter.
#[derive(Debug, Clone, Serialize)]
pub struct StationaryGains {
    #[serde(rename = "P_oo_star", serialize_with = "rows")]
    pub p_oo: DMatrix<f64>,
    #[serde(rename = "P_bo_star", serialize_with = "rows")]
    pub p_bo: DMatrix<f64>,
    #[serde(rename = "H_o_star", serialize_with = "rows")]
    pub h_o: DMatrix<f64>,
    #[serde(rename = "H_bo_star", serialize_with = "rows")]
    pub h_bo: DMatrix<f64>,
    /// Relative residuals of the observable and cross fixed-point equations.
    pub residuals: [f64; 2],
    pub iterations: usize,
}

fn rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().cloned().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

impl StationaryGains {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `A_o (I − H_o C_o)`, the closed-loop matrix of the observable estimator.
    pub fn estimator_dynamics(&self, d: &Decomposition) -> DMatrix<f64> {
        let k = d.obs_dim();
        &d.ao * (DMatrix::identity(k, k) - &self.h_o * &d.co)
    }
}

pub const STATIONARY_TOL: f64 = 1e-13;
pub const STATIONARY_MAX_ITER: usize = 1_000_000;

/// `S(P) = I − Cᵀ(C P Cᵀ + R)⁻¹ C P`.
fn s_matrix(d: &Decomposition, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = d.obs_dim();
    let cp = &d.co * p;
    let s = &cp * d.co.transpose() + r;
    let gain_t = spd_right_solve(&cp.transpose(), &s)?.transpose();
    Ok(DMatrix::identity(k, k) - d.co.transpose() * gain_t)
}

/// Iterates the observable Riccati recursion to its fixed point, then solves the
/// linear equation for the cross covariance by vectorization.
pub fn solve_stationary(d: &Decomposition, r: &DMatrix<f64>) -> Result<StationaryGains> {
    let mut p = d.qo.clone();
    let mut iterations = 0;
    let mut last = f64::INFINITY;
    loop {
        if iterations >= STATIONARY_MAX_ITER {
            return Err(Error::Convergence {
                iterations,
                residual: last,
            });
        }
        let s = s_matrix(d, r, &p)?;
        let mut next = &d.qo + &d.ao * &p * &s * d.ao.transpose();
        symmetrize(&mut next);
        iterations += 1;
        last = (&next - &p).norm() / next.norm();
        p = next;
        if last < STATIONARY_TOL {
            break;
        }
    }
    // The fixed-point recursion contracts slowly near its limit, so a small
    // increment does not mean a small error. A few Newton steps (Joseph-form
    // Lyapunov solves with the current gain) remove the remaining error.
    p = newton_polish(d, r, p)?;
    let pct = &p * d.co.transpose();
    let innov_cov = &d.co * &pct + r;
    let h_o = spd_right_solve(&pct, &innov_cov)?;
    let k = d.obs_dim();
    let closed = &d.ao * (DMatrix::identity(k, k) - &h_o * &d.co);
    let x = &d.qbo + &d.coupling * &p * closed.transpose();
    let system = DMatrix::identity(2 * k, 2 * k) - kron(&closed, &d.a);
    let p_bo = unvec(
        &lu_solve(&system, &DMatrix::from_column_slice(2 * k, 1, vec(&x).as_slice()))?
            .column(0)
            .into_owned(),
        2,
        k,
    );
    let h_bo = spd_right_solve(&(&p_bo * d.co.transpose()), &innov_cov)?;

    let s = s_matrix(d, r, &p)?;
    let res_oo = (&p - (&d.qo + &d.ao * &p * &s * d.ao.transpose())).norm() / p.norm();
    let rhs_bo = &d.qbo + (&d.a * &p_bo + &d.coupling * &p) * &s * d.ao.transpose();
    let scale = p_bo.norm().max(d.qbo.norm()).max(f64::MIN_POSITIVE);
    let res_bo = (&p_bo - rhs_bo).norm() / scale;
    Ok(StationaryGains {
        p_oo: p,
        p_bo,
        h_o,
        h_bo,
        residuals: [res_oo, res_bo],
        iterations,
    })
}

fn newton_polish(d: &Decomposition, r: &DMatrix<f64>, mut p: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = d.obs_dim();
    for _ in 0..NEWTON_STEPS {
        let pct = &p * d.co.transpose();
        let h = spd_right_solve(&pct, &(&d.co * &pct + r))?;
        let closed = &d.ao * (DMatrix::identity(k, k) - &h * &d.co);
        let ah = &d.ao * &h;
        let rhs = &d.qo + &ah * r * ah.transpose();
        let next = stein_doubling(&closed, rhs)?;
        let change = (&next - &p).norm() / next.norm();
        p = next;
        if change < 1e-15 {
            break;
        }
    }
    Ok(p)
}

const NEWTON_STEPS: usize = 4;

/// Solves `X = L X Lᵀ + W` for stable `L` by Smith doubling.
fn stein_doubling(l: &DMatrix<f64>, w: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut x = w;
    let mut l = l.clone();
    for _ in 0..64 {
        let add = &l * &x * l.transpose();
        x += &add;
        symmetrize(&mut x);
        if add.norm() <= 1e-17 * x.norm() {
            return Ok(x);
        }
        l = &l * &l;
    }
    Err(Error::Numerical("closed-loop estimator is not stable".into()))
}

/// `ρ(A_o (I − H_o C_o))`.
pub fn estimator_spectral_radius(d: &Decomposition, g: &StationaryGains) -> f64 {
    spectral_radius(&g.estimator_dynamics(d))
}

/// Unobservable gain in the basis of `q` from the observable gain alone:
/// `H_ō = (I₂ ⊗ qᵀ V∞⁺) H_o`, with `V∞⁺` the generalized inverse for the
/// long-term weight `q∞`.
pub fn unobservable_gain_from_long_term(
    d: &Decomposition,
    q_inf: &EnsembleWeight,
    h_o: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let q = d.weight().ok_or_else(|| {
        Error::Unsupported("the long-term shortcut needs an explicit ensemble mean basis".into())
    })?;
    let vinf = generalized_inverse(&d.v, q_inf)?;
    let row = q.as_vector().transpose() * vinf;
    Ok(block_diag2(&row) * h_o)
}

/// Cross covariance in the basis of `q` from `P_oo*`:
/// `(I₂ ⊗ qᵀV∞⁺) P_oo* + [[0, −q∞ᵀΣ₁Vᵀ], [0, 0]]`.
pub fn cross_covariance_from_long_term(
    d: &Decomposition,
    model: &EnsembleModel,
    q_inf: &EnsembleWeight,
    p_oo: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut out = unobservable_gain_from_long_term(d, q_inf, p_oo)?;
    let corner = long_term_cross_covariance(model, q_inf);
    out += corner;
    Ok(out)
}

/// `[[0, −q∞ᵀΣ₁Vᵀ], [0, 0]]`, the stationary cross covariance in the `q∞` basis.
pub fn long_term_cross_covariance(model: &EnsembleModel, q_inf: &EnsembleWeight) -> DMatrix<f64> {
    let m = model.n - 1;
    let mut out = DMatrix::zeros(2, 2 * m);
    let block = -(q_inf.as_vector().transpose() * &model.sigma1 * model.meas.v.transpose());
    out.view_mut((0, m), (1, m)).copy_from(&block);
    out
}

/// Determinate filter with constant gains.
#[derive(Debug, Clone)]
pub struct StationaryKf {
    pub xi_o_minus: DVector<f64>,
    pub xi_obar_minus: DVector<f64>,
    pub xi_o: DVector<f64>,
    pub xi_obar: DVector<f64>,
}

impl StationaryKf {
    pub fn new(d: &Decomposition) -> Self {
        let k = d.obs_dim();
        Self {
            xi_o_minus: DVector::zeros(k),
            xi_obar_minus: DVector::zeros(2),
            xi_o: DVector::zeros(k),
            xi_obar: DVector::zeros(2),
        }
    }

    pub fn predict(&mut self, d: &Decomposition, u_prev: &DVector<f64>) -> Result<()> {
        ensure_len("input", u_prev.len(), d.n)?;
        self.xi_o_minus = &d.ao * &self.xi_o + &d.b_obs * u_prev;
        self.xi_obar_minus = &d.coupling * &self.xi_o + &d.a * &self.xi_obar + &d.b_unobs * u_prev;
        Ok(())
    }

    pub fn update(&mut self, d: &Decomposition, g: &StationaryGains, y: &DVector<f64>) -> Result<()> {
        ensure_len("measurement", y.len(), d.n - 1)?;
        let innov = y - &d.co * &self.xi_o_minus;
        self.xi_o = &self.xi_o_minus + &g.h_o * &innov;
        self.xi_obar = &self.xi_obar_minus + &g.h_bo * &innov;
        Ok(())
    }

    pub fn step(
        &mut self,
        d: &Decomposition,
        g: &StationaryGains,
        u_prev: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<()> {
        self.predict(d, u_prev)?;
        self.update(d, g, y)
    }

    pub fn state_estimate(&self, d: &Decomposition) -> DVector<f64> {
        d.reconstruct(&self.xi_o, &self.xi_obar)
    }
}

pub fn stationary_kf_step(
    d: &Decomposition,
    g: &StationaryGains,
    state: &StationaryKf,
    u_prev: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<StationaryKf> {
    let mut next = state.clone();
    next.step(d, g, u_prev, y)?;
    Ok(next)
}
