//! Observable canonical decompositions of the ensemble model.
//!
//! A decomposition splits the ensemble state into an observable part
//! `ξ_o = (I₂⊗V) x` (relative clock states) and an unobservable part
//! `ξ_ō = Ū x` (a common phase/frequency pair). With the explicit ensemble
//! mean basis `Ū = I₂⊗qᵀ` the unobservable part is the `q`-weighted average of
//! the clocks and the input splits as `u = V⁺ω_o + 𝟙ω_ō`.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_len, invalid, Error, Result};
use crate::linalg::{block_diag2, kron, lu_solve, ones, rank, sync_basis};
use crate::models::EnsembleModel;

/// Ensemble-mean weights normalized to `qᵀ𝟙 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleWeight(DVector<f64>);

impl EnsembleWeight {
    pub fn new(q: DVector<f64>) -> Result<Self> {
        if q.is_empty() || q.iter().any(|v| !v.is_finite()) {
            return invalid("ensemble weight must be a non-empty finite vector");
        }
        let sum = q.sum();
        let scale = q.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        if (sum - 1.0).abs() > 1e-10 * scale {
            return invalid(format!("ensemble weight must satisfy qᵀ1 = 1, got {sum}"));
        }
        Ok(Self(q))
    }

    /// Rescales arbitrary weights so that they sum to one.
    pub fn normalized(q: DVector<f64>) -> Result<Self> {
        let s = q.sum();
        if s == 0.0 || !s.is_finite() {
            return invalid("weights sum to zero and cannot be normalized");
        }
        Self::new(q / s)
    }

    pub fn uniform(n: usize) -> Self {
        Self(DVector::from_element(n, 1.0 / n as f64))
    }

    /// All weight on clock `i` (0-based): steering to a reference clock.
    pub fn unit(n: usize, i: usize) -> Self {
        let mut q = DVector::zeros(n);
        q[i] = 1.0;
        Self(q)
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Basis parameter of the decomposition.
#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    /// `W̄ = I₂ ⊗ qᵀ`.
    Eem(EnsembleWeight),
    /// Arbitrary full-row-rank `2 × 2N` matrix `W̄`.
    General(DMatrix<f64>),
}

fn is_star(v: &DMatrix<f64>) -> bool {
    let n = v.ncols();
    v.nrows() + 1 == n
        && (0..n - 1).all(|i| {
            (0..n).all(|j| {
                let expected = if j == i {
                    1.0
                } else if j == n - 1 {
                    -1.0
                } else {
                    0.0
                };
                v[(i, j)] == expected
            })
        })
}

/// Closed form for the star pair matrix: `[I; 0] − 𝟙 𝟙ᵀ diag(q₁ … q_{N-1})`.
pub fn star_generalized_inverse(q: &EnsembleWeight) -> DMatrix<f64> {
    let n = q.len();
    let q = q.as_vector();
    DMatrix::from_fn(n, n - 1, |i, j| if i == j { 1.0 } else { 0.0 } - q[j])
}

/// `V⁺` with `V V⁺ = I` and `qᵀ V⁺ = 0`, from the stacked system `[V; qᵀ] V⁺ = [I; 0]`.
pub fn generalized_inverse(v: &DMatrix<f64>, q: &EnsembleWeight) -> Result<DMatrix<f64>> {
    let n = v.ncols();
    if v.nrows() + 1 != n || q.len() != n {
        return invalid(format!(
            "generalized inverse: V is {}x{} and q has {} entries",
            v.nrows(),
            n,
            q.len()
        ));
    }
    let mut stacked = DMatrix::zeros(n, n);
    stacked.rows_mut(0, n - 1).copy_from(v);
    stacked.row_mut(n - 1).copy_from(&q.as_vector().transpose());
    if rank(&stacked) < n {
        return invalid("[V; qᵀ] is singular: q is orthogonal to 𝟙 relative to V");
    }
    let mut rhs = DMatrix::zeros(n, n - 1);
    rhs.rows_mut(0, n - 1).fill_with_identity();
    let solved = lu_solve(&stacked, &rhs)?;
    if is_star(v) {
        let closed = star_generalized_inverse(q);
        let dev = (&closed - &solved).amax();
        if dev > 1e-9 * closed.amax().max(1.0) {
            return Err(Error::Numerical(format!(
                "generalized inverse closed form and solve disagree by {dev:e}"
            )));
        }
        return Ok(closed);
    }
    Ok(solved)
}

/// A complete observable canonical decomposition.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub basis: Basis,
    pub n: usize,
    pub tau: f64,
    /// `V⁺` (explicit ensemble mean bases only).
    pub vplus: Option<DMatrix<f64>>,
    /// `T = [I₂⊗V; Ū]`.
    pub t: DMatrix<f64>,
    /// `T⁻¹ = [U, I₂⊗𝟙]`.
    pub tinv: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub ubar: DMatrix<f64>,
    pub ao: DMatrix<f64>,
    pub bo: DMatrix<f64>,
    pub co: DMatrix<f64>,
    /// Single-clock `A`, the unobservable block of the transformed dynamics.
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// `Ū A U`.
    pub coupling: DMatrix<f64>,
    /// `(I₂⊗V) Q (I₂⊗V)ᵀ`.
    pub qo: DMatrix<f64>,
    /// `Ū Q (I₂⊗V)ᵀ`.
    pub qbo: DMatrix<f64>,
    /// `(I₂⊗V) B`: input map of the observable part.
    pub b_obs: DMatrix<f64>,
    /// `Ū B`: input map of the unobservable part.
    pub b_unobs: DMatrix<f64>,
    /// `I₂⊗V`.
    pub rel: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

pub fn decompose(model: &EnsembleModel, basis: Basis) -> Result<Decomposition> {
    let n = model.n;
    let v = model.meas.v.clone();
    let rel = block_diag2(&v);
    let sync = sync_basis(n);
    let (ubar, u, vplus) = match &basis {
        Basis::Eem(q) => {
            ensure_len("ensemble weight", q.len(), n)?;
            let vp = generalized_inverse(&v, q)?;
            let ubar = block_diag2(&q.as_vector().transpose());
            (ubar, block_diag2(&vp), Some(vp))
        }
        Basis::General(wbar) => {
            if wbar.shape() != (2, 2 * n) {
                return invalid(format!(
                    "basis matrix W̄ must be 2x{}, got {}x{}",
                    2 * n,
                    wbar.nrows(),
                    wbar.ncols()
                ));
            }
            if rank(wbar) != 2 {
                return invalid("basis matrix W̄ must have full row rank 2");
            }
            let m = wbar * &sync;
            if rank(&m) != 2 {
                return invalid("W̄(I₂⊗𝟙) must be nonsingular: ker W̄ meets the synchronized subspace");
            }
            let ubar = lu_solve(&m, wbar)?;
            let mut t = DMatrix::zeros(2 * n, 2 * n);
            t.rows_mut(0, 2 * (n - 1)).copy_from(&rel);
            t.rows_mut(2 * (n - 1), 2).copy_from(&ubar);
            if rank(&t) != 2 * n {
                return invalid("ker W̄ and im(I₂⊗𝟙) do not span the state space");
            }
            let tinv = lu_solve(&t, &DMatrix::identity(2 * n, 2 * n))?;
            let u = tinv.columns(0, 2 * (n - 1)).into_owned();
            (ubar, u, None)
        }
    };
    let mut t = DMatrix::zeros(2 * n, 2 * n);
    t.rows_mut(0, 2 * (n - 1)).copy_from(&rel);
    t.rows_mut(2 * (n - 1), 2).copy_from(&ubar);
    let mut tinv = DMatrix::zeros(2 * n, 2 * n);
    tinv.columns_mut(0, 2 * (n - 1)).copy_from(&u);
    tinv.columns_mut(2 * (n - 1), 2).copy_from(&sync);

    let a = model.a2();
    let b = model.b2();
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let eye = DMatrix::identity(n - 1, n - 1);
    let coupling = if vplus.is_some() {
        DMatrix::zeros(2, 2 * (n - 1))
    } else {
        &ubar * &model.big_a * &u
    };
    let bo = kron(&b, &eye);
    Ok(Decomposition {
        n,
        tau: model.tau,
        vplus,
        ao: kron(&a, &eye),
        co: kron(&c, &eye),
        b_obs: &bo * &v,
        b_unobs: &ubar * &model.big_b,
        bo,
        qo: &rel * &model.big_q * rel.transpose(),
        qbo: &ubar * &model.big_q * rel.transpose(),
        coupling,
        a,
        b,
        t,
        tinv,
        u,
        ubar,
        rel,
        v,
        basis,
    })
}

impl Decomposition {
    pub fn weight(&self) -> Option<&EnsembleWeight> {
        match &self.basis {
            Basis::Eem(q) => Some(q),
            Basis::General(_) => None,
        }
    }

    pub fn obs_dim(&self) -> usize {
        2 * (self.n - 1)
    }

    /// `T A T⁻¹` formed densely, for structural checks.
    pub fn transformed_dynamics(&self, model: &EnsembleModel) -> DMatrix<f64> {
        &self.t * &model.big_a * &self.tinv
    }

    pub fn reconstruct(&self, xi_o: &DVector<f64>, xi_obar: &DVector<f64>) -> DVector<f64> {
        &self.u * xi_o + sync_basis(self.n) * xi_obar
    }
}

pub fn project_state(x: &DVector<f64>, d: &Decomposition) -> Result<(DVector<f64>, DVector<f64>)> {
    ensure_len("state", x.len(), 2 * d.n)?;
    Ok((&d.rel * x, &d.ubar * x))
}

/// `u = V⁺ω_o + 𝟙ω_ō`.
pub fn expand_input(omega_o: &DVector<f64>, omega_obar: f64, d: &Decomposition) -> Result<DVector<f64>> {
    let vplus = d.vplus.as_ref().ok_or_else(|| {
        Error::Unsupported("input expansion requires an explicit ensemble mean basis".into())
    })?;
    ensure_len("synchronization input", omega_o.len(), d.n - 1)?;
    Ok(vplus * omega_o + ones(d.n) * omega_obar)
}

/// Inverse of [`expand_input`]: `(V u, qᵀ u)`.
pub fn split_input(u: &DVector<f64>, d: &Decomposition) -> Result<(DVector<f64>, f64)> {
    let q = d.weight().ok_or_else(|| {
        Error::Unsupported("input splitting requires an explicit ensemble mean basis".into())
    })?;
    ensure_len("input", u.len(), d.n)?;
    Ok((&d.v * u, q.as_vector().dot(u)))
}
