//! Allan variance: closed forms for a single clock and for a weighted ensemble
//! mean, the overlapping statistical estimator, and optimal ensemble weights.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::decomp::EnsembleWeight;
use crate::error::{ensure_len, invalid, Result};
use crate::models::{check_tau, NoiseParams};
use crate::simkit::sci;

/// `σ₁²/τ + τσ₂²/3`.
pub fn analytical_allan_clock(noise: NoiseParams, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(noise.sigma1 * noise.sigma1 / tau + tau * noise.sigma2 * noise.sigma2 / 3.0)
}

fn check_diagonal(what: &str, s: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() {
        return invalid(format!("{what} must be square"));
    }
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            if i != j && s[(i, j)] != 0.0 {
                return invalid(format!("{what} must be diagonal"));
            }
        }
        if s[(i, i)].is_nan() || s[(i, i)] < 0.0 {
            return invalid(format!("{what} must have non-negative diagonal"));
        }
    }
    Ok(())
}

/// `Γ(τ) = τΣ₁ + τ³/3 Σ₂`.
pub fn gamma(sigma1: &DMatrix<f64>, sigma2: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    check_tau(tau)?;
    check_diagonal("Σ₁", sigma1)?;
    check_diagonal("Σ₂", sigma2)?;
    if sigma1.shape() != sigma2.shape() {
        return invalid("Σ₁ and Σ₂ must have the same size");
    }
    Ok(sigma1 * tau + sigma2 * (tau.powi(3) / 3.0))
}

/// Allan variance of the weighted mean `Π(q)` at interval `τ`: `qᵀΓ(τ)q / τ²`.
pub fn allan_pi(q: &EnsembleWeight, sigma1: &DMatrix<f64>, sigma2: &DMatrix<f64>, tau: f64) -> Result<f64> {
    let g = gamma(sigma1, sigma2, tau)?;
    ensure_len("ensemble weight", q.len(), g.nrows())?;
    let q = q.as_vector();
    Ok((q.transpose() * g * q)[0] / (tau * tau))
}

fn inverse_diagonal_weight(what: &str, s: &DMatrix<f64>) -> Result<EnsembleWeight> {
    let d = s.diagonal();
    if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return invalid(format!("{what} must be positive definite to form an optimal weight"));
    }
    EnsembleWeight::normalized(d.map(|v| 1.0 / v))
}

/// `q_A(τ) = Γ⁻¹𝟙 / (𝟙ᵀΓ⁻¹𝟙)`, the weight minimizing the Allan variance at `τ`.
pub fn optimal_weight(sigma1: &DMatrix<f64>, sigma2: &DMatrix<f64>, tau: f64) -> Result<EnsembleWeight> {
    inverse_diagonal_weight("Γ(τ)", &gamma(sigma1, sigma2, tau)?)
}

/// Inverse white-FM weighting, optimal at short intervals.
pub fn weight_short(sigma1: &DMatrix<f64>) -> Result<EnsembleWeight> {
    check_diagonal("Σ₁", sigma1)?;
    inverse_diagonal_weight("Σ₁", sigma1)
}

/// Inverse random-walk-FM weighting, optimal at long intervals.
pub fn weight_long(sigma2: &DMatrix<f64>) -> Result<EnsembleWeight> {
    check_diagonal("Σ₂", sigma2)?;
    inverse_diagonal_weight("Σ₂", sigma2)
}

/// Largest admissible interval index for a series of `len = T + 1` samples.
pub fn max_interval(len: usize) -> usize {
    len.saturating_sub(2) / 2
}

/// Overlapping estimator
/// `1/(T−2m) Σ_{k<T−2m} (h[k+2m] − 2h[k+m] + h[k])² / (2(mτ)²)`
/// for a series `h[0..=T]`.
pub fn statistical_allan(h: &[f64], tau: f64, m: usize) -> Result<f64> {
    check_tau(tau)?;
    let max = max_interval(h.len());
    if m == 0 || m > max {
        return invalid(format!(
            "interval index m = {m} outside 1..={max} for a series of {} samples",
            h.len()
        ));
    }
    let t = h.len() - 1;
    let count = t - 2 * m;
    let mut acc = 0.0;
    for k in 0..count {
        let d = h[k + 2 * m] - 2.0 * h[k + m] + h[k];
        acc += d * d;
    }
    let mt = m as f64 * tau;
    Ok(acc / count as f64 / (2.0 * mt * mt))
}

/// Default number of grid points per decade of `m`.
pub const POINTS_PER_DECADE: usize = 10;

/// Log-spaced distinct interval indices in `1..=max`.
pub fn log_grid(max: usize, per_decade: usize) -> Vec<usize> {
    if max == 0 {
        return Vec::new();
    }
    let per_decade = per_decade.max(1);
    let top = (max as f64).log10();
    let count = (top * per_decade as f64).ceil() as usize;
    let mut out: Vec<usize> = (0..=count)
        .map(|i| 10f64.powf(i as f64 / per_decade as f64).round() as usize)
        .filter(|&m| m >= 1 && m <= max)
        .collect();
    out.push(max);
    out.sort_unstable();
    out.dedup();
    out
}

/// Statistical Allan variance as a function of interval `mτ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllanPlot {
    pub m_set: Vec<usize>,
    /// `(mτ, estimate)`.
    pub points: Vec<(f64, f64)>,
}

impl AllanPlot {
    pub fn at_interval(&self, interval: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|(t, _)| (t - interval).abs() <= 1e-9 * interval.abs().max(1.0))
            .map(|p| p.1)
    }

    /// Least-squares slope of `log10 σ²` against `log10 mτ` over `[lo, hi]`.
    pub fn loglog_slope(&self, lo: f64, hi: f64) -> Result<f64> {
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .filter(|(t, v)| *t >= lo && *t <= hi && *v > 0.0)
            .map(|(t, v)| (t.log10(), v.log10()))
            .collect();
        loglog_fit(&pts)
    }

    /// Writes `interval_s, allan_variance`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_points(out, &self.points)
    }
}

fn loglog_fit(pts: &[(f64, f64)]) -> Result<f64> {
    if pts.len() < 2 {
        return invalid("slope fit needs at least two points");
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}

pub(crate) fn write_points<W: Write>(out: W, points: &[(f64, f64)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["interval_s", "allan_variance"])?;
    for (t, v) in points {
        wtr.write_record([sci(*t), sci(*v)])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Evaluates the estimator on `m_subset`, or on the default log grid when `None`.
pub fn allan_plot(h: &[f64], tau: f64, m_subset: Option<&[usize]>) -> Result<AllanPlot> {
    check_tau(tau)?;
    if h.is_empty() {
        return invalid("empty series");
    }
    let m_set = match m_subset {
        Some(s) => s.to_vec(),
        None => log_grid(max_interval(h.len()), POINTS_PER_DECADE),
    };
    if m_set.is_empty() {
        return invalid("no admissible interval for this series length");
    }
    let values = m_set
        .par_iter()
        .map(|&m| statistical_allan(h, tau, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(AllanPlot {
        points: m_set.iter().zip(values).map(|(&m, v)| (m as f64 * tau, v)).collect(),
        m_set,
    })
}

/// Element-wise plots of a vector series given as one scalar series per component.
pub fn allan_plot_each(series: &[Vec<f64>], tau: f64, m_subset: Option<&[usize]>) -> Result<Vec<AllanPlot>> {
    series.iter().map(|h| allan_plot(h, tau, m_subset)).collect()
}

/// Analytical curve evaluated at the given intervals.
pub fn analytical_curve<F>(intervals: &[f64], f: F) -> Result<Vec<(f64, f64)>>
where
    F: Fn(f64) -> Result<f64>,
{
    intervals.iter().map(|&t| Ok((t, f(t)?))).collect()
}

/// Writes one CSV per named curve into `dir` and an `allan_index.json` mapping
/// names to file names. Returns the written paths, index last.
pub fn write_allan_bundle(dir: &Path, curves: &[(String, Vec<(f64, f64)>)]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut index = BTreeMap::new();
    let mut written = Vec::new();
    for (name, pts) in curves {
        let file = format!("allan_{name}.csv");
        let path = dir.join(&file);
        write_points(BufWriter::new(File::create(&path)?), pts)?;
        index.insert(name.clone(), file);
        written.push(path);
    }
    let path = dir.join("allan_index.json");
    std::fs::write(&path, serde_json::to_string_pretty(&index)?)?;
    written.push(path);
    Ok(written)
}

/// `Σ` diagonal from standard deviations.
pub fn variances(std_devs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(
        std_devs.len(),
        std_devs.iter().map(|s| s * s),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::reference;

    #[test]
    fn closed_forms() {
        let a = analytical_allan_clock(NoiseParams::new(1.0, 0.0).unwrap(), 2.0).unwrap();
        assert_eq!(a, 0.5);
        let a = analytical_allan_clock(NoiseParams::new(0.0, 3.0).unwrap(), 1.0).unwrap();
        assert_eq!(a, 3.0);
        let c1 = reference::noise()[0];
        let a = analytical_allan_clock(c1, 1.0).unwrap();
        assert!((a - 2.890000757e-20).abs() < 1e-29, "{a}");
        assert!(analytical_allan_clock(c1, 0.0).is_err());

        let s = 0.7;
        let q = EnsembleWeight::uniform(2);
        let v = allan_pi(&q, &variances(&[s, s]), &variances(&[0.0, 0.0]), 1.0).unwrap();
        assert!((v - s * s / 2.0).abs() < 1e-15);
        let single = allan_pi(&EnsembleWeight::uniform(1), &variances(&[0.3]), &variances(&[0.2]), 4.0).unwrap();
        let clock = analytical_allan_clock(NoiseParams::new(0.3, 0.2).unwrap(), 4.0).unwrap();
        assert!((single - clock).abs() < 1e-15);
    }

    #[test]
    fn estimator_hand_values() {
        assert_eq!(statistical_allan(&[3.0; 11], 1.0, 2).unwrap(), 0.0);
        let ramp: Vec<f64> = (0..21).map(|k| 0.5 * k as f64).collect();
        assert!(statistical_allan(&ramp, 1.0, 3).unwrap().abs() < 1e-28);
        let alt: Vec<f64> = (0..11).map(|k| (k % 2) as f64).collect();
        assert_eq!(statistical_allan(&alt, 1.0, 1).unwrap(), 2.0);
        // T = 10 gives m in 1..=4
        assert!(statistical_allan(&alt, 1.0, 4).is_ok());
        assert!(statistical_allan(&alt, 1.0, 5).is_err());
        assert!(statistical_allan(&alt, 1.0, 0).is_err());
    }

    #[test]
    fn grid_is_log_spaced_and_bounded() {
        let g = log_grid(1000, 10);
        assert_eq!(g.first(), Some(&1));
        assert_eq!(g.last(), Some(&1000));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(g.contains(&10) && g.contains(&100));
        assert!(allan_plot(&[1.0], 1.0, None).is_err());
        assert!(allan_plot(&[1.0; 10], 1.0, Some(&[])).is_err());
    }

    #[test]
    fn two_clock_weights() {
        let w = optimal_weight(&variances(&[1.0, 2.0]), &variances(&[0.0, 0.0]), 5.0).unwrap();
        assert!((w.as_vector()[0] - 0.8).abs() < 1e-15);
        let w = weight_short(&variances(&[1.0, 1.0, 1.0])).unwrap();
        assert!((w.as_vector()[2] - 1.0 / 3.0).abs() < 1e-15);
        assert!(weight_long(&variances(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn long_weight_favours_quietest_random_walk() {
        let s2 = variances(&reference::noise().iter().map(|p| p.sigma2).collect::<Vec<_>>());
        let q = weight_long(&s2).unwrap();
        let imax = q.as_vector().imax();
        assert_eq!(imax, 2);
    }
}
