//! Small statistical helpers for Monte-Carlo checks on simulated series.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};

/// Ordinary least-squares line through `(x, y)`.
#[derive(Debug, Clone, Copy)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub dof: usize,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 3 {
        return invalid("linear fit needs matching series of at least three points");
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return invalid("linear fit needs distinct abscissae");
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let dof = x.len() - 2;
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr: (sse / dof as f64 / sxx).sqrt(),
        dof,
    })
}

/// Two-sided Student-t critical value.
pub fn t_critical(confidence: f64, dof: usize) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, dof as f64)
        .map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
    Ok(dist.inverse_cdf(0.5 + confidence / 2.0))
}

/// Outcome of a trend test on a series.
#[derive(Debug, Clone, Copy)]
pub struct TrendTest {
    pub fit: LinearFit,
    pub t_stat: f64,
    pub critical: f64,
}

impl TrendTest {
    pub fn trend_free(&self) -> bool {
        self.t_stat.abs() <= self.critical
    }
}

/// Fits a line to the means of `batches` consecutive blocks and tests the slope
/// against zero. Batching makes the residuals close to independent for series
/// whose correlation time is well below the block length.
pub fn batch_trend_test(series: &[f64], batches: usize, confidence: f64) -> Result<TrendTest> {
    if batches < 3 || series.len() < batches {
        return invalid("trend test needs at least three non-empty batches");
    }
    let len = series.len() / batches;
    let x: Vec<f64> = (0..batches).map(|b| b as f64).collect();
    let y: Vec<f64> = (0..batches)
        .map(|b| series[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let fit = linear_fit(&x, &y)?;
    let critical = t_critical(confidence, fit.dof)?;
    let t_stat = if fit.slope_stderr > 0.0 {
        fit.slope / fit.slope_stderr
    } else if fit.slope == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(TrendTest {
        fit,
        t_stat,
        critical,
    })
}

pub fn mean_square(s: &[f64]) -> f64 {
    s.iter().map(|v| v * v).sum::<f64>() / s.len().max(1) as f64
}

pub fn variance(s: &[f64]) -> f64 {
    let n = s.len().max(1) as f64;
    let m = s.iter().sum::<f64>() / n;
    s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}
