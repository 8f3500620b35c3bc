//! Config-driven experiments: one JSON document describes the ensemble, the
//! horizon, the seed and what to run; [`run_scenario`] writes CSV/JSON artifacts
//! and a `manifest.json` with content hashes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, RowVector2, Vector2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allan::{
    allan_pi, allan_plot, analytical_allan_clock, log_grid, max_interval, optimal_weight, weight_long,
    weight_short, write_allan_bundle, AllanPlot, POINTS_PER_DECADE,
};
use crate::control::{
    check_collective_gain, check_obs_gain, default_collective_gain, default_obs_gain, ControlMode,
    ControllerConfig, EemController, ObserverKind, SyncDestination, DEFAULT_PERIOD,
};
use crate::decomp::{decompose, Basis, EnsembleWeight};
use crate::error::{Error, Result};
use crate::filters::{solve_stationary, DeterminateKf, StandardKf};
use crate::models::{build_ensemble, EnsembleModel, MeasurementStructure, NoiseParams};
use crate::simkit::{sci, simulate_streaming, ControlPolicy, FreeRun, SimOptions};
use crate::stats::{batch_trend_test, variance};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_HORIZON: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    FreeRun,
    StandardKf,
    StandardKfSuboptimal,
    DeterminateKf,
    SteerToClock,
    SyncSimpleAverage,
    SyncBestShort,
    SyncBestLong,
    Balanced,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 9] = [
        ScenarioKind::FreeRun,
        ScenarioKind::StandardKf,
        ScenarioKind::StandardKfSuboptimal,
        ScenarioKind::DeterminateKf,
        ScenarioKind::SteerToClock,
        ScenarioKind::SyncSimpleAverage,
        ScenarioKind::SyncBestShort,
        ScenarioKind::SyncBestLong,
        ScenarioKind::Balanced,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::FreeRun => "free-run",
            ScenarioKind::StandardKf => "standard-kf",
            ScenarioKind::StandardKfSuboptimal => "standard-kf-suboptimal",
            ScenarioKind::DeterminateKf => "determinate-kf",
            ScenarioKind::SteerToClock => "steer-to-clock",
            ScenarioKind::SyncSimpleAverage => "sync-simple-average",
            ScenarioKind::SyncBestShort => "sync-best-short",
            ScenarioKind::SyncBestLong => "sync-best-long",
            ScenarioKind::Balanced => "balanced",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            ScenarioKind::FreeRun => "free-running clocks, per-clock Allan variance against closed forms",
            ScenarioKind::StandardKf => "full-state Kalman filter time scale, gain and covariance increments",
            ScenarioKind::StandardKfSuboptimal => {
                "optimal and averaged-noise Kalman filters on the same data"
            }
            ScenarioKind::DeterminateKf => "decomposed filter without the diverging block, stationary gains",
            ScenarioKind::SteerToClock => "synchronize every clock to one free-running reference clock",
            ScenarioKind::SyncSimpleAverage => "synchronize to the simple ensemble average",
            ScenarioKind::SyncBestShort => "synchronize to the inverse white-FM weighted mean",
            ScenarioKind::SyncBestLong => "synchronize to the inverse random-walk-FM weighted mean",
            ScenarioKind::Balanced => "short-term weighting with intermittent collective feedback",
        }
    }

    fn controlled(self) -> bool {
        matches!(
            self,
            ScenarioKind::SteerToClock
                | ScenarioKind::SyncSimpleAverage
                | ScenarioKind::SyncBestShort
                | ScenarioKind::SyncBestLong
                | ScenarioKind::Balanced
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasurementSpec {
    /// Every clock compared with the last one; per-pair standard deviations.
    Star { std: Vec<f64> },
    /// Explicit pair matrix and covariance, row-major.
    Matrix { v: Vec<Vec<f64>>, r: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub tau: Option<f64>,
    /// White-FM standard deviations, one per clock.
    pub sigma1: Option<Vec<f64>>,
    /// Random-walk-FM standard deviations, one per clock.
    pub sigma2: Option<Vec<f64>>,
    pub measurement: Option<MeasurementSpec>,
}

/// Either explicit weights or one of `uniform`, `short`, `long`, `clock-<i>` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Explicit(Vec<f64>),
    Named(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObserverSpec {
    Stationary,
    Determinate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub weight: Option<WeightSpec>,
    pub f_o: Option<Vec<Vec<f64>>>,
    pub k_bo: Option<[f64; 2]>,
    pub m: Option<usize>,
    pub phase: Option<usize>,
    pub observer: Option<ObserverSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    /// Basis weight of the determinate filter.
    pub weight: Option<WeightSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllanSpec {
    pub points_per_decade: Option<usize>,
    /// Evaluate every admissible interval (quadratic cost).
    #[serde(default)]
    pub full: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Allan,
    Trajectory,
    Inputs,
    Gains,
    Increments,
    SyncError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub kind: ScenarioKind,
    pub horizon: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub controller: ControllerSpec,
    #[serde(default)]
    pub filter: FilterSpec,
    pub outputs: Option<Vec<Output>>,
    #[serde(default)]
    pub allan: AllanSpec,
    pub trajectory_stride: Option<usize>,
}

impl ScenarioConfig {
    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(DEFAULT_HORIZON)
    }

    pub fn wants(&self, o: Output) -> bool {
        self.outputs.as_ref().is_none_or(|v| v.contains(&o))
    }
}

/// A config with every default applied and every invariant checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub cfg: ScenarioConfig,
    pub model: EnsembleModel,
    pub weight: Option<EnsembleWeight>,
    pub controller: Option<ControllerConfig>,
}

/// Parses a scenario document and checks it, reporting every problem at once.
pub fn validate_config(raw: &str) -> Result<Resolved> {
    let cfg: ScenarioConfig =
        serde_json::from_str(raw).map_err(|e| Error::Config(vec![format!("parse error: {e}")]))?;
    resolve(cfg)
}

pub fn resolve(cfg: ScenarioConfig) -> Result<Resolved> {
    let mut errs = Vec::new();
    if cfg.name.trim().is_empty() {
        errs.push("name: must not be empty".to_string());
    }
    if cfg.horizon() < 10 {
        errs.push(format!("horizon: must be at least 10 steps, got {}", cfg.horizon()));
    }
    if cfg.trajectory_stride == Some(0) {
        errs.push("trajectory_stride: must be at least 1".into());
    }
    if cfg.allan.points_per_decade == Some(0) {
        errs.push("allan.points_per_decade: must be at least 1".into());
    }
    let model = resolve_model(&cfg.model, &mut errs);
    let n = model.as_ref().map(|m| m.n);
    let tau = cfg.model.tau.unwrap_or(1.0);

    let weight_spec = match cfg.kind {
        ScenarioKind::DeterminateKf => Some(
            cfg.filter
                .weight
                .clone()
                .unwrap_or(WeightSpec::Named("uniform".into())),
        ),
        k if k.controlled() => Some(cfg.controller.weight.clone().unwrap_or_else(|| {
            WeightSpec::Named(
                match k {
                    ScenarioKind::SteerToClock => "last",
                    ScenarioKind::SyncSimpleAverage => "uniform",
                    ScenarioKind::SyncBestLong => "long",
                    _ => "short",
                }
                .into(),
            )
        })),
        _ => None,
    };
    let weight_field = if cfg.kind == ScenarioKind::DeterminateKf {
        "filter.weight"
    } else {
        "controller.weight"
    };
    let weight = match (&weight_spec, &model) {
        (Some(spec), Some(m)) => match resolve_weight(spec, m) {
            Ok(q) => Some(q),
            Err(e) => {
                errs.push(format!("{weight_field}: {}", strip(&e)));
                None
            }
        },
        _ => None,
    };

    let mut controller = None;
    if cfg.kind.controlled() {
        let c = &cfg.controller;
        let mode = if cfg.kind == ScenarioKind::Balanced {
            ControlMode::Balanced
        } else {
            ControlMode::SyncOnly
        };
        let m = c.m.unwrap_or(DEFAULT_PERIOD);
        if m == 0 {
            errs.push("controller.m: collective-control period must be at least 1".into());
        }
        let k_bo = c
            .k_bo
            .map(|k| RowVector2::new(k[0], k[1]))
            .unwrap_or_else(|| default_collective_gain(m.max(1), tau));
        if mode == ControlMode::Balanced && m > 0 && tau > 0.0 {
            if let Ok(rho) = check_collective_gain(&k_bo, m, tau) {
                if rho >= 1.0 {
                    errs.push(format!(
                        "controller.k_bo: collective gain not stabilizing, spectral radius {rho:.6} >= 1"
                    ));
                }
            }
        }
        let f_o = match (n, &c.f_o) {
            (Some(_), Some(rows)) => match matrix_from_rows(rows) {
                Some(f) => Some(f),
                None => {
                    errs.push("controller.f_o: rows must be non-empty and of equal length".into());
                    None
                }
            },
            (Some(n), None) if tau > 0.0 => Some(default_obs_gain(n, tau)),
            _ => None,
        };
        if let (Some(f), Some(n)) = (&f_o, n) {
            match check_obs_gain(f, n, tau) {
                Ok(rho) if rho >= 1.0 => errs.push(format!(
                    "controller.f_o: observable gain not stabilizing, spectral radius {rho:.6} >= 1"
                )),
                Ok(_) => {}
                Err(e) => errs.push(format!("controller.f_o: {}", strip(&e))),
            }
        }
        if let (Some(q), Some(f_o)) = (&weight, f_o) {
            controller = Some(ControllerConfig {
                q: q.clone(),
                f_o,
                k_bo,
                m: m.max(1),
                phase: c.phase.unwrap_or(0),
                mode,
                observer: match c.observer.unwrap_or(ObserverSpec::Stationary) {
                    ObserverSpec::Stationary => ObserverKind::Stationary,
                    ObserverSpec::Determinate => ObserverKind::Determinate,
                },
            });
        }
    } else if cfg.controller != ControllerSpec::default() {
        errs.push(format!("controller: not used by scenario kind {}", cfg.kind.name()));
    }
    if cfg.kind != ScenarioKind::DeterminateKf && cfg.filter != FilterSpec::default() {
        errs.push(format!("filter: not used by scenario kind {}", cfg.kind.name()));
    }

    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    Ok(Resolved {
        model: model.expect("model resolved when no errors"),
        weight,
        controller,
        cfg,
    })
}

fn strip(e: &Error) -> String {
    match e {
        Error::InvalidArgument(s) | Error::Unsupported(s) | Error::Numerical(s) => s.clone(),
        other => other.to_string(),
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let c = rows.first()?.len();
    if c == 0 || rows.iter().any(|r| r.len() != c) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

fn resolve_model(spec: &ModelSpec, errs: &mut Vec<String>) -> Option<EnsembleModel> {
    let start = errs.len();
    let tau = spec.tau.unwrap_or(1.0);
    if !(tau.is_finite() && tau > 0.0) {
        errs.push(format!("model.tau: sampling interval must be positive, got {tau}"));
    }
    let s1 = spec.sigma1.as_ref();
    let s2 = spec.sigma2.as_ref();
    if s1.is_none() {
        errs.push("model.sigma1: missing white-FM standard deviations".into());
    }
    if s2.is_none() {
        errs.push("model.sigma2: missing random-walk-FM standard deviations".into());
    }
    let mut params = Vec::new();
    if let (Some(s1), Some(s2)) = (s1, s2) {
        if s1.len() != s2.len() {
            errs.push(format!(
                "model.sigma2: {} entries but model.sigma1 has {}",
                s2.len(),
                s1.len()
            ));
        } else if s1.len() < 2 {
            errs.push("model.sigma1: an ensemble needs at least two clocks".into());
        } else {
            for (i, (a, b)) in s1.iter().zip(s2).enumerate() {
                match NoiseParams::new(*a, *b) {
                    Ok(p) => params.push(p),
                    Err(e) => errs.push(format!("model.sigma1[{i}]/sigma2[{i}]: {}", strip(&e))),
                }
            }
        }
    }
    let meas = match &spec.measurement {
        None => {
            errs.push("model.measurement: missing measurement structure".into());
            None
        }
        Some(MeasurementSpec::Star { std }) => {
            if let Some(s1) = s1 {
                if std.len() + 1 != s1.len() {
                    errs.push(format!(
                        "model.measurement.star.std: {} clocks need {} pair deviations, got {}",
                        s1.len(),
                        s1.len().saturating_sub(1),
                        std.len()
                    ));
                }
            }
            match MeasurementStructure::star(std) {
                Ok(m) => Some(m),
                Err(e) => {
                    errs.push(format!("model.measurement.star: {}", strip(&e)));
                    None
                }
            }
        }
        Some(MeasurementSpec::Matrix { v, r }) => match (matrix_from_rows(v), matrix_from_rows(r)) {
            (Some(v), Some(r)) => match MeasurementStructure::new(v, r) {
                Ok(m) => Some(m),
                Err(e) => {
                    errs.push(format!("model.measurement.matrix: {}", strip(&e)));
                    None
                }
            },
            _ => {
                errs.push("model.measurement.matrix: v and r must be non-empty rectangular arrays".into());
                None
            }
        },
    };
    if errs.len() > start {
        return None;
    }
    let meas = meas?;
    match build_ensemble(&params, meas.v, meas.r, tau) {
        Ok(m) => Some(m),
        Err(e) => {
            errs.push(format!("model: {}", strip(&e)));
            None
        }
    }
}

fn resolve_weight(spec: &WeightSpec, m: &EnsembleModel) -> Result<EnsembleWeight> {
    match spec {
        WeightSpec::Explicit(q) => {
            if q.len() != m.n {
                return Err(Error::InvalidArgument(format!(
                    "{} weights for {} clocks",
                    q.len(),
                    m.n
                )));
            }
            let w = DVector::from_column_slice(q);
            let sum = w.sum();
            if (sum - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!(
                    "ensemble weight must be normalized so that its entries sum to 1, got {sum}"
                )));
            }
            EnsembleWeight::new(w)
        }
        WeightSpec::Named(name) => match name.as_str() {
            "uniform" => Ok(EnsembleWeight::uniform(m.n)),
            "short" => weight_short(&m.sigma1),
            "long" => weight_long(&m.sigma2),
            "last" => Ok(EnsembleWeight::unit(m.n, m.n - 1)),
            other => {
                if let Some(i) = other.strip_prefix("clock-").and_then(|s| s.parse::<usize>().ok()) {
                    if (1..=m.n).contains(&i) {
                        return Ok(EnsembleWeight::unit(m.n, i - 1));
                    }
                }
                Err(Error::InvalidArgument(format!(
                    "unknown weight {other:?}; expected uniform, short, long, last or clock-<1..={}>",
                    m.n
                )))
            }
        },
    }
}

/// One written artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub kind: ScenarioKind,
    pub version: String,
    pub seed: u64,
    pub horizon: usize,
    /// `complete`, or `partial` when the run aborted.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: ScenarioConfig,
    pub files: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path)?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

struct Artifacts<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl Artifacts<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path)?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// Runs a resolved scenario into `out`. On failure the manifest is still written,
/// marked `partial`, and the error is returned.
pub fn run_scenario(res: &Resolved, out: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out)?;
    let mut art = Artifacts {
        dir: out,
        written: Vec::new(),
    };
    let outcome = run_kind(res, &mut art);
    let mut files = Vec::new();
    for p in &art.written {
        if p.exists() {
            let (sha256, bytes) = sha256_file(p)?;
            files.push(FileEntry {
                path: p
                    .strip_prefix(out)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .replace('\\', "/"),
                sha256,
                bytes,
            });
        }
    }
    let manifest = Manifest {
        name: res.cfg.name.clone(),
        kind: res.cfg.kind,
        version: VERSION.to_string(),
        seed: res.cfg.seed,
        horizon: res.cfg.horizon(),
        status: if outcome.is_ok() { "complete" } else { "partial" }.into(),
        error: outcome.as_ref().err().map(|e| e.to_string()),
        config: res.cfg.clone(),
        files,
    };
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    outcome.map(|_| manifest)
}

fn run_kind(res: &Resolved, art: &mut Artifacts<'_>) -> Result<()> {
    match res.cfg.kind {
        ScenarioKind::FreeRun => run_free(res, art),
        ScenarioKind::StandardKf | ScenarioKind::StandardKfSuboptimal => run_standard(res, art),
        ScenarioKind::DeterminateKf => run_determinate(res, art),
        _ => run_controlled(res, art),
    }
}

fn m_grid(res: &Resolved, len: usize) -> Vec<usize> {
    let max = max_interval(len);
    if res.cfg.allan.full {
        (1..=max).collect()
    } else {
        log_grid(max, res.cfg.allan.points_per_decade.unwrap_or(POINTS_PER_DECADE))
    }
}

type Curves = Vec<(String, Vec<(f64, f64)>)>;

fn clock_curves(res: &Resolved, h: &[Vec<f64>], curves: &mut Curves) -> Result<Vec<f64>> {
    let grid = m_grid(res, h[0].len());
    let tau = res.model.tau;
    for (i, s) in h.iter().enumerate() {
        let p: AllanPlot = allan_plot(s, tau, Some(&grid))?;
        curves.push((format!("clock_{}", i + 1), p.points));
    }
    let intervals: Vec<f64> = grid.iter().map(|&m| m as f64 * tau).collect();
    for (i, p) in res.model.noise.iter().enumerate() {
        let pts = intervals
            .iter()
            .map(|&t| Ok((t, analytical_allan_clock(*p, t)?)))
            .collect::<Result<Vec<_>>>()?;
        curves.push((format!("clock_{}_analytical", i + 1), pts));
    }
    Ok(intervals)
}

fn pi_curve(res: &Resolved, q: &EnsembleWeight, intervals: &[f64]) -> Result<Vec<(f64, f64)>> {
    intervals
        .iter()
        .map(|&t| Ok((t, allan_pi(q, &res.model.sigma1, &res.model.sigma2, t)?)))
        .collect()
}

struct TrajectoryCsv {
    w: csv::Writer<BufWriter<File>>,
    stride: usize,
}

impl TrajectoryCsv {
    fn new(art: &mut Artifacts<'_>, res: &Resolved, extra: &[String]) -> Result<Self> {
        let n = res.model.n;
        let mut w = csv::Writer::from_writer(art.create("trajectory.csv")?);
        let mut header = vec!["k".to_string()];
        header.extend((1..=n).map(|i| format!("h_{i}")));
        header.extend((1..=n).map(|i| format!("u_{i}")));
        header.extend(extra.iter().cloned());
        w.write_record(&header)?;
        Ok(Self {
            w,
            stride: res.cfg.trajectory_stride.unwrap_or(1),
        })
    }

    fn row(&mut self, k: usize, x: &DVector<f64>, u: &DVector<f64>, extra: &[f64]) -> Result<()> {
        if !k.is_multiple_of(self.stride) {
            return Ok(());
        }
        let n = u.len();
        let mut row = Vec::with_capacity(1 + 2 * n + extra.len());
        row.push(k.to_string());
        row.extend(x.rows(0, n).iter().map(|v| sci(*v)));
        row.extend(u.iter().map(|v| sci(*v)));
        row.extend(extra.iter().map(|v| sci(*v)));
        self.w.write_record(&row)?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

fn run_free(res: &Resolved, art: &mut Artifacts<'_>) -> Result<()> {
    let m = &res.model;
    let t = res.cfg.horizon();
    let mut h = vec![Vec::with_capacity(t + 1); m.n];
    let mut traj = if res.cfg.wants(Output::Trajectory) {
        Some(TrajectoryCsv::new(art, res, &[])?)
    } else {
        None
    };
    let last = simulate_streaming(m, &mut FreeRun { clocks: m.n }, t, res.cfg.seed, None, SimOptions::default(), |s| {
        for (i, hi) in h.iter_mut().enumerate() {
            hi.push(s.x[i]);
        }
        if let Some(tw) = &mut traj {
            tw.row(s.k, s.x, s.u, &[])?;
        }
        Ok(())
    })?;
    for (i, hi) in h.iter_mut().enumerate() {
        hi.push(last[i]);
    }
    if let Some(tw) = traj {
        tw.finish()?;
    }
    if res.cfg.wants(Output::Allan) {
        let mut curves = Curves::new();
        clock_curves(res, &h, &mut curves)?;
        write_curves(art, curves)?;
    }
    Ok(())
}

fn write_curves(art: &mut Artifacts<'_>, curves: Curves) -> Result<()> {
    let paths = write_allan_bundle(art.dir, &curves)?;
    art.written.extend(paths);
    Ok(())
}

/// Per-noise averaged model used by the suboptimal filter.
pub fn averaged_noise_model(m: &EnsembleModel) -> Result<EnsembleModel> {
    let n = m.n as f64;
    let s1 = m.noise.iter().map(|p| p.sigma1 * p.sigma1).sum::<f64>() / n;
    let s2 = m.noise.iter().map(|p| p.sigma2 * p.sigma2).sum::<f64>() / n;
    let p = NoiseParams::new(s1.sqrt(), s2.sqrt())?;
    m.with_noise(&vec![p; m.n])
}

/// Steps at which increments are recorded: every step up to 1000, then every 1000th.
fn increment_step(k: usize) -> bool {
    k < 1000 || k.is_multiple_of(1000)
}

fn run_standard(res: &Resolved, art: &mut Artifacts<'_>) -> Result<()> {
    let m = &res.model;
    let t = res.cfg.horizon();
    let sub = res.cfg.kind == ScenarioKind::StandardKfSuboptimal;
    let ms = if sub { Some(averaged_noise_model(m)?) } else { None };
    let mut kf = StandardKf::new(m);
    let mut ks = ms.as_ref().map(StandardKf::new);
    let zero = DVector::zeros(m.n);
    let mut eps = Vec::with_capacity(t);
    let mut eps_sub = Vec::with_capacity(if sub { t } else { 0 });
    let mut inc = if res.cfg.wants(Output::Increments) {
        let mut w = csv::Writer::from_writer(art.create("increments.csv")?);
        w.write_record(["k", "gain_increment", "gain_norm", "covariance_increment", "covariance_norm"])?;
        Some(w)
    } else {
        None
    };
    let mut traj = if res.cfg.wants(Output::Trajectory) {
        let extra: Vec<String> = (1..=2 * m.n).map(|i| format!("xhat_{i}")).collect();
        Some(TrajectoryCsv::new(art, res, &extra)?)
    } else {
        None
    };
    simulate_streaming(m, &mut FreeRun { clocks: m.n }, t, res.cfg.seed, None, SimOptions::default(), |s| {
        let (h_prev, p_prev) = (kf.h.clone(), kf.p_minus.clone());
        if s.k == 0 {
            kf.update(m, s.y)?;
        } else {
            kf.step(m, &zero, s.y)?;
        }
        eps.push(crate::simkit::mean_phase(&(s.x - &kf.xhat), m.n));
        if let (Some(ks), Some(ms)) = (&mut ks, &ms) {
            if s.k == 0 {
                ks.update(ms, s.y)?;
            } else {
                ks.step(ms, &zero, s.y)?;
            }
            eps_sub.push(crate::simkit::mean_phase(&(s.x - &ks.xhat), m.n));
        }
        if let Some(w) = &mut inc {
            if s.k > 0 && increment_step(s.k) {
                w.write_record([
                    s.k.to_string(),
                    sci((&kf.h - h_prev).norm()),
                    sci(kf.h.norm()),
                    sci((&kf.p_minus - p_prev).norm()),
                    sci(kf.p_minus.norm()),
                ])?;
            }
        }
        if let Some(tw) = &mut traj {
            tw.row(s.k, s.x, s.u, kf.xhat.as_slice())?;
        }
        Ok(())
    })?;
    if let Some(mut w) = inc {
        w.flush()?;
    }
    if let Some(tw) = traj {
        tw.finish()?;
    }
    if res.cfg.wants(Output::Allan) {
        let grid = m_grid(res, eps.len());
        let mut curves = Curves::new();
        let name = if sub { "timescale_optimal" } else { "timescale" };
        curves.push((name.into(), allan_plot(&eps, m.tau, Some(&grid))?.points));
        if sub {
            curves.push(("timescale_suboptimal".into(), allan_plot(&eps_sub, m.tau, Some(&grid))?.points));
        }
        let intervals: Vec<f64> = grid.iter().map(|&k| k as f64 * m.tau).collect();
        for (i, p) in m.noise.iter().enumerate() {
            let pts = intervals
                .iter()
                .map(|&t| Ok((t, analytical_allan_clock(*p, t)?)))
                .collect::<Result<Vec<_>>>()?;
            curves.push((format!("clock_{}_analytical", i + 1), pts));
        }
        write_curves(art, curves)?;
    }
    Ok(())
}

fn run_determinate(res: &Resolved, art: &mut Artifacts<'_>) -> Result<()> {
    let m = &res.model;
    let t = res.cfg.horizon();
    let q = res.weight.clone().expect("determinate filter weight resolved");
    let d = decompose(m, Basis::Eem(q))?;
    let mut kf = DeterminateKf::new(&d);
    let zero = DVector::zeros(m.n);
    let mut eps = Vec::with_capacity(t);
    let mut inc = if res.cfg.wants(Output::Increments) {
        let mut w = csv::Writer::from_writer(art.create("increments.csv")?);
        w.write_record([
            "k",
            "gain_o_increment",
            "gain_o_norm",
            "gain_bo_increment",
            "gain_bo_norm",
            "covariance_oo_increment",
            "covariance_oo_norm",
            "covariance_bo_increment",
            "covariance_bo_norm",
        ])?;
        Some(w)
    } else {
        None
    };
    simulate_streaming(m, &mut FreeRun { clocks: m.n }, t, res.cfg.seed, None, SimOptions::default(), |s| {
        let prev = (
            kf.h_o.clone(),
            kf.h_bo.clone(),
            kf.p_oo_minus.clone(),
            kf.p_bo_minus.clone(),
        );
        if s.k == 0 {
            kf.update(&d, &m.meas.r, s.y)?;
        } else {
            kf.step(&d, &m.meas.r, &zero, s.y)?;
        }
        let xhat = kf.state_estimate(&d);
        eps.push(crate::simkit::mean_phase(&(s.x - xhat), m.n));
        if let Some(w) = &mut inc {
            if s.k > 0 && increment_step(s.k) {
                w.write_record([
                    s.k.to_string(),
                    sci((&kf.h_o - prev.0).norm()),
                    sci(kf.h_o.norm()),
                    sci((&kf.h_bo - prev.1).norm()),
                    sci(kf.h_bo.norm()),
                    sci((&kf.p_oo_minus - prev.2).norm()),
                    sci(kf.p_oo_minus.norm()),
                    sci((&kf.p_bo_minus - prev.3).norm()),
                    sci(kf.p_bo_minus.norm()),
                ])?;
            }
        }
        Ok(())
    })?;
    if let Some(mut w) = inc {
        w.flush()?;
    }
    if res.cfg.wants(Output::Gains) {
        let g = solve_stationary(&d, &m.meas.r)?;
        let mut w = art.create("gains.json")?;
        w.write_all(g.to_json()?.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    if res.cfg.wants(Output::Allan) {
        let grid = m_grid(res, eps.len());
        write_curves(art, vec![("timescale".into(), allan_plot(&eps, m.tau, Some(&grid))?.points)])?;
    }
    Ok(())
}

/// Summary of the synchronization error against a destination.
#[derive(Debug, Clone, Serialize)]
pub struct SyncErrorSummary {
    pub destination: String,
    pub sample_period: usize,
    pub samples: usize,
    /// Per-clock phase error variance over the evaluated window.
    pub phase_variance: Vec<f64>,
    /// Per-clock batch-means slope t statistics.
    pub trend_t: Vec<f64>,
    pub trend_critical: f64,
    pub trend_free: bool,
}

fn run_controlled(res: &Resolved, art: &mut Artifacts<'_>) -> Result<()> {
    let m = &res.model;
    let n = m.n;
    let t = res.cfg.horizon();
    let cfg = res.controller.clone().expect("controller resolved");
    let q = cfg.q.clone();
    let balanced = cfg.mode == ControlMode::Balanced;
    let period = if balanced { cfg.m } else { 1 };
    let mut ctl = EemController::new(m, cfg)?;
    if res.cfg.wants(Output::Gains) {
        let mut w = art.create("gains.json")?;
        w.write_all(ctl.gains.to_json()?.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    let q_dest = if balanced { weight_long(&m.sigma2)? } else { q.clone() };
    let mut dest = SyncDestination::new(q_dest, Vector2::zeros(), m.tau);
    let mut h = vec![Vec::with_capacity(t + 1); n];
    let mut delta: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut traj = if res.cfg.wants(Output::Trajectory) {
        Some(TrajectoryCsv::new(art, res, &["destination".to_string()])?)
    } else {
        None
    };
    let mut inputs = if res.cfg.wants(Output::Inputs) {
        let mut w = csv::Writer::from_writer(art.create("inputs.csv")?);
        let mut header = vec!["k".to_string()];
        header.extend((1..n).map(|i| format!("omega_o_{i}")));
        header.push("omega_obar".into());
        header.extend((1..=n).map(|i| format!("u_{i}")));
        w.write_record(&header)?;
        Some(w)
    } else {
        None
    };
    let stride = res.cfg.trajectory_stride.unwrap_or(1);
    let mut policy = |k: usize, y: &DVector<f64>| -> Result<DVector<f64>> {
        let (omega_o, omega_obar) = ctl.feedback(k);
        let u = ctl.step(k, y)?;
        if let Some(w) = &mut inputs {
            if k.is_multiple_of(stride) {
                let mut row = vec![k.to_string()];
                row.extend(omega_o.iter().map(|v| sci(*v)));
                row.push(sci(omega_obar));
                row.extend(u.iter().map(|v| sci(*v)));
                w.write_record(&row)?;
            }
        }
        Ok(u)
    };
    let start = t / 2;
    let last = simulate_streaming(m, &mut policy as &mut dyn ControlPolicy, t, res.cfg.seed, None, SimOptions::default(), |s| {
        for (i, hi) in h.iter_mut().enumerate() {
            hi.push(s.x[i]);
        }
        // Sync-only runs are judged on the final half; balanced runs on the whole
        // horizon sampled at the collective-control instants.
        let take = if balanced { s.k % period == 0 } else { s.k >= start };
        if take {
            for (i, di) in delta.iter_mut().enumerate() {
                di.push(s.x[i] - dest.r[0]);
            }
        }
        if let Some(tw) = &mut traj {
            tw.row(s.k, s.x, s.u, &[dest.z])?;
        }
        dest.advance(s.v)
    })?;
    for (i, hi) in h.iter_mut().enumerate() {
        hi.push(last[i]);
    }
    if let Some(tw) = traj {
        tw.finish()?;
    }
    if let Some(mut w) = inputs {
        w.flush()?;
    }
    if res.cfg.wants(Output::SyncError) {
        let mut trend_t = Vec::with_capacity(n);
        let mut crit = 0.0;
        let confidence = 1.0 - 0.05 / n as f64;
        for di in &delta {
            // Relative phases for sync-only runs, absolute offsets for balanced runs.
            let test = batch_trend_test(di, 10, confidence)?;
            crit = test.critical;
            trend_t.push(test.t_stat);
        }
        let summary = SyncErrorSummary {
            destination: if balanced { "long".into() } else { "q".into() },
            sample_period: period,
            samples: delta[0].len(),
            phase_variance: delta.iter().map(|d| variance(d)).collect(),
            trend_free: trend_t.iter().all(|t| t.abs() <= crit),
            trend_t,
            trend_critical: crit,
        };
        art.json("sync_error.json", &summary)?;
    }
    if res.cfg.wants(Output::Allan) {
        let mut curves = Curves::new();
        let intervals = clock_curves(res, &h, &mut curves)?;
        curves.push(("destination".into(), pi_curve(res, &q, &intervals)?));
        if balanced {
            curves.push(("destination_short".into(), pi_curve(res, &weight_short(&m.sigma1)?, &intervals)?));
            curves.push(("destination_long".into(), pi_curve(res, &weight_long(&m.sigma2)?, &intervals)?));
            let optimal = intervals
                .iter()
                .map(|&t| {
                    let qa = optimal_weight(&m.sigma1, &m.sigma2, t)?;
                    Ok((t, allan_pi(&qa, &m.sigma1, &m.sigma2, t)?))
                })
                .collect::<Result<Vec<_>>>()?;
            curves.push(("destination_optimal".into(), optimal));
        }
        write_curves(art, curves)?;
    }
    Ok(())
}

/// Bundled example configs, one per scenario kind.
pub const BUNDLED: [(&str, &str); 9] = [
    ("free-run", include_str!("../scenarios/free-run.json")),
    ("standard-kf", include_str!("../scenarios/standard-kf.json")),
    ("standard-kf-suboptimal", include_str!("../scenarios/standard-kf-suboptimal.json")),
    ("determinate-kf", include_str!("../scenarios/determinate-kf.json")),
    ("steer-to-clock", include_str!("../scenarios/steer-to-clock.json")),
    ("sync-simple-average", include_str!("../scenarios/sync-simple-average.json")),
    ("sync-best-short", include_str!("../scenarios/sync-best-short.json")),
    ("sync-best-long", include_str!("../scenarios/sync-best-long.json")),
    ("balanced", include_str!("../scenarios/balanced.json")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, c)| *c)
}
