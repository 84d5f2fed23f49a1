//! Monte Carlo benchmark: configuration, windowed heading RMSE and result
//! files.

use crate::coarse::{coarse_align, DEFAULT_PAIR_INTERVAL};
use crate::fgo::{align_series, FgoConfig, DEFAULT_KEYFRAME_INTERVAL};
use crate::format::Sig9;
use crate::kf::{run_two_procedure, KfConfig};
use crate::rotation::{
    deg_per_hour, heading_deg, heading_pitch_roll_to_dcm, rad_per_s_from_deg_per_hour, wrap_deg, EarthParams,
    EulerAngles, RotationMatrix, Vector3, STANDARD_GRAVITY,
};
use crate::sim::{simulate, true_heading_deg, ImuSample, ScenarioConfig, SimError, MILLI_G};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

/// A run whose heading RMSE over the final window exceeds this is diverged, degrees.
pub const DIVERGENCE_THRESHOLD_DEG: f64 = 30.0;
/// Length of the final window used for the divergence check, s.
pub const DIVERGENCE_WINDOW_S: f64 = 50.0;

pub const METRICS_CSV_HEADER: &str = "method,window_start_s,window_end_s,rmse_deg,runs_used";
pub const HEADING_ERROR_CSV_HEADER: &str = "t_s,run,method,heading_err_deg";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Range(Vec<String>),
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("no samples in window [{start}, {end}] s")]
    EmptyWindow { start: f64, end: f64 },
    #[error("estimate and truth series are not aligned at index {index}")]
    Misaligned { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Oba,
    ObaKf,
    Fgo,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Oba, Method::ObaKf, Method::Fgo];

    pub fn name(self) -> &'static str {
        match self {
            Method::Oba => "oba",
            Method::ObaKf => "oba_kf",
            Method::Fgo => "fgo",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| format!("unknown method `{s}` (expected oba, oba_kf or fgo)"))
    }
}

/// Scenario section in human units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub seed: u64,
    pub duration_s: f64,
    pub imu_rate_hz: f64,
    pub latitude_deg: f64,
    pub heading_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    pub initial_heading_error_deg: f64,
    pub turntable_rate_deg_s: f64,
    pub turntable_reversal_period_s: f64,
    pub gyro_bias_deg_h: [f64; 3],
    pub accel_bias_mg: [f64; 3],
    pub gyro_arw_deg_sqrt_h: f64,
    pub accel_vrw_ug_sqrt_hz: f64,
    pub sway_accel_amp_m_s2: f64,
    pub sway_period_s: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            seed: 1,
            duration_s: 900.0,
            imu_rate_hz: 100.0,
            latitude_deg: 45.0,
            heading_deg: 30.0,
            pitch_deg: 1.0,
            roll_deg: -0.5,
            initial_heading_error_deg: 0.0,
            turntable_rate_deg_s: 6.0,
            turntable_reversal_period_s: 60.0,
            gyro_bias_deg_h: [-8.0, 6.0, -7.0],
            accel_bias_mg: [1.0, -1.0, 1.0],
            gyro_arw_deg_sqrt_h: 0.1,
            accel_vrw_ug_sqrt_hz: 50.0,
            sway_accel_amp_m_s2: 0.0,
            sway_period_s: 8.0,
        }
    }
}

impl ScenarioSection {
    pub fn to_scenario(&self, seed: u64) -> ScenarioConfig {
        let [gx, gy, gz] = self.gyro_bias_deg_h;
        let [ax, ay, az] = self.accel_bias_mg;
        ScenarioConfig {
            duration: self.duration_s,
            imu_rate: self.imu_rate_hz,
            earth: EarthParams::from_latitude_deg(self.latitude_deg),
            initial_attitude: self.initial_attitude(),
            initial_heading_error_deg: self.initial_heading_error_deg,
            turntable_rate: self.turntable_rate_deg_s.to_radians(),
            turntable_reversal_period: self.turntable_reversal_period_s,
            gyro_bias: Vector3::new(gx, gy, gz).map(rad_per_s_from_deg_per_hour),
            accel_bias: Vector3::new(ax, ay, az) * MILLI_G,
            gyro_arw: self.gyro_arw(),
            accel_vrw: self.accel_vrw(),
            sway_accel_amp: self.sway_accel_amp_m_s2,
            sway_period: self.sway_period_s,
            rng_seed: seed,
        }
    }

    fn initial_attitude(&self) -> RotationMatrix {
        heading_pitch_roll_to_dcm(&EulerAngles { heading: self.heading_deg, pitch: self.pitch_deg, roll: self.roll_deg })
    }

    /// rad/√s
    fn gyro_arw(&self) -> f64 {
        self.gyro_arw_deg_sqrt_h.to_radians() / 60.0
    }

    /// (m/s)/√s
    fn accel_vrw(&self) -> f64 {
        self.accel_vrw_ug_sqrt_hz * 1e-6 * STANDARD_GRAVITY
    }

    fn check(&self, problems: &mut Vec<String>) {
        let mut finite = |name: &str, v: f64| {
            if !v.is_finite() {
                problems.push(format!("scenario.{name} must be finite"));
            }
        };
        for (name, v) in [
            ("duration_s", self.duration_s),
            ("imu_rate_hz", self.imu_rate_hz),
            ("latitude_deg", self.latitude_deg),
            ("heading_deg", self.heading_deg),
            ("pitch_deg", self.pitch_deg),
            ("roll_deg", self.roll_deg),
            ("initial_heading_error_deg", self.initial_heading_error_deg),
            ("turntable_rate_deg_s", self.turntable_rate_deg_s),
            ("turntable_reversal_period_s", self.turntable_reversal_period_s),
            ("gyro_arw_deg_sqrt_h", self.gyro_arw_deg_sqrt_h),
            ("accel_vrw_ug_sqrt_hz", self.accel_vrw_ug_sqrt_hz),
            ("sway_accel_amp_m_s2", self.sway_accel_amp_m_s2),
            ("sway_period_s", self.sway_period_s),
        ] {
            finite(name, v);
        }
        for v in self.gyro_bias_deg_h {
            finite("gyro_bias_deg_h", v);
        }
        for v in self.accel_bias_mg {
            finite("accel_bias_mg", v);
        }
        if !(self.duration_s > 0.0) {
            problems.push("scenario.duration_s must be > 0".into());
        }
        if !(self.imu_rate_hz > 0.0) {
            problems.push("scenario.imu_rate_hz must be > 0".into());
        }
        if !(self.latitude_deg.abs() <= 90.0) {
            problems.push("scenario.latitude_deg must be within [-90, 90]".into());
        }
        if !(self.pitch_deg.abs() < 90.0) {
            problems.push("scenario.pitch_deg must be within (-90, 90)".into());
        }
        if !(self.turntable_reversal_period_s >= 0.0) {
            problems.push("scenario.turntable_reversal_period_s must be ≥ 0".into());
        }
        if self.imu_rate_hz > 0.0 && !(self.turntable_rate_deg_s.abs() / self.imu_rate_hz < 180.0) {
            problems.push("scenario.turntable_rate_deg_s must turn less than 180° per sample".into());
        }
        if !(self.gyro_arw_deg_sqrt_h >= 0.0) {
            problems.push("scenario.gyro_arw_deg_sqrt_h must be ≥ 0".into());
        }
        if !(self.accel_vrw_ug_sqrt_hz >= 0.0) {
            problems.push("scenario.accel_vrw_ug_sqrt_hz must be ≥ 0".into());
        }
        if !(self.sway_accel_amp_m_s2 >= 0.0) {
            problems.push("scenario.sway_accel_amp_m_s2 must be ≥ 0".into());
        }
        if self.sway_accel_amp_m_s2 > 0.0 && !(self.sway_period_s > 0.0) {
            problems.push("scenario.sway_period_s must be > 0 when sway is enabled".into());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObaSection {
    pub pair_interval_s: f64,
}

impl Default for ObaSection {
    fn default() -> Self {
        Self { pair_interval_s: DEFAULT_PAIR_INTERVAL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KfSection {
    pub coarse_window_s: f64,
    pub velocity_sigma_m_s: f64,
    pub output_interval_s: f64,
}

impl Default for KfSection {
    fn default() -> Self {
        let d = KfConfig::default();
        Self { coarse_window_s: d.coarse_window, velocity_sigma_m_s: d.velocity_sigma, output_interval_s: d.output_interval }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FgoSection {
    pub keyframe_interval_s: f64,
    pub stride: usize,
    pub feedback_passes: usize,
}

impl Default for FgoSection {
    fn default() -> Self {
        let d = FgoConfig::default();
        Self { keyframe_interval_s: DEFAULT_KEYFRAME_INTERVAL, stride: d.stride, feedback_passes: d.feedback_passes }
    }
}

/// Benchmark configuration as read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub methods: Vec<Method>,
    pub monte_carlo_runs: u32,
    /// `[start, end]` pairs, s.
    pub rmse_windows: Vec<[f64; 2]>,
    pub output_dir: PathBuf,
    pub emit_plot_data: bool,
    pub scenario: ScenarioSection,
    pub oba: ObaSection,
    pub oba_kf: KfSection,
    pub fgo: FgoSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            monte_carlo_runs: 20,
            rmse_windows: vec![[200.0, 250.0], [300.0, 350.0], [850.0, 900.0]],
            output_dir: PathBuf::from("results"),
            emit_plot_data: true,
            scenario: ScenarioSection::default(),
            oba: ObaSection::default(),
            oba_kf: KfSection::default(),
            fgo: FgoSection::default(),
        }
    }
}

/// Parses and validates a TOML configuration. Missing keys take defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text).map_err(|e| match e {
        ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
    .map_err(Into::into)
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig serializes")
    }

    /// Every range violation, not only the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        let s = &self.scenario;
        s.check(&mut problems);
        if self.methods.is_empty() {
            problems.push("methods must not be empty".into());
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                problems.push(format!("method `{m}` listed twice"));
            }
        }
        if self.monte_carlo_runs < 1 {
            problems.push("monte_carlo_runs must be ≥ 1".into());
        }
        if self.rmse_windows.is_empty() {
            problems.push("rmse_windows must not be empty".into());
        }
        for &[a, b] in &self.rmse_windows {
            if !(a >= 0.0 && a < b && b <= s.duration_s) {
                problems.push(format!("rmse window [{a}, {b}] must satisfy 0 ≤ start < end ≤ duration_s ({})", s.duration_s));
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            problems.push("output_dir must not be empty".into());
        }
        let dt = 1.0 / s.imu_rate_hz;
        if !(self.oba.pair_interval_s >= dt && self.oba.pair_interval_s.is_finite()) {
            problems.push("oba.pair_interval_s must be at least one sample interval".into());
        }
        let kf = &self.oba_kf;
        if !(kf.coarse_window_s > 0.0 && kf.coarse_window_s < s.duration_s) {
            problems.push(format!("oba_kf.coarse_window_s must be > 0 and < duration_s ({})", s.duration_s));
        }
        if !(kf.coarse_window_s >= 2.0 * self.oba.pair_interval_s) {
            problems.push("oba_kf.coarse_window_s must span at least two oba pair intervals".into());
        }
        if !(kf.velocity_sigma_m_s > 0.0 && kf.velocity_sigma_m_s.is_finite()) {
            problems.push("oba_kf.velocity_sigma_m_s must be > 0".into());
        }
        if !(kf.output_interval_s >= dt && kf.output_interval_s.is_finite()) {
            problems.push("oba_kf.output_interval_s must be at least one sample interval".into());
        }
        if !(self.fgo.keyframe_interval_s >= dt && self.fgo.keyframe_interval_s.is_finite()) {
            problems.push("fgo.keyframe_interval_s must be at least one sample interval".into());
        }
        if self.fgo.stride < 1 {
            problems.push("fgo.stride must be ≥ 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Range(problems))
        }
    }

    pub fn scenario_config(&self, run: u32) -> ScenarioConfig {
        self.scenario.to_scenario(self.scenario.seed.wrapping_add(u64::from(run)))
    }

    /// Estimator noise densities follow the scenario; a noise-free scenario
    /// falls back to the nominal densities so the weights stay finite.
    fn densities(&self) -> (f64, f64) {
        let nominal = ScenarioSection::default();
        let gyro = if self.scenario.gyro_arw_deg_sqrt_h > 0.0 { self.scenario.gyro_arw() } else { nominal.gyro_arw() };
        let accel = if self.scenario.accel_vrw_ug_sqrt_hz > 0.0 { self.scenario.accel_vrw() } else { nominal.accel_vrw() };
        (gyro, accel)
    }

    pub fn kf_config(&self) -> KfConfig {
        let (gyro_arw, accel_vrw) = self.densities();
        let mut kf = KfConfig {
            coarse_window: self.oba_kf.coarse_window_s,
            pair_interval: self.oba.pair_interval_s,
            output_interval: self.oba_kf.output_interval_s,
            velocity_sigma: self.oba_kf.velocity_sigma_m_s,
            initial_heading_error_deg: self.scenario.initial_heading_error_deg,
            ..KfConfig::default()
        };
        kf.noise.gyro_arw = gyro_arw;
        kf.noise.accel_vrw = accel_vrw;
        kf
    }

    pub fn fgo_config(&self) -> FgoConfig {
        let (gyro_arw, accel_vrw) = self.densities();
        FgoConfig {
            keyframe_interval: self.fgo.keyframe_interval_s,
            gyro_arw,
            accel_vrw,
            stride: self.fgo.stride,
            feedback_passes: self.fgo.feedback_passes,
            ..FgoConfig::default()
        }
    }
}

/// RMSE of wrapped heading differences inside `[start, end]`, degrees.
/// Both series hold `(t_s, heading_deg)` with matching timestamps.
pub fn heading_rmse(est: &[(f64, f64)], truth: &[(f64, f64)], window: (f64, f64)) -> Result<f64, BenchError> {
    if est.len() != truth.len() {
        return Err(BenchError::Misaligned { index: est.len().min(truth.len()) });
    }
    let mut errors = Vec::new();
    for (i, (e, t)) in est.iter().zip(truth).enumerate() {
        if (e.0 - t.0).abs() > 1e-6 {
            return Err(BenchError::Misaligned { index: i });
        }
        errors.push((e.0, wrap_deg(e.1 - t.1)));
    }
    error_rmse(&errors, window)
}

/// RMSE of an already differenced `(t_s, error_deg)` series inside `[start, end]`.
pub fn error_rmse(errors: &[(f64, f64)], (start, end): (f64, f64)) -> Result<f64, BenchError> {
    let (sum, n) = errors
        .iter()
        .filter(|(t, _)| *t >= start - 1e-9 && *t <= end + 1e-9)
        .fold((0.0, 0usize), |(s, n), (_, e)| (s + e * e, n + 1));
    if n == 0 {
        return Err(BenchError::EmptyWindow { start, end });
    }
    Ok((sum / n as f64).sqrt())
}

/// SHA-256 over the little-endian bytes of every sample field.
pub fn stream_checksum(samples: &[ImuSample]) -> String {
    let mut hasher = Sha256::new();
    for s in samples {
        for v in [s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z] {
            hasher.update(v.to_le_bytes());
        }
    }
    hasher.finalize().iter().fold(String::with_capacity(64), |mut out, b| {
        let _ = write!(out, "{b:02x}");
        out
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    /// `(t_s, wrapped heading error deg)` per emitted epoch.
    pub errors: Vec<(f64, f64)>,
    /// Per-window RMSE in configuration order.
    pub window_rmse: Vec<f64>,
    pub final_rmse: f64,
    pub gyro_bias: Option<Vector3>,
    pub accel_bias: Option<Vector3>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MethodOutcome {
    Completed(MethodResult),
    /// Final-window error above [`DIVERGENCE_THRESHOLD_DEG`]; excluded from averages.
    Diverged(MethodResult),
    Failed(String),
}

impl MethodOutcome {
    pub fn completed(&self) -> Option<&MethodResult> {
        match self {
            MethodOutcome::Completed(r) => Some(r),
            _ => None,
        }
    }

    fn status(&self) -> &'static str {
        match self {
            MethodOutcome::Completed(_) => "completed",
            MethodOutcome::Diverged(_) => "diverged",
            MethodOutcome::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRecord {
    pub method: Method,
    /// Checksum of the stream this method consumed.
    pub stream_sha256: String,
    pub outcome: MethodOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: u32,
    pub seed: u64,
    pub stream_sha256: String,
    pub methods: Vec<MethodRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: Method,
    pub window_start_s: f64,
    pub window_end_s: f64,
    /// Mean of per-run RMSEs; NaN when no run completed.
    pub rmse_deg: f64,
    pub runs_used: u32,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub config: RunConfig,
    pub runs: Vec<RunRecord>,
    pub metrics: Vec<MetricsRow>,
}

impl BenchReport {
    pub fn metric(&self, method: Method, window: [f64; 2]) -> Option<&MetricsRow> {
        self.metrics.iter().find(|r| r.method == method && r.window_start_s == window[0] && r.window_end_s == window[1])
    }

    /// Completed results of one method across runs.
    pub fn completed(&self, method: Method) -> impl Iterator<Item = &MethodResult> {
        self.runs
            .iter()
            .flat_map(|r| r.methods.iter())
            .filter(move |m| m.method == method)
            .filter_map(|m| m.outcome.completed())
    }

    pub fn excluded(&self, method: Method) -> (usize, usize) {
        let outcomes = self.runs.iter().flat_map(|r| r.methods.iter()).filter(|m| m.method == method);
        outcomes.fold((0, 0), |(failed, diverged), m| match m.outcome {
            MethodOutcome::Failed(_) => (failed + 1, diverged),
            MethodOutcome::Diverged(_) => (failed, diverged + 1),
            MethodOutcome::Completed(_) => (failed, diverged),
        })
    }
}

struct Estimate {
    headings: Vec<(f64, RotationMatrix)>,
    gyro_bias: Option<Vector3>,
    accel_bias: Option<Vector3>,
}

fn estimate(method: Method, samples: &[ImuSample], earth: &EarthParams, cfg: &RunConfig) -> Result<Estimate, String> {
    match method {
        Method::Oba => {
            let epochs = coarse_align(samples, earth, cfg.oba.pair_interval_s).map_err(|e| e.to_string())?;
            Ok(Estimate {
                headings: epochs.into_iter().filter_map(|e| e.c_b_n.map(|c| (e.t, c))).collect(),
                gyro_bias: None,
                accel_bias: None,
            })
        }
        Method::ObaKf => {
            let run = run_two_procedure(samples, earth, &cfg.kf_config()).map_err(|e| e.to_string())?;
            Ok(Estimate {
                headings: run.epochs.into_iter().filter_map(|e| e.c_b_n.map(|c| (e.t, c))).collect(),
                gyro_bias: Some(run.final_state.gyro_bias()),
                accel_bias: Some(run.final_state.accel_bias()),
            })
        }
        Method::Fgo => {
            let run = align_series(samples, earth, &cfg.fgo_config()).map_err(|e| e.to_string())?;
            let last = run.last_solved().map(|e| (e.gyro_bias, e.accel_bias));
            Ok(Estimate {
                headings: run.epochs.into_iter().filter_map(|e| e.c_b_n.map(|c| (e.t, c))).collect(),
                gyro_bias: last.map(|l| l.0),
                accel_bias: last.map(|l| l.1),
            })
        }
    }
}

fn evaluate(
    method: Method,
    samples: &[ImuSample],
    sim: &crate::sim::Simulation,
    scenario: &ScenarioConfig,
    cfg: &RunConfig,
) -> MethodOutcome {
    let est = match estimate(method, samples, &scenario.earth, cfg) {
        Ok(est) => est,
        Err(msg) => return MethodOutcome::Failed(msg),
    };
    let mut errors = Vec::with_capacity(est.headings.len());
    for (t, c) in &est.headings {
        match true_heading_deg(&sim.truth, *t) {
            Ok(truth) => errors.push((*t, wrap_deg(heading_deg(c) - truth))),
            Err(e) => return MethodOutcome::Failed(e.to_string()),
        }
    }
    let mut window_rmse = Vec::with_capacity(cfg.rmse_windows.len());
    for &[a, b] in &cfg.rmse_windows {
        match error_rmse(&errors, (a, b)) {
            Ok(v) => window_rmse.push(v),
            Err(e) => return MethodOutcome::Failed(e.to_string()),
        }
    }
    let end = scenario.duration;
    let final_rmse = match error_rmse(&errors, ((end - DIVERGENCE_WINDOW_S).max(0.0), end)) {
        Ok(v) => v,
        Err(e) => return MethodOutcome::Failed(e.to_string()),
    };
    let result = MethodResult { errors, window_rmse, final_rmse, gyro_bias: est.gyro_bias, accel_bias: est.accel_bias };
    if final_rmse > DIVERGENCE_THRESHOLD_DEG {
        MethodOutcome::Diverged(result)
    } else {
        MethodOutcome::Completed(result)
    }
}

fn run_one(cfg: &RunConfig, run: u32) -> Result<RunRecord, BenchError> {
    let scenario = cfg.scenario_config(run);
    let sim = simulate(&scenario)?;
    let stream_sha256 = stream_checksum(&sim.samples);
    let methods = cfg
        .methods
        .iter()
        .map(|&method| {
            let samples = sim.samples.as_slice();
            MethodRecord {
                method,
                stream_sha256: stream_checksum(samples),
                outcome: evaluate(method, samples, &sim, &scenario, cfg),
            }
        })
        .collect();
    Ok(RunRecord { run, seed: scenario.rng_seed, stream_sha256, methods })
}

/// Simulates every run once and feeds the same stream to each method. Runs
/// execute in parallel; results are ordered by run index.
pub fn run_benchmark(cfg: &RunConfig) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let runs: Vec<RunRecord> =
        (0..cfg.monte_carlo_runs).into_par_iter().map(|r| run_one(cfg, r)).collect::<Result<_, _>>()?;
    let mut metrics = Vec::new();
    for &method in &cfg.methods {
        for (w, &[a, b]) in cfg.rmse_windows.iter().enumerate() {
            let values: Vec<f64> = runs
                .iter()
                .flat_map(|r| r.methods.iter())
                .filter(|m| m.method == method)
                .filter_map(|m| m.outcome.completed())
                .map(|res| res.window_rmse[w])
                .collect();
            let rmse_deg = if values.is_empty() { f64::NAN } else { values.iter().sum::<f64>() / values.len() as f64 };
            metrics.push(MetricsRow { method, window_start_s: a, window_end_s: b, rmse_deg, runs_used: values.len() as u32 });
        }
    }
    Ok(BenchReport { config: cfg.clone(), runs, metrics })
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.method,
            Sig9(r.window_start_s),
            Sig9(r.window_end_s),
            Sig9(r.rmse_deg),
            r.runs_used
        );
    }
    out
}

pub fn heading_error_csv(runs: &[RunRecord]) -> String {
    let mut out = String::from(HEADING_ERROR_CSV_HEADER);
    out.push('\n');
    for run in runs {
        for m in &run.methods {
            let res = match &m.outcome {
                MethodOutcome::Completed(r) | MethodOutcome::Diverged(r) => r,
                MethodOutcome::Failed(_) => continue,
            };
            for (t, e) in &res.errors {
                let _ = writeln!(out, "{},{},{},{}", Sig9(*t), run.run, m.method, Sig9(*e));
            }
        }
    }
    out
}

/// Rounds to nine significant digits for JSON output; non-finite values become null.
fn sig9(x: f64) -> Option<f64> {
    x.is_finite().then(|| Sig9(x).to_string().parse().expect("Sig9 output parses"))
}

fn vec_sig9(v: Option<Vector3>, scale: f64) -> Option<[Option<f64>; 3]> {
    v.map(|v| [sig9(v.x * scale), sig9(v.y * scale), sig9(v.z * scale)])
}

pub fn summary_json(report: &BenchReport) -> String {
    use serde_json::json;
    let metrics: Vec<_> = report
        .metrics
        .iter()
        .map(|r| {
            json!({
                "method": r.method,
                "window_start_s": sig9(r.window_start_s),
                "window_end_s": sig9(r.window_end_s),
                "rmse_deg": sig9(r.rmse_deg),
                "runs_used": r.runs_used,
            })
        })
        .collect();
    let runs: Vec<_> = report
        .runs
        .iter()
        .map(|run| {
            let methods: Vec<_> = run
                .methods
                .iter()
                .map(|m| {
                    let mut entry = json!({
                        "method": m.method,
                        "status": m.outcome.status(),
                        "stream_sha256": m.stream_sha256,
                    });
                    match &m.outcome {
                        MethodOutcome::Completed(r) | MethodOutcome::Diverged(r) => {
                            entry["final_rmse_deg"] = json!(sig9(r.final_rmse));
                            entry["window_rmse_deg"] = json!(r.window_rmse.iter().map(|v| sig9(*v)).collect::<Vec<_>>());
                            entry["gyro_bias_deg_h"] = json!(vec_sig9(r.gyro_bias.map(|v| v.map(deg_per_hour)), 1.0));
                            entry["accel_bias_mg"] = json!(vec_sig9(r.accel_bias, 1.0 / MILLI_G));
                        }
                        MethodOutcome::Failed(msg) => entry["error"] = json!(msg),
                    }
                    entry
                })
                .collect();
            json!({ "run": run.run, "seed": run.seed, "stream_sha256": run.stream_sha256, "methods": methods })
        })
        .collect();
    let excluded: serde_json::Map<String, serde_json::Value> = report
        .config
        .methods
        .iter()
        .map(|&m| {
            let (failed, diverged) = report.excluded(m);
            (m.name().to_string(), json!({ "failed": failed, "diverged": diverged }))
        })
        .collect();
    let summary = json!({
        "seed": report.config.scenario.seed,
        "config": report.config,
        "metrics": metrics,
        "excluded": excluded,
        "runs": runs,
    });
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    text
}

/// Writes `metrics.csv`, `summary.json` and, when enabled, `heading_error.csv`.
pub fn emit_outputs(report: &BenchReport, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    std::fs::create_dir_all(dir).map_err(|source| BenchError::Io { path: dir.to_path_buf(), source })?;
    let mut files = vec![("metrics.csv", metrics_csv(&report.metrics))];
    if report.config.emit_plot_data {
        files.push(("heading_error.csv", heading_error_csv(&report.runs)));
    }
    files.push(("summary.json", summary_json(report)));
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|source| BenchError::Io { path: path.clone(), source })?;
        written.push(path);
    }
    Ok(written)
}
