//! Seeded trial grids over trace durations and estimators.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dwell::{histograms_from_trace, State};
use crate::error::{domain, Result};
use crate::estimate::{Method, RateEstimate};
use crate::ga::{estimate_ga, GaConfig};
use crate::lm::{estimate_lm, LmConfig};
use crate::mfr::{estimate_mfr, train_pair, CorpusConfig, MfrPair, DEFAULT_RIDGE};
use crate::seed::{derive_seed, rng_from_seed, DEFAULT_SEED};
use crate::sim::{generate_trace, EmitterModel, PhotonNoise, TraceConfig};

/// Training protocol for the per-duration MFR models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfrSettings {
    pub training_sets: usize,
    pub tau_range: (f64, f64),
    pub ridge_lambda: f64,
}

impl Default for MfrSettings {
    fn default() -> Self {
        MfrSettings {
            training_sets: crate::mfr::DEFAULT_TRAINING_SETS,
            tau_range: crate::mfr::DEFAULT_TAU_RANGE,
            ridge_lambda: DEFAULT_RIDGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub tau_on: f64,
    pub tau_off: f64,
    pub bin_width: f64,
    pub durations: Vec<f64>,
    pub noise: PhotonNoise,
    pub trials_per_cell: usize,
    pub base_seed: u64,
    #[serde(default = "default_on_counts")]
    pub mean_on_counts: f64,
    #[serde(default = "default_off_counts")]
    pub mean_off_counts: f64,
    #[serde(default)]
    pub lm: LmConfig,
    #[serde(default)]
    pub ga: GaConfig,
    #[serde(default)]
    pub mfr: MfrSettings,
}

fn default_on_counts() -> f64 {
    TraceConfig::default().mean_on_counts
}

fn default_off_counts() -> f64 {
    TraceConfig::default().mean_off_counts
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            tau_on: 15e-3,
            tau_off: 45e-3,
            bin_width: 1e-3,
            durations: vec![0.2, 2.0, 20.0, 200.0, 1000.0],
            noise: PhotonNoise::Poisson,
            trials_per_cell: 50,
            base_seed: DEFAULT_SEED,
            mean_on_counts: default_on_counts(),
            mean_off_counts: default_off_counts(),
            lm: LmConfig::default(),
            ga: GaConfig::default(),
            mfr: MfrSettings::default(),
        }
    }
}

impl Scenario {
    /// Lifetimes of a single NV center (4.8 ms on, 6.7 ms off).
    pub fn nv_center() -> Self {
        Scenario {
            tau_on: 4.8e-3,
            tau_off: 6.7e-3,
            ..Scenario::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_on > 0.0 && self.tau_off > 0.0 && self.bin_width > 0.0) {
            return domain("scenario lifetimes and bin width must be positive");
        }
        if self.durations.is_empty() || self.durations.iter().any(|d| !(*d >= self.bin_width)) {
            return domain("scenario durations must be at least one bin");
        }
        if self.durations.windows(2).any(|w| w[0] >= w[1]) {
            return domain("scenario durations must be strictly ascending");
        }
        if self.trials_per_cell == 0 {
            return domain("trials_per_cell must be at least 1");
        }
        self.lm.validate()?;
        self.ga.validate()
    }

    pub fn model(&self) -> EmitterModel {
        EmitterModel::two_state(self.tau_on, self.tau_off)
    }

    pub fn trace_config(&self) -> TraceConfig {
        TraceConfig {
            bin_width: self.bin_width,
            photon_noise: self.noise,
            mean_on_counts: self.mean_on_counts,
            mean_off_counts: self.mean_off_counts,
        }
    }

    pub fn truth(&self, state: State) -> f64 {
        match state {
            State::On => self.tau_on,
            State::Off => self.tau_off,
        }
    }

    pub fn trial_seed(&self, duration: f64, method: Method, trial: usize) -> u64 {
        derive_seed(self.base_seed, &[duration.to_bits(), method.key(), trial as u64])
    }

    /// MFR models for one duration, trained on the scenario's trace settings.
    pub fn train_mfr(&self, duration: f64) -> Result<MfrPair> {
        let cfg = CorpusConfig {
            tau_range: self.mfr.tau_range,
            count: self.mfr.training_sets,
            ..CorpusConfig::new(duration, self.trace_config())
        };
        let seed = derive_seed(self.base_seed, &[duration.to_bits(), 0x7EA1]);
        train_pair(&cfg, self.mfr.ridge_lambda, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub method: Method,
    pub duration: f64,
    pub trial: usize,
    pub on: RateEstimate,
    pub off: RateEstimate,
}

impl TrialResult {
    pub fn get(&self, state: State) -> &RateEstimate {
        match state {
            State::On => &self.on,
            State::Off => &self.off,
        }
    }
}

/// One seeded trial: simulate, threshold, histogram, estimate both states.
/// Failures come back as non-converged estimates.
pub fn run_trial(
    scenario: &Scenario,
    duration: f64,
    method: Method,
    trial: usize,
    mfr: Option<&MfrPair>,
) -> TrialResult {
    let seed = scenario.trial_seed(duration, method, trial);
    let failed = |reason: &str| TrialResult {
        method,
        duration,
        trial,
        on: RateEstimate::failed(method, reason),
        off: RateEstimate::failed(method, reason),
    };
    let trace = match generate_trace(&scenario.model(), duration, &scenario.trace_config(), seed) {
        Ok(t) => t,
        Err(_) => return failed("simulation"),
    };
    let (h_on, h_off) = match histograms_from_trace(&trace) {
        Ok(h) => h,
        Err(_) => return failed("no_histogram"),
    };
    let estimate = |hist: &crate::dwell::DwellHistogram, state: State| match method {
        Method::Lm => estimate_lm(hist, scenario.ga.tau_range, &scenario.lm),
        Method::Mfr => match mfr {
            Some(pair) => estimate_mfr(pair.get(state), hist, trace.duration()),
            None => RateEstimate::failed(Method::Mfr, "no_model"),
        },
        Method::Ga => {
            let mut rng = rng_from_seed(derive_seed(seed, &[state as u64 + 1]));
            estimate_ga(hist, &scenario.ga, &mut rng)
        }
    };
    TrialResult {
        method,
        duration,
        trial,
        on: estimate(&h_on, State::On),
        off: estimate(&h_off, State::Off),
    }
}

/// `max(0, 1 - |tau_hat - tau| / tau)`
pub fn accuracy(tau_hat: f64, tau_true: f64) -> f64 {
    (1.0 - ((tau_hat - tau_true) / tau_true).abs()).max(0.0)
}

/// Sample standard deviation; `None` below two estimates.
pub fn precision(estimates: &[f64]) -> Option<f64> {
    let n = estimates.len();
    if n < 2 {
        return None;
    }
    let m = estimates.iter().sum::<f64>() / n as f64;
    Some((estimates.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub method: Method,
    pub state: State,
    pub duration: f64,
    pub trials: usize,
    pub converged: usize,
    /// Median over converged trials; NaN when none converged.
    pub median_rel_error: f64,
    pub accuracy: f64,
    /// Over converged trials; `None` below two.
    pub precision: Option<f64>,
    pub convergence_rate: f64,
    /// Fewer than half the trials converged.
    pub blank: bool,
}

/// Aggregates trials of one (method, state, duration) cell.
pub fn aggregate(trials: &[&TrialResult], state: State, truth: f64) -> BenchCell {
    let first = trials.first().expect("cell has trials");
    let ok: Vec<f64> = trials
        .iter()
        .map(|t| t.get(state))
        .filter(|e| e.converged)
        .map(|e| e.tau_hat)
        .collect();
    let mut rel: Vec<f64> = ok.iter().map(|t| ((t - truth) / truth).abs()).collect();
    let med = median(&mut rel);
    let rate = ok.len() as f64 / trials.len() as f64;
    BenchCell {
        method: first.method,
        state,
        duration: first.duration,
        trials: trials.len(),
        converged: ok.len(),
        median_rel_error: med,
        accuracy: if med.is_nan() { 0.0 } else { (1.0 - med).max(0.0) },
        precision: precision(&ok),
        convergence_rate: rate,
        blank: rate < 0.5,
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub cells: Vec<BenchCell>,
    /// Every trial, ordered by (method, duration, trial).
    pub trials: Vec<TrialResult>,
}

impl SweepOutput {
    pub fn cell(&self, method: Method, state: State, duration: f64) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.state == state && c.duration == duration)
    }
}

/// Runs `trials_per_cell` trials for every (method, duration) and
/// aggregates per state. MFR models are trained per duration first.
pub fn sweep(scenario: &Scenario, methods: &[Method]) -> Result<SweepOutput> {
    scenario.validate()?;
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();

    let models: Vec<Option<MfrPair>> = if methods.contains(&Method::Mfr) {
        scenario
            .durations
            .iter()
            .map(|&d| scenario.train_mfr(d).map(Some))
            .collect::<Result<_>>()?
    } else {
        vec![None; scenario.durations.len()]
    };

    let mut jobs = Vec::new();
    for &m in &methods {
        for di in 0..scenario.durations.len() {
            for t in 0..scenario.trials_per_cell {
                jobs.push((m, di, t));
            }
        }
    }
    let trials: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(m, di, t)| run_trial(scenario, scenario.durations[di], m, t, models[di].as_ref()))
        .collect();

    let mut cells = Vec::new();
    for chunk in trials.chunks(scenario.trials_per_cell) {
        let refs: Vec<&TrialResult> = chunk.iter().collect();
        for state in [State::On, State::Off] {
            cells.push(aggregate(&refs, state, scenario.truth(state)));
        }
    }
    Ok(SweepOutput { cells, trials })
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6e}")
    } else {
        "NA".into()
    }
}

/// `method,state,duration_s,trials,converged,accuracy,median_rel_err,precision_s`
pub fn results_csv(cells: &[BenchCell]) -> String {
    let mut s = String::from("method,state,duration_s,trials,converged,accuracy,median_rel_err,precision_s\n");
    for c in cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            c.method,
            c.state,
            c.duration,
            c.trials,
            c.converged,
            num(c.accuracy),
            num(c.median_rel_error),
            c.precision.map(num).unwrap_or_else(|| "NA".into()),
        );
    }
    s
}

/// Heatmap matrix for one state: a row per method, a column per
/// duration. Blank cells are left empty.
pub fn heatmap_csv(cells: &[BenchCell], state: State, metric: Metric) -> String {
    let mut durations: Vec<f64> = cells.iter().map(|c| c.duration).collect();
    durations.sort_by(f64::total_cmp);
    durations.dedup();
    let mut methods: Vec<Method> = cells.iter().map(|c| c.method).collect();
    methods.sort();
    methods.dedup();

    let mut s = String::from("method");
    for d in &durations {
        let _ = write!(s, ",{d}");
    }
    s.push('\n');
    for m in methods {
        s.push_str(m.as_str());
        for &d in &durations {
            s.push(',');
            let cell = cells
                .iter()
                .find(|c| c.method == m && c.state == state && c.duration == d);
            if let Some(c) = cell.filter(|c| !c.blank) {
                let v = match metric {
                    Metric::Accuracy => Some(c.accuracy),
                    Metric::Precision => c.precision,
                };
                if let Some(v) = v {
                    s.push_str(&num(v));
                }
            }
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Precision,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
        }
    }
}

/// Fixed-width text table of the cells.
pub fn summary_table(cells: &[BenchCell]) -> String {
    let mut s = format!(
        "{:<8}{:<6}{:>10}{:>8}{:>10}{:>12}{:>14}\n",
        "method", "state", "duration", "conv", "accuracy", "med_rel_err", "precision_ms"
    );
    for c in cells {
        let prec = c
            .precision
            .map(|p| format!("{:.4}", p * 1e3))
            .unwrap_or_else(|| "NA".into());
        let _ = writeln!(
            s,
            "{:<8}{:<6}{:>10}{:>8}{:>10.3}{:>12.4}{:>14}{}",
            c.method.as_str(),
            c.state.as_str(),
            format!("{}s", c.duration),
            format!("{}/{}", c.converged, c.trials),
            c.accuracy,
            c.median_rel_error,
            prec,
            if c.blank { "  (blank)" } else { "" },
        );
    }
    s
}
