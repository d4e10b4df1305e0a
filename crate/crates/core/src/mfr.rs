//! Multi-feature regression: a linear map from dwell-histogram occurrence
//! counts to a lifetime, fitted by ridge-regularized least squares on
//! simulated, labelled traces.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dwell::{histograms_from_trace, DwellHistogram, State};
use crate::error::{domain, BlinkError, Result};
use crate::estimate::{Method, RateEstimate};
use crate::seed::{derive_seed, rng_from_seed};
use crate::sim::{generate_trace, EmitterModel, TraceConfig};

pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const DEFAULT_TRAINING_SETS: usize = 20;
pub const DEFAULT_TAU_RANGE: (f64, f64) = (1e-3, 0.1);

/// `[1, x_1, ..., x_n]` where `x_j` is the occurrence count of dwells
/// lasting `j` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// Set when the histogram had dwells longer than `n` bins.
    pub truncated: bool,
}

impl FeatureVector {
    pub fn n(&self) -> usize {
        self.values.len() - 1
    }
}

pub fn featurize(hist: &DwellHistogram, n: usize) -> FeatureVector {
    let mut values = vec![0.0; n + 1];
    values[0] = 1.0;
    let mut truncated = false;
    for &(d, c) in &hist.pairs {
        let j = d as usize;
        if j <= n {
            values[j] = c as f64;
        } else if c > 0 {
            truncated = true;
        }
    }
    FeatureVector { values, truncated }
}

/// Default feature count: long enough for a dwell ten times the upper
/// label bound.
pub fn default_feature_count(tau_hi: f64, bin_width: f64) -> usize {
    (10.0 * tau_hi / bin_width).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    pub samples: Vec<(FeatureVector, f64)>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfrModel {
    pub n: usize,
    #[serde(rename = "bin_width_s")]
    pub bin_width: f64,
    #[serde(rename = "trained_duration_s")]
    pub trained_duration: f64,
    pub ridge_lambda: f64,
    /// `[w_0 (bias), w_1, ..., w_n]`.
    pub weights: Vec<f64>,
}

/// Closed-form ridge regression with an unpenalized bias.
///
/// Minimizes `sum_i (w . x_i - tau_i)^2 + lambda |w_1..n|^2`. Features and
/// labels are centred so the bias drops out; the slopes then solve either
/// the primal normal equations `(Xc^T Xc + lambda I) w = Xc^T yc` or, when
/// there are fewer samples than features, the equivalent dual system
/// `w = Xc^T (Xc Xc^T + lambda I)^-1 yc`.
pub fn train(corpus: &TrainingSet, ridge_lambda: f64) -> Result<MfrModel> {
    let big_n = corpus.len();
    if big_n == 0 {
        return domain("training set is empty");
    }
    if !(ridge_lambda >= 0.0) || !ridge_lambda.is_finite() {
        return domain("ridge lambda must be a finite non-negative number");
    }
    let n = corpus.samples[0].0.n();
    if corpus.samples.iter().any(|(x, _)| x.n() != n) {
        return domain("training feature vectors have different lengths");
    }
    if corpus.samples.iter().any(|(_, y)| !(*y > 0.0)) {
        return domain("training labels must be positive");
    }

    let x = DMatrix::from_fn(big_n, n, |i, j| corpus.samples[i].0.values[j + 1]);
    let y = DVector::from_iterator(big_n, corpus.samples.iter().map(|s| s.1));
    let x_mean = x.row_mean();
    let y_mean = y.mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let yc = y.add_scalar(-y_mean);

    let slopes = if big_n > n {
        let mut a = xc.transpose() * &xc;
        for i in 0..n {
            a[(i, i)] += ridge_lambda;
        }
        let rhs = xc.transpose() * &yc;
        a.cholesky().ok_or(BlinkError::RankDeficient)?.solve(&rhs)
    } else {
        if ridge_lambda == 0.0 {
            return Err(BlinkError::RankDeficient);
        }
        let mut g = &xc * xc.transpose();
        for i in 0..big_n {
            g[(i, i)] += ridge_lambda;
        }
        let alpha = g.cholesky().ok_or(BlinkError::RankDeficient)?.solve(&yc);
        xc.transpose() * alpha
    };
    let bias = y_mean - (x_mean * &slopes)[(0, 0)];
    let mut weights = Vec::with_capacity(n + 1);
    weights.push(bias);
    weights.extend(slopes.iter());
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(BlinkError::RankDeficient);
    }
    Ok(MfrModel {
        n,
        bin_width: 0.0,
        trained_duration: 0.0,
        ridge_lambda,
        weights,
    })
}

/// Least-squares cost of `weights` on `corpus`, without the penalty.
pub fn training_cost(weights: &[f64], corpus: &TrainingSet) -> f64 {
    corpus
        .samples
        .iter()
        .map(|(x, y)| {
            let p: f64 = weights.iter().zip(&x.values).map(|(w, v)| w * v).sum();
            (p - y).powi(2)
        })
        .sum()
}

/// `w . x`. Negative outputs are returned unchanged with a warning.
pub fn predict(model: &MfrModel, features: &FeatureVector) -> Result<f64> {
    if features.values.len() != model.weights.len() {
        return domain(format!(
            "feature length {} does not match model length {}",
            features.values.len(),
            model.weights.len()
        ));
    }
    let tau: f64 = model.weights.iter().zip(&features.values).map(|(w, x)| w * x).sum();
    if tau <= 0.0 {
        log::debug!("MFR prediction {tau} s is not a valid lifetime");
    }
    Ok(tau)
}

/// Trains per-state models for one trace duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Label range (seconds); labels are drawn log-uniformly.
    pub tau_range: (f64, f64),
    pub count: usize,
    pub trace_duration: f64,
    pub trace: TraceConfig,
    /// Feature count; `None` uses [`default_feature_count`].
    pub n_features: Option<usize>,
}

impl CorpusConfig {
    pub fn new(trace_duration: f64, trace: TraceConfig) -> Self {
        CorpusConfig {
            tau_range: DEFAULT_TAU_RANGE,
            count: DEFAULT_TRAINING_SETS,
            trace_duration,
            trace,
            n_features: None,
        }
    }

    pub fn feature_count(&self) -> usize {
        self.n_features
            .unwrap_or_else(|| default_feature_count(self.tau_range.1, self.trace.bin_width))
    }
}

/// One labelled corpus per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpora {
    pub on: TrainingSet,
    pub off: TrainingSet,
}

fn log_uniform(lo: f64, hi: f64, rng: &mut crate::seed::Rng) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Simulates `count` labelled traces. Each trace draws its on and off
/// lifetimes independently and log-uniformly from `tau_range`, so one
/// trace labels both corpora. A trace too short to hold an interior dwell
/// contributes all-zero features.
pub fn generate_training_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Corpora> {
    let (lo, hi) = cfg.tau_range;
    if !(lo > 0.0 && lo < hi) {
        return domain("training tau range must satisfy 0 < lo < hi");
    }
    if cfg.count == 0 {
        return domain("training set count must be at least 1");
    }
    let n = cfg.feature_count();
    let bw = cfg.trace.bin_width;
    let samples: Vec<Result<[(FeatureVector, f64); 2]>> = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, &[i as u64]));
            let tau_on = log_uniform(lo, hi, &mut rng);
            let tau_off = log_uniform(lo, hi, &mut rng);
            let model = EmitterModel::two_state(tau_on, tau_off);
            let trace = generate_trace(&model, cfg.trace_duration, &cfg.trace, rng.random())?;
            let (on, off) = match histograms_from_trace(&trace) {
                Ok(h) => h,
                Err(BlinkError::EmptyHistogram | BlinkError::NoSeparation) => (
                    DwellHistogram::new(State::On, bw, Vec::new())?,
                    DwellHistogram::new(State::Off, bw, Vec::new())?,
                ),
                Err(e) => return Err(e),
            };
            Ok([(featurize(&on, n), tau_on), (featurize(&off, n), tau_off)])
        })
        .collect();
    let mut corpora = Corpora {
        on: TrainingSet::default(),
        off: TrainingSet::default(),
    };
    for s in samples {
        let [on, off] = s?;
        corpora.on.samples.push(on);
        corpora.off.samples.push(off);
    }
    Ok(corpora)
}

/// An on/off model pair calibrated to one trace duration.
#[derive(Debug, Clone, PartialEq)]
pub struct MfrPair {
    pub on: MfrModel,
    pub off: MfrModel,
}

impl MfrPair {
    pub fn get(&self, state: State) -> &MfrModel {
        match state {
            State::On => &self.on,
            State::Off => &self.off,
        }
    }
}

pub fn train_pair(cfg: &CorpusConfig, ridge_lambda: f64, seed: u64) -> Result<MfrPair> {
    let corpora = generate_training_corpus(cfg, seed)?;
    if cfg.count < cfg.feature_count() + 1 && ridge_lambda > 0.0 {
        log::warn!(
            "{} training sets for {} features: weights are determined by the ridge penalty",
            cfg.count,
            cfg.feature_count()
        );
    }
    let stamp = |mut m: MfrModel| {
        m.bin_width = cfg.trace.bin_width;
        m.trained_duration = cfg.trace_duration;
        m
    };
    Ok(MfrPair {
        on: stamp(train(&corpora.on, ridge_lambda)?),
        off: stamp(train(&corpora.off, ridge_lambda)?),
    })
}

/// Applies a trained model to a measured histogram.
pub fn estimate_mfr(model: &MfrModel, hist: &DwellHistogram, trace_duration: f64) -> RateEstimate {
    if model.trained_duration > 0.0 && (trace_duration / model.trained_duration - 1.0).abs() > 0.01 {
        log::warn!(
            "MFR model trained on {} s traces applied to a {} s trace",
            model.trained_duration,
            trace_duration
        );
    }
    if model.bin_width > 0.0 && (hist.bin_width / model.bin_width - 1.0).abs() > 1e-9 {
        log::warn!("MFR model bin width differs from the trace bin width");
    }
    let fv = featurize(hist, model.n);
    match predict(model, &fv) {
        Ok(tau) => RateEstimate::new(Method::Mfr, tau, 0.0, tau > 0.0 && tau.is_finite())
            .with_diag("truncated", fv.truncated as u8 as f64),
        Err(_) => RateEstimate::failed(Method::Mfr, "feature_mismatch"),
    }
}
