//! Unsupervised lifetime extraction by a two-individual genetic algorithm.
//!
//! An individual is a random subset of a dwell histogram's
//! `(duration, occurrences)` pairs. Each generation clusters both
//! individuals with K-means++ and scores them by mean silhouette; the
//! better one survives. A survivor that clears the silhouette threshold
//! yields a lifetime from its tightest cluster, otherwise it is cloned,
//! the clones exchange points, and both are mutated. Accepted lifetimes
//! accumulate in a log until a rolling window of them agrees.

pub mod cluster;

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dwell::{mean_dwell, DwellHistogram};
use crate::error::{domain, BlinkError, Result};
use crate::estimate::{Method, RateEstimate};
use crate::seed::Rng;
use cluster::{kmeans_cluster, mean_intra_distance, silhouette, Clustering, KmeansOptions, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    /// Admissible lifetimes, seconds.
    pub tau_range: (f64, f64),
    pub k_init: usize,
    /// Consecutive sub-threshold generations before k is raised.
    pub k_patience: usize,
    pub k_max: usize,
    pub silhouette_threshold: f64,
    pub subset_fraction: f64,
    pub mutation_rate: f64,
    /// Fraction of slots swapped between the two clones in crossover.
    pub exchange_fraction: f64,
    pub elitism_penalty_weight: f64,
    pub rolling_window: usize,
    pub stability_rel_tol: f64,
    pub max_iterations: usize,
    /// Weights of (last estimate, mean, mode, median) for the fallback blend.
    pub blend_weights: [f64; 4],
    pub kmeans: KmeansOptions,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            tau_range: (1e-3, 0.1),
            k_init: 3,
            k_patience: 20,
            k_max: 8,
            silhouette_threshold: 0.6,
            subset_fraction: 0.7,
            mutation_rate: 0.05,
            exchange_fraction: 0.5,
            elitism_penalty_weight: 0.5,
            rolling_window: 10,
            stability_rel_tol: 0.02,
            max_iterations: 500,
            blend_weights: [0.4, 0.2, 0.2, 0.2],
            kmeans: KmeansOptions::default(),
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.tau_range;
        if !(lo > 0.0 && lo < hi) {
            return domain("GA tau range must satisfy 0 < lo < hi");
        }
        if self.k_init < 2 || self.k_max < self.k_init {
            return domain("GA cluster counts must satisfy 2 <= k_init <= k_max");
        }
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.silhouette_threshold) || !unit(self.stability_rel_tol) {
            return domain("silhouette threshold and stability tolerance must lie in (0, 1)");
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return domain("subset fraction must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) || !(0.0..=1.0).contains(&self.exchange_fraction) {
            return domain("mutation rate and exchange fraction must lie in [0, 1]");
        }
        if !(self.elitism_penalty_weight >= 0.0) {
            return domain("elitism penalty weight must be non-negative");
        }
        if self.rolling_window == 0 || self.max_iterations == 0 || self.k_patience == 0 {
            return domain("rolling window, patience and iteration cap must be positive");
        }
        let w = self.blend_weights;
        if w.iter().any(|x| !(*x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return domain("blend weights must be non-negative and sum to 1");
        }
        Ok(())
    }
}

/// Rough lifetime used to seed and sanity-check estimators: the median of
/// the mean dwell, `longest / ln(1 + events)` and the most frequent
/// duration, clamped into `tau_range`.
pub fn heuristic_estimate(hist: &DwellHistogram, tau_range: (f64, f64)) -> Result<f64> {
    let total = hist.total_occurrences();
    if total == 0 {
        return domain("heuristic estimate of an empty histogram");
    }
    let bw = hist.bin_width;
    let c1 = mean_dwell(hist)?;
    let longest = hist.pairs.iter().filter(|p| p.1 > 0).map(|p| p.0).max().unwrap() as f64 * bw;
    let c2 = longest / (1.0 + total as f64).ln();
    // first maximum wins, i.e. the shortest duration on ties
    let mut top = hist.pairs[0];
    for &p in &hist.pairs {
        if p.1 > top.1 {
            top = p;
        }
    }
    let c3 = top.0 as f64 * bw;
    let mut c = [c1, c2, c3];
    c.sort_by(f64::total_cmp);
    Ok(c[1].clamp(tau_range.0, tau_range.1))
}

/// A subset of histogram pairs `(duration_index, occurrences)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Individual {
    pub points: Vec<(u32, u64)>,
}

impl Individual {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn occupied(hist: &DwellHistogram) -> Vec<(u32, u64)> {
    hist.pairs.iter().copied().filter(|p| p.1 > 0).collect()
}

/// Draws `ceil(fraction * pairs)` distinct pairs (at least `min_size`).
pub fn spawn_individual(
    hist: &DwellHistogram,
    subset_fraction: f64,
    min_size: usize,
    rng: &mut Rng,
) -> Result<Individual> {
    let pairs = occupied(hist);
    if pairs.len() < min_size.max(1) {
        return Err(BlinkError::InsufficientData {
            what: "histogram pairs",
            needed: min_size.max(1),
            got: pairs.len(),
        });
    }
    let m = ((subset_fraction * pairs.len() as f64).ceil() as usize)
        .max(min_size)
        .min(pairs.len());
    let mut idx = sample(rng, pairs.len(), m).into_vec();
    idx.sort_unstable();
    Ok(Individual {
        points: idx.into_iter().map(|i| pairs[i]).collect(),
    })
}

/// Clones `ind` twice and swaps `floor(exchange_fraction * len)` randomly
/// chosen slots of the first clone with random slots of the second. The
/// children may hold repeated pairs; [`mutate`] replaces those.
pub fn crossover_clone_exchange(ind: &Individual, exchange_fraction: f64, rng: &mut Rng) -> (Individual, Individual) {
    let mut a = ind.clone();
    let mut b = ind.clone();
    let len = ind.len();
    if len < 2 {
        return (a, b);
    }
    let swaps = (exchange_fraction * len as f64).floor() as usize;
    for i in sample(rng, len, swaps.min(len)).into_iter() {
        let j = rng.random_range(0..len);
        std::mem::swap(&mut a.points[i], &mut b.points[j]);
    }
    (a, b)
}

/// Replaces each point with probability `rate` (and every repeated point
/// unconditionally) by a histogram pair the individual does not hold yet.
/// A point is kept when no such pair is left.
pub fn mutate(ind: &Individual, hist: &DwellHistogram, rate: f64, rng: &mut Rng) -> Individual {
    let pairs = occupied(hist);
    let mut held: BTreeMap<u32, usize> = BTreeMap::new();
    for p in &ind.points {
        *held.entry(p.0).or_default() += 1;
    }
    let mut out = ind.points.clone();
    let mut seen = std::collections::BTreeSet::new();
    for slot in out.iter_mut() {
        let roll = rng.random::<f64>();
        let repeated = !seen.insert(slot.0);
        if !(repeated || roll < rate) {
            continue;
        }
        let free: Vec<(u32, u64)> = pairs.iter().copied().filter(|p| !held.contains_key(&p.0)).collect();
        if free.is_empty() {
            continue;
        }
        let new = free[rng.random_range(0..free.len())];
        let old = slot.0;
        let cnt = held.get_mut(&old).unwrap();
        *cnt -= 1;
        if *cnt == 0 {
            held.remove(&old);
        }
        held.insert(new.0, 1);
        seen.insert(new.0);
        *slot = new;
    }
    Individual { points: out }
}

/// Lifetime from one cluster of `(duration_s, occurrences)` points:
/// `D_M / (ln 2 * |ln C_max - ln C_M|)`, where `M` is the (lower) median
/// point by duration and `C_max` the count at the longest duration.
pub fn extract_tau(points: &[(f64, f64)]) -> Result<f64> {
    if points.iter().any(|p| !(p.1 > 0.0)) {
        return domain("occurrence counts must be positive");
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let distinct = sorted.windows(2).filter(|w| w[0].0 != w[1].0).count() + usize::from(!sorted.is_empty());
    if distinct < 2 {
        return Err(BlinkError::InsufficientData {
            what: "distinct durations in cluster",
            needed: 2,
            got: distinct,
        });
    }
    let median = sorted[(sorted.len() - 1) / 2];
    // highest count among the longest-duration points (sorted last)
    let longest = *sorted.last().unwrap();
    let spread = (longest.1.ln() - median.1.ln()).abs();
    if spread == 0.0 {
        return Err(BlinkError::DegenerateCluster);
    }
    Ok(median.0 / (std::f64::consts::LN_2 * spread))
}

/// Min-max scales both axes of `raw` into `[0, 1]`.
fn normalize(raw: &[(f64, f64)]) -> Vec<Point> {
    let span = |f: fn(&(f64, f64)) -> f64| {
        let lo = raw.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = raw.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi - lo)
    };
    let (x0, dx) = span(|p| p.0);
    let (y0, dy) = span(|p| p.1);
    let scale = |v: f64, lo: f64, d: f64| if d > 0.0 { (v - lo) / d } else { 0.0 };
    raw.iter().map(|p| [scale(p.0, x0, dx), scale(p.1, y0, dy)]).collect()
}

#[derive(Debug, Clone)]
struct Evaluation {
    silhouette: f64,
    candidate: Option<f64>,
}

fn evaluate(ind: &Individual, k: usize, bw: f64, cfg: &GaConfig, rng: &mut Rng) -> Result<Evaluation> {
    let raw: Vec<(f64, f64)> = ind.points.iter().map(|&(d, c)| (d as f64 * bw, c as f64)).collect();
    let k = k.min(raw.len());
    if k < 2 {
        return Ok(Evaluation {
            silhouette: -1.0,
            candidate: None,
        });
    }
    let pts = normalize(&raw);
    let clustering: Clustering = kmeans_cluster(&pts, k, &cfg.kmeans, rng)?;
    let sil = silhouette(&pts, &clustering)?.mean_score;

    let mut order: Vec<(f64, usize)> = (0..k)
        .filter_map(|c| mean_intra_distance(&pts, &clustering.members(c)).map(|d| (d, c)))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    // tightest cluster only; a degenerate one yields no candidate
    let candidate = order.first().and_then(|&(_, c)| {
        let members: Vec<(f64, f64)> = clustering.members(c).into_iter().map(|i| raw[i]).collect();
        extract_tau(&members).ok().filter(|t| t.is_finite())
    });
    Ok(Evaluation {
        silhouette: sil,
        candidate,
    })
}

/// One accepted lifetime in the GA log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub tau_s: f64,
    pub silhouette: f64,
    pub k: usize,
}

#[derive(Debug, Clone)]
pub struct GaOutcome {
    pub estimate: RateEstimate,
    pub log: Vec<LogEntry>,
    /// True when the rolling window stabilized before the iteration cap.
    pub stabilized: bool,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Most frequent value after rounding to multiples of `bw`; ties go to the
/// smallest.
fn rounded_mode(values: &[f64], bw: f64) -> f64 {
    let mut tally: BTreeMap<i64, usize> = BTreeMap::new();
    for v in values {
        *tally.entry((v / bw).round() as i64).or_default() += 1;
    }
    let mut best = (0i64, 0usize);
    for (&k, &n) in &tally {
        if n > best.1 {
            best = (k, n);
        }
    }
    best.0 as f64 * bw
}

/// Runs the genetic algorithm on one dwell histogram.
pub fn run_ga(hist: &DwellHistogram, cfg: &GaConfig, rng: &mut Rng) -> Result<GaOutcome> {
    cfg.validate()?;
    let bw = hist.bin_width;
    let (lo, hi) = cfg.tau_range;
    let seed_tau = heuristic_estimate(hist, cfg.tau_range)?;
    let spawn = |rng: &mut Rng| spawn_individual(hist, cfg.subset_fraction, cfg.k_init, rng);

    let mut pair = [spawn(rng)?, spawn(rng)?];
    let mut k = cfg.k_init;
    let mut misses = 0usize;
    let mut accepted: Vec<f64> = Vec::new();
    let mut log = Vec::new();

    for iteration in 0..cfg.max_iterations {
        let reference = if accepted.is_empty() {
            None
        } else {
            let tail = &accepted[accepted.len().saturating_sub(cfg.rolling_window)..];
            Some(tail.iter().sum::<f64>() / tail.len() as f64)
        };
        let mut scored = Vec::with_capacity(2);
        for ind in &pair {
            let ev = evaluate(ind, k, bw, cfg, rng)?;
            let score = match (ev.candidate, reference) {
                // nothing extractable: rank below any usable clustering
                (None, _) => -1.0,
                (Some(t), Some(r)) => ev.silhouette - cfg.elitism_penalty_weight * (t - r).abs() / r,
                (Some(_), None) => ev.silhouette,
            };
            scored.push((score, ev));
        }
        let best = if scored[1].0 > scored[0].0 { 1 } else { 0 };
        let (score, ev) = &scored[best];

        match ev.candidate {
            Some(tau) if *score > cfg.silhouette_threshold && tau >= lo && tau <= hi => {
                accepted.push(tau);
                log.push(LogEntry {
                    iteration,
                    tau_s: tau,
                    silhouette: ev.silhouette,
                    k,
                });
                misses = 0;
                if accepted.len() >= cfg.rolling_window {
                    let window = &accepted[accepted.len() - cfg.rolling_window..];
                    let max = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let min = window.iter().cloned().fold(f64::INFINITY, f64::min);
                    let med = median(window);
                    if (max - min) / med <= cfg.stability_rel_tol {
                        let se = sample_std(window) / (window.len() as f64).sqrt();
                        return Ok(finish(med, se, true, iteration + 1, k, seed_tau, cfg, log));
                    }
                }
                pair = [spawn(rng)?, spawn(rng)?];
            }
            _ => {
                misses += 1;
                if misses >= cfg.k_patience {
                    misses = 0;
                    k = if k >= cfg.k_max { 2 } else { k + 1 };
                }
                let (a, b) = crossover_clone_exchange(&pair[best], cfg.exchange_fraction, rng);
                pair = [
                    mutate(&a, hist, cfg.mutation_rate, rng),
                    mutate(&b, hist, cfg.mutation_rate, rng),
                ];
            }
        }
    }

    if accepted.is_empty() {
        return Err(BlinkError::NoEstimate);
    }
    let w = cfg.blend_weights;
    let last = *accepted.last().unwrap();
    let mean = accepted.iter().sum::<f64>() / accepted.len() as f64;
    let blend = w[0] * last + w[1] * mean + w[2] * rounded_mode(&accepted, bw) + w[3] * median(&accepted);
    let se = sample_std(&accepted) / (accepted.len() as f64).sqrt();
    Ok(finish(blend, se, false, cfg.max_iterations, k, seed_tau, cfg, log))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    tau: f64,
    std_err: f64,
    stabilized: bool,
    iterations: usize,
    k: usize,
    seed_tau: f64,
    cfg: &GaConfig,
    log: Vec<LogEntry>,
) -> GaOutcome {
    let clamped = tau.clamp(cfg.tau_range.0, cfg.tau_range.1);
    debug_assert!(clamped >= cfg.tau_range.0 && clamped <= cfg.tau_range.1);
    let estimate = RateEstimate::new(Method::Ga, clamped, std_err, true)
        .with_diag("iterations", iterations as f64)
        .with_diag("accepted", log.len() as f64)
        .with_diag("stabilized", stabilized as u8 as f64)
        .with_diag("final_k", k as f64)
        .with_diag("tau_heuristic", seed_tau);
    GaOutcome {
        estimate,
        log,
        stabilized,
    }
}

/// [`run_ga`] with failures folded into a non-converged estimate.
pub fn estimate_ga(hist: &DwellHistogram, cfg: &GaConfig, rng: &mut Rng) -> RateEstimate {
    match run_ga(hist, cfg, rng) {
        Ok(o) => o.estimate,
        Err(BlinkError::InsufficientData { .. }) => RateEstimate::failed(Method::Ga, "insufficient_data"),
        Err(BlinkError::NoEstimate) => RateEstimate::failed(Method::Ga, "no_estimate"),
        Err(_) => RateEstimate::failed(Method::Ga, "error"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dwell::State;
    use crate::seed::rng_from_seed;

    fn hist(pairs: Vec<(u32, u64)>) -> DwellHistogram {
        DwellHistogram::new(State::On, 1e-3, pairs).unwrap()
    }

    #[test]
    fn heuristic_by_hand() {
        let h = hist(vec![(1, 2), (3, 2)]);
        let t = heuristic_estimate(&h, (1e-3, 0.1)).unwrap();
        assert!((t - 3e-3 / 5f64.ln()).abs() < 1e-12);
        let t = heuristic_estimate(&h, (5e-3, 0.1)).unwrap();
        assert_eq!(t, 5e-3);
        assert!(heuristic_estimate(&hist(vec![]), (1e-3, 0.1)).is_err());
    }

    #[test]
    fn spawn_sizes() {
        let h = hist((1..=10).map(|d| (d, 11 - d as u64)).collect());
        let mut rng = rng_from_seed(4);
        let ind = spawn_individual(&h, 0.7, 3, &mut rng).unwrap();
        assert_eq!(ind.len(), 7);
        let mut idx: Vec<u32> = ind.points.iter().map(|p| p.0).collect();
        idx.dedup();
        assert_eq!(idx.len(), 7);
        let all = spawn_individual(&h, 1.0, 3, &mut rng).unwrap();
        assert_eq!(all.points, h.pairs);
        assert!(spawn_individual(&hist(vec![(1, 1), (2, 1)]), 0.7, 3, &mut rng).is_err());
    }

    #[test]
    fn crossover_degenerate_and_empty() {
        let one = Individual { points: vec![(4, 2)] };
        let mut rng = rng_from_seed(1);
        let (a, b) = crossover_clone_exchange(&one, 0.5, &mut rng);
        assert_eq!(a, one);
        assert_eq!(b, one);
        let ind = Individual {
            points: vec![(1, 9), (2, 5), (3, 2)],
        };
        let (a, b) = crossover_clone_exchange(&ind, 0.0, &mut rng);
        assert_eq!(a, ind);
        assert_eq!(b, ind);
    }

    #[test]
    fn mutate_identity_cases() {
        let h = hist((1..=10).map(|d| (d, 20 - d as u64)).collect());
        let ind = Individual {
            points: h.pairs[..6].to_vec(),
        };
        let mut rng = rng_from_seed(2);
        assert_eq!(mutate(&ind, &h, 0.0, &mut rng), ind);
        let full = Individual {
            points: h.pairs.clone(),
        };
        assert_eq!(mutate(&full, &h, 1.0, &mut rng), full);
    }

    #[test]
    fn mutate_replaces_repeats() {
        let h = hist((1..=10).map(|d| (d, 20 - d as u64)).collect());
        let ind = Individual {
            points: vec![(1, 19), (1, 19), (2, 18)],
        };
        let mut rng = rng_from_seed(2);
        let m = mutate(&ind, &h, 0.0, &mut rng);
        let mut idx: Vec<u32> = m.points.iter().map(|p| p.0).collect();
        idx.sort();
        idx.dedup();
        assert_eq!(idx.len(), 3);
    }

    #[test]
    fn extract_tau_examples() {
        // D_M = 4.8045 ms at C = 50, longest point at C = 25
        let t = extract_tau(&[(1e-3, 80.0), (4.8045e-3, 50.0), (11.7e-3, 25.0)]).unwrap();
        assert!((t - 0.010).abs() < 1e-6, "{t}");
        let t = extract_tau(&[(5e-3, 300.0), (15.96e-3, 100.0), (30e-3, 10.0)]).unwrap();
        let expect = 15.96e-3 / (std::f64::consts::LN_2 * 10f64.ln());
        assert!((t - expect).abs() < 1e-12);
        assert!((t - 0.010).abs() < 1e-5);
        assert!(matches!(
            extract_tau(&[(1e-3, 7.0), (2e-3, 7.0), (3e-3, 7.0)]),
            Err(BlinkError::DegenerateCluster)
        ));
        assert!(extract_tau(&[(1e-3, 7.0), (1e-3, 3.0)]).is_err());
        assert!(extract_tau(&[(1e-3, 0.0), (2e-3, 3.0)]).is_err());
    }

    #[test]
    fn longest_duration_tie_uses_highest_count() {
        let t = extract_tau(&[(1e-3, 40.0), (2e-3, 20.0), (3e-3, 5.0), (3e-3, 10.0)]).unwrap();
        // lower median is (2 ms, 20); C_max = 10
        let expect = 2e-3 / (std::f64::consts::LN_2 * 2f64.ln());
        assert!((t - expect).abs() < 1e-12);
    }

    #[test]
    fn blend_helpers() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((rounded_mode(&[0.0151, 0.0149, 0.020, 0.0152], 1e-3) - 0.015).abs() < 1e-12);
        assert_eq!(sample_std(&[10.0, 10.0, 10.0]), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(GaConfig::default().validate().is_ok());
        let bad = GaConfig {
            blend_weights: [0.5, 0.5, 0.5, 0.0],
            ..GaConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = GaConfig {
            tau_range: (0.1, 0.01),
            ..GaConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = GaConfig {
            k_init: 1,
            ..GaConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
