//! Thresholding, run-length dwell histograms and empirical densities.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, BlinkError, Result};
use crate::sim::BlinkTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum State {
    On,
    Off,
}

impl State {
    pub fn flip(self) -> State {
        match self {
            State::On => State::Off,
            State::Off => State::On,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            State::On => "on",
            State::Off => "off",
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for State {
    type Err = BlinkError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "on" => Ok(State::On),
            "off" => Ok(State::Off),
            _ => domain(format!("unknown state `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSequence {
    pub bin_width: f64,
    pub states: Vec<State>,
}

/// A maximal run of identical states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub state: State,
    pub start: usize,
    pub len: usize,
}

impl StateSequence {
    pub fn runs(&self) -> Vec<Run> {
        let mut runs: Vec<Run> = Vec::new();
        for (i, &s) in self.states.iter().enumerate() {
            match runs.last_mut() {
                Some(r) if r.state == s => r.len += 1,
                _ => runs.push(Run {
                    state: s,
                    start: i,
                    len: 1,
                }),
            }
        }
        runs
    }
}

/// Sparse histogram of dwell run lengths for one state.
///
/// `pairs` holds `(duration_index, occurrences)` with strictly increasing
/// indices; a dwell of index `j` lasted `j * bin_width` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellHistogram {
    pub state: State,
    pub bin_width: f64,
    pub pairs: Vec<(u32, u64)>,
}

impl DwellHistogram {
    pub fn new(state: State, bin_width: f64, mut pairs: Vec<(u32, u64)>) -> Result<Self> {
        pairs.sort_unstable_by_key(|p| p.0);
        if pairs.iter().any(|p| p.0 == 0) {
            return domain("duration index must be at least 1");
        }
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return domain("duplicate duration index in histogram");
        }
        Ok(DwellHistogram {
            state,
            bin_width,
            pairs,
        })
    }

    pub fn total_occurrences(&self) -> u64 {
        self.pairs.iter().map(|p| p.1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_occurrences() == 0
    }

    pub fn max_index(&self) -> u32 {
        self.pairs.last().map_or(0, |p| p.0)
    }

    /// Total dwell time covered by this histogram, in bins.
    pub fn total_bins(&self) -> u64 {
        self.pairs.iter().map(|&(d, c)| d as u64 * c).sum()
    }

    /// `(duration_seconds, occurrences)` for every pair with a non-zero count.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.pairs
            .iter()
            .filter(|p| p.1 > 0)
            .map(|&(d, c)| (d as f64 * self.bin_width, c as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDensity {
    pub state: State,
    pub bin_width: f64,
    /// `(duration_index, probability)`; probabilities sum to 1.
    pub support: Vec<(u32, f64)>,
}

impl EmpiricalDensity {
    /// Probability-weighted mean duration, seconds.
    pub fn mean_duration(&self) -> f64 {
        self.support.iter().map(|&(d, p)| d as f64 * p).sum::<f64>() * self.bin_width
    }
}

/// `On` wherever `counts > threshold`.
pub fn binarize(trace: &BlinkTrace, threshold: f64) -> Result<StateSequence> {
    if trace.is_empty() {
        return domain("cannot binarize an empty trace");
    }
    if !threshold.is_finite() {
        return domain("threshold must be finite");
    }
    Ok(StateSequence {
        bin_width: trace.bin_width,
        states: trace
            .counts
            .iter()
            .map(|&c| if c as f64 > threshold { State::On } else { State::Off })
            .collect(),
    })
}

/// Anscombe transform; Poisson counts have unit variance after it.
fn anscombe(c: f64) -> f64 {
    2.0 * (c + 0.375).sqrt()
}

const ANSCOMBE_BIN: f64 = 0.5;

/// Separating count threshold: midpoint of the two dominant modes of the
/// count histogram.
///
/// Modes are located on a variance-stabilized (Anscombe) scale so one
/// smoothing width serves both count levels, then refined to the most
/// frequent raw count inside the winning bin. The second mode is the
/// tallest peak separated from the first by a valley below half its height.
pub fn auto_threshold(trace: &BlinkTrace) -> Result<f64> {
    if trace.is_empty() {
        return domain("cannot threshold an empty trace");
    }
    let max = *trace.counts.iter().max().unwrap();
    let nb = (anscombe(max as f64) / ANSCOMBE_BIN) as usize + 2;
    let mut hist = vec![0.0f64; nb];
    for &c in &trace.counts {
        hist[(anscombe(c as f64) / ANSCOMBE_BIN) as usize] += 1.0;
    }
    let smooth: Vec<f64> = (0..nb)
        .map(|i| {
            let l = if i > 0 { hist[i - 1] } else { 0.0 };
            let r = if i + 1 < nb { hist[i + 1] } else { 0.0 };
            0.25 * l + 0.5 * hist[i] + 0.25 * r
        })
        .collect();

    let first = argmax(&smooth);
    let mut second: Option<usize> = None;
    for j in 0..nb {
        if j == first || smooth[j] <= 0.0 {
            continue;
        }
        let is_peak = (j == 0 || smooth[j] >= smooth[j - 1]) && (j + 1 == nb || smooth[j] >= smooth[j + 1]);
        if !is_peak {
            continue;
        }
        let (a, b) = if j < first { (j, first) } else { (first, j) };
        let valley = smooth[a..=b].iter().cloned().fold(f64::INFINITY, f64::min);
        if valley < 0.5 * smooth[j].min(smooth[first]) && second.is_none_or(|s| smooth[j] > smooth[s]) {
            second = Some(j);
        }
    }
    let second = second.ok_or(BlinkError::NoSeparation)?;
    let m1 = raw_mode(&trace.counts, first);
    let m2 = raw_mode(&trace.counts, second);
    Ok(0.5 * (m1 + m2))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Most frequent raw count among samples in Anscombe bin `bin` (or the
/// neighbouring bins when the smoothed peak landed on an empty one).
fn raw_mode(counts: &[u64], bin: usize) -> f64 {
    let mut tally = std::collections::BTreeMap::<u64, u64>::new();
    for width in 0..3usize {
        for &c in counts {
            let b = (anscombe(c as f64) / ANSCOMBE_BIN) as usize;
            if b.abs_diff(bin) <= width {
                *tally.entry(c).or_default() += 1;
            }
        }
        if !tally.is_empty() {
            break;
        }
    }
    // ties resolve to the smallest count
    let mut best = (0u64, 0u64);
    for (&c, &n) in &tally {
        if n > best.1 {
            best = (c, n);
        }
    }
    best.0 as f64
}

/// Per-state run-length histograms. The first and last runs are censored
/// by the recording window and left out.
pub fn dwell_histogram(seq: &StateSequence) -> Result<(DwellHistogram, DwellHistogram)> {
    if seq.states.len() < 3 {
        return Err(BlinkError::EmptyHistogram);
    }
    let runs = seq.runs();
    if runs.len() < 3 {
        return Err(BlinkError::EmptyHistogram);
    }
    let mut on = std::collections::BTreeMap::<u32, u64>::new();
    let mut off = std::collections::BTreeMap::<u32, u64>::new();
    for r in &runs[1..runs.len() - 1] {
        let slot = match r.state {
            State::On => &mut on,
            State::Off => &mut off,
        };
        *slot.entry(r.len as u32).or_default() += 1;
    }
    let build = |state, m: std::collections::BTreeMap<u32, u64>| DwellHistogram {
        state,
        bin_width: seq.bin_width,
        pairs: m.into_iter().collect(),
    };
    Ok((build(State::On, on), build(State::Off, off)))
}

pub fn empirical_density(hist: &DwellHistogram) -> Result<EmpiricalDensity> {
    let total = hist.total_occurrences();
    if total == 0 {
        return domain("cannot normalize a histogram with zero occurrences");
    }
    let total = total as f64;
    Ok(EmpiricalDensity {
        state: hist.state,
        bin_width: hist.bin_width,
        support: hist.pairs.iter().map(|&(d, c)| (d, c as f64 / total)).collect(),
    })
}

/// Occurrence-weighted mean dwell duration, seconds.
pub fn mean_dwell(hist: &DwellHistogram) -> Result<f64> {
    let total = hist.total_occurrences();
    if total == 0 {
        return domain("mean dwell of an empty histogram");
    }
    Ok(hist.total_bins() as f64 / total as f64 * hist.bin_width)
}

/// Trace -> (on, off) histograms using the automatic threshold.
pub fn histograms_from_trace(trace: &BlinkTrace) -> Result<(DwellHistogram, DwellHistogram)> {
    let th = auto_threshold(trace)?;
    dwell_histogram(&binarize(trace, th)?)
}
