//! Quantum-jump emitter model and synthetic blinking traces.
//!
//! The benchmark path draws alternating on/off dwells directly from the
//! per-state lifetimes (memoryless two-state process). The multi-channel
//! trap model is kept for intensity demonstrations only.

use rand::Rng as _;
use rand_distr::{Distribution, Exp, Pareto, Poisson};
use serde::{Deserialize, Serialize};

use crate::dwell::{State, StateSequence};
use crate::error::{domain, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapChannel {
    /// Trap (non-radiative) rate, 1/s.
    pub rate: f64,
    /// Passive -> active switching rate, 1/s.
    pub gamma_plus: f64,
    /// Active -> passive switching rate, 1/s.
    pub gamma_minus: f64,
    pub active: bool,
}

impl TrapChannel {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0 && self.gamma_plus >= 0.0 && self.gamma_minus >= 0.0) {
            return domain("trap channel rates must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DwellKind {
    Exponential,
    PowerLaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellDistribution {
    pub kind: DwellKind,
    /// Power-law density exponent for on dwells, `P(t) ~ t^-m_on`.
    pub m_on: f64,
    pub m_off: f64,
    /// Lower cutoff of the power-law sampler, seconds.
    pub tau_min: f64,
}

impl DwellDistribution {
    pub fn exponential() -> Self {
        DwellDistribution {
            kind: DwellKind::Exponential,
            m_on: 0.0,
            m_off: 0.0,
            tau_min: 0.0,
        }
    }

    pub fn power_law(m_on: f64, m_off: f64, tau_min: f64) -> Self {
        DwellDistribution {
            kind: DwellKind::PowerLaw,
            m_on,
            m_off,
            tau_min,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == DwellKind::PowerLaw {
            if !(self.m_on > 1.0 && self.m_off > 1.0) {
                return domain("power-law exponents must exceed 1");
            }
            if !(self.tau_min > 0.0) {
                return domain("power-law cutoff tau_min must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterModel {
    /// Excitation rate k_I, 1/s.
    pub k_excitation: f64,
    /// Radiative rate k_r, 1/s.
    pub k_radiative: f64,
    /// Always-active background trap rate k_0, 1/s.
    pub k_background: f64,
    pub channels: Vec<TrapChannel>,
    /// Mean on lifetime, seconds.
    pub tau_on: f64,
    /// Mean off lifetime, seconds.
    pub tau_off: f64,
    pub dwell_dist: DwellDistribution,
}

impl EmitterModel {
    /// Two-state exponential emitter with the given mean lifetimes.
    pub fn two_state(tau_on: f64, tau_off: f64) -> Self {
        EmitterModel {
            k_excitation: 1e7,
            k_radiative: 1e8,
            k_background: 0.0,
            channels: Vec::new(),
            tau_on,
            tau_off,
            dwell_dist: DwellDistribution::exponential(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_excitation > 0.0 && self.k_radiative > 0.0) {
            return domain("excitation and radiative rates must be positive");
        }
        if !(self.k_background >= 0.0) {
            return domain("background trap rate must be non-negative");
        }
        if !(self.tau_on > 0.0 && self.tau_off > 0.0) {
            return domain("tau_on and tau_off must be positive");
        }
        for ch in &self.channels {
            ch.validate()?;
        }
        self.dwell_dist.validate()?;
        if !self.fast_rates_hold() {
            log::warn!(
                "excitation/radiative rates are not much faster than the trap rates; \
                 the steady-state intensity expression may not apply"
            );
        }
        Ok(())
    }

    /// True when k_I and k_r both exceed every trap rate by at least 100x.
    pub fn fast_rates_hold(&self) -> bool {
        let slowest = self.k_excitation.min(self.k_radiative);
        self.channels
            .iter()
            .map(|c| c.rate)
            .chain(std::iter::once(self.k_background))
            .all(|k| slowest >= 100.0 * k)
    }

    pub fn tau(&self, state: State) -> f64 {
        match state {
            State::On => self.tau_on,
            State::Off => self.tau_off,
        }
    }

    /// Long-run fraction of time spent on.
    pub fn on_fraction(&self) -> f64 {
        self.tau_on / (self.tau_on + self.tau_off)
    }
}

/// k_t = k_0 + sum of the rates of active channels.
pub fn total_trap_rate(channels: &[TrapChannel], k_background: f64) -> f64 {
    k_background + channels.iter().filter(|c| c.active).map(|c| c.rate).sum::<f64>()
}

/// Steady-state photoluminescence intensity `k_I / (k_I + k_r + k_t)`.
pub fn intensity(k_excitation: f64, k_radiative: f64, k_trap: f64) -> Result<f64> {
    let denom = k_excitation + k_radiative + k_trap;
    if !(denom > 0.0) || !denom.is_finite() {
        return domain("intensity denominator k_I + k_r + k_t must be positive");
    }
    Ok(k_excitation / denom)
}

/// Probability of remaining in a state of mean lifetime `tau` after `t`.
pub fn survival_prob(tau: f64, t: f64) -> f64 {
    (-t / tau).exp()
}

pub fn switching_prob(tau: f64, t: f64) -> f64 {
    -(-t / tau).exp_m1()
}

/// Draws one dwell duration (seconds) for `state`.
pub fn sample_dwell(state: State, model: &EmitterModel, rng: &mut Rng) -> f64 {
    let dist = &model.dwell_dist;
    match dist.kind {
        DwellKind::Exponential => {
            let exp = Exp::new(1.0 / model.tau(state)).expect("validated lifetime");
            exp.sample(rng)
        }
        DwellKind::PowerLaw => {
            let m = match state {
                State::On => dist.m_on,
                State::Off => dist.m_off,
            };
            // density ~ t^-m  <=>  Pareto tail index m - 1
            let pareto = Pareto::new(dist.tau_min, m - 1.0).expect("validated exponent");
            pareto.sample(rng)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhotonNoise {
    None,
    Poisson,
}

/// Detector-side settings of a synthetic trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub bin_width: f64,
    pub photon_noise: PhotonNoise,
    /// Expected counts per bin while on.
    pub mean_on_counts: f64,
    /// Expected counts per bin while off.
    pub mean_off_counts: f64,
}

impl TraceConfig {
    pub fn new(bin_width: f64) -> Self {
        TraceConfig {
            bin_width,
            ..TraceConfig::default()
        }
    }

    pub fn with_noise(mut self, noise: PhotonNoise) -> Self {
        self.photon_noise = noise;
        self
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.mean_on_counts + self.mean_off_counts)
    }
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            bin_width: 1e-3,
            photon_noise: PhotonNoise::Poisson,
            mean_on_counts: 100.0,
            mean_off_counts: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlinkTrace {
    pub bin_width: f64,
    pub counts: Vec<u64>,
    pub mean_on_counts: f64,
    pub mean_off_counts: f64,
    /// Generating (tau_on, tau_off) when known.
    pub truth: Option<(f64, f64)>,
    pub seed: u64,
}

impl BlinkTrace {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.counts.len() as f64 * self.bin_width
    }
}

/// A synthetic trace plus the simulator's hidden ground truth.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub trace: BlinkTrace,
    /// Majority occupant of every bin.
    pub hidden: StateSequence,
    /// Every sampled dwell in order, in seconds. The last one runs past the
    /// end of the trace.
    pub dwells: Vec<(State, f64)>,
}

fn bin_count(duration: f64, bin_width: f64) -> Result<usize> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return domain("bin width must be positive");
    }
    if !(duration > 0.0) || !duration.is_finite() {
        return domain("trace duration must be positive");
    }
    let bins = (duration / bin_width).round();
    if bins < 1.0 {
        return domain("trace duration must be at least one bin");
    }
    Ok(bins as usize)
}

/// Simulates a trace and keeps the hidden state sequence and dwell log.
pub fn simulate(model: &EmitterModel, duration: f64, cfg: &TraceConfig, seed: u64) -> Result<Simulation> {
    model.validate()?;
    if !(cfg.mean_on_counts > cfg.mean_off_counts && cfg.mean_off_counts >= 0.0) {
        return domain("mean on counts must exceed mean off counts");
    }
    let n = bin_count(duration, cfg.bin_width)?;
    let mut rng = crate::seed::rng_from_seed(seed);

    // fraction of each bin spent on
    let mut on_frac = vec![0.0f64; n];
    let mut dwells = Vec::new();
    let total = n as f64;
    let mut state = if rng.random::<f64>() < model.on_fraction() {
        State::On
    } else {
        State::Off
    };
    let mut t = 0.0f64;
    while t < total {
        let d = sample_dwell(state, model, &mut rng);
        let end = t + d / cfg.bin_width;
        if state == State::On {
            add_interval(&mut on_frac, t, end.min(total));
        }
        dwells.push((state, d));
        t = end;
        state = state.flip();
    }

    let hidden: Vec<State> = on_frac
        .iter()
        .map(|&f| if f > 0.5 { State::On } else { State::Off })
        .collect();

    let (hi, lo) = (cfg.mean_on_counts, cfg.mean_off_counts);
    let counts = match cfg.photon_noise {
        PhotonNoise::None => {
            let mid = cfg.midpoint();
            on_frac
                .iter()
                .zip(&hidden)
                .map(|(&f, &s)| {
                    let c = (lo + (hi - lo) * f).round();
                    // straddling bins go to their majority occupant
                    let c = match s {
                        State::On if c <= mid => mid.floor() + 1.0,
                        State::Off if c > mid => mid.floor(),
                        _ => c,
                    };
                    c as u64
                })
                .collect()
        }
        PhotonNoise::Poisson => {
            let on_dist = poisson(hi);
            let off_dist = poisson(lo);
            on_frac
                .iter()
                .map(|&f| {
                    if f >= 1.0 {
                        sample_poisson(on_dist.as_ref(), &mut rng)
                    } else if f <= 0.0 {
                        sample_poisson(off_dist.as_ref(), &mut rng)
                    } else {
                        sample_poisson(poisson(lo + (hi - lo) * f).as_ref(), &mut rng)
                    }
                })
                .collect()
        }
    };

    let truth = match model.dwell_dist.kind {
        DwellKind::Exponential => Some((model.tau_on, model.tau_off)),
        DwellKind::PowerLaw => None,
    };
    Ok(Simulation {
        trace: BlinkTrace {
            bin_width: cfg.bin_width,
            counts,
            mean_on_counts: hi,
            mean_off_counts: lo,
            truth,
            seed,
        },
        hidden: StateSequence {
            bin_width: cfg.bin_width,
            states: hidden,
        },
        dwells,
    })
}

/// Generates a binned photocount trace. Deterministic in `seed`.
pub fn generate_trace(model: &EmitterModel, duration: f64, cfg: &TraceConfig, seed: u64) -> Result<BlinkTrace> {
    simulate(model, duration, cfg, seed).map(|s| s.trace)
}

fn poisson(mean: f64) -> Option<Poisson<f64>> {
    if mean > 0.0 {
        Poisson::new(mean).ok()
    } else {
        None
    }
}

fn sample_poisson(dist: Option<&Poisson<f64>>, rng: &mut Rng) -> u64 {
    dist.map_or(0, |d| d.sample(rng) as u64)
}

/// Adds the overlap of `[start, end)` (bin units) to each bin.
fn add_interval(frac: &mut [f64], start: f64, end: f64) {
    if end <= start {
        return;
    }
    let first = start.floor() as usize;
    let last = (end.ceil() as usize).min(frac.len());
    for (i, slot) in frac.iter_mut().enumerate().take(last).skip(first) {
        let lo = start.max(i as f64);
        let hi = end.min(i as f64 + 1.0);
        if hi > lo {
            *slot += hi - lo;
        }
    }
}

/// Total trap rate k_t(t) sampled every `dt` seconds while each channel
/// toggles between active and passive at its gamma rates.
pub fn simulate_trap_rate(model: &EmitterModel, duration: f64, dt: f64, seed: u64) -> Result<Vec<f64>> {
    model.validate()?;
    let n = bin_count(duration, dt)?;
    let mut rng = crate::seed::rng_from_seed(seed);
    let mut channels = model.channels.clone();
    let mut next_switch: Vec<f64> = channels.iter().map(|c| next_toggle(c, 0.0, &mut rng)).collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        for (ch, when) in channels.iter_mut().zip(next_switch.iter_mut()) {
            while *when <= t {
                ch.active = !ch.active;
                *when = next_toggle(ch, *when, &mut rng);
            }
        }
        out.push(total_trap_rate(&channels, model.k_background));
    }
    Ok(out)
}

fn next_toggle(ch: &TrapChannel, now: f64, rng: &mut Rng) -> f64 {
    let rate = if ch.active { ch.gamma_minus } else { ch.gamma_plus };
    if rate > 0.0 {
        now + Exp::new(rate).expect("positive rate").sample(rng)
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ch(rate: f64, active: bool) -> TrapChannel {
        TrapChannel {
            rate,
            gamma_plus: 1.0,
            gamma_minus: 1.0,
            active,
        }
    }

    #[test]
    fn trap_rate_sums_active_channels() {
        assert_eq!(total_trap_rate(&[ch(3.0, false), ch(5.0, false)], 2.0), 2.0);
        assert_eq!(total_trap_rate(&[ch(3.0, true), ch(5.0, false)], 0.0), 3.0);
        assert_eq!(total_trap_rate(&[ch(3.0, true), ch(5.0, true)], 1.0), 9.0);
    }

    #[test]
    fn intensity_values() {
        assert_eq!(intensity(1.0, 1.0, 0.0).unwrap(), 0.5);
        assert!((intensity(1.0, 1.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((intensity(2.0, 1.0, 7.0).unwrap() - 0.2).abs() < 1e-15);
        assert!(intensity(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn survival_and_switching() {
        assert_eq!(survival_prob(0.015, 0.0), 1.0);
        assert_eq!(switching_prob(0.015, 0.0), 0.0);
        assert!((survival_prob(0.015, 0.015) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((survival_prob(0.045, 0.090) - 0.135_335_283).abs() < 1e-9);
        for t in [0.0, 0.001, 0.02, 1.0] {
            assert!((survival_prob(0.015, t) + switching_prob(0.015, t) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_bin_trace() {
        let model = EmitterModel::two_state(0.015, 0.045);
        let tr = generate_trace(&model, 1e-3, &TraceConfig::new(1e-3), 1).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.truth, Some((0.015, 0.045)));
    }

    #[test]
    fn rejects_bad_durations() {
        let model = EmitterModel::two_state(0.015, 0.045);
        let cfg = TraceConfig::new(1e-3);
        assert!(generate_trace(&model, 0.0, &cfg, 1).is_err());
        assert!(generate_trace(&model, -1.0, &cfg, 1).is_err());
        assert!(generate_trace(&model, 1e-4, &cfg, 1).is_err());
        assert!(generate_trace(&model, 1.0, &TraceConfig::new(0.0), 1).is_err());
    }

    #[test]
    fn same_seed_same_counts() {
        let model = EmitterModel::two_state(0.015, 0.045);
        let cfg = TraceConfig::new(1e-3);
        let a = generate_trace(&model, 5.0, &cfg, 42).unwrap();
        let b = generate_trace(&model, 5.0, &cfg, 42).unwrap();
        let c = generate_trace(&model, 5.0, &cfg, 43).unwrap();
        assert_eq!(a.counts, b.counts);
        assert_ne!(a.counts, c.counts);
    }

    #[test]
    fn noiseless_counts_sit_on_the_majority_side() {
        let model = EmitterModel::two_state(0.003, 0.004);
        let cfg = TraceConfig::new(1e-3).with_noise(PhotonNoise::None);
        let sim = simulate(&model, 20.0, &cfg, 9).unwrap();
        for (&c, &s) in sim.trace.counts.iter().zip(&sim.hidden.states) {
            assert_eq!(c as f64 > cfg.midpoint(), s == State::On);
        }
    }

    #[test]
    fn interval_overlap() {
        let mut f = vec![0.0; 4];
        add_interval(&mut f, 0.5, 2.25);
        assert_eq!(f, vec![0.5, 1.0, 0.25, 0.0]);
    }

    #[test]
    fn trap_rate_series_stays_within_bounds() {
        let mut model = EmitterModel::two_state(0.015, 0.045);
        model.k_background = 1.0;
        model.channels = vec![
            TrapChannel {
                rate: 10.0,
                gamma_plus: 50.0,
                gamma_minus: 20.0,
                active: false,
            },
            TrapChannel {
                rate: 100.0,
                gamma_plus: 5.0,
                gamma_minus: 80.0,
                active: true,
            },
        ];
        let series = simulate_trap_rate(&model, 2.0, 1e-3, 3).unwrap();
        assert_eq!(series.len(), 2000);
        let allowed = [1.0, 11.0, 101.0, 111.0];
        assert!(series.iter().all(|k| allowed.contains(k)));
        assert!(series.contains(&1.0) && series.contains(&111.0));
    }

    #[test]
    fn slow_radiative_rate_flags_warning_condition() {
        let mut model = EmitterModel::two_state(0.015, 0.045);
        assert!(model.fast_rates_hold());
        model.channels.push(TrapChannel {
            rate: 1e7,
            gamma_plus: 1.0,
            gamma_minus: 1.0,
            active: true,
        });
        assert!(!model.fast_rates_hold());
    }
}
