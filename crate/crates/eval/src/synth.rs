//! Deterministic synthetic SCG windows.
//!
//! Each window is cut from a beat train in which every beat carries a
//! systolic burst (about 200 Hz, about 60 ms) followed about 380 ms later by a
//! diastolic burst (about 90 Hz, about 50 ms). Bursts have a Hann envelope and
//! ride on white noise plus a slow baseline wander. The label is the class of
//! the sample at the window center.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

pub const FS_HZ: f64 = 1000.0;
pub const WINDOW: usize = 512;
pub const NUM_CLASSES: usize = 3;
/// Minimum distance between a background window center and any event.
pub const EVENT_GAP_S: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Background = 0,
    Systolic = 1,
    Diastolic = 2,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Background, Phase::Systolic, Phase::Diastolic];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Background => "background",
            Phase::Systolic => "systolic",
            Phase::Diastolic => "diastolic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    /// Relative share of background, systolic and diastolic windows.
    pub proportions: [f64; 3],
    /// Standard deviation of the white noise; bursts peak near 1.
    pub noise: f64,
    /// Beats per minute, drawn uniformly per window.
    pub heart_rate_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 3000,
            proportions: [1.0, 1.0, 1.0],
            noise: 0.1,
            heart_rate_range: (40.0, 60.0),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(EvalError::Config("window count must be positive".into()));
        }
        if self.proportions.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || self.proportions.iter().sum::<f64>() <= 0.0
        {
            return Err(EvalError::Config(format!(
                "proportions must be non-negative with a positive sum, got {:?}",
                self.proportions
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(EvalError::Config(format!("noise must be non-negative, got {}", self.noise)));
        }
        let (lo, hi) = self.heart_rate_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi && hi <= 150.0) {
            return Err(EvalError::Config(format!(
                "heart rate range must satisfy 0 < lo <= hi <= 150 bpm, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }

    /// Per-class window counts by largest remainder; each is within one of
    /// `n * share`.
    pub fn class_counts(&self) -> [usize; 3] {
        let total: f64 = self.proportions.iter().sum();
        let exact: Vec<f64> = self.proportions.iter().map(|p| self.n as f64 * p / total).collect();
        let mut counts = [0usize; 3];
        for (c, e) in counts.iter_mut().zip(&exact) {
            *c = e.floor() as usize;
        }
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        let assigned: usize = counts.iter().sum();
        for &c in order.iter().take(self.n - assigned) {
            counts[c] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindowSet {
    pub windows: Vec<Vec<f32>>,
    pub labels: Vec<u8>,
}

impl LabeledWindowSet {
    pub fn new(windows: Vec<Vec<f32>>, labels: Vec<u8>) -> Result<Self> {
        if windows.len() != labels.len() {
            return Err(EvalError::Shape(format!(
                "{} windows but {} labels",
                windows.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(EvalError::Shape(format!("label {l} outside 0..{NUM_CLASSES}")));
        }
        if let Some(w) = windows.first() {
            if windows.iter().any(|x| x.len() != w.len()) {
                return Err(EvalError::Shape("windows differ in length".into()));
            }
        }
        Ok(Self { windows, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window_length(&self) -> usize {
        self.windows.first().map_or(0, Vec::len)
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }
}

/// One burst: Hann envelope times a sinusoid, starting at `onset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Burst {
    pub onset: f64,
    pub duration: f64,
    pub freq: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl Burst {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.onset && t < self.onset + self.duration
    }

    pub fn value(&self, t: f64) -> f64 {
        if !self.contains(t) {
            return 0.0;
        }
        let u = (t - self.onset) / self.duration;
        let env = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * u).cos();
        let arg = 2.0 * std::f64::consts::PI * self.freq * (t - self.onset) + self.phase;
        self.amplitude * env * arg.sin()
    }
}

/// One repeating beat, times relative to its systolic onset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beat {
    pub period: f64,
    pub systolic: Burst,
    pub diastolic: Burst,
}

impl Beat {
    fn random<R: Rng>(rng: &mut R, bpm: (f64, f64)) -> Self {
        let rate = if bpm.0 < bpm.1 { rng.gen_range(bpm.0..=bpm.1) } else { bpm.0 };
        let period = 60.0 / rate;
        let tau = 2.0 * std::f64::consts::PI;
        let systolic = Burst {
            onset: 0.0,
            duration: rng.gen_range(0.055..0.065),
            freq: rng.gen_range(185.0..215.0),
            amplitude: rng.gen_range(0.8..1.2),
            phase: rng.gen_range(0.0..tau),
        };
        // diastole shortens with heart rate but keeps clear of the next beat
        let onset = (0.38 * (period / 1.2).sqrt()).min(period * 0.45) + rng.gen_range(-0.01..0.01);
        let diastolic = Burst {
            onset,
            duration: rng.gen_range(0.045..0.055),
            freq: rng.gen_range(82.0..98.0),
            amplitude: rng.gen_range(0.5..0.8),
            phase: rng.gen_range(0.0..tau),
        };
        Self { period, systolic, diastolic }
    }

    /// Class of time `t` on the periodic beat train.
    pub fn phase_at(&self, t: f64) -> Phase {
        let t = t.rem_euclid(self.period);
        if self.systolic.contains(t) {
            Phase::Systolic
        } else if self.diastolic.contains(t) {
            Phase::Diastolic
        } else {
            Phase::Background
        }
    }

    /// Distance from `t` to the nearest burst boundary on the beat train.
    pub fn distance_to_event(&self, t: f64) -> f64 {
        let t = t.rem_euclid(self.period);
        let mut best = f64::INFINITY;
        for k in [-1.0, 0.0, 1.0] {
            for b in [&self.systolic, &self.diastolic] {
                let start = b.onset + k * self.period;
                let end = start + b.duration;
                let d = if t < start {
                    start - t
                } else if t >= end {
                    t - end
                } else {
                    0.0
                };
                best = best.min(d);
            }
        }
        best
    }

    pub fn value(&self, t: f64) -> f64 {
        let t = t.rem_euclid(self.period);
        let mut v = 0.0;
        for k in [-1.0, 0.0, 1.0] {
            let u = t - k * self.period;
            v += self.systolic.value(u) + self.diastolic.value(u);
        }
        v
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; `1 - u` keeps the logarithm finite
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn center_time<R: Rng>(rng: &mut R, beat: &Beat, phase: Phase) -> f64 {
    let inside = |rng: &mut R, b: &Burst| b.onset + b.duration * rng.gen_range(0.2..0.8);
    match phase {
        Phase::Systolic => inside(rng, &beat.systolic),
        Phase::Diastolic => inside(rng, &beat.diastolic),
        Phase::Background => {
            let quiet_start = beat.diastolic.onset + beat.diastolic.duration;
            let quiet_end = beat.period;
            let half = WINDOW as f64 / 2.0 / FS_HZ;
            // whole window inside the quiet interval when it fits
            let (lo, hi) = if quiet_end - quiet_start >= 2.0 * half {
                (quiet_start + half, quiet_end - half)
            } else {
                let mid = 0.5 * (quiet_start + quiet_end);
                let slack = (0.5 * (quiet_end - quiet_start) - EVENT_GAP_S).max(0.0) * 0.25;
                (mid - slack, mid + slack)
            };
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                lo
            }
        }
    }
}

/// A window together with the beat that produced it, for inspection.
#[derive(Debug, Clone)]
pub struct SynthWindow {
    pub samples: Vec<f32>,
    pub phase: Phase,
    pub beat: Beat,
    /// Center time relative to the systolic onset of its beat.
    pub center: f64,
}

/// Generates window `index` of a dataset with the given seed and class.
pub fn synth_window(cfg: &SynthConfig, index: u64, phase: Phase) -> SynthWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index + 1);
    let beat = Beat::random(&mut rng, cfg.heart_rate_range);
    let center = center_time(&mut rng, &beat, phase);
    let wander_amp = rng.gen_range(0.0..0.1);
    let wander_freq = rng.gen_range(0.15..0.4);
    let wander_phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    let samples = (0..WINDOW)
        .map(|i| {
            let t = center + (i as f64 - (WINDOW / 2) as f64) / FS_HZ;
            let wander =
                wander_amp * (2.0 * std::f64::consts::PI * wander_freq * t + wander_phase).sin();
            let n = if cfg.noise > 0.0 { cfg.noise * gaussian(&mut rng) } else { 0.0 };
            (beat.value(t) + wander + n) as f32
        })
        .collect();
    SynthWindow { samples, phase, beat, center }
}

/// Generates a labeled dataset. Identical configurations give identical
/// output.
pub fn synth_windows(cfg: &SynthConfig) -> Result<LabeledWindowSet> {
    cfg.validate()?;
    let counts = cfg.class_counts();
    let mut labels: Vec<u8> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c as u8, n))
        .collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let windows = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| synth_window(cfg, i as u64, Phase::ALL[l as usize]).samples)
        .collect();
    LabeledWindowSet::new(windows, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_windows_is_an_error() {
        let cfg = SynthConfig { n: 0, ..Default::default() };
        assert!(synth_windows(&cfg).is_err());
    }

    #[test]
    fn largest_remainder_counts() {
        let cfg = SynthConfig { n: 10, ..Default::default() };
        assert_eq!(cfg.class_counts(), [4, 3, 3]);
        let cfg = SynthConfig { n: 7, proportions: [0.5, 0.25, 0.25], ..Default::default() };
        assert_eq!(cfg.class_counts().iter().sum::<usize>(), 7);
        let cfg = SynthConfig { n: 5, proportions: [0.0, 1.0, 0.0], ..Default::default() };
        assert_eq!(cfg.class_counts(), [0, 5, 0]);
    }

    #[test]
    fn labels_are_center_phase() {
        let cfg = SynthConfig { n: 200, seed: 9, ..Default::default() };
        for i in 0..60u64 {
            for p in Phase::ALL {
                let w = synth_window(&cfg, i, p);
                assert_eq!(w.beat.phase_at(w.center), p);
                if p == Phase::Background {
                    assert!(w.beat.distance_to_event(w.center) >= EVENT_GAP_S);
                }
            }
        }
    }

    #[test]
    fn fast_heart_rate_keeps_gap() {
        let cfg = SynthConfig { heart_rate_range: (110.0, 150.0), ..Default::default() };
        for i in 0..200u64 {
            let w = synth_window(&cfg, i, Phase::Background);
            assert_eq!(w.beat.phase_at(w.center), Phase::Background);
            assert!(w.beat.distance_to_event(w.center) >= EVENT_GAP_S, "{:?}", w.beat);
        }
    }
}
