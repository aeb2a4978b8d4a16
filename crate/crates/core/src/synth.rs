//! Seeded generator of labeled synthetic actigraphy.
//!
//! Every series starts at 12:00 so each 24-hour block holds one whole night.
//! Activity units are arbitrary. All randomness comes from ChaCha8 streams
//! seeded through `rand_chacha`, so output is identical across platforms.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::runs;
use crate::types::{ClockTime, DaytimeConfig, LabeledSeries, SleepState, EPOCHS_PER_DAY, EPOCHS_PER_HOUR};

/// Wake activity inside the wind-down margin around a siesta, as a fraction
/// of `wake_mean`.
const WINDDOWN_SCALE: f64 = 0.6;
/// Siesta level as a fraction of the way from sleep to wake level.
const SIESTA_LEVEL: f64 = 0.2;
/// Restless-sleep bursts, as a fraction of `wake_mean`.
const BURST_SCALE: f64 = 0.5;
/// Length of the slots in which fragmentation may insert one Wake run.
const FRAGMENT_SLOT: usize = EPOCHS_PER_HOUR;
const FRAGMENT_LEN: (usize, usize) = (20, 60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FallingStyle {
    /// Mean activity ramps linearly from wake to sleep level.
    #[default]
    Ramp,
    /// Wake-level bursts whose probability decays linearly; sleep level otherwise.
    SparseBursts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatientProfile {
    pub wake_mean: f64,
    pub wake_std: f64,
    pub sleep_mean: f64,
    pub sleep_std: f64,
    pub restlessness: f64,
    /// Inclusive range, epochs.
    pub falling_duration_range: (usize, usize),
    pub falling_style: FallingStyle,
    pub siesta_probability_per_day: f64,
    /// Inclusive range, epochs.
    pub siesta_duration_range: (usize, usize),
    /// Wall-clock hours within which a siesta may start.
    pub siesta_window: (f64, f64),
    /// Wake epochs on each side of a siesta drawn at reduced activity.
    pub siesta_winddown: usize,
    pub bed_time: f64,
    pub bed_jitter: f64,
    pub rise_time: f64,
    pub rise_jitter: f64,
    pub daytime: DaytimeConfig,
}

impl Default for PatientProfile {
    fn default() -> Self {
        Self {
            wake_mean: 1.0,
            wake_std: 0.35,
            sleep_mean: 0.05,
            sleep_std: 0.05,
            restlessness: 0.02,
            falling_duration_range: (30, 60),
            falling_style: FallingStyle::Ramp,
            siesta_probability_per_day: 0.5,
            siesta_duration_range: (40, 120),
            siesta_window: (13.0, 16.0),
            siesta_winddown: 20,
            bed_time: 23.0,
            bed_jitter: 1.0,
            rise_time: 7.0,
            rise_jitter: 1.0,
            daytime: DaytimeConfig::default(),
        }
    }
}

/// Epoch offset of a wall-clock hour from the noon that starts each day.
fn noon_offset(hour: f64) -> f64 {
    (hour - 12.0).rem_euclid(24.0) * EPOCHS_PER_HOUR as f64
}

fn jitter_epochs(hours: f64) -> i64 {
    (hours * EPOCHS_PER_HOUR as f64).round() as i64
}

impl PatientProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.sleep_mean >= 0.0 && self.wake_mean > self.sleep_mean) {
            return bad(format!(
                "profile needs wake_mean > sleep_mean >= 0 (got {} and {})",
                self.wake_mean, self.sleep_mean
            ));
        }
        for (name, v) in [("wake_std", self.wake_std), ("sleep_std", self.sleep_std)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        for (name, p) in [
            ("restlessness", self.restlessness),
            ("siesta_probability_per_day", self.siesta_probability_per_day),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        for (name, (lo, hi)) in [
            ("falling_duration_range", self.falling_duration_range),
            ("siesta_duration_range", self.siesta_duration_range),
        ] {
            if lo < 1 || lo > hi {
                return bad(format!("{name} must satisfy 1 <= min <= max"));
            }
        }
        if !(self.bed_jitter >= 0.0 && self.rise_jitter >= 0.0) {
            return bad("jitter must be non-negative".into());
        }
        let (w0, w1) = self.siesta_window;
        let d = self.daytime;
        if !(12.0 <= w0 && w0 < w1 && d.day_start <= w0) {
            return bad(format!("siesta window [{w0}, {w1}) must start after noon and inside daytime"));
        }
        if noon_offset(w0) < (self.siesta_winddown + 1) as f64 {
            return bad("siesta window starts too close to noon".into());
        }
        let day_end = (d.day_end - 12.0) * EPOCHS_PER_HOUR as f64;
        let siesta_last = noon_offset(w1) + (self.siesta_duration_range.1 + self.siesta_winddown) as f64;
        let bed_first = noon_offset(self.bed_time) - jitter_epochs(self.bed_jitter) as f64;
        let bed_last = noon_offset(self.bed_time) + jitter_epochs(self.bed_jitter) as f64;
        let rise_first = noon_offset(self.rise_time) - jitter_epochs(self.rise_jitter) as f64;
        let rise_last = noon_offset(self.rise_time) + jitter_epochs(self.rise_jitter) as f64;
        if siesta_last > day_end {
            return bad("siestas may run past the end of daytime".into());
        }
        if siesta_last >= bed_first {
            return bad("siestas may overlap bed time".into());
        }
        if bed_first < 1.0 {
            return bad("bed time too close to noon".into());
        }
        if bed_last + self.falling_duration_range.1 as f64 >= rise_first {
            return bad("rise time leaves no sleep after falling asleep".into());
        }
        if rise_last >= EPOCHS_PER_DAY as f64 {
            return bad("rise time must fall before noon".into());
        }
        Ok(())
    }

    fn siesta_mean(&self) -> f64 {
        self.sleep_mean + SIESTA_LEVEL * (self.wake_mean - self.sleep_mean)
    }
}

/// Gaussian truncated at zero, sampled by rejection.
fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        return mean.max(0.0);
    }
    for _ in 0..1000 {
        let z: f64 = rng.sample(StandardNormal);
        let x = mean + std * z;
        if x >= 0.0 {
            return x;
        }
    }
    0.0
}

fn uniform_inclusive(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

fn jittered(rng: &mut ChaCha8Rng, base: f64, jitter_hours: f64) -> usize {
    let j = jitter_epochs(jitter_hours);
    let d = if j == 0 { 0 } else { rng.random_range(-j..=j) };
    (base.round() as i64 + d) as usize
}

pub fn generate_patient_series(profile: &PatientProfile, num_days: usize, seed: u64) -> Result<LabeledSeries> {
    generate_named_series("patient", profile, num_days, seed)
}

pub fn generate_named_series(
    patient_id: &str,
    profile: &PatientProfile,
    num_days: usize,
    seed: u64,
) -> Result<LabeledSeries> {
    if num_days < 1 {
        return Err(Error::Config("num_days must be at least 1".into()));
    }
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = num_days * EPOCHS_PER_DAY;
    let mut states = vec![SleepState::Wake; n];
    // Activity mean override per epoch for the wind-down margin.
    let mut winddown = vec![false; n];
    // Position within the falling-asleep run, as (k, run length).
    let mut falling = vec![(0usize, 0usize); n];

    for day in 0..num_days {
        let base = day * EPOCHS_PER_DAY;
        if rng.random_bool(profile.siesta_probability_per_day) {
            let lo = noon_offset(profile.siesta_window.0).round() as usize;
            let hi = noon_offset(profile.siesta_window.1).round() as usize;
            let start = rng.random_range(lo..hi);
            let len = uniform_inclusive(&mut rng, profile.siesta_duration_range);
            states[base + start..base + start + len].fill(SleepState::Siesta);
            let w = profile.siesta_winddown;
            winddown[base + start - w..base + start].fill(true);
            winddown[base + start + len..base + start + len + w].fill(true);
        }
        let bed = jittered(&mut rng, noon_offset(profile.bed_time), profile.bed_jitter);
        let rise = jittered(&mut rng, noon_offset(profile.rise_time), profile.rise_jitter);
        let fall = uniform_inclusive(&mut rng, profile.falling_duration_range);
        for k in 0..fall {
            states[base + bed + k] = SleepState::FallingAsleep;
            falling[base + bed + k] = (k, fall);
        }
        states[base + bed + fall..base + rise].fill(SleepState::Sleep);
    }

    let siesta_mean = profile.siesta_mean();
    let activity: Vec<f64> = (0..n)
        .map(|i| match states[i] {
            SleepState::Wake => {
                let scale = if winddown[i] { WINDDOWN_SCALE } else { 1.0 };
                truncated_normal(&mut rng, scale * profile.wake_mean, profile.wake_std)
            }
            SleepState::Sleep => {
                if rng.random_bool(profile.restlessness) {
                    truncated_normal(&mut rng, BURST_SCALE * profile.wake_mean, profile.wake_std)
                } else {
                    truncated_normal(&mut rng, profile.sleep_mean, profile.sleep_std)
                }
            }
            SleepState::Siesta => truncated_normal(&mut rng, siesta_mean, profile.sleep_std),
            SleepState::FallingAsleep => {
                let (k, len) = falling[i];
                let frac = (k + 1) as f64 / (len + 1) as f64;
                match profile.falling_style {
                    FallingStyle::Ramp => truncated_normal(
                        &mut rng,
                        profile.wake_mean + frac * (profile.sleep_mean - profile.wake_mean),
                        profile.wake_std + frac * (profile.sleep_std - profile.wake_std),
                    ),
                    FallingStyle::SparseBursts => {
                        if rng.random_bool(1.0 - frac) {
                            truncated_normal(&mut rng, profile.wake_mean, profile.wake_std)
                        } else {
                            truncated_normal(&mut rng, profile.sleep_mean, profile.sleep_std)
                        }
                    }
                }
            }
        })
        .collect();

    LabeledSeries::from_columns(patient_id, ClockTime::NOON, &activity, Some(&states), None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AttackSchedule {
    pub attack_days: BTreeSet<usize>,
    /// Probability per hour-long slot of sleep that a Wake run is inserted
    /// on attack nights.
    pub nocturnal_fragmentation: f64,
    /// Inclusive epoch spans tagged as attacks.
    pub attack_epoch_ranges: Vec<(usize, usize)>,
}

impl AttackSchedule {
    pub fn none() -> Self {
        Self::default()
    }

    /// One hour-long attack at 02:00 on each listed day of a noon-started series.
    pub fn nightly(days: impl IntoIterator<Item = usize>, fragmentation: f64) -> Self {
        let attack_days: BTreeSet<usize> = days.into_iter().collect();
        let start = noon_offset(2.0) as usize;
        let attack_epoch_ranges = attack_days
            .iter()
            .map(|d| {
                let s = d * EPOCHS_PER_DAY + start;
                (s, s + EPOCHS_PER_HOUR - 1)
            })
            .collect();
        Self {
            attack_days,
            nocturnal_fragmentation: fragmentation,
            attack_epoch_ranges,
        }
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.nocturnal_fragmentation) {
            return Err(Error::Config("nocturnal_fragmentation must lie in [0, 1]".into()));
        }
        for &(s, e) in &self.attack_epoch_ranges {
            if s > e || e >= len {
                return Err(Error::Invalid(format!(
                    "attack range [{s}, {e}] outside series of {len} epochs"
                )));
            }
        }
        let range_days: BTreeSet<usize> = self.attack_epoch_ranges.iter().map(|r| r.0 / EPOCHS_PER_DAY).collect();
        if range_days != self.attack_days {
            return Err(Error::Invalid(format!(
                "attack days {:?} do not match the days of the attack ranges {:?}",
                self.attack_days, range_days
            )));
        }
        Ok(())
    }
}

pub fn apply_attack_schedule(series: &LabeledSeries, schedule: &AttackSchedule, seed: u64) -> Result<LabeledSeries> {
    schedule.validate(series.len())?;
    let mut states = series.states()?;
    let mut activity = series.activity();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if schedule.nocturnal_fragmentation > 0.0 {
        let wake: Vec<f64> = states
            .iter()
            .zip(&activity)
            .filter(|(s, _)| **s == SleepState::Wake)
            .map(|(_, a)| *a)
            .collect();
        if wake.is_empty() {
            return Err(Error::Invalid("fragmentation needs Wake epochs to calibrate activity".into()));
        }
        let mean = wake.iter().sum::<f64>() / wake.len() as f64;
        let std = (wake.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / wake.len() as f64).sqrt();

        for &day in &schedule.attack_days {
            let lo = day * EPOCHS_PER_DAY;
            let hi = ((day + 1) * EPOCHS_PER_DAY).min(states.len());
            if lo >= hi {
                continue;
            }
            let day_runs = runs(&states[lo..hi]);
            for (state, s, e) in day_runs {
                if state != SleepState::Sleep {
                    continue;
                }
                let (s, e) = (lo + s, lo + e);
                // The first Sleep epoch is kept so a preceding falling-asleep
                // run still ends in Sleep; inserted runs end before `e`.
                let mut slot = s + 1;
                while slot < e {
                    let slot_end = (slot + FRAGMENT_SLOT).min(e);
                    if rng.random_bool(schedule.nocturnal_fragmentation) {
                        let len = uniform_inclusive(&mut rng, FRAGMENT_LEN);
                        if slot + len <= slot_end {
                            let start = rng.random_range(slot..=slot_end - len);
                            for i in start..start + len {
                                states[i] = SleepState::Wake;
                                activity[i] = truncated_normal(&mut rng, mean, std);
                            }
                        }
                    }
                    slot += FRAGMENT_SLOT;
                }
            }
        }
    }

    let mut attack = vec![false; states.len()];
    for &(s, e) in &schedule.attack_epoch_ranges {
        attack[s..=e].fill(true);
    }
    LabeledSeries::from_columns(
        series.patient_id(),
        series.start_clock(),
        &activity,
        Some(&states),
        Some(&attack),
    )
}

pub fn patient_id(index: usize) -> String {
    format!("patient{:02}", index + 1)
}

pub fn generate_cohort(
    profiles: &[PatientProfile],
    schedules: &[AttackSchedule],
    num_days: usize,
    seed: u64,
) -> Result<Vec<LabeledSeries>> {
    if profiles.len() != schedules.len() {
        return Err(Error::LengthMismatch(format!(
            "{} profiles but {} attack schedules",
            profiles.len(),
            schedules.len()
        )));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    profiles
        .iter()
        .zip(schedules)
        .enumerate()
        .map(|(i, (profile, schedule))| {
            let series_seed: u64 = master.random();
            let attack_seed: u64 = master.random();
            let s = generate_named_series(&patient_id(i), profile, num_days, series_seed)?;
            apply_attack_schedule(&s, schedule, attack_seed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::validate_label_grammar;

    #[test]
    fn default_profile_is_valid() {
        PatientProfile::default().validate().unwrap();
    }

    #[test]
    fn degenerate_profile_rejected() {
        let p = PatientProfile {
            wake_mean: 0.05,
            ..Default::default()
        };
        assert!(generate_patient_series(&p, 1, 0).is_err());
        assert!(generate_patient_series(&PatientProfile::default(), 0, 0).is_err());
    }

    #[test]
    fn one_day_length_and_grammar() {
        let s = generate_patient_series(&PatientProfile::default(), 1, 9).unwrap();
        assert_eq!(s.len(), 2880);
        assert!(validate_label_grammar(&s, &DaytimeConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn empty_schedule_is_identity_apart_from_tags() {
        let s = generate_patient_series(&PatientProfile::default(), 2, 1).unwrap();
        let t = apply_attack_schedule(&s, &AttackSchedule::none(), 5).unwrap();
        assert_eq!(s.activity(), t.activity());
        assert_eq!(s.states().unwrap(), t.states().unwrap());
        assert!(t.epochs().iter().all(|e| e.attack == Some(false)));
    }

    #[test]
    fn range_tags_exact_count() {
        let s = generate_patient_series(&PatientProfile::default(), 1, 1).unwrap();
        let sched = AttackSchedule {
            attack_days: [0].into(),
            nocturnal_fragmentation: 0.0,
            attack_epoch_ranges: vec![(100, 120)],
        };
        let t = apply_attack_schedule(&s, &sched, 0).unwrap();
        assert_eq!(t.attacks().iter().filter(|&&a| a).count(), 21);
    }

    #[test]
    fn schedule_validation() {
        let s = generate_patient_series(&PatientProfile::default(), 1, 1).unwrap();
        let out_of_bounds = AttackSchedule {
            attack_days: [0].into(),
            nocturnal_fragmentation: 0.0,
            attack_epoch_ranges: vec![(2800, 2900)],
        };
        assert!(apply_attack_schedule(&s, &out_of_bounds, 0).is_err());
        let inconsistent = AttackSchedule {
            attack_days: [0, 1].into(),
            nocturnal_fragmentation: 0.0,
            attack_epoch_ranges: vec![(10, 20)],
        };
        assert!(apply_attack_schedule(&s, &inconsistent, 0).is_err());
    }

    #[test]
    fn cohort_length_mismatch() {
        let p = vec![PatientProfile::default(); 2];
        assert!(generate_cohort(&p, &[AttackSchedule::none()], 1, 0).is_err());
    }
}
