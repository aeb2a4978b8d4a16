//! Domain types: the four-state label space, epochs, labeled series,
//! context windows and day vectors.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds per epoch.
pub const EPOCH_SECONDS: u64 = 30;
/// Epochs per 24 hours.
pub const EPOCHS_PER_DAY: usize = 2880;
/// Epochs per hour.
pub const EPOCHS_PER_HOUR: usize = 120;
/// Context on each side of the epoch of interest (3 hours).
pub const DEFAULT_CONTEXT: usize = 360;
/// Full window length, `2 * DEFAULT_CONTEXT + 1`.
pub const WINDOW_LEN: usize = 2 * DEFAULT_CONTEXT + 1;

/// Sleep/wake state with stable ordinal codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum SleepState {
    Wake = 0,
    FallingAsleep = 1,
    Siesta = 2,
    Sleep = 3,
}

impl SleepState {
    pub const ALL: [SleepState; 4] = [
        SleepState::Wake,
        SleepState::FallingAsleep,
        SleepState::Siesta,
        SleepState::Sleep,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Single-character file code: W, F, Z (siesta) or S.
    pub fn letter(self) -> char {
        match self {
            SleepState::Wake => 'W',
            SleepState::FallingAsleep => 'F',
            SleepState::Siesta => 'Z',
            SleepState::Sleep => 'S',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'W' => Some(SleepState::Wake),
            'F' => Some(SleepState::FallingAsleep),
            'Z' => Some(SleepState::Siesta),
            'S' => Some(SleepState::Sleep),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SleepState::Wake => "Wake",
            SleepState::FallingAsleep => "Falling asleep",
            SleepState::Siesta => "Siesta",
            SleepState::Sleep => "Sleep",
        }
    }

    /// Sleep or Siesta.
    pub fn is_asleep(self) -> bool {
        matches!(self, SleepState::Sleep | SleepState::Siesta)
    }
}

impl From<SleepState> for u8 {
    fn from(s: SleepState) -> u8 {
        s.code()
    }
}

impl TryFrom<u8> for SleepState {
    type Error = String;

    fn try_from(code: u8) -> std::result::Result<Self, String> {
        SleepState::from_code(code).ok_or_else(|| format!("unknown state code {code}"))
    }
}

impl fmt::Display for SleepState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Wall-clock time of day in seconds since midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub struct ClockTime(u32);

impl ClockTime {
    pub const NOON: ClockTime = ClockTime(12 * 3600);

    pub fn from_seconds(seconds: u32) -> Result<Self> {
        if seconds >= 86_400 {
            return Err(Error::Invalid(format!("{seconds} s is not a time of day")));
        }
        Ok(Self(seconds))
    }

    pub fn from_hms(h: u32, m: u32, s: u32) -> Result<Self> {
        if h >= 24 || m >= 60 || s >= 60 {
            return Err(Error::Invalid(format!("invalid clock time {h}:{m}:{s}")));
        }
        Ok(Self(h * 3600 + m * 60 + s))
    }

    pub fn seconds(self) -> u32 {
        self.0
    }

    pub fn hours(self) -> f64 {
        self.0 as f64 / 3600.0
    }

    /// Clock time `offset` seconds later, wrapping at midnight.
    pub fn add_seconds(self, offset: u64) -> Self {
        Self(((self.0 as u64 + offset) % 86_400) as u32)
    }
}

impl fmt::Display for ClockTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:02}:{:02}:{:02}",
            self.0 / 3600,
            (self.0 / 60) % 60,
            self.0 % 60
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    /// Seconds since series start.
    pub timestamp: u64,
    pub activity: f64,
    pub state: Option<SleepState>,
    pub attack: Option<bool>,
}

/// One patient's contiguous run of 30-second epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    patient_id: String,
    start_clock: ClockTime,
    epochs: Vec<Epoch>,
}

impl LabeledSeries {
    /// Validates the 30-second grid, activity range and all-or-none labeling.
    pub fn new(patient_id: impl Into<String>, start_clock: ClockTime, epochs: Vec<Epoch>) -> Result<Self> {
        let patient_id = patient_id.into();
        for (i, e) in epochs.iter().enumerate() {
            let expected = i as u64 * EPOCH_SECONDS;
            if e.timestamp != expected {
                return Err(Error::Invalid(format!(
                    "{patient_id}: epoch {i} has timestamp {} (expected {expected})",
                    e.timestamp
                )));
            }
            if !(e.activity.is_finite() && e.activity >= 0.0) {
                return Err(Error::Invalid(format!(
                    "{patient_id}: epoch {i} has activity {}",
                    e.activity
                )));
            }
        }
        let labeled = epochs.iter().filter(|e| e.state.is_some()).count();
        if labeled != 0 && labeled != epochs.len() {
            return Err(Error::Invalid(format!(
                "{patient_id}: {labeled} of {} epochs labeled; labels must be all or none",
                epochs.len()
            )));
        }
        Ok(Self {
            patient_id,
            start_clock,
            epochs,
        })
    }

    /// Builds a series from per-epoch columns.
    pub fn from_columns(
        patient_id: impl Into<String>,
        start_clock: ClockTime,
        activity: &[f64],
        states: Option<&[SleepState]>,
        attack: Option<&[bool]>,
    ) -> Result<Self> {
        if states.is_some_and(|s| s.len() != activity.len())
            || attack.is_some_and(|a| a.len() != activity.len())
        {
            return Err(Error::LengthMismatch("series columns differ in length".into()));
        }
        let epochs = activity
            .iter()
            .enumerate()
            .map(|(i, &a)| Epoch {
                timestamp: i as u64 * EPOCH_SECONDS,
                activity: a,
                state: states.map(|s| s[i]),
                attack: attack.map(|t| t[i]),
            })
            .collect();
        Self::new(patient_id, start_clock, epochs)
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn start_clock(&self) -> ClockTime {
        self.start_clock
    }

    pub fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.epochs.first().is_some_and(|e| e.state.is_some())
    }

    pub fn activity(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.activity).collect()
    }

    /// All labels, or `Unlabeled` if the series carries none.
    pub fn states(&self) -> Result<Vec<SleepState>> {
        self.epochs
            .iter()
            .map(|e| e.state)
            .collect::<Option<Vec<_>>>()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Unlabeled(self.patient_id.clone()))
    }

    pub fn attacks(&self) -> Vec<bool> {
        self.epochs.iter().map(|e| e.attack == Some(true)).collect()
    }

    /// Wall-clock time of epoch `i`.
    pub fn clock_at(&self, i: usize) -> ClockTime {
        self.start_clock.add_seconds(i as u64 * EPOCH_SECONDS)
    }

    /// Same timing and patient, new activity values.
    pub fn with_activity(&self, activity: Vec<f64>) -> Result<Self> {
        if activity.len() != self.len() {
            return Err(Error::LengthMismatch(format!(
                "{} activity values for {} epochs",
                activity.len(),
                self.len()
            )));
        }
        let epochs = self
            .epochs
            .iter()
            .zip(activity)
            .map(|(e, a)| Epoch { activity: a, ..*e })
            .collect();
        Self::new(self.patient_id.clone(), self.start_clock, epochs)
    }

    /// Same timing and patient, new labels.
    pub fn with_states(&self, states: &[SleepState]) -> Result<Self> {
        if states.len() != self.len() {
            return Err(Error::LengthMismatch(format!(
                "{} labels for {} epochs",
                states.len(),
                self.len()
            )));
        }
        let epochs = self
            .epochs
            .iter()
            .zip(states)
            .map(|(e, &s)| Epoch {
                state: Some(s),
                ..*e
            })
            .collect();
        Self::new(self.patient_id.clone(), self.start_clock, epochs)
    }

}

/// Activity context centered on one epoch, with its labels when available.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub patient_id: String,
    /// `2 * context + 1` activity values; the epoch of interest sits at `context`.
    pub values: Vec<f64>,
    /// Position of the epoch of interest in the source series.
    pub center_index: usize,
    pub center_label: Option<SleepState>,
    pub window_labels: Option<Vec<SleepState>>,
}

impl WindowSample {
    pub fn center_value(&self) -> f64 {
        self.values[self.values.len() / 2]
    }
}

/// One 24-hour block of a patient's states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayVector {
    pub patient_id: String,
    pub day_index: usize,
    /// Ordinal state codes, one per epoch.
    pub states: Vec<u8>,
    pub activity: Vec<f64>,
    pub has_attack: bool,
}

/// Wall-clock hours during which Siesta is legal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaytimeConfig {
    pub day_start: f64,
    pub day_end: f64,
}

impl Default for DaytimeConfig {
    fn default() -> Self {
        Self {
            day_start: 8.0,
            day_end: 20.0,
        }
    }
}

impl DaytimeConfig {
    pub fn new(day_start: f64, day_end: f64) -> Result<Self> {
        if !(0.0 <= day_start && day_start < day_end && day_end <= 24.0) {
            return Err(Error::Config(format!(
                "daytime needs 0 <= start < end <= 24, got [{day_start}, {day_end})"
            )));
        }
        Ok(Self { day_start, day_end })
    }

    pub fn contains(&self, clock: ClockTime) -> bool {
        let h = clock.hours();
        h >= self.day_start && h < self.day_end
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_stable() {
        let codes: Vec<u8> = SleepState::ALL.iter().map(|s| s.code()).collect();
        assert_eq!(codes, vec![0, 1, 2, 3]);
        for s in SleepState::ALL {
            assert_eq!(SleepState::from_code(s.code()), Some(s));
            assert_eq!(SleepState::from_letter(s.letter()), Some(s));
        }
        assert_eq!(serde_json::to_string(&SleepState::Siesta).unwrap(), "2");
        assert_eq!(serde_json::from_str::<SleepState>("3").unwrap(), SleepState::Sleep);
        assert!(serde_json::from_str::<SleepState>("4").is_err());
    }

    #[test]
    fn grid_and_labeling_invariants() {
        let e = |t, s| Epoch {
            timestamp: t,
            activity: 1.0,
            state: s,
            attack: None,
        };
        assert!(LabeledSeries::new("p", ClockTime::NOON, vec![e(0, None), e(30, None)]).is_ok());
        assert!(LabeledSeries::new("p", ClockTime::NOON, vec![e(0, None), e(45, None)]).is_err());
        assert!(LabeledSeries::new(
            "p",
            ClockTime::NOON,
            vec![e(0, Some(SleepState::Wake)), e(30, None)]
        )
        .is_err());
        let mut neg = e(0, None);
        neg.activity = -1.0;
        assert!(LabeledSeries::new("p", ClockTime::NOON, vec![neg]).is_err());
    }

    #[test]
    fn clock_wraps_at_midnight() {
        let s = LabeledSeries::from_columns("p", ClockTime::from_hms(23, 59, 30).unwrap(), &[0.0; 3], None, None).unwrap();
        assert_eq!(s.clock_at(2).to_string(), "00:00:30");
    }

    #[test]
    fn daytime_bounds() {
        assert!(DaytimeConfig::new(20.0, 8.0).is_err());
        assert!(DaytimeConfig::new(0.0, 24.0).is_ok());
        let d = DaytimeConfig::default();
        assert!(d.contains(ClockTime::from_hms(8, 0, 0).unwrap()));
        assert!(!d.contains(ClockTime::from_hms(20, 0, 0).unwrap()));
    }
}
