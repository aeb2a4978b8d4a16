//! Delimited epoch files.
//!
//! One row per epoch: `patient_id,timestamp_s,activity,state,attack`.
//! `timestamp_s` counts seconds from midnight of the series' first day and
//! sits on the 30-second grid, which also encodes the wall-clock start.
//! `state` is one of W, F, Z, S or empty; `attack` is 0, 1 or empty.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic::write_atomic;
use crate::types::{ClockTime, Epoch, LabeledSeries, SleepState, EPOCH_SECONDS};

pub const SERIES_HEADER: [&str; 5] = ["patient_id", "timestamp_s", "activity", "state", "attack"];

pub fn write_series<W: Write>(series: &[LabeledSeries], out: W) -> Result<()> {
    let mut sorted: Vec<&LabeledSeries> = series.iter().collect();
    sorted.sort_by(|a, b| a.patient_id().cmp(b.patient_id()));
    if let Some(w) = sorted.windows(2).find(|w| w[0].patient_id() == w[1].patient_id()) {
        return Err(Error::Invalid(format!("duplicate patient id `{}`", w[0].patient_id())));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let csv_err = |e: csv::Error| Error::Invalid(format!("writing series: {e}"));
    w.write_record(SERIES_HEADER).map_err(csv_err)?;
    for s in sorted {
        if s.start_clock().seconds() as u64 % EPOCH_SECONDS != 0 {
            return Err(Error::Invalid(format!(
                "{}: start clock {} is off the 30-second grid",
                s.patient_id(),
                s.start_clock()
            )));
        }
        let base = s.start_clock().seconds() as u64;
        for e in s.epochs() {
            let state = e.state.map(|st| st.letter().to_string()).unwrap_or_default();
            let attack = e.attack.map(|a| if a { "1" } else { "0" }).unwrap_or("");
            w.write_record([
                s.patient_id(),
                &(base + e.timestamp).to_string(),
                &e.activity.to_string(),
                &state,
                attack,
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Invalid(format!("writing series: {e}")))?;
    Ok(())
}

pub fn save_series(series: &[LabeledSeries], path: &Path) -> Result<()> {
    write_atomic(path, |w| write_series(series, w))
}

struct Pending {
    patient_id: String,
    first_ts: u64,
    last_ts: u64,
    first_line: u64,
    epochs: Vec<Epoch>,
}

/// Parses a series file. `path` is only used in error messages.
pub fn read_series<R: Read>(input: R, path: &Path) -> Result<Vec<LabeledSeries>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = r.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != SERIES_HEADER {
        return Err(err(1, format!("expected header `{}`", SERIES_HEADER.join(","))));
    }
    let mut done: Vec<LabeledSeries> = Vec::new();
    let mut cur: Option<Pending> = None;
    let finish = |p: Pending| -> Result<LabeledSeries> {
        let clock = ClockTime::from_seconds((p.first_ts % 86_400) as u32)?;
        LabeledSeries::new(p.patient_id, clock, p.epochs).map_err(|e| err(p.first_line, e.to_string()))
    };

    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 5 {
            return Err(err(line, format!("expected 5 fields, found {}", rec.len())));
        }
        let pid = &rec[0];
        if pid.is_empty() {
            return Err(err(line, "empty patient_id".into()));
        }
        let ts: u64 = rec[1]
            .parse()
            .map_err(|_| err(line, format!("bad timestamp `{}`", &rec[1])))?;
        if ts % EPOCH_SECONDS != 0 {
            return Err(err(line, format!("timestamp {ts} is off the 30-second grid")));
        }
        let activity: f64 = rec[2]
            .parse()
            .map_err(|_| err(line, format!("bad activity `{}`", &rec[2])))?;
        if !(activity.is_finite() && activity >= 0.0) {
            return Err(err(line, format!("activity {activity} must be finite and non-negative")));
        }
        let state = match &rec[3] {
            "" => None,
            s => {
                let mut cs = s.chars();
                match (cs.next().and_then(SleepState::from_letter), cs.next()) {
                    (Some(st), None) => Some(st),
                    _ => return Err(err(line, format!("unknown state code `{s}`"))),
                }
            }
        };
        let attack = match &rec[4] {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            a => return Err(err(line, format!("attack must be 0, 1 or empty, got `{a}`"))),
        };

        let same = cur.as_ref().is_some_and(|p| p.patient_id == pid);
        if !same {
            if let Some(p) = cur.take() {
                if pid < p.patient_id.as_str() {
                    return Err(err(line, format!("rows not sorted: `{pid}` after `{}`", p.patient_id)));
                }
                done.push(finish(p)?);
            }
            cur = Some(Pending {
                patient_id: pid.to_string(),
                first_ts: ts,
                last_ts: ts,
                first_line: line,
                epochs: Vec::new(),
            });
        } else {
            let p = cur.as_mut().expect("current series");
            if ts != p.last_ts + EPOCH_SECONDS {
                return Err(err(
                    line,
                    format!("timestamp {ts} does not follow {} on the 30-second grid", p.last_ts),
                ));
            }
            p.last_ts = ts;
        }
        let p = cur.as_mut().expect("current series");
        if let Some(first) = p.epochs.first() {
            if first.state.is_some() != state.is_some() {
                return Err(err(line, "labels must be present on all rows of a patient or none".into()));
            }
        }
        p.epochs.push(Epoch {
            timestamp: ts - p.first_ts,
            activity,
            state,
            attack,
        });
    }
    if let Some(p) = cur.take() {
        done.push(finish(p)?);
    }
    Ok(done)
}

pub fn load_series(path: &Path) -> Result<Vec<LabeledSeries>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_series(std::io::BufReader::new(f), path)
}
