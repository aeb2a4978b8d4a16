//! CSV and plain-text renderings of metrics, curves, distance matrices and
//! clustering results.

use std::fmt::Write as _;

use crate::cluster::DistanceMatrix;
use crate::error::{Error, Result};
use crate::metrics::{format3, ConfusionMatrix, ConvergenceCurve, CurveSummary, MetricsReport, CURVE_THRESHOLDS};
use crate::types::SleepState;

/// State order used in printed tables.
pub const TABLE_ORDER: [SleepState; 4] = [
    SleepState::Sleep,
    SleepState::Siesta,
    SleepState::FallingAsleep,
    SleepState::Wake,
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt3(v: Option<f64>) -> String {
    v.map(format3).unwrap_or_else(|| "undefined".into())
}

pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut s = String::from("state,precision,recall,f1,predicted,actual\n");
    for st in TABLE_ORDER {
        let m = report.state(st);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            st.letter(),
            opt(m.precision),
            opt(m.recall),
            opt(m.f1),
            m.predicted,
            m.actual
        );
    }
    let _ = writeln!(
        s,
        "macro,{},{},{},{},{}",
        opt(report.macro_precision),
        opt(report.macro_recall),
        opt(report.macro_f1),
        report.total,
        report.total
    );
    let _ = writeln!(s, "accuracy,{},,,{},{}", report.accuracy, report.total, report.total);
    s
}

pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut s = String::from("predicted\\actual");
    for a in TABLE_ORDER {
        let _ = write!(s, ",{}", a.letter());
    }
    s.push('\n');
    for p in TABLE_ORDER {
        s.push(p.letter());
        for a in TABLE_ORDER {
            let _ = write!(s, ",{}", cm.get(p, a));
        }
        s.push('\n');
    }
    s
}

/// Reads a 4x4 matrix written by [`confusion_csv`]; thousands separators
/// inside quoted fields are accepted.
pub fn parse_confusion_csv(text: &str) -> Result<ConfusionMatrix> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let bad = |m: String| Error::Invalid(format!("confusion matrix: {m}"));
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col_states = header
        .iter()
        .skip(1)
        .map(|h| parse_state(h).ok_or_else(|| bad(format!("unknown column `{h}`"))))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = [[0u64; 4]; 4];
    let mut seen_rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let p = parse_state(&rec[0]).ok_or_else(|| bad(format!("unknown row `{}`", &rec[0])))?;
        if rec.len() != col_states.len() + 1 {
            return Err(bad(format!("row `{}` has {} fields", &rec[0], rec.len())));
        }
        for (a, field) in col_states.iter().zip(rec.iter().skip(1)) {
            let v: u64 = field
                .replace(',', "")
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad count `{field}`")))?;
            counts[p.index()][a.index()] = v;
        }
        seen_rows.push(p);
    }
    let mut rows = seen_rows.clone();
    rows.sort();
    rows.dedup();
    let mut cols = col_states.clone();
    cols.sort();
    cols.dedup();
    if rows.len() != 4 || seen_rows.len() != 4 || cols.len() != 4 || col_states.len() != 4 {
        return Err(bad("expected each of the four states exactly once per axis".into()));
    }
    Ok(ConfusionMatrix::new(counts))
}

fn parse_state(s: &str) -> Option<SleepState> {
    let s = s.trim();
    SleepState::ALL
        .into_iter()
        .find(|st| s == st.name() || s.len() == 1 && s.starts_with(st.letter()) || s == format!("{st:?}"))
}

/// Plain-text precision/recall table followed by the confusion matrix.
pub fn render_report(title: &str, report: &MetricsReport, cm: &ConfusionMatrix) -> String {
    let mut s = format!("{title}\n\n");
    let _ = write!(s, "{:<12}", "");
    for st in TABLE_ORDER {
        let _ = write!(s, "{:>16}", st.name());
    }
    s.push('\n');
    for (label, pick) in [
        ("Precision", 0usize),
        ("Recall", 1),
        ("F1", 2),
    ] {
        let _ = write!(s, "{label:<12}");
        for st in TABLE_ORDER {
            let m = report.state(st);
            let v = [m.precision, m.recall, m.f1][pick];
            let _ = write!(s, "{:>16}", opt3(v));
        }
        s.push('\n');
    }
    let _ = writeln!(
        s,
        "\nAccuracy {}  macro precision {}  macro recall {}  macro F1 {}",
        format3(report.accuracy),
        opt3(report.macro_precision),
        opt3(report.macro_recall),
        opt3(report.macro_f1)
    );
    for f in &report.flags {
        let _ = writeln!(s, "note: {f}");
    }
    let _ = write!(s, "\nConfusion matrix (rows predicted, columns actual)\n{:<16}", "");
    for st in TABLE_ORDER {
        let _ = write!(s, "{:>16}", st.name());
    }
    s.push('\n');
    for p in TABLE_ORDER {
        let _ = write!(s, "{:<16}", p.name());
        for a in TABLE_ORDER {
            let _ = write!(s, "{:>16}", cm.get(p, a));
        }
        s.push('\n');
    }
    s
}

pub fn convergence_csv(curves: &[ConvergenceCurve]) -> String {
    let mut s = String::from("model,epoch,train_accuracy,test_accuracy,train_loss,test_loss,learning_rate\n");
    for c in curves {
        for r in &c.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                c.model, r.epoch, r.train_accuracy, r.test_accuracy, r.train_loss, r.test_loss, r.learning_rate
            );
        }
    }
    s
}

pub fn timing_csv(curves: &[ConvergenceCurve]) -> String {
    let mut s = String::from("model,epoch,seconds\n");
    for c in curves {
        for r in &c.records {
            let _ = writeln!(s, "{},{},{}", c.model, r.epoch, r.seconds);
        }
    }
    s
}

pub fn curve_comparison_csv(rows: &[CurveSummary]) -> String {
    let mut s = String::from("model");
    for t in CURVE_THRESHOLDS {
        let _ = write!(s, ",epochs_to_{t}");
    }
    s.push_str(",final_test_accuracy,best_test_accuracy\n");
    for r in rows {
        s.push_str(&r.model);
        for e in &r.epochs_to_threshold {
            match e {
                Some(e) => {
                    let _ = write!(s, ",{e}");
                }
                None => s.push_str(",not reached"),
            }
        }
        let _ = writeln!(s, ",{},{}", r.final_test_accuracy, r.best_test_accuracy);
    }
    s
}

pub fn distance_csv(m: &DistanceMatrix) -> String {
    let names: Vec<String> = m.leaves().iter().map(|l| l.name()).collect();
    let mut s = String::from("day");
    for n in &names {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    for (i, n) in names.iter().enumerate() {
        s.push_str(n);
        for j in 0..m.len() {
            let _ = write!(s, ",{}", m.get(i, j));
        }
        s.push('\n');
    }
    s
}
