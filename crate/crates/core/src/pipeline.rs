//! End-to-end steps shared by the command-line tool and the tests.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use actisleep_nn::gradcheck::{grad_check, CheckConfig, CheckReport, CheckSample};
use actisleep_nn::{Mode, Tensor};
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::Serialize;

use crate::cluster::{cut_tree, export_tree, pairwise_dtw, separation_score, upgma, DayEncoding, Dendrogram, DistanceMatrix, Separation};
use crate::error::{Error, Result};
use crate::io::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::io::config::RunConfig;
use crate::io::report::{confusion_csv, convergence_csv, distance_csv, metrics_csv, render_report, timing_csv};
use crate::io::series_file::{load_series, save_series};
use crate::io::write_string;
use crate::metrics::{precision_recall, ConfusionMatrix, MetricsReport};
use crate::models::data::{derived_rng, split_windows};
use crate::models::features::features_from_values;
use crate::models::{evaluate, train, Model, ModelKind, ModelSpec, PreparedSeries, TrainOutcome, WindowSet, NUM_STATES};
use crate::series::partition_days;
use crate::synth::generate_cohort;
use crate::types::{DayVector, LabeledSeries};

pub fn generate(cfg: &RunConfig) -> Result<Vec<LabeledSeries>> {
    let profiles = cfg.generator.profiles();
    let schedules = cfg.generator.schedules()?;
    generate_cohort(&profiles, &schedules, cfg.generator.num_days, cfg.seed)
}

/// Writes one series file per patient, named `<patient_id>.csv`.
pub fn write_cohort(series: &[LabeledSeries], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    series
        .iter()
        .map(|s| {
            let path = dir.join(format!("{}.csv", s.patient_id()));
            save_series(std::slice::from_ref(s), &path)?;
            Ok(path)
        })
        .collect()
}

/// Loads series from files and directories. A directory contributes every
/// `.csv` file directly inside it, in name order.
pub fn load_data(paths: &[PathBuf]) -> Result<Vec<LabeledSeries>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Invalid("no series files found".into()));
    }
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for f in files {
        for s in load_series(&f)? {
            if !ids.insert(s.patient_id().to_string()) {
                return Err(Error::Invalid(format!(
                    "patient `{}` appears in more than one input",
                    s.patient_id()
                )));
            }
            out.push(s);
        }
    }
    Ok(out)
}

/// `dir/stem + suffix` for a path `dir/stem.ext`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub model: Model,
    pub meta: CheckpointMeta,
    pub outcome: TrainOutcome,
    pub confusion: ConfusionMatrix,
    pub report: MetricsReport,
}

fn prepare(cfg: &RunConfig, series: &[LabeledSeries]) -> Result<Arc<[PreparedSeries]>> {
    series.iter().map(|s| PreparedSeries::new(s, &cfg.data)).collect()
}

fn held_out_metrics(report: &MetricsReport) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("test_accuracy".to_string(), report.accuracy);
    for (key, v) in [
        ("macro_precision", report.macro_precision),
        ("macro_recall", report.macro_recall),
        ("macro_f1", report.macro_f1),
    ] {
        if let Some(v) = v {
            m.insert(key.to_string(), v);
        }
    }
    for s in &report.states {
        let l = s.state.letter();
        for (key, v) in [("precision", s.precision), ("recall", s.recall), ("f1", s.f1)] {
            if let Some(v) = v {
                m.insert(format!("{key}_{l}"), v);
            }
        }
    }
    m
}

/// Splits the windows, trains a fresh model and scores it on every held-out
/// window.
pub fn train_model(cfg: &RunConfig, series: &[LabeledSeries], kind: ModelKind) -> Result<TrainedRun> {
    cfg.validate()?;
    let spec = cfg.models.spec(kind);
    let prepared = prepare(cfg, series)?;
    let (train_refs, test_refs) = split_windows(&prepared, cfg.data.context, cfg.split.train_fraction, cfg.seed)?;
    if test_refs.is_empty() {
        return Err(Error::Invalid("the split left no held-out windows".into()));
    }
    let mut model = Model::new(spec.clone(), cfg.data, cfg.seed)?;
    if !spec.uses_features() {
        let (mean, std) = center_statistics(&prepared, &train_refs);
        model.graph.set_standardization(mean, std)?;
    }
    let train_set = WindowSet::new(prepared.clone(), train_refs, cfg.data.context, &spec)?;
    let test_set = WindowSet::new(prepared, test_refs, cfg.data.context, &spec)?;
    let monitor = test_set.strided(cfg.split.monitor_stride);
    let tc = cfg.train.to_config(cfg.seed);
    let head_weights = spec.head_weights();
    let outcome = train(&mut model.graph, kind.name(), &train_set, &monitor, &head_weights, &tc)?;
    model.mark_loaded();
    let confusion = evaluate(&model.graph, &test_set, &head_weights)?.confusion;
    let report = precision_recall(&confusion)?;
    let mut meta = CheckpointMeta::new(spec, cfg.data);
    meta.train = Some(tc);
    meta.split = Some(cfg.split.clone());
    meta.metrics = held_out_metrics(&report);
    meta.metrics.insert("best_epoch".into(), outcome.best_epoch as f64);
    Ok(TrainedRun {
        model,
        meta,
        outcome,
        confusion,
        report,
    })
}

/// Mean and population standard deviation of the smoothed activity at the
/// training window centers.
fn center_statistics(prepared: &[PreparedSeries], refs: &[crate::models::WindowRef]) -> (f64, f64) {
    let values: Vec<f64> = refs.iter().map(|r| prepared[r.series].activity[r.center]).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-12))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub confusion: PathBuf,
    pub convergence: PathBuf,
    pub timing: PathBuf,
}

impl TrainArtifacts {
    pub fn for_checkpoint(path: &Path) -> Self {
        Self {
            checkpoint: path.to_path_buf(),
            metrics: sibling(path, ".metrics.csv"),
            confusion: sibling(path, ".confusion.csv"),
            convergence: sibling(path, ".convergence.csv"),
            timing: sibling(path, ".timing.csv"),
        }
    }
}

pub fn write_training_artifacts(run: &TrainedRun, checkpoint: &Path) -> Result<TrainArtifacts> {
    let paths = TrainArtifacts::for_checkpoint(checkpoint);
    save_checkpoint(&run.model, &run.meta, &paths.checkpoint)?;
    write_string(&paths.metrics, &metrics_csv(&run.report))?;
    write_string(&paths.confusion, &confusion_csv(&run.confusion))?;
    let curves = std::slice::from_ref(&run.outcome.curve);
    write_string(&paths.convergence, &convergence_csv(curves))?;
    write_string(&paths.timing, &timing_csv(curves))?;
    Ok(paths)
}

/// Confusion matrix of a trained model on `series`.
///
/// With `all_windows` false and a split recorded in the checkpoint, only the
/// held-out windows of that split are scored; otherwise every window is.
pub fn evaluate_model(model: &Model, meta: &CheckpointMeta, series: &[LabeledSeries], all_windows: bool) -> Result<ConfusionMatrix> {
    let prepared: Arc<[PreparedSeries]> = series.iter().map(|s| PreparedSeries::new(s, &model.data)).collect::<Result<_>>()?;
    let context = model.data.context;
    let refs = match (&meta.split, &meta.train, all_windows) {
        (Some(split), Some(tc), false) => split_windows(&prepared, context, split.train_fraction, tc.seed)?.1,
        _ => {
            let (mut a, b) = split_windows(&prepared, context, 0.5, 0)?;
            a.extend(b);
            a.sort_by_key(|r| (r.series, r.center));
            a
        }
    };
    if refs.is_empty() {
        return Err(Error::Invalid("no windows to evaluate".into()));
    }
    let set = WindowSet::new(prepared, refs, context, &model.spec)?;
    Ok(evaluate(&model.graph, &set, &model.spec.head_weights())?.confusion)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportArtifacts {
    pub report: PathBuf,
    pub metrics: PathBuf,
    pub confusion: PathBuf,
}

/// Writes the text report to `out` plus metrics and confusion CSVs beside it.
pub fn write_report(title: &str, cm: &ConfusionMatrix, out: &Path) -> Result<(MetricsReport, ReportArtifacts)> {
    let report = precision_recall(cm)?;
    let paths = ReportArtifacts {
        report: out.to_path_buf(),
        metrics: sibling(out, ".metrics.csv"),
        confusion: sibling(out, ".confusion.csv"),
    };
    write_string(&paths.metrics, &metrics_csv(&report))?;
    write_string(&paths.confusion, &confusion_csv(cm))?;
    write_string(&paths.report, &render_report(title, &report, cm))?;
    Ok((report, paths))
}

/// Replaces the state labels of every series with model predictions; the
/// attack column is kept.
pub fn predict_states(model: &Model, series: &[LabeledSeries]) -> Result<Vec<LabeledSeries>> {
    series
        .iter()
        .map(|s| s.with_states(&model.predict_series(s)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterOutcome {
    pub matrix: DistanceMatrix,
    pub tree: Dendrogram,
    pub k: usize,
    pub assignment: Vec<usize>,
    pub by_attack: Separation,
    pub by_patient: Separation,
}

pub fn cluster_days(series: &[LabeledSeries], encoding: &DayEncoding, k: usize) -> Result<ClusterOutcome> {
    let mut days: Vec<DayVector> = Vec::new();
    for s in series {
        days.extend(partition_days(s)?);
    }
    let matrix = pairwise_dtw(&days, encoding)?;
    let tree = upgma(&matrix)?;
    let assignment = cut_tree(&tree, k)?;
    let attacks: Vec<bool> = days.iter().map(|d| d.has_attack).collect();
    let patients: Vec<&str> = days.iter().map(|d| d.patient_id.as_str()).collect();
    Ok(ClusterOutcome {
        by_attack: separation_score(&assignment, &attacks)?,
        by_patient: separation_score(&assignment, &patients)?,
        matrix,
        tree,
        k,
        assignment,
    })
}

pub fn write_cluster_outputs(outcome: &ClusterOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut assignments = String::from("leaf,patient_id,day,has_attack,cluster\n");
    for (leaf, c) in outcome.matrix.leaves().iter().zip(&outcome.assignment) {
        assignments.push_str(&format!(
            "{},{},{},{},{c}\n",
            leaf.name(),
            leaf.patient_id,
            leaf.day_index,
            u8::from(leaf.has_attack)
        ));
    }
    let separation = format!(
        "labels,k,purity,adjusted_rand_index\nattack,{k},{},{}\npatient,{k},{},{}\n",
        outcome.by_attack.purity,
        outcome.by_attack.adjusted_rand_index,
        outcome.by_patient.purity,
        outcome.by_patient.adjusted_rand_index,
        k = outcome.k
    );
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "leaves": outcome.matrix.leaves().iter().map(|l| l.name()).collect::<Vec<_>>(),
        "merges": outcome.tree.merges,
    }))
    .map_err(|e| Error::Invalid(e.to_string()))?;
    let files = [
        ("distances.csv", distance_csv(&outcome.matrix)),
        ("tree.nwk", export_tree(&outcome.tree) + "\n"),
        ("tree.json", json + "\n"),
        ("assignments.csv", assignments),
        ("separation.csv", separation),
    ];
    files
        .into_iter()
        .map(|(name, text)| {
            let p = dir.join(name);
            write_string(&p, &text)?;
            Ok(p)
        })
        .collect()
}

/// Finite-difference check of a freshly initialized model on a random
/// two-sample batch. Dropout and batch normalization are frozen in
/// evaluation mode.
pub fn gradcheck_model(spec: &ModelSpec, seed: u64, samples: usize) -> Result<CheckReport> {
    let mut graph = spec.build()?;
    graph.init_params(seed);
    graph.set_mode(Mode::Eval);
    let mut rng = derived_rng(seed, 9);
    let window_len = match spec {
        ModelSpec::Mlp(_) => crate::types::WINDOW_LEN,
        _ => spec.input_len(),
    };
    let lognormal = LogNormal::new(-1.0, 1.0).expect("valid parameters");
    let batch = 2;
    let mut input = Vec::new();
    for _ in 0..batch {
        let window: Vec<f64> = (0..window_len).map(|_| lognormal.sample(&mut rng)).collect();
        if spec.uses_features() {
            input.extend(features_from_values(&window)?);
        } else {
            input.extend(window);
        }
    }
    if !spec.uses_features() {
        graph.set_standardization(0.4, 0.6)?;
    }
    let shape = if spec.uses_features() {
        vec![batch, 1, input.len() / batch]
    } else {
        vec![batch, window_len, 1]
    };
    let mut targets = Vec::new();
    for out in graph.output_shapes() {
        let classes = out.units();
        let mut t = vec![0.0; batch * classes];
        for r in 0..batch {
            if classes == NUM_STATES {
                t[r * classes + rng.random_range(0..classes)] = 1.0;
            } else {
                let p: f64 = rng.random();
                t[r * classes] = p;
                t[r * classes + 1] = 1.0 - p;
            }
        }
        targets.push(Tensor::new(vec![batch, classes], t)?);
    }
    let sample = CheckSample {
        input: Tensor::new(shape, input)?,
        targets,
        head_weights: spec.head_weights(),
    };
    let config = CheckConfig {
        samples,
        seed,
        ..CheckConfig::default()
    };
    Ok(grad_check(&mut graph, &sample, &config)?)
}
