use std::path::Path;

use actisleep::io::atomic::{write_atomic, write_string};
use actisleep::io::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_bytes, save_checkpoint, CheckpointMeta, FORMAT_VERSION, MAGIC};
use actisleep::io::{load_series, read_series, save_series, write_series, RunConfig};
use actisleep::models::{DataConfig, Model, ModelKind, ModelSpec, MultiTaskCnnSpec, SequentialCnnSpec};
use actisleep::models::arch::ConvStage;
use actisleep::{ClockTime, Error, LabeledSeries, SleepState};
use actisleep_nn::Tensor;
use proptest::prelude::*;

fn series_strategy() -> impl Strategy<Value = LabeledSeries> {
    (
        "[a-z]{1,6}[0-9]{0,2}",
        0u32..2880,
        prop::collection::vec(0.0f64..1e3, 1..40),
        any::<bool>(),
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(id, slot, activity, with_states, with_attack, bits)| {
            let n = activity.len();
            let states: Vec<SleepState> = (0..n).map(|i| SleepState::from_code(((bits >> (i % 32)) & 3) as u8).unwrap()).collect();
            let attack: Vec<bool> = (0..n).map(|i| (bits >> (i % 61)) & 1 == 1).collect();
            LabeledSeries::from_columns(
                &id,
                ClockTime::from_seconds(slot * 30).unwrap(),
                &activity,
                with_states.then_some(&states[..]),
                with_attack.then_some(&attack[..]),
            )
            .unwrap()
        })
}

proptest! {
    #[test]
    fn series_files_round_trip(list in prop::collection::vec(series_strategy(), 1..4)) {
        let mut unique: Vec<LabeledSeries> = Vec::new();
        for s in list {
            if !unique.iter().any(|u| u.patient_id() == s.patient_id()) {
                unique.push(s);
            }
        }
        let mut buf = Vec::new();
        write_series(&unique, &mut buf).unwrap();
        let back = read_series(&buf[..], Path::new("mem")).unwrap();
        unique.sort_by(|a, b| a.patient_id().cmp(b.patient_id()));
        prop_assert_eq!(back, unique);
    }

    #[test]
    fn configs_round_trip(seed in any::<u64>(), epochs in 1usize..50, k in 1usize..6, days in 1usize..30) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.train.epochs = epochs;
        cfg.cluster.k = k;
        cfg.generator.num_days = days;
        let text = cfg.to_toml().unwrap();
        prop_assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }
}

#[test]
fn series_file_errors_carry_line_numbers() {
    let text = "patient_id,timestamp_s,activity,state,attack\np,0,1,W,0\np,45,1,W,0\n";
    match read_series(text.as_bytes(), Path::new("f.csv")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }
    let partial = "patient_id,timestamp_s,activity,state,attack\np,0,1,W,\np,30,1,,\n";
    assert!(read_series(partial.as_bytes(), Path::new("f.csv")).is_err());
    let bad_state = "patient_id,timestamp_s,activity,state,attack\np,0,1,X,\n";
    assert!(matches!(read_series(bad_state.as_bytes(), Path::new("f.csv")), Err(Error::Parse { line: 2, .. })));
}

#[test]
fn series_save_and_load_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let s = LabeledSeries::from_columns("a", ClockTime::NOON, &[0.1, 0.2, 0.3], Some(&[SleepState::Wake; 3]), None).unwrap();
    let path = dir.path().join("s.csv");
    save_series(std::slice::from_ref(&s), &path).unwrap();
    assert_eq!(load_series(&path).unwrap(), vec![s]);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("patient_id,timestamp_s,activity,state,attack\na,43200,0.1,W,\n"));
    assert!(!text.contains('\r'));
}

#[test]
fn failed_atomic_write_leaves_target_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.txt");
    write_string(&path, "old").unwrap();
    let r = write_atomic(&path, |w| {
        w.write_all(b"partial").unwrap();
        Err(Error::Invalid("boom".into()))
    });
    assert!(r.is_err());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "old");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

fn small_seq_spec() -> ModelSpec {
    ModelSpec::SeqCnn(SequentialCnnSpec {
        input_len: 41,
        stages: vec![ConvStage::new(4, 5, 2), ConvStage::new(6, 3, 2)],
        dense: vec![8],
    })
}

fn trained(spec: ModelSpec) -> Model {
    let data = DataConfig { context: 20, smooth_half_width: 1 };
    let mut m = Model::new(spec, data, 5).unwrap();
    m.graph.set_standardization(0.3, 0.7).unwrap();
    m.mark_loaded();
    m
}

fn probe(len: usize) -> Tensor {
    Tensor::new(vec![2, len, 1], (0..2 * len).map(|i| ((i * 37) % 11) as f64 / 7.0).collect()).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let model = trained(small_seq_spec());
    let mut meta = CheckpointMeta::new(model.spec.clone(), model.data);
    meta.metrics.insert("test_accuracy".into(), 0.875);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&model, &meta, &path).unwrap();
    let (back, back_meta) = load_checkpoint(&path, Some(ModelKind::SeqCnn)).unwrap();
    assert_eq!(back_meta, meta);
    assert_eq!(back.graph.named_blocks(), model.graph.named_blocks());
    let a = model.graph.predict(&probe(41)).unwrap();
    let b = back.graph.predict(&probe(41)).unwrap();
    assert_eq!(a[0].data(), b[0].data());
    assert!(back.is_loaded());
}

#[test]
fn corrupted_checkpoints_are_refused() {
    let model = trained(small_seq_spec());
    let meta = CheckpointMeta::new(model.spec.clone(), model.data);
    let bytes = encode_checkpoint(&meta, &model.graph.named_blocks()).unwrap();
    assert!(decode_checkpoint(&bytes).is_ok());
    for pos in [0, 9, 30, bytes.len() / 2, bytes.len() - 40, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x10;
        assert!(
            matches!(load_checkpoint_bytes(&bad, None), Err(Error::Checkpoint(_))),
            "byte {pos} flip accepted"
        );
    }
    assert!(load_checkpoint_bytes(&bytes[..bytes.len() - 8], None).is_err());
    let mut newer = bytes.clone();
    newer[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    match load_checkpoint_bytes(&newer, None) {
        Err(Error::Checkpoint(m)) => assert!(m.contains("version")),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(&bytes[..8], MAGIC);
}

#[test]
fn loading_into_another_architecture_is_a_spec_mismatch() {
    let model = trained(small_seq_spec());
    let meta = CheckpointMeta::new(model.spec.clone(), model.data);
    let bytes = encode_checkpoint(&meta, &model.graph.named_blocks()).unwrap();
    match load_checkpoint_bytes(&bytes, Some(ModelKind::MtlCnn)) {
        Err(Error::SpecMismatch { expected, found }) => {
            assert_eq!((expected.as_str(), found.as_str()), ("mtl-cnn", "seq-cnn"));
        }
        other => panic!("unexpected {other:?}"),
    }
    let mtl = trained(ModelSpec::MtlCnn(MultiTaskCnnSpec {
        input_len: 41,
        trunk: vec![ConvStage::new(4, 5, 2)],
        aux_dense: vec![6],
        right_stages: vec![ConvStage::new(5, 3, 2)],
        pre_concat_dense: vec![7],
        post_concat_dense: vec![5],
        aux_weight: 1.0,
        main_weight: 1.0,
    }));
    let mtl_meta = CheckpointMeta::new(mtl.spec.clone(), mtl.data);
    let bytes = encode_checkpoint(&mtl_meta, &mtl.graph.named_blocks()).unwrap();
    let (back, _) = load_checkpoint_bytes(&bytes, Some(ModelKind::MtlCnn)).unwrap();
    let a = mtl.graph.predict(&probe(41)).unwrap();
    let b = back.graph.predict(&probe(41)).unwrap();
    assert_eq!((a[0].data(), a[1].data()), (b[0].data(), b[1].data()));
}

#[test]
fn config_rejects_typos_at_any_depth() {
    for text in [
        "sede = 1",
        "[train]\nepoch = 3",
        "[generator.profile]\nwake_mena = 1.0",
        "[models.seq_cnn]\nstages = [{ filters = 2, kernel_width = 3, pool_width = 2, extra = 1 }]",
        "[cluster.encoding]\nmode = \"ordinal\"\nfactor = 2",
    ] {
        assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
    }
    let cfg = RunConfig::from_toml("seed = 11\n[train]\nepochs = 3\n[cluster.encoding]\nmode = \"binary\"\ndownsample = 5\n").unwrap();
    assert_eq!((cfg.seed, cfg.train.epochs, cfg.cluster.encoding.downsample), (11, 3, 5));
}
