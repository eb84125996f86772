use super::*;
use crate::fusion::Parameters;
use crate::io::{load_checkpoint, read_epoch_log, read_report};

fn small(dir: &Path, head: HeadKind) -> RunConfig {
    let mut c = RunConfig {
        seed: 11,
        head,
        output_dir: dir.to_path_buf(),
        ..RunConfig::default()
    };
    c.data.n_identities = 6;
    c.data.samples_per_identity = 20;
    c.training.max_epochs = 3;
    c.training.batch_size = 32;
    c.trials.n_positive = 40;
    c.trials.n_negative = 40;
    c
}

fn generated(dir: &Path, head: HeadKind) -> RunConfig {
    let c = small(dir, head);
    cmd_generate(&c).unwrap();
    c
}

#[test]
fn empty_toml_is_the_default() {
    assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    let c = RunConfig::from_toml("seed = 4\nhead = \"multiview\"\n[training]\nlearning_rate = 0.01\n").unwrap();
    assert_eq!((c.seed, c.head, c.training.learning_rate), (4, HeadKind::MultiView, 0.01));
    assert_eq!(c.training.batch_size, 128);
}

#[test]
fn unknown_keys_are_config_errors() {
    let e = RunConfig::from_toml("[data]\nsigma = 1.0\n").unwrap_err();
    assert_eq!(e.class(), crate::ErrorClass::Config);
}

#[test]
fn resolution_feeds_the_one_seed_everywhere() {
    let c = RunConfig {
        seed: 99,
        ..RunConfig::default()
    }
    .resolved()
    .unwrap();
    assert_eq!((c.training.seed, c.dataset().seed, c.trial_config().seed), (99, 99, 99));
}

#[test]
fn default_profile_counts() {
    let dir = tempfile::tempdir().unwrap();
    let c = RunConfig {
        output_dir: dir.path().into(),
        ..RunConfig::default()
    };
    let files = cmd_generate(&c).unwrap();
    // per identity: round(40·0.25) = 10 test, then round(30·0.15/0.75) = 6 val, 24 train
    let counts: Vec<usize> = files[..3].iter().map(|p| read_embeddings(p).unwrap().samples.len()).collect();
    assert_eq!(counts, vec![50 * 24, 50 * 6, 50 * 10]);
    let f = read_embeddings(&files[2]).unwrap();
    assert_eq!((f.d_audio, f.d_video), (16, 32));
}

#[test]
fn generation_repeats_byte_for_byte() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = cmd_generate(&small(a.path(), HeadKind::Mean)).unwrap();
    let fb = cmd_generate(&small(b.path(), HeadKind::Mean)).unwrap();
    for (p, q) in fa.iter().zip(&fb) {
        assert_eq!(std::fs::read(p).unwrap(), std::fs::read(q).unwrap(), "{}", p.display());
    }
}

#[test]
fn negative_sigma_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path(), HeadKind::Mean);
    c.data.video_noise_sigma = -0.1;
    let e = cmd_generate(&c).unwrap_err();
    assert_eq!(e.class(), crate::ErrorClass::Config);
    assert!(e.to_string().contains("video_noise_sigma"));
}

#[test]
fn zero_learning_rate_keeps_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    for kind in HeadKind::ALL {
        let mut c = generated(dir.path(), kind);
        c.training.learning_rate = 0.0;
        let t = cmd_train(&c, &dir.path().join(TRAIN_FILE), &dir.path().join(VAL_FILE)).unwrap();
        let ck = load_checkpoint(&t.checkpoint).unwrap();
        let mut init = stream_rng(c.seed, Stream::Init, 0);
        let head = FusionHead::init(&c.head_config(kind), &mut init).unwrap();
        let arc = ArcMarginHead::init(8, 6, 16.0, 0.125, &mut init).unwrap();
        assert_eq!(ck.head.params(), head.params(), "{kind}");
        assert_eq!(ck.arc, arc);
    }
}

#[test]
fn every_head_trains_and_logs_decay_on_stalls() {
    let dir = tempfile::tempdir().unwrap();
    for kind in HeadKind::ALL {
        let mut c = generated(dir.path(), kind);
        c.training.max_epochs = 6;
        let t = cmd_train(&c, &dir.path().join(TRAIN_FILE), &dir.path().join(VAL_FILE)).unwrap();
        let log = read_epoch_log(&t.epoch_log).unwrap();
        assert_eq!(log, t.outcome.records);
        assert_eq!(log.iter().filter(|r| r.is_best).count(), 1);
        for i in 1..log.len() {
            let best_before = log[..i - 1].iter().map(|r| r.val_accuracy).fold(f64::NEG_INFINITY, f64::max);
            let stalled = log[i - 1].val_accuracy <= best_before;
            let expected = if stalled { log[i - 1].lr * 0.95 } else { log[i - 1].lr };
            assert_eq!(log[i].lr, expected, "{kind} epoch {}", i + 1);
        }
        let ck = load_checkpoint(&t.checkpoint).unwrap();
        assert_eq!(ck.provenance.epoch, t.outcome.best_epoch);
        assert_eq!(ck.provenance.run_config["seed"], 11);
    }
}

fn trained(dir: &Path) -> Vec<PathBuf> {
    HeadKind::ALL
        .iter()
        .map(|&k| {
            let c = generated(dir, k);
            cmd_train(&c, &dir.join(TRAIN_FILE), &dir.join(VAL_FILE)).unwrap().checkpoint
        })
        .collect()
}

#[test]
fn evaluation_covers_six_modes_and_merges_models() {
    let dir = tempfile::tempdir().unwrap();
    let cks = trained(dir.path());
    let c = small(dir.path(), HeadKind::Mean);
    let test = dir.path().join(TEST_FILE);
    let files = cmd_evaluate(&c, &cks, &test).unwrap();
    let doc = read_report(&files[0]).unwrap();
    assert_eq!(doc.models.len(), 3);
    assert!(doc.models.iter().all(|m| m.report.eer.len() == 6));
    let table = std::fs::read_to_string(dir.path().join("eer_table.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "mode,mean,mlp,multiview");
    assert_eq!(table.lines().count(), 7);

    let first: Vec<Vec<u8>> = files.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let again = cmd_evaluate(&c, &cks, &test).unwrap();
    for (p, bytes) in again.iter().zip(&first) {
        assert_eq!(&std::fs::read(p).unwrap(), bytes, "{}", p.display());
    }
}

#[test]
fn diagnostics_structure() {
    let dir = tempfile::tempdir().unwrap();
    let cks = trained(dir.path());
    let c = small(dir.path(), HeadKind::Mean);
    let files = cmd_diagnose(&c, &cks[..1], &dir.path().join(TEST_FILE)).unwrap();
    let svgs: Vec<&PathBuf> = files.iter().filter(|p| p.extension().is_some_and(|e| e == "svg")).collect();
    // audio-video, within (audio, video), between (audio, video)
    assert_eq!(svgs.len(), 5);
    for p in svgs {
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.matches(r#"class="box""#).count(), 6, "{}", p.display());
    }
    let summary: DiagnoseSummary =
        serde_json::from_slice(&std::fs::read(dir.path().join("diagnostics/summary.json")).unwrap()).unwrap();
    let m = &summary.models[0];
    assert!((-1.0..=1.0).contains(&m.silhouette_audio) && (-1.0..=1.0).contains(&m.silhouette_video));
    assert!(m.null_probe.is_some());
    let angles = std::fs::read_to_string(dir.path().join("diagnostics/angles.csv")).unwrap();
    for family in ["audio_video", "within_identity", "between_identity"] {
        assert!(angles.contains(family), "{family}");
    }
}

#[test]
fn degenerate_embeddings_are_surfaced_as_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let cks = trained(dir.path());
    let mut ck = load_checkpoint(&cks[0]).unwrap();
    for t in ck.head.params_mut() {
        t.iter_mut().for_each(|x| *x = 0.0);
    }
    let zeroed = dir.path().join("zeroed.avfc");
    save_checkpoint(&zeroed, &ck).unwrap();
    let c = small(dir.path(), HeadKind::Mean);
    cmd_diagnose(&c, &[zeroed], &dir.path().join(TEST_FILE)).unwrap();
    let summary: DiagnoseSummary =
        serde_json::from_slice(&std::fs::read(dir.path().join("diagnostics/summary.json")).unwrap()).unwrap();
    assert!(!summary.models[0].warnings.is_empty());
}

#[test]
fn mismatched_profile_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = generated(dir.path(), HeadKind::Mean);
    c.profile = Profile::Full;
    let e = cmd_train(&c, &dir.path().join(TRAIN_FILE), &dir.path().join(VAL_FILE)).unwrap_err();
    assert!(e.to_string().contains("profile"));
}
