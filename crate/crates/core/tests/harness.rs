use std::fs;
use std::path::Path;
use std::process::Command;

use lbpcg::artifact::{load_artifact, save_artifact};
use lbpcg::content::{ContentSchema, ContentVector};
use lbpcg::harness::stages::{self, EvaluationReport};
use lbpcg::harness::{Pipeline, PipelineConfig, Stage};
use lbpcg::icq::AnnotationStore;
use lbpcg::simworld::{oracle_label, WorldModel};
use lbpcg::Error;

fn small() -> PipelineConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/small.toml");
    PipelineConfig::load(Some(&path), &[]).unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn ip_before_pdc_names_the_missing_stage() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(&cfg, dir.path());
    for s in [Stage::Cluster, Stage::Icq, Stage::Cc, Stage::Beta, Stage::Gpe] {
        p.run_stage(s).unwrap();
    }
    match p.run_stage(Stage::Ip) {
        Err(Error::Dependency { stage, missing, .. }) => {
            assert_eq!(stage, "ip");
            assert_eq!(missing, "pdc");
        }
        other => panic!("expected a dependency error, got {other:?}"),
    }
}

#[test]
fn small_pipeline_is_byte_reproducible() {
    let cfg = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = Pipeline::new(&cfg, a.path()).run_all().unwrap();
    let rb = Pipeline::new(&cfg, b.path()).run_all().unwrap();
    assert_eq!(ra, rb);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.iter().any(|(f, _)| f == stages::REPORT));
    assert_eq!(ta.len(), tb.len());
    for ((fa, da), (fb, db)) in ta.iter().zip(&tb) {
        assert_eq!(fa, fb);
        assert!(da == db, "{fa} differs between runs");
    }
    let loaded: EvaluationReport = load_artifact(a.path().join(stages::REPORT)).unwrap();
    assert_eq!(loaded, ra);
    assert_eq!(ra.models, ["ip", "balanced", "random"]);
    assert_eq!(ra.players.len(), cfg.evaluate.players);
}

#[test]
fn cli_runs_the_small_pipeline_and_rejects_bad_overrides() {
    let exe = env!("CARGO_BIN_EXE_lbpcg");
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/small.toml");
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(exe)
        .args(["pipeline", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean S[ip]"));
    assert!(dir.path().join(stages::REPORT).exists());
    assert!(dir.path().join("config.toml").exists());

    let bad = Command::new(exe)
        .args(["cluster", "--stage-overrides", "clustering.K=0", "--out"])
        .arg(dir.path().join("bad"))
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn annotation_store_round_trips_without_new_oracle_calls() {
    let world = WorldModel::generate(&ContentSchema::default_schema(), 4).unwrap();
    let mut store = AnnotationStore::new();
    let games: Vec<ContentVector> = (0..30u64).map(|i| world.schema.vector_at(i * 3001).unwrap()).collect();
    let mut calls = 0;
    let mut oracle = |g: &ContentVector| {
        calls += 1;
        oracle_label(&world, g)
    };
    for g in &games {
        store.annotate(g, &mut oracle);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.art");
    save_artifact(&store, &path).unwrap();
    let mut back: AnnotationStore = load_artifact(&path).unwrap();
    assert_eq!(back.len(), store.len());
    assert_eq!(back.oracle_calls(), store.oracle_calls());
    let mut refused = |_: &ContentVector| -> lbpcg::content::LabeledGame { panic!("oracle called for a stored game") };
    for g in &games {
        let (l, new) = back.annotate(g, &mut refused);
        assert!(!new);
        assert_eq!(Some(&l), store.get(g));
    }
    drop(oracle);
    assert_eq!(calls, games.len());
}
