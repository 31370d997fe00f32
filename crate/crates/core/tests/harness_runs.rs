use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cldetect_core::corpus::{generate_synthetic, ManifestBuild, MarkerLink};
use cldetect_core::harness::{
    render_report, run_experiment, run_experiment_with, run_fewshot, RunArtifact, RunOptions,
};
use cldetect_core::{Error, ExperimentConfig, SyntheticConfig};

fn synth() -> SyntheticConfig {
    SyntheticConfig {
        upstream_tasks: 2,
        downstream_tasks: 1,
        records_per_task: 300,
        links: vec![MarkerLink {
            task: 3,
            source: 1,
            inverted: false,
            share_topic: false,
        }],
        ..SyntheticConfig::default()
    }
}

fn write_manifest(dir: &Path) -> PathBuf {
    let build = ManifestBuild {
        min_positives: 20,
        ..ManifestBuild::default()
    };
    let m = generate_synthetic(&synth())
        .unwrap()
        .manifest(&build, dir)
        .unwrap();
    let path = dir.join("manifest.json");
    m.save(&path).unwrap();
    path
}

fn config_text(algorithm: &str, architecture: &str, out: &Path, fewshot: bool) -> String {
    let fewshot = if fewshot {
        r#""fewshot": {"k": 8, "epochs": 20, "learning_rate": 0.01},"#
    } else {
        ""
    };
    format!(
        r#"{{
  "manifest": "manifest.json",
  "stream": "chronological",
  "algorithm": "{algorithm}",
  "architecture": "{architecture}",
  "encoder": {{"dim": 32}},
  "network": {{"hidden": 8, "depth": 1, "generator_hidden": 8}},
  "trainer": {{"batch_size": 16, "max_epochs": 8, "learning_rate": 0.01}},
  {fewshot}
  "seeds": {{"data": 1, "init": 2, "sampler": 3}},
  "output_dir": "{}"
}}
"#,
        out.display()
    )
}

fn load(dir: &Path, text: &str) -> ExperimentConfig {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[test]
fn vanilla_run_layout_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    write_manifest(tmp.path());
    let text = config_text("vanilla", "adapter", &tmp.path().join("runs"), false);
    let cfg = load(tmp.path(), &text);
    let art = run_experiment(&cfg).unwrap();
    assert!(art.complete);
    assert_eq!(art.run_id, cfg.run_id());
    assert_eq!(art.config_snapshot, text.as_bytes());
    assert_eq!(
        fs::read(art.dir.join("config.json")).unwrap(),
        text.as_bytes()
    );
    // Two task checkpoints plus the final model.
    assert_eq!(art.checkpoints.len(), 3);
    let scores = art.scores().unwrap();
    let report = art.report().unwrap();
    assert_eq!(report.instant.len(), 2);
    assert_eq!(report.final_.len(), 2);
    assert!(!scores.instant.is_empty());
    let metrics = fs::read_to_string(&art.metrics).unwrap();
    assert_eq!(metrics.matches(r#""event":"task""#).count(), 2);
    assert_eq!(metrics.matches(r#""event":"final""#).count(), 2);
    assert!(art.dir.join("report.json").exists());
    let meta = &art.meta;
    assert_eq!(meta.model, "Adapter-Vanilla");
    assert!(!meta.ewc_on_generator);

    // Same config elsewhere: identical metrics.
    let other = tmp.path().join("again");
    let cfg2 = load(
        tmp.path(),
        &config_text("vanilla", "adapter", &other, false),
    );
    let art2 = run_experiment(&cfg2).unwrap();
    assert_ne!(art2.run_id, art.run_id);
    assert_eq!(fs::read(&art2.metrics).unwrap(), metrics.as_bytes());

    // Running again is a no-op resume.
    let again = run_experiment(&cfg).unwrap();
    assert_eq!(fs::read_to_string(&again.metrics).unwrap(), metrics);
}

#[test]
fn killed_run_resumes_to_identical_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    write_manifest(tmp.path());
    let full = load(
        tmp.path(),
        &config_text("bihnet-reg", "bihnet", &tmp.path().join("a"), true),
    );
    let done = run_experiment(&full).unwrap();

    let cut = load(
        tmp.path(),
        &config_text("bihnet-reg", "bihnet", &tmp.path().join("b"), true),
    );
    let partial = run_experiment_with(
        &cut,
        RunOptions {
            stop_after: Some(1),
        },
    )
    .unwrap();
    assert!(!partial.complete);
    assert!(partial.report().is_err());
    assert_eq!(partial.checkpoints.len(), 1);
    let resumed = run_experiment(&cut).unwrap();
    assert!(resumed.complete);

    let (mut a, mut b) = (files(&done.dir), files(&resumed.dir));
    for (f, art) in [(&mut a, &done), (&mut b, &resumed)] {
        // The configs differ only in their output directory.
        f.remove("config.json");
        f.remove("meta.json");
        for bytes in f.values_mut() {
            *bytes = String::from_utf8(bytes.clone())
                .unwrap()
                .replace(&art.meta.config_hash, "HASH")
                .replace(&art.run_id, "RUN")
                .into_bytes();
        }
    }
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (name, bytes) in &a {
        assert!(bytes == &b[name], "{name} differs after resume");
    }
    assert!(a.contains_key("scores-fewshot-k8.jsonl"));
}

#[test]
fn tampered_run_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    write_manifest(tmp.path());
    let cfg = load(
        tmp.path(),
        &config_text("vanilla", "adapter", &tmp.path().join("runs"), false),
    );
    let art = run_experiment_with(
        &cfg,
        RunOptions {
            stop_after: Some(1),
        },
    )
    .unwrap();
    let meta_path = art.dir.join("meta.json");
    let meta = fs::read_to_string(&meta_path).unwrap();
    fs::write(&meta_path, meta.replace(&cfg.hash(), &"0".repeat(64))).unwrap();
    match run_experiment(&cfg).unwrap_err() {
        Error::ResumeMismatch { run_id, .. } => assert_eq!(run_id, cfg.run_id()),
        e => panic!("{e}"),
    }
}

#[test]
fn seed_override_changes_the_run_but_keeps_the_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    write_manifest(tmp.path());
    let text = config_text("single", "adapter", &tmp.path().join("runs"), false);
    let mut cfg = load(tmp.path(), &text);
    let plain = cfg.run_id();
    cfg.override_seed(11);
    assert_ne!(cfg.run_id(), plain);
    let art = run_experiment(&cfg).unwrap();
    assert_eq!(art.config_snapshot, text.as_bytes());
    let back = art.config().unwrap();
    assert_eq!(back.seeds.init, 11);
    assert_eq!(back.run_id(), cfg.run_id());
}

#[test]
fn multitask_fewshot_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    write_manifest(tmp.path());
    let runs = tmp.path().join("runs");
    let mt = run_experiment(&load(
        tmp.path(),
        &config_text("multitask", "adapter", &runs, true),
    ))
    .unwrap();
    assert!(mt.complete);
    let report = mt.report().unwrap();
    assert!(report.instant.is_empty());
    assert_eq!(report.final_.len(), 2);
    assert_eq!(report.fewshot[&8].len(), 1);

    let van = run_experiment(&load(
        tmp.path(),
        &config_text("vanilla", "adapter", &runs, false),
    ))
    .unwrap();
    // Later few-shot evaluation at another k.
    let results = run_fewshot(&van, Some(8)).unwrap();
    assert_eq!(results.len(), 1);
    assert!(results[0].auc.is_some(), "{:?}", results[0].error);
    assert_eq!(results[0].shots.len(), 16);
    let van = RunArtifact::locate(&runs, &van.run_id).unwrap();
    assert_eq!(van.fewshot_ks().unwrap(), vec![8]);

    let refs = BTreeMap::from([(mt.run_id.clone(), van.run_id.clone())]);
    let out = render_report(&[van.clone(), mt.clone()], &refs).unwrap();
    let md = out.markdown();
    assert!(md.contains("Adapter-Multitask") && md.contains("Adapter-Vanilla"));
    assert!(md.contains("Δ Fewshot-AUC"));
    assert!(out.reports[1].deltas.contains_key("fewshot_k8_auc"));
    let plain = render_report(&[van], &BTreeMap::new()).unwrap();
    assert!(!plain.markdown().contains('Δ'));
}
