use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use cldetect_core::corpus::{ingest_dataset, load_descriptors};
use cldetect_core::{ExperimentConfig, Manifest, Phase};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn descriptors_cover_the_benchmark_tasks() {
    let descriptors = load_descriptors(&root().join("datasets")).unwrap();
    let (mut up, mut down) = (0, 0);
    let mut schemas = BTreeSet::new();
    for d in &descriptors {
        d.validate().unwrap();
        schemas.insert(d.name.split('-').next().unwrap().to_string());
        for l in &d.column_map.labels {
            match d.phase_of(&l.name) {
                Phase::Upstream => up += 1,
                Phase::Downstream => down += 1,
            }
        }
    }
    // The five dialogue-safety corpora share one schema.
    assert_eq!(descriptors.len(), 19);
    assert_eq!(schemas.len(), 15, "{schemas:?}");
    assert_eq!(up, 26);
    assert_eq!(down, 57);
    let dygen = descriptors.iter().find(|d| d.name == "dygen").unwrap();
    assert_eq!(dygen.phase_of("hate"), Phase::Upstream);
    assert_eq!(dygen.phase_of("derogation"), Phase::Downstream);
}

#[test]
fn a_descriptor_ingests_a_file_in_its_layout() {
    let d = load_descriptors(&root().join("datasets"))
        .unwrap()
        .into_iter()
        .find(|d| d.name == "hatecheck")
        .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("hc.csv");
    fs::write(
        &raw,
        "case_id,test_case,label_gold,target_ident\n\
         1,some text,hateful,women\n\
         2,other text,non-hateful,Muslims\n",
    )
    .unwrap();
    let records = ingest_dataset(&d, &raw).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].labels["hate"], 1);
    assert_eq!(records[0].labels["women"], 1);
    assert_eq!(records[1].labels["hate"], 0);
    assert_eq!(records[1].labels["muslims"], 1);
}

#[test]
fn example_configs_and_synthetic_manifest_load() {
    let m = Manifest::load(&root().join("manifests/synthetic/manifest.json")).unwrap();
    let summary = m.validate(true).unwrap();
    assert_eq!((summary.upstream, summary.downstream), (6, 4));

    let mut ids = BTreeSet::new();
    for e in fs::read_dir(root().join("configs")).unwrap() {
        let path = e.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert!(cfg.manifest_path().exists(), "{}", path.display());
        ids.insert(cfg.run_id());
    }
    assert_eq!(ids.len(), 9);
}
