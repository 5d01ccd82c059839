mod common;

use common::{fixture, identity_stub, Fixture};
use fairgen::pipeline::{
    expand_grid, run_pipeline, CellOutcome, GridConfig, GridRecord, PipelineError, RunConfig, Stage, Technique,
    GRID_RECORD_FILE, RUN_RECORD_FILE,
};
use fairgen::synthesis::SynthesizerSpec;

fn config(fx: &Fixture, technique: Technique, out: &str) -> RunConfig {
    RunConfig::from_json(&format!(
        r#"{{"dataset": {:?}, "schema": {:?}, "technique": {}, "synthesizer": {{"kind": "gaussian_copula"}},
            "evaluation_attributes": ["sex", "race"], "seeds": [0, 1], "min_support": 5, "output_dir": {:?}, "write_tables": true}}"#,
        fx.data,
        fx.schema,
        serde_json::to_string(&technique).unwrap(),
        fx.path(out)
    ))
    .unwrap()
}

#[test]
fn raw_copula_smoke() {
    let fx = fixture(300, 1);
    let cfg = config(&fx, Technique::Raw, "raw");
    let record = run_pipeline(&cfg).unwrap();
    assert_eq!(record.seeds.len(), 2);
    for seed in &record.seeds {
        assert_eq!(seed.train_rows + seed.test_rows, 300);
        assert_eq!(seed.test_rows, 60);
        assert_eq!(seed.synthetic_rows, seed.train_rows);
        assert!(seed.removed_ids.is_empty());
        assert_eq!(seed.augmented_count, 0);
        let dir = cfg.output_dir.join(format!("seed-{}", seed.seed));
        assert!(dir.join("report.json").exists());
        assert!(dir.join("synthetic.csv").exists());
    }
    assert!(cfg.output_dir.join(RUN_RECORD_FILE).exists());
    let mean_bca = record.seeds.iter().map(|s| s.report.bca).sum::<f64>() / 2.0;
    assert_eq!(record.aggregate.bca, mean_bca);
    assert_eq!(record.debias_attribute, None);
}

#[test]
fn zero_k_removal_feeds_the_raw_split_to_the_synthesizer() {
    let fx = fixture(300, 2);
    let raw = run_pipeline(&config(&fx, Technique::Raw, "raw")).unwrap();
    let k0 = config(&fx, Technique::Kremoval { k: 0.0, statistic: Default::default() }, "k0");
    let record = run_pipeline(&k0).unwrap();
    for seed in [0, 1] {
        let dir = k0.output_dir.join(format!("seed-{seed}"));
        let train = std::fs::read(dir.join("train.csv")).unwrap();
        assert_eq!(std::fs::read(dir.join("preprocessed.csv")).unwrap(), train);
        assert_eq!(std::fs::read(fx.path(&format!("raw/seed-{seed}/train.csv"))).unwrap(), train);
    }
    // same synthesizer input and seed, so the same model and report
    for (a, b) in raw.seeds.iter().zip(&record.seeds) {
        assert_eq!(a.synthesizer_fingerprint, b.synthesizer_fingerprint);
        assert_eq!(a.report, b.report);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let fx = fixture(300, 3);
    let cfg = config(&fx, Technique::Kremoval { k: 3.0, statistic: Default::default() }, "det");
    run_pipeline(&cfg).unwrap();
    let first = std::fs::read(cfg.output_dir.join(RUN_RECORD_FILE)).unwrap();
    run_pipeline(&cfg).unwrap();
    assert_eq!(std::fs::read(cfg.output_dir.join(RUN_RECORD_FILE)).unwrap(), first);
}

#[test]
fn test_split_is_shared_across_techniques() {
    let fx = fixture(300, 4);
    let techniques = [
        Technique::Raw,
        Technique::Kremoval { k: 2.0, statistic: Default::default() },
        Technique::Augmentation { add_percent: 100.0, realism_distance: Default::default(), clusters_per_cell: 8 },
    ];
    let records: Vec<_> =
        techniques.iter().enumerate().map(|(i, t)| run_pipeline(&config(&fx, *t, &format!("t{i}"))).unwrap()).collect();
    for seed in 0..2 {
        let hashes: Vec<&str> = records.iter().map(|r| r.seeds[seed].test_split_sha256.as_str()).collect();
        assert!(hashes.iter().all(|h| *h == hashes[0]));
    }
    let removal = &records[1].seeds[0];
    assert!(!removal.removed_ids.is_empty());
    assert_eq!(removal.preprocessed_rows, removal.train_rows - removal.removed_ids.len());
    let augmented = &records[2].seeds[0];
    assert_eq!(augmented.augmented_count, augmented.train_rows);
    assert_eq!(records[1].debias_attribute.as_deref(), Some("sex"));
}

#[test]
fn explicit_synthesis_size_and_external_synthesizer() {
    let fx = fixture(200, 5);
    let mut cfg = config(&fx, Technique::Raw, "ext");
    cfg.synthesizer = SynthesizerSpec::external(identity_stub(fx.dir.path()).to_string_lossy(), 0);
    cfg.synthesis_size = Some(100);
    let record = run_pipeline(&cfg).unwrap();
    assert!(record.seeds.iter().all(|s| s.synthetic_rows == 100));
    assert!(cfg.output_dir.join("seed-0/synthesizer/run.log").exists());
}

#[test]
fn stage_errors_are_labelled() {
    let fx = fixture(100, 6);
    let mut cfg = config(&fx, Technique::Raw, "bad");
    cfg.evaluation_attributes = vec!["workclass".into()];
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.stage, Stage::Config);

    let mut cfg = config(&fx, Technique::Raw, "bad");
    cfg.synthesizer = SynthesizerSpec::external("/no/such/generator", 0);
    let err: PipelineError = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.stage, Stage::Synthesize);
    assert!(err.to_string().starts_with("synthesize stage failed (seed 0)"));

    let mut cfg = config(&fx, Technique::Kremoval { k: 101.0, statistic: Default::default() }, "bad");
    assert_eq!(run_pipeline(&cfg).unwrap_err().stage, Stage::Config);
    cfg.technique = Technique::Raw;
    cfg.seeds.clear();
    assert_eq!(run_pipeline(&cfg).unwrap_err().stage, Stage::Config);
}

fn grid_json(fx: &Fixture, attributes: &str, synthesizers: &str) -> String {
    format!(
        r#"{{"dataset": {:?}, "schema": {:?}, "synthesizers": {synthesizers},
            "techniques": [{{"kind": "raw"}}, {{"kind": "kremoval", "k": 1}}, {{"kind": "kremoval", "k": 2}}, {{"kind": "kremoval", "k": 3}}],
            "evaluation_attributes": {attributes}, "seeds": [0], "min_support": 5, "output_dir": {:?}}}"#,
        fx.data,
        fx.schema,
        fx.path("grid")
    )
}

#[test]
fn grid_isolates_a_missing_external_command() {
    let fx = fixture(300, 7);
    let grid = GridConfig::from_json(&grid_json(
        &fx,
        r#"["sex", "race"]"#,
        r#"[{"kind": "gaussian_copula"}, {"kind": "external", "external_command": "/no/such/generator", "name": "Missing"}]"#,
    ))
    .unwrap();
    assert_eq!(expand_grid(&grid).len(), 2 * (1 + 3 * 2));
    let record = grid.run().unwrap();
    assert_eq!(record.failures(), 7);
    for cell in &record.cells {
        match (&cell.outcome, cell.synthesizer.as_str()) {
            (CellOutcome::Completed { .. }, "Gaussian Copula") => {}
            (CellOutcome::Failed { stage: Stage::Synthesize, .. }, "Missing") => {}
            (outcome, name) => panic!("unexpected {name}: {outcome:?}"),
        }
    }
    // raw + 3 removals per synthesizer, each with both attribute blocks and the intersectional block
    let summary = &record.summary;
    assert_eq!(summary.rows.len(), 8);
    let copula: Vec<_> = summary.rows.iter().filter(|r| r.synthesizer == "Gaussian Copula").collect();
    assert_eq!(copula.iter().map(|r| r.technique.as_str()).collect::<Vec<_>>(), ["Raw", "1% removal", "2% removal", "3% removal"]);
    assert!(copula.iter().all(|r| r.blocks.iter().all(Option::is_some) && r.intersectional.is_some()));
    assert_eq!(GridRecord::load(fx.path("grid")).unwrap(), record);
    assert!(fx.path("grid").join(GRID_RECORD_FILE).exists());
}

#[test]
fn single_attribute_grid_omits_the_intersectional_block() {
    let fx = fixture(300, 8);
    let grid = GridConfig::from_json(&grid_json(&fx, r#"["sex"]"#, r#"[{"kind": "gaussian_copula"}]"#)).unwrap();
    let record = grid.run().unwrap();
    assert_eq!(record.failures(), 0);
    assert_eq!(record.summary.rows.len(), 4);
    assert!(record.summary.rows.iter().all(|r| r.intersectional.is_none() && r.blocks.len() == 1));
    assert_eq!(record.summary.intersectional_source, None);
}

#[test]
fn worker_count_does_not_change_results() {
    let fx = fixture(200, 9);
    let grid = GridConfig::from_json(&grid_json(&fx, r#"["sex"]"#, r#"[{"kind": "gaussian_copula"}]"#)).unwrap();
    let configs = expand_grid(&grid);
    let serial = fairgen::pipeline::run_grid(&configs);
    let parallel = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| fairgen::pipeline::run_grid(&configs));
    assert_eq!(serial, parallel);
}
