use sbi_ttt_core::adapt::Method;
use sbi_ttt_core::harness::*;
use sbi_ttt_core::Error;

fn tiny() -> RunConfig {
    RunConfig::from_text(
        "schedule.sims = 60, 40
         train.max_epochs = 2
         train.batch_size = 20
         flow.layers = 2
         flow.hidden = 8
         flow.embed_hidden = 8
         flow.embed_dim = 4
         lora.rank = 2
         lora.alpha = 2
         subspace.snapshots = 4
         subspace.batch_size = 8
         subspace.rank = 2
         mh.samples = 300
         mh.burn_in = 300
         mh.thin = 1
         mh.chains = 2
         mh.rhat_threshold = 100
         eval.samples = 80",
    )
    .unwrap()
}

#[test]
fn pipeline_emits_metrics_and_replays_exactly() {
    let root = tempfile::tempdir().unwrap();
    let layout = ArtifactLayout::new(root.path());
    let cfg = tiny();
    let evals = run_experiment(&layout, "bh_beta60", &Method::ALL, 1, &cfg).unwrap();
    assert_eq!(evals.len(), 5);
    for e in &evals {
        let r = e.metrics.as_ref().unwrap();
        assert_eq!(r.task, "bh_beta60");
        assert!(r.wass > 0.0 && r.wass.is_finite());
        assert!(r.mmd_sq >= 0.0 && r.mmd_sq.is_finite());
        assert_eq!((r.n_est, r.n_ref), (80, 80));
    }
    let methods: Vec<&str> = evals.iter().map(|e| e.metrics.as_ref().unwrap().method.as_str()).collect();
    assert_eq!(methods, ["snpe", "ttt", "lora", "gs-ttt", "gs-pea"]);

    let ft = Manifest::load(&layout.finetune("bh_beta60", Method::GsPea, 1)).unwrap();
    assert_eq!(ft.stats["trainable_dim"], 2);
    let lora = Manifest::load(&layout.finetune("bh_beta60", Method::Lora, 1)).unwrap();
    assert!(lora.stats["trainable_dim"].as_u64().unwrap() < lora.stats["total_dim"].as_u64().unwrap());

    // A second call reuses every artifact.
    let again = run_experiment(&layout, "bh_beta60", &[Method::Ttt], 1, &cfg).unwrap();
    assert_eq!(again[0], evals[1]);

    let paths: Vec<_> = Method::ALL.iter().map(|&m| layout.evaluate("bh_beta60", m, 1)).collect();
    let report = cmd_report(&paths, &layout.report("smoke")).unwrap();
    let csv = std::fs::read_to_string(layout.report("smoke").join(REPORT_CSV)).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert_eq!(report.outputs.len(), 4);
    let hist = std::fs::read_to_string(layout.report("smoke").join(HIST1D_CSV)).unwrap();
    assert!(hist.lines().any(|l| l.starts_with("bh_beta60,reference,")));

    for dir in [
        layout.pretrain("bh_beta120", 1),
        layout.finetune("bh_beta60", Method::GsTtt, 1),
        layout.finetune("bh_beta60", Method::Lora, 1),
        layout.reference("bh_beta60", 0),
        layout.evaluate("bh_beta60", Method::GsPea, 1),
        layout.report("smoke"),
    ] {
        let scratch = tempfile::tempdir().unwrap();
        let out = replay(&dir, &scratch.path().join("run")).unwrap();
        assert!(out.is_exact(), "{}: {:?}", dir.display(), out.mismatches);
    }
}

#[test]
fn evaluate_against_itself_is_zero() {
    let root = tempfile::tempdir().unwrap();
    let layout = ArtifactLayout::new(root.path());
    let cfg = tiny();
    let m = cmd_reference("mvgbm", 4, &layout.reference("mvgbm", 4), &cfg).unwrap();
    let s = m.output(&layout.reference("mvgbm", 4), "samples").unwrap();
    let e = cmd_evaluate(&s, &s, 2, &root.path().join("self"), &cfg).unwrap();
    let r = e.metrics.unwrap();
    assert_eq!(r.wass, 0.0);
    assert!(r.mmd_sq.abs() < 1e-12);
}

#[test]
fn commands_report_missing_and_mismatched_inputs() {
    let root = tempfile::tempdir().unwrap();
    let layout = ArtifactLayout::new(root.path());
    let cfg = tiny();
    let missing = cmd_finetune("bh_beta60", Method::Ttt, &root.path().join("none"), 1, &root.path().join("x"), &cfg);
    assert!(matches!(missing, Err(Error::Missing(_))));

    let pre = layout.pretrain("mvgbm", 1);
    cmd_pretrain("mvgbm", 1, &pre, &cfg).unwrap();
    assert!(matches!(cmd_pretrain("mvgbm", 1, &pre, &cfg), Err(Error::SeedCollision(_))));
    let wrong = cmd_finetune("bh_beta60", Method::Ttt, &pre, 1, &root.path().join("y"), &cfg);
    assert!(matches!(wrong, Err(Error::InvalidConfig(_))));
    let ok = cmd_finetune("mvgbmgtc", Method::Ttt, &pre, 1, &layout.finetune("mvgbmgtc", Method::Ttt, 1), &cfg);
    assert!(ok.is_ok());

    // A checkpoint written under a newer schema is refused.
    let flow = pre.join(FLOW_FILE);
    let text = std::fs::read_to_string(&flow).unwrap();
    let bumped = text.replacen("\"version\":1", "\"version\":99", 1);
    assert_ne!(bumped, text);
    std::fs::write(&flow, bumped).unwrap();
    let err = cmd_finetune("mvgbmgtc", Method::Ttt, &pre, 2, &root.path().join("z"), &cfg);
    assert!(matches!(err, Err(Error::Version { .. })), "{err:?}");
}
