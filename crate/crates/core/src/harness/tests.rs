use super::*;
use crate::sim::{Model, Simulator};

#[test]
fn registry_holds_the_five_tasks() {
    let names: Vec<String> = builtin_tasks().into_iter().map(|t| t.name).collect();
    assert_eq!(names, ["bh_beta120", "bh_beta60", "bh_beta60gtc", "mvgbm", "mvgbmgtc"]);
    assert_eq!(task("bh_beta60").unwrap().theta_star, [0.9, 0.2, 0.9, -0.2]);
    assert_eq!(task("bh_beta60gtc").unwrap().theta_star, [0.6, 0.4, 0.7, -0.3]);
    assert_eq!(task("mvgbmgtc").unwrap().theta_star, [0.6, -0.5, -0.2]);
    let Model::Mvgbm(m) = task("mvgbm").unwrap().model else { panic!() };
    assert_eq!(m.sigma, [0.5, 0.1, 0.0, 0.0, 0.1, 0.3, 0.0, 0.0, 0.2]);
    assert_eq!(m.dt, 1.0 / 99.0);
    let Model::Bh(b) = task("bh_beta120").unwrap().model else { panic!() };
    assert_eq!(b.beta, 120.0);
    for t in builtin_tasks() {
        t.validate().unwrap();
        if let Some(src) = &t.pretrain_source {
            assert!(task(src).unwrap().pretrain_source.is_none());
        }
        assert_eq!(Simulator::<f64>::obs_shape(&t.model).0, 100);
    }
    assert!(task("bh_beta30").is_err());
}

#[test]
fn observations_are_fixed_per_task() {
    let a = task("bh_beta60").unwrap();
    assert_eq!(a.observation().unwrap(), a.observation().unwrap());
    assert_ne!(a.observation_seed(), task("bh_beta60gtc").unwrap().observation_seed());
}

#[test]
fn config_text_round_trips() {
    let mut c = RunConfig::default();
    assert_eq!(c.schedule.sims_per_round, [500, 500, 500, 1000]);
    assert_eq!((c.adapt.lora.rank, c.adapt.lora.alpha), (8, 8.0));
    assert_eq!(c.adapt.subspace.rank, crate::adapt::RankSpec::Fixed { rank: 8 });
    c.apply_text("schedule.sims = 10, 20  # per round\ntrain.lr = 0.001\nsubspace.energy = 0.95\n\n# done\n")
        .unwrap();
    assert_eq!(c.schedule.sims_per_round, [10, 20]);
    assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    assert!(RunConfig::from_text("train.speed = 3").is_err());
    assert!(RunConfig::from_text("train.lr 3").is_err());
    assert!(RunConfig::from_text("mh.thin = 0").is_err());
}

#[test]
fn manifests_check_version_and_collisions() {
    let dir = tempfile::tempdir().unwrap();
    let m = Manifest::new(Command::Reference, 3, &RunConfig::default());
    prepare_out_dir(dir.path()).unwrap();
    m.save(dir.path()).unwrap();
    assert_eq!(Manifest::load(dir.path()).unwrap(), m);
    assert!(matches!(prepare_out_dir(dir.path()), Err(crate::Error::SeedCollision(_))));

    let path = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 7");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(Manifest::load(dir.path()), Err(crate::Error::Version { found: 7, .. })));
    assert!(matches!(Manifest::load(&dir.path().join("nope")), Err(crate::Error::Missing(_))));
}

#[test]
fn report_rows_follow_method_order() {
    let mk = |task: &str, method: &str, wass: f64| {
        let mut m = Manifest::new(Command::Evaluate, 0, &RunConfig::default());
        m.metrics = Some(crate::metrics::MetricReport {
            task: task.into(),
            method: method.into(),
            wass,
            mmd_sq: wass / 10.0,
            n_ref: 1,
            n_est: 1,
            seeds: vec![0],
            timestamp: 0,
        });
        m
    };
    let rows = collect_rows(&[mk("t", "gs-pea", 1.0), mk("t", "snpe", 2.0), mk("t", "snpe", 4.0), mk("a", "ttt", 0.5)]).unwrap();
    let order: Vec<(&str, &str)> = rows.iter().map(|r| (r.task.as_str(), r.method.as_str())).collect();
    assert_eq!(order, [("a", "ttt"), ("t", "snpe"), ("t", "gs-pea")]);
    assert_eq!(rows[1].wass, 3.0);
    assert_eq!(rows[1].seeds, 2);
    assert!(render_csv(&rows).starts_with("task,method,wass,mmd_sq\n"));
    assert!(render_table(&rows).contains("GradSubspace-PEA"));
}
