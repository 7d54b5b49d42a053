use sbi_ttt_core::flow::ConditionalFlow;
use sbi_ttt_core::harness::{task, RunConfig};
use sbi_ttt_core::mh::mh_reference;
use sbi_ttt_core::sim::{ParameterVector, Simulator};
use sbi_ttt_core::snpe::{run_sequential, FullParams, RoundSchedule, StandardizerMode};

#[test]
fn snpe_posterior_mean_tracks_mh_on_mvgbm() {
    let t = task("mvgbm").unwrap();
    let cfg = RunConfig::default();
    let prior = t.prior().unwrap();
    let y = t.observation().unwrap();
    let (steps, dims) = Simulator::<f64>::obs_shape(&t.model);
    let mut flow = ConditionalFlow::new(cfg.flow_config(3, steps, dims)).unwrap();
    let mut learner = FullParams::new(flow.init_store::<f64>(4));
    run_sequential(&mut flow, &mut learner, &t.model, &prior, &y, &RoundSchedule::standard(), StandardizerMode::FitRoundZero, 4)
        .unwrap();
    let e = flow.embed_observation(learner.store(), &y).unwrap();
    let draws = flow.sample_in_box(learner.store(), &e, 5000, &prior, 9).unwrap().samples;

    let ll = |th: &ParameterVector<f64>| t.model.loglik(th, &y);
    let reference = mh_reference(&ll, &prior, &cfg.mh, cfg.mh_chains, 0).unwrap();
    for k in 0..3 {
        let m = draws.iter().map(|d| d[k]).sum::<f64>() / draws.len() as f64;
        let r = reference.samples.iter().map(|d| d[k]).sum::<f64>() / reference.samples.len() as f64;
        assert!((m - r).abs() <= 0.15, "coordinate {k}: flow mean {m:.3}, MH mean {r:.3}");
    }
}
