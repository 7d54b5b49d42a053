//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.
//!
//! `paper_scale_orderings` trains every method at full scale on three seeds and
//! takes well over an hour on one core. Set `SBI_TTT_ROOT` to keep its
//! artifacts between runs.

use std::io::Write;
use std::path::PathBuf;

use rand::Rng;
use sbi_ttt_core::adapt::svd::thin_svd;
use sbi_ttt_core::adapt::{
    compute_subspace, eligible_targets, finetune_gradsubspace_pea, finetune_lora, lora_attach,
    project_gradient, LoraConfig, Method, RankSpec, SnapshotMatrix, SubspaceConfig,
};
use sbi_ttt_core::autodiff::{GradientVector, ParamStore, Tape};
use sbi_ttt_core::flow::{frozen, ConditionalFlow, FlowConfig};
use sbi_ttt_core::harness::{builtin_tasks, replay, run_experiment, task, ArtifactLayout, Manifest, RunConfig};
use sbi_ttt_core::metrics::{mmd_squared, mmd_squared_with, wasserstein, SampleSet};
use sbi_ttt_core::mh::{mh_reference, run_mh, MhConfig};
use sbi_ttt_core::rng::seeded;
use sbi_ttt_core::sim::{BoxUniformPrior, GaussianToy, ModelTag, ParameterVector, Simulator, TimeSeries};
use sbi_ttt_core::snpe::{
    run_sequential, simulate_round, snpe_loss, FullParams, LossKind, RoundSchedule, StandardizerMode, TrainConfig,
    TrainingData,
};

fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    let line = format!("acceptance {n} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    // Written to the process stdout so the line survives output capture.
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "{}", line.trim_end());
}

struct Shifted;

impl Simulator<f64> for Shifted {
    fn tag(&self) -> ModelTag {
        ModelTag::Generic
    }
    fn theta_dim(&self) -> usize {
        2
    }
    fn obs_shape(&self) -> (usize, usize) {
        (4, 1)
    }
    fn simulate(&self, theta: &ParameterVector<f64>, seed: u64) -> sbi_ttt_core::Result<TimeSeries<f64>> {
        let mut rng = seeded(seed);
        let v = (0..4).map(|t| theta[0] + theta[1] * t as f64 / 3.0 + 0.5 * rng.random_range(-1.0..1.0)).collect();
        TimeSeries::new(ModelTag::Generic, 4, 1, v)
    }
    fn loglik(&self, _: &ParameterVector<f64>, _: &TimeSeries<f64>) -> sbi_ttt_core::Result<f64> {
        unimplemented!()
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let flow = ConditionalFlow::new(FlowConfig {
        n_layers: 2,
        hidden: vec![16],
        embed_hidden: vec![16],
        embed_dim: 4,
        ..FlowConfig::new(2, 4, 1)
    })
    .unwrap();
    let mut store = flow.init_store_with::<f64>(21, false);
    let prior = BoxUniformPrior::new(vec![-2.0, -1.0], vec![2.0, 1.0]).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (round, kind) in [(0, LossKind::Nll), (1, LossKind::Atomic { atoms: 4 })] {
        let recs = simulate_round(&Shifted, prior.sample(6, 3 + round as u64), round, 7).unwrap();
        let data = TrainingData::new(&flow, &recs, &prior).unwrap();
        let batch: Vec<usize> = (0..6).collect();
        let value = |s: &ParamStore<f64>| {
            let mut tape = Tape::new(0);
            let l = snpe_loss(&mut tape, &flow, &frozen(s), &data, &batch, kind, &mut seeded(5)).unwrap();
            tape.scalar(l.total) / 6.0
        };
        let mut tape = Tape::new(store.len());
        let l = snpe_loss(&mut tape, &flow, &store, &data, &batch, kind, &mut seeded(5)).unwrap();
        let mean = tape.scale(l.total, 1.0 / 6.0);
        let g = tape.backward(mean).unwrap();
        for i in 0..store.len() {
            let orig = store.flat()[i];
            store.flat_mut()[i] = orig + 1e-5;
            let up = value(&store);
            store.flat_mut()[i] = orig - 1e-5;
            let dn = value(&store);
            store.flat_mut()[i] = orig;
            let fd = (up - dn) / 2e-5;
            worst = worst.max((g[i] - fd).abs() / fd.abs().max(1e-3));
            checked += 1;
        }
    }
    verdict(1, "loss gradients vs central differences", worst <= 1e-4, &format!("{checked} coordinates, max relative error {worst:.2e}"));
}

#[test]
fn flow_is_normalized_and_invertible() {
    let obs = |steps: usize, seed: u64| {
        let mut rng = seeded(seed);
        TimeSeries::new(ModelTag::Generic, steps, 1, (0..steps).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let flow = ConditionalFlow::new(FlowConfig::new(1, 10, 1)).unwrap();
    let store = flow.init_store_with::<f64>(3, false);
    let e = flow.embed_observation(&store, &obs(10, 1)).unwrap();
    let n = 400_001;
    let (lo, hi) = (-40.0, 40.0);
    let h = (hi - lo) / (n - 1) as f64;
    let grid: Vec<ParameterVector<f64>> = (0..n).map(|i| vec![lo + i as f64 * h].into()).collect();
    let dens: Vec<f64> = flow.log_prob_many(&store, &grid, &e).unwrap().iter().map(|v| v.exp()).collect();
    let integral = h * (dens.iter().sum::<f64>() - 0.5 * (dens[0] + dens[n - 1]));
    let normalized = (0.9999..=1.0001).contains(&integral);

    let mut worst: f64 = 0.0;
    for d in [1, 2, 4] {
        let flow = ConditionalFlow::new(FlowConfig::new(d, 10, 1)).unwrap();
        let store = flow.init_store_with::<f64>(10 + d as u64, false);
        let e = flow.embed_observation(&store, &obs(10, d as u64)).unwrap();
        let draws = flow.sample(&store, &e, 1000, 4).unwrap();
        let (us, _) = flow.transform(&store, &draws, &e).unwrap();
        let back = flow.inverse(&store, &us, &e).unwrap();
        for (a, b) in draws.iter().zip(&back) {
            for (x, y) in a.iter().zip(b.iter()) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    verdict(
        2,
        "flow normalization and inverse",
        normalized && worst <= 1e-10,
        &format!("integral {integral:.7}, max round-trip error {worst:.2e}"),
    );
}

#[test]
fn conjugate_gaussian_posterior_is_recovered() {
    let toy = GaussianToy { steps: 10, sigma: 1.0 };
    let prior = BoxUniformPrior::new(vec![-3.0], vec![3.0]).unwrap();
    let y = toy.simulate(&vec![0.5].into(), 12345).unwrap();
    let mut flow = ConditionalFlow::new(FlowConfig::new(1, 10, 1)).unwrap();
    let mut learner = FullParams::new(flow.init_store::<f64>(12345));
    let schedule = RoundSchedule {
        sims_per_round: vec![2000],
        train: TrainConfig { lr: 1e-3, ..Default::default() },
    };
    run_sequential(&mut flow, &mut learner, &toy, &prior, &y, &schedule, StandardizerMode::FitRoundZero, 12345).unwrap();
    let e = flow.embed_observation(learner.store(), &y).unwrap();
    let draws = flow.sample_in_box(learner.store(), &e, 20_000, &prior, 1).unwrap().samples;
    let n = draws.len() as f64;
    let mean = draws.iter().map(|t| t[0]).sum::<f64>() / n;
    let sd = (draws.iter().map(|t| (t[0] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let (m0, s0) = toy.posterior_moments(y.values(), -3.0, 3.0);
    let pass = (mean - m0).abs() <= 0.1 && (sd - s0).abs() <= 0.1;
    verdict(3, "one-round Gaussian posterior", pass, &format!("mean {mean:.4} vs {m0:.4}, sd {sd:.4} vs {s0:.4}"));
}

/// The full-size flow for `name` with random (non-identity) weights.
fn task_flow(name: &str) -> (ConditionalFlow, ParamStore<f64>) {
    let t = task(name).unwrap();
    let (steps, dims) = Simulator::<f64>::obs_shape(&t.model);
    let d = Simulator::<f64>::theta_dim(&t.model);
    let mut flow = ConditionalFlow::new(RunConfig::default().flow_config(d, steps, dims)).unwrap();
    let recs = simulate_round(&t.model, t.prior().unwrap().sample(200, 1), 0, 1).unwrap();
    flow.set_standardizer(sbi_ttt_core::flow::Standardizer::fit(recs.iter().map(|r| &r.x)).unwrap()).unwrap();
    let store = flow.init_store_with::<f64>(8, false);
    (flow, store)
}

fn short_schedule(sims: Vec<usize>) -> RoundSchedule {
    RoundSchedule {
        sims_per_round: sims,
        train: TrainConfig { max_epochs: 3, ..Default::default() },
    }
}

#[test]
fn lora_starts_exact_and_stays_low_rank() {
    let t = task("bh_beta60").unwrap();
    let (mut flow, base) = task_flow("bh_beta60");
    let cfg = LoraConfig::default();
    let adapter = lora_attach(&base, &eligible_targets(&base, &flow.weight_blocks(), cfg.rank), &cfg, 2).unwrap();
    let prior = t.prior().unwrap();
    let mut same = adapter.merged() == base;
    for (i, r) in simulate_round(&t.model, prior.sample(50, 5), 0, 5).unwrap().iter().enumerate() {
        let ea = flow.embed_observation(&adapter, &r.x).unwrap();
        let eb = flow.embed_observation(&base, &r.x).unwrap();
        same &= ea == eb;
        same &= flow.log_prob(&adapter, &r.theta, &ea).unwrap() == flow.log_prob(&base, &r.theta, &eb).unwrap();
        same &= flow.sample(&adapter, &ea, 5, i as u64).unwrap() == flow.sample(&base, &eb, 5, i as u64).unwrap();
    }

    let y = t.observation().unwrap();
    let (trained, _) = finetune_lora(&mut flow, adapter, &t.model, &prior, &y, &short_schedule(vec![200, 200]), 3).unwrap();
    let mut max_rank = 0;
    let targets = trained.target_blocks();
    for &b in &targets {
        let d = trained.delta(b).unwrap();
        let cols: Vec<Vec<f64>> = (0..d.cols()).map(|j| d.column_values(j)).collect();
        let (_, sigma) = thin_svd(&cols);
        let tol = 1e-10 * sigma[0].max(1e-300);
        max_rank = max_rank.max(sigma.iter().filter(|&&s| s > tol).count());
    }
    verdict(
        4,
        "LoRA exact start and low-rank updates",
        same && max_rank <= cfg.rank && max_rank > 0,
        &format!("fresh adapter identical: {same}, max rank of trained deltas {max_rank} over {} targets, r = {}", targets.len(), cfg.rank),
    );
}

#[test]
fn subspace_algebra_and_pea_span() {
    let t = task("bh_beta60").unwrap();
    let (mut flow, phi0) = task_flow("bh_beta60");
    let prior = t.prior().unwrap();
    let recs = simulate_round(&t.model, prior.sample(1024, 9), 0, 9).unwrap();
    let data = TrainingData::new(&flow, &recs, &prior).unwrap();
    let batches = sbi_ttt_core::adapt::snapshot_batches(1024, 32, 32, 1).unwrap();
    let g = sbi_ttt_core::adapt::collect_gradient_snapshots(&flow, &phi0, &data, &batches, LossKind::Nll, 2).unwrap();
    let s = compute_subspace(&g, RankSpec::Fixed { rank: 8 }).unwrap();
    let ortho = s.orthonormality_error();

    let mut idem: f64 = 0.0;
    let mut rng = seeded(3);
    for _ in 0..20 {
        let v = GradientVector((0..phi0.len()).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        let p = project_gradient(&s, &v);
        let pp = project_gradient(&s, &p);
        idem = idem.max(p.iter().zip(pp.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }

    let mut energy_ok = true;
    for tau in [0.1, 0.5, 0.9, 0.99, 0.999] {
        let r = compute_subspace(&g, RankSpec::Energy { tau }).unwrap();
        let sq: Vec<f64> = r.singular_values().iter().map(|v| v * v).collect();
        let total: f64 = sq.iter().sum();
        let brute = (1..=sq.len()).find(|&k| sq[..k].iter().sum::<f64>() / total >= tau).unwrap();
        energy_ok &= r.rank() == brute;
    }
    let rank_one = SnapshotMatrix::new(vec![GradientVector(vec![1.0, 2.0, 2.0]); 4]).unwrap();
    energy_ok &= compute_subspace(&rank_one, RankSpec::Fixed { rank: 3 }).unwrap().rank() == 1;

    let y = t.observation().unwrap();
    let cfg = SubspaceConfig::default();
    let (pea, _) =
        finetune_gradsubspace_pea(&mut flow, &phi0, &t.model, &prior, &y, &short_schedule(vec![1024, 1024]), &cfg, 4).unwrap();
    let phi = sbi_ttt_core::snpe::Learner::effective(&pea);
    let delta = GradientVector(phi.flat().iter().zip(phi0.flat()).map(|(a, b)| a - b).collect::<Vec<f64>>());
    let p = project_gradient(pea.subspace().unwrap(), &delta);
    let resid = delta.iter().zip(p.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let moved = delta.norm() > 0.0;

    verdict(
        5,
        "gradient subspace algebra and PEA span",
        ortho <= 1e-10 && idem <= 1e-10 && energy_ok && resid <= 1e-10 && moved,
        &format!("|UᵀU - I| {ortho:.1e}, idempotence {idem:.1e}, energy rule {energy_ok}, PEA residual {resid:.1e}, |φ - φ₀| {:.3e}", delta.norm()),
    );
}

fn brute_force_w1(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    fn go(i: usize, used: &mut [bool], a: &[Vec<f64>], b: &[Vec<f64>], acc: f64, best: &mut f64) {
        if i == a.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                let c = a[i].iter().zip(&b[j]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                go(i + 1, used, a, b, acc + c, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, &mut vec![false; b.len()], a, b, 0.0, &mut best);
    best / a.len() as f64
}

#[test]
fn metric_oracles() {
    let mut rng = seeded(17);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let n = 1 + trial % 7;
        let d = 1 + trial % 3;
        let mut pts = || (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect::<Vec<Vec<f64>>>();
        let (a, b) = (pts(), pts());
        let w = wasserstein(&SampleSet::new(a.clone()).unwrap(), &SampleSet::new(b.clone()).unwrap()).unwrap();
        worst = worst.max((w - brute_force_w1(&a, &b)).abs());
    }

    let a = SampleSet::new((0..50).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()).unwrap();
    let self_mmd = mmd_squared(&a, &a).unwrap();
    let self_w = wasserstein(&a, &a).unwrap();

    let (x, y) = (vec![0.3, -1.2], vec![1.1, 0.4]);
    let dist2: f64 = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum();
    let (sx, sy) = (SampleSet::new(vec![x]).unwrap(), SampleSet::new(vec![y]).unwrap());
    let single_w = wasserstein(&sx, &sy).unwrap() == dist2.sqrt();
    let single_mmd = mmd_squared_with(&sx, &sy, 1.7) == 2.0 - 2.0 * (-dist2 / (2.0 * 1.7)).exp();

    verdict(
        6,
        "WASS and MMD oracles",
        worst <= 1e-12 && self_mmd == 0.0 && self_w == 0.0 && single_w && single_mmd,
        &format!("100 brute-force trials, max error {worst:.1e}; self MMD {self_mmd}, self WASS {self_w}; singletons exact: {}", single_w && single_mmd),
    );
}

#[test]
fn mh_moments_and_reference_convergence() {
    let prior = BoxUniformPrior::new(vec![-50.0], vec![50.0]).unwrap();
    let cfg = MhConfig { n_samples: 10_000, burn_in: 5_000, thin: 10, ..Default::default() };
    let normal = |t: &ParameterVector<f64>| Ok(-0.5 * t[0] * t[0]);
    let chain = run_mh(&normal, &prior, &vec![0.0].into(), &cfg, 11).unwrap();
    let n = chain.samples.len() as f64;
    let mean = chain.samples.iter().map(|t| t[0]).sum::<f64>() / n;
    let var = chain.samples.iter().map(|t| (t[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let moments = mean.abs() <= 0.05 && (var - 1.0).abs() <= 0.1;

    let run = RunConfig::default();
    let mut all = true;
    let mut parts = Vec::new();
    for t in builtin_tasks() {
        let y = t.observation().unwrap();
        let ll = |th: &ParameterVector<f64>| t.model.loglik(th, &y);
        let r = mh_reference(&ll, &t.prior().unwrap(), &run.mh, run.mh_chains, run.reference_seed).unwrap();
        all &= r.max_rhat() < 1.05;
        parts.push(format!("{} {:.4}", t.name, r.max_rhat()));
    }
    verdict(
        7,
        "MH moments and split R-hat",
        moments && all,
        &format!("N(0,1) mean {mean:.4}, var {var:.4}; max R-hat {}", parts.join(", ")),
    );
}

#[test]
fn manifests_replay_bit_exactly() {
    let root = tempfile::tempdir().unwrap();
    let layout = ArtifactLayout::new(root.path());
    let cfg = RunConfig::from_text(
        "schedule.sims = 100, 60
         train.max_epochs = 3
         flow.layers = 3
         flow.hidden = 16
         flow.embed_hidden = 16
         flow.embed_dim = 8
         lora.rank = 4
         lora.alpha = 4
         subspace.snapshots = 6
         subspace.batch_size = 10
         subspace.rank = 3
         mh.samples = 500
         mh.burn_in = 500
         mh.rhat_threshold = 100
         eval.samples = 200",
    )
    .unwrap();
    let mut dirs = Vec::new();
    for target in ["bh_beta60", "mvgbmgtc"] {
        for seed in [1, 2] {
            run_experiment(&layout, target, &Method::ALL, seed, &cfg).unwrap();
            let source = task(target).unwrap().pretrain_source.unwrap();
            dirs.push(layout.pretrain(&source, seed));
            for m in Method::ALL {
                dirs.push(layout.finetune(target, m, seed));
                dirs.push(layout.evaluate(target, m, seed));
            }
        }
        dirs.push(layout.reference(target, 0));
    }
    let evals: Vec<PathBuf> = Method::ALL.iter().map(|&m| layout.evaluate("bh_beta60", m, 1)).collect();
    sbi_ttt_core::harness::cmd_report(&evals, &layout.report("all")).unwrap();
    dirs.push(layout.report("all"));

    let mut bad = Vec::new();
    for dir in &dirs {
        let scratch = tempfile::tempdir().unwrap();
        let out = replay(dir, &scratch.path().join("replay")).unwrap();
        if !out.is_exact() {
            bad.push(format!("{}: {:?}", dir.display(), out.mismatches));
        }
    }
    let mut detail = format!("{} manifests replayed, {} mismatched", dirs.len(), bad.len());
    if !bad.is_empty() {
        detail += &format!(": {}", bad.join("; "));
    }
    verdict(9, "manifest replay", bad.is_empty(), &detail);
}

fn wass(m: &Manifest) -> f64 {
    m.metrics.as_ref().unwrap().wass
}

#[test]
fn paper_scale_orderings() {
    let keep = std::env::var_os(sbi_ttt_core::harness::ROOT_ENV);
    let tmp = tempfile::tempdir().unwrap();
    let layout = match &keep {
        Some(p) => ArtifactLayout::new(PathBuf::from(p)),
        None => ArtifactLayout::new(tmp.path()),
    };
    let cfg = RunConfig::default();
    let seeds = [1u64, 2, 3];
    let bh_methods = Method::ALL;
    let mv_methods = [Method::Snpe, Method::Ttt];

    let mut results: Vec<(&str, u64, Vec<Manifest>)> = Vec::new();
    for &seed in &seeds {
        for target in ["bh_beta60", "bh_beta60gtc"] {
            results.push((target, seed, run_experiment(&layout, target, &bh_methods, seed, &cfg).unwrap()));
        }
        results.push(("mvgbmgtc", seed, run_experiment(&layout, "mvgbmgtc", &mv_methods, seed, &cfg).unwrap()));
    }
    let score = |target: &str, seed: u64, m: Method| {
        let (_, _, ms) = results.iter().find(|(t, s, _)| *t == target && *s == seed).unwrap();
        wass(ms.iter().find(|x| x.method == Some(m)).unwrap())
    };

    let mut lines = Vec::new();
    let mut all = true;
    let mut check = |label: &str, holds: &dyn Fn(u64) -> bool| {
        let wins = seeds.iter().filter(|&&s| holds(s)).count();
        all &= 2 * wins > seeds.len();
        lines.push(format!("{label} {wins}/{}", seeds.len()));
    };
    check("bh_beta60 TTT<SNPE", &|s| score("bh_beta60", s, Method::Ttt) < score("bh_beta60", s, Method::Snpe));
    check("bh_beta60 GS-PEA lowest", &|s| {
        let pea = score("bh_beta60", s, Method::GsPea);
        bh_methods.iter().filter(|&&m| m != Method::GsPea).all(|&m| pea < score("bh_beta60", s, m))
    });
    for m in [Method::Ttt, Method::GsTtt, Method::GsPea] {
        check(&format!("bh_beta60gtc {}<LoRA", m.label()), &|s| {
            score("bh_beta60gtc", s, m) < score("bh_beta60gtc", s, Method::Lora)
        });
    }
    check("mvgbmgtc TTT<SNPE", &|s| score("mvgbmgtc", s, Method::Ttt) < score("mvgbmgtc", s, Method::Snpe));

    let means: Vec<String> = results
        .iter()
        .filter(|(_, s, _)| *s == seeds[0])
        .map(|(t, _, _)| {
            let methods: &[Method] = if *t == "mvgbmgtc" { &mv_methods } else { &bh_methods };
            let cells: Vec<String> = methods
                .iter()
                .map(|&m| format!("{} {:.4}", m.name(), seeds.iter().map(|&s| score(t, s, m)).sum::<f64>() / seeds.len() as f64))
                .collect();
            format!("{t}: {}", cells.join(" "))
        })
        .collect();

    // Full-scale manifests replay too: one fine-tune and every evaluation of the first seed.
    let mut replays = vec![layout.finetune("bh_beta60", Method::GsPea, seeds[0])];
    for (t, s, _) in results.iter().filter(|(_, s, _)| *s == seeds[0]) {
        let methods: &[Method] = if *t == "mvgbmgtc" { &mv_methods } else { &bh_methods };
        replays.extend(methods.iter().map(|&m| layout.evaluate(t, m, *s)));
    }
    let mut inexact = 0;
    for dir in &replays {
        let scratch = tempfile::tempdir().unwrap();
        if !replay(dir, &scratch.path().join("replay")).unwrap().is_exact() {
            inexact += 1;
        }
    }

    verdict(
        8,
        "full-scale WASS orderings",
        all && inexact == 0,
        &format!(
            "majority over seeds {seeds:?}: {}; mean WASS {}; {} full-scale replays, {inexact} inexact",
            lines.join(", "),
            means.join("; "),
            replays.len()
        ),
    );
}
