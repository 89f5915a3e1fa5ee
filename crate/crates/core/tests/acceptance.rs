//! Acceptance suite. Prints one PASS/FAIL line per criterion. With
//! `ACCEPTANCE_STRICT` set, exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use siftmask::data::{synth_generate, HeterogeneityRegime, TaskId, TaskSpec};
use siftmask::engine::{project_total_cost, EngineConfig, EvalMode, StorageReport, System};
use siftmask::merging::{emr_build, merge_as, merge_sift, tall_mask, ties_merge, Method};
use siftmask::param::{ParamVector, PrngStream, SignVector};
use siftmask::persist::{Checkpoint, DataSource, RunConfig};
use siftmask::trainer::{
    accuracy, ft_finetune, init_params, loss_and_grad_f64, loss_f64, sift_finetune, ModelSpec, TaskVector,
    TrainConfig,
};

mod common;
use common::reference::{random_vectors, ref_emr, ref_tall, ref_ties, tv};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn conflicting(t: usize, n: usize, d: usize, c: usize, seed: u64) -> Vec<TaskSpec> {
    synth_generate(HeterogeneityRegime::Conflicting { conflict_rate: 0.5 }, t, n, d, c, seed).unwrap()
}

fn differing_bits(a: &[i64], b: &[i64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum::<u32>() + 64 * a.len().abs_diff(b.len()) as u32
}

fn exactness_oracle() -> Outcome {
    let start = Instant::now();
    let spec = ModelSpec::logistic(10, 3);
    let tasks = conflicting(8, 60, 10, 3, 1);
    let mut cfg = EngineConfig::new(spec, TrainConfig::new(20, 16, 0.05, 2), Method::SiftMasks);
    cfg.base_seed = 3;
    cfg.sign_seed = 4;
    let orders = [[1u32, 4, 6], [6, 1, 4]];
    let retained: Vec<&TaskSpec> = tasks.iter().filter(|t| ![1, 4, 6].contains(&t.id().0)).collect();

    let base = init_params(&spec, cfg.base_seed);
    let signs = SignVector::generate(cfg.sign_seed, spec.param_count());
    let items: Vec<_> = retained.iter().map(|t| sift_finetune(t, &base, &signs, &spec, &cfg.train).unwrap()).collect();
    let oracle = merge_sift(&items).unwrap();

    let mut worst = 0;
    for order in orders {
        let mut sys = System::build(cfg.clone(), &tasks).unwrap();
        for id in order {
            sys.unlearn(TaskId(id), &tasks).unwrap();
        }
        worst = worst.max(differing_bits(sys.state().accumulator().values(), oracle.accumulator().values()));
        if sys.state().retained() != oracle.retained() || sys.state().masks() != oracle.masks() {
            worst = worst.max(1);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst == 0 && elapsed < Duration::from_secs(30),
        format!("differing bits {worst} across both deletion orders, {:.2?}", elapsed),
    )
}

fn sign_invariant() -> Outcome {
    let spec = ModelSpec::mlp(20, 16, 2);
    let tasks = conflicting(50, 100, 20, 2, 2);
    let base = init_params(&spec, 5);
    let v = SignVector::generate(6, spec.param_count());
    let cfg = TrainConfig::new(20, 32, 0.05, 7);
    let (mut entries, mut feasible, mut mask_ok) = (0usize, 0usize, 0usize);
    for t in &tasks {
        let (tau, mask) = sift_finetune(t, &base, &v, &spec, &cfg).unwrap();
        for i in 0..tau.len() {
            entries += 1;
            feasible += (tau.delta[i] * v.sign(i) >= 0.0) as usize;
            mask_ok += (mask.get(i) == (tau.delta[i] != 0.0)) as usize;
        }
    }
    outcome(
        feasible == entries && mask_ok == entries,
        format!("{feasible}/{entries} entries sign-feasible, {mask_ok}/{entries} mask bits equal support"),
    )
}

fn gradient_error(spec: ModelSpec, seed: u64) -> f64 {
    let mut s = PrngStream::new(seed);
    let params: Vec<f64> = init_params(&spec, seed).to_f64().iter().map(|p| p + 0.3 * s.next_gaussian()).collect();
    let data: Vec<siftmask::Example> = (0..8)
        .map(|_| siftmask::Example {
            features: (0..spec.input_dim).map(|_| s.next_gaussian()).collect(),
            label: s.next_below(spec.num_classes as u64) as usize,
        })
        .collect();
    let refs: Vec<_> = data.iter().collect();
    let (_, grad) = loss_and_grad_f64(&params, &spec, &refs).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let i = s.next_below(params.len() as u64) as usize;
        let (mut p, mut m) = (params.clone(), params.clone());
        p[i] += 1e-4;
        m[i] -= 1e-4;
        let fd = (loss_f64(&p, &spec, &refs).unwrap() - loss_f64(&m, &spec, &refs).unwrap()) / 2e-4;
        worst = worst.max((grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-8));
    }
    worst
}

fn gradient_check() -> Outcome {
    let a = gradient_error(ModelSpec::logistic(10, 3), 11);
    let b = gradient_error(ModelSpec::mlp(10, 16, 3), 12);
    outcome(a <= 1e-4 && b <= 1e-4, format!("max relative error logistic {a:.2e}, mlp {b:.2e}"))
}

fn determinism() -> Outcome {
    let cfg = RunConfig {
        seed: 9,
        data: DataSource::Synthetic {
            regime: HeterogeneityRegime::Conflicting { conflict_rate: 0.5 },
            tasks: 6,
            n_per_task: 50,
        },
        model: ModelSpec::mlp(8, 8, 2),
        clusters: 2,
        ..RunConfig::default()
    };
    let run = |cfg: &RunConfig| {
        let tasks = cfg.tasks().unwrap();
        let mut sys = cfg.build(&tasks).unwrap();
        sys.unlearn(TaskId(2), &tasks).unwrap();
        Checkpoint::new(cfg.clone(), sys).to_bytes().unwrap()
    };
    let (a, b) = (run(&cfg), run(&cfg));
    let c = run(&RunConfig { seed: 10, ..cfg.clone() });
    outcome(a == b && a != c, format!("repeat identical: {}, seed change differs: {}", a == b, a != c))
}

fn ledger_arithmetic() -> Outcome {
    let start = Instant::now();
    let central = project_total_cost(500, &Method::Central { steps_per_task: 20 }, 20).total_task_finetunes;
    let merge = project_total_cost(500, &Method::SiftMasks, 20).total_task_finetunes;
    let ft = project_total_cost(500, &Method::FtMerge, 20).total_task_finetunes;
    let tall_steps = project_total_cost(500, &Method::tall_default(), 20).per_event[0] * 20;
    let ratio = central as f64 / merge as f64;
    let elapsed = start.elapsed();
    outcome(
        central == 124_750
            && merge == 499
            && ft == 499
            && (249.0..=251.0).contains(&ratio)
            && tall_steps == 9980
            && elapsed < Duration::from_secs(1),
        format!("central {central}, merge {merge}, ratio {ratio:.2}, first TALL deletion {tall_steps} steps, {elapsed:.2?}"),
    )
}

fn storage_report() -> Outcome {
    // M = 8 * (127 + 1) = 1024.
    let spec = ModelSpec::logistic(127, 8);
    let tasks = synth_generate(HeterogeneityRegime::Similar { margin: 0.0 }, 64, 5, 127, 8, 3).unwrap();
    let sys = System::build(EngineConfig::new(spec, TrainConfig::new(1, 4, 0.05, 1), Method::SiftMasks), &tasks)
        .unwrap();
    let words = sys.storage().words;
    let formula = StorageReport::for_method(&Method::SiftMasks, 1024, 64).words;
    let ideal = 1024 * (1 + 64 / 32);
    outcome(words == 3072 && formula == 3072 && ideal == 3072, format!("built system {words} words, formula {formula}"))
}

const TREND_SEEDS: [u64; 3] = [0, 1, 2];

fn trend_spec() -> ModelSpec {
    ModelSpec::mlp(20, 64, 2)
}

fn trend_config(seed: u64, method: Method) -> EngineConfig {
    let mut cfg = EngineConfig::new(trend_spec(), TrainConfig::new(20, 64, 0.05, 100 + seed), method);
    cfg.base_seed = 200 + seed;
    cfg.sign_seed = 300 + seed;
    cfg
}

fn trend_tasks(t: usize, seed: u64) -> Vec<TaskSpec> {
    conflicting(t, 400, 20, 2, seed)
}

fn held_in(sys: &System, tasks: &[TaskSpec]) -> f64 {
    sys.evaluate(tasks, EvalMode::HeldIn).unwrap().aggregate.unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn merging_degradation() -> Outcome {
    let at = |t: usize| {
        let accs: Vec<f64> = TREND_SEEDS
            .iter()
            .map(|&s| {
                let tasks = trend_tasks(t, s);
                held_in(&System::build(trend_config(s, Method::FtMerge), &tasks).unwrap(), &tasks)
            })
            .collect();
        mean(&accs)
    };
    let (a5, a50) = (at(5), at(50));
    outcome(
        a5 - a50 >= 0.05,
        format!("FT+Merge held-in T=5 {:.1}%, T=50 {:.1}%, drop {:.1} points", 100.0 * a5, 100.0 * a50, 100.0 * (a5 - a50)),
    )
}

fn local_accuracy(sys: &System, tasks: &[TaskSpec]) -> f64 {
    let cfg = sys.config();
    let accs: Vec<f64> = tasks
        .iter()
        .map(|t| {
            let tau = ft_finetune(t, sys.base(), &cfg.model, &cfg.train).unwrap();
            let local = sys.base().offset_by(&tau.delta.to_f64()).unwrap();
            accuracy(&local, &cfg.model, t.eval()).unwrap()
        })
        .collect();
    mean(&accs)
}

fn localization_recovery() -> Outcome {
    let start = Instant::now();
    let (mut sift, mut ft, mut local) = (Vec::new(), Vec::new(), Vec::new());
    for &s in &TREND_SEEDS {
        let tasks = trend_tasks(50, s);
        let ft_sys = System::build(trend_config(s, Method::FtMerge), &tasks).unwrap();
        let sift_sys = System::build(trend_config(s, Method::SiftMasks), &tasks).unwrap();
        ft.push(held_in(&ft_sys, &tasks));
        sift.push(held_in(&sift_sys, &tasks));
        local.push(local_accuracy(&ft_sys, &tasks));
    }
    let (sift, ft, local) = (mean(&sift), mean(&ft), mean(&local));
    let elapsed = start.elapsed();
    outcome(
        sift >= ft + 0.10 && sift >= local - 0.05 && elapsed < Duration::from_secs(600),
        format!(
            "T=50 held-in SIFT-Masks {:.1}%, FT+Merge {:.1}%, local models {:.1}% (margin over merge {:+.1}, gap to local {:.1} points), {elapsed:.2?}",
            100.0 * sift,
            100.0 * ft,
            100.0 * local,
            100.0 * (sift - ft),
            100.0 * (local - sift)
        ),
    )
}

fn post_unlearning_trends() -> Outcome {
    let (mut in0, mut in25, mut out0, mut out25) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut zeroshot_exact = true;
    for &s in &TREND_SEEDS {
        let tasks = trend_tasks(50, s);
        let mut sys = System::build(trend_config(s, Method::SiftMasks), &tasks).unwrap();
        in0.push(held_in(&sys, &tasks));
        out0.push(sys.evaluate(&tasks, EvalMode::HeldOut).unwrap().aggregate.unwrap());
        let mut order: Vec<TaskId> = tasks.iter().map(|t| t.id()).collect();
        PrngStream::new(400 + s).shuffle(&mut order);
        for &id in &order[..25] {
            sys.unlearn(id, &tasks).unwrap();
        }
        in25.push(held_in(&sys, &tasks));
        out25.push(sys.evaluate(&tasks, EvalMode::HeldOut).unwrap().aggregate.unwrap());
        for &id in &order[25..] {
            sys.unlearn(id, &tasks).unwrap();
        }
        let after = sys.evaluate(&tasks, EvalMode::HeldOut).unwrap().aggregate;
        zeroshot_exact &= after == sys.zeroshot(&tasks).aggregate;
    }
    let (in0, in25, out0, out25) = (mean(&in0), mean(&in25), mean(&out0), mean(&out25));
    outcome(
        in25 >= in0 - 0.02 && out25 < out0 && zeroshot_exact,
        format!(
            "held-in {:.1}% -> {:.1}%, held-out {:.1}% -> {:.1}% after 25 deletions; all deleted equals zeroshot: {zeroshot_exact}",
            100.0 * in0,
            100.0 * in25,
            100.0 * out0,
            100.0 * out25
        ),
    )
}

fn baseline_conformance() -> Outcome {
    let mut failures = Vec::new();
    let t = tv(0, &[1.0, 0.1]);
    let state = merge_as(&[t.clone(), tv(1, &[2.0, 3.0])], Method::tall_default()).unwrap();
    if tall_mask(&t, &state, 0.4).unwrap().iter().collect::<Vec<_>>() != [true, false] {
        failures.push("tall example".to_string());
    }
    let e = emr_build(&[tv(1, &[1.0, -2.0]), tv(2, &[3.0, 1.0])]).unwrap();
    let d = e.localized_delta(TaskId(1)).unwrap();
    if e.unified != [3.0, -2.0] || e.scales[&TaskId(1)] != 0.6 || (d[0] - 1.8).abs() > 1e-12 || (d[1] + 1.2).abs() > 1e-12
    {
        failures.push("emr example".into());
    }
    if ties_merge(&[tv(0, &[2.0, -1.0]), tv(1, &[-1.0, -3.0])], 1.0).unwrap().as_slice() != [2.0, -2.0]
        || ties_merge(&[tv(0, &[2.0, 0.1])], 0.5).unwrap().as_slice() != [2.0, 0.0]
    {
        failures.push("ties example".into());
    }

    let mut s = PrngStream::new(77);
    let mut mismatches = [0usize; 3];
    for _ in 0..1000 {
        let taus = random_vectors(&mut s);
        let vectors: Vec<TaskVector> = taus.iter().enumerate().map(|(i, v)| tv(i as u32, v)).collect();
        let state = merge_as(&vectors, Method::tall_default()).unwrap();
        let t = s.next_below(taus.len() as u64) as usize;
        let lambda = s.next_below(13) as f64 / 4.0;
        let mask: Vec<bool> = tall_mask(&vectors[t], &state, lambda).unwrap().iter().collect();
        mismatches[0] += (mask != ref_tall(&taus, t, lambda)) as usize;

        let got = emr_build(&vectors).unwrap();
        let want = ref_emr(&taus);
        let same = got.unified == want.unified
            && want.masks.iter().zip(&want.scales).enumerate().all(|(i, (m, sc))| {
                let id = TaskId(i as u32);
                got.masks[&id].iter().collect::<Vec<_>>() == *m && got.scales[&id] == *sc
            });
        mismatches[1] += (!same) as usize;

        let tenths = 1 + s.next_below(10) as usize;
        let got = ties_merge(&vectors, tenths as f64 / 10.0).unwrap();
        let want = ParamVector::from_f64(&ref_ties(&taus, tenths));
        mismatches[2] += (got != want) as usize;
    }
    outcome(
        failures.is_empty() && mismatches == [0, 0, 0],
        format!(
            "hand examples failing: {:?}; randomized mismatches over 1000 trials tall/emr/ties: {:?}",
            failures, mismatches
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("exactness oracle", exactness_oracle),
        ("sign invariant", sign_invariant),
        ("gradient check", gradient_check),
        ("determinism", determinism),
        ("ledger arithmetic", ledger_arithmetic),
        ("storage report", storage_report),
        ("merging degradation trend", merging_degradation),
        ("localization recovery", localization_recovery),
        ("post-unlearning trends", post_unlearning_trends),
        ("baseline formula conformance", baseline_conformance),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = run();
        failed += (!o.pass) as usize;
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {failed} failed");
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
