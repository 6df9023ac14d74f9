//! Acceptance checks, one PASS/FAIL/SKIP line per criterion.
//!
//! Criteria 8 and 9 need the MotionSense dataset and hours of compute. They
//! run only when `CLHAR_MOTIONSENSE` points at the data and `CLHAR_LONG` is
//! set: `CLHAR_LONG=proxy` runs the scaled fine-tune check and the reduced
//! sweep, `CLHAR_LONG=full` adds the five-seed comparison at full settings.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use clhar::augment::transforms::{draw_rotation, rotate_with};
use clhar::augment::{
    t_channel_shuffle, t_invert, t_permute, t_time_reverse, two_views, TransformKind, TransformPipeline,
};
use clhar::data::{
    make_windows, motionsense_split, split_by_subject, synth_dataset, window_count, AccelChannels,
    RawSeries, DEFAULT_TEST_SUBJECTS, WINDOW_LEN, WINDOW_OVERLAP,
};
use clhar::model::{init_params, ModelConfig, ModelParams};
use clhar::numcore::nt_xent_loss;
use clhar::rng::{derive_seed, stream};
use clhar::sweep::{render_csv, render_svg, run_sweep, SweepConfig};
use clhar::train::{
    finetune_eval, linear_eval, pretrain_simclr, supervised_baseline, unlabeled, EvalConfig, PretrainConfig,
    Protocol,
};
use clhar::verify::{run_verification, VerifyOptions};
use clhar::{ActivityLabel, DatasetSplit, Tensor};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = std::result::Result<String, String>;
type Criterion = (u32, &'static str, Box<dyn FnOnce() -> Outcome>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn randn(seed: u64, shape: &[usize]) -> Tensor<f32> {
    let mut r = stream(seed, &[]);
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(&mut r);
        v as f32
    })
}

// 1

fn gradient_verification() -> Check {
    let start = Instant::now();
    let report = ok(run_verification(&VerifyOptions::default()))?;
    let secs = start.elapsed().as_secs_f64();
    let worst = report.kernels.iter().map(|k| k.max_rel_error).fold(0.0, f64::max);
    for k in &report.kernels {
        ensure(k.passed && k.instances >= 20, || {
            format!("{} failed: {} instances, max rel err {:.2e}", k.kernel, k.instances, k.max_rel_error)
        })?;
    }
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} kernels x 20 instances, worst rel err {worst:.1e}, {secs:.1}s",
        report.kernels.len()
    ))
}

// 2

/// Loss and gradient by explicit enumeration of anchor/candidate pairs.
fn nt_xent_oracle(z: &[Vec<f64>], tau: f64) -> (f64, Vec<Vec<f64>>) {
    let m = z.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut loss = 0.0;
    let mut grad = vec![vec![0.0; z[0].len()]; m];
    for a in 0..m {
        let pos = if a % 2 == 0 { a + 1 } else { a - 1 };
        let logits: Vec<(usize, f64)> = (0..m).filter(|&k| k != a).map(|k| (k, dot(&z[a], &z[k]) / tau)).collect();
        let max = logits.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = logits.iter().map(|l| (l.1 - max).exp()).sum();
        let positive = logits.iter().find(|l| l.0 == pos).unwrap().1;
        loss += -(positive - max) + denom.ln();
        for &(k, s) in &logits {
            let p = (s - max).exp() / denom;
            let coeff = (p - if k == pos { 1.0 } else { 0.0 }) / tau / m as f64;
            for d in 0..z[a].len() {
                grad[a][d] += coeff * z[k][d];
                grad[k][d] += coeff * z[a][d];
            }
        }
    }
    (loss / m as f64, grad)
}

fn unit_rows(rows: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = stream(seed, &[]);
    (0..rows)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

fn as_tensor(rows: &[Vec<f64>]) -> Tensor<f64> {
    Tensor::from_vec(&[rows.len(), rows[0].len()], rows.concat()).unwrap()
}

fn nt_xent_oracle_equivalence() -> Check {
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for n in 1..=6usize {
        for dim in [2usize, 8, 50] {
            for tau in [0.05f64, 0.1, 0.5, 1.0] {
                let z = unit_rows(2 * n, dim, derive_seed(17, &[n as u64, dim as u64, tau.to_bits()]));
                let (loss, grad) = ok(nt_xent_loss(&as_tensor(&z), tau))?;
                let (oracle_loss, oracle_grad) = nt_xent_oracle(&z, tau);
                let g_scale = oracle_grad.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
                let g_err = grad
                    .data()
                    .iter()
                    .zip(oracle_grad.iter().flatten())
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                let rel_g = if g_scale > 0.0 { g_err / g_scale } else { g_err };
                let rel_l = (loss - oracle_loss).abs() / oracle_loss.abs().max(1e-300);
                let rel_l = if oracle_loss == 0.0 { (loss - oracle_loss).abs() } else { rel_l };
                worst = worst.max(rel_g).max(rel_l);
                ensure(rel_g <= 1e-6 && rel_l <= 1e-6, || {
                    format!("N={n} d={dim} tau={tau}: loss rel {rel_l:.2e}, grad rel {rel_g:.2e}")
                })?;
                if n == 1 {
                    ensure(loss == 0.0, || format!("N=1 d={dim} tau={tau} gave {loss}"))?;
                }
                let same = vec![z[0].clone(); 2 * n];
                let (tied, _) = ok(nt_xent_loss(&as_tensor(&same), tau))?;
                let expected = ((2 * n - 1) as f64).ln();
                ensure((tied - expected).abs() <= 1e-9, || {
                    format!("identical rows N={n} tau={tau}: {tied} vs ln(2N-1)={expected}")
                })?;
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} cases, worst rel err {worst:.1e}"))
}

// 3

fn sorted_bits(t: &Tensor<f32>) -> Vec<u32> {
    let mut b = bits(t);
    b.sort_unstable();
    b
}

fn channel_multisets(t: &Tensor<f32>) -> Vec<Vec<u32>> {
    let c = t.shape()[1];
    (0..c)
        .map(|ch| {
            let mut v: Vec<u32> = t.data().iter().skip(ch).step_by(c).map(|x| x.to_bits()).collect();
            v.sort_unstable();
            v
        })
        .collect()
}

fn augmentation_invariants() -> Check {
    let start = Instant::now();
    let mut checks = 0;
    for seed in 0..50u64 {
        let len = [400, 37, 401, 128, 9][seed as usize % 5];
        let w = randn(seed, &[len, 3]);

        let inv = ok(t_invert(&ok(t_invert(&w))?))?;
        let rev = ok(t_time_reverse(&ok(t_time_reverse(&w))?))?;
        ensure(bits(&inv) == bits(&w) && bits(&rev) == bits(&w), || format!("involution broke at seed {seed}"))?;

        let mut r = stream(seed, &[1]);
        let (m, _, _) = draw_rotation(&mut r);
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| m[i][k] * m[j][k]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                ensure((d - expected).abs() < 1e-5, || format!("R R^T [{i}][{j}] = {d} at seed {seed}"))?;
            }
        }
        let rotated = ok(rotate_with(&w, &m))?;
        for t in 0..len {
            let norm = |x: &[f32]| x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            let (a, b) = (norm(w.outer(t)), norm(rotated.outer(t)));
            ensure((a - b).abs() < 1e-5 * a.max(1.0), || format!("norm {a} -> {b} at seed {seed}"))?;
        }

        let permuted = ok(t_permute(&w, 4.min(len), &mut stream(seed, &[2])))?;
        let shuffled = ok(t_channel_shuffle(&w, &mut stream(seed, &[3])))?;
        ensure(channel_multisets(&permuted) == channel_multisets(&w), || format!("permute changed a channel at seed {seed}"))?;
        ensure(sorted_bits(&shuffled) == sorted_bits(&w), || format!("channel shuffle changed values at seed {seed}"))?;
        ensure(sorted_bits(&rev) == sorted_bits(&w), || "time reverse changed values".into())?;

        for kind in TransformKind::ALL {
            let p = TransformPipeline::new(vec![kind], seed);
            let a = ok(p.apply(&w, 3, 0))?;
            let b = ok(p.apply(&w, 3, 0))?;
            ensure(a.shape() == w.shape(), || format!("{kind} changed shape {:?}", a.shape()))?;
            ensure(bits(&a) == bits(&b), || format!("{kind} not reproducible at seed {seed}"))?;
            checks += 1;
        }
    }
    let batch = randn(99, &[6, 400, 3]);
    let p = ok(TransformPipeline::parse("rotate,warp,permute,noise", 5))?;
    let (a1, b1) = ok(two_views(&p, &batch))?;
    let (a2, b2) = ok(two_views(&p, &batch))?;
    ensure(bits(&a1) == bits(&a2) && bits(&b1) == bits(&b2), || "two views not reproducible".into())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("50 windows, {checks} per-kind checks, {secs:.1}s"))
}

// 4

fn series(len: usize, subject: u32) -> RawSeries {
    RawSeries {
        subject_id: subject,
        trial_id: 1,
        label: ActivityLabel::Walking,
        values: Tensor::from_fn(&[len, 3], |i| i as f32),
    }
}

fn data_contract() -> Check {
    let w = ok(make_windows(&series(900, 1), WINDOW_LEN, WINDOW_OVERLAP))?;
    let starts: Vec<usize> = w.iter().map(|w| w.start).collect();
    ensure(starts == [0, 200, 400], || format!("900 steps gave windows at {starts:?}"))?;

    let mut r = stream(4, &[]);
    for _ in 0..100 {
        let len = r.random_range(0..5000usize);
        let expected = if len < WINDOW_LEN { 0 } else { (len - WINDOW_LEN) / 200 + 1 };
        let n = ok(window_count(len, WINDOW_LEN, WINDOW_OVERLAP))?;
        let w = ok(make_windows(&series(len, 1), WINDOW_LEN, WINDOW_OVERLAP))?;
        ensure(n == expected && w.len() == expected, || format!("T={len}: count {n}, cut {}, want {expected}", w.len()))?;
        for (i, win) in w.iter().enumerate() {
            let first = win.values.data()[0] as usize;
            ensure(
                win.start == 200 * i && win.values.shape() == [WINDOW_LEN, 3] && first == win.start * 3 && win.start + WINDOW_LEN <= len,
                || format!("T={len}: window {i} misplaced"),
            )?;
        }
    }

    let windows = ok(synth_dataset(100, 3, 1))?;
    let split = ok(split_by_subject(windows, &DEFAULT_TEST_SUBJECTS))?;
    let train: BTreeSet<u32> = split.train.iter().map(|w| w.subject_id).collect();
    let test: BTreeSet<u32> = split.test.iter().map(|w| w.subject_id).collect();
    ensure(train.is_disjoint(&test) && test == split.test_subjects && train == split.train_subjects, || {
        format!("train {train:?} overlaps test {test:?}")
    })?;
    Ok(format!(
        "900 -> 3 windows, 100 random lengths, {} train / {} test subjects",
        train.len(),
        test.len()
    ))
}

// 5

fn same_bits(a: &ModelParams<f32>, b: &ModelParams<f32>, prefix: &str) -> bool {
    a.named()
        .iter()
        .zip(b.named())
        .filter(|(x, _)| x.0.starts_with(prefix))
        .all(|(x, y)| bits(&x.1.value) == bits(&y.1.value))
}

fn freezing_contracts() -> Check {
    let windows = ok(synth_dataset(12, 3, 2))?;
    let split = ok(split_by_subject(windows, &DEFAULT_TEST_SUBJECTS))?;
    let model = ModelConfig::default();
    let p = ok(init_params::<f32>(&model, 3))?;

    let mut lin = EvalConfig::new(Protocol::Linear, 4);
    lin.epochs = 2;
    lin.batch_size = 8;
    let after = ok(linear_eval(&p, &split, &lin))?.record.params;
    ensure(same_bits(&p, &after, "encoder."), || "linear eval moved encoder weights".into())?;
    ensure(!same_bits(&p, &after, "head.linear"), || "linear head did not train".into())?;

    let mut ft = EvalConfig::new(Protocol::FineTune, 5);
    ft.epochs = 1;
    ft.batch_size = 8;
    let after = ok(finetune_eval(&p, &split, &ft))?.record.params;
    ensure(
        same_bits(&p, &after, "encoder.conv1") && same_bits(&p, &after, "encoder.conv2"),
        || "fine-tune moved conv1 or conv2".into(),
    )?;
    ensure(!same_bits(&p, &after, "encoder.conv3"), || "fine-tune did not train conv3".into())?;
    Ok("linear: encoder bitwise fixed; fine-tune: conv1/conv2 bitwise fixed, conv3 trained".into())
}

// 6 and 7

const SEEDS: u64 = 5;
const RANDOM_BASELINE: u64 = 0xba5e;

fn synthetic_split(seed: u64) -> std::result::Result<DatasetSplit, String> {
    ok(split_by_subject(ok(synth_dataset(100, 3, seed))?, &DEFAULT_TEST_SUBJECTS))
}

fn contrastive_desk_scale() -> Check {
    let mut good = 0;
    let mut lines = Vec::new();
    for seed in 0..SEEDS {
        let split = synthetic_split(seed)?;
        let cfg = PretrainConfig {
            epochs: 20,
            batch_size: 64,
            temperature: 0.1,
            pipeline: ok(TransformPipeline::parse("noise,scale", seed))?,
            seed,
            ..PretrainConfig::default()
        };
        let record = ok(pretrain_simclr(&ok(unlabeled(&split.train))?, &cfg))?;
        let mut eval = EvalConfig::new(Protocol::Linear, seed);
        eval.batch_size = 32;
        let f1 = ok(linear_eval(&record.params, &split, &eval))?.f1;
        let random = ok(init_params::<f32>(&cfg.model, derive_seed(seed, &[RANDOM_BASELINE])))?;
        let base = ok(linear_eval(&random, &split, &eval))?.f1;
        if f1 >= 0.80 && f1 - base >= 0.10 {
            good += 1;
        }
        lines.push(format!("{f1:.3}/{base:.3}"));
    }
    let detail = format!("{good}/{SEEDS} seeds (pretrained/random F1: {})", lines.join(" "));
    if good >= 4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn supervised_desk_scale() -> Check {
    let mut good = 0;
    let mut scores = Vec::new();
    for seed in 0..SEEDS {
        let split = synthetic_split(seed)?;
        let mut eval = EvalConfig::new(Protocol::Supervised, seed);
        eval.epochs = 20;
        let f1 = ok(supervised_baseline(&ModelConfig::default(), &split, &eval))?.f1;
        if f1 >= 0.90 {
            good += 1;
        }
        scores.push(format!("{f1:.3}"));
    }
    let detail = format!("{good}/{SEEDS} seeds (F1: {})", scores.join(" "));
    if good >= 4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 8 and 9

fn long_runs() -> Option<(PathBuf, bool)> {
    let root = std::env::var_os("CLHAR_MOTIONSENSE")?;
    let full = match std::env::var("CLHAR_LONG").ok()?.as_str() {
        "full" => true,
        "proxy" | "1" => false,
        _ => return None,
    };
    Some((PathBuf::from(root), full))
}

fn motionsense(root: &std::path::Path) -> std::result::Result<DatasetSplit, String> {
    ok(motionsense_split(root, AccelChannels::default(), &DEFAULT_TEST_SUBJECTS, false))
}

fn finetuned_rotation(split: &DatasetSplit, epochs: usize, batch: usize, seed: u64) -> std::result::Result<f64, String> {
    let cfg = PretrainConfig {
        epochs,
        batch_size: batch,
        pipeline: ok(TransformPipeline::parse("rotate", seed))?,
        seed,
        ..PretrainConfig::default()
    };
    let record = ok(pretrain_simclr(&ok(unlabeled(&split.train))?, &cfg))?;
    Ok(ok(finetune_eval(&record.params, split, &EvalConfig::new(Protocol::FineTune, seed)))?.f1)
}

fn full_scale(root: &std::path::Path, full: bool) -> Check {
    let split = motionsense(root)?;
    let proxy = finetuned_rotation(&split, 50, 128, 0)?;
    ensure(proxy >= 0.85, || format!("proxy fine-tuned F1 {proxy:.3} < 0.85"))?;
    if !full {
        return Ok(format!("proxy fine-tuned F1 {proxy:.3}; full comparison not requested"));
    }
    let mut ft = Vec::new();
    let mut sup = Vec::new();
    for seed in 0..SEEDS {
        ft.push(finetuned_rotation(&split, 200, 512, seed)?);
        sup.push(ok(supervised_baseline(&ModelConfig::default(), &split, &EvalConfig::new(Protocol::Supervised, seed)))?.f1);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let wins = ft.iter().zip(&sup).filter(|(a, b)| a > b).count();
    let detail = format!("fine-tuned mean {:.3}, supervised mean {:.3}, wins {wins}/5", mean(&ft), mean(&sup));
    ensure((0.90..=0.97).contains(&mean(&ft)) && (0.88..=0.95).contains(&mean(&sup)) && wins >= 3, || detail.clone())?;
    Ok(detail)
}

fn reduced_sweep(root: &std::path::Path) -> Check {
    let split = motionsense(root)?;
    let pretrain = PretrainConfig { epochs: 25, ..PretrainConfig::default() };
    let mut config = SweepConfig::new(pretrain, EvalConfig::new(Protocol::Linear, 0), 0);
    config.runs_per_cell = 1;
    let report = ok(run_sweep(&split, &config, None, false))?;
    let csv = render_csv(&report);
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    ensure(rows.len() == 9 && rows.iter().all(|r| r.split(',').count() == 11), || "malformed CSV".into())?;
    let svg = render_svg(&report);
    ensure(svg.trim_start().starts_with("<svg") && svg.trim_end().ends_with("</svg>"), || "malformed SVG".into())?;
    let spread = report.spread().ok_or("no cell finished")?;
    ensure(spread > 0.05, || format!("spread {spread:.3}"))?;
    Ok(format!("9x10 CSV and SVG written, spread {spread:.3}"))
}

fn run(check: impl FnOnce() -> Check) -> Outcome {
    match check() {
        Ok(m) => Outcome::Pass(m),
        Err(m) => Outcome::Fail(m),
    }
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filters from other targets should not start hours of work.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }

    let criteria: Vec<Criterion> = vec![
        (1, "gradient verification", Box::new(|| run(gradient_verification))),
        (2, "NT-Xent oracle equivalence", Box::new(|| run(nt_xent_oracle_equivalence))),
        (3, "augmentation invariants", Box::new(|| run(augmentation_invariants))),
        (4, "data contract", Box::new(|| run(data_contract))),
        (5, "freezing contracts", Box::new(|| run(freezing_contracts))),
        (6, "contrastive pretraining on synthetic data", Box::new(|| run(contrastive_desk_scale))),
        (7, "supervised baseline on synthetic data", Box::new(|| run(supervised_desk_scale))),
        (8, "MotionSense fine-tuned rotation", Box::new(|| match long_runs() {
            Some((root, full)) => run(|| full_scale(&root, full)),
            None => Outcome::Skip("set CLHAR_MOTIONSENSE and CLHAR_LONG=proxy|full".into()),
        })),
        (9, "MotionSense reduced sweep", Box::new(|| match long_runs() {
            Some((root, _)) => run(|| reduced_sweep(&root)),
            None => Outcome::Skip("set CLHAR_MOTIONSENSE and CLHAR_LONG=proxy|full".into()),
        })),
    ];

    let mut failed = 0;
    for (n, name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Outcome::Pass(m) => println!("criterion {n} {name}: PASS ({m}) [{secs:.1}s]"),
            Outcome::Fail(m) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({m}) [{secs:.1}s]");
            }
            Outcome::Skip(m) => println!("criterion {n} {name}: SKIP ({m})"),
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
