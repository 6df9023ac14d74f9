use std::fmt::Write as _;
use std::path::Path;

use clhar::data::{motionsense_split, split_by_subject, synth_dataset, DatasetSplit};
use clhar::record::file_stem;
use clhar::sweep::{run_sweep, write_report, ReportFormat, SweepConfig};
use clhar::train::{evaluate, pretrain_simclr, supervised_baseline, unlabeled, Protocol};
use clhar::verify::{run_verification, Kernel, VerifyOptions};
use clhar::{Error, Result};

use crate::config::{DataSource, ExperimentConfig, Resolved};

fn load_split(r: &Resolved) -> Result<DatasetSplit> {
    match &r.source {
        DataSource::Synthetic { per_class, classes, seed } => {
            let w = synth_dataset(*per_class, *classes, *seed)?;
            split_by_subject(w, &r.test_subjects)
        }
        DataSource::MotionSense { root, channels, standardize } => {
            motionsense_split(root, *channels, &r.test_subjects, *standardize)
        }
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn run(config: &ExperimentConfig) -> Result<u8> {
    let r = config.resolve()?;
    let split = load_split(&r)?;
    create_dir(&r.out)?;
    let spec = r.pretrain.pipeline.spec();
    let stem = file_stem(&spec, r.protocol.name(), config.seed);
    log::info!(
        "{} train / {} test windows, pipeline {spec}, protocol {}",
        split.train.len(),
        split.test.len(),
        r.protocol
    );
    let ev = if r.protocol == Protocol::Supervised {
        supervised_baseline(&r.pretrain.model, &split, &r.eval)?
    } else {
        let rec = pretrain_simclr(&unlabeled(&split.train)?, &r.pretrain)?;
        rec.save(&r.out, &format!("{stem}_pretrain"))?;
        evaluate(&rec.params, &split, &r.eval)?
    };
    ev.record.save(&r.out, &stem)?;
    ev.confusion.save_csv(&r.out.join(format!("{stem}_confusion.csv")))?;

    let mut summary = String::new();
    let _ = writeln!(summary, "weighted_f1={}", ev.f1);
    let _ = writeln!(summary, "protocol={}", r.protocol);
    let _ = writeln!(summary, "pipeline={spec}");
    let _ = writeln!(summary, "seed={}", config.seed);
    let _ = writeln!(summary, "train_windows={}", split.train.len());
    let _ = writeln!(summary, "test_windows={}", split.test.len());
    let path = r.out.join(format!("{stem}_summary.txt"));
    write(&path, &summary)?;
    println!("weighted F1 {:.4} ({})", ev.f1, path.display());
    Ok(0)
}

pub fn sweep(config: &ExperimentConfig, resume: bool) -> Result<u8> {
    let r = config.resolve()?;
    if r.protocol == Protocol::Supervised {
        return Err(Error::Parameter("sweep needs protocol linear or finetune".into()));
    }
    let cfg = SweepConfig {
        kinds: r.grid.clone(),
        runs_per_cell: r.runs_per_cell,
        pretrain: r.pretrain.clone(),
        eval: r.eval.clone(),
        base_seed: config.seed,
        jobs: r.jobs,
    };
    cfg.validate()?;
    let k = cfg.kinds.len();
    println!(
        "grid {k}x{k} = {} cells x {} runs = {} planned runs",
        k * k,
        cfg.runs_per_cell,
        cfg.planned_runs()
    );
    let split = load_split(&r)?;
    let dir = r.out.join(format!("sweep_{}_seed{}", r.protocol, config.seed));
    create_dir(&dir)?;
    let report = run_sweep(&split, &cfg, Some(&dir.join("runs")), resume)?;
    write_report(&report, ReportFormat::Csv, &dir.join("report.csv"))?;
    write_report(&report, ReportFormat::SvgHeatmap, &dir.join("heatmap.svg"))?;

    let mut summary = String::new();
    for (key, v) in &report.config {
        let _ = writeln!(summary, "config.{key}={v}");
    }
    let _ = writeln!(summary, "failed_cells={}", report.failed_cells());
    if let Some(s) = report.spread() {
        let _ = writeln!(summary, "spread={s}");
    }
    for c in report.cells.iter().filter(|c| c.degenerate()) {
        let _ = writeln!(summary, "degenerate_cell={},{}", c.first, c.second);
    }
    write(&dir.join("summary.txt"), &summary)?;
    if report.failed_cells() > 0 {
        eprintln!("warning: {} cell(s) failed and are reported as NA", report.failed_cells());
    }
    println!("report written to {}", dir.display());
    Ok(0)
}

pub fn gradcheck(instances: usize, tolerance: f64, fault: Option<&str>) -> Result<u8> {
    let opts = VerifyOptions {
        instances,
        tolerance,
        fault: fault.map(str::parse::<Kernel>).transpose()?,
        ..VerifyOptions::default()
    };
    let report = run_verification(&opts)?;
    println!("{:<32} {:>14} {:>8}  status", "kernel", "max_rel_error", "coords");
    for k in &report.kernels {
        println!(
            "{:<32} {:>14.3e} {:>8}  {}",
            k.kernel.name(),
            k.max_rel_error,
            k.coordinates,
            if k.passed { "ok" } else { "FAIL" }
        );
    }
    if report.passed() {
        println!("all kernels below {tolerance:e}");
        Ok(0)
    } else {
        println!("gradient check failed");
        Ok(1)
    }
}
