use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use rbonn_core::bench::{run_case, BENCH_HEADER};
use rbonn_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use rbonn_core::data::{load_cifar10, load_mnist, Dataset, CLASSES};
use rbonn_core::model::Network;
use rbonn_core::report::{distribution_report, REPORT_HEADER};
use rbonn_core::train::{evaluate, StepMetrics, TrainConfig, Trainer, METRICS_HEADER};
use serde::{Deserialize, Serialize};

use crate::config::{locations, resolve, ConfigFile, DatasetKind, HyperArgs, Locations};
use crate::{BenchArgs, EvalArgs, InspectArgs, SweepArgs, TrainArgs};

/// Exit status when some sweep cells failed but the grid completed.
pub const EXIT_PARTIAL: u8 = 1;
/// Exit status for usage, configuration, geometry, data and file errors.
pub const EXIT_USAGE: u8 = 2;
/// Exit status for numerical failures during training.
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug)]
struct SweepFailures(usize);

impl fmt::Display for SweepFailures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} sweep cell(s) failed", self.0)
    }
}

impl std::error::Error for SweepFailures {}

pub fn exit_status(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<SweepFailures>().is_some() {
        return EXIT_PARTIAL;
    }
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<rbonn_core::Error>() {
            return match err {
                rbonn_core::Error::NonFinite { .. } | rbonn_core::Error::Invariant { .. } => EXIT_NUMERIC,
                _ => EXIT_USAGE,
            };
        }
    }
    EXIT_USAGE
}

/// Run metadata stored inside every checkpoint; deterministic so reruns give identical files.
#[derive(Serialize, Deserialize)]
struct RunMeta {
    config: TrainConfig,
    dataset: DatasetKind,
    /// Completed epochs.
    epoch: usize,
    accuracy: f64,
    best_accuracy: f64,
}

#[derive(Serialize)]
struct DatasetInfo {
    kind: DatasetKind,
    path: PathBuf,
    train_samples: usize,
    test_samples: usize,
}

#[derive(Serialize)]
struct Outputs {
    final_checkpoint: PathBuf,
    best_checkpoint: PathBuf,
    manifest: PathBuf,
}

#[derive(Serialize)]
struct Manifest {
    version: &'static str,
    args: Vec<String>,
    started_unix: u64,
    finished_unix: Option<u64>,
    status: String,
    config: TrainConfig,
    dataset: DatasetInfo,
    resumed_from: Option<PathBuf>,
    start_epoch: usize,
    epochs_completed: usize,
    final_accuracy: Option<f64>,
    best_accuracy: Option<f64>,
    outputs: Outputs,
}

impl Manifest {
    fn write(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&self.outputs.manifest, text + "\n")
            .with_context(|| format!("writing {}", self.outputs.manifest.display()))
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn load_file(hyper: &HyperArgs) -> Result<Option<ConfigFile>> {
    hyper.config.as_deref().map(ConfigFile::load).transpose()
}

fn load_data(loc: &Locations) -> Result<(Dataset<f32>, Dataset<f32>)> {
    let (mut train, mut test) = match loc.dataset {
        DatasetKind::Mnist => load_mnist::<f32>(&loc.data)?,
        DatasetKind::Cifar10 => load_cifar10::<f32>(&loc.data)?,
    };
    for (name, limit, set) in [("train", loc.train_limit, &mut train), ("test", loc.test_limit, &mut test)] {
        if let Some(n) = limit {
            if n == 0 {
                bail!("--{name}-limit must be positive");
            }
            *set = set.head(n);
        }
    }
    Ok((train, test))
}

fn check_input(net: &Network<f32>, data: &Dataset<f32>) -> Result<()> {
    if net.input_shape() != data.sample_shape() {
        bail!(
            "checkpoint expects inputs of shape {:?} but the dataset has {:?}",
            net.input_shape(),
            data.sample_shape()
        );
    }
    Ok(())
}

fn read_meta(ckpt: &Checkpoint<f32>, path: &Path) -> Result<RunMeta> {
    let text = ckpt
        .meta
        .as_deref()
        .ok_or_else(|| anyhow!("{} carries no run metadata", path.display()))?;
    serde_json::from_str(text).with_context(|| format!("run metadata in {}", path.display()))
}

fn save(path: &Path, t: &Trainer<f32>, meta: &RunMeta) -> Result<()> {
    let text = serde_json::to_string(meta)?;
    save_checkpoint(path, &t.net, Some(&t.opt), Some(&text)).with_context(|| format!("saving {}", path.display()))
}

/// Writes each step's metrics one step late so the last step of an epoch carries the test accuracy.
struct StepPrinter {
    pending: Option<StepMetrics>,
}

impl StepPrinter {
    fn push(&mut self, m: &StepMetrics) {
        if let Some(p) = self.pending.replace(m.clone()) {
            let _ = writeln!(io::stdout().lock(), "{}", p.tsv(None));
        }
    }

    fn flush(&mut self, accuracy: f64) {
        if let Some(p) = self.pending.take() {
            let _ = writeln!(io::stdout().lock(), "{}", p.tsv(Some(accuracy)));
        }
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let file = load_file(&args.hyper)?;
    let resumed = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint::<f32>(path).with_context(|| format!("loading {}", path.display()))?;
            let meta = read_meta(&ckpt, path)?;
            Some((ckpt, meta))
        }
        None => None,
    };
    let base = resumed.as_ref().map_or_else(TrainConfig::default, |(_, m)| m.config.clone());
    let cfg = resolve(&base, file.as_ref(), &args.hyper)?;
    let default_kind = resumed.as_ref().map_or(DatasetKind::Mnist, |(_, m)| m.dataset);
    let loc = locations(&args.data, file.as_ref(), default_kind)?;
    let out = match (&args.out, file.as_ref().and_then(|f| f.get("out"))) {
        (Some(p), _) => p.clone(),
        (None, Some(s)) => PathBuf::from(s),
        (None, None) => PathBuf::from("run"),
    };
    let (train, test) = load_data(&loc)?;

    let (mut trainer, start_epoch, mut best) = match resumed {
        Some((ckpt, meta)) => {
            if meta.dataset != loc.dataset {
                bail!("checkpoint was trained on {:?}, not {:?}", meta.dataset, loc.dataset);
            }
            check_input(&ckpt.net, &train)?;
            let opt = ckpt
                .optimizer
                .ok_or_else(|| anyhow!("checkpoint has no optimizer state to resume from"))?;
            (
                Trainer::resume(ckpt.net, cfg.clone(), train.len(), opt)?,
                meta.epoch,
                meta.best_accuracy,
            )
        }
        None => {
            let net = Network::bincnn4(train.sample_shape(), CLASSES, cfg.seed)?;
            (Trainer::new(net, cfg.clone(), train.len())?, 0, f64::NEG_INFINITY)
        }
    };

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        args: std::env::args().collect(),
        started_unix: unix_now(),
        finished_unix: None,
        status: "running".into(),
        config: cfg.clone(),
        dataset: DatasetInfo {
            kind: loc.dataset,
            path: loc.data.clone(),
            train_samples: train.len(),
            test_samples: test.len(),
        },
        resumed_from: args.resume.clone(),
        start_epoch,
        epochs_completed: start_epoch,
        final_accuracy: None,
        best_accuracy: best.is_finite().then_some(best),
        outputs: Outputs {
            final_checkpoint: out.join("final.rbon"),
            best_checkpoint: out.join("best.rbon"),
            manifest: out.join("manifest.json"),
        },
    };
    manifest.write()?;
    eprintln!(
        "training {:?} ({} train / {} test) for epochs {}..{}; writing to {}",
        loc.dataset,
        train.len(),
        test.len(),
        start_epoch + 1,
        cfg.epochs,
        out.display()
    );

    let end = args.stop_after.map_or(cfg.epochs, |n| (start_epoch + n).min(cfg.epochs));
    println!("{METRICS_HEADER}");
    let mut printer = StepPrinter { pending: None };
    let mut run = || -> Result<()> {
        for epoch in start_epoch..end {
            let clock = Instant::now();
            let (mean_loss, _) = trainer.train_epoch(&train, epoch, &mut |m| printer.push(m))?;
            let accuracy = evaluate(&trainer.net, &test)?;
            printer.flush(accuracy);
            eprintln!(
                "epoch {}/{}: mean loss {mean_loss:.6}, test accuracy {accuracy:.4} ({:.1}s)",
                epoch + 1,
                cfg.epochs,
                clock.elapsed().as_secs_f64()
            );
            let improved = accuracy > best;
            best = best.max(accuracy);
            let meta = RunMeta {
                config: cfg.clone(),
                dataset: loc.dataset,
                epoch: epoch + 1,
                accuracy,
                best_accuracy: best,
            };
            save(&manifest.outputs.final_checkpoint, &trainer, &meta)?;
            if improved {
                save(&manifest.outputs.best_checkpoint, &trainer, &meta)?;
            }
            manifest.epochs_completed = epoch + 1;
            manifest.final_accuracy = Some(accuracy);
            manifest.best_accuracy = Some(best);
        }
        Ok(())
    };
    let result = run();
    manifest.finished_unix = Some(unix_now());
    manifest.status = match &result {
        Ok(()) if manifest.epochs_completed < cfg.epochs => "stopped".into(),
        Ok(()) => "finished".into(),
        Err(e) => format!("failed: {e:#}"),
    };
    manifest.write()?;
    result
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint::<f32>(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let kind = read_meta(&ckpt, &args.checkpoint).map_or(DatasetKind::Mnist, |m| m.dataset);
    let loc = locations(&args.data, None, kind)?;
    let (_, test) = load_data(&loc)?;
    check_input(&ckpt.net, &test)?;
    let accuracy = evaluate(&ckpt.net, &test)?;
    println!("samples\taccuracy");
    println!("{}\t{accuracy:.4}", test.len());
    Ok(())
}

/// Trains a fresh network with `cfg` and returns its final test accuracy.
fn train_cell(cfg: &TrainConfig, train: &Dataset<f32>, test: &Dataset<f32>) -> Result<f64> {
    let net = Network::bincnn4(train.sample_shape(), CLASSES, cfg.seed)?;
    let mut t = Trainer::new(net, cfg.clone(), train.len())?;
    for epoch in 0..cfg.epochs {
        t.train_epoch(train, epoch, &mut |_| {})?;
    }
    Ok(evaluate(&t.net, test)?)
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    if args.lambdas.is_empty() || args.taus.is_empty() {
        bail!("--lambdas and --taus must be non-empty");
    }
    let file = load_file(&args.hyper)?;
    let base = resolve(&TrainConfig::default(), file.as_ref(), &args.hyper)?;
    let loc = locations(&args.data, file.as_ref(), DatasetKind::Mnist)?;
    let (train, test) = load_data(&loc)?;

    println!("lambda\ttau\taccuracy\tstatus");
    let mut grid = vec![vec![f64::NAN; args.taus.len()]; args.lambdas.len()];
    let mut failures = 0;
    for (i, &lambda) in args.lambdas.iter().enumerate() {
        for (j, &tau) in args.taus.iter().enumerate() {
            let cfg = TrainConfig { lambda, tau, ..base.clone() };
            let clock = Instant::now();
            let outcome = cfg.validate().map_err(anyhow::Error::from).and_then(|()| train_cell(&cfg, &train, &test));
            match outcome {
                Ok(acc) => {
                    grid[i][j] = acc;
                    println!("{lambda:e}\t{tau}\t{acc:.4}\tok");
                }
                Err(e) => {
                    failures += 1;
                    let msg = format!("{e:#}").replace(['\t', '\n'], " ");
                    println!("{lambda:e}\t{tau}\tnan\tfailed: {msg}");
                }
            }
            let _ = io::stdout().flush();
            eprintln!(
                "cell lambda={lambda:e} tau={tau} done in {:.1}s",
                clock.elapsed().as_secs_f64()
            );
        }
    }
    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut text = String::from("lambda\\tau");
        for tau in &args.taus {
            text.push_str(&format!("\t{tau}"));
        }
        text.push('\n');
        for (lambda, row) in args.lambdas.iter().zip(&grid) {
            text.push_str(&format!("{lambda:e}"));
            for acc in row {
                text.push_str(&format!("\t{acc:.4}"));
            }
            text.push('\n');
        }
        let path = out.join("sweep_matrix.tsv");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    if failures > 0 {
        return Err(SweepFailures(failures).into());
    }
    Ok(())
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    if args.sizes.is_empty() {
        bail!("--sizes must name at least one geometry");
    }
    println!("{BENCH_HEADER}");
    for &case in &args.sizes {
        let r = run_case(case, args.reps, args.seed)?;
        println!("{r}");
    }
    Ok(())
}

pub fn inspect(args: &InspectArgs) -> Result<()> {
    let ckpt = load_checkpoint::<f32>(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let report = distribution_report(&ckpt.net);
    match args.layer {
        Some(i) => {
            let layer = report.layer(i).ok_or_else(|| {
                let known: Vec<usize> = report.layers.iter().map(|l| l.layer).collect();
                anyhow!("layer {i} is not a binary convolution (binary layers: {known:?})")
            })?;
            print!("{REPORT_HEADER}\n{layer}");
        }
        None => {
            print!("{report}");
            println!("all\tnear_zero_fraction\t-\t-\t-\t{:.6}", report.near_zero_fraction());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_failures_map_to_their_own_status() {
        let e = anyhow::Error::from(rbonn_core::Error::NonFinite {
            step: 3,
            layer: None,
            detail: "x".into(),
        })
        .context("training");
        assert_eq!(exit_status(&e), EXIT_NUMERIC);
        assert_eq!(exit_status(&anyhow!("bad flag")), EXIT_USAGE);
        assert_eq!(exit_status(&SweepFailures(2).into()), EXIT_PARTIAL);
    }
}
