//! Config resolution: command-line flags over a key=value file over a base config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use rbonn_core::bilinear::Regularizer;
use rbonn_core::binarize::Estimator;
use rbonn_core::train::{LrSchedule, TrainConfig, WeightStep};
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl FromStr for DatasetKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        <Self as ValueEnum>::from_str(s, true).map_err(|_| anyhow!("unknown dataset {s:?} (expected mnist or cifar10)"))
    }
}

/// Training hyper-parameters; every flag is optional so that unset flags fall through.
#[derive(Args, Clone, Debug, Default)]
pub struct HyperArgs {
    /// Flat key=value file; '#' starts a comment. Flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub eta1: Option<f64>,
    #[arg(long)]
    pub eta2: Option<f64>,
    #[arg(long)]
    pub eta3: Option<f64>,
    /// ste or approxsign.
    #[arg(long)]
    pub estimator: Option<Estimator>,
    /// none, l1 or l2.
    #[arg(long)]
    pub regularizer: Option<Regularizer>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// constant or cosine.
    #[arg(long)]
    pub lr_schedule: Option<LrSchedule>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// adam or sgd.
    #[arg(long)]
    pub weight_step: Option<WeightStep>,
    /// Disable the bilinear penalty and backtracking (plain binary network).
    #[arg(long)]
    pub baseline: bool,
    /// Check the DReLU and density structure on every step.
    #[arg(long)]
    pub check_invariants: bool,
    /// Random flips and padded crops on training batches.
    #[arg(long)]
    pub augment: bool,
}

/// Dataset and output locations, also settable from the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct DataArgs {
    /// Directory holding the dataset files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,
    /// Use only the first N training samples.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Use only the first N test samples.
    #[arg(long)]
    pub test_limit: Option<usize>,
}

/// Keys of the config file that are not training hyper-parameters.
const LOCATION_KEYS: [&str; 5] = ["data", "dataset", "out", "train_limit", "test_limit"];

pub struct ConfigFile {
    pub entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key=value, got {line:?}", path.display(), n + 1))?;
            entries.insert(k.trim().replace('-', "_"), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, path)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

fn file_value(key: &str, raw: &str, current: &Value) -> Result<Value> {
    let bad = || anyhow!("config key {key}: cannot parse {raw:?}");
    Ok(match key {
        "estimator" => serde_json::to_value(Estimator::from_str(raw).map_err(|_| bad())?)?,
        "regularizer" => serde_json::to_value(Regularizer::from_str(raw).map_err(|_| bad())?)?,
        "lr_schedule" => serde_json::to_value(LrSchedule::from_str(raw).map_err(|_| bad())?)?,
        "weight_step" => serde_json::to_value(WeightStep::from_str(raw).map_err(|_| bad())?)?,
        _ => match current {
            Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
            Value::Number(n) if n.is_u64() && !raw.contains(['.', 'e', 'E']) => {
                Value::from(raw.parse::<u64>().map_err(|_| bad())?)
            }
            Value::Number(_) => Value::from(raw.parse::<f64>().map_err(|_| bad())?),
            _ => bail!("config key {key} is not settable"),
        },
    })
}

/// Resolves the training config: `base`, then the file, then explicit flags; validates the result.
pub fn resolve(base: &TrainConfig, file: Option<&ConfigFile>, flags: &HyperArgs) -> Result<TrainConfig> {
    let mut obj: Map<String, Value> = match serde_json::to_value(base)? {
        Value::Object(m) => m,
        _ => unreachable!("config serializes to an object"),
    };
    if let Some(file) = file {
        for (k, v) in &file.entries {
            if LOCATION_KEYS.contains(&k.as_str()) {
                continue;
            }
            let key = if k == "baseline" { "recurrent" } else { k.as_str() };
            let current = obj.get(key).ok_or_else(|| anyhow!("unknown config key {k:?}"))?;
            let mut value = file_value(key, v, current)?;
            if k == "baseline" {
                value = Value::Bool(!value.as_bool().unwrap_or(false));
            }
            obj.insert(key.to_string(), value);
        }
    }
    let mut set = |k: &str, v: Value| {
        obj.insert(k.to_string(), v);
    };
    let f = flags;
    for (k, v) in [
        ("lambda", f.lambda),
        ("tau", f.tau),
        ("eta1", f.eta1),
        ("eta2", f.eta2),
        ("eta3", f.eta3),
        ("weight_decay", f.weight_decay),
    ] {
        if let Some(v) = v {
            set(k, Value::from(v));
        }
    }
    for (k, v) in [("epochs", f.epochs), ("batch_size", f.batch_size)] {
        if let Some(v) = v {
            set(k, Value::from(v));
        }
    }
    if let Some(v) = f.seed {
        set("seed", Value::from(v));
    }
    if let Some(v) = f.estimator {
        set("estimator", serde_json::to_value(v)?);
    }
    if let Some(v) = f.regularizer {
        set("regularizer", serde_json::to_value(v)?);
    }
    if let Some(v) = f.lr_schedule {
        set("lr_schedule", serde_json::to_value(v)?);
    }
    if let Some(v) = f.weight_step {
        set("weight_step", serde_json::to_value(v)?);
    }
    if f.baseline {
        set("recurrent", Value::Bool(false));
    }
    if f.check_invariants {
        set("check_invariants", Value::Bool(true));
    }
    if f.augment {
        set("augment", Value::Bool(true));
    }
    let cfg: TrainConfig = serde_json::from_value(Value::Object(obj)).context("resolving config")?;
    cfg.validate()?;
    Ok(cfg)
}

/// Dataset and output settings after merging flags with the config file.
pub struct Locations {
    pub data: PathBuf,
    pub dataset: DatasetKind,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

/// `default_dataset` applies when neither the flags nor the file name one.
pub fn locations(args: &DataArgs, file: Option<&ConfigFile>, default_dataset: DatasetKind) -> Result<Locations> {
    let from_file = |k: &str| file.and_then(|f| f.get(k));
    let limit = |flag: Option<usize>, key: &str| -> Result<Option<usize>> {
        match (flag, from_file(key)) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(s)) => Ok(Some(s.parse().map_err(|_| anyhow!("config key {key}: cannot parse {s:?}"))?)),
            (None, None) => Ok(None),
        }
    };
    let data = match (&args.data, from_file("data")) {
        (Some(p), _) => p.clone(),
        (None, Some(s)) => PathBuf::from(s),
        (None, None) => bail!("--data is required"),
    };
    let dataset = match (args.dataset, from_file("dataset")) {
        (Some(d), _) => d,
        (None, Some(s)) => s.parse()?,
        (None, None) => default_dataset,
    };
    Ok(Locations {
        data,
        dataset,
        train_limit: limit(args.train_limit, "train_limit")?,
        test_limit: limit(args.test_limit, "test_limit")?,
    })
}
