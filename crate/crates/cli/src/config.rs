//! Run configuration: optional TOML config files, flag/file/default
//! precedence, and the resolved-config provenance file written next to every
//! run's outputs.
//!
//! Precedence is strict: a command-line flag beats a config-file key, which
//! beats the built-in default.

use crate::args::CommonArgs;
use lrtabl_core::data::LayoutConfig;
use lrtabl_core::training::{Optimizer, TrainConfig};
use lrtabl_core::{Error, Result};
use lrtabl_core::model::{StructureId, Variant};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Which split `eval` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Val,
    Test,
}

impl EvalSplit {
    pub fn id(self) -> &'static str {
        match self {
            EvalSplit::Train => "train",
            EvalSplit::Val => "val",
            EvalSplit::Test => "test",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "val" => Ok(EvalSplit::Val),
            "test" => Ok(EvalSplit::Test),
            other => Err(Error::ConfigInvalid(format!(
                "unknown eval_split `{other}` (expected train, val, or test)"
            ))),
        }
    }
}

/// Raw config-file contents; every key optional, unknown keys rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub structure: Option<String>,
    pub variant: Option<String>,
    pub rank: Option<usize>,
    pub rank_range: Option<String>,
    pub data: Option<PathBuf>,
    pub layout: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<u32>,
    pub synthetic: Option<bool>,
    pub synthetic_days: Option<u32>,
    pub synthetic_events: Option<usize>,
    pub synthetic_signal: Option<f64>,
    pub optimizer: Option<String>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub adam_epsilon: Option<f64>,
    pub batch_size: Option<usize>,
    pub patience: Option<u32>,
    pub shuffle: Option<bool>,
    pub loss_epsilon: Option<f64>,
    pub val_fraction: Option<f64>,
    pub bench_iterations: Option<usize>,
    pub eval_split: Option<String>,
}

impl FileConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::DataNotFound(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("config file: {e}")))
    }
}

/// Fully resolved run options after applying precedence and validation.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub structure: StructureId,
    pub variant: Variant,
    pub rank: Option<usize>,
    /// Inclusive rank range, when a sweep-style range was given.
    pub rank_range: Option<(usize, usize)>,
    pub data: Option<PathBuf>,
    pub layout: LayoutConfig,
    pub layout_path: Option<PathBuf>,
    pub out: PathBuf,
    pub train: TrainConfig,
    pub synthetic: bool,
    pub synthetic_days: u32,
    pub synthetic_events: usize,
    pub synthetic_signal: f64,
    pub bench_iterations: usize,
    pub eval_split: EvalSplit,
}

/// Merges CLI flags over an optional config file over defaults.
pub fn resolve(args: &CommonArgs) -> Result<Resolved> {
    let file = match &args.config {
        Some(path) => FileConfig::from_file(path)?,
        None => FileConfig::default(),
    };

    let structure = match args.structure.as_deref().or(file.structure.as_deref()) {
        Some(s) => s.parse::<StructureId>()?,
        None => StructureId::A,
    };
    let variant = match args.variant.as_deref().or(file.variant.as_deref()) {
        Some(s) => s.parse::<Variant>()?,
        None => Variant::Full,
    };
    let rank = args.rank.or(file.rank);
    let rank_range = match args.rank_range.as_deref().or(file.rank_range.as_deref()) {
        Some(text) => Some(parse_rank_range(text)?),
        None => None,
    };
    if rank.is_some() && rank_range.is_some() {
        return Err(Error::ConfigInvalid(
            "--rank and --rank-range are mutually exclusive".into(),
        ));
    }

    let data = args
        .data
        .clone()
        .or(file.data)
        .or_else(|| std::env::var_os("LRTABL_DATA").map(PathBuf::from));

    let layout_path = args.layout.clone().or(file.layout);
    let layout = match &layout_path {
        Some(path) => LayoutConfig::from_file(path)?,
        None => LayoutConfig::default(),
    };

    let defaults = TrainConfig::default();
    let train = TrainConfig {
        optimizer: match file.optimizer.as_deref() {
            Some(s) => s.parse::<Optimizer>()?,
            None => defaults.optimizer,
        },
        learning_rate: file.learning_rate.unwrap_or(defaults.learning_rate),
        beta1: file.beta1.unwrap_or(defaults.beta1),
        beta2: file.beta2.unwrap_or(defaults.beta2),
        adam_epsilon: file.adam_epsilon.unwrap_or(defaults.adam_epsilon),
        batch_size: file.batch_size.unwrap_or(defaults.batch_size),
        max_epochs: args.epochs.or(file.epochs).unwrap_or(defaults.max_epochs),
        patience: file.patience.unwrap_or(defaults.patience),
        shuffle: file.shuffle.unwrap_or(defaults.shuffle),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        loss_epsilon: file.loss_epsilon.unwrap_or(defaults.loss_epsilon),
        val_fraction: file.val_fraction.unwrap_or(defaults.val_fraction),
    };
    train.validate()?;

    let bench_iterations = file.bench_iterations.unwrap_or(10_000);
    if bench_iterations < 100 {
        return Err(Error::ConfigInvalid(format!(
            "bench_iterations must be >= 100, got {bench_iterations}"
        )));
    }

    Ok(Resolved {
        structure,
        variant,
        rank,
        rank_range,
        data,
        layout,
        layout_path,
        out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
        train,
        synthetic: args.synthetic || file.synthetic.unwrap_or(false),
        synthetic_days: file.synthetic_days.unwrap_or(10),
        synthetic_events: file.synthetic_events.unwrap_or(2_000),
        synthetic_signal: file.synthetic_signal.unwrap_or(4.0),
        bench_iterations,
        eval_split: match file.eval_split.as_deref() {
            Some(s) => EvalSplit::parse(s)?,
            None => EvalSplit::Test,
        },
    })
}

/// Parses an inclusive `a..b` rank range.
pub fn parse_rank_range(text: &str) -> Result<(usize, usize)> {
    let bad = || {
        Error::ConfigInvalid(format!(
            "bad rank range `{text}` (expected an inclusive range like 1..23)"
        ))
    };
    let (lo, hi) = text.split_once("..").ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo < 1 || hi < lo {
        return Err(bad());
    }
    Ok((lo, hi))
}

impl Resolved {
    /// Serializes the effective configuration for provenance. Written next
    /// to every run's outputs so results stay reproducible.
    pub fn to_provenance_toml(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("structure", format!("\"{}\"", self.structure.id()));
        kv("variant", format!("\"{}\"", self.variant.id()));
        if let Some(k) = self.rank {
            kv("rank", k.to_string());
        }
        if let Some((lo, hi)) = self.rank_range {
            kv("rank_range", format!("\"{lo}..{hi}\""));
        }
        if let Some(data) = &self.data {
            kv("data", format!("{:?}", data.display().to_string()));
        }
        if let Some(layout) = &self.layout_path {
            kv("layout", format!("{:?}", layout.display().to_string()));
        }
        kv("out", format!("{:?}", self.out.display().to_string()));
        kv("seed", self.train.seed.to_string());
        kv("epochs", self.train.max_epochs.to_string());
        kv("synthetic", self.synthetic.to_string());
        kv("synthetic_days", self.synthetic_days.to_string());
        kv("synthetic_events", self.synthetic_events.to_string());
        kv("synthetic_signal", self.synthetic_signal.to_string());
        kv("optimizer", format!("\"{}\"", self.train.optimizer.id()));
        kv("learning_rate", self.train.learning_rate.to_string());
        kv("beta1", self.train.beta1.to_string());
        kv("beta2", self.train.beta2.to_string());
        kv("adam_epsilon", self.train.adam_epsilon.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        kv("patience", self.train.patience.to_string());
        kv("shuffle", self.train.shuffle.to_string());
        kv("loss_epsilon", self.train.loss_epsilon.to_string());
        kv("val_fraction", self.train.val_fraction.to_string());
        kv("bench_iterations", self.bench_iterations.to_string());
        kv("eval_split", format!("\"{}\"", self.eval_split.id()));
        out
    }

    /// The data directory, or a configuration error explaining the options.
    pub fn data_dir(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| {
            Error::ConfigInvalid(
                "no data source: pass --data DIR, set LRTABL_DATA, or use --synthetic".into(),
            )
        })
    }
}
