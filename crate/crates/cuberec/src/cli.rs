//! Batch front end: prepare / train / evaluate / ablate / sweep.
//!
//! Every hyperparameter has a documented default, can be set in a
//! line-oriented `key=value` config file, and can be overridden by a CLI
//! flag; flags win over the file, the file wins over defaults. All
//! randomness funnels through the single `seed` field.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    load_dataset, load_prepared, save_prepared, split_group_interactions, DatasetStats, Split,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, run_ablation, AblationToggle, MetricReport};
use crate::trainer::{load_checkpoint, train, TrainConfig, TrainReport};

/// Resolved run configuration: paths, hyperparameters, evaluation Ks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Checkpoint to evaluate; defaults to `<out_dir>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
    pub train: TrainConfig,
    pub ks: Vec<usize>,
    pub split: (f64, f64, f64),
    pub threads: usize,
    pub buckets: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            train: TrainConfig::default(),
            ks: vec![10, 20],
            split: (0.8, 0.1, 0.1),
            threads: 0,
            buckets: false,
        }
    }
}

/// Flag-level overrides; `None` means "not given on the command line".
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub variant: Option<String>,
    pub d: Option<usize>,
    pub layers: Option<usize>,
    pub gamma: Option<f64>,
    pub mu: Option<f64>,
    pub lambda: Option<f64>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub negatives: Option<usize>,
    pub rho: Option<f64>,
    pub dropout: Option<f64>,
    pub epochs: Option<String>,
    pub seed: Option<u64>,
    pub k: Option<String>,
    pub threads: Option<usize>,
    pub remove_sr: bool,
    pub point_distance: bool,
    pub buckets: bool,
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Validation(format!("config key {key}: cannot parse {value:?}")))
}

fn parse_epochs(value: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::Validation(format!(
            "epochs must be `<pretrain>,<stage2>`, got {value:?}"
        )));
    }
    Ok((
        parse_as("epochs", parts[0].trim())?,
        parse_as("epochs", parts[1].trim())?,
    ))
}

fn parse_ks(value: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = value
        .split(',')
        .map(|p| parse_as("k", p.trim()))
        .collect::<Result<_>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Validation("k values must be >= 1".into()));
    }
    Ok(ks)
}

fn parse_split(value: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|p| parse_as("split", p.trim()))
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        return Err(Error::Validation(format!(
            "split must be `train,val,test`, got {value:?}"
        )));
    }
    Ok((parts[0], parts[1], parts[2]))
}

impl RunConfig {
    /// Apply one config-file entry. Unknown keys are errors so that typos
    /// do not silently fall back to defaults.
    fn apply_entry(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "variant" => self.train.variant = value.parse()?,
            "d" => self.train.dim = parse_as(key, value)?,
            "layers" => self.train.layers = parse_as(key, value)?,
            "gamma" => self.train.gamma = parse_as(key, value)?,
            "mu" => self.train.mu = parse_as(key, value)?,
            "lambda" => {
                let m: f64 = parse_as(key, value)?;
                self.train.margin_user = m;
                self.train.margin_group = m;
                self.train.margin_ssl = m;
            }
            "lr" => self.train.lr = parse_as(key, value)?,
            "batch" => self.train.batch_size = parse_as(key, value)?,
            "negatives" => self.train.negatives = parse_as(key, value)?,
            "rho" => self.train.rho = parse_as(key, value)?,
            "dropout" => self.train.dropout = parse_as(key, value)?,
            "epochs" => {
                let (pre, stage2) = parse_epochs(value)?;
                self.train.pretrain_epochs = pre;
                self.train.stage2_epochs = stage2;
            }
            "seed" => self.train.seed = parse_as(key, value)?,
            "k" => self.ks = parse_ks(value)?,
            "split" => self.split = parse_split(value)?,
            "threads" => self.threads = parse_as(key, value)?,
            "remove_sr" => self.train.use_social = !parse_as::<bool>(key, value)?,
            "point_distance" => self.train.point_distance = parse_as(key, value)?,
            "buckets" => self.buckets = parse_as(key, value)?,
            other => {
                return Err(Error::Validation(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Defaults, overlaid by the config file (if any), overlaid by flags.
    pub fn resolve(config_path: Option<&Path>, flags: &Overrides) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = config_path {
            let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (lineno, line) in body.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(Error::Parse {
                        file: path.display().to_string(),
                        line: lineno + 1,
                        msg: format!("expected key=value, got {line:?}"),
                    });
                };
                cfg.apply_entry(key.trim(), value.trim())?;
            }
        }

        if let Some(v) = &flags.data_dir {
            cfg.data_dir = v.clone();
        }
        if let Some(v) = &flags.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = &flags.checkpoint {
            cfg.checkpoint = Some(v.clone());
        }
        if let Some(v) = &flags.variant {
            cfg.train.variant = v.parse()?;
        }
        if let Some(v) = flags.d {
            cfg.train.dim = v;
        }
        if let Some(v) = flags.layers {
            cfg.train.layers = v;
        }
        if let Some(v) = flags.gamma {
            cfg.train.gamma = v;
        }
        if let Some(v) = flags.mu {
            cfg.train.mu = v;
        }
        if let Some(v) = flags.lambda {
            cfg.train.margin_user = v;
            cfg.train.margin_group = v;
            cfg.train.margin_ssl = v;
        }
        if let Some(v) = flags.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = flags.batch {
            cfg.train.batch_size = v;
        }
        if let Some(v) = flags.negatives {
            cfg.train.negatives = v;
        }
        if let Some(v) = flags.rho {
            cfg.train.rho = v;
        }
        if let Some(v) = flags.dropout {
            cfg.train.dropout = v;
        }
        if let Some(v) = &flags.epochs {
            let (pre, stage2) = parse_epochs(v)?;
            cfg.train.pretrain_epochs = pre;
            cfg.train.stage2_epochs = stage2;
        }
        if let Some(v) = flags.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = &flags.k {
            cfg.ks = parse_ks(v)?;
        }
        if let Some(v) = flags.threads {
            cfg.threads = v;
        }
        if flags.remove_sr {
            cfg.train.use_social = false;
        }
        if flags.point_distance {
            cfg.train.point_distance = true;
        }
        if flags.buckets {
            cfg.buckets = true;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("checkpoint.json"))
    }
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Validate, re-index, split, and write the canonical dataset directory plus
/// a statistics table.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<DatasetStats> {
    let social_path = cfg.data_dir.join("social.tsv");
    let social = if social_path.exists() {
        Some(social_path)
    } else if cfg.train.use_social {
        return Err(Error::Validation(format!(
            "{} not found: provide the social-edge file or pass --remove-sr to run without it",
            social_path.display()
        )));
    } else {
        None
    };
    let ds = load_dataset(
        &cfg.data_dir.join("user_item.tsv"),
        &cfg.data_dir.join("group_members.tsv"),
        &cfg.data_dir.join("group_item.tsv"),
        social.as_deref(),
    )?;
    let ds = split_group_interactions(&ds, cfg.split, cfg.train.seed)?;
    ensure_out_dir(cfg)?;
    save_prepared(&ds, &cfg.out_dir)?;

    let stats = DatasetStats::of(&ds);
    let mut table = String::new();
    for (name, value) in stats.rows() {
        table.push_str(&format!("{name}\t{value}\n"));
    }
    write_text(&cfg.out_dir.join("stats.tsv"), &table)?;
    print!("{table}");
    Ok(stats)
}

/// Run both training stages and write the checkpoint plus a per-epoch loss
/// report.
pub fn cmd_train(cfg: &RunConfig) -> Result<(PathBuf, TrainReport)> {
    let ds = load_prepared(&cfg.data_dir)?;
    ensure_out_dir(cfg)?;
    let (_, report) = train(&ds, &cfg.train, Some(&cfg.out_dir))?;

    let mut csv = String::from("stage,epoch,group_loss,ssl_loss,combined_loss,val_recall@10\n");
    for row in &report.pretrain {
        csv.push_str(&format!("pretrain,{},,,{:.6},\n", row.epoch, row.loss));
        println!("pretrain epoch {:>4}  loss {:.6}", row.epoch, row.loss);
    }
    for row in &report.stage2 {
        let val = row
            .val_recall_at_10
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        csv.push_str(&format!(
            "stage2,{},{:.6},{:.6},{:.6},{}\n",
            row.epoch, row.group_loss, row.ssl_loss, row.combined_loss, val
        ));
        println!(
            "stage2   epoch {:>4}  group {:.6}  ssl {:.6}  combined {:.6}  val@10 {}",
            row.epoch, row.group_loss, row.ssl_loss, row.combined_loss, val
        );
    }
    write_text(&cfg.out_dir.join("train_report.csv"), &csv)?;
    let checkpoint = report
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("checkpoint.json"));
    Ok((checkpoint, report))
}

/// Evaluate a checkpoint on the test split; writes table and CSV reports.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<(PathBuf, MetricReport)> {
    let ds = load_prepared(&cfg.data_dir)?;
    let ckpt_path = cfg.checkpoint_path();
    if !ckpt_path.exists() {
        return Err(Error::Validation(format!(
            "checkpoint {} does not exist; run `cuberec train` first",
            ckpt_path.display()
        )));
    }
    let mut model = load_checkpoint(&ckpt_path)?.params;
    // Evaluation-time scorer override.
    if cfg.train.point_distance {
        model.config.point_distance = true;
    }
    let report = evaluate(&model, &ds, &cfg.ks, Split::Test)?;
    ensure_out_dir(cfg)?;
    let variant = model.config.variant.to_string();
    let csv_path = cfg.out_dir.join("metrics.csv");
    write_text(&csv_path, &report.to_csv(&variant, cfg.buckets))?;
    let table = report.to_table(&variant, cfg.buckets);
    write_text(&cfg.out_dir.join("metrics.txt"), &table)?;
    print!("{table}");
    Ok((csv_path, report))
}

/// Train and evaluate the default plus one variant per toggle, same seed.
pub fn cmd_ablate(cfg: &RunConfig, toggles: &[AblationToggle]) -> Result<PathBuf> {
    let ds = load_prepared(&cfg.data_dir)?;
    let reports = run_ablation(&ds, &cfg.train, toggles, &cfg.ks)?;
    ensure_out_dir(cfg)?;
    let mut csv = String::from("variant,k,metric,bucket,value,n_groups\n");
    for (name, report) in &reports {
        let body = report.to_csv(name, cfg.buckets);
        csv.push_str(body.split_once('\n').map(|x| x.1).unwrap_or(""));
        print!("{}", report.to_table(name, false));
    }
    let path = cfg.out_dir.join("ablation.csv");
    write_text(&path, &csv)?;
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Dim,
    Gamma,
    Mu,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<SweepParam> {
        match s {
            "d" | "dim" => Ok(SweepParam::Dim),
            "gamma" => Ok(SweepParam::Gamma),
            "mu" => Ok(SweepParam::Mu),
            other => Err(Error::Validation(format!(
                "unknown sweep parameter {other:?}; expected d, gamma, or mu"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Dim => "d",
            SweepParam::Gamma => "gamma",
            SweepParam::Mu => "mu",
        }
    }

    /// Standard search grids.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParam::Dim => vec![16.0, 32.0, 64.0, 128.0, 256.0],
            SweepParam::Gamma | SweepParam::Mu => vec![0.1, 0.3, 0.5, 0.7, 0.9],
        }
    }

    fn apply(self, cfg: &mut TrainConfig, value: f64) {
        match self {
            SweepParam::Dim => cfg.dim = value as usize,
            SweepParam::Gamma => cfg.gamma = value,
            SweepParam::Mu => cfg.mu = value,
        }
    }

    fn format_value(self, value: f64) -> String {
        match self {
            SweepParam::Dim => format!("{}", value as usize),
            _ => format!("{value}"),
        }
    }
}

/// Sweep one hyperparameter over a value list, training and evaluating each
/// setting. Results append to `sweep.csv`; settings with a row already on
/// disk are skipped, so an interrupted sweep resumes where it stopped.
pub fn cmd_sweep(cfg: &RunConfig, param: SweepParam, values: Option<Vec<f64>>) -> Result<PathBuf> {
    let ds = load_prepared(&cfg.data_dir)?;
    ensure_out_dir(cfg)?;
    let path = cfg.out_dir.join("sweep.csv");

    let mut header = String::from("param,value");
    for k in &cfg.ks {
        header.push_str(&format!(",recall@{k},ndcg@{k}"));
    }
    header.push('\n');

    let mut existing: HashMap<(String, String), String> = HashMap::new();
    if path.exists() {
        let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        for line in body.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() >= 2 {
                existing.insert(
                    (fields[0].to_string(), fields[1].to_string()),
                    line.to_string(),
                );
            }
        }
    }

    let values = values.unwrap_or_else(|| param.default_values());
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let value_str = param.format_value(value);
        let key = (param.name().to_string(), value_str.clone());
        if let Some(row) = existing.get(&key) {
            println!("sweep {}={} already done, skipping", param.name(), value_str);
            rows.push(row.clone());
            continue;
        }
        let mut train_cfg = cfg.train.clone();
        param.apply(&mut train_cfg, value);
        let (model, _) = train(&ds, &train_cfg, None)?;
        let report = evaluate(&model, &ds, &cfg.ks, Split::Test)?;
        let mut row = format!("{},{}", param.name(), value_str);
        for entry in &report.overall {
            row.push_str(&format!(",{:.6},{:.6}", entry.recall, entry.ndcg));
        }
        println!("sweep {row}");
        rows.push(row);
    }

    let mut body = header;
    for row in &rows {
        body.push_str(row);
        body.push('\n');
    }
    write_text(&path, &body)?;
    Ok(path)
}
