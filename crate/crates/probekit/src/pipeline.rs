//! Command implementations behind the CLI: each produces or consumes a run
//! directory (config.json, checkpoint.json, metrics.json, train_log.csv and,
//! for all-strategy runs, layer_weights.csv).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bank::{synth_bank, validate_bank, EmbeddingBank, SynthSpec};
use crate::error::{Error, Result};
use crate::gradcheck::run_suite;
use crate::metrics::{evaluate, EvalReport};
use crate::model::{init_probe, HeadKind, ProbeModel, Strategy};
use crate::rng::Rng;
use crate::train::{self, checkpoint, restore, RunState, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfigDoc {
    pub strategy: Strategy,
    pub head: HeadKind,
    #[serde(flatten)]
    pub train: TrainConfig,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn cmd_synth(spec_path: &Path, out: &Path) -> Result<()> {
    let raw = fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec: SynthSpec =
        serde_json::from_str(&raw).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    synth_bank(&spec, out)?;
    let violations = validate_bank(out);
    if !violations.is_empty() {
        return Err(Error::InvalidManifest {
            path: out.into(),
            detail: violations.join("; "),
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub bank: PathBuf,
    pub strategy: Strategy,
    pub head: HeadKind,
    pub epochs: Option<usize>,
    pub warmup_epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub weight_decay: Option<f64>,
    pub dropout: Option<f64>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn resolved_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.warmup_epochs {
            cfg.warmup_epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.peak_lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout_p = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.resolved_config();
    cfg.validate()?;
    let bank = EmbeddingBank::open(&args.bank)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let config_doc = RunConfigDoc {
        strategy: args.strategy,
        head: args.head,
        train: cfg.clone(),
    };
    write_json(&config_doc, &args.out.join("config.json"))?;

    let mut rng = Rng::from_seed(cfg.seed);
    let model = init_probe(
        &bank.manifest().layers,
        args.strategy,
        args.head,
        bank.manifest().num_classes,
        cfg.dropout_p,
        &mut rng,
    )?;
    let mut run = RunState::new(model, rng, cfg);
    train::train(&bank, &mut run)?;

    checkpoint(&run, &args.out.join("checkpoint.json"))?;
    write_train_log(&run, &args.out.join("train_log.csv"))?;
    let report = evaluate(&bank, &run.model)?;
    write_json(&report, &args.out.join("metrics.json"))?;
    if args.strategy == Strategy::All {
        write_layer_weights(&run.model, &args.out.join("layer_weights.csv"))?;
    }
    Ok(())
}

fn write_train_log(run: &RunState, path: &Path) -> Result<()> {
    let mut csv = String::from("epoch,lr,mean_loss\n");
    for rec in &run.history {
        writeln!(csv, "{},{},{}", rec.epoch, rec.lr, rec.mean_loss).expect("string write");
    }
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}

fn write_layer_weights(model: &ProbeModel, path: &Path) -> Result<()> {
    let alpha = model.alpha().ok_or_else(|| {
        Error::Incompatible("layer weights exist only for all-strategy runs".into())
    })?;
    let mut csv = String::from("layer_index,layer_name,alpha\n");
    for (l, spec) in model.layers.iter().enumerate() {
        writeln!(csv, "{},{},{}", l, spec.name, alpha.data()[l]).expect("string write");
    }
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}

fn load_run(run_dir: &Path) -> Result<RunState> {
    restore(&run_dir.join("checkpoint.json"))
}

pub fn cmd_eval(run_dir: &Path, bank_dir: &Path) -> Result<EvalReport> {
    let run = load_run(run_dir)?;
    let bank = EmbeddingBank::open(bank_dir)?;
    train::check_compatible(&bank, &run.model)?;
    let report = evaluate(&bank, &run.model)?;
    write_json(&report, &run_dir.join("metrics.json"))?;
    Ok(report)
}

pub fn cmd_export_weights(run_dir: &Path) -> Result<()> {
    let run = load_run(run_dir)?;
    if run.model.strategy == Strategy::Last {
        return Err(Error::Incompatible(
            "this run used last-layer probing; layer weights exist only for --strategy all".into(),
        ));
    }
    write_layer_weights(&run.model, &run_dir.join("layer_weights.csv"))
}

/// Runs the finite-difference suite, printing the worst relative error per
/// component. Returns true iff every component passes its threshold.
pub fn cmd_gradcheck(out: &mut dyn std::io::Write) -> Result<bool> {
    let reports = run_suite()?;
    let mut ok = true;
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        writeln!(
            out,
            "{status} {:<22} max rel err {:.3e} (threshold {:.0e})",
            r.name, r.max_rel_err, r.threshold
        )
        .map_err(|e| Error::io("<stdout>", e))?;
        ok &= r.passed();
    }
    Ok(ok)
}
