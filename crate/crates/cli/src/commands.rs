use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use srforge_core::datagen::{build_corpus, build_skeleton_bank, read_corpus, write_corpus, GenerationConfig, N_COLS};
use srforge_core::evalbench::{evaluate_directory, parse_table, EvalProtocolConfig, ModelPredictor, OraclePredictor, Predictor, TargetColumn};
use srforge_core::expr::{print_infix, TokenSequence, MAX_VARIABLES};
use srforge_core::model::{count_params as count, EncoderKind, Model, ModelConfig, ModelError};
use srforge_core::train::{write_metrics_csv, MetricsRecord, TrainConfig, Trainer};
use srforge_core::treedist::{normalized_ted, ted as edit_distance};

use crate::config::{usage, RunConfig};

const CHECKPOINT: &str = "model.ckpt";
const METRICS: &str = "metrics.csv";

type Defaults = Vec<(&'static str, String)>;

fn common(seed: bool) -> Defaults {
    let mut d = vec![("threads", "1".to_string())];
    if seed {
        d.push(("seed", "0".into()));
    }
    d
}

fn s(v: impl ToString) -> String {
    v.to_string()
}

pub fn generate_defaults(_: &BTreeMap<String, String>) -> Defaults {
    let g = GenerationConfig::default();
    let mut d = common(true);
    d.extend([
        ("out", String::new()),
        ("n_raw", s(10_000)),
        ("n_realizations", s(10)),
        ("max_tokens", s(g.max_tokens)),
        ("y_cap", s(g.y_cap)),
    ]);
    d
}

/// Model keys and batch size of a profile.
fn profile_defaults(given: &BTreeMap<String, String>, default: &str) -> Defaults {
    let profile = given.get("profile").map(String::as_str).unwrap_or(default);
    let (m, batch) = match profile {
        "paper" => (ModelConfig::default(), 1024),
        _ => (ModelConfig::desk(), 64),
    };
    vec![
        ("profile", default.to_string()),
        ("d_model", s(m.d_model)),
        ("n_enc", s(m.n_enc)),
        ("n_dec", s(m.n_dec)),
        ("heads", s(m.heads)),
        ("p_drop", s(m.p_drop)),
        ("batch_size", s(batch)),
    ]
}

pub fn train_defaults(given: &BTreeMap<String, String>) -> Defaults {
    let t = TrainConfig::default();
    let mut d = common(true);
    d.extend(profile_defaults(given, "desk"));
    d.extend([
        ("corpus", String::new()),
        ("out", String::new()),
        ("encoder", s(EncoderKind::Mlp)),
        ("label_smoothing", s(t.label_smoothing)),
        ("epochs", s(t.epochs)),
        ("warmup_steps", s(t.warmup_steps)),
        ("lr_scale", s(t.lr_scale)),
        ("max_steps", s("none")),
        ("resume", s(false)),
    ]);
    d
}

pub fn predict_defaults(_: &BTreeMap<String, String>) -> Defaults {
    let mut d = common(false);
    d.extend([
        ("checkpoint", String::new()),
        ("input", String::new()),
        ("target", s("last")),
        ("beam", s(1)),
    ]);
    d
}

pub fn evaluate_defaults(_: &BTreeMap<String, String>) -> Defaults {
    let p = EvalProtocolConfig::default();
    let mut d = common(true);
    d.extend([
        ("checkpoint", String::new()),
        ("problems", String::new()),
        ("out", String::new()),
        ("oracle", s(false)),
        ("repeats", s(p.repeats)),
        ("n_obs", s(p.n_obs)),
        ("target", s("last")),
    ]);
    d
}

pub fn count_defaults(given: &BTreeMap<String, String>) -> Defaults {
    let mut d = common(false);
    d.extend(profile_defaults(given, "paper").into_iter().filter(|(k, _)| !matches!(*k, "p_drop" | "batch_size")));
    d
}

fn check_profile(cfg: &RunConfig) -> anyhow::Result<()> {
    match cfg.raw("profile") {
        "desk" | "paper" => Ok(()),
        other => Err(usage(format!("profile must be desk or paper, not `{other}`"))),
    }
}

fn model_config(cfg: &RunConfig, encoder: EncoderKind) -> anyhow::Result<ModelConfig> {
    check_profile(cfg)?;
    let mut m = ModelConfig {
        d_model: cfg.get("d_model")?,
        n_enc: cfg.get("n_enc")?,
        n_dec: cfg.get("n_dec")?,
        heads: cfg.get("heads")?,
        ..ModelConfig::default()
    }
    .with_encoder(encoder);
    if let Some(p) = cfg.raw_opt("p_drop") {
        m.p_drop = p.parse().map_err(|e| usage(format!("p_drop = `{p}`: {e}")))?;
    }
    m.validate()?;
    Ok(m)
}

fn target_column(cfg: &RunConfig) -> anyhow::Result<TargetColumn> {
    match cfg.raw("target") {
        "last" => Ok(TargetColumn::Last),
        t => match t.parse::<usize>() {
            Ok(i) if i >= 1 => Ok(TargetColumn::Index(i - 1)),
            _ => Err(usage(format!("target must be `last` or a 1-based column, not `{t}`"))),
        },
    }
}

pub fn generate(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = PathBuf::from(cfg.required("out")?);
    let gen = GenerationConfig {
        n_raw_samples: cfg.get("n_raw")?,
        n_realizations: cfg.get("n_realizations")?,
        max_tokens: cfg.get("max_tokens")?,
        y_cap: cfg.get("y_cap")?,
        seed: cfg.get("seed")?,
        ..GenerationConfig::default()
    };
    let bank = build_skeleton_bank(&gen)?;
    let (corpus, stats) = build_corpus(&bank.skeletons, &gen)?;
    write_corpus(&corpus, &out).with_context(|| format!("writing corpus to {}", out.display()))?;
    cfg.save_in(&out)?;
    let b = &bank.stats;
    println!("raw       {}", b.raw);
    println!("valid     {}", b.valid);
    println!("unique    {}", b.unique);
    println!("realized  {}", stats.realized);
    log::info!(
        "rejected: single leaf {}, no constant {}, no variable {}, too long {}, domain {}, magnitude {}",
        b.single_leaf,
        b.no_constant,
        b.no_variable,
        b.too_long,
        stats.rejected_domain,
        stats.rejected_magnitude
    );
    Ok(())
}

fn append_metrics(path: &Path, records: &[MetricsRecord], previous: &[MetricsRecord]) -> std::io::Result<()> {
    let mut all = previous.to_vec();
    all.extend_from_slice(records);
    write_metrics_csv(&all, path)
}

fn read_metrics(path: &Path) -> anyhow::Result<Vec<MetricsRecord>> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || anyhow::anyhow!("{}: malformed line `{line}`", path.display());
        if f.len() != 4 {
            return Err(bad());
        }
        out.push(MetricsRecord {
            epoch: f[0].parse().map_err(|_| bad())?,
            split: f[1].to_string(),
            loss: f[2].parse().map_err(|_| bad())?,
            accuracy: f[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

pub fn train(cfg: &RunConfig) -> anyhow::Result<()> {
    let corpus_dir = PathBuf::from(cfg.required("corpus")?);
    let out = PathBuf::from(cfg.required("out")?);
    let encoder: EncoderKind = cfg.get("encoder")?;
    let label_smoothing: f64 = cfg.get("label_smoothing")?;
    if ![0.0, 0.1].contains(&label_smoothing) {
        log::warn!("label smoothing {label_smoothing} is neither 0 nor 0.1");
    }
    let seed: u64 = cfg.get("seed")?;
    let tc = TrainConfig {
        batch_size: cfg.get("batch_size")?,
        epochs: cfg.get("epochs")?,
        label_smoothing,
        seed,
        warmup_steps: cfg.get("warmup_steps")?,
        lr_scale: cfg.get("lr_scale")?,
        max_steps: cfg.get_opt("max_steps")?,
    };
    let wanted = model_config(cfg, encoder)?;
    let corpus = read_corpus(&corpus_dir).with_context(|| format!("reading corpus {}", corpus_dir.display()))?;
    fs::create_dir_all(&out)?;
    let ckpt = out.join(CHECKPOINT);
    let metrics = out.join(METRICS);
    let (model, previous) = if cfg.get::<bool>("resume")? {
        let model = Model::<f32>::load(&ckpt).with_context(|| format!("resuming from {}", ckpt.display()))?;
        if *model.config() != wanted {
            return Err(usage(format!(
                "checkpoint was trained with {:?}, the configuration asks for {wanted:?}",
                model.config()
            )));
        }
        log::info!("resuming at step {}", model.store().step());
        (model, read_metrics(&metrics)?)
    } else {
        (Model::<f32>::new(wanted, seed)?, Vec::new())
    };
    cfg.save_in(&out)?;
    log::info!("{} parameters, {} training datasets", model.param_count(), corpus.split.train.len());
    let mut trainer = Trainer::new(model, tc)?;
    let mut done: Vec<MetricsRecord> = Vec::new();
    let history = trainer.train(&corpus, |tr, epoch, records| {
        done.extend_from_slice(records);
        for r in records {
            log::info!("epoch {epoch} step {} {} loss {:.4} accuracy {:.4}", tr.global_step(), r.split, r.loss, r.accuracy);
        }
        tr.model.save(&ckpt, true)?;
        append_metrics(&metrics, &done, &previous)?;
        Ok(())
    })?;
    trainer.model.save(&ckpt, true)?;
    append_metrics(&metrics, &history, &previous)?;
    println!("step {}", trainer.global_step());
    if let Some(last) = history.iter().rev().find(|r| r.split == "train") {
        println!("epoch {} train loss {:.6} accuracy {:.6}", last.epoch, last.loss, last.accuracy);
    }
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

/// Reads a table of variable columns and one target column into the model
/// layout `(y, x1..x6)`. Rows with non-finite values are dropped.
fn read_table(path: &Path, target: TargetColumn) -> anyhow::Result<Vec<f32>> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).with_context(|| format!("reading {shown}"))?;
    let table = parse_table(&text, &shown)?;
    let width = table.first().map(Vec::len).unwrap_or(0);
    if width < 2 {
        anyhow::bail!("{shown}: need at least one variable and a target column");
    }
    if width - 1 > MAX_VARIABLES {
        anyhow::bail!("{shown}: {} variables, at most {MAX_VARIABLES} are supported", width - 1);
    }
    let t = match target {
        TargetColumn::Last => width - 1,
        TargetColumn::Index(i) if i < width => i,
        TargetColumn::Index(i) => anyhow::bail!("{shown}: target column {} beyond {width} columns", i + 1),
    };
    let mut values = Vec::new();
    for row in table.iter().filter(|r| r.iter().all(|v| v.is_finite())) {
        let mut out = [0f32; N_COLS];
        out[0] = row[t] as f32;
        for (j, v) in row.iter().enumerate().filter(|(j, _)| *j != t).map(|(_, v)| v).enumerate() {
            out[j + 1] = *v as f32;
        }
        values.extend_from_slice(&out);
    }
    if values.is_empty() {
        anyhow::bail!("{shown}: no finite rows");
    }
    Ok(values)
}

pub fn predict(cfg: &RunConfig) -> anyhow::Result<()> {
    let beam: usize = cfg.get("beam")?;
    if beam != 1 {
        return Err(usage(format!("beam width {beam} is not supported; decoding is greedy (width 1)")));
    }
    let ckpt = PathBuf::from(cfg.required("checkpoint")?);
    let input = PathBuf::from(cfg.required("input")?);
    let target = target_column(cfg)?;
    let values = read_table(&input, target)?;
    let model = Model::<f32>::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let decoded = model.greedy_decode(&values, 1)?.pop().expect("one table decoded");
    match decoded {
        Ok(seq) => {
            println!("{seq}");
            println!("{}", print_infix(&seq.to_tree()?));
            Ok(())
        }
        Err(ModelError::IncompleteDecode(partial)) => {
            eprintln!("partial: {partial}");
            Err(ModelError::IncompleteDecode(partial).into())
        }
        Err(e) => Err(e.into()),
    }
}

pub fn evaluate(cfg: &RunConfig) -> anyhow::Result<()> {
    let problems = PathBuf::from(cfg.required("problems")?);
    let out = PathBuf::from(cfg.required("out")?);
    let protocol = EvalProtocolConfig {
        n_obs: cfg.get("n_obs")?,
        repeats: cfg.get("repeats")?,
        seed: cfg.get("seed")?,
    };
    let target = target_column(cfg)?;
    let predictor: Box<dyn Predictor> = if cfg.get::<bool>("oracle")? {
        Box::new(OraclePredictor)
    } else {
        let ckpt = PathBuf::from(cfg.required("checkpoint")?);
        Box::new(ModelPredictor(Model::<f32>::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?))
    };
    let report = evaluate_directory(&problems, predictor.as_ref(), &protocol, target)?;
    fs::create_dir_all(&out)?;
    fs::write(out.join("report.json"), report.to_json())?;
    fs::write(out.join("report.csv"), report.to_csv())?;
    cfg.save_in(&out)?;
    for p in &report.excluded {
        eprintln!("excluded: {p}");
    }
    println!("{:<8} {:>8} {}", "group", "problems", "mean_nted");
    for g in &report.groups {
        println!("{:<8} {:>8} {:?}", g.group.name(), g.n_problems, g.mean_nted);
    }
    Ok(())
}

pub fn count_params(cfg: &RunConfig) -> anyhow::Result<()> {
    println!("{:<8} {:>12} {:>12}", "encoder", "closed_form", "allocated");
    for kind in EncoderKind::ALL {
        let c = count(&model_config(cfg, kind)?)?;
        println!("{:<8} {:>12} {:>12}", kind.name(), c.closed_form, c.allocated);
        if c.closed_form != c.allocated {
            anyhow::bail!("{kind}: closed form {} differs from allocated {}", c.closed_form, c.allocated);
        }
    }
    Ok(())
}

pub fn ted(pred: &str, truth: &str) -> anyhow::Result<()> {
    let parse = |s: &str| -> anyhow::Result<_> {
        let seq: TokenSequence = s.parse().map_err(|e| usage(format!("`{s}`: {e}")))?;
        seq.to_tree().map_err(|e| usage(format!("`{s}`: {e}")))
    };
    let (p, t) = (parse(pred)?, parse(truth)?);
    println!("distance {}", edit_distance(&p, &t));
    println!("normalized {}", normalized_ted(&p, &t));
    Ok(())
}
