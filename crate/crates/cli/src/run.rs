//! `train` and `sweep`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use seqimit_core::envs::load_dataset;
use seqimit_core::parallel::Execution;
use seqimit_core::policy::save_checkpoint;
use seqimit_core::trainer::{
    init_model, prepare_data, train, ExperimentConfig, HistorySummary, TrainData, TrainOptions, CSV_HEADER,
};
use serde::Serialize;

use crate::output::{config_hash, create_dir, csv_string, load_config, write_file, write_json, RunManifest};
use crate::{SweepArgs, TrainArgs, UsageError};

#[derive(Debug, Clone, Serialize)]
struct SeedReport {
    seed: u64,
    #[serde(flatten)]
    summary: HistorySummary,
}

#[derive(Debug, Clone, Serialize)]
struct TrainReport {
    config_hash: String,
    objective: String,
    seeds: Vec<SeedReport>,
    mean_final_accuracy: f64,
    mean_final_self_bleu: f64,
    mean_final_entropy: f64,
}

/// Rows of the merged history: seed followed by the history columns.
type SeedRows = Vec<(u64, Vec<String>)>;

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Trains every configured seed into `out`. Returns the merged history rows.
fn train_run(cfg: &ExperimentConfig, dataset: Option<&Path>, out: &Path, exec: Execution) -> Result<SeedRows> {
    create_dir(out)?;
    let mut manifest = RunManifest::new(cfg);
    manifest.artifacts.insert("config".into(), "config.txt".into());
    manifest.artifacts.insert("history".into(), "history.csv".into());
    manifest.artifacts.insert("report".into(), "report.json".into());
    for &s in &cfg.seeds {
        let d = PathBuf::from(format!("seed-{s}"));
        manifest.artifacts.insert(format!("seed-{s}.checkpoint"), d.join("checkpoint.bin"));
        manifest.artifacts.insert(format!("seed-{s}.history"), d.join("history.csv"));
    }
    write_file(&out.join("config.txt"), cfg.to_text().as_bytes())?;
    manifest.write(out)?;

    let t = Instant::now();
    let data = load_data(cfg, dataset)?;
    manifest.timings.insert("data".into(), t.elapsed().as_secs_f64());

    let mut rows = Vec::new();
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let dir = seed_dir(out, seed);
        create_dir(&dir)?;
        let t = Instant::now();
        let model = init_model(cfg, &data.task, seed)?;
        let opts = TrainOptions {
            out_dir: Some(dir.clone()),
            execution: exec,
            ..TrainOptions::new(seed)
        };
        let outcome = train(cfg, &data, model, opts).with_context(|| format!("training seed {seed}"))?;
        manifest.timings.insert(format!("train.seed-{seed}"), t.elapsed().as_secs_f64());
        save_checkpoint(&dir.join("checkpoint.bin"), &outcome.checkpoint(seed))?;
        write_file(&dir.join("history.csv"), outcome.history.to_csv_string().as_bytes())?;
        rows.extend(outcome.history.records.iter().map(|r| (seed, r.csv_fields())));
        seeds.push(SeedReport {
            seed,
            summary: outcome.history.summary(),
        });
        log::info!("seed {seed} done in {:.1}s", t.elapsed().as_secs_f64());
    }

    let finals: Vec<_> = seeds.iter().filter_map(|s| s.summary.final_record).collect();
    let mean = |f: fn(&seqimit_core::trainer::EvalRecord) -> f64| {
        finals.iter().map(f).sum::<f64>() / finals.len().max(1) as f64
    };
    let report = TrainReport {
        config_hash: config_hash(cfg),
        objective: cfg.objective.to_string(),
        mean_final_accuracy: mean(|r| r.val_accuracy),
        mean_final_self_bleu: mean(|r| r.self_bleu),
        mean_final_entropy: mean(|r| r.entropy),
        seeds,
    };
    write_json(&out.join("report.json"), &report)?;
    let mut header = vec!["seed"];
    header.extend_from_slice(CSV_HEADER);
    let merged = csv_string(
        &header,
        rows.iter().map(|(s, r)| std::iter::once(s.to_string()).chain(r.iter().cloned())),
    )?;
    write_file(&out.join("history.csv"), merged.as_bytes())?;

    manifest.status = "complete";
    manifest.write(out)?;
    Ok(rows)
}

fn load_data(cfg: &ExperimentConfig, dataset: Option<&Path>) -> Result<TrainData> {
    let mut data = prepare_data(cfg)?;
    if let Some(path) = dataset {
        let train = load_dataset(path)?;
        for (i, t) in train.iter().enumerate() {
            t.validate(&data.task.vocab, cfg.max_completion)
                .with_context(|| format!("{} line {}", path.display(), i + 1))?;
        }
        if train.is_empty() {
            return Err(UsageError(format!("dataset {} is empty", path.display())).into());
        }
        data.train = train;
    }
    Ok(data)
}

pub fn cmd_train(args: &TrainArgs, exec: Execution) -> Result<()> {
    let cfg = load_config(&args.cfg)?;
    train_run(&cfg, args.dataset.as_deref(), &args.out, exec)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn parse_axis(axis: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = axis
        .split_once('=')
        .ok_or_else(|| UsageError(format!("axis `{axis}` is not key=v1,v2,...")))?;
    let key = key.trim().to_string();
    if !ExperimentConfig::KEYS.contains(&key.as_str()) {
        return Err(UsageError(format!(
            "unknown axis key `{key}`; valid keys: {}",
            ExperimentConfig::KEYS.join(", ")
        ))
        .into());
    }
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(UsageError(format!("axis `{key}` has no values")).into());
    }
    Ok((key, values))
}

/// Orders axis values numerically when they all parse as numbers.
fn value_order(values: &[String]) -> impl Fn(&String, &String) -> std::cmp::Ordering + '_ {
    let numeric = values.iter().all(|v| v.parse::<f64>().is_ok());
    move |a, b| {
        if numeric {
            a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap())
        } else {
            a.cmp(b)
        }
    }
}

pub fn cmd_sweep(args: &SweepArgs, exec: Execution) -> Result<()> {
    let base = load_config(&args.cfg)?;
    let (key, values) = parse_axis(&args.axis)?;

    let mut configs = Vec::new();
    let mut dirs: BTreeMap<PathBuf, String> = BTreeMap::new();
    for v in &values {
        let mut cfg = base.clone();
        cfg.set(&key, v)?;
        cfg.validate().with_context(|| format!("{key}={v}"))?;
        // Canonical spelling, so `0.10` and `0.1` collide.
        let canon = cfg.get(&key)?;
        let dir = args.out.join(format!("{key}={canon}"));
        if let Some(prev) = dirs.insert(dir.clone(), v.clone()) {
            return Err(UsageError(format!(
                "axis values `{prev}` and `{v}` map to the same run directory {}",
                dir.display()
            ))
            .into());
        }
        if dir.exists() {
            return Err(UsageError(format!("run directory {} already exists", dir.display())).into());
        }
        configs.push((canon, cfg, dir));
    }

    let mut merged: Vec<(String, u64, usize, Vec<String>)> = Vec::new();
    let mut runs = BTreeMap::new();
    for (value, cfg, dir) in &configs {
        log::info!("sweep {key}={value}");
        let rows = train_run(cfg, None, dir, exec)?;
        runs.insert(value.clone(), dir.clone());
        for (seed, r) in rows {
            let step = r[0].parse().expect("step column");
            merged.push((value.clone(), seed, step, r));
        }
    }
    let canon: Vec<String> = configs.iter().map(|c| c.0.clone()).collect();
    let order = value_order(&canon);
    merged.sort_by(|a, b| order(&a.0, &b.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));

    let mut header = vec!["axis", "value", "seed"];
    header.extend_from_slice(CSV_HEADER);
    let csv = csv_string(
        &header,
        merged
            .iter()
            .map(|(v, s, _, r)| [key.clone(), v.clone(), s.to_string()].into_iter().chain(r.iter().cloned())),
    )?;
    write_file(&args.out.join("merged.csv"), csv.as_bytes())?;
    write_json(
        &args.out.join("sweep.json"),
        &serde_json::json!({ "axis": key, "runs": runs }),
    )?;
    println!("wrote {} runs under {}", configs.len(), args.out.display());
    Ok(())
}
