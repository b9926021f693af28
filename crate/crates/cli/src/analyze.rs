//! `eval`, `correlate` and `toy-mdp`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use seqimit_core::envs::{SyntheticTask, ToyMdp, TokenId};
use seqimit_core::eval::{
    correlate_returns, evaluate_policy, run_toy_comparison, CorrelationReport, EvalReport, ToyExecution,
    ToyTrainConfig,
};
use seqimit_core::parallel::Execution;
use seqimit_core::policy::{load_checkpoint, Checkpoint, DecodeMode, SamplerConfig};
use seqimit_core::rng::stream;
use seqimit_core::trainer::prepare_data;
use serde::Serialize;

use crate::output::{create_dir, csv_string, load_config, write_file, write_json};
use crate::{CorrelateArgs, EvalArgs, ModeArg, ToyArgs, ToyExecArg, UsageError};

fn load_matching(path: &Path, task: &SyntheticTask) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.model.vocab != task.vocab {
        bail!(
            "checkpoint {} has a {}-token vocabulary that does not match task `{}` ({} tokens)",
            path.display(),
            ckpt.model.vocab.len(),
            task.kind.name(),
            task.vocab.len()
        );
    }
    Ok(ckpt)
}

#[derive(Serialize)]
struct EvalRow {
    mode: &'static str,
    temperature: Option<f64>,
    #[serde(flatten)]
    report: EvalReport,
}

pub fn cmd_eval(args: &EvalArgs, exec: Execution) -> Result<()> {
    let mut cfg = load_config(&args.cfg)?;
    cfg.eval_prompts = args.prompts;
    let data = prepare_data(&cfg)?;
    let ckpt = load_matching(&args.checkpoint, &data.task)?;
    for &t in &args.temps {
        if !(t > 0.0) {
            return Err(UsageError(format!("temperatures must be positive, got {t}")).into());
        }
    }
    let settings: Vec<(&'static str, Option<f64>, SamplerConfig)> = match args.mode {
        ModeArg::Sample => args
            .temps
            .iter()
            .map(|&t| {
                let s = SamplerConfig {
                    temperature: t,
                    max_len: cfg.max_completion,
                    mode: DecodeMode::Sample,
                    ..Default::default()
                };
                ("sample", Some(t), s)
            })
            .collect(),
        ModeArg::Greedy => vec![(
            "greedy",
            None,
            SamplerConfig {
                max_len: cfg.max_completion,
                mode: DecodeMode::Greedy,
                ..Default::default()
            },
        )],
        ModeArg::Beam => vec![(
            "beam",
            None,
            SamplerConfig {
                max_len: cfg.max_completion,
                mode: DecodeMode::Beam,
                beam_size: args.beam_size,
                length_penalty: args.length_penalty,
                ..Default::default()
            },
        )],
    };
    let mut rows = Vec::new();
    for (mode, temperature, sampler) in settings {
        sampler.validate().map_err(|e| UsageError(e.to_string()))?;
        let report = evaluate_policy(
            &ckpt.model,
            &data.val_prompts,
            &data.task,
            &sampler,
            args.samples_per_prompt,
            args.seed,
            exec,
        )?;
        rows.push(EvalRow {
            mode,
            temperature,
            report,
        });
    }
    let csv = csv_string(
        &["mode", "temperature", "accuracy", "mean_metric", "self_bleu", "entropy", "samples"],
        rows.iter().map(|r| {
            let d = &r.report.diversity;
            vec![
                r.mode.to_string(),
                r.temperature.map_or(String::new(), |t| t.to_string()),
                r.report.accuracy.to_string(),
                r.report.mean_metric.to_string(),
                d.self_bleu.to_string(),
                d.mean_per_token_entropy.to_string(),
                d.sample_count.to_string(),
            ]
        }),
    )?;
    match &args.out {
        Some(dir) => {
            create_dir(dir)?;
            write_file(&dir.join("eval.csv"), csv.as_bytes())?;
            write_json(&dir.join("report.json"), &rows)?;
            println!("wrote {}", dir.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn correlation_prompts(task: &SyntheticTask, n: usize, seed: u64) -> Vec<Vec<TokenId>> {
    let mut rng = stream(seed, "correlate-prompts");
    (0..n).map(|i| task.sample_prompt(&mut rng, i)).collect()
}

pub fn cmd_correlate(args: &CorrelateArgs, exec: Execution) -> Result<()> {
    let cfg = load_config(&args.cfg)?;
    let task = SyntheticTask::new(cfg.task, cfg.task_params.clone())?;
    let ckpt = load_matching(&args.checkpoint, &task)?;
    let sampler = SamplerConfig {
        temperature: args.temperature,
        max_len: cfg.max_completion,
        mode: DecodeMode::Sample,
        ..Default::default()
    };
    sampler.validate().map_err(|e| UsageError(e.to_string()))?;
    let prompts = correlation_prompts(&task, args.prompts, args.seed);
    let mut reports: Vec<CorrelationReport> = Vec::new();
    for m in &args.metrics {
        let r = match m.as_str() {
            "task-metric" => correlate_returns(&ckpt.model, &prompts, &sampler, &cfg.iql, args.seed, exec, m, |t, _| {
                task.metric(&t.prompt, &t.completion)
            }),
            "total-return" => correlate_returns(&ckpt.model, &prompts, &sampler, &cfg.iql, args.seed, exec, m, |_, r| r),
            "length" => correlate_returns(&ckpt.model, &prompts, &sampler, &cfg.iql, args.seed, exec, m, |t, _| {
                t.completion.len() as f64
            }),
            other => {
                return Err(UsageError(format!(
                    "unknown metric `{other}` (expected task-metric, total-return or length)"
                ))
                .into())
            }
        }
        .with_context(|| format!("metric {m}"))?;
        reports.push(r);
    }
    println!("{:<14} {:>8}", "metric", "rho");
    for r in &reports {
        match r.spearman_rho {
            Some(rho) => println!("{:<14} {:>8.3}", r.metric, rho),
            None => {
                log::warn!("spearman rho for `{}` is undefined (constant ranks)", r.metric);
                println!("{:<14} {:>8}", r.metric, "n/a");
            }
        }
    }
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_json(&dir.join("report.json"), &reports)?;
    }
    Ok(())
}

pub fn cmd_toy(args: &ToyArgs, exec: Execution) -> Result<()> {
    let mdp = ToyMdp {
        chain_length: args.chain_length,
        noise: args.noise,
        horizon: args.horizon,
        ..ToyMdp::default()
    };
    mdp.validate().map_err(|e| UsageError(e.to_string()))?;
    if args.seeds == 0 {
        return Err(UsageError("--seeds must be at least 1".into()).into());
    }
    let cfg = ToyTrainConfig {
        lambda: args.lambda,
        alpha: args.alpha,
        steps: args.steps,
        demonstrations: args.demonstrations,
        eval_episodes: args.episodes,
        execution: match args.execution {
            ToyExecArg::Greedy => ToyExecution::Greedy,
            ToyExecArg::Sample => ToyExecution::Sample,
        },
        ..ToyTrainConfig::default()
    };
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let cmp = run_toy_comparison(&mdp, &cfg, &seeds, exec)?;

    println!("{:<16} {:<12} {:>8} {:>8}", "variant", "algorithm", "success", "stderr");
    for r in &cmp.results {
        println!(
            "{:<16} {:<12} {:>8.3} {:>8.3}",
            r.variant.name(),
            r.algorithm.name(),
            r.success_rate,
            r.stderr
        );
    }
    println!();
    println!("{:<16} {:>8} {:>10}", "variant", "gap", "2x stderr");
    for g in &cmp.gaps {
        println!("{:<16} {:>8.3} {:>10.3}", g.variant.name(), g.gap, 2.0 * g.combined_stderr);
    }
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let csv = csv_string(
            &["variant", "algorithm", "seed", "success_rate"],
            cmp.runs.iter().map(|r| {
                vec![
                    r.variant.name().to_string(),
                    r.algorithm.name().to_string(),
                    r.seed.to_string(),
                    r.success_rate.to_string(),
                ]
            }),
        )?;
        write_file(&dir.join("toy.csv"), csv.as_bytes())?;
        write_json(
            &dir.join("report.json"),
            &serde_json::json!({ "config": cfg, "mdp": mdp, "results": cmp.results, "gaps": cmp.gaps }),
        )?;
    }
    Ok(())
}
