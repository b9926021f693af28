//! The training loop.

use std::path::PathBuf;

use super::buffer::{assemble_online_batch, sample_expert_batch, RolloutBuffer};
use super::config::{ExperimentConfig, ObjectiveKind};
use super::gail::{gail_train_step, GailState};
use super::history::{EvalRecord, TrainHistory};
use crate::envs::seq::Trajectory;
use crate::envs::tasks::SyntheticTask;
use crate::envs::vocab::TokenId;
use crate::error::{Error, Result};
use crate::eval::evaluate_policy;
use crate::objectives::iql::{entropy_mle_graph, mle_graph, offline_graph, online_graph};
use crate::objectives::{value_and_grad, LossOutput, SeqBatch};
use crate::optim::{clip_global_norm, AdamConfig, OptimizerState};
use crate::parallel::Execution;
use crate::policy::{save_checkpoint, Checkpoint, DecodeMode, PolicyModel, SamplerConfig};
use crate::rng::{derive_seed, stream, substream};

/// Generated task data for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub task: SyntheticTask,
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    /// The first `eval_prompts` validation prompts. Prompts may repeat; each
    /// occurrence is its own sample group.
    pub val_prompts: Vec<Vec<TokenId>>,
}

impl TrainData {
    pub fn train_prompts(&self) -> Vec<Vec<TokenId>> {
        self.train.iter().map(|t| t.prompt.clone()).collect()
    }
}

/// Builds the task, its training set (the first `subset_fraction` of
/// `train_size` generated examples) and a validation set drawn from an
/// independent stream. Depends only on the data fields of `cfg`.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<TrainData> {
    let task = SyntheticTask::new(cfg.task, cfg.task_params.clone())?;
    let mut train = task.gen_dataset(cfg.train_size, cfg.data_seed)?;
    let keep = ((cfg.train_size as f64 * cfg.subset_fraction).ceil() as usize).clamp(1, cfg.train_size);
    train.truncate(keep);
    let val = task.gen_dataset(cfg.val_size, derive_seed(cfg.data_seed, "validation", 0))?;
    let val_prompts = val.iter().take(cfg.eval_prompts).map(|t| t.prompt.clone()).collect();
    Ok(TrainData {
        task,
        train,
        val,
        val_prompts,
    })
}

/// Fresh policy for `seed`, drawn from the `init` stream.
pub fn init_model(cfg: &ExperimentConfig, task: &SyntheticTask, seed: u64) -> Result<PolicyModel> {
    PolicyModel::new(
        task.vocab.clone(),
        cfg.embed_dim,
        cfg.hidden_dim,
        cfg.layers,
        &mut stream(seed, "init"),
    )
}

/// Called after every step with the 1-based step, the objective that
/// produced its update and the loss.
pub type StepObserver<'a> = &'a mut dyn FnMut(usize, ObjectiveKind, &LossOutput);

pub struct TrainOptions<'a> {
    pub seed: u64,
    /// Where `checkpoint.bin` is written at eval points; `None` skips it.
    pub out_dir: Option<PathBuf>,
    pub execution: Execution,
    pub observer: Option<StepObserver<'a>>,
}

impl TrainOptions<'_> {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            out_dir: None,
            execution: Execution::default(),
            observer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: PolicyModel,
    pub optimizer: OptimizerState,
    pub history: TrainHistory,
    /// Last completed step.
    pub step: usize,
    pub gail: Option<GailState>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.optimizer.clone()),
            training_step: self.step as u64,
            seed,
        }
    }
}

pub fn adam_config(cfg: &ExperimentConfig) -> AdamConfig {
    AdamConfig {
        base_rate: cfg.learning_rate,
        warmup_steps: cfg.lr_warmup_steps,
        ..Default::default()
    }
}

fn rollout_sampler(cfg: &ExperimentConfig) -> SamplerConfig {
    SamplerConfig {
        temperature: cfg.rollout_temperature,
        max_len: cfg.max_completion,
        mode: DecodeMode::Sample,
        ..Default::default()
    }
}

pub fn eval_sampler(cfg: &ExperimentConfig) -> SamplerConfig {
    SamplerConfig {
        temperature: if cfg.eval_temperature > 0.0 { cfg.eval_temperature } else { 1.0 },
        max_len: cfg.max_completion,
        mode: if cfg.eval_temperature > 0.0 {
            DecodeMode::Sample
        } else {
            DecodeMode::Greedy
        },
        ..Default::default()
    }
}

/// Objective in force at 1-based step `k`.
pub fn objective_at(cfg: &ExperimentConfig, k: usize) -> ObjectiveKind {
    if k <= cfg.warmup_mle_steps {
        ObjectiveKind::Mle
    } else {
        cfg.objective
    }
}

/// Trains `model` from scratch (step 0, fresh optimizer).
pub fn train(
    cfg: &ExperimentConfig,
    data: &TrainData,
    model: PolicyModel,
    opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    let opt = OptimizerState::new(adam_config(cfg), &model.net.params);
    run(cfg, data, model, opt, 0, opts)
}

/// Continues from a checkpoint written by an earlier run with the same
/// config and seed. The returned history covers only the resumed steps.
pub fn train_resume(
    cfg: &ExperimentConfig,
    data: &TrainData,
    ckpt: Checkpoint,
    opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    if ckpt.seed != opts.seed {
        return Err(Error::Checkpoint(format!(
            "checkpoint was written by seed {}, resuming with seed {}",
            ckpt.seed, opts.seed
        )));
    }
    let start = ckpt.training_step as usize;
    // TODO: persist the discriminator, critic and anchor so GAIL runs can resume.
    if objective_at(cfg, start + 1) == ObjectiveKind::Gail {
        return Err(Error::Contract(
            "resuming inside the GAIL phase is not supported; restart the run".into(),
        ));
    }
    let opt = ckpt
        .optimizer
        .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state to resume from".into()))?;
    run(cfg, data, ckpt.model, opt, start, opts)
}

fn run(
    cfg: &ExperimentConfig,
    data: &TrainData,
    mut model: PolicyModel,
    mut opt: OptimizerState,
    start: usize,
    mut opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyBatch("training set is empty"));
    }
    if data.val_prompts.is_empty() {
        return Err(Error::EmptyBatch("no validation prompts"));
    }
    if model.vocab != data.task.vocab {
        return Err(Error::Contract("model vocabulary does not match the task".into()));
    }
    let seed = opts.seed;
    let exec = opts.execution;
    let prompts = data.train_prompts();
    let rollouts = rollout_sampler(cfg);
    let mut buffer = RolloutBuffer::new(cfg.rollouts_per_step * (cfg.staleness as usize + 1), cfg.staleness);
    let mut gail: Option<GailState> = None;
    let mut history = TrainHistory::default();
    let (mut best, mut since_best) = (f64::NEG_INFINITY, 0usize);

    for k in start + 1..=cfg.total_steps {
        let objective = objective_at(cfg, k);
        let mut batch_rng = substream(seed, "batch", k as u64);
        let loss = match objective {
            ObjectiveKind::Gail => {
                if gail.is_none() {
                    if cfg.warmup_mle_steps == 0 {
                        log::warn!("GAIL starts without an MLE warm-up; the policy anchor is the initialization");
                    }
                    let mut rng = stream(seed, "gail-init");
                    gail = Some(GailState::new(&model, adam_config(cfg), &mut rng)?);
                }
                let state = gail.as_mut().expect("initialized above");
                buffer.refill(&model, &prompts, &rollouts, cfg.rollouts_per_step, k as u64, seed, exec)?;
                let fresh: Vec<Trajectory> = buffer.fresh(k as u64).into_iter().cloned().collect();
                let expert = sample_expert_batch(&data.train, cfg.batch_size, &mut batch_rng);
                gail_train_step(&mut model, &mut opt, state, fresh, &expert, cfg, k)?.loss
            }
            _ => {
                let (output, mut grads) = match objective {
                    ObjectiveKind::IqlOnline => {
                        buffer.refill(&model, &prompts, &rollouts, cfg.rollouts_per_step, k as u64, seed, exec)?;
                        let (e, o) = assemble_online_batch(
                            &data.train,
                            &buffer,
                            k as u64,
                            cfg.iql.alpha,
                            cfg.batch_size,
                            &mut batch_rng,
                        )?;
                        let (e, o) = (SeqBatch::from_trajectories(&e)?, SeqBatch::from_trajectories(&o)?);
                        value_and_grad(&model, |g, b| online_graph(g, b, &model, &e, &o, &cfg.iql))?
                    }
                    _ => {
                        let b = SeqBatch::from_trajectories(&sample_expert_batch(
                            &data.train,
                            cfg.batch_size,
                            &mut batch_rng,
                        ))?;
                        match objective {
                            ObjectiveKind::Mle => value_and_grad(&model, |g, bd| mle_graph(g, bd, &model, &b))?,
                            ObjectiveKind::MleEnt => value_and_grad(&model, |g, bd| {
                                entropy_mle_graph(g, bd, &model, &b, cfg.iql.lambda)
                            })?,
                            _ => value_and_grad(&model, |g, bd| offline_graph(g, bd, &model, &b, &cfg.iql))?,
                        }
                    }
                };
                if !output.total.is_finite() {
                    log::error!("non-finite loss at step {k}: {output}");
                    return Err(Error::NonFiniteLoss {
                        step: k,
                        detail: output.to_string(),
                    });
                }
                if cfg.grad_clip > 0.0 {
                    clip_global_norm(&mut grads, cfg.grad_clip);
                }
                opt.step(&mut model.net.params, &grads)?;
                output
            }
        };
        history.step_losses.push(loss);
        if let Some(obs) = opts.observer.as_mut() {
            obs(k, objective, &loss);
        }

        if k % cfg.eval_every == 0 || k == cfg.total_steps {
            let report = evaluate_policy(
                &model,
                &data.val_prompts,
                &data.task,
                &eval_sampler(cfg),
                cfg.eval_samples_per_prompt,
                derive_seed(seed, "eval", k as u64),
                exec,
            )?;
            history.push(EvalRecord {
                step: k,
                objective,
                loss,
                val_accuracy: report.accuracy,
                val_metric: report.mean_metric,
                self_bleu: report.diversity.self_bleu,
                entropy: report.diversity.mean_per_token_entropy,
            });
            log::info!(
                "step {k} [{objective}] loss {:.4} val_acc {:.3} self_bleu {:.3}",
                loss.total,
                report.accuracy,
                report.diversity.self_bleu
            );
            if let Some(dir) = &opts.out_dir {
                let ckpt = Checkpoint {
                    model: model.clone(),
                    optimizer: Some(opt.clone()),
                    training_step: k as u64,
                    seed,
                };
                save_checkpoint(&dir.join("checkpoint.bin"), &ckpt)?;
            }
            if report.accuracy > best {
                best = report.accuracy;
                since_best = 0;
            } else {
                since_best += 1;
            }
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                log::info!("early stop at step {k}: no improvement in {since_best} evaluations");
                history.stopped_early = true;
                return Ok(finish(model, opt, history, k, gail));
            }
        }
    }
    let step = cfg.total_steps.max(start);
    Ok(finish(model, opt, history, step, gail))
}

fn finish(
    model: PolicyModel,
    optimizer: OptimizerState,
    mut history: TrainHistory,
    step: usize,
    gail: Option<GailState>,
) -> TrainOutcome {
    history.discriminator_updates = gail.as_ref().map_or(0, |g| g.disc_updates);
    TrainOutcome {
        model,
        optimizer,
        history,
        step,
        gail,
    }
}
