//! The training loop: schedule, optimizer steps, expansion events, evaluation,
//! logging and checkpoints.

use std::path::{Path, PathBuf};

use log::{info, warn};

use super::config::{ExperimentConfig, Precision};
use super::data::{generate_dataset, validation_batches, Dataset, Sampler};
use super::runlog::{CsvSink, EventRecord, RunLog, RunRecord};
use super::HarnessError;
use crate::checkpoint;
use crate::expansion::{expand, expand_optimizer_state, plan_expansion};
use crate::model::{Batch, Model, ModelError};
use crate::optim::{Optimizer, OptimizerState};
use crate::tensor::{Scalar, TensorError};

pub const RUN_LOG: &str = "run.csv";
pub const EVENTS_LOG: &str = "events.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub struct TrainOutcome<T> {
    pub log: RunLog,
    pub model: Model<T>,
    pub optimizer: OptimizerState<T>,
    pub final_checkpoint: Option<PathBuf>,
}

/// Trains at the configured precision. With `out`, writes `run.csv`,
/// `events.jsonl`, pre-expansion checkpoints and `final.ckpt` there.
pub fn train(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunLog, HarnessError> {
    Ok(match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg, out)?.log,
        Precision::F64 => train_typed::<f64>(cfg, out)?.log,
    })
}

pub fn train_typed<T: Scalar>(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<TrainOutcome<T>, HarnessError> {
    let data = generate_dataset(&cfg.data, cfg.data_seed)?;
    train_on(cfg, &data, out)
}

fn expansion_seed(seed: u64, step: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn mean_loss<T: Scalar>(model: &Model<T>, batches: &[Batch<T>]) -> Result<f64, HarnessError> {
    let mut total = 0.0;
    let mut weight = 0.0;
    for b in batches {
        let n = b.tokens() as f64;
        total += n * model.loss(b)?;
        weight += n;
    }
    Ok(total / weight)
}

fn non_finite(step: u64, e: ModelError) -> HarnessError {
    match e {
        ModelError::Tensor(TensorError::NonFinite { .. }) => HarnessError::NonFinite { step, loss: f64::NAN },
        other => HarnessError::Model(other),
    }
}

/// Trains on an already generated dataset (sweeps share one).
pub fn train_on<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &Dataset,
    out: Option<&Path>,
) -> Result<TrainOutcome<T>, HarnessError> {
    cfg.validate()?;
    for w in cfg.warnings() {
        warn!("{w}");
    }
    let schedule = cfg.schedule();
    let tr = &cfg.training;
    let horizon = tr.steps;
    let stop = tr.pilot_horizon.map_or(horizon, |p| p.min(horizon));
    let optimizer = Optimizer::new(cfg.optimizer)?;
    let mut model = Model::<T>::build(&cfg.model_config())?;
    let mut state = optimizer.init_state::<T>();
    let mut sampler = Sampler::new(cfg.seed, tr.seq_len);
    let val = validation_batches::<T>(
        data,
        tr.eval_batch_size.unwrap_or(tr.batch_size),
        tr.eval_batches,
        tr.seq_len,
    )?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::io(dir, source))?;
    }
    let mut sink = match out {
        Some(dir) => Some(CsvSink::create(&dir.join(RUN_LOG))?),
        None => None,
    };
    let mut log = RunLog::default();
    let mut events = cfg.events.iter().peekable();
    let mut batch_size = tr.batch_size;
    let (mut tokens, mut flops) = (0u64, 0u64);

    for step in 0..stop {
        if let Some(ev) = events.next_if(|e| e.step == step) {
            let ckpt = match out {
                Some(dir) if tr.checkpoint_events => {
                    let path = dir.join(format!("step{step}_pre_expansion.ckpt"));
                    checkpoint::save(&path, &model, Some(&state), step)?;
                    Some(path.display().to_string())
                }
                _ => None,
            };
            let loss_before = model.loss(&val[0])?;
            let n_before = model.param_count();
            let plan = plan_expansion(model.depth(), ev.target_depth, ev.method, ev.site)?;
            let grown = expand(&model, &plan, ev.seed.unwrap_or_else(|| expansion_seed(cfg.seed, step)))?;
            state = expand_optimizer_state(&state, &grown, ev.os_policy)?;
            let from_depth = model.depth();
            model = grown.model;
            batch_size = ev.batch_size.unwrap_or(batch_size);
            let loss_after = model.loss(&val[0])?;
            info!(
                "step {step}: expanded {from_depth} -> {} with {} {plan}; N {n_before} -> {}",
                model.depth(),
                ev.method.name(),
                model.param_count()
            );
            log.events.push(EventRecord {
                step,
                from_depth,
                to_depth: model.depth(),
                method: ev.method.name().to_string(),
                plan: plan.to_string(),
                n_before,
                n_after: model.param_count(),
                batch_size,
                loss_before,
                loss_after,
                checkpoint: ckpt,
            });
        }
        let val_loss = if step % tr.eval_interval == 0 {
            Some(mean_loss(&model, &val)?)
        } else {
            None
        };
        let batch = sampler.train_batch::<T>(data, batch_size)?;
        let n = model.param_count();
        let lr = schedule.lr(step)?;
        let loss = match model.compute_grads(&batch) {
            Ok(l) => l,
            Err(e) => {
                let err = non_finite(step, e);
                if matches!(err, HarnessError::NonFinite { .. }) {
                    record(&mut sink, &mut log, diagnostic(step, tokens, flops, lr, val_loss, n))?;
                    finish(sink.take(), out, &log)?;
                }
                return Err(err);
            }
        };
        if !loss.is_finite() {
            record(&mut sink, &mut log, diagnostic(step, tokens, flops, lr, val_loss, n))?;
            finish(sink.take(), out, &log)?;
            return Err(HarnessError::NonFinite { step, loss });
        }
        optimizer.step(model.parameters_mut(), &mut state, lr)?;
        tokens += batch.tokens();
        flops += super::flops::flops_per_step(n, batch.tokens());
        record(
            &mut sink,
            &mut log,
            RunRecord {
                step,
                tokens,
                flops,
                lr,
                train_loss: Some(loss),
                val_loss,
                n_params: n,
            },
        )?;
    }
    record(
        &mut sink,
        &mut log,
        RunRecord {
            step: stop,
            tokens,
            flops,
            lr: schedule.lr_at(stop as f64),
            train_loss: None,
            val_loss: Some(mean_loss(&model, &val)?),
            n_params: model.param_count(),
        },
    )?;
    let final_checkpoint = match out {
        Some(dir) => {
            let path = dir.join(FINAL_CHECKPOINT);
            checkpoint::save(&path, &model, Some(&state), stop)?;
            Some(path)
        }
        None => None,
    };
    finish(sink.take(), out, &log)?;
    Ok(TrainOutcome {
        log,
        model,
        optimizer: state,
        final_checkpoint,
    })
}

fn record(sink: &mut Option<CsvSink>, log: &mut RunLog, r: RunRecord) -> Result<(), HarnessError> {
    if let Some(s) = sink.as_mut() {
        s.push(&r)?;
    }
    log.records.push(r);
    Ok(())
}

fn diagnostic(step: u64, tokens: u64, flops: u64, lr: f64, val_loss: Option<f64>, n: u64) -> RunRecord {
    RunRecord {
        step,
        tokens,
        flops,
        lr,
        train_loss: Some(f64::NAN),
        val_loss,
        n_params: n,
    }
}

fn finish(sink: Option<CsvSink>, out: Option<&Path>, log: &RunLog) -> Result<(), HarnessError> {
    if let Some(s) = sink {
        s.finish()?;
    }
    if let Some(dir) = out {
        log.write_events(&dir.join(EVENTS_LOG))?;
    }
    Ok(())
}
