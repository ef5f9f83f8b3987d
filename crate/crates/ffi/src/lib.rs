//! C ABI over the deepgrow engine.
//!
//! Every function returns a [`DgStatus`]; on failure the message is available
//! from [`dg_last_error`] on the same thread. Models are opaque handles owned
//! by the caller and released with [`dg_model_free`]. Panics never cross the
//! boundary; they surface as `DG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use deepgrow::checkpoint::{self, Checkpoint};
use deepgrow::convex::{run_trial, TrialConfig};
use deepgrow::expansion::{expand_optimizer_state, expand_to, ExpansionMethod, InsertionSite, OptimizerStatePolicy};
use deepgrow::harness::{staged_flops, ExperimentConfig};
use deepgrow::model::{Batch, Model, ModelConfig};
use deepgrow::optim::{OptimizerState, ScheduleConfig, ScheduleKind};
use deepgrow::tensor::{DType, Scalar, Tensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Checkpoint = 5,
    Expansion = 6,
    Model = 7,
    Theory = 8,
    Runtime = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgSchedule {
    Wsd = 0,
    Cosine = 1,
    Constant = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgPrecision {
    F32 = 32,
    F64 = 64,
}

struct Inner<T> {
    model: Model<T>,
    optimizer: Option<OptimizerState<T>>,
    step: u64,
}

enum Handle {
    F32(Inner<f32>),
    F64(Inner<f64>),
}

/// Opaque model handle.
pub struct DgModel(Handle);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(DgStatus, String);

type R<T> = Result<T, Failure>;

fn fail<E: std::fmt::Display>(status: DgStatus) -> impl Fn(E) -> Failure {
    move |e| Failure(status, e.to_string())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> R<()>) -> DgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DgStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DgStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> R<&'a str> {
    if p.is_null() {
        return Err(Failure(DgStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(DgStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a>(p: *const DgModel) -> R<&'a Handle> {
    p.as_ref()
        .map(|m| &m.0)
        .ok_or_else(|| Failure(DgStatus::NullPointer, "model handle is null".into()))
}

fn store<T>(out: *mut T, value: T) -> R<()> {
    if out.is_null() {
        return Err(Failure(DgStatus::NullPointer, "output pointer is null".into()));
    }
    unsafe { out.write(value) };
    Ok(())
}

fn boxed(h: Handle) -> *mut DgModel {
    Box::into_raw(Box::new(DgModel(h)))
}

/// Message of the last failed call on this thread (empty after a success).
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn dg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a freshly initialized model from a JSON model config; `precision`
/// is a `DgPrecision` value.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_model_new(
    config_json: *const c_char,
    precision: u32,
    out: *mut *mut DgModel,
) -> DgStatus {
    guard(|| {
        let cfg: ModelConfig = serde_json::from_str(text(config_json, "config_json")?).map_err(fail(DgStatus::Config))?;
        let h = match precision {
            p if p == DgPrecision::F32 as u32 => Handle::F32(Inner {
                model: Model::build(&cfg).map_err(fail(DgStatus::Config))?,
                optimizer: None,
                step: 0,
            }),
            p if p == DgPrecision::F64 as u32 => Handle::F64(Inner {
                model: Model::build(&cfg).map_err(fail(DgStatus::Config))?,
                optimizer: None,
                step: 0,
            }),
            other => return Err(Failure(DgStatus::InvalidArgument, format!("precision must be 32 or 64, got {other}"))),
        };
        store(out, boxed(h))
    })
}

fn load_inner<T: Scalar>(path: &Path) -> R<Inner<T>> {
    let Checkpoint { model, optimizer, step } = checkpoint::load::<T>(path).map_err(fail(DgStatus::Checkpoint))?;
    Ok(Inner { model, optimizer, step })
}

/// Loads a checkpoint archive at its stored precision.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_model_load(path: *const c_char, out: *mut *mut DgModel) -> DgStatus {
    guard(|| {
        let path = Path::new(text(path, "path")?);
        let h = match checkpoint::stored_dtype(path).map_err(|e| match e {
            checkpoint::CheckpointError::Io { .. } => Failure(DgStatus::Io, e.to_string()),
            other => Failure(DgStatus::Checkpoint, other.to_string()),
        })? {
            DType::F32 => Handle::F32(load_inner(path)?),
            DType::F64 => Handle::F64(load_inner(path)?),
        };
        store(out, boxed(h))
    })
}

/// Writes the model (and optimizer state, if any) to a checkpoint archive.
///
/// # Safety
/// `model` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dg_model_save(model: *const DgModel, path: *const c_char) -> DgStatus {
    guard(|| {
        let path = Path::new(text(path, "path")?);
        let r = match handle(model)? {
            Handle::F32(i) => checkpoint::save(path, &i.model, i.optimizer.as_ref(), i.step),
            Handle::F64(i) => checkpoint::save(path, &i.model, i.optimizer.as_ref(), i.step),
        };
        r.map_err(fail(DgStatus::Io))
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dg_model_free(model: *mut DgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_model_param_count(model: *const DgModel, out: *mut u64) -> DgStatus {
    guard(|| {
        let n = match handle(model)? {
            Handle::F32(i) => i.model.param_count(),
            Handle::F64(i) => i.model.param_count(),
        };
        store(out, n)
    })
}

/// # Safety
/// `model` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_model_depth(model: *const DgModel, out: *mut usize) -> DgStatus {
    guard(|| {
        let d = match handle(model)? {
            Handle::F32(i) => i.model.depth(),
            Handle::F64(i) => i.model.depth(),
        };
        store(out, d)
    })
}

fn expand_inner<T: Scalar>(
    i: &Inner<T>,
    depth: usize,
    method: ExpansionMethod,
    site: InsertionSite,
    seed: u64,
) -> R<Inner<T>> {
    let target = i.model.config().clone().with_depth(depth);
    let grown = expand_to(&i.model, &target, method, site, seed).map_err(fail(DgStatus::Expansion))?;
    let optimizer = i
        .optimizer
        .as_ref()
        .map(|s| expand_optimizer_state(s, &grown, OptimizerStatePolicy::Inherit))
        .transpose()
        .map_err(fail(DgStatus::Expansion))?;
    Ok(Inner {
        model: grown.model,
        optimizer,
        step: i.step,
    })
}

/// Grows a model to `target_depth` blocks. `method` is one of `random`,
/// `copying_last`, `copying_stack`, `copying_inter`, `zero`,
/// `copying_zero_norm`, `copying_zero_last_linear`. New blocks go next to the
/// readout. The source handle is left untouched.
///
/// # Safety
/// `model` must come from this library, `method` be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dg_model_expand(
    model: *const DgModel,
    target_depth: usize,
    method: *const c_char,
    seed: u64,
    out: *mut *mut DgModel,
) -> DgStatus {
    guard(|| {
        let method: ExpansionMethod = text(method, "method")?
            .parse()
            .map_err(fail(DgStatus::InvalidArgument))?;
        let site = InsertionSite::Bottom;
        let h = match handle(model)? {
            Handle::F32(i) => Handle::F32(expand_inner(i, target_depth, method, site, seed)?),
            Handle::F64(i) => Handle::F64(expand_inner(i, target_depth, method, site, seed)?),
        };
        store(out, boxed(h))
    })
}

fn batch_loss<T: Scalar>(model: &Model<T>, batch: &Batch<T>) -> R<f64> {
    model.loss(batch).map_err(fail(DgStatus::Model))
}

/// Mean next-token cross-entropy of a transformer on `batch` sequences of
/// `seq` tokens (row-major `inputs`/`targets` of length `batch * seq`).
///
/// # Safety
/// `inputs` and `targets` must point to `batch * seq` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dg_model_loss_tokens(
    model: *const DgModel,
    inputs: *const usize,
    targets: *const usize,
    batch: usize,
    seq: usize,
    out: *mut f64,
) -> DgStatus {
    guard(|| {
        if inputs.is_null() || targets.is_null() {
            return Err(Failure(DgStatus::NullPointer, "token buffers are null".into()));
        }
        let n = batch
            .checked_mul(seq)
            .ok_or_else(|| Failure(DgStatus::InvalidArgument, "batch * seq overflows".into()))?;
        let inputs = std::slice::from_raw_parts(inputs, n).to_vec();
        let targets = std::slice::from_raw_parts(targets, n).to_vec();
        let loss = match handle(model)? {
            Handle::F32(i) => batch_loss(
                &i.model,
                &Batch::Tokens {
                    inputs,
                    targets,
                    batch,
                    seq,
                },
            )?,
            Handle::F64(i) => batch_loss(
                &i.model,
                &Batch::Tokens {
                    inputs,
                    targets,
                    batch,
                    seq,
                },
            )?,
        };
        store(out, loss)
    })
}

fn regression<T: Scalar>(model: &Model<T>, x: &[f64], y: &[f64], rows: usize) -> R<f64> {
    let cfg = model.config();
    let bad = fail(DgStatus::InvalidArgument);
    let batch = Batch::Regression {
        inputs: Tensor::from_f64(&[rows, cfg.input_dim], x).map_err(&bad)?,
        targets: Tensor::from_f64(&[rows, cfg.output_dim], y).map_err(&bad)?,
    };
    batch_loss(model, &batch)
}

/// Mean-squared error of a residual MLP on `rows` examples (row-major `x` of
/// `rows * input_dim`, `y` of `rows * output_dim`).
///
/// # Safety
/// Buffers must hold the stated number of values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dg_model_loss_regression(
    model: *const DgModel,
    x: *const f64,
    y: *const f64,
    rows: usize,
    out: *mut f64,
) -> DgStatus {
    guard(|| {
        if x.is_null() || y.is_null() {
            return Err(Failure(DgStatus::NullPointer, "data buffers are null".into()));
        }
        let h = handle(model)?;
        let cfg = match h {
            Handle::F32(i) => i.model.config().clone(),
            Handle::F64(i) => i.model.config().clone(),
        };
        let x = std::slice::from_raw_parts(x, rows * cfg.input_dim);
        let y = std::slice::from_raw_parts(y, rows * cfg.output_dim);
        let loss = match h {
            Handle::F32(i) => regression(&i.model, x, y, rows)?,
            Handle::F64(i) => regression(&i.model, x, y, rows)?,
        };
        store(out, loss)
    })
}

fn schedule(kind: u32, peak: f64, warmup: f64, decay: f64, horizon: u64) -> R<ScheduleConfig> {
    let kind = match kind {
        k if k == DgSchedule::Wsd as u32 => ScheduleKind::Wsd,
        k if k == DgSchedule::Cosine as u32 => ScheduleKind::Cosine,
        k if k == DgSchedule::Constant as u32 => ScheduleKind::Constant,
        other => return Err(Failure(DgStatus::InvalidArgument, format!("unknown schedule kind {other}"))),
    };
    let s = ScheduleConfig {
        kind,
        peak_lr: peak,
        warmup_frac: warmup,
        decay_frac: decay,
        horizon,
    };
    s.validate().map_err(fail(DgStatus::InvalidArgument))?;
    Ok(s)
}

/// Learning rate at integer step `step < horizon`; `kind` is a `DgSchedule` value.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_schedule_lr(
    kind: u32,
    peak_lr: f64,
    warmup_frac: f64,
    decay_frac: f64,
    horizon: u64,
    step: u64,
    out: *mut f64,
) -> DgStatus {
    guard(|| {
        let lr = schedule(kind, peak_lr, warmup_frac, decay_frac, horizon)?
            .lr(step)
            .map_err(fail(DgStatus::InvalidArgument))?;
        store(out, lr)
    })
}

/// Fraction of the total learning-rate sum spent before step `tau`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_schedule_mass(
    kind: u32,
    peak_lr: f64,
    warmup_frac: f64,
    decay_frac: f64,
    horizon: u64,
    tau: u64,
    out: *mut f64,
) -> DgStatus {
    guard(|| {
        let s = schedule(kind, peak_lr, warmup_frac, decay_frac, horizon)?;
        if tau > horizon {
            return Err(Failure(DgStatus::InvalidArgument, format!("tau {tau} exceeds horizon {horizon}")));
        }
        store(out, s.mass(tau))
    })
}

/// `6 B (tau N_small + (T - tau) N_large)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_staged_flops(
    batch: u64,
    horizon: u64,
    tau: u64,
    n_small: u64,
    n_large: u64,
    out: *mut u64,
) -> DgStatus {
    guard(|| {
        if tau > horizon {
            return Err(Failure(DgStatus::InvalidArgument, format!("tau {tau} exceeds horizon {horizon}")));
        }
        let total = (tau as u128 * n_small as u128 + (horizon - tau) as u128 * n_large as u128)
            .checked_mul(6 * batch as u128)
            .and_then(|v| u64::try_from(v).ok())
            .ok_or_else(|| Failure(DgStatus::InvalidArgument, "FLOP count overflows 64 bits".into()))?;
        debug_assert_eq!(total, staged_flops(batch, horizon, tau, n_small, n_large));
        store(out, total)
    })
}

/// Runs one planted convex trial from a JSON trial config and writes the full
/// JSON report into `report` (up to `capacity` bytes including the NUL). The
/// required size is written to `needed` either way.
///
/// # Safety
/// `trial_json` must be NUL-terminated; `report` may be null when `capacity`
/// is 0; `bounds_hold` and `needed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dg_theory_trial(
    trial_json: *const c_char,
    seed: u64,
    tolerance: f64,
    bounds_hold: *mut bool,
    report: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> DgStatus {
    guard(|| {
        let cfg: TrialConfig = serde_json::from_str(text(trial_json, "trial_json")?).map_err(fail(DgStatus::Config))?;
        let r = run_trial(&cfg, seed).map_err(fail(DgStatus::Theory))?;
        store(bounds_hold, r.bounds_hold(tolerance))?;
        let json = serde_json::to_string(&r).map_err(fail(DgStatus::Runtime))?;
        store(needed, json.len() + 1)?;
        if !report.is_null() && capacity > json.len() {
            ptr::copy_nonoverlapping(json.as_ptr(), report.cast::<u8>(), json.len());
            report.add(json.len()).write(0);
        }
        Ok(())
    })
}

/// Trains from a TOML experiment config, writing logs and checkpoints into
/// `out_dir` (null for no files), and reports the final validation loss.
///
/// # Safety
/// `config_toml` must be NUL-terminated, `out_dir` null or NUL-terminated,
/// and `final_val_loss` valid.
#[no_mangle]
pub unsafe extern "C" fn dg_train(
    config_toml: *const c_char,
    out_dir: *const c_char,
    final_val_loss: *mut f64,
) -> DgStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_toml_str(text(config_toml, "config_toml")?).map_err(fail(DgStatus::Config))?;
        let dir = if out_dir.is_null() {
            None
        } else {
            Some(Path::new(text(out_dir, "out_dir")?))
        };
        let log = deepgrow::harness::train(&cfg, dir).map_err(|e| {
            let status = if e.exit_code() == 1 { DgStatus::Config } else { DgStatus::Runtime };
            Failure(status, e.to_string())
        })?;
        store(final_val_loss, log.final_val_loss().unwrap_or(f64::NAN))
    })
}
