//! Grid sweeps over expansion step, method, target depth and learning rate.
//! Runs are independent and execute on a bounded pool of scoped threads.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{EventConfig, ExperimentConfig, Precision};
use super::data::{generate_dataset, Dataset};
use super::pareto::{pareto_frontier, RunPoint};
use super::plot::pareto_figure;
use super::runlog::RunLog;
use super::train::train_on;
use super::HarnessError;
use crate::expansion::ExpansionMethod;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseConfig {
    Path(PathBuf),
    Inline(Box<ExperimentConfig>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    /// Expansion steps; each gives a progressive run from the base depth.
    #[serde(default)]
    pub taus: Vec<u64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<ExpansionMethod>,
    /// Target depths; empty means the base depth.
    #[serde(default)]
    pub depths: Vec<usize>,
    /// Peak learning rates; empty means the base value.
    #[serde(default)]
    pub lrs: Vec<f64>,
}

fn default_methods() -> Vec<ExpansionMethod> {
    vec![ExpansionMethod::Random]
}

fn default_concurrency() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: BaseConfig,
    pub grid: Grid,
    /// Also train a fixed-size run at every (depth, lr).
    #[serde(default)]
    pub include_fixed: bool,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

impl SweepConfig {
    /// Parses a sweep file; a `base` path is resolved relative to `dir`.
    pub fn from_toml_str(text: &str, dir: &Path) -> Result<Self, HarnessError> {
        let mut cfg: SweepConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if let BaseConfig::Path(p) = &cfg.base {
            let base = ExperimentConfig::load(&dir.join(p))?;
            cfg.base = BaseConfig::Inline(Box::new(base));
        }
        if cfg.concurrency == 0 {
            return Err(HarnessError::Config("concurrency must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn base(&self) -> Result<&ExperimentConfig, HarnessError> {
        match &self.base {
            BaseConfig::Inline(c) => Ok(c),
            BaseConfig::Path(p) => Err(HarnessError::Config(format!("unresolved base config {}", p.display()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub label: String,
    pub tau: Option<u64>,
    pub method: Option<ExpansionMethod>,
    pub depth: usize,
    pub lr: f64,
    pub config: ExperimentConfig,
}

/// Every run of the grid, in a deterministic order.
pub fn expand_grid(sweep: &SweepConfig) -> Result<Vec<SweepRun>, HarnessError> {
    let base = sweep.base()?;
    let depths = if sweep.grid.depths.is_empty() {
        vec![base.final_model_config().depth]
    } else {
        sweep.grid.depths.clone()
    };
    let lrs = if sweep.grid.lrs.is_empty() {
        vec![base.optimizer.peak_lr]
    } else {
        sweep.grid.lrs.clone()
    };
    let mut runs = Vec::new();
    for &depth in &depths {
        for &lr in &lrs {
            let mut cfg = base.clone();
            cfg.optimizer.peak_lr = lr;
            if sweep.include_fixed || sweep.grid.taus.is_empty() {
                let mut fixed = cfg.clone();
                fixed.model.depth = depth;
                fixed.events.clear();
                runs.push(SweepRun {
                    label: format!("fixed_d{depth}_lr{lr}"),
                    tau: None,
                    method: None,
                    depth,
                    lr,
                    config: fixed,
                });
            }
            for &tau in &sweep.grid.taus {
                for &method in &sweep.grid.methods {
                    let mut prog = cfg.clone();
                    prog.events = vec![EventConfig {
                        step: tau,
                        target_depth: depth,
                        method,
                        site: Default::default(),
                        os_policy: Default::default(),
                        batch_size: None,
                        seed: None,
                    }];
                    runs.push(SweepRun {
                        label: format!("prog_tau{tau}_{}_d{depth}_lr{lr}", method.name()),
                        tau: Some(tau),
                        method: Some(method),
                        depth,
                        lr,
                        config: prog,
                    });
                }
            }
        }
    }
    for r in &runs {
        r.config
            .validate()
            .map_err(|e| HarnessError::Config(format!("{}: {e}", r.label)))?;
    }
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub label: String,
    pub tau: Option<u64>,
    pub method: Option<String>,
    pub depth: usize,
    pub lr: f64,
    pub flops: Option<u64>,
    pub final_val_loss: Option<f64>,
    pub error: Option<String>,
}

fn run_one(run: &SweepRun, data: &Dataset, dir: Option<&Path>) -> Result<RunLog, HarnessError> {
    Ok(match run.config.precision {
        Precision::F32 => train_on::<f32>(&run.config, data, dir)?.log,
        Precision::F64 => train_on::<f64>(&run.config, data, dir)?.log,
    })
}

/// Executes every run with at most `concurrency` in flight. Failed runs are
/// reported in their result instead of aborting the sweep. With `out`, each
/// run writes into `out/<label>/` and the sweep writes `summary.csv`,
/// `pareto.json` and `pareto.svg`.
pub fn run_sweep(sweep: &SweepConfig, out: Option<&Path>) -> Result<Vec<SweepResult>, HarnessError> {
    let runs = expand_grid(sweep)?;
    let base = sweep.base()?;
    let data = generate_dataset(&base.data, base.data_seed)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SweepResult>>> = Mutex::new(vec![None; runs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..sweep.concurrency.min(runs.len()).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(run) = runs.get(i) else { break };
                let dir = out.map(|o| o.join(&run.label));
                let outcome = run_one(run, &data, dir.as_deref());
                let result = SweepResult {
                    label: run.label.clone(),
                    tau: run.tau,
                    method: run.method.map(|m| m.name().to_string()),
                    depth: run.depth,
                    lr: run.lr,
                    flops: outcome.as_ref().ok().map(|l| l.total_flops()),
                    final_val_loss: outcome.as_ref().ok().and_then(|l| l.final_val_loss()),
                    error: outcome.err().map(|e| e.to_string()),
                };
                log::info!("sweep run {} done", run.label);
                results.lock().expect("no poisoned results")[i] = Some(result);
            });
        }
    });
    let results: Vec<SweepResult> = results
        .into_inner()
        .expect("no poisoned results")
        .into_iter()
        .map(|r| r.expect("every run reports"))
        .collect();
    if let Some(dir) = out {
        write_outputs(dir, &results)?;
    }
    Ok(results)
}

pub fn run_points(results: &[SweepResult]) -> Vec<RunPoint> {
    results
        .iter()
        .filter_map(|r| {
            Some(RunPoint {
                label: r.label.clone(),
                flops: r.flops?,
                loss: r.final_val_loss.filter(|l| l.is_finite())?,
            })
        })
        .collect()
}

fn write_outputs(dir: &Path, results: &[SweepResult]) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::io(dir, source))?;
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::Data(e.to_string()))?;
    for r in results {
        w.serialize(r).map_err(|e| HarnessError::Data(e.to_string()))?;
    }
    w.flush().map_err(|source| HarnessError::io(&path, source))?;
    let points = run_points(results);
    let frontier = pareto_frontier(&points);
    let json = serde_json::to_string_pretty(&frontier).expect("frontier serializes");
    let pj = dir.join("pareto.json");
    std::fs::write(&pj, json).map_err(|source| HarnessError::io(&pj, source))?;
    if !points.is_empty() {
        pareto_figure(&points).save(&dir.join("pareto.svg"))?;
    }
    Ok(())
}
