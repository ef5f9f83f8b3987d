use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use deepgrow::checkpoint::{self, Checkpoint};
use deepgrow::convex::{run_trial, Mode, TeleportRule, TrialConfig};
use deepgrow::expansion::{expand_optimizer_state, expand_to, ExpansionMethod, InsertionSite, OptimizerStatePolicy};
use deepgrow::harness::plot::{loss_figures, theory_slack_figure, XAxis};
use deepgrow::harness::{
    detect_mixing, pareto_frontier, plan_expansion_timing, ExperimentConfig, HarnessError, Precision, RunLog, RunPoint,
};
use deepgrow::harness::sweep::{run_sweep, SweepConfig};
use deepgrow::harness::plot::pareto_figure;
use deepgrow::optim::{ScheduleConfig, ScheduleKind};
use deepgrow::tensor::{DType, Scalar};

#[derive(Parser)]
#[command(name = "deepgrow", version, about = "Progressive depth-expansion training engine")]
struct Cli {
    /// Experiment (train) or sweep (sweep) configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed (train, sweep) or the base trial seed (theory).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (train, sweep, theory) or file (plot, pareto).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Floating-point width in bits.
    #[arg(long, global = true, value_parser = parse_precision)]
    precision: Option<Precision>,
    #[command(subcommand)]
    command: Command,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    Precision::try_from(s.parse::<u32>().map_err(|e| e.to_string())?)
}

#[derive(Clone, Copy, ValueEnum)]
enum Site {
    Bottom,
    Top,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Inherit,
    Copy,
    Reset,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Wsd,
    Cosine,
    Constant,
}

#[derive(Clone, Copy, ValueEnum)]
enum TeleportArg {
    KeepZero,
    RandomInit,
    OracleXStar,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run from --config.
    Train,
    /// Grow a checkpoint archive in depth.
    Expand {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value = "random")]
        method: ExpansionMethod,
        #[arg(long, value_enum, default_value = "bottom")]
        site: Site,
        #[arg(long, value_enum, default_value = "inherit")]
        os_policy: Policy,
    },
    /// Run a grid sweep from --config (a sweep file).
    Sweep,
    /// Compare a progressive and a fixed-size run log.
    Mixing {
        #[arg(long)]
        prog: PathBuf,
        #[arg(long)]
        fixed: PathBuf,
        /// Expansion step; defaults to the last parameter-count change in the progressive log.
        #[arg(long)]
        tau: Option<u64>,
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        #[arg(long, default_value_t = 5)]
        window: usize,
        /// With --stable-end, also print the recommended expansion step.
        #[arg(long)]
        warmup_end: Option<u64>,
        #[arg(long)]
        stable_end: Option<u64>,
    },
    /// Pareto frontier over run logs given as LABEL=PATH.
    Pareto {
        #[arg(long = "log", required = true)]
        logs: Vec<String>,
    },
    /// Check the convex progressive-training bounds on planted problems.
    Theory {
        #[arg(long, default_value_t = 100)]
        trials: u64,
        #[arg(long, default_value_t = 8)]
        d_w: usize,
        #[arg(long, default_value_t = 8)]
        d_x: usize,
        #[arg(long, default_value_t = 64)]
        m: usize,
        #[arg(long, default_value_t = 2000)]
        steps: u64,
        #[arg(long, value_enum, default_value = "wsd")]
        schedule: Shape,
        #[arg(long, default_value_t = 0.02)]
        peak_lr: f64,
        /// Expansion steps as fractions of the horizon.
        #[arg(long, value_delimiter = ',', default_value = "0,0.3,0.5,0.8")]
        taus: Vec<f64>,
        #[arg(long, value_enum, default_value = "random-init")]
        teleport: TeleportArg,
        /// Mini-batch size for stochastic subgradients (full batch if absent).
        #[arg(long)]
        minibatch: Option<usize>,
        #[arg(long, default_value_t = 1e-12)]
        tolerance: f64,
    },
    /// Emit an SVG figure from run logs given as LABEL=PATH.
    Plot {
        #[arg(long, default_value = "loss-vs-steps")]
        kind: deepgrow::harness::plot::PlotKind,
        #[arg(long = "log")]
        logs: Vec<String>,
        /// theory-slack input: a theory.jsonl file.
        #[arg(long)]
        theory: Option<PathBuf>,
        #[arg(long)]
        log_y: bool,
    },
}

type Result<T> = std::result::Result<T, HarnessError>;

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn labeled(specs: &[String]) -> Result<Vec<(String, RunLog)>> {
    specs
        .iter()
        .map(|s| {
            let (label, path) = match s.split_once('=') {
                Some((l, p)) => (l.to_string(), PathBuf::from(p)),
                None => {
                    let p = PathBuf::from(s);
                    let l = p.parent().and_then(|d| d.file_name()).map_or(s.clone(), |n| n.to_string_lossy().into());
                    (l, p)
                }
            };
            Ok((label, RunLog::read_csv(&path)?))
        })
        .collect()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train => {
            let path = cli.config.ok_or_else(|| config_err("train needs --config"))?;
            let mut cfg = ExperimentConfig::load(&path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(p) = cli.precision {
                cfg.precision = p;
            }
            let out = cli.out.or(cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("runs/latest"));
            let log = deepgrow::harness::train(&cfg, Some(&out))?;
            println!(
                "trained {} steps: final val loss {:.6}, FLOPs {}, {} expansion(s); logs in {}",
                log.records.last().map_or(0, |r| r.step),
                log.final_val_loss().unwrap_or(f64::NAN),
                log.total_flops(),
                log.events.len(),
                out.display()
            );
        }
        Command::Expand {
            input,
            output,
            depth,
            method,
            site,
            os_policy,
        } => {
            let site = match site {
                Site::Bottom => InsertionSite::Bottom,
                Site::Top => InsertionSite::Top,
            };
            let policy = match os_policy {
                Policy::Inherit => OptimizerStatePolicy::Inherit,
                Policy::Copy => OptimizerStatePolicy::Copy,
                Policy::Reset => OptimizerStatePolicy::Reset,
            };
            let seed = cli.seed.unwrap_or(0);
            match checkpoint::stored_dtype(&input)? {
                DType::F32 => expand_file::<f32>(&input, &output, depth, method, site, policy, seed)?,
                DType::F64 => expand_file::<f64>(&input, &output, depth, method, site, policy, seed)?,
            }
        }
        Command::Sweep => {
            let path = cli.config.ok_or_else(|| config_err("sweep needs --config"))?;
            let mut sweep = SweepConfig::load(&path)?;
            if let deepgrow::harness::sweep::BaseConfig::Inline(base) = &mut sweep.base {
                if let Some(s) = cli.seed {
                    base.seed = s;
                }
                if let Some(p) = cli.precision {
                    base.precision = p;
                }
            }
            let out = cli.out.unwrap_or_else(|| PathBuf::from("runs/sweep"));
            let results = run_sweep(&sweep, Some(&out))?;
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for r in &results {
                let _ = writeln!(w, "{}", serde_json::to_string(r).expect("result serializes"));
            }
            let failed = results.iter().filter(|r| r.error.is_some()).count();
            eprintln!("{} runs, {} failed; summary in {}", results.len(), failed, out.display());
        }
        Command::Mixing {
            prog,
            fixed,
            tau,
            epsilon,
            window,
            warmup_end,
            stable_end,
        } => {
            let p = RunLog::read_csv(&prog)?;
            let f = RunLog::read_csv(&fixed)?;
            let tau = match tau.or_else(|| p.expansion_steps().last().copied()) {
                Some(t) => t,
                None => return Err(config_err("no expansion found in the progressive log; pass --tau")),
            };
            let report = detect_mixing(&p, &f, tau, epsilon, window)?;
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
            eprintln!("{}", report.summary());
            if let (Some(stable), Some(t_mix)) = (stable_end, report.t_mix) {
                let advice = plan_expansion_timing(warmup_end.unwrap_or(0), stable, t_mix);
                if let Some(w) = &advice.warning {
                    eprintln!("warning: {w}");
                }
                eprintln!("recommended expansion step: {}", advice.tau);
            }
        }
        Command::Pareto { logs } => {
            let runs: Vec<RunPoint> = labeled(&logs)?
                .into_iter()
                .filter_map(|(label, log)| {
                    Some(RunPoint {
                        flops: log.total_flops(),
                        loss: log.final_val_loss()?,
                        label,
                    })
                })
                .collect();
            for p in pareto_frontier(&runs) {
                println!("{}", serde_json::to_string(&p).expect("point serializes"));
            }
            if let Some(out) = cli.out {
                pareto_figure(&runs).save(&out)?;
            }
        }
        Command::Theory {
            trials,
            d_w,
            d_x,
            m,
            steps,
            schedule,
            peak_lr,
            taus,
            teleport,
            minibatch,
            tolerance,
        } => theory(
            cli.seed.unwrap_or(0),
            cli.out,
            TheoryArgs {
                trials,
                d_w,
                d_x,
                m,
                steps,
                schedule,
                peak_lr,
                taus,
                teleport,
                minibatch,
                tolerance,
            },
        )?,
        Command::Plot {
            kind,
            logs,
            theory,
            log_y,
        } => {
            use deepgrow::harness::plot::PlotKind;
            let out = cli.out.unwrap_or_else(|| PathBuf::from("plot.svg"));
            match kind {
                PlotKind::LossVsSteps | PlotKind::LossVsFlops => {
                    let logs = labeled(&logs)?;
                    if logs.is_empty() {
                        return Err(config_err("plot needs at least one --log"));
                    }
                    let x = if kind == PlotKind::LossVsSteps { XAxis::Steps } else { XAxis::Flops };
                    for (name, fig) in loss_figures(&logs, x, log_y) {
                        let path = if name == "entire" {
                            out.clone()
                        } else {
                            out.with_file_name(format!(
                                "{}_{name}.svg",
                                out.file_stem().map_or("plot".into(), |s| s.to_string_lossy())
                            ))
                        };
                        fig.save(&path)?;
                        println!("{}", path.display());
                    }
                }
                PlotKind::Pareto => {
                    let runs: Vec<RunPoint> = labeled(&logs)?
                        .into_iter()
                        .filter_map(|(label, log)| {
                            Some(RunPoint {
                                flops: log.total_flops(),
                                loss: log.final_val_loss()?,
                                label,
                            })
                        })
                        .collect();
                    pareto_figure(&runs).save(&out)?;
                    println!("{}", out.display());
                }
                PlotKind::TheorySlack => {
                    let path = theory.ok_or_else(|| config_err("theory-slack needs --theory <theory.jsonl>"))?;
                    let text = std::fs::read_to_string(&path).map_err(|source| HarnessError::Io {
                        path: path.display().to_string(),
                        source,
                    })?;
                    let mut prog = Vec::new();
                    let mut fixed = Vec::new();
                    for line in text.lines().filter(|l| !l.trim().is_empty()) {
                        let r: deepgrow::convex::TrialReport =
                            serde_json::from_str(line).map_err(|e| HarnessError::Data(e.to_string()))?;
                        let x = r.tau as f64 / r.horizon as f64;
                        prog.push((x, r.progressive.slack));
                        fixed.push((x, r.fixed.slack));
                    }
                    theory_slack_figure(&[("progressive".into(), prog), ("fixed-size".into(), fixed)]).save(&out)?;
                    println!("{}", out.display());
                }
            }
        }
    }
    Ok(())
}

fn expand_file<T: Scalar>(
    input: &Path,
    output: &Path,
    depth: usize,
    method: ExpansionMethod,
    site: InsertionSite,
    policy: OptimizerStatePolicy,
    seed: u64,
) -> Result<()> {
    let Checkpoint { model, optimizer, step } = checkpoint::load::<T>(input)?;
    let target = model.config().clone().with_depth(depth);
    let grown = expand_to(&model, &target, method, site, seed)?;
    let state = optimizer.map(|s| expand_optimizer_state(&s, &grown, policy)).transpose()?;
    checkpoint::save(output, &grown.model, state.as_ref(), step)?;
    println!(
        "expanded {} -> {} blocks with {} {}; parameters {} -> {}",
        model.depth(),
        grown.model.depth(),
        method.name(),
        grown.plan,
        model.param_count(),
        grown.model.param_count()
    );
    Ok(())
}

struct TheoryArgs {
    trials: u64,
    d_w: usize,
    d_x: usize,
    m: usize,
    steps: u64,
    schedule: Shape,
    peak_lr: f64,
    taus: Vec<f64>,
    teleport: TeleportArg,
    minibatch: Option<usize>,
    tolerance: f64,
}

fn theory(seed: u64, out: Option<PathBuf>, a: TheoryArgs) -> Result<()> {
    let kind = match a.schedule {
        Shape::Wsd => ScheduleKind::Wsd,
        Shape::Cosine => ScheduleKind::Cosine,
        Shape::Constant => ScheduleKind::Constant,
    };
    let schedule = ScheduleConfig {
        kind,
        peak_lr: a.peak_lr,
        warmup_frac: 0.02,
        decay_frac: 0.1,
        horizon: a.steps,
    };
    schedule.validate().map_err(|e| config_err(e.to_string()))?;
    let mut lines = String::new();
    let mut summary = Vec::new();
    for &frac in &a.taus {
        if !(0.0..=1.0).contains(&frac) {
            return Err(config_err(format!("tau fraction {frac} is outside [0, 1]")));
        }
        let tau = (frac * a.steps as f64).round() as u64;
        let mut cfg = TrialConfig::new(a.d_w, a.d_x, a.m, schedule, tau);
        cfg.teleport = match a.teleport {
            TeleportArg::KeepZero => TeleportRule::KeepZero,
            TeleportArg::RandomInit => TeleportRule::RandomInit,
            TeleportArg::OracleXStar => TeleportRule::OracleXStar,
        };
        if let Some(size) = a.minibatch {
            cfg.mode = Mode::Minibatch { size, seed };
        }
        let (mut held, mut worst) = (0u64, f64::INFINITY);
        for k in 0..a.trials {
            let r = run_trial(&cfg, seed.wrapping_add(k))?;
            if r.bounds_hold(a.tolerance) {
                held += 1;
            }
            worst = worst.min(r.progressive.slack).min(r.fixed.slack);
            lines.push_str(&serde_json::to_string(&r).expect("report serializes"));
            lines.push('\n');
        }
        summary.push(format!(
            "tau = {tau:>6} ({frac:.2}T): bounds hold in {held}/{} trials, worst slack {worst:.3e}",
            a.trials
        ));
    }
    match out {
        Some(dir) => {
            std::fs::create_dir_all(&dir).map_err(|source| HarnessError::Io {
                path: dir.display().to_string(),
                source,
            })?;
            write_file(&dir.join("theory.jsonl"), &lines)?;
        }
        None => print!("{lines}"),
    }
    for s in summary {
        eprintln!("{s}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
