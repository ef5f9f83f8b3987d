//! Acceptance criteria, one report line each.
//!
//! Criteria 7, 8, 9, 10 and 12 train desk-scale transformers for hours; they
//! run only with `DEEPGROW_SLOW=1`. Without it each prints `NOT RUN` together
//! with a reduced-scale smoke run of the same pipeline. The binary exits
//! non-zero if any executed criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use deepgrow::autodiff::check::{finite_difference_gradient, relative_error};
use deepgrow::autodiff::{ParamId, Tape, Var};
use deepgrow::convex::{run_trial, TrialConfig};
use deepgrow::expansion::{expand_to, ExpansionMethod, InsertionSite};
use deepgrow::harness::{
    detect_mixing, staged_flops, staged_ratio, train, DataSpec, EventConfig, ExperimentConfig, MixingConfig,
    Precision, RunLog, ScheduleSection, TrainingSection,
};
use deepgrow::model::{block_layout, Batch, Family, Model, ModelConfig, SlotKind};
use deepgrow::optim::{newton_schulz_orthogonalize, OptimizerConfig, ScheduleConfig, ScheduleKind};
use deepgrow::tensor::Tensor;

enum Outcome {
    Pass(String),
    Fail(String),
    NotRun(String),
}

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let over = budget.filter(|b| took > *b);
        let (tag, detail) = match outcome {
            Outcome::Pass(d) if over.is_none() => ("PASS", d),
            Outcome::Pass(d) => ("FAIL", format!("{d}; over the {:?} budget", over.unwrap())),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::NotRun(d) => ("NOT RUN", d),
        };
        if tag == "FAIL" {
            self.failed += 1;
        }
        println!("[{tag}] criterion {id:>2} {name}: {detail} ({:.1}s)", took.as_secs_f64());
    }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

// ---------------------------------------------------------------- criterion 1

/// Worst relative error between reverse-mode and central-difference gradients
/// of `mse(op(inputs), target)` with respect to every input.
fn op_gradient_error(inputs: &[Tensor<f64>], op: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var, rng: &mut ChaCha8Rng) -> f64 {
    let eval = |xs: &[Tensor<f64>], target: Option<&Tensor<f64>>| -> (Tensor<f64>, f64, Vec<Tensor<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().enumerate().map(|(i, x)| tape.param(ParamId(i as u64), x)).collect();
        let out = op(&mut tape, &vars);
        let y = tape.value(out).clone();
        let Some(t) = target else {
            return (y, 0.0, Vec::new());
        };
        let loss = tape.mse(out, t).unwrap();
        let l = tape.value(loss).data()[0];
        let grads = tape.backward(loss).unwrap();
        let g = (0..xs.len())
            .map(|i| {
                grads
                    .param(ParamId(i as u64))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(xs[i].shape()))
            })
            .collect();
        (y, l, g)
    };
    let (y, _, _) = eval(inputs, None);
    let target = gaussian(rng, y.shape(), 1.0);
    let (_, _, analytic) = eval(inputs, Some(&target));
    let mut worst = 0.0f64;
    for i in 0..inputs.len() {
        let fd = finite_difference_gradient(
            |x| {
                let mut xs = inputs.to_vec();
                xs[i] = x.clone();
                eval(&xs, Some(&target)).1
            },
            &inputs[i],
            1e-5,
        );
        worst = worst.max(relative_error(&analytic[i], &fd));
    }
    worst
}

type OpCase = (&'static str, Box<dyn Fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>)>);

fn op_cases() -> Vec<OpCase> {
    vec![
        (
            "matmul",
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, k, n) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
                (
                    vec![gaussian(rng, &[2, m, k], 1.0), gaussian(rng, &[k, n], 1.0)],
                    Box::new(|t: &mut Tape<f64>, v: &[Var]| t.matmul(v[0], v[1]).unwrap()) as Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>,
                )
            }),
        ),
        (
            "add",
            Box::new(|rng: &mut ChaCha8Rng| {
                let s = [rng.random_range(1..4), rng.random_range(1..5)];
                (
                    vec![gaussian(rng, &s, 1.0), gaussian(rng, &s, 1.0)],
                    Box::new(|t: &mut Tape<f64>, v: &[Var]| t.add(v[0], v[1]).unwrap()) as Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>,
                )
            }),
        ),
        (
            "add_row",
            Box::new(|rng: &mut ChaCha8Rng| {
                let n = rng.random_range(1..5);
                (
                    vec![gaussian(rng, &[3, n], 1.0), gaussian(rng, &[n], 1.0)],
                    Box::new(|t: &mut Tape<f64>, v: &[Var]| t.add_row(v[0], v[1]).unwrap()) as Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>,
                )
            }),
        ),
        (
            "scale",
            Box::new(|rng: &mut ChaCha8Rng| {
                let c: f64 = rng.random_range(-2.0..2.0);
                (
                    vec![gaussian(rng, &[3, 4], 1.0)],
                    Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.scale(v[0], c).unwrap()) as Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>,
                )
            }),
        ),
        (
            "gelu",
            Box::new(|rng: &mut ChaCha8Rng| {
                (
                    vec![gaussian(rng, &[4, 5], 2.0)],
                    Box::new(|t: &mut Tape<f64>, v: &[Var]| t.gelu(v[0]).unwrap()) as Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>,
                )
            }),
        ),
        (
            "relu",
            Box::new(|rng: &mut ChaCha8Rng| {
                // Keep inputs away from the kink so central differences are exact.
                let mut x = gaussian(rng, &[4, 5], 1.0);
                x.data_mut().iter_mut().for_each(|v| *v += 0.1f64.copysign(*v));
                (
                    vec![x],
                    Box::new(|t: &mut Tape<f64>, v: &[Var]| t.relu(v[0]).unwrap()) as Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>,
                )
            }),
        ),
        (
            "layer_norm",
            Box::new(|rng: &mut ChaCha8Rng| {
                let n = rng.random_range(2..7);
                (
                    vec![gaussian(rng, &[3, n], 1.5), gaussian(rng, &[n], 1.0)],
                    Box::new(|t: &mut Tape<f64>, v: &[Var]| t.layer_norm(v[0], v[1], 1e-5).unwrap())
                        as Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>,
                )
            }),
        ),
        (
            "embedding",
            Box::new(|rng: &mut ChaCha8Rng| {
                let idx: Vec<usize> = (0..6).map(|_| rng.random_range(0..5)).collect();
                (
                    vec![gaussian(rng, &[5, 3], 1.0)],
                    Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.embedding(v[0], &idx, &[2, 3]).unwrap())
                        as Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>,
                )
            }),
        ),
        (
            "causal_attention",
            Box::new(|rng: &mut ChaCha8Rng| {
                let (b, t, d, heads) = (2, rng.random_range(1..5), 4, 2);
                let s = 1.0 / (d as f64).sqrt();
                (
                    vec![
                        gaussian(rng, &[b, t, d], 1.0),
                        gaussian(rng, &[d, d], s),
                        gaussian(rng, &[d, d], s),
                        gaussian(rng, &[d, d], s),
                        gaussian(rng, &[d, d], s),
                    ],
                    Box::new(move |tp: &mut Tape<f64>, v: &[Var]| {
                        tp.causal_attention(v[0], v[1], v[2], v[3], v[4], heads).unwrap()
                    }) as Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>,
                )
            }),
        ),
        (
            "softmax_cross_entropy",
            Box::new(|rng: &mut ChaCha8Rng| {
                let targets: Vec<usize> = (0..4).map(|_| rng.random_range(0..6)).collect();
                (
                    vec![gaussian(rng, &[2, 2, 6], 2.0)],
                    Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.softmax_cross_entropy(v[0], &targets).unwrap())
                        as Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>,
                )
            }),
        ),
        (
            "mse",
            Box::new(|rng: &mut ChaCha8Rng| {
                let target = gaussian(rng, &[3, 4], 1.0);
                (
                    vec![gaussian(rng, &[3, 4], 1.0)],
                    Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.mse(v[0], &target).unwrap())
                        as Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>,
                )
            }),
        ),
        (
            "sum",
            Box::new(|rng: &mut ChaCha8Rng| {
                (
                    vec![gaussian(rng, &[3, 4], 1.0)],
                    Box::new(|t: &mut Tape<f64>, v: &[Var]| t.sum(v[0]).unwrap()) as Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>,
                )
            }),
        ),
    ]
}

fn random_token_batch(rng: &mut ChaCha8Rng, vocab: usize, b: usize, t: usize) -> Batch<f64> {
    Batch::Tokens {
        inputs: (0..b * t).map(|_| rng.random_range(0..vocab)).collect(),
        targets: (0..b * t).map(|_| rng.random_range(0..vocab)).collect(),
        batch: b,
        seq: t,
    }
}

fn random_regression_batch(rng: &mut ChaCha8Rng, cfg: &ModelConfig, rows: usize) -> Batch<f64> {
    Batch::Regression {
        inputs: gaussian(rng, &[rows, cfg.input_dim], 1.0),
        targets: gaussian(rng, &[rows, cfg.output_dim], 1.0),
    }
}

/// Worst relative error of the full model gradient against central
/// differences, over every parameter tensor of the model.
fn model_gradient_error(model: &Model<f64>, batch: &Batch<f64>) -> f64 {
    let mut m = model.clone();
    m.compute_grads(batch).unwrap();
    let mut worst = 0.0f64;
    let ids: Vec<ParamId> = m.parameters().map(|p| p.id()).collect();
    for id in ids {
        let analytic = m.parameter(id).unwrap().grad().clone();
        let x0 = m.parameter(id).unwrap().value().clone();
        let mut probe = m.clone();
        let fd = finite_difference_gradient(
            |x| {
                *probe.parameters_mut().find(|p| p.id() == id).unwrap().value_mut() = x.clone();
                probe.loss(batch).unwrap()
            },
            &x0,
            1e-5,
        );
        worst = worst.max(relative_error(&analytic, &fd));
    }
    worst
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for (name, make) in op_cases() {
        for _ in 0..50 {
            let (inputs, op) = make(&mut rng);
            let e = op_gradient_error(&inputs, op.as_ref(), &mut rng);
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(e);
        }
    }
    for k in 0..50u64 {
        let depth = rng.random_range(0..3);
        let cfg = ModelConfig {
            heads: Some(2),
            head_dim: 4,
            ..ModelConfig::transformer(depth, 8, 7, 4).with_seed(k)
        };
        let model = Model::<f64>::build(&cfg).unwrap();
        let seq = rng.random_range(1..5);
        let batch = random_token_batch(&mut rng, 7, 2, seq);
        let e = model_gradient_error(&model, &batch);
        let w = worst.entry("tiny_transformer").or_insert(0.0);
        *w = w.max(e);

        let cfg = ModelConfig::mlp(depth, 3, 6, 2).with_seed(k);
        let model = Model::<f64>::build(&cfg).unwrap();
        let batch = random_regression_batch(&mut rng, &cfg, 4);
        let e = model_gradient_error(&model, &batch);
        let w = worst.entry("residual_mlp").or_insert(0.0);
        *w = w.max(e);
    }
    let (name, max) = worst
        .iter()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(n, v)| (*n, *v))
        .unwrap();
    verdict(
        max < 1e-4,
        format!(
            "{} operators + 2 model families x 50 instances, worst rel. error {max:.2e} ({name}), limit 1e-4",
            worst.len() - 2
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_preserving = 0.0f64;
    let mut least_changing = f64::INFINITY;
    let mut checked = 0usize;
    for family in [Family::TinyTransformer, Family::ResidualMlp] {
        for source in [0usize, 1, 3] {
            let base = match family {
                Family::TinyTransformer => ModelConfig::transformer(source, 32, 16, 8),
                Family::ResidualMlp => ModelConfig::mlp(source, 4, 16, 3),
            };
            for target in [4usize, 6, 12] {
                for method in ExpansionMethod::ALL {
                    if method.copies() && source == 0 {
                        continue;
                    }
                    let small = Model::<f64>::build(&base.clone().with_seed(rng.random())).unwrap();
                    let grown = expand_to(&small, &base.clone().with_depth(target), method, InsertionSite::Bottom, rng.random())
                        .unwrap()
                        .model;
                    let mut deltas = Vec::with_capacity(20);
                    for _ in 0..20 {
                        let batch = match family {
                            Family::TinyTransformer => random_token_batch(&mut rng, 16, 2, 8),
                            Family::ResidualMlp => random_regression_batch(&mut rng, &base, 8),
                        };
                        let (a, b) = (small.loss(&batch).unwrap(), grown.loss(&batch).unwrap());
                        deltas.push(((a - b) / a).abs());
                    }
                    deltas.sort_by(f64::total_cmp);
                    checked += 1;
                    if method.function_preserving() {
                        worst_preserving = worst_preserving.max(deltas[19]);
                    } else {
                        // The signed loss change can cross zero on an individual
                        // batch, so "generic" is judged on the median batch.
                        least_changing = least_changing.min(deltas[10]);
                    }
                }
            }
        }
    }
    verdict(
        worst_preserving <= 1e-10 && least_changing > 1e-3,
        format!(
            "{checked} (family, depth pair, method) cases x 20 batches: preserving methods max rel. delta {worst_preserving:.1e} (limit 1e-10), non-preserving min over cases of median rel. delta {least_changing:.2e} (must exceed 1e-3)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn svd_top(t: &Tensor<f64>) -> f64 {
    let (r, c) = t.dims2().unwrap();
    let m = DMatrix::from_row_slice(r, c, &t.to_f64_vec());
    m.singular_values().max()
}

fn criterion_3() -> Outcome {
    let mut worst_target = 0.0f64;
    let mut worst_oracle = 0.0f64;
    let mut count = 0;
    let configs = [ModelConfig::transformer(2, 64, 32, 16), ModelConfig::mlp(2, 8, 48, 4)];
    for (k, cfg) in configs.iter().enumerate() {
        let small = Model::<f64>::build(&cfg.clone().with_seed(k as u64)).unwrap();
        let grown = expand_to(&small, &cfg.clone().with_depth(6), ExpansionMethod::Random, InsertionSite::Bottom, 9)
            .unwrap()
            .model;
        let layout = block_layout(cfg);
        for model in [&small, &grown] {
            let power = model.spectral_norms();
            for block in model.blocks() {
                for (slot, p) in layout.iter().zip(block) {
                    let SlotKind::Linear { n_in, n_out } = slot.kind else { continue };
                    let target = (n_out as f64 / n_in as f64).sqrt();
                    let est = power[&p.id()];
                    worst_target = worst_target.max((est - target).abs());
                    worst_oracle = worst_oracle.max((est - svd_top(p.value())).abs());
                    count += 1;
                }
            }
        }
    }
    verdict(
        worst_target <= 1e-3 && worst_oracle <= 1e-3,
        format!(
            "{count} hidden matrices after build and random expansion: max |sigma - sqrt(n_out/n_in)| {worst_target:.1e}, power iteration vs SVD {worst_oracle:.1e} (limits 1e-3)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut outside = 0;
    let mut n = 0;
    while n < 100 {
        let g = gaussian(&mut rng, &[64, 64], 1.0);
        let sv = DMatrix::from_row_slice(64, 64, g.data()).singular_values();
        if sv.max() / sv.min() >= 100.0 {
            continue;
        }
        n += 1;
        let out = newton_schulz_orthogonalize(&g, 5).unwrap().value;
        let s = DMatrix::from_row_slice(64, 64, out.data()).singular_values();
        let (a, b) = (s.min(), s.max());
        lo = lo.min(a);
        hi = hi.max(b);
        if a < 0.7 || b > 1.3 {
            outside += 1;
        }
    }
    verdict(
        outside == 0,
        format!(
            "100 Gaussian 64x64 matrices with cond < 100, 5 steps: singular values span [{lo:.3}, {hi:.3}], {outside} matrices leave [0.7, 1.3]"
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Outcome {
    let horizon = 2000;
    let schedule = ScheduleConfig::wsd(0.02, 0.02, 0.1, horizon);
    let mut worst_slack = f64::INFINITY;
    let mut worst_margin = f64::INFINITY;
    let mut failures = 0;
    let mut violations = 0;
    for frac in [0.0, 0.3, 0.5, 0.8] {
        let tau = (frac * horizon as f64) as u64;
        let cfg = TrialConfig::new(8, 8, 64, schedule, tau);
        for seed in 0..100 {
            let r = run_trial(&cfg, seed).unwrap();
            worst_slack = worst_slack.min(r.fixed.slack).min(r.progressive.slack);
            worst_margin = worst_margin
                .min(r.per_step_fixed.worst_margin)
                .min(r.per_step_progressive.worst_margin);
            violations += r.per_step_fixed.violations + r.per_step_progressive.violations;
            if !r.bounds_hold(1e-12) {
                failures += 1;
            }
        }
    }
    verdict(
        failures == 0 && violations == 0 && worst_slack >= -1e-12,
        format!(
            "400 planted trials (tau in 0, .3T, .5T, .8T): {} / 400 hold, min bound slack {worst_slack:.3e}, per-step violations {violations}, min per-step margin {worst_margin:.3e}",
            400 - failures
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6() -> Outcome {
    let horizon = 10_000;
    let wsd = ScheduleConfig::wsd(1.0, 0.02, 0.1, horizon);
    let cos = ScheduleConfig::cosine(1.0, 0.02, horizon);
    let (mw, mc) = (wsd.mass(8000), cos.mass(8000));
    let ordered = (2001..9000).all(|t| wsd.mass(t) < cos.mass(t));
    verdict(
        (mw - 0.84).abs() <= 0.01 && (mc - 0.99).abs() <= 0.01 && ordered,
        format!("mass at 0.8T: WSD {mw:.4} (0.84 +- 0.01), cosine {mc:.4} (0.99 +- 0.01); WSD < cosine on (0.2T, 0.9T): {ordered}"),
    )
}

// ---------------------------------------------------------------- criterion 11

fn criterion_11() -> Outcome {
    let mut cfg = ExperimentConfig {
        seed: 0,
        data_seed: 0,
        precision: Precision::F64,
        output_dir: None,
        model: ModelConfig::mlp(1, 4, 16, 2),
        data: DataSpec::MlpRegression {
            input_dim: 4,
            output_dim: 2,
            samples: 500,
            teacher_seed: 3,
            teacher_hidden: 16,
            noise: 0.0,
        },
        optimizer: OptimizerConfig::muon_nsgd(0.01),
        schedule: ScheduleSection {
            kind: ScheduleKind::Wsd,
            warmup_frac: 0.02,
            decay_frac: 0.1,
        },
        training: training(100, 32, 1, 10, 2),
        events: vec![event(60, 4)],
        mixing: MixingConfig::default(),
    };
    let log = train(&cfg, None).unwrap();
    let n_small = Model::<f64>::build(&cfg.model_config()).unwrap().param_count();
    let n_large = Model::<f64>::build(&cfg.final_model_config()).unwrap().param_count();
    let closed = staged_flops(32, 100, 60, n_small, n_large);
    cfg.events.clear();
    cfg.model.depth = 4;
    let fixed = train(&cfg, None).unwrap();
    let (num, den) = staged_ratio(10_000, 8_000, 676, 676 * 50);
    let exact = num * 1000 == den * 216;
    verdict(
        log.total_flops() == closed && fixed.total_flops() == 6 * 32 * 100 * n_large && exact,
        format!(
            "logged {} = closed form {closed}; tau = 0 run {} = 6BTN; N_s = 0.02 N_l at 0.8T gives {num}/{den} = {}",
            log.total_flops(),
            fixed.total_flops(),
            num as f64 / den as f64
        ),
    )
}

// ----------------------------------------------------- slow suite (7-10, 12)

fn training(steps: u64, batch: usize, seq: usize, eval_interval: u64, eval_batches: usize) -> TrainingSection {
    TrainingSection {
        steps,
        batch_size: batch,
        seq_len: seq,
        eval_interval,
        eval_batches,
        eval_batch_size: None,
        pilot_horizon: None,
        checkpoint_events: false,
    }
}

fn event(step: u64, target_depth: usize) -> EventConfig {
    EventConfig {
        step,
        target_depth,
        method: ExpansionMethod::Random,
        site: InsertionSite::Bottom,
        os_policy: Default::default(),
        batch_size: None,
        seed: None,
    }
}

/// Desk-scale language setup; `Scale::Smoke` shrinks every size so the same
/// pipeline finishes in seconds.
#[derive(Clone, Copy, PartialEq)]
enum Scale {
    Full,
    Smoke,
}

struct Setup {
    width: usize,
    depth: usize,
    vocab: usize,
    steps: u64,
    batch: usize,
    seq: usize,
    eval_interval: u64,
    length: usize,
}

impl Setup {
    fn mixing(scale: Scale) -> Setup {
        match scale {
            Scale::Full => Setup {
                width: 128,
                depth: 6,
                vocab: 64,
                steps: 20_000,
                batch: 8192,
                seq: 64,
                eval_interval: 200,
                length: 4_000_000,
            },
            Scale::Smoke => Setup {
                width: 16,
                depth: 3,
                vocab: 16,
                steps: 400,
                batch: 128,
                seq: 16,
                eval_interval: 10,
                length: 60_000,
            },
        }
    }

    fn config(&self, kind: ScheduleKind, depth: usize, events: Vec<EventConfig>) -> ExperimentConfig {
        ExperimentConfig {
            seed: 0,
            data_seed: 0,
            precision: Precision::F32,
            output_dir: None,
            model: ModelConfig::transformer(depth, self.width, self.vocab, self.seq),
            data: DataSpec::Markov {
                vocab: self.vocab,
                order: 2,
                length: self.length,
                logit_scale: 2.0,
            },
            optimizer: OptimizerConfig::muon_nsgd(0.01),
            schedule: ScheduleSection {
                kind,
                warmup_frac: 0.02,
                decay_frac: 0.1,
            },
            training: training(self.steps, self.batch, self.seq, self.eval_interval, 4),
            events,
            mixing: MixingConfig::default(),
        }
    }

    fn at(&self, frac: f64) -> u64 {
        (frac * self.steps as f64).round() as u64
    }
}

fn run(cfg: &ExperimentConfig) -> RunLog {
    train(cfg, None).expect("training run")
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn final_loss(log: &RunLog) -> f64 {
    log.final_val_loss().unwrap_or(f64::NAN)
}

fn criterion_7(scale: Scale) -> (bool, String) {
    let s = Setup::mixing(scale);
    let wsd_prog = run(&s.config(ScheduleKind::Wsd, 1, vec![event(s.at(0.5), s.depth)]));
    let wsd_fixed = run(&s.config(ScheduleKind::Wsd, s.depth, vec![]));
    let cos_prog = run(&s.config(ScheduleKind::Cosine, 1, vec![event(s.at(0.8), s.depth)]));
    let cos_fixed = run(&s.config(ScheduleKind::Cosine, s.depth, vec![]));
    let delta = rel(final_loss(&wsd_prog), final_loss(&wsd_fixed));
    let wsd_mix = detect_mixing(&wsd_prog, &wsd_fixed, s.at(0.5), 0.02, 5).unwrap();
    let cos_mix = detect_mixing(&cos_prog, &cos_fixed, s.at(0.8), 0.02, 5).unwrap();
    let ok = delta <= 0.02 && wsd_mix.mixed && !cos_mix.mixed;
    (
        ok,
        format!(
            "WSD tau=0.5T final rel. delta {:.3}% (limit 2%), {}; cosine tau=0.8T {}",
            100.0 * delta,
            if wsd_mix.mixed { format!("MIXED at +{}", wsd_mix.t_mix.unwrap()) } else { "NOT_MIXED".into() },
            if cos_mix.mixed { format!("MIXED at +{}", cos_mix.t_mix.unwrap()) } else { "NOT_MIXED".into() },
        ),
    )
}

fn t_mix(s: &Setup, kind: ScheduleKind, frac: f64) -> Option<u64> {
    let prog = run(&s.config(kind, 1, vec![event(s.at(frac), s.depth)]));
    let fixed = run(&s.config(kind, s.depth, vec![]));
    let m = MixingConfig::default();
    detect_mixing(&prog, &fixed, s.at(frac), m.epsilon, m.window).unwrap().t_mix
}

fn criterion_8(scale: Scale) -> (bool, String) {
    let s = Setup::mixing(scale);
    let (w_early, w_mid) = (t_mix(&s, ScheduleKind::Wsd, 0.1), t_mix(&s, ScheduleKind::Wsd, 0.5));
    let (c_early, c_mid) = (t_mix(&s, ScheduleKind::Cosine, 0.1), t_mix(&s, ScheduleKind::Cosine, 0.5));
    let wsd_ok = match (w_early, w_mid) {
        (Some(a), Some(b)) => (a as f64 - b as f64).abs() <= 0.5 * a.max(b) as f64,
        _ => false,
    };
    let cos_ok = match (c_early, c_mid) {
        (Some(a), Some(b)) => b as f64 > 2.0 * a.max(1) as f64,
        (_, None) => true,
        _ => false,
    };
    (
        wsd_ok && cos_ok,
        format!("t_mix WSD 0.1T {w_early:?} vs 0.5T {w_mid:?}; cosine 0.1T {c_early:?} vs 0.5T {c_mid:?}"),
    )
}

fn criterion_9(scale: Scale) -> (bool, String) {
    let s = Setup::mixing(scale);
    let (t1, t2) = (s.at(0.25), s.at(0.5));
    let zero_to_six = run(&s.config(ScheduleKind::Wsd, 0, vec![event(t2, s.depth)]));
    let two_to_six = run(&s.config(ScheduleKind::Wsd, 2, vec![event(t2, s.depth)]));
    let multi = run(&s.config(ScheduleKind::Wsd, 0, vec![event(t1, 2), event(t2, s.depth)]));
    let losses = [final_loss(&zero_to_six), final_loss(&two_to_six), final_loss(&multi)];
    let spread = losses
        .iter()
        .flat_map(|a| losses.iter().map(move |b| rel(*a, *b)))
        .fold(0.0f64, f64::max);
    let flops_ok = multi.total_flops() >= zero_to_six.total_flops();
    (
        spread <= 0.02 && flops_ok && multi.events.len() == 2,
        format!(
            "final losses [0->{d}] {:.4}, [2->{d}] {:.4}, [0->2->{d}] {:.4}, max rel. spread {:.3}% (limit 2%); FLOPs multi {} >= single {}: {flops_ok}",
            losses[0],
            losses[1],
            losses[2],
            100.0 * spread,
            multi.total_flops(),
            zero_to_six.total_flops(),
            d = s.depth
        ),
    )
}

fn criterion_10(scale: Scale) -> (bool, String) {
    let s = Setup::mixing(scale);
    let tau = s.at(0.5);
    let m = MixingConfig::default();
    let mut steps = Vec::new();
    let mut tokens = Vec::new();
    for factor in [1usize, 4] {
        let mut grow = event(tau, s.depth);
        grow.batch_size = Some(factor * s.batch);
        let prog = run(&s.config(ScheduleKind::Wsd, 1, vec![grow.clone()]));
        let mut same = grow;
        same.target_depth = s.depth;
        let fixed = run(&s.config(ScheduleKind::Wsd, s.depth, vec![same]));
        let r = detect_mixing(&prog, &fixed, tau, m.epsilon, m.window).unwrap();
        steps.push(r.t_mix);
        tokens.push(r.tokens_to_mix);
    }
    let ok = match (steps[0], steps[1], tokens[0], tokens[1]) {
        (Some(s1), Some(s4), Some(k1), Some(k4)) => {
            let ratio = s4 as f64 / s1.max(1) as f64;
            (0.125..=0.5).contains(&ratio) && (k4 as f64 - k1 as f64).abs() <= 0.5 * k1.max(k4) as f64
        }
        _ => false,
    };
    (
        ok,
        format!("steps to mix 1x {:?} vs 4x {:?}; tokens to mix 1x {:?} vs 4x {:?}", steps[0], steps[1], tokens[0], tokens[1]),
    )
}

fn criterion_12(scale: Scale) -> (bool, String) {
    let grid = [0.0025, 0.005, 0.01, 0.02, 0.04];
    let (widths, steps) = match scale {
        Scale::Full => ([64usize, 256], 3000),
        Scale::Smoke => ([16usize, 48], 200),
    };
    let mut argmins = Vec::new();
    let mut table = Vec::new();
    for width in widths {
        let mut s = Setup::mixing(scale);
        s.width = width;
        s.steps = steps;
        let losses: Vec<f64> = grid
            .iter()
            .map(|&lr| {
                let mut cfg = s.config(ScheduleKind::Wsd, 2, vec![]);
                cfg.optimizer.peak_lr = lr;
                final_loss(&run(&cfg))
            })
            .collect();
        let best = (0..grid.len()).min_by(|&a, &b| losses[a].total_cmp(&losses[b])).unwrap();
        argmins.push(best);
        table.push(format!("width {width}: best lr {}", grid[best]));
    }
    (argmins[0].abs_diff(argmins[1]) <= 1, table.join(", "))
}

fn slow(report: &mut Report, id: u32, name: &str, f: fn(Scale) -> (bool, String)) {
    let full = std::env::var("DEEPGROW_SLOW").is_ok_and(|v| v == "1");
    report.line(id, name, None, || {
        if full {
            let (ok, detail) = f(Scale::Full);
            verdict(ok, detail)
        } else {
            let (_, detail) = f(Scale::Smoke);
            Outcome::NotRun(format!(
                "slow suite, set DEEPGROW_SLOW=1; reduced-scale smoke of the same pipeline: {detail}"
            ))
        }
    });
}

fn main() {
    let mut report = Report { failed: 0 };
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    report.line(1, "gradient correctness", min(2), criterion_1);
    report.line(2, "function preservation", min(1), criterion_2);
    report.line(3, "muP spectral condition", min(1), criterion_3);
    report.line(4, "Newton-Schulz singular values", min(1), criterion_4);
    report.line(5, "convex bounds", min(5), criterion_5);
    report.line(6, "schedule mass", Some(Duration::from_secs(1)), criterion_6);
    slow(&mut report, 7, "desk-scale mixing", criterion_7);
    slow(&mut report, 8, "mixing-time transfer", criterion_8);
    slow(&mut report, 9, "single vs multi-stage", criterion_9);
    slow(&mut report, 10, "data, not iterations", criterion_10);
    report.line(11, "FLOP closed form", Some(Duration::from_secs(1)), criterion_11);
    slow(&mut report, 12, "learning-rate transfer", criterion_12);
    if report.failed > 0 {
        println!("{} of 12 criteria failed", report.failed);
        std::process::exit(1);
    }
}
