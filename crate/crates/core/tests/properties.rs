use proptest::prelude::*;

use deepgrow::checkpoint;
use deepgrow::expansion::{
    expand_optimizer_state, expand_to, plan_expansion, BlockSource, ExpansionMethod, InsertionSite, Link,
    OptimizerStatePolicy,
};
use deepgrow::harness::{flops_per_step, pareto_frontier, staged_flops, staged_ratio, RunPoint};
use deepgrow::model::{Batch, Model, ModelConfig};
use deepgrow::optim::{Optimizer, OptimizerConfig, ScheduleConfig};
use deepgrow::tensor::Tensor;

fn method() -> impl Strategy<Value = ExpansionMethod> {
    prop::sample::select(ExpansionMethod::ALL.to_vec())
}

fn schedule() -> impl Strategy<Value = ScheduleConfig> {
    (1e-4f64..1.0, 0.0f64..0.3, 0.05f64..0.6, 20u64..3000, 0..3u8).prop_map(|(peak, warm, decay, t, kind)| match kind {
        0 => ScheduleConfig::wsd(peak, warm, decay, t),
        1 => ScheduleConfig::cosine(peak, warm, t),
        _ => ScheduleConfig::constant(peak, warm, t),
    })
}

fn regression_batch(cfg: &ModelConfig, rows: usize, salt: f64) -> Batch<f64> {
    let x: Vec<f64> = (0..rows * cfg.input_dim).map(|i| (i as f64 * 0.73 + salt).sin()).collect();
    let y: Vec<f64> = (0..rows * cfg.output_dim).map(|i| (i as f64 * 0.41 - salt).cos()).collect();
    Batch::Regression {
        inputs: Tensor::from_f64(&[rows, cfg.input_dim], &x).unwrap(),
        targets: Tensor::from_f64(&[rows, cfg.output_dim], &y).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_is_monotone_and_bounded(s in schedule(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let t = s.horizon;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (lo, hi) = ((lo * t as f64) as u64, (hi * t as f64) as u64);
        let (m_lo, m_hi) = (s.mass(lo), s.mass(hi));
        prop_assert!(m_lo <= m_hi + 1e-15);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&m_lo));
        prop_assert_eq!(s.mass(0), 0.0);
        prop_assert!((s.mass(t) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lr_is_bounded_by_peak_and_lipschitz_between_steps(s in schedule()) {
        let t = s.horizon;
        let warm = s.warmup_frac * t as f64;
        let decay = (s.decay_frac * t as f64).max(1.0);
        let span = (t as f64 - warm).max(1.0);
        let slope = s.peak_lr * (1.0 / warm.max(1.0) + 1.0 / decay + std::f64::consts::PI / span);
        let mut prev = s.lr(0).unwrap();
        for step in 0..t {
            let lr = s.lr(step).unwrap();
            prop_assert!(lr >= 0.0 && lr <= s.peak_lr * (1.0 + 1e-12));
            prop_assert!((lr - prev).abs() <= slope + 1e-12, "jump {} at {}", (lr - prev).abs(), step);
            prev = lr;
        }
        prop_assert!(s.lr(t).is_err());
    }

    #[test]
    fn plans_are_total_and_keep_every_old_block(source in 0usize..6, extra in 0usize..10, m in method(), top in any::<bool>()) {
        let target = source + extra;
        let site = if top { InsertionSite::Top } else { InsertionSite::Bottom };
        let Ok(plan) = plan_expansion(source, target, m, site) else {
            prop_assert!(m.copies() && source == 0);
            return Ok(());
        };
        prop_assert_eq!(plan.mapping.len(), target);
        for i in 0..source {
            prop_assert!(plan.mapping.contains(&BlockSource::Old(i)));
        }
        let new = plan.mapping.iter().filter(|s| **s == BlockSource::New).count();
        prop_assert_eq!(new, if m.copies() { 0 } else { extra });
        let olds: Vec<usize> = plan.mapping.iter().filter_map(|s| match s { BlockSource::Old(i) => Some(*i), _ => None }).collect();
        if m != ExpansionMethod::CopyingStack && !m.zeroes_copies() {
            prop_assert!(olds.windows(2).all(|w| w[0] <= w[1]), "order not kept: {}", plan);
        }
        if m == ExpansionMethod::CopyingInter && source > 0 {
            let counts: Vec<usize> = (0..source).map(|i| olds.iter().filter(|&&j| j == i).count()).collect();
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn one_layer_stack_and_inter_agree(target in 1usize..16) {
        let a = plan_expansion(1, target, ExpansionMethod::CopyingStack, InsertionSite::Bottom).unwrap();
        let b = plan_expansion(1, target, ExpansionMethod::CopyingInter, InsertionSite::Bottom).unwrap();
        prop_assert_eq!(a.mapping, b.mapping);
    }

    #[test]
    fn staged_flops_closed_form(b in 1u64..10_000, t in 1u64..100_000, frac in 0.0f64..=1.0, ns in 1u64..1_000_000, grow in 1u64..50) {
        let tau = (frac * t as f64) as u64;
        let nl = ns * grow;
        let f = staged_flops(b, t, tau, ns, nl);
        prop_assert_eq!(f, tau * flops_per_step(ns, b) + (t - tau) * flops_per_step(nl, b));
        let (num, den) = staged_ratio(t, tau, ns, nl);
        prop_assert_eq!(num * (6 * b as u128), f as u128 * (den / (t as u128 * nl as u128)));
        prop_assert!(num <= den);
    }

    #[test]
    fn pareto_matches_brute_force(points in prop::collection::vec((1u64..50, 0u32..40), 1..20)) {
        let runs: Vec<RunPoint> = points
            .iter()
            .enumerate()
            .map(|(i, &(f, l))| RunPoint { label: i.to_string(), flops: f, loss: l as f64 / 10.0 })
            .collect();
        let frontier = pareto_frontier(&runs);
        let dominated = |p: &RunPoint| runs.iter().any(|q| q.flops <= p.flops && q.loss <= p.loss && (q.flops < p.flops || q.loss < p.loss));
        for p in &frontier {
            prop_assert!(!dominated(p));
        }
        for p in runs.iter().filter(|p| !dominated(p)) {
            prop_assert!(frontier.iter().any(|q| q.flops == p.flops && q.loss == p.loss));
        }
        prop_assert!(frontier.windows(2).all(|w| w[0].flops < w[1].flops && w[0].loss > w[1].loss));
    }

    #[test]
    fn preserving_expansions_keep_the_loss(source in 0usize..4, extra in 1usize..6, seed in any::<u64>(), pick in 0usize..3) {
        let m = [ExpansionMethod::Zero, ExpansionMethod::CopyingZeroNorm, ExpansionMethod::CopyingZeroLastLinear][pick];
        prop_assume!(!(m.copies() && source == 0));
        let cfg = ModelConfig::mlp(source, 5, 12, 3).with_seed(seed);
        let small = Model::<f64>::build(&cfg).unwrap();
        let grown = expand_to(&small, &cfg.clone().with_depth(source + extra), m, InsertionSite::Bottom, seed ^ 1).unwrap();
        for salt in 0..3 {
            let batch = regression_batch(&cfg, 6, salt as f64);
            let (a, b) = (small.loss(&batch).unwrap(), grown.model.loss(&batch).unwrap());
            prop_assert!(((a - b) / a).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn expansion_never_mutates_carried_parameters(source in 1usize..4, extra in 0usize..5, m in method(), seed in any::<u64>()) {
        let cfg = ModelConfig::transformer(source, 32, 8, 4).with_seed(seed);
        let small = Model::<f64>::build(&cfg).unwrap();
        let grown = expand_to(&small, &cfg.clone().with_depth(source + extra), m, InsertionSite::Bottom, seed).unwrap();
        prop_assert_eq!(grown.model.param_count(), Model::<f64>::build(&grown.model.config().clone()).unwrap().param_count());
        for p in small.parameters() {
            prop_assert_eq!(grown.links[&p.id()], Link::Carried);
            let q = grown.model.parameters().find(|q| q.id() == p.id()).unwrap();
            prop_assert_eq!(q.value().data(), p.value().data());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(depth in 0usize..4, seed in any::<u64>(), step in any::<u64>(), tf in any::<bool>()) {
        let cfg = if tf { ModelConfig::transformer(depth, 32, 8, 4) } else { ModelConfig::mlp(depth, 3, 8, 2) }.with_seed(seed);
        let model = Model::<f32>::build(&cfg).unwrap();
        let opt = Optimizer::new(OptimizerConfig::muon_nsgd(0.01)).unwrap();
        let mut state = opt.init_state::<f32>();
        let mut m = model.clone();
        opt.step(m.parameters_mut(), &mut state, 0.01).unwrap();
        let bytes = checkpoint::to_bytes(&model, Some(&state), step);
        let back = checkpoint::from_bytes::<f32>(&bytes).unwrap();
        prop_assert_eq!(back.step, step);
        prop_assert_eq!(back.model.config(), model.config());
        for (a, b) in model.parameters().zip(back.model.parameters()) {
            prop_assert_eq!(a.id(), b.id());
            prop_assert_eq!(a.value().data(), b.value().data());
        }
        let restored = back.optimizer.unwrap();
        prop_assert_eq!(restored.buffers().len(), state.buffers().len());
        for (id, st) in state.buffers() {
            prop_assert_eq!(restored.get(*id).unwrap().m.data(), st.m.data());
        }
        prop_assert_eq!(checkpoint::to_bytes(&back.model, Some(&restored), step), bytes);
    }

    #[test]
    fn optimizer_state_policies(source in 1usize..3, extra in 1usize..4, m in method(), seed in any::<u64>()) {
        let cfg = ModelConfig::mlp(source, 3, 8, 2).with_seed(seed);
        let mut small = Model::<f64>::build(&cfg).unwrap();
        small.compute_grads(&regression_batch(&cfg, 4, 0.5)).unwrap();
        let opt = Optimizer::new(OptimizerConfig::muon_nsgd(0.01)).unwrap();
        let mut state = opt.init_state::<f64>();
        opt.step(small.parameters_mut(), &mut state, 0.01).unwrap();
        let grown = expand_to(&small, &cfg.clone().with_depth(source + extra), m, InsertionSite::Bottom, seed).unwrap();
        let ids: Vec<_> = grown.model.parameters().map(|p| p.id()).collect();

        let inherit = expand_optimizer_state(&state, &grown, OptimizerStatePolicy::Inherit).unwrap();
        let copy = expand_optimizer_state(&state, &grown, OptimizerStatePolicy::Copy).unwrap();
        let reset = expand_optimizer_state(&state, &grown, OptimizerStatePolicy::Reset).unwrap();
        for id in ids {
            let is_zero = |s: &deepgrow::optim::OptimizerState<f64>| s.get(id).unwrap().m.data().iter().all(|x| *x == 0.0);
            prop_assert!(is_zero(&reset));
            match grown.links[&id] {
                Link::Carried => {
                    prop_assert_eq!(inherit.get(id).unwrap().m.data(), state.get(id).unwrap().m.data());
                    prop_assert_eq!(copy.get(id).unwrap().m.data(), state.get(id).unwrap().m.data());
                }
                Link::Copied(src) => {
                    prop_assert!(is_zero(&inherit));
                    prop_assert_eq!(copy.get(id).unwrap().m.data(), state.get(src).unwrap().m.data());
                }
                Link::Fresh => {
                    prop_assert!(is_zero(&inherit));
                    prop_assert!(is_zero(&copy));
                }
            }
        }
    }
}
