//! Depth expansion: layer orderings, new-block initializations, optimizer
//! state carry-over and a function-preservation check.
//!
//! Embedding and readout parameters always carry over untouched. In a copied
//! layout the first occurrence of each old block keeps its parameter ids; later
//! occurrences get fresh ids and deep copies of the values.

mod plan;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::ParamId;
use crate::model::{
    block_layout, block_param_name, init_block, Batch, Model, ModelConfig, ModelError, Parameter, Role,
    SlotKind,
};
use crate::optim::{OptimizerState, ParamState};
use crate::tensor::{Scalar, Tensor};

pub use plan::{plan_expansion, BlockSource, ExpansionMethod, ExpansionPlan, InsertionSite, OptimizerStatePolicy};

#[derive(Debug, Error)]
pub enum ExpansionError {
    #[error("{method:?} copies existing blocks and needs source depth >= 1")]
    CopyFromEmpty { method: ExpansionMethod },
    #[error("target depth {target} is smaller than source depth {source_depth}")]
    Shrinking { source_depth: usize, target: usize },
    #[error("plan expects source depth {plan} but the model has {model}")]
    DepthMismatch { plan: usize, model: usize },
    #[error("target config differs from the source in more than depth")]
    Incompatible,
    #[error("optimizer state holds unknown parameter {0}")]
    UnknownParam(ParamId),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Where a parameter of the expanded model came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// Same id and value as in the source model.
    Carried,
    /// Deep copy of the given source parameter (possibly zeroed afterwards).
    Copied(ParamId),
    /// Newly initialized.
    Fresh,
}

#[derive(Debug, Clone)]
pub struct Expansion<T> {
    pub model: Model<T>,
    pub plan: ExpansionPlan,
    /// Provenance of every parameter of `model`.
    pub links: BTreeMap<ParamId, Link>,
}

/// Builds the expanded model. The source model is not modified.
pub fn expand<T: Scalar>(
    small: &Model<T>,
    plan: &ExpansionPlan,
    seed: u64,
) -> Result<Expansion<T>, ExpansionError> {
    if small.depth() != plan.source_depth {
        return Err(ExpansionError::DepthMismatch {
            plan: plan.source_depth,
            model: small.depth(),
        });
    }
    let config: ModelConfig = small.config().clone().with_depth(plan.target_depth);
    let layout = block_layout(&config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_id = small.next_id();
    let mut links = BTreeMap::new();
    let mut seen = vec![false; small.depth()];

    for p in small.embed().iter().chain(small.head()) {
        links.insert(p.id(), Link::Carried);
    }

    let mut blocks = Vec::with_capacity(plan.target_depth);
    for (pos, src) in plan.mapping.iter().enumerate() {
        let block: Vec<Parameter<T>> = match *src {
            BlockSource::Old(i) => {
                let first = !seen[i];
                seen[i] = true;
                let zero_copy = !first && plan.method.zeroes_copies();
                small.blocks()[i]
                    .iter()
                    .zip(&layout)
                    .map(|(p, slot)| {
                        let (id, link) = if first {
                            (p.id(), Link::Carried)
                        } else {
                            let id = ParamId(next_id);
                            next_id += 1;
                            (id, Link::Copied(p.id()))
                        };
                        links.insert(id, link);
                        let zeroed = zero_copy
                            && match plan.method {
                                ExpansionMethod::CopyingZeroNorm => slot.kind == SlotKind::Norm,
                                ExpansionMethod::CopyingZeroLastLinear => slot.branch_output,
                                _ => false,
                            };
                        let value = if zeroed {
                            Tensor::zeros(p.value().shape())
                        } else {
                            p.value().clone()
                        };
                        Parameter::new(id, block_param_name(pos, slot), Role::H(pos), value)
                    })
                    .collect()
            }
            BlockSource::New => {
                let mut block = init_block::<T>(&config, &mut rng, pos, &mut next_id);
                if plan.method == ExpansionMethod::Zero {
                    block.iter_mut().for_each(|p| p.value_mut().fill_zero());
                }
                for p in &block {
                    links.insert(p.id(), Link::Fresh);
                }
                block
            }
        };
        blocks.push(block);
    }

    let model = Model::from_parts(
        config,
        small.embed().to_vec(),
        blocks,
        small.head().to_vec(),
        next_id,
    )?;
    Ok(Expansion {
        model,
        plan: plan.clone(),
        links,
    })
}

/// Plans and applies an expansion towards `target`, which must match the
/// source in everything but depth.
pub fn expand_to<T: Scalar>(
    small: &Model<T>,
    target: &ModelConfig,
    method: ExpansionMethod,
    site: InsertionSite,
    seed: u64,
) -> Result<Expansion<T>, ExpansionError> {
    if !small.config().compatible_with(target) {
        return Err(ExpansionError::Incompatible);
    }
    let plan = plan_expansion(small.depth(), target.depth, method, site)?;
    expand(small, &plan, seed)
}

/// Carries optimizer buffers across an expansion.
///
/// `Inherit` keeps the state of carried parameters and zero-initializes the
/// rest; `Copy` additionally gives each copied parameter its source's state;
/// `Reset` zero-initializes everything.
pub fn expand_optimizer_state<T: Scalar>(
    state: &OptimizerState<T>,
    expansion: &Expansion<T>,
    policy: OptimizerStatePolicy,
) -> Result<OptimizerState<T>, ExpansionError> {
    for id in state.buffers().keys() {
        if expansion.links.get(id) != Some(&Link::Carried) {
            return Err(ExpansionError::UnknownParam(*id));
        }
    }
    let kind = state.kind();
    let mut out = OptimizerState::new(kind);
    for p in expansion.model.parameters() {
        let zero = || ParamState::zeros(kind, p.value().shape());
        let source = match (policy, expansion.links[&p.id()]) {
            (OptimizerStatePolicy::Reset, _) => None,
            (_, Link::Carried) => state.get(p.id()),
            (OptimizerStatePolicy::Copy, Link::Copied(src)) => state.get(src),
            _ => None,
        };
        out.insert(p.id(), source.cloned().unwrap_or_else(zero));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionCheck {
    pub preserved: bool,
    pub abs_delta: f64,
    pub rel_delta: f64,
}

/// Compares the losses of two models on one batch; preserved iff the relative
/// difference is at most `tol`.
pub fn verify_function_preserving<T: Scalar>(
    small: &Model<T>,
    large: &Model<T>,
    batch: &Batch<T>,
    tol: f64,
) -> Result<FunctionCheck, ModelError> {
    let a = small.loss(batch)?;
    let b = large.loss(batch)?;
    let abs_delta = (a - b).abs();
    let rel_delta = abs_delta / a.abs().max(f64::MIN_POSITIVE);
    Ok(FunctionCheck {
        preserved: rel_delta <= tol,
        abs_delta,
        rel_delta,
    })
}
