//! Residual MLP and tiny decoder-only transformer families.
//!
//! Both families are pre-norm residual stacks: `h <- h + f(norm(h))`, hidden
//! blocks carry no biases, so a block whose output projection (or norm gain)
//! is zero is an exact identity map. Parameters are partitioned into roles
//! `E` (embedding), `H(i)` (hidden block `i`) and `L` (readout).
//!
//! Initialization follows the spectral scaling rule: every linear map
//! `n_in -> n_out` is a semi-orthogonal matrix rescaled so that its spectral
//! norm is exactly `sqrt(n_out / n_in)`.

mod forward;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::ParamId;
use crate::linalg;
use crate::tensor::{Scalar, Tensor, TensorError};

pub use forward::{Batch, Forward};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("batch does not match model: {0}")]
    BatchMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    ResidualMlp,
    TinyTransformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

fn default_head_dim() -> usize {
    16
}
fn default_mlp_ratio() -> usize {
    4
}
fn default_norm_eps() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    /// Number of hidden residual blocks; 0 means embedding + readout only.
    pub depth: usize,
    pub width: usize,
    /// Attention heads; defaults to `width / head_dim`.
    #[serde(default)]
    pub heads: Option<usize>,
    #[serde(default = "default_head_dim")]
    pub head_dim: usize,
    #[serde(default)]
    pub vocab: usize,
    /// Maximum sequence length (size of the position table).
    #[serde(default)]
    pub context: usize,
    #[serde(default)]
    pub input_dim: usize,
    #[serde(default)]
    pub output_dim: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn transformer(depth: usize, width: usize, vocab: usize, context: usize) -> Self {
        ModelConfig {
            family: Family::TinyTransformer,
            depth,
            width,
            heads: None,
            head_dim: default_head_dim(),
            vocab,
            context,
            input_dim: 0,
            output_dim: 0,
            mlp_ratio: default_mlp_ratio(),
            activation: Activation::Gelu,
            norm_eps: default_norm_eps(),
            seed: 0,
        }
    }

    pub fn mlp(depth: usize, input_dim: usize, width: usize, output_dim: usize) -> Self {
        ModelConfig {
            family: Family::ResidualMlp,
            depth,
            width,
            heads: None,
            head_dim: default_head_dim(),
            vocab: 0,
            context: 0,
            input_dim,
            output_dim,
            mlp_ratio: default_mlp_ratio(),
            activation: Activation::Gelu,
            norm_eps: default_norm_eps(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn n_heads(&self) -> usize {
        self.heads
            .unwrap_or_else(|| (self.width / self.head_dim.max(1)).max(1))
    }

    pub fn hidden_width(&self) -> usize {
        self.width * self.mlp_ratio
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.width == 0 {
            return bad("width must be positive".into());
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be positive".into());
        }
        if self.norm_eps <= 0.0 {
            return bad("norm_eps must be positive".into());
        }
        match self.family {
            Family::TinyTransformer => {
                let h = self.n_heads();
                if h == 0 || !self.width.is_multiple_of(h) {
                    return bad(format!("width {} not divisible by {h} heads", self.width));
                }
                if self.vocab == 0 || self.context == 0 {
                    return bad("transformer needs vocab > 0 and context > 0".into());
                }
            }
            Family::ResidualMlp => {
                if self.input_dim == 0 || self.output_dim == 0 {
                    return bad("mlp needs input_dim > 0 and output_dim > 0".into());
                }
            }
        }
        Ok(())
    }

    /// Same architecture apart from depth.
    pub fn compatible_with(&self, other: &ModelConfig) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.depth = 0;
        b.depth = 0;
        a.seed = 0;
        b.seed = 0;
        a.heads = Some(a.n_heads());
        b.heads = Some(b.n_heads());
        a == b
    }
}

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    E,
    H(usize),
    L,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::E => write!(f, "E"),
            Role::H(i) => write!(f, "H{i}"),
            Role::L => write!(f, "L"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    id: ParamId,
    name: String,
    role: Role,
    value: Tensor<T>,
    grad: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(id: ParamId, name: impl Into<String>, role: Role, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            id,
            name: name.into(),
            role,
            value,
            grad,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn rank(&self) -> usize {
        self.value.rank()
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        &mut self.value
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.grad
    }

    pub fn set_grad(&mut self, grad: Tensor<T>) {
        assert_eq!(grad.shape(), self.value.shape(), "gradient shape");
        self.grad = grad;
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill_zero();
    }
}

/// What a slot inside a hidden block is, for initialization and expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Norm,
    Linear { n_in: usize, n_out: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct BlockSlot {
    pub name: &'static str,
    pub kind: SlotKind,
    /// Last linear map of a residual branch (zeroed by `copying_zero_last_linear`).
    pub branch_output: bool,
}

pub(crate) const TF_LN1: usize = 0;
pub(crate) const TF_WQ: usize = 1;
pub(crate) const TF_WK: usize = 2;
pub(crate) const TF_WV: usize = 3;
pub(crate) const TF_WO: usize = 4;
pub(crate) const TF_LN2: usize = 5;
pub(crate) const TF_FC: usize = 6;
pub(crate) const TF_PROJ: usize = 7;
pub(crate) const MLP_LN: usize = 0;
pub(crate) const MLP_FC: usize = 1;
pub(crate) const MLP_PROJ: usize = 2;

pub fn block_layout(config: &ModelConfig) -> Vec<BlockSlot> {
    let d = config.width;
    let hid = config.hidden_width();
    let norm = |name| BlockSlot {
        name,
        kind: SlotKind::Norm,
        branch_output: false,
    };
    let lin = |name, n_in, n_out, out| BlockSlot {
        name,
        kind: SlotKind::Linear { n_in, n_out },
        branch_output: out,
    };
    match config.family {
        Family::TinyTransformer => vec![
            norm("ln1"),
            lin("attn.wq", d, d, false),
            lin("attn.wk", d, d, false),
            lin("attn.wv", d, d, false),
            lin("attn.wo", d, d, true),
            norm("ln2"),
            lin("mlp.fc", d, hid, false),
            lin("mlp.proj", hid, d, true),
        ],
        Family::ResidualMlp => vec![norm("ln"), lin("fc", d, hid, false), lin("proj", hid, d, true)],
    }
}

pub(crate) fn block_param_name(pos: usize, slot: &BlockSlot) -> String {
    format!("h.{pos}.{}", slot.name)
}

/// Linear map `n_in -> n_out` stored as `[n_in, n_out]` with spectral norm `sqrt(n_out/n_in)`.
pub fn spectral_linear<T: Scalar>(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize) -> Tensor<T> {
    let scale = (n_out as f64 / n_in as f64).sqrt();
    let m = linalg::semi_orthogonal(rng, n_in, n_out);
    Tensor::new(vec![n_in, n_out], m.into_iter().map(|x| T::of(x * scale)).collect())
        .expect("shape matches")
}

fn unit_rms_rows<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let row: Vec<f64> = (0..cols).map(|_| StandardNormal.sample(rng)).collect();
        let rms = (row.iter().map(|x| x * x).sum::<f64>() / cols as f64).sqrt();
        data.extend(row.into_iter().map(|x| T::of(x / rms)));
    }
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

/// Freshly initialized hidden block at position `pos`.
pub(crate) fn init_block<T: Scalar>(
    config: &ModelConfig,
    rng: &mut ChaCha8Rng,
    pos: usize,
    next_id: &mut u64,
) -> Vec<Parameter<T>> {
    block_layout(config)
        .iter()
        .map(|slot| {
            let value = match slot.kind {
                SlotKind::Norm => Tensor::full(&[config.width], T::one()),
                SlotKind::Linear { n_in, n_out } => spectral_linear(rng, n_in, n_out),
            };
            let id = ParamId(*next_id);
            *next_id += 1;
            Parameter::new(id, block_param_name(pos, slot), Role::H(pos), value)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    embed: Vec<Parameter<T>>,
    blocks: Vec<Vec<Parameter<T>>>,
    head: Vec<Parameter<T>>,
    next_id: u64,
}

/// Per-boundary activation scale `||A_l||_2 / sqrt(n_l)`, averaged over rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationProfile {
    pub values: Vec<f64>,
}

impl ActivationProfile {
    pub fn spread(&self) -> f64 {
        let max = self.values.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.values.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }
}

impl<T: Scalar> Model<T> {
    pub fn build(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut next_id = 0u64;
        let fresh = |name: &str, role: Role, value: Tensor<T>, next_id: &mut u64| {
            let id = ParamId(*next_id);
            *next_id += 1;
            Parameter::new(id, name, role, value)
        };
        let d = config.width;
        let embed = match config.family {
            Family::TinyTransformer => vec![
                fresh("embed.tok", Role::E, unit_rms_rows(&mut rng, config.vocab, d), &mut next_id),
                fresh("embed.pos", Role::E, unit_rms_rows(&mut rng, config.context, d), &mut next_id),
            ],
            Family::ResidualMlp => vec![
                fresh(
                    "embed.w",
                    Role::E,
                    spectral_linear(&mut rng, config.input_dim, d),
                    &mut next_id,
                ),
                fresh("embed.b", Role::E, Tensor::zeros(&[d]), &mut next_id),
            ],
        };
        let blocks: Vec<_> = (0..config.depth)
            .map(|pos| init_block(config, &mut rng, pos, &mut next_id))
            .collect();
        let head = match config.family {
            Family::TinyTransformer => vec![
                fresh("head.ln", Role::L, Tensor::full(&[d], T::one()), &mut next_id),
                fresh(
                    "head.w",
                    Role::L,
                    spectral_linear(&mut rng, d, config.vocab),
                    &mut next_id,
                ),
            ],
            Family::ResidualMlp => vec![
                fresh(
                    "head.w",
                    Role::L,
                    spectral_linear(&mut rng, d, config.output_dim),
                    &mut next_id,
                ),
                fresh("head.b", Role::L, Tensor::zeros(&[config.output_dim]), &mut next_id),
            ],
        };
        Ok(Model {
            config: config.clone(),
            embed,
            blocks,
            head,
            next_id,
        })
    }

    /// Assembles a model from explicit parts, validating shapes and roles.
    pub fn from_parts(
        config: ModelConfig,
        embed: Vec<Parameter<T>>,
        blocks: Vec<Vec<Parameter<T>>>,
        head: Vec<Parameter<T>>,
        next_id: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if blocks.len() != config.depth {
            return Err(ModelError::InvalidConfig(format!(
                "config depth {} but {} blocks",
                config.depth,
                blocks.len()
            )));
        }
        let template = Model::<T>::build(&config.clone().with_depth(config.depth.min(1)))?;
        let check = |have: &[Parameter<T>], want: &[Parameter<T>], what: &str| {
            if have.len() != want.len()
                || have.iter().zip(want).any(|(a, b)| a.value.shape() != b.value.shape())
            {
                return Err(ModelError::InvalidConfig(format!("{what} parameters do not match config")));
            }
            Ok(())
        };
        check(&embed, &template.embed, "embedding")?;
        check(&head, &template.head, "readout")?;
        let layout = block_layout(&config);
        for (pos, block) in blocks.iter().enumerate() {
            if block.len() != layout.len()
                || block.iter().zip(&layout).any(|(p, slot)| {
                    let shape = match slot.kind {
                        SlotKind::Norm => vec![config.width],
                        SlotKind::Linear { n_in, n_out } => vec![n_in, n_out],
                    };
                    p.value.shape() != shape.as_slice() || p.role != Role::H(pos)
                })
            {
                return Err(ModelError::InvalidConfig(format!("block {pos} does not match layout")));
            }
        }
        let model = Model {
            config,
            embed,
            blocks,
            head,
            next_id,
        };
        let mut ids: Vec<ParamId> = model.parameters().map(|p| p.id).collect();
        let n = ids.len();
        ids.sort();
        ids.dedup();
        if ids.len() != n {
            return Err(ModelError::InvalidConfig("duplicate parameter ids".into()));
        }
        if ids.last().is_some_and(|m| m.0 >= model.next_id) {
            return Err(ModelError::InvalidConfig("next_id must exceed every parameter id".into()));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn embed(&self) -> &[Parameter<T>] {
        &self.embed
    }

    pub fn blocks(&self) -> &[Vec<Parameter<T>>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Vec<Parameter<T>>] {
        &mut self.blocks
    }

    pub fn head(&self) -> &[Parameter<T>] {
        &self.head
    }

    /// All parameters in `[E, H_1..H_L, L]` order.
    pub fn parameters(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.embed
            .iter()
            .chain(self.blocks.iter().flatten())
            .chain(self.head.iter())
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.embed
            .iter_mut()
            .chain(self.blocks.iter_mut().flatten())
            .chain(self.head.iter_mut())
    }

    pub fn parameter(&self, id: ParamId) -> Option<&Parameter<T>> {
        self.parameters().find(|p| p.id == id)
    }

    pub fn param_count(&self) -> u64 {
        self.parameters().map(|p| p.value.numel() as u64).sum()
    }

    pub fn param_count_by_role(&self) -> (u64, Vec<u64>, u64) {
        let count = |ps: &[Parameter<T>]| ps.iter().map(|p| p.value.numel() as u64).sum::<u64>();
        (
            count(&self.embed),
            self.blocks.iter().map(|b| count(b)).collect(),
            count(&self.head),
        )
    }

    /// Power-iteration estimate of the top singular value of every rank-2 parameter.
    pub fn spectral_norms(&self) -> BTreeMap<ParamId, f64> {
        self.parameters()
            .filter(|p| p.rank() == 2)
            .map(|p| {
                let (r, c) = p.value.dims2().expect("rank 2");
                (p.id, linalg::spectral_norm(&p.value.to_f64_vec(), r, c, 50))
            })
            .collect()
    }

    pub fn zero_grads(&mut self) {
        self.parameters_mut().for_each(|p| p.zero_grad());
    }

    /// Same parameters at a different precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let conv = |ps: &[Parameter<T>]| {
            ps.iter()
                .map(|p| Parameter::new(p.id, p.name.clone(), p.role, p.value.cast::<U>()))
                .collect::<Vec<_>>()
        };
        Model {
            config: self.config.clone(),
            embed: conv(&self.embed),
            blocks: self.blocks.iter().map(|b| conv(b)).collect(),
            head: conv(&self.head),
            next_id: self.next_id,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_zero_transformer_has_four_parameters() {
        let m = Model::<f64>::build(&ModelConfig::transformer(0, 32, 16, 8)).unwrap();
        let names: Vec<_> = m.parameters().map(|p| p.name().to_string()).collect();
        assert_eq!(names, ["embed.tok", "embed.pos", "head.ln", "head.w"]);
    }

    #[test]
    fn depth_zero_mlp_count() {
        let m = Model::<f64>::build(&ModelConfig::mlp(0, 16, 32, 4)).unwrap();
        assert_eq!(m.param_count(), 16 * 32 + 32 + 32 * 4 + 4);
        assert_eq!(m.param_count(), 676);
    }

    #[test]
    fn depth_adds_per_block_count() {
        let cfg = ModelConfig::mlp(3, 16, 32, 4);
        let base = Model::<f64>::build(&cfg).unwrap().param_count();
        let doubled = Model::<f64>::build(&cfg.clone().with_depth(6)).unwrap().param_count();
        let per_block = 32 + 32 * 128 + 128 * 32;
        assert_eq!(doubled - base, 3 * per_block);
    }

    #[test]
    fn param_count_is_additive_across_roles() {
        let m = Model::<f64>::build(&ModelConfig::transformer(3, 32, 16, 8)).unwrap();
        let (e, h, l) = m.param_count_by_role();
        assert_eq!(e + h.iter().sum::<u64>() + l, m.param_count());
    }

    #[test]
    fn square_hidden_weight_has_unit_spectral_norm() {
        let m = Model::<f64>::build(&ModelConfig::transformer(1, 64, 16, 8)).unwrap();
        let norms = m.spectral_norms();
        let wq = m.blocks()[0][TF_WQ].id();
        assert!((norms[&wq] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn roles_and_ids_are_unique() {
        let m = Model::<f64>::build(&ModelConfig::transformer(2, 32, 16, 8)).unwrap();
        let mut ids: Vec<_> = m.parameters().map(|p| p.id()).collect();
        ids.dedup();
        assert_eq!(ids.len(), m.parameters().count());
        assert!(m.blocks()[1].iter().all(|p| p.role() == Role::H(1)));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ModelConfig::transformer(1, 30, 16, 8);
        c.heads = Some(4);
        assert!(Model::<f64>::build(&c).is_err());
        assert!(Model::<f64>::build(&ModelConfig::mlp(1, 0, 8, 2)).is_err());
        assert!(Model::<f64>::build(&ModelConfig::mlp(1, 4, 0, 2)).is_err());
    }

    #[test]
    fn embedding_rows_have_unit_rms() {
        let m = Model::<f64>::build(&ModelConfig::transformer(0, 32, 16, 8)).unwrap();
        let tok = m.embed()[0].value();
        for row in tok.data().chunks(32) {
            let rms = (row.iter().map(|x| x * x).sum::<f64>() / 32.0).sqrt();
            assert!((rms - 1.0).abs() < 1e-12);
        }
    }
}
