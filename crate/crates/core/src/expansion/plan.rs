use serde::{Deserialize, Serialize};

use super::ExpansionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionMethod {
    Random,
    CopyingLast,
    CopyingStack,
    CopyingInter,
    Zero,
    CopyingZeroNorm,
    CopyingZeroLastLinear,
}

impl ExpansionMethod {
    pub const ALL: [ExpansionMethod; 7] = [
        ExpansionMethod::Random,
        ExpansionMethod::CopyingLast,
        ExpansionMethod::CopyingStack,
        ExpansionMethod::CopyingInter,
        ExpansionMethod::Zero,
        ExpansionMethod::CopyingZeroNorm,
        ExpansionMethod::CopyingZeroLastLinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExpansionMethod::Random => "random",
            ExpansionMethod::CopyingLast => "copying_last",
            ExpansionMethod::CopyingStack => "copying_stack",
            ExpansionMethod::CopyingInter => "copying_inter",
            ExpansionMethod::Zero => "zero",
            ExpansionMethod::CopyingZeroNorm => "copying_zero_norm",
            ExpansionMethod::CopyingZeroLastLinear => "copying_zero_last_linear",
        }
    }

    pub fn copies(self) -> bool {
        !matches!(self, ExpansionMethod::Random | ExpansionMethod::Zero)
    }

    /// Copy-based methods that zero a sub-layer of every copied block.
    pub fn zeroes_copies(self) -> bool {
        matches!(
            self,
            ExpansionMethod::CopyingZeroNorm | ExpansionMethod::CopyingZeroLastLinear
        )
    }

    /// Whether the expanded model computes exactly the same function.
    pub fn function_preserving(self) -> bool {
        matches!(
            self,
            ExpansionMethod::Zero | ExpansionMethod::CopyingZeroNorm | ExpansionMethod::CopyingZeroLastLinear
        )
    }
}

impl std::str::FromStr for ExpansionMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ExpansionMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown expansion method {s:?}"))
    }
}

/// Where new randomly initialized blocks go relative to the old ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionSite {
    /// After the old blocks, next to the readout.
    #[default]
    Bottom,
    /// Before the old blocks, next to the embedding.
    Top,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerStatePolicy {
    #[default]
    Inherit,
    Copy,
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSource {
    /// Index of a block in the source model (0-based).
    Old(usize),
    New,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionPlan {
    pub source_depth: usize,
    pub target_depth: usize,
    pub method: ExpansionMethod,
    pub site: InsertionSite,
    pub mapping: Vec<BlockSource>,
}

impl std::fmt::Display for ExpansionPlan {
    /// 1-based layout with `R` for new blocks, e.g. `[1,2,3,R,R,R]`.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self
            .mapping
            .iter()
            .map(|s| match s {
                BlockSource::Old(i) => (i + 1).to_string(),
                BlockSource::New => "R".to_string(),
            })
            .collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// Deterministic block layout for growing `source` blocks into `target`.
///
/// Stacking repeats whole cycles and then a prefix when the ratio is not an
/// integer; interleaving gives the first `target % source` blocks one extra
/// repeat.
pub fn plan_expansion(
    source: usize,
    target: usize,
    method: ExpansionMethod,
    site: InsertionSite,
) -> Result<ExpansionPlan, ExpansionError> {
    if target < source {
        return Err(ExpansionError::Shrinking {
            source_depth: source,
            target,
        });
    }
    if method.copies() && source == 0 {
        return Err(ExpansionError::CopyFromEmpty { method });
    }
    let old = (0..source).map(BlockSource::Old);
    let fresh = std::iter::repeat_n(BlockSource::New, target - source);
    let mapping: Vec<BlockSource> = match method {
        ExpansionMethod::Random if site == InsertionSite::Top => fresh.chain(old).collect(),
        ExpansionMethod::Random | ExpansionMethod::Zero => old.chain(fresh).collect(),
        ExpansionMethod::CopyingLast => old
            .chain(std::iter::repeat_n(BlockSource::Old(source - 1), target - source))
            .collect(),
        ExpansionMethod::CopyingStack | ExpansionMethod::CopyingZeroNorm | ExpansionMethod::CopyingZeroLastLinear => {
            (0..target).map(|j| BlockSource::Old(j % source)).collect()
        }
        ExpansionMethod::CopyingInter => {
            let (base, extra) = (target / source, target % source);
            (0..source)
                .flat_map(|i| std::iter::repeat_n(BlockSource::Old(i), base + usize::from(i < extra)))
                .collect()
        }
    };
    Ok(ExpansionPlan {
        source_depth: source,
        target_depth: target,
        method,
        site,
        mapping,
    })
}
