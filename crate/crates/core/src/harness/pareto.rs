//! Loss-compute Pareto frontier over completed runs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPoint {
    pub label: String,
    pub flops: u64,
    pub loss: f64,
}

/// Non-dominated runs under (fewer FLOPs, lower loss), sorted by FLOPs. Among
/// equal points the first in FLOP order is kept.
pub fn pareto_frontier(runs: &[RunPoint]) -> Vec<RunPoint> {
    let mut sorted: Vec<&RunPoint> = runs.iter().collect();
    sorted.sort_by(|a, b| a.flops.cmp(&b.flops).then(a.loss.total_cmp(&b.loss)));
    let mut best = f64::INFINITY;
    let mut out = Vec::new();
    for r in sorted {
        if r.loss < best {
            best = r.loss;
            out.push(r.clone());
        }
    }
    out
}
