//! Self-contained SVG figures: loss curves, Pareto scatter, theory slack.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pareto::{pareto_frontier, RunPoint};
use super::runlog::RunLog;
use super::HarnessError;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];
const W: f64 = 720.0;
const H: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    LossVsSteps,
    LossVsFlops,
    Pareto,
    TheorySlack,
}

impl std::str::FromStr for PlotKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "loss-vs-steps" => Ok(PlotKind::LossVsSteps),
            "loss-vs-flops" => Ok(PlotKind::LossVsFlops),
            "pareto" => Ok(PlotKind::Pareto),
            "theory-slack" => Ok(PlotKind::TheorySlack),
            other => Err(format!("unknown plot kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Markers,
    /// Filled, larger markers joined by a line (Pareto frontier).
    Highlight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".into()
    } else if !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.04 * (hi - lo);
        Axis {
            lo: lo - pad,
            hi: hi + pad,
            log,
        }
    }

    fn map(&self, v: f64, from: f64, to: f64) -> Option<f64> {
        let v = if self.log {
            if v <= 0.0 {
                return None;
            }
            v.log10()
        } else {
            v
        };
        v.is_finite().then(|| from + (v - self.lo) / (self.hi - self.lo) * (to - from))
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            if b >= a {
                return (a..=b).map(|e| 10f64.powi(e)).collect();
            }
        }
        let raw = (self.hi - self.lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
        let start = (self.lo / step).ceil() as i64;
        let end = (self.hi / step).floor() as i64;
        (start..=end)
            .map(|k| {
                let v = k as f64 * step;
                if self.log {
                    10f64.powf(v)
                } else {
                    v
                }
            })
            .collect()
    }
}

impl Figure {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Figure {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            log_y: false,
            series: Vec::new(),
        }
    }

    pub fn to_svg(&self) -> String {
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        let xa = Axis::new(all().map(|p| p.0), self.log_x);
        let ya = Axis::new(all().map(|p| p.1), self.log_y);
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            (x0 + x1) / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
            x1 - x0,
            y0 - y1
        );
        for t in xa.ticks() {
            if let Some(px) = xa.map(t, x0, x1) {
                let _ = writeln!(
                    s,
                    r##"<line class="tick" x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{}" stroke="#333"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"##,
                    y0 + 5.0,
                    y0 + 18.0,
                    fmt_tick(t)
                );
            }
        }
        for t in ya.ticks() {
            if let Some(py) = ya.map(t, y0, y1) {
                let _ = writeln!(
                    s,
                    r##"<line class="tick" x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="#333"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
                    x0 - 5.0,
                    x0 - 8.0,
                    py + 4.0,
                    fmt_tick(t)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}{}</text>"#,
            (x0 + x1) / 2.0,
            H - 18.0,
            escape(&self.x_label),
            if self.log_x { " (log)" } else { "" }
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(20 {}) rotate(-90)" text-anchor="middle">{}{}</text>"#,
            (y0 + y1) / 2.0,
            escape(&self.y_label),
            if self.log_y { " (log)" } else { "" }
        );
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<(f64, f64)> = series
                .points
                .iter()
                .filter_map(|&(x, y)| Some((xa.map(x, x0, x1)?, ya.map(y, y0, y1)?)))
                .collect();
            let coords = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect::<Vec<_>>().join(" ");
            match series.style {
                Style::Line => {
                    let _ = writeln!(
                        s,
                        r#"<polyline class="series" data-label="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>"#,
                        escape(&series.label)
                    );
                }
                Style::Markers | Style::Highlight => {
                    let highlight = series.style == Style::Highlight;
                    let _ = writeln!(s, r#"<g class="series" data-label="{}">"#, escape(&series.label));
                    if highlight && pts.len() > 1 {
                        let _ = writeln!(
                            s,
                            r#"<polyline fill="none" stroke="{color}" stroke-dasharray="4 3" points="{coords}"/>"#
                        );
                    }
                    for (x, y) in &pts {
                        let (r, fill) = if highlight { (5.0, color) } else { (3.5, "none") };
                        let _ = writeln!(
                            s,
                            r#"<circle class="{}" cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{fill}" stroke="{color}"/>"#,
                            if highlight { "frontier" } else { "point" }
                        );
                    }
                    let _ = writeln!(s, "</g>");
                }
            }
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                x1 + 12.0,
                x1 + 32.0,
                x1 + 38.0,
                ly + 4.0,
                escape(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_svg()).map_err(|source| HarnessError::io(path, source))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XAxis {
    Steps,
    Flops,
}

/// Validation curves, one polyline per log with one point per evaluation.
/// With `from_step`, each curve starts at that step (grown-only perspective).
pub fn loss_figure(logs: &[(String, RunLog)], x: XAxis, log_y: bool, from_step: Option<u64>) -> Figure {
    let (title, xl) = match x {
        XAxis::Steps => ("validation loss vs steps", "step"),
        XAxis::Flops => ("validation loss vs FLOPs", "FLOPs"),
    };
    let mut fig = Figure::new(title, xl, "validation loss");
    fig.log_y = log_y;
    fig.log_x = x == XAxis::Flops;
    for (label, log) in logs {
        let start = from_step.filter(|_| !log.expansion_steps().is_empty()).unwrap_or(0);
        let points = log
            .records
            .iter()
            .filter(|r| r.step >= start)
            .filter_map(|r| {
                r.val_loss.map(|v| {
                    let xv = match x {
                        XAxis::Steps => r.step as f64,
                        XAxis::Flops => r.flops as f64,
                    };
                    (xv, v)
                })
            })
            .collect();
        fig.series.push(Series {
            label: label.clone(),
            points,
            style: Style::Line,
        });
    }
    fig
}

/// Figures for a set of logs: the entire-training view and, when a log
/// contains an expansion, the grown-only view starting at its last expansion.
pub fn loss_figures(logs: &[(String, RunLog)], x: XAxis, log_y: bool) -> Vec<(String, Figure)> {
    let mut out = vec![("entire".to_string(), loss_figure(logs, x, log_y, None))];
    let tau = logs.iter().filter_map(|(_, l)| l.expansion_steps().last().copied()).max();
    if let Some(tau) = tau {
        let mut fig = loss_figure(logs, x, log_y, Some(tau));
        fig.title = format!("{} (grown model from step {tau})", fig.title);
        out.push(("grown_only".to_string(), fig));
    }
    out
}

pub fn pareto_figure(runs: &[RunPoint]) -> Figure {
    let frontier = pareto_frontier(runs);
    let mut fig = Figure::new("loss-compute tradeoff", "FLOPs", "final validation loss");
    fig.log_x = true;
    fig.series.push(Series {
        label: "runs".into(),
        points: runs.iter().map(|r| (r.flops as f64, r.loss)).collect(),
        style: Style::Markers,
    });
    fig.series.push(Series {
        label: "Pareto frontier".into(),
        points: frontier.iter().map(|r| (r.flops as f64, r.loss)).collect(),
        style: Style::Highlight,
    });
    fig
}

/// Bound slack per trial (or per tau), one marker series per label.
pub fn theory_slack_figure(series: &[(String, Vec<(f64, f64)>)]) -> Figure {
    let mut fig = Figure::new("bound slack", "tau / T", "rhs - lhs");
    for (label, points) in series {
        fig.series.push(Series {
            label: label.clone(),
            points: points.clone(),
            style: Style::Markers,
        });
    }
    fig
}
