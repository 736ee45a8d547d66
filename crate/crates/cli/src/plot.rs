//! Static SVG line charts of one logged quantity, with dashed reset markers.

use std::fmt::Write;
use std::str::FromStr;

use tta_reset::engine::StepRow;

use crate::error::CliError;
use crate::record::LoadedRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Accuracy,
    Concentration,
    Baseline,
    Inconsistency,
    PenaltyWeight,
    Momentum,
    ResetProportion,
    LayersReset,
}

impl Quantity {
    pub const ALL: [Quantity; 8] = [
        Quantity::Accuracy,
        Quantity::Concentration,
        Quantity::Baseline,
        Quantity::Inconsistency,
        Quantity::PenaltyWeight,
        Quantity::Momentum,
        Quantity::ResetProportion,
        Quantity::LayersReset,
    ];

    /// The record column this quantity is read from.
    pub fn column(self) -> &'static str {
        match self {
            Quantity::Accuracy => "accuracy",
            Quantity::Concentration => "c_t",
            Quantity::Baseline => "bar_c",
            Quantity::Inconsistency => "phi_t",
            Quantity::PenaltyWeight => "lambda_f",
            Quantity::Momentum => "mu_c",
            Quantity::ResetProportion => "r_t",
            Quantity::LayersReset => "layers_reset",
        }
    }

    pub fn value(self, row: &StepRow) -> f64 {
        match self {
            Quantity::Accuracy => row.accuracy,
            Quantity::Concentration => row.c_t,
            Quantity::Baseline => row.bar_c,
            Quantity::Inconsistency => row.phi_t,
            Quantity::PenaltyWeight => row.lambda_f,
            Quantity::Momentum => row.mu_c,
            Quantity::ResetProportion => row.r_t,
            Quantity::LayersReset => row.layers_reset as f64,
        }
    }
}

impl FromStr for Quantity {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Quantity::ALL.into_iter().find(|q| q.column() == s).ok_or_else(|| {
            let known: Vec<&str> = Quantity::ALL.iter().map(|q| q.column()).collect();
            CliError::Config(format!("unknown quantity `{s}` (known: {})", known.join(", ")))
        })
    }
}

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 40.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One chart with a line per record. Output bytes depend only on the input.
pub fn render_svg(records: &[LoadedRecord], quantity: Quantity) -> String {
    let max_step = records
        .iter()
        .flat_map(|r| r.record.rows.last())
        .map(|r| r.step)
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let values = records.iter().flat_map(|r| r.record.rows.iter().map(|row| quantity.value(row)));
    let (mut lo, mut hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |step: usize| LEFT + plot_w * step as f64 / max_step;
    let y = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();
    writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444444"/>"##
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="{LEFT}" y="{:.2}" font-size="12" font-family="sans-serif">step (max {})</text>"#,
        HEIGHT - 12.0,
        max_step as usize
    )
    .unwrap();
    for (v, anchor_y) in [(hi, TOP + 10.0), (lo, TOP + plot_h)] {
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{anchor_y:.2}" font-size="11" font-family="sans-serif" text-anchor="end">{:.4}</text>"#,
            LEFT - 6.0,
            v
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="8" y="{:.2}" font-size="12" font-family="sans-serif">{}</text>"#,
        TOP + plot_h / 2.0,
        quantity.column()
    )
    .unwrap();

    for (i, loaded) in records.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for row in loaded.record.rows.iter().filter(|r| r.reset) {
            let xr = x(row.step);
            writeln!(
                svg,
                r#"<line class="reset" x1="{xr:.2}" y1="{TOP:.2}" x2="{xr:.2}" y2="{:.2}" stroke="{color}" stroke-opacity="0.5" stroke-dasharray="4 3"/>"#,
                TOP + plot_h
            )
            .unwrap();
        }
        let points: Vec<String> = loaded
            .record
            .rows
            .iter()
            .filter(|r| quantity.value(r).is_finite())
            .map(|r| format!("{:.2},{:.2}", x(r.step), y(quantity.value(r))))
            .collect();
        writeln!(
            svg,
            r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
            points.join(" ")
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" font-family="sans-serif" fill="{color}">{}</text>"#,
            WIDTH - RIGHT + 10.0,
            TOP + 14.0 + 16.0 * i as f64,
            escape(&loaded.meta.strategy)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

/// Number of reset markers in a rendered chart.
pub fn marker_count(svg: &str) -> usize {
    svg.matches(r#"<line class="reset""#).count()
}
