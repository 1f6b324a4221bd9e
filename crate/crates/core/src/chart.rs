//! SVG line chart of global accuracy against simulated time.

use std::fmt::Write as _;

use crate::data::Category;
use crate::error::{Error, Result};
use crate::output::RoundRow;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 52.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#17becf", "#e377c2", "#7f7f7f",
];

/// Marker fill for the category of a round's slowest node.
pub fn category_color(category: Category) -> &'static str {
    match category {
        Category::Gold => "#f2c200",
        Category::Silver => "#a8a8a8",
        Category::Bronze => "#e07b00",
        Category::Garbage => "#6b4226",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint {
    pub elapsed_time: f64,
    pub accuracy: f64,
    pub slowest: Option<Category>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartSeries {
    pub label: String,
    pub points: Vec<ChartPoint>,
}

impl ChartSeries {
    pub fn from_rows(label: impl Into<String>, rows: &[RoundRow]) -> Self {
        ChartSeries {
            label: label.into(),
            points: rows
                .iter()
                .map(|r| ChartPoint {
                    elapsed_time: r.elapsed_time,
                    accuracy: r.global_accuracy,
                    slowest: Some(r.slowest_category),
                })
                .collect(),
        }
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

struct Axes {
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Axes {
    fn fit(series: &[ChartSeries]) -> Self {
        let pts = series.iter().flat_map(|s| &s.points);
        let (mut x_max, mut y_min, mut y_max) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
        for p in pts {
            x_max = x_max.max(p.elapsed_time);
            y_min = y_min.min(p.accuracy);
            y_max = y_max.max(p.accuracy);
        }
        if x_max <= 0.0 {
            x_max = 1.0;
        }
        let mut y_min = ((y_min * 10.0).floor() / 10.0).max(0.0);
        let mut y_max = ((y_max * 10.0).ceil() / 10.0).min(1.0);
        if y_max - y_min < 0.1 {
            y_min = (y_min - 0.05).max(0.0);
            y_max = (y_min + 0.1).min(1.0);
            y_min = y_max - 0.1;
        }
        Axes {
            x_max,
            y_min,
            y_max,
        }
    }

    fn x(&self, t: f64) -> f64 {
        LEFT + t / self.x_max * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, acc: f64) -> f64 {
        HEIGHT - BOTTOM - (acc - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - TOP - BOTTOM)
    }
}

/// Renders one polyline per series; legend entries follow input order.
pub fn render_chart(series: &[ChartSeries]) -> Result<String> {
    if series.is_empty() {
        return Err(Error::Usage("chart needs at least one series".into()));
    }
    for s in series {
        if s.points.is_empty() {
            return Err(Error::Usage(format!("series `{}` has no points", s.label)));
        }
        if let Some(p) = s
            .points
            .iter()
            .find(|p| !(p.elapsed_time.is_finite() && p.accuracy.is_finite()))
        {
            return Err(Error::NonFinite(format!(
                "series `{}` point ({}, {})",
                s.label, p.elapsed_time, p.accuracy
            )));
        }
    }
    let axes = Axes::fit(series);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );

    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        svg,
        r#"<g class="axes" stroke="black"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#
    );
    svg.push_str("<g class=\"ticks\">\n");
    for i in 0..=5 {
        let t = axes.x_max * i as f64 / 5.0;
        let x = axes.x(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{t:.1}</text>"##,
            y0 + 5.0,
            y0 + 18.0
        );
    }
    let steps = ((axes.y_max - axes.y_min) * 10.0).round() as usize;
    for i in 0..=steps {
        let acc = axes.y_min + i as f64 / 10.0;
        let y = axes.y(acc);
        let _ = writeln!(
            svg,
            r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#e6e6e6"/><text x="{:.2}" y="{:.2}" text-anchor="end">{acc:.2}</text>"##,
            x0 - 6.0,
            y + 4.0
        );
    }
    svg.push_str("</g>\n");
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">simulated time (s)</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">global accuracy</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", axes.x(p.elapsed_time), axes.y(p.accuracy)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<g class="series" data-label="{}"><polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            escape(&s.label),
            coords.join(" ")
        );
        for p in &s.points {
            let fill = p.slowest.map_or(color, category_color);
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{fill}" stroke="{color}"/>"#,
                axes.x(p.elapsed_time),
                axes.y(p.accuracy)
            );
        }
        svg.push_str("</g>\n");
    }

    let lx = WIDTH - RIGHT + 16.0;
    svg.push_str("<g class=\"legend\">\n");
    for (i, s) in series.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            PALETTE[i % PALETTE.len()],
            lx + 26.0,
            y + 4.0,
            escape(&s.label)
        );
    }
    let mut cats: Vec<Category> = series
        .iter()
        .flat_map(|s| s.points.iter().filter_map(|p| p.slowest))
        .collect();
    cats.sort();
    cats.dedup();
    let base = TOP + 10.0 + 18.0 * series.len() as f64 + 14.0;
    if !cats.is_empty() {
        let _ = writeln!(svg, r#"<text x="{lx}" y="{base}">slowest node</text>"#);
    }
    for (i, c) in cats.iter().enumerate() {
        let y = base + 18.0 * (i + 1) as f64;
        let _ = writeln!(
            svg,
            r#"<circle cx="{}" cy="{y}" r="4" fill="{}"/><text x="{}" y="{}">{c}</text>"#,
            lx + 10.0,
            category_color(*c),
            lx + 26.0,
            y + 4.0
        );
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}
