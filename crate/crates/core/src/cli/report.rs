//! Cross-dataset summary table and SVG charts for the `report` command.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::eval::MetricRow;

/// Sampling-based methods; they are shown but never flagged as best token-level.
const SEQUENCE_LEVEL: [&str; 4] = ["se", "kle", "semantic_entropy", "kernel_language_entropy"];

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f",
];

pub struct ReportOutput {
    pub table: String,
    pub bar_svg: String,
    pub curve_svg: String,
}

#[derive(Debug, Deserialize)]
struct CurveRow {
    criterion: String,
    k: f64,
    auroc: f64,
    #[allow(dead_code)]
    runs: u64,
}

fn is_token_level(method: &str) -> bool {
    !SEQUENCE_LEVEL.contains(&method)
}

fn first_seen<'a>(it: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in it {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

struct Grid {
    datasets: Vec<String>,
    methods: Vec<String>,
    /// (method, dataset) -> (mean AUROC, mean ECE) over models.
    cells: BTreeMap<(String, String), (f64, f64)>,
}

impl Grid {
    fn build(rows: &[MetricRow]) -> Self {
        let datasets = first_seen(rows.iter().map(|r| r.dataset.as_str()));
        let methods = first_seen(rows.iter().map(|r| r.method.as_str()));
        let mut acc: BTreeMap<(String, String), (f64, f64, usize)> = BTreeMap::new();
        for r in rows {
            let e = acc
                .entry((r.method.clone(), r.dataset.clone()))
                .or_insert((0.0, 0.0, 0));
            e.0 += r.auroc;
            e.1 += r.ece;
            e.2 += 1;
        }
        let cells = acc
            .into_iter()
            .map(|(k, (a, e, n))| (k, (a / n as f64, e / n as f64)))
            .collect();
        Grid {
            datasets,
            methods,
            cells,
        }
    }

    fn cell(&self, method: &str, dataset: &str) -> Option<(f64, f64)> {
        self.cells
            .get(&(method.to_string(), dataset.to_string()))
            .copied()
    }

    fn average(&self, method: &str) -> Option<(f64, f64)> {
        let vals: Vec<(f64, f64)> = self
            .datasets
            .iter()
            .map(|d| self.cell(method, d))
            .collect::<Option<_>>()?;
        let n = vals.len() as f64;
        Some((
            vals.iter().map(|v| v.0).sum::<f64>() / n,
            vals.iter().map(|v| v.1).sum::<f64>() / n,
        ))
    }

    /// Token-level method with the highest value of `pick`, first row wins ties.
    fn best_tl(&self, pick: impl Fn(&str) -> Option<f64>) -> Option<String> {
        let mut best: Option<(String, f64)> = None;
        for m in self.methods.iter().filter(|m| is_token_level(m)) {
            if let Some(v) = pick(m) {
                if best.as_ref().is_none_or(|(_, b)| v > *b) {
                    best = Some((m.clone(), v));
                }
            }
        }
        best.map(|(m, _)| m)
    }
}

fn render_table(grid: &Grid) -> String {
    let mut out = String::from("| Method | Tier |");
    for d in &grid.datasets {
        let _ = write!(out, " {d} AUROC | {d} ECE |");
    }
    out.push_str(" Avg AUROC | Avg ECE | Best TL |\n|---|---|");
    for _ in 0..grid.datasets.len() + 1 {
        out.push_str("---:|---:|");
    }
    out.push_str(":---:|\n");

    let best_auroc: BTreeMap<&str, Option<String>> = grid
        .datasets
        .iter()
        .map(|d| (d.as_str(), grid.best_tl(|m| grid.cell(m, d).map(|c| c.0))))
        .collect();
    let best_ece: BTreeMap<&str, Option<String>> = grid
        .datasets
        .iter()
        .map(|d| (d.as_str(), grid.best_tl(|m| grid.cell(m, d).map(|c| -c.1))))
        .collect();
    let best_overall = grid.best_tl(|m| grid.average(m).map(|a| a.0));

    let mark = |v: f64, best: bool| {
        if best {
            format!("**{v:.3}**")
        } else {
            format!("{v:.3}")
        }
    };
    for m in &grid.methods {
        let tier = if is_token_level(m) { "TL" } else { "SL" };
        let _ = write!(out, "| {m} | {tier} |");
        for d in &grid.datasets {
            match grid.cell(m, d) {
                Some((a, e)) => {
                    let ba = best_auroc[d.as_str()].as_deref() == Some(m.as_str());
                    let be = best_ece[d.as_str()].as_deref() == Some(m.as_str());
                    let _ = write!(out, " {} | {} |", mark(a, ba), mark(e, be));
                }
                None => out.push_str(" - | - |"),
            }
        }
        match grid.average(m) {
            Some((a, e)) => {
                let _ = write!(out, " {a:.3} | {e:.3} |");
            }
            None => out.push_str(" - | - |"),
        }
        let flag = if best_overall.as_deref() == Some(m.as_str()) {
            "yes"
        } else {
            ""
        };
        let _ = writeln!(out, " {flag} |");
    }
    out
}

fn svg_header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn legend(out: &mut String, names: &[String], x: f64, y: f64) {
    for (i, name) in names.iter().enumerate() {
        let yy = y + 16.0 * i as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{x}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\
             <text x=\"{}\" y=\"{}\">{name}</text>",
            yy - 9.0,
            PALETTE[i % PALETTE.len()],
            x + 14.0,
            yy
        );
    }
}

/// Grouped bars of AUROC: one group per dataset, one bar per method.
fn render_bars(grid: &Grid) -> String {
    let (left, top, plot_h) = (50.0, 20.0, 240.0);
    let bar_w = 12.0;
    let group_w = bar_w * grid.methods.len() as f64 + 20.0;
    let plot_w = group_w * grid.datasets.len().max(1) as f64;
    let width = left + plot_w + 180.0;
    let height = top + plot_h + 40.0;
    let y_of = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut out = svg_header(width, height);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(tick);
        let _ = writeln!(
            out,
            "<line x1=\"{left}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#ddd\"/>\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{tick:.2}</text>",
            left + plot_w,
            left - 4.0,
            y + 4.0
        );
    }
    for (di, d) in grid.datasets.iter().enumerate() {
        let gx = left + group_w * di as f64 + 10.0;
        for (mi, m) in grid.methods.iter().enumerate() {
            if let Some((a, _)) = grid.cell(m, d) {
                let x = gx + bar_w * mi as f64;
                let _ = writeln!(
                    out,
                    "<rect x=\"{x}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\">\
                     <title>{m} {d}: {a:.3}</title></rect>",
                    y_of(a),
                    bar_w - 1.0,
                    top + plot_h - y_of(a),
                    PALETTE[mi % PALETTE.len()]
                );
            }
        }
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{d}</text>",
            gx + (group_w - 20.0) / 2.0,
            top + plot_h + 16.0
        );
    }
    legend(&mut out, &grid.methods, left + plot_w + 20.0, top + 10.0);
    out.push_str("</svg>\n");
    out
}

/// One polyline of AUROC against k per selection criterion.
fn render_curves(rows: &[CurveRow]) -> String {
    let (left, top, plot_w, plot_h) = (50.0, 20.0, 360.0, 240.0);
    let names = first_seen(rows.iter().map(|r| r.criterion.as_str()));
    let lo = rows
        .iter()
        .map(|r| r.auroc)
        .fold(f64::INFINITY, f64::min)
        .min(0.5);
    let hi = rows
        .iter()
        .map(|r| r.auroc)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(lo + 1e-6);
    let x_of = |k: f64| left + plot_w * k / 100.0;
    let y_of = |v: f64| top + plot_h * (1.0 - (v - lo) / (hi - lo));

    let mut out = svg_header(left + plot_w + 180.0, top + plot_h + 40.0);
    let _ = writeln!(
        out,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#999\"/>\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">k (%)</text>\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{hi:.3}</text>\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{lo:.3}</text>",
        left + plot_w / 2.0,
        top + plot_h + 30.0,
        left - 4.0,
        top + 4.0,
        left - 4.0,
        top + plot_h
    );
    for (i, name) in names.iter().enumerate() {
        let points: Vec<String> = rows
            .iter()
            .filter(|r| &r.criterion == name)
            .map(|r| format!("{:.2},{:.2}", x_of(r.k), y_of(r.auroc)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"{}\" points=\"{}\"/>",
            PALETTE[i % PALETTE.len()],
            points.join(" ")
        );
    }
    legend(&mut out, &names, left + plot_w + 20.0, top + 10.0);
    out.push_str("</svg>\n");
    out
}

/// Builds the Markdown table and both charts. `curves` is selection-curve CSV
/// text (possibly empty).
pub fn render_report(metrics: &[MetricRow], curves: &str) -> Result<ReportOutput> {
    let curve_rows: Vec<CurveRow> = if curves.trim().is_empty() {
        Vec::new()
    } else {
        csv::Reader::from_reader(curves.as_bytes())
            .deserialize()
            .enumerate()
            .map(|(i, r)| {
                r.map_err(|e| Error::Parse {
                    line: i + 2,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?
    };
    let grid = Grid::build(metrics);
    let mut table = String::new();
    if !metrics.is_empty() {
        table.push_str(&render_table(&grid));
    }
    if !curve_rows.is_empty() {
        if !table.is_empty() {
            table.push('\n');
        }
        table.push_str("| Criterion | k | AUROC |\n|---|---:|---:|\n");
        for r in &curve_rows {
            let _ = writeln!(table, "| {} | {} | {:.3} |", r.criterion, r.k, r.auroc);
        }
    }
    Ok(ReportOutput {
        table,
        bar_svg: render_bars(&grid),
        curve_svg: render_curves(&curve_rows),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(dataset: &str, method: &str, auroc: f64, ece: f64) -> MetricRow {
        MetricRow {
            dataset: dataset.into(),
            model: "m".into(),
            method: method.into(),
            agg: "mean".into(),
            auroc,
            ece,
            n: 10,
        }
    }

    #[test]
    fn sequence_level_rows_are_never_best() {
        let rows = vec![
            row("a", "se", 0.9, 0.1),
            row("a", "entropy", 0.6, 0.2),
            row("a", "vigtuq", 0.7, 0.3),
        ];
        let out = render_report(&rows, "").unwrap();
        let best: Vec<&str> = out.table.lines().filter(|l| l.ends_with("yes |")).collect();
        assert_eq!(best.len(), 1);
        assert!(best[0].starts_with("| vigtuq |"));
        assert!(out.bar_svg.starts_with("<svg"));
    }
}
