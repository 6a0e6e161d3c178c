//! Plain-text SVG plots of a risk report. Coordinates are printed with a
//! fixed number of decimals so identical reports give identical bytes.

use std::fmt::Write;

use adw_core::evalharness::{roc_curve, RiskReport};

const W: f64 = 480.0;
const H: f64 = 360.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 32.0;
const BOTTOM: f64 = 44.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        LEFT + (v - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn open(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        escape(title)
    )
    .unwrap();
    let (ox, oy) = (f.x(f.x0), f.y(f.y0));
    writeln!(
        s,
        r#"<path d="M{:.1},{:.1} H{:.1} M{:.1},{:.1} V{:.1}" stroke="black" fill="none"/>"#,
        ox,
        oy,
        f.x(f.x1),
        ox,
        oy,
        f.y(f.y1)
    )
    .unwrap();
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (vx, vy) = (f.x0 + t * (f.x1 - f.x0), f.y0 + t * (f.y1 - f.y0));
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.2}</text>"#,
            f.x(vx),
            oy + 14.0,
            vx
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
            ox - 4.0,
            f.y(vy) + 4.0,
            vy
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        f.x((f.x0 + f.x1) / 2.0),
        H - 8.0,
        escape(xlabel)
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        f.y((f.y0 + f.y1) / 2.0),
        f.y((f.y0 + f.y1) / 2.0),
        escape(ylabel)
    )
    .unwrap();
    s
}

/// One ROC polyline per fold on the inference partition.
pub fn roc_plot(report: &RiskReport) -> String {
    let f = Frame {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
    };
    let mut s = open(
        "ROC (inference partition)",
        "false positive rate",
        "true positive rate",
        &f,
    );
    writeln!(
        s,
        r##"<path d="M{:.1},{:.1} L{:.1},{:.1}" stroke="#999" stroke-dasharray="4 3"/>"##,
        f.x(0.0),
        f.y(0.0),
        f.x(1.0),
        f.y(1.0)
    )
    .unwrap();
    for (i, fold) in report.folds.iter().enumerate() {
        let scores: Vec<f64> = fold.inference_scores.iter().map(|r| r.score).collect();
        let labels: Vec<_> = fold.inference_scores.iter().map(|r| r.label).collect();
        let Ok(curve) = roc_curve(&scores, &labels) else {
            continue;
        };
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", f.x(p.fpr), f.y(p.tpr)))
            .collect();
        writeln!(
            s,
            r#"<polyline class="roc" data-fold="{}" points="{}" stroke="{}" fill="none" stroke-width="1.5"/>"#,
            fold.fold,
            pts.join(" "),
            PALETTE[i % PALETTE.len()]
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Histogram of inference scores pooled over folds, one bar series per class.
pub fn score_histogram(report: &RiskReport, bins: usize) -> String {
    let bins = bins.max(1);
    let (mut nominal, mut anomalous) = (Vec::new(), Vec::new());
    for r in report.folds.iter().flat_map(|f| &f.inference_scores) {
        if r.label.is_anomalous() {
            anomalous.push(r.score);
        } else {
            nominal.push(r.score);
        }
    }
    let all = nominal.iter().chain(&anomalous);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo {
        (lo, hi)
    } else if lo.is_finite() {
        (lo - 0.5, lo + 0.5)
    } else {
        (0.0, 1.0)
    };
    let width = (hi - lo) / bins as f64;
    let count = |xs: &[f64]| {
        let mut c = vec![0usize; bins];
        for &x in xs {
            c[(((x - lo) / width) as usize).min(bins - 1)] += 1;
        }
        c
    };
    let (cn, ca) = (count(&nominal), count(&anomalous));
    let top = cn.iter().chain(&ca).copied().max().unwrap_or(0).max(1) as f64;
    let f = Frame {
        x0: lo,
        x1: hi,
        y0: 0.0,
        y1: top,
    };
    let mut s = open("Anomaly scores (inference partition)", "score", "count", &f);
    for (class, counts, color) in [("nominal", &cn, "#1f77b4"), ("anomalous", &ca, "#d62728")] {
        for (b, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let x0 = f.x(lo + b as f64 * width);
            let x1 = f.x(lo + (b + 1) as f64 * width);
            writeln!(
                s,
                r#"<rect class="{class}" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.5"/>"#,
                x0,
                f.y(c as f64),
                x1 - x0,
                f.y(0.0) - f.y(c as f64)
            )
            .unwrap();
        }
    }
    let max_n = nominal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_a = anomalous.iter().copied().fold(f64::INFINITY, f64::min);
    if !nominal.is_empty() && !anomalous.is_empty() && max_n < min_a {
        writeln!(
            s,
            r#"<text class="disjoint" x="{:.1}" y="{:.1}">classes disjoint: nominal &lt;= {:.4} &lt; {:.4} &lt;= anomalous</text>"#,
            LEFT + 8.0,
            TOP + 12.0,
            max_n,
            min_a
        )
        .unwrap();
    }
    writeln!(
        s,
        r##"<text x="{:.1}" y="{:.1}" fill="#1f77b4">nominal (n={})</text><text x="{:.1}" y="{:.1}" fill="#d62728">anomalous (n={})</text>"##,
        W - RIGHT - 150.0,
        TOP + 12.0,
        nominal.len(),
        W - RIGHT - 150.0,
        TOP + 26.0,
        anomalous.len()
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

/// Grouped bars per fold: inference AUROC, F1 and balanced accuracy.
pub fn fold_bars(report: &RiskReport) -> String {
    let metrics = [
        ("auroc_inference", "#1f77b4"),
        ("f1", "#ff7f0e"),
        ("balanced_accuracy", "#2ca02c"),
    ];
    let n = report.folds.len().max(1) as f64;
    let f = Frame {
        x0: 0.0,
        x1: n,
        y0: 0.0,
        y1: 1.0,
    };
    let mut s = open("Per-fold metrics", "fold", "value", &f);
    let slot = (f.x(1.0) - f.x(0.0)) / (metrics.len() as f64 + 1.0);
    for (i, fold) in report.folds.iter().enumerate() {
        for (j, (name, color)) in metrics.iter().enumerate() {
            let Some(v) = fold.metric(name) else { continue };
            let x = f.x(i as f64) + slot * (j as f64 + 0.5);
            writeln!(
                s,
                r#"<rect class="{name}" data-fold="{}" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
                fold.fold,
                x,
                f.y(v),
                slot,
                f.y(0.0) - f.y(v)
            )
            .unwrap();
        }
    }
    for (j, (name, color)) in metrics.iter().enumerate() {
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{name}</text>"#,
            W - RIGHT - 130.0,
            TOP + 12.0 + 14.0 * j as f64
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use adw_core::evalharness::{run_protocol, OracleFactory, ProtocolConfig};
    use adw_core::toy::label_only_manifest;

    fn oracle_report() -> RiskReport {
        let cfg = ProtocolConfig {
            folds: 1,
            ..ProtocolConfig::default()
        };
        run_protocol(&label_only_manifest(8, 4, 2), &OracleFactory, &cfg).unwrap()
    }

    fn polyline_points(svg: &str) -> Vec<Vec<(f64, f64)>> {
        svg.lines()
            .filter(|l| l.contains("class=\"roc\""))
            .map(|l| {
                let start = l.find("points=\"").unwrap() + 8;
                let end = start + l[start..].find('"').unwrap();
                l[start..end]
                    .split(' ')
                    .map(|p| {
                        let (x, y) = p.split_once(',').unwrap();
                        (x.parse().unwrap(), y.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_fold_roc_is_monotone() {
        let lines = polyline_points(&roc_plot(&oracle_report()));
        assert_eq!(lines.len(), 1);
        for w in lines[0].windows(2) {
            // x grows with fpr; y shrinks as tpr grows.
            assert!(w[1].0 >= w[0].0 && w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn perfect_separation_is_annotated() {
        let svg = score_histogram(&oracle_report(), 10);
        assert!(svg.contains("class=\"disjoint\""));
    }

    #[test]
    fn plots_are_deterministic() {
        let r = oracle_report();
        assert_eq!(roc_plot(&r), roc_plot(&r.clone()));
        assert_eq!(fold_bars(&r), fold_bars(&r.clone()));
    }
}
