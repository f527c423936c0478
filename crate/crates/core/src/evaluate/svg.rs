//! Static SVG plots for the report. Output is plain text with fixed
//! numeric formatting so reruns produce identical files.

use std::fmt::Write;

use super::{AveragedRoc, DualLabelConfusion, LosComparison};

const W: f64 = 420.0;
const H: f64 = 420.0;
const PAD: f64 = 50.0;

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>
"#,
        W / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, x_label: &str, y_label: &str) {
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD / 2.0, PAD);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn sx(x: f64) -> f64 {
    PAD + x * (W - 1.5 * PAD)
}

fn sy(y: f64) -> f64 {
    H - PAD - y * (H - 2.0 * PAD)
}

/// Mean ROC curves with shaded confidence bands, one per labeled series.
pub fn averaged_roc_svg(series: &[(&str, &AveragedRoc)], title: &str) -> String {
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, "False positive rate", "True positive rate");
    let _ = writeln!(out, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="grey" stroke-dasharray="4"/>"#, sx(0.0), sy(0.0), sx(1.0), sy(1.0));
    for (k, (name, roc)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut band = String::new();
        for (x, y) in roc.fpr_grid.iter().zip(&roc.ci_high) {
            let _ = write!(band, "{:.2},{:.2} ", sx(*x), sy(*y));
        }
        for (x, y) in roc.fpr_grid.iter().zip(&roc.ci_low).rev() {
            let _ = write!(band, "{:.2},{:.2} ", sx(*x), sy(*y));
        }
        let _ = writeln!(out, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.trim_end());
        let line: Vec<String> = roc.fpr_grid.iter().zip(&roc.mean_tpr).map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#, sx(0.55), sy(0.2) + 16.0 * k as f64, escape(name));
    }
    out.push_str("</svg>\n");
    out
}

/// Side-by-side day-binned LOS histograms (as class proportions).
pub fn los_histogram_svg(cmp: &LosComparison, title: &str) -> String {
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, "Length of stay (days)", "Fraction of stays");
    let classes = [("infected", "#d62728", &cmp.positive), ("control", "#1f77b4", &cmp.negative)];
    let n_bins = classes.iter().filter_map(|c| c.2.as_ref()).map(|s| s.histogram.len()).max().unwrap_or(0).max(1);
    let frac = |s: &super::LosClassSummary, i: usize| s.histogram.get(i).copied().unwrap_or(0) as f64 / s.n.max(1) as f64;
    let y_max = classes
        .iter()
        .filter_map(|c| c.2.as_ref())
        .flat_map(|s| (0..n_bins).map(move |i| frac(s, i)))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let slot = 1.0 / n_bins as f64;
    for (k, (name, color, summary)) in classes.iter().enumerate() {
        let Some(s) = summary else { continue };
        for i in 0..n_bins {
            let h = frac(s, i) / y_max;
            let x = (i as f64 + 0.5 * k as f64) * slot;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.7"/>"#,
                sx(x),
                sy(h),
                sx(x + 0.5 * slot) - sx(x),
                sy(0.0) - sy(h)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">{name} (n={}, mean {:.1} h)</text>"#,
            sx(0.45),
            sy(0.95) + 16.0 * k as f64,
            s.n,
            s.mean_hours
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Two 2×2 heatmaps (IRI-positive and IRI-negative) of prediction × VAP label.
pub fn confusion_svg(c: &DualLabelConfusion, title: &str) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let max = c.cells.iter().map(|c| c.count).max().unwrap_or(0).max(1) as f64;
    let cell = 70.0;
    for (panel, iri) in [true, false].into_iter().enumerate() {
        let ox = 40.0 + panel as f64 * 190.0;
        let oy = 90.0;
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">IRI {}</text>"#, ox + cell, oy - 20.0, if iri { "+" } else { "−" });
        for (r, predicted) in [true, false].into_iter().enumerate() {
            for (col, vap) in [true, false].into_iter().enumerate() {
                let n = c.count(predicted, vap, iri);
                let shade = 255.0 - 200.0 * n as f64 / max;
                let (x, y) = (ox + col as f64 * cell, oy + r as f64 * cell);
                let _ = writeln!(
                    out,
                    r#"<rect x="{x:.2}" y="{y:.2}" width="{cell}" height="{cell}" fill="rgb({0:.0},{0:.0},255)" stroke="black"/>"#,
                    shade
                );
                let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{n}</text>"#, x + cell / 2.0, y + cell / 2.0 + 4.0);
            }
        }
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">VAP +  /  VAP −</text>"#, ox + cell, oy + 2.0 * cell + 18.0);
    }
    let _ = writeln!(out, r#"<text x="20" y="{:.2}">rows: predicted + / predicted −; threshold {:.4}</text>"#, H - 40.0, c.threshold);
    out.push_str("</svg>\n");
    out
}
