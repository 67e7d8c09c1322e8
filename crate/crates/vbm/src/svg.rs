//! Minimal static SVG plots: ROC curves with a chance diagonal, and
//! stratified box plots with a mean +- SE panel. Output is deterministic;
//! the only environment-dependent line is the generator comment.

pub const GENERATOR_COMMENT: &str = "<!-- generator: vbm-svg v1 -->";

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// ROC plot: one polyline per named curve plus the chance diagonal.
pub fn roc_svg(curves: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h) = (420.0, 420.0);
    let (x0, y0, x1, y1) = (60.0, 20.0, 400.0, 360.0);
    let px = |f: f64| x0 + f * (x1 - x0);
    let py = |t: f64| y1 - t * (y1 - y0);
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    s.push_str(GENERATOR_COMMENT);
    s.push('\n');
    s.push_str(&format!(
        "<rect x=\"{x0}\" y=\"{y0}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n",
        x1 - x0,
        y1 - y0
    ));
    // axis ticks at 0, 0.5, 1
    for t in [0.0, 0.5, 1.0] {
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            fmt(px(t)),
            y1 + 16.0,
            fmt(t)
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            x0 - 6.0,
            fmt(py(t) + 4.0),
            fmt(t)
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">false positive rate</text>\n",
        fmt((x0 + x1) / 2.0),
        h - 8.0
    ));
    s.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">true positive rate</text>\n",
        fmt((y0 + y1) / 2.0),
        fmt((y0 + y1) / 2.0)
    ));
    // chance diagonal
    s.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#999\" stroke-dasharray=\"5,4\"/>\n",
        fmt(px(0.0)),
        fmt(py(0.0)),
        fmt(px(1.0)),
        fmt(py(1.0))
    ));
    for (i, (name, points)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = points.iter().map(|&(f, t)| format!("{},{}", fmt(px(f)), fmt(py(t)))).collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{name}</text>\n",
            x0 + 10.0,
            y0 + 16.0 + 14.0 * i as f64
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// One labeled group of values in the stratified plot.
#[derive(Debug, Clone)]
pub struct BoxGroup {
    pub label: String,
    pub values: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Box plots (median, quartiles, whiskers at min/max) with a mean +- SE
/// panel below.
pub fn box_svg(groups: &[BoxGroup]) -> String {
    let n = groups.len().max(1);
    let (w, h) = (80.0 + 90.0 * n as f64, 500.0);
    let (y0, y1) = (20.0, 300.0); // box panel
    let (m0, m1) = (340.0, 460.0); // mean +- SE panel
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for g in groups {
        for &v in &g.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || hi <= lo {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let py = |v: f64, top: f64, bot: f64| bot - (v - lo) / (hi - lo) * (bot - top);
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    s.push_str(GENERATOR_COMMENT);
    s.push('\n');
    for (i, g) in groups.iter().enumerate() {
        let cx = 80.0 + 90.0 * i as f64 + 30.0;
        let color = PALETTE[i % PALETTE.len()];
        let mut sorted = g.values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.is_empty() {
            continue;
        }
        let (q1, med, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.5), quantile(&sorted, 0.75));
        let (vmin, vmax) = (sorted[0], *sorted.last().unwrap());
        let bw = 36.0;
        // whiskers
        s.push_str(&format!(
            "<line x1=\"{cx}\" y1=\"{}\" x2=\"{cx}\" y2=\"{}\" stroke=\"#333\"/>\n",
            fmt(py(vmin, y0, y1)),
            fmt(py(vmax, y0, y1))
        ));
        // box
        s.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{bw}\" height=\"{}\" fill=\"{color}\" fill-opacity=\"0.35\" stroke=\"#333\"/>\n",
            fmt(cx - bw / 2.0),
            fmt(py(q3, y0, y1)),
            fmt(py(q1, y0, y1) - py(q3, y0, y1))
        ));
        // median
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000\" stroke-width=\"1.5\"/>\n",
            fmt(cx - bw / 2.0),
            fmt(py(med, y0, y1)),
            fmt(cx + bw / 2.0),
            fmt(py(med, y0, y1))
        ));
        // label
        s.push_str(&format!(
            "<text x=\"{cx}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            y1 + 16.0,
            g.label
        ));
        // mean +- SE panel
        let mean = g.values.iter().sum::<f64>() / g.values.len() as f64;
        let se = if g.values.len() > 1 {
            let var = g.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (g.values.len() - 1) as f64;
            (var / g.values.len() as f64).sqrt()
        } else {
            0.0
        };
        s.push_str(&format!(
            "<circle cx=\"{cx}\" cy=\"{}\" r=\"3.5\" fill=\"{color}\"/>\n",
            fmt(py(mean, m0, m1))
        ));
        s.push_str(&format!(
            "<line x1=\"{cx}\" y1=\"{}\" x2=\"{cx}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            fmt(py(mean - se, m0, m1)),
            fmt(py(mean + se, m0, m1))
        ));
    }
    s.push_str(&format!(
        "<text x=\"40\" y=\"{}\" font-size=\"11\">mean \u{b1} SE</text>\n",
        m0 - 8.0
    ));
    s.push_str("</svg>\n");
    s
}
