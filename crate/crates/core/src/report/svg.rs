//! Static SVG charts. Output depends only on the input numbers, so files are reproducible.

use std::fmt::Write;
use std::path::Path;

use crate::error::{Error, Result};

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 80.0;
const PALETTE: [&str; 8] = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c",
];

pub(crate) fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Canvas {
    body: String,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Canvas {
    fn new(title: &str, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) -> Self {
        let mut body = String::new();
        let _ = write!(
            body,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
             <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
             <text x=\"{:.1}\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
            W / 2.0,
            escape(title)
        );
        let (y0, y1) = if y1 > y0 { (y0, y1) } else { (y0 - 1.0, y0 + 1.0) };
        let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 1.0, x0 + 1.0) };
        Canvas { body, x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }

    fn axes(&mut self, y_label: &str, x_label: Option<&str>, x_ticks: bool) {
        let (l, b) = (LEFT, H - BOTTOM);
        let _ = writeln!(self.body, "<line x1=\"{l}\" y1=\"{TOP}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>");
        let _ = writeln!(self.body, "<line x1=\"{l}\" y1=\"{b}\" x2=\"{:.1}\" y2=\"{b}\" stroke=\"black\"/>", W - RIGHT);
        for k in 0..=4 {
            let v = self.y0 + (self.y1 - self.y0) * k as f64 / 4.0;
            let y = self.py(v);
            let _ = writeln!(
                self.body,
                "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{l}\" y2=\"{y:.1}\" stroke=\"black\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
                l - 4.0,
                l - 6.0,
                y + 4.0,
                tick(v)
            );
            if x_ticks {
                let xv = self.x0 + (self.x1 - self.x0) * k as f64 / 4.0;
                let x = self.px(xv);
                let _ = writeln!(
                    self.body,
                    "<line x1=\"{x:.1}\" y1=\"{b}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/><text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
                    b + 4.0,
                    b + 18.0,
                    tick(xv)
                );
            }
        }
        let _ = writeln!(
            self.body,
            "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">{}</text>",
            (TOP + b) / 2.0,
            (TOP + b) / 2.0,
            escape(y_label)
        );
        if let Some(xl) = x_label {
            let _ = writeln!(self.body, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", (LEFT + W - RIGHT) / 2.0, H - 20.0, escape(xl));
        }
    }

    fn finish(mut self, path: &Path) -> Result<()> {
        self.body.push_str("</svg>\n");
        std::fs::write(path, self.body).map_err(|e| Error::io(path, e))
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" { "0.000".into() } else { s }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// One bar per category.
pub fn bar_chart(path: &Path, title: &str, y_label: &str, bars: &[(String, f64)]) -> Result<()> {
    let hi = bars.iter().map(|b| b.1).fold(0.0, f64::max);
    let lo = bars.iter().map(|b| b.1).fold(0.0, f64::min);
    let mut c = Canvas::new(title, (0.0, bars.len().max(1) as f64), (lo, if hi > lo { hi * 1.1 } else { lo + 1.0 }));
    c.axes(y_label, None, false);
    for (i, (name, v)) in bars.iter().enumerate() {
        let (xa, xb) = (c.px(i as f64 + 0.15), c.px(i as f64 + 0.85));
        let (ya, yb) = (c.py(v.max(0.0)), c.py(v.min(0.0)));
        let _ = writeln!(
            c.body,
            "<rect x=\"{xa:.1}\" y=\"{ya:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.3}</text>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            xb - xa,
            yb - ya,
            color(i),
            (xa + xb) / 2.0,
            ya - 4.0,
            (xa + xb) / 2.0,
            H - BOTTOM + 18.0,
            escape(name)
        );
    }
    c.finish(path)
}

/// Gaussian kernel density on `grid`, Silverman bandwidth.
fn density(values: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let bw = if sd > 0.0 { 1.06 * sd * n.powf(-0.2) } else { 0.05 };
    grid.iter()
        .map(|g| values.iter().map(|v| (-0.5 * ((g - v) / bw).powi(2)).exp()).sum::<f64>() / (n * bw))
        .collect()
}

/// Mirrored density per group, annotated with the group's sample size.
pub fn violin_plot(path: &Path, title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> Result<()> {
    let (lo, hi) = bounds(groups.iter().flat_map(|g| g.1.iter().copied()));
    let (lo, hi) = if lo.is_finite() { (lo - 0.1, hi + 0.1) } else { (-1.0, 1.0) };
    let mut c = Canvas::new(title, (0.0, groups.len().max(1) as f64), (lo, hi));
    c.axes(y_label, None, false);
    let grid: Vec<f64> = (0..=60).map(|k| lo + (hi - lo) * k as f64 / 60.0).collect();
    for (i, (name, values)) in groups.iter().enumerate() {
        let centre = c.px(i as f64 + 0.5);
        let half_width = (c.px(1.0) - c.px(0.0)) * 0.4;
        if !values.is_empty() {
            let dens = density(values, &grid);
            let peak = dens.iter().copied().fold(0.0, f64::max).max(1e-12);
            let mut pts = Vec::new();
            for (g, d) in grid.iter().zip(&dens) {
                pts.push(format!("{:.1},{:.1}", centre + half_width * d / peak, c.py(*g)));
            }
            for (g, d) in grid.iter().zip(&dens).rev() {
                pts.push(format!("{:.1},{:.1}", centre - half_width * d / peak, c.py(*g)));
            }
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let median = crate::stats::quantile(&sorted, 0.5);
            let _ = writeln!(
                c.body,
                "<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.6\" stroke=\"black\"/>\n\
                 <line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"black\" stroke-width=\"2\"/>",
                pts.join(" "),
                color(i),
                centre - half_width * 0.3,
                centre + half_width * 0.3,
                y = c.py(median)
            );
        }
        let _ = writeln!(
            c.body,
            "<text x=\"{centre:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n<text x=\"{centre:.1}\" y=\"{:.1}\" text-anchor=\"middle\">(n={})</text>",
            H - BOTTOM + 18.0,
            escape(name),
            H - BOTTOM + 34.0,
            values.len()
        );
    }
    c.finish(path)
}

/// Overlaid histograms (as outlines) of each group on shared bins.
pub fn distribution_plot(path: &Path, title: &str, x_label: &str, groups: &[(String, Vec<f64>)], bins: usize) -> Result<()> {
    let (lo, hi) = bounds(groups.iter().flat_map(|g| g.1.iter().copied()));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else if lo.is_finite() { (lo - 0.5, lo + 0.5) } else { (-1.0, 1.0) };
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;
    let counts: Vec<Vec<usize>> = groups
        .iter()
        .map(|(_, vs)| {
            let mut c = vec![0; bins];
            for v in vs {
                let b = (((v - lo) / width) as usize).min(bins - 1);
                c[b] += 1;
            }
            c
        })
        .collect();
    let peak = counts.iter().flatten().copied().max().unwrap_or(1).max(1) as f64;
    let mut c = Canvas::new(title, (lo, hi), (0.0, peak * 1.1));
    c.axes("count", Some(x_label), true);
    for (i, ((name, _), cnt)) in groups.iter().zip(&counts).enumerate() {
        let mut pts = vec![format!("{:.1},{:.1}", c.px(lo), c.py(0.0))];
        for (b, n) in cnt.iter().enumerate() {
            let (xa, xb) = (lo + width * b as f64, lo + width * (b + 1) as f64);
            pts.push(format!("{:.1},{:.1}", c.px(xa), c.py(*n as f64)));
            pts.push(format!("{:.1},{:.1}", c.px(xb), c.py(*n as f64)));
        }
        pts.push(format!("{:.1},{:.1}", c.px(hi), c.py(0.0)));
        let _ = writeln!(
            c.body,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n\
             <rect x=\"{:.1}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{:.1}\">{} (n={})</text>",
            pts.join(" "),
            color(i),
            W - RIGHT - 180.0,
            TOP + 16.0 * i as f64,
            color(i),
            W - RIGHT - 162.0,
            TOP + 16.0 * i as f64 + 10.0,
            escape(name),
            groups[i].1.len()
        );
    }
    c.finish(path)
}

/// Points coloured by label, with a legend in first-appearance order.
pub fn scatter_plot(path: &Path, title: &str, points: &[([f64; 2], String)]) -> Result<()> {
    let (x0, x1) = bounds(points.iter().map(|p| p.0[0]));
    let (y0, y1) = bounds(points.iter().map(|p| p.0[1]));
    let pad = |a: f64, b: f64| {
        let m = ((b - a) * 0.05).max(1e-6);
        (a - m, b + m)
    };
    let mut c = Canvas::new(title, pad(x0, x1), pad(y0, y1));
    c.axes("component 2", Some("component 1"), true);
    let mut legend: Vec<&str> = Vec::new();
    for (p, label) in points {
        let k = match legend.iter().position(|l| *l == label) {
            Some(k) => k,
            None => {
                legend.push(label);
                legend.len() - 1
            }
        };
        let _ = writeln!(c.body, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"{}\" fill-opacity=\"0.8\"/>", c.px(p[0]), c.py(p[1]), color(k));
    }
    for (k, l) in legend.iter().enumerate() {
        let _ = writeln!(
            c.body,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            W - RIGHT - 180.0,
            TOP + 16.0 * k as f64,
            color(k),
            W - RIGHT - 162.0,
            TOP + 16.0 * k as f64 + 10.0,
            escape(l)
        );
    }
    c.finish(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_written_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let groups = vec![("BLOOM-7B".to_string(), vec![0.1, -0.4, 0.9]), ("Grok <x>".to_string(), vec![0.0; 4])];
        let p = dir.path().join("v.svg");
        violin_plot(&p, "Sentiment", "score", &groups).unwrap();
        let a = std::fs::read_to_string(&p).unwrap();
        violin_plot(&p, "Sentiment", "score", &groups).unwrap();
        assert_eq!(a, std::fs::read_to_string(&p).unwrap());
        assert!(a.contains("(n=3)") && a.contains("Grok &lt;x&gt;"));
        bar_chart(&dir.path().join("b.svg"), "kf", "freq", &[("m".into(), 0.1)]).unwrap();
        distribution_plot(&dir.path().join("d.svg"), "diff", "User - LLM", &groups, 10).unwrap();
        scatter_plot(&dir.path().join("s.svg"), "iso", &[([0.0, 1.0], "a".into()), ([1.0, 0.0], "b".into())]).unwrap();
        assert!(std::fs::read_to_string(dir.path().join("b.svg")).unwrap().matches("<rect").count() == 2);
    }
}
