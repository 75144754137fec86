use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::cv::{cross_validate, mean_std};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub segments: usize,
    /// Mean over repeats of the cross-validated mean accuracy.
    pub mean_acc: f64,
    /// Sample std over every fold of every repeat.
    pub std_acc: f64,
    /// Cross-validated mean accuracy of each repeat.
    pub repeat_acc: Vec<f64>,
    pub fold_acc: Vec<f64>,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

/// Cross-validates every segment count in `ns`, `repeats` times each with
/// seeds `cfg.seed, cfg.seed + 1, ...`.
pub fn sweep_segments(ds: &Dataset, ns: &[usize], k: usize, cfg: &TrainConfig, repeats: usize, workers: usize) -> Result<SweepResult> {
    if ns.is_empty() || repeats == 0 {
        return Err(Error::invalid("sweep needs at least one segment count and one repeat"));
    }
    if let Some(bad) = ns.iter().find(|&&n| n == 0) {
        return Err(Error::invalid(format!("segment count must be at least 1, got {bad}")));
    }
    let mut points = Vec::with_capacity(ns.len());
    for &n in ns {
        let start = Instant::now();
        let mut repeat_acc = Vec::with_capacity(repeats);
        let mut fold_acc = Vec::new();
        for r in 0..repeats {
            let run_cfg = TrainConfig {
                seed: cfg.seed.wrapping_add(r as u64),
                ..cfg.with_segments(n)
            };
            let run = cross_validate(ds, k, &run_cfg, workers)?;
            repeat_acc.push(run.report.mean_accuracy);
            fold_acc.extend(run.report.folds.iter().map(|f| f.accuracy));
        }
        let mean_acc = repeat_acc.iter().sum::<f64>() / repeats as f64;
        points.push(SweepPoint {
            segments: n,
            mean_acc,
            std_acc: mean_std(&fold_acc).1,
            repeat_acc,
            fold_acc,
            wall_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(SweepResult { points })
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,mean_acc,std_acc,wall_s\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{:.3}", p.segments, p.mean_acc, p.std_acc, p.wall_s);
        }
        out
    }

    /// Accuracy against segment count as a polyline with ±std whiskers.
    pub fn to_svg(&self) -> String {
        const W: f64 = 480.0;
        const H: f64 = 320.0;
        const M: f64 = 48.0;
        let n_min = self.points.iter().map(|p| p.segments).min().unwrap_or(1) as f64;
        let n_max = self.points.iter().map(|p| p.segments).max().unwrap_or(1) as f64;
        let span = (n_max - n_min).max(1.0);
        let x = |n: f64| M + (n - n_min) / span * (W - 2.0 * M);
        let y = |a: f64| H - M - a.clamp(0.0, 1.0) * (H - 2.0 * M);

        let mut svg = String::new();
        let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<path d="M{M} {M} V{b} H{r}" fill="none" stroke="black"/>"#,
            b = H - M,
            r = W - M
        );
        for i in 0..=5 {
            let a = i as f64 / 5.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{x0}" y1="{yy}" x2="{M}" y2="{yy}" stroke="black"/><text x="{tx}" y="{ty}" text-anchor="end">{a:.1}</text>"#,
                x0 = M - 4.0,
                yy = y(a),
                tx = M - 6.0,
                ty = y(a) + 4.0
            );
        }
        for p in &self.points {
            let px = x(p.segments as f64);
            let _ = writeln!(
                svg,
                r#"<line x1="{px}" y1="{y0}" x2="{px}" y2="{y1}" stroke="black"/><text x="{px}" y="{ty}" text-anchor="middle">{n}</text>"#,
                y0 = H - M,
                y1 = H - M + 4.0,
                ty = H - M + 16.0,
                n = p.segments
            );
            let _ = writeln!(
                svg,
                r##"<line x1="{px}" y1="{lo}" x2="{px}" y2="{hi}" stroke="#888"/>"##,
                lo = y(p.mean_acc - p.std_acc),
                hi = y(p.mean_acc + p.std_acc)
            );
        }
        let coords: Vec<String> = self
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.segments as f64), y(p.mean_acc)))
            .collect();
        let _ = writeln!(svg, r##"<polyline points="{}" fill="none" stroke="#1f5fa8" stroke-width="2"/>"##, coords.join(" "));
        for c in &coords {
            let (cx, cy) = c.split_once(',').expect("formatted above");
            let _ = writeln!(svg, r##"<circle cx="{cx}" cy="{cy}" r="3" fill="#1f5fa8"/>"##);
        }
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">segments N</text>"#, W / 2.0, H - 10.0);
        let _ = writeln!(
            svg,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">mean accuracy</text>"#,
            H / 2.0,
            H / 2.0
        );
        svg.push_str("</svg>\n");
        svg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result() -> SweepResult {
        SweepResult {
            points: [(1, 0.5), (2, 0.6), (4, 0.75)]
                .into_iter()
                .map(|(n, a)| SweepPoint {
                    segments: n,
                    mean_acc: a,
                    std_acc: 0.05,
                    repeat_acc: vec![a],
                    fold_acc: vec![a - 0.05, a + 0.05],
                    wall_s: 1.25,
                })
                .collect(),
        }
    }

    #[test]
    fn csv_rows() {
        let csv = result().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "N,mean_acc,std_acc,wall_s");
        assert_eq!(lines[3], "4,0.75,0.05,1.250");
    }

    #[test]
    fn svg_has_one_marker_per_point() {
        let svg = result().to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
