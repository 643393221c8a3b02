//! CSV and SVG output for trajectories and loss curves.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::Trajectory;
use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::train::LossCurve;

pub const CSV_HEADER: &str = "frame,tx,ty,tz,qw,qx,qy,qz";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    SvgPlot,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "svg" | "svg_plot" => Ok(Self::SvgPlot),
            other => Err(Error::InvalidArgument(format!(
                "unknown export format `{other}` (expected csv or svg)"
            ))),
        }
    }
}

/// One line per frame after the header; numbers in shortest round-trip form.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for (frame, pose) in traj.frames() {
        let _ = write!(out, "{frame}");
        for v in pose.to_raw() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_trajectory_csv(text: &str) -> Result<Trajectory> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::InvalidArgument(format!(
            "trajectory CSV must start with `{CSV_HEADER}`"
        )));
    }
    let mut frames = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::InvalidArgument(format!("trajectory CSV line {}: `{line}`", i + 2));
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 8 {
            return Err(bad());
        }
        let frame = fields[0].parse::<u64>().map_err(|_| bad())?;
        let raw = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        frames.push((frame, Pose::from_stored(&raw)));
    }
    Trajectory::new(frames)
}

const SERIES_COLOURS: [&str; 4] = ["#222222", "#d62728", "#1f77b4", "#2ca02c"];
const PANEL: f64 = 360.0;
const MARGIN: f64 = 40.0;

/// Side-by-side xy and xz projections of each `(label, trajectory)`,
/// sharing one scale so the panels are comparable.
pub fn trajectory_svg(series: &[(&str, &Trajectory)]) -> String {
    let width = 2.0 * PANEL + 3.0 * MARGIN;
    let height = PANEL + 2.0 * MARGIN + 20.0 * series.len() as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let bounds = series
        .iter()
        .filter_map(|(_, t)| t.bounds())
        .reduce(|(alo, ahi), (blo, bhi)| {
            (
                std::array::from_fn(|a| alo[a].min(blo[a])),
                std::array::from_fn(|a| ahi[a].max(bhi[a])),
            )
        });
    let (lo, hi) = bounds.unwrap_or(([0.0; 3], [1.0; 3]));
    let span = (0..3).map(|a| hi[a] - lo[a]).fold(1e-9, f64::max);
    let centre: [f64; 3] = std::array::from_fn(|a| 0.5 * (lo[a] + hi[a]));
    let scale = 0.9 * PANEL / span;

    for (panel, (axis, name)) in [(1usize, "xy"), (2, "xz")].into_iter().enumerate() {
        let x0 = MARGIN + panel as f64 * (PANEL + MARGIN);
        let _ = writeln!(
            svg,
            "<rect x=\"{x0}\" y=\"{MARGIN}\" width=\"{PANEL}\" height=\"{PANEL}\" fill=\"none\" stroke=\"#999999\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{name} projection (cm)</text>",
            x0 + PANEL / 2.0,
            MARGIN - 12.0
        );
        for (k, (_, traj)) in series.iter().enumerate() {
            let points: Vec<String> = traj
                .poses()
                .map(|p| {
                    let u = x0 + PANEL / 2.0 + scale * (p.translation[0] - centre[0]);
                    let v = MARGIN + PANEL / 2.0 - scale * (p.translation[axis] - centre[axis]);
                    format!("{u:.3},{v:.3}")
                })
                .collect();
            let _ = writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\" points=\"{}\"/>",
                SERIES_COLOURS[k % SERIES_COLOURS.len()],
                points.join(" ")
            );
        }
    }
    for (k, (label, _)) in series.iter().enumerate() {
        let y = PANEL + 2.0 * MARGIN + 20.0 * k as f64 - 10.0;
        let colour = SERIES_COLOURS[k % SERIES_COLOURS.len()];
        let _ = writeln!(
            svg,
            "<line x1=\"{MARGIN}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{colour}\" stroke-width=\"2\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            MARGIN + 30.0,
            MARGIN + 38.0,
            y + 4.0,
            xml_escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn export_trajectory(
    traj: &Trajectory,
    path: impl AsRef<Path>,
    format: ExportFormat,
) -> Result<()> {
    let text = match format {
        ExportFormat::Csv => trajectory_csv(traj),
        ExportFormat::SvgPlot => trajectory_svg(&[("trajectory", traj)]),
    };
    fs::write(path, text)?;
    Ok(())
}

/// Ground truth and prediction overlaid in one plot.
pub fn export_comparison_svg(
    gt: &Trajectory,
    pred: &Trajectory,
    path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(
        path,
        trajectory_svg(&[("ground truth", gt), ("prediction", pred)]),
    )?;
    Ok(())
}

/// Training and validation loss per epoch on a log scale.
pub fn loss_curve_svg(curve: &LossCurve) -> String {
    let (width, height) = (PANEL * 1.6 + 2.0 * MARGIN, PANEL + 2.0 * MARGIN);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let series: [(&str, Vec<f64>); 2] = [
        (
            "train",
            curve.records.iter().map(|r| r.train_loss()).collect(),
        ),
        (
            "validation",
            curve.records.iter().map(|r| r.val_loss()).collect(),
        ),
    ];
    let logs: Vec<f64> = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| *v > 0.0)
        .map(f64::log10)
        .collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() {
        (lo, hi.max(lo + 1e-9))
    } else {
        (0.0, 1.0)
    };
    let plot_w = width - 2.0 * MARGIN;
    let epochs = curve.len().max(2) - 1;
    let _ = writeln!(
        svg,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{plot_w}\" height=\"{PANEL}\" fill=\"none\" stroke=\"#999999\"/>\n\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">loss per epoch (log scale, {:.3e} to {:.3e})</text>",
        width / 2.0,
        MARGIN - 12.0,
        10f64.powf(lo),
        10f64.powf(hi)
    );
    for (k, (label, values)) in series.iter().enumerate() {
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, v)| {
                let x = MARGIN + plot_w * i as f64 / epochs as f64;
                let y = MARGIN + PANEL * (hi - v.log10()) / (hi - lo);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let colour = SERIES_COLOURS[k + 1];
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{colour}\">{label}</text>",
            points.join(" "),
            width - MARGIN - 80.0,
            MARGIN + 20.0 + 16.0 * k as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        Trajectory::new(vec![
            (
                3,
                Pose::from_euler_xyz([0.1, -2.5, 1.0 / 3.0], [0.2, 0.1, -0.4]),
            ),
            (7, Pose::from_euler_xyz([1e-17, 4.0, 2.0], [0.0, 0.0, 3.0])),
        ])
        .unwrap()
    }

    #[test]
    fn empty_csv_is_header_only() {
        assert_eq!(
            trajectory_csv(&Trajectory::default()),
            format!("{CSV_HEADER}\n")
        );
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = sample();
        let back = parse_trajectory_csv(&trajectory_csv(&t)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(parse_trajectory_csv("frame,x\n").is_err());
        assert!(parse_trajectory_csv(&format!("{CSV_HEADER}\n1,2,3\n")).is_err());
    }

    #[test]
    fn svg_has_both_projections() {
        let t = sample();
        let svg = trajectory_svg(&[("ground truth", &t), ("prediction", &t)]);
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(svg.contains("xy projection") && svg.contains("xz projection"));
        assert_eq!(
            svg,
            trajectory_svg(&[("ground truth", &t), ("prediction", &t)])
        );
    }

    #[test]
    fn export_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let t = sample();
        for fmt in [ExportFormat::Csv, ExportFormat::SvgPlot] {
            let (a, b) = (dir.path().join("a"), dir.path().join("b"));
            export_trajectory(&t, &a, fmt).unwrap();
            export_trajectory(&t, &b, fmt).unwrap();
            assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        }
    }
}
