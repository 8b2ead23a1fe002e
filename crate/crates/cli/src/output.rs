//! Run artifacts: resolved config, trajectory logs, CSV tables and the SVG
//! chart of gBest fitness per generation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use fcae_core::TrajectoryRecord;

use crate::config::RunConfig;

pub const CONFIG_FILE: &str = "config.resolved";

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Creates `dir` and writes the resolved config into it.
pub fn start_run_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_file(&dir.join(CONFIG_FILE), &cfg.render())
}

/// Shortest decimal that parses back to `v`; `inf` for infinity.
pub fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        v.to_string()
    }
}

/// Appends one JSON line per generation, flushing each, plus a timing
/// sidecar that is not part of the reproducible output.
pub struct TrajectoryWriter {
    jsonl: BufWriter<File>,
    timing: Option<BufWriter<File>>,
    include_wall_ms: bool,
}

impl TrajectoryWriter {
    pub fn create(jsonl: &Path, timing: Option<&Path>, include_wall_ms: bool) -> Result<Self> {
        let open = |p: &Path| -> Result<BufWriter<File>> {
            Ok(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            ))
        };
        let timing = match timing {
            Some(p) => {
                let mut w = open(p)?;
                writeln!(w, "generation,wall_ms")?;
                Some(w)
            }
            None => None,
        };
        Ok(Self {
            jsonl: open(jsonl)?,
            timing,
            include_wall_ms,
        })
    }

    pub fn record(&mut self, rec: &TrajectoryRecord) -> Result<()> {
        let line = if self.include_wall_ms {
            serde_json::to_string(rec)?
        } else {
            serde_json::to_string(&rec.without_timing())?
        };
        writeln!(self.jsonl, "{line}")?;
        self.jsonl.flush()?;
        if let Some(t) = &mut self.timing {
            writeln!(t, "{},{}", rec.generation, rec.wall_ms.unwrap_or(0))?;
            t.flush()?;
        }
        Ok(())
    }
}

pub fn trajectory_csv(records: &[TrajectoryRecord]) -> String {
    let mut s = String::from("generation,gbest_fitness\n");
    for r in records {
        s.push_str(&format!("{},{}\n", r.generation, fmt_f64(r.gbest_fitness)));
    }
    s
}

/// Line chart of gBest fitness against generation; non-finite points are
/// left out.
pub fn trajectory_svg(records: &[TrajectoryRecord], title: &str) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.gbest_fitness.is_finite())
        .map(|r| (r.generation as f64, r.gbest_fitness))
        .collect();
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        w / 2.0,
        escape(title)
    );
    let (x0, x1) = (left, w - right);
    let (y0, y1) = (h - bottom, top);
    s.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">generation</text>\n\
         <text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">gBest fitness</text>\n",
        (x0 + x1) / 2.0,
        h - 12.0,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    ));
    if !pts.is_empty() {
        let gx_max = records.last().map_or(1.0, |r| r.generation as f64).max(2.0);
        let (mut f_lo, mut f_hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
        if f_hi - f_lo < 1e-12 {
            f_lo -= 0.5;
            f_hi += 0.5;
        }
        let sx = |g: f64| x0 + (g - 1.0) / (gx_max - 1.0) * (x1 - x0);
        let sy = |f: f64| y0 - (f - f_lo) / (f_hi - f_lo) * (y0 - y1);
        let poly: Vec<String> = pts.iter().map(|&(g, f)| format!("{:.2},{:.2}", sx(g), sy(f))).collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>\n",
            poly.join(" ")
        ));
        for &(g, f) in &pts {
            s.push_str(&format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f77b4\"/>\n", sx(g), sy(f)));
        }
        for (f, anchor_y) in [(f_lo, y0), (f_hi, y1)] {
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.5}</text>\n",
                x0 - 6.0,
                anchor_y + 4.0,
                f
            ));
        }
        for (g, label) in [(1.0, 1), (gx_max, gx_max as usize)] {
            s.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{label}</text>\n",
                sx(g),
                y0 + 16.0
            ));
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Reads a trajectory log back, accepting `null` for an infinite fitness.
pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l)?;
            if v["gbest_fitness"].is_null() {
                v["gbest_fitness"] = serde_json::json!(f64::MAX);
                let mut r: TrajectoryRecord = serde_json::from_value(v)?;
                r.gbest_fitness = f64::INFINITY;
                return Ok(r);
            }
            Ok(serde_json::from_value(v)?)
        })
        .collect()
}
