//! Latent-space diagnostics: cell probabilities as shaded rectangles,
//! encoded held-out points coloured by class, and drawn samples as crosses.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

const SIZE: f64 = 480.0;
const MARGIN: f64 = 20.0;

fn read_rows(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: record {}", path.display(), i + 1))?;
        let row: Vec<f64> = rec
            .iter()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .with_context(|| format!("{}: record {}", path.display(), i + 1))?;
        if row.len() != width {
            bail!("{}: record {} has {} fields, expected {width}", path.display(), i + 1, row.len());
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Renders one model's `<stem>-{encoded,cells,draws}.csv` triple.
pub fn render_latent(dir: &Path, stem: &str) -> Result<String> {
    let encoded = read_rows(&dir.join(format!("{stem}-encoded.csv")), 3)?;
    let cells = read_rows(&dir.join(format!("{stem}-cells.csv")), 5)?;
    let draws = read_rows(&dir.join(format!("{stem}-draws.csv")), 3)?;
    let xs = encoded.iter().map(|r| r[0]).chain(cells.iter().flat_map(|c| [c[0], c[1]]));
    let ys = encoded.iter().map(|r| r[1]).chain(cells.iter().flat_map(|c| [c[2], c[3]]));
    let (x_lo, x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (y_lo, y_hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !(x_hi > x_lo && y_hi > y_lo) {
        bail!("{stem}: empty latent extent");
    }
    let span = (x_hi - x_lo).max(y_hi - y_lo);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let px = |x: f64| MARGIN + (x - x_lo) * scale;
    let py = |y: f64| SIZE - MARGIN - (y - y_lo) * scale;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#)?;
    writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#)?;
    let max_p = cells.iter().map(|c| c[4]).fold(0.0, f64::max);
    for c in cells.iter().filter(|c| c[4] > 0.0) {
        writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="orange" fill-opacity="{:.3}"/>"#,
            px(c[0]),
            py(c[3]),
            (c[1] - c[0]) * scale,
            (c[3] - c[2]) * scale,
            0.8 * c[4] / max_p
        )?;
    }
    let classes: Vec<i64> = {
        let mut v: Vec<i64> = encoded.iter().map(|r| r[2] as i64).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    for r in &encoded {
        let colour = if classes.first() == Some(&(r[2] as i64)) { "steelblue" } else { "seagreen" };
        writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{colour}" fill-opacity="0.5"/>"#, px(r[0]), py(r[1]))?;
    }
    for d in &draws {
        let (x, y) = (px(d[0]), py(d[1]));
        writeln!(
            s,
            r#"<path d="M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}" stroke="crimson" stroke-width="0.8"/>"#,
            x - 2.0,
            y - 2.0,
            x + 2.0,
            y + 2.0,
            x - 2.0,
            y + 2.0,
            x + 2.0,
            y - 2.0
        )?;
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes one SVG per model found in `latent_dir`; returns the files.
pub fn write_latent_svgs(latent_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let mut stems: Vec<String> = fs::read_dir(latent_dir)
        .with_context(|| format!("reading {}", latent_dir.display()))?
        .filter_map(|e| e.ok()?.file_name().to_str()?.strip_suffix("-encoded.csv").map(String::from))
        .collect();
    stems.sort();
    fs::create_dir_all(out)?;
    stems
        .iter()
        .map(|stem| {
            let path = out.join(format!("latent-{stem}.svg"));
            fs::write(&path, render_latent(latent_dir, stem)?)?;
            Ok(path)
        })
        .collect()
}
