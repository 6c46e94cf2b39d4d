//! Plain PGM heatmaps and CSV tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::{CliError, CliResult};

/// Plain (P2) greyscale image, max value 255. `values` are clamped to [0, 1].
pub fn pgm_string(values: &[f64], h: usize, w: usize) -> String {
    let mut s = format!("P2\n{w} {h}\n255\n");
    for row in values.chunks(w.max(1)).take(h) {
        let line: Vec<String> = row
            .iter()
            .map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string())
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// `ln(1 + m)` scaled by the image maximum, with the DC bin moved to the
/// centre. Display only; callers keep their unshifted data.
pub fn log_magnitude_display(mags: &[f64], h: usize, w: usize) -> Vec<f64> {
    let logs: Vec<f64> = mags.iter().map(|m| m.ln_1p()).collect();
    let max = logs.iter().copied().fold(0.0, f64::max);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = ((y + h / 2) % h, (x + w / 2) % w);
            out[sy * w + sx] = if max > 0.0 { logs[y * w + x] / max } else { 0.0 };
        }
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> CliResult<PathBuf> {
    fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))?;
    Ok(path.to_path_buf())
}

/// Writes a CSV table with a header row and `\n` line endings.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<PathBuf> {
    let io = |e: csv::Error| {
        let msg = format!("cannot write {}", path.display());
        match e.into_kind() {
            csv::ErrorKind::Io(e) => CliError::io(msg, e),
            other => CliError::Validation(format!("{msg}: {other:?}")),
        }
    };
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(io)?;
    wr.write_record(header).map_err(io)?;
    for r in rows {
        wr.write_record(r).map_err(io)?;
    }
    wr.flush()
        .map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))?;
    Ok(path.to_path_buf())
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn histogram_bar(fraction: f64, width: usize) -> String {
    let n = (fraction.clamp(0.0, 1.0) * width as f64).round() as usize;
    let mut s = String::with_capacity(width);
    for i in 0..width {
        s.push(if i < n { '#' } else { '.' });
    }
    s
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}", dir.display()), e))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))
}

/// `key=value` summary lines, stable order.
pub fn summary(pairs: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}
