//! Matrix export as 8-bit grayscale PGM or CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{AaiError, Result};
use crate::kernel::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    Pgm,
    Csv,
}

impl FromStr for HeatmapFormat {
    type Err = AaiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm" => Ok(HeatmapFormat::Pgm),
            "csv" => Ok(HeatmapFormat::Csv),
            other => Err(AaiError::Config(format!("unknown heatmap format `{other}`"))),
        }
    }
}

impl HeatmapFormat {
    pub fn extension(self) -> &'static str {
        match self {
            HeatmapFormat::Pgm => "pgm",
            HeatmapFormat::Csv => "csv",
        }
    }
}

/// `round(255 (v - min) / (max - min))` over the finite entries, all zeros
/// when `max == min`. Masked (`-inf`) cells map to 0.
pub fn grayscale(m: &Matrix) -> Result<Vec<u8>> {
    if m.data().iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(AaiError::DegenerateInput("heatmap input has NaN or +inf values".into()));
    }
    let (lo, hi) = m
        .data()
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    Ok(m.data()
        .iter()
        .map(|&v| {
            if v.is_finite() && range > 0.0 {
                (255.0 * (v - lo) / range).round() as u8
            } else {
                0
            }
        })
        .collect())
}

/// Binary (P5) PGM bytes, one pixel per entry, row-major.
pub fn pgm_bytes(m: &Matrix) -> Result<Vec<u8>> {
    let mut out = format!("P5\n{} {}\n255\n", m.cols(), m.rows()).into_bytes();
    out.extend(grayscale(m)?);
    Ok(out)
}

/// Comma-separated rows in shortest round-trip notation.
pub fn csv_text(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Matrix> {
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| AaiError::Format(format!("bad CSV value `{f}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

pub fn heatmap_export(m: &Matrix, path: impl AsRef<Path>, format: HeatmapFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        HeatmapFormat::Pgm => pgm_bytes(m)?,
        HeatmapFormat::Csv => csv_text(m).into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| AaiError::io(path, e))
}
