use std::fmt;
use std::str::FromStr;

use crate::error::AnalysisError;

use super::series::Series;

pub const DEFAULT_SENSITIVITY: f64 = 5.0;
pub const MIN_PEAK_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            _ => Err(format!("unknown direction `{s}`")),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Up => "up",
            Direction::Down => "down",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakReport {
    /// Round indices of the flagged points.
    pub indices: Vec<u64>,
    pub median: f64,
    /// Median absolute deviation from the median.
    pub mad: f64,
    /// Deviation unit the threshold was applied to.
    pub scale: f64,
    /// Set when the median absolute deviation is zero. The mean absolute
    /// deviation is then used as the scale; a constant series flags nothing.
    pub degenerate: bool,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Flags points deviating from the median by more than `k` scale units in
/// the given direction.
pub fn detect_peaks(series: &Series, direction: Direction, k: f64) -> Result<PeakReport, AnalysisError> {
    if series.len() < MIN_PEAK_POINTS {
        return Err(AnalysisError::TooFew {
            needed: MIN_PEAK_POINTS,
            got: series.len(),
        });
    }
    let mut values: Vec<f64> = series.values().map(|v| v as f64).collect();
    values.sort_by(f64::total_cmp);
    let med = median(&values);
    let mut devs: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    devs.sort_by(f64::total_cmp);
    let mad = median(&devs);
    let degenerate = mad == 0.0;
    let scale = if degenerate {
        devs.iter().sum::<f64>() / devs.len() as f64
    } else {
        mad
    };
    let indices = if scale == 0.0 {
        Vec::new()
    } else {
        series
            .points()
            .iter()
            .filter(|(_, v)| {
                let d = match direction {
                    Direction::Up => *v as f64 - med,
                    Direction::Down => med - *v as f64,
                };
                d > k * scale
            })
            .map(|(i, _)| *i)
            .collect()
    };
    Ok(PeakReport {
        indices,
        median: med,
        mad,
        scale,
        degenerate,
    })
}
