use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Concentration statistics of a per-frame gradient-norm series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeStats {
    /// Share of frames below `max(1e-3 · max, 1e-12)`.
    pub zero_fraction: f64,
    /// `max / median`; infinite when the median is zero but the max is not.
    pub peak_to_median: f64,
    /// Shannon entropy of the normalized series divided by `ln T`.
    pub entropy: f64,
}

/// Per-epoch summary record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeSummary {
    pub epoch: usize,
    pub stage: String,
    #[serde(flatten)]
    pub stats: SpikeStats,
}

/// One row of the per-frame export.
#[derive(Clone, Debug, PartialEq)]
pub struct GradRow {
    pub frame_index: usize,
    pub grad_l2: f64,
    pub stage: String,
}

pub const ZERO_RELATIVE: f64 = 1e-3;
pub const ZERO_FLOOR: f64 = 1e-12;

pub fn spike_diagnostics(norms: &[f64]) -> Result<SpikeStats> {
    if norms.is_empty() {
        return Err(Error::shape("empty gradient-norm series"));
    }
    if norms.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Numeric("gradient norms must be finite and non-negative".into()));
    }
    let n = norms.len() as f64;
    let max = norms.iter().copied().fold(0.0, f64::max);
    let tau = (ZERO_RELATIVE * max).max(ZERO_FLOOR);
    let zero_fraction = norms.iter().filter(|&&x| x < tau).count() as f64 / n;

    let mut sorted = norms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 { sorted[m / 2] } else { 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]) };
    let peak_to_median = if max == 0.0 {
        1.0
    } else if median == 0.0 {
        f64::INFINITY
    } else {
        max / median
    };

    let total: f64 = norms.iter().sum();
    let entropy = if total == 0.0 {
        0.0
    } else if m == 1 {
        1.0
    } else {
        let h: f64 = norms
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| {
                let p = x / total;
                -p * p.ln()
            })
            .sum();
        h / n.ln()
    };
    Ok(SpikeStats { zero_fraction, peak_to_median, entropy })
}

/// CSV with header `frame_index,grad_l2,stage`.
pub fn write_grad_csv<W: Write>(mut w: W, rows: &[GradRow]) -> Result<()> {
    writeln!(w, "frame_index,grad_l2,stage")?;
    for r in rows {
        if r.stage.contains([',', '\n', '"']) {
            return Err(Error::Format(format!("stage label {:?} is not CSV-safe", r.stage)));
        }
        writeln!(w, "{},{:e},{}", r.frame_index, r.grad_l2, r.stage)?;
    }
    Ok(())
}
