//! Rank-size power-law fits, head/tail breaks and polygon overlap rates.

use geo::{Area, BooleanOps, MultiPolygon};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub r_squared: f64,
    pub intercept: f64,
    pub n_used: usize,
    /// Sizes had no variance on the log scale; R² is reported as 0.
    pub degenerate: bool,
}

/// Least squares on (ln rank, ln size) with sizes sorted descending;
/// `alpha` is the negated slope. With `head_only`, only values strictly
/// above the mean are ranked.
pub fn rank_size_fit(sizes: &[f64], head_only: bool) -> Result<PowerLawFit> {
    let positive: Vec<f64> = sizes.iter().copied().filter(|s| *s > 0.0 && s.is_finite()).collect();
    let mut used: Vec<f64> = if head_only {
        if positive.is_empty() {
            Vec::new()
        } else {
            let mean = positive.iter().sum::<f64>() / positive.len() as f64;
            positive.into_iter().filter(|s| *s > mean).collect()
        }
    } else {
        positive
    };
    if used.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: used.len(),
        });
    }
    used.sort_by(|a, b| b.total_cmp(a));
    let n = used.len() as f64;
    let xs: Vec<f64> = (1..=used.len()).map(|r| (r as f64).ln()).collect();
    let ys: Vec<f64> = used.iter().map(|s| s.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let degenerate = syy <= f64::EPSILON * f64::EPSILON * n * (my * my).max(1.0);
    let r_squared = if degenerate {
        0.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(PowerLawFit {
        alpha: if degenerate { 0.0 } else { -slope },
        r_squared,
        intercept,
        n_used: used.len(),
        degenerate,
    })
}

/// Head fraction above which the recursion stops.
pub const HEAD_TAIL_LIMIT: f64 = 0.4;

/// Recursive mean splits of heavy-tailed data, keeping the head each time.
/// A split counts only while the head stays a minority (at most 40 %).
pub fn head_tail_break(values: &[f64]) -> Vec<f64> {
    let mut breaks = Vec::new();
    let mut current: Vec<f64> = values.to_vec();
    while current.len() >= 2 {
        let mean = current.iter().sum::<f64>() / current.len() as f64;
        let head: Vec<f64> = current.iter().copied().filter(|v| *v > mean).collect();
        if head.is_empty() || head.len() as f64 / current.len() as f64 > HEAD_TAIL_LIMIT {
            break;
        }
        breaks.push(mean);
        current = head;
    }
    breaks
}

/// Share of our area that the reference set also covers.
pub fn overlap_rate(ours: &MultiPolygon<f64>, reference: &MultiPolygon<f64>) -> Result<f64> {
    let area = ours.unsigned_area();
    if !(area > 0.0) {
        return Err(Error::UndefinedRate);
    }
    if reference.0.is_empty() {
        return Ok(0.0);
    }
    let shared = ours.intersection(reference).unsigned_area();
    Ok((shared / area).clamp(0.0, 1.0))
}
