use crate::error::{Error, Result};
use crate::types::DepthMap;

/// Ratio thresholds of the three δ accuracies.
pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

pub const DEFAULT_MIN_VALID_DEPTH: f64 = 1e-3;

pub const METRICS_CSV_HEADER: &str = "rel,rms,log10,rms_sc_inv,delta1,delta2,delta3";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub rel: f64,
    pub rms: f64,
    pub log10: f64,
    pub rms_sc_inv: f64,
    /// Fraction of pixels with `max(pred/gt, gt/pred) < t` for each of [`DELTA_THRESHOLDS`].
    pub delta: [f64; 3],
    /// Pixels that passed the ground-truth mask.
    pub pixels: usize,
}

impl MetricsReport {
    /// One CSV row matching [`METRICS_CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.rel, self.rms, self.log10, self.rms_sc_inv, self.delta[0], self.delta[1], self.delta[2]
        )
    }
}

/// Standard depth errors over pixels whose ground truth is at least `min_valid_depth`.
///
/// `rel` divides by the prediction, `log10` uses base-10 logs and
/// `rms_sc_inv` natural logs of `gt / pred`.
pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, min_valid_depth: f64) -> Result<MetricsReport> {
    if !pred.same_shape(gt) {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut count = 0usize;
    let (mut rel, mut sq, mut log10) = (0.0, 0.0, 0.0);
    let mut z = Vec::with_capacity(pred.len());
    let mut hits = [0usize; 3];
    for (i, (&p, &g)) in pred.values().iter().zip(gt.values()).enumerate() {
        if g < min_valid_depth {
            continue;
        }
        if p <= 0.0 || g <= 0.0 {
            return Err(Error::InvalidValue(format!("nonpositive depth at pixel {i}: pred {p}, gt {g}")));
        }
        count += 1;
        rel += (g - p).abs() / p;
        sq += (g - p) * (g - p);
        log10 += (g.log10() - p.log10()).abs();
        z.push(g.ln() - p.ln());
        let ratio = (p / g).max(g / p);
        for (hit, t) in hits.iter_mut().zip(DELTA_THRESHOLDS) {
            if ratio < t {
                *hit += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::NoValidPixels);
    }
    let n = count as f64;
    // two passes: E[z²] − E[z]² cancels badly when the log ratio is nearly constant
    let z_mean = z.iter().sum::<f64>() / n;
    let z_var = z.iter().map(|v| (v - z_mean) * (v - z_mean)).sum::<f64>() / n;
    Ok(MetricsReport {
        rel: rel / n,
        rms: (sq / n).sqrt(),
        log10: log10 / n,
        rms_sc_inv: z_var.sqrt(),
        delta: hits.map(|h| h as f64 / n),
        pixels: count,
    })
}
