use super::FilterRequest;
use crate::error::Result;
use crate::types::Features;

/// Practical size ceiling for the O(N²) path; 128×128 takes on the order of a second.
pub const EXACT_PIXEL_LIMIT: usize = 16_384;

/// Largest N for which [`DenseKernel`] materializes the full N×N matrix (32 MiB).
pub const DENSE_MATRIX_LIMIT: usize = 2_048;

/// Reference filter: `out_i = Σ_j exp(-|f_i - f_j|²/2) v_j`, skipping `j = i` when requested.
pub fn gauss_filter_exact(req: &FilterRequest) -> Result<Vec<f64>> {
    req.check()?;
    let f = req.features;
    let n = f.len();
    let dim = f.dim();
    let data = f.as_slice();
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let fi = &data[i * dim..(i + 1) * dim];
        let mut acc = 0.0;
        for (j, fj) in data.chunks_exact(dim).enumerate() {
            if req.exclude_self && j == i {
                continue;
            }
            let d2: f64 = fi.iter().zip(fj).map(|(a, b)| (a - b) * (a - b)).sum();
            acc += (-0.5 * d2).exp() * req.values[j];
        }
        *o = acc;
    }
    Ok(out)
}

/// The exact operator bound to one feature set. Small problems keep the
/// kernel matrix in memory; larger ones fall back to direct summation.
#[derive(Debug, Clone)]
pub struct DenseKernel {
    features: Features,
    matrix: Option<Vec<f64>>,
}

impl DenseKernel {
    pub fn new(features: Features) -> Self {
        let n = features.len();
        let matrix = (n <= DENSE_MATRIX_LIMIT).then(|| {
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                m[i * n + i] = 1.0;
                for j in 0..i {
                    let k = features.kernel(i, j);
                    m[i * n + j] = k;
                    m[j * n + i] = k;
                }
            }
            m
        });
        Self { features, matrix }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn apply(&self, values: &[f64], exclude_self: bool) -> Result<Vec<f64>> {
        let req = FilterRequest::new(values, &self.features, exclude_self);
        let Some(m) = &self.matrix else {
            return gauss_filter_exact(&req);
        };
        req.check()?;
        let n = values.len();
        Ok(m.chunks_exact(n)
            .enumerate()
            .map(|(i, row)| {
                let s: f64 = row.iter().zip(values).map(|(k, v)| k * v).sum();
                if exclude_self {
                    s - values[i]
                } else {
                    s
                }
            })
            .collect())
    }
}
