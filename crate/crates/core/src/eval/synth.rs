use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::types::{DepthMap, RgbImage, SideOutputStack};

/// Procedural scene and side-output degradation parameters.
///
/// Blur (Gaussian sigma, pixels) and noise (std, meters) are interpolated
/// linearly from the coarsest scale to the finest. All randomness comes from
/// ChaCha8 seeded with `seed`, so outputs are identical across platforms.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub scales: usize,
    pub boxes: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    pub blur_coarsest: f64,
    pub blur_finest: f64,
    pub noise_coarsest: f64,
    pub noise_finest: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            scales: 3,
            boxes: 4,
            depth_min: 1.0,
            depth_max: 10.0,
            blur_coarsest: 3.0,
            blur_finest: 1.0,
            noise_coarsest: 0.8,
            noise_finest: 0.4,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| Err(Error::Config { key: key.into(), reason });
        if self.width == 0 || self.height == 0 {
            return bad("width", "image must be at least 1x1".into());
        }
        if self.scales == 0 {
            return bad("scales", "must be >= 1".into());
        }
        if !(self.depth_min.is_finite() && self.depth_min > 0.0) {
            return bad("depth_min", format!("must be > 0, got {}", self.depth_min));
        }
        if !(self.depth_max.is_finite() && self.depth_max > self.depth_min) {
            return bad("depth_max", format!("must exceed depth_min, got {}", self.depth_max));
        }
        for (key, v) in [
            ("blur_coarsest", self.blur_coarsest),
            ("blur_finest", self.blur_finest),
            ("noise_coarsest", self.noise_coarsest),
            ("noise_finest", self.noise_finest),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(key, format!("must be >= 0, got {v}"));
            }
        }
        if self.blur_coarsest < self.blur_finest {
            return bad("blur_coarsest", "must be >= blur_finest".into());
        }
        if self.noise_coarsest < self.noise_finest {
            return bad("noise_coarsest", "must be >= noise_finest".into());
        }
        Ok(())
    }

    /// (blur sigma, noise std) of zero-based scale `l`.
    pub fn degradation(&self, l: usize) -> (f64, f64) {
        if self.scales == 1 {
            return (self.blur_finest, self.noise_finest);
        }
        let t = l as f64 / (self.scales - 1) as f64;
        (
            self.blur_coarsest + t * (self.blur_finest - self.blur_coarsest),
            self.noise_coarsest + t * (self.noise_finest - self.noise_coarsest),
        )
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// A ground plane receding towards the top of the image, with axis-aligned
/// boxes standing in front of it. Each surface has its own albedo, darkened
/// slightly with distance.
pub fn synth_scene(spec: &SynthSpec) -> Result<(RgbImage, DepthMap)> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let span = spec.depth_max - spec.depth_min;
    let mut depth: Vec<f64> = (0..w * h)
        .map(|i| {
            let y = (i / w) as f64;
            let t = if h > 1 { y / (h - 1) as f64 } else { 0.0 };
            spec.depth_max - t * span
        })
        .collect();
    let floor: [f64; 3] = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];
    let mut albedo = vec![floor; w * h];

    for _ in 0..spec.boxes {
        let bw = rng.random_range(1..=(w / 2).max(1));
        let bh = rng.random_range(1..=(h / 2).max(1));
        let x0 = rng.random_range(0..=w - bw);
        let y0 = rng.random_range(0..=h - bh);
        let z = spec.depth_min + rng.random_range(0.0..1.0) * span;
        let color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                let i = y * w + x;
                if z < depth[i] {
                    depth[i] = z;
                    albedo[i] = color;
                }
            }
        }
    }

    let pixels = depth
        .iter()
        .zip(&albedo)
        .map(|(d, a)| {
            let shade = 1.0 - 0.3 * (d - spec.depth_min) / span;
            a.map(|c| (c * shade).clamp(0.0, 1.0))
        })
        .collect();
    Ok((RgbImage::new(w, h, pixels)?, DepthMap::new(w, h, depth)?))
}

/// Degrades `gt` once per scale: Gaussian blur, then additive Gaussian noise,
/// clamped at zero.
pub fn synth_side_outputs(gt: &DepthMap, spec: &SynthSpec) -> Result<SideOutputStack> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let scales = (0..spec.scales)
        .map(|l| {
            let (sigma, std) = spec.degradation(l);
            let mut values = gaussian_blur(gt.values(), gt.width(), gt.height(), sigma);
            if std > 0.0 {
                let noise = Normal::new(0.0, std).map_err(|e| Error::InvalidValue(e.to_string()))?;
                for v in &mut values {
                    *v += noise.sample(&mut rng);
                }
            }
            values.iter_mut().for_each(|v| *v = v.max(0.0));
            DepthMap::new(gt.width(), gt.height(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    SideOutputStack::new(scales)
}

/// Separable Gaussian blur with clamp-to-edge borders, truncated at 3σ.
pub fn gaussian_blur(values: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / total).collect();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as isize, (i / w) as isize);
                taps.iter()
                    .enumerate()
                    .map(|(k, t)| {
                        let off = k as isize - r;
                        let j = if horizontal {
                            y * w as isize + (x + off).clamp(0, w as isize - 1)
                        } else {
                            (y + off).clamp(0, h as isize - 1) * w as isize + x
                        };
                        t * src[j as usize]
                    })
                    .sum()
            })
            .collect()
    };
    pass(&pass(values, true), false)
}
