//! Domain types shared by every stage of the pipeline.

use crate::error::{Error, Result};

/// A W×H grid of real values in row-major order (pixel `i = y·W + x`).
///
/// Used for side outputs, predictions and ground truth. Values are always
/// finite; prediction and ground-truth roles additionally require them to be
/// nonnegative, see [`DepthMap::ensure_nonnegative`].
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidValue(format!(
                "depth map must have positive size, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} map needs {} values, got {}",
                width,
                height,
                width * height,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite depth at pixel {i}")));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let values = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn same_shape(&self, other: &DepthMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Rejects negative values; required for prediction and ground-truth roles.
    pub fn ensure_nonnegative(&self) -> Result<()> {
        match self.values.iter().position(|&v| v < 0.0) {
            Some(i) => Err(Error::InvalidValue(format!(
                "negative depth {} at pixel {i}",
                self.values[i]
            ))),
            None => Ok(()),
        }
    }
}

/// An RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidValue(format!(
                "image must have positive size, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        for (i, px) in pixels.iter().enumerate() {
            if px.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::InvalidValue(format!(
                    "pixel {i} has channel outside [0,1]: {px:?}"
                )));
            }
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn matches(&self, map: &DepthMap) -> bool {
        self.width == map.width() && self.height == map.height()
    }
}

/// L full-resolution side outputs ordered coarse (index 0) to fine (index L-1).
#[derive(Debug, Clone, PartialEq)]
pub struct SideOutputStack {
    scales: Vec<DepthMap>,
}

impl SideOutputStack {
    pub fn new(scales: Vec<DepthMap>) -> Result<Self> {
        let first = scales
            .first()
            .ok_or_else(|| Error::InvalidValue("side output stack needs at least one scale".into()))?;
        if let Some(l) = scales.iter().position(|s| !s.same_shape(first)) {
            return Err(Error::DimensionMismatch(format!(
                "scale {} is {}x{}, expected {}x{}",
                l + 1,
                scales[l].width(),
                scales[l].height(),
                first.width(),
                first.height()
            )));
        }
        Ok(Self { scales })
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn width(&self) -> usize {
        self.scales[0].width()
    }

    pub fn height(&self) -> usize {
        self.scales[0].height()
    }

    pub fn pixels(&self) -> usize {
        self.scales[0].len()
    }

    pub fn scales(&self) -> &[DepthMap] {
        &self.scales
    }

    /// Zero-based scale access.
    pub fn scale(&self, l: usize) -> &DepthMap {
        &self.scales[l]
    }

    pub fn finest(&self) -> &DepthMap {
        self.scales.last().expect("nonempty by construction")
    }

    /// Concatenated view of length L·N, scale-major.
    pub fn flattened(&self) -> Vec<f64> {
        self.scales.iter().flat_map(|s| s.values().iter().copied()).collect()
    }
}

/// Feature kind of one Gaussian kernel, with its bandwidths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureKind {
    /// Pixel position only.
    Spatial { theta_pos: f64 },
    /// Pixel position and RGB color.
    Bilateral { theta_pos: f64, theta_col: f64 },
}

impl FeatureKind {
    pub fn dim(&self) -> usize {
        match self {
            FeatureKind::Spatial { .. } => 2,
            FeatureKind::Bilateral { .. } => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelRole {
    IntraScale,
    CrossScale,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelDesc {
    pub feature: FeatureKind,
    pub role: KernelRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Cascade,
    Unified,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Cascade => "cascade",
            ModelKind::Unified => "unified",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cascade" => Some(ModelKind::Cascade),
            "unified" => Some(ModelKind::Unified),
            _ => None,
        }
    }
}

/// The M Gaussian kernels of a model, in weight order (β index = kernel index).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    kernels: Vec<KernelDesc>,
}

impl KernelSpec {
    pub fn new(kernels: Vec<KernelDesc>) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::InvalidValue("kernel spec needs at least one kernel".into()));
        }
        for k in &kernels {
            let (pos, col) = match k.feature {
                FeatureKind::Spatial { theta_pos } => (theta_pos, None),
                FeatureKind::Bilateral { theta_pos, theta_col } => (theta_pos, Some(theta_col)),
            };
            check_bandwidth("theta_pos", pos)?;
            if let Some(col) = col {
                check_bandwidth("theta_col", col)?;
            }
        }
        Ok(Self { kernels })
    }

    /// Two intra-scale kernels: bilateral appearance then spatial smoothness.
    pub fn cascade(theta_spatial: f64, theta_pos: f64, theta_col: f64) -> Result<Self> {
        check_bandwidth("theta_spatial", theta_spatial)?;
        Self::new(Self::pair(KernelRole::IntraScale, theta_spatial, theta_pos, theta_col).to_vec())
    }

    /// Two intra-scale kernels followed by the same two kernels relating neighboring scales.
    pub fn unified(theta_spatial: f64, theta_pos: f64, theta_col: f64) -> Result<Self> {
        check_bandwidth("theta_spatial", theta_spatial)?;
        let mut kernels = Self::pair(KernelRole::IntraScale, theta_spatial, theta_pos, theta_col).to_vec();
        kernels.extend(Self::pair(KernelRole::CrossScale, theta_spatial, theta_pos, theta_col));
        Self::new(kernels)
    }

    pub fn for_model(kind: ModelKind, theta_spatial: f64, theta_pos: f64, theta_col: f64) -> Result<Self> {
        match kind {
            ModelKind::Cascade => Self::cascade(theta_spatial, theta_pos, theta_col),
            ModelKind::Unified => Self::unified(theta_spatial, theta_pos, theta_col),
        }
    }

    fn pair(role: KernelRole, theta_spatial: f64, theta_pos: f64, theta_col: f64) -> [KernelDesc; 2] {
        [
            KernelDesc { feature: FeatureKind::Bilateral { theta_pos, theta_col }, role },
            KernelDesc { feature: FeatureKind::Spatial { theta_pos: theta_spatial }, role },
        ]
    }

    pub fn kernels(&self) -> &[KernelDesc] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn count(&self, role: KernelRole) -> usize {
        self.kernels.iter().filter(|k| k.role == role).count()
    }

    /// Checks the kernel layout a model kind requires (cascade: 2 intra; unified: 2 intra + 2 cross).
    pub fn validate_for(&self, kind: ModelKind) -> Result<()> {
        let intra = self.count(KernelRole::IntraScale);
        let cross = self.count(KernelRole::CrossScale);
        let ok = match kind {
            ModelKind::Cascade => intra == 2 && cross == 0,
            ModelKind::Unified => intra == 2 && cross == 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidValue(format!(
                "{} model needs {} kernels, spec has {intra} intra-scale and {cross} cross-scale",
                kind.name(),
                match kind {
                    ModelKind::Cascade => "2 intra-scale",
                    ModelKind::Unified => "2 intra-scale + 2 cross-scale",
                }
            )))
        }
    }
}

fn check_bandwidth(key: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Config { key: key.into(), reason: format!("bandwidth must be > 0, got {value}") })
    }
}

/// Per-pixel feature vectors for one kernel, already divided by the bandwidths,
/// so the kernel between pixels i and j is `exp(-|f_i - f_j|² / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    dim: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidValue("feature dimension must be >= 1".into()));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values is not a positive multiple of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite feature value".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Kernel value between points i and j.
    pub fn kernel(&self, i: usize, j: usize) -> f64 {
        let d2: f64 = self
            .point(i)
            .iter()
            .zip(self.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (-0.5 * d2).exp()
    }

    /// Content hash used to tie caches to the features they were built from.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over the raw bits
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        mix(self.dim as u64);
        for v in &self.data {
            mix(v.to_bits());
        }
        h
    }
}

/// One [`Features`] per kernel of a [`KernelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    kernels: Vec<Features>,
}

impl FeatureStack {
    pub fn new(kernels: Vec<Features>) -> Result<Self> {
        let n = kernels
            .first()
            .ok_or_else(|| Error::InvalidValue("feature stack needs at least one kernel".into()))?
            .len();
        if kernels.iter().any(|f| f.len() != n) {
            return Err(Error::DimensionMismatch("kernels disagree on pixel count".into()));
        }
        Ok(Self { kernels })
    }

    pub fn kernel(&self, m: usize) -> &Features {
        &self.kernels[m]
    }

    pub fn kernels(&self) -> &[Features] {
        &self.kernels
    }

    pub fn num_kernels(&self) -> usize {
        self.kernels.len()
    }

    pub fn pixels(&self) -> usize {
        self.kernels[0].len()
    }
}

/// Builds bandwidth-folded features for every kernel of `spec`.
pub fn extract_features(image: &RgbImage, spec: &KernelSpec) -> Result<FeatureStack> {
    let w = image.width();
    let kernels = spec
        .kernels()
        .iter()
        .map(|k| {
            let dim = k.feature.dim();
            let mut data = Vec::with_capacity(image.len() * dim);
            for (i, rgb) in image.pixels().iter().enumerate() {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                match k.feature {
                    FeatureKind::Spatial { theta_pos } => {
                        data.extend([x / theta_pos, y / theta_pos]);
                    }
                    FeatureKind::Bilateral { theta_pos, theta_col } => {
                        data.extend([x / theta_pos, y / theta_pos]);
                        data.extend(rgb.iter().map(|c| c / theta_col));
                    }
                }
            }
            Features::new(dim, data)
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureStack::new(kernels)
}

/// Learnable kernel weights plus mean-field iteration counts.
///
/// Cascade models carry one β vector and one iteration count per scale;
/// unified models carry a single shared β vector and a single sweep count T.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    kind: ModelKind,
    betas: Vec<Vec<f64>>,
    iterations: Vec<usize>,
}

impl CrfParams {
    pub fn new(kind: ModelKind, betas: Vec<Vec<f64>>, iterations: Vec<usize>) -> Result<Self> {
        if betas.is_empty() || iterations.len() != betas.len() {
            return Err(Error::InvalidValue(format!(
                "need one iteration count per beta group, got {} groups and {} counts",
                betas.len(),
                iterations.len()
            )));
        }
        if kind == ModelKind::Unified && betas.len() != 1 {
            return Err(Error::InvalidValue("unified model shares a single beta vector".into()));
        }
        let m = betas[0].len();
        if m == 0 || betas.iter().any(|b| b.len() != m) {
            return Err(Error::InvalidValue("beta groups must be nonempty and equally sized".into()));
        }
        if let Some(b) = betas.iter().flatten().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(Error::Config { key: "beta".into(), reason: format!("must be >= 0, got {b}") });
        }
        if iterations.contains(&0) {
            return Err(Error::Config { key: "iterations".into(), reason: "must be >= 1".into() });
        }
        Ok(Self { kind, betas, iterations })
    }

    /// Every β set to `beta`, every iteration count set to `iterations`.
    pub fn uniform(kind: ModelKind, scales: usize, kernels: usize, beta: f64, iterations: usize) -> Result<Self> {
        let groups = match kind {
            ModelKind::Cascade => scales,
            ModelKind::Unified => 1,
        };
        Self::new(kind, vec![vec![beta; kernels]; groups], vec![iterations; groups])
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn groups(&self) -> &[Vec<f64>] {
        &self.betas
    }

    pub fn kernels(&self) -> usize {
        self.betas[0].len()
    }

    /// β vector used at zero-based scale `l`.
    pub fn betas_for_scale(&self, l: usize) -> &[f64] {
        match self.kind {
            ModelKind::Cascade => &self.betas[l],
            ModelKind::Unified => &self.betas[0],
        }
    }

    /// t_l for cascade, T for unified.
    pub fn iterations_for_scale(&self, l: usize) -> usize {
        match self.kind {
            ModelKind::Cascade => self.iterations[l],
            ModelKind::Unified => self.iterations[0],
        }
    }

    pub fn iterations(&self) -> &[usize] {
        &self.iterations
    }

    pub fn flat(&self) -> Vec<f64> {
        self.betas.iter().flatten().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.betas.len() * self.kernels() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} betas, got {}",
                self.betas.len() * self.kernels(),
                flat.len()
            )));
        }
        if let Some(b) = flat.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(Error::Config { key: "beta".into(), reason: format!("must be >= 0, got {b}") });
        }
        let m = self.kernels();
        for (group, chunk) in self.betas.iter_mut().zip(flat.chunks(m)) {
            group.copy_from_slice(chunk);
        }
        Ok(())
    }

    /// Checks group count against the number of scales and the kernel count against the kernel layout.
    pub fn validate_for(&self, spec: &KernelSpec, scales: usize) -> Result<()> {
        if self.kernels() != spec.len() {
            return Err(Error::DimensionMismatch(format!(
                "params have {} betas per group, kernel spec has {} kernels",
                self.kernels(),
                spec.len()
            )));
        }
        if self.kind == ModelKind::Cascade && self.betas.len() != scales {
            return Err(Error::DimensionMismatch(format!(
                "cascade params cover {} scales, stack has {scales}",
                self.betas.len()
            )));
        }
        Ok(())
    }
}
