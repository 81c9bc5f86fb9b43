//! The continuous mean-field (C-MF) block: one mean-field update of one scale.
//!
//! With `h = γ/2`, every update has the form `μ' = numerator / h` where
//!
//! ```text
//! h         = 1 + 2 Σ_intra β_m S_m  [+ 2·c Σ_cross β_m S_m    if g2 and c sources]
//! numerator = s + 2 Σ_intra β_m F_m(μ)
//!               [+ 2 Σ_cross β_m G_m(μ_src)   if g1]
//!               [+ μ_src                       if not g1]
//! ```
//!
//! `F_m` filters with the `j = i` term removed, `G_m` keeps it, and
//! `S_m` is the matching filter of the all-ones map. `μ_src` is the sum of the
//! `c` source-scale maps feeding this scale.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::filter::{FilterBackend, KernelFilter};
use crate::types::{FeatureStack, KernelRole, KernelSpec, ModelKind};

/// Flow switches of the block. Unified models use `g1 = g2 = true`,
/// cascade models `g1 = g2 = false`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gates {
    /// Route the source-scale estimate through the cross-scale filters (true)
    /// or add it to the observation (false).
    pub g1: bool,
    /// Include the cross-scale kernel sums in the normalizer.
    pub g2: bool,
}

impl Gates {
    pub const UNIFIED: Gates = Gates { g1: true, g2: true };
    pub const CASCADE: Gates = Gates { g1: false, g2: false };

    pub fn for_model(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Unified => Self::UNIFIED,
            ModelKind::Cascade => Self::CASCADE,
        }
    }
}

/// Per-kernel filter sums `S_m = Σ_j K_m(i,j)` (self excluded for intra-scale
/// kernels, included for cross-scale ones).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSums {
    roles: Vec<KernelRole>,
    sums: Vec<Vec<f64>>,
}

impl KernelSums {
    pub fn new(roles: Vec<KernelRole>, sums: Vec<Vec<f64>>) -> Result<Self> {
        if roles.is_empty() || roles.len() != sums.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} kernel roles for {} sum maps",
                roles.len(),
                sums.len()
            )));
        }
        let n = sums[0].len();
        if sums.iter().any(|s| s.len() != n) {
            return Err(Error::DimensionMismatch("kernel sum maps differ in size".into()));
        }
        Ok(Self { roles, sums })
    }

    pub fn roles(&self) -> &[KernelRole] {
        &self.roles
    }

    pub fn sum(&self, m: usize) -> &[f64] {
        &self.sums[m]
    }

    pub fn pixels(&self) -> usize {
        self.sums[0].len()
    }
}

/// Filters and kernel sums prepared once per image.
#[derive(Debug, Clone)]
pub struct CrfKernels {
    id: u64,
    /// Distinct filters; kernels with identical features share one.
    filters: Vec<KernelFilter>,
    filter_of: Vec<usize>,
    sums: KernelSums,
}

static NEXT_KERNELS_ID: AtomicU64 = AtomicU64::new(1);

impl CrfKernels {
    pub fn prepare(features: &FeatureStack, spec: &KernelSpec, backend: FilterBackend) -> Result<Self> {
        if features.num_kernels() != spec.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature sets for {} kernels",
                features.num_kernels(),
                spec.len()
            )));
        }
        let n = features.pixels();
        let ones = vec![1.0; n];
        let mut filters: Vec<KernelFilter> = Vec::new();
        let mut filter_of = Vec::with_capacity(spec.len());
        let mut roles = Vec::with_capacity(spec.len());
        let mut sums = Vec::with_capacity(spec.len());
        for (m, (desc, f)) in spec.kernels().iter().zip(features.kernels()).enumerate() {
            let shared = (0..m).find(|&k| features.kernel(k) == f).map(|k| filter_of[k]);
            let idx = shared.unwrap_or_else(|| {
                filters.push(KernelFilter::build(f, backend));
                filters.len() - 1
            });
            sums.push(filters[idx].apply(&ones, desc.role == KernelRole::IntraScale)?);
            roles.push(desc.role);
            filter_of.push(idx);
        }
        Ok(Self {
            id: NEXT_KERNELS_ID.fetch_add(1, Ordering::Relaxed),
            filters,
            filter_of,
            sums: KernelSums::new(roles, sums)?,
        })
    }

    pub fn pixels(&self) -> usize {
        self.sums.pixels()
    }

    pub fn num_kernels(&self) -> usize {
        self.filter_of.len()
    }

    pub fn sums(&self) -> &KernelSums {
        &self.sums
    }

    pub fn role(&self, m: usize) -> KernelRole {
        self.sums.roles[m]
    }

    pub fn backend(&self) -> FilterBackend {
        self.filters[0].backend()
    }

    /// Applies kernel m with its role's self-exclusion rule.
    pub fn filter(&self, m: usize, values: &[f64]) -> Result<Vec<f64>> {
        self.filters[self.filter_of[m]].apply(values, self.role(m) == KernelRole::IntraScale)
    }
}

/// The source-scale input of an update: the sum of the `sources` feeding maps.
#[derive(Debug, Clone, Copy)]
pub struct CrossInput<'a> {
    pub mu: &'a [f64],
    pub sources: usize,
}

/// Normalizer γ = 2h (see module docs). `cross_sources` is 0 when no source
/// scale feeds this update, which drops the cross-scale terms.
pub fn compute_gamma(sums: &KernelSums, betas: &[f64], gates: Gates, cross_sources: usize) -> Result<Vec<f64>> {
    check_betas(betas, sums.roles.len())?;
    let mut h = vec![1.0; sums.pixels()];
    for (m, (&beta, role)) in betas.iter().zip(&sums.roles).enumerate() {
        let weight = match role {
            KernelRole::IntraScale => 2.0 * beta,
            KernelRole::CrossScale if gates.g2 => 2.0 * beta * cross_sources as f64,
            KernelRole::CrossScale => 0.0,
        };
        if weight != 0.0 {
            for (hi, si) in h.iter_mut().zip(&sums.sums[m]) {
                *hi += weight * si;
            }
        }
    }
    Ok(h.into_iter().map(|hi| 2.0 * hi).collect())
}

fn check_betas(betas: &[f64], kernels: usize) -> Result<()> {
    if betas.len() != kernels {
        return Err(Error::DimensionMismatch(format!("{} betas for {kernels} kernels", betas.len())));
    }
    if let Some(b) = betas.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
        return Err(Error::InvalidValue(format!("kernel weight must be >= 0, got {b}")));
    }
    Ok(())
}

/// Everything the backward pass needs from one forward update.
#[derive(Debug, Clone)]
pub struct MeanFieldState {
    kernels_id: u64,
    gates: Gates,
    betas: Vec<f64>,
    cross_sources: usize,
    mu: Vec<f64>,
    gamma: Vec<f64>,
    /// Filtered message per kernel, `None` for kernels that did not contribute.
    messages: Vec<Option<Vec<f64>>>,
}

impl MeanFieldState {
    /// The updated estimate μ'.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn has_cross(&self) -> bool {
        self.cross_sources > 0
    }
}

/// Gradients of one update with respect to each of its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CmfGrads {
    pub s: Vec<f64>,
    pub mu_same: Vec<f64>,
    /// Gradient w.r.t. the summed source map, when one was given.
    pub mu_cross: Option<Vec<f64>>,
    pub betas: Vec<f64>,
}

/// One mean-field update of a scale. Returns μ' and the state for [`cmf_backward`].
pub fn cmf_forward(
    s: &[f64],
    mu_same: &[f64],
    cross: Option<CrossInput>,
    betas: &[f64],
    gates: Gates,
    kernels: &CrfKernels,
) -> Result<(Vec<f64>, MeanFieldState)> {
    let n = kernels.pixels();
    if s.len() != n || mu_same.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "update over {n} pixels got s of {} and mu of {}",
            s.len(),
            mu_same.len()
        )));
    }
    if let Some(c) = &cross {
        if c.mu.len() != n {
            return Err(Error::DimensionMismatch(format!("source map has {} pixels, expected {n}", c.mu.len())));
        }
        if c.sources == 0 {
            return Err(Error::InvalidValue("cross input must come from at least one source".into()));
        }
    }
    let cross_sources = cross.map_or(0, |c| c.sources);
    let gamma = compute_gamma(kernels.sums(), betas, gates, cross_sources)?;

    let mut numerator = s.to_vec();
    if let (Some(c), false) = (&cross, gates.g1) {
        numerator.iter_mut().zip(c.mu).for_each(|(o, m)| *o += m);
    }
    let mut messages = Vec::with_capacity(betas.len());
    for (m, &beta) in betas.iter().enumerate() {
        let input = match kernels.role(m) {
            KernelRole::IntraScale => Some(mu_same),
            KernelRole::CrossScale => cross.filter(|_| gates.g1).map(|c| c.mu),
        };
        let message = match input {
            Some(values) => {
                let msg = kernels.filter(m, values)?;
                numerator.iter_mut().zip(&msg).for_each(|(o, f)| *o += 2.0 * beta * f);
                Some(msg)
            }
            None => None,
        };
        messages.push(message);
    }

    let mu: Vec<f64> = numerator
        .iter()
        .zip(&gamma)
        .map(|(num, g)| {
            assert!(*g >= 2.0, "normalizer fell below 2: {g}");
            2.0 * num / g
        })
        .collect();

    let state = MeanFieldState {
        kernels_id: kernels.id,
        gates,
        betas: betas.to_vec(),
        cross_sources,
        mu: mu.clone(),
        gamma,
        messages,
    };
    Ok((mu, state))
}

/// Reverse-mode derivatives of one update, given `∂L/∂μ'`.
///
/// Filters are symmetric, so the adjoint of each filter is the filter itself.
/// γ depends on β, so β gradients collect both the numerator and the
/// normalizer contributions.
pub fn cmf_backward(state: &MeanFieldState, kernels: &CrfKernels, grad_mu_next: &[f64]) -> Result<CmfGrads> {
    if state.kernels_id != kernels.id {
        return Err(Error::StaleState("state was produced with different kernels".into()));
    }
    if grad_mu_next.len() != state.mu.len() {
        return Err(Error::StaleState(format!(
            "gradient has {} pixels, state has {}",
            grad_mu_next.len(),
            state.mu.len()
        )));
    }
    let n = state.mu.len();

    // ∂L/∂numerator and ∂L/∂γ
    let grad_num: Vec<f64> = grad_mu_next.iter().zip(&state.gamma).map(|(g, gm)| 2.0 * g / gm).collect();
    let grad_gamma: Vec<f64> = grad_mu_next
        .iter()
        .zip(&state.mu)
        .zip(&state.gamma)
        .map(|((g, mu), gm)| -g * mu / gm)
        .collect();

    let mut grad_same = vec![0.0; n];
    let mut grad_cross = (state.cross_sources > 0).then(|| {
        if state.gates.g1 {
            vec![0.0; n]
        } else {
            grad_num.clone()
        }
    });
    let mut grad_betas = vec![0.0; state.betas.len()];

    for (m, &beta) in state.betas.iter().enumerate() {
        let role = kernels.role(m);
        if let Some(msg) = &state.messages[m] {
            grad_betas[m] += 2.0 * dot(&grad_num, msg);
            let back = kernels.filter(m, &grad_num)?;
            let target = match role {
                KernelRole::IntraScale => &mut grad_same,
                KernelRole::CrossScale => grad_cross.as_mut().expect("cross message implies cross input"),
            };
            target.iter_mut().zip(&back).for_each(|(t, b)| *t += 2.0 * beta * b);
        }
        let gamma_weight = match role {
            KernelRole::IntraScale => 4.0,
            KernelRole::CrossScale if state.gates.g2 => 4.0 * state.cross_sources as f64,
            KernelRole::CrossScale => 0.0,
        };
        if gamma_weight != 0.0 {
            grad_betas[m] += gamma_weight * dot(&grad_gamma, kernels.sums().sum(m));
        }
    }

    Ok(CmfGrads { s: grad_num, mu_same: grad_same, mu_cross: grad_cross, betas: grad_betas })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
