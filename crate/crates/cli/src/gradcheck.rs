//! Analytic gradients of the square loss against central finite differences.

use anyhow::Result;
use crffuse_core::config::Config;
use crffuse_core::filter::FilterBackend;
use crffuse_core::fusion::{build_passing_structure, square_loss, FusionModel, StructureKind};
use crffuse_core::oracle::finite_diff_grad;
use crffuse_core::{DepthMap, ModelKind, RgbImage, SideOutputStack};

/// Worst relative errors of one (model, structure) combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCase {
    pub kind: ModelKind,
    pub structure: StructureKind,
    pub worst_beta: f64,
    pub worst_s: f64,
}

impl GradCase {
    pub fn worst(&self) -> f64 {
        self.worst_beta.max(self.worst_s)
    }
}

/// `|a - b| / max(|a|, |b|, 1e-12)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Fixed, distinct, strictly positive weights so that ±h stays feasible.
pub fn probe_betas(count: usize) -> Vec<f64> {
    (0..count).map(|i| 0.1 + 0.05 * (i % 7) as f64).collect()
}

/// Checks ∂loss/∂β and ∂loss/∂s for one model on one scene with the exact filter.
pub fn check_case(
    cfg: &Config,
    kind: ModelKind,
    structure: StructureKind,
    image: &RgbImage,
    stack: &SideOutputStack,
    gt: &DepthMap,
    step: f64,
) -> Result<GradCase> {
    let scales = stack.num_scales();
    let mut base = cfg.clone();
    base.model = kind;
    base.scales = scales;
    let spec = base.kernel_spec()?;
    let mut params = base.initial_params()?;
    let betas = probe_betas(params.flat().len());
    params.set_flat(&betas)?;
    let model = FusionModel::new(params, spec, build_passing_structure(structure, scales)?, FilterBackend::Exact)?;

    let kernels = model.prepare(image)?;
    let trace = model.forward(stack, &kernels)?;
    let (_, g) = square_loss(&trace.prediction(), gt)?;
    let analytic = model.backward(&trace, &kernels, &g)?;

    let numeric_beta = finite_diff_grad(
        |b| {
            let mut m = model.clone();
            m.params_mut().set_flat(b).expect("perturbed betas stay nonnegative");
            let pred = m.forward(stack, &kernels).expect("forward on a validated model").prediction();
            square_loss(&pred, gt).expect("shapes checked above").0
        },
        &betas,
        step,
    );

    let (w, h) = (stack.width(), stack.height());
    let flat_s: Vec<f64> = stack.scales().iter().flat_map(|m| m.values().iter().copied()).collect();
    let numeric_s = finite_diff_grad(
        |s| {
            let maps = s.chunks(w * h).map(|c| DepthMap::new(w, h, c.to_vec()).expect("same shape")).collect();
            let st = SideOutputStack::new(maps).expect("same shape");
            let pred = model.forward(&st, &kernels).expect("forward on a validated model").prediction();
            square_loss(&pred, gt).expect("shapes checked above").0
        },
        &flat_s,
        step,
    );
    let analytic_s: Vec<f64> = analytic.s.iter().flatten().copied().collect();

    let worst = |a: &[f64], n: &[f64]| a.iter().zip(n).map(|(a, n)| relative_error(*a, *n)).fold(0.0, f64::max);
    Ok(GradCase {
        kind,
        structure,
        worst_beta: worst(&analytic.betas, &numeric_beta),
        worst_s: worst(&analytic_s, &numeric_s),
    })
}

/// Every model × passing structure on one scene.
pub fn check_all(
    cfg: &Config,
    image: &RgbImage,
    stack: &SideOutputStack,
    gt: &DepthMap,
    step: f64,
) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    for kind in [ModelKind::Unified, ModelKind::Cascade] {
        for structure in StructureKind::ALL {
            out.push(check_case(cfg, kind, structure, image, stack, gt, step)?);
        }
    }
    Ok(out)
}
