use super::structure::PassingStructure;
use crate::cmf::{cmf_backward, cmf_forward, CrfKernels, CrossInput, Gates, MeanFieldState};
use crate::error::{Error, Result};
use crate::filter::FilterBackend;
use crate::types::{extract_features, CrfParams, DepthMap, KernelSpec, ModelKind, RgbImage, SideOutputStack};

/// A complete fusion model: kernel layout, weights, scale edges and filter backend.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    params: CrfParams,
    spec: KernelSpec,
    structure: PassingStructure,
    backend: FilterBackend,
}

/// Reported after every single C-MF update during a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Progress<'a> {
    pub scale: usize,
    /// One-based iteration (cascade) or sweep (unified) number.
    pub iteration: usize,
    /// Current estimate of every scale.
    pub mu: &'a [Vec<f64>],
}

#[derive(Debug, Clone)]
struct Step {
    scale: usize,
    state: MeanFieldState,
}

/// The result of a forward pass, holding everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct Trace {
    width: usize,
    height: usize,
    prediction: usize,
    mu: Vec<Vec<f64>>,
    observations: Vec<Vec<f64>>,
    steps: Vec<Step>,
}

impl Trace {
    /// Final estimate of every scale.
    pub fn mu(&self) -> &[Vec<f64>] {
        &self.mu
    }

    /// The observation each scale was fitted to: `s_l` for unified models,
    /// `o_l = s_l + Σ ReLU(μ_src)` for cascade models.
    pub fn observations(&self) -> &[Vec<f64>] {
        &self.observations
    }

    pub fn prediction_scale(&self) -> usize {
        self.prediction
    }

    pub fn prediction(&self) -> DepthMap {
        DepthMap::new(self.width, self.height, self.mu[self.prediction].clone())
            .expect("prediction keeps the input shape")
    }
}

/// Derivatives of a scalar loss with respect to the model weights and the side outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    /// Same layout as [`CrfParams::flat`].
    pub betas: Vec<f64>,
    /// One map per scale.
    pub s: Vec<Vec<f64>>,
}

impl FusionModel {
    pub fn new(params: CrfParams, spec: KernelSpec, structure: PassingStructure, backend: FilterBackend) -> Result<Self> {
        spec.validate_for(params.kind())?;
        params.validate_for(&spec, structure.scales())?;
        Ok(Self { params, spec, structure, backend })
    }

    pub fn kind(&self) -> ModelKind {
        self.params.kind()
    }

    pub fn params(&self) -> &CrfParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut CrfParams {
        &mut self.params
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn structure(&self) -> &PassingStructure {
        &self.structure
    }

    pub fn backend(&self) -> FilterBackend {
        self.backend
    }

    pub fn with_params(&self, params: CrfParams) -> Result<Self> {
        Self::new(params, self.spec.clone(), self.structure.clone(), self.backend)
    }

    /// Features and filters for one image; reusable for any weights.
    pub fn prepare(&self, image: &RgbImage) -> Result<CrfKernels> {
        let features = extract_features(image, &self.spec)?;
        CrfKernels::prepare(&features, &self.spec, self.backend)
    }

    pub fn forward(&self, stack: &SideOutputStack, kernels: &CrfKernels) -> Result<Trace> {
        self.forward_observed(stack, kernels, |_| {})
    }

    /// Runs the model, calling `observe` after each C-MF update.
    pub fn forward_observed(
        &self,
        stack: &SideOutputStack,
        kernels: &CrfKernels,
        observe: impl FnMut(Progress),
    ) -> Result<Trace> {
        if stack.num_scales() != self.structure.scales() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} scales, side outputs have {}",
                self.structure.scales(),
                stack.num_scales()
            )));
        }
        if stack.pixels() != kernels.pixels() {
            return Err(Error::DimensionMismatch(format!(
                "side outputs have {} pixels, kernels were prepared for {}",
                stack.pixels(),
                kernels.pixels()
            )));
        }
        if kernels.num_kernels() != self.spec.len() {
            return Err(Error::DimensionMismatch("kernels were prepared for a different spec".into()));
        }
        match self.kind() {
            ModelKind::Unified => self.unified(stack, kernels, observe),
            ModelKind::Cascade => self.cascade(stack, kernels, observe),
        }
    }

    fn trace(&self, stack: &SideOutputStack, mu: Vec<Vec<f64>>, observations: Vec<Vec<f64>>, steps: Vec<Step>) -> Trace {
        Trace {
            width: stack.width(),
            height: stack.height(),
            prediction: self.structure.prediction_scale(),
            mu,
            observations,
            steps,
        }
    }

    fn unified(&self, stack: &SideOutputStack, kernels: &CrfKernels, mut observe: impl FnMut(Progress)) -> Result<Trace> {
        let s: Vec<Vec<f64>> = stack.scales().iter().map(|m| m.values().to_vec()).collect();
        let mut mu = s.clone();
        let betas = self.params.betas_for_scale(0);
        let sweeps = self.params.iterations_for_scale(0);
        let mut steps = Vec::with_capacity(sweeps * s.len());
        for sweep in 1..=sweeps {
            for &l in self.structure.order() {
                let sources = self.structure.sources(l);
                let summed = sum_maps(sources.iter().map(|&src| mu[src].as_slice()), kernels.pixels());
                let cross = summed.as_deref().map(|m| CrossInput { mu: m, sources: sources.len() });
                let (next, state) = cmf_forward(&s[l], &mu[l], cross, betas, Gates::UNIFIED, kernels)?;
                mu[l] = next;
                steps.push(Step { scale: l, state });
                observe(Progress { scale: l, iteration: sweep, mu: &mu });
            }
        }
        Ok(self.trace(stack, mu, s, steps))
    }

    fn cascade(&self, stack: &SideOutputStack, kernels: &CrfKernels, mut observe: impl FnMut(Progress)) -> Result<Trace> {
        let n = kernels.pixels();
        let mut mu: Vec<Vec<f64>> = stack.scales().iter().map(|m| m.values().to_vec()).collect();
        let mut observations = mu.clone();
        let mut steps = Vec::new();
        for &l in self.structure.order() {
            let sources = self.structure.sources(l);
            let rectified = sum_maps(sources.iter().map(|&src| mu[src].as_slice()), n)
                .map(|_| {
                    let mut r = vec![0.0; n];
                    for &src in sources {
                        r.iter_mut().zip(&mu[src]).for_each(|(a, m)| *a += m.max(0.0));
                    }
                    r
                });
            let s = stack.scale(l).values();
            if let Some(r) = &rectified {
                observations[l] = s.iter().zip(r).map(|(a, b)| a + b).collect();
            }
            mu[l] = observations[l].clone();
            let cross = rectified.as_deref().map(|m| CrossInput { mu: m, sources: sources.len() });
            let betas = self.params.betas_for_scale(l);
            for t in 1..=self.params.iterations_for_scale(l) {
                let (next, state) = cmf_forward(s, &mu[l], cross, betas, Gates::CASCADE, kernels)?;
                mu[l] = next;
                steps.push(Step { scale: l, state });
                observe(Progress { scale: l, iteration: t, mu: &mu });
            }
        }
        Ok(self.trace(stack, mu, observations, steps))
    }

    /// Reverse pass through the unrolled updates for a loss with gradient
    /// `grad_prediction` at the prediction scale.
    pub fn backward(&self, trace: &Trace, kernels: &CrfKernels, grad_prediction: &[f64]) -> Result<ModelGrads> {
        let n = kernels.pixels();
        if grad_prediction.len() != n || trace.mu.len() != self.structure.scales() {
            return Err(Error::StaleState("trace does not belong to this model and image".into()));
        }
        let scales = self.structure.scales();
        let m = self.params.kernels();
        let mut grad_betas = vec![0.0; self.params.groups().len() * m];
        let mut grad_s = vec![vec![0.0; n]; scales];
        // adjoint of the latest (in reverse time) version of each scale's estimate
        let mut adj = vec![vec![0.0; n]; scales];
        adj[trace.prediction].copy_from_slice(grad_prediction);

        let group = |l: usize| match self.kind() {
            ModelKind::Unified => 0,
            ModelKind::Cascade => l,
        };

        let mut steps = trace.steps.iter().rev().peekable();
        while let Some(step) = steps.next() {
            let l = step.scale;
            let g = std::mem::replace(&mut adj[l], vec![0.0; n]);
            let grads = cmf_backward(&step.state, kernels, &g)?;
            add_into(&mut grad_s[l], &grads.s);
            add_into(&mut adj[l], &grads.mu_same);
            for (acc, gb) in grad_betas[group(l) * m..(group(l) + 1) * m].iter_mut().zip(&grads.betas) {
                *acc += gb;
            }
            let last_of_scale = steps.peek().is_none_or(|next| next.scale != l);
            match self.kind() {
                ModelKind::Unified => {
                    if let Some(gc) = &grads.mu_cross {
                        for &src in self.structure.sources(l) {
                            add_into(&mut adj[src], gc);
                        }
                    }
                }
                ModelKind::Cascade => {
                    // every update of a scale sees the same rectified input; the
                    // first update's μ⁰ = o carries its gradient into s and the sources too
                    let mut grad_r = grads.mu_cross.clone();
                    if last_of_scale {
                        let g0 = std::mem::replace(&mut adj[l], vec![0.0; n]);
                        add_into(&mut grad_s[l], &g0);
                        if let Some(r) = grad_r.as_mut() {
                            add_into(r, &g0);
                        }
                    }
                    if let Some(r) = grad_r {
                        for &src in self.structure.sources(l) {
                            for ((a, gr), mu) in adj[src].iter_mut().zip(&r).zip(&trace.mu[src]) {
                                if *mu > 0.0 {
                                    *a += gr;
                                }
                            }
                        }
                    }
                }
            }
        }
        if self.kind() == ModelKind::Unified {
            // what is left is the adjoint of μ⁰ = s
            for (gs, a) in grad_s.iter_mut().zip(&adj) {
                add_into(gs, a);
            }
        }
        Ok(ModelGrads { betas: grad_betas, s: grad_s })
    }
}

fn sum_maps<'a>(maps: impl Iterator<Item = &'a [f64]>, n: usize) -> Option<Vec<f64>> {
    let mut out: Option<Vec<f64>> = None;
    for m in maps {
        let acc = out.get_or_insert_with(|| vec![0.0; n]);
        add_into(acc, m);
    }
    out
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

/// Runs a cascade model on one image.
pub fn cascade_forward(stack: &SideOutputStack, image: &RgbImage, model: &FusionModel) -> Result<(DepthMap, Trace)> {
    if model.kind() != ModelKind::Cascade {
        return Err(Error::InvalidValue("cascade_forward needs a cascade model".into()));
    }
    let trace = model.forward(stack, &model.prepare(image)?)?;
    Ok((trace.prediction(), trace))
}

/// Runs a unified model on one image.
pub fn unified_forward(stack: &SideOutputStack, image: &RgbImage, model: &FusionModel) -> Result<(DepthMap, Trace)> {
    if model.kind() != ModelKind::Unified {
        return Err(Error::InvalidValue("unified_forward needs a unified model".into()));
    }
    let trace = model.forward(stack, &model.prepare(image)?)?;
    Ok((trace.prediction(), trace))
}
