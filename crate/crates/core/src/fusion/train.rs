use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::FusionModel;
use crate::cmf::CrfKernels;
use crate::error::{Error, Result};
use crate::types::{CrfParams, DepthMap, RgbImage, SideOutputStack};

/// `Σ(pred − gt)²` and its gradient `2(pred − gt)`.
pub fn square_loss(pred: &DepthMap, gt: &DepthMap) -> Result<(f64, Vec<f64>)> {
    if !pred.same_shape(gt) {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let diff: Vec<f64> = pred.values().iter().zip(gt.values()).map(|(p, g)| p - g).collect();
    let loss = diff.iter().map(|d| d * d).sum();
    Ok((loss, diff.into_iter().map(|d| 2.0 * d).collect()))
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: RgbImage,
    pub stack: SideOutputStack,
    pub gt: DepthMap,
}

impl Scene {
    pub fn new(image: RgbImage, stack: SideOutputStack, gt: DepthMap) -> Result<Self> {
        if !image.matches(&gt) || stack.width() != gt.width() || stack.height() != gt.height() {
            return Err(Error::DimensionMismatch("image, side outputs and ground truth differ in size".into()));
        }
        Ok(Self { image, stack, gt })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn new(scenes: Vec<Scene>) -> Self {
        Self { scenes }
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.5, momentum: 0.9, weight_decay: 0.0005, epochs: 10, batch_size: 4 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Err(Error::Config { key: key.into(), reason: reason.into() });
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate", "must be >= 0");
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return bad("momentum", "must be in [0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be >= 0");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub params: CrfParams,
    /// Mini-batch loss at every step, measured before the step's update.
    pub history: Vec<LossRecord>,
    /// Mean per-pixel squared error over the whole dataset before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Features and filters for every scene, prepared once.
pub struct PreparedDataset<'a> {
    dataset: &'a Dataset,
    kernels: Vec<CrfKernels>,
}

impl<'a> PreparedDataset<'a> {
    pub fn new(dataset: &'a Dataset, model: &FusionModel) -> Result<Self> {
        let kernels = dataset.scenes.iter().map(|s| model.prepare(&s.image)).collect::<Result<_>>()?;
        Ok(Self { dataset, kernels })
    }

    /// Mean per-pixel squared error of scene `i`, and optionally its weight gradient.
    pub fn scene_loss(&self, model: &FusionModel, i: usize, with_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let scene = &self.dataset.scenes[i];
        let kernels = &self.kernels[i];
        let trace = model.forward(&scene.stack, kernels)?;
        let (loss, grad) = square_loss(&trace.prediction(), &scene.gt)?;
        let n = grad.len() as f64;
        if !with_grad {
            return Ok((loss / n, None));
        }
        let grad: Vec<f64> = grad.into_iter().map(|g| g / n).collect();
        let grads = model.backward(&trace, kernels, &grad)?;
        Ok((loss / n, Some(grads.betas)))
    }

    /// Mean loss and mean weight gradient over `indices`, computed in parallel.
    pub fn batch(&self, model: &FusionModel, indices: &[usize]) -> Result<(f64, Vec<f64>)> {
        let results: Vec<Result<(f64, Option<Vec<f64>>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> =
                indices.iter().map(|&i| scope.spawn(move || self.scene_loss(model, i, true))).collect();
            handles.into_iter().map(|h| h.join().expect("scene worker panicked")).collect()
        });
        let mut loss = 0.0;
        let mut grad = vec![0.0; model.params().flat().len()];
        for r in results {
            let (l, g) = r?;
            loss += l;
            grad.iter_mut().zip(g.expect("gradient requested")).for_each(|(a, b)| *a += b);
        }
        let k = indices.len() as f64;
        Ok((loss / k, grad.into_iter().map(|g| g / k).collect()))
    }

    pub fn mean_loss(&self, model: &FusionModel) -> Result<f64> {
        let all: Vec<usize> = (0..self.dataset.len()).collect();
        let results: Vec<Result<(f64, Option<Vec<f64>>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = all.iter().map(|&i| scope.spawn(move || self.scene_loss(model, i, false))).collect();
            handles.into_iter().map(|h| h.join().expect("scene worker panicked")).collect()
        });
        let mut total = 0.0;
        for r in results {
            total += r?.0;
        }
        Ok(total / all.len() as f64)
    }
}

/// Mini-batch SGD with momentum and weight decay on the kernel weights.
///
/// Each epoch visits the scenes in a seeded shuffled order. After every step
/// the weights are projected back onto `β ≥ 0`.
pub fn train(dataset: &Dataset, model: &FusionModel, hyper: &TrainConfig, seed: u64) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    hyper.validate()?;
    let prepared = PreparedDataset::new(dataset, model)?;
    let mut model = model.clone();
    let initial_loss = prepared.mean_loss(&model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut velocity = vec![0.0; model.params().flat().len()];
    let decay = if hyper.learning_rate * hyper.weight_decay > 1.0 { 0.0 } else { hyper.weight_decay };
    let mut history = Vec::new();
    let mut step = 0;
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size) {
            step += 1;
            let (loss, grad) = prepared.batch(&model, batch)?;
            history.push(LossRecord { step, epoch, loss });
            let mut betas = model.params().flat();
            for ((b, v), g) in betas.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = hyper.momentum * *v + g + decay * *b;
                *b = (*b - hyper.learning_rate * *v).max(0.0);
            }
            model.params_mut().set_flat(&betas)?;
        }
    }
    let final_loss = prepared.mean_loss(&model)?;
    Ok(TrainReport { params: model.params().clone(), history, initial_loss, final_loss })
}
