//! Unnormalized Gaussian message passing `out_i = Σ_j K(i,j) v_j`.
//!
//! Features are bandwidth-folded (see [`crate::extract_features`]) so the
//! kernel is always `exp(-|f_i - f_j|² / 2)` with `K(i,i) = 1`. Two backends
//! compute the same linear, symmetric operator:
//!
//! * [`gauss_filter_exact`]: direct O(N²·d) summation, the reference path.
//! * [`gauss_filter_lattice`]: permutohedral-lattice splat/blur/slice in O(N·d²),
//!   using a [`LatticeCache`] built once per feature set.
//!
//! Neither output is normalized.

mod exact;
mod lattice;

pub use exact::{gauss_filter_exact, DenseKernel, DENSE_MATRIX_LIMIT, EXACT_PIXEL_LIMIT};
pub use lattice::{build_lattice, gauss_filter_lattice, LatticeCache};

use crate::error::{Error, Result};
use crate::types::Features;

/// One filtering call: the values to propagate, the kernel features, and
/// whether the `j = i` term is dropped from each sum.
#[derive(Debug, Clone, Copy)]
pub struct FilterRequest<'a> {
    pub values: &'a [f64],
    pub features: &'a Features,
    pub exclude_self: bool,
}

impl<'a> FilterRequest<'a> {
    pub fn new(values: &'a [f64], features: &'a Features, exclude_self: bool) -> Self {
        Self { values, features, exclude_self }
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.values.len() != self.features.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} feature points",
                self.values.len(),
                self.features.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterBackend {
    Exact,
    Lattice,
}

impl FilterBackend {
    pub fn name(&self) -> &'static str {
        match self {
            FilterBackend::Exact => "exact",
            FilterBackend::Lattice => "lattice",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exact" => Some(FilterBackend::Exact),
            "lattice" => Some(FilterBackend::Lattice),
            _ => None,
        }
    }
}

/// A filter prepared for repeated application over one fixed feature set.
#[derive(Debug, Clone)]
pub enum KernelFilter {
    Exact(DenseKernel),
    Lattice(LatticeCache),
}

impl KernelFilter {
    pub fn build(features: &Features, backend: FilterBackend) -> Self {
        match backend {
            FilterBackend::Exact => KernelFilter::Exact(DenseKernel::new(features.clone())),
            FilterBackend::Lattice => KernelFilter::Lattice(build_lattice(features)),
        }
    }

    pub fn backend(&self) -> FilterBackend {
        match self {
            KernelFilter::Exact(_) => FilterBackend::Exact,
            KernelFilter::Lattice(_) => FilterBackend::Lattice,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            KernelFilter::Exact(k) => k.len(),
            KernelFilter::Lattice(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply(&self, values: &[f64], exclude_self: bool) -> Result<Vec<f64>> {
        match self {
            KernelFilter::Exact(k) => k.apply(values, exclude_self),
            KernelFilter::Lattice(c) => c.apply(values, exclude_self),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_features(n: usize, dim: usize, seed: u64) -> Features {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Features::new(dim, (0..n * dim).map(|_| rng.random_range(0.0..4.0)).collect()).unwrap()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn both_backends_are_linear_and_symmetric(
            seed in 0u64..1000,
            dim in 1usize..6,
            excl in any::<bool>(),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let n = 40;
            let f = random_features(n, dim, seed);
            let u: Vec<f64> = (0..n).map(|i| ((i * 7 + seed as usize) % 11) as f64 - 5.0).collect();
            let v: Vec<f64> = (0..n).map(|i| ((i * 3 + 1) % 5) as f64 * 0.3).collect();
            for backend in [FilterBackend::Exact, FilterBackend::Lattice] {
                let k = KernelFilter::build(&f, backend);
                let fu = k.apply(&u, excl).unwrap();
                let fv = k.apply(&v, excl).unwrap();
                let mix: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
                let fmix = k.apply(&mix, excl).unwrap();
                for i in 0..n {
                    let expect = a * fu[i] + b * fv[i];
                    prop_assert!((fmix[i] - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
                }
                let lhs = dot(&fu, &v);
                let rhs = dot(&u, &fv);
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{backend:?}: {lhs} vs {rhs}");
            }
        }

        #[test]
        fn exact_filter_preserves_nonnegativity(seed in 0u64..1000, excl in any::<bool>()) {
            let n = 30;
            let f = random_features(n, 3, seed);
            let v: Vec<f64> = (0..n).map(|i| ((i * 13 + seed as usize) % 7) as f64).collect();
            let out = gauss_filter_exact(&FilterRequest::new(&v, &f, excl)).unwrap();
            prop_assert!(out.iter().all(|x| *x >= 0.0));
        }
    }
}
