//! Reference solvers used to check the mean-field machinery: dense MAP solves,
//! energy evaluation and central finite differences.
//!
//! Kernel matrices here are assembled straight from the feature vectors and
//! never go through the filter module, so agreement with the filters and the
//! C-MF updates is a genuine cross-check. Everything is dense; use it on small
//! problems only.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{CrfParams, FeatureStack, Features, KernelRole, KernelSpec, ModelKind, SideOutputStack};

/// Largest system dimension (N for one scale, L·N jointly) the dense solver accepts.
pub const MAX_DENSE_DIM: usize = 8192;

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Central differences `(f(x + h·e_k) − f(x − h·e_k)) / 2h` for every coordinate k.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `K(i,j) = exp(-|f_i − f_j|²/2)` for all pairs, diagonal included.
pub fn kernel_matrix(features: &Features) -> DMatrix<f64> {
    let n = features.len();
    let dim = features.dim();
    let data = features.as_slice();
    DMatrix::from_fn(n, n, |i, j| {
        let d2: f64 = (0..dim).map(|k| (data[i * dim + k] - data[j * dim + k]).powi(2)).sum();
        (-0.5 * d2).exp()
    })
}

/// A fused-CRF instance: per-kernel features, the kernel layout, the weights,
/// and the directed scale edges `(source, target)` (zero-based).
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub features: &'a FeatureStack,
    pub spec: &'a KernelSpec,
    pub params: &'a CrfParams,
    pub scales: usize,
    pub edges: &'a [(usize, usize)],
}

impl Problem<'_> {
    fn check(&self) -> Result<()> {
        if self.features.num_kernels() != self.spec.len() {
            return Err(Error::DimensionMismatch("features and kernel spec disagree".into()));
        }
        self.params.validate_for(self.spec, self.scales)?;
        for &(s, t) in self.edges {
            if s == t || s >= self.scales || t >= self.scales {
                return Err(Error::Structure(format!("edge {s}->{t} invalid for {} scales", self.scales)));
            }
        }
        Ok(())
    }

    fn pixels(&self) -> usize {
        self.features.pixels()
    }

    fn sources_of(&self, l: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.1 == l).map(|e| e.0)
    }

    fn kernels(&self, role: KernelRole) -> Vec<(usize, DMatrix<f64>)> {
        self.spec
            .kernels()
            .iter()
            .enumerate()
            .filter(|(_, d)| d.role == role)
            .map(|(m, _)| (m, kernel_matrix(self.features.kernel(m))))
            .collect()
    }
}

/// The linear stationarity system `A μ = o` of the quadratic energy.
///
/// For one scale `A = I + 2·L_graph` (symmetric, strictly diagonally dominant).
/// The joint unified system adds, for every edge into a target scale, the
/// cross-scale degree to the target's diagonal and `−2βK` couplings to the
/// source block. Those couplings are one-directional, so for more than one
/// scale the joint matrix is block lower triangular in schedule order rather
/// than symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySystem {
    matrix: DMatrix<f64>,
}

impl EnergySystem {
    /// Intra-scale system of scale `l` using that scale's weights.
    pub fn for_scale(problem: &Problem, l: usize) -> Result<Self> {
        problem.check()?;
        let n = problem.pixels();
        check_dim(n)?;
        let betas = problem.params.betas_for_scale(l);
        let mut a = DMatrix::identity(n, n);
        for (m, k) in problem.kernels(KernelRole::IntraScale) {
            add_laplacian(&mut a, &k, betas[m]);
        }
        Ok(Self { matrix: a })
    }

    /// Joint system over all scales of a unified model.
    pub fn joint(problem: &Problem) -> Result<Self> {
        problem.check()?;
        let n = problem.pixels();
        let l_count = problem.scales;
        check_dim(n * l_count)?;
        let betas = problem.params.betas_for_scale(0);
        let intra = problem.kernels(KernelRole::IntraScale);
        let cross = problem.kernels(KernelRole::CrossScale);
        let mut a = DMatrix::identity(n * l_count, n * l_count);
        for l in 0..l_count {
            let mut block = a.view_mut((l * n, l * n), (n, n)).into_owned();
            for (m, k) in &intra {
                add_laplacian(&mut block, k, betas[*m]);
            }
            a.view_mut((l * n, l * n), (n, n)).copy_from(&block);
        }
        for &(src, tgt) in problem.edges {
            for (m, k) in &cross {
                let w = 2.0 * betas[*m];
                for i in 0..n {
                    let row_sum: f64 = k.row(i).sum();
                    a[(tgt * n + i, tgt * n + i)] += w * row_sum;
                    for j in 0..n {
                        a[(tgt * n + i, src * n + j)] -= w * k[(i, j)];
                    }
                }
            }
        }
        Ok(Self { matrix: a })
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch("energy system must be square".into()));
        }
        check_dim(matrix.nrows())?;
        Ok(Self { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (&self.matrix - self.matrix.transpose()).amax() <= tol
    }

    /// Every row's diagonal exceeds the sum of its off-diagonal magnitudes.
    pub fn is_strictly_diagonally_dominant(&self) -> bool {
        self.matrix.row_iter().enumerate().all(|(i, row)| {
            let off: f64 = row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v.abs()).sum();
            row[i] > off
        })
    }

    /// `‖Aμ − o‖∞`
    pub fn residual(&self, mu: &[f64], rhs: &[f64]) -> f64 {
        let r = &self.matrix * DVector::from_column_slice(mu) - DVector::from_column_slice(rhs);
        r.amax()
    }

    /// Cholesky when symmetric, LU otherwise, followed by one refinement step.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!("rhs of {} for system of {}", rhs.len(), self.dim())));
        }
        let b = DVector::from_column_slice(rhs);
        let solve = |v: &DVector<f64>| -> Option<DVector<f64>> {
            if self.is_symmetric(0.0) {
                self.matrix.clone().cholesky().map(|c| c.solve(v))
            } else {
                self.matrix.clone().lu().solve(v)
            }
        };
        let mut x = solve(&b).ok_or_else(|| Error::InvalidValue("energy system is singular".into()))?;
        let r = &b - &self.matrix * &x;
        if let Some(dx) = solve(&r) {
            x += dx;
        }
        Ok(x.as_slice().to_vec())
    }
}

fn check_dim(n: usize) -> Result<()> {
    if n > MAX_DENSE_DIM {
        Err(Error::TooLarge { n, limit: MAX_DENSE_DIM })
    } else {
        Ok(())
    }
}

/// Adds `2β(D − K_offdiag)` to `a`.
fn add_laplacian(a: &mut DMatrix<f64>, k: &DMatrix<f64>, beta: f64) {
    let n = k.nrows();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                a[(i, i)] += 2.0 * beta * k[(i, j)];
                a[(i, j)] -= 2.0 * beta * k[(i, j)];
            }
        }
    }
}

/// Exact stationary point of a whole model plus the observations it was solved against.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSolution {
    /// μ* for all scales, flattened scale-major.
    pub mu: Vec<f64>,
    /// The right-hand sides: `s` for unified, chained `o` for cascade.
    pub observations: Vec<f64>,
    /// Largest `‖Aμ − o‖∞` over the solved systems.
    pub residual: f64,
}

impl MapSolution {
    pub fn scale(&self, l: usize, n: usize) -> &[f64] {
        &self.mu[l * n..(l + 1) * n]
    }
}

/// Solves the fixed point of the model exactly.
///
/// Unified: one joint solve with `o = s`. Cascade: each scale in dependency
/// order with `o_l = s_l + Σ_src max(μ*_src, 0)`.
pub fn map_solve_exact(problem: &Problem, stack: &SideOutputStack) -> Result<MapSolution> {
    problem.check()?;
    if stack.num_scales() != problem.scales || stack.pixels() != problem.pixels() {
        return Err(Error::DimensionMismatch("side outputs do not match the problem".into()));
    }
    let n = problem.pixels();
    match problem.params.kind() {
        ModelKind::Unified => {
            let system = EnergySystem::joint(problem)?;
            let rhs = stack.flattened();
            let mu = system.solve(&rhs)?;
            let residual = system.residual(&mu, &rhs);
            Ok(MapSolution { mu, observations: rhs, residual })
        }
        ModelKind::Cascade => {
            let mut mu: Vec<f64> = vec![0.0; n * problem.scales];
            let mut obs = vec![0.0; n * problem.scales];
            let mut done = vec![false; problem.scales];
            let mut residual: f64 = 0.0;
            for _ in 0..problem.scales {
                let l = (0..problem.scales)
                    .find(|&l| !done[l] && problem.sources_of(l).all(|s| done[s]))
                    .ok_or_else(|| Error::Structure("scale edges contain a cycle".into()))?;
                let mut o: Vec<f64> = stack.scale(l).values().to_vec();
                for src in problem.sources_of(l) {
                    for (oi, m) in o.iter_mut().zip(&mu[src * n..(src + 1) * n]) {
                        *oi += m.max(0.0);
                    }
                }
                let system = EnergySystem::for_scale(problem, l)?;
                let sol = system.solve(&o)?;
                residual = residual.max(system.residual(&sol, &o));
                mu[l * n..(l + 1) * n].copy_from_slice(&sol);
                obs[l * n..(l + 1) * n].copy_from_slice(&o);
                done[l] = true;
            }
            Ok(MapSolution { mu, observations: obs, residual })
        }
    }
}

/// Energy terms that involve scale `l` as the optimized block: its unary
/// term, its intra-scale pairs (ordered, `i ≠ j`), and for unified models the
/// cross-scale pairs of every edge ending at `l`.
///
/// `d` and `observations` are flattened scale-major over all scales.
pub fn block_energy(problem: &Problem, l: usize, d: &[f64], observations: &[f64]) -> Result<f64> {
    problem.check()?;
    let n = problem.pixels();
    if d.len() != n * problem.scales || observations.len() != d.len() {
        return Err(Error::DimensionMismatch("energy inputs must cover every scale".into()));
    }
    let betas = problem.params.betas_for_scale(l);
    let dl = &d[l * n..(l + 1) * n];
    let ol = &observations[l * n..(l + 1) * n];
    let mut e: f64 = dl.iter().zip(ol).map(|(a, b)| (a - b).powi(2)).sum();
    for (m, k) in problem.kernels(KernelRole::IntraScale) {
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    e += betas[m] * k[(i, j)] * (dl[i] - dl[j]).powi(2);
                }
            }
        }
    }
    if problem.params.kind() == ModelKind::Unified {
        let cross = problem.kernels(KernelRole::CrossScale);
        for src in problem.sources_of(l) {
            let ds = &d[src * n..(src + 1) * n];
            for (m, k) in &cross {
                for i in 0..n {
                    for j in 0..n {
                        e += 2.0 * betas[*m] * k[(i, j)] * (dl[i] - ds[j]).powi(2);
                    }
                }
            }
        }
    }
    Ok(e)
}

/// Sum of [`block_energy`] over all scales.
pub fn energy(problem: &Problem, d: &[f64], observations: &[f64]) -> Result<f64> {
    (0..problem.scales).map(|l| block_energy(problem, l, d, observations)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{gauss_filter_exact, FilterRequest};
    use crate::types::{extract_features, DepthMap, FeatureKind, KernelDesc, RgbImage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_kernel_pair(beta: f64) -> (FeatureStack, KernelSpec, CrfParams) {
        let features = FeatureStack::new(vec![Features::new(2, vec![0.0; 4]).unwrap()]).unwrap();
        let spec = KernelSpec::new(vec![KernelDesc {
            feature: FeatureKind::Spatial { theta_pos: 1.0 },
            role: KernelRole::IntraScale,
        }])
        .unwrap();
        let params = CrfParams::new(ModelKind::Cascade, vec![vec![beta]], vec![1]).unwrap();
        (features, spec, params)
    }

    fn stack_of(values: Vec<Vec<f64>>, w: usize, h: usize) -> SideOutputStack {
        SideOutputStack::new(values.into_iter().map(|v| DepthMap::new(w, h, v).unwrap()).collect()).unwrap()
    }

    struct Instance {
        features: FeatureStack,
        spec: KernelSpec,
        params: CrfParams,
        stack: SideOutputStack,
        edges: Vec<(usize, usize)>,
    }

    impl Instance {
        fn problem(&self) -> Problem<'_> {
            Problem {
                features: &self.features,
                spec: &self.spec,
                params: &self.params,
                scales: self.stack.num_scales(),
                edges: &self.edges,
            }
        }
    }

    fn random_instance(seed: u64, kind: ModelKind, scales: usize, side: usize) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = side * side;
        let img = RgbImage::new(side, side, (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect())
            .unwrap();
        let spec = KernelSpec::for_model(kind, 1.0, 1.5, 0.5).unwrap();
        let features = extract_features(&img, &spec).unwrap();
        let groups = if kind == ModelKind::Unified { 1 } else { scales };
        let betas = (0..groups).map(|_| (0..spec.len()).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let params = CrfParams::new(kind, betas, vec![1; groups]).unwrap();
        let stack = stack_of((0..scales).map(|_| (0..n).map(|_| rng.random_range(-1.0..3.0)).collect()).collect(), side, side);
        let edges = (0..scales.saturating_sub(1)).map(|l| (l, l + 1)).collect();
        Instance { features, spec, params, stack, edges }
    }

    #[test]
    fn finite_difference_of_square() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], DEFAULT_FD_STEP);
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn finite_difference_of_constant_is_zero() {
        assert_eq!(finite_diff_grad(|_| 4.2, &[1.0, -2.0, 0.5], 1e-3), vec![0.0; 3]);
    }

    #[test]
    fn energy_vanishes_at_constant_observation() {
        let (features, spec, params) = one_kernel_pair(0.7);
        let p = Problem { features: &features, spec: &spec, params: &params, scales: 1, edges: &[] };
        assert_eq!(energy(&p, &[2.0, 2.0], &[2.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn energy_without_coupling_is_squared_distance() {
        let (features, spec, params) = one_kernel_pair(0.0);
        let p = Problem { features: &features, spec: &spec, params: &params, scales: 1, edges: &[] };
        assert!((energy(&p, &[1.0, -1.0], &[0.5, 0.5]).unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn two_pixel_minimizer_and_energy() {
        let (features, spec, params) = one_kernel_pair(0.5);
        let p = Problem { features: &features, spec: &spec, params: &params, scales: 1, edges: &[] };
        let stack = stack_of(vec![vec![0.0, 1.0]], 2, 1);
        let sol = map_solve_exact(&p, &stack).unwrap();
        assert!((sol.mu[0] - 1.0 / 3.0).abs() < 1e-14);
        assert!((sol.mu[1] - 2.0 / 3.0).abs() < 1e-14);
        // (1/3)² + (1/3)² from the unary terms, 0.5·(1/3)² for each ordered pair
        let e = energy(&p, &sol.mu, &sol.observations).unwrap();
        assert!((e - 1.0 / 3.0).abs() < 1e-14, "{e}");
    }

    #[test]
    fn zero_coupling_returns_observations() {
        let mut inst = random_instance(5, ModelKind::Unified, 3, 4);
        inst.params = CrfParams::uniform(ModelKind::Unified, 3, 4, 0.0, 1).unwrap();
        let sol = map_solve_exact(&inst.problem(), &inst.stack).unwrap();
        assert_eq!(sol.mu, inst.stack.flattened());
    }

    #[test]
    fn single_pixel_returns_observation() {
        let img = RgbImage::filled(1, 1, [0.3, 0.3, 0.3]).unwrap();
        let spec = KernelSpec::unified(1.0, 1.0, 1.0).unwrap();
        let features = extract_features(&img, &spec).unwrap();
        let params = CrfParams::uniform(ModelKind::Unified, 1, 4, 0.9, 1).unwrap();
        let p = Problem { features: &features, spec: &spec, params: &params, scales: 1, edges: &[] };
        let sol = map_solve_exact(&p, &stack_of(vec![vec![1.7]], 1, 1)).unwrap();
        assert_eq!(sol.mu, vec![1.7]);
    }

    #[test]
    fn single_scale_system_is_spd_and_dominant() {
        let inst = random_instance(11, ModelKind::Cascade, 2, 5);
        let sys = EnergySystem::for_scale(&inst.problem(), 1).unwrap();
        assert!(sys.is_symmetric(0.0));
        assert!(sys.is_strictly_diagonally_dominant());
        assert!(sys.matrix().clone().cholesky().is_some());
    }

    #[test]
    fn system_matches_filter_applied_to_basis_vectors() {
        let inst = random_instance(3, ModelKind::Cascade, 1, 4);
        let p = inst.problem();
        let sys = EnergySystem::for_scale(&p, 0).unwrap();
        let n = p.pixels();
        let betas = p.params.betas_for_scale(0);
        let ones = vec![1.0; n];
        let sums: Vec<Vec<f64>> = (0..2)
            .map(|m| gauss_filter_exact(&FilterRequest::new(&ones, p.features.kernel(m), true)).unwrap())
            .collect();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let cols: Vec<Vec<f64>> = (0..2)
                .map(|m| gauss_filter_exact(&FilterRequest::new(&e, p.features.kernel(m), true)).unwrap())
                .collect();
            for i in 0..n {
                let mut expect = if i == j { 1.0 } else { 0.0 };
                for m in 0..2 {
                    if i == j {
                        expect += 2.0 * betas[m] * sums[m][i];
                    }
                    expect -= 2.0 * betas[m] * cols[m][i];
                }
                assert!((sys.matrix()[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn solutions_have_tiny_residual() {
        for (seed, kind) in [(1, ModelKind::Unified), (2, ModelKind::Cascade)] {
            let inst = random_instance(seed, kind, 3, 6);
            let sol = map_solve_exact(&inst.problem(), &inst.stack).unwrap();
            assert!(sol.residual <= 1e-10, "{kind:?}: {}", sol.residual);
        }
    }

    #[test]
    fn cascade_chains_rectified_estimates() {
        let inst = random_instance(8, ModelKind::Cascade, 2, 4);
        let sol = map_solve_exact(&inst.problem(), &inst.stack).unwrap();
        let n = 16;
        for i in 0..n {
            let expect = inst.stack.scale(1).values()[i] + sol.mu[i].max(0.0);
            assert_eq!(sol.observations[n + i], expect);
        }
    }

    #[test]
    fn oversized_systems_are_rejected() {
        let features = FeatureStack::new(vec![Features::new(1, vec![0.0; MAX_DENSE_DIM + 1]).unwrap()]).unwrap();
        let (_, spec, params) = one_kernel_pair(0.1);
        let p = Problem { features: &features, spec: &spec, params: &params, scales: 1, edges: &[] };
        assert!(matches!(EnergySystem::for_scale(&p, 0), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn cycles_are_rejected_for_cascade() {
        let mut inst = random_instance(4, ModelKind::Cascade, 2, 3);
        inst.edges = vec![(0, 1), (1, 0)];
        assert!(matches!(map_solve_exact(&inst.problem(), &inst.stack), Err(Error::Structure(_))));
    }

    fn perturbation_check(inst: &Instance, seed: u64, per_block: bool) {
        let p = inst.problem();
        let sol = map_solve_exact(&p, &inst.stack).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = p.pixels();
        for trial in 0..100 {
            let l = trial % p.scales;
            let mut d = sol.mu.clone();
            let range = if per_block { l * n..(l + 1) * n } else { 0..d.len() };
            let scale = 10f64.powi(-(trial as i32 % 4));
            for v in &mut d[range] {
                *v += scale * rng.random_range(-1.0..1.0);
            }
            let (e0, e1) = if per_block {
                (
                    block_energy(&p, l, &sol.mu, &sol.observations).unwrap(),
                    block_energy(&p, l, &d, &sol.observations).unwrap(),
                )
            } else {
                (energy(&p, &sol.mu, &sol.observations).unwrap(), energy(&p, &d, &sol.observations).unwrap())
            };
            assert!(e0 <= e1 + 1e-12 * e0.abs().max(1.0), "trial {trial}: {e0} > {e1}");
        }
    }

    #[test]
    fn solution_minimizes_energy() {
        perturbation_check(&random_instance(21, ModelKind::Cascade, 2, 5), 1, false);
        perturbation_check(&random_instance(22, ModelKind::Unified, 1, 5), 2, false);
        // each unified scale is optimal given the others
        perturbation_check(&random_instance(23, ModelKind::Unified, 3, 5), 3, true);
    }
}
