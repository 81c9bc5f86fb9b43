use crffuse_core::config::Config;
use crffuse_core::eval::{synth_scene, synth_side_outputs, SynthSpec};
use crffuse_core::filter::FilterBackend;
use crffuse_core::fusion::{build_passing_structure, train, Dataset, FusionModel, Scene, StructureKind, TrainConfig};
use crffuse_core::oracle::{map_solve_exact, Problem};
use crffuse_core::{extract_features, CrfParams, DepthMap, ModelKind, SideOutputStack};
use proptest::prelude::*;

fn scene(side: usize, seed: u64) -> Scene {
    let spec = SynthSpec { width: side, height: side, seed, ..SynthSpec::default() };
    let (image, gt) = synth_scene(&spec).unwrap();
    let stack = synth_side_outputs(&gt, &spec).unwrap();
    Scene::new(image, stack, gt).unwrap()
}

fn model(kind: ModelKind, scales: usize, beta: f64, iterations: usize, backend: FilterBackend) -> FusionModel {
    let mut cfg = Config::new(kind);
    cfg.scales = scales;
    let spec = cfg.kernel_spec().unwrap();
    let params = CrfParams::uniform(kind, scales, spec.len(), beta, iterations).unwrap();
    FusionModel::new(params, spec, build_passing_structure(StructureKind::BottomUp, scales).unwrap(), backend).unwrap()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

#[test]
fn lattice_backend_moves_one_update_by_at_most_ten_percent() {
    let sc = scene(24, 7);
    for kind in [ModelKind::Unified, ModelKind::Cascade] {
        let exact = model(kind, 3, 0.5, 1, FilterBackend::Exact);
        let lattice = model(kind, 3, 0.5, 1, FilterBackend::Lattice);
        let a = exact.forward(&sc.stack, &exact.prepare(&sc.image).unwrap()).unwrap();
        let b = lattice.forward(&sc.stack, &lattice.prepare(&sc.image).unwrap()).unwrap();
        for (ma, mb) in a.mu().iter().zip(b.mu()) {
            let e = rel_l2(mb, ma);
            assert!(e <= 0.10, "{kind:?}: {e}");
        }
    }
}

#[test]
fn long_unified_run_reaches_the_exact_fixed_point() {
    let sc = scene(6, 3);
    let m = model(ModelKind::Unified, 3, 0.3, 300, FilterBackend::Exact);
    let kernels = m.prepare(&sc.image).unwrap();
    let trace = m.forward(&sc.stack, &kernels).unwrap();

    let features = extract_features(&sc.image, m.spec()).unwrap();
    let problem = Problem {
        features: &features,
        spec: m.spec(),
        params: m.params(),
        scales: 3,
        edges: m.structure().edges(),
    };
    let exact = map_solve_exact(&problem, &sc.stack).unwrap();
    for l in 0..3 {
        let worst = trace.mu()[l].iter().zip(exact.scale(l, 36)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "scale {l}: {worst}");
    }
}

#[test]
fn training_lowers_the_dataset_loss() {
    let data = Dataset::new((0..4).map(|k| scene(10, 100 + k)).collect());
    let start = model(ModelKind::Cascade, 3, 0.05, 3, FilterBackend::Exact);
    let hyper = TrainConfig { epochs: 3, batch_size: 2, ..TrainConfig::default() };
    let report = train(&data, &start, &hyper, 1).unwrap();
    assert!(report.final_loss < report.initial_loss, "{} -> {}", report.initial_loss, report.final_loss);
    assert_eq!(report.history.len(), 6);
    assert_eq!(train(&data, &start, &hyper, 1).unwrap().params, report.params);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zero_weights_keep_every_scale_at_its_observation(
        values in prop::collection::vec(0.1f64..20.0, 3 * 25),
        cascade in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let kind = if cascade { ModelKind::Cascade } else { ModelKind::Unified };
        let maps: Vec<DepthMap> = values.chunks(25).map(|c| DepthMap::new(5, 5, c.to_vec()).unwrap()).collect();
        let stack = SideOutputStack::new(maps).unwrap();
        let image = scene(5, seed).image;
        let m = model(kind, 3, 0.0, 4, FilterBackend::Exact);
        let trace = m.forward(&stack, &m.prepare(&image).unwrap()).unwrap();
        // bottom-up with nonnegative inputs: each cascade stage adds the one below
        let mut expected: Vec<Vec<f64>> = Vec::new();
        for (l, side) in stack.scales().iter().enumerate() {
            let o: Vec<f64> = match (cascade, l) {
                (true, 1..) => side.values().iter().zip(&expected[l - 1]).map(|(a, b)| a + b).collect(),
                _ => side.values().to_vec(),
            };
            expected.push(o);
        }
        prop_assert_eq!(trace.observations(), &expected[..]);
        prop_assert_eq!(trace.mu(), &expected[..]);
    }
}
