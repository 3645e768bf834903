use mlctx_core::arch::{build, ArchPreset};
use mlctx_core::nn::{
    grad_check, grad_check_with, init_params, Dims, GradCheckOptions, GraphBuilder, InitPolicy, LayerKind, LrnSpec,
    NetworkGraph,
};
use mlctx_core::tensor::{
    conv2d_backward, conv2d_forward, maxpool2d, maxpool2d_backward, ConvSpec, PoolSpec,
};
use mlctx_core::{Family, Scale, Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// data -> conv -> `kind` -> fc -> softmax, so the kind's backward is
/// exercised through the parameter gradients of both neighbours.
fn sandwich(kind: LayerKind) -> NetworkGraph {
    let mut b = GraphBuilder::new(Dims::new(3, 6, 6));
    b.add("conv", LayerKind::Conv(ConvSpec::new(6, 3, 1, 1)), &["data"]).unwrap();
    b.add("mid", kind, &["conv"]).unwrap();
    b.add("fc", LayerKind::Fc { out: 4 }, &["mid"]).unwrap();
    b.add("prob", LayerKind::SoftmaxXent, &["fc"]).unwrap();
    b.finish().unwrap()
}

fn check(graph: &NetworkGraph, seed: u64) -> f64 {
    let params = init_params::<f64>(graph, InitPolicy::Normalized, seed).unwrap();
    let d = graph.input_dims();
    let input = random(Shape::new(3, d.c, d.h, d.w).unwrap(), seed + 100);
    let classes = graph.num_classes().unwrap();
    let labels: Vec<usize> = (0..3).map(|i| (i * 7 + 1) % classes).collect();
    grad_check(graph, &params, &input, &labels, 1e-5).unwrap()
}

#[test]
fn every_layer_kind_passes() {
    let kinds = [
        LayerKind::Identity,
        LayerKind::Relu,
        LayerKind::Tanh,
        LayerKind::Lrn(LrnSpec::default()),
        LayerKind::Lrn(LrnSpec { size: 3, alpha: 0.5, beta: 0.75, k: 1.0 }),
        LayerKind::MaxPool(PoolSpec::new(2, 2)),
        LayerKind::MaxPool(PoolSpec::padded(3, 1, 1)),
        LayerKind::AvgPoolGlobal,
        LayerKind::Dropout { keep: 0.5 },
        LayerKind::L2Norm,
        LayerKind::Conv(ConvSpec::new(5, 3, 2, 1)),
        LayerKind::Fc { out: 7 },
    ];
    for kind in kinds {
        let name = kind.name();
        let err = check(&sandwich(kind), 3);
        assert!(err < 1e-5, "{name}: {err}");
    }
}

#[test]
fn concat_with_two_branches_passes() {
    let mut b = GraphBuilder::new(Dims::new(2, 5, 5));
    b.add("a", LayerKind::Conv(ConvSpec::new(3, 1, 1, 0)), &["data"]).unwrap();
    b.add("b", LayerKind::Conv(ConvSpec::new(4, 3, 1, 1)), &["data"]).unwrap();
    b.add("bt", LayerKind::Tanh, &["b"]).unwrap();
    b.add("cat", LayerKind::Concat, &["a", "bt", "a"]).unwrap();
    b.add("fc", LayerKind::Fc { out: 3 }, &["cat"]).unwrap();
    b.add("prob", LayerKind::SoftmaxXent, &["fc"]).unwrap();
    let err = check(&b.finish().unwrap(), 9);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn two_layer_fc_net() {
    let mut b = GraphBuilder::new(Dims::flat(6));
    b.add("fc1", LayerKind::Fc { out: 5 }, &["data"]).unwrap();
    b.add("r", LayerKind::Relu, &["fc1"]).unwrap();
    b.add("fc2", LayerKind::Fc { out: 3 }, &["r"]).unwrap();
    b.add("prob", LayerKind::SoftmaxXent, &["fc2"]).unwrap();
    let g = b.finish().unwrap();
    let params = init_params::<f64>(&g, InitPolicy::Normalized, 2).unwrap();
    let x = random(Shape::new(4, 6, 1, 1).unwrap(), 1);
    let err = grad_check(&g, &params, &x, &[0, 1, 2, 1], 1e-5).unwrap();
    assert!(err < 1e-6, "{err}");
}

fn mini(family: Family) -> NetworkGraph {
    let preset = ArchPreset::new(family, Scale::Mini, true)
        .with_input(3, 16, 16)
        .with_aux_heads(family == Family::Inception);
    build(&preset).unwrap()
}

#[test]
fn mini_networks_pass() {
    for family in [Family::AlexNet, Family::Inception] {
        let g = mini(family);
        let params = init_params::<f64>(&g, InitPolicy::Normalized, 5).unwrap();
        let x = random(Shape::new(2, 3, 16, 16).unwrap(), 8);
        let opts = GradCheckOptions { max_checks: 2_000, ..Default::default() };
        let r = grad_check_with(&g, &params, &x, &[3, 8], &opts).unwrap();
        assert!(r.max_rel_error < 1e-5, "{family:?}: {} at {}", r.max_rel_error, r.worst);
        assert!(r.checked >= 2_000);
        assert!(r.skipped_kinks * 50 < r.checked, "{} kink crossings", r.skipped_kinks);
    }
}

#[test]
fn rejects_nonpositive_step() {
    let g = sandwich(LayerKind::Relu);
    let params = init_params::<f64>(&g, InitPolicy::Normalized, 1).unwrap();
    let x = random(Shape::new(1, 3, 6, 6).unwrap(), 1);
    assert!(grad_check(&g, &params, &x, &[0], 0.0).is_err());
}

// Kernel-level input gradients against central differences of a random
// linear functional of the output.

fn probe_loss(out: &Tensor<f64>, probe: &[f64]) -> f64 {
    out.data().iter().zip(probe).map(|(a, b)| a * b).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_input_and_weight_grads(
        c in 1usize..4, h in 3usize..7, w in 3usize..7, oc in 1usize..4,
        k in 1usize..4, stride in 1usize..3, pad in 0usize..2, seed in 0u64..1000,
    ) {
        prop_assume!(k <= h + 2 * pad && k <= w + 2 * pad);
        let spec = ConvSpec::new(oc, k, stride, pad);
        let x = random(Shape::new(2, c, h, w).unwrap(), seed);
        let wt = random(spec.weight_shape(c).unwrap(), seed + 1);
        let bias = vec![0.1; oc];
        let y = conv2d_forward(&x, &wt, &bias, &spec).unwrap();
        let probe = random(y.shape(), seed + 2).into_vec();
        let gy = Tensor::from_vec(y.shape(), probe.clone()).unwrap();
        let g = conv2d_backward(&x, &wt, &gy, &spec).unwrap();
        let gx = g.input.unwrap();
        let eps = 1e-6;
        for i in (0..x.len()).step_by(3) {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let num = (probe_loss(&conv2d_forward(&xp, &wt, &bias, &spec).unwrap(), &probe)
                - probe_loss(&conv2d_forward(&xm, &wt, &bias, &spec).unwrap(), &probe)) / (2.0 * eps);
            prop_assert!((num - gx.data()[i]).abs() <= 1e-6 * num.abs().max(1.0));
        }
        for i in 0..wt.len() {
            let mut wp = wt.clone();
            wp.data_mut()[i] += eps;
            let mut wm = wt.clone();
            wm.data_mut()[i] -= eps;
            let num = (probe_loss(&conv2d_forward(&x, &wp, &bias, &spec).unwrap(), &probe)
                - probe_loss(&conv2d_forward(&x, &wm, &bias, &spec).unwrap(), &probe)) / (2.0 * eps);
            prop_assert!((num - g.weight.data()[i]).abs() <= 1e-6 * num.abs().max(1.0));
        }
    }

    #[test]
    fn conv_grads_single_precision(seed in 0u64..1000) {
        let spec = ConvSpec::new(3, 3, 1, 1);
        let x: Tensor<f32> = random(Shape::new(1, 2, 5, 5).unwrap(), seed).convert();
        let wt: Tensor<f32> = random(spec.weight_shape(2).unwrap(), seed + 1).convert();
        let y = conv2d_forward(&x, &wt, &[0.0; 3], &spec).unwrap();
        let probe: Vec<f64> = random(y.shape(), seed + 2).into_vec();
        let gy = Tensor::<f64>::from_vec(y.shape(), probe.clone()).unwrap().convert::<f32>();
        let g = conv2d_backward(&x, &wt, &gy, &spec).unwrap();
        let eps = 1e-2f32;
        let f = |t: &Tensor<f32>| probe_loss(&conv2d_forward(&x, t, &[0.0; 3], &spec).unwrap().convert(), &probe);
        for i in 0..wt.len() {
            let mut wp = wt.clone();
            wp.data_mut()[i] += eps;
            let mut wm = wt.clone();
            wm.data_mut()[i] -= eps;
            let num = (f(&wp) - f(&wm)) / (2.0 * eps as f64);
            let a = g.weight.data()[i] as f64;
            prop_assert!((num - a).abs() <= 1e-2 * num.abs().max(1.0), "{num} vs {a}");
        }
    }

    #[test]
    fn maxpool_gradient_routes_to_argmax(c in 1usize..3, h in 2usize..8, w in 2usize..8, seed in 0u64..1000) {
        let x = random(Shape::new(1, c, h, w).unwrap(), seed);
        let (y, idx) = maxpool2d(&x, 2, 2).unwrap();
        let probe = random(y.shape(), seed + 1).into_vec();
        let gx = maxpool2d_backward(&Tensor::from_vec(y.shape(), probe.clone()).unwrap(), &idx).unwrap();
        let eps = 1e-7;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let num = (probe_loss(&maxpool2d(&xp, 2, 2).unwrap().0, &probe)
                - probe_loss(&maxpool2d(&xm, 2, 2).unwrap().0, &probe)) / (2.0 * eps);
            prop_assert!((num - gx.data()[i]).abs() < 1e-6);
        }
        prop_assert!((gx.sum() - probe.iter().sum::<f64>()).abs() < 1e-9);
    }
}
