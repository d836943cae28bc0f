//! Central finite differences against the reverse-mode gradients.

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::rng::seeded;

fn objective(net: &Network, x: &Array2<f64>, cot: &Array2<f64>, mode: Mode) -> f64 {
    let mut n = net.clone();
    let y = n.forward(x.view(), mode).unwrap();
    (&y * cot).sum()
}

/// Largest `|g - fd| / max(1e-3, |g|, |fd|)` over all parameters.
fn fd_error(net: &Network, x: &Array2<f64>, cot: &Array2<f64>, mode: Mode) -> f64 {
    let mut rec = net.clone();
    let (_, tape) = rec.forward_recorded(x.view(), mode).unwrap();
    let grads = net.backward(&tape, cot.view()).unwrap();
    let base = net.params();
    // fourth-order central stencil; keeps truncation negligible at a step where roundoff is ~1e-11
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut probe = net.clone();
        let mut at = |shift: f64| {
            let mut p = base.clone();
            p[i] = base[i] + shift;
            probe.set_params(&p).unwrap();
            objective(&probe, x, cot, mode)
        };
        let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
        let err = (grads[i] - fd).abs() / grads[i].abs().max(fd.abs()).max(1e-3);
        worst = worst.max(err);
    }
    worst
}

fn random_setup(spec: &MlpSpec, rows: usize, seed: u64) -> (Network, Array2<f64>, Array2<f64>) {
    let mut rng = seeded(seed);
    let mut net = Network::mlp(spec, &mut rng).unwrap();
    // move batch-norm parameters and running statistics away from their identity init
    net.visit_params_mut(|p| *p += rng.gen_range(-0.2..0.2));
    let x = Array2::from_shape_simple_fn((rows, spec.input), || rng.gen_range(-2.0..2.0));
    let warm = Array2::from_shape_simple_fn((rows, spec.input), || rng.gen_range(-2.0..2.0));
    net.forward(warm.view(), Mode::Train).unwrap();
    let cot = Array2::from_shape_simple_fn((rows, spec.output), || rng.gen_range(-1.0..1.0));
    (net, x, cot)
}

fn arch(input: usize, width: usize, output: usize, act: Activation, bn: bool) -> MlpSpec {
    MlpSpec {
        activation: act,
        batch_norm: bn,
        ..MlpSpec::new(input, width, 3, output)
    }
}

#[test]
fn dual_and_policy_heads_match_finite_differences() {
    let d = 2;
    let j = 3;
    let archs = [
        arch(1 + d, 20 + d, d, Activation::Relu, true),
        arch(1 + d, 20 + d, d, Activation::Tanh, true),
        arch(1 + d + j, 20 + d, j, Activation::Relu, true),
        arch(1 + d + j, 20 + d, j, Activation::Tanh, false),
    ];
    for (a, spec) in archs.iter().enumerate() {
        for draw in 0..3 {
            let (net, x, cot) = random_setup(spec, 24, (a * 10 + draw) as u64);
            for mode in [Mode::Train, Mode::Eval] {
                let err = fd_error(&net, &x, &cot, mode);
                assert!(err < 1e-5, "arch {a} draw {draw} {mode:?}: {err}");
            }
        }
    }
}

#[test]
fn dead_relu_blocks_gradient() {
    let mut net = Network::from_layers(
        None,
        vec![
            Layer {
                weight: ndarray::array![[1.0, -1.0]],
                bias: ndarray::array![0.0, 0.0],
                norm: None,
                activation: Activation::Relu,
            },
            Layer {
                weight: ndarray::array![[1.0], [1.0]],
                bias: ndarray::array![0.0],
                norm: None,
                activation: Activation::Identity,
            },
        ],
    )
    .unwrap();
    let (_, tape) = net.forward_recorded(ndarray::array![[2.0]].view(), Mode::Eval).unwrap();
    let g = net.backward(&tape, ndarray::array![[1.0]].view()).unwrap();
    // second hidden unit is dead: its weight and bias receive nothing
    assert_eq!(g[1], 0.0);
    assert_eq!(g[3], 0.0);
    assert_eq!(g[0], 2.0);
    assert_eq!(g[2], 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn random_architectures_match_finite_differences(
        input in 1usize..5,
        width in 1usize..8,
        depth in 0usize..4,
        output in 1usize..4,
        tanh in any::<bool>(),
        bn in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let spec = MlpSpec {
            activation: if tanh { Activation::Tanh } else { Activation::Relu },
            batch_norm: bn,
            ..MlpSpec::new(input, width, depth, output)
        };
        let (net, x, cot) = random_setup(&spec, 16, seed);
        for mode in [Mode::Train, Mode::Eval] {
            let err = fd_error(&net, &x, &cot, mode);
            prop_assert!(err < 1e-5, "{:?}: {}", mode, err);
        }
    }
}
