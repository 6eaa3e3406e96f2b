mod common;

use common::*;
use dcac_core::dcac::{cost_model, flop_terms, Dcac, DcacConfig};
use dcac_core::instrument;
use dcac_core::tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn forward(d: &Dcac<f64>, x: &Tensor<f64>, training: bool) -> Tensor<f64> {
    let g = Graph::new();
    let y = d.forward(&g, g.constant(x.clone()), training).unwrap();
    (*y.value()).clone()
}

#[test]
fn forward_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for _ in 0..60 {
        let (d, x) = random_dcac(&mut rng);
        let y = forward(&d, &x, false);
        let expect = naive_dcac(&d, &x);
        assert_eq!(y.shape(), expect.shape());
        assert!(y.max_abs_diff(&expect) < 1e-10, "{:?}: {}", d.cfg, y.max_abs_diff(&expect));
    }
}

#[test]
fn generated_kernels_match_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    for _ in 0..30 {
        let (d, x) = random_dcac(&mut rng);
        let g = Graph::new();
        let w = d.cakg(&g, g.constant(x.clone()), false).unwrap();
        let expect = naive_dynamic_kernels(&d, &x);
        let diff = w.value().data().iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }
}

#[test]
fn residual_at_initialization_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..20 {
        let c = rng.gen_range(1..=8);
        let d = Dcac::<f64>::new("r", DcacConfig { reduction: 1, ..DcacConfig::depthwise(c, 3) }, &mut rng).unwrap();
        let x = Tensor::uniform(&[c, rng.gen_range(2..=6), 3, 3], -2.0, 2.0, &mut rng);
        for training in [false, true] {
            let g = Graph::new();
            let y = d.residual(&g, g.constant(x.clone()), training).unwrap();
            let same = y.value().data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same);
        }
    }
}

#[test]
fn zero_context_projection_leaves_static_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(203);
    for _ in 0..20 {
        let (d, x) = random_dcac(&mut rng);
        d.conv2.update(|w| w.fill(0.0));
        let y = forward(&d, &x, false);
        let expect = naive_conv(&x, None, Some(&d.static_weight.snapshot()), d.cfg.c_out, d.cfg.groups, d.cfg.kernel);
        assert!(y.max_abs_diff(&expect) < 1e-12);
    }
}

#[test]
fn instrumented_terms_match_cost_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(204);
    for _ in 0..30 {
        let (d, x) = random_dcac(&mut rng);
        let [_, t, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let (_, counted) = instrument::count(|| forward(&d, &x, false));
        let model = flop_terms(&d.cfg, t, h, w);
        assert_eq!(counted.len(), model.len());
        for (k, v) in &model {
            assert_eq!(counted.get(k), Some(v), "term {k} for {:?}", d.cfg);
        }
        let report = cost_model(&d.cfg, t, h, w);
        assert_eq!(report.flops_total, counted.values().sum::<u64>());
        let params: u64 = d.named_params().iter().filter(|p| !p.is_buffer()).map(|p| p.numel() as u64).sum();
        assert_eq!(report.params_static + report.params_dynamic, params);
    }
}

#[test]
fn flop_approximation_tracks_exact_in_dominance_regime() {
    for c in [64, 128, 256] {
        for kt in [1, 3, 5, 7] {
            for n in [1, 4, 6, 8] {
                for hw in [1, 2, 4, 7, 14] {
                    let cfg = DcacConfig { experts: n, ..DcacConfig::depthwise(c, kt) };
                    if c < 8 * n.max(kt) {
                        continue;
                    }
                    let r = cost_model(&cfg, 100, hw, hw);
                    let f = (r.flops_approx - r.flops_total as f64).abs() / r.flops_total as f64;
                    assert!(f < 0.15, "c={c} kt={kt} n={n} hw={hw}: {f:.3}");
                }
            }
        }
    }
}

#[test]
fn gradients_match_finite_differences_in_training_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(205);
    for _ in 0..6 {
        let (d, x) = random_dcac(&mut rng);
        if x.shape()[1] < 2 {
            continue;
        }
        let probe = Tensor::uniform(&[d.cfg.c_out, x.shape()[1], x.shape()[2], x.shape()[3]], -1.0, 1.0, &mut rng);
        let loss = |xv: &Tensor<f64>| -> f64 {
            let g = Graph::new();
            let y = d.residual_or_forward(&g, g.constant(xv.clone()));
            y.value().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let g = Graph::new();
        let xi = g.input(x.clone());
        let y = d.residual_or_forward(&g, xi);
        let l = y.mul(g.constant(probe.clone())).unwrap().sum();
        g.backward(l).unwrap();
        let gx = xi.grad().unwrap();
        let mut f = |v: &[f64]| loss(&Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap());
        for i in 0..x.numel().min(12) {
            let n = central_diff(&mut f, x.data(), i, 1e-5);
            assert!(rel_err(gx.data()[i], n) < 1e-5 || (gx.data()[i] - n).abs() < 1e-8, "{} vs {n}", gx.data()[i]);
        }
        for p in d.named_params().into_iter().filter(|p| p.is_trainable()) {
            let grad = p.grad();
            let w0 = p.snapshot();
            for _ in 0..3 {
                let i = rng.gen_range(0..w0.numel());
                let mut fw = |v: &[f64]| {
                    p.set_value(Tensor::new(w0.shape().to_vec(), v.to_vec()).unwrap());
                    let r = loss(&x);
                    p.set_value(w0.clone());
                    r
                };
                let n = central_diff(&mut fw, w0.data(), i, 1e-5);
                let a = grad.data()[i];
                assert!(rel_err(a, n) < 1e-4 || (a - n).abs() < 1e-8, "{}[{i}]: {a} vs {n}", p.name());
            }
        }
        for p in d.named_params() {
            p.zero_grad();
        }
    }
}

#[test]
fn attention_factors_are_normalized_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(206);
    for _ in 0..20 {
        let (d, x) = random_dcac(&mut rng);
        let g = Graph::new();
        let (a, _) = d.intra_frame_attention(&g, g.constant(x.clone()), false).unwrap();
        for row in a.alpha_w.value().data().chunks(d.cfg.experts) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        for f in [a.alpha_f, a.alpha_c, a.alpha_t] {
            assert!(f.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}

#[test]
fn context_kernels_shift_with_the_input_on_interior_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(207);
    for _ in 0..10 {
        let cfg = DcacConfig { c_in: 4, c_out: 4, groups: 2, kernel: [3, 1, 1], experts: 2, reduction: 2, context_kernel: 3 };
        let d = Dcac::<f64>::new("s", cfg, &mut rng).unwrap();
        let (t, hw) = (10, 2);
        // support on frames 3..6, so both the input and its one-frame shift stay clear of the borders
        let mut x = Tensor::zeros(&[4, t, hw, hw]);
        for c in 0..4 {
            for ti in 3..6 {
                for k in 0..hw * hw {
                    x.data_mut()[(c * t + ti) * hw * hw + k] = rng.gen_range(-1.0..1.0);
                }
            }
        }
        let shifted = {
            let mut s = Tensor::zeros(&[4, t, hw, hw]);
            for c in 0..4 {
                for ti in 1..t {
                    for k in 0..hw * hw {
                        s.data_mut()[(c * t + ti) * hw * hw + k] = x.data()[(c * t + ti - 1) * hw * hw + k];
                    }
                }
            }
            s
        };
        let kernels = |v: &Tensor<f64>| {
            let g = Graph::new();
            (*d.inter_frame_context(&g, g.constant(v.clone())).unwrap().value()).clone()
        };
        let (a, b) = (kernels(&x), kernels(&shifted));
        let per = a.numel() / t;
        for ti in 1..t - 1 {
            let (ra, rb) = (&a.data()[(ti - 1) * per..ti * per], &b.data()[ti * per..(ti + 1) * per]);
            assert!(ra.iter().zip(rb).all(|(p, q)| (p - q).abs() < 1e-12), "frame {ti}");
        }
    }
}

trait ResidualOrForward {
    fn residual_or_forward<'g>(&self, g: &'g Graph<f64>, x: dcac_core::tensor::Var<'g, f64>) -> dcac_core::tensor::Var<'g, f64>;
}

impl ResidualOrForward for Dcac<f64> {
    /// Training-mode output: residual form when channel counts allow it.
    fn residual_or_forward<'g>(&self, g: &'g Graph<f64>, x: dcac_core::tensor::Var<'g, f64>) -> dcac_core::tensor::Var<'g, f64> {
        if self.cfg.c_in == self.cfg.c_out {
            self.residual(g, x, true).unwrap()
        } else {
            self.forward(g, x, true).unwrap()
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flops_strictly_increase_with_temporal_kernel(c in 1usize..64, t in 1usize..50, hw in 1usize..9, half in 0usize..6) {
        let kt = 2 * half + 1;
        let a = cost_model(&DcacConfig { reduction: 1, ..DcacConfig::depthwise(c, kt) }, t, hw, hw);
        let b = cost_model(&DcacConfig { reduction: 1, ..DcacConfig::depthwise(c, kt + 2) }, t, hw, hw);
        prop_assert!(b.flops_total > a.flops_total);
        prop_assert!(b.params_static + b.params_dynamic > a.params_static + a.params_dynamic);
    }

    #[test]
    fn output_is_linear_in_static_weight(seed in 0u64..1000, s in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, x) = random_dcac(&mut rng);
        let y0 = forward(&d, &x, false);
        let w = d.static_weight.snapshot();
        d.static_weight.set_value(w.map(|v| v * (1.0 + s)));
        let y1 = forward(&d, &x, false);
        let delta = naive_conv(&x, None, Some(&w.map(|v| v * s)), d.cfg.c_out, d.cfg.groups, d.cfg.kernel);
        let diff = y1.data().iter().zip(y0.data()).zip(delta.data()).map(|((a, b), c)| (a - b - c).abs()).fold(0.0, f64::max);
        prop_assert!(diff < 1e-10);
    }
}
