//! Algebraic invariants of the tensor and scan operations.

mod common;

use common::{rng, uniform};
use imamba_core::config::ModelConfig;
use imamba_core::model::Model;
use imamba_core::ops::{self, ConvKernel};
use imamba_core::ssm::{discretize, scan_recurrent, SsmParams};
use imamba_core::{Fraction, Tensor};
use proptest::prelude::*;

fn tensor(dims: &[usize], seed: u64) -> Tensor<f64> {
    uniform(&mut rng(seed), dims, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn conv_output_extents(
        h in 1usize..20, w in 1usize..20,
        kh in 1usize..8, kw in 1usize..8,
        sh in 1usize..4, sw in 1usize..4,
        ph in 0usize..4, pw in 0usize..4,
        c_in in 1usize..4, c_out in 1usize..4,
    ) {
        let x = Tensor::<f32>::zeros(&[1, c_in, h, w]).unwrap();
        let k = ConvKernel::dense(Tensor::zeros(&[c_out, c_in, kh, kw]).unwrap(), (sh, sw), (ph, pw));
        let result = ops::conv2d(&x, &k);
        if kh > h + 2 * ph || kw > w + 2 * pw {
            prop_assert!(result.is_err());
        } else {
            let y = result.unwrap();
            prop_assert_eq!(y.dims(), &[1, c_out, (h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn depthwise_channels_are_isolated(c in 2usize..6, h in 1usize..8, w in 1usize..8, k in 0usize..4, seed in any::<u64>()) {
        let kernel = 2 * k + 1;
        let x = tensor(&[1, c, h, w], seed);
        let conv = ConvKernel::depthwise(tensor(&[c, 1, kernel, kernel], seed ^ 1), (k, k));
        let base = ops::conv2d(&x, &conv).unwrap();
        let target = (seed % c as u64) as usize;
        let mut bumped = x.clone();
        for v in &mut bumped.data_mut()[target * h * w..(target + 1) * h * w] {
            *v += 1.5;
        }
        let after = ops::conv2d(&bumped, &conv).unwrap();
        for ch in (0..c).filter(|&ch| ch != target) {
            prop_assert_eq!(base.plane(0, ch).unwrap(), after.plane(0, ch).unwrap());
        }
    }

    #[test]
    fn conv_is_linear(alpha in -2.0f64..2.0, beta in -2.0f64..2.0, seed in any::<u64>()) {
        let x = tensor(&[2, 3, 6, 5], seed);
        let y = tensor(&[2, 3, 6, 5], seed ^ 7);
        let k = ConvKernel::dense(tensor(&[4, 3, 3, 3], seed ^ 9), (1, 2), (1, 1));
        let lhs = ops::conv2d(&x.scale(alpha).add(&y.scale(beta)).unwrap(), &k).unwrap();
        let rhs = ops::conv2d(&x, &k).unwrap().scale(alpha).add(&ops::conv2d(&y, &k).unwrap().scale(beta)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn split_then_concat_is_bit_exact(c in 1usize..40, num in 1u32..8, seed in any::<u64>()) {
        let g = Fraction::new(num.min(7), 8).unwrap();
        let ratios = [g, g.one_minus(1).unwrap()];
        let x = Tensor::<f32>::from_fn(&[2, c, 3, 2], |i| (i as f32 * 0.37 + seed as f32).sin()).unwrap();
        let Ok(parts) = ops::split_channels(&x, &ratios) else {
            // a group rounding to zero channels has no tensor to hold it
            let first = g.floor_mul(c);
            prop_assert!(first == 0 || first == c);
            return Ok(());
        };
        prop_assert_eq!(parts.iter().map(|p| p.dims()[1]).sum::<usize>(), c);
        prop_assert_eq!(ops::concat_channels(&parts).unwrap(), x);
    }

    #[test]
    fn f32_and_f64_convs_agree(seed in any::<u64>()) {
        let x = tensor(&[1, 4, 7, 7], seed);
        let k = ConvKernel::dense(tensor(&[3, 4, 3, 3], seed ^ 3), (2, 2), (1, 1));
        let k32 = ConvKernel::dense(k.weight.cast::<f32>(), (2, 2), (1, 1));
        let y64 = ops::conv2d(&x, &k).unwrap();
        let y32 = ops::conv2d(&x.cast::<f32>(), &k32).unwrap().cast::<f64>();
        prop_assert!(y64.max_abs_diff(&y32).unwrap() < 1e-5);
    }

    #[test]
    fn stable_scan_stays_within_geometric_bound(
        n in 1usize..12, len in 1usize..80, seed in any::<u64>(), log_delta in -7.0f64..0.0,
    ) {
        use rand::Rng;
        let mut r = rng(seed);
        let a: Vec<f64> = (0..n).map(|_| -r.random_range(1e-3..3.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
        let delta = log_delta.exp();
        let (abar, bbar) = discretize(&a, &b, delta).unwrap();
        // |h_i| <= |Bbar_i| / (1 - Abar_i) for inputs bounded by one
        let bound: f64 = (0..n).map(|i| (c[i] * bbar[i]).abs() / (1.0 - abar[i])).sum();
        let y = scan_recurrent(&SsmParams::time_invariant(a, b, c, delta).unwrap(), &x).unwrap();
        for v in y {
            prop_assert!(v.is_finite() && v.abs() <= bound * (1.0 + 1e-9), "{v} > {bound}");
        }
    }

    #[test]
    fn scan_is_linear_in_its_input(alpha in -3.0f64..3.0, seed in any::<u64>()) {
        use rand::Rng;
        let mut r = rng(seed);
        let n = r.random_range(1..10);
        let len = r.random_range(1..40);
        let v = |r: &mut rand_chacha::ChaCha8Rng, k: usize| (0..k).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let a: Vec<f64> = v(&mut r, n).iter().map(|x| -x.abs() - 0.01).collect();
        let p = SsmParams::time_invariant(a, v(&mut r, n), v(&mut r, n), 0.1).unwrap();
        let (x, z) = (v(&mut r, len), v(&mut r, len));
        let mixed: Vec<f64> = x.iter().zip(&z).map(|(a, b)| alpha * a + b).collect();
        let lhs = scan_recurrent(&p, &mixed).unwrap();
        let (yx, yz) = (scan_recurrent(&p, &x).unwrap(), scan_recurrent(&p, &z).unwrap());
        for t in 0..len {
            prop_assert!((lhs[t] - (alpha * yx[t] + yz[t])).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn batch_permutation_permutes_logits(seed in any::<u64>()) {
        let model = Model::<f32>::new(ModelConfig::toy(4), seed).unwrap();
        let x = uniform::<f32>(&mut rng(seed), &[3, 3, 32, 32], 1.0);
        let per = 3 * 32 * 32;
        let mut swapped = Vec::with_capacity(x.numel());
        for b in [2, 0, 1] {
            swapped.extend_from_slice(&x.data()[b * per..(b + 1) * per]);
        }
        let y = model.forward(&x).unwrap();
        let ys = model.forward(&Tensor::new(x.dims(), swapped).unwrap()).unwrap();
        for (row, b) in [2, 0, 1].into_iter().enumerate() {
            prop_assert_eq!(&ys.data()[row * 4..(row + 1) * 4], &y.data()[b * 4..(b + 1) * 4]);
        }
    }
}

#[test]
fn identical_images_give_identical_rows() {
    let model = Model::<f32>::new(ModelConfig::toy(4), 1).unwrap();
    let one = uniform::<f32>(&mut rng(3), &[1, 3, 32, 32], 1.0);
    let mut twice = one.data().to_vec();
    twice.extend_from_slice(one.data());
    let y = model.forward(&Tensor::new(&[2, 3, 32, 32], twice).unwrap()).unwrap();
    assert_eq!(y.data()[..4], y.data()[4..]);
    assert!(y.all_finite());
}
