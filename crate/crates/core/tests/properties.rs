use proptest::prelude::*;

use spikegrad::data::{encode_idx, parse_cifar, parse_idx, CifarVariant, LabeledDataset, Sample};
use spikegrad::gradscale::scale_gradient;
use spikegrad::neuron::{lif_step, LifState, NeuronParams, ResetMode};
use spikegrad::tensor::{conv2d, conv2d_weight_corr, ConvGeometry, Tensor};
use spikegrad::trace::{relation_conv, relation_dense, trace_update, RelationTensor, DEFAULT_TRACE_DECAY};
use spikegrad::verify::oracle;

fn binary(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| f64::from(u8::from(b))), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn tensor_bytes_round_trip(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|i| ((seed ^ i as u64) as f64).sin()).collect();
        let t = Tensor::new(shape, data).unwrap();
        let bytes = t.to_bytes();
        let (back, used) = Tensor::from_bytes(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, t);
    }

    #[test]
    fn tensor_decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = Tensor::from_bytes(&bytes);
    }

    #[test]
    fn trace_matches_closed_form(train in (1usize..64).prop_flat_map(binary)) {
        let mut x = Tensor::zeros(&[1]);
        for &s in &train {
            x = trace_update(&x, &Tensor::full(&[1], s), DEFAULT_TRACE_DECAY).unwrap();
        }
        let want = oracle::trace_closed_form(&train, DEFAULT_TRACE_DECAY);
        prop_assert!((x.data()[0] - want).abs() <= 1e-12);
    }

    #[test]
    fn trace_stays_bounded(train in (1usize..200).prop_flat_map(binary)) {
        // The geometric series bounds a trace by 1 / (1 - e^-1).
        let bound = 1.0 / (1.0 - DEFAULT_TRACE_DECAY);
        let mut x = Tensor::zeros(&[1]);
        for &s in &train {
            x = trace_update(&x, &Tensor::full(&[1], s), DEFAULT_TRACE_DECAY).unwrap();
            prop_assert!(x.data()[0] >= 0.0 && x.data()[0] < bound);
        }
    }

    #[test]
    fn scaling_preserves_sign(
        g in -1e3f64..1e3,
        r in 0f64..100.0,
        alpha in 0f64..1.0,
    ) {
        let out = scale_gradient(&Tensor::full(&[1], g), &RelationTensor { r: Tensor::full(&[1], r) }, alpha)
            .unwrap()
            .data()[0];
        if g != 0.0 {
            prop_assert_eq!(out.signum(), g.signum());
        } else {
            prop_assert_eq!(out, 0.0);
        }
    }

    #[test]
    fn scaling_is_monotone_in_relation(g in -10f64..10.0, r1 in 0f64..10.0, dr in 0f64..10.0, alpha in 0f64..=1.0) {
        let s = |r: f64| {
            scale_gradient(&Tensor::full(&[1], g), &RelationTensor { r: Tensor::full(&[1], r) }, alpha).unwrap().data()[0]
        };
        prop_assert!(s(r1 + dr).abs() >= s(r1).abs() - 1e-12);
    }

    #[test]
    fn dense_relation_is_outer_product(
        post in prop::collection::vec(0f64..3.0, 1..10),
        pre in prop::collection::vec(0f64..3.0, 1..10),
    ) {
        let r = relation_dense(&Tensor::vector(post.clone()).unwrap(), &Tensor::vector(pre.clone()).unwrap()).unwrap();
        prop_assert_eq!(r.r.shape(), &[post.len(), pre.len()][..]);
        prop_assert_eq!(r.r.data(), &oracle::outer(&post, &pre)[..]);
    }

    #[test]
    fn conv_relation_matches_weight_correlation(
        cin in 1usize..3, cout in 1usize..3, k in 1usize..4, stride in 1usize..3, pad in 0usize..2,
        h in 4usize..8, w in 4usize..8, seed in any::<u32>(),
    ) {
        let g = ConvGeometry::square(cin, cout, k, stride, pad);
        prop_assume!(g.output_hw(h, w).is_ok());
        let (oh, ow) = g.output_hw(h, w).unwrap();
        let val = |i: usize| ((seed as usize + 7 * i) % 11) as f64 / 5.0;
        let pre = Tensor::new(vec![cin, h, w], (0..cin * h * w).map(val).collect()).unwrap();
        let post = Tensor::new(vec![cout, oh, ow], (0..cout * oh * ow).map(|i| val(i + 3)).collect()).unwrap();
        let r = relation_conv(&pre, &post, &g).unwrap();
        prop_assert_eq!(&r.r, &conv2d_weight_corr(&pre, &post, &g).unwrap());
        prop_assert!(r.r.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn conv_matches_naive_loops(
        cin in 1usize..3, cout in 1usize..3, k in 1usize..4, stride in 1usize..3, pad in 0usize..2,
        h in 3usize..7, w in 3usize..7, seed in any::<u32>(),
    ) {
        let g = ConvGeometry::square(cin, cout, k, stride, pad);
        prop_assume!(g.output_hw(h, w).is_ok());
        let val = |i: usize| (((seed as usize).wrapping_mul(31) + 13 * i) % 17) as f64 / 8.0 - 1.0;
        let x: Vec<f64> = (0..cin * h * w).map(val).collect();
        let kern: Vec<f64> = (0..cout * cin * k * k).map(|i| val(i + 5)).collect();
        let b: Vec<f64> = (0..cout).map(|i| val(i + 9)).collect();
        let got = conv2d(
            &Tensor::new(vec![cin, h, w], x.clone()).unwrap(),
            &Tensor::new(g.kernel_shape().to_vec(), kern.clone()).unwrap(),
            &Tensor::vector(b.clone()).unwrap(),
            stride,
            pad,
        )
        .unwrap();
        let want = oracle::conv2d(&x, [cin, h, w], &kern, g.kernel_shape(), &b, stride, pad);
        for (a, e) in got.data().iter().zip(&want) {
            prop_assert!((a - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn spikes_are_binary_and_resets_bounded(
        u in -3f64..3.0, psp in -3f64..3.0, tau in 0.1f64..1.0, hard in any::<bool>(),
    ) {
        let p = NeuronParams {
            tau,
            reset: if hard { ResetMode::Hard } else { ResetMode::Soft },
            ..NeuronParams::default()
        };
        let st = LifState { u: Tensor::full(&[1], u), s: Tensor::zeros(&[1]) };
        let next = lif_step(&st, &Tensor::full(&[1], psp), &p).unwrap();
        let s = next.s.data()[0];
        let pre = tau * u + psp;
        prop_assert!(s == 0.0 || s == 1.0);
        prop_assert_eq!(s == 1.0, pre >= p.v_th);
        if s == 0.0 {
            prop_assert_eq!(next.u.data()[0], pre);
        } else if hard {
            prop_assert_eq!(next.u.data()[0], p.v_r);
        } else {
            prop_assert!((next.u.data()[0] - (pre - p.v_th)).abs() < 1e-12);
        }
    }

    #[test]
    fn idx_round_trip_is_exact_on_byte_grid(
        rows in 1usize..6, cols in 1usize..6,
        pixels in prop::collection::vec(any::<u8>(), 0..180),
        labels in prop::collection::vec(0usize..10, 1..5),
    ) {
        let n = labels.len();
        prop_assume!(pixels.len() >= n * rows * cols);
        let samples: Vec<Sample> = labels.iter().enumerate().map(|(i, &label)| Sample {
            x: Tensor::new(
                vec![1, rows, cols],
                pixels[i * rows * cols..(i + 1) * rows * cols].iter().map(|&b| b as f64 / 255.0).collect(),
            ).unwrap(),
            label,
        }).collect();
        let ds = LabeledDataset::new(samples, 10).unwrap();
        let (img, lab) = encode_idx(&ds).unwrap();
        let back = parse_idx(&img, &lab).unwrap();
        prop_assert_eq!(back.samples, ds.samples);
    }

    #[test]
    fn idx_parse_never_panics(img in prop::collection::vec(any::<u8>(), 0..64), lab in prop::collection::vec(any::<u8>(), 0..16)) {
        let _ = parse_idx(&img, &lab);
    }

    #[test]
    fn cifar_values_in_unit_range(seed in any::<u8>(), n in 1usize..3) {
        let rec = CifarVariant::Cifar10.record_len();
        let mut bytes = vec![0u8; n * rec];
        for (i, b) in bytes.iter_mut().enumerate() {
            *b = if i % rec == 0 { seed % 10 } else { (i as u8).wrapping_mul(seed) };
        }
        let ds = parse_cifar(&bytes, CifarVariant::Cifar10).unwrap();
        prop_assert_eq!(ds.len(), n);
        for s in &ds.samples {
            prop_assert_eq!(s.x.shape(), &[3, 32, 32][..]);
            prop_assert!(s.x.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
