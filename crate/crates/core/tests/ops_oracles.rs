mod common;

use common::*;
use unetformer::decoders::{DecoderConfig, SegModel, Variant};
use unetformer::swin::EncoderConfig;
use unetformer::tensor::{conv3d, conv_transpose3d, instance_norm, layer_norm, trilinear_upsample};
use unetformer::{no_grad, Tensor};

#[test]
fn conv3d_matches_naive_loop() {
    for (k, stride, pad) in [(1, 1, 0), (3, 1, 1), (3, 1, 0), (2, 2, 0), (3, 2, 1), (2, 1, 1)] {
        let xs = [2, 3, 5, 6, 4];
        let ws = [4, 3, k, k, k];
        let x = uniform_vec(xs.iter().product(), -1.0, 1.0, 1);
        let w = uniform_vec(ws.iter().product(), -1.0, 1.0, 2);
        let b = uniform_vec(4, -1.0, 1.0, 3);
        let got = conv3d(
            &Tensor::new(&xs, x.clone()).unwrap(),
            &Tensor::new(&ws, w.clone()).unwrap(),
            Some(&Tensor::new(&[4], b.clone()).unwrap()),
            stride,
            pad,
        )
        .unwrap();
        let (want, os) = naive_conv3d(&x, xs, &w, ws, Some(&b), stride, pad);
        assert_eq!(got.shape(), os.as_slice(), "k={k} s={stride} p={pad}");
        assert!(max_abs_diff(&got.to_vec(), &want) < 1e-12, "k={k} s={stride} p={pad}");
    }
}

#[test]
fn conv_transpose_matches_scatter_add() {
    let xs = [1, 3, 2, 3, 4];
    let x = uniform_vec(72, -1.0, 1.0, 4);
    let w = uniform_vec(3 * 5 * 8, -1.0, 1.0, 5);
    let b = uniform_vec(5, -1.0, 1.0, 6);
    let got = conv_transpose3d(
        &Tensor::new(&xs, x.clone()).unwrap(),
        &Tensor::new(&[3, 5, 2, 2, 2], w.clone()).unwrap(),
        Some(&Tensor::new(&[5], b.clone()).unwrap()),
        2,
        2,
    )
    .unwrap();
    assert_eq!(got.shape(), &[1, 5, 4, 6, 8]);
    assert!(max_abs_diff(&got.to_vec(), &scatter_deconv(&x, xs, &w, 5, &b)) < 1e-12);
}

#[test]
fn trilinear_reproduces_affine_fields() {
    let f = |x: f64, y: f64, z: f64| 0.3 + 1.5 * x - 0.7 * y + 2.25 * z + 0.5 * x * y * z;
    let dims = [3, 4, 2];
    for factor in [2, 4] {
        let input = Tensor::from_fn(&[1, 1, dims[0], dims[1], dims[2]], |i| {
            f((i / 8) as f64, ((i / 2) % 4) as f64, (i % 2) as f64)
        });
        let out = trilinear_upsample(&input, factor).unwrap();
        let od = dims.map(|d| d * factor);
        let src = |o: usize, a: usize| o as f64 * (dims[a] - 1) as f64 / (od[a] - 1) as f64;
        let v = out.to_vec();
        for x in 0..od[0] {
            for y in 0..od[1] {
                for z in 0..od[2] {
                    let want = f(src(x, 0), src(y, 1), src(z, 2));
                    let got = v[(x * od[1] + y) * od[2] + z];
                    assert!((got - want).abs() < 1e-12, "factor {factor} at {x},{y},{z}");
                }
            }
        }
    }
}

#[test]
fn trilinear_preserves_corners_and_monotonicity() {
    let input = Tensor::new(&[1, 1, 2, 1, 1], vec![0.0, 1.0]).unwrap();
    let v = trilinear_upsample(&input, 2).unwrap().to_vec();
    assert_eq!((v[0], v[v.len() - 1]), (0.0, 1.0));
    assert!(v.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn normalization_statistics() {
    for n in 2..=64 {
        let x = uniform_vec(2 * n, -3.0, 5.0, n as u64);
        let t = Tensor::new(&[1, 2, n, 1, 1], x.clone()).unwrap();
        let out = instance_norm(&t, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), 1e-5)
            .unwrap()
            .to_vec();
        for (src, ch) in x.chunks(n).zip(out.chunks(n)) {
            let mean_in = src.iter().sum::<f64>() / n as f64;
            let var_in = src.iter().map(|v| (v - mean_in).powi(2)).sum::<f64>() / n as f64;
            let mean = ch.iter().sum::<f64>() / n as f64;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-12, "n={n}");
            assert!((var - var_in / (var_in + 1e-5)).abs() < 1e-12, "n={n}");
        }
        let rows = Tensor::new(&[2, n], x.clone()).unwrap();
        let ln = layer_norm(&rows, &Tensor::ones(&[n]), &Tensor::zeros(&[n]), 1e-5)
            .unwrap()
            .to_vec();
        for r in ln.chunks(n) {
            assert!((r.iter().sum::<f64>() / n as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_is_stable_at_extreme_logits() {
    let t = Tensor::new(&[3, 3], vec![1e4, -1e4, 0.0, -1e4, -1e4, -1e4, 0.0, 0.0, 0.0]).unwrap();
    let s = t.softmax_lastaxis().to_vec();
    assert!(s.iter().all(|v| v.is_finite()));
    assert_eq!(&s[..3], &[1.0, 0.0, 0.0]);
    for row in s.chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
    assert!((s[3] - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn forward_and_backward_are_deterministic() {
    let enc = EncoderConfig::tiny();
    let x = Tensor::new(&[1, 1, 32, 32, 32], uniform_vec(32768, 0.0, 1.0, 9)).unwrap();
    for variant in [Variant::Cnn, Variant::Transformer] {
        let dec = DecoderConfig {
            variant,
            ..DecoderConfig::default()
        };
        let run = || {
            let model = SegModel::new(&enc, &dec, 5).unwrap();
            let logits = model.forward(&x).unwrap().logits;
            logits.square().sum().backward().unwrap();
            let grads: Vec<f64> = model
                .params
                .named()
                .iter()
                .flat_map(|(_, t)| t.grad().unwrap_or_default())
                .collect();
            (logits.to_vec(), grads)
        };
        let (a, b) = (run(), run());
        assert!(a == b, "{variant:?} run differs");
        assert!(
            no_grad(|| SegModel::new(&enc, &dec, 6).unwrap().forward(&x))
                .unwrap()
                .logits
                .to_vec()
                != a.0
        );
    }
}
