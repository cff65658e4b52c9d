use andehaze_core::numerics::{
    batch_norm, bilinear_resize, conv2d, depthwise_conv2d, gelu, global_avg_pool, layer_norm,
    linear, min_pool2d, nearest_rank_index, quantile, resize_sequence, softmax_lastdim, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    Tensor::from_fn4(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn naive_conv(x: &Tensor, k: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, w) = x.dims4().unwrap();
    let (o, _, kh, kw) = k.dims4().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    Tensor::from_fn4([n, o, oh, ow], |ni, oi, y, xo| {
        let mut acc = b.map_or(0.0, |b| b.data()[oi] as f64);
        for ci in 0..c {
            for dy in 0..kh {
                for dx in 0..kw {
                    let iy = (y * stride + dy) as isize - pad as isize;
                    let ix = (xo * stride + dx) as isize - pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                        acc += x.at4(ni, ci, iy as usize, ix as usize) as f64
                            * k.at4(oi, ci, dy, dx) as f64;
                    }
                }
            }
        }
        acc as f32
    })
}

#[test]
fn conv2d_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..40 {
        let (c, o) = (rng.gen_range(1..5), rng.gen_range(1..7));
        let k = [1, 3, 5][case % 3];
        let stride = 1 + case % 2;
        let pad = rng.gen_range(0..=k / 2);
        let (h, w) = (rng.gen_range(k..12), rng.gen_range(k..12));
        let x = random(&mut rng, [1, c, h, w]);
        let kern = random(&mut rng, [o, c, k, k]);
        let bias = Tensor::new(&[o], (0..o).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let got = conv2d(&x, &kern, Some(&bias), stride, pad).unwrap();
        let want = naive_conv(&x, &kern, Some(&bias), stride, pad);
        assert_eq!(got.shape(), want.shape());
        assert!(got.max_abs_diff(&want).unwrap() < 1e-5, "case {case}");
    }
}

#[test]
fn conv2d_output_extents() {
    let x = Tensor::zeros(&[1, 2, 7, 9]);
    let k = Tensor::zeros(&[3, 2, 3, 3]);
    assert_eq!(conv2d(&x, &k, None, 2, 1).unwrap().shape(), &[1, 3, 4, 5]);
    assert_eq!(conv2d(&x, &k, None, 1, 0).unwrap().shape(), &[1, 3, 5, 7]);
    assert!(conv2d(&x, &Tensor::zeros(&[3, 1, 3, 3]), None, 1, 0).is_err());
}

#[test]
fn depthwise_matches_grouped_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, [1, 4, 6, 5]);
    let k = random(&mut rng, [4, 1, 3, 3]);
    let got = depthwise_conv2d(&x, &k, 1).unwrap();
    for c in 0..4 {
        let xc = x.channel(0, c).unwrap();
        let kc = Tensor::new(&[1, 1, 3, 3], k.data()[c * 9..(c + 1) * 9].to_vec()).unwrap();
        let want = naive_conv(&xc, &kc, None, 1, 1);
        let gc = got.channel(0, c).unwrap();
        assert!(gc.max_abs_diff(&want).unwrap() < 1e-6);
    }
}

#[test]
fn linear_matches_dot_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::new(&[2, 5], (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let w = Tensor::new(&[3, 5], (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let b = Tensor::from_slice(&[0.5, -0.25, 0.0]);
    let y = linear(&x, &w, Some(&b)).unwrap();
    for r in 0..2 {
        for o in 0..3 {
            let want: f64 = (0..5)
                .map(|i| x.data()[r * 5 + i] as f64 * w.data()[o * 5 + i] as f64)
                .sum::<f64>()
                + b.data()[o] as f64;
            assert!((y.data()[r * 3 + o] as f64 - want).abs() < 1e-6);
        }
    }
}

#[test]
fn layer_norm_matches_per_pixel_standardization() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, [1, 6, 3, 2]);
    let gamma = Tensor::from_slice(&[1.0, 2.0, 0.5, 1.0, -1.0, 3.0]);
    let beta = Tensor::from_slice(&[0.0, 0.1, 0.2, 0.3, 0.4, 0.5]);
    let y = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
    for p in 0..6 {
        let col: Vec<f64> = (0..6).map(|c| x.data()[c * 6 + p] as f64).collect();
        let m = col.iter().sum::<f64>() / 6.0;
        let v = col.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 6.0;
        for c in 0..6 {
            let want = (col[c] - m) / (v + 1e-5).sqrt() * gamma.data()[c] as f64
                + beta.data()[c] as f64;
            assert!((y.data()[c * 6 + p] as f64 - want).abs() < 1e-5);
        }
    }
}

#[test]
fn batch_norm_uses_running_statistics() {
    let x = Tensor::from_fn4([1, 2, 1, 2], |_, c, _, x| (c * 2 + x) as f32);
    let y = batch_norm(
        &x,
        &Tensor::from_slice(&[1.0, 2.0]),
        &Tensor::from_slice(&[4.0, 1.0]),
        &Tensor::from_slice(&[2.0, 1.0]),
        &Tensor::from_slice(&[0.0, 1.0]),
        0.0,
    )
    .unwrap();
    assert_eq!(y.data(), &[-1.0, 0.0, 1.0, 2.0]);
}

#[test]
fn quantile_matches_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let values: Vec<f32> = (0..1000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let t = Tensor::from_slice(&values);
    for q in [0.0, 0.25, 0.5, 0.9, 0.999, 1.0] {
        let rank = ((q * 1000.0f64).ceil() as usize).max(1) - 1;
        assert_eq!(quantile(&t, q).unwrap(), sorted[rank]);
    }
    assert_eq!(nearest_rank_index(10, 0.999), 9);
}

#[test]
fn pools_and_activations() {
    let x = Tensor::from_fn4([1, 2, 2, 2], |_, c, y, x| (c * 4 + y * 2 + x) as f32);
    assert_eq!(global_avg_pool(&x).unwrap().data(), &[1.5, 5.5]);
    let m = min_pool2d(&Tensor::from_fn4([1, 1, 3, 3], |_, _, y, x| (y * 3 + x) as f32), 3).unwrap();
    assert_eq!(m.data(), &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 3.0, 3.0, 4.0]);
    assert_eq!(gelu(0.0), 0.0);
    assert!((gelu(1.0) - 0.841192).abs() < 1e-5);
    let s = softmax_lastdim(&Tensor::from_slice(&[0.0, 2f32.ln()]));
    assert!((s.data()[0] - 1.0 / 3.0).abs() < 1e-7);
}

#[test]
fn bilinear_reproduces_linear_ramps() {
    let x = Tensor::from_fn4([1, 1, 4, 4], |_, _, y, x| (y + 2 * x) as f32);
    let up = bilinear_resize(&x, 8, 8, true).unwrap();
    for y in 0..8 {
        for xo in 0..8 {
            let want = (y as f64 * 3.0 / 7.0) + 2.0 * (xo as f64 * 3.0 / 7.0);
            assert!((up.at4(0, 0, y, xo) as f64 - want).abs() < 1e-5);
        }
    }
    let same = bilinear_resize(&x, 4, 4, false).unwrap();
    assert_eq!(same, x);
    let seq = resize_sequence(&[0.0, 10.0, 1.0, 11.0], 2, 3).unwrap();
    assert_eq!(seq, vec![0.0, 10.0, 0.5, 10.5, 1.0, 11.0]);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-50.0f32..50.0, 1..16)) {
        let s = softmax_lastdim(&Tensor::from_slice(&v));
        let sum: f64 = s.data().iter().map(|&x| x as f64).sum();
        prop_assert!((sum - 1.0).abs() < 1e-5);
        prop_assert!(s.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn constant_fields_survive_resize(v in -2.0f32..2.0, h in 1usize..9, w in 1usize..9, oh in 1usize..17, ow in 1usize..17) {
        let x = Tensor::full(&[1, 2, h, w], v);
        let y = bilinear_resize(&x, oh, ow, false).unwrap();
        prop_assert!(y.data().iter().all(|&a| (a - v).abs() <= 1e-6 * v.abs().max(1.0)));
    }

    #[test]
    fn conv_with_identity_kernel_is_identity(h in 1usize..8, w in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, [1, 2, h, w]);
        let k = Tensor::from_fn4([2, 2, 3, 3], |_, o, i, _| 0.0 * (o + i) as f32);
        let mut k = k;
        for c in 0..2 {
            k.data_mut()[(c * 2 + c) * 9 + 4] = 1.0;
        }
        prop_assert_eq!(conv2d(&x, &k, None, 1, 1).unwrap(), x);
    }
}
