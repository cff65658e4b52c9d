use andehaze_core::metrics::{
    combined_loss, combined_loss_terms, gaussian_window, mean_abs, mse, psnr, ssim, ssim_with,
    SsimMode, SSIM_WINDOW,
};
use andehaze_core::{LossWeights, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(seed: u64, c: usize, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn4([1, c, h, w], |_, _, _, _| rng.gen_range(0.0..1.0))
}

/// Brute-force single-plane SSIM over every valid 11×11 window.
fn reference_ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let sigma = 1.5f64;
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = vec![0.0; SSIM_WINDOW * SSIM_WINDOW];
    for (i, kv) in k.iter_mut().enumerate() {
        let (dy, dx) = ((i / SSIM_WINDOW) as f64 - half, (i % SSIM_WINDOW) as f64 - half);
        *kv = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
    }
    let z: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= z);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    for y in 0..oh {
        for x in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW * SSIM_WINDOW {
                let p = (y + i / SSIM_WINDOW) * w + x + i % SSIM_WINDOW;
                ma += k[i] * a[p];
                mb += k[i] * b[p];
                saa += k[i] * a[p] * a[p];
                sbb += k[i] * b[p] * b[p];
                sab += k[i] * a[p] * b[p];
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    total / (oh * ow) as f64
}

fn gray(t: &Tensor) -> Vec<f64> {
    let (_, c, h, w) = t.dims4().unwrap();
    (0..h * w)
        .map(|p| (0..c).map(|ci| t.data()[ci * h * w + p] as f64).sum::<f64>() / c as f64)
        .collect()
}

#[test]
fn ssim_matches_brute_force() {
    let a = image(1, 3, 14, 17);
    let b = a.map(|v| (v * 0.8 + 0.1).min(1.0));
    let b = b.zip_map(&image(2, 3, 14, 17), |x, n| (x + 0.05 * (n - 0.5)).clamp(0.0, 1.0)).unwrap();
    let want = reference_ssim(&gray(&a), &gray(&b), 14, 17);
    assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
    let per: f64 = (0..3)
        .map(|c| {
            let pa: Vec<f64> = a.channel(0, c).unwrap().data().iter().map(|&v| v as f64).collect();
            let pb: Vec<f64> = b.channel(0, c).unwrap().data().iter().map(|&v| v as f64).collect();
            reference_ssim(&pa, &pb, 14, 17)
        })
        .sum::<f64>()
        / 3.0;
    assert!((ssim_with(&a, &b, SsimMode::PerChannelMean, 1.0).unwrap() - per).abs() < 1e-9);
}

#[test]
fn ssim_identity_and_limits() {
    let x = image(3, 3, 24, 24);
    assert!((ssim(&x, &x).unwrap() - 1.0).abs() <= 1e-6);
    assert!(ssim(&image(4, 3, 10, 30), &image(5, 3, 10, 30)).is_err());
    let g = gaussian_window();
    assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(g[0], g[SSIM_WINDOW - 1]);
}

#[test]
fn psnr_of_constant_error() {
    let zero = Tensor::zeros(&[1, 3, 4, 4]);
    let p = psnr(&zero, &Tensor::full(&[1, 3, 4, 4], 0.1), 1.0).unwrap();
    assert!((p - 20.0).abs() <= 1e-6);
    assert!(psnr(&zero, &zero, 1.0).unwrap().is_infinite());
    let p = psnr(&zero, &Tensor::full(&[1, 3, 4, 4], 0.5), 255.0 / 255.0).unwrap();
    assert!((p - 10.0 * 4f64.log10()).abs() < 1e-9);
}

#[test]
fn loss_terms_and_defaults() {
    let w = LossWeights::default();
    assert_eq!((w.w_l1, w.w_mse, w.w_ssim), (0.8, 0.1, 0.1));
    let x = image(6, 3, 16, 16);
    assert!(combined_loss(&x, &x, &w).unwrap().abs() <= 1e-7);
    let y = x.map(|v| v + 0.125);
    let t = combined_loss_terms(&y, &x, &w).unwrap();
    assert!((t.l1 - 0.8 * 0.125).abs() < 1e-7);
    assert!((t.mse - 0.1 * 0.125 * 0.125).abs() < 1e-8);
    assert!((t.total - (t.l1 + t.mse + t.ssim)).abs() < 1e-15);
    assert!(mse(&x, &Tensor::zeros(&[1, 3, 16, 15])).is_err());
    assert!((mean_abs(&y, &x).unwrap() - 0.125).abs() < 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ssim_is_symmetric_and_bounded(s1 in any::<u64>(), s2 in any::<u64>()) {
        let (a, b) = (image(s1, 3, 12, 12), image(s2, 3, 12, 12));
        let ab = ssim(&a, &b).unwrap();
        prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
    }

    #[test]
    fn psnr_is_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
        let (a, b) = (image(s1, 3, 4, 4), image(s2, 3, 4, 4));
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }
}
