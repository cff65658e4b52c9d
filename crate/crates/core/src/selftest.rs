//! Invariant suite shipped inside the library so the binary can verify a
//! build without a test harness.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    adaptive_layer_norm, cached_window_attention, compute_window_size, unit_project, KVCache,
};
use crate::attribution::{fd_step_ratio, grad_fd, loss_phy, make_baseline, paam, path_point, PathConfig};
use crate::bench_cache::{bench_cache, cache_bytes, default_schedule, BenchSettings};
use crate::config::ModelConfig;
use crate::haze::{apply_scattering, invert_haze, synthesize_haze, HazeScene};
use crate::io::{decode_pnm, encode_pnm};
use crate::metrics::{combined_loss, psnr, ssim, LossWeights};
use crate::model::{init_weights, Model};
use crate::numerics::{layer_norm, Tensor};
use crate::reconstruction::physics_upsample;
use crate::weights::WeightStore;

/// Outcome of one check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

type Check = fn() -> std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn4(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

fn window_table() -> std::result::Result<String, String> {
    for (side, want) in [(512, 64), (1024, 128), (1025, 132), (2048, 260), (8, 1)] {
        let got = compute_window_size(side, side, 8, 4, 1024);
        ensure(got == want, || format!("{side} -> {got}, expected {want}"))?;
    }
    Ok("5 sizes".into())
}

/// Plain list-based simulation of the retention recurrence.
fn reference_update(cache: &[usize], c: f64, eta: f64, new: &[usize]) -> Vec<usize> {
    let gamma = 1.0 - c * eta;
    let keep = (gamma * cache.len() as f64).floor() as usize;
    let mut out: Vec<usize> = cache[..keep.min(cache.len())].to_vec();
    out.extend_from_slice(new);
    out
}

fn retention_recurrence() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..1000 {
        let len = rng.gen_range(0..200usize);
        let new_len = rng.gen_range(1..64usize);
        let c: f32 = rng.gen_range(0.0..=1.0);
        let eta: f32 = rng.gen_range(0.0..=1.0);
        let ids: Vec<f32> = (0..len).map(|i| i as f32).collect();
        let mut cache = KVCache::with_contents(1, usize::MAX, eta, ids.clone(), ids, new_len.max(1))
            .map_err(|e| e.to_string())?;
        let incoming: Vec<f32> = (0..new_len).map(|i| (1000 + i) as f32).collect();
        cache.update(&incoming, &incoming, c).map_err(|e| e.to_string())?;
        let want = reference_update(
            &(0..len).collect::<Vec<_>>(),
            c as f64,
            eta as f64,
            &(1000..1000 + new_len).collect::<Vec<_>>(),
        );
        let got: Vec<usize> = cache.keys().iter().map(|&v| v as usize).collect();
        ensure(got == want, || format!("case {case}: len {len} c {c} eta {eta} new {new_len}"))?;
    }
    Ok("1000 cases".into())
}

fn cache_memory_bound() -> std::result::Result<String, String> {
    let settings = BenchSettings::from(&ModelConfig::tiny());
    let rows = bench_cache(&default_schedule(), &settings).map_err(|e| e.to_string())?;
    let mut expect = 0usize;
    for r in &rows {
        expect = expect / 2 + 64;
        ensure(r.cache_len_on == expect, || format!("step {}: on {} vs {expect}", r.step, r.cache_len_on))?;
        ensure(r.cache_len_off == 64 * r.step, || format!("step {}: off {}", r.step, r.cache_len_off))?;
        ensure(r.bytes_on == cache_bytes(r.cache_len_on, settings.dim), || "bytes_on".into())?;
        ensure(r.bytes_on <= r.bytes_off, || format!("step {}: on exceeds off", r.step))?;
    }
    let last = rows.last().expect("20 rows");
    ensure(last.cache_len_on <= 128 && last.cache_len_off == 1280, || {
        format!("final {} vs {}", last.cache_len_on, last.cache_len_off)
    })?;
    Ok(format!("{} vs {}", last.cache_len_on, last.cache_len_off))
}

fn naive_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Vec<f64> {
    let [nw, n, d] = q.shape()[..] else { unreachable!() };
    let at = |t: &Tensor, w: usize, i: usize, c: usize| t.data()[(w * n + i) * d + c] as f64;
    let mut out = vec![0.0; nw * n * d];
    for w in 0..nw {
        for i in 0..n {
            let s: Vec<f64> = (0..n)
                .map(|j| (0..d).map(|c| at(q, w, i, c) * at(k, w, j, c)).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..d {
                out[(w * n + i) * d + c] = (0..n).map(|j| e[j] / z * at(v, w, j, c)).sum();
            }
        }
    }
    out
}

fn empty_cache_attention() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let w = [1, 2, 4][case % 3];
        let d = [4, 8][(case / 3) % 2];
        let nw = rng.gen_range(1..4);
        let mk = |rng: &mut ChaCha8Rng| {
            Tensor::new(&[nw, w * w, d], (0..nw * w * w * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .expect("shape")
        };
        let (q, k, v) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let empty = KVCache::new(d, 16, 0.5).map_err(|e| e.to_string())?;
        let got = cached_window_attention(&q, &k, &v, Some(&empty), None, 1).map_err(|e| e.to_string())?;
        for (a, b) in got.data().iter().zip(naive_attention(&q, &k, &v)) {
            worst = worst.max((*a as f64 - b).abs());
        }
    }
    ensure(worst < 1e-6, || format!("max deviation {worst:e}"))?;
    Ok(format!("max |d| {worst:.2e}"))
}

fn scattering_round_trip() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f32;
    for _ in 0..100 {
        let clean = rand_tensor(&mut rng, [1, 3, 8, 8], 0.0, 1.0);
        let t = rand_tensor(&mut rng, [1, 1, 8, 8], 0.2, 1.0);
        let a = [rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0)];
        let scene = HazeScene::new(clean.clone(), t.clone(), a, 0.1).map_err(|e| e.to_string())?;
        let hazy = synthesize_haze(&scene).map_err(|e| e.to_string())?;
        let back = invert_haze(&hazy, &t, a, 0.1).map_err(|e| e.to_string())?;
        worst = worst.max(back.max_abs_diff(&clean).map_err(|e| e.to_string())?);
        let up = physics_upsample(&clean, &t, a, 8, 8).map_err(|e| e.to_string())?;
        let asm = apply_scattering(&clean, &t, a).map_err(|e| e.to_string())?;
        worst = worst.max(up.max_abs_diff(&asm).map_err(|e| e.to_string())?);
    }
    ensure(worst <= 1e-6, || format!("max error {worst:e}"))?;
    Ok(format!("max error {worst:.2e}"))
}

fn zero_model_identity() -> std::result::Result<String, String> {
    let cfg = ModelConfig::tiny();
    let model = Model::zeroed(&cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (h, w) in [(17, 23), (32, 32), (20, 9)] {
        let img = rand_tensor(&mut rng, [1, 3, h, w], 0.0, 1.0);
        let out = model.dehaze(&img).map_err(|e| e.to_string())?.image();
        ensure(out == img, || format!("{h}x{w} not reproduced"))?;
    }
    Ok("3 sizes".into())
}

fn normalization_invariants() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_scale = 0.0f32;
    for _ in 0..500 {
        let c = rng.gen_range(8..24);
        let x = rand_tensor(&mut rng, [1, c, 3, 3], -5.0, 5.0);
        let y = layer_norm(&x, &Tensor::full(&[c], 1.0), &Tensor::zeros(&[c]), 1e-5)
            .map_err(|e| e.to_string())?;
        for p in 0..9 {
            let col: Vec<f64> = (0..c).map(|ci| y.data()[ci * 9 + p] as f64).collect();
            let m = col.iter().sum::<f64>() / c as f64;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / c as f64;
            ensure(m.abs() < 1e-5 && (var - 1.0).abs() < 1e-4, || format!("mean {m:e} var {var}"))?;
        }
        let r: Vec<f32> = (0..c).map(|_| rng.gen_range(0.01..3.0)).collect();
        let k: f32 = rng.gen_range(0.1..10.0);
        let rk: Vec<f32> = r.iter().map(|v| v * k).collect();
        let a = unit_project(&r);
        let b = unit_project(&rk);
        for (u, v) in a.iter().zip(&b) {
            worst_scale = worst_scale.max((u - v).abs());
        }
        let bias: Vec<f32> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        adaptive_layer_norm(&x, &r, &bias, &Tensor::full(&[c], 1.0), &Tensor::zeros(&[c]), 1e-5)
            .map_err(|e| e.to_string())?;
    }
    ensure(worst_scale < 1e-6, || format!("scale deviation {worst_scale:e}"))?;
    Ok(format!("scale deviation {worst_scale:.2e}"))
}

fn metric_sanity() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&mut rng, [1, 3, 24, 24], 0.0, 1.0);
    let s = ssim(&x, &x).map_err(|e| e.to_string())?;
    ensure((s - 1.0).abs() <= 1e-6, || format!("ssim(x, x) = {s}"))?;
    let p = psnr(&Tensor::zeros(&[1, 3, 4, 4]), &Tensor::full(&[1, 3, 4, 4], 0.1), 1.0)
        .map_err(|e| e.to_string())?;
    ensure((p - 20.0).abs() <= 1e-6, || format!("psnr {p}"))?;
    let l = combined_loss(&x, &x, &LossWeights::default()).map_err(|e| e.to_string())?;
    ensure(l.abs() <= 1e-7, || format!("loss {l}"))?;
    let w = LossWeights::default();
    ensure((w.w_l1, w.w_mse, w.w_ssim) == (0.8, 0.1, 0.1), || "default weights".into())?;
    Ok(format!("psnr {p:.6}"))
}

fn weight_store_determinism() -> std::result::Result<String, String> {
    let cfg = ModelConfig::tiny();
    let a = init_weights(&cfg, 0);
    let b = init_weights(&cfg, 0);
    ensure(a.checksum() == b.checksum(), || "seeded init differs".into())?;
    let back = WeightStore::from_parts(&a.manifest("w.bin"), &a.blob()).map_err(|e| e.to_string())?;
    ensure(back.checksum() == a.checksum() && back.blob() == a.blob(), || "round trip differs".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img = rand_tensor(&mut rng, [1, 3, 5, 7], 0.0, 1.0);
    let bytes = encode_pnm(&img, 255).map_err(|e| e.to_string())?;
    let dec = decode_pnm(&bytes).map_err(|e| e.to_string())?;
    let err = dec.max_abs_diff(&img).map_err(|e| e.to_string())?;
    ensure(err <= 1.0 / 510.0 + 1e-7, || format!("ppm error {err}"))?;
    ensure(encode_pnm(&dec, 255).map_err(|e| e.to_string())? == bytes, || "ppm re-encode".into())?;
    let model = Model::from_store(&a, &cfg).map_err(|e| e.to_string())?;
    let img = rand_tensor(&mut rng, [1, 3, 16, 16], 0.0, 1.0);
    let o1 = model.dehaze(&img).map_err(|e| e.to_string())?.raw;
    let o2 = model.dehaze(&img).map_err(|e| e.to_string())?.raw;
    ensure(o1 == o2, || "dehaze not deterministic".into())?;
    Ok(a.checksum()[..16].to_string())
}

fn gradient_oracle() -> std::result::Result<String, String> {
    let x = Tensor::full(&[1, 3, 4, 4], 0.3);
    let g = grad_fd(|t| Ok(t.data().iter().map(|&v| (v as f64).powi(2)).sum()), &x, 1e-3)
        .map_err(|e| e.to_string())?;
    let worst = g.data().iter().map(|&v| (v - 0.6).abs()).fold(0.0f32, f32::max);
    ensure(worst <= 1e-6, || format!("quadratic gradient error {worst:e}"))?;
    let ratio = transmission_step_ratio().map_err(|e| e.to_string())?;
    ensure((3.5..=4.5).contains(&ratio), || format!("step-halving ratio {ratio}"))?;
    Ok(format!("max error {worst:.2e}, step ratio {ratio:.3}"))
}

/// Step-halving ratio of the transmission-loss gradient at the path midpoint
/// of a seeded 8×8 image under the tiny model.
pub fn transmission_step_ratio() -> crate::Result<f64> {
    let cfg = ModelConfig::tiny();
    let model = Model::seeded(&cfg, 3)?;
    let img = Tensor::from_fn4([1, 3, 8, 8], |_, c, y, x| {
        ((c * 7 + y * 3 + x * 5 + 3) % 17) as f32 / 17.0 * 0.8 + 0.1
    });
    let atm = model.atmosphere(&img)?;
    let base = make_baseline(&img, &atm, &PathConfig::from(&cfg))?;
    let x = path_point(&base, &img, 0.5)?;
    let t_ref = atm.transmission().clone();
    fd_step_ratio(|p| loss_phy(p, &model, &t_ref), &x, 5e-3, 1e-9)?
        .ok_or_else(|| crate::Error::invalid("no component above the noise floor"))
}

fn attribution_linearity() -> std::result::Result<String, String> {
    let cfg = ModelConfig::tiny();
    let model = Model::seeded(&cfg, 1).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let img = rand_tensor(&mut rng, [1, 3, 6, 6], 0.0, 1.0);
    let mut pc = PathConfig::from(&cfg);
    pc.steps = 2;
    let m1 = paam(&model, &img, &pc).map_err(|e| e.to_string())?;
    pc.lambda *= 2.0;
    let m2 = paam(&model, &img, &pc).map_err(|e| e.to_string())?;
    let worst = m1
        .map
        .data()
        .iter()
        .zip(m2.map.data())
        .map(|(a, b)| (2.0 * a - b).abs())
        .fold(0.0f32, f32::max);
    ensure(worst <= 1e-6, || format!("lambda deviation {worst:e}"))?;
    Ok(format!("lambda deviation {worst:.2e}"))
}

/// Names and functions of every embedded check.
pub fn checks() -> Vec<(&'static str, Check)> {
    vec![
        ("window-size table", window_table as Check),
        ("cache retention recurrence", retention_recurrence),
        ("cache memory bound", cache_memory_bound),
        ("empty-cache attention", empty_cache_attention),
        ("scattering round trip", scattering_round_trip),
        ("zero-weight identity", zero_model_identity),
        ("normalization invariants", normalization_invariants),
        ("metric sanity", metric_sanity),
        ("weights and image determinism", weight_store_determinism),
        ("finite-difference oracle", gradient_oracle),
        ("attribution linearity", attribution_linearity),
    ]
}

/// Run every check, catching panics as failures.
pub fn run_all() -> Vec<CheckResult> {
    checks()
        .into_iter()
        .map(|(name, f)| {
            let start = Instant::now();
            let outcome = std::panic::catch_unwind(f)
                .unwrap_or_else(|_| Err("panicked".to_string()));
            let (passed, detail) = match outcome {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult {
                name,
                passed,
                detail,
                elapsed: start.elapsed(),
            }
        })
        .collect()
}
