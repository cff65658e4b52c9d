use andehaze_core::bench_cache::{
    bench_cache, cache_bytes, default_schedule, parse_schedule, to_csv, BenchSettings, CSV_HEADER,
};
use andehaze_core::model::init_weights;
use andehaze_core::pa_stb::{pa_stb_forward, BlockOptions, BlockParams};
use andehaze_core::{AtmosphericParams, ModelConfig, ScatteringCoeff, Tensor, WeightStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn atmosphere(c: usize, c_a: f32) -> AtmosphericParams {
    AtmosphericParams::new(
        Tensor::full(&[1, 1, 4, 4], 0.3),
        [0.8; 3],
        vec![1.0; c],
        vec![0.1; c],
        ScatteringCoeff::Scalar(c_a),
    )
    .unwrap()
}

fn block(seed: u64, c: usize) -> BlockParams {
    let specs = BlockParams::param_specs("blk", c, 1, 4);
    let store: WeightStore = andehaze_core::weights::init_from_specs(&specs, seed);
    BlockParams::from_store(&store, "blk", c, 1, 4, 0.0).unwrap()
}

#[test]
fn block_preserves_shape_and_grows_cache() {
    let cfg = ModelConfig::tiny();
    let opts = BlockOptions::from(&cfg);
    let p = block(1, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let x = Tensor::from_fn4([1, 8, 12, 10], |_, _, _, _| rng.gen_range(-1.0..1.0));
    let atm = atmosphere(8, 0.5);
    let mut cache = None;
    let (y, t1) = pa_stb_forward(&x, &p, &atm, &mut cache, &opts).unwrap();
    assert_eq!(y.shape(), x.shape());
    assert!(y.all_finite());
    assert_eq!(t1.cache_len_at_attention, 0);
    let len1 = cache.as_ref().unwrap().len();
    assert_eq!(len1, t1.geometry.w_adapt * t1.geometry.w_adapt);
    let (_, t2) = pa_stb_forward(&x, &p, &atm, &mut cache, &opts).unwrap();
    assert_eq!(t2.cache_len_at_attention, len1);
    assert_eq!(t2.cache_update.n_keep, (0.75 * len1 as f64).floor() as usize);
}

#[test]
fn block_output_is_deterministic() {
    let opts = BlockOptions::from(&ModelConfig::tiny());
    let p = block(2, 8);
    let x = Tensor::from_fn4([1, 8, 5, 7], |_, c, y, x| ((c * 3 + y * 5 + x) % 11) as f32 / 11.0);
    let atm = atmosphere(8, 0.2);
    let a = pa_stb_forward(&x, &p, &atm, &mut None, &opts).unwrap().0;
    let b = pa_stb_forward(&x, &p, &atm, &mut None, &opts).unwrap().0;
    assert_eq!(a, b);
}

#[test]
fn model_store_contains_every_block() {
    let cfg = ModelConfig::tiny();
    let store = init_weights(&cfg, 0);
    for s in 0..4 {
        let c = cfg.stage_channels(s);
        let prefix = format!("backbone.stage{s}.block0");
        assert!(BlockParams::from_store(&store, &prefix, c, cfg.heads, cfg.rel_pos_window, 0.0).is_ok());
    }
}

#[test]
fn default_schedule_reproduces_memory_bound() {
    let settings = BenchSettings::from(&ModelConfig::tiny());
    let rows = bench_cache(&default_schedule(), &settings).unwrap();
    assert_eq!(rows.len(), 20);
    let mut on = 0;
    for r in &rows {
        on = on / 2 + 64;
        assert_eq!(r.cache_len_on, on);
        assert_eq!(r.cache_len_off, 64 * r.step);
        assert_eq!(r.bytes_off, cache_bytes(r.cache_len_off, settings.dim));
        assert_eq!(r.gamma, 0.5);
    }
    assert!(rows[19].cache_len_on <= 128);
    assert_eq!(rows[19].cache_len_off, 1280);
    let csv = to_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), 20);
}

#[test]
fn schedules_are_validated() {
    let s = parse_schedule(r#"[{"h": 32, "w": 16, "c_a_mean": 0.25}]"#).unwrap();
    assert_eq!((s[0].h, s[0].w, s[0].c_a_mean), (32, 16, 0.25));
    assert!(parse_schedule("[]").is_err());
    assert!(parse_schedule(r#"[{"h": 0, "w": 16, "c_a_mean": 0.25}]"#).is_err());
    assert!(parse_schedule(r#"[{"h": 8, "w": 16, "c_a_mean": 2}]"#).is_err());
    assert!(parse_schedule(r#"[{"h": 8, "w": 16, "c_a_mean": 0.5, "x": 1}]"#).is_err());
}

#[test]
fn clear_air_keeps_everything_until_the_cap() {
    let mut settings = BenchSettings::from(&ModelConfig::tiny());
    settings.max_cache_len = Some(200);
    let schedule = parse_schedule(r#"[{"h":64,"w":64,"c_a_mean":0},{"h":64,"w":64,"c_a_mean":0},{"h":64,"w":64,"c_a_mean":0},{"h":64,"w":64,"c_a_mean":0}]"#).unwrap();
    let rows = bench_cache(&schedule, &settings).unwrap();
    let lens: Vec<usize> = rows.iter().map(|r| r.cache_len_on).collect();
    assert_eq!(lens, vec![64, 128, 192, 200]);
}
