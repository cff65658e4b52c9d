use andehaze_core::io::{decode_pnm, encode_pnm, read_image, write_gray16, write_image};
use andehaze_core::model::init_weights;
use andehaze_core::weights::{Manifest, MANIFEST_FORMAT};
use andehaze_core::{Error, ModelConfig, Tensor, WeightStore};
use proptest::prelude::*;
use serde_json::Value;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" ")
}

fn small_store() -> WeightStore {
    let mut s = WeightStore::new();
    s.insert("a", Tensor::new(&[2], vec![1.0, -2.0]).unwrap());
    s.insert("b.weight", Tensor::new(&[1, 1, 1, 1], vec![0.5]).unwrap());
    s
}

#[test]
fn blob_layout_matches_hexdump() {
    let s = small_store();
    assert_eq!(hex(&s.blob()), "00 00 80 3f 00 00 00 c0 00 00 00 3f");
    let m = s.manifest("w.bin");
    assert_eq!(m.format, MANIFEST_FORMAT);
    assert_eq!(m.blob_bytes, 12);
    let offsets: Vec<(String, usize)> = m.tensors.iter().map(|e| (e.name.clone(), e.byte_offset)).collect();
    assert_eq!(offsets, vec![("a".into(), 0), ("b.weight".into(), 8)]);
}

#[test]
fn save_and_load_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let store = init_weights(&ModelConfig::tiny(), 11);
    let manifest = store.save(&dir.path().join("model")).unwrap();
    assert_eq!(manifest.extension().unwrap(), "json");
    let back = WeightStore::load(&manifest).unwrap();
    assert_eq!(back.blob(), store.blob());
    assert_eq!(back.checksum(), store.checksum());
    let again = dir.path().join("again");
    back.save(&again).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("model.bin")).unwrap(),
        std::fs::read(dir.path().join("again.bin")).unwrap()
    );
}

#[test]
fn corrupt_manifests_and_blobs_are_rejected() {
    let s = small_store();
    let blob = s.blob();
    let good = s.manifest("w.bin");
    assert!(matches!(
        WeightStore::from_parts(&good, &blob[..10]),
        Err(Error::TruncatedBlob { expected: 12, found: 10 })
    ));
    let mut extra = blob.clone();
    extra.push(0);
    assert!(WeightStore::from_parts(&good, &extra).is_err());

    let mut overlap = good.clone();
    overlap.tensors[1].byte_offset = 4;
    assert!(matches!(overlap.validate(), Err(Error::BadOffset { expected: 8, .. })));
    let mut dup = good.clone();
    dup.tensors[1].name = "a".into();
    assert!(dup.validate().is_err());
    let mut dtype = good.clone();
    dtype.tensors[0].dtype = "f16".into();
    assert!(dtype.validate().is_err());
    let mut fmt = good.clone();
    fmt.format = "other".into();
    assert!(fmt.validate().is_err());

    let mut json: Value = serde_json::to_value(&good).unwrap();
    json["surprise"] = Value::Bool(true);
    assert!(serde_json::from_value::<Manifest>(json).is_err());
}

#[test]
fn missing_blob_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_store().save(&dir.path().join("w")).unwrap();
    std::fs::remove_file(dir.path().join("w.bin")).unwrap();
    let err = WeightStore::load(&path).unwrap_err();
    assert!(err.is_io(), "{err}");
}

#[test]
fn config_round_trip_and_field_errors() {
    let cfg = ModelConfig::default();
    assert_eq!(ModelConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    assert_eq!(ModelConfig::from_json("{}").unwrap(), cfg);
    for (patch, field) in [
        (r#"{"eta": 1.5}"#, "eta"),
        (r#"{"depths": [1, 1]}"#, "depths"),
        (r#"{"channels": 6, "heads": 4}"#, "heads"),
        (r#"{"t_mid": 0.0}"#, "t_mid"),
        (r#"{"fd_epsilon": 1.0}"#, "fd_epsilon"),
        (r#"{"loss_weights": {"w_l1": -1, "w_mse": 0.1, "w_ssim": 0.1}}"#, "loss_weights.w_l1"),
    ] {
        match ModelConfig::from_json(patch) {
            Err(Error::Validation { field: f, .. }) => assert_eq!(f, field, "{patch}"),
            other => panic!("{patch}: {other:?}"),
        }
    }
    assert!(matches!(ModelConfig::from_json(r#"{"colour": 1}"#), Err(Error::Json(_))));
}

#[test]
fn images_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let img = Tensor::from_fn4([1, 3, 3, 5], |_, c, y, x| ((c * 15 + y * 5 + x) as f32) / 44.0);
    let p = dir.path().join("a.ppm");
    write_image(&p, &img).unwrap();
    let back = read_image(&p).unwrap();
    assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 255.0 + 1e-7);
    let g = Tensor::from_fn4([1, 1, 2, 2], |_, _, y, x| (y * 2 + x) as f32 / 3.0);
    let p = dir.path().join("g.pgm");
    write_gray16(&p, &g).unwrap();
    assert!(read_image(&p).unwrap().max_abs_diff(&g).unwrap() <= 0.5 / 65535.0 + 1e-7);
    assert!(read_image(&dir.path().join("missing.ppm")).unwrap_err().is_io());
}

#[test]
fn malformed_images_are_format_errors() {
    for bytes in [
        &b"P3\n1 1\n255\n\x00\x00\x00"[..],
        b"P6\n1 1\n255\n\x00\x00",
        b"P6\n0 1\n255\n",
        b"P6\n1 1\n70000\n\x00\x00\x00\x00\x00\x00",
        b"P6\nx 1\n255\n\x00\x00\x00",
        b"P",
    ] {
        let err = decode_pnm(bytes).unwrap_err();
        assert!(matches!(err, Error::ImageFormat(_)), "{err}");
    }
    let commented = b"P5\n# note\n2 1\n255\n\x00\xff";
    assert_eq!(decode_pnm(commented).unwrap().data(), &[0.0, 1.0]);
}

const CONFIG_KEYS: &[&str] = &[
    "channels", "depths", "heads", "estimator_channels", "feature_dim", "recon_channels",
    "rel_pos_window", "alpha", "beta", "tau", "eta", "max_cache_len", "q_a", "t_min", "lambda",
    "t_mid", "fd_epsilon", "attribution_steps", "attribution_max_extent", "loss_weights",
    "ln_eps", "bn_eps", "leaky_slope", "drop_path_rate", "seed",
];

fn json_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(|v| Value::from(v)),
        (-1e6f64..1e6).prop_map(|v| Value::from(v)),
        "[a-z]{0,6}".prop_map(Value::String),
        prop::collection::vec(0u64..100, 0..6).prop_map(|v| Value::from(v)),
    ]
}

proptest! {
    #[test]
    fn corrupted_configs_never_panic(edits in prop::collection::vec((0..CONFIG_KEYS.len(), json_value()), 1..5)) {
        let mut v: Value = serde_json::from_str(&ModelConfig::default().to_json()).unwrap();
        for (k, val) in edits {
            v[CONFIG_KEYS[k]] = val;
        }
        match ModelConfig::from_json(&v.to_string()) {
            Ok(cfg) => prop_assert!(cfg.validate().is_ok()),
            Err(e) => {
                let expected = matches!(e, Error::Validation { .. } | Error::Json(_));
                prop_assert!(expected, "unexpected error {}", e);
            }
        }
    }

    #[test]
    fn truncated_config_text_never_panics(cut in 0usize..2000) {
        let text = ModelConfig::default().to_json();
        let _ = ModelConfig::from_json(&text[..cut.min(text.len())]);
    }

    #[test]
    fn pnm_round_trip_is_quantization_exact(w in 1usize..9, h in 1usize..9, seed in any::<u32>(), deep in any::<bool>()) {
        let maxval = if deep { 65535 } else { 255 };
        let img = Tensor::from_fn4([1, 3, h, w], |_, c, y, x| {
            ((seed as usize).wrapping_mul(31).wrapping_add(c * 97 + y * 13 + x * 7) % 1000) as f32 / 999.0
        });
        let bytes = encode_pnm(&img, maxval).unwrap();
        let dec = decode_pnm(&bytes).unwrap();
        prop_assert!(dec.max_abs_diff(&img).unwrap() <= 0.5 / maxval as f32 + 1e-7);
        prop_assert_eq!(encode_pnm(&dec, maxval).unwrap(), bytes);
    }
}
