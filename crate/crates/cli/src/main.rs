use std::path::{Path, PathBuf};
use std::process::ExitCode;

use andehaze_core::attribution::{paam, PathConfig};
use andehaze_core::bench_cache::{bench_cache, default_schedule, parse_schedule, to_csv, BenchSettings};
use andehaze_core::haze::{synthesize_haze, HazeScene};
use andehaze_core::io::{read_image, write_atomic, write_gray16, write_image};
use andehaze_core::metrics::{psnr, ssim};
use andehaze_core::model::init_weights;
use andehaze_core::{selftest, Error, Model, ModelConfig, Tensor, WeightStore};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser)]
#[command(name = "andehaze", version, about = "Atmosphere-aware single-image dehazing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    /// Weight manifest (`<stem>.json` next to `<stem>.bin`); seeded init if omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Model configuration JSON; defaults if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Dehaze a PPM image.
    Dehaze {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Reference image; prints PSNR/SSIM of the output as JSON.
        #[arg(long)]
        eval: Option<PathBuf>,
        /// Directory for dark channel, transmission and upsampled-feature dumps.
        #[arg(long)]
        debug_dumps: Option<PathBuf>,
    },
    /// Compute the physics-aware attribution map of an image.
    Attribute {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lambda: Option<f32>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Render a hazy image from a clean one.
    Synth {
        clean: PathBuf,
        out_prefix: PathBuf,
        /// Constant transmission.
        #[arg(long, conflicts_with = "t_map")]
        t: Option<f32>,
        /// Transmission map as a PGM matching the clean image.
        #[arg(long)]
        t_map: Option<PathBuf>,
        /// Atmospheric light as `r,g,b`.
        #[arg(long = "A", value_name = "R,G,B")]
        a: Option<String>,
    },
    /// Compare cache length and memory with eviction on and off.
    BenchCache {
        /// JSON array of `{h, w, c_a_mean}` steps.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the embedded invariant suite.
    Selftest,
}

const DEFAULT_T: f32 = 0.6;
const DEFAULT_A: [f32; 3] = [0.9, 0.9, 0.9];

fn load_config(path: Option<&Path>) -> Result<ModelConfig, Error> {
    match path {
        Some(p) => ModelConfig::load(p),
        None => Ok(ModelConfig::default()),
    }
}

fn load_model(args: &ModelArgs) -> Result<Model, Error> {
    let cfg = load_config(args.config.as_deref())?;
    let store = match &args.weights {
        Some(p) => WeightStore::load(p)?,
        None => init_weights(&cfg, cfg.seed),
    };
    Model::from_store(&store, &cfg)
}

fn write_json(path: &Path, value: &Value) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// `psnr` as a JSON number, or the string `"inf"` for identical images.
fn psnr_json(v: f64) -> Value {
    if v.is_infinite() {
        json!("inf")
    } else {
        json!(v)
    }
}

/// Min-max stretch of a single-channel map to `[0, 1]`.
fn normalize(map: &Tensor) -> Tensor {
    let (lo, hi) = map.min_max();
    if hi > lo {
        map.map(|v| (v - lo) / (hi - lo))
    } else {
        map.map(|_| 0.0)
    }
}

fn dehaze(
    input: &Path,
    output: &Path,
    model: &ModelArgs,
    eval: Option<&Path>,
    dumps: Option<&Path>,
) -> Result<(), Error> {
    let model = load_model(model)?;
    let image = read_image(input)?;
    let out = model.dehaze(&image)?;
    let j = out.image();
    write_image(output, &j)?;
    if let Some(dir) = dumps {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        write_gray16(&dir.join("dark_channel.pgm"), out.atmosphere.dark_channel())?;
        write_gray16(
            &dir.join("transmission.pgm"),
            &out.atmosphere.transmission().map(|v| v.clamp(0.0, 1.0)),
        )?;
        let (_, _, h, w) = out.upsampled.dims4()?;
        let rgb = Tensor::from_fn4([1, 3, h, w], |_, c, y, x| {
            out.upsampled.at4(0, c.min(out.upsampled.shape()[1] - 1), y, x)
        });
        write_image(&dir.join("upsampled.ppm"), &rgb.map(|v| v.clamp(0.0, 1.0)))?;
    }
    if let Some(reference) = eval {
        let reference = read_image(reference)?;
        let report = json!({
            "psnr": psnr_json(psnr(&j, &reference, 1.0)?),
            "ssim": ssim(&j, &reference)?,
        });
        println!("{report}");
    }
    Ok(())
}

fn attribute(
    input: &Path,
    output: &Path,
    steps: Option<usize>,
    lambda: Option<f32>,
    model: &ModelArgs,
) -> Result<(), Error> {
    let model = load_model(model)?;
    let image = read_image(input)?;
    let mut cfg = PathConfig::from(model.config());
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(l) = lambda {
        cfg.lambda = l;
    }
    let result = paam(&model, &image, &cfg)?;
    write_gray16(output, &normalize(&result.map))?;
    let (lo, hi) = result.map.min_max();
    let m = &result.meta;
    write_json(
        &sidecar_path(output),
        &json!({
            "steps": m.steps,
            "lambda": m.lambda,
            "t_mid": m.t_mid,
            "fd_epsilon": m.fd_epsilon,
            "min": lo,
            "max": hi,
            "baseline_sha256": m.baseline_sha256,
        }),
    )
}

fn parse_rgb(text: &str) -> Result<[f32; 3], Error> {
    let parts: Vec<f32> = text
        .split(',')
        .map(|p| p.trim().parse::<f32>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::Validation {
            field: "A".into(),
            reason: format!("`{text}` is not three comma-separated numbers"),
        })?;
    match parts[..] {
        [r, g, b] if parts.iter().all(|v| (0.0..=1.0).contains(v)) => Ok([r, g, b]),
        _ => Err(Error::Validation {
            field: "A".into(),
            reason: format!("`{text}` must be three values in [0, 1]"),
        }),
    }
}

fn synth(
    clean: &Path,
    prefix: &Path,
    t: Option<f32>,
    t_map: Option<&Path>,
    a: Option<&str>,
) -> Result<(), Error> {
    let image = read_image(clean)?;
    let (_, c, h, w) = image.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!("clean image must be RGB, got {c} channels")));
    }
    let a = a.map(parse_rgb).transpose()?.unwrap_or(DEFAULT_A);
    let (t_tensor, t_source) = match (t, t_map) {
        (_, Some(p)) => (read_image(p)?, json!({ "map": p.display().to_string() })),
        (value, None) => {
            let v = value.unwrap_or(DEFAULT_T);
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation {
                    field: "t".into(),
                    reason: format!("{v} must lie in [0, 1]"),
                });
            }
            (Tensor::full(&[1, 1, h, w], v), json!({ "constant": v }))
        }
    };
    let t_min = andehaze_core::haze::DEFAULT_T_MIN;
    let scene = HazeScene::new(image, t_tensor, a, t_min)?;
    let hazy = synthesize_haze(&scene)?;
    let base = prefix.to_string_lossy();
    write_image(Path::new(&format!("{base}.ppm")), &hazy)?;
    write_gray16(Path::new(&format!("{base}.t.pgm")), scene.transmission())?;
    write_json(
        Path::new(&format!("{base}.json")),
        &json!({
            "clean": clean.display().to_string(),
            "width": w,
            "height": h,
            "transmission": t_source,
            "atmospheric_light": a,
            "t_min": t_min,
        }),
    )
}

fn bench(schedule: Option<&Path>, config: Option<&Path>, out: Option<&Path>) -> Result<(), Error> {
    let cfg = load_config(config)?;
    let steps = match schedule {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            parse_schedule(&text)?
        }
        None => default_schedule(),
    };
    let csv = to_csv(&bench_cache(&steps, &BenchSettings::from(&cfg))?);
    match out {
        Some(p) => write_atomic(p, csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn run_selftest() -> bool {
    let results = selftest::run_all();
    for r in &results {
        println!(
            "{} {} ({}, {:.0} ms)",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail,
            r.elapsed.as_secs_f64() * 1e3
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    failed == 0
}

fn exit_code(err: &Error) -> u8 {
    if err.is_io() {
        EXIT_IO
    } else {
        EXIT_VALIDATION
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Dehaze {
            input,
            output,
            model,
            eval,
            debug_dumps,
        } => dehaze(input, output, model, eval.as_deref(), debug_dumps.as_deref()),
        Command::Attribute {
            input,
            output,
            steps,
            lambda,
            model,
        } => attribute(input, output, *steps, *lambda, model),
        Command::Synth {
            clean,
            out_prefix,
            t,
            t_map,
            a,
        } => synth(clean, out_prefix, *t, t_map.as_deref(), a.as_deref()),
        Command::BenchCache {
            schedule,
            config,
            out,
        } => bench(schedule.as_deref(), config.as_deref(), out.as_deref()),
        Command::Selftest => {
            return if run_selftest() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VALIDATION)
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("andehaze: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
