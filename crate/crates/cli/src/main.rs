//! `auhm`: synthetic data, training, evaluation and inference for heatmap
//! AU intensity estimation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use auhm_core::codec::{decode, default_au_specs, encode_all, parse_au_specs, AuLabels, CodecConfig, HeatmapStack};
use auhm_core::image::{batch_tensor, GrayImage};
use auhm_core::io::{
    load_checkpoint, load_dataset, read_heatmaps, read_landmarks, read_ppm, save_checkpoint, write_heatmaps,
    write_pgm, Checkpoint,
};
use auhm_core::registration::register;
use auhm_core::synth::generate_dataset;
use auhm_core::train::{evaluate_with_noise, train, Pipeline, TrainConfig};

#[derive(Parser)]
#[command(name = "auhm", version, about = "Heatmap regression of facial action unit intensities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Toy,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled face dataset.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and save the checkpoint with the best validation ICC.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// TOML training config; missing keys take the full-size defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Used when no config file is given.
        #[arg(long, value_enum, default_value = "toy")]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Per-epoch history CSV [default: <out>.history.csv].
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Per-AU ICC and MSE on a labelled dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Predict intensities for one face.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
    },
    /// Encode labels into a heatmap stack. Landmarks are in the registered frame.
    Encode {
        /// Comma-separated intensities, one per AU in map order.
        #[arg(long)]
        labels: String,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        heatmap_size: usize,
        /// AU map file (`AU<id>: (i,j);(k)` lines) [default: built-in map].
        #[arg(long)]
        au_map: Option<PathBuf>,
    },
    /// Print the intensities a heatmap stack decodes to.
    Decode {
        #[arg(long)]
        heatmaps: PathBuf,
    },
    /// Evaluate under increasing landmark noise.
    Robustness {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated noise standard deviations in source pixels.
        #[arg(long, default_value = "0,2,5,13,25,40")]
        sigmas: String,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write each predicted heatmap as a grayscale PGM (0–5 mapped to 0–255).
    DumpHeatmaps {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| anyhow::anyhow!("bad {what} `{t}`")))
        .collect()
}

fn load_config(path: Option<&Path>, preset: Preset) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(match preset {
            Preset::Toy => TrainConfig::toy(),
            Preset::Paper => TrainConfig::default(),
        }),
    }
}

fn predict_one(ck: &Checkpoint, image: &Path, landmarks: &Path) -> Result<HeatmapStack> {
    let img = read_ppm(image)?.to_rgb();
    let lms = read_landmarks(landmarks)?;
    let reg = register(&img, &lms, &ck.registration)?;
    let out = ck.model.predict(batch_tensor(&[&reg.image])?)?;
    Ok(HeatmapStack::from_tensor(&out, 0)?)
}

fn print_labels(ids: &[u32], labels: &AuLabels) {
    for (id, v) in ids.iter().zip(labels.values()) {
        println!("AU{id}: {v:.4}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { n, seed, out } => {
            let m = generate_dataset(n, seed, &out)?;
            eprintln!("wrote {} samples to {}", m.samples.len(), out.display());
        }
        Command::Train {
            data,
            val,
            config,
            preset,
            out,
            seed,
            epochs,
            history,
        } => {
            let mut cfg = load_config(config.as_deref(), preset)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let train_set = load_dataset(&data)?;
            let val_set = load_dataset(&val)?;
            let outcome = train(&train_set, &val_set, &cfg, |r| {
                let icc = r.eval.mean_icc().map_or("NA".to_string(), |v| format!("{v:.4}"));
                eprintln!(
                    "epoch {:>3}  loss {:.6}  val ICC {icc}  val MSE {:.4}  lr {:e}",
                    r.epoch,
                    r.loss,
                    r.eval.mean_mse(),
                    r.lr
                );
            })?;
            save_checkpoint(&out, &outcome.best)?;
            let history = history.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".history.csv");
                p.into()
            });
            std::fs::write(&history, outcome.history.to_csv())
                .with_context(|| format!("writing {}", history.display()))?;
            eprintln!("best epoch {}; saved {}", outcome.best_epoch, out.display());
        }
        Command::Eval { model, data, report } => {
            let ck = load_checkpoint(&model)?;
            let ds = load_dataset(&data)?;
            let e = evaluate_with_noise(&ck.model, &Pipeline::from_checkpoint(&ck), &ds, None)?;
            std::fs::write(&report, e.to_csv()).with_context(|| format!("writing {}", report.display()))?;
            print!("{}", e.to_csv());
        }
        Command::Infer { model, image, landmarks } => {
            let ck = load_checkpoint(&model)?;
            let stack = predict_one(&ck, &image, &landmarks)?;
            print_labels(&ck.au_ids(), &decode(&stack));
        }
        Command::Encode {
            labels,
            landmarks,
            out,
            heatmap_size,
            au_map,
        } => {
            let specs = match au_map {
                Some(p) => parse_au_specs(&std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => default_au_specs(),
            };
            let labels = AuLabels::new(parse_list(&labels, "intensity")?)?;
            let lms = read_landmarks(&landmarks)?;
            let stack = encode_all(&labels, &lms, &specs, &CodecConfig::for_heatmap_size(heatmap_size))?;
            let ids: Vec<u32> = specs.iter().map(|s| s.au_id).collect();
            write_heatmaps(&out, &stack, &ids)?;
        }
        Command::Decode { heatmaps } => {
            let (ids, stack) = read_heatmaps(&heatmaps)?;
            print_labels(&ids, &decode(&stack));
        }
        Command::Robustness {
            model,
            data,
            sigmas,
            report,
            seed,
        } => {
            let sigmas: Vec<f64> = parse_list(&sigmas, "sigma")?;
            if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0)) {
                bail!("sigma must be ≥ 0, got {s}");
            }
            let ck = load_checkpoint(&model)?;
            let ds = load_dataset(&data)?;
            let pipeline = Pipeline::from_checkpoint(&ck);
            let mut csv = String::from("sigma,icc,mse\n");
            for s in sigmas {
                let noise = (s > 0.0).then_some((s, seed));
                let e = evaluate_with_noise(&ck.model, &pipeline, &ds, noise)?;
                let icc = e.mean_icc().map_or("NA".to_string(), |v| v.to_string());
                let line = format!("{s},{icc},{}\n", e.mean_mse());
                print!("{line}");
                csv.push_str(&line);
            }
            std::fs::write(&report, csv).with_context(|| format!("writing {}", report.display()))?;
        }
        Command::DumpHeatmaps {
            model,
            image,
            landmarks,
            out,
        } => {
            let ck = load_checkpoint(&model)?;
            let stack = predict_one(&ck, &image, &landmarks)?;
            for (a, id) in ck.au_ids().iter().enumerate() {
                let bytes = stack
                    .channel(a)
                    .iter()
                    .map(|v| (v.clamp(0.0, 5.0) / 5.0 * 255.0).round() as u8)
                    .collect();
                let img = GrayImage::new(stack.size(), stack.size(), bytes)?;
                write_pgm(&out.join(format!("AU{id}.pgm")), &img)?;
            }
        }
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("AUHM_THREADS") {
        let n: usize = v.parse().with_context(|| format!("AUHM_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("AUHM_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.exit_code() == 0 => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", if first.starts_with("error:") { first.to_string() } else { format!("error: {first}") });
            return ExitCode::FAILURE;
        }
    };
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
