//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The end-to-end criteria drive the `auhm` binary on freshly generated
//! synthetic data; the rest call the library directly.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use auhm_core::augment::AugmentConfig;
use auhm_core::codec::{decode, default_au_specs, encode_all, encode_au, AuLabels, CodecConfig, DEFAULT_AU_IDS};
use auhm_core::gradcheck::{check_model, check_op, random_tensor, GradReport};
use auhm_core::image::{GrayImage, Rgb8Image};
use auhm_core::io;
use auhm_core::metrics::icc31;
use auhm_core::model::{Model, ModelConfig};
use auhm_core::registration::{LandmarkSet, Point};
use auhm_core::synth::generate_samples;
use auhm_core::tensor::{huber, BatchNormMode, Graph, Tensor};
use auhm_core::train::{overfit, TrainConfig};

const TRAIN_SEED: u64 = 1;
const VAL_SEED: u64 = 2;
const SIGMAS: [f64; 6] = [0.0, 2.0, 5.0, 13.0, 25.0, 40.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn auhm(args: &[&str]) -> Result<String> {
    let out = Command::new(env!("CARGO_BIN_EXE_auhm"))
        .args(args)
        .output()
        .context("running auhm")?;
    if !out.status.success() {
        bail!("auhm {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim());
    }
    Ok(String::from_utf8(out.stdout)?)
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

// --- 1 -----------------------------------------------------------------------

fn codec_exactness() -> Result<Outcome> {
    let specs = default_au_specs();
    let cfg = CodecConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let labels = AuLabels::new((0..5).map(|_| rng.random_range(0.0..=5.0)).collect())?;
        let pts = (0..66)
            .map(|_| Point::new(rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)))
            .collect();
        let stack = encode_all(&labels, &LandmarkSet::new(pts)?, &specs, &cfg)?;
        for (g, w) in decode(&stack).values().iter().zip(labels.values()) {
            worst = worst.max((g - w).abs());
        }
    }
    let t = start.elapsed();
    verdict(
        worst <= 1e-6 && t.as_secs_f64() < 10.0,
        format!("max |decode − label| {worst:.1e} over 1000 vectors in {}", secs(t)),
    )
}

// --- 2 -----------------------------------------------------------------------

fn spot_values() -> Result<Outcome> {
    let cfg = CodecConfig::default();
    let mut ok = true;
    let mut notes = Vec::new();
    for &i in &[0.3, 1.0, 2.0, 3.7, 5.0] {
        let map = encode_au(i, &[(32, 32)], &cfg)?;
        let at = |x: i64, y: i64| map[(y * 64 + x) as usize];
        ok &= at(32, 32) == i;
        let r = (6.0 * i) as i64;
        for y in 0..64 {
            for x in 0..64 {
                if (x - 32i64).abs().max((y - 32i64).abs()) > r && at(x, y) != 0.0 {
                    ok = false;
                    notes.push(format!("I={i} nonzero at ({x},{y})"));
                }
            }
        }
    }
    let map = encode_au(2.0, &[(32, 32)], &cfg)?;
    let off = (map[32 * 64 + 34] - 2.0 * (-0.5f64).exp()).abs();
    ok &= off <= 1e-9;
    notes.push(format!("centre = I exactly; |v(2,0) − 2e^-0.5| = {off:.1e}; support within 6·I"));
    verdict(ok, notes.join("; "))
}

// --- 3 -----------------------------------------------------------------------

fn gradients() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    let mut track = |name: &str, r: GradReport| {
        if r.max_rel_err >= worst.0 {
            worst = (r.max_rel_err, format!("{name}: {}", r.worst));
        }
    };
    let t = |shape: &[usize], lo: f64, hi: f64, seed: u64| random_tensor(shape, lo, hi, seed);
    let (x, w, b) = (t(&[2, 3, 7, 6], -1.0, 1.0, 1), t(&[4, 3, 3, 3], -0.5, 0.5, 2), t(&[4], -0.5, 0.5, 3));
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        track("conv", check_op(&[x.clone(), w.clone(), b.clone()], |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad))?);
    }
    let (bx, gm, bt) = (t(&[3, 4, 3, 3], -2.0, 2.0, 4), t(&[4], 0.5, 1.5, 5), t(&[4], -0.5, 0.5, 6));
    track(
        "batchnorm(train)",
        check_op(&[bx.clone(), gm.clone(), bt.clone()], |g, v| Ok(g.batchnorm2d(v[0], v[1], v[2], BatchNormMode::Train)?.0))?,
    );
    let (mean, var) = ([0.1, -0.2, 0.3, 0.0], [0.5, 1.0, 2.0, 0.8]);
    track(
        "batchnorm(eval)",
        check_op(&[bx, gm, bt], |g, v| {
            Ok(g.batchnorm2d(v[0], v[1], v[2], BatchNormMode::Eval { mean: &mean, var: &var })?.0)
        })?,
    );
    let a = t(&[2, 3, 6, 4], -1.0, 1.0, 7);
    track("relu", check_op(&[a.clone()], |g, v| Ok(g.relu(v[0])))?);
    track("maxpool", check_op(&[a.clone()], |g, v| g.maxpool2(v[0]))?);
    track("upsample", check_op(&[a.clone()], |g, v| g.upsample_nearest2(v[0]))?);
    let c = t(&[2, 3, 6, 4], -1.0, 1.0, 8);
    track("add", check_op(&[a.clone(), c.clone()], |g, v| g.add(v[0], v[1]))?);
    track("mul", check_op(&[a.clone(), c.clone()], |g, v| g.mul(v[0], v[1]))?);
    track("sum", check_op(&[a.clone()], |g, v| Ok(g.sum(v[0])))?);
    let pred = t(&[2, 3, 4, 4], -3.0, 3.0, 9);
    let target = t(&[2, 3, 4, 4], -1.0, 1.0, 10);
    track("huber", check_op(&[pred], |g, v| g.huber_loss(v[0], &target, &[0.2, 0.5, 0.3]))?);
    let tiny = ModelConfig {
        input_size: 16,
        heatmap_size: 4,
        n_aus: 2,
        base_channels: 8,
        mid_channels: 4,
        hourglass_depth: 1,
    };
    let model = Model::<f64>::build(&tiny, 3)?;
    let net = check_model(&model, &t(&[2, 3, 16, 16], 0.0, 1.0, 11), 1)?;
    let checked = net.checked;
    track("network", net);
    let elapsed = start.elapsed();
    verdict(
        worst.0 <= 1e-4 && elapsed.as_secs_f64() < 60.0,
        format!(
            "max rel err {:.1e} ({}); whole network {checked} entries; {}",
            worst.0,
            worst.1,
            secs(elapsed)
        ),
    )
}

// --- 4 -----------------------------------------------------------------------

fn huber_values() -> Result<Outcome> {
    let graph_loss = |r: f64| -> Result<f64> {
        let mut g = Graph::<f64>::new();
        let p = g.input(Tensor::new(&[1, 1, 1, 1], vec![r])?);
        let l = g.huber_loss(p, &Tensor::zeros(&[1, 1, 1, 1]), &[1.0])?;
        Ok(g.value(l).item())
    };
    let vals = [huber(0.5f64), huber(2.0), graph_loss(0.5)?, graph_loss(2.0)?];
    let below = huber(1.0 - 1e-12f64);
    let at = huber(1.0f64);
    let ok = vals[0] == 0.125
        && vals[1] == 1.5
        && vals[2] == 0.125
        && vals[3] == 1.5
        && at == 0.5
        && (below - 0.5).abs() < 1e-11;
    verdict(ok, format!("loss(0.5)={}, loss(2)={}, loss(1⁻)={below}, loss(1)={at}", vals[0], vals[1]))
}

// --- 5 -----------------------------------------------------------------------

/// Two-way ANOVA over (subject × rater) with two raters, consistency form.
fn anova_icc(truth: &[f64], pred: &[f64]) -> f64 {
    let n = truth.len();
    let k = 2.0;
    let rows: Vec<[f64; 2]> = truth.iter().zip(pred).map(|(&a, &b)| [a, b]).collect();
    let grand = rows.iter().flatten().sum::<f64>() / (n as f64 * k);
    let ss_total: f64 = rows.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_rows: f64 = rows.iter().map(|r| k * ((r[0] + r[1]) / k - grand).powi(2)).sum();
    let ss_cols: f64 = (0..2)
        .map(|j| {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            n as f64 * (m - grand).powi(2)
        })
        .sum();
    let ss_err = ss_total - ss_rows - ss_cols;
    let bms = ss_rows / (n as f64 - 1.0);
    let ems = ss_err / ((n as f64 - 1.0) * (k - 1.0));
    (bms - ems) / (bms + (k - 1.0) * ems)
}

fn icc_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let truth: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..5.0)).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t * rng.random_range(0.3..1.2) + rng.random_range(-1.0..1.0)).collect();
        worst = worst.max((icc31(&truth, &pred)? - anova_icc(&truth, &pred)).abs());
    }
    let x: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..5.0)).collect();
    let shifted: Vec<f64> = x.iter().map(|v| v + 1.75).collect();
    let same = (icc31(&x, &x)? - 1.0).abs();
    let offset = (icc31(&x, &shifted)? - 1.0).abs();
    verdict(
        worst <= 1e-10 && same <= 1e-12 && offset <= 1e-12,
        format!("max |icc31 − ANOVA| {worst:.1e} on 100 pairs; |icc(x,x)−1| {same:.0e}; |icc(x,x+c)−1| {offset:.0e}"),
    )
}

// --- 6 -----------------------------------------------------------------------

fn overfit_eight() -> Result<Outcome> {
    let samples = generate_samples(8, 31);
    let config = TrainConfig {
        augment: AugmentConfig::none(),
        ..TrainConfig::toy()
    };
    let start = Instant::now();
    let r = overfit(&samples, &DEFAULT_AU_IDS, &config, 2000, 1e-3)?;
    let t = start.elapsed();
    verdict(
        r.reached && t.as_secs() < 300,
        format!("mean per-pixel Huber {:.2e} after {} steps in {}", r.loss, r.steps, secs(t)),
    )
}

// --- 7, 8 ----------------------------------------------------------------------

struct Trained {
    model: PathBuf,
    val: PathBuf,
}

/// Parses the `Avg` column of an `eval` report.
fn eval_averages(csv: &str) -> Result<(f64, f64)> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().context("empty report")?.split(',').collect();
    let avg = header.iter().position(|h| *h == "Avg").context("no Avg column")?;
    let mut get = |name: &str| -> Result<f64> {
        let row: Vec<&str> = lines.next().context("short report")?.split(',').collect();
        ensure!(row[0] == name, "expected {name} row");
        Ok(row[avg].parse()?)
    };
    Ok((get("ICC")?, get("MSE")?))
}

fn end_to_end(work: &Path) -> Result<(Outcome, Option<Trained>)> {
    let start = Instant::now();
    let (train, val, model) = (work.join("train"), work.join("val"), work.join("toy.auhm"));
    auhm(&["synth", "--n", "500", "--seed", &TRAIN_SEED.to_string(), "--out", s(&train)])?;
    auhm(&["synth", "--n", "100", "--seed", &VAL_SEED.to_string(), "--out", s(&val)])?;
    let config = configs_dir().join("toy.toml");
    auhm(&["train", "--data", s(&train), "--val", s(&val), "--config", s(&config), "--out", s(&model)])?;
    let report = auhm(&["eval", "--model", s(&model), "--data", s(&val), "--report", s(&work.join("eval.csv"))])?;
    let t = start.elapsed();
    let (icc, mse) = eval_averages(&report)?;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let outcome = Outcome {
        pass: icc >= 0.8 && mse <= 0.5 && t.as_secs() < 30 * 60,
        detail: format!("mean ICC {icc:.3}, mean MSE {mse:.3} on 100 held-out; {} on {cores} core(s)", secs(t)),
    };
    Ok((outcome, Some(Trained { model, val })))
}

fn robustness(work: &Path, trained: &Trained) -> Result<Outcome> {
    let sigmas = SIGMAS.map(|v| v.to_string()).join(",");
    let report = work.join("robustness.csv");
    auhm(&[
        "robustness",
        "--model",
        s(&trained.model),
        "--data",
        s(&trained.val),
        "--sigmas",
        &sigmas,
        "--report",
        s(&report),
    ])?;
    let icc: Vec<f64> = std::fs::read_to_string(&report)?
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).context("no icc column")?.parse().context("icc value"))
        .collect::<Result<_>>()?;
    ensure!(icc.len() == SIGMAS.len(), "expected {} rows", SIGMAS.len());
    let monotone = icc.windows(2).all(|w| w[1] <= w[0] + 0.02);
    let drop = icc[2] - icc[5];
    let curve: Vec<String> = SIGMAS.iter().zip(&icc).map(|(s, i)| format!("{s}:{i:.3}")).collect();
    verdict(monotone && drop >= 0.1, format!("ICC by sigma [{}]; ICC(5) − ICC(40) = {drop:.3}", curve.join(" ")))
}

// --- 9 -----------------------------------------------------------------------

fn parameter_budget() -> Result<Outcome> {
    let m = Model::<f32>::build(&ModelConfig::default(), 0)?;
    let n = m.param_count();
    let y = m.predict(random_tensor(&[1, 3, 256, 256], 0.0, 1.0, 1).cast())?;
    let dev = (n as f64 - 3.5e6).abs() / 3.5e6;
    verdict(
        dev <= 0.15 && y.shape() == [1, 5, 64, 64],
        format!("{n} parameters ({:+.1}% vs 3.5M); output {:?}", (n as f64 / 3.5e6 - 1.0) * 100.0, y.shape()),
    )
}

// --- 10 ----------------------------------------------------------------------

fn determinism(work: &Path) -> Result<Outcome> {
    let (train, val) = (work.join("det-train"), work.join("det-val"));
    auhm(&["synth", "--n", "20", "--seed", "10", "--out", s(&train)])?;
    auhm(&["synth", "--n", "10", "--seed", "11", "--out", s(&val)])?;
    let config = configs_dir().join("toy.toml");
    let mut histories = Vec::new();
    let mut models = Vec::new();
    for run in ["a", "b"] {
        let model = work.join(format!("det-{run}.auhm"));
        let history = work.join(format!("det-{run}.csv"));
        auhm(&[
            "train", "--data", s(&train), "--val", s(&val), "--config", s(&config), "--out", s(&model), "--seed", "7",
            "--epochs", "2", "--history", s(&history),
        ])?;
        histories.push(std::fs::read(&history)?);
        models.push(std::fs::read(&model)?);
    }
    let same_history = histories[0] == histories[1];
    let same_model = models[0] == models[1];

    // every file format: decode → encode reproduces the bytes
    let mut formats = Vec::new();
    let ck = io::decode_checkpoint(&models[0])?;
    formats.push(("checkpoint", io::encode_checkpoint(&ck) == models[0]));
    let sample = &io::load_dataset(&train)?.samples[0];
    let ppm = io::encode_ppm(&sample.image);
    formats.push(("ppm", io::encode_ppm(&io::decode_ppm(&ppm)?) == ppm));
    let gray = GrayImage::new(7, 5, (0..35).map(|v| (v * 7) as u8).collect())?;
    let pgm = io::encode_pgm(&gray);
    formats.push(("pgm", io::encode_pgm(&io::decode_pgm(&pgm)?) == pgm));
    let pts = io::format_landmarks(&sample.landmarks);
    formats.push(("landmarks", io::format_landmarks(&io::parse_landmarks(&pts)?) == pts));
    let csv = std::fs::read(train.join("labels.csv"))?;
    formats.push(("labels", io::encode_labels_csv(&io::decode_labels_csv(&csv)?)? == csv));
    let stack = encode_all(
        &sample.labels,
        &LandmarkSet::new((0..66).map(|i| Point::new(20.0 + i as f64 * 3.0, 30.0 + (i % 9) as f64 * 20.0)).collect())?,
        &default_au_specs(),
        &CodecConfig::default(),
    )?;
    let maps = io::encode_heatmaps(&stack, &DEFAULT_AU_IDS)?;
    let (ids, back) = io::decode_heatmaps(&maps)?;
    formats.push(("heatmaps", io::encode_heatmaps(&back, &ids)? == maps));
    let rgb = Rgb8Image::new(2, 1, vec![0, 128, 255, 1, 2, 3])?;
    formats.push(("rgb8", Rgb8Image::from_rgb(&rgb.to_rgb()) == rgb));
    let copy = work.join("det-copy");
    let ds = io::load_dataset(&train)?;
    io::write_dataset(&copy, &ds.manifest.generator, ds.manifest.seed, ds.au_ids(), &ds.samples)?;
    let same_tree = ["manifest.json", "labels.csv", "images/s00003.ppm", "landmarks/s00003.pts"]
        .iter()
        .all(|f| std::fs::read(train.join(f)).ok() == std::fs::read(copy.join(f)).ok());
    formats.push(("dataset", same_tree));

    let bad: Vec<&str> = formats.iter().filter(|f| !f.1).map(|f| f.0).collect();
    verdict(
        same_history && same_model && bad.is_empty(),
        format!(
            "history identical: {same_history}; checkpoint identical: {same_model}; round-trip failures: {}",
            if bad.is_empty() { "none".to_string() } else { bad.join(",") }
        ),
    )
}

// --- 11 ----------------------------------------------------------------------

fn single_au(work: &Path) -> Result<Outcome> {
    let (train, val, model) = (work.join("det-train"), work.join("det-val"), work.join("single.auhm"));
    let base = std::fs::read_to_string(configs_dir().join("toy.toml"))?;
    let config = work.join("single.toml");
    std::fs::write(&config, format!("au_subset = [12]\n{base}"))?;
    auhm(&["train", "--data", s(&train), "--val", s(&val), "--config", s(&config), "--out", s(&model), "--epochs", "1"])?;
    let ck = io::load_checkpoint(&model)?;
    let report = auhm(&["eval", "--model", s(&model), "--data", s(&val), "--report", s(&work.join("single.csv"))])?;
    let sample = io::load_dataset(&val)?;
    let first = &sample.manifest.samples[0];
    let infer = auhm(&[
        "infer",
        "--model",
        s(&model),
        "--image",
        s(&val.join(&first.image)),
        "--landmarks",
        s(&val.join(&first.landmarks)),
    ])?;
    let header = report.lines().next().unwrap_or_default();
    let ok = ck.model.config().n_aus == 1 && ck.au_ids() == [12] && header == "metric,AU12,Avg" && infer.lines().count() == 1;
    verdict(ok, format!("channels {}; report header `{header}`; infer `{}`", ck.model.config().n_aus, infer.trim()))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let w = work.path();
    let mut results: Vec<(u32, &str, Result<Outcome>)> = Vec::new();
    let mut run = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Result<Outcome>| {
        let r = f();
        let line = match &r {
            Ok(o) => format!("{} [{n:>2}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail),
            Err(e) => format!("FAIL [{n:>2}] {name}: error: {e:#}"),
        };
        println!("{line}");
        results.push((n, name, r));
    };

    run(1, "codec exactness", &mut codec_exactness);
    run(2, "heatmap spot values", &mut spot_values);
    run(3, "gradient checks", &mut gradients);
    run(4, "huber branches", &mut huber_values);
    run(5, "icc oracle", &mut icc_oracle);
    run(6, "overfit eight samples", &mut overfit_eight);
    let mut trained = None;
    run(7, "end-to-end synthetic", &mut || {
        let (o, t) = end_to_end(w)?;
        trained = t;
        Ok(o)
    });
    run(8, "robustness shape", &mut || match &trained {
        Some(t) => robustness(w, t),
        None => bail!("no model from the end-to-end run"),
    });
    run(9, "parameter budget", &mut parameter_budget);
    run(10, "determinism", &mut || determinism(w));
    run(11, "single-AU ablation", &mut || single_au(w));

    let failed: Vec<u32> = results
        .iter()
        .filter(|(_, _, r)| !matches!(r, Ok(o) if o.pass))
        .map(|(n, _, _)| *n)
        .collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
