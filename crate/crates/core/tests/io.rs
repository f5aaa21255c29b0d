use auhm_core::codec::{default_au_specs, AuLabels, CodecConfig, HeatmapStack, DEFAULT_AU_IDS};
use auhm_core::image::{GrayImage, Rgb8Image};
use auhm_core::io::*;
use auhm_core::model::{Model, ModelConfig};
use auhm_core::registration::{LandmarkSet, Point, RegistrationConfig};
use auhm_core::synth::{generate_samples, GENERATOR};
use auhm_core::Error;
use proptest::prelude::*;

fn tiny_checkpoint(seed: u64) -> Checkpoint {
    let cfg = ModelConfig {
        input_size: 16,
        heatmap_size: 4,
        n_aus: 5,
        base_channels: 8,
        mid_channels: 4,
        hourglass_depth: 1,
    };
    Checkpoint {
        model: Model::build(&cfg, seed).unwrap(),
        au_specs: default_au_specs(),
        codec: CodecConfig::for_heatmap_size(4),
        registration: RegistrationConfig::for_size(16),
        seed,
    }
}

/// Every file under `dir` as (relative path, contents), sorted.
fn tree(dir: &std::path::Path) -> Vec<(std::path::PathBuf, Vec<u8>)> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut Vec<(std::path::PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/model.auhm");
    let ck = tiny_checkpoint(8);
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.model.params(), ck.model.params());
    assert_eq!(back.model.running_stats(), ck.model.running_stats());
    assert_eq!(back.model.config(), ck.model.config());
    assert_eq!(back.seed, 8);
    assert_eq!(encode_checkpoint(&back), std::fs::read(&path).unwrap());

    let raw = std::fs::read(&path).unwrap();
    let end = raw.windows(2).position(|w| w == b"\n\n").unwrap();
    let header = std::str::from_utf8(&raw[..end]).unwrap();
    assert!(header.starts_with("AUHM1\n"));
    assert!(header.lines().any(|l| l == "seed=8"), "{header}");
}

#[test]
fn checkpoint_rejects_bad_input() {
    let bytes = encode_checkpoint(&tiny_checkpoint(1));
    let mut wrong = bytes.clone();
    wrong[4] = b'9';
    assert!(matches!(decode_checkpoint(&wrong), Err(Error::Format(_))));
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Parse { .. })));
    assert!(decode_checkpoint(b"").is_err());
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io { .. })));
}

#[test]
fn dataset_rewrite_is_bitwise_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let samples = generate_samples(4, 9);
    write_dataset(a.path(), GENERATOR, Some(9), &DEFAULT_AU_IDS, &samples).unwrap();
    let loaded = load_dataset(a.path()).unwrap();
    assert_eq!(loaded.len(), 4);
    assert_eq!(loaded.au_ids(), &DEFAULT_AU_IDS);
    assert_eq!(loaded.manifest.seed, Some(9));
    write_dataset(b.path(), GENERATOR, Some(9), loaded.au_ids(), &loaded.samples).unwrap();
    assert_eq!(tree(a.path()), tree(b.path()));
}

#[test]
fn dataset_with_missing_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), GENERATOR, None, &DEFAULT_AU_IDS, &generate_samples(2, 1)).unwrap();
    std::fs::remove_file(dir.path().join("landmarks/s00001.pts")).unwrap();
    assert!(load_dataset(dir.path()).is_err());
}

#[test]
fn heatmap_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.bin");
    let data: Vec<f64> = (0..2 * 9).map(|i| f64::from(i as f32 * 0.25)).collect();
    let stack = HeatmapStack::from_data(2, 3, data).unwrap();
    write_heatmaps(&path, &stack, &[6, 17]).unwrap();
    let (ids, back) = read_heatmaps(&path).unwrap();
    assert_eq!(ids, vec![6, 17]);
    assert_eq!(back, stack);
    assert!(write_heatmaps(&path, &stack, &[6]).is_err());
}

#[test]
fn label_csv_rejects_wrong_width() {
    let err = decode_labels_csv(b"file,AU6,AU10\na.ppm,1.0\n").unwrap_err();
    assert!(matches!(err, Error::Parse { .. } | Error::Label(_) | Error::Csv(_)), "{err:?}");
}

fn landmark_set() -> impl Strategy<Value = LandmarkSet> {
    prop::collection::vec((-1e4f64..1e4, -1e4f64..1e4), 66)
        .prop_map(|v| LandmarkSet::new(v.into_iter().map(|(x, y)| Point::new(x, y)).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ppm_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u8>()) {
        let data: Vec<u8> = (0..3 * w * h).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let img = Rgb8Image::new(w, h, data).unwrap();
        let bytes = encode_ppm(&img);
        let back = decode_ppm(&bytes).unwrap();
        prop_assert_eq!(encode_ppm(&back), bytes);
        prop_assert_eq!(back, img);
    }

    #[test]
    fn pgm_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u8>()) {
        let data: Vec<u8> = (0..w * h).map(|i| (i as u8).wrapping_mul(17) ^ seed).collect();
        let img = GrayImage::new(w, h, data).unwrap();
        prop_assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
    }

    #[test]
    fn landmark_text_is_a_fixed_point(lms in landmark_set()) {
        let text = format_landmarks(&lms);
        let back = parse_landmarks(&text).unwrap();
        prop_assert_eq!(format_landmarks(&back), text);
        for (p, q) in lms.points().iter().zip(back.points()) {
            prop_assert!((p.x - q.x).abs() <= 5e-7 && (p.y - q.y).abs() <= 5e-7);
        }
    }

    #[test]
    fn label_csv_round_trip(rows in prop::collection::vec(prop::collection::vec(0.0f64..=5.0, 5), 0..20)) {
        let table = LabelTable {
            au_ids: DEFAULT_AU_IDS.to_vec(),
            rows: rows
                .into_iter()
                .enumerate()
                .map(|(i, v)| (format!("images/s{i:05}.ppm"), AuLabels::new(v).unwrap()))
                .collect(),
        };
        let bytes = encode_labels_csv(&table).unwrap();
        let back = decode_labels_csv(&bytes).unwrap();
        prop_assert_eq!(encode_labels_csv(&back).unwrap(), bytes);
        prop_assert_eq!(back, table);
    }

    #[test]
    fn heatmap_bytes_round_trip(vals in prop::collection::vec(-10.0f32..10.0, 2 * 16)) {
        let stack = HeatmapStack::from_data(2, 4, vals.iter().map(|&v| f64::from(v)).collect()).unwrap();
        let bytes = encode_heatmaps(&stack, &[12, 14]).unwrap();
        let (ids, back) = decode_heatmaps(&bytes).unwrap();
        prop_assert_eq!(ids, vec![12, 14]);
        prop_assert_eq!(encode_heatmaps(&back, &[12, 14]).unwrap(), bytes);
    }
}
