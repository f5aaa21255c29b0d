use std::time::Instant;

use auhm_core::codec::{
    centers_for_au, decode, default_au_specs, encode_all, encode_au, format_au_specs, parse_au_specs, AuLabels,
    AuSpec, CodecConfig, HeatmapStack,
};
use auhm_core::registration::{LandmarkSet, Point};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Landmarks scattered inside the central part of a 256 frame.
fn random_landmarks(rng: &mut impl Rng) -> LandmarkSet {
    LandmarkSet::new((0..66).map(|_| Point::new(rng.random_range(8.0..248.0), rng.random_range(8.0..248.0))).collect())
        .unwrap()
}

#[test]
fn thousand_random_vectors_decode_exactly() {
    let specs = default_au_specs();
    let cfg = CodecConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = Instant::now();
    for _ in 0..1000 {
        let labels = AuLabels::new((0..5).map(|_| rng.random_range(0.0..=5.0)).collect()).unwrap();
        let lms = random_landmarks(&mut rng);
        let stack = encode_all(&labels, &lms, &specs, &cfg).unwrap();
        for (got, want) in decode(&stack).values().iter().zip(labels.values()) {
            assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
        }
    }
    assert!(start.elapsed().as_secs_f64() < 10.0, "{:?}", start.elapsed());
}

#[test]
fn closed_form_pixel_values() {
    let cfg = CodecConfig::default();
    let map = encode_au(2.0, &[(30, 30)], &cfg).unwrap();
    let at = |x: usize, y: usize| map[y * 64 + x];
    assert_eq!(at(30, 30), 2.0);
    assert!((at(32, 30) - 2.0 * (-0.5f64).exp()).abs() <= 1e-9);
    assert!((at(30, 28) - 2.0 * (-0.5f64).exp()).abs() <= 1e-9);
    assert!((at(31, 31) - 2.0 * (-0.25f64).exp()).abs() <= 1e-9);
}

#[test]
fn support_within_chebyshev_radius() {
    let cfg = CodecConfig::default();
    for &i in &[0.01, 0.5, 1.0, 1.7, 3.0, 5.0] {
        let map = encode_au(i, &[(32, 32)], &cfg).unwrap();
        let r = (6.0 * i) as i64;
        for y in 0..64i64 {
            for x in 0..64i64 {
                let v = map[(y * 64 + x) as usize];
                if (x - 32).abs().max((y - 32).abs()) > r {
                    assert_eq!(v, 0.0, "I={i} at ({x},{y})");
                }
            }
        }
    }
}

#[test]
fn centres_scale_with_heatmap_size() {
    let spec = AuSpec {
        au_id: 12,
        centers: vec![vec![0], vec![1, 2]],
    };
    let mut pts = vec![Point::new(0.0, 0.0); 66];
    pts[0] = Point::new(101.0, 42.0);
    pts[1] = Point::new(10.0, 10.0);
    pts[2] = Point::new(20.0, 30.0);
    let lms = LandmarkSet::new(pts).unwrap();
    assert_eq!(centers_for_au(&lms, &spec, &CodecConfig::default()), vec![(25, 11), (4, 5)]);
}

#[test]
fn zero_labels_encode_to_zeros() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let stack = encode_all(&AuLabels::zeros(5), &random_landmarks(&mut rng), &default_au_specs(), &CodecConfig::default())
        .unwrap();
    assert!(stack.data().iter().all(|&v| v == 0.0));
    assert_eq!(decode(&stack), AuLabels::zeros(5));
}

#[test]
fn mismatched_label_count_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lms = random_landmarks(&mut rng);
    assert!(encode_all(&AuLabels::zeros(4), &lms, &default_au_specs(), &CodecConfig::default()).is_err());
    assert!(AuLabels::new(vec![5.01]).is_err());
    assert!(AuLabels::new(vec![f64::NAN]).is_err());
}

#[test]
fn decode_clamps_network_output() {
    let data = [vec![-1.0; 16], vec![7.0; 16], vec![2.5; 16]].concat();
    let stack = HeatmapStack::from_data(3, 4, data).unwrap();
    assert_eq!(decode(&stack).values(), &[0.0, 5.0, 2.5]);
}

proptest! {
    #[test]
    fn round_trip_any_labels(
        values in prop::collection::vec(0.0f64..=5.0, 5),
        seed in any::<u64>(),
    ) {
        let labels = AuLabels::new(values).unwrap();
        let lms = random_landmarks(&mut ChaCha8Rng::seed_from_u64(seed));
        for size in [16usize, 64] {
            let lms = lms.map(|p| Point::new(p.x * size as f64 / 64.0, p.y * size as f64 / 64.0));
            let cfg = CodecConfig::for_heatmap_size(size);
            let stack = encode_all(&labels, &lms, &default_au_specs(), &cfg).unwrap();
            prop_assert_eq!(decode(&stack), labels.clone());
            // every pixel lies in [0, I_a]
            for (a, &i) in labels.values().iter().enumerate() {
                prop_assert!(stack.channel(a).iter().all(|&v| (0.0..=i).contains(&v)));
            }
        }
    }

    #[test]
    fn peak_sits_on_a_centre(i in 0.01f64..=5.0, cx in 0i64..64, cy in 0i64..64) {
        let map = encode_au(i, &[(cx, cy)], &CodecConfig::default()).unwrap();
        let best = map.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        prop_assert_eq!((best as i64 % 64, best as i64 / 64), (cx, cy));
    }

    #[test]
    fn spec_text_round_trips(
        ids in prop::collection::btree_set(1u32..100, 1..6),
        groups in prop::collection::vec(prop::collection::vec(prop::collection::vec(0usize..66, 1..=3), 2..=3), 6),
    ) {
        let specs: Vec<AuSpec> =
            ids.into_iter().zip(groups).map(|(au_id, centers)| AuSpec { au_id, centers }).collect();
        let text = format_au_specs(&specs);
        prop_assert_eq!(parse_au_specs(&text).unwrap(), specs);
    }
}
