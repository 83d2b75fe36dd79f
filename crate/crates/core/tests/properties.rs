//! Property tests over randomly generated inputs.

mod common;

use std::fs;

use proptest::prelude::*;
use rand::seq::SliceRandom;

use common::*;
use rationality_eval::attribution::{relevance_grad_only, relevance_single_layer};
use rationality_eval::metrics::{classify_quadrant, ir, pt, rma, tally, GroundTruthMask};
use rationality_eval::resample::bilinear;
use rationality_eval::synth::gen_heatmap_with_rma;
use rationality_eval::tensor_io::{decode, encode, parse_manifest, ManifestError};
use rationality_eval::{
    AttentionCapture, AttributionMethod, Heatmap, LayerMode, QuadrantTally, Tensor, Tensor2,
    Tensor3,
};

fn heat_and_mask() -> impl Strategy<Value = (Heatmap, GroundTruthMask)> {
    (1usize..12, 1usize..12).prop_flat_map(|(r, c)| {
        (
            prop::collection::vec(prop_oneof![Just(0.0), 1e-6f64..1e3], r * c),
            prop::collection::vec(prop::bool::ANY, r * c),
        )
            .prop_map(move |(h, m)| {
                let m = m.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
                (
                    Heatmap::new(Tensor2::new(r, c, h).unwrap()).unwrap(),
                    GroundTruthMask::new(Tensor2::new(r, c, m).unwrap()).unwrap(),
                )
            })
    })
}

fn inside_outside(h: &Heatmap, m: &GroundTruthMask) -> (f64, f64) {
    let mut io = (0.0, 0.0);
    for (&v, &b) in h.values().data().iter().zip(m.values().data()) {
        if b == 1.0 {
            io.0 += v;
        } else {
            io.1 += v;
        }
    }
    io
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn relevance_and_heatmaps_are_non_negative(seed in any::<u64>(), heads in 1usize..5, side in 1usize..4) {
        let mut rng = rng(seed);
        let tokens = side * side + 1;
        let (a, g) = (random_attention(&mut rng, heads, tokens), random_gradient(&mut rng, heads, tokens));
        let capture = AttentionCapture::new(vec![(a, g)], None, 0, (side, side), vec![]).unwrap();
        for method in [AttributionMethod::GradTimesAttention, AttributionMethod::GradOnly] {
            let rel = capture.relevance(method, LayerMode::Mean).unwrap();
            prop_assert!(rel.values().data().iter().all(|v| *v >= 0.0));
            let h = capture.heatmap(method, LayerMode::Last, (side * 3 + 1, side * 2 + 1)).unwrap();
            prop_assert!(h.values().data().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn unit_gradient_reduces_to_mean_attention(seed in any::<u64>(), heads in 1usize..6, tokens in 1usize..9) {
        let mut rng = rng(seed);
        let a = random_attention(&mut rng, heads, tokens);
        let ones = Tensor3::new(heads, tokens, tokens, vec![1.0; heads * tokens * tokens]).unwrap();
        let rel = relevance_single_layer(&a, &ones).unwrap();
        for i in 0..tokens {
            for j in 0..tokens {
                let mean = (0..heads).map(|h| a.get(h, i, j)).sum::<f64>() / heads as f64;
                prop_assert!((rel.values().get(i, j) - mean).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn relevance_is_positively_homogeneous(seed in any::<u64>(), k in -20i32..20) {
        let mut rng = rng(seed);
        let (a, g) = (random_attention(&mut rng, 3, 5), random_gradient(&mut rng, 3, 5));
        let c = 2f64.powi(k);
        let (heads, rows, cols) = g.shape();
        let scaled = Tensor3::new(heads, rows, cols, g.data().iter().map(|v| v * c).collect()).unwrap();
        let base = relevance_single_layer(&a, &g).unwrap();
        let up = relevance_single_layer(&a, &scaled).unwrap();
        for (x, y) in base.values().data().iter().zip(up.values().data()) {
            prop_assert_eq!(x * c, *y);
        }
        let base = relevance_grad_only(&g).unwrap();
        let up = relevance_grad_only(&scaled).unwrap();
        for (x, y) in base.values().data().iter().zip(up.values().data()) {
            prop_assert_eq!(x * c, *y);
        }
    }

    #[test]
    fn constant_grid_stays_constant(
        v in 0.0f64..100.0, r in 1usize..6, c in 1usize..6, orows in 1usize..20, ocols in 1usize..20,
    ) {
        let out = bilinear(&Tensor2::filled(r, c, v).unwrap(), orows, ocols);
        prop_assert_eq!(out.shape(), (orows, ocols));
        for x in out.data() {
            prop_assert!((x - v).abs() <= 1e-12 * v.max(1.0));
        }
    }

    #[test]
    fn rma_bounds_and_extremes((h, m) in heat_and_mask()) {
        let r = rma(&h, &m).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.score));
        let (inside, outside) = inside_outside(&h, &m);
        prop_assert_eq!(r.degenerate, inside + outside == 0.0);
        prop_assert_eq!(r.score == 1.0, inside > 0.0 && outside == 0.0);
        prop_assert_eq!(r.score == 0.0, inside == 0.0);
    }

    #[test]
    fn moving_mass_inside_never_lowers_rma((h, m) in heat_and_mask(), pick in any::<prop::sample::Index>(), frac in 0.0f64..=1.0) {
        let data = h.values().data();
        let mask = m.values().data();
        let outside: Vec<usize> = (0..data.len()).filter(|&k| mask[k] == 0.0 && data[k] > 0.0).collect();
        let inside: Vec<usize> = (0..data.len()).filter(|&k| mask[k] == 1.0).collect();
        prop_assume!(!outside.is_empty() && !inside.is_empty());
        let from = outside[pick.index(outside.len())];
        let to = inside[pick.index(inside.len())];
        let mut moved = data.to_vec();
        let delta = moved[from] * frac;
        moved[from] -= delta;
        moved[to] += delta;
        let (rows, cols) = h.shape();
        let after = Heatmap::new(Tensor2::new(rows, cols, moved).unwrap()).unwrap();
        prop_assert!(rma(&after, &m).unwrap().score >= rma(&h, &m).unwrap().score);
    }

    #[test]
    fn rma_and_quadrant_survive_rescaling((h, m) in heat_and_mask(), k in -30i32..30, c in 1e-6f64..1e6, correct in any::<bool>()) {
        let base = rma(&h, &m).unwrap().score;
        let exact = rma(&h.scaled(2f64.powi(k)), &m).unwrap().score;
        prop_assert_eq!(base, exact);
        let scaled = rma(&h.scaled(c), &m).unwrap().score;
        prop_assert!((base - scaled).abs() <= 1e-12);
        if (base - 0.5).abs() > 1e-9 {
            prop_assert_eq!(classify_quadrant(correct, base, 0.5), classify_quadrant(correct, scaled, 0.5));
        }
    }

    #[test]
    fn tally_ignores_order(records in prop::collection::vec((any::<bool>(), 0.0f64..=1.0), 0..200), seed in any::<u64>()) {
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut rng(seed));
        prop_assert_eq!(tally(records, 0.5), tally(shuffled, 0.5));
    }

    #[test]
    fn ratios_stay_in_unit_interval(rr in 0u64..1000, rw in 0u64..1000, wr in 0u64..1000, ww in 0u64..1000) {
        let t = QuadrantTally::new(rr, rw, wr, ww);
        prop_assert_eq!(pt(&t).is_ok(), rr + rw > 0);
        prop_assert_eq!(ir(&t).is_ok(), rr + wr > 0);
        for v in [pt(&t), ir(&t)].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn npy_round_trip(
        dims in prop::collection::vec(1usize..6, 2..=3),
        f32_dtype in any::<bool>(),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = rng(seed);
        let n: usize = dims.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1e6..1e6)).collect();
        let tensor: Tensor = if dims.len() == 2 {
            let t = Tensor2::new(dims[0], dims[1], data).unwrap();
            if f32_dtype { t.into_f32().into() } else { t.into() }
        } else {
            let t = Tensor3::new(dims[0], dims[1], dims[2], data).unwrap();
            if f32_dtype { t.into_f32().into() } else { t.into() }
        };
        let bytes = encode(&tensor);
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        prop_assert_eq!((10 + header_len) % 64, 0);
        prop_assert_eq!(bytes[9 + header_len], b'\n');
        let back = decode(&bytes).unwrap();
        prop_assert!(back.bit_eq(&tensor));
        prop_assert_eq!(encode(&back), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn generator_hits_its_target(
        rows in 1usize..10,
        cols in 1usize..10,
        mask_seed in any::<u64>(),
        rho in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = rng(mask_seed);
        let mut bits: Vec<f64> = (0..rows * cols).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        // Keep both regions non-empty so every rho is feasible.
        prop_assume!(bits.len() >= 2);
        bits[0] = 1.0;
        bits[1] = 0.0;
        let mask = GroundTruthMask::new(Tensor2::new(rows, cols, bits).unwrap()).unwrap();
        let h = gen_heatmap_with_rma(rho, &mask, seed).unwrap();
        prop_assert!((rma(&h, &mask).unwrap().score - rho).abs() <= 1e-12);
        prop_assert!((rma_oracle(&h, &mask) - rho).abs() <= 1e-12);
    }
}

#[test]
fn malformed_manifests_are_rejected_with_a_line() {
    let dir = fixtures().join("malformed");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let err = parse_manifest(text.as_bytes()).expect_err(&path.display().to_string());
        let expected_line =
            if path.ends_with("bad_json.jsonl") || path.ends_with("duplicate_id.jsonl") {
                2
            } else {
                1
            };
        assert!(
            err.to_string().contains(&format!("line {expected_line}")),
            "{}: {err}",
            path.display()
        );
        let kind_ok = match path.file_stem().unwrap().to_str().unwrap() {
            "bad_json" | "negative_class" => matches!(err, ManifestError::Parse { .. }),
            "missing_pred" => matches!(
                err,
                ManifestError::MissingField {
                    field: "pred_class",
                    ..
                }
            ),
            "duplicate_id" => matches!(err, ManifestError::DuplicateSampleId { first_line: 1, .. }),
            "box_out_of_bounds" | "box_degenerate" => {
                matches!(err, ManifestError::InvalidBox { .. })
            }
            "both_ground_truths" => matches!(err, ManifestError::ConflictingGroundTruth { .. }),
            "both_evidence" => matches!(err, ManifestError::ConflictingEvidence { .. }),
            "bad_tag" => matches!(err, ManifestError::InvalidTag { .. }),
            other => panic!("unclassified fixture {other}"),
        };
        assert!(kind_ok, "{}: {err:?}", path.display());
        seen += 1;
    }
    assert_eq!(seen, 9);
}
