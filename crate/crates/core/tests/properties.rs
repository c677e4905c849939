//! Property tests over randomly generated inputs.

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use cohort_synth::diary::{ActivityCode, ActivityRecord, LocationId};
use cohort_synth::embed::{dbscan, normalize_coords, DbscanParams, EmbeddingCoords};
use cohort_synth::ensemble::{proximity_matrix, LeafAssignments};
use cohort_synth::pipeline::adjusted_rand_index;
use cohort_synth::rng::{substream, Domain};
use cohort_synth::synth::{fit_lengths, LengthSpan};
use cohort_synth::validate::{gini_correlation, minute_profile, mode_similarity};

use common::reference_dbscan;

fn span() -> impl Strategy<Value = LengthSpan> {
    (1u32..600, 0u32..200, 0u32..400, prop::bool::weighted(0.15)).prop_map(|(length, below, above, fixed)| {
        let lo = length.saturating_sub(below).max(1);
        LengthSpan { length: length as f64, lo, hi: length + above, fixed }
    })
}

fn day() -> impl Strategy<Value = Vec<ActivityRecord>> {
    (prop::collection::btree_set(1u32..1440, 0..8), prop::collection::vec(0usize..5, 9)).prop_map(|(cuts, picks)| {
        let codes = [10101, 50101, 110101, 120303, 180501];
        let mut bounds = vec![0];
        bounds.extend(cuts);
        bounds.push(1440);
        bounds
            .windows(2)
            .enumerate()
            .map(|(i, w)| ActivityRecord {
                code: ActivityCode::new(codes[picks[i]]).unwrap(),
                start_min: w[0],
                duration_min: w[1] - w[0],
                location: LocationId(1),
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fitted_lengths_fill_the_day(spans in prop::collection::vec(span(), 1..12)) {
        prop_assume!(spans.len() <= 1440);
        let f = fit_lengths(&spans);
        prop_assert_eq!(f.lengths.iter().sum::<u32>(), 1440);
        prop_assert!(f.lengths.iter().all(|&l| l >= 1));
        prop_assert!(f.iterations <= 20);
        let free_in_bounds = spans.iter().zip(&f.lengths).all(|(s, &l)| s.fixed || (s.lo..=s.hi).contains(&l));
        prop_assert_eq!(free_in_bounds, !f.waived);
        let any_free = spans.iter().any(|s| !s.fixed);
        let fixed_total: u32 = spans.iter().filter(|s| s.fixed).map(|s| s.length as u32).sum();
        // Travel keeps its length unless nothing else can absorb the excess.
        if any_free && fixed_total + spans.iter().filter(|s| !s.fixed).count() as u32 <= 1440 {
            for (s, &l) in spans.iter().zip(&f.lengths) {
                if s.fixed {
                    prop_assert_eq!(l, s.length as u32);
                }
            }
        }
    }

    #[test]
    fn unclamped_lengths_keep_their_ratios(a in 50u32..700, b in 50u32..700) {
        let spans = [
            LengthSpan { length: a as f64, lo: 1, hi: 1440, fixed: false },
            LengthSpan { length: b as f64, lo: 1, hi: 1440, fixed: false },
        ];
        let f = fit_lengths(&spans);
        let expected_a = 1440.0 * a as f64 / (a + b) as f64;
        prop_assert!((f.lengths[0] as f64 - expected_a).abs() <= 1.0 + 1e-9);
    }

    #[test]
    fn dbscan_matches_brute_force(
        points in prop::collection::vec((-100i32..100, -100i32..100), 1..120),
        eps_cells in 1u32..20,
        min_pts in 1usize..8,
    ) {
        let pts: Vec<[f64; 2]> = points.iter().map(|&(x, y)| [x as f64 / 100.0, y as f64 / 100.0]).collect();
        let eps = eps_cells as f64 / 100.0;
        prop_assert_eq!(dbscan(&pts, &DbscanParams { eps, min_pts }).labels, reference_dbscan(&pts, eps, min_pts));
    }

    #[test]
    fn proximity_is_a_similarity(rows in prop::collection::vec(prop::collection::vec(0u32..4, 6), 1..40)) {
        let a = LeafAssignments::from_rows(&rows);
        let p = proximity_matrix(&a);
        let n = rows.len();
        for i in 0..n {
            prop_assert_eq!(p.get(i, i), 1.0);
            for j in 0..n {
                prop_assert_eq!(p.get(i, j), p.get(j, i));
                let same = rows[i].iter().zip(&rows[j]).filter(|(x, y)| x == y).count();
                prop_assert_eq!(p.get(i, j), same as f64 / 6.0);
            }
        }
    }

    #[test]
    fn normalized_coordinates_span_the_unit_box(points in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..60)) {
        let y = EmbeddingCoords { points: points.iter().map(|&(x, y)| [x, y]).collect(), kl_trace: vec![] };
        let z = normalize_coords(&y);
        prop_assert!(z.points.iter().all(|p| p.iter().all(|v| (-1.0..=1.0).contains(v))));
        prop_assert_eq!(&normalize_coords(&z).points, &z.points);
    }

    #[test]
    fn ari_is_bounded_symmetric_and_label_free(labels in prop::collection::vec(0u8..5, 2..80), other in prop::collection::vec(0u8..5, 80)) {
        let other = &other[..labels.len()];
        let ari = adjusted_rand_index(&labels, other);
        prop_assert!(ari <= 1.0 + 1e-12);
        prop_assert!((ari - adjusted_rand_index(other, &labels)).abs() < 1e-12);
        let renamed: Vec<u32> = labels.iter().map(|&l| 100 - l as u32 * 7).collect();
        prop_assert!((adjusted_rand_index(&labels, &renamed) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn minute_profiles_are_distributions(days in prop::collection::vec(day(), 1..12)) {
        let p = minute_profile(days.iter().map(Vec::as_slice)).unwrap();
        for m in 0..1440 {
            let f = &p.freq[m];
            prop_assert!((f.values().sum::<f64>() - 1.0).abs() < 1e-12);
            let k = f.len() as f64;
            prop_assert!(p.gini[m] >= 0.0 && p.gini[m] <= 1.0 - 1.0 / k + 1e-12);
            let best = f.values().cloned().fold(0.0, f64::max);
            prop_assert_eq!(f[&p.modes[m]], best);
        }
        let reversed = minute_profile(days.iter().rev().map(Vec::as_slice)).unwrap();
        prop_assert_eq!(&reversed.modes, &p.modes);
        for (a, b) in reversed.gini.iter().zip(&p.gini) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_similarity_is_symmetric(a in prop::collection::vec(day(), 1..6), b in prop::collection::vec(day(), 1..6)) {
        let pa = minute_profile(a.iter().map(Vec::as_slice)).unwrap();
        let pb = minute_profile(b.iter().map(Vec::as_slice)).unwrap();
        let s = mode_similarity(&pa, &pb);
        prop_assert_eq!(s, mode_similarity(&pb, &pa));
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s == 1.0, pa.modes == pb.modes);
    }

    #[test]
    fn gini_correlation_is_affine_invariant(
        a in prop::collection::vec(0.0f64..0.8, 20),
        scale in 0.1f64..5.0,
        shift in -1.0f64..1.0,
    ) {
        let b: Vec<f64> = a.iter().map(|x| scale * x + shift).collect();
        let r = gini_correlation(&a, &b);
        if !r.degenerate {
            prop_assert!((r.r - 1.0).abs() < 1e-9);
        }
        prop_assert!((-1.0..=1.0).contains(&r.r));
    }

    #[test]
    fn substreams_are_reproducible(seed in any::<u64>(), index in 0u64..1000) {
        use rand::Rng;
        let a: Vec<u64> = { let mut r = substream(seed, Domain::Synthesis, index); (0..4).map(|_| r.random()).collect() };
        let b: Vec<u64> = { let mut r = substream(seed, Domain::Synthesis, index); (0..4).map(|_| r.random()).collect() };
        let c: Vec<u64> = { let mut r = substream(seed, Domain::Synthesis, index + 1); (0..4).map(|_| r.random()).collect() };
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(&a, &c);
    }
}

#[test]
fn sparse_categorical_counts_are_exact() {
    // BTreeMap order gives the smallest code on ties.
    let a = [ActivityRecord { code: ActivityCode::new(50101).unwrap(), start_min: 0, duration_min: 1440, location: LocationId(1) }];
    let b = [ActivityRecord { code: ActivityCode::new(10101).unwrap(), start_min: 0, duration_min: 1440, location: LocationId(1) }];
    let p = minute_profile([a.as_slice(), b.as_slice()]).unwrap();
    assert!(p.modes.iter().all(|c| c.value() == 10101));
    let expected: BTreeMap<ActivityCode, f64> = BTreeMap::from([(a[0].code, 0.5), (b[0].code, 0.5)]);
    assert_eq!(p.freq[0], expected);
}
