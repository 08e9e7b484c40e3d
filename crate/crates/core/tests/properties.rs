mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use gazefocus::attention::{gender_majority, FrameSpan};
use gazefocus::cluster::{cut, ward_linkage};
use gazefocus::config::LinkingParams;
use gazefocus::fixation::{detect_fixations, frame_of};
use gazefocus::ingest::{self, GazeBounds, ReportFormat};
use gazefocus::motion::{block_flow, detect_gaze_shifts, validate_fixations, BlockParams, FrameInterval, GrayImage};
use gazefocus::report::{AttentionReport, IdentityCounts, TimelineRow, TimelineTarget, SHARE_TOLERANCE};
use gazefocus::synth::{generate_session, texture, Rng, SynthScript};
use gazefocus::tracklink::link_detections;
use gazefocus::{FixationEvent, FlowSummary, GazeSample, Gender, GenderScores, Target};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 100,
        ..ProptestConfig::default()
    }
}

fn default_linking() -> LinkingParams {
    gazefocus::SessionConfig::default().linking
}

fn gender() -> impl Strategy<Value = Gender> {
    prop_oneof![Just(Gender::Male), Just(Gender::Female), Just(Gender::Unknown)]
}

fn report_strategy() -> impl Strategy<Value = AttentionReport> {
    (1usize..6, 0usize..20, 0usize..40).prop_flat_map(|(k, unassigned, frames)| {
        (
            prop::collection::vec((gender(), 0usize..50, 0usize..50, 0usize..100, 0i64..5_000_000), k),
            prop::collection::vec(
                (prop::collection::btree_set(0..k, 0..=k), 0..k + 2),
                frames,
            ),
            Just(unassigned),
            0i64..3_000_000,
        )
            .prop_map(move |(ids, rows, unassigned, unassigned_us)| {
                let identities = ids
                    .into_iter()
                    .enumerate()
                    .map(|(label, (gender, m, f, c, us))| IdentityCounts {
                        label,
                        gender,
                        male_votes: m,
                        female_votes: f,
                        frames_visible: m + f,
                        fixation_count: c,
                        fixation_duration_us: us,
                    })
                    .collect();
                let timeline = rows
                    .into_iter()
                    .enumerate()
                    .map(|(frame, (visible, t))| TimelineRow {
                        frame,
                        visible: visible.into_iter().collect(),
                        fixation: match t {
                            t if t < k => TimelineTarget::Identity(t),
                            t if t == k => TimelineTarget::Unassigned,
                            _ => TimelineTarget::NoFixation,
                        },
                    })
                    .collect::<Vec<_>>();
                let mut meta = BTreeMap::new();
                meta.insert("config.fps".to_string(), "25.000000".to_string());
                meta.insert("note".to_string(), "quote \" and, comma".to_string());
                AttentionReport::from_counts(meta, timeline.len(), identities, unassigned, unassigned_us, timeline)
                    .unwrap()
            })
    })
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn ward_costs_are_monotone(seed in any::<u64>(), n in 2usize..40, dim in 1usize..16) {
        let mut rng = Rng::new(seed);
        let points = common::random_points(&mut rng, n, dim);
        let d = ward_linkage(&points).unwrap();
        for w in d.merges().windows(2) {
            prop_assert!(w[1].cost >= w[0].cost * (1.0 - 1e-12));
        }
        prop_assert_eq!(d.merges().last().unwrap().size, n);
        let k = 1 + (seed as usize % n);
        let labels = cut(&d, k).unwrap();
        let distinct: std::collections::BTreeSet<_> = labels.iter().collect();
        prop_assert_eq!(distinct.len(), k);
    }

    #[test]
    fn ward_matches_naive_oracle(seed in any::<u64>(), n in 2usize..25, dim in 1usize..10) {
        let mut rng = Rng::new(seed);
        let points = common::random_points(&mut rng, n, dim);
        let fast = ward_linkage(&points).unwrap();
        let slow = common::naive_ward(&points);
        for (a, b) in fast.merges().iter().zip(&slow) {
            prop_assert_eq!((a.left, a.right, a.size), (b.lo, b.hi, b.size));
            prop_assert!((a.cost - b.cost).abs() <= 1e-9);
        }
    }

    #[test]
    fn tracklets_partition_and_are_pure(seed in 0u64..1_000_000, k in 2usize..5) {
        let shares: Vec<f64> = (0..k).map(|i| 1.0 + 0.1 * i as f64).collect();
        let script = SynthScript::with_shares(seed, &shares, 0.2, 20.0).unwrap();
        let s = generate_session(&script).unwrap();
        let linking = link_detections(&s.detections, &default_linking()).unwrap();
        let mut seen = vec![0usize; s.detections.len()];
        for t in &linking.tracklets {
            let id = s.truth.detection_identity[t.members()[0]];
            for &m in t.members() {
                seen[m] += 1;
                prop_assert_eq!(s.truth.detection_identity[m], id);
            }
        }
        for &i in &linking.singletons {
            seen[i] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn shares_sum_to_one(report in report_strategy()) {
        if report.total_fixations > 0 {
            let sum: f64 = report.identities.iter().map(|i| i.fixation_share.unwrap()).sum::<f64>()
                + report.unassigned_share.unwrap();
            prop_assert!((sum - 1.0).abs() <= SHARE_TOLERANCE);
            let assigned: f64 = report.genders.iter().filter_map(|g| g.fixation_share).sum();
            if report.total_fixations > report.unassigned_count {
                prop_assert!((assigned - 1.0).abs() <= SHARE_TOLERANCE);
            }
        } else {
            prop_assert!(report.unassigned_share.is_none());
        }
    }

    #[test]
    fn report_round_trip(report in report_strategy()) {
        let bytes = ingest::write_report(&report, ReportFormat::Json);
        let back = ingest::parse_report(&bytes).unwrap();
        prop_assert_eq!(&back, &report);
        prop_assert_eq!(ingest::write_report(&back, ReportFormat::Json), bytes);
    }

    #[test]
    fn gaze_round_trip(rows in prop::collection::btree_map(-2_000_000i64..2_000_000, (-640_000_000i64..1_920_000_000, -480_000_000i64..1_440_000_000, any::<bool>()), 0..60)) {
        let samples: Vec<GazeSample> = rows
            .into_iter()
            .map(|(ts_us, (x, y, valid))| GazeSample { ts_us, x: x as f64 / 1e6, y: y as f64 / 1e6, valid })
            .collect();
        let text = ingest::write_gaze(&samples);
        let back = ingest::parse_gaze(text.as_bytes(), "gaze.csv", &GazeBounds::frame(1280.0, 960.0)).unwrap();
        prop_assert_eq!(back.out_of_range, 0);
        prop_assert_eq!(back.samples, samples);
    }

    #[test]
    fn detections_round_trip(seed in 0u64..1_000_000) {
        let script = SynthScript::with_shares(seed, &[1.0, 1.0], 0.0, 6.0).unwrap();
        let s = generate_session(&script).unwrap();
        let text = ingest::write_detections(&s.header, &s.detections);
        let (h, parsed) = ingest::parse_detections(text.as_bytes(), "detections.jsonl").unwrap();
        prop_assert_eq!(h, s.header);
        prop_assert_eq!(parsed.len(), s.detections.len());
        for (a, b) in parsed.iter().zip(&s.detections) {
            prop_assert_eq!((a.frame(), a.ts_us()), (b.frame(), b.ts_us()));
            for (x, y) in a.bbox().to_array().iter().zip(b.bbox().to_array()) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
            for (x, y) in a.embedding().as_slice().iter().zip(b.embedding().as_slice()) {
                prop_assert!((x - y).abs() <= 1e-5);
            }
        }
        // a written file is a fixed point up to the last printed digit
        let again = ingest::write_detections(&h, &parsed);
        let (_, reparsed) = ingest::parse_detections(again.as_bytes(), "detections.jsonl").unwrap();
        for (a, b) in reparsed.iter().zip(&parsed) {
            for (x, y) in a.embedding().as_slice().iter().zip(b.embedding().as_slice()) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn parsing_ignores_input_order(seed in 0u64..1_000_000, rot in 0usize..1000) {
        let script = SynthScript::with_shares(seed, &[1.0, 1.0], 0.0, 6.0).unwrap();
        let s = generate_session(&script).unwrap();
        let text = ingest::write_detections(&s.header, &s.detections);
        let mut lines: Vec<&str> = text.lines().collect();
        let body = &mut lines[1..];
        let r = rot % body.len().max(1);
        body.rotate_left(r);
        body.reverse();
        let shuffled = lines.join("\n");
        let (_, a) = ingest::parse_detections(text.as_bytes(), "d").unwrap();
        let (_, b) = ingest::parse_detections(shuffled.as_bytes(), "d").unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fixations_match_window_oracle(seed in any::<u64>(), len in 10usize..400) {
        let mut rng = Rng::new(seed);
        let gaze = common::random_gaze(&mut rng, len);
        let threshold = rng.range(2.0, 80.0);
        let min_us = rng.range(20_000.0, 250_000.0) as i64;
        prop_assert_eq!(
            detect_fixations(&gaze, threshold, min_us).unwrap(),
            common::naive_idt(&gaze, threshold, min_us)
        );
    }

    #[test]
    fn frame_mapping_is_monotone(a in -1_000_000i64..100_000_000, b in -1_000_000i64..100_000_000, offset in -500_000i64..500_000) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(frame_of(lo, 25.0, offset, 2000) <= frame_of(hi, 25.0, offset, 2000));
        prop_assert!(frame_of(hi, 25.0, offset, 2000) < 2000);
    }

    #[test]
    fn shift_intervals_cover_exactly_the_high_frames(mags in prop::collection::vec(0u8..10, 0..80), threshold in 1u8..9) {
        let flows: Vec<FlowSummary> = mags
            .iter()
            .enumerate()
            .map(|(frame, &m)| FlowSummary {
                frame,
                mean_magnitude: m as f64,
                mean_orientation: 0.0,
                kept_blocks: 1,
                all_skipped: false,
            })
            .collect();
        let shifts = detect_gaze_shifts(&flows, threshold as f64);
        let mut covered = vec![false; mags.len()];
        for w in shifts.windows(2) {
            // disjoint and maximal: a gap of at least one low frame between runs
            prop_assert!(w[0].end + 1 < w[1].start);
        }
        for s in &shifts {
            prop_assert!(s.start <= s.end);
            for f in s.start..=s.end {
                covered[f] = true;
            }
        }
        for (f, &m) in mags.iter().enumerate() {
            prop_assert_eq!(covered[f], m >= threshold);
        }
    }

    #[test]
    fn validation_only_touches_the_flag(seed in any::<u64>(), n in 0usize..30) {
        let mut rng = Rng::new(seed);
        let mut fixations: Vec<FixationEvent> = (0..n)
            .map(|i| FixationEvent {
                start_us: i as i64 * 1000,
                end_us: i as i64 * 1000 + 500,
                cx: rng.range(0.0, 100.0),
                cy: rng.range(0.0, 100.0),
                dispersion: rng.range(0.0, 10.0),
                sample_count: 1 + rng.below(20),
                target: if rng.chance(0.5) { Target::Identity(rng.below(3)) } else { Target::Unassigned },
                motion_valid: rng.chance(0.5),
            })
            .collect();
        let spans: Vec<FrameSpan> = (0..n)
            .map(|_| {
                let first = rng.below(100);
                let last = first + rng.below(10);
                FrameSpan { first, last, mid: (first + last) / 2 }
            })
            .collect();
        let shifts: Vec<FrameInterval> = (0..rng.below(4))
            .map(|_| {
                let start = rng.below(110);
                FrameInterval { start, end: start + rng.below(5) }
            })
            .collect();
        let before = fixations.clone();
        validate_fixations(&mut fixations, &spans, &shifts).unwrap();
        for ((a, b), s) in fixations.iter().zip(&before).zip(&spans) {
            let mut a2 = *a;
            a2.motion_valid = b.motion_valid;
            prop_assert_eq!(&a2, b);
            let overlaps = shifts.iter().any(|i| i.start <= s.last && s.first <= i.end);
            prop_assert_eq!(a.motion_valid, !overlaps);
        }
    }

    #[test]
    fn gender_majority_ignores_order(votes in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..60), rot in 0usize..60) {
        let scores: Vec<GenderScores> = votes.iter().map(|&(m, f)| GenderScores::new(m, f).unwrap()).collect();
        let mut shuffled = scores.clone();
        if !shuffled.is_empty() {
            let r = rot % shuffled.len();
            shuffled.rotate_left(r);
            shuffled.reverse();
        }
        prop_assert_eq!(gender_majority(scores), gender_majority(shuffled));
    }

    #[test]
    fn block_flow_is_exact_for_translations(seed in any::<u64>(), dx in -8i64..=8, dy in -8i64..=8) {
        let a = GrayImage::from_fn(96, 80, |x, y| texture(seed, x as i64, y as i64));
        let b = GrayImage::from_fn(96, 80, |x, y| texture(seed, x as i64 - dx, y as i64 - dy));
        let f = block_flow(&a, &b, 0, &BlockParams { block_size: 16, search_radius: 8 }).unwrap();
        let expected = ((dx * dx + dy * dy) as f64).sqrt();
        prop_assert!((f.mean_magnitude - expected).abs() <= 1e-12);
        if dx != 0 || dy != 0 {
            let angle = (dy as f64).atan2(dx as f64);
            prop_assert!((f.mean_orientation - angle).abs() < 1e-12 || (angle + std::f64::consts::PI).abs() < 1e-12);
        }
    }
}
