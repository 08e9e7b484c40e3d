//! Attribution of fixations to student identities, attention maps and
//! corpus-level rankings.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::config::AttentionParams;
use crate::error::{Error, Result};
use crate::model::{BBox, Detection, FixationEvent, Gender, GenderScores, IdentityCluster, Target};
pub use crate::report::gender_attention;
use crate::report::{AttentionReport, IdentityCounts, TimelineRow, TimelineTarget};

/// A detection together with its identity label.
#[derive(Debug, Clone, Copy)]
pub struct LabeledDetection<'a> {
    pub detection: &'a Detection,
    pub label: usize,
}

/// First, last and midpoint frames of a fixation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSpan {
    pub first: usize,
    pub last: usize,
    pub mid: usize,
}

/// Region below and around a face where the student's body is expected.
pub fn body_region(face: &BBox, params: &AttentionParams) -> (f64, f64, f64, f64) {
    let (cx, _) = face.center();
    let half = 0.5 * face.w() * params.body_widen;
    (
        cx - half,
        face.y(),
        cx + half,
        face.y() + face.h() * (1.0 + params.body_extend),
    )
}

fn distance_to_center(face: &BBox, x: f64, y: f64) -> f64 {
    let (cx, cy) = face.center();
    (cx - x).hypot(cy - y)
}

fn nearest<'a, I>(candidates: I, x: f64, y: f64) -> Option<usize>
where
    I: Iterator<Item = &'a LabeledDetection<'a>>,
{
    candidates
        .map(|d| (distance_to_center(d.detection.bbox(), x, y), d.label))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, label)| label)
}

/// Attributes a fixation to an identity visible in its midpoint frame.
///
/// Rules are tried in order: the centroid lies in a face box; it lies in a
/// body region; a face center lies within `r_max_px`. Several matches under
/// one rule go to the nearest face center, then the lower label.
pub fn assign_fixation(
    fixation: &FixationEvent,
    detections: &[LabeledDetection<'_>],
    params: &AttentionParams,
) -> Target {
    let (x, y) = (fixation.cx, fixation.cy);
    if let Some(label) = nearest(
        detections.iter().filter(|d| d.detection.bbox().contains(x, y)),
        x,
        y,
    ) {
        return Target::Identity(label);
    }
    if let Some(label) = nearest(
        detections.iter().filter(|d| {
            let (x0, y0, x1, y1) = body_region(d.detection.bbox(), params);
            x >= x0 && x <= x1 && y >= y0 && y <= y1
        }),
        x,
        y,
    ) {
        return Target::Identity(label);
    }
    if let Some(label) = nearest(
        detections
            .iter()
            .filter(|d| distance_to_center(d.detection.bbox(), x, y) <= params.r_max_px),
        x,
        y,
    ) {
        return Target::Identity(label);
    }
    Target::Unassigned
}

/// Index range of the detections in `frame` within a canonically sorted list.
pub fn frame_range(detections: &[Detection], frame: usize) -> std::ops::Range<usize> {
    let lo = detections.partition_point(|d| d.frame() < frame);
    let hi = detections.partition_point(|d| d.frame() <= frame);
    lo..hi
}

/// Assigns every fixation at its midpoint frame.
pub fn assign_fixations(
    fixations: &[FixationEvent],
    spans: &[FrameSpan],
    detections: &[Detection],
    labels: &[usize],
    params: &AttentionParams,
) -> Vec<Target> {
    fixations
        .par_iter()
        .zip(spans.par_iter())
        .map(|(f, span)| {
            let range = frame_range(detections, span.mid);
            let at_mid: Vec<LabeledDetection<'_>> = range
                .map(|i| LabeledDetection {
                    detection: &detections[i],
                    label: labels[i],
                })
                .collect();
            assign_fixation(f, &at_mid, params)
        })
        .collect()
}

/// Majority gender vote over per-detection estimator scores.
///
/// Each scored detection votes for its higher score and abstains on a tie.
/// Equal or absent votes give [`Gender::Unknown`].
pub fn gender_majority<I>(scores: I) -> (Gender, usize, usize)
where
    I: IntoIterator<Item = GenderScores>,
{
    let (mut male, mut female) = (0, 0);
    for s in scores {
        match s.vote() {
            Some(Gender::Male) => male += 1,
            Some(Gender::Female) => female += 1,
            _ => {}
        }
    }
    (majority_of_votes(male, female), male, female)
}

/// Gender verdict for explicit vote counts.
pub fn majority_of_votes(male: usize, female: usize) -> Gender {
    match male.cmp(&female) {
        std::cmp::Ordering::Greater => Gender::Male,
        std::cmp::Ordering::Less => Gender::Female,
        std::cmp::Ordering::Equal => Gender::Unknown,
    }
}

/// Builds the per-session attention report.
///
/// `targets` and `spans` are parallel to `fixations`; `labels` is parallel to
/// `detections`. Frames with several overlapping fixations show the earliest.
pub fn build_attention_map(
    fixations: &[FixationEvent],
    spans: &[FrameSpan],
    targets: &[Target],
    detections: &[Detection],
    labels: &[usize],
    clusters: &[IdentityCluster],
    frame_count: usize,
    meta: BTreeMap<String, String>,
) -> Result<AttentionReport> {
    if fixations.len() != spans.len() || fixations.len() != targets.len() {
        return Err(Error::invalid("fixations", "fixations, spans and targets must align"));
    }
    if detections.len() != labels.len() {
        return Err(Error::invalid("labels", "one label per detection is required"));
    }
    let k = clusters.len();
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid("labels", format!("label {bad} has no cluster")));
    }

    let mut visible: Vec<Vec<usize>> = vec![Vec::new(); frame_count];
    for (d, &l) in detections.iter().zip(labels) {
        if d.frame() >= frame_count {
            return Err(Error::invalid(
                "frame",
                format!("detection frame {} beyond frame count {frame_count}", d.frame()),
            ));
        }
        visible[d.frame()].push(l);
    }
    let mut frames_visible = vec![0usize; k];
    for labels in visible.iter_mut() {
        labels.sort_unstable();
        labels.dedup();
        for &l in labels.iter() {
            frames_visible[l] += 1;
        }
    }

    let mut fixation_count = vec![0usize; k];
    let mut fixation_duration = vec![0i64; k];
    let (mut unassigned_count, mut unassigned_duration) = (0usize, 0i64);
    let mut timeline_target = vec![TimelineTarget::NoFixation; frame_count];
    for ((f, span), target) in fixations.iter().zip(spans).zip(targets) {
        let marker = match *target {
            Target::Identity(l) if l < k => {
                fixation_count[l] += 1;
                fixation_duration[l] += f.duration_us();
                TimelineTarget::Identity(l)
            }
            Target::Identity(l) => {
                return Err(Error::invalid("target", format!("label {l} has no cluster")));
            }
            Target::Unassigned => {
                unassigned_count += 1;
                unassigned_duration += f.duration_us();
                TimelineTarget::Unassigned
            }
        };
        let last = span.last.min(frame_count.saturating_sub(1));
        for slot in timeline_target.iter_mut().take(last + 1).skip(span.first) {
            if *slot == TimelineTarget::NoFixation {
                *slot = marker;
            }
        }
    }

    let identities = clusters
        .iter()
        .enumerate()
        .map(|(label, c)| IdentityCounts {
            label,
            gender: c.gender,
            male_votes: c.male_votes,
            female_votes: c.female_votes,
            frames_visible: frames_visible[label],
            fixation_count: fixation_count[label],
            fixation_duration_us: fixation_duration[label],
        })
        .collect();
    let timeline = visible
        .into_iter()
        .zip(timeline_target)
        .enumerate()
        .map(|(frame, (visible, fixation))| TimelineRow {
            frame,
            visible,
            fixation,
        })
        .collect();
    AttentionReport::from_counts(
        meta,
        frame_count,
        identities,
        unassigned_count,
        unassigned_duration,
        timeline,
    )
}

/// Session-by-rank table of identity fixation shares.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    pub sessions: Vec<String>,
    /// One row per session, shares in descending order.
    pub rows: Vec<Vec<f64>>,
}

/// Sorts each session's identity shares in descending order; equal shares
/// keep the lower label first. Sessions without fixations rank all zeros.
pub fn rank_sessions(reports: &[(String, AttentionReport)]) -> Result<RankTable> {
    if reports.is_empty() {
        return Err(Error::invalid("reports", "at least one report is required"));
    }
    let mut rows = Vec::with_capacity(reports.len());
    for (_, r) in reports {
        let mut shares: Vec<f64> = r
            .identities
            .iter()
            .map(|i| i.fixation_share.unwrap_or(0.0))
            .collect();
        // stable: ties stay in label order
        shares.sort_by(|a, b| b.total_cmp(a));
        rows.push(shares);
    }
    Ok(RankTable {
        sessions: reports.iter().map(|(name, _)| name.clone()).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UnitVector;

    fn det(frame: usize, x: f64, y: f64, w: f64, h: f64) -> Detection {
        Detection::new(
            frame,
            0,
            BBox::new(x, y, w, h).unwrap(),
            UnitVector::normalize(vec![1.0]).unwrap(),
            None,
        )
    }

    fn fixation_at(cx: f64, cy: f64) -> FixationEvent {
        FixationEvent {
            start_us: 0,
            end_us: 100_000,
            cx,
            cy,
            dispersion: 0.0,
            sample_count: 10,
            target: Target::Unassigned,
            motion_valid: true,
        }
    }

    fn params() -> AttentionParams {
        AttentionParams {
            body_widen: 1.5,
            body_extend: 4.0,
            r_max_px: 100.0,
        }
    }

    #[test]
    fn centroid_in_face_box() {
        let d = det(0, 100.0, 100.0, 40.0, 50.0);
        let dets = [LabeledDetection { detection: &d, label: 3 }];
        assert_eq!(assign_fixation(&fixation_at(120.0, 125.0), &dets, &params()), Target::Identity(3));
    }

    #[test]
    fn centroid_below_face_hits_body() {
        let d = det(0, 100.0, 100.0, 40.0, 50.0);
        let dets = [LabeledDetection { detection: &d, label: 1 }];
        // 3 face heights below the face bottom, beyond r_max of the face center
        let f = fixation_at(120.0, 150.0 + 150.0);
        assert_eq!(assign_fixation(&f, &dets, &params()), Target::Identity(1));
        let far_below = fixation_at(120.0, 150.0 + 210.0);
        assert_eq!(assign_fixation(&far_below, &dets, &params()), Target::Unassigned);
    }

    #[test]
    fn no_faces_means_unassigned() {
        assert_eq!(assign_fixation(&fixation_at(10.0, 10.0), &[], &params()), Target::Unassigned);
    }

    #[test]
    fn nearest_face_fallback_and_tie() {
        let a = det(0, 0.0, 0.0, 20.0, 20.0);
        let b = det(0, 150.0, 0.0, 20.0, 20.0);
        let dets = [
            LabeledDetection { detection: &b, label: 1 },
            LabeledDetection { detection: &a, label: 0 },
        ];
        // 60 px right of a's center, above both faces: only the radius rule applies
        assert_eq!(assign_fixation(&fixation_at(70.0, -30.0), &dets, &params()), Target::Identity(0));
        // equidistant between centers -> lower label
        assert_eq!(assign_fixation(&fixation_at(85.0, -20.0), &dets, &params()), Target::Identity(0));
    }

    #[test]
    fn face_rule_precedes_body_rule() {
        let upper = det(0, 100.0, 0.0, 40.0, 40.0);
        let lower = det(0, 100.0, 100.0, 40.0, 40.0);
        let dets = [
            LabeledDetection { detection: &upper, label: 0 },
            LabeledDetection { detection: &lower, label: 1 },
        ];
        // inside the lower face and inside the upper face's body region
        assert_eq!(assign_fixation(&fixation_at(110.0, 110.0), &dets, &params()), Target::Identity(1));
    }

    #[test]
    fn gender_votes() {
        let s = |m, f| GenderScores::new(m, f).unwrap();
        assert_eq!(gender_majority([s(0.9, 0.1), s(0.8, 0.2), s(0.3, 0.7)]), (Gender::Male, 2, 1));
        assert_eq!(gender_majority([s(0.5, 0.5)]), (Gender::Unknown, 0, 0));
        assert_eq!(gender_majority([]), (Gender::Unknown, 0, 0));
        assert_eq!(gender_majority([s(0.2, 0.8), s(0.9, 0.1)]), (Gender::Unknown, 1, 1));
        assert_eq!(majority_of_votes(3321, 1128), Gender::Male);
        assert_eq!(majority_of_votes(879, 3870), Gender::Female);
        assert_eq!(majority_of_votes(960, 946), Gender::Male);
    }

    fn cluster(label: usize) -> IdentityCluster {
        IdentityCluster {
            label,
            tracklet_ids: vec![],
            singleton_detections: vec![],
            centroid: UnitVector::normalize(vec![1.0]).unwrap(),
            gender: Gender::Unknown,
            male_votes: 0,
            female_votes: 0,
        }
    }

    #[test]
    fn attention_map_counts() {
        let fx = vec![fixation_at(0.0, 0.0); 4];
        let spans = vec![
            FrameSpan { first: 0, last: 0, mid: 0 },
            FrameSpan { first: 1, last: 2, mid: 1 },
            FrameSpan { first: 3, last: 3, mid: 3 },
            FrameSpan { first: 5, last: 5, mid: 5 },
        ];
        let targets = vec![
            Target::Identity(0),
            Target::Identity(0),
            Target::Identity(1),
            Target::Unassigned,
        ];
        let dets = vec![det(0, 0.0, 0.0, 5.0, 5.0), det(0, 10.0, 0.0, 5.0, 5.0), det(2, 0.0, 0.0, 5.0, 5.0)];
        let r = build_attention_map(
            &fx,
            &spans,
            &targets,
            &dets,
            &[0, 1, 0],
            &[cluster(0), cluster(1)],
            6,
            BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(r.identities[0].fixation_share, Some(0.5));
        assert_eq!(r.identities[1].fixation_share, Some(0.25));
        assert_eq!(r.unassigned_share, Some(0.25));
        assert_eq!(r.identities[0].frames_visible, 2);
        assert_eq!(r.identities[1].frames_visible, 1);
        assert_eq!(r.timeline[0].visible, vec![0, 1]);
        assert_eq!(r.timeline[2].fixation, TimelineTarget::Identity(0));
        assert_eq!(r.timeline[4].fixation, TimelineTarget::NoFixation);
        assert_eq!(r.timeline[5].fixation, TimelineTarget::Unassigned);
    }

    fn report_with_shares(counts: &[usize]) -> AttentionReport {
        let ids = counts
            .iter()
            .enumerate()
            .map(|(label, &c)| IdentityCounts {
                label,
                gender: Gender::Unknown,
                male_votes: 0,
                female_votes: 0,
                frames_visible: 0,
                fixation_count: c,
                fixation_duration_us: 0,
            })
            .collect();
        AttentionReport::from_counts(BTreeMap::new(), 0, ids, 0, 0, vec![]).unwrap()
    }

    #[test]
    fn ranking() {
        let t = rank_sessions(&[("s".into(), report_with_shares(&[10, 40, 25, 25]))]).unwrap();
        assert_eq!(t.rows[0], vec![0.4, 0.25, 0.25, 0.1]);
        let t = rank_sessions(&[("one".into(), report_with_shares(&[7]))]).unwrap();
        assert_eq!(t.rows[0], vec![1.0]);
        assert!(rank_sessions(&[]).is_err());
    }
}
