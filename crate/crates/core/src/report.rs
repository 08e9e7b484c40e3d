//! Per-session attention statistics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::Gender;

/// Tolerance on the share partition of unity.
pub const SHARE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityStats {
    pub label: usize,
    pub gender: Gender,
    pub male_votes: usize,
    pub female_votes: usize,
    pub frames_visible: usize,
    pub fixation_count: usize,
    pub fixation_duration_us: i64,
    /// `fixation_count / total fixations`; absent when there are no fixations.
    pub fixation_share: Option<f64>,
    /// `fixation_duration_us / total fixation duration`.
    pub duration_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenderStats {
    pub gender: Gender,
    pub identities: usize,
    pub fixation_count: usize,
    pub fixation_duration_us: i64,
    /// Share of assigned fixations; absent when nothing was assigned.
    pub fixation_share: Option<f64>,
}

/// What the teacher was fixating during a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimelineTarget {
    NoFixation,
    Unassigned,
    Identity(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineRow {
    pub frame: usize,
    /// Labels with a detection in this frame, ascending.
    pub visible: Vec<usize>,
    pub fixation: TimelineTarget,
}

/// Counts that fully determine a report; shares are derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCounts {
    pub label: usize,
    pub gender: Gender,
    pub male_votes: usize,
    pub female_votes: usize,
    pub frames_visible: usize,
    pub fixation_count: usize,
    pub fixation_duration_us: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionReport {
    /// Resolved configuration (`config.*`), input hashes (`input.*`) and run
    /// settings, all as strings.
    pub meta: BTreeMap<String, String>,
    pub frame_count: usize,
    pub identities: Vec<IdentityStats>,
    pub genders: Vec<GenderStats>,
    pub total_fixations: usize,
    pub unassigned_count: usize,
    pub unassigned_duration_us: i64,
    pub unassigned_share: Option<f64>,
    pub timeline: Vec<TimelineRow>,
}

fn ratio(part: f64, whole: f64) -> Option<f64> {
    (whole > 0.0).then(|| part / whole)
}

/// Per-gender fixation totals over assigned fixations, in the order male,
/// female, unknown.
pub fn gender_attention(identities: &[IdentityStats]) -> Vec<GenderStats> {
    let assigned: usize = identities.iter().map(|i| i.fixation_count).sum();
    [Gender::Male, Gender::Female, Gender::Unknown]
        .into_iter()
        .map(|gender| {
            let members: Vec<&IdentityStats> =
                identities.iter().filter(|i| i.gender == gender).collect();
            let fixation_count = members.iter().map(|i| i.fixation_count).sum();
            GenderStats {
                gender,
                identities: members.len(),
                fixation_count,
                fixation_duration_us: members.iter().map(|i| i.fixation_duration_us).sum(),
                fixation_share: ratio(fixation_count as f64, assigned as f64),
            }
        })
        .collect()
}

impl AttentionReport {
    /// Derives shares and gender aggregates from counts and checks invariants.
    pub fn from_counts(
        meta: BTreeMap<String, String>,
        frame_count: usize,
        identities: Vec<IdentityCounts>,
        unassigned_count: usize,
        unassigned_duration_us: i64,
        timeline: Vec<TimelineRow>,
    ) -> Result<Self> {
        let total_fixations =
            identities.iter().map(|i| i.fixation_count).sum::<usize>() + unassigned_count;
        let total_duration =
            identities.iter().map(|i| i.fixation_duration_us).sum::<i64>() + unassigned_duration_us;
        for (pos, id) in identities.iter().enumerate() {
            if id.label != pos {
                return Err(Error::invalid(
                    "identities",
                    format!("labels must be 0..K in order (position {pos} has {})", id.label),
                ));
            }
            if id.fixation_duration_us < 0 {
                return Err(Error::invalid("fixation_duration_us", "must be >= 0"));
            }
        }
        if unassigned_duration_us < 0 {
            return Err(Error::invalid("unassigned_duration_us", "must be >= 0"));
        }
        let identities: Vec<IdentityStats> = identities
            .into_iter()
            .map(|c| IdentityStats {
                fixation_share: ratio(c.fixation_count as f64, total_fixations as f64),
                duration_share: ratio(c.fixation_duration_us as f64, total_duration as f64),
                label: c.label,
                gender: c.gender,
                male_votes: c.male_votes,
                female_votes: c.female_votes,
                frames_visible: c.frames_visible,
                fixation_count: c.fixation_count,
                fixation_duration_us: c.fixation_duration_us,
            })
            .collect();
        let k = identities.len();
        for row in &timeline {
            if row.visible.iter().any(|&l| l >= k) {
                return Err(Error::invalid("timeline", format!("frame {} lists an unknown label", row.frame)));
            }
            if let TimelineTarget::Identity(l) = row.fixation {
                if l >= k {
                    return Err(Error::invalid("timeline", format!("frame {} targets unknown label {l}", row.frame)));
                }
            }
        }
        let report = AttentionReport {
            meta,
            frame_count,
            genders: gender_attention(&identities),
            identities,
            total_fixations,
            unassigned_count,
            unassigned_duration_us,
            unassigned_share: ratio(unassigned_count as f64, total_fixations as f64),
            timeline,
        };
        report.check_shares()?;
        Ok(report)
    }

    /// Shares of identities plus the unassigned share sum to one.
    pub fn check_shares(&self) -> Result<()> {
        if self.total_fixations == 0 {
            return Ok(());
        }
        let sum: f64 = self
            .identities
            .iter()
            .filter_map(|i| i.fixation_share)
            .sum::<f64>()
            + self.unassigned_share.unwrap_or(0.0);
        if (sum - 1.0).abs() > SHARE_TOLERANCE {
            return Err(Error::invalid(
                "fixation_share",
                format!("shares sum to {sum}, expected 1"),
            ));
        }
        Ok(())
    }

    pub fn counts(&self) -> Vec<IdentityCounts> {
        self.identities
            .iter()
            .map(|i| IdentityCounts {
                label: i.label,
                gender: i.gender,
                male_votes: i.male_votes,
                female_votes: i.female_votes,
                frames_visible: i.frames_visible,
                fixation_count: i.fixation_count,
                fixation_duration_us: i.fixation_duration_us,
            })
            .collect()
    }
}
