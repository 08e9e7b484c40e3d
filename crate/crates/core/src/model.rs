//! Domain types shared by every pipeline stage.
//!
//! Values are validated on construction and immutable afterwards. Ordering
//! rules are fixed here so that every downstream stage iterates in the same
//! order: detections by `(frame, bbox.x, bbox.y)`, tracklets by id, merges by
//! insertion order.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of a unit vector's norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

fn ensure_finite(field: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, "must be finite"))
    }
}

/// Axis-aligned face box in image coordinates (origin top-left, pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        ensure_finite("bbox.x", x)?;
        ensure_finite("bbox.y", y)?;
        ensure_finite("bbox.w", w)?;
        ensure_finite("bbox.h", h)?;
        if w <= 0.0 {
            return Err(Error::invalid("bbox.w", "must be > 0"));
        }
        if h <= 0.0 {
            return Err(Error::invalid("bbox.h", "must be > 0"));
        }
        ensure_finite("bbox.x+w", x + w)?;
        ensure_finite("bbox.y+h", y + h)?;
        Ok(BBox { x, y, w, h })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    /// Closed containment test.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x + self.w && py >= self.y && py <= self.y + self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self> {
        BBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

/// Real vector with Euclidean norm 1 (within [`UNIT_NORM_TOLERANCE`]).
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Scales `values` to unit length. Fails on empty, non-finite or zero input.
    pub fn normalize(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding", "must not be empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding", "must be finite"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid("embedding", "has zero norm"));
        }
        Ok(UnitVector(values.into_iter().map(|v| v / norm).collect()))
    }

    /// Accepts `values` only if it already has unit norm.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding", "must be a non-empty finite vector"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::invalid(
                "embedding",
                format!("must have unit norm (got {norm})"),
            ));
        }
        Ok(UnitVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }

    /// Renormalized element-wise mean of `vectors`.
    pub fn mean_direction<'a, I>(vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a UnitVector>,
    {
        let mut iter = vectors.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::invalid("vectors", "must not be empty"))?;
        let mut sum = first.0.clone();
        let mut count = 1usize;
        for v in iter {
            if v.dim() != sum.len() {
                return Err(Error::invalid("vectors", "dimension mismatch"));
            }
            for (s, x) in sum.iter_mut().zip(&v.0) {
                *s += x;
            }
            count += 1;
        }
        let inv = 1.0 / count as f64;
        sum.iter_mut().for_each(|s| *s *= inv);
        UnitVector::normalize(sum)
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Two-class gender estimator output for one face crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenderScores {
    male: f64,
    female: f64,
}

impl GenderScores {
    pub fn new(male: f64, female: f64) -> Result<Self> {
        ensure_finite("gender.male", male)?;
        ensure_finite("gender.female", female)?;
        if male < 0.0 {
            return Err(Error::invalid("gender.male", "must be >= 0"));
        }
        if female < 0.0 {
            return Err(Error::invalid("gender.female", "must be >= 0"));
        }
        Ok(GenderScores { male, female })
    }

    pub fn male(&self) -> f64 {
        self.male
    }

    pub fn female(&self) -> f64 {
        self.female
    }

    /// The gender this score pair votes for; `None` abstains on a tie.
    pub fn vote(&self) -> Option<Gender> {
        match self.male.partial_cmp(&self.female) {
            Some(Ordering::Greater) => Some(Gender::Male),
            Some(Ordering::Less) => Some(Gender::Female),
            _ => None,
        }
    }
}

/// One face observation in the field-camera video.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    frame: usize,
    ts_us: i64,
    bbox: BBox,
    embedding: UnitVector,
    gender: Option<GenderScores>,
}

impl Detection {
    pub fn new(
        frame: usize,
        ts_us: i64,
        bbox: BBox,
        embedding: UnitVector,
        gender: Option<GenderScores>,
    ) -> Self {
        Detection {
            frame,
            ts_us,
            bbox,
            embedding,
            gender,
        }
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn ts_us(&self) -> i64 {
        self.ts_us
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn embedding(&self) -> &UnitVector {
        &self.embedding
    }

    pub fn gender(&self) -> Option<GenderScores> {
        self.gender
    }

    /// Canonical detection order: frame, then box left edge, then box top edge.
    pub fn canonical_cmp(&self, other: &Detection) -> Ordering {
        self.frame
            .cmp(&other.frame)
            .then_with(|| self.bbox.x.total_cmp(&other.bbox.x))
            .then_with(|| self.bbox.y.total_cmp(&other.bbox.y))
    }
}

/// Sorts detections into canonical order and checks the list-level invariants:
/// common embedding dimension and timestamps non-decreasing in frame index.
pub fn sort_detections(detections: &mut [Detection]) -> Result<()> {
    detections.sort_by(Detection::canonical_cmp);
    if let Some(first) = detections.first() {
        let dim = first.embedding.dim();
        if let Some(bad) = detections.iter().find(|d| d.embedding.dim() != dim) {
            return Err(Error::invalid(
                "embedding",
                format!("dimension mismatch: expected {dim}, got {}", bad.embedding.dim()),
            ));
        }
    }
    for pair in detections.windows(2) {
        if pair[1].ts_us < pair[0].ts_us {
            return Err(Error::invalid(
                "ts_us",
                format!(
                    "must be non-decreasing in frame (frame {} at {} follows frame {} at {})",
                    pair[1].frame, pair[1].ts_us, pair[0].frame, pair[0].ts_us
                ),
            ));
        }
    }
    Ok(())
}

/// Raw eye-tracker sample in field-camera image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    pub ts_us: i64,
    pub x: f64,
    pub y: f64,
    pub valid: bool,
}

/// A temporally linked chain of detections of one face.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    id: usize,
    members: Vec<usize>,
    feature: UnitVector,
}

impl Tracklet {
    /// `members` are indices into `detections`.
    pub fn new(
        id: usize,
        members: Vec<usize>,
        feature: UnitVector,
        detections: &[Detection],
        max_gap: usize,
    ) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::invalid("tracklet.members", "must have at least 2 members"));
        }
        if let Some(&bad) = members.iter().find(|&&m| m >= detections.len()) {
            return Err(Error::invalid(
                "tracklet.members",
                format!("index {bad} out of range"),
            ));
        }
        for pair in members.windows(2) {
            let (a, b) = (detections[pair[0]].frame, detections[pair[1]].frame);
            if b <= a {
                return Err(Error::invalid(
                    "tracklet.members",
                    "frames must be strictly increasing",
                ));
            }
            if b - a > max_gap {
                return Err(Error::invalid(
                    "tracklet.members",
                    format!("frame gap {} exceeds max_gap {max_gap}", b - a),
                ));
            }
        }
        Ok(Tracklet {
            id,
            members,
            feature,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn feature(&self) -> &UnitVector {
        &self.feature
    }
}

/// One agglomeration step. Leaves are nodes `0..n`; merge `k` creates node `n + k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub cost: f64,
    pub size: usize,
}

/// Stepwise dendrogram produced by agglomerative clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    leaves: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    /// Relative slack allowed when checking cost monotonicity against rounding.
    pub const MONOTONE_TOLERANCE: f64 = 1e-12;

    pub fn new(leaves: usize, merges: Vec<Merge>) -> Result<Self> {
        if leaves < 1 {
            return Err(Error::invalid("dendrogram.leaves", "must be >= 1"));
        }
        if merges.len() != leaves - 1 {
            return Err(Error::invalid(
                "dendrogram.merges",
                format!("expected {} merges, got {}", leaves - 1, merges.len()),
            ));
        }
        let mut consumed = vec![false; 2 * leaves - 1];
        let mut sizes: Vec<usize> = vec![1; leaves];
        let mut previous = f64::NEG_INFINITY;
        for (k, m) in merges.iter().enumerate() {
            let next_node = leaves + k;
            for node in [m.left, m.right] {
                if node >= next_node {
                    return Err(Error::invalid(
                        "dendrogram.merges",
                        format!("merge {k} references unknown node {node}"),
                    ));
                }
                if consumed[node] {
                    return Err(Error::invalid(
                        "dendrogram.merges",
                        format!("node {node} consumed twice"),
                    ));
                }
                consumed[node] = true;
            }
            if m.left == m.right {
                return Err(Error::invalid("dendrogram.merges", "self merge"));
            }
            if !m.cost.is_finite() || m.cost < 0.0 {
                return Err(Error::invalid("dendrogram.cost", "must be finite and >= 0"));
            }
            if m.cost < previous - Self::MONOTONE_TOLERANCE * previous.abs().max(1.0) {
                return Err(Error::invalid(
                    "dendrogram.cost",
                    format!("merge costs must be non-decreasing ({} after {previous})", m.cost),
                ));
            }
            let size = sizes[m.left] + sizes[m.right];
            if size != m.size {
                return Err(Error::invalid(
                    "dendrogram.size",
                    format!("merge {k} declares size {} but joins {size} leaves", m.size),
                ));
            }
            sizes.push(size);
            previous = previous.max(m.cost);
        }
        Ok(Dendrogram { leaves, merges })
    }

    pub fn leaves(&self) -> usize {
        self.leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

impl Gender {
    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Gender> {
        match s {
            "male" | "m" => Some(Gender::Male),
            "female" | "f" => Some(Gender::Female),
            "unknown" => Some(Gender::Unknown),
            _ => None,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A student identity: clustered tracklets plus classified singleton detections.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCluster {
    pub label: usize,
    pub tracklet_ids: Vec<usize>,
    pub singleton_detections: Vec<usize>,
    pub centroid: UnitVector,
    pub gender: Gender,
    pub male_votes: usize,
    pub female_votes: usize,
}

/// What a fixation was attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Identity(usize),
    Unassigned,
}

impl Target {
    pub fn label(&self) -> Option<usize> {
        match self {
            Target::Identity(l) => Some(*l),
            Target::Unassigned => None,
        }
    }
}

/// A stable gaze interval between two saccades.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixationEvent {
    pub start_us: i64,
    pub end_us: i64,
    pub cx: f64,
    pub cy: f64,
    pub dispersion: f64,
    pub sample_count: usize,
    pub target: Target,
    pub motion_valid: bool,
}

impl FixationEvent {
    pub fn duration_us(&self) -> i64 {
        self.end_us - self.start_us
    }
}

/// Coarse egocentric motion between frame `frame` and `frame + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSummary {
    pub frame: usize,
    pub mean_magnitude: f64,
    /// Angle of the summed block displacement, in `(-pi, pi]`.
    pub mean_orientation: f64,
    pub kept_blocks: usize,
    /// Set when every block was rejected as low-variance.
    pub all_skipped: bool,
}
