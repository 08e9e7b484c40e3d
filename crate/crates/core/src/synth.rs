//! Deterministic synthetic sessions with full ground truth.
//!
//! A script fixes seat boxes, an attention schedule and noise levels; the
//! generator turns it into detections, a gaze stream, optional procedural
//! frames and the ground truth needed to score every pipeline stage.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, DetectionHeader};
use crate::json::Json;
use crate::model::{dot, BBox, Detection, GazeSample, Gender, GenderScores, UnitVector};
use crate::motion::GrayImage;

/// Seeded random stream: ChaCha8 words with fixed conversions to floats,
/// integers and normals, so equal seeds give equal sessions everywhere.
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal via Box-Muller (cosine branch only).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentTarget {
    Identity(usize),
    Board,
    /// Head turn: the camera pans by `velocity` frame-dump pixels per frame
    /// while gaze holds still in image coordinates.
    Turn { velocity: [i32; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub target: SegmentTarget,
    pub duration_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    /// Largest rotation of a detection embedding away from its identity vector.
    pub embedding_angle_deg: f64,
    pub bbox_jitter_px: f64,
    pub gaze_jitter_px: f64,
    /// Largest offset of a fixation plateau from the target face center.
    pub fixation_offset_px: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurSegment {
    pub start_frame: usize,
    /// Inclusive.
    pub end_frame: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    /// Per-detection miss probability of the face detector.
    pub base_drop: f64,
    /// Per-frame probability that a student is detected during board segments.
    pub board_detection_rate: f64,
    /// Per-segment probability that a non-target student is in view.
    pub neighbor_visibility: f64,
    pub blur_segments: Vec<BlurSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDump {
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScript {
    pub seed: u64,
    pub num_identities: usize,
    pub embedding_dim: usize,
    pub duration_s: f64,
    pub fps: f64,
    pub gaze_rate_hz: f64,
    pub frame_width: f64,
    pub frame_height: f64,
    /// Face box `[x, y, w, h]` per identity.
    pub seats: Vec<[f64; 4]>,
    pub genders: Vec<Gender>,
    /// Probability that a detection's gender scores favor the true gender.
    pub gender_accuracy: f64,
    /// Region `[x, y, w, h]` where board and turn gaze lands.
    pub board: [f64; 4],
    pub saccade_ms: f64,
    pub attention_schedule: Vec<Segment>,
    pub noise: Noise,
    pub dropout: Dropout,
    #[serde(default)]
    pub frames: Option<FrameDump>,
}

/// Seat row used by the built-in scripts: four 90x110 faces across a
/// 1280x960 frame.
pub const DEFAULT_SEATS: [[f64; 4]; 4] = [
    [155.0, 400.0, 90.0, 110.0],
    [455.0, 400.0, 90.0, 110.0],
    [755.0, 400.0, 90.0, 110.0],
    [1055.0, 400.0, 90.0, 110.0],
];

const MIN_SEGMENT_FRAMES: usize = 12;
const MAX_SEGMENT_FRAMES: usize = 48;
const BLUR_FRAMES: usize = 6;
const BLUR_PROBABILITY: f64 = 0.9;
const TURN_FRAMES: usize = 16;
/// Frames at each end of a turn segment with the camera still.
const TURN_MARGIN: usize = 2;

/// Orders targets so no two neighbors are equal. At each step the target
/// with the most remaining uses is forced when it would otherwise become
/// unplaceable; otherwise a remaining target is drawn proportionally.
fn arrange(counts: &[usize], rng: &mut Rng) -> Result<Vec<usize>> {
    let mut left = counts.to_vec();
    let total: usize = counts.iter().sum();
    let mut out: Vec<usize> = Vec::with_capacity(total);
    for step in 0..total {
        let remaining = total - step;
        let prev = out.last().copied();
        let (max_t, &max_c) = left
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty counts");
        let pick = if 2 * max_c > remaining && prev != Some(max_t) {
            max_t
        } else {
            let weight: usize = left
                .iter()
                .enumerate()
                .filter(|&(t, _)| Some(t) != prev)
                .map(|(_, &c)| c)
                .sum();
            if weight == 0 {
                return Err(Error::invalid("schedule", "cannot avoid repeated targets"));
            }
            let mut r = rng.below(weight);
            let mut chosen = 0;
            for (t, &c) in left.iter().enumerate() {
                if Some(t) == prev {
                    continue;
                }
                if r < c {
                    chosen = t;
                    break;
                }
                r -= c;
            }
            chosen
        };
        left[pick] -= 1;
        out.push(pick);
    }
    Ok(out)
}

/// Random segment lengths in whole frames summing to `total`.
fn segment_frames(n: usize, total: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if n == 0 || n * MIN_SEGMENT_FRAMES > total || n * MAX_SEGMENT_FRAMES < total {
        return Err(Error::invalid(
            "schedule",
            format!("{n} segments cannot fill {total} frames"),
        ));
    }
    let mut frames: Vec<usize> = (0..n)
        .map(|_| MIN_SEGMENT_FRAMES + rng.below(MAX_SEGMENT_FRAMES - MIN_SEGMENT_FRAMES + 1))
        .collect();
    let mut sum: usize = frames.iter().sum();
    let mut i = 0;
    while sum != total {
        let f = &mut frames[i % n];
        if sum < total && *f < MAX_SEGMENT_FRAMES {
            *f += 1;
            sum += 1;
        } else if sum > total && *f > MIN_SEGMENT_FRAMES {
            *f -= 1;
            sum -= 1;
        }
        i += 1;
    }
    Ok(frames)
}

/// Largest-remainder apportionment of `n` items by `shares`.
fn apportion(shares: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

impl SynthScript {
    fn base(seed: u64, duration_s: f64) -> SynthScript {
        SynthScript {
            seed,
            num_identities: 4,
            embedding_dim: 128,
            duration_s,
            fps: 25.0,
            gaze_rate_hz: 120.0,
            frame_width: 1280.0,
            frame_height: 960.0,
            seats: DEFAULT_SEATS.to_vec(),
            genders: vec![Gender::Male, Gender::Male, Gender::Female, Gender::Female],
            gender_accuracy: 0.8,
            board: [300.0, 60.0, 680.0, 160.0],
            saccade_ms: 30.0,
            attention_schedule: Vec::new(),
            noise: Noise {
                embedding_angle_deg: 20.0,
                bbox_jitter_px: 2.0,
                gaze_jitter_px: 3.0,
                fixation_offset_px: 10.0,
            },
            dropout: Dropout {
                base_drop: 0.01,
                board_detection_rate: 0.02,
                neighbor_visibility: 0.02,
                blur_segments: Vec::new(),
            },
            frames: None,
        }
    }

    /// Builds a schedule whose identity segments follow `shares` and whose
    /// board segments make up `board_fraction` of all segments.
    pub fn with_shares(seed: u64, shares: &[f64], board_fraction: f64, duration_s: f64) -> Result<SynthScript> {
        if shares.is_empty() || shares.len() > DEFAULT_SEATS.len() {
            return Err(Error::invalid("shares", format!("need 1..={} identities", DEFAULT_SEATS.len())));
        }
        if shares.iter().any(|s| !(*s >= 0.0)) || shares.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("shares", "must be non-negative with a positive sum"));
        }
        if !(0.0..1.0).contains(&board_fraction) {
            return Err(Error::invalid("board_fraction", "must be in [0, 1)"));
        }
        let mut script = SynthScript::base(seed, duration_s);
        let k = shares.len();
        script.num_identities = k;
        script.seats.truncate(k);
        script.genders.truncate(k);

        let mut rng = Rng::new(seed ^ 0x5EED_5C4E_D01E);
        let total = (duration_s * script.fps).round() as usize;
        let n = total / ((MIN_SEGMENT_FRAMES + MAX_SEGMENT_FRAMES) / 2);
        let boards = (board_fraction * n as f64).round() as usize;
        let mut counts = apportion(shares, n - boards);
        counts.push(boards);
        let order = arrange(&counts, &mut rng)?;
        let frames = segment_frames(n, total, &mut rng)?;
        script.set_schedule(
            order
                .iter()
                .map(|&t| if t == k { SegmentTarget::Board } else { SegmentTarget::Identity(t) })
                .zip(frames)
                .collect(),
        );
        Ok(script)
    }

    /// Default full-length session: four students, fifteen minutes at 25 fps.
    pub fn default_session(seed: u64) -> SynthScript {
        SynthScript::with_shares(seed, &[0.4, 0.3, 0.2, 0.1], 0.3, 900.0)
            .expect("built-in script is feasible")
    }

    /// Short session with head turns and a procedural frame dump.
    pub fn motion_session(seed: u64, turns: usize) -> Result<SynthScript> {
        let duration_s = 8.0 + 4.0 * turns as f64;
        let mut script = SynthScript::with_shares(seed, &[0.4, 0.3, 0.2, 0.1], 0.0, duration_s)?;
        let mut rng = Rng::new(seed ^ 0x7E_A7);
        let velocities = [[6, 0], [-6, 0], [0, 5], [5, 5], [-7, 2], [0, -6]];
        let fps = script.fps;
        let mut plan: Vec<(SegmentTarget, usize)> = script
            .attention_schedule
            .iter()
            .map(|s| (s.target, (s.duration_ms * fps / 1000.0).round() as usize))
            .collect();
        // Evenly spaced turns, each carved out of the segment it replaces so
        // the total length is unchanged.
        let stride = plan.len() / (turns + 1);
        for t in 0..turns {
            let at = stride * (t + 1);
            let v = velocities[rng.below(velocities.len())];
            let frames = plan[at].1.max(TURN_FRAMES);
            let excess = frames - plan[at].1;
            plan[at] = (SegmentTarget::Turn { velocity: v }, frames);
            // give back borrowed frames from the following segment
            let next = &mut plan[at + 1].1;
            *next = next.saturating_sub(excess).max(MIN_SEGMENT_FRAMES);
        }
        let total: usize = (duration_s * fps).round() as usize;
        let sum: usize = plan.iter().map(|p| p.1).sum();
        if sum != total {
            let last = plan.len() - 1;
            plan[last].1 = (plan[last].1 + total).checked_sub(sum).filter(|&f| f >= MIN_SEGMENT_FRAMES).ok_or_else(|| Error::invalid("schedule", "turns do not fit"))?;
        }
        script.set_schedule(plan);
        script.frames = Some(FrameDump { width: 160, height: 120 });
        Ok(script)
    }

    /// Installs a schedule given in whole frames and derives the
    /// transition-blur intervals at each segment start.
    fn set_schedule(&mut self, plan: Vec<(SegmentTarget, usize)>) {
        let mut blur = Vec::new();
        let mut start = 0;
        self.attention_schedule = plan
            .into_iter()
            .map(|(target, frames)| {
                if start > 0 {
                    blur.push(BlurSegment {
                        start_frame: start,
                        end_frame: start + BLUR_FRAMES - 1,
                        probability: BLUR_PROBABILITY,
                    });
                }
                start += frames;
                Segment {
                    target,
                    duration_ms: frames as f64 * 1000.0 / self.fps,
                }
            })
            .collect();
        self.dropout.blur_segments = blur;
    }

    pub fn from_json(bytes: &[u8]) -> Result<SynthScript> {
        serde_json::from_slice(bytes).map_err(|e| Error::parse(SCRIPT_FILE, e.line(), e.to_string()))
    }

    pub fn total_frames(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    /// Segment boundaries as half-open frame ranges.
    pub fn segment_frames(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.attention_schedule
            .iter()
            .map(|s| {
                let end = start + (s.duration_ms * self.fps / 1000.0).round() as usize;
                let r = (start, end);
                start = end;
                r
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_identities;
        if k == 0 {
            return Err(Error::invalid("num_identities", "must be >= 1"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::invalid("embedding_dim", "must be >= 1"));
        }
        for (name, v) in [
            ("duration_s", self.duration_s),
            ("fps", self.fps),
            ("gaze_rate_hz", self.gaze_rate_hz),
            ("frame_width", self.frame_width),
            ("frame_height", self.frame_height),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, "must be > 0"));
            }
        }
        if self.seats.len() != k || self.genders.len() != k {
            return Err(Error::invalid("seats", "one seat box and gender per identity"));
        }
        let seats: Vec<BBox> = self
            .seats
            .iter()
            .map(|&[x, y, w, h]| BBox::new(x, y, w, h))
            .collect::<Result<_>>()?;
        for i in 0..k {
            for j in i + 1..k {
                let (a, b) = (&seats[i], &seats[j]);
                let apart = a.x() + a.w() <= b.x()
                    || b.x() + b.w() <= a.x()
                    || a.y() + a.h() <= b.y()
                    || b.y() + b.h() <= a.y();
                if !apart {
                    return Err(Error::invalid("seats", format!("seats {i} and {j} overlap")));
                }
            }
        }
        for (name, p) in [
            ("gender_accuracy", self.gender_accuracy),
            ("dropout.base_drop", self.dropout.base_drop),
            ("dropout.board_detection_rate", self.dropout.board_detection_rate),
            ("dropout.neighbor_visibility", self.dropout.neighbor_visibility),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(name, "must be a probability"));
            }
        }
        let n = &self.noise;
        for (name, v) in [
            ("noise.embedding_angle_deg", n.embedding_angle_deg),
            ("noise.bbox_jitter_px", n.bbox_jitter_px),
            ("noise.gaze_jitter_px", n.gaze_jitter_px),
            ("noise.fixation_offset_px", n.fixation_offset_px),
            ("saccade_ms", self.saccade_ms),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, "must be >= 0"));
            }
        }
        if n.embedding_angle_deg > 90.0 {
            return Err(Error::invalid("noise.embedding_angle_deg", "must be <= 90"));
        }
        BBox::new(self.board[0], self.board[1], self.board[2], self.board[3])?;
        if self.attention_schedule.is_empty() {
            return Err(Error::invalid("attention_schedule", "must not be empty"));
        }
        let mut frames = 0;
        for (i, s) in self.attention_schedule.iter().enumerate() {
            let f = s.duration_ms * self.fps / 1000.0;
            if !(f >= 1.0) || (f - f.round()).abs() > 1e-6 {
                return Err(Error::invalid(
                    "attention_schedule",
                    format!("segment {i} must last a positive whole number of frames"),
                ));
            }
            let f = f.round() as usize;
            match s.target {
                SegmentTarget::Identity(t) if t >= k => {
                    return Err(Error::invalid("attention_schedule", format!("segment {i} targets unknown identity {t}")));
                }
                SegmentTarget::Turn { .. } if f < 2 * TURN_MARGIN + 2 => {
                    return Err(Error::invalid("attention_schedule", format!("turn segment {i} is too short")));
                }
                _ => {}
            }
            frames += f;
        }
        if frames != self.total_frames() {
            return Err(Error::invalid(
                "attention_schedule",
                format!("segments cover {frames} frames, duration needs {}", self.total_frames()),
            ));
        }
        for b in &self.dropout.blur_segments {
            if b.end_frame < b.start_frame || !(0.0..=1.0).contains(&b.probability) {
                return Err(Error::invalid("dropout.blur_segments", "bad interval"));
            }
        }
        if let Some(d) = self.frames {
            if d.width == 0 || d.height == 0 {
                return Err(Error::invalid("frames", "dimensions must be > 0"));
            }
        }
        Ok(())
    }
}

/// What a planted fixation looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantedTarget {
    Identity(usize),
    Board,
    Turn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedFixation {
    pub start_us: i64,
    pub end_us: i64,
    pub cx: f64,
    pub cy: f64,
    pub target: PlantedTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Identity of every detection, in canonical detection order.
    pub detection_identity: Vec<usize>,
    pub identity_genders: Vec<Gender>,
    pub identity_vectors: Vec<Vec<f64>>,
    pub fixations: Vec<PlantedFixation>,
    /// Inclusive flow-frame intervals with camera motion.
    pub turn_intervals: Vec<[usize; 2]>,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        let target = |t: PlantedTarget| match t {
            PlantedTarget::Identity(k) => Json::object([("identity", Json::Int(k as i64))]),
            PlantedTarget::Board => Json::Str("board".into()),
            PlantedTarget::Turn => Json::Str("turn".into()),
        };
        Json::object([
            ("detection_identity", Json::usizes(&self.detection_identity)),
            (
                "identity_genders",
                Json::Array(self.identity_genders.iter().map(|g| Json::Str(g.as_str().into())).collect()),
            ),
            (
                "identity_vectors",
                Json::Array(self.identity_vectors.iter().map(|v| Json::floats(v)).collect()),
            ),
            (
                "fixations",
                Json::Array(
                    self.fixations
                        .iter()
                        .map(|f| {
                            Json::object([
                                ("start_us", Json::Int(f.start_us)),
                                ("end_us", Json::Int(f.end_us)),
                                ("cx", Json::Float(f.cx)),
                                ("cy", Json::Float(f.cy)),
                                ("target", target(f.target)),
                            ])
                        })
                        .collect(),
                ),
            ),
            (
                "turn_intervals",
                Json::Array(self.turn_intervals.iter().map(|i| Json::usizes(i)).collect()),
            ),
        ])
        .pretty()
    }

    pub fn from_json(bytes: &[u8]) -> Result<GroundTruth> {
        serde_json::from_slice(bytes).map_err(|e| Error::parse("ground_truth.json", e.line(), e.to_string()))
    }
}

/// A generated session, in memory.
#[derive(Debug, Clone)]
pub struct SynthSession {
    pub script: SynthScript,
    pub header: DetectionHeader,
    pub detections: Vec<Detection>,
    pub gaze: Vec<GazeSample>,
    pub frames: Vec<GrayImage>,
    pub truth: GroundTruth,
}

/// `K` unit vectors with pairwise angles of at least 60 degrees.
fn identity_vectors(k: usize, d: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    const ATTEMPTS: usize = 10_000;
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0;
    while out.len() < k {
        attempts += 1;
        if attempts > ATTEMPTS * k {
            return Err(Error::invalid(
                "num_identities",
                format!("cannot place {k} identities 60 degrees apart in {d} dimensions"),
            ));
        }
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let Ok(v) = UnitVector::normalize(v) else { continue };
        if out.iter().all(|u| dot(u, v.as_slice()) <= 0.5) {
            out.push(v.as_slice().to_vec());
        }
    }
    Ok(out)
}

/// Rotates unit vector `v` by a uniform angle in `[0, max_angle]` toward a
/// random orthogonal direction.
fn perturb(v: &[f64], max_angle: f64, rng: &mut Rng) -> Vec<f64> {
    if max_angle == 0.0 || v.len() < 2 {
        return v.to_vec();
    }
    let u = loop {
        let mut u: Vec<f64> = (0..v.len()).map(|_| rng.normal()).collect();
        let along = dot(&u, v);
        for (ui, vi) in u.iter_mut().zip(v) {
            *ui -= along * vi;
        }
        let norm = dot(&u, &u).sqrt();
        if norm > 1e-9 {
            break u.into_iter().map(|x| x / norm).collect::<Vec<f64>>();
        }
    };
    let angle = rng.uniform() * max_angle;
    let (s, c) = angle.sin_cos();
    v.iter().zip(&u).map(|(a, b)| c * a + s * b).collect()
}

/// Intensity of the procedural scene texture at integer position `(x, y)`.
pub fn texture(seed: u64, x: i64, y: i64) -> u8 {
    let mut h = seed
        ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 30;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 31;
    (h >> 56) as u8
}

fn frame_ts(frame: usize, fps: f64) -> i64 {
    (frame as f64 * 1e6 / fps).round() as i64
}

/// Generates a session from a script. Identical scripts give identical
/// sessions.
pub fn generate_session(script: &SynthScript) -> Result<SynthSession> {
    script.validate()?;
    let mut rng = Rng::new(script.seed);
    let k = script.num_identities;
    let vectors = identity_vectors(k, script.embedding_dim, &mut rng)?;
    let seats: Vec<BBox> = script
        .seats
        .iter()
        .map(|&[x, y, w, h]| BBox::new(x, y, w, h))
        .collect::<Result<_>>()?;
    let segments = script.segment_frames();
    let total_frames = script.total_frames();
    let noise = script.noise;
    let max_angle = noise.embedding_angle_deg.to_radians();
    let board = script.board;

    // Plateau point of every segment.
    let points: Vec<(f64, f64)> = script
        .attention_schedule
        .iter()
        .map(|s| match s.target {
            SegmentTarget::Identity(t) => {
                let (cx, cy) = seats[t].center();
                let o = noise.fixation_offset_px;
                (cx + rng.range(-o, o), cy + rng.range(-o, o))
            }
            SegmentTarget::Board | SegmentTarget::Turn { .. } => (
                rng.range(board[0], board[0] + board[2]),
                rng.range(board[1], board[1] + board[3]),
            ),
        })
        .collect();

    let mut blur_drop = vec![0.0f64; total_frames];
    for b in &script.dropout.blur_segments {
        for p in blur_drop.iter_mut().take(b.end_frame.min(total_frames.saturating_sub(1)) + 1).skip(b.start_frame) {
            *p = p.max(b.probability);
        }
    }

    let mut detections = Vec::new();
    let mut detection_identity = Vec::new();
    let mut turn_intervals = Vec::new();
    let mut camera_step = vec![[0i64; 2]; total_frames];
    for (seg, (&(start, end), s)) in segments.iter().zip(&script.attention_schedule).enumerate() {
        let neighbors: Vec<bool> = (0..k).map(|_| rng.chance(script.dropout.neighbor_visibility)).collect();
        if let SegmentTarget::Turn { velocity } = s.target {
            let (first, last) = (start + TURN_MARGIN, end - TURN_MARGIN - 1);
            let pairs = last - first;
            for (n, step) in camera_step[first..last].iter_mut().enumerate() {
                let sign = if 2 * n < pairs { 1 } else { -1 };
                *step = [sign * velocity[0] as i64, sign * velocity[1] as i64];
            }
            turn_intervals.push([first, last - 1]);
        }
        let _ = seg;
        for frame in start..end {
            let ts = frame_ts(frame, script.fps);
            for (id, seat) in seats.iter().enumerate() {
                let in_view = match s.target {
                    SegmentTarget::Identity(t) => t == id || neighbors[id],
                    SegmentTarget::Board => rng.chance(script.dropout.board_detection_rate),
                    SegmentTarget::Turn { .. } => false,
                };
                if !in_view || rng.chance(script.dropout.base_drop) || rng.chance(blur_drop[frame]) {
                    continue;
                }
                let j = noise.bbox_jitter_px;
                let bbox = BBox::new(
                    seat.x() + rng.range(-j, j),
                    seat.y() + rng.range(-j, j),
                    seat.w() + rng.range(-j, j),
                    seat.h() + rng.range(-j, j),
                )?;
                let embedding = UnitVector::from_unit(perturb(&vectors[id], max_angle, &mut rng))?;
                let strong = rng.range(0.5, 1.0);
                let correct = rng.chance(script.gender_accuracy);
                let male_high = (script.genders[id] == Gender::Male) == correct;
                let gender = if male_high {
                    GenderScores::new(strong, 1.0 - strong)?
                } else {
                    GenderScores::new(1.0 - strong, strong)?
                };
                detections.push(Detection::new(frame, ts, bbox, embedding, Some(gender)));
                detection_identity.push(id);
            }
        }
    }

    let saccade_us = (script.saccade_ms * 1000.0).round() as i64;
    let bounds: Vec<(i64, i64)> = segments
        .iter()
        .map(|&(a, b)| (frame_ts(a, script.fps), frame_ts(b, script.fps)))
        .collect();
    let fixations: Vec<PlantedFixation> = script
        .attention_schedule
        .iter()
        .enumerate()
        .map(|(i, s)| PlantedFixation {
            start_us: bounds[i].0 + if i > 0 { saccade_us } else { 0 },
            end_us: bounds[i].1,
            cx: points[i].0,
            cy: points[i].1,
            target: match s.target {
                SegmentTarget::Identity(t) => PlantedTarget::Identity(t),
                SegmentTarget::Board => PlantedTarget::Board,
                SegmentTarget::Turn { .. } => PlantedTarget::Turn,
            },
        })
        .collect();

    let samples = (script.duration_s * script.gaze_rate_hz).floor() as usize;
    let mut gaze = Vec::with_capacity(samples);
    let mut seg = 0;
    let gj = noise.gaze_jitter_px;
    for i in 0..samples {
        let ts = (i as f64 * 1e6 / script.gaze_rate_hz).floor() as i64;
        while seg + 1 < bounds.len() && ts >= bounds[seg].1 {
            seg += 1;
        }
        let since = ts - bounds[seg].0;
        let (x, y) = if seg > 0 && since < saccade_us {
            let f = since as f64 / saccade_us as f64;
            let (px, py) = points[seg - 1];
            let (nx, ny) = points[seg];
            (px + f * (nx - px), py + f * (ny - py))
        } else {
            (points[seg].0 + rng.range(-gj, gj), points[seg].1 + rng.range(-gj, gj))
        };
        gaze.push(GazeSample { ts_us: ts, x, y, valid: true });
    }

    let frames = match script.frames {
        Some(dump) => {
            let mut offset = [0i64; 2];
            let texture_seed = script.seed.wrapping_mul(0xD6E8_FEB8_6659_FD93);
            (0..total_frames)
                .map(|f| {
                    if f > 0 {
                        offset[0] += camera_step[f - 1][0];
                        offset[1] += camera_step[f - 1][1];
                    }
                    let [ox, oy] = offset;
                    GrayImage::from_fn(dump.width, dump.height, |x, y| {
                        texture(texture_seed, x as i64 + ox, y as i64 + oy)
                    })
                })
                .collect()
        }
        None => Vec::new(),
    };

    Ok(SynthSession {
        header: DetectionHeader {
            embedding_dim: script.embedding_dim,
            frame_count: total_frames,
            width: script.frame_width,
            height: script.frame_height,
        },
        script: script.clone(),
        detections,
        gaze,
        frames,
        truth: GroundTruth {
            detection_identity,
            identity_genders: script.genders.clone(),
            identity_vectors: vectors,
            fixations,
            turn_intervals,
        },
    })
}

/// Label of the identity vector closest in angle; ties go to the lower label.
pub fn oracle_identity(embedding: &[f64], identity_vectors: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (label, v) in identity_vectors.iter().enumerate() {
        let s = dot(embedding, v);
        if s > best.1 {
            best = (label, s);
        }
    }
    best.0
}

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const SCRIPT_FILE: &str = "script.json";

impl SynthSession {
    /// Rendered bundle files, relative path to bytes.
    pub fn files(&self) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        out.insert(
            ingest::DETECTIONS_FILE.to_string(),
            ingest::write_detections(&self.header, &self.detections).into_bytes(),
        );
        out.insert(ingest::GAZE_FILE.to_string(), ingest::write_gaze(&self.gaze).into_bytes());
        out.insert(GROUND_TRUTH_FILE.to_string(), self.truth.to_json().into_bytes());
        let mut script = serde_json::to_string_pretty(&self.script).expect("scripts serialize");
        script.push('\n');
        out.insert(SCRIPT_FILE.to_string(), script.into_bytes());
        for (i, f) in self.frames.iter().enumerate() {
            out.insert(format!("{}/frame_{i:06}.pgm", ingest::FRAMES_DIR), f.to_pgm());
        }
        out
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if !self.frames.is_empty() {
            let frames = dir.join(ingest::FRAMES_DIR);
            std::fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
        }
        for (name, bytes) in self.files() {
            ingest::write_file(&dir.join(name), &bytes)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> SynthScript {
        SynthScript::with_shares(seed, &[0.5, 0.5], 0.2, 20.0).unwrap()
    }

    #[test]
    fn rng_is_reproducible() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut r = Rng::new(1);
        for _ in 0..1000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            assert!(r.below(3) < 3);
        }
    }

    #[test]
    fn zero_noise_single_identity() {
        let mut script = SynthScript::base(3, 4.0);
        script.num_identities = 1;
        script.seats.truncate(1);
        script.genders.truncate(1);
        script.set_schedule(vec![(SegmentTarget::Identity(0), 100)]);
        script.noise.embedding_angle_deg = 0.0;
        let s = generate_session(&script).unwrap();
        assert!(!s.detections.is_empty());
        for d in &s.detections {
            assert_eq!(d.embedding().as_slice(), s.truth.identity_vectors[0].as_slice());
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_session(&tiny(42)).unwrap().files();
        let b = generate_session(&tiny(42)).unwrap().files();
        let c = generate_session(&tiny(43)).unwrap().files();
        assert_eq!(a, b);
        assert_ne!(a[ingest::GAZE_FILE], c[ingest::GAZE_FILE]);
    }

    #[test]
    fn identity_vectors_are_separated() {
        let s = generate_session(&tiny(5)).unwrap();
        let v = &s.truth.identity_vectors;
        assert!(dot(&v[0], &v[1]) <= 0.5);
        let mut rng = Rng::new(1);
        assert!(identity_vectors(3, 1, &mut rng).is_err());
    }

    #[test]
    fn oracle_ties_and_exact_match() {
        let ids = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]];
        assert_eq!(oracle_identity(&[0.0, 1.0], &ids), 1);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(oracle_identity(&[h, h], &ids), 0);
    }

    #[test]
    fn oracle_recovers_generator_labels() {
        let s = generate_session(&tiny(9)).unwrap();
        for (d, &id) in s.detections.iter().zip(&s.truth.detection_identity) {
            assert_eq!(oracle_identity(d.embedding().as_slice(), &s.truth.identity_vectors), id);
        }
    }

    #[test]
    fn detections_are_canonical_and_parse_back() {
        let s = generate_session(&tiny(11)).unwrap();
        let files = s.files();
        let (h, parsed) =
            ingest::parse_detections(files[ingest::DETECTIONS_FILE].as_slice(), "detections.jsonl").unwrap();
        assert_eq!(h, s.header);
        assert_eq!(parsed.len(), s.detections.len());
        for (a, b) in parsed.iter().zip(&s.detections) {
            assert_eq!(a.frame(), b.frame());
            assert!((a.bbox().x() - b.bbox().x()).abs() < 1e-6);
        }
        let gaze = ingest::parse_gaze(
            files[ingest::GAZE_FILE].as_slice(),
            "gaze.csv",
            &ingest::GazeBounds::frame(1280.0, 960.0),
        )
        .unwrap();
        assert_eq!(gaze.samples.len(), s.gaze.len());
        assert_eq!(gaze.out_of_range, 0);
        let truth = GroundTruth::from_json(&files[GROUND_TRUTH_FILE]).unwrap();
        assert_eq!(truth.detection_identity, s.truth.detection_identity);
        assert_eq!(truth.fixations.len(), s.truth.fixations.len());
    }

    #[test]
    fn schedule_has_no_repeats_and_fills_duration() {
        let script = SynthScript::default_session(1);
        script.validate().unwrap();
        for w in script.attention_schedule.windows(2) {
            assert_ne!(w[0].target, w[1].target);
        }
    }

    #[test]
    fn motion_script_plants_turns() {
        let script = SynthScript::motion_session(2, 3).unwrap();
        let s = generate_session(&script).unwrap();
        assert_eq!(s.truth.turn_intervals.len(), 3);
        assert_eq!(s.frames.len(), script.total_frames());
    }

    #[test]
    fn rejects_bad_scripts() {
        let mut s = tiny(1);
        s.seats[1] = s.seats[0];
        assert!(s.validate().is_err());
        let mut s = tiny(1);
        s.attention_schedule.pop();
        assert!(s.validate().is_err());
    }
}
