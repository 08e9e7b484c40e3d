//! Dispersion-threshold (I-DT) fixation detection and mapping of fixations
//! onto field-camera frames.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::model::{FixationEvent, GazeSample, Target};

/// Sliding-window extrema over a run of samples, via monotone deques.
struct Extrema {
    min_x: VecDeque<usize>,
    max_x: VecDeque<usize>,
    min_y: VecDeque<usize>,
    max_y: VecDeque<usize>,
}

impl Extrema {
    fn new() -> Self {
        Extrema {
            min_x: VecDeque::new(),
            max_x: VecDeque::new(),
            min_y: VecDeque::new(),
            max_y: VecDeque::new(),
        }
    }

    fn clear(&mut self) {
        self.min_x.clear();
        self.max_x.clear();
        self.min_y.clear();
        self.max_y.clear();
    }

    fn push(&mut self, gaze: &[GazeSample], i: usize) {
        let s = gaze[i];
        while self.min_x.back().is_some_and(|&b| gaze[b].x >= s.x) {
            self.min_x.pop_back();
        }
        self.min_x.push_back(i);
        while self.max_x.back().is_some_and(|&b| gaze[b].x <= s.x) {
            self.max_x.pop_back();
        }
        self.max_x.push_back(i);
        while self.min_y.back().is_some_and(|&b| gaze[b].y >= s.y) {
            self.min_y.pop_back();
        }
        self.min_y.push_back(i);
        while self.max_y.back().is_some_and(|&b| gaze[b].y <= s.y) {
            self.max_y.pop_back();
        }
        self.max_y.push_back(i);
    }

    /// Drops indices below `lo`.
    fn advance(&mut self, lo: usize) {
        for q in [&mut self.min_x, &mut self.max_x, &mut self.min_y, &mut self.max_y] {
            while q.front().is_some_and(|&f| f < lo) {
                q.pop_front();
            }
        }
    }

    /// Dispersion of the current window extended by sample `s`.
    fn dispersion_with(&self, gaze: &[GazeSample], s: &GazeSample) -> f64 {
        let min_x = gaze[self.min_x[0]].x.min(s.x);
        let max_x = gaze[self.max_x[0]].x.max(s.x);
        let min_y = gaze[self.min_y[0]].y.min(s.y);
        let max_y = gaze[self.max_y[0]].y.max(s.y);
        (max_x - min_x) + (max_y - min_y)
    }
}

fn dispersion_of(samples: &[GazeSample]) -> f64 {
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in samples {
        min_x = min_x.min(s.x);
        max_x = max_x.max(s.x);
        min_y = min_y.min(s.y);
        max_y = max_y.max(s.y);
    }
    (max_x - min_x) + (max_y - min_y)
}

fn fixation_from(samples: &[GazeSample]) -> FixationEvent {
    let n = samples.len() as f64;
    let cx = samples.iter().map(|s| s.x).sum::<f64>() / n;
    let cy = samples.iter().map(|s| s.y).sum::<f64>() / n;
    FixationEvent {
        start_us: samples[0].ts_us,
        end_us: samples[samples.len() - 1].ts_us,
        cx,
        cy,
        dispersion: dispersion_of(samples),
        sample_count: samples.len(),
        target: Target::Unassigned,
        motion_valid: true,
    }
}

/// Detects fixations in a time-ordered gaze stream.
///
/// A window grows from the earliest uncovered valid sample while its
/// dispersion `(max_x - min_x) + (max_y - min_y)` stays within
/// `dispersion_threshold_px`. If it spans at least `min_duration_us` it becomes
/// a fixation and the sweep resumes after it; otherwise the start advances by
/// one sample. Invalid samples end any open window.
pub fn detect_fixations(
    gaze: &[GazeSample],
    dispersion_threshold_px: f64,
    min_duration_us: i64,
) -> Result<Vec<FixationEvent>> {
    if !(dispersion_threshold_px > 0.0) {
        return Err(Error::invalid("dispersion_threshold_px", "must be > 0"));
    }
    if min_duration_us <= 0 {
        return Err(Error::invalid("min_duration_us", "must be > 0"));
    }
    if let Some(w) = gaze.windows(2).find(|w| w[1].ts_us <= w[0].ts_us) {
        return Err(Error::invalid(
            "gaze",
            format!("timestamps must be strictly increasing ({} then {})", w[0].ts_us, w[1].ts_us),
        ));
    }

    let n = gaze.len();
    let mut events = Vec::new();
    let mut ext = Extrema::new();
    let mut lo = 0;
    // `hi` is one past the last member of the window [lo, hi).
    let mut hi = 0;
    while lo < n {
        if !gaze[lo].valid {
            lo += 1;
            hi = lo;
            ext.clear();
            continue;
        }
        if hi <= lo {
            ext.clear();
            ext.push(gaze, lo);
            hi = lo + 1;
        }
        while hi < n
            && gaze[hi].valid
            && ext.dispersion_with(gaze, &gaze[hi]) <= dispersion_threshold_px
        {
            ext.push(gaze, hi);
            hi += 1;
        }
        if gaze[hi - 1].ts_us - gaze[lo].ts_us >= min_duration_us {
            events.push(fixation_from(&gaze[lo..hi]));
            lo = hi;
            ext.clear();
        } else {
            lo += 1;
            ext.advance(lo);
        }
    }
    Ok(events)
}

/// Field-camera frame index of a gaze timestamp, clamped to the session.
pub fn frame_of(ts_us: i64, fps: f64, offset_us: i64, frame_count: usize) -> usize {
    let f = ((ts_us - offset_us) as f64 * fps / 1e6).floor();
    let last = frame_count.saturating_sub(1) as f64;
    f.clamp(0.0, last) as usize
}

/// Frame span of a fixation: first, last and temporal-midpoint frames.
pub fn fixation_frame_span(
    f: &FixationEvent,
    fps: f64,
    offset_us: i64,
    frame_count: usize,
) -> Result<(usize, usize, usize)> {
    if !(fps > 0.0) {
        return Err(Error::invalid("fps", "must be > 0"));
    }
    if f.end_us < offset_us {
        return Err(Error::invalid(
            "fixation",
            format!("ends at {} before the frame clock offset {offset_us}", f.end_us),
        ));
    }
    let frame_count = if frame_count == 0 { usize::MAX } else { frame_count };
    let mid_us = f.start_us + (f.end_us - f.start_us) / 2;
    Ok((
        frame_of(f.start_us, fps, offset_us, frame_count),
        frame_of(f.end_us, fps, offset_us, frame_count),
        frame_of(mid_us, fps, offset_us, frame_count),
    ))
}
