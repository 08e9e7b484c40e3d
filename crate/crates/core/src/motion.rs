//! Coarse egocentric motion from block matching, gaze-shift detection and
//! motion-based fixation validation.

use std::f64::consts::PI;

use crate::attention::FrameSpan;
use crate::error::{Error, Result};
use crate::model::{FixationEvent, FlowSummary};

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image", "dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::invalid(
                "image",
                format!("expected {} pixels, got {}", width * height, data.len()),
            ));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Binary PGM (`P5`, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::invalid("pgm", "truncated header"));
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if tokens[0] != "P5" {
            return Err(Error::invalid("pgm", format!("unsupported magic {:?}", tokens[0])));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::invalid("pgm", format!("bad {what} {s:?}")))
        };
        let width = parse(&tokens[1], "width")?;
        let height = parse(&tokens[2], "height")?;
        let maxval = parse(&tokens[3], "maxval")?;
        if maxval != 255 {
            return Err(Error::invalid("pgm", format!("only 8-bit maxval 255 is supported (got {maxval})")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let end = pos + width * height;
        if end > bytes.len() {
            return Err(Error::invalid("pgm", "truncated raster"));
        }
        GrayImage::new(width, height, bytes[pos..end].to_vec())
    }
}

/// Block-matching parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockParams {
    pub block_size: usize,
    pub search_radius: usize,
}

/// Blocks whose intensity variance falls below this are not matched.
pub const MIN_BLOCK_VARIANCE: f64 = 1.0;

fn block_variance(img: &GrayImage, bx: usize, by: usize, size: usize) -> f64 {
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for y in by..by + size {
        for &v in &img.data[y * img.width + bx..y * img.width + bx + size] {
            let v = v as f64;
            sum += v;
            sum2 += v * v;
        }
    }
    let n = (size * size) as f64;
    let mean = sum / n;
    sum2 / n - mean * mean
}

fn sad(a: &GrayImage, b: &GrayImage, ax: usize, ay: usize, bx: usize, by: usize, size: usize, limit: u32) -> u32 {
    let mut total = 0u32;
    for row in 0..size {
        let ra = &a.data[(ay + row) * a.width + ax..][..size];
        let rb = &b.data[(by + row) * b.width + bx..][..size];
        total += ra
            .iter()
            .zip(rb)
            .map(|(&p, &q)| (p as i32 - q as i32).unsigned_abs())
            .sum::<u32>();
        if total > limit {
            return total;
        }
    }
    total
}

/// Best integer displacement of one block of `a` inside `b`.
///
/// Ties prefer the smaller displacement norm, then the smaller `dy`, then the
/// smaller `dx`.
fn match_block(a: &GrayImage, b: &GrayImage, bx: usize, by: usize, p: &BlockParams) -> (i32, i32) {
    let r = p.search_radius as i32;
    let mut best: Option<(u32, i32, i32, i32)> = None;
    for dy in -r..=r {
        for dx in -r..=r {
            let limit = best.map_or(u32::MAX, |b| b.0);
            let cost = sad(
                a,
                b,
                bx,
                by,
                (bx as i32 + dx) as usize,
                (by as i32 + dy) as usize,
                p.block_size,
                limit,
            );
            let norm = dx * dx + dy * dy;
            let better = match best {
                None => true,
                Some((c, n, y, x)) => (cost, norm, dy, dx) < (c, n, y, x),
            };
            if better {
                best = Some((cost, norm, dy, dx));
            }
        }
    }
    let (_, _, dy, dx) = best.expect("search window is never empty");
    (dx, dy)
}

/// Summarizes the motion from `frame_a` to `frame_b`.
///
/// Blocks of `block_size` tile the region whose full search window lies inside
/// the image. Each textured block is matched by minimum sum of absolute
/// differences. The magnitude is the mean displacement length over kept blocks;
/// the orientation is the angle of the summed displacement vector.
pub fn block_flow(
    frame_a: &GrayImage,
    frame_b: &GrayImage,
    frame: usize,
    params: &BlockParams,
) -> Result<FlowSummary> {
    if frame_a.width != frame_b.width || frame_a.height != frame_b.height {
        return Err(Error::invalid(
            "frame",
            format!(
                "dimension mismatch: {}x{} vs {}x{}",
                frame_a.width, frame_a.height, frame_b.width, frame_b.height
            ),
        ));
    }
    if params.block_size < 4 {
        return Err(Error::invalid("block_size", "must be >= 4"));
    }
    if params.search_radius < 1 {
        return Err(Error::invalid("search_radius", "must be >= 1"));
    }
    let (bs, r) = (params.block_size, params.search_radius);
    let mut kept = 0usize;
    let (mut sum_mag, mut sum_dx, mut sum_dy) = (0.0, 0.0, 0.0);
    let mut by = r;
    while by + bs + r <= frame_a.height {
        let mut bx = r;
        while bx + bs + r <= frame_a.width {
            if block_variance(frame_a, bx, by, bs) >= MIN_BLOCK_VARIANCE {
                let (dx, dy) = match_block(frame_a, frame_b, bx, by, params);
                kept += 1;
                sum_mag += ((dx * dx + dy * dy) as f64).sqrt();
                sum_dx += dx as f64;
                sum_dy += dy as f64;
            }
            bx += bs;
        }
        by += bs;
    }
    if kept == 0 {
        return Ok(FlowSummary {
            frame,
            mean_magnitude: 0.0,
            mean_orientation: 0.0,
            kept_blocks: 0,
            all_skipped: true,
        });
    }
    let mut orientation = if sum_dx == 0.0 && sum_dy == 0.0 {
        0.0
    } else {
        sum_dy.atan2(sum_dx)
    };
    if orientation <= -PI {
        orientation = PI;
    }
    Ok(FlowSummary {
        frame,
        mean_magnitude: sum_mag / kept as f64,
        mean_orientation: orientation,
        kept_blocks: kept,
        all_skipped: false,
    })
}

/// Flow summaries for consecutive frame pairs, computed in parallel.
pub fn flow_sequence(frames: &[GrayImage], params: &BlockParams) -> Result<Vec<FlowSummary>> {
    use rayon::prelude::*;
    (0..frames.len().saturating_sub(1))
        .into_par_iter()
        .map(|i| block_flow(&frames[i], &frames[i + 1], i, params))
        .collect()
}

/// Inclusive frame interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameInterval {
    pub start: usize,
    pub end: usize,
}

impl FrameInterval {
    pub fn overlaps(&self, first: usize, last: usize) -> bool {
        self.start <= last && first <= self.end
    }
}

/// Maximal runs of consecutive frames whose mean flow magnitude reaches the
/// threshold.
pub fn detect_gaze_shifts(flows: &[FlowSummary], shift_magnitude_px: f64) -> Vec<FrameInterval> {
    let mut out: Vec<FrameInterval> = Vec::new();
    let mut open: Option<FrameInterval> = None;
    for f in flows {
        let high = f.mean_magnitude >= shift_magnitude_px;
        open = match (open, high) {
            (Some(mut run), true) if f.frame == run.end + 1 => {
                run.end = f.frame;
                Some(run)
            }
            (Some(run), true) => {
                out.push(run);
                Some(FrameInterval { start: f.frame, end: f.frame })
            }
            (None, true) => Some(FrameInterval { start: f.frame, end: f.frame }),
            (Some(run), false) => {
                out.push(run);
                None
            }
            (None, false) => None,
        };
    }
    out.extend(open);
    out
}

/// Clears `motion_valid` on every fixation whose frame span overlaps a shift
/// interval and sets it on the rest. Nothing else is changed.
pub fn validate_fixations(
    fixations: &mut [FixationEvent],
    spans: &[FrameSpan],
    shifts: &[FrameInterval],
) -> Result<()> {
    if fixations.len() != spans.len() {
        return Err(Error::invalid("spans", "one frame span per fixation is required"));
    }
    for (f, span) in fixations.iter_mut().zip(spans) {
        f.motion_valid = !shifts.iter().any(|s| s.overlaps(span.first, span.last));
    }
    Ok(())
}
