//! Low-level association of per-frame face detections into tracklets.
//!
//! The link affinity between two detections is the product of a location, a
//! size and an appearance term, each bounded in `[0, 1]`. Links are made
//! greedily in descending affinity under a two-threshold rule: the affinity
//! must clear `theta_high`, and it must beat every conflicting pair (one that
//! shares either endpoint) by at least `theta_margin`.

use crate::config::LinkingParams;
use crate::error::{Error, Result};
use crate::model::{BBox, Detection, Tracklet, UnitVector, UNIT_NORM_TOLERANCE};

/// Gaussian affinity of box centers, scaled by the mean box diagonal.
pub fn loc_affinity(a: &BBox, b: &BBox, sigma_loc: f64) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let d2 = (ax - bx).powi(2) + (ay - by).powi(2);
    let s = 0.5 * (a.diagonal() + b.diagonal());
    (-d2 / (sigma_loc * sigma_loc * s * s)).exp()
}

/// Product of the width ratio and height ratio (smaller over larger).
pub fn size_affinity(a: &BBox, b: &BBox) -> f64 {
    let ratio = |p: f64, q: f64| p.min(q) / p.max(q);
    ratio(a.w(), b.w()) * ratio(a.h(), b.h())
}

/// Shifted cosine similarity `(1 + <ea, eb>) / 2`.
pub fn app_affinity(ea: &[f64], eb: &[f64]) -> Result<f64> {
    if ea.len() != eb.len() {
        return Err(Error::invalid(
            "embedding",
            format!("dimension mismatch ({} vs {})", ea.len(), eb.len()),
        ));
    }
    for (name, v) in [("ea", ea), ("eb", eb)] {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= UNIT_NORM_TOLERANCE) {
            return Err(Error::invalid(name, format!("must be unit norm (got {norm})")));
        }
    }
    Ok(shifted_cosine(ea, eb))
}

fn shifted_cosine(ea: &[f64], eb: &[f64]) -> f64 {
    let dot: f64 = ea.iter().zip(eb).map(|(x, y)| x * y).sum();
    (0.5 * (1.0 + dot)).clamp(0.0, 1.0)
}

/// Full link affinity between an earlier detection `a` and a later detection `b`.
pub fn link_affinity(a: &Detection, b: &Detection, cfg: &LinkingParams) -> Result<f64> {
    if !(a.frame() < b.frame() && b.frame() <= a.frame() + cfg.max_gap) {
        return Err(Error::invalid(
            "frame",
            format!(
                "link requires a.frame < b.frame <= a.frame + max_gap (got {} -> {}, max_gap {})",
                a.frame(),
                b.frame(),
                cfg.max_gap
            ),
        ));
    }
    Ok(affinity_unchecked(a, b, cfg.sigma_loc))
}

fn affinity_unchecked(a: &Detection, b: &Detection, sigma_loc: f64) -> f64 {
    loc_affinity(a.bbox(), b.bbox(), sigma_loc)
        * size_affinity(a.bbox(), b.bbox())
        * shifted_cosine(a.embedding().as_slice(), b.embedding().as_slice())
}

/// Renormalized element-wise mean of member embeddings.
pub fn aggregate_embeddings<'a, I>(embeddings: I) -> Result<UnitVector>
where
    I: IntoIterator<Item = &'a UnitVector>,
{
    UnitVector::mean_direction(embeddings).map_err(|e| match e {
        Error::Invalid { field, .. } if field == "embedding" => {
            Error::invalid("tracklet", "degenerate tracklet: member embeddings cancel out")
        }
        other => other,
    })
}

/// Aggregated feature of an existing tracklet.
pub fn aggregate_tracklet(tracklet: &Tracklet, detections: &[Detection]) -> Result<UnitVector> {
    aggregate_embeddings(tracklet.members().iter().map(|&i| detections[i].embedding()))
}

/// Result of [`link_detections`]: every input detection is in exactly one
/// tracklet or in `singletons`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linking {
    pub tracklets: Vec<Tracklet>,
    /// Indices of detections that joined no chain, ascending.
    pub singletons: Vec<usize>,
}

struct Candidate {
    head: usize,
    det: usize,
    affinity: f64,
}

/// Links canonically ordered detections into tracklets.
///
/// Frames are swept in ascending order. Open chain tails from the previous
/// `max_gap` frames compete for the detections of the current frame. A chain
/// tail that had a confident (≥ `theta_high`) but ambiguous candidate is
/// retired once that candidate starts its own chain, so one face never keeps
/// two open tails.
pub fn link_detections(detections: &[Detection], cfg: &LinkingParams) -> Result<Linking> {
    let mut chains: Vec<Vec<usize>> = Vec::new();
    // (tail detection, chain index), kept sorted by tail detection index.
    let mut heads: Vec<(usize, usize)> = Vec::new();

    let mut start = 0;
    while start < detections.len() {
        let frame = detections[start].frame();
        let mut end = start;
        while end < detections.len() && detections[end].frame() == frame {
            end += 1;
        }
        if end < detections.len() && detections[end].frame() < frame {
            return Err(Error::invalid("detections", "must be in canonical order"));
        }

        heads.retain(|&(tail, _)| detections[tail].frame() + cfg.max_gap >= frame);

        let mut candidates = Vec::with_capacity(heads.len() * (end - start));
        for (h, &(tail, _)) in heads.iter().enumerate() {
            for det in start..end {
                let affinity = affinity_unchecked(&detections[tail], &detections[det], cfg.sigma_loc);
                candidates.push(Candidate { head: h, det, affinity });
            }
        }
        // Descending affinity; ties go to the earlier head frame, then the
        // lower head detection index, then the lower target index.
        candidates.sort_by(|a, b| {
            b.affinity
                .total_cmp(&a.affinity)
                .then_with(|| {
                    let (ta, tb) = (heads[a.head].0, heads[b.head].0);
                    detections[ta]
                        .frame()
                        .cmp(&detections[tb].frame())
                        .then(ta.cmp(&tb))
                })
                .then(a.det.cmp(&b.det))
        });

        let mut head_used = vec![false; heads.len()];
        let mut det_used = vec![false; end - start];
        let mut links: Vec<(usize, usize)> = Vec::new();
        for c in &candidates {
            if c.affinity < cfg.theta_high {
                break;
            }
            if head_used[c.head] || det_used[c.det - start] {
                continue;
            }
            let competitor = candidates
                .iter()
                .filter(|o| {
                    (o.head == c.head) != (o.det == c.det)
                        && !head_used[o.head]
                        && !det_used[o.det - start]
                })
                .map(|o| o.affinity)
                .fold(0.0_f64, f64::max);
            if c.affinity - competitor >= cfg.theta_margin {
                head_used[c.head] = true;
                det_used[c.det - start] = true;
                links.push((c.head, c.det));
            }
        }

        let mut retired = vec![false; heads.len()];
        let mut new_heads: Vec<(usize, usize)> = Vec::new();
        for &(h, det) in &links {
            let chain = heads[h].1;
            chains[chain].push(det);
            retired[h] = true;
            new_heads.push((det, chain));
        }
        for det in start..end {
            if det_used[det - start] {
                continue;
            }
            for c in candidates.iter().filter(|c| c.det == det) {
                if c.affinity >= cfg.theta_high && !head_used[c.head] {
                    retired[c.head] = true;
                }
            }
            chains.push(vec![det]);
            new_heads.push((det, chains.len() - 1));
        }
        let mut kept: Vec<(usize, usize)> = heads
            .iter()
            .zip(&retired)
            .filter(|(_, &r)| !r)
            .map(|(h, _)| *h)
            .collect();
        kept.extend(new_heads);
        kept.sort_unstable();
        heads = kept;
        start = end;
    }

    chains.sort_by_key(|c| c[0]);
    let mut tracklets = Vec::new();
    let mut singletons = Vec::new();
    for chain in chains {
        if chain.len() == 1 {
            singletons.push(chain[0]);
            continue;
        }
        let feature = aggregate_embeddings(chain.iter().map(|&i| detections[i].embedding()))?;
        let id = tracklets.len();
        tracklets.push(Tracklet::new(id, chain, feature, detections, cfg.max_gap)?);
    }
    singletons.sort_unstable();
    Ok(Linking {
        tracklets,
        singletons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bbox(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn unit(v: &[f64]) -> UnitVector {
        UnitVector::normalize(v.to_vec()).unwrap()
    }

    fn det(frame: usize, b: BBox, e: &[f64]) -> Detection {
        Detection::new(frame, frame as i64 * 40_000, b, unit(e), None)
    }

    fn params() -> LinkingParams {
        LinkingParams {
            theta_high: 0.8,
            theta_margin: 0.05,
            max_gap: 10,
            sigma_loc: 1.0,
        }
    }

    #[test]
    fn loc_affinity_examples() {
        let a = bbox(0.0, 0.0, 10.0, 10.0);
        assert_eq!(loc_affinity(&a, &a, 1.0), 1.0);
        let b = bbox(10.0, 0.0, 10.0, 10.0);
        // d = 10, s = sqrt(200): exp(-100 / 200)
        assert!((loc_affinity(&a, &b, 1.0) - (-0.5f64).exp()).abs() < 1e-12);
        assert!((loc_affinity(&a, &b, 1.0) - 0.6065).abs() < 1e-4);
        let far = bbox(1000.0, 0.0, 10.0, 10.0);
        assert!(loc_affinity(&a, &far, 1.0) < 1e-6);
    }

    #[test]
    fn size_affinity_examples() {
        let a = bbox(0.0, 0.0, 10.0, 10.0);
        assert_eq!(size_affinity(&a, &a), 1.0);
        assert_eq!(size_affinity(&a, &bbox(5.0, 5.0, 20.0, 10.0)), 0.5);
        assert_eq!(size_affinity(&a, &bbox(0.0, 0.0, 20.0, 5.0)), 0.25);
    }

    #[test]
    fn app_affinity_examples() {
        let e = [0.6, 0.8];
        assert!((app_affinity(&e, &e).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(app_affinity(&e, &[-0.6, -0.8]).unwrap(), 0.0);
        assert!((app_affinity(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(app_affinity(&[2.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn link_affinity_is_product_and_checks_order() {
        let a = det(0, bbox(0.0, 0.0, 10.0, 10.0), &[1.0, 0.0]);
        let b = det(1, bbox(10.0, 0.0, 20.0, 10.0), &[0.0, 1.0]);
        let p = link_affinity(&a, &b, &params()).unwrap();
        let expected = loc_affinity(a.bbox(), b.bbox(), 1.0) * 0.5 * 0.5;
        assert!((p - expected).abs() < 1e-12);
        assert!(link_affinity(&b, &a, &params()).is_err());
        let late = det(12, bbox(0.0, 0.0, 10.0, 10.0), &[1.0, 0.0]);
        assert!(link_affinity(&a, &late, &params()).is_err());
        let same = det(1, bbox(0.0, 0.0, 10.0, 10.0), &[1.0, 0.0]);
        assert_eq!(link_affinity(&a, &same, &params()).unwrap(), 1.0);
        let opposite = det(1, bbox(0.0, 0.0, 10.0, 10.0), &[-1.0, 0.0]);
        assert_eq!(link_affinity(&a, &opposite, &params()).unwrap(), 0.0);
    }

    #[test]
    fn confident_pair_links() {
        let dets = vec![
            det(0, bbox(100.0, 100.0, 50.0, 50.0), &[1.0, 0.0, 0.0]),
            det(1, bbox(102.0, 101.0, 50.0, 50.0), &[0.99, 0.1, 0.0]),
        ];
        let p = link_affinity(&dets[0], &dets[1], &params()).unwrap();
        assert!(p > 0.9 && p < 1.0, "{p}");
        let out = link_detections(&dets, &params()).unwrap();
        assert_eq!(out.tracklets.len(), 1);
        assert_eq!(out.tracklets[0].members(), &[0, 1]);
        assert!(out.singletons.is_empty());
    }

    #[test]
    fn ambiguous_pair_does_not_link() {
        // Two mirror-image detections at equal affinity to one head.
        let dets = vec![
            det(0, bbox(100.0, 100.0, 50.0, 50.0), &[1.0, 0.0, 0.0]),
            det(1, bbox(95.0, 100.0, 50.0, 50.0), &[1.0, 0.1, 0.0]),
            det(1, bbox(105.0, 100.0, 50.0, 50.0), &[1.0, -0.1, 0.0]),
        ];
        let p1 = link_affinity(&dets[0], &dets[1], &params()).unwrap();
        let p2 = link_affinity(&dets[0], &dets[2], &params()).unwrap();
        assert_eq!(p1, p2);
        assert!(p1 >= 0.8);
        let out = link_detections(&dets, &params()).unwrap();
        assert!(out.tracklets.is_empty());
        assert_eq!(out.singletons, vec![0, 1, 2]);
    }

    #[test]
    fn bridges_gaps_up_to_max_gap() {
        let b = bbox(0.0, 0.0, 40.0, 40.0);
        let dets = vec![det(0, b, &[1.0, 0.0]), det(10, b, &[1.0, 0.0]), det(21, b, &[1.0, 0.0])];
        let out = link_detections(&dets, &params()).unwrap();
        assert_eq!(out.tracklets.len(), 1);
        assert_eq!(out.tracklets[0].members(), &[0, 1]);
        assert_eq!(out.singletons, vec![2]);
    }

    #[test]
    fn aggregate_examples() {
        let dets = vec![
            det(0, bbox(0.0, 0.0, 10.0, 10.0), &[1.0, 0.0]),
            det(1, bbox(0.0, 0.0, 10.0, 10.0), &[0.0, 1.0]),
        ];
        let agg = aggregate_embeddings(dets.iter().map(|d| d.embedding())).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((agg.as_slice()[0] - h).abs() < 1e-12 && (agg.as_slice()[1] - h).abs() < 1e-12);

        let e = unit(&[0.3, 0.4, 0.5]);
        let same = aggregate_embeddings([&e, &e, &e]).unwrap();
        for (a, b) in same.as_slice().iter().zip(e.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }

        let a = unit(&[1.0, 0.0]);
        let b = unit(&[-1.0, 0.0]);
        let err = aggregate_embeddings([&a, &b]).unwrap_err().to_string();
        assert!(err.contains("degenerate tracklet"), "{err}");
    }
}
