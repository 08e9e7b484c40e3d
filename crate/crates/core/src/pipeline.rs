//! End-to-end session processing: stages, their composition and the
//! artifact set written for a run.

use std::collections::BTreeMap;
use std::path::Path;

use crate::attention::{assign_fixations, build_attention_map, gender_majority, FrameSpan};
use crate::cluster::{assign_singletons, cut, train_singleton_classifier, ward_linkage};
use crate::config::SessionConfig;
use crate::error::{Error, Result};
use crate::fixation::{detect_fixations, fixation_frame_span};
use crate::ingest::{self, ClusterArtifact, ReportFormat, SessionBundle};
use crate::model::{Dendrogram, Detection, FixationEvent, FlowSummary, GazeSample, IdentityCluster, UnitVector};
use crate::motion::{detect_gaze_shifts, flow_sequence, validate_fixations, BlockParams, FrameInterval};
use crate::report::AttentionReport;
use crate::tracklink::{link_detections, Linking};

/// Rewraps value errors as failures of the named stage; input and
/// configuration errors pass through.
fn in_stage<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Invalid { field, message } => Error::stage(stage, format!("{field} {message}")),
        other => other,
    })
}

pub fn link_stage(detections: &[Detection], cfg: &SessionConfig) -> Result<Linking> {
    in_stage("link", link_detections(detections, &cfg.linking))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub dendrogram: Dendrogram,
    /// Identity label per tracklet.
    pub tracklet_labels: Vec<usize>,
    /// (detection index, label, classifier margin) per singleton detection.
    pub singletons: Vec<(usize, usize, f64)>,
    /// Identity label per detection.
    pub detection_labels: Vec<usize>,
    pub clusters: Vec<IdentityCluster>,
}

impl Clustering {
    pub fn artifact(&self) -> ClusterArtifact {
        ClusterArtifact {
            tracklet_labels: self.tracklet_labels.clone(),
            singletons: self.singletons.clone(),
            detection_labels: self.detection_labels.clone(),
            centroids: self.clusters.iter().map(|c| c.centroid.clone()).collect(),
            genders: self.clusters.iter().map(|c| c.gender).collect(),
        }
    }
}

/// Ward clustering of tracklet features into `num_students` identities,
/// classification of singletons and per-identity gender votes.
pub fn cluster_stage(detections: &[Detection], linking: &Linking, cfg: &SessionConfig) -> Result<Clustering> {
    let k = cfg.num_students;
    let features: Vec<UnitVector> = linking.tracklets.iter().map(|t| t.feature().clone()).collect();
    if features.len() < k {
        return Err(Error::stage(
            "cluster",
            format!("{} tracklets cannot form {k} identities", features.len()),
        ));
    }
    let dendrogram = in_stage("cluster", ward_linkage(&features))?;
    let tracklet_labels = in_stage("cluster", cut(&dendrogram, k))?;
    let model = in_stage(
        "cluster",
        train_singleton_classifier(&features, &tracklet_labels, &cfg.classifier),
    )?;
    let singles: Vec<&Detection> = linking.singletons.iter().map(|&i| &detections[i]).collect();
    let predictions = assign_singletons(&model, &singles);

    let mut detection_labels = vec![usize::MAX; detections.len()];
    for (t, &label) in linking.tracklets.iter().zip(&tracklet_labels) {
        for &m in t.members() {
            detection_labels[m] = label;
        }
    }
    let singletons: Vec<(usize, usize, f64)> = linking
        .singletons
        .iter()
        .zip(&predictions)
        .map(|(&i, p)| {
            detection_labels[i] = p.label;
            (i, p.label, p.margin)
        })
        .collect();
    if detection_labels.iter().any(|&l| l == usize::MAX) {
        return Err(Error::stage("cluster", "a detection received no label"));
    }

    let mut clusters = Vec::with_capacity(k);
    for label in 0..k {
        let members: Vec<&Detection> = detections
            .iter()
            .zip(&detection_labels)
            .filter(|(_, &l)| l == label)
            .map(|(d, _)| d)
            .collect();
        let centroid = in_stage(
            "cluster",
            UnitVector::mean_direction(members.iter().map(|d| d.embedding())),
        )?;
        let (gender, male_votes, female_votes) = gender_majority(members.iter().filter_map(|d| d.gender()));
        clusters.push(IdentityCluster {
            label,
            tracklet_ids: (0..linking.tracklets.len()).filter(|&t| tracklet_labels[t] == label).collect(),
            singleton_detections: singletons.iter().filter(|s| s.1 == label).map(|s| s.0).collect(),
            centroid,
            gender,
            male_votes,
            female_votes,
        });
    }
    Ok(Clustering {
        dendrogram,
        tracklet_labels,
        singletons,
        detection_labels,
        clusters,
    })
}

/// Fixations inside the video and their frame spans.
pub fn fixation_stage(gaze: &[GazeSample], cfg: &SessionConfig) -> Result<(Vec<FixationEvent>, Vec<FrameSpan>)> {
    let all = in_stage(
        "fixations",
        detect_fixations(gaze, cfg.fixation.dispersion_threshold_px, cfg.fixation.min_duration_us()),
    )?;
    let video_end = cfg.gaze_offset_us + (cfg.frame_count as f64 * 1e6 / cfg.fps).round() as i64;
    let mut fixations = Vec::with_capacity(all.len());
    let mut spans = Vec::with_capacity(all.len());
    let mut outside = 0;
    for f in all {
        if f.end_us < cfg.gaze_offset_us || f.start_us >= video_end {
            outside += 1;
            continue;
        }
        let (first, last, mid) =
            in_stage("fixations", fixation_frame_span(&f, cfg.fps, cfg.gaze_offset_us, cfg.frame_count))?;
        fixations.push(f);
        spans.push(FrameSpan { first, last, mid });
    }
    if outside > 0 {
        log::info!("fixations: {outside} fixations outside the video were dropped");
    }
    Ok((fixations, spans))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionResult {
    pub flows: Vec<FlowSummary>,
    pub shifts: Vec<FrameInterval>,
}

/// Block flow over the frame dump, shift intervals, and the motion-valid
/// flag on every fixation.
pub fn motion_stage(
    frames_dir: &Path,
    cfg: &SessionConfig,
    fixations: &mut [FixationEvent],
    spans: &[FrameSpan],
) -> Result<MotionResult> {
    let frames = ingest::load_frames(frames_dir)?;
    let params = BlockParams {
        block_size: cfg.motion.block_size,
        search_radius: cfg.motion.search_radius,
    };
    let flows = in_stage("motion", flow_sequence(&frames, &params))?;
    let shifts = detect_gaze_shifts(&flows, cfg.motion.shift_magnitude_px);
    in_stage("motion", validate_fixations(fixations, spans, &shifts))?;
    Ok(MotionResult { flows, shifts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Build reports over motion-valid fixations only.
    pub validate_fixations: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub linking: Linking,
    pub clustering: Clustering,
    /// Every fixation inside the video, with target and motion flag set.
    pub fixations: Vec<FixationEvent>,
    pub spans: Vec<FrameSpan>,
    pub motion: Option<MotionResult>,
    pub report: AttentionReport,
}

/// Report metadata: resolved configuration, input hashes and run flags.
pub fn report_meta(bundle: &SessionBundle, opts: &RunOptions) -> BTreeMap<String, String> {
    let mut meta: BTreeMap<String, String> = bundle
        .config
        .to_key_values()
        .into_iter()
        .map(|(k, v)| (format!("config.{k}"), v))
        .collect();
    meta.extend(bundle.input_hashes.clone());
    meta.insert("run.validate_fixations".into(), opts.validate_fixations.to_string());
    meta.insert("run.gaze_out_of_range".into(), bundle.gaze_out_of_range.to_string());
    meta.insert("version".into(), env!("CARGO_PKG_VERSION").to_string());
    meta
}

/// Runs every stage on a loaded bundle.
pub fn run_pipeline(bundle: &SessionBundle, opts: &RunOptions) -> Result<PipelineOutput> {
    let cfg = &bundle.config;
    let detections = &bundle.detections;
    let linking = link_stage(detections, cfg)?;
    log::info!(
        "link: {} tracklets, {} singletons",
        linking.tracklets.len(),
        linking.singletons.len()
    );
    let clustering = cluster_stage(detections, &linking, cfg)?;
    let (mut fixations, spans) = fixation_stage(&bundle.gaze, cfg)?;
    log::info!("fixations: {}", fixations.len());
    let motion = match &bundle.frames_dir {
        Some(dir) => Some(motion_stage(dir, cfg, &mut fixations, &spans)?),
        None => None,
    };
    let targets = assign_fixations(
        &fixations,
        &spans,
        detections,
        &clustering.detection_labels,
        &cfg.attention,
    );
    for (f, t) in fixations.iter_mut().zip(&targets) {
        f.target = *t;
    }
    let keep: Vec<usize> = (0..fixations.len())
        .filter(|&i| !opts.validate_fixations || fixations[i].motion_valid)
        .collect();
    let kept_fixations: Vec<FixationEvent> = keep.iter().map(|&i| fixations[i]).collect();
    let kept_spans: Vec<FrameSpan> = keep.iter().map(|&i| spans[i]).collect();
    let kept_targets: Vec<_> = keep.iter().map(|&i| targets[i]).collect();
    let report = in_stage(
        "attention",
        build_attention_map(
            &kept_fixations,
            &kept_spans,
            &kept_targets,
            detections,
            &clustering.detection_labels,
            &clustering.clusters,
            cfg.frame_count,
            report_meta(bundle, opts),
        ),
    )?;
    Ok(PipelineOutput {
        linking,
        clustering,
        fixations,
        spans,
        motion,
        report,
    })
}

pub const ARTIFACT_TRACKLETS: &str = "tracklets.jsonl";
pub const ARTIFACT_CLUSTERS: &str = "clusters.json";
pub const ARTIFACT_FIXATIONS: &str = "fixations.csv";
pub const ARTIFACT_FLOW: &str = "flow.csv";
pub const ARTIFACT_REPORT_JSON: &str = "report.json";
pub const ARTIFACT_REPORT_CSV: &str = "report.csv";
pub const ARTIFACT_TIMELINE_CSV: &str = "timeline.csv";
pub const ARTIFACT_TIMELINE_SVG: &str = "timeline.svg";

/// Rendered artifact set of a run, file name to bytes.
pub fn artifacts(out: &PipelineOutput, detections: &[Detection]) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    files.insert(
        ARTIFACT_TRACKLETS.to_string(),
        ingest::write_tracklets(&out.linking.tracklets, detections).into_bytes(),
    );
    files.insert(
        ARTIFACT_CLUSTERS.to_string(),
        ingest::write_clusters(&out.clustering.artifact()).into_bytes(),
    );
    files.insert(
        ARTIFACT_FIXATIONS.to_string(),
        ingest::write_fixations(&out.fixations, &out.spans).into_bytes(),
    );
    if let Some(m) = &out.motion {
        files.insert(ARTIFACT_FLOW.to_string(), ingest::write_flow(&m.flows).into_bytes());
    }
    files.insert(
        ARTIFACT_REPORT_JSON.to_string(),
        ingest::write_report(&out.report, ReportFormat::Json),
    );
    files.insert(
        ARTIFACT_REPORT_CSV.to_string(),
        ingest::write_report(&out.report, ReportFormat::Csv),
    );
    files.insert(
        ARTIFACT_TIMELINE_CSV.to_string(),
        ingest::write_timeline(&out.report).into_bytes(),
    );
    files.insert(
        ARTIFACT_TIMELINE_SVG.to_string(),
        ingest::write_report(&out.report, ReportFormat::SvgTimeline),
    );
    files
}

pub fn write_artifacts(dir: &Path, files: &BTreeMap<String, Vec<u8>>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, bytes) in files {
        ingest::write_file(&dir.join(name), bytes)?;
    }
    Ok(())
}

/// Runs `f` on a dedicated pool of `jobs` worker threads (0 picks the
/// machine default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("jobs: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::confusion_matrix;
    use crate::synth::{generate_session, SynthScript};

    fn bundle_from(script: &SynthScript) -> (tempfile::TempDir, SessionBundle) {
        let dir = tempfile::tempdir().unwrap();
        generate_session(script).unwrap().write_to(dir.path()).unwrap();
        let bundle = ingest::load_bundle(dir.path(), &BTreeMap::new()).unwrap();
        (dir, bundle)
    }

    #[test]
    fn small_session_end_to_end() {
        let script = SynthScript::with_shares(4, &[0.5, 0.3, 0.2], 0.2, 60.0).unwrap();
        let session = generate_session(&script).unwrap();
        let (_dir, mut bundle) = bundle_from(&script);
        bundle.config.num_students = 3;
        let out = run_pipeline(&bundle, &RunOptions::default()).unwrap();
        let cm = confusion_matrix(&out.clustering.detection_labels, &session.truth.detection_identity).unwrap();
        assert!(cm.accuracy() > 0.98, "{}", cm.accuracy());
        assert!(out.report.total_fixations > 0);
        let files = artifacts(&out, &bundle.detections);
        assert!(files.contains_key(ARTIFACT_REPORT_JSON));
        assert!(!files.contains_key(ARTIFACT_FLOW));
    }

    #[test]
    fn too_few_tracklets_is_a_stage_error() {
        let script = SynthScript::with_shares(4, &[0.5, 0.5], 0.0, 4.0).unwrap();
        let (_dir, mut bundle) = bundle_from(&script);
        bundle.config.num_students = 50;
        let err = run_pipeline(&bundle, &RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "cluster", .. }), "{err}");
        assert_eq!(err.exit_code(), 3);
    }
}
