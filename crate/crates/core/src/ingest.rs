//! Readers and writers for the on-disk session formats and emitted artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::config::SessionConfig;
use crate::error::{Error, Result};
use crate::json::{fmt_f64, Json};
use crate::model::{sort_detections, BBox, Detection, FixationEvent, FlowSummary, GazeSample, Gender, GenderScores, Tracklet, UnitVector};
use crate::motion::GrayImage;
use crate::report::{AttentionReport, IdentityCounts, TimelineRow, TimelineTarget};
use crate::attention::{FrameSpan, RankTable};

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const GAZE_FILE: &str = "gaze.csv";
pub const FRAMES_DIR: &str = "frames";

/// First record of a detections stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionHeader {
    pub embedding_dim: usize,
    pub frame_count: usize,
    pub width: f64,
    pub height: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeader {
    embedding_dim: usize,
    frame_count: usize,
    width: f64,
    height: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetection {
    frame: usize,
    ts_us: i64,
    bbox: [f64; 4],
    embedding: Vec<f64>,
    #[serde(default)]
    gender: Option<[f64; 2]>,
}

fn read_lines(reader: impl BufRead, source: &str) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(source, idx + 1, e.to_string()))?;
        if !line.trim().is_empty() {
            out.push((idx + 1, line));
        }
    }
    Ok(out)
}

/// Parses a JSON-Lines detections stream: a header object, then one object
/// per detection. Embeddings are renormalized and the output is sorted
/// canonically.
pub fn parse_detections(reader: impl BufRead, source: &str) -> Result<(DetectionHeader, Vec<Detection>)> {
    let lines = read_lines(reader, source)?;
    let Some((header_line, header_text)) = lines.first() else {
        return Err(Error::parse(source, 1, "missing header record"));
    };
    let raw: RawHeader = serde_json::from_str(header_text)
        .map_err(|e| Error::parse(source, *header_line, format!("bad header: {e}")))?;
    if raw.embedding_dim == 0 {
        return Err(Error::parse(source, *header_line, "embedding_dim must be > 0"));
    }
    if !(raw.width.is_finite() && raw.width > 0.0 && raw.height.is_finite() && raw.height > 0.0) {
        return Err(Error::parse(source, *header_line, "width and height must be finite and > 0"));
    }
    let header = DetectionHeader {
        embedding_dim: raw.embedding_dim,
        frame_count: raw.frame_count,
        width: raw.width,
        height: raw.height,
    };

    let mut detections = Vec::with_capacity(lines.len().saturating_sub(1));
    for (line, text) in &lines[1..] {
        let at = |msg: String| Error::parse(source, *line, msg);
        let r: RawDetection = serde_json::from_str(text).map_err(|e| at(e.to_string()))?;
        if r.embedding.len() != header.embedding_dim {
            return Err(at(format!(
                "dimension mismatch: expected {}, got {}",
                header.embedding_dim,
                r.embedding.len()
            )));
        }
        if r.frame >= header.frame_count {
            return Err(at(format!(
                "frame {} beyond frame_count {}",
                r.frame, header.frame_count
            )));
        }
        if r.bbox.iter().chain(&r.embedding).any(|v| !v.is_finite()) {
            return Err(at("non-finite value".to_string()));
        }
        let [x, y, w, h] = r.bbox;
        let bbox = BBox::new(x, y, w, h).map_err(|e| at(e.to_string()))?;
        let embedding = UnitVector::normalize(r.embedding).map_err(|e| at(e.to_string()))?;
        let gender = r
            .gender
            .map(|[m, f]| GenderScores::new(m, f))
            .transpose()
            .map_err(|e| at(e.to_string()))?;
        detections.push(Detection::new(r.frame, r.ts_us, bbox, embedding, gender));
    }
    sort_detections(&mut detections).map_err(|e| Error::parse(source, 0, e.to_string()))?;
    Ok((header, detections))
}

fn header_json(h: &DetectionHeader) -> Json {
    let dim = |v: f64| {
        if v.fract() == 0.0 && v.abs() < 1e15 {
            Json::Int(v as i64)
        } else {
            Json::Float(v)
        }
    };
    Json::object([
        ("embedding_dim", Json::Int(h.embedding_dim as i64)),
        ("frame_count", Json::Int(h.frame_count as i64)),
        ("width", dim(h.width)),
        ("height", dim(h.height)),
    ])
}

/// Writes detections in the JSON-Lines format read by [`parse_detections`].
pub fn write_detections(header: &DetectionHeader, detections: &[Detection]) -> String {
    let mut out = header_json(header).compact();
    out.push('\n');
    for d in detections {
        let mut fields = vec![
            ("frame", Json::Int(d.frame() as i64)),
            ("ts_us", Json::Int(d.ts_us())),
            ("bbox", Json::floats(&d.bbox().to_array())),
            ("embedding", Json::floats(d.embedding().as_slice())),
        ];
        if let Some(g) = d.gender() {
            fields.push(("gender", Json::floats(&[g.male(), g.female()])));
        }
        out.push_str(&Json::object(fields).compact());
        out.push('\n');
    }
    out
}

/// Acceptance bounds for gaze rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeBounds {
    pub width: f64,
    pub height: f64,
    /// Inclusive timestamp window; rows outside it are an error.
    pub ts_window: Option<(i64, i64)>,
}

impl GazeBounds {
    pub fn frame(width: f64, height: f64) -> Self {
        GazeBounds {
            width,
            height,
            ts_window: None,
        }
    }

    /// Coordinates may lie up to half a frame outside the image on each side,
    /// a region twice the frame in each dimension.
    pub fn in_range(&self, x: f64, y: f64) -> bool {
        x >= -0.5 * self.width && x <= 1.5 * self.width && y >= -0.5 * self.height && y <= 1.5 * self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazeParse {
    pub samples: Vec<GazeSample>,
    /// Rows kept but marked invalid because their coordinates were out of range.
    pub out_of_range: usize,
}

/// Parses `ts_us,x,y,valid` rows. An optional header row starting with
/// `ts_us` is skipped. Output is sorted by timestamp.
pub fn parse_gaze(reader: impl BufRead, source: &str, bounds: &GazeBounds) -> Result<GazeParse> {
    let lines = read_lines(reader, source)?;
    let mut rows: Vec<(GazeSample, usize)> = Vec::with_capacity(lines.len());
    let mut out_of_range = 0;
    for (pos, (line, text)) in lines.iter().enumerate() {
        if pos == 0 && text.trim_start().starts_with("ts_us") {
            continue;
        }
        let at = |msg: String| Error::parse(source, *line, msg);
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(at(format!("expected 4 fields ts_us,x,y,valid, got {}", fields.len())));
        }
        let ts_us: i64 = fields[0].parse().map_err(|_| at(format!("bad ts_us {:?}", fields[0])))?;
        let x: f64 = fields[1].parse().map_err(|_| at(format!("bad x {:?}", fields[1])))?;
        let y: f64 = fields[2].parse().map_err(|_| at(format!("bad y {:?}", fields[2])))?;
        let mut valid = match fields[3] {
            "1" => true,
            "0" => false,
            other => return Err(at(format!("valid must be 0 or 1, got {other:?}"))),
        };
        if !x.is_finite() || !y.is_finite() {
            return Err(at("non-finite value".to_string()));
        }
        if let Some((lo, hi)) = bounds.ts_window {
            if ts_us < lo || ts_us > hi {
                return Err(at(format!("timestamp {ts_us} outside session window [{lo}, {hi}]")));
            }
        }
        if valid && !bounds.in_range(x, y) {
            valid = false;
            out_of_range += 1;
        }
        rows.push((GazeSample { ts_us, x, y, valid }, *line));
    }
    rows.sort_by_key(|(s, _)| s.ts_us);
    if let Some(w) = rows.windows(2).find(|w| w[0].0.ts_us == w[1].0.ts_us) {
        return Err(Error::parse(
            source,
            w[1].1.max(w[0].1),
            format!("duplicate timestamp {}", w[0].0.ts_us),
        ));
    }
    Ok(GazeParse {
        samples: rows.into_iter().map(|(s, _)| s).collect(),
        out_of_range,
    })
}

pub fn write_gaze(samples: &[GazeSample]) -> String {
    let mut out = String::from("ts_us,x,y,valid\n");
    for s in samples {
        writeln!(out, "{},{},{},{}", s.ts_us, fmt_f64(s.x), fmt_f64(s.y), u8::from(s.valid)).unwrap();
    }
    out
}

/// Output formats of [`write_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    SvgTimeline,
}

fn opt_float(map: &mut BTreeMap<String, Json>, key: &str, v: Option<f64>) {
    if let Some(v) = v {
        map.insert(key.to_string(), Json::Float(v));
    }
}

fn timeline_target_json(t: TimelineTarget) -> Json {
    match t {
        TimelineTarget::NoFixation => Json::Null,
        TimelineTarget::Unassigned => Json::Str("unassigned".into()),
        TimelineTarget::Identity(l) => Json::Int(l as i64),
    }
}

fn report_json(r: &AttentionReport) -> Json {
    let identities = r
        .identities
        .iter()
        .map(|i| {
            let mut m = BTreeMap::new();
            m.insert("label".into(), Json::Int(i.label as i64));
            m.insert("gender".into(), Json::Str(i.gender.as_str().into()));
            m.insert("male_votes".into(), Json::Int(i.male_votes as i64));
            m.insert("female_votes".into(), Json::Int(i.female_votes as i64));
            m.insert("frames_visible".into(), Json::Int(i.frames_visible as i64));
            m.insert("fixation_count".into(), Json::Int(i.fixation_count as i64));
            m.insert("fixation_duration_us".into(), Json::Int(i.fixation_duration_us));
            opt_float(&mut m, "fixation_share", i.fixation_share);
            opt_float(&mut m, "duration_share", i.duration_share);
            Json::Object(m)
        })
        .collect();
    let genders = r
        .genders
        .iter()
        .map(|g| {
            let mut m = BTreeMap::new();
            m.insert("gender".into(), Json::Str(g.gender.as_str().into()));
            m.insert("identities".into(), Json::Int(g.identities as i64));
            m.insert("fixation_count".into(), Json::Int(g.fixation_count as i64));
            m.insert("fixation_duration_us".into(), Json::Int(g.fixation_duration_us));
            opt_float(&mut m, "fixation_share", g.fixation_share);
            Json::Object(m)
        })
        .collect();
    let timeline = r
        .timeline
        .iter()
        .map(|row| {
            Json::Array(vec![
                Json::Int(row.frame as i64),
                Json::usizes(&row.visible),
                timeline_target_json(row.fixation),
            ])
        })
        .collect();
    let mut m = BTreeMap::new();
    m.insert(
        "meta".into(),
        Json::Object(r.meta.iter().map(|(k, v)| (k.clone(), Json::Str(v.clone()))).collect()),
    );
    m.insert("frame_count".into(), Json::Int(r.frame_count as i64));
    m.insert("identities".into(), Json::Array(identities));
    m.insert("genders".into(), Json::Array(genders));
    m.insert("total_fixations".into(), Json::Int(r.total_fixations as i64));
    m.insert("unassigned_count".into(), Json::Int(r.unassigned_count as i64));
    m.insert("unassigned_duration_us".into(), Json::Int(r.unassigned_duration_us));
    opt_float(&mut m, "unassigned_share", r.unassigned_share);
    m.insert("timeline".into(), Json::Array(timeline));
    Json::Object(m)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn report_csv(r: &AttentionReport) -> String {
    let mut out = String::from("kind,label,gender,frames_visible,fixation_count,fixation_duration_us,fixation_share,duration_share\n");
    for i in &r.identities {
        writeln!(
            out,
            "identity,{},{},{},{},{},{},{}",
            i.label,
            i.gender,
            i.frames_visible,
            i.fixation_count,
            i.fixation_duration_us,
            opt_cell(i.fixation_share),
            opt_cell(i.duration_share)
        )
        .unwrap();
    }
    let total_duration: i64 =
        r.identities.iter().map(|i| i.fixation_duration_us).sum::<i64>() + r.unassigned_duration_us;
    let unassigned_duration_share =
        (total_duration > 0).then(|| r.unassigned_duration_us as f64 / total_duration as f64);
    writeln!(
        out,
        "unassigned,,,,{},{},{},{}",
        r.unassigned_count,
        r.unassigned_duration_us,
        opt_cell(r.unassigned_share),
        opt_cell(unassigned_duration_share)
    )
    .unwrap();
    for g in &r.genders {
        writeln!(
            out,
            "gender,,{},,{},{},{},",
            g.gender,
            g.fixation_count,
            g.fixation_duration_us,
            opt_cell(g.fixation_share)
        )
        .unwrap();
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const UNASSIGNED_COLOR: &str = "#999999";

/// Maximal runs of frames satisfying `pred`, as half-open ranges.
fn runs(rows: &[TimelineRow], pred: impl Fn(&TimelineRow) -> bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, row) in rows.iter().enumerate() {
        match (pred(row), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, rows.len()));
    }
    out
}

fn report_svg(r: &AttentionReport) -> String {
    const LEFT: f64 = 110.0;
    const PLOT: f64 = 1000.0;
    const LANE: f64 = 24.0;
    let k = r.identities.len();
    let frames = r.timeline.len().max(1) as f64;
    let height = LANE * (k as f64 + 2.0) + 20.0;
    let x = |frame: usize| LEFT + PLOT * frame as f64 / frames;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="12">"#,
        fmt_f64(LEFT + PLOT + 10.0),
        fmt_f64(height)
    )
    .unwrap();
    let lane = |out: &mut String, row: usize, name: &str, spans: &[(usize, usize, &str)]| {
        let top = 10.0 + LANE * row as f64;
        writeln!(out, r#"<text x="4" y="{}">{name}</text>"#, fmt_f64(top + 16.0)).unwrap();
        for &(a, b, color) in spans {
            writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}"/>"#,
                fmt_f64(x(a)),
                fmt_f64(top + 4.0),
                fmt_f64(x(b) - x(a)),
                fmt_f64(LANE - 8.0)
            )
            .unwrap();
        }
    };
    for id in &r.identities {
        let color = PALETTE[id.label % PALETTE.len()];
        let spans: Vec<_> = runs(&r.timeline, |row| row.visible.contains(&id.label))
            .into_iter()
            .map(|(a, b)| (a, b, color))
            .collect();
        lane(&mut out, id.label, &format!("id {} ({})", id.label, id.gender), &spans);
    }
    let mut fixation_spans = Vec::new();
    let mut start = 0;
    while start < r.timeline.len() {
        let target = r.timeline[start].fixation;
        let mut end = start + 1;
        while end < r.timeline.len() && r.timeline[end].fixation == target {
            end += 1;
        }
        match target {
            TimelineTarget::Identity(l) => fixation_spans.push((start, end, PALETTE[l % PALETTE.len()])),
            TimelineTarget::Unassigned => fixation_spans.push((start, end, UNASSIGNED_COLOR)),
            TimelineTarget::NoFixation => {}
        }
        start = end;
    }
    lane(&mut out, k, "fixation", &fixation_spans);
    out.push_str("</svg>\n");
    out
}

/// Renders a report. Output is byte-identical for identical reports.
pub fn write_report(report: &AttentionReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => report_json(report).pretty().into_bytes(),
        ReportFormat::Csv => report_csv(report).into_bytes(),
        ReportFormat::SvgTimeline => report_svg(report).into_bytes(),
    }
}

fn field<'a>(v: &'a serde_json::Value, key: &str) -> Result<&'a serde_json::Value> {
    v.get(key).ok_or_else(|| Error::parse("report.json", 0, format!("missing field {key:?}")))
}

fn as_usize(v: &serde_json::Value, key: &str) -> Result<usize> {
    field(v, key)?
        .as_u64()
        .map(|u| u as usize)
        .ok_or_else(|| Error::parse("report.json", 0, format!("{key} must be a non-negative integer")))
}

fn as_i64(v: &serde_json::Value, key: &str) -> Result<i64> {
    field(v, key)?
        .as_i64()
        .ok_or_else(|| Error::parse("report.json", 0, format!("{key} must be an integer")))
}

/// Reads a JSON report written by [`write_report`]. Shares and gender
/// aggregates are recomputed from the stored counts.
pub fn parse_report(bytes: &[u8]) -> Result<AttentionReport> {
    let bad = |msg: String| Error::parse("report.json", 0, msg);
    let v: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| Error::parse("report.json", e.line(), e.to_string()))?;
    let meta = field(&v, "meta")?
        .as_object()
        .ok_or_else(|| bad("meta must be an object".into()))?
        .iter()
        .map(|(k, val)| {
            val.as_str()
                .map(|s| (k.clone(), s.to_string()))
                .ok_or_else(|| bad(format!("meta.{k} must be a string")))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let identities = field(&v, "identities")?
        .as_array()
        .ok_or_else(|| bad("identities must be an array".into()))?
        .iter()
        .map(|i| {
            let gender = field(i, "gender")?
                .as_str()
                .and_then(Gender::parse)
                .ok_or_else(|| bad("bad gender".into()))?;
            Ok(IdentityCounts {
                label: as_usize(i, "label")?,
                gender,
                male_votes: as_usize(i, "male_votes")?,
                female_votes: as_usize(i, "female_votes")?,
                frames_visible: as_usize(i, "frames_visible")?,
                fixation_count: as_usize(i, "fixation_count")?,
                fixation_duration_us: as_i64(i, "fixation_duration_us")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let timeline = field(&v, "timeline")?
        .as_array()
        .ok_or_else(|| bad("timeline must be an array".into()))?
        .iter()
        .map(|row| {
            let parts = row.as_array().filter(|p| p.len() == 3).ok_or_else(|| bad("timeline rows are [frame, visible, target]".into()))?;
            let frame = parts[0].as_u64().ok_or_else(|| bad("bad timeline frame".into()))? as usize;
            let visible = parts[1]
                .as_array()
                .ok_or_else(|| bad("bad timeline labels".into()))?
                .iter()
                .map(|l| l.as_u64().map(|u| u as usize).ok_or_else(|| bad("bad timeline label".into())))
                .collect::<Result<Vec<_>>>()?;
            let fixation = match &parts[2] {
                serde_json::Value::Null => TimelineTarget::NoFixation,
                serde_json::Value::String(s) if s == "unassigned" => TimelineTarget::Unassigned,
                other => TimelineTarget::Identity(
                    other.as_u64().ok_or_else(|| bad("bad timeline target".into()))? as usize,
                ),
            };
            Ok(TimelineRow { frame, visible, fixation })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = AttentionReport::from_counts(
        meta,
        as_usize(&v, "frame_count")?,
        identities,
        as_usize(&v, "unassigned_count")?,
        as_i64(&v, "unassigned_duration_us")?,
        timeline,
    )
    .map_err(|e| bad(e.to_string()))?;
    if report.total_fixations != as_usize(&v, "total_fixations")? {
        return Err(bad("total_fixations disagrees with the per-identity counts".into()));
    }
    Ok(report)
}

/// One tracklet per line: id, member frames, member detection indices and
/// aggregated feature.
pub fn write_tracklets(tracklets: &[Tracklet], detections: &[Detection]) -> String {
    let mut out = String::new();
    for t in tracklets {
        let frames: Vec<usize> = t.members().iter().map(|&i| detections[i].frame()).collect();
        let line = Json::object([
            ("id", Json::Int(t.id() as i64)),
            ("frames", Json::usizes(&frames)),
            ("detections", Json::usizes(t.members())),
            ("feature", Json::floats(t.feature().as_slice())),
        ]);
        out.push_str(&line.compact());
        out.push('\n');
    }
    out
}

/// Cluster assignment artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterArtifact {
    /// Label per tracklet id.
    pub tracklet_labels: Vec<usize>,
    /// (detection index, label, classifier margin) per singleton.
    pub singletons: Vec<(usize, usize, f64)>,
    /// Label per detection in canonical order.
    pub detection_labels: Vec<usize>,
    pub centroids: Vec<UnitVector>,
    pub genders: Vec<Gender>,
}

pub fn write_clusters(c: &ClusterArtifact) -> String {
    let singletons = c
        .singletons
        .iter()
        .map(|&(det, label, margin)| {
            Json::object([
                ("detection", Json::Int(det as i64)),
                ("label", Json::Int(label as i64)),
                (
                    "margin",
                    if margin.is_finite() { Json::Float(margin) } else { Json::Null },
                ),
            ])
        })
        .collect();
    Json::object([
        ("labels", Json::usizes(&c.tracklet_labels)),
        ("singleton_labels", Json::Array(singletons)),
        ("detection_labels", Json::usizes(&c.detection_labels)),
        (
            "centroids",
            Json::Array(c.centroids.iter().map(|v| Json::floats(v.as_slice())).collect()),
        ),
        (
            "genders",
            Json::Array(c.genders.iter().map(|g| Json::Str(g.as_str().into())).collect()),
        ),
    ])
    .pretty()
}

/// Reads the per-detection labels from a clusters artifact.
pub fn parse_cluster_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let bad = |msg: &str| Error::parse("clusters.json", 0, msg.to_string());
    let v: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Error::parse("clusters.json", e.line(), e.to_string()))?;
    v.get("detection_labels")
        .and_then(|l| l.as_array())
        .ok_or_else(|| bad("missing detection_labels"))?
        .iter()
        .map(|l| l.as_u64().map(|u| u as usize).ok_or_else(|| bad("bad label")))
        .collect()
}

pub fn write_fixations(fixations: &[FixationEvent], spans: &[FrameSpan]) -> String {
    let mut out =
        String::from("start_us,end_us,cx,cy,dispersion,sample_count,mid_frame,target,motion_valid\n");
    for (f, s) in fixations.iter().zip(spans) {
        let target = match f.target.label() {
            Some(l) => l.to_string(),
            None => "unassigned".to_string(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            f.start_us,
            f.end_us,
            fmt_f64(f.cx),
            fmt_f64(f.cy),
            fmt_f64(f.dispersion),
            f.sample_count,
            s.mid,
            target,
            u8::from(f.motion_valid)
        )
        .unwrap();
    }
    out
}

pub fn write_flow(flows: &[FlowSummary]) -> String {
    let mut out = String::from("frame,mean_magnitude,mean_orientation,kept_blocks\n");
    for f in flows {
        writeln!(
            out,
            "{},{},{},{}",
            f.frame,
            fmt_f64(f.mean_magnitude),
            fmt_f64(f.mean_orientation),
            f.kept_blocks
        )
        .unwrap();
    }
    out
}

pub fn write_timeline(report: &AttentionReport) -> String {
    let mut out = String::from("frame,visible_labels,fixation_label\n");
    for row in &report.timeline {
        let visible: Vec<String> = row.visible.iter().map(usize::to_string).collect();
        let target = match row.fixation {
            TimelineTarget::NoFixation => String::new(),
            TimelineTarget::Unassigned => "unassigned".to_string(),
            TimelineTarget::Identity(l) => l.to_string(),
        };
        writeln!(out, "{},{},{}", row.frame, visible.join(";"), target).unwrap();
    }
    out
}

/// Session-by-rank share table.
pub fn write_rank_table(table: &RankTable) -> String {
    let width = table.rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = String::from("session");
    for rank in 1..=width {
        write!(out, ",rank_{rank}").unwrap();
    }
    out.push('\n');
    for (name, row) in table.sessions.iter().zip(&table.rows) {
        out.push_str(name);
        for rank in 0..width {
            out.push(',');
            if let Some(v) = row.get(rank) {
                out.push_str(&fmt_f64(*v));
            }
        }
        out.push('\n');
    }
    out
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Everything one session needs, loaded and validated.
#[derive(Debug, Clone)]
pub struct SessionBundle {
    pub config: SessionConfig,
    pub header: DetectionHeader,
    pub detections: Vec<Detection>,
    pub gaze: Vec<GazeSample>,
    pub gaze_out_of_range: usize,
    pub frames_dir: Option<PathBuf>,
    /// `input.<file>` → sha256 of the raw bytes.
    pub input_hashes: BTreeMap<String, String>,
}

/// Sorted `frame_%06d.pgm` paths of a frame dump.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".pgm"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn load_frames(dir: &Path) -> Result<Vec<GrayImage>> {
    frame_paths(dir)?
        .iter()
        .map(|p| {
            let bytes = read_file(p)?;
            GrayImage::from_pgm(&bytes).map_err(|e| Error::parse(p.display().to_string(), 0, e.to_string()))
        })
        .collect()
}

/// Loads `detections.jsonl`, `gaze.csv` and the optional `frames/` directory
/// from `dir`. `assignments` are explicit configuration values; header
/// values fill the rest.
pub fn load_bundle(dir: &Path, assignments: &BTreeMap<String, String>) -> Result<SessionBundle> {
    let det_path = dir.join(DETECTIONS_FILE);
    let gaze_path = dir.join(GAZE_FILE);
    let det_bytes = read_file(&det_path)?;
    let gaze_bytes = read_file(&gaze_path)?;
    let (header, detections) = parse_detections(det_bytes.as_slice(), &det_path.display().to_string())?;
    let config = crate::config::resolve(assignments, Some(&header))?;

    let duration_us = (config.frame_count as f64 * 1e6 / config.fps).ceil() as i64;
    let bounds = GazeBounds {
        width: config.frame_width,
        height: config.frame_height,
        ts_window: Some((
            config.gaze_offset_us - 1_000_000,
            config.gaze_offset_us + duration_us + 1_000_000,
        )),
    };
    let gaze = parse_gaze(gaze_bytes.as_slice(), &gaze_path.display().to_string(), &bounds)?;
    if gaze.out_of_range > 0 {
        log::warn!("{}: {} out-of-range samples marked invalid", gaze_path.display(), gaze.out_of_range);
    }

    let mut input_hashes = BTreeMap::new();
    input_hashes.insert(format!("input.{DETECTIONS_FILE}"), sha256_hex(&det_bytes));
    input_hashes.insert(format!("input.{GAZE_FILE}"), sha256_hex(&gaze_bytes));
    let frames = dir.join(FRAMES_DIR);
    let frames_dir = if frames.is_dir() {
        let mut hasher = Sha256::new();
        for p in frame_paths(&frames)? {
            hasher.update(sha256_hex(&read_file(&p)?).as_bytes());
        }
        let digest = hasher.finalize();
        input_hashes.insert(format!("input.{FRAMES_DIR}"), hex(&digest));
        Some(frames)
    } else {
        None
    };
    Ok(SessionBundle {
        config,
        header,
        detections,
        gaze: gaze.samples,
        gaze_out_of_range: gaze.out_of_range,
        frames_dir,
        input_hashes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::AttentionReport;

    const HEADER4: &str = r#"{"embedding_dim":4,"frame_count":10,"width":1280,"height":960}"#;

    fn parse(text: &str) -> Result<(DetectionHeader, Vec<Detection>)> {
        parse_detections(text.as_bytes(), "detections.jsonl")
    }

    #[test]
    fn normalizes_embeddings() {
        let text = format!(
            "{HEADER4}\n{}\n",
            r#"{"frame":0,"ts_us":0,"bbox":[10,10,20,20],"embedding":[2,0,0,0]}"#
        );
        let (_, d) = parse(&text).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].embedding().as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        assert!(d[0].gender().is_none());
    }

    #[test]
    fn zero_width_names_field() {
        let text = format!(
            "{HEADER4}\n{}\n",
            r#"{"frame":0,"ts_us":0,"bbox":[10,10,0,20],"embedding":[1,0,0,0]}"#
        );
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("bbox.w must be > 0"), "{err}");
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn sorts_by_frame() {
        let row = |f: usize| {
            format!(r#"{{"frame":{f},"ts_us":{},"bbox":[1,1,5,5],"embedding":[0,1,0,0]}}"#, f * 40_000)
        };
        let text = format!("{HEADER4}\n{}\n{}\n{}\n", row(2), row(0), row(1));
        let (_, d) = parse(&text).unwrap();
        let frames: Vec<usize> = d.iter().map(Detection::frame).collect();
        assert_eq!(frames, vec![0, 1, 2]);
    }

    #[test]
    fn dimension_and_syntax_errors() {
        let text = format!("{HEADER4}\n{}\n", r#"{"frame":0,"ts_us":0,"bbox":[1,1,5,5],"embedding":[1,0]}"#);
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("expected 4, got 2"), "{err}");
        let err = parse(&format!("{HEADER4}\n{{oops\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let text = format!("{HEADER4}\n{}\n", r#"{"frame":0,"ts_us":0,"bbox":[1,1,5,1e999],"embedding":[1,0,0,0]}"#);
        assert!(parse(&text).is_err());
        let text = format!("{HEADER4}\n{}\n", r#"{"frame":10,"ts_us":0,"bbox":[1,1,5,5],"embedding":[1,0,0,0]}"#);
        assert!(parse(&text).is_err());
    }

    #[test]
    fn detections_round_trip() {
        let text = format!(
            "{HEADER4}\n{}\n{}\n",
            r#"{"frame":3,"ts_us":120000,"bbox":[1.5,2,5,6],"embedding":[0.6,0.8,0,0],"gender":[0.25,0.75]}"#,
            r#"{"frame":1,"ts_us":40000,"bbox":[1,1,5,5],"embedding":[0,0,1,0]}"#
        );
        let (h, d) = parse(&text).unwrap();
        let written = write_detections(&h, &d);
        let (h2, d2) = parse(&written).unwrap();
        assert_eq!(h, h2);
        assert_eq!(d, d2);
        assert_eq!(write_detections(&h2, &d2), written);
    }

    fn bounds() -> GazeBounds {
        GazeBounds::frame(1280.0, 960.0)
    }

    #[test]
    fn gaze_examples() {
        let g = parse_gaze("0,640,480,1\n".as_bytes(), "gaze.csv", &bounds()).unwrap();
        assert_eq!(g.samples, vec![GazeSample { ts_us: 0, x: 640.0, y: 480.0, valid: true }]);

        let err = parse_gaze("5,1,1,1\n5,2,2,1\n".as_bytes(), "gaze.csv", &bounds()).unwrap_err();
        assert!(err.to_string().contains("duplicate timestamp 5"), "{err}");

        let g = parse_gaze("10,99999,480,1\n".as_bytes(), "gaze.csv", &bounds()).unwrap();
        assert_eq!(g.samples.len(), 1);
        assert!(!g.samples[0].valid);
        assert_eq!(g.out_of_range, 1);
    }

    #[test]
    fn gaze_header_sort_and_round_trip() {
        let text = "ts_us,x,y,valid\n20,1.5,2,0\n10,3,4,1\n";
        let g = parse_gaze(text.as_bytes(), "gaze.csv", &bounds()).unwrap();
        assert_eq!(g.samples[0].ts_us, 10);
        let written = write_gaze(&g.samples);
        let back = parse_gaze(written.as_bytes(), "gaze.csv", &bounds()).unwrap();
        assert_eq!(back.samples, g.samples);
        assert!(parse_gaze("1,2,3,2\n".as_bytes(), "gaze.csv", &bounds()).is_err());
        let windowed = GazeBounds { ts_window: Some((0, 15)), ..bounds() };
        assert!(parse_gaze(text.as_bytes(), "gaze.csv", &windowed).is_err());
    }

    fn counts(label: usize, fixation_count: usize) -> IdentityCounts {
        IdentityCounts {
            label,
            gender: Gender::Female,
            male_votes: 1,
            female_votes: 3,
            frames_visible: 2,
            fixation_count,
            fixation_duration_us: fixation_count as i64 * 150_000,
        }
    }

    fn sample_report(counts_by_label: &[usize], unassigned: usize) -> AttentionReport {
        let ids = counts_by_label.iter().enumerate().map(|(l, &c)| counts(l, c)).collect();
        let mut meta = BTreeMap::new();
        meta.insert("config.fps".to_string(), "25.000000".to_string());
        let timeline = vec![
            TimelineRow { frame: 0, visible: vec![0], fixation: TimelineTarget::Identity(0) },
            TimelineRow { frame: 1, visible: vec![], fixation: TimelineTarget::Unassigned },
            TimelineRow { frame: 2, visible: vec![0], fixation: TimelineTarget::NoFixation },
        ];
        AttentionReport::from_counts(meta, 3, ids, unassigned, unassigned as i64 * 100_000, timeline).unwrap()
    }

    #[test]
    fn empty_report_omits_shares() {
        let r = sample_report(&[0, 0], 0);
        let text = String::from_utf8(write_report(&r, ReportFormat::Json)).unwrap();
        assert!(!text.contains("fixation_share"), "{text}");
        assert!(!text.contains("unassigned_share"), "{text}");
        assert_eq!(parse_report(text.as_bytes()).unwrap(), r);
    }

    #[test]
    fn csv_shares_sum_to_one() {
        let r = sample_report(&[10, 6, 3], 1);
        let csv = String::from_utf8(write_report(&r, ReportFormat::Csv)).unwrap();
        let sum: f64 = csv
            .lines()
            .skip(1)
            .filter(|l| l.starts_with("identity") || l.starts_with("unassigned"))
            .map(|l| l.split(',').nth(6).unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((sum - 1.0).abs() < 1e-6, "{sum}");
    }

    #[test]
    fn report_bytes_are_deterministic_and_round_trip() {
        let r = sample_report(&[10, 6, 3], 1);
        for format in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::SvgTimeline] {
            assert_eq!(write_report(&r, format), write_report(&r.clone(), format));
        }
        let bytes = write_report(&r, ReportFormat::Json);
        assert_eq!(parse_report(&bytes).unwrap(), r);
    }

    #[test]
    fn timeline_csv_rows() {
        let r = sample_report(&[1], 1);
        assert_eq!(
            write_timeline(&r),
            "frame,visible_labels,fixation_label\n0,0,0\n1,,unassigned\n2,0,\n"
        );
    }
}
