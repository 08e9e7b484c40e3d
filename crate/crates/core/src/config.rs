//! Session configuration and its flat `dotted.key=value` text form.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinkingParams {
    /// Minimum affinity for a link.
    pub theta_high: f64,
    /// Required lead of a link over its best conflicting pair.
    pub theta_margin: f64,
    /// Largest frame gap a link may bridge.
    pub max_gap: usize,
    pub sigma_loc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixationParams {
    pub dispersion_threshold_px: f64,
    pub min_duration_ms: f64,
}

impl FixationParams {
    pub fn min_duration_us(&self) -> i64 {
        (self.min_duration_ms * 1000.0).round() as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// Body region width as a multiple of the face width.
    pub body_widen: f64,
    /// Body region extent below the face, in face heights.
    pub body_extend: f64,
    /// Radius of the nearest-face fallback.
    pub r_max_px: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionParams {
    pub block_size: usize,
    pub search_radius: usize,
    pub shift_magnitude_px: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierStrategy {
    NearestCentroid,
    RbfSvm,
}

impl ClassifierStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClassifierStrategy::NearestCentroid => "nearest_centroid",
            ClassifierStrategy::RbfSvm => "rbf_svm",
        }
    }
}

impl FromStr for ClassifierStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest_centroid" => Ok(ClassifierStrategy::NearestCentroid),
            "rbf_svm" => Ok(ClassifierStrategy::RbfSvm),
            other => Err(Error::Config(format!(
                "classifier.strategy: unknown strategy {other:?} (expected nearest_centroid or rbf_svm)"
            ))),
        }
    }
}

impl fmt::Display for ClassifierStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub strategy: ClassifierStrategy,
    pub svm_c: f64,
    /// RBF width; `None` means `1 / embedding_dim`.
    pub svm_gamma: Option<f64>,
}

impl ClassifierParams {
    pub fn gamma_for(&self, dim: usize) -> f64 {
        self.svm_gamma.unwrap_or(1.0 / dim.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub num_students: usize,
    pub embedding_dim: usize,
    pub fps: f64,
    pub frame_width: f64,
    pub frame_height: f64,
    pub frame_count: usize,
    /// Constant offset of the field-camera clock relative to the gaze clock.
    pub gaze_offset_us: i64,
    pub linking: LinkingParams,
    pub fixation: FixationParams,
    pub attention: AttentionParams,
    pub motion: MotionParams,
    pub classifier: ClassifierParams,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            num_students: 4,
            embedding_dim: 128,
            fps: 25.0,
            frame_width: 1280.0,
            frame_height: 960.0,
            frame_count: 0,
            gaze_offset_us: 0,
            linking: LinkingParams {
                theta_high: 0.6,
                theta_margin: 0.05,
                max_gap: 10,
                sigma_loc: 1.0,
            },
            fixation: FixationParams {
                dispersion_threshold_px: 30.0,
                min_duration_ms: 100.0,
            },
            attention: AttentionParams {
                body_widen: 1.5,
                body_extend: 4.0,
                r_max_px: 100.0,
            },
            motion: MotionParams {
                block_size: 16,
                search_radius: 8,
                shift_magnitude_px: 4.0,
            },
            classifier: ClassifierParams {
                strategy: ClassifierStrategy::NearestCentroid,
                svm_c: 10.0,
                svm_gamma: None,
            },
        }
    }
}

/// Keys whose values normally come from the detections header.
pub const HEADER_KEYS: [&str; 4] = ["embedding_dim", "frame_count", "frame_width", "frame_height"];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl SessionConfig {
    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "num_students" => self.num_students = parse_value(key, v)?,
            "embedding_dim" => self.embedding_dim = parse_value(key, v)?,
            "fps" => self.fps = parse_value(key, v)?,
            "frame_width" => self.frame_width = parse_value(key, v)?,
            "frame_height" => self.frame_height = parse_value(key, v)?,
            "frame_count" => self.frame_count = parse_value(key, v)?,
            "gaze_offset_us" => self.gaze_offset_us = parse_value(key, v)?,
            "linking.theta_high" => self.linking.theta_high = parse_value(key, v)?,
            "linking.theta_margin" => self.linking.theta_margin = parse_value(key, v)?,
            "linking.max_gap" => self.linking.max_gap = parse_value(key, v)?,
            "linking.sigma_loc" => self.linking.sigma_loc = parse_value(key, v)?,
            "fixation.dispersion_threshold_px" => {
                self.fixation.dispersion_threshold_px = parse_value(key, v)?
            }
            "fixation.min_duration_ms" => self.fixation.min_duration_ms = parse_value(key, v)?,
            "attention.body_widen" => self.attention.body_widen = parse_value(key, v)?,
            "attention.body_extend" => self.attention.body_extend = parse_value(key, v)?,
            "attention.r_max_px" => self.attention.r_max_px = parse_value(key, v)?,
            "motion.block_size" => self.motion.block_size = parse_value(key, v)?,
            "motion.search_radius" => self.motion.search_radius = parse_value(key, v)?,
            "motion.shift_magnitude_px" => self.motion.shift_magnitude_px = parse_value(key, v)?,
            "classifier.strategy" => self.classifier.strategy = v.parse()?,
            "classifier.svm_c" => self.classifier.svm_c = parse_value(key, v)?,
            "classifier.svm_gamma" => {
                self.classifier.svm_gamma = if v == "auto" {
                    None
                } else {
                    Some(parse_value(key, v)?)
                }
            }
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Checks every range constraint, naming the first offending key.
    pub fn validate(&self) -> Result<()> {
        fn positive(key: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{key} must be > 0 (got {v})")))
            }
        }
        if self.num_students < 1 {
            return Err(Error::Config("num_students must be >= 1".into()));
        }
        if self.embedding_dim < 1 {
            return Err(Error::Config("embedding_dim must be >= 1".into()));
        }
        positive("fps", self.fps)?;
        positive("frame_width", self.frame_width)?;
        positive("frame_height", self.frame_height)?;
        positive("linking.theta_high", self.linking.theta_high)?;
        if self.linking.theta_high > 1.0 {
            return Err(Error::Config("linking.theta_high must be in (0, 1]".into()));
        }
        positive("linking.theta_margin", self.linking.theta_margin)?;
        if self.linking.max_gap < 1 {
            return Err(Error::Config("linking.max_gap must be >= 1".into()));
        }
        positive("linking.sigma_loc", self.linking.sigma_loc)?;
        positive(
            "fixation.dispersion_threshold_px",
            self.fixation.dispersion_threshold_px,
        )?;
        positive("fixation.min_duration_ms", self.fixation.min_duration_ms)?;
        positive("attention.body_widen", self.attention.body_widen)?;
        positive("attention.body_extend", self.attention.body_extend)?;
        positive("attention.r_max_px", self.attention.r_max_px)?;
        if self.motion.block_size < 4 {
            return Err(Error::Config("motion.block_size must be >= 4".into()));
        }
        if self.motion.search_radius < 1 {
            return Err(Error::Config("motion.search_radius must be >= 1".into()));
        }
        positive("motion.shift_magnitude_px", self.motion.shift_magnitude_px)?;
        positive("classifier.svm_c", self.classifier.svm_c)?;
        if let Some(g) = self.classifier.svm_gamma {
            positive("classifier.svm_gamma", g)?;
        }
        Ok(())
    }

    /// Fully resolved configuration as sorted key/value strings.
    pub fn to_key_values(&self) -> BTreeMap<String, String> {
        let f = |v: f64| format!("{v:.6}");
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("num_students", self.num_students.to_string());
        put("embedding_dim", self.embedding_dim.to_string());
        put("fps", f(self.fps));
        put("frame_width", f(self.frame_width));
        put("frame_height", f(self.frame_height));
        put("frame_count", self.frame_count.to_string());
        put("gaze_offset_us", self.gaze_offset_us.to_string());
        put("linking.theta_high", f(self.linking.theta_high));
        put("linking.theta_margin", f(self.linking.theta_margin));
        put("linking.max_gap", self.linking.max_gap.to_string());
        put("linking.sigma_loc", f(self.linking.sigma_loc));
        put(
            "fixation.dispersion_threshold_px",
            f(self.fixation.dispersion_threshold_px),
        );
        put("fixation.min_duration_ms", f(self.fixation.min_duration_ms));
        put("attention.body_widen", f(self.attention.body_widen));
        put("attention.body_extend", f(self.attention.body_extend));
        put("attention.r_max_px", f(self.attention.r_max_px));
        put("motion.block_size", self.motion.block_size.to_string());
        put("motion.search_radius", self.motion.search_radius.to_string());
        put("motion.shift_magnitude_px", f(self.motion.shift_magnitude_px));
        put("classifier.strategy", self.classifier.strategy.to_string());
        put("classifier.svm_c", f(self.classifier.svm_c));
        put(
            "classifier.svm_gamma",
            self.classifier
                .svm_gamma
                .map(f)
                .unwrap_or_else(|| "auto".to_string()),
        );
        m
    }

    /// Renders the resolved configuration in the same text form [`parse_key_values`] reads.
    pub fn to_text(&self) -> String {
        self.to_key_values()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

/// Parses a `key=value` file. `#` starts a comment; blank lines are ignored.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {raw:?}", idx + 1))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", idx + 1)));
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

/// Builds a configuration from defaults, header-derived values and explicit
/// assignments, then validates it.
///
/// An explicit assignment to a header key that disagrees with the header is a
/// configuration error.
pub fn resolve(
    assignments: &BTreeMap<String, String>,
    header: Option<&crate::ingest::DetectionHeader>,
) -> Result<SessionConfig> {
    let mut cfg = SessionConfig::default();
    if let Some(h) = header {
        cfg.embedding_dim = h.embedding_dim;
        cfg.frame_count = h.frame_count;
        cfg.frame_width = h.width;
        cfg.frame_height = h.height;
    }
    for (k, v) in assignments {
        if header.is_some() && HEADER_KEYS.contains(&k.as_str()) {
            let before = cfg.to_key_values()[k.as_str()].clone();
            let mut probe = cfg.clone();
            probe.set(k, v)?;
            if probe.to_key_values()[k.as_str()] != before {
                return Err(Error::Config(format!(
                    "{k}={v} conflicts with the detections header value {before}"
                )));
            }
            continue;
        }
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
