//! Attention analysis for teachers wearing mobile eye trackers: face
//! tracklets, identity clustering, fixation detection and per-student
//! attention statistics.

pub mod attention;
pub mod cluster;
pub mod config;
pub mod error;
pub mod fixation;
pub mod ingest;
pub mod json;
pub mod model;
pub mod motion;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod tracklink;

pub use config::SessionConfig;
pub use error::{Error, Result};
pub use model::{
    BBox, Dendrogram, Detection, FixationEvent, FlowSummary, GazeSample, Gender, GenderScores,
    IdentityCluster, Merge, Target, Tracklet, UnitVector,
};
pub use report::AttentionReport;
