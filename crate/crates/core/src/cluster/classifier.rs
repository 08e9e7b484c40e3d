//! Classifiers that carry cluster labels over to detections that joined no
//! tracklet.

use rayon::prelude::*;

use super::svm::{BinarySvm, RbfKernel, SmoParams};
use crate::config::{ClassifierParams, ClassifierStrategy};
use crate::error::{Error, Result};
use crate::model::{dot, Detection, UnitVector};

/// A predicted label with the gap between the best and runner-up scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierModel {
    /// Renormalized per-label mean directions.
    NearestCentroid { centroids: Vec<UnitVector> },
    /// One-vs-rest RBF machines, one per label.
    RbfSvm { machines: Vec<BinarySvm> },
}

fn best_of(scores: impl Iterator<Item = f64>) -> Prediction {
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut second = f64::NEG_INFINITY;
    for (label, s) in scores.enumerate() {
        if s > best.1 {
            second = best.1;
            best = (label, s);
        } else if s > second {
            second = s;
        }
    }
    let margin = if second.is_finite() { best.1 - second } else { f64::INFINITY };
    Prediction {
        label: best.0,
        margin,
    }
}

impl ClassifierModel {
    pub fn num_classes(&self) -> usize {
        match self {
            ClassifierModel::NearestCentroid { centroids } => centroids.len(),
            ClassifierModel::RbfSvm { machines } => machines.len().max(1),
        }
    }

    /// Highest-scoring label; ties go to the lower label.
    pub fn predict(&self, x: &[f64]) -> Prediction {
        match self {
            ClassifierModel::NearestCentroid { centroids } => {
                best_of(centroids.iter().map(|c| dot(c.as_slice(), x)))
            }
            ClassifierModel::RbfSvm { machines } if machines.is_empty() => Prediction {
                label: 0,
                margin: f64::INFINITY,
            },
            ClassifierModel::RbfSvm { machines } => {
                best_of(machines.iter().map(|m| m.decision(x)))
            }
        }
    }
}

/// Per-label renormalized mean directions.
pub fn label_centroids(features: &[UnitVector], labels: &[usize]) -> Result<Vec<UnitVector>> {
    let k = check_labels(features, labels)?;
    (0..k)
        .map(|label| {
            UnitVector::mean_direction(
                features
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == label)
                    .map(|(f, _)| f),
            )
            .map_err(|_| Error::invalid("labels", format!("class {label} has a degenerate centroid")))
        })
        .collect()
}

fn check_labels(features: &[UnitVector], labels: &[usize]) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(Error::invalid(
            "labels",
            format!("{} labels for {} features", labels.len(), features.len()),
        ));
    }
    let k = labels
        .iter()
        .max()
        .map(|m| m + 1)
        .ok_or_else(|| Error::invalid("features", "classifier needs at least one feature"))?;
    let mut seen = vec![false; k];
    for &l in labels {
        seen[l] = true;
    }
    if let Some(empty) = seen.iter().position(|s| !s) {
        return Err(Error::invalid("labels", format!("class {empty} is empty")));
    }
    Ok(k)
}

/// Trains the classifier used for singleton detections on aggregated tracklet
/// features and their cluster labels.
pub fn train_singleton_classifier(
    features: &[UnitVector],
    labels: &[usize],
    params: &ClassifierParams,
) -> Result<ClassifierModel> {
    let k = check_labels(features, labels)?;
    match params.strategy {
        ClassifierStrategy::NearestCentroid => Ok(ClassifierModel::NearestCentroid {
            centroids: label_centroids(features, labels)?,
        }),
        ClassifierStrategy::RbfSvm => {
            if k == 1 {
                return Ok(ClassifierModel::RbfSvm {
                    machines: Vec::new(),
                });
            }
            let kernel = RbfKernel {
                gamma: params.gamma_for(features[0].dim()),
            };
            let gram = kernel.gram(features);
            let smo = SmoParams::new(params.svm_c);
            let machines = (0..k)
                .into_par_iter()
                .map(|class| {
                    let y: Vec<f64> = labels
                        .iter()
                        .map(|&l| if l == class { 1.0 } else { -1.0 })
                        .collect();
                    BinarySvm::train(features, &gram, &y, kernel, &smo)
                })
                .collect();
            Ok(ClassifierModel::RbfSvm { machines })
        }
    }
}

/// Labels every singleton detection with exactly one class.
pub fn assign_singletons(model: &ClassifierModel, singles: &[&Detection]) -> Vec<Prediction> {
    singles
        .par_iter()
        .map(|d| model.predict(d.embedding().as_slice()))
        .collect()
}
