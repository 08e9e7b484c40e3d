//! Identity clustering: Ward agglomeration of tracklet features, singleton
//! classification and evaluation against ground truth.

pub mod classifier;
pub mod eval;
pub mod svm;
pub mod ward;

pub use classifier::{
    assign_singletons, label_centroids, train_singleton_classifier, ClassifierModel, Prediction,
};
pub use eval::{confusion_matrix, max_overlap_assignment, raw_confusion_matrix, ConfusionMatrix};
pub use ward::{cut, ward_linkage};
