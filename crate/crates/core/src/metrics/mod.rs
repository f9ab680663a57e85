//! Inception Score, FID and R-precision over a small trained classifier
//! (IS posteriors, FID features) and the matching encoders (R-precision).

mod classifier;
mod fid;
mod inception;
mod report;
mod rprecision;

pub use classifier::{train_classifier, Classifier, ClassifierConfig};
pub use fid::{fid, fid_with, mean_and_covariance, FeatureSet, FeatureSource, FID_EPSILON, NEGATIVE_EIGEN_TOLERANCE};
pub use inception::{inception_score, inception_score_with, ClassProbabilities, SIMPLEX_TOLERANCE};
pub use report::{
    best_by_fid, evaluate_images, evaluate_model, evaluate_real_as_fake, evaluation_captions, EvalConfig,
    MetricsReport,
};
pub use rprecision::{
    build_pools, r_precision, r_precision_embeddings, random_unit_vectors, CaptionPool, RPrecisionConfig,
};
