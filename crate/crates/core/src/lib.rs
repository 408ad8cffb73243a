//! Certified ℓ2 robustness for black-box classifiers via randomized
//! smoothing, in both the classic single-input form and the dual form that
//! smooths two down-sampled sub-images.

pub mod certify;
pub mod dataset;
pub mod oracle;
pub mod partition;
pub mod radius;
pub mod report;
pub mod statfun;
pub mod stream;
