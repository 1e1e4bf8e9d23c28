//! Sketched least squares and CUR approximation with inversion-bias
//! corrections, plus the Monte-Carlo and exact-enumeration machinery used to
//! measure their bias.

pub mod adversarial;
pub mod dataio;
pub mod error;
pub mod estimators;
pub mod matcore;
pub mod metrics;
pub mod oracle;
pub mod inversion;
pub mod sketching;

pub use error::{Error, Result};
pub use matcore::DenseMatrix;
