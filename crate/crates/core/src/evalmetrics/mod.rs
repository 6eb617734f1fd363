//! Reconstruction scoring and spectral analysis.

mod error_matrix;
mod welch;

pub use error_matrix::{
    average_error, error_matrix, segment_scores, subject_summary, ErrorMatrix, IdentityReconstructor,
    ModelReconstructor, Reconstructor, StdConvention, Summary,
};
pub use welch::{welch_psd, PsdEstimate, WELCH_OVERLAP, WELCH_WINDOW};
