//! The recognition pipeline: sample loading, preprocessing, feature
//! extraction, and training/classification. Everything here is a pure
//! function of its inputs, so any worker may execute any stage
//! operation concurrently.
//!
//! The classic numeric module IDs are kept as an alternate selection
//! scheme next to the operation names (`--preproc 104` means the FFT
//! low-pass filter, `--metric 504` Chebyshev distance, and so on).

pub mod classify;
pub mod distance;
pub mod dsp;
pub mod features;
pub mod nnet;
pub mod sample;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("selected range is all zeros")]
    AllZeroRange,
    #[error("sample is empty after silence removal")]
    EmptyAfterSilence,
    #[error("bad cutoff (low={low}, high={high}, nyquist={nyquist})")]
    BadCutoff { low: f64, high: f64, nyquist: f64 },
    #[error("empty sample")]
    EmptySample,
    #[error("autocorrelation is singular (zero energy)")]
    SingularAutocorrelation,
    #[error("sample too short: need at least {need}, have {have}")]
    TooShort { need: usize, have: usize },
    #[error("dimension mismatch: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("zero vector has no cosine direction")]
    ZeroVector,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("too few results: need {need}, have {have}")]
    TooFewResults { need: usize, have: usize },
    #[error("method {0} is declared but not implemented")]
    UnsupportedMethod(i64),
    #[error("codec error: {0}")]
    Codec(String),
}

// Preprocessing module IDs.
pub const DUMMY: i64 = 100;
pub const HIGH_FREQUENCY_BOOST_FFT_FILTER: i64 = 101;
pub const BANDPASS_FFT_FILTER: i64 = 102;
pub const ENDPOINT: i64 = 103;
pub const LOW_PASS_FFT_FILTER: i64 = 104;
pub const HIGH_PASS_FFT_FILTER: i64 = 105;
pub const HIGH_PASS_BOOST_FILTER: i64 = 106;
pub const RAW_PREPROCESSING: i64 = 107;
pub const PREPROCESSING_PLUGIN: i64 = 108;
pub const LOW_PASS_CFE_FILTER: i64 = 109;

// Feature-extraction module IDs.
pub const LPC: i64 = 300;
pub const FFT: i64 = 301;
pub const F0: i64 = 302;
pub const SEGMENTATION: i64 = 303;
pub const CEPSTRAL: i64 = 304;
pub const RANDOM_FEATURE_EXTRACTION: i64 = 305;
pub const MIN_MAX_AMPLITUDES: i64 = 306;

// Classification module IDs. 504 is Chebyshev here; the original
// table also assigned 504 to Manhattan and city-block.
pub const NEURAL_NETWORK: i64 = 500;
pub const STOCHASTIC: i64 = 501;
pub const MARKOV: i64 = 502;
pub const EUCLIDEAN_DISTANCE: i64 = 503;
pub const CHEBYSHEV_DISTANCE: i64 = 504;
pub const MINKOWSKI_DISTANCE: i64 = 505;
pub const MAHALANOBIS_DISTANCE: i64 = 506;
pub const RANDOM_CLASSIFICATION: i64 = 507;
pub const DIFF_DISTANCE: i64 = 508;
pub const ZIPFS_LAW: i64 = 510;
pub const HAMMING_DISTANCE: i64 = 511;
pub const COSINE_SIMILARITY_MEASURE: i64 = 512;

/// Resolves a preprocessing module ID to its operation name.
pub fn preprocessing_op_for_id(id: i64) -> Result<&'static str, PipelineError> {
    Ok(match id {
        DUMMY => "normalize",
        HIGH_FREQUENCY_BOOST_FFT_FILTER => "hf_boost",
        BANDPASS_FFT_FILTER => "band_pass",
        ENDPOINT => "endpoint",
        LOW_PASS_FFT_FILTER => "low_pass",
        HIGH_PASS_FFT_FILTER => "high_pass",
        RAW_PREPROCESSING => "raw",
        _ => return Err(PipelineError::UnsupportedMethod(id)),
    })
}

/// Resolves a feature-extraction module ID to its operation name.
pub fn feature_op_for_id(id: i64) -> Result<&'static str, PipelineError> {
    Ok(match id {
        LPC => "lpc_features",
        FFT => "fft_features",
        MIN_MAX_AMPLITUDES => "minmax_features",
        _ => return Err(PipelineError::UnsupportedMethod(id)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_mapping_declared_gaps() {
        assert_eq!(preprocessing_op_for_id(104).unwrap(), "low_pass");
        assert_eq!(feature_op_for_id(301).unwrap(), "fft_features");
        assert!(matches!(
            feature_op_for_id(CEPSTRAL),
            Err(PipelineError::UnsupportedMethod(304))
        ));
        assert!(matches!(
            preprocessing_op_for_id(109),
            Err(PipelineError::UnsupportedMethod(109))
        ));
    }
}
