//! Unsupervised technical-outlier detection for grayscale mammogram-like images.

pub mod tensor;
pub mod cvae;
pub mod detectors;
pub mod scoring;
pub mod imgproc;
pub mod taxonomy;
pub mod eval;
pub mod synth;
pub mod triage;
