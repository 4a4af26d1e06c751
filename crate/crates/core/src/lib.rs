//! Identity-sequence deepfake detection.
//!
//! Each frame of a face video is mapped to an identity vector; differences
//! between consecutive frames (temporal) and against a registered reference
//! image (auxiliary) form a sequence that a recurrent classifier scores.

pub mod config;
pub mod corrupt;
pub mod detector;
pub mod embedder;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod manifest;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod preprocess;
pub mod seed;
pub mod seqfeat;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
