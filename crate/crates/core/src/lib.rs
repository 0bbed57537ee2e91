//! Transformer-encoder classification of hand keypoint sequences, and
//! boundary detection of isolated signs inside continuous keypoint streams.
//!
//! The pipeline is:
//!
//! 1. [`keypoints`]: ingest raw 21-point hand frames, normalize them to
//!    20 wrist-relative points, resample isolated clips to a fixed length.
//! 2. [`model`]: a post-norm transformer encoder with a flattened
//!    classification head, with hand-written backpropagation.
//! 3. [`training`]: Adam with step decay and early stopping.
//! 4. [`segmentation`]: slide the isolated classifier over a continuous
//!    stream and decode labels with a threshold / blank / collapse rule.
//!
//! [`synthgen`] produces seeded synthetic gesture classes, and [`cli`]
//! wires everything into the `signseg` command line tool.

pub mod cli;
pub mod config;
pub mod error;
pub mod keypoints;
pub mod model;
pub mod rng;
pub mod segmentation;
pub mod synthgen;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use keypoints::{ContinuousStream, IsolatedSample, NormFrame, RawHandFrame};
pub use model::{ModelConfig, ModelWeights, ProbVector};
pub use tensor::Mat;
