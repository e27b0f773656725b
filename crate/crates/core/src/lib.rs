//! Weakly supervised recognition and temporal localization of short
//! gestures in long keypoint tracks.
//!
//! Keypoint tracks are drawn as kinetograms (a 10-row, three-channel
//! temporal image), a small convolutional network is trained on them from
//! noisy clip-level labels, and the gradient of a class score with respect
//! to the image localizes the gesture in time.

pub mod config;
pub mod convnet;
pub mod error;
pub mod eval;
pub mod keypoints;
pub mod kinetogram;
pub mod pipeline;
pub mod saliency;
pub mod seeding;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
