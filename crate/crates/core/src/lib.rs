//! Dialogue-act classification for tutoring transcripts with data maps and
//! pool-based active learning.

pub mod acquisition;
pub mod cartography;
pub mod classifier;
pub mod corpus;
pub mod experiment;
pub mod metrics;
pub mod reporting;
pub mod synth;

mod rng;
