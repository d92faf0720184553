//! Detection of shared-dynamics data chunks in panel trajectory data.
//!
//! Given `N` trajectories of state-action-reward triplets over `T` time
//! steps, this crate estimates, for each subject, the most recent time at
//! which its transition dynamics changed, and simultaneously groups
//! subjects into clusters that share the same recent dynamics. The two
//! estimates are refined by alternating a likelihood-ratio change point
//! scan with likelihood-based clustering, and candidate segmentations are
//! ranked by a penalized information criterion. The resulting data chunks
//! feed cluster-specific policy learning via fitted-Q iteration.
//!
//! Modules mirror the pipeline stages: [`panel`] (data), [`model`]
//! (transition likelihoods), [`cpdetect`] (change point scan),
//! [`cluster`] (subject grouping), [`alternate`] (outer loop and model
//! selection), [`metrics`] (evaluation), [`envgen`] (synthetic
//! environments), [`policy`] (fitted-Q iteration), and [`harness`]
//! (experiment runners).

pub mod alternate;
pub mod cluster;
pub mod cpdetect;
pub mod envgen;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod panel;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
pub use panel::{ActionSpace, Panel, SubjectSet, Window};
