//! Score-level ensemble engine for face-forgery detection.
//!
//! The engine takes per-face probability outputs of several base classifiers,
//! combines them with one of four ensemble designs, and evaluates detection
//! and attribution with balanced accuracy. Per-face verdicts can be folded
//! into video-level verdicts, and decision thresholds can be swept over a
//! grid.
//!
//! * [`domain`]: class indices, detection labels, face records, taxonomies.
//! * [`ensemble`]: the soft-averaging and max-pooling combiners.
//! * [`metrics`]: confusion matrices and balanced accuracy.
//! * [`aggregation`]: face → identity → video score pooling.
//! * [`threshold`]: threshold grids and sweeps.
//! * [`score_io`]: manifest and score file formats.
//! * [`oracle`]: deterministic synthetic datasets.
//! * [`evaluation`]: end-to-end evaluation over a manifest and a score store.

pub mod aggregation;
pub mod domain;
pub mod ensemble;
pub mod metrics;
pub mod numeric;
pub mod score_io;
pub mod evaluation;
pub mod oracle;
pub mod threshold;
