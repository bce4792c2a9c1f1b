//! Disease-trajectory modelling on coded longitudinal health records.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! * [`vocab`]: ICD code normalisation (GEM crosswalk, 3-character categories)
//!   and the token vocabulary with frequency filtering.
//! * [`sequence`]: patient records to model-ready token sequences, in
//!   first-occurrence or all-occurrence mode.
//! * [`synth`]: a ground-truth hazard model and cohort simulator.
//! * [`model`]: the transformer with sinusoidal age encoding, causal plus
//!   same-time attention masking, a next-event head and a log-rate head.
//! * [`train`]: the combined cross-entropy / exponential waiting-time loss,
//!   exact gradients, AdamW with warmup and cosine decay.
//! * [`eval`]: case-control construction, age/sex-stratified AUC, the
//!   demographic baseline, horizon sweeps, prospective evaluation,
//!   calibration and grouped reports.
//! * [`checkpoint`]: directory checkpoints with a named tensor manifest.

pub mod checkpoint;
pub mod eval;
pub mod icd;
pub mod jsonl;
pub mod model;
pub mod record;
pub mod seed;
pub mod sequence;
pub mod synth;
pub mod train;
pub mod vocab;

pub use model::{ModelConfig, ModelState, Real};
pub use record::{Alcohol, CodeSystem, Event, PatientRecord, Sex, Smoking};
pub use sequence::{Flag, Mode, TokenSequence};
pub use vocab::{GemTable, TokenKind, Vocabulary};

/// Days per year used for every age conversion in the crate.
pub const DAYS_PER_YEAR: f64 = 365.25;
