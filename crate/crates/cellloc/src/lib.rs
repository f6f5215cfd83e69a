//! Cellular fingerprint localization: a neural classifier over a virtual
//! grid, trained on GPS-labeled scans, plus a histogram baseline, a radio
//! simulator and the evaluation harness.

pub mod augment;
pub mod baseline;
pub mod eval;
pub mod geo;
pub mod infer;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod synth;

pub use augment::{Augmentation, AugmentConfig, LabeledSample};
pub use baseline::{HistogramConfig, HistogramModel};
pub use eval::{ErrorReport, Quantiles};
pub use geo::{CellId, GeoPoint, LocalPoint, VirtualGrid};
pub use infer::{localize, LocationEstimate};
pub use ingest::{FeatureVector, RawScan, Reading, RssRange, TowerIndex};
pub use model::{FingerprintModel, Mlp, Posterior, TrainingConfig};
pub use pipeline::{Corpus, ExperimentConfig};
