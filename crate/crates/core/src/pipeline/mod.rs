//! Stage orchestration with per-record checkpoints in the manifest.
//!
//! Stage 1 captions and pseudo-labels each image, stage 2 generates K
//! variants, stage 3 selects among them and assembles the dataset.

mod config;
mod run;
mod sweep;

pub use config::{BackendsSpec, ConfigError, CorpusConfig, PipelineConfig, SamplingConfig};
pub use run::{
    run, run_until, sampling_inputs, select_record, PipelineError, RunReport, Stage, StageContext, DATASET_DIR,
    MANIFEST_FILE, PLAN_FILE,
};
pub use sweep::{sweep, SweepParam, SweepReport, SweepRow};
