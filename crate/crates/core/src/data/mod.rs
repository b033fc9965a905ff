//! Data generation, ingestion, error summaries and report serialisation.

pub mod csv_io;
pub mod report;
pub mod summary;
pub mod synth;

pub use csv_io::{center, default_feature_names, load_csv, read_csv, write_dataset_csv, Centering, Table};
pub use report::{read_fit_json, read_loo_csv, read_sweep_csv, write_fit_json, write_loo_csv, write_sweep_csv, FitFile, LooRow};
pub use summary::{error_summary, ErrorSummary};
pub use synth::{gen_synthetic, GroundTruth, SynthConfig, SyntheticData};
