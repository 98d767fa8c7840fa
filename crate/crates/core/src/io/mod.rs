//! File formats and the pieces the command-line tool is built from.

pub mod config;
pub mod data;
pub mod report;
pub mod summary;

pub use config::ScenarioConfig;
pub use data::{ingest_csv, ingest_reader, ColumnMapping};
pub use report::{bands_to_csv, prediction_bands, FitReport};
pub use summary::{render_summary, summary_csv, summary_json};
