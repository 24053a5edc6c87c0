//! Corpus ingestion, imputation, standardisation, temporal splits and
//! `(H, F)` windowing.

mod calendar;
mod dataset;
mod impute;
mod io;
mod panel;
mod split;
mod standardize;
mod windows;

pub use calendar::{format_timestamp, parse_timestamp, parse_timezone, timestamp_features};
pub use dataset::{prepare, prepare_manifest, EdgeStats, PrepareOptions, PreparedDataset, Split};
pub use impute::{impute_chained, DEFAULT_ITERATIONS};
pub use io::{read_corpus, write_corpus, Corpus, Manifest, MANIFEST_VERSION};
pub use panel::{RawPanel, FEATURES, TARGET};
pub use split::{split_indices, split_temporal, DateRange, SplitIndices, SplitSpec};
pub use standardize::{destandardize, standardize, StandardizationStats};
pub use windows::{forecast_window, hours_to_steps, make_windows, window_at, window_count};

#[cfg(test)]
mod tests;
