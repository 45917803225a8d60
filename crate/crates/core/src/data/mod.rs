//! Tabular claim data: schema, storage, CSV ingestion, the synthetic generator,
//! splitting and network input encoding.

mod csv_io;
mod dataset;
mod encode;
mod schema;
mod split;
mod synthetic;

pub use csv_io::{load_csv, read_csv, write_csv, write_csv_to};
pub use dataset::{Column, Dataset};
pub use encode::{
    encode_for_nn, EncodedColumn, EncodedMatrix, Encoding, NnEncoding, DEFAULT_ONEHOT_THRESHOLD,
};
pub use schema::{ColumnKind, ColumnSpec, FeatureSchema};
pub use split::{split, SplitDataset, SplitFractions};
pub use synthetic::{generate_synthetic, synthetic_schema, true_log_rate, true_rate, true_rates};
