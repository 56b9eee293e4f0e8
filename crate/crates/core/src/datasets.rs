//! Named datasets: TU benchmarks from a data directory, BA-2Motifs
//! generated in memory.

use std::path::{Path, PathBuf};

use crate::ba2motifs::generate_ba2motifs;
use crate::error::{PgibError, Result};
use crate::graph::GraphDataset;
use crate::tu::parse_tu_dataset;

/// Environment variable overriding the data directory.
pub const DATA_DIR_ENV: &str = "PGIB_DATA_DIR";
pub const BA2MOTIFS_COUNT: usize = 1000;
pub const BA2MOTIFS_SEED: u64 = 0;

pub const KNOWN: [&str; 5] = ["mutag", "proteins", "nci1", "dd", "ba2motifs"];

pub fn is_known(name: &str) -> bool {
    KNOWN.contains(&name.to_ascii_lowercase().as_str())
}

/// `$PGIB_DATA_DIR`, or `data` relative to the working directory.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

/// Loads a dataset by name. TU datasets are read from
/// `data_dir/<UPPER>/<UPPER>_*.txt`.
pub fn load_dataset(name: &str, data_dir: &Path) -> Result<GraphDataset> {
    let lower = name.to_ascii_lowercase();
    match lower.as_str() {
        "ba2motifs" => generate_ba2motifs(BA2MOTIFS_COUNT, BA2MOTIFS_SEED),
        "mutag" | "proteins" | "nci1" | "dd" => {
            let upper = lower.to_ascii_uppercase();
            parse_tu_dataset(data_dir.join(&upper), &upper)
        }
        _ => Err(PgibError::Argument(format!(
            "unknown dataset {name:?} (expected one of {})",
            KNOWN.join(", ")
        ))),
    }
}
