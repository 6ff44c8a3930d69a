//! File formats and configuration.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod report;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{load_config, parse_config, ModelSpec, RunConfig};
pub use dataset::{load_dataset, save_container, save_csv, DataFormat};
pub use report::{tracker_rows, write_profile, write_report, ReportFormat};

fn read_file(path: &std::path::Path) -> crate::error::Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| crate::error::Error::File {
        path: path.display().to_string(),
        source,
    })
}

fn read_text(path: &std::path::Path) -> crate::error::Result<String> {
    let bytes = read_file(path)?;
    String::from_utf8(bytes).map_err(|e| crate::error::Error::File {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}
