//! On-disk formats: binary embedding files and checkpoints (little-endian
//! doubles behind a magic + version header), JSON-lines epoch logs,
//! JSON/CSV diagnostic reports and SVG boxplots.

mod binary;
mod checkpoint;
mod embeddings;
mod report;
mod svg;

use std::fs;
use std::path::Path;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_as, save_checkpoint, Checkpoint, Provenance,
    TensorEntry, TensorRole, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use embeddings::{
    decode_embeddings, encode_embeddings, read_embeddings, write_embeddings, EmbeddingFile, EMBEDDING_MAGIC,
    EMBEDDING_VERSION,
};
pub use report::{
    read_report, round_sig, write_geometry_tables, write_report, ModelReport, ReportDocument, ReportFormat, ANGLE_COLUMNS, EER_COLUMNS,
};
pub use svg::{render_boxplot_svg, write_boxplot_svg, BoxGroup};

use crate::training::EpochRecord;
use crate::{Error, Result};

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// One JSON object per line, in epoch order.
pub fn encode_epoch_log(records: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("epoch records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_epoch_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    write_bytes(path, encode_epoch_log(records).as_bytes())
}

pub fn read_epoch_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = String::from_utf8(read_bytes(path)?).map_err(|_| Error::Format {
        path: path.into(),
        source: crate::FormatError::Record("epoch log is not UTF-8".into()),
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                path: path.into(),
                source: crate::FormatError::Record(format!("line {}: {e}", i + 1)),
            })
        })
        .collect()
}
