use std::path::Path;

use serde::{Deserialize, Serialize};

use super::binary::{check_preamble, put_f64s, put_preamble, Reader};
use crate::arc_margin::ArcMarginHead;
use crate::fusion::{FusionHead, HeadConfig, HeadKind, ParamSpec, Parameters};
use crate::math::Matrix;
use crate::rng::{stream_rng, Stream};
use crate::training::TrainingConfig;
use crate::{Error, FormatError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AVFC";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Where a checkpoint came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Epoch whose parameters were kept (1-based).
    pub epoch: usize,
    pub val_accuracy: f64,
    pub training: TrainingConfig,
    /// Fully resolved run configuration, if the checkpoint came from a run.
    #[serde(default)]
    pub run_config: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Parameter,
    Buffer,
    Prototypes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: TensorRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArcHeader {
    scale: f64,
    margin: f64,
    d_embed: usize,
    n_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: HeadKind,
    head: HeadConfig,
    arc: ArcHeader,
    class_labels: Vec<String>,
    provenance: Provenance,
    tensors: Vec<TensorEntry>,
}

/// A trained model with everything needed to use it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub head: FusionHead,
    pub arc: ArcMarginHead,
    /// Identity identifier for each arc-margin class.
    pub class_labels: Vec<String>,
    pub provenance: Provenance,
}

fn entries(specs: Vec<ParamSpec>, role: TensorRole) -> impl Iterator<Item = TensorEntry> {
    specs.into_iter().map(move |s| TensorEntry {
        name: s.name,
        shape: s.shape,
        role,
    })
}

/// Layout: preamble, `header_len: u32`, a JSON header (kinds, dimensions,
/// provenance, class labels and the tensor table), then every tensor in
/// table order as little-endian f64.
pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    if ck.class_labels.len() != ck.arc.n_classes() {
        return Err(Error::shape("checkpoint class labels", ck.arc.n_classes(), ck.class_labels.len()));
    }
    if ck.arc.d_embed() != ck.head.d_embed() {
        return Err(Error::shape("checkpoint embedding width", ck.head.d_embed(), ck.arc.d_embed()));
    }
    let tensors: Vec<TensorEntry> = entries(ck.head.param_specs(), TensorRole::Parameter)
        .chain(entries(ck.head.buffer_specs(), TensorRole::Buffer))
        .chain(entries(ck.arc.param_specs(), TensorRole::Prototypes))
        .collect();
    let header = Header {
        kind: ck.head.kind(),
        head: ck.head.config(),
        arc: ArcHeader {
            scale: ck.arc.scale,
            margin: ck.arc.margin,
            d_embed: ck.arc.d_embed(),
            n_classes: ck.arc.n_classes(),
        },
        class_labels: ck.class_labels.clone(),
        provenance: ck.provenance.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Degenerate(format!("checkpoint header: {e}")))?;
    let mut out = Vec::new();
    put_preamble(&mut out, CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in ck.head.params().into_iter().chain(ck.head.buffers()).chain(ck.arc.params()) {
        put_f64s(&mut out, t);
    }
    Ok(out)
}

fn header_error(e: impl std::fmt::Display) -> FormatError {
    FormatError::Header(e.to_string())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, FormatError> {
    let mut r = Reader::new(bytes);
    check_preamble(&mut r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(len, "header")?).map_err(header_error)?;
    if header.head.kind != header.kind {
        return Err(FormatError::Header("head kind disagrees with head config".into()));
    }
    let mut head = FusionHead::init(&header.head, &mut stream_rng(0, Stream::Init, 0)).map_err(header_error)?;
    if header.arc.d_embed != head.d_embed() || header.class_labels.len() != header.arc.n_classes {
        return Err(FormatError::Dimension("arc-margin head does not match the fusion head".into()));
    }
    let expected: Vec<TensorEntry> = entries(head.param_specs(), TensorRole::Parameter)
        .chain(entries(head.buffer_specs(), TensorRole::Buffer))
        .chain(std::iter::once(TensorEntry {
            name: "arc.prototypes".into(),
            shape: vec![header.arc.d_embed, header.arc.n_classes],
            role: TensorRole::Prototypes,
        }))
        .collect();
    if expected != header.tensors {
        return Err(FormatError::Dimension("tensor table does not match the declared head".into()));
    }
    for t in head.params_mut() {
        t.copy_from_slice(&r.f64s(t.len(), "tensor payload")?);
    }
    for t in head.buffers_mut() {
        t.copy_from_slice(&r.f64s(t.len(), "buffer payload")?);
    }
    let protos = r.f64s(header.arc.d_embed * header.arc.n_classes, "prototype payload")?;
    r.finish()?;
    let prototypes = Matrix::new(header.arc.d_embed, header.arc.n_classes, protos).map_err(header_error)?;
    let arc = ArcMarginHead::new(prototypes, header.arc.scale, header.arc.margin).map_err(header_error)?;
    Ok(Checkpoint {
        head,
        arc,
        class_labels: header.class_labels,
        provenance: header.provenance,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    super::write_bytes(path, &encode_checkpoint(ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&super::read_bytes(path)?).map_err(|source| Error::Format {
        path: path.into(),
        source,
    })
}

/// Loads a checkpoint that must hold a head of kind `kind`.
pub fn load_checkpoint_as(path: &Path, kind: HeadKind) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.head.kind() != kind {
        return Err(Error::HeadKind {
            expected: kind.to_string(),
            found: ck.head.kind().to_string(),
        });
    }
    Ok(ck)
}
