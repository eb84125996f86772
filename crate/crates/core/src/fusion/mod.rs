//! Fusion heads combining audio and video backbone outputs into one
//! embedding: mean fusion, MLP fusion and the shared-layer multi-view head.
//!
//! A missing modality is represented by an all-zeros input at the head
//! boundary for the mean and MLP heads; the multi-view head processes each
//! modality on its own and so needs no stand-in.

pub mod layers;
mod mean;
mod mlp;
mod multiview;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use layers::{BatchNormLayer, Dropout, LinearLayer, Mode};
pub use mean::{MeanCache, MeanFusionHead, MeanMasks};
pub use mlp::{MlpCache, MlpFusionHead, MlpMasks};
pub use multiview::{MultiViewCache, MultiViewHead};

use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Video,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Audio => "audio",
            Modality::Video => "video",
        })
    }
}

/// Which modalities one side of a comparison exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Exposure {
    AudioVideo,
    Audio,
    Video,
}

impl Exposure {
    pub fn single(modality: Modality) -> Self {
        match modality {
            Modality::Audio => Exposure::Audio,
            Modality::Video => Exposure::Video,
        }
    }

    pub fn has_audio(self) -> bool {
        matches!(self, Exposure::AudioVideo | Exposure::Audio)
    }

    pub fn has_video(self) -> bool {
        matches!(self, Exposure::AudioVideo | Exposure::Video)
    }
}

/// One sample's audio and video inputs, either of which may be absent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModalityInput<'a> {
    pub audio: Option<&'a [f64]>,
    pub video: Option<&'a [f64]>,
}

impl<'a> ModalityInput<'a> {
    pub fn both(audio: &'a [f64], video: &'a [f64]) -> Self {
        Self {
            audio: Some(audio),
            video: Some(video),
        }
    }

    pub fn audio_only(audio: &'a [f64]) -> Self {
        Self {
            audio: Some(audio),
            video: None,
        }
    }

    pub fn video_only(video: &'a [f64]) -> Self {
        Self {
            audio: None,
            video: Some(video),
        }
    }

    pub fn exposed(audio: &'a [f64], video: &'a [f64], exposure: Exposure) -> Self {
        Self {
            audio: exposure.has_audio().then_some(audio),
            video: exposure.has_video().then_some(video),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.audio.is_none() && self.video.is_none()
    }
}

/// Turns an input into single-row audio and video matrices, substituting
/// zeros for absent sides.
pub(crate) fn materialize(input: &ModalityInput, d_audio: usize, d_video: usize) -> Result<(Matrix, Matrix)> {
    let side = |v: Option<&[f64]>, d: usize, context| -> Result<Matrix> {
        match v {
            Some(x) if x.len() != d => Err(Error::shape(context, d, x.len())),
            Some(x) => Matrix::new(1, d, x.to_vec()),
            None => Ok(Matrix::zeros(1, d)),
        }
    };
    Ok((
        side(input.audio, d_audio, "audio input")?,
        side(input.video, d_video, "video input")?,
    ))
}

/// Name and shape of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn new(name: &str, shape: &[usize]) -> Self {
        Self {
            name: name.to_owned(),
            shape: shape.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Access to trainable tensors in a fixed declared order.
pub trait Parameters {
    fn param_specs(&self) -> Vec<ParamSpec>;
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Gradient tensors aligned with a [`Parameters::params`] listing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamGrads(pub Vec<Vec<f64>>);

impl ParamGrads {
    pub fn zeros_like<P: Parameters + ?Sized>(p: &P) -> Self {
        ParamGrads(p.params().iter().map(|t| vec![0.0; t.len()]).collect())
    }

    /// `self += weight · other`.
    pub fn add_scaled(&mut self, other: &ParamGrads, weight: f64) {
        debug_assert_eq!(self.0.len(), other.0.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += weight * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().flatten().for_each(|x| *x *= s);
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn extend(&mut self, other: ParamGrads) {
        self.0.extend(other.0);
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|&x| x == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Mean,
    Mlp,
    #[serde(rename = "multiview")]
    MultiView,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Mean, HeadKind::Mlp, HeadKind::MultiView];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Mean => "mean",
            HeadKind::Mlp => "mlp",
            HeadKind::MultiView => "multiview",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(HeadKind::Mean),
            "mlp" => Ok(HeadKind::Mlp),
            "multiview" | "multi-view" => Ok(HeadKind::MultiView),
            other => Err(Error::config("head", format!("unknown head kind '{other}'"))),
        }
    }
}

/// Dimensions and hyper-parameters of a fusion head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub d_audio: usize,
    pub d_video: usize,
    pub d_embed: usize,
    /// Hidden width of the MLP head.
    pub hidden: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self::desk(HeadKind::Mean)
    }
}

impl HeadConfig {
    /// Full-size dimensions: 356-d audio and 2048-d video backbone outputs.
    pub fn full(kind: HeadKind) -> Self {
        Self {
            kind,
            d_audio: 356,
            d_video: 2048,
            d_embed: 256,
            hidden: 1330,
            dropout: 0.1,
            leaky_slope: 0.01,
        }
    }

    /// Small profile for tests and laptop-scale runs.
    pub fn desk(kind: HeadKind) -> Self {
        Self {
            kind,
            d_audio: 16,
            d_video: 32,
            d_embed: 8,
            hidden: 24,
            dropout: 0.1,
            leaky_slope: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("d_audio", self.d_audio),
            ("d_video", self.d_video),
            ("d_embed", self.d_embed),
            ("hidden", if self.kind == HeadKind::Mlp { self.hidden } else { 1 }),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if !(self.leaky_slope >= 0.0) {
            return Err(Error::config("leaky_slope", "must be ≥ 0"));
        }
        Ok(())
    }
}

/// Dropout masks for one training batch.
#[derive(Debug, Clone, PartialEq)]
pub enum DropoutMasks {
    Mean(MeanMasks),
    Mlp(MlpMasks),
    MultiView { audio: Matrix, video: Matrix },
}

/// Everything a head's backward pass needs from its forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum ForwardCache {
    Mean(MeanCache),
    Mlp(Box<MlpCache>),
    MultiView(MultiViewCache),
}

/// Which embedding a training view produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewKind {
    Fused,
    Single(Modality),
}

/// One embedding batch produced in train mode, together with its cache.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub kind: ViewKind,
    pub output: Matrix,
    pub cache: ForwardCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardOutput {
    pub grads: ParamGrads,
    pub grad_audio: Option<Matrix>,
    pub grad_video: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FusionHead {
    Mean(MeanFusionHead),
    Mlp(MlpFusionHead),
    MultiView(MultiViewHead),
}

impl FusionHead {
    pub fn init(cfg: &HeadConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let dropout = Dropout::new(cfg.dropout)?;
        Ok(match cfg.kind {
            HeadKind::Mean => FusionHead::Mean(MeanFusionHead::init(
                cfg.d_audio,
                cfg.d_video,
                cfg.d_embed,
                dropout,
                rng,
            )),
            HeadKind::Mlp => FusionHead::Mlp(MlpFusionHead::init(
                cfg.d_audio,
                cfg.d_video,
                cfg.hidden,
                cfg.d_embed,
                dropout,
                cfg.leaky_slope,
                rng,
            )),
            HeadKind::MultiView => FusionHead::MultiView(MultiViewHead::init(
                cfg.d_audio,
                cfg.d_video,
                cfg.d_embed,
                dropout,
                rng,
            )),
        })
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            FusionHead::Mean(_) => HeadKind::Mean,
            FusionHead::Mlp(_) => HeadKind::Mlp,
            FusionHead::MultiView(_) => HeadKind::MultiView,
        }
    }

    pub fn d_audio(&self) -> usize {
        match self {
            FusionHead::Mean(h) => h.d_audio(),
            FusionHead::Mlp(h) => h.d_audio(),
            FusionHead::MultiView(h) => h.d_audio(),
        }
    }

    pub fn d_video(&self) -> usize {
        match self {
            FusionHead::Mean(h) => h.d_video(),
            FusionHead::Mlp(h) => h.d_video(),
            FusionHead::MultiView(h) => h.d_video(),
        }
    }

    pub fn d_embed(&self) -> usize {
        match self {
            FusionHead::Mean(h) => h.d_embed(),
            FusionHead::Mlp(h) => h.d_embed(),
            FusionHead::MultiView(h) => h.d_embed(),
        }
    }

    pub fn config(&self) -> HeadConfig {
        let (dropout, hidden, leaky_slope) = match self {
            FusionHead::Mean(h) => (h.dropout, 0, 0.01),
            FusionHead::Mlp(h) => (h.dropout, h.hidden(), h.leaky_slope),
            FusionHead::MultiView(h) => (h.dropout, 0, 0.01),
        };
        HeadConfig {
            kind: self.kind(),
            d_audio: self.d_audio(),
            d_video: self.d_video(),
            d_embed: self.d_embed(),
            hidden,
            dropout: dropout.probability,
            leaky_slope,
        }
    }

    /// Eval-mode embedding of one input. Absent modalities enter the mean and
    /// MLP heads as zeros; the multi-view head routes by what is present.
    pub fn embed(&self, input: &ModalityInput) -> Result<Vec<f64>> {
        // eval mode never draws from the stream
        let mut rng = crate::rng::stream_rng(0, crate::rng::Stream::Dropout, 0);
        match self {
            FusionHead::Mean(h) => h.fuse(input, Mode::Eval, &mut rng),
            FusionHead::Mlp(h) => h.fuse(input, Mode::Eval, &mut rng),
            FusionHead::MultiView(h) => h.fuse(input, Mode::Eval, &mut rng),
        }
    }

    /// Eval-mode embeddings for every row of `audio`/`video` under one
    /// exposure. Unexposed inputs are ignored.
    pub fn embed_batch(&self, audio: &Matrix, video: &Matrix, exposure: Exposure) -> Result<Matrix> {
        let n = audio.rows();
        let zeros_a = || Matrix::zeros(n, self.d_audio());
        let zeros_v = || Matrix::zeros(n, self.d_video());
        let a_owned;
        let v_owned;
        let a = if exposure.has_audio() {
            audio
        } else {
            a_owned = zeros_a();
            &a_owned
        };
        let v = if exposure.has_video() {
            video
        } else {
            v_owned = zeros_v();
            &v_owned
        };
        match self {
            FusionHead::Mean(h) => Ok(h.forward(a, v, None)?.0),
            FusionHead::Mlp(h) => h.forward_eval(a, v),
            FusionHead::MultiView(h) => match exposure {
                Exposure::Audio => Ok(h.embed_batch(Modality::Audio, audio, None)?.0),
                Exposure::Video => Ok(h.embed_batch(Modality::Video, video, None)?.0),
                Exposure::AudioVideo => {
                    let mut out = h.embed_batch(Modality::Audio, audio, None)?.0;
                    out.add_assign(&h.embed_batch(Modality::Video, video, None)?.0);
                    out.scale(0.5);
                    Ok(out)
                }
            },
        }
    }

    pub fn draw_masks(&self, n: usize, rng: &mut Rng) -> DropoutMasks {
        match self {
            FusionHead::Mean(h) => DropoutMasks::Mean(h.draw_masks(n, rng)),
            FusionHead::Mlp(h) => DropoutMasks::Mlp(h.draw_masks(n, rng)),
            FusionHead::MultiView(h) => DropoutMasks::MultiView {
                audio: h.draw_mask(n, rng),
                video: h.draw_mask(n, rng),
            },
        }
    }

    /// Train-mode forward pass over a batch. Mean and MLP heads produce one
    /// fused view; the multi-view head produces an audio and a video view.
    pub fn forward_train(&self, audio: &Matrix, video: &Matrix, masks: &DropoutMasks) -> Result<Vec<TrainView>> {
        match (self, masks) {
            (FusionHead::Mean(h), DropoutMasks::Mean(m)) => {
                let (output, cache) = h.forward(audio, video, Some(m))?;
                Ok(vec![TrainView {
                    kind: ViewKind::Fused,
                    output,
                    cache: ForwardCache::Mean(cache),
                }])
            }
            (FusionHead::Mlp(h), DropoutMasks::Mlp(m)) => {
                let (output, cache) = h.forward_train(audio, video, m)?;
                Ok(vec![TrainView {
                    kind: ViewKind::Fused,
                    output,
                    cache: ForwardCache::Mlp(Box::new(cache)),
                }])
            }
            (FusionHead::MultiView(h), DropoutMasks::MultiView { audio: ma, video: mv }) => {
                let (oa, ca) = h.embed_batch(Modality::Audio, audio, Some(ma))?;
                let (ov, cv) = h.embed_batch(Modality::Video, video, Some(mv))?;
                Ok(vec![
                    TrainView {
                        kind: ViewKind::Single(Modality::Audio),
                        output: oa,
                        cache: ForwardCache::MultiView(ca),
                    },
                    TrainView {
                        kind: ViewKind::Single(Modality::Video),
                        output: ov,
                        cache: ForwardCache::MultiView(cv),
                    },
                ])
            }
            _ => Err(Error::CacheMismatch(format!(
                "dropout masks do not belong to a {} head",
                self.kind()
            ))),
        }
    }

    /// Exact gradients of a scalar objective given `grad_out = ∂L/∂output`
    /// for the view that produced `cache`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Matrix) -> Result<BackwardOutput> {
        if grad_out.cols() != self.d_embed() {
            return Err(Error::CacheMismatch(format!(
                "gradient width {} != embedding width {}",
                grad_out.cols(),
                self.d_embed()
            )));
        }
        match (self, cache) {
            (FusionHead::Mean(h), ForwardCache::Mean(c)) => {
                check_cache_dims(c.audio_in.shape(), c.video_in.shape(), h.d_audio(), h.d_video(), grad_out)?;
                let (grads, a, v) = h.backward(c, grad_out)?;
                Ok(BackwardOutput {
                    grads,
                    grad_audio: Some(a),
                    grad_video: Some(v),
                })
            }
            (FusionHead::Mlp(h), ForwardCache::Mlp(c)) => {
                if c.bn_caches()[0].inv_std.len() != h.hidden() {
                    return Err(Error::CacheMismatch("hidden width differs".into()));
                }
                let (grads, a, v) = h.backward(c, grad_out)?;
                Ok(BackwardOutput {
                    grads,
                    grad_audio: Some(a),
                    grad_video: Some(v),
                })
            }
            (FusionHead::MultiView(h), ForwardCache::MultiView(c)) => {
                let (grads, g) = h.backward(c, grad_out)?;
                let (grad_audio, grad_video) = match c.modality() {
                    Modality::Audio => (Some(g), None),
                    Modality::Video => (None, Some(g)),
                };
                Ok(BackwardOutput {
                    grads,
                    grad_audio,
                    grad_video,
                })
            }
            _ => Err(Error::CacheMismatch(format!(
                "cache was not produced by a {} head",
                self.kind()
            ))),
        }
    }

    /// Adopts batch-norm running statistics from a train-mode pass.
    pub fn commit_running_stats(&mut self, views: &[TrainView]) {
        if let FusionHead::Mlp(h) = self {
            for v in views {
                if let ForwardCache::Mlp(c) = &v.cache {
                    h.commit_running_stats(c);
                }
            }
        }
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffer_specs(&self) -> Vec<ParamSpec> {
        match self {
            FusionHead::Mlp(h) => h.buffer_specs(),
            _ => Vec::new(),
        }
    }

    pub fn buffers(&self) -> Vec<&[f64]> {
        match self {
            FusionHead::Mlp(h) => h.buffers(),
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            FusionHead::Mlp(h) => h.buffers_mut(),
            _ => Vec::new(),
        }
    }
}

fn check_cache_dims(
    audio: (usize, usize),
    video: (usize, usize),
    d_audio: usize,
    d_video: usize,
    grad_out: &Matrix,
) -> Result<()> {
    if audio.1 != d_audio || video.1 != d_video || audio.0 != grad_out.rows() {
        return Err(Error::CacheMismatch(format!(
            "cache holds {}×{} audio / {}×{} video, head expects width {d_audio}/{d_video} and {} rows",
            audio.0,
            audio.1,
            video.0,
            video.1,
            grad_out.rows()
        )));
    }
    Ok(())
}

impl Parameters for FusionHead {
    fn param_specs(&self) -> Vec<ParamSpec> {
        match self {
            FusionHead::Mean(h) => h.param_specs(),
            FusionHead::Mlp(h) => h.param_specs(),
            FusionHead::MultiView(h) => h.param_specs(),
        }
    }

    fn params(&self) -> Vec<&[f64]> {
        match self {
            FusionHead::Mean(h) => h.params(),
            FusionHead::Mlp(h) => h.params(),
            FusionHead::MultiView(h) => h.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            FusionHead::Mean(h) => h.params_mut(),
            FusionHead::Mlp(h) => h.params_mut(),
            FusionHead::MultiView(h) => h.params_mut(),
        }
    }
}
