use serde::{Deserialize, Serialize};

use super::layers::{hadamard, Dropout, LinearLayer, Mode};
use super::{materialize, ModalityInput, ParamGrads, ParamSpec, Parameters};
use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::rng::Rng;

/// Projects each modality separately and averages the two projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFusionHead {
    pub proj_audio: LinearLayer,
    pub proj_video: LinearLayer,
    pub dropout: Dropout,
}

/// Input dropout masks for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanMasks {
    pub audio: Matrix,
    pub video: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanCache {
    pub(crate) audio_in: Matrix,
    pub(crate) video_in: Matrix,
    pub(crate) masks: Option<MeanMasks>,
}

impl MeanFusionHead {
    pub fn new(proj_audio: LinearLayer, proj_video: LinearLayer, dropout: Dropout) -> Result<Self> {
        if proj_audio.out_dim() != proj_video.out_dim() {
            return Err(Error::shape(
                "MeanFusionHead::new",
                proj_audio.out_dim(),
                proj_video.out_dim(),
            ));
        }
        Ok(Self {
            proj_audio,
            proj_video,
            dropout,
        })
    }

    pub fn init(d_audio: usize, d_video: usize, d_embed: usize, dropout: Dropout, rng: &mut Rng) -> Self {
        Self {
            proj_audio: LinearLayer::init(d_audio, d_embed, rng),
            proj_video: LinearLayer::init(d_video, d_embed, rng),
            dropout,
        }
    }

    pub fn d_audio(&self) -> usize {
        self.proj_audio.in_dim()
    }

    pub fn d_video(&self) -> usize {
        self.proj_video.in_dim()
    }

    pub fn d_embed(&self) -> usize {
        self.proj_audio.out_dim()
    }

    pub fn draw_masks(&self, n: usize, rng: &mut Rng) -> MeanMasks {
        MeanMasks {
            audio: self.dropout.sample_mask(n, self.d_audio(), rng),
            video: self.dropout.sample_mask(n, self.d_video(), rng),
        }
    }

    /// Batched forward pass; `masks = None` is eval mode.
    pub fn forward(
        &self,
        audio: &Matrix,
        video: &Matrix,
        masks: Option<&MeanMasks>,
    ) -> Result<(Matrix, MeanCache)> {
        let (audio_in, video_in) = match masks {
            Some(m) => (hadamard(audio, &m.audio), hadamard(video, &m.video)),
            None => (audio.clone(), video.clone()),
        };
        let mut out = self.proj_audio.forward(&audio_in)?;
        out.add_assign(&self.proj_video.forward(&video_in)?);
        out.scale(0.5);
        Ok((
            out,
            MeanCache {
                audio_in,
                video_in,
                masks: masks.cloned(),
            },
        ))
    }

    /// Returns parameter gradients plus gradients w.r.t. the raw audio and
    /// video inputs.
    pub fn backward(&self, cache: &MeanCache, grad_out: &Matrix) -> Result<(ParamGrads, Matrix, Matrix)> {
        let mut half = grad_out.clone();
        half.scale(0.5);
        let (ga, mut grad_audio) = self.proj_audio.backward(&cache.audio_in, &half)?;
        let (gv, mut grad_video) = self.proj_video.backward(&cache.video_in, &half)?;
        if let Some(m) = &cache.masks {
            grad_audio = hadamard(&grad_audio, &m.audio);
            grad_video = hadamard(&grad_video, &m.video);
        }
        let grads = ParamGrads(vec![
            ga.weight.into_vec(),
            ga.bias,
            gv.weight.into_vec(),
            gv.bias,
        ]);
        Ok((grads, grad_audio, grad_video))
    }

    /// Single-input fusion. Absent modalities enter as zero vectors.
    pub fn fuse(&self, input: &ModalityInput, mode: Mode, rng: &mut Rng) -> Result<Vec<f64>> {
        if input.is_empty() {
            return Err(Error::Degenerate("mean fusion needs at least one modality".into()));
        }
        self.fuse_unchecked(input, mode, rng)
    }

    /// Like [`fuse`](Self::fuse) but also accepts an input with both
    /// modalities absent.
    pub fn fuse_unchecked(&self, input: &ModalityInput, mode: Mode, rng: &mut Rng) -> Result<Vec<f64>> {
        let (a, v) = materialize(input, self.d_audio(), self.d_video())?;
        let masks = match mode {
            Mode::Train => Some(self.draw_masks(1, rng)),
            Mode::Eval => None,
        };
        let (out, _) = self.forward(&a, &v, masks.as_ref())?;
        Ok(out.into_vec())
    }
}

impl Parameters for MeanFusionHead {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let (da, dv, de) = (self.d_audio(), self.d_video(), self.d_embed());
        vec![
            ParamSpec::new("proj_audio.weight", &[de, da]),
            ParamSpec::new("proj_audio.bias", &[de]),
            ParamSpec::new("proj_video.weight", &[de, dv]),
            ParamSpec::new("proj_video.bias", &[de]),
        ]
    }

    fn params(&self) -> Vec<&[f64]> {
        vec![
            self.proj_audio.weight.as_slice(),
            &self.proj_audio.bias,
            self.proj_video.weight.as_slice(),
            &self.proj_video.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.proj_audio.weight.as_mut_slice(),
            &mut self.proj_audio.bias,
            self.proj_video.weight.as_mut_slice(),
            &mut self.proj_video.bias,
        ]
    }
}
