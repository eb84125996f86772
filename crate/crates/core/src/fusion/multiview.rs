use serde::{Deserialize, Serialize};

use super::layers::{hadamard, Dropout, LinearLayer, Mode};
use super::{Modality, ModalityInput, ParamGrads, ParamSpec, Parameters};
use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::rng::Rng;

/// Per-modality projections followed by one shared square layer applied to
/// each modality separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiViewHead {
    pub proj_audio: LinearLayer,
    pub proj_video: LinearLayer,
    pub shared_classifier: LinearLayer,
    pub dropout: Dropout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewCache {
    pub(crate) modality: Modality,
    input: Matrix,
    projected: Matrix,
    pre_activation: Matrix,
    mask: Option<Matrix>,
}

impl MultiViewCache {
    pub fn modality(&self) -> Modality {
        self.modality
    }
}

impl MultiViewHead {
    pub fn new(
        proj_audio: LinearLayer,
        proj_video: LinearLayer,
        shared_classifier: LinearLayer,
        dropout: Dropout,
    ) -> Result<Self> {
        let d = shared_classifier.in_dim();
        if shared_classifier.out_dim() != d || proj_audio.out_dim() != d || proj_video.out_dim() != d {
            return Err(Error::shape(
                "MultiViewHead::new",
                format!("square shared layer at {d}"),
                format!(
                    "audio→{}, video→{}, shared {}→{}",
                    proj_audio.out_dim(),
                    proj_video.out_dim(),
                    shared_classifier.in_dim(),
                    shared_classifier.out_dim()
                ),
            ));
        }
        Ok(Self {
            proj_audio,
            proj_video,
            shared_classifier,
            dropout,
        })
    }

    pub fn init(d_audio: usize, d_video: usize, d_embed: usize, dropout: Dropout, rng: &mut Rng) -> Self {
        Self {
            proj_audio: LinearLayer::init(d_audio, d_embed, rng),
            proj_video: LinearLayer::init(d_video, d_embed, rng),
            shared_classifier: LinearLayer::init(d_embed, d_embed, rng),
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
        self.shared_classifier.out_dim()
    }

    fn projection(&self, modality: Modality) -> &LinearLayer {
        match modality {
            Modality::Audio => &self.proj_audio,
            Modality::Video => &self.proj_video,
        }
    }

    pub fn draw_mask(&self, n: usize, rng: &mut Rng) -> Matrix {
        self.dropout.sample_mask(n, self.d_embed(), rng)
    }

    /// `dropout(relu(shared(proj_modality(x))))` over a batch; `mask = None`
    /// is eval mode.
    pub fn embed_batch(
        &self,
        modality: Modality,
        x: &Matrix,
        mask: Option<&Matrix>,
    ) -> Result<(Matrix, MultiViewCache)> {
        let projected = self.projection(modality).forward(x)?;
        let pre_activation = self.shared_classifier.forward(&projected)?;
        let mut out = pre_activation.clone();
        out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        if let Some(m) = mask {
            out = hadamard(&out, m);
        }
        Ok((
            out,
            MultiViewCache {
                modality,
                input: x.clone(),
                projected,
                pre_activation,
                mask: mask.cloned(),
            },
        ))
    }

    /// Gradients for all six tensors; the unused projection gets zeros.
    pub fn backward(&self, cache: &MultiViewCache, grad_out: &Matrix) -> Result<(ParamGrads, Matrix)> {
        let mut g = match &cache.mask {
            Some(m) => hadamard(grad_out, m),
            None => grad_out.clone(),
        };
        g.as_mut_slice()
            .iter_mut()
            .zip(cache.pre_activation.as_slice())
            .for_each(|(g, &z)| if z <= 0.0 { *g = 0.0 });
        let (gs, g_proj) = self.shared_classifier.backward(&cache.projected, &g)?;
        let (gp, grad_in) = self.projection(cache.modality).backward(&cache.input, &g_proj)?;

        let zero_a = || (vec![0.0; self.proj_audio.weight.as_slice().len()], vec![0.0; self.d_embed()]);
        let zero_v = || (vec![0.0; self.proj_video.weight.as_slice().len()], vec![0.0; self.d_embed()]);
        let ((aw, ab), (vw, vb)) = match cache.modality {
            Modality::Audio => ((gp.weight.into_vec(), gp.bias), zero_v()),
            Modality::Video => (zero_a(), (gp.weight.into_vec(), gp.bias)),
        };
        Ok((
            ParamGrads(vec![aw, ab, vw, vb, gs.weight.into_vec(), gs.bias]),
            grad_in,
        ))
    }

    /// Single-modality embedding.
    pub fn embed(&self, modality: Modality, x: &[f64], mode: Mode, rng: &mut Rng) -> Result<Vec<f64>> {
        let expect = self.projection(modality).in_dim();
        if x.len() != expect {
            return Err(Error::shape("multiview_embed", expect, x.len()));
        }
        let x = Matrix::new(1, x.len(), x.to_vec())?;
        let mask = match mode {
            Mode::Train => Some(self.draw_mask(1, rng)),
            Mode::Eval => None,
        };
        Ok(self.embed_batch(modality, &x, mask.as_ref())?.0.into_vec())
    }

    /// Joint embedding when both modalities are present: the mean of the two
    /// single-modality embeddings.
    pub fn embed_joint(&self, input: &ModalityInput, mode: Mode, rng: &mut Rng) -> Result<Vec<f64>> {
        let (Some(a), Some(v)) = (input.audio, input.video) else {
            return Err(Error::Degenerate(
                "joint multi-view embedding needs both modalities; use the single-modality path".into(),
            ));
        };
        let ea = self.embed(Modality::Audio, a, mode, rng)?;
        let ev = self.embed(Modality::Video, v, mode, rng)?;
        Ok(ea.iter().zip(&ev).map(|(x, y)| 0.5 * (x + y)).collect())
    }

    /// Routes to the joint or single-modality path by what `input` exposes.
    pub fn fuse(&self, input: &ModalityInput, mode: Mode, rng: &mut Rng) -> Result<Vec<f64>> {
        match (input.audio, input.video) {
            (Some(_), Some(_)) => self.embed_joint(input, mode, rng),
            (Some(a), None) => self.embed(Modality::Audio, a, mode, rng),
            (None, Some(v)) => self.embed(Modality::Video, v, mode, rng),
            (None, None) => Err(Error::Degenerate("multi-view needs at least one modality".into())),
        }
    }
}

impl Parameters for MultiViewHead {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let (da, dv, de) = (self.d_audio(), self.d_video(), self.d_embed());
        vec![
            ParamSpec::new("proj_audio.weight", &[de, da]),
            ParamSpec::new("proj_audio.bias", &[de]),
            ParamSpec::new("proj_video.weight", &[de, dv]),
            ParamSpec::new("proj_video.bias", &[de]),
            ParamSpec::new("shared_classifier.weight", &[de, de]),
            ParamSpec::new("shared_classifier.bias", &[de]),
        ]
    }

    fn params(&self) -> Vec<&[f64]> {
        vec![
            self.proj_audio.weight.as_slice(),
            &self.proj_audio.bias,
            self.proj_video.weight.as_slice(),
            &self.proj_video.bias,
            self.shared_classifier.weight.as_slice(),
            &self.shared_classifier.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.proj_audio.weight.as_mut_slice(),
            &mut self.proj_audio.bias,
            self.proj_video.weight.as_mut_slice(),
            &mut self.proj_video.bias,
            self.shared_classifier.weight.as_mut_slice(),
            &mut self.shared_classifier.bias,
        ]
    }
}
