use serde::{Deserialize, Serialize};

use super::layers::{
    hadamard, leaky_relu_backward, leaky_relu_matrix, BatchNormCache, BatchNormLayer, Dropout,
    LinearLayer, Mode,
};
use super::{materialize, ModalityInput, ParamGrads, ParamSpec, Parameters};
use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::rng::Rng;

/// Three-layer perceptron over the concatenated audio and video inputs.
/// Each layer is linear → leaky ReLU → batch norm, with dropout after the
/// first two normalizations and on the two inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpFusionHead {
    pub layer1: LinearLayer,
    pub layer2: LinearLayer,
    pub layer3: LinearLayer,
    pub bn1: BatchNormLayer,
    pub bn2: BatchNormLayer,
    pub bn3: BatchNormLayer,
    pub dropout: Dropout,
    pub leaky_slope: f64,
    d_audio: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpMasks {
    pub audio: Matrix,
    pub video: Matrix,
    pub hidden1: Matrix,
    pub hidden2: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache {
    x0: Matrix,
    z1: Matrix,
    bn1: BatchNormCache,
    o1: Matrix,
    z2: Matrix,
    bn2: BatchNormCache,
    o2: Matrix,
    z3: Matrix,
    bn3: BatchNormCache,
    masks: MlpMasks,
}

impl MlpCache {
    pub(crate) fn bn_caches(&self) -> [&BatchNormCache; 3] {
        [&self.bn1, &self.bn2, &self.bn3]
    }
}

impl MlpFusionHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d_audio: usize,
        layer1: LinearLayer,
        layer2: LinearLayer,
        layer3: LinearLayer,
        dropout: Dropout,
        leaky_slope: f64,
    ) -> Result<Self> {
        if layer1.out_dim() != layer2.in_dim() || layer2.out_dim() != layer3.in_dim() {
            return Err(Error::shape(
                "MlpFusionHead::new",
                format!("{} → {}", layer1.out_dim(), layer2.in_dim()),
                format!("{} → {}", layer2.out_dim(), layer3.in_dim()),
            ));
        }
        if d_audio > layer1.in_dim() {
            return Err(Error::shape("MlpFusionHead::new", layer1.in_dim(), d_audio));
        }
        if !(leaky_slope >= 0.0) {
            return Err(Error::config("leaky_slope", "must be ≥ 0"));
        }
        Ok(Self {
            bn1: BatchNormLayer::new(layer1.out_dim()),
            bn2: BatchNormLayer::new(layer2.out_dim()),
            bn3: BatchNormLayer::new(layer3.out_dim()),
            layer1,
            layer2,
            layer3,
            dropout,
            leaky_slope,
            d_audio,
        })
    }

    pub fn init(
        d_audio: usize,
        d_video: usize,
        hidden: usize,
        d_embed: usize,
        dropout: Dropout,
        leaky_slope: f64,
        rng: &mut Rng,
    ) -> Self {
        let layer1 = LinearLayer::init(d_audio + d_video, hidden, rng);
        let layer2 = LinearLayer::init(hidden, hidden, rng);
        let layer3 = LinearLayer::init(hidden, d_embed, rng);
        Self::new(d_audio, layer1, layer2, layer3, dropout, leaky_slope).expect("consistent dims")
    }

    pub fn d_audio(&self) -> usize {
        self.d_audio
    }

    pub fn d_video(&self) -> usize {
        self.layer1.in_dim() - self.d_audio
    }

    pub fn hidden(&self) -> usize {
        self.layer1.out_dim()
    }

    pub fn d_embed(&self) -> usize {
        self.layer3.out_dim()
    }

    pub fn draw_masks(&self, n: usize, rng: &mut Rng) -> MlpMasks {
        MlpMasks {
            audio: self.dropout.sample_mask(n, self.d_audio(), rng),
            video: self.dropout.sample_mask(n, self.d_video(), rng),
            hidden1: self.dropout.sample_mask(n, self.hidden(), rng),
            hidden2: self.dropout.sample_mask(n, self.hidden(), rng),
        }
    }

    /// Eval-mode forward pass using running batch-norm statistics.
    pub fn forward_eval(&self, audio: &Matrix, video: &Matrix) -> Result<Matrix> {
        let x0 = audio.hstack(video)?;
        let s = self.leaky_slope;
        let h1 = self.bn1.forward_eval(&leaky_relu_matrix(&self.layer1.forward(&x0)?, s))?;
        let h2 = self.bn2.forward_eval(&leaky_relu_matrix(&self.layer2.forward(&h1)?, s))?;
        self.bn3.forward_eval(&leaky_relu_matrix(&self.layer3.forward(&h2)?, s))
    }

    /// Train-mode forward pass over a batch of at least two samples.
    pub fn forward_train(&self, audio: &Matrix, video: &Matrix, masks: &MlpMasks) -> Result<(Matrix, MlpCache)> {
        if audio.cols() != self.d_audio() || video.cols() != self.d_video() {
            return Err(Error::shape(
                "mlp_fuse",
                format!("{}+{}", self.d_audio(), self.d_video()),
                format!("{}+{}", audio.cols(), video.cols()),
            ));
        }
        let s = self.leaky_slope;
        let x0 = hadamard(audio, &masks.audio).hstack(&hadamard(video, &masks.video))?;
        let z1 = self.layer1.forward(&x0)?;
        let (y1, bn1) = self.bn1.forward_train(&leaky_relu_matrix(&z1, s))?;
        let o1 = hadamard(&y1, &masks.hidden1);
        let z2 = self.layer2.forward(&o1)?;
        let (y2, bn2) = self.bn2.forward_train(&leaky_relu_matrix(&z2, s))?;
        let o2 = hadamard(&y2, &masks.hidden2);
        let z3 = self.layer3.forward(&o2)?;
        let (out, bn3) = self.bn3.forward_train(&leaky_relu_matrix(&z3, s))?;
        Ok((
            out,
            MlpCache {
                x0,
                z1,
                bn1,
                o1,
                z2,
                bn2,
                o2,
                z3,
                bn3,
                masks: masks.clone(),
            },
        ))
    }

    pub fn backward(&self, cache: &MlpCache, grad_out: &Matrix) -> Result<(ParamGrads, Matrix, Matrix)> {
        let s = self.leaky_slope;
        let (gbn3, g) = self.bn3.backward(&cache.bn3, grad_out);
        let g = leaky_relu_backward(&cache.z3, &g, s);
        let (gl3, g) = self.layer3.backward(&cache.o2, &g)?;

        let g = hadamard(&g, &cache.masks.hidden2);
        let (gbn2, g) = self.bn2.backward(&cache.bn2, &g);
        let g = leaky_relu_backward(&cache.z2, &g, s);
        let (gl2, g) = self.layer2.backward(&cache.o1, &g)?;

        let g = hadamard(&g, &cache.masks.hidden1);
        let (gbn1, g) = self.bn1.backward(&cache.bn1, &g);
        let g = leaky_relu_backward(&cache.z1, &g, s);
        let (gl1, g) = self.layer1.backward(&cache.x0, &g)?;

        let (ga, gv) = g.split_cols(self.d_audio());
        let grad_audio = hadamard(&ga, &cache.masks.audio);
        let grad_video = hadamard(&gv, &cache.masks.video);
        let grads = ParamGrads(vec![
            gl1.weight.into_vec(),
            gl1.bias,
            gbn1.gamma,
            gbn1.beta,
            gl2.weight.into_vec(),
            gl2.bias,
            gbn2.gamma,
            gbn2.beta,
            gl3.weight.into_vec(),
            gl3.bias,
            gbn3.gamma,
            gbn3.beta,
        ]);
        Ok((grads, grad_audio, grad_video))
    }

    /// Adopts the running statistics produced by a train-mode batch.
    pub fn commit_running_stats(&mut self, cache: &MlpCache) {
        self.bn1.commit(&cache.bn1);
        self.bn2.commit(&cache.bn2);
        self.bn3.commit(&cache.bn3);
    }

    /// Single-input fusion. Train mode needs batch statistics, so a lone
    /// sample is rejected there.
    pub fn fuse(&self, input: &ModalityInput, mode: Mode, rng: &mut Rng) -> Result<Vec<f64>> {
        if input.is_empty() {
            return Err(Error::Degenerate("MLP fusion needs at least one modality".into()));
        }
        let (a, v) = materialize(input, self.d_audio(), self.d_video())?;
        match mode {
            Mode::Eval => Ok(self.forward_eval(&a, &v)?.into_vec()),
            Mode::Train => {
                let masks = self.draw_masks(1, rng);
                Ok(self.forward_train(&a, &v, &masks)?.0.into_vec())
            }
        }
    }

    pub(crate) fn buffer_specs(&self) -> Vec<ParamSpec> {
        let (h, de) = (self.hidden(), self.d_embed());
        vec![
            ParamSpec::new("bn1.running_mean", &[h]),
            ParamSpec::new("bn1.running_var", &[h]),
            ParamSpec::new("bn2.running_mean", &[h]),
            ParamSpec::new("bn2.running_var", &[h]),
            ParamSpec::new("bn3.running_mean", &[de]),
            ParamSpec::new("bn3.running_var", &[de]),
        ]
    }

    pub(crate) fn buffers(&self) -> Vec<&[f64]> {
        vec![
            &self.bn1.running_mean,
            &self.bn1.running_var,
            &self.bn2.running_mean,
            &self.bn2.running_var,
            &self.bn3.running_mean,
            &self.bn3.running_var,
        ]
    }

    pub(crate) fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.bn1.running_mean,
            &mut self.bn1.running_var,
            &mut self.bn2.running_mean,
            &mut self.bn2.running_var,
            &mut self.bn3.running_mean,
            &mut self.bn3.running_var,
        ]
    }
}

impl Parameters for MlpFusionHead {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let (din, h, de) = (self.layer1.in_dim(), self.hidden(), self.d_embed());
        vec![
            ParamSpec::new("layer1.weight", &[h, din]),
            ParamSpec::new("layer1.bias", &[h]),
            ParamSpec::new("bn1.gamma", &[h]),
            ParamSpec::new("bn1.beta", &[h]),
            ParamSpec::new("layer2.weight", &[h, h]),
            ParamSpec::new("layer2.bias", &[h]),
            ParamSpec::new("bn2.gamma", &[h]),
            ParamSpec::new("bn2.beta", &[h]),
            ParamSpec::new("layer3.weight", &[de, h]),
            ParamSpec::new("layer3.bias", &[de]),
            ParamSpec::new("bn3.gamma", &[de]),
            ParamSpec::new("bn3.beta", &[de]),
        ]
    }

    fn params(&self) -> Vec<&[f64]> {
        vec![
            self.layer1.weight.as_slice(),
            &self.layer1.bias,
            &self.bn1.gamma,
            &self.bn1.beta,
            self.layer2.weight.as_slice(),
            &self.layer2.bias,
            &self.bn2.gamma,
            &self.bn2.beta,
            self.layer3.weight.as_slice(),
            &self.layer3.bias,
            &self.bn3.gamma,
            &self.bn3.beta,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.layer1.weight.as_mut_slice(),
            &mut self.layer1.bias,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            self.layer2.weight.as_mut_slice(),
            &mut self.layer2.bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            self.layer3.weight.as_mut_slice(),
            &mut self.layer3.bias,
            &mut self.bn3.gamma,
            &mut self.bn3.beta,
        ]
    }
}
