//! Training loop: input masking, joint loss, gradient clipping, AdamW and
//! the validation-driven learning-rate schedule.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::arc_margin::{ArcMarginHead, DEFAULT_MARGIN, DEFAULT_SCALE};
use crate::data::LabeledSet;
use crate::fusion::{DropoutMasks, Exposure, FusionHead, HeadKind, Modality, ParamGrads, Parameters, TrainView, ViewKind};
use crate::math::Matrix;
use crate::rng::{stream_rng, Rng, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub clip_norm: f64,
    pub lr_decay_factor: f64,
    pub lambda_audio: f64,
    pub lambda_video: f64,
    /// Probabilities of masking video, masking audio, and masking nothing.
    pub mask_probabilities: [f64; 3],
    pub arc_scale: f64,
    pub arc_margin: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 128,
            max_epochs: 10,
            clip_norm: 5.0,
            lr_decay_factor: 0.95,
            lambda_audio: 0.5,
            lambda_video: 0.5,
            mask_probabilities: [1.0 / 3.0; 3],
            arc_scale: DEFAULT_SCALE,
            arc_margin: DEFAULT_MARGIN,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    /// A zero learning rate is accepted so that a run can be replayed
    /// without moving any parameter.
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("lambda_audio", self.lambda_audio),
            ("lambda_video", self.lambda_video),
        ];
        for (field, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be finite and ≥ 0, got {v}")));
            }
        }
        for (field, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(field, format!("must lie in [0, 1), got {v}")));
            }
        }
        let positive = [
            ("eps", self.eps),
            ("clip_norm", self.clip_norm),
            ("arc_scale", self.arc_scale),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::config("lr_decay_factor", "must lie in (0, 1]"));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.arc_margin) {
            return Err(Error::config("arc_margin", "must lie in [0, π/2) radians"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be at least 1"));
        }
        let p = self.mask_probabilities;
        if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("mask_probabilities", format!("must be in [0, 1] and sum to 1, got {p:?}")));
        }
        Ok(())
    }
}

/// Which backbone output a training sample loses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskMode {
    MaskVideo,
    MaskAudio,
    None,
}

pub fn sample_mask_mode(probabilities: &[f64; 3], rng: &mut Rng) -> MaskMode {
    let u: f64 = rng.random();
    if u < probabilities[0] {
        MaskMode::MaskVideo
    } else if u < probabilities[0] + probabilities[1] {
        MaskMode::MaskAudio
    } else {
        MaskMode::None
    }
}

/// Copies of `audio` and `video` with masked rows replaced by zeros.
pub fn apply_mask_modes(audio: &Matrix, video: &Matrix, modes: &[MaskMode]) -> (Matrix, Matrix) {
    let mut a = audio.clone();
    let mut v = video.clone();
    for (i, mode) in modes.iter().enumerate() {
        match mode {
            MaskMode::MaskAudio => a.row_mut(i).fill(0.0),
            MaskMode::MaskVideo => v.row_mut(i).fill(0.0),
            MaskMode::None => {}
        }
    }
    (a, v)
}

/// Mean loss over one batch and its gradients.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    /// Fusion-head gradients followed by the arc-margin prototype gradient.
    pub grads: ParamGrads,
    pub views: Vec<TrainView>,
}

/// Mean-over-batch arc-margin loss. Mean and MLP heads score their fused
/// embedding; the multi-view head scores `λ_a·L(audio) + λ_v·L(video)`.
/// `modes` zeroes inputs before the head sees them.
pub fn compute_batch_loss(
    head: &FusionHead,
    arc: &ArcMarginHead,
    batch: &LabeledSet,
    modes: Option<&[MaskMode]>,
    dropout: &DropoutMasks,
    config: &TrainingConfig,
) -> Result<BatchLoss> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::DegenerateBatch("empty batch".into()));
    }
    let masked;
    let (audio, video) = match modes {
        Some(m) => {
            if m.len() != n {
                return Err(Error::shape("mask modes", n, m.len()));
            }
            masked = apply_mask_modes(&batch.audio, &batch.video, m);
            (&masked.0, &masked.1)
        }
        None => (&batch.audio, &batch.video),
    };
    let views = head.forward_train(audio, video, dropout)?;
    let mut loss = 0.0;
    let mut head_grads = ParamGrads::zeros_like(head);
    let mut proto = Matrix::zeros(arc.d_embed(), arc.n_classes());
    for view in &views {
        let lambda = match view.kind {
            ViewKind::Fused => 1.0,
            ViewKind::Single(Modality::Audio) => config.lambda_audio,
            ViewKind::Single(Modality::Video) => config.lambda_video,
        };
        let bl = arc.batch_loss_grad(&view.output, &batch.targets, lambda / n as f64)?;
        loss += bl.loss;
        head_grads.add_scaled(&head.backward(&view.cache, &bl.grad_embeddings)?.grads, 1.0);
        proto.add_assign(&bl.grad_prototypes);
    }
    head_grads.extend(ParamGrads(vec![proto.into_vec()]));
    Ok(BatchLoss {
        loss,
        grads: head_grads,
        views,
    })
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let total = grads.global_norm();
    if total > max_norm {
        grads.scale(max_norm / total);
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl AdamWState {
    pub fn new(sizes: &[usize]) -> Self {
        AdamWState {
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
        }
    }

    /// One decoupled-weight-decay Adam step (no amsgrad):
    /// `p ← p − lr·m̂/(√v̂ + eps) − lr·wd·p`.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &ParamGrads, lr: f64, config: &TrainingConfig) -> Result<()> {
        if params.len() != grads.0.len() || params.len() != self.first_moment.len() {
            return Err(Error::shape("optimizer tensors", self.first_moment.len(), params.len()));
        }
        for ((p, g), m) in params.iter().zip(&grads.0).zip(&self.first_moment) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::shape("optimizer tensor", m.len(), p.len()));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - config.beta1.powi(t);
        let bc2 = 1.0 - config.beta2.powi(t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(&grads.0)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for i in 0..p.len() {
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + config.eps) - lr * config.weight_decay * p[i];
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
    pub is_best: bool,
}

/// Learning rate for the next epoch: decayed unless the last epoch's
/// validation accuracy strictly beat every earlier one.
pub fn lr_schedule_update(history: &[EpochRecord], current_lr: f64, decay: f64) -> f64 {
    let Some((last, prior)) = history.split_last() else {
        return current_lr;
    };
    let best_prior = prior.iter().map(|r| r.val_accuracy).fold(f64::NEG_INFINITY, f64::max);
    if last.val_accuracy > best_prior {
        current_lr
    } else {
        current_lr * decay
    }
}

/// Fraction of samples whose highest-cosine prototype is their own class,
/// with both modalities present and the head in eval mode. An all-zero
/// embedding (possible behind a ReLU) counts as a miss.
pub fn validate_accuracy(head: &FusionHead, arc: &ArcMarginHead, set: &LabeledSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Degenerate("empty validation set".into()));
    }
    let emb = head.embed_batch(&set.audio, &set.video, Exposure::AudioVideo)?;
    let preds = crate::par::map_range(set.len(), |i| arc.predict(emb.row(i)).ok());
    let mut correct = 0usize;
    let mut degenerate = 0usize;
    for (p, &t) in preds.into_iter().zip(&set.targets) {
        match p {
            Some(p) if p == t => correct += 1,
            Some(_) => {}
            None => degenerate += 1,
        }
    }
    if degenerate > 0 {
        log::warn!("{degenerate} validation embeddings were degenerate and counted as misses");
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Minibatch index lists for one epoch. A trailing batch of one sample is
/// folded into the previous batch, since batch norm needs two rows.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().unwrap_or_default();
        if let Some(prev) = batches.last_mut() {
            prev.extend(tail);
        }
    }
    batches
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot from the epoch with the best validation accuracy.
    pub head: FusionHead,
    pub arc: ArcMarginHead,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best_record(&self) -> &EpochRecord {
        &self.records[self.best_epoch - 1]
    }
}

/// Runs `config.max_epochs` epochs of shuffled minibatch training starting
/// from `head` and `arc`.
pub fn train_run(
    mut head: FusionHead,
    mut arc: ArcMarginHead,
    train: &LabeledSet,
    val: &LabeledSet,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Degenerate("empty training set".into()));
    }
    if let Some(&t) = train.targets.iter().chain(&val.targets).find(|&&t| t >= arc.n_classes()) {
        return Err(Error::Label {
            label: t,
            n_classes: arc.n_classes(),
        });
    }
    let sizes: Vec<usize> = head
        .param_specs()
        .iter()
        .chain(&arc.param_specs())
        .map(|s| s.len())
        .collect();
    let mut opt = AdamWState::new(&sizes);
    let masked = head.kind() != HeadKind::MultiView;
    let mut lr = config.learning_rate;
    let mut records: Vec<EpochRecord> = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(usize, f64, FusionHead, ArcMarginHead)> = None;

    for epoch in 1..=config.max_epochs {
        let e = epoch as u64;
        let mut shuffle = stream_rng(config.seed, Stream::Shuffle, e);
        let mut masking = stream_rng(config.seed, Stream::Masking, e);
        let mut dropout = stream_rng(config.seed, Stream::Dropout, e);
        let mut total = 0.0;
        for idx in epoch_batches(train.len(), config.batch_size, &mut shuffle) {
            let batch = train.select(&idx);
            let modes: Option<Vec<MaskMode>> = masked.then(|| {
                (0..batch.len())
                    .map(|_| sample_mask_mode(&config.mask_probabilities, &mut masking))
                    .collect()
            });
            let masks = head.draw_masks(batch.len(), &mut dropout);
            let mut out = compute_batch_loss(&head, &arc, &batch, modes.as_deref(), &masks, config)?;
            if !out.loss.is_finite() {
                return Err(Error::Degenerate(format!("non-finite loss in epoch {epoch}")));
            }
            total += out.loss * batch.len() as f64;
            clip_global_norm(&mut out.grads, config.clip_norm);
            let params: Vec<&mut [f64]> = head.params_mut().into_iter().chain(arc.params_mut()).collect();
            opt.step(params, &out.grads, lr, config)?;
            head.commit_running_stats(&out.views);
        }
        let val_accuracy = validate_accuracy(&head, &arc, val)?;
        records.push(EpochRecord {
            epoch,
            loss: total / train.len() as f64,
            val_accuracy,
            lr,
            is_best: false,
        });
        log::info!(
            "epoch {epoch}: loss {:.5} val_acc {val_accuracy:.4} lr {lr:.3e}",
            total / train.len() as f64
        );
        if best.as_ref().is_none_or(|b| val_accuracy > b.1) {
            best = Some((epoch, val_accuracy, head.clone(), arc.clone()));
        }
        lr = lr_schedule_update(&records, lr, config.lr_decay_factor);
    }

    let (best_epoch, _, best_head, best_arc) = best.expect("at least one epoch");
    records[best_epoch - 1].is_best = true;
    Ok(TrainOutcome {
        head: best_head,
        arc: best_arc,
        records,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{class_labels, generate_identities, sample_dataset, DatasetConfig};
    use crate::fusion::{HeadConfig, ModalityInput};
    use crate::math::l2_normalize;
    use proptest::prelude::*;

    fn record(epoch: usize, acc: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            loss: 0.0,
            val_accuracy: acc,
            lr: 0.0,
            is_best: false,
        }
    }

    fn toy_set(n_ids: usize, per_id: usize, sigma: f64, seed: u64) -> LabeledSet {
        let c = DatasetConfig {
            n_identities: n_ids,
            samples_per_identity: per_id,
            audio_noise_sigma: sigma,
            video_noise_sigma: sigma,
            seed,
            ..DatasetConfig::default()
        };
        let s = sample_dataset(&generate_identities(&c).unwrap(), &c).unwrap();
        LabeledSet::new(&s, &class_labels(&s)).unwrap()
    }

    fn models(kind: HeadKind, classes: usize, dropout: f64, seed: u64) -> (FusionHead, ArcMarginHead) {
        let cfg = HeadConfig {
            dropout,
            ..HeadConfig::desk(kind)
        };
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let head = FusionHead::init(&cfg, &mut rng).unwrap();
        let arc = ArcMarginHead::init(cfg.d_embed, classes, DEFAULT_SCALE, DEFAULT_MARGIN, &mut rng).unwrap();
        (head, arc)
    }

    #[test]
    fn mask_mode_frequencies() {
        let mut rng = stream_rng(4, Stream::Masking, 0);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            match sample_mask_mode(&[1.0 / 3.0; 3], &mut rng) {
                MaskMode::MaskVideo => counts[0] += 1,
                MaskMode::MaskAudio => counts[1] += 1,
                MaskMode::None => counts[2] += 1,
            }
        }
        for c in counts {
            let f = c as f64 / 30_000.0;
            assert!((0.323..=0.343).contains(&f), "{counts:?}");
        }
        let draw = |seed| {
            let mut r = stream_rng(seed, Stream::Masking, 0);
            (0..50).map(|_| sample_mask_mode(&[1.0 / 3.0; 3], &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(draw(1), draw(1));
        let mut r = stream_rng(0, Stream::Masking, 0);
        assert!((0..1000).all(|_| sample_mask_mode(&[1.0, 0.0, 0.0], &mut r) == MaskMode::MaskVideo));
    }

    #[test]
    fn masking_zeroes_rows() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let v = Matrix::from_rows(&[[7.0], [8.0], [9.0]]).unwrap();
        let (ma, mv) = apply_mask_modes(&a, &v, &[MaskMode::MaskAudio, MaskMode::MaskVideo, MaskMode::None]);
        assert_eq!(ma.as_slice(), &[0.0, 0.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(mv.as_slice(), &[7.0, 0.0, 9.0]);
    }

    #[test]
    fn multiview_loss_is_weighted_sum_of_single_views() {
        let set = toy_set(4, 5, 0.3, 1);
        let (head, arc) = models(HeadKind::MultiView, 4, 0.1, 1);
        let masks = head.draw_masks(set.len(), &mut stream_rng(1, Stream::Dropout, 0));
        let single = |la: f64, lv: f64| {
            let cfg = TrainingConfig {
                lambda_audio: la,
                lambda_video: lv,
                ..TrainingConfig::default()
            };
            compute_batch_loss(&head, &arc, &set, None, &masks, &cfg).unwrap().loss
        };
        let audio = single(1.0, 0.0);
        let video = single(0.0, 1.0);
        assert!((single(0.5, 0.5) - (0.5 * audio + 0.5 * video)).abs() < 1e-10);

        // λ = (1, 0) is the audio-only arc-margin loss
        let FusionHead::MultiView(h) = &head else { unreachable!() };
        let DropoutMasks::MultiView { audio: ma, .. } = &masks else { unreachable!() };
        let emb = h.embed_batch(Modality::Audio, &set.audio, Some(ma)).unwrap().0;
        let oracle: f64 = (0..set.len())
            .map(|i| {
                let t = set.targets[i];
                if crate::math::norm(emb.row(i)) > 0.0 {
                    arc.loss(emb.row(i), t).unwrap().loss
                } else {
                    // an all-zero ReLU output is scored with every cosine at zero
                    let mut logits = vec![0.0; arc.n_classes()];
                    logits[t] = arc.scale * (std::f64::consts::FRAC_PI_2 + arc.margin).cos();
                    crate::arc_margin::softmax_cross_entropy(&logits, t).unwrap()
                }
            })
            .sum::<f64>()
            / set.len() as f64;
        assert!((audio - oracle).abs() < 1e-12);
    }

    #[test]
    fn mean_loss_matches_composed_oracle() {
        let set = toy_set(3, 4, 0.3, 2);
        let (head, arc) = models(HeadKind::Mean, 3, 0.0, 2);
        let masks = head.draw_masks(set.len(), &mut stream_rng(2, Stream::Dropout, 0));
        let modes = vec![MaskMode::None; set.len()];
        let got = compute_batch_loss(&head, &arc, &set, Some(&modes), &masks, &TrainingConfig::default())
            .unwrap()
            .loss;
        let oracle: f64 = (0..set.len())
            .map(|i| {
                let e = head.embed(&ModalityInput::both(set.audio.row(i), set.video.row(i))).unwrap();
                arc.loss(&e, set.targets[i]).unwrap().loss
            })
            .sum::<f64>()
            / set.len() as f64;
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn duplicated_sample_keeps_mean_loss() {
        let set = toy_set(2, 2, 0.3, 3);
        let (head, arc) = models(HeadKind::Mean, 2, 0.0, 3);
        let cfg = TrainingConfig::default();
        let loss = |b: &LabeledSet| {
            let m = head.draw_masks(b.len(), &mut stream_rng(0, Stream::Dropout, 0));
            compute_batch_loss(&head, &arc, b, None, &m, &cfg).unwrap().loss
        };
        let one = set.select(&[1]);
        let two = set.select(&[1, 1]);
        assert!((loss(&one) - loss(&two)).abs() < 1e-14);
    }

    #[test]
    fn invalid_label_is_rejected() {
        let mut set = toy_set(2, 2, 0.3, 3);
        set.targets[0] = 7;
        let (head, arc) = models(HeadKind::Mean, 2, 0.0, 3);
        let m = head.draw_masks(set.len(), &mut stream_rng(0, Stream::Dropout, 0));
        let err = compute_batch_loss(&head, &arc, &set, None, &m, &TrainingConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Label { label: 7, .. }));
    }

    #[test]
    fn clipping_examples() {
        let mut g = ParamGrads(vec![vec![3.0, 4.0]]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g.0[0][0] - 0.6).abs() < 1e-15 && (g.0[0][1] - 0.8).abs() < 1e-15);
        let mut small = ParamGrads(vec![vec![3.0], vec![0.0]]);
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small.0, vec![vec![3.0], vec![0.0]]);
        let mut zero = ParamGrads(vec![vec![0.0; 3]]);
        clip_global_norm(&mut zero, 5.0);
        assert!(zero.is_zero());
    }

    proptest! {
        #[test]
        fn clipping_never_increases_norm(
            g in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 1..6), 1..4),
            max in 0.01f64..20.0,
        ) {
            let mut grads = ParamGrads(g);
            let before = grads.global_norm();
            clip_global_norm(&mut grads, max);
            let after = grads.global_norm();
            prop_assert!(after <= before + 1e-12);
            prop_assert!(after <= max + 1e-9);
        }
    }

    fn scalar_adamw(p: f64, grads: &[f64], lr: f64, wd: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut p, mut m, mut v) = (p, 0.0, 0.0);
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powf(t));
            let vh = v / (1.0 - b2.powf(t));
            p -= lr * mh / (vh.sqrt() + eps) + lr * wd * p;
        }
        p
    }

    #[test]
    fn adamw_examples() {
        let cfg = TrainingConfig {
            weight_decay: 0.0,
            ..TrainingConfig::default()
        };
        let mut p = vec![0.7, -2.0];
        let mut st = AdamWState::new(&[2]);
        st.step(vec![&mut p], &ParamGrads(vec![vec![0.0, 0.0]]), 1e-3, &cfg).unwrap();
        assert_eq!(p, vec![0.7, -2.0]);

        let cfg = TrainingConfig::default();
        let mut p = vec![1.0];
        let mut st = AdamWState::new(&[1]);
        st.step(vec![&mut p], &ParamGrads(vec![vec![0.0]]), 1e-3, &cfg).unwrap();
        assert!((p[0] - 0.99999).abs() < 1e-15);

        let mut p = vec![0.0];
        let mut st = AdamWState::new(&[1]);
        st.step(vec![&mut p], &ParamGrads(vec![vec![1.0]]), 1e-3, &cfg).unwrap();
        assert!((p[0] - scalar_adamw(0.0, &[1.0], 1e-3, 0.01)).abs() < 1e-18);
        assert!((p[0] + 1e-3).abs() < 1e-10);

        let gs = [0.3, -1.2, 0.05, 2.0, -0.7];
        let mut p = vec![0.4];
        let mut st = AdamWState::new(&[1]);
        for g in gs {
            st.step(vec![&mut p], &ParamGrads(vec![vec![g]]), 1e-2, &cfg).unwrap();
        }
        assert!((p[0] - scalar_adamw(0.4, &gs, 1e-2, 0.01)).abs() < 1e-14);
        assert_eq!(st.step_count, 5);

        assert!(st.step(vec![&mut p], &ParamGrads(vec![vec![1.0, 2.0]]), 1e-3, &cfg).is_err());
    }

    #[test]
    fn lr_schedule_examples() {
        assert_eq!(lr_schedule_update(&[record(1, 0.5), record(2, 0.6)], 1e-3, 0.95), 1e-3);
        assert_eq!(lr_schedule_update(&[record(1, 0.5), record(2, 0.5)], 1e-3, 0.95), 1e-3 * 0.95);
        let mut lr = 1e-3;
        let mut hist = vec![record(1, 0.7)];
        for e in 2..=4 {
            hist.push(record(e, 0.6));
            lr = lr_schedule_update(&hist, lr, 0.95);
        }
        assert!((lr - 0.000857375).abs() < 1e-12);
        assert_eq!(lr_schedule_update(&[record(1, 0.0)], 1e-3, 0.95), 1e-3);
    }

    #[test]
    fn accuracy_with_prototypes_at_class_embeddings() {
        let set = toy_set(5, 4, 0.0, 5);
        let (head, _) = models(HeadKind::Mean, 5, 0.0, 5);
        let emb = head.embed_batch(&set.audio, &set.video, Exposure::AudioVideo).unwrap();
        let mut protos = Matrix::zeros(head.d_embed(), 5);
        for (i, &t) in set.targets.iter().enumerate() {
            for (d, x) in l2_normalize(emb.row(i)).unwrap().iter().enumerate() {
                protos.set(d, t, *x);
            }
        }
        let arc = ArcMarginHead::new(protos, DEFAULT_SCALE, DEFAULT_MARGIN).unwrap();
        assert_eq!(validate_accuracy(&head, &arc, &set).unwrap(), 1.0);

        let one = toy_set(1, 6, 0.3, 5);
        let (h1, a1) = models(HeadKind::Mlp, 1, 0.0, 5);
        assert_eq!(validate_accuracy(&h1, &a1, &one).unwrap(), 1.0);
    }

    #[test]
    fn random_prototypes_give_chance_accuracy() {
        let set = toy_set(10, 200, 0.5, 6);
        let mut total = 0.0;
        let reps = 20;
        for seed in 0..reps {
            let (head, arc) = models(HeadKind::Mean, 10, 0.0, 100 + seed);
            let mut shuffled = set.clone();
            shuffled.targets.shuffle(&mut stream_rng(seed, Stream::Shuffle, 0));
            total += validate_accuracy(&head, &arc, &shuffled).unwrap();
        }
        let mean = total / reps as f64;
        // 3σ binomial bound on the pooled rate
        let sigma = (0.1 * 0.9 / (2000.0 * reps as f64)).sqrt();
        assert!((mean - 0.1).abs() < 3.0 * sigma, "{mean}");
    }

    #[test]
    fn batches_fold_single_tail() {
        let mut rng = stream_rng(0, Stream::Shuffle, 0);
        let b = epoch_batches(257, 128, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![128, 129]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..257).collect::<Vec<_>>());
        assert_eq!(epoch_batches(1, 128, &mut rng).len(), 1);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let set = toy_set(4, 6, 0.3, 7);
        for kind in HeadKind::ALL {
            let (head, arc) = models(kind, 4, 0.1, 7);
            let cfg = TrainingConfig {
                learning_rate: 0.0,
                max_epochs: 2,
                batch_size: 8,
                ..TrainingConfig::default()
            };
            let out = train_run(head.clone(), arc.clone(), &set, &set, &cfg).unwrap();
            assert_eq!(out.head.params(), head.params());
            assert_eq!(out.arc, arc);
        }
    }

    #[test]
    fn training_is_deterministic_and_records_are_consistent() {
        let set = toy_set(6, 10, 0.4, 8);
        let cfg = TrainingConfig {
            max_epochs: 6,
            batch_size: 16,
            ..TrainingConfig::default()
        };
        for kind in HeadKind::ALL {
            let (head, arc) = models(kind, 6, 0.1, 8);
            let a = train_run(head.clone(), arc.clone(), &set, &set, &cfg).unwrap();
            let b = train_run(head, arc, &set, &set, &cfg).unwrap();
            assert_eq!(a.records, b.records);
            assert_eq!(a.head, b.head);
            assert_eq!(a.records.iter().filter(|r| r.is_best).count(), 1);
            for (i, w) in a.records.windows(2).enumerate() {
                assert!(w[1].lr <= w[0].lr);
                let best_prior = a.records[..i].iter().map(|r| r.val_accuracy).fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(w[1].lr < w[0].lr, w[0].val_accuracy <= best_prior);
            }
            let best = a.best_record();
            assert!(a.records.iter().all(|r| r.val_accuracy <= best.val_accuracy));
            assert!(a.records[..best.epoch - 1].iter().all(|r| r.val_accuracy < best.val_accuracy));
        }
    }

    #[test]
    fn separable_data_reaches_high_accuracy() {
        let all = toy_set(10, 60, 0.1, 9);
        let train = all.select(&(0..600).filter(|i| i % 5 != 0).collect::<Vec<_>>());
        let val = all.select(&(0..600).filter(|i| i % 5 == 0).collect::<Vec<_>>());
        let cfg = TrainingConfig {
            batch_size: 16,
            ..TrainingConfig::default()
        };
        for kind in HeadKind::ALL {
            let (head, arc) = models(kind, 10, 0.1, 9);
            let out = train_run(head, arc, &train, &val, &cfg).unwrap();
            assert!(out.records.last().unwrap().val_accuracy > 0.9, "{kind}: {:?}", out.records);
        }
    }

    /// The objective is the train-mode batch loss on the repeated sample
    /// under a fixed dropout draw. Eval-mode batch norm is meaningless here:
    /// the running variance of a constant batch decays towards zero.
    #[test]
    fn one_epoch_on_a_repeated_sample_lowers_its_loss() {
        let base = toy_set(3, 2, 0.3, 10);
        let repeated = base.select(&[2; 16]);
        let cfg = TrainingConfig {
            batch_size: 4,
            max_epochs: 1,
            ..TrainingConfig::default()
        };
        for kind in HeadKind::ALL {
            let (head, arc) = models(kind, 3, 0.1, 10);
            let objective = |h: &FusionHead, a: &ArcMarginHead| {
                let masks = h.draw_masks(repeated.len(), &mut stream_rng(77, Stream::Dropout, 0));
                compute_batch_loss(h, a, &repeated, None, &masks, &cfg).unwrap().loss
            };
            let before = objective(&head, &arc);
            let out = train_run(head, arc, &repeated, &repeated, &cfg).unwrap();
            let after = objective(&out.head, &out.arc);
            assert!(after < before, "{kind}: {before} -> {after}");
        }
    }
}
