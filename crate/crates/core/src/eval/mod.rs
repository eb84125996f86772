//! Verification protocol under six modality modes, and the geometry
//! diagnostics of the learned embedding space.

mod boxplot;
mod eer;
mod geometry;

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use boxplot::{boxplot_stats, quantile_sorted, BoxplotStats};
pub use eer::{compute_eer, EerResult};
pub use geometry::{
    audio_video_angles, centroid_angle_matrix, silhouette_score, single_modality_embeddings, within_identity_angles,
    AngleFamily, AngleGroup, AngleReport, CentroidAngles, Distance,
};

use crate::data::{sample_matrices, Sample};
use crate::fusion::{Exposure, FusionHead, HeadKind, Modality, ModalityInput};
use crate::math::{angle_deg, centroid, cosine_similarity, Matrix};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// What each side of a verification trial exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModalityMode {
    #[serde(rename = "AVxAV")]
    AvAv,
    #[serde(rename = "AxA")]
    AA,
    #[serde(rename = "VxV")]
    VV,
    #[serde(rename = "AVxA")]
    AvA,
    #[serde(rename = "AVxV")]
    AvV,
    #[serde(rename = "AxV")]
    AV,
}

impl ModalityMode {
    pub const ALL: [ModalityMode; 6] = [
        ModalityMode::AvAv,
        ModalityMode::AA,
        ModalityMode::VV,
        ModalityMode::AvA,
        ModalityMode::AvV,
        ModalityMode::AV,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModalityMode::AvAv => "AVxAV",
            ModalityMode::AA => "AxA",
            ModalityMode::VV => "VxV",
            ModalityMode::AvA => "AVxA",
            ModalityMode::AvV => "AVxV",
            ModalityMode::AV => "AxV",
        }
    }

    /// Exposures of the left and right side. Mixed modes put the full side
    /// on the left; cross-modal trials put audio on the left.
    pub fn exposures(self) -> (Exposure, Exposure) {
        use Exposure::*;
        match self {
            ModalityMode::AvAv => (AudioVideo, AudioVideo),
            ModalityMode::AA => (Audio, Audio),
            ModalityMode::VV => (Video, Video),
            ModalityMode::AvA => (AudioVideo, Audio),
            ModalityMode::AvV => (AudioVideo, Video),
            ModalityMode::AV => (Audio, Video),
        }
    }
}

impl fmt::Display for ModalityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModalityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModalityMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("mode", format!("unknown modality mode {s:?}")))
    }
}

/// A verification pair, as indices into the sample list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub left: usize,
    pub right: usize,
    pub target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSet {
    pub mode: ModalityMode,
    pub trials: Vec<Trial>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub n_positive: usize,
    pub n_negative: usize,
    pub seed: u64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            n_positive: 500,
            n_negative: 500,
            seed: 0,
        }
    }
}

/// Exactly `n_positive` same-identity and `n_negative` cross-identity
/// pairs, without self-pairs or repeated pairs. Pairs depend only on the
/// seed, so every mode sees the same pairs.
pub fn build_trials(
    samples: &[Sample],
    mode: ModalityMode,
    n_positive: usize,
    n_negative: usize,
    seed: u64,
) -> Result<TrialSet> {
    let groups = geometry::identity_rows(samples);
    if groups.len() < 2 {
        return Err(Error::config("trials", "verification trials need at least two identities"));
    }
    let mut rng = stream_rng(seed, Stream::Trials, 0);

    let mut positives: Vec<(usize, usize)> = Vec::new();
    for rows in groups.values() {
        for (k, &i) in rows.iter().enumerate() {
            positives.extend(rows[k + 1..].iter().map(|&j| (i, j)));
        }
    }
    if positives.len() < n_positive {
        return Err(Error::config(
            "n_positive",
            format!("{n_positive} requested, only {} same-identity pairs exist", positives.len()),
        ));
    }
    positives.shuffle(&mut rng);
    positives.truncate(n_positive);

    let n = samples.len();
    let total_pairs = n * (n - 1) / 2;
    let same_pairs: usize = groups.values().map(|r| r.len() * (r.len() - 1) / 2).sum();
    let cross = total_pairs - same_pairs;
    if cross < n_negative {
        return Err(Error::config(
            "n_negative",
            format!("{n_negative} requested, only {cross} cross-identity pairs exist"),
        ));
    }
    let differ = |i: usize, j: usize| samples[i].identity_id != samples[j].identity_id;
    let negatives: Vec<(usize, usize)> = if 2 * n_negative <= cross {
        let mut seen = HashSet::with_capacity(n_negative);
        let mut out = Vec::with_capacity(n_negative);
        while out.len() < n_negative {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if differ(i, j) && seen.insert((i.min(j), i.max(j))) {
                out.push((i.min(j), i.max(j)));
            }
        }
        out
    } else {
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| differ(i, j))
            .collect();
        all.shuffle(&mut rng);
        all.truncate(n_negative);
        all
    };

    let mut trials: Vec<Trial> = positives
        .into_iter()
        .map(|p| (p, true))
        .chain(negatives.into_iter().map(|p| (p, false)))
        .map(|((i, j), target)| {
            let (left, right) = if rng.random::<bool>() { (i, j) } else { (j, i) };
            Trial { left, right, target }
        })
        .collect();
    trials.shuffle(&mut rng);
    Ok(TrialSet { mode, trials })
}

/// Eval-mode embedding of one sample with the given modalities exposed.
pub fn fused_embedding(head: &FusionHead, sample: &Sample, exposure: Exposure) -> Result<Vec<f64>> {
    head.embed(&ModalityInput::exposed(&sample.audio, &sample.video, exposure))
}

/// Cosine similarity of the two sides' embeddings.
pub fn score_trial(head: &FusionHead, samples: &[Sample], trial: &Trial, mode: ModalityMode) -> Result<f64> {
    let (le, re) = mode.exposures();
    let get = |i: usize| {
        samples
            .get(i)
            .ok_or_else(|| Error::Degenerate(format!("trial refers to sample {i} of {}", samples.len())))
    };
    let l = fused_embedding(head, get(trial.left)?, le)?;
    let r = fused_embedding(head, get(trial.right)?, re)?;
    cosine_similarity(&l, &r)
}

/// Embeddings of every sample under each exposure, computed once per
/// evaluation.
struct EmbeddingCache {
    audio_video: Matrix,
    audio: Matrix,
    video: Matrix,
}

impl EmbeddingCache {
    fn new(head: &FusionHead, samples: &[Sample]) -> Result<Self> {
        let (a, v) = sample_matrices(samples, head.d_audio(), head.d_video())?;
        Ok(EmbeddingCache {
            audio_video: head.embed_batch(&a, &v, Exposure::AudioVideo)?,
            audio: head.embed_batch(&a, &v, Exposure::Audio)?,
            video: head.embed_batch(&a, &v, Exposure::Video)?,
        })
    }

    fn get(&self, exposure: Exposure) -> &Matrix {
        match exposure {
            Exposure::AudioVideo => &self.audio_video,
            Exposure::Audio => &self.audio,
            Exposure::Video => &self.video,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeScores {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    /// Trials dropped because one side embedded to the zero vector.
    pub skipped: usize,
}

fn score_with_cache(cache: &EmbeddingCache, set: &TrialSet) -> ModeScores {
    let (le, re) = set.mode.exposures();
    let (l, r) = (cache.get(le), cache.get(re));
    let raw = crate::par::map_range(set.trials.len(), |k| {
        let t = &set.trials[k];
        cosine_similarity(l.row(t.left), r.row(t.right)).ok()
    });
    let mut out = ModeScores {
        scores: Vec::with_capacity(raw.len()),
        labels: Vec::with_capacity(raw.len()),
        skipped: 0,
    };
    for (s, t) in raw.into_iter().zip(&set.trials) {
        match s {
            Some(s) => {
                out.scores.push(s);
                out.labels.push(t.target);
            }
            None => out.skipped += 1,
        }
    }
    out
}

/// Scores for every trial of `set`. Trials touching a zero embedding are
/// skipped and counted.
pub fn score_trials(head: &FusionHead, samples: &[Sample], set: &TrialSet) -> Result<ModeScores> {
    if let Some(t) = set.trials.iter().find(|t| t.left.max(t.right) >= samples.len()) {
        return Err(Error::Degenerate(format!("trial refers to sample {} of {}", t.left.max(t.right), samples.len())));
    }
    Ok(score_with_cache(&EmbeddingCache::new(head, samples)?, set))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEer {
    pub mode: ModalityMode,
    #[serde(flatten)]
    pub result: EerResult,
    pub skipped_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteScores {
    pub audio: f64,
    pub video: f64,
    pub distance: Distance,
}

/// Everything measured on one trained head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub head_kind: HeadKind,
    pub eer: Vec<ModeEer>,
    pub audio_video: AngleReport,
    /// Audio then video.
    pub within_identity: Vec<AngleReport>,
    /// Audio then video.
    pub between_identity: Vec<CentroidAngles>,
    pub silhouette: SilhouetteScores,
    pub warnings: Vec<String>,
}

impl DiagnosticsReport {
    pub fn eer_for(&self, mode: ModalityMode) -> Option<f64> {
        self.eer.iter().find(|e| e.mode == mode).map(|e| e.result.eer)
    }

    /// Every angle family as identity-grouped reports, in a fixed order.
    pub fn angle_reports(&self) -> Vec<AngleReport> {
        let mut out = vec![self.audio_video.clone()];
        out.extend(self.within_identity.iter().cloned());
        out.extend(self.between_identity.iter().map(CentroidAngles::as_report));
        out
    }
}

fn silhouette_of(emb: &Matrix, samples: &[Sample], distance: Distance, modality: Modality, warnings: &mut Vec<String>) -> Result<f64> {
    let labels_of = crate::data::class_labels(samples);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if crate::math::norm(emb.row(i)) > 0.0 {
            rows.push(emb.row(i));
            labels.push(labels_of.binary_search(&s.identity_id).unwrap_or_default());
        }
    }
    let dropped = samples.len() - rows.len();
    if dropped > 0 {
        warnings.push(format!("silhouette ({modality}): {dropped} zero embeddings skipped"));
    }
    if rows.is_empty() {
        warnings.push(format!("silhouette ({modality}): no usable embeddings, reported as 0"));
        return Ok(0.0);
    }
    silhouette_score(&Matrix::from_rows(&rows)?, &labels, distance)
}

/// All six EERs, the three angle families and per-modality silhouettes. A
/// mode whose trials all hit zero embeddings is left out with a warning.
pub fn diagnose(head: &FusionHead, samples: &[Sample], trials: &TrialConfig, distance: Distance) -> Result<DiagnosticsReport> {
    let cache = EmbeddingCache::new(head, samples)?;
    let mut warnings = Vec::new();
    let mut eer = Vec::with_capacity(6);
    for mode in ModalityMode::ALL {
        let set = build_trials(samples, mode, trials.n_positive, trials.n_negative, trials.seed)?;
        let scored = score_with_cache(&cache, &set);
        if scored.skipped > 0 {
            warnings.push(format!("{mode}: {} trials skipped (zero embedding)", scored.skipped));
        }
        match compute_eer(&scored.scores, &scored.labels) {
            Ok(result) => eer.push(ModeEer {
                mode,
                result,
                skipped_trials: scored.skipped,
            }),
            Err(e) if scored.skipped > 0 => warnings.push(format!("{mode}: no EER ({e})")),
            Err(e) => return Err(e),
        }
    }

    let audio_video = audio_video_angles(head, samples)?;
    let mut within_identity = Vec::with_capacity(2);
    let mut between_identity = Vec::with_capacity(2);
    for m in [Modality::Audio, Modality::Video] {
        let emb = cache.get(Exposure::single(m));
        within_identity.push(geometry::within_identity_from_embeddings(emb, samples, m));
        between_identity.push(geometry::centroid_angles_from_embeddings(emb, samples, m)?);
    }
    for r in std::iter::once(&audio_video).chain(&within_identity) {
        if r.skipped > 0 {
            warnings.push(format!(
                "{} angles{}: {} skipped (zero embedding)",
                r.family.name(),
                r.modality.map(|m| format!(" ({m})")).unwrap_or_default(),
                r.skipped
            ));
        }
    }
    for c in &between_identity {
        if !c.skipped.is_empty() {
            warnings.push(format!("{} centroids ({}) are zero and skipped", c.skipped.len(), c.modality));
        }
    }
    let silhouette = SilhouetteScores {
        audio: silhouette_of(&cache.audio, samples, distance, Modality::Audio, &mut warnings)?,
        video: silhouette_of(&cache.video, samples, distance, Modality::Video, &mut warnings)?,
        distance,
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(DiagnosticsReport {
        head_kind: head.kind(),
        eer,
        audio_video,
        within_identity,
        between_identity,
        silhouette,
        warnings,
    })
}

/// [`diagnose`] with cosine-distance silhouettes.
pub fn run_full_evaluation(head: &FusionHead, samples: &[Sample], trials: &TrialConfig) -> Result<DiagnosticsReport> {
    diagnose(head, samples, trials, Distance::Cosine)
}

/// Where the mean-fusion head puts its missing-audio representation,
/// relative to the audio-branch class centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullProbe {
    /// Angle from the null-audio output to the centroid of class centroids.
    pub null_angle: f64,
    /// Median angle from the null-audio output to each class centroid.
    pub median_class_angle: f64,
    pub n_classes: usize,
}

impl NullProbe {
    pub fn supports_hypothesis(&self) -> bool {
        self.null_angle < self.median_class_angle
    }
}

/// Compares the audio projection of a zero input with the centroids of the
/// projected audio inputs of each identity.
pub fn null_representation_probe(head: &FusionHead, samples: &[Sample]) -> Result<NullProbe> {
    let FusionHead::Mean(h) = head else {
        return Err(Error::HeadKind {
            expected: HeadKind::Mean.to_string(),
            found: head.kind().to_string(),
        });
    };
    let null = h.proj_audio.forward_vec(&vec![0.0; h.d_audio()])?;
    let (audio, _) = sample_matrices(samples, head.d_audio(), head.d_video())?;
    let projected = h.proj_audio.forward(&audio)?;
    let mut class_centroids = Vec::new();
    for rows in geometry::identity_rows(samples).values() {
        class_centroids.push(centroid(&rows.iter().map(|&i| projected.row(i)).collect::<Vec<_>>())?);
    }
    if class_centroids.len() < 2 {
        return Err(Error::Degenerate("null probe needs at least two identities".into()));
    }
    let grand = centroid(&class_centroids)?;
    let mut angles = class_centroids
        .iter()
        .map(|c| angle_deg(&null, c))
        .collect::<Result<Vec<_>>>()?;
    angles.sort_by(f64::total_cmp);
    Ok(NullProbe {
        null_angle: angle_deg(&null, &grand)?,
        median_class_angle: quantile_sorted(&angles, 0.5),
        n_classes: class_centroids.len(),
    })
}
