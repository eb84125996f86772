use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::fusion::{Exposure, FusionHead, Modality};
use crate::math::{angle_deg, centroid, dot, norm, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleFamily {
    AudioVideo,
    WithinIdentity,
    BetweenIdentity,
}

impl AngleFamily {
    pub fn name(self) -> &'static str {
        match self {
            AngleFamily::AudioVideo => "audio_video",
            AngleFamily::WithinIdentity => "within_identity",
            AngleFamily::BetweenIdentity => "between_identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleGroup {
    pub identity: String,
    pub angles: Vec<f64>,
}

/// Angles in degrees, grouped by identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub family: AngleFamily,
    pub modality: Option<Modality>,
    pub groups: Vec<AngleGroup>,
    /// Angles that could not be formed because an embedding was zero.
    pub skipped: usize,
}

impl AngleReport {
    pub fn all_angles(&self) -> Vec<f64> {
        self.groups.iter().flat_map(|g| g.angles.iter().copied()).collect()
    }
}

/// Pairwise angles between identity centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidAngles {
    pub modality: Modality,
    pub identities: Vec<String>,
    pub degrees: Matrix,
    /// Identities left out because their centroid was the zero vector.
    pub skipped: Vec<String>,
}

impl CentroidAngles {
    /// Row `i` without the diagonal, as an angle group per identity.
    pub fn as_report(&self) -> AngleReport {
        let groups = self
            .identities
            .iter()
            .enumerate()
            .map(|(i, id)| AngleGroup {
                identity: id.clone(),
                angles: (0..self.identities.len()).filter(|&j| j != i).map(|j| self.degrees.get(i, j)).collect(),
            })
            .collect();
        AngleReport {
            family: AngleFamily::BetweenIdentity,
            modality: Some(self.modality),
            groups,
            skipped: self.skipped.len(),
        }
    }
}

/// Rows of `samples` grouped by identity, in identifier order.
pub(crate) fn identity_rows(samples: &[Sample]) -> BTreeMap<&str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.identity_id.as_str()).or_default().push(i);
    }
    groups
}

/// Eval-mode embeddings of every sample with only `modality` exposed.
pub fn single_modality_embeddings(head: &FusionHead, samples: &[Sample], modality: Modality) -> Result<Matrix> {
    let (audio, video) = crate::data::sample_matrices(samples, head.d_audio(), head.d_video())?;
    head.embed_batch(&audio, &video, Exposure::single(modality))
}

pub fn audio_video_angles(head: &FusionHead, samples: &[Sample]) -> Result<AngleReport> {
    if samples.is_empty() {
        return Err(Error::Degenerate("no samples for audio-video angles".into()));
    }
    let ea = single_modality_embeddings(head, samples, Modality::Audio)?;
    let ev = single_modality_embeddings(head, samples, Modality::Video)?;
    let mut skipped = 0;
    let groups = identity_rows(samples)
        .into_iter()
        .map(|(id, rows)| AngleGroup {
            identity: id.to_string(),
            angles: rows
                .iter()
                .filter_map(|&i| {
                    let a = angle_deg(ea.row(i), ev.row(i)).ok();
                    skipped += a.is_none() as usize;
                    a
                })
                .collect(),
        })
        .collect();
    Ok(AngleReport {
        family: AngleFamily::AudioVideo,
        modality: None,
        groups,
        skipped,
    })
}

/// Angles for every unordered pair of samples within each identity.
pub fn within_identity_angles(head: &FusionHead, samples: &[Sample], modality: Modality) -> Result<AngleReport> {
    let rows = identity_rows(samples);
    if rows.values().all(|r| r.len() < 2) {
        return Err(Error::Degenerate("no identity has two samples".into()));
    }
    let emb = single_modality_embeddings(head, samples, modality)?;
    Ok(within_identity_from_embeddings(&emb, samples, modality))
}

pub(crate) fn within_identity_from_embeddings(emb: &Matrix, samples: &[Sample], modality: Modality) -> AngleReport {
    let mut skipped = 0;
    let groups = identity_rows(samples)
        .into_iter()
        .map(|(id, rows)| {
            let mut angles = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
            for (k, &i) in rows.iter().enumerate() {
                for &j in &rows[k + 1..] {
                    match angle_deg(emb.row(i), emb.row(j)) {
                        Ok(a) => angles.push(a),
                        Err(_) => skipped += 1,
                    }
                }
            }
            AngleGroup {
                identity: id.to_string(),
                angles,
            }
        })
        .collect();
    AngleReport {
        family: AngleFamily::WithinIdentity,
        modality: Some(modality),
        groups,
        skipped,
    }
}

pub fn centroid_angle_matrix(head: &FusionHead, samples: &[Sample], modality: Modality) -> Result<CentroidAngles> {
    let emb = single_modality_embeddings(head, samples, modality)?;
    centroid_angles_from_embeddings(&emb, samples, modality)
}

pub(crate) fn centroid_angles_from_embeddings(emb: &Matrix, samples: &[Sample], modality: Modality) -> Result<CentroidAngles> {
    let rows = identity_rows(samples);
    if rows.len() < 2 {
        return Err(Error::Degenerate("centroid angles need at least two identities".into()));
    }
    let mut identities = Vec::new();
    let mut centroids = Vec::new();
    let mut skipped = Vec::new();
    for (id, r) in rows {
        let c = centroid(&r.iter().map(|&i| emb.row(i)).collect::<Vec<_>>())?;
        if norm(&c) > 0.0 {
            identities.push(id.to_string());
            centroids.push(c);
        } else {
            skipped.push(id.to_string());
        }
    }
    let n = centroids.len();
    let mut degrees = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let a = angle_deg(&centroids[i], &centroids[j])?;
            degrees.set(i, j, a);
            degrees.set(j, i, a);
        }
    }
    Ok(CentroidAngles {
        modality,
        identities,
        degrees,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    Cosine,
    Euclidean,
}

/// Mean silhouette `(b − a)/max(a, b)` over all points. Members of
/// singleton clusters score 0, as does a point with `a = b = 0`.
pub fn silhouette_score(points: &Matrix, labels: &[usize], distance: Distance) -> Result<f64> {
    if points.rows() != labels.len() {
        return Err(Error::shape("silhouette labels", points.rows(), labels.len()));
    }
    let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_clusters];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Degenerate("silhouette needs at least two clusters".into()));
    }
    let prepared: Matrix = match distance {
        Distance::Euclidean => points.clone(),
        Distance::Cosine => {
            let mut m = points.clone();
            for r in 0..m.rows() {
                let v = crate::math::l2_normalize(points.row(r))?;
                m.row_mut(r).copy_from_slice(&v);
            }
            m
        }
    };
    let dist = |i: usize, j: usize| match distance {
        Distance::Cosine => (1.0 - dot(prepared.row(i), prepared.row(j))).max(0.0),
        Distance::Euclidean => prepared
            .row(i)
            .iter()
            .zip(prepared.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
    };
    let per_point = crate::par::map_range(labels.len(), |i| {
        let own = labels[i];
        if sizes[own] < 2 {
            return 0.0;
        }
        let mut sums = vec![0.0; n_clusters];
        for j in 0..labels.len() {
            if j != i {
                sums[labels[j]] += dist(i, j);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..n_clusters)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m == 0.0 {
            0.0
        } else {
            (b - a) / m
        }
    });
    Ok(per_point.iter().sum::<f64>() / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{Dropout, LinearLayer, MeanFusionHead, MultiViewHead};
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn sample(id: &str, k: usize, audio: &[f64], video: &[f64]) -> Sample {
        Sample {
            identity_id: id.into(),
            sample_id: format!("{id}-{k}"),
            audio: audio.to_vec(),
            video: video.to_vec(),
        }
    }

    fn identity_mean_head() -> FusionHead {
        let eye = || LinearLayer::new(Matrix::identity(2), vec![0.0; 2]).unwrap();
        FusionHead::Mean(MeanFusionHead::new(eye(), eye(), Dropout::default()).unwrap())
    }

    #[test]
    fn collapsed_head_gives_zero_audio_video_angles() {
        let c = || LinearLayer::new(Matrix::zeros(2, 2), vec![1.0, 1.0]).unwrap();
        let head = FusionHead::Mean(MeanFusionHead::new(c(), c(), Dropout::default()).unwrap());
        let s = vec![sample("a", 0, &[1.0, 2.0], &[3.0, -1.0]), sample("b", 0, &[0.5, 0.5], &[0.0, 1.0])];
        let r = audio_video_angles(&head, &s).unwrap();
        assert!(r.all_angles().iter().all(|a| a.abs() < 1e-6));
    }

    #[test]
    fn orthogonal_multiview_head_gives_right_angles() {
        // audio lands on e1 and video on e2 after the shared ReLU layer
        let lin = |w: &[[f64; 2]; 2], b: [f64; 2]| LinearLayer::new(Matrix::from_rows(w).unwrap(), b.to_vec()).unwrap();
        let head = FusionHead::MultiView(
            MultiViewHead::new(
                lin(&[[0.0, 0.0], [0.0, 0.0]], [1.0, 0.0]),
                lin(&[[0.0, 0.0], [0.0, 0.0]], [0.0, 1.0]),
                lin(&[[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]),
                Dropout::default(),
            )
            .unwrap(),
        );
        let s = vec![sample("a", 0, &[1.0, 2.0], &[3.0, -1.0])];
        let r = audio_video_angles(&head, &s).unwrap();
        assert!((r.all_angles()[0] - 90.0).abs() < 1e-9);
    }

    #[test]
    fn within_identity_counts_and_values() {
        let head = identity_mean_head();
        let mut s = Vec::new();
        for k in 0..4 {
            s.push(sample("a", k, &[1.0, k as f64], &[0.0, 0.0]));
        }
        for k in 0..3 {
            s.push(sample("b", k, &[1.0, 1.0], &[0.0, 0.0]));
        }
        s.push(sample("c", 0, &[1.0, 0.0], &[0.0, 0.0]));
        let r = within_identity_angles(&head, &s, Modality::Audio).unwrap();
        let counts: Vec<usize> = r.groups.iter().map(|g| g.angles.len()).collect();
        assert_eq!(counts, vec![6, 3, 0]);
        assert!(r.groups[1].angles.iter().all(|&a| a == 0.0));

        // three hand-checked angles: (1,0), (1,1), (0,1) → 45, 90, 45
        let t = vec![
            sample("t", 0, &[1.0, 0.0], &[0.0, 0.0]),
            sample("t", 1, &[1.0, 1.0], &[0.0, 0.0]),
            sample("t", 2, &[0.0, 1.0], &[0.0, 0.0]),
        ];
        let r = within_identity_angles(&head, &t, Modality::Audio).unwrap();
        let want = [45.0, 90.0, 45.0];
        for (a, w) in r.groups[0].angles.iter().zip(want) {
            assert!((a - w).abs() < 1e-9);
        }
    }

    #[test]
    fn centroid_matrix_examples() {
        let head = identity_mean_head();
        let s = vec![
            sample("a", 0, &[1.0, 0.0], &[0.0; 2]),
            sample("a", 1, &[2.0, 0.0], &[0.0; 2]),
            sample("b", 0, &[0.0, 3.0], &[0.0; 2]),
            sample("c", 0, &[-1.0, 1.0], &[0.0; 2]),
            sample("c", 1, &[-1.0, 1.0], &[0.0; 2]),
        ];
        let c = centroid_angle_matrix(&head, &s, Modality::Audio).unwrap();
        let want = [[0.0, 90.0, 135.0], [90.0, 0.0, 45.0], [135.0, 45.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((c.degrees.get(i, j) - want[i][j]).abs() < 1e-9);
            }
        }
        let one = vec![sample("a", 0, &[1.0, 0.0], &[0.0; 2])];
        assert!(centroid_angle_matrix(&head, &one, Modality::Audio).is_err());
    }

    #[test]
    fn zero_centroid_is_skipped() {
        let head = identity_mean_head();
        let s = vec![
            sample("a", 0, &[1.0, 0.0], &[0.0; 2]),
            sample("b", 0, &[1.0, 1.0], &[0.0; 2]),
            sample("z", 0, &[1.0, 0.0], &[0.0; 2]),
            sample("z", 1, &[-1.0, 0.0], &[0.0; 2]),
        ];
        let c = centroid_angle_matrix(&head, &s, Modality::Audio).unwrap();
        assert_eq!(c.skipped, vec!["z".to_string()]);
        assert_eq!(c.identities.len(), 2);
    }

    #[test]
    fn silhouette_examples() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for k in 0..10 {
            let e = 0.01 * k as f64;
            rows.push([1.0, e]);
            labels.push(0);
            rows.push([e, 1.0]);
            labels.push(1);
        }
        let m = Matrix::from_rows(&rows).unwrap();
        assert!(silhouette_score(&m, &labels, Distance::Cosine).unwrap() > 0.9);

        let same = Matrix::from_rows(&[[1.0, 1.0]; 6]).unwrap();
        assert_eq!(silhouette_score(&same, &[0, 0, 1, 1, 2, 2], Distance::Euclidean).unwrap(), 0.0);
        assert!(silhouette_score(&same, &[0; 6], Distance::Cosine).is_err());
    }

    #[test]
    fn singleton_clusters_score_zero() {
        let m = Matrix::from_rows(&[[0.0], [1.0], [5.0]]).unwrap();
        assert_eq!(silhouette_score(&m, &[0, 1, 2], Distance::Euclidean).unwrap(), 0.0);
    }

    #[test]
    fn random_labels_score_near_zero() {
        let mut rng = stream_rng(3, Stream::Data, 0);
        let n = 1500;
        let data: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = Matrix::new(n, 4, data).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        for d in [Distance::Cosine, Distance::Euclidean] {
            let s = silhouette_score(&m, &labels, d).unwrap();
            assert!(s.abs() < 0.05, "{s}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn silhouette_is_bounded(
            pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 4..30),
            seed in 0u64..100,
        ) {
            let mut rng = stream_rng(seed, Stream::Data, 0);
            let mut labels: Vec<usize> = (0..pts.len()).map(|_| rng.random_range(0..3)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let m = Matrix::from_rows(&pts).unwrap();
            for d in [Distance::Cosine, Distance::Euclidean] {
                if let Ok(s) = silhouette_score(&m, &labels, d) {
                    prop_assert!((-1.0..=1.0).contains(&s));
                }
            }
        }

        #[test]
        fn angles_are_in_range(
            pts in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 2), prop::collection::vec(-5.0f64..5.0, 2)), 2..12),
        ) {
            let head = identity_mean_head();
            let s: Vec<Sample> = pts.iter().enumerate().map(|(k, (a, v))| sample(if k % 2 == 0 { "x" } else { "y" }, k, a, v)).collect();
            let mut all = audio_video_angles(&head, &s).unwrap().all_angles();
            if let Ok(w) = within_identity_angles(&head, &s, Modality::Video) {
                all.extend(w.all_angles());
            }
            if let Ok(c) = centroid_angle_matrix(&head, &s, Modality::Audio) {
                all.extend(c.as_report().all_angles());
            }
            prop_assert!(all.iter().all(|a| (0.0..=180.0).contains(a)));
        }
    }
}
