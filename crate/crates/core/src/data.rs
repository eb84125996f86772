//! Synthetic identity-clustered stand-ins for audio and video backbone
//! outputs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::math::{l2_normalize, Matrix};
use crate::rng::{stream_rng, Rng, Stream};
use crate::{Error, Result};

/// Offset separating per-identity sample streams from prototype streams.
const SAMPLE_STREAM_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub d_audio: usize,
    pub d_video: usize,
    pub audio_noise_sigma: f64,
    pub video_noise_sigma: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_identities: 50,
            samples_per_identity: 40,
            d_audio: 16,
            d_video: 32,
            audio_noise_sigma: 0.45,
            video_noise_sigma: 0.25,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("n_identities", self.n_identities),
            ("samples_per_identity", self.samples_per_identity),
            ("d_audio", self.d_audio),
            ("d_video", self.d_video),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        for (field, v) in [
            ("audio_noise_sigma", self.audio_noise_sigma),
            ("video_noise_sigma", self.video_noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be a finite value ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentitySpec {
    pub identity_id: String,
    pub audio_prototype: Vec<f64>,
    pub video_prototype: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub identity_id: String,
    pub sample_id: String,
    pub audio: Vec<f64>,
    pub video: Vec<f64>,
}

pub fn identity_name(index: usize) -> String {
    format!("id{index:05}")
}

fn gaussian(d: usize, rng: &mut Rng) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_vector(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        if let Ok(v) = l2_normalize(&gaussian(d, rng)) {
            return v;
        }
    }
}

pub fn generate_identities(config: &DatasetConfig) -> Result<Vec<IdentitySpec>> {
    config.validate()?;
    Ok(crate::par::map_range(config.n_identities, |i| {
        let mut rng = stream_rng(config.seed, Stream::Data, i as u64);
        IdentitySpec {
            identity_id: identity_name(i),
            audio_prototype: unit_vector(config.d_audio, &mut rng),
            video_prototype: unit_vector(config.d_video, &mut rng),
        }
    }))
}

/// `samples_per_identity` noisy copies of every prototype. Noise is added in
/// ambient space and the result is not re-normalized.
pub fn sample_dataset(specs: &[IdentitySpec], config: &DatasetConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    if specs.is_empty() {
        return Err(Error::config("identities", "no identity specs to sample from"));
    }
    let per_identity = crate::par::map_range(specs.len(), |i| {
        let spec = &specs[i];
        let mut rng = stream_rng(config.seed, Stream::Data, SAMPLE_STREAM_OFFSET + i as u64);
        (0..config.samples_per_identity)
            .map(|k| {
                let noisy = |proto: &[f64], sigma: f64, rng: &mut Rng| -> Vec<f64> {
                    proto
                        .iter()
                        .map(|p| {
                            let z: f64 = StandardNormal.sample(rng);
                            p + sigma * z
                        })
                        .collect()
                };
                Sample {
                    identity_id: spec.identity_id.clone(),
                    sample_id: format!("{}-{k:04}", spec.identity_id),
                    audio: noisy(&spec.audio_prototype, config.audio_noise_sigma, &mut rng),
                    video: noisy(&spec.video_prototype, config.video_noise_sigma, &mut rng),
                }
            })
            .collect::<Vec<_>>()
    });
    Ok(per_identity.into_iter().flatten().collect())
}

/// Groups samples by identity in identifier order, keeping input order
/// within each identity.
pub fn group_by_identity(samples: &[Sample]) -> BTreeMap<&str, Vec<&Sample>> {
    let mut groups: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.identity_id.as_str()).or_default().push(s);
    }
    groups
}

fn stratified_count(n: usize, fraction: f64, field: &str) -> Result<usize> {
    let k = (n as f64 * fraction).round() as usize;
    if k == 0 || k >= n {
        return Err(Error::config(
            field,
            format!("{fraction} of {n} samples per identity leaves an empty partition"),
        ));
    }
    Ok(k)
}

/// Identity-stratified split. For each identity, `round(n·fraction)`
/// samples go to the second partition; both partitions must end up
/// nonempty for every identity. Output keeps input order.
pub fn split_dataset(samples: &[Sample], val_fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::config("val_fraction", format!("must lie in (0, 1), got {val_fraction}")));
    }
    let groups = group_by_identity(samples);
    let mut held: std::collections::HashSet<&str> = Default::default();
    for (i, (_, members)) in groups.iter().enumerate() {
        let k = stratified_count(members.len(), val_fraction, "val_fraction")?;
        let mut rng = stream_rng(seed, Stream::Split, i as u64);
        let mut order: Vec<usize> = (0..members.len()).collect();
        order.shuffle(&mut rng);
        held.extend(order[..k].iter().map(|&j| members[j].sample_id.as_str()));
    }
    let (val, train): (Vec<Sample>, Vec<Sample>) =
        samples.iter().cloned().partition(|s| held.contains(s.sample_id.as_str()));
    Ok((train, val))
}

/// Train / validation / test partitions, each identity-stratified.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Splits off `test_fraction` first, then `val_fraction` (both relative to
/// the full per-identity count) from the remainder.
pub fn split_three(samples: &[Sample], val_fraction: f64, test_fraction: f64, seed: u64) -> Result<Splits> {
    if !(test_fraction > 0.0 && val_fraction > 0.0 && val_fraction + test_fraction < 1.0) {
        return Err(Error::config(
            "val_fraction",
            format!("val {val_fraction} and test {test_fraction} must be positive and sum below 1"),
        ));
    }
    let (rest, test) = split_dataset(samples, test_fraction, seed)?;
    let (train, val) = split_dataset(&rest, val_fraction / (1.0 - test_fraction), seed.wrapping_add(1))?;
    Ok(Splits { train, val, test })
}

/// Sorted identity identifiers; position is the class index.
pub fn class_labels(samples: &[Sample]) -> Vec<String> {
    group_by_identity(samples).keys().map(|k| k.to_string()).collect()
}

/// Audio and video rows of `samples` as two matrices. Every sample must
/// match the given widths.
pub fn sample_matrices(samples: &[Sample], d_audio: usize, d_video: usize) -> Result<(Matrix, Matrix)> {
    let mut audio = Vec::with_capacity(samples.len() * d_audio);
    let mut video = Vec::with_capacity(samples.len() * d_video);
    for s in samples {
        if s.audio.len() != d_audio || s.video.len() != d_video {
            return Err(Error::shape(
                "sample dimensions",
                format!("{d_audio}/{d_video}"),
                format!("{}/{} in {}", s.audio.len(), s.video.len(), s.sample_id),
            ));
        }
        audio.extend_from_slice(&s.audio);
        video.extend_from_slice(&s.video);
    }
    Ok((
        Matrix::new(samples.len(), d_audio, audio)?,
        Matrix::new(samples.len(), d_video, video)?,
    ))
}

/// Samples packed into matrices with class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub audio: Matrix,
    pub video: Matrix,
    pub targets: Vec<usize>,
}

impl LabeledSet {
    pub fn new(samples: &[Sample], labels: &[String]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Degenerate("empty sample set".into()))?;
        let (audio, video) = sample_matrices(samples, first.audio.len(), first.video.len())?;
        let targets = samples
            .iter()
            .map(|s| {
                labels
                    .binary_search(&s.identity_id)
                    .map_err(|_| Error::Degenerate(format!("identity {} has no class label", s.identity_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LabeledSet { audio, video, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> LabeledSet {
        let pick = |m: &Matrix| {
            let mut data = Vec::with_capacity(idx.len() * m.cols());
            for &i in idx {
                data.extend_from_slice(m.row(i));
            }
            Matrix::new(idx.len(), m.cols(), data).expect("rows of a valid matrix")
        };
        LabeledSet {
            audio: pick(&self.audio),
            video: pick(&self.video),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{centroid, dot, norm};
    use proptest::prelude::*;

    fn cfg(n: usize, k: usize, d: usize, sigma: f64) -> DatasetConfig {
        DatasetConfig {
            n_identities: n,
            samples_per_identity: k,
            d_audio: d,
            d_video: d,
            audio_noise_sigma: sigma,
            video_noise_sigma: sigma,
            seed: 9,
        }
    }

    #[test]
    fn identities_are_deterministic_and_unit() {
        let c = DatasetConfig::default();
        let a = generate_identities(&c).unwrap();
        assert_eq!(a, generate_identities(&c).unwrap());
        for s in &a {
            assert!((norm(&s.audio_prototype) - 1.0).abs() < 1e-12);
            assert!((norm(&s.video_prototype) - 1.0).abs() < 1e-12);
        }
        assert_eq!(generate_identities(&cfg(1, 1, 3, 0.0)).unwrap().len(), 1);
    }

    #[test]
    fn prototypes_are_uniform_on_the_sphere() {
        let specs = generate_identities(&cfg(10_000, 1, 3, 0.0)).unwrap();
        let protos: Vec<&[f64]> = specs.iter().map(|s| s.audio_prototype.as_slice()).collect();
        assert!(norm(&centroid(&protos).unwrap()) < 0.05);
    }

    #[test]
    fn noiseless_samples_equal_prototypes() {
        let c = cfg(3, 4, 5, 0.0);
        let specs = generate_identities(&c).unwrap();
        let samples = sample_dataset(&specs, &c).unwrap();
        assert_eq!(samples.len(), 12);
        for s in &samples {
            let spec = specs.iter().find(|p| p.identity_id == s.identity_id).unwrap();
            assert_eq!(s.audio, spec.audio_prototype);
            assert_eq!(s.video, spec.video_prototype);
        }
    }

    #[test]
    fn noise_scale_matches_chi_mean() {
        let c = cfg(10, 100, 64, 0.1);
        let specs = generate_identities(&c).unwrap();
        let samples = sample_dataset(&specs, &c).unwrap();
        let mean: f64 = samples
            .iter()
            .map(|s| {
                let p = &specs.iter().find(|p| p.identity_id == s.identity_id).unwrap().audio_prototype;
                norm(&s.audio.iter().zip(p).map(|(a, b)| a - b).collect::<Vec<_>>())
            })
            .sum::<f64>()
            / samples.len() as f64;
        assert!((mean - 0.8).abs() < 0.08, "{mean}");
    }

    #[test]
    fn nearest_centroid_separates_two_identities() {
        let c = cfg(2, 50, 16, 0.05);
        let specs = generate_identities(&c).unwrap();
        let samples = sample_dataset(&specs, &c).unwrap();
        let groups = group_by_identity(&samples);
        let centroids: Vec<Vec<f64>> = groups
            .values()
            .map(|g| centroid(&g.iter().map(|s| s.audio.as_slice()).collect::<Vec<_>>()).unwrap())
            .collect();
        let ids: Vec<&str> = groups.keys().copied().collect();
        for s in &samples {
            let dist = |c: &Vec<f64>| norm(&s.audio.iter().zip(c).map(|(a, b)| a - b).collect::<Vec<_>>());
            let best = if dist(&centroids[0]) < dist(&centroids[1]) { 0 } else { 1 };
            assert_eq!(ids[best], s.identity_id);
        }
    }

    #[test]
    fn within_identity_angle_grows_with_sigma() {
        let mut prev = -1.0;
        for sigma in [0.1, 0.3, 0.9] {
            let c = cfg(20, 10, 16, sigma);
            let samples = sample_dataset(&generate_identities(&c).unwrap(), &c).unwrap();
            let mut total = 0.0;
            let mut count = 0.0;
            for g in group_by_identity(&samples).values() {
                for i in 0..g.len() {
                    for j in i + 1..g.len() {
                        total += crate::math::angle_deg(&g[i].audio, &g[j].audio).unwrap();
                        count += 1.0;
                    }
                }
            }
            let mean = total / count;
            assert!(mean > prev);
            prev = mean;
        }
    }

    #[test]
    fn stratified_split_counts() {
        let c = cfg(4, 10, 2, 0.1);
        let samples = sample_dataset(&generate_identities(&c).unwrap(), &c).unwrap();
        let (train, val) = split_dataset(&samples, 0.2, 1).unwrap();
        for g in group_by_identity(&train).values() {
            assert_eq!(g.len(), 8);
        }
        for g in group_by_identity(&val).values() {
            assert_eq!(g.len(), 2);
        }
        assert_eq!((train.clone(), val.clone()), split_dataset(&samples, 0.2, 1).unwrap());

        let c2 = cfg(3, 2, 2, 0.1);
        let s2 = sample_dataset(&generate_identities(&c2).unwrap(), &c2).unwrap();
        let (t2, v2) = split_dataset(&s2, 0.5, 0).unwrap();
        assert_eq!((t2.len(), v2.len()), (3, 3));

        let c1 = cfg(3, 1, 2, 0.1);
        let s1 = sample_dataset(&generate_identities(&c1).unwrap(), &c1).unwrap();
        assert!(matches!(split_dataset(&s1, 0.5, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn three_way_split_on_desk_profile() {
        let c = DatasetConfig::default();
        let samples = sample_dataset(&generate_identities(&c).unwrap(), &c).unwrap();
        let s = split_three(&samples, 0.15, 0.25, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (50 * 24, 50 * 6, 50 * 10));
    }

    #[test]
    fn negative_sigma_is_rejected() {
        let mut c = DatasetConfig::default();
        c.audio_noise_sigma = -0.1;
        let err = generate_identities(&c).unwrap_err();
        assert!(err.to_string().contains("audio_noise_sigma"));
    }

    #[test]
    fn labeled_set_selects_rows() {
        let c = cfg(2, 3, 2, 0.1);
        let samples = sample_dataset(&generate_identities(&c).unwrap(), &c).unwrap();
        let labels = class_labels(&samples);
        let set = LabeledSet::new(&samples, &labels).unwrap();
        assert_eq!(set.targets, vec![0, 0, 0, 1, 1, 1]);
        let sub = set.select(&[4, 0]);
        assert_eq!(sub.audio.row(0), samples[4].audio.as_slice());
        assert_eq!(sub.targets, vec![1, 0]);
        assert!(dot(sub.video.row(1), &samples[0].video).is_finite());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn split_is_a_disjoint_partition(k in 2usize..12, frac in 0.1f64..0.9, seed in 0u64..1000) {
            let c = cfg(3, k, 2, 0.1);
            let samples = sample_dataset(&generate_identities(&c).unwrap(), &c).unwrap();
            if let Ok((train, val)) = split_dataset(&samples, frac, seed) {
                prop_assert_eq!(train.len() + val.len(), samples.len());
                let mut ids: Vec<&str> = train.iter().chain(&val).map(|s| s.sample_id.as_str()).collect();
                ids.sort();
                ids.dedup();
                prop_assert_eq!(ids.len(), samples.len());
                prop_assert_eq!(group_by_identity(&train).len(), 3);
                prop_assert_eq!(group_by_identity(&val).len(), 3);
            }
        }
    }
}
