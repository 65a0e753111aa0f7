//! Gaussian class-conditional audio-visual features.
//!
//! Class `c` has an audio mean `s · u_c` and a visual mean
//! `s · (ρ · R u_c + (1 - ρ) · w_c)`, where `u_c` and `w_c` are independent
//! random unit vectors and `R` is one random rotation shared by all
//! classes. Samples add `N(0, σ²)` noise per coordinate; every visual patch
//! of a sample shares the class mean with its own noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureDataset, FeatureSample, Split};
use crate::error::{CignError, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub patches: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Norm `s` of the class-mean directions.
    pub separation: f64,
    /// Per-coordinate noise standard deviation.
    pub sigma: f64,
    /// Cross-modal correlation of class means, in `[0, 1]`.
    pub rho: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 8,
            dim: 32,
            patches: 4,
            train_per_class: 100,
            val_per_class: 0,
            test_per_class: 20,
            separation: 6.0,
            sigma: 1.0,
            rho: 0.8,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(CignError::config("synthetic data needs at least 2 classes"));
        }
        if self.dim == 0 || self.patches == 0 {
            return Err(CignError::config("dim and patches must be positive"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(CignError::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(CignError::config(format!(
                "separation must be non-negative, got {}",
                self.separation
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(CignError::config(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        Ok(())
    }

    fn per_class(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_class,
            Split::Val => self.val_per_class,
            Split::Test => self.test_per_class,
        }
    }
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Orthonormal `dim × dim` matrix from Gram-Schmidt on a Gaussian draw.
fn random_rotation(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<FeatureDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let rotation = random_rotation(d, &mut rng);
    let mut audio_means = Vec::with_capacity(spec.num_classes);
    let mut visual_means = Vec::with_capacity(spec.num_classes);
    for _ in 0..spec.num_classes {
        let u = unit_vector(d, &mut rng);
        let w = unit_vector(d, &mut rng);
        let ru: Vec<f64> = rotation
            .iter()
            .map(|row| row.iter().zip(&u).map(|(a, b)| a * b).sum())
            .collect();
        audio_means.push(u.iter().map(|x| spec.separation * x).collect::<Vec<f64>>());
        visual_means.push(
            ru.iter()
                .zip(&w)
                .map(|(r, f)| spec.separation * (spec.rho * r + (1.0 - spec.rho) * f))
                .collect::<Vec<f64>>(),
        );
    }
    let noise = Normal::new(0.0, spec.sigma).expect("validated sigma");
    let mut samples = Vec::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        for c in 0..spec.num_classes {
            for _ in 0..spec.per_class(split) {
                let audio: Vec<f64> = audio_means[c].iter().map(|m| m + noise.sample(&mut rng)).collect();
                let visual: Vec<f64> = (0..spec.patches)
                    .flat_map(|_| visual_means[c].iter().map(|m| m + noise.sample(&mut rng)).collect::<Vec<_>>())
                    .collect();
                samples.push(FeatureSample {
                    id: samples.len(),
                    audio: Tensor::new(vec![1, d], audio)?,
                    visual: Tensor::new(vec![spec.patches, d], visual)?,
                    label: c,
                    split,
                });
            }
        }
    }
    Ok(FeatureDataset {
        name: format!("synthetic-c{}-d{}-p{}-seed{}", spec.num_classes, d, spec.patches, spec.seed),
        num_classes: spec.num_classes,
        dim: d,
        patches: spec.patches,
        samples,
    })
}

/// Audio features concatenated with the patch mean of the visual features.
fn joint_feature(s: &FeatureSample) -> Vec<f64> {
    let (p, d) = s.visual.dims2();
    let mut f = s.audio.data().to_vec();
    f.extend((0..d).map(|j| (0..p).map(|i| s.visual.get2(i, j)).sum::<f64>() / p as f64));
    f
}

/// Accuracy on `split` of a nearest-centroid classifier fit on the train
/// split; ties go to the lowest class id.
pub fn nearest_centroid_accuracy(ds: &FeatureDataset, split: Split) -> Result<f64> {
    let width = 2 * ds.dim;
    let mut sums = vec![vec![0.0; width]; ds.num_classes];
    let mut counts = vec![0usize; ds.num_classes];
    for s in ds.samples.iter().filter(|s| s.split == Split::Train) {
        for (acc, v) in sums[s.label].iter_mut().zip(joint_feature(s)) {
            *acc += v;
        }
        counts[s.label] += 1;
    }
    if counts.contains(&0) {
        return Err(CignError::config("every class needs training samples for the centroid oracle"));
    }
    let centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| s.into_iter().map(|v| v / n as f64).collect())
        .collect();
    let eval: Vec<&FeatureSample> = ds.samples.iter().filter(|s| s.split == split).collect();
    if eval.is_empty() {
        return Err(CignError::config(format!("split {split:?} is empty")));
    }
    let correct = eval
        .iter()
        .filter(|s| {
            let f = joint_feature(s);
            let dist = |c: &Vec<f64>| c.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let mut best = 0;
            for k in 1..centroids.len() {
                if dist(&centroids[k]) < dist(&centroids[best]) {
                    best = k;
                }
            }
            best == s.label
        })
        .count();
    Ok(correct as f64 / eval.len() as f64)
}
