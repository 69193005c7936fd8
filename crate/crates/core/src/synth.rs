//! Synthetic embedding datasets and label-noise injectors.
//!
//! Class prototypes are unit vectors drawn by rejection sampling until all
//! pairwise cosines stay under a separation-derived bound. Sample features
//! are jittered prototypes; a configurable fraction of each patch map is
//! replaced by class-independent noise, which is what exercises the
//! partial matching of the unbalanced solver.
//!
//! Prototype draws depend only on the seed while sample draws also mix in
//! the shot count, so datasets generated with the same seed but different
//! shot counts describe the same classes with fresh samples. That is how
//! matched train/test splits are produced.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{EmbeddingDataset, SampleFeatures};
use crate::error::{Error, Result};
use crate::matrix::{l2_normalize_rows, Matrix, Vector};

/// Total rejection-sampling attempts before giving up on prototypes.
pub const MAX_REJECTION_ATTEMPTS: usize = 10_000;

/// Which label-noise model to inject.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Uniform random flips to any other class.
    Symmetric,
    /// Cyclic-neighbor flips `k -> (k + 1) mod C`, the synthetic stand-in
    /// for class-conditional noise between similar classes.
    Asymmetric,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" | "sym" => Ok(NoiseKind::Symmetric),
            "asymmetric" | "asym" => Ok(NoiseKind::Asymmetric),
            other => Err(Error::ParseError {
                message: format!("unknown noise kind '{other}'"),
            }),
        }
    }
}

/// Generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    /// Samples per class.
    pub shots: usize,
    pub dim: usize,
    pub patches: usize,
    /// Controls both the prototype cosine bound and the jitter scale
    /// `sigma = 1 / separation`.
    pub separation: f64,
    /// Fraction of patches replaced by class-independent noise, in `[0, 1)`.
    pub background_fraction: f64,
    pub noise_rate: f64,
    pub noise_kind: NoiseKind,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            shots: 16,
            dim: 32,
            patches: 16,
            separation: 20.0,
            background_fraction: 0.125,
            noise_rate: 0.5,
            noise_kind: NoiseKind::Symmetric,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.separation > 0.0) {
            return Err(Error::DomainError {
                context: "separation",
                value: self.separation,
            });
        }
        if self.shots == 0 || self.num_classes == 0 || self.dim == 0 || self.patches == 0 {
            return Err(Error::ValidationError {
                message: "classes, shots, dim, and patches must all be positive".to_string(),
            });
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return Err(Error::DomainError {
                context: "background_fraction",
                value: self.background_fraction,
            });
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::DomainError {
                context: "noise_rate",
                value: self.noise_rate,
            });
        }
        Ok(())
    }

    /// Upper bound on pairwise prototype cosines implied by `separation`.
    pub fn cosine_bound(&self) -> f64 {
        (5.0 / self.separation).min(0.5)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn standard_normal_vec<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let v = standard_normal_vec(rng, dim);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Draws `num_classes` unit prototypes with pairwise cosines below the
/// separation bound.
fn draw_prototypes(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let bound = cfg.cosine_bound();
    let mut protos: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_classes);
    let mut attempts = 0usize;
    while protos.len() < cfg.num_classes {
        if attempts >= MAX_REJECTION_ATTEMPTS {
            return Err(Error::RejectionFailure { attempts });
        }
        attempts += 1;
        let candidate = unit_vector(rng, cfg.dim);
        let ok = protos.iter().all(|p| {
            let dot: f64 = p.iter().zip(&candidate).map(|(a, b)| a * b).sum();
            dot.abs() <= bound
        });
        if ok {
            protos.push(candidate);
        }
    }
    Ok(protos)
}

/// Generates a dataset. Observed labels start equal to the attached ground
/// truth; apply a noise injector afterwards to corrupt them.
pub fn gen_dataset(cfg: &SynthConfig) -> Result<EmbeddingDataset> {
    cfg.validate()?;
    let mut proto_rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed));
    let mut sample_rng = ChaCha8Rng::seed_from_u64(
        splitmix64(cfg.seed) ^ splitmix64(0x5357_4F48 + cfg.shots as u64),
    );
    let protos = draw_prototypes(cfg, &mut proto_rng)?;
    let sigma = 1.0 / cfg.separation;
    let background_patches = (cfg.background_fraction * cfg.patches as f64).floor() as usize;
    let mut samples = Vec::with_capacity(cfg.num_classes * cfg.shots);
    let mut truth = Vec::with_capacity(cfg.num_classes * cfg.shots);
    for (k, proto) in protos.iter().enumerate() {
        for _ in 0..cfg.shots {
            let noise = standard_normal_vec(&mut sample_rng, cfg.dim);
            let raw: Vec<f64> = proto
                .iter()
                .zip(&noise)
                .map(|(p, n)| p + sigma * n)
                .collect();
            let global = l2_normalize_rows(&Matrix::from_vec(1, cfg.dim, raw)?)?;
            let global_row = global.row(0).to_vec();
            let mut local_rows = Vec::with_capacity(cfg.patches);
            for _ in 0..cfg.patches {
                let jitter = standard_normal_vec(&mut sample_rng, cfg.dim);
                let row: Vec<f64> = global_row
                    .iter()
                    .zip(&jitter)
                    .map(|(g, n)| g + sigma * n)
                    .collect();
                local_rows.push(row);
            }
            // The trailing patches become class-independent background.
            for b in 0..background_patches {
                let idx = cfg.patches - 1 - b;
                local_rows[idx] = unit_vector(&mut sample_rng, cfg.dim);
            }
            let local = l2_normalize_rows(&Matrix::from_rows(&local_rows)?)?;
            samples.push(SampleFeatures::new(
                Vector::from_vec(global_row)?,
                local,
            )?);
            truth.push(k);
        }
    }
    EmbeddingDataset::new(
        cfg.num_classes,
        cfg.dim,
        cfg.patches,
        samples,
        truth.clone(),
        Some(truth),
    )
}

/// Chooses exactly `floor(rate * D)` flip positions by a seeded shuffle.
fn flip_positions(len: usize, rate: f64, seed: u64) -> (Vec<usize>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed) ^ 0x4E_4F49_5345_u64);
    let mut order: Vec<usize> = (0..len).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let count = (rate * len as f64).floor() as usize;
    order.truncate(count);
    (order, rng)
}

/// Symmetric noise: the chosen labels are replaced by a uniform draw over
/// the other `C - 1` classes. Returns the new labels and the flip mask.
pub fn inject_symmetric_noise(
    labels: &[usize],
    rate: f64,
    num_classes: usize,
    seed: u64,
) -> (Vec<usize>, Vec<bool>) {
    let (positions, mut rng) = flip_positions(labels.len(), rate, seed);
    let mut out = labels.to_vec();
    let mut mask = vec![false; labels.len()];
    debug_assert!(num_classes >= 2 || positions.is_empty());
    for &i in &positions {
        let draw = rng.random_range(0..num_classes - 1);
        out[i] = if draw >= labels[i] { draw + 1 } else { draw };
        mask[i] = true;
    }
    (out, mask)
}

/// Asymmetric noise: the chosen labels flip to their cyclic neighbor
/// `(k + 1) mod C`.
pub fn inject_asymmetric_noise(
    labels: &[usize],
    rate: f64,
    num_classes: usize,
    seed: u64,
) -> (Vec<usize>, Vec<bool>) {
    let (positions, _) = flip_positions(labels.len(), rate, seed);
    let mut out = labels.to_vec();
    let mut mask = vec![false; labels.len()];
    debug_assert!(num_classes >= 2 || positions.is_empty());
    for &i in &positions {
        out[i] = (labels[i] + 1) % num_classes;
        mask[i] = true;
    }
    (out, mask)
}
