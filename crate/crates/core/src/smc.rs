//! Per-target Sequential Monte Carlo motion model: Gaussian initialization,
//! flow-driven transition, likelihood weighting, systematic resampling, and
//! the expectation estimator.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geom::{BBox, Detection};
use crate::linmodel::{FeatureVec, LinearModel, ModelError};
use crate::providers::FlowField;

/// Particle boxes are clamped to at least this many pixels on a side after
/// transition noise.
pub const MIN_BOX_SIDE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SmcError {
    /// The box covers no pixel of the flow raster.
    EmptyBox,
    /// Every particle weight multiplied to zero; the target is lost this
    /// frame.
    AllZeroWeights,
    /// Likelihood slice does not match the particle count.
    LengthMismatch { particles: usize, likelihoods: usize },
    /// A likelihood was negative or non-finite.
    BadLikelihood,
}

impl fmt::Display for SmcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SmcError::EmptyBox => write!(f, "box covers no flow pixels"),
            SmcError::AllZeroWeights => write!(f, "all particle weights are zero"),
            SmcError::LengthMismatch { particles, likelihoods } => {
                write!(f, "{likelihoods} likelihoods for {particles} particles")
            }
            SmcError::BadLikelihood => write!(f, "likelihoods must be finite and non-negative"),
        }
    }
}

impl core::error::Error for SmcError {}

/// One weighted box hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub bbox: BBox,
    pub weight: f64,
}

/// A set of weighted particles approximating the filtering distribution of
/// one target's location.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    particles: Vec<Particle>,
}

impl ParticleSet {
    pub fn from_particles(particles: Vec<Particle>) -> Self {
        debug_assert!(!particles.is_empty());
        ParticleSet { particles }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Particle> {
        self.particles.iter()
    }

    pub fn weights_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }
}

/// Transition-noise schedule: the relative noise starts at `sigma0` and
/// shrinks with the number of successful updates, `sigma0 / (1 + successes)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub sigma0: f64,
    pub successes: u32,
}

impl NoiseSchedule {
    pub fn new(sigma0: f64) -> Self {
        debug_assert!(sigma0 >= 0.0);
        NoiseSchedule { sigma0, successes: 0 }
    }

    /// Relative standard deviation in effect.
    pub fn sigma(&self) -> f64 {
        self.sigma0 / (1.0 + self.successes as f64)
    }
}

fn gaussian<R: Rng>(rng: &mut R, mean: f64, std: f64) -> f64 {
    if std <= 0.0 {
        return mean;
    }
    Normal::new(mean, std).expect("finite std").sample(rng)
}

/// Samples `n` particles around a detection. Noise is relative to the box
/// size: std `sigma * w` for the x and width coordinates, `sigma * h` for y
/// and height. Weights start uniform.
pub fn init_particles<R: Rng>(det: &Detection, sigma: f64, n: usize, rng: &mut R) -> ParticleSet {
    debug_assert!(n >= 1);
    let b = det.bbox;
    let (sx, sy) = (sigma * b.w, sigma * b.h);
    let particles = (0..n)
        .map(|_| {
            let x = gaussian(rng, b.x, sx);
            let y = gaussian(rng, b.y, sy);
            let w = gaussian(rng, b.w, sx).max(MIN_BOX_SIDE);
            let h = gaussian(rng, b.h, sy).max(MIN_BOX_SIDE);
            Particle {
                bbox: BBox::new(x, y, w, h).expect("finite draws, clamped sides"),
                weight: 1.0 / n as f64,
            }
        })
        .collect();
    ParticleSet::from_particles(particles)
}

/// Instantaneous velocity of the region: the per-component median of the
/// flow vectors at integer pixel positions inside the box (clipped to the
/// raster).
pub fn velocity(flow: &FlowField, bbox: &BBox) -> Result<(f64, f64), SmcError> {
    let x0 = libm::ceil(bbox.x.max(0.0)) as i64;
    let y0 = libm::ceil(bbox.y.max(0.0)) as i64;
    let x1 = (libm::ceil(bbox.right().min(flow.width() as f64)) as i64) - 1;
    let y1 = (libm::ceil(bbox.bottom().min(flow.height() as f64)) as i64) - 1;
    if x0 > x1 || y0 > y1 {
        return Err(SmcError::EmptyBox);
    }
    let mut vx = Vec::with_capacity(((x1 - x0 + 1) * (y1 - y0 + 1)) as usize);
    let mut vy = Vec::with_capacity(vx.capacity());
    for py in y0..=y1 {
        for px in x0..=x1 {
            let (fx, fy) = flow.at(px as usize, py as usize);
            vx.push(fx);
            vy.push(fy);
        }
    }
    Ok((median(&mut vx), median(&mut vy)))
}

fn median(values: &mut [f64]) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Moves every particle by the velocity (one frame step) and perturbs all
/// four coordinates with zero-mean Gaussian noise whose std follows the
/// schedule relative to each particle's own size. Weights are untouched.
pub fn propagate<R: Rng>(
    ps: &ParticleSet,
    v: (f64, f64),
    ns: &NoiseSchedule,
    rng: &mut R,
) -> ParticleSet {
    let sigma = ns.sigma();
    let particles = ps
        .iter()
        .map(|p| {
            let b = p.bbox;
            let (sx, sy) = (sigma * b.w, sigma * b.h);
            let x = gaussian(rng, b.x + v.0, sx);
            let y = gaussian(rng, b.y + v.1, sy);
            let w = gaussian(rng, b.w, sx).max(MIN_BOX_SIDE);
            let h = gaussian(rng, b.h, sy).max(MIN_BOX_SIDE);
            Particle {
                bbox: BBox::new(x, y, w, h).expect("finite draws, clamped sides"),
                weight: p.weight,
            }
        })
        .collect();
    ParticleSet::from_particles(particles)
}

/// Observation likelihood of a window: the probability that it shows both
/// this target and the category, i.e. the product of the two detector
/// probabilities.
pub fn likelihood(
    target: &LinearModel,
    category: &LinearModel,
    feature: &FeatureVec,
) -> Result<f64, ModelError> {
    Ok(target.predict_prob(feature)? * category.predict_prob(feature)?)
}

/// Multiplies weights by the likelihoods and renormalizes to sum one.
/// All-zero products signal a lost target.
pub fn reweight(ps: &ParticleSet, likelihoods: &[f64]) -> Result<ParticleSet, SmcError> {
    if likelihoods.len() != ps.len() {
        return Err(SmcError::LengthMismatch {
            particles: ps.len(),
            likelihoods: likelihoods.len(),
        });
    }
    if likelihoods.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(SmcError::BadLikelihood);
    }
    let mut particles: Vec<Particle> = ps
        .iter()
        .zip(likelihoods)
        .map(|(p, l)| Particle { bbox: p.bbox, weight: p.weight * l })
        .collect();
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    if total <= 0.0 {
        return Err(SmcError::AllZeroWeights);
    }
    for p in particles.iter_mut() {
        p.weight /= total;
    }
    Ok(ParticleSet::from_particles(particles))
}

/// Systematic resampling to `n` equally weighted particles. The expected
/// multiplicity of particle `p` is `n * weight(p)`.
pub fn resample<R: Rng>(ps: &ParticleSet, rng: &mut R) -> ParticleSet {
    let n = ps.len();
    let step = 1.0 / n as f64;
    let start: f64 = rng.gen::<f64>() * step;
    let mut particles = Vec::with_capacity(n);
    let mut cumulative = 0.0;
    let mut source = ps.iter();
    let mut current = source.next().expect("non-empty set");
    for k in 0..n {
        let u = start + k as f64 * step;
        while cumulative + current.weight < u {
            cumulative += current.weight;
            current = source.next().expect("weights sum to one");
        }
        particles.push(Particle { bbox: current.bbox, weight: step });
    }
    ParticleSet::from_particles(particles)
}

/// Expectation of the latent location: the coordinate-wise weighted mean of
/// the particle boxes. Requires normalized weights.
pub fn estimate(ps: &ParticleSet) -> BBox {
    let mut acc = [0.0; 4];
    for p in ps.iter() {
        acc[0] += p.weight * p.bbox.x;
        acc[1] += p.weight * p.bbox.y;
        acc[2] += p.weight * p.bbox.w;
        acc[3] += p.weight * p.bbox.h;
    }
    BBox::new(acc[0], acc[1], acc[2], acc[3]).expect("weighted mean of valid boxes is valid")
}

/// `1 / sum(w^2)`, in `[1, n]` for normalized weights.
pub fn effective_sample_size(ps: &ParticleSet) -> f64 {
    let squares: f64 = ps.iter().map(|p| p.weight * p.weight).sum();
    1.0 / squares
}
