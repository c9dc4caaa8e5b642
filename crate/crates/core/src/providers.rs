//! Pluggable observation sources: proposal sets, dense flow fields, gray
//! rasters, the single-Gaussian Fisher-vector encoder, and the feature
//! provider abstraction the tracker queries at arbitrary boxes.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::geom::{clip_to_frame, iou, BBox};
use crate::linmodel::FeatureVec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderError {
    /// The provider cannot produce a feature for the requested box.
    FeatureUnavailable,
    /// No descriptors fall inside the box.
    NoDescriptors,
    /// Gaussian fitting needs at least two descriptors.
    TooFewDescriptors,
    /// The box does not intersect the raster.
    EmptyBox,
    DimMismatch { expected: usize, got: usize },
}

impl fmt::Display for ProviderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderError::FeatureUnavailable => write!(f, "no feature available for this box"),
            ProviderError::NoDescriptors => write!(f, "no descriptors inside the box"),
            ProviderError::TooFewDescriptors => write!(f, "need at least two descriptors"),
            ProviderError::EmptyBox => write!(f, "box lies outside the raster"),
            ProviderError::DimMismatch { expected, got } => {
                write!(f, "descriptor dimension {got}, expected {expected}")
            }
        }
    }
}

impl core::error::Error for ProviderError {}

/// Candidate object locations for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub frame: usize,
    pub boxes: Vec<BBox>,
}

/// Dense per-pixel displacement field, row-major, one `(vx, vy)` pair per
/// pixel. Describes the motion from the previous frame into this one.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<(f32, f32)>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField { width, height, data: vec![(0.0, 0.0); width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<(f32, f32)>) -> Option<Self> {
        if data.len() != width * height {
            return None;
        }
        Some(FlowField { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let (vx, vy) = self.data[y * self.width + x];
        (vx as f64, vy as f64)
    }

    pub fn set(&mut self, x: usize, y: usize, vx: f32, vy: f32) {
        self.data[y * self.width + x] = (vx, vy);
    }

    pub fn data(&self) -> &[(f32, f32)] {
        &self.data
    }
}

/// Single-channel image with `f32` pixels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayRaster {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayRaster {
    pub fn new(width: usize, height: usize, fill: f32) -> Self {
        GrayRaster { width, height, pixels: vec![fill; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    /// Bilinear sample at a continuous position, clamped to the image.
    pub fn sample(&self, fx: f64, fy: f64) -> f64 {
        let cx = fx.clamp(0.0, (self.width - 1) as f64);
        let cy = fy.clamp(0.0, (self.height - 1) as f64);
        let x0 = libm::floor(cx) as usize;
        let y0 = libm::floor(cy) as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = cx - x0 as f64;
        let ty = cy - y0 as f64;
        let p00 = self.at(x0, y0) as f64;
        let p10 = self.at(x1, y0) as f64;
        let p01 = self.at(x0, y1) as f64;
        let p11 = self.at(x1, y1) as f64;
        p00 * (1.0 - tx) * (1.0 - ty) + p10 * tx * (1.0 - ty) + p01 * (1.0 - tx) * ty + p11 * tx * ty
    }
}

/// Diagonal Gaussian over local descriptors: the generative model behind the
/// single-Gaussian Fisher vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Variances are floored here to keep the encoder defined on degenerate
/// dimensions.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Maximum-likelihood diagonal Gaussian: sample mean and biased variance,
/// with constant dimensions floored at [`VARIANCE_FLOOR`].
pub fn fit_gaussian(descriptors: &[Vec<f64>]) -> Result<GaussianParams, ProviderError> {
    if descriptors.len() < 2 {
        return Err(ProviderError::TooFewDescriptors);
    }
    let dim = descriptors[0].len();
    for d in descriptors {
        if d.len() != dim {
            return Err(ProviderError::DimMismatch { expected: dim, got: d.len() });
        }
    }
    let n = descriptors.len() as f64;
    let mut mean = vec![0.0; dim];
    for d in descriptors {
        for (m, v) in mean.iter_mut().zip(d) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for d in descriptors {
        for ((s, v), m) in var.iter_mut().zip(d).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in var.iter_mut() {
        *s = (*s / n).max(VARIANCE_FLOOR);
    }
    Ok(GaussianParams { mean, var })
}

/// Single-Gaussian Fisher vector of a descriptor set: the concatenated mean
/// and variance gradient statistics,
/// `G_mu = (1/n) sum (x - mu) / sigma` and
/// `G_sigma = (1/(n sqrt 2)) sum (((x - mu)/sigma)^2 - 1)`,
/// passed through signed square-root and L2 normalization (an all-zero
/// vector is left as zero).
pub fn minifv_encode(
    descriptors: &[Vec<f64>],
    g: &GaussianParams,
) -> Result<FeatureVec, ProviderError> {
    if descriptors.is_empty() {
        return Err(ProviderError::NoDescriptors);
    }
    let dim = g.mean.len();
    for d in descriptors {
        if d.len() != dim {
            return Err(ProviderError::DimMismatch { expected: dim, got: d.len() });
        }
    }
    let n = descriptors.len() as f64;
    let mut grad_mean = vec![0.0; dim];
    let mut grad_var = vec![0.0; dim];
    for d in descriptors {
        for j in 0..dim {
            let sigma = libm::sqrt(g.var[j]);
            let z = (d[j] - g.mean[j]) / sigma;
            grad_mean[j] += z;
            grad_var[j] += z * z - 1.0;
        }
    }
    let mut values = Vec::with_capacity(2 * dim);
    values.extend(grad_mean.into_iter().map(|v| v / n));
    values.extend(grad_var.into_iter().map(|v| v / (n * core::f64::consts::SQRT_2)));
    // Power normalization (signed square root), then L2.
    for v in values.iter_mut() {
        *v = if *v >= 0.0 { libm::sqrt(*v) } else { -libm::sqrt(-*v) };
    }
    Ok(FeatureVec::new(values)
        .expect("finite statistics of finite descriptors")
        .l2_normalized())
}

/// Side length of the fixed resampling grid inside each descriptor cell;
/// local descriptors have `RESAMPLE_SIDE^2` entries.
pub const RESAMPLE_SIDE: usize = 4;

/// Splits the box into a `grid x grid` cell layout and describes each cell
/// by its bilinearly resampled pixel block, mean-subtracted and contrast
/// normalized. A minimal stand-in for heavier local-descriptor pipelines so
/// the Fisher-vector path runs end to end.
pub fn patch_descriptors(
    image: &GrayRaster,
    bbox: &BBox,
    grid: usize,
) -> Result<Vec<Vec<f64>>, ProviderError> {
    debug_assert!(grid >= 1);
    let clipped = clip_to_frame(bbox, image.width() as f64, image.height() as f64)
        .map_err(|_| ProviderError::EmptyBox)?;
    let cell_w = clipped.w / grid as f64;
    let cell_h = clipped.h / grid as f64;
    let mut descriptors = Vec::with_capacity(grid * grid);
    for gy in 0..grid {
        for gx in 0..grid {
            let ox = clipped.x + gx as f64 * cell_w;
            let oy = clipped.y + gy as f64 * cell_h;
            let mut block = Vec::with_capacity(RESAMPLE_SIDE * RESAMPLE_SIDE);
            for sy in 0..RESAMPLE_SIDE {
                for sx in 0..RESAMPLE_SIDE {
                    let fx = ox + (sx as f64 + 0.5) / RESAMPLE_SIDE as f64 * cell_w;
                    let fy = oy + (sy as f64 + 0.5) / RESAMPLE_SIDE as f64 * cell_h;
                    block.push(image.sample(fx, fy));
                }
            }
            let mean: f64 = block.iter().sum::<f64>() / block.len() as f64;
            for v in block.iter_mut() {
                *v -= mean;
            }
            let norm: f64 = libm::sqrt(block.iter().map(|v| v * v).sum::<f64>());
            if norm > 1e-12 {
                for v in block.iter_mut() {
                    *v /= norm;
                }
            }
            descriptors.push(block);
        }
    }
    Ok(descriptors)
}

/// Source of feature vectors for arbitrary boxes. Implementations must
/// return vectors of one constant dimension for the whole run.
pub trait FeatureSource {
    fn dim(&self) -> usize;

    /// Feature of the given box in the given frame, or
    /// [`ProviderError::FeatureUnavailable`] when the source cannot answer
    /// (callers treat the window as unobservable).
    fn feature_at(&self, frame: usize, bbox: &BBox) -> Result<FeatureVec, ProviderError>;
}

/// Minimum overlap with a stored proposal for [`ProposalFeatures`] to answer
/// an arbitrary-box query.
pub const PROPOSAL_FEATURE_MIN_IOU: f64 = 0.5;

/// File-ingestion feature mode: arbitrary-box queries answer with the
/// feature of the best-overlapping proposal of that frame, unavailable below
/// [`PROPOSAL_FEATURE_MIN_IOU`].
pub struct ProposalFeatures<'a> {
    proposals: &'a [BBox],
    features: &'a [FeatureVec],
    frame: usize,
    dim: usize,
}

impl<'a> ProposalFeatures<'a> {
    pub fn new(frame: usize, proposals: &'a [BBox], features: &'a [FeatureVec]) -> Self {
        debug_assert_eq!(proposals.len(), features.len());
        let dim = features.first().map_or(0, |f| f.dim());
        ProposalFeatures { proposals, features, frame, dim }
    }
}

impl FeatureSource for ProposalFeatures<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn feature_at(&self, frame: usize, bbox: &BBox) -> Result<FeatureVec, ProviderError> {
        debug_assert_eq!(frame, self.frame);
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.proposals.iter().enumerate() {
            let v = iou(p, bbox);
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((i, v));
            }
        }
        match best {
            Some((i, v)) if v >= PROPOSAL_FEATURE_MIN_IOU => Ok(self.features[i].clone()),
            _ => Err(ProviderError::FeatureUnavailable),
        }
    }
}

/// One frame's observation: aligned proposals and features, the dense flow
/// from the previous frame, and ground truth when the frame was synthesized.
#[derive(Debug, Clone)]
pub struct FrameBundle {
    pub frame: usize,
    pub width: f64,
    pub height: f64,
    pub proposals: Vec<BBox>,
    pub features: Vec<FeatureVec>,
    pub flow: FlowField,
    /// `(track id, box)` ground truth; empty for ingested real data.
    pub gt: Vec<(u64, BBox)>,
}
