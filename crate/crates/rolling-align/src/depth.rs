//! Core domain types: depth videos, depth snippets, affine parameters,
//! depth/inverse-depth conversion and per-snippet percentile normalization.
//!
//! Pixel storage is `f32` throughout; every reduction (sums, means,
//! percentile interpolation) runs in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values at or below this threshold cannot be inverted safely.
pub const EPS_INV: f64 = 1e-6;

/// Minimum percentile spread accepted by snippet normalization.
pub const EPS_NORM: f64 = 1e-6;

/// Which space the per-pixel scalars of a [`DepthVideo`] live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSpace {
    InverseDepth,
    Depth,
}

impl DepthSpace {
    pub fn toggled(self) -> Self {
        match self {
            DepthSpace::InverseDepth => DepthSpace::Depth,
            DepthSpace::Depth => DepthSpace::InverseDepth,
        }
    }
}

/// Dense per-frame scalar maps for a whole video, shape `N_F x H x W`.
///
/// Values are unitless affine-invariant inverse depth unless tagged
/// [`DepthSpace::Depth`], in which case they must be strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthVideo {
    data: Vec<f32>,
    frame_count: usize,
    height: usize,
    width: usize,
    space: DepthSpace,
}

impl DepthVideo {
    pub fn new(
        data: Vec<f32>,
        frame_count: usize,
        height: usize,
        width: usize,
        space: DepthSpace,
    ) -> Result<Self> {
        if frame_count == 0 || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "video dimensions must be positive, got {frame_count}x{height}x{width}"
            )));
        }
        if data.len() != frame_count * height * width {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for a {frame_count}x{height}x{width} video, got {}",
                frame_count * height * width,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateValue(
                "video contains non-finite values".into(),
            ));
        }
        if space == DepthSpace::Depth && data.iter().any(|&v| v <= 0.0) {
            return Err(Error::DegenerateValue(
                "depth-space video contains non-positive values".into(),
            ));
        }
        Ok(Self {
            data,
            frame_count,
            height,
            width,
            space,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Pixels per frame.
    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn space(&self) -> DepthSpace {
        self.space
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let p = self.frame_len();
        &self.data[i * p..(i + 1) * p]
    }

    /// Per-pixel reciprocal, toggling the space tag.
    ///
    /// Fails with [`Error::DegenerateValue`] if any pixel is at or below
    /// [`EPS_INV`].
    pub fn invert(&self) -> Result<DepthVideo> {
        if let Some(v) = self.data.iter().find(|&&v| (v as f64) <= EPS_INV) {
            return Err(Error::DegenerateValue(format!(
                "cannot invert value {v} <= {EPS_INV}"
            )));
        }
        let data = self.data.iter().map(|&v| (1.0 / v as f64) as f32).collect();
        DepthVideo::new(
            data,
            self.frame_count,
            self.height,
            self.width,
            self.space.toggled(),
        )
    }
}

/// A short run of depth frames sampled from a source video at a fixed
/// dilation, processed as one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSnippet {
    data: Vec<f32>,
    frame_indices: Vec<usize>,
    dilation: usize,
    snippet_id: usize,
    height: usize,
    width: usize,
}

impl DepthSnippet {
    pub fn new(
        data: Vec<f32>,
        frame_indices: Vec<usize>,
        dilation: usize,
        snippet_id: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if frame_indices.is_empty() {
            return Err(Error::ShapeMismatch("snippet has no frames".into()));
        }
        if dilation == 0 {
            return Err(Error::ShapeMismatch("dilation must be >= 1".into()));
        }
        if data.len() != frame_indices.len() * height * width {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for a {}x{height}x{width} snippet, got {}",
                frame_indices.len() * height * width,
                frame_indices.len(),
                data.len()
            )));
        }
        for pair in frame_indices.windows(2) {
            if pair[1] != pair[0] + dilation {
                return Err(Error::ShapeMismatch(format!(
                    "snippet frames {:?} are not spaced by dilation {dilation}",
                    frame_indices
                )));
            }
        }
        Ok(Self {
            data,
            frame_indices,
            dilation,
            snippet_id,
            height,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.frame_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_indices.is_empty()
    }

    pub fn frame_indices(&self) -> &[usize] {
        &self.frame_indices
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }

    pub fn snippet_id(&self) -> usize {
        self.snippet_id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Frame by slot within the snippet (not by source index).
    pub fn slot(&self, j: usize) -> &[f32] {
        let p = self.frame_len();
        &self.data[j * p..(j + 1) * p]
    }
}

/// Per-snippet scale/shift pair, always with positive scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub scale: f64,
    pub shift: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        scale: 1.0,
        shift: 0.0,
    };

    pub fn new(scale: f64, shift: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() || !shift.is_finite() {
            return Err(Error::DegenerateValue(format!(
                "affine params require finite shift and scale > 0, got ({scale}, {shift})"
            )));
        }
        Ok(Self { scale, shift })
    }

    pub fn apply(&self, v: f64) -> f64 {
        self.scale * v + self.shift
    }

    pub fn inverse(&self) -> AffineParams {
        AffineParams {
            scale: 1.0 / self.scale,
            shift: -self.shift / self.scale,
        }
    }
}

/// Linearly interpolated percentile of an ascending-sorted sample.
///
/// `q` is in percent. Interpolation runs in `f64` over the sorted values.
pub fn percentile_sorted(sorted: &[f32], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    assert!((0.0..=100.0).contains(&q), "percentile out of range: {q}");
    if sorted.len() == 1 {
        return sorted[0] as f64;
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] as f64 * (1.0 - frac) + sorted[hi] as f64 * frac
}

/// The affine map `x -> (x - center) / half_width` sending a percentile
/// band to `[-1, 1]`, kept in `f64` so it can be inverted losslessly.
#[derive(Debug, Clone, Copy)]
pub struct NormalizationMap {
    center: f64,
    half_width: f64,
}

impl NormalizationMap {
    /// Derive the map from the joint sample of all snippet pixels.
    pub fn from_values(values: &[f32], lo_pct: f64, hi_pct: f64) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateValue(
                "snippet contains non-finite values".into(),
            ));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f32::total_cmp);
        let p_lo = percentile_sorted(&sorted, lo_pct);
        let p_hi = percentile_sorted(&sorted, hi_pct);
        if p_hi - p_lo <= EPS_NORM {
            return Err(Error::DegenerateValue(format!(
                "percentile spread {} below {EPS_NORM}",
                p_hi - p_lo
            )));
        }
        Ok(Self {
            center: (p_hi + p_lo) / 2.0,
            half_width: (p_hi - p_lo) / 2.0,
        })
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.center) / self.half_width
    }

    /// The inverse transform as [`AffineParams`]: applying it to a
    /// normalized value reconstructs the original.
    pub fn inverse_params(&self) -> AffineParams {
        AffineParams {
            scale: self.half_width,
            shift: self.center,
        }
    }
}

/// Jointly normalize all frames of a snippet so that the `[lo_pct, hi_pct]`
/// percentile band of the joint pixel sample maps onto `[-1, 1]`.
///
/// Values outside the band are mapped by the same affine rule without
/// clamping, so the returned inverse [`AffineParams`] reconstructs the
/// input. Percentiles use linear interpolation on the sorted joint sample.
pub fn normalize_snippet(
    snippet: &DepthSnippet,
    lo_pct: f64,
    hi_pct: f64,
) -> Result<(DepthSnippet, AffineParams)> {
    let map = NormalizationMap::from_values(snippet.data(), lo_pct, hi_pct)?;
    let data = snippet
        .data()
        .iter()
        .map(|&v| map.forward(v as f64) as f32)
        .collect();
    let normalized = DepthSnippet::new(
        data,
        snippet.frame_indices().to_vec(),
        snippet.dilation(),
        snippet.snippet_id(),
        snippet.height(),
        snippet.width(),
    )?;
    Ok((normalized, map.inverse_params()))
}
