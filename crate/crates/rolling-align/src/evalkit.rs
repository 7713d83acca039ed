//! Video-depth evaluation: per-video least-squares affine alignment to
//! ground truth, AbsRel and delta1 accuracy, and the optical-flow-based
//! warping loss (OPW) for temporal smoothness.
//!
//! The least-squares fit runs in inverse-depth space with one scale/shift
//! pair shared by all frames; accuracy metrics are computed in depth space
//! on the aligned prediction. Flow is an input, never estimated here.

use serde::{Deserialize, Serialize};

use crate::depth::{DepthSpace, DepthVideo, EPS_INV};
use crate::error::{Error, Result};

/// Dense displacement maps between consecutive frames, shape
/// `(N_F-1) x 2 x H x W` with channel 0 holding the horizontal component
/// (along width) and channel 1 the vertical one, plus a per-pair validity
/// mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    data: Vec<f32>,
    valid: Vec<bool>,
    pairs: usize,
    height: usize,
    width: usize,
}

impl FlowField {
    pub fn new(
        data: Vec<f32>,
        valid: Vec<bool>,
        pairs: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let p = height * width;
        if data.len() != pairs * 2 * p {
            return Err(Error::ShapeMismatch(format!(
                "expected {} flow values for {pairs}x2x{height}x{width}, got {}",
                pairs * 2 * p,
                data.len()
            )));
        }
        if valid.len() != pairs * p {
            return Err(Error::ShapeMismatch(format!(
                "expected {} mask values, got {}",
                pairs * p,
                valid.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateValue(
                "flow contains non-finite values".into(),
            ));
        }
        Ok(Self {
            data,
            valid,
            pairs,
            height,
            width,
        })
    }

    /// All-valid flow field.
    pub fn dense(data: Vec<f32>, pairs: usize, height: usize, width: usize) -> Result<Self> {
        let valid = vec![true; pairs * height * width];
        Self::new(data, valid, pairs, height, width)
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn dx(&self, pair: usize) -> &[f32] {
        let p = self.height * self.width;
        &self.data[pair * 2 * p..pair * 2 * p + p]
    }

    pub fn dy(&self, pair: usize) -> &[f32] {
        let p = self.height * self.width;
        &self.data[pair * 2 * p + p..(pair + 1) * 2 * p]
    }

    pub fn valid(&self, pair: usize) -> &[bool] {
        let p = self.height * self.width;
        &self.valid[pair * p..(pair + 1) * p]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    #[default]
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub delta1: f64,
    pub opw: Option<f64>,
    pub opw_x1000: Option<f64>,
    /// Per-video least-squares fit applied to the prediction before the
    /// accuracy metrics.
    pub scale: f64,
    pub shift: f64,
    pub valid_pixels: usize,
    /// Aligned inverse-depth pixels clamped to `eps_inv` before conversion
    /// to depth.
    pub clamped_pixels: usize,
}

fn check_same_shape(a: &DepthVideo, b: &DepthVideo) -> Result<()> {
    if a.frame_count() != b.frame_count() || a.height() != b.height() || a.width() != b.width() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.frame_count(),
            a.height(),
            a.width(),
            b.frame_count(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

fn check_mask_len(video: &DepthVideo, mask: Option<&[bool]>) -> Result<()> {
    if let Some(m) = mask {
        if m.len() != video.data().len() {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} entries for {} pixels",
                m.len(),
                video.data().len()
            )));
        }
    }
    Ok(())
}

fn is_valid(mask: Option<&[bool]>, idx: usize) -> bool {
    mask.map_or(true, |m| m[idx])
}

/// Closed-form least-squares `(scale, shift)` minimizing
/// `sum (scale * pred + shift - gt)^2` over all valid pixels of all frames
/// jointly.
pub fn ls_align(pred: &DepthVideo, gt: &DepthVideo, mask: Option<&[bool]>) -> Result<(f64, f64)> {
    check_same_shape(pred, gt)?;
    check_mask_len(pred, mask)?;
    let mut n = 0.0f64;
    let mut sum_p = 0.0f64;
    let mut sum_pp = 0.0f64;
    let mut sum_g = 0.0f64;
    let mut sum_pg = 0.0f64;
    for (idx, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        if !is_valid(mask, idx) {
            continue;
        }
        let (p, g) = (p as f64, g as f64);
        n += 1.0;
        sum_p += p;
        sum_pp += p * p;
        sum_g += g;
        sum_pg += p * g;
    }
    if n < 2.0 {
        return Err(Error::EmptyMask(format!(
            "least-squares fit needs >= 2 valid pixels, got {n}"
        )));
    }
    let det = n * sum_pp - sum_p * sum_p;
    // Relative rank test: a constant prediction has det == 0 up to rounding.
    if det.abs() <= 1e-12 * n * sum_pp.max(1e-300) {
        return Err(Error::SingularFit(
            "prediction is constant over the valid pixels".into(),
        ));
    }
    let scale = (n * sum_pg - sum_p * sum_g) / det;
    let shift = (sum_pp * sum_g - sum_p * sum_pg) / det;
    Ok((scale, shift))
}

/// Mean of `|pred - gt| / gt` over valid pixels; both videos in depth space.
pub fn abs_rel(pred: &DepthVideo, gt: &DepthVideo, mask: Option<&[bool]>) -> Result<f64> {
    check_same_shape(pred, gt)?;
    check_mask_len(pred, mask)?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (idx, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        if !is_valid(mask, idx) || g <= 0.0 {
            continue;
        }
        sum += ((p as f64) - (g as f64)).abs() / g as f64;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMask("no valid pixels for AbsRel".into()));
    }
    Ok(sum / count as f64)
}

/// Fraction of valid pixels with `max(pred/gt, gt/pred)` strictly below
/// 1.25; both videos in depth space.
pub fn delta1(pred: &DepthVideo, gt: &DepthVideo, mask: Option<&[bool]>) -> Result<f64> {
    check_same_shape(pred, gt)?;
    check_mask_len(pred, mask)?;
    let mut hits = 0usize;
    let mut count = 0usize;
    for (idx, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        if !is_valid(mask, idx) || g <= 0.0 {
            continue;
        }
        count += 1;
        let (p, g) = (p as f64, g as f64);
        if p <= 0.0 {
            continue;
        }
        let ratio = (p / g).max(g / p);
        if ratio < 1.25 {
            hits += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask("no valid pixels for delta1".into()));
    }
    Ok(hits as f64 / count as f64)
}

fn sample(frame: &[f32], h: usize, w: usize, x: f64, y: f64, sampling: Sampling) -> f64 {
    match sampling {
        Sampling::Nearest => {
            let xi = (x.round() as usize).min(w - 1);
            let yi = (y.round() as usize).min(h - 1);
            frame[yi * w + xi] as f64
        }
        Sampling::Bilinear => {
            let x0 = (x.floor() as usize).min(w.saturating_sub(2));
            let y0 = (y.floor() as usize).min(h.saturating_sub(2));
            let fx = (x - x0 as f64).clamp(0.0, 1.0);
            let fy = (y - y0 as f64).clamp(0.0, 1.0);
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let v00 = frame[y0 * w + x0] as f64;
            let v01 = frame[y0 * w + x1] as f64;
            let v10 = frame[y1 * w + x0] as f64;
            let v11 = frame[y1 * w + x1] as f64;
            (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)
        }
    }
}

fn frame_mean_abs(frame: &[f32]) -> f64 {
    let sum: f64 = frame.iter().map(|&v| (v as f64).abs()).sum();
    (sum / frame.len() as f64).max(1e-30)
}

/// Optical-flow-based warping loss with a choice of sampling kernel.
///
/// For each consecutive pair `(t, t+1)` and each valid pixel whose warped
/// position lands in bounds, accumulates the absolute difference between
/// the pixel's value in frame `t` and the sampled value in frame `t+1`,
/// after normalizing each frame by its mean absolute value. Returns the
/// grand mean over all samples (raw, not x1000).
pub fn opw_with_sampling(pred: &DepthVideo, flow: &FlowField, sampling: Sampling) -> Result<f64> {
    if pred.frame_count() < 2 {
        return Err(Error::ShapeMismatch(
            "OPW needs at least two frames".into(),
        ));
    }
    if flow.pairs() != pred.frame_count() - 1
        || flow.height() != pred.height()
        || flow.width() != pred.width()
    {
        return Err(Error::ShapeMismatch(format!(
            "flow {}x{}x{} does not match video with {} frames of {}x{}",
            flow.pairs(),
            flow.height(),
            flow.width(),
            pred.frame_count(),
            pred.height(),
            pred.width()
        )));
    }
    let (h, w) = (pred.height(), pred.width());
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for t in 0..flow.pairs() {
        let cur = pred.frame(t);
        let next = pred.frame(t + 1);
        let mu_cur = frame_mean_abs(cur);
        let mu_next = frame_mean_abs(next);
        let dx = flow.dx(t);
        let dy = flow.dy(t);
        let valid = flow.valid(t);
        for row in 0..h {
            for col in 0..w {
                let idx = row * w + col;
                if !valid[idx] {
                    continue;
                }
                let x = col as f64 + dx[idx] as f64;
                let y = row as f64 + dy[idx] as f64;
                if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
                    continue;
                }
                let warped = sample(next, h, w, x, y, sampling);
                sum += (cur[idx] as f64 / mu_cur - warped / mu_next).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask(
            "no pixel survives flow masking in any pair".into(),
        ));
    }
    Ok(sum / count as f64)
}

/// Optical-flow-based warping loss with bilinear sampling.
pub fn opw(pred: &DepthVideo, flow: &FlowField) -> Result<f64> {
    opw_with_sampling(pred, flow, Sampling::Bilinear)
}

fn to_inverse(space: DepthSpace, v: f64) -> f64 {
    match space {
        DepthSpace::InverseDepth => v,
        DepthSpace::Depth => 1.0 / v,
    }
}

/// Full evaluation protocol: least-squares alignment in inverse-depth
/// space, AbsRel/delta1 in depth space on the aligned prediction, OPW on
/// the aligned depth video when flow is given.
///
/// Valid pixels are those the user mask keeps whose ground truth is
/// strictly positive; the count is reported as `valid_pixels`.
pub fn evaluate(
    pred: &DepthVideo,
    gt: &DepthVideo,
    flow: Option<&FlowField>,
    mask: Option<&[bool]>,
) -> Result<MetricsReport> {
    check_same_shape(pred, gt)?;
    check_mask_len(pred, mask)?;

    // Joint validity and inverse-depth views of both videos.
    let len = pred.data().len();
    let mut valid = vec![false; len];
    let mut pred_inv = vec![0.0f32; len];
    let mut gt_inv = vec![0.0f32; len];
    let mut m = 0usize;
    for idx in 0..len {
        let g = gt.data()[idx] as f64;
        let p = pred.data()[idx] as f64;
        let ok = is_valid(mask, idx) && g > 0.0 && (pred.space() == DepthSpace::InverseDepth || p > 0.0);
        pred_inv[idx] = to_inverse(pred.space(), p) as f32;
        gt_inv[idx] = to_inverse(gt.space(), g) as f32;
        if ok {
            valid[idx] = true;
            m += 1;
        }
    }
    if m == 0 {
        return Err(Error::EmptyMask("no valid pixels".into()));
    }
    let pred_inv = DepthVideo::new(
        pred_inv,
        pred.frame_count(),
        pred.height(),
        pred.width(),
        DepthSpace::InverseDepth,
    )?;
    let gt_inv_video = DepthVideo::new(
        gt_inv.clone(),
        gt.frame_count(),
        gt.height(),
        gt.width(),
        DepthSpace::InverseDepth,
    )?;
    let (scale, shift) = ls_align(&pred_inv, &gt_inv_video, Some(&valid))?;

    // Aligned prediction and ground truth in depth space.
    let mut clamped = 0usize;
    let mut pred_depth = Vec::with_capacity(len);
    let mut gt_depth = Vec::with_capacity(len);
    for idx in 0..len {
        let aligned = scale * pred_inv.data()[idx] as f64 + shift;
        let aligned = if aligned > EPS_INV {
            aligned
        } else {
            clamped += 1;
            EPS_INV
        };
        pred_depth.push((1.0 / aligned) as f32);
        let g_inv = gt_inv[idx] as f64;
        // Invalid ground-truth pixels are masked out of every metric; any
        // positive placeholder keeps the video constructible.
        gt_depth.push(if g_inv > 0.0 { (1.0 / g_inv) as f32 } else { 1.0 });
    }
    let pred_depth = DepthVideo::new(
        pred_depth,
        pred.frame_count(),
        pred.height(),
        pred.width(),
        DepthSpace::Depth,
    )?;
    let gt_depth = DepthVideo::new(
        gt_depth,
        gt.frame_count(),
        gt.height(),
        gt.width(),
        DepthSpace::Depth,
    )?;

    let abs_rel_v = abs_rel(&pred_depth, &gt_depth, Some(&valid))?;
    let delta1_v = delta1(&pred_depth, &gt_depth, Some(&valid))?;
    let opw_v = match flow {
        Some(f) => Some(opw(&pred_depth, f)?),
        None => None,
    };

    Ok(MetricsReport {
        abs_rel: abs_rel_v,
        delta1: delta1_v,
        opw: opw_v,
        opw_x1000: opw_v.map(|v| v * 1e3),
        scale,
        shift,
        valid_pixels: m,
        clamped_pixels: clamped,
    })
}

/// Mean absolute 5-point Laplacian over all interior pixels of all frames;
/// a simple high-frequency energy measure.
pub fn mean_abs_laplacian(video: &DepthVideo) -> f64 {
    let (h, w) = (video.height(), video.width());
    if h < 3 || w < 3 {
        return 0.0;
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for i in 0..video.frame_count() {
        let f = video.frame(i);
        for row in 1..h - 1 {
            for col in 1..w - 1 {
                let c = f[row * w + col] as f64;
                let lap = f[(row - 1) * w + col] as f64
                    + f[(row + 1) * w + col] as f64
                    + f[row * w + col - 1] as f64
                    + f[row * w + col + 1] as f64
                    - 4.0 * c;
                sum += lap.abs();
                count += 1;
            }
        }
    }
    sum / count as f64
}
