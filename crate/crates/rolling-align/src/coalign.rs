//! Joint per-snippet scale/shift estimation and snippet merging.
//!
//! All overlapping depth snippets are registered into one common affine
//! frame by minimizing a robust L1 objective over per-snippet `(s_k, t_k)`:
//! at every video frame, each covering prediction is compared against the
//! per-pixel mean of all aligned predictions for that frame, both in
//! inverse-depth space and (reciprocally) in depth space, each term
//! normalized by the frame's mean absolute value. Soft penalties keep
//! scales from collapsing and shifts from drifting. The solution is found
//! with Adam from `s_k = 1, t_k = 0`, with analytically computed gradients.
//!
//! Aligned snippets are merged into a single video by per-frame pixel-wise
//! averaging.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depth::{AffineParams, DepthSnippet, DepthSpace, DepthVideo, EPS_INV};
use crate::error::{Error, Result};
use crate::scheduler::SnippetSchedule;

/// Guards divisions by per-frame mean magnitudes of degenerate (all-zero)
/// frames.
const MU_FLOOR: f64 = 1e-30;

/// Functional form of the shift penalty.
///
/// The bounded quadratic `lambda2 * t^2` is the default;
/// `linear_as_printed` applies `lambda2 * t`, which is unbounded below and
/// only useful for fidelity experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShiftPenalty {
    #[default]
    Quadratic,
    LinearAsPrinted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoalignConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub steps: usize,
    /// Initial Adam learning rate; decays exponentially to
    /// `learning_rate_final` over the run.
    pub learning_rate: f64,
    pub learning_rate_final: f64,
    /// Per-dilation data-term weights. Dilations absent from the map get
    /// weight equal to the dilation rate itself.
    pub dilation_weights: BTreeMap<usize, f64>,
    pub shift_penalty: ShiftPenalty,
    pub seed: u64,
    pub use_depth_space_term: bool,
    /// Evaluate the objective on every `pixel_subsample`-th pixel per axis
    /// (1 = full resolution). Merging always runs at full resolution.
    pub pixel_subsample: usize,
    pub eps_inv: f64,
}

impl Default for CoalignConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 10.0,
            steps: 2000,
            learning_rate: 1e-3,
            learning_rate_final: 1e-4,
            dilation_weights: BTreeMap::new(),
            shift_penalty: ShiftPenalty::Quadratic,
            seed: 0,
            use_depth_space_term: true,
            pixel_subsample: 1,
            eps_inv: EPS_INV,
        }
    }
}

impl CoalignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidSpec("steps must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.learning_rate_final > 0.0) {
            return Err(Error::InvalidSpec("learning rates must be > 0".into()));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::InvalidSpec("lambdas must be >= 0".into()));
        }
        if self.pixel_subsample == 0 {
            return Err(Error::InvalidSpec("pixel_subsample must be >= 1".into()));
        }
        if !(self.eps_inv > 0.0) {
            return Err(Error::InvalidSpec("eps_inv must be > 0".into()));
        }
        if self.dilation_weights.values().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidSpec("dilation weights must be > 0".into()));
        }
        Ok(())
    }

    fn weight_for(&self, dilation: usize) -> f64 {
        self.dilation_weights
            .get(&dilation)
            .copied()
            .unwrap_or(dilation as f64)
    }

    fn learning_rate_at(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.learning_rate;
        }
        let frac = step as f64 / (self.steps - 1) as f64;
        self.learning_rate * (self.learning_rate_final / self.learning_rate).powf(frac)
    }
}

/// Objective value split into its data and penalty parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub data_terms: f64,
    pub regularizer: f64,
    /// Pixels whose aligned inverse depth was clamped to `eps_inv` before
    /// taking the reciprocal in the depth-space term.
    pub clamped_pixels: u64,
}

/// Gradient of the objective with respect to one snippet's raw `(s, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParamGrad {
    pub d_scale: f64,
    pub d_shift: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentSolution {
    pub params: Vec<AffineParams>,
    pub final_objective: f64,
    /// Objective at the parameters before each step, then at the
    /// post-update parameters, then at the returned (best-seen) parameters.
    pub objective_trace: Vec<f64>,
    pub clamped_pixels: u64,
    pub config: CoalignConfig,
}

// ---------------------------------------------------------------------------
// Problem layout
// ---------------------------------------------------------------------------

/// Frame-major copy of all snippet pixel data (optionally subsampled), with
/// per-frame prediction lists. Built once per solve.
struct Problem {
    /// All prediction pixels, frame-major: predictions of frame 0, then
    /// frame 1, ... Each prediction occupies `pixels` contiguous values.
    data: Vec<f32>,
    /// Snippet index of each prediction, in the same order.
    pred_snippet: Vec<u32>,
    /// Predictions of frame `i` are `pred_snippet[frame_offsets[i]..frame_offsets[i+1]]`.
    frame_offsets: Vec<usize>,
    /// Pixels per prediction after subsampling.
    pixels: usize,
    /// Per-snippet data-term weight.
    weights: Vec<f64>,
    use_depth_space_term: bool,
    eps_inv: f64,
}

fn check_consistency(schedule: &SnippetSchedule, snippets: &[DepthSnippet]) -> Result<(usize, usize)> {
    if let Some(frame) = schedule.first_uncovered_frame() {
        return Err(Error::InvalidSchedule(format!(
            "frame {frame} has no covering snippet; alignment needs full coverage"
        )));
    }
    if snippets.len() != schedule.snippet_count() {
        return Err(Error::ShapeMismatch(format!(
            "schedule has {} snippets, got {}",
            schedule.snippet_count(),
            snippets.len()
        )));
    }
    if snippets.is_empty() {
        return Err(Error::ShapeMismatch("no snippets".into()));
    }
    let (h, w) = (snippets[0].height(), snippets[0].width());
    for (spec, snip) in schedule.snippets().iter().zip(snippets) {
        if snip.snippet_id() != spec.id
            || snip.frame_indices() != spec.frames.as_slice()
            || snip.dilation() != spec.dilation
        {
            return Err(Error::ShapeMismatch(format!(
                "snippet {} does not match its schedule entry",
                spec.id
            )));
        }
        if snip.height() != h || snip.width() != w {
            return Err(Error::ShapeMismatch(format!(
                "snippet {} is {}x{}, expected {h}x{w}",
                spec.id,
                snip.height(),
                snip.width()
            )));
        }
    }
    Ok((h, w))
}

impl Problem {
    fn build(
        schedule: &SnippetSchedule,
        snippets: &[DepthSnippet],
        cfg: &CoalignConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let (h, w) = check_consistency(schedule, snippets)?;
        let ss = cfg.pixel_subsample;
        let rows = (h - 1) / ss + 1;
        let cols = (w - 1) / ss + 1;
        let pixels = rows * cols;

        let total_preds: usize = (0..schedule.frame_count())
            .map(|i| schedule.coverage_count(i))
            .sum();
        let mut data = Vec::with_capacity(total_preds * pixels);
        let mut pred_snippet = Vec::with_capacity(total_preds);
        let mut frame_offsets = Vec::with_capacity(schedule.frame_count() + 1);
        frame_offsets.push(0);
        for i in 0..schedule.frame_count() {
            for entry in schedule.coverage(i) {
                let src = snippets[entry.snippet_id].slot(entry.slot);
                if ss == 1 {
                    data.extend_from_slice(src);
                } else {
                    for row in (0..h).step_by(ss) {
                        for col in (0..w).step_by(ss) {
                            data.push(src[row * w + col]);
                        }
                    }
                }
                pred_snippet.push(entry.snippet_id as u32);
            }
            frame_offsets.push(pred_snippet.len());
        }

        let weights = schedule
            .snippets()
            .iter()
            .map(|s| cfg.weight_for(s.dilation))
            .collect();
        Ok(Self {
            data,
            pred_snippet,
            frame_offsets,
            pixels,
            weights,
            use_depth_space_term: cfg.use_depth_space_term,
            eps_inv: cfg.eps_inv,
        })
    }

    fn pred_pixels(&self, pred_idx: usize) -> &[f32] {
        &self.data[pred_idx * self.pixels..(pred_idx + 1) * self.pixels]
    }
}

// ---------------------------------------------------------------------------
// Objective kernel
// ---------------------------------------------------------------------------

/// Per-frame partial result; folded in frame order for determinism.
#[derive(Default, Clone)]
struct FrameOut {
    loss: f64,
    clamped: u64,
    grads: Vec<(u32, f64, f64)>,
}

/// Reusable per-worker buffers.
#[derive(Default)]
struct Scratch {
    y: Vec<f64>,
    r: Vec<f64>,
    m: Vec<f64>,
    q: Vec<f64>,
    gm: Vec<f64>,
    gq: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

fn sgn(x: f64) -> f64 {
    1.0f64.copysign(x)
}

fn eval_frame(
    problem: &Problem,
    frame: usize,
    scale: &[f64],
    shift: &[f64],
    want_grad: bool,
    scratch: &mut Scratch,
    out: &mut FrameOut,
) {
    let p = problem.pixels;
    let begin = problem.frame_offsets[frame];
    let end = problem.frame_offsets[frame + 1];
    let n = end - begin;
    let inv_n = 1.0 / n as f64;
    let inv_p = 1.0 / p as f64;
    let eps = problem.eps_inv;
    let depth_term = problem.use_depth_space_term;

    scratch.y.resize(n * p, 0.0);
    scratch.m.clear();
    scratch.m.resize(p, 0.0);
    scratch.u.clear();
    scratch.u.resize(n, 0.0);
    if depth_term {
        scratch.r.resize(n * p, 0.0);
        scratch.q.clear();
        scratch.q.resize(p, 0.0);
        scratch.v.clear();
        scratch.v.resize(n, 0.0);
    }

    out.loss = 0.0;
    out.clamped = 0;
    out.grads.clear();

    // Aligned predictions, their reciprocals, and per-pixel means.
    let mut clamped = 0u64;
    for j in 0..n {
        let k = problem.pred_snippet[begin + j] as usize;
        let (s, t) = (scale[k], shift[k]);
        let x = problem.pred_pixels(begin + j);
        let yrow = &mut scratch.y[j * p..(j + 1) * p];
        for (px, (yv, &xv)) in yrow.iter_mut().zip(x).enumerate() {
            let val = s * xv as f64 + t;
            *yv = val;
            scratch.m[px] += val;
        }
        if depth_term {
            let rrow = &mut scratch.r[j * p..(j + 1) * p];
            for (px, (rv, yv)) in rrow.iter_mut().zip(&scratch.y[j * p..(j + 1) * p]).enumerate() {
                if *yv > eps {
                    *rv = 1.0 / *yv;
                } else {
                    *rv = 1.0 / eps;
                    clamped += 1;
                }
                scratch.q[px] += *rv;
            }
        }
    }
    out.clamped = clamped;
    let mut mu_hat = 0.0;
    for mv in scratch.m.iter_mut() {
        *mv *= inv_n;
        mu_hat += mv.abs();
    }
    let mu_hat = (mu_hat * inv_p).max(MU_FLOOR);
    let mut mu_tilde = 0.0;
    if depth_term {
        for qv in scratch.q.iter_mut() {
            *qv *= inv_n;
            mu_tilde += qv.abs();
        }
    }
    let mu_tilde = (mu_tilde * inv_p).max(MU_FLOOR);

    // Per-prediction mean absolute residuals.
    for j in 0..n {
        let yrow = &scratch.y[j * p..(j + 1) * p];
        let mut acc = 0.0;
        for (yv, mv) in yrow.iter().zip(&scratch.m) {
            acc += (yv - mv).abs();
        }
        scratch.u[j] = acc * inv_p;
        if depth_term {
            let rrow = &scratch.r[j * p..(j + 1) * p];
            let mut acc = 0.0;
            for (rv, qv) in rrow.iter().zip(&scratch.q) {
                acc += (rv - qv).abs();
            }
            scratch.v[j] = acc * inv_p;
        }
    }

    let mut loss = 0.0;
    let mut weighted_u = 0.0;
    let mut weighted_v = 0.0;
    for j in 0..n {
        let wj = problem.weights[problem.pred_snippet[begin + j] as usize];
        weighted_u += wj * scratch.u[j];
        if depth_term {
            weighted_v += wj * scratch.v[j];
        }
    }
    loss += weighted_u / mu_hat;
    if depth_term {
        loss += weighted_v / mu_tilde;
    }
    out.loss = loss;

    if !want_grad {
        return;
    }

    // Adjoints of the per-pixel means (and of mu via their sign patterns).
    scratch.gm.clear();
    scratch.gm.resize(p, 0.0);
    if depth_term {
        scratch.gq.clear();
        scratch.gq.resize(p, 0.0);
    }
    for j in 0..n {
        let wj = problem.weights[problem.pred_snippet[begin + j] as usize];
        let a_j = wj * inv_p / mu_hat;
        let yrow = &scratch.y[j * p..(j + 1) * p];
        for ((gmv, yv), mv) in scratch.gm.iter_mut().zip(yrow).zip(&scratch.m) {
            *gmv -= a_j.copysign(yv - mv);
        }
        if depth_term {
            let b_j = wj * inv_p / mu_tilde;
            let rrow = &scratch.r[j * p..(j + 1) * p];
            for ((gqv, rv), qv) in scratch.gq.iter_mut().zip(rrow).zip(&scratch.q) {
                *gqv -= b_j.copysign(rv - qv);
            }
        }
    }
    let d_mu_hat = -(weighted_u / (mu_hat * mu_hat)) * inv_p;
    for (gmv, mv) in scratch.gm.iter_mut().zip(&scratch.m) {
        *gmv += d_mu_hat * sgn(*mv);
    }
    if depth_term {
        let d_mu_tilde = -(weighted_v / (mu_tilde * mu_tilde)) * inv_p;
        for (gqv, qv) in scratch.gq.iter_mut().zip(&scratch.q) {
            *gqv += d_mu_tilde * sgn(*qv);
        }
    }

    // Back to each prediction's (s, t).
    for j in 0..n {
        let k = problem.pred_snippet[begin + j];
        let wj = problem.weights[k as usize];
        let a_j = wj * inv_p / mu_hat;
        let b_j = wj * inv_p / mu_tilde;
        let x = problem.pred_pixels(begin + j);
        let yrow = &scratch.y[j * p..(j + 1) * p];
        let mut sum_gs = 0.0;
        let mut sum_gt = 0.0;
        if depth_term {
            let rrow = &scratch.r[j * p..(j + 1) * p];
            for px in 0..p {
                let yv = yrow[px];
                let mut gy = a_j.copysign(yv - scratch.m[px]) + scratch.gm[px] * inv_n;
                let rv = rrow[px];
                let gr = b_j.copysign(rv - scratch.q[px]) + scratch.gq[px] * inv_n;
                if yv > eps {
                    gy -= gr * rv * rv;
                }
                sum_gs += gy * x[px] as f64;
                sum_gt += gy;
            }
        } else {
            for px in 0..p {
                let gy = a_j.copysign(yrow[px] - scratch.m[px]) + scratch.gm[px] * inv_n;
                sum_gs += gy * x[px] as f64;
                sum_gt += gy;
            }
        }
        out.grads.push((k, sum_gs, sum_gt));
    }
}

/// Full objective (and optionally its gradient) at raw `(s, t)` values.
fn eval_objective(
    problem: &Problem,
    cfg: &CoalignConfig,
    scale: &[f64],
    shift: &[f64],
    frame_outs: &mut Vec<FrameOut>,
    grads: Option<&mut [ParamGrad]>,
) -> ObjectiveValue {
    let frame_count = problem.frame_offsets.len() - 1;
    frame_outs.resize_with(frame_count, FrameOut::default);
    let want_grad = grads.is_some();
    frame_outs
        .par_iter_mut()
        .enumerate()
        .for_each_init(Scratch::default, |scratch, (i, out)| {
            eval_frame(problem, i, scale, shift, want_grad, scratch, out);
        });

    // Deterministic fixed-order reductions.
    let mut data_terms = 0.0;
    let mut clamped = 0u64;
    for out in frame_outs.iter() {
        data_terms += out.loss;
        clamped += out.clamped;
    }
    let mut regularizer = 0.0;
    for k in 0..scale.len() {
        let under = (1.0 - scale[k]).max(0.0);
        regularizer += cfg.lambda1 * under * under;
        regularizer += match cfg.shift_penalty {
            ShiftPenalty::Quadratic => cfg.lambda2 * shift[k] * shift[k],
            ShiftPenalty::LinearAsPrinted => cfg.lambda2 * shift[k],
        };
    }
    if let Some(grads) = grads {
        for g in grads.iter_mut() {
            *g = ParamGrad::default();
        }
        for out in frame_outs.iter() {
            for &(k, gs, gt) in &out.grads {
                grads[k as usize].d_scale += gs;
                grads[k as usize].d_shift += gt;
            }
        }
        for k in 0..scale.len() {
            let under = (1.0 - scale[k]).max(0.0);
            grads[k].d_scale += -2.0 * cfg.lambda1 * under;
            grads[k].d_shift += match cfg.shift_penalty {
                ShiftPenalty::Quadratic => 2.0 * cfg.lambda2 * shift[k],
                ShiftPenalty::LinearAsPrinted => cfg.lambda2,
            };
        }
    }
    ObjectiveValue {
        total: data_terms + regularizer,
        data_terms,
        regularizer,
        clamped_pixels: clamped,
    }
}

fn split_params(params: &[AffineParams]) -> (Vec<f64>, Vec<f64>) {
    (
        params.iter().map(|p| p.scale).collect(),
        params.iter().map(|p| p.shift).collect(),
    )
}

/// Evaluate the co-alignment objective at the given parameters.
pub fn objective(
    schedule: &SnippetSchedule,
    snippets: &[DepthSnippet],
    params: &[AffineParams],
    cfg: &CoalignConfig,
) -> Result<ObjectiveValue> {
    let problem = Problem::build(schedule, snippets, cfg)?;
    if params.len() != schedule.snippet_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} params for {} snippets",
            params.len(),
            schedule.snippet_count()
        )));
    }
    let (scale, shift) = split_params(params);
    let mut frame_outs = Vec::new();
    Ok(eval_objective(&problem, cfg, &scale, &shift, &mut frame_outs, None))
}

/// Objective plus its analytic gradient with respect to each snippet's raw
/// `(scale, shift)`.
pub fn objective_gradient(
    schedule: &SnippetSchedule,
    snippets: &[DepthSnippet],
    params: &[AffineParams],
    cfg: &CoalignConfig,
) -> Result<(ObjectiveValue, Vec<ParamGrad>)> {
    let problem = Problem::build(schedule, snippets, cfg)?;
    if params.len() != schedule.snippet_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} params for {} snippets",
            params.len(),
            schedule.snippet_count()
        )));
    }
    let (scale, shift) = split_params(params);
    let mut frame_outs = Vec::new();
    let mut grads = vec![ParamGrad::default(); params.len()];
    let value = eval_objective(&problem, cfg, &scale, &shift, &mut frame_outs, Some(&mut grads));
    Ok((value, grads))
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: usize,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Jointly estimate per-snippet affine parameters by minimizing the
/// co-alignment objective with Adam.
///
/// Scales stay positive by optimizing `log s`; the best-seen parameters
/// along the trace are returned. Results are bit-identical for a given
/// config regardless of thread count.
pub fn solve(
    schedule: &SnippetSchedule,
    snippets: &[DepthSnippet],
    cfg: &CoalignConfig,
) -> Result<AlignmentSolution> {
    let problem = Problem::build(schedule, snippets, cfg)?;
    let n_t = schedule.snippet_count();

    let mut log_scale = vec![0.0f64; n_t];
    let mut shift = vec![0.0f64; n_t];
    let mut scale = vec![1.0f64; n_t];

    let mut adam = Adam::new(2 * n_t);
    let mut grads = vec![ParamGrad::default(); n_t];
    let mut packed_params = vec![0.0f64; 2 * n_t];
    let mut packed_grads = vec![0.0f64; 2 * n_t];
    let mut frame_outs: Vec<FrameOut> = Vec::new();

    let mut trace = Vec::with_capacity(cfg.steps + 2);
    let mut best_objective = f64::INFINITY;
    let mut best_clamped = 0u64;
    let mut best_scale = scale.clone();
    let mut best_shift = shift.clone();

    for step in 0..=cfg.steps {
        let value = eval_objective(
            &problem,
            cfg,
            &scale,
            &shift,
            &mut frame_outs,
            Some(&mut grads),
        );
        if !value.total.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("objective = {}", value.total),
            });
        }
        trace.push(value.total);
        if value.total < best_objective {
            best_objective = value.total;
            best_clamped = value.clamped_pixels;
            best_scale.copy_from_slice(&scale);
            best_shift.copy_from_slice(&shift);
        }
        if step == cfg.steps {
            break;
        }

        for k in 0..n_t {
            // d/d(log s) = s * d/ds.
            packed_grads[k] = grads[k].d_scale * scale[k];
            packed_grads[n_t + k] = grads[k].d_shift;
        }
        if packed_grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                step,
                detail: "gradient is non-finite".into(),
            });
        }
        packed_params[..n_t].copy_from_slice(&log_scale);
        packed_params[n_t..].copy_from_slice(&shift);
        adam.update(&mut packed_params, &packed_grads, cfg.learning_rate_at(step));
        log_scale.copy_from_slice(&packed_params[..n_t]);
        shift.copy_from_slice(&packed_params[n_t..]);
        for k in 0..n_t {
            scale[k] = log_scale[k].exp();
        }
    }

    if trace.last() != Some(&best_objective) {
        trace.push(best_objective);
    }

    let params = best_scale
        .iter()
        .zip(&best_shift)
        .map(|(&s, &t)| AffineParams::new(s, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignmentSolution {
        params,
        final_objective: best_objective,
        objective_trace: trace,
        clamped_pixels: best_clamped,
        config: cfg.clone(),
    })
}

/// Average all aligned snippet predictions into one inverse-depth video.
pub fn merge(
    schedule: &SnippetSchedule,
    snippets: &[DepthSnippet],
    params: &[AffineParams],
) -> Result<DepthVideo> {
    let (h, w) = check_consistency(schedule, snippets)?;
    if params.len() != schedule.snippet_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} params for {} snippets",
            params.len(),
            schedule.snippet_count()
        )));
    }
    let p = h * w;
    let n_f = schedule.frame_count();
    let mut out = Vec::with_capacity(n_f * p);
    let mut acc = vec![0.0f64; p];
    for i in 0..n_f {
        acc.fill(0.0);
        let cov = schedule.coverage(i);
        for entry in cov {
            let prm = params[entry.snippet_id];
            let src = snippets[entry.snippet_id].slot(entry.slot);
            for (a, &x) in acc.iter_mut().zip(src) {
                *a += prm.scale * x as f64 + prm.shift;
            }
        }
        let inv_n = 1.0 / cov.len() as f64;
        out.extend(acc.iter().map(|a| (a * inv_n) as f32));
    }
    DepthVideo::new(out, n_f, h, w, DepthSpace::InverseDepth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{build_schedule, SnippetSpec};

    /// Schedule with `count` single-frame snippets all covering frame 0.
    fn stacked_schedule(count: usize) -> SnippetSchedule {
        let specs = (0..count)
            .map(|id| SnippetSpec {
                id,
                dilation: 1,
                frames: vec![0],
            })
            .collect();
        SnippetSchedule::from_specs(specs, 1, 1, 1).unwrap()
    }

    fn single_frame_snippet(id: usize, values: &[f32]) -> DepthSnippet {
        DepthSnippet::new(values.to_vec(), vec![0], 1, id, 1, values.len()).unwrap()
    }

    fn plain_cfg() -> CoalignConfig {
        CoalignConfig {
            dilation_weights: [(1, 1.0)].into_iter().collect(),
            ..CoalignConfig::default()
        }
    }

    #[test]
    fn single_snippet_identity_objective_is_zero() {
        let schedule = stacked_schedule(1);
        let snippets = vec![single_frame_snippet(0, &[0.5, 1.0, 1.5, 2.0])];
        let value = objective(&schedule, &snippets, &[AffineParams::IDENTITY], &plain_cfg()).unwrap();
        assert_eq!(value.total, 0.0);
        assert_eq!(value.clamped_pixels, 0);
    }

    #[test]
    fn identical_snippets_identity_objective_is_zero() {
        let schedule = stacked_schedule(2);
        let vals = [0.5f32, 1.0, 1.5, 2.0];
        let snippets = vec![
            single_frame_snippet(0, &vals),
            single_frame_snippet(1, &vals),
        ];
        let params = [AffineParams::IDENTITY, AffineParams::IDENTITY];
        let value = objective(&schedule, &snippets, &params, &plain_cfg()).unwrap();
        assert_eq!(value.total, 0.0);
    }

    #[test]
    fn hand_evaluated_regularizer_case() {
        // B = 2A + 0.5 with exactly representable inputs; params
        // A = identity, B = (0.5, -0.25) align the data exactly, leaving
        // only 0.1 * 0.5^2 + 10 * 0.25^2 = 0.65.
        let a_vals = [1.0f32, 1.25, 1.5, 2.0];
        let b_vals: Vec<f32> = a_vals.iter().map(|v| 2.0 * v + 0.5).collect();
        let schedule = stacked_schedule(2);
        let snippets = vec![
            single_frame_snippet(0, &a_vals),
            single_frame_snippet(1, &b_vals),
        ];
        let params = [
            AffineParams::IDENTITY,
            AffineParams::new(0.5, -0.25).unwrap(),
        ];
        let value = objective(&schedule, &snippets, &params, &plain_cfg()).unwrap();
        assert!(value.data_terms.abs() < 1e-12, "{}", value.data_terms);
        assert!((value.regularizer - 0.65).abs() < 1e-12);
        assert!((value.total - 0.65).abs() < 1e-12);
    }

    #[test]
    fn linear_shift_penalty_as_printed() {
        let schedule = stacked_schedule(1);
        let snippets = vec![single_frame_snippet(0, &[1.0, 2.0])];
        let cfg = CoalignConfig {
            shift_penalty: ShiftPenalty::LinearAsPrinted,
            ..plain_cfg()
        };
        let params = [AffineParams::new(1.0, 0.3).unwrap()];
        let value = objective(&schedule, &snippets, &params, &cfg).unwrap();
        assert!((value.regularizer - 10.0 * 0.3).abs() < 1e-12);
    }

    #[test]
    fn dropping_depth_space_term_gives_pure_inverse_depth_loss() {
        let schedule = stacked_schedule(2);
        let snippets = vec![
            single_frame_snippet(0, &[1.0, 2.0, 3.0, 4.0]),
            single_frame_snippet(1, &[1.5, 2.0, 2.5, 4.5]),
        ];
        let params = [AffineParams::IDENTITY, AffineParams::IDENTITY];
        let cfg_full = plain_cfg();
        let cfg_inv_only = CoalignConfig {
            use_depth_space_term: false,
            ..plain_cfg()
        };
        let full = objective(&schedule, &snippets, &params, &cfg_full).unwrap();
        let inv_only = objective(&schedule, &snippets, &params, &cfg_inv_only).unwrap();
        assert!(inv_only.data_terms > 0.0);
        assert!(full.data_terms > inv_only.data_terms);

        // The inverse-depth part alone, by hand: residuals vs the mean,
        // normalized by the mean absolute mean.
        let mean = [1.25f64, 2.0, 2.75, 4.25];
        let mu: f64 = mean.iter().map(|m| m.abs()).sum::<f64>() / 4.0;
        let u0: f64 = [0.25f64, 0.0, 0.25, 0.25].iter().sum::<f64>() / 4.0;
        let expected = 2.0 * u0 / mu;
        assert!((inv_only.data_terms - expected).abs() < 1e-12);
    }

    #[test]
    fn clamped_pixels_are_counted() {
        let schedule = stacked_schedule(1);
        let snippets = vec![single_frame_snippet(0, &[1.0, 2.0, 3.0, 4.0])];
        // A large negative shift drives aligned values below eps_inv.
        let params = [AffineParams::new(1.0, -2.5).unwrap()];
        let value = objective(&schedule, &snippets, &params, &plain_cfg()).unwrap();
        assert_eq!(value.clamped_pixels, 2);
    }

    #[test]
    fn single_snippet_solve_stays_at_identity() {
        let schedule = stacked_schedule(1);
        let snippets = vec![single_frame_snippet(0, &[0.5, 1.0, 1.5, 2.0])];
        let cfg = CoalignConfig {
            steps: 50,
            ..plain_cfg()
        };
        let sol = solve(&schedule, &snippets, &cfg).unwrap();
        assert!((sol.params[0].scale - 1.0).abs() < 1e-6);
        assert!(sol.params[0].shift.abs() < 1e-6);
        assert!(sol.final_objective < 1e-9);
        assert_eq!(sol.objective_trace.last(), Some(&sol.final_objective));
    }

    #[test]
    fn solve_is_deterministic() {
        let (schedule, _) = build_schedule(6, 3, &[1], 1).unwrap();
        let mut snippets = Vec::new();
        for spec in schedule.snippets() {
            let vals: Vec<f32> = spec
                .frames
                .iter()
                .flat_map(|&f| {
                    (0..4).map(move |px| 0.6 + 0.1 * f as f32 + 0.05 * px as f32 + 0.07 * spec.id as f32)
                })
                .collect();
            snippets.push(
                DepthSnippet::new(vals, spec.frames.clone(), spec.dilation, spec.id, 1, 4).unwrap(),
            );
        }
        let cfg = CoalignConfig {
            steps: 40,
            ..CoalignConfig::default()
        };
        let a = solve(&schedule, &snippets, &cfg).unwrap();
        let b = solve(&schedule, &snippets, &cfg).unwrap();
        assert_eq!(a.objective_trace, b.objective_trace);
        for (pa, pb) in a.params.iter().zip(&b.params) {
            assert_eq!(pa.scale.to_bits(), pb.scale.to_bits());
            assert_eq!(pa.shift.to_bits(), pb.shift.to_bits());
        }
    }

    #[test]
    fn solve_descends() {
        let (schedule, _) = build_schedule(5, 3, &[1], 1).unwrap();
        let mut snippets = Vec::new();
        for spec in schedule.snippets() {
            let s = 1.0 + 0.3 * spec.id as f32;
            let t = 0.1 * spec.id as f32 - 0.1;
            let vals: Vec<f32> = spec
                .frames
                .iter()
                .flat_map(|&f| (0..6).map(move |px| s * (1.0 + 0.1 * (f + px) as f32) + t))
                .collect();
            snippets.push(
                DepthSnippet::new(vals, spec.frames.clone(), spec.dilation, spec.id, 2, 3).unwrap(),
            );
        }
        let cfg = CoalignConfig {
            steps: 200,
            ..CoalignConfig::default()
        };
        let sol = solve(&schedule, &snippets, &cfg).unwrap();
        assert!(sol.final_objective <= sol.objective_trace[0]);
        let min = sol
            .objective_trace
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(sol.final_objective <= min * 1.01 + 1e-12);
        assert!(sol.params.iter().all(|p| p.scale > 0.0));
    }

    #[test]
    fn merge_averages_aligned_predictions() {
        let schedule = stacked_schedule(2);
        let snippets = vec![
            single_frame_snippet(0, &[1.0, 1.0]),
            single_frame_snippet(1, &[3.0, 3.0]),
        ];
        let params = [AffineParams::IDENTITY, AffineParams::IDENTITY];
        let merged = merge(&schedule, &snippets, &params).unwrap();
        assert_eq!(merged.data(), &[2.0, 2.0]);
        assert_eq!(merged.space(), DepthSpace::InverseDepth);
    }

    #[test]
    fn merge_of_identical_constants_is_identity() {
        let (schedule, _) = build_schedule(5, 3, &[1], 1).unwrap();
        let snippets: Vec<DepthSnippet> = schedule
            .snippets()
            .iter()
            .map(|spec| {
                DepthSnippet::new(
                    vec![0.7; 3 * 4],
                    spec.frames.clone(),
                    spec.dilation,
                    spec.id,
                    2,
                    2,
                )
                .unwrap()
            })
            .collect();
        let params = vec![AffineParams::IDENTITY; schedule.snippet_count()];
        let merged = merge(&schedule, &snippets, &params).unwrap();
        assert!(merged.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn subsample_matches_full_resolution_on_uniform_frames() {
        // With spatially constant frames the subsampled objective equals
        // the full-resolution one exactly.
        let schedule = stacked_schedule(2);
        let snippets = vec![
            single_frame_snippet(0, &[1.0; 16]),
            single_frame_snippet(1, &[2.0; 16]),
        ];
        let params = [AffineParams::IDENTITY, AffineParams::IDENTITY];
        let full = objective(&schedule, &snippets, &params, &plain_cfg()).unwrap();
        let sub_cfg = CoalignConfig {
            pixel_subsample: 4,
            ..plain_cfg()
        };
        let sub = objective(&schedule, &snippets, &params, &sub_cfg).unwrap();
        assert!((full.total - sub.total).abs() < 1e-12);
    }
}
