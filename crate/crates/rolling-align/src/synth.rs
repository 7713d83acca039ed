//! Ground-truth oracle: analytic depth videos with exact flow, plus
//! schedule-conforming snippet extraction with known affine corruption and
//! noise. Everything is closed-form per pixel and frame, so depth and flow
//! are consistent by construction and recovery can be checked
//! quantitatively.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::depth::{AffineParams, DepthSnippet, DepthSpace, DepthVideo, EPS_INV};
use crate::error::{Error, Result};
use crate::evalkit::FlowField;
use crate::scheduler::SnippetSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Tilted inverse-depth ramp sliding across the image.
    TranslatingPlane,
    /// Field of smooth bumps rigidly rotating around the image center.
    OrbitingSphereField,
    /// Static far background; a near disk enters mid-video and grows.
    NearObjectIntrusion,
    /// Static pattern whose inverse-depth span widens sharply at one frame.
    DepthRangeJump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Pixels per frame along (x, y); translating_plane only.
    pub velocity: (f64, f64),
    /// Radians per frame; orbiting_sphere_field only.
    pub angular_velocity: f64,
    /// Frame at which the intrusion or range jump happens
    /// (default: frames / 2).
    pub event_frame: Option<usize>,
    /// Span multiplier across the jump; depth_range_jump only.
    pub range_factor: f64,
}

impl SceneSpec {
    pub fn new(kind: SceneKind, frames: usize, height: usize, width: usize, seed: u64) -> Self {
        Self {
            kind,
            frames,
            height,
            width,
            seed,
            velocity: (0.75, -0.5),
            angular_velocity: std::f64::consts::TAU / 150.0,
            event_frame: None,
            range_factor: 5.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidSpec(format!(
                "scene dimensions must be positive, got {}x{}x{}",
                self.frames, self.height, self.width
            )));
        }
        if let Some(e) = self.event_frame {
            if e >= self.frames {
                return Err(Error::InvalidSpec(format!(
                    "event frame {e} outside video of {} frames",
                    self.frames
                )));
            }
        }
        if !(self.range_factor >= 1.0) {
            return Err(Error::InvalidSpec(
                "range factor must be >= 1".into(),
            ));
        }
        if !self.velocity.0.is_finite()
            || !self.velocity.1.is_finite()
            || !self.angular_velocity.is_finite()
        {
            return Err(Error::InvalidSpec("motion parameters must be finite".into()));
        }
        Ok(())
    }

    fn event(&self) -> usize {
        self.event_frame.unwrap_or(self.frames / 2)
    }
}

/// Smooth periodic field in [-1, 1] built from a few seeded sinusoids.
struct SinField {
    comps: Vec<(f64, f64, f64, f64)>, // amp, fx, fy, phase
    norm: f64,
}

impl SinField {
    fn new(rng: &mut ChaCha8Rng, count: usize, max_freq: u32) -> Self {
        let comps: Vec<_> = (0..count)
            .map(|_| {
                (
                    rng.gen_range(0.5..1.0),
                    rng.gen_range(1..=max_freq) as f64,
                    rng.gen_range(1..=max_freq) as f64,
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let norm: f64 = comps.iter().map(|c| c.0).sum();
        Self { comps, norm }
    }

    /// `u`, `v` in units of one period.
    fn eval(&self, u: f64, v: f64) -> f64 {
        let mut acc = 0.0;
        for &(amp, fx, fy, phase) in &self.comps {
            acc += amp * (std::f64::consts::TAU * (fx * u + fy * v) + phase).sin();
        }
        acc / self.norm
    }
}

/// Field of smooth positive bumps in pixel coordinates.
struct BumpField {
    bumps: Vec<(f64, f64, f64, f64)>, // cx, cy, sigma, amp
    base: f64,
}

impl BumpField {
    fn new(rng: &mut ChaCha8Rng, height: usize, width: usize, base: f64) -> Self {
        let min_side = height.min(width) as f64;
        let (cx0, cy0) = (width as f64 / 2.0, height as f64 / 2.0);
        let bumps = (0..5)
            .map(|_| {
                let radius = rng.gen_range(0.0..0.4 * min_side);
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                (
                    cx0 + radius * angle.cos(),
                    cy0 + radius * angle.sin(),
                    // Gentle bumps: low curvature keeps bilinear warping of
                    // the sampled frames accurate to ~1e-4.
                    rng.gen_range(0.22..0.35) * min_side,
                    rng.gen_range(0.03..0.06) * base,
                )
            })
            .collect();
        Self { bumps, base }
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        let mut acc = self.base;
        for &(cx, cy, sigma, amp) in &self.bumps {
            let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            acc += amp * (-d2 / (2.0 * sigma * sigma)).exp();
        }
        acc
    }
}

/// Generate the analytic inverse-depth video and its exact forward flow.
pub fn generate(spec: &SceneSpec) -> Result<(DepthVideo, FlowField)> {
    spec.validate()?;
    let (n_f, h, w) = (spec.frames, spec.height, spec.width);
    let p = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pairs = n_f.saturating_sub(1);

    let mut depth = Vec::with_capacity(n_f * p);
    let mut flow = vec![0.0f32; pairs * 2 * p];
    let mut valid = vec![true; pairs * p];

    match spec.kind {
        SceneKind::TranslatingPlane => {
            let base = rng.gen_range(0.9..1.1);
            let ax = rng.gen_range(0.10..0.175) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let ay = rng.gen_range(0.10..0.175) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let (vx, vy) = spec.velocity;
            let span_x = (w as f64 - 1.0) + vx.abs() * pairs as f64;
            let span_y = (h as f64 - 1.0) + vy.abs() * pairs as f64;
            let sx = ax / span_x.max(1.0);
            let sy = ay / span_y.max(1.0);
            for t in 0..n_f {
                for row in 0..h {
                    for col in 0..w {
                        let x = col as f64 - vx * t as f64;
                        let y = row as f64 - vy * t as f64;
                        depth.push((base * (1.0 + sx * x + sy * y)) as f32);
                    }
                }
            }
            for t in 0..pairs {
                let off = t * 2 * p;
                flow[off..off + p].fill(vx as f32);
                flow[off + p..off + 2 * p].fill(vy as f32);
            }
        }
        SceneKind::OrbitingSphereField => {
            let base = rng.gen_range(0.9..1.1);
            let field = BumpField::new(&mut rng, h, w, base);
            let (cx0, cy0) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
            let omega = spec.angular_velocity;
            for t in 0..n_f {
                let (sin_b, cos_b) = (-(omega * t as f64)).sin_cos();
                for row in 0..h {
                    for col in 0..w {
                        // Rotate back into pattern coordinates.
                        let dx = col as f64 - cx0;
                        let dy = row as f64 - cy0;
                        let u = cx0 + cos_b * dx - sin_b * dy;
                        let v = cy0 + sin_b * dx + cos_b * dy;
                        depth.push(field.eval(u, v) as f32);
                    }
                }
            }
            let (sin_f, cos_f) = omega.sin_cos();
            for t in 0..pairs {
                let off = t * 2 * p;
                for row in 0..h {
                    for col in 0..w {
                        let dx = col as f64 - cx0;
                        let dy = row as f64 - cy0;
                        let idx = row * w + col;
                        flow[off + idx] = (cos_f * dx - sin_f * dy - dx) as f32;
                        flow[off + p + idx] = (sin_f * dx + cos_f * dy - dy) as f32;
                    }
                }
            }
        }
        SceneKind::NearObjectIntrusion => {
            // Background depth in [1/0.15, 1/0.10] = [6.7, 10]; the disk
            // sits at depth 0.4.
            let pattern = SinField::new(&mut rng, 4, 2);
            let event = spec.event();
            let disk_iz = 2.5f64;
            let (cx, cy) = (
                (w as f64 - 1.0) / 2.0 * rng.gen_range(0.8..1.2),
                (h as f64 - 1.0) / 2.0 * rng.gen_range(0.8..1.2),
            );
            let min_side = h.min(w) as f64;
            let r0 = 0.15 * min_side;
            let growth = 0.15 * min_side;
            let radius_at = |t: usize| -> f64 {
                if t < event {
                    return 0.0;
                }
                let tail = (n_f - event).max(1) as f64;
                r0 + growth * (t - event) as f64 / tail
            };
            let in_disk = |t: usize, row: usize, col: usize| -> bool {
                let r = radius_at(t);
                if r <= 0.0 {
                    return false;
                }
                let d2 = (col as f64 - cx).powi(2) + (row as f64 - cy).powi(2);
                d2 <= r * r
            };
            for t in 0..n_f {
                for row in 0..h {
                    for col in 0..w {
                        let iz = if in_disk(t, row, col) {
                            disk_iz
                        } else {
                            let u = col as f64 / w as f64;
                            let v = row as f64 / h as f64;
                            0.1 + 0.045 * (pattern.eval(u, v) + 1.0)
                        };
                        depth.push(iz as f32);
                    }
                }
            }
            // Static background: zero flow, with correspondence broken
            // wherever the disk covers either frame of the pair.
            for t in 0..pairs {
                for row in 0..h {
                    for col in 0..w {
                        if in_disk(t, row, col) || in_disk(t + 1, row, col) {
                            valid[t * p + row * w + col] = false;
                        }
                    }
                }
            }
        }
        SceneKind::DepthRangeJump => {
            let pattern = SinField::new(&mut rng, 4, 3);
            let center = rng.gen_range(1.0..1.2);
            let span_small = 0.1 * center;
            let span_large = span_small * spec.range_factor;
            let event = spec.event();
            for t in 0..n_f {
                let span = if t < event { span_small } else { span_large };
                for row in 0..h {
                    for col in 0..w {
                        let u = col as f64 / w as f64;
                        let v = row as f64 / h as f64;
                        depth.push((center + span * pattern.eval(u, v)) as f32);
                    }
                }
            }
            // Static scene with a global photometric change at the jump:
            // the straddling pair carries no valid correspondences.
            if event >= 1 && event <= pairs {
                let t = event - 1;
                valid[t * p..(t + 1) * p].fill(false);
            }
        }
    }

    let video = DepthVideo::new(depth, n_f, h, w, DepthSpace::InverseDepth)?;
    let flow = FlowField::new(flow, valid, pairs, h, w)?;
    Ok((video, flow))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    /// Independent uniform draws per snippet.
    #[default]
    Iid,
    /// Scale and shift drift smoothly with the snippet's anchor position
    /// along the timeline, spanning the configured ranges.
    Drift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub scale_range: (f64, f64),
    pub shift_range: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub mode: CorruptionMode,
}

impl CorruptionSpec {
    pub fn identity(seed: u64) -> Self {
        Self {
            scale_range: (1.0, 1.0),
            shift_range: (0.0, 0.0),
            noise_sigma: 0.0,
            seed,
            mode: CorruptionMode::Iid,
        }
    }

    fn validate(&self) -> Result<()> {
        let (s_lo, s_hi) = self.scale_range;
        let (t_lo, t_hi) = self.shift_range;
        if !(s_lo > 0.0) || s_hi < s_lo {
            return Err(Error::InvalidSpec(format!(
                "scale range [{s_lo}, {s_hi}] must be positive and non-empty"
            )));
        }
        if t_hi < t_lo {
            return Err(Error::InvalidSpec(format!(
                "shift range [{t_lo}, {t_hi}] is empty"
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidSpec("noise sigma must be >= 0".into()));
        }
        Ok(())
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Smooth seeded drift over [0, 1] -> [-1, 1], slow in the sense of having
/// at most a few oscillations over the whole timeline.
struct DriftCurve {
    comps: Vec<(f64, f64, f64)>, // amp, freq, phase
    norm: f64,
}

impl DriftCurve {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let comps: Vec<_> = (1..=3)
            .map(|m| {
                (
                    rng.gen_range(0.5..1.0),
                    m as f64,
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let norm = comps.iter().map(|c| c.0).sum();
        Self { comps, norm }
    }

    fn eval(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for &(amp, freq, phase) in &self.comps {
            acc += amp * (std::f64::consts::TAU * freq * x + phase).sin();
        }
        acc / self.norm
    }
}

/// Slice the ground-truth video into schedule-conforming snippets, each
/// corrupted by a hidden random affine transform plus optional Gaussian
/// noise. Returns the corrupted snippets and the hidden true parameters
/// (for assertions only).
pub fn corrupt(
    gt: &DepthVideo,
    schedule: &SnippetSchedule,
    spec: &CorruptionSpec,
) -> Result<(Vec<DepthSnippet>, Vec<AffineParams>)> {
    spec.validate()?;
    if gt.space() != DepthSpace::InverseDepth {
        return Err(Error::InvalidSpec(
            "corruption applies in inverse-depth space".into(),
        ));
    }
    if schedule.frame_count() != gt.frame_count() {
        return Err(Error::ShapeMismatch(format!(
            "schedule covers {} frames, video has {}",
            schedule.frame_count(),
            gt.frame_count()
        )));
    }

    let mut rng_params = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rng_noise = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9E37_79B9_7F4A_7C15);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidSpec(e.to_string()))?;

    let drift = match spec.mode {
        CorruptionMode::Drift => Some((
            DriftCurve::new(&mut rng_params),
            DriftCurve::new(&mut rng_params),
        )),
        CorruptionMode::Iid => None,
    };

    let (s_lo, s_hi) = spec.scale_range;
    let (t_lo, t_hi) = spec.shift_range;
    let denom = (gt.frame_count() - 1).max(1) as f64;

    let mut snippets = Vec::with_capacity(schedule.snippet_count());
    let mut hidden = Vec::with_capacity(schedule.snippet_count());
    for sched_spec in schedule.snippets() {
        let (s, t) = match &drift {
            None => (
                uniform_in(&mut rng_params, s_lo, s_hi),
                uniform_in(&mut rng_params, t_lo, t_hi),
            ),
            Some((scale_curve, shift_curve)) => {
                let x = sched_spec.frames[0] as f64 / denom;
                let gs = (scale_curve.eval(x) + 1.0) / 2.0;
                let gt_ = (shift_curve.eval(x) + 1.0) / 2.0;
                // Scales interpolate in log space so up- and down-scaling
                // are symmetric.
                let s = (s_lo.ln() + (s_hi.ln() - s_lo.ln()) * gs).exp();
                (s, t_lo + (t_hi - t_lo) * gt_)
            }
        };
        let mut data = Vec::with_capacity(sched_spec.frames.len() * gt.frame_len());
        for &fi in &sched_spec.frames {
            for &x in gt.frame(fi) {
                let mut v = s * x as f64 + t;
                if spec.noise_sigma > 0.0 {
                    v += spec.noise_sigma * normal.sample(&mut rng_noise);
                }
                if v <= EPS_INV {
                    return Err(Error::InvalidSpec(format!(
                        "corruption drives inverse depth to {v} <= {EPS_INV} in snippet {}",
                        sched_spec.id
                    )));
                }
                data.push(v as f32);
            }
        }
        snippets.push(DepthSnippet::new(
            data,
            sched_spec.frames.clone(),
            sched_spec.dilation,
            sched_spec.id,
            gt.height(),
            gt.width(),
        )?);
        hidden.push(AffineParams::new(s, t)?);
    }
    Ok((snippets, hidden))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::percentile_sorted;
    use crate::evalkit::opw;
    use crate::scheduler::build_schedule;

    #[test]
    fn static_plane_has_identical_frames_and_zero_flow() {
        let mut spec = SceneSpec::new(SceneKind::TranslatingPlane, 5, 8, 10, 3);
        spec.velocity = (0.0, 0.0);
        let (video, flow) = generate(&spec).unwrap();
        let first = video.frame(0).to_vec();
        for t in 1..5 {
            assert_eq!(video.frame(t), first.as_slice());
        }
        assert!(flow.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        for kind in [
            SceneKind::TranslatingPlane,
            SceneKind::OrbitingSphereField,
            SceneKind::NearObjectIntrusion,
            SceneKind::DepthRangeJump,
        ] {
            let spec = SceneSpec::new(kind, 6, 12, 16, 11);
            let (a, fa) = generate(&spec).unwrap();
            let (b, fb) = generate(&spec).unwrap();
            assert_eq!(a.data(), b.data());
            assert_eq!(fa.data(), fb.data());
            let other = SceneSpec {
                seed: 12,
                ..spec.clone()
            };
            let (c, _) = generate(&other).unwrap();
            assert_ne!(a.data(), c.data());
        }
    }

    #[test]
    fn intrusion_changes_min_depth() {
        let spec = SceneSpec::new(SceneKind::NearObjectIntrusion, 20, 32, 32, 5);
        let (video, _) = generate(&spec).unwrap();
        let min_depth = |t: usize| -> f64 {
            video
                .frame(t)
                .iter()
                .map(|&iz| 1.0 / iz as f64)
                .fold(f64::INFINITY, f64::min)
        };
        for t in 0..10 {
            assert!(min_depth(t) >= 5.0, "frame {t}: {}", min_depth(t));
        }
        for t in 10..20 {
            assert!(min_depth(t) <= 0.5, "frame {t}: {}", min_depth(t));
        }
    }

    #[test]
    fn orbit_is_periodic() {
        let frames = 13;
        let mut spec = SceneSpec::new(SceneKind::OrbitingSphereField, frames, 24, 24, 7);
        spec.angular_velocity = std::f64::consts::TAU / (frames - 1) as f64;
        let (video, _) = generate(&spec).unwrap();
        for (a, b) in video.frame(0).iter().zip(video.frame(frames - 1)) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn range_jump_multiplies_percentile_span() {
        let spec = SceneSpec::new(SceneKind::DepthRangeJump, 10, 24, 32, 9);
        let (video, _) = generate(&spec).unwrap();
        let span = |t: usize| -> f64 {
            let mut v = video.frame(t).to_vec();
            v.sort_by(f32::total_cmp);
            percentile_sorted(&v, 98.0) - percentile_sorted(&v, 2.0)
        };
        let before = span(4);
        let after = span(5);
        assert!(
            after >= 4.0 * before,
            "span before {before}, after {after}"
        );
    }

    #[test]
    fn flow_warp_reproduces_depth_translating_plane() {
        let spec = SceneSpec::new(SceneKind::TranslatingPlane, 8, 32, 40, 21);
        let (video, flow) = generate(&spec).unwrap();
        assert_warp_consistent(&video, &flow, 1e-6);
    }

    #[test]
    fn flow_warp_reproduces_depth_orbit() {
        let spec = SceneSpec::new(SceneKind::OrbitingSphereField, 8, 64, 64, 23);
        let (video, flow) = generate(&spec).unwrap();
        assert_warp_consistent(&video, &flow, 1e-4);
    }

    /// Bilinear-warp frame t+1 back through the flow and compare to frame t.
    fn assert_warp_consistent(video: &DepthVideo, flow: &FlowField, tol: f64) {
        let (h, w) = (video.height(), video.width());
        for t in 0..flow.pairs() {
            let cur = video.frame(t);
            let next = video.frame(t + 1);
            let dx = flow.dx(t);
            let dy = flow.dy(t);
            for row in 0..h {
                for col in 0..w {
                    let idx = row * w + col;
                    if !flow.valid(t)[idx] {
                        continue;
                    }
                    let x = col as f64 + dx[idx] as f64;
                    let y = row as f64 + dy[idx] as f64;
                    if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
                        continue;
                    }
                    let x0 = (x.floor() as usize).min(w - 2);
                    let y0 = (y.floor() as usize).min(h - 2);
                    let fx = x - x0 as f64;
                    let fy = y - y0 as f64;
                    let v = (1.0 - fy)
                        * ((1.0 - fx) * next[y0 * w + x0] as f64
                            + fx * next[y0 * w + x0 + 1] as f64)
                        + fy * ((1.0 - fx) * next[(y0 + 1) * w + x0] as f64
                            + fx * next[(y0 + 1) * w + x0 + 1] as f64);
                    let err = (v - cur[idx] as f64).abs();
                    assert!(err < tol, "pair {t} pixel ({row},{col}): err {err}");
                }
            }
        }
    }

    #[test]
    fn gt_opw_is_negligible() {
        // The ground truth warped by its own flow should score (near)
        // zero. The orbit scene keeps per-frame statistics stable, so the
        // per-frame normalization inside OPW does not inflate the score.
        let spec = SceneSpec::new(SceneKind::OrbitingSphereField, 8, 64, 64, 31);
        let (video, flow) = generate(&spec).unwrap();
        let loss = opw(&video, &flow).unwrap();
        assert!(loss < 1e-3, "{loss}");

        // A static scene with zero flow scores exactly zero.
        let mut static_spec = SceneSpec::new(SceneKind::TranslatingPlane, 6, 16, 16, 31);
        static_spec.velocity = (0.0, 0.0);
        let (video, flow) = generate(&static_spec).unwrap();
        assert_eq!(opw(&video, &flow).unwrap(), 0.0);
    }

    #[test]
    fn identity_corruption_reproduces_slices() {
        let spec = SceneSpec::new(SceneKind::TranslatingPlane, 9, 8, 12, 2);
        let (video, _) = generate(&spec).unwrap();
        let (schedule, _) = build_schedule(9, 3, &[1, 2], 1).unwrap();
        let (snippets, hidden) = corrupt(&video, &schedule, &CorruptionSpec::identity(0)).unwrap();
        for (snip, sched_spec) in snippets.iter().zip(schedule.snippets()) {
            for (slot, &fi) in sched_spec.frames.iter().enumerate() {
                assert_eq!(snip.slot(slot), video.frame(fi));
            }
        }
        assert!(hidden
            .iter()
            .all(|p| p.scale == 1.0 && p.shift == 0.0));
    }

    #[test]
    fn inverting_hidden_params_recovers_ground_truth() {
        let spec = SceneSpec::new(SceneKind::DepthRangeJump, 12, 8, 12, 4);
        let (video, _) = generate(&spec).unwrap();
        let (schedule, _) = build_schedule(12, 3, &[1, 3], 1).unwrap();
        let corruption = CorruptionSpec {
            scale_range: (0.6, 1.8),
            shift_range: (-0.1, 0.15),
            noise_sigma: 0.0,
            seed: 17,
            mode: CorruptionMode::Iid,
        };
        let (snippets, hidden) = corrupt(&video, &schedule, &corruption).unwrap();
        for (snip, (params, sched_spec)) in
            snippets.iter().zip(hidden.iter().zip(schedule.snippets()))
        {
            let inv = params.inverse();
            for (slot, &fi) in sched_spec.frames.iter().enumerate() {
                for (&c, &g) in snip.slot(slot).iter().zip(video.frame(fi)) {
                    let rec = inv.apply(c as f64);
                    assert!(
                        (rec - g as f64).abs() <= 1e-7 * (g as f64).abs().max(1.0),
                        "{rec} vs {g}"
                    );
                }
            }
        }
    }

    #[test]
    fn noise_sigma_matches_sample_statistics() {
        let spec = SceneSpec::new(SceneKind::TranslatingPlane, 40, 32, 48, 6);
        let (video, _) = generate(&spec).unwrap();
        let (schedule, _) = build_schedule(40, 3, &[1], 1).unwrap();
        let corruption = CorruptionSpec {
            scale_range: (1.0, 1.0),
            shift_range: (0.0, 0.0),
            noise_sigma: 0.01,
            seed: 8,
            mode: CorruptionMode::Iid,
        };
        let (snippets, _) = corrupt(&video, &schedule, &corruption).unwrap();
        let mut sum_sq = 0.0f64;
        let mut count = 0usize;
        for (snip, sched_spec) in snippets.iter().zip(schedule.snippets()) {
            for (slot, &fi) in sched_spec.frames.iter().enumerate() {
                for (&c, &g) in snip.slot(slot).iter().zip(video.frame(fi)) {
                    let r = c as f64 - g as f64;
                    sum_sq += r * r;
                    count += 1;
                }
            }
        }
        let sigma = (sum_sq / count as f64).sqrt();
        assert!(
            (sigma - 0.01).abs() < 0.0005,
            "sample sigma {sigma} vs 0.01"
        );
    }

    #[test]
    fn corruption_rejects_positivity_violations() {
        let spec = SceneSpec::new(SceneKind::NearObjectIntrusion, 6, 8, 8, 2);
        let (video, _) = generate(&spec).unwrap();
        let (schedule, _) = build_schedule(6, 3, &[1], 1).unwrap();
        // Background inverse depth ~0.1; a -0.5 shift drives it negative.
        let corruption = CorruptionSpec {
            scale_range: (1.0, 1.0),
            shift_range: (-0.5, -0.5),
            noise_sigma: 0.0,
            seed: 3,
            mode: CorruptionMode::Iid,
        };
        assert!(matches!(
            corrupt(&video, &schedule, &corruption),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn drift_mode_is_smooth_along_the_timeline() {
        let spec = SceneSpec::new(SceneKind::TranslatingPlane, 60, 8, 8, 2);
        let (video, _) = generate(&spec).unwrap();
        let (schedule, _) = build_schedule(60, 3, &[1], 1).unwrap();
        let corruption = CorruptionSpec {
            scale_range: (0.5, 2.0),
            shift_range: (-0.2, 0.2),
            noise_sigma: 0.0,
            seed: 5,
            mode: CorruptionMode::Drift,
        };
        let (_, hidden) = corrupt(&video, &schedule, &corruption).unwrap();
        // Adjacent anchors get nearby parameters: per-step movement stays
        // far below the full configured span (ln 4 for scales, 0.4 shift).
        for pair in hidden.windows(2) {
            assert!((pair[0].scale.ln() - pair[1].scale.ln()).abs() < 0.25);
            assert!((pair[0].shift - pair[1].shift).abs() < 0.08);
        }
        // And the whole range is actually exercised.
        let scales: Vec<f64> = hidden.iter().map(|p| p.scale).collect();
        let max = scales.iter().cloned().fold(0.0f64, f64::max);
        let min = scales.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min > 1.5, "drift span too small: {min}..{max}");
    }
}
