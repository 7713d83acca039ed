//! Assembles temporally consistent depth videos from overlapping,
//! affine-ambiguous per-snippet depth predictions.
//!
//! The pipeline: build a dilated rolling-kernel snippet schedule
//! ([`scheduler`]), jointly estimate one scale/shift per snippet with a
//! robust L1 objective and merge the aligned snippets ([`coalign`]),
//! optionally refine the merged video through a pluggable snippet denoiser
//! ([`refine`]), and evaluate against ground truth with the affine-invariant
//! video-depth protocol ([`evalkit`]). The [`synth`] module generates
//! analytic scenes with exact flow and known per-snippet corruptions so the
//! whole chain can be verified quantitatively.

pub mod coalign;
pub mod depth;
pub mod error;
pub mod evalkit;
pub mod manifest;
pub mod npy;
pub mod refine;
pub mod scheduler;
pub mod synth;

pub use coalign::{
    merge, objective, objective_gradient, solve, AlignmentSolution, CoalignConfig, ObjectiveValue,
    ParamGrad, ShiftPenalty,
};
pub use depth::{
    normalize_snippet, AffineParams, DepthSnippet, DepthSpace, DepthVideo, EPS_INV, EPS_NORM,
};
pub use error::{Error, Result};
pub use evalkit::{abs_rel, delta1, evaluate, ls_align, opw, FlowField, MetricsReport};
pub use refine::{refine, DenoiserHook, RefineConfig};
pub use scheduler::{build_schedule, SnippetSchedule, SnippetSpec};
pub use synth::{corrupt, generate, CorruptionMode, CorruptionSpec, SceneKind, SceneSpec};
