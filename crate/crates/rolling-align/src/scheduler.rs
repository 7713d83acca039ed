//! Dilated rolling kernel: builds the set of snippet frame-index windows
//! covering a video at one or more dilation rates, plus the per-frame
//! coverage map (which snippet/slot pairs predict each frame).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame-index window of a single snippet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetSpec {
    pub id: usize,
    pub dilation: usize,
    pub frames: Vec<usize>,
}

/// One coverage entry: frame `i` is predicted by `snippet_id` at `slot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoverageEntry {
    pub snippet_id: usize,
    pub slot: usize,
}

/// The full snippet plan for a video: every snippet window plus the inverse
/// per-frame coverage index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnippetSchedule {
    snippets: Vec<SnippetSpec>,
    coverage: Vec<Vec<CoverageEntry>>,
    frame_count: usize,
    snippet_len: usize,
    stride: usize,
}

impl SnippetSchedule {
    /// Construct a schedule from explicit snippet windows, rebuilding and
    /// validating the coverage map.
    pub fn from_specs(
        snippets: Vec<SnippetSpec>,
        frame_count: usize,
        snippet_len: usize,
        stride: usize,
    ) -> Result<Self> {
        if frame_count == 0 {
            return Err(Error::InvalidSchedule("video has no frames".into()));
        }
        let mut coverage = vec![Vec::new(); frame_count];
        for (k, spec) in snippets.iter().enumerate() {
            if spec.id != k {
                return Err(Error::InvalidSchedule(format!(
                    "snippet ids must be dense 0..N_T, found {} at position {k}",
                    spec.id
                )));
            }
            if spec.frames.len() != snippet_len {
                return Err(Error::InvalidSchedule(format!(
                    "snippet {k} has {} frames, expected {snippet_len}",
                    spec.frames.len()
                )));
            }
            for (slot, &frame) in spec.frames.iter().enumerate() {
                if frame >= frame_count {
                    return Err(Error::InvalidSchedule(format!(
                        "snippet {k} references frame {frame} beyond video length {frame_count}"
                    )));
                }
                if slot > 0 && spec.frames[slot] != spec.frames[slot - 1] + spec.dilation {
                    return Err(Error::InvalidSchedule(format!(
                        "snippet {k} frames {:?} are not spaced by dilation {}",
                        spec.frames, spec.dilation
                    )));
                }
                coverage[frame].push(CoverageEntry {
                    snippet_id: k,
                    slot,
                });
            }
        }
        Ok(Self {
            snippets,
            coverage,
            frame_count,
            snippet_len,
            stride,
        })
    }

    pub fn snippets(&self) -> &[SnippetSpec] {
        &self.snippets
    }

    pub fn snippet_count(&self) -> usize {
        self.snippets.len()
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn snippet_len(&self) -> usize {
        self.snippet_len
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Ordered (snippet, slot) pairs predicting frame `i`.
    pub fn coverage(&self, i: usize) -> &[CoverageEntry] {
        &self.coverage[i]
    }

    /// Number of predictions available for frame `i` (the paper's N^i).
    pub fn coverage_count(&self, i: usize) -> usize {
        self.coverage[i].len()
    }

    /// First frame without any covering snippet, if one exists. Sparse
    /// stride/dilation combinations can legally leave holes; alignment and
    /// merging require full coverage and reject such schedules.
    pub fn first_uncovered_frame(&self) -> Option<usize> {
        self.coverage.iter().position(|c| c.is_empty())
    }

    /// Dilations that actually produced snippets, ascending and deduplicated.
    pub fn effective_dilations(&self) -> Vec<usize> {
        let mut ds: Vec<usize> = self.snippets.iter().map(|s| s.dilation).collect();
        ds.sort_unstable();
        ds.dedup();
        ds
    }
}

/// Build the dilated rolling-kernel schedule.
///
/// For each dilation `g` that fits (`(n-1)*g <= frame_count-1`), anchors
/// advance from 0 in steps of `stride`; a snippet covers frames
/// `{a, a+g, ..., a+(n-1)*g}`. If the last base snippet of a dilation does
/// not end at the final frame, one extra snippet anchored at
/// `frame_count-1-(n-1)*g` is appended so the final frame is covered at
/// every dilation that fits. Dilations that do not fit are skipped (the
/// returned list of skipped dilations lets callers surface a warning).
pub fn build_schedule(
    frame_count: usize,
    snippet_len: usize,
    dilations: &[usize],
    stride: usize,
) -> Result<(SnippetSchedule, Vec<usize>)> {
    if frame_count == 0 {
        return Err(Error::InvalidSchedule("video has no frames".into()));
    }
    if snippet_len == 0 {
        return Err(Error::InvalidSchedule("snippet length must be >= 1".into()));
    }
    if stride == 0 {
        return Err(Error::InvalidSchedule("stride must be >= 1".into()));
    }
    if dilations.is_empty() {
        return Err(Error::InvalidSchedule("no dilation rates given".into()));
    }
    if dilations.contains(&0) {
        return Err(Error::InvalidSchedule("dilation rates must be >= 1".into()));
    }

    let mut snippets = Vec::new();
    let mut skipped = Vec::new();
    for &g in dilations {
        let span = (snippet_len - 1) * g;
        if span > frame_count - 1 {
            skipped.push(g);
            continue;
        }
        let last_anchor = frame_count - 1 - span;
        let mut anchor = 0;
        let mut last_end = None;
        while anchor <= last_anchor {
            snippets.push(make_spec(snippets.len(), g, anchor, snippet_len));
            last_end = Some(anchor + span);
            anchor += stride;
        }
        // Boundary rule: guarantee last-frame coverage at this dilation.
        if last_end != Some(frame_count - 1) {
            snippets.push(make_spec(snippets.len(), g, last_anchor, snippet_len));
        }
    }
    if snippets.is_empty() {
        return Err(Error::InvalidSchedule(format!(
            "no snippet of length {snippet_len} at dilations {dilations:?} fits in {frame_count} frames"
        )));
    }
    let schedule = SnippetSchedule::from_specs(snippets, frame_count, snippet_len, stride)?;
    Ok((schedule, skipped))
}

fn make_spec(id: usize, dilation: usize, anchor: usize, snippet_len: usize) -> SnippetSpec {
    SnippetSpec {
        id,
        dilation,
        frames: (0..snippet_len).map(|j| anchor + j * dilation).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn windows(schedule: &SnippetSchedule) -> Vec<Vec<usize>> {
        schedule
            .snippets()
            .iter()
            .map(|s| s.frames.clone())
            .collect()
    }

    #[test]
    fn dense_dilation_one() {
        let (s, skipped) = build_schedule(7, 3, &[1], 1).unwrap();
        assert!(skipped.is_empty());
        assert_eq!(
            windows(&s),
            vec![
                vec![0, 1, 2],
                vec![1, 2, 3],
                vec![2, 3, 4],
                vec![3, 4, 5],
                vec![4, 5, 6],
            ]
        );
        assert_eq!(s.coverage_count(3), 3);
    }

    #[test]
    fn boundary_rule_appends_trailing_snippet() {
        let (s, _) = build_schedule(8, 3, &[2], 2).unwrap();
        assert_eq!(
            windows(&s),
            vec![vec![0, 2, 4], vec![2, 4, 6], vec![3, 5, 7]]
        );
        // This sparse stride/dilation combination leaves frame 1 uncovered;
        // the schedule is still constructible, downstream alignment rejects it.
        assert_eq!(s.first_uncovered_frame(), Some(1));
    }

    #[test]
    fn single_frame_video() {
        let (s, _) = build_schedule(1, 1, &[1], 1).unwrap();
        assert_eq!(windows(&s), vec![vec![0]]);
        assert_eq!(s.coverage_count(0), 1);
    }

    #[test]
    fn paper_default_config_accepted() {
        let (s, skipped) = build_schedule(250, 3, &[1, 10, 25], 1).unwrap();
        assert!(skipped.is_empty());
        assert_eq!(s.effective_dilations(), vec![1, 10, 25]);
        // Every frame covered at least once; ids dense.
        for i in 0..250 {
            assert!(s.coverage_count(i) >= 1);
        }
        for (k, spec) in s.snippets().iter().enumerate() {
            assert_eq!(spec.id, k);
        }
    }

    #[test]
    fn oversized_dilation_skipped() {
        let (s, skipped) = build_schedule(40, 3, &[1, 25], 1).unwrap();
        assert_eq!(skipped, vec![25]);
        assert!(s.snippets().iter().all(|sp| sp.dilation == 1));
    }

    #[test]
    fn nothing_fits_is_an_error() {
        assert!(matches!(
            build_schedule(2, 3, &[1], 1),
            Err(Error::InvalidSchedule(_))
        ));
    }

    #[test]
    fn interior_coverage_is_three_for_dense_triplets() {
        // Direct enumeration: frame i is covered by anchors in
        // [max(0, i-2), min(N_F-3, i)], so deep-interior frames get exactly
        // three covers and the two frames next to each edge get two.
        let (s, _) = build_schedule(11, 3, &[1], 1).unwrap();
        for i in 2..=8 {
            assert_eq!(s.coverage_count(i), 3, "frame {i}");
        }
        assert_eq!(s.coverage_count(0), 1);
        assert_eq!(s.coverage_count(1), 2);
        assert_eq!(s.coverage_count(9), 2);
        assert_eq!(s.coverage_count(10), 1);
        assert_eq!(s.first_uncovered_frame(), None);
    }

    #[test]
    fn total_coverage_equals_total_snippet_frames() {
        let (s, _) = build_schedule(23, 3, &[1, 4, 7], 2).unwrap();
        let total_cov: usize = (0..23).map(|i| s.coverage_count(i)).sum();
        let total_frames: usize = s.snippets().iter().map(|sp| sp.frames.len()).sum();
        assert_eq!(total_cov, total_frames);
    }

    #[test]
    fn determinism() {
        let (a, _) = build_schedule(57, 3, &[1, 5, 9], 2).unwrap();
        let (b, _) = build_schedule(57, 3, &[1, 5, 9], 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uncovered_frames_are_reported() {
        // A single snippet over frames {0,1,2} of a 4-frame video leaves
        // frame 3 uncovered.
        let specs = vec![SnippetSpec {
            id: 0,
            dilation: 1,
            frames: vec![0, 1, 2],
        }];
        let s = SnippetSchedule::from_specs(specs, 4, 3, 1).unwrap();
        assert_eq!(s.first_uncovered_frame(), Some(3));
    }
}
