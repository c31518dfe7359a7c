/// A frame's matched prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Association {
    pub prior_index: usize,
    pub residual_ns: i64,
}

/// Pairs each frame timestamp with at most one prior timestamp.
///
/// Candidate pairs within `tolerance_ns` are accepted greedily in order of
/// increasing residual (globally nearest first); each prior is used at most
/// once. Ties are broken by the pair's timestamp sum, which keeps the result
/// independent of which list is called "frames".
pub fn synchronize_streams(frames: &[i64], priors: &[i64], tolerance_ns: i64) -> Vec<Option<Association>> {
    let mut candidates = Vec::new();
    let mut lo = 0usize;
    for (fi, &ft) in frames.iter().enumerate() {
        while lo < priors.len() && priors[lo] < ft.saturating_sub(tolerance_ns) {
            lo += 1;
        }
        let mut pi = lo;
        while pi < priors.len() && priors[pi] <= ft.saturating_add(tolerance_ns) {
            let d = (priors[pi] - ft).abs();
            candidates.push((d, ft + priors[pi], fi, pi));
            pi += 1;
        }
    }
    candidates.sort_unstable();
    let mut out = vec![None; frames.len()];
    let mut used = vec![false; priors.len()];
    for (d, _, fi, pi) in candidates {
        if out[fi].is_none() && !used[pi] {
            out[fi] = Some(Association { prior_index: pi, residual_ns: d });
            used[pi] = true;
        }
    }
    out
}
