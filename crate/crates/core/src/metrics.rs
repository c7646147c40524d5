//! Verification metrics: equal error rate and minimum detection cost.
//!
//! A trial is accepted when its score is at least the threshold. The
//! operating points are the accept-all point, one point per distinct score
//! used as threshold, and the reject-all point.

use alloc::vec::Vec;

use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    /// Scores `>= threshold` are accepted; `+inf` rejects everything.
    pub threshold: f64,
    pub misses: usize,
    pub false_accepts: usize,
    pub p_miss: f64,
    pub p_fa: f64,
}

pub fn operating_points(scores: &[f64], labels: &[bool]) -> Result<Vec<OperatingPoint>> {
    if scores.len() != labels.len() {
        bail!(Input, "{} scores but {} labels", scores.len(), labels.len());
    }
    if scores.iter().any(|s| s.is_nan()) {
        bail!(Input, "scores contain NaN");
    }
    let n_tar = labels.iter().filter(|&&l| l).count();
    let n_non = labels.len() - n_tar;
    if n_tar == 0 || n_non == 0 {
        bail!(Input, "need both target and non-target trials, got {n_tar} and {n_non}");
    }
    let mut order: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    let point = |threshold: f64, misses: usize, fa: usize| OperatingPoint {
        threshold,
        misses,
        false_accepts: fa,
        p_miss: misses as f64 / n_tar as f64,
        p_fa: fa as f64 / n_non as f64,
    };
    let mut points = Vec::with_capacity(order.len() + 1);
    let (mut misses, mut fa) = (0, n_non);
    let mut i = 0;
    while i < order.len() {
        let t = order[i].0;
        points.push(point(t, misses, fa));
        while i < order.len() && order[i].0 == t {
            if order[i].1 {
                misses += 1;
            } else {
                fa -= 1;
            }
            i += 1;
        }
    }
    points.push(point(f64::INFINITY, misses, fa));
    Ok(points)
}

/// Equal error rate and the threshold where miss and false-accept rates
/// cross, interpolating linearly between adjacent operating points.
pub fn compute_eer(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    let points = operating_points(scores, labels)?;
    let max_score = points[points.len() - 2].threshold;
    let finite = |t: f64| if t.is_finite() { t } else { max_score };
    let gap = |p: &OperatingPoint| p.p_miss - p.p_fa;
    let j = points.iter().position(|p| gap(p) >= 0.0).expect("reject-all point has p_miss = 1");
    let b = &points[j];
    if gap(b) == 0.0 || j == 0 {
        return Ok((b.p_miss, finite(b.threshold)));
    }
    let a = &points[j - 1];
    let alpha = gap(a) / (gap(a) - gap(b));
    let eer = a.p_miss + alpha * (b.p_miss - a.p_miss);
    let threshold = finite(a.threshold) + alpha * (finite(b.threshold) - finite(a.threshold));
    Ok((eer, threshold))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        DcfParams { p_target: 0.01, c_miss: 1.0, c_fa: 1.0 }
    }
}

/// Minimum normalized detection cost over all operating points, with the
/// threshold that attains it.
pub fn compute_min_dcf(scores: &[f64], labels: &[bool], params: DcfParams) -> Result<(f64, f64)> {
    let DcfParams { p_target, c_miss, c_fa } = params;
    if !(p_target > 0.0 && p_target < 1.0) {
        bail!(Config, "p_target must lie in (0, 1), got {p_target}");
    }
    let norm = (c_miss * p_target).min(c_fa * (1.0 - p_target));
    let mut best = (f64::INFINITY, f64::INFINITY);
    for p in operating_points(scores, labels)? {
        let cost = (c_miss * p.p_miss * p_target + c_fa * p.p_fa * (1.0 - p_target)) / norm;
        if cost < best.0 {
            best = (cost, p.threshold);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

pub fn verification_report(scores: &[f64], labels: &[bool], params: DcfParams) -> Result<VerificationReport> {
    let (eer, eer_threshold) = compute_eer(scores, labels)?;
    let (min_dcf, _) = compute_min_dcf(scores, labels, params)?;
    let n_target = labels.iter().filter(|&&l| l).count();
    Ok(VerificationReport { eer, eer_threshold, min_dcf, n_target, n_nontarget: labels.len() - n_target })
}
