//! Prototypical episode loss, global-prototype classification loss and
//! their weighted sum, with analytic gradients.
//!
//! Every logit is a scaled cosine: `x . p / (|p| + eps)`, i.e. the cosine
//! similarity times the input's norm. Only the prototype side is
//! normalized, so the logit scale follows the embedding norm.
//!
//! Labels are zero-based: local labels index the episode's classes
//! `0..n_way`, global labels index the rows of [`GlobalPrototypes`].

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::RngCore;

use crate::error::{bail, Error, Result};
use crate::math;

/// Added to prototype norms before dividing.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mode {
    /// Global classification of fixed-length batches only.
    Vanilla,
    /// Episode loss only.
    Meta,
    /// Episode loss plus weighted global loss.
    MetaGlobal,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Vanilla, Mode::Meta, Mode::MetaGlobal];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Meta => "meta",
            Mode::MetaGlobal => "meta_global",
        }
    }

    pub fn uses_episodes(self) -> bool {
        self != Mode::Vanilla
    }

    pub fn uses_global(self) -> bool {
        self != Mode::Meta
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown mode '{s}', expected one of: vanilla, meta, meta_global")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub mode: Mode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 1.0, mode: Mode::MetaGlobal }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            bail!(Config, "lambda must be a finite non-negative number, got {}", self.lambda);
        }
        Ok(())
    }
}

/// Per-class mean of support embeddings, one row per local label.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub rows: Vec<Vec<f64>>,
    /// Support count per class.
    pub counts: Vec<usize>,
}

/// Learnable class vectors over every training speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPrototypes {
    pub rows: Vec<Vec<f64>>,
}

impl GlobalPrototypes {
    /// Zero-mean Gaussian rows with standard deviation `1/sqrt(dim)`.
    pub fn random<R: RngCore + ?Sized>(classes: usize, dim: usize, rng: &mut R) -> Self {
        let std = 1.0 / math::sqrt(dim as f64);
        let rows = (0..classes)
            .map(|_| (0..dim).map(|_| std * crate::nn::normal(rng)).collect())
            .collect();
        GlobalPrototypes { rows }
    }

    pub fn classes(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub episode: Option<f64>,
    pub global: Option<f64>,
    pub total: f64,
}

pub fn compute_prototypes(support: &[Vec<f64>], labels: &[usize], n_way: usize) -> Result<Prototypes> {
    if support.len() != labels.len() {
        bail!(Input, "{} support embeddings but {} labels", support.len(), labels.len());
    }
    let dim = support.first().map_or(0, Vec::len);
    let mut rows = vec![vec![0.0; dim]; n_way];
    let mut counts = vec![0usize; n_way];
    for (x, &y) in support.iter().zip(labels) {
        if y >= n_way {
            bail!(Label, "support label {y} outside 0..{n_way}");
        }
        counts[y] += 1;
        for (r, v) in rows[y].iter_mut().zip(x) {
            *r += v;
        }
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        bail!(Label, "class {missing} has no support examples");
    }
    for (row, &c) in rows.iter_mut().zip(&counts) {
        row.iter_mut().for_each(|v| *v /= c as f64);
    }
    Ok(Prototypes { rows, counts })
}

/// `x . p / (|p| + eps)`.
pub fn scaled_cosine(x: &[f64], p: &[f64]) -> f64 {
    math::dot(x, p) / (math::norm(p) + NORM_EPS)
}

/// Plain cosine similarity, guarded against zero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    math::dot(a, b) / (math::norm(a) * math::norm(b)).max(f64::MIN_POSITIVE)
}

/// Softmax cross-entropy over scaled-cosine logits of `xs` against `protos`.
/// Returns the mean loss, and when `grads` is requested the gradients with
/// respect to each `x` and each prototype row.
struct CrossEntropy {
    loss: f64,
    grad_x: Vec<Vec<f64>>,
    grad_p: Vec<Vec<f64>>,
}

fn scaled_cosine_ce(xs: &[Vec<f64>], labels: &[usize], protos: &[Vec<f64>], grads: bool) -> Result<CrossEntropy> {
    let classes = protos.len();
    let dim = protos.first().map_or(0, Vec::len);
    let norms: Vec<f64> = protos.iter().map(|p| math::norm(p)).collect();
    let mut loss = 0.0;
    let mut grad_x = Vec::new();
    let mut grad_p = if grads { vec![vec![0.0; dim]; classes] } else { Vec::new() };
    let weight = 1.0 / xs.len() as f64;
    let mut logits = vec![0.0; classes];
    let mut probs = vec![0.0; classes];
    for (x, &y) in xs.iter().zip(labels) {
        if y >= classes {
            bail!(Label, "label {y} outside 0..{classes}");
        }
        if x.len() != dim {
            bail!(Input, "embedding has dim {}, prototypes have {dim}", x.len());
        }
        for ((z, p), n) in logits.iter_mut().zip(protos).zip(&norms) {
            *z = math::dot(x, p) / (n + NORM_EPS);
        }
        let lse = math::softmax_into(&logits, &mut probs);
        loss += weight * (lse - logits[y]);
        if !grads {
            continue;
        }
        let mut gx = vec![0.0; dim];
        for c in 0..classes {
            let g = weight * (probs[c] - if c == y { 1.0 } else { 0.0 });
            let denom = norms[c] + NORM_EPS;
            let p = &protos[c];
            // d z / d p = x / (n + eps) - (x . p) p / (n (n + eps)^2)
            let coef = if norms[c] > 0.0 { math::dot(x, p) / (norms[c] * denom * denom) } else { 0.0 };
            for k in 0..dim {
                gx[k] += g * p[k] / denom;
                grad_p[c][k] += g * (x[k] / denom - coef * p[k]);
            }
        }
        grad_x.push(gx);
    }
    Ok(CrossEntropy { loss, grad_x, grad_p })
}

/// Mean negative log-probability of each query's true class under a
/// softmax over its scaled-cosine logits to the episode prototypes.
pub fn episode_loss(queries: &[Vec<f64>], labels: &[usize], protos: &Prototypes) -> Result<f64> {
    if queries.is_empty() {
        bail!(Input, "episode has no queries");
    }
    Ok(scaled_cosine_ce(queries, labels, &protos.rows, false)?.loss)
}

/// Cross-entropy of every sample against all global prototypes, averaged
/// over the samples given (support and query together).
pub fn global_loss(embeddings: &[Vec<f64>], labels: &[usize], omega: &GlobalPrototypes) -> Result<f64> {
    if embeddings.is_empty() {
        bail!(Input, "no samples for the global loss");
    }
    Ok(scaled_cosine_ce(embeddings, labels, &omega.rows, false)?.loss)
}

/// Class probabilities of one embedding against a set of prototype rows.
pub fn class_probabilities(x: &[f64], protos: &[Vec<f64>]) -> Vec<f64> {
    let logits: Vec<f64> = protos.iter().map(|p| scaled_cosine(x, p)).collect();
    let mut probs = vec![0.0; logits.len()];
    math::softmax_into(&logits, &mut probs);
    probs
}

/// Embeddings of one training step with their labels.
///
/// For vanilla batches the whole batch is passed as `support` and `query`
/// is empty.
#[derive(Debug, Clone, Copy)]
pub struct StepEmbeddings<'a> {
    pub support: &'a [Vec<f64>],
    pub support_local: &'a [usize],
    pub support_global: &'a [usize],
    pub query: &'a [Vec<f64>],
    pub query_local: &'a [usize],
    pub query_global: &'a [usize],
    pub n_way: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub breakdown: LossBreakdown,
    pub grad_support: Vec<Vec<f64>>,
    pub grad_query: Vec<Vec<f64>>,
    /// Gradient for the global prototypes, when the mode uses them.
    pub grad_omega: Option<Vec<Vec<f64>>>,
}

/// Loss for one step according to `cfg.mode`, with gradients for every
/// embedding and (if used) the global prototypes.
///
/// * `MetaGlobal`: `L_e + lambda * L_g`, `L_g` over support and query.
/// * `Meta`: `L_e`.
/// * `Vanilla`: `L_g` over the batch held in `support`.
pub fn combined_loss(e: &StepEmbeddings<'_>, omega: Option<&GlobalPrototypes>, cfg: &LossConfig) -> Result<Objective> {
    cfg.validate()?;
    let dim = e.support.first().map_or(0, Vec::len);
    let mut grad_support = vec![vec![0.0; dim]; e.support.len()];
    let mut grad_query = vec![vec![0.0; dim]; e.query.len()];
    let mut breakdown = LossBreakdown::default();

    if cfg.mode.uses_episodes() {
        let protos = compute_prototypes(e.support, e.support_local, e.n_way)?;
        if e.query.is_empty() {
            bail!(Input, "episode has no queries");
        }
        let ce = scaled_cosine_ce(e.query, e.query_local, &protos.rows, true)?;
        for (g, gx) in grad_query.iter_mut().zip(&ce.grad_x) {
            add_scaled(g, gx, 1.0);
        }
        for (g, &y) in grad_support.iter_mut().zip(e.support_local) {
            add_scaled(g, &ce.grad_p[y], 1.0 / protos.counts[y] as f64);
        }
        breakdown.episode = Some(ce.loss);
        breakdown.total += ce.loss;
    }

    let mut grad_omega = None;
    if cfg.mode.uses_global() {
        let Some(omega) = omega else {
            bail!(Config, "mode {} needs global prototypes", cfg.mode);
        };
        let weight = if cfg.mode == Mode::Vanilla { 1.0 } else { cfg.lambda };
        let all: Vec<Vec<f64>> = e.support.iter().chain(e.query).cloned().collect();
        let labels: Vec<usize> = e.support_global.iter().chain(e.query_global).copied().collect();
        if all.is_empty() {
            bail!(Input, "no samples for the global loss");
        }
        let ce = scaled_cosine_ce(&all, &labels, &omega.rows, true)?;
        let (gs, gq) = ce.grad_x.split_at(e.support.len());
        for (g, gx) in grad_support.iter_mut().zip(gs) {
            add_scaled(g, gx, weight);
        }
        for (g, gx) in grad_query.iter_mut().zip(gq) {
            add_scaled(g, gx, weight);
        }
        let mut go = ce.grad_p;
        go.iter_mut().flatten().for_each(|v| *v *= weight);
        grad_omega = Some(go);
        breakdown.global = Some(ce.loss);
        breakdown.total += weight * ce.loss;
    }

    Ok(Objective { breakdown, grad_support, grad_query, grad_omega })
}

fn add_scaled(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| alloc::format!("{x:.6}"));
        write!(f, "total {:.6} (episode {}, global {})", self.total, show(self.episode), show(self.global))
    }
}
