//! Folded singularities of the desingularised ramped reduced flow.

use crate::manifold::{
    coexistence_h, pi_maximum, reduced_flow_regime, threshold_set, ManifoldError, RegimeItem, Stability,
    ThresholdOrdering,
};
use crate::model::{ModelParams, H_BIG};
use crate::roots::{bisect, log_grid, newton_bracketed, sign_brackets};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default clamp margin on both ends of the ramp.
pub const DEFAULT_DELTA: f64 = 0.01;
/// Largest ramp rate accepted by the singularity search.
pub const R_MAX: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FoldedError {
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("candidate is not a folded singularity (|Q| = {q:e}, |Lambda| = {lam:e})")]
    NotSingular { q: f64, lam: f64 },
    #[error("no relevant folded singularity at r = {0}")]
    NoSingularity(f64),
    #[error("no critical rate on (0, {R_MAX}]")]
    NoCriticalRate,
    #[error("parameters fail the bistability screen: {0}")]
    ScreenFailed(String),
    #[error("relevant folded singularity is a saddle")]
    Saddle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FoldedKind {
    Node,
    Focus,
    Saddle,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldedSingularity {
    pub h: f64,
    pub alpha: f64,
    pub kind: FoldedKind,
    pub tr: f64,
    pub det: f64,
    pub delta: f64,
    /// `(re, im)`, ordered by real part.
    pub eigenvalues: [(f64, f64); 2],
    /// Unit strong and weak eigendirections in `(H, alpha)`; nodes only.
    pub strong_dir: Option<[f64; 2]>,
    pub weak_dir: Option<[f64; 2]>,
    pub mu: Option<f64>,
    pub sectors: Option<u32>,
    /// Coral cover at the singularity is nonnegative.
    pub relevant: bool,
}

/// Jacobian of the desingularised field at a point on the fold curve.
pub fn jacobian(h: f64, alpha: f64, p: &ModelParams, r: f64) -> [[f64; 2]; 2] {
    let s = p.s(h);
    let w = 1.0 + h;
    let k = p.lambda * (h + s * w * w);
    [
        [r / (s * s) - k * p.coral_on_sheet(h, alpha), w * w * p.v(h) / s],
        [r * p.q_h(h, alpha), -r / (s * s)],
    ]
}

/// `Delta = (tr J)^2 - 4 det J`.
pub fn discriminant(j: &[[f64; 2]; 2]) -> f64 {
    let a = j[0][0] - j[1][1];
    a * a + 4.0 * j[0][1] * j[1][0]
}

/// Closed-form `dDelta/dr` at `r = 0` for the singularity rooted at `H_hat`.
pub fn discriminant_slope_at_zero(p: &ModelParams) -> Result<f64, FoldedError> {
    let (h, _) = pi_maximum(p)?;
    let s = p.s(h);
    let w = 1.0 + h;
    let bracket = 2.0 + w * s + h / (s * w * w);
    Ok(8.0 * p.lambda * p.v(h) * w * w / s * bracket)
}

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    [v[0] / n, v[1] / n]
}

fn eigvec(j: &[[f64; 2]; 2], l: f64) -> [f64; 2] {
    let a = [j[0][1], l - j[0][0]];
    let b = [l - j[1][1], j[1][0]];
    if a[0].hypot(a[1]) >= b[0].hypot(b[1]) {
        unit(a)
    } else {
        unit(b)
    }
}

/// Classifies a candidate `(H, alpha)` on the fold curve.
pub fn classify_folded(h: f64, alpha: f64, p: &ModelParams, r: f64) -> Result<FoldedSingularity, FoldedError> {
    let q = p.q(h, alpha);
    let (lam, _) = p.rhs_desingularized(h, alpha, r);
    let tol = 1e-10;
    if q.abs() >= tol || lam.abs() >= tol {
        return Err(FoldedError::NotSingular { q: q.abs(), lam: lam.abs() });
    }
    let j = jacobian(h, alpha, p, r);
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let delta = discriminant(&j);
    let scale = (tr * tr).max(4.0 * det.abs());
    let kind = if delta.abs() <= 1e-12 * scale || scale == 0.0 {
        FoldedKind::Degenerate
    } else if det < 0.0 {
        FoldedKind::Saddle
    } else if delta < 0.0 {
        FoldedKind::Focus
    } else {
        FoldedKind::Node
    };
    let eigenvalues = if delta >= 0.0 {
        let sq = delta.sqrt();
        let l1 = if tr >= 0.0 { 0.5 * (tr + sq) } else { 0.5 * (tr - sq) };
        let l2 = if l1 != 0.0 { det / l1 } else { 0.0 };
        [(l1.min(l2), 0.0), (l1.max(l2), 0.0)]
    } else {
        let im = 0.5 * (-delta).sqrt();
        [(0.5 * tr, -im), (0.5 * tr, im)]
    };
    let (mut strong_dir, mut weak_dir, mut mu, mut sectors) = (None, None, None, None);
    if kind == FoldedKind::Node {
        let (a, b) = (eigenvalues[0].0, eigenvalues[1].0);
        let (ls, lw) = if a.abs() >= b.abs() { (a, b) } else { (b, a) };
        strong_dir = Some(eigvec(&j, ls));
        weak_dir = Some(eigvec(&j, lw));
        let m = ls.abs() / lw.abs();
        mu = Some(m);
        sectors = Some(((m - 1.0) / 2.0).floor().max(0.0) as u32);
    }
    Ok(FoldedSingularity {
        h,
        alpha,
        kind,
        tr,
        det,
        delta,
        eigenvalues,
        strong_dir,
        weak_dir,
        mu,
        sectors,
        relevant: p.coral_on_sheet(h, alpha) >= 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldedSearch {
    pub singularities: Vec<FoldedSingularity>,
    /// Roots (nearly) coincide: the parameters sit close to the bifurcation curve.
    pub degenerate_roots: bool,
}

/// Roots of `F(., r)` on `(0, H_BIG)`, increasing.
pub fn folded_roots(p: &ModelParams, r: f64) -> Result<(Vec<f64>, bool), FoldedError> {
    let (h_hat, _) = pi_maximum(p)?;
    let h_i = coexistence_h(p);
    if r == 0.0 {
        let mut v = vec![h_hat.min(h_i), h_hat.max(h_i)];
        let close = (h_hat - h_i).abs() < 1e-8 * (1.0 + h_i);
        if close {
            v.pop();
        }
        return Ok((v, close));
    }
    let mut grid = log_grid(1e-12, H_BIG, 1200);
    grid.remove(0);
    grid.extend([h_hat, h_i, 0.5 * (h_hat + h_i)]);
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    let f = |h: f64| p.folded_f(h, r);
    let mut roots = Vec::new();
    for (a, b) in sign_brackets(f, &grid) {
        let root = if a == b {
            Some(a)
        } else {
            newton_bracketed(f, |h| p.folded_f_h(h, r), a, b, 1e-15)
        };
        if let Some(x) = root {
            roots.push(x);
        }
    }
    let close = roots.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-6 * (1.0 + w[1]));
    Ok((roots, close))
}

pub fn find_folded_singularities(p: &ModelParams, r: f64) -> Result<FoldedSearch, FoldedError> {
    if !(0.0..=R_MAX).contains(&r) {
        return Err(FoldedError::Precondition(format!("r = {r} outside [0, {R_MAX}]")));
    }
    if p.lambda * p.d * p.d >= 1.0 || p.beta >= 1.0 {
        return Err(FoldedError::Precondition("need lambda d^2 < 1 and beta < 1".into()));
    }
    let (roots, degenerate_roots) = folded_roots(p, r)?;
    let singularities = roots
        .into_iter()
        .map(|h| classify_folded(h, p.fold_alpha(h), p, r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FoldedSearch { singularities, degenerate_roots })
}

/// The singularity continuing from `min(H_hat, H_I)`.
pub fn relevant_singularity(p: &ModelParams, r: f64) -> Result<FoldedSingularity, FoldedError> {
    let (h_hat, _) = pi_maximum(p)?;
    let anchor = h_hat.min(coexistence_h(p));
    find_folded_singularities(p, r)?
        .singularities
        .into_iter()
        .min_by(|a, b| (a.h - anchor).abs().partial_cmp(&(b.h - anchor).abs()).unwrap())
        .ok_or(FoldedError::NoSingularity(r))
}

fn relevant_delta(p: &ModelParams, r: f64) -> Result<f64, FoldedError> {
    let fs = relevant_singularity(p, r)?;
    Ok(discriminant(&jacobian(fs.h, fs.alpha, p, r)))
}

/// Smallest `r > 0` at which the relevant singularity turns from focus to node.
pub fn critical_rate(p: &ModelParams) -> Result<f64, FoldedError> {
    let grid: Vec<f64> = log_grid(1e-14, R_MAX, 240).into_iter().skip(1).collect();
    let mut prev: Option<(f64, f64)> = None;
    for &r in &grid {
        let d = match relevant_delta(p, r) {
            Ok(d) => d,
            Err(FoldedError::NoSingularity(_)) => break,
            Err(e) => return Err(e),
        };
        if let Some((r0, d0)) = prev {
            if d0 < 0.0 && d >= 0.0 {
                return bisect(|x| relevant_delta(p, x).unwrap_or(f64::NAN), r0, r, 1e-16 * r)
                    .map(|x| x.max(0.0))
                    .ok_or(FoldedError::NoCriticalRate);
            }
        }
        if prev.is_none() && d >= 0.0 {
            return Err(FoldedError::NoCriticalRate);
        }
        prev = Some((r, d));
    }
    Err(FoldedError::NoCriticalRate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    I,
    II,
    IIIa,
    IIIb,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::I => "I",
            Region::II => "II",
            Region::IIIa => "IIIa",
            Region::IIIb => "IIIb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionLabel {
    pub region: Region,
    pub delta_at_r: f64,
    /// Node for `r -> 0+`, decided by the threshold ordering.
    pub node_in_limit: bool,
    pub alpha_fs: f64,
    pub h_fs: f64,
    pub alpha_plus: f64,
    pub mu: Option<f64>,
    /// Classification inside the confidence band around a degeneracy.
    pub boundary: bool,
}

/// Bistable with `e_I` attracting at the ramp start, and a nonempty ramp interval.
pub fn bistability_screen(p: &ModelParams, delta: f64) -> Result<(), FoldedError> {
    if p.lambda * p.d * p.d >= 1.0 {
        return Err(FoldedError::ScreenFailed("lambda d^2 >= 1".into()));
    }
    let t = threshold_set(p)?;
    let a0 = p.d + delta;
    let top = t.alpha_plus.min(t.alpha_star) - delta;
    if a0 >= top {
        return Err(FoldedError::ScreenFailed(format!("empty ramp interval [{a0}, {top})")));
    }
    let reg = reduced_flow_regime(a0, p)?;
    if reg.item != RegimeItem::BelowBoth || reg.h_i.stability != Stability::Attracting || !reg.h_i_relevant {
        return Err(FoldedError::ScreenFailed(format!("e_I not an attracting coexistence state at alpha = {a0}")));
    }
    Ok(())
}

pub fn region_classify(beta: f64, lambda: f64, d: f64, r: f64) -> Result<RegionLabel, FoldedError> {
    region_classify_with(&ModelParams::new(lambda, beta, d, 0.01), r, DEFAULT_DELTA)
}

pub fn region_classify_with(p: &ModelParams, r: f64, delta: f64) -> Result<RegionLabel, FoldedError> {
    bistability_screen(p, delta)?;
    let t = threshold_set(p)?;
    let fs = relevant_singularity(p, r)?;
    let node_in_limit = t.ordering == ThresholdOrdering::StarPlusHat;
    let mut boundary = t.ordering == ThresholdOrdering::Coincident || fs.kind == FoldedKind::Degenerate;
    let region = match fs.kind {
        FoldedKind::Saddle => return Err(FoldedError::Saddle),
        FoldedKind::Node => {
            if node_in_limit {
                Region::I
            } else {
                Region::II
            }
        }
        FoldedKind::Focus => {
            if fs.alpha < t.alpha_plus {
                Region::IIIa
            } else {
                Region::IIIb
            }
        }
        FoldedKind::Degenerate => {
            boundary = true;
            if fs.delta >= 0.0 {
                if node_in_limit {
                    Region::I
                } else {
                    Region::II
                }
            } else if fs.alpha < t.alpha_plus {
                Region::IIIa
            } else {
                Region::IIIb
            }
        }
    };
    Ok(RegionLabel {
        region,
        delta_at_r: fs.delta,
        node_in_limit,
        alpha_fs: fs.alpha,
        h_fs: fs.h,
        alpha_plus: t.alpha_plus,
        mu: fs.mu,
        boundary,
    })
}

impl FoldedSingularity {
    /// Singular funnel of a node in the `(H, alpha)` chart: the wedge on the
    /// attracting side bounded by the fold curve and the weak eigendirection,
    /// containing the strong eigendirection.
    pub fn in_funnel(&self, h: f64, alpha: f64, p: &ModelParams) -> bool {
        let (Some(ws), Some(ss)) = (self.weak_dir, self.strong_dir) else {
            return false;
        };
        if p.q(h, alpha) <= 0.0 {
            return false;
        }
        let grad = [p.q_h(self.h, self.alpha), p.q_alpha(self.h)];
        let sign_in = if grad[0] * ss[0] + grad[1] * ss[1] >= 0.0 { 1.0 } else { -1.0 };
        let ss_in = [sign_in * ss[0], sign_in * ss[1]];
        let cross = |a: [f64; 2], b: [f64; 2]| a[0] * b[1] - a[1] * b[0];
        let x = [h - self.h, alpha - self.alpha];
        cross(ws, x).signum() == cross(ws, ss_in).signum()
    }
}
