//! Critical-manifold geometry at frozen `alpha`.

use crate::model::{ModelParams, State3, H_BIG};
use crate::roots::{golden_max, newton_bracketed};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ROOT_XTOL: f64 = 1e-15;
/// Two thresholds closer than this are treated as equal.
pub const COINCIDENCE_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifoldError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("root bracketing failed: {0}")]
    Bracketing(String),
    #[error("point is not on the critical manifold (residual {0:e})")]
    OffManifold(f64),
    #[error("no real bifurcation curve at beta = {0}")]
    NoRealCurve(f64),
}

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<(), ManifoldError> {
    if cond {
        Ok(())
    } else {
        Err(ManifoldError::Precondition(msg()))
    }
}

/// Unique root of `Q(., alpha)`; requires `alpha > lambda d^3`.
pub fn fold_point(alpha: f64, p: &ModelParams) -> Result<f64, ManifoldError> {
    let floor = p.lambda * p.d.powi(3);
    require(alpha > floor, || format!("alpha = {alpha} must exceed lambda d^3 = {floor}"))?;
    let mut hi = H_BIG;
    while p.q(hi, alpha) <= 0.0 {
        hi *= 10.0;
        if hi > 1e12 {
            return Err(ManifoldError::Bracketing(format!("Q has no sign change for alpha = {alpha}")));
        }
    }
    newton_bracketed(|h| p.q(h, alpha), |h| p.q_h(h, alpha), 0.0, hi, ROOT_XTOL)
        .ok_or_else(|| ManifoldError::Bracketing(format!("fold point for alpha = {alpha}")))
}

/// Coexistence state `e_I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coexistence {
    pub h: f64,
    pub a: f64,
    pub c: f64,
    /// `C_I >= 0`.
    pub relevant: bool,
}

impl Coexistence {
    pub fn state(&self) -> State3 {
        State3::new(self.h, self.a, self.c)
    }
}

/// Closed-form `H_I`, independent of `alpha`.
pub fn coexistence_h(p: &ModelParams) -> f64 {
    let b = p.beta / p.lambda;
    let d = p.d;
    (b - d + ((b + d) * (b + d) + 4.0 * b).sqrt()) / (2.0 * (d + 1.0))
}

pub fn coexistence_equilibrium(alpha: f64, p: &ModelParams) -> Result<Coexistence, ManifoldError> {
    require(p.beta < 1.0, || format!("beta = {} must be below 1", p.beta))?;
    let h = coexistence_h(p);
    let s = p.s(h);
    let a = alpha / s;
    let c = 1.0 - p.beta - a;
    Ok(Coexistence { h, a, c, relevant: c >= 0.0 })
}

/// Roots of `Pi(H) = alpha` on `[0, H_BIG]`, increasing.
pub fn coral_free_equilibria(alpha: f64, p: &ModelParams) -> Result<Vec<f64>, ManifoldError> {
    require(p.lambda * p.d * p.d < 1.0, || "lambda d^2 must be below 1".into())?;
    let (h_hat, alpha_hat) = pi_maximum(p)?;
    let scale = 1e-12 * (1.0 + alpha_hat.abs());
    if alpha > alpha_hat + scale {
        return Ok(Vec::new());
    }
    if (alpha - alpha_hat).abs() <= scale {
        return Ok(vec![h_hat]);
    }
    let g = |h: f64| p.pi(h) - alpha;
    let dg = |h: f64| p.pi_prime(h);
    let mut out = Vec::new();
    if alpha >= p.d {
        let r = if alpha == p.d {
            0.0
        } else {
            newton_bracketed(g, dg, 0.0, h_hat, ROOT_XTOL)
                .ok_or_else(|| ManifoldError::Bracketing("ascending branch of Pi".into()))?
        };
        out.push(r);
    }
    let mut hi = H_BIG;
    while g(hi) > 0.0 {
        hi *= 10.0;
        if hi > 1e12 {
            return Err(ManifoldError::Bracketing("descending branch of Pi".into()));
        }
    }
    let r = newton_bracketed(g, dg, h_hat, hi, ROOT_XTOL)
        .ok_or_else(|| ManifoldError::Bracketing("descending branch of Pi".into()))?;
    out.push(r);
    Ok(out)
}

/// `(H_hat, alpha_hat)`: golden-section on `Pi`, then Newton on `u = 0`.
pub fn pi_maximum(p: &ModelParams) -> Result<(f64, f64), ManifoldError> {
    require(p.lambda * p.d * p.d < 1.0, || "lambda d^2 must be below 1".into())?;
    let mut hi = 1.0;
    while p.u(hi) > 0.0 {
        hi *= 2.0;
        if hi > H_BIG {
            return Err(ManifoldError::Bracketing("Pi has no interior maximum".into()));
        }
    }
    let rough = golden_max(|h| p.pi(h), 0.0, hi, 1e-10);
    let (mut a, mut b) = ((rough - 1e-6).max(0.0), rough + 1e-6);
    while p.u(a) <= 0.0 && a > 0.0 {
        a = (a - 2.0 * (b - a)).max(0.0);
    }
    while p.u(b) >= 0.0 {
        b += 2.0 * (b - a);
    }
    let h = newton_bracketed(|h| p.u(h), |h| p.u_prime(h), a, b, ROOT_XTOL)
        .ok_or_else(|| ManifoldError::Bracketing("Newton polish of H_hat".into()))?;
    Ok((h, p.pi(h)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdOrdering {
    /// `alpha* < alpha+ < alpha_hat`; `H_I < H_hat`.
    StarPlusHat,
    /// `alpha+ < alpha_hat < alpha*`; `H_I > H_hat`.
    PlusHatStar,
    /// All three coincide: the parameters lie on the bifurcation curve.
    Coincident,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub alpha_plus: f64,
    pub alpha_star: f64,
    pub alpha_hat: f64,
    pub h_hat: f64,
    pub h_i: f64,
    pub ordering: ThresholdOrdering,
}

pub fn alpha_plus(p: &ModelParams) -> f64 {
    (1.0 - p.beta) * p.s(coexistence_h(p))
}

pub fn alpha_star(p: &ModelParams) -> f64 {
    p.fold_alpha(coexistence_h(p))
}

pub fn threshold_set(p: &ModelParams) -> Result<ThresholdSet, ManifoldError> {
    require(p.beta < 1.0, || format!("beta = {} must be below 1", p.beta))?;
    let h_i = coexistence_h(p);
    let alpha_plus = alpha_plus(p);
    let alpha_star = alpha_star(p);
    let (h_hat, alpha_hat) = pi_maximum(p)?;
    let ordering = if (alpha_plus - alpha_star).abs() < COINCIDENCE_TOL {
        ThresholdOrdering::Coincident
    } else if alpha_star < alpha_plus {
        ThresholdOrdering::StarPlusHat
    } else {
        ThresholdOrdering::PlusHatStar
    };
    Ok(ThresholdSet { alpha_plus, alpha_star, alpha_hat, h_hat, h_i, ordering })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// `H = 0, A = 0`.
    Bare,
    /// `H = 0, A = 1 - C`.
    AlgaeOnly,
    /// `A = alpha/s(H)`, `C = 1 - alpha/s - lambda H s`.
    Coexisting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Attracting,
    Repelling,
    NonHyperbolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerStability {
    pub branch: Branch,
    /// `(re, im)` pairs of the fast `(H, A)` Jacobian.
    pub eigenvalues: [(f64, f64); 2],
    pub stability: Stability,
    /// Eigenvalues of opposite sign.
    pub saddle: bool,
}

fn eig2(tr: f64, det: f64) -> [(f64, f64); 2] {
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        let l1 = if tr >= 0.0 { 0.5 * (tr + sq) } else { 0.5 * (tr - sq) };
        let l2 = if l1 != 0.0 { det / l1 } else { tr - l1 };
        [(l1.min(l2), 0.0), (l1.max(l2), 0.0)]
    } else {
        let im = 0.5 * (-disc).sqrt();
        [(0.5 * tr, -im), (0.5 * tr, im)]
    }
}

/// Fast-direction stability of a point on the critical manifold.
pub fn layer_stability(y: State3, alpha: f64, p: &ModelParams) -> Result<LayerStability, ManifoldError> {
    const TOL: f64 = 1e-8;
    let (branch, eigenvalues) = if y.h.abs() < TOL && y.a.abs() < TOL {
        (Branch::Bare, [(-p.lambda * alpha, 0.0), (1.0 - y.c, 0.0)])
    } else if y.h.abs() < TOL && (y.a - (1.0 - y.c)).abs() < TOL {
        (Branch::AlgaeOnly, [(p.lambda * (p.d * y.a - alpha), 0.0), (-y.a, 0.0)])
    } else {
        let res = (y.a - p.algae_on_sheet(y.h, alpha))
            .abs()
            .max((y.c - p.coral_on_sheet(y.h, alpha)).abs());
        if res >= TOL || y.h < 0.0 {
            return Err(ManifoldError::OffManifold(res));
        }
        let w = 1.0 + y.h;
        let tr = alpha / p.s(y.h) * (p.lambda * y.h / (w * w) - 1.0);
        let det = p.lambda * alpha * y.h * p.q(y.h, alpha) / (w * w);
        (Branch::Coexisting, eig2(tr, det))
    };
    let re = [eigenvalues[0].0, eigenvalues[1].0];
    let stability = if re.iter().any(|r| r.abs() < 1e-10) {
        Stability::NonHyperbolic
    } else if re.iter().all(|r| *r < 0.0) {
        Stability::Attracting
    } else {
        Stability::Repelling
    };
    let saddle = re[0] * re[1] < 0.0;
    Ok(LayerStability { branch, eigenvalues, stability, saddle })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeItem {
    /// `alpha < min(alpha+, alpha*)`: bistable with `e_I` attracting.
    BelowBoth,
    /// `alpha = alpha+ < alpha*`: transcritical coalescence of `H_nC^a` and `H_I`.
    TranscriticalPlus,
    /// `alpha+ < alpha < alpha*`.
    PlusToStar,
    /// `alpha = alpha* < alpha+`: `H_I` sits on the fold.
    FoldStar,
    /// `alpha* < alpha < alpha+`.
    StarToPlus,
    AboveBoth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowEquilibrium {
    pub h: f64,
    pub stability: Stability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRegime {
    pub item: RegimeItem,
    pub h0: f64,
    pub h_nc_r: Option<FlowEquilibrium>,
    pub h_nc_a: Option<FlowEquilibrium>,
    pub h_i: FlowEquilibrium,
    pub h_i_relevant: bool,
}

fn sign_stability(x: f64) -> Stability {
    if x.abs() < 1e-12 {
        Stability::NonHyperbolic
    } else if x < 0.0 {
        Stability::Attracting
    } else {
        Stability::Repelling
    }
}

/// Stability of the reduced flow on the coexisting sheet at frozen `alpha`.
pub fn reduced_flow_regime(alpha: f64, p: &ModelParams) -> Result<FlowRegime, ManifoldError> {
    require(p.lambda * p.d * p.d < 1.0, || "lambda d^2 must be below 1".into())?;
    require(p.beta < 1.0, || format!("beta = {} must be below 1", p.beta))?;
    require(alpha > p.d, || format!("alpha = {alpha} must exceed d = {}", p.d))?;
    let t = threshold_set(p)?;
    let (ap, ast) = (t.alpha_plus, t.alpha_star);
    let near = |x: f64| (alpha - x).abs() < COINCIDENCE_TOL;
    let item = if near(ap) && ap < ast {
        RegimeItem::TranscriticalPlus
    } else if near(ast) && ast < ap {
        RegimeItem::FoldStar
    } else if alpha < ap.min(ast) {
        RegimeItem::BelowBoth
    } else if ap < alpha && alpha < ast {
        RegimeItem::PlusToStar
    } else if ast < alpha && alpha < ap {
        RegimeItem::StarToPlus
    } else {
        RegimeItem::AboveBoth
    };
    let h0 = fold_point(alpha, p)?;
    let roots = coral_free_equilibria(alpha, p)?;
    let at = |h: f64| FlowEquilibrium { h, stability: sign_stability(p.v(h)) };
    let (h_nc_r, h_nc_a) = match roots.as_slice() {
        [r, a] => (Some(at(*r)), Some(at(*a))),
        [x] if *x < h0 => (Some(at(*x)), None),
        [x] => (None, Some(at(*x))),
        _ => (None, None),
    };
    let e = coexistence_equilibrium(alpha, p)?;
    let q_i = p.q(e.h, alpha);
    let h_i = FlowEquilibrium {
        h: e.h,
        stability: if q_i.abs() < 1e-12 { Stability::NonHyperbolic } else { sign_stability(-e.c * q_i) },
    };
    Ok(FlowRegime { item, h0, h_nc_r, h_nc_a, h_i, h_i_relevant: e.relevant })
}

/// `lambda` on the curve where `alpha+ = alpha* = alpha_hat`, if it meets `(0, 1)`.
pub fn bifurcation_curve_lambda(beta: f64, d: f64) -> Result<Option<f64>, ManifoldError> {
    require(beta > 0.0 && beta < 1.0, || format!("beta = {beta} must lie in (0, 1)"))?;
    require(d > 0.0, || format!("d = {d} must be positive"))?;
    let gap = |lambda: f64| {
        let p = ModelParams::new(lambda, beta, d, 0.01);
        alpha_star(&p) - alpha_plus(&p)
    };
    if (beta - 0.5).abs() < 1e-12 {
        let grid: Vec<f64> = (1..=400).map(|i| i as f64 / 400.0 * (1.0 - 1e-9)).collect();
        for w in grid.windows(2) {
            if gap(w[0]).signum() != gap(w[1]).signum() {
                return Ok(crate::roots::bisect(gap, w[0], w[1], 1e-15));
            }
        }
        return Ok(None);
    }
    let disc = 4.0 * beta * d * (2.0 * beta - 1.0) + (3.0 * beta - 1.0).powi(2);
    if disc < 0.0 {
        return Err(ManifoldError::NoRealCurve(beta));
    }
    Ok(bifurcation_branches(beta, d, disc)
        .into_iter()
        .find(|&l| l > 0.0 && l < 1.0 && selects_branch(beta, l, d)))
}

/// Both closed-form branches, `+` first.
pub fn bifurcation_branches(beta: f64, d: f64, disc: f64) -> [f64; 2] {
    let base = 2.0 * beta * d * (2.0 * beta - 1.0) + (3.0 * beta - 1.0).powi(2);
    let root = (3.0 * beta - 1.0) * disc.sqrt();
    let den = 2.0 * d * d * (2.0 * beta - 1.0);
    [-(base + root) / den, -(base - root) / den]
}

/// Selection inequality `lambda (1 - 2 beta - 2 beta d) >= beta^2`.
pub fn selects_branch(beta: f64, lambda: f64, d: f64) -> bool {
    lambda * (1.0 - 2.0 * beta - 2.0 * beta * d) >= beta * beta
}
