//! Closed-form pieces of the non-dimensional reef model.
//!
//! Fish `H`, macroalgae `A` and coral `C` evolve on the fast time `t`; coral is
//! slow with ratio `epsilon`. The fishing effort `alpha` is either a fixed
//! parameter or a slowly ramped fourth state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper end of every bracketing search in `H`.
pub const H_BIG: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular point: {0}")]
    Singular(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParamWarning {
    /// `lambda * d^2 >= 1`: the coral-free branch geometry degenerates.
    LambdaD2AtLeastOne,
    EpsilonOutsideConsidered,
    LambdaOutsideConsidered,
    BetaOutsideConsidered,
    AlphaOutsideConsidered,
    /// A dimensional input lies outside its field range.
    DimensionalOutOfRange(&'static str),
}

/// Parameters in physical units (per year, except `d`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionalParams {
    pub mu: f64,
    pub m: f64,
    pub f: f64,
    pub r_a: f64,
    pub r_c: f64,
    pub d: f64,
    pub lambda0: f64,
}

impl DimensionalParams {
    /// Warnings for values outside the field-measured ranges.
    pub fn range_warnings(&self) -> Vec<ParamWarning> {
        let checks: [(&'static str, f64, f64, f64); 6] = [
            ("m", self.m, 0.008, 0.08),
            ("f", self.f, 0.0, 0.5),
            ("r_a", self.r_a, 1.0, 8.0),
            ("r_c", self.r_c, 0.02, 0.2),
            ("lambda0", self.lambda0, 0.0, 3.2),
            ("mu", self.mu, 0.02, 0.02),
        ];
        checks
            .iter()
            .filter(|(_, v, lo, hi)| *v < *lo || *v > *hi)
            .map(|(name, ..)| ParamWarning::DimensionalOutOfRange(name))
            .collect()
    }
}

/// Dimensionless model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda: f64,
    pub beta: f64,
    pub d: f64,
    pub epsilon: f64,
}

/// Maps physical parameters to `(ModelParams, alpha)`.
pub fn nondimensionalize(p: &DimensionalParams) -> Result<(ModelParams, f64), ModelError> {
    let fields = [p.mu, p.m, p.f, p.r_a, p.r_c, p.d, p.lambda0];
    if fields.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(ModelError::InvalidParameter(
            "dimensional parameters must be finite and nonnegative".into(),
        ));
    }
    for (name, v) in [("r_a", p.r_a), ("r_c", p.r_c), ("lambda0", p.lambda0)] {
        if v == 0.0 {
            return Err(ModelError::InvalidParameter(format!("{name} must be positive")));
        }
    }
    let params = ModelParams {
        lambda: p.lambda0 / p.r_a,
        beta: p.m / p.r_c,
        d: p.d,
        epsilon: p.r_c / p.r_a,
    };
    Ok((params, (p.mu + p.f) / p.lambda0))
}

impl ModelParams {
    pub fn new(lambda: f64, beta: f64, d: f64, epsilon: f64) -> Self {
        Self { lambda, beta, d, epsilon }
    }

    /// Hard invariants; returns soft warnings when they hold.
    pub fn validate(&self) -> Result<Vec<ParamWarning>, ModelError> {
        let all = [self.lambda, self.beta, self.d, self.epsilon];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidParameter("non-finite parameter".into()));
        }
        if self.lambda <= 0.0 {
            return Err(ModelError::InvalidParameter("lambda must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(ModelError::InvalidParameter("beta must lie in [0, 1)".into()));
        }
        if self.d <= 0.0 {
            return Err(ModelError::InvalidParameter("d must be positive".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(ModelError::InvalidParameter("epsilon must be positive".into()));
        }
        let mut w = Vec::new();
        if self.lambda * self.d * self.d >= 1.0 {
            w.push(ParamWarning::LambdaD2AtLeastOne);
        }
        if !(0.0025..=0.01).contains(&self.epsilon) {
            w.push(ParamWarning::EpsilonOutsideConsidered);
        }
        if self.lambda > 1.0 {
            w.push(ParamWarning::LambdaOutsideConsidered);
        }
        if self.beta < 0.04 {
            w.push(ParamWarning::BetaOutsideConsidered);
        }
        Ok(w)
    }

    pub fn alpha_warning(alpha: f64) -> Option<ParamWarning> {
        (!(0.1..=0.7).contains(&alpha)).then_some(ParamWarning::AlphaOutsideConsidered)
    }

    pub fn s(&self, h: f64) -> f64 {
        self.d + h / (1.0 + h)
    }

    pub fn s_prime(&self, h: f64) -> f64 {
        let w = 1.0 + h;
        1.0 / (w * w)
    }

    /// Fold-defining function; its unique root in `H` is the fold point.
    pub fn q(&self, h: f64, alpha: f64) -> f64 {
        let s = self.s(h);
        let w = 1.0 + h;
        self.lambda * (h + s * w * w) - alpha / (s * s)
    }

    pub fn q_h(&self, h: f64, alpha: f64) -> f64 {
        let s = self.s(h);
        let w = 1.0 + h;
        2.0 * self.lambda * (self.d + 1.0) * w + 2.0 * alpha / (w * w * s * s * s)
    }

    pub fn q_alpha(&self, h: f64) -> f64 {
        let s = self.s(h);
        -1.0 / (s * s)
    }

    /// Coral cover of the sheet where fish and algae are both present.
    pub fn coral_on_sheet(&self, h: f64, alpha: f64) -> f64 {
        let s = self.s(h);
        1.0 - alpha / s - self.lambda * h * s
    }

    pub fn coral_on_sheet_h(&self, h: f64, alpha: f64) -> f64 {
        let w = 1.0 + h;
        -self.q(h, alpha) / (w * w)
    }

    pub fn algae_on_sheet(&self, h: f64, alpha: f64) -> f64 {
        alpha / self.s(h)
    }

    pub fn pi(&self, h: f64) -> f64 {
        let s = self.s(h);
        s - self.lambda * h * s * s
    }

    pub fn pi_prime(&self, h: f64) -> f64 {
        let w = 1.0 + h;
        self.u(h) / (w * w)
    }

    pub fn u(&self, h: f64) -> f64 {
        let s = self.s(h);
        let w = 1.0 + h;
        1.0 - 2.0 * self.lambda * h * s - self.lambda * s * s * w * w
    }

    pub fn u_prime(&self, h: f64) -> f64 {
        let s = self.s(h);
        let w = 1.0 + h;
        let l = self.lambda;
        -2.0 * l * h / (w * w) - 4.0 * l * s - 2.0 * l * s * s * w
    }

    pub fn v(&self, h: f64) -> f64 {
        self.lambda * h * self.s(h) - self.beta
    }

    pub fn v_prime(&self, h: f64) -> f64 {
        let w = 1.0 + h;
        self.lambda * (self.s(h) + h / (w * w))
    }

    /// `alpha` on the fold curve above `H`.
    pub fn fold_alpha(&self, h: f64) -> f64 {
        let s = self.s(h);
        let w = 1.0 + h;
        self.lambda * s * s * (h + s * w * w)
    }

    pub fn fold_alpha_prime(&self, h: f64) -> f64 {
        let s = self.s(h);
        let w = 1.0 + h;
        let sp = 1.0 / (w * w);
        let k = h + s * w * w;
        let kp = 1.0 + sp * w * w + 2.0 * s * w;
        self.lambda * (2.0 * s * sp * k + s * s * kp)
    }

    pub fn rhs_fast(&self, y: State3, alpha: f64) -> [f64; 3] {
        let State3 { h, a, c } = y;
        let s = self.s(h);
        let l = self.lambda;
        [
            l * h * (s * a - alpha),
            a * (1.0 - a - c - l * h * s),
            self.epsilon * c * (1.0 - self.beta - a - c),
        ]
    }

    pub fn jac_fast(&self, y: State3, alpha: f64) -> [[f64; 3]; 3] {
        let State3 { h, a, c } = y;
        let s = self.s(h);
        let sp = self.s_prime(h);
        let l = self.lambda;
        let e = self.epsilon;
        [
            [l * ((s + h * sp) * a - alpha), l * h * s, 0.0],
            [-a * l * (s + h * sp), 1.0 - 2.0 * a - c - l * h * s, -a],
            [0.0, -e * c, e * (1.0 - self.beta - a - 2.0 * c)],
        ]
    }

    /// Reduced slow flow on the sheet `A = alpha/s`, in slow time.
    pub fn rhs_reduced_s02(&self, h: f64, alpha: f64) -> Result<f64, ModelError> {
        if h <= 0.0 {
            return Err(ModelError::Domain(format!("H = {h} must be positive")));
        }
        let q = self.q(h, alpha);
        if q == 0.0 {
            return Err(ModelError::Singular(format!("fold at H = {h}")));
        }
        let w = 1.0 + h;
        Ok(-w * w / q * self.coral_on_sheet(h, alpha) * self.v(h))
    }

    /// Desingularised ramped reduced flow `(dH/ds, dalpha/ds)`.
    pub fn rhs_desingularized(&self, h: f64, alpha: f64, r: f64) -> (f64, f64) {
        let w = 1.0 + h;
        let s = self.s(h);
        let lam = -w * w * (self.coral_on_sheet(h, alpha) * self.v(h) + r / s);
        (lam, r * self.q(h, alpha))
    }

    /// `F(H, r) = u v + r/s`; its roots are the folded singularities.
    pub fn folded_f(&self, h: f64, r: f64) -> f64 {
        self.u(h) * self.v(h) + r / self.s(h)
    }

    pub fn folded_f_h(&self, h: f64, r: f64) -> f64 {
        let s = self.s(h);
        self.u_prime(h) * self.v(h) + self.u(h) * self.v_prime(h) - r * self.s_prime(h) / (s * s)
    }
}

/// Checked feeding rate.
pub fn feeding_rate(h: f64, d: f64) -> Result<f64, ModelError> {
    if !(h >= 0.0) {
        return Err(ModelError::Domain(format!("H = {h} must be nonnegative")));
    }
    Ok(d + h / (1.0 + h))
}

/// Checked `(Q, dQ/dH)`.
pub fn q_function(h: f64, alpha: f64, p: &ModelParams) -> Result<(f64, f64), ModelError> {
    if !(h >= 0.0) || !(alpha > 0.0) {
        return Err(ModelError::Domain(format!("need H >= 0 and alpha > 0, got H = {h}, alpha = {alpha}")));
    }
    Ok((p.q(h, alpha), p.q_h(h, alpha)))
}

/// Checked `(Pi, dPi/dH)`.
pub fn pi_function(h: f64, p: &ModelParams) -> Result<(f64, f64), ModelError> {
    if !(h >= 0.0) {
        return Err(ModelError::Domain(format!("H = {h} must be nonnegative")));
    }
    Ok((p.pi(h), p.pi_prime(h)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State3 {
    pub h: f64,
    pub a: f64,
    pub c: f64,
}

impl State3 {
    pub fn new(h: f64, a: f64, c: f64) -> Self {
        Self { h, a, c }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.h, self.a, self.c]
    }

    pub fn from_slice(y: &[f64]) -> Self {
        Self { h: y[0], a: y[1], c: y[2] }
    }

    pub fn max_dist(self, o: State3) -> f64 {
        (self.h - o.h).abs().max((self.a - o.a).abs()).max((self.c - o.c).abs())
    }

    pub fn in_domain(self, tol: f64) -> bool {
        self.h >= -tol && (-tol..=1.0 + tol).contains(&self.a) && (-tol..=1.0 + tol).contains(&self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State4 {
    pub h: f64,
    pub a: f64,
    pub c: f64,
    pub alpha: f64,
}

impl State4 {
    pub fn new(h: f64, a: f64, c: f64, alpha: f64) -> Self {
        Self { h, a, c, alpha }
    }

    pub fn from_state3(y: State3, alpha: f64) -> Self {
        Self { h: y.h, a: y.a, c: y.c, alpha }
    }

    pub fn state3(self) -> State3 {
        State3 { h: self.h, a: self.a, c: self.c }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.h, self.a, self.c, self.alpha]
    }

    pub fn from_slice(y: &[f64]) -> Self {
        Self { h: y[0], a: y[1], c: y[2], alpha: y[3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AlphaMaxRule {
    MinPlusStar,
    Plus,
    Explicit(f64),
}

/// Ramp law for `alpha`: rate `r` per slow time on `[alpha_min_delta, alpha_max_delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampConfig {
    pub r: f64,
    pub delta: f64,
    pub alpha_min_delta: f64,
    pub alpha_max_delta: f64,
    pub alpha_max_rule: AlphaMaxRule,
}

impl RampConfig {
    /// Builds clamp bounds from the thresholds of `p`.
    pub fn new(p: &ModelParams, r: f64, delta: f64, rule: AlphaMaxRule) -> Result<Self, ModelError> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(ModelError::InvalidParameter(format!("ramp rate r = {r} must be >= 0")));
        }
        if !(delta > 0.0) {
            return Err(ModelError::InvalidParameter(format!("delta = {delta} must be positive")));
        }
        let alpha_max_delta = match rule {
            AlphaMaxRule::Explicit(v) => v,
            AlphaMaxRule::MinPlusStar | AlphaMaxRule::Plus => {
                let t = crate::manifold::threshold_set(p)
                    .map_err(|e| ModelError::InvalidParameter(e.to_string()))?;
                let top = if rule == AlphaMaxRule::Plus {
                    t.alpha_plus
                } else {
                    t.alpha_plus.min(t.alpha_star)
                };
                top - delta
            }
        };
        let ramp = Self {
            r,
            delta,
            alpha_min_delta: p.d + delta,
            alpha_max_delta,
            alpha_max_rule: rule,
        };
        if ramp.alpha_min_delta >= ramp.alpha_max_delta {
            return Err(ModelError::InvalidParameter(format!(
                "empty ramp interval [{}, {})",
                ramp.alpha_min_delta, ramp.alpha_max_delta
            )));
        }
        Ok(ramp)
    }

    pub fn is_active(&self, alpha: f64) -> bool {
        alpha >= self.alpha_min_delta && alpha < self.alpha_max_delta
    }
}

/// Ramped vector field in the fast chart: `dalpha/dt = epsilon r` while the ramp is active.
pub fn rhs_ramped(y: State4, p: &ModelParams, ramp: &RampConfig) -> [f64; 4] {
    let f = p.rhs_fast(y.state3(), y.alpha);
    let da = if ramp.is_active(y.alpha) { p.epsilon * ramp.r } else { 0.0 };
    [f[0], f[1], f[2], da]
}

/// Jacobian of the ramped field in the fast chart (ramp term is state independent).
pub fn jac_ramped(y: State4, p: &ModelParams) -> [[f64; 4]; 4] {
    let j = p.jac_fast(y.state3(), y.alpha);
    let l = p.lambda;
    [
        [j[0][0], j[0][1], j[0][2], -l * y.h],
        [j[1][0], j[1][1], j[1][2], 0.0],
        [j[2][0], j[2][1], j[2][2], 0.0],
        [0.0, 0.0, 0.0, 0.0],
    ]
}
