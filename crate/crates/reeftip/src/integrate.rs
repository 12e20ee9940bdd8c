//! Variable-order BDF integration (orders 1-5) with dense output and event location.
//!
//! The stepping logic follows the quasi-constant step-size formulation of
//! Shampine and Reichelt: backward differences are stored in `D`, rescaled on
//! every step-size change, and the Newton iteration is a simplified one that
//! reuses the LU factorisation of `I - c J` until convergence slows down.

use crate::model::{jac_ramped, ModelParams, RampConfig, State4};
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAX_ORDER: usize = 5;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const KAPPA: [f64; 6] = [0.0, -0.1850, -1.0 / 9.0, -0.0823, -0.0415, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub initial_step: Option<f64>,
    /// Newton displacement tolerance in scaled norm; derived from `rtol` when `None`.
    pub newton_tol: Option<f64>,
    pub newton_max_iters: usize,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            max_step: f64::INFINITY,
            initial_step: None,
            newton_tol: None,
            newton_max_iters: 4,
            max_steps: 2_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), IntegrateError> {
        let bad = |m: String| Err(IntegrateError::InvalidConfig(m));
        if !(1e-12..=1e-2).contains(&self.rtol) {
            return bad(format!("rtol = {} outside [1e-12, 1e-2]", self.rtol));
        }
        if !(self.atol > 0.0) {
            return bad(format!("atol = {} must be positive", self.atol));
        }
        if !(self.max_step > 0.0) {
            return bad(format!("max_step = {} must be positive", self.max_step));
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0) {
                return bad(format!("initial_step = {h} must be positive"));
            }
        }
        if self.max_steps == 0 || self.newton_max_iters == 0 {
            return bad("max_steps and newton_max_iters must be positive".into());
        }
        Ok(())
    }

    fn newton_tol(&self) -> f64 {
        self.newton_tol
            .unwrap_or_else(|| (10.0 * f64::EPSILON / self.rtol).max(0.03f64.min(self.rtol.sqrt())))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("invalid integrator config: {0}")]
    InvalidConfig(String),
    #[error("non-finite state or derivative at t = {t}")]
    NonFinite { t: f64 },
    #[error("step size fell below the minimum at t = {t}")]
    StepTooSmall { t: f64 },
    #[error("step limit {steps} reached at t = {t}")]
    MaxSteps { t: f64, steps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    AlphaClampHit,
    FoldCrossing,
    EquilibriumConverged,
    LeftDomain,
    TipFloor,
    AlphaReset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Any,
    Rising,
    Falling,
}

/// Scalar indicator whose zero crossings are located on the dense output.
pub struct EventSpec<'a, const N: usize> {
    pub kind: EventKind,
    pub indicator: Box<dyn Fn(f64, &[f64; N]) -> f64 + Send + Sync + 'a>,
    pub terminal: bool,
    pub direction: Direction,
}

impl<'a, const N: usize> EventSpec<'a, N> {
    pub fn new(
        kind: EventKind,
        terminal: bool,
        direction: Direction,
        indicator: impl Fn(f64, &[f64; N]) -> f64 + Send + Sync + 'a,
    ) -> Self {
        Self { kind, indicator: Box::new(indicator), terminal, direction }
    }

    fn fires(&self, g0: f64, g1: f64) -> bool {
        let rising = g0 < 0.0 && g1 >= 0.0;
        let falling = g0 > 0.0 && g1 <= 0.0;
        match self.direction {
            Direction::Any => rising || falling,
            Direction::Rising => rising,
            Direction::Falling => falling,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord<const N: usize> {
    pub kind: EventKind,
    pub t: f64,
    pub y: [f64; N],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Completed,
    Terminal(EventKind),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub n_steps: usize,
    pub n_rejected: usize,
    pub n_rhs: usize,
    pub n_jac: usize,
    pub n_lu: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DenseSegment<const N: usize> {
    t_old: f64,
    t: f64,
    /// End of validity; earlier than `t` when a terminal event cut the step.
    t_hi: f64,
    h: f64,
    order: usize,
    d: [[f64; N]; MAX_ORDER + 1],
}

impl<const N: usize> DenseSegment<N> {
    fn eval(&self, t: f64) -> [f64; N] {
        let mut y = self.d[0];
        let mut p = 1.0;
        for j in 0..self.order {
            let shift = self.t - self.h * j as f64;
            p *= (t - shift) / (self.h * (j + 1) as f64);
            for (yi, di) in y.iter_mut().zip(self.d[j + 1].iter()) {
                *yi += p * di;
            }
        }
        y
    }
}

/// Accepted steps, events and the piecewise polynomial interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const N: usize> {
    pub t: Vec<f64>,
    pub y: Vec<[f64; N]>,
    pub events: Vec<EventRecord<N>>,
    pub termination: Termination,
    /// Slow time per unit fast time (`epsilon` for the fast chart).
    pub tau_per_t: f64,
    pub stats: Stats,
    dense: Vec<DenseSegment<N>>,
}

impl<const N: usize> Trajectory<N> {
    fn start(t0: f64, y0: [f64; N], tau_per_t: f64) -> Self {
        Self {
            t: vec![t0],
            y: vec![y0],
            events: Vec::new(),
            termination: Termination::Completed,
            tau_per_t,
            stats: Stats::default(),
            dense: Vec::new(),
        }
    }

    pub fn tau(&self) -> Vec<f64> {
        self.t.iter().map(|t| t * self.tau_per_t).collect()
    }

    pub fn t_start(&self) -> f64 {
        self.t[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn last(&self) -> [f64; N] {
        *self.y.last().unwrap()
    }

    /// Dense-output state at fast time `t` inside the integrated window.
    pub fn sample(&self, t: f64) -> Option<[f64; N]> {
        if self.dense.is_empty() {
            return (t == self.t[0]).then_some(self.y[0]);
        }
        if t < self.t_start() || t > self.t_end() {
            return None;
        }
        let i = self.dense.partition_point(|s| s.t_hi < t).min(self.dense.len() - 1);
        Some(self.dense[i].eval(t))
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &EventRecord<N>> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Appends `other`, which must start where `self` ends.
    pub fn append(&mut self, other: Trajectory<N>) {
        let skip = usize::from(other.t[0] == self.t_end());
        self.t.extend_from_slice(&other.t[skip..]);
        self.y.extend_from_slice(&other.y[skip..]);
        self.events.extend(other.events);
        self.dense.extend(other.dense);
        self.termination = other.termination;
        self.stats.n_steps += other.stats.n_steps;
        self.stats.n_rejected += other.stats.n_rejected;
        self.stats.n_rhs += other.stats.n_rhs;
        self.stats.n_jac += other.stats.n_jac;
        self.stats.n_lu += other.stats.n_lu;
    }
}

type Vect<const N: usize> = SVector<f64, N>;
type Mat<const N: usize> = SMatrix<f64, N, N>;

fn rms<const N: usize>(v: &Vect<N>) -> f64 {
    v.norm() / (N as f64).sqrt()
}

fn compute_r(order: usize, factor: f64) -> [[f64; MAX_ORDER + 1]; MAX_ORDER + 1] {
    let mut m = [[0.0; MAX_ORDER + 1]; MAX_ORDER + 1];
    m[0][..=order].fill(1.0);
    for i in 1..=order {
        for j in 1..=order {
            m[i][j] = (i as f64 - 1.0 - factor * j as f64) / i as f64;
        }
    }
    for i in 1..=order {
        for j in 0..=order {
            m[i][j] *= m[i - 1][j];
        }
    }
    m
}

fn change_d<const N: usize>(d: &mut [Vect<N>; MAX_ORDER + 3], order: usize, factor: f64) {
    let r = compute_r(order, factor);
    let u = compute_r(order, 1.0);
    let mut ru = [[0.0; MAX_ORDER + 1]; MAX_ORDER + 1];
    for i in 0..=order {
        for j in 0..=order {
            ru[i][j] = (0..=order).map(|k| r[i][k] * u[k][j]).sum();
        }
    }
    let old: Vec<Vect<N>> = d[..=order].to_vec();
    for (i, di) in d.iter_mut().enumerate().take(order + 1) {
        *di = (0..=order).fold(Vect::<N>::zeros(), |acc, j| acc + old[j] * ru[j][i]);
    }
}

/// Dense LU with partial pivoting for the small Newton matrices.
struct Lu<const N: usize> {
    a: Mat<N>,
    piv: [usize; N],
}

impl<const N: usize> Lu<N> {
    fn factor(m: &Mat<N>) -> Option<Self> {
        let mut a = *m;
        let mut piv = [0; N];
        for k in 0..N {
            let p = (k..N).max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs())).unwrap();
            if a[(p, k)] == 0.0 || !a[(p, k)].is_finite() {
                return None;
            }
            piv[k] = p;
            a.swap_rows(k, p);
            for i in k + 1..N {
                a[(i, k)] /= a[(k, k)];
                for j in k + 1..N {
                    a[(i, j)] -= a[(i, k)] * a[(k, j)];
                }
            }
        }
        Some(Self { a, piv })
    }

    fn solve(&self, b: &Vect<N>) -> Option<Vect<N>> {
        let mut x = *b;
        for k in 0..N {
            x.swap_rows(k, self.piv[k]);
        }
        for i in 0..N {
            for j in 0..i {
                x[i] -= self.a[(i, j)] * x[j];
            }
        }
        for i in (0..N).rev() {
            for j in i + 1..N {
                x[i] -= self.a[(i, j)] * x[j];
            }
            x[i] /= self.a[(i, i)];
        }
        Some(x)
    }
}

struct Bdf<'f, const N: usize> {
    rhs: &'f dyn Fn(f64, &[f64; N]) -> [f64; N],
    jac: &'f dyn Fn(f64, &[f64; N]) -> [[f64; N]; N],
    cfg: IntegratorConfig,
    newton_tol: f64,
    t: f64,
    t_bound: f64,
    y: Vect<N>,
    h_abs: f64,
    order: usize,
    n_equal_steps: usize,
    d: [Vect<N>; MAX_ORDER + 3],
    j: Mat<N>,
    lu: Option<Lu<N>>,
    gamma: [f64; MAX_ORDER + 1],
    alpha: [f64; MAX_ORDER + 1],
    error_const: [f64; MAX_ORDER + 1],
    stats: Stats,
}

impl<'f, const N: usize> Bdf<'f, N> {
    fn f(&mut self, t: f64, y: &Vect<N>) -> Vect<N> {
        self.stats.n_rhs += 1;
        Vect::<N>::from((self.rhs)(t, &(*y).into()))
    }

    fn jacobian(&mut self, t: f64, y: &Vect<N>) -> Mat<N> {
        self.stats.n_jac += 1;
        let a = (self.jac)(t, &(*y).into());
        Mat::<N>::from_fn(|i, k| a[i][k])
    }

    fn new(
        rhs: &'f dyn Fn(f64, &[f64; N]) -> [f64; N],
        jac: &'f dyn Fn(f64, &[f64; N]) -> [[f64; N]; N],
        t0: f64,
        y0: [f64; N],
        t_bound: f64,
        cfg: IntegratorConfig,
    ) -> Result<Self, IntegrateError> {
        let mut gamma = [0.0; MAX_ORDER + 1];
        for k in 1..=MAX_ORDER {
            gamma[k] = gamma[k - 1] + 1.0 / k as f64;
        }
        let mut alpha = [0.0; MAX_ORDER + 1];
        let mut error_const = [0.0; MAX_ORDER + 1];
        for k in 0..=MAX_ORDER {
            alpha[k] = (1.0 - KAPPA[k]) * gamma[k];
            error_const[k] = KAPPA[k] * gamma[k] + 1.0 / (k + 1) as f64;
        }
        let y = Vect::<N>::from(y0);
        let mut s = Self {
            rhs,
            jac,
            cfg,
            newton_tol: cfg.newton_tol(),
            t: t0,
            t_bound,
            y,
            h_abs: 0.0,
            order: 1,
            n_equal_steps: 0,
            d: [Vect::<N>::zeros(); MAX_ORDER + 3],
            j: Mat::<N>::zeros(),
            lu: None,
            gamma,
            alpha,
            error_const,
            stats: Stats::default(),
        };
        let f0 = s.f(t0, &y);
        if !f0.iter().all(|v| v.is_finite()) {
            return Err(IntegrateError::NonFinite { t: t0 });
        }
        s.h_abs = match cfg.initial_step {
            Some(h) => h.min(t_bound - t0),
            None => s.initial_step(&f0),
        };
        s.d[0] = y;
        s.d[1] = f0 * s.h_abs;
        s.j = s.jacobian(t0, &y);
        Ok(s)
    }

    fn initial_step(&mut self, f0: &Vect<N>) -> f64 {
        let span = self.t_bound - self.t;
        let scale = self.y.map(|v| self.cfg.atol + v.abs() * self.cfg.rtol);
        let d0 = rms(&self.y.component_div(&scale));
        let d1 = rms(&f0.component_div(&scale));
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 }.min(span);
        let y1 = self.y + f0 * h0;
        let f1 = self.f(self.t + h0, &y1);
        let d2 = rms(&(f1 - f0).component_div(&scale)) / h0;
        let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).sqrt()
        };
        (100.0 * h0).min(h1).min(span).min(self.cfg.max_step)
    }

    fn solve_system(&mut self, t_new: f64, y_predict: &Vect<N>, c: f64, psi: &Vect<N>, scale: &Vect<N>) -> (bool, usize, Vect<N>, Vect<N>) {
        let mut d = Vect::<N>::zeros();
        let mut y = *y_predict;
        let mut dy_norm_old: Option<f64> = None;
        let maxit = self.cfg.newton_max_iters;
        let mut k = 0;
        while k < maxit {
            let f = self.f(t_new, &y);
            if !f.iter().all(|v| v.is_finite()) {
                break;
            }
            let Some(dy) = self.lu.as_ref().and_then(|lu| lu.solve(&(f * c - psi - d))) else {
                break;
            };
            let dy_norm = rms(&dy.component_div(scale));
            let rate = dy_norm_old.map(|o| dy_norm / o);
            if let Some(rate) = rate {
                if rate >= 1.0 || rate.powi((maxit - k) as i32) / (1.0 - rate) * dy_norm > self.newton_tol {
                    break;
                }
            }
            y += dy;
            d += dy;
            if dy_norm == 0.0 || rate.is_some_and(|rate| rate / (1.0 - rate) * dy_norm < self.newton_tol) {
                return (true, k + 1, y, d);
            }
            dy_norm_old = Some(dy_norm);
            k += 1;
        }
        (false, (k + 1).min(maxit), y, d)
    }

    /// One accepted step; returns the dense segment covering it.
    fn step(&mut self) -> Result<DenseSegment<N>, IntegrateError> {
        let t = self.t;
        let min_step = 10.0 * (t.next_up() - t).abs();
        let mut h_abs = self.h_abs;
        if h_abs > self.cfg.max_step {
            change_d(&mut self.d, self.order, self.cfg.max_step / h_abs);
            h_abs = self.cfg.max_step;
            self.n_equal_steps = 0;
        } else if h_abs < min_step {
            change_d(&mut self.d, self.order, min_step / h_abs);
            h_abs = min_step;
            self.n_equal_steps = 0;
        }
        let order = self.order;
        let mut current_jac = false;
        let (t_new, y_new, d, error_norm, safety, scale) = loop {
            if h_abs < min_step {
                return Err(IntegrateError::StepTooSmall { t });
            }
            let mut t_new = t + h_abs;
            if t_new > self.t_bound {
                t_new = self.t_bound;
                change_d(&mut self.d, order, (t_new - t) / h_abs);
                self.n_equal_steps = 0;
                self.lu = None;
            }
            let h = t_new - t;
            h_abs = h;
            let y_predict = self.d[..=order].iter().fold(Vect::<N>::zeros(), |a, v| a + v);
            let scale = y_predict.map(|v| self.cfg.atol + self.cfg.rtol * v.abs());
            let psi = (1..=order).fold(Vect::<N>::zeros(), |a, k| a + self.d[k] * self.gamma[k]) / self.alpha[order];
            let c = h / self.alpha[order];
            let (converged, n_iter, y_new, d) = loop {
                if self.lu.is_none() {
                    self.stats.n_lu += 1;
                    self.lu = Lu::factor(&(Mat::<N>::identity() - self.j * c));
                }
                let out = self.solve_system(t_new, &y_predict, c, &psi, &scale);
                if out.0 || current_jac {
                    break out;
                }
                self.j = self.jacobian(t_new, &y_predict);
                self.lu = None;
                current_jac = true;
            };
            if !converged {
                self.stats.n_rejected += 1;
                h_abs *= 0.5;
                change_d(&mut self.d, order, 0.5);
                self.n_equal_steps = 0;
                self.lu = None;
                continue;
            }
            let maxit = self.cfg.newton_max_iters as f64;
            let safety = 0.9 * (2.0 * maxit + 1.0) / (2.0 * maxit + n_iter as f64);
            let scale = y_new.map(|v| self.cfg.atol + self.cfg.rtol * v.abs());
            let error_norm = rms(&(d * self.error_const[order]).component_div(&scale));
            if error_norm > 1.0 {
                self.stats.n_rejected += 1;
                let factor = MIN_FACTOR.max(safety * error_norm.powf(-1.0 / (order as f64 + 1.0)));
                h_abs *= factor;
                change_d(&mut self.d, order, factor);
                self.n_equal_steps = 0;
            } else {
                break (t_new, y_new, d, error_norm, safety, scale);
            }
        };
        if !y_new.iter().all(|v| v.is_finite()) {
            return Err(IntegrateError::NonFinite { t: t_new });
        }
        self.stats.n_steps += 1;
        self.n_equal_steps += 1;
        let t_old = self.t;
        self.t = t_new;
        self.y = y_new;
        self.h_abs = h_abs;
        self.d[order + 2] = d - self.d[order + 1];
        self.d[order + 1] = d;
        for i in (0..=order).rev() {
            let next = self.d[i + 1];
            self.d[i] += next;
        }
        if self.n_equal_steps >= order + 1 {
            let error_m = if order > 1 {
                rms(&(self.d[order] * self.error_const[order - 1]).component_div(&scale))
            } else {
                f64::INFINITY
            };
            let error_p = if order < MAX_ORDER {
                rms(&(self.d[order + 2] * self.error_const[order + 1]).component_div(&scale))
            } else {
                f64::INFINITY
            };
            let norms = [error_m, error_norm, error_p];
            let mut best = 0;
            let mut factors = [0.0; 3];
            for (i, e) in norms.iter().enumerate() {
                factors[i] = e.powf(-1.0 / (order + i) as f64);
                if factors[i] > factors[best] {
                    best = i;
                }
            }
            let new_order = order + best - 1;
            let factor = MAX_FACTOR.min(safety * factors[best]);
            self.order = new_order;
            self.h_abs *= factor;
            change_d(&mut self.d, new_order, factor);
            self.n_equal_steps = 0;
            self.lu = None;
        }
        let mut seg = DenseSegment { t_old, t: self.t, t_hi: self.t, h: self.h_abs, order: self.order, d: [[0.0; N]; MAX_ORDER + 1] };
        for k in 0..=self.order {
            seg.d[k] = self.d[k].into();
        }
        Ok(seg)
    }
}

fn locate<const N: usize>(ev: &EventSpec<'_, N>, seg: &DenseSegment<N>, mut a: f64, mut b: f64, mut ga: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let gm = (ev.indicator)(m, &seg.eval(m));
        if ev.fires(ga, gm) {
            b = m;
        } else {
            a = m;
            ga = gm;
        }
    }
    b
}

/// Integrates `y' = rhs(t, y)` on `t_span` with the analytic Jacobian `jac`.
pub fn integrate_stiff<const N: usize>(
    rhs: impl Fn(f64, &[f64; N]) -> [f64; N],
    jac: impl Fn(f64, &[f64; N]) -> [[f64; N]; N],
    y0: [f64; N],
    t_span: (f64, f64),
    config: &IntegratorConfig,
    events: &[EventSpec<'_, N>],
) -> Result<Trajectory<N>, IntegrateError> {
    integrate_scaled(&rhs, &jac, y0, t_span, config, events, 1.0)
}

fn integrate_scaled<const N: usize>(
    rhs: &dyn Fn(f64, &[f64; N]) -> [f64; N],
    jac: &dyn Fn(f64, &[f64; N]) -> [[f64; N]; N],
    y0: [f64; N],
    (t0, t1): (f64, f64),
    config: &IntegratorConfig,
    events: &[EventSpec<'_, N>],
    tau_per_t: f64,
) -> Result<Trajectory<N>, IntegrateError> {
    config.validate()?;
    if !y0.iter().all(|v| v.is_finite()) || !(t1 > t0) {
        return Err(IntegrateError::InvalidConfig("need finite y0 and t_end > t_start".into()));
    }
    let mut traj = Trajectory::start(t0, y0, tau_per_t);
    if t1 == t0 {
        return Ok(traj);
    }
    let mut bdf = Bdf::new(rhs, jac, t0, y0, t1, *config)?;
    let mut g: Vec<f64> = events.iter().map(|e| (e.indicator)(t0, &y0)).collect();
    while bdf.t < t1 {
        if bdf.stats.n_steps >= config.max_steps {
            return Err(IntegrateError::MaxSteps { t: bdf.t, steps: config.max_steps });
        }
        let seg = bdf.step()?;
        let y_new: [f64; N] = bdf.y.into();
        let mut fired: Vec<(f64, usize)> = Vec::new();
        for (i, ev) in events.iter().enumerate() {
            let gn = (ev.indicator)(seg.t, &y_new);
            if ev.fires(g[i], gn) {
                fired.push((locate(ev, &seg, seg.t_old, seg.t, g[i]), i));
            }
            g[i] = gn;
        }
        fired.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let stop = fired.iter().find(|(_, i)| events[*i].terminal).map(|(t, _)| *t);
        for &(te, i) in &fired {
            if stop.is_some_and(|ts| te > ts) {
                continue;
            }
            traj.events.push(EventRecord { kind: events[i].kind, t: te, y: seg.eval(te) });
        }
        traj.dense.push(seg);
        if let Some(ts) = stop {
            let kind = fired.iter().find(|(t, i)| *t == ts && events[*i].terminal).unwrap().1;
            if ts > traj.t_end() {
                traj.t.push(ts);
                traj.y.push(seg.eval(ts));
            }
            traj.dense.last_mut().unwrap().t_hi = ts;
            traj.termination = Termination::Terminal(events[kind].kind);
            traj.stats = bdf.stats;
            return Ok(traj);
        }
        traj.t.push(bdf.t);
        traj.y.push(y_new);
    }
    traj.stats = bdf.stats;
    Ok(traj)
}

/// Integrates the ramped system in fast time up to slow time `tau_end`.
///
/// Phase 1 ramps `alpha` at `epsilon r` until it reaches `alpha_max_delta`;
/// the integrator is then restarted with `alpha` frozen at that value.
pub fn integrate_ramped(
    p: &ModelParams,
    ramp: &RampConfig,
    y0: State4,
    tau_end: f64,
    config: &IntegratorConfig,
    events: &[EventSpec<'_, 4>],
) -> Result<Trajectory<4>, IntegrateError> {
    if !(y0.alpha >= ramp.alpha_min_delta - 1e-12 && y0.alpha <= ramp.alpha_max_delta) {
        return Err(IntegrateError::InvalidConfig(format!(
            "initial alpha {} outside [{}, {}]",
            y0.alpha, ramp.alpha_min_delta, ramp.alpha_max_delta
        )));
    }
    let eps = p.epsilon;
    let t_end = tau_end / eps;
    let fold = EventSpec::new(EventKind::FoldCrossing, false, Direction::Any, |_, y: &[f64; 4]| p.q(y[0], y[3]));
    let jac = |_: f64, y: &[f64; 4]| jac_ramped(State4::from_slice(y), p);
    let frozen = |_: f64, y: &[f64; 4]| {
        let f = p.rhs_fast(State4::from_slice(y).state3(), y[3]);
        [f[0], f[1], f[2], 0.0]
    };
    let ramping = ramp.r > 0.0 && y0.alpha < ramp.alpha_max_delta;
    let mut all: Vec<&EventSpec<'_, 4>> = vec![&fold];
    all.extend(events.iter());
    if !ramping {
        return integrate_refs(&frozen, &jac, y0.to_array(), (0.0, t_end), config, &all, eps);
    }
    let amax = ramp.alpha_max_delta;
    let rate = eps * ramp.r;
    let moving = |_: f64, y: &[f64; 4]| {
        let f = p.rhs_fast(State4::from_slice(y).state3(), y[3]);
        [f[0], f[1], f[2], rate]
    };
    let clamp = EventSpec::new(EventKind::AlphaClampHit, true, Direction::Rising, move |_, y: &[f64; 4]| y[3] - amax);
    let mut phase1 = all.clone();
    phase1.push(&clamp);
    let mut traj = integrate_refs(&moving, &jac, y0.to_array(), (0.0, t_end), config, &phase1, eps)?;
    if traj.termination != Termination::Terminal(EventKind::AlphaClampHit) {
        return Ok(traj);
    }
    let t_hit = traj.t_end();
    let mut y_hit = traj.last();
    y_hit[3] = amax;
    *traj.y.last_mut().unwrap() = y_hit;
    if let Some(e) = traj.events.last_mut() {
        if e.kind == EventKind::AlphaClampHit {
            e.y[3] = amax;
        }
    }
    if t_hit >= t_end {
        return Ok(traj);
    }
    let phase2 = integrate_refs(&frozen, &jac, y_hit, (t_hit, t_end), config, &all, eps)?;
    traj.append(phase2);
    Ok(traj)
}

/// Fixed-`alpha` continuation of a four-component state.
pub fn integrate_frozen(
    p: &ModelParams,
    y0: State4,
    t_span: (f64, f64),
    config: &IntegratorConfig,
    events: &[EventSpec<'_, 4>],
) -> Result<Trajectory<4>, IntegrateError> {
    let jac = |_: f64, y: &[f64; 4]| jac_ramped(State4::from_slice(y), p);
    let frozen = |_: f64, y: &[f64; 4]| {
        let f = p.rhs_fast(State4::from_slice(y).state3(), y[3]);
        [f[0], f[1], f[2], 0.0]
    };
    let refs: Vec<&EventSpec<'_, 4>> = events.iter().collect();
    integrate_refs(&frozen, &jac, y0.to_array(), t_span, config, &refs, p.epsilon)
}

fn integrate_refs(
    rhs: &dyn Fn(f64, &[f64; 4]) -> [f64; 4],
    jac: &dyn Fn(f64, &[f64; 4]) -> [[f64; 4]; 4],
    y0: [f64; 4],
    t_span: (f64, f64),
    config: &IntegratorConfig,
    events: &[&EventSpec<'_, 4>],
    tau_per_t: f64,
) -> Result<Trajectory<4>, IntegrateError> {
    let wrapped: Vec<EventSpec<'_, 4>> = events
        .iter()
        .map(|e| EventSpec {
            kind: e.kind,
            indicator: Box::new(|t: f64, y: &[f64; 4]| (e.indicator)(t, y)),
            terminal: e.terminal,
            direction: e.direction,
        })
        .collect();
    integrate_scaled(rhs, jac, y0, t_span, config, &wrapped, tau_per_t)
}
