//! Tipping experiments, oscillation counting, regime-map sweeps, resurgence
//! and singular-limit checks.

use crate::folded::{bistability_screen, region_classify_with, relevant_singularity, FoldedKind, Region, RegionLabel};
use crate::integrate::{
    integrate_frozen, integrate_ramped, integrate_stiff, Direction, EventKind, EventSpec, IntegrateError,
    IntegratorConfig, Trajectory,
};
use crate::manifold::{coexistence_equilibrium, fold_point, reduced_flow_regime, threshold_set, RegimeItem};
use crate::model::{AlphaMaxRule, ModelParams, RampConfig, State3, State4, H_BIG};
use crate::roots::newton_bracketed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub integrator: IntegratorConfig,
    /// Max-norm distance on `(H, A, C)` deciding which attractor was reached.
    pub tol_track: f64,
    /// Tube radius factor around the repelling sheet, in units of `sqrt(epsilon)`.
    pub tube_c: f64,
    /// Canard dwell threshold in slow time.
    pub dwell_threshold: f64,
    pub h_tip_floor: f64,
    /// Slow time allowed after the ramp for the run to settle.
    pub settle_tau: f64,
    pub y0: Option<State3>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig::default(),
            tol_track: 1e-3,
            tube_c: 1.0,
            dwell_threshold: 0.1,
            h_tip_floor: 1e-6,
            settle_tau: 5000.0,
            y0: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error("neither attractor reached by tau = {tau}")]
    Unresolved { tau: f64, trajectory: Box<Trajectory<4>> },
    #[error("no tip occurred; nothing to reverse")]
    NoTipToReverse,
    #[error("reduction violated: errors {0:?} do not decrease strictly")]
    ReductionViolation(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeLabel {
    Tracked,
    CanardTipped,
    JumpTipped,
    BifurcationTipped,
}

impl OutcomeLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeLabel::Tracked => "Tracked",
            OutcomeLabel::CanardTipped => "CanardTipped",
            OutcomeLabel::JumpTipped => "JumpTipped",
            OutcomeLabel::BifurcationTipped => "BifurcationTipped",
        }
    }

    pub fn is_tipped(&self) -> bool {
        *self != OutcomeLabel::Tracked
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub label: OutcomeLabel,
    pub tip_tau: Option<f64>,
    pub tip_alpha: Option<f64>,
    /// Slow time at which `H` first fell below the tip floor.
    pub collapse_tau: Option<f64>,
    pub oscillations: usize,
    pub dwell: f64,
    pub endpoint: State4,
}

fn dist3(y: &[f64; 4], e: State3) -> f64 {
    (y[0] - e.h).abs().max((y[1] - e.a).abs()).max((y[2] - e.c).abs())
}

const E_A: State3 = State3 { h: 0.0, a: 1.0, c: 0.0 };

/// Dense samples of `traj` with `per_step` points inside every step, as `(t, y)`.
pub fn dense_samples(traj: &Trajectory<4>, t_from: f64, t_to: f64, per_step: usize) -> Vec<(f64, [f64; 4])> {
    let mut out = Vec::new();
    for w in traj.t.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b < t_from || a > t_to {
            continue;
        }
        for k in 0..per_step {
            let t = a + (b - a) * k as f64 / per_step as f64;
            if t >= t_from && t <= t_to {
                if let Some(y) = traj.sample(t) {
                    out.push((t, y));
                }
            }
        }
    }
    if let Some(y) = traj.sample(t_to) {
        out.push((t_to, y));
    }
    out
}

/// Roots of `C_S(., alpha) = c` on either side of the fold point `h0`.
fn sheet_preimages(p: &ModelParams, alpha: f64, c: f64, h0: f64) -> Option<(f64, f64)> {
    let g = |h: f64| p.coral_on_sheet(h, alpha) - c;
    let dg = |h: f64| p.coral_on_sheet_h(h, alpha);
    if g(h0) <= 0.0 {
        return None;
    }
    let h_r = if g(0.0) >= 0.0 { 0.0 } else { newton_bracketed(g, dg, 0.0, h0, 1e-14)? };
    let h_a = newton_bracketed(g, dg, h0, H_BIG, 1e-14)?;
    Some((h_r, h_a))
}

/// Slow time spent inside the `c sqrt(epsilon)` tube around the repelling sheet
/// between fast times `t_from` and `t_to`.
pub fn repelling_dwell(traj: &Trajectory<4>, p: &ModelParams, t_from: f64, t_to: f64, c: f64, h_floor: f64) -> f64 {
    let radius = c * p.epsilon.sqrt();
    let samples = dense_samples(traj, t_from, t_to, 16);
    let mut dwell = 0.0;
    for w in samples.windows(2) {
        let (ta, ya) = w[0];
        let (tb, yb) = w[1];
        let tm = 0.5 * (ta + tb);
        let y = traj.sample(tm).unwrap_or([0.5 * (ya[0] + yb[0]), ya[1], ya[2], ya[3]]);
        let (h, a, cc, alpha) = (y[0], y[1], y[2], y[3]);
        if h <= h_floor {
            continue;
        }
        let Ok(h0) = fold_point(alpha, p) else { continue };
        if h >= h0 {
            continue;
        }
        let Some((h_r, h_a)) = sheet_preimages(p, alpha, cc, h0) else { continue };
        if (h - h_r).abs() >= (h - h_a).abs() {
            continue;
        }
        let a_r = p.algae_on_sheet(h_r, alpha);
        if (h - h_r).abs().max((a - a_r).abs()) < radius {
            dwell += (tb - ta) * traj.tau_per_t;
        }
    }
    dwell
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationCount {
    pub n: usize,
    /// Prominence of each counted maximum, in time order.
    pub amplitudes: Vec<f64>,
}

impl OscillationCount {
    /// The amplitude sequence first decreases and later increases.
    pub fn has_interior_minimum(&self) -> bool {
        let a = &self.amplitudes;
        if a.len() < 3 {
            return false;
        }
        let (imin, _) = a.iter().enumerate().fold((0, f64::INFINITY), |m, (i, &x)| if x < m.1 { (i, x) } else { m });
        imin > 0 && imin < a.len() - 1
    }
}

fn prominent_maxima(x: &[f64], threshold: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                let peak = x[i];
                let mut left_min = peak;
                for k in (0..i).rev() {
                    if x[k] > peak {
                        break;
                    }
                    left_min = left_min.min(x[k]);
                }
                let mut right_min = peak;
                for &v in &x[j + 1..] {
                    if v > peak {
                        break;
                    }
                    right_min = right_min.min(v);
                }
                let prom = peak - left_min.max(right_min);
                if prom > threshold {
                    out.push(prom);
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Maxima of `H` between funnel entry and collapse below `h_floor`.
///
/// Funnel entry is the first sample inside the funnel of the relevant folded
/// node at rate `r`; without a node the window starts at the run start.
pub fn count_subthreshold_oscillations(
    traj: &Trajectory<4>,
    p: &ModelParams,
    r: f64,
    atol: f64,
    h_floor: f64,
) -> OscillationCount {
    let samples = dense_samples(traj, traj.t_start(), traj.t_end(), 8);
    let node = relevant_singularity(p, r).ok().filter(|f| f.kind == FoldedKind::Node);
    let start = node
        .and_then(|f| samples.iter().position(|(_, y)| f.in_funnel(y[0], y[3], p)))
        .unwrap_or(0);
    let end = samples.iter().position(|(_, y)| y[0] < h_floor).unwrap_or(samples.len());
    let h: Vec<f64> = samples[start..end.max(start)].iter().map(|(_, y)| y[0]).collect();
    let amplitudes = prominent_maxima(&h, 100.0 * atol);
    OscillationCount { n: amplitudes.len(), amplitudes }
}

/// Ramp from the coexistence state and classify where the run ends up.
pub fn run_tipping_experiment(
    p: &ModelParams,
    ramp: &RampConfig,
    cfg: &ExperimentConfig,
) -> Result<(Trajectory<4>, Outcome), ExperimentError> {
    bistability_screen(p, ramp.delta).map_err(|e| ExperimentError::Precondition(e.to_string()))?;
    let a0 = ramp.alpha_min_delta;
    let amax = ramp.alpha_max_delta;
    let y0 = match cfg.y0 {
        Some(y) => y,
        None => coexistence_equilibrium(a0, p).map_err(|e| ExperimentError::Precondition(e.to_string()))?.state(),
    };
    let e_i = coexistence_equilibrium(amax, p).ok().filter(|e| e.relevant).map(|e| e.state());
    let ramp_tau = if ramp.r > 0.0 { (amax - a0) / ramp.r } else { 0.0 };
    let tau_end = ramp_tau + cfg.settle_tau;
    let tol_conv = 0.1 * cfg.tol_track;
    let converged = EventSpec::new(EventKind::EquilibriumConverged, true, Direction::Falling, move |_, y: &[f64; 4]| {
        if ramp.r > 0.0 && y[3] < amax {
            return 1.0;
        }
        let da = dist3(y, E_A);
        let di = e_i.map_or(f64::INFINITY, |e| dist3(y, e));
        da.min(di) - tol_conv
    });
    let floor = cfg.h_tip_floor;
    let tip = EventSpec::new(EventKind::TipFloor, false, Direction::Falling, move |_, y: &[f64; 4]| y[0] - floor);
    let traj = integrate_ramped(p, ramp, State4::from_state3(y0, a0), tau_end, &cfg.integrator, &[converged, tip])?;
    let end = traj.last();
    let to_a = dist3(&end, E_A) < cfg.tol_track;
    let to_i = e_i.is_some_and(|e| dist3(&end, e) < cfg.tol_track);
    if to_a == to_i {
        return Err(ExperimentError::Unresolved { tau: traj.t_end() * traj.tau_per_t, trajectory: Box::new(traj) });
    }
    let eps = traj.tau_per_t;
    let osc = count_subthreshold_oscillations(&traj, p, ramp.r, cfg.integrator.atol, floor);
    if to_i {
        let outcome = Outcome {
            label: OutcomeLabel::Tracked,
            tip_tau: None,
            tip_alpha: None,
            collapse_tau: None,
            oscillations: osc.n,
            dwell: 0.0,
            endpoint: State4::from_slice(&end),
        };
        return Ok((traj, outcome));
    }
    let collapse_t = traj.events_of(EventKind::TipFloor).next().map_or(traj.t_end(), |e| e.t);
    let crossing = traj
        .events_of(EventKind::FoldCrossing)
        .filter(|e| e.t <= collapse_t)
        .last()
        .copied();
    let (tip_t, tip_alpha) = match crossing {
        Some(e) => (e.t, e.y[3]),
        None => (collapse_t, traj.sample(collapse_t).map_or(amax, |y| y[3])),
    };
    let dwell = repelling_dwell(&traj, p, tip_t, collapse_t, cfg.tube_c, floor);
    let alpha_plus = threshold_set(p).map(|t| t.alpha_plus).unwrap_or(f64::INFINITY);
    let label = if amax > alpha_plus {
        OutcomeLabel::BifurcationTipped
    } else if dwell > cfg.dwell_threshold {
        OutcomeLabel::CanardTipped
    } else {
        OutcomeLabel::JumpTipped
    };
    let outcome = Outcome {
        label,
        tip_tau: Some(tip_t * eps),
        tip_alpha: Some(tip_alpha),
        collapse_tau: traj.events_of(EventKind::TipFloor).next().map(|e| e.t * eps),
        oscillations: osc.n,
        dwell,
        endpoint: State4::from_slice(&end),
    };
    Ok((traj, outcome))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepMode {
    ClassifyOnly,
    Simulate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub beta: f64,
    pub lambda: f64,
    pub region: Option<RegionLabel>,
    pub outcome: Option<OutcomeLabel>,
    /// Fails the bistability screen.
    pub excluded: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub betas: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Row-major with `beta` as the outer index.
    pub cells: Vec<SweepCell>,
    pub r: f64,
    pub d: f64,
    pub epsilon: f64,
}

impl SweepResult {
    pub fn cell(&self, i: usize, j: usize) -> &SweepCell {
        &self.cells[i * self.lambdas.len() + j]
    }

    /// All 4-neighbours exist and share the cell's region.
    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        let reg = |i: usize, j: usize| self.cell(i, j).region.map(|r| r.region);
        let Some(me) = reg(i, j) else { return false };
        if i == 0 || j == 0 || i + 1 >= self.betas.len() || j + 1 >= self.lambdas.len() {
            return false;
        }
        [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)].iter().all(|&(a, b)| reg(a, b) == Some(me))
    }
}

/// Cell-centre grid `(k + 1/2)/n` on `(0, 1)`.
pub fn centre_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect()
}

/// Outcome expected from the region of the governing folded singularity.
pub fn expected_outcome(region: Region) -> OutcomeLabel {
    match region {
        Region::I | Region::II => OutcomeLabel::CanardTipped,
        Region::IIIa => OutcomeLabel::JumpTipped,
        Region::IIIb => OutcomeLabel::Tracked,
    }
}

fn sweep_cell(beta: f64, lambda: f64, d: f64, r: f64, eps: f64, delta: f64, mode: SweepMode, cfg: &ExperimentConfig) -> SweepCell {
    let p = ModelParams::new(lambda, beta, d, eps);
    let mut cell = SweepCell { beta, lambda, region: None, outcome: None, excluded: false, error: None };
    if let Err(e) = bistability_screen(&p, delta) {
        cell.excluded = true;
        cell.error = Some(e.to_string());
        return cell;
    }
    match region_classify_with(&p, r, delta) {
        Ok(l) => cell.region = Some(l),
        Err(e) => cell.error = Some(e.to_string()),
    }
    if mode == SweepMode::Simulate {
        let run = RampConfig::new(&p, r, delta, AlphaMaxRule::MinPlusStar)
            .map_err(|e| e.to_string())
            .and_then(|ramp| run_tipping_experiment(&p, &ramp, cfg).map_err(|e| e.to_string()));
        match run {
            Ok((_, o)) => cell.outcome = Some(o.label),
            Err(e) => cell.error = Some(e),
        }
    }
    cell
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub betas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub d: f64,
    pub r: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub mode: SweepMode,
    /// Worker threads; `0` uses the rayon default.
    pub jobs: usize,
}

pub fn sweep_regime_map(spec: &SweepSpec, cfg: &ExperimentConfig) -> Result<SweepResult, ExperimentError> {
    let inside = |x: &f64| *x > 0.0 && *x < 1.0;
    if !spec.betas.iter().all(inside) || !spec.lambdas.iter().all(inside) {
        return Err(ExperimentError::Precondition("grid must lie in (0, 1)^2".into()));
    }
    let idx: Vec<(usize, usize)> =
        (0..spec.betas.len()).flat_map(|i| (0..spec.lambdas.len()).map(move |j| (i, j))).collect();
    let work = || -> Vec<SweepCell> {
        idx.par_iter()
            .map(|&(i, j)| {
                sweep_cell(spec.betas[i], spec.lambdas[j], spec.d, spec.r, spec.epsilon, spec.delta, spec.mode, cfg)
            })
            .collect()
    };
    let cells = if spec.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(spec.jobs)
            .build()
            .map_err(|e| ExperimentError::Precondition(e.to_string()))?
            .install(work)
    } else {
        work()
    };
    Ok(SweepResult {
        betas: spec.betas.clone(),
        lambdas: spec.lambdas.clone(),
        cells,
        r: spec.r,
        d: spec.d,
        epsilon: spec.epsilon,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resurgence {
    pub trajectory: Trajectory<4>,
    pub reset_tau: f64,
    pub h_at_reset: f64,
    pub target: State3,
    pub endpoint_distance: f64,
}

/// Tips, then resets `alpha` to `reset_alpha < d` at collapse and keeps integrating.
pub fn resurgence_experiment(
    p: &ModelParams,
    ramp: &RampConfig,
    reset_alpha: f64,
    cfg: &ExperimentConfig,
) -> Result<Resurgence, ExperimentError> {
    if !(reset_alpha > 0.0 && reset_alpha < p.d) {
        return Err(ExperimentError::Precondition(format!("reset_alpha = {reset_alpha} must lie in (0, d = {})", p.d)));
    }
    bistability_screen(p, ramp.delta).map_err(|e| ExperimentError::Precondition(e.to_string()))?;
    let a0 = ramp.alpha_min_delta;
    let y0 = match cfg.y0 {
        Some(y) => y,
        None => coexistence_equilibrium(a0, p).map_err(|e| ExperimentError::Precondition(e.to_string()))?.state(),
    };
    let floor = cfg.h_tip_floor;
    let tip = EventSpec::new(EventKind::TipFloor, true, Direction::Falling, move |_, y: &[f64; 4]| y[0] - floor);
    let ramp_tau = if ramp.r > 0.0 { (ramp.alpha_max_delta - a0) / ramp.r } else { 0.0 };
    let mut traj = integrate_ramped(p, ramp, State4::from_state3(y0, a0), ramp_tau + cfg.settle_tau, &cfg.integrator, &[tip])?;
    if traj.termination != crate::integrate::Termination::Terminal(EventKind::TipFloor) {
        return Err(ExperimentError::NoTipToReverse);
    }
    let t_reset = traj.t_end();
    let mut y = traj.last();
    let h_at_reset = y[0];
    y[3] = reset_alpha;
    traj.events.push(crate::integrate::EventRecord { kind: EventKind::AlphaReset, t: t_reset, y });
    let target = coexistence_equilibrium(reset_alpha, p)
        .map_err(|e| ExperimentError::Precondition(e.to_string()))?
        .state();
    let tol = 1e-2 * cfg.tol_track;
    let conv = EventSpec::new(EventKind::EquilibriumConverged, true, Direction::Falling, move |_, y: &[f64; 4]| {
        dist3(y, target) - tol
    });
    let t_end = t_reset + cfg.settle_tau / p.epsilon;
    let mut after = integrate_frozen(p, State4::from_slice(&y), (t_reset, t_end), &cfg.integrator, &[conv])?;
    // Keep the post-reset row.
    after.t[0] = t_reset.next_up();
    traj.append(after);
    let endpoint_distance = dist3(&traj.last(), target);
    Ok(Resurgence { trajectory: traj, reset_tau: t_reset * p.epsilon, h_at_reset, target, endpoint_distance })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    pub epsilon: f64,
    pub sup_error: f64,
}

/// Solves the reduced flow on the attracting coexisting sheet from `h0`.
pub fn reduced_solution(p: &ModelParams, alpha: f64, h0: f64, tau_end: f64) -> Result<Trajectory<1>, ExperimentError> {
    let f = move |_: f64, y: &[f64; 1]| [p.rhs_reduced_s02(y[0], alpha).unwrap_or(f64::NAN)];
    let jac = move |t: f64, y: &[f64; 1]| {
        let h = 1e-7 * (1.0 + y[0].abs());
        [[(f(t, &[y[0] + h])[0] - f(t, &[y[0] - h])[0]) / (2.0 * h)]]
    };
    let cfg = IntegratorConfig { rtol: 1e-10, atol: 1e-12, ..Default::default() };
    Ok(integrate_stiff(f, jac, [h0], (0.0, tau_end), &cfg, &[])?)
}

/// Starting point on the attracting coexisting sheet between `H_I` and the
/// coral-free intersection above it.
pub fn limit_start(p: &ModelParams, alpha: f64) -> Result<f64, ExperimentError> {
    let reg = reduced_flow_regime(alpha, p).map_err(|e| ExperimentError::Precondition(e.to_string()))?;
    if reg.item != RegimeItem::BelowBoth {
        return Err(ExperimentError::Precondition(format!("alpha = {alpha} is not below both thresholds")));
    }
    let h_i = reg.h_i.h;
    let top = reg.h_nc_a.map_or(2.0 * h_i, |e| e.h);
    Ok(0.5 * (h_i + top))
}

/// Sup-norm gap between the full and the reduced `H(tau)` for each `epsilon`.
pub fn singular_limit_check(
    p: &ModelParams,
    alpha: f64,
    eps_list: &[f64],
    tau_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<LimitRow>, ExperimentError> {
    if eps_list.windows(2).any(|w| w[1] >= w[0]) || eps_list.is_empty() {
        return Err(ExperimentError::Precondition("eps_list must be strictly decreasing".into()));
    }
    let h0 = limit_start(p, alpha)?;
    let reduced = reduced_solution(p, alpha, h0, tau_end)?;
    let mut rows = Vec::new();
    for &eps in eps_list {
        let q = ModelParams { epsilon: eps, ..*p };
        let y0 = State4::new(h0, q.algae_on_sheet(h0, alpha), q.coral_on_sheet(h0, alpha), alpha);
        let full = integrate_frozen(&q, y0, (0.0, tau_end / eps), cfg, &[])?;
        let n = 2000;
        let sup = (0..=n)
            .map(|k| {
                let tau = tau_end * k as f64 / n as f64;
                let hf = full.sample(tau / eps).map_or(f64::NAN, |y| y[0]);
                let hr = reduced.sample(tau).map_or(f64::NAN, |y| y[0]);
                (hf - hr).abs()
            })
            .fold(0.0, f64::max);
        rows.push(LimitRow { epsilon: eps, sup_error: sup });
    }
    if rows.windows(2).any(|w| !(w[1].sup_error < w[0].sup_error)) {
        return Err(ExperimentError::ReductionViolation(rows.iter().map(|r| r.sup_error).collect()));
    }
    Ok(rows)
}
