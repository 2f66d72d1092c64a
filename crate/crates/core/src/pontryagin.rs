//! Costate propagation and first-order optimality analysis.
//!
//! The costate Π obeys the same linear dynamics as the state, so it rides the
//! same pulse kernels; all adjoint machinery here reduces to bookkeeping about
//! where each quantity is evaluated. Sign conventions are locked down by the
//! finite-difference tests at the bottom of this file.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::CostVector;
use crate::protocol::{BangBangProtocol, Protocol};
use crate::statevector::{evolve_segment, Direction, StateVector};

/// Conjugate momenta Π_z, one per basis label.
#[derive(Debug, Clone)]
pub struct CostateVector {
    sv: StateVector,
}

impl CostateVector {
    pub fn from_moms(n: usize, moms: Vec<Complex64>) -> Result<Self> {
        Ok(Self { sv: StateVector::from_amps(n, moms)? })
    }

    pub fn n(&self) -> usize {
        self.sv.n()
    }

    pub fn dim(&self) -> usize {
        self.sv.dim()
    }

    pub fn moms(&self) -> &[Complex64] {
        self.sv.amps()
    }

    /// Σ_z |Π_z|².
    pub fn norm_sq(&self) -> f64 {
        let n = self.sv.norm();
        n * n
    }

    fn evolve(&mut self, g: f64, dt: f64, cv: &CostVector, dir: Direction) -> Result<()> {
        evolve_segment(&mut self.sv, g, dt, cv, dir)
    }
}

/// Π_z(T) = 2 A_z(T) C_z: gradient of the final energy with respect to the
/// final amplitudes, packaged as one complex number per label.
pub fn terminal_costate(final_state: &StateVector, cv: &CostVector) -> Result<CostateVector> {
    if final_state.n() != cv.n {
        return Err(Error::DimensionMismatch { got: final_state.dim(), expected: cv.dim() });
    }
    let moms = final_state
        .amps()
        .iter()
        .zip(&cv.values)
        .map(|(a, &c)| 2.0 * c * a)
        .collect();
    CostateVector::from_moms(final_state.n(), moms)
}

/// State at every segment boundary: index 0 is the initial state, index m the
/// final one.
pub fn forward_boundary_states(
    initial: &StateVector,
    p: &Protocol,
    cv: &CostVector,
) -> Result<Vec<StateVector>> {
    let mut states = Vec::with_capacity(p.segments().len() + 1);
    let mut cur = initial.clone();
    states.push(cur.clone());
    for s in p.segments() {
        evolve_segment(&mut cur, s.g, s.dt, cv, Direction::Forward)?;
        states.push(cur.clone());
    }
    Ok(states)
}

/// Costate at every segment boundary, indexed like `forward_boundary_states`:
/// entry m is the terminal costate, entry 0 its image at t = 0.
pub fn backward_boundary_costates(
    costate_t: &CostateVector,
    p: &Protocol,
    cv: &CostVector,
) -> Result<Vec<CostateVector>> {
    let m = p.segments().len();
    let mut out = vec![costate_t.clone(); m + 1];
    let mut cur = costate_t.clone();
    for (i, s) in p.segments().iter().enumerate().rev() {
        cur.evolve(s.g, s.dt, cv, Direction::Inverse)?;
        out[i] = cur.clone();
    }
    Ok(out)
}

/// Costate at each requested time, integrated backward from T. Times may come
/// in any order; each must lie in [0, T].
pub fn backward_sweep(
    costate_t: &CostateVector,
    p: &Protocol,
    cv: &CostVector,
    times: &[f64],
) -> Result<Vec<CostateVector>> {
    let t_total = p.total_time();
    for &t in times {
        if !t.is_finite() || t < 0.0 || t > t_total {
            return Err(Error::TimeOutOfRange { t, t_total });
        }
    }
    let boundaries = backward_boundary_costates(costate_t, p, cv)?;
    let starts = p.boundary_times();
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        // Segment owning t; boundary times go to the earlier segment's end so
        // the partial evolution below is a no-op there.
        let seg = match starts.iter().rposition(|&b| b < t) {
            Some(i) => i.min(p.segments().len() - 1),
            None => 0,
        };
        let mut c = boundaries[seg].clone();
        let s = p.segments()[seg];
        c.evolve(s.g, t - starts[seg], cv, Direction::Forward)?;
        out.push(c);
    }
    Ok(out)
}

/// Im Σ_z conj(Π_z) C_z A_z: the cost half of the control Hamiltonian.
pub fn ham_c(state: &StateVector, costate: &CostateVector, cv: &CostVector) -> f64 {
    state
        .amps()
        .iter()
        .zip(costate.moms())
        .zip(&cv.values)
        .map(|((a, p), &c)| c * (p.conj() * a).im)
        .sum()
}

/// Im Σ_z conj(Π_z) (B A)_z with (B A)_z = −Σ_k A_{z flip k}: the mixer half.
pub fn ham_b(state: &StateVector, costate: &CostateVector) -> f64 {
    let n = state.n();
    let amps = state.amps();
    let moms = costate.moms();
    let mut acc = 0.0;
    for (z, p) in moms.iter().enumerate() {
        let mut hop = Complex64::new(0.0, 0.0);
        for k in 0..n {
            hop += amps[z ^ (1 << k)];
        }
        acc -= (p.conj() * hop).im;
    }
    acc
}

/// ℋ(g) = Im ⟨Π| H(g) |ψ⟩. Constant along any constant-g stretch; its value
/// on segment i is dF/dd_i.
pub fn control_hamiltonian(
    state: &StateVector,
    costate: &CostateVector,
    cv: &CostVector,
    g: f64,
) -> f64 {
    g * ham_c(state, costate, cv) + (1.0 - g) * ham_b(state, costate)
}

/// Φ = ∂ℋ/∂g. Negative Φ favors g at its maximum, positive at its minimum.
pub fn switching_function(
    state: &StateVector,
    costate: &CostateVector,
    cv: &CostVector,
) -> Result<f64> {
    if state.dim() != costate.dim() || state.dim() != cv.dim() {
        return Err(Error::DimensionMismatch { got: costate.dim(), expected: state.dim() });
    }
    Ok(ham_c(state, costate, cv) - ham_b(state, costate))
}

/// Final energy, terminal costate, and both boundary families for a protocol,
/// starting from the uniform state. The workhorse behind gradients and traces.
struct AdjointSolution {
    states: Vec<StateVector>,
    costates: Vec<CostateVector>,
}

fn solve_adjoint(p: &Protocol, cv: &CostVector) -> Result<AdjointSolution> {
    let initial = StateVector::initial(cv.n)?;
    let states = forward_boundary_states(&initial, p, cv)?;
    let terminal = terminal_costate(states.last().expect("nonempty"), cv)?;
    let costates = backward_boundary_costates(&terminal, p, cv)?;
    Ok(AdjointSolution { states, costates })
}

/// dF/dd_i for every pulse of a bang-bang protocol, F the final energy from
/// the uniform start. Each gradient is ℋ(g_i) read off at the pulse's end
/// boundary.
pub fn duration_gradients(bb: &BangBangProtocol, cv: &CostVector) -> Result<Vec<f64>> {
    let p = bb.to_protocol();
    let sol = solve_adjoint(&p, cv)?;
    let grads = p
        .segments()
        .iter()
        .enumerate()
        .map(|(i, s)| control_hamiltonian(&sol.states[i + 1], &sol.costates[i + 1], cv, s.g))
        .collect();
    Ok(grads)
}

/// dF/dτ_k for every interior switch, total time held fixed:
/// (g_before − g_after) · Φ(τ_k).
pub fn switch_gradients(bb: &BangBangProtocol, cv: &CostVector) -> Result<Vec<f64>> {
    let p = bb.to_protocol();
    let sol = solve_adjoint(&p, cv)?;
    let segs = p.segments();
    let mut grads = Vec::with_capacity(segs.len().saturating_sub(1));
    for k in 0..segs.len().saturating_sub(1) {
        let phi = switching_function(&sol.states[k + 1], &sol.costates[k + 1], cv)?;
        grads.push((segs[k].g - segs[k + 1].g) * phi);
    }
    Ok(grads)
}

/// Φ sampled along a protocol, with its zeros refined by bisection.
#[derive(Debug, Clone)]
pub struct SwitchingTrace {
    pub times: Vec<f64>,
    pub phi: Vec<f64>,
    /// Control value owning each sample (left-continuous at boundaries).
    pub g: Vec<f64>,
    /// Zeros of Φ detected between samples, refined to 1e−10 in time.
    pub switch_times: Vec<f64>,
    /// Index into `times` of each segment boundary, outer endpoints included;
    /// length = merged segment count + 1.
    pub boundary_indices: Vec<usize>,
}

const BISECTION_TIME_TOL: f64 = 1e-10;

/// Samples Φ on a uniform grid (plus exact segment boundaries) by stepping the
/// state and the left-boundary costate forward together through each segment.
pub fn switching_trace(
    p: &Protocol,
    cv: &CostVector,
    grid_per_unit_time: usize,
) -> Result<SwitchingTrace> {
    if grid_per_unit_time == 0 {
        return Err(Error::InvalidArgument("grid_per_unit_time must be positive".into()));
    }
    let p = p.merged();
    let sol = solve_adjoint(&p, cv)?;
    let starts = p.boundary_times();

    let mut times = Vec::new();
    let mut phi = Vec::new();
    let mut gs = Vec::new();
    let mut boundary_indices = vec![0usize];

    for (i, s) in p.segments().iter().enumerate() {
        let t_a = starts[i];
        let steps = ((s.dt * grid_per_unit_time as f64).ceil() as usize).max(1);
        let mut st = sol.states[i].clone();
        let mut co = sol.costates[i].clone();
        if i == 0 {
            times.push(t_a);
            phi.push(switching_function(&st, &co, cv)?);
            gs.push(s.g);
        }
        for step in 1..=steps {
            // Walk to the exact grid time; the last step lands on the stored
            // boundary pair instead of accumulating stepping error.
            if step == steps {
                st = sol.states[i + 1].clone();
                co = sol.costates[i + 1].clone();
            } else {
                let dt = s.dt / steps as f64;
                evolve_segment(&mut st, s.g, dt, cv, Direction::Forward)?;
                co.evolve(s.g, dt, cv, Direction::Forward)?;
            }
            times.push(if step == steps { t_a + s.dt } else { t_a + s.dt * step as f64 / steps as f64 });
            phi.push(switching_function(&st, &co, cv)?);
            gs.push(s.g);
        }
        boundary_indices.push(times.len() - 1);
    }

    let mut switch_times = Vec::new();
    for w in 0..times.len() - 1 {
        let (pa, pb) = (phi[w], phi[w + 1]);
        if pa == 0.0 {
            if w == 0 || phi[w - 1] != 0.0 {
                switch_times.push(times[w]);
            }
            continue;
        }
        if pa * pb < 0.0 {
            let seg = owning_segment(&starts, times[w], p.segments().len());
            let root = bisect_phi(&p, cv, &sol, seg, &starts, times[w], times[w + 1], pa)?;
            switch_times.push(root);
        }
    }
    if let Some(&last) = phi.last() {
        if last == 0.0 && phi.len() > 1 && phi[phi.len() - 2] != 0.0 {
            switch_times.push(*times.last().expect("nonempty"));
        }
    }

    Ok(SwitchingTrace { times, phi, g: gs, switch_times, boundary_indices })
}

fn owning_segment(starts: &[f64], t: f64, nsegs: usize) -> usize {
    match starts.iter().rposition(|&b| b <= t) {
        Some(i) => i.min(nsegs - 1),
        None => 0,
    }
}

fn phi_at(
    p: &Protocol,
    cv: &CostVector,
    sol: &AdjointSolution,
    seg: usize,
    t_seg_start: f64,
    t: f64,
) -> Result<f64> {
    let s = p.segments()[seg];
    let mut st = sol.states[seg].clone();
    let mut co = sol.costates[seg].clone();
    evolve_segment(&mut st, s.g, t - t_seg_start, cv, Direction::Forward)?;
    co.evolve(s.g, t - t_seg_start, cv, Direction::Forward)?;
    switching_function(&st, &co, cv)
}

fn bisect_phi(
    p: &Protocol,
    cv: &CostVector,
    sol: &AdjointSolution,
    seg: usize,
    starts: &[f64],
    mut lo: f64,
    mut hi: f64,
    phi_lo: f64,
) -> Result<f64> {
    let t0 = starts[seg];
    let sign_lo = phi_lo.signum();
    while hi - lo > BISECTION_TIME_TOL {
        let mid = 0.5 * (lo + hi);
        let pm = phi_at(p, cv, sol, seg, t0, mid)?;
        if pm == 0.0 {
            return Ok(mid);
        }
        if pm.signum() == sign_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// w(τ) = Φ(t0+τ) − Φ(t0) along a g=1 continuation from t0, in closed form as
/// a sum over label pairs so evaluation needs no integration.
pub struct PulseEndObjective {
    /// (C_z − C_{z flip k}, A_z Π*_{z flip k}) per ordered pair.
    pairs: Vec<(f64, Complex64)>,
}

impl PulseEndObjective {
    pub fn new(
        state_t0: &StateVector,
        costate_t0: &CostateVector,
        cv: &CostVector,
    ) -> Result<Self> {
        if state_t0.dim() != costate_t0.dim() || state_t0.dim() != cv.dim() {
            return Err(Error::DimensionMismatch { got: costate_t0.dim(), expected: cv.dim() });
        }
        let n = cv.n;
        let amps = state_t0.amps();
        let moms = costate_t0.moms();
        let mut pairs = Vec::with_capacity(cv.dim() * n);
        for z in 0..cv.dim() {
            for k in 0..n {
                let zk = z ^ (1 << k);
                pairs.push((cv.values[z] - cv.values[zk], amps[z] * moms[zk].conj()));
            }
        }
        Ok(Self { pairs })
    }

    /// w(τ) = Σ_{z,k} Im[(e^{−i(C_z − C_{z flip k})τ} − 1) · A_z Π*_{z flip k}];
    /// exactly zero at τ = 0.
    pub fn eval(&self, tau: f64) -> f64 {
        self.pairs
            .iter()
            .map(|&(dc, m)| ((Complex64::from_polar(1.0, -dc * tau) - 1.0) * m).im)
            .sum()
    }

    /// Smallest τ > 0 with w(τ) = 0: coarse scan at 10³ points per unit time,
    /// then bisection. None when no sign change occurs within the horizon.
    pub fn first_root(&self, search_horizon: f64) -> Result<Option<f64>> {
        if !(search_horizon > 0.0) || !search_horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "search horizon must be positive and finite, got {search_horizon}"
            )));
        }
        let step = 1e-3;
        let nsteps = (search_horizon / step).ceil() as usize;
        let mut t_prev = 0.0;
        let mut w_prev: f64 = 0.0; // w(0) = 0 by construction
        for i in 1..=nsteps {
            let t = (i as f64 * step).min(search_horizon);
            let wt = self.eval(t);
            if wt == 0.0 {
                return Ok(Some(t));
            }
            // The scan leaves τ=0 with w=0; a root is a sign change between
            // two strictly nonzero samples.
            if w_prev != 0.0 && w_prev.signum() != wt.signum() {
                let (mut lo, mut hi) = (t_prev, t);
                let sign_lo = w_prev.signum();
                while hi - lo > BISECTION_TIME_TOL {
                    let mid = 0.5 * (lo + hi);
                    let wm = self.eval(mid);
                    if wm == 0.0 {
                        return Ok(Some(mid));
                    }
                    if wm.signum() == sign_lo {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Ok(Some(0.5 * (lo + hi)));
            }
            t_prev = t;
            w_prev = wt;
        }
        Ok(None)
    }
}

/// Duration of the g=1 pulse opening at t0: first later zero of the pulse-end
/// objective. None when no root lies within the horizon.
pub fn pulse_end_root(
    state_t0: &StateVector,
    costate_t0: &CostateVector,
    cv: &CostVector,
    search_horizon: f64,
) -> Result<Option<f64>> {
    PulseEndObjective::new(state_t0, costate_t0, cv)?.first_root(search_horizon)
}

#[derive(Debug, Clone, Serialize)]
pub struct CertifyConfig {
    /// Grid density for the Φ trace.
    pub grid_per_unit_time: usize,
    /// A control value g counts as a bang when within this of 0 or 1.
    pub interior_eps: f64,
    /// Switch residual bound, relative to max |Φ| over the trace.
    pub residual_rel_tol: f64,
    /// Wrong-sign excursions of Φ below this (relative to max |Φ|) are noise.
    pub sign_rel_tol: f64,
    /// Wrong-sign excursions between `sign_rel_tol` and this band, with clean
    /// switch residuals, read as bang-bang chatter tracking a singular arc
    /// rather than a broken protocol. Beyond the band the verdict is Fail.
    pub chatter_band_rel: f64,
    /// |Φ| below this fraction of max |Φ| counts as vanishing.
    pub singular_rel: f64,
    /// Runs of vanishing Φ longer than this many grid points flag the
    /// certificate as possibly singular.
    pub singular_window: usize,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            grid_per_unit_time: 1000,
            interior_eps: 1e-6,
            residual_rel_tol: 1e-3,
            sign_rel_tol: 1e-3,
            chatter_band_rel: 5e-2,
            singular_rel: 1e-8,
            singular_window: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    PossiblySingular,
}

#[derive(Debug, Clone, Serialize)]
pub struct SwitchResidual {
    pub time: f64,
    pub phi: f64,
    /// |Φ| / max|Φ|.
    pub rel: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentSignCheck {
    pub segment: usize,
    pub g: f64,
    /// Worst wrong-signed Φ in the segment interior, relative to max |Φ|.
    pub worst_violation_rel: f64,
    pub ok: bool,
    /// Violation exceeds the noise tolerance but stays inside the chatter
    /// band: consistent with a finite pulse budget approximating a singular
    /// arc, where Φ hugs zero and its segment sign is not informative.
    pub chatter_suspect: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertifyReport {
    pub total_time: f64,
    /// Time-weighted fraction spent at g strictly between the bounds.
    pub interior_fraction: f64,
    pub max_abs_phi: f64,
    pub switch_residuals: Vec<SwitchResidual>,
    pub max_switch_residual_rel: f64,
    pub sign_checks: Vec<SegmentSignCheck>,
    /// Every bang segment's wrong-sign excursion is at noise level.
    pub sign_consistent: bool,
    /// Some segment is chatter-suspect (see `SegmentSignCheck`).
    pub chatter_suspect: bool,
    /// Φ vanishes over a sustained window, or some segment chatters; either
    /// way the bound choice is undetermined there.
    pub possibly_singular: bool,
    pub verdict: Verdict,
}

/// First-order optimality certificate: bang-bang structure, switch residuals,
/// and sign consistency of Φ against the chosen bound on every segment.
///
/// Three-way verdict. Pass: structurally bang-bang, every interior-switch
/// residual below tolerance, every segment sign clean. Fail: interior control
/// values, a bad switch residual, or a wrong-sign excursion too large to be
/// chatter. PossiblySingular: residuals and structure are clean but Φ either
/// vanishes over a sustained window or carries small wrong-sign lobes across
/// whole segments; both are how a finite pulse budget presents when the true
/// optimum spends time on a singular arc, so pass/fail would overclaim.
pub fn certify_protocol(p: &Protocol, cv: &CostVector, cfg: &CertifyConfig) -> Result<CertifyReport> {
    let trace = switching_trace(p, cv, cfg.grid_per_unit_time)?;
    certify_with_trace(&trace, p, cfg)
}

/// Same as `certify_protocol` when the trace is already in hand. The trace
/// must come from `switching_trace` on the same protocol.
pub fn certify_with_trace(
    trace: &SwitchingTrace,
    p: &Protocol,
    cfg: &CertifyConfig,
) -> Result<CertifyReport> {
    let p = p.merged();
    let t_total = p.total_time();
    if t_total <= 0.0 {
        return Err(Error::InvalidArgument("cannot certify a zero-length protocol".into()));
    }
    let is_bang = |g: f64| g <= cfg.interior_eps || g >= 1.0 - cfg.interior_eps;
    let interior_time: f64 =
        p.segments().iter().filter(|s| !is_bang(s.g)).map(|s| s.dt).sum();
    let interior_fraction = interior_time / t_total;

    let max_abs_phi = trace.phi.iter().fold(0.0f64, |m, &v| m.max(v.abs()));

    // Switch residuals at the interior boundaries where g actually jumps.
    let mut switch_residuals = Vec::new();
    for b in 1..trace.boundary_indices.len() - 1 {
        let (ga, gb) = (p.segments()[b - 1].g, p.segments()[b].g);
        if ga == gb {
            continue;
        }
        let idx = trace.boundary_indices[b];
        let phi = trace.phi[idx];
        let rel = if max_abs_phi > 0.0 { phi.abs() / max_abs_phi } else { 0.0 };
        switch_residuals.push(SwitchResidual { time: trace.times[idx], phi, rel });
    }
    let max_switch_residual_rel =
        switch_residuals.iter().fold(0.0f64, |m, r| m.max(r.rel));

    // Interior sign check per bang segment, skipping the two samples nearest
    // each boundary where Φ legitimately passes through zero.
    let mut sign_checks = Vec::new();
    let mut sign_consistent = true;
    for (i, s) in p.segments().iter().enumerate() {
        if !is_bang(s.g) {
            continue;
        }
        let lo = trace.boundary_indices[i];
        let hi = trace.boundary_indices[i + 1];
        let margin = 2usize;
        let mut worst = 0.0f64;
        if hi - lo > 2 * margin {
            for idx in lo + margin..=hi - margin {
                let phi = trace.phi[idx];
                // g=1 wants Φ ≤ 0, g=0 wants Φ ≥ 0.
                let violation = if s.g >= 0.5 { phi.max(0.0) } else { (-phi).max(0.0) };
                let rel = if max_abs_phi > 0.0 { violation / max_abs_phi } else { 0.0 };
                worst = worst.max(rel);
            }
        }
        let ok = worst <= cfg.sign_rel_tol;
        let chatter = !ok && worst <= cfg.chatter_band_rel;
        sign_consistent &= ok;
        sign_checks.push(SegmentSignCheck {
            segment: i,
            g: s.g,
            worst_violation_rel: worst,
            ok,
            chatter_suspect: chatter,
        });
    }
    let chatter_suspect = sign_checks.iter().any(|c| c.chatter_suspect);
    let hard_sign_fail = sign_checks.iter().any(|c| !c.ok && !c.chatter_suspect);

    // Sustained stretches of vanishing Φ make the bound choice undetermined.
    let mut vanishing_window = max_abs_phi == 0.0;
    let mut run = 0usize;
    for &v in &trace.phi {
        if max_abs_phi > 0.0 && v.abs() < cfg.singular_rel * max_abs_phi {
            run += 1;
            if run > cfg.singular_window {
                vanishing_window = true;
                break;
            }
        } else {
            run = 0;
        }
    }
    let possibly_singular = vanishing_window || chatter_suspect;

    let residuals_ok = max_switch_residual_rel < cfg.residual_rel_tol;
    let structurally_bang = interior_fraction == 0.0;
    let verdict = if !structurally_bang || !residuals_ok || hard_sign_fail {
        Verdict::Fail
    } else if possibly_singular {
        Verdict::PossiblySingular
    } else {
        Verdict::Pass
    };

    Ok(CertifyReport {
        total_time: t_total,
        interior_fraction,
        max_abs_phi,
        switch_residuals,
        max_switch_residual_rel,
        sign_checks,
        sign_consistent,
        chatter_suspect,
        possibly_singular,
        verdict,
    })
}

/// Final energy of a bang-bang protocol from the uniform start; the cost that
/// `duration_gradients` differentiates.
pub fn final_energy(bb: &BangBangProtocol, cv: &CostVector) -> Result<f64> {
    let p = bb.to_protocol();
    let mut state = StateVector::initial(cv.n)?;
    crate::statevector::evolve_protocol(&mut state, &p, cv)?;
    Ok(crate::statevector::energy(&state, cv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SKInstance;
    use crate::statevector::{energy, evolve_protocol};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn cv(n: usize, seed: u64) -> CostVector {
        SKInstance::generate(n, seed).unwrap().cost_vector()
    }

    fn random_bb(rng: &mut ChaCha12Rng, pulses: usize, t_total: f64) -> BangBangProtocol {
        let mut d: Vec<f64> = (0..pulses).map(|_| rng.gen_range(0.05..1.0)).collect();
        let sum: f64 = d.iter().sum();
        for x in &mut d {
            *x *= t_total / sum;
        }
        let start = u8::from(rng.gen_bool(0.5));
        BangBangProtocol::new(start, d).unwrap()
    }

    fn evolved_pair(p: &Protocol, cv: &CostVector) -> (StateVector, CostateVector) {
        let mut st = StateVector::initial(cv.n).unwrap();
        evolve_protocol(&mut st, p, cv).unwrap();
        let co = terminal_costate(&st, cv).unwrap();
        (st, co)
    }

    #[test]
    fn terminal_costate_is_componentwise_product() {
        let cv = cv(3, 11);
        let st = StateVector::initial(3).unwrap();
        let co = terminal_costate(&st, &cv).unwrap();
        for z in 0..8 {
            let expected = 2.0 * cv.values[z] * st.amps()[z];
            assert!((co.moms()[z] - expected).norm() < 1e-15);
        }
    }

    #[test]
    fn terminal_costate_matches_amplitude_sensitivity() {
        // F = Σ_z |A_z|² C_z; dF/dRe A_z = Re Π_z, dF/dIm A_z = Im Π_z.
        let cv = cv(3, 4);
        let bb = BangBangProtocol::new(1, vec![0.3, 0.4, 0.2]).unwrap();
        let (st, co) = evolved_pair(&bb.to_protocol(), &cv);
        let f = |amps: &[Complex64]| -> f64 {
            amps.iter().zip(&cv.values).map(|(a, &c)| a.norm_sqr() * c).sum()
        };
        let h = 1e-6;
        for z in 0..8 {
            for re in [true, false] {
                let mut up = st.amps().to_vec();
                let mut dn = st.amps().to_vec();
                let delta = if re { Complex64::new(h, 0.0) } else { Complex64::new(0.0, h) };
                up[z] += delta;
                dn[z] -= delta;
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                let exact = if re { co.moms()[z].re } else { co.moms()[z].im };
                if exact.abs() > 1e-9 {
                    assert!(
                        ((fd - exact) / exact).abs() < 1e-6,
                        "z={z} re={re}: fd {fd} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn backward_then_forward_recovers_terminal_costate() {
        let cv = cv(4, 7);
        let bb = BangBangProtocol::new(0, vec![0.25, 0.5, 0.35, 0.4]).unwrap();
        let p = bb.to_protocol();
        let (_, co_t) = evolved_pair(&p, &cv);
        let boundaries = backward_boundary_costates(&co_t, &p, &cv).unwrap();
        let mut roundtrip = boundaries[0].clone();
        for s in p.segments() {
            roundtrip.evolve(s.g, s.dt, &cv, Direction::Forward).unwrap();
        }
        // Bang kernels invert exactly, so this sits at rounding level, well
        // inside the 1e-10 contract.
        let dist: f64 = roundtrip
            .moms()
            .iter()
            .zip(co_t.moms())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(dist < 1e-12, "roundtrip distance {dist}");
    }

    #[test]
    fn backward_forward_roundtrip_generic_control_within_integrator_tolerance() {
        let cv = cv(3, 19);
        let p = Protocol::from_slices(1.2, &[0.3, 0.8, 0.5]).unwrap();
        let (_, co_t) = evolved_pair(&p, &cv);
        let boundaries = backward_boundary_costates(&co_t, &p, &cv).unwrap();
        let mut roundtrip = boundaries[0].clone();
        for s in p.segments() {
            roundtrip.evolve(s.g, s.dt, &cv, Direction::Forward).unwrap();
        }
        let dist: f64 = roundtrip
            .moms()
            .iter()
            .zip(co_t.moms())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(dist < 1e-8, "roundtrip distance {dist}");
    }

    #[test]
    fn costate_norm_constant_along_sweep() {
        let cv = cv(4, 3);
        let bb = BangBangProtocol::new(1, vec![0.3, 0.6, 0.2, 0.5, 0.4]).unwrap();
        let p = bb.to_protocol();
        let (_, co_t) = evolved_pair(&p, &cv);
        let norm_t = co_t.norm_sq();
        let times: Vec<f64> = (0..=20).map(|i| 2.0 * i as f64 / 20.0).collect();
        for c in backward_sweep(&co_t, &p, &cv, &times).unwrap() {
            assert!((c.norm_sq() - norm_t).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_sweep_rejects_times_outside_protocol() {
        let cv = cv(3, 3);
        let p = Protocol::from_slices(1.0, &[1.0]).unwrap();
        let (_, co_t) = evolved_pair(&p, &cv);
        assert!(backward_sweep(&co_t, &p, &cv, &[1.5]).is_err());
        assert!(backward_sweep(&co_t, &p, &cv, &[-0.1]).is_err());
    }

    #[test]
    fn backward_sweep_matches_dense_adjoint_oracle() {
        use crate::linalg::{apply, propagator};
        let cvec = cv(3, 21);
        let bb = BangBangProtocol::new(1, vec![0.4, 0.3, 0.5]).unwrap();
        let p = bb.to_protocol();
        let (_, co_t) = evolved_pair(&p, &cvec);

        // Dense route: Π(t_k) = U_seg^† Π(t_{k+1}) per segment.
        let mut dense = co_t.moms().to_vec();
        for s in p.segments().iter().rev() {
            let u = propagator(&cvec, s.g, s.dt).unwrap();
            dense = apply(&u.adjoint(), &dense);
        }
        let kernel = backward_boundary_costates(&co_t, &p, &cvec).unwrap();
        let worst: f64 = kernel[0]
            .moms()
            .iter()
            .zip(&dense)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "dense adjoint mismatch {worst}");
    }

    #[test]
    fn zero_costate_zeroes_switching_function() {
        let cv = cv(3, 1);
        let st = StateVector::initial(3).unwrap();
        let co = CostateVector::from_moms(3, vec![Complex64::new(0.0, 0.0); 8]).unwrap();
        assert_eq!(switching_function(&st, &co, &cv).unwrap(), 0.0);
    }

    #[test]
    fn control_hamiltonian_constant_within_a_bang() {
        let cv = cv(4, 13);
        let bb = BangBangProtocol::new(1, vec![0.5, 0.7]).unwrap();
        let p = bb.to_protocol();
        let sol_states = forward_boundary_states(&StateVector::initial(4).unwrap(), &p, &cv).unwrap();
        let co_t = terminal_costate(sol_states.last().unwrap(), &cv).unwrap();
        let costates = backward_boundary_costates(&co_t, &p, &cv).unwrap();

        // Walk through segment 0 (g=1) in thirds; ℋ(1) must not move.
        let mut st = sol_states[0].clone();
        let mut co = costates[0].clone();
        let h_start = control_hamiltonian(&st, &co, &cv, 1.0);
        for _ in 0..3 {
            evolve_segment(&mut st, 1.0, 0.5 / 3.0, &cv, Direction::Forward).unwrap();
            co.evolve(1.0, 0.5 / 3.0, &cv, Direction::Forward).unwrap();
            assert!((control_hamiltonian(&st, &co, &cv, 1.0) - h_start).abs() < 1e-10);
        }
        // Likewise Im Σ A_z Π_z* is preserved by the shared kernels.
        let im0: f64 = sol_states[0]
            .amps()
            .iter()
            .zip(costates[0].moms())
            .map(|(a, p)| (a * p.conj()).im)
            .sum();
        let im1: f64 = st
            .amps()
            .iter()
            .zip(co.moms())
            .map(|(a, p)| (a * p.conj()).im)
            .sum();
        assert!((im0 - im1).abs() < 1e-10);
    }

    #[test]
    fn duration_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for trial in 0..6 {
            let cvec = cv(4, 100 + trial);
            let bb = random_bb(&mut rng, 5, 2.0);
            let grads = duration_gradients(&bb, &cvec).unwrap();
            let h = 1e-5;
            for i in 0..5 {
                let mut up = bb.durations().to_vec();
                let mut dn = up.clone();
                up[i] += h;
                dn[i] -= h;
                let f_up =
                    final_energy(&BangBangProtocol::new(bb.start_value(), up).unwrap(), &cvec)
                        .unwrap();
                let f_dn =
                    final_energy(&BangBangProtocol::new(bb.start_value(), dn).unwrap(), &cvec)
                        .unwrap();
                let fd = (f_up - f_dn) / (2.0 * h);
                // Floor at 1e-4: below that central differences are noise
                // (a final g=1 pulse has an exactly zero gradient).
                let scale = grads[i].abs().max(1e-4);
                assert!(
                    ((fd - grads[i]) / scale).abs() < 1e-5,
                    "trial {trial} pulse {i}: fd {fd} adjoint {}",
                    grads[i]
                );
            }
        }
    }

    #[test]
    fn switch_gradients_match_boundary_moves() {
        let mut rng = ChaCha12Rng::seed_from_u64(78);
        for trial in 0..4 {
            let cvec = cv(4, 300 + trial);
            let bb = random_bb(&mut rng, 4, 1.6);
            let grads = switch_gradients(&bb, &cvec).unwrap();
            let h = 1e-5;
            for k in 0..3 {
                let mut up = bb.durations().to_vec();
                up[k] += h;
                up[k + 1] -= h;
                let mut dn = bb.durations().to_vec();
                dn[k] -= h;
                dn[k + 1] += h;
                let f_up =
                    final_energy(&BangBangProtocol::new(bb.start_value(), up).unwrap(), &cvec)
                        .unwrap();
                let f_dn =
                    final_energy(&BangBangProtocol::new(bb.start_value(), dn).unwrap(), &cvec)
                        .unwrap();
                let fd = (f_up - f_dn) / (2.0 * h);
                let scale = grads[k].abs().max(1e-4);
                assert!(
                    ((fd - grads[k]) / scale).abs() < 1e-5,
                    "trial {trial} switch {k}: fd {fd} adjoint {}",
                    grads[k]
                );
            }
        }
    }

    #[test]
    fn pulse_end_objective_vanishes_at_start() {
        let cvec = cv(4, 9);
        let bb = BangBangProtocol::new(0, vec![0.3, 0.5]).unwrap();
        let p = bb.to_protocol();
        let states = forward_boundary_states(&StateVector::initial(4).unwrap(), &p, &cvec).unwrap();
        let co_t = terminal_costate(states.last().unwrap(), &cvec).unwrap();
        let costates = backward_boundary_costates(&co_t, &p, &cvec).unwrap();
        // Boundary 1 is the 0→1 switch.
        let st = &states[1];
        let co = &costates[1];
        let obj = PulseEndObjective::new(st, co, &cvec).unwrap();
        assert_eq!(obj.eval(0.0), 0.0);
        // Near zero the objective is linear with slope Φ'(t), of size O(n·C²).
        assert!(obj.eval(1e-10).abs() < 1e-7);
        assert!(pulse_end_root(st, co, &cvec, -1.0).is_err());
        assert!(pulse_end_root(st, co, &cvec, 0.0).is_err());
    }

    #[test]
    fn pulse_end_root_agrees_with_kernel_evolution() {
        let cvec = cv(4, 15);
        let bb = BangBangProtocol::new(0, vec![0.4, 0.9]).unwrap();
        let p = bb.to_protocol();
        let states = forward_boundary_states(&StateVector::initial(4).unwrap(), &p, &cvec).unwrap();
        let co_t = terminal_costate(states.last().unwrap(), &cvec).unwrap();
        let costates = backward_boundary_costates(&co_t, &p, &cvec).unwrap();
        let st = &states[1];
        let co = &costates[1];
        let root = pulse_end_root(st, co, &cvec, 10.0).unwrap();
        if let Some(tau) = root {
            // Independent route: evolve the pair under g=1 and compare Φ to
            // its start value; w(τ) is exactly that difference.
            let phi0 = switching_function(st, co, &cvec).unwrap();
            let mut st2 = st.clone();
            let mut co2 = co.clone();
            evolve_segment(&mut st2, 1.0, tau, &cvec, Direction::Forward).unwrap();
            co2.evolve(1.0, tau, &cvec, Direction::Forward).unwrap();
            let w_tau = switching_function(&st2, &co2, &cvec).unwrap() - phi0;
            assert!(w_tau.abs() < 1e-8, "w at claimed root: {w_tau}");
        } else {
            panic!("expected a root within 10 time units");
        }
    }

    #[test]
    fn switching_trace_grid_is_increasing_and_finite() {
        let cvec = cv(3, 8);
        let bb = BangBangProtocol::new(1, vec![0.35, 0.25, 0.4]).unwrap();
        let trace = switching_trace(&bb.to_protocol(), &cvec, 1000).unwrap();
        assert!(trace.times.windows(2).all(|w| w[1] > w[0]));
        assert!(trace.phi.iter().all(|v| v.is_finite()));
        assert_eq!(trace.boundary_indices.len(), 4);
        assert_eq!(trace.boundary_indices[0], 0);
        assert_eq!(*trace.boundary_indices.last().unwrap(), trace.times.len() - 1);
        assert!((trace.times[trace.boundary_indices[1]] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn certify_rejects_linear_ramp() {
        let cvec = cv(3, 5);
        let gs: Vec<f64> = (0..40).map(|i| (i as f64 + 0.5) / 40.0).collect();
        let ramp = Protocol::from_slices(1.0, &gs).unwrap();
        let report = certify_protocol(&ramp, &cvec, &CertifyConfig::default()).unwrap();
        assert!(report.interior_fraction > 0.9);
        assert_eq!(report.verdict, Verdict::Fail);
    }

    #[test]
    fn certify_single_cost_pulse_has_no_switches() {
        let cvec = cv(3, 6);
        let p = BangBangProtocol::new(1, vec![0.7]).unwrap().to_protocol();
        let report = certify_protocol(&p, &cvec, &CertifyConfig::default()).unwrap();
        assert!(report.switch_residuals.is_empty());
        assert_eq!(report.interior_fraction, 0.0);
        // Verdict rides on the sign check alone here.
        assert_eq!(report.sign_checks.len(), 1);
    }
}
