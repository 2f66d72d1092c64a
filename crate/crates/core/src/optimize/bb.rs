//! Projected-gradient descent on pulse durations over the simplex
//! {d_i ≥ 0, Σ d_i = T}, with random restarts and both choices of the
//! opening control value.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::model::{CostVector, SKInstance};
use crate::optimize::OptimizationResult;
use crate::pontryagin::{duration_gradients, final_energy, switch_gradients};
use crate::protocol::BangBangProtocol;

const MAX_ITERS: usize = 2000;
const CREEP_ITERS: usize = 800;
const NEWTON_ITERS: usize = 40;
const POLISH_ROUNDS: usize = 4;
const PG_TOL: f64 = 1e-8;
const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-14;

/// Euclidean projection onto {x ≥ 0, Σx = s}. Sort-based; exact zeros for
/// the clipped coordinates.
fn project_simplex(x: &[f64], s: f64) -> Vec<f64> {
    let mut u = x.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let candidate = (cum - s) / (j + 1) as f64;
        if uj - candidate > 0.0 {
            theta = candidate;
        }
    }
    x.iter().map(|&xi| (xi - theta).max(0.0)).collect()
}

/// Uniform sample from the simplex via normalized exponential gaps.
fn sample_simplex(rng: &mut ChaCha12Rng, m: usize, s: f64) -> Vec<f64> {
    let gaps: Vec<f64> = (0..m).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let total: f64 = gaps.iter().sum();
    gaps.into_iter().map(|g| g * s / total).collect()
}

struct Descent {
    /// Merged pulse train with Newton-refined switch times.
    protocol: BangBangProtocol,
    cost: f64,
    trace: Vec<f64>,
    evaluations: u64,
    converged: bool,
}

/// Damped Newton on the interior switch times, total time fixed. This is the
/// coordinate system where the simplex constraint disappears, so the last few
/// orders of magnitude of the residual come cheap once Armijo descent has
/// found the basin. Returns the refined protocol, the evaluation count, and
/// whether the largest switch gradient fell below `PG_TOL`.
fn newton_refine(
    proto: &BangBangProtocol,
    cv: &CostVector,
) -> Result<(BangBangProtocol, u64, bool)> {
    let t_total = proto.total_time();
    let start = proto.start_value();
    let pulses = proto.durations().len();
    if pulses < 2 {
        // No interior switch; nothing to refine.
        return Ok((proto.clone(), 0, true));
    }
    let m = pulses - 1;
    let mut tau = Vec::with_capacity(m);
    let mut acc = 0.0;
    for &dt in &proto.durations()[..m] {
        acc += dt;
        tau.push(acc);
    }

    let build = |tau: &[f64]| -> Result<BangBangProtocol> {
        let mut d = Vec::with_capacity(tau.len() + 1);
        let mut prev = 0.0;
        for &t in tau {
            d.push(t - prev);
            prev = t;
        }
        d.push(t_total - prev);
        BangBangProtocol::new(start, d)
    };
    let ordered = |tau: &[f64]| -> bool {
        let mut prev = 0.0;
        for &t in tau {
            if t <= prev {
                return false;
            }
            prev = t;
        }
        prev < t_total
    };
    let linf = |v: &[f64]| v.iter().fold(0.0f64, |a, &x| a.max(x.abs()));

    let mut evals = 0u64;
    let mut g = switch_gradients(&build(&tau)?, cv)?;
    evals += 1;

    'outer: for _ in 0..NEWTON_ITERS {
        if linf(&g) < PG_TOL {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            let left = if j == 0 { tau[j] } else { tau[j] - tau[j - 1] };
            let right = if j + 1 == m { t_total - tau[j] } else { tau[j + 1] - tau[j] };
            let room = 0.25 * left.min(right);
            if room < 1e-9 {
                // A pulse is collapsing; differencing across it is meaningless.
                break 'outer;
            }
            let h = room.min(1e-5);
            let mut tp = tau.clone();
            tp[j] += h;
            let mut tm = tau.clone();
            tm[j] -= h;
            let gp = switch_gradients(&build(&tp)?, cv)?;
            let gm = switch_gradients(&build(&tm)?, cv)?;
            evals += 2;
            for i in 0..m {
                jac[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        for i in 0..m {
            for j in 0..i {
                let avg = 0.5 * (jac[(i, j)] + jac[(j, i)]);
                jac[(i, j)] = avg;
                jac[(j, i)] = avg;
            }
        }
        let rhs = DVector::from_iterator(m, g.iter().map(|&x| -x));
        let Some(delta) = jac.lu().solve(&rhs) else { break };

        // Backtrack on the residual norm; ordering must stay strict.
        let mut factor = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> =
                tau.iter().zip(delta.iter()).map(|(&t, &s)| t + factor * s).collect();
            if ordered(&cand) {
                let gc = switch_gradients(&build(&cand)?, cv)?;
                evals += 1;
                if linf(&gc) < linf(&g) {
                    tau = cand;
                    g = gc;
                    accepted = true;
                    break;
                }
            }
            factor *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let done = linf(&g) < PG_TOL;
    Ok((build(&tau)?, evals, done))
}

fn merge(start: u8, durations: Vec<f64>) -> Result<BangBangProtocol> {
    let full = BangBangProtocol::new(start, durations)?;
    let pairs = full.merged_pulses();
    if pairs.is_empty() {
        return Ok(full);
    }
    let start_merged = if pairs[0].0 >= 0.5 { 1 } else { 0 };
    BangBangProtocol::new(start_merged, pairs.iter().map(|&(_, dt)| dt).collect())
}

fn armijo_creep(
    cv: &CostVector,
    start: u8,
    mut d: Vec<f64>,
    t_total: f64,
) -> Result<(Vec<f64>, f64, Vec<f64>, u64, bool)> {
    let eval = |d: &[f64]| -> Result<f64> {
        final_energy(&BangBangProtocol::new(start, d.to_vec())?, cv)
    };
    let mut f = eval(&d)?;
    let mut evaluations: u64 = 1;
    let mut trace = vec![f];
    let mut alpha = 0.1;
    let mut alpha_good = 0.05;
    let mut converged = false;

    let pg_norm = |d: &[f64], grad: &[f64]| -> f64 {
        // Reference-step projected gradient; zero exactly at stationarity,
        // including the uniform-shift direction the constraint absorbs.
        let shifted: Vec<f64> = d.iter().zip(grad).map(|(&di, &gi)| di - gi).collect();
        project_simplex(&shifted, t_total)
            .iter()
            .zip(d)
            .map(|(&pi, &di)| (di - pi).abs())
            .fold(0.0f64, f64::max)
    };

    for _ in 0..MAX_ITERS {
        let grad = duration_gradients(&BangBangProtocol::new(start, d.clone())?, cv)?;
        evaluations += 1;
        if pg_norm(&d, &grad) < PG_TOL {
            converged = true;
            break;
        }

        let mut advanced = false;
        while alpha > MIN_STEP {
            let cand: Vec<f64> = d.iter().zip(&grad).map(|(&di, &gi)| di - alpha * gi).collect();
            let cand = project_simplex(&cand, t_total);
            let step_sq: f64 = cand.iter().zip(&d).map(|(&a, &b)| (a - b) * (a - b)).sum();
            if step_sq == 0.0 {
                break;
            }
            let f_cand = eval(&cand)?;
            evaluations += 1;
            if f_cand <= f - ARMIJO_C / alpha * step_sq {
                d = cand;
                f = f_cand;
                trace.push(f);
                alpha_good = alpha;
                alpha = (alpha * 1.5).min(100.0);
                advanced = true;
                break;
            }
            alpha *= 0.5;
        }
        if !advanced {
            // The cost can no longer certify a decrease: near the optimum the
            // Armijo condition asks for improvements below double-precision
            // resolution of f. The gradients are still exact there, so walk
            // the valley floor with steps the cost only has to veto, never
            // certify, then refine with curvature.
            break;
        }
    }

    if !converged {
        let mut step = alpha_good;
        let mut entry_pg = f64::INFINITY;
        let noise = 1e-12 * f.abs().max(1.0);
        for _ in 0..CREEP_ITERS {
            let grad = duration_gradients(&BangBangProtocol::new(start, d.clone())?, cv)?;
            evaluations += 1;
            let pg = pg_norm(&d, &grad);
            if pg < PG_TOL {
                converged = true;
                break;
            }
            if pg > 4.0 * entry_pg {
                // Diverging at this step size; damp and rebase the guard.
                step *= 0.5;
                if step < MIN_STEP {
                    break;
                }
                entry_pg = f64::INFINITY;
            } else {
                step = (step * 1.1).min(10.0);
            }
            entry_pg = entry_pg.min(pg);
            let cand: Vec<f64> =
                d.iter().zip(&grad).map(|(&di, &gi)| di - step * gi).collect();
            let cand = project_simplex(&cand, t_total);
            if cand == d {
                break;
            }
            let f_cand = eval(&cand)?;
            evaluations += 1;
            if f_cand > f + noise {
                // Measurable ascent: the step left the basin. Back off in
                // place rather than accepting the move.
                step *= 0.25;
                if step < MIN_STEP {
                    break;
                }
                entry_pg = f64::INFINITY;
                continue;
            }
            d = cand;
            f = f_cand;
        }
        if trace.last().is_none_or(|&last| f <= last) {
            trace.push(f);
        }
    }
    Ok((d, f, trace, evaluations, converged))
}

fn descend(inst: &SKInstance, start: u8, d: Vec<f64>, t_total: f64) -> Result<Descent> {
    let cv = inst.cost_vector();
    let (d, mut f, mut trace, mut evaluations, mut converged) =
        armijo_creep(&cv, start, d, t_total)?;
    let mut proto = merge(start, d)?;
    let noise = |f: f64| 1e-12 * f.abs().max(1.0);

    for round in 0..POLISH_ROUNDS {
        let (refined, nev, stationary) = newton_refine(&proto, &cv)?;
        evaluations += nev;
        let f_refined = final_energy(&refined, &cv)?;
        evaluations += 1;
        // Newton tracks the residual, not the cost; reject the rare excursion
        // that climbs out of the basin by more than rounding noise.
        if f_refined <= f + noise(f) {
            proto = refined;
            f = f_refined;
            if trace.last().is_none_or(|&last| f <= last) {
                trace.push(f);
            }
            if stationary {
                converged = true;
                break;
            }
        }
        converged = false;
        if round + 1 == POLISH_ROUNDS {
            break;
        }
        // Newton stalled short of stationarity. Merging changed the manifold,
        // so gradient descent has fresh room; take another pass on the merged
        // train and let Newton retry from there.
        let start_m = proto.start_value();
        let (d2, f2, _, ev2, conv2) =
            armijo_creep(&cv, start_m, proto.durations().to_vec(), t_total)?;
        evaluations += ev2;
        if f2 > f + noise(f) {
            break;
        }
        converged = conv2;
        f = f2.min(f);
        if trace.last().is_none_or(|&last| f <= last) {
            trace.push(f);
        }
        proto = merge(start_m, d2)?;
    }
    Ok(Descent { protocol: proto, cost: f, trace, evaluations, converged })
}

/// Best bang-bang protocol over `restarts` random simplex starts, each tried
/// with both opening values. The reported protocol has its zero-duration
/// pulses merged away.
pub fn bb_optimize(
    inst: &SKInstance,
    t_total: f64,
    max_pulses: usize,
    restarts: usize,
    seed: u64,
) -> Result<OptimizationResult> {
    if max_pulses < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 pulses to alternate, got {max_pulses}"
        )));
    }
    if restarts == 0 {
        return Err(Error::InvalidArgument("need at least 1 restart".into()));
    }
    if !(t_total > 0.0) || !t_total.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "total time must be positive and finite, got {t_total}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut best: Option<Descent> = None;
    let mut evaluations = 0u64;

    for _ in 0..restarts {
        let d0 = sample_simplex(&mut rng, max_pulses, t_total);
        for start in [0u8, 1u8] {
            let out = descend(inst, start, d0.clone(), t_total)?;
            evaluations += out.evaluations;
            let better = match &best {
                None => true,
                Some(b) => out.cost < b.cost,
            };
            if better {
                best = Some(out);
            }
        }
    }
    let chosen = best.expect("at least one restart ran");

    Ok(OptimizationResult {
        best_protocol: chosen.protocol.to_protocol(),
        best_bang_bang: Some(chosen.protocol),
        best_cost: chosen.cost,
        cost_trace: chosen.trace,
        evaluations,
        converged: chosen.converged,
    })
}
