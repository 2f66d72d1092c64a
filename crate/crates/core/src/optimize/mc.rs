//! Metropolis annealing over a protocol discretized into equal slices.
//!
//! Each slice holds one continuous control value; a move nudges one slice and
//! is accepted on the final-energy change. Slice propagators are exact (dense
//! eigendecomposition), and prefix states plus suffix operators make a
//! proposal cost one small eigensolve and two mat-vecs instead of a full
//! re-evolution.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::linalg::propagator;
use crate::model::{CostVector, SKInstance};
use crate::optimize::OptimizationResult;
use crate::protocol::Protocol;
use crate::statevector::{energy, evolve_protocol, StateVector};

/// Starting temperature: fixed, or measured from a pilot sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Temperature {
    /// Standard deviation of proposal energy changes over one sweep from the
    /// initial protocol, nothing accepted.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct MCConfig {
    pub slices: usize,
    /// Sweep budget; one sweep is `slices` single-slice moves.
    pub sweeps: usize,
    pub initial_temperature: Temperature,
    /// Geometric decay applied after every sweep.
    pub cooling_factor: f64,
    /// Half-width of the uniform perturbation on a slice value.
    pub move_width: f64,
    pub seed: u64,
}

impl Default for MCConfig {
    fn default() -> Self {
        Self {
            slices: 40,
            sweeps: 600,
            initial_temperature: Temperature::Auto,
            cooling_factor: 0.95,
            move_width: 0.2,
            seed: 0,
        }
    }
}

impl MCConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slices == 0 {
            return Err(Error::InvalidArgument("slice count must be at least 1".into()));
        }
        if self.sweeps == 0 {
            return Err(Error::InvalidArgument("sweep budget must be at least 1".into()));
        }
        if !(self.cooling_factor > 0.0 && self.cooling_factor < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "cooling factor must lie in (0,1), got {}",
                self.cooling_factor
            )));
        }
        if !(self.move_width > 0.0 && self.move_width <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "move width must lie in (0,1], got {}",
                self.move_width
            )));
        }
        if let Temperature::Fixed(t) = self.initial_temperature {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "fixed temperature must be finite and nonnegative, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-slice exact propagators with prefix states and suffix operators.
/// prefix[k] is the state after slices [0,k); suffix[k] maps the state at
/// slice k onward to the final time (suffix[S] = identity).
struct SliceCache {
    dt: f64,
    props: Vec<DMatrix<Complex64>>,
    prefix: Vec<DVector<Complex64>>,
    suffix: Vec<DMatrix<Complex64>>,
}

impl SliceCache {
    fn build(cv: &CostVector, gs: &[f64], dt: f64) -> Result<Self> {
        let props = gs
            .iter()
            .map(|&g| propagator(cv, g, dt))
            .collect::<Result<Vec<_>>>()?;
        let s = props.len();
        let dim = cv.dim();
        let init = StateVector::initial(cv.n)?;
        let mut cache = Self {
            dt,
            props,
            prefix: vec![DVector::from_column_slice(init.amps()); s + 1],
            suffix: vec![DMatrix::identity(dim, dim); s + 1],
        };
        cache.recompute(0, s - 1);
        Ok(cache)
    }

    /// Refreshes prefix states from slice `prefix_from` forward and suffix
    /// operators from `suffix_from` down; everything outside those ranges is
    /// assumed current.
    fn recompute(&mut self, prefix_from: usize, suffix_from: usize) {
        let s = self.props.len();
        for k in prefix_from..s {
            self.prefix[k + 1] = &self.props[k] * &self.prefix[k];
        }
        for k in (0..=suffix_from).rev() {
            self.suffix[k] = &self.suffix[k + 1] * &self.props[k];
        }
    }

    /// Final energy if slice j were replaced; returns the candidate
    /// propagator for a later `accept`.
    fn propose(
        &self,
        cv: &CostVector,
        j: usize,
        g_new: f64,
    ) -> Result<(f64, DMatrix<Complex64>)> {
        let u_new = propagator(cv, g_new, self.dt)?;
        let mid = &u_new * &self.prefix[j];
        let fin = &self.suffix[j + 1] * mid;
        Ok((state_energy(fin.as_slice(), cv), u_new))
    }

    fn accept(&mut self, j: usize, u_new: DMatrix<Complex64>) {
        self.props[j] = u_new;
        self.recompute(j, j);
    }

    fn final_energy(&self, cv: &CostVector) -> f64 {
        state_energy(self.prefix[self.props.len()].as_slice(), cv)
    }
}

fn state_energy(amps: &[Complex64], cv: &CostVector) -> f64 {
    amps.iter().zip(&cv.values).map(|(a, &c)| a.norm_sqr() * c).sum()
}

/// Simulated annealing on the sliced protocol. Runs until the sweep budget is
/// spent or acceptance falls below 1% in a sweep; `converged` reports which.
pub fn mc_optimize(inst: &SKInstance, t_total: f64, cfg: &MCConfig) -> Result<OptimizationResult> {
    cfg.validate()?;
    if !(t_total > 0.0) || !t_total.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "total time must be positive and finite, got {t_total}"
        )));
    }
    let cv = inst.cost_vector();
    let s = cfg.slices;
    let dt = t_total / s as f64;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    let mut gs: Vec<f64> = (0..s).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let mut cache = SliceCache::build(&cv, &gs, dt)?;
    let mut current = cache.final_energy(&cv);
    let mut evaluations: u64 = 1;

    let mut best_gs = gs.clone();
    let mut best = current;

    let propose_move = |rng: &mut ChaCha12Rng, gs: &[f64]| -> (usize, f64) {
        let j = rng.gen_range(0..gs.len());
        let delta = rng.gen_range(-cfg.move_width..cfg.move_width);
        (j, (gs[j] + delta).clamp(0.0, 1.0))
    };

    let mut temperature = match cfg.initial_temperature {
        Temperature::Fixed(t) => t,
        Temperature::Auto => {
            // Pilot sweep: measure proposal energy changes without moving.
            let mut deltas = Vec::with_capacity(s);
            for _ in 0..s {
                let (j, g_new) = propose_move(&mut rng, &gs);
                let (e_new, _) = cache.propose(&cv, j, g_new)?;
                evaluations += 1;
                deltas.push(e_new - current);
            }
            let mean = deltas.iter().sum::<f64>() / s as f64;
            let var = deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / s as f64;
            var.sqrt().max(1e-12)
        }
    };

    let mut cost_trace = vec![best];
    let mut converged = false;
    for _sweep in 0..cfg.sweeps {
        let mut accepted = 0usize;
        for _ in 0..s {
            let (j, g_new) = propose_move(&mut rng, &gs);
            let (e_new, u_new) = cache.propose(&cv, j, g_new)?;
            evaluations += 1;
            let de = e_new - current;
            let take = if de <= 0.0 {
                true
            } else if temperature > 0.0 {
                rng.gen::<f64>() < (-de / temperature).exp()
            } else {
                false
            };
            if take {
                cache.accept(j, u_new);
                gs[j] = g_new;
                current = e_new;
                accepted += 1;
                if current < best {
                    best = current;
                    best_gs.copy_from_slice(&gs);
                }
            }
        }
        temperature *= cfg.cooling_factor;
        cost_trace.push(best);
        if (accepted as f64) < 0.01 * s as f64 {
            converged = true;
            break;
        }
    }

    let best_protocol = Protocol::from_slices(t_total, &best_gs)?;
    // Report the cost through the shared evolution path so it lines up with
    // every other consumer of the protocol.
    let mut state = StateVector::initial(cv.n)?;
    evolve_protocol(&mut state, &best_protocol, &cv)?;
    let best_cost = energy(&state, &cv);

    Ok(OptimizationResult {
        best_protocol,
        best_bang_bang: None,
        best_cost,
        cost_trace,
        evaluations,
        converged,
    })
}
