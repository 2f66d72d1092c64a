//! Protocol search: Metropolis annealing over sliced controls, adjoint
//! gradient descent on pulse durations, and the linear-ramp baseline they are
//! measured against.

mod bb;
mod mc;

pub use bb::bb_optimize;
pub use mc::{mc_optimize, MCConfig, Temperature};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SKInstance;
use crate::protocol::{BangBangProtocol, Protocol};
use crate::run::child_seed;
use crate::statevector::{
    default_ramp_steps, energy, evolve_linear_ramp, evolve_protocol, fidelity_error,
    success_probability, StateVector,
};

/// Outcome of one optimization run. `cost_trace` records the best cost seen
/// so far, one entry per sweep (Monte Carlo) or accepted step (gradient), and
/// never increases.
#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub best_protocol: Protocol,
    /// Populated by the duration optimizer; zero-length pulses already merged.
    pub best_bang_bang: Option<BangBangProtocol>,
    pub best_cost: f64,
    pub cost_trace: Vec<f64>,
    pub evaluations: u64,
    pub converged: bool,
}

/// Final-state energy and fidelity errors of the linear ramp g = t/T.
/// `steps` overrides the default time resolution.
pub fn qaa_baseline(inst: &SKInstance, t_total: f64, steps: Option<usize>) -> Result<(f64, f64)> {
    let cv = inst.cost_vector();
    let steps = steps.unwrap_or_else(|| default_ramp_steps(t_total));
    let mut state = StateVector::initial(cv.n)?;
    evolve_linear_ramp(&mut state, t_total, steps, &cv)?;
    Ok((energy(&state, &cv) - cv.ground_energy, fidelity_error(&state, &cv)))
}

/// Which optimizer an ensemble run drives.
#[derive(Debug, Clone)]
pub enum EnsembleMethod {
    Mc(MCConfig),
    Bb { max_pulses: usize, restarts: usize },
    Qaa { steps: Option<usize> },
}

impl EnsembleMethod {
    fn name(&self) -> &'static str {
        match self {
            EnsembleMethod::Mc(_) => "mc",
            EnsembleMethod::Bb { .. } => "bb",
            EnsembleMethod::Qaa { .. } => "qaa",
        }
    }
}

/// Instance ranking used when selecting the best subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RankBy {
    SuccessProb,
    FinalEnergy,
}

#[derive(Debug, Clone, Copy)]
pub enum Selection {
    All,
    /// Keep the k best instances under the configured ranking.
    TopK(usize),
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub n: usize,
    pub t_total: f64,
    pub count: usize,
    pub selection: Selection,
    pub rank_by: RankBy,
    pub method: EnsembleMethod,
    pub master_seed: u64,
}

/// One per-instance line of an ensemble report; mirrors the results CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRow {
    pub instance_seed: u64,
    pub n: usize,
    #[serde(rename = "T")]
    pub t_total: f64,
    pub method: String,
    pub pulses: usize,
    pub final_energy: f64,
    pub energy_error: f64,
    pub fidelity_error: f64,
    pub success_prob: f64,
    pub evaluations: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleReport {
    pub rows: Vec<InstanceRow>,
    /// Optimized protocols aligned with `rows`; None for methods that do not
    /// produce a bang-bang form (Monte Carlo, the ramp baseline).
    pub bang_bang: Vec<Option<BangBangProtocol>>,
    /// Indices into `rows` of the instances the aggregates cover.
    pub selected: Vec<usize>,
    pub mean_success_prob: f64,
    pub mean_energy_error: f64,
    pub mean_fidelity_error: f64,
}

/// Generates `count` instances, optimizes each with its own derived RNG
/// stream, and averages over the selected subset. Jobs run on the thread
/// pool; the seed derivation keys off the job index, so the report does not
/// depend on scheduling.
pub fn instance_ensemble_run(cfg: &EnsembleConfig) -> Result<EnsembleReport> {
    if cfg.count == 0 {
        return Err(Error::InvalidArgument("ensemble count must be at least 1".into()));
    }
    if let Selection::TopK(k) = cfg.selection {
        if k == 0 || k > cfg.count {
            return Err(Error::InvalidArgument(format!(
                "top-k selection needs 1 ≤ k ≤ count, got k={k} count={}",
                cfg.count
            )));
        }
    }
    let outcomes: Result<Vec<(InstanceRow, Option<BangBangProtocol>)>> = (0..cfg.count as u64)
        .into_par_iter()
        .map(|i| run_single(cfg, i))
        .collect();
    let (rows, bang_bang): (Vec<_>, Vec<_>) = outcomes?.into_iter().unzip();

    let mut order: Vec<usize> = (0..rows.len()).collect();
    match cfg.rank_by {
        RankBy::SuccessProb => {
            order.sort_by(|&a, &b| rows[b].success_prob.total_cmp(&rows[a].success_prob))
        }
        RankBy::FinalEnergy => {
            order.sort_by(|&a, &b| rows[a].final_energy.total_cmp(&rows[b].final_energy))
        }
    }
    let mut selected = match cfg.selection {
        Selection::All => order,
        Selection::TopK(k) => order.into_iter().take(k).collect(),
    };
    selected.sort_unstable();

    let m = selected.len() as f64;
    let mean = |f: &dyn Fn(&InstanceRow) -> f64| -> f64 {
        selected.iter().map(|&i| f(&rows[i])).sum::<f64>() / m
    };
    Ok(EnsembleReport {
        mean_success_prob: mean(&|r| r.success_prob),
        mean_energy_error: mean(&|r| r.energy_error),
        mean_fidelity_error: mean(&|r| r.fidelity_error),
        rows,
        bang_bang,
        selected,
    })
}

/// Evaluate an optimizer's chosen protocol on a fresh initial state and fill
/// the per-instance results row. Metrics come from the generic segment
/// propagator, so they are comparable across optimizers.
pub fn result_row(
    inst: &SKInstance,
    t_total: f64,
    method: &str,
    r: &OptimizationResult,
) -> Result<InstanceRow> {
    let cv = inst.cost_vector();
    let pulses = r
        .best_bang_bang
        .as_ref()
        .map(|bb| bb.durations().len())
        .unwrap_or_else(|| r.best_protocol.segments().len());
    let mut state = StateVector::initial(inst.n())?;
    evolve_protocol(&mut state, &r.best_protocol, &cv)?;
    let e = energy(&state, &cv);
    Ok(InstanceRow {
        instance_seed: inst.seed(),
        n: inst.n(),
        t_total,
        method: method.into(),
        pulses,
        final_energy: e,
        energy_error: e - cv.ground_energy,
        fidelity_error: fidelity_error(&state, &cv),
        success_prob: success_probability(&state, &cv),
        evaluations: r.evaluations,
    })
}

fn run_single(
    cfg: &EnsembleConfig,
    index: u64,
) -> Result<(InstanceRow, Option<BangBangProtocol>)> {
    let instance_seed = child_seed(cfg.master_seed, 2 * index);
    let optimizer_seed = child_seed(cfg.master_seed, 2 * index + 1);
    let inst = SKInstance::generate(cfg.n, instance_seed)?;

    let out = match &cfg.method {
        EnsembleMethod::Mc(mc_cfg) => {
            let mut cfg_i = mc_cfg.clone();
            cfg_i.seed = optimizer_seed;
            mc_optimize(&inst, cfg.t_total, &cfg_i)?
        }
        EnsembleMethod::Bb { max_pulses, restarts } => {
            bb_optimize(&inst, cfg.t_total, *max_pulses, *restarts, optimizer_seed)?
        }
        EnsembleMethod::Qaa { steps } => {
            let cv = inst.cost_vector();
            let steps = steps.unwrap_or_else(|| default_ramp_steps(cfg.t_total));
            let mut state = StateVector::initial(cfg.n)?;
            evolve_linear_ramp(&mut state, cfg.t_total, steps, &cv)?;
            let e = energy(&state, &cv);
            let row = InstanceRow {
                instance_seed,
                n: cfg.n,
                t_total: cfg.t_total,
                method: "qaa".into(),
                pulses: steps,
                final_energy: e,
                energy_error: e - cv.ground_energy,
                fidelity_error: fidelity_error(&state, &cv),
                success_prob: success_probability(&state, &cv),
                evaluations: 1,
            };
            return Ok((row, None));
        }
    };

    let row = result_row(&inst, cfg.t_total, cfg.method.name(), &out)?;
    let bb = out.best_bang_bang;
    Ok((row, bb))
}
