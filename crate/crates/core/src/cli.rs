//! Command-line driver. Every command that writes an output directory drops
//! a manifest there; identical manifests reproduce identical data bytes, and
//! a sweep resumes from whatever combo artifacts already match its manifest.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CostVector, SKInstance};
use crate::open_system::{
    dephasing_evolve, redfield_evolve, DensityMatrix, DephasingConfig, OpenEvolution,
    RedfieldConfig, Schedule, MAX_OPEN_QUBITS,
};
use crate::optimize::{
    bb_optimize, instance_ensemble_run, mc_optimize, result_row, EnsembleConfig, EnsembleMethod,
    InstanceRow, MCConfig, RankBy, Selection,
};
use crate::pontryagin::{certify_with_trace, switching_trace, CertifyConfig, CertifyReport, Verdict};
use crate::protocol::{BangBangProtocol, LoadedProtocol};
use crate::run::{
    child_seed, check_csv_field, resumable, write_noise_csv, write_results_csv, write_trace_csv,
    NoiseRow, RunManifest, MANIFEST_FILE,
};
use crate::statevector::{
    default_ramp_steps, energy, evolve_linear_ramp, evolve_protocol, fidelity_error,
    success_probability, StateVector,
};
use crate::stats::{collect_durations, comparison_table, Method, MethodResult, PulseFilter};

#[derive(Parser)]
#[command(name = "pulseopt", version, about = "Bang-bang control pipelines for random spin glasses")]
struct Cli {
    /// Worker threads for ensemble jobs; 0 keeps one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a batch of random instances.
    Gen(GenArgs),
    /// Optimize a protocol for one instance.
    Optimize(OptimizeArgs),
    /// Evolve an instance under a protocol and report final-state metrics.
    Evolve(EvolveArgs),
    /// First-order optimality certificate for a protocol.
    Certify(CertifyArgs),
    /// Linear-ramp baseline as a results row.
    Qaa(QaaArgs),
    /// Run a declarative experiment grid down to aggregated CSVs.
    Sweep(SweepArgs),
    /// Pool pulse durations from protocols into a histogram CSV.
    Hist(HistArgs),
}

/// Entry point for the binary; returns the process exit code.
/// 0 success, 2 usage or input errors, 3 invariant violations in simulation.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads > 0 {
        // Second initializations in one process fail; the pool keeps working.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => cmd_gen(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Evolve(a) => cmd_evolve(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Qaa(a) => cmd_qaa(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Hist(a) => cmd_hist(a),
    }
}

fn write_output(
    dir: &Path,
    name: &str,
    contents: impl AsRef<[u8]>,
    manifest: &mut RunManifest,
) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    manifest.outputs.push(name.to_string());
    Ok(())
}

fn verdict_label(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::PossiblySingular => "possibly_singular",
    }
}

#[derive(Args)]
struct GenArgs {
    /// Qubit count.
    #[arg(long)]
    n: usize,
    /// How many instances.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Master seed; instance i draws from the derived stream (seed, i).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let started = Instant::now();
    let mut manifest =
        RunManifest::new("gen", serde_json::json!({ "n": a.n, "count": a.count }), a.seed);
    fs::create_dir_all(&a.out)?;
    for i in 0..a.count {
        let s = child_seed(a.seed, i as u64);
        let inst = SKInstance::generate(a.n, s)?;
        let name = format!("inst-n{}-s{}-i{}.json", a.n, s, i);
        inst.save(&a.out.join(&name))?;
        manifest.outputs.push(name);
    }
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.save(&a.out)?;
    println!("wrote {} instances to {}", a.count, a.out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Mc,
    Bb,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Instance JSON.
    instance: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Total evolution time.
    #[arg(long = "T")]
    t_total: f64,
    /// Optimizer seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also emit the optimality certificate and its switching-function trace.
    #[arg(long)]
    certify: bool,
    /// Pulse budget (bb).
    #[arg(long, default_value_t = 40)]
    max_pulses: usize,
    /// Random restarts (bb).
    #[arg(long, default_value_t = 4)]
    restarts: usize,
    /// Slice count (mc).
    #[arg(long)]
    slices: Option<usize>,
    /// Sweep budget (mc).
    #[arg(long, default_value_t = 600)]
    sweeps: usize,
}

/// Certificate plus the bisection-refined zeros of the switching function.
#[derive(Serialize)]
struct CertifyOutput<'a> {
    #[serde(flatten)]
    report: &'a CertifyReport,
    phi_zeros: &'a [f64],
}

fn cmd_optimize(a: OptimizeArgs) -> Result<()> {
    let started = Instant::now();
    let inst = SKInstance::load(&a.instance)?;
    let cv = inst.cost_vector();
    let method = match a.method {
        MethodArg::Mc => "mc",
        MethodArg::Bb => "bb",
    };
    let result = match a.method {
        MethodArg::Mc => {
            let mut cfg = MCConfig { sweeps: a.sweeps, seed: a.seed, ..MCConfig::default() };
            if let Some(s) = a.slices {
                cfg.slices = s;
            }
            mc_optimize(&inst, a.t_total, &cfg)?
        }
        MethodArg::Bb => bb_optimize(&inst, a.t_total, a.max_pulses, a.restarts, a.seed)?,
    };
    let row = result_row(&inst, a.t_total, method, &result)?;

    fs::create_dir_all(&a.out)?;
    let mut manifest = RunManifest::new(
        "optimize",
        serde_json::json!({
            "method": method,
            "T": a.t_total,
            "max_pulses": a.max_pulses,
            "restarts": a.restarts,
            "slices": a.slices,
            "sweeps": a.sweeps,
            "certify": a.certify,
        }),
        a.seed,
    );
    manifest.inputs.push(a.instance.display().to_string());

    let protocol_json = match &result.best_bang_bang {
        Some(bb) => bb.to_json(),
        None => result.best_protocol.to_json(),
    };
    write_output(&a.out, "protocol.json", protocol_json + "\n", &mut manifest)?;
    let mut csv = Vec::new();
    write_results_csv(&mut csv, std::slice::from_ref(&row))?;
    write_output(&a.out, "result.csv", csv, &mut manifest)?;

    if a.certify {
        let cfg = CertifyConfig::default();
        let trace = switching_trace(&result.best_protocol, &cv, cfg.grid_per_unit_time)?;
        let report = certify_with_trace(&trace, &result.best_protocol, &cfg)?;
        let mut tcsv = Vec::new();
        write_trace_csv(&mut tcsv, &trace)?;
        write_output(&a.out, "trace.csv", tcsv, &mut manifest)?;
        let cert = CertifyOutput { report: &report, phi_zeros: &trace.switch_times };
        write_output(
            &a.out,
            "certificate.json",
            serde_json::to_string_pretty(&cert)? + "\n",
            &mut manifest,
        )?;
        println!("certificate verdict: {}", verdict_label(report.verdict));
    }
    println!(
        "{} cost {:.6} with {} pulses ({} evaluations)",
        method, result.best_cost, row.pulses, row.evaluations
    );
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.save(&a.out)?;
    Ok(())
}

#[derive(Args)]
struct EvolveArgs {
    /// Instance JSON.
    instance: PathBuf,
    /// Protocol JSON (segment or pulse form).
    protocol: PathBuf,
    /// Dephasing noise strength W; mutually exclusive with --redfield.
    #[arg(long, value_name = "W", conflicts_with = "redfield")]
    dephasing: Option<f64>,
    /// Ohmic bath coupling and inverse temperature.
    #[arg(long, num_args = 2, value_names = ["ETA", "BETA"])]
    redfield: Option<Vec<f64>>,
    /// Integrator step override for the noisy models.
    #[arg(long)]
    step: Option<f64>,
    /// Metrics JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvolveReport {
    n: usize,
    #[serde(rename = "T")]
    t_total: f64,
    model: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    final_energy: f64,
    energy_error: f64,
    fidelity_error: f64,
    success_prob: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    norm_drift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_drift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hermiticity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_eigenvalue: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    step_used: Option<f64>,
}

fn open_report(
    out: &OpenEvolution,
    cv: &CostVector,
    t_total: f64,
    model: &'static str,
    w: Option<f64>,
    eta: Option<f64>,
    beta: Option<f64>,
) -> EvolveReport {
    let e = out.rho.energy(cv);
    EvolveReport {
        n: cv.n,
        t_total,
        model,
        w,
        eta,
        beta,
        final_energy: e,
        energy_error: e - cv.ground_energy,
        fidelity_error: out.rho.fidelity_error(cv),
        success_prob: out.rho.success_probability(cv),
        norm_drift: None,
        trace_drift: Some(out.trace_drift),
        hermiticity: Some(out.hermiticity),
        min_eigenvalue: Some(out.min_eigenvalue),
        step_used: Some(out.step_used),
    }
}

fn cmd_evolve(a: EvolveArgs) -> Result<()> {
    let inst = SKInstance::load(&a.instance)?;
    let cv = inst.cost_vector();
    let protocol = LoadedProtocol::load(&a.protocol)?.to_protocol();
    let t_total = protocol.total_time();

    let report = if let Some(w) = a.dephasing {
        let mut cfg = DephasingConfig::new(w);
        if let Some(s) = a.step {
            cfg.step = s;
        }
        let rho0 = DensityMatrix::from_pure(&StateVector::initial(cv.n)?)?;
        let out = dephasing_evolve(&rho0, Schedule::Protocol(&protocol), &cfg, &cv)?;
        open_report(&out, &cv, t_total, "dephasing", Some(w), None, None)
    } else if let Some(pair) = &a.redfield {
        let mut cfg = RedfieldConfig::new(pair[0], pair[1]);
        if let Some(s) = a.step {
            cfg.step = s;
        }
        let rho0 = DensityMatrix::from_pure(&StateVector::initial(cv.n)?)?;
        let out = redfield_evolve(&rho0, Schedule::Protocol(&protocol), &cfg, &cv)?;
        open_report(&out, &cv, t_total, "redfield", None, Some(pair[0]), Some(pair[1]))
    } else {
        let mut state = StateVector::initial(cv.n)?;
        evolve_protocol(&mut state, &protocol, &cv)?;
        let e = energy(&state, &cv);
        EvolveReport {
            n: cv.n,
            t_total,
            model: "closed",
            w: None,
            eta: None,
            beta: None,
            final_energy: e,
            energy_error: e - cv.ground_energy,
            fidelity_error: fidelity_error(&state, &cv),
            success_prob: success_probability(&state, &cv),
            norm_drift: Some((state.norm() - 1.0).abs()),
            trace_drift: None,
            hermiticity: None,
            min_eigenvalue: None,
            step_used: None,
        }
    };
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(Args)]
struct CertifyArgs {
    /// Instance JSON.
    instance: PathBuf,
    /// Protocol JSON.
    protocol: PathBuf,
    /// Output directory for certificate.json and trace.csv.
    #[arg(long)]
    out: PathBuf,
    /// Switching-function samples per unit time.
    #[arg(long, default_value_t = 1000)]
    grid: usize,
}

fn cmd_certify(a: CertifyArgs) -> Result<()> {
    let started = Instant::now();
    let inst = SKInstance::load(&a.instance)?;
    let cv = inst.cost_vector();
    let protocol = LoadedProtocol::load(&a.protocol)?.to_protocol();
    let cfg = CertifyConfig { grid_per_unit_time: a.grid, ..CertifyConfig::default() };
    let trace = switching_trace(&protocol, &cv, cfg.grid_per_unit_time)?;
    let report = certify_with_trace(&trace, &protocol, &cfg)?;

    fs::create_dir_all(&a.out)?;
    let mut manifest = RunManifest::new("certify", serde_json::json!({ "grid": a.grid }), 0);
    manifest.inputs.push(a.instance.display().to_string());
    manifest.inputs.push(a.protocol.display().to_string());
    let cert = CertifyOutput { report: &report, phi_zeros: &trace.switch_times };
    write_output(
        &a.out,
        "certificate.json",
        serde_json::to_string_pretty(&cert)? + "\n",
        &mut manifest,
    )?;
    let mut tcsv = Vec::new();
    write_trace_csv(&mut tcsv, &trace)?;
    write_output(&a.out, "trace.csv", tcsv, &mut manifest)?;
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.save(&a.out)?;
    // The verdict is the report's content, not a process failure.
    println!(
        "verdict: {} (max switch residual {:.3e} of max |phi| {:.3e})",
        verdict_label(report.verdict),
        report.max_switch_residual_rel,
        report.max_abs_phi
    );
    Ok(())
}

#[derive(Args)]
struct QaaArgs {
    /// Instance JSON.
    instance: PathBuf,
    /// Total ramp time.
    #[arg(long = "T")]
    t_total: f64,
    /// Trotter steps; defaults to a resolution matched to T.
    #[arg(long)]
    steps: Option<usize>,
    /// Results CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_qaa(a: QaaArgs) -> Result<()> {
    let inst = SKInstance::load(&a.instance)?;
    let cv = inst.cost_vector();
    let steps = a.steps.unwrap_or_else(|| default_ramp_steps(a.t_total));
    let mut state = StateVector::initial(cv.n)?;
    evolve_linear_ramp(&mut state, a.t_total, steps, &cv)?;
    let e = energy(&state, &cv);
    let row = InstanceRow {
        instance_seed: inst.seed(),
        n: cv.n,
        t_total: a.t_total,
        method: "qaa".into(),
        pulses: steps,
        final_energy: e,
        energy_error: e - cv.ground_energy,
        fidelity_error: fidelity_error(&state, &cv),
        success_prob: success_probability(&state, &cv),
        evaluations: 1,
    };
    let mut csv = Vec::new();
    write_results_csv(&mut csv, std::slice::from_ref(&row))?;
    match &a.out {
        Some(p) => fs::write(p, csv)?,
        None => std::io::stdout().write_all(&csv)?,
    }
    Ok(())
}

fn default_max_pulses() -> usize {
    40
}
fn default_restarts() -> usize {
    2
}
fn default_sweeps() -> usize {
    600
}
fn default_bin_width() -> f64 {
    0.05
}

/// Declarative grid: every (n, T, method) combination becomes one ensemble
/// job. Instances are keyed by n alone, so methods and total times see the
/// same disorder realizations and comparisons pair up instance by instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub n: Vec<usize>,
    #[serde(rename = "T")]
    pub t: Vec<f64>,
    pub count: usize,
    /// Any of "mc", "bb", "qaa".
    pub methods: Vec<String>,
    /// Dephasing strengths each stored protocol is evolved under.
    #[serde(default)]
    pub dephasing_w: Vec<f64>,
    /// Ohmic couplings; each pairs with `beta`.
    #[serde(default)]
    pub redfield_eta: Vec<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Restrict aggregates to the best k instances per combo.
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default = "default_max_pulses")]
    pub max_pulses: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub slices: Option<usize>,
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    #[serde(default)]
    pub qaa_steps: Option<usize>,
    #[serde(default = "default_bin_width")]
    pub bin_width: f64,
    /// Integrator step override for the noisy models.
    #[serde(default)]
    pub open_step: Option<f64>,
}

/// Persisted per-combo state: enough to rebuild every aggregate without
/// rerunning the optimizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComboArtifact {
    pub n: usize,
    #[serde(rename = "T")]
    pub t_total: f64,
    pub method: String,
    pub master_seed: u64,
    pub rows: Vec<InstanceRow>,
    pub selected: Vec<usize>,
    pub protocols: Vec<Option<BangBangProtocol>>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep grid JSON.
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Master seed override; defaults to the config's seed field.
    #[arg(long)]
    seed: Option<u64>,
}

fn validate_sweep(cfg: &SweepConfig) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidArgument(msg));
    if cfg.n.is_empty() || cfg.t.is_empty() || cfg.methods.is_empty() {
        return bad("sweep grid needs at least one n, T, and method".into());
    }
    for &t in &cfg.t {
        if !(t > 0.0) || !t.is_finite() {
            return bad(format!("total time must be positive and finite, got {t}"));
        }
    }
    if cfg.count == 0 {
        return bad("count must be at least 1".into());
    }
    for m in &cfg.methods {
        if !matches!(m.as_str(), "mc" | "bb" | "qaa") {
            return bad(format!("unknown method {m:?}; expected mc, bb, or qaa"));
        }
        if cfg.methods.iter().filter(|x| *x == m).count() > 1 {
            return bad(format!("method {m:?} listed twice"));
        }
    }
    if let Some(k) = cfg.top_k {
        if k == 0 || k > cfg.count {
            return bad(format!("top_k must lie in 1..=count, got {k}"));
        }
    }
    if !(cfg.bin_width > 0.0) || !cfg.bin_width.is_finite() {
        return bad(format!("bin width must be positive, got {}", cfg.bin_width));
    }
    let noisy = !cfg.dephasing_w.is_empty() || !cfg.redfield_eta.is_empty();
    if noisy {
        if let Some(&n) = cfg.n.iter().find(|&&n| n > MAX_OPEN_QUBITS) {
            return bad(format!(
                "noise models hold dense density matrices; n={n} exceeds the limit {MAX_OPEN_QUBITS}"
            ));
        }
    }
    if !cfg.redfield_eta.is_empty() && cfg.beta.is_none() {
        return bad("redfield_eta needs beta".into());
    }
    Ok(())
}

#[derive(Clone, Copy)]
struct NoiseSetting {
    model: &'static str,
    w_or_eta: f64,
    beta: Option<f64>,
}

fn noise_settings(cfg: &SweepConfig) -> Vec<NoiseSetting> {
    let mut out = Vec::new();
    for &w in &cfg.dephasing_w {
        out.push(NoiseSetting { model: "dephasing", w_or_eta: w, beta: None });
    }
    for &eta in &cfg.redfield_eta {
        out.push(NoiseSetting { model: "redfield", w_or_eta: eta, beta: cfg.beta });
    }
    out
}

fn run_combo(
    cfg: &SweepConfig,
    n: usize,
    t: f64,
    method: &str,
    master: u64,
) -> Result<ComboArtifact> {
    let m = match method {
        "mc" => {
            let mut mc = MCConfig { sweeps: cfg.sweeps, ..MCConfig::default() };
            if let Some(s) = cfg.slices {
                mc.slices = s;
            }
            EnsembleMethod::Mc(mc)
        }
        "bb" => EnsembleMethod::Bb { max_pulses: cfg.max_pulses, restarts: cfg.restarts },
        _ => EnsembleMethod::Qaa { steps: cfg.qaa_steps },
    };
    let report = instance_ensemble_run(&EnsembleConfig {
        n,
        t_total: t,
        count: cfg.count,
        selection: match cfg.top_k {
            Some(k) => Selection::TopK(k),
            None => Selection::All,
        },
        rank_by: RankBy::SuccessProb,
        method: m,
        master_seed: master,
    })?;
    Ok(ComboArtifact {
        n,
        t_total: t,
        method: method.to_string(),
        master_seed: master,
        rows: report.rows,
        selected: report.selected,
        protocols: report.bang_bang,
    })
}

/// Per-instance noise evolutions for one combo. Bang-bang combos evolve their
/// stored protocols; the ramp baseline evolves the matching linear schedule.
/// Monte Carlo protocols are not persisted, so they are skipped.
fn combo_noise(
    cfg: &SweepConfig,
    art: &ComboArtifact,
    settings: &[NoiseSetting],
) -> Result<Vec<(NoiseRow, MethodResult)>> {
    let method = match art.method.as_str() {
        "bb" => Method::BangBang,
        "qaa" => Method::Qaa,
        _ => return Ok(Vec::new()),
    };
    let idxs: Vec<usize> = match method {
        Method::BangBang => art
            .protocols
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.is_some().then_some(i))
            .collect(),
        Method::Qaa => (0..art.rows.len()).collect(),
    };
    let per_instance: Result<Vec<Vec<(NoiseRow, MethodResult)>>> = idxs
        .into_par_iter()
        .map(|i| {
            let row = &art.rows[i];
            let inst = SKInstance::generate(art.n, row.instance_seed)?;
            let cv = inst.cost_vector();
            let rho0 = DensityMatrix::from_pure(&StateVector::initial(art.n)?)?;
            let proto = art.protocols[i].as_ref().map(|bb| bb.to_protocol());
            let mut out = Vec::with_capacity(settings.len());
            for s in settings {
                let schedule = match &proto {
                    Some(p) => Schedule::Protocol(p),
                    None => Schedule::LinearRamp { t_total: art.t_total },
                };
                let (evolved, noise_tag) = match s.model {
                    "dephasing" => {
                        let mut c = DephasingConfig::new(s.w_or_eta);
                        if let Some(step) = cfg.open_step {
                            c.step = step;
                        }
                        (
                            dephasing_evolve(&rho0, schedule, &c, &cv)?,
                            format!("dephasing W={}", s.w_or_eta),
                        )
                    }
                    _ => {
                        let beta = s.beta.expect("validated");
                        let mut c = RedfieldConfig::new(s.w_or_eta, beta);
                        if let Some(step) = cfg.open_step {
                            c.step = step;
                        }
                        (
                            redfield_evolve(&rho0, schedule, &c, &cv)?,
                            format!("redfield eta={} beta={beta}", s.w_or_eta),
                        )
                    }
                };
                let e = evolved.rho.energy(&cv);
                let fid_err = evolved.rho.fidelity_error(&cv);
                let energy_err = e - cv.ground_energy;
                out.push((
                    NoiseRow {
                        protocol_id: format!(
                            "{}-n{}-T{}-i{}",
                            art.method, art.n, art.t_total, i
                        ),
                        model: s.model.to_string(),
                        w_or_eta: s.w_or_eta,
                        beta: s.beta,
                        t_total: art.t_total,
                        fidelity_error: fid_err,
                        energy_error: energy_err,
                        trace_drift: evolved.trace_drift,
                        min_eigenvalue: evolved.min_eigenvalue,
                    },
                    MethodResult {
                        instance_seed: row.instance_seed,
                        t_total: art.t_total,
                        noise: noise_tag,
                        method,
                        fidelity_error: fid_err,
                        energy_error: energy_err,
                    },
                ));
            }
            Ok(out)
        })
        .collect();
    Ok(per_instance?.into_iter().flatten().collect())
}

const COMPARISON_HEADER: &str = "n,T,noise,pairs,bb_fidelity_error,qaa_fidelity_error,\
fidelity_ratio,bb_energy_error,qaa_energy_error,energy_ratio";

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg: SweepConfig = serde_json::from_str(&fs::read_to_string(&a.config)?)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    validate_sweep(&cfg)?;

    let mut manifest = RunManifest::new("sweep", serde_json::to_value(&cfg)?, cfg.seed);
    manifest.inputs.push(a.config.display().to_string());
    if a.out.join(MANIFEST_FILE).exists() && !resumable(&a.out, &manifest) {
        return Err(Error::InvalidArgument(format!(
            "{} holds outputs of a different run; use a fresh directory",
            a.out.display()
        )));
    }
    fs::create_dir_all(&a.out)?;
    // Saved before the jobs so an interrupted run can resume against it.
    manifest.save(&a.out)?;

    let mut artifacts: Vec<ComboArtifact> = Vec::new();
    for (n_index, &n) in cfg.n.iter().enumerate() {
        // Instances keyed by n alone: see SweepConfig.
        let master = child_seed(cfg.seed, n_index as u64);
        for &t in &cfg.t {
            for method in &cfg.methods {
                let name = format!("combo-{method}-n{n}-T{t}.json");
                let path = a.out.join(&name);
                let artifact: ComboArtifact = if path.exists() {
                    serde_json::from_str(&fs::read_to_string(&path)?)?
                } else {
                    let art = run_combo(&cfg, n, t, method, master)?;
                    let tmp = a.out.join(format!("{name}.tmp"));
                    fs::write(&tmp, serde_json::to_string_pretty(&art)? + "\n")?;
                    fs::rename(&tmp, &path)?;
                    art
                };
                manifest.outputs.push(name);
                artifacts.push(artifact);
            }
        }
    }

    // Aggregates are rebuilt from artifacts every run; they are cheap
    // relative to the optimizations and this keeps resume logic trivial.
    let all_rows: Vec<InstanceRow> =
        artifacts.iter().flat_map(|a| a.rows.iter().cloned()).collect();
    let mut csv = Vec::new();
    write_results_csv(&mut csv, &all_rows)?;
    write_output(&a.out, "results.csv", csv, &mut manifest)?;

    for art in artifacts.iter().filter(|a| a.method == "bb") {
        let protos: Vec<BangBangProtocol> =
            art.protocols.iter().flatten().cloned().collect();
        if protos.is_empty() {
            continue;
        }
        let hist = collect_durations(&protos, art.n, cfg.bin_width, PulseFilter::All)?;
        let mut csv = Vec::new();
        hist.write_csv(&mut csv)?;
        write_output(
            &a.out,
            &format!("hist-n{}-T{}.csv", art.n, art.t_total),
            csv,
            &mut manifest,
        )?;
    }

    let settings = noise_settings(&cfg);
    let mut method_results: Vec<(usize, MethodResult)> = Vec::new();
    for art in &artifacts {
        let m = match art.method.as_str() {
            "bb" => Method::BangBang,
            "qaa" => Method::Qaa,
            _ => continue,
        };
        for row in &art.rows {
            method_results.push((
                art.n,
                MethodResult {
                    instance_seed: row.instance_seed,
                    t_total: art.t_total,
                    noise: "closed".to_string(),
                    method: m,
                    fidelity_error: row.fidelity_error,
                    energy_error: row.energy_error,
                },
            ));
        }
    }
    if !settings.is_empty() {
        let mut noise_rows = Vec::new();
        for art in &artifacts {
            for (noise_row, mr) in combo_noise(&cfg, art, &settings)? {
                noise_rows.push(noise_row);
                method_results.push((art.n, mr));
            }
        }
        let mut csv = Vec::new();
        write_noise_csv(&mut csv, &noise_rows)?;
        write_output(&a.out, "noise.csv", csv, &mut manifest)?;
    }

    let both = ["bb", "qaa"].iter().all(|m| cfg.methods.iter().any(|x| x == m));
    if both {
        let mut csv = String::from(COMPARISON_HEADER);
        csv.push('\n');
        for &n in &cfg.n {
            let group: Vec<MethodResult> = method_results
                .iter()
                .filter(|(rn, _)| *rn == n)
                .map(|(_, r)| r.clone())
                .collect();
            for row in comparison_table(&group)? {
                check_csv_field(&row.noise)?;
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    n,
                    row.t_total,
                    row.noise,
                    row.pairs,
                    row.bb_fidelity_error,
                    row.qaa_fidelity_error,
                    row.fidelity_ratio,
                    row.bb_energy_error,
                    row.qaa_energy_error,
                    row.energy_ratio,
                ));
            }
        }
        write_output(&a.out, "comparison.csv", csv, &mut manifest)?;
    }

    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.save(&a.out)?;
    println!(
        "sweep complete: {} combos, outputs in {}",
        artifacts.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PoolArg {
    All,
    G0,
    G1,
}

#[derive(Args)]
struct HistArgs {
    /// Combo artifacts from a sweep, or bang-bang protocol JSON files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    bin_width: f64,
    /// Which pulses enter the pool.
    #[arg(long, value_enum, default_value_t = PoolArg::All)]
    pool: PoolArg,
    /// Qubit count label for bare protocol files; artifacts carry their own.
    #[arg(long)]
    n: Option<usize>,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_hist(a: HistArgs) -> Result<()> {
    let mut protos: Vec<BangBangProtocol> = Vec::new();
    let mut n_seen: Option<usize> = None;
    for path in &a.inputs {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("protocols").is_some() {
            let art: ComboArtifact = serde_json::from_str(&text)?;
            match n_seen {
                Some(n) if n != art.n => {
                    return Err(Error::InvalidArgument(format!(
                        "cannot pool sizes {n} and {}",
                        art.n
                    )))
                }
                _ => n_seen = Some(art.n),
            }
            protos.extend(art.protocols.into_iter().flatten());
        } else {
            match LoadedProtocol::from_json(&text)? {
                LoadedProtocol::BangBang(p) => protos.push(p),
                LoadedProtocol::Segments(_) => {
                    return Err(Error::InvalidArgument(format!(
                        "{} is not in pulse form; duration pooling needs explicit pulses",
                        path.display()
                    )))
                }
            }
        }
    }
    let n = match (n_seen, a.n) {
        (Some(n), Some(flag)) if n != flag => {
            return Err(Error::InvalidArgument(format!(
                "--n {flag} conflicts with artifact size {n}"
            )))
        }
        (Some(n), _) => n,
        (None, Some(flag)) => flag,
        (None, None) => {
            return Err(Error::InvalidArgument(
                "--n is required when no input carries a size".into(),
            ))
        }
    };
    let filter = match a.pool {
        PoolArg::All => PulseFilter::All,
        PoolArg::G0 => PulseFilter::OnlyG0,
        PoolArg::G1 => PulseFilter::OnlyG1,
    };
    let hist = collect_durations(&protos, n, a.bin_width, filter)?;
    let mut csv = Vec::new();
    hist.write_csv(&mut csv)?;
    match &a.out {
        Some(p) => fs::write(p, csv)?,
        None => std::io::stdout().write_all(&csv)?,
    }
    Ok(())
}
