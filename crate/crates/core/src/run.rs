//! Run plumbing shared by the CLI and the ensemble drivers: deterministic
//! seed derivation, run manifests, and CSV row schemas.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::InstanceRow;
use crate::pontryagin::SwitchingTrace;

/// splitmix64 step; the standard 64-bit mixer.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Child seed for job `index` under a master seed. Distinct indices give
/// independent streams; the mapping is fixed so reruns and resumed sweeps
/// regenerate identical data.
pub fn child_seed(master: u64, index: u64) -> u64 {
    let mut state = master ^ index.wrapping_mul(0xA076_1D64_78BD_642F);
    let first = splitmix64(&mut state);
    splitmix64(&mut state) ^ first.rotate_left(17)
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to reproduce one CLI run byte for byte. One manifest per
/// output directory; a sweep resumes only where the stored manifest agrees
/// with the requested one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full parameter set as given on the command line, flag names as keys.
    pub parameters: serde_json::Value,
    pub master_seed: u64,
    pub version: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, parameters: serde_json::Value, master_seed: u64) -> Self {
        Self {
            command: command.to_string(),
            parameters,
            master_seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_seconds: 0.0,
        }
    }

    /// True when the other manifest describes the same computation. Wall
    /// clock and recorded paths are bookkeeping, not identity.
    pub fn same_run(&self, other: &Self) -> bool {
        self.command == other.command
            && self.parameters == other.parameters
            && self.master_seed == other.master_seed
            && self.version == other.version
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).expect("manifest serialization cannot fail");
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// True when `dir` already holds a manifest for the same computation, which
/// is the green light to reuse outputs found next to it.
pub fn resumable(dir: &Path, wanted: &RunManifest) -> bool {
    RunManifest::load(dir).map(|found| found.same_run(wanted)).unwrap_or(false)
}

pub const RESULTS_HEADER: &str =
    "instance_seed,n,T,method,pulses,final_energy,energy_error,fidelity_error,success_prob,evaluations";

pub fn write_results_csv<W: Write>(mut out: W, rows: &[InstanceRow]) -> Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.instance_seed,
            r.n,
            r.t_total,
            r.method,
            r.pulses,
            r.final_energy,
            r.energy_error,
            r.fidelity_error,
            r.success_prob,
            r.evaluations
        )?;
    }
    Ok(())
}

pub const NOISE_HEADER: &str =
    "protocol_id,model,W_or_eta,beta,T,fidelity_error,energy_error,trace_drift,min_eigenvalue";

/// One open-system evolution outcome. `beta` is empty for models without a
/// temperature.
#[derive(Debug, Clone)]
pub struct NoiseRow {
    pub protocol_id: String,
    pub model: String,
    pub w_or_eta: f64,
    pub beta: Option<f64>,
    pub t_total: f64,
    pub fidelity_error: f64,
    pub energy_error: f64,
    pub trace_drift: f64,
    pub min_eigenvalue: f64,
}

pub fn write_noise_csv<W: Write>(mut out: W, rows: &[NoiseRow]) -> Result<()> {
    writeln!(out, "{NOISE_HEADER}")?;
    for r in rows {
        let beta = r.beta.map(|b| b.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.protocol_id,
            r.model,
            r.w_or_eta,
            beta,
            r.t_total,
            r.fidelity_error,
            r.energy_error,
            r.trace_drift,
            r.min_eigenvalue
        )?;
    }
    Ok(())
}

pub const TRACE_HEADER: &str = "time,phi,g";

pub fn write_trace_csv<W: Write>(mut out: W, trace: &SwitchingTrace) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for i in 0..trace.times.len() {
        writeln!(out, "{},{},{}", trace.times[i], trace.phi[i], trace.g[i])?;
    }
    Ok(())
}

/// CSV field values must not smuggle in separators; all our fields are
/// numbers or fixed labels, so reject rather than quote.
pub fn check_csv_field(s: &str) -> Result<()> {
    if s.contains(',') || s.contains('\n') || s.contains('"') {
        return Err(Error::InvalidArgument(format!("CSV-unsafe field: {s:?}")));
    }
    Ok(())
}
