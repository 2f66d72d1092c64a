//! White-noise dephasing in both bases:
//! dρ/dt = −i[H,ρ] − (W²/2)Σ_i [[ρ,σ^z_i],σ^z_i] − (W²/2)Σ_i [[ρ,σ^x_i],σ^x_i].
//!
//! Expanding the double commutators with σ² = 1 gives
//! W² Σ_i (σ^z_i ρ σ^z_i − ρ) + W² Σ_i (σ^x_i ρ σ^x_i − ρ), so the z part is
//! an entrywise decay by Hamming distance and the x part a shifted lookup;
//! no dense Hamiltonian ever appears.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::CostVector;
use crate::open_system::{
    evolve_with_step_control, DensityMatrix, OpenEvolution, Schedule, MAX_OPEN_QUBITS,
};

#[derive(Debug, Clone, Copy)]
pub struct DephasingConfig {
    /// Shared noise strength W_b = W_h = W.
    pub w: f64,
    /// Integrator step; halved automatically if invariants break.
    pub step: f64,
}

impl DephasingConfig {
    pub fn new(w: f64) -> Self {
        Self { w, step: 1e-3 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.w >= 0.0) || !self.w.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise strength must be finite and nonnegative, got {}",
                self.w
            )));
        }
        Ok(())
    }
}

/// dρ/dt at control value g, written into `out`.
fn rhs(out: &mut [Complex64], rho: &[Complex64], g: f64, w2: f64, cv: &CostVector) {
    let n = cv.n;
    let dim = cv.dim();
    let hop = 1.0 - g;
    for a in 0..dim {
        for b in 0..dim {
            let r = rho[a * dim + b];
            // −i g (C_a − C_b) ρ_ab
            let mut acc = Complex64::new(0.0, -g * (cv.values[a] - cv.values[b])) * r;
            // −i (1−g) ([B,ρ])_ab with (Bρ)_ab = −Σ_k ρ_{a(k),b}
            if hop != 0.0 {
                let mut comm = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    comm -= rho[(a ^ (1 << k)) * dim + b];
                    comm += rho[a * dim + (b ^ (1 << k))];
                }
                acc += Complex64::new(0.0, -hop) * comm;
            }
            if w2 != 0.0 {
                let d_h = (a ^ b).count_ones() as f64;
                let mut flip = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    flip += rho[(a ^ (1 << k)) * dim + (b ^ (1 << k))];
                }
                acc += w2 * (flip - (2.0 * d_h + n as f64) * r);
            }
            out[a * dim + b] = acc;
        }
    }
}

struct Rk4Workspace {
    k1: Vec<Complex64>,
    k2: Vec<Complex64>,
    k3: Vec<Complex64>,
    k4: Vec<Complex64>,
    stage: Vec<Complex64>,
}

impl Rk4Workspace {
    fn new(len: usize) -> Self {
        let zero = vec![Complex64::new(0.0, 0.0); len];
        Self { k1: zero.clone(), k2: zero.clone(), k3: zero.clone(), k4: zero.clone(), stage: zero }
    }

    /// One classical RK4 step of size h; `g_of` maps the stage offset in
    /// [0, h] to the control value there.
    fn step<G: Fn(f64) -> f64>(
        &mut self,
        rho: &mut [Complex64],
        h: f64,
        g_of: G,
        w2: f64,
        cv: &CostVector,
    ) {
        let half = 0.5 * h;
        rhs(&mut self.k1, rho, g_of(0.0), w2, cv);
        for (s, (r, k)) in self.stage.iter_mut().zip(rho.iter().zip(&self.k1)) {
            *s = *r + half * *k;
        }
        rhs(&mut self.k2, &self.stage, g_of(half), w2, cv);
        for (s, (r, k)) in self.stage.iter_mut().zip(rho.iter().zip(&self.k2)) {
            *s = *r + half * *k;
        }
        rhs(&mut self.k3, &self.stage, g_of(half), w2, cv);
        for (s, (r, k)) in self.stage.iter_mut().zip(rho.iter().zip(&self.k3)) {
            *s = *r + h * *k;
        }
        rhs(&mut self.k4, &self.stage, g_of(h), w2, cv);
        let sixth = h / 6.0;
        for (i, r) in rho.iter_mut().enumerate() {
            *r += sixth * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Noise-averaged evolution of ρ0 through the schedule. The step is halved
/// until trace, Hermiticity, and positivity hold at the final time.
pub fn dephasing_evolve(
    rho0: &DensityMatrix,
    schedule: Schedule,
    cfg: &DephasingConfig,
    cv: &CostVector,
) -> Result<OpenEvolution> {
    cfg.validate()?;
    if cv.n > MAX_OPEN_QUBITS {
        return Err(Error::SizeOutOfRange { n: cv.n, max: MAX_OPEN_QUBITS });
    }
    if rho0.dim() != cv.dim() {
        return Err(Error::DimensionMismatch { got: rho0.dim(), expected: cv.dim() });
    }
    let w2 = cfg.w * cfg.w;
    let total_time = schedule.total_time();
    evolve_with_step_control(cfg.step, total_time, crate::open_system::POSITIVITY_TOL, |step| {
        let mut rho = rho0.clone();
        let mut ws = Rk4Workspace::new(rho.entries().len());
        match schedule {
            Schedule::Protocol(p) => {
                for s in p.segments() {
                    if s.dt == 0.0 {
                        continue;
                    }
                    let nsteps = (s.dt / step).ceil() as usize;
                    let h = s.dt / nsteps as f64;
                    for _ in 0..nsteps {
                        ws.step(&mut rho.rho, h, |_| s.g, w2, cv);
                    }
                }
            }
            Schedule::LinearRamp { t_total } => {
                if t_total > 0.0 {
                    let nsteps = (t_total / step).ceil() as usize;
                    let h = t_total / nsteps as f64;
                    for i in 0..nsteps {
                        let t0 = i as f64 * h;
                        ws.step(&mut rho.rho, h, |off| (t0 + off) / t_total, w2, cv);
                    }
                }
            }
        }
        Ok(rho)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SKInstance;
    use crate::protocol::BangBangProtocol;
    use crate::statevector::{evolve_linear_ramp, evolve_protocol, StateVector};

    fn test_instance(n: usize, seed: u64) -> CostVector {
        SKInstance::generate(n, seed).unwrap().cost_vector()
    }

    #[test]
    fn closed_system_reduction_matches_statevector() {
        let cv = test_instance(3, 14);
        let bb = BangBangProtocol::new(1, vec![0.5, 0.6, 0.4, 0.5]).unwrap();
        let p = bb.to_protocol();
        let rho0 = DensityMatrix::from_pure(&StateVector::initial(3).unwrap()).unwrap();
        let out =
            dephasing_evolve(&rho0, Schedule::Protocol(&p), &DephasingConfig::new(0.0), &cv)
                .unwrap();
        let mut sv = StateVector::initial(3).unwrap();
        evolve_protocol(&mut sv, &p, &cv).unwrap();
        assert!(out.rho.overlap(&sv) > 1.0 - 1e-6, "overlap {}", out.rho.overlap(&sv));
        assert!((out.rho.fidelity_error(&cv) - crate::statevector::fidelity_error(&sv, &cv)).abs() < 1e-6);
    }

    #[test]
    fn ramp_reduction_matches_statevector_ramp() {
        let cv = test_instance(3, 6);
        let rho0 = DensityMatrix::from_pure(&StateVector::initial(3).unwrap()).unwrap();
        let out = dephasing_evolve(
            &rho0,
            Schedule::LinearRamp { t_total: 1.5 },
            &DephasingConfig::new(0.0),
            &cv,
        )
        .unwrap();
        let mut sv = StateVector::initial(3).unwrap();
        evolve_linear_ramp(&mut sv, 1.5, 1500, &cv).unwrap();
        assert!(out.rho.overlap(&sv) > 1.0 - 1e-6);
    }

    #[test]
    fn trace_and_hermiticity_hold_under_noise() {
        let cv = test_instance(4, 9);
        let bb = BangBangProtocol::new(0, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let p = bb.to_protocol();
        let rho0 = DensityMatrix::from_pure(&StateVector::initial(4).unwrap()).unwrap();
        let out =
            dephasing_evolve(&rho0, Schedule::Protocol(&p), &DephasingConfig::new(0.01), &cv)
                .unwrap();
        assert!(out.trace_drift < 1e-6 * 2.0);
        assert!(out.hermiticity < 1e-9);
        assert!(out.min_eigenvalue > -1e-6);
    }

    #[test]
    fn fidelity_error_monotone_in_noise_strength() {
        let cv = test_instance(3, 31);
        let bb = BangBangProtocol::new(1, vec![0.4, 0.5, 0.3, 0.8]).unwrap();
        let p = bb.to_protocol();
        let rho0 = DensityMatrix::from_pure(&StateVector::initial(3).unwrap()).unwrap();
        let mut previous = -1.0;
        for w in [0.0, 1e-3, 3e-3, 1e-2] {
            let out =
                dephasing_evolve(&rho0, Schedule::Protocol(&p), &DephasingConfig::new(w), &cv)
                    .unwrap();
            let err = out.rho.fidelity_error(&cv);
            assert!(
                err >= previous - 1e-10,
                "fidelity error not monotone: {err} after {previous} at W={w}"
            );
            previous = err;
        }
    }

    #[test]
    fn strong_dephasing_flattens_coherences() {
        // With W large and only the noise acting (single g=1 segment where C
        // commutes with the z part), off-diagonals decay fast.
        let cv = test_instance(2, 3);
        let bb = BangBangProtocol::new(1, vec![2.0]).unwrap();
        let p = bb.to_protocol();
        let rho0 = DensityMatrix::from_pure(&StateVector::initial(2).unwrap()).unwrap();
        let out =
            dephasing_evolve(&rho0, Schedule::Protocol(&p), &DephasingConfig::new(1.0), &cv)
                .unwrap();
        for a in 0..4usize {
            for b in 0..4usize {
                if a != b {
                    assert!(out.rho.entry(a, b).norm() < 1e-2);
                }
            }
        }
        // Populations survive pure dephasing in this basis.
        let diag_sum: f64 = (0..4).map(|z| out.rho.entry(z, z).re).sum();
        assert!((diag_sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_negative_noise() {
        let cv = test_instance(3, 1);
        let p = BangBangProtocol::new(1, vec![0.5]).unwrap().to_protocol();
        let rho0 = DensityMatrix::from_pure(&StateVector::initial(3).unwrap()).unwrap();
        let bad = DephasingConfig::new(-0.1);
        assert!(dephasing_evolve(&rho0, Schedule::Protocol(&p), &bad, &cv).is_err());
    }
}
