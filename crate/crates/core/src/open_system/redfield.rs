//! Redfield relaxation against an Ohmic bath coupled through each σ^z_i.
//!
//! Work happens in the instantaneous eigenbasis of H(g). With A_i the
//! coupling operator rotated into that basis and Λ_i its half-Fourier
//! weighting by the bath spectrum, the generator is
//!   dρ/dt = −i(ε_a−ε_b)ρ_ab + Σ_i ([Λ_i ρ, A_i] + [A_i, ρ Λ_i†]),
//! whose fixed point at constant H is the Gibbs state e^{−βH}/Z.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{dense_hamiltonian, eigh};
use crate::model::{spin, CostVector};
use crate::open_system::{
    evolve_with_step_control, DensityMatrix, OpenEvolution, Schedule, MAX_OPEN_QUBITS,
};

#[derive(Debug, Clone, Copy)]
pub struct RedfieldConfig {
    /// Ohmic coupling strength (dimensionless, per qubit).
    pub eta: f64,
    /// Inverse bath temperature.
    pub beta: f64,
    /// Integrator step; halved automatically if invariants break.
    pub step: f64,
}

impl RedfieldConfig {
    pub fn new(eta: f64, beta: f64) -> Self {
        Self { eta, beta, step: 1e-3 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "coupling strength must be finite and nonnegative, got {}",
                self.eta
            )));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "inverse temperature must be finite and positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Ohmic bath spectrum S(ω) = ηω/(1 − e^{−βω}), continued through ω = 0
/// where it equals η/β. Satisfies detailed balance S(ω) = e^{βω} S(−ω).
pub fn spectral_density(omega: f64, cfg: &RedfieldConfig) -> f64 {
    let x = cfg.beta * omega;
    if x.abs() < 1e-10 {
        cfg.eta / cfg.beta
    } else {
        cfg.eta * omega / (-(-x).exp_m1())
    }
}

/// Everything fixed for one stretch of constant H(g): eigendecomposition and
/// the rotated coupling operators with their bath-weighted partners.
struct Frame {
    values: Vec<f64>,
    vectors: DMatrix<Complex64>,
    a_ops: Vec<DMatrix<Complex64>>,
    lambda: Vec<DMatrix<Complex64>>,
    lambda_dag: Vec<DMatrix<Complex64>>,
    /// A_i Λ_i and Λ_i† A_i, precomputed for the commutator expansion.
    al: Vec<DMatrix<Complex64>>,
    la: Vec<DMatrix<Complex64>>,
}

impl Frame {
    fn build(cv: &CostVector, g: f64, cfg: &RedfieldConfig) -> Result<Self> {
        let dim = cv.dim();
        let h = dense_hamiltonian(cv, g);
        let eig = eigh(&h)?;
        let (values, vectors) = (eig.values, eig.vectors);
        let n = cv.n;
        let mut a_ops = Vec::with_capacity(n);
        let mut lambda = Vec::with_capacity(n);
        let mut lambda_dag = Vec::with_capacity(n);
        let mut al = Vec::with_capacity(n);
        let mut la = Vec::with_capacity(n);
        for i in 0..n {
            // σ^z_i is diagonal in the computational basis, so rotating it
            // means scaling the rows of V before the adjoint product.
            let mut scaled = vectors.clone();
            for z in 0..dim {
                let s = spin(z, i);
                for b in 0..dim {
                    scaled[(z, b)] *= s;
                }
            }
            let a = vectors.adjoint() * &scaled;
            let mut l = a.clone();
            for row in 0..dim {
                for col in 0..dim {
                    l[(row, col)] *= 0.5 * spectral_density(values[col] - values[row], cfg);
                }
            }
            let ld = l.adjoint();
            al.push(&a * &l);
            la.push(&ld * &a);
            a_ops.push(a);
            lambda.push(l);
            lambda_dag.push(ld);
        }
        Ok(Self { values, vectors, a_ops, lambda, lambda_dag, al, la })
    }

    fn into_basis(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        self.vectors.adjoint() * rho * &self.vectors
    }

    fn from_basis(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        &self.vectors * rho * self.vectors.adjoint()
    }

    fn rhs(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let dim = rho.nrows();
        let mut out = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
        for a in 0..dim {
            for b in 0..dim {
                out[(a, b)] =
                    Complex64::new(0.0, -(self.values[a] - self.values[b])) * rho[(a, b)];
            }
        }
        for i in 0..self.a_ops.len() {
            // [Λρ, A] + [A, ρΛ†] = ΛρA − AΛρ + AρΛ† − ρΛ†A
            out += &self.lambda[i] * rho * &self.a_ops[i];
            out += &self.a_ops[i] * rho * &self.lambda_dag[i];
            out -= &self.al[i] * rho;
            out -= rho * &self.la[i];
        }
        out
    }

    fn rk4_step(&self, rho: &mut DMatrix<Complex64>, h: f64) {
        let k1 = self.rhs(rho);
        let k2 = self.rhs(&(&*rho + &k1 * Complex64::new(0.5 * h, 0.0)));
        let k3 = self.rhs(&(&*rho + &k2 * Complex64::new(0.5 * h, 0.0)));
        let k4 = self.rhs(&(&*rho + &k3 * Complex64::new(h, 0.0)));
        *rho += (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4)
            * Complex64::new(h / 6.0, 0.0);
    }
}

/// Evolution of ρ0 through the schedule under the Redfield generator.
/// Constant-g stretches share one eigenframe; ramps rebuild it per step at
/// the midpoint control value. The step is halved until trace, Hermiticity,
/// and positivity hold at the final time.
pub fn redfield_evolve(
    rho0: &DensityMatrix,
    schedule: Schedule,
    cfg: &RedfieldConfig,
    cv: &CostVector,
) -> Result<OpenEvolution> {
    cfg.validate()?;
    if cv.n > MAX_OPEN_QUBITS {
        return Err(Error::SizeOutOfRange { n: cv.n, max: MAX_OPEN_QUBITS });
    }
    if rho0.dim() != cv.dim() {
        return Err(Error::DimensionMismatch { got: rho0.dim(), expected: cv.dim() });
    }
    let total_time = schedule.total_time();
    // This generator is not completely positive; transients dip below zero
    // by O(eta) on rapidly switched schedules. Gate on an eta-scaled floor
    // and let callers read the achieved minimum off the diagnostics.
    let floor = crate::open_system::POSITIVITY_TOL.min(-0.1 * cfg.eta);
    evolve_with_step_control(cfg.step, total_time, floor, |step| {
        let mut rho = rho0.to_dmatrix();
        match schedule {
            Schedule::Protocol(p) => {
                for s in p.segments() {
                    if s.dt == 0.0 {
                        continue;
                    }
                    let frame = Frame::build(cv, s.g, cfg)?;
                    let mut rt = frame.into_basis(&rho);
                    let nsteps = (s.dt / step).ceil() as usize;
                    let h = s.dt / nsteps as f64;
                    for _ in 0..nsteps {
                        frame.rk4_step(&mut rt, h);
                    }
                    rho = frame.from_basis(&rt);
                }
            }
            Schedule::LinearRamp { t_total } => {
                if t_total > 0.0 {
                    let nsteps = (t_total / step).ceil() as usize;
                    let h = t_total / nsteps as f64;
                    for i in 0..nsteps {
                        let g_mid = (i as f64 * h + 0.5 * h) / t_total;
                        let frame = Frame::build(cv, g_mid, cfg)?;
                        let mut rt = frame.into_basis(&rho);
                        frame.rk4_step(&mut rt, h);
                        rho = frame.from_basis(&rt);
                    }
                }
            }
        }
        let dim = cv.dim();
        let entries = (0..dim * dim).map(|idx| rho[(idx / dim, idx % dim)]).collect();
        DensityMatrix::from_entries(cv.n, entries)
    })
}

/// Gibbs state e^{−βH(g)}/Z, the expected long-time limit at constant g.
pub fn gibbs_state(cv: &CostVector, g: f64, beta: f64) -> Result<DensityMatrix> {
    let eig = eigh(&dense_hamiltonian(cv, g))?;
    let dim = cv.dim();
    let e_min = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = eig.values.iter().map(|e| (-beta * (e - e_min)).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut rho = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    for a in 0..dim {
        let col = eig.vectors.column(a);
        let w = weights[a] / z;
        for r in 0..dim {
            for c in 0..dim {
                rho[(r, c)] += Complex64::new(w, 0.0) * col[r] * col[c].conj();
            }
        }
    }
    let entries = (0..dim * dim).map(|idx| rho[(idx / dim, idx % dim)]).collect();
    DensityMatrix::from_entries(cv.n, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SKInstance;
    use crate::protocol::BangBangProtocol;
    use crate::statevector::{evolve_protocol, StateVector};

    fn test_instance(n: usize, seed: u64) -> CostVector {
        SKInstance::generate(n, seed).unwrap().cost_vector()
    }

    #[test]
    fn spectrum_values_and_detailed_balance() {
        let cfg = RedfieldConfig::new(1.0, 2.0);
        assert!((spectral_density(0.0, &cfg) - 0.5).abs() < 1e-15);
        assert!((spectral_density(1e-14, &cfg) - 0.5).abs() < 1e-12);
        // βω = ln 2 makes 1 − e^{−βω} = 1/2 exactly.
        let cfg1 = RedfieldConfig::new(1.0, 1.0);
        let w = std::f64::consts::LN_2;
        assert!((spectral_density(w, &cfg1) - 2.0 * w).abs() < 1e-14);
        for &omega in &[0.3, 1.0, 2.5] {
            let ratio = spectral_density(omega, &cfg1) / spectral_density(-omega, &cfg1);
            assert!((ratio - omega.exp()).abs() < 1e-10 * omega.exp());
        }
    }

    #[test]
    fn zero_coupling_reduces_to_unitary_evolution() {
        let cv = test_instance(3, 21);
        let bb = BangBangProtocol::new(1, vec![0.4, 0.7, 0.5]).unwrap();
        let p = bb.to_protocol();
        let rho0 = DensityMatrix::from_pure(&StateVector::initial(3).unwrap()).unwrap();
        let out = redfield_evolve(
            &rho0,
            Schedule::Protocol(&p),
            &RedfieldConfig::new(0.0, 1.0),
            &cv,
        )
        .unwrap();
        let mut sv = StateVector::initial(3).unwrap();
        evolve_protocol(&mut sv, &p, &cv).unwrap();
        assert!(out.rho.overlap(&sv) > 1.0 - 1e-6, "overlap {}", out.rho.overlap(&sv));
    }

    #[test]
    fn gibbs_state_is_stationary() {
        // Start exactly at the fixed point; one long segment must not move it.
        let cv = test_instance(3, 77);
        let g = 0.55;
        let cfg = RedfieldConfig { eta: 0.2, beta: 1.0, step: 1e-2 };
        let gibbs = gibbs_state(&cv, g, cfg.beta).unwrap();
        let p = crate::protocol::Protocol::new(vec![crate::protocol::Segment { g, dt: 5.0 }])
            .unwrap();
        let out = redfield_evolve(&gibbs, Schedule::Protocol(&p), &cfg, &cv).unwrap();
        let dist = out.rho.trace_distance(&gibbs).unwrap();
        assert!(dist < 1e-6, "Gibbs state drifted by {dist}");
    }

    #[test]
    fn relaxes_to_gibbs_from_uniform_state() {
        let cv = test_instance(3, 5);
        let g = 0.55;
        let cfg = RedfieldConfig { eta: 0.25, beta: 1.0, step: 1e-2 };
        let rho0 = DensityMatrix::from_pure(&StateVector::initial(3).unwrap()).unwrap();
        let p = crate::protocol::Protocol::new(vec![crate::protocol::Segment { g, dt: 300.0 }])
            .unwrap();
        let out = redfield_evolve(&rho0, Schedule::Protocol(&p), &cfg, &cv).unwrap();
        let gibbs = gibbs_state(&cv, g, cfg.beta).unwrap();
        let dist = out.rho.trace_distance(&gibbs).unwrap();
        assert!(dist < 1e-3, "distance to Gibbs after long evolution: {dist}");
        assert!(out.trace_drift < 1e-6 * 300.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        let cv = test_instance(3, 1);
        let p = BangBangProtocol::new(1, vec![0.5]).unwrap().to_protocol();
        let rho0 = DensityMatrix::from_pure(&StateVector::initial(3).unwrap()).unwrap();
        for cfg in [RedfieldConfig::new(-0.1, 1.0), RedfieldConfig::new(0.1, 0.0)] {
            assert!(redfield_evolve(&rho0, Schedule::Protocol(&p), &cfg, &cv).is_err());
        }
    }
}
