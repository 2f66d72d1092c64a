//! Sherrington-Kirkpatrick instances and their classical cost tables.
//!
//! Conventions used everywhere in this crate:
//! * basis label `z` is an integer in `0..2^n`; bit `k` of `z` carries spin
//!   `k`, with bit value 0 meaning `s = +1` and bit value 1 meaning `s = -1`;
//! * couplings are single-counted over pairs `i < j`, no diagonal terms, and
//!   the pair sum carries the `1/sqrt(n)` normalization.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported system; cost tables are dense in `2^n`.
pub const MAX_QUBITS: usize = 16;

/// Name recorded in instance files for the generator below: ChaCha12 keyed by
/// the 64-bit seed, standard-normal variates via the rand_distr ziggurat.
pub const RNG_NAME: &str = "chacha12-standard-normal";

/// Spin of bit `k` in basis label `z`.
#[inline(always)]
pub fn spin(z: usize, k: usize) -> f64 {
    if z >> k & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// One disorder realization: Gaussian couplings `J_ij` (i < j) and fields `h_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SKInstance {
    n: usize,
    seed: u64,
    rng: String,
    /// Upper triangle in lexicographic (i, j) order, i < j.
    j_upper: Vec<f64>,
    h: Vec<f64>,
}

/// On-disk form; `J` and `h` are optional so a file carrying only the seed
/// can be regenerated. Explicit tables win over the seed when both appear.
#[derive(Serialize, Deserialize)]
struct InstanceFile {
    n: usize,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rng: Option<String>,
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    j: Option<Vec<(usize, usize, f64)>>,
    #[serde(rename = "h", default, skip_serializing_if = "Option::is_none")]
    h: Option<Vec<f64>>,
}

#[inline]
fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 || n > MAX_QUBITS {
        return Err(Error::SizeOutOfRange { n, max: MAX_QUBITS });
    }
    Ok(())
}

impl SKInstance {
    /// Draws `J_ij` (pairs in lexicographic order, i < j first index) and then
    /// `h_0..h_{n-1}` as independent standard normals from the seeded stream.
    pub fn generate(n: usize, seed: u64) -> Result<Self> {
        check_size(n)?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let j_upper: Vec<f64> = (0..n * (n - 1) / 2).map(|_| normal.sample(&mut rng)).collect();
        let h: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self { n, seed, rng: RNG_NAME.to_string(), j_upper, h })
    }

    /// Builds an instance from explicit tables; `seed` is only a label here.
    pub fn from_tables(n: usize, seed: u64, j: &[(usize, usize, f64)], h: Vec<f64>) -> Result<Self> {
        check_size(n)?;
        if h.len() != n {
            return Err(Error::DimensionMismatch { got: h.len(), expected: n });
        }
        let m = n * (n - 1) / 2;
        if j.len() != m {
            return Err(Error::DimensionMismatch { got: j.len(), expected: m });
        }
        let mut j_upper = vec![f64::NAN; m];
        for &(i, jj, v) in j {
            if i >= jj || jj >= n {
                return Err(Error::InvalidArgument(format!(
                    "coupling index ({i},{jj}) is not an upper-triangle pair for n={n}"
                )));
            }
            let idx = pair_index(n, i, jj);
            if !j_upper[idx].is_nan() {
                return Err(Error::InvalidArgument(format!("duplicate coupling ({i},{jj})")));
            }
            j_upper[idx] = v;
        }
        Ok(Self { n, seed, rng: String::new(), j_upper, h })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng_name(&self) -> &str {
        &self.rng
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        assert!(i < j && j < self.n, "coupling index out of range");
        self.j_upper[pair_index(self.n, i, j)]
    }

    pub fn couplings(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j, self.coupling(i, j))))
    }

    pub fn fields(&self) -> &[f64] {
        &self.h
    }

    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            n: self.n,
            seed: self.seed,
            rng: if self.rng.is_empty() { None } else { Some(self.rng.clone()) },
            j: Some(self.couplings().collect()),
            h: Some(self.h.clone()),
        };
        serde_json::to_string_pretty(&file).expect("instance serialization cannot fail")
    }

    /// Accepts both the seed-only and the explicit-table form. Explicit tables
    /// win over the seed; with only one table present the other is drawn from
    /// the seed.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        check_size(file.n)?;
        let regenerated = file.j.is_none() || file.h.is_none();
        let (j, h) = match (&file.j, &file.h) {
            (Some(_), Some(_)) => (None, None),
            _ => {
                let gen = SKInstance::generate(file.n, file.seed)?;
                (Some(gen.couplings().collect::<Vec<_>>()), Some(gen.h))
            }
        };
        let j = file.j.or(j).expect("coupling table present");
        let h = file.h.or(h).expect("field table present");
        let mut inst = Self::from_tables(file.n, file.seed, &j, h)?;
        inst.rng = match file.rng {
            Some(name) => name,
            None if regenerated => RNG_NAME.to_string(),
            None => String::new(),
        };
        Ok(inst)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Dense classical energies over all basis states.
    pub fn cost_vector(&self) -> CostVector {
        CostVector::build(self)
    }
}

/// Exhaustive table of `C_z` together with the ground manifold.
#[derive(Debug, Clone)]
pub struct CostVector {
    pub n: usize,
    pub values: Vec<f64>,
    pub ground_energy: f64,
    /// Every basis index attaining `ground_energy` exactly.
    pub ground_set: Vec<usize>,
}

impl CostVector {
    pub fn build(inst: &SKInstance) -> Self {
        let n = inst.n;
        let dim = 1usize << n;
        let inv_sqrt_n = 1.0 / (n as f64).sqrt();
        let mut values = vec![0.0; dim];
        for (z, value) in values.iter_mut().enumerate() {
            let mut pair_sum = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    pair_sum += inst.coupling(i, j) * spin(z, i) * spin(z, j);
                }
            }
            let mut field_sum = 0.0;
            for (i, &hi) in inst.h.iter().enumerate() {
                field_sum += hi * spin(z, i);
            }
            *value = inv_sqrt_n * pair_sum + field_sum;
        }
        let ground_energy = values.iter().copied().fold(f64::INFINITY, f64::min);
        let ground_set: Vec<usize> =
            (0..dim).filter(|&z| values[z] == ground_energy).collect();
        Self { n, values, ground_energy, ground_set }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `C_z - C_{z'}` where `z'` is `z` with spin `k` flipped.
    pub fn flip_delta(&self, z: usize, k: usize) -> Result<f64> {
        if z >= self.dim() {
            return Err(Error::IndexOutOfBounds { index: z, size: self.dim() });
        }
        if k >= self.n {
            return Err(Error::IndexOutOfBounds { index: k, size: self.n });
        }
        Ok(self.values[z] - self.values[z ^ (1 << k)])
    }

    /// Total weight the supplied per-basis probability puts on the ground set.
    pub fn ground_probability<F: FnMut(usize) -> f64>(&self, mut prob: F) -> f64 {
        self.ground_set.iter().map(|&z| prob(z)).sum()
    }
}
