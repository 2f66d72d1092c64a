//! Pulse-duration statistics across instance ensembles: histograms, the
//! size-collapse test, method comparison tables, and the flip-cost variance
//! that sets the natural pulse timescale.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::CostVector;
use crate::protocol::BangBangProtocol;

/// Which pulses of a protocol enter the pooled histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseFilter {
    /// Both control values (the default reported distribution).
    All,
    OnlyG0,
    OnlyG1,
}

#[derive(Debug, Clone)]
pub struct DurationHistogram {
    pub bin_width: f64,
    /// (bin center, probability), covering [0, T] with a fixed grid.
    pub bins: Vec<(f64, f64)>,
    pub sample_count: usize,
    /// System size tag carried for reporting; not used in the math.
    pub n: usize,
    pub t_total: f64,
}

impl DurationHistogram {
    /// Index of the most probable bin (first one on ties).
    pub fn peak_bin(&self) -> usize {
        self.bins
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Probability-weighted center of the half-maximum region around the
    /// mode; steadier than the raw argmax under single-bin noise.
    pub fn peak_center(&self) -> f64 {
        let pmax = self.bins.iter().map(|b| b.1).fold(0.0f64, f64::max);
        if pmax == 0.0 {
            return 0.0;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for &(c, p) in &self.bins {
            if p >= 0.5 * pmax {
                num += c * p;
                den += p;
            }
        }
        num / den
    }

    /// Columns: n, T, bin_center, probability, samples.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,T,bin_center,probability,samples")?;
        for &(c, p) in &self.bins {
            writeln!(out, "{},{},{},{},{}", self.n, self.t_total, c, p, self.sample_count)?;
        }
        Ok(())
    }
}

fn matches(filter: PulseFilter, g: f64) -> bool {
    match filter {
        PulseFilter::All => true,
        PulseFilter::OnlyG0 => g < 0.5,
        PulseFilter::OnlyG1 => g >= 0.5,
    }
}

/// Pool pulse durations from an ensemble of protocols into one normalized
/// histogram. Zero-duration pulses are merged away before pooling; all
/// protocols must share the same total time.
pub fn collect_durations(
    protocols: &[BangBangProtocol],
    n: usize,
    bin_width: f64,
    filter: PulseFilter,
) -> Result<DurationHistogram> {
    if protocols.is_empty() {
        return Err(Error::InvalidArgument("no protocols to pool".into()));
    }
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::InvalidArgument(format!("bad bin width {bin_width}")));
    }
    let t_total = protocols[0].total_time();
    for p in protocols {
        if (p.total_time() - t_total).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mixed total times in ensemble: {} vs {}",
                p.total_time(),
                t_total
            )));
        }
    }
    let nbins = ((t_total / bin_width).ceil() as usize).max(1);
    let mut counts = vec![0usize; nbins];
    let mut samples = 0usize;
    for p in protocols {
        for (g, dt) in p.merged_pulses() {
            if !matches(filter, g) {
                continue;
            }
            // Nudge so durations landing exactly on a bin edge go up, not
            // down through representation error of the edge itself.
            let idx = ((dt / bin_width + 1e-9).floor() as usize).min(nbins - 1);
            counts[idx] += 1;
            samples += 1;
        }
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("no pulses pass the filter".into()));
    }
    let bins = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| ((i as f64 + 0.5) * bin_width, c as f64 / samples as f64))
        .collect::<Vec<_>>();
    let total: f64 = bins.iter().map(|b| b.1).sum();
    debug_assert!((total - 1.0).abs() < 1e-9);
    Ok(DurationHistogram { bin_width, bins, sample_count: samples, n, t_total })
}

/// Kolmogorov-Smirnov distance between the binned distributions plus the
/// signed peak shift (second minus first, in time units). Requires equal
/// binning grids.
pub fn collapse_test(a: &DurationHistogram, b: &DurationHistogram) -> Result<(f64, f64)> {
    if (a.bin_width - b.bin_width).abs() > 1e-12 || a.bins.len() != b.bins.len() {
        return Err(Error::InvalidArgument(format!(
            "incompatible binning: {}x{} vs {}x{}",
            a.bins.len(),
            a.bin_width,
            b.bins.len(),
            b.bin_width
        )));
    }
    let mut cdf_a = 0.0;
    let mut cdf_b = 0.0;
    let mut ks = 0.0f64;
    for (x, y) in a.bins.iter().zip(&b.bins) {
        cdf_a += x.1;
        cdf_b += y.1;
        ks = ks.max((cdf_a - cdf_b).abs());
    }
    let shift = (b.peak_bin() as f64 - a.peak_bin() as f64) * a.bin_width;
    Ok((ks, shift))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    BangBang,
    Qaa,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::BangBang => "bb",
            Method::Qaa => "qaa",
        }
    }
}

/// One evolved-protocol outcome destined for the comparison table.
#[derive(Debug, Clone)]
pub struct MethodResult {
    pub instance_seed: u64,
    pub t_total: f64,
    /// Noise model tag, e.g. "closed", "dephasing W=0.01".
    pub noise: String,
    pub method: Method,
    pub fidelity_error: f64,
    pub energy_error: f64,
}

/// Per-(T, noise) means for both methods with their error ratios.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub t_total: f64,
    pub noise: String,
    pub pairs: usize,
    pub bb_fidelity_error: f64,
    pub bb_energy_error: f64,
    pub qaa_fidelity_error: f64,
    pub qaa_energy_error: f64,
    pub fidelity_ratio: f64,
    pub energy_ratio: f64,
}

/// Aggregate matched per-instance results. Every (T, noise, instance) must
/// carry exactly one row per method; anything unmatched is rejected.
pub fn comparison_table(results: &[MethodResult]) -> Result<Vec<ComparisonRow>> {
    use std::collections::BTreeMap;
    // Keyed on the exact bits of T: values come from shared configs.
    let mut groups: BTreeMap<(u64, &str), Vec<&MethodResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.t_total.to_bits(), r.noise.as_str())).or_default().push(r);
    }
    let mut rows = Vec::new();
    for ((_, noise), group) in groups {
        let mut by_instance: BTreeMap<u64, (Option<&MethodResult>, Option<&MethodResult>)> =
            BTreeMap::new();
        for r in &group {
            let slot = by_instance.entry(r.instance_seed).or_default();
            let cell = match r.method {
                Method::BangBang => &mut slot.0,
                Method::Qaa => &mut slot.1,
            };
            if cell.is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate {} row for instance {} at T={}",
                    r.method.label(),
                    r.instance_seed,
                    r.t_total
                )));
            }
            *cell = Some(r);
        }
        let mut sums = [0.0f64; 4];
        let mut pairs = 0usize;
        for (seed, (bb, qaa)) in by_instance {
            let (bb, qaa) = match (bb, qaa) {
                (Some(b), Some(q)) => (b, q),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "instance {seed} lacks a matched pair in noise group {noise}"
                    )))
                }
            };
            sums[0] += bb.fidelity_error;
            sums[1] += bb.energy_error;
            sums[2] += qaa.fidelity_error;
            sums[3] += qaa.energy_error;
            pairs += 1;
        }
        let m = pairs as f64;
        rows.push(ComparisonRow {
            t_total: group[0].t_total,
            noise: noise.to_string(),
            pairs,
            bb_fidelity_error: sums[0] / m,
            bb_energy_error: sums[1] / m,
            qaa_fidelity_error: sums[2] / m,
            qaa_energy_error: sums[3] / m,
            fidelity_ratio: sums[0] / sums[2],
            energy_ratio: sums[1] / sums[3],
        });
    }
    Ok(rows)
}

/// Empirical variance of the cost change under single spin flips, over all
/// (state, flipped-spin) pairs. Full enumeration makes the odd terms cancel
/// exactly, so this equals 4·((2/n²)Σ J²_ij + (1/n)Σ h_k²) to rounding; its
/// disorder expectation 4·((n−1)/n + 1) sets the pulse timescale 1/√(ΔC²).
pub fn flip_cost_variance(cv: &CostVector) -> f64 {
    let dim = cv.dim();
    let mut sum_sq = 0.0;
    for z in 0..dim {
        for k in 0..cv.n {
            let dc = cv.values[z ^ (1 << k)] - cv.values[z];
            sum_sq += dc * dc;
        }
    }
    // The mean over the full enumeration is exactly zero: each ordered pair
    // appears with both signs.
    sum_sq / (dim * cv.n) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SKInstance;

    fn bb(start: u8, d: &[f64]) -> BangBangProtocol {
        BangBangProtocol::new(start, d.to_vec()).unwrap()
    }

    #[test]
    fn single_protocol_occupies_expected_bins() {
        let h =
            collect_durations(&[bb(1, &[0.5, 0.5, 1.0])], 5, 0.05, PulseFilter::All).unwrap();
        assert_eq!(h.sample_count, 3);
        let occupied: Vec<(usize, f64)> = h
            .bins
            .iter()
            .enumerate()
            .filter(|(_, b)| b.1 > 0.0)
            .map(|(i, b)| (i, b.1))
            .collect();
        assert_eq!(occupied.len(), 2);
        assert_eq!(occupied[0].0, 10);
        assert!((occupied[0].1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(occupied[1].0, 20);
        assert!((occupied[1].1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn probabilities_normalize() {
        let protocols = vec![bb(0, &[0.3, 0.7, 0.2, 0.8]), bb(1, &[1.1, 0.4, 0.5])];
        let h = collect_durations(&protocols, 4, 0.05, PulseFilter::All).unwrap();
        let total: f64 = h.bins.iter().map(|b| b.1).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(h.bins.iter().all(|b| b.1 >= 0.0));
    }

    #[test]
    fn pooling_is_permutation_invariant_and_splits_recombine() {
        let a = bb(0, &[0.3, 0.7, 0.2, 0.8]);
        let b = bb(1, &[1.1, 0.4, 0.5]);
        let fwd = collect_durations(&[a.clone(), b.clone()], 4, 0.05, PulseFilter::All).unwrap();
        let rev = collect_durations(&[b.clone(), a.clone()], 4, 0.05, PulseFilter::All).unwrap();
        for (x, y) in fwd.bins.iter().zip(&rev.bins) {
            assert_eq!(x.1, y.1);
        }
        // Pooled distribution is the sample-count-weighted mix of the
        // per-control-value distributions.
        let g0 = collect_durations(&[a.clone(), b.clone()], 4, 0.05, PulseFilter::OnlyG0).unwrap();
        let g1 = collect_durations(&[a, b], 4, 0.05, PulseFilter::OnlyG1).unwrap();
        assert_eq!(g0.sample_count + g1.sample_count, fwd.sample_count);
        for i in 0..fwd.bins.len() {
            let mixed = (g0.bins[i].1 * g0.sample_count as f64
                + g1.bins[i].1 * g1.sample_count as f64)
                / fwd.sample_count as f64;
            assert!((mixed - fwd.bins[i].1).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_histograms_collapse_exactly() {
        let h = collect_durations(&[bb(1, &[0.5, 1.5])], 6, 0.05, PulseFilter::All).unwrap();
        let (ks, shift) = collapse_test(&h, &h).unwrap();
        assert_eq!(ks, 0.0);
        assert_eq!(shift, 0.0);
    }

    #[test]
    fn disjoint_histograms_have_unit_ks() {
        let lo = collect_durations(&[bb(1, &[0.5; 4])], 6, 0.05, PulseFilter::All).unwrap();
        let hi = collect_durations(&[bb(1, &[1.0, 1.0])], 6, 0.05, PulseFilter::All).unwrap();
        let (ks, shift) = collapse_test(&lo, &hi).unwrap();
        assert_eq!(ks, 1.0);
        assert!(shift > 0.0);
    }

    #[test]
    fn incompatible_binning_rejected() {
        let a = collect_durations(&[bb(1, &[0.5, 1.5])], 6, 0.05, PulseFilter::All).unwrap();
        let b = collect_durations(&[bb(1, &[0.5, 1.5])], 6, 0.1, PulseFilter::All).unwrap();
        assert!(collapse_test(&a, &b).is_err());
        assert!(collect_durations(&[], 6, 0.05, PulseFilter::All).is_err());
    }

    #[test]
    fn comparison_table_single_pair_reproduces_raw_values() {
        let rows = vec![
            MethodResult {
                instance_seed: 7,
                t_total: 2.0,
                noise: "closed".into(),
                method: Method::BangBang,
                fidelity_error: 0.25,
                energy_error: 0.5,
            },
            MethodResult {
                instance_seed: 7,
                t_total: 2.0,
                noise: "closed".into(),
                method: Method::Qaa,
                fidelity_error: 0.5,
                energy_error: 2.0,
            },
        ];
        let table = comparison_table(&rows).unwrap();
        assert_eq!(table.len(), 1);
        let r = &table[0];
        assert_eq!(r.pairs, 1);
        assert_eq!(r.bb_fidelity_error, 0.25);
        assert_eq!(r.qaa_energy_error, 2.0);
        assert!((r.fidelity_ratio - 0.5).abs() < 1e-15);
        assert!((r.energy_ratio - 0.25).abs() < 1e-15);
    }

    #[test]
    fn unmatched_pairs_rejected() {
        let solo = vec![MethodResult {
            instance_seed: 7,
            t_total: 2.0,
            noise: "closed".into(),
            method: Method::BangBang,
            fidelity_error: 0.1,
            energy_error: 0.1,
        }];
        assert!(comparison_table(&solo).is_err());
        let dup = vec![solo[0].clone(), solo[0].clone()];
        assert!(comparison_table(&dup).is_err());
    }

    #[test]
    fn flip_variance_matches_coupling_tables_exactly() {
        let inst = SKInstance::generate(6, 91).unwrap();
        let cv = inst.cost_vector();
        let empirical = flip_cost_variance(&cv);
        let n = 6.0;
        let j_sq: f64 = inst.couplings().map(|(_, _, v)| v * v).sum();
        let h_sq: f64 = inst.fields().iter().map(|h| h * h).sum();
        let formula = 4.0 * (2.0 / (n * n) * j_sq + h_sq / n);
        assert!(
            (empirical - formula).abs() < 1e-10,
            "empirical {empirical} formula {formula}"
        );
    }

    #[test]
    fn histogram_csv_shape() {
        let h = collect_durations(&[bb(1, &[0.5, 1.5])], 6, 0.5, PulseFilter::All).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "n,T,bin_center,probability,samples");
        assert_eq!(lines.count(), h.bins.len());
    }
}
