//! Simulated measurement data: Born-rule probabilities, multinomial
//! finite-statistics sampling and the noise-bound heuristic.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand_distr::{Binomial, Distribution};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hermitian::HermitianMatrix;
use crate::rng::derived_rng;
use crate::sensing::SensingMap;

/// Default multiplier on the aggregate multinomial standard deviation.
pub const DEFAULT_NOISE_FACTOR: f64 = 2.0;

/// Probabilities or frequencies for a sequence of measurement blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    /// One value per outcome, block after block. For records produced by
    /// [`born_probabilities`] and [`sample_frequencies`] every block is a
    /// probability vector.
    pub values: Vec<f64>,
    /// Repetitions per block; 0 marks an ideal (noiseless) record.
    pub n_rep: u64,
    /// Bound on `‖f − p‖₂`; 0 for ideal records.
    pub epsilon: f64,
    pub dim: usize,
    /// `(basis label, outcome count)` per block.
    pub layout: Vec<(String, usize)>,
}

impl MeasurementRecord {
    /// Wraps arbitrary sensing data `y` as an ideal single-block record.
    pub fn from_values(dim: usize, values: Vec<f64>) -> Self {
        let m = values.len();
        Self {
            values,
            n_rep: 0,
            epsilon: 0.0,
            dim,
            layout: vec![("data".to_string(), m)],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_ideal(&self) -> bool {
        self.n_rep == 0
    }

    /// Values grouped by block.
    pub fn blocks(&self) -> impl Iterator<Item = (&str, &[f64])> {
        let mut start = 0;
        self.layout.iter().map(move |(label, len)| {
            let slice = &self.values[start..start + len];
            start += len;
            (label.as_str(), slice)
        })
    }

    /// Short hash of the block layout.
    pub fn layout_hash(&self) -> String {
        let mut text = String::new();
        for (label, len) in &self.layout {
            write!(text, "{label}:{len};").expect("writing to a String");
        }
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// `p_μ = Tr(E_μ ρ)` for every block of a POVM-structured map.
///
/// Values are reported as per-block probabilities even when the map was
/// rescaled; round-off negatives are clipped and each block renormalized.
pub fn born_probabilities(map: &SensingMap, rho: &HermitianMatrix) -> Result<MeasurementRecord> {
    if rho.dim() != map.dim() {
        return Err(Error::Domain(format!(
            "state dimension {} does not match map dimension {}",
            rho.dim(),
            map.dim()
        )));
    }
    let min = rho.min_eigenvalue()?;
    if min < -1e-6 {
        return Err(Error::Domain(format!(
            "state is not positive semidefinite (smallest eigenvalue {min:.3e})"
        )));
    }
    let tr = rho.trace();
    if (tr - 1.0).abs() > 1e-8 {
        return Err(Error::Domain(format!("state trace is {tr}, expected 1")));
    }
    let raw = map.apply(rho)?;
    let mut values = Vec::with_capacity(map.len());
    let mut layout = Vec::with_capacity(map.blocks().len());
    let mut start = 0;
    for block in map.blocks() {
        let c = block.normalization.ok_or_else(|| {
            Error::Domain(format!("block '{}' of the sensing map is not a POVM", block.label))
        })?;
        let mut p: Vec<f64> = raw.as_slice()[start..start + block.len]
            .iter()
            .map(|v| v / c)
            .collect();
        if let Some(worst) = p.iter().copied().filter(|v| *v < -1e-8).reduce(f64::min) {
            return Err(Error::Domain(format!(
                "block '{}' has probability {worst:.3e} beyond round-off",
                block.label
            )));
        }
        for v in &mut p {
            *v = v.max(0.0);
        }
        let total: f64 = p.iter().sum();
        values.extend(p.iter().map(|v| v / total));
        layout.push((block.label.clone(), block.len));
        start += block.len;
    }
    Ok(MeasurementRecord {
        values,
        n_rep: 0,
        epsilon: 0.0,
        dim: map.dim(),
        layout,
    })
}

/// One multinomial draw of size `n` over `probs` by sequential conditional binomials.
fn multinomial(n: u64, probs: &[f64], rng: &mut crate::rng::SeededRng) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; probs.len()];
    let mut remaining = n;
    let mut mass: f64 = probs.iter().sum();
    for (k, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k + 1 == probs.len() {
            counts[k] = remaining;
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(remaining, q)
            .map_err(|e| Error::Numerical(format!("binomial({remaining}, {q}): {e}")))?
            .sample(rng);
        counts[k] = draw;
        remaining -= draw;
        mass -= p;
    }
    Ok(counts)
}

/// Replaces each block of an ideal record by the frequencies of `n_rep`
/// multinomial draws; block `k` is seeded from `(seed, k)`.
///
/// The record's `epsilon` is set by [`estimate_noise_bound`].
pub fn sample_frequencies(record: &MeasurementRecord, n_rep: u64, seed: u64) -> Result<MeasurementRecord> {
    if !record.is_ideal() {
        return Err(Error::Domain("can only sample from an ideal record".into()));
    }
    if n_rep == 0 {
        return Err(Error::Domain("n_rep must be at least 1".into()));
    }
    let mut values = Vec::with_capacity(record.len());
    for (k, (_, probs)) in record.blocks().enumerate() {
        let mut rng = derived_rng(seed, &[k as u64]);
        let counts = multinomial(n_rep, probs, &mut rng)?;
        values.extend(counts.iter().map(|&c| c as f64 / n_rep as f64));
    }
    let mut sampled = MeasurementRecord {
        values,
        n_rep,
        epsilon: 0.0,
        dim: record.dim,
        layout: record.layout.clone(),
    };
    sampled.epsilon = estimate_noise_bound(&sampled);
    Ok(sampled)
}

/// `2·√(Σ_μ f_μ(1−f_μ)/n_rep)`: twice the plug-in standard deviation of `‖f − p‖₂`.
///
/// A heuristic, not a guarantee. It vanishes for one-hot blocks (e.g.
/// `n_rep = 1`), where callers should supply their own bound.
pub fn estimate_noise_bound(record: &MeasurementRecord) -> f64 {
    estimate_noise_bound_with_factor(record, DEFAULT_NOISE_FACTOR)
}

pub fn estimate_noise_bound_with_factor(record: &MeasurementRecord, factor: f64) -> f64 {
    if record.is_ideal() {
        return 0.0;
    }
    let variance: f64 = record.values.iter().map(|f| f * (1.0 - f)).sum::<f64>() / record.n_rep as f64;
    factor * variance.max(0.0).sqrt()
}

const CSV_MAGIC: &str = "# psd-sense record v1";

/// CSV form: a header comment carrying `n_rep`, `epsilon`, `d` and the layout
/// hash, a column line, then one `basis,outcome_index,value` row per outcome.
pub fn format_record_csv(record: &MeasurementRecord) -> String {
    let mut out = format!(
        "{CSV_MAGIC} n_rep={} epsilon={} d={} layout_hash={}\nbasis,outcome_index,value\n",
        record.n_rep,
        record.epsilon,
        record.dim,
        record.layout_hash()
    );
    for (label, values) in record.blocks() {
        for (k, v) in values.iter().enumerate() {
            writeln!(out, "{label},{k},{v}").expect("writing to a String");
        }
    }
    out
}

pub fn parse_record_csv(text: &str) -> Result<MeasurementRecord> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .filter(|l| l.starts_with(CSV_MAGIC))
        .ok_or_else(|| Error::Parse("missing record header line".into()))?;
    let mut n_rep = None;
    let mut epsilon = None;
    let mut dim = None;
    let mut hash = None;
    for field in header[CSV_MAGIC.len()..].split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad header field '{field}'")))?;
        let bad = |_| Error::Parse(format!("bad value in header field '{field}'"));
        match key {
            "n_rep" => n_rep = Some(value.parse::<u64>().map_err(|e| bad(e.to_string()))?),
            "epsilon" => epsilon = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "d" => dim = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "layout_hash" => hash = Some(value.to_string()),
            _ => return Err(Error::Parse(format!("unknown header field '{key}'"))),
        }
    }
    match lines.next() {
        Some("basis,outcome_index,value") => {}
        _ => return Err(Error::Parse("missing column line".into())),
    }
    let mut values = Vec::new();
    let mut layout: Vec<(String, usize)> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Parse(format!("row {}: expected 3 columns", i + 1)));
        }
        let index: usize = cols[1]
            .parse()
            .map_err(|_| Error::Parse(format!("row {}: bad outcome index", i + 1)))?;
        let value: f64 = cols[2]
            .parse()
            .map_err(|_| Error::Parse(format!("row {}: bad value", i + 1)))?;
        match layout.last_mut() {
            Some((label, len)) if label == cols[0] && *len == index => *len += 1,
            _ if index == 0 => layout.push((cols[0].to_string(), 1)),
            _ => return Err(Error::Parse(format!("row {}: outcome indices out of order", i + 1))),
        }
        values.push(value);
    }
    let record = MeasurementRecord {
        values,
        n_rep: n_rep.ok_or_else(|| Error::Parse("header lacks n_rep".into()))?,
        epsilon: epsilon.ok_or_else(|| Error::Parse("header lacks epsilon".into()))?,
        dim: dim.ok_or_else(|| Error::Parse("header lacks d".into()))?,
        layout,
    };
    if let Some(h) = hash {
        if h != record.layout_hash() {
            return Err(Error::Parse("layout hash does not match the rows".into()));
        }
    }
    Ok(record)
}

pub fn write_record_csv(path: &Path, record: &MeasurementRecord) -> Result<()> {
    fs::write(path, format_record_csv(record))?;
    Ok(())
}

pub fn read_record_csv(path: &Path) -> Result<MeasurementRecord> {
    parse_record_csv(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::haar_random_pure_state;
    use crate::sensing::{all_pauli_bases, pauli_sensing_map};

    fn qubit_map(bases: &[&str]) -> SensingMap {
        let bases: Vec<String> = bases.iter().map(|s| s.to_string()).collect();
        pauli_sensing_map(1, &bases, false).unwrap()
    }

    #[test]
    fn born_rule_examples() {
        let map = qubit_map(&["x", "y", "z"]);
        let rec = born_probabilities(&map, &HermitianMatrix::maximally_mixed(2)).unwrap();
        assert!(rec.values.iter().all(|v| (v - 0.5).abs() < 1e-15));
        assert_eq!(rec.epsilon, 0.0);

        let zero = HermitianMatrix::from_real_diagonal(&[1.0, 0.0]);
        let z = born_probabilities(&qubit_map(&["z"]), &zero).unwrap();
        assert_eq!(z.values, vec![1.0, 0.0]);
        let x = born_probabilities(&qubit_map(&["x"]), &zero).unwrap();
        assert!(x.values.iter().all(|v| (v - 0.5).abs() < 1e-15));

        let bad = HermitianMatrix::from_real_diagonal(&[1.1, -0.1]);
        assert!(matches!(born_probabilities(&map, &bad), Err(Error::Domain(_))));
    }

    #[test]
    fn born_rule_matches_naive_trace_on_three_qubits() {
        let map = pauli_sensing_map(3, &all_pauli_bases(3), true).unwrap();
        let rho = haar_random_pure_state(8, 31).unwrap();
        let rec = born_probabilities(&map, &rho).unwrap();
        for (_, block) in rec.blocks() {
            assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for (i, op) in map.operators().iter().enumerate() {
            let mut tr = 0.0;
            for r in 0..8 {
                for c in 0..8 {
                    tr += (op.entry(r, c) * rho.entry(c, r)).re;
                }
            }
            // rescaled by 1/27; the record reports plain probabilities
            assert!((27.0 * tr - rec.values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_examples() {
        let map = qubit_map(&["x", "z"]);
        let zero = HermitianMatrix::from_real_diagonal(&[1.0, 0.0]);
        let ideal = born_probabilities(&map, &zero).unwrap();
        let one = sample_frequencies(&ideal, 1, 3).unwrap();
        for (_, block) in one.blocks() {
            assert_eq!(block.iter().filter(|v| **v == 1.0).count(), 1);
            assert_eq!(block.iter().filter(|v| **v == 0.0).count(), 1);
        }
        assert_eq!(one.epsilon, 0.0);
        for n in [1, 7, 1000] {
            let s = sample_frequencies(&ideal, n, 5).unwrap();
            assert_eq!(&s.values[2..], &[1.0, 0.0]);
        }
        assert!(sample_frequencies(&one, 10, 1).is_err());
        assert!(sample_frequencies(&ideal, 0, 1).is_err());
        assert_eq!(sample_frequencies(&ideal, 50, 9).unwrap(), sample_frequencies(&ideal, 50, 9).unwrap());
    }

    /// For `p = (½, ½)`, `‖f − p‖₂ = √2·|k/n − ½|` with `k ~ Bin(n, ½)`. The
    /// event `‖f − p‖₂ ≥ 5e-3` needs `|k − n/2| ≥ 3536` at `n = 10⁶`, a
    /// 7.07σ deviation with two-sided tail ≈ 1.6e-12; all 100 seeds must
    /// therefore land inside.
    #[test]
    fn large_samples_concentrate() {
        let ideal = born_probabilities(&qubit_map(&["x"]), &HermitianMatrix::from_real_diagonal(&[1.0, 0.0])).unwrap();
        for seed in 0..100 {
            let s = sample_frequencies(&ideal, 1_000_000, seed).unwrap();
            let dist: f64 = s.values.iter().zip(&ideal.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(dist < 5e-3);
        }
    }

    #[test]
    fn noise_bound_examples() {
        let map = qubit_map(&["x", "z"]);
        let ideal = born_probabilities(&map, &HermitianMatrix::maximally_mixed(2)).unwrap();
        assert_eq!(estimate_noise_bound(&ideal), 0.0);
        let s = sample_frequencies(&ideal, 1, 0).unwrap();
        assert_eq!(estimate_noise_bound(&s), 0.0);
        let s = sample_frequencies(&ideal, 100, 0).unwrap();
        let expected = 2.0 * (s.values.iter().map(|f| f * (1.0 - f)).sum::<f64>() / 100.0).sqrt();
        assert!((s.epsilon - expected).abs() < 1e-15);
    }

    #[test]
    fn noise_bound_covers_the_sampling_error() {
        let map = pauli_sensing_map(3, &all_pauli_bases(3), false).unwrap();
        let rho = haar_random_pure_state(8, 2).unwrap();
        let ideal = born_probabilities(&map, &rho).unwrap();
        let trials = 1000;
        let covered = (0..trials)
            .filter(|&seed| {
                let s = sample_frequencies(&ideal, 200, seed).unwrap();
                let err: f64 = s.values.iter().zip(&ideal.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                err <= s.epsilon
            })
            .count();
        assert!(covered as f64 >= 0.9 * trials as f64, "coverage {covered}/{trials}");
    }

    #[test]
    fn frequencies_are_multiples_of_inverse_n_rep() {
        let map = pauli_sensing_map(2, &all_pauli_bases(2), false).unwrap();
        let ideal = born_probabilities(&map, &haar_random_pure_state(4, 8).unwrap()).unwrap();
        let s = sample_frequencies(&ideal, 37, 1).unwrap();
        assert_eq!(s.layout, ideal.layout);
        for v in &s.values {
            let k = v * 37.0;
            assert!((k - k.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let map = pauli_sensing_map(2, &["xy".into(), "zz".into()], false).unwrap();
        let ideal = born_probabilities(&map, &haar_random_pure_state(4, 3).unwrap()).unwrap();
        let s = sample_frequencies(&ideal, 25, 4).unwrap();
        let text = format_record_csv(&s);
        assert!(text.starts_with("# psd-sense record v1 n_rep=25"));
        assert_eq!(parse_record_csv(&text).unwrap(), s);
        let tampered = text.replacen("xy,0", "xz,0", 1);
        assert!(parse_record_csv(&tampered).is_err());
        assert!(parse_record_csv("basis,outcome_index,value\n").is_err());
    }
}
