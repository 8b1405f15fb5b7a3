//! POVMs, sensing maps `y_i = Tr(A_i M)`, the auxiliary conjugation
//! transform, and Monte-Carlo restricted-isometry estimates.
//!
//! Ordering conventions: within a Pauli basis, outcomes are ordered
//! lexicographically in (up, down) per qubit with the leftmost basis
//! character as the most significant qubit. Collections of bases drawn by
//! [`random_pauli_basis_set`] are returned in lexicographic string order.

mod io;

pub use io::{
    format_operators, format_sensing_map, parse_operators, parse_sensing_map, read_operators,
    read_sensing_map, write_operators, write_sensing_map,
};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hermitian::{gaussian_hermitian, haar_random_unitary, HermitianMatrix};
use crate::rng::{derived_rng, rng_from_seed};

/// Tolerance for PSD-ness and completeness checks on measurement operators.
pub const OPERATOR_TOL: f64 = 1e-10;

/// A positive operator-valued measure with `Σ_μ E_μ = s·𝟙`.
#[derive(Clone, Debug)]
pub struct Povm {
    label: String,
    elements: Vec<HermitianMatrix>,
    normalization: f64,
}

impl Povm {
    /// Validates positivity of every element and proportionality of the sum to the identity.
    pub fn new(label: impl Into<String>, elements: Vec<HermitianMatrix>) -> Result<Self> {
        let label = label.into();
        let first = elements
            .first()
            .ok_or_else(|| Error::Domain("a POVM needs at least one element".into()))?;
        let d = first.dim();
        if elements.iter().any(|e| e.dim() != d) {
            return Err(Error::Domain(format!("POVM '{label}' mixes operator dimensions")));
        }
        for (k, e) in elements.iter().enumerate() {
            let min = e.min_eigenvalue()?;
            if min < -OPERATOR_TOL {
                return Err(Error::Domain(format!(
                    "element {k} of POVM '{label}' is not positive (smallest eigenvalue {min:.3e})"
                )));
            }
        }
        let normalization = identity_multiple(&elements).ok_or_else(|| {
            Error::Domain(format!("elements of POVM '{label}' do not sum to a multiple of the identity"))
        })?;
        Ok(Self {
            label,
            elements,
            normalization,
        })
    }

    /// Projective measurement onto the columns of a unitary matrix.
    pub fn from_orthonormal_basis(label: impl Into<String>, basis: &DMatrix<Complex64>) -> Result<Self> {
        let elements = (0..basis.ncols())
            .map(|j| HermitianMatrix::projector(&basis.column(j).into_owned()))
            .collect();
        Self::new(label, elements)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn elements(&self) -> &[HermitianMatrix] {
        &self.elements
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn dim(&self) -> usize {
        self.elements[0].dim()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Returns `s` when `Σ ops = s·𝟙` to `OPERATOR_TOL` (relative to the sum's size).
fn identity_multiple(ops: &[HermitianMatrix]) -> Option<f64> {
    let d = ops.first()?.dim();
    let sum = ops
        .iter()
        .fold(HermitianMatrix::zeros(d), |acc, e| &acc + e);
    let s = sum.trace() / d as f64;
    let gap = sum.frobenius_distance(&(HermitianMatrix::identity(d) * s));
    (s > OPERATOR_TOL && gap <= OPERATOR_TOL * sum.frobenius_norm().max(1.0)).then_some(s)
}

fn qubit_eigenvector(axis: char, up: bool) -> Result<[Complex64; 2]> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    Ok(match (axis, up) {
        ('z', true) => [one, zero],
        ('z', false) => [zero, one],
        ('x', true) => [Complex64::new(h, 0.0), Complex64::new(h, 0.0)],
        ('x', false) => [Complex64::new(h, 0.0), Complex64::new(-h, 0.0)],
        ('y', true) => [Complex64::new(h, 0.0), Complex64::new(0.0, h)],
        ('y', false) => [Complex64::new(h, 0.0), Complex64::new(0.0, -h)],
        (c, _) => return Err(Error::Parse(format!("invalid Pauli basis character '{c}'"))),
    })
}

/// Projective measurement in the product eigenbasis of `σ_{b_1} ⊗ … ⊗ σ_{b_n}`.
pub fn pauli_basis_povm(n: usize, basis: &str) -> Result<Povm> {
    let axes: Vec<char> = basis.chars().collect();
    if n == 0 {
        return Err(Error::Domain("qubit count must be at least 1".into()));
    }
    if axes.len() != n {
        return Err(Error::Parse(format!(
            "basis string '{basis}' has length {}, expected {n}",
            axes.len()
        )));
    }
    let mut per_qubit = Vec::with_capacity(n);
    for &a in &axes {
        per_qubit.push([qubit_eigenvector(a, true)?, qubit_eigenvector(a, false)?]);
    }
    let d = 1usize << n;
    let elements = (0..d)
        .map(|outcome| {
            let mut v = vec![Complex64::new(1.0, 0.0)];
            for (q, pair) in per_qubit.iter().enumerate() {
                let bit = (outcome >> (n - 1 - q)) & 1;
                let e = pair[bit];
                v = v.iter().flat_map(|&a| [a * e[0], a * e[1]]).collect();
            }
            HermitianMatrix::projector(&DVector::from_vec(v))
        })
        .collect();
    Povm::new(basis, elements)
}

/// All `3ⁿ` Pauli basis strings in lexicographic order.
pub fn all_pauli_bases(n: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    for _ in 0..n {
        out = out
            .iter()
            .flat_map(|s| ['x', 'y', 'z'].map(|c| format!("{s}{c}")))
            .collect();
    }
    out
}

/// `m_bases` distinct Pauli bases drawn uniformly without replacement, sorted.
///
/// The draw is a prefix of one seeded permutation, so for a fixed seed the
/// sets are nested as `m_bases` grows.
pub fn random_pauli_basis_set(n: usize, m_bases: usize, seed: u64) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::Domain("qubit count must be at least 1".into()));
    }
    let total = 3usize
        .checked_pow(n as u32)
        .ok_or_else(|| Error::Domain(format!("3^{n} overflows")))?;
    if m_bases == 0 || m_bases > total {
        return Err(Error::Domain(format!(
            "number of bases must lie in [1, {total}], got {m_bases}"
        )));
    }
    let all = all_pauli_bases(n);
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..total).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut chosen: Vec<String> = order[..m_bases].iter().map(|&i| all[i].clone()).collect();
    chosen.sort();
    Ok(chosen)
}

/// Contiguous run of operators that came from one POVM.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub label: String,
    pub len: usize,
    /// `c` with `Σ_{block} A_i = c·𝟙`, when the block is a (scaled) POVM.
    pub normalization: Option<f64>,
}

/// Linear map `M ↦ (Tr(A_i M))_i` defined by an ordered list of Hermitian operators.
///
/// The operators are cached as the rows of a real `m × d²` design matrix in
/// the isometric embedding of [`HermitianMatrix::to_real_vector`], so apply
/// and adjoint are plain real matrix–vector products.
#[derive(Clone, Debug)]
pub struct SensingMap {
    operators: Vec<HermitianMatrix>,
    dim: usize,
    design: DMatrix<f64>,
    blocks: Vec<Block>,
    normalization: Option<f64>,
}

impl SensingMap {
    /// A map from an arbitrary operator list, treated as a single block.
    pub fn new(operators: Vec<HermitianMatrix>) -> Result<Self> {
        let m = operators.len();
        Self::with_blocks(operators, vec![("custom".to_string(), m)])
    }

    /// A map whose operators are grouped into labelled consecutive blocks.
    pub fn with_blocks(operators: Vec<HermitianMatrix>, blocks: Vec<(String, usize)>) -> Result<Self> {
        let first = operators
            .first()
            .ok_or_else(|| Error::Domain("a sensing map needs at least one operator".into()))?;
        let dim = first.dim();
        if operators.iter().any(|a| a.dim() != dim) {
            return Err(Error::Domain("sensing operators have mismatched dimensions".into()));
        }
        let covered: usize = blocks.iter().map(|(_, n)| n).sum();
        if covered != operators.len() || blocks.iter().any(|(_, n)| *n == 0) {
            return Err(Error::Domain(format!(
                "block layout covers {covered} operators, map has {}",
                operators.len()
            )));
        }
        let n2 = HermitianMatrix::real_len(dim);
        let mut design = DMatrix::zeros(operators.len(), n2);
        let mut row = vec![0.0; n2];
        for (i, a) in operators.iter().enumerate() {
            a.write_real_vector(&mut row);
            for (k, v) in row.iter().enumerate() {
                design[(i, k)] = *v;
            }
        }
        let mut start = 0;
        let blocks = blocks
            .into_iter()
            .map(|(label, len)| {
                let normalization = identity_multiple(&operators[start..start + len]);
                start += len;
                Block {
                    label,
                    len,
                    normalization,
                }
            })
            .collect();
        let normalization = identity_multiple(&operators);
        Ok(Self {
            operators,
            dim,
            design,
            blocks,
            normalization,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of measurements `m`.
    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    pub fn operators(&self) -> &[HermitianMatrix] {
        &self.operators
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// `s` with `Σ_i A_i = s·𝟙`, if the operators sum to a multiple of the identity.
    pub fn normalization(&self) -> Option<f64> {
        self.normalization
    }

    /// The real `m × d²` design matrix.
    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    fn check_dim(&self, m: &HermitianMatrix) -> Result<()> {
        if m.dim() != self.dim {
            return Err(Error::Domain(format!(
                "matrix dimension {} does not match sensing map dimension {}",
                m.dim(),
                self.dim
            )));
        }
        Ok(())
    }

    /// `y_i = Tr(A_i M)`.
    pub fn apply(&self, m: &HermitianMatrix) -> Result<DVector<f64>> {
        self.check_dim(m)?;
        Ok(self.apply_unchecked(m))
    }

    pub(crate) fn apply_unchecked(&self, m: &HermitianMatrix) -> DVector<f64> {
        &self.design * m.to_real_vector()
    }

    /// `A†[y] = Σ_i y_i A_i`.
    pub fn adjoint(&self, y: &[f64]) -> Result<HermitianMatrix> {
        if y.len() != self.len() {
            return Err(Error::Domain(format!(
                "adjoint needs a vector of length {}, got {}",
                self.len(),
                y.len()
            )));
        }
        Ok(self.adjoint_unchecked(&DVector::from_column_slice(y)))
    }

    pub(crate) fn adjoint_unchecked(&self, y: &DVector<f64>) -> HermitianMatrix {
        let v = self.design.tr_mul(y);
        HermitianMatrix::from_real_vector(self.dim, v.as_slice()).expect("design width is d²")
    }

    /// Largest squared singular value of the map, by 50 power iterations on `A†A`.
    pub fn operator_norm_sq(&self) -> f64 {
        let n2 = self.design.ncols();
        let mut v = DVector::from_fn(n2, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
        let mut estimate = 0.0;
        for _ in 0..50 {
            let norm = v.norm();
            if norm == 0.0 {
                return 0.0;
            }
            v /= norm;
            let w = self.design.tr_mul(&(&self.design * &v));
            estimate = v.dot(&w);
            v = w;
        }
        estimate
    }

    /// Per-measurement factor converting record values (per-block
    /// probabilities) into this map's units: the block normalization for
    /// POVM blocks, 1 otherwise.
    pub fn unit_factors(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| std::iter::repeat_n(b.normalization.unwrap_or(1.0), b.len))
            .collect()
    }

    /// Converts a noise bound on record values into a bound in map units.
    pub fn epsilon_in_map_units(&self, epsilon: f64) -> f64 {
        let c = self
            .blocks
            .iter()
            .map(|b| b.normalization.unwrap_or(1.0).abs())
            .fold(0.0f64, f64::max);
        epsilon * c
    }

    /// Same operators multiplied by `factor`, layout kept.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let ops = self.operators.iter().map(|a| a * factor).collect();
        let layout = self.blocks.iter().map(|b| (b.label.clone(), b.len)).collect();
        Self::with_blocks(ops, layout)
    }
}

/// Concatenates POVMs into one map. With `rescale`, every element is divided
/// by the number of POVMs so that all `m` operators sum to `𝟙`.
pub fn sensing_map_from_povms(povms: &[Povm], rescale: bool) -> Result<SensingMap> {
    let first = povms
        .first()
        .ok_or_else(|| Error::Domain("need at least one POVM".into()))?;
    let d = first.dim();
    if let Some(p) = povms.iter().find(|p| p.dim() != d) {
        return Err(Error::Domain(format!(
            "POVM '{}' has dimension {}, expected {d}",
            p.label(),
            p.dim()
        )));
    }
    let factor = if rescale { 1.0 / povms.len() as f64 } else { 1.0 };
    let mut ops = Vec::new();
    let mut layout = Vec::new();
    for p in povms {
        layout.push((p.label().to_string(), p.len()));
        ops.extend(p.elements().iter().map(|e| e * factor));
    }
    SensingMap::with_blocks(ops, layout)
}

/// Pauli-basis sensing map for a list of basis strings.
pub fn pauli_sensing_map(n: usize, bases: &[String], rescale: bool) -> Result<SensingMap> {
    let povms = bases
        .iter()
        .map(|b| pauli_basis_povm(n, b))
        .collect::<Result<Vec<_>>>()?;
    sensing_map_from_povms(&povms, rescale)
}

/// Conjugated problem `D_μ = B⁻¹A_μB⁻¹`, `Z = B·M·B`, with `B = W^{1/2}` and `W = Σ h_μ A_μ`.
#[derive(Clone, Debug)]
pub struct AuxiliaryProblem {
    pub transformed_map: SensingMap,
    /// The Hermitian positive-definite factor `B` with `W = B·B`.
    pub conjugator: HermitianMatrix,
    pub inverse_conjugator: HermitianMatrix,
    /// `c = hᵀp`, the trace every consistent `Z` must have.
    pub fixed_trace: f64,
    pub h: Vec<f64>,
}

impl AuxiliaryProblem {
    /// `Z = B·M·B`.
    pub fn to_auxiliary(&self, m: &HermitianMatrix) -> HermitianMatrix {
        m.conjugate_by(&self.conjugator)
    }

    /// `M = B⁻¹·Z·B⁻¹`.
    pub fn from_auxiliary(&self, z: &HermitianMatrix) -> HermitianMatrix {
        z.conjugate_by(&self.inverse_conjugator)
    }
}

pub fn auxiliary_transform(map: &SensingMap, p: &[f64], h: &[f64]) -> Result<AuxiliaryProblem> {
    if p.len() != map.len() || h.len() != map.len() {
        return Err(Error::Domain(format!(
            "data and weight vectors must have length {}, got {} and {}",
            map.len(),
            p.len(),
            h.len()
        )));
    }
    let w = map.adjoint(h)?;
    let dec = w.eigen()?;
    let largest = dec.eigenvalues[0];
    let smallest = *dec.eigenvalues.last().expect("dim >= 1");
    if !(largest > 0.0) || smallest <= 1e-10 * largest {
        return Err(Error::Infeasible(format!(
            "premise hᵀE = W > 0 violated: eigenvalues of W span [{smallest:.3e}, {largest:.3e}]"
        )));
    }
    let sqrt: Vec<f64> = dec.eigenvalues.iter().map(|l| l.sqrt()).collect();
    let inv_sqrt: Vec<f64> = sqrt.iter().map(|s| 1.0 / s).collect();
    let conjugator = HermitianMatrix::from_spectrum(&sqrt, &dec.eigenvectors);
    let inverse_conjugator = HermitianMatrix::from_spectrum(&inv_sqrt, &dec.eigenvectors);
    let ops = map
        .operators()
        .iter()
        .map(|a| a.conjugate_by(&inverse_conjugator))
        .collect();
    let layout = map.blocks().iter().map(|b| (b.label.clone(), b.len)).collect();
    Ok(AuxiliaryProblem {
        transformed_map: SensingMap::with_blocks(ops, layout)?,
        conjugator,
        inverse_conjugator,
        fixed_trace: h.iter().zip(p).map(|(a, b)| a * b).sum(),
        h: h.to_vec(),
    })
}

/// Sampled lower bound on the restricted isometry constant `δ_r`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RipEstimate {
    pub r: usize,
    pub samples: usize,
    /// `max(1 − min_ratio, max_ratio − 1)`; a lower bound on the true constant, never a certificate.
    pub delta_lower: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// Random unit-Frobenius Hermitian matrix of rank ≤ r: a Gaussian Hermitian
/// matrix compressed to a Haar-random r-dimensional subspace.
fn random_low_rank_hermitian(d: usize, r: usize, seed: u64) -> HermitianMatrix {
    let mut rng = rng_from_seed(seed);
    let u = haar_random_unitary(d, &mut rng);
    let q = u.columns(0, r).into_owned();
    let g = gaussian_hermitian(r, &mut rng);
    let m = HermitianMatrix::new(&q * g.as_matrix() * q.adjoint()).expect("square");
    let n = m.frobenius_norm();
    m * (1.0 / n)
}

/// Monte-Carlo estimate of the isometry constant from `samples` random rank-`r` matrices.
///
/// Sample `i` is seeded from `(seed, i)`, so growing `samples` under a fixed
/// seed only adds draws and the estimate can only grow.
pub fn estimate_rip(map: &SensingMap, r: usize, samples: usize, seed: u64) -> Result<RipEstimate> {
    let d = map.dim();
    if r == 0 || r > d {
        return Err(Error::Domain(format!("rank must lie in [1, {d}], got {r}")));
    }
    if samples == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    let ratios: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let m = random_low_rank_hermitian(d, r, crate::rng::derive_seed(seed, &[i as u64]));
            map.apply_unchecked(&m).norm_squared()
        })
        .collect();
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RipEstimate {
        r,
        samples,
        delta_lower: (1.0 - min_ratio).max(max_ratio - 1.0).max(0.0),
        min_ratio,
        max_ratio,
    })
}

/// Orthonormal basis of the Hermitian matrices: `E_kk`, `(E_jk + E_kj)/√2`, `i(E_jk − E_kj)/√2`.
pub fn orthonormal_hermitian_basis(d: usize) -> Vec<HermitianMatrix> {
    let n2 = HermitianMatrix::real_len(d);
    (0..n2)
        .map(|k| {
            let mut v = vec![0.0; n2];
            v[k] = 1.0;
            HermitianMatrix::from_real_vector(d, &v).expect("length d²")
        })
        .collect()
}

/// Random orthonormal-basis measurements: `count` Haar-random projective POVMs.
pub fn random_basis_povms(d: usize, count: usize, seed: u64) -> Result<Vec<Povm>> {
    (0..count)
        .map(|k| {
            let mut rng = derived_rng(seed, &[k as u64]);
            Povm::from_orthonormal_basis(format!("haar{k}"), &haar_random_unitary(d, &mut rng))
        })
        .collect()
}
