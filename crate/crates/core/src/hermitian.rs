//! Dense complex Hermitian matrices and the spectral operations built on them:
//! cone projections, norms, rank splits and Haar-random states.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SeededRng};

/// Relative cutoff below which an eigenvalue counts as zero for rank purposes.
pub const RANK_CUTOFF: f64 = 1e-10;

/// A d×d complex Hermitian matrix.
///
/// Construction symmetrizes the input (`(M + M†)/2`), so round-off left by
/// iterative solvers never breaks Hermiticity downstream.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix {
    data: DMatrix<Complex64>,
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues in descending order.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Unitary matrix whose columns are the eigenvectors, in the order of `eigenvalues`.
    pub eigenvectors: DMatrix<Complex64>,
}

/// Split of a matrix into its `r` spectrally-largest components and the rest.
#[derive(Clone, Debug)]
pub struct RankSplit {
    pub head: HermitianMatrix,
    pub tail: HermitianMatrix,
    pub r: usize,
}

/// Spectral norms of a Hermitian matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    pub frobenius: f64,
    pub nuclear: f64,
    pub trace: f64,
}

impl HermitianMatrix {
    /// Builds a Hermitian matrix from a square complex matrix, symmetrizing it.
    pub fn new(m: DMatrix<Complex64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Domain(format!(
                "matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::Domain("matrix dimension must be at least 1".into()));
        }
        let adj = m.adjoint();
        Ok(Self::from_hermitian_unchecked((m + adj).scale(0.5)))
    }

    fn from_hermitian_unchecked(data: DMatrix<Complex64>) -> Self {
        let mut data = data;
        for i in 0..data.nrows() {
            data[(i, i)].im = 0.0;
        }
        Self { data }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            data: DMatrix::zeros(d, d),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            data: DMatrix::identity(d, d),
        }
    }

    /// `I/d`, the maximally mixed state.
    pub fn maximally_mixed(d: usize) -> Self {
        Self::identity(d) * (1.0 / d as f64)
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut data = DMatrix::zeros(d, d);
        for (i, &v) in diag.iter().enumerate() {
            data[(i, i)] = Complex64::new(v, 0.0);
        }
        Self { data }
    }

    /// The rank-one projector `|ψ⟩⟨ψ|` (no normalization applied).
    pub fn projector(psi: &DVector<Complex64>) -> Self {
        Self::from_hermitian_unchecked(psi * psi.adjoint())
    }

    /// Builds `U·diag(λ)·U†`.
    pub fn from_spectrum(eigenvalues: &[f64], eigenvectors: &DMatrix<Complex64>) -> Self {
        let d = eigenvectors.nrows();
        let mut scaled = eigenvectors.clone();
        for (j, &l) in eigenvalues.iter().enumerate() {
            for i in 0..d {
                scaled[(i, j)] *= l;
            }
        }
        let data = scaled * eigenvectors.adjoint();
        let adj = data.adjoint();
        Self::from_hermitian_unchecked((data + adj).scale(0.5))
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.data
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.data[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.data[(i, i)].re).sum()
    }

    /// `Re Tr(A·B)`, the Hilbert-Schmidt inner product of two Hermitian matrices.
    pub fn inner(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    /// Frobenius norm computed from the entries (no decomposition).
    pub fn frobenius_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Length of the real vectorization, `d²`.
    pub fn real_len(d: usize) -> usize {
        d * d
    }

    /// Isometric real embedding: diagonal entries, then `√2·Re` and `√2·Im` of
    /// the strict upper triangle in row-major order. `⟨vec A, vec B⟩ = Tr(AB)`.
    pub fn to_real_vector(&self) -> DVector<f64> {
        let d = self.dim();
        let mut v = DVector::zeros(d * d);
        self.write_real_vector(v.as_mut_slice());
        v
    }

    pub(crate) fn write_real_vector(&self, out: &mut [f64]) {
        let d = self.dim();
        let s = std::f64::consts::SQRT_2;
        for (i, slot) in out.iter_mut().take(d).enumerate() {
            *slot = self.data[(i, i)].re;
        }
        let mut k = d;
        for i in 0..d {
            for j in (i + 1)..d {
                let z = self.data[(i, j)];
                out[k] = s * z.re;
                out[k + 1] = s * z.im;
                k += 2;
            }
        }
    }

    /// Inverse of [`HermitianMatrix::to_real_vector`].
    pub fn from_real_vector(d: usize, v: &[f64]) -> Result<Self> {
        if v.len() != d * d || d == 0 {
            return Err(Error::Domain(format!(
                "real vector of length {} does not describe a {d}x{d} Hermitian matrix",
                v.len()
            )));
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut data = DMatrix::zeros(d, d);
        for i in 0..d {
            data[(i, i)] = Complex64::new(v[i], 0.0);
        }
        let mut k = d;
        for i in 0..d {
            for j in (i + 1)..d {
                let z = Complex64::new(s * v[k], s * v[k + 1]);
                data[(i, j)] = z;
                data[(j, i)] = z.conj();
                k += 2;
            }
        }
        Ok(Self { data })
    }

    /// `⟨ψ|M|ψ⟩` for a vector `ψ`.
    pub fn expectation(&self, psi: &DVector<Complex64>) -> f64 {
        (psi.adjoint() * &self.data * psi)[(0, 0)].re
    }

    /// Conjugation `B·M·B` by another Hermitian matrix.
    pub fn conjugate_by(&self, b: &Self) -> Self {
        Self::from_hermitian_unchecked(&b.data * &self.data * &b.data)
            .resymmetrized()
    }

    fn resymmetrized(self) -> Self {
        let adj = self.data.adjoint();
        Self::from_hermitian_unchecked((self.data + adj).scale(0.5))
    }

    /// Spectral decomposition, eigenvalues descending.
    pub fn eigen(&self) -> Result<SpectralDecomposition> {
        if !self.is_finite() {
            return Err(Error::Numerical(format!(
                "spectral decomposition of a {}x{} matrix with non-finite entries",
                self.dim(),
                self.dim()
            )));
        }
        let d = self.dim();
        let eig = nalgebra::SymmetricEigen::try_new(self.data.clone(), f64::EPSILON, 1000 * d.max(10))
            .ok_or_else(|| {
                Error::Numerical(format!(
                    "symmetric eigensolver did not converge (d = {d}, frobenius norm = {:.3e})",
                    self.frobenius_norm()
                ))
            })?;
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "eigensolver produced non-finite eigenvalues (d = {d}, frobenius norm = {:.3e})",
                self.frobenius_norm()
            )));
        }
        let mut eigenvectors = DMatrix::zeros(d, d);
        for (new, &old) in order.iter().enumerate() {
            eigenvectors.set_column(new, &eig.eigenvectors.column(old));
        }
        Ok(SpectralDecomposition {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(self.eigen()?.eigenvalues)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(*self.eigenvalues()?.last().expect("dim >= 1"))
    }

    /// Applies `f` to every eigenvalue.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let dec = self.eigen()?;
        let mapped: Vec<f64> = dec.eigenvalues.iter().map(|&l| f(l)).collect();
        Ok(Self::from_spectrum(&mapped, &dec.eigenvectors))
    }

    /// Number of eigenvalues whose magnitude exceeds `RANK_CUTOFF` times the largest.
    pub fn numerical_rank(&self) -> Result<usize> {
        Ok(numerical_rank_of(&self.eigenvalues()?))
    }
}

pub(crate) fn numerical_rank_of(eigenvalues: &[f64]) -> usize {
    let max = eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    if max == 0.0 {
        return 0;
    }
    eigenvalues
        .iter()
        .filter(|l| l.abs() > RANK_CUTOFF * max)
        .count()
}

impl fmt::Display for HermitianMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|j| {
                    let z = self.data[(i, j)];
                    format!("{:+.6}{:+.6}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl Add for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn add(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix {
            data: &self.data + &rhs.data,
        }
    }
}

impl Sub for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn sub(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix {
            data: &self.data - &rhs.data,
        }
    }
}

impl Add for HermitianMatrix {
    type Output = HermitianMatrix;
    fn add(self, rhs: HermitianMatrix) -> HermitianMatrix {
        &self + &rhs
    }
}

impl Sub for HermitianMatrix {
    type Output = HermitianMatrix;
    fn sub(self, rhs: HermitianMatrix) -> HermitianMatrix {
        &self - &rhs
    }
}

impl Mul<f64> for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn mul(self, rhs: f64) -> HermitianMatrix {
        HermitianMatrix {
            data: self.data.map(|z| z * rhs),
        }
    }
}

impl Mul<f64> for HermitianMatrix {
    type Output = HermitianMatrix;
    fn mul(self, rhs: f64) -> HermitianMatrix {
        &self * rhs
    }
}

impl Neg for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn neg(self) -> HermitianMatrix {
        self * -1.0
    }
}

impl HermitianMatrix {
    /// `self + alpha·other`.
    pub fn add_scaled(&self, alpha: f64, other: &Self) -> Self {
        let mut data = self.data.clone();
        for (a, b) in data.iter_mut().zip(other.data.iter()) {
            *a += b * alpha;
        }
        Self { data }
    }
}

/// Frobenius-nearest positive-semidefinite matrix: negative eigenvalues clipped to zero.
pub fn project_psd(m: &HermitianMatrix) -> Result<HermitianMatrix> {
    m.map_spectrum(|l| l.max(0.0))
}

/// Euclidean projection of `v` onto `{x ≥ 0, Σx = total}` by sorting-based water-filling.
pub fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut shift = (sorted[0] - total) / 1.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - total) / (k + 1) as f64;
        if u - candidate > 0.0 {
            shift = candidate;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - shift).max(0.0)).collect()
}

/// Frobenius-nearest matrix in `{X ⪰ 0, Tr X = t}`.
pub fn project_psd_fixed_trace(m: &HermitianMatrix, t: f64) -> Result<HermitianMatrix> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!(
            "trace constraint must be a finite nonnegative number, got {t}"
        )));
    }
    let dec = m.eigen()?;
    let projected = project_simplex(&dec.eigenvalues, t);
    Ok(HermitianMatrix::from_spectrum(&projected, &dec.eigenvectors))
}

/// Shrinks every eigenvalue toward zero by `threshold`; the proximal map of
/// `threshold·‖·‖_*` on Hermitian matrices.
pub fn soft_threshold(m: &HermitianMatrix, threshold: f64) -> Result<HermitianMatrix> {
    m.map_spectrum(|l| shrink(l, threshold))
}

pub(crate) fn shrink(l: f64, threshold: f64) -> f64 {
    l.signum() * (l.abs() - threshold).max(0.0)
}

pub fn norms(m: &HermitianMatrix) -> Result<Norms> {
    Ok(norms_from_eigenvalues(&m.eigenvalues()?))
}

pub(crate) fn norms_from_eigenvalues(eigenvalues: &[f64]) -> Norms {
    Norms {
        frobenius: eigenvalues.iter().map(|l| l * l).sum::<f64>().sqrt(),
        nuclear: eigenvalues.iter().map(|l| l.abs()).sum(),
        trace: eigenvalues.iter().sum(),
    }
}

/// Splits `m` into the part carried by its `r` largest-magnitude eigenvalues and the remainder.
///
/// Ties in magnitude keep the descending-eigenvalue order (stable sort).
pub fn rank_split(m: &HermitianMatrix, r: usize) -> Result<RankSplit> {
    let d = m.dim();
    if r == 0 || r > d {
        return Err(Error::Domain(format!("rank split needs 1 <= r <= {d}, got r = {r}")));
    }
    let dec = m.eigen()?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| dec.eigenvalues[b].abs().total_cmp(&dec.eigenvalues[a].abs()));
    let mut head_vals = vec![0.0; d];
    let mut tail_vals = dec.eigenvalues.clone();
    for &i in &order[..r] {
        head_vals[i] = dec.eigenvalues[i];
        tail_vals[i] = 0.0;
    }
    Ok(RankSplit {
        head: HermitianMatrix::from_spectrum(&head_vals, &dec.eigenvectors),
        tail: HermitianMatrix::from_spectrum(&tail_vals, &dec.eigenvectors),
        r,
    })
}

pub(crate) fn complex_normal(rng: &mut SeededRng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Haar-random unit vector in `C^d`.
pub fn haar_random_vector(d: usize, rng: &mut SeededRng) -> DVector<Complex64> {
    let v = DVector::from_fn(d, |_, _| complex_normal(rng));
    let n = v.norm();
    v / Complex64::new(n, 0.0)
}

/// `|ψ⟩⟨ψ|` for a Haar-random `ψ`; deterministic in `seed`.
pub fn haar_random_pure_state(d: usize, seed: u64) -> Result<HermitianMatrix> {
    if d == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    Ok(HermitianMatrix::projector(&haar_random_vector(d, &mut rng)))
}

/// Random density matrix of rank `r`: `G·G†/Tr(G·G†)` with `G` a d×r complex Gaussian.
pub fn random_density_matrix(d: usize, r: usize, rng: &mut SeededRng) -> Result<HermitianMatrix> {
    if d == 0 || r == 0 || r > d {
        return Err(Error::Domain(format!("need 1 <= r <= d, got d = {d}, r = {r}")));
    }
    let g = DMatrix::from_fn(d, r, |_, _| complex_normal(rng));
    let m = HermitianMatrix::new(&g * g.adjoint())?;
    let t = m.trace();
    Ok(m * (1.0 / t))
}

/// Haar-random unitary via QR of a complex Ginibre matrix, columns phase-fixed.
pub fn haar_random_unitary(d: usize, rng: &mut SeededRng) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(d, d, |_, _| complex_normal(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..d {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Random Hermitian matrix with i.i.d. Gaussian entries (GUE up to scale).
pub fn gaussian_hermitian(d: usize, rng: &mut SeededRng) -> HermitianMatrix {
    let g = DMatrix::from_fn(d, d, |_, _| complex_normal(rng));
    HermitianMatrix::new(g).expect("square, nonempty")
}

/// Fidelity `(Tr √(√σ ρ √σ))²`; for a pure `σ = |ψ⟩⟨ψ|` this is `⟨ψ|ρ|ψ⟩`.
pub fn fidelity(reference: &HermitianMatrix, rho: &HermitianMatrix) -> Result<f64> {
    let dec = reference.eigen()?;
    if numerical_rank_of(&dec.eigenvalues) <= 1 {
        let psi = dec.eigenvectors.column(0).into_owned();
        return Ok(dec.eigenvalues[0] * rho.expectation(&psi));
    }
    let sqrt_ref = reference.map_spectrum(|l| l.max(0.0).sqrt())?;
    let inner = rho.conjugate_by(&sqrt_ref);
    let vals = inner.eigenvalues()?;
    // square roots amplify round-off in the null space
    let floor = 1e-13 * vals[0].abs().max(f64::MIN_POSITIVE);
    let root_trace: f64 = vals.iter().filter(|&&l| l > floor).map(|l| l.sqrt()).sum();
    Ok(root_trace * root_trace)
}

/// `1 − F(reference, ρ)`, clipped to `[0, 1]`. Estimates that are not unit-trace
/// states can push the raw value outside that range.
pub fn infidelity(reference: &HermitianMatrix, rho: &HermitianMatrix) -> Result<f64> {
    Ok((1.0 - fidelity(reference, rho)?).clamp(0.0, 1.0))
}
