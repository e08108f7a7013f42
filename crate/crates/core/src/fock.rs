//! Composite Hilbert spaces of qubits and truncated bosonic modes, with the
//! operators and states that live on them.
//!
//! Basis convention: subsystems are ordered as given to [`HilbertSpace::new`]
//! (qubits first, then resonator modes, for every model built by this crate),
//! the composite index is row-major over that order, and each qubit uses the
//! basis order (`|g>`, `|e>`) so that `sigma_z = diag(-1, +1)`.

use ndarray::{Array1, Array2};
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{Error, Result};
use crate::scalar::{c, imag_unit, re, Real, C};

/// Index of `|g>` in a qubit factor.
pub const GROUND: usize = 0;
/// Index of `|e>` in a qubit factor.
pub const EXCITED: usize = 1;

/// Largest Poisson weight a truncated coherent state may discard.
pub const TRUNCATION_TOLERANCE: f64 = 1e-9;

const HERMITIAN_TOL: f64 = 1e-12;

/// Ordered tensor product of finite-dimensional factors.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HilbertSpace {
    dims: Vec<usize>,
}

impl HilbertSpace {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidDimension("empty subsystem list".into()));
        }
        if let Some(&d) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidDimension(format!("subsystem dimension {d} < 2")));
        }
        Ok(Self { dims })
    }

    pub fn qubit() -> Self {
        Self { dims: vec![2] }
    }

    pub fn mode(cutoff: usize) -> Result<Self> {
        Self::new(vec![cutoff])
    }

    /// Qubit followed by one resonator: the single-qubit setup.
    pub fn single_qubit_resonator(cutoff: usize) -> Result<Self> {
        Self::new(vec![2, cutoff])
    }

    /// Qubit 1, qubit 2, resonator 1, resonator 2.
    pub fn two_qubit_resonators(cutoff: usize) -> Result<Self> {
        Self::new(vec![2, 2, cutoff, cutoff])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_subsystems(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn tensor(&self, other: &HilbertSpace) -> HilbertSpace {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        HilbertSpace { dims }
    }

    /// Multi-index of a composite basis index.
    pub fn unflatten(&self, mut index: usize) -> Vec<usize> {
        let mut digits = vec![0; self.dims.len()];
        for (slot, &d) in digits.iter_mut().zip(&self.dims).rev() {
            *slot = index % d;
            index /= d;
        }
        digits
    }

    pub fn flatten(&self, digits: &[usize]) -> usize {
        digits.iter().zip(&self.dims).fold(0, |acc, (&x, &d)| acc * d + x)
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.dims.len() {
            return Err(Error::SubsystemOutOfRange {
                index,
                count: self.dims.len(),
            });
        }
        Ok(())
    }
}

/// Dense operator on a [`HilbertSpace`].
#[derive(Debug, Clone)]
pub struct Operator<T: Real> {
    space: HilbertSpace,
    matrix: Array2<C<T>>,
    hermitian: bool,
}

impl<T: Real> Operator<T> {
    pub fn new(space: HilbertSpace, matrix: Array2<C<T>>) -> Result<Self> {
        let d = space.dim();
        if matrix.dim() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: matrix.nrows(),
            });
        }
        Ok(Self {
            space,
            matrix,
            hermitian: false,
        })
    }

    fn tagged(space: HilbertSpace, matrix: Array2<C<T>>, hermitian: bool) -> Self {
        debug_assert_eq!(matrix.nrows(), space.dim());
        Self {
            space,
            matrix,
            hermitian,
        }
    }

    pub fn identity(space: &HilbertSpace) -> Self {
        Self::tagged(space.clone(), dense::identity(space.dim()), true)
    }

    pub fn zeros(space: &HilbertSpace) -> Self {
        let d = space.dim();
        Self::tagged(space.clone(), Array2::zeros((d, d)), true)
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &Array2<C<T>> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Whether a constructor guaranteed Hermiticity.
    pub fn is_tagged_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn hermiticity_defect(&self) -> T {
        dense::max_abs_diff(&self.matrix, &dense::dagger(&self.matrix))
    }

    pub fn dagger(&self) -> Self {
        Self::tagged(self.space.clone(), dense::dagger(&self.matrix), self.hermitian)
    }

    pub fn scale(&self, z: C<T>) -> Self {
        let keep = self.hermitian && z.im == T::zero();
        Self::tagged(self.space.clone(), self.matrix.mapv(|x| x * z), keep)
    }

    pub fn scale_real(&self, x: T) -> Self {
        self.scale(re(x))
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        self.check_same(rhs)?;
        Ok(Self::tagged(
            self.space.clone(),
            dense::sparse_lhs_dot(&self.matrix, &rhs.matrix),
            false,
        ))
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.check_same(rhs)?;
        Ok(Self::tagged(
            self.space.clone(),
            &self.matrix + &rhs.matrix,
            self.hermitian && rhs.hermitian,
        ))
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.check_same(rhs)?;
        Ok(Self::tagged(
            self.space.clone(),
            &self.matrix - &rhs.matrix,
            self.hermitian && rhs.hermitian,
        ))
    }

    pub fn commutator(&self, rhs: &Self) -> Result<Self> {
        self.matmul(rhs)?.sub(&rhs.matmul(self)?)
    }

    /// Tensor product with the factors of `rhs` appended after those of `self`.
    pub fn kron(&self, rhs: &Self) -> Self {
        Self::tagged(
            self.space.tensor(&rhs.space),
            dense::kron(&self.matrix, &rhs.matrix),
            self.hermitian && rhs.hermitian,
        )
    }

    pub fn max_abs(&self) -> T {
        dense::max_abs(&self.matrix)
    }

    pub fn max_abs_diff(&self, rhs: &Self) -> T {
        dense::max_abs_diff(&self.matrix, &rhs.matrix)
    }

    pub fn apply(&self, state: &PureState<T>) -> Result<PureState<T>> {
        self.check_space(&state.space)?;
        Ok(PureState::unnormalized(
            state.space.clone(),
            self.matrix.dot(&state.amplitudes),
        ))
    }

    /// Marks an operator as Hermitian after verifying it is.
    pub fn assert_hermitian(mut self) -> Result<Self> {
        let defect = self.hermiticity_defect();
        if defect > T::lit(HERMITIAN_TOL) * self.max_abs().max(T::one()) {
            return Err(Error::InvalidParameter {
                name: "operator",
                reason: format!("not Hermitian (defect {defect})"),
            });
        }
        self.hermitian = true;
        Ok(self)
    }

    fn check_same(&self, rhs: &Self) -> Result<()> {
        self.check_space(&rhs.space)
    }

    fn check_space(&self, space: &HilbertSpace) -> Result<()> {
        if &self.space != space {
            return Err(Error::DimensionMismatch {
                expected: self.space.dim(),
                found: space.dim(),
            });
        }
        Ok(())
    }
}

/// State vector, possibly unnormalized (carrying its squared norm).
#[derive(Debug, Clone)]
pub struct PureState<T: Real> {
    space: HilbertSpace,
    amplitudes: Array1<C<T>>,
    norm_sq: T,
    normalized: bool,
}

impl<T: Real> PureState<T> {
    /// Normalizes the given amplitudes.
    pub fn new(space: HilbertSpace, amplitudes: Array1<C<T>>) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                found: amplitudes.len(),
            });
        }
        let mut s = Self::unnormalized(space, amplitudes);
        s.normalize()?;
        Ok(s)
    }

    pub fn unnormalized(space: HilbertSpace, amplitudes: Array1<C<T>>) -> Self {
        let norm_sq = amplitudes.iter().map(|z| z.norm_sqr()).sum();
        Self {
            space,
            amplitudes,
            norm_sq,
            normalized: false,
        }
    }

    pub fn basis(space: &HilbertSpace, digits: &[usize]) -> Result<Self> {
        if digits.len() != space.num_subsystems() {
            return Err(Error::DimensionMismatch {
                expected: space.num_subsystems(),
                found: digits.len(),
            });
        }
        for (i, (&x, &d)) in digits.iter().zip(space.dims()).enumerate() {
            if x >= d {
                return Err(Error::SubsystemOutOfRange { index: i, count: d });
            }
        }
        let mut amps = Array1::zeros(space.dim());
        amps[space.flatten(digits)] = C::one();
        Self::new(space.clone(), amps)
    }

    pub fn vacuum(cutoff: usize) -> Result<Self> {
        Self::basis(&HilbertSpace::mode(cutoff)?, &[0])
    }

    /// Normalized qubit state `q_g|g> + q_e|e>`.
    pub fn qubit(q_g: C<T>, q_e: C<T>) -> Result<Self> {
        Self::new(HilbertSpace::qubit(), Array1::from(vec![q_g, q_e]))
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn amplitudes(&self) -> &Array1<C<T>> {
        &self.amplitudes
    }

    pub(crate) fn refresh_norm(&mut self) {
        self.norm_sq = self.amplitudes.iter().map(|z| z.norm_sqr()).sum();
    }

    pub fn norm_sq(&self) -> T {
        self.norm_sq
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn normalize(&mut self) -> Result<()> {
        self.refresh_norm();
        if !(self.norm_sq > T::zero()) || !self.norm_sq.is_finite() {
            return Err(Error::ZeroNorm);
        }
        let inv = re(T::one() / self.norm_sq.sqrt());
        self.amplitudes.mapv_inplace(|z| z * inv);
        self.norm_sq = T::one();
        self.normalized = true;
        Ok(())
    }

    pub fn normalized(&self) -> Result<Self> {
        let mut s = self.clone();
        s.normalize()?;
        Ok(s)
    }

    pub fn inner(&self, other: &Self) -> C<T> {
        self.amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .fold(C::zero(), |acc, (a, b)| acc + a.conj() * b)
    }

    pub fn kron(&self, other: &Self) -> Self {
        let mut s = Self::unnormalized(
            self.space.tensor(&other.space),
            dense::kron_vec(&self.amplitudes, &other.amplitudes),
        );
        s.normalized = self.normalized && other.normalized;
        s
    }

    /// `<psi|op|psi> / <psi|psi>`.
    pub fn expect(&self, op: &Operator<T>) -> Result<C<T>> {
        op.check_space(&self.space)?;
        let v = op.matrix.dot(&self.amplitudes);
        let num = self
            .amplitudes
            .iter()
            .zip(v.iter())
            .fold(C::<T>::zero(), |acc, (a, b)| acc + a.conj() * b);
        Ok(num / re(self.norm_sq))
    }

    /// Distance to `other` after removing the relative global phase.
    pub fn phase_aligned_distance(&self, other: &Self) -> T {
        let ov = other.inner(self);
        let ph = if ov.norm() > T::zero() {
            ov / re(ov.norm())
        } else {
            C::one()
        };
        self.amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .map(|(a, b)| (*a - *b * ph).norm_sqr())
            .sum::<T>()
            .sqrt()
    }

    pub fn to_mixed(&self) -> MixedState<T> {
        let n = self.amplitudes.len();
        let mut m = Array2::zeros((n, n));
        let inv = T::one() / self.norm_sq;
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.amplitudes[i] * self.amplitudes[j].conj() * re(inv);
            }
        }
        MixedState {
            space: self.space.clone(),
            matrix: m,
        }
    }
}

/// Density matrix on a [`HilbertSpace`]. Not necessarily trace one while a
/// trajectory engine is carrying it unnormalized between jumps.
#[derive(Debug, Clone)]
pub struct MixedState<T: Real> {
    space: HilbertSpace,
    matrix: Array2<C<T>>,
}

impl<T: Real> MixedState<T> {
    /// Validated density matrix: Hermitian, unit trace, no eigenvalue below
    /// `-1e-10`.
    pub fn new(space: HilbertSpace, matrix: Array2<C<T>>) -> Result<Self> {
        let d = space.dim();
        if matrix.dim() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: matrix.nrows(),
            });
        }
        let defect = dense::max_abs_diff(&matrix, &dense::dagger(&matrix));
        if defect > T::lit(HERMITIAN_TOL) {
            return Err(Error::InvalidParameter {
                name: "density matrix",
                reason: format!("not Hermitian (defect {defect})"),
            });
        }
        let tr = dense::trace(&matrix);
        if (tr - C::one()).norm() > T::lit(1e-10) {
            return Err(Error::InvalidParameter {
                name: "density matrix",
                reason: format!("trace {tr} != 1"),
            });
        }
        let s = Self { space, matrix };
        let min = s.min_eigenvalue();
        if min < T::lit(-1e-10) {
            return Err(Error::InvalidParameter {
                name: "density matrix",
                reason: format!("negative eigenvalue {min}"),
            });
        }
        Ok(s)
    }

    pub(crate) fn from_matrix_unchecked(space: HilbertSpace, matrix: Array2<C<T>>) -> Self {
        Self { space, matrix }
    }

    pub fn maximally_mixed(space: &HilbertSpace) -> Self {
        let d = space.dim();
        Self {
            space: space.clone(),
            matrix: Array2::from_diag_elem(d, re(T::one() / T::from_count(d))),
        }
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &Array2<C<T>> {
        &self.matrix
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut Array2<C<T>> {
        &mut self.matrix
    }

    pub fn trace(&self) -> T {
        dense::trace(&self.matrix).re
    }

    pub fn normalize(&mut self) -> Result<()> {
        let tr = self.trace();
        if !(tr > T::zero()) || !tr.is_finite() {
            return Err(Error::ZeroNorm);
        }
        let inv = re(T::one() / tr);
        self.matrix.mapv_inplace(|z| z * inv);
        Ok(())
    }

    pub fn normalized(&self) -> Result<Self> {
        let mut s = self.clone();
        s.normalize()?;
        Ok(s)
    }

    /// Replaces the matrix by `(rho + rho^dagger)/2`.
    pub fn symmetrize(&mut self) {
        let n = self.matrix.nrows();
        let half = re(T::lit(0.5));
        for i in 0..n {
            self.matrix[(i, i)] = re(self.matrix[(i, i)].re);
            for j in (i + 1)..n {
                let avg = (self.matrix[(i, j)] + self.matrix[(j, i)].conj()) * half;
                self.matrix[(i, j)] = avg;
                self.matrix[(j, i)] = avg.conj();
            }
        }
    }

    /// `tr(op rho) / tr(rho)`.
    pub fn expect(&self, op: &Operator<T>) -> Result<C<T>> {
        op.check_space(&self.space)?;
        let n = self.matrix.nrows();
        let mut acc = C::<T>::zero();
        for i in 0..n {
            for k in 0..n {
                let o = op.matrix[(i, k)];
                if !o.is_zero() {
                    acc += o * self.matrix[(k, i)];
                }
            }
        }
        Ok(acc / re(self.trace()))
    }

    pub fn purity(&self) -> T {
        let tr = self.trace();
        self.matrix.iter().map(|z| z.norm_sqr()).sum::<T>() / (tr * tr)
    }

    pub fn hermiticity_defect(&self) -> T {
        dense::max_abs_diff(&self.matrix, &dense::dagger(&self.matrix))
    }

    pub fn eigenvalues(&self) -> Vec<T> {
        dense::hermitian_eigenvalues(&self.matrix)
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues().first().copied().unwrap_or_else(T::zero)
    }

    pub fn kron(&self, other: &Self) -> Self {
        Self {
            space: self.space.tensor(&other.space),
            matrix: dense::kron(&self.matrix, &other.matrix),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        dense::max_abs_diff(&self.matrix, &other.matrix)
    }

    /// Conjugates the state by a unitary: `U rho U^dagger`.
    pub fn conjugate_by(&self, u: &Operator<T>) -> Result<Self> {
        u.check_space(&self.space)?;
        let m = u.matrix.dot(&self.matrix).dot(&dense::dagger(&u.matrix));
        Ok(Self {
            space: self.space.clone(),
            matrix: m,
        })
    }
}

/// Either kind of state, as produced by the trajectory engines.
#[derive(Debug, Clone)]
pub enum QuantumState<T: Real> {
    Pure(PureState<T>),
    Mixed(MixedState<T>),
}

impl<T: Real> QuantumState<T> {
    pub fn space(&self) -> &HilbertSpace {
        match self {
            Self::Pure(s) => s.space(),
            Self::Mixed(s) => s.space(),
        }
    }

    pub fn expect(&self, op: &Operator<T>) -> Result<C<T>> {
        match self {
            Self::Pure(s) => s.expect(op),
            Self::Mixed(s) => s.expect(op),
        }
    }

    /// Density matrix, normalized to unit trace.
    pub fn to_mixed(&self) -> MixedState<T> {
        match self {
            Self::Pure(s) => s.to_mixed(),
            Self::Mixed(s) => s.normalized().unwrap_or_else(|_| s.clone()),
        }
    }

    pub fn as_pure(&self) -> Option<&PureState<T>> {
        match self {
            Self::Pure(s) => Some(s),
            Self::Mixed(_) => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Single-factor constructors
// ---------------------------------------------------------------------------

fn check_cutoff(cutoff: usize) -> Result<()> {
    if cutoff < 2 {
        return Err(Error::InvalidDimension(format!("Fock cutoff {cutoff} < 2")));
    }
    Ok(())
}

/// Bosonic lowering operator on the Fock levels `0..cutoff`.
pub fn fock_annihilation<T: Real>(cutoff: usize) -> Result<Operator<T>> {
    check_cutoff(cutoff)?;
    let mut m = Array2::zeros((cutoff, cutoff));
    for n in 1..cutoff {
        m[(n - 1, n)] = re(T::from_count(n).sqrt());
    }
    Ok(Operator::tagged(HilbertSpace::mode(cutoff)?, m, false))
}

pub fn fock_number<T: Real>(cutoff: usize) -> Result<Operator<T>> {
    check_cutoff(cutoff)?;
    let diag: Vec<C<T>> = (0..cutoff).map(|n| re(T::from_count(n))).collect();
    Ok(Operator::tagged(
        HilbertSpace::mode(cutoff)?,
        Array2::from_diag(&Array1::from(diag)),
        true,
    ))
}

fn qubit_op<T: Real>(entries: [[C<T>; 2]; 2], hermitian: bool) -> Operator<T> {
    let m = Array2::from_shape_fn((2, 2), |(i, j)| entries[i][j]);
    Operator::tagged(HilbertSpace::qubit(), m, hermitian)
}

/// `|e><e| - |g><g|`.
pub fn sigma_z<T: Real>() -> Operator<T> {
    let (o, z) = (C::one(), C::zero());
    qubit_op([[-o, z], [z, o]], true)
}

pub fn sigma_x<T: Real>() -> Operator<T> {
    let (o, z) = (C::one(), C::zero());
    qubit_op([[z, o], [o, z]], true)
}

/// Chosen so that `sigma_x - i sigma_y = 2 sigma_minus`.
pub fn sigma_y<T: Real>() -> Operator<T> {
    let (i, z) = (imag_unit::<T>(), C::zero());
    qubit_op([[z, i], [-i, z]], true)
}

/// Qubit lowering operator `|g><e|`.
pub fn sigma_minus<T: Real>() -> Operator<T> {
    let (o, z) = (C::one(), C::zero());
    qubit_op([[z, o], [z, z]], false)
}

pub fn projector_excited<T: Real>() -> Operator<T> {
    let (o, z) = (C::one(), C::zero());
    qubit_op([[z, z], [z, o]], true)
}

/// Single-qubit phase gate `exp(-i phi/2)|g><g| + exp(i phi/2)|e><e|`.
pub fn phase_gate<T: Real>(phi: T) -> Operator<T> {
    let z = C::zero();
    let half = phi / T::lit(2.0);
    qubit_op([[c(half.cos(), -half.sin()), z], [z, c(half.cos(), half.sin())]], false)
}

/// Poisson weight of Fock levels at or above `cutoff` for mean `mean`.
pub fn poisson_tail(mean: f64, cutoff: usize) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    // log of the first discarded term, then sum the tail directly since
    // 1 - (kept weight) cancels below 1e-16
    let mut log_term = -mean;
    for n in 1..=cutoff {
        log_term += mean.ln() - (n as f64).ln();
    }
    let mut term = log_term.exp();
    let mut tail = 0.0;
    let mut n = cutoff;
    while term > tail * 1e-18 && n < cutoff + 10_000 {
        tail += term;
        n += 1;
        term *= mean / n as f64;
    }
    tail
}

/// Smallest cutoff whose discarded Poisson weight for `|amplitude|^2` is
/// below [`TRUNCATION_TOLERANCE`].
pub fn required_cutoff(amplitude: f64) -> usize {
    let mean = amplitude * amplitude;
    let mut n = 2;
    while poisson_tail(mean, n) >= TRUNCATION_TOLERANCE {
        n += 1;
    }
    n
}

/// Fails when a coherent state of this amplitude does not fit in `cutoff`.
pub fn check_truncation(amplitude: f64, cutoff: usize) -> Result<()> {
    check_cutoff(cutoff)?;
    let weight = poisson_tail(amplitude * amplitude, cutoff);
    if weight >= TRUNCATION_TOLERANCE {
        return Err(Error::CutoffTooSmall {
            cutoff,
            required: required_cutoff(amplitude),
            amplitude,
            weight,
        });
    }
    Ok(())
}

/// Truncated, renormalized amplitudes `alpha^n / sqrt(n!)` without the
/// adequacy check.
pub(crate) fn coherent_amplitudes<T: Real>(alpha: C<T>, cutoff: usize) -> Array1<C<T>> {
    let mut amps = Array1::zeros(cutoff);
    let mut term = C::one();
    for n in 0..cutoff {
        amps[n] = term;
        term = term * alpha / re(T::from_count(n + 1).sqrt());
    }
    let norm = amps.iter().map(|z: &C<T>| z.norm_sqr()).sum::<T>().sqrt();
    amps.mapv_inplace(|z| z / re(norm));
    amps
}

/// Coherent state `|alpha>` on `cutoff` Fock levels.
pub fn coherent_state<T: Real>(alpha: C<T>, cutoff: usize) -> Result<PureState<T>> {
    check_truncation(alpha.norm().as_f64(), cutoff)?;
    PureState::new(HilbertSpace::mode(cutoff)?, coherent_amplitudes(alpha, cutoff))
}

/// Displacement `exp(alpha a^dagger - alpha^* a)` on `cutoff` levels, built
/// by matrix exponential of the truncated generator (exactly unitary up to
/// rounding).
pub fn displacement<T: Real>(alpha: C<T>, cutoff: usize) -> Result<Operator<T>> {
    check_truncation(alpha.norm().as_f64(), cutoff)?;
    Ok(displacement_unchecked(alpha, cutoff))
}

pub(crate) fn displacement_unchecked<T: Real>(alpha: C<T>, cutoff: usize) -> Operator<T> {
    let a = fock_annihilation::<T>(cutoff).expect("cutoff checked");
    let gen = &dense::dagger(&a.matrix).mapv(|z| z * alpha) - &a.matrix.mapv(|z| z * alpha.conj());
    Operator::tagged(a.space.clone(), dense::expm(&gen), false)
}

// ---------------------------------------------------------------------------
// Composite-space operations
// ---------------------------------------------------------------------------

/// Lifts `op` acting on factor `subsystem` of `space` to the full space.
pub fn embed<T: Real>(op: &Operator<T>, subsystem: usize, space: &HilbertSpace) -> Result<Operator<T>> {
    space.check_index(subsystem)?;
    let d_sub = space.dims()[subsystem];
    if op.dim() != d_sub {
        return Err(Error::DimensionMismatch {
            expected: d_sub,
            found: op.dim(),
        });
    }
    let left: usize = space.dims()[..subsystem].iter().product();
    let right: usize = space.dims()[subsystem + 1..].iter().product();
    let d = space.dim();
    let mut m = Array2::zeros((d, d));
    for l in 0..left {
        for ((i, j), &x) in op.matrix.indexed_iter() {
            if x.is_zero() {
                continue;
            }
            for r in 0..right {
                let row = (l * d_sub + i) * right + r;
                let col = (l * d_sub + j) * right + r;
                m[(row, col)] = x;
            }
        }
    }
    Ok(Operator::tagged(space.clone(), m, op.hermitian))
}

/// Reduced density matrix on the factors listed in `keep` (kept in the
/// order given).
pub fn partial_trace<T: Real>(state: &MixedState<T>, keep: &[usize]) -> Result<MixedState<T>> {
    let space = &state.space;
    for &k in keep {
        space.check_index(k)?;
    }
    for (i, &a) in keep.iter().enumerate() {
        if keep[i + 1..].contains(&a) {
            return Err(Error::InvalidParameter {
                name: "keep",
                reason: format!("subsystem {a} listed twice"),
            });
        }
    }
    if keep.is_empty() {
        return Err(Error::InvalidParameter {
            name: "keep",
            reason: "no subsystems kept".into(),
        });
    }
    let kept_space = HilbertSpace::new(keep.iter().map(|&k| space.dims()[k]).collect())?;
    let dk = kept_space.dim();
    let d = space.dim();
    let mut out = Array2::zeros((dk, dk));
    let traced: Vec<usize> = (0..space.num_subsystems()).filter(|i| !keep.contains(i)).collect();
    // group full indices by the traced-out digits; entries contribute only
    // when the traced digits agree
    let digits: Vec<Vec<usize>> = (0..d).map(|i| space.unflatten(i)).collect();
    let kept_index: Vec<usize> = digits
        .iter()
        .map(|dg| kept_space.flatten(&keep.iter().map(|&k| dg[k]).collect::<Vec<_>>()))
        .collect();
    let traced_index: Vec<usize> = digits
        .iter()
        .map(|dg| traced.iter().fold(0, |acc, &t| acc * space.dims()[t] + dg[t]))
        .collect();
    let n_traced: usize = traced.iter().map(|&t| space.dims()[t]).product();
    let mut by_traced: Vec<Vec<usize>> = vec![Vec::new(); n_traced];
    for i in 0..d {
        by_traced[traced_index[i]].push(i);
    }
    for group in &by_traced {
        for &i in group {
            for &j in group {
                out[(kept_index[i], kept_index[j])] += state.matrix[(i, j)];
            }
        }
    }
    Ok(MixedState {
        space: kept_space,
        matrix: out,
    })
}

/// Reduced state of the qubit factors, for either built-in layout
/// (one qubit and one mode, or two qubits and two modes).
pub fn qubit_reduced<T: Real>(state: &MixedState<T>) -> Result<MixedState<T>> {
    let n_qubits = state.space.num_subsystems() / 2;
    partial_trace(state, &(0..n_qubits.max(1)).collect::<Vec<_>>())
}

/// [`qubit_reduced`] for either kind of state; pure states skip the full
/// density matrix.
pub fn qubit_reduced_state<T: Real>(state: &QuantumState<T>) -> Result<MixedState<T>> {
    let psi = match state {
        QuantumState::Mixed(m) => return qubit_reduced(m),
        QuantumState::Pure(p) => p,
    };
    let dims = psi.space.dims();
    let n_qubits = (dims.len() / 2).max(1);
    let keep: usize = dims[..n_qubits].iter().product();
    let rest = psi.space.dim() / keep;
    let a = psi.amplitudes.as_slice().expect("contiguous amplitudes");
    let w = C::new(T::one() / psi.norm_sq(), T::zero());
    let mut m = Array2::zeros((keep, keep));
    for i in 0..keep {
        for j in 0..=i {
            let z: C<T> = (0..rest).map(|r| a[i * rest + r] * a[j * rest + r].conj()).sum();
            m[(i, j)] = z * w;
            m[(j, i)] = (z * w).conj();
        }
    }
    MixedState::new(HilbertSpace::new(dims[..n_qubits].to_vec())?, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec_close(a: &Array1<C<f64>>, b: &Array1<C<f64>>, tol: f64) -> bool {
        a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt() < tol
    }

    #[test]
    fn annihilation_ladder() {
        let a = fock_annihilation::<f64>(3).unwrap();
        let one = PureState::basis(&HilbertSpace::mode(3).unwrap(), &[1]).unwrap();
        let zero = PureState::vacuum(3).unwrap();
        assert!(vec_close(a.apply(&one).unwrap().amplitudes(), zero.amplitudes(), 1e-15));
        assert!(a.apply(&zero).unwrap().norm_sq() == 0.0);
        let a5 = fock_annihilation::<f64>(5).unwrap();
        assert_eq!(a5.matrix()[(3, 4)], c(2.0, 0.0));
        assert!(matches!(fock_annihilation::<f64>(1), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn coherent_state_moments() {
        let vac = coherent_state::<f64>(c(0.0, 0.0), 12).unwrap();
        assert_eq!(vac.amplitudes()[0], c(1.0, 0.0));
        assert!(vac.amplitudes().iter().skip(1).all(|z| z.norm() == 0.0));

        let s = coherent_state::<f64>(c(1.0, 0.0), 12).unwrap();
        let n = s.expect(&fock_number(12).unwrap()).unwrap();
        // oracle: truncated Poisson mean sum_{n<12} n e^-1/n! / sum_{n<12} e^-1/n!
        let mut num = 0.0;
        let mut den = 0.0;
        let mut p = (-1.0f64).exp();
        for k in 0..12 {
            num += k as f64 * p;
            den += p;
            p /= (k + 1) as f64;
        }
        assert!((n.re - num / den).abs() < 1e-13);
        assert!((n.re - 1.0).abs() < 1e-8);
    }

    #[test]
    fn coherent_state_rejects_small_cutoff() {
        match coherent_state::<f64>(c(1.0, 0.0), 8) {
            Err(Error::CutoffTooSmall { required, .. }) => assert_eq!(required, 12),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(required_cutoff(1.0), 12);
    }

    #[test]
    fn labels_coincide_at_product_return_time() {
        // alpha_g and alpha_e at chi t = pi are both -alpha e^{-kappa t/2}
        let t = std::f64::consts::PI;
        let k = (-0.5 * t).exp();
        let ag = coherent_state(c(0.0, t).exp() * c(k, 0.0), 12).unwrap();
        let ae = coherent_state(c(0.0, -t).exp() * c(k, 0.0), 12).unwrap();
        assert!((ag.inner(&ae).norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn displacement_identities() {
        let d0 = displacement::<f64>(c(0.0, 0.0), 6).unwrap();
        assert!(d0.max_abs_diff(&Operator::identity(d0.space())) < 1e-15);

        let d = displacement::<f64>(c(1.0, 0.0), 20).unwrap();
        let dm = displacement::<f64>(c(-1.0, 0.0), 20).unwrap();
        let prod = dm.matmul(&d).unwrap();
        assert!(prod.max_abs_diff(&Operator::identity(d.space())) < 1e-8);

        let vac = PureState::vacuum(20).unwrap();
        let coh = coherent_state(c(1.0, 0.0), 20).unwrap();
        assert!(vec_close(d.apply(&vac).unwrap().amplitudes(), coh.amplitudes(), 1e-8));
        assert!(matches!(
            displacement::<f64>(c(1.0, 0.0), 8),
            Err(Error::CutoffTooSmall { .. })
        ));
    }

    #[test]
    fn displacement_returns_coherent_states_to_vacuum() {
        // the truncated generator is exactly unitary, so the round trip error
        // is the gap between D(alpha)|0> and the renormalized Poisson state,
        // which scales like the square root of the discarded weight
        for &(re_, im_, cutoff) in &[
            (1.0, 0.0, 20),
            (0.3, -0.9, 20),
            (-0.7, 0.7, 20),
            (1.5, 0.0, 24),
            (0.0, 1.5, 24),
        ] {
            let alpha = c(re_, im_);
            let coh = coherent_state(alpha, cutoff).unwrap();
            let back = displacement(-alpha, cutoff).unwrap().apply(&coh).unwrap();
            let vac = PureState::vacuum(cutoff).unwrap();
            let err = back.phase_aligned_distance(&vac);
            assert!(err < 1e-8, "alpha={alpha} cutoff={cutoff} err={err}");
        }
        let coh = coherent_state(c(1.5, 0.0), 20).unwrap();
        let back = displacement(c(-1.5, 0.0), 20).unwrap().apply(&coh).unwrap();
        assert!(back.phase_aligned_distance(&PureState::vacuum(20).unwrap()) < 1e-6);
    }

    #[test]
    fn embed_sigma_z_on_first_qubit() {
        let space = HilbertSpace::new(vec![2, 2]).unwrap();
        let z1 = embed(&sigma_z::<f64>(), 0, &space).unwrap();
        let diag: Vec<f64> = (0..4).map(|i| z1.matrix()[(i, i)].re).collect();
        assert_eq!(diag, vec![-1.0, -1.0, 1.0, 1.0]);
        assert!(z1.is_tagged_hermitian());
        let id = embed(&Operator::<f64>::identity(&HilbertSpace::qubit()), 1, &space).unwrap();
        assert!(id.max_abs_diff(&Operator::identity(&space)) == 0.0);
        assert!(embed(&sigma_z::<f64>(), 2, &space).is_err());
        assert!(embed(&fock_annihilation::<f64>(3).unwrap(), 0, &space).is_err());
    }

    #[test]
    fn local_dispersive_terms_commute() {
        let space = HilbertSpace::two_qubit_resonators(4).unwrap();
        let n = fock_number::<f64>(4).unwrap();
        let t1 = embed(&sigma_z(), 0, &space)
            .unwrap()
            .matmul(&embed(&n, 2, &space).unwrap())
            .unwrap();
        let t2 = embed(&sigma_z(), 1, &space)
            .unwrap()
            .matmul(&embed(&n, 3, &space).unwrap())
            .unwrap();
        assert!(t1.commutator(&t2).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn pauli_algebra_matches_convention() {
        let x = sigma_x::<f64>();
        let y = sigma_y::<f64>();
        let z = sigma_z::<f64>();
        // sigma_x sigma_y = i sigma_z
        let xy = x.matmul(&y).unwrap();
        assert!(xy.max_abs_diff(&z.scale(c(0.0, 1.0))) < 1e-15);
        let lowering = x.sub(&y.scale(c(0.0, 1.0))).unwrap().scale_real(0.5);
        assert!(lowering.max_abs_diff(&sigma_minus()) < 1e-15);
        for op in [x, y, z] {
            assert!(op.hermiticity_defect() < 1e-12);
        }
    }

    #[test]
    fn pure_qubit_reduction_matches_partial_trace() {
        let q = PureState::<f64>::new(
            HilbertSpace::new(vec![2, 2]).unwrap(),
            Array1::from(vec![c(0.3, 0.1), c(0.0, -0.5), c(0.6, 0.0), c(0.2, 0.4)]),
        )
        .unwrap();
        let psi = q
            .kron(&coherent_state(c(0.4, 0.3), 8).unwrap())
            .kron(&coherent_state(c(-0.2, 0.0), 8).unwrap());
        let fast = qubit_reduced_state(&QuantumState::Pure(psi.clone())).unwrap();
        let slow = qubit_reduced(&psi.to_mixed()).unwrap();
        assert!(fast.max_abs_diff(&slow) < 1e-14);
        assert_eq!(fast.space().dims(), &[2, 2]);
    }

    #[test]
    fn partial_trace_examples() {
        // product state
        let a = PureState::qubit(c(0.6, 0.0), c(0.0, 0.8)).unwrap().to_mixed();
        let b = coherent_state(c(0.4, 0.1), 8).unwrap().to_mixed();
        let ab = a.kron(&b);
        let ra = partial_trace(&ab, &[0]).unwrap();
        assert!(ra.max_abs_diff(&a) < 1e-12);
        let rb = partial_trace(&ab, &[1]).unwrap();
        assert!(rb.max_abs_diff(&b) < 1e-12);

        // Bell state
        let space = HilbertSpace::new(vec![2, 2]).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = PureState::new(
            space,
            Array1::from(vec![c(s, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(s, 0.0)]),
        )
        .unwrap()
        .to_mixed();
        for k in 0..2 {
            let r = partial_trace(&bell, &[k]).unwrap();
            assert!(r.max_abs_diff(&MixedState::maximally_mixed(&HilbertSpace::qubit())) < 1e-15);
        }
        assert!(partial_trace(&bell, &[0, 0]).is_err());
        assert!(partial_trace(&bell, &[3]).is_err());
    }

    #[test]
    fn mixed_state_validation() {
        let space = HilbertSpace::qubit();
        let bad = Array2::from_diag(&Array1::from(vec![c(0.7, 0.0), c(0.7, 0.0)]));
        assert!(MixedState::<f64>::new(space.clone(), bad).is_err());
        let neg = Array2::from_diag(&Array1::from(vec![c(1.2, 0.0), c(-0.2, 0.0)]));
        assert!(MixedState::<f64>::new(space.clone(), neg).is_err());
        let ok = Array2::from_diag(&Array1::from(vec![c(0.25, 0.0), c(0.75, 0.0)]));
        assert!(MixedState::<f64>::new(space, ok).is_ok());
    }

    fn random_op(space: &HilbertSpace, vals: &[(f64, f64)]) -> Operator<f64> {
        let d = space.dim();
        let m = Array2::from_shape_fn((d, d), |(i, j)| {
            let (x, y) = vals[(i * d + j) % vals.len()];
            c(x * (1.0 + i as f64), y - j as f64 * 0.1)
        });
        Operator::new(space.clone(), m).unwrap()
    }

    proptest! {
        #[test]
        fn embed_is_a_homomorphism(vals in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 9), which in 0usize..3) {
            let space = HilbertSpace::new(vec![2, 3, 2]).unwrap();
            let sub = HilbertSpace::new(vec![space.dims()[which]]).unwrap();
            let a = random_op(&sub, &vals);
            let b = random_op(&sub, &vals[3..]);
            let lhs = embed(&a.matmul(&b).unwrap(), which, &space).unwrap();
            let rhs = embed(&a, which, &space).unwrap().matmul(&embed(&b, which, &space).unwrap()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }

        #[test]
        fn partial_trace_inverts_tensor_product(
            qa in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
            beta in (-1.0f64..1.0, -1.0f64..1.0),
        ) {
            let qa = PureState::qubit(c(qa.0, qa.1), c(qa.2, qa.3 + 1.5)).unwrap().to_mixed();
            let b = coherent_state(c(beta.0, beta.1), 16).unwrap().to_mixed();
            let prod = b.kron(&qa);
            let back = partial_trace(&prod, &[1]).unwrap();
            prop_assert!(back.max_abs_diff(&qa) < 1e-12);
            prop_assert!((back.trace() - 1.0).abs() < 1e-10);
            prop_assert!(back.hermiticity_defect() < 1e-12);
        }
    }
}
