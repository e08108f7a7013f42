//! Observables, state diagnostics and ensemble statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{Error, Result};
use crate::fock::{
    embed, fock_annihilation, fock_number, partial_trace, sigma_x, sigma_y, sigma_z, HilbertSpace, MixedState,
    Operator, PureState, QuantumState,
};
use crate::params::SystemParams;
use crate::record::Channel;
use crate::scalar::{c, Real, C};
use crate::sparse::Csr;

/// Largest imaginary residue tolerated in the expectation of a Hermitian
/// observable before it is discarded.
pub const IMAG_RESIDUE_TOL: f64 = 1e-10;

/// Sampled real-valued series on a common time grid, plus the detection
/// events that occurred over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries<T> {
    pub times: Vec<T>,
    pub names: Vec<String>,
    /// `columns[k][i]` is column `k` at `times[i]`.
    pub columns: Vec<Vec<T>>,
    pub events: Vec<(T, Channel)>,
}

impl<T: Real> TimeSeries<T> {
    pub fn new(names: Vec<String>) -> Self {
        let k = names.len();
        Self {
            times: Vec::new(),
            names,
            columns: vec![Vec::new(); k],
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, t: T, row: &[T]) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.times.push(t);
        for (col, &x) in self.columns.iter_mut().zip(row) {
            col.push(x);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&[T]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.columns[k].as_slice())
    }

    pub fn last(&self, name: &str) -> Option<T> {
        self.column(name).and_then(|c| c.last().copied())
    }

    /// Row `i` in column order.
    pub fn row(&self, i: usize) -> Vec<T> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum Post {
    Plain,
    Sqrt,
}

/// Named Hermitian observables compiled for repeated evaluation.
#[derive(Debug, Clone)]
pub struct ObservableSet<T: Real> {
    space: HilbertSpace,
    names: Vec<String>,
    ops: Vec<(Csr<T>, T, Post)>,
}

impl<T: Real> ObservableSet<T> {
    /// Builds a set from `(name, operator)` pairs; every operator must be
    /// Hermitian and act on `space`.
    pub fn new(space: &HilbertSpace, observables: Vec<(String, Operator<T>)>) -> Result<Self> {
        let mut set = Self {
            space: space.clone(),
            names: Vec::new(),
            ops: Vec::new(),
        };
        for (name, op) in observables {
            set.push(name, op, T::one(), Post::Plain)?;
        }
        Ok(set)
    }

    fn push(&mut self, name: String, op: Operator<T>, scale: T, post: Post) -> Result<()> {
        if op.space() != &self.space {
            return Err(Error::DimensionMismatch {
                expected: self.space.dim(),
                found: op.dim(),
            });
        }
        let op = op.assert_hermitian()?;
        self.names.push(name);
        self.ops
            .push((Csr::from_dense(op.matrix(), T::lit(1e-15)), scale, post));
        Ok(())
    }

    /// `sqrt_n`, `quad_x`, `corr`, `sx`, `sy` on qubit ⊗ mode:
    /// `sqrt<a^† a>`, `<a^† + a>/2`, `-<sigma_z i(a^† - a)/2>`, `<sigma_x>`,
    /// `<sigma_y>`.
    pub fn single_qubit(cutoff: usize) -> Result<Self> {
        let space = HilbertSpace::single_qubit_resonator(cutoff)?;
        let a = embed(&fock_annihilation(cutoff)?, 1, &space)?;
        let ad = a.dagger();
        let half = T::lit(0.5);
        let quad_x = ad.add(&a)?.scale_real(half);
        let quad_p = ad.sub(&a)?.scale(c(T::zero(), half));
        let sz = embed(&sigma_z(), 0, &space)?;
        let corr = sz.matmul(&quad_p)?.scale_real(-T::one());
        let mut set = Self::new(&space, Vec::new())?;
        set.push(
            "sqrt_n".into(),
            embed(&fock_number(cutoff)?, 1, &space)?,
            T::one(),
            Post::Sqrt,
        )?;
        set.push("quad_x".into(), quad_x, T::one(), Post::Plain)?;
        set.push("corr".into(), corr, T::one(), Post::Plain)?;
        set.push("sx".into(), embed(&sigma_x(), 0, &space)?, T::one(), Post::Plain)?;
        set.push("sy".into(), embed(&sigma_y(), 0, &space)?, T::one(), Post::Plain)?;
        Ok(set)
    }

    /// `rate_plus`, `rate_minus` (`eta kappa <c^† c>` per detector), then
    /// the stabilizers `xx`, `yy`, `zz` on qubit ⊗ qubit ⊗ mode ⊗ mode.
    pub fn two_qubit(params: &SystemParams<T>) -> Result<Self> {
        let n = params.fock_cutoff;
        let space = HilbertSpace::two_qubit_resonators(n)?;
        // products are formed on the factor they act on; full-space
        // products would cost dim^3
        let a = fock_annihilation(n)?;
        let modes = HilbertSpace::new(vec![n, n])?;
        let a1 = embed(&a, 0, &modes)?;
        let a2 = embed(&a, 1, &modes)?;
        let h = T::FRAC_1_SQRT_2();
        let cp = a1.add(&a2)?.scale_real(h);
        let cm = a1.sub(&a2)?.scale_real(h);
        let qubits = HilbertSpace::new(vec![2, 2])?;
        let q_id = Operator::identity(&qubits);
        let m_id = Operator::identity(&modes);
        let mut set = Self::new(&space, Vec::new())?;
        let np = q_id.kron(&cp.dagger().matmul(&cp)?);
        let nm = q_id.kron(&cm.dagger().matmul(&cm)?);
        set.push("rate_plus".into(), np, params.eta_plus * params.kappa, Post::Plain)?;
        set.push("rate_minus".into(), nm, params.eta_minus * params.kappa, Post::Plain)?;
        for (name, p) in [("xx", sigma_x::<T>()), ("yy", sigma_y()), ("zz", sigma_z())] {
            let op = p.kron(&p).kron(&m_id);
            set.push(name.into(), op, T::one(), Post::Plain)?;
        }
        Ok(set)
    }

    /// The standard set for a one- or two-qubit model.
    pub fn standard(params: &SystemParams<T>, num_qubits: usize) -> Result<Self> {
        match num_qubits {
            1 => Self::single_qubit(params.fock_cutoff),
            2 => Self::two_qubit(params),
            n => Err(Error::InvalidParameter {
                name: "num_qubits",
                reason: format!("expected 1 or 2, got {n}"),
            }),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    fn finish(&self, k: usize, raw: C<T>, norm: T) -> Result<T> {
        let z = raw / norm;
        if z.im.abs() > T::lit(IMAG_RESIDUE_TOL) * z.re.abs().max(T::one()) {
            return Err(Error::InternalConsistency(format!(
                "observable {} has imaginary part {}",
                self.names[k], z.im
            )));
        }
        let (_, scale, post) = &self.ops[k];
        let v = z.re * *scale;
        Ok(match post {
            Post::Plain => v,
            Post::Sqrt => v.max(T::zero()).sqrt(),
        })
    }

    /// Values for a state vector with squared norm `norm_sq`.
    pub(crate) fn eval_vec(&self, psi: &[C<T>], norm_sq: T) -> Result<Vec<T>> {
        (0..self.ops.len())
            .map(|k| self.finish(k, self.ops[k].0.expect_vec(psi), norm_sq))
            .collect()
    }

    /// Values for a row-major density matrix with trace `trace`.
    pub(crate) fn eval_mat(&self, rho: &[C<T>], trace: T) -> Result<Vec<T>> {
        (0..self.ops.len())
            .map(|k| self.finish(k, self.ops[k].0.expect_mat(rho), trace))
            .collect()
    }

    pub fn evaluate_pure(&self, state: &PureState<T>) -> Result<Vec<T>> {
        self.check(state.space())?;
        self.eval_vec(state.amplitudes().as_slice().expect("contiguous"), state.norm_sq())
    }

    pub fn evaluate_mixed(&self, state: &MixedState<T>) -> Result<Vec<T>> {
        self.check(state.space())?;
        let m = state.matrix().as_standard_layout();
        self.eval_mat(m.as_slice().expect("contiguous"), state.trace())
    }

    pub fn evaluate(&self, state: &QuantumState<T>) -> Result<Vec<T>> {
        match state {
            QuantumState::Pure(s) => self.evaluate_pure(s),
            QuantumState::Mixed(s) => self.evaluate_mixed(s),
        }
    }

    fn check(&self, space: &HilbertSpace) -> Result<()> {
        if space != &self.space {
            return Err(Error::DimensionMismatch {
                expected: self.space.dim(),
                found: space.dim(),
            });
        }
        Ok(())
    }
}

/// The five single-qubit series for one state.
pub fn observable_set_1q<T: Real>(state: &QuantumState<T>) -> Result<Vec<T>> {
    let cutoff = state.space().dims()[1];
    ObservableSet::single_qubit(cutoff)?.evaluate(state)
}

/// Detection rates and stabilizers for one two-qubit state.
pub fn observable_set_2q<T: Real>(state: &QuantumState<T>, params: &SystemParams<T>) -> Result<Vec<T>> {
    let p = SystemParams {
        fock_cutoff: state.space().dims()[2],
        ..*params
    };
    ObservableSet::two_qubit(&p)?.evaluate(state)
}

/// Flags basis states whose qubits hold an odd number of excitations;
/// the qubits are the first half of the subsystems.
pub(crate) fn odd_parity_mask(space: &HilbertSpace) -> Vec<bool> {
    let nq = space.num_subsystems() / 2;
    (0..space.dim())
        .map(|i| space.unflatten(i)[..nq].iter().sum::<usize>() % 2 == 1)
        .collect()
}

/// `<Pi_-1>`: population of the odd qubit-parity sector.
pub fn odd_parity_population<T: Real>(state: &QuantumState<T>) -> T {
    let mask = odd_parity_mask(state.space());
    match state {
        QuantumState::Pure(p) => {
            let pops = p.amplitudes().iter().map(|z| z.norm_sqr());
            split_by_parity(pops, &mask)
        }
        QuantumState::Mixed(m) => split_by_parity(m.matrix().diag().iter().map(|z| z.re), &mask),
    }
}

/// `odd / (odd + even)`, so a state confined to one sector gives exactly
/// 0 or 1.
fn split_by_parity<T: Real>(pops: impl Iterator<Item = T>, mask: &[bool]) -> T {
    let (mut odd, mut even) = (T::zero(), T::zero());
    for (p, &o) in pops.zip(mask) {
        if o {
            odd += p;
        } else {
            even += p;
        }
    }
    odd / (odd + even)
}

/// `tr rho^2` of the normalized state.
pub fn purity<T: Real>(state: &QuantumState<T>) -> T {
    match state {
        QuantumState::Pure(_) => T::one(),
        QuantumState::Mixed(m) => m.purity(),
    }
}

/// Von Neumann entropy (bits) of the reduced state on `keep`.
pub fn entanglement_entropy<T: Real>(state: &QuantumState<T>, keep: &[usize]) -> Result<T> {
    let reduced = partial_trace(&state.to_mixed(), keep)?;
    Ok(von_neumann_entropy(&reduced))
}

pub fn von_neumann_entropy<T: Real>(state: &MixedState<T>) -> T {
    let tr = state.trace();
    let floor = T::lit(1e-30);
    state
        .eigenvalues()
        .into_iter()
        .map(|l| (l / tr).max(floor))
        .map(|p| if p <= floor { T::zero() } else { -p * p.log2() })
        .sum()
}

/// Uhlmann fidelity `(tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`; for two pure
/// states this is `|<psi|phi>|^2`.
pub fn fidelity<T: Real>(state: &QuantumState<T>, reference: &QuantumState<T>) -> Result<T> {
    if state.space() != reference.space() {
        return Err(Error::DimensionMismatch {
            expected: reference.space().dim(),
            found: state.space().dim(),
        });
    }
    match (state, reference) {
        (QuantumState::Pure(a), QuantumState::Pure(b)) => {
            let ov = a.inner(b);
            Ok(ov.norm_sqr() / (a.norm_sq() * b.norm_sq()))
        }
        (QuantumState::Pure(p), m) | (m, QuantumState::Pure(p)) => {
            // <psi|rho|psi>
            let rho = m.to_mixed();
            let v = p.amplitudes();
            let rv = rho.matrix().dot(v);
            let num: C<T> = v.iter().zip(rv.iter()).map(|(a, b)| a.conj() * b).sum();
            Ok((num.re / p.norm_sq()).max(T::zero()).min(T::one()))
        }
        (QuantumState::Mixed(_), QuantumState::Mixed(_)) => {
            let r = state.to_mixed();
            let s = reference.to_mixed();
            let sr = dense::psd_sqrt(r.matrix());
            let inner = sr.dot(s.matrix()).dot(&sr);
            let root: T = dense::hermitian_eigenvalues(&inner)
                .into_iter()
                .map(|l| l.max(T::zero()).sqrt())
                .sum();
            Ok((root * root).max(T::zero()).min(T::one()))
        }
    }
}

/// Mean and standard error (sample standard deviation over `sqrt n`; zero
/// for a single sample).
pub fn mean_and_stderr<T: Real>(xs: &[T]) -> (T, T) {
    let n = xs.len();
    if n == 0 {
        return (T::nan(), T::nan());
    }
    let nf = T::from_count(n);
    let mean = xs.iter().copied().sum::<T>() / nf;
    if n == 1 {
        return (mean, T::zero());
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / T::from_count(n - 1);
    (mean, (var / nf).sqrt())
}

/// Number of equal-width bins used for the `P_-1` histogram on `[0, 1]`.
pub const P_MINUS1_BINS: usize = 10;

/// Per-sample means and standard errors over an ensemble of runs, with
/// the distribution of detector counts and of the final odd-parity weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats<T> {
    pub n: usize,
    pub times: Vec<T>,
    pub names: Vec<String>,
    pub means: Vec<Vec<T>>,
    pub stderrs: Vec<Vec<T>>,
    /// Occurrences of each `(N+, N-)` (single-qubit runs count in `N+`).
    pub photon_counts: BTreeMap<(usize, usize), usize>,
    pub p_minus1: Vec<T>,
    pub p_minus1_histogram: Vec<usize>,
}

impl<T: Real> EnsembleStats<T> {
    /// Combines per-run series (all on the same grid), counts and parity
    /// weights in the order given.
    pub fn from_runs(series: &[TimeSeries<T>], counts: &[(usize, usize)], p_minus1: Vec<T>) -> Result<Self> {
        let first = series.first().ok_or_else(|| Error::InvalidParameter {
            name: "n",
            reason: "ensemble needs at least one run".into(),
        })?;
        let len = first.len();
        if series.iter().any(|s| s.len() != len || s.names != first.names) {
            return Err(Error::InternalConsistency(
                "ensemble runs sampled on different grids".into(),
            ));
        }
        let k = first.names.len();
        let mut means = vec![Vec::with_capacity(len); k];
        let mut stderrs = vec![Vec::with_capacity(len); k];
        let mut buf = Vec::with_capacity(series.len());
        for col in 0..k {
            for i in 0..len {
                buf.clear();
                buf.extend(series.iter().map(|s| s.columns[col][i]));
                let (m, e) = mean_and_stderr(&buf);
                means[col].push(m);
                stderrs[col].push(e);
            }
        }
        let mut photon_counts = BTreeMap::new();
        for &c in counts {
            *photon_counts.entry(c).or_insert(0) += 1;
        }
        let mut hist = vec![0; P_MINUS1_BINS];
        for &p in &p_minus1 {
            let b = (p * T::from_count(P_MINUS1_BINS))
                .floor()
                .to_usize()
                .unwrap_or(0)
                .min(P_MINUS1_BINS - 1);
            hist[b] += 1;
        }
        Ok(Self {
            n: series.len(),
            times: first.times.clone(),
            names: first.names.clone(),
            means,
            stderrs,
            photon_counts,
            p_minus1,
            p_minus1_histogram: hist,
        })
    }

    pub fn mean(&self, name: &str) -> Option<&[T]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.means[k].as_slice())
    }

    pub fn stderr(&self, name: &str) -> Option<&[T]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.stderrs[k].as_slice())
    }

    /// Mean and standard error of the final odd-parity weights.
    pub fn p_minus1_summary(&self) -> (T, T) {
        mean_and_stderr(&self.p_minus1)
    }

    /// Mean total number of detections per run.
    pub fn mean_photons(&self) -> T {
        let total: usize = self.photon_counts.iter().map(|(&(a, b), &k)| (a + b) * k).sum();
        T::from_count(total) / T::from_count(self.n)
    }
}
