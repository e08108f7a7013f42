//! Compressed-row kernels for the hot loops of the integrators.
//!
//! Operators are built densely; the integrators convert the few operators
//! they apply millions of times into this form. Most of them have at most
//! one entry per row (ladder operators in a product basis), which gets its
//! own path.

use ndarray::Array2;
use num_traits::Zero;

use crate::scalar::{re, Real, C};

#[derive(Debug, Clone)]
pub(crate) struct Csr<T: Real> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C<T>>,
    shape: Shape<T>,
}

#[derive(Debug, Clone)]
enum Shape<T: Real> {
    Diagonal(Vec<C<T>>),
    /// At most one entry per row: `(col, value)`, `usize::MAX` for an empty row.
    Monomial(Vec<usize>, Vec<C<T>>),
    General,
}

impl<T: Real> Csr<T> {
    /// Drops entries with modulus below `tol * max|m_ij|`.
    pub(crate) fn from_dense(m: &Array2<C<T>>, tol: T) -> Self {
        let n = m.nrows();
        let scale_sq = m.iter().map(|z| z.norm_sqr()).fold(T::zero(), T::max);
        let cut_sq = tol * tol * scale_sq;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let z = m[(i, j)];
                if z.norm_sqr() > cut_sq {
                    cols.push(j);
                    vals.push(z);
                }
            }
            row_ptr.push(cols.len());
        }
        let mut csr = Self {
            n,
            row_ptr,
            cols,
            vals,
            shape: Shape::General,
        };
        csr.shape = csr.classify();
        csr
    }

    /// `m ⊗ 1_rest` without forming the dense product.
    pub(crate) fn kron_identity(m: &Array2<C<T>>, rest: usize, tol: T) -> Self {
        let small = Self::from_dense(m, tol);
        let n = small.n * rest;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..small.n {
            let (c, v) = small.row(i);
            for r in 0..rest {
                for (&j, &z) in c.iter().zip(v) {
                    cols.push(j * rest + r);
                    vals.push(z);
                }
                row_ptr.push(cols.len());
            }
        }
        let mut csr = Self {
            n,
            row_ptr,
            cols,
            vals,
            shape: Shape::General,
        };
        csr.shape = csr.classify();
        csr
    }

    fn classify(&self) -> Shape<T> {
        let diagonal = (0..self.n).all(|i| self.row(i).0.iter().all(|&j| j == i));
        if diagonal {
            let mut d = vec![C::zero(); self.n];
            for (i, slot) in d.iter_mut().enumerate() {
                let (c, v) = self.row(i);
                if !c.is_empty() {
                    *slot = v[0];
                }
            }
            return Shape::Diagonal(d);
        }
        if (0..self.n).all(|i| self.row_ptr[i + 1] - self.row_ptr[i] <= 1) {
            let mut cols = vec![usize::MAX; self.n];
            let mut vals = vec![C::zero(); self.n];
            for i in 0..self.n {
                let (c, v) = self.row(i);
                if !c.is_empty() {
                    cols[i] = c[0];
                    vals[i] = v[0];
                }
            }
            return Shape::Monomial(cols, vals);
        }
        Shape::General
    }

    #[inline]
    fn row(&self, i: usize) -> (&[usize], &[C<T>]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub(crate) fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub(crate) fn diagonal(&self) -> Option<&[C<T>]> {
        match &self.shape {
            Shape::Diagonal(d) => Some(d),
            _ => None,
        }
    }

    /// `y += coef * A x`.
    pub(crate) fn mul_vec_add(&self, coef: C<T>, x: &[C<T>], y: &mut [C<T>]) {
        match &self.shape {
            Shape::Diagonal(d) => {
                for ((yi, &xi), &di) in y.iter_mut().zip(x).zip(d) {
                    *yi += coef * di * xi;
                }
            }
            Shape::Monomial(cols, vals) => {
                for i in 0..self.n {
                    if cols[i] != usize::MAX {
                        y[i] += coef * vals[i] * x[cols[i]];
                    }
                }
            }
            Shape::General => {
                for (i, yi) in y.iter_mut().enumerate() {
                    let (c, v) = self.row(i);
                    let mut acc = C::zero();
                    for (&j, &a) in c.iter().zip(v) {
                        acc += a * x[j];
                    }
                    *yi += coef * acc;
                }
            }
        }
    }

    /// `||A x||^2`.
    pub(crate) fn norm_sq_of_product(&self, x: &[C<T>]) -> T {
        let mut tmp = vec![C::zero(); self.n];
        self.mul_vec_add(C::new(T::one(), T::zero()), x, &mut tmp);
        tmp.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `out += coef * A rho` for row-major `rho`.
    pub(crate) fn left_mul_add(&self, coef: C<T>, rho: &[C<T>], out: &mut [C<T>]) {
        let n = self.n;
        for i in 0..n {
            let (c, v) = self.row(i);
            let orow = &mut out[i * n..(i + 1) * n];
            for (&k, &a) in c.iter().zip(v) {
                let w = coef * a;
                let rrow = &rho[k * n..(k + 1) * n];
                for (o, &r) in orow.iter_mut().zip(rrow) {
                    *o += w * r;
                }
            }
        }
    }

    /// `out += coef * rho A^dagger` for row-major `rho`.
    pub(crate) fn right_mul_dag_add(&self, coef: C<T>, rho: &[C<T>], out: &mut [C<T>]) {
        let n = self.n;
        for i in 0..n {
            let rrow = &rho[i * n..(i + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (j, o) in orow.iter_mut().enumerate() {
                let (c, v) = self.row(j);
                let mut acc = C::zero();
                for (&l, &a) in c.iter().zip(v) {
                    acc += rrow[l] * a.conj();
                }
                *o += coef * acc;
            }
        }
    }

    /// `out += A rho A^dagger`.
    pub(crate) fn sandwich_add(&self, rho: &[C<T>], out: &mut [C<T>]) {
        let n = self.n;
        match &self.shape {
            Shape::Diagonal(d) => {
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] += d[i] * rho[i * n + j] * d[j].conj();
                    }
                }
            }
            Shape::Monomial(cols, vals) => {
                // rows with an entry, gathered once
                let live: Vec<usize> = (0..n).filter(|&i| cols[i] != usize::MAX).collect();
                for &i in &live {
                    let k = cols[i];
                    let a = vals[i];
                    let rrow = &rho[k * n..(k + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for &j in &live {
                        orow[j] += a * rrow[cols[j]] * vals[j].conj();
                    }
                }
            }
            Shape::General => {
                for i in 0..n {
                    let (ci, vi) = self.row(i);
                    if ci.is_empty() {
                        continue;
                    }
                    for j in 0..n {
                        let (cj, vj) = self.row(j);
                        let mut acc = C::zero();
                        for (&k, &a) in ci.iter().zip(vi) {
                            let rrow = &rho[k * n..(k + 1) * n];
                            let mut inner = C::zero();
                            for (&l, &b) in cj.iter().zip(vj) {
                                inner += rrow[l] * b.conj();
                            }
                            acc += a * inner;
                        }
                        out[i * n + j] += acc;
                    }
                }
            }
        }
    }

    /// `tr(A rho A^dagger)`.
    pub(crate) fn sandwich_trace(&self, rho: &[C<T>]) -> T {
        let n = self.n;
        let mut acc = C::zero();
        for i in 0..n {
            let (c, v) = self.row(i);
            for (&k, &a) in c.iter().zip(v) {
                for (&l, &b) in c.iter().zip(v) {
                    acc += a * rho[k * n + l] * b.conj();
                }
            }
        }
        acc.re
    }

    /// `<x|A|x>` (unnormalized).
    pub(crate) fn expect_vec(&self, x: &[C<T>]) -> C<T> {
        let mut acc = C::zero();
        for i in 0..self.n {
            let (c, v) = self.row(i);
            let mut row = C::zero();
            for (&j, &a) in c.iter().zip(v) {
                row += a * x[j];
            }
            acc += x[i].conj() * row;
        }
        acc
    }

    /// `tr(A rho)` (unnormalized).
    pub(crate) fn expect_mat(&self, rho: &[C<T>]) -> C<T> {
        let n = self.n;
        let mut acc = C::zero();
        for i in 0..n {
            let (c, v) = self.row(i);
            for (&k, &a) in c.iter().zip(v) {
                acc += a * rho[k * n + i];
            }
        }
        acc
    }

    /// `A rho A^dagger` into a fresh buffer.
    #[cfg(test)]
    pub(crate) fn to_dense(&self) -> Array2<C<T>> {
        let mut m = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                m[(i, j)] = a;
            }
        }
        m
    }
}

/// Replaces pairs `(J1, J2)` by `(J1 ± J2)/sqrt 2` whenever that lowers the
/// total entry count. The sum `J1 rho J1^† + J2 rho J2^†` is invariant under
/// this rotation, so the dissipator is unchanged.
pub(crate) fn compress_pairs<T: Real>(ops: Vec<Array2<C<T>>>, tol: T) -> Vec<Csr<T>> {
    let mut ops: Vec<Option<Array2<C<T>>>> = ops.into_iter().map(Some).collect();
    let mut out = Vec::new();
    let h = re(T::FRAC_1_SQRT_2());
    let nnz = |m: &Array2<C<T>>| Csr::from_dense(m, tol).nnz();
    for i in 0..ops.len() {
        let Some(a) = ops[i].take() else { continue };
        let mut merged = None;
        for slot in ops.iter_mut().skip(i + 1) {
            let Some(b) = slot.as_ref() else { continue };
            let sum = (&a + b).mapv(|z| z * h);
            let diff = (&a - b).mapv(|z| z * h);
            if nnz(&sum) + nnz(&diff) < nnz(&a) + nnz(b) {
                merged = Some((sum, diff));
                *slot = None;
                break;
            }
        }
        match merged {
            Some((s, d)) => {
                out.push(Csr::from_dense(&s, tol));
                out.push(Csr::from_dense(&d, tol));
            }
            None => out.push(Csr::from_dense(&a, tol)),
        }
    }
    out.retain(|c| c.nnz() > 0);
    out
}
