//! Dense complex matrix kernels: products, Kronecker products, the matrix
//! exponential and a Hermitian eigensolver.

use ndarray::{Array1, Array2, Axis};
use num_traits::{One, Zero};

use crate::scalar::{cis, re, Real, C};

pub(crate) fn dagger<T: Real>(m: &Array2<C<T>>) -> Array2<C<T>> {
    m.t().mapv(|z| z.conj())
}

pub(crate) fn kron<T: Real>(a: &Array2<C<T>>, b: &Array2<C<T>>) -> Array2<C<T>> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for ((i, j), &x) in a.indexed_iter() {
        if x.is_zero() {
            continue;
        }
        let mut block = out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
        block.zip_mut_with(b, |o, &y| *o = x * y);
    }
    out
}

pub(crate) fn kron_vec<T: Real>(a: &Array1<C<T>>, b: &Array1<C<T>>) -> Array1<C<T>> {
    let mut out = Array1::zeros(a.len() * b.len());
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i * b.len() + j] = x * y;
        }
    }
    out
}

pub(crate) fn max_abs<T: Real>(m: &Array2<C<T>>) -> T {
    m.iter().fold(T::zero(), |acc, z| acc.max(z.norm_sqr())).sqrt()
}

pub(crate) fn max_abs_diff<T: Real>(a: &Array2<C<T>>, b: &Array2<C<T>>) -> T {
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |acc, (x, y)| acc.max((*x - *y).norm_sqr()))
        .sqrt()
}

pub(crate) fn trace<T: Real>(m: &Array2<C<T>>) -> C<T> {
    m.diag().iter().fold(C::zero(), |acc, &z| acc + z)
}

fn norm_one<T: Real>(m: &Array2<C<T>>) -> T {
    m.axis_iter(Axis(1))
        .map(|col| col.iter().map(|z| z.norm()).sum::<T>())
        .fold(T::zero(), T::max)
}

/// Matrix exponential by scaling and squaring of a Taylor series.
pub(crate) fn expm<T: Real>(m: &Array2<C<T>>) -> Array2<C<T>> {
    let n = m.nrows();
    let norm = norm_one(m);
    let half = T::lit(0.5);
    let mut squarings = 0u32;
    let mut scale = T::one();
    while norm * scale > half {
        scale *= half;
        squarings += 1;
    }
    let a = m.mapv(|z| z * re(scale));
    let eye: Array2<C<T>> = Array2::from_diag_elem(n, C::one());
    let mut result = eye.clone();
    let mut term = eye;
    for k in 1..=30 {
        term = term.dot(&a).mapv(|z| z / re(T::from_count(k)));
        result += &term;
        if max_abs(&term) < T::epsilon() * T::lit(1e-3) {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

/// Eigen-decomposition of a Hermitian matrix by cyclic complex Jacobi
/// rotations. Returns eigenvalues in ascending order and the matching
/// eigenvectors as columns.
pub(crate) fn hermitian_eigh<T: Real>(m: &Array2<C<T>>) -> (Vec<T>, Array2<C<T>>) {
    let n = m.nrows();
    let mut a = m.clone();
    // symmetrize so the off-diagonal test below is meaningful
    for i in 0..n {
        a[(i, i)] = re(a[(i, i)].re);
        for j in (i + 1)..n {
            let avg = (a[(i, j)] + a[(j, i)].conj()) * re(T::lit(0.5));
            a[(i, j)] = avg;
            a[(j, i)] = avg.conj();
        }
    }
    let mut v: Array2<C<T>> = Array2::from_diag_elem(n, C::one());
    let scale = max_abs(&a).max(T::min_positive_value());
    let tol = T::epsilon() * scale;

    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(a[(i, j)].norm());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r <= tol * T::lit(1e-3) {
                    continue;
                }
                // phase the q basis vector so that a_pq becomes real positive
                let ph = cis(-apq.arg());
                for k in 0..n {
                    a[(k, q)] *= ph;
                    v[(k, q)] *= ph;
                }
                for k in 0..n {
                    a[(q, k)] *= ph.conj();
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let theta = (aqq - app) / (T::lit(2.0) * r);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let t = if theta == T::zero() { T::one() } else { t };
                let cs = T::one() / (t * t + T::one()).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * re(cs) - akq * re(sn);
                    a[(k, q)] = akp * re(sn) + akq * re(cs);
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * re(cs) - vkq * re(sn);
                    v[(k, q)] = vkp * re(sn) + vkq * re(cs);
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * re(cs) - aqk * re(sn);
                    a[(q, k)] = apk * re(sn) + aqk * re(cs);
                }
                a[(p, q)] = C::zero();
                a[(q, p)] = C::zero();
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.partial_cmp(&a[(j, j)].re).unwrap());
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let mut vectors = Array2::zeros((n, n));
    for (col, &i) in order.iter().enumerate() {
        vectors.column_mut(col).assign(&v.column(i));
    }
    (values, vectors)
}

pub(crate) fn hermitian_eigenvalues<T: Real>(m: &Array2<C<T>>) -> Vec<T> {
    hermitian_eigh(m).0
}

/// Principal square root of a positive semidefinite Hermitian matrix;
/// negative eigenvalues from rounding are clamped to zero.
pub(crate) fn psd_sqrt<T: Real>(m: &Array2<C<T>>) -> Array2<C<T>> {
    let (vals, vecs) = hermitian_eigh(m);
    let n = vals.len();
    let mut scaled = vecs.clone();
    for (j, &lam) in vals.iter().enumerate() {
        let s = lam.max(T::zero()).sqrt();
        for i in 0..n {
            scaled[(i, j)] *= re(s);
        }
    }
    scaled.dot(&dagger(&vecs))
}

pub(crate) fn identity<T: Real>(n: usize) -> Array2<C<T>> {
    Array2::from_diag_elem(n, C::one())
}

#[allow(dead_code)]
pub(crate) fn is_identity<T: Real>(m: &Array2<C<T>>, tol: T) -> bool {
    max_abs_diff(m, &identity(m.nrows())) < tol
}

/// `L^dagger L`, visiting only the non-zero entries of each row of `L`.
pub(crate) fn gram<T: Real>(l: &Array2<C<T>>) -> Array2<C<T>> {
    let n = l.nrows();
    let mut out = Array2::zeros((l.ncols(), l.ncols()));
    let mut nz = Vec::new();
    for k in 0..n {
        nz.clear();
        nz.extend((0..l.ncols()).filter(|&j| !l[(k, j)].is_zero()));
        for &i in &nz {
            let a = l[(k, i)].conj();
            for &j in &nz {
                out[(i, j)] += a * l[(k, j)];
            }
        }
    }
    out
}

/// `a b`, skipping zero entries of `a`; most operators here are sparse
/// tensor products.
pub fn sparse_lhs_dot<T: Real>(a: &Array2<C<T>>, b: &Array2<C<T>>) -> Array2<C<T>> {
    let (n, m) = (a.nrows(), b.ncols());
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        let mut orow = out.row_mut(i);
        for (k, &x) in a.row(i).iter().enumerate() {
            if x.is_zero() {
                continue;
            }
            orow.zip_mut_with(&b.row(k), |o, &y| *o += x * y);
        }
    }
    out
}
