//! Fixed-step RK4 on flattened state buffers, and the compiled generator
//! shared by the master-equation and trajectory engines.
//!
//! Both engines integrate `dy/dt` for an effective non-Hermitian Hamiltonian
//! `K(t) = s(t) H0 + g(t) Hd - (i/2) sum_k c_k^† c_k`:
//! pure states follow `-i K psi`, density matrices follow
//! `-i (K rho - rho K^†) + sum_j J_j rho J_j^†` where the sandwich
//! operators `J_j` are the unmonitored channels (all channels for the
//! master equation).

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::CouplingSchedule;
use crate::record::Channel;
use crate::scalar::{c, re, Real, C};
use crate::sparse::{compress_pairs, Csr};

/// Relative drop tolerance when converting operators to sparse form.
const SPARSE_TOL: f64 = 1e-15;

/// Step size, horizon and sampling stride of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig<T> {
    pub dt: T,
    pub t_end: T,
    /// Record a sample every this many steps (and always at the end).
    pub sample_every: usize,
    /// Rotate pairs of sandwich operators into sparser combinations.
    pub compress_channels: bool,
}

impl<T: Real> IntegratorConfig<T> {
    pub fn new(dt: T, t_end: T) -> Self {
        Self {
            dt,
            t_end,
            sample_every: 1,
            compress_channels: true,
        }
    }

    /// `dt = 1e-3 / max(kappa, chi)`.
    pub fn with_default_step(max_rate: T, t_end: T) -> Self {
        Self::new(T::lit(1e-3) / max_rate, t_end)
    }

    pub fn sample_every(mut self, n: usize) -> Self {
        self.sample_every = n;
        self
    }

    /// Checks `dt > 0`, `dt <= 1e-2 / max_rate`, a positive stride and a
    /// non-negative horizon.
    pub fn validate(&self, max_rate: T) -> Result<()> {
        let limit = T::lit(1e-2) / max_rate;
        // Allow for rounding in the rate estimate.
        if !(self.dt > T::zero()) || self.dt > limit * T::lit(1.0 + 1e-6) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must lie in (0, 1e-2/max rate = {limit}], got {}", self.dt),
            });
        }
        if self.sample_every == 0 {
            return Err(Error::InvalidParameter {
                name: "sample_every",
                reason: "must be >= 1".into(),
            });
        }
        if !(self.t_end >= T::zero()) {
            return Err(Error::InvalidParameter {
                name: "t_end",
                reason: format!("must be >= 0, got {}", self.t_end),
            });
        }
        Ok(())
    }
}

/// Gaussian envelope `exp(-t^2/2w^2)/sqrt(2 pi w^2)`, cut to zero beyond
/// five widths.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Pulse<T> {
    pub width: T,
}

impl<T: Real> Pulse<T> {
    pub(crate) const SPAN: f64 = 5.0;

    pub(crate) fn envelope(&self, t: T) -> T {
        if t.abs() > T::lit(Self::SPAN) * self.width {
            return T::zero();
        }
        let w = self.width;
        (-(t * t) / (T::lit(2.0) * w * w)).exp() / (T::TAU() * w * w).sqrt()
    }
}

/// Classical fourth-order Runge-Kutta with reusable scratch buffers.
pub(crate) struct Rk4<T: Real> {
    k1: Vec<C<T>>,
    k2: Vec<C<T>>,
    k3: Vec<C<T>>,
    k4: Vec<C<T>>,
    tmp: Vec<C<T>>,
}

impl<T: Real> Rk4<T> {
    pub(crate) fn new(len: usize) -> Self {
        let z = vec![C::zero(); len];
        Self {
            k1: z.clone(),
            k2: z.clone(),
            k3: z.clone(),
            k4: z.clone(),
            tmp: z,
        }
    }

    /// `out = y(t + h)` starting from `y(t) = y`.
    pub(crate) fn step<F>(&mut self, f: &F, t: T, h: T, y: &[C<T>], out: &mut [C<T>])
    where
        F: Fn(T, &[C<T>], &mut [C<T>]),
    {
        let half = h / T::lit(2.0);
        f(t, y, &mut self.k1);
        axpy_into(&mut self.tmp, y, half, &self.k1);
        f(t + half, &self.tmp, &mut self.k2);
        axpy_into(&mut self.tmp, y, half, &self.k2);
        f(t + half, &self.tmp, &mut self.k3);
        axpy_into(&mut self.tmp, y, h, &self.k3);
        f(t + h, &self.tmp, &mut self.k4);
        let w = re(h / T::lit(6.0));
        let two = re(T::lit(2.0));
        for i in 0..y.len() {
            out[i] = y[i] + w * (self.k1[i] + two * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
    }
}

fn axpy_into<T: Real>(out: &mut [C<T>], y: &[C<T>], h: T, k: &[C<T>]) {
    let h = re(h);
    for ((o, &a), &b) in out.iter_mut().zip(y).zip(k) {
        *o = a + h * b;
    }
}

/// Step boundaries of a run from `t0` to `t1`: the grid `t0 + k dt` with
/// the last step shortened to land on `t1`, further split at `breaks`.
/// Each entry is `(start, end, grid_index)` where `grid_index` is `Some(k)`
/// when `end` is grid point `k`.
pub(crate) fn substeps<T: Real>(t0: T, t1: T, dt: T, breaks: &[T]) -> Vec<(T, T, Option<usize>)> {
    let mut grid = vec![t0];
    if t1 > t0 {
        let n = ((t1 - t0) / dt).ceil().to_usize().unwrap_or(0).max(1);
        for k in 1..n {
            let t = t0 + T::from_count(k) * dt;
            if t < t1 - dt * T::lit(1e-9) {
                grid.push(t);
            }
        }
        grid.push(t1);
    }
    let mut out = Vec::with_capacity(grid.len());
    for k in 1..grid.len() {
        let (a, b) = (grid[k - 1], grid[k]);
        let mut start = a;
        for &bp in breaks {
            if bp > start && bp < b {
                out.push((start, bp, None));
                start = bp;
            }
        }
        out.push((start, b, Some(k)));
    }
    out
}

/// Collapse channel as seen by the compiled kernel.
#[derive(Debug, Clone)]
pub(crate) struct ChannelSpec<T: Real> {
    pub op: ndarray::Array2<C<T>>,
    pub detector: Option<Channel>,
    pub efficiency: T,
}

/// How channels are split between jumps and dissipators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Unravel {
    /// Every channel contributes a full dissipator.
    Master,
    /// Monitored fractions jump; the rest are sandwich terms.
    Conditional,
}

pub(crate) struct Kernel<T: Real> {
    n: usize,
    h0: Csr<T>,
    sink: Csr<T>,
    drive: Option<(Csr<T>, Pulse<T>)>,
    schedule: CouplingSchedule<T>,
    sandwiches: Vec<Csr<T>>,
    jumps: Vec<(Channel, Csr<T>)>,
}

impl<T: Real> Kernel<T> {
    pub(crate) fn compile(
        h0: &ndarray::Array2<C<T>>,
        drive: Option<(&ndarray::Array2<C<T>>, T)>,
        schedule: CouplingSchedule<T>,
        channels: &[ChannelSpec<T>],
        mode: Unravel,
        compress: bool,
    ) -> Self {
        let n = h0.nrows();
        let tol = T::lit(SPARSE_TOL);
        let mut sink = ndarray::Array2::zeros((n, n));
        let mut sandwich_ops = Vec::new();
        let mut jumps = Vec::new();
        for ch in channels {
            sink = sink + crate::dense::gram(&ch.op);
            let monitored = match (mode, ch.detector) {
                (Unravel::Conditional, Some(det)) => Some((det, ch.efficiency)),
                _ => None,
            };
            match monitored {
                Some((det, eta)) => {
                    if eta > T::zero() {
                        jumps.push((det, Csr::from_dense(&ch.op.mapv(|z| z * re(eta.sqrt())), tol)));
                    }
                    if eta < T::one() {
                        sandwich_ops.push(ch.op.mapv(|z| z * re((T::one() - eta).sqrt())));
                    }
                }
                None => sandwich_ops.push(ch.op.clone()),
            }
        }
        let sandwiches = if compress {
            compress_pairs(sandwich_ops, tol)
        } else {
            sandwich_ops
                .iter()
                .map(|m| Csr::from_dense(m, tol))
                .filter(|c| c.nnz() > 0)
                .collect()
        };
        Self {
            n,
            h0: Csr::from_dense(h0, tol),
            sink: Csr::from_dense(&sink, tol),
            drive: drive.map(|(m, w)| (Csr::from_dense(m, tol), Pulse { width: w })),
            schedule,
            sandwiches,
            jumps,
        }
    }

    pub(crate) fn dim(&self) -> usize {
        self.n
    }

    pub(crate) fn jumps(&self) -> &[(Channel, Csr<T>)] {
        &self.jumps
    }

    pub(crate) fn breakpoints(&self) -> Vec<T> {
        self.schedule.breakpoints()
    }

    fn drive_level(&self, t: T) -> T {
        self.drive.as_ref().map_or(T::zero(), |(_, p)| p.envelope(t))
    }

    /// Diagonal of `K(t)` when it is diagonal. The coupling is read at
    /// `seg`, a time inside the current step, so that a switch on a step
    /// boundary never leaks into the neighbouring step.
    fn k_diagonal(&self, t: T, seg: T) -> Option<Vec<C<T>>> {
        if !self.drive_level(t).is_zero() {
            return None;
        }
        let h = self.h0.diagonal()?;
        let s = self.sink.diagonal()?;
        let on = re(self.schedule.coupling(seg));
        let mhalf = c(T::zero(), -T::lit(0.5));
        Some(h.iter().zip(s).map(|(&a, &b)| on * a + mhalf * b).collect())
    }

    /// Terms `(w_m, A_m)` of `K(t) = sum w_m A_m`.
    fn k_terms(&self, t: T, seg: T) -> Vec<(C<T>, &Csr<T>)> {
        let mut terms = vec![
            (re(self.schedule.coupling(seg)), &self.h0),
            (c(T::zero(), -T::lit(0.5)), &self.sink),
        ];
        if let Some((d, _)) = &self.drive {
            let g = self.drive_level(t);
            if !g.is_zero() {
                terms.push((re(g), d));
            }
        }
        terms
    }

    /// `out = -i K(t) psi`.
    pub(crate) fn pure_rhs(&self, t: T, seg: T, psi: &[C<T>], out: &mut [C<T>]) {
        let mi = c(T::zero(), -T::one());
        if let Some(k) = self.k_diagonal(t, seg) {
            for i in 0..self.n {
                out[i] = mi * k[i] * psi[i];
            }
            return;
        }
        out.iter_mut().for_each(|z| *z = C::zero());
        for (w, a) in self.k_terms(t, seg) {
            a.mul_vec_add(mi * w, psi, out);
        }
    }

    /// `out = -i (K rho - rho K^†) + sum_j J_j rho J_j^†`.
    pub(crate) fn mixed_rhs(&self, t: T, seg: T, rho: &[C<T>], out: &mut [C<T>]) {
        let n = self.n;
        let i1 = c(T::zero(), T::one());
        if let Some(k) = self.k_diagonal(t, seg) {
            for a in 0..n {
                let ka = k[a];
                let row = &rho[a * n..(a + 1) * n];
                let orow = &mut out[a * n..(a + 1) * n];
                for b in 0..n {
                    orow[b] = -i1 * (ka - k[b].conj()) * row[b];
                }
            }
        } else {
            out.iter_mut().for_each(|z| *z = C::zero());
            for (w, a) in self.k_terms(t, seg) {
                a.left_mul_add(-i1 * w, rho, out);
                a.right_mul_dag_add(i1 * w.conj(), rho, out);
            }
        }
        for s in &self.sandwiches {
            s.sandwich_add(rho, out);
        }
    }
}
