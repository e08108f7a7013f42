//! Photodetection-conditioned trajectories.
//!
//! Between detections the unnormalized state (or density matrix) follows
//! the no-click generator; a detection fires when its squared norm (or
//! trace) falls to a threshold `r` drawn uniformly on `(0, 1]`. The crossing
//! is located by bisection inside the RK4 step, the detector is picked in
//! proportion to the click rates, and the state is renormalized.

use num_traits::Zero;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{HilbertSpace, MixedState, Operator, PureState, QuantumState};
use crate::integrator::{substeps, IntegratorConfig, Kernel, Rk4, Unravel};
use crate::master_eq::{max_rate, LindbladModel};
use crate::metrics::{EnsembleStats, ObservableSet, TimeSeries};
use crate::params::SystemParams;
use crate::record::{Channel, DetectionRecord};
use crate::scalar::{c, Real, C};
use crate::sparse::Csr;

/// Per-step growth of the no-click weight tolerated before the step is
/// rejected as inaccurate.
pub const WEIGHT_GROWTH_LIMIT: f64 = 1e-10;
/// Most negative population (relative to the trace) accepted in a
/// conditioned density matrix.
pub const NEGATIVITY_LIMIT: f64 = 1e-6;
/// Total click rate below which no detector can fire.
pub const NO_PHOTON_RATE: f64 = 1e-30;

/// Source of the random numbers consumed by the jump method.
pub trait JumpSampler<T> {
    /// Threshold for the next no-click interval, in `(0, 1]`.
    fn next_threshold(&mut self) -> T;
    /// Uniform number in `[0, 1)` used to choose a detector.
    fn next_uniform(&mut self) -> T;
}

impl<T: Real, R: RngCore> JumpSampler<T> for R {
    fn next_threshold(&mut self) -> T {
        T::lit(1.0 - self.random::<f64>())
    }

    fn next_uniform(&mut self) -> T {
        T::lit(self.random::<f64>())
    }
}

/// Replays a fixed list of thresholds. Once exhausted it returns the
/// smallest positive value, so no further click happens; detector choices
/// always draw `0.5`.
#[derive(Debug, Clone)]
pub struct FixedThresholds<T> {
    thresholds: Vec<T>,
    next: usize,
}

impl<T: Real> FixedThresholds<T> {
    pub fn new(thresholds: Vec<T>) -> Self {
        Self { thresholds, next: 0 }
    }
}

impl<T: Real> JumpSampler<T> for FixedThresholds<T> {
    fn next_threshold(&mut self) -> T {
        let r = self
            .thresholds
            .get(self.next)
            .copied()
            .unwrap_or_else(T::min_positive_value);
        self.next += 1;
        r
    }

    fn next_uniform(&mut self) -> T {
        T::lit(0.5)
    }
}

/// Seed plus stream index; each pair yields an independent, reproducible
/// generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Pure,
    Mixed,
}

/// Borrowed view of an engine state: unnormalized data and its weight.
#[derive(Debug, Clone, Copy)]
pub struct StateView<'a, T: Real> {
    kind: Kind,
    data: &'a [C<T>],
    weight: T,
    space: &'a HilbertSpace,
}

impl<'a, T: Real> StateView<'a, T> {
    /// Squared norm or trace of the unnormalized state.
    pub fn weight(&self) -> T {
        self.weight
    }

    pub fn is_pure(&self) -> bool {
        self.kind == Kind::Pure
    }

    pub fn evaluate(&self, set: &ObservableSet<T>) -> Result<Vec<T>> {
        match self.kind {
            Kind::Pure => set.eval_vec(self.data, self.weight),
            Kind::Mixed => set.eval_mat(self.data, self.weight),
        }
    }

    /// Normalized copy.
    pub fn to_state(&self) -> QuantumState<T> {
        let n = self.space.dim();
        let s = C::new(T::one() / self.weight, T::zero());
        match self.kind {
            Kind::Pure => {
                let s = C::new(T::one() / self.weight.sqrt(), T::zero());
                let v = ndarray::Array1::from_iter(self.data.iter().map(|&z| z * s));
                QuantumState::Pure(PureState::unnormalized(self.space.clone(), v))
            }
            Kind::Mixed => {
                let m = ndarray::Array2::from_shape_fn((n, n), |(i, j)| self.data[i * n + j] * s);
                QuantumState::Mixed(MixedState::from_matrix_unchecked(self.space.clone(), m))
            }
        }
    }
}

/// A state conditioned on the record so far, with the threshold of the
/// current no-click interval.
#[derive(Debug, Clone)]
pub(crate) struct Conditioned<T: Real> {
    pub(crate) kind: Kind,
    pub(crate) space: HilbertSpace,
    pub(crate) y: Vec<C<T>>,
    pub(crate) threshold: T,
}

impl<T: Real> Conditioned<T> {
    pub(crate) fn new<S: JumpSampler<T>>(state: &QuantumState<T>, sampler: &mut S) -> Result<Self> {
        let (kind, y) = match state {
            QuantumState::Pure(p) => (Kind::Pure, p.normalized()?.amplitudes().to_vec()),
            QuantumState::Mixed(m) => {
                let m = m.normalized()?;
                (Kind::Mixed, m.matrix().iter().copied().collect())
            }
        };
        Ok(Self {
            kind,
            space: state.space().clone(),
            y,
            threshold: sampler.next_threshold(),
        })
    }

    pub(crate) fn weight(&self) -> T {
        weight(self.kind, &self.y, self.space.dim())
    }

    pub(crate) fn view(&self) -> StateView<'_, T> {
        StateView {
            kind: self.kind,
            data: &self.y,
            weight: self.weight(),
            space: &self.space,
        }
    }

    /// `psi -> U psi` or `rho -> U rho U^†`. Weight-preserving for unitary `U`.
    pub(crate) fn apply_unitary(&mut self, u: &Csr<T>) {
        let one = c(T::one(), T::zero());
        let mut out = vec![C::zero(); self.y.len()];
        match self.kind {
            Kind::Pure => u.mul_vec_add(one, &self.y, &mut out),
            Kind::Mixed => {
                let mut half = vec![C::zero(); self.y.len()];
                u.left_mul_add(one, &self.y, &mut half);
                u.right_mul_dag_add(one, &half, &mut out);
            }
        }
        self.y = out;
    }

    /// `<A>` of the normalized state.
    pub(crate) fn expect(&self, a: &Csr<T>) -> C<T> {
        let z = match self.kind {
            Kind::Pure => a.expect_vec(&self.y),
            Kind::Mixed => a.expect_mat(&self.y),
        };
        z / self.weight()
    }
}

fn weight<T: Real>(kind: Kind, y: &[C<T>], n: usize) -> T {
    match kind {
        Kind::Pure => y.iter().map(|z| z.norm_sqr()).sum(),
        Kind::Mixed => (0..n).map(|i| y[i * n + i].re).sum(),
    }
}

fn scale<T: Real>(y: &mut [C<T>], s: T) {
    for z in y {
        *z *= s;
    }
}

fn hermitize<T: Real>(y: &mut [C<T>], n: usize) {
    let half = T::lit(0.5);
    for i in 0..n {
        y[i * n + i].im = T::zero();
        for j in (i + 1)..n {
            let avg = (y[i * n + j] + y[j * n + i].conj()) * half;
            y[i * n + j] = avg;
            y[j * n + i] = avg.conj();
        }
    }
}

/// Receives engine states: on the sampling grid, and right after each
/// detection. Closures `FnMut(T, StateView) -> Result<()>` observe samples
/// only.
pub trait Observer<T: Real> {
    fn sample(&mut self, t: T, state: StateView<'_, T>) -> Result<()>;

    fn jump(&mut self, _t: T, _channel: Channel, _state: StateView<'_, T>) -> Result<()> {
        Ok(())
    }
}

impl<T: Real, F: FnMut(T, StateView<'_, T>) -> Result<()>> Observer<T> for F {
    fn sample(&mut self, t: T, state: StateView<'_, T>) -> Result<()> {
        self(t, state)
    }
}

/// Where in an interval the engine hands samples to the observer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Sampling {
    pub(crate) every: usize,
    /// Also report the state at the start of the interval.
    pub(crate) include_start: bool,
}

/// Integrator for conditioned states of one kernel.
pub(crate) struct Engine<'k, T: Real> {
    kernel: &'k Kernel<T>,
    kind: Kind,
    dt: T,
    rk: Rk4<T>,
    next: Vec<C<T>>,
    start: Vec<C<T>>,
    scratch: Vec<C<T>>,
}

impl<'k, T: Real> Engine<'k, T> {
    pub(crate) fn new(kernel: &'k Kernel<T>, kind: Kind, dt: T) -> Self {
        let n = kernel.dim();
        let len = match kind {
            Kind::Pure => n,
            Kind::Mixed => n * n,
        };
        Self {
            kernel,
            kind,
            dt,
            rk: Rk4::new(len),
            next: vec![C::zero(); len],
            start: vec![C::zero(); len],
            scratch: vec![C::zero(); len],
        }
    }

    fn step(&mut self, t: T, h: T, y: &[C<T>]) {
        let kernel = self.kernel;
        let mid = t + h * T::lit(0.5);
        match self.kind {
            Kind::Pure => self.rk.step(
                &|t, y: &[C<T>], o: &mut [C<T>]| kernel.pure_rhs(t, mid, y, o),
                t,
                h,
                y,
                &mut self.next,
            ),
            Kind::Mixed => {
                self.rk.step(
                    &|t, y: &[C<T>], o: &mut [C<T>]| kernel.mixed_rhs(t, mid, y, o),
                    t,
                    h,
                    y,
                    &mut self.next,
                );
                hermitize(&mut self.next, kernel.dim());
            }
        }
    }

    fn weight(&self, y: &[C<T>]) -> T {
        weight(self.kind, y, self.kernel.dim())
    }

    /// Click rate of each monitored channel for the current state.
    fn channel_weights(&self, y: &[C<T>]) -> Vec<T> {
        self.kernel
            .jumps()
            .iter()
            .map(|(_, j)| match self.kind {
                Kind::Pure => j.norm_sq_of_product(y),
                Kind::Mixed => j.sandwich_trace(y),
            })
            .collect()
    }

    fn jump<S: JumpSampler<T>>(&mut self, cond: &mut Conditioned<T>, sampler: &mut S) -> Result<Channel> {
        let w = self.channel_weights(&cond.y);
        let k = choose(&w, sampler)?;
        let (det, op) = &self.kernel.jumps()[k];
        self.scratch.iter_mut().for_each(|z| *z = C::zero());
        match self.kind {
            Kind::Pure => op.mul_vec_add(c(T::one(), T::zero()), &cond.y, &mut self.scratch),
            Kind::Mixed => op.sandwich_add(&cond.y, &mut self.scratch),
        }
        std::mem::swap(&mut cond.y, &mut self.scratch);
        let wt = self.weight(&cond.y);
        match self.kind {
            Kind::Pure => scale(&mut cond.y, T::one() / wt.sqrt()),
            Kind::Mixed => scale(&mut cond.y, T::one() / wt),
        }
        cond.threshold = sampler.next_threshold();
        Ok(*det)
    }

    fn check_growth(&self, before: T, after: T, t: T) -> Result<()> {
        let limit = T::lit(WEIGHT_GROWTH_LIMIT).max(T::epsilon() * T::lit(64.0));
        if !after.is_finite() || after - before > limit {
            return Err(Error::IntegratorAccuracy(format!(
                "no-click weight grew from {before} to {after} at t = {t}; reduce dt (currently {})",
                self.dt
            )));
        }
        Ok(())
    }

    fn check_positivity(&self, cond: &Conditioned<T>, t: T) -> Result<()> {
        if self.kind == Kind::Pure {
            return Ok(());
        }
        let n = self.kernel.dim();
        let w = cond.weight();
        let worst = (0..n).map(|i| cond.y[i * n + i].re).fold(T::infinity(), T::min);
        if worst < -T::lit(NEGATIVITY_LIMIT) * w {
            return Err(Error::IntegratorAccuracy(format!(
                "population {worst} below zero at t = {t}; reduce dt (currently {})",
                self.dt
            )));
        }
        Ok(())
    }

    /// Evolves `cond` from `t0` to `t1`, appending clicks to `record` and
    /// reporting samples to `observe`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn advance<S, F>(
        &mut self,
        cond: &mut Conditioned<T>,
        t0: T,
        t1: T,
        sampler: &mut S,
        record: &mut DetectionRecord<T>,
        sampling: Sampling,
        observe: &mut F,
    ) -> Result<()>
    where
        S: JumpSampler<T>,
        F: Observer<T>,
    {
        if sampling.include_start {
            self.check_positivity(cond, t0)?;
            observe.sample(t0, cond.view())?;
        }
        let steps = substeps(t0, t1, self.dt, &self.kernel.breakpoints());
        let last = steps.len();
        for (idx, (a, b, grid)) in steps.into_iter().enumerate() {
            let mut a = a;
            while a < b {
                let w0 = self.weight(&cond.y);
                self.step(a, b - a, &cond.y);
                let w1 = self.weight(&self.next);
                self.check_growth(w0, w1, b)?;
                if w1 > cond.threshold {
                    std::mem::swap(&mut cond.y, &mut self.next);
                    break;
                }
                // The threshold is crossed inside (a, b]: bisect on the
                // partial step length from the same starting point.
                self.start.copy_from_slice(&cond.y);
                let start = std::mem::take(&mut self.start);
                let tol = (T::lit(1e-10) * (b - a)).max(T::epsilon() * T::lit(8.0) * b.abs().max(T::one()));
                let (mut lo, mut hi) = (T::zero(), b - a);
                let mut at_hi = self.next.clone();
                while hi - lo > tol {
                    let mid = (lo + hi) * T::lit(0.5);
                    self.step(a, mid, &start);
                    if self.weight(&self.next) > cond.threshold {
                        lo = mid;
                    } else {
                        hi = mid;
                        at_hi.copy_from_slice(&self.next);
                    }
                }
                self.start = start;
                let tj = if hi >= b - a { b } else { a + hi };
                cond.y = at_hi;
                let det = self.jump(cond, sampler)?;
                record.push(tj, det);
                observe.jump(tj, det, cond.view())?;
                a = tj;
            }
            if let Some(k) = grid {
                if k % sampling.every == 0 || idx + 1 == last {
                    self.check_positivity(cond, b)?;
                    observe.sample(b, cond.view())?;
                }
            }
        }
        record.set_final_time(t1);
        Ok(())
    }
}

fn choose<T: Real, S: JumpSampler<T>>(weights: &[T], sampler: &mut S) -> Result<usize> {
    let total: T = weights.iter().copied().sum();
    if !(total >= T::lit(NO_PHOTON_RATE)) {
        return Err(Error::NoPhotonAvailable(total.as_f64()));
    }
    let u = sampler.next_uniform() * total;
    let mut acc = T::zero();
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > T::zero() {
            last = k;
            acc += w;
            if u < acc {
                return Ok(k);
            }
        }
    }
    Ok(last)
}

/// Picks a jump operator with probability `<c_k^† c_k> / sum_j <c_j^† c_j>`.
pub fn sample_jump_channel<T: Real, S: JumpSampler<T>>(
    state: &QuantumState<T>,
    ops: &[Operator<T>],
    sampler: &mut S,
) -> Result<usize> {
    let weights = ops
        .iter()
        .map(|op| state.expect(&op.dagger().matmul(op)?).map(|z| z.re.max(T::zero())))
        .collect::<Result<Vec<_>>>()?;
    choose(&weights, sampler)
}

/// Detection record plus the normalized states sampled along the run.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    pub record: DetectionRecord<T>,
    pub times: Vec<T>,
    pub states: Vec<QuantumState<T>>,
    pub params: SystemParams<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn final_state(&self) -> &QuantumState<T> {
        self.states.last().expect("at least the initial sample")
    }
}

fn is_ideal<T: Real>(model: &LindbladModel<T>) -> bool {
    model
        .channels
        .iter()
        .all(|ch| ch.detector.is_some() && ch.efficiency == T::one())
}

fn check_pure_preconditions<T: Real>(model: &LindbladModel<T>, params: &SystemParams<T>) -> Result<()> {
    if !params.is_ideal() {
        return Err(Error::InvalidParameter {
            name: "eta",
            reason: "the pure-state engine needs perfect detection and no relaxation".into(),
        });
    }
    if !is_ideal(model) {
        return Err(Error::InvalidParameter {
            name: "channels",
            reason: "the pure-state engine needs every channel monitored with unit efficiency".into(),
        });
    }
    Ok(())
}

fn run_stored<T: Real, S: JumpSampler<T>>(
    model: &LindbladModel<T>,
    initial: QuantumState<T>,
    params: &SystemParams<T>,
    sampler: &mut S,
    cfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T>> {
    let mut traj = Trajectory {
        record: DetectionRecord::empty(T::zero()),
        times: Vec::new(),
        states: Vec::new(),
        params: *params,
    };
    let mut record = DetectionRecord::empty(T::zero());
    run_observed(
        model,
        &initial,
        sampler,
        cfg,
        &mut record,
        |t: T, v: StateView<'_, T>| {
            traj.times.push(t);
            traj.states.push(v.to_state());
            Ok(())
        },
    )?;
    traj.record = record;
    Ok(traj)
}

/// Runs one trajectory from `t = 0` to `cfg.t_end`, handing states to
/// `observe`; the engine kind follows the initial state. Returns the final
/// normalized state.
pub fn run_observed<T: Real, S, F>(
    model: &LindbladModel<T>,
    initial: &QuantumState<T>,
    sampler: &mut S,
    cfg: &IntegratorConfig<T>,
    record: &mut DetectionRecord<T>,
    mut observe: F,
) -> Result<QuantumState<T>>
where
    S: JumpSampler<T>,
    F: Observer<T>,
{
    cfg.validate(max_rate(model))?;
    if initial.space() != model.space() {
        return Err(Error::DimensionMismatch {
            expected: model.space().dim(),
            found: initial.space().dim(),
        });
    }
    let kernel = model.kernel(Unravel::Conditional, cfg.compress_channels);
    let mut cond = Conditioned::new(initial, sampler)?;
    let mut engine = Engine::new(&kernel, cond.kind, cfg.dt);
    let sampling = Sampling {
        every: cfg.sample_every,
        include_start: true,
    };
    engine.advance(&mut cond, T::zero(), cfg.t_end, sampler, record, sampling, &mut observe)?;
    Ok(cond.view().to_state())
}

/// Pure-state jump trajectory; requires perfect detection and no
/// relaxation.
pub fn run_pure_trajectory<T: Real, S: JumpSampler<T>>(
    model: &LindbladModel<T>,
    initial: &PureState<T>,
    params: &SystemParams<T>,
    sampler: &mut S,
    cfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T>> {
    check_pure_preconditions(model, params)?;
    run_stored(model, QuantumState::Pure(initial.clone()), params, sampler, cfg)
}

/// Density-matrix jump trajectory for arbitrary efficiencies and
/// relaxation.
pub fn run_mixed_trajectory<T: Real, S: JumpSampler<T>>(
    model: &LindbladModel<T>,
    initial: &MixedState<T>,
    params: &SystemParams<T>,
    sampler: &mut S,
    cfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T>> {
    params.validate()?;
    run_stored(model, QuantumState::Mixed(initial.clone()), params, sampler, cfg)
}

/// Runs `f(i, rng_i)` for `i in 0..n` in parallel and returns the results
/// in index order. Stream `i` of `base_seed` drives run `i`.
pub fn map_streams<R, F>(n: usize, base_seed: u64, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<R> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| f(i, &mut RngStream::new(base_seed, i as u64).rng()))
        .collect()
}

/// Data one run contributes to ensemble statistics.
#[derive(Debug, Clone)]
pub struct RunSummary<T> {
    pub series: TimeSeries<T>,
    pub counts: (usize, usize),
    /// Final odd-parity population, when the system has two qubits.
    pub p_minus1: Option<T>,
}

/// `(N+, N-)` of a record; single-detector clicks count as `N+`.
pub fn photon_counts<T: Real>(record: &DetectionRecord<T>) -> (usize, usize) {
    (
        record.count(Channel::Plus) + record.count(Channel::Single),
        record.count(Channel::Minus),
    )
}

/// Merges run summaries (in order) into ensemble statistics.
pub fn summarize<T: Real>(runs: Vec<RunSummary<T>>) -> Result<EnsembleStats<T>> {
    let counts: Vec<_> = runs.iter().map(|r| r.counts).collect();
    let p: Vec<T> = runs.iter().filter_map(|r| r.p_minus1).collect();
    let series: Vec<_> = runs.into_iter().map(|r| r.series).collect();
    EnsembleStats::from_runs(&series, &counts, p)
}

/// `n` independent trajectories from the same initial state, using the
/// pure engine when the state is pure and the model ideal and the
/// density-matrix engine otherwise.
pub fn run_ensemble<T: Real>(
    model: &LindbladModel<T>,
    initial: &QuantumState<T>,
    params: &SystemParams<T>,
    n: usize,
    base_seed: u64,
    cfg: &IntegratorConfig<T>,
    observables: &ObservableSet<T>,
) -> Result<EnsembleStats<T>> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "ensemble needs at least one run".into(),
        });
    }
    params.validate()?;
    let initial = match initial {
        QuantumState::Pure(p) if !(params.is_ideal() && is_ideal(model)) => QuantumState::Mixed(p.to_mixed()),
        other => other.clone(),
    };
    let two_qubits = model.num_qubits() == 2;
    let runs = map_streams(n, base_seed, |_, rng| {
        let mut series = TimeSeries::new(observables.names().to_vec());
        let mut record = DetectionRecord::empty(T::zero());
        let fin = run_observed(model, &initial, rng, cfg, &mut record, |t: T, v: StateView<'_, T>| {
            series.push(t, &v.evaluate(observables)?);
            Ok(())
        })?;
        series.events = record.events().to_vec();
        Ok(RunSummary {
            series,
            counts: photon_counts(&record),
            p_minus1: two_qubits.then(|| crate::metrics::odd_parity_population(&fin)),
        })
    })?;
    summarize(runs)
}
