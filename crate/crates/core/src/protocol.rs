//! The remote parity measurement: displace both resonators, let them
//! acquire qubit-dependent phases while photons leak into the detectors,
//! return them to vacuum and undo the record-dependent qubit phases.

use serde::{Deserialize, Serialize};

use crate::analytic::predicted_from_outcome;
use crate::error::{Error, Result};
use crate::fock::{
    coherent_state, displacement, embed, fock_annihilation, phase_gate, qubit_reduced_state, HilbertSpace, MixedState,
    Operator, PureState, QuantumState,
};
use crate::integrator::{IntegratorConfig, Kernel, Unravel};
use crate::master_eq::{max_rate, LindbladModel};
use crate::metrics::{fidelity, odd_parity_population, EnsembleStats, ObservableSet, TimeSeries};
use crate::params::{CouplingSchedule, DriveModel, QubitAmplitudes, SystemParams};
use crate::record::{Channel, DetectionRecord};
use crate::scalar::{c, cis, re, Real, C};
use crate::sparse::Csr;
use crate::trajectory::{
    map_streams, photon_counts, summarize, Conditioned, Engine, JumpSampler, Observer, RunSummary, Sampling, StateView,
};

/// Largest resonator population tolerated after the return to vacuum with
/// the ideal engine.
pub const VACUUM_TOLERANCE: f64 = 1e-8;
/// Shortest run, in units of `1/kappa`, for the tunable variant without a
/// second coupling window.
pub const TUNABLE_MIN_DURATION: f64 = 8.0;
/// Default run length of the tunable variant, in units of `1/kappa`.
pub const TUNABLE_DEFAULT_DURATION: f64 = 10.0;

/// Which conditioned-state engine drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Pure,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Variant<T> {
    /// Coupling always on, `t_f = k pi / chi`, resonators displaced back to
    /// vacuum at `t_f`.
    Standard,
    /// Coupling switched off at `t_off = pi/(2 chi)`. With `t_prime` it is
    /// switched on again for another `t_off`, after which the resonators are
    /// displaced back to vacuum; without it they are left to decay.
    Tunable { t_prime: Option<T> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams<T> {
    pub system: SystemParams<T>,
    /// `t_f = k pi / chi` for the standard variant.
    pub k: u32,
    pub variant: Variant<T>,
    /// Maximum number of displace/evolve/return cycles.
    pub repetitions: usize,
    /// A run counts as projected once `P_-1` is this close to 0 or 1.
    pub projection_threshold: T,
    /// Run length of the tunable variant; ignored by the standard variant.
    pub t_final: Option<T>,
    /// Keep evolving after feedback up to this time (measured from the
    /// start of the last cycle).
    pub observe_until: Option<T>,
    pub dt: T,
    pub sample_every: usize,
}

impl<T: Real> ProtocolParams<T> {
    pub fn new(system: SystemParams<T>) -> Self {
        Self {
            system,
            k: 1,
            variant: Variant::Standard,
            repetitions: 1,
            projection_threshold: T::lit(0.01),
            t_final: None,
            observe_until: None,
            dt: T::lit(1e-3) / system.max_rate(),
            sample_every: 1,
        }
    }

    pub fn tunable(system: SystemParams<T>, t_prime: Option<T>) -> Self {
        Self {
            variant: Variant::Tunable { t_prime },
            ..Self::new(system)
        }
    }

    pub fn schedule(&self) -> CouplingSchedule<T> {
        match self.variant {
            Variant::Standard => CouplingSchedule::Always,
            Variant::Tunable { t_prime } => CouplingSchedule::quarter_period(self.system.chi, t_prime),
        }
    }

    /// Duration of one cycle.
    pub fn t_final(&self) -> T {
        let chi = self.system.chi;
        match self.variant {
            Variant::Standard => T::from_count(self.k as usize) * T::PI() / chi,
            Variant::Tunable { t_prime } => self.t_final.unwrap_or_else(|| {
                let base = T::lit(TUNABLE_DEFAULT_DURATION) / self.system.kappa;
                match t_prime {
                    Some(tp) => base.max(tp + T::FRAC_PI_2() / chi),
                    None => base,
                }
            }),
        }
    }

    /// Every violated constraint, as `(field, reason)`.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = self.system.violations();
        if self.k == 0 {
            out.push(("k", "must be >= 1".into()));
        }
        if self.repetitions == 0 {
            out.push(("repetitions", "must be >= 1".into()));
        }
        let thr = self.projection_threshold;
        if !(thr > T::zero() && thr < T::lit(0.5)) {
            out.push(("projection_threshold", format!("must lie in (0, 0.5), got {thr}")));
        }
        if self.sample_every == 0 {
            out.push(("sample_every", "must be >= 1".into()));
        }
        if !(self.dt > T::zero()) {
            out.push(("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !matches!(self.system.drive_model, DriveModel::InstantaneousDisplacement) {
            out.push(("drive_model", "protocol runs use instantaneous displacements".into()));
        }
        if self.system.chi > T::zero() && self.system.kappa > T::zero() {
            out.extend(self.schedule().violations());
            let tf = self.t_final();
            if let Variant::Tunable { t_prime } = self.variant {
                let t_off = T::FRAC_PI_2() / self.system.chi;
                match t_prime {
                    None => {
                        let min = T::lit(TUNABLE_MIN_DURATION) / self.system.kappa;
                        if !(tf >= min) {
                            out.push((
                                "t_final",
                                format!("must be >= 8/kappa = {min} without t_prime, got {tf}"),
                            ));
                        }
                    }
                    Some(tp) => {
                        if !(tf >= tp + t_off) {
                            out.push((
                                "t_final",
                                format!("must be >= t_prime + t_off = {}, got {tf}", tp + t_off),
                            ));
                        }
                    }
                }
            }
            if let Some(until) = self.observe_until {
                if !(until >= tf) {
                    out.push(("observe_until", format!("must be >= t_f = {tf}, got {until}")));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            Some((name, reason)) => Err(Error::InvalidParameter { name, reason }),
            None => Ok(()),
        }
    }
}

/// Record-dependent qubit phases to be undone.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeedbackPhases<T> {
    pub phi_plus: T,
    pub phi_minus: T,
}

/// `phi_+ = 2 chi sum t_i` over plus clicks, `phi_- = pi N_-`.
pub fn compute_feedback<T: Real>(record: &DetectionRecord<T>, chi: T) -> FeedbackPhases<T> {
    compute_feedback_scheduled(record, chi, &CouplingSchedule::Always)
}

/// As [`compute_feedback`] with each click time replaced by the coupling
/// clock at that time.
pub fn compute_feedback_scheduled<T: Real>(
    record: &DetectionRecord<T>,
    chi: T,
    schedule: &CouplingSchedule<T>,
) -> FeedbackPhases<T> {
    let tau: T = record.times(Channel::Plus).map(|t| schedule.phase_clock(t)).sum();
    FeedbackPhases {
        phi_plus: T::lit(2.0) * chi * tau,
        phi_minus: T::PI() * T::from_count(record.count(Channel::Minus)),
    }
}

/// `R(phi_+/2 + phi_-/2) ⊗ R(phi_+/2 - phi_-/2)` on the two qubits.
pub fn feedback_operator<T: Real>(phases: &FeedbackPhases<T>) -> Operator<T> {
    let half = T::lit(0.5);
    let a = phase_gate(half * (phases.phi_plus + phases.phi_minus));
    let b = phase_gate(half * (phases.phi_plus - phases.phi_minus));
    a.kron(&b)
}

/// Extends an operator on the first two (qubit) factors by the identity on
/// the rest of `space`.
fn lift_qubit_pair<T: Real>(op: &Operator<T>, space: &HilbertSpace) -> Result<Operator<T>> {
    let dims = space.dims();
    if dims.len() < 2 || dims[0] != 2 || dims[1] != 2 {
        return Err(Error::InvalidDimension(format!(
            "expected two leading qubits, got {dims:?}"
        )));
    }
    if dims.len() == 2 {
        return Ok(op.clone());
    }
    let rest = HilbertSpace::new(dims[2..].to_vec())?;
    Ok(op.kron(&Operator::identity(&rest)))
}

/// Applies the feedback gates to a state whose first two factors are the
/// qubits.
pub fn apply_feedback<T: Real>(state: &QuantumState<T>, phases: &FeedbackPhases<T>) -> Result<QuantumState<T>> {
    let f = lift_qubit_pair(&feedback_operator(phases), state.space())?;
    Ok(match state {
        QuantumState::Pure(p) => QuantumState::Pure(f.apply(p)?),
        QuantumState::Mixed(m) => QuantumState::Mixed(m.conjugate_by(&f)?),
    })
}

/// Qubit-parity projectors `Pi_1 = |gg><gg| + |ee><ee|`,
/// `Pi_-1 = |ge><ge| + |eg><eg|`.
#[derive(Debug, Clone)]
pub struct ParityProjectors<T: Real> {
    pub even: Operator<T>,
    pub odd: Operator<T>,
}

impl<T: Real> ParityProjectors<T> {
    pub fn new() -> Self {
        let space = HilbertSpace::new(vec![2, 2]).expect("valid dims");
        let diag = |odd: bool| {
            let m = ndarray::Array2::from_shape_fn((4, 4), |(i, j)| {
                let parity = (i == 1 || i == 2) == odd;
                if i == j && parity {
                    c(T::one(), T::zero())
                } else {
                    c(T::zero(), T::zero())
                }
            });
            Operator::new(space.clone(), m).expect("square")
        };
        Self {
            even: diag(false),
            odd: diag(true),
        }
    }

    /// Both projectors lifted to `space`.
    pub fn embedded(&self, space: &HilbertSpace) -> Result<Self> {
        Ok(Self {
            even: lift_qubit_pair(&self.even, space)?,
            odd: lift_qubit_pair(&self.odd, space)?,
        })
    }
}

impl<T: Real> Default for ParityProjectors<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome<T: Real> {
    /// All clicks, on a lab clock where cycle `i` starts at `i t_f`.
    pub record: DetectionRecord<T>,
    pub phases: FeedbackPhases<T>,
    /// Odd-parity population when the last cycle ends.
    pub p_minus1: T,
    /// `P_-1` rounded to a parity when within the projection threshold.
    pub outcome: Option<Parity>,
    /// Post-feedback qubit state at the end of the run.
    pub final_qubits: MixedState<T>,
    pub final_state: QuantumState<T>,
    /// Fidelity of `final_qubits` with the ideal prediction for the record.
    pub fidelity_to_prediction: T,
    pub iterations_used: usize,
    /// Observables sampled along the run (empty without an observable set).
    pub series: TimeSeries<T>,
}

/// One cycle of the protocol, no repetition.
pub fn run_protocol<T: Real, S: JumpSampler<T>>(
    q: &QubitAmplitudes<T>,
    pp: &ProtocolParams<T>,
    engine: EngineKind,
    sampler: &mut S,
) -> Result<ProtocolOutcome<T>> {
    let once = ProtocolParams { repetitions: 1, ..*pp };
    run_protocol_observed(q, &once, engine, sampler, None)
}

/// Repeats cycles until the parity is resolved or `pp.repetitions` is
/// reached, then applies a single feedback for all clicks.
pub fn run_protocol_repeated<T: Real, S: JumpSampler<T>>(
    q: &QubitAmplitudes<T>,
    pp: &ProtocolParams<T>,
    engine: EngineKind,
    sampler: &mut S,
) -> Result<ProtocolOutcome<T>> {
    run_protocol_observed(q, pp, engine, sampler, None)
}

/// The tunable-coupling variant; `pp.variant` must be `Tunable`.
pub fn run_variant_tunable<T: Real, S: JumpSampler<T>>(
    q: &QubitAmplitudes<T>,
    pp: &ProtocolParams<T>,
    engine: EngineKind,
    sampler: &mut S,
) -> Result<ProtocolOutcome<T>> {
    if !matches!(pp.variant, Variant::Tunable { .. }) {
        return Err(Error::InvalidParameter {
            name: "variant",
            reason: "expected the tunable variant".into(),
        });
    }
    run_protocol_observed(q, pp, engine, sampler, None)
}

/// Full protocol with optional sampling of `observables`.
pub fn run_protocol_observed<T: Real, S: JumpSampler<T>>(
    q: &QubitAmplitudes<T>,
    pp: &ProtocolParams<T>,
    engine: EngineKind,
    sampler: &mut S,
    observables: Option<&ObservableSet<T>>,
) -> Result<ProtocolOutcome<T>> {
    ProtocolRunner::new(pp)?.run(q, engine, sampler, observables)
}

/// Model, generator and gates of one parameter set, prepared once and
/// shared by any number of runs.
pub struct ProtocolRunner<T: Real> {
    pp: ProtocolParams<T>,
    schedule: CouplingSchedule<T>,
    kernel: Kernel<T>,
    space: HilbertSpace,
    t_final: T,
    alphas: [C<T>; 2],
    /// Resonator labels at `t_f`.
    labels: [C<T>; 2],
    /// `(a_j, a_j^† a_j)` for both resonators.
    moments: Vec<(Csr<T>, Csr<T>)>,
    /// Return to vacuum, when the variant has one.
    returning: Option<Csr<T>>,
    /// Return to vacuum followed by the next drive.
    merged: Option<Csr<T>>,
}

impl<T: Real> ProtocolRunner<T> {
    pub fn new(pp: &ProtocolParams<T>) -> Result<Self> {
        pp.validate()?;
        let sys = &pp.system;
        let schedule = pp.schedule();
        let model = LindbladModel::two_qubit(sys)?.with_schedule(schedule);
        let tf = pp.t_final();
        let cfg = IntegratorConfig {
            dt: pp.dt,
            t_end: tf,
            sample_every: pp.sample_every,
            compress_channels: true,
        };
        cfg.validate(max_rate(&model))?;
        let kernel = model.kernel(Unravel::Conditional, true);
        let space = model.space().clone();
        let n = sys.fock_cutoff;
        let alphas = {
            let (a1, a2) = sys.alphas();
            [a1, a2]
        };

        // Both qubit states leave a resonator with the same label whenever
        // the accumulated dispersive phase is a multiple of pi.
        let theta = sys.chi * schedule.phase_clock(tf);
        let decay = re((-sys.kappa * tf * T::lit(0.5)).exp());
        let labels = alphas.map(|a| a * decay * cis(theta));
        let returns = !matches!(pp.variant, Variant::Tunable { t_prime: None });
        if returns {
            for a in alphas {
                let split = (a * decay * (cis(theta) - cis(-theta))).norm();
                if split > T::lit(1e-9) * a.norm().max(T::one()) {
                    return Err(Error::InternalConsistency(format!(
                        "resonator labels differ by {split} at t_f = {tf}"
                    )));
                }
            }
        }
        let tol = T::lit(1e-15);
        let mut moments = Vec::new();
        for k in [2, 3] {
            let a = fock_annihilation(n)?;
            let number = a.dagger().matmul(&a)?;
            moments.push((
                Csr::from_dense(embed(&a, k, &space)?.matrix(), tol),
                Csr::from_dense(embed(&number, k, &space)?.matrix(), tol),
            ));
        }
        let mode_displacement = |betas: [C<T>; 2]| -> Result<Csr<T>> {
            let d = displacement(betas[0], n)?.kron(&displacement(betas[1], n)?);
            let q4 = Operator::identity(&HilbertSpace::new(vec![2, 2])?);
            Ok(Csr::from_dense(q4.kron(&d).matrix(), tol))
        };
        let returning = if returns {
            Some(mode_displacement(labels.map(|l| -l))?)
        } else {
            None
        };
        let merged = if returns && pp.repetitions > 1 {
            Some(mode_displacement([alphas[0] - labels[0], alphas[1] - labels[1]])?)
        } else {
            None
        };
        Ok(Self {
            pp: *pp,
            schedule,
            kernel,
            space,
            t_final: tf,
            alphas,
            labels,
            moments,
            returning,
            merged,
        })
    }

    pub fn params(&self) -> &ProtocolParams<T> {
        &self.pp
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    fn feedback(&self, phases: &FeedbackPhases<T>) -> Result<Csr<T>> {
        let rest = self.space.dim() / 4;
        Ok(Csr::kron_identity(
            feedback_operator(phases).matrix(),
            rest,
            T::lit(1e-15),
        ))
    }

    /// One realization of the protocol.
    pub fn run<S: JumpSampler<T>>(
        &self,
        q: &QubitAmplitudes<T>,
        engine: EngineKind,
        sampler: &mut S,
        observables: Option<&ObservableSet<T>>,
    ) -> Result<ProtocolOutcome<T>> {
        self.run_with(q, engine, sampler, observables, &mut NoHook)
    }

    /// Like [`run`](Self::run), additionally handing every sample and click
    /// to `hook` on the lab clock.
    pub fn run_with<S: JumpSampler<T>, H: Observer<T>>(
        &self,
        q: &QubitAmplitudes<T>,
        engine: EngineKind,
        sampler: &mut S,
        observables: Option<&ObservableSet<T>>,
        hook: &mut H,
    ) -> Result<ProtocolOutcome<T>> {
        let pp = &self.pp;
        let sys = &pp.system;
        if q.num_qubits() != 2 {
            return Err(Error::InvalidParameter {
                name: "q",
                reason: "the protocol needs two-qubit amplitudes".into(),
            });
        }
        if engine == EngineKind::Pure && !sys.is_ideal() {
            return Err(Error::InvalidParameter {
                name: "engine",
                reason: "the pure engine needs perfect detection and no relaxation".into(),
            });
        }
        if let Some(o) = observables {
            if o.space() != &self.space {
                return Err(Error::DimensionMismatch {
                    expected: self.space.dim(),
                    found: o.space().dim(),
                });
            }
        }
        let n = sys.fock_cutoff;
        let tf = self.t_final;
        let psi0 = PureState::new(HilbertSpace::new(vec![2, 2])?, ndarray::Array1::from(q.to_vec()))?
            .kron(&coherent_state(self.alphas[0], n)?)
            .kron(&coherent_state(self.alphas[1], n)?);
        let init = match engine {
            EngineKind::Pure => QuantumState::Pure(psi0),
            EngineKind::Mixed => QuantumState::Mixed(psi0.to_mixed()),
        };
        let mut cond = Conditioned::new(&init, sampler)?;
        let mut eng = Engine::new(&self.kernel, cond.kind, pp.dt);

        let mut series = TimeSeries::new(observables.map(|o| o.names().to_vec()).unwrap_or_default());
        let mut record = DetectionRecord::empty(T::zero());
        let mut phi_plus = T::zero();
        let mut n_minus = 0usize;
        let mut cos_product = T::one();
        let mut offset = T::zero();
        let mut iterations = 0;
        let sampling = Sampling {
            every: pp.sample_every,
            include_start: true,
        };
        let thr = pp.projection_threshold;
        let p_minus1 = loop {
            iterations += 1;
            let mut local = DetectionRecord::empty(T::zero());
            {
                let mut observe = Recorder {
                    offset,
                    observables,
                    series: &mut series,
                    hook: &mut *hook,
                };
                eng.advance(&mut cond, T::zero(), tf, sampler, &mut local, sampling, &mut observe)?;
            }
            for &(t, ch) in local.events() {
                match ch {
                    Channel::Plus => {
                        let tau = self.schedule.phase_clock(t);
                        phi_plus += T::lit(2.0) * sys.chi * tau;
                        cos_product *= (sys.chi * tau).cos();
                    }
                    Channel::Minus => n_minus += 1,
                    Channel::Single => {}
                }
            }
            record = record.concat(&local, offset)?;
            let p = odd_parity_population(&cond.view().to_state());
            if self.returning.is_some() && engine == EngineKind::Pure {
                let mut residual = T::zero();
                for ((a, num), l) in self.moments.iter().zip(self.labels) {
                    let n_j = cond.expect(num).re;
                    let a_j = cond.expect(a);
                    residual += n_j - T::lit(2.0) * (l.conj() * a_j).re + l.norm_sqr();
                }
                if residual > T::lit(VACUUM_TOLERANCE) {
                    return Err(Error::InternalConsistency(format!(
                        "resonators hold {residual} photons after the return displacement"
                    )));
                }
            }
            let resolved = p <= thr || p >= T::one() - thr;
            match (&self.merged, resolved || iterations >= pp.repetitions) {
                (Some(merged), false) => {
                    cond.apply_unitary(merged);
                    offset += tf;
                }
                _ => {
                    if let Some(d) = &self.returning {
                        cond.apply_unitary(d);
                    }
                    break p;
                }
            }
        };

        let phases = FeedbackPhases {
            phi_plus,
            phi_minus: T::PI() * T::from_count(n_minus),
        };
        cond.apply_unitary(&self.feedback(&phases)?);
        let until = pp.observe_until.unwrap_or(tf);
        if until > tf {
            let mut after = DetectionRecord::empty(T::zero());
            let mut observe = Recorder {
                offset,
                observables,
                series: &mut series,
                hook: &mut *hook,
            };
            eng.advance(&mut cond, tf, until, sampler, &mut after, sampling, &mut observe)?;
            record = record.concat(&after, offset)?;
        } else {
            if let Some(o) = observables {
                series.push(offset + tf, &cond.view().evaluate(o)?);
            }
            hook.sample(offset + tf, cond.view())?;
        }
        series.events = record.events().to_vec();

        let final_state = cond.view().to_state();
        let final_qubits = qubit_reduced_state(&final_state)?;
        let prediction = predicted_from_outcome(q, n_minus > 0, cos_product)?;
        let fid = fidelity(
            &QuantumState::Mixed(final_qubits.clone()),
            &QuantumState::Pure(prediction),
        )?;
        let outcome = if p_minus1 <= thr {
            Some(Parity::Even)
        } else if p_minus1 >= T::one() - thr {
            Some(Parity::Odd)
        } else {
            None
        };
        Ok(ProtocolOutcome {
            record,
            phases,
            p_minus1,
            outcome,
            final_qubits,
            final_state,
            fidelity_to_prediction: fid,
            iterations_used: iterations,
            series,
        })
    }
}

struct NoHook;

impl<T: Real> Observer<T> for NoHook {
    fn sample(&mut self, _t: T, _state: StateView<'_, T>) -> Result<()> {
        Ok(())
    }
}

/// Shifts cycle-local times onto the lab clock, records observables and
/// forwards to a caller hook.
struct Recorder<'a, T: Real, H> {
    offset: T,
    observables: Option<&'a ObservableSet<T>>,
    series: &'a mut TimeSeries<T>,
    hook: &'a mut H,
}

impl<T: Real, H: Observer<T>> Observer<T> for Recorder<'_, T, H> {
    fn sample(&mut self, t: T, state: StateView<'_, T>) -> Result<()> {
        if let Some(o) = self.observables {
            self.series.push(self.offset + t, &state.evaluate(o)?);
        }
        self.hook.sample(self.offset + t, state)
    }

    fn jump(&mut self, t: T, channel: Channel, state: StateView<'_, T>) -> Result<()> {
        self.hook.jump(self.offset + t, channel, state)
    }
}

/// Ensemble of independent protocol runs: statistics plus each run's
/// outcome (with its series moved into the statistics).
#[derive(Debug, Clone)]
pub struct ProtocolEnsemble<T: Real> {
    pub stats: EnsembleStats<T>,
    pub outcomes: Vec<ProtocolOutcome<T>>,
}

impl<T: Real> ProtocolEnsemble<T> {
    pub fn mean_iterations(&self) -> T {
        let total: usize = self.outcomes.iter().map(|o| o.iterations_used).sum();
        T::from_count(total) / T::from_count(self.outcomes.len())
    }
}

pub fn run_protocol_ensemble<T: Real>(
    q: &QubitAmplitudes<T>,
    pp: &ProtocolParams<T>,
    engine: EngineKind,
    n: usize,
    base_seed: u64,
    observables: Option<&ObservableSet<T>>,
) -> Result<ProtocolEnsemble<T>> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "ensemble needs at least one run".into(),
        });
    }
    let runner = ProtocolRunner::new(pp)?;
    let mut outcomes = map_streams(n, base_seed, |_, rng| runner.run(q, engine, rng, observables))?;
    let runs = outcomes
        .iter_mut()
        .map(|o| RunSummary {
            series: std::mem::replace(&mut o.series, TimeSeries::new(Vec::new())),
            counts: photon_counts(&o.record),
            p_minus1: Some(o.p_minus1),
        })
        .collect();
    Ok(ProtocolEnsemble {
        stats: summarize(runs)?,
        outcomes,
    })
}
