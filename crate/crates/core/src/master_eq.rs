//! Unconditioned Lindblad evolution of the qubit-resonator models.

use ndarray::Array2;
use num_traits::Zero;

use crate::dense;
use crate::error::{Error, Result};
use crate::fock::{embed, fock_annihilation, fock_number, sigma_minus, sigma_z, HilbertSpace, MixedState, Operator};
use crate::integrator::{substeps, ChannelSpec, IntegratorConfig, Kernel, Pulse, Rk4, Unravel};
use crate::params::{CouplingSchedule, DriveModel, SystemParams};
use crate::record::Channel;
use crate::scalar::{c, re, Real, C};

/// Largest tolerated trace drift over a master-equation run.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-6;

/// Dissipation channel. `op` already carries the square root of its rate.
#[derive(Debug, Clone)]
pub struct CollapseChannel<T: Real> {
    pub op: Operator<T>,
    /// Detector watching this channel, if any.
    pub detector: Option<Channel>,
    /// Fraction of the channel registered by the detector.
    pub efficiency: T,
}

impl<T: Real> CollapseChannel<T> {
    pub fn unmonitored(op: Operator<T>) -> Self {
        Self {
            op,
            detector: None,
            efficiency: T::zero(),
        }
    }

    pub fn monitored(op: Operator<T>, detector: Channel, efficiency: T) -> Self {
        Self {
            op,
            detector: Some(detector),
            efficiency,
        }
    }
}

/// Resonant drive `g(t) G` with Gaussian envelope `g` and Hermitian
/// generator `G = sum_j (i alpha_j a_j^† - i alpha_j^* a_j)`.
#[derive(Debug, Clone)]
pub struct DriveTerm<T: Real> {
    pub generator: Operator<T>,
    pub width: T,
}

/// Hamiltonian, coupling schedule, optional drive and collapse channels.
#[derive(Debug, Clone)]
pub struct LindbladModel<T: Real> {
    /// Coupling Hamiltonian, multiplied by the schedule's `coupling(t)`.
    pub hamiltonian: Operator<T>,
    pub schedule: CouplingSchedule<T>,
    pub drive: Option<DriveTerm<T>>,
    pub channels: Vec<CollapseChannel<T>>,
}

impl<T: Real> LindbladModel<T> {
    /// Validates Hermiticity and dimensions.
    pub fn new(hamiltonian: Operator<T>, channels: Vec<CollapseChannel<T>>) -> Result<Self> {
        let hamiltonian = hamiltonian.assert_hermitian()?;
        for ch in &channels {
            if ch.op.space() != hamiltonian.space() {
                return Err(Error::DimensionMismatch {
                    expected: hamiltonian.dim(),
                    found: ch.op.dim(),
                });
            }
            if !(ch.efficiency >= T::zero() && ch.efficiency <= T::one()) {
                return Err(Error::InvalidParameter {
                    name: "efficiency",
                    reason: format!("must lie in [0, 1], got {}", ch.efficiency),
                });
            }
        }
        Ok(Self {
            hamiltonian,
            schedule: CouplingSchedule::Always,
            drive: None,
            channels,
        })
    }

    pub fn with_schedule(mut self, schedule: CouplingSchedule<T>) -> Self {
        self.schedule = schedule;
        self
    }

    /// Qubit ⊗ resonator with `chi sigma_z a^† a`, the monitored channel
    /// `sqrt(kappa) a` (efficiency `eta_plus`) and relaxation if `gamma > 0`.
    pub fn single_qubit(params: &SystemParams<T>) -> Result<Self> {
        params.validate()?;
        let n = params.fock_cutoff;
        let space = HilbertSpace::single_qubit_resonator(n)?;
        let sz = embed(&sigma_z(), 0, &space)?;
        let num = embed(&fock_number(n)?, 1, &space)?;
        let h = sz.matmul(&num)?.scale_real(params.chi);
        let a = embed(&fock_annihilation(n)?, 1, &space)?;
        let mut channels = vec![CollapseChannel::monitored(
            a.scale_real(params.kappa.sqrt()),
            Channel::Single,
            params.eta_plus,
        )];
        if params.gamma > T::zero() {
            channels.push(CollapseChannel::unmonitored(
                embed(&sigma_minus(), 0, &space)?.scale_real(params.gamma.sqrt()),
            ));
        }
        Self::new(h, channels)
    }

    /// Two qubits and two resonators with `chi sum_j sigma_z,j a_j^† a_j`,
    /// detectors on `c+-` and relaxation of both qubits if `gamma > 0`.
    pub fn two_qubit(params: &SystemParams<T>) -> Result<Self> {
        params.validate()?;
        let n = params.fock_cutoff;
        let space = HilbertSpace::two_qubit_resonators(n)?;
        let num = fock_number(n)?;
        let mut h = Operator::zeros(&space);
        for j in 0..2 {
            let term = embed(&sigma_z(), j, &space)?.matmul(&embed(&num, 2 + j, &space)?)?;
            h = h.add(&term)?;
        }
        let h = h.scale_real(params.chi);
        let (a1, a2) = scattering_pair(n, &space)?;
        let k = params.kappa.sqrt();
        let half = T::FRAC_1_SQRT_2();
        let plus = a1.add(&a2)?.scale_real(k * half);
        let minus = a1.sub(&a2)?.scale_real(k * half);
        let mut channels = vec![
            CollapseChannel::monitored(plus, Channel::Plus, params.eta_plus),
            CollapseChannel::monitored(minus, Channel::Minus, params.eta_minus),
        ];
        if params.gamma > T::zero() {
            for j in 0..2 {
                channels.push(CollapseChannel::unmonitored(
                    embed(&sigma_minus(), j, &space)?.scale_real(params.gamma.sqrt()),
                ));
            }
        }
        Self::new(h, channels)
    }

    /// Same dynamics with the detector-mode channels replaced by unmonitored
    /// `sqrt(kappa) a_1`, `sqrt(kappa) a_2`.
    pub fn two_qubit_local_channels(params: &SystemParams<T>) -> Result<Self> {
        let mut m = Self::two_qubit(params)?;
        let space = m.space().clone();
        let (a1, a2) = scattering_pair(params.fock_cutoff, &space)?;
        let k = params.kappa.sqrt();
        m.channels.splice(
            0..2,
            [
                CollapseChannel::unmonitored(a1.scale_real(k)),
                CollapseChannel::unmonitored(a2.scale_real(k)),
            ],
        );
        Ok(m)
    }

    pub fn space(&self) -> &HilbertSpace {
        self.hamiltonian.space()
    }

    pub fn num_qubits(&self) -> usize {
        self.space().num_subsystems() / 2
    }

    /// Attaches the Gaussian pulse of `params.drive_model`, applied to every
    /// resonator with its amplitude from `params`.
    pub fn with_gaussian_drive(mut self, params: &SystemParams<T>) -> Result<Self> {
        let DriveModel::Gaussian { duration } = params.drive_model else {
            return Err(Error::InvalidParameter {
                name: "drive_model",
                reason: "Gaussian drive requested but drive model is instantaneous".into(),
            });
        };
        params.validate()?;
        let space = self.space().clone();
        let nq = self.num_qubits();
        let (a1, a2) = params.alphas();
        let amps = [a1, a2];
        let mut g = Operator::zeros(&space);
        let a = fock_annihilation(params.fock_cutoff)?;
        for (j, &amp) in amps.iter().enumerate().take(nq) {
            let aj = embed(&a, nq + j, &space)?;
            let ia = amp * c(T::zero(), T::one());
            let term = aj.dagger().scale(ia).add(&aj.scale(ia.conj()))?;
            g = g.add(&term)?;
        }
        self.drive = Some(DriveTerm {
            generator: g.assert_hermitian()?,
            width: duration,
        });
        Ok(self)
    }

    pub(crate) fn channel_specs(&self) -> Vec<ChannelSpec<T>> {
        self.channels
            .iter()
            .map(|ch| ChannelSpec {
                op: ch.op.matrix().clone(),
                detector: ch.detector,
                efficiency: ch.efficiency,
            })
            .collect()
    }

    pub(crate) fn kernel(&self, mode: Unravel, compress: bool) -> Kernel<T> {
        Kernel::compile(
            self.hamiltonian.matrix(),
            self.drive.as_ref().map(|d| (d.generator.matrix(), d.width)),
            self.schedule,
            &self.channel_specs(),
            mode,
            compress,
        )
    }
}

fn scattering_pair<T: Real>(n: usize, space: &HilbertSpace) -> Result<(Operator<T>, Operator<T>)> {
    let a = fock_annihilation(n)?;
    Ok((embed(&a, 2, space)?, embed(&a, 3, space)?))
}

/// `-i[H(t), rho] + sum_k D[c_k] rho` by dense products.
pub fn lindblad_rhs<T: Real>(model: &LindbladModel<T>, rho: &MixedState<T>) -> Result<Array2<C<T>>> {
    lindblad_rhs_at(model, T::zero(), rho)
}

pub fn lindblad_rhs_at<T: Real>(model: &LindbladModel<T>, t: T, rho: &MixedState<T>) -> Result<Array2<C<T>>> {
    if rho.space() != model.space() {
        return Err(Error::DimensionMismatch {
            expected: model.space().dim(),
            found: rho.space().dim(),
        });
    }
    let r = rho.matrix();
    let mut h = model.hamiltonian.matrix().mapv(|z| z * re(model.schedule.coupling(t)));
    if let Some(d) = &model.drive {
        let g = Pulse { width: d.width }.envelope(t);
        h = h + d.generator.matrix().mapv(|z| z * re(g));
    }
    let mi = c(T::zero(), -T::one());
    let mut out = (h.dot(r) - r.dot(&h)).mapv(|z| z * mi);
    let half = re(T::lit(0.5));
    for ch in &model.channels {
        let l = ch.op.matrix();
        let ld = dense::dagger(l);
        let ldl = dense::gram(l);
        out = out + l.dot(r).dot(&ld) - (ldl.dot(r) + r.dot(&ldl)).mapv(|z| z * half);
    }
    Ok(out)
}

/// Sampled density matrices of a run.
#[derive(Debug, Clone)]
pub struct Evolution<T: Real> {
    pub times: Vec<T>,
    pub states: Vec<MixedState<T>>,
}

/// Integrates from `t = 0` to `cfg.t_end`, storing every sampled state.
pub fn evolve<T: Real>(
    model: &LindbladModel<T>,
    initial: &MixedState<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<Evolution<T>> {
    let mut ev = Evolution {
        times: Vec::new(),
        states: Vec::new(),
    };
    evolve_with(model, initial, cfg, |t, s| {
        ev.times.push(t);
        ev.states.push(s.clone());
        Ok(())
    })?;
    Ok(ev)
}

/// Integrates from `t = 0` to `cfg.t_end`, handing each sample to `observe`
/// instead of storing it. Returns the final state.
pub fn evolve_with<T: Real, F>(
    model: &LindbladModel<T>,
    initial: &MixedState<T>,
    cfg: &IntegratorConfig<T>,
    observe: F,
) -> Result<MixedState<T>>
where
    F: FnMut(T, &MixedState<T>) -> Result<()>,
{
    evolve_between(model, initial, T::zero(), cfg.t_end, cfg, observe)
}

/// Integrates from `t0` to `t1` on the grid `t0 + k dt`.
pub fn evolve_between<T: Real, F>(
    model: &LindbladModel<T>,
    initial: &MixedState<T>,
    t0: T,
    t1: T,
    cfg: &IntegratorConfig<T>,
    mut observe: F,
) -> Result<MixedState<T>>
where
    F: FnMut(T, &MixedState<T>) -> Result<()>,
{
    cfg.validate(max_rate(model))?;
    if initial.space() != model.space() {
        return Err(Error::DimensionMismatch {
            expected: model.space().dim(),
            found: initial.space().dim(),
        });
    }
    let kernel = model.kernel(Unravel::Master, cfg.compress_channels);
    let mut state = initial.clone();
    let tr0 = state.trace();
    let n = kernel.dim();
    let mut rk = Rk4::new(n * n);
    let mut next = vec![C::zero(); n * n];
    observe(t0, &state)?;
    let steps = substeps(t0, t1, cfg.dt, &kernel.breakpoints());
    let last = steps.len();
    for (idx, (a, b, grid)) in steps.into_iter().enumerate() {
        {
            let y = state.matrix_mut().as_slice_mut().expect("standard layout");
            let mid = (a + b) * T::lit(0.5);
            let f = |t: T, y: &[C<T>], out: &mut [C<T>]| kernel.mixed_rhs(t, mid, y, out);
            rk.step(&f, a, b - a, y, &mut next);
            y.copy_from_slice(&next);
        }
        state.symmetrize();
        let drift = (state.trace() - tr0).abs();
        if drift > T::lit(TRACE_DRIFT_LIMIT) || !drift.is_finite() {
            return Err(Error::IntegratorAccuracy(format!(
                "trace drifted by {drift} at t = {b}; reduce dt (currently {})",
                cfg.dt
            )));
        }
        if let Some(k) = grid {
            if k % cfg.sample_every == 0 || idx + 1 == last {
                observe(b, &state)?;
            }
        }
    }
    Ok(state)
}

/// Runs the Gaussian pulse from `-5 T_d` to `5 T_d` with a step resolving
/// the pulse, then continues on the regular grid to `cfg.t_end`. `initial`
/// is the undriven state (resonators in vacuum). Sample times are shifted
/// so that the pulse centre is `t = 0`.
pub fn evolve_with_gaussian_drive<T: Real>(
    model: &LindbladModel<T>,
    params: &SystemParams<T>,
    initial: &MixedState<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<Evolution<T>> {
    let driven = model.clone().with_gaussian_drive(params)?;
    let width = driven.drive.as_ref().map(|d| d.width).unwrap_or_else(T::zero);
    let span = T::lit(Pulse::<T>::SPAN) * width;
    let fine = IntegratorConfig {
        dt: cfg.dt.min(width / T::lit(200.0)),
        sample_every: usize::MAX,
        ..*cfg
    };
    let mut ev = Evolution {
        times: Vec::new(),
        states: Vec::new(),
    };
    let after_pulse = evolve_between(&driven, initial, -span, span, &fine, |_, _| Ok(()))?;
    let end = cfg.t_end.max(span);
    evolve_between(&driven, &after_pulse, span, end, cfg, |t, s| {
        ev.times.push(t);
        ev.states.push(s.clone());
        Ok(())
    })?;
    Ok(ev)
}

/// Fastest per-photon rate of the generator: `chi` from the coupling,
/// `kappa` and `gamma` from the summed decay terms.
pub(crate) fn max_rate<T: Real>(model: &LindbladModel<T>) -> T {
    let mut rate = T::zero();
    let h = model.hamiltonian.matrix();
    let n = h.nrows();
    let space = model.space();
    let photons = |i: usize| -> usize {
        let d = space.unflatten(i);
        let nq = space.num_subsystems() / 2;
        d[nq..].iter().sum::<usize>().max(1)
    };
    for i in 0..n {
        rate = rate.max(h[(i, i)].norm() / T::from_count(photons(i)));
    }
    let mut sink = Array2::<C<T>>::zeros((n, n));
    for ch in &model.channels {
        let l = ch.op.matrix();
        sink = sink + dense::gram(l);
    }
    for i in 0..n {
        rate = rate.max(sink[(i, i)].re / T::from_count(photons(i)));
    }
    if rate.is_zero() {
        T::one()
    } else {
        rate
    }
}
