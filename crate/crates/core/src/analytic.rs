//! Closed-form solutions of the dispersive model after an instantaneous
//! displacement: coherent-state labels, unconditioned qubit decoherence, jump
//! times, and the exact conditional states for ideal photodetection.
//!
//! All functions take the coupling schedule into account through its phase
//! clock, so the tunable-coupling variant uses the same formulas with every
//! `chi t` replaced by `chi tau(t)`.

use ndarray::{Array1, Array2};
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::fock::{check_truncation, coherent_amplitudes, HilbertSpace, MixedState, PureState};
use crate::params::{CouplingSchedule, QubitAmplitudes, SystemParams};
use crate::record::{Channel, DetectionRecord};
use crate::scalar::{c, cis, imag_unit, re, Real, C};

/// Representation of the two resonator modes in two-qubit states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeBasis {
    /// Resonators `a1`, `a2`; the layout the simulator integrates in.
    Physical,
    /// Detector modes `c+`, `c-`.
    Scattering,
}

/// Resonator labels `(alpha_g, alpha_e)` conditioned on the qubit state.
pub fn coherent_labels_1q<T: Real>(params: &SystemParams<T>, t: T) -> (C<T>, C<T>) {
    coherent_labels_scheduled(params, &CouplingSchedule::Always, t)
}

pub fn coherent_labels_scheduled<T: Real>(
    params: &SystemParams<T>,
    schedule: &CouplingSchedule<T>,
    t: T,
) -> (C<T>, C<T>) {
    let decay = (-params.kappa * t / T::lit(2.0)).exp();
    let theta = params.chi * schedule.phase_clock(t);
    let a = params.alpha * re(decay);
    (a * cis(theta), a * cis(-theta))
}

/// `<alpha_g(t)|alpha_e(t)>` for untruncated coherent states.
pub fn label_overlap<T: Real>(params: &SystemParams<T>, t: T) -> C<T> {
    let (ag, ae) = coherent_labels_1q(params, t);
    // <a|b> = exp(-|a|^2/2 - |b|^2/2 + a* b)
    (re(-(ag.norm_sqr() + ae.norm_sqr()) * T::lit(0.5)) + ag.conj() * ae).exp()
}

/// Reduced qubit coherence `a_eg(t) = <e|rho_q(t)|g>` of the unconditioned
/// evolution starting from coherence `c_eg0`.
pub fn offdiag_coherence<T: Real>(params: &SystemParams<T>, c_eg0: C<T>, t: T) -> C<T> {
    c_eg0 * dephasing_factor(params, t)
}

/// `a_eg(t) / a_eg(0)`.
pub fn dephasing_factor<T: Real>(params: &SystemParams<T>, t: T) -> C<T> {
    let two = T::lit(2.0);
    let (chi, kappa) = (params.chi, params.kappa);
    let growth = (c(-kappa, -two * chi) * re(t)).exp();
    let denom = c(T::one(), -kappa / (two * chi));
    (re(-params.alpha.norm_sqr()) * (C::<T>::one() - growth) / denom).exp()
}

/// Long-time rotation angle of the unconditioned qubit coherence.
pub fn phi_unconditional<T: Real>(params: &SystemParams<T>) -> T {
    let two = T::lit(2.0);
    -params.alpha.norm_sqr() / (two * params.chi / params.kappa + params.kappa / (two * params.chi))
}

/// Stochastic phase `2 chi sum t_i` of a single-qubit record, unreduced.
pub fn stochastic_phase_1q<T: Real>(record: &DetectionRecord<T>, chi: T) -> Result<T> {
    if let Some(&(_, ch)) = record.events().iter().find(|e| e.1 != Channel::Single) {
        return Err(Error::InvalidParameter {
            name: "record",
            reason: format!("single-qubit record contains a {ch} event"),
        });
    }
    Ok(T::lit(2.0) * chi * record.events().iter().map(|e| e.0).sum::<T>())
}

/// Time at which the no-jump probability, starting from 1 at `t_start`,
/// falls to `r`, when the modes hold `alpha_sq_total e^{-kappa t}` photons.
/// `None` when the remaining photons are too few to ever reach `r`.
pub fn jump_time_from_threshold<T: Real>(r: T, alpha_sq_total: T, kappa: T, t_start: T) -> Option<T> {
    if r >= T::one() {
        return Some(t_start);
    }
    let remaining = (-kappa * t_start).exp();
    if !(alpha_sq_total > T::zero()) || r <= (-alpha_sq_total * remaining).exp() {
        return None;
    }
    let arg = remaining + r.ln() / alpha_sq_total;
    if arg <= T::zero() {
        return None;
    }
    Some(-arg.ln() / kappa)
}

/// Mean number of photons emitted by `t`, summed over modes.
pub fn expected_photon_count<T: Real>(alpha_sq_total: T, kappa: T, t: T) -> T {
    alpha_sq_total * (T::one() - (-kappa * t).exp())
}

/// Times `k pi / chi` at which the qubit and resonator return to a product state.
pub fn product_return_time<T: Real>(chi: T, k: u32) -> T {
    T::from_count(k as usize) * T::PI() / chi
}

fn single_amplitudes<T: Real>(q: &QubitAmplitudes<T>) -> Result<(C<T>, C<T>)> {
    match *q {
        QubitAmplitudes::Single { q_g, q_e } => Ok((q_g, q_e)),
        QubitAmplitudes::Pair { .. } => Err(Error::InvalidParameter {
            name: "q",
            reason: "expected single-qubit amplitudes".into(),
        }),
    }
}

fn pair_amplitudes<T: Real>(q: &QubitAmplitudes<T>) -> Result<[C<T>; 4]> {
    match *q {
        QubitAmplitudes::Pair { q_gg, q_ge, q_eg, q_ee } => Ok([q_gg, q_ge, q_eg, q_ee]),
        QubitAmplitudes::Single { .. } => Err(Error::InvalidParameter {
            name: "q",
            reason: "expected two-qubit amplitudes".into(),
        }),
    }
}

fn mode_state<T: Real>(label: C<T>, cutoff: usize) -> Array1<C<T>> {
    coherent_amplitudes(label, cutoff)
}

/// Exact normalized state on qubit ⊗ mode at time `t` for ideal detection,
/// given the record up to `t`.
pub fn analytic_trajectory_1q<T: Real>(
    params: &SystemParams<T>,
    q: &QubitAmplitudes<T>,
    record: &DetectionRecord<T>,
    t: T,
) -> Result<PureState<T>> {
    let (q_g, q_e) = single_amplitudes(q)?;
    let n = params.fock_cutoff;
    check_truncation(params.alpha.norm().as_f64(), n)?;
    let theta = params.chi * events_until(record, t)?.iter().map(|e| e.0).sum::<T>();
    let (ag, ae) = coherent_labels_1q(params, t);
    let mut amps = Array1::zeros(2 * n);
    amps.slice_mut(ndarray::s![0..n])
        .assign(&mode_state(ag, n).mapv(|z| z * q_g * cis(theta)));
    amps.slice_mut(ndarray::s![n..])
        .assign(&mode_state(ae, n).mapv(|z| z * q_e * cis(-theta)));
    PureState::new(HilbertSpace::single_qubit_resonator(n)?, amps)
}

fn events_until<T: Real>(record: &DetectionRecord<T>, t: T) -> Result<Vec<(T, Channel)>> {
    Ok(record.events().iter().copied().filter(|e| e.0 <= t).collect())
}

/// Relative weights of the `gg, ge, eg, ee` branches after the record,
/// before normalization.
pub fn branch_weights_2q<T: Real>(
    q: &QubitAmplitudes<T>,
    record: &DetectionRecord<T>,
    chi: T,
    schedule: &CouplingSchedule<T>,
) -> Result<[C<T>; 4]> {
    let [q_gg, q_ge, q_eg, q_ee] = pair_amplitudes(q)?;
    let n_minus = record.count(Channel::Minus);
    if record.count(Channel::Single) > 0 {
        return Err(Error::InvalidParameter {
            name: "record",
            reason: "two-qubit record contains a single-channel event".into(),
        });
    }
    if n_minus > 0 {
        let i = imag_unit::<T>();
        let phase = i.powu(n_minus as u32);
        return Ok([C::zero(), phase * q_ge, phase.conj() * q_eg, C::zero()]);
    }
    let mut theta = T::zero();
    let mut cprod = T::one();
    for t in record.times(Channel::Plus) {
        let x = chi * schedule.phase_clock(t);
        theta += x;
        cprod *= x.cos();
    }
    Ok([
        cis(theta) * q_gg,
        q_ge * re(cprod),
        q_eg * re(cprod),
        cis(-theta) * q_ee,
    ])
}

/// Resonator labels of branch `(s1, s2)` (`false` = ground) at time `t`.
pub fn branch_labels_2q<T: Real>(
    params: &SystemParams<T>,
    schedule: &CouplingSchedule<T>,
    excited: (bool, bool),
    t: T,
    basis: ModeBasis,
) -> (C<T>, C<T>) {
    let (a1, a2) = params.alphas();
    let decay = re((-params.kappa * t / T::lit(2.0)).exp());
    let theta = params.chi * schedule.phase_clock(t);
    let sign = |e: bool| if e { -theta } else { theta };
    let b1 = a1 * decay * cis(sign(excited.0));
    let b2 = a2 * decay * cis(sign(excited.1));
    match basis {
        ModeBasis::Physical => (b1, b2),
        ModeBasis::Scattering => {
            let h = re(T::FRAC_1_SQRT_2());
            ((b1 + b2) * h, (b1 - b2) * h)
        }
    }
}

/// Exact normalized two-qubit state for ideal detection, always-on
/// coupling, in the detector-mode basis qubit1 ⊗ qubit2 ⊗ c+ ⊗ c-.
pub fn analytic_trajectory_2q<T: Real>(
    params: &SystemParams<T>,
    q: &QubitAmplitudes<T>,
    record: &DetectionRecord<T>,
    t: T,
) -> Result<PureState<T>> {
    analytic_state_2q(params, q, record, t, &CouplingSchedule::Always, ModeBasis::Scattering)
}

/// Exact normalized two-qubit state for ideal detection under `schedule`,
/// with the modes represented in `basis`.
pub fn analytic_state_2q<T: Real>(
    params: &SystemParams<T>,
    q: &QubitAmplitudes<T>,
    record: &DetectionRecord<T>,
    t: T,
    schedule: &CouplingSchedule<T>,
    basis: ModeBasis,
) -> Result<PureState<T>> {
    let (a1, a2) = params.alphas();
    if a1 != a2 {
        return Err(Error::InvalidParameter {
            name: "alpha_second",
            reason: "closed-form two-qubit states need equal drive amplitudes".into(),
        });
    }
    let n = params.fock_cutoff;
    let reach = match basis {
        ModeBasis::Physical => a1.norm(),
        ModeBasis::Scattering => a1.norm() * T::SQRT_2() * (-params.kappa * t / T::lit(2.0)).exp(),
    };
    check_truncation(reach.as_f64(), n)?;
    let truncated = record.before(t + t.abs() * T::epsilon());
    let weights = branch_weights_2q(q, &truncated, params.chi, schedule)?;
    let space = HilbertSpace::two_qubit_resonators(n)?;
    let block = n * n;
    let mut amps = Array1::zeros(space.dim());
    for (b, &w) in weights.iter().enumerate() {
        if w.is_zero() {
            continue;
        }
        let (l1, l2) = branch_labels_2q(params, schedule, (b >= 2, b % 2 == 1), t, basis);
        let m1 = mode_state(l1, n);
        let m2 = mode_state(l2, n);
        for i in 0..n {
            for j in 0..n {
                amps[b * block + i * n + j] = w * m1[i] * m2[j];
            }
        }
    }
    PureState::new(space, amps).map_err(|_| Error::ImpossibleRecord)
}

fn plus_cos_product<T: Real>(record: &DetectionRecord<T>, chi: T, schedule: &CouplingSchedule<T>) -> T {
    record
        .times(Channel::Plus)
        .map(|t| (chi * schedule.phase_clock(t)).cos())
        .fold(T::one(), |a, b| a * b)
}

/// Odd-parity weight `P_-1` of the qubit state at the end of a completed
/// record, always-on coupling.
pub fn parity_weight<T: Real>(q: &QubitAmplitudes<T>, record: &DetectionRecord<T>, chi: T) -> T {
    parity_weight_scheduled(q, record, chi, &CouplingSchedule::Always)
}

pub fn parity_weight_scheduled<T: Real>(
    q: &QubitAmplitudes<T>,
    record: &DetectionRecord<T>,
    chi: T,
    schedule: &CouplingSchedule<T>,
) -> T {
    let p_odd = q.p_odd();
    if record.count(Channel::Minus) > 0 {
        return T::one();
    }
    let p_even = T::one() - p_odd;
    let c2 = plus_cos_product(record, chi, schedule).powi(2);
    let den = p_even + c2 * p_odd;
    if den > T::zero() {
        (c2 * p_odd / den).min(T::one()).max(T::zero())
    } else {
        T::one()
    }
}

/// `(|q_ge|^2 + |q_eg|^2) prod cos^2(chi t_i)` without normalization; kept
/// for comparison with [`parity_weight`].
pub fn unnormalized_odd_weight<T: Real>(q: &QubitAmplitudes<T>, record: &DetectionRecord<T>, chi: T) -> T {
    if record.count(Channel::Minus) > 0 {
        return T::one();
    }
    q.p_odd() * plus_cos_product(record, chi, &CouplingSchedule::Always).powi(2)
}

/// Normalized four-amplitude qubit state expected after the resonators are
/// returned to vacuum and feedback is applied.
pub fn predicted_qubit_state<T: Real>(
    q: &QubitAmplitudes<T>,
    record: &DetectionRecord<T>,
    chi: T,
    schedule: &CouplingSchedule<T>,
) -> Result<PureState<T>> {
    let minus = record.count(Channel::Minus) > 0;
    predicted_from_outcome(q, minus, plus_cos_product(record, chi, schedule))
}

/// Prediction from the two quantities it depends on: whether any minus
/// click occurred and the product `C` of `cos(chi tau_i)` over plus clicks.
pub fn predicted_from_outcome<T: Real>(
    q: &QubitAmplitudes<T>,
    any_minus: bool,
    cos_product: T,
) -> Result<PureState<T>> {
    let [q_gg, q_ge, q_eg, q_ee] = pair_amplitudes(q)?;
    let amps = if any_minus {
        vec![C::zero(), q_ge, q_eg, C::zero()]
    } else {
        let cp = re(cos_product);
        vec![q_gg, q_ge * cp, q_eg * cp, q_ee]
    };
    PureState::new(HilbertSpace::new(vec![2, 2])?, Array1::from(amps)).map_err(|_| Error::ImpossibleRecord)
}

/// Unconditioned qubit density matrix at time `t` (one or two qubits, all
/// resonators traced out).
pub fn unconditioned_qubits<T: Real>(params: &SystemParams<T>, q: &QubitAmplitudes<T>, t: T) -> MixedState<T> {
    let v = q.to_vec();
    let d = v.len();
    let n_qubits = q.num_qubits();
    let f = dephasing_factor(params, t);
    // factor for one qubit's (row, column) index pair
    let pair = |i: usize, j: usize| -> C<T> {
        match (i, j) {
            (1, 0) => f,
            (0, 1) => f.conj(),
            _ => C::one(),
        }
    };
    let mut m = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let mut factor = C::one();
            for k in 0..n_qubits {
                let shift = n_qubits - 1 - k;
                factor *= pair((i >> shift) & 1, (j >> shift) & 1);
            }
            m[(i, j)] = v[i] * v[j].conj() * factor;
        }
    }
    let dims = vec![2; n_qubits];
    MixedState::from_matrix_unchecked(HilbertSpace::new(dims).expect("qubit dims"), m)
}

/// Unconditioned single-qubit state on qubit ⊗ mode,
/// `sum c_ij |i><j| ⊗ |alpha_i><alpha_j|` with the labels truncated to the
/// cutoff.
pub fn unconditioned_state_1q<T: Real>(
    params: &SystemParams<T>,
    q: &QubitAmplitudes<T>,
    t: T,
) -> Result<MixedState<T>> {
    let (q_g, q_e) = single_amplitudes(q)?;
    let n = params.fock_cutoff;
    check_truncation(params.alpha.norm().as_f64(), n)?;
    let (ag, ae) = coherent_labels_1q(params, t);
    let modes = [mode_state(ag, n), mode_state(ae, n)];
    // c_eg = a_eg / <alpha_g|alpha_e>, evaluated with the truncated overlap
    let overlap: C<T> = modes[0].iter().zip(modes[1].iter()).map(|(a, b)| a.conj() * b).sum();
    let a_eg = offdiag_coherence(params, q_e * q_g.conj(), t);
    let c_eg = a_eg / overlap;
    let coeff = [[re(q_g.norm_sqr()), c_eg.conj()], [c_eg, re(q_e.norm_sqr())]];
    let mut m = Array2::zeros((2 * n, 2 * n));
    for i in 0..2 {
        for j in 0..2 {
            for a in 0..n {
                for b in 0..n {
                    m[(i * n + a, j * n + b)] = coeff[i][j] * modes[i][a] * modes[j][b].conj();
                }
            }
        }
    }
    Ok(MixedState::from_matrix_unchecked(
        HilbertSpace::single_qubit_resonator(n)?,
        m,
    ))
}
