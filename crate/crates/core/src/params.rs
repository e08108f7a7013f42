//! Physical parameters and qubit input states.

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::required_cutoff;
use crate::scalar::{c, Real, C};

/// How the resonators are populated before the free evolution starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriveModel<T> {
    /// Ideal displacement `D(alpha)` at `t = 0`.
    InstantaneousDisplacement,
    /// Resonant pulse `eps(t) = i alpha exp(-t^2/2T^2)/sqrt(2 pi T^2)` of
    /// width `duration`, centred on `t = 0`.
    Gaussian { duration: T },
}

/// Constants of the dispersive qubit-resonator model. Times are in the same
/// (arbitrary) unit as `1/kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams<T> {
    /// Dispersive shift per photon (angular frequency).
    pub chi: T,
    /// Resonator field decay rate.
    pub kappa: T,
    /// Coherent amplitude injected into the (first) resonator.
    pub alpha: C<T>,
    /// Amplitude for the second resonator when it differs from `alpha`.
    pub alpha_second: Option<C<T>>,
    pub eta_plus: T,
    pub eta_minus: T,
    /// Qubit relaxation rate, applied to every qubit.
    pub gamma: T,
    pub fock_cutoff: usize,
    pub drive_model: DriveModel<T>,
}

/// Cutoff used when none is given: 12 levels up to `|alpha| = 1`, 20 up to
/// `1.5`, otherwise the smallest adequate one.
pub fn default_cutoff(alpha_abs: f64) -> usize {
    if alpha_abs <= 1.0 {
        12
    } else if alpha_abs <= 1.5 {
        20
    } else {
        required_cutoff(alpha_abs)
    }
}

impl<T: Real> Default for SystemParams<T> {
    fn default() -> Self {
        Self {
            chi: T::one(),
            kappa: T::one(),
            alpha: c(T::one(), T::zero()),
            alpha_second: None,
            eta_plus: T::one(),
            eta_minus: T::one(),
            gamma: T::zero(),
            fock_cutoff: 12,
            drive_model: DriveModel::InstantaneousDisplacement,
        }
    }
}

impl<T: Real> SystemParams<T> {
    /// Parameters with `chi`, `kappa`, `alpha` set, ideal detection, no
    /// relaxation and the default cutoff for `alpha`.
    pub fn new(chi: T, kappa: T, alpha: C<T>) -> Self {
        Self {
            chi,
            kappa,
            alpha,
            fock_cutoff: default_cutoff(alpha.norm().as_f64()),
            ..Self::default()
        }
    }

    pub fn with_eta(mut self, eta: T) -> Self {
        self.eta_plus = eta;
        self.eta_minus = eta;
        self
    }

    pub fn with_gamma(mut self, gamma: T) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_cutoff(mut self, cutoff: usize) -> Self {
        self.fock_cutoff = cutoff;
        self
    }

    /// Amplitudes injected into resonators 1 and 2.
    pub fn alphas(&self) -> (C<T>, C<T>) {
        (self.alpha, self.alpha_second.unwrap_or(self.alpha))
    }

    /// Combined mean photon number injected into `n_modes` resonators.
    pub fn alpha_sq_total(&self, n_modes: usize) -> T {
        let (a1, a2) = self.alphas();
        match n_modes {
            1 => a1.norm_sqr(),
            _ => a1.norm_sqr() + a2.norm_sqr(),
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.eta_plus == T::one() && self.eta_minus == T::one() && self.gamma == T::zero()
    }

    /// Largest rate in the problem, used to size integration steps.
    pub fn max_rate(&self) -> T {
        self.kappa.max(self.chi).max(self.gamma)
    }

    /// Every violated parameter constraint, as `(field, reason)`.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let finite = |x: T| x.is_finite();
        if !(self.chi > T::zero()) || !finite(self.chi) {
            out.push(("chi", format!("must be > 0, got {}", self.chi)));
        }
        if !(self.kappa > T::zero()) || !finite(self.kappa) {
            out.push(("kappa", format!("must be > 0, got {}", self.kappa)));
        }
        for (name, eta) in [("eta_plus", self.eta_plus), ("eta_minus", self.eta_minus)] {
            if !(eta >= T::zero() && eta <= T::one()) {
                out.push((name, format!("must lie in [0, 1], got {eta}")));
            }
        }
        if !(self.gamma >= T::zero()) || !finite(self.gamma) {
            out.push(("gamma", format!("must be >= 0, got {}", self.gamma)));
        }
        let (a1, a2) = self.alphas();
        if !finite(a1.re) || !finite(a1.im) || !finite(a2.re) || !finite(a2.im) {
            out.push(("alpha", "must be finite".into()));
        }
        if self.fock_cutoff < 2 {
            out.push(("fock_cutoff", format!("must be >= 2, got {}", self.fock_cutoff)));
        }
        if let DriveModel::Gaussian { duration } = self.drive_model {
            let limit = T::lit(0.02) * (T::one() / self.kappa).min(T::one() / self.chi);
            if !(duration > T::zero()) || duration > limit {
                out.push((
                    "drive_duration",
                    format!("pulse width must lie in (0, 0.02 min(1/kappa, 1/chi)] = (0, {limit}], got {duration}"),
                ));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some((name, reason)) => Err(Error::InvalidParameter { name, reason }),
        }
    }
}

/// Time dependence of the dispersive coupling. The coupling term of the
/// Hamiltonian is multiplied by `coupling(t)`, which is 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CouplingSchedule<T> {
    Always,
    /// On for `t < t_off`, off afterwards. With `t_prime`, switched back on
    /// over `[t_prime, t_prime + t_off)` and off for good after that.
    Tunable {
        t_off: T,
        t_prime: Option<T>,
    },
}

impl<T: Real> CouplingSchedule<T> {
    /// The tunable schedule with `t_off = pi/(2 chi)`.
    pub fn quarter_period(chi: T, t_prime: Option<T>) -> Self {
        Self::Tunable {
            t_off: T::FRAC_PI_2() / chi,
            t_prime,
        }
    }

    pub fn coupling(&self, t: T) -> T {
        let on = match *self {
            Self::Always => true,
            Self::Tunable { t_off, t_prime } => t < t_off || t_prime.is_some_and(|tp| t >= tp && t < tp + t_off),
        };
        if on {
            T::one()
        } else {
            T::zero()
        }
    }

    /// Integrated coupling `int_0^t coupling(u) du`; the dispersive phases
    /// of every closed-form solution depend on time only through it.
    pub fn phase_clock(&self, t: T) -> T {
        match *self {
            Self::Always => t,
            Self::Tunable { t_off, t_prime } => {
                let first = t.min(t_off).max(T::zero());
                let second = match t_prime {
                    Some(tp) => (t - tp).max(T::zero()).min(t_off),
                    None => T::zero(),
                };
                first + second
            }
        }
    }

    /// Times at which `coupling` switches, in increasing order.
    pub fn breakpoints(&self) -> Vec<T> {
        match *self {
            Self::Always => Vec::new(),
            Self::Tunable { t_off, t_prime: None } => vec![t_off],
            Self::Tunable {
                t_off,
                t_prime: Some(tp),
            } => vec![t_off, tp, tp + t_off],
        }
    }

    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if let Self::Tunable { t_off, t_prime } = *self {
            if !(t_off > T::zero()) {
                out.push(("t_off", format!("must be > 0, got {t_off}")));
            }
            if let Some(tp) = t_prime {
                if !(tp >= t_off) {
                    out.push(("t_prime", format!("must be >= t_off = {t_off}, got {tp}")));
                }
            }
        }
        out
    }
}

/// Pure input state of the qubits, in the computational basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum QubitAmplitudes<T> {
    Single {
        q_g: C<T>,
        q_e: C<T>,
    },
    Pair {
        q_gg: C<T>,
        q_ge: C<T>,
        q_eg: C<T>,
        q_ee: C<T>,
    },
}

impl<T: Real> QubitAmplitudes<T> {
    /// Normalizes the amplitudes; fails on the zero vector.
    pub fn single(q_g: C<T>, q_e: C<T>) -> Result<Self> {
        let n = (q_g.norm_sqr() + q_e.norm_sqr()).sqrt();
        if !(n > T::zero()) {
            return Err(Error::ZeroNorm);
        }
        Ok(Self::Single {
            q_g: q_g / n,
            q_e: q_e / n,
        })
    }

    pub fn pair(q_gg: C<T>, q_ge: C<T>, q_eg: C<T>, q_ee: C<T>) -> Result<Self> {
        let n = (q_gg.norm_sqr() + q_ge.norm_sqr() + q_eg.norm_sqr() + q_ee.norm_sqr()).sqrt();
        if !(n > T::zero()) {
            return Err(Error::ZeroNorm);
        }
        Ok(Self::Pair {
            q_gg: q_gg / n,
            q_ge: q_ge / n,
            q_eg: q_eg / n,
            q_ee: q_ee / n,
        })
    }

    /// `(|g> + |e>)/sqrt 2`.
    pub fn plus() -> Self {
        let h = T::FRAC_1_SQRT_2();
        Self::Single {
            q_g: c(h, T::zero()),
            q_e: c(h, T::zero()),
        }
    }

    /// `(|g> + |e>)(|g> + |e>)/2`.
    pub fn uniform_pair() -> Self {
        let h = c(T::lit(0.5), T::zero());
        Self::Pair {
            q_gg: h,
            q_ge: h,
            q_eg: h,
            q_ee: h,
        }
    }

    /// Computational basis state of two qubits; `true` means excited.
    pub fn basis_pair(first_excited: bool, second_excited: bool) -> Self {
        let mut v = [C::zero(); 4];
        v[(first_excited as usize) * 2 + second_excited as usize] = C::new(T::one(), T::zero());
        Self::Pair {
            q_gg: v[0],
            q_ge: v[1],
            q_eg: v[2],
            q_ee: v[3],
        }
    }

    pub fn num_qubits(&self) -> usize {
        match self {
            Self::Single { .. } => 1,
            Self::Pair { .. } => 2,
        }
    }

    /// Amplitudes in basis order (`g`, `e`) or (`gg`, `ge`, `eg`, `ee`).
    pub fn to_vec(&self) -> Vec<C<T>> {
        match *self {
            Self::Single { q_g, q_e } => vec![q_g, q_e],
            Self::Pair { q_gg, q_ge, q_eg, q_ee } => vec![q_gg, q_ge, q_eg, q_ee],
        }
    }

    pub fn from_slice(v: &[C<T>]) -> Result<Self> {
        match v.len() {
            2 => Self::single(v[0], v[1]),
            4 => Self::pair(v[0], v[1], v[2], v[3]),
            n => Err(Error::DimensionMismatch { expected: 4, found: n }),
        }
    }

    /// Weight in the odd-parity subspace, `|q_ge|^2 + |q_eg|^2`.
    pub fn p_odd(&self) -> T {
        match *self {
            Self::Single { .. } => T::zero(),
            Self::Pair { q_ge, q_eg, .. } => q_ge.norm_sqr() + q_eg.norm_sqr(),
        }
    }

    pub fn norm_sqr(&self) -> T {
        self.to_vec().iter().map(|z| z.norm_sqr()).sum()
    }
}
