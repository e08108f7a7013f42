//! Acceptance checks for the simulator. Prints one PASS/FAIL line per check
//! and exits non-zero when any check fails.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array2;
use rnpm::fock::{coherent_state, embed, fock_annihilation, fock_number, phase_gate, qubit_reduced, sigma_x, sigma_z};
use rnpm::master_eq::evolve_with;
use rnpm::metrics::{odd_parity_population, purity};
use rnpm::protocol::{run_protocol_ensemble, ProtocolRunner};
use rnpm::trajectory::{map_streams, run_ensemble, run_observed, run_pure_trajectory, Observer, StateView};
use rnpm::*;

// Truncation residuals at the edge of the Fock basis scale like
// |alpha|^{2N}/N!; checks near 1e-10 need the larger cutoff.
const STATISTICS_CUTOFF: usize = 14;
const PRECISION_CUTOFF: usize = 16;
// Coherence against the closed form.
const COHERENCE_MODULUS_TOL: f64 = 1e-6;
const COHERENCE_PHASE_TOL: f64 = 1e-6;
const ASYMPTOTE_TOL: f64 = 1e-4;
// Single-qubit reversal.
const REVERSAL_MIN_SX: f64 = 0.999;
const REVERSAL_SEEDS: usize = 50;
// Odd projection and even restoration.
const ODD_ZZ_TOL: f64 = 1e-10;
const ODD_XX_TOL: f64 = 1e-3;
const EVEN_FIDELITY_TOL: f64 = 1e-3;
const PARITY_RUNS: usize = 60;
// Outcome statistics.
const ENSEMBLE_RUNS: usize = 2000;
const UNIFORM_P_TOL: f64 = 0.05;
const GG_P_MAX: f64 = 1e-10;
// Structural invariants.
const DIFFERENCE_MODE_MAX: f64 = 1e-10;
const RESIDUAL_PHOTONS_MAX: f64 = 1e-8;
const PURITY_TOL: f64 = 1e-8;
const JUMP_TIME_TOL: f64 = 1e-8;
const SIGMA_BOUND: f64 = 3.0;
const SIGMA_FLOOR: f64 = 1e-6;
// Tunable coupling.
const TUNABLE_P_TOL: f64 = 1e-10;
const TUNABLE_RUNS: usize = 40;
// Inefficient detection and relaxation.
const PARITY_DRIFT_TOL: f64 = 1e-8;
const INEFFICIENT_RUNS: usize = 12;
const RELAXATION_ORACLE_TOL: f64 = 1e-4;
const RESIDUAL_PHOTONS_MIN: f64 = 1e-6;

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Check {
    Check { name, pass, detail }
}

type Checks = Result<Vec<Check>>;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn fig2(cutoff: usize) -> SystemParams64 {
    SystemParams::new(1.0, 1.0, c(1.0, 0.0)).with_cutoff(cutoff)
}

fn qubit_plus_coherent(p: &SystemParams64) -> Result<PureState64> {
    let h = c(FRAC_1_SQRT_2, 0.0);
    Ok(PureState::qubit(h, h)?.kron(&coherent_state(p.alpha, p.fock_cutoff)?))
}

fn pair_coherent(p: &SystemParams64, q: &QubitAmplitudes<f64>) -> Result<PureState64> {
    let (a1, a2) = p.alphas();
    let qubits = PureState::new(HilbertSpace::new(vec![2, 2])?, ndarray::Array1::from(q.to_vec()))?;
    Ok(qubits
        .kron(&coherent_state(a1, p.fock_cutoff)?)
        .kron(&coherent_state(a2, p.fock_cutoff)?))
}

/// `(|gg> + |ee>)/sqrt 2` or any other amplitudes, written out.
fn amps(gg: f64, ge: f64, eg: f64, ee: f64) -> Result<QubitAmplitudes<f64>> {
    QubitAmplitudes::pair(c(gg, 0.0), c(ge, 0.0), c(eg, 0.0), c(ee, 0.0))
}

fn stabilizer(p: Operator64, space: &HilbertSpace) -> Result<Operator64> {
    embed(&p, 0, space)?.matmul(&embed(&p, 1, space)?)
}

fn difference_mode_number(cutoff: usize, space: &HilbertSpace) -> Result<Operator64> {
    let a = fock_annihilation(cutoff)?;
    let cm = embed(&a, 2, space)?
        .sub(&embed(&a, 3, space)?)?
        .scale_real(FRAC_1_SQRT_2);
    cm.dagger().matmul(&cm)
}

fn single(space: &HilbertSpace, name: &str, op: Operator64) -> Result<ObservableSet<f64>> {
    ObservableSet::new(space, vec![(name.into(), op)])
}

// ---------------------------------------------------------------------------

fn coherence_vs_closed_form() -> Checks {
    let p = fig2(12);
    let model = LindbladModel::single_qubit(&p)?;
    let cfg = IntegratorConfig::new(1e-3, 10.0).sample_every(100);
    // a_eg(t)/a_eg(0) = exp[-|alpha|^2 (1 - e^{-(2i chi + kappa) t}) / (1 - i kappa / 2 chi)]
    let oracle = |t: f64| {
        let growth = (c(-p.kappa, -2.0 * p.chi) * t).exp();
        (-(c(1.0, 0.0) - growth) * p.alpha.norm_sqr() / c(1.0, -p.kappa / (2.0 * p.chi))).exp()
    };
    let mut modulus_err = 0.0f64;
    let mut phase_err = 0.0f64;
    let mut last = (0.0, c(0.0, 0.0));
    let c0 = 0.5;
    evolve_with(&model, &qubit_plus_coherent(&p)?.to_mixed(), &cfg, |t, s| {
        let got = qubit_reduced(s)?.matrix()[(1, 0)];
        let want = oracle(t) * c0;
        modulus_err = modulus_err.max((got.norm() - want.norm()).abs());
        phase_err = phase_err.max((got / want).arg().abs());
        last = (t, got / c0);
        Ok(())
    })?;
    let (t_end, ratio) = last;
    let want_mod = (-0.8f64).exp();
    Ok(vec![
        check(
            "coherence modulus matches closed form",
            modulus_err < COHERENCE_MODULUS_TOL,
            format!("max error {modulus_err:.3e}"),
        ),
        check(
            "coherence phase matches closed form",
            phase_err < COHERENCE_PHASE_TOL,
            format!("max error {phase_err:.3e} rad"),
        ),
        check(
            "coherence modulus asymptote",
            (ratio.norm() - want_mod).abs() < ASYMPTOTE_TOL,
            format!("|ratio({t_end})| = {:.6} vs {want_mod:.6}", ratio.norm()),
        ),
        check(
            "coherence phase asymptote",
            (ratio.arg() + 0.4).abs() < ASYMPTOTE_TOL,
            format!("arg ratio({t_end}) = {:.6} vs -0.4", ratio.arg()),
        ),
    ])
}

fn single_qubit_reversal() -> Checks {
    let p = fig2(12);
    let model = LindbladModel::single_qubit(&p)?;
    let space = model.space().clone();
    let psi0 = qubit_plus_coherent(&p)?;
    let cfg = IntegratorConfig::new(1e-3, 10.0).sample_every(10_000);
    let sx = embed(&sigma_x(), 0, &space)?;
    let worst = map_streams(REVERSAL_SEEDS, 11, |_, rng| {
        let traj = run_pure_trajectory(&model, &psi0, &p, rng, &cfg)?;
        let phi = 2.0 * p.chi * traj.record.events().iter().map(|e| e.0).sum::<f64>();
        let fin = traj.final_state().as_pure().expect("pure engine").clone();
        let corrected = embed(&phase_gate(phi), 0, &space)?.apply(&fin)?;
        Ok(corrected.expect(&sx)?.re)
    })?
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    Ok(vec![check(
        "single-qubit dephasing reversed by feedback",
        worst >= REVERSAL_MIN_SX,
        format!("min <sx> over {REVERSAL_SEEDS} seeds = {worst:.6}"),
    )])
}

/// Stabilizer just after every minus click, plus purity at samples.
struct ParityHook<'a> {
    zz: &'a ObservableSet<f64>,
    worst_zz: f64,
    minus_clicks: usize,
}

impl Observer<f64> for ParityHook<'_> {
    fn sample(&mut self, _t: f64, _state: StateView<'_, f64>) -> Result<()> {
        Ok(())
    }

    fn jump(&mut self, _t: f64, channel: Channel, state: StateView<'_, f64>) -> Result<()> {
        if channel == Channel::Minus {
            let zz = state.evaluate(self.zz)?[0];
            self.worst_zz = self.worst_zz.max((zz + 1.0).abs());
            self.minus_clicks += 1;
        }
        Ok(())
    }
}

fn odd_projection_and_even_restoration() -> Checks {
    let sys = fig2(PRECISION_CUTOFF);
    let pp = ProtocolParams {
        dt: 2e-3,
        observe_until: Some(4.0),
        ..ProtocolParams::new(sys)
    };
    let runner = ProtocolRunner::new(&pp)?;
    let space = runner.space().clone();
    let zz = single(&space, "zz", stabilizer(sigma_z(), &space)?)?;
    let xx = single(&space, "xx", stabilizer(sigma_x(), &space)?)?;
    let q = QubitAmplitudes::<f64>::uniform_pair();
    let qv = q.to_vec();
    let en = (qv[0].norm_sqr() + qv[3].norm_sqr()).sqrt();
    let even_target = [qv[0] / en, qv[3] / en];

    let runs = map_streams(PARITY_RUNS, 21, |_, rng| {
        let mut hook = ParityHook {
            zz: &zz,
            worst_zz: 0.0,
            minus_clicks: 0,
        };
        let out = runner.run_with(&q, EngineKind::Pure, rng, None, &mut hook)?;
        let n_minus = out.record.count(Channel::Minus);
        let xx_final = xx.evaluate(&out.final_state)?[0];
        let r = out.final_qubits.matrix();
        // even block of the qubit state, normalized, against the input's even part
        let even_weight = (r[(0, 0)] + r[(3, 3)]).re;
        let idx = [0, 3];
        let mut overlap = c(0.0, 0.0);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                overlap += even_target[a].conj() * r[(i, j)] * even_target[b];
            }
        }
        Ok((
            n_minus,
            hook.worst_zz,
            hook.minus_clicks,
            xx_final,
            overlap.re / even_weight,
        ))
    })?;

    let odd: Vec<_> = runs.iter().filter(|r| r.0 > 0).collect();
    let even: Vec<_> = runs.iter().filter(|r| r.0 == 0).collect();
    let clicks: usize = odd.iter().map(|r| r.2).sum();
    let worst_zz = odd.iter().map(|r| r.1).fold(0.0, f64::max);
    let worst_xx = odd.iter().map(|r| (r.3 - 1.0).abs()).fold(0.0, f64::max);
    let worst_fid = even.iter().map(|r| r.4).fold(1.0, f64::min);
    Ok(vec![
        check(
            "odd parity fixed right after each minus click",
            !odd.is_empty() && worst_zz < ODD_ZZ_TOL,
            format!("{clicks} clicks in {} runs, max |zz + 1| = {worst_zz:.3e}", odd.len()),
        ),
        check(
            "odd outcome gives xx = 1 after feedback",
            !odd.is_empty() && worst_xx < ODD_XX_TOL,
            format!("max |xx - 1| at t = 4 over {} runs = {worst_xx:.3e}", odd.len()),
        ),
        check(
            "even outcome restores even-subspace coherence",
            !even.is_empty() && 1.0 - worst_fid < EVEN_FIDELITY_TOL,
            format!("min fidelity over {} runs = {worst_fid:.8}", even.len()),
        ),
    ])
}

/// Data shared by the outcome-statistics and structural checks.
struct UniformEnsemble {
    cutoff: usize,
    t_final: f64,
    stats: EnsembleStats64,
    max_photons_after_return: f64,
}

fn protocol_statistics(shared: &mut Option<UniformEnsemble>) -> Checks {
    let sys = fig2(STATISTICS_CUTOFF);
    let pp = ProtocolParams {
        dt: 5e-3,
        sample_every: 40,
        ..ProtocolParams::new(sys)
    };
    let obs = ObservableSet::two_qubit(&sys)?;
    let uniform = run_protocol_ensemble(
        &QubitAmplitudes::uniform_pair(),
        &pp,
        EngineKind::Pure,
        ENSEMBLE_RUNS,
        5,
        Some(&obs),
    )?;
    let (mean, _) = uniform.stats.p_minus1_summary();

    let space = HilbertSpace::two_qubit_resonators(STATISTICS_CUTOFF)?;
    let n = fock_number(STATISTICS_CUTOFF)?;
    let photons = ObservableSet::new(
        &space,
        vec![
            ("n1".into(), embed(&n, 2, &space)?),
            ("n2".into(), embed(&n, 3, &space)?),
        ],
    )?;
    let mut max_photons = 0.0f64;
    for o in &uniform.outcomes {
        let v = photons.evaluate(&o.final_state)?;
        max_photons = max_photons.max(v[0]).max(v[1]);
    }

    // basis inputs only need the outcome, so a coarser step will do
    let coarse = ProtocolParams { dt: 1e-2, ..pp };
    let gg = run_protocol_ensemble(
        &QubitAmplitudes::basis_pair(false, false),
        &coarse,
        EngineKind::Pure,
        ENSEMBLE_RUNS,
        6,
        None,
    )?;
    let gg_mean = gg.stats.p_minus1_summary().0;
    let ge = run_protocol_ensemble(
        &QubitAmplitudes::basis_pair(false, true),
        &coarse,
        EngineKind::Pure,
        ENSEMBLE_RUNS,
        7,
        None,
    )?;
    let ge_exact = ge.outcomes.iter().filter(|o| o.p_minus1 == 1.0).count();

    *shared = Some(UniformEnsemble {
        cutoff: STATISTICS_CUTOFF,
        t_final: pp.t_final(),
        stats: uniform.stats,
        max_photons_after_return: max_photons,
    });
    Ok(vec![
        check(
            "uniform input gives mean P-1 = 1/2",
            (mean - 0.5).abs() < UNIFORM_P_TOL,
            format!("mean over {ENSEMBLE_RUNS} runs = {mean:.4}"),
        ),
        check(
            "|gg> input gives P-1 = 0",
            gg_mean < GG_P_MAX,
            format!("mean = {gg_mean:.3e}"),
        ),
        check(
            "|ge> input gives P-1 = 1 in every run",
            ge_exact == ENSEMBLE_RUNS,
            format!("{ge_exact}/{ENSEMBLE_RUNS} runs exactly 1"),
        ),
    ])
}

struct MaxOf<'a> {
    set: &'a ObservableSet<f64>,
    max: f64,
}

impl Observer<f64> for &mut MaxOf<'_> {
    fn sample(&mut self, _t: f64, state: StateView<'_, f64>) -> Result<()> {
        self.max = self.max.max(state.evaluate(self.set)?[0].abs());
        Ok(())
    }

    fn jump(&mut self, t: f64, _channel: Channel, state: StateView<'_, f64>) -> Result<()> {
        self.sample(t, state)
    }
}

struct PurityHook {
    worst: f64,
}

impl Observer<f64> for &mut PurityHook {
    fn sample(&mut self, _t: f64, state: StateView<'_, f64>) -> Result<()> {
        self.worst = self.worst.max((purity(&state.to_state()) - 1.0).abs());
        Ok(())
    }

    fn jump(&mut self, t: f64, _channel: Channel, state: StateView<'_, f64>) -> Result<()> {
        self.sample(t, state)
    }
}

fn difference_mode_stays_empty() -> Checks {
    let even = amps(0.6, 0.0, 0.0, 0.8)?;
    let mut out = Vec::new();

    // pure engine, full protocol
    let sys = fig2(PRECISION_CUTOFF);
    let pp = ProtocolParams {
        dt: 5e-3,
        ..ProtocolParams::new(sys)
    };
    let runner = ProtocolRunner::new(&pp)?;
    let nm = single(
        runner.space(),
        "n_minus",
        difference_mode_number(PRECISION_CUTOFF, runner.space())?,
    )?;
    let mut worst_pure = 0.0f64;
    for seed in 0..8 {
        let mut hook = MaxOf { set: &nm, max: 0.0 };
        let mut rng = RngStream::new(31, seed).rng();
        runner.run_with(&even, EngineKind::Pure, &mut rng, None, &mut &mut hook)?;
        worst_pure = worst_pure.max(hook.max);
    }
    out.push(check(
        "difference mode empty for even input (pure)",
        worst_pure < DIFFERENCE_MODE_MAX,
        format!("max <c-^dag c-> = {worst_pure:.3e}"),
    ));

    // density-matrix engine with lossy detection
    let sys = SystemParams::new(1.0, 1.0, c(0.5, 0.0)).with_cutoff(9).with_eta(0.7);
    let model = LindbladModel::two_qubit(&sys)?;
    let nm = single(model.space(), "n_minus", difference_mode_number(9, model.space())?)?;
    let rho0 = QuantumState::Mixed(pair_coherent(&sys, &even)?.to_mixed());
    let cfg = IntegratorConfig::new(1e-2, PI).sample_every(5);
    let mut worst_mixed = 0.0f64;
    for seed in 0..2 {
        let mut hook = MaxOf { set: &nm, max: 0.0 };
        let mut rng = RngStream::new(32, seed).rng();
        let mut record = DetectionRecord::empty(0.0);
        run_observed(&model, &rho0, &mut rng, &cfg, &mut record, &mut hook)?;
        worst_mixed = worst_mixed.max(hook.max);
    }
    out.push(check(
        "difference mode empty for even input (lossy, density matrix)",
        worst_mixed < DIFFERENCE_MODE_MAX,
        format!("max <c-^dag c-> = {worst_mixed:.3e}"),
    ));
    Ok(out)
}

fn ideal_runs_stay_pure() -> Checks {
    // The density-matrix engine does not assume purity, so an ideal run
    // through it tests that nothing leaks.
    let mut worst = 0.0f64;
    let p = fig2(12);
    let model = LindbladModel::single_qubit(&p)?;
    let rho0 = QuantumState::Mixed(qubit_plus_coherent(&p)?.to_mixed());
    let cfg = IntegratorConfig::new(2e-3, 10.0).sample_every(10);
    for seed in 0..4 {
        let mut hook = PurityHook { worst: 0.0 };
        let mut rng = RngStream::new(41, seed).rng();
        let mut record = DetectionRecord::empty(0.0);
        run_observed(&model, &rho0, &mut rng, &cfg, &mut record, &mut hook)?;
        worst = worst.max(hook.worst);
    }
    let sys = SystemParams::new(1.0, 1.0, c(0.5, 0.0)).with_cutoff(9);
    let pp = ProtocolParams {
        dt: 1e-2,
        ..ProtocolParams::new(sys)
    };
    let runner = ProtocolRunner::new(&pp)?;
    for seed in 0..2 {
        let mut hook = PurityHook { worst: 0.0 };
        let mut rng = RngStream::new(42, seed).rng();
        runner.run_with(
            &QubitAmplitudes::uniform_pair(),
            EngineKind::Mixed,
            &mut rng,
            None,
            &mut &mut hook,
        )?;
        worst = worst.max(hook.worst);
    }
    Ok(vec![check(
        "ideal trajectories stay pure",
        worst < PURITY_TOL,
        format!("max |tr rho^2 - 1| = {worst:.3e}"),
    )])
}

fn jump_times_follow_thresholds() -> Checks {
    // Photons left at t0: n0 e^{-kappa t0}; the no-click probability from t0
    // is exp[-n0 (e^{-kappa t0} - e^{-kappa t})].
    let next_time = |r: f64, n0: f64, kappa: f64, t0: f64| -(((-kappa * t0).exp() + r.ln() / n0).ln()) / kappa;
    let thresholds = vec![0.7, 0.85, 0.9];
    let mut worst = 0.0f64;
    let mut compared = 0usize;

    let p = fig2(14);
    let model = LindbladModel::single_qubit(&p)?;
    let cfg = IntegratorConfig::new(1e-3, 10.0).sample_every(10_000);
    let traj = run_pure_trajectory(
        &model,
        &qubit_plus_coherent(&p)?,
        &p,
        &mut FixedThresholds::new(thresholds.clone()),
        &cfg,
    )?;
    let mut t0 = 0.0;
    for (&(t, _), &r) in traj.record.events().iter().zip(&thresholds) {
        let want = next_time(r, p.alpha.norm_sqr(), p.kappa, t0);
        worst = worst.max((t - want).abs());
        compared += 1;
        t0 = t;
    }

    let sys = SystemParams::new(1.0, 1.0, c(0.8, 0.0)).with_cutoff(12);
    let model = LindbladModel::two_qubit(&sys)?;
    let psi = pair_coherent(&sys, &QubitAmplitudes::uniform_pair())?;
    let cfg = IntegratorConfig::new(2e-3, 3.0).sample_every(10_000);
    let traj = run_pure_trajectory(&model, &psi, &sys, &mut FixedThresholds::new(thresholds.clone()), &cfg)?;
    let mut t0 = 0.0;
    for (&(t, _), &r) in traj.record.events().iter().zip(&thresholds) {
        let want = next_time(r, 2.0 * sys.alpha.norm_sqr(), sys.kappa, t0);
        worst = worst.max((t - want).abs());
        compared += 1;
        t0 = t;
    }
    Ok(vec![check(
        "jump times follow the threshold formula",
        compared >= 4 && worst < JUMP_TIME_TOL,
        format!("{compared} jumps, max error {worst:.3e}"),
    )])
}

/// Largest deviation of ensemble means from reference curves, in units of
/// `SIGMA_BOUND * stderr + SIGMA_FLOOR` (a pass is < 1).
fn worst_sigma(
    stats: &EnsembleStats64,
    reference: &[(f64, Vec<f64>)],
    names: &[String],
    skip: &[&str],
    before: f64,
) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut samples = 0;
    for (i, &t) in stats.times.iter().enumerate() {
        if t >= before {
            continue;
        }
        let Some((_, row)) = reference.iter().find(|(tr, _)| (tr - t).abs() < 1e-9) else {
            continue;
        };
        samples += 1;
        for (k, name) in names.iter().enumerate() {
            if skip.contains(&name.as_str()) {
                continue;
            }
            let m = stats.mean(name).expect("column")[i];
            let s = stats.stderr(name).expect("column")[i];
            worst = worst.max((m - row[k]).abs() / (SIGMA_BOUND * s + SIGMA_FLOOR));
        }
    }
    (worst, samples)
}

fn ensembles_match_master_equation(shared: &Option<UniformEnsemble>) -> Checks {
    let mut out = Vec::new();

    let p = fig2(12);
    let model = LindbladModel::single_qubit(&p)?;
    let obs = ObservableSet::single_qubit(12)?;
    let psi0 = qubit_plus_coherent(&p)?;
    let cfg = IntegratorConfig::new(5e-3, 10.0).sample_every(100);
    let stats = run_ensemble(
        &model,
        &QuantumState::Pure(psi0.clone()),
        &p,
        ENSEMBLE_RUNS,
        51,
        &cfg,
        &obs,
    )?;
    let mut reference = Vec::new();
    evolve_with(&model, &psi0.to_mixed(), &cfg, |t, s| {
        reference.push((t, obs.evaluate_mixed(s)?));
        Ok(())
    })?;
    // the square root of <n> is not linear in the state
    let (w, samples) = worst_sigma(&stats, &reference, obs.names(), &["sqrt_n"], f64::INFINITY);
    out.push(check(
        "single-qubit ensemble means match master equation",
        samples > 0 && w < 1.0,
        format!("{samples} samples, worst deviation {w:.3} of bound"),
    ));

    let Some(u) = shared else {
        out.push(check(
            "two-qubit ensemble means match master equation",
            false,
            "ensemble unavailable".into(),
        ));
        return Ok(out);
    };
    let sys = fig2(u.cutoff);
    let model = LindbladModel::two_qubit(&sys)?;
    let obs = ObservableSet::two_qubit(&sys)?;
    let cfg = IntegratorConfig::new(1e-2, u.t_final).sample_every(20);
    let mut reference = Vec::new();
    evolve_with(
        &model,
        &pair_coherent(&sys, &QubitAmplitudes::uniform_pair())?.to_mixed(),
        &cfg,
        |t, s| {
            reference.push((t, obs.evaluate_mixed(s)?));
            Ok(())
        },
    )?;
    // feedback acts at t_f, so only earlier samples are comparable
    let (w, samples) = worst_sigma(&u.stats, &reference, obs.names(), &[], u.t_final - 1e-9);
    out.push(check(
        "two-qubit ensemble means match master equation",
        samples > 0 && w < 1.0,
        format!("{samples} samples, worst deviation {w:.3} of bound"),
    ));
    out.push(check(
        "resonators empty after the return displacement",
        u.max_photons_after_return < RESIDUAL_PHOTONS_MAX,
        format!(
            "max <n_j> over {ENSEMBLE_RUNS} runs = {:.3e}",
            u.max_photons_after_return
        ),
    ));
    Ok(out)
}

struct TunableHook {
    t_off: f64,
    worst: f64,
    late_clicks: usize,
}

impl Observer<f64> for &mut TunableHook {
    fn sample(&mut self, _t: f64, _state: StateView<'_, f64>) -> Result<()> {
        Ok(())
    }

    fn jump(&mut self, t: f64, _channel: Channel, state: StateView<'_, f64>) -> Result<()> {
        if t > self.t_off {
            let p = odd_parity_population(&state.to_state());
            self.worst = self.worst.max(p.min(1.0 - p));
            self.late_clicks += 1;
        }
        Ok(())
    }
}

fn tunable_projection() -> Checks {
    let sys = SystemParams::new(10.0, 1.0, c(1.0, 0.0)).with_cutoff(PRECISION_CUTOFF);
    let pp = ProtocolParams {
        dt: 1e-3,
        sample_every: 1000,
        ..ProtocolParams::tunable(sys, None)
    };
    let t_off = PI / (2.0 * sys.chi);
    let runner = ProtocolRunner::new(&pp)?;
    let results = map_streams(TUNABLE_RUNS, 61, |_, rng| {
        let mut hook = TunableHook {
            t_off,
            worst: 0.0,
            late_clicks: 0,
        };
        runner.run_with(
            &QubitAmplitudes::uniform_pair(),
            EngineKind::Pure,
            rng,
            None,
            &mut &mut hook,
        )?;
        Ok((hook.worst, hook.late_clicks))
    })?;
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let clicks: usize = results.iter().map(|r| r.1).sum();
    Ok(vec![check(
        "tunable coupling: every late click projects the parity",
        clicks > 0 && worst < TUNABLE_P_TOL,
        format!("{clicks} clicks after t_off in {TUNABLE_RUNS} runs, max min(P, 1-P) = {worst:.3e}"),
    )])
}

fn inefficient_detection() -> Checks {
    let sys = fig2(12).with_eta(0.9);
    let q = QubitAmplitudes::uniform_pair();
    let pp = ProtocolParams {
        dt: 1e-2,
        ..ProtocolParams::new(sys)
    };
    let ens = run_protocol_ensemble(&q, &pp, EngineKind::Mixed, INEFFICIENT_RUNS, 71, None)?;
    let space = HilbertSpace::two_qubit_resonators(12)?;
    let xx = single(&space, "xx", stabilizer(sigma_x(), &space)?)?;
    let mut total = 0.0;
    for o in &ens.outcomes {
        total += xx.evaluate(&o.final_state)?[0];
    }
    let mean_xx = total / ens.outcomes.len() as f64;

    let model = LindbladModel::two_qubit(&sys)?;
    let zz = stabilizer(sigma_z(), &space)?;
    let rho0 = pair_coherent(&sys, &q)?.to_mixed();
    let zz0 = rho0.expect(&zz)?.re;
    let mut drift = 0.0f64;
    evolve_with(
        &model,
        &rho0,
        &IntegratorConfig::new(1e-2, PI).sample_every(10),
        |_, s| {
            drift = drift.max((s.expect(&zz)?.re - zz0).abs());
            Ok(())
        },
    )?;
    Ok(vec![
        check(
            "lossy detection: mean xx after feedback below 1",
            mean_xx < 1.0,
            format!("mean over {INEFFICIENT_RUNS} runs = {mean_xx:.4}"),
        ),
        check(
            "lossy detection: unconditioned parity conserved",
            drift < PARITY_DRIFT_TOL,
            format!("max |zz(t) - zz(0)| = {drift:.3e}"),
        ),
    ])
}

/// Two qubits under amplitude damping at rate `gamma`, as a 16 x 16
/// Liouvillian acting on row-major vec(rho); returns vec(rho(t)).
fn damped_qubits(gamma: f64, rho0: &Array2<C64>, t: f64) -> Array2<C64> {
    let eye = Array2::<C64>::eye(2);
    let mut lower = Array2::<C64>::zeros((2, 2));
    lower[(0, 1)] = c(1.0, 0.0); // |g><e|
    let kron = |a: &Array2<C64>, b: &Array2<C64>| {
        let (n, m) = (a.nrows(), b.nrows());
        Array2::from_shape_fn((n * m, n * m), |(i, j)| a[(i / m, j / m)] * b[(i % m, j % m)])
    };
    let ops = [kron(&lower, &eye), kron(&eye, &lower)];
    let dissipator = |rho: &Array2<C64>| {
        let mut d = Array2::<C64>::zeros((4, 4));
        for l in &ops {
            let ld = l.t().mapv(|z| z.conj());
            let ldl = ld.dot(l);
            d = d + l.dot(rho).dot(&ld) - (ldl.dot(rho) + rho.dot(&ldl)) * c(0.5, 0.0);
        }
        d * c(gamma, 0.0)
    };
    let mut liouvillian = Array2::<C64>::zeros((16, 16));
    for k in 0..16 {
        let mut e = Array2::<C64>::zeros((4, 4));
        e[(k / 4, k % 4)] = c(1.0, 0.0);
        let col = dissipator(&e);
        for i in 0..16 {
            liouvillian[(i, k)] = col[(i / 4, i % 4)];
        }
    }
    // exp(L t) by scaling and squaring of a Taylor series
    let squarings = 10;
    let a = liouvillian * c(t / f64::from(1 << squarings), 0.0);
    let mut prop = Array2::<C64>::eye(16);
    let mut term = Array2::<C64>::eye(16);
    for n in 1..20 {
        term = term.dot(&a) * c(1.0 / n as f64, 0.0);
        prop += &term;
    }
    for _ in 0..squarings {
        prop = prop.dot(&prop);
    }
    let v = prop.dot(&rho0.to_shape(16).expect("4 x 4").to_owned());
    v.to_shape((4, 4)).expect("16").to_owned()
}

fn relaxation() -> Checks {
    let gamma = 0.1 / PI;
    let q = QubitAmplitudes::<f64>::uniform_pair();
    let qv = q.to_vec();
    let rho_q0 = Array2::from_shape_fn((4, 4), |(i, j)| qv[i] * qv[j].conj());
    let zz_of = |r: &Array2<C64>| (r[(0, 0)] - r[(1, 1)] - r[(2, 2)] + r[(3, 3)]).re;

    let sys = SystemParams::new(1.0, 1.0, c(0.0, 0.0))
        .with_cutoff(4)
        .with_gamma(gamma);
    let model = LindbladModel::two_qubit(&sys)?;
    let rho0 = pair_coherent(&sys, &q)?.to_mixed();
    let t_end = 10.0;
    let cfg = IntegratorConfig::new(5e-3, t_end).sample_every(100);
    let mut worst_me = 0.0f64;
    let mut zz_end = 0.0;
    evolve_with(&model, &rho0, &cfg, |t, s| {
        let r = qubit_reduced(s)?;
        let want = damped_qubits(gamma, &rho_q0, t);
        worst_me = worst_me.max(
            r.matrix()
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max),
        );
        zz_end = zz_of(r.matrix());
        Ok(())
    })?;

    struct Oracle<'a> {
        gamma: f64,
        rho_q0: &'a Array2<C64>,
        worst: f64,
    }
    impl Observer<f64> for &mut Oracle<'_> {
        fn sample(&mut self, t: f64, state: StateView<'_, f64>) -> Result<()> {
            let r = qubit_reduced(&state.to_state().to_mixed())?;
            let want = damped_qubits(self.gamma, self.rho_q0, t);
            let d = r
                .matrix()
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            self.worst = self.worst.max(d);
            Ok(())
        }
    }
    let mut oracle = Oracle {
        gamma,
        rho_q0: &rho_q0,
        worst: 0.0,
    };
    let mut record = DetectionRecord::empty(0.0);
    run_observed(
        &model,
        &QuantumState::Mixed(rho0),
        &mut RngStream::new(81, 0).rng(),
        &cfg,
        &mut record,
        &mut oracle,
    )?;

    let driven = fig2(12).with_gamma(gamma);
    let pp = ProtocolParams {
        dt: 5e-3,
        ..ProtocolParams::new(driven)
    };
    let out = ProtocolRunner::new(&pp)?.run(&q, EngineKind::Mixed, &mut RngStream::new(82, 0).rng(), None)?;
    let space = HilbertSpace::two_qubit_resonators(12)?;
    let n = fock_number(12)?;
    let photons = ObservableSet::new(
        &space,
        vec![("n".into(), embed(&n, 2, &space)?.add(&embed(&n, 3, &space)?)?)],
    )?;
    let residual = photons.evaluate(&out.final_state)?[0];

    let zz0 = zz_of(&rho_q0);
    Ok(vec![
        check(
            "relaxation breaks parity conservation",
            (zz_end - zz0).abs() > 1e-3,
            format!("zz: {zz0:.4} -> {zz_end:.4} at t = {t_end}"),
        ),
        check(
            "relaxation: master equation matches two-qubit oracle",
            worst_me < RELAXATION_ORACLE_TOL,
            format!("max |rho_q - oracle| = {worst_me:.3e}"),
        ),
        check(
            "relaxation: density-matrix trajectory matches two-qubit oracle",
            oracle.worst < RELAXATION_ORACLE_TOL,
            format!("max |rho_q - oracle| = {:.3e}", oracle.worst),
        ),
        check(
            "relaxation leaves photons after the return displacement",
            residual > RESIDUAL_PHOTONS_MIN,
            format!("<n1 + n2> = {residual:.3e}"),
        ),
    ])
}

type Group = Box<dyn FnOnce(&mut Option<UniformEnsemble>) -> Checks>;

fn main() -> ExitCode {
    // Optional arguments select groups by substring; flags from the test
    // runner are ignored.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |group: &str| filters.is_empty() || filters.iter().any(|f| group.contains(f.as_str()));
    let mut failures = 0;
    let mut shared = None;
    let groups: Vec<(&str, Group)> = vec![
        ("coherence", Box::new(|_| coherence_vs_closed_form())),
        ("reversal", Box::new(|_| single_qubit_reversal())),
        ("parity projection", Box::new(|_| odd_projection_and_even_restoration())),
        ("outcome statistics", Box::new(protocol_statistics)),
        ("difference mode", Box::new(|_| difference_mode_stays_empty())),
        ("purity", Box::new(|_| ideal_runs_stay_pure())),
        ("jump times", Box::new(|_| jump_times_follow_thresholds())),
        (
            "ensemble vs master equation",
            Box::new(|s| ensembles_match_master_equation(s)),
        ),
        ("tunable coupling", Box::new(|_| tunable_projection())),
        ("lossy detection", Box::new(|_| inefficient_detection())),
        ("relaxation", Box::new(|_| relaxation())),
    ];
    for (group, run) in groups {
        if !selected(group) {
            continue;
        }
        let started = Instant::now();
        match run(&mut shared) {
            Ok(checks) => {
                for ch in checks {
                    if !ch.pass {
                        failures += 1;
                    }
                    println!("{} {}: {}", if ch.pass { "PASS" } else { "FAIL" }, ch.name, ch.detail);
                }
            }
            Err(e) => {
                failures += 1;
                println!("FAIL {group}: error: {e}");
            }
        }
        eprintln!("  ({group}: {:.1}s)", started.elapsed().as_secs_f64());
    }
    if failures == 0 {
        println!("all acceptance checks passed");
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance check(s) failed");
        ExitCode::FAILURE
    }
}
