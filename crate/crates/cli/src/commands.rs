//! The subcommands.

use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};

use rnpm::analytic::stochastic_phase_1q;
use rnpm::fock::{coherent_state, embed, phase_gate, sigma_x, sigma_y, Operator};
use rnpm::master_eq::{evolve_with, evolve_with_gaussian_drive};
use rnpm::metrics::odd_parity_population;
use rnpm::protocol::{compute_feedback, run_protocol_ensemble, Parity, ProtocolRunner};
use rnpm::trajectory::{run_ensemble, run_observed, StateView};
use rnpm::{
    Channel, DetectionRecord, DriveModel, EngineKind, Error, HilbertSpace, IntegratorConfig, LindbladModel,
    ObservableSet, PureState, QuantumState, RngStream, TimeSeries64,
};

use crate::config::{CommandKind, Figure, RunConfig};
use crate::output;

/// Why a run stopped; maps onto the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Parameters rejected before or during setup.
    Invalid(Vec<(String, String)>),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { name, reason } => Self::Invalid(vec![(name.to_string(), reason)]),
            e @ Error::CutoffTooSmall { .. } => Self::Invalid(vec![("cutoff".into(), e.to_string())]),
            e => Self::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(format!("I/O error: {e}"))
    }
}

type Outcome = Result<(), Failure>;

/// Searched when a preset asks for a particular parity outcome.
const OUTCOME_SEARCH: u64 = 1000;

fn engine_name(e: EngineKind) -> &'static str {
    match e {
        EngineKind::Pure => "pure",
        EngineKind::Mixed => "mixed",
    }
}

fn header(cfg: &RunConfig, command: CommandKind) -> Value {
    let mut v = json!({
        "command": command.to_string(),
        "figure": cfg.figure,
        "qubits": cfg.qubits(),
        "system": cfg.system,
        "q": cfg.q,
        "seed": cfg.seed,
        "dt": cfg.dt,
        "sample_every": cfg.sample_every,
        "t_end": cfg.t_end,
        "engine": if command == CommandKind::Me { "master-equation" } else { engine_name(cfg.engine_kind()) },
        "time_unit": "1/kappa",
    });
    if cfg.qubits() == 2 {
        v["protocol"] = json!(cfg.protocol);
    }
    v
}

fn finish(dir: &Path, mut summary: Value, started: Instant) -> Outcome {
    summary["wall_clock_s"] = json!(started.elapsed().as_secs_f64());
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Runtime(e.to_string()))?;
    output::write(dir, "summary.json", &(text + "\n"))?;
    Ok(())
}

fn initial_state(cfg: &RunConfig) -> Result<PureState<f64>, Failure> {
    let n = cfg.system.fock_cutoff;
    let (a1, a2) = cfg.system.alphas();
    let vacuum = matches!(cfg.system.drive_model, DriveModel::Gaussian { .. });
    let mode = |a| {
        if vacuum {
            PureState::vacuum(n)
        } else {
            coherent_state(a, n)
        }
    };
    let qubits = cfg.q.to_vec();
    Ok(match cfg.qubits() {
        1 => PureState::qubit(qubits[0], qubits[1])?.kron(&mode(a1)?),
        _ => PureState::new(HilbertSpace::new(vec![2, 2])?, ndarray::Array1::from(qubits))?
            .kron(&mode(a1)?)
            .kron(&mode(a2)?),
    })
}

fn model(cfg: &RunConfig) -> Result<LindbladModel<f64>, Failure> {
    Ok(match cfg.qubits() {
        1 => LindbladModel::single_qubit(&cfg.system)?,
        _ => LindbladModel::two_qubit(&cfg.system)?,
    })
}

fn integrator(cfg: &RunConfig) -> IntegratorConfig<f64> {
    IntegratorConfig::new(cfg.dt, cfg.t_end).sample_every(cfg.sample_every)
}

fn observables(cfg: &RunConfig) -> Result<ObservableSet<f64>, Failure> {
    Ok(ObservableSet::standard(&cfg.system, cfg.qubits())?)
}

fn final_row(series: &TimeSeries64) -> Value {
    let mut m = serde_json::Map::new();
    for name in &series.names {
        if let Some(v) = series.last(name) {
            m.insert(name.clone(), json!(v));
        }
    }
    Value::Object(m)
}

pub fn master_equation(cfg: &RunConfig, dir: &Path) -> Outcome {
    let started = Instant::now();
    let model = model(cfg)?;
    let obs = observables(cfg)?;
    let rho0 = initial_state(cfg)?.to_mixed();
    let icfg = integrator(cfg);
    let mut series = TimeSeries64::new(obs.names().to_vec());
    match cfg.system.drive_model {
        DriveModel::Gaussian { .. } => {
            let ev = evolve_with_gaussian_drive(&model, &cfg.system, &rho0, &icfg)?;
            for (t, s) in ev.times.iter().zip(&ev.states) {
                series.push(*t, &obs.evaluate_mixed(s)?);
            }
        }
        DriveModel::InstantaneousDisplacement => {
            evolve_with(&model, &rho0, &icfg, |t, s| {
                series.push(t, &obs.evaluate_mixed(s)?);
                Ok(())
            })?;
        }
    }
    output::write(dir, "series.csv", &output::series_csv(&series, cfg.system.kappa))?;
    let mut summary = header(cfg, CommandKind::Me);
    summary["results"] = json!({ "final": final_row(&series) });
    finish(dir, summary, started)
}

pub fn trajectory(cfg: &RunConfig, dir: &Path) -> Outcome {
    let started = Instant::now();
    let model = model(cfg)?;
    let obs = observables(cfg)?;
    let psi0 = initial_state(cfg)?;
    let initial = match cfg.engine_kind() {
        EngineKind::Pure => QuantumState::Pure(psi0),
        EngineKind::Mixed => QuantumState::Mixed(psi0.to_mixed()),
    };
    let mut series = TimeSeries64::new(obs.names().to_vec());
    let mut record = DetectionRecord::empty(0.0);
    let mut rng = RngStream::new(cfg.seed, 0).rng();
    let fin = run_observed(
        &model,
        &initial,
        &mut rng,
        &integrator(cfg),
        &mut record,
        |t: f64, v: StateView<'_, f64>| {
            series.push(t, &v.evaluate(&obs)?);
            Ok(())
        },
    )?;
    output::write(dir, "series.csv", &output::series_csv(&series, cfg.system.kappa))?;
    output::write(
        dir,
        "events.csv",
        &output::events_csv(record.events(), cfg.system.kappa),
    )?;

    let mut results = json!({
        "n_plus": record.count(Channel::Plus),
        "n_minus": record.count(Channel::Minus),
        "n_single": record.count(Channel::Single),
        "final": final_row(&series),
    });
    if cfg.qubits() == 1 {
        // endpoint after the feedback rotation that undoes the record phase
        let phi = stochastic_phase_1q(&record, cfg.system.chi)?;
        let space = fin.space().clone();
        let r = embed(&phase_gate(phi), 0, &space)?;
        let corrected = match &fin {
            QuantumState::Pure(p) => QuantumState::Pure(r.apply(p)?),
            QuantumState::Mixed(m) => QuantumState::Mixed(m.conjugate_by(&r)?),
        };
        let sx: Operator<f64> = embed(&sigma_x(), 0, &space)?;
        let sy: Operator<f64> = embed(&sigma_y(), 0, &space)?;
        results["phi"] = json!(phi);
        results["feedback_sx"] = json!(corrected.expect(&sx)?.re);
        results["feedback_sy"] = json!(corrected.expect(&sy)?.re);
    } else {
        let phases = compute_feedback(&record, cfg.system.chi);
        results["phi_plus"] = json!(phases.phi_plus);
        results["phi_minus"] = json!(phases.phi_minus);
        results["p_minus1"] = json!(odd_parity_population(&fin));
    }
    let mut summary = header(cfg, CommandKind::Traj);
    summary["results"] = results;
    finish(dir, summary, started)
}

fn wanted_parity(fig: Option<Figure>) -> Option<bool> {
    match fig {
        Some(Figure::Fig4Odd) => Some(true),
        Some(Figure::Fig4Even) => Some(false),
        _ => None,
    }
}

pub fn protocol(cfg: &RunConfig, dir: &Path) -> Outcome {
    let started = Instant::now();
    let runner = ProtocolRunner::new(&cfg.protocol)?;
    let obs = observables(cfg)?;
    let engine = cfg.engine_kind();
    // Presets for one outcome take the first stream from the seed on that
    // gives it.
    let want_odd = wanted_parity(cfg.figure);
    let mut stream = 0;
    let out = loop {
        let mut rng = RngStream::new(cfg.seed, stream).rng();
        let out = runner.run(&cfg.q, engine, &mut rng, Some(&obs))?;
        match want_odd {
            Some(odd) if (out.record.count(Channel::Minus) > 0) != odd => {
                stream += 1;
                if stream >= OUTCOME_SEARCH {
                    return Err(Failure::Runtime(format!(
                        "no run with the requested outcome in {OUTCOME_SEARCH} streams"
                    )));
                }
            }
            _ => break out,
        }
    };
    output::write(dir, "series.csv", &output::series_csv(&out.series, cfg.system.kappa))?;
    output::write(
        dir,
        "events.csv",
        &output::events_csv(out.record.events(), cfg.system.kappa),
    )?;
    let final_obs = obs.evaluate(&out.final_state)?;
    let stabilizers: serde_json::Map<String, Value> = obs
        .names()
        .iter()
        .zip(&final_obs)
        .map(|(n, v)| (n.clone(), json!(v)))
        .collect();
    let mut summary = header(cfg, CommandKind::Protocol);
    summary["stream"] = json!(stream);
    summary["results"] = json!({
        "n_plus": out.record.count(Channel::Plus),
        "n_minus": out.record.count(Channel::Minus),
        "phi_plus": out.phases.phi_plus,
        "phi_minus": out.phases.phi_minus,
        "p_minus1": out.p_minus1,
        "outcome": out.outcome,
        "fidelity_to_prediction": out.fidelity_to_prediction,
        "iterations": out.iterations_used,
        "final": stabilizers,
    });
    finish(dir, summary, started)
}

pub fn ensemble(cfg: &RunConfig, dir: &Path) -> Outcome {
    let started = Instant::now();
    let obs = observables(cfg)?;
    let kappa = cfg.system.kappa;
    let mut summary = header(cfg, CommandKind::Ensemble);
    summary["n"] = json!(cfg.n);
    let mut photon_counts = Vec::new();
    let stats = if cfg.qubits() == 1 {
        let model = model(cfg)?;
        let psi0 = initial_state(cfg)?;
        let initial = match cfg.engine_kind() {
            EngineKind::Pure => QuantumState::Pure(psi0),
            EngineKind::Mixed => QuantumState::Mixed(psi0.to_mixed()),
        };
        let stats = run_ensemble(&model, &initial, &cfg.system, cfg.n, cfg.seed, &integrator(cfg), &obs)?;
        summary["results"] = json!({ "mean_photons": stats.mean_photons() });
        stats
    } else {
        let ens = run_protocol_ensemble(&cfg.q, &cfg.protocol, cfg.engine_kind(), cfg.n, cfg.seed, Some(&obs))?;
        let (mean, stderr) = ens.stats.p_minus1_summary();
        let count = |p: Option<Parity>| ens.outcomes.iter().filter(|o| o.outcome == p).count();
        let n = ens.outcomes.len() as f64;
        let fidelity = ens.outcomes.iter().map(|o| o.fidelity_to_prediction).sum::<f64>() / n;
        summary["results"] = json!({
            "mean_p_minus1": mean,
            "stderr_p_minus1": stderr,
            "p_minus1_histogram": ens.stats.p_minus1_histogram,
            "even": count(Some(Parity::Even)),
            "odd": count(Some(Parity::Odd)),
            "unresolved": count(None),
            "mean_fidelity_to_prediction": fidelity,
            "mean_iterations": ens.mean_iterations(),
            "mean_photons": ens.stats.mean_photons(),
        });
        ens.stats
    };
    for (&(np, nm), &count) in &stats.photon_counts {
        photon_counts.push(json!({ "n_plus": np, "n_minus": nm, "runs": count }));
    }
    summary["results"]["photon_counts"] = Value::Array(photon_counts);
    output::write(dir, "series.csv", &output::ensemble_csv(&stats, kappa))?;
    finish(dir, summary, started)
}

/// The preset's trajectory (or protocol run) and master-equation curves in
/// `trajectory/` and `master_equation/`.
pub fn figure(cfg: &RunConfig, dir: &Path) -> Outcome {
    let mut me_cfg = cfg.clone();
    me_cfg.command = CommandKind::Me;
    if cfg.qubits() == 2 {
        // the unconditioned curves stop where feedback would act
        me_cfg.t_end = cfg.protocol.t_final();
        me_cfg.engine = crate::config::EngineChoice::Mixed;
    }
    if cfg.qubits() == 1 {
        trajectory(cfg, &dir.join("trajectory"))?;
    } else {
        protocol(cfg, &dir.join("trajectory"))?;
    }
    master_equation(&me_cfg, &dir.join("master_equation"))
}
