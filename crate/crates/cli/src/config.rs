//! Flags, config files, figure presets and validation.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rnpm::params::default_cutoff;
use rnpm::protocol::Variant;
use rnpm::{DriveModel, EngineKind, ProtocolParams64, QubitAmplitudes, SystemParams64, C64};

#[derive(Debug, Parser)]
#[command(
    name = "rnpm",
    version,
    about = "Remote parity measurement simulator",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Me,
    Traj,
    Ensemble,
    Protocol,
    Figure,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Unconditioned master-equation evolution.
    Me(Flags),
    /// One photodetection trajectory without feedback.
    Traj(Flags),
    /// Many trajectories (one qubit) or protocol runs (two qubits).
    Ensemble(Flags),
    /// One run of the measurement-and-feedback protocol.
    Protocol(Flags),
    /// Everything a figure preset needs, in one output directory.
    Figure(Flags),
}

impl Command {
    pub fn split(self) -> (CommandKind, Flags) {
        match self {
            Self::Me(f) => (CommandKind::Me, f),
            Self::Traj(f) => (CommandKind::Traj, f),
            Self::Ensemble(f) => (CommandKind::Ensemble, f),
            Self::Protocol(f) => (CommandKind::Protocol, f),
            Self::Figure(f) => (CommandKind::Figure, f),
        }
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Me => "me",
            Self::Traj => "traj",
            Self::Ensemble => "ensemble",
            Self::Protocol => "protocol",
            Self::Figure => "figure",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Figure {
    Fig2,
    Fig4Odd,
    Fig4Even,
    Fig5,
    Fig6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineChoice {
    Auto,
    Pure,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantChoice {
    Standard,
    Tunable,
}

/// Every option is optional so that presets and config files can fill the
/// gaps; see [`RunConfig::resolve`].
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Plain-text `key = value` file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub figure: Option<Figure>,
    #[arg(long)]
    pub chi: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Real part of the drive amplitude.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_im: Option<f64>,
    /// Amplitude of the second resonator when it differs.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha2: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha2_im: Option<f64>,
    /// Detection efficiency of both detectors.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub eta_plus: Option<f64>,
    #[arg(long)]
    pub eta_minus: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub cutoff: Option<usize>,
    /// Width of a Gaussian drive pulse; the drive is instantaneous without it.
    #[arg(long)]
    pub drive_width: Option<f64>,
    #[arg(long)]
    pub qubits: Option<usize>,
    /// Input qubit state: plus, uniform, gg, ge, eg, ee, even, odd, or
    /// comma-separated amplitudes (`re` or `re:im`).
    #[arg(long, allow_hyphen_values = true)]
    pub q: Option<String>,
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantChoice>,
    #[arg(long)]
    pub t_prime: Option<f64>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub projection_threshold: Option<f64>,
    /// Protocol duration (tunable variant).
    #[arg(long)]
    pub t_final: Option<f64>,
    /// Keep evolving after feedback up to this time.
    #[arg(long)]
    pub observe_until: Option<f64>,
    /// End of `me` and `traj` runs.
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub sample_every: Option<usize>,
    #[arg(long, value_enum)]
    pub engine: Option<EngineChoice>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fully resolved run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: CommandKind,
    pub figure: Option<Figure>,
    pub system: SystemParams64,
    pub q: QubitAmplitudes<f64>,
    pub protocol: ProtocolParams64,
    pub engine: EngineChoice,
    pub t_end: f64,
    pub dt: f64,
    pub sample_every: usize,
    pub n: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: PathBuf,
    /// Problems found while resolving, reported with the validation errors.
    pub issues: Vec<(String, String)>,
}

/// Reads `key = value` lines (`#` starts a comment) into flag arguments.
pub fn config_file_args(text: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value, got {raw:?}", no + 1))?;
        let key = key.trim().replace('_', "-");
        if key == "config" {
            return Err(format!("line {}: config files cannot include other files", no + 1));
        }
        out.push(format!("--{key}"));
        out.push(value.trim().to_string());
    }
    Ok(out)
}

/// Inserts the contents of any `--config FILE` right after the subcommand
/// so that explicit flags, which come later, override them.
pub fn expand_config(args: &[String]) -> Result<Vec<String>, String> {
    let mut path = None;
    let mut i = 0;
    while i < args.len() {
        if let Some(p) = args[i].strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if args[i] == "--config" {
            path = args.get(i + 1).cloned();
        }
        i += 1;
    }
    let Some(path) = path else {
        return Ok(args.to_vec());
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config file {path}: {e}"))?;
    let extra = config_file_args(&text)?;
    let mut out = Vec::with_capacity(args.len() + extra.len());
    out.extend(args.iter().take(2).cloned());
    out.extend(extra);
    out.extend(args.iter().skip(2).cloned());
    Ok(out)
}

/// Parameters a preset fixes unless overridden.
struct Preset {
    qubits: usize,
    eta: f64,
    gamma: f64,
    t_end: f64,
    observe_until: Option<f64>,
}

fn preset(fig: Figure) -> Preset {
    let two = |eta: f64, gamma: f64| Preset {
        qubits: 2,
        eta,
        gamma,
        t_end: 4.0,
        observe_until: Some(4.0),
    };
    match fig {
        Figure::Fig2 => Preset {
            qubits: 1,
            eta: 1.0,
            gamma: 0.0,
            t_end: 10.0,
            observe_until: None,
        },
        Figure::Fig4Odd | Figure::Fig4Even => two(1.0, 0.0),
        Figure::Fig5 => two(0.9, 0.0),
        Figure::Fig6 => two(1.0, 0.1 / std::f64::consts::PI),
    }
}

fn parse_amplitude(tok: &str) -> Result<C64, String> {
    let tok = tok.trim();
    let (re, im) = match tok.split_once(':') {
        Some((a, b)) => (a, b),
        None => (tok, "0"),
    };
    let p = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("bad amplitude {tok:?}"));
    Ok(C64::new(p(re)?, p(im)?))
}

/// Named or explicit qubit input state.
pub fn parse_qubit_state(spec: &str) -> Result<QubitAmplitudes<f64>, String> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let r = |x: f64| C64::new(x, 0.0);
    let z = r(0.0);
    let named = match spec.trim() {
        "plus" => Some(QubitAmplitudes::plus()),
        "uniform" => Some(QubitAmplitudes::uniform_pair()),
        "gg" => Some(QubitAmplitudes::basis_pair(false, false)),
        "ge" => Some(QubitAmplitudes::basis_pair(false, true)),
        "eg" => Some(QubitAmplitudes::basis_pair(true, false)),
        "ee" => Some(QubitAmplitudes::basis_pair(true, true)),
        "even" => Some(QubitAmplitudes::Pair {
            q_gg: r(h),
            q_ge: z,
            q_eg: z,
            q_ee: r(h),
        }),
        "odd" => Some(QubitAmplitudes::Pair {
            q_gg: z,
            q_ge: r(h),
            q_eg: r(h),
            q_ee: z,
        }),
        _ => None,
    };
    if let Some(q) = named {
        return Ok(q);
    }
    let amps = spec.split(',').map(parse_amplitude).collect::<Result<Vec<_>, _>>()?;
    QubitAmplitudes::from_slice(&amps).map_err(|e| format!("bad qubit state {spec:?}: {e}"))
}

impl RunConfig {
    /// Applies flags over the preset over built-in defaults.
    pub fn resolve(command: CommandKind, f: &Flags) -> Self {
        let mut issues = Vec::new();
        let fig = f.figure;
        if command == CommandKind::Figure && fig.is_none() {
            issues.push(("figure".to_string(), "the figure command needs --figure".to_string()));
        }
        let pre = fig.map(preset);
        let qubits = f.qubits.or(pre.as_ref().map(|p| p.qubits)).unwrap_or(2);

        let chi = f.chi.unwrap_or(1.0);
        let kappa = f.kappa.unwrap_or(1.0);
        let alpha = C64::new(f.alpha.unwrap_or(1.0), f.alpha_im.unwrap_or(0.0));
        let alpha_second = match (f.alpha2, f.alpha2_im) {
            (None, None) => None,
            (re, im) => Some(C64::new(re.unwrap_or(0.0), im.unwrap_or(0.0))),
        };
        let eta = f.eta.or(pre.as_ref().map(|p| p.eta)).unwrap_or(1.0);
        let mut system = SystemParams64::new(chi, kappa, alpha);
        system.alpha_second = alpha_second;
        system.eta_plus = f.eta_plus.unwrap_or(eta);
        system.eta_minus = f.eta_minus.unwrap_or(eta);
        system.gamma = f.gamma.or(pre.as_ref().map(|p| p.gamma)).unwrap_or(0.0);
        if let Some(w) = f.drive_width {
            system.drive_model = DriveModel::Gaussian { duration: w };
        }

        let variant = match f.variant.unwrap_or(VariantChoice::Standard) {
            VariantChoice::Standard => {
                if f.t_prime.is_some() {
                    issues.push(("t_prime".into(), "only the tunable variant takes t_prime".into()));
                }
                Variant::Standard
            }
            VariantChoice::Tunable => Variant::Tunable { t_prime: f.t_prime },
        };
        let repetitions = f.repetitions.unwrap_or(1);
        let k = f.k.unwrap_or(1);

        // A repeated cycle merges the return and the next drive into one
        // displacement of amplitude up to |alpha| (1 + e^{-kappa t_f / 2}).
        let amp = system.alpha.norm().max(alpha_second.map_or(0.0, |a| a.norm()));
        let mut protocol = ProtocolParams64 {
            system,
            k,
            variant,
            repetitions,
            projection_threshold: f.projection_threshold.unwrap_or(0.01),
            t_final: f.t_final,
            observe_until: f.observe_until.or(pre.as_ref().and_then(|p| p.observe_until)),
            dt: 0.0,
            sample_every: 1,
        };
        let t_f = if chi > 0.0 && kappa > 0.0 {
            protocol.t_final()
        } else {
            0.0
        };
        let boosted = if repetitions > 1 {
            amp * (1.0 + (-kappa * t_f / 2.0).exp())
        } else {
            amp
        };
        system.fock_cutoff = f.cutoff.unwrap_or_else(|| default_cutoff(boosted));
        protocol.system = system;

        let max_rate = system.max_rate();
        let dt = f.dt.unwrap_or(if max_rate > 0.0 { 1e-3 / max_rate } else { 1e-3 });
        // roughly 0.01/kappa between samples unless told otherwise
        let sample_every = f
            .sample_every
            .unwrap_or_else(|| ((0.01 / kappa.max(1e-300)) / dt).round().clamp(1.0, 1e6) as usize);
        protocol.dt = dt;
        protocol.sample_every = sample_every;

        let default_t_end = match (pre.as_ref(), qubits) {
            (Some(p), _) if qubits == p.qubits && command != CommandKind::Me => p.t_end,
            (_, 1) => 10.0 / kappa,
            _ => t_f,
        };
        let t_end = f.t_end.unwrap_or(default_t_end);

        let q = match &f.q {
            Some(spec) => match parse_qubit_state(spec) {
                Ok(q) => q,
                Err(e) => {
                    issues.push(("q".into(), e));
                    default_state(qubits)
                }
            },
            None => default_state(qubits),
        };
        if q.num_qubits() != qubits && qubits <= 2 {
            issues.push((
                "q".into(),
                format!("state has {} qubit(s) but {qubits} requested", q.num_qubits()),
            ));
        }

        Self {
            command,
            figure: fig,
            system,
            q,
            protocol,
            engine: f.engine.unwrap_or(EngineChoice::Auto),
            t_end,
            dt,
            sample_every,
            n: f.n.unwrap_or(if command == CommandKind::Ensemble { 100 } else { 1 }),
            seed: f.seed.unwrap_or(0),
            threads: f.threads,
            out: f.out.clone().unwrap_or_else(|| PathBuf::from("out")),
            issues,
        }
    }

    pub fn qubits(&self) -> usize {
        self.q.num_qubits()
    }

    /// The engine a run uses.
    pub fn engine_kind(&self) -> EngineKind {
        match self.engine {
            EngineChoice::Pure => EngineKind::Pure,
            EngineChoice::Mixed => EngineKind::Mixed,
            EngineChoice::Auto if self.system.is_ideal() => EngineKind::Pure,
            EngineChoice::Auto => EngineKind::Mixed,
        }
    }

    /// True when the command drives the full protocol.
    pub fn uses_protocol(&self) -> bool {
        self.qubits() == 2
            && matches!(
                self.command,
                CommandKind::Protocol | CommandKind::Ensemble | CommandKind::Figure
            )
    }
}

fn default_state(qubits: usize) -> QubitAmplitudes<f64> {
    if qubits == 1 {
        QubitAmplitudes::plus()
    } else {
        QubitAmplitudes::uniform_pair()
    }
}

/// Every problem with the configuration as `(field, reason)`.
pub fn validate_config(cfg: &RunConfig) -> Vec<(String, String)> {
    let mut out = cfg.issues.clone();
    let own = |v: Vec<(&'static str, String)>| v.into_iter().map(|(k, r)| (k.to_string(), r));
    if !(1..=2).contains(&cfg.qubits()) {
        out.push(("qubits".into(), format!("must be 1 or 2, got {}", cfg.qubits())));
    }
    if cfg.uses_protocol() {
        // the protocol checks the system parameters itself
        out.extend(own(cfg.protocol.violations()));
    } else {
        out.extend(own(cfg.system.violations()));
        if cfg.protocol.k == 0 {
            out.push(("k".into(), "must be >= 1".into()));
        }
    }
    if cfg.dt <= 0.0 || !cfg.dt.is_finite() {
        out.push(("dt".into(), format!("must be > 0, got {}", cfg.dt)));
    }
    if cfg.sample_every == 0 {
        out.push(("sample_every".into(), "must be >= 1".into()));
    }
    if cfg.t_end <= 0.0 || !cfg.t_end.is_finite() {
        out.push(("t_end".into(), format!("must be > 0, got {}", cfg.t_end)));
    }
    if cfg.n == 0 {
        out.push(("n".into(), "must be >= 1".into()));
    }
    if cfg.threads == Some(0) {
        out.push(("threads".into(), "must be >= 1".into()));
    }
    if cfg.engine == EngineChoice::Pure && !cfg.system.is_ideal() {
        out.push(("engine".into(), "the pure engine needs eta = 1 and gamma = 0".into()));
    }
    if cfg.command != CommandKind::Me && matches!(cfg.system.drive_model, DriveModel::Gaussian { .. }) {
        out.push((
            "drive_width".into(),
            "only the me command models a Gaussian drive".into(),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(command: CommandKind, f: Flags) -> RunConfig {
        RunConfig::resolve(command, &f)
    }

    #[test]
    fn defaults_are_valid() {
        for cmd in [
            CommandKind::Me,
            CommandKind::Traj,
            CommandKind::Ensemble,
            CommandKind::Protocol,
        ] {
            let cfg = resolve(cmd, Flags::default());
            assert!(validate_config(&cfg).is_empty(), "{cmd}: {:?}", validate_config(&cfg));
        }
    }

    #[test]
    fn all_violations_are_reported() {
        let f = Flags {
            eta: Some(1.2),
            k: Some(0),
            n: Some(0),
            ..Flags::default()
        };
        let errs = validate_config(&resolve(CommandKind::Protocol, f));
        let fields: Vec<&str> = errs.iter().map(|e| e.0.as_str()).collect();
        assert!(
            fields.contains(&"eta_plus") && fields.contains(&"eta_minus"),
            "{errs:?}"
        );
        assert!(fields.contains(&"k") && fields.contains(&"n"), "{errs:?}");
    }

    #[test]
    fn config_file_lines() {
        let args = config_file_args("# sweep\nchi = 2.0\n\neta_plus=0.5  # lossy\n").unwrap();
        assert_eq!(args, ["--chi", "2.0", "--eta-plus", "0.5"]);
        assert!(config_file_args("chi 2").is_err());
    }

    #[test]
    fn presets_and_overrides() {
        let cfg = resolve(
            CommandKind::Traj,
            Flags {
                figure: Some(Figure::Fig5),
                ..Flags::default()
            },
        );
        assert_eq!(cfg.system.eta_plus, 0.9);
        assert_eq!(cfg.qubits(), 2);
        let cfg = resolve(
            CommandKind::Traj,
            Flags {
                figure: Some(Figure::Fig5),
                eta_minus: Some(0.5),
                ..Flags::default()
            },
        );
        assert_eq!((cfg.system.eta_plus, cfg.system.eta_minus), (0.9, 0.5));
    }

    #[test]
    fn repeated_cycles_get_a_larger_cutoff() {
        let once = resolve(CommandKind::Protocol, Flags::default());
        let again = resolve(
            CommandKind::Protocol,
            Flags {
                repetitions: Some(3),
                ..Flags::default()
            },
        );
        assert_eq!(once.system.fock_cutoff, 12);
        assert!(again.system.fock_cutoff > 12);
    }

    #[test]
    fn qubit_states() {
        assert_eq!(
            parse_qubit_state("ge").unwrap(),
            QubitAmplitudes::basis_pair(false, true)
        );
        let q = parse_qubit_state("1, 0:1").unwrap();
        assert_eq!(q.num_qubits(), 1);
        assert!((q.to_vec()[1].im - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(parse_qubit_state("1,2,3").is_err());
        assert!(parse_qubit_state("0,0").is_err());
    }
}
