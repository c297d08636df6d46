//! Scenario files: TOML description of a model, initial state, time grid
//! and engine.
//!
//! Frequencies and rates are written in units of the reference rate `gamma`
//! and times in units of `1/gamma`; they are converted to absolute units when
//! the model is built.

use std::path::{Path, PathBuf};

use gtot_core::{
    ChannelKind, DissipatorChannel, Envelope, HamiltonianTerm, HilbertSpace, InitialState, ModeSpec, ModelSpec, C64,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

fn one() -> f64 {
    1.0
}

fn default_orders() -> Vec<usize> {
    vec![2]
}

fn default_tol() -> f64 {
    1e-9
}

fn first_order() -> u32 {
    1
}

fn is_first_order(p: &u32) -> bool {
    *p == 1
}

fn default_escape() -> f64 {
    gtot_core::positivep::DEFAULT_ESCAPE_RADIUS
}

fn is_constant(e: &EnvelopeEntry) -> bool {
    *e == EnvelopeEntry::Constant
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    /// Reference rate; other rates are multiples of it.
    #[serde(default = "one")]
    pub gamma: f64,
    /// Correlator orders `m`.
    #[serde(default = "default_orders")]
    pub correlators: Vec<usize>,
    pub modes: Vec<ModeEntry>,
    #[serde(default)]
    pub terms: Vec<TermEntry>,
    #[serde(default)]
    pub channels: Vec<ChannelEntry>,
    pub initial: Vec<InitialEntry>,
    pub time: TimeEntry,
    #[serde(default)]
    pub engine: EngineEntry,
    #[serde(default)]
    pub output: OutputEntry,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKindEntry {
    Boson,
    TwoLevel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeEntry {
    pub label: String,
    pub kind: ModeKindEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TermEntry {
    Detuning { mode: String, omega: f64 },
    Hopping { modes: [String; 2], tau: f64 },
    Kerr { mode: String, g: f64 },
    Jc { boson: String, two_level: String, eta: f64 },
    Drive {
        mode: String,
        amplitude: f64,
        #[serde(default, skip_serializing_if = "is_constant")]
        envelope: EnvelopeEntry,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvelopeEntry {
    #[default]
    Constant,
    Cosine {
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    Gaussian { center: f64, width: f64 },
    Window { on: f64, off: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelEntry {
    Loss {
        mode: String,
        rate: f64,
        #[serde(default = "first_order", skip_serializing_if = "is_first_order")]
        p: u32,
    },
    Gain { mode: String, rate: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialEntry {
    /// Coherent state given as `|α|²` and `arg α`.
    Coherent {
        mode: String,
        mean_number: f64,
        #[serde(default)]
        phase: f64,
    },
    Fock { mode: String, n: usize },
    Vacuum { mode: String },
    Ground { mode: String },
    Excited { mode: String },
}

impl InitialEntry {
    pub fn mode(&self) -> &str {
        match self {
            InitialEntry::Coherent { mode, .. }
            | InitialEntry::Fock { mode, .. }
            | InitialEntry::Vacuum { mode }
            | InitialEntry::Ground { mode }
            | InitialEntry::Excited { mode } => mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeEntry {
    pub t_end: f64,
    pub n_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EngineEntry {
    Exact {
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_leakage: Option<f64>,
    },
    PositiveP {
        n_traj: usize,
        seed: u64,
        dt: f64,
        #[serde(default = "default_escape")]
        escape_radius: f64,
    },
}

impl Default for EngineEntry {
    fn default() -> Self {
        EngineEntry::Exact { tol: default_tol(), max_leakage: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputEntry {
    /// Default CSV file name for `run` without `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

/// Engine selection in absolute units.
#[derive(Clone, Debug, PartialEq)]
pub enum Engine {
    Exact { tol: f64, max_leakage: Option<f64> },
    PositiveP { n_traj: usize, seed: u64, dt: f64, escape_radius: f64 },
}

/// A validated scenario with its model built.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub spec: ModelSpec,
    pub initial: Vec<InitialState>,
    pub times: Vec<f64>,
    pub orders: Vec<usize>,
    pub engine: Engine,
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn labels(&self) -> Vec<String> {
        self.spec.space().modes().iter().map(|m| m.label.clone()).collect()
    }

    /// Coherent amplitudes per mode, for the positive-P engine.
    pub fn coherent_amplitudes(&self) -> CliResult<Vec<C64>> {
        self.initial
            .iter()
            .zip(self.spec.space().modes())
            .map(|(s, m)| match s {
                InitialState::Coherent(a) => Ok(*a),
                InitialState::Fock(0) => Ok(C64::new(0.0, 0.0)),
                other => Err(CliError::Validation(format!(
                    "positive-P needs coherent initial states; mode `{}` starts in {other:?}",
                    m.label
                ))),
            })
            .collect()
    }
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, column)
}

/// Parses and validates scenario text. `path` is used for messages only.
pub fn parse_scenario_str(src: &str, path: &Path) -> CliResult<Scenario> {
    if let Err(e) = src.parse::<toml::Table>() {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(src, s.start));
        return Err(CliError::Syntax { path: path.to_path_buf(), line, column, message: e.message().to_string() });
    }
    let file: ScenarioFile = toml::from_str(src).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(src, s.start));
        let message = e.message().to_string();
        if message.starts_with("unknown field") {
            CliError::UnknownKey { path: path.to_path_buf(), line, column, message }
        } else {
            CliError::Validation(format!("{}:{line}:{column}: {message}", path.display()))
        }
    })?;
    build_scenario(file)
}

pub fn parse_scenario(path: &Path) -> CliResult<Scenario> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario_str(&src, path)
}

/// Serializes a scenario file; `parse(render(s))` reproduces `s`.
pub fn render(file: &ScenarioFile) -> String {
    toml::to_string(file).expect("scenario files always serialize")
}

fn positive(value: f64, what: &str) -> CliResult<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(CliError::Validation(format!("{what} must be positive and finite, got {value}")))
    }
}

fn finite(value: f64, what: &str) -> CliResult<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(CliError::Validation(format!("{what} must be finite")))
    }
}

/// Validates a parsed file and builds the model in absolute units.
pub fn build_scenario(file: ScenarioFile) -> CliResult<Scenario> {
    let gamma = positive(file.gamma, "gamma")?;
    if file.modes.is_empty() {
        return Err(CliError::Validation("at least one mode is required".into()));
    }
    let mut modes = Vec::with_capacity(file.modes.len());
    for m in &file.modes {
        modes.push(match (m.kind, m.cutoff) {
            (ModeKindEntry::Boson, Some(c)) => ModeSpec::boson(&m.label, c),
            (ModeKindEntry::Boson, None) => {
                return Err(CliError::Validation(format!("boson `{}` needs a cutoff", m.label)))
            }
            (ModeKindEntry::TwoLevel, None) => ModeSpec::two_level(&m.label),
            (ModeKindEntry::TwoLevel, Some(_)) => {
                return Err(CliError::KindMismatch(format!("two-level mode `{}` takes no cutoff", m.label)))
            }
        });
    }
    let space = HilbertSpace::new(modes).map_err(|e| CliError::Validation(e.to_string()))?;
    let index = |label: &str, context: &str| {
        space
            .index_of(label)
            .ok_or_else(|| CliError::CrossReference(format!("{context} refers to unknown mode `{label}`")))
    };

    let mut terms = Vec::new();
    for t in &file.terms {
        terms.push(match t {
            TermEntry::Detuning { mode, omega } => {
                HamiltonianTerm::Detuning { mode: index(mode, "detuning")?, omega: finite(*omega, "omega")? * gamma }
            }
            TermEntry::Hopping { modes: [a, b], tau } => HamiltonianTerm::Hopping {
                modes: (index(a, "hopping")?, index(b, "hopping")?),
                tau: finite(*tau, "tau")? * gamma,
            },
            TermEntry::Kerr { mode, g } => HamiltonianTerm::Kerr { mode: index(mode, "kerr")?, g: finite(*g, "g")? * gamma },
            TermEntry::Jc { boson, two_level, eta } => HamiltonianTerm::JcCoupling {
                boson: index(boson, "jc")?,
                two_level: index(two_level, "jc")?,
                eta: finite(*eta, "eta")? * gamma,
            },
            TermEntry::Drive { mode, amplitude, envelope } => HamiltonianTerm::Drive {
                mode: index(mode, "drive")?,
                amplitude: finite(*amplitude, "amplitude")? * gamma,
                envelope: match *envelope {
                    EnvelopeEntry::Constant => Envelope::Constant,
                    EnvelopeEntry::Cosine { omega, phase } => {
                        Envelope::Cosine { omega: finite(omega, "omega")? * gamma, phase: finite(phase, "phase")? }
                    }
                    EnvelopeEntry::Gaussian { center, width } => Envelope::Gaussian {
                        center: finite(center, "center")? / gamma,
                        width: positive(width, "width")? / gamma,
                    },
                    EnvelopeEntry::Window { on, off } => {
                        Envelope::Window { on: finite(on, "on")? / gamma, off: finite(off, "off")? / gamma }
                    }
                },
            },
        });
    }

    let mut channels = Vec::new();
    for c in &file.channels {
        channels.push(match c {
            ChannelEntry::Loss { mode, rate, p } => DissipatorChannel {
                mode: index(mode, "loss")?,
                kind: ChannelKind::Loss { p: *p },
                rate: finite(*rate, "rate")? * gamma,
            },
            ChannelEntry::Gain { mode, rate } => {
                DissipatorChannel { mode: index(mode, "gain")?, kind: ChannelKind::Gain, rate: finite(*rate, "rate")? * gamma }
            }
        });
    }

    let mut initial: Vec<Option<InitialState>> = vec![None; space.n_modes()];
    for entry in &file.initial {
        let i = index(entry.mode(), "initial state")?;
        if initial[i].is_some() {
            return Err(CliError::CrossReference(format!("mode `{}` has two initial states", entry.mode())));
        }
        let kind = &space.modes()[i];
        let state = match entry {
            InitialEntry::Coherent { mean_number, phase, .. } => {
                if !(mean_number.is_finite() && *mean_number >= 0.0) {
                    return Err(CliError::Validation(format!("mean_number must be ≥ 0, got {mean_number}")));
                }
                InitialState::Coherent(C64::from_polar(mean_number.sqrt(), finite(*phase, "phase")?))
            }
            InitialEntry::Fock { n, .. } => InitialState::Fock(*n),
            InitialEntry::Vacuum { .. } => InitialState::Fock(0),
            InitialEntry::Ground { .. } => InitialState::Ground,
            InitialEntry::Excited { .. } => InitialState::Excited,
        };
        let fits = matches!(
            (kind.is_boson(), state),
            (true, InitialState::Coherent(_) | InitialState::Fock(_))
                | (false, InitialState::Ground | InitialState::Excited | InitialState::Fock(0 | 1))
        );
        if !fits {
            return Err(CliError::KindMismatch(format!("initial state {state:?} on mode `{}`", kind.label)));
        }
        if let (Some(c), InitialState::Fock(n)) = (kind.cutoff(), state) {
            if n > c {
                return Err(CliError::Validation(format!("Fock({n}) exceeds cutoff {c} of mode `{}`", kind.label)));
            }
        }
        initial[i] = Some(state);
    }
    let initial: Vec<InitialState> = initial
        .into_iter()
        .zip(space.modes())
        .map(|(s, m)| s.ok_or_else(|| CliError::CrossReference(format!("mode `{}` has no initial state", m.label))))
        .collect::<CliResult<_>>()?;

    let spec = ModelSpec::new(space, terms, channels).map_err(|e| match e {
        gtot_core::Error::KindMismatch(msg) => CliError::KindMismatch(msg),
        other => CliError::Validation(other.to_string()),
    })?;

    let t_end = positive(file.time.t_end, "time.t_end")? / gamma;
    if file.time.n_points < 2 {
        return Err(CliError::Validation("time.n_points must be at least 2".into()));
    }
    let times = gtot_core::uniform_grid(t_end, file.time.n_points);

    if file.correlators.is_empty() || file.correlators.iter().any(|&m| m < 2) {
        return Err(CliError::Validation("correlators must list orders m ≥ 2".into()));
    }
    let mut orders = file.correlators.clone();
    orders.dedup();

    let engine = match file.engine {
        EngineEntry::Exact { tol, max_leakage } => Engine::Exact {
            tol: positive(tol, "engine.tol")?,
            max_leakage: max_leakage.map(|b| positive(b, "engine.max_leakage")).transpose()?,
        },
        EngineEntry::PositiveP { n_traj, seed, dt, escape_radius } => {
            if n_traj == 0 {
                return Err(CliError::Validation("engine.n_traj must be at least 1".into()));
            }
            Engine::PositiveP {
                n_traj,
                seed,
                dt: positive(dt, "engine.dt")? / gamma,
                escape_radius: positive(escape_radius, "engine.escape_radius")?,
            }
        }
    };

    let scenario = Scenario { spec, initial, times, orders, engine, file };
    if matches!(scenario.engine, Engine::PositiveP { .. }) {
        gtot_core::pp_drift_diffusion(&scenario.spec).map_err(|e| CliError::Validation(e.to_string()))?;
        scenario.coherent_amplitudes()?;
    }
    Ok(scenario)
}

/// Replaces every bosonic cutoff.
pub fn override_cutoff(file: &mut ScenarioFile, cutoff: usize) {
    for m in &mut file.modes {
        if m.kind == ModeKindEntry::Boson {
            m.cutoff = Some(cutoff);
        }
    }
}

/// Sets the numeric field at a dotted path such as `terms.0.tau` or
/// `time.t_end`. Array elements are addressed by index.
pub fn set_parameter(file: &ScenarioFile, path: &str, value: f64) -> CliResult<ScenarioFile> {
    let unknown = || CliError::Validation(format!("unknown parameter path `{path}`"));
    let mut root = toml::Value::try_from(file).expect("scenario files always serialize");
    let mut node = &mut root;
    for part in path.split('.') {
        node = match node {
            toml::Value::Table(t) => t.get_mut(part).ok_or_else(unknown)?,
            toml::Value::Array(a) => a.get_mut(part.parse::<usize>().map_err(|_| unknown())?).ok_or_else(unknown)?,
            _ => return Err(unknown()),
        };
    }
    *node = match node {
        toml::Value::Float(_) => toml::Value::Float(value),
        toml::Value::Integer(_) if value.fract() == 0.0 && value.abs() < 9.0e15 => toml::Value::Integer(value as i64),
        toml::Value::Integer(_) => {
            return Err(CliError::Validation(format!("`{path}` takes an integer, got {value}")))
        }
        _ => return Err(CliError::Validation(format!("`{path}` is not a numeric field"))),
    };
    root.try_into().map_err(|e: toml::de::Error| CliError::Validation(format!("after setting `{path}`: {}", e.message())))
}

/// Directory holding the scenarios shipped with the crate.
pub fn bundled_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}
