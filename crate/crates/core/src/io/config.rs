//! Flat typed key-value run configuration.
//!
//! Grammar: one `key = value` per line; `#` starts a comment; blank lines are
//! ignored. Keys are dotted identifiers from the fixed table below, each at
//! most once. Values are decimal numbers, identifiers, `true`/`false`, or
//! comma-separated lists of those.
//!
//! ```text
//! grid.n = 128
//! grid.dealias = two_thirds          # or none
//! stepper.dt = 1e-3
//! stepper.scheme = if_rk4            # or if_rk2
//! stepper.mu = 1
//! stepper.cfl = 0.5
//! physics.delta = 0.0625
//! init.amplitude = 0.1
//! init.eps0 = 1e-2                   # optional: calibrate the amplitude
//! init.seed = 1
//! init.band = 1, 2
//! init.preflow_time = 1
//! init.preflow_velocity = cellular   # or random:<seed>
//! init.preflow_dt = 1e-3
//! run.t_end = 1
//! run.precision = f64                # or f32
//! output.cadence = 10
//! output.checkpoint_every = 0        # steps; 0 disables periodic checkpoints
//! output.directory = out
//! output.formats = ndjson, csv
//! mode.freeze_f = false
//! mode.drop_nonlinear = false
//! diagnostics.holder_alpha = 0.5     # optional, with holder_lattice
//! diagnostics.holder_lattice = 32
//! family.n_values = 4, 8, 16, 32, 64 # optional family section
//! family.compare_times = 0.5, 1
//! family.sample_every = 10
//! trajectories.substeps = 4
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use super::fmt_f64;
use crate::dynamics::StepperConfig;
use crate::field::{Dealias, GridSpec};
use crate::flux::HolderSettings;
use crate::state::InitialDataSpec;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("`{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Ndjson,
    Csv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    /// Diagnostics every `cadence` steps (plus the first and last state).
    pub cadence: u64,
    /// Periodic checkpoints every this many steps; 0 disables them.
    pub checkpoint_every: u64,
    pub directory: PathBuf,
    pub formats: Vec<OutputFormat>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyConfig {
    pub n_values: Vec<u64>,
    pub compare_times: Vec<f64>,
    /// Steps between stored samples.
    pub sample_every: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub stepper: StepperConfig,
    pub delta: f64,
    pub init: InitialDataSpec,
    /// Calibrate `init.amplitude` so that `ε0` hits this value.
    pub target_eps0: Option<f64>,
    pub t_end: f64,
    pub precision: Precision,
    pub output: OutputConfig,
    pub holder: Option<HolderSettings>,
    pub family: Option<FamilyConfig>,
    pub trajectory_substeps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridSpec::new(64, Dealias::TwoThirds).expect("valid default grid"),
            stepper: StepperConfig::default(),
            delta: 0.0625,
            init: InitialDataSpec::default(),
            target_eps0: None,
            t_end: 1.0,
            precision: Precision::F64,
            output: OutputConfig {
                cadence: 10,
                checkpoint_every: 0,
                directory: PathBuf::from("out"),
                formats: vec![OutputFormat::Ndjson],
            },
            holder: None,
            family: None,
            trajectory_substeps: 4,
        }
    }
}

const KEYS: &[&str] = &[
    "grid.n",
    "grid.dealias",
    "stepper.dt",
    "stepper.scheme",
    "stepper.mu",
    "stepper.cfl",
    "physics.delta",
    "init.amplitude",
    "init.eps0",
    "init.seed",
    "init.band",
    "init.preflow_time",
    "init.preflow_velocity",
    "init.preflow_dt",
    "run.t_end",
    "run.precision",
    "output.cadence",
    "output.checkpoint_every",
    "output.directory",
    "output.formats",
    "mode.freeze_f",
    "mode.drop_nonlinear",
    "diagnostics.holder_alpha",
    "diagnostics.holder_lattice",
    "family.n_values",
    "family.compare_times",
    "family.sample_every",
    "trajectories.substeps",
];

fn bad(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::BadValue { key: key.into(), msg: msg.into() }
}

fn list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn parse_as<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| bad(key, format!("{v:?}: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, format!("expected true or false, got {v:?}"))),
    }
}

fn join_f64(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(ConfigError::Syntax { line, msg: format!("expected `key = value`, got {body:?}") });
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey { line, key: k.into() });
            }
            if v.is_empty() {
                return Err(ConfigError::Syntax { line, msg: format!("empty value for `{k}`") });
            }
            if kv.insert(k, v).is_some() {
                return Err(ConfigError::DuplicateKey { line, key: k.into() });
            }
        }

        let mut c = RunConfig::default();
        let get = |k: &str| kv.get(k).copied();

        let n = get("grid.n").map(|v| parse_as::<usize>("grid.n", v)).transpose()?.unwrap_or(c.grid.n());
        let dealias =
            get("grid.dealias").map(|v| parse_as::<Dealias>("grid.dealias", v)).transpose()?.unwrap_or(c.grid.dealias());
        c.grid = GridSpec::new(n, dealias).map_err(|e| bad("grid.n", e.to_string()))?;

        if let Some(v) = get("stepper.dt") {
            c.stepper.dt = parse_as("stepper.dt", v)?;
        }
        if let Some(v) = get("stepper.scheme") {
            c.stepper.scheme = parse_as("stepper.scheme", v)?;
        }
        if let Some(v) = get("stepper.mu") {
            c.stepper.mu = parse_as("stepper.mu", v)?;
        }
        if let Some(v) = get("stepper.cfl") {
            c.stepper.cfl = parse_as("stepper.cfl", v)?;
        }
        if let Some(v) = get("mode.freeze_f") {
            c.stepper.freeze_f = parse_bool("mode.freeze_f", v)?;
        }
        if let Some(v) = get("mode.drop_nonlinear") {
            c.stepper.drop_nonlinear = parse_bool("mode.drop_nonlinear", v)?;
        }
        if let Some(v) = get("physics.delta") {
            c.delta = parse_as("physics.delta", v)?;
        }

        if let Some(v) = get("init.amplitude") {
            c.init.amplitude = parse_as("init.amplitude", v)?;
        }
        if let Some(v) = get("init.eps0") {
            c.target_eps0 = Some(parse_as("init.eps0", v)?);
        }
        if let Some(v) = get("init.seed") {
            c.init.seed = parse_as("init.seed", v)?;
        }
        if let Some(v) = get("init.band") {
            let parts = list(v);
            let [lo, hi] = parts.as_slice() else {
                return Err(bad("init.band", "expected `kmin, kmax`"));
            };
            c.init.band = (parse_as("init.band", lo)?, parse_as("init.band", hi)?);
        }
        if let Some(v) = get("init.preflow_time") {
            c.init.preflow_time = parse_as("init.preflow_time", v)?;
        }
        if let Some(v) = get("init.preflow_velocity") {
            c.init.preflow_velocity = parse_as("init.preflow_velocity", v)?;
        }
        if let Some(v) = get("init.preflow_dt") {
            c.init.preflow_dt = parse_as("init.preflow_dt", v)?;
        }

        if let Some(v) = get("run.t_end") {
            c.t_end = parse_as("run.t_end", v)?;
        }
        if let Some(v) = get("run.precision") {
            c.precision = match v {
                "f64" => Precision::F64,
                "f32" => Precision::F32,
                _ => return Err(bad("run.precision", format!("expected f64 or f32, got {v:?}"))),
            };
        }

        if let Some(v) = get("output.cadence") {
            c.output.cadence = parse_as("output.cadence", v)?;
        }
        if let Some(v) = get("output.checkpoint_every") {
            c.output.checkpoint_every = parse_as("output.checkpoint_every", v)?;
        }
        if let Some(v) = get("output.directory") {
            c.output.directory = PathBuf::from(v);
        }
        if let Some(v) = get("output.formats") {
            c.output.formats = list(v)
                .into_iter()
                .map(|f| match f {
                    "ndjson" => Ok(OutputFormat::Ndjson),
                    "csv" => Ok(OutputFormat::Csv),
                    _ => Err(bad("output.formats", format!("unknown format {f:?}"))),
                })
                .collect::<Result<_, _>>()?;
        }

        match (get("diagnostics.holder_alpha"), get("diagnostics.holder_lattice")) {
            (None, None) => {}
            (Some(a), Some(m)) => {
                c.holder = Some(HolderSettings {
                    alpha: parse_as("diagnostics.holder_alpha", a)?,
                    lattice: parse_as("diagnostics.holder_lattice", m)?,
                })
            }
            _ => return Err(bad("diagnostics.holder_alpha", "holder_alpha and holder_lattice go together")),
        }

        let fam = ["family.n_values", "family.compare_times", "family.sample_every"].map(get);
        if fam.iter().any(Option::is_some) {
            let (Some(nv), Some(ct)) = (fam[0], fam[1]) else {
                return Err(bad("family.n_values", "family needs both n_values and compare_times"));
            };
            c.family = Some(FamilyConfig {
                n_values: list(nv).into_iter().map(|x| parse_as("family.n_values", x)).collect::<Result<_, _>>()?,
                compare_times: list(ct)
                    .into_iter()
                    .map(|x| parse_as("family.compare_times", x))
                    .collect::<Result<_, _>>()?,
                sample_every: fam[2].map(|v| parse_as("family.sample_every", v)).transpose()?.unwrap_or(10),
            });
        }
        if let Some(v) = get("trajectories.substeps") {
            c.trajectory_substeps = parse_as("trajectories.substeps", v)?;
        }

        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |m: String| Err(ConfigError::Invalid(m));
        self.stepper.validate().map_err(ConfigError::Invalid)?;
        self.init.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return inv("physics.delta must be finite and >= 0".into());
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return inv("run.t_end must be finite and >= 0".into());
        }
        let steps = (self.t_end / self.stepper.dt).round();
        if (steps * self.stepper.dt - self.t_end).abs() > 1e-9 * self.stepper.dt.max(self.t_end) {
            return inv(format!("run.t_end = {} is not a multiple of stepper.dt = {}", self.t_end, self.stepper.dt));
        }
        if let Some(e) = self.target_eps0 {
            if !(e > 0.0 && e.is_finite()) {
                return inv("init.eps0 must be finite and > 0".into());
            }
        }
        if self.output.cadence == 0 {
            return inv("output.cadence must be >= 1".into());
        }
        if let Some(h) = self.holder {
            if !(h.alpha > 0.0 && h.alpha < 1.0) {
                return inv("diagnostics.holder_alpha must lie in (0, 1)".into());
            }
            if h.lattice < GridSpec::MIN_POINTS || !h.lattice.is_power_of_two() {
                return inv("diagnostics.holder_lattice must be a power of two >= 16".into());
            }
        }
        if let Some(f) = &self.family {
            if f.n_values.is_empty() || f.n_values.contains(&0) {
                return inv("family.n_values must be a non-empty list of positive integers".into());
            }
            if f.compare_times.is_empty() || f.compare_times.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
                return inv("family.compare_times must be a non-empty list of times >= 0".into());
            }
            if f.sample_every == 0 {
                return inv("family.sample_every must be >= 1".into());
            }
        }
        if self.trajectory_substeps == 0 {
            return inv("trajectories.substeps must be >= 1".into());
        }
        Ok(())
    }

    /// Canonical text form; [`parse`](Self::parse) inverts it exactly.
    pub fn serialize(&self) -> String {
        let mut o = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        put("grid.n", self.grid.n().to_string());
        put("grid.dealias", self.grid.dealias().to_string());
        put("stepper.dt", fmt_f64(self.stepper.dt));
        put("stepper.scheme", self.stepper.scheme.to_string());
        put("stepper.mu", fmt_f64(self.stepper.mu));
        put("stepper.cfl", fmt_f64(self.stepper.cfl));
        put("physics.delta", fmt_f64(self.delta));
        put("init.amplitude", fmt_f64(self.init.amplitude));
        if let Some(e) = self.target_eps0 {
            put("init.eps0", fmt_f64(e));
        }
        put("init.seed", self.init.seed.to_string());
        put("init.band", join_f64(&[self.init.band.0, self.init.band.1]));
        put("init.preflow_time", fmt_f64(self.init.preflow_time));
        put("init.preflow_velocity", self.init.preflow_velocity.to_string());
        put("init.preflow_dt", fmt_f64(self.init.preflow_dt));
        put("run.t_end", fmt_f64(self.t_end));
        put(
            "run.precision",
            match self.precision {
                Precision::F64 => "f64",
                Precision::F32 => "f32",
            }
            .into(),
        );
        put("output.cadence", self.output.cadence.to_string());
        put("output.checkpoint_every", self.output.checkpoint_every.to_string());
        put("output.directory", self.output.directory.display().to_string());
        let formats: Vec<&str> = self
            .output
            .formats
            .iter()
            .map(|f| match f {
                OutputFormat::Ndjson => "ndjson",
                OutputFormat::Csv => "csv",
            })
            .collect();
        put("output.formats", formats.join(", "));
        put("mode.freeze_f", self.stepper.freeze_f.to_string());
        put("mode.drop_nonlinear", self.stepper.drop_nonlinear.to_string());
        if let Some(h) = self.holder {
            put("diagnostics.holder_alpha", fmt_f64(h.alpha));
            put("diagnostics.holder_lattice", h.lattice.to_string());
        }
        if let Some(f) = &self.family {
            put("family.n_values", f.n_values.iter().map(u64::to_string).collect::<Vec<_>>().join(", "));
            put("family.compare_times", join_f64(&f.compare_times));
            put("family.sample_every", f.sample_every.to_string());
        }
        put("trajectories.substeps", self.trajectory_substeps.to_string());
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Scheme;
    use crate::state::PreflowVelocity;

    #[test]
    fn defaults_from_empty_text() {
        assert_eq!(RunConfig::parse("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn full_round_trip() {
        let text = "grid.n = 32\ngrid.dealias = none\nstepper.dt = 0.1\nstepper.scheme = if_rk2\n\
                    physics.delta = 0.1\ninit.eps0 = 1e-2\ninit.band = 1.5, 3\n\
                    init.preflow_velocity = random:7\nrun.t_end = 0.3\nrun.precision = f32\n\
                    output.formats = csv, ndjson\nmode.freeze_f = true\n\
                    diagnostics.holder_alpha = 0.25\ndiagnostics.holder_lattice = 16\n\
                    family.n_values = 4, 8\nfamily.compare_times = 0.1, 0.3\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.grid.n(), 32);
        assert_eq!(c.stepper.scheme, Scheme::IfRk2);
        assert_eq!(c.init.preflow_velocity, PreflowVelocity::Random { seed: 7 });
        assert_eq!(c.precision, Precision::F32);
        assert_eq!(c.family.as_ref().unwrap().sample_every, 10);
        let again = RunConfig::parse(&c.serialize()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.serialize(), c.serialize());
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        assert_eq!(
            RunConfig::parse("grid.n = 32\ngrid.size = 3\n"),
            Err(ConfigError::UnknownKey { line: 2, key: "grid.size".into() })
        );
        assert!(matches!(RunConfig::parse("run.t_end = 1\nrun.t_end = 2"), Err(ConfigError::DuplicateKey { .. })));
        assert!(matches!(RunConfig::parse("just words"), Err(ConfigError::Syntax { line: 1, .. })));
    }

    #[test]
    fn bad_values_rejected() {
        for text in [
            "grid.n = 48",
            "stepper.scheme = euler",
            "stepper.dt = -1",
            "run.t_end = 0.0015",
            "mode.freeze_f = yes",
            "diagnostics.holder_alpha = 0.5",
            "family.n_values = 4, 8",
            "output.cadence = 0",
        ] {
            assert!(RunConfig::parse(text).is_err(), "{text}");
        }
    }
}
