//! Experiment documents: one TOML file per run, validated in full before any
//! work starts.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pool_core::boxsim::{Kinematics, DEFAULT_BOX_SIDE, DEFAULT_DT};
use pool_core::engulf::DEFAULT_CAP;
use pool_core::geomfield::Annulus;
use serde::Serialize;
use toml::{Table, Value};

use crate::error::CliError;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "POOL_OUTPUT_ROOT";

pub const ESTIMATORS: &[&str] = &[
    "kurtz_test",
    "hazard_estimate",
    "hazard_linearity",
    "refill_density_estimate",
    "hitting_prob_estimate",
    "entered_count_estimate",
    "exp_lln_check",
    "timing_identity_check",
    "cascade_tail_fit",
    "volume_deviation_scan",
];

pub const ANALYSES: &[&str] = &["mass_audit", "growth_exponent", "stall", "quantiles"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "name")]
pub enum Command {
    SimulateExact,
    SimulateBox,
    Branching,
    Estimate(String),
    Analyze(String),
}

impl Command {
    pub fn label(&self) -> String {
        match self {
            Command::SimulateExact => "simulate-exact".into(),
            Command::SimulateBox => "simulate-box".into(),
            Command::Branching => "branching".into(),
            Command::Estimate(n) => format!("estimate-{n}"),
            Command::Analyze(n) => format!("analyze-{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactParams {
    pub lambda: f64,
    pub horizon: f64,
    pub target_radius_hint: f64,
    /// Explicit simulation radius; otherwise certified from `truncation_tol`.
    pub sim_radius: Option<f64>,
    pub truncation_tol: f64,
    pub cap: u64,
    pub audit: bool,
    pub grid_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxParams {
    pub lambda: f64,
    pub horizon: f64,
    pub box_side: f64,
    pub dt: f64,
    pub kinematics: Kinematics,
    pub cap: u64,
    pub grid_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchingParams {
    pub lambdas: Vec<f64>,
    /// Critical progeny draws for the histogram (0 skips it).
    pub progeny_samples: u64,
    pub progeny_cap: u64,
    /// Dominating-process paths are written when this is set.
    pub hazard_constant: Option<f64>,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum EstimateParams {
    Kurtz {
        lambda: f64,
        pool_radius: f64,
        t: f64,
        annuli: Vec<Annulus>,
        oracle_walkers: u64,
    },
    Hazard {
        radius: f64,
        lambda: f64,
        t_max: f64,
        rate_samples: u64,
    },
    HazardLinearity {
        radii: Vec<f64>,
        lambda: f64,
        t_max: f64,
        rate_samples: u64,
    },
    Refill {
        lambda: f64,
        radius: f64,
        t: f64,
        probe: Annulus,
    },
    Hitting {
        x_radius: f64,
        k: f64,
    },
    Entered {
        lambda: f64,
        k: f64,
    },
    Lln {
        n: u64,
    },
    Timing {
        hazard_constant: f64,
        steps: u64,
        progeny_cap: u64,
    },
    CascadeTail {
        offspring_mean: f64,
        root_mean: f64,
        cap: u64,
    },
    Volume {
        lambda: f64,
        radius: f64,
        delta: f64,
        box_side: f64,
        horizon: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeParams {
    /// Directory written by a simulate run.
    pub input_dir: PathBuf,
    pub t_min: f64,
    pub t_max: Option<f64>,
    pub alpha: f64,
    pub beta: Option<f64>,
    pub t0: f64,
    pub grid_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Parameters {
    Exact(ExactParams),
    Box(BoxParams),
    Branching(BranchingParams),
    Estimate(EstimateParams),
    Analyze(AnalyzeParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub parameters: Parameters,
    pub replicas: u64,
    pub workers: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

/// Config echo for manifests: everything that determines the output bytes.
#[derive(Serialize)]
pub struct Echo<'a> {
    pub command: &'a Command,
    pub parameters: &'a Parameters,
    pub replicas: u64,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn echo(&self) -> Echo<'_> {
        Echo {
            command: &self.command,
            parameters: &self.parameters,
            replicas: self.replicas,
            master_seed: self.master_seed,
        }
    }
}

/// Key reader over one table that records every problem and every key used.
struct Section<'t, 'e> {
    path: &'static str,
    table: &'t Table,
    used: BTreeSet<&'static str>,
    errs: &'e mut Vec<String>,
}

impl<'t, 'e> Section<'t, 'e> {
    fn new(path: &'static str, table: &'t Table, errs: &'e mut Vec<String>) -> Self {
        Self { path, table, used: BTreeSet::new(), errs }
    }

    fn key(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'t Value> {
        self.used.insert(key);
        self.table.get(key)
    }

    fn missing(&mut self, key: &str) {
        let k = self.key(key);
        self.errs.push(format!("missing required key `{k}`"));
    }

    fn as_f64(v: &Value) -> Option<f64> {
        match v {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }

    fn real(&mut self, key: &'static str, default: Option<f64>, ok: fn(f64) -> bool, bound: &str) -> f64 {
        let x = match self.raw(key) {
            None => match default {
                Some(d) => return d,
                None => {
                    self.missing(key);
                    return f64::NAN;
                }
            },
            Some(v) => match Self::as_f64(v) {
                Some(x) => x,
                None => {
                    let k = self.key(key);
                    self.errs.push(format!("`{k}` must be a number"));
                    return f64::NAN;
                }
            },
        };
        if !(x.is_finite() && ok(x)) {
            let k = self.key(key);
            self.errs.push(format!("`{k}` = {x} violates {bound}"));
        }
        x
    }

    fn opt_real(&mut self, key: &'static str, ok: fn(f64) -> bool, bound: &str) -> Option<f64> {
        self.table.contains_key(key).then(|| self.real(key, None, ok, bound))
    }

    fn int(&mut self, key: &'static str, default: Option<u64>, min: u64) -> u64 {
        let v = match self.raw(key) {
            None => {
                if default.is_none() {
                    self.missing(key);
                }
                return default.unwrap_or(min);
            }
            Some(v) => v,
        };
        let n = match v {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            // 1e5 style literals are accepted when integral
            Value::Float(x) if x.fract() == 0.0 && *x >= 0.0 && *x < 1.8e19 => Some(*x as u64),
            _ => None,
        };
        match n {
            Some(n) if n >= min => n,
            Some(n) => {
                let k = self.key(key);
                self.errs.push(format!("`{k}` = {n} violates {key} >= {min}"));
                n
            }
            None => {
                let k = self.key(key);
                self.errs.push(format!("`{k}` must be a nonnegative integer"));
                min
            }
        }
    }

    fn boolean(&mut self, key: &'static str, default: bool) -> bool {
        match self.raw(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(_) => {
                let k = self.key(key);
                self.errs.push(format!("`{k}` must be true or false"));
                default
            }
        }
    }

    fn text(&mut self, key: &'static str) -> Option<String> {
        match self.raw(key) {
            None => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                let k = self.key(key);
                self.errs.push(format!("`{k}` must be a string"));
                None
            }
        }
    }

    fn reals(&mut self, key: &'static str, default: Option<Vec<f64>>) -> Vec<f64> {
        match self.raw(key) {
            None => default.unwrap_or_else(|| {
                self.missing(key);
                Vec::new()
            }),
            Some(Value::Array(items)) => {
                let xs: Option<Vec<f64>> = items.iter().map(Self::as_f64).collect();
                xs.unwrap_or_else(|| {
                    let k = self.key(key);
                    self.errs.push(format!("`{k}` must be an array of numbers"));
                    Vec::new()
                })
            }
            Some(_) => {
                let k = self.key(key);
                self.errs.push(format!("`{k}` must be an array of numbers"));
                Vec::new()
            }
        }
    }

    fn annulus(&mut self, key: &'static str, pair: &[f64]) -> Option<Annulus> {
        match pair {
            [a, b] => match Annulus::new(*a, *b) {
                Ok(ann) => Some(ann),
                Err(e) => {
                    let k = self.key(key);
                    self.errs.push(format!("`{k}`: {e}"));
                    None
                }
            },
            _ => {
                let k = self.key(key);
                self.errs.push(format!("`{k}` entries must be [inner, outer]"));
                None
            }
        }
    }

    fn annuli(&mut self, key: &'static str) -> Vec<Annulus> {
        let items = match self.raw(key) {
            None => {
                self.missing(key);
                return Vec::new();
            }
            Some(Value::Array(items)) => items,
            Some(_) => {
                let k = self.key(key);
                self.errs.push(format!("`{k}` must be an array of [inner, outer] pairs"));
                return Vec::new();
            }
        };
        let mut out = Vec::new();
        for item in items {
            let pair: Vec<f64> = match item {
                Value::Array(p) => p.iter().filter_map(Self::as_f64).collect(),
                _ => Vec::new(),
            };
            if let Some(a) = self.annulus(key, &pair) {
                out.push(a);
            }
        }
        out
    }

    fn finish(self) {
        for k in self.table.keys() {
            if !self.used.contains(k.as_str()) {
                let name = if self.path.is_empty() { k.clone() } else { format!("{}.{k}", self.path) };
                self.errs.push(format!("unknown key `{name}`"));
            }
        }
    }
}

fn positive(x: f64) -> bool {
    x > 0.0
}
fn nonneg(x: f64) -> bool {
    x >= 0.0
}
fn unit_open(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

fn parse_command(text: &str, name: Option<String>, errs: &mut Vec<String>) -> Option<Command> {
    let named = |kind: fn(String) -> Command, list: &[&str], errs: &mut Vec<String>| match &name {
        Some(n) if list.contains(&n.as_str()) => Some(kind(n.clone())),
        Some(n) => {
            errs.push(format!("unknown name `{n}` for {text}; expected one of {}", list.join(", ")));
            None
        }
        None => {
            errs.push(format!("missing required key `name` for {text}"));
            None
        }
    };
    match text {
        "simulate-exact" | "simulate-box" | "branching" if name.is_some() => {
            errs.push(format!("`name` is not used by {text}"));
            None
        }
        "simulate-exact" => Some(Command::SimulateExact),
        "simulate-box" => Some(Command::SimulateBox),
        "branching" => Some(Command::Branching),
        "estimate" => named(Command::Estimate, ESTIMATORS, errs),
        "analyze" => named(Command::Analyze, ANALYSES, errs),
        other => {
            errs.push(format!(
                "unknown command `{other}`; expected simulate-exact, simulate-box, branching, estimate or analyze"
            ));
            None
        }
    }
}

fn parse_parameters(cmd: &Command, s: &mut Section<'_, '_>) -> Parameters {
    match cmd {
        Command::SimulateExact => Parameters::Exact(ExactParams {
            lambda: s.real("lambda", None, positive, "lambda > 0"),
            horizon: s.real("horizon", None, positive, "horizon > 0"),
            target_radius_hint: s.real(
                "target_radius_hint",
                None,
                |r| r * r * std::f64::consts::PI >= 1.0,
                "target_radius_hint >= 1/sqrt(pi)",
            ),
            sim_radius: s.opt_real("sim_radius", positive, "sim_radius > 0"),
            truncation_tol: s.real("truncation_tol", Some(1e-3), unit_open, "0 < truncation_tol < 1"),
            cap: s.int("cap", Some(DEFAULT_CAP), 1),
            audit: s.boolean("audit", false),
            grid_step: s.real("grid_step", Some(1.0), positive, "grid_step > 0"),
        }),
        Command::SimulateBox => {
            let kinematics = match s.text("kinematics").as_deref() {
                None | Some("random-walk") => Kinematics::RandomWalk,
                Some("brownian") => Kinematics::Brownian,
                Some(other) => {
                    s.errs.push(format!(
                        "`parameters.kinematics` = {other:?}; expected \"random-walk\" or \"brownian\""
                    ));
                    Kinematics::RandomWalk
                }
            };
            let p = BoxParams {
                lambda: s.real("lambda", None, positive, "lambda > 0"),
                horizon: s.real("horizon", None, positive, "horizon > 0"),
                box_side: s.real("box_side", Some(DEFAULT_BOX_SIDE), positive, "box_side > 0"),
                dt: s.real("dt", Some(DEFAULT_DT), positive, "dt > 0"),
                kinematics,
                cap: s.int("cap", Some(DEFAULT_CAP), 1),
                grid_step: s.real("grid_step", Some(1.0), positive, "grid_step > 0"),
            };
            if p.dt > p.horizon {
                s.errs.push("violated dt <= horizon".into());
            }
            Parameters::Box(p)
        }
        Command::Branching => {
            let lambdas = s.reals("lambdas", Some(vec![0.5, 1.0, 1.5, 2.0, 3.0]));
            if lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
                s.errs.push("`parameters.lambdas` violates lambda > 0".into());
            }
            Parameters::Branching(BranchingParams {
                lambdas,
                progeny_samples: s.int("progeny_samples", Some(0), 0),
                progeny_cap: s.int("progeny_cap", Some(10_000_000), 1),
                hazard_constant: s.opt_real("hazard_constant", positive, "hazard_constant > 0"),
                steps: s.int("steps", Some(1000), 0),
            })
        }
        Command::Estimate(name) => Parameters::Estimate(match name.as_str() {
            "kurtz_test" => EstimateParams::Kurtz {
                lambda: s.real("lambda", Some(1.0), positive, "lambda > 0"),
                pool_radius: s.real("pool_radius", Some(1.0 / std::f64::consts::PI.sqrt()), positive, "pool_radius > 0"),
                t: s.real("t", None, nonneg, "t >= 0"),
                annuli: s.annuli("annuli"),
                oracle_walkers: s.int("oracle_walkers", Some(100_000), 1),
            },
            "hazard_estimate" => EstimateParams::Hazard {
                radius: s.real("radius", None, |r| r * r * std::f64::consts::PI >= 1.0, "radius >= 1/sqrt(pi)"),
                lambda: s.real("lambda", Some(1.0), nonneg, "lambda >= 0"),
                t_max: s.real("t_max", Some(4.0), positive, "t_max > 0"),
                rate_samples: s.int("rate_samples", Some(1_000_000), 1),
            },
            "hazard_linearity" => {
                let radii = s.reals("radii", Some(vec![2.0, 4.0, 8.0]));
                if radii.len() < 2 || radii.iter().any(|r| !(r * r * std::f64::consts::PI >= 1.0)) {
                    s.errs.push("`parameters.radii` needs two or more radii >= 1/sqrt(pi)".into());
                }
                EstimateParams::HazardLinearity {
                    radii,
                    lambda: s.real("lambda", Some(1.0), positive, "lambda > 0"),
                    t_max: s.real("t_max", Some(4.0), positive, "t_max > 0"),
                    rate_samples: s.int("rate_samples", Some(1_000_000), 1),
                }
            }
            "refill_density_estimate" => {
                let radius = s.real("radius", None, positive, "radius > 0");
                let probe = s.reals("probe", Some(vec![0.0, 1.0]));
                let probe = s.annulus("probe", &probe).unwrap_or(Annulus::disk(1.0).expect("unit disk"));
                if probe.r_outer > radius {
                    s.errs.push("violated probe inside radius".into());
                }
                EstimateParams::Refill {
                    lambda: s.real("lambda", Some(1.0), positive, "lambda > 0"),
                    radius,
                    t: s.real("t", None, nonneg, "t >= 0"),
                    probe,
                }
            }
            "hitting_prob_estimate" => EstimateParams::Hitting {
                x_radius: s.real("x_radius", None, |r| r * r * std::f64::consts::PI > 1.0, "x_radius > 1/sqrt(pi)"),
                k: s.real("k", None, positive, "k > 0"),
            },
            "entered_count_estimate" => EstimateParams::Entered {
                lambda: s.real("lambda", Some(1.0), positive, "lambda > 0"),
                k: s.real("k", None, nonneg, "k >= 0"),
            },
            "exp_lln_check" => EstimateParams::Lln { n: s.int("n", None, 1000) },
            "timing_identity_check" => EstimateParams::Timing {
                hazard_constant: s.real("hazard_constant", None, positive, "hazard_constant > 0"),
                steps: s.int("steps", None, 1),
                progeny_cap: s.int("progeny_cap", Some(1_000_000_000_000), 1),
            },
            "cascade_tail_fit" => EstimateParams::CascadeTail {
                offspring_mean: s.real("offspring_mean", Some(1.0), positive, "offspring_mean > 0"),
                root_mean: s.real("root_mean", Some(1.0), positive, "root_mean > 0"),
                cap: s.int("cap", Some(10_000_000), 1),
            },
            "volume_deviation_scan" => EstimateParams::Volume {
                lambda: s.real("lambda", Some(1.0), positive, "lambda > 0"),
                radius: s.real("radius", None, positive, "radius > 0"),
                delta: s.real("delta", None, positive, "delta > 0"),
                box_side: s.real("box_side", None, positive, "box_side > 0"),
                horizon: s.real("horizon", None, nonneg, "horizon >= 0"),
            },
            _ => unreachable!("name checked against ESTIMATORS"),
        }),
        Command::Analyze(_) => {
            let input_dir = s.text("input_dir").map(PathBuf::from).unwrap_or_else(|| {
                s.missing("input_dir");
                PathBuf::new()
            });
            Parameters::Analyze(AnalyzeParams {
                input_dir,
                t_min: s.real("t_min", Some(1.0), positive, "t_min > 0"),
                t_max: s.opt_real("t_max", positive, "t_max > 0"),
                alpha: s.real("alpha", Some(0.5), unit_open, "0 < alpha < 1"),
                beta: s.opt_real("beta", unit_open, "0 < beta < 1"),
                t0: s.real("t0", Some(0.0), nonneg, "t0 >= 0"),
                grid_step: s.real("grid_step", Some(1.0), positive, "grid_step > 0"),
            })
        }
    }
}

/// Output root when the document names none.
pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("pool-output"))
}

/// Parses and validates a document. Every problem found is reported.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    parse_config_for(text, None, None)
}

/// As [`parse_config`], with the command (and estimator or analysis name)
/// taken from the command line. A document that names a different command is
/// rejected.
pub fn parse_config_for(text: &str, command: Option<&str>, wanted: Option<&str>) -> Result<ExperimentConfig, CliError> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(vec![e.message().to_string()]))?;
    let mut errs = Vec::new();
    let mut top = Section::new("", &doc, &mut errs);
    let mut command_text = top.text("command");
    let mut name = top.text("name");
    for (given, found, key) in [(command, &mut command_text, "command"), (wanted, &mut name, "name")] {
        match (given, found.as_deref()) {
            (Some(g), Some(f)) if g != f => {
                top.errs.push(format!("document has {key} = {f:?} but {g:?} was requested"));
            }
            (Some(g), _) => *found = Some(g.to_string()),
            _ => {}
        }
    }
    let replicas = top.int("replicas", Some(1), 1);
    let workers = top.int("workers", Some(1), 1) as usize;
    let master_seed = top.int("master_seed", Some(0), 0);
    let output_dir = top.text("output_dir").map(PathBuf::from);
    let params = match top.raw("parameters") {
        None => None,
        Some(Value::Table(t)) => Some(t),
        Some(_) => {
            top.errs.push("`parameters` must be a table".into());
            None
        }
    };
    top.finish();
    let command = match command_text {
        Some(c) => parse_command(&c, name, &mut errs),
        None => {
            errs.push("missing required key `command`".into());
            None
        }
    };
    let empty = Table::new();
    let parameters = command.as_ref().map(|cmd| {
        let mut s = Section::new("parameters", params.unwrap_or(&empty), &mut errs);
        let p = parse_parameters(cmd, &mut s);
        s.finish();
        p
    });
    match (command, parameters) {
        (Some(command), Some(parameters)) if errs.is_empty() => {
            let output_dir = output_dir.unwrap_or_else(|| default_output_root().join(command.label()));
            Ok(ExperimentConfig { command, parameters, replicas, workers, master_seed, output_dir })
        }
        _ => Err(CliError::Config(errs)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn errors(text: &str) -> Vec<String> {
        match parse_config(text) {
            Err(CliError::Config(e)) => e,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn box_defaults_follow_the_reference_protocol() {
        let cfg = parse_config("command = \"simulate-box\"\n[parameters]\nlambda = 1\nhorizon = 100\n").unwrap();
        let Parameters::Box(p) = cfg.parameters else { panic!() };
        assert_eq!((p.dt, p.box_side), (0.01, 800.0));
        assert_eq!(cfg.replicas, 1);
    }

    #[test]
    fn negative_lambda_names_the_bound() {
        let e = errors("command = \"simulate-box\"\n[parameters]\nlambda = -1\nhorizon = 1\n");
        assert_eq!(e.len(), 1);
        assert!(e[0].contains("lambda > 0"), "{e:?}");
    }

    #[test]
    fn all_unknown_keys_are_reported() {
        let e = errors("command = \"simulate-exact\"\nfoo = 1\n[parameters]\nlambda = 1\nhorizon = 1\ntarget_radius_hint = 3\nbar = 2\n");
        assert!(e.iter().any(|m| m.contains("`foo`")));
        assert!(e.iter().any(|m| m.contains("`parameters.bar`")));
    }

    #[test]
    fn missing_and_invalid_keys_together() {
        let e = errors("command = \"simulate-exact\"\nreplicas = 0\n[parameters]\nlambda = 1\n");
        assert!(e.iter().any(|m| m.contains("replicas >= 1")));
        assert!(e.iter().any(|m| m.contains("`parameters.horizon`")));
        assert!(e.iter().any(|m| m.contains("`parameters.target_radius_hint`")));
    }

    #[test]
    fn estimator_names_are_checked() {
        let e = errors("command = \"estimate\"\nname = \"nope\"\n");
        assert!(e[0].contains("unknown name"));
        let cfg = parse_config(
            "command = \"estimate\"\nname = \"kurtz_test\"\nreplicas = 1000\n[parameters]\nt = 1\nannuli = [[1, 2], [2, 3]]\n",
        )
        .unwrap();
        assert_eq!(cfg.command, Command::Estimate("kurtz_test".into()));
    }
}
