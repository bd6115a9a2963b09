//! Ensemble runner. Replicas run on a private thread pool; results are
//! collected in replica order, so artifacts do not depend on `workers`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pool_core::boxsim::{run_box, BoxConfig};
use pool_core::branching::{
    borel_pmf, dominating_trajectory, extinction_prob, sample_total_progeny, survival_lower_bound,
    DominatingConfig, GwParams,
};
use pool_core::exact::{certified_radius, run_exact, ExactConfig};
use pool_core::geomfield::{tags, RngStream};
use pool_core::stats::field::{
    entered_count_estimate, free_field_snapshots, hitting_prob_estimate, refill_density_estimate,
    volume_deviation_scan, EnteredParams, HittingParams, RefillParams,
};
use pool_core::stats::fits::{
    cascade_tail_fit, exp_lln_check, growth_exponent_fit, growth_exponent_path, lln_stream,
    timing_identity_check, timing_ratio, WeightRule,
};
use pool_core::stats::hazard::{hazard_estimate, hazard_linearity, HazardParams};
use pool_core::stats::kurtz::{kurtz_test, KurtzParams};
use pool_core::stats::{StatReport, Verdict};
use pool_core::traj::{ensemble_quantiles, find_stall, is_stall, mass_audit, StallParams, StepPath};
use pool_core::trajectory::Trajectory;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{
    AnalyzeParams, BoxParams, BranchingParams, Command, EstimateParams, ExactParams, ExperimentConfig, Parameters,
};
use crate::error::{CliError, Result};
use crate::io;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// What a run left on disk and the verdicts it produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub reports: Vec<StatReport>,
}

impl Outcome {
    pub fn any_failed(&self) -> bool {
        self.reports.iter().any(|r| r.verdict == Verdict::Fail)
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(self.any_failed())
    }
}

struct Sink {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Sink {
    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        io::write_text(&path, text)?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: serde::Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.dir.join(name);
        io::write_json(&path, value)?;
        self.files.push(path);
        Ok(())
    }

    fn jsonl(&mut self, name: &str, reports: &[StatReport]) -> Result<()> {
        let path = self.dir.join(name);
        io::write_jsonl(&path, reports)?;
        self.files.push(path);
        Ok(())
    }
}

fn config_error(e: pool_core::error::Error) -> CliError {
    CliError::Config(vec![e.to_string()])
}

fn trajectory_file(replica: u64) -> String {
    format!("traj_{replica:04}.csv")
}

fn grid(end: f64, step: f64) -> Vec<f64> {
    let n = (end / step * (1.0 + 1e-12)).floor() as u64;
    (0..=n).map(|k| k as f64 * step).collect()
}

fn manifest(cfg: &ExperimentConfig, extra: Value) -> Value {
    let mut m = json!({
        "code_version": CODE_VERSION,
        "config": cfg.echo(),
    });
    if let (Value::Object(m), Value::Object(extra)) = (&mut m, extra) {
        m.extend(extra);
    }
    m
}

/// Runs `f` over replica indices on `workers` threads, in index order.
fn run_replicas<T: Send>(workers: usize, n: u64, f: impl Fn(u64) -> T + Sync + Send) -> Result<Vec<T>> {
    pool(workers)?.install(|| Ok((0..n).into_par_iter().map(&f).collect()))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

/// Validates the configuration against the engine preconditions, checks the
/// output directory, then runs the experiment and writes every artifact.
pub fn run_ensemble(cfg: &ExperimentConfig) -> Result<Outcome> {
    let plan = Plan::new(cfg)?;
    io::ensure_writable(&cfg.output_dir)?;
    let mut sink = Sink { dir: cfg.output_dir.clone(), files: Vec::new() };
    let reports = match plan {
        Plan::Exact(c, p) => simulate_exact(cfg, &c, p, &mut sink)?,
        Plan::Box(c, p) => simulate_box(cfg, &c, p, &mut sink)?,
        Plan::Branching(p) => branching(cfg, p, &mut sink)?,
        Plan::Estimate(name, p) => estimate(cfg, &name, p, &mut sink)?,
        Plan::Analyze(name, p) => analyze(cfg, &name, p, &mut sink)?,
    };
    Ok(Outcome { dir: sink.dir, files: sink.files, reports })
}

/// Engine configurations built and validated up front.
enum Plan<'a> {
    Exact(ExactConfig, &'a ExactParams),
    Box(BoxConfig, &'a BoxParams),
    Branching(&'a BranchingParams),
    Estimate(String, &'a EstimateParams),
    Analyze(String, &'a AnalyzeParams),
}

impl<'a> Plan<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        Ok(match (&cfg.command, &cfg.parameters) {
            (Command::SimulateExact, Parameters::Exact(p)) => {
                let sim_radius = p
                    .sim_radius
                    .unwrap_or_else(|| certified_radius(p.lambda, p.horizon, p.target_radius_hint, p.truncation_tol));
                let c = ExactConfig {
                    lambda: p.lambda,
                    horizon: p.horizon,
                    sim_radius,
                    cap: p.cap,
                    master_seed: cfg.master_seed,
                    replica: 0,
                    target_radius_hint: p.target_radius_hint,
                    audit: p.audit,
                };
                c.validate().map_err(config_error)?;
                Plan::Exact(c, p)
            }
            (Command::SimulateBox, Parameters::Box(p)) => {
                let c = BoxConfig {
                    lambda: p.lambda,
                    box_side: p.box_side,
                    dt: p.dt,
                    horizon: p.horizon,
                    kinematics: p.kinematics,
                    cap: p.cap,
                    master_seed: cfg.master_seed,
                    replica: 0,
                };
                c.validate().map_err(config_error)?;
                Plan::Box(c, p)
            }
            (Command::Branching, Parameters::Branching(p)) => Plan::Branching(p),
            (Command::Estimate(n), Parameters::Estimate(p)) => Plan::Estimate(n.clone(), p),
            (Command::Analyze(n), Parameters::Analyze(p)) => Plan::Analyze(n.clone(), p),
            _ => return Err(CliError::Config(vec!["parameters do not match the command".into()])),
        })
    }
}

fn audit_report(traj: &Trajectory, replica: u64) -> StatReport {
    let mut r = mass_audit(traj);
    r.set("replica", replica);
    r
}

fn write_trajectories(sink: &mut Sink, trajs: &[&Trajectory]) -> Result<()> {
    for (i, t) in trajs.iter().enumerate() {
        sink.text(&trajectory_file(i as u64), &io::trajectory_csv(t))?;
    }
    Ok(())
}

fn simulate_exact(cfg: &ExperimentConfig, base: &ExactConfig, p: &ExactParams, sink: &mut Sink) -> Result<Vec<StatReport>> {
    let runs = run_replicas(cfg.workers, cfg.replicas, |replica| run_exact(&ExactConfig { replica, ..base.clone() }))?
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let trajs: Vec<&Trajectory> = runs.iter().map(|r| &r.trajectory).collect();
    write_trajectories(sink, &trajs)?;
    let mut reports: Vec<StatReport> = trajs.iter().enumerate().map(|(i, t)| audit_report(t, i as u64)).collect();
    if p.audit {
        for (i, run) in runs.iter().enumerate() {
            let bad = run.emptiness_violations.unwrap_or(0);
            reports.push(
                StatReport::new("post_cascade_emptiness", bad as f64, 0.0, run.trajectory.events.len() as u64)
                    .detail("replica", i as u64)
                    .decide(bad == 0),
            );
        }
    }
    let owned: Vec<Trajectory> = trajs.iter().map(|t| (*t).clone()).collect();
    let table = ensemble_quantiles(&owned, &grid(p.horizon, p.grid_step))?;
    sink.text("quantiles.csv", &io::quantile_csv(&table))?;
    sink.jsonl("reports.jsonl", &reports)?;
    let entries: Vec<Value> = runs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            json!({
                "replica": i,
                "stream": [cfg.master_seed, i],
                "file": trajectory_file(i as u64),
                "horizon": p.horizon,
                "stop": r.stop,
                "final_mass": r.trajectory.final_mass(),
                "end_time": r.trajectory.end_time(),
                "initial_count": r.initial_count,
                "truncation_bound": r.truncation_bound,
                "hint_exceeded_at": r.hint_exceeded_at,
            })
        })
        .collect();
    sink.json(
        "manifest.json",
        &manifest(cfg, json!({ "sim_radius": base.sim_radius, "replicas": entries })),
    )?;
    Ok(reports)
}

fn simulate_box(cfg: &ExperimentConfig, base: &BoxConfig, p: &BoxParams, sink: &mut Sink) -> Result<Vec<StatReport>> {
    let runs = run_replicas(cfg.workers, cfg.replicas, |replica| run_box(&BoxConfig { replica, ..base.clone() }))?
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let trajs: Vec<&Trajectory> = runs.iter().map(|r| &r.trajectory).collect();
    write_trajectories(sink, &trajs)?;
    let reports: Vec<StatReport> = trajs.iter().enumerate().map(|(i, t)| audit_report(t, i as u64)).collect();
    let owned: Vec<Trajectory> = trajs.iter().map(|t| (*t).clone()).collect();
    let table = ensemble_quantiles(&owned, &grid(p.horizon, p.grid_step))?;
    sink.text("quantiles.csv", &io::quantile_csv(&table))?;
    sink.jsonl("reports.jsonl", &reports)?;
    let entries: Vec<Value> = runs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            json!({
                "replica": i,
                "stream": [cfg.master_seed, i],
                "file": trajectory_file(i as u64),
                "horizon": p.horizon,
                "stop": r.stop,
                "final_mass": r.trajectory.final_mass(),
                "end_time": r.trajectory.end_time(),
                "initial_count": r.initial_count,
                "truncation_bound": Value::Null,
            })
        })
        .collect();
    sink.json("manifest.json", &manifest(cfg, json!({ "replicas": entries })))?;
    Ok(reports)
}

fn branching(cfg: &ExperimentConfig, p: &BranchingParams, sink: &mut Sink) -> Result<Vec<StatReport>> {
    let mut table = String::from("lambda,q,p0,bound\n");
    for &lambda in &p.lambdas {
        let q = extinction_prob(lambda)?;
        let bound = if lambda > 1.0 { format!("{:?}", survival_lower_bound(lambda)?) } else { String::new() };
        table.push_str(&format!("{lambda:?},{q:?},{:?},{bound}\n", 1.0 - q));
    }
    sink.text("branching.csv", &table)?;
    let mut reports = Vec::new();
    let mut extra = serde_json::Map::new();
    if p.progeny_samples > 0 {
        let params = GwParams::new(1.0, 1.0)?;
        let mut rng = RngStream::for_replica(cfg.master_seed, 0, tags::PROGENY);
        let samples: Vec<u64> =
            (0..p.progeny_samples).map(|_| sample_total_progeny(&params, p.progeny_cap, &mut rng).0).collect();
        let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
        for &s in &samples {
            *hist.entry(s).or_default() += 1;
        }
        // with the seed as root, 1 + total progeny is Borel(1)
        let mut csv = String::from("n,count,borel\n");
        for (n, c) in hist {
            csv.push_str(&format!("{n},{c},{:?}\n", borel_pmf(n + 1)?));
        }
        sink.text("progeny.csv", &csv)?;
        if samples.len() >= 10_000 {
            reports.push(cascade_tail_fit(&samples)?);
        }
    }
    if let Some(c) = p.hazard_constant {
        let base = DominatingConfig {
            hazard_constant: c,
            step_count: p.steps,
            master_seed: cfg.master_seed,
            replica: 0,
            progeny_cap: p.progeny_cap,
        };
        base.validate().map_err(config_error)?;
        let trajs = run_replicas(cfg.workers, cfg.replicas, |replica| {
            dominating_trajectory(&DominatingConfig { replica, ..base })
        })?
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
        write_trajectories(sink, &trajs.iter().collect::<Vec<_>>())?;
        let entries: Vec<Value> = trajs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                json!({
                    "replica": i,
                    "stream": [cfg.master_seed, i],
                    "file": trajectory_file(i as u64),
                    "horizon": t.horizon,
                    "timing_ratio": pool_core::stats::report::num(timing_ratio(t, c)),
                    "final_mass": t.final_mass(),
                })
            })
            .collect();
        extra.insert("replicas".into(), Value::Array(entries));
        reports.extend(trajs.iter().enumerate().map(|(i, t)| audit_report(t, i as u64)));
    }
    if !reports.is_empty() {
        sink.jsonl("reports.jsonl", &reports)?;
    }
    sink.json("manifest.json", &manifest(cfg, Value::Object(extra)))?;
    Ok(reports)
}

fn estimate(cfg: &ExperimentConfig, name: &str, p: &EstimateParams, sink: &mut Sink) -> Result<Vec<StatReport>> {
    let seed = cfg.master_seed;
    let n = cfg.replicas;
    let mut parts: Vec<StatReport> = Vec::new();
    let report = pool(cfg.workers)?.install(|| -> Result<StatReport> {
        Ok(match p.clone() {
            EstimateParams::Kurtz { lambda, pool_radius, t, annuli, oracle_walkers } => {
                let mut k = KurtzParams::new(lambda, pool_radius, t, annuli, n);
                k.master_seed = seed;
                k.oracle_walkers = oracle_walkers;
                k.validate().map_err(config_error)?;
                kurtz_test(&k)?
            }
            EstimateParams::Hazard { radius, lambda, t_max, rate_samples } => hazard_estimate(&HazardParams {
                radius,
                lambda,
                replicas: n,
                t_max,
                master_seed: seed,
                rate_samples,
            })?,
            EstimateParams::HazardLinearity { radii, lambda, t_max, rate_samples } => {
                for radius in radii {
                    parts.push(hazard_estimate(&HazardParams {
                        radius,
                        lambda,
                        replicas: n,
                        t_max,
                        master_seed: seed,
                        rate_samples,
                    })?);
                }
                hazard_linearity(&parts)
            }
            EstimateParams::Refill { lambda, radius, t, probe } => {
                refill_density_estimate(&RefillParams { lambda, radius, t, probe, replicas: n, master_seed: seed })?
            }
            EstimateParams::Hitting { x_radius, k } => {
                hitting_prob_estimate(&HittingParams { x_radius, k, replicas: n, master_seed: seed })?
            }
            EstimateParams::Entered { lambda, k } => {
                entered_count_estimate(&EnteredParams { lambda, k, replicas: n, master_seed: seed })?
            }
            EstimateParams::Lln { n: terms } => exp_lln_check(WeightRule::InverseSqrt, terms, &mut lln_stream(seed))?,
            EstimateParams::Timing { hazard_constant, steps, progeny_cap } => {
                let c = DominatingConfig { hazard_constant, step_count: steps, master_seed: seed, replica: 0, progeny_cap };
                timing_identity_check(&c, n)?
            }
            EstimateParams::CascadeTail { offspring_mean, root_mean, cap } => {
                let params = GwParams::new(offspring_mean, root_mean)?;
                let mut rng = RngStream::for_replica(seed, 0, tags::PROGENY);
                let samples: Vec<u64> = (0..n).map(|_| sample_total_progeny(&params, cap, &mut rng).0).collect();
                cascade_tail_fit(&samples)?
            }
            EstimateParams::Volume { lambda, radius, delta, box_side, horizon } => {
                let times = grid(horizon, 1.0);
                let scans = pool_core::stats::walk::par_replicas(n, |i| {
                    free_field_snapshots(lambda, radius, box_side, &times, seed, i)
                        .map(|s| volume_deviation_scan(&s, lambda, radius, delta))
                });
                for (i, s) in scans.into_iter().enumerate() {
                    let mut s = s?;
                    s.set("replica", i as u64);
                    parts.push(s);
                }
                let bad = parts.iter().filter(|r| !r.passed()).count() as u64;
                let worst = parts.iter().filter_map(|r| r.get("worst_margin")).fold(f64::INFINITY, f64::min);
                StatReport::new("volume_deviation_scan", bad as f64, 0.0, n)
                    .detail("violating_replicas", bad)
                    .detail("worst_margin", pool_core::stats::report::num(worst))
                    .decide(bad == 0)
            }
        })
    })?;
    sink.json("report.json", &report)?;
    if !parts.is_empty() {
        sink.jsonl("components.jsonl", &parts)?;
    }
    sink.json("manifest.json", &manifest(cfg, json!({ "estimator": name })))?;
    let mut reports = parts;
    reports.push(report);
    Ok(reports)
}

/// Trajectories listed in a simulate manifest, in replica order.
pub fn load_run(dir: &Path) -> Result<Vec<Trajectory>> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let bad = |msg: &str| CliError::Format { path: path.clone(), msg: msg.into() };
    let m: Value = serde_json::from_str(&text).map_err(|e| bad(&e.to_string()))?;
    let entries = m["replicas"].as_array().ok_or_else(|| bad("no replica list"))?;
    entries
        .iter()
        .map(|e| {
            let file = e["file"].as_str().ok_or_else(|| bad("replica without file"))?;
            let horizon = e["horizon"].as_f64().ok_or_else(|| bad("replica without horizon"))?;
            io::read_trajectory_csv(&dir.join(file), horizon)
        })
        .collect()
}

fn analyze(cfg: &ExperimentConfig, name: &str, p: &AnalyzeParams, sink: &mut Sink) -> Result<Vec<StatReport>> {
    let trajs = load_run(&p.input_dir)?;
    if trajs.is_empty() {
        return Err(CliError::Runtime(format!("{}: run has no trajectories", p.input_dir.display())));
    }
    let horizon = trajs.iter().map(|t| t.horizon).fold(0.0, f64::max);
    let mut reports = Vec::new();
    match name {
        "mass_audit" => {
            reports.extend(trajs.iter().enumerate().map(|(i, t)| audit_report(t, i as u64)));
        }
        "growth_exponent" => {
            let t_max = p.t_max.unwrap_or(horizon);
            for (i, t) in trajs.iter().enumerate() {
                let mut r = growth_exponent_fit(t, p.t_min, t_max).unwrap_or_else(|e| {
                    StatReport::new("growth_exponent_fit", f64::NAN, f64::INFINITY, 0)
                        .detail("reason", e.to_string())
                        .verdict(Verdict::Inconclusive)
                });
                r.set("replica", i as u64);
                reports.push(r);
            }
            let times = grid(t_max, p.grid_step);
            let q = ensemble_quantiles(&trajs, &times)?;
            let median = StepPath { initial: q.q50[0], times: q.times, values: q.q50, end: t_max };
            let mut r = growth_exponent_path(&median, p.t_min, t_max, 64)?;
            r.name = "growth_exponent_median".into();
            reports.push(r);
        }
        "stall" => {
            let params = match p.beta {
                Some(beta) => StallParams { alpha: p.alpha, beta, t0: p.t0 },
                None => StallParams::from_alpha(p.alpha, p.t0).map_err(config_error)?,
            };
            params.validate().map_err(config_error)?;
            let mut csv = String::from("replica,t1,verified\n");
            for (i, t) in trajs.iter().enumerate() {
                match find_stall(t, &params)? {
                    Some(t1) => {
                        let ok = is_stall(&StepPath::from_trajectory(t), t1, params.beta);
                        csv.push_str(&format!("{i},{t1:?},{ok}\n"));
                    }
                    None => csv.push_str(&format!("{i},,\n")),
                }
            }
            sink.text("stall.csv", &csv)?;
        }
        "quantiles" => {
            let q = ensemble_quantiles(&trajs, &grid(p.t_max.unwrap_or(horizon), p.grid_step))?;
            sink.text("quantiles.csv", &io::quantile_csv(&q))?;
        }
        _ => unreachable!("name checked against ANALYSES"),
    }
    if !reports.is_empty() {
        sink.jsonl("reports.jsonl", &reports)?;
    }
    sink.json("manifest.json", &manifest(cfg, json!({ "analysis": name, "trajectories": trajs.len() })))?;
    Ok(reports)
}
