//! JSON experiment configs, single runs, sweeps and their output files.
//!
//! Output files:
//!
//! * `trajectory.csv`: `t, agent, x0..x{n-1}[, chi0..chi{n-1}]`
//! * `events.csv`: `agent, t, f_before` (empty `f_before` for the initial
//!   broadcast)
//! * `weights.csv`: `t, i, j, c` with `i < j`
//! * `summary.json`
//!
//! Floats are written with 17 significant digits.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{self, BoundStatus, ZenoContext};
use crate::engine::{self, Disturbance, DisturbanceKind, EventKind, SimConfig, Solver, Trajectory, Variant};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{GainSet, SystemModel};
use crate::protocols::{EdgeMap, ProtocolParams};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ETCON_OUT_DIR";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub graph: GraphSpec,
    #[serde(default)]
    pub protocol: ProtocolSpec,
    #[serde(default)]
    pub sim: SimSpec,
    pub initial_states: InitialStates,
    #[serde(default)]
    pub initial_observer: Option<InitialStates>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub c: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    #[serde(default)]
    pub generator: Option<String>,
    pub n: usize,
    #[serde(default)]
    pub edges: Option<Vec<[usize; 2]>>,
    #[serde(default)]
    pub leader: Option<usize>,
}

impl GraphSpec {
    pub fn build(&self) -> Result<Graph> {
        match (&self.generator, &self.edges) {
            (Some(g), None) => Graph::from_generator(g, self.n, self.leader),
            (None, Some(e)) => {
                let pairs: Vec<(usize, usize)> = e.iter().map(|p| (p[0], p[1])).collect();
                Graph::new(self.n, &pairs, self.leader)
            }
            _ => Err(Error::Config("graph needs exactly one of `generator` or `edges`".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VariantSpec {
    #[default]
    State,
    Observer,
    LeaderFollower,
}

impl From<VariantSpec> for Variant {
    fn from(v: VariantSpec) -> Self {
        match v {
            VariantSpec::State => Variant::State,
            VariantSpec::Observer => Variant::Observer,
            VariantSpec::LeaderFollower => Variant::LeaderFollower,
        }
    }
}

/// A scalar for every edge, or a default with per-edge overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeValue {
    Scalar(f64),
    PerEdge(PerEdge),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerEdge {
    pub default: f64,
    #[serde(default)]
    pub edges: Vec<(usize, usize, f64)>,
}

impl EdgeValue {
    fn to_map(&self) -> EdgeMap {
        match self {
            EdgeValue::Scalar(v) => EdgeMap::uniform(*v),
            EdgeValue::PerEdge(p) => {
                let mut m = EdgeMap::uniform(p.default);
                for &(i, j, v) in &p.edges {
                    m.set(i, j, v);
                }
                m
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    #[serde(default)]
    pub variant: VariantSpec,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_kappa")]
    pub kappa: EdgeValue,
    #[serde(default = "zero_edge")]
    pub varrho: EdgeValue,
    #[serde(default = "zero_edge")]
    pub c0: EdgeValue,
}

fn default_delta() -> f64 {
    1.0
}
fn default_mu() -> f64 {
    2.0
}
fn default_nu() -> f64 {
    0.5
}
fn default_kappa() -> EdgeValue {
    EdgeValue::Scalar(0.2)
}
fn zero_edge() -> EdgeValue {
    EdgeValue::Scalar(0.0)
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        Self {
            variant: VariantSpec::State,
            delta: default_delta(),
            mu: default_mu(),
            nu: default_nu(),
            kappa: default_kappa(),
            varrho: zero_edge(),
            c0: zero_edge(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum DisturbanceSpec {
    Constant {
        amplitude: f64,
    },
    Sinusoid {
        amplitude: f64,
        /// Angular frequency in rad/s.
        #[serde(default = "one")]
        frequency: f64,
    },
    UniformRandom {
        amplitude: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledGraph {
    pub t: f64,
    pub graph: GraphSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum ScheduleSpec {
    Explicit(Vec<ScheduledGraph>),
    /// At `k * period` the network switches to `graphs[k % len]`.
    Periodic { period: f64, graphs: Vec<GraphSpec> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_event_tol")]
    pub event_tol: f64,
    #[serde(default = "default_solver")]
    pub solver: String,
    #[serde(default = "default_rk45_tol")]
    pub rk45_tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub disturbance: Option<DisturbanceSpec>,
    #[serde(default)]
    pub topology_schedule: Option<ScheduleSpec>,
    #[serde(default = "default_dwell")]
    pub dwell_min: f64,
    #[serde(default = "default_max_events")]
    pub max_events_per_unit_time: f64,
    #[serde(default)]
    pub dense_sampling: bool,
}

fn default_t_end() -> f64 {
    30.0
}
fn default_dt() -> f64 {
    1e-3
}
fn default_event_tol() -> f64 {
    SimConfig::default().event_tol
}
fn default_solver() -> String {
    "rk4".into()
}
fn default_rk45_tol() -> f64 {
    SimConfig::default().rk45_tol
}
fn default_dwell() -> f64 {
    SimConfig::default().dwell_min
}
fn default_max_events() -> f64 {
    1e4
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            t_end: default_t_end(),
            dt: default_dt(),
            event_tol: default_event_tol(),
            solver: default_solver(),
            rk45_tol: default_rk45_tol(),
            seed: 0,
            disturbance: None,
            topology_schedule: None,
            dwell_min: default_dwell(),
            max_events_per_unit_time: default_max_events(),
            dense_sampling: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum InitialStates {
    Explicit(Vec<Vec<f64>>),
    Random {
        seed: u64,
        #[serde(default = "minus_one")]
        low: f64,
        #[serde(default = "one")]
        high: f64,
    },
}

fn minus_one() -> f64 {
    -1.0
}

impl InitialStates {
    pub fn build(&self, agents: usize, n: usize) -> Result<Vec<DVector<f64>>> {
        match self {
            InitialStates::Explicit(rows) => {
                if rows.len() != agents || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Config(format!(
                        "explicit initial states must be {agents} rows of length {n}"
                    )));
                }
                Ok(rows.iter().map(|r| DVector::from_row_slice(r)).collect())
            }
            InitialStates::Random { seed, low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(Error::Config(format!("random range [{low}, {high}] is empty")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok((0..agents)
                    .map(|_| DVector::from_fn(n, |_, _| rng.random_range(*low..*high)))
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub trajectory: bool,
    #[serde(default = "yes")]
    pub events: bool,
    #[serde(default = "yes")]
    pub weights: bool,
    /// Write every k-th stored snapshot to the time-series files.
    #[serde(default = "every_one")]
    pub every: usize,
}

fn yes() -> bool {
    true
}
fn every_one() -> usize {
    1
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: None,
            trajectory: true,
            events: true,
            weights: true,
            every: 1,
        }
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("matrix `{name}` must be a non-empty rectangular array")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A fully validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: SystemModel,
    pub graph: Graph,
    pub params: ProtocolParams,
    pub sim: SimConfig,
    pub variant: Variant,
    pub x0: Vec<DVector<f64>>,
    pub chi0: Option<Vec<DVector<f64>>>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn sim_config(&self, graph: &Graph) -> Result<SimConfig> {
        let s = &self.sim;
        let solver = match s.solver.as_str() {
            "rk4" => Solver::Rk4,
            "rk45-adaptive" => Solver::Rk45Adaptive,
            other => return Err(Error::Config(format!("unknown solver `{other}`"))),
        };
        let disturbance = s.disturbance.as_ref().map(|d| match *d {
            DisturbanceSpec::Constant { amplitude } => Disturbance {
                amplitude,
                kind: DisturbanceKind::Constant,
            },
            DisturbanceSpec::Sinusoid { amplitude, frequency } => Disturbance {
                amplitude,
                kind: DisturbanceKind::Sinusoid { omega: frequency },
            },
            DisturbanceSpec::UniformRandom { amplitude, seed } => Disturbance {
                amplitude,
                kind: DisturbanceKind::UniformRandom {
                    seed: seed.unwrap_or(s.seed),
                },
            },
        });
        let topology_schedule = match &s.topology_schedule {
            None => Vec::new(),
            Some(ScheduleSpec::Explicit(list)) => list
                .iter()
                .map(|sg| Ok((sg.t, sg.graph.build()?)))
                .collect::<Result<_>>()?,
            Some(ScheduleSpec::Periodic { period, graphs }) => {
                if !(period.is_finite() && *period > 0.0) || graphs.is_empty() {
                    return Err(Error::Config("periodic schedule needs a positive period and graphs".into()));
                }
                let built: Vec<Graph> = graphs.iter().map(GraphSpec::build).collect::<Result<_>>()?;
                let mut out = Vec::new();
                let mut k = 1usize;
                while (k as f64) * period < s.t_end {
                    out.push(((k as f64) * period, built[k % built.len()].clone()));
                    k += 1;
                }
                out
            }
        };
        for (_, g) in &topology_schedule {
            if g.n_nodes() != graph.n_nodes() {
                return Err(Error::Config("scheduled graphs must keep the node count".into()));
            }
        }
        Ok(SimConfig {
            t_end: s.t_end,
            dt: s.dt,
            event_tol: s.event_tol,
            solver,
            rk45_tol: s.rk45_tol,
            disturbance,
            topology_schedule,
            dwell_min: s.dwell_min,
            max_events_per_unit_time: s.max_events_per_unit_time,
            dense_sampling: s.dense_sampling,
        })
    }

    pub fn model(&self) -> Result<SystemModel> {
        let a = matrix("a", &self.model.a)?;
        let b = matrix("b", &self.model.b)?;
        match &self.model.c {
            Some(c) => SystemModel::new(a, b, matrix("c", c)?),
            None => SystemModel::full_state(a, b),
        }
    }

    pub fn build(&self) -> Result<Experiment> {
        let model = self.model()?;
        let graph = self.graph.build()?;
        let p = &self.protocol;
        let params = ProtocolParams {
            delta: p.delta,
            mu: p.mu,
            nu: p.nu,
            kappa: p.kappa.to_map(),
            varrho: p.varrho.to_map(),
            c0: p.c0.to_map(),
        };
        params.validate()?;
        let variant: Variant = p.variant.into();
        if variant == Variant::Observer && self.model.c.is_none() {
            return Err(Error::Config("observer variant needs an output matrix `c`".into()));
        }
        let sim = self.sim_config(&graph)?;
        let n = model.n_states();
        let x0 = self.initial_states.build(graph.n_nodes(), n)?;
        let chi0 = match (variant, &self.initial_observer) {
            (Variant::Observer, Some(init)) => Some(init.build(graph.n_nodes(), n)?),
            (Variant::Observer, None) => Some(vec![DVector::zeros(n); graph.n_nodes()]),
            (_, Some(_)) => {
                return Err(Error::Config("`initial_observer` is only valid for the observer variant".into()))
            }
            (_, None) => None,
        };
        if self.outputs.every == 0 {
            return Err(Error::Config("outputs.every must be at least 1".into()));
        }
        Ok(Experiment {
            config: self.clone(),
            model,
            graph,
            params,
            sim,
            variant,
            x0,
            chi0,
        })
    }
}

impl Experiment {
    pub fn gains(&self) -> Result<GainSet> {
        GainSet::design(&self.model, self.variant == Variant::Observer)
    }

    pub fn simulate(&self, gains: &GainSet) -> Result<Trajectory> {
        engine::simulate(
            &self.model,
            &self.graph,
            gains,
            &self.params,
            &self.sim,
            &self.x0,
            self.chi0.as_deref(),
            self.variant,
        )
    }

    /// Bound on `||w_i||` used by the inter-event check.
    pub fn disturbance_bound(&self) -> f64 {
        self.sim
            .disturbance
            .map_or(0.0, |d| d.amplitude * (self.model.n_states() as f64).sqrt())
    }
}

/// Outcome of one run, as written to `summary.json`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub gains: GainSet,
    pub trajectory: Trajectory,
    pub summary: Value,
}

pub fn gains_json(g: &GainSet) -> Value {
    json!({
        "P": matrix_rows(&g.p),
        "K": matrix_rows(&g.k),
        "Gamma": matrix_rows(&g.gamma),
        "F": g.f.as_ref().map(matrix_rows),
    })
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, |x| json!(x))
}

/// Summary of a finished run.
pub fn summarize(exp: &Experiment, gains: &GainSet, traj: &Trajectory) -> Result<Value> {
    let stats = analysis::event_stats(traj);
    let series = analysis::error_series(traj);
    let ultimate = match exp.variant {
        Variant::LeaderFollower => json!({
            "available": false,
            "reason": "ultimate bound applies to the leaderless protocols only",
        }),
        _ if !exp.sim.topology_schedule.is_empty() => json!({
            "available": false,
            "reason": "ultimate bound is stated for a fixed graph",
        }),
        _ => match analysis::theorem1_bound(&exp.graph, &exp.params, &gains.p)? {
            BoundStatus::Available(c) => json!({
                "available": true,
                "alpha": c.alpha,
                "theta2": c.theta2,
                "varsigma": c.varsigma,
                "rho": c.rho,
                "bound": c.bound,
                "lambda2": c.lambda2,
                "lambda_max_p": c.lambda_max_p,
            }),
            BoundStatus::Unavailable(reason) => json!({ "available": false, "reason": reason }),
        },
    };
    let zeno = analysis::zeno_bound(
        &ZenoContext {
            model: &exp.model,
            gains,
            params: &exp.params,
            disturbance_bound: exp.disturbance_bound(),
        },
        traj,
    )?;
    let violations = zeno.violations().count();
    Ok(json!({
        "variant": exp.variant.name(),
        "n_agents": traj.n_agents(),
        "t_end": exp.sim.t_end,
        "gains": gains_json(gains),
        "events": {
            "total": stats.total,
            "triggered": traj.count_kind(EventKind::Triggered),
            "switch": traj.count_kind(EventKind::Switch),
            "forced": traj.count_kind(EventKind::Forced),
            "per_agent": stats.per_agent.iter().map(|a| a.count).collect::<Vec<_>>(),
            "min_interval": opt(stats.global_min_interval),
            "mean_interval_per_agent": stats.per_agent.iter().map(|a| opt(a.mean_interval)).collect::<Vec<_>>(),
        },
        "initial_error": series.first().map(|p| p.1),
        "final_error": analysis::final_error(traj)?,
        "ultimate_bound": ultimate,
        "zeno": {
            "verdict": if violations == 0 { "pass" } else { "fail" },
            "checked_intervals": zeno.intervals.len(),
            "violations": violations,
            "min_ratio": opt(zeno.min_ratio()),
            "c_bar": zeno.c_bar,
        },
        "grid_spacing": exp.sim.dt,
        "event_tol": exp.sim.event_tol,
        "localization_residual": traj.localization_residual,
    }))
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_trajectory(path: &Path, traj: &Trajectory, every: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let first = &traj.snapshots[0];
    let n = first.x[0].len();
    let mut header = vec!["t".to_string(), "agent".to_string()];
    header.extend((0..n).map(|k| format!("x{k}")));
    if first.chi.is_some() {
        header.extend((0..n).map(|k| format!("chi{k}")));
    }
    w.write_record(&header)?;
    for s in traj.snapshots.iter().step_by(every) {
        for (i, x) in s.x.iter().enumerate() {
            let mut rec = vec![fmt(s.t), i.to_string()];
            rec.extend(x.iter().map(|v| fmt(*v)));
            if let Some(chi) = &s.chi {
                rec.extend(chi[i].iter().map(|v| fmt(*v)));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_events(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["agent", "t", "f_before"])?;
    for e in &traj.events {
        w.write_record([
            e.agent.to_string(),
            fmt(e.time),
            e.trigger_value_before.map(fmt).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_weights(path: &Path, traj: &Trajectory, every: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "i", "j", "c"])?;
    for s in traj.snapshots.iter().step_by(every) {
        for (&(i, j), c) in traj.graphs[s.graph].edges().iter().zip(&s.c) {
            w.write_record([fmt(s.t), i.to_string(), j.to_string(), fmt(*c)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Run an experiment and write its outputs into `out_dir`.
pub fn run(exp: &Experiment, out_dir: &Path) -> Result<RunOutcome> {
    let gains = exp.gains()?;
    let trajectory = exp.simulate(&gains)?;
    let summary = summarize(exp, &gains, &trajectory)?;
    fs::create_dir_all(out_dir)?;
    let o = &exp.config.outputs;
    if o.trajectory {
        write_trajectory(&out_dir.join("trajectory.csv"), &trajectory, o.every)?;
    }
    if o.events {
        write_events(&out_dir.join("events.csv"), &trajectory)?;
    }
    if o.weights {
        write_weights(&out_dir.join("weights.csv"), &trajectory, o.every)?;
    }
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(RunOutcome {
        gains,
        trajectory,
        summary,
    })
}

/// Output directory: explicit argument, then the config, then the
/// environment, then `./out`.
pub fn resolve_out_dir(cli: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| cfg.outputs.dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Human-readable gain matrices, four decimals.
pub fn format_gains(g: &GainSet) -> String {
    let mut out = String::new();
    let mut block = |name: &str, m: &DMatrix<f64>| {
        out.push_str(name);
        out.push_str(" =\n");
        for row in m.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>10.4}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
    };
    block("P", &g.p);
    block("K", &g.k);
    block("Gamma", &g.gamma);
    if let Some(f) = &g.f {
        block("F", f);
    }
    out
}

const SHORT_PARAMS: &[(&str, &str)] = &[
    ("delta", "protocol.delta"),
    ("mu", "protocol.mu"),
    ("nu", "protocol.nu"),
    ("kappa", "protocol.kappa"),
    ("varrho", "protocol.varrho"),
    ("c0", "protocol.c0"),
    ("variant", "protocol.variant"),
    ("graph", "graph.generator"),
    ("n", "graph.n"),
    ("dt", "sim.dt"),
    ("event_tol", "sim.event_tol"),
    ("t_end", "sim.t_end"),
    ("seed", "initial_states.random.seed"),
];

fn parse_value(raw: &str) -> Value {
    serde_json::from_str::<Value>(raw)
        .ok()
        .filter(|v| v.is_number() || v.is_boolean())
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("sweep path `{path}` does not name an object field")))?;
        if k + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| json!({}));
    }
    Ok(())
}

/// One config per sweep value; `param` is a short name or a dotted path.
pub fn sweep_configs(cfg: &ExperimentConfig, param: &str, values: &[String]) -> Result<Vec<ExperimentConfig>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let path = SHORT_PARAMS
        .iter()
        .find(|(k, _)| *k == param)
        .map_or(param, |(_, p)| *p);
    let base = serde_json::to_value(cfg)?;
    values
        .iter()
        .map(|raw| {
            let mut v = base.clone();
            set_path(&mut v, path, parse_value(raw))?;
            if path == "graph.generator" {
                if let Some(g) = v.get_mut("graph").and_then(Value::as_object_mut) {
                    g.remove("edges");
                }
            }
            serde_json::from_value(v).map_err(|e| Error::Config(format!("sweep value `{raw}`: {e}")))
        })
        .collect()
}

fn dir_name(param: &str, value: &str) -> String {
    let clean: String = format!("{param}={value}")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "=.-_".contains(c) { c } else { '_' })
        .collect();
    clean
}

/// Run every sweep point in parallel; each gets its own subdirectory and the
/// combined table goes to `sweep_summary.json`.
pub fn sweep(cfg: &ExperimentConfig, param: &str, values: &[String], out_dir: &Path) -> Result<Value> {
    let configs = sweep_configs(cfg, param, values)?;
    let experiments: Vec<Experiment> = configs.iter().map(ExperimentConfig::build).collect::<Result<_>>()?;
    let rows: Vec<Value> = experiments
        .par_iter()
        .zip(values.par_iter())
        .map(|(exp, raw)| {
            let outcome = run(exp, &out_dir.join(dir_name(param, raw)))?;
            let s = &outcome.summary;
            Ok(json!({
                "value": raw,
                "events": s["events"]["total"],
                "triggered": s["events"]["triggered"],
                "min_interval": s["events"]["min_interval"],
                "final_error": s["final_error"],
                "zeno_verdict": s["zeno"]["verdict"],
                "zeno_min_ratio": s["zeno"]["min_ratio"],
            }))
        })
        .collect::<Result<_>>()?;
    let table = json!({ "param": param, "runs": rows });
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("sweep_summary.json"), serde_json::to_string_pretty(&table)?)?;
    Ok(table)
}
