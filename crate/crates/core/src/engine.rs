//! Hybrid simulation: continuous flow of states, observer states and edge
//! weights between events, with event localization, broadcasts and resets.

use std::cell::Cell;
use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{AgentRuntime, BroadcastSample};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{matrix_exponential, GainSet, SystemModel};
use crate::protocols::{self, NeighborLink, ProtocolParams, TriggerRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    State,
    Observer,
    LeaderFollower,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::State => "state",
            Variant::Observer => "observer",
            Variant::LeaderFollower => "leader_follower",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Rk4,
    Rk45Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisturbanceKind {
    Constant,
    /// `sin(omega t + 2 pi i / N)` in every state component of agent `i`.
    Sinusoid { omega: f64 },
    /// Uniform in `[-1, 1]` per component, held over each base step.
    UniformRandom { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disturbance {
    pub amplitude: f64,
    pub kind: DisturbanceKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub event_tol: f64,
    pub solver: Solver,
    /// Relative and absolute tolerance of the adaptive solver.
    pub rk45_tol: f64,
    pub disturbance: Option<Disturbance>,
    /// `(switch time, graph)` pairs in increasing time order.
    pub topology_schedule: Vec<(f64, Graph)>,
    pub dwell_min: f64,
    pub max_events_per_unit_time: f64,
    /// Force every agent to broadcast at every base grid point.
    pub dense_sampling: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_end: 30.0,
            dt: 1e-3,
            event_tol: 1e-14,
            solver: Solver::Rk4,
            rk45_tol: 1e-10,
            disturbance: None,
            topology_schedule: Vec::new(),
            dwell_min: 1e-3,
            max_events_per_unit_time: 1e4,
            dense_sampling: false,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParam(format!("{name} must be positive, got {v}")))
            }
        };
        pos("t_end", self.t_end)?;
        pos("dt", self.dt)?;
        pos("event_tol", self.event_tol)?;
        pos("rk45_tol", self.rk45_tol)?;
        pos("dwell_min", self.dwell_min)?;
        pos("max_events_per_unit_time", self.max_events_per_unit_time)?;
        if self.event_tol > self.dt {
            return Err(Error::InvalidParam(format!(
                "event_tol {} exceeds dt {}",
                self.event_tol, self.dt
            )));
        }
        if let Some(d) = &self.disturbance {
            if !(d.amplitude.is_finite() && d.amplitude >= 0.0) {
                return Err(Error::InvalidParam("disturbance amplitude must be nonnegative".into()));
            }
            if let DisturbanceKind::Sinusoid { omega } = d.kind {
                if !omega.is_finite() {
                    return Err(Error::InvalidParam("sinusoid frequency must be finite".into()));
                }
            }
        }
        let mut last = 0.0;
        for (ts, _) in &self.topology_schedule {
            if !ts.is_finite() || *ts - last < self.dwell_min {
                return Err(Error::InvalidParam(format!(
                    "switch at t = {ts} violates the dwell time {} (previous switch at {last})",
                    self.dwell_min
                )));
            }
            last = *ts;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Broadcast of the initial state at t = 0.
    Initial,
    /// Trigger function reached zero.
    Triggered,
    /// Network-wide broadcast at a topology switch.
    Switch,
    /// Broadcast forced by dense sampling.
    Forced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub agent: usize,
    pub time: f64,
    pub sample: BroadcastSample,
    /// Trigger value just before the reset; `None` for initial broadcasts and
    /// for the leader.
    pub trigger_value_before: Option<f64>,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub x: Vec<DVector<f64>>,
    pub chi: Option<Vec<DVector<f64>>>,
    /// Edge weights in the edge order of `graphs[graph]`.
    pub c: Vec<f64>,
    pub graph: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub variant: Variant,
    pub dt: f64,
    pub event_tol: f64,
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<EventRecord>,
    pub graphs: Vec<Graph>,
    /// Activation time of each entry of `graphs`.
    pub graph_times: Vec<f64>,
    /// Largest `|f|` at a localized trigger instant.
    pub localization_residual: f64,
}

impl Trajectory {
    pub fn n_agents(&self) -> usize {
        self.snapshots[0].x.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory always holds the initial snapshot")
    }

    pub fn events_of(&self, agent: usize) -> impl Iterator<Item = &EventRecord> + '_ {
        self.events.iter().filter(move |e| e.agent == agent)
    }

    pub fn count_kind(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Latest sample of `agent` stamped at or before `t` (strictly before if
    /// `strict`).
    pub fn sample_at(&self, agent: usize, t: f64, strict: bool) -> Option<&BroadcastSample> {
        self.events
            .iter()
            .rev()
            .filter(|e| e.agent == agent)
            .find(|e| if strict { e.time < t } else { e.time <= t })
            .map(|e| &e.sample)
    }
}

/// Bisection for the first time `f` reaches zero inside `[lo, hi]`.
///
/// Requires `f(lo) < 0 <= f(hi)`; returns a time within `tol` of the crossing
/// at which `f >= 0`.
pub fn locate_event<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut lo, mut hi) = (lo, hi);
    let (f_lo, f_hi) = (f(lo)?, f(hi)?);
    if !(f_lo < 0.0 && f_hi >= 0.0) {
        return Err(Error::Bracket {
            t_lo: lo,
            t_hi: hi,
            f_lo,
            f_hi,
        });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

struct Layout {
    n: usize,
    agents: usize,
    observer: bool,
}

impl Layout {
    fn x(&self, i: usize) -> usize {
        i * self.n
    }

    fn chi(&self, i: usize) -> usize {
        (self.agents + i) * self.n
    }

    fn c(&self, e: usize) -> usize {
        self.agents * self.n * if self.observer { 2 } else { 1 } + e
    }

    fn len(&self, edges: usize) -> usize {
        self.c(edges)
    }
}

struct Engine<'a> {
    model: &'a SystemModel,
    gains: &'a GainSet,
    params: &'a ProtocolParams,
    sim: &'a SimConfig,
    variant: Variant,
    layout: Layout,
    graph: Graph,
    graph_idx: usize,
    kappa: Vec<f64>,
    varrho: Vec<f64>,
    runtime: Vec<AgentRuntime>,
    /// Last weight of every edge absent from the current graph.
    dormant: BTreeMap<(usize, usize), f64>,
    events: Vec<EventRecord>,
    recent: Vec<VecDeque<f64>>,
    localization_residual: f64,
    phi_half: DMatrix<f64>,
    phi_full: DMatrix<f64>,
    w_step: Vec<DVector<f64>>,
    rng: Option<ChaCha8Rng>,
    h_adapt: Cell<f64>,
}

impl<'a> Engine<'a> {
    fn is_leader(&self, i: usize) -> bool {
        self.variant == Variant::LeaderFollower && self.graph.is_leader(i)
    }

    fn rule(&self) -> TriggerRule {
        if self.variant == Variant::LeaderFollower {
            TriggerRule::LeaderFollower
        } else {
            TriggerRule::Leaderless
        }
    }

    fn set_graph(&mut self, graph: Graph) {
        self.kappa = graph
            .edges()
            .iter()
            .map(|&(a, b)| self.params.kappa.get(a, b))
            .collect();
        self.varrho = graph
            .edges()
            .iter()
            .map(|&(a, b)| self.params.varrho.get(a, b))
            .collect();
        self.graph = graph;
    }

    fn phi(&self, tau: f64) -> Result<DMatrix<f64>> {
        if tau == 0.0 {
            Ok(DMatrix::identity(self.layout.n, self.layout.n))
        } else if tau == self.sim.dt {
            Ok(self.phi_full.clone())
        } else if tau == 0.5 * self.sim.dt {
            Ok(self.phi_half.clone())
        } else {
            matrix_exponential(&self.model.a, tau)
        }
    }

    /// Broadcast estimates of every agent at `t`.
    fn anchors(&self, t: f64) -> Result<Vec<DVector<f64>>> {
        self.runtime
            .iter()
            .map(|rt| crate::dynamics::propagate_estimate(&self.model.a, &rt.own_sample, t))
            .collect()
    }

    fn advance_estimates(&self, anchors: &[DVector<f64>], tau: f64) -> Result<Vec<DVector<f64>>> {
        let phi = self.phi(tau)?;
        Ok(anchors.iter().map(|v| &phi * v).collect())
    }

    fn broadcast_value(&self, y: &DVector<f64>, i: usize) -> DVector<f64> {
        let n = self.layout.n;
        let off = if self.layout.observer {
            self.layout.chi(i)
        } else {
            self.layout.x(i)
        };
        y.rows(off, n).into_owned()
    }

    fn links<'e>(&self, i: usize, y: &DVector<f64>, est: &'e [DVector<f64>]) -> Vec<NeighborLink<'e>> {
        self.graph
            .neighbors(i)
            .iter()
            .map(|&(j, e)| NeighborLink {
                weight: y[self.layout.c(e)],
                estimate: &est[j],
                to_leader: self.is_leader(j),
            })
            .collect()
    }

    fn trigger(&self, i: usize, t: f64, y: &DVector<f64>, est: &[DVector<f64>]) -> f64 {
        let e = &est[i] - self.broadcast_value(y, i);
        let links = self.links(i, y, est);
        protocols::trigger_value(self.rule(), &e, &est[i], &links, self.params, &self.gains.gamma, t)
    }

    fn disturbance(&self, i: usize, t: f64) -> Option<DVector<f64>> {
        let d = self.sim.disturbance?;
        if self.is_leader(i) {
            return None;
        }
        let n = self.layout.n;
        Some(match d.kind {
            DisturbanceKind::Constant => DVector::from_element(n, d.amplitude),
            DisturbanceKind::Sinusoid { omega } => {
                let phase = std::f64::consts::TAU * i as f64 / self.layout.agents as f64;
                DVector::from_element(n, d.amplitude * (omega * t + phase).sin())
            }
            DisturbanceKind::UniformRandom { .. } => &self.w_step[i] * d.amplitude,
        })
    }

    fn rhs(&self, t: f64, y: &DVector<f64>, est: &[DVector<f64>]) -> DVector<f64> {
        let l = &self.layout;
        let n = l.n;
        let mut dy = DVector::zeros(y.len());
        for i in 0..l.agents {
            let x = y.rows(l.x(i), n);
            let u = if self.is_leader(i) {
                DVector::zeros(self.model.n_inputs())
            } else {
                protocols::control(&self.gains.k, &est[i], &self.links(i, y, est))
            };
            let mut dx = &self.model.a * x + &self.model.b * &u;
            if let Some(w) = self.disturbance(i, t) {
                dx += w;
            }
            dy.rows_mut(l.x(i), n).copy_from(&dx);
            if l.observer {
                let f = self.gains.f.as_ref().expect("observer gain checked at start");
                let chi = y.rows(l.chi(i), n).into_owned();
                let out = &self.model.c * x;
                let dchi = protocols::observer_rate(self.model, &chi, &u, &out, f);
                dy.rows_mut(l.chi(i), n).copy_from(&dchi);
            }
        }
        for (e, &(a, b)) in self.graph.edges().iter().enumerate() {
            let diff = &est[a] - &est[b];
            dy[l.c(e)] = protocols::weight_rate(
                self.kappa[e],
                self.varrho[e],
                y[l.c(e)],
                &diff,
                &self.gains.gamma,
            );
        }
        dy
    }

    fn rk4(&self, t0: f64, y0: &DVector<f64>, h: f64, anchors: &[DVector<f64>]) -> Result<DVector<f64>> {
        let est_mid = self.advance_estimates(anchors, 0.5 * h)?;
        let est_end = self.advance_estimates(anchors, h)?;
        let k1 = self.rhs(t0, y0, anchors);
        let k2 = self.rhs(t0 + 0.5 * h, &(y0 + &k1 * (0.5 * h)), &est_mid);
        let k3 = self.rhs(t0 + 0.5 * h, &(y0 + &k2 * (0.5 * h)), &est_mid);
        let k4 = self.rhs(t0 + h, &(y0 + &k3 * h), &est_end);
        Ok(y0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
    }

    fn dopri(&self, t0: f64, y0: &DVector<f64>, span: f64, anchors: &[DVector<f64>]) -> Result<DVector<f64>> {
        const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
        const A: [[f64; 6]; 7] = [
            [0.0; 6],
            [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
            [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
            [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
            [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
        ];
        const E: [f64; 7] = [
            35.0 / 384.0 - 5179.0 / 57600.0,
            0.0,
            500.0 / 1113.0 - 7571.0 / 16695.0,
            125.0 / 192.0 - 393.0 / 640.0,
            -2187.0 / 6784.0 + 92097.0 / 339200.0,
            11.0 / 84.0 - 187.0 / 2100.0,
            -1.0 / 40.0,
        ];
        let tol = self.sim.rk45_tol;
        let t_end = t0 + span;
        let mut t = t0;
        let mut y = y0.clone();
        let mut h = self.h_adapt.get().min(span);
        while t < t_end {
            let last = t + h >= t_end;
            if last {
                h = t_end - t;
            }
            if h <= 1e-14 * t_end.abs().max(1.0) && !last {
                return Err(Error::StepUnderflow(t));
            }
            let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
            for s in 0..7 {
                let mut ys = y.clone();
                for (r, kr) in k.iter().enumerate() {
                    if A[s][r] != 0.0 {
                        ys.axpy(h * A[s][r], kr, 1.0);
                    }
                }
                let ts = t + C[s] * h;
                let est = self.advance_estimates(anchors, ts - t0)?;
                k.push(self.rhs(ts, &ys, &est));
            }
            let mut y_new = y.clone();
            for (r, kr) in k.iter().enumerate().take(6) {
                y_new.axpy(h * A[6][r], kr, 1.0);
            }
            let mut err = 0.0f64;
            for idx in 0..y.len() {
                let mut e = 0.0;
                for (r, kr) in k.iter().enumerate() {
                    e += E[r] * kr[idx];
                }
                let scale = tol + tol * y[idx].abs().max(y_new[idx].abs());
                err = err.max((h * e).abs() / scale);
            }
            if !err.is_finite() {
                return Err(Error::NonFiniteState(t));
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                t = if last { t_end } else { t + h };
                y = y_new;
                if !last {
                    self.h_adapt.set(h * factor);
                }
                h *= factor;
            } else {
                h *= factor;
            }
        }
        Ok(y)
    }

    fn integrate(&self, t0: f64, y0: &DVector<f64>, h: f64, anchors: &[DVector<f64>]) -> Result<DVector<f64>> {
        if h == 0.0 {
            return Ok(y0.clone());
        }
        let y = match self.sim.solver {
            Solver::Rk4 => self.rk4(t0, y0, h, anchors)?,
            Solver::Rk45Adaptive => self.dopri(t0, y0, h, anchors)?,
        };
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState(t0 + h));
        }
        Ok(y)
    }

    fn broadcast(&mut self, i: usize, t: f64, y: &DVector<f64>, f_before: Option<f64>, kind: EventKind) -> Result<()> {
        let sample = BroadcastSample::new(self.broadcast_value(y, i), t);
        self.runtime[i].own_sample = sample.clone();
        for &(j, _) in self.graph.neighbors(i) {
            if !self.is_leader(j) {
                self.runtime[j].neighbor_samples.insert(i, sample.clone());
            }
        }
        if kind == EventKind::Triggered {
            let q = &mut self.recent[i];
            q.push_back(t);
            while q.front().is_some_and(|&s| s < t - 1.0) {
                q.pop_front();
            }
            if q.len() as f64 > self.sim.max_events_per_unit_time {
                return Err(Error::ZenoGuard {
                    agent: i,
                    t,
                    limit: self.sim.max_events_per_unit_time,
                });
            }
        }
        self.events.push(EventRecord {
            agent: i,
            time: t,
            sample,
            trigger_value_before: f_before,
            kind,
        });
        Ok(())
    }

    /// Resolve every trigger due at `t`, lowest index first; `forced` is the
    /// agent whose crossing was just localized.
    fn process_instant(&mut self, t: f64, y: &DVector<f64>, forced: Option<usize>) -> Result<()> {
        let mut est = self.anchors(t)?;
        let mut done = vec![false; self.layout.agents];
        loop {
            let mut any = false;
            for i in 0..self.layout.agents {
                if done[i] || self.is_leader(i) {
                    continue;
                }
                let f = self.trigger(i, t, y, &est);
                let localized = forced == Some(i);
                if f >= 0.0 || localized {
                    if localized {
                        self.localization_residual = self.localization_residual.max(f.abs());
                    }
                    self.broadcast(i, t, y, Some(f), EventKind::Triggered)?;
                    est[i] = self.runtime[i].own_sample.value.clone();
                    done[i] = true;
                    any = true;
                }
            }
            if !any {
                return Ok(());
            }
        }
    }

    fn sync_runtime(&mut self, y: &DVector<f64>) {
        let n = self.layout.n;
        for i in 0..self.layout.agents {
            self.runtime[i].x = y.rows(self.layout.x(i), n).into_owned();
            if self.layout.observer {
                self.runtime[i].chi = Some(y.rows(self.layout.chi(i), n).into_owned());
            }
        }
    }

    fn snapshot(&self, t: f64, y: &DVector<f64>) -> Snapshot {
        let l = &self.layout;
        let x = (0..l.agents).map(|i| y.rows(l.x(i), l.n).into_owned()).collect();
        let chi = l
            .observer
            .then(|| (0..l.agents).map(|i| y.rows(l.chi(i), l.n).into_owned()).collect());
        let c = (0..self.graph.n_edges()).map(|e| y[l.c(e)]).collect();
        Snapshot {
            t,
            x,
            chi,
            c,
            graph: self.graph_idx,
        }
    }

    fn switch(&mut self, t: f64, y: &DVector<f64>, graph: Graph) -> Result<DVector<f64>> {
        let old = self.graph.clone();
        let head = self.layout.c(0);
        let mut next = DVector::zeros(self.layout.len(graph.n_edges()));
        next.rows_mut(0, head).copy_from(&y.rows(0, head));
        for (oe, &(a, b)) in old.edges().iter().enumerate() {
            if graph.edge_index(a, b).is_none() {
                self.dormant.insert((a, b), y[head + oe]);
            }
        }
        for (e, &(a, b)) in graph.edges().iter().enumerate() {
            next[head + e] = match old.edge_index(a, b) {
                Some(oe) => y[head + oe],
                None => self
                    .dormant
                    .remove(&(a, b))
                    .unwrap_or_else(|| self.params.c0.get(a, b)),
            };
        }
        self.set_graph(graph);
        self.graph_idx += 1;
        for rt in &mut self.runtime {
            rt.neighbor_samples.clear();
        }
        for i in 0..self.layout.agents {
            if self.is_leader(i) {
                let s = self.runtime[i].own_sample.clone();
                for &(j, _) in self.graph.neighbors(i) {
                    self.runtime[j].neighbor_samples.insert(i, s.clone());
                }
                continue;
            }
            let est = self.anchors(t)?;
            let f = self.trigger(i, t, &next, &est);
            self.broadcast(i, t, &next, Some(f), EventKind::Switch)?;
        }
        Ok(next)
    }

    fn draw_disturbance(&mut self) {
        if let Some(rng) = self.rng.as_mut() {
            for w in &mut self.w_step {
                for v in w.iter_mut() {
                    *v = rng.random_range(-1.0..=1.0);
                }
            }
        }
    }
}

fn check_assumptions(graph: &Graph, variant: Variant) -> Result<()> {
    match variant {
        Variant::State | Variant::Observer => {
            if graph.leader().is_some() {
                return Err(Error::Config(format!(
                    "{} variant expects a leaderless graph",
                    variant.name()
                )));
            }
            if !graph.is_connected() {
                return Err(Error::Disconnected);
            }
        }
        Variant::LeaderFollower => {
            let leader = graph.leader().ok_or(Error::NoLeader)?;
            if !graph.has_leader_spanning_tree()? {
                return Err(Error::NoSpanningTree(leader));
            }
        }
    }
    Ok(())
}

/// Run one closed-loop simulation.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    model: &SystemModel,
    graph: &Graph,
    gains: &GainSet,
    params: &ProtocolParams,
    sim: &SimConfig,
    x0: &[DVector<f64>],
    chi0: Option<&[DVector<f64>]>,
    variant: Variant,
) -> Result<Trajectory> {
    sim.validate()?;
    params.validate()?;
    let n = model.n_states();
    let agents = graph.n_nodes();
    check_assumptions(graph, variant)?;
    for (ts, g) in &sim.topology_schedule {
        if g.n_nodes() != agents {
            return Err(Error::Config(format!(
                "graph switched in at t = {ts} has {} nodes, expected {agents}",
                g.n_nodes()
            )));
        }
        if variant == Variant::LeaderFollower && g.leader() != graph.leader() {
            return Err(Error::Config(format!("graph switched in at t = {ts} changes the leader")));
        }
        check_assumptions(g, variant)?;
    }
    if gains.k.ncols() != n || gains.k.nrows() != model.n_inputs() || gains.gamma.shape() != (n, n) {
        return Err(Error::Dimension("gain matrices do not match the model".into()));
    }
    if x0.len() != agents || x0.iter().any(|x| x.len() != n) {
        return Err(Error::Dimension(format!("need {agents} initial states of length {n}")));
    }
    if x0.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("initial states"));
    }
    let observer = variant == Variant::Observer;
    if observer && gains.f.is_none() {
        return Err(Error::Config("observer variant needs an observer gain".into()));
    }
    let chi0: Option<Vec<DVector<f64>>> = match (observer, chi0) {
        (true, Some(c)) => {
            if c.len() != agents || c.iter().any(|v| v.len() != n) {
                return Err(Error::Dimension(format!(
                    "need {agents} initial observer states of length {n}"
                )));
            }
            Some(c.to_vec())
        }
        (true, None) => Some(vec![DVector::zeros(n); agents]),
        (false, Some(_)) => {
            return Err(Error::Config("initial observer states given without the observer variant".into()))
        }
        (false, None) => None,
    };

    let layout = Layout { n, agents, observer };
    let runtime = (0..agents)
        .map(|i| AgentRuntime::new(x0[i].clone(), chi0.as_ref().map(|c| c[i].clone()), 0.0))
        .collect();
    let rng = match sim.disturbance.map(|d| d.kind) {
        Some(DisturbanceKind::UniformRandom { seed }) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let mut eng = Engine {
        model,
        gains,
        params,
        sim,
        variant,
        layout,
        graph: graph.clone(),
        graph_idx: 0,
        kappa: Vec::new(),
        varrho: Vec::new(),
        runtime,
        dormant: BTreeMap::new(),
        events: Vec::new(),
        recent: vec![VecDeque::new(); agents],
        localization_residual: 0.0,
        phi_half: matrix_exponential(&model.a, 0.5 * sim.dt)?,
        phi_full: matrix_exponential(&model.a, sim.dt)?,
        w_step: vec![DVector::zeros(n); agents],
        rng,
        h_adapt: Cell::new(sim.dt),
    };
    eng.set_graph(graph.clone());

    let mut y = DVector::zeros(eng.layout.len(graph.n_edges()));
    for i in 0..agents {
        y.rows_mut(eng.layout.x(i), n).copy_from(&x0[i]);
        if let Some(c) = &chi0 {
            y.rows_mut(eng.layout.chi(i), n).copy_from(&c[i]);
        }
    }
    for (e, &(a, b)) in graph.edges().iter().enumerate() {
        y[eng.layout.c(e)] = params.c0.get(a, b);
    }
    for i in 0..agents {
        eng.broadcast(i, 0.0, &y, None, EventKind::Initial)?;
    }

    let mut graphs = vec![graph.clone()];
    let mut graph_times = vec![0.0];
    let mut snapshots = vec![eng.snapshot(0.0, &y)];
    let mut schedule = sim.topology_schedule.iter().peekable();
    let steps = (sim.t_end / sim.dt - 1e-9).ceil().max(1.0) as usize;
    let mut t = 0.0;

    let push = |snaps: &mut Vec<Snapshot>, s: Snapshot| {
        if snaps.last().is_some_and(|l| l.t == s.t) {
            *snaps.last_mut().expect("non-empty") = s;
        } else {
            snaps.push(s);
        }
    };

    for step in 0..steps {
        let t_grid = if step + 1 == steps {
            sim.t_end
        } else {
            (step + 1) as f64 * sim.dt
        };
        eng.draw_disturbance();
        while t < t_grid {
            let switch_at = schedule.peek().map(|(ts, _)| *ts).filter(|&ts| ts > t && ts <= t_grid);
            let target = switch_at.unwrap_or(t_grid);
            let anchors = eng.anchors(t)?;
            let y_end = eng.integrate(t, &y, target - t, &anchors)?;
            let est_end = eng.advance_estimates(&anchors, target - t)?;
            let crossing: Vec<usize> = (0..agents)
                .filter(|&i| !eng.is_leader(i) && eng.trigger(i, target, &y_end, &est_end) >= 0.0)
                .collect();
            if crossing.is_empty() {
                t = target;
                y = y_end;
                if switch_at == Some(target) {
                    let (_, g) = schedule.next().expect("peeked");
                    y = eng.switch(t, &y, g.clone())?;
                    graphs.push(g.clone());
                    graph_times.push(t);
                    push(&mut snapshots, eng.snapshot(t, &y));
                }
                continue;
            }
            // The partial step from t is the solver's own dense output, so the
            // localized state is exactly the one the flow continues from.
            let mut first: Option<(f64, usize)> = None;
            for &i in &crossing {
                // Re-anchoring at a grid point can lift f to roundoff-positive.
                if eng.trigger(i, t, &y, &anchors) >= 0.0 {
                    first = Some((t, i));
                    break;
                }
                let ti = locate_event(
                    |tau| {
                        let yt = eng.integrate(t, &y, tau - t, &anchors)?;
                        let est = eng.advance_estimates(&anchors, tau - t)?;
                        Ok(eng.trigger(i, tau, &yt, &est))
                    },
                    t,
                    target,
                    sim.event_tol,
                )?;
                if first.is_none_or(|(tf, _)| ti < tf) {
                    first = Some((ti, i));
                }
            }
            let (t_star, agent) = first.expect("crossing set is non-empty");
            let y_star = if t_star == t {
                y.clone()
            } else if t_star >= target {
                y_end
            } else {
                eng.integrate(t, &y, t_star - t, &anchors)?
            };
            t = t_star;
            y = y_star;
            eng.process_instant(t, &y, Some(agent))?;
            eng.sync_runtime(&y);
            push(&mut snapshots, eng.snapshot(t, &y));
        }
        if sim.dense_sampling {
            let est = eng.anchors(t)?;
            for i in 0..agents {
                if !eng.is_leader(i) {
                    let f = eng.trigger(i, t, &y, &est);
                    eng.broadcast(i, t, &y, Some(f), EventKind::Forced)?;
                }
            }
        }
        eng.sync_runtime(&y);
        push(&mut snapshots, eng.snapshot(t, &y));
    }

    Ok(Trajectory {
        variant,
        dt: sim.dt,
        event_tol: sim.event_tol,
        snapshots,
        events: eng.events,
        graphs,
        graph_times,
        localization_residual: eng.localization_residual,
    })
}
