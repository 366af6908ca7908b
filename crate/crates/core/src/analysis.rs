//! Post-hoc checks on simulated trajectories. Unlike the protocols, these
//! may use global graph information.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::propagate_estimate;
use crate::engine::{EventKind, Snapshot, Trajectory};
use crate::error::Result;
use crate::graph::Graph;
use crate::linalg::{matrix_exponential, max_eig_sym, spectral_norm, GainSet, SystemModel};
use crate::protocols::ProtocolParams;

fn mean(x: &[DVector<f64>]) -> DVector<f64> {
    let mut m = DVector::zeros(x.first().map_or(0, |v| v.len()));
    for v in x {
        m += v;
    }
    m / x.len().max(1) as f64
}

/// Euclidean norm of a stacked vector.
pub fn stacked_norm(x: &[DVector<f64>]) -> f64 {
    x.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()
}

/// `xi_i = x_i - mean(x)`.
pub fn consensus_error(x: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let m = mean(x);
    x.iter().map(|v| v - &m).collect()
}

/// `z_i = x_i - x_leader` for every follower, in index order.
pub fn leader_error(x: &[DVector<f64>], leader: usize) -> Vec<DVector<f64>> {
    x.iter()
        .enumerate()
        .filter(|&(i, _)| i != leader)
        .map(|(_, v)| v - &x[leader])
        .collect()
}

/// `(1/N) sum_i e^{At} x_i(0)`.
pub fn predicted_consensus_value(a: &DMatrix<f64>, x0: &[DVector<f64>], t: f64) -> Result<DVector<f64>> {
    Ok(matrix_exponential(a, t)? * mean(x0))
}

/// Largest deviation of `(1/N) sum_i e^{-At} x_i(t)` from its initial value
/// over the stored snapshots.
pub fn average_invariant_drift(a: &DMatrix<f64>, traj: &Trajectory) -> Result<f64> {
    let m0 = mean(&traj.snapshots[0].x);
    let mut worst = 0.0f64;
    for s in &traj.snapshots {
        let back = matrix_exponential(a, -s.t)? * mean(&s.x);
        worst = worst.max((back - &m0).norm());
    }
    Ok(worst)
}

/// `eps = eta - zeta` with `zeta`, `eta` the centred state and observer stacks.
pub fn observer_error(s: &Snapshot) -> Option<Vec<DVector<f64>>> {
    let chi = s.chi.as_ref()?;
    let zeta = consensus_error(&s.x);
    let eta = consensus_error(chi);
    Some(eta.iter().zip(&zeta).map(|(e, z)| e - z).collect())
}

/// Time series `(t, ||eps(t)||)`.
pub fn observer_error_series(traj: &Trajectory) -> Vec<(f64, f64)> {
    traj.snapshots
        .iter()
        .filter_map(|s| observer_error(s).map(|e| (s.t, stacked_norm(&e))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremConstants {
    pub alpha: f64,
    pub theta2: f64,
    pub varsigma: f64,
    pub rho: f64,
    pub bound: f64,
    pub lambda2: f64,
    pub lambda_max_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundStatus {
    Available(TheoremConstants),
    Unavailable(String),
}

/// Ultimate bound `||xi||^2 <= varsigma / rho` for the leaderless protocols,
/// with `alpha` at its smallest admissible value.
pub fn theorem1_bound(graph: &Graph, params: &ProtocolParams, p: &DMatrix<f64>) -> Result<BoundStatus> {
    let lambda2 = graph.lambda2()?;
    let lambda_max_p = max_eig_sym(p)?;
    if graph.n_edges() == 0 {
        return Ok(BoundStatus::Unavailable("graph has no edges".into()));
    }
    let alpha = (2.0 / params.delta).max(4.0 / lambda2);
    let mut theta2 = f64::INFINITY;
    let mut varrho_sum = 0.0;
    for &(a, b) in graph.edges() {
        let varrho = params.varrho.get(a, b);
        theta2 = theta2.min(varrho * params.kappa.get(a, b));
        // both ordered pairs (a, b) and (b, a)
        varrho_sum += 2.0 * varrho;
    }
    if theta2 >= 1.0 / lambda_max_p {
        return Ok(BoundStatus::Unavailable(format!(
            "min varrho*kappa = {theta2} is not below 1/lambda_max(P) = {}",
            1.0 / lambda_max_p
        )));
    }
    let varsigma = varrho_sum * alpha * alpha / 8.0;
    let rho = 0.5 * (1.0 - theta2 * lambda_max_p);
    Ok(BoundStatus::Available(TheoremConstants {
        alpha,
        theta2,
        varsigma,
        rho,
        bound: varsigma / rho,
        lambda2,
        lambda_max_p,
    }))
}

/// Inputs of the inter-event lower bound that do not depend on the interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZenoInputs {
    pub norm_a: f64,
    pub norm_k: f64,
    pub c_bar: f64,
    pub sigma: f64,
    pub degree: usize,
    pub delta: f64,
    pub mu: f64,
    pub nu: f64,
    pub t_k: f64,
}

/// Smallest positive root of
/// `tau = (1/|A|) ln(1 + |A| / (c sigma |K|) sqrt(mu e^{-nu (t_k + tau)} / (d (1 + delta c))))`,
/// with the `|A| -> 0` limit taken when `A = 0`.
pub fn zeno_tau(z: &ZenoInputs) -> f64 {
    let drive = z.c_bar * z.sigma * z.norm_k;
    if z.degree == 0 || drive <= 0.0 {
        return f64::INFINITY;
    }
    let g = |tau: f64| {
        let thr = (z.mu * (-z.nu * (z.t_k + tau)).exp() / (z.degree as f64 * (1.0 + z.delta * z.c_bar))).sqrt();
        if z.norm_a > 0.0 {
            (z.norm_a * thr / drive).ln_1p() / z.norm_a
        } else {
            thr / drive
        }
    };
    // tau - g(tau) is increasing with a root in [0, g(0)]
    let (mut lo, mut hi) = (0.0, g(0.0));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid - g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            break;
        }
    }
    lo
}

/// One checked inter-event interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZenoInterval {
    pub agent: usize,
    pub t_k: f64,
    pub observed: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZenoReport {
    pub intervals: Vec<ZenoInterval>,
    pub c_bar: f64,
}

impl ZenoReport {
    pub fn violations(&self) -> impl Iterator<Item = &ZenoInterval> + '_ {
        self.intervals.iter().filter(|z| z.observed < z.tau)
    }

    pub fn holds(&self) -> bool {
        self.violations().next().is_none()
    }

    /// Smallest ratio observed / tau.
    pub fn min_ratio(&self) -> Option<f64> {
        self.intervals
            .iter()
            .map(|z| z.observed / z.tau)
            .min_by(f64::total_cmp)
    }
}

/// Context shared by every interval check of one run.
pub struct ZenoContext<'a> {
    pub model: &'a SystemModel,
    pub gains: &'a GainSet,
    pub params: &'a ProtocolParams,
    /// Bound on `||w_i(t)||`, zero without disturbance.
    pub disturbance_bound: f64,
}

fn graph_at(traj: &Trajectory, t: f64) -> &Graph {
    let idx = traj.graph_times.iter().rposition(|&s| s <= t).unwrap_or(0);
    &traj.graphs[idx]
}

/// Bound check for every interval of `agent` that ends in a trigger.
fn zeno_agent(ctx: &ZenoContext<'_>, traj: &Trajectory, agent: usize, c_bar: f64, out: &mut Vec<ZenoInterval>) -> Result<()> {
    let a = &ctx.model.a;
    let norm_a = spectral_norm(a);
    let norm_k = spectral_norm(&ctx.gains.k);
    let norm_bk = spectral_norm(&(&ctx.model.b * &ctx.gains.k));
    let fc = ctx.gains.f.as_ref().map(|f| f * &ctx.model.c);
    let events: Vec<_> = traj.events_of(agent).collect();
    for pair in events.windows(2) {
        let (start, end) = (pair[0], pair[1]);
        if end.kind != EventKind::Triggered {
            continue;
        }
        let (t_k, t_next) = (start.time, end.time);
        let graph = graph_at(traj, t_k);
        let mut sigma = 0.0f64;
        let mut injection = 0.0f64;
        let lo = traj.snapshots.partition_point(|s| s.t < t_k);
        for s in traj.snapshots[lo..].iter().take_while(|s| s.t <= t_next) {
            let own = propagate_estimate(a, &start.sample, s.t)?;
            for strict in [false, true] {
                let mut sum = 0.0;
                for &(j, _) in graph.neighbors(agent) {
                    let Some(sj) = traj.sample_at(j, s.t, strict) else {
                        continue;
                    };
                    sum += norm_bk * (&own - propagate_estimate(a, sj, s.t)?).norm();
                }
                sigma = sigma.max(sum);
            }
            if let (Some(fc), Some(chi)) = (&fc, &s.chi) {
                injection = injection.max((fc * (&chi[agent] - &s.x[agent])).norm());
            }
        }
        let extra = injection + ctx.disturbance_bound;
        let sigma_eff = if c_bar > 0.0 { sigma + extra / c_bar } else { 0.0 };
        let tau = if c_bar == 0.0 && extra > 0.0 {
            // no coupling: only the extra drive moves the error
            zeno_tau(&ZenoInputs {
                norm_a,
                norm_k,
                c_bar: 1.0,
                sigma: extra,
                degree: graph.degree(agent),
                delta: 0.0,
                mu: ctx.params.mu,
                nu: ctx.params.nu,
                t_k,
            })
        } else {
            zeno_tau(&ZenoInputs {
                norm_a,
                norm_k,
                c_bar,
                sigma: sigma_eff,
                degree: graph.degree(agent),
                delta: ctx.params.delta,
                mu: ctx.params.mu,
                nu: ctx.params.nu,
                t_k,
            })
        };
        out.push(ZenoInterval {
            agent,
            t_k,
            observed: t_next - t_k,
            tau,
        });
    }
    Ok(())
}

/// Largest edge weight over the run.
pub fn max_weight(traj: &Trajectory) -> f64 {
    traj.snapshots
        .iter()
        .flat_map(|s| s.c.iter().copied())
        .fold(0.0, f64::max)
}

/// Inter-event lower bound for every trigger-terminated interval.
pub fn zeno_bound(ctx: &ZenoContext<'_>, traj: &Trajectory) -> Result<ZenoReport> {
    let c_bar = max_weight(traj);
    let mut intervals = Vec::new();
    for agent in 0..traj.n_agents() {
        zeno_agent(ctx, traj, agent, c_bar, &mut intervals)?;
    }
    Ok(ZenoReport { intervals, c_bar })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentEventStats {
    pub count: usize,
    pub min_interval: Option<f64>,
    pub mean_interval: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventStats {
    pub per_agent: Vec<AgentEventStats>,
    pub total: usize,
    pub global_min_interval: Option<f64>,
}

/// Counts and inter-event intervals from per-agent sorted event times.
pub fn interval_stats(times: &[Vec<f64>]) -> EventStats {
    let mut stats = EventStats::default();
    for ts in times {
        let gaps: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
        let min = gaps.iter().copied().min_by(f64::total_cmp);
        let mean = (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64);
        stats.total += ts.len();
        stats.global_min_interval = match (stats.global_min_interval, min) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        stats.per_agent.push(AgentEventStats {
            count: ts.len(),
            min_interval: min,
            mean_interval: mean,
        });
    }
    stats
}

/// Statistics over every broadcast after the initial one.
pub fn event_stats(traj: &Trajectory) -> EventStats {
    let times: Vec<Vec<f64>> = (0..traj.n_agents())
        .map(|i| {
            traj.events_of(i)
                .filter(|e| e.kind != EventKind::Initial)
                .map(|e| e.time)
                .collect()
        })
        .collect();
    interval_stats(&times)
}

/// Smallest gap between consecutive broadcasts of any single agent,
/// counting the initial broadcast.
pub fn min_broadcast_gap(traj: &Trajectory) -> Option<f64> {
    (0..traj.n_agents())
        .filter_map(|i| {
            let ts: Vec<f64> = traj.events_of(i).map(|e| e.time).collect();
            ts.windows(2).map(|w| w[1] - w[0]).min_by(f64::total_cmp)
        })
        .min_by(f64::total_cmp)
}

/// Final consensus (or leader tracking) error norm.
pub fn final_error(traj: &Trajectory) -> Result<f64> {
    let s = traj.last();
    match traj.graphs[s.graph].leader() {
        Some(l) if traj.variant == crate::engine::Variant::LeaderFollower => Ok(stacked_norm(&leader_error(&s.x, l))),
        _ => Ok(stacked_norm(&consensus_error(&s.x))),
    }
}

/// Consensus or tracking error norm at every snapshot.
pub fn error_series(traj: &Trajectory) -> Vec<(f64, f64)> {
    traj.snapshots
        .iter()
        .map(|s| {
            let e = match traj.graphs[s.graph].leader() {
                Some(l) if traj.variant == crate::engine::Variant::LeaderFollower => leader_error(&s.x, l),
                _ => consensus_error(&s.x),
            };
            (s.t, stacked_norm(&e))
        })
        .collect()
}

/// `x_i(t) - x_j(t)` check helper: the largest spread from the mean.
pub fn max_deviation(x: &[DVector<f64>], reference: &DVector<f64>) -> f64 {
    x.iter().map(|v| (v - reference).norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn s(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn consensus_error_examples() {
        let same = vec![DVector::from_vec(vec![1.0, 2.0]); 3];
        assert!(stacked_norm(&consensus_error(&same)) == 0.0);
        let xi = consensus_error(&[s(1.0), s(-1.0)]);
        assert_eq!((xi[0][0], xi[1][0]), (1.0, -1.0));
    }

    #[test]
    fn leader_error_examples() {
        let z = leader_error(&[s(1.0), s(3.0)], 0);
        assert_eq!(z.len(), 1);
        assert_eq!(z[0][0], 2.0);
        let z = leader_error(&[s(5.0), s(5.0), s(5.0)], 1);
        assert_eq!(z.len(), 2);
        assert_eq!(stacked_norm(&z), 0.0);
    }

    #[test]
    fn ultimate_bound_two_node_example() {
        // alpha = max{2/1, 4/2} = 2; theta2 = 0.01; varsigma = 2 (0.1/8) 4 = 0.1;
        // rho = (1 - 0.01)/2 = 0.495
        let g = Graph::path(2, None).unwrap();
        let params = ProtocolParams::uniform(1.0, 2.0, 0.5, 0.1, 0.1, 0.0).unwrap();
        let BoundStatus::Available(c) = theorem1_bound(&g, &params, &DMatrix::identity(1, 1)).unwrap() else {
            panic!("bound should be available");
        };
        assert_eq!(c.alpha, 2.0);
        assert!((c.theta2 - 0.01).abs() < 1e-15);
        assert!((c.varsigma - 0.1).abs() < 1e-15);
        assert!((c.rho - 0.495).abs() < 1e-15);
        assert!((c.bound - 0.1 / 0.495).abs() < 1e-12);
        assert!((c.bound - 0.2020).abs() < 1e-4);
    }

    #[test]
    fn ultimate_bound_without_leakage_and_unavailable() {
        let g = Graph::ring(6, None).unwrap();
        let p = DMatrix::identity(2, 2) * 2.0;
        let zero = ProtocolParams::uniform(1.0, 2.0, 0.5, 0.2, 0.0, 0.0).unwrap();
        let BoundStatus::Available(c) = theorem1_bound(&g, &zero, &p).unwrap() else {
            panic!()
        };
        assert_eq!(c.bound, 0.0);
        let big = ProtocolParams::uniform(1.0, 2.0, 0.5, 1.0, 0.5, 0.0).unwrap();
        assert!(matches!(theorem1_bound(&g, &big, &p).unwrap(), BoundStatus::Unavailable(_)));
        let disconnected = Graph::new(3, &[(0, 1)], None).unwrap();
        assert!(matches!(theorem1_bound(&disconnected, &zero, &p), Err(Error::Disconnected)));
    }

    #[test]
    fn ultimate_bound_monotone_in_varrho() {
        let g = Graph::ring(5, None).unwrap();
        let p = DMatrix::identity(1, 1);
        let mut last = -1.0;
        for varrho in [0.0, 0.01, 0.05, 0.1, 0.2] {
            let params = ProtocolParams::uniform(1.0, 2.0, 0.5, 0.2, varrho, 0.0).unwrap();
            let BoundStatus::Available(c) = theorem1_bound(&g, &params, &p).unwrap() else {
                panic!()
            };
            assert!(c.varsigma > last);
            last = c.varsigma;
        }
    }

    fn zin(mu: f64, norm_a: f64) -> ZenoInputs {
        ZenoInputs {
            norm_a,
            norm_k: 3.0,
            c_bar: 2.0,
            sigma: 1.5,
            degree: 2,
            delta: 1.0,
            mu,
            nu: 0.5,
            t_k: 1.0,
        }
    }

    #[test]
    fn zeno_tau_solves_implicit_relation() {
        for norm_a in [0.0, 1.0, 2.5] {
            let z = zin(2.0, norm_a);
            let tau = zeno_tau(&z);
            assert!(tau > 0.0);
            let thr = (z.mu * (-z.nu * (z.t_k + tau)).exp() / (2.0 * 3.0)).sqrt();
            let rhs = if norm_a > 0.0 {
                (1.0 + norm_a * thr / 9.0).ln() / norm_a
            } else {
                thr / 9.0
            };
            assert!((tau - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn zeno_tau_increases_with_mu() {
        let taus: Vec<f64> = [1.0, 2.0, 4.0].iter().map(|&mu| zeno_tau(&zin(mu, 1.0))).collect();
        assert!(taus[0] < taus[1] && taus[1] < taus[2]);
    }

    #[test]
    fn zeno_tau_no_drive_is_infinite() {
        let mut z = zin(2.0, 1.0);
        z.sigma = 0.0;
        assert!(zeno_tau(&z).is_infinite());
    }

    #[test]
    fn event_stats_examples() {
        let empty = interval_stats(&[vec![], vec![]]);
        assert_eq!(empty.total, 0);
        assert_eq!(empty.global_min_interval, None);
        let single = interval_stats(&[vec![1.0], vec![2.0]]);
        assert_eq!(single.total, 2);
        assert!(single.per_agent.iter().all(|a| a.min_interval.is_none()));
        let st = interval_stats(&[vec![0.0, 0.1, 0.4]]);
        assert!((st.per_agent[0].min_interval.unwrap() - 0.1).abs() < 1e-15);
        assert!((st.per_agent[0].mean_interval.unwrap() - 0.2).abs() < 1e-15);
        assert!((st.global_min_interval.unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn predicted_value_examples() {
        let x0 = vec![DVector::from_vec(vec![1.0, 0.0, 0.0]), DVector::from_vec(vec![0.0, 0.0, 1.0])];
        let a = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., 0., 0., 0.]);
        assert_eq!(predicted_consensus_value(&a, &x0, 0.0).unwrap(), DVector::from_vec(vec![0.5, 0.0, 0.5]));
        // e^{At} (0.5, 0, 0.5) = (0.5 + t^2/4, t/2, 0.5)
        let t = 3.0;
        let v = predicted_consensus_value(&a, &x0, t).unwrap();
        let want = DVector::from_vec(vec![0.5 + t * t / 4.0, t / 2.0, 0.5]);
        assert!((v - want).norm() < 1e-12);
        let zero = DMatrix::zeros(3, 3);
        assert_eq!(predicted_consensus_value(&zero, &x0, 7.0).unwrap(), DVector::from_vec(vec![0.5, 0.0, 0.5]));
    }

    #[test]
    fn observer_error_examples() {
        let x = vec![s(1.0), s(2.0), s(4.0)];
        let snap = Snapshot {
            t: 0.0,
            x: x.clone(),
            chi: Some(x.clone()),
            c: vec![],
            graph: 0,
        };
        assert_eq!(stacked_norm(&observer_error(&snap).unwrap()), 0.0);
        let snap = Snapshot {
            chi: Some(vec![s(0.0), s(0.0), s(3.0)]),
            ..snap
        };
        let eps = observer_error(&snap).unwrap();
        assert!(eps.iter().map(|v| v[0]).sum::<f64>().abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn consensus_error_sums_to_zero(raw in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let x: Vec<DVector<f64>> = raw.chunks(3).map(DVector::from_row_slice).collect();
            let xi = consensus_error(&x);
            let total: DVector<f64> = xi.iter().fold(DVector::zeros(3), |acc, v| acc + v);
            prop_assert!(total.norm() < 1e-12);
        }
    }
}
