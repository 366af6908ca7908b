//! Adaptive event-based control laws and triggering functions.
//!
//! Every function here sees one agent and its incident edges only. A
//! neighbour is described by a [`NeighborLink`]: the shared coupling weight of
//! the edge and the neighbour's current broadcast estimate.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SystemModel;

/// Per-edge scalar with a default and explicit overrides keyed by the
/// unordered node pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub default: f64,
    overrides: BTreeMap<(usize, usize), f64>,
}

impl EdgeMap {
    pub fn uniform(value: f64) -> Self {
        Self {
            default: value,
            overrides: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.overrides.insert((i.min(j), i.max(j)), value);
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.overrides
            .get(&(i.min(j), i.max(j)))
            .copied()
            .unwrap_or(self.default)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.default).chain(self.overrides.values().copied())
    }

    pub fn overrides(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.overrides.iter().map(|(&k, &v)| (k, v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParams {
    pub delta: f64,
    pub mu: f64,
    pub nu: f64,
    pub kappa: EdgeMap,
    pub varrho: EdgeMap,
    pub c0: EdgeMap,
}

impl ProtocolParams {
    pub fn uniform(delta: f64, mu: f64, nu: f64, kappa: f64, varrho: f64, c0: f64) -> Result<Self> {
        let p = Self {
            delta,
            mu,
            nu,
            kappa: EdgeMap::uniform(kappa),
            varrho: EdgeMap::uniform(varrho),
            c0: EdgeMap::uniform(c0),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("delta", self.delta), ("mu", self.mu), ("nu", self.nu)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(v) = self.kappa.values().find(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParam(format!("kappa must be positive, got {v}")));
        }
        if let Some(v) = self.varrho.values().find(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParam(format!("varrho must be nonnegative, got {v}")));
        }
        if let Some(v) = self.c0.values().find(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParam(format!("c0 must be nonnegative, got {v}")));
        }
        Ok(())
    }
}

/// One incident edge as seen by the agent at its tail.
#[derive(Debug, Clone, Copy)]
pub struct NeighborLink<'a> {
    pub weight: f64,
    pub estimate: &'a DVector<f64>,
    pub to_leader: bool,
}

/// `v' Gamma v`.
pub fn quad(gamma: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(gamma * v))
}

/// `K sum_j c_ij (own - est_j)` over the given links.
pub fn control(k: &DMatrix<f64>, own: &DVector<f64>, links: &[NeighborLink<'_>]) -> DVector<f64> {
    let mut acc = DVector::zeros(own.len());
    for l in links {
        acc.axpy(l.weight, &(own - l.estimate), 1.0);
    }
    k * acc
}

/// `kappa (-varrho c + diff' Gamma diff)`.
pub fn weight_rate(kappa: f64, varrho: f64, c: f64, diff: &DVector<f64>, gamma: &DMatrix<f64>) -> f64 {
    kappa * (-varrho * c + quad(gamma, diff))
}

/// Triggering rule shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerRule {
    Leaderless,
    LeaderFollower,
}

/// Trigger function value; the agent broadcasts once it reaches zero.
#[allow(clippy::too_many_arguments)]
pub fn trigger_value(
    rule: TriggerRule,
    e: &DVector<f64>,
    own: &DVector<f64>,
    links: &[NeighborLink<'_>],
    params: &ProtocolParams,
    gamma: &DMatrix<f64>,
    t: f64,
) -> f64 {
    let ee = quad(gamma, e);
    let mut f = -params.mu * (-params.nu * t).exp();
    for l in links {
        let diff = own - l.estimate;
        let dd = quad(gamma, &diff);
        let lead = rule == TriggerRule::LeaderFollower && l.to_leader;
        let err_coef = if lead { 0.5 } else { 1.0 };
        f += err_coef * (1.0 + params.delta * l.weight) * ee - 0.25 * dd;
        if lead {
            f -= 0.5 * dd;
        }
    }
    f
}

/// `A chi + B u + F (C chi - y)`.
pub fn observer_rate(
    model: &SystemModel,
    chi: &DVector<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
    f: &DMatrix<f64>,
) -> DVector<f64> {
    &model.a * chi + &model.b * u + f * (&model.c * chi - y)
}

pub fn control_state(k: &DMatrix<f64>, own: &DVector<f64>, links: &[NeighborLink<'_>]) -> DVector<f64> {
    control(k, own, links)
}

pub fn control_observer(k: &DMatrix<f64>, own: &DVector<f64>, links: &[NeighborLink<'_>]) -> DVector<f64> {
    control(k, own, links)
}

pub fn control_leader_follower(
    k: &DMatrix<f64>,
    own: &DVector<f64>,
    links: &[NeighborLink<'_>],
) -> Result<DVector<f64>> {
    if links.is_empty() {
        return Err(Error::InvalidParam("follower has no neighbours".into()));
    }
    Ok(control(k, own, links))
}

pub fn weight_rate_observer(kappa: f64, varrho: f64, c: f64, diff: &DVector<f64>, gamma: &DMatrix<f64>) -> f64 {
    weight_rate(kappa, varrho, c, diff, gamma)
}

/// Leader edge rate, driven by `z~ = x~_i - x~_leader`.
pub fn weight_rate_leader_edge(kappa: f64, varrho: f64, c: f64, z: &DVector<f64>, gamma: &DMatrix<f64>) -> f64 {
    weight_rate(kappa, varrho, c, z, gamma)
}

pub fn trigger_value_state(
    e: &DVector<f64>,
    own: &DVector<f64>,
    links: &[NeighborLink<'_>],
    params: &ProtocolParams,
    gamma: &DMatrix<f64>,
    t: f64,
) -> f64 {
    trigger_value(TriggerRule::Leaderless, e, own, links, params, gamma, t)
}

pub fn trigger_value_observer(
    e: &DVector<f64>,
    own: &DVector<f64>,
    links: &[NeighborLink<'_>],
    params: &ProtocolParams,
    gamma: &DMatrix<f64>,
    t: f64,
) -> f64 {
    trigger_value(TriggerRule::Leaderless, e, own, links, params, gamma, t)
}

pub fn trigger_value_leader_follower(
    e: &DVector<f64>,
    own: &DVector<f64>,
    links: &[NeighborLink<'_>],
    params: &ProtocolParams,
    gamma: &DMatrix<f64>,
    t: f64,
) -> f64 {
    trigger_value(TriggerRule::LeaderFollower, e, own, links, params, gamma, t)
}
