//! Agent dynamics, sample-and-hold estimates and measurement errors.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{matrix_exponential, SystemModel};

/// State (or observer state) broadcast by an agent at one of its events.
#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastSample {
    pub value: DVector<f64>,
    pub stamp: f64,
}

impl BroadcastSample {
    pub fn new(value: DVector<f64>, stamp: f64) -> Self {
        Self { value, stamp }
    }
}

/// Everything one agent holds locally.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRuntime {
    pub x: DVector<f64>,
    pub chi: Option<DVector<f64>>,
    pub own_sample: BroadcastSample,
    pub neighbor_samples: BTreeMap<usize, BroadcastSample>,
}

impl AgentRuntime {
    pub fn new(x: DVector<f64>, chi: Option<DVector<f64>>, t0: f64) -> Self {
        let broadcast = chi.clone().unwrap_or_else(|| x.clone());
        Self {
            x,
            chi,
            own_sample: BroadcastSample::new(broadcast, t0),
            neighbor_samples: BTreeMap::new(),
        }
    }

    /// The quantity this agent broadcasts: `chi` when it runs an observer,
    /// its true state otherwise.
    pub fn broadcast_value(&self) -> &DVector<f64> {
        self.chi.as_ref().unwrap_or(&self.x)
    }
}

/// `e^{A(t - stamp)} value`.
pub fn propagate_estimate(a: &DMatrix<f64>, s: &BroadcastSample, t: f64) -> Result<DVector<f64>> {
    if t < s.stamp {
        return Err(Error::TimeBeforeStamp { stamp: s.stamp, t });
    }
    if t == s.stamp {
        return Ok(s.value.clone());
    }
    Ok(matrix_exponential(a, t - s.stamp)? * &s.value)
}

/// `propagate_estimate(s, t) - current`.
pub fn measurement_error(
    a: &DMatrix<f64>,
    s: &BroadcastSample,
    current: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    Ok(propagate_estimate(a, s, t)? - current)
}

/// `Ax + Bu + w`.
pub fn agent_derivative(
    model: &SystemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let n = model.n_states();
    if x.len() != n || u.len() != model.n_inputs() || w.is_some_and(|w| w.len() != n) {
        return Err(Error::Dimension(format!(
            "agent derivative: x has {}, u has {}, model is n={n}, p={}",
            x.len(),
            u.len(),
            model.n_inputs()
        )));
    }
    let mut dx = &model.a * x + &model.b * u;
    if let Some(w) = w {
        dx += w;
    }
    Ok(dx)
}

/// `Cx`.
pub fn output(model: &SystemModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != model.n_states() {
        return Err(Error::Dimension(format!(
            "output: x has {} entries, model has {}",
            x.len(),
            model.n_states()
        )));
    }
    Ok(&model.c * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn triple() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., 0., 0., 0.])
    }

    #[test]
    fn propagate_identity_at_stamp() {
        let s = BroadcastSample::new(DVector::from_vec(vec![1.0, -2.0, 0.5]), 3.0);
        assert_eq!(propagate_estimate(&triple(), &s, 3.0).unwrap(), s.value);
        assert!(matches!(
            propagate_estimate(&triple(), &s, 2.0),
            Err(Error::TimeBeforeStamp { .. })
        ));
    }

    #[test]
    fn propagate_first_basis_vector_is_fixed() {
        let s = BroadcastSample::new(DVector::from_vec(vec![1.0, 0.0, 0.0]), 0.0);
        let v = propagate_estimate(&triple(), &s, 2.0).unwrap();
        assert!((v - &s.value).abs().max() < 1e-15);
    }

    #[test]
    fn propagate_static_dynamics() {
        let a = DMatrix::zeros(2, 2);
        let s = BroadcastSample::new(DVector::from_vec(vec![0.3, -0.7]), 0.0);
        for t in [0.5, 10.0, 1e4] {
            assert_eq!(propagate_estimate(&a, &s, t).unwrap(), s.value);
        }
    }

    #[test]
    fn measurement_errors() {
        let a = DMatrix::zeros(1, 1);
        let s = BroadcastSample::new(DVector::from_element(1, 1.0), 0.0);
        let e = measurement_error(&a, &s, &DVector::from_element(1, 0.9), 4.0).unwrap();
        assert!((e[0] - 0.1).abs() < 1e-15);

        let s = BroadcastSample::new(DVector::from_vec(vec![0.2, 1.0, -1.0]), 1.0);
        let now = propagate_estimate(&triple(), &s, 2.5).unwrap();
        let e = measurement_error(&triple(), &s, &now, 2.5).unwrap();
        assert_eq!(e, DVector::zeros(3));
    }

    #[test]
    fn leader_error_vanishes_without_input() {
        // a leader with u = 0 follows its own open-loop estimate exactly
        let a = triple();
        let x0 = DVector::from_vec(vec![0.4, -0.1, 0.3]);
        let s = BroadcastSample::new(x0.clone(), 0.0);
        for t in [0.1, 1.0, 7.5] {
            let x_t = matrix_exponential(&a, t).unwrap() * &x0;
            let e = measurement_error(&a, &s, &x_t, t).unwrap();
            assert!(e.norm() < 1e-14);
        }
    }

    #[test]
    fn derivative_and_output() {
        let model = SystemModel::full_state(
            triple(),
            DMatrix::from_row_slice(3, 1, &[0., 0., 1.]),
        )
        .unwrap();
        let zero = DVector::zeros(3);
        let dx = agent_derivative(&model, &zero, &DVector::from_element(1, 1.0), None).unwrap();
        assert_eq!(dx, DVector::from_vec(vec![0., 0., 1.]));
        let x = DVector::from_vec(vec![1., 2., 3.]);
        assert_eq!(output(&model, &x).unwrap(), x);
        assert!(agent_derivative(&model, &zero, &DVector::zeros(2), None).is_err());

        let scalar = SystemModel::full_state(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        let d = agent_derivative(
            &scalar,
            &DVector::from_element(1, 5.0),
            &DVector::zeros(1),
            Some(&DVector::zeros(1)),
        )
        .unwrap();
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn runtime_broadcasts_observer_state() {
        let rt = AgentRuntime::new(
            DVector::from_element(2, 1.0),
            Some(DVector::from_element(2, -1.0)),
            0.0,
        );
        assert_eq!(rt.own_sample.value, DVector::from_element(2, -1.0));
        assert_eq!(rt.broadcast_value(), &DVector::from_element(2, -1.0));
    }

    proptest! {
        #[test]
        fn propagate_semigroup(
            entries in proptest::collection::vec(-1.0f64..1.0, 9),
            v in proptest::collection::vec(-2.0f64..2.0, 3),
            t1 in 0.0f64..3.0,
            dt in 0.0f64..3.0,
        ) {
            let a = DMatrix::from_row_slice(3, 3, &entries);
            let s = BroadcastSample::new(DVector::from_vec(v), 0.0);
            let t2 = t1 + dt;
            let mid = BroadcastSample::new(propagate_estimate(&a, &s, t1).unwrap(), t1);
            let two_hop = propagate_estimate(&a, &mid, t2).unwrap();
            let direct = propagate_estimate(&a, &s, t2).unwrap();
            let scale = 1.0 + direct.norm();
            prop_assert!((two_hop - direct).norm() <= 1e-9 * scale);
        }
    }
}
