//! The lifting map from class/station totals to edge flows on a tree, the
//! control lift and the drift of the controlled diffusion.
//!
//! On a tree the system
//!
//! ```text
//! sum_j psi_ij = alpha_i    (every class i)
//! sum_i psi_ij = beta_j     (every station j)
//! ```
//!
//! has exactly one solution supported on the edges whenever
//! `sum alpha = sum beta`. It is found by peeling leaves: a leaf's single edge
//! carries the leaf's whole total, which is then subtracted from its
//! neighbour. Leaves are taken smallest index first.

use crate::error::{Error, Result};
use crate::model::{peel_order, ControlPoint, Node, TreeModel};

/// Relative tolerance on `|sum alpha - sum beta|`.
pub const BALANCE_REL_TOL: f64 = 1e-9;

/// Edge flows `psi_ij`, zero off the edge set.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowAssignment {
    classes: usize,
    stations: usize,
    dense: Vec<f64>,
}

impl FlowAssignment {
    fn from_edges(model: &TreeModel, edge_values: &[f64]) -> Self {
        let mut dense = vec![0.0; model.classes() * model.stations()];
        for (a, &value) in model.activities().iter().zip(edge_values) {
            dense[a.class * model.stations() + a.station] = value;
        }
        Self {
            classes: model.classes(),
            stations: model.stations(),
            dense,
        }
    }

    pub fn get(&self, class: usize, station: usize) -> f64 {
        self.dense[class * self.stations + station]
    }

    pub fn row_sum(&self, class: usize) -> f64 {
        (0..self.stations).map(|j| self.get(class, j)).sum()
    }

    pub fn column_sum(&self, station: usize) -> f64 {
        (0..self.classes).map(|i| self.get(i, station)).sum()
    }

    /// Values in activity order.
    pub fn edge_values(&self, model: &TreeModel) -> Vec<f64> {
        model
            .activities()
            .iter()
            .map(|a| self.get(a.class, a.station))
            .collect()
    }

    pub fn as_matrix(&self) -> Vec<Vec<f64>> {
        self.dense
            .chunks(self.stations)
            .map(<[f64]>::to_vec)
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Step {
    edge: usize,
    class: usize,
    station: usize,
    leaf_is_class: bool,
}

/// Precomputed peeling schedule for repeated solves on one tree.
#[derive(Debug, Clone)]
pub struct LiftingMap {
    classes: usize,
    stations: usize,
    steps: Vec<Step>,
}

impl LiftingMap {
    pub fn new(model: &TreeModel) -> Result<Self> {
        model.require_tree()?;
        let steps = peel_order(model)
            .into_iter()
            .map(|s| {
                let a = model.activities()[s.edge];
                Step {
                    edge: s.edge,
                    class: a.class,
                    station: a.station,
                    leaf_is_class: matches!(s.leaf, Node::Class(_)),
                }
            })
            .collect();
        Ok(Self {
            classes: model.classes(),
            stations: model.stations(),
            steps,
        })
    }

    pub fn edge_count(&self) -> usize {
        self.steps.len()
    }

    /// Solves for edge flows (activity order) without checking balance.
    /// `alpha` and `beta` are consumed as scratch.
    pub fn solve_in_place(&self, alpha: &mut [f64], beta: &mut [f64], psi: &mut [f64]) {
        debug_assert_eq!(alpha.len(), self.classes);
        debug_assert_eq!(beta.len(), self.stations);
        for s in &self.steps {
            let flow = if s.leaf_is_class {
                let f = alpha[s.class];
                beta[s.station] -= f;
                f
            } else {
                let f = beta[s.station];
                alpha[s.class] -= f;
                f
            };
            psi[s.edge] = flow;
        }
    }

    fn check_balance(alpha: &[f64], beta: &[f64]) -> Result<()> {
        let a: f64 = alpha.iter().sum();
        let b: f64 = beta.iter().sum();
        let scale: f64 = alpha
            .iter()
            .chain(beta)
            .map(|v| v.abs())
            .sum::<f64>()
            .max(1.0);
        if (a - b).abs() > BALANCE_REL_TOL * scale || !a.is_finite() || !b.is_finite() {
            return Err(Error::Balance {
                alpha_total: a,
                beta_total: b,
            });
        }
        Ok(())
    }

    /// Edge flows in activity order.
    pub fn solve_edges(&self, alpha: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
        if alpha.len() != self.classes || beta.len() != self.stations {
            return Err(Error::InvalidInput(format!(
                "row totals have length {}, column totals {}; model is {}x{}",
                alpha.len(),
                beta.len(),
                self.classes,
                self.stations
            )));
        }
        Self::check_balance(alpha, beta)?;
        let mut a = alpha.to_vec();
        let mut b = beta.to_vec();
        let mut psi = vec![0.0; self.steps.len()];
        self.solve_in_place(&mut a, &mut b, &mut psi);
        Ok(psi)
    }
}

/// The unique edge flow with class totals `alpha` and station totals `beta`.
pub fn solve_psi(model: &TreeModel, alpha: &[f64], beta: &[f64]) -> Result<FlowAssignment> {
    let map = LiftingMap::new(model)?;
    let edges = map.solve_edges(alpha, beta)?;
    Ok(FlowAssignment::from_edges(model, &edges))
}

/// Queue contents, idleness and edge flows induced by a state and a control.
#[derive(Debug, Clone, PartialEq)]
pub struct Lift {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub psi: FlowAssignment,
}

/// `Y = (e.x)^+ u`, `Z = (e.x)^- v`, `psi = G(x - Y, -Z)`.
pub fn lift_control(model: &TreeModel, x: &[f64], control: &ControlPoint) -> Result<Lift> {
    let dynamics = Dynamics::new(model)?;
    dynamics.check_inputs(x, control)?;
    let mut scratch = dynamics.scratch();
    dynamics.lift_into(x, control, &mut scratch);
    Ok(Lift {
        y: scratch.y.clone(),
        z: scratch.z.clone(),
        psi: FlowAssignment::from_edges(model, &scratch.psi),
    })
}

/// Drift `b(x, U)` of the controlled diffusion.
pub fn drift(model: &TreeModel, x: &[f64], control: &ControlPoint) -> Result<Vec<f64>> {
    let dynamics = Dynamics::new(model)?;
    dynamics.check_inputs(x, control)?;
    let mut scratch = dynamics.scratch();
    let mut out = vec![0.0; model.classes()];
    dynamics.drift_into(x, control, &mut scratch, &mut out);
    Ok(out)
}

/// Working buffers for [`Dynamics`].
#[derive(Debug, Clone)]
pub struct Scratch {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// Edge flows in activity order.
    pub psi: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

/// Allocation-free evaluation of the lift and the drift for one model, for
/// use in inner loops.
#[derive(Debug, Clone)]
pub struct Dynamics {
    classes: usize,
    stations: usize,
    map: LiftingMap,
    edge_class: Vec<usize>,
    edge_mu: Vec<f64>,
    theta: Vec<f64>,
    ell: Vec<f64>,
}

impl Dynamics {
    pub fn new(model: &TreeModel) -> Result<Self> {
        let map = LiftingMap::new(model)?;
        Ok(Self {
            classes: model.classes(),
            stations: model.stations(),
            map,
            edge_class: model.activities().iter().map(|a| a.class).collect(),
            edge_mu: model.activities().iter().map(|a| a.mu).collect(),
            theta: (0..model.classes()).map(|i| model.theta(i)).collect(),
            ell: (0..model.classes()).map(|i| model.ell(i)).collect(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn scratch(&self) -> Scratch {
        Scratch {
            y: vec![0.0; self.classes],
            z: vec![0.0; self.stations],
            psi: vec![0.0; self.map.edge_count()],
            alpha: vec![0.0; self.classes],
            beta: vec![0.0; self.stations],
        }
    }

    pub(crate) fn check_inputs(&self, x: &[f64], control: &ControlPoint) -> Result<()> {
        if x.len() != self.classes {
            return Err(Error::InvalidInput(format!(
                "state has dimension {}, model has {} classes",
                x.len(),
                self.classes
            )));
        }
        control.check_dims(self.classes, self.stations)?;
        control.check()
    }

    /// Fills `scratch.y`, `scratch.z` and `scratch.psi`.
    pub fn lift_into(&self, x: &[f64], control: &ControlPoint, scratch: &mut Scratch) {
        let s: f64 = x.iter().sum();
        let pos = s.max(0.0);
        let neg = (-s).max(0.0);
        for i in 0..self.classes {
            scratch.y[i] = pos * control.u[i];
            scratch.alpha[i] = x[i] - scratch.y[i];
        }
        for j in 0..self.stations {
            scratch.z[j] = neg * control.v[j];
            scratch.beta[j] = -scratch.z[j];
        }
        self.map
            .solve_in_place(&mut scratch.alpha, &mut scratch.beta, &mut scratch.psi);
    }

    /// `b_i = -sum_j mu_ij psi_ij - theta_i (e.x)^+ u_i + ell_i`.
    pub fn drift_into(
        &self,
        x: &[f64],
        control: &ControlPoint,
        scratch: &mut Scratch,
        out: &mut [f64],
    ) {
        self.lift_into(x, control, scratch);
        for i in 0..self.classes {
            out[i] = self.ell[i] - self.theta[i] * scratch.y[i];
        }
        for (e, &flow) in scratch.psi.iter().enumerate() {
            out[self.edge_class[e]] -= self.edge_mu[e] * flow;
        }
    }
}
