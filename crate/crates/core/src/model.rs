//! Buffer-station tree model: rates, fluid constants, control space, running
//! cost, and the combinatorics (levels, parents, leaf peeling) of the tree.
//!
//! Classes are indexed `0..I` and stations `0..J` internally. Whenever a node
//! is shown to a user it carries its global label: classes are `1..=I` and
//! stations `I+1..=I+J`, so the single-edge model has nodes 1 and 2.
//!
//! The static fluid constants `x*` and `psi*` are inputs. Validation checks
//! them against the balance relations
//!
//! ```text
//! sum_i psi*_ij        = nu_j       (every station fully busy)
//! sum_j mu_ij psi*_ij  = lambda_i   (critical load)
//! sum_j psi*_ij        = x*_i
//! ```
//!
//! which is our reading of the heavy-traffic scaling; the constants are
//! not derived from a fluid optimization problem.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Absolute tolerance used for the fluid balance checks.
pub const BALANCE_TOL: f64 = 1e-9;

/// A node of the activity graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Node {
    Class(usize),
    Station(usize),
}

impl Node {
    pub fn is_class(self) -> bool {
        matches!(self, Node::Class(_))
    }

    /// Position in the global ordering (classes first, then stations).
    pub fn index(self, classes: usize) -> usize {
        match self {
            Node::Class(i) => i,
            Node::Station(j) => classes + j,
        }
    }

    pub fn from_index(index: usize, classes: usize) -> Node {
        if index < classes {
            Node::Class(index)
        } else {
            Node::Station(index - classes)
        }
    }

    /// One-based global label (classes `1..=I`, stations `I+1..=I+J`).
    pub fn label(self, classes: usize) -> usize {
        self.index(classes) + 1
    }
}

/// An activity `(i, j)`: class `i` may be served at station `j` at rate `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activity {
    pub class: usize,
    pub station: usize,
    pub mu: f64,
    pub psi_star: f64,
}

/// Per-class first and second order parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    /// Abandonment rate.
    pub theta: f64,
    /// Drift constant of the driving Brownian motion.
    pub ell: f64,
    /// Diffusion coefficient.
    pub r: f64,
    /// First order arrival rate.
    pub lambda: f64,
    /// Static fluid headcount.
    pub x_star: f64,
}

/// The buffer-station model. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    classes: usize,
    stations: usize,
    activities: Vec<Activity>,
    /// `edge_of[i][j]` is the activity index of `(i, j)`, if any.
    edge_of: Vec<Vec<Option<usize>>>,
    class_params: Vec<ClassParams>,
    nu: Vec<f64>,
    gamma: f64,
    duplicate_edges: Vec<(usize, usize)>,
}

impl TreeModel {
    /// Assembles a model. Only index ranges are checked here; everything else
    /// is reported by [`TreeModel::validate`].
    pub fn new(
        classes: usize,
        stations: usize,
        activities: Vec<Activity>,
        class_params: Vec<ClassParams>,
        nu: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if classes == 0 || stations == 0 {
            return Err(invalid("a model needs at least one class and one station"));
        }
        if class_params.len() != classes {
            return Err(invalid(format!(
                "expected {classes} class parameter records, got {}",
                class_params.len()
            )));
        }
        if nu.len() != stations {
            return Err(invalid(format!(
                "expected {stations} station capacities, got {}",
                nu.len()
            )));
        }
        let mut edge_of = vec![vec![None; stations]; classes];
        let mut kept = Vec::with_capacity(activities.len());
        let mut duplicate_edges = Vec::new();
        for a in activities {
            if a.class >= classes || a.station >= stations {
                return Err(Error::Structure(format!(
                    "activity ({}, {}) refers to a node outside the model",
                    a.class, a.station
                )));
            }
            if edge_of[a.class][a.station].is_some() {
                duplicate_edges.push((a.class, a.station));
                continue;
            }
            edge_of[a.class][a.station] = Some(kept.len());
            kept.push(a);
        }
        Ok(Self {
            classes,
            stations,
            activities: kept,
            edge_of,
            class_params,
            nu,
            gamma,
            duplicate_edges,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn node_count(&self) -> usize {
        self.classes + self.stations
    }

    pub fn activities(&self) -> &[Activity] {
        &self.activities
    }

    pub fn edge_count(&self) -> usize {
        self.activities.len()
    }

    pub fn edge_index(&self, class: usize, station: usize) -> Option<usize> {
        self.edge_of.get(class)?.get(station).copied().flatten()
    }

    /// Service rate, zero off the edge set.
    pub fn mu(&self, class: usize, station: usize) -> f64 {
        self.edge_index(class, station)
            .map_or(0.0, |e| self.activities[e].mu)
    }

    pub fn psi_star(&self, class: usize, station: usize) -> f64 {
        self.edge_index(class, station)
            .map_or(0.0, |e| self.activities[e].psi_star)
    }

    pub fn class_params(&self) -> &[ClassParams] {
        &self.class_params
    }

    pub fn theta(&self, class: usize) -> f64 {
        self.class_params[class].theta
    }

    pub fn ell(&self, class: usize) -> f64 {
        self.class_params[class].ell
    }

    pub fn r(&self, class: usize) -> f64 {
        self.class_params[class].r
    }

    pub fn lambda(&self, class: usize) -> f64 {
        self.class_params[class].lambda
    }

    pub fn x_star(&self, class: usize) -> f64 {
        self.class_params[class].x_star
    }

    pub fn nu(&self, station: usize) -> f64 {
        self.nu[station]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Neighbours of a node in the activity graph.
    pub fn neighbors(&self, node: Node) -> Vec<Node> {
        match node {
            Node::Class(i) => (0..self.stations)
                .filter(|&j| self.edge_of[i][j].is_some())
                .map(Node::Station)
                .collect(),
            Node::Station(j) => (0..self.classes)
                .filter(|&i| self.edge_of[i][j].is_some())
                .map(Node::Class)
                .collect(),
        }
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for a in &self.activities {
            let u = a.class;
            let v = self.classes + a.station;
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    fn bfs_distances(adj: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; adj.len()];
        dist[start] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap_or(0);
            for &v in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        let adj = self.adjacency();
        Self::bfs_distances(&adj, 0).iter().all(Option::is_some)
    }

    /// Longest shortest path between two nodes, `None` when disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let adj = self.adjacency();
        let mut best = 0;
        for s in 0..adj.len() {
            for d in Self::bfs_distances(&adj, s) {
                best = best.max(d?);
            }
        }
        Some(best)
    }

    /// True when the activity graph is a tree.
    pub fn is_tree(&self) -> bool {
        self.duplicate_edges.is_empty()
            && self.edge_count() + 1 == self.node_count()
            && self.is_connected()
    }

    pub(crate) fn require_tree(&self) -> Result<()> {
        if self.is_tree() {
            Ok(())
        } else {
            Err(Error::Structure(format!(
                "activity graph with {} nodes and {} edges is not a tree",
                self.node_count(),
                self.edge_count()
            )))
        }
    }

    /// Checks every model invariant and reports the violations found.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let nodes = self.node_count();
        let connected = self.is_connected();
        if !connected {
            violations.push(Violation::Disconnected);
        }
        for &(i, j) in &self.duplicate_edges {
            violations.push(Violation::DuplicateEdge {
                class: i,
                station: j,
            });
        }
        let edges = self.edge_count() + self.duplicate_edges.len();
        if edges + 1 != nodes {
            violations.push(Violation::EdgeCount {
                edges,
                expected: nodes - 1,
            });
        }
        if !(self.gamma > 0.0) {
            violations.push(Violation::Parameter(format!(
                "discount rate gamma = {} must be positive",
                self.gamma
            )));
        }
        for a in &self.activities {
            if !(a.mu > 0.0) {
                violations.push(Violation::Parameter(format!(
                    "service rate on activity {} must be positive, got {}",
                    self.edge_label(a.class, a.station),
                    a.mu
                )));
            }
            if !(a.psi_star >= 0.0) {
                violations.push(Violation::Parameter(format!(
                    "psi* on activity {} must be nonnegative, got {}",
                    self.edge_label(a.class, a.station),
                    a.psi_star
                )));
            }
        }
        for (i, p) in self.class_params.iter().enumerate() {
            let label = i + 1;
            if !(p.theta >= 0.0) {
                violations.push(Violation::Parameter(format!(
                    "theta of class {label} must be nonnegative, got {}",
                    p.theta
                )));
            }
            if !(p.r > 0.0) {
                violations.push(Violation::Parameter(format!(
                    "r of class {label} must be positive, got {}",
                    p.r
                )));
            }
            if !(p.lambda > 0.0) {
                violations.push(Violation::Parameter(format!(
                    "lambda of class {label} must be positive, got {}",
                    p.lambda
                )));
            }
            if !p.ell.is_finite() {
                violations.push(Violation::Parameter(format!(
                    "ell of class {label} must be finite"
                )));
            }
        }
        for (j, &nu) in self.nu.iter().enumerate() {
            if !(nu > 0.0) {
                violations.push(Violation::Parameter(format!(
                    "nu of station {} must be positive, got {nu}",
                    self.classes + j + 1
                )));
            }
        }
        for j in 0..self.stations {
            let total: f64 = (0..self.classes).map(|i| self.psi_star(i, j)).sum();
            if (total - self.nu[j]).abs() > BALANCE_TOL {
                violations.push(Violation::StationBalance {
                    station: j,
                    total,
                    nu: self.nu[j],
                });
            }
        }
        for i in 0..self.classes {
            let served: f64 = (0..self.stations)
                .map(|j| self.mu(i, j) * self.psi_star(i, j))
                .sum();
            if (served - self.lambda(i)).abs() > BALANCE_TOL {
                violations.push(Violation::LoadBalance {
                    class: i,
                    served,
                    lambda: self.lambda(i),
                });
            }
            let occupied: f64 = (0..self.stations).map(|j| self.psi_star(i, j)).sum();
            if (occupied - self.x_star(i)).abs() > BALANCE_TOL {
                violations.push(Violation::Occupancy {
                    class: i,
                    occupied,
                    x_star: self.x_star(i),
                });
            }
        }
        ValidationReport {
            classes: self.classes,
            violations,
            connected,
            diameter: self.diameter(),
        }
    }

    fn edge_label(&self, class: usize, station: usize) -> String {
        format!("({}, {})", class + 1, self.classes + station + 1)
    }

    /// The class-station tree built from explicit fluid constants; `lambda`,
    /// `x*` and `nu` are derived from `psi*` so the balance relations hold.
    pub fn builder(classes: usize, stations: usize) -> ModelBuilder {
        ModelBuilder::new(classes, stations)
    }
}

/// A single violated model invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Disconnected,
    EdgeCount {
        edges: usize,
        expected: usize,
    },
    DuplicateEdge {
        class: usize,
        station: usize,
    },
    Parameter(String),
    StationBalance {
        station: usize,
        total: f64,
        nu: f64,
    },
    LoadBalance {
        class: usize,
        served: f64,
        lambda: f64,
    },
    Occupancy {
        class: usize,
        occupied: f64,
        x_star: f64,
    },
}

/// Outcome of [`TreeModel::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    classes: usize,
    pub violations: Vec<Violation>,
    pub connected: bool,
    pub diameter: Option<usize>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(|v| self.describe(v)).collect()
    }

    fn describe(&self, v: &Violation) -> String {
        let class = |i: usize| i + 1;
        let station = |j: usize| self.classes + j + 1;
        match v {
            Violation::Disconnected => "activity graph is not connected".to_string(),
            Violation::EdgeCount { edges, expected } => {
                format!("activity graph has {edges} edges, a tree on these nodes has {expected}")
            }
            Violation::DuplicateEdge {
                class: i,
                station: j,
            } => {
                format!("activity ({}, {}) listed twice", class(*i), station(*j))
            }
            Violation::Parameter(msg) => msg.clone(),
            Violation::StationBalance {
                station: j,
                total,
                nu,
            } => format!(
                "station {}: sum of psi* is {total}, capacity nu is {nu}",
                station(*j)
            ),
            Violation::LoadBalance {
                class: i,
                served,
                lambda,
            } => format!(
                "class {}: fluid service rate sum mu*psi* is {served}, lambda is {lambda}",
                class(*i)
            ),
            Violation::Occupancy {
                class: i,
                occupied,
                x_star,
            } => format!(
                "class {}: sum of psi* is {occupied}, x* is {x_star}",
                class(*i)
            ),
        }
    }
}

/// Builds a model from `(class, station, mu, psi*)` activities, deriving the
/// fluid quantities that the balance relations pin down.
#[derive(Debug, Clone)]
pub struct ModelBuilder {
    classes: usize,
    stations: usize,
    activities: Vec<Activity>,
    theta: Vec<f64>,
    ell: Vec<f64>,
    r: Vec<f64>,
    gamma: f64,
}

impl ModelBuilder {
    pub fn new(classes: usize, stations: usize) -> Self {
        Self {
            classes,
            stations,
            activities: Vec::new(),
            theta: vec![0.0; classes],
            ell: vec![0.0; classes],
            r: vec![1.0; classes],
            gamma: 1.0,
        }
    }

    /// Adds activity `(class, station)` with zero-based indices.
    pub fn edge(mut self, class: usize, station: usize, mu: f64, psi_star: f64) -> Self {
        self.activities.push(Activity {
            class,
            station,
            mu,
            psi_star,
        });
        self
    }

    pub fn theta(mut self, theta: &[f64]) -> Self {
        self.theta = theta.to_vec();
        self
    }

    pub fn ell(mut self, ell: &[f64]) -> Self {
        self.ell = ell.to_vec();
        self
    }

    pub fn r(mut self, r: &[f64]) -> Self {
        self.r = r.to_vec();
        self
    }

    pub fn gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn build(self) -> Result<TreeModel> {
        if self.theta.len() != self.classes
            || self.ell.len() != self.classes
            || self.r.len() != self.classes
        {
            return Err(invalid("per-class parameter vectors must have length I"));
        }
        let mut lambda = vec![0.0; self.classes];
        let mut x_star = vec![0.0; self.classes];
        let mut nu = vec![0.0; self.stations];
        for a in &self.activities {
            if a.class >= self.classes || a.station >= self.stations {
                return Err(Error::Structure(format!(
                    "activity ({}, {}) refers to a node outside the model",
                    a.class, a.station
                )));
            }
            lambda[a.class] += a.mu * a.psi_star;
            x_star[a.class] += a.psi_star;
            nu[a.station] += a.psi_star;
        }
        let class_params = (0..self.classes)
            .map(|i| ClassParams {
                theta: self.theta[i],
                ell: self.ell[i],
                r: self.r[i],
                lambda: lambda[i],
                x_star: x_star[i],
            })
            .collect();
        TreeModel::new(
            self.classes,
            self.stations,
            self.activities,
            class_params,
            nu,
            self.gamma,
        )
    }
}

/// A point `U = (u, v)` of the product of the class and station simplices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Tolerance on the simplex sums when a control point is constructed.
pub const SIMPLEX_TOL: f64 = 1e-9;

impl ControlPoint {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let point = Self { u, v };
        point.check()?;
        Ok(point)
    }

    /// The vertex `(e_class, e_station)`.
    pub fn vertex(classes: usize, stations: usize, class: usize, station: usize) -> Self {
        let mut u = vec![0.0; classes];
        let mut v = vec![0.0; stations];
        u[class] = 1.0;
        v[station] = 1.0;
        Self { u, v }
    }

    pub fn check(&self) -> Result<()> {
        for (name, w) in [("u", &self.u), ("v", &self.v)] {
            if w.is_empty() {
                return Err(invalid(format!("control weights {name} are empty")));
            }
            if w.iter().any(|&x| !(x >= 0.0)) {
                return Err(invalid(format!(
                    "control weights {name} must be nonnegative"
                )));
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > SIMPLEX_TOL {
                return Err(invalid(format!(
                    "control weights {name} sum to {total}, not 1"
                )));
            }
        }
        Ok(())
    }

    pub fn check_dims(&self, classes: usize, stations: usize) -> Result<()> {
        if self.u.len() != classes || self.v.len() != stations {
            return Err(invalid(format!(
                "control has dimensions ({}, {}), model has ({classes}, {stations})",
                self.u.len(),
                self.v.len()
            )));
        }
        Ok(())
    }

    /// `Some((i, j))` when the point is the vertex `(e_i, e_j)`.
    pub fn as_vertex(&self) -> Option<(usize, usize)> {
        fn unit(w: &[f64]) -> Option<usize> {
            let hot = w.iter().position(|&x| x == 1.0)?;
            w.iter()
                .enumerate()
                .all(|(k, &x)| k == hot || x == 0.0)
                .then_some(hot)
        }
        Some((unit(&self.u)?, unit(&self.v)?))
    }

    /// Convex combination `weight * self + (1 - weight) * other`.
    pub fn blend(&self, other: &ControlPoint, weight: f64) -> ControlPoint {
        let mix = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| weight * x + (1.0 - weight) * y)
                .collect()
        };
        ControlPoint {
            u: mix(&self.u, &other.u),
            v: mix(&self.v, &other.v),
        }
    }
}

/// Running cost
///
/// ```text
/// L(x, U) = constant + sum_i c_i ((e.x)^+ u_i)^p + sum_j d_j ((e.x)^- v_j)^q + kappa ||x||_1^m
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningCostSpec {
    pub queue_weights: Vec<f64>,
    pub idle_weights: Vec<f64>,
    #[serde(default = "one")]
    pub queue_exponent: f64,
    #[serde(default = "one")]
    pub idle_exponent: f64,
    #[serde(default)]
    pub norm_weight: f64,
    #[serde(default = "one")]
    pub norm_exponent: f64,
    /// State-independent term; a cost with only this term is bounded.
    #[serde(default)]
    pub constant: f64,
}

fn one() -> f64 {
    1.0
}

impl RunningCostSpec {
    /// `L(x) = sum_i c_i ((e.x)^+ u_i)` with the given queue weights.
    pub fn linear_queue(queue_weights: Vec<f64>, stations: usize) -> Self {
        Self {
            queue_weights,
            idle_weights: vec![0.0; stations],
            queue_exponent: 1.0,
            idle_exponent: 1.0,
            norm_weight: 0.0,
            norm_exponent: 1.0,
            constant: 0.0,
        }
    }

    /// `L = value` everywhere.
    pub fn constant(classes: usize, stations: usize, value: f64) -> Self {
        Self {
            queue_weights: vec![0.0; classes],
            idle_weights: vec![0.0; stations],
            queue_exponent: 1.0,
            idle_exponent: 1.0,
            norm_weight: 0.0,
            norm_exponent: 1.0,
            constant: value,
        }
    }

    pub fn validate(&self, classes: usize, stations: usize) -> Result<()> {
        if self.queue_weights.len() != classes || self.idle_weights.len() != stations {
            return Err(invalid(format!(
                "cost weights have lengths ({}, {}), model has ({classes}, {stations})",
                self.queue_weights.len(),
                self.idle_weights.len()
            )));
        }
        let weights = self
            .queue_weights
            .iter()
            .chain(&self.idle_weights)
            .chain([&self.norm_weight, &self.constant]);
        if weights.into_iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(invalid("cost weights must be finite and nonnegative"));
        }
        for (name, e) in [
            ("queue_exponent", self.queue_exponent),
            ("idle_exponent", self.idle_exponent),
            ("norm_exponent", self.norm_exponent),
        ] {
            if !(e >= 1.0) || !e.is_finite() {
                return Err(invalid(format!("{name} must be at least 1, got {e}")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], control: &ControlPoint) -> f64 {
        let s: f64 = x.iter().sum();
        let pos = s.max(0.0);
        let neg = (-s).max(0.0);
        let mut total = self.constant;
        if pos > 0.0 {
            for (c, u) in self.queue_weights.iter().zip(&control.u) {
                if *c != 0.0 {
                    total += c * power(pos * u, self.queue_exponent);
                }
            }
        }
        if neg > 0.0 {
            for (d, v) in self.idle_weights.iter().zip(&control.v) {
                if *d != 0.0 {
                    total += d * power(neg * v, self.idle_exponent);
                }
            }
        }
        if self.norm_weight != 0.0 {
            let norm: f64 = x.iter().map(|a| a.abs()).sum();
            total += self.norm_weight * power(norm, self.norm_exponent);
        }
        total
    }

    fn has_queue_cost(&self) -> bool {
        self.queue_weights.iter().any(|&c| c > 0.0)
    }

    fn has_idle_cost(&self) -> bool {
        self.idle_weights.iter().any(|&d| d > 0.0)
    }

    /// True when `L(x, .)` is affine on the control set for every `x`.
    pub fn is_affine_in_control(&self) -> bool {
        (!self.has_queue_cost() || self.queue_exponent == 1.0)
            && (!self.has_idle_cost() || self.idle_exponent == 1.0)
    }

    pub fn is_bounded(&self) -> bool {
        !self.has_queue_cost() && !self.has_idle_cost() && self.norm_weight == 0.0
    }

    /// Growth exponent `m_L` in `L <= c_L (1 + ||x||^m_L)`.
    pub fn growth_exponent(&self) -> f64 {
        let mut m: f64 = 1.0;
        if self.has_queue_cost() {
            m = m.max(self.queue_exponent);
        }
        if self.has_idle_cost() {
            m = m.max(self.idle_exponent);
        }
        if self.norm_weight > 0.0 {
            m = m.max(self.norm_exponent);
        }
        m
    }

    /// Constant `c_L` in `L <= c_L (1 + ||x||^m_L)` (l1 norm).
    pub fn growth_constant(&self) -> f64 {
        let max_of = |w: &[f64]| w.iter().copied().fold(0.0_f64, f64::max);
        let c = self.constant
            + max_of(&self.queue_weights)
            + max_of(&self.idle_weights)
            + self.norm_weight;
        if c > 0.0 {
            c
        } else {
            // L == 0; any positive constant bounds it
            1.0
        }
    }

    /// True when `L >= a ||x||^m_L` for all large `||x||`.
    pub fn is_coercive(&self) -> bool {
        self.norm_weight > 0.0 && self.norm_exponent >= self.growth_exponent()
    }

    /// Multiplies every weight by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.queue_weights.iter_mut().for_each(|c| *c *= factor);
        out.idle_weights.iter_mut().for_each(|d| *d *= factor);
        out.norm_weight *= factor;
        out.constant *= factor;
        out
    }
}

#[inline]
fn power(base: f64, exponent: f64) -> f64 {
    if exponent == 1.0 {
        base
    } else if exponent == 2.0 {
        base * base
    } else {
        base.powf(exponent)
    }
}

/// One step of the leaf peeling: `leaf` is removed together with `edge`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeelStep {
    pub leaf: Node,
    pub edge: usize,
}

/// Levels, parents and children of the tree hung from a class root, plus the
/// leaf peeling order used by the lifting map.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeCombinatorics {
    classes: usize,
    pub root: Node,
    pub levels: Vec<Vec<Node>>,
    parent: Vec<Option<Node>>,
    children: Vec<Vec<Node>>,
    level_of: Vec<usize>,
    /// Leaves removed one per step until a single edge is left; the final
    /// entry is that edge with its class endpoint.
    pub peel_order: Vec<PeelStep>,
    pub diameter: usize,
}

impl TreeCombinatorics {
    pub fn build(model: &TreeModel, root: Node) -> Result<Self> {
        let classes = model.classes();
        let Node::Class(root_class) = root else {
            return Err(invalid("the root must be a class node"));
        };
        if root_class >= classes {
            return Err(invalid(format!(
                "root class {} is out of range",
                root_class + 1
            )));
        }
        model.require_tree()?;
        let n = model.node_count();
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut level_of = vec![usize::MAX; n];
        let mut levels: Vec<Vec<Node>> = vec![vec![root]];
        level_of[root.index(classes)] = 0;
        loop {
            let mut next = Vec::new();
            for &node in levels.last().into_iter().flatten() {
                let k = level_of[node.index(classes)];
                for nb in model.neighbors(node) {
                    let idx = nb.index(classes);
                    if level_of[idx] == usize::MAX {
                        level_of[idx] = k + 1;
                        parent[idx] = Some(node);
                        children[node.index(classes)].push(nb);
                        next.push(nb);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            next.sort();
            levels.push(next);
        }
        let peel_order = peel_order(model);
        let diameter = model.diameter().unwrap_or(0);
        Ok(Self {
            classes,
            root,
            levels,
            parent,
            children,
            level_of,
            peel_order,
            diameter,
        })
    }

    /// Builds the combinatorics rooted at the lowest-index class.
    pub fn rooted_at_first_class(model: &TreeModel) -> Result<Self> {
        Self::build(model, Node::Class(0))
    }

    pub fn parent(&self, node: Node) -> Option<Node> {
        self.parent[node.index(self.classes)]
    }

    pub fn children(&self, node: Node) -> &[Node] {
        &self.children[node.index(self.classes)]
    }

    pub fn level(&self, node: Node) -> usize {
        self.level_of[node.index(self.classes)]
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }
}

/// Leaf peeling order, removing the smallest-index leaf first.
pub(crate) fn peel_order(model: &TreeModel) -> Vec<PeelStep> {
    let classes = model.classes();
    let n = model.node_count();
    let mut degree = vec![0usize; n];
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e, a) in model.activities().iter().enumerate() {
        let u = a.class;
        let v = classes + a.station;
        degree[u] += 1;
        degree[v] += 1;
        incident[u].push(e);
        incident[v].push(e);
    }
    let mut edge_alive = vec![true; model.edge_count()];
    let mut leaves: BTreeSet<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
    let mut remaining = model.edge_count();
    let mut order = Vec::with_capacity(remaining);
    while remaining > 0 {
        let Some(&leaf) = leaves.iter().next() else {
            break;
        };
        leaves.remove(&leaf);
        let Some(&edge) = incident[leaf].iter().find(|&&e| edge_alive[e]) else {
            continue;
        };
        edge_alive[edge] = false;
        remaining -= 1;
        order.push(PeelStep {
            leaf: Node::from_index(leaf, classes),
            edge,
        });
        let a = model.activities()[edge];
        let other = if leaf == a.class {
            classes + a.station
        } else {
            a.class
        };
        degree[leaf] = 0;
        degree[other] -= 1;
        if degree[other] == 1 {
            leaves.insert(other);
        } else if degree[other] == 0 {
            leaves.remove(&other);
        }
    }
    order
}

/// Regimes in which the value function is characterized by the HJB equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RegimeCase {
    /// Rates depend only on the class or only on the station; no abandonment.
    RateStructure,
    /// Diameter at most 3 and `theta_i <= mu_ij` on every activity.
    ShallowTree,
    /// Coercive cost and `theta_i <= mu_ij` on some activity.
    CoerciveCost,
    /// Bounded cost.
    BoundedCost,
}

impl RegimeCase {
    pub fn roman(self) -> &'static str {
        match self {
            RegimeCase::RateStructure => "i",
            RegimeCase::ShallowTree => "ii",
            RegimeCase::CoerciveCost => "iii",
            RegimeCase::BoundedCost => "iv",
        }
    }
}

impl fmt::Display for RegimeCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.roman())
    }
}

/// `theta_i <= mu_ij` on every activity.
pub fn abandonment_dominated_everywhere(model: &TreeModel) -> bool {
    model
        .activities()
        .iter()
        .all(|a| model.theta(a.class) <= a.mu)
}

/// `theta_i <= mu_ij` on at least one activity.
pub fn abandonment_dominated_somewhere(model: &TreeModel) -> bool {
    model
        .activities()
        .iter()
        .any(|a| model.theta(a.class) <= a.mu)
}

fn rates_depend_on_one_side(model: &TreeModel) -> bool {
    let mut by_class: BTreeMap<usize, f64> = BTreeMap::new();
    let mut by_station: BTreeMap<usize, f64> = BTreeMap::new();
    let mut class_only = true;
    let mut station_only = true;
    for a in model.activities() {
        if *by_class.entry(a.class).or_insert(a.mu) != a.mu {
            class_only = false;
        }
        if *by_station.entry(a.station).or_insert(a.mu) != a.mu {
            station_only = false;
        }
    }
    class_only || station_only
}

/// The set of regimes whose hypotheses the model and cost satisfy.
pub fn classify_case(model: &TreeModel, cost: &RunningCostSpec) -> BTreeSet<RegimeCase> {
    let mut cases = BTreeSet::new();
    let no_abandonment = (0..model.classes()).all(|i| model.theta(i) == 0.0);
    if no_abandonment && rates_depend_on_one_side(model) {
        cases.insert(RegimeCase::RateStructure);
    }
    if model.diameter().is_some_and(|d| d <= 3) && abandonment_dominated_everywhere(model) {
        cases.insert(RegimeCase::ShallowTree);
    }
    if cost.is_coercive() && abandonment_dominated_somewhere(model) {
        cases.insert(RegimeCase::CoerciveCost);
    }
    if cost.is_bounded() {
        cases.insert(RegimeCase::BoundedCost);
    }
    cases
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn single_edge_is_valid_with_diameter_one() {
        let model = fixtures::single_edge(1.0, 0.0);
        let report = model.validate();
        assert!(report.is_valid(), "{:?}", report.messages());
        assert_eq!(report.diameter, Some(1));
    }

    #[test]
    fn n_model_is_valid_with_diameter_three() {
        let model = fixtures::n_model([1.0, 2.0, 3.0], [0.5, 0.5]);
        let report = model.validate();
        assert!(report.is_valid(), "{:?}", report.messages());
        assert_eq!(report.diameter, Some(3));
    }

    #[test]
    fn complete_bipartite_is_rejected_for_edge_count() {
        let model = fixtures::complete_bipartite_2x2();
        let report = model.validate();
        assert!(!report.is_valid());
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::EdgeCount {
                edges: 4,
                expected: 3
            }
        )));
        assert!(report.connected);
    }

    #[test]
    fn disconnected_graph_with_right_edge_count_is_rejected() {
        // class 2 has no activity
        let model = TreeModel::builder(2, 2)
            .edge(0, 0, 1.0, 0.5)
            .edge(0, 1, 1.0, 0.5)
            .build()
            .unwrap();
        let report = model.validate();
        assert!(!report.connected);
        assert!(report.violations.contains(&Violation::Disconnected));
        assert_eq!(report.diameter, None);
    }

    #[test]
    fn fluid_balance_violations_are_reported() {
        let model = TreeModel::new(
            1,
            1,
            vec![Activity {
                class: 0,
                station: 0,
                mu: 2.0,
                psi_star: 1.0,
            }],
            vec![ClassParams {
                theta: 0.0,
                ell: 0.0,
                r: 1.0,
                lambda: 1.0,
                x_star: 1.0,
            }],
            vec![1.0],
            1.0,
        )
        .unwrap();
        let report = model.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0],
            Violation::LoadBalance { .. }
        ));
    }

    #[test]
    fn duplicate_edges_are_reported() {
        let model = TreeModel::builder(1, 1)
            .edge(0, 0, 1.0, 1.0)
            .edge(0, 0, 1.0, 0.0)
            .build()
            .unwrap();
        let report = model.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DuplicateEdge { .. })));
    }

    #[test]
    fn single_edge_levels() {
        let model = fixtures::single_edge(1.0, 0.0);
        let comb = TreeCombinatorics::build(&model, Node::Class(0)).unwrap();
        assert_eq!(
            comb.levels,
            vec![vec![Node::Class(0)], vec![Node::Station(0)]]
        );
        assert_eq!(comb.parent(Node::Station(0)), Some(Node::Class(0)));
        assert_eq!(comb.peel_order.len(), 1);
    }

    #[test]
    fn n_model_levels_match_breadth_first_search() {
        let model = fixtures::n_model([1.0, 2.0, 3.0], [0.0, 0.0]);
        let comb = TreeCombinatorics::build(&model, Node::Class(0)).unwrap();
        assert_eq!(
            comb.levels,
            vec![
                vec![Node::Class(0)],
                vec![Node::Station(0)],
                vec![Node::Class(1)],
                vec![Node::Station(1)],
            ]
        );
        assert_eq!(comb.diameter, 3);
    }

    #[test]
    fn deep_tree_levels_alternate_node_kinds() {
        // root i0 with two stations below, each carrying two classes
        let model = fixtures::two_level_tree();
        let comb = TreeCombinatorics::build(&model, Node::Class(0)).unwrap();
        assert_eq!(comb.levels[0], vec![Node::Class(0)]);
        assert_eq!(comb.levels[1], vec![Node::Station(0), Node::Station(1)]);
        assert_eq!(
            comb.levels[2],
            vec![
                Node::Class(1),
                Node::Class(2),
                Node::Class(3),
                Node::Class(4)
            ]
        );
        for (k, level) in comb.levels.iter().enumerate() {
            for node in level {
                assert_eq!(node.is_class(), k % 2 == 0);
            }
        }
    }

    #[test]
    fn station_root_is_rejected() {
        let model = fixtures::single_edge(1.0, 0.0);
        assert!(TreeCombinatorics::build(&model, Node::Station(0)).is_err());
    }

    #[test]
    fn non_tree_combinatorics_is_a_structural_error() {
        let model = fixtures::complete_bipartite_2x2();
        assert!(matches!(
            TreeCombinatorics::build(&model, Node::Class(0)),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn peel_order_ends_with_single_edge() {
        let model = fixtures::two_level_tree();
        let order = peel_order(&model);
        assert_eq!(order.len(), model.edge_count());
        let mut seen = BTreeSet::new();
        for step in &order {
            assert!(seen.insert(step.edge));
        }
    }

    #[test]
    fn single_edge_without_abandonment_is_in_cases_i_and_ii() {
        let model = fixtures::single_edge(1.0, 0.0);
        let cost = RunningCostSpec::linear_queue(vec![1.0], 1);
        let cases = classify_case(&model, &cost);
        assert!(cases.contains(&RegimeCase::RateStructure));
        assert!(cases.contains(&RegimeCase::ShallowTree));
    }

    #[test]
    fn n_model_with_mixed_rates_is_case_ii_only() {
        let model = fixtures::n_model([1.0, 2.0, 3.0], [0.5, 0.5]);
        let cost = RunningCostSpec::linear_queue(vec![1.0, 1.0], 2);
        let cases = classify_case(&model, &cost);
        assert_eq!(cases, BTreeSet::from([RegimeCase::ShallowTree]));
    }

    #[test]
    fn coercive_cost_gives_case_iii() {
        let model = fixtures::n_model([1.0, 2.0, 3.0], [5.0, 0.5]);
        let mut cost = RunningCostSpec::linear_queue(vec![1.0, 1.0], 2);
        cost.norm_weight = 1.0;
        cost.norm_exponent = 2.0;
        let cases = classify_case(&model, &cost);
        assert!(cases.contains(&RegimeCase::CoerciveCost));
        assert!(!cases.contains(&RegimeCase::ShallowTree));
    }

    #[test]
    fn bounded_cost_gives_case_iv() {
        let model = fixtures::n_model([1.0, 2.0, 3.0], [5.0, 5.0]);
        let cost = RunningCostSpec::constant(2, 2, 1.0);
        let cases = classify_case(&model, &cost);
        assert_eq!(cases, BTreeSet::from([RegimeCase::BoundedCost]));
    }

    #[test]
    fn running_cost_matches_formula() {
        let cost = RunningCostSpec {
            queue_weights: vec![2.0, 1.0],
            idle_weights: vec![3.0, 0.5],
            queue_exponent: 2.0,
            idle_exponent: 1.0,
            norm_weight: 0.5,
            norm_exponent: 1.0,
            constant: 0.25,
        };
        let u = ControlPoint::new(vec![0.25, 0.75], vec![1.0, 0.0]).unwrap();
        // e.x = 2 > 0: queue part 2*(0.5)^2 + 1*(1.5)^2 = 2.75, norm 0.5*4 = 2
        let l = cost.eval(&[3.0, -1.0], &u);
        assert!((l - (0.25 + 2.75 + 2.0)).abs() < 1e-12);
        // e.x = -2 < 0: idle part 3*2 = 6, norm 0.5*2 = 1
        let l = cost.eval(&[-1.0, -1.0], &u);
        assert!((l - (0.25 + 6.0 + 1.0)).abs() < 1e-12);
        assert!(!cost.is_affine_in_control());
        assert_eq!(cost.growth_exponent(), 2.0);
    }

    #[test]
    fn control_point_rejects_points_off_the_simplex() {
        assert!(ControlPoint::new(vec![0.5, 0.6], vec![1.0]).is_err());
        assert!(ControlPoint::new(vec![-0.1, 1.1], vec![1.0]).is_err());
        let p = ControlPoint::vertex(2, 3, 1, 2);
        assert_eq!(p.as_vertex(), Some((1, 2)));
        assert!(ControlPoint::new(vec![0.5, 0.5], vec![1.0])
            .unwrap()
            .as_vertex()
            .is_none());
    }
}
