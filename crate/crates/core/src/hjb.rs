//! Finite-difference solution of
//!
//! ```text
//! (1/2) sum_i r_i^2 f_ii + H(x, Df) - gamma f = 0,
//! H(x, p) = min_U [ b(x, U) . p + L(x, U) ]
//! ```
//!
//! on a box, by policy iteration on a monotone upwind discretization.
//!
//! For a fixed control field the scheme is the linear system
//!
//! ```text
//! gamma f - sum_d (r_d^2 / 2) D_dd f - sum_d (b_d^+ D_d^+ f + b_d^- D_d^- f) = L,
//! ```
//!
//! an M-matrix. Each iteration solves it and then lets every grid point switch
//! to a candidate control that strictly lowers the upwind Hamiltonian.
//! Candidates are the `I * J` vertex pairs of the control set; when the cost
//! is not affine in the control the continuous minimizer of the Hamiltonian at
//! the current central-difference gradient is added.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::flow::Dynamics;
use crate::grid::{Grid, PolicyField, ValueField};
use crate::io::model_hash;
use crate::model::{ControlPoint, RunningCostSpec, TreeModel};
use crate::sim::{mc_cost, McConfig, Policy};

/// Largest supported state dimension for grid solves.
pub const MAX_DIMENSION: usize = 3;

/// Relative tolerance under which two Hamiltonian values count as tied.
pub const TIE_TOL: f64 = 1e-12;

fn tied(a: f64, best: f64) -> bool {
    a <= best + TIE_TOL * best.abs().max(1.0)
}

/// Values of `b(x, U) . p` at the vertex pairs, split as
/// `K + a_i + c_j` with `K` dropped (only one of `a`, `c` is nonzero, by the
/// sign of `e.x`).
struct Separated {
    class_part: Vec<f64>,
    station_part: Vec<f64>,
}

fn separate(dynamics: &Dynamics, x: &[f64], p: &[f64]) -> Separated {
    let (classes, stations) = (dynamics.classes(), dynamics.stations());
    let mut scratch = dynamics.scratch();
    let mut b = vec![0.0; classes];
    let mut dot = |u: usize, v: usize, b: &mut Vec<f64>| -> f64 {
        let c = ControlPoint::vertex(classes, stations, u, v);
        dynamics.drift_into(x, &c, &mut scratch, b);
        b.iter().zip(p).map(|(bi, pi)| bi * pi).sum()
    };
    let base = dot(0, 0, &mut b);
    let class_part = (0..classes)
        .map(|i| {
            if i == 0 {
                0.0
            } else {
                dot(i, 0, &mut b) - base
            }
        })
        .collect();
    let station_part = (0..stations)
        .map(|j| {
            if j == 0 {
                0.0
            } else {
                dot(0, j, &mut b) - base
            }
        })
        .collect();
    Separated {
        class_part,
        station_part,
    }
}

/// Minimizes `sum_k alpha_k w_k + beta_k w_k^power` over the simplex, with
/// `beta >= 0` and `power > 1`, by bisection on the multiplier of the
/// simplex constraint. Ties go to the smallest index.
fn water_fill(alpha: &[f64], beta: &[f64], power: f64) -> Vec<f64> {
    let n = alpha.len();
    let amount = |lambda: f64, k: usize| -> f64 {
        if beta[k] == 0.0 || lambda <= alpha[k] {
            0.0
        } else {
            ((lambda - alpha[k]) / (power * beta[k])).powf(1.0 / (power - 1.0))
        }
    };
    let total = |lambda: f64| -> f64 { (0..n).map(|k| amount(lambda, k)).sum() };
    let linear_min = (0..n)
        .filter(|&k| beta[k] == 0.0)
        .map(|k| alpha[k])
        .fold(f64::INFINITY, f64::min);
    if linear_min.is_finite() && total(linear_min) <= 1.0 {
        let mut w: Vec<f64> = (0..n).map(|k| amount(linear_min, k)).collect();
        let rest = 1.0 - w.iter().sum::<f64>();
        let first = (0..n)
            .find(|&k| beta[k] == 0.0 && tied(alpha[k], linear_min))
            .expect("a linear component attains the minimum");
        w[first] += rest;
        return w;
    }
    let mut lo = alpha.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = (0..n)
        .filter(|&k| beta[k] > 0.0)
        .map(|k| alpha[k] + power * beta[k])
        .fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    let mut w: Vec<f64> = (0..n).map(|k| amount(hi, k)).collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|a| *a /= sum);
    w
}

fn unit(n: usize, k: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    w[k] = 1.0;
    w
}

fn hamiltonian_with(
    dynamics: &Dynamics,
    cost: &RunningCostSpec,
    x: &[f64],
    p: &[f64],
) -> (f64, ControlPoint) {
    let (classes, stations) = (dynamics.classes(), dynamics.stations());
    let mut scratch = dynamics.scratch();
    let mut b = vec![0.0; classes];
    let mut value_of = |c: &ControlPoint| -> f64 {
        dynamics.drift_into(x, c, &mut scratch, &mut b);
        b.iter().zip(p).map(|(bi, pi)| bi * pi).sum::<f64>() + cost.eval(x, c)
    };
    if cost.is_affine_in_control() {
        let mut best = f64::INFINITY;
        let mut values = Vec::with_capacity(classes * stations);
        for i in 0..classes {
            for j in 0..stations {
                let v = value_of(&ControlPoint::vertex(classes, stations, i, j));
                best = best.min(v);
                values.push(v);
            }
        }
        let k = values
            .iter()
            .position(|&v| tied(v, best))
            .expect("a minimum exists");
        let control = ControlPoint::vertex(classes, stations, k / stations, k % stations);
        return (best, control);
    }
    let s: f64 = x.iter().sum();
    let sep = separate(dynamics, x, p);
    let control = if s > 0.0 {
        let (alpha, beta) =
            split_cost(&sep.class_part, &cost.queue_weights, s, cost.queue_exponent);
        let u = if cost.queue_exponent == 1.0 {
            unit(classes, argmin_first(&alpha))
        } else {
            water_fill(&alpha, &beta, cost.queue_exponent)
        };
        ControlPoint {
            u,
            v: unit(stations, 0),
        }
    } else if s < 0.0 {
        let (alpha, beta) = split_cost(
            &sep.station_part,
            &cost.idle_weights,
            -s,
            cost.idle_exponent,
        );
        let v = if cost.idle_exponent == 1.0 {
            unit(stations, argmin_first(&alpha))
        } else {
            water_fill(&alpha, &beta, cost.idle_exponent)
        };
        ControlPoint {
            u: unit(classes, 0),
            v,
        }
    } else {
        ControlPoint::vertex(classes, stations, 0, 0)
    };
    (value_of(&control), control)
}

/// Linear and curvature coefficients of `part_k w_k + weight_k (mass w_k)^power`.
fn split_cost(part: &[f64], weights: &[f64], mass: f64, power: f64) -> (Vec<f64>, Vec<f64>) {
    if power == 1.0 {
        let alpha = part
            .iter()
            .zip(weights)
            .map(|(a, c)| a + c * mass)
            .collect();
        (alpha, vec![0.0; part.len()])
    } else {
        let scale = mass.powf(power);
        (part.to_vec(), weights.iter().map(|c| c * scale).collect())
    }
}

fn argmin_first(values: &[f64]) -> usize {
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    values
        .iter()
        .position(|&v| tied(v, best))
        .expect("nonempty")
}

/// `H(x, p)` and a minimizing control. Vertex enumeration in the affine case;
/// otherwise the exact minimizer of the separable convex problem on the
/// active simplex. Ties go to the smallest class, then the smallest station.
pub fn hamiltonian(
    model: &TreeModel,
    cost: &RunningCostSpec,
    x: &[f64],
    p: &[f64],
) -> Result<(f64, ControlPoint)> {
    cost.validate(model.classes(), model.stations())?;
    if x.len() != model.classes() || p.len() != model.classes() {
        return Err(invalid("state and gradient must have one entry per class"));
    }
    let dynamics = Dynamics::new(model)?;
    Ok(hamiltonian_with(&dynamics, cost, x, p))
}

/// Boundary treatment on the outer face of the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryMode {
    /// Dirichlet data: the simulated discounted cost of the static priority
    /// policy on the first activity with `mu_ij >= theta_i`.
    MonteCarlo { n_paths: usize, dt: f64, seed: u64 },
    /// Zero second difference along the outward normal.
    Extrapolate,
}

impl Default for BoundaryMode {
    fn default() -> Self {
        BoundaryMode::MonteCarlo {
            n_paths: 200,
            dt: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbOptions {
    pub boundary: BoundaryMode,
    /// Stop when the sup-norm change between iterations drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for HjbOptions {
    fn default() -> Self {
        Self {
            boundary: BoundaryMode::default(),
            tolerance: 1e-8,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearSolver {
    Banded,
    GaussSeidel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub iterations: usize,
    /// Sup-norm change of the value after each iteration.
    pub history: Vec<f64>,
    /// Number of grid points that switched control after each iteration.
    pub switches: Vec<usize>,
    pub linear_solver: LinearSolver,
    /// Interior residual of the equation with central differences.
    pub interior_residual: f64,
}

#[derive(Debug, Clone)]
pub struct HjbSolution {
    pub value: ValueField,
    pub report: ConvergenceReport,
}

/// Sparse rows of the discrete operator.
struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn with_capacity(rows: usize, nnz: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(rows + 1);
        row_ptr.push(0);
        Self {
            row_ptr,
            cols: Vec::with_capacity(nnz),
            vals: Vec::with_capacity(nnz),
        }
    }

    fn push(&mut self, col: usize, val: f64) {
        self.cols.push(col);
        self.vals.push(val);
    }

    fn end_row(&mut self) {
        self.row_ptr.push(self.cols.len());
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b]
            .iter()
            .copied()
            .zip(self.vals[a..b].iter().copied())
    }
}

fn solve_banded(matrix: &Csr, rhs: &[f64], bw: usize) -> Result<Vec<f64>> {
    let n = rhs.len();
    let width = 2 * bw + 1;
    let mut band = vec![0.0; n * width];
    // band[r * width + (c + bw - r)] holds A[r][c]
    for r in 0..n {
        for (c, v) in matrix.row(r) {
            band[r * width + c + bw - r] += v;
        }
    }
    let mut b = rhs.to_vec();
    for k in 0..n {
        let pivot = band[k * width + bw];
        if pivot.abs() < 1e-300 || !pivot.is_finite() {
            return Err(Error::InvalidInput("singular discretization matrix".into()));
        }
        let last = (k + bw).min(n - 1);
        for r in k + 1..=last {
            let idx = r * width + k + bw - r;
            let factor = band[idx] / pivot;
            if factor == 0.0 {
                continue;
            }
            band[idx] = 0.0;
            for c in k + 1..=last {
                band[r * width + c + bw - r] -= factor * band[k * width + c + bw - k];
            }
            b[r] -= factor * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let last = (k + bw).min(n - 1);
        let mut acc = b[k];
        for c in k + 1..=last {
            acc -= band[k * width + c + bw - k] * x[c];
        }
        x[k] = acc / band[k * width + bw];
    }
    Ok(x)
}

fn solve_gauss_seidel(matrix: &Csr, rhs: &[f64], start: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    let mut x = start.to_vec();
    for _ in 0..200_000 {
        let mut change = 0.0_f64;
        let mut scale = 1.0_f64;
        for r in 0..n {
            let mut diag = 0.0;
            let mut acc = rhs[r];
            for (c, v) in matrix.row(r) {
                if c == r {
                    diag += v;
                } else {
                    acc -= v * x[c];
                }
            }
            let new = acc / diag;
            change = change.max((new - x[r]).abs());
            scale = scale.max(new.abs());
            x[r] = new;
        }
        if !change.is_finite() {
            return Err(Error::InvalidInput("Gauss-Seidel diverged".into()));
        }
        if change <= 1e-13 * scale {
            return Ok(x);
        }
    }
    Err(Error::NotConverged {
        iterations: 200_000,
        last_update: f64::NAN,
        history: Vec::new(),
    })
}

const BANDED_WORK_LIMIT: f64 = 4e9;

/// Per-point data that does not change between iterations.
struct Problem<'a> {
    model: &'a TreeModel,
    cost: &'a RunningCostSpec,
    grid: &'a Grid,
    dynamics: Dynamics,
    dims: usize,
    vertices: usize,
    /// `drifts[(n * vertices + k) * dims + d]`.
    drifts: Vec<f64>,
    /// `costs[n * vertices + k]`.
    costs: Vec<f64>,
    half_r2: Vec<f64>,
}

/// The control in force at one grid point.
#[derive(Clone)]
struct Choice {
    vertex: Option<usize>,
    drift: Vec<f64>,
    cost: f64,
}

impl<'a> Problem<'a> {
    fn new(model: &'a TreeModel, cost: &'a RunningCostSpec, grid: &'a Grid) -> Result<Self> {
        let dynamics = Dynamics::new(model)?;
        let dims = model.classes();
        let stations = model.stations();
        let vertices = dims * stations;
        let per_point: Vec<(Vec<f64>, Vec<f64>)> = (0..grid.len())
            .into_par_iter()
            .map(|n| {
                let x = grid.point(n);
                let mut scratch = dynamics.scratch();
                let mut b = vec![0.0; dims];
                let mut drifts = Vec::with_capacity(vertices * dims);
                let mut costs = Vec::with_capacity(vertices);
                for k in 0..vertices {
                    let c = ControlPoint::vertex(dims, stations, k / stations, k % stations);
                    dynamics.drift_into(&x, &c, &mut scratch, &mut b);
                    drifts.extend_from_slice(&b);
                    costs.push(cost.eval(&x, &c));
                }
                (drifts, costs)
            })
            .collect();
        let mut drifts = Vec::with_capacity(grid.len() * vertices * dims);
        let mut costs = Vec::with_capacity(grid.len() * vertices);
        for (d, c) in per_point {
            drifts.extend(d);
            costs.extend(c);
        }
        Ok(Self {
            model,
            cost,
            grid,
            dynamics,
            dims,
            vertices,
            drifts,
            costs,
            half_r2: (0..dims).map(|i| 0.5 * model.r(i) * model.r(i)).collect(),
        })
    }

    fn vertex_choice(&self, n: usize, k: usize) -> Choice {
        let off = (n * self.vertices + k) * self.dims;
        Choice {
            vertex: Some(k),
            drift: self.drifts[off..off + self.dims].to_vec(),
            cost: self.costs[n * self.vertices + k],
        }
    }

    fn custom_choice(&self, n: usize, control: ControlPoint) -> Choice {
        let x = self.grid.point(n);
        let mut scratch = self.dynamics.scratch();
        let mut b = vec![0.0; self.dims];
        self.dynamics.drift_into(&x, &control, &mut scratch, &mut b);
        Choice {
            vertex: None,
            cost: self.cost.eval(&x, &control),
            drift: b,
        }
    }

    /// Upwind `b . Df + L` at an interior point.
    fn upwind_value(&self, f: &[f64], n: usize, drift: &[f64], cost: f64) -> f64 {
        let mut total = cost;
        for d in 0..self.dims {
            let s = self.grid.stride(d);
            let h = self.grid.h(d);
            let b = drift[d];
            if b > 0.0 {
                total += b * (f[n + s] - f[n]) / h;
            } else if b < 0.0 {
                total += b * (f[n] - f[n - s]) / h;
            }
        }
        total
    }

    fn central_gradient(&self, f: &[f64], n: usize) -> Vec<f64> {
        central_gradient(self.grid, f, n)
    }

    fn assemble(&self, choices: &[Choice], boundary: &Boundary) -> (Csr, Vec<f64>) {
        let len = self.grid.len();
        let mut m = Csr::with_capacity(len, len * (1 + 2 * self.dims));
        let mut rhs = vec![0.0; len];
        let gamma = self.model.gamma();
        let mut idx = vec![0usize; self.dims];
        for n in 0..len {
            self.grid.multi_index(n, &mut idx);
            if self.grid.is_boundary(n) {
                match boundary {
                    Boundary::Dirichlet(values) => {
                        m.push(n, 1.0);
                        rhs[n] = values[n];
                    }
                    Boundary::Extrapolate => {
                        let (d, low) = (0..self.dims)
                            .find_map(|d| {
                                if idx[d] == 0 {
                                    Some((d, true))
                                } else if idx[d] + 1 == self.grid.axes()[d].points {
                                    Some((d, false))
                                } else {
                                    None
                                }
                            })
                            .expect("boundary point lies on a face");
                        let s = self.grid.stride(d);
                        let (a, b) = if low {
                            (n + s, n + 2 * s)
                        } else {
                            (n - s, n - 2 * s)
                        };
                        m.push(n, 1.0);
                        m.push(a, -2.0);
                        m.push(b, 1.0);
                    }
                }
                m.end_row();
                continue;
            }
            let choice = &choices[n];
            let mut diag = gamma;
            for d in 0..self.dims {
                let s = self.grid.stride(d);
                let h = self.grid.h(d);
                let diff = self.half_r2[d] / (h * h);
                let b = choice.drift[d];
                let up = diff + b.max(0.0) / h;
                let down = diff + (-b).max(0.0) / h;
                diag += up + down;
                m.push(n - s, -down);
                m.push(n + s, -up);
            }
            m.push(n, diag);
            rhs[n] = choice.cost;
            m.end_row();
        }
        (m, rhs)
    }
}

enum Boundary {
    Dirichlet(Vec<f64>),
    Extrapolate,
}

pub(crate) fn central_gradient(grid: &Grid, f: &[f64], n: usize) -> Vec<f64> {
    let mut idx = vec![0usize; grid.dims()];
    grid.multi_index(n, &mut idx);
    (0..grid.dims())
        .map(|d| {
            let s = grid.stride(d);
            let h = grid.h(d);
            let last = grid.axes()[d].points - 1;
            if idx[d] == 0 {
                (f[n + s] - f[n]) / h
            } else if idx[d] == last {
                (f[n] - f[n - s]) / h
            } else {
                (f[n + s] - f[n - s]) / (2.0 * h)
            }
        })
        .collect()
}

fn check_grid(model: &TreeModel, grid: &Grid) -> Result<()> {
    if model.classes() > MAX_DIMENSION {
        return Err(invalid(format!(
            "grid solves support at most {MAX_DIMENSION} classes, the model has {}",
            model.classes()
        )));
    }
    if grid.dims() != model.classes() {
        return Err(Error::GridMismatch(format!(
            "grid has {} axes, model has {} classes",
            grid.dims(),
            model.classes()
        )));
    }
    if !grid.straddles_kink() {
        return Err(invalid(
            "the grid box must contain points on both sides of e.x = 0",
        ));
    }
    Ok(())
}

fn boundary_values(
    model: &TreeModel,
    cost: &RunningCostSpec,
    grid: &Grid,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let policy = Policy::default_static(model)?;
    let config = McConfig::new(n_paths, dt, seed);
    let points: Vec<usize> = (0..grid.len()).filter(|&n| grid.is_boundary(n)).collect();
    let estimates: Vec<Result<f64>> = points
        .par_iter()
        .map(|&n| {
            let est = mc_cost(model, cost, &grid.point(n), &policy, &config)?;
            Ok(est.mean + est.tail_bound)
        })
        .collect();
    let mut values = vec![0.0; grid.len()];
    for (&n, v) in points.iter().zip(estimates) {
        values[n] = v?;
    }
    Ok(values)
}

/// Nodes excluded next to each face when reporting the interior residual.
pub fn report_margin(grid: &Grid) -> usize {
    let smallest = grid.axes().iter().map(|a| a.points).min().unwrap_or(3);
    (smallest / 8).max(1)
}

/// Solves the discrete equation by policy iteration.
pub fn solve_hjb(
    model: &TreeModel,
    cost: &RunningCostSpec,
    grid: &Grid,
    options: &HjbOptions,
) -> Result<HjbSolution> {
    cost.validate(model.classes(), model.stations())?;
    check_grid(model, grid)?;
    let gamma = model.gamma();
    if !(gamma > 0.0) {
        return Err(invalid("the discounted problem needs gamma > 0"));
    }
    if !(options.tolerance > 0.0) || options.max_iterations == 0 {
        return Err(invalid("tolerance and iteration cap must be positive"));
    }
    let boundary = match options.boundary {
        BoundaryMode::MonteCarlo { n_paths, dt, seed } => {
            Boundary::Dirichlet(boundary_values(model, cost, grid, n_paths, dt, seed)?)
        }
        BoundaryMode::Extrapolate => Boundary::Extrapolate,
    };
    let problem = Problem::new(model, cost, grid)?;
    let len = grid.len();
    let max_stride = grid.stride(0);
    let bw = match boundary {
        Boundary::Extrapolate => 2 * max_stride,
        Boundary::Dirichlet(_) => max_stride,
    };
    let solver = if (len as f64) * (bw as f64).powi(2) <= BANDED_WORK_LIMIT {
        LinearSolver::Banded
    } else {
        LinearSolver::GaussSeidel
    };
    let affine = cost.is_affine_in_control();
    // start from the pointwise cheapest vertex
    let mut choices: Vec<Choice> = (0..len)
        .map(|n| {
            let row = &problem.costs[n * problem.vertices..(n + 1) * problem.vertices];
            problem.vertex_choice(n, argmin_first(row))
        })
        .collect();
    let mut f = vec![0.0; len];
    let mut history = Vec::new();
    let mut switches = Vec::new();
    for iteration in 1..=options.max_iterations {
        let (matrix, rhs) = problem.assemble(&choices, &boundary);
        let next = match solver {
            LinearSolver::Banded => solve_banded(&matrix, &rhs, bw)?,
            LinearSolver::GaussSeidel => solve_gauss_seidel(&matrix, &rhs, &f)?,
        };
        let update = next
            .iter()
            .zip(&f)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotConverged {
                iterations: iteration,
                last_update: f64::NAN,
                history,
            });
        }
        f = next;
        history.push(update);
        let improved: Vec<Option<Choice>> = (0..len)
            .into_par_iter()
            .map(|n| {
                if grid.is_boundary(n) {
                    return None;
                }
                let current = &choices[n];
                let mut best = problem.upwind_value(&f, n, &current.drift, current.cost);
                let mut winner: Option<Choice> = None;
                for k in 0..problem.vertices {
                    if current.vertex == Some(k) {
                        continue;
                    }
                    let off = (n * problem.vertices + k) * problem.dims;
                    let drift = &problem.drifts[off..off + problem.dims];
                    let value =
                        problem.upwind_value(&f, n, drift, problem.costs[n * problem.vertices + k]);
                    if value < best - 1e-13 * best.abs().max(1.0) {
                        best = value;
                        winner = Some(problem.vertex_choice(n, k));
                    }
                }
                if !affine {
                    let x = grid.point(n);
                    let p = problem.central_gradient(&f, n);
                    let (_, control) = hamiltonian_with(&problem.dynamics, cost, &x, &p);
                    let candidate = problem.custom_choice(n, control);
                    let value = problem.upwind_value(&f, n, &candidate.drift, candidate.cost);
                    if value < best - 1e-13 * best.abs().max(1.0) {
                        winner = Some(candidate);
                    }
                }
                winner
            })
            .collect();
        let mut changed = 0;
        for (n, c) in improved.into_iter().enumerate() {
            if let Some(c) = c {
                choices[n] = c;
                changed += 1;
            }
        }
        switches.push(changed);
        if update < options.tolerance || changed == 0 {
            let value = ValueField::new(grid.clone(), f, model_hash(model, Some(cost)))?;
            let interior_residual = pde_residual(&value, model, cost, report_margin(grid))?;
            return Ok(HjbSolution {
                value,
                report: ConvergenceReport {
                    iterations: iteration,
                    history,
                    switches,
                    linear_solver: solver,
                    interior_residual,
                },
            });
        }
    }
    Err(Error::NotConverged {
        iterations: options.max_iterations,
        last_update: *history.last().unwrap_or(&f64::NAN),
        history,
    })
}

/// Solves on a box enlarged by `factor` with the same spacing and returns the
/// largest value change over the points of the original box that are at
/// least a quarter of its width away from its faces.
pub fn boundary_sensitivity(
    model: &TreeModel,
    cost: &RunningCostSpec,
    grid: &Grid,
    options: &HjbOptions,
    factor: f64,
) -> Result<f64> {
    if !(factor > 1.0) {
        return Err(invalid("the enlargement factor must exceed 1"));
    }
    let base = solve_hjb(model, cost, grid, options)?;
    let axes = grid
        .axes()
        .iter()
        .map(|a| {
            let mid = 0.5 * (a.lower + a.upper);
            let half = 0.5 * (a.upper - a.lower) * factor;
            crate::grid::Axis::with_spacing(mid - half, mid + half, a.h())
        })
        .collect::<Result<Vec<_>>>()?;
    let big_grid = Grid::new(axes)?;
    let big = solve_hjb(model, cost, &big_grid, options)?;
    let mut worst = 0.0_f64;
    let mut idx = vec![0usize; grid.dims()];
    for n in 0..grid.len() {
        grid.multi_index(n, &mut idx);
        let inner = grid.axes().iter().zip(&idx).all(|(a, &k)| {
            let q = a.points / 4;
            k >= q && k + q < a.points
        });
        if inner {
            let x = grid.point(n);
            worst = worst.max((base.value.values[n] - big.value.at(&x)).abs());
        }
    }
    Ok(worst)
}

fn check_field(value: &ValueField, model: &TreeModel) -> Result<()> {
    if value.grid.dims() != model.classes() {
        return Err(Error::GridMismatch(format!(
            "value field has {} axes, model has {} classes",
            value.grid.dims(),
            model.classes()
        )));
    }
    Ok(())
}

/// The minimizing control of the Hamiltonian at every grid point, with the
/// gradient taken by central differences (one-sided on the faces).
pub fn extract_policy(
    value: &ValueField,
    model: &TreeModel,
    cost: &RunningCostSpec,
) -> Result<PolicyField> {
    cost.validate(model.classes(), model.stations())?;
    check_field(value, model)?;
    let dynamics = Dynamics::new(model)?;
    let grid = &value.grid;
    let controls: Vec<ControlPoint> = (0..grid.len())
        .into_par_iter()
        .map(|n| {
            let p = central_gradient(grid, &value.values, n);
            hamiltonian_with(&dynamics, cost, &grid.point(n), &p).1
        })
        .collect();
    PolicyField::new(grid.clone(), controls, value.model_hash.clone())
}

/// `(1/2) sum r_i^2 f_ii + H(x, Df) - gamma f` at one interior grid point,
/// with central differences.
pub fn pde_residual_at(
    value: &ValueField,
    model: &TreeModel,
    cost: &RunningCostSpec,
    n: usize,
) -> Result<f64> {
    check_field(value, model)?;
    if !value.grid.is_interior(n, 1) {
        return Err(invalid("the residual needs an interior point"));
    }
    let dynamics = Dynamics::new(model)?;
    Ok(residual_at(&dynamics, value, model, cost, n))
}

fn residual_at(
    dynamics: &Dynamics,
    value: &ValueField,
    model: &TreeModel,
    cost: &RunningCostSpec,
    n: usize,
) -> f64 {
    let grid = &value.grid;
    let f = &value.values;
    let mut second = 0.0;
    for d in 0..grid.dims() {
        let s = grid.stride(d);
        let h = grid.h(d);
        let r = model.r(d);
        second += 0.5 * r * r * (f[n + s] - 2.0 * f[n] + f[n - s]) / (h * h);
    }
    let p = central_gradient(grid, f, n);
    let (h, _) = hamiltonian_with(dynamics, cost, &grid.point(n), &p);
    second + h - model.gamma() * f[n]
}

/// Largest absolute residual over points at least `margin` nodes from the
/// faces (`margin >= 1`).
pub fn pde_residual(
    value: &ValueField,
    model: &TreeModel,
    cost: &RunningCostSpec,
    margin: usize,
) -> Result<f64> {
    cost.validate(model.classes(), model.stations())?;
    check_field(value, model)?;
    let dynamics = Dynamics::new(model)?;
    let margin = margin.max(1);
    let grid = &value.grid;
    Ok((0..grid.len())
        .into_par_iter()
        .filter(|&n| grid.is_interior(n, margin))
        .map(|n| residual_at(&dynamics, value, model, cost, n).abs())
        .reduce(|| 0.0, f64::max))
}
