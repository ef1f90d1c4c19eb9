//! The deterministic system
//!
//! ```text
//! x_i = w_i - sum_j mu_ij J psi_ij - theta_i J y_i
//! sum_j psi_ij = x_i - y_i,   sum_i psi_ij = -z_j,
//! y, z >= 0,   e.y ^ e.z = 0,
//! ```
//!
//! driven by a path `w` that carries the initial condition, with
//! `y = (e.x)^+ u` and `z = (e.x)^- v` for a control path `(u, v)`.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;

use crate::calculus::{
    build_sequences, check_grids, integrate_left, residual_integral_eq, TimeSeries,
};
use crate::error::{invalid, Result};
use crate::flow::{Dynamics, Scratch};
use crate::io::{state_columns, write_paths_csv};
use crate::model::{ControlPoint, TreeCombinatorics, TreeModel};

/// A control sampled on the same grid as the driver.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPath {
    dt: f64,
    points: Vec<ControlPoint>,
}

impl ControlPath {
    pub fn new(dt: f64, points: Vec<ControlPoint>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(invalid("control path step must be positive"));
        }
        if points.is_empty() {
            return Err(invalid("control path is empty"));
        }
        for p in &points {
            p.check()?;
        }
        Ok(Self { dt, points })
    }

    pub fn constant(point: ControlPoint, dt: f64, len: usize) -> Result<Self> {
        Self::new(dt, vec![point; len])
    }

    /// A smooth random control: each weight is a softmax of a random sum of
    /// three sinusoids.
    pub fn random_smooth<R: Rng + ?Sized>(
        rng: &mut R,
        classes: usize,
        stations: usize,
        dt: f64,
        len: usize,
    ) -> Result<Self> {
        let mut draw = |n: usize| -> Vec<[(f64, f64, f64); 3]> {
            (0..n)
                .map(|_| {
                    std::array::from_fn(|_| {
                        (
                            rng.random_range(-2.0..2.0),
                            rng.random_range(0.2..3.0),
                            rng.random_range(0.0..2.0 * PI),
                        )
                    })
                })
                .collect()
        };
        let u_modes = draw(classes);
        let v_modes = draw(stations);
        let softmax = |modes: &[[(f64, f64, f64); 3]], t: f64| -> Vec<f64> {
            let logits: Vec<f64> = modes
                .iter()
                .map(|m| m.iter().map(|&(a, w, p)| a * (w * t + p).sin()).sum())
                .collect();
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = e.iter().sum();
            e.into_iter().map(|x| x / total).collect()
        };
        let points = (0..len)
            .map(|k| {
                let t = k as f64 * dt;
                ControlPoint {
                    u: softmax(&u_modes, t),
                    v: softmax(&v_modes, t),
                }
            })
            .collect();
        Self::new(dt, points)
    }

    /// A control that jumps to a uniformly random vertex at each of `jumps`
    /// equally spaced times.
    pub fn random_vertices<R: Rng + ?Sized>(
        rng: &mut R,
        classes: usize,
        stations: usize,
        dt: f64,
        len: usize,
        jumps: usize,
    ) -> Result<Self> {
        let block = len.div_ceil(jumps.max(1));
        let mut points = Vec::with_capacity(len);
        while points.len() < len {
            let p = ControlPoint::vertex(
                classes,
                stations,
                rng.random_range(0..classes),
                rng.random_range(0..stations),
            );
            let take = block.min(len - points.len());
            points.extend(std::iter::repeat_n(p, take));
        }
        Self::new(dt, points)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[ControlPoint] {
        &self.points
    }
}

/// Output of [`integrate_det`]. `psi` is indexed by activity.
#[derive(Debug, Clone)]
pub struct DetTrajectory {
    pub w: Vec<TimeSeries>,
    pub x: Vec<TimeSeries>,
    pub y: Vec<TimeSeries>,
    pub z: Vec<TimeSeries>,
    pub psi: Vec<TimeSeries>,
}

impl DetTrajectory {
    pub fn dt(&self) -> f64 {
        self.x[0].dt()
    }

    pub fn len(&self) -> usize {
        self.x[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `||z(t_k)||_1` for every grid point.
    pub fn idleness_norm(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| self.z.iter().map(|s| s.values()[k].abs()).sum())
            .collect()
    }

    /// `||x(t_k)||_1` for every grid point.
    pub fn state_norm(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| self.x.iter().map(|s| s.values()[k].abs()).sum())
            .collect()
    }

    /// CSV with columns `t, x_*, y_*, z_*, psi_<class>_<station>`.
    pub fn write_csv<W: Write>(&self, model: &TreeModel, out: &mut W) -> Result<()> {
        let classes = model.classes();
        let mut cols = state_columns(classes, &self.x, &self.y, &self.z);
        for (a, s) in model.activities().iter().zip(&self.psi) {
            cols.push((
                format!("psi_{}_{}", a.class + 1, classes + a.station + 1),
                s,
            ));
        }
        write_paths_csv(out, &cols)
    }
}

fn check_driver(model: &TreeModel, w: &[TimeSeries], controls: &ControlPath) -> Result<()> {
    if w.len() != model.classes() {
        return Err(invalid(format!(
            "driver has {} components, model has {} classes",
            w.len(),
            model.classes()
        )));
    }
    check_grids(w)?;
    let grid = &w[0];
    if controls.len() != grid.len() || (controls.dt - grid.dt()).abs() > 1e-12 * grid.dt() {
        return Err(crate::error::Error::GridMismatch(format!(
            "control path has {} samples at dt {}, driver has {} at dt {}",
            controls.len(),
            controls.dt,
            grid.len(),
            grid.dt()
        )));
    }
    for p in &controls.points {
        p.check_dims(model.classes(), model.stations())?;
    }
    Ok(())
}

/// Time-stepping scheme for [`integrate_det_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepScheme {
    /// Explicit Euler, control and flows taken at the left endpoint.
    #[default]
    Euler,
    /// Predictor-corrector trapezoid: an Euler predictor, then the integral
    /// terms averaged over both endpoints. Second order on smooth data.
    Heun,
}

/// Explicit Euler stepping of the deterministic system with the control
/// evaluated at the left endpoint of each step.
pub fn integrate_det(
    model: &TreeModel,
    w: &[TimeSeries],
    controls: &ControlPath,
) -> Result<DetTrajectory> {
    integrate_det_with(model, w, controls, StepScheme::Euler)
}

/// Per-class outflow `sum_j mu_ij psi_ij + theta_i y_i` at the lifted point.
fn outflow(model: &TreeModel, scratch: &Scratch, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = model.theta(i) * scratch.y[i];
    }
    for (e, a) in model.activities().iter().enumerate() {
        out[a.class] += a.mu * scratch.psi[e];
    }
}

pub fn integrate_det_with(
    model: &TreeModel,
    w: &[TimeSeries],
    controls: &ControlPath,
    scheme: StepScheme,
) -> Result<DetTrajectory> {
    check_driver(model, w, controls)?;
    let dynamics = Dynamics::new(model)?;
    let classes = model.classes();
    let stations = model.stations();
    let edges = model.edge_count();
    let n = w[0].len();
    let dt = w[0].dt();
    let mut scratch = dynamics.scratch();
    let mut xs = vec![vec![0.0; n]; classes];
    let mut ys = vec![vec![0.0; n]; classes];
    let mut zs = vec![vec![0.0; n]; stations];
    let mut psis = vec![vec![0.0; n]; edges];
    // accumulated integral of the outflow, per class
    let mut acc = vec![0.0; classes];
    let mut rate = vec![0.0; classes];
    let mut predicted_rate = vec![0.0; classes];
    let mut x = vec![0.0; classes];
    let mut predicted = vec![0.0; classes];
    for k in 0..n {
        for i in 0..classes {
            x[i] = w[i].values()[k] - acc[i];
            xs[i][k] = x[i];
        }
        dynamics.lift_into(&x, &controls.points[k], &mut scratch);
        for i in 0..classes {
            ys[i][k] = scratch.y[i];
        }
        for j in 0..stations {
            zs[j][k] = scratch.z[j];
        }
        for e in 0..edges {
            psis[e][k] = scratch.psi[e];
        }
        if k + 1 == n {
            break;
        }
        outflow(model, &scratch, &mut rate);
        match scheme {
            StepScheme::Euler => {
                for i in 0..classes {
                    acc[i] += dt * rate[i];
                }
            }
            StepScheme::Heun => {
                for i in 0..classes {
                    predicted[i] = w[i].values()[k + 1] - acc[i] - dt * rate[i];
                }
                dynamics.lift_into(&predicted, &controls.points[k + 1], &mut scratch);
                outflow(model, &scratch, &mut predicted_rate);
                for i in 0..classes {
                    acc[i] += 0.5 * dt * (rate[i] + predicted_rate[i]);
                }
            }
        }
    }
    let wrap = |rows: Vec<Vec<f64>>| -> Result<Vec<TimeSeries>> {
        rows.into_iter().map(|v| TimeSeries::new(dt, v)).collect()
    };
    Ok(DetTrajectory {
        w: w.to_vec(),
        x: wrap(xs)?,
        y: wrap(ys)?,
        z: wrap(zs)?,
        psi: wrap(psis)?,
    })
}

/// Rebuilds `x = w - sum_j mu_ij J psi_ij - theta_i J y_i` from the stored
/// `w`, `psi` and `y` with the left Riemann integral used by the Euler
/// stepper.
pub fn reconstruct_state(model: &TreeModel, traj: &DetTrajectory) -> Result<Vec<TimeSeries>> {
    let mut out: Vec<TimeSeries> = traj.w.clone();
    for (i, xi) in out.iter_mut().enumerate() {
        let jy = integrate_left(&traj.y[i]).scale(model.theta(i));
        *xi = xi.sub(&jy)?;
    }
    for (a, psi) in model.activities().iter().zip(&traj.psi) {
        let term = integrate_left(psi).scale(a.mu);
        out[a.class] = out[a.class].sub(&term)?;
    }
    Ok(out)
}

/// Outcome of a nonidling check.
#[derive(Debug, Clone, PartialEq)]
pub struct NonidlingReport {
    /// `sup_t ||z(t)||_1`.
    pub max_idleness: f64,
    /// Every driver component is strictly increasing.
    pub driver_increasing: bool,
    /// Every driver component starts strictly positive.
    pub positive_start: bool,
    pub diameter: Option<usize>,
    /// A station adjacent to every class with `theta_i <= mu_{i, hub}`.
    pub hub_station: Option<usize>,
    /// Diameter at most 3 and a hub station exists.
    pub preconditions_hold: bool,
}

impl NonidlingReport {
    /// True when the theorem's hypotheses hold, so idleness is expected to
    /// vanish.
    pub fn hypotheses_hold(&self) -> bool {
        self.preconditions_hold && self.driver_increasing && self.positive_start
    }
}

/// Station adjacent to all classes whose rates dominate abandonment.
pub fn hub_station(model: &TreeModel) -> Option<usize> {
    (0..model.stations()).find(|&j| {
        (0..model.classes())
            .all(|i| model.edge_index(i, j).is_some() && model.theta(i) <= model.mu(i, j))
    })
}

/// Integrates the system and reports the largest idleness seen, along with
/// whether the driver and the model satisfy the nonidling hypotheses.
pub fn check_nonidling(
    model: &TreeModel,
    w: &[TimeSeries],
    controls: &ControlPath,
) -> Result<NonidlingReport> {
    let traj = integrate_det(model, w, controls)?;
    let driver_increasing = w.iter().all(|s| s.values().windows(2).all(|p| p[1] > p[0]));
    let positive_start = w.iter().all(|s| s.values()[0] > 0.0);
    let diameter = model.diameter();
    let hub = hub_station(model);
    let preconditions_hold = matches!(diameter, Some(d) if d <= 3) && hub.is_some();
    let max_idleness = traj.idleness_norm().into_iter().fold(0.0, f64::max);
    Ok(NonidlingReport {
        max_idleness,
        driver_increasing,
        positive_start,
        diameter,
        hub_station: hub,
        preconditions_hold,
    })
}

const GAUSS_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GAUSS_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Running integral of `f` on the grid by three-point Gauss-Legendre
/// quadrature on each step.
fn running_integral(f: impl Fn(f64) -> f64, dt: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..n {
        let a = (k - 1) as f64 * dt;
        let mid = a + 0.5 * dt;
        let step: f64 = GAUSS_NODES
            .iter()
            .zip(GAUSS_WEIGHTS)
            .map(|(&s, wgt)| wgt * f(mid + 0.5 * dt * s))
            .sum();
        acc += 0.5 * dt * step;
        out.push(acc);
    }
    out
}

/// Largest residual of each relation of the deterministic system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemResiduals {
    pub state: f64,
    pub class_balance: f64,
    pub station_balance: f64,
    pub sign: f64,
    pub complementarity: f64,
}

impl SystemResiduals {
    pub fn max(&self) -> f64 {
        [
            self.state,
            self.class_balance,
            self.station_balance,
            self.sign,
            self.complementarity,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Closed-form trajectories of the non-tree counterexample and their check.
#[derive(Debug, Clone)]
pub struct OffTreeExample {
    pub k: f64,
    pub dt: f64,
    /// `x_1` on the grid; `x_2 = -x_1`.
    pub x: [TimeSeries; 2],
    /// `psi[class][station]`, stations ordered `A, B`.
    pub psi: [[TimeSeries; 2]; 2],
    pub residuals: SystemResiduals,
    /// `sup_t ||x(t)||_1`.
    pub sup_state_norm: f64,
    /// `sup_t ||w(t)||_1`, identically zero.
    pub sup_driver_norm: f64,
}

fn counterexample_x1(k: f64, t: f64) -> f64 {
    k * (1.0 - (-2.0 * t).exp()) / 2.0
}

fn counterexample_psi_b(k: f64, t: f64) -> f64 {
    -k * (1.0 + (-2.0 * t).exp()) / 2.0
}

/// The 2x2 complete bipartite network with `mu_1A = mu_2A = 1`,
/// `mu_1B = mu_2B = 2`, `w = 0`, `y = z = 0`, and
/// `psi_1A = -psi_2A = k`, `psi_1B = -psi_2B = -k (1 + e^{-2t}) / 2`,
/// `x_1 = -x_2 = k (1 - e^{-2t}) / 2`.
pub fn offtree_counterexample(k: f64, dt: f64, horizon: f64) -> Result<OffTreeExample> {
    if !(k >= 0.0) || !k.is_finite() {
        return Err(invalid(format!("k must be a nonnegative real, got {k}")));
    }
    let x1 = TimeSeries::from_fn(dt, horizon, |t| counterexample_x1(k, t))?;
    let n = x1.len();
    let series = |f: &dyn Fn(f64) -> f64| TimeSeries::from_fn(dt, horizon, f);
    let psi_1a = series(&|_| k)?;
    let psi_2a = series(&|_| -k)?;
    let psi_1b = series(&|t| counterexample_psi_b(k, t))?;
    let psi_2b = series(&|t| -counterexample_psi_b(k, t))?;
    let x2 = x1.scale(-1.0);

    let mu = [[1.0, 2.0], [1.0, 2.0]];
    let flows: [[&dyn Fn(f64) -> f64; 2]; 2] = [
        [&|_| k, &|t| counterexample_psi_b(k, t)],
        [&|_| -k, &|t| -counterexample_psi_b(k, t)],
    ];
    let xs = [&x1, &x2];
    let psis = [[&psi_1a, &psi_1b], [&psi_2a, &psi_2b]];
    let mut state = 0.0_f64;
    let mut class_balance = 0.0_f64;
    for i in 0..2 {
        let ints: Vec<Vec<f64>> = (0..2)
            .map(|j| running_integral(flows[i][j], dt, n))
            .collect();
        for step in 0..n {
            // w = 0 and y = 0
            let rhs = -(mu[i][0] * ints[0][step] + mu[i][1] * ints[1][step]);
            state = state.max((xs[i].values()[step] - rhs).abs());
            let rows = psis[i][0].values()[step] + psis[i][1].values()[step];
            class_balance = class_balance.max((rows - xs[i].values()[step]).abs());
        }
    }
    let mut station_balance = 0.0_f64;
    for j in 0..2 {
        for step in 0..n {
            let cols = psis[0][j].values()[step] + psis[1][j].values()[step];
            station_balance = station_balance.max(cols.abs());
        }
    }
    let residuals = SystemResiduals {
        state,
        class_balance,
        station_balance,
        // y = z = 0 satisfy both the sign and the complementarity relations
        sign: 0.0,
        complementarity: 0.0,
    };
    let sup_state_norm = (0..n)
        .map(|s| x1.values()[s].abs() + x2.values()[s].abs())
        .fold(0.0, f64::max);
    Ok(OffTreeExample {
        k,
        dt,
        x: [x1, x2],
        psi: [[psi_1a, psi_1b], [psi_2a, psi_2b]],
        residuals,
        sup_state_norm,
        sup_driver_norm: 0.0,
    })
}

/// Tree obtained from the counterexample network by dropping the activity
/// `(2, B)`.
pub fn counterexample_tree_submodel() -> TreeModel {
    TreeModel::builder(2, 2)
        .edge(0, 0, 1.0, 0.25)
        .edge(1, 0, 1.0, 0.25)
        .edge(0, 1, 2.0, 0.25)
        .build()
        .expect("counterexample tree")
}

/// Plugs the counterexample trajectories into the integral equation of the
/// tree sub-model. The driver is read off the state equation over the tree
/// edges, `y = 0`, and `z` is minus the station sums of the tree flows. The
/// returned supremum residual is far from zero.
pub fn counterexample_tree_residual(k: f64, dt: f64, horizon: f64) -> Result<f64> {
    let model = counterexample_tree_submodel();
    let ex = offtree_counterexample(k, dt, horizon)?;
    let n = ex.x[0].len();
    let int_1a = running_integral(|_| k, dt, n);
    let int_1b = running_integral(|t| counterexample_psi_b(k, t), dt, n);
    let int_2a = running_integral(|_| -k, dt, n);
    let w1: Vec<f64> = (0..n)
        .map(|s| ex.x[0].values()[s] + int_1a[s] + 2.0 * int_1b[s])
        .collect();
    let w2: Vec<f64> = (0..n).map(|s| ex.x[1].values()[s] + int_2a[s]).collect();
    let w = vec![TimeSeries::new(dt, w1)?, TimeSeries::new(dt, w2)?];
    let zero = TimeSeries::zeros(dt, n)?;
    let y = vec![zero.clone(), zero];
    let z_a = ex.psi[0][0].add(&ex.psi[1][0])?.scale(-1.0);
    let z_b = ex.psi[0][1].scale(-1.0);
    let comb = TreeCombinatorics::rooted_at_first_class(&model)?;
    let seqs = build_sequences(&model, &comb)?;
    Ok(residual_integral_eq(&seqs, &w, &y, &[z_a, z_b])?.sup_abs())
}

/// Least-squares fits of `log q` against `log(1 + t)` and against `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthReport {
    pub polynomial_slope: f64,
    pub polynomial_intercept: f64,
    pub polynomial_rss: f64,
    pub exponential_slope: f64,
    pub exponential_intercept: f64,
    pub exponential_rss: f64,
}

impl GrowthReport {
    pub fn polynomial_fits_better(&self) -> bool {
        self.polynomial_rss < self.exponential_rss
    }
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rss = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    (slope, intercept, rss)
}

/// Fits growth exponents to positive samples `q(t_1), ..., q(t_n)`, `n >= 4`.
pub fn growth_report(times: &[f64], values: &[f64]) -> Result<GrowthReport> {
    if times.len() != values.len() {
        return Err(invalid("times and values differ in length"));
    }
    if times.len() < 4 {
        return Err(invalid(format!(
            "growth fits need at least 4 samples, got {}",
            times.len()
        )));
    }
    if times.windows(2).any(|p| !(p[1] > p[0])) || times[0] < 0.0 {
        return Err(invalid("sample times must be nonnegative and increasing"));
    }
    if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(invalid("growth fits need positive finite values"));
    }
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let log_times: Vec<f64> = times.iter().map(|t| t.ln_1p()).collect();
    let (ps, pi, prss) = least_squares(&log_times, &logs);
    let (es, ei, erss) = least_squares(times, &logs);
    Ok(GrowthReport {
        polynomial_slope: ps,
        polynomial_intercept: pi,
        polynomial_rss: prss,
        exponential_slope: es,
        exponential_intercept: ei,
        exponential_rss: erss,
    })
}

/// Geometric sample times `1, 2, 4, ..., 2^(n-1)`.
pub fn geometric_times(n: usize) -> Vec<f64> {
    (0..n).map(|k| (1u64 << k) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn driver(dt: f64, horizon: f64, f: impl Fn(f64) -> f64) -> TimeSeries {
        TimeSeries::from_fn(dt, horizon, f).unwrap()
    }

    #[test]
    fn zero_driver_gives_zero_trajectory() {
        let model = fixtures::n_model([1.0, 2.0, 3.0], [0.5, 0.5]);
        let w = vec![driver(0.01, 1.0, |_| 0.0); 2];
        let c = ControlPath::constant(ControlPoint::vertex(2, 2, 0, 1), 0.01, w[0].len()).unwrap();
        let traj = integrate_det(&model, &w, &c).unwrap();
        for s in traj.x.iter().chain(&traj.y).chain(&traj.z).chain(&traj.psi) {
            assert_eq!(s.sup_abs(), 0.0);
        }
    }

    #[test]
    fn one_dimensional_constant_driver_stays_queued() {
        let model = fixtures::single_edge(1.0, 0.0);
        let w = vec![driver(0.01, 2.0, |_| 1.0)];
        let c = ControlPath::constant(ControlPoint::vertex(1, 1, 0, 0), 0.01, w[0].len()).unwrap();
        let traj = integrate_det(&model, &w, &c).unwrap();
        for k in 0..traj.len() {
            assert_eq!(traj.x[0].values()[k], 1.0);
            assert_eq!(traj.y[0].values()[k], 1.0);
            assert_eq!(traj.z[0].values()[k], 0.0);
            assert_eq!(traj.psi[0].values()[k], 0.0);
        }
    }

    #[test]
    fn reconstruction_matches_stepping() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = fixtures::two_level_tree();
        let dt = 1e-2;
        let w: Vec<TimeSeries> = (0..model.classes())
            .map(|i| driver(dt, 3.0, |t| (t + i as f64).sin() - 0.3))
            .collect();
        let c = ControlPath::random_smooth(&mut rng, 5, 2, dt, w[0].len()).unwrap();
        let traj = integrate_det(&model, &w, &c).unwrap();
        let rebuilt = reconstruct_state(&model, &traj).unwrap();
        for (a, b) in rebuilt.iter().zip(&traj.x) {
            assert!(a.sub(b).unwrap().sup_abs() < 1e-10);
        }
    }

    #[test]
    fn complementarity_holds_at_grid_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = fixtures::n_model([1.0, 2.0, 3.0], [0.2, 0.1]);
        let dt = 1e-2;
        let w = vec![
            driver(dt, 4.0, |t| (2.0 * t).sin()),
            driver(dt, 4.0, |t| (t).cos() - 1.2),
        ];
        let c = ControlPath::random_smooth(&mut rng, 2, 2, dt, w[0].len()).unwrap();
        let traj = integrate_det(&model, &w, &c).unwrap();
        for k in 0..traj.len() {
            let ey: f64 = traj.y.iter().map(|s| s.values()[k]).sum();
            let ez: f64 = traj.z.iter().map(|s| s.values()[k]).sum();
            assert!(traj.y.iter().all(|s| s.values()[k] >= 0.0));
            assert!(traj.z.iter().all(|s| s.values()[k] >= 0.0));
            assert_eq!(ey.min(ez), 0.0);
        }
    }

    #[test]
    fn mismatched_control_grid_is_rejected() {
        let model = fixtures::single_edge(1.0, 0.0);
        let w = vec![driver(0.01, 1.0, |_| 1.0)];
        let c = ControlPath::constant(ControlPoint::vertex(1, 1, 0, 0), 0.01, 5).unwrap();
        assert!(integrate_det(&model, &w, &c).is_err());
    }

    #[test]
    fn single_edge_increasing_driver_never_idles() {
        let model = fixtures::single_edge(1.0, 0.0);
        let w = vec![driver(1e-3, 2.0, |t| 1.0 + t)];
        let c = ControlPath::constant(ControlPoint::vertex(1, 1, 0, 0), 1e-3, w[0].len()).unwrap();
        let report = check_nonidling(&model, &w, &c).unwrap();
        assert_eq!(report.max_idleness, 0.0);
        assert!(report.hypotheses_hold());
    }

    #[test]
    fn steeply_decreasing_driver_idles() {
        let model = fixtures::n_model([1.0, 2.0, 3.0], [0.0, 0.0]);
        let dt = 1e-3;
        let w = vec![
            driver(dt, 2.0, |t| 1.0 - 5.0 * t),
            driver(dt, 2.0, |t| 1.0 + t),
        ];
        let c = ControlPath::constant(ControlPoint::vertex(2, 2, 0, 0), dt, w[0].len()).unwrap();
        let report = check_nonidling(&model, &w, &c).unwrap();
        assert!(!report.driver_increasing);
        assert!(report.max_idleness > 0.1);
    }

    #[test]
    fn n_model_hub_is_the_shared_station() {
        let model = fixtures::n_model([1.0, 2.0, 3.0], [0.5, 0.5]);
        assert_eq!(hub_station(&model), Some(0));
        let model = fixtures::n_model([1.0, 2.0, 3.0], [1.5, 0.5]);
        assert_eq!(hub_station(&model), None);
    }

    #[test]
    fn counterexample_values_at_time_one() {
        let ex = offtree_counterexample(1.0, 1e-3, 5.0).unwrap();
        let k = 1000;
        assert!((ex.x[0].values()[k] - 0.43233).abs() < 1e-5);
        assert!((ex.psi[0][1].values()[k] + 0.56767).abs() < 1e-5);
        assert!(ex.residuals.max() <= 1e-8);
    }

    #[test]
    fn counterexample_with_zero_k_is_zero() {
        let ex = offtree_counterexample(0.0, 1e-2, 1.0).unwrap();
        assert_eq!(ex.sup_state_norm, 0.0);
        assert_eq!(ex.residuals.max(), 0.0);
    }

    #[test]
    fn counterexample_scales_with_k() {
        let ex = offtree_counterexample(100.0, 1e-3, 5.0).unwrap();
        let expected = 100.0 * (1.0 - (-10.0f64).exp());
        assert!((ex.sup_state_norm - expected).abs() < 1e-9);
        assert_eq!(ex.sup_driver_norm, 0.0);
    }

    #[test]
    fn counterexample_violates_the_tree_equation() {
        assert!(counterexample_tree_residual(1.0, 1e-3, 5.0).unwrap() > 0.1);
    }

    #[test]
    fn growth_of_constant_series() {
        let t = geometric_times(7);
        let r = growth_report(&t, &[3.0; 7]).unwrap();
        assert!(r.polynomial_slope.abs() < 1e-12);
    }

    #[test]
    fn growth_of_quadratic_series() {
        let t = geometric_times(7);
        let v: Vec<f64> = t.iter().map(|t| (1.0 + t) * (1.0 + t)).collect();
        let r = growth_report(&t, &v).unwrap();
        assert!((r.polynomial_slope - 2.0).abs() < 0.05);
        assert!(r.polynomial_fits_better());
    }

    #[test]
    fn growth_needs_four_samples() {
        assert!(growth_report(&[1.0, 2.0, 4.0], &[1.0, 1.0, 1.0]).is_err());
        assert!(growth_report(&[1.0, 2.0, 4.0, 8.0], &[1.0, 0.0, 1.0, 1.0]).is_err());
    }
}
