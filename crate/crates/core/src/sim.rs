//! Euler-Maruyama simulation of the controlled diffusion
//! `dX = b(X, U) dt + r dW`, Monte Carlo estimation of the discounted cost
//! `E int_0^inf e^{-gamma t} L(X, U) dt`, and moment curves.
//!
//! Path `k` of a run with seed `s` draws its Brownian increments from
//! `ChaCha8Rng::seed_from_u64(s)` on stream `k`, so results do not depend on
//! the number of worker threads and different policies evaluated with the
//! same seed see the same noise.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use rayon::prelude::*;

use crate::calculus::{steps_for, TimeSeries};
use crate::det::{growth_report, ControlPath};
use crate::error::{invalid, Result};
use crate::flow::{Dynamics, Scratch};
use crate::grid::PolicyField;
use crate::io::{state_columns, write_paths_csv};
use crate::model::{ControlPoint, RunningCostSpec, TreeModel};

/// How a grid policy is read between nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Nearest,
    /// Weighted blend of the corner controls; stays in the control set since
    /// it is a convex combination.
    Multilinear,
}

/// A feedback or open-loop control rule.
#[derive(Debug, Clone)]
pub enum Policy {
    Fixed(ControlPoint),
    /// `u = e_class`, `v = e_station` at all times.
    StaticPriority {
        class: usize,
        station: usize,
    },
    GridMarkov {
        field: Arc<PolicyField>,
        interpolation: Interpolation,
    },
    /// Jumps to a uniformly random vertex at the times of a Poisson process
    /// with the given rate.
    RandomSwitching {
        rate: f64,
    },
    /// Time-dependent open-loop control, held constant after its last sample.
    Schedule(ControlPath),
}

impl Policy {
    /// The static priority policy on the first activity with
    /// `mu_ij >= theta_i`.
    pub fn default_static(model: &TreeModel) -> Result<Self> {
        model
            .activities()
            .iter()
            .find(|a| a.mu >= model.theta(a.class))
            .map(|a| Policy::StaticPriority {
                class: a.class,
                station: a.station,
            })
            .ok_or_else(|| invalid("no activity has mu_ij >= theta_i"))
    }

    /// Every vertex `(e_i, e_j)` as a static priority policy.
    pub fn all_static(model: &TreeModel) -> Vec<Self> {
        let mut out = Vec::new();
        for class in 0..model.classes() {
            for station in 0..model.stations() {
                out.push(Policy::StaticPriority { class, station });
            }
        }
        out
    }

    pub fn check(&self, model: &TreeModel) -> Result<()> {
        let (classes, stations) = (model.classes(), model.stations());
        match self {
            Policy::Fixed(p) => {
                p.check_dims(classes, stations)?;
                p.check()
            }
            Policy::StaticPriority { class, station } => {
                if *class >= classes || *station >= stations {
                    return Err(invalid(format!(
                        "static priority ({class}, {station}) is outside the model"
                    )));
                }
                Ok(())
            }
            Policy::GridMarkov { field, .. } => {
                if field.grid.dims() != classes
                    || field.classes() != classes
                    || field.stations() != stations
                {
                    return Err(invalid("policy field dimensions do not match the model"));
                }
                Ok(())
            }
            Policy::RandomSwitching { rate } => {
                if !(*rate > 0.0) || !rate.is_finite() {
                    return Err(invalid(format!(
                        "switching rate must be positive, got {rate}"
                    )));
                }
                Ok(())
            }
            Policy::Schedule(path) => {
                for p in path.points() {
                    p.check_dims(classes, stations)?;
                }
                Ok(())
            }
        }
    }

    pub fn describe(&self, classes: usize) -> String {
        match self {
            Policy::Fixed(_) => "fixed".into(),
            Policy::StaticPriority { class, station } => {
                format!("static({},{})", class + 1, classes + station + 1)
            }
            Policy::GridMarkov { .. } => "grid".into(),
            Policy::RandomSwitching { rate } => format!("switching({rate})"),
            Policy::Schedule(_) => "schedule".into(),
        }
    }
}

const SWITCH_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Per-path state of a policy.
struct PolicyRunner<'a> {
    policy: &'a Policy,
    current: ControlPoint,
    next_switch: f64,
    switch_rng: Option<ChaCha8Rng>,
}

impl<'a> PolicyRunner<'a> {
    fn new(policy: &'a Policy, classes: usize, stations: usize, seed: u64, stream: u64) -> Self {
        let current = match policy {
            Policy::Fixed(p) => p.clone(),
            Policy::StaticPriority { class, station } => {
                ControlPoint::vertex(classes, stations, *class, *station)
            }
            _ => ControlPoint::vertex(classes, stations, 0, 0),
        };
        let switch_rng = matches!(policy, Policy::RandomSwitching { .. }).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SWITCH_SALT);
            rng.set_stream(stream);
            rng
        });
        Self {
            policy,
            current,
            next_switch: 0.0,
            switch_rng,
        }
    }

    fn control(&mut self, t: f64, x: &[f64]) -> &ControlPoint {
        match self.policy {
            Policy::Fixed(_) | Policy::StaticPriority { .. } => {}
            Policy::GridMarkov {
                field,
                interpolation,
            } => match interpolation {
                Interpolation::Nearest => {
                    self.current
                        .clone_from(&field.controls[field.grid.nearest(x)]);
                }
                Interpolation::Multilinear => {
                    self.current.u.iter_mut().for_each(|a| *a = 0.0);
                    self.current.v.iter_mut().for_each(|a| *a = 0.0);
                    for (idx, w) in field.grid.corners(x) {
                        let c = &field.controls[idx];
                        for (a, b) in self.current.u.iter_mut().zip(&c.u) {
                            *a += w * b;
                        }
                        for (a, b) in self.current.v.iter_mut().zip(&c.v) {
                            *a += w * b;
                        }
                    }
                }
            },
            Policy::RandomSwitching { rate } => {
                let rng = self.switch_rng.as_mut().expect("switching rng");
                while t >= self.next_switch {
                    let (classes, stations) = (self.current.u.len(), self.current.v.len());
                    let i = rng.random_range(0..classes);
                    let j = rng.random_range(0..stations);
                    self.current
                        .u
                        .iter_mut()
                        .enumerate()
                        .for_each(|(k, a)| *a = f64::from(k == i));
                    self.current
                        .v
                        .iter_mut()
                        .enumerate()
                        .for_each(|(k, a)| *a = f64::from(k == j));
                    let gap: f64 = rng.sample(Exp::new(*rate).expect("positive rate"));
                    self.next_switch += gap;
                }
            }
            Policy::Schedule(path) => {
                let k = ((t / path.dt()).round() as usize).min(path.len() - 1);
                self.current.clone_from(&path.points()[k]);
            }
        }
        &self.current
    }
}

/// Shared Euler-Maruyama driver.
struct Stepper<'a> {
    model: &'a TreeModel,
    dynamics: Dynamics,
    policy: &'a Policy,
    dt: f64,
    seed: u64,
}

/// What the observer sees at each grid time.
struct Observation<'s> {
    k: usize,
    x: &'s [f64],
    control: &'s ControlPoint,
    scratch: &'s Scratch,
    w: &'s [f64],
}

impl<'a> Stepper<'a> {
    fn new(model: &'a TreeModel, policy: &'a Policy, dt: f64, seed: u64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        policy.check(model)?;
        Ok(Self {
            model,
            dynamics: Dynamics::new(model)?,
            policy,
            dt,
            seed,
        })
    }

    fn run(&self, x0: &[f64], steps: usize, stream: u64, mut observe: impl FnMut(Observation<'_>)) {
        let classes = self.model.classes();
        let stations = self.model.stations();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let mut runner = PolicyRunner::new(self.policy, classes, stations, self.seed, stream);
        let mut scratch = self.dynamics.scratch();
        let mut x = x0.to_vec();
        let mut b = vec![0.0; classes];
        let mut w = vec![0.0; classes];
        let sqrt_dt = self.dt.sqrt();
        let r: Vec<f64> = (0..classes).map(|i| self.model.r(i)).collect();
        for k in 0..=steps {
            let t = k as f64 * self.dt;
            let control = runner.control(t, &x);
            self.dynamics.drift_into(&x, control, &mut scratch, &mut b);
            observe(Observation {
                k,
                x: &x,
                control,
                scratch: &scratch,
                w: &w,
            });
            if k == steps {
                break;
            }
            for i in 0..classes {
                let xi: f64 = rng.sample(StandardNormal);
                let dw = sqrt_dt * xi;
                w[i] += dw;
                x[i] += b[i] * self.dt + r[i] * dw;
            }
        }
    }
}

fn check_start(model: &TreeModel, x0: &[f64]) -> Result<()> {
    if x0.len() != model.classes() || x0.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!(
            "initial state must be {} finite numbers",
            model.classes()
        )));
    }
    Ok(())
}

/// A simulated path on the grid `0, dt, ..., T`.
#[derive(Debug, Clone)]
pub struct SimPath {
    pub x: Vec<TimeSeries>,
    pub y: Vec<TimeSeries>,
    pub z: Vec<TimeSeries>,
    /// Standard Brownian motion driving the path, per class.
    pub w: Vec<TimeSeries>,
    pub controls: ControlPath,
}

impl SimPath {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        write_paths_csv(out, &state_columns(self.x.len(), &self.x, &self.y, &self.z))
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.x.iter().map(|s| s.last()).collect()
    }
}

/// Simulates one path (stream 0 of `seed`).
pub fn simulate_path(
    model: &TreeModel,
    x0: &[f64],
    policy: &Policy,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<SimPath> {
    simulate_stream(model, x0, policy, horizon, dt, seed, 0)
}

/// Simulates path number `stream` of a run with the given seed.
pub fn simulate_stream(
    model: &TreeModel,
    x0: &[f64],
    policy: &Policy,
    horizon: f64,
    dt: f64,
    seed: u64,
    stream: u64,
) -> Result<SimPath> {
    check_start(model, x0)?;
    let steps = steps_for(horizon, dt)?;
    let stepper = Stepper::new(model, policy, dt, seed)?;
    let (classes, stations) = (model.classes(), model.stations());
    let mut xs = vec![Vec::with_capacity(steps + 1); classes];
    let mut ys = vec![Vec::with_capacity(steps + 1); classes];
    let mut zs = vec![Vec::with_capacity(steps + 1); stations];
    let mut ws = vec![Vec::with_capacity(steps + 1); classes];
    let mut controls = Vec::with_capacity(steps + 1);
    stepper.run(x0, steps, stream, |o| {
        for i in 0..classes {
            xs[i].push(o.x[i]);
            ys[i].push(o.scratch.y[i]);
            ws[i].push(o.w[i]);
        }
        for j in 0..stations {
            zs[j].push(o.scratch.z[j]);
        }
        controls.push(o.control.clone());
    });
    let wrap = |rows: Vec<Vec<f64>>| -> Result<Vec<TimeSeries>> {
        rows.into_iter().map(|v| TimeSeries::new(dt, v)).collect()
    };
    Ok(SimPath {
        x: wrap(xs)?,
        y: wrap(ys)?,
        z: wrap(zs)?,
        w: wrap(ws)?,
        controls: ControlPath::new(dt, controls)?,
    })
}

/// Terminal states of `n_paths` independent paths.
pub fn terminal_states(
    model: &TreeModel,
    x0: &[f64],
    policy: &Policy,
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_start(model, x0)?;
    let steps = steps_for(horizon, dt)?;
    let stepper = Stepper::new(model, policy, dt, seed)?;
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut last = Vec::new();
            stepper.run(x0, steps, p, |o| {
                if o.k == steps {
                    last = o.x.to_vec();
                }
            });
            last
        })
        .collect())
}

/// States at the given step indices, per path: `out[path][sample][class]`.
pub fn sampled_states(
    model: &TreeModel,
    x0: &[f64],
    policy: &Policy,
    sample_steps: &[usize],
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    check_start(model, x0)?;
    let Some(&steps) = sample_steps.iter().max() else {
        return Err(invalid("no sample times given"));
    };
    if sample_steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("sample steps must be strictly increasing"));
    }
    let stepper = Stepper::new(model, policy, dt, seed)?;
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut out = Vec::with_capacity(sample_steps.len());
            let mut next = 0;
            stepper.run(x0, steps, p, |o| {
                if next < sample_steps.len() && o.k == sample_steps[next] {
                    out.push(o.x.to_vec());
                    next += 1;
                }
            });
            out
        })
        .collect())
}

/// Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub n_paths: usize,
    /// Truncation horizon; `None` means `12 / gamma`.
    pub horizon: Option<f64>,
    pub dt: f64,
    pub seed: u64,
}

impl McConfig {
    pub fn new(n_paths: usize, dt: f64, seed: u64) -> Self {
        Self {
            n_paths,
            horizon: None,
            dt,
            seed,
        }
    }
}

/// A Monte Carlo estimate of the discounted cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Estimated bound on the discounted cost beyond the horizon.
    pub tail_bound: f64,
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn l1(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

const TAIL_CHECKPOINTS: usize = 5;

/// `int_0^inf e^{-u} (c + u)^s du` by composite Simpson on `[0, 60]`.
fn shifted_gamma_integral(c: f64, s: f64) -> f64 {
    let n = 1200;
    let h = 60.0 / n as f64;
    let f = |u: f64| (-u).exp() * (c + u).powf(s);
    let mut total = f(0.0) + f(60.0);
    for k in 1..n {
        let weight = if k % 2 == 1 { 4.0 } else { 2.0 };
        total += weight * f(k as f64 * h);
    }
    total * h / 3.0
}

/// `c_L int_T^inf e^{-gamma t} (1 + a (1 + t)^s) dt`.
fn tail_bound(gamma: f64, horizon: f64, c_l: f64, a: f64, s: f64) -> f64 {
    let base = (-gamma * horizon).exp() / gamma;
    // substitute t = T + u / gamma
    let poly = if a == 0.0 {
        0.0
    } else {
        a * gamma.powf(-s) * shifted_gamma_integral(gamma * (1.0 + horizon), s)
    };
    c_l * base * (1.0 + poly)
}

/// Estimates `E int_0^T e^{-gamma t} L(X, U) dt` with exact discount weights
/// on each step, plus a bound on the neglected tail.
pub fn mc_cost(
    model: &TreeModel,
    cost: &RunningCostSpec,
    x0: &[f64],
    policy: &Policy,
    config: &McConfig,
) -> Result<CostEstimate> {
    cost.validate(model.classes(), model.stations())?;
    check_start(model, x0)?;
    let gamma = model.gamma();
    if !(gamma > 0.0) {
        return Err(invalid("discounted cost needs gamma > 0"));
    }
    if config.n_paths == 0 {
        return Err(invalid("need at least one path"));
    }
    let horizon = config.horizon.unwrap_or(12.0 / gamma);
    let steps = steps_for(horizon, config.dt)?;
    let dt = config.dt;
    let stepper = Stepper::new(model, policy, dt, config.seed)?;
    let step_weight = (1.0 - (-gamma * dt).exp()) / gamma;
    let decay = (-gamma * dt).exp();
    let bounded = cost.is_bounded();
    let m_l = cost.growth_exponent();
    let checkpoints: Vec<usize> = (0..TAIL_CHECKPOINTS)
        .map(|c| steps >> (TAIL_CHECKPOINTS - 1 - c))
        .collect();
    let per_path: Vec<(f64, [f64; TAIL_CHECKPOINTS])> = (0..config.n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut total = 0.0;
            let mut discount = 1.0;
            let mut moments = [0.0; TAIL_CHECKPOINTS];
            stepper.run(x0, steps, p, |o| {
                if o.k < steps {
                    total += discount * step_weight * cost.eval(o.x, o.control);
                    discount *= decay;
                }
                if !bounded {
                    for (c, &k) in checkpoints.iter().enumerate() {
                        if o.k == k {
                            moments[c] = l1(o.x).powf(m_l);
                        }
                    }
                }
            });
            (total, moments)
        })
        .collect();
    let values: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let (mean, std_error) = mean_and_se(&values);
    let c_l = cost.growth_constant();
    let tail = if bounded {
        tail_bound(gamma, horizon, c_l, 0.0, 0.0)
    } else {
        let mut avg = [0.0; TAIL_CHECKPOINTS];
        for (_, m) in &per_path {
            for c in 0..TAIL_CHECKPOINTS {
                avg[c] += m[c];
            }
        }
        avg.iter_mut().for_each(|a| *a /= config.n_paths as f64);
        let times: Vec<f64> = checkpoints.iter().map(|&k| k as f64 * dt).collect();
        let distinct = times.windows(2).all(|w| w[1] > w[0]);
        match growth_report(&times, &avg) {
            Ok(fit) if distinct => {
                let s = fit.polynomial_slope.max(0.0);
                let a = fit.polynomial_intercept.exp();
                // the fitted curve must dominate every measured moment
                let a = times
                    .iter()
                    .zip(&avg)
                    .map(|(t, m)| m / (1.0 + t).powf(s))
                    .fold(a, f64::max);
                tail_bound(gamma, horizon, c_l, a, s)
            }
            _ => {
                let worst = avg.iter().copied().fold(0.0, f64::max);
                tail_bound(gamma, horizon, c_l * (1.0 + worst), 0.0, 0.0)
            }
        }
    };
    Ok(CostEstimate {
        mean,
        std_error,
        n_paths: config.n_paths,
        horizon,
        dt,
        tail_bound: tail,
    })
}

/// Estimate of `E ||X(t)||^m` at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub t: f64,
    pub mean: f64,
    pub std_error: f64,
}

/// Monte Carlo estimates of `E ||X(t)||^m` (l1 norm) at the given times.
#[allow(clippy::too_many_arguments)]
pub fn moment_curve(
    model: &TreeModel,
    policy: &Policy,
    x0: &[f64],
    m: f64,
    times: &[f64],
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<MomentEstimate>> {
    check_start(model, x0)?;
    if !(m >= 1.0) {
        return Err(invalid(format!("moment order must be at least 1, got {m}")));
    }
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) || !(times[0] > 0.0) {
        return Err(invalid("moment times must be positive and increasing"));
    }
    if n_paths == 0 {
        return Err(invalid("need at least one path"));
    }
    let indices: Vec<usize> = times
        .iter()
        .map(|&t| steps_for(t, dt))
        .collect::<Result<_>>()?;
    let steps = *indices.last().expect("nonempty");
    let stepper = Stepper::new(model, policy, dt, seed)?;
    let samples: Vec<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut out = vec![0.0; indices.len()];
            let mut next = 0;
            stepper.run(x0, steps, p, |o| {
                while next < indices.len() && indices[next] == o.k {
                    out[next] = l1(o.x).powf(m);
                    next += 1;
                }
            });
            out
        })
        .collect();
    Ok(times
        .iter()
        .enumerate()
        .map(|(c, &t)| {
            let column: Vec<f64> = samples.iter().map(|s| s[c]).collect();
            let (mean, std_error) = mean_and_se(&column);
            MomentEstimate { t, mean, std_error }
        })
        .collect())
}

pub fn write_moments_csv<W: Write>(out: &mut W, curve: &[MomentEstimate]) -> Result<()> {
    writeln!(out, "t,mean,std_error")?;
    for e in curve {
        writeln!(out, "{},{},{}", e.t, e.mean, e.std_error)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn noiseless_path_from_origin_stays_put() {
        let model = TreeModel::builder(2, 2)
            .edge(0, 0, 1.0, 0.5)
            .edge(1, 0, 2.0, 0.5)
            .edge(1, 1, 3.0, 0.5)
            .r(&[0.0, 0.0])
            .build()
            .unwrap();
        let policy = Policy::StaticPriority {
            class: 1,
            station: 0,
        };
        let path = simulate_path(&model, &[0.0, 0.0], &policy, 1.0, 0.01, 3).unwrap();
        assert!(path.x.iter().all(|s| s.sup_abs() == 0.0));
    }

    #[test]
    fn same_seed_same_path() {
        let model = fixtures::n_model([1.0, 2.0, 3.0], [0.5, 0.5]);
        let policy = Policy::RandomSwitching { rate: 2.0 };
        let a = simulate_path(&model, &[0.3, -0.2], &policy, 2.0, 0.01, 11).unwrap();
        let b = simulate_path(&model, &[0.3, -0.2], &policy, 2.0, 0.01, 11).unwrap();
        for (s, t) in a.x.iter().zip(&b.x) {
            assert_eq!(s.values(), t.values());
        }
        let c = simulate_path(&model, &[0.3, -0.2], &policy, 2.0, 0.01, 12).unwrap();
        assert_ne!(a.x[0].values(), c.x[0].values());
    }

    #[test]
    fn negative_excursions_revert_in_one_dimension() {
        let model = TreeModel::builder(1, 1)
            .edge(0, 0, 2.0, 1.0)
            .r(&[0.0])
            .build()
            .unwrap();
        let policy = Policy::StaticPriority {
            class: 0,
            station: 0,
        };
        let path = simulate_path(&model, &[-1.0], &policy, 3.0, 1e-3, 0).unwrap();
        assert!((path.x[0].last() + (-6.0f64).exp()).abs() < 1e-3);
        let up = simulate_path(&model, &[1.0], &policy, 3.0, 1e-3, 0).unwrap();
        assert_eq!(up.x[0].last(), 1.0);
    }

    #[test]
    fn controls_stay_in_the_simplex() {
        let model = fixtures::w_model([1.0, 2.0, 3.0]);
        let policy = Policy::RandomSwitching { rate: 5.0 };
        let path = simulate_path(&model, &[0.0, 0.0], &policy, 2.0, 0.01, 4).unwrap();
        for p in path.controls.points() {
            assert!((p.u.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((p.v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_cost_estimate_is_exact() {
        let model = fixtures::one_dimensional();
        let cost = RunningCostSpec::constant(1, 1, 1.0);
        let policy = Policy::StaticPriority {
            class: 0,
            station: 0,
        };
        let est = mc_cost(&model, &cost, &[0.0], &policy, &McConfig::new(8, 0.01, 1)).unwrap();
        let horizon: f64 = 12.0;
        assert!((est.mean - (1.0 - (-horizon).exp())).abs() < 1e-12);
        assert_eq!(est.std_error, 0.0);
        assert!((est.mean + est.tail_bound - 1.0).abs() < 1e-12);
    }

    #[test]
    fn estimates_are_independent_of_thread_count() {
        let model = fixtures::one_dimensional();
        let cost = fixtures::one_dimensional_cost();
        let policy = Policy::StaticPriority {
            class: 0,
            station: 0,
        };
        let cfg = McConfig {
            n_paths: 64,
            horizon: Some(2.0),
            dt: 0.01,
            seed: 5,
        };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let three = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let a = one.install(|| mc_cost(&model, &cost, &[0.0], &policy, &cfg).unwrap());
        let b = three.install(|| mc_cost(&model, &cost, &[0.0], &policy, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn tail_bound_is_finite_and_positive() {
        let model = fixtures::one_dimensional();
        let cost = fixtures::one_dimensional_cost();
        let policy = Policy::StaticPriority {
            class: 0,
            station: 0,
        };
        let est = mc_cost(&model, &cost, &[0.0], &policy, &McConfig::new(200, 0.01, 2)).unwrap();
        assert!(est.tail_bound.is_finite() && est.tail_bound > 0.0);
        assert!(est.tail_bound < 1e-2);
    }

    #[test]
    fn zero_noise_moments_vanish() {
        let model = TreeModel::builder(1, 1)
            .edge(0, 0, 1.0, 1.0)
            .r(&[0.0])
            .build()
            .unwrap();
        let policy = Policy::StaticPriority {
            class: 0,
            station: 0,
        };
        let curve =
            moment_curve(&model, &policy, &[0.0], 2.0, &[1.0, 2.0, 4.0], 4, 0.01, 0).unwrap();
        assert!(curve.iter().all(|e| e.mean == 0.0));
    }

    #[test]
    fn slow_service_moments_grow_like_brownian_motion() {
        let model = TreeModel::builder(1, 1)
            .edge(0, 0, 1e-6, 1.0)
            .r(&[1.0])
            .build()
            .unwrap();
        let policy = Policy::StaticPriority {
            class: 0,
            station: 0,
        };
        let times = [1.0, 2.0, 4.0, 8.0];
        let curve = moment_curve(&model, &policy, &[0.0], 2.0, &times, 4000, 0.01, 9).unwrap();
        for e in &curve {
            assert!(
                (e.mean - e.t).abs() < 4.0 * e.std_error + 0.02 * e.t,
                "{e:?}"
            );
        }
    }

    #[test]
    fn bad_policies_are_rejected() {
        let model = fixtures::single_edge(1.0, 0.0);
        let p = Policy::StaticPriority {
            class: 1,
            station: 0,
        };
        assert!(simulate_path(&model, &[0.0], &p, 1.0, 0.1, 0).is_err());
        let p = Policy::RandomSwitching { rate: 0.0 };
        assert!(simulate_path(&model, &[0.0], &p, 1.0, 0.1, 0).is_err());
    }
}
