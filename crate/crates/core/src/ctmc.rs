//! Event-driven simulation of the n-th queueing system and its centered,
//! `sqrt(n)`-scaled state.
//!
//! Arrivals to class `i` are Poisson with rate `n lambda_i + sqrt(n) lambda_hat_i`,
//! each customer in service on activity `(i, j)` finishes at rate
//! `mu_ij + mu_hat_ij / sqrt(n)` and each waiting class-`i` customer abandons
//! at rate `theta_i`. Station `j` has `round(n nu_j)` servers.
//!
//! Scheduling is preemptive: after every event the assignment rule recomputes
//! the in-service counts from the headcounts alone.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::calculus::{steps_for, TimeSeries};
use crate::error::{invalid, Error, Result};
use crate::flow::LiftingMap;
use crate::io::{state_columns, write_paths_csv};
use crate::model::{ControlPoint, TreeModel};
use crate::sim::{mean_and_se, sampled_states, Policy};

/// Rates and server counts of the n-th system.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingSpec {
    pub n: u64,
    /// Second-order arrival correction, per class.
    pub lambda_hat: Vec<f64>,
    /// Second-order service correction, per activity.
    pub mu_hat: Vec<f64>,
    /// Servers per station.
    pub servers: Vec<i64>,
}

impl ScalingSpec {
    /// `lambda_hat = ell`, `mu_hat = 0`, `N_j = round(n nu_j)`.
    pub fn new(model: &TreeModel, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("the scaling index n must be at least 1"));
        }
        let spec = Self {
            n,
            lambda_hat: (0..model.classes()).map(|i| model.ell(i)).collect(),
            mu_hat: vec![0.0; model.edge_count()],
            servers: (0..model.stations())
                .map(|j| (n as f64 * model.nu(j)).round() as i64)
                .collect(),
        };
        spec.check(model)?;
        Ok(spec)
    }

    fn sqrt_n(&self) -> f64 {
        (self.n as f64).sqrt()
    }

    pub fn arrival_rate(&self, model: &TreeModel, class: usize) -> f64 {
        self.n as f64 * model.lambda(class) + self.sqrt_n() * self.lambda_hat[class]
    }

    pub fn service_rate(&self, model: &TreeModel, edge: usize) -> f64 {
        model.activities()[edge].mu + self.mu_hat[edge] / self.sqrt_n()
    }

    pub fn check(&self, model: &TreeModel) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("the scaling index n must be at least 1"));
        }
        if self.lambda_hat.len() != model.classes()
            || self.mu_hat.len() != model.edge_count()
            || self.servers.len() != model.stations()
        {
            return Err(invalid("scaling vectors do not match the model dimensions"));
        }
        if self.servers.iter().any(|&s| s < 0) {
            return Err(invalid("server counts must be nonnegative"));
        }
        for i in 0..model.classes() {
            let rate = self.arrival_rate(model, i);
            if !(rate >= 0.0) || !rate.is_finite() {
                return Err(invalid(format!("class {} has arrival rate {rate}", i + 1)));
            }
        }
        for e in 0..model.edge_count() {
            let rate = self.service_rate(model, e);
            if !(rate > 0.0) || !rate.is_finite() {
                return Err(invalid(format!("activity {e} has service rate {rate}")));
            }
        }
        Ok(())
    }
}

/// Headcounts, servers and in-service counts (per activity).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CtmcState {
    pub x: Vec<i64>,
    pub servers: Vec<i64>,
    pub psi: Vec<i64>,
}

impl CtmcState {
    pub fn queue(&self, model: &TreeModel) -> Vec<i64> {
        let mut y = self.x.clone();
        for (a, &p) in model.activities().iter().zip(&self.psi) {
            y[a.class] -= p;
        }
        y
    }

    pub fn idle(&self, model: &TreeModel) -> Vec<i64> {
        let mut z = self.servers.clone();
        for (a, &p) in model.activities().iter().zip(&self.psi) {
            z[a.station] -= p;
        }
        z
    }

    /// Nonnegativity of headcounts, in-service counts, queues and idleness.
    pub fn check(&self, model: &TreeModel) -> Result<()> {
        if self.x.len() != model.classes()
            || self.servers.len() != model.stations()
            || self.psi.len() != model.edge_count()
        {
            return Err(Error::Structure(
                "state dimensions do not match the model".into(),
            ));
        }
        if self.x.iter().chain(&self.psi).any(|&v| v < 0) {
            return Err(Error::Structure(
                "negative headcount or in-service count".into(),
            ));
        }
        if let Some(i) = self.queue(model).iter().position(|&y| y < 0) {
            return Err(Error::Structure(format!(
                "class {} has more customers in service than present",
                i + 1
            )));
        }
        if let Some(j) = self.idle(model).iter().position(|&z| z < 0) {
            return Err(Error::Structure(format!(
                "station {} has more busy servers than servers",
                model.classes() + j + 1
            )));
        }
        Ok(())
    }
}

/// Preemptive assignment of servers to customers.
#[derive(Debug, Clone, PartialEq)]
pub enum AssignmentRule {
    /// Queue only class `class` and idle only station `station` whenever the
    /// tree allows it.
    StaticPriority { class: usize, station: usize },
    /// Target `Y = D^+ u`, `Z = D^- v` with `D = sum X - sum N`, rounded by
    /// largest remainder.
    Tracking(ControlPoint),
}

impl AssignmentRule {
    fn control(&self, model: &TreeModel) -> Result<ControlPoint> {
        let (classes, stations) = (model.classes(), model.stations());
        match self {
            AssignmentRule::StaticPriority { class, station } => {
                if *class >= classes || *station >= stations {
                    return Err(invalid("static priority indices out of range"));
                }
                Ok(ControlPoint::vertex(classes, stations, *class, *station))
            }
            AssignmentRule::Tracking(c) => {
                c.check_dims(classes, stations)?;
                c.check()?;
                Ok(c.clone())
            }
        }
    }
}

/// Splits a nonnegative integer total by weights summing to one.
pub fn largest_remainder(total: i64, weights: &[f64]) -> Vec<i64> {
    let raw: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut out: Vec<i64> = raw.iter().map(|r| r.floor() as i64).collect();
    let mut missing = total - out.iter().sum::<i64>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut k = 0;
    while missing > 0 {
        out[order[k % order.len()]] += 1;
        missing -= 1;
        k += 1;
    }
    out
}

struct Assigner<'m> {
    model: &'m TreeModel,
    lifting: LiftingMap,
    control: ControlPoint,
    /// Activities in the order the fallback fills them.
    fill_order: Vec<usize>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    flows: Vec<f64>,
}

impl<'m> Assigner<'m> {
    fn new(model: &'m TreeModel, rule: &AssignmentRule) -> Result<Self> {
        let control = rule.control(model)?;
        let mut fill_order: Vec<usize> = (0..model.edge_count()).collect();
        let acts = model.activities();
        fill_order.sort_by(|&a, &b| {
            let ka = (control.u[acts[a].class], control.v[acts[a].station]);
            let kb = (control.u[acts[b].class], control.v[acts[b].station]);
            ka.partial_cmp(&kb)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        Ok(Self {
            model,
            lifting: LiftingMap::new(model)?,
            control,
            fill_order,
            alpha: vec![0.0; model.classes()],
            beta: vec![0.0; model.stations()],
            flows: vec![0.0; model.edge_count()],
        })
    }

    fn assign(&mut self, x: &[i64], servers: &[i64], psi: &mut [i64]) {
        let d: i64 = x.iter().sum::<i64>() - servers.iter().sum::<i64>();
        let y = largest_remainder(d.max(0), &self.control.u);
        let z = largest_remainder((-d).max(0), &self.control.v);
        let feasible_targets = y.iter().zip(x).all(|(yi, xi)| yi <= xi)
            && z.iter().zip(servers).all(|(zj, nj)| zj <= nj);
        if feasible_targets {
            for i in 0..x.len() {
                self.alpha[i] = (x[i] - y[i]) as f64;
            }
            for j in 0..servers.len() {
                self.beta[j] = (servers[j] - z[j]) as f64;
            }
            self.lifting
                .solve_in_place(&mut self.alpha, &mut self.beta, &mut self.flows);
            if self.flows.iter().all(|&f| f >= 0.0) {
                for (p, f) in psi.iter_mut().zip(&self.flows) {
                    *p = f.round() as i64;
                }
                return;
            }
        }
        self.fallback(x, servers, psi);
    }

    /// Greedy fill in priority order, completed to a maximum flow.
    fn fallback(&self, x: &[i64], servers: &[i64], psi: &mut [i64]) {
        let acts = self.model.activities();
        let mut left_x = x.to_vec();
        let mut left_n = servers.to_vec();
        psi.iter_mut().for_each(|p| *p = 0);
        for &e in &self.fill_order {
            let (i, j) = (acts[e].class, acts[e].station);
            let f = left_x[i].min(left_n[j]);
            psi[e] += f;
            left_x[i] -= f;
            left_n[j] -= f;
        }
        augment_to_maximum(self.model, &mut left_x, &mut left_n, psi);
    }
}

/// Edmonds-Karp on source -> classes -> stations -> sink, starting from the
/// flow `psi` with residual supplies `left_x` and capacities `left_n`.
fn augment_to_maximum(model: &TreeModel, left_x: &mut [i64], left_n: &mut [i64], psi: &mut [i64]) {
    let acts = model.activities();
    let (classes, stations) = (model.classes(), model.stations());
    // nodes: classes 0..I, stations I..I+J
    loop {
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; classes + stations];
        let mut seen = vec![false; classes + stations];
        let mut queue = std::collections::VecDeque::new();
        for i in 0..classes {
            if left_x[i] > 0 {
                seen[i] = true;
                queue.push_back(i);
            }
        }
        let mut end = None;
        while let Some(node) = queue.pop_front() {
            if node >= classes && left_n[node - classes] > 0 {
                end = Some(node);
                break;
            }
            for (e, a) in acts.iter().enumerate() {
                let (ci, sj) = (a.class, classes + a.station);
                let next = if node == ci {
                    sj
                } else if node == sj && psi[e] > 0 {
                    ci
                } else {
                    continue;
                };
                if !seen[next] {
                    seen[next] = true;
                    prev[next] = Some((node, e));
                    queue.push_back(next);
                }
            }
        }
        let Some(end) = end else { return };
        let mut amount = left_n[end - classes];
        let mut node = end;
        while let Some((from, e)) = prev[node] {
            if from >= classes {
                amount = amount.min(psi[e]);
            }
            node = from;
        }
        amount = amount.min(left_x[node]);
        let start = node;
        node = end;
        while let Some((from, e)) = prev[node] {
            if from < classes {
                psi[e] += amount;
            } else {
                psi[e] -= amount;
            }
            node = from;
        }
        left_x[start] -= amount;
        left_n[end - classes] -= amount;
    }
}

/// Settings of a pre-limit run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtmcConfig {
    pub horizon: f64,
    /// Spacing of the recorded sample grid.
    pub sample_dt: f64,
    pub seed: u64,
}

/// Scaled processes on the sample grid of one replication.
#[derive(Debug, Clone)]
pub struct CtmcPath {
    pub n: u64,
    pub x: Vec<TimeSeries>,
    pub y: Vec<TimeSeries>,
    pub z: Vec<TimeSeries>,
    pub events: u64,
    /// Largest `min(sum Y, sum Z)` seen after any event.
    pub max_idle_while_waiting: i64,
    pub final_state: CtmcState,
}

impl CtmcPath {
    /// Same column layout as the diffusion path export.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        write_paths_csv(out, &state_columns(self.x.len(), &self.x, &self.y, &self.z))
    }
}

/// Unscaled start: `X_i(0) = round(n x*_i + sqrt(n) x0_i)`, floored at 0.
pub fn initial_headcounts(
    model: &TreeModel,
    scaling: &ScalingSpec,
    x0_hat: &[f64],
) -> Result<Vec<i64>> {
    if x0_hat.len() != model.classes() || x0_hat.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!(
            "initial state must be {} finite numbers",
            model.classes()
        )));
    }
    let n = scaling.n as f64;
    Ok((0..model.classes())
        .map(|i| ((n * model.x_star(i) + n.sqrt() * x0_hat[i]).round() as i64).max(0))
        .collect())
}

/// The scaled value of the rounded start, for starting a diffusion at the
/// same point.
pub fn matched_start(model: &TreeModel, scaling: &ScalingSpec, x0_hat: &[f64]) -> Result<Vec<f64>> {
    let counts = initial_headcounts(model, scaling, x0_hat)?;
    let n = scaling.n as f64;
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (c as f64 - n * model.x_star(i)) / n.sqrt())
        .collect())
}

struct EventRun {
    /// Snapshots at the requested times.
    samples: Vec<CtmcState>,
    events: u64,
    max_idle_while_waiting: i64,
    last: CtmcState,
}

fn run_events(
    model: &TreeModel,
    scaling: &ScalingSpec,
    rule: &AssignmentRule,
    x0_hat: &[f64],
    sample_times: &[f64],
    seed: u64,
    replication: u64,
) -> Result<EventRun> {
    scaling.check(model)?;
    let mut assigner = Assigner::new(model, rule)?;
    let acts = model.activities();
    let arrival: Vec<f64> = (0..model.classes())
        .map(|i| scaling.arrival_rate(model, i))
        .collect();
    let service: Vec<f64> = (0..acts.len())
        .map(|e| scaling.service_rate(model, e))
        .collect();
    let abandon: Vec<f64> = (0..model.classes()).map(|i| model.theta(i)).collect();
    let total_arrival: f64 = arrival.iter().sum();
    let horizon = sample_times.last().copied().unwrap_or(0.0);

    let mut state = CtmcState {
        x: initial_headcounts(model, scaling, x0_hat)?,
        servers: scaling.servers.clone(),
        psi: vec![0; acts.len()],
    };
    assigner.assign(&state.x, &state.servers, &mut state.psi);
    state.check(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);

    let mut samples = Vec::with_capacity(sample_times.len());
    let mut next_sample = 0;
    let mut t = 0.0;
    let mut events = 0u64;
    let mut worst = 0i64;
    let mut y = state.queue(model);
    loop {
        let service_total: f64 = state
            .psi
            .iter()
            .zip(&service)
            .map(|(&p, m)| p as f64 * m)
            .sum();
        let abandon_total: f64 = y.iter().zip(&abandon).map(|(&q, th)| q as f64 * th).sum();
        let total = total_arrival + service_total + abandon_total;
        let wait: f64 = if total > 0.0 {
            rng.sample::<f64, _>(Exp1) / total
        } else {
            f64::INFINITY
        };
        let t_next = t + wait;
        while next_sample < sample_times.len() && sample_times[next_sample] < t_next {
            samples.push(state.clone());
            next_sample += 1;
        }
        if t_next > horizon {
            break;
        }
        t = t_next;
        let mut pick = rng.random::<f64>() * total;
        let mut done = false;
        for i in 0..model.classes() {
            if pick < arrival[i] {
                state.x[i] += 1;
                done = true;
                break;
            }
            pick -= arrival[i];
        }
        if !done {
            for e in 0..acts.len() {
                let rate = state.psi[e] as f64 * service[e];
                if pick < rate {
                    state.x[acts[e].class] -= 1;
                    done = true;
                    break;
                }
                pick -= rate;
            }
        }
        if !done {
            // abandonment, falling back to the last eligible class on rounding
            let mut chosen = None;
            for i in 0..model.classes() {
                let rate = y[i] as f64 * abandon[i];
                if rate > 0.0 {
                    chosen = Some(i);
                    if pick < rate {
                        break;
                    }
                    pick -= rate;
                }
            }
            match chosen {
                Some(i) => state.x[i] -= 1,
                None => continue,
            }
        }
        events += 1;
        assigner.assign(&state.x, &state.servers, &mut state.psi);
        state.check(model)?;
        y = state.queue(model);
        let z = state.idle(model);
        worst = worst.max(y.iter().sum::<i64>().min(z.iter().sum::<i64>()));
    }
    Ok(EventRun {
        samples,
        events,
        max_idle_while_waiting: worst,
        last: state,
    })
}

fn scaled(
    model: &TreeModel,
    scaling: &ScalingSpec,
    s: &CtmcState,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = scaling.n as f64;
    let root = n.sqrt();
    let x = (0..model.classes())
        .map(|i| (s.x[i] as f64 - n * model.x_star(i)) / root)
        .collect();
    let y = s.queue(model).iter().map(|&v| v as f64 / root).collect();
    let z = s.idle(model).iter().map(|&v| v as f64 / root).collect();
    (x, y, z)
}

/// One replication (stream `replication` of `config.seed`), sampled on
/// `0, sample_dt, ..., horizon`.
pub fn simulate_ctmc(
    model: &TreeModel,
    scaling: &ScalingSpec,
    rule: &AssignmentRule,
    x0_hat: &[f64],
    config: &CtmcConfig,
    replication: u64,
) -> Result<CtmcPath> {
    let steps = steps_for(config.horizon, config.sample_dt)?;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * config.sample_dt).collect();
    let run = run_events(
        model,
        scaling,
        rule,
        x0_hat,
        &times,
        config.seed,
        replication,
    )?;
    let (classes, stations) = (model.classes(), model.stations());
    let mut xs = vec![Vec::with_capacity(times.len()); classes];
    let mut ys = vec![Vec::with_capacity(times.len()); classes];
    let mut zs = vec![Vec::with_capacity(times.len()); stations];
    for s in &run.samples {
        let (x, y, z) = scaled(model, scaling, s);
        for i in 0..classes {
            xs[i].push(x[i]);
            ys[i].push(y[i]);
        }
        for j in 0..stations {
            zs[j].push(z[j]);
        }
    }
    let wrap = |rows: Vec<Vec<f64>>| -> Result<Vec<TimeSeries>> {
        rows.into_iter()
            .map(|v| TimeSeries::new(config.sample_dt, v))
            .collect()
    };
    Ok(CtmcPath {
        n: scaling.n,
        x: wrap(xs)?,
        y: wrap(ys)?,
        z: wrap(zs)?,
        events: run.events,
        max_idle_while_waiting: run.max_idle_while_waiting,
        final_state: run.last,
    })
}

/// Scaled states of many replications at a few times:
/// `samples[time][replication][class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshots {
    pub times: Vec<f64>,
    pub samples: Vec<Vec<Vec<f64>>>,
}

impl Snapshots {
    pub fn replications(&self) -> usize {
        self.samples.first().map_or(0, |s| s.len())
    }

    pub fn classes(&self) -> usize {
        self.samples
            .first()
            .and_then(|s| s.first())
            .map_or(0, |x| x.len())
    }

    fn transpose(times: Vec<f64>, per_rep: Vec<Vec<Vec<f64>>>) -> Self {
        let samples = (0..times.len())
            .map(|k| per_rep.iter().map(|rep| rep[k].clone()).collect())
            .collect();
        Self { times, samples }
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() || times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(invalid("sample times must be finite and nonnegative"));
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("sample times must be strictly increasing"));
    }
    Ok(())
}

pub fn ctmc_snapshots(
    model: &TreeModel,
    scaling: &ScalingSpec,
    rule: &AssignmentRule,
    x0_hat: &[f64],
    times: &[f64],
    replications: usize,
    seed: u64,
) -> Result<Snapshots> {
    check_times(times)?;
    let per_rep: Vec<Vec<Vec<f64>>> = (0..replications as u64)
        .into_par_iter()
        .map(|rep| {
            let run = run_events(model, scaling, rule, x0_hat, times, seed, rep)?;
            Ok(run
                .samples
                .iter()
                .map(|s| scaled(model, scaling, s).0)
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(Snapshots::transpose(times.to_vec(), per_rep))
}

/// Diffusion states at `times`, which must lie on the `dt` grid.
pub fn diffusion_snapshots(
    model: &TreeModel,
    policy: &Policy,
    x0: &[f64],
    times: &[f64],
    replications: usize,
    dt: f64,
    seed: u64,
) -> Result<Snapshots> {
    check_times(times)?;
    let steps = times
        .iter()
        .map(|&t| {
            let k = (t / dt).round();
            if (k * dt - t).abs() > 1e-9 * t.max(1.0) {
                Err(invalid(format!("time {t} is not a multiple of dt = {dt}")))
            } else {
                Ok(k as usize)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let per_rep = sampled_states(model, x0, policy, &steps, dt, replications, seed)?;
    Ok(Snapshots::transpose(times.to_vec(), per_rep))
}

/// Mean and variance gaps at one time and class, with standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discrepancy {
    pub t: f64,
    pub class: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_se: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub var_se: f64,
}

impl Discrepancy {
    pub fn mean_gap(&self) -> f64 {
        self.mean_a - self.mean_b
    }

    pub fn var_gap(&self) -> f64 {
        self.var_a - self.var_b
    }

    /// Both gaps within `k` combined standard errors.
    pub fn within(&self, k: f64) -> bool {
        self.mean_gap().abs() <= k * self.mean_se && self.var_gap().abs() <= k * self.var_se
    }
}

/// Sample variance and its standard error `sqrt((m4 - s^4) / n)`.
pub fn variance_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.len() < 2 {
        return (0.0, f64::INFINITY);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    (var, ((m4 - var * var).max(0.0) / n).sqrt())
}

/// Per-time, per-class mean and variance discrepancies of `a` against `b`.
pub fn compare_to_diffusion(a: &Snapshots, b: &Snapshots) -> Result<Vec<Discrepancy>> {
    if a.times.len() != b.times.len()
        || a.times
            .iter()
            .zip(&b.times)
            .any(|(s, t)| (s - t).abs() > 1e-12)
    {
        return Err(invalid("snapshot times do not match"));
    }
    if a.classes() != b.classes() {
        return Err(invalid("snapshot dimensions do not match"));
    }
    if a.replications() < 2 || b.replications() < 2 {
        return Err(invalid("need at least two replications on each side"));
    }
    let mut out = Vec::new();
    for (k, &t) in a.times.iter().enumerate() {
        for class in 0..a.classes() {
            let va: Vec<f64> = a.samples[k].iter().map(|x| x[class]).collect();
            let vb: Vec<f64> = b.samples[k].iter().map(|x| x[class]).collect();
            let (ma, sa) = mean_and_se(&va);
            let (mb, sb) = mean_and_se(&vb);
            let (wa, swa) = variance_and_se(&va);
            let (wb, swb) = variance_and_se(&vb);
            out.push(Discrepancy {
                t,
                class,
                mean_a: ma,
                mean_b: mb,
                mean_se: (sa * sa + sb * sb).sqrt(),
                var_a: wa,
                var_b: wb,
                var_se: (swa * swa + swb * swb).sqrt(),
            });
        }
    }
    Ok(out)
}

pub fn write_comparison_csv<W: Write>(out: &mut W, rows: &[Discrepancy]) -> Result<()> {
    writeln!(
        out,
        "t,class,mean_a,mean_b,mean_gap,mean_se,var_a,var_b,var_gap,var_se"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.class + 1,
            r.mean_a,
            r.mean_b,
            r.mean_gap(),
            r.mean_se,
            r.var_a,
            r.var_b,
            r.var_gap(),
            r.var_se
        )?;
    }
    Ok(())
}
