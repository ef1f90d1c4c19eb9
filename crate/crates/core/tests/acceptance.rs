//! End-to-end acceptance checks. Each check prints one `PASS`/`FAIL` line; the
//! process exits non-zero when any check fails.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treediff::calculus::{
    build_sequences, residual_class_form, residual_integral_eq, residual_series_form,
    residual_station_form, TimeSeries,
};
use treediff::ctmc::{
    compare_to_diffusion, ctmc_snapshots, diffusion_snapshots, matched_start, AssignmentRule,
    ScalingSpec,
};
use treediff::det::{
    check_nonidling, geometric_times, growth_report, integrate_det_with, offtree_counterexample,
    ControlPath, StepScheme,
};
use treediff::flow::{drift, lift_control, solve_psi};
use treediff::grid::{Axis, Grid, ValueField};
use treediff::hjb::{extract_policy, hamiltonian, solve_hjb, HjbOptions};
use treediff::model::{
    classify_case, ControlPoint, RegimeCase, RunningCostSpec, TreeCombinatorics, TreeModel,
};
use treediff::sim::{mc_cost, moment_curve, Interpolation, McConfig, Policy};
use treediff::{fixtures, Result};

const LIFT_TOL: f64 = 1e-9;
const ORDER_RANGE: (f64, f64) = (1.7, 2.3);
const SPECIAL_FORM_TOL: f64 = 1e-4;
const SERIES_TOL: f64 = 1e-8;
const IDLENESS_TOL: f64 = 1e-8;
const EXAMPLE_RESIDUAL_TOL: f64 = 1e-8;
const HJB_MC_SE: f64 = 3.0;
const HJB_MC_H: f64 = 5.0;
const POLICY_SE: f64 = 2.0;
const PRELIMIT_SE: f64 = 3.0;
const CONSTANT_COST_TOL: f64 = 1e-10;
const SCALING_AGREEMENT: f64 = 0.99;

type Check = fn() -> Result<Outcome>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn main() {
    let checks: [(&str, Check); 10] = [
        ("lifting map vs dense solve", lifting_oracle),
        (
            "integral equation first-order convergence",
            integral_equation_order,
        ),
        ("special forms and series form", special_forms),
        ("nonidling on the N-model", nonidling),
        ("off-tree counterexample", counterexample),
        ("HJB vs Monte Carlo in one dimension", hjb_vs_monte_carlo),
        ("HJB policy vs static priorities", policy_optimality),
        ("polynomial moment growth", moment_growth),
        ("pre-limit chain vs diffusion", prelimit),
        ("HJB structural invariants", structural_invariants),
    ];
    let mut failures = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "[{}] {:>2} {name}: {detail} ({:.1}s)",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "{} of {} acceptance checks passed",
        checks.len() - failures,
        checks.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------

/// Dense least-squares solve of the incidence equations by Gaussian
/// elimination on the normal equations.
fn dense_flow(model: &TreeModel, alpha: &[f64], beta: &[f64]) -> Vec<f64> {
    let classes = model.classes();
    let rows = classes + model.stations();
    let edges = model.edge_count();
    let mut a = vec![vec![0.0; edges]; rows];
    for (e, act) in model.activities().iter().enumerate() {
        a[act.class][e] = 1.0;
        a[classes + act.station][e] = 1.0;
    }
    let rhs: Vec<f64> = alpha.iter().chain(beta).copied().collect();
    let mut m = vec![vec![0.0; edges + 1]; edges];
    for i in 0..edges {
        for j in 0..edges {
            m[i][j] = (0..rows).map(|r| a[r][i] * a[r][j]).sum();
        }
        m[i][edges] = (0..rows).map(|r| a[r][i] * rhs[r]).sum();
    }
    for col in 0..edges {
        let pivot = (col..edges)
            .max_by(|&p, &q| m[p][col].abs().total_cmp(&m[q][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        for r in 0..edges {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..=edges {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    (0..edges).map(|i| m[i][edges] / m[i][i]).collect()
}

fn random_balanced(rng: &mut ChaCha8Rng, classes: usize, stations: usize) -> (Vec<f64>, Vec<f64>) {
    let alpha: Vec<f64> = (0..classes).map(|_| rng.random_range(-1.0..2.0)).collect();
    let mut beta: Vec<f64> = (0..stations).map(|_| rng.random_range(-1.0..2.0)).collect();
    let gap = (alpha.iter().sum::<f64>() - beta.iter().sum::<f64>()) / stations as f64;
    beta.iter_mut().for_each(|b| *b += gap);
    (alpha, beta)
}

fn lifting_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let model = fixtures::random_tree_up_to(&mut rng, 12);
        let (alpha, beta) = random_balanced(&mut rng, model.classes(), model.stations());
        let fast = solve_psi(&model, &alpha, &beta)?.edge_values(&model);
        let dense = dense_flow(&model, &alpha, &beta);
        for (f, d) in fast.iter().zip(&dense) {
            worst = worst.max((f - d).abs());
        }
    }
    outcome(
        worst <= LIFT_TOL,
        format!("200 trees, max abs error {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------

fn with_theta(model: &TreeModel, theta: &[f64]) -> Result<TreeModel> {
    let mut b = TreeModel::builder(model.classes(), model.stations());
    for a in model.activities() {
        b = b.edge(a.class, a.station, a.mu, a.psi_star);
    }
    b.theta(theta).build()
}

fn smooth_driver(classes: usize, dt: f64, horizon: f64) -> Result<Vec<TimeSeries>> {
    (0..classes)
        .map(|i| {
            let phase = i as f64;
            TimeSeries::from_fn(dt, horizon, move |t| {
                1.0 + t + 0.5 * (2.0 * t + phase).sin()
            })
        })
        .collect()
}

fn steps(horizon: f64, dt: f64) -> usize {
    (horizon / dt).round() as usize + 1
}

fn trajectory_residual(
    model: &TreeModel,
    control_seed: u64,
    dt: f64,
    horizon: f64,
    scheme: StepScheme,
) -> Result<(TimeSeries, TimeSeries)> {
    let comb = TreeCombinatorics::rooted_at_first_class(model)?;
    let seqs = build_sequences(model, &comb)?;
    let mut rng = ChaCha8Rng::seed_from_u64(control_seed);
    let controls = ControlPath::random_smooth(
        &mut rng,
        model.classes(),
        model.stations(),
        dt,
        steps(horizon, dt),
    )?;
    let w = smooth_driver(model.classes(), dt, horizon)?;
    let traj = integrate_det_with(model, &w, &controls, scheme)?;
    let composed = residual_integral_eq(&seqs, &traj.w, &traj.y, &traj.z)?;
    let series = residual_series_form(&seqs, &traj.w, &traj.y, &traj.z)?;
    Ok((composed, series))
}

fn integral_equation_order() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut lo, mut hi, mut c_max): (f64, f64, f64) = (f64::INFINITY, 0.0, 0.0);
    for t in 0..20 {
        let classes = rng.random_range(1..=4);
        let stations = rng.random_range(1..=4);
        let base = fixtures::random_tree(&mut rng, classes, stations);
        let theta: Vec<f64> = (0..classes)
            .map(|_| {
                if t % 2 == 0 {
                    0.0
                } else {
                    rng.random_range(0.0..2.0)
                }
            })
            .collect();
        let model = with_theta(&base, &theta)?;
        let seed = rng.random();
        let coarse = trajectory_residual(&model, seed, 2e-3, 1.0, StepScheme::Euler)?
            .0
            .sup_abs();
        let fine = trajectory_residual(&model, seed, 1e-3, 1.0, StepScheme::Euler)?
            .0
            .sup_abs();
        let ratio = coarse / fine;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        c_max = c_max.max(fine / 1e-3);
    }
    outcome(
        lo >= ORDER_RANGE.0 && hi <= ORDER_RANGE.1,
        format!("20 trees, ratios in [{lo:.3}, {hi:.3}], residual <= {c_max:.2} dt"),
    )
}

// ---------------------------------------------------------------------------

fn special_forms() -> Result<Outcome> {
    let dt = 1e-3;
    let horizon = 2.0;
    let station_models = [
        fixtures::w_model([1.0, 2.0, 0.5]),
        fixtures::w_model([3.0, 1.0, 2.0]),
    ];
    let class_models = [
        fixtures::n_model([1.5, 0.75, 0.75], [0.0, 0.0]),
        TreeModel::builder(3, 2)
            .edge(0, 0, 2.0, 0.5)
            .edge(1, 0, 1.0, 0.5)
            .edge(1, 1, 1.0, 0.5)
            .edge(2, 1, 0.5, 0.5)
            .build()?,
    ];
    let mut special: f64 = 0.0;
    let mut series_gap: f64 = 0.0;
    for (k, (model, is_station)) in station_models
        .iter()
        .map(|m| (m, true))
        .chain(class_models.iter().map(|m| (m, false)))
        .enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(30 + k as u64);
        let controls = ControlPath::random_smooth(
            &mut rng,
            model.classes(),
            model.stations(),
            dt,
            steps(horizon, dt),
        )?;
        let w = smooth_driver(model.classes(), dt, horizon)?;
        let traj = integrate_det_with(model, &w, &controls, StepScheme::Heun)?;
        let r = if is_station {
            residual_station_form(model, &traj.w, &traj.y, &traj.z)?
        } else {
            residual_class_form(model, &traj.w, &traj.y, &traj.z)?
        };
        special = special.max(r.sup_abs());
        let (composed, series) =
            trajectory_residual(model, 40 + k as u64, dt, horizon, StepScheme::Heun)?;
        series_gap = series_gap.max(composed.sub(&series)?.sup_abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let model = fixtures::random_tree_up_to(&mut rng, 9);
        let (composed, series) =
            trajectory_residual(&model, rng.random(), dt, 1.0, StepScheme::Euler)?;
        series_gap = series_gap.max(composed.sub(&series)?.sup_abs());
    }
    outcome(
        special <= SPECIAL_FORM_TOL && series_gap <= SERIES_TOL,
        format!("special-form residual {special:.2e}, series vs composed {series_gap:.2e}"),
    )
}

// ---------------------------------------------------------------------------

fn nonidling() -> Result<Outcome> {
    let model = fixtures::n_model([1.0, 2.0, 0.5], [0.5, 0.2]);
    let (dt, horizon) = (1e-3, 5.0);
    let w: Vec<TimeSeries> = (0..2)
        .map(|_| TimeSeries::from_fn(dt, horizon, |t| 1.0 + t))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut hypotheses = true;
    for run in 0..50 {
        let len = steps(horizon, dt);
        let controls = if run % 2 == 0 {
            ControlPath::random_smooth(&mut rng, 2, 2, dt, len)?
        } else {
            ControlPath::random_vertices(&mut rng, 2, 2, dt, len, 8)?
        };
        let report = check_nonidling(&model, &w, &controls)?;
        hypotheses &= report.hypotheses_hold();
        worst = worst.max(report.max_idleness);
    }
    outcome(
        hypotheses && worst <= IDLENESS_TOL,
        format!("50 control paths, max idleness {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------

fn counterexample() -> Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for k in [1.0, 10.0, 100.0] {
        let ex = offtree_counterexample(k, 1e-3, 5.0)?;
        let residual = ex.residuals.max();
        let ok = residual <= EXAMPLE_RESIDUAL_TOL
            && ex.sup_state_norm >= 0.99 * k
            && ex.sup_state_norm <= 1.01 * k
            && ex.sup_driver_norm == 0.0;
        pass &= ok;
        parts.push(format!(
            "k={k}: residual {residual:.1e}, sup|x| {:.4}",
            ex.sup_state_norm
        ));
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------------------

fn hjb_vs_monte_carlo() -> Result<Outcome> {
    let model = fixtures::one_dimensional();
    let cost = fixtures::one_dimensional_cost();
    let h = 0.01;
    let grid = Grid::new(vec![Axis::with_spacing(-6.0, 6.0, h)?])?;
    let solution = solve_hjb(&model, &cost, &grid, &HjbOptions::default())?;
    let policy = Policy::default_static(&model)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for x in [-1.0, 0.0, 1.0] {
        let f = solution.value.at(&[x]);
        let mc = mc_cost(
            &model,
            &cost,
            &[x],
            &policy,
            &McConfig::new(100_000, 5e-3, 6),
        )?;
        let gap = (f - mc.mean).abs();
        let tol = HJB_MC_SE * mc.std_error + HJB_MC_H * h;
        pass &= gap <= tol;
        parts.push(format!(
            "x={x}: f={f:.4} mc={:.4}±{:.4}",
            mc.mean, mc.std_error
        ));
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------------------

fn n_model_fixture() -> (TreeModel, RunningCostSpec) {
    let model = fixtures::n_model_with([1.0, 2.0, 0.5], [0.5, 0.2], [1.0, 1.0], 1.0);
    let mut cost = RunningCostSpec::linear_queue(vec![1.0, 1.5], 2);
    cost.idle_weights = vec![0.5, 1.0];
    (model, cost)
}

fn hjb_policy(model: &TreeModel, cost: &RunningCostSpec, h: f64) -> Result<Policy> {
    let grid = Grid::default_box(model, h)?;
    let solution = solve_hjb(model, cost, &grid, &HjbOptions::default())?;
    let field = extract_policy(&solution.value, model, cost)?;
    Ok(Policy::GridMarkov {
        field: Arc::new(field),
        interpolation: Interpolation::Nearest,
    })
}

fn policy_optimality() -> Result<Outcome> {
    let (model, cost) = n_model_fixture();
    if !classify_case(&model, &cost).contains(&RegimeCase::ShallowTree) {
        return outcome(false, "fixture is outside the shallow-tree regime".into());
    }
    let hjb = hjb_policy(&model, &cost, 0.1)?;
    let statics = Policy::all_static(&model);
    let starts = [
        [0.0, 0.0],
        [1.0, 0.0],
        [-1.0, 0.0],
        [0.0, 1.0],
        [0.0, -1.0],
        [1.0, 1.0],
        [1.0, -1.0],
        [-1.0, 1.0],
        [-1.0, -1.0],
    ];
    let mut pass = true;
    let mut worst_margin = f64::NEG_INFINITY;
    for (k, x0) in starts.iter().enumerate() {
        let config = McConfig::new(10_000, 1e-2, 70 + k as u64);
        let ours = mc_cost(&model, &cost, x0, &hjb, &config)?;
        for policy in &statics {
            let base = mc_cost(&model, &cost, x0, policy, &config)?;
            let slack = POLICY_SE * ours.std_error.hypot(base.std_error);
            let margin = (ours.mean - base.mean) / slack;
            worst_margin = worst_margin.max(margin);
            pass &= ours.mean <= base.mean + slack;
        }
    }
    outcome(
        pass,
        format!("9 starts x 4 baselines, worst (hjb - static) / combined SE = {worst_margin:.2} (limit {POLICY_SE})"),
    )
}

// ---------------------------------------------------------------------------

fn moment_growth() -> Result<Outcome> {
    let case_i = fixtures::w_model([1.0, 2.0, 0.5]);
    let cost_i = RunningCostSpec::linear_queue(vec![1.0, 1.5], 3);
    let (case_ii, cost_ii) = n_model_fixture();
    let times = geometric_times(7);
    let mut runs = 0;
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, model, cost, case) in [
        ("i", &case_i, &cost_i, RegimeCase::RateStructure),
        ("ii", &case_ii, &cost_ii, RegimeCase::ShallowTree),
    ] {
        if !classify_case(model, cost).contains(&case) {
            return outcome(false, format!("case {label} fixture misclassified"));
        }
        let mut policies = Policy::all_static(model);
        policies.push(Policy::RandomSwitching { rate: 1.0 });
        policies.push(hjb_policy(model, cost, 0.1)?);
        let mut worst_ratio: f64 = 0.0;
        for (k, policy) in policies.iter().enumerate() {
            let x0 = vec![0.0; model.classes()];
            let curve = moment_curve(model, policy, &x0, 2.0, &times, 2000, 2e-2, 80 + k as u64)?;
            let values: Vec<f64> = curve.iter().map(|e| e.mean).collect();
            let report = growth_report(&times, &values)?;
            runs += 1;
            pass &= report.polynomial_fits_better();
            worst_ratio = worst_ratio.max(report.polynomial_rss / report.exponential_rss);
        }
        parts.push(format!(
            "case {label}: {} policies, max poly/exp RSS {worst_ratio:.3}",
            policies.len()
        ));
    }
    outcome(pass, format!("{runs} runs; {}", parts.join("; ")))
}

// ---------------------------------------------------------------------------

fn prelimit() -> Result<Outcome> {
    let model = fixtures::one_dimensional();
    let scaling = ScalingSpec::new(&model, 400)?;
    let rule = AssignmentRule::StaticPriority {
        class: 0,
        station: 0,
    };
    let x0 = [0.5];
    let times = [1.0];
    let chain = ctmc_snapshots(&model, &scaling, &rule, &x0, &times, 10_000, 9)?;
    let start = matched_start(&model, &scaling, &x0)?;
    let policy = Policy::default_static(&model)?;
    let limit = diffusion_snapshots(&model, &policy, &start, &times, 10_000, 1e-3, 10)?;
    let rows = compare_to_diffusion(&chain, &limit)?;
    let pass = rows.iter().all(|d| d.within(PRELIMIT_SE));
    let d = &rows[0];
    outcome(
        pass,
        format!(
            "mean {:.4} vs {:.4} ({:.2} SE), variance {:.4} vs {:.4} ({:.2} SE)",
            d.mean_a,
            d.mean_b,
            d.mean_gap() / d.mean_se,
            d.var_a,
            d.var_b,
            d.var_gap() / d.var_se
        ),
    )
}

// ---------------------------------------------------------------------------

/// Gradient by central differences, one-sided on the faces of the box.
fn gradient(field: &ValueField, flat: usize) -> Vec<f64> {
    let grid = &field.grid;
    let mut idx = vec![0; grid.dims()];
    grid.multi_index(flat, &mut idx);
    (0..grid.dims())
        .map(|d| {
            let s = grid.stride(d);
            let h = grid.h(d);
            let last = grid.axes()[d].points - 1;
            let v = &field.values;
            if idx[d] == 0 {
                (v[flat + s] - v[flat]) / h
            } else if idx[d] == last {
                (v[flat] - v[flat - s]) / h
            } else {
                (v[flat + s] - v[flat - s]) / (2.0 * h)
            }
        })
        .collect()
}

fn pre_hamiltonian(
    model: &TreeModel,
    cost: &RunningCostSpec,
    x: &[f64],
    p: &[f64],
    u: &ControlPoint,
) -> Result<f64> {
    let b = drift(model, x, u)?;
    Ok(b.iter().zip(p).map(|(b, p)| b * p).sum::<f64>() + cost.eval(x, u))
}

fn same_effect(model: &TreeModel, x: &[f64], a: &ControlPoint, b: &ControlPoint) -> Result<bool> {
    let la = lift_control(model, x, a)?;
    let lb = lift_control(model, x, b)?;
    Ok(la
        .y
        .iter()
        .zip(&lb.y)
        .chain(la.z.iter().zip(&lb.z))
        .all(|(p, q)| (p - q).abs() <= 1e-9))
}

fn random_control(rng: &mut ChaCha8Rng, classes: usize, stations: usize) -> ControlPoint {
    let mut simplex = |n: usize| {
        let e: Vec<f64> = (0..n)
            .map(|_| -rng.random::<f64>().max(1e-300).ln())
            .collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect::<Vec<_>>()
    };
    let u = simplex(classes);
    let v = simplex(stations);
    ControlPoint::new(u, v).expect("random control")
}

fn structural_invariants() -> Result<Outcome> {
    // constant cost
    let mut constant_gap: f64 = 0.0;
    for (model, h) in [
        (fixtures::one_dimensional(), 0.05),
        (
            fixtures::n_model_with([1.0, 2.0, 3.0], [0.5, 0.5], [1.0, 1.0], 2.0),
            0.25,
        ),
    ] {
        let cost = RunningCostSpec::constant(model.classes(), model.stations(), 1.0);
        let grid = Grid::default_box(&model, h)?;
        let solution = solve_hjb(&model, &cost, &grid, &HjbOptions::default())?;
        let exact = 1.0 / model.gamma();
        for v in &solution.value.values {
            constant_gap = constant_gap.max((v - exact).abs());
        }
    }

    // cost scaling and vertex optimality
    let (model, cost) = n_model_fixture();
    let scaled = cost.scaled(3.5);
    let grid = Grid::default_box(&model, 0.1)?;
    let options = HjbOptions::default();
    let value = solve_hjb(&model, &cost, &grid, &options)?.value;
    let value_scaled = solve_hjb(&model, &scaled, &grid, &options)?.value;
    let policy = extract_policy(&value, &model, &cost)?;
    let policy_scaled = extract_policy(&value_scaled, &model, &scaled)?;
    let vertices: Vec<ControlPoint> = (0..model.classes())
        .flat_map(|i| (0..model.stations()).map(move |j| ControlPoint::vertex(2, 2, i, j)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut compared, mut unchanged, mut ties, mut vertex_ok) = (0usize, 0usize, 0usize, 0usize);
    for flat in 0..grid.len() {
        let x = grid.point(flat);
        let p = gradient(&value, flat);
        let scores: Vec<f64> = vertices
            .iter()
            .map(|u| pre_hamiltonian(&model, &cost, &x, &p, u))
            .collect::<Result<_>>()?;
        let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let scale = best.abs().max(1.0);

        // vertex optimality: no sampled control and not the extracted one beats the best vertex
        let (h_min, h_control) = hamiltonian(&model, &cost, &x, &p)?;
        let mut ok = h_control.as_vertex().is_some() && (h_min - best).abs() <= 1e-9 * scale;
        ok &= policy.controls[flat].as_vertex().is_some();
        for _ in 0..32 {
            let u = random_control(&mut rng, 2, 2);
            ok &= best <= pre_hamiltonian(&model, &cost, &x, &p, &u)? + 1e-9 * scale;
        }
        if ok {
            vertex_ok += 1;
        }

        // ties: a distinct effective control within a relative 1e-6 of the best
        let best_vertex = scores.iter().position(|&s| s == best).unwrap();
        let mut tie = false;
        for (k, &s) in scores.iter().enumerate() {
            if s - best <= 1e-6 * scale
                && !same_effect(&model, &x, &vertices[k], &vertices[best_vertex])?
            {
                tie = true;
            }
        }
        if tie {
            ties += 1;
            continue;
        }
        compared += 1;
        if same_effect(
            &model,
            &x,
            &policy.controls[flat],
            &policy_scaled.controls[flat],
        )? {
            unchanged += 1;
        }
    }
    let agreement = unchanged as f64 / compared.max(1) as f64;
    let vertex_share = vertex_ok as f64 / grid.len() as f64;
    outcome(
        constant_gap <= CONSTANT_COST_TOL && agreement >= SCALING_AGREEMENT && vertex_ok == grid.len(),
        format!(
            "constant-cost gap {constant_gap:.1e}; argmin unchanged at {:.2}% of {compared} points ({ties} ties excluded); vertex optimal at {:.1}%",
            100.0 * agreement,
            100.0 * vertex_share
        ),
    )
}
