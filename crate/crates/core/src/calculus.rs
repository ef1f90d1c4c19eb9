//! Operator calculus on uniformly sampled paths.
//!
//! * `J f(t) = int_0^t f` (trapezoid rule),
//! * `T_a f = f + a J f`, and `T_A = T_a1 o ... o T_ak` for a multiset `A`,
//! * the inverse of `T_mu`, `x(t) = w(t) - mu int_0^t w(s) e^{-mu (t - s)} ds`.
//!
//! The operators `T_a` commute, and `T_A = sum_n e_n(A) J^n` where `e_n` is
//! the n-th elementary symmetric polynomial of the elements of `A`.
//!
//! [`build_sequences`] produces, for a tree rooted at a class, multisets
//! `A_i`, `A'_i = A_i + {theta_i}` and `B_j` such that every solution of the
//! deterministic system satisfies
//!
//! ```text
//! sum_i T_{A_i} w_i - sum_i T_{A'_i} y_i + sum_j T_{B_j} z_j = 0.
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Node, TreeCombinatorics, TreeModel};

/// A real path sampled at `0, dt, 2 dt, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    dt: f64,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        if values.len() < 2 {
            return Err(invalid("a time series needs at least two samples"));
        }
        Ok(Self { dt, values })
    }

    /// Samples `f` on `[0, horizon]` with `round(horizon / dt)` steps.
    pub fn from_fn(dt: f64, horizon: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let steps = steps_for(horizon, dt)?;
        Self::new(dt, (0..=steps).map(|k| f(k as f64 * dt)).collect())
    }

    pub fn zeros(dt: f64, len: usize) -> Result<Self> {
        Self::new(dt, vec![0.0; len])
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn same_grid(&self, other: &TimeSeries) -> bool {
        self.values.len() == other.values.len() && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }

    fn map_with(&self, other: &TimeSeries, f: impl Fn(f64, f64) -> f64) -> TimeSeries {
        TimeSeries {
            dt: self.dt,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &TimeSeries) -> Result<TimeSeries> {
        check_grids([self, other])?;
        Ok(self.map_with(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &TimeSeries) -> Result<TimeSeries> {
        check_grids([self, other])?;
        Ok(self.map_with(other, |a, b| a - b))
    }

    pub fn scale(&self, factor: f64) -> TimeSeries {
        TimeSeries {
            dt: self.dt,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    fn add_scaled_in_place(&mut self, other: &TimeSeries, factor: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }
}

pub(crate) fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(horizon > 0.0) || !horizon.is_finite() || !dt.is_finite() {
        return Err(invalid(format!(
            "need positive horizon and step, got horizon {horizon}, dt {dt}"
        )));
    }
    let steps = (horizon / dt).round();
    if steps < 1.0 {
        return Err(invalid("horizon shorter than one time step"));
    }
    Ok(steps as usize)
}

/// Errors unless every series shares the same step and length.
pub fn check_grids<'a>(series: impl IntoIterator<Item = &'a TimeSeries>) -> Result<()> {
    let mut iter = series.into_iter();
    let Some(first) = iter.next() else {
        return Ok(());
    };
    for s in iter {
        if !first.same_grid(s) {
            return Err(Error::GridMismatch(format!(
                "series with {} samples at dt {} vs {} samples at dt {}",
                first.len(),
                first.dt,
                s.len(),
                s.dt
            )));
        }
    }
    Ok(())
}

/// Running integral by the trapezoid rule; `(J f)(0) = 0`.
pub fn integrate(f: &TimeSeries) -> TimeSeries {
    let h = 0.5 * f.dt;
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in f.values.windows(2) {
        acc += h * (w[0] + w[1]);
        out.push(acc);
    }
    TimeSeries {
        dt: f.dt,
        values: out,
    }
}

/// Running integral by the left Riemann sum, the quadrature implied by
/// explicit stepping with left-endpoint evaluation.
pub fn integrate_left(f: &TimeSeries) -> TimeSeries {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for &v in &f.values[..f.len() - 1] {
        acc += f.dt * v;
        out.push(acc);
    }
    TimeSeries {
        dt: f.dt,
        values: out,
    }
}

/// `T_alpha f = f + alpha J f`.
pub fn apply_t(alpha: f64, f: &TimeSeries) -> TimeSeries {
    if alpha == 0.0 {
        return f.clone();
    }
    let mut out = f.clone();
    out.add_scaled_in_place(&integrate(f), alpha);
    out
}

/// `T_A f`, applying the elements of `rates` in order.
pub fn apply_t_seq(rates: &[f64], f: &TimeSeries) -> TimeSeries {
    rates.iter().fold(f.clone(), |acc, &a| apply_t(a, &acc))
}

/// Solves `x = w - mu J x` through the convolution formula, integrated by the
/// trapezoid rule.
pub fn invert_t(mu: f64, w: &TimeSeries) -> Result<TimeSeries> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(invalid(format!("inversion needs mu > 0, got {mu}")));
    }
    let decay = (-mu * w.dt).exp();
    let h = 0.5 * w.dt;
    let mut conv = 0.0;
    let mut out = Vec::with_capacity(w.len());
    out.push(w.values[0]);
    for k in 1..w.len() {
        conv = decay * conv + h * (decay * w.values[k - 1] + w.values[k]);
        out.push(w.values[k] - mu * conv);
    }
    Ok(TimeSeries {
        dt: w.dt,
        values: out,
    })
}

/// Elementary symmetric polynomials `e_0 = 1, e_1, ..., e_k` of `rates`.
pub fn expand_coefficients(rates: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; rates.len() + 1];
    e[0] = 1.0;
    for (k, &a) in rates.iter().enumerate() {
        for n in (1..=k + 1).rev() {
            e[n] += a * e[n - 1];
        }
    }
    e
}

/// `sum_n coefficients[n] J^n f`.
pub fn apply_series(coefficients: &[f64], f: &TimeSeries) -> TimeSeries {
    let mut out = f.scale(coefficients.first().copied().unwrap_or(0.0));
    let mut power = f.clone();
    for &c in coefficients.iter().skip(1) {
        power = integrate(&power);
        if c != 0.0 {
            out.add_scaled_in_place(&power, c);
        }
    }
    out
}

/// A multiset of rates, kept sorted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RateMultiset(Vec<f64>);

impl RateMultiset {
    pub fn new(mut rates: Vec<f64>) -> Self {
        rates.sort_by(f64::total_cmp);
        Self(rates)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn union(&self, other: &RateMultiset) -> RateMultiset {
        let mut all = self.0.clone();
        all.extend_from_slice(&other.0);
        RateMultiset::new(all)
    }

    pub fn with(&self, rate: f64) -> RateMultiset {
        let mut all = self.0.clone();
        all.push(rate);
        RateMultiset::new(all)
    }

    /// Removes one element equal to `rate`. Returns `None` if absent.
    pub fn without(&self, rate: f64) -> Option<RateMultiset> {
        let pos = self.0.iter().position(|&r| r == rate)?;
        let mut all = self.0.clone();
        all.remove(pos);
        Some(RateMultiset(all))
    }
}

/// The multisets `A_i`, `A'_i` and `B_j` of the integral equation.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSequences {
    pub root: Node,
    pub a: Vec<RateMultiset>,
    pub a_prime: Vec<RateMultiset>,
    pub b: Vec<RateMultiset>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassEntry {
    label: usize,
    #[serde(rename = "A")]
    a: RateMultiset,
    #[serde(rename = "A_prime")]
    a_prime: RateMultiset,
}

#[derive(Debug, Serialize, Deserialize)]
struct StationEntry {
    label: usize,
    #[serde(rename = "B")]
    b: RateMultiset,
}

#[derive(Debug, Serialize, Deserialize)]
struct SequencesJson {
    root: usize,
    classes: Vec<ClassEntry>,
    stations: Vec<StationEntry>,
}

impl OperatorSequences {
    /// JSON form with global one-based node labels.
    pub fn to_json(&self) -> serde_json::Value {
        let classes = self.a.len();
        let doc = SequencesJson {
            root: self.root.label(classes),
            classes: (0..classes)
                .map(|i| ClassEntry {
                    label: i + 1,
                    a: self.a[i].clone(),
                    a_prime: self.a_prime[i].clone(),
                })
                .collect(),
            stations: self
                .b
                .iter()
                .enumerate()
                .map(|(j, b)| StationEntry {
                    label: classes + j + 1,
                    b: b.clone(),
                })
                .collect(),
        };
        serde_json::to_value(doc).expect("sequences serialize")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let doc: SequencesJson = serde_json::from_value(value.clone())?;
        let classes = doc.classes.len();
        if doc.root == 0 || doc.root > classes {
            return Err(invalid("root label must name a class"));
        }
        Ok(Self {
            root: Node::Class(doc.root - 1),
            a: doc.classes.iter().map(|c| c.a.clone()).collect(),
            a_prime: doc.classes.iter().map(|c| c.a_prime.clone()).collect(),
            b: doc.stations.into_iter().map(|s| s.b).collect(),
        })
    }
}

/// Builds the multisets by the level induction: after processing class level
/// `2k`, every equation term has been multiplied through by
/// `D_k = (mu_{i a(i)})` over that level, and each frontier class `i`
/// contributes `D_k - {mu_{i a(i)}} + C_i` to itself and, with the child edge
/// rate appended, to the stations and classes below it.
pub fn build_sequences(model: &TreeModel, comb: &TreeCombinatorics) -> Result<OperatorSequences> {
    model.require_tree()?;
    let Node::Class(root) = comb.root else {
        return Err(invalid("the root must be a class node"));
    };
    let mut a: BTreeMap<usize, RateMultiset> = BTreeMap::new();
    let mut b: BTreeMap<usize, RateMultiset> = BTreeMap::new();
    // C_i for classes on the current even level
    let mut frontier: BTreeMap<usize, RateMultiset> = BTreeMap::new();

    a.insert(root, RateMultiset::empty());
    for &station in comb.children(Node::Class(root)) {
        let Node::Station(j) = station else {
            unreachable!()
        };
        let rate = model.mu(root, j);
        b.insert(j, RateMultiset::new(vec![rate]));
        for &child in comb.children(station) {
            let Node::Class(i) = child else {
                unreachable!()
            };
            frontier.insert(i, RateMultiset::new(vec![rate]));
        }
    }

    while !frontier.is_empty() {
        let parent_rate = |i: usize| -> f64 {
            match comb.parent(Node::Class(i)) {
                Some(Node::Station(j)) => model.mu(i, j),
                _ => unreachable!("non-root class has a station parent"),
            }
        };
        let d = RateMultiset::new(frontier.keys().map(|&i| parent_rate(i)).collect());
        for set in a.values_mut().chain(b.values_mut()) {
            *set = set.union(&d);
        }
        let mut next = BTreeMap::new();
        for (&i, c) in &frontier {
            let base = d
                .without(parent_rate(i))
                .expect("D contains every frontier parent rate")
                .union(c);
            a.insert(i, base.clone());
            for &station in comb.children(Node::Class(i)) {
                let Node::Station(j) = station else {
                    unreachable!()
                };
                let rate = model.mu(i, j);
                let below = base.with(rate);
                b.insert(j, below.clone());
                for &child in comb.children(station) {
                    let Node::Class(k) = child else {
                        unreachable!()
                    };
                    next.insert(k, below.clone());
                }
            }
        }
        frontier = next;
    }

    let classes = model.classes();
    let stations = model.stations();
    if a.len() != classes || b.len() != stations {
        return Err(Error::Structure(
            "tree levels do not cover every node".into(),
        ));
    }
    let a: Vec<RateMultiset> = a.into_values().collect();
    let a_prime = a
        .iter()
        .enumerate()
        .map(|(i, set)| set.with(model.theta(i)))
        .collect();
    Ok(OperatorSequences {
        root: comb.root,
        a,
        a_prime,
        b: b.into_values().collect(),
    })
}

fn check_paths(
    classes: usize,
    stations: usize,
    w: &[TimeSeries],
    y: &[TimeSeries],
    z: &[TimeSeries],
) -> Result<()> {
    if w.len() != classes || y.len() != classes || z.len() != stations {
        return Err(invalid(format!(
            "expected {classes} w and y paths and {stations} z paths, got {}, {}, {}",
            w.len(),
            y.len(),
            z.len()
        )));
    }
    check_grids(w.iter().chain(y).chain(z))
}

/// Pointwise left side of the integral equation
/// `sum_i T_{A_i} w_i - sum_i T_{A'_i} y_i + sum_j T_{B_j} z_j`.
pub fn residual_integral_eq(
    seqs: &OperatorSequences,
    w: &[TimeSeries],
    y: &[TimeSeries],
    z: &[TimeSeries],
) -> Result<TimeSeries> {
    check_paths(seqs.a.len(), seqs.b.len(), w, y, z)?;
    let mut total = TimeSeries::zeros(w[0].dt, w[0].len())?;
    for (i, (wi, yi)) in w.iter().zip(y).enumerate() {
        total.add_scaled_in_place(&apply_t_seq(seqs.a[i].as_slice(), wi), 1.0);
        total.add_scaled_in_place(&apply_t_seq(seqs.a_prime[i].as_slice(), yi), -1.0);
    }
    for (j, zj) in z.iter().enumerate() {
        total.add_scaled_in_place(&apply_t_seq(seqs.b[j].as_slice(), zj), 1.0);
    }
    Ok(total)
}

/// The same left side written as a power series in `J`, with coefficients
/// from [`expand_coefficients`].
pub fn residual_series_form(
    seqs: &OperatorSequences,
    w: &[TimeSeries],
    y: &[TimeSeries],
    z: &[TimeSeries],
) -> Result<TimeSeries> {
    check_paths(seqs.a.len(), seqs.b.len(), w, y, z)?;
    let mut total = TimeSeries::zeros(w[0].dt, w[0].len())?;
    for (i, (wi, yi)) in w.iter().zip(y).enumerate() {
        total.add_scaled_in_place(
            &apply_series(&expand_coefficients(seqs.a[i].as_slice()), wi),
            1.0,
        );
        total.add_scaled_in_place(
            &apply_series(&expand_coefficients(seqs.a_prime[i].as_slice()), yi),
            -1.0,
        );
    }
    for (j, zj) in z.iter().enumerate() {
        total.add_scaled_in_place(
            &apply_series(&expand_coefficients(seqs.b[j].as_slice()), zj),
            1.0,
        );
    }
    Ok(total)
}

/// Per-station rate when `mu_ij` depends only on `j`.
pub fn station_rates(model: &TreeModel) -> Option<Vec<f64>> {
    let mut rates = vec![None; model.stations()];
    for a in model.activities() {
        match rates[a.station] {
            None => rates[a.station] = Some(a.mu),
            Some(m) if m != a.mu => return None,
            _ => {}
        }
    }
    rates.into_iter().collect()
}

/// Per-class rate when `mu_ij` depends only on `i`.
pub fn class_rates(model: &TreeModel) -> Option<Vec<f64>> {
    let mut rates = vec![None; model.classes()];
    for a in model.activities() {
        match rates[a.class] {
            None => rates[a.class] = Some(a.mu),
            Some(m) if m != a.mu => return None,
            _ => {}
        }
    }
    rates.into_iter().collect()
}

fn require_no_abandonment(model: &TreeModel) -> Result<()> {
    if (0..model.classes()).any(|i| model.theta(i) != 0.0) {
        return Err(invalid("the reduced forms assume no abandonment"));
    }
    Ok(())
}

/// Station-dependent rates: `sum_i (w_i - y_i) + sum_j T_{mu_j} z_j`.
pub fn residual_station_form(
    model: &TreeModel,
    w: &[TimeSeries],
    y: &[TimeSeries],
    z: &[TimeSeries],
) -> Result<TimeSeries> {
    require_no_abandonment(model)?;
    let rates =
        station_rates(model).ok_or_else(|| invalid("service rates are not station dependent"))?;
    check_paths(model.classes(), model.stations(), w, y, z)?;
    let mut total = TimeSeries::zeros(w[0].dt, w[0].len())?;
    for (wi, yi) in w.iter().zip(y) {
        total.add_scaled_in_place(wi, 1.0);
        total.add_scaled_in_place(yi, -1.0);
    }
    for (zj, &mu) in z.iter().zip(&rates) {
        total.add_scaled_in_place(&apply_t(mu, zj), 1.0);
    }
    Ok(total)
}

/// Class-dependent rates: `sum_i T_{M_i} (w_i - y_i) + T_M (e.z)` with
/// `M_i = (mu_k)_{k != i}` and `M = (mu_k)_k`.
pub fn residual_class_form(
    model: &TreeModel,
    w: &[TimeSeries],
    y: &[TimeSeries],
    z: &[TimeSeries],
) -> Result<TimeSeries> {
    require_no_abandonment(model)?;
    let rates =
        class_rates(model).ok_or_else(|| invalid("service rates are not class dependent"))?;
    check_paths(model.classes(), model.stations(), w, y, z)?;
    let mut total = TimeSeries::zeros(w[0].dt, w[0].len())?;
    for (i, (wi, yi)) in w.iter().zip(y).enumerate() {
        let others: Vec<f64> = rates
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &m)| m)
            .collect();
        total.add_scaled_in_place(&apply_t_seq(&others, &wi.sub(yi)?), 1.0);
    }
    let mut idle = TimeSeries::zeros(w[0].dt, w[0].len())?;
    for zj in z {
        idle.add_scaled_in_place(zj, 1.0);
    }
    total.add_scaled_in_place(&apply_t_seq(&rates, &idle), 1.0);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn integral_of_constant() {
        let f = TimeSeries::new(0.5, vec![1.0; 5]).unwrap();
        assert_eq!(integrate(&f).values(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn trapezoid_is_exact_on_linear_paths() {
        let f = TimeSeries::from_fn(0.1, 1.0, |t| t).unwrap();
        assert!((integrate(&f).last() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn integral_of_exponential() {
        let f = TimeSeries::from_fn(1e-3, 1.0, f64::exp).unwrap();
        let exact = std::f64::consts::E - 1.0;
        assert!((integrate(&f).last() - exact).abs() < 1e-6);
    }

    #[test]
    fn zero_rate_is_identity() {
        let f = TimeSeries::from_fn(0.01, 1.0, |t| t.sin()).unwrap();
        assert_eq!(apply_t(0.0, &f), f);
        assert_eq!(apply_t_seq(&[], &f), f);
    }

    #[test]
    fn unit_rate_on_constant() {
        let f = TimeSeries::from_fn(0.125, 1.0, |_| 1.0).unwrap();
        let g = apply_t(1.0, &f);
        for (k, v) in g.values().iter().enumerate() {
            assert!((v - (1.0 + g.time(k))).abs() < 1e-14);
        }
    }

    #[test]
    fn composition_order_does_not_matter() {
        let f = TimeSeries::from_fn(1e-3, 2.0, |t| (3.0 * t).cos() + t * t).unwrap();
        let seq = apply_t_seq(&[1.0, 2.0], &f);
        let one_then_two = apply_t(1.0, &apply_t(2.0, &f));
        let two_then_one = apply_t(2.0, &apply_t(1.0, &f));
        for k in 0..f.len() {
            assert!((seq.values()[k] - one_then_two.values()[k]).abs() < 1e-10);
            assert!((seq.values()[k] - two_then_one.values()[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn inverse_of_constant_is_exponential_decay() {
        let w = TimeSeries::from_fn(1e-3, 1.0, |_| 1.0).unwrap();
        let x = invert_t(1.0, &w).unwrap();
        assert!((x.last() - (-1.0f64).exp()).abs() < 1e-6);
        assert!((x.last() - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn inverse_of_zero_is_zero() {
        let w = TimeSeries::zeros(0.01, 50).unwrap();
        assert!(invert_t(2.0, &w)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn inverse_rejects_nonpositive_rate() {
        let w = TimeSeries::zeros(0.01, 50).unwrap();
        assert!(invert_t(0.0, &w).is_err());
        assert!(invert_t(-1.0, &w).is_err());
    }

    #[test]
    fn coefficient_expansion() {
        assert_eq!(expand_coefficients(&[1.0, 2.0]), vec![1.0, 3.0, 2.0]);
        assert_eq!(expand_coefficients(&[]), vec![1.0]);
        assert_eq!(
            expand_coefficients(&[1.0, 2.0, 3.0]),
            vec![1.0, 6.0, 11.0, 6.0]
        );
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = TimeSeries::zeros(0.1, 10).unwrap();
        let b = TimeSeries::zeros(0.1, 11).unwrap();
        assert!(matches!(a.add(&b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn single_edge_sequences() {
        let model = fixtures::single_edge(2.5, 0.0);
        let comb = TreeCombinatorics::rooted_at_first_class(&model).unwrap();
        let seqs = build_sequences(&model, &comb).unwrap();
        assert!(seqs.a[0].is_empty());
        assert_eq!(seqs.b[0].as_slice(), &[2.5]);
        assert_eq!(seqs.a_prime[0].as_slice(), &[0.0]);
    }

    #[test]
    fn n_model_sequences() {
        // root class 1: A_1 = {mu_23}, B_3 = {mu_13, mu_23}, A_2 = {mu_13},
        // B_4 = {mu_13, mu_24}
        let model = fixtures::n_model([1.0, 2.0, 3.0], [0.5, 0.25]);
        let comb = TreeCombinatorics::rooted_at_first_class(&model).unwrap();
        let seqs = build_sequences(&model, &comb).unwrap();
        assert_eq!(seqs.a[0].as_slice(), &[2.0]);
        assert_eq!(seqs.a[1].as_slice(), &[1.0]);
        assert_eq!(seqs.b[0].as_slice(), &[1.0, 2.0]);
        assert_eq!(seqs.b[1].as_slice(), &[1.0, 3.0]);
        assert_eq!(seqs.a_prime[0].as_slice(), &[0.5, 2.0]);
        assert_eq!(seqs.a_prime[1].as_slice(), &[0.25, 1.0]);
    }

    #[test]
    fn sequences_round_trip_through_json() {
        let model = fixtures::two_level_tree();
        let comb = TreeCombinatorics::rooted_at_first_class(&model).unwrap();
        let seqs = build_sequences(&model, &comb).unwrap();
        let back = OperatorSequences::from_json(&seqs.to_json()).unwrap();
        assert_eq!(back, seqs);
    }

    #[test]
    fn zero_paths_have_zero_residual() {
        let model = fixtures::two_level_tree();
        let comb = TreeCombinatorics::rooted_at_first_class(&model).unwrap();
        let seqs = build_sequences(&model, &comb).unwrap();
        let zero = TimeSeries::zeros(0.01, 20).unwrap();
        let w = vec![zero.clone(); model.classes()];
        let z = vec![zero.clone(); model.stations()];
        let res = residual_integral_eq(&seqs, &w, &w, &z).unwrap();
        assert_eq!(res.sup_abs(), 0.0);
    }

    #[test]
    fn non_tree_sequences_are_rejected() {
        let tree = fixtures::n_model([1.0, 2.0, 3.0], [0.0, 0.0]);
        let comb = TreeCombinatorics::rooted_at_first_class(&tree).unwrap();
        let model = fixtures::complete_bipartite_2x2();
        assert!(build_sequences(&model, &comb).is_err());
    }
}
