//! Reference models used throughout the tests, the CLI and the acceptance
//! suite.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{Activity, ClassParams, RunningCostSpec, TreeModel};

/// One class served at one station, `psi* = nu = 1`, `lambda = mu`.
pub fn single_edge(mu: f64, theta: f64) -> TreeModel {
    TreeModel::builder(1, 1)
        .edge(0, 0, mu, 1.0)
        .theta(&[theta])
        .build()
        .expect("single edge fixture")
}

/// The one-dimensional fixture used to compare the HJB solver with Monte
/// Carlo: `theta = 0`, `mu = 1`, `r = sqrt(2)`, `gamma = 1`, `ell = 0`.
pub fn one_dimensional() -> TreeModel {
    TreeModel::builder(1, 1)
        .edge(0, 0, 1.0, 1.0)
        .r(&[2f64.sqrt()])
        .gamma(1.0)
        .build()
        .expect("one-dimensional fixture")
}

/// `L(x) = x^+` for the one-dimensional fixture.
pub fn one_dimensional_cost() -> RunningCostSpec {
    RunningCostSpec::linear_queue(vec![1.0], 1)
}

/// The N-model: classes 1, 2 and stations 3, 4 with activities
/// (1,3), (2,3), (2,4). `mu = [mu_13, mu_23, mu_24]`.
pub fn n_model(mu: [f64; 3], theta: [f64; 2]) -> TreeModel {
    TreeModel::builder(2, 2)
        .edge(0, 0, mu[0], 0.5)
        .edge(1, 0, mu[1], 0.5)
        .edge(1, 1, mu[2], 0.5)
        .theta(&theta)
        .build()
        .expect("N-model fixture")
}

/// N-model with unit diffusion coefficients and a given discount rate.
pub fn n_model_with(mu: [f64; 3], theta: [f64; 2], r: [f64; 2], gamma: f64) -> TreeModel {
    TreeModel::builder(2, 2)
        .edge(0, 0, mu[0], 0.5)
        .edge(1, 0, mu[1], 0.5)
        .edge(1, 1, mu[2], 0.5)
        .theta(&theta)
        .r(&r)
        .gamma(gamma)
        .build()
        .expect("N-model fixture")
}

/// Two classes, three stations arranged as the path `3 - 1 - 4 - 2 - 5`
/// (diameter 4). Rates depend only on the station.
pub fn w_model(station_mu: [f64; 3]) -> TreeModel {
    TreeModel::builder(2, 3)
        .edge(0, 0, station_mu[0], 0.5)
        .edge(0, 1, station_mu[1], 0.5)
        .edge(1, 1, station_mu[1], 0.5)
        .edge(1, 2, station_mu[2], 0.5)
        .build()
        .expect("W-model fixture")
}

/// Root class 1 with two stations below it, each of which serves two further
/// classes.
pub fn two_level_tree() -> TreeModel {
    TreeModel::builder(5, 2)
        .edge(0, 0, 1.0, 0.5)
        .edge(0, 1, 1.5, 0.5)
        .edge(1, 0, 2.0, 0.5)
        .edge(2, 0, 0.5, 0.5)
        .edge(3, 1, 1.25, 0.5)
        .edge(4, 1, 3.0, 0.5)
        .build()
        .expect("two-level tree fixture")
}

/// The complete bipartite 2x2 network of the off-tree counterexample:
/// `mu_1A = mu_2A = 1`, `mu_1B = mu_2B = 2`. Not a valid tree model.
pub fn complete_bipartite_2x2() -> TreeModel {
    let activities = [(0, 0, 1.0), (1, 0, 1.0), (0, 1, 2.0), (1, 1, 2.0)]
        .into_iter()
        .map(|(class, station, mu)| Activity {
            class,
            station,
            mu,
            psi_star: 0.25,
        })
        .collect();
    let params = (0..2)
        .map(|_| ClassParams {
            theta: 0.0,
            ell: 0.0,
            r: 1.0,
            lambda: 0.75,
            x_star: 0.5,
        })
        .collect();
    TreeModel::new(2, 2, activities, params, vec![0.5, 0.5], 1.0).expect("2x2 network")
}

/// A uniformly shuffled random tree on `classes + stations` nodes with random
/// rates in `[0.5, 3]`.
///
/// Every class and station gets at least one activity: nodes are attached one
/// at a time to a random already-placed node of the opposite kind.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, classes: usize, stations: usize) -> TreeModel {
    assert!(classes >= 1 && stations >= 1);
    let mut order: Vec<(bool, usize)> = (0..classes)
        .map(|i| (true, i))
        .chain((0..stations).map(|j| (false, j)))
        .collect();
    order.shuffle(rng);
    // seed the tree with one class and one station
    let first_class = order.iter().position(|n| n.0).unwrap();
    let first_station = order.iter().position(|n| !n.0).unwrap();
    let c0 = order[first_class].1;
    let s0 = order[first_station].1;
    let mut placed_classes = vec![c0];
    let mut placed_stations = vec![s0];
    let mut edges = vec![(c0, s0)];
    for (idx, &(is_class, k)) in order.iter().enumerate() {
        if idx == first_class || idx == first_station {
            continue;
        }
        if is_class {
            let j = placed_stations[rng.random_range(0..placed_stations.len())];
            edges.push((k, j));
            placed_classes.push(k);
        } else {
            let i = placed_classes[rng.random_range(0..placed_classes.len())];
            edges.push((i, k));
            placed_stations.push(k);
        }
    }
    let mut builder = TreeModel::builder(classes, stations);
    for (i, j) in edges {
        let mu = rng.random_range(0.5..3.0);
        let psi = rng.random_range(0.2..1.0);
        builder = builder.edge(i, j, mu, psi);
    }
    builder.build().expect("random tree")
}

/// Random tree with a random node count in `2..=max_nodes`.
pub fn random_tree_up_to<R: Rng + ?Sized>(rng: &mut R, max_nodes: usize) -> TreeModel {
    let nodes = rng.random_range(2..=max_nodes.max(2));
    let classes = rng.random_range(1..nodes);
    random_tree(rng, classes, nodes - classes)
}
