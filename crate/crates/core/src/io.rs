//! Model files and path exports.
//!
//! A model file is a JSON object. Node labels are global and one-based:
//! classes are `1..=I`, stations are `I+1..=I+J`.
//!
//! ```json
//! {
//!   "classes": 2,
//!   "stations": 2,
//!   "edges": [
//!     {"class": 1, "station": 3, "mu": 1.0},
//!     {"class": 2, "station": 3, "mu": 2.0},
//!     {"class": 2, "station": 4, "mu": 3.0}
//!   ],
//!   "theta": [0.5, 0.5],
//!   "ell": [0.0, 0.0],
//!   "r": [1.0, 1.0],
//!   "lambda": [1.5, 2.5],
//!   "x_star": [0.5, 1.0],
//!   "nu": [1.0, 0.5],
//!   "psi_star": {"1-3": 0.5, "2-3": 0.5, "2-4": 0.5},
//!   "gamma": 1.0,
//!   "cost": {"queue_weights": [1.0, 1.0], "idle_weights": [0.0, 0.0]}
//! }
//! ```
//!
//! `theta` and `ell` default to zeros and `cost` is optional.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calculus::TimeSeries;
use crate::error::{invalid, Error, Result};
use crate::model::{Activity, ClassParams, RunningCostSpec, TreeModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EdgeEntry {
    class: usize,
    station: usize,
    mu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    classes: usize,
    stations: usize,
    edges: Vec<EdgeEntry>,
    #[serde(default)]
    theta: Option<Vec<f64>>,
    #[serde(default)]
    ell: Option<Vec<f64>>,
    r: Vec<f64>,
    lambda: Vec<f64>,
    x_star: Vec<f64>,
    nu: Vec<f64>,
    psi_star: BTreeMap<String, f64>,
    gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cost: Option<RunningCostSpec>,
}

/// A model together with an optional running cost, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: TreeModel,
    pub cost: Option<RunningCostSpec>,
}

fn edge_key(class_label: usize, station_label: usize) -> String {
    format!("{class_label}-{station_label}")
}

fn per_class(name: &str, values: Option<Vec<f64>>, classes: usize) -> Result<Vec<f64>> {
    let values = values.unwrap_or_else(|| vec![0.0; classes]);
    if values.len() != classes {
        return Err(invalid(format!(
            "{name} has {} entries, expected {classes}",
            values.len()
        )));
    }
    Ok(values)
}

impl ModelFile {
    pub fn new(model: TreeModel, cost: Option<RunningCostSpec>) -> Self {
        Self { model, cost }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        Self::from_doc(doc)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    fn from_doc(doc: ModelDoc) -> Result<Self> {
        let (classes, stations) = (doc.classes, doc.stations);
        if classes == 0 || stations == 0 {
            return Err(invalid("a model needs at least one class and one station"));
        }
        let theta = per_class("theta", doc.theta, classes)?;
        let ell = per_class("ell", doc.ell, classes)?;
        let r = per_class("r", Some(doc.r), classes)?;
        let lambda = per_class("lambda", Some(doc.lambda), classes)?;
        let x_star = per_class("x_star", Some(doc.x_star), classes)?;
        let mut psi_star = doc.psi_star;
        let mut activities = Vec::with_capacity(doc.edges.len());
        for e in &doc.edges {
            if e.class == 0 || e.class > classes {
                return Err(Error::Structure(format!(
                    "edge class label {} is not in 1..={classes}",
                    e.class
                )));
            }
            if e.station <= classes || e.station > classes + stations {
                return Err(Error::Structure(format!(
                    "edge station label {} is not in {}..={}",
                    e.station,
                    classes + 1,
                    classes + stations
                )));
            }
            let psi = psi_star
                .remove(&edge_key(e.class, e.station))
                .ok_or_else(|| {
                    invalid(format!(
                        "psi_star has no entry for edge {}-{}",
                        e.class, e.station
                    ))
                })?;
            activities.push(Activity {
                class: e.class - 1,
                station: e.station - classes - 1,
                mu: e.mu,
                psi_star: psi,
            });
        }
        if let Some(key) = psi_star.keys().next() {
            return Err(invalid(format!(
                "psi_star entry {key} does not name an edge"
            )));
        }
        let params = (0..classes)
            .map(|i| ClassParams {
                theta: theta[i],
                ell: ell[i],
                r: r[i],
                lambda: lambda[i],
                x_star: x_star[i],
            })
            .collect();
        let model = TreeModel::new(classes, stations, activities, params, doc.nu, doc.gamma)?;
        if let Some(cost) = &doc.cost {
            cost.validate(classes, stations)?;
        }
        Ok(Self {
            model,
            cost: doc.cost,
        })
    }

    fn to_doc(&self) -> ModelDoc {
        let m = &self.model;
        let classes = m.classes();
        let params = m.class_params();
        ModelDoc {
            classes,
            stations: m.stations(),
            edges: m
                .activities()
                .iter()
                .map(|a| EdgeEntry {
                    class: a.class + 1,
                    station: classes + a.station + 1,
                    mu: a.mu,
                })
                .collect(),
            theta: Some(params.iter().map(|p| p.theta).collect()),
            ell: Some(params.iter().map(|p| p.ell).collect()),
            r: params.iter().map(|p| p.r).collect(),
            lambda: params.iter().map(|p| p.lambda).collect(),
            x_star: params.iter().map(|p| p.x_star).collect(),
            nu: (0..m.stations()).map(|j| m.nu(j)).collect(),
            psi_star: m
                .activities()
                .iter()
                .map(|a| (edge_key(a.class + 1, classes + a.station + 1), a.psi_star))
                .collect(),
            gamma: m.gamma(),
            cost: self.cost.clone(),
        }
    }

    /// Compact JSON with a fixed key order.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self.to_doc()).expect("model serializes");
        // serde_json maps are sorted, so this is canonical
        value.to_string()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("model serializes")
    }

    /// Hex SHA-256 of the canonical JSON form of the model and its cost.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_canonical_json().as_bytes())
    }

    pub fn require_cost(&self) -> Result<&RunningCostSpec> {
        self.cost
            .as_ref()
            .ok_or_else(|| invalid("the model file has no cost section"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a model on its own, as stored in solver output headers.
pub fn model_hash(model: &TreeModel, cost: Option<&RunningCostSpec>) -> String {
    ModelFile::new(model.clone(), cost.cloned()).hash()
}

/// Writes sampled paths as CSV with a leading time column.
///
/// `columns` pairs a header name with a series; all series must share one
/// grid.
pub fn write_paths_csv<W: Write>(out: &mut W, columns: &[(String, &TimeSeries)]) -> Result<()> {
    let Some((_, first)) = columns.first() else {
        return Err(invalid("no columns to write"));
    };
    crate::calculus::check_grids(columns.iter().map(|(_, s)| *s))?;
    let mut header = String::from("t");
    for (name, _) in columns {
        header.push(',');
        header.push_str(name);
    }
    writeln!(out, "{header}")?;
    let mut line = String::new();
    for k in 0..first.len() {
        line.clear();
        line.push_str(&format!("{}", first.time(k)));
        for (_, s) in columns {
            line.push_str(&format!(",{}", s.values()[k]));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Standard column names for state, queue and idleness paths.
pub fn state_columns<'a>(
    classes: usize,
    x: &'a [TimeSeries],
    y: &'a [TimeSeries],
    z: &'a [TimeSeries],
) -> Vec<(String, &'a TimeSeries)> {
    let mut cols: Vec<(String, &TimeSeries)> = Vec::new();
    cols.extend(
        x.iter()
            .enumerate()
            .map(|(i, s)| (format!("x_{}", i + 1), s)),
    );
    cols.extend(
        y.iter()
            .enumerate()
            .map(|(i, s)| (format!("y_{}", i + 1), s)),
    );
    cols.extend(
        z.iter()
            .enumerate()
            .map(|(j, s)| (format!("z_{}", classes + j + 1), s)),
    );
    cols
}
