//! JSON configuration: a causal sheaf plus simulation scenarios.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abstraction::IcPair;
use crate::error::{Error, Result};
use crate::measure::{matrix_from_rows, matrix_to_rows, AffineMap};
use crate::output::to_canonical_json;
use crate::report::Report;
use crate::scm::LinearScm;
use crate::sheaf::{validate_sheaf, CausalSheaf, Edge, IcFamilies, Network};
use crate::simulate::Scenario;

pub const CONFIG_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: String,
    pub scm: LinearScm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub id: String,
    pub endpoints: [String; 2],
    pub scm: LinearScm,
    pub restrictions: BTreeMap<String, Vec<Vec<f64>>>,
    pub extensions: BTreeMap<String, Vec<Vec<f64>>>,
    /// Intervention pairs checked for consistency at each endpoint, in
    /// addition to the observational pair.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ic_family: BTreeMap<String, Vec<IcPair>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub version: String,
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<EdgeDoc>,
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Return the model even when validation finds violations.
    pub allow_invalid: bool,
    /// Tolerance for the interventional-consistency checks.
    pub tol: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            allow_invalid: false,
            tol: crate::sheaf::DEFAULT_SECTION_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub sheaf: CausalSheaf,
    pub ic_families: IcFamilies,
    pub scenarios: Vec<Scenario>,
    /// Validation outcome at load time.
    pub report: Report,
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

pub fn load_config(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Model> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_config(&text, opts)
}

pub fn parse_config(text: &str, opts: LoadOptions) -> Result<Model> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ConfigDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_err(
            if path == "." {
                "<root>".to_string()
            } else {
                path
            },
            e.inner().to_string(),
        )
    })?;
    build_model(&doc, opts)
}

fn map_from_rows(rows: &[Vec<f64>], cols: usize, path: &str) -> Result<AffineMap> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(config_err(
            path,
            format!("every row must have {cols} entries"),
        ));
    }
    if rows.is_empty() {
        return Ok(AffineMap::linear(nalgebra::DMatrix::zeros(0, cols)));
    }
    Ok(AffineMap::linear(
        matrix_from_rows(rows).map_err(|e| config_err(path, e.to_string()))?,
    ))
}

pub fn build_model(doc: &ConfigDoc, opts: LoadOptions) -> Result<Model> {
    if doc.version != CONFIG_VERSION {
        return Err(config_err(
            "version",
            format!(
                "unsupported version `{}`, expected `{CONFIG_VERSION}`",
                doc.version
            ),
        ));
    }
    let mut node_stalks = BTreeMap::new();
    for (i, n) in doc.nodes.iter().enumerate() {
        if node_stalks.insert(n.id.clone(), n.scm.clone()).is_some() {
            return Err(config_err(
                format!("nodes[{i}].id"),
                format!("duplicate node `{}`", n.id),
            ));
        }
    }
    let mut edge_stalks = BTreeMap::new();
    let mut restrictions = BTreeMap::new();
    let mut extensions = BTreeMap::new();
    let mut ic_families = IcFamilies::new();
    for (i, e) in doc.edges.iter().enumerate() {
        let at = |field: &str| format!("edges[{i}].{field}");
        if edge_stalks.insert(e.id.clone(), e.scm.clone()).is_some() {
            return Err(config_err(at("id"), format!("duplicate edge `{}`", e.id)));
        }
        for end in &e.endpoints {
            if !node_stalks.contains_key(end) {
                return Err(config_err(at("endpoints"), format!("unknown node `{end}`")));
            }
        }
        if e.endpoints[0] == e.endpoints[1] {
            return Err(config_err(
                at("endpoints"),
                "an edge needs two distinct endpoints",
            ));
        }
        let ends: BTreeSet<&String> = e.endpoints.iter().collect();
        for (field, maps) in [
            ("restrictions", &e.restrictions),
            ("extensions", &e.extensions),
        ] {
            for node in maps.keys() {
                if !ends.contains(node) {
                    return Err(config_err(
                        format!("edges[{i}].{field}.{node}"),
                        format!("`{node}` is not an endpoint of edge `{}`", e.id),
                    ));
                }
            }
        }
        for node in e.ic_family.keys() {
            if !ends.contains(node) {
                return Err(config_err(
                    format!("edges[{i}].ic_family.{node}"),
                    format!("`{node}` is not an endpoint of edge `{}`", e.id),
                ));
            }
        }
        let edge_dim = e.scm.dim();
        for node in &e.endpoints {
            let node_dim = node_stalks[node].dim();
            let path = format!("edges[{i}].restrictions.{node}");
            let rows = e.restrictions.get(node).ok_or_else(|| {
                config_err(
                    at("restrictions"),
                    format!("missing restriction matrix for {node} ⊴ {}", e.id),
                )
            })?;
            if rows.len() != edge_dim {
                return Err(config_err(
                    &path,
                    format!(
                        "restriction for edge `{}` has {} rows, expected {edge_dim} (edge dimension)",
                        e.id,
                        rows.len()
                    ),
                ));
            }
            let r = map_from_rows(rows, node_dim, &path)?;

            let path = format!("edges[{i}].extensions.{node}");
            let rows = e.extensions.get(node).ok_or_else(|| {
                config_err(
                    at("extensions"),
                    format!("missing extension matrix for {node} ⊴ {}", e.id),
                )
            })?;
            if rows.len() != node_dim {
                return Err(config_err(
                    &path,
                    format!(
                        "extension for edge `{}` has {} rows, expected {node_dim} (dimension of `{node}`)",
                        e.id,
                        rows.len()
                    ),
                ));
            }
            let x = map_from_rows(rows, edge_dim, &path)?;
            let key = (node.clone(), e.id.clone());
            restrictions.insert(key.clone(), r);
            extensions.insert(key.clone(), x);
            if let Some(family) = e.ic_family.get(node) {
                ic_families.insert(key, family.clone());
            }
        }
    }
    let network = Network::new(
        doc.nodes.iter().map(|n| n.id.clone()).collect(),
        doc.edges
            .iter()
            .map(|e| Edge {
                id: e.id.clone(),
                endpoints: e.endpoints.clone(),
            })
            .collect(),
    )
    .map_err(|e| config_err("edges", e.to_string()))?;
    let sheaf = CausalSheaf::new(network, node_stalks, edge_stalks, restrictions, extensions)
        .map_err(|e| config_err("edges", e.to_string()))?;

    let mut ids = BTreeSet::new();
    for (i, s) in doc.scenarios.iter().enumerate() {
        if !ids.insert(&s.id) {
            return Err(config_err(
                format!("scenarios[{i}].id"),
                format!("duplicate scenario `{}`", s.id),
            ));
        }
        s.check(&sheaf)
            .map_err(|e| config_err(format!("scenarios[{i}]"), e.to_string()))?;
    }

    let report = validate_sheaf(&sheaf, &ic_families, opts.tol);
    if !report.is_clean() && !opts.allow_invalid {
        return Err(Error::Validation(report));
    }
    Ok(Model {
        sheaf,
        ic_families,
        scenarios: doc.scenarios.clone(),
        report,
    })
}

impl Model {
    pub fn to_doc(&self) -> ConfigDoc {
        let sheaf = &self.sheaf;
        let rows = |m: &AffineMap| matrix_to_rows(m.matrix());
        ConfigDoc {
            version: CONFIG_VERSION.to_string(),
            nodes: sheaf
                .network()
                .nodes()
                .iter()
                .map(|n| NodeDoc {
                    id: n.clone(),
                    scm: sheaf.node_stalks()[n].clone(),
                })
                .collect(),
            edges: sheaf
                .network()
                .edges()
                .iter()
                .map(|e| {
                    let key = |n: &String| (n.clone(), e.id.clone());
                    EdgeDoc {
                        id: e.id.clone(),
                        endpoints: e.endpoints.clone(),
                        scm: sheaf.edge_stalks()[&e.id].clone(),
                        restrictions: e
                            .endpoints
                            .iter()
                            .map(|n| (n.clone(), rows(&sheaf.restrictions()[&key(n)])))
                            .collect(),
                        extensions: e
                            .endpoints
                            .iter()
                            .map(|n| (n.clone(), rows(&sheaf.extensions()[&key(n)])))
                            .collect(),
                        ic_family: e
                            .endpoints
                            .iter()
                            .filter_map(|n| {
                                self.ic_families
                                    .get(&key(n))
                                    .map(|f| (n.clone(), f.clone()))
                            })
                            .collect(),
                    }
                })
                .collect(),
            scenarios: self.scenarios.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(&self.to_doc())
    }

    pub fn scenario(&self, id: &str) -> Result<&Scenario> {
        self.scenarios
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::UnknownId {
                kind: "scenario",
                id: id.to_string(),
            })
    }
}
