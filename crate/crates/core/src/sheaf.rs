//! Network sheaf and cosheaf of causal knowledge.
//!
//! Nodes carry linear SCMs, edges carry the SCM of the abstraction the two
//! endpoints share. Every incidence `node ⊴ edge` has a restriction map
//! (node space to edge space, the `α_X` of an IC abstraction) and an
//! extension map (edge space back into the node space, a right inverse of
//! the restriction).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::abstraction::{
    check_ic, pseudo_inverse_extension, right_inverse_residual, validate_abstraction_maps,
    Abstraction, IcPair,
};
use crate::error::{Error, Result};
use crate::measure::{mixture_distance, pushforward, AffineMap, GaussianMixture};
use crate::report::Report;
use crate::scm::{observational_measure, validate_scm, LinearScm};

/// Tolerance for the extension right-inverse check.
pub const RIGHT_INVERSE_TOL: f64 = 1e-10;
/// Default tolerance for user-facing section and IC verdicts.
pub const DEFAULT_SECTION_TOL: f64 = 1e-6;

/// `(node id, edge id)`.
pub type Incidence = (String, String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub id: String,
    pub endpoints: [String; 2],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    nodes: Vec<String>,
    edges: Vec<Edge>,
}

impl Network {
    pub fn new(nodes: Vec<String>, edges: Vec<Edge>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for n in &nodes {
            if !seen.insert(n.as_str()) {
                return Err(Error::invalid(format!("duplicate node id `{n}`")));
            }
        }
        let mut edge_ids = BTreeSet::new();
        for e in &edges {
            if !edge_ids.insert(e.id.as_str()) {
                return Err(Error::invalid(format!("duplicate edge id `{}`", e.id)));
            }
            if seen.contains(e.id.as_str()) {
                return Err(Error::invalid(format!(
                    "edge id `{}` collides with a node id",
                    e.id
                )));
            }
            for end in &e.endpoints {
                if !seen.contains(end.as_str()) {
                    return Err(Error::UnknownId {
                        kind: "node",
                        id: end.clone(),
                    });
                }
            }
            if e.endpoints[0] == e.endpoints[1] {
                return Err(Error::invalid(format!("edge `{}` is a self-loop", e.id)));
            }
        }
        Ok(Self { nodes, edges })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: &str) -> Result<&Edge> {
        self.edges
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::UnknownId {
                kind: "edge",
                id: id.to_string(),
            })
    }

    pub fn has_node(&self, id: &str) -> bool {
        self.nodes.iter().any(|n| n == id)
    }

    /// All `node ⊴ edge` pairs, edge-major, endpoints in declared order.
    pub fn incidences(&self) -> Vec<Incidence> {
        self.edges
            .iter()
            .flat_map(|e| e.endpoints.iter().map(move |n| (n.clone(), e.id.clone())))
            .collect()
    }

    pub fn incident_edges(&self, node: &str) -> Vec<&Edge> {
        self.edges
            .iter()
            .filter(|e| e.endpoints.iter().any(|n| n == node))
            .collect()
    }

    /// The endpoint of `edge` that is not `node`.
    pub fn opposite(&self, edge: &str, node: &str) -> Result<&str> {
        let e = self.edge(edge)?;
        match (&e.endpoints[0], &e.endpoints[1]) {
            (a, b) if a == node => Ok(b),
            (a, b) if b == node => Ok(a),
            _ => Err(Error::invalid(format!(
                "node `{node}` is not incident to edge `{edge}`"
            ))),
        }
    }

    /// Connected components, each listed in declaration order.
    pub fn components(&self) -> Vec<Vec<String>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for start in &self.nodes {
            if seen.contains(start) {
                continue;
            }
            let mut members = BTreeSet::new();
            let mut queue = VecDeque::from([start.clone()]);
            seen.insert(start.clone());
            while let Some(n) = queue.pop_front() {
                for e in self.incident_edges(&n) {
                    let other = if e.endpoints[0] == n {
                        &e.endpoints[1]
                    } else {
                        &e.endpoints[0]
                    };
                    if seen.insert(other.clone()) {
                        queue.push_back(other.clone());
                    }
                }
                members.insert(n);
            }
            out.push(
                self.nodes
                    .iter()
                    .filter(|n| members.contains(*n))
                    .cloned()
                    .collect(),
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalSheaf {
    network: Network,
    node_stalks: BTreeMap<String, LinearScm>,
    edge_stalks: BTreeMap<String, LinearScm>,
    restrictions: BTreeMap<Incidence, AffineMap>,
    extensions: BTreeMap<Incidence, AffineMap>,
}

impl CausalSheaf {
    /// Checks presence and dimensions of every stalk and map; the causal
    /// requirements are left to [`validate_sheaf`].
    pub fn new(
        network: Network,
        node_stalks: BTreeMap<String, LinearScm>,
        edge_stalks: BTreeMap<String, LinearScm>,
        restrictions: BTreeMap<Incidence, AffineMap>,
        extensions: BTreeMap<Incidence, AffineMap>,
    ) -> Result<Self> {
        for n in network.nodes() {
            if !node_stalks.contains_key(n) {
                return Err(Error::invalid(format!("node `{n}` has no stalk")));
            }
        }
        for e in network.edges() {
            if !edge_stalks.contains_key(&e.id) {
                return Err(Error::invalid(format!("edge `{}` has no stalk", e.id)));
            }
        }
        let incidences: BTreeSet<Incidence> = network.incidences().into_iter().collect();
        for key in restrictions.keys().chain(extensions.keys()) {
            if !incidences.contains(key) {
                return Err(Error::invalid(format!(
                    "`{}` is not incident to edge `{}`",
                    key.0, key.1
                )));
            }
        }
        for (node, edge) in &incidences {
            let node_dim = node_stalks[node].dim();
            let edge_dim = edge_stalks[edge].dim();
            let r = restrictions
                .get(&(node.clone(), edge.clone()))
                .ok_or_else(|| {
                    Error::invalid(format!("missing restriction for {node} ⊴ {edge}"))
                })?;
            if r.out_dim() != edge_dim {
                return Err(Error::dims(
                    format!("restriction rows for {node} ⊴ {edge}"),
                    edge_dim,
                    r.out_dim(),
                ));
            }
            if r.in_dim() != node_dim {
                return Err(Error::dims(
                    format!("restriction columns for {node} ⊴ {edge}"),
                    node_dim,
                    r.in_dim(),
                ));
            }
            let x = extensions
                .get(&(node.clone(), edge.clone()))
                .ok_or_else(|| Error::invalid(format!("missing extension for {node} ⊴ {edge}")))?;
            if x.out_dim() != node_dim {
                return Err(Error::dims(
                    format!("extension rows for {node} ⊴ {edge}"),
                    node_dim,
                    x.out_dim(),
                ));
            }
            if x.in_dim() != edge_dim {
                return Err(Error::dims(
                    format!("extension columns for {node} ⊴ {edge}"),
                    edge_dim,
                    x.in_dim(),
                ));
            }
        }
        Ok(Self {
            network,
            node_stalks,
            edge_stalks,
            restrictions,
            extensions,
        })
    }

    /// Like [`CausalSheaf::new`], filling in every missing extension with the
    /// minimum-norm right inverse of its restriction.
    pub fn with_default_extensions(
        network: Network,
        node_stalks: BTreeMap<String, LinearScm>,
        edge_stalks: BTreeMap<String, LinearScm>,
        restrictions: BTreeMap<Incidence, AffineMap>,
        mut extensions: BTreeMap<Incidence, AffineMap>,
    ) -> Result<Self> {
        for (key, r) in &restrictions {
            if !extensions.contains_key(key) {
                extensions.insert(key.clone(), pseudo_inverse_extension(r)?);
            }
        }
        Self::new(network, node_stalks, edge_stalks, restrictions, extensions)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn node_stalks(&self) -> &BTreeMap<String, LinearScm> {
        &self.node_stalks
    }

    pub fn edge_stalks(&self) -> &BTreeMap<String, LinearScm> {
        &self.edge_stalks
    }

    pub fn restrictions(&self) -> &BTreeMap<Incidence, AffineMap> {
        &self.restrictions
    }

    pub fn extensions(&self) -> &BTreeMap<Incidence, AffineMap> {
        &self.extensions
    }

    pub fn node_stalk(&self, node: &str) -> Result<&LinearScm> {
        self.node_stalks.get(node).ok_or_else(|| Error::UnknownId {
            kind: "node",
            id: node.to_string(),
        })
    }

    pub fn edge_stalk(&self, edge: &str) -> Result<&LinearScm> {
        self.edge_stalks.get(edge).ok_or_else(|| Error::UnknownId {
            kind: "edge",
            id: edge.to_string(),
        })
    }

    pub fn restriction(&self, node: &str, edge: &str) -> Result<&AffineMap> {
        self.restrictions
            .get(&(node.to_string(), edge.to_string()))
            .ok_or_else(|| Error::invalid(format!("no incidence {node} ⊴ {edge}")))
    }

    pub fn extension(&self, node: &str, edge: &str) -> Result<&AffineMap> {
        self.extensions
            .get(&(node.to_string(), edge.to_string()))
            .ok_or_else(|| Error::invalid(format!("no incidence {node} ⊴ {edge}")))
    }

    /// The abstraction from the node SCM to the edge SCM whose functional
    /// map is the restriction; `R` and `a_X` follow its nonzero pattern.
    pub fn abstraction(&self, node: &str, edge: &str) -> Result<Abstraction> {
        Ok(Abstraction::from_map(
            self.node_stalk(node)?.clone(),
            self.edge_stalk(edge)?.clone(),
            self.restriction(node, edge)?.clone(),
        ))
    }

    /// Copy of the sheaf with some node SCMs replaced (same variables).
    pub fn with_node_stalks(&self, updates: &BTreeMap<String, LinearScm>) -> Result<Self> {
        let mut out = self.clone();
        for (node, scm) in updates {
            let slot = out
                .node_stalks
                .get_mut(node)
                .ok_or_else(|| Error::UnknownId {
                    kind: "node",
                    id: node.clone(),
                })?;
            if slot.dim() != scm.dim() {
                return Err(Error::dims(
                    format!("replacement stalk for `{node}`"),
                    slot.dim(),
                    scm.dim(),
                ));
            }
            *slot = scm.clone();
        }
        Ok(out)
    }
}

/// One measure per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cochain0 {
    pub values: BTreeMap<String, GaussianMixture>,
}

impl Cochain0 {
    pub fn new(values: BTreeMap<String, GaussianMixture>) -> Self {
        Self { values }
    }

    /// Observational measures of the node stalks.
    pub fn observational(sheaf: &CausalSheaf) -> Result<Self> {
        Self::from_models(sheaf.node_stalks())
    }

    pub fn from_models(models: &BTreeMap<String, LinearScm>) -> Result<Self> {
        let values = models
            .iter()
            .map(|(k, scm)| Ok((k.clone(), observational_measure(scm)?)))
            .collect::<Result<_>>()?;
        Ok(Self { values })
    }

    fn value(&self, sheaf: &CausalSheaf, node: &str) -> Result<&GaussianMixture> {
        let v = self
            .values
            .get(node)
            .ok_or_else(|| Error::invalid(format!("cochain has no value at node `{node}`")))?;
        let dim = sheaf.node_stalk(node)?.dim();
        if v.dim() != dim {
            return Err(Error::dims(
                format!("cochain value at `{node}`"),
                dim,
                v.dim(),
            ));
        }
        Ok(v)
    }
}

/// Metric used to compare the two projected sides of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisagreementMetric {
    /// Exact mixture 2-Wasserstein.
    #[default]
    Wasserstein,
    /// `sqrt(‖Δmean‖² + ‖Δcov‖_F²)` of the overall moments.
    Moments,
}

impl DisagreementMetric {
    pub fn distance(self, a: &GaussianMixture, b: &GaussianMixture) -> Result<f64> {
        match self {
            DisagreementMetric::Wasserstein => mixture_distance(a, b),
            DisagreementMetric::Moments => {
                if a.dim() != b.dim() {
                    return Err(Error::dims("moment distance", a.dim(), b.dim()));
                }
                let dm = (a.mean() - b.mean()).norm_squared();
                let dc = (a.covariance() - b.covariance()).norm_squared();
                Ok((dm + dc).sqrt())
            }
        }
    }
}

/// Pushes each node value through each of its restrictions.
pub fn project_cochain(
    sheaf: &CausalSheaf,
    c0: &Cochain0,
) -> Result<BTreeMap<Incidence, GaussianMixture>> {
    let mut out = BTreeMap::new();
    for (node, edge) in sheaf.network.incidences() {
        let value = c0.value(sheaf, &node)?;
        let projected = pushforward(sheaf.restriction(&node, &edge)?, value)?;
        out.insert((node, edge), projected);
    }
    Ok(out)
}

fn side_values(sheaf: &CausalSheaf, c0: &Cochain0, edge: &Edge) -> Result<[GaussianMixture; 2]> {
    let side = |node: &str| -> Result<GaussianMixture> {
        pushforward(sheaf.restriction(node, &edge.id)?, c0.value(sheaf, node)?)
    };
    Ok([side(&edge.endpoints[0])?, side(&edge.endpoints[1])?])
}

pub fn edge_disagreement(sheaf: &CausalSheaf, c0: &Cochain0, edge: &str) -> Result<f64> {
    edge_disagreement_with(DisagreementMetric::default(), sheaf, c0, edge)
}

pub fn edge_disagreement_with(
    metric: DisagreementMetric,
    sheaf: &CausalSheaf,
    c0: &Cochain0,
    edge: &str,
) -> Result<f64> {
    let e = sheaf.network.edge(edge)?;
    let [a, b] = side_values(sheaf, c0, e)?;
    metric.distance(&a, &b)
}

/// Per-edge disagreements in edge declaration order.
pub fn edge_disagreements(sheaf: &CausalSheaf, c0: &Cochain0) -> Result<Vec<(String, f64)>> {
    sheaf
        .network
        .edges()
        .iter()
        .map(|e| Ok((e.id.clone(), edge_disagreement(sheaf, c0, &e.id)?)))
        .collect()
}

/// Sum over edges of the squared disagreement.
pub fn energy(sheaf: &CausalSheaf, c0: &Cochain0) -> Result<f64> {
    energy_with(DisagreementMetric::default(), sheaf, c0)
}

pub fn energy_with(metric: DisagreementMetric, sheaf: &CausalSheaf, c0: &Cochain0) -> Result<f64> {
    let mut total = 0.0;
    for e in sheaf.network.edges() {
        let d = edge_disagreement_with(metric, sheaf, c0, &e.id)?;
        total += d * d;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeResidual {
    pub edge: String,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentVerdict {
    pub nodes: Vec<String>,
    pub is_section: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionVerdict {
    pub is_section: bool,
    pub tol: f64,
    pub residuals: Vec<EdgeResidual>,
    pub components: Vec<ComponentVerdict>,
}

/// True iff every edge's two projected sides agree within `tol`. Each
/// connected component gets its own verdict; a network without edges is
/// vacuously a section.
pub fn is_global_section(sheaf: &CausalSheaf, c0: &Cochain0, tol: f64) -> Result<SectionVerdict> {
    let residuals: Vec<EdgeResidual> = edge_disagreements(sheaf, c0)?
        .into_iter()
        .map(|(edge, residual)| EdgeResidual { edge, residual })
        .collect();
    let by_edge: BTreeMap<&str, f64> = residuals
        .iter()
        .map(|r| (r.edge.as_str(), r.residual))
        .collect();
    let components: Vec<ComponentVerdict> = sheaf
        .network
        .components()
        .into_iter()
        .map(|nodes| {
            let is_section = sheaf
                .network
                .edges()
                .iter()
                .filter(|e| nodes.contains(&e.endpoints[0]))
                .all(|e| by_edge[e.id.as_str()] <= tol);
            ComponentVerdict { nodes, is_section }
        })
        .collect();
    Ok(SectionVerdict {
        is_section: components.iter().all(|c| c.is_section),
        tol,
        residuals,
        components,
    })
}

/// IC families keyed by incidence.
pub type IcFamilies = BTreeMap<Incidence, Vec<IcPair>>;

/// Validates stalks, every incidence abstraction, IC over the declared
/// families (observational pair always included) at `tol`, and every
/// restriction/extension right-inverse pair at [`RIGHT_INVERSE_TOL`].
pub fn validate_sheaf(sheaf: &CausalSheaf, ic_families: &IcFamilies, tol: f64) -> Report {
    let mut report = Report::new();
    let mut models_ok = true;
    for (node, scm) in &sheaf.node_stalks {
        let r = validate_scm(scm);
        models_ok &= r.is_clean();
        report.absorb(&format!("nodes.{node}.scm"), r);
    }
    for (edge, scm) in &sheaf.edge_stalks {
        let r = validate_scm(scm);
        models_ok &= r.is_clean();
        report.absorb(&format!("edges.{edge}.scm"), r);
    }
    for key in ic_families.keys() {
        if !sheaf.restrictions.contains_key(key) {
            report.violation(
                format!("edges.{}.ic_family.{}", key.1, key.0),
                "ic-family",
                "family declared for a non-existent incidence",
            );
        }
    }

    for (node, edge) in sheaf.network.incidences() {
        let loc = format!("edges.{edge}.restrictions.{node}");
        let ab = match sheaf.abstraction(&node, &edge) {
            Ok(ab) => ab,
            Err(e) => {
                report.violation(loc, "abstraction", e.to_string());
                continue;
            }
        };
        let maps = validate_abstraction_maps(&ab);
        let maps_ok = maps.is_clean();
        report.absorb(&loc, maps);

        if models_ok && maps_ok {
            let family = ic_families
                .get(&(node.clone(), edge.clone()))
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            match check_ic(&ab, family, tol) {
                Ok(ic) => {
                    for r in ic.residuals {
                        report.residual(
                            format!("edges.{edge}.ic.{node}.{}", r.label),
                            "ic",
                            r.residual,
                            tol,
                        );
                    }
                }
                Err(e) => report.violation(
                    format!("edges.{edge}.ic_family.{node}"),
                    "ic-family",
                    e.to_string(),
                ),
            }
        }

        let restriction = &sheaf.restrictions[&(node.clone(), edge.clone())];
        let extension = &sheaf.extensions[&(node.clone(), edge.clone())];
        match right_inverse_residual(restriction, extension) {
            Ok(r) => {
                report.residual(
                    format!("edges.{edge}.extensions.{node}"),
                    "right-inverse",
                    r,
                    RIGHT_INVERSE_TOL,
                );
            }
            Err(e) => report.violation(
                format!("edges.{edge}.extensions.{node}"),
                "right-inverse",
                e.to_string(),
            ),
        }
    }
    report
}
