//! Relative causal knowledge: what one node's measures look like from
//! another node after passing through the shared abstractions on a path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{pushforward, AffineMap, GaussianMixture};
use crate::scm::CausalKnowledge;
use crate::sheaf::CausalSheaf;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathQuery {
    pub source: String,
    pub target: String,
    pub edges: Vec<String>,
}

/// One hop `from ⊴ edge ⊵ to`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hop {
    pub from: String,
    pub edge: String,
    pub to: String,
}

impl PathQuery {
    pub fn new(source: &str, target: &str, edges: &[&str]) -> Self {
        Self {
            source: source.to_string(),
            target: target.to_string(),
            edges: edges.iter().map(|e| e.to_string()).collect(),
        }
    }

    /// Resolves the node sequence, checking consecutive incidence.
    pub fn hops(&self, sheaf: &CausalSheaf) -> Result<Vec<Hop>> {
        if self.edges.is_empty() {
            return Err(Error::invalid("path needs at least one edge"));
        }
        if !sheaf.network().has_node(&self.source) {
            return Err(Error::UnknownId {
                kind: "node",
                id: self.source.clone(),
            });
        }
        let mut at = self.source.clone();
        let mut hops = Vec::with_capacity(self.edges.len());
        for edge in &self.edges {
            let next = sheaf
                .network()
                .opposite(edge, &at)
                .map_err(|e| Error::invalid(format!("invalid path at edge `{edge}`: {e}")))?
                .to_string();
            hops.push(Hop {
                from: at,
                edge: edge.clone(),
                to: next.clone(),
            });
            at = next;
        }
        if at != self.target {
            return Err(Error::invalid(format!(
                "path from `{}` ends at `{at}`, not at target `{}`",
                self.source, self.target
            )));
        }
        Ok(hops)
    }
}

/// Pushes an edge measure into the node space through the extension map.
/// Re-projecting the result through the restriction gives `chi_edge` back
/// whenever the extension is a right inverse.
pub fn embed_measure(
    sheaf: &CausalSheaf,
    node: &str,
    edge: &str,
    chi_edge: &GaussianMixture,
) -> Result<GaussianMixture> {
    let ext = sheaf.extension(node, edge)?;
    if chi_edge.dim() != ext.in_dim() {
        return Err(Error::dims(
            format!("edge measure for `{edge}`"),
            ext.in_dim(),
            chi_edge.dim(),
        ));
    }
    pushforward(ext, chi_edge)
}

/// `β_k ∘ α_k ∘ … ∘ β_1 ∘ α_1` as a single affine map.
pub fn path_map(sheaf: &CausalSheaf, path: &PathQuery) -> Result<AffineMap> {
    let hops = path.hops(sheaf)?;
    let mut composite = AffineMap::identity(sheaf.node_stalk(&path.source)?.dim());
    for hop in &hops {
        composite = sheaf.restriction(&hop.from, &hop.edge)?.after(&composite)?;
        composite = sheaf.extension(&hop.to, &hop.edge)?.after(&composite)?;
    }
    Ok(composite)
}

/// The source measure as seen from the target along `path`.
pub fn relative_measure(
    sheaf: &CausalSheaf,
    path: &PathQuery,
    chi: &GaussianMixture,
) -> Result<GaussianMixture> {
    let map = path_map(sheaf, path)?;
    if chi.dim() != map.in_dim() {
        return Err(Error::dims(
            format!("measure at `{}`", path.source),
            map.in_dim(),
            chi.dim(),
        ));
    }
    pushforward(&map, chi)
}

/// Hop-by-hop evaluation of [`relative_measure`].
pub fn relative_measure_stepwise(
    sheaf: &CausalSheaf,
    path: &PathQuery,
    chi: &GaussianMixture,
) -> Result<GaussianMixture> {
    let mut current = chi.clone();
    for hop in path.hops(sheaf)? {
        current = pushforward(sheaf.restriction(&hop.from, &hop.edge)?, &current)?;
        current = embed_measure(sheaf, &hop.to, &hop.edge, &current)?;
    }
    Ok(current)
}

/// Images of every measure of `ck` along `path`, in order. Together with
/// convex combination these generate the relative causal knowledge.
pub fn rck_family(
    sheaf: &CausalSheaf,
    path: &PathQuery,
    ck: &CausalKnowledge,
) -> Result<Vec<GaussianMixture>> {
    let source = sheaf.node_stalk(&path.source)?;
    if ck.base.variables() != source.variables() {
        return Err(Error::invalid(format!(
            "causal knowledge does not belong to the model at `{}`",
            path.source
        )));
    }
    let map = path_map(sheaf, path)?;
    ck.measures.iter().map(|m| pushforward(&map, m)).collect()
}
