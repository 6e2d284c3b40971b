//! Derivative-free search for global sections over free soft coefficients.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scm::{apply_intervention, CoefficientEntry, Intervention, LinearScm};
use crate::sheaf::{edge_disagreements, energy, CausalSheaf, Cochain0};

/// Search stops once the energy is at or below this.
pub const TARGET_ENERGY: f64 = 1e-10;
/// Interval used for random restarts and for greedy line searches.
pub const COEFFICIENT_RANGE: (f64, f64) = (-2.0, 2.0);
/// Golden-section stops when its bracket is narrower than this.
const BRACKET_TOL: f64 = 1e-11;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeCoefficient {
    pub child: String,
    pub parent: String,
}

impl FreeCoefficient {
    pub fn new(child: &str, parent: &str) -> Self {
        Self {
            child: child.to_string(),
            parent: parent.to_string(),
        }
    }
}

/// Free soft coefficients per node.
pub type Parametrization = BTreeMap<String, Vec<FreeCoefficient>>;

#[derive(Debug, Clone)]
pub(crate) struct Coordinate {
    pub node: String,
    pub coeff: FreeCoefficient,
}

/// Flattens and checks a parametrization against the node models.
pub(crate) fn coordinates(
    models: &BTreeMap<String, LinearScm>,
    param: &Parametrization,
) -> Result<Vec<Coordinate>> {
    let mut out = Vec::new();
    for (node, coeffs) in param {
        let scm = models.get(node).ok_or_else(|| Error::UnknownId {
            kind: "node",
            id: node.clone(),
        })?;
        for c in coeffs {
            if !scm.has_edge(&c.child, &c.parent) {
                scm.index_of(&c.child)?;
                scm.index_of(&c.parent)?;
                return Err(Error::OutsideSupport {
                    child: c.child.clone(),
                    parent: c.parent.clone(),
                });
            }
            out.push(Coordinate {
                node: node.clone(),
                coeff: c.clone(),
            });
        }
    }
    Ok(out)
}

/// `start` with the coordinates set to `x`.
pub(crate) fn models_at(
    start: &BTreeMap<String, LinearScm>,
    coords: &[Coordinate],
    x: &[f64],
) -> Result<BTreeMap<String, LinearScm>> {
    let mut per_node: BTreeMap<&str, Vec<CoefficientEntry>> = BTreeMap::new();
    for (c, &v) in coords.iter().zip(x) {
        per_node
            .entry(c.node.as_str())
            .or_default()
            .push(CoefficientEntry::new(&c.coeff.child, &c.coeff.parent, v));
    }
    let mut models = start.clone();
    for (node, coefficients) in per_node {
        let scm = &models[node];
        let updated = apply_intervention(scm, &Intervention::Soft { coefficients })?;
        models.insert(node.to_string(), updated);
    }
    Ok(models)
}

fn current_values(start: &BTreeMap<String, LinearScm>, coords: &[Coordinate]) -> Result<Vec<f64>> {
    coords
        .iter()
        .map(|c| start[&c.node].coefficient(&c.coeff.child, &c.coeff.parent))
        .collect()
}

/// Golden-section minimization of `f` on `[lo, hi]` using at most
/// `max_evals` evaluations. Returns the best point seen, its value and the
/// number of evaluations spent.
pub(crate) fn golden_section<F>(
    mut f: F,
    lo: f64,
    hi: f64,
    max_evals: usize,
) -> Result<(f64, f64, usize)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (lo, hi);
    let mut used = 0;
    let mut best = (f64::NAN, f64::INFINITY);
    if max_evals == 0 {
        return Ok((best.0, best.1, 0));
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    used += 1;
    if fc < best.1 {
        best = (c, fc);
    }
    if used >= max_evals {
        return Ok((best.0, best.1, used));
    }
    let mut fd = f(d)?;
    used += 1;
    if fd < best.1 {
        best = (d, fd);
    }
    while used < max_evals && (b - a) > BRACKET_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
            if fc < best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
            if fd < best.1 {
                best = (d, fd);
            }
        }
        used += 1;
    }
    Ok((best.0, best.1, used))
}

/// One trajectory row: the disagreement seen at `node` across `edge`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub eval: usize,
    pub node: String,
    pub edge: String,
    pub disagreement: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub cochain: Cochain0,
    pub energy: f64,
    pub initial_energy: f64,
    pub coefficients: BTreeMap<String, Vec<CoefficientEntry>>,
    pub evaluations: usize,
    pub restarts: usize,
    pub trajectory: Vec<SearchRow>,
}

struct Objective<'a> {
    sheaf: &'a CausalSheaf,
    start: &'a BTreeMap<String, LinearScm>,
    coords: &'a [Coordinate],
    evals: usize,
}

impl Objective<'_> {
    fn eval(&mut self, x: &[f64]) -> Result<f64> {
        self.evals += 1;
        let c0 = Cochain0::from_models(&models_at(self.start, self.coords, x)?)?;
        energy(self.sheaf, &c0)
    }
}

pub(crate) fn incidence_rows(
    sheaf: &CausalSheaf,
    c0: &Cochain0,
    total: f64,
) -> Result<Vec<(String, String, f64, f64)>> {
    let per_edge: BTreeMap<String, f64> = edge_disagreements(sheaf, c0)?.into_iter().collect();
    Ok(sheaf
        .network()
        .incidences()
        .into_iter()
        .map(|(node, edge)| {
            let d = per_edge[&edge];
            (node, edge, d, total)
        })
        .collect())
}

/// Coordinate-wise golden-section descent over the free coefficients with
/// seeded random restarts, starting from the node models `start`. The first
/// run starts from the current coefficients, so the returned energy never
/// exceeds the starting energy. Stops after `budget` energy evaluations or
/// at [`TARGET_ENERGY`].
pub fn search_section(
    sheaf: &CausalSheaf,
    start: &BTreeMap<String, LinearScm>,
    param: &Parametrization,
    seed: u64,
    budget: usize,
) -> Result<SearchResult> {
    for node in sheaf.network().nodes() {
        let scm = start
            .get(node)
            .ok_or_else(|| Error::invalid(format!("no starting model for node `{node}`")))?;
        if scm.dim() != sheaf.node_stalk(node)?.dim() {
            return Err(Error::dims(
                format!("starting model for `{node}`"),
                sheaf.node_stalk(node)?.dim(),
                scm.dim(),
            ));
        }
    }
    let coords = coordinates(start, param)?;
    let x0 = current_values(start, &coords)?;
    let mut obj = Objective {
        sheaf,
        start,
        coords: &coords,
        evals: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e0 = obj.eval(&x0)?;
    let mut best_x = x0.clone();
    let mut best_e = e0;
    let mut trajectory = Vec::new();
    let record = |eval: usize, x: &[f64], e: f64, trajectory: &mut Vec<SearchRow>| -> Result<()> {
        let c0 = Cochain0::from_models(&models_at(start, &coords, x)?)?;
        for (node, edge, disagreement, energy) in incidence_rows(sheaf, &c0, e)? {
            trajectory.push(SearchRow {
                eval,
                node,
                edge,
                disagreement,
                energy,
            });
        }
        Ok(())
    };
    record(obj.evals, &x0, e0, &mut trajectory)?;

    let mut restarts = 0;
    if !coords.is_empty() {
        let (range_lo, range_hi) = COEFFICIENT_RANGE;
        while obj.evals < budget && best_e > TARGET_ENERGY {
            let (mut x, mut e) = if restarts == 0 {
                (x0.clone(), e0)
            } else {
                let x: Vec<f64> = (0..coords.len())
                    .map(|_| rng.random_range(range_lo..=range_hi))
                    .collect();
                let e = obj.eval(&x)?;
                (x, e)
            };
            if e < best_e {
                best_e = e;
                best_x = x.clone();
                record(obj.evals, &x, e, &mut trajectory)?;
            }
            let mut half_width = (range_hi - range_lo) / 2.0;
            'local: loop {
                let mut improved = false;
                for k in 0..coords.len() {
                    if obj.evals >= budget || e <= TARGET_ENERGY {
                        break 'local;
                    }
                    let center = x[k];
                    let mut trial = x.clone();
                    let remaining = budget - obj.evals;
                    let (t, v, _) = golden_section(
                        |t| {
                            trial[k] = t;
                            obj.eval(&trial)
                        },
                        center - half_width,
                        center + half_width,
                        remaining,
                    )?;
                    if v < e {
                        x[k] = t;
                        e = v;
                        improved = true;
                        if e < best_e {
                            best_e = e;
                            best_x = x.clone();
                            record(obj.evals, &x, e, &mut trajectory)?;
                        }
                    }
                }
                if !improved {
                    half_width *= 0.25;
                    if half_width < BRACKET_TOL {
                        break;
                    }
                }
            }
            restarts += 1;
        }
    }

    let models = models_at(start, &coords, &best_x)?;
    let cochain = Cochain0::from_models(&models)?;
    let mut coefficients: BTreeMap<String, Vec<CoefficientEntry>> = BTreeMap::new();
    for (c, v) in coords.iter().zip(&best_x) {
        coefficients
            .entry(c.node.clone())
            .or_default()
            .push(CoefficientEntry::new(&c.coeff.child, &c.coeff.parent, *v));
    }
    Ok(SearchResult {
        cochain,
        energy: best_e,
        initial_energy: e0,
        coefficients,
        evaluations: obj.evals,
        restarts,
        trajectory,
    })
}
