//! Round-based local update scenarios on a causal sheaf.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output::{format_real, write_csv};
use crate::scm::{apply_intervention, observational_measure, Intervention, LinearScm};
use crate::search::{
    coordinates, golden_section, incidence_rows, Parametrization, COEFFICIENT_RANGE,
};
use crate::sheaf::{
    edge_disagreement, energy, is_global_section, CausalSheaf, Cochain0, SectionVerdict,
};

/// Evaluations per greedy line search.
const LINE_SEARCH_EVALS: usize = 80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum Policy {
    /// `schedule[node][r - 1]` is applied at round `r`, on top of everything
    /// applied before; `null` leaves the node alone that round.
    Scripted {
        schedule: BTreeMap<String, Vec<Option<Intervention>>>,
    },
    /// Each round every node with free coefficients line-searches them in
    /// turn to reduce the disagreement on its own edges. The seed fixes the
    /// node order.
    GreedyLocal { free: Parametrization },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Applied to the node models before round 0.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub initial: BTreeMap<String, Intervention>,
    #[serde(flatten)]
    pub policy: Policy,
}

fn default_tol() -> f64 {
    crate::sheaf::DEFAULT_SECTION_TOL
}

impl Scenario {
    /// Node models after the initial interventions.
    pub fn start_models(&self, sheaf: &CausalSheaf) -> Result<BTreeMap<String, LinearScm>> {
        let mut models = sheaf.node_stalks().clone();
        for (node, iv) in &self.initial {
            let updated = apply_intervention(sheaf.node_stalk(node)?, iv)?;
            models.insert(node.clone(), updated);
        }
        Ok(models)
    }

    /// Static checks against the sheaf. Scheduled interventions are checked
    /// against the starting models; problems that only appear after earlier
    /// rounds are reported by [`run_simulate`] with their round.
    pub fn check(&self, sheaf: &CausalSheaf) -> Result<()> {
        let start = self.start_models(sheaf)?;
        if self.rounds == 0 {
            return Err(Error::invalid("scenario needs at least one round"));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::invalid(
                "scenario tolerance must be finite and non-negative",
            ));
        }
        match &self.policy {
            Policy::Scripted { schedule } => {
                for (node, steps) in schedule {
                    let scm = start.get(node).ok_or_else(|| Error::UnknownId {
                        kind: "node",
                        id: node.clone(),
                    })?;
                    if steps.len() > self.rounds {
                        return Err(Error::invalid(format!(
                            "schedule for `{node}` has {} entries but the scenario has {} rounds",
                            steps.len(),
                            self.rounds
                        )));
                    }
                    for iv in steps.iter().flatten() {
                        iv.check(scm)?;
                    }
                }
            }
            Policy::GreedyLocal { free } => {
                coordinates(&start, free)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub round: usize,
    pub node: String,
    pub edge: String,
    pub disagreement: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scenario: String,
    /// Total energy after each round; index 0 is the initial state.
    pub energies: Vec<f64>,
    pub rows: Vec<TrajectoryRow>,
    pub models: BTreeMap<String, LinearScm>,
    pub cochain: Cochain0,
    pub verdict: SectionVerdict,
}

pub const TRAJECTORY_HEADER: [&str; 5] = ["round", "node", "edge", "disagreement", "energy"];

impl Trajectory {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.round.to_string(),
                    r.node.clone(),
                    r.edge.clone(),
                    format_real(r.disagreement),
                    format_real(r.energy),
                ]
            })
            .collect();
        write_csv(writer, &TRAJECTORY_HEADER, &rows)
    }
}

fn local_energy(sheaf: &CausalSheaf, c0: &Cochain0, node: &str) -> Result<f64> {
    let mut total = 0.0;
    for e in sheaf.network().incident_edges(node) {
        let d = edge_disagreement(sheaf, c0, &e.id)?;
        total += d * d;
    }
    Ok(total)
}

fn greedy_round(
    sheaf: &CausalSheaf,
    free: &Parametrization,
    models: &mut BTreeMap<String, LinearScm>,
    c0: &mut Cochain0,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut order: Vec<&String> = free.keys().collect();
    order.shuffle(rng);
    let (lo, hi) = COEFFICIENT_RANGE;
    for node in order {
        for coeff in &free[node] {
            let base = models[node].clone();
            let current = local_energy(sheaf, c0, node)?;
            let mut trial_c0 = c0.clone();
            let mut eval = |t: f64| -> Result<f64> {
                let scm = apply_intervention(
                    &base,
                    &Intervention::soft(&[(&coeff.child, &coeff.parent, t)]),
                )?;
                trial_c0
                    .values
                    .insert(node.clone(), observational_measure(&scm)?);
                local_energy(sheaf, &trial_c0, node)
            };
            let (t, v, _) = golden_section(&mut eval, lo, hi, LINE_SEARCH_EVALS)?;
            // Other edges are untouched, so a lower local energy never
            // raises the total.
            if v < current {
                let scm = apply_intervention(
                    &base,
                    &Intervention::soft(&[(&coeff.child, &coeff.parent, t)]),
                )?;
                c0.values.insert(node.clone(), observational_measure(&scm)?);
                models.insert(node.clone(), scm);
            }
        }
    }
    Ok(())
}

/// Runs `scenario` and records per-round disagreements for every incidence.
/// Round 0 is the state after the initial interventions.
pub fn run_simulate(sheaf: &CausalSheaf, scenario: &Scenario) -> Result<Trajectory> {
    scenario.check(sheaf)?;
    let mut models = scenario.start_models(sheaf)?;
    let mut c0 = Cochain0::from_models(&models)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut energies = Vec::with_capacity(scenario.rounds + 1);
    let mut rows = Vec::new();
    let mut record = |round: usize, c0: &Cochain0, energies: &mut Vec<f64>| -> Result<()> {
        let total = energy(sheaf, c0)?;
        energies.push(total);
        for (node, edge, disagreement, energy) in incidence_rows(sheaf, c0, total)? {
            rows.push(TrajectoryRow {
                round,
                node,
                edge,
                disagreement,
                energy,
            });
        }
        Ok(())
    };
    record(0, &c0, &mut energies)?;
    for round in 1..=scenario.rounds {
        let at_round = |e: Error| Error::Round {
            round,
            source: Box::new(e),
        };
        match &scenario.policy {
            Policy::Scripted { schedule } => {
                for (node, steps) in schedule {
                    if let Some(Some(iv)) = steps.get(round - 1) {
                        let updated = apply_intervention(&models[node], iv).map_err(at_round)?;
                        c0.values.insert(
                            node.clone(),
                            observational_measure(&updated).map_err(at_round)?,
                        );
                        models.insert(node.clone(), updated);
                    }
                }
            }
            Policy::GreedyLocal { free } => {
                greedy_round(sheaf, free, &mut models, &mut c0, &mut rng).map_err(at_round)?;
            }
        }
        record(round, &c0, &mut energies)?;
    }
    let verdict = is_global_section(sheaf, &c0, scenario.tol)?;
    Ok(Trajectory {
        scenario: scenario.id.clone(),
        energies,
        rows,
        models,
        cochain: c0,
        verdict,
    })
}
