//! Linear additive-noise Markovian structural causal models.
//!
//! Each model is `X = C X + Z` with `C` strictly lower triangular in the
//! declared variable order and independent Gaussian noise
//! `Z_i ~ N(noise_mean_i, noise_var_i)`. The mixing map sends a standard
//! normal exogenous draw to the endogenous vector.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{pushforward, AffineMap, GaussianComponent, GaussianMixture, PSD_TOL};
use crate::report::Report;

/// Tolerance of the soft-validity decision oracle.
pub const SOFT_VALIDITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScmDoc", into = "ScmDoc")]
pub struct LinearScm {
    variables: Vec<String>,
    coeffs: DMatrix<f64>,
    noise_mean: DVector<f64>,
    noise_var: DVector<f64>,
    /// Declared edges as `(child, parent)` index pairs. Always contains every
    /// nonzero entry of `coeffs`; may also hold zero-valued edges so that a
    /// coefficient softly set to zero can be changed again.
    support: BTreeSet<(usize, usize)>,
}

impl LinearScm {
    /// Checks shapes only; structural invariants are reported by [`validate_scm`].
    pub fn new(
        variables: Vec<String>,
        coeffs: DMatrix<f64>,
        noise_mean: DVector<f64>,
        noise_var: DVector<f64>,
    ) -> Result<Self> {
        let n = variables.len();
        if coeffs.nrows() != n || coeffs.ncols() != n {
            return Err(Error::dims(
                "coefficient matrix",
                n,
                coeffs.nrows().max(coeffs.ncols()),
            ));
        }
        if noise_mean.len() != n {
            return Err(Error::dims("noise mean", n, noise_mean.len()));
        }
        if noise_var.len() != n {
            return Err(Error::dims("noise variance", n, noise_var.len()));
        }
        let support = nonzero_entries(&coeffs);
        Ok(Self {
            variables,
            coeffs,
            noise_mean,
            noise_var,
            support,
        })
    }

    /// Builds a model from `(child, parent, value)` triples. Zero-valued
    /// triples still declare the edge.
    pub fn from_edges(
        variables: &[&str],
        edges: &[(&str, &str, f64)],
        noise_mean: Vec<f64>,
        noise_var: Vec<f64>,
    ) -> Result<Self> {
        let n = variables.len();
        let mut scm = Self::new(
            variables.iter().map(|s| s.to_string()).collect(),
            DMatrix::zeros(n, n),
            DVector::from_vec(noise_mean),
            DVector::from_vec(noise_var),
        )?;
        for &(child, parent, value) in edges {
            let (c, p) = (scm.index_of(child)?, scm.index_of(parent)?);
            scm.coeffs[(c, p)] = value;
            scm.support.insert((c, p));
        }
        Ok(scm)
    }

    /// Zero-mean, unit-variance model with the given edges.
    pub fn standard(variables: &[&str], edges: &[(&str, &str, f64)]) -> Result<Self> {
        let n = variables.len();
        Self::from_edges(variables, edges, vec![0.0; n], vec![1.0; n])
    }

    /// Adds declared edges that currently carry a zero coefficient.
    pub fn with_support(mut self, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        self.support.extend(edges);
        self
    }

    pub fn dim(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn noise_mean(&self) -> &DVector<f64> {
        &self.noise_mean
    }

    pub fn noise_var(&self) -> &DVector<f64> {
        &self.noise_var
    }

    pub fn support(&self) -> &BTreeSet<(usize, usize)> {
        &self.support
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn has_edge(&self, child: &str, parent: &str) -> bool {
        match (self.index_of(child), self.index_of(parent)) {
            (Ok(c), Ok(p)) => self.support.contains(&(c, p)),
            _ => false,
        }
    }

    pub fn coefficient(&self, child: &str, parent: &str) -> Result<f64> {
        Ok(self.coeffs[(self.index_of(child)?, self.index_of(parent)?)])
    }
}

fn nonzero_entries(coeffs: &DMatrix<f64>) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for i in 0..coeffs.nrows() {
        for j in 0..coeffs.ncols() {
            if coeffs[(i, j)] != 0.0 {
                out.insert((i, j));
            }
        }
    }
    out
}

/// One structural coefficient `child <- parent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientEntry {
    pub child: String,
    pub parent: String,
    pub value: f64,
}

impl CoefficientEntry {
    pub fn new(child: &str, parent: &str, value: f64) -> Self {
        Self {
            child: child.to_string(),
            parent: parent.to_string(),
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Intervention {
    /// `do(X_i = c)` for every listed target.
    Hard { targets: BTreeMap<String, f64> },
    /// Overwrites coefficients of existing edges; parent sets never grow.
    Soft { coefficients: Vec<CoefficientEntry> },
}

impl Intervention {
    /// The empty soft intervention.
    pub fn identity() -> Self {
        Intervention::Soft {
            coefficients: Vec::new(),
        }
    }

    pub fn hard(targets: &[(&str, f64)]) -> Self {
        Intervention::Hard {
            targets: targets.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn soft(coefficients: &[(&str, &str, f64)]) -> Self {
        Intervention::Soft {
            coefficients: coefficients
                .iter()
                .map(|&(c, p, v)| CoefficientEntry::new(c, p, v))
                .collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            Intervention::Hard { targets } => targets.is_empty(),
            Intervention::Soft { coefficients } => coefficients.is_empty(),
        }
    }

    /// Checks the intervention against `scm` without applying it.
    pub fn check(&self, scm: &LinearScm) -> Result<()> {
        match self {
            Intervention::Hard { targets } => {
                for (name, value) in targets {
                    scm.index_of(name)?;
                    if !value.is_finite() {
                        return Err(Error::invalid(format!(
                            "non-finite hard value for `{name}`"
                        )));
                    }
                }
            }
            Intervention::Soft { coefficients } => {
                for e in coefficients {
                    let (c, p) = (scm.index_of(&e.child)?, scm.index_of(&e.parent)?);
                    if !scm.support.contains(&(c, p)) {
                        return Err(Error::OutsideSupport {
                            child: e.child.clone(),
                            parent: e.parent.clone(),
                        });
                    }
                    if !e.value.is_finite() {
                        return Err(Error::invalid("non-finite soft coefficient"));
                    }
                }
            }
        }
        Ok(())
    }

    fn hard_indices(&self, scm: &LinearScm) -> Result<BTreeSet<usize>> {
        match self {
            Intervention::Hard { targets } => targets.keys().map(|k| scm.index_of(k)).collect(),
            Intervention::Soft { .. } => Ok(BTreeSet::new()),
        }
    }
}

/// Observational measure together with its intervened states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalKnowledge {
    pub base: LinearScm,
    pub interventions: Vec<Intervention>,
    /// `measures[0]` is observational; `measures[k]` belongs to `interventions[k - 1]`.
    pub measures: Vec<GaussianMixture>,
    /// Aligned with `measures`; `morphisms[0]` is the identity.
    pub morphisms: Vec<AffineMap>,
}

impl CausalKnowledge {
    pub fn observational(&self) -> &GaussianMixture {
        &self.measures[0]
    }

    /// Largest `mixture_distance(measures[k], morphisms[k]_# observational)`.
    pub fn max_naturality_residual(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (m, f) in self.measures.iter().zip(&self.morphisms) {
            let pushed = pushforward(f, self.observational())?;
            worst = worst.max(crate::measure::mixture_distance(&pushed, m)?);
        }
        Ok(worst)
    }
}

pub fn validate_scm(scm: &LinearScm) -> Report {
    let mut report = Report::new();
    let n = scm.dim();
    let mut seen = BTreeSet::new();
    for v in &scm.variables {
        if !seen.insert(v.as_str()) {
            report.violation(
                format!("variables.{v}"),
                "duplicate-variable",
                format!("variable `{v}` declared twice"),
            );
        }
    }
    for i in 0..n {
        for j in i..n {
            if scm.coeffs[(i, j)] != 0.0 {
                report.violation(
                    format!("coefficients.{}<-{}", scm.variables[i], scm.variables[j]),
                    "acyclicity",
                    format!(
                        "coefficient of `{}` on `{}` violates the declared topological order",
                        scm.variables[j], scm.variables[i]
                    ),
                );
            }
        }
    }
    for &(c, p) in &scm.support {
        if p >= c && scm.coeffs[(c, p)] == 0.0 {
            report.violation(
                format!("coefficients.{}<-{}", scm.variables[c], scm.variables[p]),
                "acyclicity",
                "declared edge violates the topological order",
            );
        }
    }
    for i in 0..n {
        let v = scm.noise_var[i];
        if v < 0.0 {
            report.violation(
                format!("noise.var.{}", scm.variables[i]),
                "negative-variance",
                format!("noise variance {v} is negative"),
            );
        }
    }
    if scm
        .coeffs
        .iter()
        .chain(scm.noise_mean.iter())
        .chain(scm.noise_var.iter())
        .any(|x| !x.is_finite())
    {
        report.violation("", "non-finite", "model contains non-finite entries");
    }
    report
}

fn require_valid(scm: &LinearScm) -> Result<()> {
    let report = validate_scm(scm);
    if report.is_clean() {
        Ok(())
    } else {
        Err(Error::Validation(report))
    }
}

/// `(I − C)⁻¹` for strictly lower-triangular `C`, by forward substitution.
pub fn unit_lower_inverse(coeffs: &DMatrix<f64>) -> DMatrix<f64> {
    let n = coeffs.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        for i in k..n {
            let mut x = if i == k { 1.0 } else { 0.0 };
            for j in k..i {
                x += coeffs[(i, j)] * inv[(j, k)];
            }
            inv[(i, k)] = x;
        }
    }
    inv
}

/// Affine map from a standard-normal exogenous draw to the endogenous vector:
/// `A = (I − C)⁻¹ diag(√noise_var)`, `b = (I − C)⁻¹ noise_mean`.
pub fn mixing_map(scm: &LinearScm) -> Result<AffineMap> {
    require_valid(scm)?;
    let inv = unit_lower_inverse(&scm.coeffs);
    let scale = DMatrix::from_diagonal(&scm.noise_var.map(f64::sqrt));
    AffineMap::new(&inv * scale, &inv * &scm.noise_mean)
}

pub fn observational_measure(scm: &LinearScm) -> Result<GaussianMixture> {
    let m = mixing_map(scm)?;
    let cov = m.matrix() * m.matrix().transpose();
    Ok(GaussianMixture::gaussian(
        GaussianComponent::from_parts_unchecked(m.offset().clone(), cov),
    ))
}

/// Returns the intervened model; the input is untouched.
pub fn apply_intervention(scm: &LinearScm, iv: &Intervention) -> Result<LinearScm> {
    iv.check(scm)?;
    let mut out = scm.clone();
    match iv {
        Intervention::Hard { targets } => {
            for (name, &value) in targets {
                let i = scm.index_of(name)?;
                out.coeffs.row_mut(i).fill(0.0);
                out.noise_var[i] = 0.0;
                out.noise_mean[i] = value;
                out.support.retain(|&(c, _)| c != i);
            }
        }
        Intervention::Soft { coefficients } => {
            for e in coefficients {
                let (c, p) = (scm.index_of(&e.child)?, scm.index_of(&e.parent)?);
                out.coeffs[(c, p)] = e.value;
            }
        }
    }
    Ok(out)
}

/// Endogenous component of the intervention morphism: the affine map taking
/// a solution of the base model to the solution of the intervened model at
/// the same exogenous draw.
///
/// Equals `A_I A⁻¹` with offset `b_I − A_I A⁻¹ b`; computed through
/// `A⁻¹ = diag(1/√noise_var)(I − C)` so no matrix is inverted numerically.
pub fn intervention_map(scm: &LinearScm, iv: &Intervention) -> Result<AffineMap> {
    require_valid(scm)?;
    let intervened = apply_intervention(scm, iv)?;
    let hard = iv.hard_indices(scm)?;
    let n = scm.dim();
    let mut inv_scale = DVector::zeros(n);
    for j in 0..n {
        let v = scm.noise_var[j];
        if v > 0.0 {
            inv_scale[j] = 1.0 / v.sqrt();
        } else if !hard.contains(&j) {
            return Err(Error::SingularMixing {
                variable: scm.variables[j].clone(),
            });
        }
    }
    let (a_i, b_i) = {
        let m = mixing_map(&intervened)?;
        (m.matrix().clone(), m.offset().clone())
    };
    let unmix = DMatrix::from_diagonal(&inv_scale) * (DMatrix::identity(n, n) - &scm.coeffs);
    let matrix = &a_i * unmix;
    let offset = b_i - &a_i * inv_scale.component_mul(&scm.noise_mean);
    AffineMap::new(matrix, offset)
}

/// Observational measure first, then one measure and morphism per intervention.
pub fn generate_ck(scm: &LinearScm, ivs: &[Intervention]) -> Result<CausalKnowledge> {
    let obs = observational_measure(scm)?;
    let mut measures = vec![obs];
    let mut morphisms = vec![AffineMap::identity(scm.dim())];
    for iv in ivs {
        morphisms.push(intervention_map(scm, iv)?);
        measures.push(observational_measure(&apply_intervention(scm, iv)?)?);
    }
    Ok(CausalKnowledge {
        base: scm.clone(),
        interventions: ivs.to_vec(),
        measures,
        morphisms,
    })
}

/// Outcome of [`is_valid_soft_measure`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftValidity {
    pub valid: bool,
    /// Diagonal of `D` in `Σ = L D Lᵀ`; empty if the factorization broke down.
    pub pivots: Vec<f64>,
    /// Implied coefficients `I − L⁻¹` on the model's declared edges.
    pub witness: Vec<CoefficientEntry>,
    /// Implied nonzero coefficients on undeclared edges.
    pub off_support: Vec<CoefficientEntry>,
}

/// Decides whether `sigma` is the observational covariance of some soft
/// intervention on `scm`.
///
/// Factorizes `Σ = L D Lᵀ` (unit lower `L`) in the model's order. A soft
/// intervention only moves coefficients, so `Σ` is reachable iff `D`
/// equals the model's noise variances and `I − L⁻¹` lives on declared
/// edges. For the unit-noise case this is the `D = I` test.
pub fn is_valid_soft_measure(scm: &LinearScm, sigma: &DMatrix<f64>) -> Result<SoftValidity> {
    let n = scm.dim();
    // Reuses the component validator for shape, symmetry and PSD checks.
    GaussianComponent::new(DVector::zeros(n), sigma.clone())?;

    let mut l = DMatrix::<f64>::identity(n, n);
    let mut d = vec![0.0; n];
    for j in 0..n {
        let mut dj = sigma[(j, j)];
        for k in 0..j {
            dj -= l[(j, k)] * l[(j, k)] * d[k];
        }
        d[j] = dj;
        if dj.abs() <= PSD_TOL {
            // Rank-deficient leading block: no nondegenerate noise can produce it.
            return Ok(SoftValidity {
                valid: false,
                pivots: Vec::new(),
                witness: Vec::new(),
                off_support: Vec::new(),
            });
        }
        for i in (j + 1)..n {
            let mut s = sigma[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)] * d[k];
            }
            l[(i, j)] = s / dj;
        }
    }
    let l_inv = unit_lower_inverse(&(DMatrix::identity(n, n) - &l));
    // (I - C_S) = L^{-1}  =>  C_S = I - L^{-1}
    let implied = DMatrix::identity(n, n) - l_inv;

    let noise_ok = (0..n).all(|i| (d[i] - scm.noise_var[i]).abs() <= SOFT_VALIDITY_TOL);
    let mut witness = Vec::new();
    let mut off_support = Vec::new();
    for i in 0..n {
        for j in 0..i {
            let entry =
                CoefficientEntry::new(&scm.variables[i], &scm.variables[j], implied[(i, j)]);
            if scm.support.contains(&(i, j)) {
                witness.push(entry);
            } else if implied[(i, j)].abs() > SOFT_VALIDITY_TOL {
                off_support.push(entry);
            }
        }
    }
    Ok(SoftValidity {
        valid: noise_ok && off_support.is_empty(),
        pivots: d,
        witness,
        off_support,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseDoc {
    mean: Vec<f64>,
    var: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScmDoc {
    variables: Vec<String>,
    coefficients: Vec<CoefficientEntry>,
    noise: NoiseDoc,
}

impl TryFrom<ScmDoc> for LinearScm {
    type Error = Error;

    fn try_from(doc: ScmDoc) -> Result<Self> {
        let n = doc.variables.len();
        let mut scm = LinearScm::new(
            doc.variables,
            DMatrix::zeros(n, n),
            DVector::from_vec(doc.noise.mean),
            DVector::from_vec(doc.noise.var),
        )?;
        for e in doc.coefficients {
            let (c, p) = (scm.index_of(&e.child)?, scm.index_of(&e.parent)?);
            if !scm.support.insert((c, p)) {
                return Err(Error::invalid(format!(
                    "duplicate coefficient {} <- {}",
                    e.child, e.parent
                )));
            }
            scm.coeffs[(c, p)] = e.value;
        }
        Ok(scm)
    }
}

impl From<LinearScm> for ScmDoc {
    fn from(scm: LinearScm) -> Self {
        let coefficients = scm
            .support
            .iter()
            .map(|&(c, p)| {
                CoefficientEntry::new(&scm.variables[c], &scm.variables[p], scm.coeffs[(c, p)])
            })
            .collect();
        ScmDoc {
            variables: scm.variables,
            coefficients,
            noise: NoiseDoc {
                mean: scm.noise_mean.iter().copied().collect(),
                var: scm.noise_var.iter().copied().collect(),
            },
        }
    }
}

/// `‖(I − C)(I − C)⁻¹ − I‖∞` for the forward-substitution inverse.
pub fn inverse_residual(coeffs: &DMatrix<f64>) -> f64 {
    let n = coeffs.nrows();
    let t = DMatrix::identity(n, n) - coeffs;
    let prod = &t * unit_lower_inverse(coeffs) - DMatrix::identity(n, n);
    (0..n)
        .map(|i| prod.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
