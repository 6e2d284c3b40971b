//! α-abstractions between a micro and a macro linear SCM, and the
//! interventional-consistency check.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{mixture_distance, pushforward, AffineMap, GaussianMixture};
use crate::report::Report;
use crate::scm::{
    apply_intervention, observational_measure, validate_scm, Intervention, LinearScm,
};

/// Singular values at or below this count as zero when computing rank.
pub const RANK_TOL: f64 = 1e-10;

/// Structural record of the exogenous component `⟨Q, a_Z⟩`. Kept for
/// completeness; all numerical checks act on endogenous measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExoRecord {
    pub relevant: BTreeSet<String>,
    pub node_map: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Abstraction {
    pub micro: LinearScm,
    pub macro_scm: LinearScm,
    /// Relevant micro variables `R`.
    pub relevant: BTreeSet<String>,
    /// Surjective `a_X : R -> macro variables`.
    pub node_map: BTreeMap<String, String>,
    /// `α_X`, macro-dim × micro-dim.
    pub functional_map: AffineMap,
    pub exo_record: Option<ExoRecord>,
}

impl Abstraction {
    /// Derives `R` and `a_X` from the nonzero pattern of `alpha`: a micro
    /// variable is relevant iff its column is nonzero, and maps to the first
    /// macro row that uses it.
    pub fn from_map(micro: LinearScm, macro_scm: LinearScm, alpha: AffineMap) -> Self {
        let mut relevant = BTreeSet::new();
        let mut node_map = BTreeMap::new();
        let m = alpha.matrix();
        for j in 0..m.ncols().min(micro.dim()) {
            if let Some(i) = (0..m.nrows()).find(|&i| m[(i, j)] != 0.0) {
                let name = micro.variables()[j].clone();
                relevant.insert(name.clone());
                if let Some(target) = macro_scm.variables().get(i) {
                    node_map.insert(name, target.clone());
                }
            }
        }
        Self {
            micro,
            macro_scm,
            relevant,
            node_map,
            functional_map: alpha,
            exo_record: None,
        }
    }

    pub fn preimage(&self, macro_var: &str) -> BTreeSet<&str> {
        self.node_map
            .iter()
            .filter(|(_, v)| v.as_str() == macro_var)
            .map(|(k, _)| k.as_str())
            .collect()
    }
}

pub fn matrix_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_TOL)
        .count()
}

pub fn validate_abstraction(ab: &Abstraction) -> Report {
    let mut report = Report::new();
    report.absorb("micro", validate_scm(&ab.micro));
    report.absorb("macro", validate_scm(&ab.macro_scm));
    let maps = validate_abstraction_maps(ab);
    report.violations.extend(maps.violations);
    report
}

/// The map-level checks of [`validate_abstraction`], without re-validating
/// the two models.
pub(crate) fn validate_abstraction_maps(ab: &Abstraction) -> Report {
    let mut report = Report::new();
    let f = ab.functional_map.matrix();
    let (n_micro, n_macro) = (ab.micro.dim(), ab.macro_scm.dim());
    if f.nrows() != n_macro || f.ncols() != n_micro {
        report.violation(
            "alpha",
            "dimension",
            format!(
                "functional map is {}x{}, expected {n_macro}x{n_micro}",
                f.nrows(),
                f.ncols()
            ),
        );
        return report;
    }

    for r in &ab.relevant {
        if ab.micro.index_of(r).is_err() {
            report.violation(
                format!("relevant.{r}"),
                "unknown-variable",
                format!("`{r}` is not a micro variable"),
            );
        }
    }
    for (k, v) in &ab.node_map {
        if !ab.relevant.contains(k) {
            report.violation(
                format!("node_map.{k}"),
                "node-map",
                format!("`{k}` is mapped but not relevant"),
            );
        }
        if ab.macro_scm.index_of(v).is_err() {
            report.violation(
                format!("node_map.{k}"),
                "unknown-variable",
                format!("`{v}` is not a macro variable"),
            );
        }
    }
    for r in &ab.relevant {
        if !ab.node_map.contains_key(r) {
            report.violation(
                format!("node_map.{r}"),
                "node-map",
                format!("relevant variable `{r}` is unmapped"),
            );
        }
    }
    let image: BTreeSet<&str> = ab.node_map.values().map(String::as_str).collect();
    for v in ab.macro_scm.variables() {
        if !image.contains(v.as_str()) {
            report.violation(
                "node_map",
                "surjectivity",
                format!("macro variable `{v}` has no preimage"),
            );
        }
    }

    let rank = matrix_rank(f);
    if rank != n_macro {
        report.violation(
            "alpha",
            "rank",
            format!("functional map has rank {rank}, expected full row rank {n_macro}"),
        );
    }

    for (j, name) in ab.micro.variables().iter().enumerate() {
        let col_nonzero = (0..n_macro).any(|i| f[(i, j)] != 0.0);
        if !ab.relevant.contains(name) {
            if col_nonzero {
                report.violation(
                    format!("alpha.{name}"),
                    "support",
                    format!("column of irrelevant variable `{name}` is nonzero"),
                );
            }
            continue;
        }
        for (i, macro_name) in ab.macro_scm.variables().iter().enumerate() {
            if f[(i, j)] != 0.0 && ab.node_map.get(name) != Some(macro_name) {
                report.violation(
                    format!("alpha.{macro_name}.{name}"),
                    "block-structure",
                    format!("`{name}` contributes to `{macro_name}` but maps elsewhere"),
                );
            }
        }
    }
    report
}

pub fn abstract_measure(ab: &Abstraction, chi: &GaussianMixture) -> Result<GaussianMixture> {
    pushforward(&ab.functional_map, chi)
}

/// A macro intervention paired with its micro counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcPair {
    #[serde(rename = "macro")]
    pub macro_iv: Intervention,
    #[serde(rename = "micro")]
    pub micro_iv: Intervention,
}

impl IcPair {
    pub fn new(macro_iv: Intervention, micro_iv: Intervention) -> Self {
        Self { macro_iv, micro_iv }
    }

    pub fn observational() -> Self {
        Self::new(Intervention::identity(), Intervention::identity())
    }

    fn label(&self) -> String {
        let describe = |iv: &Intervention| match iv {
            Intervention::Hard { targets } => {
                let parts: Vec<String> = targets.iter().map(|(k, v)| format!("{k}={v}")).collect();
                format!("do({})", parts.join(","))
            }
            Intervention::Soft { coefficients } => {
                let parts: Vec<String> = coefficients
                    .iter()
                    .map(|e| format!("{}<-{}:{}", e.child, e.parent, e.value))
                    .collect();
                format!("soft({})", parts.join(","))
            }
        };
        if self.macro_iv.is_identity() && self.micro_iv.is_identity() {
            "observational".to_string()
        } else {
            format!(
                "{} ~ {}",
                describe(&self.macro_iv),
                describe(&self.micro_iv)
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcResidual {
    pub label: String,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcReport {
    pub residuals: Vec<IcResidual>,
    pub tol: f64,
    pub consistent: bool,
}

fn check_pair(ab: &Abstraction, pair: &IcPair) -> Result<()> {
    pair.macro_iv.check(&ab.macro_scm)?;
    pair.micro_iv.check(&ab.micro)?;
    if pair.macro_iv.is_identity() && pair.micro_iv.is_identity() {
        return Ok(());
    }
    match (&pair.macro_iv, &pair.micro_iv) {
        (Intervention::Hard { targets: macro_t }, Intervention::Hard { targets: micro_t }) => {
            for micro_var in micro_t.keys() {
                match ab.node_map.get(micro_var) {
                    Some(m) if macro_t.contains_key(m) => {}
                    _ => {
                        return Err(Error::invalid(format!(
                            "micro target `{micro_var}` is not in the preimage of the macro targets"
                        )))
                    }
                }
            }
            for macro_var in macro_t.keys() {
                if !ab
                    .preimage(macro_var)
                    .iter()
                    .any(|v| micro_t.contains_key(*v))
                {
                    return Err(Error::invalid(format!(
                        "macro target `{macro_var}` has no micro counterpart"
                    )));
                }
            }
            Ok(())
        }
        (Intervention::Soft { .. }, Intervention::Soft { .. }) => Ok(()),
        _ => Err(Error::invalid(
            "family entry pairs interventions of different kinds",
        )),
    }
}

/// Interventional consistency over a declared family. The observational
/// pair is always evaluated first.
pub fn check_ic(ab: &Abstraction, family: &[IcPair], tol: f64) -> Result<IcReport> {
    let mut pairs = vec![IcPair::observational()];
    for pair in family {
        check_pair(ab, pair)?;
        if !(pair.macro_iv.is_identity() && pair.micro_iv.is_identity()) {
            pairs.push(pair.clone());
        }
    }
    let mut residuals = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let micro_measure = observational_measure(&apply_intervention(&ab.micro, &pair.micro_iv)?)?;
        let macro_measure =
            observational_measure(&apply_intervention(&ab.macro_scm, &pair.macro_iv)?)?;
        let residual = mixture_distance(&abstract_measure(ab, &micro_measure)?, &macro_measure)?;
        residuals.push(IcResidual {
            label: pair.label(),
            residual,
        });
    }
    let consistent = residuals.iter().all(|r| r.residual <= tol);
    Ok(IcReport {
        residuals,
        tol,
        consistent,
    })
}

/// `max(‖F·Ĝ − I‖∞, ‖F·ĝ + f‖∞)`: how far `restriction ∘ extension` is from
/// the identity on the edge space.
pub fn right_inverse_residual(restriction: &AffineMap, extension: &AffineMap) -> Result<f64> {
    if extension.out_dim() != restriction.in_dim() {
        return Err(Error::dims(
            "extension rows",
            restriction.in_dim(),
            extension.out_dim(),
        ));
    }
    if extension.in_dim() != restriction.out_dim() {
        return Err(Error::dims(
            "extension columns",
            restriction.out_dim(),
            extension.in_dim(),
        ));
    }
    let round_trip = restriction.after(extension)?;
    let m = restriction.out_dim();
    let diff = round_trip.matrix() - DMatrix::identity(m, m);
    let row_norm = (0..m)
        .map(|i| diff.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let offset_norm = round_trip
        .offset()
        .iter()
        .fold(0.0, |acc: f64, x| acc.max(x.abs()));
    Ok(row_norm.max(offset_norm))
}

pub fn check_right_inverse(
    restriction: &AffineMap,
    extension: &AffineMap,
    tol: f64,
) -> Result<bool> {
    Ok(right_inverse_residual(restriction, extension)? <= tol)
}

/// Minimum-Frobenius-norm right inverse `Ĝ = Fᵀ(FFᵀ)⁻¹`, offset `−Ĝf`.
pub fn pseudo_inverse_extension(restriction: &AffineMap) -> Result<AffineMap> {
    let f = restriction.matrix();
    let gram = f * f.transpose();
    let inv = gram
        .try_inverse()
        .filter(|_| matrix_rank(f) == f.nrows())
        .ok_or_else(|| {
            Error::invalid("restriction lacks full row rank; no right inverse exists")
        })?;
    let g = f.transpose() * inv;
    let offset = -(&g * restriction.offset());
    AffineMap::new(g, offset)
}

/// `outer ∘ inner` where `inner: micro -> mid` and `outer: mid -> macro`.
pub fn compose(outer: &Abstraction, inner: &Abstraction) -> Result<Abstraction> {
    if inner.macro_scm.variables() != outer.micro.variables() {
        return Err(Error::invalid(
            "abstractions do not chain: intermediate models differ",
        ));
    }
    let functional_map = outer.functional_map.after(&inner.functional_map)?;
    let mut relevant = BTreeSet::new();
    let mut node_map = BTreeMap::new();
    for (micro_var, mid_var) in &inner.node_map {
        if let Some(top) = outer.node_map.get(mid_var) {
            relevant.insert(micro_var.clone());
            node_map.insert(micro_var.clone(), top.clone());
        }
    }
    Ok(Abstraction {
        micro: inner.micro.clone(),
        macro_scm: outer.macro_scm.clone(),
        relevant,
        node_map,
        functional_map,
        exo_record: None,
    })
}
