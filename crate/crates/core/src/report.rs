//! Report-style validation results shared by every validator.

use serde::{Deserialize, Serialize};

/// One failed invariant, located by a human-readable path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub location: String,
    pub kind: String,
    pub message: String,
}

/// A numeric check that was evaluated, whether it passed or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub location: String,
    pub check: String,
    pub residual: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub violations: Vec<Violation>,
    pub residuals: Vec<Residual>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    /// True iff no invariant was violated.
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violation(
        &mut self,
        location: impl Into<String>,
        kind: &str,
        message: impl Into<String>,
    ) {
        self.violations.push(Violation {
            location: location.into(),
            kind: kind.to_string(),
            message: message.into(),
        });
    }

    /// Records a residual; a failing one also becomes a violation.
    pub fn residual(
        &mut self,
        location: impl Into<String>,
        check: &str,
        residual: f64,
        tol: f64,
    ) -> bool {
        let location = location.into();
        let passed = residual <= tol;
        if !passed {
            self.violation(
                location.clone(),
                check,
                format!("residual {residual:e} exceeds tolerance {tol:e}"),
            );
        }
        self.residuals.push(Residual {
            location,
            check: check.to_string(),
            residual,
            tol,
            passed,
        });
        passed
    }

    /// Merges another report, prefixing its locations.
    pub fn absorb(&mut self, prefix: &str, other: Report) {
        let join = |loc: String| {
            if loc.is_empty() {
                prefix.to_string()
            } else {
                format!("{prefix}.{loc}")
            }
        };
        for mut v in other.violations {
            v.location = join(v.location);
            self.violations.push(v);
        }
        for mut r in other.residuals {
            r.location = join(r.location);
            self.residuals.push(r);
        }
    }

    pub fn has_kind(&self, kind: &str) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}
