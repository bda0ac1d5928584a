//! Verdict lines and flat quantities for reports.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    AtLeast,
    AtMost,
    Equal,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::AtLeast => ">=",
            Relation::AtMost => "<=",
            Relation::Equal => "==",
        }
    }
}

/// One checked relation `lhs ⋈ rhs` with an absolute tolerance.
///
/// `slack` is how far inside the tolerance the check landed: negative means
/// failure.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub relation: Relation,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    /// How the tolerance was obtained, e.g. `4σ` or `1e-4`.
    pub basis: String,
}

impl Verdict {
    pub fn at_least(name: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64, basis: impl Into<String>) -> Self {
        Self { name: name.into(), relation: Relation::AtLeast, lhs, rhs, tolerance, basis: basis.into() }
    }

    pub fn at_most(name: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64, basis: impl Into<String>) -> Self {
        Self { name: name.into(), relation: Relation::AtMost, lhs, rhs, tolerance, basis: basis.into() }
    }

    pub fn equal(name: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64, basis: impl Into<String>) -> Self {
        Self { name: name.into(), relation: Relation::Equal, lhs, rhs, tolerance, basis: basis.into() }
    }

    /// `|lhs − rhs| ≤ rel·|rhs|`.
    pub fn relative(name: impl Into<String>, lhs: f64, rhs: f64, rel: f64) -> Self {
        Self::equal(name, lhs, rhs, rel * rhs.abs(), format!("{}% of reference", rel * 100.0))
    }

    pub fn slack(&self) -> f64 {
        let d = self.lhs - self.rhs;
        match self.relation {
            Relation::AtLeast => d + self.tolerance,
            Relation::AtMost => self.tolerance - d,
            Relation::Equal => self.tolerance - d.abs(),
        }
    }

    pub fn passed(&self) -> bool {
        // NaN compares false, so a NaN slack fails
        self.slack() >= 0.0
    }

    pub fn status(&self) -> &'static str {
        if self.passed() { "PASS" } else { "FAIL" }
    }

    pub fn with_prefix(mut self, prefix: &str) -> Self {
        if !prefix.is_empty() {
            self.name = format!("{prefix}.{}", self.name);
        }
        self
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} | {:.12e} {} {:.12e} | tol {:.3e} ({}) | slack {:.6e}",
            self.status(),
            self.name,
            self.lhs,
            self.relation.symbol(),
            self.rhs,
            self.tolerance,
            self.basis,
            self.slack()
        )
    }
}

/// A named number, optionally with a Monte Carlo standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantity {
    pub name: String,
    pub value: f64,
    pub std_error: Option<f64>,
}

impl Quantity {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Self { name: name.into(), value, std_error: None }
    }

    pub fn with_error(name: impl Into<String>, value: f64, std_error: f64) -> Self {
        Self { name: name.into(), value, std_error: Some(std_error) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slack_signs() {
        assert!(Verdict::at_least("a", 1.0, 1.1, 0.2, "abs").passed());
        assert!(!Verdict::at_least("a", 1.0, 1.3, 0.2, "abs").passed());
        assert!(Verdict::at_most("b", 1.0, 0.9, 0.2, "abs").passed());
        assert!(!Verdict::equal("c", 1.0, 1.5, 0.2, "abs").passed());
        assert!(!Verdict::equal("nan", f64::NAN, 1.0, 0.2, "abs").passed());
    }

    #[test]
    fn line_starts_with_status() {
        let v = Verdict::relative("rate", 1.01, 1.0, 0.05);
        assert!(v.to_string().starts_with("PASS rate |"));
    }
}
