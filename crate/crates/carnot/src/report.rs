//! Validation reports: lists of violated invariants with witnesses.

use std::fmt;

/// A single violated invariant, with enough context to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Short machine-readable kind, e.g. `antisymmetry`, `triangle`.
    pub kind: String,
    /// Witness indices or sample data, human readable.
    pub witness: String,
    /// Size of the defect when meaningful (0 for structural violations).
    pub magnitude: f64,
}

/// Outcome of a validation pass. Empty report means every invariant held.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Free-form diagnostics that are not failures (e.g. sampled diameters).
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, kind: &str, witness: String, magnitude: f64) {
        self.violations.push(Violation {
            kind: kind.to_string(),
            witness,
            magnitude,
        });
    }

    pub fn note(&mut self, text: String) {
        self.notes.push(text);
    }

    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            writeln!(f, "ok: all invariants hold")?;
        } else {
            for v in &self.violations {
                writeln!(f, "violation[{}] at {} (defect {:.3e})", v.kind, v.witness, v.magnitude)?;
            }
        }
        for n in &self.notes {
            writeln!(f, "note: {n}")?;
        }
        Ok(())
    }
}
