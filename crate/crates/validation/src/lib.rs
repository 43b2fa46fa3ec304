//! Bookkeeping for the acceptance suite: Monte-Carlo summaries and the
//! PASS/FAIL/SKIPPED report.

use std::fmt;

/// Mean and Monte-Carlo standard error of a set of replicate errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSummary {
    pub reps: usize,
    pub mean: f64,
    pub se: f64,
}

impl McSummary {
    /// Summarizes `errors` (estimate minus truth, one per replicate).
    pub fn of(errors: &[f64]) -> Self {
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
        McSummary { reps: errors.len(), mean, se: (var / n).sqrt() }
    }

    /// `|mean bias|` in units of the Monte-Carlo standard error.
    pub fn z(&self) -> f64 {
        self.mean.abs() / self.se
    }

    pub fn within(&self, multiple: f64) -> bool {
        self.z() < multiple
    }
}

impl fmt::Display for McSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bias {:+.5} (se {:.5}, {:.2} se, {} reps)", self.mean, self.se, self.z(), self.reps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Skipped,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skipped => "SKIPPED",
        })
    }
}

/// One named check inside a criterion.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub verdict: Verdict,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), verdict: if ok { Verdict::Pass } else { Verdict::Fail }, detail: detail.into() }
    }

    pub fn skipped(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Check { name: name.into(), verdict: Verdict::Skipped, detail: detail.into() }
    }
}

/// Outcome of one numbered criterion.
#[derive(Debug, Clone)]
pub struct Criterion {
    pub number: u32,
    pub title: String,
    pub checks: Vec<Check>,
}

impl Criterion {
    pub fn new(number: u32, title: impl Into<String>) -> Self {
        Criterion { number, title: title.into(), checks: Vec::new() }
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    /// FAIL if any check failed, SKIPPED if every check was skipped, else PASS.
    pub fn verdict(&self) -> Verdict {
        if self.checks.iter().any(|c| c.verdict == Verdict::Fail) {
            Verdict::Fail
        } else if !self.checks.is_empty() && self.checks.iter().all(|c| c.verdict == Verdict::Skipped) {
            Verdict::Skipped
        } else if self.checks.is_empty() {
            Verdict::Fail
        } else {
            Verdict::Pass
        }
    }

    /// The criterion line followed by indented check lines.
    pub fn render(&self) -> String {
        let counts = |v: Verdict| self.checks.iter().filter(|c| c.verdict == v).count();
        let mut out = format!(
            "{} criterion {}: {} ({} passed, {} failed, {} skipped)\n",
            self.verdict(),
            self.number,
            self.title,
            counts(Verdict::Pass),
            counts(Verdict::Fail),
            counts(Verdict::Skipped),
        );
        for c in &self.checks {
            out.push_str(&format!("    [{}] {}: {}\n", c.verdict, c.name, c.detail));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_known_errors() {
        let s = McSummary::of(&[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(s.mean, 0.0);
        assert!((s.se - (4.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(s.within(3.0));
    }

    #[test]
    fn verdicts_combine() {
        let mut c = Criterion::new(1, "x");
        assert_eq!(c.verdict(), Verdict::Fail);
        c.push(Check::skipped("a", ""));
        assert_eq!(c.verdict(), Verdict::Skipped);
        c.push(Check::new("b", true, ""));
        assert_eq!(c.verdict(), Verdict::Pass);
        c.push(Check::new("c", false, ""));
        assert_eq!(c.verdict(), Verdict::Fail);
        assert!(c.render().starts_with("FAIL criterion 1"));
    }
}
