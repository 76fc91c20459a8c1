//! Named verification results.

use serde::Serialize;

/// Which side of the threshold a measurement must fall on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtMost,
    AtLeast,
}

impl Direction {
    pub fn holds(self, measured: f64, threshold: f64) -> bool {
        match self {
            Direction::AtMost => measured <= threshold,
            Direction::AtLeast => measured >= threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub direction: Direction,
    pub details: String,
    pub samples_used: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sub_checks: Vec<CheckReport>,
}

impl CheckReport {
    /// A report whose `passed` flag follows from the measurement. NaN never
    /// passes.
    pub fn measure(name: impl Into<String>, measured: f64, threshold: f64, direction: Direction) -> Self {
        Self {
            name: name.into(),
            passed: direction.holds(measured, threshold),
            measured,
            threshold,
            direction,
            details: String::new(),
            samples_used: 0,
            sub_checks: Vec::new(),
        }
    }

    pub fn at_most(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self::measure(name, measured, threshold, Direction::AtMost)
    }

    pub fn at_least(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self::measure(name, measured, threshold, Direction::AtLeast)
    }

    pub fn with_details(mut self, details: impl Into<String>) -> Self {
        self.details = details.into();
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples_used = samples;
        self
    }

    /// Attach sub-checks; the parent passes only if it and all of them pass.
    pub fn with_sub_checks(mut self, subs: Vec<CheckReport>) -> Self {
        self.passed = self.passed && subs.iter().all(|c| c.passed);
        self.sub_checks = subs;
        self
    }

    pub fn find(&self, name: &str) -> Option<&CheckReport> {
        if self.name == name {
            return Some(self);
        }
        self.sub_checks.iter().find_map(|c| c.find(name))
    }
}
