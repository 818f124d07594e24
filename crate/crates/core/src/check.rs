//! Named residuals of identities.

use serde::Serialize;

/// Scaled residual of one identity at one sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Identity {
    pub name: &'static str,
    pub residual: f64,
}

pub fn id(name: &'static str, residual: f64) -> Identity {
    Identity { name, residual }
}

/// Largest residual among identities whose name matches.
pub fn worst(ids: &[Identity], name: &str) -> Option<f64> {
    ids.iter().filter(|r| r.name == name).map(|r| r.residual).reduce(f64::max)
}

/// Accumulates `sum of terms = 0` residuals with a scale taken from the
/// largest single term.
#[derive(Default)]
pub struct Acc {
    worst: f64,
    scale: f64,
}

impl Acc {
    pub fn add(&mut self, terms: &[f64]) {
        let s: f64 = terms.iter().sum();
        self.worst = self.worst.max(s.abs());
        for t in terms {
            self.scale = self.scale.max(t.abs());
        }
    }

    pub fn value(&self) -> f64 {
        self.worst / self.scale.max(1.0)
    }
}
