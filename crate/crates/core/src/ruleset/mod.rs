//! Ordered threshold/fuzzy classification of image objects.
//!
//! A rule set is a sequence of stages. Each stage looks only at objects whose
//! current label equals its source class, and relabels those whose crisp
//! predicates all hold and whose fuzzy score (the minimum membership over its
//! fuzzy predicates, 1 when there are none) reaches the stage cutoff.
//! Intermediate classes are folded into their final class at the end, and
//! whatever is still unclassified takes the rule set's final class.

mod builtin;
mod engine;
mod format;

pub use builtin::builtin_qinhuai_ruleset;
pub use engine::{classify, rasterize_labels, trace_csv, Decision};
pub use format::{parse_ruleset, serialize_ruleset};

use std::collections::BTreeMap;
use std::fmt;

use crate::features::Feature;

pub const UNCLASSIFIED: &str = "Unclassified";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ramp {
    /// 0 at or below `a`, 1 at or above `b`.
    Up,
    /// 1 at or below `a`, 0 at or above `b`.
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembershipFunction {
    pub ramp: Ramp,
    pub a: f64,
    pub b: f64,
}

impl MembershipFunction {
    pub fn up(a: f64, b: f64) -> Self {
        MembershipFunction { ramp: Ramp::Up, a, b }
    }

    pub fn down(a: f64, b: f64) -> Self {
        MembershipFunction { ramp: Ramp::Down, a, b }
    }

    /// Linear ramp between `a` and `b`, clamped to [0, 1].
    pub fn membership(&self, x: f64) -> f64 {
        let rising = if x <= self.a {
            0.0
        } else if x >= self.b {
            1.0
        } else {
            (x - self.a) / (self.b - self.a)
        };
        match self.ramp {
            Ramp::Up => rising,
            Ramp::Down => 1.0 - rising,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparator {
    pub fn holds(self, x: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => x < threshold,
            Comparator::Le => x <= threshold,
            Comparator::Gt => x > threshold,
            Comparator::Ge => x >= threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s {
            "<" => Some(Comparator::Lt),
            "<=" => Some(Comparator::Le),
            ">" => Some(Comparator::Gt),
            ">=" => Some(Comparator::Ge),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    Crisp { op: Comparator, threshold: f64 },
    Fuzzy(MembershipFunction),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Predicate {
    pub feature: Feature,
    pub condition: Condition,
}

impl Predicate {
    pub fn crisp(feature: Feature, op: Comparator, threshold: f64) -> Self {
        Predicate {
            feature,
            condition: Condition::Crisp { op, threshold },
        }
    }

    pub fn fuzzy(feature: Feature, mf: MembershipFunction) -> Self {
        Predicate {
            feature,
            condition: Condition::Fuzzy(mf),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.condition {
            Condition::Crisp { op, threshold } => write!(f, "{} {} {}", self.feature, op.symbol(), threshold),
            Condition::Fuzzy(mf) => {
                let dir = match mf.ramp {
                    Ramp::Up => "up",
                    Ramp::Down => "down",
                };
                write!(f, "{} ramp {dir} ({}, {})", self.feature, mf.a, mf.b)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub name: String,
    pub source: String,
    pub target: String,
    pub predicates: Vec<Predicate>,
    /// Minimum fuzzy score for the stage to fire, in (0, 1].
    pub alpha: f64,
}

impl Stage {
    /// `Some(score)` when the stage fires for the given feature lookup.
    pub fn evaluate(&self, value: impl Fn(Feature) -> f64) -> Option<f64> {
        let mut score: f64 = 1.0;
        for p in &self.predicates {
            let x = value(p.feature);
            match p.condition {
                Condition::Crisp { op, threshold } => {
                    if !op.holds(x, threshold) {
                        return None;
                    }
                }
                Condition::Fuzzy(mf) => score = score.min(mf.membership(x)),
            }
        }
        (score >= self.alpha).then_some(score)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    /// Final output classes.
    pub classes: Vec<String>,
    /// Intermediate class -> the final class (or Unclassified) it folds into.
    pub intermediate: BTreeMap<String, String>,
    pub stages: Vec<Stage>,
    /// Assigned to everything still unclassified after the last stage.
    pub final_class: String,
}

impl RuleSet {
    /// Explicit stages plus the closing remainder assignment.
    pub fn stage_count(&self) -> usize {
        self.stages.len() + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        let up = MembershipFunction::up(0.16, 0.22);
        assert_eq!(up.membership(0.16), 0.0);
        assert_eq!(up.membership(0.22), 1.0);
        assert!((up.membership(0.19) - 0.5).abs() < 1e-12);
        let down = MembershipFunction::down(0.0, 0.8);
        assert_eq!(down.membership(0.0), 1.0);
        assert_eq!(down.membership(0.8), 0.0);
        assert_eq!(down.membership(-3.0), 1.0);
    }

    proptest::proptest! {
        #[test]
        fn membership_bounded_and_monotone(a in -100.0f64..100.0, width in 1e-3f64..50.0, x in -200.0f64..200.0, dx in 0.0f64..10.0) {
            for mf in [MembershipFunction::up(a, a + width), MembershipFunction::down(a, a + width)] {
                let (m0, m1) = (mf.membership(x), mf.membership(x + dx));
                proptest::prop_assert!((0.0..=1.0).contains(&m0));
                match mf.ramp {
                    Ramp::Up => proptest::prop_assert!(m1 >= m0),
                    Ramp::Down => proptest::prop_assert!(m1 <= m0),
                }
            }
        }
    }
}
