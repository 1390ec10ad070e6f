//! Rule-set files: TOML with a fixed key order and number formatting, so the
//! canonical text of a rule set is unique and round-trips byte for byte.
//! `docs/ruleset-format.md` describes the schema.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Comparator, Condition, MembershipFunction, Predicate, Ramp, RuleSet, Stage, UNCLASSIFIED};
use crate::error::{Error, Result};
use crate::features::Feature;

// Plain keys are declared in alphabetical order with nested tables last; serde
// emits fields in declaration order.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRuleSet {
    classes: Vec<String>,
    final_class: String,
    #[serde(default)]
    intermediate: BTreeMap<String, String>,
    #[serde(default)]
    stages: Vec<RawStage>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage {
    #[serde(default = "default_alpha")]
    alpha: f64,
    name: String,
    #[serde(default = "unclassified")]
    source: String,
    target: String,
    #[serde(default)]
    predicates: Vec<RawPredicate>,
}

fn default_alpha() -> f64 {
    0.5
}

fn unclassified() -> String {
    UNCLASSIFIED.to_string()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPredicate {
    #[serde(skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
    feature: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    op: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ramp: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
}

fn semantic(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Semantic {
        field: field.into(),
        reason: reason.into(),
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn predicate_from_raw(raw: &RawPredicate, path: &str) -> Result<Predicate> {
    let feature: Feature = raw
        .feature
        .parse()
        .map_err(|_| semantic(format!("{path}.feature"), format!("unknown feature `{}`", raw.feature)))?;
    let crisp = raw.op.is_some() || raw.threshold.is_some();
    let fuzzy = raw.ramp.is_some() || raw.a.is_some() || raw.b.is_some();
    let condition = match (crisp, fuzzy) {
        (true, true) => return Err(semantic(path, "mixes crisp (op/threshold) and fuzzy (ramp/a/b) keys")),
        (false, false) => return Err(semantic(path, "needs either op/threshold or ramp/a/b")),
        (true, false) => {
            let op_text = raw.op.as_deref().ok_or_else(|| semantic(format!("{path}.op"), "missing"))?;
            let op = Comparator::from_symbol(op_text)
                .ok_or_else(|| semantic(format!("{path}.op"), format!("unknown comparator `{op_text}`")))?;
            let threshold = raw.threshold.ok_or_else(|| semantic(format!("{path}.threshold"), "missing"))?;
            if !threshold.is_finite() {
                return Err(semantic(format!("{path}.threshold"), "must be finite"));
            }
            Condition::Crisp { op, threshold }
        }
        (false, true) => {
            let ramp = match raw.ramp.as_deref() {
                Some("ramp_up") => Ramp::Up,
                Some("ramp_down") => Ramp::Down,
                Some(other) => {
                    return Err(semantic(
                        format!("{path}.ramp"),
                        format!("expected `ramp_up` or `ramp_down`, got `{other}`"),
                    ))
                }
                None => return Err(semantic(format!("{path}.ramp"), "missing")),
            };
            let a = raw.a.ok_or_else(|| semantic(format!("{path}.a"), "missing"))?;
            let b = raw.b.ok_or_else(|| semantic(format!("{path}.b"), "missing"))?;
            if !(a.is_finite() && b.is_finite()) {
                return Err(semantic(path, "interval bounds must be finite"));
            }
            if a >= b {
                return Err(semantic(format!("{path}.a"), format!("a ≥ b in interval ({a}, {b})")));
            }
            Condition::Fuzzy(MembershipFunction { ramp, a, b })
        }
    };
    Ok(Predicate { feature, condition })
}

fn predicate_to_raw(p: &Predicate) -> RawPredicate {
    let feature = p.feature.name().to_string();
    match p.condition {
        Condition::Crisp { op, threshold } => RawPredicate {
            a: None,
            b: None,
            feature,
            op: Some(op.symbol().to_string()),
            ramp: None,
            threshold: Some(threshold),
        },
        Condition::Fuzzy(mf) => RawPredicate {
            a: Some(mf.a),
            b: Some(mf.b),
            feature,
            op: None,
            ramp: Some(match mf.ramp {
                Ramp::Up => "ramp_up".to_string(),
                Ramp::Down => "ramp_down".to_string(),
            }),
            threshold: None,
        },
    }
}

fn validate(raw: RawRuleSet) -> Result<RuleSet> {
    let mut finals = BTreeSet::new();
    for (i, c) in raw.classes.iter().enumerate() {
        if c.is_empty() || c == UNCLASSIFIED {
            return Err(semantic(format!("classes[{i}]"), format!("`{c}` cannot be an output class")));
        }
        if !finals.insert(c.as_str()) {
            return Err(semantic(format!("classes[{i}]"), format!("duplicate class `{c}`")));
        }
    }
    if !finals.contains(raw.final_class.as_str()) {
        return Err(semantic("final_class", format!("`{}` is not a declared class", raw.final_class)));
    }
    for (name, folds_to) in &raw.intermediate {
        if finals.contains(name.as_str()) || name == UNCLASSIFIED {
            return Err(semantic(format!("intermediate.{name}"), "clashes with an output class"));
        }
        if folds_to != UNCLASSIFIED && !finals.contains(folds_to.as_str()) {
            return Err(semantic(
                format!("intermediate.{name}"),
                format!("folds into undeclared class `{folds_to}`"),
            ));
        }
    }
    let declared = |c: &str| c == UNCLASSIFIED || finals.contains(c) || raw.intermediate.contains_key(c);

    let mut stages = Vec::with_capacity(raw.stages.len());
    for (si, s) in raw.stages.iter().enumerate() {
        let path = format!("stages[{si}]");
        if !(s.alpha > 0.0 && s.alpha <= 1.0) {
            return Err(semantic(format!("{path}.alpha"), format!("{} is outside (0, 1]", s.alpha)));
        }
        for (key, class) in [("source", &s.source), ("target", &s.target)] {
            if !declared(class) {
                return Err(semantic(format!("{path}.{key}"), format!("undeclared class `{class}`")));
            }
        }
        let predicates = s
            .predicates
            .iter()
            .enumerate()
            .map(|(pi, p)| predicate_from_raw(p, &format!("{path}.predicates[{pi}]")))
            .collect::<Result<Vec<_>>>()?;
        stages.push(Stage {
            name: s.name.clone(),
            source: s.source.clone(),
            target: s.target.clone(),
            predicates,
            alpha: s.alpha,
        });
    }
    Ok(RuleSet {
        classes: raw.classes,
        intermediate: raw.intermediate,
        stages,
        final_class: raw.final_class,
    })
}

pub fn parse_ruleset(text: &str) -> Result<RuleSet> {
    let raw: RawRuleSet = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        Error::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    validate(raw)
}

/// Canonical text form; `parse_ruleset` of the result yields an equal rule set.
pub fn serialize_ruleset(rules: &RuleSet) -> Result<String> {
    let raw = RawRuleSet {
        classes: rules.classes.clone(),
        final_class: rules.final_class.clone(),
        intermediate: rules.intermediate.clone(),
        stages: rules
            .stages
            .iter()
            .map(|s| RawStage {
                alpha: s.alpha,
                name: s.name.clone(),
                source: s.source.clone(),
                target: s.target.clone(),
                predicates: s.predicates.iter().map(predicate_to_raw).collect(),
            })
            .collect(),
    };
    toml::to_string(&raw).map_err(|e| Error::Serialize(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ruleset::builtin_qinhuai_ruleset;

    #[test]
    fn builtin_round_trips() {
        let rules = builtin_qinhuai_ruleset();
        let text = serialize_ruleset(&rules).unwrap();
        let back = parse_ruleset(&text).unwrap();
        assert_eq!(back, rules);
        assert_eq!(serialize_ruleset(&back).unwrap(), text);
    }

    fn minimal(predicate: &str) -> String {
        format!(
            "classes = [\"A\", \"B\"]\nfinal_class = \"B\"\n\n[[stages]]\nname = \"s\"\ntarget = \"A\"\n\n[[stages.predicates]]\n{predicate}\n"
        )
    }

    #[test]
    fn reversed_interval() {
        let err = parse_ruleset(&minimal("feature = \"ndvi\"\nramp = \"ramp_up\"\na = 0.22\nb = 0.16")).unwrap_err();
        match err {
            Error::Semantic { field, reason } => {
                assert_eq!(field, "stages[0].predicates[0].a");
                assert!(reason.contains("a ≥ b"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_feature() {
        let err = parse_ruleset(&minimal("feature = \"NDBI\"\nop = \">\"\nthreshold = 0.1")).unwrap_err();
        match err {
            Error::Semantic { field, reason } => {
                assert_eq!(field, "stages[0].predicates[0].feature");
                assert!(reason.contains("unknown feature"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn alpha_out_of_range() {
        let text = minimal("feature = \"ndvi\"\nop = \">\"\nthreshold = 0.1").replace("name = \"s\"", "name = \"s\"\nalpha = 0.0");
        assert!(matches!(parse_ruleset(&text), Err(Error::Semantic { field, .. }) if field == "stages[0].alpha"));
    }

    #[test]
    fn syntax_error_has_location() {
        let err = parse_ruleset("classes = [\"A\"]\nfinal_class = \n").unwrap_err();
        match err {
            Error::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn undeclared_target() {
        let text = minimal("feature = \"ndvi\"\nop = \">\"\nthreshold = 0.1").replace("target = \"A\"", "target = \"C\"");
        assert!(matches!(parse_ruleset(&text), Err(Error::Semantic { field, .. }) if field == "stages[0].target"));
    }

    #[test]
    fn mixed_predicate_rejected() {
        let err = parse_ruleset(&minimal("feature = \"ndvi\"\nop = \">\"\nthreshold = 0.1\nramp = \"ramp_up\"")).unwrap_err();
        assert!(matches!(err, Error::Semantic { .. }));
    }
}
