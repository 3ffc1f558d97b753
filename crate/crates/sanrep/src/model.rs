//! Atomic model definition: places, activities with cases, and validation.

use crate::expr::{typecheck, Expr, ExprRole, PlaceRef, Span};
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaceKind {
    Scalar,
    Array(u32),
}

impl PlaceKind {
    pub fn entries(&self) -> u32 {
        match self {
            PlaceKind::Scalar => 1,
            PlaceKind::Array(len) => *len,
        }
    }

    pub fn is_array(&self) -> bool {
        matches!(self, PlaceKind::Array(_))
    }
}

/// Initial marking of a place: one expression for every entry, or one
/// expression per array entry.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Uniform(Expr),
    PerEntry(Vec<Expr>),
}

impl InitialSpec {
    pub fn entry(&self, idx: u32) -> &Expr {
        match self {
            InitialSpec::Uniform(e) => e,
            InitialSpec::PerEntry(es) => &es[idx as usize],
        }
    }

    fn exprs(&self) -> impl Iterator<Item = &Expr> {
        match self {
            InitialSpec::Uniform(e) => std::slice::from_ref(e).iter(),
            InitialSpec::PerEntry(es) => es.iter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceDecl {
    pub name: String,
    pub kind: PlaceKind,
    pub initial: InitialSpec,
    pub span: Span,
}

impl PlaceDecl {
    pub fn scalar(name: &str, initial: Expr) -> Self {
        Self {
            name: name.to_string(),
            kind: PlaceKind::Scalar,
            initial: InitialSpec::Uniform(initial),
            span: Span::default(),
        }
    }

    pub fn array(name: &str, len: u32, initial: Expr) -> Self {
        Self {
            name: name.to_string(),
            kind: PlaceKind::Array(len),
            initial: InitialSpec::Uniform(initial),
            span: Span::default(),
        }
    }
}

/// Activity timing. Timed activities draw a firing delay when they become
/// enabled; instantaneous activities fire immediately, highest priority
/// first, with weights resolving ties at equal priority.
#[derive(Debug, Clone, PartialEq)]
pub enum Timing {
    Exponential { rate: Expr },
    Deterministic { delay: Expr },
    Instantaneous { weight: Expr, priority: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStmt {
    pub target: PlaceRef,
    pub value: Expr,
    pub span: Span,
}

impl UpdateStmt {
    pub fn new(target_place: &str, target_index: Option<Expr>, value: Expr) -> Self {
        Self {
            target: PlaceRef { name: target_place.to_string(), index: target_index.map(Box::new) },
            value,
            span: Span::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseDecl {
    pub weight: Expr,
    pub updates: Vec<UpdateStmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivityDecl {
    pub name: String,
    pub timing: Timing,
    pub enabling: Expr,
    pub cases: Vec<CaseDecl>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomicModel {
    pub name: String,
    pub places: Vec<PlaceDecl>,
    pub activities: Vec<ActivityDecl>,
}

impl AtomicModel {
    pub fn new(name: &str) -> Self {
        Self { name: name.to_string(), places: Vec::new(), activities: Vec::new() }
    }

    pub fn with_place(mut self, place: PlaceDecl) -> Self {
        self.places.push(place);
        self
    }

    pub fn with_activity(mut self, activity: ActivityDecl) -> Self {
        self.activities.push(activity);
        self
    }

    pub fn place(&self, name: &str) -> Option<&PlaceDecl> {
        self.places.iter().find(|p| p.name == name)
    }

    pub fn into_node(self) -> crate::compose::CompositionNode {
        crate::compose::CompositionNode::Atomic(Arc::new(self))
    }
}

/// Validation rule identifiers, printed in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleId {
    DuplicatePlace,
    DuplicateActivity,
    UnknownPlace,
    NonpositiveRate,
    NegativeWeight,
    NoCases,
    BadArrayLength,
    BadInitializerArity,
    TypeError,
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RuleId::DuplicatePlace => "DUPLICATE_PLACE",
            RuleId::DuplicateActivity => "DUPLICATE_ACTIVITY",
            RuleId::UnknownPlace => "UNKNOWN_PLACE",
            RuleId::NonpositiveRate => "NONPOSITIVE_RATE",
            RuleId::NegativeWeight => "NEGATIVE_WEIGHT",
            RuleId::NoCases => "NO_CASES",
            RuleId::BadArrayLength => "BAD_ARRAY_LENGTH",
            RuleId::BadInitializerArity => "BAD_INITIALIZER_ARITY",
            RuleId::TypeError => "TYPE_ERROR",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub rule: RuleId,
    pub message: String,
    pub span: Span,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.span, self.rule, self.message)
    }
}

/// Fold-without-context check for rates and weights that are plainly
/// constant; non-constant expressions are validated at runtime instead.
fn constant_value(e: &Expr) -> Option<f64> {
    // Fold with neutral bindings; reject anything that used them.
    use crate::expr::try_fold;
    let a = try_fold(e, 0, 1)?;
    let b = try_fold(e, 1, 2)?;
    if a != b {
        return None;
    }
    a.as_real().ok()
}

/// Validate an atomic model. An empty result means the model is well-formed
/// in isolation; sharing-related rules are checked when the composition is
/// flattened. Diagnostics are sorted by source position.
pub fn validate(model: &AtomicModel) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut push = |rule: RuleId, span: Span, message: String| {
        diags.push(Diagnostic { rule, message, span });
    };

    let mut seen = std::collections::BTreeSet::new();
    for place in &model.places {
        if !seen.insert(place.name.clone()) {
            push(
                RuleId::DuplicatePlace,
                place.span,
                format!("place `{}` declared more than once", place.name),
            );
        }
        if let PlaceKind::Array(0) = place.kind {
            push(
                RuleId::BadArrayLength,
                place.span,
                format!("array place `{}` must have length >= 1", place.name),
            );
        }
        if let InitialSpec::PerEntry(es) = &place.initial {
            if es.len() as u32 != place.kind.entries() {
                push(
                    RuleId::BadInitializerArity,
                    place.span,
                    format!(
                        "place `{}` has {} entries but {} initializers",
                        place.name,
                        place.kind.entries(),
                        es.len()
                    ),
                );
            }
        }
        for e in place.initial.exprs() {
            if let Err(err) = typecheck(e, &lookup(model), ExprRole::Initial) {
                push(RuleId::TypeError, err.span, err.message);
            }
        }
    }

    let mut seen_activities = std::collections::BTreeSet::new();
    for activity in &model.activities {
        if !seen_activities.insert(activity.name.clone()) {
            push(
                RuleId::DuplicateActivity,
                activity.span,
                format!("activity `{}` declared more than once", activity.name),
            );
        }
        if activity.cases.is_empty() {
            push(
                RuleId::NoCases,
                activity.span,
                format!("activity `{}` has no cases", activity.name),
            );
        }
        if let Err(err) = typecheck(&activity.enabling, &lookup(model), ExprRole::Predicate) {
            push(RuleId::TypeError, err.span, err.message);
        }
        match &activity.timing {
            Timing::Exponential { rate } | Timing::Deterministic { delay: rate } => {
                if let Err(err) = typecheck(rate, &lookup(model), ExprRole::Rate) {
                    push(RuleId::TypeError, err.span, err.message);
                } else if let Some(v) = constant_value(rate) {
                    if v <= 0.0 {
                        push(
                            RuleId::NonpositiveRate,
                            activity.span,
                            format!(
                                "activity `{}` has constant non-positive rate {v}",
                                activity.name
                            ),
                        );
                    }
                }
            }
            Timing::Instantaneous { weight, .. } => {
                if let Err(err) = typecheck(weight, &lookup(model), ExprRole::Weight) {
                    push(RuleId::TypeError, err.span, err.message);
                } else if let Some(v) = constant_value(weight) {
                    if v < 0.0 {
                        push(
                            RuleId::NegativeWeight,
                            activity.span,
                            format!(
                                "activity `{}` has constant negative weight {v}",
                                activity.name
                            ),
                        );
                    }
                }
            }
        }
        for case in &activity.cases {
            if let Err(err) = typecheck(&case.weight, &lookup(model), ExprRole::Weight) {
                push(RuleId::TypeError, err.span, err.message);
            } else if let Some(v) = constant_value(&case.weight) {
                if v < 0.0 {
                    push(
                        RuleId::NegativeWeight,
                        activity.span,
                        format!("case weight of `{}` is constant negative {v}", activity.name),
                    );
                }
            }
            for update in &case.updates {
                if lookup(model)(&update.target.name).is_none() {
                    push(
                        RuleId::UnknownPlace,
                        update.span,
                        format!("update targets unknown place `{}`", update.target.name),
                    );
                    continue;
                }
                if let Some(idx) = &update.target.index {
                    if let Err(err) = typecheck(idx, &lookup(model), ExprRole::Index) {
                        push(RuleId::TypeError, err.span, err.message);
                    }
                }
                if let Err(err) = typecheck(&update.value, &lookup(model), ExprRole::UpdateValue) {
                    push(RuleId::TypeError, err.span, err.message);
                }
            }
        }
    }

    diags.sort_by_key(|d| (d.span.line, d.span.col, format!("{}", d.rule)));
    diags
}

fn lookup(model: &AtomicModel) -> impl Fn(&str) -> Option<bool> + '_ {
    move |name: &str| model.place(name).map(|p| p.kind.is_array())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn timed(name: &str, rate: &str, enabling: &str, updates: Vec<UpdateStmt>) -> ActivityDecl {
        ActivityDecl {
            name: name.to_string(),
            timing: Timing::Exponential { rate: parse(rate).unwrap() },
            enabling: parse(enabling).unwrap(),
            cases: vec![CaseDecl { weight: Expr::int(1), updates }],
            span: Span::default(),
        }
    }

    fn mm1() -> AtomicModel {
        AtomicModel::new("mm1")
            .with_place(PlaceDecl::scalar("Queue", Expr::int(0)))
            .with_activity(timed(
                "arrive",
                "0.5",
                "true",
                vec![UpdateStmt::new("Queue", None, parse("Queue + 1").unwrap())],
            ))
            .with_activity(timed(
                "serve",
                "1.0",
                "Queue > 0",
                vec![UpdateStmt::new("Queue", None, parse("Queue - 1").unwrap())],
            ))
    }

    #[test]
    fn well_formed_mm1_has_no_diagnostics() {
        assert_eq!(validate(&mm1()), vec![]);
    }

    #[test]
    fn duplicate_place_is_reported() {
        let m = mm1().with_place(PlaceDecl::scalar("Queue", Expr::int(1)));
        let diags = validate(&m);
        assert!(diags.iter().any(|d| d.rule == RuleId::DuplicatePlace));
    }

    #[test]
    fn constant_negative_rate_is_reported() {
        let mut activity = timed("a", "-1", "true", vec![]);
        activity.cases.clear();
        let m = AtomicModel::new("bad")
            .with_place(PlaceDecl::scalar("P", Expr::int(0)))
            .with_activity(activity);
        let diags = validate(&m);
        assert!(diags.iter().any(|d| d.rule == RuleId::NonpositiveRate));
        assert!(diags.iter().any(|d| d.rule == RuleId::NoCases));
    }

    #[test]
    fn unknown_update_target_is_reported() {
        let m =
            AtomicModel::new("bad").with_place(PlaceDecl::scalar("P", Expr::int(0))).with_activity(
                timed("a", "1", "true", vec![UpdateStmt::new("Missing", None, Expr::int(1))]),
            );
        assert!(validate(&m).iter().any(|d| d.rule == RuleId::UnknownPlace));
    }

    #[test]
    fn diagnostics_are_order_stable() {
        let m = mm1().with_place(PlaceDecl::scalar("Queue", Expr::int(1)));
        assert_eq!(validate(&m), validate(&m));
    }
}
