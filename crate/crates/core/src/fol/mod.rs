//! Function-free first-order logic in prenex form.
//!
//! A [`KnowledgeBase`] is a predicate signature plus a list of universally
//! quantified formulas. Atoms refer to predicates by their index in the
//! signature, so a formula is only meaningful next to the signature that
//! produced it.

mod parse;

use std::collections::BTreeSet;
use std::fmt;

pub use parse::{parse_kb, ParseError, ParseErrorKind};

/// Index of a predicate in a [`KnowledgeBase`] signature.
pub type PredId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PredicateSig {
    pub name: String,
    pub arity: usize,
    /// Mutual-exclusivity group; members share one softmax head.
    pub group: Option<String>,
}

impl PredicateSig {
    pub fn new(name: impl Into<String>, arity: usize) -> Self {
        PredicateSig {
            name: name.into(),
            arity,
            group: None,
        }
    }

    pub fn grouped(name: impl Into<String>, group: impl Into<String>) -> Self {
        PredicateSig {
            name: name.into(),
            arity: 1,
            group: Some(group.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Var(String),
    /// Object index within a scene.
    Const(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    Atom { pred: PredId, args: Vec<Term> },
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Forall(Vec<String>, Box<Formula>),
}

impl Formula {
    pub fn atom<S: AsRef<str>>(pred: PredId, vars: &[S]) -> Formula {
        Formula::Atom {
            pred,
            args: vars.iter().map(|v| Term::Var(v.as_ref().to_string())).collect(),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn forall<S: AsRef<str>>(vars: &[S], body: Formula) -> Formula {
        Formula::Forall(
            vars.iter().map(|v| v.as_ref().to_string()).collect(),
            Box::new(body),
        )
    }

    /// Splits off the quantifier prefix. A formula without a leading
    /// `Forall` has an empty prefix.
    pub fn prefix(&self) -> (&[String], &Formula) {
        match self {
            Formula::Forall(vars, body) => (vars, body),
            other => (&[], other),
        }
    }

    /// Number of quantified variables.
    pub fn arity(&self) -> usize {
        self.prefix().0.len()
    }

    pub fn children(&self) -> Vec<&Formula> {
        match self {
            Formula::Atom { .. } => vec![],
            Formula::Not(a) | Formula::Forall(_, a) => vec![a],
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => vec![a, b],
        }
    }

    /// Visits every atom, left to right.
    pub fn for_each_atom<'a>(&'a self, f: &mut impl FnMut(PredId, &'a [Term])) {
        match self {
            Formula::Atom { pred, args } => f(*pred, args),
            _ => {
                for c in self.children() {
                    c.for_each_atom(f);
                }
            }
        }
    }

    /// Number of nodes in the tree, counting the quantifier node if present.
    pub fn size(&self) -> usize {
        1 + self.children().into_iter().map(Formula::size).sum::<usize>()
    }

    fn free_variables(&self, out: &mut BTreeSet<String>) {
        self.for_each_atom(&mut |_, args| {
            for t in args {
                if let Term::Var(v) = t {
                    out.insert(v.clone());
                }
            }
        });
    }

    fn contains_forall(&self) -> bool {
        matches!(self, Formula::Forall(..)) || self.children().iter().any(|c| c.contains_forall())
    }
}

/// Returns antecedent and consequent when the quantifier body is a single
/// implication.
pub fn decompose_implication(f: &Formula) -> Option<(&Formula, &Formula)> {
    match f.prefix().1 {
        Formula::Implies(a, c) => Some((a, c)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    InvalidArity { pred: String },
    DuplicatePredicate { name: String },
    GroupArity { pred: String, group: String },
    NonPrenex { formula: usize },
    DuplicateVariable { formula: usize, var: String },
    EmptyVariableName { formula: usize },
    UndeclaredPredicate { formula: usize, pred: PredId },
    ArityMismatch { formula: usize, pred: String, expected: usize, found: usize },
    UnboundVariable { formula: usize, var: String },
    UnusedVariable { formula: usize, var: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidArity { pred } => write!(f, "predicate {pred} has arity 0"),
            Violation::DuplicatePredicate { name } => write!(f, "predicate {name} declared twice"),
            Violation::GroupArity { pred, group } => {
                write!(f, "predicate {pred} in group @{group} must be unary")
            }
            Violation::NonPrenex { formula } => {
                write!(f, "formula {formula}: quantifier inside the body (not prenex)")
            }
            Violation::DuplicateVariable { formula, var } => {
                write!(f, "formula {formula}: variable {var} quantified twice")
            }
            Violation::EmptyVariableName { formula } => {
                write!(f, "formula {formula}: empty variable name")
            }
            Violation::UndeclaredPredicate { formula, pred } => {
                write!(f, "formula {formula}: undeclared predicate #{pred}")
            }
            Violation::ArityMismatch { formula, pred, expected, found } => write!(
                f,
                "formula {formula}: {pred} expects {expected} argument(s), got {found}"
            ),
            Violation::UnboundVariable { formula, var } => {
                write!(f, "formula {formula}: unbound variable {var}")
            }
            Violation::UnusedVariable { formula, var } => {
                write!(f, "formula {formula}: quantified variable {var} is never used")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KnowledgeBase {
    pub signature: Vec<PredicateSig>,
    pub formulas: Vec<Formula>,
}

impl KnowledgeBase {
    pub fn new(signature: Vec<PredicateSig>, formulas: Vec<Formula>) -> Self {
        KnowledgeBase { signature, formulas }
    }

    pub fn pred_id(&self, name: &str) -> Option<PredId> {
        self.signature.iter().position(|p| p.name == name)
    }

    pub fn is_implication(&self, formula: usize) -> bool {
        decompose_implication(&self.formulas[formula]).is_some()
    }

    /// Indices of formulas whose body is an implication.
    pub fn implications(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.formulas.len()).filter(|&i| self.is_implication(i))
    }

    /// Distinct group names in declaration order, with their member ids.
    pub fn groups(&self) -> Vec<(String, Vec<PredId>)> {
        let mut out: Vec<(String, Vec<PredId>)> = Vec::new();
        for (id, p) in self.signature.iter().enumerate() {
            if let Some(g) = &p.group {
                match out.iter_mut().find(|(name, _)| name == g) {
                    Some((_, members)) => members.push(id),
                    None => out.push((g.clone(), vec![id])),
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for p in &self.signature {
            if p.arity == 0 {
                out.push(Violation::InvalidArity { pred: p.name.clone() });
            }
            if !seen.insert(p.name.as_str()) {
                out.push(Violation::DuplicatePredicate { name: p.name.clone() });
            }
            if let Some(g) = &p.group {
                if p.arity != 1 {
                    out.push(Violation::GroupArity {
                        pred: p.name.clone(),
                        group: g.clone(),
                    });
                }
            }
        }
        for (i, f) in self.formulas.iter().enumerate() {
            self.validate_formula(i, f, &mut out);
        }
        out
    }

    fn validate_formula(&self, index: usize, f: &Formula, out: &mut Vec<Violation>) {
        let (vars, body) = f.prefix();
        if body.contains_forall() {
            out.push(Violation::NonPrenex { formula: index });
        }
        let mut bound = BTreeSet::new();
        for v in vars {
            if v.is_empty() {
                out.push(Violation::EmptyVariableName { formula: index });
            }
            if !bound.insert(v.clone()) {
                out.push(Violation::DuplicateVariable {
                    formula: index,
                    var: v.clone(),
                });
            }
        }
        body.for_each_atom(&mut |pred, args| match self.signature.get(pred) {
            None => out.push(Violation::UndeclaredPredicate { formula: index, pred }),
            Some(sig) if sig.arity != args.len() => out.push(Violation::ArityMismatch {
                formula: index,
                pred: sig.name.clone(),
                expected: sig.arity,
                found: args.len(),
            }),
            Some(_) => {}
        });
        let mut used = BTreeSet::new();
        body.free_variables(&mut used);
        for v in used.difference(&bound) {
            if v.is_empty() {
                out.push(Violation::EmptyVariableName { formula: index });
            } else {
                out.push(Violation::UnboundVariable {
                    formula: index,
                    var: v.clone(),
                });
            }
        }
        for v in bound.difference(&used) {
            out.push(Violation::UnusedVariable {
                formula: index,
                var: v.clone(),
            });
        }
    }

    /// Renders a formula in the concrete KB syntax.
    pub fn show<'a>(&'a self, f: &'a Formula) -> impl fmt::Display + 'a {
        Shown { kb: self, f }
    }
}

impl fmt::Display for KnowledgeBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.signature {
            write!(f, "pred {}/{}", p.name, p.arity)?;
            if let Some(g) = &p.group {
                write!(f, " @{g}")?;
            }
            writeln!(f, ";")?;
        }
        for formula in &self.formulas {
            writeln!(f, "{}", self.show(formula))?;
        }
        Ok(())
    }
}

struct Shown<'a> {
    kb: &'a KnowledgeBase,
    f: &'a Formula,
}

// Binding strength, loosest first.
fn precedence(f: &Formula) -> u8 {
    match f {
        Formula::Forall(..) => 0,
        Formula::Implies(..) => 1,
        Formula::Or(..) => 2,
        Formula::And(..) => 3,
        Formula::Not(_) => 4,
        Formula::Atom { .. } => 5,
    }
}

impl Shown<'_> {
    fn write(&self, f: &Formula, min: u8, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        if precedence(f) < min {
            write!(out, "(")?;
            self.write(f, 0, out)?;
            return write!(out, ")");
        }
        match f {
            Formula::Atom { pred, args } => {
                match self.kb.signature.get(*pred) {
                    Some(sig) => write!(out, "{}", sig.name)?,
                    None => write!(out, "?{pred}")?,
                }
                write!(out, "(")?;
                for (i, t) in args.iter().enumerate() {
                    if i > 0 {
                        write!(out, ",")?;
                    }
                    match t {
                        Term::Var(v) => write!(out, "{v}")?,
                        Term::Const(c) => write!(out, "${c}")?,
                    }
                }
                write!(out, ")")
            }
            Formula::Not(a) => {
                write!(out, "~")?;
                self.write(a, 4, out)
            }
            Formula::And(a, b) => {
                self.write(a, 3, out)?;
                write!(out, " & ")?;
                self.write(b, 4, out)
            }
            Formula::Or(a, b) => {
                self.write(a, 2, out)?;
                write!(out, " | ")?;
                self.write(b, 3, out)
            }
            Formula::Implies(a, b) => {
                self.write(a, 2, out)?;
                write!(out, " -> ")?;
                self.write(b, 1, out)
            }
            Formula::Forall(vars, body) => {
                write!(out, "forall {}: ", vars.join(","))?;
                self.write(body, 1, out)
            }
        }
    }
}

impl fmt::Display for Shown<'_> {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.f, 0, out)
    }
}
