use diffreason::fol::{decompose_implication, parse_kb, Formula, KnowledgeBase, ParseErrorKind, PredicateSig, Violation};
use proptest::prelude::*;

const CHAIR: &str = "pred chair/1 @types; pred partOf/2; pred cushion/1 @types; pred armRest/1 @types; \
                     forall x,y: chair(x) & partOf(y,x) -> cushion(y) | armRest(y)";

fn atom(kb: &KnowledgeBase, name: &str, vars: &[&str]) -> Formula {
    Formula::atom(kb.pred_id(name).unwrap(), vars)
}

#[test]
fn chair_rule_parses_to_one_implication() {
    let kb = parse_kb(CHAIR).unwrap();
    assert_eq!(kb.signature.len(), 4);
    assert_eq!(kb.signature[0], PredicateSig::grouped("chair", "types"));
    assert_eq!(kb.signature[1], PredicateSig::new("partOf", 2));
    assert_eq!(kb.formulas.len(), 1);
    let expected = Formula::forall(
        &["x", "y"],
        Formula::implies(
            Formula::and(atom(&kb, "chair", &["x"]), atom(&kb, "partOf", &["y", "x"])),
            Formula::or(atom(&kb, "cushion", &["y"]), atom(&kb, "armRest", &["y"])),
        ),
    );
    assert_eq!(kb.formulas[0], expected);
    assert!(kb.is_implication(0));
    assert!(kb.validate().is_empty());
}

#[test]
fn negated_rule_parses_to_not_root() {
    let kb = parse_kb("pred partOf/2; forall x: ~partOf(x,x)").unwrap();
    let (vars, body) = kb.formulas[0].prefix();
    assert_eq!(vars, ["x".to_string()]);
    assert!(matches!(body, Formula::Not(_)));
    assert!(!kb.is_implication(0));
}

#[test]
fn unbound_variable_is_named() {
    let err = parse_kb("pred p/1; forall x: p(y)").unwrap_err();
    assert_eq!(err.kind, ParseErrorKind::UnboundVariable("y".into()));
}

#[test]
fn parse_errors_carry_positions() {
    let err = parse_kb("pred p/1;\nforall x: p(x) &").unwrap_err();
    assert_eq!(err.line, 2);
    assert!(matches!(err.kind, ParseErrorKind::Syntax(_)));
    let err = parse_kb("pred p/1; forall x: q(x)").unwrap_err();
    assert_eq!(err.kind, ParseErrorKind::UndeclaredPredicate("q".into()));
    let err = parse_kb("pred p/1; forall x, y: p(x, y)").unwrap_err();
    assert!(matches!(err.kind, ParseErrorKind::ArityMismatch { expected: 1, found: 2, .. }));
}

#[test]
fn precedence_and_associativity() {
    let kb = parse_kb("pred a/1; pred b/1; pred c/1; forall x: ~a(x) & b(x) | c(x) -> a(x) -> b(x)").unwrap();
    let a = atom(&kb, "a", &["x"]);
    let b = atom(&kb, "b", &["x"]);
    let c = atom(&kb, "c", &["x"]);
    let expected = Formula::forall(
        &["x"],
        Formula::implies(
            Formula::or(Formula::and(Formula::not(a.clone()), b.clone()), c),
            Formula::implies(a, b),
        ),
    );
    assert_eq!(kb.formulas[0], expected);
}

#[test]
fn conjunctions_associate_left() {
    let kb = parse_kb("pred a/1; pred b/1; pred c/1; forall x: a(x) & b(x) & c(x)").unwrap();
    let (_, body) = kb.formulas[0].prefix();
    match body {
        Formula::And(left, _) => assert!(matches!(**left, Formula::And(_, _))),
        other => panic!("expected And, got {other:?}"),
    }
}

#[test]
fn comments_and_optional_semicolons() {
    let kb = parse_kb("# header\npred p/1 # trailing\npred q/1;\nforall x: p(x) -> q(x) # rule\n").unwrap();
    assert_eq!(kb.signature.len(), 2);
    assert_eq!(kb.formulas.len(), 1);
}

#[test]
fn bundled_rules_validate() {
    let kb = parse_kb(include_str!("../data/furniture.kb")).unwrap();
    assert!(kb.validate().is_empty());
    assert_eq!(kb.groups().len(), 1);
    assert_eq!(kb.groups()[0].1.len(), 11);
}

#[test]
fn validate_flags_nested_quantifier() {
    let sig = vec![PredicateSig::new("p", 1)];
    let inner = Formula::forall(&["y"], Formula::atom(0, &["y"]));
    let f = Formula::forall(&["x"], Formula::and(Formula::atom(0, &["x"]), inner));
    let kb = KnowledgeBase::new(sig, vec![f]);
    assert!(kb.validate().contains(&Violation::NonPrenex { formula: 0 }));
}

#[test]
fn validate_flags_arity_mismatch() {
    let sig = vec![PredicateSig::new("chair", 1)];
    let kb = KnowledgeBase::new(sig, vec![Formula::forall(&["x", "y"], Formula::atom(0, &["x", "y"]))]);
    assert_eq!(
        kb.validate(),
        vec![Violation::ArityMismatch {
            formula: 0,
            pred: "chair".into(),
            expected: 1,
            found: 2
        }]
    );
}

#[test]
fn validate_flags_signature_problems() {
    let sig = vec![
        PredicateSig::new("p", 0),
        PredicateSig::new("q", 1),
        PredicateSig::new("q", 1),
        PredicateSig { name: "r".into(), arity: 2, group: Some("g".into()) },
    ];
    let v = KnowledgeBase::new(sig, vec![]).validate();
    assert!(v.contains(&Violation::InvalidArity { pred: "p".into() }));
    assert!(v.contains(&Violation::DuplicatePredicate { name: "q".into() }));
    assert!(v.contains(&Violation::GroupArity { pred: "r".into(), group: "g".into() }));
}

#[test]
fn validate_flags_unbound_and_unused_variables() {
    let sig = vec![PredicateSig::new("p", 1)];
    let kb = KnowledgeBase::new(
        sig,
        vec![
            Formula::forall(&["x"], Formula::atom(0, &["y"])),
            Formula::forall(&["x", "z"], Formula::atom(0, &["x"])),
        ],
    );
    let v = kb.validate();
    assert!(v.contains(&Violation::UnboundVariable { formula: 0, var: "y".into() }));
    assert!(v.contains(&Violation::UnusedVariable { formula: 1, var: "z".into() }));
}

#[test]
fn decompose_chair_rule() {
    let kb = parse_kb(CHAIR).unwrap();
    let (ante, cons) = decompose_implication(&kb.formulas[0]).unwrap();
    assert_eq!(
        *ante,
        Formula::and(atom(&kb, "chair", &["x"]), atom(&kb, "partOf", &["y", "x"]))
    );
    assert_eq!(*cons, Formula::or(atom(&kb, "cushion", &["y"]), atom(&kb, "armRest", &["y"])));
}

#[test]
fn decompose_asymmetry_rule() {
    let kb = parse_kb("pred partOf/2; forall x: ~partOf(x,x); forall x,y: partOf(x,y) -> ~partOf(y,x)").unwrap();
    assert!(decompose_implication(&kb.formulas[0]).is_none());
    let (ante, cons) = decompose_implication(&kb.formulas[1]).unwrap();
    assert_eq!(*ante, atom(&kb, "partOf", &["x", "y"]));
    assert_eq!(*cons, Formula::not(atom(&kb, "partOf", &["y", "x"])));
}

// Random well-formed bodies over p/1, q/1, r/2 and variables x, y.
fn body() -> impl Strategy<Value = Formula> {
    let leaf = prop_oneof![
        prop::sample::select(vec!["x", "y"]).prop_map(|v| Formula::atom(0, &[v])),
        prop::sample::select(vec!["x", "y"]).prop_map(|v| Formula::atom(1, &[v])),
        (prop::sample::select(vec!["x", "y"]), prop::sample::select(vec!["x", "y"]))
            .prop_map(|(a, b)| Formula::atom(2, &[a, b])),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(Formula::not),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::or(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| Formula::implies(a, b)),
        ]
    })
}

fn kb_of(bodies: Vec<Formula>) -> KnowledgeBase {
    let sig = vec![
        PredicateSig::grouped("p", "t"),
        PredicateSig::grouped("q", "t"),
        PredicateSig::new("r", 2),
    ];
    let formulas = bodies
        .into_iter()
        .map(|b| {
            let mut used = Vec::new();
            b.for_each_atom(&mut |_, args| {
                for t in args {
                    if let diffreason::fol::Term::Var(v) = t {
                        if !used.contains(v) {
                            used.push(v.clone());
                        }
                    }
                }
            });
            used.sort();
            Formula::forall(&used, b)
        })
        .collect();
    KnowledgeBase::new(sig, formulas)
}

proptest! {
    #[test]
    fn print_parse_round_trip(bodies in prop::collection::vec(body(), 1..4)) {
        let kb = kb_of(bodies);
        prop_assert!(kb.validate().is_empty());
        let text = kb.to_string();
        let back = parse_kb(&text).unwrap();
        prop_assert_eq!(&back, &kb);
        prop_assert!(back.validate().is_empty());
        prop_assert_eq!(back.to_string(), text);
    }

    #[test]
    fn decompose_matches_flag(bodies in prop::collection::vec(body(), 1..4)) {
        let kb = kb_of(bodies);
        for i in 0..kb.formulas.len() {
            prop_assert_eq!(decompose_implication(&kb.formulas[i]).is_some(), kb.is_implication(i));
            let (_, b) = kb.formulas[i].prefix();
            prop_assert_eq!(kb.is_implication(i), matches!(b, Formula::Implies(_, _)));
        }
    }
}
