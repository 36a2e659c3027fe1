//! Parser for the knowledge-base text format.
//!
//! ```text
//! file    := (decl | rule | comment)*
//! decl    := "pred" IDENT "/" INT ("@" IDENT)? ";"?
//! rule    := "forall" IDENT ("," IDENT)* ":" expr ";"?
//! expr    := disj ("->" expr)?
//! disj    := conj ("|" conj)*
//! conj    := unary ("&" unary)*
//! unary   := "~" unary | atom | "(" expr ")"
//! atom    := IDENT "(" IDENT ("," IDENT)* ")"
//! comment := "#" to end of line
//! ```
//!
//! Predicates must be declared before their first use.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use super::{Formula, KnowledgeBase, PredicateSig, Term};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    UndeclaredPredicate(String),
    ArityMismatch { pred: String, expected: usize, found: usize },
    UnboundVariable(String),
    UnusedVariable(String),
    DuplicateVariable(String),
    DuplicatePredicate(String),
    InvalidArity(String),
    GroupArity(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Syntax(msg) => write!(f, "syntax error: {msg}"),
            ParseErrorKind::UndeclaredPredicate(p) => write!(f, "undeclared predicate {p}"),
            ParseErrorKind::ArityMismatch { pred, expected, found } => {
                write!(f, "{pred} expects {expected} argument(s), got {found}")
            }
            ParseErrorKind::UnboundVariable(v) => write!(f, "unbound variable {v}"),
            ParseErrorKind::UnusedVariable(v) => {
                write!(f, "quantified variable {v} is never used")
            }
            ParseErrorKind::DuplicateVariable(v) => write!(f, "variable {v} quantified twice"),
            ParseErrorKind::DuplicatePredicate(p) => write!(f, "predicate {p} declared twice"),
            ParseErrorKind::InvalidArity(p) => write!(f, "predicate {p} must have arity >= 1"),
            ParseErrorKind::GroupArity(p) => write!(f, "grouped predicate {p} must be unary"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(usize),
    Slash,
    At,
    Semi,
    Comma,
    Colon,
    LParen,
    RParen,
    Tilde,
    Amp,
    Pipe,
    Arrow,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "'{s}'"),
            Tok::Int(n) => write!(f, "'{n}'"),
            Tok::Slash => write!(f, "'/'"),
            Tok::At => write!(f, "'@'"),
            Tok::Semi => write!(f, "';'"),
            Tok::Comma => write!(f, "','"),
            Tok::Colon => write!(f, "':'"),
            Tok::LParen => write!(f, "'('"),
            Tok::RParen => write!(f, "')'"),
            Tok::Tilde => write!(f, "'~'"),
            Tok::Amp => write!(f, "'&'"),
            Tok::Pipe => write!(f, "'|'"),
            Tok::Arrow => write!(f, "'->'"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> ParseError {
    ParseError {
        line,
        col,
        kind: ParseErrorKind::Syntax(msg.into()),
    }
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (l, cl) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push(Spanned {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: l,
                col: cl,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            col += i - start;
            let text: String = chars[start..i].iter().collect();
            let n = text
                .parse()
                .map_err(|_| syntax(l, cl, format!("integer {text} out of range")))?;
            out.push(Spanned {
                tok: Tok::Int(n),
                line: l,
                col: cl,
            });
            continue;
        }
        let tok = match c {
            '/' => Tok::Slash,
            '@' => Tok::At,
            ';' => Tok::Semi,
            ',' => Tok::Comma,
            ':' => Tok::Colon,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '~' => Tok::Tilde,
            '&' => Tok::Amp,
            '|' => Tok::Pipe,
            '-' if chars.get(i + 1) == Some(&'>') => {
                i += 1;
                col += 1;
                Tok::Arrow
            }
            other => return Err(syntax(l, cl, format!("unexpected character '{other}'"))),
        };
        i += 1;
        col += 1;
        out.push(Spanned { tok, line: l, col: cl });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    kb: KnowledgeBase,
    by_name: HashMap<String, usize>,
    // Variables of the rule being parsed, and the ones seen so far.
    bound: Vec<String>,
    used: BTreeSet<String>,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<Spanned, ParseError> {
        if self.peek().tok == want {
            Ok(self.bump())
        } else {
            let t = self.peek();
            Err(syntax(t.line, t.col, format!("expected {want}, found {}", t.tok)))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Spanned), ParseError> {
        match &self.peek().tok {
            Tok::Ident(s) => {
                let s = s.clone();
                Ok((s, self.bump()))
            }
            other => {
                let t = self.peek();
                Err(syntax(t.line, t.col, format!("expected {what}, found {other}")))
            }
        }
    }

    fn file(mut self) -> Result<KnowledgeBase, ParseError> {
        loop {
            match &self.peek().tok {
                Tok::Eof => return Ok(self.kb),
                Tok::Semi => {
                    self.bump();
                }
                Tok::Ident(k) if k == "pred" => self.decl()?,
                Tok::Ident(k) if k == "forall" => self.rule()?,
                other => {
                    let t = self.peek();
                    return Err(syntax(
                        t.line,
                        t.col,
                        format!("expected 'pred' or 'forall', found {other}"),
                    ));
                }
            }
        }
    }

    fn decl(&mut self) -> Result<(), ParseError> {
        self.bump();
        let (name, at) = self.ident("predicate name")?;
        let err = |kind| ParseError {
            line: at.line,
            col: at.col,
            kind,
        };
        if is_keyword(&name) {
            return Err(err(ParseErrorKind::Syntax(format!("'{name}' is reserved"))));
        }
        self.expect(Tok::Slash)?;
        let arity = match self.bump() {
            Spanned { tok: Tok::Int(n), .. } => n,
            t => return Err(syntax(t.line, t.col, format!("expected arity, found {}", t.tok))),
        };
        let group = if self.peek().tok == Tok::At {
            self.bump();
            Some(self.ident("group name")?.0)
        } else {
            None
        };
        if self.peek().tok == Tok::Semi {
            self.bump();
        }
        if arity == 0 {
            return Err(err(ParseErrorKind::InvalidArity(name)));
        }
        if group.is_some() && arity != 1 {
            return Err(err(ParseErrorKind::GroupArity(name)));
        }
        if self.by_name.contains_key(&name) {
            return Err(err(ParseErrorKind::DuplicatePredicate(name)));
        }
        self.by_name.insert(name.clone(), self.kb.signature.len());
        self.kb.signature.push(PredicateSig { name, arity, group });
        Ok(())
    }

    fn rule(&mut self) -> Result<(), ParseError> {
        let start = self.bump();
        self.bound.clear();
        self.used.clear();
        loop {
            let (v, at) = self.ident("variable")?;
            if self.bound.contains(&v) {
                return Err(ParseError {
                    line: at.line,
                    col: at.col,
                    kind: ParseErrorKind::DuplicateVariable(v),
                });
            }
            self.bound.push(v);
            if self.peek().tok == Tok::Comma {
                self.bump();
            } else {
                break;
            }
        }
        self.expect(Tok::Colon)?;
        let body = self.expr()?;
        if let Some(unused) = self.bound.iter().find(|v| !self.used.contains(*v)) {
            return Err(ParseError {
                line: start.line,
                col: start.col,
                kind: ParseErrorKind::UnusedVariable(unused.clone()),
            });
        }
        if self.peek().tok == Tok::Semi {
            self.bump();
        }
        let vars = std::mem::take(&mut self.bound);
        self.kb.formulas.push(Formula::Forall(vars, Box::new(body)));
        Ok(())
    }

    fn expr(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.disj()?;
        if self.peek().tok == Tok::Arrow {
            self.bump();
            let rhs = self.expr()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn disj(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.conj()?;
        while self.peek().tok == Tok::Pipe {
            self.bump();
            lhs = Formula::or(lhs, self.conj()?);
        }
        Ok(lhs)
    }

    fn conj(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.unary()?;
        while self.peek().tok == Tok::Amp {
            self.bump();
            lhs = Formula::and(lhs, self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        match self.peek().tok {
            Tok::Tilde => {
                self.bump();
                Ok(Formula::not(self.unary()?))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<Formula, ParseError> {
        let (name, at) = self.ident("predicate")?;
        let pred = *self.by_name.get(&name).ok_or(ParseError {
            line: at.line,
            col: at.col,
            kind: ParseErrorKind::UndeclaredPredicate(name.clone()),
        })?;
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        loop {
            let (v, vat) = self.ident("variable")?;
            if !self.bound.contains(&v) {
                return Err(ParseError {
                    line: vat.line,
                    col: vat.col,
                    kind: ParseErrorKind::UnboundVariable(v),
                });
            }
            self.used.insert(v.clone());
            args.push(Term::Var(v));
            if self.peek().tok == Tok::Comma {
                self.bump();
            } else {
                break;
            }
        }
        self.expect(Tok::RParen)?;
        let expected = self.kb.signature[pred].arity;
        if args.len() != expected {
            return Err(ParseError {
                line: at.line,
                col: at.col,
                kind: ParseErrorKind::ArityMismatch {
                    pred: name,
                    expected,
                    found: args.len(),
                },
            });
        }
        Ok(Formula::Atom { pred, args })
    }
}

fn is_keyword(s: &str) -> bool {
    s == "pred" || s == "forall"
}

/// Parses a knowledge base from its text form.
pub fn parse_kb(source: &str) -> Result<KnowledgeBase, ParseError> {
    let toks = lex(source)?;
    let parser = Parser {
        toks,
        pos: 0,
        kb: KnowledgeBase::default(),
        by_name: HashMap::new(),
        bound: Vec::new(),
        used: BTreeSet::new(),
    };
    parser.file()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chair_rule() {
        let kb = parse_kb(
            "pred chair/1 @types; pred partOf/2; pred cushion/1 @types; pred armRest/1 @types; \
             forall x,y: chair(x) & partOf(y,x) -> cushion(y) | armRest(y)",
        )
        .unwrap();
        assert_eq!(kb.signature.len(), 4);
        assert_eq!(kb.signature[0].group.as_deref(), Some("types"));
        assert_eq!(kb.formulas.len(), 1);
        let (vars, body) = kb.formulas[0].prefix();
        assert_eq!(vars, ["x", "y"]);
        let expected = Formula::implies(
            Formula::and(Formula::atom(0, &["x"]), Formula::atom(1, &["y", "x"])),
            Formula::or(Formula::atom(2, &["y"]), Formula::atom(3, &["y"])),
        );
        assert_eq!(body, &expected);
    }

    #[test]
    fn negated_rule() {
        let kb = parse_kb("pred partOf/2; forall x: ~partOf(x,x)").unwrap();
        assert!(matches!(kb.formulas[0].prefix().1, Formula::Not(_)));
    }

    #[test]
    fn unbound_variable_is_named() {
        let err = parse_kb("pred p/1; forall x: p(y)").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnboundVariable("y".into()));
        assert_eq!((err.line, err.col), (1, 23));
    }

    #[test]
    fn implication_is_right_associative() {
        let kb = parse_kb("pred p/1 pred q/1 pred r/1\nforall x: p(x) -> q(x) -> r(x)").unwrap();
        let body = kb.formulas[0].prefix().1;
        match body {
            Formula::Implies(a, b) => {
                assert!(matches!(**a, Formula::Atom { .. }));
                assert!(matches!(**b, Formula::Implies(..)));
            }
            _ => panic!("expected implication"),
        }
    }

    #[test]
    fn conjunction_is_left_associative_and_binds_tighter() {
        let kb = parse_kb("pred p/1; pred q/1\nforall x: p(x) & q(x) & p(x) | ~q(x)").unwrap();
        let want = Formula::or(
            Formula::and(
                Formula::and(Formula::atom(0, &["x"]), Formula::atom(1, &["x"])),
                Formula::atom(0, &["x"]),
            ),
            Formula::not(Formula::atom(1, &["x"])),
        );
        assert_eq!(kb.formulas[0].prefix().1, &want);
    }

    #[test]
    fn errors_carry_positions() {
        let err = parse_kb("pred p/1;\n# comment\nforall x: q(x)").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UndeclaredPredicate("q".into()));
        assert_eq!((err.line, err.col), (3, 11));

        let err = parse_kb("pred p/2;\nforall x: p(x)").unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::ArityMismatch { expected: 2, found: 1, .. }));

        let err = parse_kb("pred p/1;\nforall x: p(x) &").unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::Syntax(_)));
        assert_eq!(err.line, 2);

        let err = parse_kb("pred p/1; forall x,y: p(x)").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnusedVariable("y".into()));

        let err = parse_kb("pred r/2 @g").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::GroupArity("r".into()));

        let err = parse_kb("pred p/1; pred p/1").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DuplicatePredicate("p".into()));
    }

    #[test]
    fn comments_and_semicolons() {
        let src = "# types\npred a/1 @t; # trailing\npred b/1 @t;\nforall x: a(x) -> ~b(x);\n";
        let kb = parse_kb(src).unwrap();
        assert_eq!(kb.formulas.len(), 1);
        assert_eq!(kb.groups(), vec![("t".to_string(), vec![0, 1])]);
    }
}
