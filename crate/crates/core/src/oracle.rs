//! Exact probabilistic semantics by exhaustive world enumeration.
//!
//! Atom degrees define independent Bernoulli variables over a scene's
//! Herbrand base. The probability of a knowledge base is the mass of the
//! worlds in which every formula is classically true. Atoms that no formula
//! mentions marginalize out, so only the mentioned ones are enumerated.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fol::{Formula, KnowledgeBase, PredicateSig, Term};
use crate::grounding::{tuples, Binding, HerbrandBase, Scene, World};
use crate::model::{Layout, Params, Widths};
use crate::prl::Evaluator;

/// Largest number of enumerated atoms (2^24 worlds).
pub const ENUMERATION_CAP: usize = 24;

/// Probability of `w` when each atom `i` is true with probability
/// `degrees[i]`.
pub fn world_probability(w: &World, degrees: &[f64]) -> Result<f64> {
    if degrees.len() != w.len() {
        return Err(Error::InvalidInput(format!(
            "world has {} atoms but {} degrees were given",
            w.len(),
            degrees.len()
        )));
    }
    Ok(w.values()
        .iter()
        .zip(degrees)
        .map(|(&b, &f)| if b { f } else { 1.0 - f })
        .product())
}

/// Classical truth of a formula in a world. A quantifier prefix is the
/// conjunction over all of its bindings.
pub fn valuation(f: &Formula, w: &World, base: &HerbrandBase) -> Result<bool> {
    if w.len() != base.len() {
        return Err(Error::InvalidInput(format!(
            "world has {} atoms, herbrand base has {}",
            w.len(),
            base.len()
        )));
    }
    let (vars, body) = f.prefix();
    for b in tuples(vars.len(), base.n_objects()) {
        if !ground(body, vars, &b, base)?.truth(&|i| w.get(i)) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Classical truth of a quantifier-free formula under one binding.
pub fn truth(
    body: &Formula,
    vars: &[String],
    binding: &Binding,
    w: &World,
    base: &HerbrandBase,
) -> Result<bool> {
    Ok(ground(body, vars, binding, base)?.truth(&|i| w.get(i)))
}

/// A quantifier-free formula with its leaves resolved to atom indices.
#[derive(Debug, Clone)]
pub(crate) enum Ground {
    Leaf(usize),
    Not(Box<Ground>),
    And(Box<Ground>, Box<Ground>),
    Or(Box<Ground>, Box<Ground>),
    Implies(Box<Ground>, Box<Ground>),
}

impl Ground {
    pub(crate) fn truth(&self, atom: &impl Fn(usize) -> bool) -> bool {
        match self {
            Ground::Leaf(i) => atom(*i),
            Ground::Not(a) => !a.truth(atom),
            Ground::And(a, b) => a.truth(atom) && b.truth(atom),
            Ground::Or(a, b) => a.truth(atom) || b.truth(atom),
            Ground::Implies(a, b) => !a.truth(atom) || b.truth(atom),
        }
    }

    pub(crate) fn leaves(&self, out: &mut Vec<usize>) {
        match self {
            Ground::Leaf(i) => out.push(*i),
            Ground::Not(a) => a.leaves(out),
            Ground::And(a, b) | Ground::Or(a, b) | Ground::Implies(a, b) => {
                a.leaves(out);
                b.leaves(out);
            }
        }
    }

    fn relabel(&mut self, map: &impl Fn(usize) -> usize) {
        match self {
            Ground::Leaf(i) => *i = map(*i),
            Ground::Not(a) => a.relabel(map),
            Ground::And(a, b) | Ground::Or(a, b) | Ground::Implies(a, b) => {
                a.relabel(map);
                b.relabel(map);
            }
        }
    }
}

fn ground(f: &Formula, vars: &[String], b: &Binding, base: &HerbrandBase) -> Result<Ground> {
    let rec = |g: &Formula| ground(g, vars, b, base).map(Box::new);
    Ok(match f {
        Formula::Atom { pred, args } => {
            let objs = args
                .iter()
                .map(|t| match t {
                    Term::Const(c) => Ok(*c),
                    Term::Var(v) => b
                        .lookup(vars, v)
                        .ok_or_else(|| Error::InvalidInput(format!("variable {v} is not bound"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let i = base.index(*pred, &objs).ok_or_else(|| {
                Error::InvalidInput(format!("atom #{pred}{objs:?} is not in the herbrand base"))
            })?;
            Ground::Leaf(i)
        }
        Formula::Not(a) => Ground::Not(rec(a)?),
        Formula::And(a, c) => Ground::And(rec(a)?, rec(c)?),
        Formula::Or(a, c) => Ground::Or(rec(a)?, rec(c)?),
        Formula::Implies(a, c) => Ground::Implies(rec(a)?, rec(c)?),
        Formula::Forall(..) => {
            return Err(Error::InvalidInput("quantifier inside a formula body".into()))
        }
    })
}

/// Every ground instance of every formula.
pub(crate) fn instances(kb: &KnowledgeBase, base: &HerbrandBase) -> Result<Vec<Ground>> {
    let mut out = Vec::new();
    for f in &kb.formulas {
        let (vars, body) = f.prefix();
        for b in tuples(vars.len(), base.n_objects()) {
            out.push(ground(body, vars, &b, base)?);
        }
    }
    Ok(out)
}

/// Probability that every formula holds in a world drawn from the model's
/// atom degrees on `scene`.
pub fn exact_kb_probability(kb: &KnowledgeBase, scene: &Scene, params: &Params) -> Result<f64> {
    let degrees = params.atom_degrees(&scene.objects)?;
    exact_from_degrees(kb, scene.len(), &degrees)
}

/// Same as [`exact_kb_probability`] from explicit atom degrees, indexed like
/// the Herbrand base of `n_objects` objects.
pub fn exact_from_degrees(kb: &KnowledgeBase, n_objects: usize, degrees: &[f64]) -> Result<f64> {
    let base = HerbrandBase::new(&kb.signature, n_objects);
    if degrees.len() != base.len() {
        return Err(Error::InvalidInput(format!(
            "{} degrees given for a herbrand base of {} atoms",
            degrees.len(),
            base.len()
        )));
    }
    let mut insts = instances(kb, &base)?;
    let mut relevant = Vec::new();
    for g in &insts {
        g.leaves(&mut relevant);
    }
    relevant.sort_unstable();
    relevant.dedup();
    if relevant.len() > ENUMERATION_CAP {
        return Err(Error::BaseTooLarge {
            size: relevant.len(),
            cap: ENUMERATION_CAP,
        });
    }
    for g in &mut insts {
        g.relabel(&|i| relevant.binary_search(&i).expect("leaf collected above"));
    }
    let probs: Vec<f64> = relevant.iter().map(|&i| degrees[i]).collect();
    Ok(enumerate(&insts, &probs))
}

/// Sums the probability of satisfying worlds. The first bits are split into
/// shards that run in parallel; shard results are added in index order so
/// the total does not depend on the thread count.
fn enumerate(insts: &[Ground], probs: &[f64]) -> f64 {
    let r = probs.len();
    let split = r.min(8);
    let shards: Vec<f64> = (0u64..1 << split)
        .into_par_iter()
        .map(|prefix| {
            let mut p = 1.0;
            for (i, &f) in probs.iter().enumerate().take(split) {
                p *= if prefix >> i & 1 == 1 { f } else { 1.0 - f };
            }
            dfs(insts, probs, split, prefix, p)
        })
        .collect();
    shards.iter().sum()
}

fn dfs(insts: &[Ground], probs: &[f64], i: usize, mask: u64, p: f64) -> f64 {
    if p == 0.0 {
        return 0.0;
    }
    if i == probs.len() {
        let sat = insts.iter().all(|g| g.truth(&|k| mask >> k & 1 == 1));
        return if sat { p } else { 0.0 };
    }
    let f = probs[i];
    dfs(insts, probs, i + 1, mask | 1 << i, p * f) + dfs(insts, probs, i + 1, mask, p * (1.0 - f))
}

/// Product of the fuzzy degrees of every ground instance.
pub fn prl_kb_probability(kb: &KnowledgeBase, scene: &Scene, params: &Params) -> Result<f64> {
    let mut ev = Evaluator::plain(params);
    let mut total = 1.0;
    for f in &kb.formulas {
        for b in tuples(f.arity(), scene.len()) {
            total *= ev.instance(0, scene, f, &b)?;
        }
    }
    Ok(total)
}

/// True iff no ground atom occurs twice across all ground instances of all
/// formulas. This makes formula atom sets pairwise disjoint, sibling
/// subformulas disjoint within each instance, and instances of one formula
/// disjoint from each other, which is what the fuzzy product needs to equal
/// the exact probability.
pub fn assumptions_hold(kb: &KnowledgeBase, n_objects: usize) -> Result<bool> {
    let base = HerbrandBase::new(&kb.signature, n_objects);
    let mut seen = vec![false; base.len()];
    let mut leaves = Vec::new();
    for g in instances(kb, &base)? {
        leaves.clear();
        g.leaves(&mut leaves);
        for &i in &leaves {
            if std::mem::replace(&mut seen[i], true) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExactnessReport {
    pub exact: f64,
    pub prl: f64,
    pub assumptions_hold: bool,
    pub abs_diff: f64,
}

impl ExactnessReport {
    /// Single-line JSON record.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report fields are plain numbers")
    }
}

/// Compares the exact knowledge-base probability with the fuzzy product.
pub fn check_prl_exactness(kb: &KnowledgeBase, scene: &Scene, params: &Params) -> Result<ExactnessReport> {
    let exact = exact_kb_probability(kb, scene, params)?;
    let prl = prl_kb_probability(kb, scene, params)?;
    Ok(ExactnessReport {
        exact,
        prl,
        assumptions_hold: assumptions_hold(kb, scene.len())?,
        abs_diff: (exact - prl).abs(),
    })
}

/// Largest Herbrand base produced by [`disjoint_instance`].
pub const DISJOINT_BASE_LIMIT: usize = 16;

/// A random knowledge base, scene and parameter vector whose ground
/// instances never share an atom. Every leaf gets its own predicate, whose
/// arguments are a permutation of the formula's variables, so distinct
/// bindings give distinct atoms.
pub fn disjoint_instance(seed: u64) -> (KnowledgeBase, Scene, Params) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3usize);
    let mut budget = DISJOINT_BASE_LIMIT;
    let mut signature = Vec::new();
    let mut formulas = Vec::new();
    let n_formulas = rng.random_range(1..=3);
    while formulas.len() < n_formulas {
        let ks: Vec<usize> = (1..=2).filter(|&k| n.pow(k as u32) <= budget).collect();
        let Some(&k) = ks.get(rng.random_range(0..ks.len().max(1))) else {
            break;
        };
        let per_leaf = n.pow(k as u32);
        let leaves = rng.random_range(1..=(budget / per_leaf).min(4));
        budget -= leaves * per_leaf;
        let vars: Vec<String> = (0..k).map(|i| format!("x{i}")).collect();
        let mut atoms = Vec::with_capacity(leaves);
        for _ in 0..leaves {
            let pred = signature.len();
            signature.push(PredicateSig::new(format!("p{pred}"), k));
            let mut args = vars.clone();
            args.shuffle(&mut rng);
            atoms.push(Formula::atom(pred, &args));
        }
        let body = random_tree(&mut rng, atoms);
        formulas.push(Formula::forall(&vars, body));
    }
    let kb = KnowledgeBase::new(signature, formulas);
    let m = 3;
    let objects: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let layout = Layout::new(&kb.signature, m, &Widths::uniform(3)).expect("generated signature is valid");
    let scale = rng.random_range(0.5..4.0);
    let init = Params::init(layout, rng.random());
    let theta = init.theta().iter().map(|t| t * scale).collect();
    let params = Params::from_vec(init.layout().clone(), theta).expect("finite parameters");
    (kb, Scene::new(format!("disjoint-{seed}"), objects), params)
}

fn random_tree(rng: &mut ChaCha8Rng, mut nodes: Vec<Formula>) -> Formula {
    while nodes.len() > 1 {
        let i = rng.random_range(0..nodes.len());
        let a = nodes.swap_remove(i);
        let j = rng.random_range(0..nodes.len());
        let b = nodes.swap_remove(j);
        let joined = match rng.random_range(0..3) {
            0 => Formula::and(a, b),
            1 => Formula::or(a, b),
            _ => Formula::implies(a, b),
        };
        nodes.push(maybe_negate(rng, joined));
    }
    let root = nodes.pop().expect("at least one leaf");
    maybe_negate(rng, root)
}

fn maybe_negate(rng: &mut ChaCha8Rng, f: Formula) -> Formula {
    if rng.random_bool(0.25) {
        Formula::not(f)
    } else {
        f
    }
}
