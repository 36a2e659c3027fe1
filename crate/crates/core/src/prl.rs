//! Product Real Logic: fuzzy truth degrees, the universal-quantifier loss,
//! the Modus Ponens / Modus Tollens decomposition of implication gradients,
//! and the MP/MT-normalized loss.
//!
//! Connectives:
//!
//! | formula   | degree                              |
//! |-----------|-------------------------------------|
//! | `P(o)`    | model output                        |
//! | `~a`      | `1 - a`                             |
//! | `a & b`   | `a * b`                             |
//! | `a \| b`  | `1 - (1 - a)(1 - b)`                |
//! | `a -> c`  | `1 - a (1 - c)`                     |

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::fol::{decompose_implication, Formula, KnowledgeBase, PredId, Term};
use crate::grounding::{enumerate_bindings, Binding, Sample, Scene};
use crate::model::{head_outputs, Params};
use crate::tape::{GradTape, Ops, Plain};

/// Lower clamp for probabilities entering a logarithm or a denominator.
pub const EPS: f64 = 1e-7;

/// Grounds atoms through the model and memoizes head outputs per
/// (scene key, head, argument tuple). Scene keys only need to be distinct
/// within one evaluator.
pub struct Evaluator<'a, O: Ops> {
    params: &'a Params,
    pub ops: O,
    cache: HashMap<(usize, usize, Vec<usize>), Vec<O::V>>,
}

impl<'a> Evaluator<'a, Plain<'a>> {
    pub fn plain(params: &'a Params) -> Self {
        Evaluator::new(params, Plain::new(params.theta()))
    }
}

impl<'a> Evaluator<'a, GradTape> {
    pub fn taped(params: &'a Params) -> Self {
        Evaluator::new(params, GradTape::new(params.theta()))
    }
}

impl<'a, O: Ops> Evaluator<'a, O> {
    pub fn new(params: &'a Params, ops: O) -> Self {
        Evaluator {
            params,
            ops,
            cache: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'a Params {
        self.params
    }

    pub fn into_ops(self) -> O {
        self.ops
    }

    pub fn atom(&mut self, key: usize, scene: &Scene, pred: PredId, args: &[usize]) -> Result<O::V> {
        let layout = self.params.layout();
        if pred >= layout.signature.len() {
            return Err(Error::InvalidInput(format!("unknown predicate #{pred}")));
        }
        if let Some(&o) = args.iter().find(|&&o| o >= scene.len()) {
            return Err(Error::InvalidInput(format!(
                "object {o} out of range for scene {} with {} objects",
                scene.id,
                scene.len()
            )));
        }
        let (head, k) = layout.slot(pred);
        let cache_key = (key, head, args.to_vec());
        if let Some(out) = self.cache.get(&cache_key) {
            return Ok(out[k]);
        }
        let objects: Vec<&[f64]> = args.iter().map(|&o| scene.objects[o].as_slice()).collect();
        let out = head_outputs(&mut self.ops, layout, head, &objects)?;
        let v = out[k];
        self.cache.insert(cache_key, out);
        Ok(v)
    }

    /// Degree of a quantifier-free formula under `binding` (aligned with
    /// `vars`).
    pub fn formula(
        &mut self,
        key: usize,
        scene: &Scene,
        vars: &[String],
        binding: &[usize],
        f: &Formula,
    ) -> Result<O::V> {
        self.node(key, scene, vars, binding, f, None)
    }

    fn node(
        &mut self,
        key: usize,
        scene: &Scene,
        vars: &[String],
        binding: &[usize],
        f: &Formula,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<O::V> {
        let slot = trace.as_mut().map(|t| {
            t.push(f64::NAN);
            t.len() - 1
        });
        let v = match f {
            Formula::Atom { pred, args } => {
                let objs = resolve(vars, binding, args)?;
                self.atom(key, scene, *pred, &objs)?
            }
            Formula::Not(a) => {
                let a = self.node(key, scene, vars, binding, a, trace.as_deref_mut())?;
                self.ops.one_minus(a)
            }
            Formula::And(a, b) => {
                let a = self.node(key, scene, vars, binding, a, trace.as_deref_mut())?;
                let b = self.node(key, scene, vars, binding, b, trace.as_deref_mut())?;
                self.ops.mul(a, b)
            }
            Formula::Or(a, b) => {
                let a = self.node(key, scene, vars, binding, a, trace.as_deref_mut())?;
                let b = self.node(key, scene, vars, binding, b, trace.as_deref_mut())?;
                let na = self.ops.one_minus(a);
                let nb = self.ops.one_minus(b);
                let both = self.ops.mul(na, nb);
                self.ops.one_minus(both)
            }
            Formula::Implies(a, c) => {
                let a = self.node(key, scene, vars, binding, a, trace.as_deref_mut())?;
                let c = self.node(key, scene, vars, binding, c, trace.as_deref_mut())?;
                self.implication(a, c)
            }
            Formula::Forall(..) => {
                return Err(Error::InvalidInput(
                    "quantifier inside a formula body".into(),
                ))
            }
        };
        if let (Some(t), Some(i)) = (trace, slot) {
            t[i] = self.ops.value(v);
        }
        Ok(v)
    }

    fn implication(&mut self, a: O::V, c: O::V) -> O::V {
        let nc = self.ops.one_minus(c);
        let t = self.ops.mul(a, nc);
        self.ops.one_minus(t)
    }

    /// Degree of a prenex rule's body under `binding`.
    pub fn instance(&mut self, key: usize, scene: &Scene, f: &Formula, binding: &Binding) -> Result<O::V> {
        let (vars, body) = f.prefix();
        check_binding(vars, binding)?;
        self.formula(key, scene, vars, binding.objects(), body)
    }

    /// Antecedent and consequent degrees of an implication rule.
    pub fn implication_parts(
        &mut self,
        key: usize,
        scene: &Scene,
        f: &Formula,
        binding: &Binding,
    ) -> Result<(O::V, O::V)> {
        let (ante, cons) = decompose_implication(f).ok_or_else(not_implication)?;
        let vars = f.prefix().0;
        check_binding(vars, binding)?;
        let a = self.formula(key, scene, vars, binding.objects(), ante)?;
        let c = self.formula(key, scene, vars, binding.objects(), cons)?;
        Ok((a, c))
    }

    /// `-ln(clamp(p, EPS, 1))`.
    pub fn neg_log(&mut self, p: O::V) -> O::V {
        let p = self.ops.clamp(p, EPS, 1.0);
        let l = self.ops.ln(p);
        self.ops.lin(l, -1.0, 0.0)
    }

    /// Universal-quantifier loss of one rule over every binding of every
    /// scene. Scene `i` uses evaluator key `key_base + i`.
    pub fn forall_loss(&mut self, f: &Formula, scenes: &[Scene], key_base: usize) -> Result<O::V> {
        let mut terms = Vec::new();
        for (i, scene) in scenes.iter().enumerate() {
            for b in enumerate_bindings(f, scene) {
                let p = self.instance(key_base + i, scene, f, &b)?;
                terms.push(self.neg_log(p));
            }
        }
        Ok(self.ops.sum(&terms))
    }

    /// Minibatch estimate of the summed universal-quantifier losses.
    pub fn batch_forall_loss(
        &mut self,
        kb: &KnowledgeBase,
        batch: &[Sample],
        scenes: &[Scene],
        key_base: usize,
    ) -> Result<O::V> {
        let mut terms = Vec::with_capacity(batch.len());
        for s in batch {
            let p = self.instance(key_base + s.scene, &scenes[s.scene], &kb.formulas[s.formula], &s.binding)?;
            terms.push(self.neg_log(p));
        }
        Ok(self.ops.sum(&terms))
    }

    /// MP/MT-normalized loss over a minibatch. Mixing weights are computed
    /// from current values and detached; normalizers range over the batch
    /// slice of each formula. Non-implication formulas contribute their
    /// plain universal-quantifier terms.
    pub fn normalized_loss(
        &mut self,
        kb: &KnowledgeBase,
        batch: &[Sample],
        scenes: &[Scene],
        key_base: usize,
        mu: f64,
    ) -> Result<O::V> {
        let mut by_formula: BTreeMap<usize, Vec<&Sample>> = BTreeMap::new();
        for s in batch {
            by_formula.entry(s.formula).or_default().push(s);
        }
        let mut terms = Vec::new();
        for (fi, samples) in by_formula {
            let f = &kb.formulas[fi];
            if decompose_implication(f).is_none() {
                for s in samples {
                    let p = self.instance(key_base + s.scene, &scenes[s.scene], f, &s.binding)?;
                    terms.push(self.neg_log(p));
                }
                continue;
            }
            let mut parts = Vec::with_capacity(samples.len());
            let (mut mass_mp, mut mass_mt) = (0.0, 0.0);
            for s in samples {
                let (a, c) = self.implication_parts(key_base + s.scene, &scenes[s.scene], f, &s.binding)?;
                let w = weights_from_degrees(self.ops.value(a), self.ops.value(c));
                mass_mp += w.d_mp;
                mass_mt += w.d_mt;
                parts.push((a, c, w));
            }
            for (a, c, w) in parts {
                if mass_mp > 0.0 {
                    terms.push(self.ops.lin(c, -mu * w.d_mp / mass_mp, 0.0));
                }
                if mass_mt > 0.0 {
                    let not_a = self.ops.one_minus(a);
                    terms.push(self.ops.lin(not_a, -(1.0 - mu) * w.d_mt / mass_mt, 0.0));
                }
            }
        }
        Ok(self.ops.sum(&terms))
    }
}

fn not_implication() -> Error {
    Error::InvalidInput("formula is not an implication".into())
}

fn check_binding(vars: &[String], binding: &Binding) -> Result<()> {
    if vars.len() != binding.objects().len() {
        return Err(Error::InvalidInput(format!(
            "binding has {} objects for {} variables",
            binding.objects().len(),
            vars.len()
        )));
    }
    Ok(())
}

fn resolve(vars: &[String], binding: &[usize], args: &[Term]) -> Result<Vec<usize>> {
    args.iter()
        .map(|t| match t {
            Term::Const(c) => Ok(*c),
            Term::Var(v) => vars
                .iter()
                .position(|x| x == v)
                .and_then(|i| binding.get(i).copied())
                .ok_or_else(|| Error::InvalidInput(format!("variable {v} is not bound"))),
        })
        .collect()
}

/// Degree of a formula body plus the degree of every subformula, in
/// pre-order (node before its children, left before right).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub value: f64,
    pub nodes: Vec<f64>,
}

/// Evaluates the body of a prenex rule under `binding`.
pub fn eval(f: &Formula, binding: &Binding, scene: &Scene, params: &Params) -> Result<EvalResult> {
    let (vars, body) = f.prefix();
    check_binding(vars, binding)?;
    let mut ev = Evaluator::plain(params);
    let mut nodes = Vec::with_capacity(body.size());
    let value = ev.node(0, scene, vars, binding.objects(), body, Some(&mut nodes))?;
    Ok(EvalResult { value, nodes })
}

pub fn forall_loss(f: &Formula, scenes: &[Scene], params: &Params) -> Result<f64> {
    Evaluator::plain(params).forall_loss(f, scenes, 0)
}

/// Gradient mixing weights of one implication instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpMtWeights {
    pub d_mp: f64,
    pub d_mt: f64,
}

/// `d_mp = a / (1 - a(1 - c))`, `d_mt = (1 - c) / (1 - a(1 - c))`, with the
/// denominator clamped to at least [`EPS`].
pub fn weights_from_degrees(antecedent: f64, consequent: f64) -> MpMtWeights {
    let imp = (1.0 - antecedent * (1.0 - consequent)).max(EPS);
    MpMtWeights {
        d_mp: antecedent / imp,
        d_mt: (1.0 - consequent) / imp,
    }
}

pub fn mp_mt_weights(f: &Formula, binding: &Binding, scene: &Scene, params: &Params) -> Result<MpMtWeights> {
    let (a, c) = Evaluator::plain(params).implication_parts(0, scene, f, binding)?;
    Ok(weights_from_degrees(a, c))
}

pub fn normalized_loss(
    kb: &KnowledgeBase,
    batch: &[Sample],
    scenes: &[Scene],
    params: &Params,
    mu: f64,
) -> Result<f64> {
    Evaluator::plain(params).normalized_loss(kb, batch, scenes, 0, mu)
}

/// Splits the gradient of `sum_o ln p(a -> c | o)` into the Modus Ponens
/// part `sum_o d_mp * grad p(c)` and the Modus Tollens part
/// `sum_o d_mt * grad p(~a)`.
pub fn implication_gradient_split(
    f: &Formula,
    bindings: &[Binding],
    scene: &Scene,
    params: &Params,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if decompose_implication(f).is_none() {
        return Err(not_implication());
    }
    let n = params.len();
    let (mut mp, mut mt) = (vec![0.0; n], vec![0.0; n]);
    for b in bindings {
        let mut ev = Evaluator::taped(params);
        let (a, c) = ev.implication_parts(0, scene, f, b)?;
        let not_a = ev.ops.one_minus(a);
        let w = weights_from_degrees(a.value(), c.value());
        let tape = ev.into_ops();
        let gc = tape.gradient(c)?;
        let gna = tape.gradient(not_a)?;
        for j in 0..n {
            mp[j] += w.d_mp * gc[j];
            mt[j] += w.d_mt * gna[j];
        }
    }
    Ok((mp, mt))
}

/// Tape gradient of `sum_o ln p(f | o)` over the given bindings.
pub fn log_degree_gradient(f: &Formula, bindings: &[Binding], scene: &Scene, params: &Params) -> Result<Vec<f64>> {
    let mut ev = Evaluator::taped(params);
    let mut terms = Vec::with_capacity(bindings.len());
    for b in bindings {
        let p = ev.instance(0, scene, f, b)?;
        terms.push(ev.ops.ln(p));
    }
    let total = ev.ops.sum(&terms);
    ev.into_ops().gradient(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fol::parse_kb;
    use crate::grounding::{herbrand_base, tuples};
    use crate::model::{encode_degree_table, Layout, Widths};

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    /// Two-object scene with the chair/partOf degree table.
    fn example() -> (KnowledgeBase, Scene, Params) {
        let kb = parse_kb(
            "pred chair/1 @types; pred cushion/1 @types; pred armRest/1 @types; pred partOf/2;\n\
             forall x,y: chair(x) & partOf(y,x) -> cushion(y) | armRest(y)",
        )
        .unwrap();
        let table = [
            0.9, 0.4, // chair(a), chair(b)
            0.05, 0.5, // cushion
            0.05, 0.1, // armRest
            0.001, 0.01, 0.95, 0.001, // partOf(a,a), (a,b), (b,a), (b,b)
        ];
        let (p, objects) = encode_degree_table(&kb.signature, 2, &table).unwrap();
        (kb, Scene::new("fig", objects), p)
    }

    #[test]
    fn chair_rule_degrees() {
        let (kb, scene, p) = example();
        let r = eval(&kb.formulas[0], &Binding(vec![0, 1]), &scene, &p).unwrap();
        approx(r.value, 0.61525, 1e-12);
        // pre-order: ->, &, chair(x), partOf(y,x), |, cushion(y), armRest(y)
        approx(r.nodes[1], 0.855, 1e-12);
        approx(r.nodes[4], 0.55, 1e-12);
        assert_eq!(r.nodes.len(), 7);
    }

    #[test]
    fn forall_loss_over_four_bindings() {
        let (kb, scene, p) = example();
        let want = -(0.61525f64.ln()
            + (1.0 - 0.0009 * 0.9025f64).ln()
            + (1.0 - 0.004 * 0.9025f64).ln()
            + (1.0 - 0.0004 * 0.45f64).ln());
        approx(forall_loss(&kb.formulas[0], std::slice::from_ref(&scene), &p).unwrap(), want, 1e-12);
        approx(want, 0.49034, 1e-5);
        assert_eq!(forall_loss(&kb.formulas[0], &[], &p).unwrap(), 0.0);
    }

    #[test]
    fn weights_at_example_binding() {
        let (kb, scene, p) = example();
        let w = mp_mt_weights(&kb.formulas[0], &Binding(vec![0, 1]), &scene, &p).unwrap();
        approx(w.d_mp, 1.38967, 1e-5);
        approx(w.d_mt, 0.73141, 1e-5);
        let zero = weights_from_degrees(0.0, 0.4);
        assert_eq!(zero.d_mp, 0.0);
        let sure = weights_from_degrees(0.3, 1.0);
        assert_eq!(sure.d_mt, 0.0);
        assert_eq!(sure.d_mp, 0.3);
    }

    #[test]
    fn non_implication_is_rejected() {
        let kb = parse_kb("pred r/2; forall x: ~r(x,x)").unwrap();
        let p = Params::zeros(Layout::new(&kb.signature, 1, &Widths::default()).unwrap());
        let s = Scene::new("s", vec![vec![0.0]]);
        assert!(mp_mt_weights(&kb.formulas[0], &Binding(vec![0]), &s, &p).is_err());
    }

    #[test]
    fn normalized_loss_examples() {
        let (kb, scene, p) = example();
        let scenes = [scene];
        let sample = |b: [usize; 2]| Sample {
            formula: 0,
            scene: 0,
            binding: Binding(b.to_vec()),
        };
        // two bindings, mu = 1
        let batch = [sample([0, 1]), sample([0, 0])];
        let got = normalized_loss(&kb, &batch, &scenes, &p, 1.0).unwrap();
        let w1 = 0.855 / 0.61525;
        let w2 = 0.0009 / (1.0 - 0.0009 * 0.9025);
        approx(got, -(w1 * 0.55 + w2 * 0.0975) / (w1 + w2), 1e-12);
        approx(got, -0.54971, 1e-5);
        // single binding: weights normalize to one
        let mu = 0.3;
        let got = normalized_loss(&kb, &batch[..1], &scenes, &p, mu).unwrap();
        approx(got, -(mu * 0.55 + (1.0 - mu) * (1.0 - 0.855)), 1e-12);
    }

    #[test]
    fn normalized_weights_are_detached() {
        let (kb, scene, p) = example();
        let scenes = [scene];
        let batch: Vec<Sample> = tuples(2, 2)
            .map(|b| Sample { formula: 0, scene: 0, binding: b })
            .collect();
        let mu = 0.25;
        let mut ev = Evaluator::taped(&p);
        let loss = ev.normalized_loss(&kb, &batch, &scenes, 0, mu).unwrap();
        let g = ev.into_ops().gradient(loss).unwrap();
        // Same loss with the mixing coefficients frozen as constants.
        let mut ev = Evaluator::taped(&p);
        let mut parts = Vec::new();
        for s in &batch {
            let (a, c) = ev.implication_parts(0, &scenes[0], &kb.formulas[0], &s.binding).unwrap();
            parts.push((a, c, weights_from_degrees(a.value(), c.value())));
        }
        let smp: f64 = parts.iter().map(|x| x.2.d_mp).sum();
        let smt: f64 = parts.iter().map(|x| x.2.d_mt).sum();
        let mut terms = Vec::new();
        for (a, c, w) in parts {
            terms.push(ev.ops.lin(c, -mu * w.d_mp / smp, 0.0));
            let na = ev.ops.one_minus(a);
            terms.push(ev.ops.lin(na, -(1.0 - mu) * w.d_mt / smt, 0.0));
        }
        let total = ev.ops.sum(&terms);
        let g2 = ev.into_ops().gradient(total).unwrap();
        for (x, y) in g.iter().zip(&g2) {
            approx(*x, *y, 1e-12);
        }
    }

    #[test]
    fn split_sums_to_log_gradient() {
        let kb = parse_kb(
            "pred a/1 @t; pred b/1 @t; pred c/1 @t; pred r/2;\n\
             forall x,y: a(x) & r(x,y) -> b(y) | ~c(x)",
        )
        .unwrap();
        let layout = Layout::new(&kb.signature, 3, &Widths::default()).unwrap();
        let p = Params::init(layout, 5);
        let scene = Scene::new(
            "s",
            vec![vec![0.1, -0.4, 1.0], vec![0.7, 0.2, -0.3], vec![-1.0, 0.5, 0.5]],
        );
        let bindings: Vec<_> = tuples(2, 3).collect();
        let (mp, mt) = implication_gradient_split(&kb.formulas[0], &bindings, &scene, &p).unwrap();
        let g = log_degree_gradient(&kb.formulas[0], &bindings, &scene, &p).unwrap();
        for j in 0..p.len() {
            approx(mp[j] + mt[j], g[j], 1e-9);
        }
    }

    #[test]
    fn de_morgan_is_exact() {
        let kb = parse_kb("pred p/1; pred q/1; forall x: p(x) | q(x); forall x: ~(~p(x) & ~q(x))").unwrap();
        let layout = Layout::new(&kb.signature, 2, &Widths::default()).unwrap();
        let p = Params::init(layout, 9);
        let scene = Scene::new("s", vec![vec![0.3, -0.8]]);
        let b = Binding(vec![0]);
        let x = eval(&kb.formulas[0], &b, &scene, &p).unwrap().value;
        let y = eval(&kb.formulas[1], &b, &scene, &p).unwrap().value;
        assert_eq!(x.to_bits(), y.to_bits());
        let _ = herbrand_base(&scene, &kb.signature);
    }
}
