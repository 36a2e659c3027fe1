//! Parameterized predicate functions.
//!
//! Every ungrouped predicate gets its own head: an optional tanh hidden
//! layer followed by a sigmoid unit over the concatenated argument
//! features. The members of a mutual-exclusivity group share one head whose
//! softmax output has one coordinate per member.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fol::{KnowledgeBase, PredId, PredicateSig};
use crate::grounding::HerbrandBase;
use crate::tape::{Ops, Plain};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Output {
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Head {
    /// Group name for softmax heads, predicate name otherwise.
    pub name: String,
    pub members: Vec<PredId>,
    pub input_dim: usize,
    /// Width of the tanh layer; 0 means the output is affine in the input.
    pub hidden: usize,
    pub output: Output,
    pub offset: usize,
}

impl Head {
    pub fn outputs(&self) -> usize {
        self.members.len()
    }

    pub fn n_params(&self) -> usize {
        if self.hidden == 0 {
            self.outputs() * (self.input_dim + 1)
        } else {
            self.hidden * (self.input_dim + 1) + self.outputs() * (self.hidden + 1)
        }
    }

    /// (first weight, bias) of unit `i` in layer 0 (hidden, or output when
    /// there is no hidden layer).
    fn first_layer(&self, i: usize) -> (usize, usize) {
        let units = if self.hidden == 0 { self.outputs() } else { self.hidden };
        (
            self.offset + i * self.input_dim,
            self.offset + units * self.input_dim + i,
        )
    }

    fn second_layer(&self, k: usize) -> (usize, usize) {
        let base = self.offset + self.hidden * (self.input_dim + 1);
        (base + k * self.hidden, base + self.outputs() * self.hidden + k)
    }

    /// Fan-in of the layer that parameter `j` (relative to the head) feeds.
    fn fan_in(&self, j: usize) -> usize {
        if self.hidden == 0 || j < self.hidden * (self.input_dim + 1) {
            self.input_dim
        } else {
            self.hidden
        }
    }
}

/// Hidden widths per head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Widths {
    pub group: usize,
    pub unary: usize,
    pub relation: usize,
    /// Per-head overrides, keyed by head name.
    pub overrides: HashMap<String, usize>,
}

impl Default for Widths {
    fn default() -> Self {
        Widths {
            group: 10,
            unary: 10,
            relation: 2,
            overrides: HashMap::new(),
        }
    }
}

impl Widths {
    pub fn uniform(width: usize) -> Self {
        Widths {
            group: width,
            unary: width,
            relation: width,
            overrides: HashMap::new(),
        }
    }

    pub fn with(mut self, head: impl Into<String>, width: usize) -> Self {
        self.overrides.insert(head.into(), width);
        self
    }
}

/// Maps predicates to heads and heads to slices of the parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub feature_dim: usize,
    pub signature: Vec<PredicateSig>,
    pub heads: Vec<Head>,
    // pred -> (head, output coordinate)
    slots: Vec<(usize, usize)>,
    n_params: usize,
}

impl Layout {
    pub fn new(signature: &[PredicateSig], feature_dim: usize, widths: &Widths) -> Result<Self> {
        let mut heads: Vec<Head> = Vec::new();
        let mut slots = Vec::with_capacity(signature.len());
        let mut offset = 0;
        for (id, p) in signature.iter().enumerate() {
            if p.arity == 0 {
                return Err(Error::InvalidKb(format!("predicate {} has arity 0", p.name)));
            }
            if let Some(g) = &p.group {
                if p.arity != 1 {
                    return Err(Error::InvalidKb(format!(
                        "grouped predicate {} must be unary",
                        p.name
                    )));
                }
                if let Some(h) = heads
                    .iter()
                    .position(|h| h.output == Output::Softmax && &h.name == g)
                {
                    slots.push((h, heads[h].members.len()));
                    heads[h].members.push(id);
                    continue;
                }
            }
            let (name, output, default) = match &p.group {
                Some(g) => (g.clone(), Output::Softmax, widths.group),
                None if p.arity == 1 => (p.name.clone(), Output::Sigmoid, widths.unary),
                None => (p.name.clone(), Output::Sigmoid, widths.relation),
            };
            let hidden = widths.overrides.get(&name).copied().unwrap_or(default);
            slots.push((heads.len(), 0));
            heads.push(Head {
                name,
                members: vec![id],
                input_dim: p.arity * feature_dim,
                hidden,
                output,
                offset: 0,
            });
        }
        // Offsets are assigned after grouping so each head is contiguous.
        for h in &mut heads {
            h.offset = offset;
            offset += h.n_params();
        }
        Ok(Layout {
            feature_dim,
            signature: signature.to_vec(),
            heads,
            slots,
            n_params: offset,
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// (head index, output coordinate) of a predicate.
    pub fn slot(&self, pred: PredId) -> (usize, usize) {
        self.slots[pred]
    }

    pub fn head_of(&self, pred: PredId) -> &Head {
        &self.heads[self.slots[pred].0]
    }

    pub fn widths(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.hidden).collect()
    }

    fn with_head_widths(signature: &[PredicateSig], m: usize, widths: &[usize]) -> Result<Self> {
        let probe = Layout::new(signature, m, &Widths::uniform(0))?;
        if probe.heads.len() != widths.len() {
            return Err(Error::InvalidInput(format!(
                "{} head widths for {} heads",
                widths.len(),
                probe.heads.len()
            )));
        }
        let mut w = Widths::uniform(0);
        for (h, &width) in probe.heads.iter().zip(widths) {
            w.overrides.insert(h.name.clone(), width);
        }
        Layout::new(signature, m, &w)
    }
}

/// Flat parameter vector together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    layout: Arc<Layout>,
    theta: Vec<f64>,
}

impl Params {
    pub fn zeros(layout: Layout) -> Self {
        let n = layout.n_params();
        Params {
            layout: Arc::new(layout),
            theta: vec![0.0; n],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, seeded.
    pub fn init(layout: Layout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; layout.n_params()];
        for h in &layout.heads {
            for j in 0..h.n_params() {
                let bound = 1.0 / (h.fan_in(j).max(1) as f64).sqrt();
                theta[h.offset + j] = rng.random_range(-bound..=bound);
            }
        }
        Params {
            layout: Arc::new(layout),
            theta,
        }
    }

    pub fn from_vec(layout: Layout, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != layout.n_params() {
            return Err(Error::Dimension(format!(
                "{} parameters for a layout of {}",
                theta.len(),
                layout.n_params()
            )));
        }
        if let Some(j) = theta.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {j}")));
        }
        Ok(Params {
            layout: Arc::new(layout),
            theta,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Truth degree of `pred` on a tuple of objects.
    pub fn predict(&self, pred: PredId, objects: &[&[f64]]) -> Result<f64> {
        predict_with(&mut Plain::new(&self.theta), &self.layout, pred, objects)
    }

    /// Degrees of every ground atom of a scene, indexed like its Herbrand base.
    pub fn atom_degrees(&self, objects: &[Vec<f64>]) -> Result<Vec<f64>> {
        let base = HerbrandBase::new(&self.layout.signature, objects.len());
        let mut out = Vec::with_capacity(base.len());
        for atom in base.atoms() {
            let tuple: Vec<&[f64]> = atom.args.iter().map(|&o| objects[o].as_slice()).collect();
            out.push(self.predict(atom.pred, &tuple)?);
        }
        Ok(out)
    }

    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, self).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_checkpoint(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        read_checkpoint(&bytes).map_err(|(line, msg)| Error::format(path, line, msg))
    }

    /// Errors unless the checkpoint signature is the knowledge base's.
    pub fn check_signature(&self, kb: &KnowledgeBase) -> Result<()> {
        if self.layout.signature != kb.signature {
            return Err(Error::InvalidInput(
                "checkpoint signature does not match the knowledge base".into(),
            ));
        }
        Ok(())
    }
}

/// Outputs of one head on one input tuple.
pub fn head_outputs<O: Ops>(
    ops: &mut O,
    layout: &Layout,
    head: usize,
    objects: &[&[f64]],
) -> Result<Vec<O::V>> {
    let h = &layout.heads[head];
    let m = layout.feature_dim;
    if objects.len() * m != h.input_dim {
        return Err(Error::Dimension(format!(
            "head {} takes {} objects, got {}",
            h.name,
            h.input_dim / m.max(1),
            objects.len()
        )));
    }
    if let Some(o) = objects.iter().find(|o| o.len() != m) {
        return Err(Error::Dimension(format!(
            "object has {} features, expected {m}",
            o.len()
        )));
    }
    let x: Vec<f64> = objects.iter().flat_map(|o| o.iter().copied()).collect();
    let logits: Vec<O::V> = if h.hidden == 0 {
        (0..h.outputs())
            .map(|k| {
                let (w, b) = h.first_layer(k);
                ops.affine_const(w, &x, b)
            })
            .collect()
    } else {
        let hidden: Vec<O::V> = (0..h.hidden)
            .map(|i| {
                let (w, b) = h.first_layer(i);
                let a = ops.affine_const(w, &x, b);
                ops.tanh(a)
            })
            .collect();
        (0..h.outputs())
            .map(|k| {
                let (w, b) = h.second_layer(k);
                ops.affine(w, &hidden, b)
            })
            .collect()
    };
    Ok(match h.output {
        Output::Sigmoid => logits.into_iter().map(|z| ops.sigmoid(z)).collect(),
        Output::Softmax => ops.softmax(&logits),
    })
}

/// Truth degree of `pred` on `objects`, recorded through `ops`.
pub fn predict_with<O: Ops>(
    ops: &mut O,
    layout: &Layout,
    pred: PredId,
    objects: &[&[f64]],
) -> Result<O::V> {
    let sig = layout
        .signature
        .get(pred)
        .ok_or_else(|| Error::InvalidInput(format!("unknown predicate #{pred}")))?;
    if objects.len() != sig.arity {
        return Err(Error::Dimension(format!(
            "{} has arity {}, got {} objects",
            sig.name,
            sig.arity,
            objects.len()
        )));
    }
    let (head, k) = layout.slot(pred);
    Ok(head_outputs(ops, layout, head, objects)?[k])
}

const MAGIC: &str = "DRCKPT 1";

fn write_checkpoint(out: &mut impl Write, p: &Params) -> std::io::Result<()> {
    let l = p.layout();
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "feature_dim {}", l.feature_dim)?;
    for s in &l.signature {
        writeln!(
            out,
            "pred {} {} {}",
            s.name,
            s.arity,
            s.group.as_deref().unwrap_or("-")
        )?;
    }
    let widths: Vec<String> = l.widths().iter().map(|w| w.to_string()).collect();
    writeln!(out, "widths {}", widths.join(" "))?;
    writeln!(out, "params {}", p.len())?;
    for t in p.theta() {
        out.write_all(&t.to_le_bytes())?;
    }
    Ok(())
}

fn read_checkpoint(bytes: &[u8]) -> std::result::Result<Params, (usize, String)> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = |pos: &mut usize| -> std::result::Result<(usize, String), (usize, String)> {
        line_no += 1;
        let end = bytes[*pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or((line_no, "truncated header".to_string()))?;
        let s = std::str::from_utf8(&bytes[*pos..*pos + end])
            .map_err(|_| (line_no, "header is not utf-8".to_string()))?
            .to_string();
        *pos += end + 1;
        Ok((line_no, s))
    };
    let (n, magic) = next_line(&mut pos)?;
    if magic != MAGIC {
        return Err((n, format!("expected '{MAGIC}'")));
    }
    let (n, dim) = next_line(&mut pos)?;
    let feature_dim = dim
        .strip_prefix("feature_dim ")
        .and_then(|s| s.parse().ok())
        .ok_or((n, "expected 'feature_dim <m>'".to_string()))?;
    let mut signature = Vec::new();
    let (n, widths) = loop {
        let (n, line) = next_line(&mut pos)?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["pred", name, arity, group] => {
                let arity = arity.parse().map_err(|_| (n, "bad arity".to_string()))?;
                signature.push(PredicateSig {
                    name: name.to_string(),
                    arity,
                    group: (*group != "-").then(|| group.to_string()),
                });
            }
            ["widths", rest @ ..] => {
                let ws = rest
                    .iter()
                    .map(|w| w.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| (n, "bad width".to_string()))?;
                break (n, ws);
            }
            _ => return Err((n, format!("unexpected header line '{line}'"))),
        }
    };
    let layout = Layout::with_head_widths(&signature, feature_dim, &widths)
        .map_err(|e| (n, e.to_string()))?;
    let (n, count) = next_line(&mut pos)?;
    let count: usize = count
        .strip_prefix("params ")
        .and_then(|s| s.parse().ok())
        .ok_or((n, "expected 'params <n>'".to_string()))?;
    if count != layout.n_params() {
        return Err((n, format!("{count} params, layout needs {}", layout.n_params())));
    }
    let body = &bytes[pos..];
    if body.len() != 8 * count {
        return Err((n + 1, format!("expected {} bytes of parameters, found {}", 8 * count, body.len())));
    }
    let theta = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Params::from_vec(layout, theta).map_err(|e| (n + 1, e.to_string()))
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    (p / (1.0 - p)).ln()
}

/// Builds parameters and one-hot object features that reproduce a given
/// table of atom degrees over `n` objects (indexed like the Herbrand base).
///
/// Ungrouped predicates of arity 1 use an affine head; higher arities use
/// one saturated tanh indicator per argument tuple. Group members must sum
/// to 1 per object. Degrees are reproduced up to rounding, except that
/// values are clamped to `[1e-15, 1 - 1e-15]`.
pub fn encode_degree_table(
    signature: &[PredicateSig],
    n: usize,
    degrees: &[f64],
) -> Result<(Params, Vec<Vec<f64>>)> {
    let base = HerbrandBase::new(signature, n);
    if degrees.len() != base.len() {
        return Err(Error::Dimension(format!(
            "{} degrees for a base of {}",
            degrees.len(),
            base.len()
        )));
    }
    if let Some(d) = degrees.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(Error::InvalidInput(format!("degree {d} outside [0, 1]")));
    }
    let mut widths = Widths::uniform(0);
    for p in signature.iter().filter(|p| p.group.is_none() && p.arity > 1) {
        widths.overrides.insert(p.name.clone(), n.pow(p.arity as u32));
    }
    let layout = Layout::new(signature, n, &widths)?;
    let mut theta = vec![0.0; layout.n_params()];
    const GAIN: f64 = 80.0;
    for h in &layout.heads {
        match h.output {
            Output::Softmax => {
                for o in 0..n {
                    let total: f64 = h
                        .members
                        .iter()
                        .map(|&p| degrees[base.index(p, &[o]).expect("in base")])
                        .sum();
                    if (total - 1.0).abs() > 1e-9 {
                        return Err(Error::InvalidInput(format!(
                            "group {} degrees sum to {total} on object {o}",
                            h.name
                        )));
                    }
                }
                for (k, &p) in h.members.iter().enumerate() {
                    let (w, _) = h.first_layer(k);
                    for o in 0..n {
                        let d = degrees[base.index(p, &[o]).expect("in base")];
                        theta[w + o] = d.max(1e-300).ln();
                    }
                }
            }
            Output::Sigmoid if h.hidden == 0 => {
                let p = h.members[0];
                let (w, _) = h.first_layer(0);
                for o in 0..n {
                    theta[w + o] = logit(degrees[base.index(p, &[o]).expect("in base")]);
                }
            }
            Output::Sigmoid => {
                let p = h.members[0];
                let arity = signature[p].arity;
                let (w2, b2) = h.second_layer(0);
                let mut bias = 0.0;
                for (t, idx) in base.pred_range(p).enumerate() {
                    let args = base.atom(idx).expect("in base").args;
                    let (w, b) = h.first_layer(t);
                    for (slot, &o) in args.iter().enumerate() {
                        theta[w + slot * n + o] = GAIN;
                    }
                    theta[b] = -GAIN * (arity as f64 - 0.5);
                    let c = logit(degrees[idx]);
                    theta[w2 + t] = c / 2.0;
                    bias += c / 2.0;
                }
                theta[b2] = bias;
            }
        }
    }
    let features = (0..n)
        .map(|o| (0..n).map(|i| if i == o { 1.0 } else { 0.0 }).collect())
        .collect();
    Ok((Params::from_vec(layout, theta)?, features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::GradTape;

    fn sig() -> Vec<PredicateSig> {
        vec![
            PredicateSig::grouped("chair", "types"),
            PredicateSig::new("partOf", 2),
            PredicateSig::grouped("cushion", "types"),
            PredicateSig::grouped("armRest", "types"),
            PredicateSig::new("big", 1),
        ]
    }

    #[test]
    fn layout_tiles_parameter_vector() {
        let l = Layout::new(&sig(), 3, &Widths::default()).unwrap();
        assert_eq!(l.heads.len(), 3);
        assert_eq!(l.heads[0].members, vec![0, 2, 3]);
        assert_eq!(l.slot(3), (0, 2));
        assert_eq!(l.slot(1), (1, 0));
        let mut end = 0;
        for h in &l.heads {
            assert_eq!(h.offset, end);
            end += h.n_params();
        }
        assert_eq!(end, l.n_params());
        // group: 10*(3+1) + 3*(10+1); partOf: 2*(6+1) + 1*(2+1); big: 10*4 + 11
        assert_eq!(l.n_params(), 73 + 17 + 51);
    }

    #[test]
    fn zero_weights() {
        let p = Params::zeros(Layout::new(&sig(), 2, &Widths::default()).unwrap());
        let o = [0.3, -0.2];
        assert_eq!(p.predict(4, &[&o]).unwrap(), 0.5);
        assert_eq!(p.predict(1, &[&o, &o]).unwrap(), 0.5);
        for k in [0, 2, 3] {
            assert!((p.predict(k, &[&o]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_linear_unit() {
        let s = vec![PredicateSig::new("p", 1)];
        let l = Layout::new(&s, 2, &Widths::uniform(0)).unwrap();
        let p = Params::from_vec(l, vec![1.0, -1.0, 0.0]).unwrap();
        let v = p.predict(0, &[&[2.0, 1.0]]).unwrap();
        assert!((v - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn dimension_errors() {
        let p = Params::zeros(Layout::new(&sig(), 2, &Widths::default()).unwrap());
        assert!(matches!(p.predict(1, &[&[0.0, 0.0]]), Err(Error::Dimension(_))));
        assert!(matches!(p.predict(0, &[&[0.0]]), Err(Error::Dimension(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let layout = Layout::new(&sig(), 2, &Widths::default()).unwrap();
        let p = Params::init(layout, 3);
        let a = [0.4, -1.2];
        let b = [0.9, 0.1];
        for pred in 0..5 {
            let objs: Vec<&[f64]> = if pred == 1 { vec![&a, &b] } else { vec![&a] };
            let mut tape = GradTape::new(p.theta());
            let v = predict_with(&mut tape, p.layout(), pred, &objs).unwrap();
            let g = tape.gradient(v).unwrap();
            for (j, gj) in g.iter().enumerate() {
                let eps = 1e-5;
                let mut up = p.clone();
                up.theta_mut()[j] += eps;
                let mut dn = p.clone();
                dn.theta_mut()[j] -= eps;
                let fd = (up.predict(pred, &objs).unwrap() - dn.predict(pred, &objs).unwrap())
                    / (2.0 * eps);
                let scale = fd.abs().max(gj.abs()).max(1e-6);
                assert!((fd - gj).abs() / scale < 1e-5, "pred {pred} param {j}");
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let layout = Layout::new(&sig(), 3, &Widths::default().with("partOf", 4)).unwrap();
        let p = Params::init(layout, 11);
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &p).unwrap();
        let q = read_checkpoint(&bytes).unwrap();
        assert_eq!(p.layout(), q.layout());
        let bits = |p: &Params| p.theta().iter().map(|t| t.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p), bits(&q));
        let mut again = Vec::new();
        write_checkpoint(&mut again, &q).unwrap();
        assert_eq!(bytes, again);

        let truncated = &bytes[..bytes.len() - 3];
        assert!(read_checkpoint(truncated).is_err());
    }

    #[test]
    fn degree_table_is_reproduced() {
        let s = sig();
        let n = 2;
        let base = HerbrandBase::new(&s, n);
        let degrees: Vec<f64> = base
            .atoms()
            .map(|a| match (a.pred, a.args.as_slice()) {
                (0, [0]) => 0.9,
                (0, [1]) => 0.4,
                (2, [0]) => 0.05,
                (2, [1]) => 0.5,
                (3, [0]) => 0.05,
                (3, [1]) => 0.1,
                (1, [0, 0]) => 0.001,
                (1, [0, 1]) => 0.01,
                (1, [1, 0]) => 0.95,
                (1, [1, 1]) => 0.001,
                (4, [o]) => 0.2 + 0.3 * *o as f64,
                _ => unreachable!(),
            })
            .collect();
        let (p, objects) = encode_degree_table(&s, n, &degrees).unwrap();
        let got = p.atom_degrees(&objects).unwrap();
        for (g, d) in got.iter().zip(&degrees) {
            assert!((g - d).abs() < 1e-12, "{g} vs {d}");
        }
    }
}
