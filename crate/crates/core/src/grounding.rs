//! Finite-domain grounding: Herbrand bases, bindings, and the tuple sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fol::{Formula, KnowledgeBase, PredId, PredicateSig};

/// One domain: a picture's objects as feature vectors, with its correct
/// world when labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub objects: Vec<Vec<f64>>,
    pub labels: Option<World>,
}

impl Scene {
    pub fn new(id: impl Into<String>, objects: Vec<Vec<f64>>) -> Self {
        Scene {
            id: id.into(),
            objects,
            labels: None,
        }
    }

    pub fn with_labels(mut self, labels: World) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Checks feature lengths against `m` and label coverage against the
    /// scene's Herbrand base.
    pub fn check(&self, signature: &[PredicateSig], m: usize) -> Result<()> {
        if let Some(bad) = self.objects.iter().position(|o| o.len() != m) {
            return Err(Error::Dimension(format!(
                "scene {}: object {bad} has {} features, expected {m}",
                self.id,
                self.objects[bad].len()
            )));
        }
        if let Some(w) = &self.labels {
            let size = HerbrandBase::new(signature, self.len()).len();
            if w.len() != size {
                return Err(Error::InvalidInput(format!(
                    "scene {}: labels cover {} atoms, herbrand base has {size}",
                    self.id,
                    w.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroundAtom {
    pub pred: PredId,
    pub args: Vec<usize>,
}

/// All ground atoms of a signature over `n` objects, ordered by predicate
/// declaration order and then lexicographically by argument tuple.
///
/// Indices are computed arithmetically, so lookups never hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HerbrandBase {
    n_objects: usize,
    arities: Vec<usize>,
    offsets: Vec<usize>,
    len: usize,
}

impl HerbrandBase {
    pub fn new(signature: &[PredicateSig], n_objects: usize) -> Self {
        let mut offsets = Vec::with_capacity(signature.len());
        let mut len = 0;
        for p in signature {
            offsets.push(len);
            len += n_objects.pow(p.arity as u32);
        }
        HerbrandBase {
            n_objects,
            arities: signature.iter().map(|p| p.arity).collect(),
            offsets,
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    pub fn index(&self, pred: PredId, args: &[usize]) -> Option<usize> {
        let arity = *self.arities.get(pred)?;
        if args.len() != arity || args.iter().any(|&a| a >= self.n_objects) {
            return None;
        }
        let local = args.iter().fold(0, |acc, &a| acc * self.n_objects + a);
        Some(self.offsets[pred] + local)
    }

    pub fn atom(&self, index: usize) -> Option<GroundAtom> {
        if index >= self.len {
            return None;
        }
        let pred = self.offsets.partition_point(|&o| o <= index) - 1;
        let args = decode_tuple(index - self.offsets[pred], self.arities[pred], self.n_objects);
        Some(GroundAtom { pred, args })
    }

    /// Range of indices belonging to one predicate.
    pub fn pred_range(&self, pred: PredId) -> std::ops::Range<usize> {
        let start = self.offsets[pred];
        start..start + self.n_objects.pow(self.arities[pred] as u32)
    }

    pub fn atoms(&self) -> impl Iterator<Item = GroundAtom> + '_ {
        (0..self.len).map(|i| self.atom(i).expect("index in range"))
    }
}

pub fn herbrand_base(scene: &Scene, signature: &[PredicateSig]) -> HerbrandBase {
    HerbrandBase::new(signature, scene.len())
}

/// Binary truth assignment over a Herbrand base, indexed like the base.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct World {
    values: Vec<bool>,
}

impl World {
    pub fn new(values: Vec<bool>) -> Self {
        World { values }
    }

    pub fn all_false(len: usize) -> Self {
        World {
            values: vec![false; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, index: usize) -> bool {
        self.values[index]
    }

    pub fn set(&mut self, index: usize, value: bool) {
        self.values[index] = value;
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }
}

/// Objects assigned to a formula's quantified variables, positionally
/// aligned with its quantifier prefix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Binding(pub Vec<usize>);

impl Binding {
    pub fn objects(&self) -> &[usize] {
        &self.0
    }

    /// Object bound to `var`, given the prefix the binding was made for.
    pub fn lookup(&self, vars: &[String], var: &str) -> Option<usize> {
        vars.iter().position(|v| v == var).and_then(|i| self.0.get(i).copied())
    }
}

fn decode_tuple(mut index: usize, k: usize, n: usize) -> Vec<usize> {
    let mut out = vec![0; k];
    for slot in out.iter_mut().rev() {
        *slot = index % n;
        index /= n;
    }
    out
}

/// `n^k` without overflow surprises.
pub fn binding_count(k: usize, n: usize) -> usize {
    n.checked_pow(k as u32).expect("binding count overflows usize")
}

/// Every k-tuple over `n` objects in lexicographic order, repetition allowed.
pub fn tuples(k: usize, n: usize) -> impl Iterator<Item = Binding> {
    let total = if n == 0 && k > 0 { 0 } else { binding_count(k, n) };
    (0..total).map(move |i| Binding(decode_tuple(i, k, n)))
}

pub fn enumerate_bindings(f: &Formula, scene: &Scene) -> impl Iterator<Item = Binding> {
    tuples(f.arity(), scene.len())
}

/// One draw of the minibatch sampler.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sample {
    pub formula: usize,
    pub scene: usize,
    pub binding: Binding,
}

/// Uniform sampler, with replacement, over the pooled
/// (formula, scene, binding) universe.
#[derive(Debug, Clone)]
pub struct TupleSampler {
    rng: ChaCha8Rng,
    // (formula, scene, arity, objects, first universe index)
    blocks: Vec<(usize, usize, usize, usize, u64)>,
    total: u64,
}

impl TupleSampler {
    pub fn new(kb: &KnowledgeBase, scenes: &[Scene], seed: u64) -> Result<Self> {
        Self::for_formulas(kb, &(0..kb.formulas.len()).collect::<Vec<_>>(), scenes, seed)
    }

    /// Restricts the universe to the listed formulas.
    pub fn for_formulas(
        kb: &KnowledgeBase,
        formulas: &[usize],
        scenes: &[Scene],
        seed: u64,
    ) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut total = 0u64;
        for &fi in formulas {
            let k = kb.formulas[fi].arity();
            for (si, s) in scenes.iter().enumerate() {
                let count = tuples_len(k, s.len()) as u64;
                if count > 0 {
                    blocks.push((fi, si, k, s.len(), total));
                    total += count;
                }
            }
        }
        if total == 0 {
            return Err(Error::EmptyUniverse);
        }
        Ok(TupleSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            blocks,
            total,
        })
    }

    pub fn universe_size(&self) -> u64 {
        self.total
    }

    pub fn sample(&mut self, batch_size: usize) -> Vec<Sample> {
        (0..batch_size)
            .map(|_| {
                let u = self.rng.random_range(0..self.total);
                let b = self.blocks.partition_point(|blk| blk.4 <= u) - 1;
                let (formula, scene, k, n, start) = self.blocks[b];
                Sample {
                    formula,
                    scene,
                    binding: Binding(decode_tuple((u - start) as usize, k, n)),
                }
            })
            .collect()
    }
}

fn tuples_len(k: usize, n: usize) -> usize {
    if n == 0 && k > 0 {
        0
    } else {
        binding_count(k, n)
    }
}

/// Draws `batch_size` triples uniformly with replacement; deterministic in
/// `seed`.
pub fn sample_batch(
    kb: &KnowledgeBase,
    scenes: &[Scene],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    if batch_size == 0 {
        return Ok(Vec::new());
    }
    Ok(TupleSampler::new(kb, scenes, seed)?.sample(batch_size))
}
