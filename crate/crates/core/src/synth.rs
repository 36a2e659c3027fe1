//! Synthetic scene generator.
//!
//! Each object draws a type from `type_prior` and gets features equal to
//! its type's prototype plus Gaussian noise, followed by a one-dimensional
//! location. The remaining (ungrouped) atoms are proposed in random order
//! with probability `relation_density`; a proposal that falsifies a ground
//! instance of a rule is withdrawn with probability
//! `relation_rule_strength`. Binary relations are functional in their first
//! argument: once `r(a, b)` holds, no other `r(a, _)` is proposed (a part
//! belongs to one whole). An object that is the first argument of a true
//! binary atom is placed near the second argument, which makes relations
//! recoverable from features.

use std::fmt;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fol::{KnowledgeBase, PredId};
use crate::grounding::{HerbrandBase, Scene, World};
use crate::oracle;

/// Width of the interval locations are drawn from; unit scale keeps the
/// location input in the linear range of the hidden units.
const LOCATION_RANGE: f64 = 1.0;
/// A part sits this far to the right of its whole, so that "is a part of"
/// is not confused with "is the same object".
const PART_OFFSET: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_labeled_scenes: usize,
    pub n_unlabeled_scenes: usize,
    pub n_test_scenes: usize,
    /// Inclusive bounds on objects per scene.
    pub objects_per_scene: (usize, usize),
    pub n_type_classes: usize,
    /// Prototype dimensions plus one location dimension.
    pub feature_dim: usize,
    pub type_prior: Vec<f64>,
    pub relation_rule_strength: f64,
    pub relation_density: f64,
    pub feature_noise_sigma: f64,
    /// Spread of a part's location around its whole.
    pub location_sigma: f64,
    /// Seeds the type prototypes, which define the task.
    pub task_seed: u64,
    /// Seeds the scenes, which define the split.
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_labeled_scenes: 7,
            n_unlabeled_scenes: 200,
            n_test_scenes: 50,
            objects_per_scene: (3, 8),
            n_type_classes: 11,
            feature_dim: 12,
            type_prior: vec![1.0 / 11.0; 11],
            relation_rule_strength: 1.0,
            relation_density: 0.8,
            feature_noise_sigma: 1.0,
            location_sigma: 0.1,
            task_seed: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("synth config: {msg}")));
        let (lo, hi) = self.objects_per_scene;
        if lo == 0 || lo > hi {
            return bad(format!("objects_per_scene {lo}-{hi} is not a nonempty range of positive counts"));
        }
        if self.n_type_classes < 2 {
            return bad("n_type_classes must be at least 2".into());
        }
        if self.feature_dim < 2 {
            return bad("feature_dim must be at least 2".into());
        }
        if self.type_prior.len() != self.n_type_classes {
            return bad(format!(
                "type_prior has {} entries for {} classes",
                self.type_prior.len(),
                self.n_type_classes
            ));
        }
        if self.type_prior.iter().any(|p| p.is_nan() || *p < 0.0) || (self.type_prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("type_prior must be a probability vector".into());
        }
        for (name, v) in [
            ("relation_rule_strength", self.relation_rule_strength),
            ("relation_density", self.relation_density),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        for (name, v) in [
            ("feature_noise_sigma", self.feature_noise_sigma),
            ("location_sigma", self.location_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be nonnegative"));
            }
        }
        Ok(())
    }

    /// Parses `key = value` text; missing keys keep their defaults. A
    /// changed `n_type_classes` without `type_prior` gets a uniform prior.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut c = SynthConfig::default();
        let mut prior_given = false;
        config::apply(text, path, |k, v| {
            match k {
                "n_labeled_scenes" => c.n_labeled_scenes = config::num(k, v)?,
                "n_unlabeled_scenes" => c.n_unlabeled_scenes = config::num(k, v)?,
                "n_test_scenes" => c.n_test_scenes = config::num(k, v)?,
                "objects_per_scene" => {
                    let (lo, hi) = v.split_once('-').unwrap_or((v, v));
                    c.objects_per_scene = (config::num(k, lo.trim())?, config::num(k, hi.trim())?);
                }
                "n_type_classes" => c.n_type_classes = config::num(k, v)?,
                "feature_dim" => c.feature_dim = config::num(k, v)?,
                "type_prior" => {
                    prior_given = true;
                    c.type_prior = v
                        .split(',')
                        .map(|x| config::num(k, x.trim()))
                        .collect::<std::result::Result<_, _>>()?;
                }
                "relation_rule_strength" => c.relation_rule_strength = config::num(k, v)?,
                "relation_density" => c.relation_density = config::num(k, v)?,
                "feature_noise_sigma" => c.feature_noise_sigma = config::num(k, v)?,
                "location_sigma" => c.location_sigma = config::num(k, v)?,
                "task_seed" => c.task_seed = config::num(k, v)?,
                "seed" => c.seed = config::num(k, v)?,
                _ => return Err(format!("unknown key {k}")),
            }
            Ok(())
        })?;
        if !prior_given {
            c.type_prior = vec![1.0 / c.n_type_classes as f64; c.n_type_classes];
        }
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&config::read(path)?, path)
    }
}

impl fmt::Display for SynthConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n_labeled_scenes = {}", self.n_labeled_scenes)?;
        writeln!(f, "n_unlabeled_scenes = {}", self.n_unlabeled_scenes)?;
        writeln!(f, "n_test_scenes = {}", self.n_test_scenes)?;
        writeln!(f, "objects_per_scene = {}-{}", self.objects_per_scene.0, self.objects_per_scene.1)?;
        writeln!(f, "n_type_classes = {}", self.n_type_classes)?;
        writeln!(f, "feature_dim = {}", self.feature_dim)?;
        let prior: Vec<String> = self.type_prior.iter().map(|p| p.to_string()).collect();
        writeln!(f, "type_prior = {}", prior.join(", "))?;
        writeln!(f, "relation_rule_strength = {}", self.relation_rule_strength)?;
        writeln!(f, "relation_density = {}", self.relation_density)?;
        writeln!(f, "feature_noise_sigma = {}", self.feature_noise_sigma)?;
        writeln!(f, "location_sigma = {}", self.location_sigma)?;
        writeln!(f, "task_seed = {}", self.task_seed)?;
        writeln!(f, "seed = {}", self.seed)
    }
}

/// The knowledge base's single mutual-exclusivity group, which holds the
/// type predicates.
pub fn type_group(kb: &KnowledgeBase, n_types: usize) -> Result<Vec<PredId>> {
    let groups = kb.groups();
    match groups.as_slice() {
        [(_, members)] if members.len() == n_types => Ok(members.clone()),
        [(name, members)] => Err(Error::InvalidInput(format!(
            "group {name} has {} members but n_type_classes is {n_types}",
            members.len()
        ))),
        _ => Err(Error::InvalidKb(format!(
            "expected exactly one predicate group for the types, found {}",
            groups.len()
        ))),
    }
}

/// Generates a dataset; deterministic in the two seeds. Labeled and test
/// scenes keep their worlds, unlabeled scenes drop them.
pub fn generate(config: &SynthConfig, kb: &KnowledgeBase) -> Result<Dataset> {
    config.validate()?;
    if let Some(v) = kb.validate().first() {
        return Err(Error::InvalidKb(v.to_string()));
    }
    let types = type_group(kb, config.n_type_classes)?;
    let mut task_rng = ChaCha8Rng::seed_from_u64(config.task_seed);
    let protos: Vec<Vec<f64>> = (0..config.n_type_classes)
        .map(|_| {
            (0..config.feature_dim - 1)
                .map(|_| task_rng.sample(StandardNormal))
                .collect()
        })
        .collect();
    let prior = WeightedIndex::new(&config.type_prior)
        .map_err(|e| Error::InvalidInput(format!("synth config: type_prior: {e}")))?;
    let gen = Generator {
        config,
        kb,
        types: &types,
        protos: &protos,
        prior: &prior,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut make = |prefix: &str, count: usize, keep: bool| -> Result<Vec<Scene>> {
        (0..count)
            .map(|i| {
                let mut s = gen.scene(&mut rng, format!("{prefix}-{i}"))?;
                if !keep {
                    s.labels = None;
                }
                Ok(s)
            })
            .collect()
    };
    let labeled = make("labeled", config.n_labeled_scenes, true)?;
    let unlabeled = make("unlabeled", config.n_unlabeled_scenes, false)?;
    let test = make("test", config.n_test_scenes, true)?;
    Ok(Dataset {
        feature_dim: config.feature_dim,
        labeled,
        unlabeled,
        test,
    })
}

struct Generator<'a> {
    config: &'a SynthConfig,
    kb: &'a KnowledgeBase,
    types: &'a [PredId],
    protos: &'a [Vec<f64>],
    prior: &'a WeightedIndex<f64>,
}

impl Generator<'_> {
    fn scene(&self, rng: &mut ChaCha8Rng, id: String) -> Result<Scene> {
        let c = self.config;
        let sig = &self.kb.signature;
        let n = rng.random_range(c.objects_per_scene.0..=c.objects_per_scene.1);
        let kinds: Vec<usize> = (0..n).map(|_| self.prior.sample(rng)).collect();
        let base = HerbrandBase::new(sig, n);
        let mut w = World::all_false(base.len());
        for (o, &k) in kinds.iter().enumerate() {
            w.set(base.index(self.types[k], &[o]).expect("type atom"), true);
        }

        let insts = oracle::instances(self.kb, &base)?;
        let mut touching = vec![Vec::new(); base.len()];
        let mut leaves = Vec::new();
        for (k, g) in insts.iter().enumerate() {
            leaves.clear();
            g.leaves(&mut leaves);
            leaves.sort_unstable();
            leaves.dedup();
            for &a in &leaves {
                touching[a].push(k);
            }
        }
        let mut candidates: Vec<usize> = (0..sig.len())
            .filter(|p| !self.types.contains(p))
            .flat_map(|p| base.pred_range(p))
            .collect();
        candidates.shuffle(rng);
        // (predicate, first argument) pairs that already have a true binary atom
        let mut taken = vec![false; sig.len() * n];
        for a in candidates {
            if !rng.random_bool(c.relation_density) {
                continue;
            }
            let atom = base.atom(a).expect("in range");
            let key = (sig[atom.pred].arity == 2).then(|| atom.pred * n + atom.args[0]);
            if key.is_some_and(|k| taken[k]) {
                continue;
            }
            w.set(a, true);
            let ok = touching[a].iter().all(|&k| insts[k].truth(&|i| w.get(i)));
            if !ok && rng.random_bool(c.relation_rule_strength) {
                w.set(a, false);
            } else if let Some(k) = key {
                taken[k] = true;
            }
        }
        if c.relation_rule_strength == 1.0 {
            if let Some(k) = insts.iter().position(|g| !g.truth(&|i| w.get(i))) {
                return Err(Error::InvalidKb(format!(
                    "generated scene {id} violates a rule instance (#{k}) that adding atoms cannot repair"
                )));
            }
        }

        let mut loc: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..LOCATION_RANGE)).collect();
        let mut placed = vec![false; n];
        for (p, s) in sig.iter().enumerate() {
            if s.arity != 2 || self.types.contains(&p) {
                continue;
            }
            for i in base.pred_range(p) {
                let args = base.atom(i).expect("in range").args;
                let (part, whole) = (args[0], args[1]);
                if w.get(i) && part != whole && !placed[part] {
                    let jitter: f64 = rng.sample(StandardNormal);
                    loc[part] = loc[whole] + PART_OFFSET + c.location_sigma * jitter;
                    placed[part] = true;
                }
            }
        }
        let objects = kinds
            .iter()
            .zip(&loc)
            .map(|(&k, &l)| {
                let mut x: Vec<f64> = self.protos[k]
                    .iter()
                    .map(|&m| m + c.feature_noise_sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                x.push(l);
                x
            })
            .collect();
        Ok(Scene::new(id, objects).with_labels(w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let c = SynthConfig {
            type_prior: {
                let mut p = vec![0.05; 11];
                p[0] = 0.5;
                p
            },
            objects_per_scene: (2, 5),
            seed: 3,
            ..SynthConfig::default()
        };
        let back = SynthConfig::parse(&c.to_string(), Path::new("s")).unwrap();
        assert_eq!(back.objects_per_scene, (2, 5));
        assert_eq!(back.seed, 3);
        for (a, b) in back.type_prior.iter().zip(&c.type_prior) {
            assert!((a - b).abs() < 1e-15);
        }
        let three = SynthConfig::parse("n_type_classes = 3", Path::new("s")).unwrap();
        assert_eq!(three.type_prior.len(), 3);
        assert!(SynthConfig::parse("type_prior = 0.5, 0.4", Path::new("s")).is_err());
    }
}
