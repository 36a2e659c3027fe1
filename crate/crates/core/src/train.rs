//! Semi-supervised training: a supervised cross-entropy term over labeled
//! scenes plus a reasoning loss over unlabeled scenes, minimized with
//! RMSProp on sampled minibatches.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config;
use crate::dataset::Dataset;
use crate::diagnostics::{self, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::fol::{decompose_implication, KnowledgeBase};
use crate::grounding::{tuples, HerbrandBase, Sample, Scene, TupleSampler};
use crate::model::{Layout, Output, Params, Widths};
use crate::prl::Evaluator;
use crate::tape::{GradTape, Ops, Plain};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Labeled data only.
    Supervised,
    /// Plus the universal-quantifier loss on unlabeled data.
    Unnormalized,
    /// Plus the MP/MT-normalized loss on unlabeled data.
    Normalized,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "supervised" => Ok(Mode::Supervised),
            "unnormalized" => Ok(Mode::Unnormalized),
            "normalized" => Ok(Mode::Normalized),
            _ => Err(format!("unknown mode {s:?}")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Supervised => "supervised",
            Mode::Unnormalized => "unnormalized",
            Mode::Normalized => "normalized",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Share of the normalized loss given to Modus Ponens; normalized mode only.
    pub mu: f64,
    pub iterations: usize,
    pub batch_size_labeled: usize,
    pub batch_size_unlabeled: usize,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    /// Weight of the reasoning loss relative to the supervised loss.
    pub dr_weight: f64,
    pub seed: u64,
    /// Diagnostics are recorded every `log_every` steps (0: first and last only).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Normalized,
            mu: 0.25,
            iterations: 6000,
            batch_size_labeled: 64,
            batch_size_unlabeled: 64,
            learning_rate: 1e-2,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            dr_weight: 1.0,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("train config: {msg}")));
        if !(0.0..=1.0).contains(&self.mu) {
            return bad("mu must lie in [0, 1]");
        }
        if self.batch_size_labeled == 0 || self.batch_size_unlabeled == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return bad("rmsprop_decay must lie in (0, 1)");
        }
        if !(self.rmsprop_epsilon > 0.0 && self.rmsprop_epsilon.is_finite()) {
            return bad("rmsprop_epsilon must be positive");
        }
        if !(self.dr_weight >= 0.0 && self.dr_weight.is_finite()) {
            return bad("dr_weight must be nonnegative");
        }
        Ok(())
    }

    /// Parses `key = value` text; missing keys keep their defaults.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut c = TrainConfig::default();
        config::apply(text, path, |k, v| {
            match k {
                "mode" => c.mode = v.parse()?,
                "mu" => c.mu = config::num(k, v)?,
                "iterations" => c.iterations = config::num(k, v)?,
                "batch_size_labeled" => c.batch_size_labeled = config::num(k, v)?,
                "batch_size_unlabeled" => c.batch_size_unlabeled = config::num(k, v)?,
                "learning_rate" => c.learning_rate = config::num(k, v)?,
                "rmsprop_decay" => c.rmsprop_decay = config::num(k, v)?,
                "rmsprop_epsilon" => c.rmsprop_epsilon = config::num(k, v)?,
                "dr_weight" => c.dr_weight = config::num(k, v)?,
                "seed" => c.seed = config::num(k, v)?,
                "log_every" => c.log_every = config::num(k, v)?,
                _ => return Err(format!("unknown key {k}")),
            }
            Ok(())
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&config::read(path)?, path)
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode = {}", self.mode)?;
        writeln!(f, "mu = {}", self.mu)?;
        writeln!(f, "iterations = {}", self.iterations)?;
        writeln!(f, "batch_size_labeled = {}", self.batch_size_labeled)?;
        writeln!(f, "batch_size_unlabeled = {}", self.batch_size_unlabeled)?;
        writeln!(f, "learning_rate = {}", self.learning_rate)?;
        writeln!(f, "rmsprop_decay = {}", self.rmsprop_decay)?;
        writeln!(f, "rmsprop_epsilon = {}", self.rmsprop_epsilon)?;
        writeln!(f, "dr_weight = {}", self.dr_weight)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "log_every = {}", self.log_every)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Running average of squared gradients.
    pub acc: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        OptimizerState {
            acc: vec![0.0; n],
            step: 0,
        }
    }
}

/// One RMSProp update. Nothing is modified when the gradient has the wrong
/// length or a non-finite entry.
pub fn rmsprop_step(params: &mut Params, grad: &[f64], state: &mut OptimizerState, config: &TrainConfig) -> Result<()> {
    if grad.len() != params.len() || state.acc.len() != params.len() {
        return Err(Error::Dimension(format!(
            "gradient of length {} and accumulator of length {} for {} parameters",
            grad.len(),
            state.acc.len(),
            params.len()
        )));
    }
    if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {j}")));
    }
    let rho = config.rmsprop_decay;
    for ((t, a), &g) in params.theta_mut().iter_mut().zip(&mut state.acc).zip(grad) {
        *a = rho * *a + (1.0 - rho) * g * g;
        *t -= config.learning_rate * g / (a.sqrt() + config.rmsprop_epsilon);
    }
    state.step += 1;
    Ok(())
}

/// One supervised sampling unit: the categorical label of a mutual
/// exclusivity group on one object, or a single ungrouped ground atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelUnit {
    pub scene: usize,
    pub head: usize,
    pub args: Vec<usize>,
}

/// Every unit of every scene, in scene, head and tuple order.
pub fn label_units(layout: &Layout, scenes: &[Scene]) -> Result<Vec<LabelUnit>> {
    let mut out = Vec::new();
    for (si, s) in scenes.iter().enumerate() {
        if s.labels.is_none() {
            return Err(Error::InvalidInput(format!("scene {} has no labels", s.id)));
        }
        for (hi, h) in layout.heads.iter().enumerate() {
            let arity = layout.signature[h.members[0]].arity;
            out.extend(tuples(arity, s.len()).map(|b| LabelUnit {
                scene: si,
                head: hi,
                args: b.0,
            }));
        }
    }
    Ok(out)
}

/// Cross-entropy of one unit. A group whose label has exactly one true
/// member contributes the softmax log-likelihood of that member; anything
/// else is scored as independent Bernoulli atoms.
fn unit_loss<O: Ops>(ev: &mut Evaluator<'_, O>, key: usize, scene: &Scene, unit: &LabelUnit) -> Result<O::V> {
    let layout = ev.params().layout();
    let head = &layout.heads[unit.head];
    let world = scene
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("scene {} has no labels", scene.id)))?;
    let base = HerbrandBase::new(&layout.signature, scene.len());
    let truth: Vec<bool> = head
        .members
        .iter()
        .map(|&p| world.get(base.index(p, &unit.args).expect("unit inside the scene")))
        .collect();
    let members = head.members.clone();
    if head.output == Output::Softmax && truth.iter().filter(|&&t| t).count() == 1 {
        let k = truth.iter().position(|&t| t).expect("one true member");
        let p = ev.atom(key, scene, members[k], &unit.args)?;
        return Ok(ev.neg_log(p));
    }
    let mut terms = Vec::with_capacity(members.len());
    for (&pred, t) in members.iter().zip(truth) {
        let p = ev.atom(key, scene, pred, &unit.args)?;
        let q = if t { p } else { ev.ops.one_minus(p) };
        terms.push(ev.neg_log(q));
    }
    Ok(ev.ops.sum(&terms))
}

/// Summed cross-entropy over every unit of the labeled scenes.
pub fn supervised_loss(scenes: &[Scene], params: &Params) -> Result<f64> {
    let units = label_units(params.layout(), scenes)?;
    let mut ev = Evaluator::plain(params);
    let mut terms = Vec::with_capacity(units.len());
    for u in &units {
        terms.push(unit_loss(&mut ev, u.scene, &scenes[u.scene], u)?);
    }
    Ok(terms.iter().sum())
}

/// Mean cross-entropy per unit; `None` without units.
pub fn mean_supervised_loss(scenes: &[Scene], params: &Params) -> Result<Option<f64>> {
    let n = label_units(params.layout(), scenes)?.len();
    Ok((n > 0).then(|| supervised_loss(scenes, params)).transpose()?.map(|l| l / n as f64))
}

/// Minibatch objective, recorded on any [`Ops`] backend.
///
/// The supervised part is the mean unit cross-entropy of the labeled batch.
/// The reasoning part is the mean `-ln p` of the unlabeled batch
/// (unnormalized), or for each formula its normalized loss weighted by the
/// formula's share of the batch (normalized). Labeled scene `i` uses
/// evaluator key `i`, unlabeled scene `j` key `labeled.len() + j`.
#[allow(clippy::too_many_arguments)]
pub fn objective_with<O: Ops>(
    ev: &mut Evaluator<'_, O>,
    kb: &KnowledgeBase,
    labeled: &[Scene],
    label_batch: &[LabelUnit],
    unlabeled: &[Scene],
    batch: &[Sample],
    config: &TrainConfig,
) -> Result<(O::V, O::V, O::V)> {
    let mut sup_terms = Vec::with_capacity(label_batch.len());
    for u in label_batch {
        let scene = labeled
            .get(u.scene)
            .ok_or_else(|| Error::InvalidInput(format!("label unit refers to scene {}", u.scene)))?;
        sup_terms.push(unit_loss(ev, u.scene, scene, u)?);
    }
    let sup_sum = ev.ops.sum(&sup_terms);
    let sup = ev.ops.lin(sup_sum, 1.0 / label_batch.len().max(1) as f64, 0.0);
    if config.mode == Mode::Supervised {
        let zero = ev.ops.constant(0.0);
        return Ok((sup, zero, sup));
    }
    if batch.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} mode needs a nonempty unlabeled batch",
            config.mode
        )));
    }
    let key_base = labeled.len();
    let scale = 1.0 / batch.len() as f64;
    let dr = match config.mode {
        Mode::Unnormalized => {
            let total = ev.batch_forall_loss(kb, batch, unlabeled, key_base)?;
            ev.ops.lin(total, scale, 0.0)
        }
        _ => {
            let mut parts = Vec::new();
            for (fi, f) in kb.formulas.iter().enumerate() {
                let slice: Vec<Sample> = batch.iter().filter(|s| s.formula == fi).cloned().collect();
                if slice.is_empty() {
                    continue;
                }
                let l = ev.normalized_loss(kb, &slice, unlabeled, key_base, config.mu)?;
                let w = if decompose_implication(f).is_some() {
                    slice.len() as f64 * scale
                } else {
                    scale
                };
                parts.push(ev.ops.lin(l, w, 0.0));
            }
            ev.ops.sum(&parts)
        }
    };
    let weighted = ev.ops.lin(dr, config.dr_weight, 0.0);
    let total = ev.ops.add(sup, weighted);
    Ok((sup, dr, total))
}

/// Value of the minibatch objective.
pub fn dr_objective(
    kb: &KnowledgeBase,
    labeled: &[Scene],
    label_batch: &[LabelUnit],
    unlabeled: &[Scene],
    batch: &[Sample],
    params: &Params,
    config: &TrainConfig,
) -> Result<f64> {
    let mut ev = Evaluator::new(params, Plain::new(params.theta()));
    Ok(objective_with(&mut ev, kb, labeled, label_batch, unlabeled, batch, config)?.2)
}

/// Value and tape gradient of the minibatch objective. Mixing weights of
/// the normalized loss are constants for differentiation.
pub fn dr_objective_gradient(
    kb: &KnowledgeBase,
    labeled: &[Scene],
    label_batch: &[LabelUnit],
    unlabeled: &[Scene],
    batch: &[Sample],
    params: &Params,
    config: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let mut ev = Evaluator::new(params, GradTape::new(params.theta()));
    let (_, _, total) = objective_with(&mut ev, kb, labeled, label_batch, unlabeled, batch, config)?;
    let value = total.value();
    let grad = ev.into_ops().gradient(total)?;
    Ok((value, grad))
}

/// Uniform sampler, with replacement, over label units.
#[derive(Debug, Clone)]
pub struct LabelSampler {
    units: Vec<LabelUnit>,
    rng: ChaCha8Rng,
}

impl LabelSampler {
    pub fn new(units: Vec<LabelUnit>, seed: u64) -> Self {
        LabelSampler {
            units,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn sample(&mut self, n: usize) -> Vec<LabelUnit> {
        if self.units.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| self.units[self.rng.random_range(0..self.units.len())].clone())
            .collect()
    }
}

/// Independent seed for stream `k` of a run.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng.next_u64()
}

const INIT_STREAM: u64 = 1;
const LABELED_STREAM: u64 = 2;
const UNLABELED_STREAM: u64 = 3;

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: Params,
    pub records: Vec<DiagnosticsRecord>,
}

/// Initial parameters of a run.
pub fn initial_params(kb: &KnowledgeBase, feature_dim: usize, seed: u64) -> Result<Params> {
    let layout = Layout::new(&kb.signature, feature_dim, &Widths::default())?;
    Ok(Params::init(layout, derive_seed(seed, INIT_STREAM)))
}

/// Runs `config.iterations` RMSProp steps from seeded initial parameters,
/// recording diagnostics at step 0, every `log_every` steps, and at the end.
pub fn train(data: &Dataset, kb: &KnowledgeBase, config: &TrainConfig) -> Result<TrainOutput> {
    train_with(data, kb, config, |_| {})
}

/// Like [`train`], handing each record to `on_record` as it is made.
pub fn train_with(
    data: &Dataset,
    kb: &KnowledgeBase,
    config: &TrainConfig,
    mut on_record: impl FnMut(&DiagnosticsRecord),
) -> Result<TrainOutput> {
    config.validate()?;
    let violations = kb.validate();
    if let Some(v) = violations.first() {
        return Err(Error::InvalidKb(v.to_string()));
    }
    data.check(&kb.signature)?;
    let mut params = initial_params(kb, data.feature_dim, config.seed)?;
    let mut labels = LabelSampler::new(
        label_units(params.layout(), &data.labeled)?,
        derive_seed(config.seed, LABELED_STREAM),
    );
    let mut tuples = match config.mode {
        Mode::Supervised => None,
        _ => Some(TupleSampler::new(
            kb,
            &data.unlabeled,
            derive_seed(config.seed, UNLABELED_STREAM),
        )?),
    };
    let mut state = OptimizerState::new(params.len());
    let mut records = Vec::new();
    let mut log = |t: usize, params: &Params, records: &mut Vec<DiagnosticsRecord>| -> Result<()> {
        let r = diagnostics::snapshot(kb, data, params, t)?;
        on_record(&r);
        records.push(r);
        Ok(())
    };
    for t in 0..config.iterations {
        if t == 0 || (config.log_every > 0 && t % config.log_every == 0) {
            log(t, &params, &mut records)?;
        }
        let label_batch = labels.sample(config.batch_size_labeled);
        let batch = tuples
            .as_mut()
            .map(|s| s.sample(config.batch_size_unlabeled))
            .unwrap_or_default();
        let (value, grad) =
            dr_objective_gradient(kb, &data.labeled, &label_batch, &data.unlabeled, &batch, &params, config)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {t}")));
        }
        rmsprop_step(&mut params, &grad, &mut state, config)
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at iteration {t}")),
                e => e,
            })?;
    }
    log(config.iterations, &params, &mut records)?;
    Ok(TrainOutput { params, records })
}

/// Held-out quality of a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    /// Fraction of (group, object) pairs whose most probable member is the
    /// labeled one; `None` without groups.
    pub type_accuracy: Option<f64>,
    /// Rank AUC of all relation atoms (arity at least 2) pooled; `None`
    /// when there are no positives or no negatives.
    pub relation_auc: Option<f64>,
}

pub fn evaluate(params: &Params, scenes: &[Scene]) -> Result<EvalMetrics> {
    let layout = params.layout();
    let labeled: Vec<&Scene> = scenes.iter().filter(|s| s.labels.is_some()).collect();
    if labeled.is_empty() {
        return Err(Error::InvalidInput("no labeled test scenes".into()));
    }
    let (mut correct, mut total) = (0usize, 0usize);
    let (mut scores, mut truth) = (Vec::new(), Vec::new());
    for (key, s) in labeled.iter().enumerate() {
        let w = s.labels.as_ref().expect("filtered above");
        let base = HerbrandBase::new(&layout.signature, s.len());
        let mut ev = Evaluator::plain(params);
        for h in &layout.heads {
            if h.output == Output::Softmax {
                for o in 0..s.len() {
                    let labels: Vec<usize> = (0..h.members.len())
                        .filter(|&k| w.get(base.index(h.members[k], &[o]).expect("in base")))
                        .collect();
                    if labels.len() != 1 {
                        continue;
                    }
                    let mut best = (0, f64::NEG_INFINITY);
                    for (k, &p) in h.members.iter().enumerate() {
                        let v = ev.atom(key, s, p, &[o])?;
                        if v > best.1 {
                            best = (k, v);
                        }
                    }
                    total += 1;
                    correct += usize::from(best.0 == labels[0]);
                }
            }
        }
        for (p, sig) in layout.signature.iter().enumerate() {
            if sig.arity < 2 {
                continue;
            }
            for i in base.pred_range(p) {
                let atom = base.atom(i).expect("index in range");
                scores.push(ev.atom(key, s, p, &atom.args)?);
                truth.push(w.get(i));
            }
        }
    }
    Ok(EvalMetrics {
        type_accuracy: (total > 0).then(|| correct as f64 / total as f64),
        relation_auc: auc(&scores, &truth),
    })
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (midranks).
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let p = pos as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}
