//! Reasoning-quality diagnostics: average Modus Ponens / Modus Tollens
//! mixing weights, and the share of each kind of gradient mass that is
//! correctly reasoned or correctly updated under the labeled worlds.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fol::{decompose_implication, KnowledgeBase};
use crate::grounding::{enumerate_bindings, Binding, HerbrandBase, Sample, Scene, TupleSampler};
use crate::model::Params;
use crate::oracle;
use crate::prl::{weights_from_degrees, Evaluator};
use crate::train;

/// Above this many implication bindings, diagnostics use a seeded sample.
pub const EXHAUSTIVE_LIMIT: usize = 100_000;
pub const SAMPLE_SIZE: usize = 2000;
pub const SAMPLE_SEED: u64 = 0;

/// Metric CSV columns, in order.
pub const COLUMNS: [&str; 11] = [
    "iteration",
    "avg_d_mp",
    "avg_d_mt",
    "cr_mp",
    "cr_mt",
    "cu_mp",
    "cu_mt",
    "supervised_loss",
    "dr_loss",
    "type_accuracy",
    "relation_auc",
];

/// One row of the metrics stream. `None` marks an undefined value (for
/// instance a ratio whose gradient mass vanished).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiagnosticsRecord {
    pub iteration: usize,
    pub avg_d_mp: Option<f64>,
    pub avg_d_mt: Option<f64>,
    pub cr_mp: Option<f64>,
    pub cr_mt: Option<f64>,
    pub cu_mp: Option<f64>,
    pub cu_mt: Option<f64>,
    pub supervised_loss: Option<f64>,
    pub dr_loss: Option<f64>,
    pub type_accuracy: Option<f64>,
    pub relation_auc: Option<f64>,
}

impl DiagnosticsRecord {
    fn values(&self) -> [Option<f64>; 10] {
        [
            self.avg_d_mp,
            self.avg_d_mt,
            self.cr_mp,
            self.cr_mt,
            self.cu_mp,
            self.cu_mt,
            self.supervised_loss,
            self.dr_loss,
            self.type_accuracy,
            self.relation_auc,
        ]
    }

    fn from_values(iteration: usize, v: [Option<f64>; 10]) -> Self {
        DiagnosticsRecord {
            iteration,
            avg_d_mp: v[0],
            avg_d_mt: v[1],
            cr_mp: v[2],
            cr_mt: v[3],
            cu_mp: v[4],
            cu_mt: v[5],
            supervised_loss: v[6],
            dr_loss: v[7],
            type_accuracy: v[8],
            relation_auc: v[9],
        }
    }
}

/// Mixing weights of one implication instance, with the labeled truth of
/// its antecedent and consequent when known.
#[derive(Debug, Clone, Copy)]
struct Weighed {
    d_mp: f64,
    d_mt: f64,
    truth: Option<(bool, bool)>,
}

fn implication_indices(kb: &KnowledgeBase) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..kb.formulas.len())
        .filter(|&i| decompose_implication(&kb.formulas[i]).is_some())
        .collect();
    if idx.is_empty() {
        return Err(Error::InvalidKb("no implication formulas".into()));
    }
    Ok(idx)
}

fn weigh_scene(
    kb: &KnowledgeBase,
    scene: &Scene,
    params: &Params,
    pairs: &[(usize, Binding)],
    with_truth: bool,
) -> Result<Vec<Weighed>> {
    let mut ev = Evaluator::plain(params);
    let base = HerbrandBase::new(&kb.signature, scene.len());
    let mut out = Vec::with_capacity(pairs.len());
    for (fi, b) in pairs {
        let f = &kb.formulas[*fi];
        let (a, c) = ev.implication_parts(0, scene, f, b)?;
        let w = weights_from_degrees(a, c);
        let truth = match (&scene.labels, with_truth) {
            (Some(world), true) => {
                let (ante, cons) = decompose_implication(f).expect("implication");
                let vars = f.prefix().0;
                Some((
                    oracle::truth(ante, vars, b, world, &base)?,
                    oracle::truth(cons, vars, b, world, &base)?,
                ))
            }
            (None, true) => {
                return Err(Error::InvalidInput(format!("scene {} has no labels", scene.id)))
            }
            _ => None,
        };
        out.push(Weighed {
            d_mp: w.d_mp,
            d_mt: w.d_mt,
            truth,
        });
    }
    Ok(out)
}

/// Weights of every implication binding in scene order, or of a seeded
/// sample of them when there are more than [`EXHAUSTIVE_LIMIT`].
fn weigh(kb: &KnowledgeBase, scenes: &[Scene], params: &Params, with_truth: bool) -> Result<Vec<Weighed>> {
    let imps = implication_indices(kb)?;
    let count: usize = scenes
        .iter()
        .map(|s| imps.iter().map(|&i| enumerate_bindings(&kb.formulas[i], s).count()).sum::<usize>())
        .sum();
    let per_scene: Vec<Vec<(usize, Binding)>> = if count <= EXHAUSTIVE_LIMIT {
        scenes
            .iter()
            .map(|s| {
                imps.iter()
                    .flat_map(|&i| enumerate_bindings(&kb.formulas[i], s).map(move |b| (i, b)))
                    .collect()
            })
            .collect()
    } else {
        let mut grouped = vec![Vec::new(); scenes.len()];
        let samples: Vec<Sample> = TupleSampler::for_formulas(kb, &imps, scenes, SAMPLE_SEED)?.sample(SAMPLE_SIZE);
        for s in samples {
            grouped[s.scene].push((s.formula, s.binding));
        }
        grouped
    };
    let parts: Vec<Result<Vec<Weighed>>> = scenes
        .par_iter()
        .zip(&per_scene)
        .map(|(s, pairs)| weigh_scene(kb, s, params, pairs, with_truth))
        .collect();
    let mut out = Vec::with_capacity(count.min(EXHAUSTIVE_LIMIT));
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Mean `d_mp` and `d_mt` over all (implication formula, binding) pairs of
/// the scenes. Errors without implication formulas; both means are zero
/// when the scenes have no bindings.
pub fn avg_weights(kb: &KnowledgeBase, scenes: &[Scene], params: &Params) -> Result<(f64, f64)> {
    let w = weigh(kb, scenes, params, false)?;
    if w.is_empty() {
        return Ok((0.0, 0.0));
    }
    let n = w.len() as f64;
    Ok((
        w.iter().map(|x| x.d_mp).sum::<f64>() / n,
        w.iter().map(|x| x.d_mt).sum::<f64>() / n,
    ))
}

/// Correctly-reasoned and correctly-updated shares of MP and MT mass.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Ratios {
    pub cr_mp: Option<f64>,
    pub cr_mt: Option<f64>,
    pub cu_mp: Option<f64>,
    pub cu_mt: Option<f64>,
}

/// MP mass counts as correctly reasoned when antecedent and consequent are
/// both true in the labeled world, and as correctly updated when the
/// consequent is. MT mass counts as correctly reasoned when both are false,
/// and as correctly updated when the antecedent is false. A ratio with zero
/// total mass is `None`.
pub fn cr_cu_ratios(kb: &KnowledgeBase, scenes: &[Scene], params: &Params) -> Result<Ratios> {
    let w = weigh(kb, scenes, params, true)?;
    let (mut mp, mut mt) = (0.0, 0.0);
    let (mut cr_mp, mut cr_mt, mut cu_mp, mut cu_mt) = (0.0, 0.0, 0.0, 0.0);
    for x in &w {
        let (a, c) = x.truth.expect("weighed with truth");
        mp += x.d_mp;
        mt += x.d_mt;
        if c {
            cu_mp += x.d_mp;
            if a {
                cr_mp += x.d_mp;
            }
        }
        if !a {
            cu_mt += x.d_mt;
            if !c {
                cr_mt += x.d_mt;
            }
        }
    }
    let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);
    Ok(Ratios {
        cr_mp: ratio(cr_mp, mp),
        cr_mt: ratio(cr_mt, mt),
        cu_mp: ratio(cu_mp, mp),
        cu_mt: ratio(cu_mt, mt),
    })
}

/// Mean `-ln p` over every instance of every formula in the scenes.
pub fn mean_forall_loss(kb: &KnowledgeBase, scenes: &[Scene], params: &Params) -> Result<Option<f64>> {
    let parts: Vec<Result<(f64, usize)>> = scenes
        .par_iter()
        .map(|s| {
            let mut ev = Evaluator::plain(params);
            let (mut sum, mut n) = (0.0, 0);
            for f in &kb.formulas {
                n += enumerate_bindings(f, s).count();
                sum += ev.forall_loss(f, std::slice::from_ref(s), 0)?;
            }
            Ok((sum, n))
        })
        .collect();
    let (mut sum, mut n) = (0.0, 0);
    for p in parts {
        let (s, k) = p?;
        sum += s;
        n += k;
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// Full diagnostics of `params` on a dataset. Mixing weights are averaged
/// over the unlabeled scenes (the labeled ones when there are none); ratios
/// and held-out metrics use the test scenes; losses are per-unit and
/// per-instance means over the labeled and unlabeled scenes.
pub fn snapshot(kb: &KnowledgeBase, data: &Dataset, params: &Params, iteration: usize) -> Result<DiagnosticsRecord> {
    let has_imp = kb.formulas.iter().any(|f| decompose_implication(f).is_some());
    let train_scenes = if data.unlabeled.is_empty() { &data.labeled } else { &data.unlabeled };
    let mut r = DiagnosticsRecord {
        iteration,
        ..Default::default()
    };
    if has_imp {
        let (mp, mt) = avg_weights(kb, train_scenes, params)?;
        r.avg_d_mp = Some(mp);
        r.avg_d_mt = Some(mt);
        let test: Vec<Scene> = data.test.iter().filter(|s| s.labels.is_some()).cloned().collect();
        let ratios = cr_cu_ratios(kb, &test, params)?;
        r.cr_mp = ratios.cr_mp;
        r.cr_mt = ratios.cr_mt;
        r.cu_mp = ratios.cu_mp;
        r.cu_mt = ratios.cu_mt;
    }
    r.supervised_loss = train::mean_supervised_loss(&data.labeled, params)?;
    r.dr_loss = mean_forall_loss(kb, train_scenes, params)?;
    if data.test.iter().any(|s| s.labels.is_some()) {
        let m = train::evaluate(params, &data.test)?;
        r.type_accuracy = m.type_accuracy;
        r.relation_auc = m.relation_auc;
    }
    Ok(r)
}

/// Writes the header and one row per record. Reals carry ten significant
/// digits; undefined values are empty cells.
pub fn emit_csv<'a>(records: impl IntoIterator<Item = &'a DiagnosticsRecord>, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", COLUMNS.join(","))?;
    for r in records {
        write!(out, "{}", r.iteration)?;
        for v in r.values() {
            match v {
                Some(x) => write!(out, ",{x:.9e}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut bytes = Vec::new();
    emit_csv(records, &mut bytes).expect("writing to memory");
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str, path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == COLUMNS.join(",") => {}
        _ => return Err(Error::format(path, 1, "missing or unexpected header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != COLUMNS.len() {
            return Err(Error::format(path, i + 1, format!("expected {} cells", COLUMNS.len())));
        }
        let iteration = cells[0]
            .parse()
            .map_err(|_| Error::format(path, i + 1, "bad iteration"))?;
        let mut v = [None; 10];
        for (slot, cell) in v.iter_mut().zip(&cells[1..]) {
            if !cell.is_empty() {
                *slot = Some(
                    cell.parse()
                        .map_err(|_| Error::format(path, i + 1, format!("bad number {cell:?}")))?,
                );
            }
        }
        out.push(DiagnosticsRecord::from_values(iteration, v));
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}
