//! Line-delimited scene files.
//!
//! The first non-blank line is a header `{"feature_dim": m}`; every further
//! line is one scene:
//!
//! ```text
//! {"scene_id":"s0","objects":[[0.1,0.2],[0.3,0.4]],"labels":[{"pred":"partOf","args":[1,0],"value":1}]}
//! ```
//!
//! `labels` is omitted for unlabeled scenes. Atoms a labeled scene does not
//! list are false. A dataset directory holds `labeled.jsonl`,
//! `unlabeled.jsonl` and `test.jsonl`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fol::PredicateSig;
use crate::grounding::{HerbrandBase, Scene, World};

/// Labeled, unlabeled and held-out scenes sharing one feature dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub feature_dim: usize,
    pub labeled: Vec<Scene>,
    pub unlabeled: Vec<Scene>,
    pub test: Vec<Scene>,
}

impl Dataset {
    pub fn is_empty(&self) -> bool {
        self.labeled.is_empty() && self.unlabeled.is_empty() && self.test.is_empty()
    }

    pub fn check(&self, signature: &[PredicateSig]) -> Result<()> {
        for s in self.labeled.iter().chain(&self.test) {
            if s.labels.is_none() {
                return Err(Error::InvalidInput(format!("scene {} has no labels", s.id)));
            }
        }
        for s in self.labeled.iter().chain(&self.unlabeled).chain(&self.test) {
            s.check(signature, self.feature_dim)?;
        }
        Ok(())
    }
}

pub const LABELED_FILE: &str = "labeled.jsonl";
pub const UNLABELED_FILE: &str = "unlabeled.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    feature_dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    scene_id: String,
    objects: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<LabelRecord>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRecord {
    pred: String,
    args: Vec<usize>,
    value: u8,
}

/// Serializes scenes, listing only the true atoms of labeled scenes.
pub fn scenes_to_string(feature_dim: usize, scenes: &[Scene], signature: &[PredicateSig]) -> Result<String> {
    let mut out = serde_json::to_string(&Header { feature_dim }).expect("header serializes");
    out.push('\n');
    for s in scenes {
        let labels = match &s.labels {
            None => None,
            Some(w) => {
                let base = HerbrandBase::new(signature, s.len());
                if w.len() != base.len() {
                    return Err(Error::InvalidInput(format!(
                        "scene {}: labels cover {} atoms, herbrand base has {}",
                        s.id,
                        w.len(),
                        base.len()
                    )));
                }
                Some(
                    base.atoms()
                        .enumerate()
                        .filter(|(i, _)| w.get(*i))
                        .map(|(_, a)| LabelRecord {
                            pred: signature[a.pred].name.clone(),
                            args: a.args,
                            value: 1,
                        })
                        .collect(),
                )
            }
        };
        let rec = SceneRecord {
            scene_id: s.id.clone(),
            objects: s.objects.clone(),
            labels,
        };
        let line = serde_json::to_string(&rec)
            .map_err(|e| Error::InvalidInput(format!("scene {}: {e}", s.id)))?;
        writeln!(out, "{line}").expect("writing to a string");
    }
    Ok(out)
}

pub fn write_scenes(path: &Path, feature_dim: usize, scenes: &[Scene], signature: &[PredicateSig]) -> Result<()> {
    let text = scenes_to_string(feature_dim, scenes, signature)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a scene file. An empty file has no header and no scenes.
pub fn parse_scenes(text: &str, path: &Path, signature: &[PredicateSig]) -> Result<(Option<usize>, Vec<Scene>)> {
    let mut feature_dim = None;
    let mut scenes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let Some(m) = feature_dim else {
            let h: Header = serde_json::from_str(line)
                .map_err(|e| Error::format(path, lineno, format!("bad header: {e}")))?;
            feature_dim = Some(h.feature_dim);
            continue;
        };
        let rec: SceneRecord =
            serde_json::from_str(line).map_err(|e| Error::format(path, lineno, e.to_string()))?;
        if let Some(bad) = rec.objects.iter().position(|o| o.len() != m) {
            return Err(Error::format(
                path,
                lineno,
                format!("object {bad} has {} features, expected {m}", rec.objects[bad].len()),
            ));
        }
        let mut scene = Scene::new(rec.scene_id, rec.objects);
        if let Some(labels) = rec.labels {
            let base = HerbrandBase::new(signature, scene.len());
            let mut w = World::all_false(base.len());
            for l in labels {
                let pred = signature
                    .iter()
                    .position(|p| p.name == l.pred)
                    .ok_or_else(|| Error::format(path, lineno, format!("unknown predicate {}", l.pred)))?;
                let idx = base.index(pred, &l.args).ok_or_else(|| {
                    Error::format(path, lineno, format!("label {}{:?} is outside the scene", l.pred, l.args))
                })?;
                match l.value {
                    0 => w.set(idx, false),
                    1 => w.set(idx, true),
                    v => return Err(Error::format(path, lineno, format!("label value {v} is not 0 or 1"))),
                }
            }
            scene = scene.with_labels(w);
        }
        scenes.push(scene);
    }
    Ok((feature_dim, scenes))
}

pub fn read_scenes(path: &Path, signature: &[PredicateSig]) -> Result<(Option<usize>, Vec<Scene>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenes(&text, path, signature)
}

pub fn write_dataset(dir: &Path, data: &Dataset, signature: &[PredicateSig]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_scenes(&dir.join(LABELED_FILE), data.feature_dim, &data.labeled, signature)?;
    write_scenes(&dir.join(UNLABELED_FILE), data.feature_dim, &data.unlabeled, signature)?;
    write_scenes(&dir.join(TEST_FILE), data.feature_dim, &data.test, signature)
}

pub fn read_dataset(dir: &Path, signature: &[PredicateSig]) -> Result<Dataset> {
    let mut dims = Vec::new();
    let mut parts = Vec::new();
    for name in [LABELED_FILE, UNLABELED_FILE, TEST_FILE] {
        let path = dir.join(name);
        let (m, scenes) = read_scenes(&path, signature)?;
        if let Some(m) = m {
            dims.push((path, m));
        }
        parts.push(scenes);
    }
    let feature_dim = dims.first().map_or(0, |d| d.1);
    if let Some((path, m)) = dims.iter().find(|d| d.1 != feature_dim) {
        return Err(Error::format(
            path,
            1,
            format!("feature_dim {m} differs from {feature_dim} in the other files"),
        ));
    }
    let test = parts.pop().unwrap_or_default();
    let unlabeled = parts.pop().unwrap_or_default();
    let labeled = parts.pop().unwrap_or_default();
    Ok(Dataset {
        feature_dim,
        labeled,
        unlabeled,
        test,
    })
}
