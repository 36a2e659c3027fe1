//! Python bindings: knowledge bases, fuzzy evaluation on explicit degree
//! tables, the exact oracle and the command line.

use diffreason::fol::{parse_kb, KnowledgeBase as Kb};
use diffreason::grounding::{Binding, HerbrandBase, Scene};
use diffreason::model::{encode_degree_table, Params};
use diffreason::{oracle, prl};
use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;

fn value_error(e: diffreason::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A parsed knowledge base.
#[pyclass(frozen)]
struct KnowledgeBase {
    kb: Kb,
}

#[pymethods]
impl KnowledgeBase {
    #[new]
    fn new(source: &str) -> PyResult<Self> {
        let kb = parse_kb(source).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(KnowledgeBase { kb })
    }

    /// Structural problems, one message each; empty when valid.
    fn violations(&self) -> Vec<String> {
        self.kb.validate().iter().map(ToString::to_string).collect()
    }

    /// (name, arity, group or None) per predicate.
    #[getter]
    fn predicates(&self) -> Vec<(String, usize, Option<String>)> {
        self.kb
            .signature
            .iter()
            .map(|p| (p.name.clone(), p.arity, p.group.clone()))
            .collect()
    }

    /// Formulas rendered back to source syntax.
    #[getter]
    fn formulas(&self) -> Vec<String> {
        self.kb.formulas.iter().map(|f| self.kb.show(f).to_string()).collect()
    }

    /// Ground atoms of a domain with `n_objects` objects, in degree-table
    /// order.
    fn atoms(&self, n_objects: usize) -> Vec<String> {
        HerbrandBase::new(&self.kb.signature, n_objects)
            .atoms()
            .map(|a| {
                let args: Vec<String> = a.args.iter().map(ToString::to_string).collect();
                format!("{}({})", self.kb.signature[a.pred].name, args.join(","))
            })
            .collect()
    }
}

/// A model that reproduces a given truth-degree table on one scene.
#[pyclass(frozen)]
struct DegreeModel {
    kb: Kb,
    params: Params,
    scene: Scene,
}

impl DegreeModel {
    fn formula(&self, index: usize) -> PyResult<&diffreason::fol::Formula> {
        self.kb
            .formulas
            .get(index)
            .ok_or_else(|| PyIndexError::new_err(format!("no formula {index}")))
    }

    fn binding(&self, objects: Vec<usize>) -> PyResult<Binding> {
        if let Some(o) = objects.iter().find(|&&o| o >= self.scene.len()) {
            return Err(PyIndexError::new_err(format!("object {o} out of range")));
        }
        Ok(Binding(objects))
    }
}

#[pymethods]
impl DegreeModel {
    /// `degrees` lists one truth degree per ground atom, ordered as
    /// `KnowledgeBase.atoms(n_objects)`.
    #[new]
    fn new(kb: &KnowledgeBase, n_objects: usize, degrees: Vec<f64>) -> PyResult<Self> {
        let (params, objects) = encode_degree_table(&kb.kb.signature, n_objects, &degrees).map_err(value_error)?;
        Ok(DegreeModel {
            kb: kb.kb.clone(),
            params,
            scene: Scene::new("table", objects),
        })
    }

    /// Degree of formula `index` at a binding (one object per variable).
    fn degree(&self, index: usize, binding: Vec<usize>) -> PyResult<f64> {
        let f = self.formula(index)?;
        let b = self.binding(binding)?;
        prl::eval(f, &b, &self.scene, &self.params).map(|r| r.value).map_err(value_error)
    }

    /// Sum over all bindings of the negative log degree.
    fn forall_loss(&self, index: usize) -> PyResult<f64> {
        let f = self.formula(index)?;
        prl::forall_loss(f, std::slice::from_ref(&self.scene), &self.params).map_err(value_error)
    }

    /// (d_mp, d_mt) of an implication at a binding.
    fn mp_mt(&self, index: usize, binding: Vec<usize>) -> PyResult<(f64, f64)> {
        let f = self.formula(index)?;
        let b = self.binding(binding)?;
        let w = prl::mp_mt_weights(f, &b, &self.scene, &self.params).map_err(value_error)?;
        Ok((w.d_mp, w.d_mt))
    }

    /// Exact probability that a world drawn from the degrees satisfies
    /// every formula.
    fn exact_probability(&self) -> PyResult<f64> {
        oracle::exact_kb_probability(&self.kb, &self.scene, &self.params).map_err(value_error)
    }

    /// Product of all ground formula degrees.
    fn prl_probability(&self) -> PyResult<f64> {
        oracle::prl_kb_probability(&self.kb, &self.scene, &self.params).map_err(value_error)
    }
}

/// (d_mp, d_mt) from antecedent and consequent degrees.
#[pyfunction]
fn mp_mt_weights(antecedent: f64, consequent: f64) -> (f64, f64) {
    let w = prl::weights_from_degrees(antecedent, consequent);
    (w.d_mp, w.d_mt)
}

/// Runs the command line with `args` (without the program name) and
/// returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    diffreason::cli::run(std::iter::once("diffreason".to_string()).chain(args))
}

#[pymodule]
fn pydiffreason(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<KnowledgeBase>()?;
    m.add_class::<DegreeModel>()?;
    m.add_function(wrap_pyfunction!(mp_mt_weights, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
