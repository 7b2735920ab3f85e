//! Python bindings: survival statistics, phantom cohorts, models and the
//! cross-validation pipeline.

use std::path::PathBuf;

use cect_core::harness::{run_cv as core_run_cv, Settings};
use cect_core::kv::KeyValues;
use cect_core::losses::{self, SurvivalLabel};
use cect_core::phantom::{self, CeCtSequence, PhantomParams};
use cect_core::prognet::{checkpoint, ModelConfig, PrognosisNet, Variant};
use cect_core::survstats::{self, TieRule};
use cect_core::Error;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Corrupt { .. } => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) | Error::Singular { .. } => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn labels(times: &[f64], events: &[bool]) -> PyResult<Vec<SurvivalLabel>> {
    if times.len() != events.len() {
        return Err(PyValueError::new_err("times and events differ in length"));
    }
    times
        .iter()
        .zip(events)
        .map(|(&t, &e)| SurvivalLabel::new(t, e).map_err(to_py))
        .collect()
}

/// Harrell's C; tied risks score 0 unless `half_credit`.
#[pyfunction]
#[pyo3(signature = (risks, times, events, half_credit = false))]
fn c_index(risks: Vec<f64>, times: Vec<f64>, events: Vec<bool>, half_credit: bool) -> PyResult<f64> {
    let ties = if half_credit { TieRule::HalfCredit } else { TieRule::Strict };
    survstats::c_index_with(&risks, &labels(&times, &events)?, ties).map_err(to_py)
}

/// Breslow negative log partial likelihood and its gradient.
#[pyfunction]
fn cox_loss(risks: Vec<f64>, times: Vec<f64>, events: Vec<bool>) -> PyResult<(f64, Vec<f64>)> {
    losses::cox_loss(&risks, &labels(&times, &events)?).map_err(to_py)
}

#[pyclass(get_all, frozen)]
struct CoxFit {
    beta: Vec<f64>,
    se: Vec<f64>,
    hr: Vec<f64>,
    ci_low: Vec<f64>,
    ci_high: Vec<f64>,
    p: Vec<f64>,
    converged: bool,
    loglik: f64,
}

#[pyfunction]
fn cox_fit(covariates: Vec<Vec<f64>>, times: Vec<f64>, events: Vec<bool>) -> PyResult<CoxFit> {
    let f = survstats::cox_fit(&covariates, &labels(&times, &events)?).map_err(to_py)?;
    Ok(CoxFit {
        beta: f.beta,
        se: f.se,
        hr: f.hr,
        ci_low: f.ci_low,
        ci_high: f.ci_high,
        p: f.p_wald,
        converged: f.converged,
        loglik: f.loglik,
    })
}

/// `(event_times, survival, at_risk, n_events)`.
#[pyfunction]
fn kaplan_meier(times: Vec<f64>, events: Vec<bool>) -> PyResult<(Vec<f64>, Vec<f64>, Vec<usize>, Vec<usize>)> {
    let c = survstats::kaplan_meier(&labels(&times, &events)?).map_err(to_py)?;
    Ok((c.event_times, c.survival, c.at_risk, c.n_events))
}

/// `(chi2, p)` of the two-sample log-rank test.
#[pyfunction]
fn log_rank(times_a: Vec<f64>, events_a: Vec<bool>, times_b: Vec<f64>, events_b: Vec<bool>) -> PyResult<(f64, f64)> {
    let t = survstats::log_rank_test(&labels(&times_a, &events_a)?, &labels(&times_b, &events_b)?).map_err(to_py)?;
    Ok((t.chi2, t.p))
}

#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Clone)]
struct Patient {
    patient_id: String,
    time: f64,
    event: bool,
    r1: bool,
    /// `[phase, channel, z, y, x]`.
    shape: Vec<usize>,
    volumes: Vec<f64>,
}

impl From<&CeCtSequence> for Patient {
    fn from(s: &CeCtSequence) -> Self {
        Self {
            patient_id: s.patient_id.clone(),
            time: s.label.time,
            event: s.label.event,
            r1: s.margin.is_positive(),
            shape: s.volumes.shape().to_vec(),
            volumes: s.volumes.data().to_vec(),
        }
    }
}

/// Generates a synthetic cohort; writes it to `out_dir` when given.
#[pyfunction]
#[pyo3(signature = (n_patients = 200, extent = 16, seed = 0, attenuation_effect = 1.5, censoring_rate = 0.3, out_dir = None))]
fn generate_phantom(
    n_patients: usize,
    extent: usize,
    seed: u64,
    attenuation_effect: f64,
    censoring_rate: f64,
    out_dir: Option<PathBuf>,
) -> PyResult<Vec<Patient>> {
    let params = PhantomParams {
        n_patients,
        extent,
        seed,
        attenuation_effect,
        censoring_rate,
        ..PhantomParams::default()
    };
    let cohort = phantom::generate_cohort(&params).map_err(to_py)?;
    if let Some(dir) = out_dir {
        phantom::write_dataset(&cohort, &dir).map_err(to_py)?;
    }
    Ok(cohort.iter().map(Patient::from).collect())
}

#[pyfunction]
fn read_dataset(dir: PathBuf) -> PyResult<Vec<Patient>> {
    let cohort = phantom::read_dataset(&dir).map_err(to_py)?;
    Ok(cohort.iter().map(Patient::from).collect())
}

#[pyclass(unsendable)]
struct Model {
    net: PrognosisNet,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (variant = "multi_task_ce_convlstm", encoder_width = 8, hidden_ch = 8, extent = 16, seed = 0))]
    fn new(variant: &str, encoder_width: usize, hidden_ch: usize, extent: usize, seed: u64) -> PyResult<Self> {
        let v: Variant = variant.parse().map_err(to_py)?;
        let config = ModelConfig::with_sizes(v, encoder_width, hidden_ch, extent);
        Ok(Self {
            net: PrognosisNet::new(config, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            net: checkpoint::load(&path).map_err(to_py)?,
        })
    }

    fn save(&mut self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&mut self.net, &path).map_err(to_py)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.net.config().variant.name()
    }

    fn parameter_count(&mut self) -> usize {
        self.net.parameter_count()
    }

    /// `(risk, margin_logit)` per patient of the dataset in `data_dir`; `None` for a missing head.
    fn predict(&mut self, data_dir: PathBuf) -> PyResult<(Option<Vec<f64>>, Option<Vec<f64>>)> {
        let cohort = phantom::read_dataset(&data_dir).map_err(to_py)?;
        let refs: Vec<&CeCtSequence> = cohort.iter().collect();
        let out = self.net.predict(&refs, 16).map_err(to_py)?;
        Ok((out.risk, out.margin_logit))
    }
}

/// Runs cross-validation from `key = value` settings text, writes the
/// artifacts and returns the mean test C-index (`None` if undefined).
#[pyfunction]
fn run_cv(config: &str) -> PyResult<Option<f64>> {
    let kv = KeyValues::parse(config).map_err(to_py)?;
    let s = Settings::from_kv(&kv, None).map_err(to_py)?;
    let cohort = phantom::read_dataset(&s.data_dir).map_err(to_py)?;
    let extent = cohort.first().map_or(s.phantom.extent, |c| c.extent()[0]);
    let model = s.model_config(extent).map_err(to_py)?;
    let run = core_run_cv(&cohort, &model, &s.train, &s.cv_options()).map_err(to_py)?;
    run.write_artifacts(&s.out_dir).map_err(to_py)?;
    let mean = run.mean_metric(|m| m.c_index);
    match run.folds.into_iter().find_map(|f| f.outcome.err()) {
        Some(e) => Err(to_py(e)),
        None => Ok(mean),
    }
}

#[pymodule]
fn cect(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(c_index, m)?)?;
    m.add_function(wrap_pyfunction!(cox_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cox_fit, m)?)?;
    m.add_function(wrap_pyfunction!(kaplan_meier, m)?)?;
    m.add_function(wrap_pyfunction!(log_rank, m)?)?;
    m.add_function(wrap_pyfunction!(generate_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(read_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_cv, m)?)?;
    m.add_class::<Model>()?;
    m.add_class::<CoxFit>()?;
    m.add_class::<Patient>()?;
    Ok(())
}
