//! Python bindings: intent and sentiment analysis, the technique catalog,
//! and full training sessions driven from Python.
//!
//! Structured results cross the boundary as plain `dict`/`list` values.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use denial_core::dialogue::{
    update_belief as core_update_belief, DialogueConfig, DialogueEngine, DialogueError,
};
use denial_core::llm::{HttpCompletionClient, LlmConfig, LlmGateway, MockGateway};
use denial_core::nlu::{IntentClassifier, IntentLabel};
use denial_core::persona::{load_personas_dir, shipped_personas, BeliefParams};
use denial_core::prompting;
use denial_core::sentiment::Lexicon;
use denial_core::storage::text_transcript;
use denial_core::taxonomy::Catalog;

create_exception!(denial_trainer, TrainerError, PyException);
create_exception!(denial_trainer, SessionClosedError, TrainerError);
create_exception!(denial_trainer, UpstreamError, TrainerError);

fn dialogue_err(err: DialogueError) -> PyErr {
    let msg = err.to_string();
    match err {
        DialogueError::Validation(_) => PyValueError::new_err(msg),
        DialogueError::NotFound { .. } => PyKeyError::new_err(msg),
        DialogueError::SessionClosed(_) => SessionClosedError::new_err(msg),
        DialogueError::Upstream(_) => UpstreamError::new_err(msg),
        DialogueError::SessionBusy(_) | DialogueError::Prompt(_) => TrainerError::new_err(msg),
    }
}

fn to_py<'py>(py: Python<'py>, value: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match value {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, to_py(py, v)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let json = serde_json::to_value(value).map_err(|e| TrainerError::new_err(e.to_string()))?;
    to_py(py, &json)
}

/// Classifies a trainee message against the bundled catalog.
#[pyfunction]
fn classify_intent<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    let result = denial_core::nlu::classify_intent(text, &Catalog::shipped());
    serialize(py, &result)
}

/// Mean lexicon polarity of `text` in [-1, 1].
#[pyfunction]
fn score_sentiment(text: &str) -> f64 {
    Lexicon::shipped().score(text).polarity
}

/// Ids of the techniques whose cue phrases occur in `text`.
#[pyfunction]
fn match_technique_mention(text: &str) -> Vec<String> {
    Catalog::shipped()
        .match_technique_mention(text)
        .into_iter()
        .map(|m| m.technique_id)
        .collect()
}

#[pyfunction]
fn sanitize_response(raw: &str) -> String {
    prompting::sanitize_response(raw)
}

/// One belief update with the default parameters unless overridden.
#[pyfunction]
#[pyo3(signature = (belief, intent, polarity, correct_identification, delta_identified=None, delta_polite_contradiction=None, delta_insult_gain=None))]
fn update_belief(
    belief: f64,
    intent: &str,
    polarity: f64,
    correct_identification: bool,
    delta_identified: Option<f64>,
    delta_polite_contradiction: Option<f64>,
    delta_insult_gain: Option<f64>,
) -> PyResult<f64> {
    let intent: IntentLabel = intent.parse().map_err(PyValueError::new_err)?;
    let mut params = BeliefParams::default();
    if let Some(v) = delta_identified {
        params.delta_identified = v;
    }
    if let Some(v) = delta_polite_contradiction {
        params.delta_polite_contradiction = v;
    }
    if let Some(v) = delta_insult_gain {
        params.delta_insult_gain = v;
    }
    Ok(core_update_belief(
        belief,
        intent,
        polarity,
        correct_identification,
        &params,
    ))
}

/// The bundled technique catalog as a dict.
#[pyfunction]
fn catalog(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    let json: Value = serde_json::from_str(&Catalog::shipped().to_json_pretty())
        .map_err(|e| TrainerError::new_err(e.to_string()))?;
    to_py(py, &json)
}

/// A dialogue engine plus its content. Uses the offline mock backend unless
/// `llm_url` is given.
#[pyclass(module = "denial_trainer", frozen)]
struct Trainer {
    engine: Arc<DialogueEngine>,
}

#[pymethods]
impl Trainer {
    #[new]
    #[pyo3(signature = (llm_url=None, personas_dir=None, catalog_path=None))]
    fn new(
        llm_url: Option<String>,
        personas_dir: Option<PathBuf>,
        catalog_path: Option<PathBuf>,
    ) -> PyResult<Self> {
        let catalog = match catalog_path {
            Some(p) => Catalog::from_path(p).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => Catalog::shipped(),
        };
        let catalog = Arc::new(catalog);
        let personas = match personas_dir {
            Some(d) => load_personas_dir(d, &catalog),
            None => shipped_personas(&catalog),
        }
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
        let gateway: Arc<dyn LlmGateway> = match llm_url {
            Some(url) => {
                let config = LlmConfig {
                    url: Some(url),
                    ..LlmConfig::default()
                }
                .with_env();
                Arc::new(
                    HttpCompletionClient::new(&config)
                        .map_err(|e| PyValueError::new_err(e.to_string()))?,
                )
            }
            None => Arc::new(MockGateway::new(catalog.clone())),
        };
        let engine = DialogueEngine::new(
            catalog,
            personas,
            Arc::new(IntentClassifier::shipped()),
            Arc::new(Lexicon::shipped()),
            gateway,
            DialogueConfig::default(),
        );
        Ok(Self {
            engine: Arc::new(engine),
        })
    }

    /// `[{"id", "display_name", "topic"}, ...]`
    fn personas<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let list: Vec<Value> = self
            .engine
            .personas()
            .map(|p| serde_json::json!({ "id": p.id, "display_name": p.display_name, "topic": p.topic }))
            .collect();
        to_py(py, &Value::Array(list))
    }

    fn start(&self, persona_id: &str) -> PyResult<Session> {
        let session = self
            .engine
            .start_session(persona_id)
            .map_err(dialogue_err)?;
        Ok(Session {
            engine: self.engine.clone(),
            inner: Mutex::new(session),
        })
    }
}

#[pyclass(module = "denial_trainer", frozen)]
struct Session {
    engine: Arc<DialogueEngine>,
    inner: Mutex<denial_core::dialogue::Session>,
}

impl Session {
    fn with<R>(&self, f: impl FnOnce(&mut denial_core::dialogue::Session) -> R) -> R {
        let mut guard = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        f(&mut guard)
    }
}

#[pymethods]
impl Session {
    #[getter]
    fn id(&self) -> String {
        self.with(|s| s.id.clone())
    }

    #[getter]
    fn persona_id(&self) -> String {
        self.with(|s| s.persona_id.clone())
    }

    #[getter]
    fn status(&self) -> String {
        self.with(|s| s.status.as_str().to_string())
    }

    #[getter]
    fn score(&self) -> i64 {
        self.with(|s| s.score)
    }

    #[getter]
    fn belief(&self) -> f64 {
        self.with(|s| s.belief)
    }

    #[getter]
    fn identified(&self) -> Vec<String> {
        self.with(|s| s.identified.iter().cloned().collect())
    }

    #[getter]
    fn outcome(&self) -> Option<String> {
        self.with(|s| s.outcome.map(|o| o.as_str().to_string()))
    }

    /// `[(role, text), ...]` in order.
    #[getter]
    fn turns(&self) -> Vec<(String, String)> {
        self.with(|s| {
            s.turns
                .iter()
                .map(|t| {
                    let role = serde_json::to_value(t.role)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string));
                    (role.unwrap_or_default(), t.text.clone())
                })
                .collect()
        })
    }

    /// Sends a trainee message; returns the bot response as a dict.
    fn send<'py>(&self, py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
        let response = self
            .with(|s| self.engine.process_turn(s, text))
            .map_err(dialogue_err)?;
        serialize(py, &response)
    }

    /// Flags `technique_id` as the technique the bot just used.
    fn identify<'py>(&self, py: Python<'py>, technique_id: &str) -> PyResult<Bound<'py, PyAny>> {
        let response = self
            .with(|s| self.engine.identify(s, technique_id))
            .map_err(dialogue_err)?;
        serialize(py, &response)
    }

    fn abandon(&self) -> PyResult<()> {
        self.with(|s| self.engine.abandon(s)).map_err(dialogue_err)
    }

    /// Theater-script transcript, one line per turn.
    fn transcript(&self) -> String {
        self.with(|s| text_transcript(s))
    }

    fn to_json(&self) -> PyResult<String> {
        self.with(|s| serde_json::to_string_pretty(s))
            .map_err(|e| TrainerError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        self.with(|s| {
            format!(
                "<Session {} persona={} status={} score={}>",
                s.id, s.persona_id, s.status, s.score
            )
        })
    }
}

#[pymodule]
pub fn denial_trainer(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(classify_intent, m)?)?;
    m.add_function(wrap_pyfunction!(score_sentiment, m)?)?;
    m.add_function(wrap_pyfunction!(match_technique_mention, m)?)?;
    m.add_function(wrap_pyfunction!(sanitize_response, m)?)?;
    m.add_function(wrap_pyfunction!(update_belief, m)?)?;
    m.add_function(wrap_pyfunction!(catalog, m)?)?;
    m.add_class::<Trainer>()?;
    m.add_class::<Session>()?;
    m.add("TrainerError", m.py().get_type::<TrainerError>())?;
    m.add(
        "SessionClosedError",
        m.py().get_type::<SessionClosedError>(),
    )?;
    m.add("UpstreamError", m.py().get_type::<UpstreamError>())?;
    Ok(())
}
