//! Python bindings for the core library: V-A validation and presets, the
//! density model, the injection network with its checkpoint format, the
//! scaled-residual target, and the rank/significance statistics.

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use emoembed::dataset::EncodedSample;
use emoembed::density::fit_kde;
use emoembed::eval;
use emoembed::loss;
use emoembed::net::checkpoint::{load_checkpoint, save_checkpoint};
use emoembed::net::{eit_forward, EITConfig, EITParams, PromptFeature};
use emoembed::training::{Trainer, TrainConfig};
use emoembed::va;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn matrix_from_py(rows: Vec<Vec<f64>>, what: &str) -> PyResult<PromptFeature> {
    if rows.is_empty() {
        return Err(value_err(format!("{what}: empty matrix")));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(value_err(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let n = flat.len() / cols;
    let data = Array2::from_shape_vec((n, cols), flat).expect("shape consistent");
    PromptFeature::new(data).map_err(value_err)
}

fn matrix_to_py(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Checks a (valence, arousal) pair; raises ValueError outside [-3, 3].
#[pyfunction]
fn validate_va(valence: f64, arousal: f64) -> PyResult<(f64, f64)> {
    let p = va::validate_va(valence, arousal).map_err(value_err)?;
    Ok((p.valence(), p.arousal()))
}

/// (valence, arousal) for a named emotion from the built-in preset table.
#[pyfunction]
fn preset_emotion(name: &str) -> PyResult<(f64, f64)> {
    let p = va::preset_emotion(name).map_err(value_err)?;
    Ok((p.valence(), p.arousal()))
}

/// All built-in presets as (name, valence, arousal) tuples.
#[pyfunction]
fn list_presets() -> Vec<(String, f64, f64)> {
    va::PresetTable::shipped()
        .iter()
        .map(|p| (p.name.clone(), p.point.valence(), p.point.arousal()))
        .collect()
}

/// Gaussian kernel density over V-A samples with Silverman bandwidths.
#[pyclass]
struct DensityModel {
    inner: emoembed::density::DensityModel,
}

#[pymethods]
impl DensityModel {
    #[new]
    #[pyo3(signature = (samples, min_density = 1e-4))]
    fn new(samples: Vec<(f64, f64)>, min_density: f64) -> PyResult<Self> {
        let points: Result<Vec<_>, _> = samples
            .into_iter()
            .map(|(v, a)| va::VAPoint::new(v, a))
            .collect();
        let inner = fit_kde(&points.map_err(value_err)?, min_density).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn density_at(&self, valence: f64, arousal: f64) -> PyResult<f64> {
        let p = va::VAPoint::new(valence, arousal).map_err(value_err)?;
        Ok(self.inner.density_at(&p))
    }

    fn loss_weight(&self, valence: f64, arousal: f64) -> PyResult<f64> {
        let p = va::VAPoint::new(valence, arousal).map_err(value_err)?;
        Ok(self.inner.loss_weight(&p))
    }

    #[getter]
    fn bandwidth(&self) -> (f64, f64) {
        self.inner.bandwidth()
    }
}

fn config_from_kwargs(
    num_blocks: usize,
    d_model: usize,
    d_prompt: usize,
    l: usize,
    num_heads: usize,
    d_ffn: usize,
    mlp_hidden: usize,
    l_e: usize,
    causal_mask: bool,
) -> EITConfig {
    EITConfig {
        num_blocks,
        d_model,
        d_prompt,
        l,
        l_e,
        num_heads,
        d_ffn,
        mlp_hidden,
        ln_epsilon: 1e-5,
        causal_mask,
    }
}

/// The emotion injection network: maps a neutral prompt feature and a
/// (valence, arousal) pair to an emotional prompt feature. Starts as the
/// identity map and can be trained on paired features.
#[pyclass]
struct Embedder {
    params: EITParams,
}

#[pymethods]
impl Embedder {
    #[new]
    #[pyo3(signature = (num_blocks = 2, d_model = 8, d_prompt = 16, l = 4, num_heads = 2,
                        d_ffn = 16, mlp_hidden = 16, l_e = 1, causal_mask = false, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        num_blocks: usize,
        d_model: usize,
        d_prompt: usize,
        l: usize,
        num_heads: usize,
        d_ffn: usize,
        mlp_hidden: usize,
        l_e: usize,
        causal_mask: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = config_from_kwargs(
            num_blocks, d_model, d_prompt, l, num_heads, d_ffn, mlp_hidden, l_e, causal_mask,
        );
        let params = EITParams::init(&cfg, seed).map_err(value_err)?;
        Ok(Self { params })
    }

    /// Loads a trained network from a checkpoint file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let params = load_checkpoint(std::path::Path::new(path)).map_err(runtime_err)?;
        Ok(Self { params })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.params, std::path::Path::new(path)).map_err(runtime_err)
    }

    /// Transforms a (tokens x d_prompt) feature under the given emotion.
    fn forward(
        &self,
        feature: Vec<Vec<f64>>,
        valence: f64,
        arousal: f64,
    ) -> PyResult<Vec<Vec<f64>>> {
        let f_n = matrix_from_py(feature, "feature")?;
        let p = va::VAPoint::new(valence, arousal).map_err(value_err)?;
        let out = eit_forward(&self.params, &f_n, &p).map_err(runtime_err)?;
        Ok(matrix_to_py(out.data()))
    }

    /// Fits the network to paired (neutral, emotional, (v, a)) samples with
    /// the density-weighted scaled-residual loss. Returns the final
    /// training-batch loss.
    #[pyo3(signature = (samples, alpha = 1.5, steps = 500, learning_rate = 1e-3,
                        weight_decay = 1e-5, batch_size = 16, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        samples: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>, (f64, f64))>,
        alpha: f64,
        steps: usize,
        learning_rate: f64,
        weight_decay: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<f64> {
        let mut encoded = Vec::with_capacity(samples.len());
        for (f_n, f_e, (v, a)) in samples {
            encoded.push(EncodedSample {
                f_n: matrix_from_py(f_n, "neutral feature")?,
                f_e: matrix_from_py(f_e, "emotional feature")?,
                va: va::VAPoint::new(v, a).map_err(value_err)?,
            });
        }
        let vas: Vec<_> = encoded.iter().map(|s| s.va).collect();
        let density = fit_kde(&vas, 1e-4).map_err(value_err)?;
        let weights: Vec<f64> = encoded
            .iter()
            .map(|s| density.loss_weight(&s.va))
            .collect();
        let cfg = TrainConfig {
            learning_rate,
            weight_decay,
            epochs: 0,
            batch_size,
            seed,
            checkpoint_every: 0,
            grad_clip: None,
            loss: loss::LossConfig {
                alpha,
                min_density: 1e-4,
            },
        };
        let mut trainer = Trainer::new(cfg, &self.params.config).map_err(value_err)?;
        trainer.state.params = self.params.clone();
        let final_loss = trainer
            .run_steps(&encoded, &weights, steps)
            .map_err(runtime_err)?;
        self.params = trainer.state.params.clone();
        Ok(final_loss)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.params.set.num_scalars()
    }

    #[getter]
    fn config(&self) -> std::collections::BTreeMap<String, usize> {
        let c = &self.params.config;
        [
            ("num_blocks", c.num_blocks),
            ("d_model", c.d_model),
            ("d_prompt", c.d_prompt),
            ("l", c.l),
            ("l_e", c.l_e),
            ("num_heads", c.num_heads),
            ("d_ffn", c.d_ffn),
            ("mlp_hidden", c.mlp_hidden),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// f_n + alpha * (f_e - f_n), elementwise.
#[pyfunction]
fn scaled_target(
    f_n: Vec<Vec<f64>>,
    f_e: Vec<Vec<f64>>,
    alpha: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let f_n = matrix_from_py(f_n, "neutral feature")?;
    let f_e = matrix_from_py(f_e, "emotional feature")?;
    let t = loss::scaled_target(&f_n, &f_e, alpha).map_err(value_err)?;
    Ok(matrix_to_py(t.data()))
}

/// Kendall's tau-b rank correlation with tie correction.
#[pyfunction]
fn kendall_tau_b(observed: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    eval::kendall_tau_b(&observed, &reference).map_err(value_err)
}

/// Mean distance between consecutive feature vectors of a sweep.
#[pyfunction]
fn continuity(items: Vec<Vec<f64>>) -> PyResult<f64> {
    let euclid = |a: &Vec<f64>, b: &Vec<f64>| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    eval::continuity_score(euclid, &items).map_err(value_err)
}

/// Shapiro-Wilk plus Wilcoxon signed-rank over paired observations.
#[pyfunction]
fn significance_tests(py: Python<'_>, a: Vec<f64>, b: Vec<f64>) -> PyResult<PyObject> {
    let rep = eval::significance_tests(&a, &b).map_err(value_err)?;
    let d = pyo3::types::PyDict::new_bound(py);
    d.set_item("shapiro_w", rep.shapiro_w)?;
    d.set_item("shapiro_p", rep.shapiro_p)?;
    d.set_item("wilcoxon_w", rep.wilcoxon_w)?;
    d.set_item("wilcoxon_p", rep.wilcoxon_p)?;
    d.set_item("wilcoxon_exact", rep.wilcoxon_exact)?;
    d.set_item("n_effective", rep.n_effective)?;
    Ok(d.into())
}

#[pymodule]
fn emoembed_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate_va, m)?)?;
    m.add_function(wrap_pyfunction!(preset_emotion, m)?)?;
    m.add_function(wrap_pyfunction!(list_presets, m)?)?;
    m.add_function(wrap_pyfunction!(scaled_target, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau_b, m)?)?;
    m.add_function(wrap_pyfunction!(continuity, m)?)?;
    m.add_function(wrap_pyfunction!(significance_tests, m)?)?;
    m.add_class::<DensityModel>()?;
    m.add_class::<Embedder>()?;
    Ok(())
}
