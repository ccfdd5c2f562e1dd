//! Python bindings for `fpb-core`.
//!
//! Exposes corpora, vocabularies, model configuration, training, decoding and
//! corpus BLEU. Sentences cross the boundary as whitespace-separated strings.

use std::path::PathBuf;

use fpb_core::autodiff::Tape;
use fpb_core::data::{
    detokenize, gen_synthetic, tokenize, ParallelCorpus, Task, TrainingBatch, Vocab,
};
use fpb_core::decode::{self, DecodeOptions};
use fpb_core::model::{load_checkpoint, save_checkpoint, BowMemory, FpbConfig, FpbModel, Noise};
use fpb_core::train::{train as run_training, AdamConfig, MetricsRecord, TrainConfig, TrainData};
use fpb_core::FpbError;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: FpbError) -> PyErr {
    match e {
        FpbError::Io(_) => PyIOError::new_err(e.to_string()),
        FpbError::Training(_) | FpbError::Oracle(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn run<T>(r: fpb_core::Result<T>) -> PyResult<T> {
    r.map_err(py_err)
}

/// Parallel corpus of tokenized sentence pairs.
#[pyclass(name = "Corpus", module = "fpb", from_py_object)]
#[derive(Clone)]
struct PyCorpus {
    inner: ParallelCorpus,
}

#[pymethods]
impl PyCorpus {
    #[new]
    fn new(pairs: Vec<(String, String)>) -> PyResult<Self> {
        let pairs = pairs
            .iter()
            .map(|(s, t)| (tokenize(s), tokenize(t)))
            .collect();
        Ok(PyCorpus {
            inner: run(ParallelCorpus::new(pairs))?,
        })
    }

    /// Synthetic copy, reverse or lexicon task.
    #[staticmethod]
    #[pyo3(signature = (task, n_pairs, vocab_size, min_len, max_len, seed = 1))]
    fn synthetic(
        task: &str,
        n_pairs: usize,
        vocab_size: usize,
        min_len: usize,
        max_len: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let task: Task = run(task.parse())?;
        Ok(PyCorpus {
            inner: run(gen_synthetic(
                task,
                n_pairs,
                vocab_size,
                (min_len, max_len),
                seed,
            ))?,
        })
    }

    /// Reads a tab-separated file of `source<TAB>target` lines.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCorpus {
            inner: run(ParallelCorpus::load(&path))?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        run(self.inner.save(&path))
    }

    fn pairs(&self) -> Vec<(String, String)> {
        self.inner
            .sources()
            .zip(self.inner.targets())
            .map(|(s, t)| (detokenize(s), detokenize(t)))
            .collect()
    }

    /// Returns `(head, tail)` with the last `n` pairs in `tail`.
    fn split_tail(&self, n: usize) -> (PyCorpus, PyCorpus) {
        let (a, b) = self.inner.clone().split_tail(n);
        (PyCorpus { inner: a }, PyCorpus { inner: b })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Corpus({} pairs)", self.inner.len())
    }
}

#[pyclass(name = "Vocab", module = "fpb", from_py_object)]
#[derive(Clone)]
struct PyVocab {
    inner: Vocab,
}

#[pymethods]
impl PyVocab {
    /// Builds from one side (`"source"` or `"target"`) of a corpus.
    #[staticmethod]
    #[pyo3(signature = (corpus, side, max_size = 50_000, min_freq = 1))]
    fn from_corpus(
        corpus: &PyCorpus,
        side: &str,
        max_size: usize,
        min_freq: usize,
    ) -> PyResult<Self> {
        let inner = match side {
            "source" => Vocab::build(corpus.inner.sources(), max_size, min_freq),
            "target" => Vocab::build(corpus.inner.targets(), max_size, min_freq),
            _ => {
                return Err(PyValueError::new_err(
                    "side must be \"source\" or \"target\"",
                ))
            }
        };
        Ok(PyVocab { inner: run(inner)? })
    }

    fn encode(&self, sentence: &str) -> Vec<usize> {
        self.inner.encode(&tokenize(sentence))
    }

    fn decode(&self, ids: Vec<usize>) -> String {
        detokenize(&self.inner.decode(&ids))
    }

    fn token(&self, id: usize) -> PyResult<String> {
        if id >= self.inner.len() {
            return Err(py_err(FpbError::Index {
                id,
                size: self.inner.len(),
            }));
        }
        Ok(self.inner.token(id).to_string())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Model hyperparameters. Vocabulary sizes come from the vocabularies passed
/// to `Model`.
#[pyclass(name = "Config", module = "fpb", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct PyConfig {
    d_emb: usize,
    d_hidden: usize,
    d_attn: usize,
    k_heads: usize,
    k_len: usize,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
    dropout_rate: f64,
    use_bow: bool,
    use_len: bool,
    bow_memory: String,
    feedback_backprop: bool,
    init_range: f64,
}

impl PyConfig {
    fn to_core(&self, vocab_src: usize, vocab_tgt: usize) -> PyResult<FpbConfig> {
        let bow_memory = match self.bow_memory.as_str() {
            "history" => BowMemory::History,
            "encoder" => BowMemory::Encoder,
            other => {
                return Err(PyValueError::new_err(format!(
                    "bow_memory: unknown value {other:?} (history, encoder)"
                )))
            }
        };
        Ok(FpbConfig {
            d_emb: self.d_emb,
            d_hidden: self.d_hidden,
            d_attn: self.d_attn,
            vocab_src,
            vocab_tgt,
            k_heads: self.k_heads,
            k_len: self.k_len,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            dropout_rate: self.dropout_rate,
            use_bow: self.use_bow,
            use_len: self.use_len,
            bow_memory,
            feedback_backprop: self.feedback_backprop,
            init_range: self.init_range,
        })
    }

    fn from_core(c: &FpbConfig) -> Self {
        PyConfig {
            d_emb: c.d_emb,
            d_hidden: c.d_hidden,
            d_attn: c.d_attn,
            k_heads: c.k_heads,
            k_len: c.k_len,
            lambda1: c.lambda1,
            lambda2: c.lambda2,
            lambda3: c.lambda3,
            dropout_rate: c.dropout_rate,
            use_bow: c.use_bow,
            use_len: c.use_len,
            bow_memory: match c.bow_memory {
                BowMemory::History => "history",
                BowMemory::Encoder => "encoder",
            }
            .to_string(),
            feedback_backprop: c.feedback_backprop,
            init_range: c.init_range,
        }
    }
}

#[pymethods]
impl PyConfig {
    /// `d` sets the embedding, hidden and attention sizes together.
    #[new]
    #[pyo3(signature = (d = 512, *, k_heads = 4, k_len = 50, lambda2 = 1.0, lambda3 = 0.1,
        dropout_rate = 0.2, use_bow = true, use_len = true, bow_memory = "history"))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        d: usize,
        k_heads: usize,
        k_len: usize,
        lambda2: f64,
        lambda3: f64,
        dropout_rate: f64,
        use_bow: bool,
        use_len: bool,
        bow_memory: &str,
    ) -> Self {
        let mut c = PyConfig::from_core(&FpbConfig::default());
        c.d_emb = d;
        c.d_hidden = d;
        c.d_attn = d;
        c.k_heads = k_heads;
        c.k_len = k_len;
        c.lambda2 = lambda2;
        c.lambda3 = lambda3;
        c.dropout_rate = dropout_rate;
        c.use_bow = use_bow;
        c.use_len = use_len;
        c.bow_memory = bow_memory.to_string();
        c
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(d_emb={}, d_hidden={}, d_attn={}, k_heads={}, k_len={}, use_bow={}, use_len={})",
            self.d_emb, self.d_hidden, self.d_attn, self.k_heads, self.k_len, self.use_bow, self.use_len
        )
    }
}

/// A model together with the vocabularies it was built for.
#[pyclass(name = "Model", module = "fpb")]
struct PyModel {
    model: FpbModel,
    src: Vocab,
    tgt: Vocab,
}

/// Decoder settings shared by the translation methods.
fn options(
    width: usize,
    max_len: usize,
    length_norm: bool,
    eos_gate: Option<usize>,
) -> DecodeOptions {
    DecodeOptions {
        width,
        max_len,
        length_norm,
        eos_gate,
    }
}

impl PyModel {
    fn pair_batch(&self, source: &str, target: &str) -> PyResult<TrainingBatch> {
        let pair = (
            self.src.encode(&tokenize(source)),
            self.tgt.encode(&tokenize(target)),
        );
        run(TrainingBatch::from_ids(
            &[pair],
            self.tgt.len(),
            self.model.config.k_len,
        ))
    }
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config, src_vocab, tgt_vocab, seed = 1))]
    fn new(
        config: &PyConfig,
        src_vocab: &PyVocab,
        tgt_vocab: &PyVocab,
        seed: u64,
    ) -> PyResult<Self> {
        let c = config.to_core(src_vocab.inner.len(), tgt_vocab.inner.len())?;
        Ok(PyModel {
            model: run(FpbModel::new(c, seed))?,
            src: src_vocab.inner.clone(),
            tgt: tgt_vocab.inner.clone(),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = run(load_checkpoint(&path))?;
        Ok(PyModel {
            model: ck.model,
            src: ck.src_vocab,
            tgt: ck.tgt_vocab,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        run(save_checkpoint(&path, &self.model, &self.src, &self.tgt))
    }

    #[getter]
    fn config(&self) -> PyConfig {
        PyConfig::from_core(&self.model.config)
    }

    #[getter]
    fn src_vocab(&self) -> PyVocab {
        PyVocab {
            inner: self.src.clone(),
        }
    }

    #[getter]
    fn tgt_vocab(&self) -> PyVocab {
        PyVocab {
            inner: self.tgt.clone(),
        }
    }

    /// Total number of scalar parameters.
    fn num_params(&self) -> usize {
        self.model
            .params
            .iter()
            .map(|(_, p)| p.value.data().len())
            .sum()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.model
            .params
            .iter()
            .map(|(_, p)| p.name.clone())
            .collect()
    }

    /// Beam search translation; `width=1` decodes greedily.
    #[pyo3(signature = (sentence, width = 10, max_len = 100, length_norm = false, eos_gate = None))]
    fn translate(
        &self,
        py: Python<'_>,
        sentence: &str,
        width: usize,
        max_len: usize,
        length_norm: bool,
        eos_gate: Option<usize>,
    ) -> PyResult<String> {
        let out = self.translate_all(
            py,
            vec![sentence.to_string()],
            width,
            max_len,
            length_norm,
            eos_gate,
        )?;
        Ok(out.into_iter().next().unwrap_or_default())
    }

    #[pyo3(signature = (sentences, width = 10, max_len = 100, length_norm = false, eos_gate = None))]
    fn translate_all(
        &self,
        py: Python<'_>,
        sentences: Vec<String>,
        width: usize,
        max_len: usize,
        length_norm: bool,
        eos_gate: Option<usize>,
    ) -> PyResult<Vec<String>> {
        let opts = options(width, max_len, length_norm, eos_gate);
        let sources: Vec<Vec<String>> = sentences.iter().map(|s| tokenize(s)).collect();
        let out =
            py.detach(|| decode::translate_all(&self.model, &self.src, &self.tgt, &sources, &opts));
        Ok(run(out)?.iter().map(|t| detokenize(t)).collect())
    }

    /// Log-probability of `target` followed by EOS given `source`.
    fn score(&self, source: &str, target: &str) -> PyResult<f64> {
        run(decode::sequence_log_prob(
            &self.model,
            &self.src.encode(&tokenize(source)),
            &self.tgt.encode(&tokenize(target)),
        ))
    }

    /// Corpus BLEU of the model's translations of `corpus`.
    #[pyo3(signature = (corpus, width = 10, max_len = 100))]
    fn bleu(
        &self,
        py: Python<'_>,
        corpus: &PyCorpus,
        width: usize,
        max_len: usize,
    ) -> PyResult<f64> {
        let opts = options(width, max_len, false, None);
        run(py.detach(|| {
            decode::evaluate_bleu(&self.model, &self.src, &self.tgt, &corpus.inner, &opts)
        }))
    }

    /// Teacher-forced loss terms for one pair, without dropout.
    fn losses<'py>(
        &self,
        py: Python<'py>,
        source: &str,
        target: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let batch = self.pair_batch(source, target)?;
        let mut tape = Tape::new();
        let pass = run(self
            .model
            .forward_batch(&mut tape, &batch, &mut Noise::eval()))?;
        let d = PyDict::new(py);
        d.set_item("total", tape.value(pass.total).item())?;
        d.set_item("nll", tape.value(pass.nll).item())?;
        d.set_item("bow", pass.bow_loss.map(|v| tape.value(v).item()))?;
        d.set_item("len", pass.len_loss.map(|v| tape.value(v).item()))?;
        Ok(d)
    }

    /// Per target step: the token fed in, the `top` most likely future words
    /// and the most likely remaining-length bucket.
    #[pyo3(signature = (source, target, top = 5))]
    fn predict_future<'py>(
        &self,
        py: Python<'py>,
        source: &str,
        target: &str,
        top: usize,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let batch = self.pair_batch(source, target)?;
        let mut tape = Tape::new();
        let pass = run(self
            .model
            .forward_batch(&mut tape, &batch, &mut Noise::eval()))?;
        let mut steps = Vec::new();
        for t in 0..batch.tgt_steps() {
            let d = PyDict::new(py);
            d.set_item("input", self.tgt.token(batch.tgt_in[0][t]))?;
            if let Some(b) = pass.bow.get(t) {
                let probs = tape.value(b.averaged).data();
                let mut order: Vec<usize> = (0..probs.len()).collect();
                order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
                let words: Vec<(String, f64)> = order
                    .iter()
                    .take(top)
                    .map(|&i| (self.tgt.token(i).to_string(), probs[i]))
                    .collect();
                d.set_item("bow", words)?;
            }
            if let Some(l) = pass.length.get(t) {
                let probs = tape.value(l.probs).data();
                let best = (0..probs.len())
                    .max_by(|&a, &b| probs[a].total_cmp(&probs[b]))
                    .unwrap_or(0);
                d.set_item("remaining", best)?;
            }
            steps.push(d);
        }
        Ok(steps)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({} parameters, vocab {}x{}, bow={}, len={})",
            self.num_params(),
            self.src.len(),
            self.tgt.len(),
            self.model.uses_bow(),
            self.model.uses_len()
        )
    }
}

fn record<'py>(py: Python<'py>, r: &MetricsRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("step", r.step)?;
    d.set_item("epoch", r.epoch)?;
    d.set_item("loss_total", r.loss_total)?;
    d.set_item("loss_nll", r.loss_nll)?;
    d.set_item("loss_bow", r.loss_bow)?;
    d.set_item("loss_len", r.loss_len)?;
    d.set_item("grad_norm", r.grad_norm)?;
    d.set_item("dev_bleu", r.dev_bleu)?;
    Ok(d)
}

/// Trains a copy of `model` and returns a dict with the trained `model`,
/// `metrics` records, `best_dev_bleu`, `epochs_run`, `steps` and `diverged`.
#[pyfunction]
#[pyo3(signature = (model, train_corpus, dev_corpus = None, *, epochs = 20, batch_size = 64,
    lr = 0.001, seed = 1, clip_norm = 10.0, patience = 3, dev_width = 1, dev_max_len = 80,
    target_dev_bleu = None, metrics_path = None, checkpoint_path = None))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    model: &PyModel,
    train_corpus: &PyCorpus,
    dev_corpus: Option<&PyCorpus>,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
    clip_norm: f64,
    patience: usize,
    dev_width: usize,
    dev_max_len: usize,
    target_dev_bleu: Option<f64>,
    metrics_path: Option<PathBuf>,
    checkpoint_path: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = TrainConfig {
        adam: AdamConfig {
            lr,
            ..Default::default()
        },
        clip_norm,
        epochs,
        batch_size,
        seed,
        patience,
        dev_width,
        dev_max_len,
        target_dev_bleu,
        metrics_path,
        checkpoint_path,
        ..Default::default()
    };
    let data = TrainData {
        train: &train_corpus.inner,
        dev: dev_corpus.map(|c| &c.inner),
        src_vocab: &model.src,
        tgt_vocab: &model.tgt,
    };
    let start = model.model.clone();
    let out = run(py.detach(|| run_training(start, &data, &cfg)))?;
    let d = PyDict::new(py);
    let metrics = out
        .metrics
        .iter()
        .map(|r| record(py, r))
        .collect::<PyResult<Vec<_>>>()?;
    d.set_item("metrics", metrics)?;
    d.set_item("best_dev_bleu", out.best_dev_bleu)?;
    d.set_item("epochs_run", out.epochs_run)?;
    d.set_item("steps", out.steps)?;
    d.set_item("diverged", out.diverged)?;
    let trained = PyModel {
        model: out.model,
        src: model.src.clone(),
        tgt: model.tgt.clone(),
    };
    d.set_item("model", Py::new(py, trained)?)?;
    Ok(d)
}

/// Corpus BLEU-4 of whitespace-tokenized hypothesis and reference lines.
#[pyfunction]
fn corpus_bleu(hyps: Vec<String>, refs: Vec<String>) -> PyResult<f64> {
    let h: Vec<Vec<String>> = hyps.iter().map(|s| tokenize(s)).collect();
    let r: Vec<Vec<String>> = refs.iter().map(|s| tokenize(s)).collect();
    run(decode::corpus_bleu(&h, &r))
}

#[pymodule]
fn fpb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyVocab>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_bleu, m)?)?;
    Ok(())
}
