//! Sequence labeling: a Bi-LSTM encoder over static word vectors or a frozen
//! projection over precomputed contextual embeddings, both topped by a
//! linear-chain CRF. Decoding is Viterbi; per-token label probabilities come
//! from softmaxed emissions.

mod checkpoint;
mod crf;
mod lstm;
mod search;
mod train;

pub use checkpoint::{load_tagger, save_tagger};
pub use crf::{CrfGradients, CrfParams};
pub use lstm::{BiLstm, BiLstmLayer, LstmDirection};
pub use search::{random_search, SearchSpace, Trial};
pub use train::train_tagger;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{decode_bio_indices, Document, EntitySpan, LabelSet};
use crate::embed::{ContextualArchive, WordVectorTable};

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("document {0} missing from contextual archive")]
    MissingDocument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    ReduceOnPlateau,
    CosineAnnealing,
    OneCycle,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Sequence negative log-likelihood through the CRF (default).
    CrfNll,
    /// Per-token categorical cross-entropy over softmaxed emissions; the CRF
    /// then only constrains decoding.
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiLstmConfig {
    pub num_layers: usize,
    /// Both directions combined; must be even.
    pub hidden_total: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub scheduler: Scheduler,
    pub patience: usize,
    pub max_epochs: usize,
    /// Fraction of total steps spent on the linear warmup ramp.
    pub warmup_ratio: f64,
    pub loss: LossKind,
    pub grad_clip: f64,
}

impl Default for BiLstmConfig {
    fn default() -> Self {
        BiLstmConfig {
            num_layers: 1,
            hidden_total: 256,
            learning_rate: 0.1,
            batch_size: 32,
            weight_decay: 0.0,
            scheduler: Scheduler::ReduceOnPlateau,
            patience: 3,
            max_epochs: 10,
            warmup_ratio: 0.2,
            loss: LossKind::CrfNll,
            grad_clip: 5.0,
        }
    }
}

impl BiLstmConfig {
    pub fn validate(&self) -> Result<(), TaggerError> {
        if self.hidden_total % 2 != 0 || self.hidden_total == 0 {
            return Err(TaggerError::Config("hidden_total must be a positive even number".into()));
        }
        if self.num_layers == 0 {
            return Err(TaggerError::Config("num_layers must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(TaggerError::Config("learning_rate must be positive".into()));
        }
        if self.patience == 0 {
            return Err(TaggerError::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(TaggerError::Config("batch_size and max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Linear map from encoder rows to emission scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// in_dim × K.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Projection {
    pub fn init(in_dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        use rand::Rng;
        let scale = 1.0 / (in_dim as f64).sqrt();
        let mut w = Array2::zeros((in_dim, k));
        w.mapv_inplace(|_| rng.random_range(-scale..scale));
        Projection {
            w,
            b: Array1::zeros(k),
        }
    }

    pub fn zeros(in_dim: usize, k: usize) -> Self {
        Projection {
            w: Array2::zeros((in_dim, k)),
            b: Array1::zeros(k),
        }
    }

    pub fn forward(&self, hidden: ArrayView2<'_, f64>) -> Array2<f64> {
        hidden.dot(&self.w) + &self.b
    }
}

/// The trainable encoder behind the emission projection.
#[derive(Debug, Clone, PartialEq)]
pub enum TaggerEncoder {
    /// Bi-LSTM over static word vectors.
    BiLstm(BiLstm),
    /// Precomputed contextual rows used as-is.
    Frozen { dim: usize },
}

impl TaggerEncoder {
    pub fn output_dim(&self) -> usize {
        match self {
            TaggerEncoder::BiLstm(net) => net.hidden_total(),
            TaggerEncoder::Frozen { dim } => *dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TaggerEncoder::BiLstm(net) => net.input_dim(),
            TaggerEncoder::Frozen { dim } => *dim,
        }
    }
}

/// Where a document's token representations come from.
#[derive(Clone, Copy)]
pub enum EncoderSource<'a> {
    Static(&'a WordVectorTable),
    Archive(&'a ContextualArchive),
}

impl<'a> EncoderSource<'a> {
    /// T×dim input rows for one document.
    pub fn input_matrix(&self, doc: &Document) -> Result<Array2<f64>, TaggerError> {
        match self {
            EncoderSource::Static(table) => Ok(table.embed_document(doc)),
            EncoderSource::Archive(archive) => {
                let emb = archive
                    .get(&doc.id)
                    .ok_or_else(|| TaggerError::MissingDocument(doc.id.clone()))?;
                Ok(emb.token_vectors.mapv(|v| v as f64))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EncoderSource::Static(table) => table.dim(),
            EncoderSource::Archive(archive) => archive.dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_strict_micro_f1: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose checkpoint was kept.
    pub best_epoch: usize,
}

/// A trained sequence tagger: encoder, emission projection, CRF, history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedTagger {
    pub label_set: LabelSet,
    pub encoder: TaggerEncoder,
    pub projection: Projection,
    pub crf: CrfParams,
    pub history: TrainingHistory,
}

impl TrainedTagger {
    /// Encoder rows for one document's input matrix.
    pub fn hidden_states(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>, TaggerError> {
        match &self.encoder {
            TaggerEncoder::BiLstm(net) => {
                if input.ncols() != net.input_dim() {
                    return Err(TaggerError::Shape(format!(
                        "input width {} does not match encoder width {}",
                        input.ncols(),
                        net.input_dim()
                    )));
                }
                Ok(net.forward(input))
            }
            TaggerEncoder::Frozen { dim } => {
                if input.ncols() != *dim {
                    return Err(TaggerError::Shape(format!(
                        "input width {} does not match archive width {dim}",
                        input.ncols()
                    )));
                }
                Ok(input.to_owned())
            }
        }
    }

    pub fn emissions(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>, TaggerError> {
        Ok(self.projection.forward(self.hidden_states(input)?.view()))
    }

    /// T×K rows, each non-negative and summing to 1.
    pub fn token_probabilities(
        &self,
        input: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>, TaggerError> {
        Ok(softmax_rows(self.emissions(input)?.view()))
    }

    /// Viterbi-decoded entity spans plus the per-token probability rows.
    pub fn predict(
        &self,
        doc: &Document,
        source: EncoderSource<'_>,
    ) -> Result<(Vec<EntitySpan>, Array2<f64>), TaggerError> {
        if doc.tokens.is_empty() {
            return Ok((Vec::new(), Array2::zeros((0, self.label_set.len()))));
        }
        let input = source.input_matrix(doc)?;
        let emissions = self.emissions(input.view())?;
        let (path, _) = self.crf.viterbi(emissions.view());
        let spans = decode_bio_indices(&path, &self.label_set);
        Ok((spans, softmax_rows(emissions.view())))
    }
}

/// Row-wise softmax with max-shifting.
pub fn softmax_rows(m: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}
