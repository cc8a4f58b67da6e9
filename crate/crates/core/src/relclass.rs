//! Binary relation classifiers: a 4-layer feed-forward network with ReLU
//! activations, inverted dropout, a logistic output, and binary focal loss.
//! One head scores ADE vs no-ADE, an identical head scores indication vs
//! no-indication; both share this code.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{binary_class_counts, f_beta, prf};
use crate::pairs::LayoutKind;

#[derive(Debug, Error)]
pub enum RcError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    /// in × out.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Four affine layers, ReLU between them, logistic squash on the scalar
/// output. Dropout applies to hidden activations during training only.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<AffineLayer>,
    pub dropout_rate: f64,
}

impl MlpParams {
    /// He-style uniform init over widths `input → hidden… → 1`.
    pub fn init(input_dim: usize, hidden: &[usize], dropout_rate: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|pair| {
                let (d_in, d_out) = (pair[0], pair[1]);
                let bound = (6.0 / d_in as f64).sqrt();
                let mut w = Array2::zeros((d_in, d_out));
                w.mapv_inplace(|_| rng.random_range(-bound..bound));
                AffineLayer {
                    w,
                    b: Array1::zeros(d_out),
                }
            })
            .collect();
        MlpParams {
            layers,
            dropout_rate,
        }
    }

    pub fn zeros(input_dim: usize, hidden: &[usize], dropout_rate: f64) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|pair| AffineLayer {
                w: Array2::zeros((pair[0], pair[1])),
                b: Array1::zeros(pair[1]),
            })
            .collect();
        MlpParams {
            layers,
            dropout_rate,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    fn check_width(&self, x: ArrayView2<'_, f64>) -> Result<(), RcError> {
        if x.ncols() != self.input_dim() {
            return Err(RcError::Shape(format!(
                "input width {} does not match model width {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Batch forward pass. Dropout masks are drawn from `rng` only in train
    /// mode (inverted dropout, so evaluation needs no rescaling).
    fn forward_batch(
        &self,
        x: ArrayView2<'_, f64>,
        train_mode: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array1<f64>, BatchCache), RcError> {
        self.check_width(x)?;
        let mut rng = rng;
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len() - 1);
        let mut masks: Vec<Option<Array2<f64>>> = Vec::with_capacity(self.layers.len() - 1);

        let mut current = x.to_owned();
        for layer in &self.layers[..self.layers.len() - 1] {
            let mut a = current.dot(&layer.w) + &layer.b;
            a.mapv_inplace(|v| v.max(0.0));
            let mask = if train_mode && self.dropout_rate > 0.0 {
                let rng = rng.as_deref_mut().expect("train mode needs an rng");
                let keep = 1.0 - self.dropout_rate;
                let mask = Array2::from_shape_fn(a.raw_dim(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                a *= &mask;
                Some(mask)
            } else {
                None
            };
            activations.push(a.clone());
            masks.push(mask);
            current = a;
        }
        let last = self.layers.last().unwrap();
        let logits = (current.dot(&last.w) + &last.b).column(0).to_owned();
        let probs = logits.mapv(|z| 1.0 / (1.0 + (-z).exp()));
        Ok((
            probs,
            BatchCache {
                activations,
                masks,
                logits,
            },
        ))
    }

    /// Backpropagates `d_logits` through the stack; returns per-layer grads.
    fn backward_batch(
        &self,
        x: ArrayView2<'_, f64>,
        cache: &BatchCache,
        d_logits: &Array1<f64>,
    ) -> Vec<AffineLayer> {
        let n_layers = self.layers.len();
        let mut grads: Vec<Option<AffineLayer>> = (0..n_layers).map(|_| None).collect();

        let mut d_out = d_logits
            .view()
            .insert_axis(Axis(1))
            .to_owned();
        for l in (0..n_layers).rev() {
            let input = if l == 0 {
                x.to_owned()
            } else {
                cache.activations[l - 1].clone()
            };
            let dw = input.t().dot(&d_out);
            let db = d_out.sum_axis(Axis(0));
            if l > 0 {
                let mut d_in = d_out.dot(&self.layers[l].w.t());
                if let Some(mask) = &cache.masks[l - 1] {
                    d_in *= mask;
                }
                // ReLU gate: activation zero means the unit was off
                d_in.zip_mut_with(&cache.activations[l - 1], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                d_out = d_in;
            }
            grads[l] = Some(AffineLayer { w: dw, b: db });
        }
        grads.into_iter().map(|g| g.unwrap()).collect()
    }
}

struct BatchCache {
    activations: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    logits: Array1<f64>,
}

/// Single-pair forward pass; probability in (0,1).
pub fn mlp_forward(
    params: &MlpParams,
    x: &[f64],
    train_mode: bool,
    seed: u64,
) -> Result<f64, RcError> {
    let input = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng_opt = if train_mode { Some(&mut rng) } else { None };
    let (probs, _) = params.forward_batch(input.view(), train_mode, rng_opt)?;
    Ok(probs[0])
}

/// Eval-mode scores for a list of feature vectors, order-preserving.
pub fn score_pairs(params: &MlpParams, features: &[Vec<f64>]) -> Result<Vec<f64>, RcError> {
    if features.is_empty() {
        return Ok(Vec::new());
    }
    let cols = params.input_dim();
    let mut x = Array2::zeros((features.len(), cols));
    for (i, row) in features.iter().enumerate() {
        if row.len() != cols {
            return Err(RcError::Shape(format!(
                "feature row {i} has width {}, model expects {cols}",
                row.len()
            )));
        }
        x.row_mut(i).assign(&Array1::from_vec(row.clone()));
    }
    let (probs, _) = params.forward_batch(x.view(), false, None)?;
    Ok(probs.to_vec())
}

/// Binary focal loss and its gradient with respect to the pre-squash logit.
/// `p` is clamped to `[1e-7, 1 - 1e-7]` before use.
pub fn focal_loss(p: f64, y: bool, gamma: f64, alpha: f64) -> (f64, f64) {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let (p_t, alpha_t) = if y { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    let one_minus = 1.0 - p_t;
    let loss = -alpha_t * one_minus.powf(gamma) * p_t.ln();

    // dL/dp_t, with the gamma term vanishing exactly at gamma = 0
    let d_pt = if gamma == 0.0 {
        -alpha_t / p_t
    } else {
        alpha_t * (gamma * one_minus.powf(gamma - 1.0) * p_t.ln() - one_minus.powf(gamma) / p_t)
    };
    // dp_t/dz through the logistic, sign flipped for the negative class
    let dp_dz = p * (1.0 - p);
    let d_logit = if y { d_pt * dp_dz } else { -d_pt * dp_dz };
    (loss, d_logit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    F1,
    F2,
    ValLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RcTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub selection_metric: SelectionMetric,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for RcTrainConfig {
    fn default() -> Self {
        RcTrainConfig {
            learning_rate: 1e-6,
            batch_size: 128,
            max_epochs: 100,
            patience: 20,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            selection_metric: SelectionMetric::F1,
            hidden: vec![512, 128, 32],
            dropout: 0.5,
            seed: 0,
        }
    }
}

impl RcTrainConfig {
    fn validate(&self) -> Result<(), RcError> {
        if self.learning_rate <= 0.0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(RcError::Config("rates and sizes must be positive".into()));
        }
        if self.patience == 0 {
            return Err(RcError::Config("patience must be at least 1".into()));
        }
        if self.hidden.len() != 3 {
            return Err(RcError::Config(
                "the classifier is a 4-layer network: exactly 3 hidden widths".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(RcError::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcEpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    pub val_f2: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RcHistory {
    pub epochs: Vec<RcEpochStats>,
    pub best_epoch: usize,
}

/// A trained head plus its history and the validation scores of the kept
/// checkpoint (the inputs to downstream threshold selection).
pub struct TrainedRc {
    pub params: MlpParams,
    pub history: RcHistory,
    pub val_scores: Vec<f64>,
}

/// Trains one binary head with mini-batch gradient descent and early
/// stopping on the configured selection metric (F1/F2 at threshold 0.5, or
/// validation loss). Training data should be rebalanced upstream; validation
/// stays at its natural distribution.
pub fn train_rc(
    train_x: &[Vec<f64>],
    train_y: &[bool],
    val_x: &[Vec<f64>],
    val_y: &[bool],
    config: &RcTrainConfig,
) -> Result<TrainedRc, RcError> {
    config.validate()?;
    if train_x.is_empty() || val_x.is_empty() {
        return Err(RcError::Config("training and validation sets must be non-empty".into()));
    }
    assert_eq!(train_x.len(), train_y.len());
    assert_eq!(val_x.len(), val_y.len());

    let dim = train_x[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = MlpParams::init(dim, &config.hidden, config.dropout, &mut rng);

    let to_matrix = |rows: &[Vec<f64>]| -> Result<Array2<f64>, RcError> {
        let mut m = Array2::zeros((rows.len(), dim));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(RcError::Shape(format!("row {i} has width {}", row.len())));
            }
            m.row_mut(i).assign(&Array1::from_vec(row.clone()));
        }
        Ok(m)
    };
    let val_m = to_matrix(val_x)?;

    let mut best = params.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_scores: Vec<f64> = Vec::new();
    let mut wait = 0usize;
    let mut history = RcHistory::default();

    let mut order: Vec<usize> = (0..train_x.len()).collect();
    for epoch in 1..=config.max_epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let rows: Vec<Vec<f64>> = batch.iter().map(|&i| train_x[i].clone()).collect();
            let x = to_matrix(&rows)?;
            let (probs, cache) = params.forward_batch(x.view(), true, Some(&mut rng))?;
            let mut d_logits = Array1::zeros(batch.len());
            for (row, &i) in batch.iter().enumerate() {
                let (loss, d) = focal_loss(probs[row], train_y[i], config.focal_gamma, config.focal_alpha);
                epoch_loss += loss;
                d_logits[row] = d / batch.len() as f64;
            }
            let grads = params.backward_batch(x.view(), &cache, &d_logits);
            for (layer, grad) in params.layers.iter_mut().zip(&grads) {
                layer.w.zip_mut_with(&grad.w, |a, &g| *a -= config.learning_rate * g);
                layer.b.zip_mut_with(&grad.b, |a, &g| *a -= config.learning_rate * g);
            }
        }
        let train_loss = epoch_loss / train_x.len() as f64;

        let (val_probs, _) = params.forward_batch(val_m.view(), false, None)?;
        let mut val_loss = 0.0;
        for (i, &y) in val_y.iter().enumerate() {
            val_loss += focal_loss(val_probs[i], y, config.focal_gamma, config.focal_alpha).0;
        }
        let val_loss = val_loss / val_y.len() as f64;
        let preds: Vec<bool> = val_probs.iter().map(|&p| p >= 0.5).collect();
        let counts = binary_class_counts(&preds, val_y)[0];
        let (p, r, _) = prf(&counts, 1.0);
        let val_f1 = f_beta(p, r, 1.0);
        let val_f2 = f_beta(p, r, 2.0);

        history.epochs.push(RcEpochStats {
            epoch,
            train_loss,
            val_loss,
            val_f1,
            val_f2,
        });

        let metric = match config.selection_metric {
            SelectionMetric::F1 => val_f1,
            SelectionMetric::F2 => val_f2,
            SelectionMetric::ValLoss => -val_loss,
        };
        if metric > best_metric {
            best_metric = metric;
            best_epoch = epoch;
            best = params.clone();
            best_scores = val_probs.to_vec();
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience {
                break;
            }
        }
    }

    history.best_epoch = best_epoch;
    Ok(TrainedRc {
        params: best,
        history,
        val_scores: best_scores,
    })
}

/// Document-level decision: the max pair score (0 without candidates),
/// positive when it reaches the threshold.
pub fn predict_document(scores: &[f64], threshold: f64) -> (bool, f64) {
    let doc_score = scores.iter().cloned().fold(0.0f64, f64::max);
    (doc_score >= threshold, doc_score)
}

const MAGIC: &[u8; 4] = b"RCM1";

pub fn save_rc(mut writer: impl Write, params: &MlpParams, layout: LayoutKind, history: &RcHistory) -> Result<(), RcError> {
    writer.write_all(MAGIC)?;
    writer.write_u8(match layout {
        LayoutKind::Transformer3088 => 0,
        LayoutKind::Bilstm2234 => 1,
    })?;
    writer.write_f64::<LittleEndian>(params.dropout_rate)?;
    writer.write_u32::<LittleEndian>(params.layers.len() as u32)?;
    for layer in &params.layers {
        writer.write_u32::<LittleEndian>(layer.w.nrows() as u32)?;
        writer.write_u32::<LittleEndian>(layer.w.ncols() as u32)?;
        for &v in layer.w.iter() {
            writer.write_f32::<LittleEndian>(v as f32)?;
        }
        for &v in layer.b.iter() {
            writer.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    let blob = serde_json::to_vec(history).expect("history serializes");
    writer.write_u64::<LittleEndian>(blob.len() as u64)?;
    writer.write_all(&blob)?;
    Ok(())
}

pub fn load_rc(mut reader: impl Read) -> Result<(MlpParams, LayoutKind, RcHistory), RcError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(RcError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let layout = match reader.read_u8()? {
        0 => LayoutKind::Transformer3088,
        1 => LayoutKind::Bilstm2234,
        other => return Err(RcError::Checkpoint(format!("bad layout tag {other}"))),
    };
    let dropout_rate = reader.read_f64::<LittleEndian>()?;
    let n_layers = reader.read_u32::<LittleEndian>()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = reader.read_u32::<LittleEndian>()? as usize;
        let cols = reader.read_u32::<LittleEndian>()? as usize;
        let mut w = vec![0f32; rows * cols];
        reader.read_f32_into::<LittleEndian>(&mut w)?;
        let mut b = vec![0f32; cols];
        reader.read_f32_into::<LittleEndian>(&mut b)?;
        layers.push(AffineLayer {
            w: Array2::from_shape_vec((rows, cols), w.into_iter().map(|v| v as f64).collect())
                .expect("shape matches"),
            b: Array1::from_vec(b.into_iter().map(|v| v as f64).collect()),
        });
    }
    let blob_len = reader.read_u64::<LittleEndian>()? as usize;
    let mut blob = vec![0u8; blob_len];
    reader.read_exact(&mut blob)?;
    let history: RcHistory =
        serde_json::from_slice(&blob).map_err(|e| RcError::Checkpoint(format!("history: {e}")))?;
    Ok((
        MlpParams {
            layers,
            dropout_rate,
        },
        layout,
        history,
    ))
}
