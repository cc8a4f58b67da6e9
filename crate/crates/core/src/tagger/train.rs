//! Tagger training: mini-batch gradient descent with linear warmup, a
//! configurable post-warmup schedule, global-norm gradient clipping, and
//! early stopping on validation strict micro-F1 with best-checkpoint
//! retention.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{encode_bio, Document, LabelSet};
use crate::metrics::{aggregate, match_spans, ClassCounts, MatchMode};

use super::lstm::BiLstm;
use super::{
    softmax_rows, BiLstmConfig, CrfParams, EncoderSource, EpochStats, LossKind, Projection,
    Scheduler, TaggerEncoder, TaggerError, TrainedTagger, TrainingHistory,
};

struct Grads {
    lstm: Option<BiLstm>,
    proj_w: Array2<f64>,
    proj_b: Array1<f64>,
    trans: Array2<f64>,
    start: Array1<f64>,
    end: Array1<f64>,
}

impl Grads {
    fn zeros(model: &TrainedTagger) -> Self {
        let k = model.label_set.len();
        let in_dim = model.encoder.output_dim();
        Grads {
            lstm: match &model.encoder {
                TaggerEncoder::BiLstm(net) => {
                    let mut z = net.clone();
                    z.zip_tensors_mut(net, |a, _| *a = 0.0);
                    Some(z)
                }
                TaggerEncoder::Frozen { .. } => None,
            },
            proj_w: Array2::zeros((in_dim, k)),
            proj_b: Array1::zeros(k),
            trans: Array2::zeros((k, k)),
            start: Array1::zeros(k),
            end: Array1::zeros(k),
        }
    }

    fn add(&mut self, other: &Grads) {
        if let (Some(a), Some(b)) = (self.lstm.as_mut(), other.lstm.as_ref()) {
            a.zip_tensors_mut(b, |x, y| *x += y);
        }
        self.proj_w += &other.proj_w;
        self.proj_b += &other.proj_b;
        self.trans += &other.trans;
        self.start += &other.start;
        self.end += &other.end;
    }

    fn scale(&mut self, c: f64) {
        if let Some(net) = self.lstm.as_mut() {
            let copy = net.clone();
            net.zip_tensors_mut(&copy, |x, _| *x *= c);
        }
        self.proj_w *= c;
        self.proj_b *= c;
        self.trans *= c;
        self.start *= c;
        self.end *= c;
    }

    fn sq_norm(&self) -> f64 {
        let mut total = 0.0;
        if let Some(net) = self.lstm.as_ref() {
            net.for_each_tensor(|&v| total += v * v);
        }
        total += self.proj_w.iter().map(|v| v * v).sum::<f64>();
        total += self.proj_b.iter().map(|v| v * v).sum::<f64>();
        total += self.trans.iter().map(|v| v * v).sum::<f64>();
        total += self.start.iter().map(|v| v * v).sum::<f64>();
        total += self.end.iter().map(|v| v * v).sum::<f64>();
        total
    }
}

fn apply_step(model: &mut TrainedTagger, grads: &Grads, lr: f64, weight_decay: f64) {
    if let TaggerEncoder::BiLstm(net) = &mut model.encoder {
        net.sgd_step(grads.lstm.as_ref().expect("lstm grads"), lr, weight_decay);
    }
    model
        .projection
        .w
        .zip_mut_with(&grads.proj_w, |a, &g| *a -= lr * g + lr * weight_decay * *a);
    model.projection.b.zip_mut_with(&grads.proj_b, |a, &g| *a -= lr * g);
    // pinned CRF entries carry zero gradient by construction
    model.crf.transitions.zip_mut_with(&grads.trans, |a, &g| *a -= lr * g);
    model.crf.start.zip_mut_with(&grads.start, |a, &g| *a -= lr * g);
    model.crf.end.zip_mut_with(&grads.end, |a, &g| *a -= lr * g);
}

/// Loss and full gradients for one document.
fn doc_backward(
    model: &TrainedTagger,
    input: &Array2<f64>,
    labels: &[usize],
    loss: LossKind,
) -> (f64, Grads) {
    let mut grads = Grads::zeros(model);
    let (hidden, caches) = match &model.encoder {
        TaggerEncoder::BiLstm(net) => {
            let (h, c) = net.forward_cached(input.view());
            (h, Some(c))
        }
        TaggerEncoder::Frozen { .. } => (input.clone(), None),
    };
    let emissions = model.projection.forward(hidden.view());

    let (loss_value, d_em) = match loss {
        LossKind::CrfNll => {
            let (nll, g) = model.crf.nll(emissions.view(), labels);
            grads.trans = g.transitions;
            grads.start = g.start;
            grads.end = g.end;
            (nll, g.emissions)
        }
        LossKind::CrossEntropy => {
            let probs = softmax_rows(emissions.view());
            let t_len = labels.len() as f64;
            let mut loss_value = 0.0;
            let mut d_em = probs;
            for (t, &y) in labels.iter().enumerate() {
                loss_value -= d_em[(t, y)].max(1e-300).ln();
                d_em[(t, y)] -= 1.0;
            }
            d_em /= t_len;
            (loss_value / t_len, d_em)
        }
    };

    grads.proj_w = hidden.t().dot(&d_em);
    grads.proj_b = d_em.sum_axis(Axis(0));
    if let (TaggerEncoder::BiLstm(net), Some(caches)) = (&model.encoder, caches) {
        let d_hidden = d_em.dot(&model.projection.w.t());
        let (layer_grads, _) = net.backward(&caches, d_hidden);
        grads.lstm = Some(net.with_layers(layer_grads));
    }
    (loss_value, grads)
}

fn doc_loss(model: &TrainedTagger, input: &Array2<f64>, labels: &[usize], loss: LossKind) -> f64 {
    let emissions = model
        .emissions(input.view())
        .expect("validated widths");
    match loss {
        LossKind::CrfNll => {
            model.crf.log_partition(emissions.view()) - model.crf.score(emissions.view(), labels)
        }
        LossKind::CrossEntropy => {
            let probs = softmax_rows(emissions.view());
            let mut total = 0.0;
            for (t, &y) in labels.iter().enumerate() {
                total -= probs[(t, y)].max(1e-300).ln();
            }
            total / labels.len() as f64
        }
    }
}

fn validation_strict_micro_f1(
    model: &TrainedTagger,
    docs: &[Document],
    inputs: &[Array2<f64>],
) -> f64 {
    let mut pooled = ClassCounts::default();
    for (doc, input) in docs.iter().zip(inputs) {
        if doc.tokens.is_empty() {
            continue;
        }
        let emissions = model.emissions(input.view()).expect("validated widths");
        let (path, _) = model.crf.viterbi(emissions.view());
        let spans = crate::corpus::decode_bio_indices(&path, &model.label_set);
        for counts in match_spans(&spans, &doc.entities, MatchMode::Strict).values() {
            pooled.add(counts);
        }
    }
    let (micro, _) = aggregate([&pooled], 1.0);
    micro.f
}

struct LrSchedule {
    base: f64,
    scheduler: Scheduler,
    warmup_steps: usize,
    total_steps: usize,
    plateau_factor: f64,
    plateau_best: f64,
    plateau_wait: usize,
}

impl LrSchedule {
    fn new(config: &BiLstmConfig, total_steps: usize) -> Self {
        LrSchedule {
            base: config.learning_rate,
            scheduler: config.scheduler,
            warmup_steps: ((config.warmup_ratio * total_steps as f64).ceil() as usize).max(1),
            total_steps,
            plateau_factor: 1.0,
            plateau_best: f64::INFINITY,
            plateau_wait: 0,
        }
    }

    fn lr_at(&self, step: usize, epoch: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let rest = (self.total_steps - self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / rest).min(1.0);
        match self.scheduler {
            Scheduler::ReduceOnPlateau => self.base * self.plateau_factor,
            Scheduler::CosineAnnealing => {
                self.base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
            Scheduler::OneCycle => self.base * (1.0 - progress),
            Scheduler::Exponential => self.base * 0.95f64.powi(epoch as i32),
        }
    }

    /// Plateau bookkeeping: halve after one epoch without val-loss progress.
    fn observe_val_loss(&mut self, val_loss: f64) {
        if val_loss < self.plateau_best - 1e-12 {
            self.plateau_best = val_loss;
            self.plateau_wait = 0;
        } else {
            self.plateau_wait += 1;
            if self.plateau_wait > 1 {
                self.plateau_factor *= 0.5;
                self.plateau_wait = 0;
            }
        }
    }
}

/// Trains a tagger over core5 labels. The encoder source decides what is
/// trainable: static word vectors drive a Bi-LSTM, an archive freezes the
/// encoder and trains only the projection and CRF.
pub fn train_tagger(
    train: &[Document],
    val: &[Document],
    source: EncoderSource<'_>,
    config: &BiLstmConfig,
    seed: u64,
) -> Result<TrainedTagger, TaggerError> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TaggerError::Config(
            "training and validation splits must be non-empty".into(),
        ));
    }

    let label_set = LabelSet::core5();
    let k = label_set.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let encoder = match source {
        EncoderSource::Static(table) => TaggerEncoder::BiLstm(BiLstm::init(
            config.num_layers,
            table.dim(),
            config.hidden_total,
            &mut rng,
        )),
        EncoderSource::Archive(archive) => TaggerEncoder::Frozen { dim: archive.dim() },
    };
    let mut model = TrainedTagger {
        projection: Projection::init(encoder.output_dim(), k, &mut rng),
        crf: CrfParams::bio(&label_set),
        label_set: label_set.clone(),
        encoder,
        history: TrainingHistory::default(),
    };

    let prepare = |docs: &[Document]| -> Result<(Vec<Array2<f64>>, Vec<Vec<usize>>), TaggerError> {
        let mut inputs = Vec::with_capacity(docs.len());
        let mut labels = Vec::with_capacity(docs.len());
        for doc in docs {
            inputs.push(source.input_matrix(doc)?);
            let bio = encode_bio(doc).expect("validated documents encode");
            labels.push(label_set.encode(&bio));
        }
        Ok((inputs, labels))
    };
    let (train_inputs, train_labels) = prepare(train)?;
    let (val_inputs, val_labels) = prepare(val)?;

    let trainable: Vec<usize> = (0..train.len()).filter(|&i| !train[i].tokens.is_empty()).collect();
    if trainable.is_empty() {
        return Err(TaggerError::Config("no non-empty training documents".into()));
    }

    let steps_per_epoch = trainable.len().div_ceil(config.batch_size);
    let mut schedule = LrSchedule::new(config, config.max_epochs * steps_per_epoch);

    let mut best_snapshot = model.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut wait = 0usize;
    let mut step = 0usize;
    let mut history = TrainingHistory::default();

    for epoch in 1..=config.max_epochs {
        let mut order = trainable.clone();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut epoch_docs = 0usize;
        let mut last_lr = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = Grads::zeros(&model);
            let mut batch_loss = 0.0;
            for &i in batch {
                let (loss, doc_grads) =
                    doc_backward(&model, &train_inputs[i], &train_labels[i], config.loss);
                batch_loss += loss;
                grads.add(&doc_grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            let norm = grads.sq_norm().sqrt();
            if norm > config.grad_clip {
                grads.scale(config.grad_clip / norm);
            }
            let lr = schedule.lr_at(step, epoch - 1);
            last_lr = lr;
            apply_step(&mut model, &grads, lr, config.weight_decay);
            step += 1;
            epoch_loss += batch_loss;
            epoch_docs += batch.len();
        }

        let mut val_loss = 0.0;
        let mut val_docs = 0usize;
        for (i, doc) in val.iter().enumerate() {
            if doc.tokens.is_empty() {
                continue;
            }
            val_loss += doc_loss(&model, &val_inputs[i], &val_labels[i], config.loss);
            val_docs += 1;
        }
        let val_loss = if val_docs > 0 { val_loss / val_docs as f64 } else { 0.0 };
        let val_f1 = validation_strict_micro_f1(&model, val, &val_inputs);
        schedule.observe_val_loss(val_loss);

        history.epochs.push(EpochStats {
            epoch,
            train_loss: epoch_loss / epoch_docs as f64,
            val_loss,
            val_strict_micro_f1: val_f1,
            learning_rate: last_lr,
        });
        log::debug!(
            "epoch {epoch}: train_loss {:.4} val_loss {val_loss:.4} val_f1 {val_f1:.4}",
            epoch_loss / epoch_docs as f64
        );

        if val_f1 > best_f1 {
            best_f1 = val_f1;
            best_epoch = epoch;
            best_snapshot = model.clone();
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience {
                break;
            }
        }
    }

    history.best_epoch = best_epoch;
    let mut result = best_snapshot;
    result.history = history;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityKind, EntitySpan, Token};
    use crate::embed::WordVectorTable;
    use rand::Rng;
    use std::collections::HashMap;

    /// Corpus where a fixed lexicon marks entities unambiguously.
    pub(crate) fn separable_corpus(
        n_docs: usize,
        seed: u64,
    ) -> (Vec<Document>, WordVectorTable) {
        let drugs = ["zelmiron", "cortaxol", "velaprim", "dactozen"];
        let disorders = ["nephritis", "exanthema", "pyrexia", "hypotension"];
        let filler = ["the", "patient", "was", "given", "after", "onset", "of", "noted"];

        let dim = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = HashMap::new();
        for word in drugs.iter().chain(&disorders).chain(&filler) {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            entries.insert(word.to_string(), v);
        }
        let table = WordVectorTable::new(dim, entries);

        let docs = (0..n_docs)
            .map(|i| {
                let mut words: Vec<&str> = Vec::new();
                let mut spans = Vec::new();
                for _ in 0..rng.random_range(6..10) {
                    words.push(filler[rng.random_range(0..filler.len())]);
                }
                let drug_pos = rng.random_range(0..words.len());
                words.insert(drug_pos, drugs[rng.random_range(0..drugs.len())]);
                spans.push(EntitySpan::new("e0", EntityKind::Drug, drug_pos, drug_pos + 1));
                let dis_pos = rng.random_range(drug_pos + 1..=words.len());
                words.insert(dis_pos, disorders[rng.random_range(0..disorders.len())]);
                spans.push(EntitySpan::new("e1", EntityKind::Disorder, dis_pos, dis_pos + 1));

                let mut text = String::new();
                let tokens: Vec<Token> = words
                    .iter()
                    .map(|w| {
                        if !text.is_empty() {
                            text.push(' ');
                        }
                        let start = text.len();
                        text.push_str(w);
                        Token {
                            text: w.to_string(),
                            char_start: start,
                            char_end: text.len(),
                            sentence_index: 0,
                        }
                    })
                    .collect();
                Document::new(format!("doc{i}"), text, tokens, spans, vec![], vec![], None)
                    .unwrap()
            })
            .collect();
        (docs, table)
    }

    fn fast_config() -> BiLstmConfig {
        BiLstmConfig {
            hidden_total: 16,
            learning_rate: 1.0,
            batch_size: 8,
            max_epochs: 15,
            patience: 5,
            ..Default::default()
        }
    }

    #[test]
    fn learns_separable_corpus() {
        let (docs, table) = separable_corpus(52, 40);
        let (train, val) = docs.split_at(40);
        let model = train_tagger(
            train,
            val,
            EncoderSource::Static(&table),
            &fast_config(),
            7,
        )
        .unwrap();
        let best = model
            .history
            .epochs
            .iter()
            .map(|e| e.val_strict_micro_f1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(best >= 0.95, "validation strict micro-F1 {best}");
    }

    #[test]
    fn same_seed_bit_identical_histories() {
        let (docs, table) = separable_corpus(20, 41);
        let (train, val) = docs.split_at(16);
        let config = BiLstmConfig {
            max_epochs: 3,
            ..fast_config()
        };
        let a = train_tagger(train, val, EncoderSource::Static(&table), &config, 9).unwrap();
        let b = train_tagger(train, val, EncoderSource::Static(&table), &config, 9).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.projection, b.projection);
        let c = train_tagger(train, val, EncoderSource::Static(&table), &config, 10).unwrap();
        assert_ne!(a.history, c.history);
    }

    #[test]
    fn patience_stops_after_flat_validation() {
        // a learning rate of zero freezes the model, so validation F1 is
        // constant: best epoch 1, then patience exhausts
        let (docs, table) = separable_corpus(16, 42);
        let (train, val) = docs.split_at(12);
        let config = BiLstmConfig {
            learning_rate: 1e-12,
            patience: 3,
            max_epochs: 10,
            ..fast_config()
        };
        let model = train_tagger(train, val, EncoderSource::Static(&table), &config, 3).unwrap();
        assert_eq!(model.history.best_epoch, 1);
        assert_eq!(model.history.epochs.len(), 4);
    }

    #[test]
    fn early_stopping_epoch_bound() {
        let (docs, table) = separable_corpus(30, 43);
        let (train, val) = docs.split_at(24);
        let config = BiLstmConfig {
            patience: 2,
            max_epochs: 10,
            ..fast_config()
        };
        let model = train_tagger(train, val, EncoderSource::Static(&table), &config, 5).unwrap();
        let epochs_run = model.history.epochs.len();
        assert!(epochs_run <= model.history.best_epoch + config.patience + 1);
    }

    #[test]
    fn empty_split_rejected() {
        let (docs, table) = separable_corpus(4, 44);
        let err = train_tagger(&docs, &[], EncoderSource::Static(&table), &fast_config(), 0)
            .unwrap_err();
        assert!(matches!(err, TaggerError::Config(_)));
    }

    #[test]
    fn frozen_archive_path_trains_projection() {
        use crate::embed::{ContextualArchive, DocEmbeddings};
        let (docs, _) = separable_corpus(20, 45);
        // archive rows: one-hot-ish markers derived from gold labels, which a
        // linear probe can separate
        let mut archive = ContextualArchive::new(6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for doc in &docs {
            let bio = encode_bio(doc).unwrap();
            let rows = Array2::from_shape_fn((doc.tokens.len(), 6), |(t, j)| {
                let class = match bio[t] {
                    crate::corpus::BioLabel::Outside => 0,
                    crate::corpus::BioLabel::Begin(EntityKind::Drug) => 1,
                    crate::corpus::BioLabel::Begin(EntityKind::Disorder) => 2,
                    _ => 3,
                };
                if j == class {
                    1.0
                } else {
                    rng.random_range(-0.05..0.05)
                }
            });
            archive.insert(
                doc.id.clone(),
                DocEmbeddings {
                    token_vectors: rows.mapv(|v| v as f32),
                    sentence_vectors: Array2::zeros((doc.sentence_count(), 6)),
                    label_probs: None,
                },
            );
        }
        let (train, val) = docs.split_at(16);
        let config = BiLstmConfig {
            learning_rate: 1.0,
            max_epochs: 12,
            ..fast_config()
        };
        let model =
            train_tagger(train, val, EncoderSource::Archive(&archive), &config, 2).unwrap();
        assert!(matches!(model.encoder, TaggerEncoder::Frozen { dim: 6 }));
        let best = model
            .history
            .epochs
            .iter()
            .map(|e| e.val_strict_micro_f1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(best >= 0.9, "frozen-path validation F1 {best}");
    }

    #[test]
    fn cross_entropy_loss_also_learns() {
        let (docs, table) = separable_corpus(40, 46);
        let (train, val) = docs.split_at(32);
        // mean-per-token CE has ~1/T the gradient scale of sequence NLL
        let config = BiLstmConfig {
            loss: LossKind::CrossEntropy,
            learning_rate: 6.0,
            ..fast_config()
        };
        let model = train_tagger(train, val, EncoderSource::Static(&table), &config, 11).unwrap();
        let best = model
            .history
            .epochs
            .iter()
            .map(|e| e.val_strict_micro_f1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(best >= 0.9, "cross-entropy validation F1 {best}");
    }
}
