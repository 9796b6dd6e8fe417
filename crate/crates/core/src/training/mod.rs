//! The combined-loss optimisation loop: topic loss, teacher-forced
//! generation loss and similarity loss, with a frozen-weight generation
//! sub-step per batch, two-group Adam, per-epoch learning-rate decay and
//! early stopping on validation loss.

mod adam;
mod sc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Float, Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::corpus::GrayImage;
use crate::model::{DecodeMode, Model};
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

pub use adam::Adam;
pub use sc::{sc_loss, sc_similarity, sc_term, ScEmbedder, SC_EPS};

/// Upper bound on `max_epochs`.
pub const MAX_EPOCHS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScMode {
    /// Similarity of expected token counts under the teacher-forced
    /// distributions; differentiable.
    #[default]
    Soft,
    /// Similarity of the generated reports; contributes no gradient.
    DiscreteEvalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub kmve: f64,
    pub tf: f64,
    pub sc: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self { kmve: 0.4, tf: 0.6, sc: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambdas: Lambdas,
    pub lr_kmve: f64,
    pub lr_rg: f64,
    pub lr_decay_per_epoch: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub sc_mode: ScMode,
    pub decode: DecodeMode,
    /// Stop as soon as an epoch's mean per-token teacher-forcing loss falls
    /// below this value.
    pub target_tf_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambdas: Lambdas::default(),
            lr_kmve: 5e-4,
            lr_rg: 1e-4,
            lr_decay_per_epoch: 0.8,
            batch_size: 8,
            max_epochs: 50,
            patience: 10,
            seed: 0,
            sc_mode: ScMode::Soft,
            decode: DecodeMode::Greedy,
            target_tf_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let l = self.lambdas;
        let fail = |m: &str| Err(Error::config(m.to_string()));
        if [l.kmve, l.tf, l.sc].iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return fail("lambdas must be non-negative");
        }
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch <= 1.0) {
            return fail("lr_decay_per_epoch must be in (0, 1]");
        }
        if !(self.lr_kmve >= 0.0 && self.lr_rg >= 0.0) {
            return fail("learning rates must be non-negative");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.max_epochs == 0 || self.max_epochs > MAX_EPOCHS {
            return Err(Error::config(format!("max_epochs must be in 1..={MAX_EPOCHS}")));
        }
        Ok(())
    }

    /// Learning rate of `group` after `epochs` completed epochs.
    pub fn lr_after(&self, group: ParamGroup, epochs: usize) -> f64 {
        let initial = match group {
            ParamGroup::Visual => self.lr_kmve,
            ParamGroup::Generator => self.lr_rg,
        };
        initial * self.lr_decay_per_epoch.powi(epochs as i32)
    }
}

/// One training example with everything the losses need.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub images: [GrayImage; 2],
    /// Vocabulary ids including `<start>` and `<end>`.
    pub token_ids: Vec<usize>,
    pub topic: usize,
    /// Similarity-comparer embedding of the ground truth.
    pub truth: Vec<f64>,
}

impl TrainSample {
    pub fn new(
        id: impl Into<String>,
        images: [GrayImage; 2],
        token_ids: Vec<usize>,
        topic: usize,
        embedder: &ScEmbedder,
    ) -> Result<Self> {
        let truth = embedder.embed_ids(&token_ids);
        if truth.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(Self { id: id.into(), images, token_ids, topic, truth })
    }
}

/// Batch-level loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Components {
    /// Mean topic cross-entropy over the batch's samples.
    pub kmve: f64,
    /// Teacher-forced cross-entropy per target token.
    pub tf: f64,
    /// Similarity loss summed over the batch's reports.
    pub sc: f64,
}

impl Components {
    pub fn total(&self, l: &Lambdas) -> f64 {
        l.kmve * self.kmve + l.tf * self.tf + l.sc * self.sc
    }

    fn is_finite(&self) -> bool {
        self.kmve.is_finite() && self.tf.is_finite() && self.sc.is_finite()
    }
}

struct SampleTerms {
    loss: Var,
    kmve: f64,
    tf_sum: f64,
    soft_sc: Option<f64>,
}

/// Builds one sample's weighted contribution to the batch loss. `tf_tokens`
/// is the batch's total target-token count and `batch` its sample count.
fn sample_terms<T: Float>(
    model: &Model,
    g: &mut Graph<T>,
    s: &ParamStore<T>,
    sample: &TrainSample,
    config: &TrainConfig,
    embedder: &ScEmbedder,
    batch: usize,
    tf_tokens: usize,
) -> Result<SampleTerms> {
    let l = config.lambdas;
    let features = model.encode_images(g, s, &sample.images)?;
    let kmve = model.kmve_loss(g, s, features.pooled_pair, sample.topic)?;
    let memory = model.memory(g, s, &features)?;
    let (input, target) = model.teacher_forcing_pair(&sample.token_ids)?;
    let decoded = model.transformer_decode(g, s, memory, &input)?;
    let ce = g.cross_entropy(decoded.logits, &target)?;

    let kmve_value = g.item(kmve)?.to_f64().unwrap_or(f64::NAN);
    let tf_sum = g.item(ce)?.to_f64().unwrap_or(f64::NAN) * target.len() as f64;
    let a = g.scale(kmve, l.kmve / batch as f64);
    let b = g.scale(ce, l.tf * target.len() as f64 / tf_tokens as f64);
    let mut loss = g.add(a, b)?;
    let mut soft_sc = None;
    if config.sc_mode == ScMode::Soft {
        let pred = embedder.embed_soft(g, decoded.logits)?;
        let sc = sc_term(g, pred, &sample.truth)?;
        soft_sc = Some(g.item(sc)?.to_f64().unwrap_or(f64::NAN));
        let c = g.scale(sc, l.sc);
        loss = g.add(loss, c)?;
    }
    Ok(SampleTerms { loss, kmve: kmve_value, tf_sum, soft_sc })
}

fn target_tokens(model: &Model, batch: &[&TrainSample]) -> Result<usize> {
    batch.iter().map(|s| Ok(model.teacher_forcing_pair(&s.token_ids)?.1.len())).sum()
}

/// Discrete similarity of a generated report to its ground truth.
fn discrete_sc(embedder: &ScEmbedder, generated: &[usize], truth: &[f64]) -> Result<f64> {
    let s = sc_similarity(&embedder.embed_ids(generated), truth)?;
    Ok(sc_loss(&[s]))
}

/// The whole batch loss in a single graph, as used for gradient checks. In
/// discrete mode the similarity term is a constant from greedy generation.
pub fn batch_loss<T: Float>(
    model: &Model,
    g: &mut Graph<T>,
    s: &ParamStore<T>,
    batch: &[&TrainSample],
    config: &TrainConfig,
    embedder: &ScEmbedder,
) -> Result<(Var, Components)> {
    if batch.is_empty() {
        return Err(Error::DatasetTooSmall { needed: 1, got: 0 });
    }
    let tokens = target_tokens(model, batch)?;
    let mut total: Option<Var> = None;
    let mut c = Components::default();
    for sample in batch {
        let t = sample_terms(model, g, s, sample, config, embedder, batch.len(), tokens)?;
        c.kmve += t.kmve / batch.len() as f64;
        c.tf += t.tf_sum / tokens as f64;
        c.sc += match t.soft_sc {
            Some(v) => v,
            None => {
                let out = model.generate_from_images(s, &sample.images, config.decode)?;
                discrete_sc(embedder, &out.token_ids, &sample.truth)?
            }
        };
        total = Some(match total {
            Some(acc) => g.add(acc, t.loss)?,
            None => t.loss,
        });
    }
    Ok((total.expect("nonempty batch"), c))
}

/// Per-batch bookkeeping of one optimisation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub components: Components,
    pub total: f64,
    /// Parameter digests immediately before and after the frozen
    /// generation sub-step.
    pub freeze_hash_before: String,
    pub freeze_hash_after: String,
    /// Similarity loss of the generated reports, whatever the mode.
    pub generated_sc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub kmve: f64,
    pub tf: f64,
    pub sc: f64,
    pub val_loss: Option<f64>,
    pub lr_kmve: f64,
    pub lr_rg: f64,
}

#[derive(Debug, Clone)]
pub struct EpochOutcome {
    pub record: EpochRecord,
    pub batches: Vec<BatchRecord>,
}

/// Receives the weights at the end of every epoch.
pub trait CheckpointSink {
    fn epoch_end(&mut self, epoch: usize, store: &ParamStore<f32>, is_best: bool) -> Result<()>;
}

/// Keeps the best weights in memory and counts checkpoints.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub saved: usize,
    pub best: Option<(usize, ParamStore<f32>)>,
}

impl CheckpointSink for MemorySink {
    fn epoch_end(&mut self, epoch: usize, store: &ParamStore<f32>, is_best: bool) -> Result<()> {
        self.saved += 1;
        if is_best {
            self.best = Some((epoch, store.clone()));
        }
        Ok(())
    }
}

/// Stops after `patience` consecutive epochs without a strictly lower
/// validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, since_best: 0 }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        let improved = self.best.is_none_or(|(_, b)| val_loss < b);
        if improved {
            self.best = Some((epoch, val_loss));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        StopDecision { improved, stop: self.since_best >= self.patience }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone)]
pub struct FitSummary {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Owns the weights and optimiser state during training.
pub struct Trainer {
    pub model: Model,
    pub store: ParamStore<f32>,
    pub config: TrainConfig,
    pub embedder: ScEmbedder,
    adam: Adam,
    epochs_done: usize,
}

impl Trainer {
    pub fn new(model: Model, store: ParamStore<f32>, config: TrainConfig, embedder: ScEmbedder) -> Result<Self> {
        config.validate()?;
        if embedder.width() + crate::corpus::RESERVED != model.config.vocab_size {
            return Err(Error::config("similarity embedder width does not match the vocabulary"));
        }
        let adam = Adam::new(&store);
        Ok(Self { model, store, config, embedder, adam, epochs_done: 0 })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Current learning rate of a parameter group.
    pub fn lr(&self, group: ParamGroup) -> f64 {
        self.config.lr_after(group, self.epochs_done)
    }

    fn batch_order(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = seeded(derive_seed(self.config.seed, &format!("epoch-{}", self.epochs_done)));
        order.shuffle(&mut rng);
        order
    }

    /// One optimisation step on `batch`.
    fn step(&mut self, batch: &[&TrainSample]) -> Result<BatchRecord> {
        let tokens = target_tokens(&self.model, batch)?;
        let (model, config, embedder) = (&self.model, &self.config, &self.embedder);

        // (1) forward passes and their gradients, one graph per sample.
        let store = &self.store;
        let forward: Vec<(Vec<(ParamId, Vec<f32>)>, f64, f64, Option<f64>)> = batch
            .par_iter()
            .map(|sample| {
                let mut g = Graph::new();
                let t = sample_terms(model, &mut g, store, sample, config, embedder, batch.len(), tokens)?;
                g.backward(t.loss)?;
                let grads = g.param_grads().map(|(id, gr)| (id, gr.to_vec())).collect();
                Ok((grads, t.kmve, t.tf_sum, t.soft_sc))
            })
            .collect::<Result<_>>()?;

        // (2) frozen generation: a shared borrow of the weights only.
        let before = hex(&self.store.digest());
        let generated: Vec<Vec<usize>> = batch
            .par_iter()
            .map(|s| Ok(model.generate_from_images(store, &s.images, config.decode)?.token_ids))
            .collect::<Result<_>>()?;
        let after = hex(&self.store.digest());
        if before != after {
            return Err(Error::numerics("weights changed during frozen generation"));
        }

        // (3) similarity loss and (4) the weighted total.
        let mut c = Components::default();
        let mut generated_sc = 0.0;
        for ((_, kmve, tf, soft), (sample, ids)) in forward.iter().zip(batch.iter().zip(&generated)) {
            c.kmve += kmve / batch.len() as f64;
            c.tf += tf / tokens as f64;
            let discrete = discrete_sc(embedder, ids, &sample.truth)?;
            generated_sc += discrete;
            c.sc += soft.unwrap_or(discrete);
        }
        let total = c.total(&config.lambdas);
        if !c.is_finite() || !total.is_finite() {
            return Err(Error::numerics(format!("non-finite loss {total}")));
        }

        // (5) Adam with per-group rates; gradients summed in batch order.
        self.store.zero_grad();
        for (grads, ..) in &forward {
            for (id, gr) in grads {
                for (acc, &v) in self.store.get_mut(*id).grad.iter_mut().zip(gr) {
                    *acc += v;
                }
            }
        }
        let (lr_v, lr_g) = (self.lr(ParamGroup::Visual), self.lr(ParamGroup::Generator));
        self.adam.step(&mut self.store, |group| match group {
            ParamGroup::Visual => lr_v,
            ParamGroup::Generator => lr_g,
        })?;
        Ok(BatchRecord {
            components: c,
            total,
            freeze_hash_before: before,
            freeze_hash_after: after,
            generated_sc,
        })
    }

    /// One pass over `train` in a seeded order; decays both learning rates
    /// at the end.
    pub fn train_epoch(&mut self, train: &[TrainSample]) -> Result<EpochOutcome> {
        if train.is_empty() {
            return Err(Error::DatasetTooSmall { needed: 1, got: 0 });
        }
        let order = self.batch_order(train.len());
        let mut batches = Vec::new();
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &train[i]).collect();
            batches.push(self.step(&batch)?);
        }
        let n = batches.len() as f64;
        let mean = |f: fn(&Components) -> f64| batches.iter().map(|b| f(&b.components)).sum::<f64>() / n;
        let (kmve, tf, sc) = (mean(|c| c.kmve), mean(|c| c.tf), mean(|c| c.sc));
        let record = EpochRecord {
            epoch: self.epochs_done + 1,
            mean_loss: Components { kmve, tf, sc }.total(&self.config.lambdas),
            kmve,
            tf,
            sc,
            val_loss: None,
            lr_kmve: self.lr(ParamGroup::Visual),
            lr_rg: self.lr(ParamGroup::Generator),
        };
        self.epochs_done += 1;
        Ok(EpochOutcome { record, batches })
    }

    /// Mean batch components on held-out data with generated-report
    /// similarity.
    pub fn evaluate(&self, data: &[TrainSample]) -> Result<Components> {
        if data.is_empty() {
            return Err(Error::DatasetTooSmall { needed: 1, got: 0 });
        }
        let config = TrainConfig { sc_mode: ScMode::DiscreteEvalOnly, ..self.config.clone() };
        let chunks: Vec<Vec<&TrainSample>> = data.iter().collect::<Vec<_>>().chunks(config.batch_size).map(<[_]>::to_vec).collect();
        let per_batch: Vec<Components> = chunks
            .par_iter()
            .map(|batch| {
                let mut g = Graph::inference();
                Ok(batch_loss(&self.model, &mut g, &self.store, batch, &config, &self.embedder)?.1)
            })
            .collect::<Result<_>>()?;
        let n = per_batch.len() as f64;
        Ok(Components {
            kmve: per_batch.iter().map(|c| c.kmve).sum::<f64>() / n,
            tf: per_batch.iter().map(|c| c.tf).sum::<f64>() / n,
            sc: per_batch.iter().map(|c| c.sc).sum::<f64>() / n,
        })
    }

    /// Trains until `max_epochs`, early stopping, or the teacher-forcing
    /// target. `on_epoch` sees every finished record.
    pub fn fit(
        &mut self,
        train: &[TrainSample],
        val: &[TrainSample],
        sink: &mut dyn CheckpointSink,
        mut on_epoch: impl FnMut(&EpochOutcome),
    ) -> Result<FitSummary> {
        if val.is_empty() {
            return Err(Error::DatasetTooSmall { needed: 1, got: 0 });
        }
        let mut stopper = EarlyStopping::new(self.config.patience);
        let mut records = Vec::new();
        let mut last_good = None;
        let with_epoch = |e: Error, last: Option<usize>| match e {
            Error::Numerics { message, .. } => Error::Numerics { message, last_good_epoch: last },
            other => other,
        };
        while self.epochs_done < self.config.max_epochs {
            let mut outcome = self.train_epoch(train).map_err(|e| with_epoch(e, last_good))?;
            let val_loss = self.evaluate(val)?.total(&self.config.lambdas);
            if !val_loss.is_finite() {
                return Err(with_epoch(Error::numerics("non-finite validation loss"), last_good));
            }
            outcome.record.val_loss = Some(val_loss);
            let epoch = outcome.record.epoch;
            let decision = stopper.observe(epoch, val_loss);
            sink.epoch_end(epoch, &self.store, decision.improved)?;
            last_good = Some(epoch);
            on_epoch(&outcome);
            let tf = outcome.record.tf;
            records.push(outcome.record);
            if decision.stop || self.config.target_tf_loss.is_some_and(|t| tf < t) {
                break;
            }
        }
        let (best_epoch, best_val_loss) = stopper.best().expect("at least one epoch ran");
        Ok(FitSummary { records, best_epoch, best_val_loss })
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
