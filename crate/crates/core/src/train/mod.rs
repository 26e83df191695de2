//! Trainable bi-encoder: independent query and context projections over
//! shared hashing features, fit with the contrastive loss by minibatch SGD.

mod loss;
mod model;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use loss::{
    batch_gradient, batch_loss, contrastive_loss, contrastive_loss_grad, instance_loss, loss_gradient, InstanceFeatures, LossGradient,
};
pub use model::LinearEmbedder;

use crate::dataset::RetrievalInstance;
use crate::kb::{KbError, LabelMap, Triple};
use crate::retrieve::HashingEmbedder;
use crate::scalar::Scalar;
use crate::serialize::build_retrieval_context;
use crate::table::{triple_related_subtable, Table};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("instance has no positive scores")]
    NoPositives,
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("training data is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss diverged at epoch {epoch} (learning rate {learning_rate}); try a lower learning rate")]
    Diverged { epoch: usize, learning_rate: f64 },
    #[error("instance {question_id}: unknown table {table_id}")]
    UnknownTable { question_id: String, table_id: String },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Dimension of the hashing features and of the projections.
    pub hash_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-5,
            seed: 0,
            hash_dim: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.hash_dim < crate::retrieve::MIN_HASH_DIM {
            return Err(TrainError::Config(format!("hash_dim {} too small", self.hash_dim)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean instance loss over the training set after the epoch.
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean training loss of the initial (identity) model.
    pub initial_loss: f64,
    pub initial_dev_loss: Option<f64>,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights were returned; 0 is the initial model.
    pub selected_epoch: usize,
}

/// Hashing features of every instance: question, positive and negative
/// retrieval contexts (serialized triple-related sub-table plus triple).
pub fn instance_features<S: Scalar>(
    instances: &[RetrievalInstance],
    tables: &BTreeMap<String, Table>,
    labels: &LabelMap,
    base: &HashingEmbedder<S>,
) -> Result<Vec<InstanceFeatures<S>>, TrainError> {
    let d = base.dim();
    let rows = |t: &Table, triples: &[Triple]| -> Result<Array2<S>, TrainError> {
        let mut m = Array2::zeros((triples.len(), d));
        for (i, tr) in triples.iter().enumerate() {
            let ctx = build_retrieval_context(&triple_related_subtable(t, tr), tr, labels)?;
            m.row_mut(i).assign(&Array1::from(base.features(&ctx.text)));
        }
        Ok(m)
    };
    instances
        .iter()
        .map(|inst| {
            let t = tables.get(&inst.table_id).ok_or_else(|| TrainError::UnknownTable {
                question_id: inst.question_id.clone(),
                table_id: inst.table_id.clone(),
            })?;
            Ok(InstanceFeatures {
                query: Array1::from(base.features(&inst.question)),
                positives: rows(t, &inst.positives)?,
                negatives: rows(t, &inst.negatives)?,
            })
        })
        .collect()
}

fn mean_loss<S: Scalar>(model: &LinearEmbedder<S>, feats: &[InstanceFeatures<S>]) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    let refs: Vec<&InstanceFeatures<S>> = feats.iter().collect();
    for chunk in refs.chunks(256) {
        sum += batch_loss(model.wq().view(), model.wc().view(), chunk)?.to_f64_lossy();
    }
    Ok(sum / feats.len().max(1) as f64)
}

/// Fit projections starting from identity. When `dev` is given, the weights
/// with the lowest dev loss (initial model included) are returned; otherwise
/// the final epoch's.
pub fn train_bi_encoder<S: Scalar>(
    dataset: &[RetrievalInstance],
    dev: Option<&[RetrievalInstance]>,
    tables: &BTreeMap<String, Table>,
    labels: &LabelMap,
    cfg: &TrainConfig,
) -> Result<(LinearEmbedder<S>, TrainLog), TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let base = HashingEmbedder::<S>::new(cfg.hash_dim).map_err(|e| TrainError::Config(e.0))?;
    let train_f = instance_features(dataset, tables, labels, &base)?;
    let dev_f = match dev {
        Some(d) if !d.is_empty() => Some(instance_features(d, tables, labels, &base)?),
        _ => None,
    };
    train_on_features(train_f, dev_f, cfg)
}

/// [`train_bi_encoder`] on precomputed features.
pub fn train_on_features<S: Scalar>(
    train_f: Vec<InstanceFeatures<S>>,
    dev_f: Option<Vec<InstanceFeatures<S>>>,
    cfg: &TrainConfig,
) -> Result<(LinearEmbedder<S>, TrainLog), TrainError> {
    cfg.validate()?;
    if train_f.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = LinearEmbedder::<S>::identity(cfg.hash_dim).map_err(|e| TrainError::Config(e.0))?;
    let mut log = TrainLog {
        initial_loss: mean_loss(&model, &train_f)?,
        initial_dev_loss: dev_f.as_deref().map(|d| mean_loss(&model, d)).transpose()?,
        ..Default::default()
    };
    let mut best = log.initial_dev_loss.map(|l| (l, model.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_f.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let feats: Vec<&InstanceFeatures<S>> = batch.iter().map(|&i| &train_f[i]).collect();
            let g = match batch_gradient(model.wq().view(), model.wc().view(), &feats) {
                Err(TrainError::NonFinite(_)) => {
                    return Err(TrainError::Diverged {
                        epoch,
                        learning_rate: cfg.learning_rate,
                    })
                }
                r => r?,
            };
            let step = S::from_f64_lossy(cfg.learning_rate / batch.len() as f64);
            model.apply_step(&g.d_wq, &g.d_wc, step);
        }
        let train_loss = mean_loss(&model, &train_f)?;
        if !train_loss.is_finite() || !model.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                learning_rate: cfg.learning_rate,
            });
        }
        let dev_loss = dev_f.as_deref().map(|f| mean_loss(&model, f)).transpose()?;
        log::info!("epoch {epoch}: train loss {train_loss:.6} dev loss {dev_loss:?}");
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            dev_loss,
        });
        if let (Some(dl), Some((bl, _))) = (dev_loss, &best) {
            if dl < *bl {
                best = Some((dl, model.clone()));
                log.selected_epoch = epoch;
            }
        }
    }
    let out = match best {
        Some((_, m)) => m,
        None => {
            log.selected_epoch = cfg.epochs;
            model
        }
    };
    Ok((out.finish(), log))
}
