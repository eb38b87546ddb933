//! Low-rank adapter fine-tuning of a small causal language model.

mod lora;
mod model;
mod tensor;

pub use lora::{LoraAdapter, LoraConfig, Precision, Projection, ADAPTER_WEIGHTS_FILE};
pub use model::{encode, generate_text, TinyCausalLm, TinyConfig, BOS, BUNDLED_SEED, EOS, VOCAB_SIZE};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{ReferencePair, ReferenceTexts};
use crate::corpus::QuestionRecord;
use crate::error::{Error, Result};
use crate::harness::{collect_responses, CollectOptions, GenerationParams, ModelBackend, ResponseSet};
use crate::metrics::{evaluate_model, improvement_report, EvaluationContext, Improvement, ModelEvaluation};
use crate::scalar::Scalar;
use crate::text::normalize_key;
use model::AdapterView;

/// One training example, `Question: {q} Answer: {r}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub prompt_text: String,
    pub question: String,
    pub answer: String,
    /// Byte offset of the answer within `prompt_text`.
    pub answer_offset: usize,
}

impl PromptPair {
    pub fn new(question: &str, answer: &str) -> Self {
        let (q, r) = (question.trim(), answer.trim());
        let head = format!("Question: {q} Answer: ");
        PromptPair {
            answer_offset: head.len(),
            prompt_text: format!("{head}{r}"),
            question: q.to_string(),
            answer: r.to_string(),
        }
    }
}

/// Two pairs per question, V1 then V2. Empty questions or answers are skipped.
pub fn format_pairs(references: &[ReferenceTexts]) -> Vec<PromptPair> {
    let mut out = Vec::with_capacity(references.len() * 2);
    for r in references {
        for answer in [&r.v1, &r.v2] {
            if r.question.trim().is_empty() || answer.trim().is_empty() {
                log::warn!("skipping pair with empty text for {:?}", r.question);
                continue;
            }
            out.push(PromptPair::new(&r.question, answer));
        }
    }
    out
}

/// Seeded shuffle, then the first `floor(fraction n)` items train and the rest validate.
pub fn split_dataset<R: Clone>(items: &[R], train_fraction: f64, seed: u64) -> Result<(Vec<R>, Vec<R>)> {
    if items.len() < 2 {
        return Err(Error::invalid("need at least two items to split"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let k = (train_fraction * items.len() as f64 + 1e-9).floor() as usize;
    if k == 0 {
        return Err(Error::invalid("split leaves no training items"));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..k]), pick(&order[k..])))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMask {
    /// Every token of the rendered pair is a target.
    AllTokens,
    /// Only answer tokens (and end of sequence) are targets.
    AnswerOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accumulation: usize,
    pub precision: Precision,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub max_sequence_tokens: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub loss_mask: LossMask,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 1,
            grad_accumulation: 4,
            precision: Precision::Mixed16,
            learning_rate: 2e-5,
            weight_decay: 0.01,
            warmup_steps: 10,
            max_sequence_tokens: 512,
            train_fraction: 0.9,
            seed: 0,
            loss_mask: LossMask::AllTokens,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.grad_accumulation == 0 {
            return bad("epochs, batch_size and grad_accumulation must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        if self.max_sequence_tokens < 2 {
            return bad("max_sequence_tokens must be at least 2");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        Ok(())
    }

    /// Sequences per optimizer step.
    pub fn sequences_per_step(&self) -> usize {
        self.batch_size * self.grad_accumulation
    }

    /// Optimizer steps over a training set of `n` sequences; a partial group at the end of an
    /// epoch still takes a step.
    pub fn total_steps(&self, n: usize) -> usize {
        self.epochs * n.div_ceil(self.sequences_per_step())
    }

    /// Learning rate at 1-based `step`: linear warmup to the peak, then linear decay that
    /// reaches `lr / (total - warmup + 1)` on the last step.
    pub fn learning_rate_at(&self, step: usize, total: usize) -> f64 {
        let w = self.warmup_steps;
        if step <= w {
            return self.learning_rate * step as f64 / w.max(1) as f64;
        }
        let remaining = (total + 1).saturating_sub(step) as f64;
        self.learning_rate * remaining / (total + 1 - w) as f64
    }
}

/// AdamW with decoupled weight decay over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        AdamW {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_epsilon,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn step<T: Scalar>(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i].as_f64();
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            let p = params[i].as_f64();
            let updated = p - lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * p);
            params[i] = T::of(updated);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    /// Mean loss of the sequences accumulated into this step.
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    /// Mean training loss over the epoch's sequences, measured as they were trained on.
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub adapter: LoraAdapter<T>,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochSummary>,
    pub train_size: usize,
    pub validation_size: usize,
    pub base_checksum_before: String,
    pub base_checksum_after: String,
    pub fingerprint: String,
}

/// Written next to the adapter weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterManifest {
    pub lora: LoraConfig,
    pub train: TrainConfig,
    pub data_sha256: String,
    pub base_checksum: String,
    pub fingerprint: String,
    pub seed: u64,
    pub epochs_completed: usize,
}

pub const ADAPTER_CONFIG_FILE: &str = "adapter_config.json";
pub const TRAINING_LOG_FILE: &str = "training_log.csv";

fn data_hash(pairs: &[PromptPair]) -> String {
    let mut h = Sha256::new();
    for p in pairs {
        h.update(p.prompt_text.as_bytes());
        h.update([0u8]);
    }
    crate::scalar::hex(&h.finalize())
}

fn targets(pair: &PromptPair, cfg: &TrainConfig, max_len: usize) -> (Vec<usize>, Vec<bool>) {
    let tokens = encode(&pair.prompt_text, max_len);
    let first_answer = 1 + pair.answer_offset;
    let counted = (1..tokens.len())
        .map(|t| cfg.loss_mask == LossMask::AllTokens || t >= first_answer)
        .collect();
    (tokens, counted)
}

fn save_adapter<T: Scalar>(dir: &Path, adapter: &LoraAdapter<T>, manifest: &AdapterManifest) -> Result<()> {
    adapter.save_weights(dir)?;
    let path = dir.join(ADAPTER_CONFIG_FILE);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads `adapter_config.json` from an adapter directory.
pub fn read_adapter_manifest(dir: &Path) -> Result<AdapterManifest> {
    let path = dir.join(ADAPTER_CONFIG_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path, message: e.to_string() })
}

/// Trains an adapter on `pairs` (split by `cfg.train_fraction`) while the base model stays
/// untouched.
///
/// With `out_dir`, writes `training_log.csv`, a checkpoint per epoch under
/// `checkpoint-epoch-<k>/`, and the final adapter under `adapter/`. A non-finite loss stops
/// training and saves the current adapter under `checkpoint-nonfinite/`.
pub fn train_adapter<T: Scalar>(
    model: &TinyCausalLm<T>,
    pairs: &[PromptPair],
    lora: &LoraConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let (train, validation) = split_dataset(pairs, cfg.train_fraction, cfg.seed)?;
    let max_len = cfg.max_sequence_tokens.min(model.config().max_positions);
    let mut adapter = LoraAdapter::new(model.config(), lora.clone(), cfg.seed)?;
    let checksum_before = model.checksum();
    let data_sha256 = data_hash(pairs);
    let fingerprint = {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(lora).expect("serializes"));
        h.update(serde_json::to_vec(cfg).expect("serializes"));
        h.update(data_sha256.as_bytes());
        h.update(checksum_before.as_bytes());
        crate::scalar::hex(&h.finalize())
    };
    let manifest = |epochs_completed: usize| AdapterManifest {
        lora: lora.clone(),
        train: cfg.clone(),
        data_sha256: data_sha256.clone(),
        base_checksum: checksum_before.clone(),
        fingerprint: fingerprint.clone(),
        seed: cfg.seed,
        epochs_completed,
    };
    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(TRAINING_LOG_FILE);
            let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "step,epoch,loss,learning_rate").map_err(|e| Error::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };

    let encoded: Vec<(Vec<usize>, Vec<bool>)> = train.iter().map(|p| targets(p, cfg, max_len)).collect();
    let encoded_val: Vec<(Vec<usize>, Vec<bool>)> = validation.iter().map(|p| targets(p, cfg, max_len)).collect();
    let total = cfg.total_steps(train.len());
    let group = cfg.sequences_per_step();
    let mut opt = AdamW::new(adapter.trainable_parameters(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..encoded.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::with_capacity(order.len());
        for chunk in order.chunks(group) {
            let effective = adapter.effective_params(cfg.precision);
            let view = AdapterView { adapter: &adapter, params: &effective };
            let mut grad = vec![T::zero(); adapter.trainable_parameters()];
            let mut chunk_loss = 0.0;
            for &i in chunk {
                let (tokens, counted) = &encoded[i];
                let loss = model.loss(tokens, counted, Some(view), Some(&mut grad))?.as_f64();
                if !loss.is_finite() {
                    let checkpoint = out_dir.map(|d| d.join("checkpoint-nonfinite"));
                    if let Some(dir) = &checkpoint {
                        save_adapter(dir, &adapter, &manifest(epoch - 1))?;
                    }
                    return Err(Error::NonFiniteLoss {
                        step: step + 1,
                        loss,
                        checkpoint: checkpoint.map_or_else(|| "none".into(), |p| p.display().to_string()),
                    });
                }
                chunk_loss += loss;
                epoch_losses.push(loss);
            }
            let inv = T::one() / T::of_usize(chunk.len());
            for g in grad.iter_mut() {
                *g = *g * inv;
            }
            step += 1;
            let lr = cfg.learning_rate_at(step, total);
            opt.step(&mut adapter.params, &grad, lr);
            let entry = StepLog { step, epoch, loss: chunk_loss / chunk.len() as f64, learning_rate: lr };
            if let Some((f, path)) = &mut log {
                writeln!(f, "{},{},{:.10},{:.6e}", entry.step, entry.epoch, entry.loss, entry.learning_rate)
                    .map_err(|e| Error::io(path.clone(), e))?;
            }
            steps.push(entry);
        }
        let validation_loss = if encoded_val.is_empty() {
            None
        } else {
            let effective = adapter.effective_params(cfg.precision);
            let view = AdapterView { adapter: &adapter, params: &effective };
            let mut sum = 0.0;
            for (tokens, counted) in &encoded_val {
                sum += model.loss(tokens, counted, Some(view), None)?.as_f64();
            }
            Some(sum / encoded_val.len() as f64)
        };
        let train_loss = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
        log::info!("epoch {epoch}: train loss {train_loss:.6}, validation loss {validation_loss:?}");
        epochs.push(EpochSummary { epoch, train_loss, validation_loss });
        if let Some(dir) = out_dir {
            save_adapter(&dir.join(format!("checkpoint-epoch-{epoch}")), &adapter, &manifest(epoch))?;
        }
    }
    if let Some(dir) = out_dir {
        save_adapter(&dir.join("adapter"), &adapter, &manifest(cfg.epochs))?;
    }
    Ok(TrainOutcome {
        adapter,
        steps,
        epochs,
        train_size: train.len(),
        validation_size: validation.len(),
        base_checksum_before: checksum_before,
        base_checksum_after: model.checksum(),
        fingerprint,
    })
}

/// Final adapter directory inside a training output directory.
pub fn adapter_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("adapter")
}

#[derive(Debug, Clone)]
pub struct BeforeAfter<T> {
    pub before_responses: ResponseSet,
    pub after_responses: ResponseSet,
    pub before: ModelEvaluation<T>,
    pub after: ModelEvaluation<T>,
    pub improvements: Vec<Improvement<T>>,
}

/// Evaluates both models on held-out questions. Fails if any test question was trained on.
pub fn evaluate_before_after<T: Scalar>(
    base: &dyn ModelBackend,
    adapted: &dyn ModelBackend,
    test_questions: &[QuestionRecord],
    training_questions: &[String],
    references: &[ReferencePair<T>],
    ctx: &EvaluationContext<'_, T>,
    params: &GenerationParams,
) -> Result<BeforeAfter<T>> {
    let trained: std::collections::HashSet<String> = training_questions.iter().map(|q| normalize_key(q)).collect();
    if let Some(q) = test_questions.iter().find(|q| trained.contains(&normalize_key(&q.text))) {
        return Err(Error::invalid(format!("test question {:?} was used for training", q.text)));
    }
    let before_set = collect_responses(base, test_questions, params, CollectOptions::default())?;
    let after_set = collect_responses(adapted, test_questions, params, CollectOptions::default())?;
    let before = evaluate_model(&before_set, references, ctx)?;
    let after = evaluate_model(&after_set, references, ctx)?;
    let improvements = improvement_report(&before.row, &after.row);
    Ok(BeforeAfter { before_responses: before_set, after_responses: after_set, before, after, improvements })
}
