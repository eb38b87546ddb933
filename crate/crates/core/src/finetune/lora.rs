use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::TinyConfig;
use super::tensor::LowRank;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Attention projection addressable by an adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Projection {
    Query,
    Key,
    Value,
    Output,
}

impl Projection {
    pub const ALL: [Projection; 4] = [Projection::Query, Projection::Key, Projection::Value, Projection::Output];

    pub fn name(self) -> &'static str {
        match self {
            Projection::Query => "q_proj",
            Projection::Key => "k_proj",
            Projection::Value => "v_proj",
            Projection::Output => "o_proj",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Projection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "q_proj" | "query" | "q" => Ok(Projection::Query),
            "k_proj" | "key" | "k" => Ok(Projection::Key),
            "v_proj" | "value" | "v" => Ok(Projection::Value),
            "o_proj" | "output" | "o" => Ok(Projection::Output),
            other => Err(Error::Config(format!("no projection named {other:?}"))),
        }
    }
}

impl Serialize for Projection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Projection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoraConfig {
    pub rank: usize,
    /// The update is scaled by `alpha / rank`.
    pub alpha: f64,
    pub target_projections: BTreeSet<Projection>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            rank: 16,
            alpha: 32.0,
            target_projections: [Projection::Query, Projection::Value].into_iter().collect(),
        }
    }
}

impl LoraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("adapter rank must be at least 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config("adapter alpha must be positive".into()));
        }
        if self.target_projections.is_empty() {
            return Err(Error::Config("adapter has no target projections".into()));
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Storage precision of adapter factors in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Full,
    /// Factors are rounded to IEEE half precision for the forward and backward pass; the
    /// optimizer keeps full precision master copies.
    Mixed16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct Slot {
    pub layer: usize,
    pub projection: Projection,
    pub a_offset: usize,
    pub b_offset: usize,
    pub inp: usize,
    pub out: usize,
}

/// Trainable low-rank factors for the targeted projections of every layer, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter<T> {
    config: LoraConfig,
    pub(crate) params: Vec<T>,
    slots: Vec<Slot>,
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    config: LoraConfig,
    slots: Vec<SlotRecord>,
}

#[derive(Serialize, Deserialize)]
struct SlotRecord {
    layer: usize,
    projection: Projection,
    inp: usize,
    out: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

pub const ADAPTER_WEIGHTS_FILE: &str = "adapter_weights.json";

impl<T: Scalar> LoraAdapter<T> {
    /// `A` is drawn uniformly from `±1/sqrt(in)`, `B` starts at zero so the adapter is
    /// initially the identity.
    pub fn new(model: &TinyConfig, config: LoraConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if model.n_layers == 0 {
            return Err(Error::Config("model has no attention projections to adapt".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut slots = Vec::new();
        let (inp, out, r) = (model.d_model, model.d_model, config.rank);
        let bound = 1.0 / (inp as f64).sqrt();
        for layer in 0..model.n_layers {
            for &projection in &config.target_projections {
                let a_offset = params.len();
                params.extend((0..r * inp).map(|_| T::of(rng.random_range(-bound..bound))));
                let b_offset = params.len();
                params.extend(std::iter::repeat_n(T::zero(), out * r));
                slots.push(Slot { layer, projection, a_offset, b_offset, inp, out });
            }
        }
        Ok(LoraAdapter { config, params, slots })
    }

    pub fn config(&self) -> &LoraConfig {
        &self.config
    }

    /// Number of trainable scalars, `rank (in + out)` per adapted projection.
    pub fn trainable_parameters(&self) -> usize {
        self.params.len()
    }

    pub fn parameters(&self) -> &[T] {
        &self.params
    }

    #[cfg(test)]
    pub(crate) fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub(crate) fn slot(&self, layer: usize, projection: Projection) -> Option<&Slot> {
        self.slots.iter().find(|s| s.layer == layer && s.projection == projection)
    }

    /// The factors as the forward pass sees them.
    pub(crate) fn effective_params(&self, precision: Precision) -> Vec<T> {
        match precision {
            Precision::Full => self.params.clone(),
            Precision::Mixed16 => self
                .params
                .iter()
                .map(|p| T::of(f16::from_f64(p.as_f64()).to_f64()))
                .collect(),
        }
    }

    pub(crate) fn view<'a>(&'a self, params: &'a [T], slot: &Slot) -> LowRank<'a, T> {
        let r = self.config.rank;
        LowRank {
            a: &params[slot.a_offset..slot.a_offset + r * slot.inp],
            b: &params[slot.b_offset..slot.b_offset + slot.out * r],
            rank: r,
            scale: T::of(self.config.scale()),
        }
    }

    pub fn save_weights(&self, dir: &Path) -> Result<()> {
        let r = self.config.rank;
        let file = WeightsFile {
            config: self.config.clone(),
            slots: self
                .slots
                .iter()
                .map(|s| SlotRecord {
                    layer: s.layer,
                    projection: s.projection,
                    inp: s.inp,
                    out: s.out,
                    a: self.params[s.a_offset..s.a_offset + r * s.inp].iter().map(|x| x.as_f64()).collect(),
                    b: self.params[s.b_offset..s.b_offset + s.out * r].iter().map(|x| x.as_f64()).collect(),
                })
                .collect(),
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(ADAPTER_WEIGHTS_FILE);
        let text = serde_json::to_string(&file).expect("adapter serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Loads the weights saved in an adapter directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(ADAPTER_WEIGHTS_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: WeightsFile = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        file.config.validate()?;
        let r = file.config.rank;
        let mut params = Vec::new();
        let mut slots = Vec::new();
        for s in file.slots {
            if s.a.len() != r * s.inp || s.b.len() != s.out * r {
                return Err(Error::Format {
                    path,
                    message: format!("layer {} {}: factor shape mismatch", s.layer, s.projection),
                });
            }
            let a_offset = params.len();
            params.extend(s.a.into_iter().map(T::of));
            let b_offset = params.len();
            params.extend(s.b.into_iter().map(T::of));
            slots.push(Slot { layer: s.layer, projection: s.projection, a_offset, b_offset, inp: s.inp, out: s.out });
        }
        Ok(LoraAdapter { config: file.config, params, slots })
    }

    /// Checks that the adapter fits `model`.
    pub(crate) fn check_fits(&self, model: &TinyConfig) -> Result<()> {
        for s in &self.slots {
            if s.layer >= model.n_layers || s.inp != model.d_model || s.out != model.d_model {
                return Err(Error::Config(format!(
                    "adapter slot layer {} {} does not fit the model",
                    s.layer, s.projection
                )));
            }
        }
        Ok(())
    }
}
