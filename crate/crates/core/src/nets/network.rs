use rand::Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{BackboneSpec, Builder, Context, Module};
use crate::autodiff::{AdamW, Mode, ParamId, ParamStore, Real, RunningStats, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::imgproc::RoiPatch;
use crate::types::Sex;

/// Patient covariates fused before the output layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxFeatures {
    /// Age in years divided by 100.
    pub age_norm: f64,
    pub sex: Sex,
}

impl AuxFeatures {
    pub const WIDTH: usize = 3;

    pub fn new(age_years: u32, sex: Sex) -> Result<Self> {
        let age_norm = age_years as f64 / 100.0;
        if !(0.05..=0.9).contains(&age_norm) {
            return Err(Error::InvalidInput(format!(
                "age {age_years} outside the supported 5-90 year range"
            )));
        }
        Ok(AuxFeatures { age_norm, sex })
    }

    /// `(female, male)` one-hot code.
    pub fn sex_code(&self) -> [f64; 2] {
        match self.sex {
            Sex::Female => [1.0, 0.0],
            Sex::Male => [0.0, 1.0],
        }
    }
}

/// Which covariates a network may see. Disabled inputs are fed as zeros.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AuxUse {
    pub age: bool,
    pub sex: bool,
}

impl Default for AuxUse {
    fn default() -> Self {
        AuxUse {
            age: true,
            sex: true,
        }
    }
}

impl AuxUse {
    pub fn encode(&self, aux: &AuxFeatures) -> [f64; AuxFeatures::WIDTH] {
        let [f, m] = aux.sex_code();
        let age = if self.age { aux.age_norm } else { 0.0 };
        if self.sex {
            [age, f, m]
        } else {
            [age, 0.0, 0.0]
        }
    }
}

/// One ensemble member: backbone, batch-norm statistics and a linear head
/// over `[features, age, female, male]`.
#[derive(Clone, Debug)]
pub struct Network<T> {
    spec: BackboneSpec,
    aux_use: AuxUse,
    params: ParamStore<T>,
    stats: Vec<RunningStats<T>>,
    stat_names: Vec<String>,
    body: Module,
    head_weight: ParamId,
    head_bias: ParamId,
}

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

impl<T: Real> Network<T> {
    pub fn build<R: Rng>(spec: &BackboneSpec, aux_use: AuxUse, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let mut stats = Vec::new();
        let mut stat_names = Vec::new();
        let mut b = Builder {
            params: &mut params,
            stat_names: &mut stat_names,
            stats: &mut stats,
            rng,
        };
        let body = b.backbone(spec);
        let fan_in = spec.feature_dim() + AuxFeatures::WIDTH;
        let w = b.he_uniform(&[2, fan_in], fan_in);
        let head_weight = params.insert(HEAD_WEIGHT, w);
        let head_bias = params.insert(HEAD_BIAS, Tensor::zeros(&[2]));
        Ok(Network {
            spec: spec.clone(),
            aux_use,
            params,
            stats,
            stat_names,
            body,
            head_weight,
            head_bias,
        })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn aux_use(&self) -> AuxUse {
        self.aux_use
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.stats
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.stats
    }

    pub fn stat_names(&self) -> &[String] {
        &self.stat_names
    }

    pub fn head_ids(&self) -> (ParamId, ParamId) {
        (self.head_weight, self.head_bias)
    }

    /// Builds the forward graph. Returns the logits and the parameter leaves.
    fn graph(
        &self,
        tape: &mut Tape<T>,
        stats: &mut [RunningStats<T>],
        images: Tensor<T>,
        aux: Tensor<T>,
        mode: Mode,
    ) -> Result<(Var, Vec<Var>)> {
        let s = images.shape();
        let side = self.spec.input_side;
        if s.len() != 4 || s[1] != 1 || s[2] != side || s[3] != side {
            return Err(Error::InvalidShape(format!(
                "network expects N x 1 x {side} x {side} images, got {s:?}"
            )));
        }
        if aux.shape() != [s[0], AuxFeatures::WIDTH] {
            return Err(Error::InvalidShape(format!(
                "aux features must be {} x {}, got {:?}",
                s[0],
                AuxFeatures::WIDTH,
                aux.shape()
            )));
        }
        let vars = self.params.bind(tape);
        let x = tape.input(images);
        let a = tape.input(aux);
        let mut cx = Context {
            tape,
            vars: &vars,
            stats,
            mode,
        };
        let features = self.body.forward(&mut cx, x)?;
        let fused = tape.concat(&[features, a])?;
        let logits = tape.linear(fused, vars[self.head_weight.0], vars[self.head_bias.0])?;
        Ok((logits, vars))
    }

    /// Class-1 probabilities in eval mode.
    pub fn predict(&self, images: Tensor<T>, aux: Tensor<T>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut stats = self.stats.clone();
        let (logits, _) = self.graph(&mut tape, &mut stats, images, aux, Mode::Eval)?;
        Ok(positive_probabilities(tape.value(logits)))
    }

    /// One optimization step in train mode. Returns the batch loss and the
    /// class-1 probabilities computed on the way.
    pub fn train_step(
        &mut self,
        opt: &mut AdamW<T>,
        images: Tensor<T>,
        aux: Tensor<T>,
        labels: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let mut stats = std::mem::take(&mut self.stats);
        let built = self.graph(&mut tape, &mut stats, images, aux, Mode::Train);
        self.stats = stats;
        let (logits, vars) = built?;
        let probs = positive_probabilities(tape.value(logits));
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        let loss_value = tape.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
        if !loss_value.is_finite() {
            return Err(Error::Numeric("non-finite training loss".into()));
        }
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor<T>> = vars
            .iter()
            .map(|&v| {
                grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
            })
            .collect();
        opt.step(&mut self.params, &grads)?;
        Ok((loss_value, probs))
    }

    /// Probability of active inflammation for a single patch.
    pub fn forward_member(&self, patch: &RoiPatch, aux: &AuxFeatures) -> Result<f64> {
        let (images, aux) = batch_inputs(&[patch], &[*aux], self.aux_use, self.spec.input_side)?;
        Ok(self.predict(images, aux)?[0])
    }
}

/// Softmax probability of class 1 for each row of `N x 2` logits.
fn positive_probabilities<T: Real>(logits: &Tensor<T>) -> Vec<f64> {
    logits
        .data()
        .chunks_exact(2)
        .map(|z| {
            let (z0, z1) = (z[0].to_f64().unwrap_or(f64::NAN), z[1].to_f64().unwrap_or(f64::NAN));
            1.0 / (1.0 + (z0 - z1).exp())
        })
        .collect()
}

/// Stacks patches and covariates into network input tensors.
///
/// Patches must match `side` and lie in `[0, 1]`.
pub fn batch_inputs<T: Real>(
    patches: &[&RoiPatch],
    aux: &[AuxFeatures],
    aux_use: AuxUse,
    side: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if patches.len() != aux.len() {
        return Err(Error::InvalidInput(format!(
            "{} patches but {} covariate rows",
            patches.len(),
            aux.len()
        )));
    }
    let mut images = Vec::with_capacity(patches.len() * side * side);
    for p in patches {
        if p.side_len() != side {
            return Err(Error::InvalidInput(format!(
                "patch side {} does not match network input side {side}",
                p.side_len()
            )));
        }
        if !p.in_unit_range() {
            return Err(Error::InvalidInput(format!(
                "patch for {} {} is not normalized to [0, 1]",
                p.source.patient_id, p.source.side
            )));
        }
        images.extend(p.pixels().data().iter().map(|&v| T::lit(v)));
    }
    let codes = aux
        .iter()
        .flat_map(|a| aux_use.encode(a))
        .map(T::lit)
        .collect();
    Ok((
        Tensor::new(&[patches.len(), 1, side, side], images)?,
        Tensor::new(&[aux.len(), AuxFeatures::WIDTH], codes)?,
    ))
}
