//! Feed-forward classifier with named parameter groups.
//!
//! The groups are `backbone0 .. backbone{k-1}`, `final_layer` and `head`.
//! Every group except the head is followed by `max(0, x)`. Freezing is a flag
//! per group; gradients are still defined for frozen groups and the optimizer
//! is responsible for leaving them alone.

mod checkpoint;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::real::Real;

pub const FINAL_LAYER: &str = "final_layer";
pub const HEAD: &str = "head";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected} columns, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptPayload(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub backbone_dims: Vec<usize>,
    pub final_dim: usize,
    pub num_classes: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            input_dim: 4096,
            backbone_dims: vec![256, 128],
            final_dim: 64,
            num_classes: 2,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let all = std::iter::once(self.input_dim)
            .chain(self.backbone_dims.iter().copied())
            .chain([self.final_dim, self.num_classes]);
        if all.clone().any(|d| d == 0) {
            return Err(ModelError::InvalidSpec(format!(
                "all dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(name, fan_in, fan_out)` for every group, in forward order.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.backbone_dims);
        dims.push(self.final_dim);
        dims.push(self.num_classes);
        let k = self.backbone_dims.len();
        dims.windows(2)
            .enumerate()
            .map(|(i, w)| {
                let name = if i < k {
                    format!("backbone{i}")
                } else if i == k {
                    FINAL_LAYER.to_string()
                } else {
                    HEAD.to_string()
                };
                (name, w[0], w[1])
            })
            .collect()
    }
}

/// Which groups receive updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    FinalAndHead,
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup<F> {
    pub name: String,
    /// `fan_in x fan_out`; a layer computes `x . W + b`.
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub trainable: bool,
}

impl<F: Real> ParamGroup<F> {
    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn is_backbone(&self) -> bool {
        self.name != FINAL_LAYER && self.name != HEAD
    }
}

fn glorot<F: Real>(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Array2<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    Array2::from_shape_simple_fn((fan_in, fan_out), || F::from_f64_lossy(dist.sample(rng)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<F = f32> {
    groups: Vec<ParamGroup<F>>,
}

/// Per-layer inputs and pre-activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<F> {
    inputs: Vec<Array2<F>>,
    pre_activations: Vec<Array2<F>>,
}

impl<F> ForwardCache<F> {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupGrad<F> {
    pub name: String,
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

/// Gradients with the same group structure as the [`ParamSet`] they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<F> {
    pub groups: Vec<GroupGrad<F>>,
}

impl<F: Real> GradientSet<F> {
    pub fn scale(&mut self, factor: F) {
        for g in &mut self.groups {
            g.weight.mapv_inplace(|v| v * factor);
            g.bias.mapv_inplace(|v| v * factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.groups
            .iter()
            .all(|g| g.weight.iter().chain(g.bias.iter()).all(|v| v.is_finite()))
    }
}

impl<F: Real> ParamSet<F> {
    /// Glorot-uniform weights, zero biases, every group trainable.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups = spec
            .layout()
            .into_iter()
            .map(|(name, fan_in, fan_out)| ParamGroup {
                name,
                weight: glorot(fan_in, fan_out, &mut rng),
                bias: Array1::zeros(fan_out),
                trainable: true,
            })
            .collect();
        Ok(Self { groups })
    }

    /// Assemble from explicit groups, checking names and the shape chain.
    pub fn from_groups(groups: Vec<ParamGroup<F>>) -> Result<Self> {
        if groups.len() < 2 {
            return Err(ModelError::InvalidSpec(
                "need at least a final layer and a head".into(),
            ));
        }
        let k = groups.len() - 2;
        for (i, g) in groups.iter().enumerate() {
            let expected = if i < k {
                format!("backbone{i}")
            } else if i == k {
                FINAL_LAYER.to_string()
            } else {
                HEAD.to_string()
            };
            if g.name != expected {
                return Err(ModelError::InvalidSpec(format!(
                    "group {i} is named `{}`, expected `{expected}`",
                    g.name
                )));
            }
            if g.bias.len() != g.fan_out() || g.fan_in() == 0 || g.fan_out() == 0 {
                return Err(ModelError::ShapeMismatch(format!(
                    "group `{}` has weight {:?} and bias {}",
                    g.name,
                    g.weight.dim(),
                    g.bias.len()
                )));
            }
        }
        for w in groups.windows(2) {
            if w[0].fan_out() != w[1].fan_in() {
                return Err(ModelError::ShapeMismatch(format!(
                    "`{}` outputs {} but `{}` expects {}",
                    w[0].name,
                    w[0].fan_out(),
                    w[1].name,
                    w[1].fan_in()
                )));
            }
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[ParamGroup<F>] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [ParamGroup<F>] {
        &mut self.groups
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup<F>> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn spec(&self) -> ModelSpec {
        let n = self.groups.len();
        ModelSpec {
            input_dim: self.groups[0].fan_in(),
            backbone_dims: self.groups[..n - 2].iter().map(|g| g.fan_out()).collect(),
            final_dim: self.groups[n - 2].fan_out(),
            num_classes: self.groups[n - 1].fan_out(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.groups[0].fan_in()
    }

    pub fn num_classes(&self) -> usize {
        self.groups[self.groups.len() - 1].fan_out()
    }

    pub fn trainable_flags(&self) -> Vec<bool> {
        self.groups.iter().map(|g| g.trainable).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.groups
            .iter()
            .map(|g| g.weight.len() + g.bias.len())
            .sum()
    }

    pub fn set_trainable(&mut self, selector: Trainable) {
        for g in &mut self.groups {
            g.trainable = match selector {
                Trainable::All => true,
                Trainable::FinalAndHead => !g.is_backbone(),
            };
        }
    }

    /// Replace the head with a fresh `final_dim x num_classes` group.
    pub fn reinit_head(&mut self, num_classes: usize, seed: u64) -> Result<()> {
        if num_classes == 0 {
            return Err(ModelError::InvalidSpec("num_classes must be positive".into()));
        }
        let head = self.groups.last_mut().expect("param set has a head");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        head.weight = glorot(head.fan_in(), num_classes, &mut rng);
        head.bias = Array1::zeros(num_classes);
        head.trainable = true;
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        let conv = |v: &F| G::from_f64_lossy(v.to_f64_lossy());
        ParamSet {
            groups: self
                .groups
                .iter()
                .map(|g| ParamGroup {
                    name: g.name.clone(),
                    weight: g.weight.map(conv),
                    bias: g.bias.map(conv),
                    trainable: g.trainable,
                })
                .collect(),
        }
    }

    fn check_input(&self, batch: &ArrayView2<F>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim(),
                actual: batch.ncols(),
            });
        }
        Ok(())
    }

    /// Logits for a batch, keeping the intermediates needed by [`Self::backward`].
    pub fn forward(&self, batch: ArrayView2<F>) -> Result<(Array2<F>, ForwardCache<F>)> {
        self.check_input(&batch)?;
        let last = self.groups.len() - 1;
        let mut inputs = Vec::with_capacity(self.groups.len());
        let mut pre_activations = Vec::with_capacity(self.groups.len());
        let mut current = batch.to_owned();
        for (i, g) in self.groups.iter().enumerate() {
            let mut z = current.dot(&g.weight);
            z += &g.bias;
            inputs.push(current);
            current = if i < last {
                z.mapv(relu)
            } else {
                z.clone()
            };
            pre_activations.push(z);
        }
        Ok((
            current,
            ForwardCache {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Logits only; same arithmetic as [`Self::forward`].
    pub fn logits(&self, batch: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_input(&batch)?;
        let last = self.groups.len() - 1;
        let mut current = batch.to_owned();
        for (i, g) in self.groups.iter().enumerate() {
            let mut z = current.dot(&g.weight);
            z += &g.bias;
            if i < last {
                z.mapv_inplace(relu);
            }
            current = z;
        }
        Ok(current)
    }

    /// Arg-max class per row.
    pub fn predict(&self, batch: ArrayView2<F>) -> Result<Vec<usize>> {
        let logits = self.logits(batch)?;
        Ok(logits.outer_iter().map(|row| argmax(row.iter().copied())).collect())
    }

    /// Gradients of `sum(logits * dlogits)` with respect to every group.
    ///
    /// The loss functions already fold the batch mean into `dlogits`, so no
    /// further averaging happens here.
    pub fn backward(&self, cache: &ForwardCache<F>, dlogits: ArrayView2<F>) -> Result<GradientSet<F>> {
        self.backward_down_to(cache, dlogits, 0)
    }

    /// Like [`Self::backward`], but stops propagating below group `lowest`;
    /// gradients of the skipped groups are reported as zeros. Groups at or
    /// above `lowest` get exactly the values a full backward would produce.
    pub fn backward_down_to(
        &self,
        cache: &ForwardCache<F>,
        dlogits: ArrayView2<F>,
        lowest: usize,
    ) -> Result<GradientSet<F>> {
        let n = self.groups.len();
        if cache.inputs.len() != n {
            return Err(ModelError::ShapeMismatch(format!(
                "cache has {} layers, model has {n}",
                cache.inputs.len()
            )));
        }
        let expected = (cache.batch_size(), self.num_classes());
        if dlogits.dim() != expected {
            return Err(ModelError::ShapeMismatch(format!(
                "dlogits is {:?}, logits were {:?}",
                dlogits.dim(),
                expected
            )));
        }
        let mut grads: Vec<Option<GroupGrad<F>>> = vec![None; n];
        let mut delta = dlogits.to_owned();
        for i in (lowest.min(n - 1)..n).rev() {
            let g = &self.groups[i];
            let input = &cache.inputs[i];
            grads[i] = Some(GroupGrad {
                name: g.name.clone(),
                weight: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if i > lowest && i > 0 {
                let mut prev = delta.dot(&g.weight.t());
                ndarray::Zip::from(&mut prev)
                    .and(&cache.pre_activations[i - 1])
                    .for_each(|d, &z| {
                        if z <= F::zero() {
                            *d = F::zero();
                        }
                    });
                delta = prev;
            }
        }
        let groups = grads
            .into_iter()
            .zip(&self.groups)
            .map(|(grad, g)| {
                grad.unwrap_or_else(|| GroupGrad {
                    name: g.name.clone(),
                    weight: Array2::zeros(g.weight.dim()),
                    bias: Array1::zeros(g.bias.len()),
                })
            })
            .collect();
        Ok(GradientSet { groups })
    }
}

#[inline]
fn relu<F: Real>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        F::zero()
    }
}

/// Index of the first maximum.
pub fn argmax<F: Real>(values: impl IntoIterator<Item = F>) -> usize {
    let mut best = 0;
    let mut best_val = F::neg_infinity();
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Convenience wrapper around [`ParamSet::init`].
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<ParamSet<f32>> {
    ParamSet::init(spec, seed)
}
