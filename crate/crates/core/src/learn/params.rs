use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::glac::ClassPrototypeBank;
use crate::matching::{MatchingGenerator, Projection};

/// Learnable tensors, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamId {
    GeneratorWeight,
    GeneratorBias,
    Bank,
    ProjectionWeight,
    ProjectionBias,
    /// Per-token weights applied before the frame alpha-D matrices.
    Gate,
}

impl ParamId {
    pub const ALL: [ParamId; 6] = [
        ParamId::GeneratorWeight,
        ParamId::GeneratorBias,
        ParamId::Bank,
        ParamId::ProjectionWeight,
        ParamId::ProjectionBias,
        ParamId::Gate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::GeneratorWeight => "generator.weight",
            ParamId::GeneratorBias => "generator.bias",
            ParamId::Bank => "bank",
            ParamId::ProjectionWeight => "projection.weight",
            ParamId::ProjectionBias => "projection.bias",
            ParamId::Gate => "gate",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.name() == name)
    }

    /// Whether weight decay applies; biases and the gate are exempt.
    pub fn decays(self) -> bool {
        matches!(self, ParamId::GeneratorWeight | ParamId::Bank | ParamId::ProjectionWeight)
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub frames: usize,
    pub tokens: usize,
    pub channels: usize,
    /// Dimension of projected class-token summaries.
    pub proto_dim: usize,
    /// Classes covered by the prototype bank.
    pub classes: usize,
}

impl ModelDims {
    pub fn shape_of(&self, id: ParamId) -> Vec<usize> {
        let tt = self.frames * self.frames;
        match id {
            ParamId::GeneratorWeight => vec![tt, self.proto_dim],
            ParamId::GeneratorBias => vec![tt],
            ParamId::Bank => vec![self.classes, self.channels, self.channels],
            ParamId::ProjectionWeight => vec![self.proto_dim, self.channels],
            ParamId::ProjectionBias => vec![self.proto_dim],
            ParamId::Gate => vec![self.tokens],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.tokens < 2 || self.channels < 2 || self.proto_dim == 0 || self.classes < 2 {
            return Err(Error::Input(format!("invalid model dims {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Tensor {
    value: Vec<f64>,
    grad: Vec<f64>,
}

/// All learnable tensors with their gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    dims: ModelDims,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    /// Zero-filled parameters of the right shapes.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let tensors = ParamId::ALL
            .iter()
            .map(|&id| {
                let n = dims.shape_of(id).iter().product();
                Tensor {
                    value: vec![0.0; n],
                    grad: vec![0.0; n],
                }
            })
            .collect();
        Ok(Self { dims, tensors })
    }

    /// Fresh parameters: generator per [`MatchingGenerator::init`], small random
    /// symmetric bank, projection weights uniform in `±1/sqrt(d)` (identity when
    /// `proto_dim == channels`), zero biases and a unit gate.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        let gen = MatchingGenerator::init(dims.frames, dims.proto_dim, rng);
        p.set(ParamId::GeneratorWeight, gen.weight.iter().copied().collect())?;
        p.set(ParamId::GeneratorBias, gen.bias.to_vec())?;
        let bank = ClassPrototypeBank::random(dims.classes, dims.channels, 1e-3, rng)?;
        p.set_bank(&bank)?;
        let w = if dims.proto_dim == dims.channels {
            Array2::eye(dims.channels)
        } else {
            let eps = 1.0 / (dims.channels as f64).sqrt();
            Array2::from_shape_fn((dims.proto_dim, dims.channels), |_| rng.random_range(-eps..eps))
        };
        p.set(ParamId::ProjectionWeight, w.iter().copied().collect())?;
        p.set(ParamId::Gate, vec![1.0; dims.tokens])?;
        Ok(p)
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn shape(&self, id: ParamId) -> Vec<usize> {
        self.dims.shape_of(id)
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.index()].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id.index()].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.index()].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id.index()].grad
    }

    /// Value and gradient of one tensor, borrowed together.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut [f64], &[f64]) {
        let t = &mut self.tensors[id.index()];
        (&mut t.value, &t.grad)
    }

    pub fn set(&mut self, id: ParamId, values: Vec<f64>) -> Result<()> {
        let t = &mut self.tensors[id.index()];
        if values.len() != t.value.len() {
            return shape(format!(
                "{} expects {} values, got {}",
                id.name(),
                t.value.len(),
                values.len()
            ));
        }
        t.value = values;
        Ok(())
    }

    pub fn set_bank(&mut self, bank: &ClassPrototypeBank) -> Result<()> {
        if bank.classes() != self.dims.classes || bank.dim() != self.dims.channels {
            return shape("prototype bank does not match model dims");
        }
        let flat = bank.matrices().iter().flat_map(|m| m.iter().copied()).collect();
        self.set(ParamId::Bank, flat)
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Adds `delta` into the gradient buffer of `id`.
    pub fn accumulate(&mut self, id: ParamId, delta: &[f64]) {
        for (g, d) in self.tensors[id.index()].grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for id in ParamId::ALL {
            let t = &self.tensors[id.index()];
            if t.value.iter().chain(&t.grad).any(|v| !v.is_finite()) {
                return Err(Error::Training(format!("{} became non-finite", id.name())));
            }
        }
        Ok(())
    }

    pub fn generator_weight(&self) -> ArrayView2<'_, f64> {
        let tt = self.dims.frames * self.dims.frames;
        ArrayView2::from_shape((tt, self.dims.proto_dim), self.value(ParamId::GeneratorWeight)).expect("shape")
    }

    pub fn generator_bias(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.value(ParamId::GeneratorBias))
    }

    /// Prototype matrix of `class`.
    pub fn prototype(&self, class: usize) -> ArrayView2<'_, f64> {
        let d = self.dims.channels;
        let all = self.value(ParamId::Bank);
        ArrayView2::from_shape((d, d), &all[class * d * d..(class + 1) * d * d]).expect("shape")
    }

    pub fn projection_weight(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.dims.proto_dim, self.dims.channels), self.value(ParamId::ProjectionWeight))
            .expect("shape")
    }

    pub fn projection_bias(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.value(ParamId::ProjectionBias))
    }

    /// Raw gate parameters. Features are weighted by [`Self::token_weights`].
    pub fn gate(&self) -> &[f64] {
        self.value(ParamId::Gate)
    }

    /// The gate rescaled to unit root-mean-square, so only the relative
    /// weighting of tokens is learnable. A zero gate gives zero weights.
    pub fn token_weights(&self) -> Vec<f64> {
        let g = self.gate();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return vec![0.0; g.len()];
        }
        let scale = (g.len() as f64).sqrt() / norm;
        g.iter().map(|x| x * scale).collect()
    }

    pub fn generator(&self) -> MatchingGenerator {
        MatchingGenerator::new(
            self.generator_weight().to_owned(),
            self.generator_bias().to_owned(),
            self.dims.frames,
        )
        .expect("dims validated")
    }

    pub fn bank(&self) -> ClassPrototypeBank {
        ClassPrototypeBank::new((0..self.dims.classes).map(|c| self.prototype(c).to_owned()).collect())
            .expect("dims validated")
    }

    pub fn projection(&self) -> Projection {
        Projection::new(self.projection_weight().to_owned(), self.projection_bias().to_owned())
            .expect("dims validated")
    }

    /// Projected summary `W c + b` of a raw class-token mean.
    pub fn project(&self, raw: &Array1<f64>) -> Array1<f64> {
        self.projection_weight().dot(raw) + self.projection_bias()
    }
}
