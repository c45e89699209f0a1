//! The graph network: an input projection, three GCN layers (residual from
//! the second layer on), a weighted-sum-and-max readout, and a classification
//! head that widens as tasks arrive.

mod checkpoint;
mod layout;
mod pool;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{PreparedGraph, UnitKind};
use crate::nn::{affine_forward, affine_grads, relu, relu_backward, softmax_rows, ParamSlot, Parameterized, Tensor2};

pub use checkpoint::ModelCheckpoint;
pub use layout::OutputLayout;
pub use pool::{pool_backward, weighted_sum_max_pool, Pooling};

pub const GCN_LAYERS: usize = 3;
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    InputWeight,
    InputBias,
    Gcn1,
    Gcn2,
    Gcn3,
    Gate,
    ReadoutWeight,
    ReadoutBias,
    HeadWeight,
    HeadBias,
}

impl ParamId {
    pub const ALL: [ParamId; 10] = [
        ParamId::InputWeight,
        ParamId::InputBias,
        ParamId::Gcn1,
        ParamId::Gcn2,
        ParamId::Gcn3,
        ParamId::Gate,
        ParamId::ReadoutWeight,
        ParamId::ReadoutBias,
        ParamId::HeadWeight,
        ParamId::HeadBias,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamId::InputWeight => "input.weight",
            ParamId::InputBias => "input.bias",
            ParamId::Gcn1 => "gcn.1.weight",
            ParamId::Gcn2 => "gcn.2.weight",
            ParamId::Gcn3 => "gcn.3.weight",
            ParamId::Gate => "pool.gate",
            ParamId::ReadoutWeight => "readout.weight",
            ParamId::ReadoutBias => "readout.bias",
            ParamId::HeadWeight => "head.weight",
            ParamId::HeadBias => "head.bias",
        }
    }

    pub fn gcn(layer: usize) -> ParamId {
        [ParamId::Gcn1, ParamId::Gcn2, ParamId::Gcn3][layer]
    }

    pub fn is_head(self) -> bool {
        matches!(self, ParamId::HeadWeight | ParamId::HeadBias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden: usize,
    pub unit_kind: UnitKind,
    pub output_width: usize,
}

/// Activations of one forward pass through the GCN stack.
#[derive(Debug, Clone)]
pub struct Encoding {
    /// Output of the input projection.
    pub h0: Tensor2,
    /// Per layer: its input `h^{l-1}` and pre-activation `Â h^{l-1} W^l`.
    pub layers: Vec<(Tensor2, Tensor2)>,
    /// Final node embeddings `Θ = h³`.
    pub theta: Tensor2,
}

impl Encoding {
    /// Hash of ReLU on/off decisions, used to detect kinks in gradient checks.
    pub fn fingerprint(&self, state: &mut impl Hasher) {
        for (_, pre) in &self.layers {
            let mut word = 0u64;
            for (i, &v) in pre.data().iter().enumerate() {
                word = (word << 1) | u64::from(v > 0.0);
                if i % 64 == 63 {
                    word.hash(state);
                    word = 0;
                }
            }
            word.hash(state);
        }
    }
}

/// Pooled graph embedding followed by the readout linear layer.
#[derive(Debug, Clone)]
pub struct Readout {
    pub pooling: Pooling,
    /// `f = pooled · R + r`, shape `1 x H`.
    pub embedding: Tensor2,
}

impl Readout {
    pub fn fingerprint(&self, state: &mut impl Hasher) {
        self.pooling.argmax.hash(state);
    }
}

/// Forward computations shared by trainable models and frozen checkpoints.
pub trait Network {
    fn shape(&self) -> ModelShape;
    fn tensor(&self, id: ParamId) -> &Tensor2;

    fn encode(&self, graph: &PreparedGraph) -> Result<Encoding> {
        let shape = self.shape();
        let x = graph.features();
        if x.cols() != shape.input_dim {
            return Err(Error::shape("encode", format!("{} input features", shape.input_dim), x.cols()));
        }
        let h0 = affine_forward(x, self.tensor(ParamId::InputWeight), self.tensor(ParamId::InputBias))?;
        let mut layers = Vec::with_capacity(GCN_LAYERS);
        let mut h = h0.clone();
        for l in 0..GCN_LAYERS {
            let pre = graph.adjacency.apply(&h.matmul(self.tensor(ParamId::gcn(l)))?);
            let mut next = relu(&pre);
            if l >= 1 {
                next.add_assign(&h);
            }
            layers.push((h, pre));
            h = next;
        }
        Ok(Encoding { h0, layers, theta: h })
    }

    fn node_embeddings(&self, graph: &PreparedGraph) -> Result<Tensor2> {
        Ok(self.encode(graph)?.theta)
    }

    fn readout(&self, theta: &Tensor2) -> Result<Readout> {
        let pooling = weighted_sum_max_pool(theta, self.tensor(ParamId::Gate))?;
        let embedding = affine_forward(
            &pooling.pooled,
            self.tensor(ParamId::ReadoutWeight),
            self.tensor(ParamId::ReadoutBias),
        )?;
        Ok(Readout { pooling, embedding })
    }

    /// Applies the head to `Θ` (node units) or to a readout embedding.
    fn head(&self, input: &Tensor2) -> Result<Tensor2> {
        affine_forward(input, self.tensor(ParamId::HeadWeight), self.tensor(ParamId::HeadBias))
    }

    /// Per-node logits (`N x C`) or a single graph row (`1 x C`).
    fn logits(&self, graph: &PreparedGraph) -> Result<Tensor2> {
        let enc = self.encode(graph)?;
        match self.shape().unit_kind {
            UnitKind::Node => self.head(&enc.theta),
            UnitKind::Graph => self.head(&self.readout(&enc.theta)?.embedding),
        }
    }

    /// Softmax over the full current head.
    fn predict(&self, graph: &PreparedGraph) -> Result<Tensor2> {
        Ok(softmax_rows(&self.logits(graph)?))
    }
}

/// Per-parameter gradient accumulators, aligned with [`ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    tensors: Vec<Tensor2>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor2 {
        &self.tensors[id.index()]
    }

    pub fn add(&mut self, id: ParamId, g: &Tensor2) {
        self.tensors[id.index()].add_assign(g);
    }

    pub fn add_scaled(&mut self, id: ParamId, g: &Tensor2, s: f64) {
        self.tensors[id.index()].add_scaled(g, s);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor2::is_finite)
    }
}

/// Trainable GCN with Adam state in every slot.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    shape: ModelShape,
    slots: Vec<ParamSlot>,
}

fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor2 {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor2::from_vec(rows, cols, data).expect("sized by construction")
}

impl GcnModel {
    /// Xavier-uniform weights and zero biases. `output_width` may be 0 and
    /// grown later with [`GcnModel::expand_head`].
    pub fn new(input_dim: usize, hidden: usize, unit_kind: UnitKind, output_width: usize, rng: &mut impl Rng) -> Self {
        let h = hidden;
        let mut values = vec![
            xavier(input_dim, h, rng),
            Tensor2::zeros(1, h),
        ];
        for _ in 0..GCN_LAYERS {
            values.push(xavier(h, h, rng));
        }
        values.push(xavier(h, 1, rng));
        values.push(xavier(2 * h, h, rng));
        values.push(Tensor2::zeros(1, h));
        values.push(xavier(h, output_width, rng));
        values.push(Tensor2::zeros(1, output_width));
        let slots = ParamId::ALL
            .iter()
            .zip(values)
            .map(|(id, v)| ParamSlot::new(id.name(), v))
            .collect();
        Self {
            shape: ModelShape {
                input_dim,
                hidden,
                unit_kind,
                output_width,
            },
            slots,
        }
    }

    pub(crate) fn from_parts(shape: ModelShape, values: Vec<Tensor2>) -> Self {
        let slots = ParamId::ALL
            .iter()
            .zip(values)
            .map(|(id, v)| ParamSlot::new(id.name(), v))
            .collect();
        Self { shape, slots }
    }

    pub fn slot(&self, id: ParamId) -> &ParamSlot {
        &self.slots[id.index()]
    }

    pub fn slot_mut(&mut self, id: ParamId) -> &mut ParamSlot {
        &mut self.slots[id.index()]
    }

    pub fn output_width(&self) -> usize {
        self.shape.output_width
    }

    pub fn parameter_count(&self) -> usize {
        self.slots.iter().map(|s| s.value.data().len()).sum()
    }

    /// Appends `new_classes` output units. Existing head columns, including
    /// their Adam moments, are copied bit-for-bit; new weights are
    /// Xavier-uniform and new biases zero.
    pub fn expand_head(&mut self, new_classes: usize, rng: &mut impl Rng) {
        if new_classes == 0 {
            return;
        }
        let h = self.shape.hidden;
        let old = self.shape.output_width;
        let width = old + new_classes;
        let fresh = xavier(h, width, rng);
        let widen = |t: &Tensor2, fill: Option<&Tensor2>| {
            let mut out = Tensor2::zeros(t.rows(), width);
            for r in 0..t.rows() {
                out.row_mut(r)[..old].copy_from_slice(t.row(r));
                if let Some(f) = fill {
                    out.row_mut(r)[old..].copy_from_slice(&f.row(r)[old..]);
                }
            }
            out
        };
        let w = &mut self.slots[ParamId::HeadWeight.index()];
        *w = ParamSlot {
            name: w.name.clone(),
            value: widen(&w.value, Some(&fresh)),
            grad: widen(&w.grad, None),
            adam_m: widen(&w.adam_m, None),
            adam_v: widen(&w.adam_v, None),
        };
        let b = &mut self.slots[ParamId::HeadBias.index()];
        *b = ParamSlot {
            name: b.name.clone(),
            value: widen(&b.value, None),
            grad: widen(&b.grad, None),
            adam_m: widen(&b.adam_m, None),
            adam_v: widen(&b.adam_v, None),
        };
        self.shape.output_width = width;
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self
                .slots
                .iter()
                .map(|s| Tensor2::zeros(s.value.rows(), s.value.cols()))
                .collect(),
        }
    }

    /// Copies accumulated gradients into the slots' `grad` tensors.
    pub fn set_gradients(&mut self, grads: &Gradients) {
        for (slot, g) in self.slots.iter_mut().zip(&grads.tensors) {
            slot.grad.data_mut().copy_from_slice(g.data());
        }
    }

    /// Backpropagates `dΘ` through the GCN stack and input projection.
    pub fn backward_encoding(
        &self,
        graph: &PreparedGraph,
        enc: &Encoding,
        d_theta: &Tensor2,
        grads: &mut Gradients,
    ) -> Result<()> {
        let mut dh = d_theta.clone();
        for l in (0..GCN_LAYERS).rev() {
            let (input, pre) = &enc.layers[l];
            let dz = relu_backward(pre, &dh);
            let dm = graph.adjacency.apply(&dz);
            grads.add(ParamId::gcn(l), &input.t_matmul(&dm)?);
            let mut d_in = dm.matmul_t(&self.slot(ParamId::gcn(l)).value)?;
            if l >= 1 {
                d_in.add_assign(&dh);
            }
            dh = d_in;
        }
        grads.add(ParamId::InputWeight, &graph.features().t_matmul(&dh)?);
        grads.add(ParamId::InputBias, &dh.col_sums());
        Ok(())
    }

    /// Backpropagates `df` (`1 x H`) through the readout; returns `dΘ`.
    pub fn backward_readout(
        &self,
        theta: &Tensor2,
        readout: &Readout,
        d_embedding: &Tensor2,
        grads: &mut Gradients,
    ) -> Result<Tensor2> {
        let (d_pooled, d_r, d_rb) = affine_grads(
            &readout.pooling.pooled,
            &self.slot(ParamId::ReadoutWeight).value,
            d_embedding,
        )?;
        grads.add(ParamId::ReadoutWeight, &d_r);
        grads.add(ParamId::ReadoutBias, &d_rb);
        let (d_theta, d_gate) = pool_backward(theta, &self.slot(ParamId::Gate).value, &readout.pooling, &d_pooled);
        grads.add(ParamId::Gate, &d_gate);
        Ok(d_theta)
    }

    /// Backpropagates logits gradients through the head; returns `d input`.
    pub fn backward_head(&self, input: &Tensor2, d_logits: &Tensor2, grads: &mut Gradients) -> Result<Tensor2> {
        let (d_in, d_w, d_b) = affine_grads(input, &self.slot(ParamId::HeadWeight).value, d_logits)?;
        grads.add(ParamId::HeadWeight, &d_w);
        grads.add(ParamId::HeadBias, &d_b);
        Ok(d_in)
    }

    pub fn checkpoint(&self, task_id: usize) -> ModelCheckpoint {
        ModelCheckpoint::new(task_id, self.shape, self.slots.iter().map(|s| s.value.clone()).collect())
    }
}

impl Network for GcnModel {
    fn shape(&self) -> ModelShape {
        self.shape
    }

    fn tensor(&self, id: ParamId) -> &Tensor2 {
        &self.slots[id.index()].value
    }
}

impl Parameterized for GcnModel {
    fn param_slots(&self) -> Vec<&ParamSlot> {
        self.slots.iter().collect()
    }

    fn param_slots_mut(&mut self) -> Vec<&mut ParamSlot> {
        self.slots.iter_mut().collect()
    }
}

/// Combined kink fingerprint of an encoding and optional readout.
pub fn fingerprint(parts: &[(&Encoding, Option<&Readout>)]) -> u64 {
    let mut h = DefaultHasher::new();
    for (enc, readout) in parts {
        enc.fingerprint(&mut h);
        if let Some(r) = readout {
            r.fingerprint(&mut h);
        }
    }
    h.finish()
}
