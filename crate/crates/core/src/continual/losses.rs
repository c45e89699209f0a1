//! Loss terms of a continual training step and their gradients.
//!
//! Every per-graph forward pass of a step is kept in a [`PassPool`] so that
//! several terms touching the same graph share one encoding and one backward.

use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::BufferItem;
use super::ewc::EwcState;
use crate::error::{Error, Result};
use crate::graph::{PreparedGraph, UnitKind};
use crate::model::{fingerprint, Encoding, GcnModel, Gradients, ModelCheckpoint, Network, OutputLayout, Readout};
use crate::nn::{cosine_similarity, cosine_with_grad, cross_entropy_sum, log_softmax, softmax_in_place, Tensor2};

/// Weights of the replay (`alpha`), local-structure (`beta`) and
/// global-structure (`gamma`) terms added to the task loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub const NONE: LossWeights = LossWeights {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputDistillMode {
    /// Cross-entropy between softened outputs, scaled by `T²`.
    Lwf,
    /// `KL(previous ‖ current)` between softened outputs.
    Dk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputDistill {
    pub mode: OutputDistillMode,
    pub temperature: f64,
    pub weight: f64,
}

/// Supervision attached to one graph of the current batch, already mapped to
/// head output units.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// `(row, unit)` pairs.
    Nodes(Vec<(usize, usize)>),
    Graph(usize),
}

#[derive(Debug, Clone)]
pub struct CurrentItem {
    pub graph: Arc<PreparedGraph>,
    pub targets: Targets,
}

/// Everything a single optimisation step looks at.
#[derive(Debug, Clone, Default)]
pub struct StepBatch<'a> {
    pub current: Vec<CurrentItem>,
    pub replay: Vec<&'a BufferItem>,
    /// Graphs the structure terms are computed on.
    pub distill: Vec<Arc<PreparedGraph>>,
}

pub struct StepContext<'a> {
    pub previous: Option<&'a ModelCheckpoint>,
    pub layout: &'a OutputLayout,
    pub weights: LossWeights,
    /// Nodes sampled per distillation graph for the local-structure term.
    pub k_n: usize,
    pub output_distill: Option<OutputDistill>,
    pub ewc: Option<&'a EwcState>,
    /// Seeds node sampling for the local-structure term.
    pub seed: u64,
}

/// Unweighted loss components and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task: f64,
    pub replay: f64,
    pub local: f64,
    pub global: f64,
    pub output_distill: f64,
    pub ewc: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.task, self.replay, self.local, self.global, self.output_distill, self.ewc, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

struct Pass {
    graph: Arc<PreparedGraph>,
    enc: Encoding,
    readout: Option<Readout>,
    logits: Option<Tensor2>,
    d_theta: Tensor2,
    d_embedding: Option<Tensor2>,
    d_logits: Option<Tensor2>,
    prev_enc: Option<Encoding>,
    prev_readout: Option<Readout>,
}

/// Forward passes of one step, keyed by graph identity.
struct PassPool<'m> {
    model: &'m GcnModel,
    previous: Option<&'m ModelCheckpoint>,
    passes: Vec<Pass>,
}

impl<'m> PassPool<'m> {
    fn new(model: &'m GcnModel, previous: Option<&'m ModelCheckpoint>) -> Self {
        Self {
            model,
            previous,
            passes: Vec::new(),
        }
    }

    fn get(&mut self, graph: &Arc<PreparedGraph>) -> Result<usize> {
        if let Some(i) = self.passes.iter().position(|p| Arc::ptr_eq(&p.graph, graph)) {
            return Ok(i);
        }
        let enc = self.model.encode(graph)?;
        let (n, h) = enc.theta.shape();
        self.passes.push(Pass {
            graph: graph.clone(),
            enc,
            readout: None,
            logits: None,
            d_theta: Tensor2::zeros(n, h),
            d_embedding: None,
            d_logits: None,
            prev_enc: None,
            prev_readout: None,
        });
        Ok(self.passes.len() - 1)
    }

    fn readout(&mut self, i: usize) -> Result<&Readout> {
        let p = &mut self.passes[i];
        if p.readout.is_none() {
            p.readout = Some(self.model.readout(&p.enc.theta)?);
        }
        Ok(p.readout.as_ref().expect("set above"))
    }

    fn logits(&mut self, i: usize) -> Result<&Tensor2> {
        if self.passes[i].logits.is_none() {
            let logits = match self.model.shape().unit_kind {
                UnitKind::Node => self.model.head(&self.passes[i].enc.theta)?,
                UnitKind::Graph => {
                    let emb = self.readout(i)?.embedding.clone();
                    self.model.head(&emb)?
                }
            };
            self.passes[i].logits = Some(logits);
        }
        Ok(self.passes[i].logits.as_ref().expect("set above"))
    }

    fn add_d_logits(&mut self, i: usize, d: &Tensor2, scale: f64) {
        let p = &mut self.passes[i];
        p.d_logits
            .get_or_insert_with(|| Tensor2::zeros(d.rows(), d.cols()))
            .add_scaled(d, scale);
    }

    fn add_d_embedding(&mut self, i: usize, d: &[f64], scale: f64) {
        let p = &mut self.passes[i];
        let acc = p.d_embedding.get_or_insert_with(|| Tensor2::zeros(1, d.len()));
        for (a, v) in acc.data_mut().iter_mut().zip(d) {
            *a += scale * v;
        }
    }

    fn previous_encoding(&mut self, i: usize) -> Result<&Encoding> {
        let prev = self.previous.ok_or_else(|| Error::invalid("no previous checkpoint"))?;
        let p = &mut self.passes[i];
        if p.prev_enc.is_none() {
            p.prev_enc = Some(prev.encode(&p.graph)?);
        }
        Ok(p.prev_enc.as_ref().expect("set above"))
    }

    fn previous_readout(&mut self, i: usize) -> Result<&Readout> {
        let prev = self.previous.ok_or_else(|| Error::invalid("no previous checkpoint"))?;
        self.previous_encoding(i)?;
        let p = &mut self.passes[i];
        if p.prev_readout.is_none() {
            let theta = &p.prev_enc.as_ref().expect("encoded above").theta;
            p.prev_readout = Some(prev.readout(theta)?);
        }
        Ok(p.prev_readout.as_ref().expect("set above"))
    }

    fn fingerprint(&self) -> u64 {
        let mut parts = Vec::new();
        for p in &self.passes {
            parts.push((&p.enc, p.readout.as_ref()));
        }
        fingerprint(&parts)
    }

    fn backward(self, grads: &mut Gradients) -> Result<()> {
        let model = self.model;
        for mut p in self.passes {
            if let Some(dl) = &p.d_logits {
                match model.shape().unit_kind {
                    UnitKind::Node => {
                        let d_in = model.backward_head(&p.enc.theta, dl, grads)?;
                        p.d_theta.add_assign(&d_in);
                    }
                    UnitKind::Graph => {
                        let emb = &p.readout.as_ref().expect("graph logits need a readout").embedding;
                        let d_in = model.backward_head(emb, dl, grads)?;
                        p.d_embedding
                            .get_or_insert_with(|| Tensor2::zeros(1, d_in.cols()))
                            .add_assign(&d_in);
                    }
                }
            }
            if let Some(de) = &p.d_embedding {
                let ro = p.readout.as_ref().expect("embedding gradient needs a readout");
                let d = model.backward_readout(&p.enc.theta, ro, de, grads)?;
                p.d_theta.add_assign(&d);
            }
            model.backward_encoding(&p.graph, &p.enc, &p.d_theta, grads)?;
        }
        Ok(())
    }
}

/// `S_i = θ_i - mean of θ over i's neighbours`; `None` for isolated nodes.
pub fn local_structure_vector(theta: &Tensor2, neighbors: &[Vec<usize>], i: usize) -> Option<Vec<f64>> {
    let nbrs = neighbors.get(i)?;
    if nbrs.is_empty() {
        return None;
    }
    let inv = 1.0 / nbrs.len() as f64;
    let mut s = theta.row(i).to_vec();
    for &n in nbrs {
        for (v, t) in s.iter_mut().zip(theta.row(n)) {
            *v -= inv * t;
        }
    }
    Some(s)
}

/// Up to `k_n` distinct non-isolated nodes, uniformly without replacement.
/// If fewer are eligible, all of them are returned.
pub fn sample_structure_nodes(graph: &PreparedGraph, k_n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let eligible: Vec<usize> = (0..graph.node_count()).filter(|&i| !graph.neighbors[i].is_empty()).collect();
    if eligible.len() <= k_n {
        return eligible;
    }
    let mut picked: Vec<usize> = index::sample(rng, eligible.len(), k_n).into_iter().map(|i| eligible[i]).collect();
    picked.sort_unstable();
    picked
}

/// Mean `1 - cos(S^c, S^o)` over `k_n` sampled nodes of each graph.
/// Zero without a previous checkpoint or when nothing can be sampled.
pub fn ls_loss<N: Network>(
    current: &N,
    previous: Option<&ModelCheckpoint>,
    graphs: &[&PreparedGraph],
    k_n: usize,
    seed: u64,
) -> Result<f64> {
    let Some(previous) = previous else { return Ok(0.0) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    for g in graphs {
        let nodes = sample_structure_nodes(g, k_n, &mut rng);
        if nodes.is_empty() {
            continue;
        }
        let tc = current.node_embeddings(g)?;
        let to = previous.node_embeddings(g)?;
        for i in nodes {
            let sc = local_structure_vector(&tc, &g.neighbors, i).expect("sampled nodes have neighbours");
            let so = local_structure_vector(&to, &g.neighbors, i).expect("sampled nodes have neighbours");
            total += 1.0 - cosine_similarity(&sc, &so);
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Mean `1 - cos(f^P, f^C)` of readout embeddings over `graphs`.
pub fn gs_loss<N: Network>(current: &N, previous: Option<&ModelCheckpoint>, graphs: &[&PreparedGraph]) -> Result<f64> {
    let Some(previous) = previous else { return Ok(0.0) };
    if graphs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for g in graphs {
        let fc = current.readout(&current.node_embeddings(g)?)?.embedding;
        let fp = previous.readout(&previous.node_embeddings(g)?)?.embedding;
        total += 1.0 - cosine_similarity(fp.data(), fc.data());
    }
    Ok(total / graphs.len() as f64)
}

/// `α·CE(current) + (1-α)·CE(buffer)`; the buffer term vanishes when the
/// buffer batch is empty.
pub fn er_loss<N: Network>(
    model: &N,
    layout: &OutputLayout,
    current: &[CurrentItem],
    buffer: &[&BufferItem],
    alpha: f64,
) -> Result<f64> {
    let ce_current = current_cross_entropy(model, current)?;
    let ce_buffer = if buffer.is_empty() {
        0.0
    } else {
        replay_cross_entropy(model, layout, buffer)?
    };
    Ok(alpha * ce_current + (1.0 - alpha) * ce_buffer)
}

/// Mean cross-entropy over all supervised rows (node units) or graphs.
pub fn current_cross_entropy<N: Network>(model: &N, current: &[CurrentItem]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for item in current {
        let logits = model.logits(&item.graph)?;
        let labels = targets_to_labels(&item.targets, logits.rows());
        let (sum, n, _) = cross_entropy_sum(&logits, &labels)?;
        total += sum;
        count += n;
    }
    if count == 0 {
        return Err(Error::invalid("cross-entropy over an empty batch"));
    }
    Ok(total / count as f64)
}

/// Mean cross-entropy of replayed items under `layout`.
pub fn replay_cross_entropy<N: Network>(model: &N, layout: &OutputLayout, items: &[&BufferItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::invalid("cross-entropy over an empty buffer batch"));
    }
    let mut total = 0.0;
    for item in items {
        let logits = model.logits(&item.graph)?;
        let (row, unit) = replay_target(layout, item, logits.cols())?;
        total -= log_softmax(logits.row(row))[unit];
    }
    Ok(total / items.len() as f64)
}

fn replay_target(layout: &OutputLayout, item: &BufferItem, width: usize) -> Result<(usize, usize)> {
    let unit = layout
        .unit_of(item.label)
        .filter(|&u| u < width)
        .ok_or_else(|| Error::invalid(format!("buffer label {} outside the head", item.label)))?;
    Ok((item.node.unwrap_or(0), unit))
}

fn targets_to_labels(targets: &Targets, rows: usize) -> Vec<Option<usize>> {
    let mut labels = vec![None; rows];
    match targets {
        Targets::Nodes(pairs) => {
            for &(r, u) in pairs {
                labels[r] = Some(u);
            }
        }
        Targets::Graph(u) => labels[0] = Some(*u),
    }
    labels
}

/// Softened-output distillation over the first `old_width` units.
///
/// Returns the mean loss over rows and its gradient w.r.t. the current
/// logits (zero outside the old units).
pub fn output_distill_rows(
    current: &Tensor2,
    previous: &Tensor2,
    old_width: usize,
    mode: OutputDistillMode,
    temperature: f64,
) -> (f64, Tensor2) {
    let rows = current.rows();
    let mut grad = Tensor2::zeros(rows, current.cols());
    if rows == 0 || old_width == 0 {
        return (0.0, grad);
    }
    let t = temperature;
    let mut total = 0.0;
    for r in 0..rows {
        let soft = |row: &[f64]| -> Vec<f64> { row[..old_width].iter().map(|v| v / t).collect() };
        let mut p = soft(previous.row(r));
        let lq = log_softmax(&soft(current.row(r)));
        softmax_in_place(&mut p);
        let q: Vec<f64> = lq.iter().map(|v| v.exp()).collect();
        let cross: f64 = -p.iter().zip(&lq).map(|(a, b)| a * b).sum::<f64>();
        let g = grad.row_mut(r);
        match mode {
            OutputDistillMode::Lwf => {
                total += t * t * cross;
                for k in 0..old_width {
                    g[k] = t * (q[k] - p[k]);
                }
            }
            OutputDistillMode::Dk => {
                let entropy: f64 = -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
                total += cross - entropy;
                for k in 0..old_width {
                    g[k] = (q[k] - p[k]) / t;
                }
            }
        }
    }
    grad.scale(1.0 / rows as f64);
    (total / rows as f64, grad)
}

/// Rows of the current logits that carry supervision, in target order.
fn supervised_rows(targets: &Targets) -> Vec<usize> {
    match targets {
        Targets::Nodes(pairs) => pairs.iter().map(|&(r, _)| r).collect(),
        Targets::Graph(_) => vec![0],
    }
}

fn gather_rows(t: &Tensor2, rows: &[usize]) -> Tensor2 {
    let data: Vec<Vec<f64>> = rows.iter().map(|&r| t.row(r).to_vec()).collect();
    Tensor2::from_rows(&data).unwrap_or_else(|_| Tensor2::zeros(0, t.cols()))
}

/// Output distillation of the current batch against the previous model.
pub fn output_distill_loss<N: Network>(
    current: &N,
    previous: Option<&ModelCheckpoint>,
    batch: &[CurrentItem],
    mode: OutputDistillMode,
    temperature: f64,
) -> Result<f64> {
    let Some(previous) = previous else { return Ok(0.0) };
    let old_width = previous.shape().output_width;
    let mut total = 0.0;
    let mut rows = 0usize;
    for item in batch {
        let sel = supervised_rows(&item.targets);
        let c = gather_rows(&current.logits(&item.graph)?, &sel);
        let p = gather_rows(&previous.logits(&item.graph)?, &sel);
        let (loss, _) = output_distill_rows(&c, &p, old_width, mode, temperature);
        total += loss * sel.len() as f64;
        rows += sel.len();
    }
    Ok(if rows == 0 { 0.0 } else { total / rows as f64 })
}

/// The full step objective
/// `L_task + α·CE(replay) + β·L_LS + γ·L_GS (+ output distillation) (+ EWC)`.
///
/// When `grads` is given, gradients of the total w.r.t. every parameter are
/// accumulated into it. The returned fingerprint identifies the ReLU and
/// max-pool decisions taken, for gradient checking.
pub fn total_loss(
    model: &GcnModel,
    batch: &StepBatch<'_>,
    ctx: &StepContext<'_>,
    grads: Option<&mut Gradients>,
) -> Result<(LossBreakdown, u64)> {
    let mut pool = PassPool::new(model, ctx.previous);
    let mut out = LossBreakdown::default();
    let w = ctx.weights;

    // Current-task cross-entropy, averaged over supervised units.
    let mut ce_rows = 0usize;
    let mut ce_parts = Vec::with_capacity(batch.current.len());
    for item in &batch.current {
        let i = pool.get(&item.graph)?;
        let logits = pool.logits(i)?;
        let labels = targets_to_labels(&item.targets, logits.rows());
        let (sum, n, d) = cross_entropy_sum(logits, &labels)?;
        out.task += sum;
        ce_rows += n;
        ce_parts.push((i, d));
    }
    if ce_rows > 0 {
        out.task /= ce_rows as f64;
        for (i, d) in &ce_parts {
            pool.add_d_logits(*i, d, 1.0 / ce_rows as f64);
        }
    }

    // Replay cross-entropy.
    if w.alpha != 0.0 && !batch.replay.is_empty() {
        let scale = 1.0 / batch.replay.len() as f64;
        for item in &batch.replay {
            let i = pool.get(&item.graph)?;
            let logits = pool.logits(i)?;
            let (row, unit) = replay_target(ctx.layout, item, logits.cols())?;
            let mut labels = vec![None; logits.rows()];
            labels[row] = Some(unit);
            let (sum, _, d) = cross_entropy_sum(logits, &labels)?;
            out.replay += sum * scale;
            pool.add_d_logits(i, &d, w.alpha * scale);
        }
    }

    // Output distillation (LwF / DK) on the current batch.
    if let (Some(od), Some(prev)) = (ctx.output_distill, ctx.previous) {
        let old_width = prev.shape().output_width;
        let total_rows: usize = batch.current.iter().map(|c| supervised_rows(&c.targets).len()).sum();
        for item in &batch.current {
            let sel = supervised_rows(&item.targets);
            if sel.is_empty() {
                continue;
            }
            let i = pool.get(&item.graph)?;
            let c = gather_rows(pool.logits(i)?, &sel);
            let p = gather_rows(&prev.logits(&item.graph)?, &sel);
            let (loss, d) = output_distill_rows(&c, &p, old_width, od.mode, od.temperature);
            let share = sel.len() as f64 / total_rows as f64;
            out.output_distill += loss * share;
            let mut full = Tensor2::zeros(pool.passes[i].logits.as_ref().expect("computed").rows(), c.cols());
            for (k, &r) in sel.iter().enumerate() {
                full.row_mut(r).copy_from_slice(d.row(k));
            }
            pool.add_d_logits(i, &full, od.weight * share);
        }
    }

    // Structure distillation against the previous checkpoint.
    if ctx.previous.is_some() && !batch.distill.is_empty() && (w.beta != 0.0 || w.gamma != 0.0) {
        if w.beta != 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
            let mut terms = Vec::new();
            for graph in &batch.distill {
                let nodes = sample_structure_nodes(graph, ctx.k_n, &mut rng);
                if !nodes.is_empty() {
                    terms.push((pool.get(graph)?, nodes));
                }
            }
            let count: usize = terms.iter().map(|(_, n)| n.len()).sum();
            for (i, nodes) in terms {
                let prev_theta = pool.previous_encoding(i)?.theta.clone();
                let p = &mut pool.passes[i];
                let nbrs = &p.graph.neighbors;
                for node in nodes {
                    let sc = local_structure_vector(&p.enc.theta, nbrs, node).expect("eligible");
                    let so = local_structure_vector(&prev_theta, nbrs, node).expect("eligible");
                    let (cos, d_sc, _) = cosine_with_grad(&sc, &so);
                    out.local += (1.0 - cos) / count as f64;
                    let scale = -w.beta / count as f64;
                    let inv = 1.0 / nbrs[node].len() as f64;
                    for (k, g) in d_sc.iter().enumerate() {
                        let v = p.d_theta.get(node, k) + scale * g;
                        p.d_theta.set(node, k, v);
                    }
                    for &n in &nbrs[node] {
                        for (k, g) in d_sc.iter().enumerate() {
                            let v = p.d_theta.get(n, k) - scale * inv * g;
                            p.d_theta.set(n, k, v);
                        }
                    }
                }
            }
        }
        if w.gamma != 0.0 {
            let scale = 1.0 / batch.distill.len() as f64;
            for graph in &batch.distill {
                let i = pool.get(graph)?;
                let fp = pool.previous_readout(i)?.embedding.clone();
                let fc = pool.readout(i)?.embedding.clone();
                let (cos, _, d_fc) = cosine_with_grad(fp.data(), fc.data());
                out.global += (1.0 - cos) * scale;
                pool.add_d_embedding(i, &d_fc, -w.gamma * scale);
            }
        }
    }

    if let Some(ewc) = ctx.ewc {
        out.ewc = ewc.penalty(model);
    }

    out.total = out.task
        + w.alpha * out.replay
        + w.beta * out.local
        + w.gamma * out.global
        + ctx.output_distill.map_or(0.0, |od| od.weight * out.output_distill)
        + out.ewc;

    let fp = pool.fingerprint();
    if let Some(grads) = grads {
        if let Some(ewc) = ctx.ewc {
            ewc.add_penalty_gradients(model, grads);
        }
        pool.backward(grads)?;
    }
    Ok((out, fp))
}
