use serde::{Deserialize, Serialize};

use crate::model::{GcnModel, Gradients, Network, ParamId};
use crate::nn::Tensor2;

/// Diagonal Fisher estimates and anchor parameters, one tensor per
/// [`ParamId`].
///
/// Fishers from successive tasks are summed and the anchor is the most recent
/// task's parameters. Head tensors may be narrower than the live model after
/// an expansion; only the overlapping block is penalised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwcState {
    pub lambda: f64,
    fisher: Vec<Tensor2>,
    anchors: Vec<Tensor2>,
}

impl EwcState {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            fisher: Vec::new(),
            anchors: Vec::new(),
        }
    }

    pub fn from_parts(lambda: f64, fisher: Vec<Tensor2>, anchors: Vec<Tensor2>) -> Self {
        assert_eq!(fisher.len(), anchors.len(), "fisher and anchors must align");
        Self { lambda, fisher, anchors }
    }

    pub fn is_empty(&self) -> bool {
        self.fisher.is_empty()
    }

    pub fn fisher(&self, id: ParamId) -> Option<&Tensor2> {
        self.fisher.get(id.index())
    }

    /// `λ Σ F (θ - θ*)²`.
    pub fn penalty<N: Network>(&self, model: &N) -> f64 {
        let mut total = 0.0;
        self.for_each_overlap(model, |_, _, f, d| total += f * d * d);
        self.lambda * total
    }

    /// Adds `2λF(θ - θ*)` to `grads`.
    pub fn add_penalty_gradients(&self, model: &GcnModel, grads: &mut Gradients) {
        if self.is_empty() {
            return;
        }
        let mut extra: Vec<Tensor2> = ParamId::ALL
            .iter()
            .map(|&id| {
                let t = model.tensor(id);
                Tensor2::zeros(t.rows(), t.cols())
            })
            .collect();
        let two_lambda = 2.0 * self.lambda;
        self.for_each_overlap(model, |p, (r, c), f, d| {
            let t = &mut extra[p];
            let v = t.get(r, c) + two_lambda * f * d;
            t.set(r, c, v);
        });
        for (id, g) in ParamId::ALL.iter().zip(&extra) {
            grads.add(*id, g);
        }
    }

    /// Adds a new task's Fisher and moves the anchor to `model`'s values.
    pub fn consolidate(&mut self, model: &GcnModel, fisher: Vec<Tensor2>) {
        let mut summed = Vec::with_capacity(fisher.len());
        for (i, f) in fisher.into_iter().enumerate() {
            let mut f = f;
            if let Some(old) = self.fisher.get(i) {
                for r in 0..old.rows().min(f.rows()) {
                    for c in 0..old.cols().min(f.cols()) {
                        let v = f.get(r, c) + old.get(r, c);
                        f.set(r, c, v);
                    }
                }
            }
            summed.push(f);
        }
        self.fisher = summed;
        self.anchors = ParamId::ALL.iter().map(|&id| model.tensor(id).clone()).collect();
    }

    fn for_each_overlap<N: Network>(&self, model: &N, mut visit: impl FnMut(usize, (usize, usize), f64, f64)) {
        for (p, (f, a)) in self.fisher.iter().zip(&self.anchors).enumerate() {
            let theta = model.tensor(ParamId::ALL[p]);
            for r in 0..f.rows().min(theta.rows()) {
                for c in 0..f.cols().min(theta.cols()) {
                    visit(p, (r, c), f.get(r, c), theta.get(r, c) - a.get(r, c));
                }
            }
        }
    }
}

/// Mean of squared gradients over `samples`, one tensor per [`ParamId`].
pub fn fisher_from_gradients<'a>(samples: impl IntoIterator<Item = &'a Gradients>) -> Option<Vec<Tensor2>> {
    let mut acc: Option<Vec<Tensor2>> = None;
    let mut n = 0usize;
    for g in samples {
        let squared: Vec<Tensor2> = ParamId::ALL
            .iter()
            .map(|&id| {
                let t = g.get(id);
                let data = t.data().iter().map(|v| v * v).collect();
                Tensor2::from_vec(t.rows(), t.cols(), data).expect("same shape")
            })
            .collect();
        match &mut acc {
            None => acc = Some(squared),
            Some(a) => a.iter_mut().zip(&squared).for_each(|(x, y)| x.add_assign(y)),
        }
        n += 1;
    }
    let mut acc = acc?;
    for t in &mut acc {
        t.scale(1.0 / n as f64);
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::UnitKind;
    use crate::testutil::rng;

    fn model() -> GcnModel {
        GcnModel::new(3, 4, UnitKind::Graph, 2, &mut rng(0))
    }

    fn ones_like(m: &GcnModel) -> Vec<Tensor2> {
        ParamId::ALL
            .iter()
            .map(|&id| {
                let t = m.tensor(id);
                Tensor2::filled(t.rows(), t.cols(), 1.0)
            })
            .collect()
    }

    #[test]
    fn empty_state_and_anchor_give_zero() {
        let m = model();
        assert_eq!(EwcState::new(5.0).penalty(&m), 0.0);
        let mut s = EwcState::new(5.0);
        s.consolidate(&m, ones_like(&m));
        assert_eq!(s.penalty(&m), 0.0);
    }

    #[test]
    fn single_offset_example() {
        let f = vec![Tensor2::filled(1, 1, 1.0)];
        let a = vec![Tensor2::filled(1, 1, 0.0)];
        let s = EwcState::from_parts(1.0, f, a);
        let mut m = model();
        // InputWeight[0][0] sits 0.5 away from its anchor.
        m.slot_mut(ParamId::InputWeight).value.set(0, 0, 0.5);
        assert_eq!(s.penalty(&m), 0.25);
    }

    #[test]
    fn overlap_after_head_expansion() {
        let mut m = model();
        let mut s = EwcState::new(2.0);
        s.consolidate(&m, ones_like(&m));
        m.expand_head(3, &mut rng(1));
        assert_eq!(s.penalty(&m), 0.0);
        let mut g = m.zero_gradients();
        s.add_penalty_gradients(&m, &mut g);
        assert!(g.is_finite());
        let v = m.tensor(ParamId::HeadWeight).get(0, 4);
        m.slot_mut(ParamId::HeadWeight).value.set(0, 4, v + 1.0);
        assert_eq!(s.penalty(&m), 0.0, "new columns are unconstrained");
    }

    #[test]
    fn fisher_is_mean_square_and_nonnegative() {
        let m = model();
        let mut a = m.zero_gradients();
        let mut b = m.zero_gradients();
        a.add(ParamId::InputBias, &Tensor2::filled(1, 4, -2.0));
        b.add(ParamId::InputBias, &Tensor2::filled(1, 4, 1.0));
        let f = fisher_from_gradients([&a, &b]).unwrap();
        assert_eq!(f[ParamId::InputBias.index()].data(), &[2.5; 4]);
        assert!(f.iter().all(|t| t.data().iter().all(|v| *v >= 0.0)));
        assert!(fisher_from_gradients(std::iter::empty()).is_none());
    }

    #[test]
    fn fishers_accumulate_across_tasks() {
        let mut m = model();
        let mut s = EwcState::new(1.0);
        s.consolidate(&m, ones_like(&m));
        m.expand_head(1, &mut rng(2));
        s.consolidate(&m, ones_like(&m));
        let head = s.fisher(ParamId::HeadWeight).unwrap();
        assert_eq!(head.get(0, 0), 2.0);
        assert_eq!(head.get(0, 2), 1.0);
    }
}
