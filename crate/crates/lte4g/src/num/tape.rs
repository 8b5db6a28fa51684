//! Define-by-run reverse-mode automatic differentiation.
//!
//! Operations push nodes onto a [`Tape`] and return integer handles.
//! [`Tape::backward`] walks the tape in reverse from a scalar loss node and
//! accumulates gradients into every trainable leaf it reaches. Sparse
//! operands (the adjacency operator, sparse feature matrices) are constants:
//! gradients flow only through dense inputs.
//!
//! Loss functions are tape operations with hand-derived backward rules; the
//! `gradcheck` module validates each of them against central finite
//! differences.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::num::{DenseMat, SparseMat};

/// Handle to a node on the tape.
pub type NodeId = usize;

/// Floor applied to every argument of a logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

enum Op {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Spmm {
        s: Rc<SparseMat>,
        d: NodeId,
    },
    Relu {
        x: NodeId,
    },
    RowSoftmax {
        z: NodeId,
    },
    SelectRows {
        x: NodeId,
        idx: Rc<Vec<usize>>,
    },
    SumAll {
        x: NodeId,
    },
    AddScaled {
        terms: Vec<(f64, NodeId)>,
    },
    /// Mean over rows of the class-summed focal terms.
    Focal {
        probs: NodeId,
        labels: Rc<Vec<usize>>,
        alpha: Rc<Vec<f64>>,
        gamma: f64,
    },
    /// Mean over rows of (optionally class-weighted) negative log target
    /// probability.
    CrossEntropy {
        probs: NodeId,
        labels: Rc<Vec<usize>>,
        weights: Option<Rc<Vec<f64>>>,
    },
    /// Mean over rows of KL(teacher row || student row); the teacher is a
    /// constant, so no gradient flows to it.
    Distillation {
        teacher: Rc<DenseMat>,
        student: NodeId,
    },
}

struct Node {
    op: Op,
    value: DenseMat,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by node id.
pub struct Gradients {
    grads: Vec<Option<DenseMat>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the node's value, if the node
    /// is a trainable leaf reached by the backward sweep.
    pub fn of(&self, id: NodeId) -> Option<&DenseMat> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Removes and returns a gradient, handing ownership to an optimizer.
    pub fn take(&mut self, id: NodeId) -> Option<DenseMat> {
        self.grads.get_mut(id).and_then(|g| g.take())
    }
}

/// A growable record of operations, evaluated eagerly on push.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Current value of a node.
    pub fn value(&self, id: NodeId) -> &DenseMat {
        &self.nodes[id].value
    }

    /// Value of a 1x1 node as a plain float.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = &self.nodes[id].value;
        debug_assert_eq!(v.shape(), (1, 1));
        v.get(0, 0)
    }

    fn push(&mut self, op: Op, value: DenseMat, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, value: DenseMat) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Constant leaf: backward never visits it.
    pub fn constant(&mut self, value: DenseMat) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Replaces a leaf's value in place (used between optimizer steps when a
    /// tape is rebuilt instead). Errors when the node is not a leaf or the
    /// shape changes.
    pub fn set_leaf(&mut self, id: NodeId, value: DenseMat) -> Result<()> {
        let node = &mut self.nodes[id];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::contract("set_leaf on a non-leaf node"));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::shape("set_leaf changes the node shape"));
        }
        node.value = value;
        Ok(())
    }

    /// Dense product `a @ b`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a].value.matmul(&self.nodes[b].value)?;
        let rg = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(Op::MatMul { a, b }, value, rg))
    }

    /// Sparse-dense product `s @ d`; `s` is a constant.
    pub fn spmm(&mut self, s: &Rc<SparseMat>, d: NodeId) -> Result<NodeId> {
        let value = s.spmm(&self.nodes[d].value)?;
        let rg = self.needs_grad(d);
        Ok(self.push(Op::Spmm { s: Rc::clone(s), d }, value, rg))
    }

    /// Elementwise `max(0, x)`; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.map(|v| v.max(0.0));
        let rg = self.needs_grad(x);
        self.push(Op::Relu { x }, value, rg)
    }

    /// Row-wise softmax with max-shift stabilization.
    pub fn row_softmax(&mut self, z: NodeId) -> NodeId {
        let value = self.nodes[z].value.row_softmax();
        let rg = self.needs_grad(z);
        self.push(Op::RowSoftmax { z }, value, rg)
    }

    /// Gathers rows of `x` in the order given by `idx`.
    pub fn select_rows(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        for &i in idx {
            if i >= xv.rows() {
                return Err(Error::contract(format!(
                    "select_rows index {i} outside {} rows",
                    xv.rows()
                )));
            }
        }
        let mut value = DenseMat::zeros(idx.len(), xv.cols());
        for (out_i, &src_i) in idx.iter().enumerate() {
            value.row_mut(out_i).copy_from_slice(xv.row(src_i));
        }
        let rg = self.needs_grad(x);
        Ok(self.push(
            Op::SelectRows {
                x,
                idx: Rc::new(idx.to_vec()),
            },
            value,
            rg,
        ))
    }

    /// Sum of every entry, as a 1x1 node.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.nodes[x].value.data().iter().sum();
        let rg = self.needs_grad(x);
        self.push(Op::SumAll { x }, DenseMat::filled(1, 1, total), rg)
    }

    /// Weighted sum of same-shaped nodes: `sum_i w_i * x_i`.
    pub fn add_scaled(&mut self, terms: &[(f64, NodeId)]) -> Result<NodeId> {
        let Some(&(_, first)) = terms.first() else {
            return Err(Error::contract("add_scaled needs at least one term"));
        };
        let shape = self.nodes[first].value.shape();
        let mut value = DenseMat::zeros(shape.0, shape.1);
        for &(w, id) in terms {
            value.axpy(w, &self.nodes[id].value)?;
        }
        let rg = terms.iter().any(|&(_, id)| self.needs_grad(id));
        Ok(self.push(
            Op::AddScaled {
                terms: terms.to_vec(),
            },
            value,
            rg,
        ))
    }

    /// Focal classification loss over probability rows.
    ///
    /// For every row `i` with label `y` the per-class terms
    /// `-alpha[c] * (1 - q)^gamma * ln(max(q, LOG_FLOOR))` are summed, where
    /// `q = probs[i][c]` when `c == y` and `q = 1 - probs[i][c]` otherwise;
    /// the node value is the mean of the row sums. `alpha` is indexed by the
    /// column space of `probs`, so heads with restricted class sets pass
    /// their local weights.
    pub fn focal_loss(
        &mut self,
        probs: NodeId,
        labels: &[usize],
        alpha: &[f64],
        gamma: f64,
    ) -> Result<NodeId> {
        let p = &self.nodes[probs].value;
        self.check_rows_labels(p, labels, alpha.len())?;
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            for (c, &pv) in p.row(i).iter().enumerate() {
                let q = if c == y { pv } else { 1.0 - pv };
                let q = q.max(LOG_FLOOR);
                total += -alpha[c] * (1.0 - q).powf(gamma) * q.ln();
            }
        }
        let value = DenseMat::filled(1, 1, total / labels.len() as f64);
        let rg = self.needs_grad(probs);
        Ok(self.push(
            Op::Focal {
                probs,
                labels: Rc::new(labels.to_vec()),
                alpha: Rc::new(alpha.to_vec()),
                gamma,
            },
            value,
            rg,
        ))
    }

    /// Mean negative log probability of the target class, optionally
    /// weighted per class.
    pub fn cross_entropy(
        &mut self,
        probs: NodeId,
        labels: &[usize],
        weights: Option<&[f64]>,
    ) -> Result<NodeId> {
        let p = &self.nodes[probs].value;
        self.check_rows_labels(p, labels, weights.map_or(p.cols(), <[f64]>::len))?;
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let w = weights.map_or(1.0, |ws| ws[y]);
            total += -w * p.get(i, y).max(LOG_FLOOR).ln();
        }
        let value = DenseMat::filled(1, 1, total / labels.len() as f64);
        let rg = self.needs_grad(probs);
        Ok(self.push(
            Op::CrossEntropy {
                probs,
                labels: Rc::new(labels.to_vec()),
                weights: weights.map(|ws| Rc::new(ws.to_vec())),
            },
            value,
            rg,
        ))
    }

    /// Mean row-wise KL divergence from a constant teacher distribution to
    /// the student's predicted distribution.
    pub fn distillation_loss(
        &mut self,
        teacher: Rc<DenseMat>,
        student: NodeId,
    ) -> Result<NodeId> {
        let s = &self.nodes[student].value;
        if teacher.shape() != s.shape() {
            return Err(Error::shape(format!(
                "distillation teacher {}x{} vs student {}x{}",
                teacher.rows(),
                teacher.cols(),
                s.rows(),
                s.cols()
            )));
        }
        if teacher.rows() == 0 {
            return Err(Error::contract("distillation over zero rows"));
        }
        let mut total = 0.0;
        for i in 0..teacher.rows() {
            for (t, sv) in teacher.row(i).iter().zip(s.row(i)) {
                total += t * (t.max(LOG_FLOOR).ln() - sv.max(LOG_FLOOR).ln());
            }
        }
        let value = DenseMat::filled(1, 1, total / teacher.rows() as f64);
        let rg = self.needs_grad(student);
        Ok(self.push(Op::Distillation { teacher, student }, value, rg))
    }

    fn check_rows_labels(&self, p: &DenseMat, labels: &[usize], n_weights: usize) -> Result<()> {
        if p.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} probability rows vs {} labels",
                p.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::contract("loss over zero rows"));
        }
        if n_weights != p.cols() {
            return Err(Error::shape(format!(
                "{n_weights} class weights vs {} classes",
                p.cols()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= p.cols()) {
            return Err(Error::contract(format!(
                "label {bad} outside {} columns",
                p.cols()
            )));
        }
        Ok(())
    }

    /// Reverse sweep from a scalar loss node. Returns the gradients of every
    /// trainable leaf reached. Errors when the node is not 1x1.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.nodes[loss].value.shape() != (1, 1) {
            return Err(Error::contract(format!(
                "backward from a {}x{} node, expected 1x1",
                self.nodes[loss].value.rows(),
                self.nodes[loss].value.cols()
            )));
        }
        let mut grads: Vec<Option<DenseMat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(DenseMat::filled(1, 1, 1.0));

        for id in (0..=loss).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            match &self.nodes[id].op {
                Op::Leaf => unreachable!(),
                Op::MatMul { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.needs_grad(a) {
                        let da = g.matmul(&self.nodes[b].value.transpose())?;
                        accumulate(&mut grads[a], da)?;
                    }
                    if self.needs_grad(b) {
                        let db = self.nodes[a].value.transpose().matmul(&g)?;
                        accumulate(&mut grads[b], db)?;
                    }
                }
                Op::Spmm { s, d } => {
                    let d = *d;
                    if self.needs_grad(d) {
                        let dd = s.spmm_transpose(&g)?;
                        accumulate(&mut grads[d], dd)?;
                    }
                }
                Op::Relu { x } => {
                    let x = *x;
                    if self.needs_grad(x) {
                        let out = &self.nodes[id].value;
                        let mut dx = g;
                        for (dv, &ov) in dx.data_mut().iter_mut().zip(out.data()) {
                            if ov <= 0.0 {
                                *dv = 0.0;
                            }
                        }
                        accumulate(&mut grads[x], dx)?;
                    }
                }
                Op::RowSoftmax { z } => {
                    let z = *z;
                    if self.needs_grad(z) {
                        let p = &self.nodes[id].value;
                        let mut dz = DenseMat::zeros(p.rows(), p.cols());
                        for i in 0..p.rows() {
                            let p_row = p.row(i);
                            let g_row = g.row(i);
                            let dot: f64 =
                                p_row.iter().zip(g_row).map(|(&pv, &gv)| pv * gv).sum();
                            for ((d, &pv), &gv) in
                                dz.row_mut(i).iter_mut().zip(p_row).zip(g_row)
                            {
                                *d = pv * (gv - dot);
                            }
                        }
                        accumulate(&mut grads[z], dz)?;
                    }
                }
                Op::SelectRows { x, idx } => {
                    let (x, idx) = (*x, Rc::clone(idx));
                    if self.needs_grad(x) {
                        let xv = &self.nodes[x].value;
                        let mut dx = DenseMat::zeros(xv.rows(), xv.cols());
                        for (out_i, &src_i) in idx.iter().enumerate() {
                            let g_row = g.row(out_i);
                            for (d, &gv) in dx.row_mut(src_i).iter_mut().zip(g_row) {
                                *d += gv;
                            }
                        }
                        accumulate(&mut grads[x], dx)?;
                    }
                }
                Op::SumAll { x } => {
                    let x = *x;
                    if self.needs_grad(x) {
                        let shape = self.nodes[x].value.shape();
                        let dx = DenseMat::filled(shape.0, shape.1, g.get(0, 0));
                        accumulate(&mut grads[x], dx)?;
                    }
                }
                Op::AddScaled { terms } => {
                    let terms = terms.clone();
                    for (w, id_in) in terms {
                        if self.needs_grad(id_in) {
                            let mut dx = g.clone();
                            dx.scale(w);
                            accumulate(&mut grads[id_in], dx)?;
                        }
                    }
                }
                Op::Focal {
                    probs,
                    labels,
                    alpha,
                    gamma,
                } => {
                    let (probs, labels, alpha, gamma) =
                        (*probs, Rc::clone(labels), Rc::clone(alpha), *gamma);
                    if self.needs_grad(probs) {
                        let p = &self.nodes[probs].value;
                        let scale = g.get(0, 0) / labels.len() as f64;
                        let mut dp = DenseMat::zeros(p.rows(), p.cols());
                        for (i, &y) in labels.iter().enumerate() {
                            for (c, &pv) in p.row(i).iter().enumerate() {
                                let (q_raw, sign) =
                                    if c == y { (pv, 1.0) } else { (1.0 - pv, -1.0) };
                                if q_raw < LOG_FLOOR {
                                    continue;
                                }
                                let q = q_raw;
                                // d/dq of -alpha (1-q)^gamma ln q. The ln q
                                // factor kills the second term at q == 1,
                                // where (1-q)^(gamma-1) alone would blow up.
                                let dq = if gamma == 0.0 {
                                    -alpha[c] / q
                                } else {
                                    let ln_q = q.ln();
                                    let kink = if ln_q == 0.0 {
                                        0.0
                                    } else {
                                        gamma * (1.0 - q).powf(gamma - 1.0) * ln_q
                                    };
                                    -alpha[c] * ((1.0 - q).powf(gamma) / q - kink)
                                };
                                dp.set(i, c, scale * sign * dq);
                            }
                        }
                        accumulate(&mut grads[probs], dp)?;
                    }
                }
                Op::CrossEntropy {
                    probs,
                    labels,
                    weights,
                } => {
                    let (probs, labels, weights) =
                        (*probs, Rc::clone(labels), weights.clone());
                    if self.needs_grad(probs) {
                        let p = &self.nodes[probs].value;
                        let scale = g.get(0, 0) / labels.len() as f64;
                        let mut dp = DenseMat::zeros(p.rows(), p.cols());
                        for (i, &y) in labels.iter().enumerate() {
                            let pv = p.get(i, y);
                            if pv < LOG_FLOOR {
                                continue;
                            }
                            let w = weights.as_ref().map_or(1.0, |ws| ws[y]);
                            dp.set(i, y, -scale * w / pv);
                        }
                        accumulate(&mut grads[probs], dp)?;
                    }
                }
                Op::Distillation { teacher, student } => {
                    let (teacher, student) = (Rc::clone(teacher), *student);
                    if self.needs_grad(student) {
                        let s = &self.nodes[student].value;
                        let scale = g.get(0, 0) / teacher.rows() as f64;
                        let mut ds = DenseMat::zeros(s.rows(), s.cols());
                        for i in 0..teacher.rows() {
                            for (c, (&t, &sv)) in
                                teacher.row(i).iter().zip(s.row(i)).enumerate()
                            {
                                if sv < LOG_FLOOR {
                                    continue;
                                }
                                ds.set(i, c, -scale * t / sv);
                            }
                        }
                        accumulate(&mut grads[student], ds)?;
                    }
                }
            }
        }

        // Only leaf gradients survive; intermediates were consumed above.
        for (id, slot) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[id].op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<DenseMat>, delta: DenseMat) -> Result<()> {
    match slot {
        Some(g) => g.axpy(1.0, &delta),
        None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}
