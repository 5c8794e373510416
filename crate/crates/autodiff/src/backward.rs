//! Reverse-mode gradient propagation.
//!
//! Every vector-Jacobian product is itself expressed with graph primitives.
//! With `create_graph` the rules read the live parent nodes, so the returned
//! gradients stay differentiable. Without it the rules read detached copies
//! of the parent values and the results are constants.

use std::rc::Rc;

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

impl Graph {
    /// Gradients of a single-element `output` with respect to each of `wrt`.
    ///
    /// Nodes that do not influence `output` get a zero tensor of their shape.
    pub fn backward<'g>(
        &'g self,
        output: Var<'g>,
        wrt: &[Var<'g>],
        create_graph: bool,
    ) -> Result<Vec<Var<'g>>> {
        let out_shape = output.shape();
        if out_shape.iter().product::<usize>() != 1 {
            return Err(AutodiffError::NonScalarOutput(out_shape));
        }
        for w in wrt {
            if !std::ptr::eq(self, w.graph) {
                return Err(AutodiffError::ForeignNode);
            }
        }

        let top = output.id;
        let mut needed = vec![false; top + 1];
        for w in wrt {
            if w.id <= top {
                needed[w.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for id in 0..=top {
                if !needed[id] {
                    needed[id] = nodes[id].op.parents().iter().any(|&p| needed[p]);
                }
            }
        }

        let mut grads: Vec<Option<Var<'g>>> = vec![None; top + 1];
        if needed[top] {
            grads[top] = Some(self.constant(Tensor::ones(&out_shape)));
        }

        for id in (0..=top).rev() {
            let Some(g) = grads[id] else { continue };
            let (op, value) = {
                let nodes = self.nodes.borrow();
                (nodes[id].op.clone(), nodes[id].value.clone())
            };
            if matches!(op, Op::Leaf | Op::Constant) {
                continue;
            }
            let input = |pid: usize| -> Var<'g> {
                if create_graph {
                    Var { graph: self, id: pid }
                } else {
                    let v = self.nodes.borrow()[pid].value.clone();
                    self.constant_rc(v)
                }
            };
            let this = || -> Var<'g> {
                if create_graph {
                    Var { graph: self, id }
                } else {
                    self.constant_rc(value.clone())
                }
            };
            let parent_value = |pid: usize| -> Rc<Tensor> { self.nodes.borrow()[pid].value.clone() };

            let op_name = op.name();
            let contributions: Vec<(usize, Var<'g>)> = match op {
                Op::Leaf | Op::Constant => unreachable!(),
                Op::Add(a, b) => vec![(a, g), (b, g)],
                Op::Sub(a, b) => {
                    let mut c = vec![(a, g)];
                    if needed[b] {
                        c.push((b, g.neg()));
                    }
                    c
                }
                Op::Mul(a, b) => {
                    let mut c = Vec::with_capacity(2);
                    if needed[a] {
                        c.push((a, g.mul(input(b))?));
                    }
                    if needed[b] {
                        c.push((b, g.mul(input(a))?));
                    }
                    c
                }
                Op::AddRow(a, b) => {
                    let mut c = vec![(a, g)];
                    if needed[b] {
                        c.push((b, g.sum_rows()?));
                    }
                    c
                }
                Op::ScaleShift(a, s, _) => vec![(a, g.scale(s))],
                Op::MatMul(a, b) => {
                    let mut c = Vec::with_capacity(2);
                    if needed[a] {
                        c.push((a, g.matmul(input(b).transpose()?)?));
                    }
                    if needed[b] {
                        c.push((b, input(a).transpose()?.matmul(g)?));
                    }
                    c
                }
                Op::Transpose(a) => vec![(a, g.transpose()?)],
                Op::Relu(a) => {
                    let mask = parent_value(a).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    vec![(a, g.mul(self.constant(mask))?)]
                }
                Op::Tanh(a) => {
                    let d = this().square().scale_shift(-1.0, 1.0);
                    vec![(a, g.mul(d)?)]
                }
                Op::Sigmoid(a) => {
                    let y = this();
                    let d = y.mul(y.scale_shift(-1.0, 1.0))?;
                    vec![(a, g.mul(d)?)]
                }
                Op::Softplus(a) => vec![(a, g.mul(input(a).sigmoid())?)],
                Op::Log(a) => vec![(a, g.mul(input(a).recip())?)],
                Op::Exp(a) => vec![(a, g.mul(this())?)],
                Op::Square(a) => vec![(a, g.mul(input(a).scale(2.0))?)],
                Op::Recip(a) => vec![(a, g.mul(this().square().neg())?)],
                Op::Abs(a) => {
                    let sign = parent_value(a).map(|v| {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    vec![(a, g.mul(self.constant(sign))?)]
                }
                Op::Minimum(a, b) => {
                    let va = parent_value(a);
                    let vb = parent_value(b);
                    let mask_a = va.zip_map(&vb, "minimum", |x, y| if x <= y { 1.0 } else { 0.0 })?;
                    let mask_b = mask_a.map(|m| 1.0 - m);
                    let mut c = Vec::with_capacity(2);
                    if needed[a] {
                        c.push((a, g.mul(self.constant(mask_a))?));
                    }
                    if needed[b] {
                        c.push((b, g.mul(self.constant(mask_b))?));
                    }
                    c
                }
                Op::Clamp(a, lo, hi) => {
                    let mask = parent_value(a).map(|v| if (lo..=hi).contains(&v) { 1.0 } else { 0.0 });
                    vec![(a, g.mul(self.constant(mask))?)]
                }
                Op::Sum(a) => vec![(a, g.fill(parent_value(a).shape())?)],
                Op::Mean(a) => {
                    let pv = parent_value(a);
                    let n = pv.numel() as f64;
                    vec![(a, g.scale(1.0 / n).fill(pv.shape())?)]
                }
                Op::Fill(a) => vec![(a, g.sum())],
                Op::SumRows(a) => {
                    let n = parent_value(a).rows();
                    vec![(a, g.broadcast_rows(n)?)]
                }
                Op::BroadcastRows(a) => vec![(a, g.sum_rows()?)],
                Op::SumCols(a) => {
                    let d = parent_value(a).cols();
                    vec![(a, g.broadcast_cols(d)?)]
                }
                Op::BroadcastCols(a) => vec![(a, g.sum_cols()?)],
                Op::ConcatCols(parts) => {
                    let mut c = Vec::with_capacity(parts.len());
                    let mut offset = 0;
                    for p in parts {
                        let w = parent_value(p).cols();
                        if needed[p] {
                            c.push((p, g.slice_cols(offset, w)?));
                        }
                        offset += w;
                    }
                    c
                }
                Op::SliceCols(a, start) => {
                    let pv = parent_value(a);
                    let (n, d) = (pv.rows(), pv.cols());
                    let len = value.cols();
                    let mut pieces = Vec::with_capacity(3);
                    if start > 0 {
                        pieces.push(self.constant(Tensor::zeros(&[n, start])));
                    }
                    pieces.push(g);
                    if start + len < d {
                        pieces.push(self.constant(Tensor::zeros(&[n, d - start - len])));
                    }
                    vec![(a, self.concat_cols(&pieces)?)]
                }
            };

            for (pid, contrib) in contributions {
                if !needed[pid] {
                    continue;
                }
                if contrib.value().has_nan() {
                    return Err(AutodiffError::NanGradient {
                        op: op_name,
                        node: id,
                    });
                }
                grads[pid] = Some(match grads[pid] {
                    None => contrib,
                    Some(prev) => prev.add(contrib)?,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => g,
                None => self.constant(Tensor::zeros(&w.shape())),
            })
            .collect())
    }

    /// Value of `backward` without graph construction, as plain tensors.
    pub fn gradients<'g>(&'g self, output: Var<'g>, wrt: &[Var<'g>]) -> Result<Vec<Tensor>> {
        Ok(self
            .backward(output, wrt, false)?
            .into_iter()
            .map(|g| g.value().as_ref().clone())
            .collect())
    }
}
