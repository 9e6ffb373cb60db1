//! Reverse-mode autodiff on a flat operation tape.
//!
//! A tape records ops in topological order by construction (an op can only
//! reference ids that already exist). `gradients` walks the tape once in
//! reverse, accumulating adjoints.

use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// w: [m, n] matrix, x: [n] vector -> [m]
    MatVec { w: NodeId, x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Tanh { a: NodeId },
    Relu { a: NodeId },
    Exp { a: NodeId },
    Scale { a: NodeId, c: f64 },
    // the constant only shifts the value, so backward never needs it
    AddConst { a: NodeId },
    Sum { a: NodeId },
    SumSquares { a: NodeId },
    Slice { a: NodeId, start: usize },
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let ws = self.value(w).shape().to_vec();
        let xs = self.value(x).shape().to_vec();
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(Error::Shape(format!(
                "matvec: weight {:?} vs input {:?}",
                ws, xs
            )));
        }
        let (m, n) = (ws[0], ws[1]);
        let mut out = vec![0.0; m];
        {
            let wv = self.value(w).values();
            let xv = self.value(x).values();
            for (i, o) in out.iter_mut().enumerate() {
                *o = dot(&wv[i * n..(i + 1) * n], xv);
            }
        }
        Ok(self.push(Op::MatVec { w, x }, Tensor::vector(out)))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let ta = self.value(a);
        let tb = self.value(b);
        if !ta.same_shape(tb) {
            return Err(Error::Shape(format!(
                "elementwise op: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let vals = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Ok(Tensor::new(ta.shape().to_vec(), vals).expect("same shape"))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add { a, b }, v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub { a, b }, v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul { a, b }, v))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let vals = ta.values().iter().map(|x| f(*x)).collect();
        Tensor::new(ta.shape().to_vec(), vals).expect("same shape")
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.unary(a, f64::tanh);
        self.push(Op::Tanh { a }, v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.unary(a, |x| x.max(0.0));
        self.push(Op::Relu { a }, v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.unary(a, f64::exp);
        self.push(Op::Exp { a }, v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.unary(a, |x| c * x);
        self.push(Op::Scale { a, c }, v)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.unary(a, |x| x + c);
        self.push(Op::AddConst { a }, v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).values().iter().sum();
        self.push(Op::Sum { a }, Tensor::scalar(s))
    }

    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).values().iter().map(|x| x * x).sum();
        self.push(Op::SumSquares { a }, Tensor::scalar(s))
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let ta = self.value(a);
        if ta.shape().len() != 1 || start + len > ta.len() {
            return Err(Error::Shape(format!(
                "slice [{}, {}) of vector with shape {:?}",
                start,
                start + len,
                ta.shape()
            )));
        }
        let vals = ta.values()[start..start + len].to_vec();
        Ok(self.push(Op::Slice { a, start }, Tensor::vector(vals)))
    }

    /// Adjoints of `loss` w.r.t. every node; `loss` must be scalar.
    /// Each node is visited exactly once, in reverse tape order.
    pub fn gradients(&self, loss: NodeId) -> Result<Vec<Tensor>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape().to_vec()))
            .collect();
        grads[loss.0].values_mut()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            let g = grads[i].clone();
            if g.values().iter().all(|v| *v == 0.0) {
                continue;
            }
            match self.nodes[i].op {
                Op::Leaf => {}
                Op::MatVec { w, x } => {
                    let ws = self.value(w).shape();
                    let (m, n) = (ws[0], ws[1]);
                    let wv = self.value(w).values().to_vec();
                    let xv = self.value(x).values().to_vec();
                    {
                        let gw = grads[w.0].values_mut();
                        for r in 0..m {
                            for c in 0..n {
                                gw[r * n + c] += g.values()[r] * xv[c];
                            }
                        }
                    }
                    {
                        let gx = grads[x.0].values_mut();
                        for c in 0..n {
                            let mut acc = 0.0;
                            for r in 0..m {
                                acc += wv[r * n + c] * g.values()[r];
                            }
                            gx[c] += acc;
                        }
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, a, g.values(), |_, gi| gi);
                    accumulate(&mut grads, b, g.values(), |_, gi| gi);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, a, g.values(), |_, gi| gi);
                    accumulate(&mut grads, b, g.values(), |_, gi| -gi);
                }
                Op::Mul { a, b } => {
                    let bv = self.value(b).values().to_vec();
                    accumulate_indexed(&mut grads, a, g.values(), |k, gi| gi * bv[k]);
                    let av = self.value(a).values().to_vec();
                    accumulate_indexed(&mut grads, b, g.values(), |k, gi| gi * av[k]);
                }
                Op::Tanh { a } => {
                    let yv = self.nodes[i].value.values().to_vec();
                    accumulate_indexed(&mut grads, a, g.values(), |k, gi| {
                        gi * (1.0 - yv[k] * yv[k])
                    });
                }
                Op::Relu { a } => {
                    let xv = self.value(a).values().to_vec();
                    accumulate_indexed(&mut grads, a, g.values(), |k, gi| {
                        if xv[k] > 0.0 {
                            gi
                        } else {
                            0.0
                        }
                    });
                }
                Op::Exp { a } => {
                    let yv = self.nodes[i].value.values().to_vec();
                    accumulate_indexed(&mut grads, a, g.values(), |k, gi| gi * yv[k]);
                }
                Op::Scale { a, c } => {
                    accumulate(&mut grads, a, g.values(), move |_, gi| c * gi);
                }
                Op::AddConst { a } => {
                    accumulate(&mut grads, a, g.values(), |_, gi| gi);
                }
                Op::Sum { a } => {
                    let gs = g.values()[0];
                    for v in grads[a.0].values_mut() {
                        *v += gs;
                    }
                }
                Op::SumSquares { a } => {
                    let gs = g.values()[0];
                    let xv = self.value(a).values().to_vec();
                    let ga = grads[a.0].values_mut();
                    for (k, v) in ga.iter_mut().enumerate() {
                        *v += gs * 2.0 * xv[k];
                    }
                }
                Op::Slice { a, start } => {
                    let ga = grads[a.0].values_mut();
                    for (k, gi) in g.values().iter().enumerate() {
                        ga[start + k] += gi;
                    }
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(grads: &mut [Tensor], target: NodeId, g: &[f64], f: impl Fn(usize, f64) -> f64) {
    accumulate_indexed(grads, target, g, f)
}

fn accumulate_indexed(
    grads: &mut [Tensor],
    target: NodeId,
    g: &[f64],
    f: impl Fn(usize, f64) -> f64,
) {
    let gt = grads[target.0].values_mut();
    for (k, gi) in g.iter().enumerate() {
        gt[k] += f(k, *gi);
    }
}
