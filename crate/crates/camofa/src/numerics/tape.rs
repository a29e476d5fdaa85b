//! Reverse-mode differentiation on a per-forward-pass tape.
//!
//! A [`Tape`] records every differentiable operation in execution order;
//! [`Tape::backward`] replays them in exact reverse order, accumulating
//! gradients into each node. Leaves are inserted with [`Tape::leaf`] and
//! their gradients read back with [`Tape::grad`] after the backward pass.
//!
//! A tape is single-use: running backward a second time without
//! re-recording is an error. Tapes are not `Send`; build one per thread.

use std::cell::RefCell;
use std::rc::Rc;

use super::ops::{self, Activation, LossKind};
use super::tensor::{Element, Tensor};
use super::NumericsError;

/// Gradient function of one node: maps the output cotangent to one
/// cotangent per parent, in parent order.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Tensor<T>>>;

struct Node<T: Element> {
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

struct TapeInner<T: Element> {
    values: Vec<Rc<Tensor<T>>>,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
}

/// Recording tape for one forward/backward cycle.
pub struct Tape<T: Element> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Element> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                values: Vec::new(),
                nodes: Vec::new(),
                grads: Vec::new(),
                consumed: false,
            })),
        }
    }

    /// Inserts a tensor as a leaf (no parents). Gradients still accumulate
    /// into it, so leaves are how parameters and inputs join the graph.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        self.push(Rc::new(value), Vec::new(), None)
    }

    pub(crate) fn push(
        &self,
        value: Rc<Tensor<T>>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
    ) -> Var<T> {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.values.len();
        inner.values.push(value);
        inner.nodes.push(Node { parents, backward });
        Var {
            tape: self.clone(),
            idx,
        }
    }

    /// Registers an externally computed differentiable operation.
    ///
    /// `backward` receives the output cotangent and must return one
    /// cotangent per entry of `parents`, in order.
    pub(crate) fn custom(
        &self,
        parents: &[&Var<T>],
        value: Tensor<T>,
        backward: BackwardFn<T>,
    ) -> Var<T> {
        for p in parents {
            assert!(
                Rc::ptr_eq(&self.inner, &p.tape.inner),
                "custom op parents must live on the same tape"
            );
        }
        self.push(
            Rc::new(value),
            parents.iter().map(|p| p.idx).collect(),
            Some(backward),
        )
    }

    /// Reverse pass from a scalar loss recorded on this tape.
    pub fn backward(&self, loss: &Var<T>) -> Result<(), NumericsError> {
        if !Rc::ptr_eq(&self.inner, &loss.tape.inner) {
            return Err(NumericsError::NotOnTape);
        }
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(NumericsError::TapeConsumed);
        }
        if inner.values[loss.idx].numel() != 1 {
            return Err(NumericsError::Dimension {
                op: "backward",
                detail: format!(
                    "loss must be a scalar, got shape {:?}",
                    inner.values[loss.idx].shape()
                ),
            });
        }
        inner.consumed = true;
        inner.grads = vec![None; inner.values.len()];
        let seed_shape = inner.values[loss.idx].shape().to_vec();
        inner.grads[loss.idx] = Some(Tensor::ones(&seed_shape));

        let TapeInner { nodes, grads, .. } = &mut *inner;
        for idx in (0..nodes.len()).rev() {
            let g = match &grads[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            if let Some(f) = &nodes[idx].backward {
                let parent_grads = f(&g);
                debug_assert_eq!(parent_grads.len(), nodes[idx].parents.len());
                for (&p, pg) in nodes[idx].parents.iter().zip(parent_grads) {
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&pg),
                        slot => *slot = Some(pg),
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a node after [`Tape::backward`]. Nodes that
    /// did not contribute to the loss report an all-zero gradient.
    pub fn grad(&self, var: &Var<T>) -> Tensor<T> {
        let inner = self.inner.borrow();
        assert!(
            inner.consumed,
            "grad() requires a completed backward pass on this tape"
        );
        match &inner.grads[var.idx] {
            Some(g) => g.clone(),
            None => Tensor::zeros(inner.values[var.idx].shape()),
        }
    }

    /// Number of recorded nodes; used by tests.
    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Handle to one tape node; cloning is cheap.
pub struct Var<T: Element> {
    tape: Tape<T>,
    idx: usize,
}

impl<T: Element> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var {
            tape: self.tape.clone(),
            idx: self.idx,
        }
    }
}

impl<T: Element> Var<T> {
    pub fn value(&self) -> Tensor<T> {
        (*self.value_rc()).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_rc().shape().to_vec()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> T {
        self.value_rc().item()
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    fn value_rc(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.tape.inner.borrow().values[self.idx])
    }

    fn same_tape(&self, other: &Var<T>, op: &str) {
        assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "{op}: operands must share a tape"
        );
    }

    /// Re-enters the current value as a fresh leaf, severing gradient flow.
    pub fn detach(&self) -> Var<T> {
        self.tape.leaf(self.value())
    }

    pub fn add(&self, rhs: &Var<T>) -> Result<Var<T>, NumericsError> {
        self.same_tape(rhs, "add");
        let out = self.value_rc().add(&rhs.value_rc())?;
        Ok(self.tape.push(
            Rc::new(out),
            vec![self.idx, rhs.idx],
            Some(Box::new(|g: &Tensor<T>| vec![g.clone(), g.clone()])),
        ))
    }

    pub fn sub(&self, rhs: &Var<T>) -> Result<Var<T>, NumericsError> {
        self.same_tape(rhs, "sub");
        let out = self.value_rc().sub(&rhs.value_rc())?;
        Ok(self.tape.push(
            Rc::new(out),
            vec![self.idx, rhs.idx],
            Some(Box::new(|g: &Tensor<T>| {
                vec![g.clone(), g.scale(-T::one())]
            })),
        ))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, rhs: &Var<T>) -> Result<Var<T>, NumericsError> {
        self.same_tape(rhs, "mul");
        let a = self.value_rc();
        let b = rhs.value_rc();
        let out = a.mul(&b)?;
        Ok(self.tape.push(
            Rc::new(out),
            vec![self.idx, rhs.idx],
            Some(Box::new(move |g: &Tensor<T>| {
                vec![g.mul(&b).expect("shape"), g.mul(&a).expect("shape")]
            })),
        ))
    }

    pub fn scale(&self, c: T) -> Var<T> {
        let out = self.value_rc().scale(c);
        self.tape.push(
            Rc::new(out),
            vec![self.idx],
            Some(Box::new(move |g: &Tensor<T>| vec![g.scale(c)])),
        )
    }

    pub fn add_const(&self, c: T) -> Var<T> {
        let out = self.value_rc().map(|v| v + c);
        self.tape.push(
            Rc::new(out),
            vec![self.idx],
            Some(Box::new(|g: &Tensor<T>| vec![g.clone()])),
        )
    }

    /// Elementwise square root; the input must be nonnegative.
    pub fn sqrt(&self) -> Var<T> {
        let out = Rc::new(self.value_rc().map(|v| v.sqrt()));
        let out_c = Rc::clone(&out);
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g: &Tensor<T>| {
                let half = T::from_f64(0.5);
                vec![g
                    .zip_map(&out_c, |gv, y| gv * half / y)
                    .expect("shape")]
            })),
        )
    }

    pub fn matmul(&self, rhs: &Var<T>) -> Result<Var<T>, NumericsError> {
        self.same_tape(rhs, "matmul");
        let a = self.value_rc();
        let b = rhs.value_rc();
        let out = ops::matmul(&a, &b)?;
        Ok(self.tape.push(
            Rc::new(out),
            vec![self.idx, rhs.idx],
            Some(Box::new(move |g: &Tensor<T>| {
                let bt = ops::transpose2(&b).expect("rank 2");
                let at = ops::transpose2(&a).expect("rank 2");
                vec![
                    ops::matmul(g, &bt).expect("shape"),
                    ops::matmul(&at, g).expect("shape"),
                ]
            })),
        ))
    }

    pub fn transpose2(&self) -> Result<Var<T>, NumericsError> {
        let out = ops::transpose2(&self.value_rc())?;
        Ok(self.tape.push(
            Rc::new(out),
            vec![self.idx],
            Some(Box::new(|g: &Tensor<T>| {
                vec![ops::transpose2(g).expect("rank 2")]
            })),
        ))
    }

    pub fn conv2d(&self, w: &Var<T>, stride: usize, pad: usize) -> Result<Var<T>, NumericsError> {
        self.same_tape(w, "conv2d");
        let x = self.value_rc();
        let wt = w.value_rc();
        let out = ops::conv2d(&x, &wt, stride, pad)?;
        let (in_h, in_w, k) = (x.shape()[1], x.shape()[2], wt.shape()[2]);
        Ok(self.tape.push(
            Rc::new(out),
            vec![self.idx, w.idx],
            Some(Box::new(move |g: &Tensor<T>| {
                vec![
                    ops::conv2d_input_grad(g, &wt, stride, pad, in_h, in_w).expect("shape"),
                    ops::conv2d_weight_grad(&x, g, stride, pad, k).expect("shape"),
                ]
            })),
        ))
    }

    pub fn conv2d_transpose(
        &self,
        w: &Var<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<T>, NumericsError> {
        self.same_tape(w, "conv2d_transpose");
        let x = self.value_rc();
        let wt = w.value_rc();
        let out = ops::conv2d_transpose(&x, &wt, stride, pad)?;
        let k = wt.shape()[2];
        Ok(self.tape.push(
            Rc::new(out),
            vec![self.idx, w.idx],
            Some(Box::new(move |g: &Tensor<T>| {
                vec![
                    ops::conv2d(g, &wt, stride, pad).expect("shape"),
                    ops::conv2d_weight_grad(g, &x, stride, pad, k).expect("shape"),
                ]
            })),
        ))
    }

    pub fn add_channel_bias(&self, b: &Var<T>) -> Result<Var<T>, NumericsError> {
        self.same_tape(b, "add_channel_bias");
        let out = ops::add_channel_bias(&self.value_rc(), &b.value_rc())?;
        let shape = out.shape().to_vec();
        Ok(self.tape.push(
            Rc::new(out),
            vec![self.idx, b.idx],
            Some(Box::new(move |g: &Tensor<T>| {
                let (c, hw) = (shape[0], shape[1] * shape[2]);
                let mut gb = Tensor::zeros(&[c]);
                for ci in 0..c {
                    let s = g.data()[ci * hw..(ci + 1) * hw]
                        .iter()
                        .fold(T::zero(), |acc, &v| acc + v);
                    gb.data_mut()[ci] = s;
                }
                vec![g.clone(), gb]
            })),
        ))
    }

    pub fn activation(&self, kind: Activation) -> Var<T> {
        let x = self.value_rc();
        let out = Rc::new(ops::activation(&x, kind));
        let y = Rc::clone(&out);
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g: &Tensor<T>| {
                let data = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y.data()))
                    .map(|(&gv, (&xv, &yv))| gv * ops::activation_grad(kind, xv, yv))
                    .collect();
                vec![Tensor::from_vec(g.shape(), data).expect("shape")]
            })),
        )
    }

    pub fn softmax_rows(&self) -> Result<Var<T>, NumericsError> {
        let out = Rc::new(ops::softmax_rows(&self.value_rc())?);
        let y = Rc::clone(&out);
        Ok(self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g: &Tensor<T>| {
                let (n, m) = (y.shape()[0], y.shape()[1]);
                let mut gx = Tensor::zeros(&[n, m]);
                for i in 0..n {
                    let yrow = &y.data()[i * m..(i + 1) * m];
                    let grow = &g.data()[i * m..(i + 1) * m];
                    let inner = yrow
                        .iter()
                        .zip(grow)
                        .fold(T::zero(), |acc, (&yv, &gv)| acc + yv * gv);
                    for j in 0..m {
                        gx.data_mut()[i * m + j] = yrow[j] * (grow[j] - inner);
                    }
                }
                vec![gx]
            })),
        ))
    }

    /// Mean over all elements, as a `[1]` scalar.
    pub fn mean_all(&self) -> Var<T> {
        let x = self.value_rc();
        let n = x.numel();
        let mean = x.sum() / T::from_f64(n as f64);
        let shape = x.shape().to_vec();
        self.tape.push(
            Rc::new(Tensor::scalar(mean)),
            vec![self.idx],
            Some(Box::new(move |g: &Tensor<T>| {
                let gv = g.item() / T::from_f64(n as f64);
                vec![Tensor::full(&shape, gv)]
            })),
        )
    }

    /// Broadcast-subtracts a `[1]` scalar node from every element.
    pub fn sub_scalar(&self, s: &Var<T>) -> Result<Var<T>, NumericsError> {
        self.same_tape(s, "sub_scalar");
        let sv = s.value_rc();
        if sv.numel() != 1 {
            return Err(NumericsError::Dimension {
                op: "sub_scalar",
                detail: format!("scalar operand has shape {:?}", sv.shape()),
            });
        }
        let c = sv.item();
        let out = self.value_rc().map(|v| v - c);
        Ok(self.tape.push(
            Rc::new(out),
            vec![self.idx, s.idx],
            Some(Box::new(|g: &Tensor<T>| {
                vec![g.clone(), Tensor::scalar(-g.sum())]
            })),
        ))
    }

    /// Broadcast-divides every element by a `[1]` scalar node.
    pub fn div_scalar(&self, s: &Var<T>) -> Result<Var<T>, NumericsError> {
        self.same_tape(s, "div_scalar");
        let sv = s.value_rc();
        if sv.numel() != 1 {
            return Err(NumericsError::Dimension {
                op: "div_scalar",
                detail: format!("scalar operand has shape {:?}", sv.shape()),
            });
        }
        let x = self.value_rc();
        let c = sv.item();
        let out = x.map(|v| v / c);
        Ok(self.tape.push(
            Rc::new(out),
            vec![self.idx, s.idx],
            Some(Box::new(move |g: &Tensor<T>| {
                let gx = g.scale(T::one() / c);
                let gs = -g.dot(&x) / (c * c);
                vec![gx, Tensor::scalar(gs)]
            })),
        ))
    }

    /// Clamp to `[0, 1]` with the exact subgradient: the cotangent passes
    /// where the input lies inside the interval and is zeroed outside.
    pub fn clamp01(&self) -> Var<T> {
        let x = self.value_rc();
        let out = x.map(|v| v.max(T::zero()).min(T::one()));
        self.tape.push(
            Rc::new(out),
            vec![self.idx],
            Some(Box::new(move |g: &Tensor<T>| {
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| {
                        if xv >= T::zero() && xv <= T::one() {
                            gv
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                vec![Tensor::from_vec(g.shape(), data).expect("shape")]
            })),
        )
    }

    /// Concatenates two `[C, H, W]` tensors along the channel axis.
    pub fn concat_channels(&self, rhs: &Var<T>) -> Result<Var<T>, NumericsError> {
        self.same_tape(rhs, "concat_channels");
        let a = self.value_rc();
        let b = rhs.value_rc();
        let ([ca, h, w], [cb, hb, wb]) = match (a.shape(), b.shape()) {
            ([ca, h, w], [cb, hb, wb]) => ([*ca, *h, *w], [*cb, *hb, *wb]),
            _ => {
                return Err(NumericsError::Dimension {
                    op: "concat_channels",
                    detail: format!("need [C, H, W] inputs, got {:?} and {:?}", a.shape(), b.shape()),
                })
            }
        };
        if h != hb || w != wb {
            return Err(NumericsError::ShapeMismatch {
                op: "concat_channels",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity((ca + cb) * h * w);
        data.extend_from_slice(a.data());
        data.extend_from_slice(b.data());
        let out = Tensor::from_vec(&[ca + cb, h, w], data)?;
        let split = ca * h * w;
        Ok(self.tape.push(
            Rc::new(out),
            vec![self.idx, rhs.idx],
            Some(Box::new(move |g: &Tensor<T>| {
                let ga = Tensor::from_vec(&[ca, h, w], g.data()[..split].to_vec()).expect("shape");
                let gb =
                    Tensor::from_vec(&[cb, h, w], g.data()[split..].to_vec()).expect("shape");
                vec![ga, gb]
            })),
        ))
    }

    /// Gather: `out[i] = in[map[i]]`. The backward pass scatter-adds, so
    /// duplicate indices are handled correctly.
    pub fn gather(&self, map: Rc<Vec<usize>>, out_shape: &[usize]) -> Var<T> {
        let x = self.value_rc();
        let data: Vec<T> = map.iter().map(|&i| x.data()[i]).collect();
        let out = Tensor::from_vec(out_shape, data).expect("map length matches out shape");
        let in_shape = x.shape().to_vec();
        self.tape.push(
            Rc::new(out),
            vec![self.idx],
            Some(Box::new(move |g: &Tensor<T>| {
                let mut gx = Tensor::zeros(&in_shape);
                for (o, &src) in map.iter().enumerate() {
                    gx.data_mut()[src] = gx.data_mut()[src] + g.data()[o];
                }
                vec![gx]
            })),
        )
    }

    /// Mean loss against a target node; see [`ops::reduce_loss`].
    pub fn loss(&self, target: &Var<T>, kind: LossKind) -> Result<Var<T>, NumericsError> {
        self.same_tape(target, "loss");
        let pred = self.value_rc();
        let tgt = target.value_rc();
        let value = ops::reduce_loss(&pred, &tgt, kind)?;
        Ok(self.tape.push(
            Rc::new(Tensor::scalar(value)),
            vec![self.idx, target.idx],
            Some(Box::new(move |g: &Tensor<T>| {
                let gs = g.item();
                let gp = ops::loss_pred_grad(&pred, &tgt, kind).scale(gs);
                // Gradient with respect to the target, for completeness.
                let n = T::from_f64(pred.numel() as f64);
                let gt_data: Vec<T> = pred
                    .data()
                    .iter()
                    .zip(tgt.data())
                    .map(|(&p, &t)| {
                        let d = match kind {
                            LossKind::L1Mean => {
                                if p > t {
                                    -T::one()
                                } else if p < t {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            LossKind::MseMean => -((p - t) + (p - t)),
                            LossKind::BceLogitsMean => -p,
                        };
                        d / n * gs
                    })
                    .collect();
                let gt = Tensor::from_vec(tgt.shape(), gt_data).expect("shape");
                vec![gp, gt]
            })),
        ))
    }
}
