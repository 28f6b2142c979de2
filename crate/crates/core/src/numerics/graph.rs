//! Reverse-mode automatic differentiation on a tape of executed ops.
//!
//! Every op records its output value and, when any input requires gradients,
//! a backward closure. [`Graph::backward`] walks the tape in reverse creation
//! order (which is a topological order by construction), visiting each node
//! at most once. A graph is consumed by its backward pass; training code
//! builds a fresh graph per step.

use thiserror::Error;

use super::flops::{self, OpCategory};
use super::tensor::{Real, Tensor};
use crate::parallel;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("graph already consumed by a backward pass; rebuild before calling backward again")]
    StaleGraph,
    #[error("gradient missing for parameter '{0}'; run backward first")]
    MissingGradient(String),
    #[error("non-finite values produced by op '{op}' (node {node})")]
    NonFinite { op: &'static str, node: usize },
}

type Result<V> = std::result::Result<V, GraphError>;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Boundary handling for [`Graph::conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding; output matches input extent.
    Same,
    /// No padding; output shrinks by the kernel extent minus one.
    Valid,
}

type BackwardFn<T> = Box<dyn FnOnce(&mut Graph<T>)>;

struct Node<T: Real> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
    op: &'static str,
}

/// Tape of differentiable operations over [`Tensor`] values.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf value. Gradients are accumulated for it when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, None, "leaf")
    }

    /// Inserts a non-differentiable constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated for `v`, available after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Name of the op that produced `v` plus the largest activation
    /// magnitude, for numerical-failure diagnostics.
    pub fn describe(&self, v: Var) -> (&'static str, f64) {
        (self.nodes[v.0].op, self.nodes[v.0].value.max_abs())
    }

    /// Largest activation magnitude per node, in execution order. Used to
    /// report where a forward pass went non-finite.
    pub fn activation_report(&self, top: usize) -> String {
        let mut rows: Vec<(usize, &'static str, f64)> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (i, n.op, n.value.max_abs()))
            .collect();
        rows.sort_by(|a, b| b.2.total_cmp(&a.2));
        rows.truncate(top);
        rows.iter()
            .map(|(i, op, m)| format!("node {i} ({op}): max|x| = {m:.3e}"))
            .collect::<Vec<_>>()
            .join("; ")
    }

    fn push(
        &mut self,
        value: Tensor<T>,
        requires_grad: bool,
        backward: Option<BackwardFn<T>>,
        op: &'static str,
    ) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite values produced by op '{}' (node {})",
            op,
            self.nodes.len()
        );
        self.nodes.push(Node { value, grad: None, requires_grad, backward, op });
        Var(self.nodes.len() - 1)
    }

    fn any_requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Clone of the upstream gradient of `v` (panics if absent; only called
    /// from backward closures of nodes known to hold one).
    fn grad_of(&self, v: Var) -> Tensor<T> {
        self.nodes[v.0].grad.clone().expect("upstream gradient present")
    }

    fn accumulate(&mut self, v: Var, delta: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(self.nodes[v.0].value.shape(), delta.shape());
        match &mut self.nodes[v.0].grad {
            Some(g) => {
                for (gi, di) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gi = *gi + *di;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Runs the backward pass from a scalar loss. Every `requires_grad` leaf
    /// reachable from `loss` ends up holding its gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(GraphError::StaleGraph);
        }
        let shape = self.nodes[loss.0].value.shape();
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(GraphError::NonScalarLoss(shape.to_vec()));
        }
        self.consumed = true;
        let seed = Tensor::from_vec(shape, vec![T::one()]);
        self.nodes[loss.0].grad = Some(seed);
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() {
                continue;
            }
            if let Some(f) = self.nodes[i].backward.take() {
                f(self);
            }
        }
        Ok(())
    }

    /// True once a backward pass has consumed this graph.
    pub fn consumed(&self) -> bool {
        self.consumed
    }

    // ---- elementwise and structural ops ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = zip_new(self.value(a), self.value(b), |x, y| x + y);
        flops::credit(OpCategory::Other, value.len() as u64);
        let requires = self.any_requires(&[a, b]);
        let out = self.push(value, requires, None, "add");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            g.accumulate(a, up.clone());
            g.accumulate(b, up);
        });
        Ok(out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = zip_new(self.value(a), self.value(b), |x, y| x - y);
        flops::credit(OpCategory::Other, value.len() as u64);
        let requires = self.any_requires(&[a, b]);
        let out = self.push(value, requires, None, "sub");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            g.accumulate(a, up.clone());
            g.accumulate(b, up.map(|v| -v));
        });
        Ok(out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = zip_new(self.value(a), self.value(b), |x, y| x * y);
        flops::credit(OpCategory::Other, value.len() as u64);
        let requires = self.any_requires(&[a, b]);
        let out = self.push(value, requires, None, "mul");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let da = zip_new(&up, g.value(b), |u, y| u * y);
            let db = zip_new(&up, g.value(a), |u, x| u * x);
            g.accumulate(a, da);
            g.accumulate(b, db);
        });
        Ok(out)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x * c);
        flops::credit(OpCategory::Other, value.len() as u64);
        let requires = self.any_requires(&[a]);
        let out = self.push(value, requires, None, "scale");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            g.accumulate(a, up.map(|u| u * c));
        });
        out
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x + c);
        flops::credit(OpCategory::Other, value.len() as u64);
        let requires = self.any_requires(&[a]);
        let out = self.push(value, requires, None, "add_scalar");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            g.accumulate(a, up);
        });
        out
    }

    /// GELU with the tanh approximation; the derivative is exact for the
    /// approximated function, which is what gradient checks compare against.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu_fwd);
        flops::credit(OpCategory::Other, value.len() as u64);
        let requires = self.any_requires(&[a]);
        let out = self.push(value, requires, None, "gelu");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let da = zip_new(&up, g.value(a), |u, x| u * gelu_grad(x));
            g.accumulate(a, da);
        });
        out
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: T = self.value(a).data().iter().copied().sum();
        flops::credit(OpCategory::Other, self.value(a).len() as u64);
        let requires = self.any_requires(&[a]);
        let out = self.push(Tensor::scalar(total), requires, None, "sum");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let u = g.grad_of(out).item();
            let shape = g.value(a).shape().to_vec();
            g.accumulate(a, Tensor::full(&shape, u));
        });
        out
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, T::from_f64(1.0 / n as f64))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let len: usize = shape.iter().product();
        if len != self.value(a).len() {
            return Err(GraphError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.value(a).shape(), shape),
            });
        }
        let value = self.value(a).clone().reshaped(shape);
        let requires = self.any_requires(&[a]);
        let out = self.push(value, requires, None, "reshape");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let shape = g.value(a).shape().to_vec();
            g.accumulate(a, up.reshaped(&shape));
        });
        Ok(out)
    }

    /// Rows `start..start+len` of a rank-2 tensor.
    pub fn narrow_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.rank2("narrow_rows", a)?;
        if start + len > r {
            return Err(GraphError::InvalidArgument {
                op: "narrow_rows",
                detail: format!("rows {start}..{} of {r}", start + len),
            });
        }
        let src = self.value(a);
        let value =
            Tensor::from_vec(&[len, c], src.data()[start * c..(start + len) * c].to_vec());
        let requires = self.any_requires(&[a]);
        let out = self.push(value, requires, None, "narrow_rows");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut da = Tensor::zeros(&[r, c]);
            da.data_mut()[start * c..(start + len) * c].copy_from_slice(up.data());
            g.accumulate(a, da);
        });
        Ok(out)
    }

    /// Columns `start..start+len` of a rank-2 tensor.
    pub fn narrow_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.rank2("narrow_cols", a)?;
        if start + len > c {
            return Err(GraphError::InvalidArgument {
                op: "narrow_cols",
                detail: format!("cols {start}..{} of {c}", start + len),
            });
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let value = Tensor::from_vec(&[r, len], data);
        let requires = self.any_requires(&[a]);
        let out = self.push(value, requires, None, "narrow_cols");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut da = Tensor::zeros(&[r, c]);
            for i in 0..r {
                da.data_mut()[i * c + start..i * c + start + len]
                    .copy_from_slice(&up.data()[i * len..(i + 1) * len]);
            }
            g.accumulate(a, da);
        });
        Ok(out)
    }

    /// Concatenates rank-2 tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(GraphError::InvalidArgument {
                op: "concat_cols",
                detail: "no inputs".into(),
            });
        }
        let (r, _) = self.rank2("concat_cols", parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (rp, cp) = self.rank2("concat_cols", p)?;
            if rp != r {
                return Err(GraphError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts differ: {r} vs {rp}"),
                });
            }
            widths.push(cp);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![T::zero(); r * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..r {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let requires = self.any_requires(parts);
        let out = self.push(Tensor::from_vec(&[r, total], data), requires, None, "concat_cols");
        let parts = parts.to_vec();
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut offset = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                let mut dp = Tensor::zeros(&[r, w]);
                for i in 0..r {
                    dp.data_mut()[i * w..(i + 1) * w]
                        .copy_from_slice(&up.data()[i * total + offset..i * total + offset + w]);
                }
                g.accumulate(p, dp);
                offset += w;
            }
        });
        Ok(out)
    }

    /// Concatenates rank-2 tensors along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(GraphError::InvalidArgument {
                op: "concat_rows",
                detail: "no inputs".into(),
            });
        }
        let (_, c) = self.rank2("concat_rows", parts[0])?;
        let mut heights = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for &p in parts {
            let (rp, cp) = self.rank2("concat_rows", p)?;
            if cp != c {
                return Err(GraphError::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("column counts differ: {c} vs {cp}"),
                });
            }
            heights.push(rp);
            data.extend_from_slice(self.value(p).data());
        }
        let total: usize = heights.iter().sum();
        let requires = self.any_requires(parts);
        let out = self.push(Tensor::from_vec(&[total, c], data), requires, None, "concat_rows");
        let parts = parts.to_vec();
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut offset = 0;
            for (&p, &hp) in parts.iter().zip(&heights) {
                let dp = Tensor::from_vec(&[hp, c], up.data()[offset * c..(offset + hp) * c].to_vec());
                g.accumulate(p, dp);
                offset += hp;
            }
        });
        Ok(out)
    }

    /// Replicates the bottom row and rightmost column of `[C, H, W]` so the
    /// spatial extent grows to `[C, H + pad_h, W + pad_w]`. The origin is
    /// unchanged, which lets callers crop padding back off with a top-left
    /// window.
    pub fn pad_edge_bottom_right(&mut self, x: Var, pad_h: usize, pad_w: usize) -> Result<Var> {
        let xs = self.rank3("pad_edge_bottom_right", x)?;
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if pad_h == 0 && pad_w == 0 {
            return Ok(x);
        }
        let (oh, ow) = (h + pad_h, w + pad_w);
        let xv = self.value(x).data();
        let mut data = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                let iy = oy.min(h - 1);
                for ox in 0..ow {
                    let ix = ox.min(w - 1);
                    data[(ch * oh + oy) * ow + ox] = xv[(ch * h + iy) * w + ix];
                }
            }
        }
        let requires = self.any_requires(&[x]);
        let out =
            self.push(Tensor::from_vec(&[c, oh, ow], data), requires, None, "pad_edge_bottom_right");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut dx = Tensor::zeros(&[c, h, w]);
            for ch in 0..c {
                for oy in 0..oh {
                    let iy = oy.min(h - 1);
                    for ox in 0..ow {
                        let ix = ox.min(w - 1);
                        let di = (ch * h + iy) * w + ix;
                        dx.data_mut()[di] = dx.data()[di] + up.data()[(ch * oh + oy) * ow + ox];
                    }
                }
            }
            g.accumulate(x, dx);
        });
        Ok(out)
    }

    /// Softmax along each row of a rank-2 tensor. Rows sum to one.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.rank2("row_softmax", a)?;
        if c == 0 {
            return Err(GraphError::InvalidArgument {
                op: "row_softmax",
                detail: "zero columns".into(),
            });
        }
        let mut value = self.value(a).clone();
        for i in 0..r {
            softmax_in_place(&mut value.data_mut()[i * c..(i + 1) * c]);
        }
        flops::credit(OpCategory::Other, (r * c) as u64);
        let requires = self.any_requires(&[a]);
        let saved = value.clone();
        let out = self.push(value, requires, None, "row_softmax");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut da = Tensor::zeros(&[r, c]);
            for i in 0..r {
                let s = &saved.data()[i * c..(i + 1) * c];
                let u = &up.data()[i * c..(i + 1) * c];
                let dot: T = s.iter().zip(u).map(|(&si, &ui)| si * ui).sum();
                let row = &mut da.data_mut()[i * c..(i + 1) * c];
                for j in 0..c {
                    row[j] = s[j] * (u[j] - dot);
                }
            }
            g.accumulate(a, da);
        });
        Ok(out)
    }

    /// Scales row `i` of `a` by `w[i]`; `w` has shape `[rows, 1]`.
    pub fn mul_col(&mut self, a: Var, w: Var) -> Result<Var> {
        let (r, c) = self.rank2("mul_col", a)?;
        let ws = self.value(w).shape();
        if ws != [r, 1] {
            return Err(GraphError::ShapeMismatch {
                op: "mul_col",
                detail: format!("weights {:?} for [{r}, {c}]", ws),
            });
        }
        let av = self.value(a).data();
        let wv = self.value(w).data();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(av[i * c + j] * wv[i]);
            }
        }
        flops::credit(OpCategory::Other, (r * c) as u64);
        let requires = self.any_requires(&[a, w]);
        let out = self.push(Tensor::from_vec(&[r, c], data), requires, None, "mul_col");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut da = Tensor::zeros(&[r, c]);
            let mut dw = Tensor::zeros(&[r, 1]);
            {
                let av = g.value(a).data().to_vec();
                let wv = g.value(w).data().to_vec();
                for i in 0..r {
                    let mut acc = T::zero();
                    for j in 0..c {
                        let u = up.data()[i * c + j];
                        da.data_mut()[i * c + j] = u * wv[i];
                        acc = acc + u * av[i * c + j];
                    }
                    dw.data_mut()[i] = acc;
                }
            }
            g.accumulate(a, da);
            g.accumulate(w, dw);
        });
        Ok(out)
    }

    /// Adds a `[1, d]` row vector to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.rank2("add_row_broadcast", a)?;
        if self.value(row).shape() != [1, c] {
            return Err(GraphError::ShapeMismatch {
                op: "add_row_broadcast",
                detail: format!("row {:?} for [{r}, {c}]", self.value(row).shape()),
            });
        }
        let av = self.value(a).data();
        let rv = self.value(row).data();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(av[i * c + j] + rv[j]);
            }
        }
        flops::credit(OpCategory::Other, (r * c) as u64);
        let requires = self.any_requires(&[a, row]);
        let out = self.push(Tensor::from_vec(&[r, c], data), requires, None, "add_row_broadcast");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut drow = Tensor::zeros(&[1, c]);
            for i in 0..r {
                for j in 0..c {
                    drow.data_mut()[j] = drow.data()[j] + up.data()[i * c + j];
                }
            }
            g.accumulate(a, up);
            g.accumulate(row, drow);
        });
        Ok(out)
    }

    /// Adds `table[class[i]]` to row `i`; `table` has shape `[num_classes, d]`.
    pub fn add_rows_by_class(&mut self, a: Var, table: Var, classes: &[usize]) -> Result<Var> {
        let (r, c) = self.rank2("add_rows_by_class", a)?;
        let ts = self.value(table).shape().to_vec();
        if ts.len() != 2 || ts[1] != c {
            return Err(GraphError::ShapeMismatch {
                op: "add_rows_by_class",
                detail: format!("table {ts:?} for [{r}, {c}]"),
            });
        }
        if classes.len() != r || classes.iter().any(|&k| k >= ts[0]) {
            return Err(GraphError::InvalidArgument {
                op: "add_rows_by_class",
                detail: "class index out of range or count mismatch".into(),
            });
        }
        let av = self.value(a).data();
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(r * c);
        for (i, &k) in classes.iter().enumerate() {
            for j in 0..c {
                data.push(av[i * c + j] + tv[k * c + j]);
            }
        }
        flops::credit(OpCategory::Other, (r * c) as u64);
        let requires = self.any_requires(&[a, table]);
        let out = self.push(Tensor::from_vec(&[r, c], data), requires, None, "add_rows_by_class");
        let classes = classes.to_vec();
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut dt = Tensor::zeros(&ts);
            for (i, &k) in classes.iter().enumerate() {
                for j in 0..c {
                    dt.data_mut()[k * c + j] = dt.data()[k * c + j] + up.data()[i * c + j];
                }
            }
            g.accumulate(a, up);
            g.accumulate(table, dt);
        });
        Ok(out)
    }

    /// Layer normalization along the last axis of a `[n, d]` tensor with
    /// learned gain `gamma` and bias `beta`, both `[d]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.rank2("layer_norm", x)?;
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return Err(GraphError::ShapeMismatch {
                op: "layer_norm",
                detail: format!(
                    "gamma {:?} / beta {:?} for [{n}, {d}]",
                    self.value(gamma).shape(),
                    self.value(beta).shape()
                ),
            });
        }
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut data = vec![T::zero(); n * d];
        let mut rstd = vec![T::zero(); n];
        let mut means = vec![T::zero(); n];
        let inv_d = T::from_f64(1.0 / d as f64);
        for i in 0..n {
            let row = &xv[i * d..(i + 1) * d];
            let mu: T = row.iter().copied().sum::<T>() * inv_d;
            let var: T = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
            let rs = T::one() / (var + T::from_f64(eps)).sqrt();
            means[i] = mu;
            rstd[i] = rs;
            for j in 0..d {
                data[i * d + j] = (row[j] - mu) * rs * gv[j] + bv[j];
            }
        }
        flops::credit(OpCategory::Other, (n * d) as u64);
        let requires = self.any_requires(&[x, gamma, beta]);
        let out = self.push(Tensor::from_vec(&[n, d], data), requires, None, "layer_norm");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let xv = g.value(x).data().to_vec();
            let gv = g.value(gamma).data().to_vec();
            let mut dx = Tensor::zeros(&[n, d]);
            let mut dgamma = Tensor::zeros(&[d]);
            let mut dbeta = Tensor::zeros(&[d]);
            let inv_d = T::from_f64(1.0 / d as f64);
            for i in 0..n {
                let u = &up.data()[i * d..(i + 1) * d];
                let row = &xv[i * d..(i + 1) * d];
                let mu = means[i];
                let rs = rstd[i];
                let mut sum_gu = T::zero();
                let mut sum_gux = T::zero();
                for j in 0..d {
                    let xhat = (row[j] - mu) * rs;
                    let gu = gv[j] * u[j];
                    sum_gu = sum_gu + gu;
                    sum_gux = sum_gux + gu * xhat;
                    dgamma.data_mut()[j] = dgamma.data()[j] + u[j] * xhat;
                    dbeta.data_mut()[j] = dbeta.data()[j] + u[j];
                }
                let mean_gu = sum_gu * inv_d;
                let mean_gux = sum_gux * inv_d;
                for j in 0..d {
                    let xhat = (row[j] - mu) * rs;
                    dx.data_mut()[i * d + j] = (gv[j] * u[j] - mean_gu - xhat * mean_gux) * rs;
                }
            }
            g.accumulate(x, dx);
            g.accumulate(gamma, dgamma);
            g.accumulate(beta, dbeta);
        });
        Ok(out)
    }

    // ---- dense linear algebra ----

    /// Matrix product of `[m, k] · [k, n]`. Credits `m·n·k` multiply-adds.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.rank2("matmul", a)?;
        let (kb, n) = self.rank2("matmul", b)?;
        if ka != kb {
            return Err(GraphError::ShapeMismatch {
                op: "matmul",
                detail: format!("[{m}, {ka}] x [{kb}, {n}]"),
            });
        }
        let value = raw_matmul(self.value(a).data(), self.value(b).data(), m, ka, n);
        flops::credit(OpCategory::Matmul, (m * n * ka) as u64);
        let requires = self.any_requires(&[a, b]);
        let out = self.push(Tensor::from_vec(&[m, n], value), requires, None, "matmul");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            // dA = G · Bᵀ, dB = Aᵀ · G
            let da = raw_matmul_nt(up.data(), g.value(b).data(), m, n, ka);
            let db = raw_matmul_tn(g.value(a).data(), up.data(), m, ka, n);
            g.accumulate(a, Tensor::from_vec(&[m, ka], da));
            g.accumulate(b, Tensor::from_vec(&[ka, n], db));
        });
        Ok(out)
    }

    /// Scaled dot-product self-attention: `softmax(q·kᵀ/√d)·v` for `[n, d]`
    /// inputs. Credits `2·n²·d` multiply-adds to the attention counter.
    ///
    /// When no input requires gradients the score matrix is streamed row by
    /// row and never materialized, so inference memory stays `O(n·d)`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (n, d) = self.rank2("attention", q)?;
        if d == 0 {
            return Err(GraphError::InvalidArgument { op: "attention", detail: "d = 0".into() });
        }
        for (name, var) in [("k", k), ("v", v)] {
            if self.value(var).shape() != [n, d] {
                return Err(GraphError::ShapeMismatch {
                    op: "attention",
                    detail: format!("{name} is {:?}, expected [{n}, {d}]", self.value(var).shape()),
                });
            }
        }
        let requires = self.any_requires(&[q, k, v]);
        let scale = T::from_f64(1.0 / (d as f64).sqrt());
        let qv = self.value(q).data();
        let kv = self.value(k).data();
        let vv = self.value(v).data();
        flops::credit(OpCategory::Attention, 2 * (n * n * d) as u64);

        let mut out_data = vec![T::zero(); n * d];
        let mut saved_probs: Option<Vec<T>> = None;
        if requires {
            let mut probs = vec![T::zero(); n * n];
            parallel::for_each_chunk_mut(&mut probs, n, |i, row| {
                for j in 0..n {
                    row[j] = dot(&qv[i * d..(i + 1) * d], &kv[j * d..(j + 1) * d]) * scale;
                }
                softmax_in_place(row);
            });
            parallel::for_each_chunk_mut(&mut out_data, d, |i, out_row| {
                for j in 0..n {
                    let w = probs[i * n + j];
                    let vr = &vv[j * d..(j + 1) * d];
                    for (o, &vx) in out_row.iter_mut().zip(vr) {
                        *o = *o + w * vx;
                    }
                }
            });
            saved_probs = Some(probs);
        } else {
            parallel::for_each_chunk_mut(&mut out_data, d, |i, out_row| {
                let mut row = vec![T::zero(); n];
                for j in 0..n {
                    row[j] = dot(&qv[i * d..(i + 1) * d], &kv[j * d..(j + 1) * d]) * scale;
                }
                softmax_in_place(&mut row);
                for j in 0..n {
                    let w = row[j];
                    let vr = &vv[j * d..(j + 1) * d];
                    for (o, &vx) in out_row.iter_mut().zip(vr) {
                        *o = *o + w * vx;
                    }
                }
            });
        }

        let out = self.push(Tensor::from_vec(&[n, d], out_data), requires, None, "attention");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let probs = saved_probs.expect("probs saved for backward");
            let up = g.grad_of(out);
            let qv = g.value(q).data().to_vec();
            let kv = g.value(k).data().to_vec();
            let vv = g.value(v).data().to_vec();
            // dV = Aᵀ·G
            let dv = raw_matmul_tn(&probs, up.data(), n, n, d);
            // dA = G·Vᵀ ; dS = A ⊙ (dA − rowsum(dA ⊙ A)) · scale
            let da = raw_matmul_nt(up.data(), &vv, n, d, n);
            let mut ds = vec![T::zero(); n * n];
            for i in 0..n {
                let arow = &probs[i * n..(i + 1) * n];
                let darow = &da[i * n..(i + 1) * n];
                let dot_aa: T = arow.iter().zip(darow).map(|(&a_, &d_)| a_ * d_).sum();
                for j in 0..n {
                    ds[i * n + j] = arow[j] * (darow[j] - dot_aa) * scale;
                }
            }
            let dq = raw_matmul(&ds, &kv, n, n, d);
            let dk = raw_matmul_tn(&ds, &qv, n, n, d);
            g.accumulate(q, Tensor::from_vec(&[n, d], dq));
            g.accumulate(k, Tensor::from_vec(&[n, d], dk));
            g.accumulate(v, Tensor::from_vec(&[n, d], dv));
        });
        Ok(out)
    }

    // ---- image-space ops (rank-3 tensors [C, H, W]) ----

    /// 2-D cross-correlation of `x: [C_in, H, W]` with kernels
    /// `[C_out, C_in, kh, kw]` (odd kernel extents). `Same` zero-pads so the
    /// spatial extent is preserved; `Valid` shrinks it.
    pub fn conv2d(&mut self, x: Var, kernels: Var, padding: Padding) -> Result<Var> {
        let xs = self.rank3("conv2d", x)?;
        let ks = self.value(kernels).shape().to_vec();
        if ks.len() != 4 {
            return Err(GraphError::ShapeMismatch {
                op: "conv2d",
                detail: format!("kernels rank {} != 4", ks.len()),
            });
        }
        let (c_in, h, w) = (xs[0], xs[1], xs[2]);
        let (c_out, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kc != c_in {
            return Err(GraphError::ShapeMismatch {
                op: "conv2d",
                detail: format!("kernel expects {kc} input channels, got {c_in}"),
            });
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(GraphError::InvalidArgument {
                op: "conv2d",
                detail: format!("kernel extents must be odd, got {kh}x{kw}"),
            });
        }
        let (oh, ow) = match padding {
            Padding::Same => (h, w),
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(GraphError::InvalidArgument {
                        op: "conv2d",
                        detail: format!("kernel {kh}x{kw} larger than input {h}x{w}"),
                    });
                }
                (h - kh + 1, w - kw + 1)
            }
        };
        let (pr, pc) = match padding {
            Padding::Same => ((kh / 2) as isize, (kw / 2) as isize),
            Padding::Valid => (0, 0),
        };
        let xv = self.value(x).data();
        let kv = self.value(kernels).data();
        let mut out_data = vec![T::zero(); c_out * oh * ow];
        parallel::for_each_chunk_mut(&mut out_data, oh * ow, |oc, plane| {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for ic in 0..c_in {
                        for dy in 0..kh {
                            let iy = oy as isize + dy as isize - pr;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for dx in 0..kw {
                                let ix = ox as isize + dx as isize - pc;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xi = (ic * h + iy as usize) * w + ix as usize;
                                let ki = ((oc * c_in + ic) * kh + dy) * kw + dx;
                                acc = acc + xv[xi] * kv[ki];
                            }
                        }
                    }
                    plane[oy * ow + ox] = acc;
                }
            }
        });
        flops::credit(OpCategory::Conv, (c_out * c_in * kh * kw * oh * ow) as u64);
        let requires = self.any_requires(&[x, kernels]);
        let out =
            self.push(Tensor::from_vec(&[c_out, oh, ow], out_data), requires, None, "conv2d");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let uv = up.data();
            let xv = g.value(x).data().to_vec();
            let kv = g.value(kernels).data().to_vec();
            let mut dx = Tensor::zeros(&[c_in, h, w]);
            let mut dk = Tensor::zeros(&[c_out, c_in, kh, kw]);
            for oc in 0..c_out {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let u = uv[(oc * oh + oy) * ow + ox];
                        for ic in 0..c_in {
                            for dy in 0..kh {
                                let iy = oy as isize + dy as isize - pr;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for dxk in 0..kw {
                                    let ix = ox as isize + dxk as isize - pc;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = (ic * h + iy as usize) * w + ix as usize;
                                    let ki = ((oc * c_in + ic) * kh + dy) * kw + dxk;
                                    dx.data_mut()[xi] = dx.data()[xi] + u * kv[ki];
                                    dk.data_mut()[ki] = dk.data()[ki] + u * xv[xi];
                                }
                            }
                        }
                    }
                }
            }
            g.accumulate(x, dx);
            g.accumulate(kernels, dk);
        });
        Ok(out)
    }

    /// Adds a per-channel bias to `[C, H, W]`.
    pub fn bias_add_channel(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.rank3("bias_add_channel", x)?;
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if self.value(bias).shape() != [c] {
            return Err(GraphError::ShapeMismatch {
                op: "bias_add_channel",
                detail: format!("bias {:?} for {c} channels", self.value(bias).shape()),
            });
        }
        let xv = self.value(x).data();
        let bv = self.value(bias).data();
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for i in 0..h * w {
                data.push(xv[ch * h * w + i] + bv[ch]);
            }
        }
        flops::credit(OpCategory::Other, (c * h * w) as u64);
        let requires = self.any_requires(&[x, bias]);
        let out = self.push(Tensor::from_vec(&[c, h, w], data), requires, None, "bias_add_channel");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut db = Tensor::zeros(&[c]);
            for ch in 0..c {
                let mut acc = T::zero();
                for i in 0..h * w {
                    acc = acc + up.data()[ch * h * w + i];
                }
                db.data_mut()[ch] = acc;
            }
            g.accumulate(x, up);
            g.accumulate(bias, db);
        });
        Ok(out)
    }

    /// Replicates the border of `[C, H, W]` outward by `r` pixels.
    pub fn replicate_pad(&mut self, x: Var, r: usize) -> Result<Var> {
        let xs = self.rank3("replicate_pad", x)?;
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if r == 0 {
            return Ok(x);
        }
        let (oh, ow) = (h + 2 * r, w + 2 * r);
        let xv = self.value(x).data();
        let mut data = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                let iy = oy.saturating_sub(r).min(h - 1);
                for ox in 0..ow {
                    let ix = ox.saturating_sub(r).min(w - 1);
                    data[(ch * oh + oy) * ow + ox] = xv[(ch * h + iy) * w + ix];
                }
            }
        }
        let requires = self.any_requires(&[x]);
        let out = self.push(Tensor::from_vec(&[c, oh, ow], data), requires, None, "replicate_pad");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut dx = Tensor::zeros(&[c, h, w]);
            for ch in 0..c {
                for oy in 0..oh {
                    let iy = oy.saturating_sub(r).min(h - 1);
                    for ox in 0..ow {
                        let ix = ox.saturating_sub(r).min(w - 1);
                        let di = (ch * h + iy) * w + ix;
                        dx.data_mut()[di] = dx.data()[di] + up.data()[(ch * oh + oy) * ow + ox];
                    }
                }
            }
            g.accumulate(x, dx);
        });
        Ok(out)
    }

    /// Crops `[C, H, W]` to a `[C, ch_h, ch_w]` window at `(r0, c0)`.
    pub fn crop_at(&mut self, x: Var, r0: usize, c0: usize, ch_h: usize, ch_w: usize) -> Result<Var> {
        let xs = self.rank3("crop_at", x)?;
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if r0 + ch_h > h || c0 + ch_w > w {
            return Err(GraphError::InvalidArgument {
                op: "crop_at",
                detail: format!("window {ch_h}x{ch_w}+({r0},{c0}) outside {h}x{w}"),
            });
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(c * ch_h * ch_w);
        for ch in 0..c {
            for y in 0..ch_h {
                let base = (ch * h + r0 + y) * w + c0;
                data.extend_from_slice(&xv[base..base + ch_w]);
            }
        }
        let requires = self.any_requires(&[x]);
        let out = self.push(Tensor::from_vec(&[c, ch_h, ch_w], data), requires, None, "crop_at");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut dx = Tensor::zeros(&[c, h, w]);
            for ch in 0..c {
                for y in 0..ch_h {
                    let src = (ch * ch_h + y) * ch_w;
                    let dst = (ch * h + r0 + y) * w + c0;
                    for j in 0..ch_w {
                        dx.data_mut()[dst + j] = up.data()[src + j];
                    }
                }
            }
            g.accumulate(x, dx);
        });
        Ok(out)
    }

    /// Bilinear upsampling (align-corners-false) of `[C, H, W]` by an integer
    /// factor. Constant fields map to constant fields.
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let xs = self.rank3("upsample_bilinear", x)?;
        if factor == 0 {
            return Err(GraphError::InvalidArgument {
                op: "upsample_bilinear",
                detail: "factor = 0".into(),
            });
        }
        if factor == 1 {
            // Identity, but still a node so gradients flow.
            return self.reshape(x, &xs);
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h * factor, w * factor);
        let taps_y = bilinear_taps(h, oh);
        let taps_x = bilinear_taps(w, ow);
        let xv = self.value(x).data();
        let mut data = vec![T::zero(); c * oh * ow];
        parallel::for_each_chunk_mut(&mut data, oh * ow, |ch, plane| {
            for oy in 0..oh {
                let (y0, y1, wy) = taps_y[oy];
                let wy = T::from_f64(wy);
                for ox in 0..ow {
                    let (x0, x1, wx) = taps_x[ox];
                    let wx = T::from_f64(wx);
                    let one = T::one();
                    let v00 = xv[(ch * h + y0) * w + x0];
                    let v01 = xv[(ch * h + y0) * w + x1];
                    let v10 = xv[(ch * h + y1) * w + x0];
                    let v11 = xv[(ch * h + y1) * w + x1];
                    let top = v00 * (one - wx) + v01 * wx;
                    let bot = v10 * (one - wx) + v11 * wx;
                    plane[oy * ow + ox] = top * (one - wy) + bot * wy;
                }
            }
        });
        flops::credit(OpCategory::Other, (c * oh * ow * 4) as u64);
        let requires = self.any_requires(&[x]);
        let out =
            self.push(Tensor::from_vec(&[c, oh, ow], data), requires, None, "upsample_bilinear");
        let taps_y2 = bilinear_taps(h, oh);
        let taps_x2 = bilinear_taps(w, ow);
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut dx = Tensor::zeros(&[c, h, w]);
            for ch in 0..c {
                for oy in 0..oh {
                    let (y0, y1, wy) = taps_y2[oy];
                    let wy = T::from_f64(wy);
                    for ox in 0..ow {
                        let (x0, x1, wx) = taps_x2[ox];
                        let wx = T::from_f64(wx);
                        let one = T::one();
                        let u = up.data()[(ch * oh + oy) * ow + ox];
                        let d = dx.data_mut();
                        d[(ch * h + y0) * w + x0] =
                            d[(ch * h + y0) * w + x0] + u * (one - wy) * (one - wx);
                        d[(ch * h + y0) * w + x1] = d[(ch * h + y0) * w + x1] + u * (one - wy) * wx;
                        d[(ch * h + y1) * w + x0] = d[(ch * h + y1) * w + x0] + u * wy * (one - wx);
                        d[(ch * h + y1) * w + x1] = d[(ch * h + y1) * w + x1] + u * wy * wx;
                    }
                }
            }
            g.accumulate(x, dx);
        });
        Ok(out)
    }

    /// Splits `[C, H, W]` into non-overlapping `p×p` patches in row-major
    /// grid order; each token is the patch flattened channel-major, so the
    /// output is `[ (H/p)·(W/p), p²·C ]`.
    pub fn patchify(&mut self, x: Var, p: usize) -> Result<Var> {
        let xs = self.rank3("patchify", x)?;
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(GraphError::InvalidArgument {
                op: "patchify",
                detail: format!("patch {p} does not divide {h}x{w}"),
            });
        }
        let (gh, gw) = (h / p, w / p);
        let n = gh * gw;
        let tok = p * p * c;
        let xv = self.value(x).data();
        let mut data = vec![T::zero(); n * tok];
        for gr in 0..gh {
            for gc in 0..gw {
                let t = gr * gw + gc;
                for ch in 0..c {
                    for py in 0..p {
                        for px in 0..p {
                            data[t * tok + (ch * p + py) * p + px] =
                                xv[(ch * h + gr * p + py) * w + gc * p + px];
                        }
                    }
                }
            }
        }
        let requires = self.any_requires(&[x]);
        let out = self.push(Tensor::from_vec(&[n, tok], data), requires, None, "patchify");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut dx = Tensor::zeros(&[c, h, w]);
            for gr in 0..gh {
                for gc in 0..gw {
                    let t = gr * gw + gc;
                    for ch in 0..c {
                        for py in 0..p {
                            for px in 0..p {
                                dx.data_mut()[(ch * h + gr * p + py) * w + gc * p + px] =
                                    up.data()[t * tok + (ch * p + py) * p + px];
                            }
                        }
                    }
                }
            }
            g.accumulate(x, dx);
        });
        Ok(out)
    }

    /// Inverse of patch decoding: lays out per-token pixel blocks
    /// `[n, K·ps²]` (channel-major within the token) on a `gh×gw` grid,
    /// producing `[K, gh·ps, gw·ps]`.
    pub fn tokens_to_image(
        &mut self,
        tokens: Var,
        gh: usize,
        gw: usize,
        channels: usize,
        ps: usize,
    ) -> Result<Var> {
        let (n, tok) = self.rank2("tokens_to_image", tokens)?;
        if n != gh * gw || tok != channels * ps * ps {
            return Err(GraphError::ShapeMismatch {
                op: "tokens_to_image",
                detail: format!(
                    "[{n}, {tok}] cannot form {channels} x {}x{} from a {gh}x{gw} grid",
                    gh * ps,
                    gw * ps
                ),
            });
        }
        let (h, w) = (gh * ps, gw * ps);
        let tv = self.value(tokens).data();
        let mut data = vec![T::zero(); channels * h * w];
        for gr in 0..gh {
            for gc in 0..gw {
                let t = gr * gw + gc;
                for ch in 0..channels {
                    for py in 0..ps {
                        for px in 0..ps {
                            data[(ch * h + gr * ps + py) * w + gc * ps + px] =
                                tv[t * tok + (ch * ps + py) * ps + px];
                        }
                    }
                }
            }
        }
        let requires = self.any_requires(&[tokens]);
        let out =
            self.push(Tensor::from_vec(&[channels, h, w], data), requires, None, "tokens_to_image");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut dt = Tensor::zeros(&[n, tok]);
            for gr in 0..gh {
                for gc in 0..gw {
                    let t = gr * gw + gc;
                    for ch in 0..channels {
                        for py in 0..ps {
                            for px in 0..ps {
                                dt.data_mut()[t * tok + (ch * ps + py) * ps + px] =
                                    up.data()[(ch * h + gr * ps + py) * w + gc * ps + px];
                            }
                        }
                    }
                }
            }
            g.accumulate(tokens, dt);
        });
        Ok(out)
    }

    /// Token rows `[n, d]` viewed as a feature image `[d, gh, gw]`
    /// (token `i` sits at grid cell `(i / gw, i % gw)`).
    pub fn rows_to_image(&mut self, tokens: Var, gh: usize, gw: usize) -> Result<Var> {
        let (n, d) = self.rank2("rows_to_image", tokens)?;
        if n != gh * gw {
            return Err(GraphError::ShapeMismatch {
                op: "rows_to_image",
                detail: format!("{n} tokens cannot fill a {gh}x{gw} grid"),
            });
        }
        let tv = self.value(tokens).data();
        let mut data = vec![T::zero(); d * n];
        for t in 0..n {
            for ch in 0..d {
                data[ch * n + t] = tv[t * d + ch];
            }
        }
        let requires = self.any_requires(&[tokens]);
        let out = self.push(Tensor::from_vec(&[d, gh, gw], data), requires, None, "rows_to_image");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut dt = Tensor::zeros(&[n, d]);
            for t in 0..n {
                for ch in 0..d {
                    dt.data_mut()[t * d + ch] = up.data()[ch * n + t];
                }
            }
            g.accumulate(tokens, dt);
        });
        Ok(out)
    }

    /// Inverse of [`Graph::rows_to_image`].
    pub fn image_to_rows(&mut self, x: Var) -> Result<Var> {
        let xs = self.rank3("image_to_rows", x)?;
        let (d, gh, gw) = (xs[0], xs[1], xs[2]);
        let n = gh * gw;
        let xv = self.value(x).data();
        let mut data = vec![T::zero(); n * d];
        for t in 0..n {
            for ch in 0..d {
                data[t * d + ch] = xv[ch * n + t];
            }
        }
        let requires = self.any_requires(&[x]);
        let out = self.push(Tensor::from_vec(&[n, d], data), requires, None, "image_to_rows");
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let mut dx = Tensor::zeros(&[d, gh, gw]);
            for t in 0..n {
                for ch in 0..d {
                    dx.data_mut()[ch * n + t] = up.data()[t * d + ch];
                }
            }
            g.accumulate(x, dx);
        });
        Ok(out)
    }

    /// Custom differentiable unary op. `backward(gout, input_value)` returns
    /// the gradient w.r.t. the input.
    pub fn custom_unary(
        &mut self,
        input: Var,
        value: Tensor<T>,
        op: &'static str,
        category: OpCategory,
        madds: u64,
        backward: impl Fn(&Tensor<T>, &Tensor<T>) -> Tensor<T> + 'static,
    ) -> Var {
        flops::credit(category, madds);
        let requires = self.any_requires(&[input]);
        let out = self.push(value, requires, None, op);
        self.set_backward(out, requires, move |g: &mut Graph<T>| {
            let up = g.grad_of(out);
            let din = backward(&up, g.value(input));
            g.accumulate(input, din);
        });
        out
    }

    fn set_backward(&mut self, out: Var, requires: bool, f: impl FnOnce(&mut Graph<T>) + 'static) {
        if requires {
            self.nodes[out.0].backward = Some(Box::new(f));
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(GraphError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        Ok(())
    }

    fn rank2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.value(v).shape();
        if s.len() != 2 {
            return Err(GraphError::ShapeMismatch {
                op,
                detail: format!("expected rank 2, got {s:?}"),
            });
        }
        Ok((s[0], s[1]))
    }

    fn rank3(&self, op: &'static str, v: Var) -> Result<[usize; 3]> {
        let s = self.value(v).shape();
        if s.len() != 3 {
            return Err(GraphError::ShapeMismatch {
                op,
                detail: format!("expected rank 3, got {s:?}"),
            });
        }
        Ok([s[0], s[1], s[2]])
    }
}

// ---- raw kernels ----

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc + *x * *y;
    }
    acc
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let mut max = row[0];
    for &v in row.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

/// `C[m,n] = A[m,k] · B[k,n]`, parallel over output rows.
pub(crate) fn raw_matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    parallel::for_each_chunk_mut(&mut out, n, |i, row| {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == T::zero() {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    });
    out
}

/// `C[m,k] = A[m,n] · Bᵀ` where `B` is `[k, n]`.
pub(crate) fn raw_matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    parallel::for_each_chunk_mut(&mut out, k, |i, row| {
        let arow = &a[i * n..(i + 1) * n];
        for (j, o) in row.iter_mut().enumerate() {
            *o = dot(arow, &b[j * n..(j + 1) * n]);
        }
    });
    out
}

/// `C[k,n] = Aᵀ · B` where `A` is `[m, k]` and `B` is `[m, n]`.
pub(crate) fn raw_matmul_tn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == T::zero() {
                continue;
            }
            let brow = &b[i * n..(i + 1) * n];
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

fn zip_new<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_vec(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn gelu_fwd<T: Real>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = T::from_f64(0.044715);
    let u = c * (x + a * x * x * x);
    T::from_f64(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4);
    let a = T::from_f64(0.044715);
    let three = T::from_f64(3.0);
    let half = T::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * a * x * x)
}

/// Taps for align-corners-false bilinear interpolation: for each output
/// index, the two source indices (clamped) and the fractional weight of the
/// second one.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    let hi = (src - 1) as f64;
    (0..dst)
        .map(|o| {
            let pos = (o as f64 + 0.5) * scale - 0.5;
            let floor = pos.floor();
            let frac = pos - floor;
            // Both taps clamp to the valid range; when they coincide the
            // weight cancels, which realizes edge replication.
            let i0 = floor.clamp(0.0, hi) as usize;
            let i1 = (floor + 1.0).clamp(0.0, hi) as usize;
            (i0, i1, frac)
        })
        .collect()
}
