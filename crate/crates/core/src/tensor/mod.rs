//! Dense 64-bit tensors with reverse-mode automatic differentiation.
//!
//! Values are immutable after construction; gradients flow through a
//! [`Tape`] that is rebuilt on every forward pass. All kernels run
//! sequentially with a fixed summation order so results are bit-reproducible.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, max_rel_error, GradCheckReport};
pub use tape::Tape;

use std::sync::Arc;

use crate::error::{Error, Result};
use tape::NodeId;

#[derive(Clone)]
struct NodeRef {
    tape: Tape,
    id: NodeId,
}

/// Dense row-major f64 tensor, optionally attached to a gradient tape.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeRef>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad())
            .field("data", &&self.data[..self.data.len().min(8)])
            .finish()
    }
}

fn shape_numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Constant tensor (no gradient).
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        if shape_numel(&shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} implies {} elements, got {}",
                shape_numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![v]),
            node: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape_numel(&shape);
        Tensor {
            shape,
            data: Arc::new(vec![0.0; n]),
            node: None,
        }
    }

    /// Trainable leaf: registers on `tape` so gradients accumulate here.
    pub fn leaf(tape: &Tape, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let mut t = Tensor::from_vec(shape, data)?;
        let id = tape.push_leaf(t.numel());
        t.node = Some(NodeRef {
            tape: tape.clone(),
            id,
        });
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(format!(
                "expected a 2-d tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Same data viewed under a new shape with an identical element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        if shape_numel(&shape) != self.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} ({} elements) to {shape:?}",
                self.shape,
                self.numel()
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
            node: self.node.clone(),
        })
    }

    /// Run the reverse sweep from this scalar loss.
    pub fn backward(&self) -> Result<()> {
        let node = self.node.as_ref().ok_or_else(|| {
            Error::usage("backward() on a tensor that is not connected to a tape")
        })?;
        node.tape.run_backward(node.id, self.numel())
    }

    /// Gradient accumulated at this tensor, once `backward` has run.
    pub fn grad(&self) -> Option<Vec<f64>> {
        let node = self.node.as_ref()?;
        node.tape.grad_of(node.id)
    }

    /// The tape shared by the inputs that carry one, checking consistency.
    fn merged_tape(inputs: &[&Tensor]) -> Option<Tape> {
        let mut found: Option<Tape> = None;
        for t in inputs {
            if let Some(nr) = &t.node {
                match &found {
                    None => found = Some(nr.tape.clone()),
                    Some(tp) => assert!(
                        tp.same_tape(&nr.tape),
                        "operands recorded on different gradient tapes"
                    ),
                }
            }
        }
        found
    }

    fn node_id(&self) -> Option<NodeId> {
        self.node.as_ref().map(|nr| nr.id)
    }

    fn attach(mut self, tape: Option<Tape>, id: Option<NodeId>) -> Tensor {
        self.node = match (tape, id) {
            (Some(tape), Some(id)) => Some(NodeRef { tape, id }),
            _ => None,
        };
        self
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape, b.shape
        )));
    }
    Ok(())
}

/// a (m×k) times b (k×n), row-major, fixed loop order.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn transpose_raw(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

fn softmax_row_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "add")?;
        let data: Vec<f64> = self.data.iter().zip(other.data.iter()).map(|(a, b)| a + b).collect();
        let mut out = Tensor::from_vec(self.shape.clone(), data)?;
        if let Some(tape) = Tensor::merged_tape(&[self, other]) {
            let (ia, ib) = (self.node_id(), other.node_id());
            let id = tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    if let Some(ia) = ia {
                        sink.add(ia, dout);
                    }
                    if let Some(ib) = ib {
                        sink.add(ib, dout);
                    }
                }),
            );
            out = out.attach(Some(tape), Some(id));
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "sub")?;
        let data: Vec<f64> = self.data.iter().zip(other.data.iter()).map(|(a, b)| a - b).collect();
        let mut out = Tensor::from_vec(self.shape.clone(), data)?;
        if let Some(tape) = Tensor::merged_tape(&[self, other]) {
            let (ia, ib) = (self.node_id(), other.node_id());
            let id = tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    if let Some(ia) = ia {
                        sink.add(ia, dout);
                    }
                    if let Some(ib) = ib {
                        sink.add_owned(ib, dout.iter().map(|d| -d).collect());
                    }
                }),
            );
            out = out.attach(Some(tape), Some(id));
        }
        Ok(out)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "mul")?;
        let data: Vec<f64> = self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).collect();
        let mut out = Tensor::from_vec(self.shape.clone(), data)?;
        if let Some(tape) = Tensor::merged_tape(&[self, other]) {
            let (ia, ib) = (self.node_id(), other.node_id());
            let (da, db) = (self.data.clone(), other.data.clone());
            let id = tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    if let Some(ia) = ia {
                        sink.add_owned(ia, dout.iter().zip(db.iter()).map(|(d, b)| d * b).collect());
                    }
                    if let Some(ib) = ib {
                        sink.add_owned(ib, dout.iter().zip(da.iter()).map(|(d, a)| d * a).collect());
                    }
                }),
            );
            out = out.attach(Some(tape), Some(id));
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data.iter().map(|v| c * v).collect();
        let mut out = Tensor::from_vec(self.shape.clone(), data).expect("same shape");
        if let Some(nr) = &self.node {
            let ix = nr.id;
            let id = nr.tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    sink.add_owned(ix, dout.iter().map(|d| c * d).collect());
                }),
            );
            out = out.attach(Some(nr.tape.clone()), Some(id));
        }
        out
    }

    /// Elementwise division by a scalar (a single rounding per element,
    /// unlike multiplying by a precomputed reciprocal).
    pub fn div_scalar(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data.iter().map(|v| v / c).collect();
        let mut out = Tensor::from_vec(self.shape.clone(), data).expect("same shape");
        if let Some(nr) = &self.node {
            let ix = nr.id;
            let id = nr.tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    sink.add_owned(ix, dout.iter().map(|d| d / c).collect());
                }),
            );
            out = out.attach(Some(nr.tape.clone()), Some(id));
        }
        out
    }

    /// Sum of identically shaped tensors in one node.
    pub fn add_n(terms: &[Tensor]) -> Result<Tensor> {
        let first = terms
            .first()
            .ok_or_else(|| Error::usage("add_n over an empty list"))?;
        let mut data = vec![0.0; first.numel()];
        for t in terms {
            same_shape(first, t, "add_n")?;
            for (d, v) in data.iter_mut().zip(t.data.iter()) {
                *d += v;
            }
        }
        let mut out = Tensor::from_vec(first.shape.clone(), data)?;
        let refs: Vec<&Tensor> = terms.iter().collect();
        if let Some(tape) = Tensor::merged_tape(&refs) {
            let ids: Vec<Option<NodeId>> = terms.iter().map(|t| t.node_id()).collect();
            let id = tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    for ix in ids.iter().flatten() {
                        sink.add(*ix, dout);
                    }
                }),
            );
            out = out.attach(Some(tape), Some(id));
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: inner extents differ, {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let data = matmul_raw(&self.data, &other.data, m, k, n);
        let mut out = Tensor::from_vec(vec![m, n], data)?;
        if let Some(tape) = Tensor::merged_tape(&[self, other]) {
            let (ia, ib) = (self.node_id(), other.node_id());
            let (da, db) = (self.data.clone(), other.data.clone());
            let id = tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    if let Some(ia) = ia {
                        // dA = dOut · Bᵀ
                        let bt = transpose_raw(&db, k, n);
                        sink.add_owned(ia, matmul_raw(dout, &bt, m, n, k));
                    }
                    if let Some(ib) = ib {
                        // dB = Aᵀ · dOut
                        let at = transpose_raw(&da, m, k);
                        sink.add_owned(ib, matmul_raw(&at, dout, k, m, n));
                    }
                }),
            );
            out = out.attach(Some(tape), Some(id));
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = Tensor::from_vec(vec![c, r], transpose_raw(&self.data, r, c))?;
        if let Some(nr) = &self.node {
            let ix = nr.id;
            let id = nr.tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    sink.add_owned(ix, transpose_raw(dout, c, r));
                }),
            );
            out = out.attach(Some(nr.tape.clone()), Some(id));
        }
        Ok(out)
    }

    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data.iter().sum();
        let mut out = Tensor::scalar(total);
        if let Some(nr) = &self.node {
            let ix = nr.id;
            let n = self.numel();
            let id = nr.tape.push_op(
                1,
                Box::new(move |dout, sink| {
                    sink.add_owned(ix, vec![dout[0]; n]);
                }),
            );
            out = out.attach(Some(nr.tape.clone()), Some(id));
        }
        out
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    pub fn relu(&self) -> Tensor {
        let data: Vec<f64> = self.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let mut out = Tensor::from_vec(self.shape.clone(), data).expect("same shape");
        if let Some(nr) = &self.node {
            let ix = nr.id;
            let x = self.data.clone();
            let id = nr.tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    sink.add_owned(
                        ix,
                        dout.iter()
                            .zip(x.iter())
                            .map(|(d, &v)| if v > 0.0 { *d } else { 0.0 })
                            .collect(),
                    );
                }),
            );
            out = out.attach(Some(nr.tape.clone()), Some(id));
        }
        out
    }

    pub fn tanh(&self) -> Tensor {
        let data: Vec<f64> = self.data.iter().map(|v| v.tanh()).collect();
        let mut out = Tensor::from_vec(self.shape.clone(), data).expect("same shape");
        if let Some(nr) = &self.node {
            let ix = nr.id;
            let y = out.data.clone();
            let id = nr.tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    sink.add_owned(
                        ix,
                        dout.iter().zip(y.iter()).map(|(d, o)| d * (1.0 - o * o)).collect(),
                    );
                }),
            );
            out = out.attach(Some(nr.tape.clone()), Some(id));
        }
        out
    }

    pub fn exp(&self) -> Tensor {
        let data: Vec<f64> = self.data.iter().map(|v| v.exp()).collect();
        let mut out = Tensor::from_vec(self.shape.clone(), data).expect("same shape");
        if let Some(nr) = &self.node {
            let ix = nr.id;
            let y = out.data.clone();
            let id = nr.tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    sink.add_owned(ix, dout.iter().zip(y.iter()).map(|(d, o)| d * o).collect());
                }),
            );
            out = out.attach(Some(nr.tape.clone()), Some(id));
        }
        out
    }

    /// Row-wise softmax with max subtraction. Rows sum to 1 within 1e-12.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("softmax_rows: non-finite input".to_string()));
        }
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            softmax_row_into(&self.data[i * n..(i + 1) * n], &mut data[i * n..(i + 1) * n]);
        }
        let mut out = Tensor::from_vec(self.shape.clone(), data)?;
        if let Some(nr) = &self.node {
            let ix = nr.id;
            let y = out.data.clone();
            let id = nr.tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        let yr = &y[i * n..(i + 1) * n];
                        let dr = &dout[i * n..(i + 1) * n];
                        let dot: f64 = dr.iter().zip(yr).map(|(d, o)| d * o).sum();
                        for j in 0..n {
                            dx[i * n + j] = yr[j] * (dr[j] - dot);
                        }
                    }
                    sink.add_owned(ix, dx);
                }),
            );
            out = out.attach(Some(nr.tape.clone()), Some(id));
        }
        Ok(out)
    }

    /// Row-wise log-sum-exp, shape `[rows]`.
    pub fn logsumexp_rows(&self) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        let mut data = vec![0.0; m];
        let mut soft = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                soft[i * n + j] = e;
                sum += e;
            }
            data[i] = max + sum.ln();
            for j in 0..n {
                soft[i * n + j] /= sum;
            }
        }
        let mut out = Tensor::from_vec(vec![m], data)?;
        if let Some(nr) = &self.node {
            let ix = nr.id;
            let id = nr.tape.push_op(
                m,
                Box::new(move |dout, sink| {
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] = dout[i] * soft[i * n + j];
                        }
                    }
                    sink.add_owned(ix, dx);
                }),
            );
            out = out.attach(Some(nr.tape.clone()), Some(id));
        }
        Ok(out)
    }

    /// Main diagonal of a square matrix, shape `[n]`.
    pub fn diag(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if r != c {
            return Err(Error::shape(format!("diag: matrix {:?} is not square", self.shape)));
        }
        let data: Vec<f64> = (0..r).map(|i| self.data[i * c + i]).collect();
        let mut out = Tensor::from_vec(vec![r], data)?;
        if let Some(nr) = &self.node {
            let ix = nr.id;
            let id = nr.tape.push_op(
                r,
                Box::new(move |dout, sink| {
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        dx[i * c + i] = dout[i];
                    }
                    sink.add_owned(ix, dx);
                }),
            );
            out = out.attach(Some(nr.tape.clone()), Some(id));
        }
        Ok(out)
    }

    /// Mean KL divergence between row-stochastic matrices, student
    /// distribution first: `(1/rows) Σᵢ Σⱼ pᵢⱼ (ln pᵢⱼ − ln qᵢⱼ)`.
    ///
    /// Terms with `pᵢⱼ = 0` contribute 0. Zeros in `q` are clamped to `eps`;
    /// with `eps = 0` they are an error instead.
    pub fn kl_rows(p: &Tensor, q: &Tensor, eps: f64) -> Result<Tensor> {
        same_shape(p, q, "kl_rows")?;
        let (m, n) = p.dims2()?;
        for (name, t) in [("p", p), ("q", q)] {
            for i in 0..m {
                let row = &t.data[i * n..(i + 1) * n];
                if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    return Err(Error::numeric(format!("kl_rows: {name} row {i} has invalid entries")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::numeric(format!(
                        "kl_rows: {name} row {i} sums to {sum}, not 1"
                    )));
                }
            }
        }
        let mut total = 0.0;
        for (&pv, &qv) in p.data.iter().zip(q.data.iter()) {
            if pv == 0.0 || pv == qv {
                continue; // exact zero contribution
            }
            if qv <= 0.0 && eps == 0.0 {
                return Err(Error::numeric(
                    "kl_rows: q is zero where p is positive and no clamp epsilon is set".to_string(),
                ));
            }
            total += pv * (pv.ln() - qv.max(eps).ln());
        }
        let mut out = Tensor::scalar(total / m as f64);
        if let Some(tape) = Tensor::merged_tape(&[p, q]) {
            let (ip, iq) = (p.node_id(), q.node_id());
            let (dp, dq) = (p.data.clone(), q.data.clone());
            let id = tape.push_op(
                1,
                Box::new(move |dout, sink| {
                    let scale = dout[0] / m as f64;
                    if let Some(ip) = ip {
                        let g: Vec<f64> = dp
                            .iter()
                            .zip(dq.iter())
                            .map(|(&pv, &qv)| {
                                if pv == 0.0 {
                                    0.0
                                } else {
                                    scale * (pv.ln() - qv.max(eps).ln() + 1.0)
                                }
                            })
                            .collect();
                        sink.add_owned(ip, g);
                    }
                    if let Some(iq) = iq {
                        let g: Vec<f64> = dp
                            .iter()
                            .zip(dq.iter())
                            .map(|(&pv, &qv)| {
                                if pv == 0.0 || qv < eps {
                                    0.0
                                } else {
                                    -scale * pv / qv.max(eps)
                                }
                            })
                            .collect();
                        sink.add_owned(iq, g);
                    }
                }),
            );
            out = out.attach(Some(tape), Some(id));
        }
        Ok(out)
    }

    /// Mean squared error over all elements.
    pub fn mse(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "mse")?;
        let n = self.numel() as f64;
        let total: f64 = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let mut out = Tensor::scalar(total / n);
        if let Some(tape) = Tensor::merged_tape(&[self, other]) {
            let (ia, ib) = (self.node_id(), other.node_id());
            let (da, db) = (self.data.clone(), other.data.clone());
            let id = tape.push_op(
                1,
                Box::new(move |dout, sink| {
                    let scale = 2.0 * dout[0] / n;
                    if let Some(ia) = ia {
                        sink.add_owned(
                            ia,
                            da.iter().zip(db.iter()).map(|(a, b)| scale * (a - b)).collect(),
                        );
                    }
                    if let Some(ib) = ib {
                        sink.add_owned(
                            ib,
                            da.iter().zip(db.iter()).map(|(a, b)| -scale * (a - b)).collect(),
                        );
                    }
                }),
            );
            out = out.attach(Some(tape), Some(id));
        }
        Ok(out)
    }

    /// Mean cross-entropy of logits against integer labels, stable
    /// log-sum-exp form with mean reduction over rows.
    pub fn cross_entropy_mean(&self, labels: &[usize]) -> Result<Tensor> {
        let (b, k) = self.dims2()?;
        if labels.len() != b {
            return Err(Error::usage(format!(
                "cross_entropy: {b} logit rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::usage(format!(
                "cross_entropy: label {bad} out of range for {k} classes"
            )));
        }
        let mut soft = vec![0.0; b * k];
        let mut total = 0.0;
        for i in 0..b {
            let row = &self.data[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..k {
                let e = (row[j] - max).exp();
                soft[i * k + j] = e;
                sum += e;
            }
            total += max + sum.ln() - row[labels[i]];
            for j in 0..k {
                soft[i * k + j] /= sum;
            }
        }
        let mut out = Tensor::scalar(total / b as f64);
        if let Some(nr) = &self.node {
            let ix = nr.id;
            let labels = labels.to_vec();
            let id = nr.tape.push_op(
                1,
                Box::new(move |dout, sink| {
                    let scale = dout[0] / b as f64;
                    let mut dx = vec![0.0; b * k];
                    for i in 0..b {
                        for j in 0..k {
                            let indicator = if labels[i] == j { 1.0 } else { 0.0 };
                            dx[i * k + j] = scale * (soft[i * k + j] - indicator);
                        }
                    }
                    sink.add_owned(ix, dx);
                }),
            );
            out = out.attach(Some(nr.tape.clone()), Some(id));
        }
        Ok(out)
    }

    /// Select rows of a 2-d tensor; indices may repeat.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::usage(format!("gather_rows: row {bad} out of range ({r} rows)")));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        let mut out = Tensor::from_vec(vec![idx.len(), c], data)?;
        if let Some(nr) = &self.node {
            let ix = nr.id;
            let idx = idx.to_vec();
            let id = nr.tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    let mut dx = vec![0.0; r * c];
                    for (o, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            dx[i * c + j] += dout[o * c + j];
                        }
                    }
                    sink.add_owned(ix, dx);
                }),
            );
            out = out.attach(Some(nr.tape.clone()), Some(id));
        }
        Ok(out)
    }

    /// Select flat elements by index into a new shape; indices may repeat.
    pub fn gather_elems(&self, idx: &[usize], out_shape: Vec<usize>) -> Result<Tensor> {
        if shape_numel(&out_shape) != idx.len() {
            return Err(Error::shape(format!(
                "gather_elems: {} indices but shape {out_shape:?}",
                idx.len()
            )));
        }
        let n = self.numel();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::usage(format!(
                "gather_elems: index {bad} out of range ({n} elements)"
            )));
        }
        let data: Vec<f64> = idx.iter().map(|&i| self.data[i]).collect();
        let mut out = Tensor::from_vec(out_shape, data)?;
        if let Some(nr) = &self.node {
            let ix = nr.id;
            let idx = idx.to_vec();
            let id = nr.tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    let mut dx = vec![0.0; n];
                    for (o, &i) in idx.iter().enumerate() {
                        dx[i] += dout[o];
                    }
                    sink.add_owned(ix, dx);
                }),
            );
            out = out.attach(Some(nr.tape.clone()), Some(id));
        }
        Ok(out)
    }

    /// Mean over consecutive row groups of size `group`: `(G·group)×C → G×C`.
    pub fn row_group_mean(&self, group: usize) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if group == 0 || r % group != 0 {
            return Err(Error::shape(format!(
                "row_group_mean: {r} rows not divisible into groups of {group}"
            )));
        }
        let g = r / group;
        let mut data = vec![0.0; g * c];
        for gi in 0..g {
            for ri in 0..group {
                let row = &self.data[(gi * group + ri) * c..(gi * group + ri + 1) * c];
                for j in 0..c {
                    data[gi * c + j] += row[j];
                }
            }
            for j in 0..c {
                data[gi * c + j] /= group as f64;
            }
        }
        let mut out = Tensor::from_vec(vec![g, c], data)?;
        if let Some(nr) = &self.node {
            let ix = nr.id;
            let id = nr.tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    let mut dx = vec![0.0; r * c];
                    for gi in 0..g {
                        for ri in 0..group {
                            for j in 0..c {
                                dx[(gi * group + ri) * c + j] = dout[gi * c + j] / group as f64;
                            }
                        }
                    }
                    sink.add_owned(ix, dx);
                }),
            );
            out = out.attach(Some(nr.tape.clone()), Some(id));
        }
        Ok(out)
    }

    /// Add a length-`cols` vector to every row.
    pub fn add_row_broadcast(&self, v: &Tensor) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if v.shape != [c] {
            return Err(Error::shape(format!(
                "add_row_broadcast: matrix {:?} with vector {:?}",
                self.shape, v.shape
            )));
        }
        let mut data = self.data.as_ref().clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += v.data[j];
            }
        }
        let mut out = Tensor::from_vec(self.shape.clone(), data)?;
        if let Some(tape) = Tensor::merged_tape(&[self, v]) {
            let (im, iv) = (self.node_id(), v.node_id());
            let id = tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    if let Some(im) = im {
                        sink.add(im, dout);
                    }
                    if let Some(iv) = iv {
                        let mut dv = vec![0.0; c];
                        for i in 0..r {
                            for j in 0..c {
                                dv[j] += dout[i * c + j];
                            }
                        }
                        sink.add_owned(iv, dv);
                    }
                }),
            );
            out = out.attach(Some(tape), Some(id));
        }
        Ok(out)
    }

    /// All pairwise squared Euclidean distances between rows: symmetric,
    /// zero diagonal. Computed pair-by-pair so no cancellation can push an
    /// entry negative.
    pub fn pairwise_sq_dist(&self) -> Result<Tensor> {
        let (s, d) = self.dims2()?;
        let mut data = vec![0.0; s * s];
        for i in 0..s {
            for j in (i + 1)..s {
                let a = &self.data[i * d..(i + 1) * d];
                let b = &self.data[j * d..(j + 1) * d];
                let mut acc = 0.0;
                for t in 0..d {
                    let diff = a[t] - b[t];
                    acc += diff * diff;
                }
                data[i * s + j] = acc;
                data[j * s + i] = acc;
            }
        }
        let mut out = Tensor::from_vec(vec![s, s], data)?;
        if let Some(nr) = &self.node {
            let ix = nr.id;
            let x = self.data.clone();
            let id = nr.tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    let mut dx = vec![0.0; s * d];
                    for i in 0..s {
                        for j in 0..s {
                            if i == j {
                                continue;
                            }
                            let g = dout[i * s + j];
                            if g == 0.0 {
                                continue;
                            }
                            for t in 0..d {
                                let diff = x[i * d + t] - x[j * d + t];
                                dx[i * d + t] += 2.0 * g * diff;
                                dx[j * d + t] -= 2.0 * g * diff;
                            }
                        }
                    }
                    sink.add_owned(ix, dx);
                }),
            );
            out = out.attach(Some(nr.tape.clone()), Some(id));
        }
        Ok(out)
    }

    /// Scale every row to unit Euclidean norm, clamping the denominator at `eps`.
    pub fn normalize_rows(&self, eps: f64) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut data = vec![0.0; r * c];
        let mut norms = vec![0.0; r];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
            norms[i] = norm;
            for j in 0..c {
                data[i * c + j] = row[j] / norm;
            }
        }
        let mut out = Tensor::from_vec(self.shape.clone(), data)?;
        if let Some(nr) = &self.node {
            let ix = nr.id;
            let x = self.data.clone();
            let y = out.data.clone();
            let id = nr.tape.push_op(
                out.numel(),
                Box::new(move |dout, sink| {
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        let raw_norm = x[i * c..(i + 1) * c].iter().map(|v| v * v).sum::<f64>().sqrt();
                        let clamped = raw_norm < eps;
                        let yr = &y[i * c..(i + 1) * c];
                        let dr = &dout[i * c..(i + 1) * c];
                        if clamped {
                            // Denominator is the constant eps here.
                            for j in 0..c {
                                dx[i * c + j] = dr[j] / norms[i];
                            }
                        } else {
                            let dot: f64 = dr.iter().zip(yr).map(|(d, o)| d * o).sum();
                            for j in 0..c {
                                dx[i * c + j] = (dr[j] - yr[j] * dot) / norms[i];
                            }
                        }
                    }
                    sink.add_owned(ix, dx);
                }),
            );
            out = out.attach(Some(nr.tape.clone()), Some(id));
        }
        Ok(out)
    }
}
