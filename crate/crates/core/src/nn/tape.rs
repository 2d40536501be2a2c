//! Reverse-mode autodiff over f64 matrices.
//!
//! A [`Tape`] records a computation graph of `Array2<f64>` values; calling
//! [`Tape::backward`] on a scalar (1×1) node walks the graph in reverse
//! and accumulates gradients for every node, including leaves. The graph
//! is rebuilt per example, which keeps dynamic shapes (variable sequence
//! lengths) trivial and is plenty fast at the model sizes used here.
//!
//! Row vectors are 1×d matrices; scalars are 1×1.

use ndarray::{Array1, Array2, Axis};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// (n×m) + (1×m), broadcast over rows.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    /// Row softmax; the additive mask is applied at forward time and is
    /// not needed for the backward pass (masked outputs are exactly 0).
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    ConcatCols(Var, Var),
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    MeanAll(Var),
    /// Mean binary cross-entropy of column logits against 0/1 targets.
    BceWithLogits {
        logits: Var,
        targets: Array1<f64>,
    },
    /// Mean softmax cross-entropy, one target class per row.
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

const LAYER_NORM_EPS: f64 = 1e-5;
const MASK_NEG: f64 = -1e30;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; zero-shaped `None` means the node
    /// did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads[v.0].take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn leaf_row(&mut self, row: &[f64]) -> Var {
        self.leaf(Array2::from_shape_vec((1, row.len()), row.to_vec()).expect("row shape"))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(value, Op::Add(a, b))
    }

    /// Broadcast-add a 1×m row to every row of an n×m matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.nodes[row.0].value.nrows(), 1);
        let value = &self.nodes[a.0].value + &self.nodes[row.0].value.row(0);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = &self.nodes[a.0].value * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// Row-wise softmax with an optional additive mask.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<Array2<f64>>) -> Var {
        let mut scores = self.nodes[a.0].value.clone();
        if let Some(m) = &mask {
            scores += m;
        }
        let value = softmax_rows_value(&scores);
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalization with learned 1×d gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let g = self.nodes[gamma.0].value.row(0).to_owned();
        let b = self.nodes[beta.0].value.row(0).to_owned();
        let mut out = xv.clone();
        for mut row in out.rows_mut() {
            let d = row.len() as f64;
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (i, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * g[i] + b[i];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta })
    }

    /// Stack rows `idx` of `table` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = &self.nodes[table.0].value;
        let mut out = Array2::zeros((idx.len(), t.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&t.row(i));
        }
        self.push(out, Op::GatherRows { table, idx: idx.to_vec() })
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        debug_assert_eq!(av.nrows(), bv.nrows());
        let mut out = Array2::zeros((av.nrows(), av.ncols() + bv.ncols()));
        out.slice_mut(ndarray::s![.., ..av.ncols()]).assign(av);
        out.slice_mut(ndarray::s![.., av.ncols()..]).assign(bv);
        self.push(out, Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.nodes[x.0].value.slice(ndarray::s![.., start..start + len]).to_owned();
        self.push(value, Op::SliceCols { x, start, len })
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let value = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        self.push(value, Op::MeanAll(a))
    }

    /// Mean binary cross-entropy with logits (numerically stable).
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let z = &self.nodes[logits.0].value;
        debug_assert_eq!(z.len(), targets.len());
        let mut total = 0.0;
        for (zi, &ti) in z.iter().zip(targets) {
            total += zi.max(0.0) - zi * ti + (-zi.abs()).exp().ln_1p();
        }
        let value = Array2::from_elem((1, 1), total / targets.len() as f64);
        self.push(value, Op::BceWithLogits { logits, targets: Array1::from(targets.to_vec()) })
    }

    /// Mean softmax cross-entropy; `targets[i]` is the class of row i.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Var {
        let z = &self.nodes[logits.0].value;
        debug_assert_eq!(z.nrows(), targets.len());
        let mut total = 0.0;
        for (row, &t) in z.rows().into_iter().zip(targets) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            total += lse - row[t];
        }
        let value = Array2::from_elem((1, 1), total / targets.len() as f64);
        self.push(value, Op::SoftmaxXent { logits, targets: targets.to_vec() })
    }

    /// Backpropagate from a scalar node, returning gradients for every
    /// node that influenced it.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.nodes[loss.0].value.dim(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].clone() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.nodes[b.0].value.t());
                    let db = self.nodes[a.0].value.t().dot(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let drow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *row, drow);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -g);
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.nodes[b.0].value;
                    let db = &g * &self.nodes[a.0].value;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, &g * *c),
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    acc(&mut grads, *a, &g * &(y * &y.mapv(|v| 1.0 - v)));
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    acc(&mut grads, *a, &g * &y.mapv(|v| 1.0 - v * v));
                }
                Op::Relu(a) => {
                    let y = &self.nodes[i].value;
                    let mask = y.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, *a, &g * &mask);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[i].value;
                    let gy = &g * y;
                    let rowsum = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *a, &gy - &(y * &rowsum));
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let xv = &self.nodes[x.0].value;
                    let gam = self.nodes[gamma.0].value.row(0).to_owned();
                    let d = xv.ncols() as f64;
                    let mut dx = Array2::zeros(xv.raw_dim());
                    let mut dgamma = Array2::zeros((1, xv.ncols()));
                    let mut dbeta = Array2::zeros((1, xv.ncols()));
                    for (r, row) in xv.rows().into_iter().enumerate() {
                        let mean = row.sum() / d;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let grow = g.row(r);
                        let gy: Vec<f64> =
                            grow.iter().zip(gam.iter()).map(|(a, b)| a * b).collect();
                        let mean_gy = gy.iter().sum::<f64>() / d;
                        let mean_gy_xhat =
                            gy.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d;
                        for c in 0..xv.ncols() {
                            dx[(r, c)] = inv * (gy[c] - mean_gy - xhat[c] * mean_gy_xhat);
                            dgamma[(0, c)] += grow[c] * xhat[c];
                            dbeta[(0, c)] += grow[c];
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, dgamma);
                    acc(&mut grads, *beta, dbeta);
                }
                Op::GatherRows { table, idx } => {
                    let t = &self.nodes[table.0].value;
                    let mut dt = Array2::zeros(t.raw_dim());
                    for (r, &row_idx) in idx.iter().enumerate() {
                        let mut target = dt.row_mut(row_idx);
                        target += &g.row(r);
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::ConcatCols(a, b) => {
                    let ac = self.nodes[a.0].value.ncols();
                    let da = g.slice(ndarray::s![.., ..ac]).to_owned();
                    let db = g.slice(ndarray::s![.., ac..]).to_owned();
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::SliceCols { x, start, len } => {
                    let xv = &self.nodes[x.0].value;
                    let mut dx = Array2::zeros(xv.raw_dim());
                    dx.slice_mut(ndarray::s![.., *start..start + len]).assign(&g);
                    acc(&mut grads, *x, dx);
                }
                Op::MeanAll(a) => {
                    let av = &self.nodes[a.0].value;
                    let scale = g[(0, 0)] / av.len() as f64;
                    acc(&mut grads, *a, Array2::from_elem(av.raw_dim(), scale));
                }
                Op::BceWithLogits { logits, targets } => {
                    let z = &self.nodes[logits.0].value;
                    let n = targets.len() as f64;
                    let scale = g[(0, 0)] / n;
                    let mut dz = z.clone();
                    for (d, &t) in dz.iter_mut().zip(targets.iter()) {
                        *d = (1.0 / (1.0 + (-*d).exp()) - t) * scale;
                    }
                    acc(&mut grads, *logits, dz);
                }
                Op::SoftmaxXent { logits, targets } => {
                    let z = &self.nodes[logits.0].value;
                    let n = targets.len() as f64;
                    let scale = g[(0, 0)] / n;
                    let mut dz = softmax_rows_value(z);
                    for (r, &t) in targets.iter().enumerate() {
                        dz[(r, t)] -= 1.0;
                    }
                    dz *= scale;
                    acc(&mut grads, *logits, dz);
                }
            }
        }
        Gradients { grads }
    }
}

fn acc(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &delta,
        slot @ None => *slot = Some(delta),
    }
}

fn softmax_rows_value(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Additive causal mask: position i may attend to positions ≤ i.
pub fn causal_mask(n: usize) -> Array2<f64> {
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            m[(i, j)] = MASK_NEG;
        }
    }
    m
}
