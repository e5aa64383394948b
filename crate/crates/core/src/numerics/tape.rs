// Index-style loops are the house style in the numeric kernels below:
// forward and backward bodies mirror each other line by line.
#![allow(clippy::needless_range_loop)]

use super::real::Real;
use super::tensor::Tensor;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Reduction applied by [`Tape::cross_entropy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

const NORM_EPS: f64 = 1e-12;

enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Transpose { x: Var },
    Add { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    ConcatCols { a: Var, b: Var },
    ConcatRows { parts: Vec<Var> },
    SliceCols { x: Var, start: usize, len: usize },
    SelectRows { x: Var, indices: Vec<usize> },
    GatherElems { x: Var, indices: Vec<usize> },
    RowSoftmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    Gelu { x: Var },
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    GlobalAvgPool { x: Var },
    SumAll { x: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, reduction: Reduction },
    CosineRows { a: Var, b: Var },
    L2NormalizeRows { x: Var },
}

struct Node<F: Real> {
    value: Tensor<F>,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode autodiff tape.
///
/// Forward calls append nodes; [`Tape::backward`] walks the recorded graph
/// in reverse and accumulates gradients into per-node buffers. A tape is
/// built fresh for every forward pass.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite values produced by an op");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads[v.0].as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. `requires_grad` marks it as a leaf whose
    /// gradient should be retained through `backward`.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    /// Re-records a value as a gradient-free leaf (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.leaf(value, false)
    }

    // ---- forward ops -----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(
            av.shape().len() == 2 && bv.shape().len() == 2 && av.cols() == bv.rows(),
            "matmul shape mismatch: {:?} x {:?}",
            av.shape(),
            bv.shape()
        );
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![F::ZERO; m * n];
        matmul_raw(av.data(), bv.data(), m, k, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::new(vec![m, n], out), Op::MatMul { a, b }, ng)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        let src = xv.data();
        let mut out = vec![F::ZERO; n * d];
        for i in 0..n {
            for j in 0..d {
                out[j * n + i] = src[i * d + j];
            }
        }
        let ng = self.needs(x);
        self.push(Tensor::new(vec![d, n], out), Op::Transpose { x }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.shape(),
            bv.shape(),
            "add shape mismatch: {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let data: Vec<F> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = av.shape().to_vec();
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, data), Op::Add { a, b }, ng)
    }

    /// Adds a length-`d` bias vector to every row of an `[n, d]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert!(
            xv.shape().len() == 2 && bv.shape() == [xv.cols()],
            "add_bias shape mismatch: {:?} vs {:?}",
            xv.shape(),
            bv.shape()
        );
        let (n, d) = (xv.rows(), xv.cols());
        let mut data = xv.data().to_vec();
        for r in 0..n {
            for c in 0..d {
                data[r * d + c] += bv.data()[c];
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        self.push(Tensor::new(vec![n, d], data), Op::AddBias { x, bias }, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.shape(),
            bv.shape(),
            "mul shape mismatch: {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let data: Vec<F> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = av.shape().to_vec();
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, data), Op::Mul { a, b }, ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let fc = F::from_f64(c);
        let xv = self.value(x);
        let data: Vec<F> = xv.data().iter().map(|&v| v * fc).collect();
        let shape = xv.shape().to_vec();
        let ng = self.needs(x);
        self.push(Tensor::new(shape, data), Op::Scale { x, c }, ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(
            av.shape().len() == 2 && bv.shape().len() == 2 && av.rows() == bv.rows(),
            "concat_cols shape mismatch: {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let (n, da, db) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(n * (da + db));
        for r in 0..n {
            data.extend_from_slice(&av.data()[r * da..(r + 1) * da]);
            data.extend_from_slice(&bv.data()[r * db..(r + 1) * db]);
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::new(vec![n, da + db], data), Op::ConcatCols { a, b }, ng)
    }

    /// Vertically stacks matrices sharing a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let d = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(
                pv.cols(),
                d,
                "concat_rows column mismatch: {:?} vs [_, {}]",
                pv.shape(),
                d
            );
            rows += pv.rows();
        }
        let mut data = Vec::with_capacity(rows * d);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(
            Tensor::new(vec![rows, d], data),
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            ng,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        assert!(
            start + len <= d,
            "slice_cols [{start}, {start}+{len}) out of {:?}",
            xv.shape()
        );
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&xv.data()[r * d + start..r * d + start + len]);
        }
        let ng = self.needs(x);
        self.push(Tensor::new(vec![n, len], data), Op::SliceCols { x, start, len }, ng)
    }

    /// Gathers rows of `x` at `indices`. Backward scatter-adds, so repeated
    /// indices accumulate.
    pub fn select_rows(&mut self, x: Var, indices: &[usize]) -> Var {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        for &i in indices {
            assert!(i < n, "select_rows index {i} out of {:?}", xv.shape());
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&xv.data()[i * d..(i + 1) * d]);
        }
        let ng = self.needs(x);
        self.push(
            Tensor::new(vec![indices.len(), d], data),
            Op::SelectRows {
                x,
                indices: indices.to_vec(),
            },
            ng,
        )
    }

    /// Token/row embedding lookup: rows of `table` at `ids`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Var {
        self.select_rows(table, ids)
    }

    /// Element gather from the flattened source into `out_shape`.
    pub fn gather_elems(&mut self, x: Var, indices: &[usize], out_shape: Vec<usize>) -> Var {
        let xv = self.value(x);
        let n = xv.numel();
        let expected: usize = out_shape.iter().product();
        assert_eq!(
            indices.len(),
            expected,
            "gather_elems wants {} indices for shape {:?}",
            expected,
            out_shape
        );
        for &i in indices {
            assert!(i < n, "gather_elems index {i} out of {n} elements");
        }
        let data: Vec<F> = indices.iter().map(|&i| xv.data()[i]).collect();
        let ng = self.needs(x);
        self.push(
            Tensor::new(out_shape, data),
            Op::GatherElems {
                x,
                indices: indices.to_vec(),
            },
            ng,
        )
    }

    /// Softmax over each row, computed with max subtraction.
    pub fn row_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        let mut data = vec![F::ZERO; n * d];
        for r in 0..n {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mut mx = row[0];
            for &v in row {
                mx = mx.maximum(v);
            }
            let mut sum = F::ZERO;
            for c in 0..d {
                let e = (row[c] - mx).exp();
                data[r * d + c] = e;
                sum += e;
            }
            for c in 0..d {
                data[r * d + c] = data[r * d + c] / sum;
            }
        }
        let ng = self.needs(x);
        self.push(Tensor::new(vec![n, d], data), Op::RowSoftmax { x }, ng)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let (n, d) = (xv.rows(), xv.cols());
        assert!(
            gv.shape() == [d] && bv.shape() == [d],
            "layer_norm param shapes {:?}/{:?} vs input {:?}",
            gv.shape(),
            bv.shape(),
            xv.shape()
        );
        let feps = F::from_f64(eps);
        let inv_d = F::from_f64(1.0 / d as f64);
        let mut data = vec![F::ZERO; n * d];
        for r in 0..n {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<F>() * inv_d;
            let mut var = F::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let inv_std = F::ONE / (var + feps).sqrt();
            for c in 0..d {
                data[r * d + c] = (row[c] - mean) * inv_std * gv.data()[c] + bv.data()[c];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            Tensor::new(vec![n, d], data),
            Op::LayerNorm { x, gamma, beta, eps },
            ng,
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data: Vec<F> = xv.data().iter().map(|&v| gelu_fwd(v)).collect();
        let shape = xv.shape().to_vec();
        let ng = self.needs(x);
        self.push(Tensor::new(shape, data), Op::Gelu { x }, ng)
    }

    /// 2-D convolution: `x` is `[c_in, h, w]`, `w` is `[c_out, c_in, k, k]`,
    /// `b` is `[c_out]`. Zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let xs = xv.shape().to_vec();
        let ws = wv.shape().to_vec();
        assert!(
            xs.len() == 3 && ws.len() == 4 && xs[0] == ws[1] && ws[2] == ws[3],
            "conv2d shape mismatch: input {:?} vs kernel {:?}",
            xs,
            ws
        );
        let (ci, h, wd) = (xs[0], xs[1], xs[2]);
        let (co, k) = (ws[0], ws[2]);
        assert_eq!(bv.shape(), [co], "conv2d bias shape {:?} vs {co} channels", bv.shape());
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![F::ZERO; co * oh * ow];
        for oc in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bv.data()[oc];
                    for ic in 0..ci {
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += xv.data()[(ic * h + iy as usize) * wd + ix as usize]
                                    * wv.data()[((oc * ci + ic) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(
            Tensor::new(vec![co, oh, ow], out),
            Op::Conv2d { x, w, b, stride, pad },
            ng,
        )
    }

    /// Mean over the spatial dims of `[c, h, w]`, producing `[1, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let xs = xv.shape().to_vec();
        assert_eq!(xs.len(), 3, "global_avg_pool on shape {:?}", xs);
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let inv = F::from_f64(1.0 / (h * w) as f64);
        let mut out = vec![F::ZERO; c];
        for ic in 0..c {
            let mut s = F::ZERO;
            for v in &xv.data()[ic * h * w..(ic + 1) * h * w] {
                s += *v;
            }
            out[ic] = s * inv;
        }
        let ng = self.needs(x);
        self.push(Tensor::new(vec![1, c], out), Op::GlobalAvgPool { x }, ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().copied().sum::<F>();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumAll { x }, ng)
    }

    /// Negative log-likelihood of `targets` under row-softmax of `logits`,
    /// with the stated reduction. Log-sum-exp is max-subtracted.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], reduction: Reduction) -> Var {
        let lv = self.value(logits);
        let (n, c) = (lv.rows(), lv.cols());
        assert_eq!(
            targets.len(),
            n,
            "cross_entropy: {} targets for logits {:?}",
            targets.len(),
            lv.shape()
        );
        for &t in targets {
            assert!(t < c, "cross_entropy target {t} out of {c} classes");
        }
        let mut total = F::ZERO;
        for r in 0..n {
            let row = &lv.data()[r * c..(r + 1) * c];
            let mut mx = row[0];
            for &v in row {
                mx = mx.maximum(v);
            }
            let mut sum = F::ZERO;
            for &v in row {
                sum += (v - mx).exp();
            }
            total += mx + sum.ln() - row[targets[r]];
        }
        if reduction == Reduction::Mean {
            total *= F::from_f64(1.0 / n as f64);
        }
        let ng = self.needs(logits);
        self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                reduction,
            },
            ng,
        )
    }

    /// Row-wise cosine similarity between equal-shape matrices, `[n, 1]`.
    /// Norms are floored at 1e-12.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.shape(),
            bv.shape(),
            "cosine_rows shape mismatch: {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let (n, d) = (av.rows(), av.cols());
        let mut out = vec![F::ZERO; n];
        for r in 0..n {
            let ra = &av.data()[r * d..(r + 1) * d];
            let rb = &bv.data()[r * d..(r + 1) * d];
            let (dot, na, nb) = row_dot_norms(ra, rb);
            out[r] = dot / (na * nb);
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::new(vec![n, 1], out), Op::CosineRows { a, b }, ng)
    }

    /// Scales each row to unit L2 norm (norm floored at 1e-12).
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        let mut data = vec![F::ZERO; n * d];
        for r in 0..n {
            let row = &xv.data()[r * d..(r + 1) * d];
            let nr = row_norm(row);
            for c in 0..d {
                data[r * d + c] = row[c] / nr;
            }
        }
        let ng = self.needs(x);
        self.push(Tensor::new(vec![n, d], data), Op::L2NormalizeRows { x }, ng)
    }

    // ---- backward --------------------------------------------------------

    /// Accumulates gradients of the scalar `loss` into every reachable node
    /// that needs them.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(
            self.nodes[loss.0].value.numel(),
            1,
            "backward target must be scalar, got {:?}",
            self.nodes[loss.0].value.shape()
        );
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(Tensor::scalar(F::ONE));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].clone() else {
                continue;
            };
            self.backprop_node(i, &g);
        }
    }

    fn acc_grad(&mut self, v: Var, update: impl FnOnce(&mut [F])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        if self.grads[v.0].is_none() {
            self.grads[v.0] = Some(Tensor::zeros(self.nodes[v.0].value.shape().to_vec()));
        }
        update(self.grads[v.0].as_mut().unwrap().data_mut());
    }

    fn backprop_node(&mut self, i: usize, g: &Tensor<F>) {
        // Ops are cheap to destructure; values are read from `self.nodes`.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.value(a).rows(), self.value(a).cols());
                let n = self.value(b).cols();
                if self.needs(a) {
                    let bd = self.value(b).data().to_vec();
                    self.acc_grad(a, |da| {
                        for r in 0..m {
                            for p in 0..k {
                                let mut s = F::ZERO;
                                for j in 0..n {
                                    s += g.data()[r * n + j] * bd[p * n + j];
                                }
                                da[r * k + p] += s;
                            }
                        }
                    });
                }
                if self.needs(b) {
                    let ad = self.value(a).data().to_vec();
                    self.acc_grad(b, |db| {
                        for r in 0..m {
                            for p in 0..k {
                                let av = ad[r * k + p];
                                for j in 0..n {
                                    db[p * n + j] += av * g.data()[r * n + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::Transpose { x } => {
                let x = *x;
                let (n, d) = (self.value(x).rows(), self.value(x).cols());
                self.acc_grad(x, |dx| {
                    for r in 0..n {
                        for c in 0..d {
                            dx[r * d + c] += g.data()[c * n + r];
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.acc_grad(a, |da| {
                    for (dv, gv) in da.iter_mut().zip(g.data()) {
                        *dv += *gv;
                    }
                });
                self.acc_grad(b, |db| {
                    for (dv, gv) in db.iter_mut().zip(g.data()) {
                        *dv += *gv;
                    }
                });
            }
            Op::AddBias { x, bias } => {
                let (x, bias) = (*x, *bias);
                let (n, d) = (self.value(x).rows(), self.value(x).cols());
                self.acc_grad(x, |dx| {
                    for (dv, gv) in dx.iter_mut().zip(g.data()) {
                        *dv += *gv;
                    }
                });
                self.acc_grad(bias, |db| {
                    for r in 0..n {
                        for c in 0..d {
                            db[c] += g.data()[r * d + c];
                        }
                    }
                });
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    let bd = self.value(b).data().to_vec();
                    self.acc_grad(a, |da| {
                        for ((dv, gv), bv) in da.iter_mut().zip(g.data()).zip(&bd) {
                            *dv += *gv * *bv;
                        }
                    });
                }
                if self.needs(b) {
                    let ad = self.value(a).data().to_vec();
                    self.acc_grad(b, |db| {
                        for ((dv, gv), av) in db.iter_mut().zip(g.data()).zip(&ad) {
                            *dv += *gv * *av;
                        }
                    });
                }
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, F::from_f64(*c));
                self.acc_grad(x, |dx| {
                    for (dv, gv) in dx.iter_mut().zip(g.data()) {
                        *dv += *gv * c;
                    }
                });
            }
            Op::ConcatCols { a, b } => {
                let (a, b) = (*a, *b);
                let (n, da_c) = (self.value(a).rows(), self.value(a).cols());
                let db_c = self.value(b).cols();
                let w = da_c + db_c;
                self.acc_grad(a, |da| {
                    for r in 0..n {
                        for c in 0..da_c {
                            da[r * da_c + c] += g.data()[r * w + c];
                        }
                    }
                });
                self.acc_grad(b, |db| {
                    for r in 0..n {
                        for c in 0..db_c {
                            db[r * db_c + c] += g.data()[r * w + da_c + c];
                        }
                    }
                });
            }
            Op::ConcatRows { parts } => {
                let parts = parts.clone();
                let d = self.value(parts[0]).cols();
                let mut row0 = 0;
                for p in parts {
                    let rows = self.value(p).rows();
                    let base = row0 * d;
                    self.acc_grad(p, |dp| {
                        for idx in 0..rows * d {
                            dp[idx] += g.data()[base + idx];
                        }
                    });
                    row0 += rows;
                }
            }
            Op::SliceCols { x, start, len } => {
                let (x, start, len) = (*x, *start, *len);
                let (n, d) = (self.value(x).rows(), self.value(x).cols());
                self.acc_grad(x, |dx| {
                    for r in 0..n {
                        for c in 0..len {
                            dx[r * d + start + c] += g.data()[r * len + c];
                        }
                    }
                });
            }
            Op::SelectRows { x, indices } => {
                let x = *x;
                let indices = indices.clone();
                let d = self.value(x).cols();
                self.acc_grad(x, |dx| {
                    for (out_r, &src_r) in indices.iter().enumerate() {
                        for c in 0..d {
                            dx[src_r * d + c] += g.data()[out_r * d + c];
                        }
                    }
                });
            }
            Op::GatherElems { x, indices } => {
                let x = *x;
                let indices = indices.clone();
                self.acc_grad(x, |dx| {
                    for (out_i, &src_i) in indices.iter().enumerate() {
                        dx[src_i] += g.data()[out_i];
                    }
                });
            }
            Op::RowSoftmax { x } => {
                let x = *x;
                let out = self.nodes[i].value.clone();
                let (n, d) = (out.rows(), out.cols());
                self.acc_grad(x, |dx| {
                    for r in 0..n {
                        let s = &out.data()[r * d..(r + 1) * d];
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let mut dot = F::ZERO;
                        for c in 0..d {
                            dot += gr[c] * s[c];
                        }
                        for c in 0..d {
                            dx[r * d + c] += s[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (x, gamma, beta, eps) = (*x, *gamma, *beta, *eps);
                let xv = self.value(x).clone();
                let gv = self.value(gamma).clone();
                let (n, d) = (xv.rows(), xv.cols());
                let inv_d = F::from_f64(1.0 / d as f64);
                let feps = F::from_f64(eps);
                // Precompute per-row normalized values.
                let mut xhat = vec![F::ZERO; n * d];
                let mut inv_std = vec![F::ZERO; n];
                for r in 0..n {
                    let row = &xv.data()[r * d..(r + 1) * d];
                    let mean = row.iter().copied().sum::<F>() * inv_d;
                    let mut var = F::ZERO;
                    for &v in row {
                        let c = v - mean;
                        var += c * c;
                    }
                    var *= inv_d;
                    inv_std[r] = F::ONE / (var + feps).sqrt();
                    for c in 0..d {
                        xhat[r * d + c] = (row[c] - mean) * inv_std[r];
                    }
                }
                self.acc_grad(gamma, |dg| {
                    for r in 0..n {
                        for c in 0..d {
                            dg[c] += g.data()[r * d + c] * xhat[r * d + c];
                        }
                    }
                });
                self.acc_grad(beta, |db| {
                    for r in 0..n {
                        for c in 0..d {
                            db[c] += g.data()[r * d + c];
                        }
                    }
                });
                self.acc_grad(x, |dx| {
                    for r in 0..n {
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut sum_dxhat = F::ZERO;
                        let mut sum_dxhat_xhat = F::ZERO;
                        for c in 0..d {
                            let dxh = gr[c] * gv.data()[c];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xh[c];
                        }
                        for c in 0..d {
                            let dxh = gr[c] * gv.data()[c];
                            dx[r * d + c] +=
                                inv_std[r] * (dxh - (sum_dxhat + xh[c] * sum_dxhat_xhat) * inv_d);
                        }
                    }
                });
            }
            Op::Gelu { x } => {
                let x = *x;
                let xv = self.value(x).data().to_vec();
                self.acc_grad(x, |dx| {
                    for (idx, dv) in dx.iter_mut().enumerate() {
                        *dv += g.data()[idx] * gelu_bwd(xv[idx]);
                    }
                });
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (x, w, b, stride, pad) = (*x, *w, *b, *stride, *pad);
                let xs = self.value(x).shape().to_vec();
                let ws = self.value(w).shape().to_vec();
                let (ci, h, wd) = (xs[0], xs[1], xs[2]);
                let (co, k) = (ws[0], ws[2]);
                let os = self.nodes[i].value.shape().to_vec();
                let (oh, ow) = (os[1], os[2]);
                self.acc_grad(b, |db| {
                    for oc in 0..co {
                        for v in &g.data()[oc * oh * ow..(oc + 1) * oh * ow] {
                            db[oc] += *v;
                        }
                    }
                });
                if self.needs(w) {
                    let xd = self.value(x).data().to_vec();
                    self.acc_grad(w, |dw| {
                        conv2d_scatter(
                            &xd, g.data(), None, Some(dw), None, ci, h, wd, co, k, oh, ow, stride,
                            pad,
                        );
                    });
                }
                if self.needs(x) {
                    let wdt = self.value(w).data().to_vec();
                    self.acc_grad(x, |dx| {
                        conv2d_scatter(
                            &[], g.data(), Some(&wdt), None, Some(dx), ci, h, wd, co, k, oh, ow,
                            stride, pad,
                        );
                    });
                }
            }
            Op::GlobalAvgPool { x } => {
                let x = *x;
                let xs = self.value(x).shape().to_vec();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let inv = F::from_f64(1.0 / (h * w) as f64);
                self.acc_grad(x, |dx| {
                    for ic in 0..c {
                        let gv = g.data()[ic] * inv;
                        for v in &mut dx[ic * h * w..(ic + 1) * h * w] {
                            *v += gv;
                        }
                    }
                });
            }
            Op::SumAll { x } => {
                let x = *x;
                let gv = g.data()[0];
                self.acc_grad(x, |dx| {
                    for v in dx.iter_mut() {
                        *v += gv;
                    }
                });
            }
            Op::CrossEntropy { logits, targets, reduction } => {
                let logits = *logits;
                let targets = targets.clone();
                let reduction = *reduction;
                let lv = self.value(logits).clone();
                let (n, c) = (lv.rows(), lv.cols());
                let scale = match reduction {
                    Reduction::Mean => g.data()[0] * F::from_f64(1.0 / n as f64),
                    Reduction::Sum => g.data()[0],
                };
                self.acc_grad(logits, |dl| {
                    for r in 0..n {
                        let row = &lv.data()[r * c..(r + 1) * c];
                        let mut mx = row[0];
                        for &v in row {
                            mx = mx.maximum(v);
                        }
                        let mut sum = F::ZERO;
                        for &v in row {
                            sum += (v - mx).exp();
                        }
                        for j in 0..c {
                            let p = (row[j] - mx).exp() / sum;
                            let ind = if j == targets[r] { F::ONE } else { F::ZERO };
                            dl[r * c + j] += (p - ind) * scale;
                        }
                    }
                });
            }
            Op::CosineRows { a, b } => {
                let (a, b) = (*a, *b);
                let av = self.value(a).clone();
                let bv = self.value(b).clone();
                let (n, d) = (av.rows(), av.cols());
                let out = self.nodes[i].value.clone();
                if self.needs(a) {
                    self.acc_grad(a, |da| {
                        for r in 0..n {
                            let ra = &av.data()[r * d..(r + 1) * d];
                            let rb = &bv.data()[r * d..(r + 1) * d];
                            let (_, na, nb) = row_dot_norms(ra, rb);
                            let cos = out.data()[r];
                            let gr = g.data()[r];
                            for c in 0..d {
                                da[r * d + c] +=
                                    gr * (rb[c] / (na * nb) - cos * ra[c] / (na * na));
                            }
                        }
                    });
                }
                if self.needs(b) {
                    self.acc_grad(b, |db| {
                        for r in 0..n {
                            let ra = &av.data()[r * d..(r + 1) * d];
                            let rb = &bv.data()[r * d..(r + 1) * d];
                            let (_, na, nb) = row_dot_norms(ra, rb);
                            let cos = out.data()[r];
                            let gr = g.data()[r];
                            for c in 0..d {
                                db[r * d + c] +=
                                    gr * (ra[c] / (na * nb) - cos * rb[c] / (nb * nb));
                            }
                        }
                    });
                }
            }
            Op::L2NormalizeRows { x } => {
                let x = *x;
                let xv = self.value(x).clone();
                let (n, d) = (xv.rows(), xv.cols());
                self.acc_grad(x, |dx| {
                    for r in 0..n {
                        let row = &xv.data()[r * d..(r + 1) * d];
                        let nr = row_norm(row);
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let mut dot = F::ZERO;
                        for c in 0..d {
                            dot += row[c] * gr[c];
                        }
                        let nr3 = nr * nr * nr;
                        for c in 0..d {
                            dx[r * d + c] += gr[c] / nr - row[c] * dot / nr3;
                        }
                    }
                });
            }
        }
    }
}

fn matmul_raw<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

fn row_norm<F: Real>(row: &[F]) -> F {
    let mut s = F::ZERO;
    for &v in row {
        s += v * v;
    }
    s.sqrt().maximum(F::from_f64(NORM_EPS))
}

fn row_dot_norms<F: Real>(a: &[F], b: &[F]) -> (F, F, F) {
    let mut dot = F::ZERO;
    for (x, y) in a.iter().zip(b) {
        dot += *x * *y;
    }
    (dot, row_norm(a), row_norm(b))
}

fn gelu_fwd<F: Real>(x: F) -> F {
    let c = F::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let k = F::from_f64(0.044_715);
    let half = F::from_f64(0.5);
    let inner = c * (x + k * x * x * x);
    half * x * (F::ONE + inner.tanh())
}

fn gelu_bwd<F: Real>(x: F) -> F {
    let c = F::from_f64(0.797_884_560_802_865_4);
    let k = F::from_f64(0.044_715);
    let half = F::from_f64(0.5);
    let three_k = F::from_f64(3.0 * 0.044_715);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let sech2 = F::ONE - t * t;
    half * (F::ONE + t) + half * x * sech2 * c * (F::ONE + three_k * x * x)
}

/// Shared scatter loop for conv2d weight and input gradients.
#[allow(clippy::too_many_arguments)]
fn conv2d_scatter<F: Real>(
    x: &[F],
    g: &[F],
    w: Option<&[F]>,
    dw: Option<&mut [F]>,
    dx: Option<&mut [F]>,
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    k: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
) {
    let mut dw = dw;
    let mut dx = dx;
    for oc in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g[(oc * oh + oy) * ow + ox];
                for ic in 0..ci {
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let xi = (ic * h + iy as usize) * wd + ix as usize;
                            let wi = ((oc * ci + ic) * k + ky) * k + kx;
                            if let Some(dw) = dw.as_deref_mut() {
                                dw[wi] += x[xi] * gv;
                            }
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[xi] += w.unwrap()[wi] * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}
