//! Reverse-mode differentiation over a recorded list of matrix operations.
//!
//! Every operation appends its result to the tape; `backward` walks the tape
//! once in reverse. Batches are laid out as groups of consecutive rows (one
//! group of 11 object rows per play), and the attention and pooling ops work
//! within groups only.

use crate::tensor::{gemm, Matrix};

/// Probabilities below this are clamped before the logarithm.
pub const NLL_EPS: f64 = 1e-12;
const LN_EPS: f64 = 1e-5;

/// Sums in sorted order so the result does not depend on the order of the
/// terms; this keeps outputs exactly equivariant under object permutations.
fn order_free_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        rstd: Vec<f64>,
    },
    /// `s[g·n+i, j] = scale · q[g·n+i] · k[g·n+j]`
    GroupScores {
        q: Var,
        k: Var,
        group: usize,
        scale: f64,
    },
    SoftmaxRows(Var),
    /// `o[g·n+i] = Σ_j p[g·n+i, j] · v[g·n+j]`
    GroupMix {
        p: Var,
        v: Var,
        group: usize,
    },
    /// Per group, the row sums over each range, concatenated.
    GroupPool {
        x: Var,
        group: usize,
        ranges: Vec<(usize, usize)>,
    },
    Reshape(Var),
    Mse {
        pred: Var,
        target: Matrix,
        horizon: usize,
    },
    Nll {
        probs: Var,
        labels: Vec<usize>,
        alpha: Vec<f64>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// How many probabilities the NLL loss had to clamp.
    pub clamped: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Input)
    }

    /// A copy of `v` that gradients do not flow through.
    pub fn detach(&mut self, v: Var) -> Var {
        let m = self.value(v).clone();
        self.input(m)
    }

    pub fn param(&mut self, index: usize, m: &Matrix) -> Var {
        self.push(m.clone(), Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Matrix::zeros(va.rows, vb.cols);
        gemm(va, false, vb, false, 0.0, &mut out);
        self.push(out, Op::MatMul(a, b))
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(bias));
        assert_eq!((1, va.cols), vb.shape(), "bias shape");
        let mut out = va.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&vb.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add shapes");
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shapes");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let out = Matrix::from_vec(va.rows, va.cols, data);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let va = self.value(a);
        assert!(start + width <= va.cols, "column slice out of range");
        let mut out = Matrix::zeros(va.rows, width);
        for r in 0..va.rows {
            out.row_mut(r).copy_from_slice(&va.row(r)[start..start + width]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut c0 = 0;
        for &p in parts {
            let vp = self.value(p);
            assert_eq!(vp.rows, rows, "concat row counts");
            for r in 0..rows {
                out.row_mut(r)[c0..c0 + vp.cols].copy_from_slice(vp.row(r));
            }
            c0 += vp.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Row-wise layer normalization with a learned gain and bias (`1×n` each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let vx = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let n = vx.cols as f64;
        let mut xhat = Matrix::zeros(vx.rows, vx.cols);
        let mut out = Matrix::zeros(vx.rows, vx.cols);
        let mut rstd = Vec::with_capacity(vx.rows);
        for r in 0..vx.rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(s);
            for c in 0..vx.cols {
                let h = (row[c] - mean) * s;
                *xhat.at_mut(r, c) = h;
                *out.at_mut(r, c) = g.data[c] * h + b.data[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    pub fn group_scores(&mut self, q: Var, k: Var, group: usize, scale: f64) -> Var {
        let (vq, vk) = (self.value(q), self.value(k));
        assert_eq!(vq.shape(), vk.shape(), "query/key shapes");
        assert_eq!(vq.rows % group, 0, "rows must be whole groups");
        let mut out = Matrix::zeros(vq.rows, group);
        for g in 0..vq.rows / group {
            for i in 0..group {
                let qi = vq.row(g * group + i);
                for j in 0..group {
                    let kj = vk.row(g * group + j);
                    *out.at_mut(g * group + i, j) = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        self.push(out, Op::GroupScores { q, k, group, scale })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in row.iter_mut() {
                *v = (*v - m).exp();
            }
            let sum = order_free_sum(row.to_vec());
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn group_mix(&mut self, p: Var, v: Var, group: usize) -> Var {
        let (vp, vv) = (self.value(p), self.value(v));
        assert_eq!((vp.rows, vp.cols), (vv.rows, group), "mixing weights shape");
        let mut out = Matrix::zeros(vv.rows, vv.cols);
        for g in 0..vv.rows / group {
            for i in 0..group {
                let pi = vp.row(g * group + i);
                for c in 0..vv.cols {
                    let terms = pi.iter().enumerate().map(|(j, &w)| w * vv.at(g * group + j, c)).collect();
                    *out.at_mut(g * group + i, c) = order_free_sum(terms);
                }
            }
        }
        self.push(out, Op::GroupMix { p, v, group })
    }

    pub fn group_pool(&mut self, x: Var, group: usize, ranges: &[(usize, usize)]) -> Var {
        let vx = self.value(x);
        let d = vx.cols;
        let groups = vx.rows / group;
        let mut out = Matrix::zeros(groups, d * ranges.len());
        for g in 0..groups {
            for (slot, &(a, b)) in ranges.iter().enumerate() {
                for c in 0..d {
                    let terms = (a..b).map(|r| vx.at(g * group + r, c)).collect();
                    *out.at_mut(g, slot * d + c) = order_free_sum(terms);
                }
            }
        }
        self.push(
            out,
            Op::GroupPool {
                x,
                group,
                ranges: ranges.to_vec(),
            },
        )
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.len(), rows * cols, "reshape size");
        let out = Matrix::from_vec(rows, cols, va.data.clone());
        self.push(out, Op::Reshape(a))
    }

    /// `(1/rows) Σ_rows (1/2H) ‖pred − target‖²`; each row is one object.
    pub fn mse(&mut self, pred: Var, target: Matrix, horizon: usize) -> Var {
        let vp = self.value(pred);
        assert_eq!(vp.shape(), target.shape(), "prediction/target shapes");
        let sq: f64 = vp.data.iter().zip(&target.data).map(|(p, t)| (p - t).powi(2)).sum();
        let loss = sq / (2.0 * horizon as f64 * vp.rows.max(1) as f64);
        self.push(Matrix::scalar(loss), Op::Mse { pred, target, horizon })
    }

    /// `−(1/B) Σ_b α_{y_b} ln ŷ_{b,y_b}`, with `ŷ` clamped at [`NLL_EPS`].
    pub fn nll(&mut self, probs: Var, labels: &[usize], alpha: &[f64]) -> Var {
        let vp = self.value(probs);
        assert_eq!(vp.rows, labels.len(), "one label per row");
        assert_eq!(vp.cols, alpha.len(), "one weight per class");
        let mut loss = 0.0;
        let mut clamped = 0;
        for (r, &y) in labels.iter().enumerate() {
            let p = vp.at(r, y);
            if p < NLL_EPS {
                clamped += 1;
            }
            loss -= alpha[y] * p.max(NLL_EPS).ln();
        }
        if clamped > 0 {
            log::warn!("{clamped} predicted probabilities clamped at {NLL_EPS}");
        }
        self.clamped += clamped;
        let loss = loss / labels.len().max(1) as f64;
        self.push(
            Matrix::scalar(loss),
            Op::Nll {
                probs,
                labels: labels.to_vec(),
                alpha: alpha.to_vec(),
            },
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf,
    /// summed per parameter index. Unused parameters get zero matrices.
    pub fn backward(&self, loss: Var, shapes: &[(usize, usize)]) -> Vec<Matrix> {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut out: Vec<Matrix> = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, m: Matrix| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&m),
                slot @ None => *slot = Some(m),
            };
            match &node.op {
                Op::Input => {}
                Op::Param(p) => out[*p].add_assign(&g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = Matrix::zeros(va.rows, va.cols);
                    gemm(&g, false, vb, true, 0.0, &mut ga);
                    let mut gb = Matrix::zeros(vb.rows, vb.cols);
                    gemm(va, true, &g, false, 0.0, &mut gb);
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::AddBias(a, b) => {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(*b, gb);
                    acc(*a, g);
                }
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = Matrix::from_vec(g.rows, g.cols, g.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect());
                    let gb = Matrix::from_vec(g.rows, g.cols, g.data.iter().zip(&va.data).map(|(x, y)| x * y).collect());
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Scale(a, s) => acc(*a, g.map(|v| v * s)),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let data = g.data.iter().zip(&y.data).map(|(d, y)| d * y * (1.0 - y)).collect();
                    acc(*a, Matrix::from_vec(g.rows, g.cols, data));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let data = g.data.iter().zip(&y.data).map(|(d, y)| d * (1.0 - y * y)).collect();
                    acc(*a, Matrix::from_vec(g.rows, g.cols, data));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let data = g.data.iter().zip(&x.data).map(|(d, x)| if *x > 0.0 { *d } else { 0.0 }).collect();
                    acc(*a, Matrix::from_vec(g.rows, g.cols, data));
                }
                Op::SliceCols(a, start) => {
                    let va = self.value(*a);
                    let mut ga = Matrix::zeros(va.rows, va.cols);
                    for r in 0..g.rows {
                        ga.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(*a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut gp = Matrix::zeros(g.rows, w);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + w]);
                        }
                        acc(p, gp);
                        c0 += w;
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gain);
                    let n = g.cols as f64;
                    let mut gx = Matrix::zeros(g.rows, g.cols);
                    let mut gg = Matrix::zeros(1, g.cols);
                    let mut gbias = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        let (dy, h) = (g.row(r), xhat.row(r));
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for c in 0..g.cols {
                            let dh = dy[c] * gv.data[c];
                            mean_d += dh;
                            mean_dh += dh * h[c];
                            gg.data[c] += dy[c] * h[c];
                            gbias.data[c] += dy[c];
                        }
                        mean_d /= n;
                        mean_dh /= n;
                        for c in 0..g.cols {
                            let dh = dy[c] * gv.data[c];
                            *gx.at_mut(r, c) = rstd[r] * (dh - mean_d - h[c] * mean_dh);
                        }
                    }
                    acc(*x, gx);
                    acc(*gain, gg);
                    acc(*bias, gbias);
                }
                Op::GroupScores { q, k, group, scale } => {
                    let (vq, vk) = (self.value(*q), self.value(*k));
                    let mut gq = Matrix::zeros(vq.rows, vq.cols);
                    let mut gk = Matrix::zeros(vk.rows, vk.cols);
                    let n = *group;
                    for grp in 0..vq.rows / n {
                        for i in 0..n {
                            let ri = grp * n + i;
                            for j in 0..n {
                                let rj = grp * n + j;
                                let d = scale * g.at(ri, j);
                                if d == 0.0 {
                                    continue;
                                }
                                for c in 0..vq.cols {
                                    *gq.at_mut(ri, c) += d * vk.at(rj, c);
                                    *gk.at_mut(rj, c) += d * vq.at(ri, c);
                                }
                            }
                        }
                    }
                    acc(*q, gq);
                    acc(*k, gk);
                }
                Op::SoftmaxRows(a) => {
                    let p = &node.value;
                    let mut ga = Matrix::zeros(p.rows, p.cols);
                    for r in 0..p.rows {
                        let (pr, dr) = (p.row(r), g.row(r));
                        let dot: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for c in 0..p.cols {
                            *ga.at_mut(r, c) = pr[c] * (dr[c] - dot);
                        }
                    }
                    acc(*a, ga);
                }
                Op::GroupMix { p, v, group } => {
                    let (vp, vv) = (self.value(*p), self.value(*v));
                    let mut gp = Matrix::zeros(vp.rows, vp.cols);
                    let mut gv = Matrix::zeros(vv.rows, vv.cols);
                    let n = *group;
                    for grp in 0..vv.rows / n {
                        for i in 0..n {
                            let ri = grp * n + i;
                            let dout = g.row(ri);
                            for j in 0..n {
                                let rj = grp * n + j;
                                let vj = vv.row(rj);
                                *gp.at_mut(ri, j) = dout.iter().zip(vj).map(|(a, b)| a * b).sum();
                                let w = vp.at(ri, j);
                                for (o, d) in gv.row_mut(rj).iter_mut().zip(dout) {
                                    *o += w * d;
                                }
                            }
                        }
                    }
                    acc(*p, gp);
                    acc(*v, gv);
                }
                Op::GroupPool { x, group, ranges } => {
                    let vx = self.value(*x);
                    let d = vx.cols;
                    let mut gx = Matrix::zeros(vx.rows, d);
                    for grp in 0..vx.rows / group {
                        for (slot, &(a, b)) in ranges.iter().enumerate() {
                            let src = &g.row(grp)[slot * d..(slot + 1) * d];
                            for r in a..b {
                                gx.row_mut(grp * group + r).copy_from_slice(src);
                            }
                        }
                    }
                    acc(*x, gx);
                }
                Op::Reshape(a) => {
                    let va = self.value(*a);
                    acc(*a, Matrix::from_vec(va.rows, va.cols, g.data));
                }
                Op::Mse { pred, target, horizon } => {
                    let vp = self.value(*pred);
                    let k = g.data[0] / (*horizon as f64 * vp.rows.max(1) as f64);
                    let data = vp.data.iter().zip(&target.data).map(|(p, t)| k * (p - t)).collect();
                    acc(*pred, Matrix::from_vec(vp.rows, vp.cols, data));
                }
                Op::Nll { probs, labels, alpha } => {
                    let vp = self.value(*probs);
                    let mut gp = Matrix::zeros(vp.rows, vp.cols);
                    let k = g.data[0] / labels.len().max(1) as f64;
                    for (r, &y) in labels.iter().enumerate() {
                        let p = vp.at(r, y);
                        if p >= NLL_EPS {
                            *gp.at_mut(r, y) = -k * alpha[y] / p;
                        }
                    }
                    acc(*probs, gp);
                }
            }
        }
        out
    }
}
