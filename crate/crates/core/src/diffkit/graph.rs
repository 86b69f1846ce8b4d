use super::{DiffError, Grads, Matrix, ParamId, ParamStore};

/// A node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Param(ParamId),
    Input,
    EmbedBag {
        table: Var,
        bags: Vec<Vec<usize>>,
    },
    SelectRows {
        x: Var,
        idx: Vec<usize>,
    },
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    BlockMix {
        m: Var,
        x: Var,
    },
    Reshape(Var),
    Softmax {
        x: Var,
    },
    LayerNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Nll {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Matrix,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Input => "input",
            Op::EmbedBag { .. } => "embed_bag",
            Op::SelectRows { .. } => "select_rows",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::BlockMix { .. } => "block_mix",
            Op::Reshape(_) => "reshape",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Sum(_) => "sum",
            Op::Nll { .. } => "nll",
        }
    }
}

struct Node {
    op: Op,
    /// `None` for parameters, whose value lives in the store.
    value: Option<Matrix>,
}

/// Records a computation for reverse-mode differentiation.
pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let n = &self.nodes[v.0];
        match (&n.value, &n.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.store.get(*id),
            _ => unreachable!("only parameters are stored outside the graph"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(Op::Input, m)
    }

    /// Row `i` is the sum of `table` rows listed in `bags[i]`.
    pub fn embed_bag(&mut self, table: Var, bags: Vec<Vec<usize>>) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros(bags.len(), t.cols);
        for (i, bag) in bags.iter().enumerate() {
            for &r in bag {
                let src = t.row(r).to_vec();
                for (o, s) in out.row_mut(i).iter_mut().zip(src) {
                    *o += s;
                }
            }
        }
        self.push(Op::EmbedBag { table, bags }, out)
    }

    pub fn select_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let m = self.value(x);
        let mut out = Matrix::zeros(idx.len(), m.cols);
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(m.row(r));
        }
        self.push(Op::SelectRows { x, idx }, out)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), out)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_nt(self.value(b));
        self.push(Op::MatMulNT(a, b), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.shape(b), "add shapes");
        out.add_assign(self.value(b));
        self.push(Op::Add(a, b), out)
    }

    /// Adds the `1 × n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bias = self.value(b).clone();
        assert_eq!((1, self.shape(a).1), bias.shape(), "add_row shapes");
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            for (o, x) in out.row_mut(r).iter_mut().zip(&bias.data) {
                *o += x;
            }
        }
        self.push(Op::AddRow(a, b), out)
    }

    /// Multiplies every row of `a` elementwise by the `1 × n` row `g`.
    pub fn mul_row(&mut self, a: Var, g: Var) -> Var {
        let gain = self.value(g).clone();
        assert_eq!((1, self.shape(a).1), gain.shape(), "mul_row shapes");
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            for (o, x) in out.row_mut(r).iter_mut().zip(&gain.data) {
                *o *= x;
            }
        }
        self.push(Op::MulRow(a, g), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.shape(b), "mul shapes");
        for (o, x) in out.data.iter_mut().zip(&self.value(b).data) {
            *o *= x;
        }
        self.push(Op::Mul(a, b), out)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x *= k);
        self.push(Op::Scale(a, k), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = x.tanh());
        self.push(Op::Tanh(a), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(Op::Relu(a), out)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.rows, rows, "concat_cols rows");
            for r in 0..rows {
                out.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.cols, cols, "concat_rows cols");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(
            Op::ConcatRows(parts.to_vec()),
            Matrix::from_vec(rows, cols, data),
        )
    }

    /// Treats `x` as consecutive blocks of `k` rows (`m` is `k × k`) and
    /// left-multiplies each block by `m`.
    pub fn block_mix(&mut self, m: Var, x: Var) -> Var {
        let mm = self.value(m);
        let xv = self.value(x);
        let k = mm.rows;
        assert_eq!(mm.cols, k, "block_mix needs a square mixer");
        assert_eq!(xv.rows % k, 0, "block_mix rows");
        let mut out = Matrix::zeros(xv.rows, xv.cols);
        for b in 0..xv.rows / k {
            for i in 0..k {
                for j in 0..k {
                    let w = mm.at(i, j);
                    if w == 0.0 {
                        continue;
                    }
                    let src = (b * k + j) * xv.cols;
                    let dst = (b * k + i) * xv.cols;
                    for c in 0..xv.cols {
                        out.data[dst + c] += w * xv.data[src + c];
                    }
                }
            }
        }
        self.push(Op::BlockMix { m, x }, out)
    }

    /// Same row-major data viewed as `rows × cols`.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let m = self.value(x);
        assert_eq!(m.data.len(), rows * cols, "reshape size");
        let out = Matrix::from_vec(rows, cols, m.data.clone());
        self.push(Op::Reshape(x), out)
    }

    /// Row-wise softmax. With `causal`, row `i` only covers columns `0..=i`
    /// and the rest are exactly zero.
    pub fn softmax_rows(&mut self, x: Var, causal: bool) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            let width = if causal {
                (r + 1).min(xv.cols)
            } else {
                xv.cols
            };
            softmax_into(&xv.row(r)[..width], &mut out.row_mut(r)[..width]);
        }
        self.push(Op::Softmax { x }, out)
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.cols as f64;
        let mut out = Matrix::zeros(xv.rows, xv.cols);
        let mut inv_std = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            for (o, v) in out.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(Op::LayerNorm { x, inv_std }, out)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Op::Sum(x), Matrix::scalar(s))
    }

    /// `Σ_i weights[i] · (−log softmax(logits_i)[targets[i]])`, a `1 × 1`
    /// node.
    pub fn nll_rows(&mut self, logits: Var, targets: Vec<usize>, weights: Vec<f64>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len(), "one target per row");
        assert_eq!(lv.rows, weights.len(), "one weight per row");
        let mut probs = Matrix::zeros(lv.rows, lv.cols);
        let mut total = 0.0;
        for r in 0..lv.rows {
            let lp = log_softmax(lv.row(r));
            total -= weights[r] * lp[targets[r]];
            for (p, l) in probs.row_mut(r).iter_mut().zip(&lp) {
                *p = l.exp();
            }
        }
        self.push(
            Op::Nll {
                logits,
                targets,
                weights,
                probs,
            },
            Matrix::scalar(total),
        )
    }

    /// Gradients of the `1 × 1` node `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Grads, DiffError> {
        assert_eq!(self.shape(loss), (1, 1), "loss must be a scalar");
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(v) = &n.value {
                if !v.is_finite() {
                    return Err(DiffError::NonFinite {
                        node: self.node_name(i),
                    });
                }
            }
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut out = self.store.zeros_like();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !g.is_finite() {
                return Err(DiffError::NonFinite {
                    node: format!("grad of {}", self.node_name(i)),
                });
            }
            self.propagate(i, g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn node_name(&self, i: usize) -> String {
        match &self.nodes[i].op {
            Op::Param(id) => self.store.name(*id).to_string(),
            op => format!("{}#{i}", op.name()),
        }
    }

    fn propagate(&self, i: usize, g: Matrix, grads: &mut [Option<Matrix>], params: &mut Grads) {
        let mut acc = |v: Var, d: Matrix| match &mut grads[v.0] {
            Some(cur) => cur.add_assign(&d),
            slot @ None => *slot = Some(d),
        };
        let y = || self.nodes[i].value.as_ref().expect("computed node");
        match &self.nodes[i].op {
            Op::Param(id) => params.0[id.0].add_assign(&g),
            Op::Input => {}
            Op::EmbedBag { table, bags } => {
                let (r, c) = self.shape(*table);
                let mut d = Matrix::zeros(r, c);
                for (row, bag) in bags.iter().enumerate() {
                    for &t in bag {
                        for (o, x) in d.row_mut(t).iter_mut().zip(g.row(row)) {
                            *o += x;
                        }
                    }
                }
                acc(*table, d);
            }
            Op::SelectRows { x, idx } => {
                let (r, c) = self.shape(*x);
                let mut d = Matrix::zeros(r, c);
                for (row, &t) in idx.iter().enumerate() {
                    for (o, v) in d.row_mut(t).iter_mut().zip(g.row(row)) {
                        *o += v;
                    }
                }
                acc(*x, d);
            }
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_nt(self.value(*b)));
                acc(*b, self.value(*a).matmul_tn(&g));
            }
            Op::MatMulNT(a, b) => {
                acc(*a, g.matmul(self.value(*b)));
                acc(*b, g.matmul_tn(self.value(*a)));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g);
            }
            Op::AddRow(a, b) => {
                acc(*b, col_sums(&g));
                acc(*a, g);
            }
            Op::MulRow(a, gain) => {
                let av = self.value(*a);
                let gv = self.value(*gain);
                let mut da = g.clone();
                let mut dg = Matrix::zeros(1, g.cols);
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        da.data[r * g.cols + c] *= gv.data[c];
                        dg.data[c] += g.at(r, c) * av.at(r, c);
                    }
                }
                acc(*a, da);
                acc(*gain, dg);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = g.clone();
                let mut db = g;
                da.data.iter_mut().zip(&bv.data).for_each(|(d, x)| *d *= x);
                db.data.iter_mut().zip(&av.data).for_each(|(d, x)| *d *= x);
                acc(*a, da);
                acc(*b, db);
            }
            Op::Scale(a, k) => {
                let mut d = g;
                d.data.iter_mut().for_each(|x| *x *= k);
                acc(*a, d);
            }
            Op::Tanh(a) => {
                let mut d = g;
                d.data
                    .iter_mut()
                    .zip(&y().data)
                    .for_each(|(d, t)| *d *= 1.0 - t * t);
                acc(*a, d);
            }
            Op::Relu(a) => {
                let mut d = g;
                d.data
                    .iter_mut()
                    .zip(&self.value(*a).data)
                    .for_each(|(d, x)| {
                        if *x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let c = self.shape(*p).1;
                    let mut d = Matrix::zeros(g.rows, c);
                    for r in 0..g.rows {
                        d.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                    }
                    off += c;
                    acc(*p, d);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let (r, c) = self.shape(*p);
                    acc(
                        *p,
                        Matrix::from_vec(r, c, g.data[off * c..(off + r) * c].to_vec()),
                    );
                    off += r;
                }
            }
            Op::BlockMix { m, x } => {
                let mm = self.value(*m);
                let xv = self.value(*x);
                let k = mm.rows;
                let mut dm = Matrix::zeros(k, k);
                let mut dx = Matrix::zeros(xv.rows, xv.cols);
                for b in 0..xv.rows / k {
                    for i in 0..k {
                        let gi = g.row(b * k + i);
                        for j in 0..k {
                            let xj = xv.row(b * k + j);
                            dm.data[i * k + j] +=
                                gi.iter().zip(xj).map(|(a, b)| a * b).sum::<f64>();
                            let w = mm.at(i, j);
                            for (d, v) in dx.row_mut(b * k + j).iter_mut().zip(gi) {
                                *d += w * v;
                            }
                        }
                    }
                }
                acc(*m, dm);
                acc(*x, dx);
            }
            Op::Reshape(x) => {
                let (r, c) = self.shape(*x);
                acc(*x, Matrix::from_vec(r, c, g.data));
            }
            Op::Softmax { x } => {
                let yv = y();
                let mut d = Matrix::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let (yr, gr) = (yv.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, yy), gg) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yy * (gg - dot);
                    }
                }
                acc(*x, d);
            }
            Op::LayerNorm { x, inv_std } => {
                let yv = y();
                let n = g.cols as f64;
                let mut d = Matrix::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let (yr, gr) = (yv.row(r), g.row(r));
                    let mg = gr.iter().sum::<f64>() / n;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for ((o, yy), gg) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = inv_std[r] * (gg - mg - yy * mgy);
                    }
                }
                acc(*x, d);
            }
            Op::Sum(x) => {
                let (r, c) = self.shape(*x);
                acc(*x, Matrix::from_vec(r, c, vec![g.data[0]; r * c]));
            }
            Op::Nll {
                logits,
                targets,
                weights,
                probs,
            } => {
                let mut d = probs.clone();
                for r in 0..d.rows {
                    d.data[r * d.cols + targets[r]] -= 1.0;
                    let w = weights[r] * g.data[0];
                    d.row_mut(r).iter_mut().for_each(|x| *x *= w);
                }
                acc(*logits, d);
            }
        }
    }
}

fn col_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols);
    for r in 0..g.rows {
        for (o, x) in out.data.iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    out
}

fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// Numerically stable `log softmax` of one row.
pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}
