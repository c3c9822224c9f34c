//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! Every operation appends a node holding its value and the ids of its inputs.
//! Node ids grow monotonically, so walking the node list backwards is a valid
//! reverse topological order for [`Tape::backward`].


/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape does not match data");
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Self::from_vec(1, cols, data)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a (m×k) · b (k×n)`.
fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let av = a.data[i * a.cols + k];
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a (m×k) · bᵀ` for `b (n×k)`.
fn matmul_tb(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols, "matmul_tb shape mismatch");
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = ar.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ (k×m)ᵀ · b (m×n)` → `k×n`.
fn matmul_ta(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows, "matmul_ta shape mismatch");
    let mut out = Tensor::zeros(a.cols, b.cols);
    for r in 0..a.rows {
        let ar = a.row(r);
        let br = b.row(r);
        for (k, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out.data[k * b.cols..(k + 1) * b.cols];
            for (o, bv) in out_row.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulTransB(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    LayerNorm {
        x: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MaskedSoftmax(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    SumAll(Vec<Var>),
    Clamp(Var, f64, f64),
    Min(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `v`; zeros if `v` did not influence it.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "not a scalar");
        t.data[0]
    }

    /// Input or parameter node.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_tb(&mut self, a: Var, b: Var) -> Var {
        let v = matmul_tb(self.value(a), self.value(b));
        self.push(v, Op::MatMulTransB(a, b))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        Tensor::from_vec(
            ta.rows,
            ta.cols,
            ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::from_vec(t.rows, t.cols, t.data.iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, f64::min);
        self.push(v, Op::Min(a, b))
    }

    fn broadcast_row(&self, a: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tr) = (self.value(a), self.value(row));
        assert_eq!(tr.rows, 1, "broadcast operand must be a row vector");
        assert_eq!(ta.cols, tr.cols, "broadcast width mismatch");
        let mut out = ta.clone();
        for r in 0..out.rows {
            for (o, &b) in out.data[r * ta.cols..(r + 1) * ta.cols].iter_mut().zip(&tr.data) {
                *o = f(*o, b);
            }
        }
        out
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.broadcast_row(a, row, |x, y| x + y);
        self.push(v, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1×n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.broadcast_row(a, row, |x, y| x * y);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.map(a, |x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.map(a, |x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::exp);
        self.push(v, Op::Exp(a))
    }

    /// Elementwise clamp; gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.map(a, |x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Row-wise normalisation to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.cols as f64;
        let mut normalized = Vec::with_capacity(t.len());
        let mut inv_std = Vec::with_capacity(t.rows);
        for r in 0..t.rows {
            let row = t.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            normalized.extend(row.iter().map(|x| (x - mean) * is));
        }
        let value = Tensor::from_vec(t.rows, t.cols, normalized.clone());
        self.push(
            value,
            Op::LayerNorm {
                x: a,
                normalized,
                inv_std,
            },
        )
    }

    /// Row-wise softmax over the entries where `mask` is true; masked entries
    /// are exactly zero. Every row must allow at least one entry.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Var {
        let t = self.value(a);
        assert_eq!(mask.len(), t.len(), "mask shape mismatch");
        let mut out = Tensor::zeros(t.rows, t.cols);
        for r in 0..t.rows {
            let idx = r * t.cols..(r + 1) * t.cols;
            let row = &t.data[idx.clone()];
            let m = &mask[idx.clone()];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &ok)| ok)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(max > f64::NEG_INFINITY, "softmax row {r} fully masked");
            let mut sum = 0.0;
            for ((o, &x), &ok) in out.data[idx.clone()].iter_mut().zip(row).zip(m) {
                if ok {
                    *o = (x - max).exp();
                    sum += *o;
                }
            }
            for o in &mut out.data[idx] {
                *o /= sum;
            }
        }
        self.push(out, Op::MaskedSoftmax(a))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.cols, "column slice out of range");
        let mut data = Vec::with_capacity(t.rows * len);
        for r in 0..t.rows {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let v = Tensor::from_vec(t.rows, len, data);
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows, rows, "concat row mismatch");
                data.extend_from_slice(t.row(r));
            }
        }
        let v = Tensor::from_vec(rows, cols, data);
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// New matrix made of the listed rows of `a`.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let t = self.value(a);
        let mut data = Vec::with_capacity(rows.len() * t.cols);
        for &r in rows {
            data.extend_from_slice(t.row(r));
        }
        let v = Tensor::from_vec(rows.len(), t.cols, data);
        self.push(v, Op::GatherRows(a, rows.to_vec()))
    }

    /// Sum of all entries, as `1×1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn sum_all(&mut self, parts: &[Var]) -> Var {
        let mut acc = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            acc.add_assign(self.value(p));
        }
        self.push(acc, Op::SumAll(parts.to_vec()))
    }

    /// Gradients of `root` (seeded with ones) w.r.t. every node.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        let root_value = self.value(root);
        grads[root.0] = Some(Tensor::from_vec(
            root_value.rows,
            root_value.cols,
            vec![1.0; root_value.len()],
        ));

        fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                // leaves keep their gradient for the caller
                grads[id] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let ga = matmul_tb(&g, self.value(*b));
                    let gb = matmul_ta(self.value(*a), &g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulTransB(a, b) => {
                    // out = a bᵀ: da = g b, db = gᵀ a
                    let ga = matmul(&g, self.value(*b));
                    let gb = matmul_ta(&g, self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    let neg = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|x| -x).collect());
                    accumulate(&mut grads, *b, neg);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect(),
                    );
                    let gb = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&ta.data).map(|(x, y)| x * y).collect(),
                    );
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Min(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let mut ga = Tensor::zeros(g.rows, g.cols);
                    let mut gb = Tensor::zeros(g.rows, g.cols);
                    for i in 0..g.len() {
                        if ta.data[i] <= tb.data[i] {
                            ga.data[i] = g.data[i];
                        } else {
                            gb.data[i] = g.data[i];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (acc, x) in gr.data.iter_mut().zip(g.row(r)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let (ta, tr) = (self.value(*a), self.value(*row));
                    let mut gr = Tensor::zeros(1, g.cols);
                    let mut ga = g.clone();
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            let i = r * g.cols + c;
                            gr.data[c] += g.data[i] * ta.data[i];
                            ga.data[i] = g.data[i] * tr.data[c];
                        }
                    }
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Scale(a, s) => {
                    let ga = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|x| x * s).collect());
                    accumulate(&mut grads, *a, ga);
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Relu(a) => {
                    let ta = self.value(*a);
                    let ga = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data
                            .iter()
                            .zip(&ta.data)
                            .map(|(x, &v)| if v > 0.0 { *x } else { 0.0 })
                            .collect(),
                    );
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&y.data).map(|(x, t)| x * (1.0 - t * t)).collect(),
                    );
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let ga = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&y.data).map(|(x, e)| x * e).collect(),
                    );
                    accumulate(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let ta = self.value(*a);
                    let ga = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data
                            .iter()
                            .zip(&ta.data)
                            .map(|(x, &v)| if v >= *lo && v <= *hi { *x } else { 0.0 })
                            .collect(),
                    );
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    normalized,
                    inv_std,
                } => {
                    let n = g.cols as f64;
                    let mut gx = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        let xr = &normalized[r * g.cols..(r + 1) * g.cols];
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..g.cols {
                            gx.data[r * g.cols + c] = inv_std[r] * (gr[c] - mean_g - xr[c] * mean_gx);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MaskedSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..g.cols {
                            ga.data[r * g.cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        ga.data[r * cols + start..r * cols + start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, cols) = self.value(p).shape();
                        let mut gp = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            gp.data[r * cols..(r + 1) * cols]
                                .copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::GatherRows(a, rows) => {
                    let (ar, ac) = self.value(*a).shape();
                    let mut ga = Tensor::zeros(ar, ac);
                    for (i, &r) in rows.iter().enumerate() {
                        for (acc, x) in ga.data[r * ac..(r + 1) * ac].iter_mut().zip(g.row(i)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    let ga = Tensor::from_vec(rows, cols, vec![g.data[0]; rows * cols]);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumAll(parts) => {
                    for &p in parts {
                        accumulate(&mut grads, p, g.clone());
                    }
                }
            }
        }
        Gradients { grads, shapes }
    }
}
