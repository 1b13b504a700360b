//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value in the graph is a 2-D matrix. Image feature maps use the
//! layout `rows = (image, y, x)` and `cols = channels`, so convolutions,
//! normalization and pooling all stay two-dimensional.

use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamId, ParamSet};

pub type Mat = Array2<f64>;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Spatial geometry of a 2-D convolution over a batch of feature maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

/// Feature-map shape for pooling ops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MapShape {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Rsqrt(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Rc<Vec<usize>>),
    SegmentSum(Var, Rc<Vec<usize>>),
    SegmentMean(Var, Rc<Vec<usize>>),
    ColMean(Var),
    RowSum(Var),
    SoftmaxRows(Var),
    SegmentSoftmax(Var, Rc<Vec<usize>>),
    L2NormalizeRows(Var),
    Reshape(Var),
    PickEntries(Var, Rc<Vec<(usize, usize)>>),
    Conv2d(Var, Var, ConvGeom, Mat),
    AvgPool2(Var, MapShape),
    MeanAll(Var),
}

struct Node {
    value: Mat,
    op: Op,
    tracked: bool,
}

/// A single forward pass; discarded after `backward`.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Parameter gradients; parameters that did not influence the output get zeros.
    pub fn param_grads(&self, params: &ParamSet) -> Vec<(ParamId, Mat)> {
        self.params
            .iter()
            .map(|&(id, v)| {
                let g = self.grads[v.0]
                    .clone()
                    .unwrap_or_else(|| Mat::zeros(params.get(id).raw_dim()));
                (id, g)
            })
            .collect()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Untracked leaf.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is recorded.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let trainable = params.is_trainable(id);
        let v = self.push(params.get(id).clone(), Op::Leaf, trainable);
        if trainable {
            self.params.insert(id, v);
        }
        v
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).dot(self.value(b));
        let t = self.tracked(&[a, b]);
        self.push(y, Op::MatMul(a, b), t)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).dot(&self.value(b).t());
        let t = self.tracked(&[a, b]);
        self.push(y, Op::MatMulT(a, b), t)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let y = self.value(a).t().to_owned();
        let t = self.tracked(&[a]);
        self.push(y, Op::Transpose(a), t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) + self.value(b);
        let t = self.tracked(&[a, b]);
        self.push(y, Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) - self.value(b);
        let t = self.tracked(&[a, b]);
        self.push(y, Op::Sub(a, b), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) * self.value(b);
        let t = self.tracked(&[a, b]);
        self.push(y, Op::Mul(a, b), t)
    }

    /// Adds a `1×C` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let y = self.value(a) + self.value(row);
        let t = self.tracked(&[a, row]);
        self.push(y, Op::AddRow(a, row), t)
    }

    pub fn sub_row(&mut self, a: Var, row: Var) -> Var {
        let y = self.value(a) - self.value(row);
        let t = self.tracked(&[a, row]);
        self.push(y, Op::SubRow(a, row), t)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let y = self.value(a) * self.value(row);
        let t = self.tracked(&[a, row]);
        self.push(y, Op::MulRow(a, row), t)
    }

    /// Scales each row of `a` by the matching entry of the `N×1` column `col`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let y = self.value(a) * self.value(col);
        let t = self.tracked(&[a, col]);
        self.push(y, Op::MulCol(a, col), t)
    }

    /// `scale * a + shift`
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let y = self.value(a).mapv(|x| scale * x + shift);
        let t = self.tracked(&[a]);
        self.push(y, Op::Affine(a, scale), t)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(sigmoid);
        let t = self.tracked(&[a]);
        self.push(y, Op::Sigmoid(a), t)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(f64::tanh);
        let t = self.tracked(&[a]);
        self.push(y, Op::Tanh(a), t)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(|x| x.max(0.0));
        let t = self.tracked(&[a]);
        self.push(y, Op::Relu(a), t)
    }

    /// `(a + eps)^(-1/2)`
    pub fn rsqrt(&mut self, a: Var, eps: f64) -> Var {
        let y = self.value(a).mapv(|x| 1.0 / (x + eps).sqrt());
        let t = self.tracked(&[a]);
        self.push(y, Op::Rsqrt(a), t)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let t = self.tracked(parts);
        self.push(y, Op::ConcatCols(parts.to_vec()), t)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(0), &views).expect("concat_rows: col counts differ");
        let t = self.tracked(parts);
        self.push(y, Op::ConcatRows(parts.to_vec()), t)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let y = self.value(a).slice(s![.., start..end]).to_owned();
        let t = self.tracked(&[a]);
        self.push(y, Op::SliceCols(a, start, end), t)
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let y = self.value(a).select(Axis(0), &idx);
        let t = self.tracked(&[a]);
        self.push(y, Op::GatherRows(a, idx), t)
    }

    /// Sums contiguous row segments; `offsets` has one more entry than segments.
    pub fn segment_sum(&mut self, a: Var, offsets: Rc<Vec<usize>>) -> Var {
        let y = segment_reduce(self.value(a), &offsets, false);
        let t = self.tracked(&[a]);
        self.push(y, Op::SegmentSum(a, offsets), t)
    }

    /// Averages contiguous row segments; an empty segment yields a zero row.
    pub fn segment_mean(&mut self, a: Var, offsets: Rc<Vec<usize>>) -> Var {
        let y = segment_reduce(self.value(a), &offsets, true);
        let t = self.tracked(&[a]);
        self.push(y, Op::SegmentMean(a, offsets), t)
    }

    pub fn col_mean(&mut self, a: Var) -> Var {
        let y = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("col_mean of empty matrix")
            .insert_axis(Axis(0));
        let t = self.tracked(&[a]);
        self.push(y, Op::ColMean(a), t)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let y = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let t = self.tracked(&[a]);
        self.push(y, Op::RowSum(a), t)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut y = self.value(a).clone();
        for mut row in y.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("contiguous row"));
        }
        let t = self.tracked(&[a]);
        self.push(y, Op::SoftmaxRows(a), t)
    }

    /// Softmax over contiguous segments of an `N×1` column.
    pub fn segment_softmax(&mut self, a: Var, offsets: Rc<Vec<usize>>) -> Var {
        let mut y = self.value(a).clone();
        {
            let col = y.as_slice_mut().expect("contiguous column");
            for w in offsets.windows(2) {
                softmax_in_place(&mut col[w[0]..w[1]]);
            }
        }
        let t = self.tracked(&[a]);
        self.push(y, Op::SegmentSoftmax(a, offsets), t)
    }

    /// Scales each row to unit length; zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let mut y = self.value(a).clone();
        for mut row in y.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row /= n;
            }
        }
        let t = self.tracked(&[a]);
        self.push(y, Op::L2NormalizeRows(a), t)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let y = Mat::from_shape_vec((rows, cols), flat).expect("reshape: size mismatch");
        let t = self.tracked(&[a]);
        self.push(y, Op::Reshape(a), t)
    }

    /// Collects `a[r, c]` for each listed entry into an `n×1` column.
    pub fn pick_entries(&mut self, a: Var, entries: Rc<Vec<(usize, usize)>>) -> Var {
        let src = self.value(a);
        let y = Mat::from_shape_fn((entries.len(), 1), |(i, _)| src[entries[i]]);
        let t = self.tracked(&[a]);
        self.push(y, Op::PickEntries(a, entries), t)
    }

    /// 2-D convolution; `w` is `(kernel·kernel·in_ch) × out_ch` in `(ky, kx, c)` row order.
    pub fn conv2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Var {
        let cols = im2col(self.value(x), &geom);
        let y = cols.dot(self.value(w));
        let t = self.tracked(&[x, w]);
        self.push(y, Op::Conv2d(x, w, geom, cols), t)
    }

    /// 2×2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, x: Var, shape: MapShape) -> Var {
        let y = avg_pool2_forward(self.value(x), &shape);
        let t = self.tracked(&[x]);
        self.push(y, Op::AvgPool2(x, shape), t)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = if v.is_empty() { 0.0 } else { v.sum() / v.len() as f64 };
        let t = self.tracked(&[a]);
        self.push(Mat::from_elem((1, 1), m), Op::MeanAll(a), t)
    }

    /// Back-propagates from `output`, seeding its gradient with ones.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Mat::ones(self.value(output).raw_dim()));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&k, &v)| (k, v)).collect();
        params.sort_by_key(|(id, _)| *id);
        Gradients { grads, params }
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.nodes[v.0].tracked {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let y = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].tracked {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.nodes[b.0].tracked {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.nodes[a.0].tracked {
                    self.accumulate(grads, *a, g.dot(self.value(*b)));
                }
                if self.nodes[b.0].tracked {
                    self.accumulate(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].tracked {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.nodes[b.0].tracked {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, r) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[r.0].tracked {
                    self.accumulate(grads, *r, col_sums(g));
                }
            }
            Op::SubRow(a, r) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[r.0].tracked {
                    self.accumulate(grads, *r, -col_sums(g));
                }
            }
            Op::MulRow(a, r) => {
                if self.nodes[a.0].tracked {
                    self.accumulate(grads, *a, g * self.value(*r));
                }
                if self.nodes[r.0].tracked {
                    self.accumulate(grads, *r, col_sums(&(g * self.value(*a))));
                }
            }
            Op::MulCol(a, c) => {
                if self.nodes[a.0].tracked {
                    self.accumulate(grads, *a, g * self.value(*c));
                }
                if self.nodes[c.0].tracked {
                    let gc = (g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accumulate(grads, *c, gc);
                }
            }
            Op::Affine(a, scale) => self.accumulate(grads, *a, g * *scale),
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d *= y * (1.0 - y));
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
                self.accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| {
                    if y <= 0.0 {
                        *d = 0.0
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Rsqrt(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d *= -0.5 * y * y * y);
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.nodes[p.0].tracked {
                        self.accumulate(grads, p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    if self.nodes[p.0].tracked {
                        self.accumulate(grads, p, g.slice(s![start..start + h, ..]).to_owned());
                    }
                    start += h;
                }
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![.., *start..*end]).assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::GatherRows(a, idx) => {
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                for (i, &r) in idx.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(i);
                }
                self.accumulate(grads, *a, d);
            }
            Op::SegmentSum(a, offsets) | Op::SegmentMean(a, offsets) => {
                let mean = matches!(self.nodes[i].op, Op::SegmentMean(..));
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                for (k, w) in offsets.windows(2).enumerate() {
                    let len = w[1] - w[0];
                    if len == 0 {
                        continue;
                    }
                    let scale = if mean { 1.0 / len as f64 } else { 1.0 };
                    let src = g.row(k);
                    for r in w[0]..w[1] {
                        d.row_mut(r).scaled_add(scale, &src);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::ColMean(a) => {
                let n = self.value(*a).nrows() as f64;
                let d = Mat::from_shape_fn(self.value(*a).raw_dim(), |(_, c)| g[[0, c]] / n);
                self.accumulate(grads, *a, d);
            }
            Op::RowSum(a) => {
                let d = Mat::from_shape_fn(self.value(*a).raw_dim(), |(r, _)| g[[r, 0]]);
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let mut d = g * y;
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let s = drow.sum();
                    drow.scaled_add(-s, &yrow);
                }
                self.accumulate(grads, *a, d);
            }
            Op::SegmentSoftmax(a, offsets) => {
                let mut d = g * y;
                {
                    let ys = y.as_slice().expect("contiguous");
                    let ds = d.as_slice_mut().expect("contiguous");
                    for w in offsets.windows(2) {
                        let s: f64 = ds[w[0]..w[1]].iter().sum();
                        for r in w[0]..w[1] {
                            ds[r] -= s * ys[r];
                        }
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::L2NormalizeRows(a) => {
                let x = self.value(*a);
                let mut d = Mat::zeros(x.raw_dim());
                for r in 0..x.nrows() {
                    let n = x.row(r).dot(&x.row(r)).sqrt();
                    if n == 0.0 {
                        continue;
                    }
                    let yg = y.row(r).dot(&g.row(r));
                    let mut drow = d.row_mut(r);
                    drow.assign(&g.row(r));
                    drow.scaled_add(-yg, &y.row(r));
                    drow /= n;
                }
                self.accumulate(grads, *a, d);
            }
            Op::Reshape(a) => {
                let flat: Vec<f64> = g.iter().copied().collect();
                let d = Mat::from_shape_vec(self.value(*a).raw_dim(), flat).expect("reshape back");
                self.accumulate(grads, *a, d);
            }
            Op::PickEntries(a, entries) => {
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                for (i, &e) in entries.iter().enumerate() {
                    d[e] += g[[i, 0]];
                }
                self.accumulate(grads, *a, d);
            }
            Op::Conv2d(x, w, geom, cols) => {
                if self.nodes[w.0].tracked {
                    self.accumulate(grads, *w, cols.t().dot(g));
                }
                if self.nodes[x.0].tracked {
                    let dcols = g.dot(&self.value(*w).t());
                    self.accumulate(grads, *x, col2im(&dcols, geom));
                }
            }
            Op::AvgPool2(x, shape) => {
                let d = avg_pool2_backward(g, shape, self.value(*x).ncols());
                self.accumulate(grads, *x, d);
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).len().max(1) as f64;
                let d = Mat::from_elem(self.value(*a).raw_dim(), g[[0, 0]] / n);
                self.accumulate(grads, *a, d);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

fn col_sums(g: &Mat) -> Mat {
    g.sum_axis(Axis(0)).insert_axis(Axis(0))
}

fn segment_reduce(a: &Mat, offsets: &[usize], mean: bool) -> Mat {
    let segments = offsets.len().saturating_sub(1);
    let mut y = Mat::zeros((segments, a.ncols()));
    for (k, w) in offsets.windows(2).enumerate() {
        if w[1] == w[0] {
            continue;
        }
        let mut row = y.row_mut(k);
        for r in w[0]..w[1] {
            row += &a.row(r);
        }
        if mean {
            row /= (w[1] - w[0]) as f64;
        }
    }
    y
}

fn im2col(x: &Mat, geom: &ConvGeom) -> Mat {
    let (oh, ow) = (geom.out_height(), geom.out_width());
    let k = geom.kernel;
    let c = geom.in_ch;
    let mut cols = Mat::zeros((geom.batch * oh * ow, k * k * c));
    let src = x.as_slice().expect("contiguous feature map");
    let dst = cols.as_slice_mut().expect("contiguous");
    let row_len = k * k * c;
    for n in 0..geom.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (n * oh + oy) * ow + ox;
                let base = row * row_len;
                for ky in 0..k {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy >= geom.height as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix < 0 || ix >= geom.width as isize {
                            continue;
                        }
                        let s = ((n * geom.height + iy as usize) * geom.width + ix as usize) * c;
                        let d = base + (ky * k + kx) * c;
                        dst[d..d + c].copy_from_slice(&src[s..s + c]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &Mat, geom: &ConvGeom) -> Mat {
    let (oh, ow) = (geom.out_height(), geom.out_width());
    let k = geom.kernel;
    let c = geom.in_ch;
    let mut dx = Mat::zeros((geom.batch * geom.height * geom.width, c));
    let src = dcols.as_slice().expect("contiguous");
    let dst = dx.as_slice_mut().expect("contiguous");
    let row_len = k * k * c;
    for n in 0..geom.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (n * oh + oy) * ow + ox;
                let base = row * row_len;
                for ky in 0..k {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy >= geom.height as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix < 0 || ix >= geom.width as isize {
                            continue;
                        }
                        let d = ((n * geom.height + iy as usize) * geom.width + ix as usize) * c;
                        let s = base + (ky * k + kx) * c;
                        for j in 0..c {
                            dst[d + j] += src[s + j];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn avg_pool2_forward(x: &Mat, shape: &MapShape) -> Mat {
    let (oh, ow) = (shape.height / 2, shape.width / 2);
    let c = x.ncols();
    let mut y = Mat::zeros((shape.batch * oh * ow, c));
    for n in 0..shape.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut row = y.row_mut((n * oh + oy) * ow + ox);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let r = (n * shape.height + 2 * oy + dy) * shape.width + 2 * ox + dx;
                        row.scaled_add(0.25, &x.row(r));
                    }
                }
            }
        }
    }
    y
}

fn avg_pool2_backward(g: &Mat, shape: &MapShape, channels: usize) -> Mat {
    let (oh, ow) = (shape.height / 2, shape.width / 2);
    let mut d = Mat::zeros((shape.batch * shape.height * shape.width, channels));
    for n in 0..shape.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = g.row((n * oh + oy) * ow + ox);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let r = (n * shape.height + 2 * oy + dy) * shape.width + 2 * ox + dx;
                        d.row_mut(r).scaled_add(0.25, &src);
                    }
                }
            }
        }
    }
    d
}
