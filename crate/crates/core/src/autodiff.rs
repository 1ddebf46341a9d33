//! A small reverse-mode automatic differentiation tape.
//!
//! Every model in this crate (denoisers, discriminator, adapters) is written as
//! a sequence of tape operations so that the same forward code yields gradients
//! with respect to parameters (training) and with respect to inputs (guidance).
//! Values are stored eagerly; `backward` walks the tape once in reverse.

use ndarray::{Array2, ArrayD, Axis, Ix2, IxDyn};

use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    AddBias(Var, Var),
    AddChannelBias(Var, Var),
    Silu(Var),
    Sigmoid(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    Gather(Var, Vec<usize>),
    Conv2d { x: Var, w: Var, b: Var },
    AvgPool2(Var),
    Upsample(Var, usize),
    SpatialMean(Var),
    Reshape(Var),
    Mean(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn as2(t: &Tensor) -> ndarray::ArrayView2<'_, f64> {
    t.view().into_dimensionality::<Ix2>().expect("rank-2 tensor expected")
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "rank-4 tensor expected, got {s:?}");
    (s[0], s[1], s[2], s[3])
}

/// Unfolds `x` [N,C,H,W] into rows (n,h,w) by columns (c,kh,kw), zero padding `k/2`.
fn im2col(x: &Tensor, k: usize) -> Array2<f64> {
    let (n, c, h, w) = dims4(x);
    let pad = (k / 2) as isize;
    let xs = x.as_slice().expect("contiguous");
    let ncol = c * k * k;
    let mut cols = Array2::<f64>::zeros((n * h * w, ncol));
    let cs = cols.as_slice_mut().expect("contiguous");
    for ni in 0..n {
        for yi in 0..h {
            for xi in 0..w {
                let row = ((ni * h + yi) * w + xi) * ncol;
                for ci in 0..c {
                    let base = (ni * c + ci) * h * w;
                    for ky in 0..k {
                        let sy = yi as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let sx = xi as isize + kx as isize - pad;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            cs[row + (ci * k + ky) * k + kx] = xs[base + sy as usize * w + sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, shape: (usize, usize, usize, usize), k: usize) -> Tensor {
    let (n, c, h, w) = shape;
    let pad = (k / 2) as isize;
    let ncol = c * k * k;
    let cs = cols.as_slice().expect("contiguous");
    let mut out = vec![0.0; n * c * h * w];
    for ni in 0..n {
        for yi in 0..h {
            for xi in 0..w {
                let row = ((ni * h + yi) * w + xi) * ncol;
                for ci in 0..c {
                    let base = (ni * c + ci) * h * w;
                    for ky in 0..k {
                        let sy = yi as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let sx = xi as isize + kx as isize - pad;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            out[base + sy as usize * w + sx as usize] += cs[row + (ci * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), out).expect("shape")
}

/// [N*H*W, C] row layout to [N, C, H, W].
fn rows_to_nchw(m: &Array2<f64>, n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let ms = m.as_standard_layout();
    let ms = ms.as_slice().expect("contiguous");
    let mut out = vec![0.0; n * c * h * w];
    for ni in 0..n {
        for p in 0..h * w {
            let r = (ni * h * w + p) * c;
            for ci in 0..c {
                out[(ni * c + ci) * h * w + p] = ms[r + ci];
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), out).expect("shape")
}

fn nchw_to_rows(t: &Tensor) -> Array2<f64> {
    let (n, c, h, w) = dims4(t);
    let ts = t.as_slice().expect("contiguous");
    let mut out = Array2::<f64>::zeros((n * h * w, c));
    let os = out.as_slice_mut().expect("contiguous");
    for ni in 0..n {
        for ci in 0..c {
            for p in 0..h * w {
                os[(ni * h * w + p) * c + ci] = ts[(ni * c + ci) * h * w + p];
            }
        }
    }
    out
}

fn contiguous(t: Tensor) -> Tensor {
    if t.is_standard_layout() {
        t
    } else {
        t.as_standard_layout().to_owned()
    }
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: contiguous(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "mul shape");
        let v = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    /// `[N,K] x [K,M]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = as2(self.value(a)).dot(&as2(self.value(b))).into_dyn();
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `[N,M] + [M]` broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let v = self.value(a) + self.value(bias);
        let ng = self.ng(a) || self.ng(bias);
        self.push(v, Op::AddBias(a, bias), ng)
    }

    /// `[N,C,H,W] + [N,C]` broadcast over the spatial axes.
    pub fn add_channel_bias(&mut self, a: Var, bias: Var) -> Var {
        let (n, c, _, _) = dims4(self.value(a));
        let b = self.value(bias);
        assert_eq!(b.shape(), &[n, c], "channel bias shape");
        let b4 = b.view().insert_axis(Axis(2)).insert_axis(Axis(3));
        let v = self.value(a) + &b4;
        let ng = self.ng(a) || self.ng(bias);
        self.push(v, Op::AddChannelBias(a, bias), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(silu);
        let ng = self.ng(a);
        self.push(v, Op::Silu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        let ng = self.ng(a);
        self.push(v, Op::Square(a), ng)
    }

    /// Concatenates rank-2 tensors along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| as2(self.value(*p))).collect();
        let v = ndarray::concatenate(Axis(1), &views)
            .expect("concat rows must agree")
            .into_dyn();
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Row lookup in a `[V,E]` table, producing `[idx.len(), E]`.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = as2(self.value(table));
        let v = t.select(Axis(0), idx).into_dyn();
        let ng = self.ng(table);
        self.push(v, Op::Gather(table, idx.to_vec()), ng)
    }

    /// Same-padded, stride-1 convolution: x `[N,Ci,H,W]`, w `[Co,Ci,k,k]`, b `[Co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (n, ci, h, wd) = dims4(self.value(x));
        let (co, wci, k, k2) = dims4(self.value(w));
        assert_eq!(ci, wci, "conv input channels");
        assert_eq!(k, k2, "square kernels only");
        assert!(k % 2 == 1, "odd kernels only");
        let cols = im2col(self.value(x), k);
        let wm = self
            .value(w)
            .view()
            .into_shape_with_order((co, ci * k * k))
            .expect("weight reshape");
        let mut out = cols.dot(&wm.t());
        out += &self
            .value(b)
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("bias rank 1");
        let v = rows_to_nchw(&out, n, co, h, wd);
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(v, Op::Conv2d { x, w, b }, ng)
    }

    /// 2x2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, a: Var) -> Var {
        let (n, c, h, w) = dims4(self.value(a));
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims");
        let (ho, wo) = (h / 2, w / 2);
        let xs = self.value(a).as_slice().expect("contiguous");
        let mut out = vec![0.0; n * c * ho * wo];
        for nc in 0..n * c {
            for y in 0..ho {
                for x in 0..wo {
                    let i = nc * h * w + 2 * y * w + 2 * x;
                    out[nc * ho * wo + y * wo + x] = 0.25 * (xs[i] + xs[i + 1] + xs[i + w] + xs[i + w + 1]);
                }
            }
        }
        let v = ArrayD::from_shape_vec(IxDyn(&[n, c, ho, wo]), out).expect("shape");
        let ng = self.ng(a);
        self.push(v, Op::AvgPool2(a), ng)
    }

    /// Nearest-neighbour spatial upsampling by an integer factor.
    pub fn upsample(&mut self, a: Var, factor: usize) -> Var {
        let (n, c, h, w) = dims4(self.value(a));
        let (ho, wo) = (h * factor, w * factor);
        let xs = self.value(a).as_slice().expect("contiguous");
        let mut out = vec![0.0; n * c * ho * wo];
        for nc in 0..n * c {
            for y in 0..ho {
                for x in 0..wo {
                    out[nc * ho * wo + y * wo + x] = xs[nc * h * w + (y / factor) * w + x / factor];
                }
            }
        }
        let v = ArrayD::from_shape_vec(IxDyn(&[n, c, ho, wo]), out).expect("shape");
        let ng = self.ng(a);
        self.push(v, Op::Upsample(a, factor), ng)
    }

    /// Mean over the spatial axes: `[N,C,H,W] -> [N,C]`.
    pub fn spatial_mean(&mut self, a: Var) -> Var {
        let (n, c, h, w) = dims4(self.value(a));
        let v = self
            .value(a)
            .view()
            .into_shape_with_order((n, c, h * w))
            .expect("reshape")
            .mean_axis(Axis(2))
            .expect("non-empty")
            .into_dyn();
        let ng = self.ng(a);
        self.push(v, Op::SpatialMean(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self
            .value(a)
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape element count");
        let ng = self.ng(a);
        self.push(v, Op::Reshape(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = ArrayD::from_elem(IxDyn(&[]), self.value(a).mean().unwrap_or(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Mean(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = ArrayD::from_elem(IxDyn(&[]), self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::Sum(a), ng)
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&mut self, pred: Var, target: Var) -> Var {
        let d = self.sub(pred, target);
        let sq = self.square(d);
        self.mean(sq)
    }

    /// Reverse pass from a single-element root.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!(self.value(root).len(), 1, "backward root must be a scalar");
        grads[root.0] = Some(ArrayD::from_elem(self.value(root).raw_dim(), 1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, -g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, &g * self.value(*b));
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g * *s),
                Op::MatMul(a, b) => {
                    let g2 = as2(&g);
                    if self.ng(*a) {
                        acc(&mut grads, *a, g2.dot(&as2(self.value(*b)).t()).into_dyn());
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, as2(self.value(*a)).t().dot(&g2).into_dyn());
                    }
                }
                Op::AddBias(a, bias) => {
                    if self.ng(*bias) {
                        acc(&mut grads, *bias, g.sum_axis(Axis(0)));
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::AddChannelBias(a, bias) => {
                    if self.ng(*bias) {
                        let gb = g.sum_axis(Axis(3)).sum_axis(Axis(2));
                        acc(&mut grads, *bias, gb);
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Silu(a) => {
                    let mut d = self.value(*a).mapv(|x| {
                        let s = sigmoid(x);
                        s * (1.0 + x * (1.0 - s))
                    });
                    d *= &g;
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = node.value.mapv(|s| s * (1.0 - s));
                    d *= &g;
                    acc(&mut grads, *a, d);
                }
                Op::Square(a) => {
                    let mut d = self.value(*a) * 2.0;
                    d *= &g;
                    acc(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let g2 = as2(&g);
                    let mut off = 0;
                    for p in parts {
                        let wdt = self.value(*p).shape()[1];
                        if self.ng(*p) {
                            let part = g2.slice(ndarray::s![.., off..off + wdt]).to_owned().into_dyn();
                            acc(&mut grads, *p, part);
                        }
                        off += wdt;
                    }
                }
                Op::Gather(table, idx) => {
                    let shape = self.value(*table).raw_dim();
                    let mut gt = ArrayD::<f64>::zeros(shape);
                    {
                        let g2 = as2(&g);
                        let mut gt2 = gt.view_mut().into_dimensionality::<Ix2>().expect("rank 2");
                        for (r, &ix) in idx.iter().enumerate() {
                            let mut row = gt2.row_mut(ix);
                            row += &g2.row(r);
                        }
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::Conv2d { x, w, b } => {
                    let xv = self.value(*x);
                    let (n, ci, h, wd) = dims4(xv);
                    let (co, _, k, _) = dims4(self.value(*w));
                    let gm = nchw_to_rows(&g);
                    if self.ng(*b) {
                        acc(&mut grads, *b, gm.sum_axis(Axis(0)).into_dyn());
                    }
                    if self.ng(*w) {
                        let cols = im2col(xv, k);
                        let gw = gm.t().dot(&cols);
                        let gw = gw
                            .into_shape_with_order(IxDyn(&[co, ci, k, k]))
                            .expect("weight grad shape");
                        acc(&mut grads, *w, gw);
                    }
                    if self.ng(*x) {
                        let wm = self
                            .value(*w)
                            .view()
                            .into_shape_with_order((co, ci * k * k))
                            .expect("weight reshape");
                        let gcols = gm.dot(&wm);
                        acc(&mut grads, *x, col2im(&gcols, (n, ci, h, wd), k));
                    }
                }
                Op::AvgPool2(a) => {
                    let (n, c, h, w) = dims4(self.value(*a));
                    let (ho, wo) = (h / 2, w / 2);
                    let gs = g.as_slice().expect("contiguous");
                    let mut out = vec![0.0; n * c * h * w];
                    for nc in 0..n * c {
                        for y in 0..h {
                            for x in 0..w {
                                out[nc * h * w + y * w + x] = 0.25 * gs[nc * ho * wo + (y / 2) * wo + x / 2];
                            }
                        }
                    }
                    acc(
                        &mut grads,
                        *a,
                        ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), out).expect("shape"),
                    );
                }
                Op::Upsample(a, f) => {
                    let (n, c, h, w) = dims4(self.value(*a));
                    let (ho, wo) = (h * f, w * f);
                    let gs = g.as_slice().expect("contiguous");
                    let mut out = vec![0.0; n * c * h * w];
                    for nc in 0..n * c {
                        for y in 0..ho {
                            for x in 0..wo {
                                out[nc * h * w + (y / f) * w + x / f] += gs[nc * ho * wo + y * wo + x];
                            }
                        }
                    }
                    acc(
                        &mut grads,
                        *a,
                        ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), out).expect("shape"),
                    );
                }
                Op::SpatialMean(a) => {
                    let (n, c, h, w) = dims4(self.value(*a));
                    let inv = 1.0 / (h * w) as f64;
                    let g4 = g.view().insert_axis(Axis(2)).insert_axis(Axis(3));
                    let full = g4.broadcast(IxDyn(&[n, c, h, w])).expect("broadcast").mapv(|v| v * inv);
                    acc(&mut grads, *a, full);
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).raw_dim();
                    acc(&mut grads, *a, g.into_shape_with_order(shape).expect("reshape back"));
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    let s = g.iter().next().copied().unwrap_or(0.0) / av.len().max(1) as f64;
                    acc(&mut grads, *a, ArrayD::from_elem(av.raw_dim(), s));
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    let s = g.iter().next().copied().unwrap_or(0.0);
                    acc(&mut grads, *a, ArrayD::from_elem(av.raw_dim(), s));
                }
            }
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{from_vec, randn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite-difference check of d(loss)/d(input) for a closure building
    /// the graph from a single variable input.
    fn check_grad(x0: Tensor, build: impl Fn(&mut Tape, Var) -> Var) {
        let mut tape = Tape::new();
        let x = tape.variable(x0.clone());
        let y = build(&mut tape, x);
        let g = tape.backward(y).take(x).expect("grad");
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp.as_slice_mut().unwrap()[i] += h;
            xm.as_slice_mut().unwrap()[i] -= h;
            let eval = |xx: Tensor| {
                let mut t = Tape::new();
                let v = t.constant(xx);
                let out = build(&mut t, v);
                t.value(out).iter().next().copied().unwrap()
            };
            let fd = (eval(xp) - eval(xm)) / (2.0 * h);
            let an = g.as_slice().unwrap()[i];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                "element {i}: analytic {an} vs fd {fd}"
            );
        }
    }

    #[test]
    fn conv_pool_upsample_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = randn(&mut rng, &[3, 2, 3, 3]);
        let b = randn(&mut rng, &[3]);
        let x0 = randn(&mut rng, &[2, 2, 4, 4]);
        check_grad(x0, move |t, x| {
            let wv = t.constant(w.clone());
            let bv = t.constant(b.clone());
            let c = t.conv2d(x, wv, bv);
            let s = t.silu(c);
            let p = t.avg_pool2(s);
            let u = t.upsample(p, 2);
            let q = t.square(u);
            t.mean(q)
        });
    }

    #[test]
    fn conv_weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = randn(&mut rng, &[2, 2, 3, 3]);
        let w0 = randn(&mut rng, &[2, 2, 3, 3]);
        check_grad(w0, move |t, w| {
            let xv = t.constant(x.clone());
            let bv = t.constant(from_vec(&[2], vec![0.1, -0.2]).unwrap());
            let c = t.conv2d(xv, w, bv);
            let m = t.spatial_mean(c);
            let q = t.square(m);
            t.sum(q)
        });
    }

    #[test]
    fn dense_ops_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let wm = randn(&mut rng, &[5, 3]);
        let table = randn(&mut rng, &[4, 2]);
        let bias = randn(&mut rng, &[3]);
        let x0 = randn(&mut rng, &[3, 3]);
        check_grad(x0, move |t, x| {
            let tab = t.constant(table.clone());
            let e = t.gather(tab, &[1, 3, 1]);
            let cat = t.concat_cols(&[x, e]);
            let wv = t.constant(wm.clone());
            let h = t.matmul(cat, wv);
            let bv = t.constant(bias.clone());
            let h = t.add_bias(h, bv);
            let s = t.sigmoid(h);
            let m = t.mul(s, x);
            let r = t.reshape(m, &[9]);
            let sc = t.scale(r, 0.5);
            t.mean(sc)
        });
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        let mut t = Tape::new();
        let tab = t.variable(from_vec(&[2, 1], vec![1.0, 2.0]).unwrap());
        let g = t.gather(tab, &[0, 0, 1]);
        let s = t.sum(g);
        let grads = t.backward(s);
        assert_eq!(grads.get(tab).unwrap().as_slice().unwrap(), &[2.0, 1.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let a = t.constant(from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let b = t.variable(from_vec(&[2], vec![3.0, 4.0]).unwrap());
        let m = t.mul(a, b);
        let s = t.sum(m);
        let grads = t.backward(s);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().as_slice().unwrap(), &[1.0, 2.0]);
    }
}
