//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation applied during one forward pass;
//! [`Graph::backward`] walks it in reverse and returns fresh gradients for
//! every node. Parameters are plain leaves: the caller copies them in,
//! reads their gradients out, and hands those to an optimizer.

mod optim;

pub use optim::{clip_grad_norm, global_norm, Adam, AdamConfig, EarlyStopping, PlateauScheduler};

use ndarray::{Array2, Array3, ArrayD, ArrayView2, Axis, Ix2, IxDyn};
use rand::RngCore;

use crate::{rng, Error, Result};

pub type Tensor = ArrayD<f64>;

/// BCE clamps probabilities to `[BCE_EPS, 1 - BCE_EPS]`.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Affine(Var, Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Conv1d(Var, Var, Var),
    Flatten(Var),
    Dropout(Var, Tensor),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mse(Var, Tensor),
    Bce(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn as2(t: &Tensor) -> ArrayView2<'_, f64> {
    t.view().into_dimensionality::<Ix2>().expect("checked 2-d")
}

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Shape { op, left: left.to_vec(), right: right.to_vec() }
}

/// `x · wᵀ + b` for `x` n×in, `w` out×in, `b` out.
pub fn affine_forward(x: ArrayView2<f64>, w: ArrayView2<f64>, b: &[f64]) -> Array2<f64> {
    let mut out = x.dot(&w.t());
    for mut row in out.rows_mut() {
        row.iter_mut().zip(b).for_each(|(o, bb)| *o += bb);
    }
    out
}

/// Valid 1-D convolution of n single-channel sequences (n×L) with C
/// kernels (C×k) plus per-channel bias, giving n×C×(L−k+1).
pub fn conv1d_forward(x: ArrayView2<f64>, k: ArrayView2<f64>, b: &[f64]) -> Array3<f64> {
    let (n, l) = x.dim();
    let (c, kw) = k.dim();
    let lo = l + 1 - kw;
    let x = x.as_standard_layout();
    let k = k.as_standard_layout();
    let (xs, ks) = (x.as_slice().expect("standard"), k.as_slice().expect("standard"));
    let mut out = Array3::zeros((n, c, lo));
    let os = out.as_slice_mut().expect("fresh array");
    for i in 0..n {
        let xi = &xs[i * l..(i + 1) * l];
        for ch in 0..c {
            let kc = &ks[ch * kw..(ch + 1) * kw];
            let o = &mut os[(i * c + ch) * lo..(i * c + ch + 1) * lo];
            o.fill(b[ch]);
            for (m, &kv) in kc.iter().enumerate() {
                for (oj, &xv) in o.iter_mut().zip(&xi[m..m + lo]) {
                    *oj += kv * xv;
                }
            }
        }
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.val(v)
    }

    /// Value of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.val(v).iter().next().copied().unwrap_or(f64::NAN)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.val(x).shape(), self.val(w).shape(), self.val(b).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err("affine", xs, ws));
        }
        if bs != [ws[0]] {
            return Err(shape_err("affine bias", ws, bs));
        }
        let b_vals = self.val(b).as_slice().expect("standard layout").to_vec();
        let out = affine_forward(as2(self.val(x)), as2(self.val(w)), &b_vals);
        Ok(self.push(out.into_dyn(), Op::Affine(x, w, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.val(a).mapv(|z| z.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.val(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn conv1d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (xs, ks, bs) = (self.val(x).shape(), self.val(k).shape(), self.val(b).shape());
        if xs.len() != 2 || ks.len() != 2 || ks[1] == 0 || ks[1] > xs[1] {
            return Err(shape_err("conv1d", xs, ks));
        }
        if bs != [ks[0]] {
            return Err(shape_err("conv1d bias", ks, bs));
        }
        let b_vals = self.val(b).as_slice().expect("standard layout").to_vec();
        let out = conv1d_forward(as2(self.val(x)), as2(self.val(k)), &b_vals);
        Ok(self.push(out.into_dyn(), Op::Conv1d(x, k, b)))
    }

    /// Collapses all but the first axis.
    pub fn flatten(&mut self, a: Var) -> Var {
        let v = self.val(a);
        let n = v.shape().first().copied().unwrap_or(1);
        let rest = v.len().checked_div(n).unwrap_or(0);
        let out = v.as_standard_layout().into_owned().into_shape_with_order(IxDyn(&[n, rest])).expect("same size");
        self.push(out, Op::Flatten(a))
    }

    /// Inverted dropout: zeroes each entry with probability `p` and scales
    /// survivors by `1 / (1 - p)`. Identity when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl RngCore) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - p);
        let mask = self.val(a).mapv(|_| if rng::uniform(rng) < p { 0.0 } else { keep });
        let out = self.val(a) * &mask;
        self.push(out, Op::Dropout(a, mask))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.val(a) + self.val(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.val(a) * self.val(b);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.val(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = ArrayD::from_elem(IxDyn(&[]), self.val(a).sum());
        self.push(out, Op::Sum(a))
    }

    fn target(&self, op: &'static str, pred: Var, target: &[f64]) -> Result<Tensor> {
        let p = self.val(pred);
        if p.len() != target.len() || target.is_empty() {
            return Err(shape_err(op, p.shape(), &[target.len()]));
        }
        Ok(ArrayD::from_shape_vec(p.raw_dim(), target.to_vec()).expect("same length"))
    }

    /// Mean squared residual.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let t = self.target("mse", pred, target)?;
        let n = t.len() as f64;
        let loss = self.val(pred).iter().zip(t.iter()).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n;
        Ok(self.push(ArrayD::from_elem(IxDyn(&[]), loss), Op::Mse(pred, t)))
    }

    /// Binary cross-entropy of probabilities against 0/1 targets.
    pub fn bce(&mut self, prob: Var, target: &[f64]) -> Result<Var> {
        let t = self.target("bce", prob, target)?;
        let n = t.len() as f64;
        let loss = -self
            .val(prob)
            .iter()
            .zip(t.iter())
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                y * p.ln() + (1.0 - y) * (1.0 - p).ln()
            })
            .sum::<f64>()
            / n;
        Ok(self.push(ArrayD::from_elem(IxDyn(&[]), loss), Op::Bce(prob, t)))
    }

    /// Gradients of the scalar `loss` with respect to every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(Error::Numerical(format!("backward on node {} before it was recorded", loss.0)));
        };
        if node.value.len() != 1 {
            return Err(Error::Numerical(format!("backward needs a scalar loss, got shape {:?}", node.value.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(ArrayD::ones(node.value.raw_dim()));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => grads[i] = Some(g),
                Op::Affine(x, w, b) => {
                    let g2 = as2(&g);
                    acc(&mut grads, *x, g2.dot(&as2(self.val(*w))).into_dyn());
                    acc(&mut grads, *w, g2.t().dot(&as2(self.val(*x))).into_dyn());
                    acc(&mut grads, *b, g2.sum_axis(Axis(0)).into_dyn());
                }
                Op::Relu(a) => {
                    let mut d = g.clone();
                    d.zip_mut_with(self.val(*a), |d, &z| {
                        if z <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g.clone();
                    d.zip_mut_with(&node.value, |d, &s| *d *= s * (1.0 - s));
                    acc(&mut grads, *a, d);
                }
                Op::Conv1d(x, k, b) => {
                    let xv = self.val(*x).as_standard_layout();
                    let kv = self.val(*k).as_standard_layout();
                    let gs = g.as_standard_layout();
                    let (n, l) = (xv.shape()[0], xv.shape()[1]);
                    let (c, kw) = (kv.shape()[0], kv.shape()[1]);
                    let lo = l + 1 - kw;
                    let (xs, ks, gsl) = (xv.as_slice().expect("standard"), kv.as_slice().expect("standard"), gs.as_slice().expect("standard"));
                    let mut dx = vec![0.0; n * l];
                    let mut dk = vec![0.0; c * kw];
                    let mut db = vec![0.0; c];
                    for s in 0..n {
                        let xi = &xs[s * l..(s + 1) * l];
                        let dxi = &mut dx[s * l..(s + 1) * l];
                        for ch in 0..c {
                            let gr = &gsl[(s * c + ch) * lo..(s * c + ch + 1) * lo];
                            db[ch] += gr.iter().sum::<f64>();
                            for m in 0..kw {
                                let kv = ks[ch * kw + m];
                                let mut acc_k = 0.0;
                                for ((d, &xv), &gv) in dxi[m..m + lo].iter_mut().zip(&xi[m..m + lo]).zip(gr) {
                                    *d += gv * kv;
                                    acc_k += gv * xv;
                                }
                                dk[ch * kw + m] += acc_k;
                            }
                        }
                    }
                    acc(&mut grads, *x, ArrayD::from_shape_vec(IxDyn(&[n, l]), dx).expect("shape"));
                    acc(&mut grads, *k, ArrayD::from_shape_vec(IxDyn(&[c, kw]), dk).expect("shape"));
                    acc(&mut grads, *b, ArrayD::from_shape_vec(IxDyn(&[c]), db).expect("shape"));
                }
                Op::Flatten(a) => {
                    let shape = self.val(*a).raw_dim();
                    acc(&mut grads, *a, g.into_shape_with_order(shape).expect("same size"));
                }
                Op::Dropout(a, mask) => acc(&mut grads, *a, g * mask),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * self.val(*b));
                    acc(&mut grads, *b, g * self.val(*a));
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::Sum(a) => {
                    let s = g.iter().next().copied().unwrap_or(0.0);
                    acc(&mut grads, *a, ArrayD::from_elem(self.val(*a).raw_dim(), s));
                }
                Op::Mse(p, t) => {
                    let s = g.iter().next().copied().unwrap_or(0.0);
                    let k = 2.0 * s / t.len() as f64;
                    acc(&mut grads, *p, (self.val(*p) - t) * k);
                }
                Op::Bce(p, t) => {
                    let s = g.iter().next().copied().unwrap_or(0.0);
                    let n = t.len() as f64;
                    let mut d = self.val(*p).clone();
                    d.zip_mut_with(t, |pv, &y| {
                        *pv = if *pv < BCE_EPS || *pv > 1.0 - BCE_EPS {
                            0.0
                        } else {
                            s * (-y / *pv + (1.0 - y) / (1.0 - *pv)) / n
                        };
                    });
                    acc(&mut grads, *p, d);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients indexed by graph node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros of `like`'s shape when `v` did not reach the loss.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor) -> Tensor {
        self.grads.get_mut(v.0).and_then(Option::take).unwrap_or_else(|| ArrayD::zeros(like.raw_dim()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};

    #[test]
    fn relu_forward_and_subgradient() {
        let mut g = Graph::new();
        let a = g.leaf(arr1(&[-1.0, 0.0, 2.0]).into_dyn());
        let r = g.relu(a);
        assert_eq!(g.value(r), &arr1(&[0.0, 0.0, 2.0]).into_dyn());
        let s = g.sum(r);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &arr1(&[0.0, 0.0, 1.0]).into_dyn());
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut g = Graph::new();
        let a = g.leaf(arr1(&[0.0]).into_dyn());
        let s = g.sigmoid(a);
        let l = g.sum(s);
        assert_eq!(g.scalar(l), 0.5);
        assert_eq!(g.backward(l).unwrap().get(a).unwrap()[[0]], 0.25);
    }

    #[test]
    fn mse_gradient_example() {
        let mut g = Graph::new();
        let p = g.leaf(arr1(&[1.0]).into_dyn());
        let l = g.mse(p, &[0.0]).unwrap();
        assert_eq!(g.scalar(l), 1.0);
        assert_eq!(g.backward(l).unwrap().get(p).unwrap()[[0]], 2.0);
        let same = g.mse(p, &[1.0]).unwrap();
        assert_eq!(g.scalar(same), 0.0);
    }

    #[test]
    fn bce_at_one_half_is_ln2() {
        let mut g = Graph::new();
        let p = g.leaf(arr1(&[0.5, 0.5, 0.5]).into_dyn());
        let l = g.bce(p, &[1.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(g.scalar(l), std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn bce_clamps_extremes() {
        let mut g = Graph::new();
        let p = g.leaf(arr1(&[0.0, 1.0]).into_dyn());
        let l = g.bce(p, &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(g.scalar(l), -(BCE_EPS).ln(), epsilon = 1e-6);
    }

    #[test]
    fn zero_affine_is_zero() {
        let mut g = Graph::new();
        let x = g.leaf(arr2(&[[1.0, -3.0], [2.0, 9.0]]).into_dyn());
        let w = g.leaf(ArrayD::zeros(IxDyn(&[4, 2])));
        let b = g.leaf(ArrayD::zeros(IxDyn(&[4])));
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 4]);
        assert!(g.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_output_shape() {
        let mut g = Graph::new();
        let x = g.leaf(ArrayD::zeros(IxDyn(&[1, 40])));
        let k = g.leaf(ArrayD::zeros(IxDyn(&[8, 3])));
        let b = g.leaf(ArrayD::zeros(IxDyn(&[8])));
        let y = g.conv1d(x, k, b).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 8, 38]);
        let f = g.flatten(y);
        assert_eq!(g.value(f).shape(), &[1, 8 * 38]);
    }

    #[test]
    fn shape_errors_report_both_shapes() {
        let mut g = Graph::new();
        let x = g.leaf(ArrayD::zeros(IxDyn(&[2, 3])));
        let w = g.leaf(ArrayD::zeros(IxDyn(&[4, 5])));
        let b = g.leaf(ArrayD::zeros(IxDyn(&[4])));
        let msg = g.affine(x, w, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
        assert!(g.mse(x, &[1.0]).is_err());
    }

    #[test]
    fn backward_needs_recorded_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(ArrayD::zeros(IxDyn(&[2])));
        assert!(g.backward(x).is_err());
        assert!(Graph::new().backward(x).is_err());
    }

    #[test]
    fn dropout_is_inverted_and_seeded() {
        let mut g = Graph::new();
        let x = g.leaf(ArrayD::ones(IxDyn(&[1000])));
        let d = g.dropout(x, 0.1, &mut rng::seeded(3));
        let v = g.value(d);
        assert!(v.iter().all(|&e| e == 0.0 || (e - 1.0 / 0.9).abs() < 1e-15));
        let kept = v.iter().filter(|&&e| e > 0.0).count();
        assert!((850..950).contains(&kept), "{kept}");
        assert_eq!(g.dropout(x, 0.0, &mut rng::seeded(3)), x);
    }
}
