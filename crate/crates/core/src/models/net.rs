use ndarray::{ArrayD, ArrayView2, Ix2, IxDyn};
use rand::RngCore;

use super::{Init, ModelKind, ParamSet};
use crate::grad::{affine_forward, conv1d_forward, sigmoid, Graph, Tensor, Var};
use crate::{rng, Error, Result};

pub(crate) const HIDDEN1: usize = 64;
pub(crate) const HIDDEN2: usize = 32;
pub(crate) const CONV_CHANNELS: usize = 8;
pub(crate) const CONV_KERNEL: usize = 3;
pub(crate) const CNN_DENSE: usize = 32;

/// Model outputs per row: regression value and, for the dual-task MLP,
/// the classification probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    pub reg: Vec<f64>,
    pub prob: Option<Vec<f64>>,
}

/// `(name, shape, fan_in, fan_out)`; fans are zero for biases.
fn layout(kind: ModelKind, f: usize) -> Vec<(&'static str, Vec<usize>, usize, usize)> {
    match kind {
        ModelKind::Mlp => vec![
            ("w1", vec![HIDDEN1, f], f, HIDDEN1),
            ("b1", vec![HIDDEN1], 0, 0),
            ("w2", vec![HIDDEN2, HIDDEN1], HIDDEN1, HIDDEN2),
            ("b2", vec![HIDDEN2], 0, 0),
            ("w_reg", vec![1, HIDDEN2], HIDDEN2, 1),
            ("b_reg", vec![1], 0, 0),
            ("w_cls", vec![1, HIDDEN2], HIDDEN2, 1),
            ("b_cls", vec![1], 0, 0),
        ],
        ModelKind::Cnn => {
            let flat = CONV_CHANNELS * (f + 1).saturating_sub(CONV_KERNEL);
            vec![
                ("conv_k", vec![CONV_CHANNELS, CONV_KERNEL], CONV_KERNEL, CONV_CHANNELS * CONV_KERNEL),
                ("conv_b", vec![CONV_CHANNELS], 0, 0),
                ("w_dense", vec![CNN_DENSE, flat], flat, CNN_DENSE),
                ("b_dense", vec![CNN_DENSE], 0, 0),
                ("w_out", vec![1, CNN_DENSE], CNN_DENSE, 1),
                ("b_out", vec![1], 0, 0),
            ]
        }
        ModelKind::Svr => vec![("w", vec![f], 0, 0), ("b", vec![1], 0, 0)],
    }
}

/// Xavier-uniform weights and zero biases, drawn in layout order.
pub(crate) fn init_params(kind: ModelKind, f: usize, init: Init, rng: &mut impl RngCore) -> ParamSet {
    let mut names = Vec::new();
    let mut values = Vec::new();
    for (name, shape, fan_in, fan_out) in layout(kind, f) {
        let mut t = ArrayD::zeros(IxDyn(&shape));
        if init == Init::Xavier && fan_in > 0 {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            t.mapv_inplace(|_| (2.0 * rng::uniform(rng) - 1.0) * a);
        }
        names.push(name.to_owned());
        values.push(t);
    }
    ParamSet { names, values }
}

fn m2(t: &Tensor) -> ArrayView2<'_, f64> {
    t.view().into_dimensionality::<Ix2>().expect("2-d parameter")
}

fn v1(t: &Tensor) -> &[f64] {
    t.as_slice().expect("contiguous parameter")
}

fn relu_inplace(a: &mut ndarray::Array2<f64>) {
    a.mapv_inplace(|z| z.max(0.0));
}

fn check_cols(x: &ArrayView2<f64>, w: &Tensor) -> Result<()> {
    if x.ncols() != w.shape()[1] {
        return Err(Error::Shape { op: "forward", left: vec![x.nrows(), x.ncols()], right: w.shape().to_vec() });
    }
    Ok(())
}

/// Inference pass of the dual-task MLP (dropout off).
pub fn mlp_forward(p: &ParamSet, x: ArrayView2<f64>) -> Result<Heads> {
    let v = &p.values;
    check_cols(&x, &v[0])?;
    let mut h1 = affine_forward(x, m2(&v[0]), v1(&v[1]));
    relu_inplace(&mut h1);
    let mut h2 = affine_forward(h1.view(), m2(&v[2]), v1(&v[3]));
    relu_inplace(&mut h2);
    let reg = affine_forward(h2.view(), m2(&v[4]), v1(&v[5])).into_raw_vec_and_offset().0;
    let prob = affine_forward(h2.view(), m2(&v[6]), v1(&v[7])).mapv(sigmoid).into_raw_vec_and_offset().0;
    Ok(Heads { reg, prob: Some(prob) })
}

/// Inference pass of the CNN.
pub fn cnn_forward(p: &ParamSet, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    let v = &p.values;
    let n = x.nrows();
    let mut conv = conv1d_forward(x, m2(&v[0]), v1(&v[1]));
    conv.mapv_inplace(|z| z.max(0.0));
    let flat_len = conv.len() / n.max(1);
    let flat = conv.into_shape_with_order((n, flat_len)).expect("same size");
    check_cols(&flat.view(), &v[2])?;
    let mut h = affine_forward(flat.view(), m2(&v[2]), v1(&v[3]));
    relu_inplace(&mut h);
    Ok(affine_forward(h.view(), m2(&v[4]), v1(&v[5])).into_raw_vec_and_offset().0)
}

/// Records the dual-task MLP on `g` and returns `(reg, prob)` nodes.
pub fn dual_task_graph(g: &mut Graph, p: &[Var], x: Var, dropout: f64, rng: &mut impl RngCore) -> Result<(Var, Var)> {
    let z1 = g.affine(x, p[0], p[1])?;
    let h1 = g.relu(z1);
    let h1 = g.dropout(h1, dropout, rng);
    let z2 = g.affine(h1, p[2], p[3])?;
    let h2 = g.relu(z2);
    let h2 = g.dropout(h2, dropout, rng);
    let reg = g.affine(h2, p[4], p[5])?;
    let logit = g.affine(h2, p[6], p[7])?;
    let prob = g.sigmoid(logit);
    Ok((reg, prob))
}

/// Records the CNN regression head on `g`.
pub fn cnn_graph(g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
    let c = g.conv1d(x, p[0], p[1])?;
    let c = g.relu(c);
    let flat = g.flatten(c);
    let z = g.affine(flat, p[2], p[3])?;
    let h = g.relu(z);
    g.affine(h, p[4], p[5])
}

#[cfg(test)]
pub(crate) fn column(t: &Tensor) -> ndarray::Array1<f64> {
    t.view().into_shape_with_order(t.len()).expect("flat").into_dimensionality::<ndarray::Ix1>().expect("1-d").to_owned()
}
