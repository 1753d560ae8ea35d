use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::{Error, Result};

/// Plain dot product of equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `m · x` for a row-major `rows × cols` matrix stored in `m`.
pub fn matvec(m: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    (0..rows)
        .map(|r| dot(&m[r * cols..(r + 1) * cols], x))
        .collect()
}

/// `mᵀ · y` for a row-major `rows × cols` matrix stored in `m`.
pub fn matvec_t(m: &[f64], rows: usize, cols: usize, y: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(y.len(), rows);
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        let yr = y[r];
        if yr == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *o += yr * w;
        }
    }
    out
}

fn as_matrix(t: &Tensor) -> (usize, usize) {
    match t.shape() {
        [n] => (1, *n),
        _ => (t.rows(), t.cols()),
    }
}

/// Matrix product of two 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::dimension("matmul", a.shape(), b.shape()));
    }
    let (n, m) = as_matrix(a);
    let p = b.shape()[1];
    let mut out = vec![0.0; n * p];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..n {
        for k in 0..m {
            let aik = ad[i * m + k];
            for j in 0..p {
                out[i * p + j] += aik * bd[k * p + j];
            }
        }
    }
    Tensor::new(vec![n, p], out)
}

/// Gradients of `a · b` with respect to `a` and `b`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let ga = matmul(grad_out, &b.transpose())?;
    let gb = matmul(&a.transpose(), grad_out)?;
    Ok((ga, gb))
}

/// Pointwise operations with analytic derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
    Exp,
}

impl Elementwise {
    pub fn arity(self) -> usize {
        match self {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        }
    }
}

/// Logistic function in the branch form that never exponentiates a large
/// positive number.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn check_args(op: Elementwise, args: &[&Tensor]) -> Result<()> {
    if args.len() != op.arity() {
        return Err(Error::Config(alloc::format!(
            "{op:?} takes {} operands, got {}",
            op.arity(),
            args.len()
        )));
    }
    if op.arity() == 2 && !args[0].same_shape(args[1]) {
        return Err(Error::dimension(
            "elementwise",
            args[0].shape(),
            args[1].shape(),
        ));
    }
    Ok(())
}

pub fn elementwise(op: Elementwise, args: &[&Tensor]) -> Result<Tensor> {
    check_args(op, args)?;
    let a = args[0].data();
    let out: Vec<f64> = match op {
        Elementwise::Add => a.iter().zip(args[1].data()).map(|(x, y)| x + y).collect(),
        Elementwise::Sub => a.iter().zip(args[1].data()).map(|(x, y)| x - y).collect(),
        Elementwise::Mul => a.iter().zip(args[1].data()).map(|(x, y)| x * y).collect(),
        Elementwise::Tanh => a.iter().map(|&x| libm::tanh(x)).collect(),
        Elementwise::Sigmoid => a.iter().map(|&x| sigmoid(x)).collect(),
        Elementwise::Exp => a.iter().map(|&x| libm::exp(x)).collect(),
    };
    Tensor::new(args[0].shape().to_vec(), out)
}

/// Gradients for each operand of `elementwise(op, args)`, given its output.
pub fn elementwise_backward(
    op: Elementwise,
    args: &[&Tensor],
    out: &Tensor,
    grad_out: &Tensor,
) -> Result<Vec<Tensor>> {
    check_args(op, args)?;
    if !out.same_shape(grad_out) || !out.same_shape(args[0]) {
        return Err(Error::dimension(
            "elementwise_backward",
            out.shape(),
            grad_out.shape(),
        ));
    }
    let shape = out.shape().to_vec();
    let g = grad_out.data();
    let zip = |f: &dyn Fn(usize) -> f64| -> Result<Tensor> {
        Tensor::new(shape.clone(), (0..g.len()).map(f).collect())
    };
    Ok(match op {
        Elementwise::Add => vec![grad_out.clone(), grad_out.clone()],
        Elementwise::Sub => vec![grad_out.clone(), zip(&|i| -g[i])?],
        Elementwise::Mul => {
            let (a, b) = (args[0].data(), args[1].data());
            vec![zip(&|i| g[i] * b[i])?, zip(&|i| g[i] * a[i])?]
        }
        Elementwise::Tanh => {
            let y = out.data();
            vec![zip(&|i| g[i] * (1.0 - y[i] * y[i]))?]
        }
        Elementwise::Sigmoid => {
            let y = out.data();
            vec![zip(&|i| g[i] * y[i] * (1.0 - y[i]))?]
        }
        Elementwise::Exp => {
            let y = out.data();
            vec![zip(&|i| g[i] * y[i])?]
        }
    })
}

/// Softmax over a slice; masked-out entries (`mask[i] == false`) get exactly 0.
pub fn softmax_slice(logits: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return Err(Error::dimension("softmax", &[logits.len()], &[m.len()]));
        }
    }
    let mut max = f64::NEG_INFINITY;
    for (i, &l) in logits.iter().enumerate() {
        if !l.is_finite() {
            return Err(Error::NumericalFault(alloc::format!(
                "softmax logit {i} is {l}"
            )));
        }
        if keep(i) && l > max {
            max = l;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    let mut out: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| if keep(i) { libm::exp(l - max) } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    Ok(out)
}

pub fn softmax(logits: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let p = softmax_slice(logits.data(), mask)?;
    Tensor::new(logits.shape().to_vec(), p)
}

/// Vector-Jacobian product of softmax: `p ⊙ (g - <p, g>)`.
/// Masked entries have `p = 0` and therefore receive zero gradient.
pub fn softmax_backward(probs: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let s = dot(probs, grad_out);
    probs
        .iter()
        .zip(grad_out)
        .map(|(p, g)| p * (g - s))
        .collect()
}

/// A bank of `maps` filters of one width over `d`-dimensional rows.
/// `weight` is `maps × (width·d)`, laid out as width-major windows.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFilter {
    pub width: usize,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvFilter {
    pub fn maps(&self) -> usize {
        self.weight.rows()
    }
}

/// Argmax positions recorded by the forward pass, one per output feature.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolCache {
    pub argmax: Vec<usize>,
}

/// Valid 1-D convolution along time followed by max over time, for every
/// filter in the bank. Output is the concatenation of all pooled features.
/// Ties go to the earliest time index.
pub fn conv1d_maxpool(seq: &Tensor, bank: &[ConvFilter]) -> Result<(Tensor, PoolCache)> {
    if seq.shape().len() != 2 {
        return Err(Error::dimension("conv1d_maxpool", seq.shape(), &[]));
    }
    let (t_len, d) = (seq.rows(), seq.cols());
    let widest = bank.iter().map(|f| f.width).max().unwrap_or(0);
    if t_len < widest {
        return Err(Error::Length {
            needed: widest,
            got: t_len,
        });
    }
    let mut feats = Vec::new();
    let mut argmax = Vec::new();
    for f in bank {
        let span = f.width * d;
        if f.weight.cols() != span || f.bias.len() != f.maps() {
            return Err(Error::dimension(
                "conv1d_maxpool",
                f.weight.shape(),
                &[f.maps(), span],
            ));
        }
        for m in 0..f.maps() {
            let w = f.weight.row(m);
            let b = f.bias.data()[m];
            let mut best = f64::NEG_INFINITY;
            let mut best_t = 0;
            for t in 0..=(t_len - f.width) {
                let window = &seq.data()[t * d..t * d + span];
                let v = dot(w, window) + b;
                if v > best {
                    best = v;
                    best_t = t;
                }
            }
            feats.push(best);
            argmax.push(best_t);
        }
    }
    Ok((Tensor::vector(feats)?, PoolCache { argmax }))
}

/// Routes the pooled-feature gradient back to the winning windows. Returns the
/// gradient for the input sequence and `(weight, bias)` gradients per filter.
pub fn conv1d_maxpool_backward(
    seq: &Tensor,
    bank: &[ConvFilter],
    cache: &PoolCache,
    grad_out: &[f64],
) -> Result<(Tensor, Vec<(Tensor, Tensor)>)> {
    let total: usize = bank.iter().map(ConvFilter::maps).sum();
    if grad_out.len() != total || cache.argmax.len() != total {
        return Err(Error::dimension(
            "conv1d_maxpool_backward",
            &[total],
            &[grad_out.len()],
        ));
    }
    let d = seq.cols();
    let mut g_seq = Tensor::zeros(seq.shape());
    let mut g_bank = Vec::with_capacity(bank.len());
    let mut k = 0;
    for f in bank {
        let span = f.width * d;
        let mut gw = Tensor::zeros(f.weight.shape());
        let mut gb = Tensor::zeros(f.bias.shape());
        for m in 0..f.maps() {
            let g = grad_out[k];
            let t = cache.argmax[k];
            k += 1;
            if g == 0.0 {
                continue;
            }
            gb.data_mut()[m] += g;
            let window = &seq.data()[t * d..t * d + span];
            for (gwi, xi) in gw.row_mut(m).iter_mut().zip(window) {
                *gwi += g * xi;
            }
            let w = f.weight.row(m);
            for (gs, wi) in g_seq.data_mut()[t * d..t * d + span].iter_mut().zip(w) {
                *gs += g * wi;
            }
        }
        g_bank.push((gw, gb));
    }
    Ok((g_seq, g_bank))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_small() {
        let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let col = t(&[2, 1], &[3.0, 4.0]);
        assert_eq!(matmul(&id, &col).unwrap(), col);
        let row = t(&[1, 2], &[1.0, 2.0]);
        assert_eq!(matmul(&row, &col).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert_eq!(
            matmul(&a, &b),
            Err(Error::Dimension {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            })
        );
    }

    #[test]
    fn elementwise_fixed_points() {
        let z = t(&[1], &[0.0]);
        assert_eq!(
            elementwise(Elementwise::Sigmoid, &[&z]).unwrap().data(),
            &[0.5]
        );
        assert_eq!(
            elementwise(Elementwise::Tanh, &[&z]).unwrap().data(),
            &[0.0]
        );
        let a = t(&[3], &[1.0, 2.0, 3.0]);
        let b = t(&[3], &[4.0, 5.0, 6.0]);
        assert_eq!(
            elementwise(Elementwise::Mul, &[&a, &b]).unwrap().data(),
            &[4.0, 10.0, 18.0]
        );
        assert!(matches!(
            elementwise(Elementwise::Add, &[&a, &z]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_uniform_and_forced() {
        let p = softmax_slice(&[0.0, 0.0, 0.0], None).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax_slice(&[0.0, 0.0, 0.0], Some(&[false, false, true])).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 1.0]);
        assert_eq!(
            softmax_slice(&[1.0, 2.0], Some(&[false, false])),
            Err(Error::EmptySupport)
        );
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let p = softmax_slice(&[1000.0, 1000.0], None).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn conv_constant_sequence_averaging_filter() {
        // every window of a constant sequence gives the same response
        let seq = t(&[5, 2], &[0.7; 10]);
        let f = ConvFilter {
            width: 2,
            weight: t(&[1, 4], &[0.25; 4]),
            bias: t(&[1], &[0.0]),
        };
        let (out, cache) = conv1d_maxpool(&seq, &[f]).unwrap();
        assert!((out.data()[0] - 0.7).abs() < 1e-15);
        // tie broken by the earliest window
        assert_eq!(cache.argmax, vec![0]);
    }

    #[test]
    fn conv_spike_identity_filter() {
        let mut data = vec![0.0; 6 * 3];
        data[4 * 3 + 1] = 2.5;
        let seq = t(&[6, 3], &data);
        let f = ConvFilter {
            width: 1,
            weight: t(&[1, 3], &[0.0, 1.0, 0.0]),
            bias: t(&[1], &[0.0]),
        };
        let (out, cache) = conv1d_maxpool(&seq, &[f]).unwrap();
        assert_eq!(out.data(), &[2.5]);
        assert_eq!(cache.argmax, vec![4]);
    }

    #[test]
    fn conv_rejects_short_sequence() {
        let seq = Tensor::zeros(&[2, 3]);
        let f = ConvFilter {
            width: 3,
            weight: Tensor::zeros(&[1, 9]),
            bias: Tensor::zeros(&[1]),
        };
        assert_eq!(
            conv1d_maxpool(&seq, &[f]).map(|_| ()),
            Err(Error::Length { needed: 3, got: 2 })
        );
    }
}
