//! Forward kernels for the layers of the network, plus the matching
//! vector-Jacobian products used by [`super::graph`].
//!
//! Layer inputs are accepted either unbatched (`[T, C]`, `[D]`) or with a
//! leading batch axis (`[B, T, C]`, `[B, D]`).

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Numerically stable `log(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`], the logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for strictly positive `y`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub len: usize,
    pub channels: usize,
    pub filters: usize,
    pub width: usize,
}

impl ConvDims {
    pub fn out_len(&self) -> usize {
        self.len - self.width + 1
    }
}

pub(crate) fn conv_dims(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<ConvDims> {
    let (batch, len, channels) = match *input.shape() {
        [t, c] => (1, t, c),
        [b, t, c] => (b, t, c),
        _ => {
            return Err(Error::Dimension(format!(
                "conv1d input {:?} vs kernels {:?}: input must be [T, C] or [B, T, C]",
                input.shape(),
                kernels.shape()
            )))
        }
    };
    let [filters, width, kc] = *kernels.shape() else {
        return Err(Error::Dimension(format!(
            "conv1d input {:?} vs kernels {:?}: kernels must be [K, W, C]",
            input.shape(),
            kernels.shape()
        )));
    };
    if kc != channels || width > len || width == 0 {
        return Err(Error::Dimension(format!(
            "conv1d input {:?} incompatible with kernels {:?}",
            input.shape(),
            kernels.shape()
        )));
    }
    if bias.shape() != [filters] {
        return Err(Error::Dimension(format!(
            "conv1d bias {:?} does not match kernels {:?}",
            bias.shape(),
            kernels.shape()
        )));
    }
    Ok(ConvDims {
        batch,
        len,
        channels,
        filters,
        width,
    })
}

/// Valid (unpadded) 1-D cross-correlation: `[T, C] * [K, W, C] + [K] -> [T-W+1, K]`.
pub fn conv1d_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = conv_dims(input, kernels, bias)?;
    let out_len = d.out_len();
    let window = d.width * d.channels;
    let x = input.values();
    let w = kernels.values();
    let b = bias.values();
    let mut out = vec![0.0; d.batch * out_len * d.filters];
    for bi in 0..d.batch {
        let xb = &x[bi * d.len * d.channels..(bi + 1) * d.len * d.channels];
        let ob = &mut out[bi * out_len * d.filters..(bi + 1) * out_len * d.filters];
        for t in 0..out_len {
            let patch = &xb[t * d.channels..t * d.channels + window];
            let row = &mut ob[t * d.filters..(t + 1) * d.filters];
            for (k, o) in row.iter_mut().enumerate() {
                let ker = &w[k * window..(k + 1) * window];
                *o = b[k] + dot(patch, ker);
            }
        }
    }
    let shape = if input.shape().len() == 2 {
        vec![out_len, d.filters]
    } else {
        vec![d.batch, out_len, d.filters]
    };
    Ok(Tensor::from_parts(shape, out))
}

/// Gradients of [`conv1d_forward`] w.r.t. (input, kernels, bias) given the
/// upstream gradient. The input gradient is skipped when `want_input` is false.
pub(crate) fn conv1d_backward(
    input: &Tensor,
    kernels: &Tensor,
    upstream: &Tensor,
    want_input: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (batch, len, channels) = match *input.shape() {
        [t, c] => (1, t, c),
        [b, t, c] => (b, t, c),
        _ => unreachable!("validated in forward"),
    };
    let [filters, width, _] = *kernels.shape() else {
        unreachable!("validated in forward")
    };
    let out_len = len - width + 1;
    let window = width * channels;
    let x = input.values();
    let w = kernels.values();
    let g = upstream.values();
    let mut gx = want_input.then(|| vec![0.0; x.len()]);
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; filters];
    for bi in 0..batch {
        let xoff = bi * len * channels;
        let goff = bi * out_len * filters;
        for t in 0..out_len {
            let patch = &x[xoff + t * channels..xoff + t * channels + window];
            let grow = &g[goff + t * filters..goff + (t + 1) * filters];
            for (k, &gk) in grow.iter().enumerate() {
                if gk == 0.0 {
                    continue;
                }
                gb[k] += gk;
                axpy(gk, patch, &mut gw[k * window..(k + 1) * window]);
                if let Some(gx) = gx.as_mut() {
                    let dst = &mut gx[xoff + t * channels..xoff + t * channels + window];
                    axpy(gk, &w[k * window..(k + 1) * window], dst);
                }
            }
        }
    }
    (
        gx.map(|v| Tensor::from_parts(input.shape().to_vec(), v)),
        Tensor::from_parts(kernels.shape().to_vec(), gw),
        Tensor::from_parts(vec![filters], gb),
    )
}

/// Mean over the temporal axis: `[T, C] -> [C]` (or `[B, T, C] -> [B, C]`).
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (batch, len, channels, batched) = match *input.shape() {
        [t, c] => (1, t, c, false),
        [b, t, c] => (b, t, c, true),
        _ => {
            return Err(Error::Dimension(format!(
                "global_avg_pool input {:?} must be [T, C] or [B, T, C]",
                input.shape()
            )))
        }
    };
    if len == 0 {
        return Err(Error::Dimension(
            "global_avg_pool: empty temporal axis".into(),
        ));
    }
    let x = input.values();
    let mut out = vec![0.0; batch * channels];
    for bi in 0..batch {
        let ob = &mut out[bi * channels..(bi + 1) * channels];
        for t in 0..len {
            let row = &x[(bi * len + t) * channels..(bi * len + t + 1) * channels];
            for (o, v) in ob.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in ob.iter_mut() {
            *o /= len as f64;
        }
    }
    let shape = if batched {
        vec![batch, channels]
    } else {
        vec![channels]
    };
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn global_avg_pool_backward(input_shape: &[usize], upstream: &Tensor) -> Tensor {
    let (batch, len, channels) = match *input_shape {
        [t, c] => (1, t, c),
        [b, t, c] => (b, t, c),
        _ => unreachable!("validated in forward"),
    };
    let g = upstream.values();
    let scale = 1.0 / len as f64;
    let mut out = Vec::with_capacity(batch * len * channels);
    for bi in 0..batch {
        let row = &g[bi * channels..(bi + 1) * channels];
        for _ in 0..len {
            out.extend(row.iter().map(|v| v * scale));
        }
    }
    Tensor::from_parts(input_shape.to_vec(), out)
}

/// Affine map `input · weights + bias`: `[D] x [D, U] + [U] -> [U]`
/// (or `[B, D] -> [B, U]`).
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, din, batched) = dense_input_dims(input, weights)?;
    let [wd, units] = *weights.shape() else {
        unreachable!()
    };
    if wd != din || bias.shape() != [units] {
        return Err(Error::Dimension(format!(
            "dense input {:?}, weights {:?}, bias {:?} do not conform",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let x = input.values();
    let w = weights.values();
    let mut out = Vec::with_capacity(batch * units);
    for bi in 0..batch {
        let row = &x[bi * din..(bi + 1) * din];
        let mut acc = bias.values().to_vec();
        for (i, &xi) in row.iter().enumerate() {
            axpy(xi, &w[i * units..(i + 1) * units], &mut acc);
        }
        out.extend(acc);
    }
    let shape = if batched {
        vec![batch, units]
    } else {
        vec![units]
    };
    Ok(Tensor::from_parts(shape, out))
}

fn dense_input_dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize, bool)> {
    if weights.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "dense weights {:?} must be [D, U]",
            weights.shape()
        )));
    }
    match *input.shape() {
        [d] => Ok((1, d, false)),
        [b, d] => Ok((b, d, true)),
        _ => Err(Error::Dimension(format!(
            "dense input {:?} vs weights {:?}: input must be [D] or [B, D]",
            input.shape(),
            weights.shape()
        ))),
    }
}

pub(crate) fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    upstream: &Tensor,
    want_input: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let [din, units] = *weights.shape() else {
        unreachable!()
    };
    let batch = input.len() / din;
    let x = input.values();
    let w = weights.values();
    let g = upstream.values();
    let mut gx = want_input.then(|| vec![0.0; x.len()]);
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; units];
    for bi in 0..batch {
        let grow = &g[bi * units..(bi + 1) * units];
        for (b, v) in gb.iter_mut().zip(grow) {
            *b += v;
        }
        for i in 0..din {
            let xi = x[bi * din + i];
            axpy(xi, grow, &mut gw[i * units..(i + 1) * units]);
            if let Some(gx) = gx.as_mut() {
                gx[bi * din + i] = dot(&w[i * units..(i + 1) * units], grow);
            }
        }
    }
    (
        gx.map(|v| Tensor::from_parts(input.shape().to_vec(), v)),
        Tensor::from_parts(weights.shape().to_vec(), gw),
        Tensor::from_parts(vec![units], gb),
    )
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Reparameterized draw `mu + softplus(rho) * noise`.
pub fn reparam_sample(mu: &Tensor, rho: &Tensor, noise: &Tensor) -> Result<Tensor> {
    mu.expect_same_shape(rho)?;
    mu.expect_same_shape(noise)?;
    let values = mu
        .values()
        .iter()
        .zip(rho.values())
        .zip(noise.values())
        .map(|((&m, &r), &e)| m + softplus(r) * e)
        .collect();
    Ok(Tensor::from_parts(mu.shape().to_vec(), values))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
