//! Differentiable 1-D layers over `(channels, bins)` tensors.
//!
//! Every layer is a borrowed view over its parameter slices with a forward
//! pass and an explicit reverse-mode backward pass. Backward passes return
//! owned gradients; the caller decides where to accumulate them.

use crate::error::{shape_err, Result};

/// Row-major `channels x len` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor1d {
    channels: usize,
    len: usize,
    data: Vec<f64>,
}

impl Tensor1d {
    pub fn zeros(channels: usize, len: usize) -> Self {
        Self {
            channels,
            len,
            data: vec![0.0; channels * len],
        }
    }

    pub fn from_vec(channels: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * len {
            return Err(shape_err(format!(
                "{} values cannot fill a {channels}x{len} tensor",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            len,
            data,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let len = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * len);
        for r in rows {
            if r.as_ref().len() != len {
                return Err(shape_err("ragged rows"));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::from_vec(rows.len(), len, data)
    }

    /// Stacks the channels of several tensors of equal length.
    pub fn concat(parts: &[&Tensor1d]) -> Result<Self> {
        let len = parts.first().map_or(0, |p| p.len);
        if parts.iter().any(|p| p.len != len) {
            return Err(shape_err("concatenated tensors differ in length"));
        }
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(channels * len);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            channels,
            len,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn at(&self, c: usize, k: usize) -> f64 {
        self.data[c * self.len + k]
    }

    /// Channels `start..start + count` as a new tensor.
    pub fn slice_channels(&self, start: usize, count: usize) -> Tensor1d {
        Tensor1d {
            channels: count,
            len: self.len,
            data: self.data[start * self.len..(start + count) * self.len].to_vec(),
        }
    }

    pub fn scaled(&self, s: f64) -> Tensor1d {
        Tensor1d {
            channels: self.channels,
            len: self.len,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor1d) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Convolution over the bin axis (cross-correlation, zero padding, odd
/// kernel, length preserving). Weights are laid out `[c_out][c_in][kernel]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv1d<'a> {
    pub weight: &'a [f64],
    pub bias: &'a [f64],
    pub c_out: usize,
    pub c_in: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor1d,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Valid output index range for kernel tap `t`: `k + t - pad` stays in bounds.
#[inline]
fn tap_range(t: usize, pad: usize, len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(t);
    let hi = (len + pad).saturating_sub(t).min(len);
    (lo, hi.max(lo))
}

impl<'a> Conv1d<'a> {
    pub fn new(
        weight: &'a [f64],
        bias: &'a [f64],
        c_out: usize,
        c_in: usize,
        kernel: usize,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(shape_err(format!("kernel size {kernel} must be odd")));
        }
        if weight.len() != c_out * c_in * kernel {
            return Err(shape_err(format!(
                "conv weight has {} values, expected {c_out}x{c_in}x{kernel}",
                weight.len()
            )));
        }
        if bias.len() != c_out {
            return Err(shape_err(format!(
                "conv bias has {} values, expected {c_out}",
                bias.len()
            )));
        }
        Ok(Self {
            weight,
            bias,
            c_out,
            c_in,
            kernel,
        })
    }

    fn check_input(&self, x: &Tensor1d) -> Result<()> {
        if x.channels != self.c_in {
            return Err(shape_err(format!(
                "conv expects {} input channels, got {}",
                self.c_in, x.channels
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor1d) -> Result<Tensor1d> {
        self.check_input(x)?;
        let len = x.len;
        let pad = self.kernel / 2;
        let mut y = Tensor1d::zeros(self.c_out, len);
        for o in 0..self.c_out {
            let yo = &mut y.data[o * len..(o + 1) * len];
            yo.fill(self.bias[o]);
            for i in 0..self.c_in {
                let xi = x.row(i);
                let w = &self.weight[(o * self.c_in + i) * self.kernel..][..self.kernel];
                for (t, &wt) in w.iter().enumerate() {
                    if wt == 0.0 {
                        continue;
                    }
                    let (lo, hi) = tap_range(t, pad, len);
                    let src = &xi[lo + t - pad..hi + t - pad];
                    for (yk, xk) in yo[lo..hi].iter_mut().zip(src) {
                        *yk += wt * xk;
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor1d, grad_out: &Tensor1d) -> Result<ConvGrads> {
        self.check_input(x)?;
        if grad_out.channels != self.c_out || grad_out.len != x.len {
            return Err(shape_err("conv output gradient has the wrong shape"));
        }
        let len = x.len;
        let pad = self.kernel / 2;
        let mut gx = Tensor1d::zeros(self.c_in, len);
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = vec![0.0; self.c_out];
        for o in 0..self.c_out {
            let go = grad_out.row(o);
            gb[o] = go.iter().sum();
            for i in 0..self.c_in {
                let xi = x.row(i);
                let base = (o * self.c_in + i) * self.kernel;
                let gxi = &mut gx.data[i * len..(i + 1) * len];
                for t in 0..self.kernel {
                    let (lo, hi) = tap_range(t, pad, len);
                    let shifted = lo + t - pad..hi + t - pad;
                    let mut acc = 0.0;
                    for (g, xv) in go[lo..hi].iter().zip(&xi[shifted.clone()]) {
                        acc += g * xv;
                    }
                    gw[base + t] = acc;
                    let wt = self.weight[base + t];
                    if wt != 0.0 {
                        for (gxk, g) in gxi[shifted].iter_mut().zip(&go[lo..hi]) {
                            *gxk += wt * g;
                        }
                    }
                }
            }
        }
        Ok(ConvGrads {
            input: gx,
            weight: gw,
            bias: gb,
        })
    }
}

/// Learned linear combination of input channels, identical at every bin:
/// `out_k = sum_i w_i x_{i,k} + b`.
pub fn pointwise_conv(x: &Tensor1d, weights: &[f64], bias: f64) -> Result<Tensor1d> {
    let b = [bias];
    Conv1d::new(weights, &b, 1, weights.len(), 1)?.forward(x)
}

/// Feature-wise affine modulation. The scale and shift of channel `j` are
/// linear functions of a one-channel condition:
/// `gamma_j = gamma_b_j + sum_k gamma_w[j, k] c_k` (same for beta), and
/// `z_{j,k} = gamma_j x_{j,k} + beta_j`.
#[derive(Debug, Clone, Copy)]
pub struct FilmAffine<'a> {
    pub gamma_w: &'a [f64],
    pub gamma_b: &'a [f64],
    pub beta_w: &'a [f64],
    pub beta_b: &'a [f64],
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilmGrads {
    pub input: Tensor1d,
    pub cond: Tensor1d,
    pub gamma_w: Vec<f64>,
    pub gamma_b: Vec<f64>,
    pub beta_w: Vec<f64>,
    pub beta_b: Vec<f64>,
}

impl<'a> FilmAffine<'a> {
    pub fn new(
        gamma_w: &'a [f64],
        gamma_b: &'a [f64],
        beta_w: &'a [f64],
        beta_b: &'a [f64],
        channels: usize,
    ) -> Result<Self> {
        if gamma_b.len() != channels || beta_b.len() != channels {
            return Err(shape_err("FiLM bias length differs from channel count"));
        }
        if gamma_w.len() != beta_w.len() || gamma_w.len() % channels.max(1) != 0 {
            return Err(shape_err("FiLM maps have inconsistent shapes"));
        }
        Ok(Self {
            gamma_w,
            gamma_b,
            beta_w,
            beta_b,
            channels,
        })
    }

    fn cond_len(&self) -> usize {
        self.gamma_w.len() / self.channels.max(1)
    }

    fn check(&self, x: &Tensor1d, c: &Tensor1d) -> Result<()> {
        if x.channels != self.channels {
            return Err(shape_err(format!(
                "FiLM expects {} channels, got {}",
                self.channels, x.channels
            )));
        }
        if c.channels != 1 || c.len != self.cond_len() {
            return Err(shape_err(format!(
                "FiLM condition must be 1x{}, got {}x{}",
                self.cond_len(),
                c.channels,
                c.len
            )));
        }
        Ok(())
    }

    /// Per-channel `(gamma, beta)` for condition `c`.
    pub fn modulation(&self, c: &Tensor1d) -> (Vec<f64>, Vec<f64>) {
        let kc = self.cond_len();
        let cv = c.row(0);
        let map = |w: &[f64], b: &[f64]| -> Vec<f64> {
            (0..self.channels)
                .map(|j| b[j] + w[j * kc..(j + 1) * kc].iter().zip(cv).map(|(a, b)| a * b).sum::<f64>())
                .collect()
        };
        (map(self.gamma_w, self.gamma_b), map(self.beta_w, self.beta_b))
    }

    pub fn forward(&self, x: &Tensor1d, c: &Tensor1d) -> Result<Tensor1d> {
        self.check(x, c)?;
        let (gamma, beta) = self.modulation(c);
        let mut z = x.clone();
        for j in 0..self.channels {
            for v in z.row_mut(j) {
                *v = gamma[j] * *v + beta[j];
            }
        }
        Ok(z)
    }

    pub fn backward(&self, x: &Tensor1d, c: &Tensor1d, grad_out: &Tensor1d) -> Result<FilmGrads> {
        self.check(x, c)?;
        let (gamma, _) = self.modulation(c);
        let kc = self.cond_len();
        let cv = c.row(0);
        let mut gx = Tensor1d::zeros(x.channels, x.len);
        let mut gc = Tensor1d::zeros(1, kc);
        let mut g_gw = vec![0.0; self.gamma_w.len()];
        let mut g_bw = vec![0.0; self.beta_w.len()];
        let mut g_gb = vec![0.0; self.channels];
        let mut g_bb = vec![0.0; self.channels];
        for j in 0..self.channels {
            let go = grad_out.row(j);
            let xj = x.row(j);
            let d_gamma: f64 = go.iter().zip(xj).map(|(g, v)| g * v).sum();
            let d_beta: f64 = go.iter().sum();
            for (gxk, g) in gx.row_mut(j).iter_mut().zip(go) {
                *gxk = gamma[j] * g;
            }
            g_gb[j] = d_gamma;
            g_bb[j] = d_beta;
            let row = j * kc..(j + 1) * kc;
            for (((ggw, gbw), &ck), ((gck, &wg), &wb)) in g_gw[row.clone()]
                .iter_mut()
                .zip(&mut g_bw[row.clone()])
                .zip(cv)
                .zip(gc.data.iter_mut().zip(&self.gamma_w[row.clone()]).zip(&self.beta_w[row]))
            {
                *ggw = d_gamma * ck;
                *gbw = d_beta * ck;
                *gck += d_gamma * wg + d_beta * wb;
            }
        }
        Ok(FilmGrads {
            input: gx,
            cond: gc,
            gamma_w: g_gw,
            gamma_b: g_gb,
            beta_w: g_bw,
            beta_b: g_bb,
        })
    }
}

/// `y = tanh(film(conv(x), c)) + skip(x)`; `skip` is the identity when
/// absent (equal channel counts) and a pointwise projection otherwise.
#[derive(Debug, Clone, Copy)]
pub struct FilmResBlock<'a> {
    pub conv: Conv1d<'a>,
    pub film: FilmAffine<'a>,
    pub skip: Option<Conv1d<'a>>,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    conv_out: Tensor1d,
    activation: Tensor1d,
}

#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub input: Tensor1d,
    pub cond: Tensor1d,
    pub conv: ConvGrads,
    pub film: FilmGrads,
    pub skip: Option<ConvGrads>,
}

impl<'a> FilmResBlock<'a> {
    pub fn new(conv: Conv1d<'a>, film: FilmAffine<'a>, skip: Option<Conv1d<'a>>) -> Result<Self> {
        if film.channels != conv.c_out {
            return Err(shape_err("FiLM channels differ from conv output channels"));
        }
        match skip {
            None if conv.c_in != conv.c_out => {
                return Err(shape_err("identity skip needs equal channel counts"))
            }
            Some(s) if s.kernel != 1 || s.c_in != conv.c_in || s.c_out != conv.c_out => {
                return Err(shape_err("skip projection must be pointwise c_in -> c_out"))
            }
            _ => {}
        }
        Ok(Self { conv, film, skip })
    }

    pub fn forward(&self, x: &Tensor1d, c: &Tensor1d) -> Result<Tensor1d> {
        Ok(self.forward_cached(x, c)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor1d, c: &Tensor1d) -> Result<(Tensor1d, BlockCache)> {
        let conv_out = self.conv.forward(x)?;
        let mut activation = self.film.forward(&conv_out, c)?;
        activation.data.iter_mut().for_each(|v| *v = v.tanh());
        let mut y = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        y.add_assign(&activation);
        Ok((
            y,
            BlockCache {
                conv_out,
                activation,
            },
        ))
    }

    pub fn backward(
        &self,
        x: &Tensor1d,
        c: &Tensor1d,
        cache: &BlockCache,
        grad_out: &Tensor1d,
    ) -> Result<BlockGrads> {
        let mut grad_z = grad_out.clone();
        for (g, a) in grad_z.data.iter_mut().zip(&cache.activation.data) {
            *g *= 1.0 - a * a;
        }
        let film = self.film.backward(&cache.conv_out, c, &grad_z)?;
        let conv = self.conv.backward(x, &film.input)?;
        let mut input = conv.input.clone();
        let skip = match &self.skip {
            Some(s) => {
                let g = s.backward(x, grad_out)?;
                input.add_assign(&g.input);
                Some(g)
            }
            None => {
                input.add_assign(grad_out);
                None
            }
        };
        Ok(BlockGrads {
            input,
            cond: film.cond.clone(),
            conv,
            film,
            skip,
        })
    }
}

/// Convolution whose kernel and bias at every bin are generated from the
/// condition column at that bin:
///
/// `z[:, k] = sum_t W(c[:, k])[:, :, t] x[:, k + t - kappa/2] + b(c[:, k])`
///
/// `W` and `b` are two-layer pointwise hyper-networks with a tanh between
/// the layers. The generated weight rows are laid out `[c_out][c_in][kappa]`.
#[derive(Debug, Clone, Copy)]
pub struct HyperConv<'a> {
    pub weight_net: [Conv1d<'a>; 2],
    pub bias_net: [Conv1d<'a>; 2],
    pub c_in: usize,
    pub c_out: usize,
    pub kappa: usize,
}

#[derive(Debug, Clone)]
pub struct HyperCache {
    weight_hidden: Tensor1d,
    weights: Tensor1d,
    bias_hidden: Tensor1d,
}

#[derive(Debug, Clone)]
pub struct HyperGrads {
    pub input: Tensor1d,
    pub cond: Tensor1d,
    pub weight_net: [ConvGrads; 2],
    pub bias_net: [ConvGrads; 2],
}

fn hidden_forward(layer: &Conv1d, c: &Tensor1d) -> Result<Tensor1d> {
    let mut h = layer.forward(c)?;
    h.data.iter_mut().for_each(|v| *v = v.tanh());
    Ok(h)
}

impl<'a> HyperConv<'a> {
    pub fn new(
        weight_net: [Conv1d<'a>; 2],
        bias_net: [Conv1d<'a>; 2],
        c_in: usize,
        c_out: usize,
        kappa: usize,
    ) -> Result<Self> {
        if kappa % 2 == 0 {
            return Err(shape_err(format!("hyper-conv kernel size {kappa} must be odd")));
        }
        let pointwise = weight_net.iter().chain(&bias_net).all(|l| l.kernel == 1);
        if !pointwise {
            return Err(shape_err("hyper-networks must be pointwise"));
        }
        if weight_net[1].c_in != weight_net[0].c_out || bias_net[1].c_in != bias_net[0].c_out {
            return Err(shape_err("hyper-network hidden widths disagree"));
        }
        if weight_net[0].c_in != bias_net[0].c_in {
            return Err(shape_err("hyper-networks read different condition widths"));
        }
        if weight_net[1].c_out != c_out * c_in * kappa || bias_net[1].c_out != c_out {
            return Err(shape_err("hyper-network outputs do not match the kernel shape"));
        }
        Ok(Self {
            weight_net,
            bias_net,
            c_in,
            c_out,
            kappa,
        })
    }

    pub fn forward(&self, x: &Tensor1d, c: &Tensor1d) -> Result<Tensor1d> {
        Ok(self.forward_cached(x, c)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor1d, c: &Tensor1d) -> Result<(Tensor1d, HyperCache)> {
        if x.channels != self.c_in || c.len != x.len {
            return Err(shape_err(format!(
                "hyper-conv expects {}x{} input, got {}x{}",
                self.c_in, c.len, x.channels, x.len
            )));
        }
        let weight_hidden = hidden_forward(&self.weight_net[0], c)?;
        let weights = self.weight_net[1].forward(&weight_hidden)?;
        let bias_hidden = hidden_forward(&self.bias_net[0], c)?;
        let mut z = self.bias_net[1].forward(&bias_hidden)?;

        let len = x.len;
        let pad = self.kappa / 2;
        for o in 0..self.c_out {
            let zo = &mut z.data[o * len..(o + 1) * len];
            for i in 0..self.c_in {
                let xi = x.row(i);
                for t in 0..self.kappa {
                    let wrow = weights.row((o * self.c_in + i) * self.kappa + t);
                    let (lo, hi) = tap_range(t, pad, len);
                    let src = &xi[lo + t - pad..hi + t - pad];
                    for ((zk, wk), xk) in zo[lo..hi].iter_mut().zip(&wrow[lo..hi]).zip(src) {
                        *zk += wk * xk;
                    }
                }
            }
        }
        Ok((
            z,
            HyperCache {
                weight_hidden,
                weights,
                bias_hidden,
            },
        ))
    }

    pub fn backward(
        &self,
        x: &Tensor1d,
        c: &Tensor1d,
        cache: &HyperCache,
        grad_out: &Tensor1d,
    ) -> Result<HyperGrads> {
        let len = x.len;
        let pad = self.kappa / 2;
        let mut gx = Tensor1d::zeros(self.c_in, len);
        let mut g_weights = Tensor1d::zeros(cache.weights.channels, len);
        for o in 0..self.c_out {
            let go = grad_out.row(o);
            for i in 0..self.c_in {
                let xi = x.row(i);
                let gxi = &mut gx.data[i * len..(i + 1) * len];
                for t in 0..self.kappa {
                    let r = (o * self.c_in + i) * self.kappa + t;
                    let (lo, hi) = tap_range(t, pad, len);
                    let shifted = lo + t - pad..hi + t - pad;
                    let wrow = cache.weights.row(r);
                    let gw = &mut g_weights.data[r * len..(r + 1) * len];
                    for (((gwk, g), xk), (gxk, wk)) in gw[lo..hi]
                        .iter_mut()
                        .zip(&go[lo..hi])
                        .zip(&xi[shifted.clone()])
                        .zip(gxi[shifted].iter_mut().zip(&wrow[lo..hi]))
                    {
                        *gwk = g * xk;
                        *gxk += wk * g;
                    }
                }
            }
        }

        let w_out = self.weight_net[1].backward(&cache.weight_hidden, &g_weights)?;
        let w_in = self.weight_net[0].backward(c, &tanh_back(&w_out.input, &cache.weight_hidden))?;
        let b_out = self.bias_net[1].backward(&cache.bias_hidden, grad_out)?;
        let b_in = self.bias_net[0].backward(c, &tanh_back(&b_out.input, &cache.bias_hidden))?;

        let mut cond = w_in.input.clone();
        cond.add_assign(&b_in.input);
        Ok(HyperGrads {
            input: gx,
            cond,
            weight_net: [w_in, w_out],
            bias_net: [b_in, b_out],
        })
    }
}

fn tanh_back(grad: &Tensor1d, activation: &Tensor1d) -> Tensor1d {
    let mut g = grad.clone();
    for (gv, a) in g.data.iter_mut().zip(&activation.data) {
        *gv *= 1.0 - a * a;
    }
    g
}

pub(crate) fn accumulate(dst: &mut [f64], src: &[f64]) {
    add_into(dst, src)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, len: usize) -> Tensor1d {
        let data = (0..c * len).map(|i| ((i * 7 % 13) as f64 - 6.0) * 0.3).collect();
        Tensor1d::from_vec(c, len, data).unwrap()
    }

    #[test]
    fn mean_weights_average_channels() {
        let x = ramp(4, 9);
        let y = pointwise_conv(&x, &[0.25; 4], 0.0).unwrap();
        for k in 0..9 {
            let mean = (0..4).map(|i| x.at(i, k)).sum::<f64>() / 4.0;
            assert!((y.at(0, k) - mean).abs() < 1e-15);
        }
        let y = pointwise_conv(&x, &[0.0, 0.0, 1.0, 0.0], 0.0).unwrap();
        assert_eq!(y.row(0), x.row(2));
        assert!(pointwise_conv(&x, &[0.5; 3], 0.0).is_err());
    }

    #[test]
    fn identity_and_constant_kernels() {
        let x = ramp(3, 11);
        let mut w = vec![0.0; 3 * 3 * 3];
        for i in 0..3 {
            w[(i * 3 + i) * 3 + 1] = 1.0;
        }
        let y = Conv1d::new(&w, &[0.0; 3], 3, 3, 3).unwrap().forward(&x).unwrap();
        assert_eq!(y, x);
        let zero = vec![0.0; 2 * 3 * 3];
        let y = Conv1d::new(&zero, &[1.5, -2.0], 2, 3, 3).unwrap().forward(&x).unwrap();
        assert!(y.row(0).iter().all(|&v| v == 1.5));
        assert!(y.row(1).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn conv_shape_errors() {
        let w = vec![0.0; 12];
        assert!(Conv1d::new(&w, &[0.0; 2], 2, 3, 2).is_err());
        assert!(Conv1d::new(&w, &[0.0; 3], 2, 2, 3).is_err());
        let conv = Conv1d::new(&w, &[0.0; 2], 2, 2, 3).unwrap();
        assert!(conv.forward(&ramp(3, 5)).is_err());
    }

    #[test]
    fn film_identity_and_zero_scale() {
        let x = ramp(3, 8);
        let c = ramp(1, 8);
        let zeros = vec![0.0; 24];
        let film = FilmAffine::new(&zeros, &[1.0; 3], &zeros, &[0.0; 3], 3).unwrap();
        assert_eq!(film.forward(&x, &c).unwrap(), x);
        let film = FilmAffine::new(&zeros, &[0.0; 3], &zeros, &[0.5, 1.0, 2.0], 3).unwrap();
        let z = film.forward(&x, &c).unwrap();
        assert!(z.row(2).iter().all(|&v| v == 2.0));
        assert!(film.forward(&x, &ramp(2, 8)).is_err());
    }

    #[test]
    fn residual_identity_when_branch_is_zero() {
        let x = ramp(4, 10);
        let c = ramp(1, 10);
        let zero_w = vec![0.0; 4 * 4 * 3];
        let zeros_film = vec![0.0; 40];
        let ones_film: Vec<f64> = (0..40).map(|i| i as f64 * 0.01).collect();
        let block = FilmResBlock::new(
            Conv1d::new(&zero_w, &[0.0; 4], 4, 4, 3).unwrap(),
            FilmAffine::new(&ones_film, &[1.0; 4], &zeros_film, &[0.0; 4], 4).unwrap(),
            None,
        )
        .unwrap();
        assert_eq!(block.forward(&x, &c).unwrap(), x);

        let zero_x = Tensor1d::zeros(4, 10);
        let w: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).sin()).collect();
        let block = FilmResBlock::new(
            Conv1d::new(&w, &[0.0; 4], 4, 4, 3).unwrap(),
            FilmAffine::new(&ones_film, &[1.0; 4], &zeros_film, &[0.0; 4], 4).unwrap(),
            None,
        )
        .unwrap();
        assert_eq!(block.forward(&zero_x, &c).unwrap(), zero_x);
    }

    #[test]
    fn block_requires_projection_when_widths_change() {
        let w = vec![0.0; 2 * 4 * 3];
        let film_w = vec![0.0; 2 * 10];
        let conv = Conv1d::new(&w, &[0.0; 2], 2, 4, 3).unwrap();
        let film = FilmAffine::new(&film_w, &[1.0; 2], &film_w, &[0.0; 2], 2).unwrap();
        assert!(FilmResBlock::new(conv, film, None).is_err());
    }
}
