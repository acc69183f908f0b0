//! Straight-line re-implementation of the model forward pass. Reads
//! parameters by tensor name and uses nested vectors and plain loops only,
//! so it shares no code with the library's layers.

use hrtf_field::network::{ModelInput, ModelParams, Tensor1d, Variant};

type Rows = Vec<Vec<f64>>;

fn rows(t: &Tensor1d) -> Rows {
    (0..t.channels()).map(|c| t.row(c).to_vec()).collect()
}

fn get<'a>(p: &'a ModelParams, name: &str) -> &'a [f64] {
    &p.tensor(name).unwrap_or_else(|| panic!("missing tensor {name}")).data
}

fn dims(p: &ModelParams, name: &str) -> Vec<usize> {
    p.tensor(name).unwrap().dims.clone()
}

/// `y[o][n] = b[o] + sum_i sum_t w[o][i][t] x[i][n + t - k/2]`, zero padded.
fn conv(p: &ModelParams, prefix: &str, x: &Rows) -> Rows {
    let w = get(p, &format!("{prefix}.weight"));
    let b = get(p, &format!("{prefix}.bias"));
    let d = dims(p, &format!("{prefix}.weight"));
    let (c_out, c_in, k) = (d[0], d[1], d[2]);
    assert_eq!(c_in, x.len(), "{prefix}: input channels");
    let len = x[0].len();
    let half = (k / 2) as isize;
    let mut y = vec![vec![0.0; len]; c_out];
    for o in 0..c_out {
        for n in 0..len {
            let mut acc = b[o];
            for i in 0..c_in {
                for t in 0..k {
                    let src = n as isize + t as isize - half;
                    if src >= 0 && (src as usize) < len {
                        acc += w[o * c_in * k + i * k + t] * x[i][src as usize];
                    }
                }
            }
            y[o][n] = acc;
        }
    }
    y
}

fn tanh_all(x: &mut Rows) {
    for row in x.iter_mut() {
        for v in row.iter_mut() {
            *v = v.tanh();
        }
    }
}

/// Per-channel `gamma * x + beta`, with gamma and beta linear in `cond`.
fn film(p: &ModelParams, prefix: &str, x: &Rows, cond: &[f64]) -> Rows {
    let gw = get(p, &format!("{prefix}.gamma_w"));
    let gb = get(p, &format!("{prefix}.gamma_b"));
    let bw = get(p, &format!("{prefix}.beta_w"));
    let bb = get(p, &format!("{prefix}.beta_b"));
    let kc = cond.len();
    let mut y = x.clone();
    for (j, row) in y.iter_mut().enumerate() {
        let mut gamma = gb[j];
        let mut beta = bb[j];
        for k in 0..kc {
            gamma += gw[j * kc + k] * cond[k];
            beta += bw[j * kc + k] * cond[k];
        }
        for v in row.iter_mut() {
            *v = gamma * *v + beta;
        }
    }
    y
}

fn block(p: &ModelParams, prefix: &str, x: &Rows, cond: &[f64]) -> Rows {
    let mut a = film(p, &format!("{prefix}.film"), &conv(p, &format!("{prefix}.conv"), x), cond);
    tanh_all(&mut a);
    let skip = if p.tensor(&format!("{prefix}.skip.weight")).is_some() {
        conv(p, &format!("{prefix}.skip"), x)
    } else {
        x.clone()
    };
    for (ar, sr) in a.iter_mut().zip(&skip) {
        for (v, s) in ar.iter_mut().zip(sr) {
            *v += s;
        }
    }
    a
}

/// Hyper-convolution with position-dependent kernels generated from `cond`.
fn hyper(p: &ModelParams, prefix: &str, x: &Rows, cond: &Rows, kappa: usize) -> Rows {
    let mut wh = conv(p, &format!("{prefix}.weight_net.0"), cond);
    tanh_all(&mut wh);
    let kernels = conv(p, &format!("{prefix}.weight_net.1"), &wh);
    let mut bh = conv(p, &format!("{prefix}.bias_net.0"), cond);
    tanh_all(&mut bh);
    let bias = conv(p, &format!("{prefix}.bias_net.1"), &bh);
    let c_in = x.len();
    let c_out = bias.len();
    let len = x[0].len();
    let half = (kappa / 2) as isize;
    let mut y = bias;
    for o in 0..c_out {
        for n in 0..len {
            for i in 0..c_in {
                for t in 0..kappa {
                    let src = n as isize + t as isize - half;
                    if src >= 0 && (src as usize) < len {
                        y[o][n] += kernels[(o * c_in + i) * kappa + t][n] * x[i][src as usize];
                    }
                }
            }
        }
    }
    y
}

/// Unclamped prediction in dB.
pub fn reference_forward(input: &ModelInput, p: &ModelParams) -> Vec<f64> {
    let stack = rows(&input.hrtf_stack);
    let pc = conv(p, "pc", &stack).remove(0);
    if p.variant() == Variant::A {
        return pc;
    }
    let offsets = rows(&input.offset_channels);
    let context: Rows = rows(&input.target_channels)
        .into_iter()
        .chain(rows(&input.anthro_channels))
        .collect();
    let cond = match p.variant() {
        Variant::B => {
            let all: Rows = offsets.iter().cloned().chain(context.iter().cloned()).collect();
            conv(p, "cond.proj", &all).remove(0)
        }
        Variant::C1 => {
            let c = conv(p, "cond.context", &context).remove(0);
            let m = block(p, "cond.film", &offsets, &c);
            conv(p, "cond.proj", &m).remove(0)
        }
        Variant::C2 => {
            let m = hyper(p, "cond.hyper", &offsets, &context, 3);
            conv(p, "cond.proj", &m).remove(0)
        }
        Variant::A => unreachable!(),
    };
    let mut h: Rows = stack
        .iter()
        .map(|r| r.iter().map(|v| v / 20.0).collect())
        .collect();
    for i in 0..5 {
        h = block(p, &format!("trunk.{i}"), &h, &cond);
    }
    assert_eq!(h.len(), 1);
    pc.iter().zip(&h[0]).map(|(a, b)| a + 20.0 * b).collect()
}
