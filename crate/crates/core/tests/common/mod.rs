//! Shared helpers for the integration tests: random fixtures, a
//! finite-difference gradient checker and a straight-line reference
//! interpreter for the four model variants.

#![allow(dead_code)]

pub mod reference;

use hrtf_field::encoding::encode_anthro_z;
use hrtf_field::network::{
    forward_raw, Conv1d, FilmAffine, FilmResBlock, HyperConv, ModelInput, ModelParams, Tensor1d,
    Variant,
};
use hrtf_field::spectra::lsd_slices;
use hrtf_field::training::backward;
use hrtf_field::{Hrtf, Position, ANTHRO_FEATURES, BINS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, c: usize, len: usize, scale: f64) -> Tensor1d {
    Tensor1d::from_vec(c, len, random_vec(rng, c * len, scale)).unwrap()
}

/// A plausible model input: neighbors within 0.3 m of a target at ~1.5 m.
pub fn random_input(n: usize, seed: u64) -> ModelInput {
    let mut r = rng(seed);
    let target = Position::new(
        r.random_range(-1.5..1.5),
        r.random_range(-1.5..1.5),
        r.random_range(-1.5..1.5),
    );
    let neighbors: Vec<Position> = (0..n)
        .map(|_| {
            target
                + Position::new(
                    r.random_range(-0.3..0.3),
                    r.random_range(-0.3..0.3),
                    r.random_range(-0.3..0.3),
                )
        })
        .collect();
    let spectra: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..BINS).map(|_| r.random_range(-40.0..15.0)).collect())
        .collect();
    let z: [f64; ANTHRO_FEATURES] = std::array::from_fn(|_| r.random_range(-2.0..2.0));
    let refs: Vec<&[f64]> = spectra.iter().map(Vec::as_slice).collect();
    ModelInput::assemble(&target, &neighbors, &refs, encode_anthro_z(&z)).unwrap()
}

pub fn random_target(seed: u64) -> Hrtf {
    let mut r = rng(seed ^ 0xabcdef);
    Hrtf::new((0..BINS).map(|_| r.random_range(-40.0..15.0)).collect()).unwrap()
}

/// Magnitude spectrum in dB by direct summation of the DFT.
pub fn naive_dft_db(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..BINS)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let angle = -2.0 * PI * (k * t) as f64 / n;
                re += v * angle.cos();
                im += v * angle.sin();
            }
            20.0 * re.hypot(im).max(1e-12).log10()
        })
        .collect()
}

/// Indices within the open ball around `p`, minus `p` itself, nearest
/// first, by scanning every point.
pub fn exhaustive_neighborhood(points: &[Position], p: &Position, delta: f64) -> Vec<usize> {
    let mut hits: Vec<(f64, usize)> = Vec::new();
    for (i, c) in points.iter().enumerate() {
        let d = ((c.x - p.x).powi(2) + (c.y - p.y).powi(2) + (c.z - p.z).powi(2)).sqrt();
        if d > 0.0 && d < delta {
            hits.push((d, i));
        }
    }
    hits.sort_by(|a, b| a.partial_cmp(b).unwrap());
    hits.into_iter().map(|(_, i)| i).collect()
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floors for relative errors; below them errors are absolute.
/// The full-model loss is tens of dB, so central differences at step 1e-6
/// carry about 1e-8 of roundoff.
pub const LAYER_REL_FLOOR: f64 = 1e-4;
pub const MODEL_REL_FLOOR: f64 = 1e-3;

fn step(w: f64) -> f64 {
    1e-6 * w.abs().max(1.0)
}

/// Summary of one gradient check.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    pub probes: usize,
    pub max_rel: f64,
}

impl GradCheck {
    pub fn merge(&mut self, other: GradCheck) {
        self.probes += other.probes;
        self.max_rel = self.max_rel.max(other.max_rel);
    }
}

/// Full model: analytic gradient of LSD(forward, target) vs central
/// differences at `probes` coordinates, at least one per tensor.
pub fn check_model(variant: Variant, n: usize, seed: u64, probes: usize) -> GradCheck {
    let params = ModelParams::random(variant, n, seed, 0.3).unwrap();
    let input = random_input(n, seed + 1);
    let target = random_target(seed + 2);
    let (_, grad) = backward(&input, &params, &target).unwrap();
    let offsets = params.offsets();
    let total = params.num_params();
    let mut r = rng(seed + 3);
    let mut coords: Vec<usize> = offsets
        .iter()
        .zip(params.tensors())
        .map(|(&o, t)| o + r.random_range(0..t.data.len()))
        .collect();
    while coords.len() < probes {
        coords.push(r.random_range(0..total));
    }
    let base = params.flat();
    let loss_at = |flat: &[f64]| {
        let mut p = params.clone();
        p.set_flat(flat).unwrap();
        lsd_slices(&forward_raw(&input, &p).unwrap(), target.bins())
    };
    let mut out = GradCheck::default();
    for &i in &coords {
        let h = step(base[i]);
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        out.merge(GradCheck {
            probes: 1,
            max_rel: rel_err(grad[i], numeric, MODEL_REL_FLOOR),
        });
    }
    out
}

/// Variables of a layer under test, flattened.
type Vars = Vec<Vec<f64>>;

/// Checks `d(sum r * f(vars)) / d vars` against `analytic(vars, r)` at
/// `probes` random coordinates.
fn check_layer(
    vars: &Vars,
    out_len: usize,
    seed: u64,
    probes: usize,
    f: &dyn Fn(&Vars) -> Vec<f64>,
    analytic: &dyn Fn(&Vars, &[f64]) -> Vars,
) -> GradCheck {
    let mut r = rng(seed);
    let weights = random_vec(&mut r, out_len, 1.0);
    let grads = analytic(vars, &weights);
    let objective = |v: &Vars| f(v).iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
    let mut out = GradCheck::default();
    for _ in 0..probes {
        let which = r.random_range(0..vars.len());
        let i = r.random_range(0..vars[which].len());
        let h = step(vars[which][i]);
        let mut plus = vars.clone();
        plus[which][i] += h;
        let mut minus = vars.clone();
        minus[which][i] -= h;
        let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
        out.merge(GradCheck {
            probes: 1,
            max_rel: rel_err(grads[which][i], numeric, LAYER_REL_FLOOR),
        });
    }
    out
}

const LEN: usize = 17;

fn tensor(v: &[f64], c: usize) -> Tensor1d {
    Tensor1d::from_vec(c, v.len() / c, v.to_vec()).unwrap()
}

pub fn check_pointwise(seed: u64, probes: usize) -> GradCheck {
    let n = 5;
    let mut r = rng(seed);
    let vars = vec![random_vec(&mut r, n, 1.0), random_vec(&mut r, 1, 1.0), random_vec(&mut r, n * LEN, 10.0)];
    let f = |v: &Vars| {
        let c = Conv1d::new(&v[0], &v[1], 1, n, 1).unwrap();
        c.forward(&tensor(&v[2], n)).unwrap().into_data()
    };
    let g = |v: &Vars, w: &[f64]| {
        let c = Conv1d::new(&v[0], &v[1], 1, n, 1).unwrap();
        let g = c.backward(&tensor(&v[2], n), &tensor(w, 1)).unwrap();
        vec![g.weight, g.bias, g.input.into_data()]
    };
    check_layer(&vars, LEN, seed + 1, probes, &f, &g)
}

pub fn check_conv(seed: u64, probes: usize) -> GradCheck {
    let (co, ci, k) = (3, 2, 3);
    let mut r = rng(seed);
    let vars = vec![
        random_vec(&mut r, co * ci * k, 1.0),
        random_vec(&mut r, co, 1.0),
        random_vec(&mut r, ci * LEN, 2.0),
    ];
    let f = |v: &Vars| {
        let c = Conv1d::new(&v[0], &v[1], co, ci, k).unwrap();
        c.forward(&tensor(&v[2], ci)).unwrap().into_data()
    };
    let g = |v: &Vars, w: &[f64]| {
        let c = Conv1d::new(&v[0], &v[1], co, ci, k).unwrap();
        let g = c.backward(&tensor(&v[2], ci), &tensor(w, co)).unwrap();
        vec![g.weight, g.bias, g.input.into_data()]
    };
    check_layer(&vars, co * LEN, seed + 1, probes, &f, &g)
}

pub fn check_film(seed: u64, probes: usize) -> GradCheck {
    let ch = 3;
    let mut r = rng(seed);
    let vars = vec![
        random_vec(&mut r, ch * LEN, 0.3),
        random_vec(&mut r, ch, 1.0),
        random_vec(&mut r, ch * LEN, 0.3),
        random_vec(&mut r, ch, 1.0),
        random_vec(&mut r, ch * LEN, 2.0),
        random_vec(&mut r, LEN, 1.0),
    ];
    fn film(v: &Vars, ch: usize) -> FilmAffine<'_> {
        FilmAffine::new(&v[0], &v[1], &v[2], &v[3], ch).unwrap()
    }
    let f = |v: &Vars| film(v, ch).forward(&tensor(&v[4], ch), &tensor(&v[5], 1)).unwrap().into_data();
    let g = |v: &Vars, w: &[f64]| {
        let g = film(v, ch)
            .backward(&tensor(&v[4], ch), &tensor(&v[5], 1), &tensor(w, ch))
            .unwrap();
        vec![g.gamma_w, g.gamma_b, g.beta_w, g.beta_b, g.input.into_data(), g.cond.into_data()]
    };
    check_layer(&vars, ch * LEN, seed + 1, probes, &f, &g)
}

/// `project` chooses a block with a pointwise skip projection (2 -> 3
/// channels) instead of an identity skip (3 -> 3).
pub fn check_block(seed: u64, probes: usize, project: bool) -> GradCheck {
    let (ci, co, k) = if project { (2, 3, 3) } else { (3, 3, 3) };
    let mut r = rng(seed);
    let mut vars = vec![
        random_vec(&mut r, co * ci * k, 0.5),
        random_vec(&mut r, co, 0.5),
        random_vec(&mut r, co * LEN, 0.3),
        random_vec(&mut r, co, 1.0),
        random_vec(&mut r, co * LEN, 0.3),
        random_vec(&mut r, co, 0.5),
        random_vec(&mut r, ci * LEN, 1.0),
        random_vec(&mut r, LEN, 1.0),
    ];
    if project {
        vars.push(random_vec(&mut r, co * ci, 0.5));
        vars.push(random_vec(&mut r, co, 0.5));
    }
    fn block(v: &Vars, ci: usize, co: usize, k: usize, project: bool) -> FilmResBlock<'_> {
        let conv = Conv1d::new(&v[0], &v[1], co, ci, k).unwrap();
        let film = FilmAffine::new(&v[2], &v[3], &v[4], &v[5], co).unwrap();
        let skip = project.then(|| Conv1d::new(&v[8], &v[9], co, ci, 1).unwrap());
        FilmResBlock::new(conv, film, skip).unwrap()
    }
    let f = |v: &Vars| block(v, ci, co, k, project).forward(&tensor(&v[6], ci), &tensor(&v[7], 1)).unwrap().into_data();
    let g = |v: &Vars, w: &[f64]| {
        let b = block(v, ci, co, k, project);
        let (x, c) = (tensor(&v[6], ci), tensor(&v[7], 1));
        let (_, cache) = b.forward_cached(&x, &c).unwrap();
        let g = b.backward(&x, &c, &cache, &tensor(w, co)).unwrap();
        let mut out = vec![
            g.conv.weight,
            g.conv.bias,
            g.film.gamma_w,
            g.film.gamma_b,
            g.film.beta_w,
            g.film.beta_b,
            g.input.into_data(),
            g.cond.into_data(),
        ];
        if let Some(s) = g.skip {
            out.push(s.weight);
            out.push(s.bias);
        }
        out
    };
    check_layer(&vars, co * LEN, seed + 1, probes, &f, &g)
}

pub fn check_hyper(seed: u64, probes: usize) -> GradCheck {
    let (ci, co, kappa, cc, hidden) = (2, 3, 3, 4, 5);
    let mut r = rng(seed);
    let vars = vec![
        random_vec(&mut r, hidden * cc, 0.7),
        random_vec(&mut r, hidden, 0.5),
        random_vec(&mut r, co * ci * kappa * hidden, 0.5),
        random_vec(&mut r, co * ci * kappa, 0.5),
        random_vec(&mut r, hidden * cc, 0.7),
        random_vec(&mut r, hidden, 0.5),
        random_vec(&mut r, co * hidden, 0.5),
        random_vec(&mut r, co, 0.5),
        random_vec(&mut r, ci * LEN, 1.0),
        random_vec(&mut r, cc * LEN, 1.0),
    ];
    fn hyper(v: &Vars, dims: (usize, usize, usize, usize, usize)) -> HyperConv<'_> {
        let (ci, co, kappa, cc, hidden) = dims;
        HyperConv::new(
            [
                Conv1d::new(&v[0], &v[1], hidden, cc, 1).unwrap(),
                Conv1d::new(&v[2], &v[3], co * ci * kappa, hidden, 1).unwrap(),
            ],
            [
                Conv1d::new(&v[4], &v[5], hidden, cc, 1).unwrap(),
                Conv1d::new(&v[6], &v[7], co, hidden, 1).unwrap(),
            ],
            ci,
            co,
            kappa,
        )
        .unwrap()
    }
    let dims = (ci, co, kappa, cc, hidden);
    let f = |v: &Vars| hyper(v, dims).forward(&tensor(&v[8], ci), &tensor(&v[9], cc)).unwrap().into_data();
    let g = |v: &Vars, w: &[f64]| {
        let h = hyper(v, dims);
        let (x, c) = (tensor(&v[8], ci), tensor(&v[9], cc));
        let (_, cache) = h.forward_cached(&x, &c).unwrap();
        let g = h.backward(&x, &c, &cache, &tensor(w, co)).unwrap();
        let [w0, w1] = g.weight_net;
        let [b0, b1] = g.bias_net;
        vec![
            w0.weight,
            w0.bias,
            w1.weight,
            w1.bias,
            b0.weight,
            b0.bias,
            b1.weight,
            b1.bias,
            g.input.into_data(),
            g.cond.into_data(),
        ]
    };
    check_layer(&vars, co * LEN, seed + 1, probes, &f, &g)
}

/// Named layer checks, each over `configs` random configurations with
/// `probes` coordinates per configuration.
pub fn check_all_layers(configs: u64, probes: usize) -> Vec<(&'static str, GradCheck)> {
    type Check = fn(u64, usize) -> GradCheck;
    let checks: [(&str, Check); 6] = [
        ("pointwise_conv", check_pointwise),
        ("conv1d", check_conv),
        ("film_affine", check_film),
        ("film_res_block (identity skip)", |s, p| check_block(s, p, false)),
        ("film_res_block (projected skip)", |s, p| check_block(s, p, true)),
        ("hyper_conv", check_hyper),
    ];
    checks
        .iter()
        .map(|&(name, f)| {
            let mut total = GradCheck::default();
            for c in 0..configs {
                total.merge(f(1000 + 17 * c, probes));
            }
            (name, total)
        })
        .collect()
}
