//! A smooth, deterministic stand-in for measured HRTF sets.
//!
//! The field is a broadband lateral term plus eight spectral Gaussian bumps
//! (in log-frequency). Each bump's gain, center frequency and width are
//! polynomials of degree <= 2 in the unit direction vector `u`, so they are
//! trigonometric polynomials of azimuth and elevation and smooth through the
//! poles. Anthropometry enters linearly through its z-scores: it shifts bump
//! centers (pinna size scales resonances) and gains.
//!
//! Frozen constants:
//! - lateral level `6 * u_y` dB and a head-shadow tilt of up to `-8` dB at
//!   Nyquist on the contralateral side;
//! - bump centers log-uniform in 1.5-16 kHz, widths 0.15-0.45 octaves, base
//!   gains in [-14, 8] dB;
//! - per-bump direction coefficients bounded by 5 dB (linear) and 3 dB
//!   (quadratic); center shift up to `exp(+-0.2)` with direction, and `0.04`
//!   per unit z-score with anthropometry.
//!
//! Output is clamped to [-60, 20] dB.
//!
//! With these constants the directional gradient of any bin is below roughly
//! 40 dB/rad, so positions 0.01 rad apart differ by well under 1 dB LSD.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Anthropometry, Dataset, Hrtf, NormStats, Origin, SubjectRecord};
use crate::error::{Error, Result};
use crate::geometry::{Grid, Position};
use crate::{ANTHRO_FEATURES, BINS, HRIR_LEN, SAMPLE_RATE};

const N_BUMPS: usize = 8;
const FIELD_MIN_DB: f64 = -60.0;
const FIELD_MAX_DB: f64 = 20.0;

/// Population mean and standard deviation (cm) of the twelve left-ear
/// features drawn for synthetic subjects.
pub const ANTHRO_PRIORS_CM: [(f64, f64); ANTHRO_FEATURES] = [
    (1.91, 0.18), // cavum concha height
    (0.68, 0.12), // cymba concha height
    (1.53, 0.17), // cavum concha width
    (1.64, 0.25), // fossa height
    (6.41, 0.51), // pinna height
    (3.03, 0.27), // pinna width
    (0.71, 0.11), // intertragal incisure width
    (1.08, 0.14), // cavum concha depth
    (2.95, 0.33), // pinna offset down
    (0.93, 0.21), // pinna offset back
    (1.46, 0.19), // pinna rotation proxy
    (1.88, 0.22), // pinna flare proxy
];

#[derive(Debug, Clone, Copy)]
struct Bump {
    log2_center_hz: f64,
    width_oct: f64,
    gain_db: f64,
    gain_lin: [f64; 3],
    gain_quad: [f64; 3],
    shift_lin: [f64; 3],
    anthro_shift: [f64; ANTHRO_FEATURES],
    anthro_gain: [f64; ANTHRO_FEATURES],
}

/// The seed-derived constants of one synthetic field.
#[derive(Debug, Clone)]
pub struct FieldSpec {
    bumps: [Bump; N_BUMPS],
}

impl FieldSpec {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
        let vec3 = |rng: &mut ChaCha8Rng, bound: f64| -> [f64; 3] {
            std::array::from_fn(|_| rng.random_range(-bound..bound))
        };
        let bumps = std::array::from_fn(|_| {
            let log2_center_hz = rng.random_range(1500f64.log2()..16000f64.log2());
            let width_oct = rng.random_range(0.15..0.45);
            let gain_db = rng.random_range(-14.0..8.0);
            let gain_lin = vec3(&mut rng, 5.0);
            let gain_quad = vec3(&mut rng, 3.0);
            let shift_lin = vec3(&mut rng, 0.2 / 3f64.sqrt());
            let anthro_shift = std::array::from_fn(|_| rng.random_range(-0.04..0.04));
            let anthro_gain = std::array::from_fn(|_| rng.random_range(-0.8..0.8));
            Bump {
                log2_center_hz,
                width_oct,
                gain_db,
                gain_lin,
                gain_quad,
                shift_lin,
                anthro_shift,
                anthro_gain,
            }
        });
        Self { bumps }
    }

    /// Field value at unit direction `u` for anthropometry z-scores `z`.
    pub fn evaluate(&self, u: [f64; 3], z: &[f64; ANTHRO_FEATURES]) -> Vec<f64> {
        let dot3 = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let dotj = |a: &[f64; ANTHRO_FEATURES]| a.iter().zip(z).map(|(c, v)| c * v).sum::<f64>();
        let u2 = [u[0] * u[0], u[1] * u[1], u[2] * u[2]];

        // per-bump direction/anthropometry-dependent parameters
        let params: Vec<(f64, f64, f64)> = self
            .bumps
            .iter()
            .map(|b| {
                let center = b.log2_center_hz
                    + (dot3(&b.shift_lin, &u) + dotj(&b.anthro_shift)) / std::f64::consts::LN_2;
                let gain = b.gain_db
                    + dot3(&b.gain_lin, &u)
                    + dot3(&b.gain_quad, &u2)
                    + dotj(&b.anthro_gain);
                (center, b.width_oct, gain)
            })
            .collect();

        let nyquist = SAMPLE_RATE / 2.0;
        let shadow = 0.5 * (1.0 - u[1]);
        (0..BINS)
            .map(|k| {
                let f = k as f64 * SAMPLE_RATE / HRIR_LEN as f64;
                let mut v = 6.0 * u[1] - 8.0 * shadow * (f / nyquist);
                if f > 0.0 {
                    let lf = f.log2();
                    for &(center, width, gain) in &params {
                        let t = (lf - center) / width;
                        v += gain * (-0.5 * t * t).exp();
                    }
                }
                v.clamp(FIELD_MIN_DB, FIELD_MAX_DB)
            })
            .collect()
    }
}

/// Ground-truth HRTF of the synthetic field with the given seed.
///
/// Anthropometry without normalization statistics is treated as the
/// population mean.
pub fn synth_hrtf(p: &Position, a: &Anthropometry, seed: u64) -> Result<Hrtf> {
    synth_with(&FieldSpec::from_seed(seed), p, a)
}

fn synth_with(spec: &FieldSpec, p: &Position, a: &Anthropometry) -> Result<Hrtf> {
    let r = p.norm();
    if !(r > 0.0) || !p.is_finite() {
        return Err(Error::Domain(format!("position {p} has no direction")));
    }
    let u = [p.x / r, p.y / r, p.z / r];
    let z = a.normalized().unwrap_or([0.0; ANTHRO_FEATURES]);
    Hrtf::new(spec.evaluate(u, &z))
}

/// Draws `n` subjects' raw features from [`ANTHRO_PRIORS_CM`].
pub fn random_anthropometry(n: usize, seed: u64) -> Vec<[f64; ANTHRO_FEATURES]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbb67_ae85_84ca_a73b);
    (0..n)
        .map(|_| {
            std::array::from_fn(|j| {
                let (mean, sd) = ANTHRO_PRIORS_CM[j];
                let normal = Normal::new(mean, sd).expect("valid prior");
                normal.sample(&mut rng).max(0.05)
            })
        })
        .collect()
}

/// Evaluates the field with the given seed for each subject on every grid
/// point. Subjects keep whatever normalization statistics they carry.
pub fn synthetic_dataset_from(
    grid: &Grid,
    subjects: Vec<(String, Anthropometry)>,
    seed: u64,
) -> Result<Dataset> {
    let spec = FieldSpec::from_seed(seed);
    let records = subjects
        .into_iter()
        .map(|(id, anthro)| {
            let measurements = grid
                .positions()
                .iter()
                .map(|p| Ok((*p, synth_with(&spec, p, &anthro)?)))
                .collect::<Result<Vec<_>>>()?;
            SubjectRecord::new(id, anthro, measurements)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(records, grid.clone(), Origin::Synthetic)
}

/// `n_subjects` synthetic subjects named `s000`, `s001`, ... sharing one
/// field; anthropometry is z-scored over the generated subjects.
pub fn make_synthetic_dataset(grid: &Grid, n_subjects: usize, seed: u64) -> Result<Dataset> {
    if n_subjects == 0 {
        return Err(Error::Domain("need at least one subject".into()));
    }
    let rows = random_anthropometry(n_subjects, seed);
    let norm = NormStats::from_features(&rows)?;
    let subjects = rows
        .into_iter()
        .enumerate()
        .map(|(i, f)| Ok((format!("s{i:03}"), Anthropometry::new(f)?.with_norm(norm))))
        .collect::<Result<Vec<_>>>()?;
    synthetic_dataset_from(grid, subjects, seed)
}
