//! In-plane linear interpolation between two measured spectra.
//!
//! The target is matched against measurements sharing its elevation
//! (within [`PLANE_TOL_DEG`]); the two nearest by great-circle angle are
//! blended linearly in azimuth. If that ring holds fewer than two
//! measurements, the equal-azimuth half-plane is used the same way, blending
//! linearly in elevation. Failing both, the two points nearest in Euclidean
//! distance are blended by inverse distance. Spectra are mixed in dB.

use crate::error::{Error, Result};
use crate::geometry::{angular_distance_deg, cart_to_sph, Position, SphericalPos};
use crate::spectra::{Hrtf, SubjectRecord};

pub const PLANE_TOL_DEG: f64 = 0.5;

/// Which rule produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineRule {
    Coincident,
    EqualElevation,
    EqualAzimuth,
    Nearest,
}

fn azimuth_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

fn blend(a: &Hrtf, b: &Hrtf, da: f64, db: f64) -> Result<Hrtf> {
    let total = da + db;
    let (wa, wb) = if total > 0.0 {
        (db / total, da / total)
    } else {
        (0.5, 0.5)
    };
    Hrtf::new(
        a.bins()
            .iter()
            .zip(b.bins())
            .map(|(x, y)| wa * x + wb * y)
            .collect(),
    )
}

/// Indices of the two smallest keys, ties broken by index.
fn two_smallest(keys: impl Iterator<Item = (usize, f64)>) -> Option<(usize, usize)> {
    let mut best: [Option<(usize, f64)>; 2] = [None, None];
    for (i, k) in keys {
        match best {
            [None, _] => best[0] = Some((i, k)),
            [Some(b0), _] if k < b0.1 => best = [Some((i, k)), best[0]],
            [Some(_), None] => best[1] = Some((i, k)),
            [Some(_), Some(b1)] if k < b1.1 => best[1] = Some((i, k)),
            _ => {}
        }
    }
    match best {
        [Some(a), Some(b)] => Some((a.0, b.0)),
        _ => None,
    }
}

/// Baseline estimate at `p` from `measurements`, with the rule used.
pub fn linear_interp_with_rule(measurements: &[(Position, Hrtf)], p: &Position) -> Result<(Hrtf, BaselineRule)> {
    linear_interp_excluding(measurements, p, None)
}

/// As [`linear_interp_with_rule`], ignoring measurement `exclude`.
pub fn linear_interp_excluding(
    measurements: &[(Position, Hrtf)],
    p: &Position,
    exclude: Option<usize>,
) -> Result<(Hrtf, BaselineRule)> {
    let usable: Vec<usize> = (0..measurements.len()).filter(|&i| Some(i) != exclude).collect();
    if usable.len() < 2 {
        return Err(Error::Domain(format!(
            "linear interpolation needs at least 2 measurements, got {}",
            usable.len()
        )));
    }
    if let Some(&i) = usable.iter().find(|&&i| measurements[i].0.distance(p) == 0.0) {
        return Ok((measurements[i].1.clone(), BaselineRule::Coincident));
    }
    let target = cart_to_sph(*p)?;
    let sph: Vec<SphericalPos> = measurements
        .iter()
        .map(|(q, _)| cart_to_sph(*q))
        .collect::<Result<_>>()?;
    let great_circle = |i: usize| angular_distance_deg(&measurements[i].0, p);

    let ring = usable
        .iter()
        .copied()
        .filter(|&i| (sph[i].elevation() - target.elevation()).abs() <= PLANE_TOL_DEG);
    if let Some((a, b)) = two_smallest(ring.map(|i| (i, great_circle(i)))) {
        let da = azimuth_gap(sph[a].azimuth(), target.azimuth());
        let db = azimuth_gap(sph[b].azimuth(), target.azimuth());
        let h = blend(&measurements[a].1, &measurements[b].1, da, db)?;
        return Ok((h, BaselineRule::EqualElevation));
    }

    let meridian = usable
        .iter()
        .copied()
        .filter(|&i| azimuth_gap(sph[i].azimuth(), target.azimuth()) <= PLANE_TOL_DEG);
    if let Some((a, b)) = two_smallest(meridian.map(|i| (i, great_circle(i)))) {
        let da = (sph[a].elevation() - target.elevation()).abs();
        let db = (sph[b].elevation() - target.elevation()).abs();
        let h = blend(&measurements[a].1, &measurements[b].1, da, db)?;
        return Ok((h, BaselineRule::EqualAzimuth));
    }

    let euclid = |i: usize| measurements[i].0.distance(p);
    let (a, b) = two_smallest(usable.iter().map(|&i| (i, euclid(i)))).expect("two usable measurements");
    let h = blend(&measurements[a].1, &measurements[b].1, euclid(a), euclid(b))?;
    Ok((h, BaselineRule::Nearest))
}

pub fn linear_interp(measurements: &[(Position, Hrtf)], p: &Position) -> Result<Hrtf> {
    Ok(linear_interp_with_rule(measurements, p)?.0)
}

/// Baseline estimate from all of one subject's measurements.
pub fn linear_interp_subject(subject: &SubjectRecord, p: &Position) -> Result<Hrtf> {
    linear_interp(subject.measurements(), p)
}
