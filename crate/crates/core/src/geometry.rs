//! Source positions, sampling grids and neighborhoods.
//!
//! Positions are Cartesian, in meters, with the origin at the head center:
//! `+x` points to the front, `+y` to the left and `+z` up. Spherical
//! coordinates use azimuth measured counter-clockwise from `+x` in the
//! horizontal plane and elevation measured from that plane.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spectra::Hrtf;

/// Distances at or below this are treated as coincident points.
pub const COINCIDENT_EPS: f64 = 1e-9;

/// Elevations within this many degrees of +-90 are poles.
const POLE_EPS_DEG: f64 = 1e-12;

/// Default tolerance of [`plane_membership`], degrees.
pub const DEFAULT_PLANE_TOL_DEG: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (*self - *other).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Add for Position {
    type Output = Position;
    fn add(self, rhs: Position) -> Position {
        Position::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Position {
    type Output = Position;
    fn sub(self, rhs: Position) -> Position {
        Position::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6}, {:.6})", self.x, self.y, self.z)
    }
}

/// Spherical coordinates in degrees and meters.
///
/// Construction normalizes azimuth into `[0, 360)` and rejects elevations
/// outside `[-90, 90]` or non-positive radii.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalPos {
    azimuth: f64,
    elevation: f64,
    radius: f64,
}

impl SphericalPos {
    pub fn new(azimuth: f64, elevation: f64, radius: f64) -> Result<Self> {
        if !(azimuth.is_finite() && elevation.is_finite() && radius.is_finite()) {
            return Err(Error::Domain("spherical coordinates must be finite".into()));
        }
        if !(-90.0..=90.0).contains(&elevation) {
            return Err(Error::Domain(format!("elevation {elevation} outside [-90, 90]")));
        }
        if radius <= 0.0 {
            return Err(Error::Domain(format!("radius {radius} must be positive")));
        }
        Ok(Self {
            azimuth: wrap_degrees(azimuth),
            elevation,
            radius,
        })
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

fn wrap_degrees(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

pub fn sph_to_cart(s: SphericalPos) -> Position {
    let az = s.azimuth.to_radians();
    let el = s.elevation.to_radians();
    let (sin_el, cos_el) = el.sin_cos();
    let (sin_az, cos_az) = az.sin_cos();
    Position::new(
        s.radius * cos_el * cos_az,
        s.radius * cos_el * sin_az,
        s.radius * sin_el,
    )
}

/// Inverse of [`sph_to_cart`]. Azimuth is reported as 0 at the poles.
pub fn cart_to_sph(p: Position) -> Result<SphericalPos> {
    if !p.is_finite() {
        return Err(Error::Domain(format!("non-finite position {p}")));
    }
    let r = p.norm();
    if r == 0.0 {
        return Err(Error::Domain("zero vector has no direction".into()));
    }
    let elevation = (p.z / r).clamp(-1.0, 1.0).asin().to_degrees();
    let azimuth = if 90.0 - elevation.abs() <= POLE_EPS_DEG {
        0.0
    } else {
        wrap_degrees(p.y.atan2(p.x).to_degrees())
    };
    Ok(SphericalPos {
        azimuth,
        elevation,
        radius: r,
    })
}

/// Great-circle angle between the directions of two positions, degrees.
pub fn angular_distance_deg(a: &Position, b: &Position) -> f64 {
    let cross = Position::new(
        a.y * b.z - a.z * b.y,
        a.z * b.x - a.x * b.z,
        a.x * b.y - a.y * b.x,
    );
    let dot = a.x * b.x + a.y * b.y + a.z * b.z;
    cross.norm().atan2(dot).to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Geographical,
    QuasiUniform,
    Loaded,
}

impl GridKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GridKind::Geographical => "geographical",
            GridKind::QuasiUniform => "quasi-uniform",
            GridKind::Loaded => "loaded",
        }
    }
}

/// An ordered set of distinct source positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    positions: Vec<Position>,
    kind: GridKind,
    radius: f64,
}

impl Grid {
    /// Validates finiteness and pairwise distinctness.
    pub fn new(positions: Vec<Position>, kind: GridKind, radius: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Domain("grid has no points".into()));
        }
        if let Some(p) = positions.iter().find(|p| !p.is_finite()) {
            return Err(Error::Domain(format!("non-finite grid point {p}")));
        }
        if let Some((i, j)) = find_coincident(&positions) {
            return Err(Error::Domain(format!(
                "grid points {i} and {j} coincide at {}",
                positions[i]
            )));
        }
        Ok(Self {
            positions,
            kind,
            radius,
        })
    }

    /// A grid of arbitrary points; the radius is their mean distance to the origin.
    pub fn loaded(positions: Vec<Position>) -> Result<Self> {
        let radius = if positions.is_empty() {
            0.0
        } else {
            positions.iter().map(Position::norm).sum::<f64>() / positions.len() as f64
        };
        Self::new(positions, GridKind::Loaded, radius)
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Index of the grid point coinciding with `p`, if any.
    pub fn index_of(&self, p: &Position) -> Option<usize> {
        self.positions
            .iter()
            .position(|q| q.distance(p) <= COINCIDENT_EPS)
    }

    /// Smallest distance between any two points.
    pub fn min_spacing(&self) -> f64 {
        let n = self.positions.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                best = best.min(self.positions[i].distance(&self.positions[j]));
            }
        }
        best
    }
}

/// Returns the first pair of points closer than [`COINCIDENT_EPS`].
pub(crate) fn find_coincident(points: &[Position]) -> Option<(usize, usize)> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x));
    for (oi, &i) in order.iter().enumerate() {
        for &j in &order[oi + 1..] {
            if points[j].x - points[i].x > COINCIDENT_EPS {
                break;
            }
            if points[i].distance(&points[j]) <= COINCIDENT_EPS {
                return Some((i.min(j), i.max(j)));
            }
        }
    }
    None
}

/// Rings of constant elevation with (approximately) constant great-circle
/// spacing between neighbors on a ring.
///
/// Rings sit at `-90 + k * step_el`; a ring at elevation `el` holds
/// `max(1, round(360 * cos(el) / gc_step_az))` points starting at azimuth 0.
/// Points are ordered by elevation, then azimuth.
pub fn make_geographical_grid(step_el: f64, gc_step_az: f64, radius: f64) -> Result<Grid> {
    if !(step_el > 0.0 && step_el <= 90.0) {
        return Err(Error::Domain(format!("elevation step {step_el} outside (0, 90]")));
    }
    if !(gc_step_az > 0.0 && gc_step_az.is_finite()) {
        return Err(Error::Domain(format!("azimuth step {gc_step_az} must be positive")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Domain(format!("radius {radius} must be positive")));
    }
    let rings = (180.0 / step_el + 1e-9).floor() as usize;
    let mut positions = Vec::new();
    for k in 0..=rings {
        let el = (-90.0 + k as f64 * step_el).min(90.0);
        let count = if 90.0 - el.abs() <= 1e-9 {
            1
        } else {
            ((360.0 * el.to_radians().cos() / gc_step_az).round() as usize).max(1)
        };
        for m in 0..count {
            let az = 360.0 * m as f64 / count as f64;
            positions.push(sph_to_cart(SphericalPos::new(az, el, radius)?));
        }
    }
    Grid::new(positions, GridKind::Geographical, radius)
}

/// Fibonacci-sphere layout of exactly `n` points.
///
/// Point `i` sits at height `z = 1 - (2i + 1) / n` (scaled by the radius) and
/// azimuth `i * golden_angle`.
pub fn make_quasi_uniform_grid(n: usize, radius: f64) -> Result<Grid> {
    if n < 2 {
        return Err(Error::Domain(format!("quasi-uniform grid needs n >= 2, got {n}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Domain(format!("radius {radius} must be positive")));
    }
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    let positions = (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let ring = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            Position::new(radius * ring * phi.cos(), radius * ring * phi.sin(), radius * z)
        })
        .collect();
    Grid::new(positions, GridKind::QuasiUniform, radius)
}

/// Indices of points `q` with `0 < |q - p| < delta`, nearest first; ties
/// keep index order.
pub fn neighborhood_indices(points: &[Position], p: &Position, delta: f64) -> Vec<usize> {
    let mut hits: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, q)| {
            let d = q.distance(p);
            (d > 0.0 && d < delta).then_some((d, i))
        })
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.into_iter().map(|(_, i)| i).collect()
}

/// Grid points strictly inside the open ball of radius `delta` around `p`,
/// excluding `p` itself, nearest first.
pub fn neighborhood(grid: &Grid, p: &Position, delta: f64) -> Vec<Position> {
    neighborhood_indices(grid.positions(), p, delta)
        .into_iter()
        .map(|i| grid.positions()[i])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Uniform draws with replacement.
    Train,
    /// The nearest candidates, cycling when there are too few.
    Test,
}

/// Picks `n` entries of a nearest-first candidate list of length `len`.
pub fn sample_neighbor_indices(
    len: usize,
    n: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::Uncoverable("empty candidate list".into()));
    }
    Ok(match mode {
        SampleMode::Train => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.random_range(0..len)).collect()
        }
        SampleMode::Test => (0..n).map(|i| i % len).collect(),
    })
}

/// `candidates` must already be sorted nearest first, as returned by
/// [`neighborhood`].
pub fn sample_neighbors(
    candidates: &[Position],
    n: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<Vec<Position>> {
    Ok(sample_neighbor_indices(candidates.len(), n, mode, seed)?
        .into_iter()
        .map(|i| candidates[i])
        .collect())
}

/// A target position with the neighbors (and their spectra) an estimate is
/// built from.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    target: Position,
    neighbors: Vec<Position>,
    offsets: Vec<Position>,
    hrtfs: Vec<Hrtf>,
    delta: f64,
}

impl NeighborSet {
    pub fn new(target: Position, neighbors: Vec<(Position, Hrtf)>, delta: f64) -> Result<Self> {
        if neighbors.is_empty() {
            return Err(Error::Uncoverable(format!("target at {target}")));
        }
        let mut positions = Vec::with_capacity(neighbors.len());
        let mut hrtfs = Vec::with_capacity(neighbors.len());
        for (q, h) in neighbors {
            let d = q.distance(&target);
            if !(d > 0.0 && d < delta) {
                return Err(Error::Domain(format!(
                    "neighbor {q} at distance {d} outside (0, {delta})"
                )));
            }
            positions.push(q);
            hrtfs.push(h);
        }
        let offsets = positions.iter().map(|q| *q - target).collect();
        Ok(Self {
            target,
            neighbors: positions,
            offsets,
            hrtfs,
            delta,
        })
    }

    pub fn target(&self) -> Position {
        self.target
    }

    pub fn neighbors(&self) -> &[Position] {
        &self.neighbors
    }

    pub fn offsets(&self) -> &[Position] {
        &self.offsets
    }

    pub fn hrtfs(&self) -> &[Hrtf] {
        &self.hrtfs
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Plane {
    Horizontal,
    Median,
    Frontal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Horizontal, Plane::Median, Plane::Frontal];

    pub fn label(&self) -> &'static str {
        match self {
            Plane::Horizontal => "Hor.",
            Plane::Median => "Med.",
            Plane::Frontal => "Fro.",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PlaneSet(u8);

impl PlaneSet {
    fn bit(plane: Plane) -> u8 {
        match plane {
            Plane::Horizontal => 1,
            Plane::Median => 2,
            Plane::Frontal => 4,
        }
    }

    pub fn insert(&mut self, plane: Plane) {
        self.0 |= Self::bit(plane);
    }

    pub fn contains(&self, plane: Plane) -> bool {
        self.0 & Self::bit(plane) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Plane> + '_ {
        Plane::ALL.into_iter().filter(|p| self.contains(*p))
    }
}

/// Which of the horizontal (`z = 0`), median (`y = 0`) and frontal (`x = 0`)
/// planes `p` lies on, within `tol` degrees of great-circle distance.
pub fn plane_membership(p: &Position, tol: f64) -> Result<PlaneSet> {
    let r = p.norm();
    if !(r > 0.0) || !p.is_finite() {
        return Err(Error::Domain(format!("position {p} has no direction")));
    }
    let off_plane = |component: f64| (component.abs() / r).min(1.0).asin().to_degrees();
    let mut set = PlaneSet::default();
    if off_plane(p.z) <= tol {
        set.insert(Plane::Horizontal);
    }
    if off_plane(p.y) <= tol {
        set.insert(Plane::Median);
    }
    if off_plane(p.x) <= tol {
        set.insert(Plane::Frontal);
    }
    Ok(set)
}

/// Keeps every `t`-th point of the grid's ordering, starting at index 0.
pub fn downsample_grid(grid: &Grid, t: usize) -> Result<Grid> {
    if t == 0 {
        return Err(Error::Domain("downsample factor must be >= 1".into()));
    }
    Ok(Grid {
        positions: grid.positions.iter().step_by(t).copied().collect(),
        kind: grid.kind,
        radius: grid.radius,
    })
}
