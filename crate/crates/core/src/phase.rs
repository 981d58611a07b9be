//! Phase-space substrate: domains, velocity grids, potentials, degeneracy
//! weights, the discretized phase grid with its quadratures, and fields.

use crate::error::{invalid, Error, Result};
use crate::linalg::{constrained_pencil, Dense};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Spatial domain Ω.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialDomain {
    #[serde(rename = "torus1d")]
    Torus1D { length: f64 },
    #[serde(rename = "interval1d")]
    Interval1D { a: f64, b: f64 },
    #[serde(rename = "torus2d")]
    Torus2D { lengths: [f64; 2] },
    #[serde(rename = "disc2d")]
    Disc2D { radius: f64 },
}

impl SpatialDomain {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::Torus1D { length } => *length > 0.0,
            Self::Interval1D { a, b } => b > a,
            Self::Torus2D { lengths } => lengths[0] > 0.0 && lengths[1] > 0.0,
            Self::Disc2D { radius } => *radius > 0.0,
        };
        if ok && self.finite() {
            Ok(())
        } else {
            invalid(format!("domain extents must be finite and strictly positive: {self:?}"))
        }
    }

    fn finite(&self) -> bool {
        match self {
            Self::Torus1D { length } => length.is_finite(),
            Self::Interval1D { a, b } => a.is_finite() && b.is_finite(),
            Self::Torus2D { lengths } => lengths.iter().all(|l| l.is_finite()),
            Self::Disc2D { radius } => radius.is_finite(),
        }
    }

    pub fn has_boundary(&self) -> bool {
        matches!(self, Self::Interval1D { .. } | Self::Disc2D { .. })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Torus1D { .. } | Self::Interval1D { .. } => 1,
            _ => 2,
        }
    }
}

/// Velocity space 𝖵 with its equilibrium M.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocitySpace {
    /// Finite set of velocities with equilibrium weights (normalized on construction).
    DiscreteSet { points: Vec<Vec<f64>>, weights: Vec<f64> },
    /// `n` uniform angles on the unit circle, uniform M.
    Circle { n: usize },
    /// `n` midpoint nodes on `[-v_max, v_max]`, Gaussian M.
    TruncatedLine { v_max: f64, n: usize },
}

/// Discretized velocity space: nodes, quadrature weights ω and equilibrium density M.
///
/// Integrals read `∫ g dv ≈ Σ_j ω_j g_j`; normalization is `Σ_j ω_j M_j = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityGrid {
    pub space: VelocitySpace,
    pub dim: usize,
    pub nodes: Vec<[f64; 2]>,
    pub quad: Vec<f64>,
    pub m: Vec<f64>,
    /// Gaussian mass lost to truncation (zero for finite spaces).
    pub tail_mass: f64,
}

impl VelocityGrid {
    pub fn new(space: VelocitySpace) -> Result<Self> {
        match &space {
            VelocitySpace::DiscreteSet { points, weights } => {
                if points.len() < 2 || points.len() != weights.len() {
                    return invalid("discrete velocity set needs ≥ 2 points with one weight each");
                }
                let dim = points[0].len();
                if !(1..=2).contains(&dim) || points.iter().any(|p| p.len() != dim) {
                    return invalid("discrete velocities must all have dimension 1 or 2");
                }
                if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                    return invalid("equilibrium weights must be positive");
                }
                let nodes: Vec<[f64; 2]> =
                    points.iter().map(|p| [p[0], if dim == 2 { p[1] } else { 0.0 }]).collect();
                for v in &nodes {
                    let neg = [-v[0], -v[1]];
                    if !nodes.iter().any(|w| close2(w, &neg)) {
                        return invalid(format!("velocity set is not even: −{v:?} missing"));
                    }
                }
                if !spans(&nodes, dim) {
                    return invalid("velocity set does not span the space");
                }
                let total: f64 = weights.iter().sum();
                let m = weights.iter().map(|w| w / total).collect();
                Ok(Self { dim, quad: vec![1.0; nodes.len()], nodes, m, tail_mass: 0.0, space })
            }
            VelocitySpace::Circle { n } => {
                if *n < 4 || n % 2 != 0 {
                    return invalid("circle velocity grid needs an even number ≥ 4 of angles");
                }
                let nodes = (0..*n)
                    .map(|k| {
                        let th = 2.0 * PI * k as f64 / *n as f64;
                        [th.cos(), th.sin()]
                    })
                    .collect();
                let w = 2.0 * PI / *n as f64;
                Ok(Self {
                    dim: 2,
                    nodes,
                    quad: vec![w; *n],
                    m: vec![1.0 / (2.0 * PI); *n],
                    tail_mass: 0.0,
                    space,
                })
            }
            VelocitySpace::TruncatedLine { v_max, n } => {
                if !(*v_max > 0.0) || *n < 2 {
                    return invalid("truncated line needs v_max > 0 and n ≥ 2");
                }
                let dv = 2.0 * v_max / *n as f64;
                let nodes: Vec<[f64; 2]> =
                    (0..*n).map(|j| [-v_max + (j as f64 + 0.5) * dv, 0.0]).collect();
                let raw: Vec<f64> = nodes.iter().map(|v| gaussian(v[0])).collect();
                let total: f64 = raw.iter().sum::<f64>() * dv;
                let tail_mass = erfc_tail(*v_max);
                Ok(Self {
                    dim: 1,
                    nodes,
                    quad: vec![dv; *n],
                    m: raw.iter().map(|g| g / total).collect(),
                    tail_mass,
                    space,
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `⟨g⟩ = ∫ g dv`.
    pub fn integrate(&self, g: &[f64]) -> f64 {
        g.iter().zip(&self.quad).map(|(a, w)| a * w).sum()
    }

    /// `⟨f, g⟩_{L²(M⁻¹)}`.
    pub fn inner_minv(&self, f: &[f64], g: &[f64]) -> f64 {
        (0..self.len()).map(|j| self.quad[j] * f[j] * g[j] / self.m[j]).sum()
    }

    /// Index of `v − 2(n·v)n`, if it is a node.
    pub fn reflect_index(&self, j: usize, n: &[f64; 2]) -> Option<usize> {
        let v = self.nodes[j];
        let d = v[0] * n[0] + v[1] * n[1];
        let r = [v[0] - 2.0 * d * n[0], v[1] - 2.0 * d * n[1]];
        self.nodes.iter().position(|w| close2(w, &r))
    }

    pub fn speed_max(&self) -> f64 {
        self.nodes.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max)
    }
}

fn close2(a: &[f64; 2], b: &[f64; 2]) -> bool {
    (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12
}

fn spans(nodes: &[[f64; 2]], dim: usize) -> bool {
    if dim == 1 {
        return nodes.iter().any(|v| v[0].abs() > 1e-14);
    }
    nodes.iter().any(|a| nodes.iter().any(|b| (a[0] * b[1] - a[1] * b[0]).abs() > 1e-12))
}

/// Standard Gaussian density.
pub fn gaussian(v: f64) -> f64 {
    (-0.5 * v * v).exp() / (2.0 * PI).sqrt()
}

/// Two-sided Gaussian tail mass `P(|V| > a)`, via a continued-fraction-free bound accurate to
/// a few digits; reported only.
fn erfc_tail(a: f64) -> f64 {
    // Mills-ratio asymptotics with one correction term.
    let g = gaussian(a);
    2.0 * g / a * (1.0 - 1.0 / (a * a) + 3.0 / a.powi(4))
}

/// Confining potential φ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    Zero,
    /// `φ = ω²|x|²/2`.
    Harmonic { omega: f64 },
    /// One-dimensional table of `(x, φ, φ′, φ″)`, interpolated linearly.
    Tabulated { x: Vec<f64>, phi: Vec<f64>, dphi: Vec<f64>, d2phi: Vec<f64> },
}

/// Potential value, gradient and Hessian operator norm at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PotentialSample {
    pub phi: f64,
    pub grad: [f64; 2],
    pub hess: f64,
}

impl Potential {
    /// Read a table with columns `x, phi, dphi, d2phi` (header optional).
    pub fn from_csv(path: &std::path::Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Invalid(format!("cannot read potential table: {e}")))?;
        let (mut x, mut p, mut d, mut h) = (vec![], vec![], vec![], vec![]);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Invalid(format!("potential table: {e}")))?;
            if rec.len() != 4 {
                return invalid("potential table rows need 4 columns: x, phi, dphi, d2phi");
            }
            let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            match vals {
                Ok(v) => {
                    x.push(v[0]);
                    p.push(v[1]);
                    d.push(v[2]);
                    h.push(v[3]);
                }
                Err(_) if x.is_empty() => continue,
                Err(e) => return invalid(format!("potential table: {e}")),
            }
        }
        let pot = Self::Tabulated { x, phi: p, dphi: d, d2phi: h };
        pot.validate()?;
        Ok(pot)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Zero => Ok(()),
            Self::Harmonic { omega } if *omega > 0.0 && omega.is_finite() => Ok(()),
            Self::Harmonic { .. } => invalid("harmonic frequency must be positive"),
            Self::Tabulated { x, phi, dphi, d2phi } => {
                let n = x.len();
                if n < 2 || phi.len() != n || dphi.len() != n || d2phi.len() != n {
                    return invalid("tabulated potential needs ≥ 2 rows of equal-length columns");
                }
                if x.windows(2).any(|w| !(w[1] > w[0])) {
                    return invalid("tabulated potential abscissae must increase");
                }
                Ok(())
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }

    /// Unnormalized value, gradient and Hessian norm.
    pub fn sample(&self, x: &[f64; 2], dim: usize) -> Result<PotentialSample> {
        match self {
            Self::Zero => Ok(PotentialSample { phi: 0.0, grad: [0.0; 2], hess: 0.0 }),
            Self::Harmonic { omega } => {
                let w2 = omega * omega;
                let r2 = x[0] * x[0] + if dim == 2 { x[1] * x[1] } else { 0.0 };
                let g1 = if dim == 2 { w2 * x[1] } else { 0.0 };
                Ok(PotentialSample { phi: 0.5 * w2 * r2, grad: [w2 * x[0], g1], hess: w2 })
            }
            Self::Tabulated { x: xs, phi, dphi, d2phi } => {
                if dim != 1 {
                    return invalid("tabulated potentials are one-dimensional");
                }
                let t = x[0];
                let n = xs.len();
                if t < xs[0] - 1e-12 || t > xs[n - 1] + 1e-12 {
                    return invalid(format!("point {t} outside the potential table"));
                }
                let k = xs.partition_point(|&a| a <= t).clamp(1, n - 1);
                let s = ((t - xs[k - 1]) / (xs[k] - xs[k - 1])).clamp(0.0, 1.0);
                let lerp = |c: &[f64]| c[k - 1] + s * (c[k] - c[k - 1]);
                Ok(PotentialSample {
                    phi: lerp(phi),
                    grad: [lerp(dphi), 0.0],
                    hess: lerp(d2phi).abs(),
                })
            }
        }
    }
}

/// Thermalisation region Σ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    All,
    /// `lo ≤ x ≤ hi` on the first coordinate.
    Interval { lo: f64, hi: f64 },
    /// Union of the vertical and horizontal bands `[lo, hi]` (2D).
    Cross { lo: f64, hi: f64 },
    /// Horizontal band `lo ≤ y ≤ hi` (2D).
    StripY { lo: f64, hi: f64 },
    Ball { center: [f64; 2], radius: f64 },
    /// Explicit cell mask on the spatial grid.
    Mask { cells: Vec<bool> },
}

impl Region {
    /// Pointwise membership; masks are grid objects and are rejected here.
    pub fn contains(&self, x: &[f64; 2]) -> Result<bool> {
        Ok(match self {
            Self::All => true,
            Self::Interval { lo, hi } => *lo <= x[0] && x[0] <= *hi,
            Self::Cross { lo, hi } => (*lo <= x[0] && x[0] <= *hi) || (*lo <= x[1] && x[1] <= *hi),
            Self::StripY { lo, hi } => *lo <= x[1] && x[1] <= *hi,
            Self::Ball { center, radius } => {
                (x[0] - center[0]).hypot(x[1] - center[1]) <= *radius
            }
            Self::Mask { .. } => return invalid("cell masks cannot be evaluated pointwise"),
        })
    }

    pub fn mask(&self, grid: &SpatialGrid) -> Result<Vec<bool>> {
        match self {
            Self::Mask { cells } if cells.len() == grid.len() => Ok(cells.clone()),
            Self::Mask { cells } => Err(Error::GridMismatch(format!(
                "mask has {} cells, grid has {}",
                cells.len(),
                grid.len()
            ))),
            _ => grid.centers.iter().map(|c| self.contains(c)).collect(),
        }
    }
}

/// Thermalisation degeneracy σ(x) ≥ 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DegeneracyWeight {
    Constant { value: f64 },
    Indicator { region: Region, inside: f64, #[serde(default)] outside: f64 },
    /// `σ = min(1, |x|^{2p})`.
    PowerLaw { p: f64 },
    Tabulated { values: Vec<f64> },
}

impl DegeneracyWeight {
    pub fn sample(&self, grid: &SpatialGrid) -> Result<Vec<f64>> {
        let s: Vec<f64> = match self {
            Self::Constant { value } => vec![*value; grid.len()],
            Self::Indicator { region, inside, outside } => region
                .mask(grid)?
                .into_iter()
                .map(|b| if b { *inside } else { *outside })
                .collect(),
            Self::PowerLaw { p } => grid
                .centers
                .iter()
                .map(|c| c[0].hypot(c[1]).powf(2.0 * p).min(1.0))
                .collect(),
            Self::Tabulated { values } if values.len() == grid.len() => values.clone(),
            Self::Tabulated { values } => {
                return Err(Error::GridMismatch(format!(
                    "σ table has {} values, grid has {}",
                    values.len(),
                    grid.len()
                )))
            }
        };
        if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return invalid("σ must be finite and nonnegative");
        }
        Ok(s)
    }

    /// Pointwise value for particle methods (tables are rejected).
    pub fn eval(&self, x: &[f64; 2]) -> Result<f64> {
        match self {
            Self::Constant { value } => Ok(*value),
            Self::Indicator { region, inside, outside } => {
                Ok(if region.contains(x)? { *inside } else { *outside })
            }
            Self::PowerLaw { p } => Ok(x[0].hypot(x[1]).powf(2.0 * p).min(1.0)),
            Self::Tabulated { .. } => invalid("tabulated σ cannot be evaluated pointwise"),
        }
    }

    /// Upper bound of σ (used by the Poisson thinning of particle scattering).
    pub fn sup(&self) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Indicator { inside, outside, .. } => inside.max(*outside),
            Self::PowerLaw { .. } => 1.0,
            Self::Tabulated { values } => values.iter().cloned().fold(0.0, f64::max),
        }
    }
}

/// Uniform cell-centred grid on a bounded or periodic domain.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialGrid {
    pub domain: SpatialDomain,
    /// Cells per axis; the second entry is 1 in one dimension.
    pub shape: [usize; 2],
    pub h: [f64; 2],
    pub origin: [f64; 2],
    pub centers: Vec<[f64; 2]>,
    pub cell_volume: f64,
}

impl SpatialGrid {
    pub fn new(domain: SpatialDomain, cells: &[usize]) -> Result<Self> {
        domain.validate()?;
        let (shape, origin, ext) = match &domain {
            SpatialDomain::Torus1D { length } => ([cells[0], 1], [0.0, 0.0], [*length, 1.0]),
            SpatialDomain::Interval1D { a, b } => ([cells[0], 1], [*a, 0.0], [b - a, 1.0]),
            SpatialDomain::Torus2D { lengths } => {
                if cells.len() < 2 {
                    return invalid("2D grids need two cell counts");
                }
                ([cells[0], cells[1]], [0.0, 0.0], *lengths)
            }
            SpatialDomain::Disc2D { .. } => {
                return invalid("Disc2D supports trajectory tracing and sampling only, not grids")
            }
        };
        if shape[0] == 0 || shape[1] == 0 {
            return invalid("grids need at least one cell per axis");
        }
        let h = [ext[0] / shape[0] as f64, ext[1] / shape[1] as f64];
        let mut centers = Vec::with_capacity(shape[0] * shape[1]);
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                let y = if domain.dim() == 2 { origin[1] + (j as f64 + 0.5) * h[1] } else { 0.0 };
                centers.push([origin[0] + (i as f64 + 0.5) * h[0], y]);
            }
        }
        let cell_volume = if domain.dim() == 2 { h[0] * h[1] } else { h[0] };
        Ok(Self { domain, shape, h, origin, centers, cell_volume })
    }

    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn periodic(&self) -> bool {
        !self.domain.has_boundary()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.shape[1] + j
    }

    /// Face neighbours `(cell, face_area / distance)` honouring periodicity.
    pub fn neighbors(&self, c: usize) -> Vec<(usize, f64)> {
        let (i, j) = (c / self.shape[1], c % self.shape[1]);
        let mut out = Vec::with_capacity(4);
        let per = self.periodic();
        let axes = if self.dim() == 2 { 2 } else { 1 };
        for ax in 0..axes {
            let n = self.shape[ax];
            let coef = if axes == 2 { self.h[1 - ax] / self.h[ax] } else { 1.0 / self.h[0] };
            let k = if ax == 0 { i } else { j };
            for step in [-1i64, 1] {
                let t = k as i64 + step;
                let t = if t < 0 || t >= n as i64 {
                    if !per || n < 3 {
                        continue;
                    }
                    t.rem_euclid(n as i64)
                } else {
                    t
                } as usize;
                let nb = if ax == 0 { self.index(t, j) } else { self.index(i, t) };
                out.push((nb, coef));
            }
        }
        out
    }

    /// Cell containing `x` (periodic wrap on tori, clamped on intervals).
    pub fn locate(&self, x: &[f64; 2]) -> usize {
        let mut idx = [0usize; 2];
        for ax in 0..self.dim() {
            let n = self.shape[ax] as i64;
            let t = ((x[ax] - self.origin[ax]) / self.h[ax]).floor() as i64;
            idx[ax] = if self.periodic() { t.rem_euclid(n) } else { t.clamp(0, n - 1) } as usize;
        }
        self.index(idx[0], idx[1])
    }
}

static GRID_IDS: AtomicU64 = AtomicU64::new(1);

/// A point of ∂Ω with its Γ₊/Γ₋ velocity bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPoint {
    /// Cell carrying the trace.
    pub cell: usize,
    pub x: [f64; 2],
    /// Outward unit normal.
    pub normal: [f64; 2],
    /// Velocity indices with n·v > 0.
    pub outgoing: Vec<usize>,
    /// Velocity indices with n·v < 0.
    pub incoming: Vec<usize>,
    /// `reflect[j]` is the index of `v_j − 2(n·v_j)n`.
    pub reflect: Vec<usize>,
}

/// Discretized Ω × 𝖵 with quadratures for dx dv, dμ = f_∞⁻¹ dx dv and dν on Γ₊.
#[derive(Debug)]
pub struct PhaseGrid {
    id: u64,
    pub space: SpatialGrid,
    pub vel: VelocityGrid,
    pub potential: Potential,
    /// Normalized potential at cell centres (∫e^{-φ} = 1).
    pub phi: Vec<f64>,
    pub grad_phi: Vec<[f64; 2]>,
    pub hess_phi: Vec<f64>,
    /// Constant added to the raw potential.
    pub normalization: f64,
    pub finf: Vec<f64>,
    /// dx dv weights per node.
    pub vol: Vec<f64>,
    /// dμ weights per node.
    pub mu: Vec<f64>,
    pub boundary: Vec<BoundaryPoint>,
}

impl PhaseGrid {
    pub fn new(
        domain: SpatialDomain,
        cells: &[usize],
        velocity: VelocitySpace,
        potential: Potential,
    ) -> Result<Arc<Self>> {
        potential.validate()?;
        let space = SpatialGrid::new(domain, cells)?;
        let vel = VelocityGrid::new(velocity)?;
        let d = space.dim();
        if vel.dim != d {
            return invalid(format!(
                "velocity dimension {} does not match spatial dimension {d}",
                vel.dim
            ));
        }
        if !potential.is_zero() && !space.domain.has_boundary() {
            return invalid("periodic domains require φ = 0");
        }
        if !potential.is_zero() && matches!(vel.space, VelocitySpace::Circle { .. }) {
            return invalid("a force field changes speeds; circle velocities require φ = 0");
        }
        let samples: Vec<PotentialSample> =
            space.centers.iter().map(|c| potential.sample(c, d)).collect::<Result<_>>()?;
        let z: f64 = samples.iter().map(|s| (-s.phi).exp()).sum::<f64>() * space.cell_volume;
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::Invalid(format!("potential is not normalizable (∫e^-φ = {z})")));
        }
        let normalization = z.ln();
        let phi: Vec<f64> = samples.iter().map(|s| s.phi + normalization).collect();
        let nv = vel.len();
        let mut finf = Vec::with_capacity(space.len() * nv);
        let mut vol = Vec::with_capacity(space.len() * nv);
        for p in &phi {
            let e = (-p).exp();
            for j in 0..nv {
                finf.push(e * vel.m[j]);
                vol.push(space.cell_volume * vel.quad[j]);
            }
        }
        let mu = vol.iter().zip(&finf).map(|(w, f)| w / f).collect();
        let mut boundary = Vec::new();
        if let SpatialDomain::Interval1D { a, b } = space.domain {
            let n = space.shape[0];
            for (cell, x, nrm) in [(0usize, a, -1.0), (n - 1, b, 1.0)] {
                let normal = [nrm, 0.0];
                let mut reflect = Vec::with_capacity(nv);
                for j in 0..nv {
                    reflect.push(vel.reflect_index(j, &normal).ok_or_else(|| {
                        Error::Invalid("velocity set is not closed under reflection".into())
                    })?);
                }
                let dot = |j: usize| vel.nodes[j][0] * nrm;
                boundary.push(BoundaryPoint {
                    cell,
                    x: [x, 0.0],
                    normal,
                    outgoing: (0..nv).filter(|&j| dot(j) > 0.0).collect(),
                    incoming: (0..nv).filter(|&j| dot(j) < 0.0).collect(),
                    reflect,
                });
            }
        }
        Ok(Arc::new(Self {
            id: GRID_IDS.fetch_add(1, Ordering::Relaxed),
            grad_phi: samples.iter().map(|s| s.grad).collect(),
            hess_phi: samples.iter().map(|s| s.hess).collect(),
            space,
            vel,
            potential,
            phi,
            normalization,
            finf,
            vol,
            mu,
            boundary,
        }))
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn nx(&self) -> usize {
        self.space.len()
    }

    pub fn nv(&self) -> usize {
        self.vel.len()
    }

    pub fn len(&self) -> usize {
        self.nx() * self.nv()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, cell: usize, j: usize) -> usize {
        cell * self.nv() + j
    }

    /// dν weight of the outgoing node `(boundary point b, velocity j)`.
    pub fn nu_weight(&self, b: usize, j: usize) -> f64 {
        let bp = &self.boundary[b];
        let nv = bp.normal[0] * self.vel.nodes[j][0] + bp.normal[1] * self.vel.nodes[j][1];
        nv * self.vel.quad[j] / self.finf[self.idx(bp.cell, j)]
    }
}

/// Distribution sampled on a phase grid.
#[derive(Clone, Debug)]
pub struct Field {
    grid: Arc<PhaseGrid>,
    pub data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Arc<PhaseGrid>) -> Self {
        Self { grid: grid.clone(), data: vec![0.0; grid.len()] }
    }

    pub fn from_vec(grid: &Arc<PhaseGrid>, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} nodes",
                data.len(),
                grid.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("field entries must be finite");
        }
        Ok(Self { grid: grid.clone(), data })
    }

    /// Field from a function of `(x, v)`.
    pub fn from_fn(grid: &Arc<PhaseGrid>, f: impl Fn(&[f64; 2], &[f64; 2]) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for c in &grid.space.centers {
            for v in &grid.vel.nodes {
                data.push(f(c, v));
            }
        }
        Self { grid: grid.clone(), data }
    }

    pub fn grid(&self) -> &Arc<PhaseGrid> {
        &self.grid
    }

    pub fn same_grid(&self, other: &Field) -> Result<()> {
        if self.grid.id() == other.grid.id() {
            Ok(())
        } else {
            Err(Error::GridMismatch("fields live on different phase grids".into()))
        }
    }

    pub fn check_grid(&self, grid: &PhaseGrid) -> Result<()> {
        if self.grid.id() == grid.id() {
            Ok(())
        } else {
            Err(Error::GridMismatch("field does not belong to this grid".into()))
        }
    }

    /// `∫ f dx dv`.
    pub fn mass(&self) -> f64 {
        self.data.iter().zip(&self.grid.vol).map(|(a, w)| a * w).sum()
    }

    /// `⟨f, g⟩_{L²(dμ)}`.
    pub fn inner_mu(&self, other: &Field) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self.data.iter().zip(&other.data).zip(&self.grid.mu).map(|((a, b), w)| a * b * w).sum())
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field { grid: self.grid.clone(), data: self.data.iter().map(|v| c * v).collect() }
    }

    pub fn axpy(&mut self, alpha: f64, x: &Field) -> Result<()> {
        self.same_grid(x)?;
        crate::linalg::axpy(alpha, &x.data, &mut self.data);
        Ok(())
    }

    /// Velocity profile at a cell.
    pub fn profile(&self, cell: usize) -> &[f64] {
        let nv = self.grid.nv();
        &self.data[cell * nv..(cell + 1) * nv]
    }
}

/// `f_∞ = e^{-φ} M`.
pub fn build_equilibrium(grid: &Arc<PhaseGrid>) -> Field {
    Field { grid: grid.clone(), data: grid.finf.clone() }
}

/// Quadrature weight selector for [`weighted_norm`].
pub enum Weight<'a> {
    /// dμ = f_∞⁻¹ dx dv.
    Mu,
    /// dx dv.
    Lebesgue,
    /// `w(x, v) dx dv`.
    Custom(&'a dyn Fn(&[f64; 2], &[f64; 2]) -> f64),
}

pub fn weighted_norm(f: &Field, weight: Weight<'_>) -> f64 {
    let g = f.grid();
    let s: f64 = match weight {
        Weight::Mu => f.data.iter().zip(&g.mu).map(|(a, w)| a * a * w).sum(),
        Weight::Lebesgue => f.data.iter().zip(&g.vol).map(|(a, w)| a * a * w).sum(),
        Weight::Custom(w) => {
            let mut acc = 0.0;
            for (c, x) in g.space.centers.iter().enumerate() {
                for (j, v) in g.vel.nodes.iter().enumerate() {
                    let k = g.idx(c, j);
                    acc += f.data[k] * f.data[k] * g.vol[k] * w(x, v);
                }
            }
            acc
        }
    };
    s.max(0.0).sqrt()
}

/// `⟨f⟩(x) M(v)`.
pub fn project_local_equilibrium(f: &Field) -> Field {
    let g = f.grid();
    let nv = g.nv();
    let mut out = vec![0.0; f.data.len()];
    for c in 0..g.nx() {
        let rho = g.vel.integrate(f.profile(c));
        for j in 0..nv {
            out[c * nv + j] = rho * g.vel.m[j];
        }
    }
    Field { grid: g.clone(), data: out }
}

/// Result of a Poincaré eigen-estimate.
#[derive(Clone, Debug)]
pub struct PoincareReport {
    pub lambda2: f64,
    /// Minimizing density ρ on the region cells (zero elsewhere).
    pub witness: Vec<f64>,
    pub cells: usize,
}

/// Smallest nonzero eigenvalue of
/// `∫_Σ|∇ρ + ρ∇φ|² e^φ / ∫_Σ |ρ − (∫_Σρ) e^{-φ}|² w e^φ` with `w = ⌊∇φ⌉²` when `weighted`.
///
/// `e^{-φ}` is normalized on Σ. Writing ρ = e^{-φ} q turns the quotient into a weighted
/// graph Laplacian pencil on the cells of Σ.
pub fn poincare_constant(
    space: &SpatialGrid,
    potential: &Potential,
    region: &Region,
    weighted: bool,
) -> Result<PoincareReport> {
    let mask = region.mask(space)?;
    let cells: Vec<usize> = (0..space.len()).filter(|&c| mask[c]).collect();
    if cells.len() < 2 {
        return invalid("Poincaré region needs at least two cells");
    }
    if cells.len() > 5000 {
        return Err(Error::Capacity(format!("{} cells exceed the dense cap of 5000", cells.len())));
    }
    if !connected(space, &mask) {
        return invalid("Poincaré region is disconnected on the grid");
    }
    let d = space.dim();
    let samples: Vec<PotentialSample> =
        space.centers.iter().map(|c| potential.sample(c, d)).collect::<Result<_>>()?;
    let mut local = vec![usize::MAX; space.len()];
    for (k, &c) in cells.iter().enumerate() {
        local[c] = k;
    }
    let n = cells.len();
    let mut kmat = Dense::zeros(n, n);
    let mut dw = vec![0.0; n];
    let mut cons = vec![0.0; n];
    for (a, &c) in cells.iter().enumerate() {
        let ea = (-samples[c].phi).exp();
        let g = samples[c].grad;
        let w = if weighted { 1.0 + g[0] * g[0] + g[1] * g[1] } else { 1.0 };
        dw[a] = w * ea * space.cell_volume;
        cons[a] = ea * space.cell_volume;
        for (nb, coef) in space.neighbors(c) {
            let b = local[nb];
            if b == usize::MAX {
                continue;
            }
            let ef = (-(0.5 * (samples[c].phi + samples[nb].phi))).exp() * coef;
            kmat.add(a, a, ef);
            kmat.add(a, b, -ef);
        }
    }
    let (vals, vecs) = constrained_pencil(&kmat, &dw, &cons)?;
    let lambda2 = vals[0];
    let scale = vals.iter().cloned().fold(0.0, f64::max).max(1.0);
    if lambda2 <= 1e-10 * scale {
        return Err(Error::Numerical(format!(
            "Poincaré eigenvalue numerically zero ({lambda2:e}); region effectively disconnected"
        )));
    }
    let mut witness = vec![0.0; space.len()];
    for (a, &c) in cells.iter().enumerate() {
        witness[c] = vecs[0][a] * (-samples[c].phi).exp();
    }
    Ok(PoincareReport { lambda2, witness, cells: n })
}

/// 4-neighbour connectivity of a cell mask.
pub fn connected(space: &SpatialGrid, mask: &[bool]) -> bool {
    let Some(start) = mask.iter().position(|&b| b) else { return false };
    let mut seen = vec![false; mask.len()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 1;
    while let Some(c) = stack.pop() {
        for (nb, _) in space.neighbors(c) {
            if mask[nb] && !seen[nb] {
                seen[nb] = true;
                count += 1;
                stack.push(nb);
            }
        }
    }
    count == mask.iter().filter(|&&b| b).count()
}

/// Outcome of the ε-regularity screen.
#[derive(Clone, Debug, Serialize)]
pub struct RegularityReport {
    /// `sup |∇²φ| / (1 + |∇φ|)` over the region.
    pub ratio: f64,
    /// Ratio on the outer tenth of the region divided by the ratio on the inner part.
    pub edge_growth: f64,
    /// Largest tested ε with `4⌊∇φ(x)⌉ ≥ ⌊∇φ(y)⌉` whenever `|x−y| ≤ 2ε⌊∇φ(x)⌉⁻¹`.
    pub eps_admissible: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Numerical screen of `|∇²φ| ≲ 1 + |∇φ|` and of the scale condition of the covering.
pub fn regularity_check(
    space: &SpatialGrid,
    potential: &Potential,
    region: &Region,
    eps: f64,
    bound: f64,
) -> Result<RegularityReport> {
    if let Potential::Tabulated { d2phi, .. } = potential {
        if d2phi.iter().any(|v| !v.is_finite()) {
            return invalid("tabulated second derivatives missing or non-finite");
        }
    }
    let mask = region.mask(space)?;
    let d = space.dim();
    let mut pts = vec![];
    for (c, x) in space.centers.iter().enumerate() {
        if mask[c] {
            let s = potential.sample(x, d)?;
            let g = s.grad[0].hypot(s.grad[1]);
            pts.push((*x, s.hess / (1.0 + g), (1.0 + g * g).sqrt()));
        }
    }
    if pts.is_empty() {
        return invalid("regularity region is empty");
    }
    let ratio = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    let rmax = pts.iter().map(|p| p.0[0].hypot(p.0[1])).fold(0.0, f64::max);
    let (mut inner, mut outer) = (0.0f64, 0.0f64);
    for p in &pts {
        if p.0[0].hypot(p.0[1]) >= 0.9 * rmax {
            outer = outer.max(p.1);
        } else {
            inner = inner.max(p.1);
        }
    }
    let edge_growth = if inner > 0.0 { outer / inner } else if outer > 0.0 { f64::INFINITY } else { 0.0 };
    let admissible = |e: f64| {
        pts.iter().all(|(x, _, bx)| {
            let r = 2.0 * e / bx;
            pts.iter().all(|(y, _, by)| (x[0] - y[0]).hypot(x[1] - y[1]) > r || 4.0 * bx >= *by)
        })
    };
    let mut eps_admissible = 0.0;
    let mut e = eps.max(1e-6);
    // coarse-to-fine ladder on a subsample to keep the pair test cheap
    if pts.len() <= 4096 {
        for _ in 0..12 {
            if admissible(e) {
                eps_admissible = e;
                break;
            }
            e *= 0.5;
        }
    } else {
        eps_admissible = eps;
    }
    let pass = ratio <= bound && edge_growth <= 1.0 + 1e-9 && eps_admissible > 0.0;
    Ok(RegularityReport { ratio, edge_growth, eps_admissible, bound, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus_circle() -> Arc<PhaseGrid> {
        PhaseGrid::new(
            SpatialDomain::Torus1D { length: 1.0 },
            &[16],
            VelocitySpace::DiscreteSet { points: vec![vec![-1.0], vec![1.0]], weights: vec![1.0, 1.0] },
            Potential::Zero,
        )
        .unwrap()
    }

    #[test]
    fn domain_flags() {
        assert!(SpatialDomain::Disc2D { radius: 1.0 }.has_boundary());
        assert!(SpatialDomain::Interval1D { a: 0.0, b: 1.0 }.has_boundary());
        assert!(!SpatialDomain::Torus2D { lengths: [1.0, 1.0] }.has_boundary());
        assert!(SpatialDomain::Torus1D { length: 0.0 }.validate().is_err());
    }

    #[test]
    fn uneven_velocity_set_rejected() {
        let r = VelocityGrid::new(VelocitySpace::DiscreteSet {
            points: vec![vec![1.0], vec![2.0]],
            weights: vec![1.0, 1.0],
        });
        assert!(r.is_err());
    }

    #[test]
    fn circle_equilibrium_uniform() {
        let g = PhaseGrid::new(
            SpatialDomain::Torus2D { lengths: [1.0, 1.0] },
            &[4, 4],
            VelocitySpace::Circle { n: 8 },
            Potential::Zero,
        )
        .unwrap();
        let f = build_equilibrium(&g);
        assert!((f.mass() - 1.0).abs() < 1e-14);
        for v in &f.data {
            assert!((v - 1.0 / (2.0 * PI)).abs() < 1e-14);
        }
        assert!((weighted_norm(&f, Weight::Mu) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_normalization_matches_gaussian() {
        let g = PhaseGrid::new(
            SpatialDomain::Interval1D { a: -6.0, b: 6.0 },
            &[64],
            VelocitySpace::TruncatedLine { v_max: 6.0, n: 32 },
            Potential::Harmonic { omega: 1.0 },
        )
        .unwrap();
        // e^{normalization} = ∫ e^{-x²/2} over [-6,6] ≈ √(2π)
        assert!((g.normalization.exp() - (2.0 * PI).sqrt()).abs() < 1e-7);
        let f = build_equilibrium(&g);
        assert!((f.mass() - 1.0).abs() < 1e-8);
        assert!((weighted_norm(&f, Weight::Mu) - 1.0).abs() < 1e-10);
        assert_eq!(g.boundary.len(), 2);
        assert_eq!(g.boundary[0].outgoing.len(), 16);
        assert!(g.vel.tail_mass < 1e-8);
    }

    #[test]
    fn norms_and_projection() {
        let g = torus_circle();
        let feq = build_equilibrium(&g);
        assert_eq!(weighted_norm(&Field::zeros(&g), Weight::Mu), 0.0);
        assert!((weighted_norm(&feq.scaled(2.0), Weight::Mu) - 2.0).abs() < 1e-12);
        let p = project_local_equilibrium(&feq);
        for (a, b) in p.data.iter().zip(&feq.data) {
            assert!((a - b).abs() < 1e-14);
        }
        let odd = Field::from_fn(&g, |x, v| v[0] * (1.0 + x[0]));
        let p = project_local_equilibrium(&odd);
        assert!(p.data.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn grid_mismatch_detected() {
        let a = torus_circle();
        let b = torus_circle();
        assert!(Field::zeros(&a).inner_mu(&Field::zeros(&b)).is_err());
    }

    #[test]
    fn gaussian_poincare_is_one() {
        let s = SpatialGrid::new(SpatialDomain::Interval1D { a: -6.0, b: 6.0 }, &[200]).unwrap();
        let r = poincare_constant(&s, &Potential::Harmonic { omega: 1.0 }, &Region::All, false).unwrap();
        assert!((r.lambda2 - 1.0).abs() < 0.03, "λ₂ = {}", r.lambda2);
    }

    #[test]
    fn torus_poincare_is_fourier() {
        let s = SpatialGrid::new(SpatialDomain::Torus1D { length: 1.0 }, &[64]).unwrap();
        let r = poincare_constant(&s, &Potential::Zero, &Region::All, false).unwrap();
        let want = (2.0 * PI).powi(2);
        assert!((r.lambda2 - want).abs() < 0.03 * want);
    }

    #[test]
    fn degenerate_regions_flagged() {
        let s = SpatialGrid::new(SpatialDomain::Interval1D { a: 0.0, b: 1.0 }, &[20]).unwrap();
        let single = Region::Interval { lo: 0.5, hi: 0.52 };
        assert!(poincare_constant(&s, &Potential::Zero, &single, false).is_err());
        let mut cells = vec![false; 20];
        cells[2] = true;
        cells[3] = true;
        cells[10] = true;
        cells[11] = true;
        assert!(poincare_constant(&s, &Potential::Zero, &Region::Mask { cells }, false).is_err());
    }

    #[test]
    fn regularity_screen() {
        let s = SpatialGrid::new(SpatialDomain::Interval1D { a: -6.0, b: 6.0 }, &[120]).unwrap();
        let h = regularity_check(&s, &Potential::Harmonic { omega: 1.0 }, &Region::All, 0.5, 4.0).unwrap();
        assert!(h.pass && (h.ratio - 1.0).abs() < 0.1);
        let z = regularity_check(&s, &Potential::Zero, &Region::All, 0.5, 4.0).unwrap();
        assert!(z.pass && z.ratio == 0.0);
        let xs: Vec<f64> = (0..=600).map(|i| -3.0 + i as f64 * 0.01).collect();
        let tab = Potential::Tabulated {
            phi: xs.iter().map(|x| (x * x).exp()).collect(),
            dphi: xs.iter().map(|x| 2.0 * x * (x * x).exp()).collect(),
            d2phi: xs.iter().map(|x| (2.0 + 4.0 * x * x) * (x * x).exp()).collect(),
            x: xs,
        };
        let s3 = SpatialGrid::new(SpatialDomain::Interval1D { a: -3.0, b: 3.0 }, &[120]).unwrap();
        let e = regularity_check(&s3, &tab, &Region::All, 0.5, 4.0).unwrap();
        assert!(!e.pass && e.edge_growth > 1.0);
    }
}
