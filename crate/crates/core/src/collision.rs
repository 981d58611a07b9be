//! Velocity collision operators ℒ, their local spectral gaps, the Cheeger
//! conductance and structural checks (detailed balance, Γ₂).
//!
//! Every operator is stored as a dense matrix acting on velocity profiles
//! `g_j = g(v_j)`; integrals use the grid quadrature `∫ g dv ≈ Σ_j ω_j g_j`.

use crate::error::{invalid, Error, Result};
use crate::linalg::{constrained_pencil, sym_eig, Dense};
use crate::phase::{gaussian, VelocityGrid, VelocitySpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Operator family.
#[derive(Clone, Debug, PartialEq)]
pub enum CollisionKind {
    /// `ℒg = ⟨g⟩M − g`.
    Bgk,
    /// `ℒg(v) = ∫ k(v,v_*) g(v_*) − g(v) k(v_*,v) dv_*`.
    Scattering { kernel: Dense },
    /// `ℒ = −A*A` with `(Ag)_e = √c_e (h_{e+} − h_{e−})`, `h = g/M`.
    FokkerPlanck { conductance: Vec<f64> },
}

/// Linear collision operator on a velocity grid with coercivity weight `w`.
#[derive(Clone, Debug)]
pub struct CollisionOperator {
    pub kind: CollisionKind,
    pub vel: VelocityGrid,
    pub weight: Vec<f64>,
    matrix: Dense,
}

impl CollisionOperator {
    pub fn bgk(vel: &VelocityGrid) -> Self {
        let n = vel.len();
        let mut m = Dense::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, vel.m[i] * vel.quad[j]);
            }
            m.add(i, i, -1.0);
        }
        Self { kind: CollisionKind::Bgk, vel: vel.clone(), weight: vec![1.0; n], matrix: m }
    }

    /// Scattering operator from a nonnegative kernel `k[i][j] = k(v_i, v_j)`.
    pub fn scattering(vel: &VelocityGrid, kernel: Dense) -> Result<Self> {
        let n = vel.len();
        if kernel.n != n || kernel.m != n {
            return Err(Error::GridMismatch(format!(
                "kernel is {}×{}, velocity grid has {n} nodes",
                kernel.n, kernel.m
            )));
        }
        if kernel.data.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return invalid("scattering kernel must be finite and nonnegative");
        }
        let mut m = Dense::zeros(n, n);
        for i in 0..n {
            let mut out = 0.0;
            for j in 0..n {
                if j != i {
                    m.set(i, j, vel.quad[j] * kernel.get(i, j));
                    out += vel.quad[j] * kernel.get(j, i);
                }
            }
            m.set(i, i, -out);
        }
        Ok(Self {
            kind: CollisionKind::Scattering { kernel },
            vel: vel.clone(),
            weight: vec![1.0; n],
            matrix: m,
        })
    }

    /// Fokker–Planck operator `∇_v·(∇_v g + v g)` on a truncated line, zero flux at ±v_max.
    pub fn fokker_planck(vel: &VelocityGrid) -> Result<Self> {
        let VelocitySpace::TruncatedLine { .. } = vel.space else {
            return invalid("Fokker–Planck requires a truncated-line velocity grid");
        };
        let n = vel.len();
        let dv = vel.quad[0];
        let scale = vel.m[0] / gaussian(vel.nodes[0][0]);
        let conductance: Vec<f64> = (0..n - 1)
            .map(|e| scale * gaussian(0.5 * (vel.nodes[e][0] + vel.nodes[e + 1][0])) / dv)
            .collect();
        let mut m = Dense::zeros(n, n);
        for (e, c) in conductance.iter().enumerate() {
            for (i, nb) in [(e, e + 1), (e + 1, e)] {
                m.add(i, nb, c / (vel.quad[i] * vel.m[nb]));
                m.add(i, i, -c / (vel.quad[i] * vel.m[i]));
            }
        }
        Ok(Self {
            kind: CollisionKind::FokkerPlanck { conductance },
            vel: vel.clone(),
            weight: vec![1.0; n],
            matrix: m,
        })
    }

    /// Replace the coercivity weight `w(v_j)`.
    pub fn with_weight(mut self, w: Vec<f64>) -> Result<Self> {
        if w.len() != self.nv() {
            return Err(Error::GridMismatch("weight length differs from velocity grid".into()));
        }
        if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return invalid("coercivity weight must be positive");
        }
        self.weight = w;
        Ok(self)
    }

    /// `c ℒ` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return invalid("scale factor must be positive");
        }
        let mut out = self.clone();
        out.matrix.data.iter_mut().for_each(|x| *x *= c);
        out.kind = match &self.kind {
            CollisionKind::Bgk => {
                let mut k = Dense::zeros(self.nv(), self.nv());
                for i in 0..self.nv() {
                    for j in 0..self.nv() {
                        k.set(i, j, c * self.vel.m[i]);
                    }
                }
                CollisionKind::Scattering { kernel: k }
            }
            CollisionKind::Scattering { kernel } => {
                let mut k = kernel.clone();
                k.data.iter_mut().for_each(|x| *x *= c);
                CollisionKind::Scattering { kernel: k }
            }
            CollisionKind::FokkerPlanck { conductance } => CollisionKind::FokkerPlanck {
                conductance: conductance.iter().map(|x| c * x).collect(),
            },
        };
        Ok(out)
    }

    pub fn nv(&self) -> usize {
        self.vel.len()
    }

    /// Matrix of ℒ on velocity profiles.
    pub fn matrix(&self) -> &Dense {
        &self.matrix
    }

    pub fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_len(g)?;
        Ok(self.matrix.matvec(g))
    }

    /// Unchecked `out = ℒg`.
    pub fn apply_into(&self, g: &[f64], out: &mut [f64]) {
        let n = self.nv();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let row = &self.matrix.data[i * n..(i + 1) * n];
            *o = row.iter().zip(g).map(|(a, b)| a * b).sum();
        }
    }

    fn check_len(&self, g: &[f64]) -> Result<()> {
        if g.len() == self.nv() {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "profile has {} values, operator has {} nodes",
                g.len(),
                self.nv()
            )))
        }
    }

    /// `−⟨g, ℒg⟩_{L²(M⁻¹)}`; for Fokker–Planck this is `‖Ag‖²` evaluated edgewise.
    pub fn dissipation_v(&self, g: &[f64]) -> Result<f64> {
        self.check_len(g)?;
        if let Some(ag) = self.factor_apply(g) {
            return Ok(ag.iter().map(|x| x * x).sum());
        }
        let lg = self.matrix.matvec(g);
        Ok(-self.vel.inner_minv(g, &lg))
    }

    /// Fokker–Planck factor `A g` on edges; `None` for other families.
    pub fn factor_apply(&self, g: &[f64]) -> Option<Vec<f64>> {
        let CollisionKind::FokkerPlanck { conductance } = &self.kind else { return None };
        let m = &self.vel.m;
        Some(
            conductance
                .iter()
                .enumerate()
                .map(|(e, c)| c.sqrt() * (g[e + 1] / m[e + 1] - g[e] / m[e]))
                .collect(),
        )
    }

    /// Explicit kernel `k(v_i, v_j)` for BGK and scattering operators.
    pub fn kernel_matrix(&self) -> Option<Dense> {
        match &self.kind {
            CollisionKind::Bgk => {
                let n = self.nv();
                let mut k = Dense::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        k.set(i, j, self.vel.m[i]);
                    }
                }
                Some(k)
            }
            CollisionKind::Scattering { kernel } => Some(kernel.clone()),
            CollisionKind::FokkerPlanck { .. } => None,
        }
    }

    /// `max_i |(ℒM)_i|`.
    pub fn equilibrium_residual(&self) -> f64 {
        self.matrix.matvec(&self.vel.m).iter().fold(0.0, |a, x| a.max(x.abs()))
    }

    /// `max |⟨f, ℒg⟩ − ⟨ℒf, g⟩|` over the basis, in L²(M⁻¹), relative to the matrix scale.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.nv();
        let w: Vec<f64> = (0..n).map(|i| self.vel.quad[i] / self.vel.m[i]).collect();
        let scale = self.matrix.data.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-300);
        let mut d = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let a = w[i] * self.matrix.get(i, j);
                let b = w[j] * self.matrix.get(j, i);
                d = d.max((a - b).abs() / (scale * w[i].max(w[j])));
            }
        }
        d
    }

    /// `exp(τℒ)` for operators symmetric in L²(M⁻¹).
    pub fn propagator(&self, tau: f64) -> Result<Dense> {
        if self.symmetry_defect() > 1e-9 {
            return Err(Error::Invalid(
                "exact collision propagator needs an operator symmetric in L²(M⁻¹)".into(),
            ));
        }
        let n = self.nv();
        let r: Vec<f64> = (0..n).map(|i| (self.vel.quad[i] / self.vel.m[i]).sqrt()).collect();
        let mut s = Dense::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let a = r[i] * self.matrix.get(i, j) / r[j];
                let b = r[j] * self.matrix.get(j, i) / r[i];
                s.set(i, j, 0.5 * (a + b));
            }
        }
        let (vals, vecs) = sym_eig(&s)?;
        let mut p = Dense::zeros(n, n);
        for (k, lam) in vals.iter().enumerate() {
            let e = (tau * lam.min(0.0)).exp();
            let u = &vecs[k];
            for i in 0..n {
                let ui = e * u[i] / r[i];
                for j in 0..n {
                    p.add(i, j, ui * u[j] * r[j]);
                }
            }
        }
        Ok(p)
    }
}

/// Local spectral gap of ℒ.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralGapReport {
    pub lambda1: f64,
    /// Minimizer, orthogonal to M in L²(M⁻¹).
    pub witness: Vec<f64>,
}

/// `λ₁ = inf_{g ⊥ M} −⟨g, ℒg⟩_{M⁻¹} / ‖g‖²_{L²(w/M)}` via a constrained symmetric pencil.
pub fn spectral_gap(l: &CollisionOperator) -> Result<SpectralGapReport> {
    let n = l.nv();
    let vel = &l.vel;
    let mut k = Dense::zeros(n, n);
    for i in 0..n {
        let di = vel.quad[i] / vel.m[i];
        for j in 0..n {
            k.set(i, j, -di * l.matrix.get(i, j));
        }
    }
    let d: Vec<f64> = (0..n).map(|i| vel.quad[i] * l.weight[i] / vel.m[i]).collect();
    let (vals, vecs) = constrained_pencil(&k, &d, &vel.quad)?;
    let lambda1 = vals[0].max(0.0);
    Ok(SpectralGapReport { lambda1, witness: vecs[0].clone() })
}

/// Cheeger conductance with its minimizing subset.
#[derive(Clone, Debug, Serialize)]
pub struct CheegerReport {
    pub phi: f64,
    /// Indices of the minimizing subset A.
    pub subset: Vec<usize>,
}

/// Brute-force conductance
/// `Φ = min_A Σ_{A×Aᶜ} √(q(v,v_*)M(v)M(v_*)) / min(|A|_M, |Aᶜ|_M)` with `q(v,v_*) = k(v,v_*)M(v_*)`.
pub fn cheeger_constant(l: &CollisionOperator) -> Result<CheegerReport> {
    let k = l.kernel_matrix().ok_or_else(|| {
        Error::Invalid("Cheeger conductance is defined for kernel operators only".into())
    })?;
    let m = l.nv();
    if m > 20 {
        return Err(Error::Capacity(format!(
            "brute-force conductance over 2^{m} subsets exceeds the cap of 20 velocities"
        )));
    }
    let vel = &l.vel;
    let mass: Vec<f64> = (0..m).map(|i| vel.quad[i] * vel.m[i]).collect();
    let mut cut = Dense::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let q = k.get(i, j) * vel.m[j];
            cut.set(i, j, (q * vel.m[i] * vel.m[j]).sqrt() * vel.quad[i] * vel.quad[j]);
        }
    }
    // A and Aᶜ give the same ratio only for symmetric cuts, so enumerate all proper subsets.
    let full = (1u32 << m) - 1;
    let best = (1..full)
        .into_par_iter()
        .map(|s| {
            let (mut num, mut ma) = (0.0, 0.0);
            for i in 0..m {
                if s >> i & 1 == 1 {
                    ma += mass[i];
                    for j in 0..m {
                        if s >> j & 1 == 0 {
                            num += cut.get(i, j);
                        }
                    }
                }
            }
            let total: f64 = mass.iter().sum();
            (num / ma.min(total - ma), s)
        })
        .reduce(|| (f64::INFINITY, 0), |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    Ok(CheegerReport { phi: best.0, subset: (0..m).filter(|i| best.1 >> i & 1 == 1).collect() })
}

/// Detailed-balance verdict.
#[derive(Clone, Debug, Serialize)]
pub struct DetailedBalance {
    pub pass: bool,
    pub violation: f64,
}

/// `max |k_ij M_j − k_ji M_i|`, passing at 1e-12. Fokker–Planck is reversible by construction.
pub fn detailed_balance_check(l: &CollisionOperator) -> DetailedBalance {
    let Some(k) = l.kernel_matrix() else {
        return DetailedBalance { pass: true, violation: 0.0 };
    };
    let m = &l.vel.m;
    let mut v = 0.0f64;
    for i in 0..l.nv() {
        for j in 0..l.nv() {
            v = v.max((k.get(i, j) * m[j] - k.get(j, i) * m[i]).abs());
        }
    }
    DetailedBalance { pass: v <= 1e-12, violation: v }
}

/// Pointwise Γ₂ values `Mℒ(f²/M) − 2fℒf`.
#[derive(Clone, Debug, Serialize)]
pub struct Gamma2Report {
    pub min: f64,
    pub argmin: usize,
    pub values: Vec<f64>,
    /// False when the operator is not reversible; the sign is then not guaranteed.
    pub applicable: bool,
}

pub fn gamma2_check(l: &CollisionOperator, f: &[f64]) -> Result<Gamma2Report> {
    l.check_len(f)?;
    if f.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return invalid("Γ₂ check needs a positive profile");
    }
    let m = &l.vel.m;
    let u: Vec<f64> = f.iter().zip(m).map(|(a, b)| a / b).collect();
    let values: Vec<f64> = match &l.kind {
        CollisionKind::FokkerPlanck { conductance } => {
            let mut out = vec![0.0; l.nv()];
            for (e, c) in conductance.iter().enumerate() {
                let d2 = c * (u[e + 1] - u[e]).powi(2);
                out[e] += d2 * m[e] / l.vel.quad[e];
                out[e + 1] += d2 * m[e + 1] / l.vel.quad[e + 1];
            }
            out
        }
        _ => {
            let f2: Vec<f64> = f.iter().zip(&u).map(|(a, b)| a * b).collect();
            let a = l.matrix.matvec(&f2);
            let b = l.matrix.matvec(f);
            (0..l.nv()).map(|i| m[i] * a[i] - 2.0 * f[i] * b[i]).collect()
        }
    };
    let (argmin, min) = values
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::INFINITY), |a, (i, v)| if v < a.1 { (i, v) } else { a });
    Ok(Gamma2Report { min, argmin, values, applicable: detailed_balance_check(l).pass })
}

/// Even velocity set `{±1, ±2, …}` (with 0 for odd m) and random equilibrium.
fn random_velocities(m: usize, rng: &mut ChaCha8Rng) -> Result<VelocityGrid> {
    if m < 2 {
        return invalid("random kernels need m ≥ 2");
    }
    let mut points = Vec::with_capacity(m);
    if m % 2 == 1 {
        points.push(vec![0.0]);
    }
    for k in 1..=m / 2 {
        points.push(vec![-(k as f64)]);
        points.push(vec![k as f64]);
    }
    let weights = (0..m).map(|_| rng.gen_range(0.2..1.0)).collect();
    VelocityGrid::new(VelocitySpace::DiscreteSet { points, weights })
}

/// Reversible irreducible kernel `k_ij = q_ij / M_j` with random symmetric `q`.
pub fn random_reversible_kernel(m: usize, seed: u64) -> Result<CollisionOperator> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vel = random_velocities(m, &mut rng)?;
    let mut k = Dense::zeros(m, m);
    for i in 0..m {
        for j in i + 1..m {
            // a chain backbone keeps the graph connected; other edges may vanish
            let q = if j == i + 1 || rng.gen_bool(0.6) { rng.gen_range(0.05..1.0) } else { 0.0 };
            k.set(i, j, q / vel.m[j]);
            k.set(j, i, q / vel.m[i]);
        }
    }
    CollisionOperator::scattering(&vel, k)
}

/// Kernel with independent random entries; generically violates detailed balance.
pub fn random_kernel(m: usize, seed: u64) -> Result<CollisionOperator> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vel = random_velocities(m, &mut rng)?;
    let mut k = Dense::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            if i != j {
                k.set(i, j, rng.gen_range(0.0..1.0f64).powi(3));
            }
        }
    }
    CollisionOperator::scattering(&vel, k)
}

/// Write a kernel as CSV rows.
pub fn kernel_to_csv(k: &Dense, path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Invalid(e.to_string()))?;
    for i in 0..k.n {
        w.write_record((0..k.m).map(|j| format!("{:e}", k.get(i, j))))
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a square kernel from CSV rows.
pub fn kernel_from_csv(path: &std::path::Path) -> Result<Dense> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Invalid(format!("cannot read kernel: {e}")))?;
    let mut rows: Vec<Vec<f64>> = vec![];
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Invalid(format!("kernel: {e}")))?;
        let row: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        rows.push(row.map_err(|e| Error::Invalid(format!("kernel entry: {e}")))?);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return invalid("kernel CSV must be a nonempty square table");
    }
    Ok(Dense { n, m: n, data: rows.concat() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point(q: f64) -> CollisionOperator {
        let vel = VelocityGrid::new(VelocitySpace::DiscreteSet {
            points: vec![vec![-1.0], vec![1.0]],
            weights: vec![1.0, 1.0],
        })
        .unwrap();
        let mut k = Dense::zeros(2, 2);
        k.set(0, 1, q);
        k.set(1, 0, q);
        CollisionOperator::scattering(&vel, k).unwrap()
    }

    fn line(n: usize) -> VelocityGrid {
        VelocityGrid::new(VelocitySpace::TruncatedLine { v_max: 6.0, n }).unwrap()
    }

    #[test]
    fn bgk_action() {
        let vel = line(16);
        let l = CollisionOperator::bgk(&vel);
        assert!(l.equilibrium_residual() < 1e-14);
        let g: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin() + 1.0).collect();
        let lg = l.apply(&g).unwrap();
        let rho = vel.integrate(&g);
        for i in 0..16 {
            assert!((lg[i] - (rho * vel.m[i] - g[i])).abs() < 1e-13);
        }
        assert!(vel.integrate(&lg).abs() < 1e-12);
    }

    #[test]
    fn bgk_gap_is_one() {
        let l = CollisionOperator::bgk(&line(24));
        assert!((spectral_gap(&l).unwrap().lambda1 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn bgk_dissipation_off_equilibrium() {
        let vel = line(12);
        let l = CollisionOperator::bgk(&vel);
        let mut g: Vec<f64> = vel.nodes.iter().map(|v| v[0] * vel.m[0]).collect();
        let mean = vel.integrate(&g);
        for (gi, mi) in g.iter_mut().zip(&vel.m) {
            *gi -= mean * mi;
        }
        let d = l.dissipation_v(&g).unwrap();
        assert!((d - vel.inner_minv(&g, &g)).abs() < 1e-12 * d.max(1.0));
        assert!(l.dissipation_v(&vel.m.iter().map(|m| 3.0 * m).collect::<Vec<_>>()).unwrap().abs() < 1e-13);
    }

    #[test]
    fn fokker_planck_structure() {
        let vel = line(128);
        let l = CollisionOperator::fokker_planck(&vel).unwrap();
        assert!(l.equilibrium_residual() < 1e-10);
        assert!(l.symmetry_defect() < 1e-12);
        let g: Vec<f64> = vel.nodes.iter().map(|v| (v[0]).cos() * gaussian(v[0] * 0.8)).collect();
        let lg = l.apply(&g).unwrap();
        assert!(vel.integrate(&lg).abs() < 1e-12);
        let via_a = l.dissipation_v(&g).unwrap();
        let via_l = -vel.inner_minv(&g, &lg);
        assert!((via_a - via_l).abs() < 1e-10 * via_a.max(1.0));
        let gap = spectral_gap(&l).unwrap().lambda1;
        assert!((gap - 1.0).abs() < 0.02, "gap = {gap}");
    }

    #[test]
    fn two_point_gap_and_conductance() {
        let l = two_point(0.3);
        // λ₁ = 2q for k₁₂ = k₂₁ = q and M = (1/2, 1/2)
        assert!((spectral_gap(&l).unwrap().lambda1 - 0.6).abs() < 1e-12);
        let c = cheeger_constant(&l).unwrap();
        // single cut √(q M₂ · M₁ M₂) / min(M₁, M₂)
        let want = (0.3 * 0.5 * 0.5 * 0.5f64).sqrt() / 0.5;
        assert!((c.phi - want).abs() < 1e-14);
        assert_eq!(c.subset.len(), 1);
    }

    #[test]
    fn disconnected_kernel_has_zero_conductance() {
        let vel = VelocityGrid::new(VelocitySpace::DiscreteSet {
            points: vec![vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]],
            weights: vec![1.0; 4],
        })
        .unwrap();
        let mut k = Dense::zeros(4, 4);
        for (i, j) in [(0, 1), (1, 0), (2, 3), (3, 2)] {
            k.set(i, j, 1.0);
        }
        let l = CollisionOperator::scattering(&vel, k).unwrap();
        assert_eq!(cheeger_constant(&l).unwrap().phi, 0.0);
    }

    #[test]
    fn capacity_error_beyond_twenty() {
        let l = random_reversible_kernel(21, 1).unwrap();
        assert!(matches!(cheeger_constant(&l), Err(Error::Capacity(_))));
    }

    #[test]
    fn detailed_balance_cases() {
        assert!(detailed_balance_check(&random_reversible_kernel(6, 3).unwrap()).pass);
        assert!(detailed_balance_check(&CollisionOperator::bgk(&line(8))).pass);
        let vel = VelocityGrid::new(VelocitySpace::DiscreteSet {
            points: vec![vec![-1.0], vec![1.0]],
            weights: vec![1.0, 3.0],
        })
        .unwrap();
        let mut k = Dense::zeros(2, 2);
        k.data.fill(1.0);
        let db = detailed_balance_check(&CollisionOperator::scattering(&vel, k).unwrap());
        assert!(!db.pass && (db.violation - 0.5).abs() < 1e-14);
    }

    #[test]
    fn random_kernel_is_deterministic_and_irreducible() {
        let a = random_reversible_kernel(12, 9).unwrap();
        let b = random_reversible_kernel(12, 9).unwrap();
        assert_eq!(a.matrix().data, b.matrix().data);
        assert!(spectral_gap(&a).unwrap().lambda1 > 0.0);
        assert!(cheeger_constant(&a).unwrap().phi > 0.0);
    }

    #[test]
    fn gap_is_homogeneous() {
        let l = random_reversible_kernel(7, 4).unwrap();
        let a = spectral_gap(&l).unwrap().lambda1;
        let b = spectral_gap(&l.scaled(2.5).unwrap()).unwrap().lambda1;
        assert!((b - 2.5 * a).abs() < 1e-10 * b);
    }

    #[test]
    fn gamma2_equality_and_sign() {
        let l = random_reversible_kernel(8, 5).unwrap();
        let f: Vec<f64> = l.vel.m.iter().map(|m| 2.0 * m).collect();
        assert!(gamma2_check(&l, &f).unwrap().values.iter().all(|v| v.abs() < 1e-12));
        let fp = CollisionOperator::fokker_planck(&line(32)).unwrap();
        let f: Vec<f64> = fp.vel.nodes.iter().map(|v| gaussian(v[0]) * (2.0 + v[0].sin())).collect();
        assert!(gamma2_check(&fp, &f).unwrap().min >= -1e-10);
    }

    #[test]
    fn propagator_matches_bgk_formula() {
        let vel = line(10);
        let l = CollisionOperator::bgk(&vel);
        let p = l.propagator(0.4).unwrap();
        let g: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        let pg = p.matvec(&g);
        let rho = vel.integrate(&g);
        for i in 0..10 {
            let want = rho * vel.m[i] + (-0.4f64).exp() * (g[i] - rho * vel.m[i]);
            assert!((pg[i] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn kernel_csv_roundtrip() {
        let l = random_reversible_kernel(5, 2).unwrap();
        let k = l.kernel_matrix().unwrap();
        let dir = std::env::temp_dir().join(format!("kinlab-kernel-{}.csv", std::process::id()));
        kernel_to_csv(&k, &dir).unwrap();
        let back = kernel_from_csv(&dir).unwrap();
        std::fs::remove_file(&dir).ok();
        for (a, b) in k.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300));
        }
    }
}
