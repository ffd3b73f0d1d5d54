//! Plane-stress linear elasticity on uniform rectangular meshes of bilinear
//! quadrilaterals (2×2 Gauss quadrature, one material per element).
//!
//! Nodes are numbered row-major from the bottom-left corner, two degrees of
//! freedom per node, which keeps the stiffness matrix banded with
//! half-bandwidth `2 (nx + 1) + 3`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BandedSpd, Mat3};
use crate::randfield::GridSpec;

const GAUSS: f64 = 0.577_350_269_189_625_8;
const GAUSS_POINTS: [(f64, f64); 4] = [(-GAUSS, -GAUSS), (GAUSS, -GAUSS), (GAUSS, GAUSS), (-GAUSS, GAUSS)];

/// Uniform `nx × ny` element mesh of the rectangle `[0, width] × [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectMesh {
    pub nx: usize,
    pub ny: usize,
    pub width: f64,
    pub height: f64,
}

impl RectMesh {
    pub fn new(nx: usize, ny: usize, width: f64, height: f64) -> Result<Self> {
        if nx == 0 || ny == 0 || !(width > 0.0 && height > 0.0) {
            return Err(Error::config(format!("degenerate mesh {nx}x{ny} on {width}x{height}")));
        }
        Ok(RectMesh { nx, ny, width, height })
    }

    pub fn square(n: usize, side: f64) -> Result<Self> {
        Self::new(n, n, side, side)
    }

    pub fn hx(&self) -> f64 {
        self.width / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.height / self.ny as f64
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_coords(&self, n: usize) -> (f64, f64) {
        let i = n % (self.nx + 1);
        let j = n / (self.nx + 1);
        (i as f64 * self.hx(), j as f64 * self.hy())
    }

    /// Counter-clockwise node numbers of element `e`.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (i, j) = (e % self.nx, e / self.nx);
        let n0 = self.node(i, j);
        [n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1]
    }

    fn element_dofs(&self, e: usize) -> [usize; 8] {
        let n = self.element_nodes(e);
        [2 * n[0], 2 * n[0] + 1, 2 * n[1], 2 * n[1] + 1, 2 * n[2], 2 * n[2] + 1, 2 * n[3], 2 * n[3] + 1]
    }

    /// Element centroids as a sampling grid.
    pub fn centroid_grid(&self) -> GridSpec {
        GridSpec::new(self.nx, self.ny, self.hx(), self.hy()).with_origin(0.5 * self.hx(), 0.5 * self.hy())
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&n| {
                let (i, j) = (n % (self.nx + 1), n / (self.nx + 1));
                i == 0 || j == 0 || i == self.nx || j == self.ny
            })
            .collect()
    }
}

/// Strain-displacement matrix (Voigt, engineering shear) at `(ξ, η)`.
fn strain_matrix(xi: f64, eta: f64, hx: f64, hy: f64) -> [[f64; 8]; 3] {
    let dxi = [-(1.0 - eta), 1.0 - eta, 1.0 + eta, -(1.0 + eta)];
    let deta = [-(1.0 - xi), -(1.0 + xi), 1.0 + xi, 1.0 - xi];
    let mut b = [[0.0; 8]; 3];
    for a in 0..4 {
        let dx = dxi[a] * 0.25 * 2.0 / hx;
        let dy = deta[a] * 0.25 * 2.0 / hy;
        b[0][2 * a] = dx;
        b[1][2 * a + 1] = dy;
        b[2][2 * a] = dy;
        b[2][2 * a + 1] = dx;
    }
    b
}

/// Element stiffness for elasticity matrix `c`.
pub fn element_stiffness(hx: f64, hy: f64, c: &Mat3) -> [[f64; 8]; 8] {
    let det_j = 0.25 * hx * hy;
    let mut k = [[0.0; 8]; 8];
    for &(xi, eta) in &GAUSS_POINTS {
        let b = strain_matrix(xi, eta, hx, hy);
        let mut cb = [[0.0; 8]; 3];
        for r in 0..3 {
            for col in 0..8 {
                cb[r][col] = (0..3).map(|s| c.0[r][s] * b[s][col]).sum();
            }
        }
        for p in 0..8 {
            for q in 0..8 {
                k[p][q] += det_j * (0..3).map(|r| b[r][p] * cb[r][q]).sum::<f64>();
            }
        }
    }
    k
}

/// Strain averaged over the four Gauss points of an element.
fn element_mean_strain(hx: f64, hy: f64, ue: &[f64; 8]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for &(xi, eta) in &GAUSS_POINTS {
        let b = strain_matrix(xi, eta, hx, hy);
        for r in 0..3 {
            out[r] += 0.25 * (0..8).map(|c| b[r][c] * ue[c]).sum::<f64>();
        }
    }
    out
}

/// Nodal displacements and solve diagnostics.
#[derive(Debug, Clone)]
pub struct Solution {
    pub displacement: Vec<f64>,
    /// `‖K u - f‖ / ‖f‖` over the free degrees of freedom.
    pub residual: f64,
    /// `uᵀ K u` (twice the strain energy).
    pub energy: f64,
    /// `fᵀ u` over the free degrees of freedom.
    pub work: f64,
}

/// Assembled and factorized stiffness for a fixed set of constrained
/// degrees of freedom; reusable across load cases.
pub struct FeSystem {
    mesh: RectMesh,
    elasticity: Vec<Mat3>,
    element_k: Vec<[[f64; 8]; 8]>,
    free_index: Vec<Option<usize>>,
    k: BandedSpd,
}

impl FeSystem {
    /// `compliance` holds one SPD compliance matrix per element (row-major).
    pub fn new(mesh: RectMesh, compliance: &[Mat3], constrained: &[usize]) -> Result<Self> {
        if compliance.len() != mesh.n_elements() {
            return Err(Error::domain(format!(
                "{} element compliances for a mesh of {} elements",
                compliance.len(),
                mesh.n_elements()
            )));
        }
        let elasticity = compliance
            .iter()
            .enumerate()
            .map(|(e, s)| {
                if !s.is_spd() {
                    return Err(Error::domain(format!("element {e} compliance is not SPD")));
                }
                s.inverse().map(|c| c.symmetrized())
            })
            .collect::<Result<Vec<_>>>()?;
        let (hx, hy) = (mesh.hx(), mesh.hy());
        let element_k: Vec<_> = elasticity.iter().map(|c| element_stiffness(hx, hy, c)).collect();

        let mut free_index = vec![None; mesh.n_dofs()];
        let mut is_fixed = vec![false; mesh.n_dofs()];
        for &d in constrained {
            if d >= mesh.n_dofs() {
                return Err(Error::config(format!("constrained dof {d} out of range")));
            }
            is_fixed[d] = true;
        }
        let mut n_free = 0;
        for d in 0..mesh.n_dofs() {
            if !is_fixed[d] {
                free_index[d] = Some(n_free);
                n_free += 1;
            }
        }
        if n_free == 0 {
            return Err(Error::config("every degree of freedom is constrained"));
        }

        let mut bw = 0;
        for e in 0..mesh.n_elements() {
            let f: Vec<usize> = mesh.element_dofs(e).iter().filter_map(|&d| free_index[d]).collect();
            if let (Some(lo), Some(hi)) = (f.iter().min(), f.iter().max()) {
                bw = bw.max(hi - lo);
            }
        }
        let mut k = BandedSpd::zeros(n_free, bw);
        for (e, ke) in element_k.iter().enumerate() {
            let dofs = mesh.element_dofs(e);
            for p in 0..8 {
                let Some(fp) = free_index[dofs[p]] else { continue };
                for q in 0..8 {
                    let Some(fq) = free_index[dofs[q]] else { continue };
                    if fq <= fp {
                        k.add_lower(fp, fq, ke[p][q]);
                    }
                }
            }
        }
        k.factor()?;
        Ok(FeSystem { mesh, elasticity, element_k, free_index, k })
    }

    pub fn mesh(&self) -> &RectMesh {
        &self.mesh
    }

    /// Solve for nodal forces `forces` (length `n_dofs`, entries on
    /// constrained dofs ignored) and prescribed values on constrained dofs
    /// (unlisted constrained dofs are held at zero).
    pub fn solve(&self, forces: &[f64], prescribed: &[(usize, f64)]) -> Result<Solution> {
        let mesh = &self.mesh;
        let n_dofs = mesh.n_dofs();
        if forces.len() != n_dofs {
            return Err(Error::domain("force vector length does not match the mesh"));
        }
        let mut u = vec![0.0; n_dofs];
        for &(d, v) in prescribed {
            if d >= n_dofs || self.free_index[d].is_some() {
                return Err(Error::config(format!("dof {d} is not constrained")));
            }
            u[d] = v;
        }
        let mut rhs = vec![0.0; self.k.dim()];
        for d in 0..n_dofs {
            if let Some(f) = self.free_index[d] {
                rhs[f] = forces[d];
            }
        }
        if !prescribed.is_empty() {
            for (e, ke) in self.element_k.iter().enumerate() {
                let dofs = mesh.element_dofs(e);
                for p in 0..8 {
                    let Some(fp) = self.free_index[dofs[p]] else { continue };
                    for q in 0..8 {
                        if self.free_index[dofs[q]].is_none() && u[dofs[q]] != 0.0 {
                            rhs[fp] -= ke[p][q] * u[dofs[q]];
                        }
                    }
                }
            }
        }
        let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rhs_norm == 0.0 {
            return Ok(Solution { displacement: u, residual: 0.0, energy: 0.0, work: 0.0 });
        }
        let x = self.k.solve(&rhs);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("non-finite displacement".into()));
        }
        for d in 0..n_dofs {
            if let Some(f) = self.free_index[d] {
                u[d] = x[f];
            }
        }

        // Residual, energy and work on the free dofs from element contributions.
        let mut ku = vec![0.0; n_dofs];
        for (e, ke) in self.element_k.iter().enumerate() {
            let dofs = mesh.element_dofs(e);
            for p in 0..8 {
                ku[dofs[p]] += (0..8).map(|q| ke[p][q] * u[dofs[q]]).sum::<f64>();
            }
        }
        let (mut r2, mut energy, mut work) = (0.0, 0.0, 0.0);
        for d in 0..n_dofs {
            if self.free_index[d].is_some() {
                r2 += (ku[d] - forces[d]).powi(2);
                work += forces[d] * u[d];
            }
            energy += ku[d] * u[d];
        }
        Ok(Solution { displacement: u, residual: r2.sqrt() / rhs_norm, energy, work })
    }

    /// Gauss-averaged strain of every element.
    pub fn element_strains(&self, u: &[f64]) -> Vec<[f64; 3]> {
        let (hx, hy) = (self.mesh.hx(), self.mesh.hy());
        (0..self.mesh.n_elements())
            .map(|e| {
                let dofs = self.mesh.element_dofs(e);
                let ue = dofs.map(|d| u[d]);
                element_mean_strain(hx, hy, &ue)
            })
            .collect()
    }

    /// Volume averages of strain and stress.
    pub fn average_strain_stress(&self, u: &[f64]) -> ([f64; 3], [f64; 3]) {
        let strains = self.element_strains(u);
        let n = strains.len() as f64;
        let mut eps = [0.0; 3];
        let mut sig = [0.0; 3];
        for (e, c) in strains.iter().zip(&self.elasticity) {
            let s = c.mul_vec(*e);
            for r in 0..3 {
                eps[r] += e[r] / n;
                sig[r] += s[r] / n;
            }
        }
        (eps, sig)
    }
}

/// Convenience wrapper: assemble, factor and solve once.
pub fn assemble_solve(
    mesh: RectMesh,
    compliance: &[Mat3],
    constrained: &[usize],
    prescribed: &[(usize, f64)],
    forces: &[f64],
) -> Result<Solution> {
    FeSystem::new(mesh, compliance, constrained)?.solve(forces, prescribed)
}

/// Support condition of the bottom edge of the macro specimen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    /// Both displacement components fixed.
    Clamped,
    /// Vertical component fixed, horizontal free except at one corner.
    Rollers,
}

/// Compression test of a square specimen: bottom edge supported, uniform
/// downward line load on the top edge, strains observed on a centered window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacroProblem {
    /// Side length [m].
    pub side: f64,
    /// Elements per side.
    pub elements: usize,
    /// Line force density on the top edge [N/m], acting downward.
    pub load: f64,
    /// Elements per side of the observation window.
    pub window_elements: usize,
    pub support: Support,
}

impl Default for MacroProblem {
    fn default() -> Self {
        MacroProblem { side: 1e-2, elements: 100, load: 5e5, window_elements: 10, support: Support::Clamped }
    }
}

impl MacroProblem {
    pub fn mesh(&self) -> Result<RectMesh> {
        RectMesh::square(self.elements, self.side)
    }

    /// First element index (per axis) of the centered observation window.
    pub fn window_start(&self) -> Result<usize> {
        let (n, w) = (self.elements, self.window_elements);
        if w == 0 || w + 2 > n {
            return Err(Error::config(format!(
                "window of {w} elements does not fit strictly inside {n} elements"
            )));
        }
        if (n - w) % 2 != 0 {
            return Err(Error::config(format!(
                "a {w}-element window cannot be centered on element boundaries of a {n}-element mesh"
            )));
        }
        Ok((n - w) / 2)
    }

    /// Window extent `[x_lo, x_hi]` (identical in y) in meters.
    pub fn window_bounds(&self) -> Result<(f64, f64)> {
        let h = self.side / self.elements as f64;
        let s = self.window_start()? as f64;
        Ok((s * h, (s + self.window_elements as f64) * h))
    }

    fn validate(&self) -> Result<()> {
        if !(self.side > 0.0) || !self.load.is_finite() {
            return Err(Error::config("macro problem needs a positive side and finite load"));
        }
        self.window_start().map(|_| ())
    }
}

/// Strain field on a regular grid of elements, Voigt `(ε11, ε22, 2ε12)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrainField {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub values: Vec<[f64; 3]>,
}

impl StrainField {
    pub fn at(&self, i: usize, j: usize) -> [f64; 3] {
        self.values[j * self.nx + i]
    }
}

/// Solve the macro compression test with one compliance per macro element
/// and return the element strains inside the observation window.
pub fn run_hfcmm(compliance: &[Mat3], problem: &MacroProblem) -> Result<StrainField> {
    problem.validate()?;
    let mesh = problem.mesh()?;
    let n = problem.elements;
    let mut constrained = Vec::new();
    match problem.support {
        Support::Clamped => {
            for i in 0..=n {
                constrained.extend([2 * mesh.node(i, 0), 2 * mesh.node(i, 0) + 1]);
            }
        }
        Support::Rollers => {
            constrained.push(2 * mesh.node(0, 0));
            for i in 0..=n {
                constrained.push(2 * mesh.node(i, 0) + 1);
            }
        }
    }
    let sys = FeSystem::new(mesh, compliance, &constrained)?;

    let mut forces = vec![0.0; mesh.n_dofs()];
    let h = mesh.hx();
    for i in 0..n {
        for node in [mesh.node(i, n), mesh.node(i + 1, n)] {
            forces[2 * node + 1] -= 0.5 * problem.load * h;
        }
    }
    let sol = sys.solve(&forces, &[])?;
    if sol.residual > 1e-9 {
        return Err(Error::Solver(format!("residual {:e} above tolerance", sol.residual)));
    }
    let strains = sys.element_strains(&sol.displacement);

    let start = problem.window_start()?;
    let w = problem.window_elements;
    let mut values = Vec::with_capacity(w * w);
    for j in start..start + w {
        for i in start..start + w {
            values.push(strains[j * n + i]);
        }
    }
    Ok(StrainField { nx: w, ny: w, dx: h, dy: mesh.hy(), values })
}

/// Corner pinning that removes the rigid-body modes of a pure-traction problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pinning {
    /// Bottom-left corner fully, top-left corner horizontally.
    BottomLeft,
    /// Bottom-right corner fully, bottom-left corner vertically.
    BottomRight,
}

/// Effective compliance from static uniform boundary conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveCompliance {
    /// Symmetrized, SPD.
    pub matrix: Mat3,
    /// Columns as computed, before symmetrization.
    pub raw: Mat3,
}

/// Nodal forces of a uniform stress `sigma` applied as tractions `σ·n` on
/// the whole boundary.
fn uniform_traction_forces(mesh: &RectMesh, sigma: [f64; 3]) -> Vec<f64> {
    let [s11, s22, s12] = sigma;
    let mut f = vec![0.0; mesh.n_dofs()];
    let (hx, hy) = (mesh.hx(), mesh.hy());
    let mut add = |node: usize, t: [f64; 2], len: f64| {
        f[2 * node] += 0.5 * len * t[0];
        f[2 * node + 1] += 0.5 * len * t[1];
    };
    for i in 0..mesh.nx {
        for node in [mesh.node(i, 0), mesh.node(i + 1, 0)] {
            add(node, [-s12, -s22], hx);
        }
        for node in [mesh.node(i, mesh.ny), mesh.node(i + 1, mesh.ny)] {
            add(node, [s12, s22], hx);
        }
    }
    for j in 0..mesh.ny {
        for node in [mesh.node(0, j), mesh.node(0, j + 1)] {
            add(node, [-s11, -s12], hy);
        }
        for node in [mesh.node(mesh.nx, j), mesh.node(mesh.nx, j + 1)] {
            add(node, [s11, s12], hy);
        }
    }
    f
}

pub fn homogenize_subc(mesh: RectMesh, compliance: &[Mat3]) -> Result<EffectiveCompliance> {
    homogenize_subc_with(mesh, compliance, Pinning::BottomLeft)
}

/// Apply the three unit macroscopic stresses as boundary tractions; column
/// `k` of the effective compliance is the volume-average strain of case `k`.
pub fn homogenize_subc_with(mesh: RectMesh, compliance: &[Mat3], pin: Pinning) -> Result<EffectiveCompliance> {
    let (bl, br, tl) = (mesh.node(0, 0), mesh.node(mesh.nx, 0), mesh.node(0, mesh.ny));
    let constrained = match pin {
        Pinning::BottomLeft => vec![2 * bl, 2 * bl + 1, 2 * tl],
        Pinning::BottomRight => vec![2 * br, 2 * br + 1, 2 * bl + 1],
    };
    let sys = FeSystem::new(mesh, compliance, &constrained)?;
    let mut raw = Mat3::ZERO;
    for k in 0..3 {
        let mut sigma = [0.0; 3];
        sigma[k] = 1.0;
        let forces = uniform_traction_forces(&mesh, sigma);
        let sol = sys.solve(&forces, &[])?;
        let (eps, _) = sys.average_strain_stress(&sol.displacement);
        for r in 0..3 {
            raw.0[r][k] = eps[r];
        }
    }
    let matrix = raw.symmetrized();
    if !matrix.is_spd() {
        return Err(Error::Numerical("effective compliance is not positive definite".into()));
    }
    Ok(EffectiveCompliance { matrix, raw })
}

/// Kinematic uniform boundary conditions: impose `u = ε⁰ x` on the boundary
/// for the three unit strains, average the stress, and invert.
pub fn homogenize_kubc(mesh: RectMesh, compliance: &[Mat3]) -> Result<Mat3> {
    let boundary = mesh.boundary_nodes();
    let constrained: Vec<usize> = boundary.iter().flat_map(|&n| [2 * n, 2 * n + 1]).collect();
    let sys = FeSystem::new(mesh, compliance, &constrained)?;
    let forces = vec![0.0; mesh.n_dofs()];
    let mut stiffness = Mat3::ZERO;
    for k in 0..3 {
        let mut eps = [0.0; 3];
        eps[k] = 1.0;
        let prescribed: Vec<(usize, f64)> = boundary
            .iter()
            .flat_map(|&n| {
                let (x, y) = mesh.node_coords(n);
                let ux = eps[0] * x + 0.5 * eps[2] * y;
                let uy = 0.5 * eps[2] * x + eps[1] * y;
                [(2 * n, ux), (2 * n + 1, uy)]
            })
            .collect();
        let sol = sys.solve(&forces, &prescribed)?;
        let (_, sig) = sys.average_strain_stress(&sol.displacement);
        for r in 0..3 {
            stiffness.0[r][k] = sig[r];
        }
    }
    stiffness.symmetrized().inverse()
}
