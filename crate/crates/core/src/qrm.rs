//! The discrete quasi-reversibility functional over mode fields and its
//! normal equations.
//!
//! With `h` the grid spacing and `d` the dimension, the functional is
//!
//! ```text
//! J(u) = Σ_{interior x} h^d Σ_m |L_h u_m(x) - Σ_n s_mn(x) u_n(x)|²
//!      + Σ_{boundary x} h^{d-1} Σ_m |B u_m(x) - 𝔣_m(x)|²      (measured trace)
//!      + Σ_{boundary x} h^{d-1} Σ_m |B' u_m(x)|²             (imposed condition)
//!      + ε h^d ( Σ_{all x} |u|² + Σ_{interior x} |∇_h u|² + |Δ_h u|² )
//! ```
//!
//! where `B` is the outward normal derivative for the Dirichlet problem (and
//! `B'` the trace), or the other way round for the Neumann problem. Each term
//! is a block of rows acting on the flattened unknown vector; all blocks are
//! applied matrix-free.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{MediumCoefficients, ProblemKind};
use crate::grid::{BoundaryNode, FlatIndexMap, Grid};
use crate::linalg::SymmetricBandMatrix;
use crate::solver::LinearOperator;
use crate::spectral::{CouplingField, SpectralBoundaryData};

/// The row blocks of the functional.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    /// PDE residual on interior nodes (`𝓛`).
    Pde,
    /// Outward normal derivative on boundary nodes (`𝓝`).
    Neumann,
    /// Trace on boundary nodes (`𝓓`).
    Dirichlet,
    /// Identity on all nodes (regularizer).
    RegIdentity,
    /// Central difference along an axis on interior nodes (regularizer).
    RegGradient(usize),
    /// Discrete Laplacian on interior nodes (regularizer).
    RegLaplacian,
}

impl std::fmt::Display for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Block::Pde => f.write_str("L"),
            Block::Neumann => f.write_str("N"),
            Block::Dirichlet => f.write_str("D"),
            Block::RegIdentity => f.write_str("I"),
            Block::RegGradient(0) => f.write_str("Dx"),
            Block::RegGradient(_) => f.write_str("Dy"),
            Block::RegLaplacian => f.write_str("L1"),
        }
    }
}

/// Default regularization weight.
pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct QrmSystem {
    grid: Grid,
    drift: Vec<Vec<f64>>,
    potential: Vec<f64>,
    coupling: CouplingField,
    problem: ProblemKind,
    epsilon: f64,
    /// Spectral boundary data `𝔣`, boundary-major, unscaled.
    data: Vec<f64>,
    flat: FlatIndexMap,
    interior: Vec<usize>,
    boundary: Vec<BoundaryNode>,
    /// `h^{d/2}`
    w_interior: f64,
    /// `h^{(d-1)/2}`
    w_boundary: f64,
}

/// Build the system for one problem.
pub fn assemble(
    grid: &Grid,
    medium: &MediumCoefficients,
    coupling: &CouplingField,
    spectral: &SpectralBoundaryData,
    epsilon: f64,
    problem: ProblemKind,
) -> Result<QrmSystem> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid(format!(
            "regularization weight must be positive, got {epsilon}"
        )));
    }
    let n_nodes = grid.n_nodes();
    let n_modes = coupling.n_modes();
    let boundary = grid.boundary_nodes();
    if medium.n_nodes() != n_nodes || coupling.n_nodes() != n_nodes {
        return Err(Error::ShapeMismatch(format!(
            "grid has {n_nodes} nodes, medium {}, coupling {}",
            medium.n_nodes(),
            coupling.n_nodes()
        )));
    }
    if spectral.n_modes != n_modes {
        return Err(Error::ShapeMismatch(format!(
            "boundary data carry {} modes, coupling {n_modes}",
            spectral.n_modes
        )));
    }
    let nodes_match = spectral.nodes.len() == boundary.len()
        && spectral
            .nodes
            .iter()
            .zip(&boundary)
            .all(|(a, b)| *a == b.node);
    if !nodes_match {
        return Err(Error::ShapeMismatch(
            "boundary data do not match the grid boundary".into(),
        ));
    }
    if spectral.problem != problem {
        return Err(Error::invalid(format!(
            "boundary data belong to problem {}, system requested for problem {}",
            spectral.problem.number(),
            problem.number()
        )));
    }
    let h = grid.h();
    let d = grid.dim() as i32;
    Ok(QrmSystem {
        grid: grid.clone(),
        drift: medium.drift.clone(),
        potential: medium.potential.clone(),
        coupling: coupling.clone(),
        problem,
        epsilon,
        data: spectral.values.clone(),
        flat: FlatIndexMap::new(grid, n_modes),
        interior: grid.interior_nodes(),
        boundary,
        w_interior: h.powf(d as f64 / 2.0),
        w_boundary: h.powf((d - 1) as f64 / 2.0),
    })
}

impl QrmSystem {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn flat(&self) -> &FlatIndexMap {
        &self.flat
    }

    pub fn n_unknowns(&self) -> usize {
        self.flat.len()
    }

    pub fn n_modes(&self) -> usize {
        self.flat.n_modes()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn problem(&self) -> ProblemKind {
        self.problem
    }

    /// All blocks in a fixed order.
    pub fn blocks(&self) -> Vec<Block> {
        let mut b = vec![
            Block::Pde,
            Block::Neumann,
            Block::Dirichlet,
            Block::RegIdentity,
        ];
        b.extend((0..self.grid.dim()).map(Block::RegGradient));
        b.push(Block::RegLaplacian);
        b
    }

    /// The boundary block that carries the measurements.
    pub fn data_block(&self) -> Block {
        match self.problem {
            ProblemKind::Dirichlet => Block::Neumann,
            ProblemKind::Neumann => Block::Dirichlet,
        }
    }

    /// Multiplier of `|block u|²` in the functional.
    pub fn block_weight(&self, block: Block) -> f64 {
        match block {
            Block::Pde | Block::Neumann | Block::Dirichlet => 1.0,
            _ => self.epsilon,
        }
    }

    pub fn block_rows(&self, block: Block) -> usize {
        let n = self.n_modes();
        match block {
            Block::Pde | Block::RegGradient(_) | Block::RegLaplacian => self.interior.len() * n,
            Block::Neumann | Block::Dirichlet => self.boundary.len() * n,
            Block::RegIdentity => self.grid.n_nodes() * n,
        }
    }

    /// Right-hand side aligned with the data block rows: `h^{(d-1)/2} 𝔣`.
    pub fn data_vector(&self) -> Vec<f64> {
        self.data.iter().map(|v| self.w_boundary * v).collect()
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_unknowns() {
            return Err(Error::ShapeMismatch(format!(
                "vector has {} entries, system has {} unknowns",
                v.len(),
                self.n_unknowns()
            )));
        }
        Ok(())
    }

    /// Stencil of `L_h` at an interior node: center coefficient and
    /// `(stride, plus, minus)` neighbour coefficients per axis.
    #[inline]
    fn operator_stencil(&self, k: usize) -> (f64, [(usize, f64, f64); 2]) {
        let h = self.grid.h();
        let dim = self.grid.dim();
        let center = self.potential[k] - 2.0 * dim as f64 / (h * h);
        let mut nb = [(0, 0.0, 0.0); 2];
        for (axis, slot) in nb.iter_mut().enumerate().take(dim) {
            let b = self.drift[axis][k];
            *slot = (
                self.grid.stride(axis),
                1.0 / (h * h) + b / (2.0 * h),
                1.0 / (h * h) - b / (2.0 * h),
            );
        }
        (center, nb)
    }

    /// `r = block · v` (unchecked lengths).
    fn apply_block_into(&self, block: Block, v: &[f64], r: &mut [f64]) {
        let n = self.n_modes();
        let h = self.grid.h();
        let dim = self.grid.dim();
        let slice = |k: usize| &v[k * n..(k + 1) * n];
        match block {
            Block::Pde => {
                let w = self.w_interior;
                for (row, &k) in self.interior.iter().enumerate() {
                    let out = &mut r[row * n..(row + 1) * n];
                    let c = slice(k);
                    self.coupling.apply(k, c, out);
                    let (center, nb) = self.operator_stencil(k);
                    for (o, ci) in out.iter_mut().zip(c) {
                        *o = center * ci - *o;
                    }
                    for &(s, cp, cm) in nb.iter().take(dim) {
                        for ((o, p), q) in out.iter_mut().zip(slice(k + s)).zip(slice(k - s)) {
                            *o += cp * p + cm * q;
                        }
                    }
                    out.iter_mut().for_each(|o| *o *= w);
                }
            }
            Block::Neumann => {
                let w = self.w_boundary / (2.0 * h);
                for (row, b) in self.boundary.iter().enumerate() {
                    let (n1, n2) = self.grid.inward_neighbors(b);
                    let out = &mut r[row * n..(row + 1) * n];
                    for (((o, a), p), q) in out
                        .iter_mut()
                        .zip(slice(b.node))
                        .zip(slice(n1))
                        .zip(slice(n2))
                    {
                        *o = w * (3.0 * a - 4.0 * p + q);
                    }
                }
            }
            Block::Dirichlet => {
                for (row, b) in self.boundary.iter().enumerate() {
                    for (o, a) in r[row * n..(row + 1) * n].iter_mut().zip(slice(b.node)) {
                        *o = self.w_boundary * a;
                    }
                }
            }
            Block::RegIdentity => {
                for (o, a) in r.iter_mut().zip(v) {
                    *o = self.w_interior * a;
                }
            }
            Block::RegGradient(axis) => {
                let w = self.w_interior / (2.0 * h);
                let s = self.grid.stride(axis);
                for (row, &k) in self.interior.iter().enumerate() {
                    for ((o, p), q) in r[row * n..(row + 1) * n]
                        .iter_mut()
                        .zip(slice(k + s))
                        .zip(slice(k - s))
                    {
                        *o = w * (p - q);
                    }
                }
            }
            Block::RegLaplacian => {
                let w = self.w_interior / (h * h);
                for (row, &k) in self.interior.iter().enumerate() {
                    let out = &mut r[row * n..(row + 1) * n];
                    for (o, c) in out.iter_mut().zip(slice(k)) {
                        *o = -2.0 * dim as f64 * c;
                    }
                    for axis in 0..dim {
                        let s = self.grid.stride(axis);
                        for ((o, p), q) in out.iter_mut().zip(slice(k + s)).zip(slice(k - s)) {
                            *o += p + q;
                        }
                    }
                    out.iter_mut().for_each(|o| *o *= w);
                }
            }
        }
    }

    /// `out += alpha · blockᵀ r` (unchecked lengths).
    fn apply_block_t_acc(&self, block: Block, alpha: f64, r: &[f64], out: &mut [f64]) {
        let n = self.n_modes();
        let h = self.grid.h();
        let dim = self.grid.dim();
        let acc = |out: &mut [f64], k: usize, c: f64, src: &[f64]| {
            for (o, s) in out[k * n..(k + 1) * n].iter_mut().zip(src) {
                *o += c * s;
            }
        };
        match block {
            Block::Pde => {
                let w = alpha * self.w_interior;
                for (row, &k) in self.interior.iter().enumerate() {
                    let rr = &r[row * n..(row + 1) * n];
                    let (center, nb) = self.operator_stencil(k);
                    acc(out, k, w * center, rr);
                    self.coupling
                        .apply_t_acc(k, -w, rr, &mut out[k * n..(k + 1) * n]);
                    for &(s, cp, cm) in nb.iter().take(dim) {
                        acc(out, k + s, w * cp, rr);
                        acc(out, k - s, w * cm, rr);
                    }
                }
            }
            Block::Neumann => {
                let w = alpha * self.w_boundary / (2.0 * h);
                for (row, b) in self.boundary.iter().enumerate() {
                    let rr = &r[row * n..(row + 1) * n];
                    let (n1, n2) = self.grid.inward_neighbors(b);
                    acc(out, b.node, 3.0 * w, rr);
                    acc(out, n1, -4.0 * w, rr);
                    acc(out, n2, w, rr);
                }
            }
            Block::Dirichlet => {
                for (row, b) in self.boundary.iter().enumerate() {
                    acc(
                        out,
                        b.node,
                        alpha * self.w_boundary,
                        &r[row * n..(row + 1) * n],
                    );
                }
            }
            Block::RegIdentity => {
                for (o, a) in out.iter_mut().zip(r) {
                    *o += alpha * self.w_interior * a;
                }
            }
            Block::RegGradient(axis) => {
                let w = alpha * self.w_interior / (2.0 * h);
                let s = self.grid.stride(axis);
                for (row, &k) in self.interior.iter().enumerate() {
                    let rr = &r[row * n..(row + 1) * n];
                    acc(out, k + s, w, rr);
                    acc(out, k - s, -w, rr);
                }
            }
            Block::RegLaplacian => {
                let w = alpha * self.w_interior / (h * h);
                for (row, &k) in self.interior.iter().enumerate() {
                    let rr = &r[row * n..(row + 1) * n];
                    acc(out, k, -2.0 * dim as f64 * w, rr);
                    for axis in 0..dim {
                        let s = self.grid.stride(axis);
                        acc(out, k + s, w, rr);
                        acc(out, k - s, w, rr);
                    }
                }
            }
        }
    }

    /// `block · v`.
    pub fn apply_block(&self, block: Block, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let mut r = vec![0.0; self.block_rows(block)];
        self.apply_block_into(block, v, &mut r);
        Ok(r)
    }

    /// `blockᵀ r`.
    pub fn apply_block_transpose(&self, block: Block, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.block_rows(block) {
            return Err(Error::ShapeMismatch(format!(
                "block {block} has {} rows, got {}",
                self.block_rows(block),
                r.len()
            )));
        }
        let mut out = vec![0.0; self.n_unknowns()];
        self.apply_block_t_acc(block, 1.0, r, &mut out);
        Ok(out)
    }

    /// Functional value from the blocks.
    pub fn functional(&self, u: &[f64]) -> Result<f64> {
        let data = self.data_vector();
        let mut total = 0.0;
        for block in self.blocks() {
            let r = self.apply_block(block, u)?;
            let sq: f64 = if block == self.data_block() {
                r.iter().zip(&data).map(|(a, f)| (a - f).powi(2)).sum()
            } else {
                r.iter().map(|a| a * a).sum()
            };
            total += self.block_weight(block) * sq;
        }
        Ok(total)
    }

    /// Functional value by direct summation over grid nodes, written out
    /// index by index without the block machinery. Reference implementation
    /// for checking the blocks.
    pub fn functional_direct(&self, u: &[f64]) -> Result<f64> {
        self.check_len(u)?;
        let nx = self.grid.nx();
        let n = self.n_modes();
        let h = self.grid.h();
        let two_d = self.grid.dim() == 2;
        let ny = if two_d { nx } else { 1 };
        let hd = if two_d { h * h } else { h };
        let hb = if two_d { h } else { 1.0 };
        let node = |i: usize, j: usize| if two_d { i * nx + j } else { i };
        let val = |i: usize, j: usize, m: usize| u[node(i, j) * n + m];
        let mass = self.coupling.mass();

        let mut pde = 0.0;
        let mut reg_grad = 0.0;
        let mut reg_lap = 0.0;
        let (jlo, jhi) = if two_d { (1, nx - 1) } else { (0, 1) };
        for i in 1..nx - 1 {
            for j in jlo..jhi {
                let k = node(i, j);
                let (a, damp) = (self.coupling.a_principal(k), self.coupling.damping(k));
                for m in 0..n {
                    let mut lap =
                        (val(i + 1, j, m) - 2.0 * val(i, j, m) + val(i - 1, j, m)) / (h * h);
                    let dx = (val(i + 1, j, m) - val(i - 1, j, m)) / (2.0 * h);
                    let mut drift = self.drift[0][k] * dx;
                    let mut dy = 0.0;
                    if two_d {
                        lap += (val(i, j + 1, m) - 2.0 * val(i, j, m) + val(i, j - 1, m)) / (h * h);
                        dy = (val(i, j + 1, m) - val(i, j - 1, m)) / (2.0 * h);
                        drift += self.drift[1][k] * dy;
                    }
                    let mut coupling = 0.0;
                    for nn in 0..n {
                        let s = a * mass.second[(m, nn)] + damp * mass.first[(m, nn)];
                        coupling += s * val(i, j, nn);
                    }
                    let res = lap + drift + self.potential[k] * val(i, j, m) - coupling;
                    pde += hd * res * res;
                    reg_grad += hd * (dx * dx + dy * dy);
                    reg_lap += hd * lap * lap;
                }
            }
        }

        // boundary sums: x-sides over all j, then y-sides over interior i
        let mut points: Vec<(usize, usize, char)> = Vec::new();
        for j in 0..ny {
            points.push((0, j, 'l'));
        }
        for j in 0..ny {
            points.push((nx - 1, j, 'r'));
        }
        if two_d {
            for i in 1..nx - 1 {
                points.push((i, 0, 'b'));
            }
            for i in 1..nx - 1 {
                points.push((i, nx - 1, 't'));
            }
        }
        let mut neumann = 0.0;
        let mut dirichlet = 0.0;
        for (bi, &(i, j, side)) in points.iter().enumerate() {
            for m in 0..n {
                let dn = match side {
                    'l' => -(-3.0 * val(0, j, m) + 4.0 * val(1, j, m) - val(2, j, m)) / (2.0 * h),
                    'r' => {
                        (3.0 * val(nx - 1, j, m) - 4.0 * val(nx - 2, j, m) + val(nx - 3, j, m))
                            / (2.0 * h)
                    }
                    'b' => -(-3.0 * val(i, 0, m) + 4.0 * val(i, 1, m) - val(i, 2, m)) / (2.0 * h),
                    _ => {
                        (3.0 * val(i, nx - 1, m) - 4.0 * val(i, nx - 2, m) + val(i, nx - 3, m))
                            / (2.0 * h)
                    }
                };
                let f = self.data[bi * n + m];
                match self.problem {
                    ProblemKind::Dirichlet => {
                        neumann += hb * (dn - f).powi(2);
                        dirichlet += hb * val(i, j, m).powi(2);
                    }
                    ProblemKind::Neumann => {
                        neumann += hb * dn * dn;
                        dirichlet += hb * (val(i, j, m) - f).powi(2);
                    }
                }
            }
        }
        let identity: f64 = hd * u.iter().map(|v| v * v).sum::<f64>();
        Ok(pde + neumann + dirichlet + self.epsilon * (identity + reg_grad + reg_lap))
    }

    /// `(data block)ᵀ f`, the right-hand side of the normal equations.
    pub fn normal_rhs(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_unknowns()];
        self.apply_block_t_acc(self.data_block(), 1.0, &self.data_vector(), &mut out);
        out
    }

    /// Matrix-free normal operator `Σ weight · blockᵀ block`.
    pub fn normal_operator(&self) -> NormalOperator<'_> {
        NormalOperator {
            system: self,
            scratch: Vec::new(),
        }
    }

    /// Visit every row of a block as `(row, entries)` with merged columns.
    pub fn for_each_row<F: FnMut(usize, &[(usize, f64)])>(&self, block: Block, mut f: F) {
        let n = self.n_modes();
        let h = self.grid.h();
        let dim = self.grid.dim();
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(n + 5);
        match block {
            Block::Pde => {
                let w = self.w_interior;
                for (ri, &k) in self.interior.iter().enumerate() {
                    let (center, nb) = self.operator_stencil(k);
                    for m in 0..n {
                        entries.clear();
                        for &(s, cp, cm) in nb.iter().take(dim) {
                            entries.push((self.flat.offset(k + s, m), w * cp));
                            entries.push((self.flat.offset(k - s, m), w * cm));
                        }
                        for nn in 0..n {
                            let mut v = -self.coupling.entry(k, m, nn);
                            if nn == m {
                                v += center;
                            }
                            entries.push((self.flat.offset(k, nn), w * v));
                        }
                        f(ri * n + m, &entries);
                    }
                }
            }
            Block::Neumann => {
                let w = self.w_boundary / (2.0 * h);
                for (ri, b) in self.boundary.iter().enumerate() {
                    let (n1, n2) = self.grid.inward_neighbors(b);
                    for m in 0..n {
                        entries.clear();
                        entries.push((self.flat.offset(b.node, m), 3.0 * w));
                        entries.push((self.flat.offset(n1, m), -4.0 * w));
                        entries.push((self.flat.offset(n2, m), w));
                        f(ri * n + m, &entries);
                    }
                }
            }
            Block::Dirichlet => {
                for (ri, b) in self.boundary.iter().enumerate() {
                    for m in 0..n {
                        f(
                            ri * n + m,
                            &[(self.flat.offset(b.node, m), self.w_boundary)],
                        );
                    }
                }
            }
            Block::RegIdentity => {
                for i in 0..self.n_unknowns() {
                    f(i, &[(i, self.w_interior)]);
                }
            }
            Block::RegGradient(axis) => {
                let w = self.w_interior / (2.0 * h);
                let s = self.grid.stride(axis);
                for (ri, &k) in self.interior.iter().enumerate() {
                    for m in 0..n {
                        f(
                            ri * n + m,
                            &[
                                (self.flat.offset(k + s, m), w),
                                (self.flat.offset(k - s, m), -w),
                            ],
                        );
                    }
                }
            }
            Block::RegLaplacian => {
                let w = self.w_interior / (h * h);
                for (ri, &k) in self.interior.iter().enumerate() {
                    for m in 0..n {
                        entries.clear();
                        entries.push((self.flat.offset(k, m), -2.0 * dim as f64 * w));
                        for axis in 0..dim {
                            let s = self.grid.stride(axis);
                            entries.push((self.flat.offset(k + s, m), w));
                            entries.push((self.flat.offset(k - s, m), w));
                        }
                        f(ri * n + m, &entries);
                    }
                }
            }
        }
    }

    /// Exact diagonal of the normal operator from the block sparsity.
    pub fn normal_diagonal(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.n_unknowns()];
        for block in self.blocks() {
            let weight = self.block_weight(block);
            self.for_each_row(block, |_, entries| {
                for &(c, v) in entries {
                    diag[c] += weight * v * v;
                }
            });
        }
        diag
    }

    /// Half-bandwidth of the normal matrix in the flat ordering.
    pub fn normal_bandwidth(&self) -> usize {
        let mut k = 0;
        for block in self.blocks() {
            self.for_each_row(block, |_, entries| {
                let lo = entries.iter().map(|e| e.0).min().unwrap_or(0);
                let hi = entries.iter().map(|e| e.0).max().unwrap_or(0);
                k = k.max(hi - lo);
            });
        }
        k
    }

    /// The normal matrix `Σ weight · blockᵀ block`, assembled in banded form.
    pub fn normal_band_matrix(&self) -> SymmetricBandMatrix {
        let mut band = SymmetricBandMatrix::new(self.n_unknowns(), self.normal_bandwidth());
        for block in self.blocks() {
            let weight = self.block_weight(block);
            self.for_each_row(block, |_, entries| {
                for &(i, vi) in entries {
                    for &(j, vj) in entries {
                        if j <= i {
                            band.add_lower(i, j, weight * vi * vj);
                        }
                    }
                }
            });
        }
        band
    }

    /// The `N × N` diagonal block of the normal matrix at every node
    /// (coupling of all modes at one node), row-major, in node order.
    pub fn normal_node_blocks(&self) -> Vec<f64> {
        let n = self.n_modes();
        let mut out = vec![0.0; self.n_unknowns() * n];
        for block in self.blocks() {
            let weight = self.block_weight(block);
            self.for_each_row(block, |_, entries| {
                for &(i, vi) in entries {
                    let node = i / n;
                    for &(j, vj) in entries {
                        if j / n == node {
                            out[node * n * n + (i % n) * n + j % n] += weight * vi * vj;
                        }
                    }
                }
            });
        }
        out
    }

    /// Number of stored entries in a block.
    pub fn block_nnz(&self, block: Block) -> usize {
        let mut count = 0;
        self.for_each_row(block, |_, e| count += e.len());
        count
    }

    /// Coordinate listing `block row col value` (0-based) of every block,
    /// followed by the data vector as `f row value`. Meant for small
    /// instances.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# block row col value")?;
        let mut err = Ok(());
        for block in self.blocks() {
            self.for_each_row(block, |row, entries| {
                for &(c, v) in entries {
                    if err.is_ok() {
                        err = writeln!(w, "{block} {row} {c} {v:e}");
                    }
                }
            });
        }
        err?;
        for (row, v) in self.data_vector().iter().enumerate() {
            writeln!(w, "f {row} {v:e}")?;
        }
        Ok(())
    }
}

/// `v ↦ Σ weight · blockᵀ block v`, with a reusable row buffer.
pub struct NormalOperator<'a> {
    system: &'a QrmSystem,
    scratch: Vec<f64>,
}

impl LinearOperator for NormalOperator<'_> {
    fn dim(&self) -> usize {
        self.system.n_unknowns()
    }

    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        let sys = self.system;
        y.iter_mut().for_each(|v| *v = 0.0);
        for block in sys.blocks() {
            let weight = sys.block_weight(block);
            match block {
                // diagonal blocks: apply the square directly
                Block::RegIdentity => {
                    let c = weight * sys.w_interior * sys.w_interior;
                    y.iter_mut().zip(x).for_each(|(o, a)| *o += c * a);
                }
                Block::Dirichlet => {
                    let c = weight * sys.w_boundary * sys.w_boundary;
                    let n = sys.n_modes();
                    for b in &sys.boundary {
                        let range = b.node * n..(b.node + 1) * n;
                        y[range.clone()]
                            .iter_mut()
                            .zip(&x[range])
                            .for_each(|(o, a)| *o += c * a);
                    }
                }
                _ => {
                    self.scratch.resize(sys.block_rows(block), 0.0);
                    sys.apply_block_into(block, x, &mut self.scratch);
                    sys.apply_block_t_acc(block, weight, &self.scratch, y);
                }
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        self.system.normal_diagonal()
    }

    fn diagonal_blocks(&self) -> Option<(usize, Vec<f64>)> {
        Some((self.system.n_modes(), self.system.normal_node_blocks()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, DenseMatrix};
    use crate::time_basis::TimeBasis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(dim: usize, nx: usize, n_modes: usize, problem: ProblemKind, seed: u64) -> QrmSystem {
        let grid = Grid::new(dim, 1.0, nx).unwrap();
        let medium = if dim == 2 {
            MediumCoefficients::cavity_2d(&grid).unwrap()
        } else {
            MediumCoefficients::interval_1d(&grid).unwrap()
        };
        let mass = TimeBasis::klibanov(n_modes, 2.0).unwrap().mass_matrices();
        let coupling = CouplingField::new(&medium, &mass);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let boundary = grid.boundary_nodes();
        let spectral = SpectralBoundaryData {
            problem,
            n_modes,
            nodes: boundary.iter().map(|b| b.node).collect(),
            values: (0..boundary.len() * n_modes)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        };
        assemble(&grid, &medium, &coupling, &spectral, 1e-3, problem).unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn dense_block(sys: &QrmSystem, block: Block) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(sys.block_rows(block), sys.n_unknowns());
        sys.for_each_row(block, |r, e| {
            for &(c, v) in e {
                m[(r, c)] += v;
            }
        });
        m
    }

    #[test]
    fn block_form_equals_direct_functional() {
        for dim in [1, 2] {
            for problem in [ProblemKind::Dirichlet, ProblemKind::Neumann] {
                for (nx, n_modes) in [(3, 1), (5, 2), (7, 3)] {
                    let sys = system(dim, nx, n_modes, problem, 1);
                    let u = random_vec(sys.n_unknowns(), 2);
                    let a = sys.functional(&u).unwrap();
                    let b = sys.functional_direct(&u).unwrap();
                    assert!(
                        (a - b).abs() <= 1e-10 * b.abs(),
                        "dim {dim} nx {nx} N {n_modes}: {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn functional_at_zero_is_data_norm() {
        let sys = system(2, 5, 2, ProblemKind::Dirichlet, 3);
        let f = sys.data_vector();
        let j = sys.functional(&vec![0.0; sys.n_unknowns()]).unwrap();
        assert_eq!(j, dot(&f, &f));
    }

    #[test]
    fn hand_computed_pde_row_on_three_by_three() {
        let grid = Grid::square(1.0, 3).unwrap();
        let medium = MediumCoefficients::unit(&grid);
        let mass = TimeBasis::klibanov(1, 2.0).unwrap().mass_matrices();
        let coupling = CouplingField::new(&medium, &mass);
        let spectral = SpectralBoundaryData {
            problem: ProblemKind::Dirichlet,
            n_modes: 1,
            nodes: grid.boundary_nodes().iter().map(|b| b.node).collect(),
            values: vec![0.0; 8],
        };
        let sys = assemble(
            &grid,
            &medium,
            &coupling,
            &spectral,
            1e-12,
            ProblemKind::Dirichlet,
        )
        .unwrap();
        let h = 1.0;
        let s11 = mass.second[(0, 0)];
        let row = dense_block(&sys, Block::Pde);
        assert_eq!(row.rows(), 1);
        for k in 0..9 {
            let want = match k {
                4 => h * (-4.0 / (h * h) - s11),
                1 | 3 | 5 | 7 => h * (1.0 / (h * h)),
                _ => 0.0,
            };
            assert!((row[(0, k)] - want).abs() < 1e-14, "column {k}");
        }
    }

    #[test]
    fn normal_operator_matches_dense_products() {
        let sys = system(2, 3, 1, ProblemKind::Dirichlet, 4);
        let mut dense = DenseMatrix::zeros(sys.n_unknowns(), sys.n_unknowns());
        for block in sys.blocks() {
            let b = dense_block(&sys, block);
            let bt = b.transpose();
            let w = sys.block_weight(block);
            for i in 0..dense.rows() {
                for j in 0..dense.cols() {
                    dense[(i, j)] += w * (0..b.rows()).map(|r| bt[(i, r)] * b[(r, j)]).sum::<f64>();
                }
            }
        }
        let mut op = sys.normal_operator();
        for seed in 0..5 {
            let v = random_vec(sys.n_unknowns(), seed);
            let mut mv = vec![0.0; v.len()];
            op.apply(&v, &mut mv);
            let want = dense.mul_vec(&v);
            let scale = want.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for (a, b) in mv.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12 * scale);
            }
        }
        let diag = sys.normal_diagonal();
        for i in 0..diag.len() {
            assert!((diag[i] - dense[(i, i)]).abs() <= 1e-12 * dense[(i, i)]);
        }
        // rhs = data-blockᵀ f
        let nb = dense_block(&sys, Block::Neumann);
        let want = nb.transpose().mul_vec(&sys.data_vector());
        for (a, b) in sys.normal_rhs().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn band_matrix_matches_operator() {
        for (dim, nx, n_modes, problem) in [
            (1, 7, 3, ProblemKind::Dirichlet),
            (2, 5, 2, ProblemKind::Neumann),
        ] {
            let sys = system(dim, nx, n_modes, problem, 8);
            let band = sys.normal_band_matrix();
            let stride = if dim == 2 { nx } else { 1 };
            assert_eq!(band.bandwidth(), 2 * stride * n_modes);
            let mut op = sys.normal_operator();
            let n = sys.n_unknowns();
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let mut col = vec![0.0; n];
                op.apply(&e, &mut col);
                for (i, v) in col.iter().enumerate() {
                    assert!(
                        (band.get(i, j) - v).abs() <= 1e-12 * col[j].abs(),
                        "({i}, {j})"
                    );
                }
            }
        }
    }

    #[test]
    fn node_blocks_match_band_matrix() {
        let sys = system(2, 5, 3, ProblemKind::Dirichlet, 9);
        let band = sys.normal_band_matrix();
        let blocks = sys.normal_node_blocks();
        let n = 3;
        for node in 0..25 {
            for a in 0..n {
                for b in 0..n {
                    let want = band.get(node * n + a, node * n + b);
                    assert!(
                        (blocks[node * n * n + a * n + b] - want).abs()
                            <= 1e-12 * want.abs().max(1.0)
                    );
                }
            }
        }
    }

    #[test]
    fn normal_operator_symmetric_positive_definite() {
        let sys = system(2, 6, 3, ProblemKind::Neumann, 5);
        let mut op = sys.normal_operator();
        let h2 = sys.grid().h().powi(2);
        for seed in 0..20 {
            let v = random_vec(sys.n_unknowns(), 100 + seed);
            let w = random_vec(sys.n_unknowns(), 200 + seed);
            let (mut mv, mut mw) = (vec![0.0; v.len()], vec![0.0; v.len()]);
            op.apply(&v, &mut mv);
            op.apply(&w, &mut mw);
            let (a, b) = (dot(&mv, &w), dot(&v, &mw));
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()));
            assert!(dot(&mv, &v) >= sys.epsilon() * h2 * dot(&v, &v));
        }
    }

    #[test]
    fn block_transposes_are_adjoint() {
        let sys = system(2, 5, 2, ProblemKind::Dirichlet, 6);
        for block in sys.blocks() {
            let v = random_vec(sys.n_unknowns(), 7);
            let r = random_vec(sys.block_rows(block), 8);
            let a = dot(&sys.apply_block(block, &v).unwrap(), &r);
            let b = dot(&v, &sys.apply_block_transpose(block, &r).unwrap());
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{block}");
        }
    }

    #[test]
    fn gradient_check() {
        let sys = system(2, 5, 2, ProblemKind::Dirichlet, 9);
        let u = random_vec(sys.n_unknowns(), 10);
        let mut mu = vec![0.0; u.len()];
        sys.normal_operator().apply(&u, &mut mu);
        let b = sys.normal_rhs();
        let step = 1e-4;
        for i in (0..u.len()).step_by(7) {
            let (mut up, mut um) = (u.clone(), u.clone());
            up[i] += step;
            um[i] -= step;
            let fd = (sys.functional(&up).unwrap() - sys.functional(&um).unwrap()) / (2.0 * step);
            let resid = mu[i] - b[i];
            assert!(
                (resid - 0.5 * fd).abs() <= 1e-5 * (0.5 * fd).abs().max(1e-3),
                "{i}: {resid} vs {}",
                0.5 * fd
            );
        }
    }

    #[test]
    fn row_counts_and_sparsity() {
        let sys = system(2, 7, 3, ProblemKind::Dirichlet, 11);
        assert_eq!(sys.block_rows(Block::Pde), 25 * 3);
        assert_eq!(sys.block_rows(Block::Neumann), 24 * 3);
        assert_eq!(sys.block_nnz(Block::Pde), 25 * 3 * (4 + 3));
        let mut max_row = 0;
        sys.for_each_row(Block::Pde, |_, e| max_row = max_row.max(e.len()));
        assert!(max_row <= 5 + 3 - 1);
        let mut buf = Vec::new();
        sys.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().any(|l| l.starts_with("L 0 ")));
        assert!(text.lines().any(|l| l.starts_with("f ")));
    }

    #[test]
    fn rejects_bad_inputs() {
        let grid = Grid::square(1.0, 4).unwrap();
        let medium = MediumCoefficients::unit(&grid);
        let mass = TimeBasis::klibanov(2, 2.0).unwrap().mass_matrices();
        let coupling = CouplingField::new(&medium, &mass);
        let spectral = SpectralBoundaryData {
            problem: ProblemKind::Dirichlet,
            n_modes: 2,
            nodes: grid.boundary_nodes().iter().map(|b| b.node).collect(),
            values: vec![0.0; 24],
        };
        assert!(assemble(
            &grid,
            &medium,
            &coupling,
            &spectral,
            0.0,
            ProblemKind::Dirichlet
        )
        .is_err());
        assert!(assemble(
            &grid,
            &medium,
            &coupling,
            &spectral,
            1e-3,
            ProblemKind::Neumann
        )
        .is_err());
        let mut short = spectral.clone();
        short.nodes.pop();
        assert!(assemble(
            &grid,
            &medium,
            &coupling,
            &short,
            1e-3,
            ProblemKind::Dirichlet
        )
        .is_err());
    }
}
