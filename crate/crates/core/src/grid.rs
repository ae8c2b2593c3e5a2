//! Uniform grids on `(-R, R)^d` (`d = 1, 2`) and `[0, T]`, finite-difference
//! stencils, and the flattened mode-field index.
//!
//! Nodes of a 2D grid are numbered `k = i * nx + j` where `i` indexes `x` and
//! `j` indexes `y`. A 1D grid numbers its nodes by `i` alone.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which end of an axis a boundary node sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Low,
    High,
}

/// A boundary node together with the side that owns it.
///
/// Corners belong to the `x` sides; the `y` sides hold only nodes with an
/// interior `x` index, so every boundary node appears exactly once.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryNode {
    pub node: usize,
    pub axis: usize,
    pub side: Side,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    nx: usize,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, nx: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::invalid(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        if nx < 3 {
            return Err(Error::invalid(format!(
                "need at least 3 nodes per axis, got {nx}"
            )));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::invalid(format!(
                "half-width must be positive, got {half_width}"
            )));
        }
        Ok(Self {
            dim,
            half_width,
            nx,
        })
    }

    pub fn square(half_width: f64, nx: usize) -> Result<Self> {
        Self::new(2, half_width, nx)
    }

    pub fn interval(half_width: f64, nx: usize) -> Result<Self> {
        Self::new(1, half_width, nx)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / (self.nx - 1) as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    /// Coordinate of index `i` along any axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.h()
    }

    /// Axis indices of a node (`[i, 0]` in 1D).
    pub fn indices(&self, node: usize) -> [usize; 2] {
        match self.dim {
            1 => [node, 0],
            _ => [node / self.nx, node % self.nx],
        }
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        match self.dim {
            1 => i,
            _ => i * self.nx + j,
        }
    }

    /// Physical position of a node (`y = 0` in 1D).
    pub fn position(&self, node: usize) -> (f64, f64) {
        let [i, j] = self.indices(node);
        match self.dim {
            1 => (self.coord(i), 0.0),
            _ => (self.coord(i), self.coord(j)),
        }
    }

    /// Node offset of a unit step along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        match (self.dim, axis) {
            (2, 0) => self.nx,
            _ => 1,
        }
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let [i, j] = self.indices(node);
        let last = self.nx - 1;
        i == 0 || i == last || (self.dim == 2 && (j == 0 || j == last))
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&k| !self.is_boundary(k))
            .collect()
    }

    /// Boundary nodes in the order: low-x, high-x, low-y, high-y.
    pub fn boundary_nodes(&self) -> Vec<BoundaryNode> {
        let last = self.nx - 1;
        if self.dim == 1 {
            return vec![
                BoundaryNode {
                    node: 0,
                    axis: 0,
                    side: Side::Low,
                },
                BoundaryNode {
                    node: last,
                    axis: 0,
                    side: Side::High,
                },
            ];
        }
        let mut out = Vec::with_capacity(4 * last);
        for (i, side) in [(0, Side::Low), (last, Side::High)] {
            for j in 0..self.nx {
                out.push(BoundaryNode {
                    node: self.node(i, j),
                    axis: 0,
                    side,
                });
            }
        }
        for (j, side) in [(0, Side::Low), (last, Side::High)] {
            for i in 1..last {
                out.push(BoundaryNode {
                    node: self.node(i, j),
                    axis: 1,
                    side,
                });
            }
        }
        out
    }

    /// Sample `f(x, y)` at every node (`y = 0` in 1D).
    pub fn sample<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.n_nodes())
            .map(|k| {
                let (x, y) = self.position(k);
                f(x, y)
            })
            .collect()
    }

    fn check_field(&self, field: &[f64]) -> Result<()> {
        if field.len() != self.n_nodes() {
            return Err(Error::ShapeMismatch(format!(
                "field has {} values, grid has {} nodes",
                field.len(),
                self.n_nodes()
            )));
        }
        Ok(())
    }

    /// Discrete Laplacian at an interior node.
    #[inline]
    pub fn laplacian_at(&self, field: &[f64], node: usize) -> f64 {
        let h2 = self.h() * self.h();
        let mut acc = 0.0;
        for axis in 0..self.dim {
            let s = self.stride(axis);
            acc += field[node + s] + field[node - s] - 2.0 * field[node];
        }
        acc / h2
    }

    /// Central difference along `axis` at an interior node.
    #[inline]
    pub fn gradient_at(&self, field: &[f64], node: usize, axis: usize) -> f64 {
        let s = self.stride(axis);
        (field[node + s] - field[node - s]) / (2.0 * self.h())
    }

    /// Outward normal derivative at a boundary node, second-order one-sided.
    #[inline]
    pub fn normal_derivative_at(&self, field: &[f64], b: &BoundaryNode) -> f64 {
        let (n1, n2) = self.inward_neighbors(b);
        (3.0 * field[b.node] - 4.0 * field[n1] + field[n2]) / (2.0 * self.h())
    }

    /// The two nodes one and two steps inward from a boundary node.
    pub fn inward_neighbors(&self, b: &BoundaryNode) -> (usize, usize) {
        let s = self.stride(b.axis);
        match b.side {
            Side::Low => (b.node + s, b.node + 2 * s),
            Side::High => (b.node - s, b.node - 2 * s),
        }
    }

    /// 5-point (3-point in 1D) Laplacian on interior nodes, in
    /// [`Grid::interior_nodes`] order.
    pub fn laplacian(&self, field: &[f64]) -> Result<Vec<f64>> {
        self.check_field(field)?;
        Ok(self
            .interior_nodes()
            .into_iter()
            .map(|k| self.laplacian_at(field, k))
            .collect())
    }

    /// Central-difference gradient on interior nodes; one vector per node
    /// with `dim` components.
    pub fn gradient(&self, field: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_field(field)?;
        Ok(self
            .interior_nodes()
            .into_iter()
            .map(|k| {
                (0..self.dim)
                    .map(|a| self.gradient_at(field, k, a))
                    .collect()
            })
            .collect())
    }

    /// Outward normal derivative in [`Grid::boundary_nodes`] order.
    pub fn normal_derivative(&self, field: &[f64]) -> Result<Vec<f64>> {
        self.check_field(field)?;
        Ok(self
            .boundary_nodes()
            .iter()
            .map(|b| self.normal_derivative_at(field, b))
            .collect())
    }

    /// `x,y,value` (or `x,value` in 1D) rows in node order.
    pub fn write_field_csv<W: Write>(&self, mut w: W, field: &[f64]) -> Result<()> {
        self.check_field(field)?;
        if self.dim == 1 {
            writeln!(w, "x,value")?;
        } else {
            writeln!(w, "x,y,value")?;
        }
        for (k, v) in field.iter().enumerate() {
            let (x, y) = self.position(k);
            if self.dim == 1 {
                writeln!(w, "{x},{v}")?;
            } else {
                writeln!(w, "{x},{y},{v}")?;
            }
        }
        Ok(())
    }
}

/// Uniform partition of `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_final: f64,
    nt: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, nt: usize) -> Result<Self> {
        if nt < 3 {
            return Err(Error::invalid(format!(
                "need at least 3 time nodes, got {nt}"
            )));
        }
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::invalid(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        Ok(Self { t_final, nt })
    }

    pub fn len(&self) -> usize {
        self.nt
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn step(&self) -> f64 {
        self.t_final / (self.nt - 1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k + 1 == self.nt {
            self.t_final
        } else {
            k as f64 * self.step()
        }
    }
}

/// Flattened index of mode fields: node-major, mode-minor.
///
/// In 1-based terms, `flat = (i-1) N nx + (j-1) N + m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlatIndexMap {
    dim: usize,
    nx: usize,
    n_modes: usize,
}

impl FlatIndexMap {
    pub fn new(grid: &Grid, n_modes: usize) -> Self {
        Self {
            dim: grid.dim(),
            nx: grid.nx(),
            n_modes,
        }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_nodes(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    pub fn len(&self) -> usize {
        self.n_nodes() * self.n_modes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Zero-based offset of mode `m` (zero-based) at node `node`.
    #[inline]
    pub fn offset(&self, node: usize, m: usize) -> usize {
        node * self.n_modes + m
    }

    /// 1-based `(i, j, m)` to 1-based flat index.
    pub fn flatten(&self, i: usize, j: usize, m: usize) -> Result<usize> {
        let jmax = if self.dim == 1 { 1 } else { self.nx };
        if i == 0 || i > self.nx || j == 0 || j > jmax || m == 0 || m > self.n_modes {
            return Err(Error::IndexOutOfRange(format!(
                "(i, j, m) = ({i}, {j}, {m}) outside [1, {}] x [1, {jmax}] x [1, {}]",
                self.nx, self.n_modes
            )));
        }
        Ok((i - 1) * self.n_modes * jmax + (j - 1) * self.n_modes + m)
    }

    /// 1-based flat index to 1-based `(i, j, m)`.
    pub fn unflatten(&self, flat: usize) -> Result<(usize, usize, usize)> {
        if flat == 0 || flat > self.len() {
            return Err(Error::IndexOutOfRange(format!(
                "flat index {flat} outside [1, {}]",
                self.len()
            )));
        }
        let jmax = if self.dim == 1 { 1 } else { self.nx };
        let z = flat - 1;
        let m = z % self.n_modes;
        let node = z / self.n_modes;
        Ok((node / jmax + 1, node % jmax + 1, m + 1))
    }
}
