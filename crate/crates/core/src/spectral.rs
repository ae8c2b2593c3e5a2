//! Mode-space reduction: boundary data `𝔣_m` and the coupling matrices
//! `s(x) = a(x) A + d(x) B`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{CauchyData, MediumCoefficients, ProblemKind};
use crate::linalg::DenseMatrix;
use crate::time_basis::{MassMatrices, ProjectionRule, TimeBasis, TimeProjector};

/// Time coefficients `𝔣_m(x) = ∫ f(x, t) Ψ_m(t) dt` of a boundary trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralBoundaryData {
    pub problem: ProblemKind,
    pub n_modes: usize,
    /// Boundary node ids, in grid boundary order.
    pub nodes: Vec<usize>,
    /// `values[b * n_modes + m]`.
    pub values: Vec<f64>,
}

impl SpectralBoundaryData {
    pub fn n_boundary(&self) -> usize {
        self.nodes.len()
    }

    pub fn at(&self, b: usize) -> &[f64] {
        &self.values[b * self.n_modes..(b + 1) * self.n_modes]
    }

    /// `Σ_m Σ_b w |𝔣_m(b) - 𝔤_m(b)|²` with a uniform boundary weight `w`.
    pub fn squared_distance(&self, other: &Self, weight: f64) -> Result<f64> {
        if self.values.len() != other.values.len() {
            return Err(Error::ShapeMismatch(
                "spectral data of different sizes".into(),
            ));
        }
        Ok(weight
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>())
    }

    /// `boundary_index,m,value` rows with 1-based `m`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "boundary_index,m,value")?;
        for b in 0..self.n_boundary() {
            for (m, v) in self.at(b).iter().enumerate() {
                writeln!(w, "{b},{},{v}", m + 1)?;
            }
        }
        Ok(())
    }
}

/// Project every boundary trace onto the basis with the default rule.
pub fn spectral_boundary(data: &CauchyData, basis: &TimeBasis) -> Result<SpectralBoundaryData> {
    spectral_boundary_with(data, basis, ProjectionRule::default())
}

pub fn spectral_boundary_with(
    data: &CauchyData,
    basis: &TimeBasis,
    rule: ProjectionRule,
) -> Result<SpectralBoundaryData> {
    if (data.t_final - basis.t_final()).abs() > 1e-12 * basis.t_final() {
        return Err(Error::ShapeMismatch(format!(
            "data cover [0, {}] but the basis lives on [0, {}]",
            data.t_final,
            basis.t_final()
        )));
    }
    let projector = TimeProjector::new(basis, &data.time_grid()?, rule)?;
    let mut values = Vec::with_capacity(data.n_boundary() * basis.n_modes());
    for b in 0..data.n_boundary() {
        values.extend(projector.project(data.series(b))?);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spectral boundary data"));
    }
    Ok(SpectralBoundaryData {
        problem: data.problem,
        n_modes: basis.n_modes(),
        nodes: data.nodes.clone(),
        values,
    })
}

/// `s(x) = a(x) A + d(x) B`, kept factored rather than stored per node.
#[derive(Clone, Debug)]
pub struct CouplingField {
    mass: MassMatrices,
    a_principal: Vec<f64>,
    damping: Vec<f64>,
}

impl CouplingField {
    pub fn new(medium: &MediumCoefficients, mass: &MassMatrices) -> Self {
        Self {
            mass: mass.clone(),
            a_principal: medium.a_principal.clone(),
            damping: medium.damping.clone(),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.mass.n_modes()
    }

    pub fn n_nodes(&self) -> usize {
        self.a_principal.len()
    }

    pub fn mass(&self) -> &MassMatrices {
        &self.mass
    }

    pub fn a_principal(&self, node: usize) -> f64 {
        self.a_principal[node]
    }

    pub fn damping(&self, node: usize) -> f64 {
        self.damping[node]
    }

    /// The matrix `s(x)` at one node.
    pub fn at(&self, node: usize) -> DenseMatrix {
        self.mass
            .second
            .combine(self.a_principal[node], &self.mass.first, self.damping[node])
    }

    /// `s_{mn}(x)`, zero-based indices.
    #[inline]
    pub fn entry(&self, node: usize, m: usize, n: usize) -> f64 {
        self.a_principal[node] * self.mass.second[(m, n)]
            + self.damping[node] * self.mass.first[(m, n)]
    }

    /// `out = s(x) v`.
    #[inline]
    pub fn apply(&self, node: usize, v: &[f64], out: &mut [f64]) {
        let (a, d) = (self.a_principal[node], self.damping[node]);
        let n = self.n_modes();
        let sa = self.mass.second.as_slice();
        let sb = self.mass.first.as_slice();
        for (m, o) in out.iter_mut().enumerate() {
            let ra = &sa[m * n..(m + 1) * n];
            let rb = &sb[m * n..(m + 1) * n];
            let mut acc_a = 0.0;
            let mut acc_b = 0.0;
            for ((x, y), z) in ra.iter().zip(rb).zip(v) {
                acc_a += x * z;
                acc_b += y * z;
            }
            *o = a * acc_a + d * acc_b;
        }
    }

    /// `out += alpha s(x)ᵀ r`.
    #[inline]
    pub fn apply_t_acc(&self, node: usize, alpha: f64, r: &[f64], out: &mut [f64]) {
        self.mass
            .second
            .mul_t_vec_acc(alpha * self.a_principal[node], r, out);
        if self.damping[node] != 0.0 {
            self.mass
                .first
                .mul_t_vec_acc(alpha * self.damping[node], r, out);
        }
    }
}
