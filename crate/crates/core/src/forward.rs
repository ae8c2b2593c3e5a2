//! Synthetic data: finite-difference solution of
//!
//! ```text
//! a(x) u_tt + d(x) u_t = Δu + b(x)·∇u + c(x) u (+ F),   u(·,0) = p,  u_t(·,0) = 0
//! ```
//!
//! with homogeneous Dirichlet or Neumann conditions, extraction of the
//! complementary boundary trace, and multiplicative noise.

use std::io::Write;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundaryNode, Grid, TimeGrid};
use crate::linalg::BandMatrix;

/// Which homogeneous condition holds on the boundary, and therefore which
/// trace is measured.
///
/// * `Dirichlet` (Problem 1): `u = 0` is imposed, `∂_ν u` is measured.
/// * `Neumann` (Problem 2): `∂_ν u = 0` is imposed, `u` is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProblemKind {
    #[serde(rename = "dirichlet_bc")]
    Dirichlet,
    #[serde(rename = "neumann_bc")]
    Neumann,
}

impl ProblemKind {
    /// `1` for the Dirichlet problem, `2` for the Neumann problem.
    pub fn number(self) -> u8 {
        match self {
            ProblemKind::Dirichlet => 1,
            ProblemKind::Neumann => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(ProblemKind::Dirichlet),
            2 => Ok(ProblemKind::Neumann),
            _ => Err(Error::invalid(format!("problem must be 1 or 2, got {n}"))),
        }
    }
}

/// Coefficients of the hyperbolic operator sampled at grid nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediumCoefficients {
    /// Principal coefficient multiplying `u_tt`; at least 1 everywhere.
    pub a_principal: Vec<f64>,
    /// Coefficient of `u_t`.
    pub damping: Vec<f64>,
    /// Drift components; `drift[axis][node]`, one entry per dimension.
    pub drift: Vec<Vec<f64>>,
    /// Zeroth-order coefficient.
    pub potential: Vec<f64>,
}

/// The lower bound on the principal coefficient, with rounding slack.
const A_PRINCIPAL_FLOOR: f64 = 1.0 - 1e-12;

impl MediumCoefficients {
    pub fn new(
        grid: &Grid,
        a_principal: Vec<f64>,
        damping: Vec<f64>,
        drift: Vec<Vec<f64>>,
        potential: Vec<f64>,
    ) -> Result<Self> {
        let n = grid.n_nodes();
        let lens_ok = a_principal.len() == n
            && damping.len() == n
            && potential.len() == n
            && drift.len() == grid.dim()
            && drift.iter().all(|d| d.len() == n);
        if !lens_ok {
            return Err(Error::ShapeMismatch(format!(
                "medium coefficients must have {n} values per field and {} drift components",
                grid.dim()
            )));
        }
        if let Some(k) = a_principal.iter().position(|&a| !(a >= A_PRINCIPAL_FLOOR)) {
            return Err(Error::invalid(format!(
                "principal coefficient {} < 1 at node {k}",
                a_principal[k]
            )));
        }
        let all = a_principal
            .iter()
            .chain(&damping)
            .chain(&potential)
            .chain(drift.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("medium coefficients"));
        }
        Ok(Self {
            a_principal,
            damping,
            drift,
            potential,
        })
    }

    /// `a = 1`, no damping, drift or potential: the plain wave equation.
    pub fn unit(grid: &Grid) -> Self {
        let n = grid.n_nodes();
        Self {
            a_principal: vec![1.0; n],
            damping: vec![0.0; n],
            drift: vec![vec![0.0; n]; grid.dim()],
            potential: vec![0.0; n],
        }
    }

    /// The 2D test medium with `r² = x² + y²`:
    /// `a = 1 + sin²(r²)`, damping `0.5 (cos r² + sin r²)`, drift `(2, 1)`,
    /// potential `cos r²`.
    pub fn cavity_2d(grid: &Grid) -> Result<Self> {
        if grid.dim() != 2 {
            return Err(Error::invalid("the 2D test medium needs a 2D grid"));
        }
        let r2 = |x: f64, y: f64| x * x + y * y;
        Self::new(
            grid,
            grid.sample(|x, y| 1.0 + r2(x, y).sin().powi(2)),
            grid.sample(|x, y| 0.5 * (r2(x, y).cos() + r2(x, y).sin())),
            vec![grid.sample(|_, _| 2.0), grid.sample(|_, _| 1.0)],
            grid.sample(|x, y| r2(x, y).cos()),
        )
    }

    /// The 1D test medium: `a = 1 + sin²(x²)`, drift `sin(πx)`,
    /// potential `cos(2πx)`, no damping.
    pub fn interval_1d(grid: &Grid) -> Result<Self> {
        use std::f64::consts::PI;
        if grid.dim() != 1 {
            return Err(Error::invalid("the 1D test medium needs a 1D grid"));
        }
        Self::new(
            grid,
            grid.sample(|x, _| 1.0 + (x * x).sin().powi(2)),
            grid.sample(|_, _| 0.0),
            vec![grid.sample(|x, _| (PI * x).sin())],
            grid.sample(|x, _| (2.0 * PI * x).cos()),
        )
    }

    pub fn n_nodes(&self) -> usize {
        self.a_principal.len()
    }

    /// `L_h u = Δ_h u + b·∇_h u + c u` at an interior node.
    #[inline]
    pub fn apply_at(&self, grid: &Grid, u: &[f64], node: usize) -> f64 {
        let mut v = grid.laplacian_at(u, node) + self.potential[node] * u[node];
        for (axis, b) in self.drift.iter().enumerate() {
            v += b[node] * grid.gradient_at(u, node, axis);
        }
        v
    }

    /// `L_h u` on interior nodes, zero on the boundary.
    pub fn apply(&self, grid: &Grid, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for k in grid.interior_nodes() {
            out[k] = self.apply_at(grid, u, k);
        }
        out
    }
}

/// Time discretization of the spatial operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    /// `L_h` taken entirely at the new level; first order in time with
    /// strong numerical dissipation.
    #[default]
    Implicit,
    /// `L_h (¼u^{k+1} + ½u^k + ¼u^{k-1})`; second order in time, no
    /// numerical dissipation.
    AverageAcceleration,
}

impl TimeScheme {
    fn weights(self) -> [f64; 3] {
        match self {
            TimeScheme::Implicit => [1.0, 0.0, 0.0],
            TimeScheme::AverageAcceleration => [0.25, 0.5, 0.25],
        }
    }
}

/// Solution values over all grid nodes and time steps.
#[derive(Clone, Debug)]
pub struct WaveField {
    grid: Grid,
    time: TimeGrid,
    values: Vec<f64>,
}

impl WaveField {
    pub fn from_values(grid: Grid, time: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() * time.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} nodes x {} steps",
                values.len(),
                grid.n_nodes(),
                time.len()
            )));
        }
        Ok(Self { grid, time, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time
    }

    /// Field at time step `k`.
    pub fn step(&self, k: usize) -> &[f64] {
        let n = self.grid.n_nodes();
        &self.values[k * n..(k + 1) * n]
    }

    /// Time series at one node.
    pub fn series(&self, node: usize) -> Vec<f64> {
        let n = self.grid.n_nodes();
        (0..self.time.len())
            .map(|k| self.values[k * n + node])
            .collect()
    }

    /// Keep every second node in space and time (inverse of a 2x refinement).
    pub fn restrict(&self, coarse: &Grid, coarse_time: &TimeGrid) -> Result<WaveField> {
        let fine_nx = 2 * (coarse.nx() - 1) + 1;
        let fine_nt = 2 * (coarse_time.len() - 1) + 1;
        if self.grid.nx() != fine_nx
            || self.time.len() != fine_nt
            || self.grid.dim() != coarse.dim()
        {
            return Err(Error::ShapeMismatch(
                "field is not a 2x refinement of the requested grids".into(),
            ));
        }
        let mut values = Vec::with_capacity(coarse.n_nodes() * coarse_time.len());
        for k in 0..coarse_time.len() {
            let fine = self.step(2 * k);
            for node in 0..coarse.n_nodes() {
                let [i, j] = coarse.indices(node);
                values.push(fine[self.grid.node(2 * i, 2 * j)]);
            }
        }
        WaveField::from_values(coarse.clone(), coarse_time.clone(), values)
    }
}

/// Forcing term `F(x, y, t)`, used for manufactured solutions.
pub type Forcing<'a> = &'a dyn Fn(f64, f64, f64) -> f64;

/// Solve the forward problem with the default (implicit) scheme.
pub fn solve_forward(
    medium: &MediumCoefficients,
    source: &[f64],
    grid: &Grid,
    time: &TimeGrid,
    bc: ProblemKind,
) -> Result<WaveField> {
    solve_forward_with(medium, source, grid, time, bc, TimeScheme::Implicit, None)
}

/// Three-level scheme
///
/// ```text
/// a (u^{k+1} - 2u^k + u^{k-1})/ht² + d (u^{k+1} - u^{k-1})/(2ht)
///     = L_h(θ₀u^{k+1} + θ₁u^k + θ₂u^{k-1}) + θ₀F^{k+1} + θ₁F^k + θ₂F^{k-1}
/// ```
///
/// started from `u¹ = p + ht²/2 · (L_h p + F⁰)/a`. Each step solves one
/// banded system; Dirichlet rows are pinned to zero and Neumann rows are the
/// one-sided normal-derivative stencil set to zero.
pub fn solve_forward_with(
    medium: &MediumCoefficients,
    source: &[f64],
    grid: &Grid,
    time: &TimeGrid,
    bc: ProblemKind,
    scheme: TimeScheme,
    forcing: Option<Forcing<'_>>,
) -> Result<WaveField> {
    let n = grid.n_nodes();
    if source.len() != n || medium.n_nodes() != n {
        return Err(Error::ShapeMismatch(format!(
            "source has {} values, medium {}, grid {n}",
            source.len(),
            medium.n_nodes()
        )));
    }
    let scale = source.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let boundary = grid.boundary_nodes();
    for b in &boundary {
        if source[b.node].abs() > 1e-10 * scale {
            return Err(Error::SourceNotVanishing {
                node: b.node,
                max_abs: source[b.node].abs(),
            });
        }
    }

    let ht = time.step();
    let h = grid.h();
    let theta = scheme.weights();
    let bandwidth = 2 * grid.stride(0);
    let mut m = BandMatrix::new(n, bandwidth, bandwidth);
    for k in grid.interior_nodes() {
        let a = medium.a_principal[k];
        let d = medium.damping[k];
        let mut diag = a / (ht * ht) + d / (2.0 * ht) - theta[0] * medium.potential[k];
        for axis in 0..grid.dim() {
            let s = grid.stride(axis);
            let b = medium.drift[axis][k];
            diag += theta[0] * 2.0 / (h * h);
            m.add(k, k + s, -theta[0] * (1.0 / (h * h) + b / (2.0 * h)));
            m.add(k, k - s, -theta[0] * (1.0 / (h * h) - b / (2.0 * h)));
        }
        m.add(k, k, diag);
    }
    for b in &boundary {
        match bc {
            ProblemKind::Dirichlet => m.add(b.node, b.node, 1.0),
            ProblemKind::Neumann => {
                let (n1, n2) = grid.inward_neighbors(b);
                m.add(b.node, b.node, 3.0);
                m.add(b.node, n1, -4.0);
                m.add(b.node, n2, 1.0);
            }
        }
    }
    let lu = m.factor()?;

    let positions: Vec<(f64, f64)> = (0..n).map(|k| grid.position(k)).collect();
    let force_at = |t: f64, out: &mut Vec<f64>| {
        out.clear();
        match forcing {
            Some(f) => out.extend(positions.iter().map(|&(x, y)| f(x, y, t))),
            None => out.resize(n, 0.0),
        }
    };

    let nt = time.len();
    let mut values = Vec::with_capacity(n * nt);
    values.extend_from_slice(source);

    let mut f_prev = Vec::with_capacity(n);
    force_at(0.0, &mut f_prev);
    let lp = medium.apply(grid, source);
    let mut u1: Vec<f64> = (0..n)
        .map(|k| source[k] + 0.5 * ht * ht * (lp[k] + f_prev[k]) / medium.a_principal[k])
        .collect();
    impose_boundary(grid, &boundary, bc, &mut u1);
    values.extend_from_slice(&u1);

    let mut f_cur = Vec::with_capacity(n);
    let mut f_next = Vec::with_capacity(n);
    force_at(time.time(1), &mut f_cur);
    let mut rhs = vec![0.0; n];
    let interior = grid.interior_nodes();
    for step in 1..nt - 1 {
        force_at(time.time(step + 1), &mut f_next);
        let (prev, cur) = {
            let s = &values[(step - 1) * n..(step + 1) * n];
            s.split_at(n)
        };
        rhs.iter_mut().for_each(|v| *v = 0.0);
        for &k in &interior {
            let a = medium.a_principal[k];
            let d = medium.damping[k];
            let mut v = a * (2.0 * cur[k] - prev[k]) / (ht * ht) + d * prev[k] / (2.0 * ht);
            if theta[1] != 0.0 {
                v += theta[1] * medium.apply_at(grid, cur, k)
                    + theta[2] * medium.apply_at(grid, prev, k);
            }
            v += theta[0] * f_next[k] + theta[1] * f_cur[k] + theta[2] * f_prev[k];
            rhs[k] = v;
        }
        lu.solve_in_place(&mut rhs);
        if bc == ProblemKind::Dirichlet {
            // pivoting can leave round-off in pinned rows
            boundary.iter().for_each(|b| rhs[b.node] = 0.0);
        }
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forward time step"));
        }
        values.extend_from_slice(&rhs);
        std::mem::swap(&mut f_prev, &mut f_cur);
        std::mem::swap(&mut f_cur, &mut f_next);
    }
    debug!("forward solve: {n} nodes, {nt} steps, {bc:?}, {scheme:?}");
    WaveField::from_values(grid.clone(), time.clone(), values)
}

/// Make a start-up level satisfy the boundary condition exactly.
fn impose_boundary(grid: &Grid, boundary: &[BoundaryNode], bc: ProblemKind, u: &mut [f64]) {
    match bc {
        ProblemKind::Dirichlet => boundary.iter().for_each(|b| u[b.node] = 0.0),
        ProblemKind::Neumann => {
            // y-sides first: the corner stencils (owned by the x-sides) run
            // along the y-boundary rows.
            for b in boundary
                .iter()
                .filter(|b| b.axis == 1)
                .chain(boundary.iter().filter(|b| b.axis == 0))
            {
                let (n1, n2) = grid.inward_neighbors(b);
                u[b.node] = (4.0 * u[n1] - u[n2]) / 3.0;
            }
        }
    }
}

/// Measured boundary trace over time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CauchyData {
    pub problem: ProblemKind,
    pub t_final: f64,
    pub n_times: usize,
    /// Node ids of the boundary nodes, in grid boundary order.
    pub nodes: Vec<usize>,
    /// `trace[b * n_times + k]`: value at boundary node `b`, time step `k`.
    pub trace: Vec<f64>,
    pub noise_level: f64,
    pub seed: Option<u64>,
}

impl CauchyData {
    pub fn n_boundary(&self) -> usize {
        self.nodes.len()
    }

    pub fn series(&self, b: usize) -> &[f64] {
        &self.trace[b * self.n_times..(b + 1) * self.n_times]
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_final, self.n_times)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    /// `node,x,y,t,value` rows, boundary-major.
    pub fn write_csv<W: Write>(&self, mut w: W, grid: &Grid) -> Result<()> {
        let time = self.time_grid()?;
        writeln!(w, "node,x,y,t,value")?;
        for (b, &node) in self.nodes.iter().enumerate() {
            let (x, y) = grid.position(node);
            for (k, v) in self.series(b).iter().enumerate() {
                writeln!(w, "{node},{x},{y},{},{v}", time.time(k))?;
            }
        }
        Ok(())
    }
}

/// The measured trace: `∂_ν u` for the Dirichlet problem, `u` for the
/// Neumann problem.
pub fn extract_cauchy(field: &WaveField, problem: ProblemKind) -> CauchyData {
    let grid = field.grid();
    let boundary = grid.boundary_nodes();
    let nt = field.time_grid().len();
    let mut trace = vec![0.0; boundary.len() * nt];
    for k in 0..nt {
        let u = field.step(k);
        for (bi, b) in boundary.iter().enumerate() {
            trace[bi * nt + k] = match problem {
                ProblemKind::Dirichlet => grid.normal_derivative_at(u, b),
                ProblemKind::Neumann => u[b.node],
            };
        }
    }
    CauchyData {
        problem,
        t_final: field.time_grid().t_final(),
        n_times: nt,
        nodes: boundary.iter().map(|b| b.node).collect(),
        trace,
        noise_level: 0.0,
        seed: None,
    }
}

/// `f^δ = f (1 + δ ξ)` with `ξ ~ U[-1, 1]` i.i.d. per boundary node and time
/// step, drawn in storage order from a ChaCha8 stream seeded with `seed`.
pub fn add_noise(data: &CauchyData, delta: f64, seed: u64) -> Result<CauchyData> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!(
            "noise level must be nonnegative, got {delta}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trace = data
        .trace
        .iter()
        .map(|&f| f * (1.0 + delta * rng.gen_range(-1.0..=1.0)))
        .collect();
    Ok(CauchyData {
        trace,
        noise_level: delta,
        seed: Some(seed),
        ..data.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn mms_error(nx: usize, nt: usize, scheme: TimeScheme) -> f64 {
        let grid = Grid::square(1.0, nx).unwrap();
        let time = TimeGrid::new(1.0, nt).unwrap();
        let medium = MediumCoefficients::cavity_2d(&grid).unwrap();
        let exact = |x: f64, y: f64, t: f64| (PI * t).cos() * (PI * x).sin() * (PI * y).sin();
        // F = a u_tt + d u_t - Δu - b·∇u - c u for the manufactured solution
        let forcing = |x: f64, y: f64, t: f64| {
            let r2 = x * x + y * y;
            let (a, d, c) = (
                1.0 + r2.sin().powi(2),
                0.5 * (r2.cos() + r2.sin()),
                r2.cos(),
            );
            let (sx, cx, sy, cy) = (
                (PI * x).sin(),
                (PI * x).cos(),
                (PI * y).sin(),
                (PI * y).cos(),
            );
            let (st, ct) = ((PI * t).sin(), (PI * t).cos());
            let u = ct * sx * sy;
            let utt = -PI * PI * u;
            let ut = -PI * st * sx * sy;
            let lap = -2.0 * PI * PI * u;
            let grad = 2.0 * PI * ct * cx * sy + PI * ct * sx * cy;
            a * utt + d * ut - lap - grad - c * u
        };
        let p = grid.sample(|x, y| exact(x, y, 0.0));
        let field = solve_forward_with(
            &medium,
            &p,
            &grid,
            &time,
            ProblemKind::Dirichlet,
            scheme,
            Some(&forcing),
        )
        .unwrap();
        let mut err = 0.0f64;
        for k in 0..time.len() {
            let t = time.time(k);
            for (node, v) in field.step(k).iter().enumerate() {
                let (x, y) = grid.position(node);
                err = err.max((v - exact(x, y, t)).abs());
            }
        }
        err
    }

    #[test]
    fn zero_source_stays_zero() {
        let grid = Grid::square(1.0, 9).unwrap();
        let time = TimeGrid::new(1.0, 11).unwrap();
        let medium = MediumCoefficients::cavity_2d(&grid).unwrap();
        for bc in [ProblemKind::Dirichlet, ProblemKind::Neumann] {
            let f = solve_forward(&medium, &vec![0.0; 81], &grid, &time, bc).unwrap();
            assert!(f.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn non_vanishing_source_is_rejected() {
        let grid = Grid::square(1.0, 5).unwrap();
        let time = TimeGrid::new(1.0, 5).unwrap();
        let medium = MediumCoefficients::unit(&grid);
        let r = solve_forward(
            &medium,
            &vec![1.0; 25],
            &grid,
            &time,
            ProblemKind::Dirichlet,
        );
        assert!(matches!(r, Err(Error::SourceNotVanishing { .. })));
    }

    #[test]
    fn principal_coefficient_below_one_is_rejected() {
        let grid = Grid::interval(1.0, 5).unwrap();
        let r = MediumCoefficients::new(
            &grid,
            vec![0.5; 5],
            vec![0.0; 5],
            vec![vec![0.0; 5]],
            vec![0.0; 5],
        );
        assert!(r.is_err());
    }

    #[test]
    fn boundary_conditions_hold_at_every_step() {
        let grid = Grid::square(1.0, 15).unwrap();
        let time = TimeGrid::new(1.0, 21).unwrap();
        let medium = MediumCoefficients::cavity_2d(&grid).unwrap();
        let p = grid.sample(|x, y| {
            (-20.0 * ((x - 0.3).powi(2) + y * y)).exp() * (1.0 - x * x) * (1.0 - y * y)
        });
        let dir = solve_forward(&medium, &p, &grid, &time, ProblemKind::Dirichlet).unwrap();
        let neu = solve_forward(&medium, &p, &grid, &time, ProblemKind::Neumann).unwrap();
        for k in 0..time.len() {
            for b in grid.boundary_nodes() {
                assert_eq!(dir.step(k)[b.node], 0.0);
                if k > 0 {
                    let r = grid.normal_derivative_at(neu.step(k), &b);
                    assert!(r.abs() < 1e-12, "step {k} node {} residual {r}", b.node);
                }
            }
        }
    }

    #[test]
    fn manufactured_solution_spatial_order() {
        // ht ∝ hx² isolates the spatial error of the first-order-in-time scheme
        let e1 = mms_error(11, 26, TimeScheme::Implicit);
        let e2 = mms_error(21, 101, TimeScheme::Implicit);
        let order = (e1 / e2).log2();
        assert!(order > 1.8, "order {order} ({e1} -> {e2})");
        // the average-acceleration scheme is second order in both, ht ∝ hx
        let n1 = mms_error(11, 11, TimeScheme::AverageAcceleration);
        let n2 = mms_error(21, 21, TimeScheme::AverageAcceleration);
        assert!((n1 / n2).log2() > 1.8, "{n1} -> {n2}");
    }

    #[test]
    fn extract_cauchy_oracles() {
        let grid = Grid::square(1.0, 7).unwrap();
        let time = TimeGrid::new(1.0, 3).unwrap();
        let frozen = grid.sample(|x, _| x);
        let mut values = Vec::new();
        for _ in 0..3 {
            values.extend_from_slice(&frozen);
        }
        let field = WaveField::from_values(grid.clone(), time.clone(), values).unwrap();
        let data = extract_cauchy(&field, ProblemKind::Dirichlet);
        for (bi, b) in grid.boundary_nodes().iter().enumerate() {
            let want = match (b.axis, b.side) {
                (0, crate::grid::Side::Low) => -1.0,
                (0, crate::grid::Side::High) => 1.0,
                _ => 0.0,
            };
            assert!(data.series(bi).iter().all(|v| (v - want).abs() < 1e-12));
        }
        let zero = WaveField::from_values(grid.clone(), time, vec![0.0; 147]).unwrap();
        assert!(extract_cauchy(&zero, ProblemKind::Dirichlet)
            .trace
            .iter()
            .all(|&v| v == 0.0));
        assert!(extract_cauchy(&zero, ProblemKind::Neumann)
            .trace
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn noise_contract() {
        let data = CauchyData {
            problem: ProblemKind::Dirichlet,
            t_final: 1.0,
            n_times: 4,
            nodes: vec![0, 1],
            trace: vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0, -1.5, 2.0],
            noise_level: 0.0,
            seed: None,
        };
        assert_eq!(add_noise(&data, 0.0, 1).unwrap().trace, data.trace);
        let a = add_noise(&data, 0.3, 42).unwrap();
        let b = add_noise(&data, 0.3, 42).unwrap();
        assert_eq!(a, b);
        for (n, c) in a.trace.iter().zip(&data.trace) {
            assert!((n - c).abs() <= 0.3 * c.abs() + 1e-15);
        }
        assert_ne!(add_noise(&data, 0.3, 43).unwrap().trace, a.trace);
        assert!(add_noise(&data, -0.1, 0).is_err());
    }

    #[test]
    fn restriction_picks_even_nodes() {
        let fine = Grid::interval(1.0, 5).unwrap();
        let coarse = Grid::interval(1.0, 3).unwrap();
        let values: Vec<f64> = (0..25).map(|v| v as f64).collect();
        let field = WaveField::from_values(fine, TimeGrid::new(1.0, 5).unwrap(), values).unwrap();
        let r = field
            .restrict(&coarse, &TimeGrid::new(1.0, 3).unwrap())
            .unwrap();
        assert_eq!(r.step(1), &[10.0, 12.0, 14.0]);
    }
}
