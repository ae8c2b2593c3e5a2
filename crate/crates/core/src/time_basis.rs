//! Orthonormal time bases on `[0, T]`.
//!
//! Two families are provided:
//!
//! * [`BasisKind::Klibanov`]: the Gram-Schmidt orthonormalization of
//!   `t^(n-1) exp(t - T/2)`. Every element is `p_n(t) exp(t - T/2)` with
//!   `deg p_n = n - 1`, so no element (after the first) has a derivative that
//!   vanishes identically, and the first-derivative mass matrix is unit upper
//!   triangular.
//! * [`BasisKind::Trigonometric`]: `1/sqrt(T)`, then `sqrt(2/T) cos(2 pi k t/T)`
//!   and `sqrt(2/T) sin(2 pi k t/T)` interleaved by frequency.
//!
//! The polynomial factors are stored as shifted-Legendre coefficients. A
//! monomial Gram matrix at 35 modes is numerically singular in double
//! precision; the Legendre Gram matrix under the weight `exp(2t - T)` is
//! well conditioned, and Gram-Schmidt over nested spans yields the same
//! functions as orthonormalizing the monomials directly (leading coefficients
//! are kept positive).

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{dot, DenseMatrix};

/// Maximum tolerated `max |<Psi_m, Psi_n> - delta_mn|` after construction.
pub const GRAM_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Klibanov,
    Trigonometric,
}

impl std::fmt::Display for BasisKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasisKind::Klibanov => f.write_str("klibanov"),
            BasisKind::Trigonometric => f.write_str("trigonometric"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Derivative {
    Value,
    First,
    Second,
}

impl Derivative {
    pub fn from_order(order: usize) -> Result<Self> {
        match order {
            0 => Ok(Derivative::Value),
            1 => Ok(Derivative::First),
            2 => Ok(Derivative::Second),
            _ => Err(Error::invalid(format!(
                "derivative order {order} not in 0..=2"
            ))),
        }
    }
}

/// Gauss-Legendre rule mapped to an interval.
#[derive(Clone, Debug)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// `order`-point Gauss-Legendre rule on `[a, b]`.
    pub fn gauss_legendre(order: usize, a: f64, b: f64) -> Self {
        let (x, w) = gauss_legendre_reference(order);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        Self {
            nodes: x.iter().map(|xi| mid + half * xi).collect(),
            weights: w.iter().map(|wi| half * wi).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Nodes and weights on `[-1, 1]`, Newton iteration from Chebyshev guesses.
fn gauss_legendre_reference(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Values, first and second derivatives (with respect to `x`) of
/// `P_0 .. P_{n-1}` at `x`.
fn legendre_table(n: usize, x: f64, p: &mut [f64], dp: &mut [f64], ddp: &mut [f64]) {
    if n == 0 {
        return;
    }
    p[0] = 1.0;
    dp[0] = 0.0;
    ddp[0] = 0.0;
    if n == 1 {
        return;
    }
    p[1] = x;
    dp[1] = 1.0;
    ddp[1] = 0.0;
    for k in 1..n - 1 {
        let kf = k as f64;
        p[k + 1] = ((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0);
        dp[k + 1] = dp[k - 1] + (2.0 * kf + 1.0) * p[k];
        ddp[k + 1] = ddp[k - 1] + (2.0 * kf + 1.0) * dp[k];
    }
}

/// Orthonormal basis of `L^2(0, T)` truncated to `n_modes` elements.
#[derive(Clone, Debug)]
pub struct TimeBasis {
    kind: BasisKind,
    n_modes: usize,
    t_final: f64,
    /// Column `n` holds the shifted-Legendre coefficients of `p_n`
    /// (Klibanov only).
    coeffs: Option<DenseMatrix>,
    quad: Quadrature,
}

impl TimeBasis {
    pub fn build(kind: BasisKind, n_modes: usize, t_final: f64, quad_order: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::invalid("basis needs at least one mode"));
        }
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::invalid(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        if quad_order < 2 * n_modes + 20 {
            return Err(Error::invalid(format!(
                "quadrature order {quad_order} below 2N + 20 = {}",
                2 * n_modes + 20
            )));
        }
        let quad = Quadrature::gauss_legendre(quad_order, 0.0, t_final);
        let mut basis = TimeBasis {
            kind,
            n_modes,
            t_final,
            coeffs: None,
            quad,
        };
        if kind == BasisKind::Klibanov {
            basis.coeffs = Some(basis.orthonormalize_klibanov());
        }
        let residual = basis.gram_residual();
        if !(residual <= GRAM_TOLERANCE) {
            return Err(Error::OrthogonalizationBreakdown {
                residual,
                tolerance: GRAM_TOLERANCE,
            });
        }
        Ok(basis)
    }

    /// Klibanov basis with the default quadrature order `2N + 40`.
    pub fn klibanov(n_modes: usize, t_final: f64) -> Result<Self> {
        Self::build(
            BasisKind::Klibanov,
            n_modes,
            t_final,
            default_quad_order(n_modes),
        )
    }

    pub fn trigonometric(n_modes: usize, t_final: f64) -> Result<Self> {
        Self::build(
            BasisKind::Trigonometric,
            n_modes,
            t_final,
            default_quad_order(n_modes),
        )
    }

    /// Either family with the default quadrature order.
    pub fn of_kind(kind: BasisKind, n_modes: usize, t_final: f64) -> Result<Self> {
        Self::build(kind, n_modes, t_final, default_quad_order(n_modes))
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quad
    }

    /// Shifted-Legendre coefficients of the polynomial factor of `Psi_{n+1}`.
    pub fn polynomial_coefficients(&self, n: usize) -> Option<Vec<f64>> {
        let c = self.coeffs.as_ref()?;
        Some((0..self.n_modes).map(|k| c[(k, n)]).collect())
    }

    /// Modified Gram-Schmidt, two passes, in the inner product
    /// `<f, g> = int_0^T f g exp(2t - T) dt` on polynomial factors.
    fn orthonormalize_klibanov(&self) -> DenseMatrix {
        let n = self.n_modes;
        let q = self.quad.len();
        let half = 0.5 * self.t_final;
        let mut legendre = vec![vec![0.0; n]; q];
        let (mut d1, mut d2) = (vec![0.0; n], vec![0.0; n]);
        let mut weight = vec![0.0; q];
        for (qi, (&t, &w)) in self.quad.nodes.iter().zip(&self.quad.weights).enumerate() {
            legendre_table(n, t / half - 1.0, &mut legendre[qi], &mut d1, &mut d2);
            weight[qi] = w * (2.0 * (t - half)).exp();
        }
        let inner = |a: &[f64], b: &[f64]| -> f64 {
            a.iter()
                .zip(b)
                .zip(&weight)
                .map(|((x, y), w)| x * y * w)
                .sum()
        };
        // coefficient vectors and their values at the quadrature nodes
        let mut coef: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(n);
        for k in 0..n {
            let mut c = vec![0.0; n];
            c[k] = 1.0;
            let mut v: Vec<f64> = legendre.iter().map(|row| row[k]).collect();
            for _pass in 0..2 {
                for j in 0..k {
                    let r = inner(&vals[j], &v);
                    for (ci, cj) in c.iter_mut().zip(&coef[j]) {
                        *ci -= r * cj;
                    }
                    for (vi, vj) in v.iter_mut().zip(&vals[j]) {
                        *vi -= r * vj;
                    }
                }
            }
            let norm = inner(&v, &v).sqrt();
            c.iter_mut().for_each(|x| *x /= norm);
            v.iter_mut().for_each(|x| *x /= norm);
            coef.push(c);
            vals.push(v);
        }
        DenseMatrix::from_fn(n, n, |k, m| coef[m][k])
    }

    /// Evaluate all `N` basis functions (or derivatives) at `t`.
    pub fn eval(&self, t: f64, order: Derivative) -> Result<Vec<f64>> {
        let slack = 1e-12 * self.t_final;
        if !(t >= -slack && t <= self.t_final + slack) {
            return Err(Error::TimeOutOfRange {
                t,
                t_final: self.t_final,
            });
        }
        let mut out = vec![0.0; self.n_modes];
        self.eval_into(t.clamp(0.0, self.t_final), order, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation into a caller buffer of length `N`.
    pub fn eval_into(&self, t: f64, order: Derivative, out: &mut [f64]) {
        match self.kind {
            BasisKind::Klibanov => self.eval_klibanov(t, order, out),
            BasisKind::Trigonometric => self.eval_trig(t, order, out),
        }
    }

    fn eval_klibanov(&self, t: f64, order: Derivative, out: &mut [f64]) {
        let n = self.n_modes;
        let coeffs = self.coeffs.as_ref().expect("klibanov coefficients");
        let half = 0.5 * self.t_final;
        let scale = 1.0 / half;
        let (mut p, mut dp, mut ddp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        legendre_table(n, t / half - 1.0, &mut p, &mut dp, &mut ddp);
        let e = (t - half).exp();
        for (m, o) in out.iter_mut().enumerate() {
            let (mut v, mut d, mut dd) = (0.0, 0.0, 0.0);
            for k in 0..=m {
                let c = coeffs[(k, m)];
                v += c * p[k];
                d += c * dp[k];
                dd += c * ddp[k];
            }
            d *= scale;
            dd *= scale * scale;
            // (p e)' = (p' + p) e, (p e)'' = (p'' + 2p' + p) e
            *o = e * match order {
                Derivative::Value => v,
                Derivative::First => d + v,
                Derivative::Second => dd + 2.0 * d + v,
            };
        }
    }

    fn eval_trig(&self, t: f64, order: Derivative, out: &mut [f64]) {
        let period = self.t_final;
        let amp = (2.0 / period).sqrt();
        for (idx, o) in out.iter_mut().enumerate() {
            if idx == 0 {
                *o = match order {
                    Derivative::Value => 1.0 / period.sqrt(),
                    _ => 0.0,
                };
                continue;
            }
            let k = idx.div_ceil(2) as f64;
            let omega = 2.0 * PI * k / period;
            let (s, c) = (omega * t).sin_cos();
            let is_cos = idx % 2 == 1;
            *o = amp
                * match (order, is_cos) {
                    (Derivative::Value, true) => c,
                    (Derivative::Value, false) => s,
                    (Derivative::First, true) => -omega * s,
                    (Derivative::First, false) => omega * c,
                    (Derivative::Second, true) => -omega * omega * c,
                    (Derivative::Second, false) => -omega * omega * s,
                };
        }
    }

    /// Values of all basis functions at every quadrature node, `[node][mode]`.
    fn table(&self, order: Derivative) -> Vec<Vec<f64>> {
        self.quad
            .nodes
            .iter()
            .map(|&t| {
                let mut row = vec![0.0; self.n_modes];
                self.eval_into(t, order, &mut row);
                row
            })
            .collect()
    }

    /// `G[m][n] = int Psi_m'' Psi_n` style integral of two tables.
    fn integrate_products(&self, left: &[Vec<f64>], right: &[Vec<f64>]) -> DenseMatrix {
        let n = self.n_modes;
        let mut out = DenseMatrix::zeros(n, n);
        for ((l, r), &w) in left.iter().zip(right).zip(&self.quad.weights) {
            for m in 0..n {
                let lw = l[m] * w;
                for k in 0..n {
                    out[(m, k)] += lw * r[k];
                }
            }
        }
        out
    }

    /// Gram matrix `<Psi_m, Psi_n>` under the stored quadrature.
    pub fn gram(&self) -> DenseMatrix {
        let values = self.table(Derivative::Value);
        self.integrate_products(&values, &values)
    }

    pub fn gram_residual(&self) -> f64 {
        self.gram()
            .max_abs_diff(&DenseMatrix::identity(self.n_modes))
    }

    pub fn mass_matrices(&self) -> MassMatrices {
        let values = self.table(Derivative::Value);
        let first = self.table(Derivative::First);
        let second = self.table(Derivative::Second);
        let mut psi0 = vec![0.0; self.n_modes];
        self.eval_into(0.0, Derivative::Value, &mut psi0);
        MassMatrices {
            second: self.integrate_products(&values, &second),
            first: self.integrate_products(&values, &first),
            psi0,
        }
    }

    /// Dump `t, Psi_1 .. Psi_N` (or a derivative) on `n_points` uniform times.
    pub fn write_csv<W: Write>(&self, mut w: W, n_points: usize, order: Derivative) -> Result<()> {
        if n_points < 2 {
            return Err(Error::invalid("need at least two sample times"));
        }
        write!(w, "t")?;
        for m in 1..=self.n_modes {
            write!(w, ",psi{m}")?;
        }
        writeln!(w)?;
        let mut row = vec![0.0; self.n_modes];
        for i in 0..n_points {
            let t = self.t_final * i as f64 / (n_points - 1) as f64;
            self.eval_into(t, order, &mut row);
            write!(w, "{t}")?;
            for v in &row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn default_quad_order(n_modes: usize) -> usize {
    2 * n_modes + 40
}

/// Time-integral mass matrices of a basis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MassMatrices {
    /// `A[m][n] = int_0^T Psi_n''(t) Psi_m(t) dt`
    pub second: DenseMatrix,
    /// `B[m][n] = int_0^T Psi_n'(t) Psi_m(t) dt`
    pub first: DenseMatrix,
    /// `Psi_n(0)`
    pub psi0: Vec<f64>,
}

impl MassMatrices {
    pub fn n_modes(&self) -> usize {
        self.psi0.len()
    }
}

/// How sampled time series are integrated against the basis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionRule {
    /// Composite Simpson on the product `s(t) Psi_n(t)` (trapezoid on the last
    /// interval when the interval count is odd).
    Simpson,
    /// Same panels as Simpson, but only the samples are interpolated
    /// (piecewise quadratic; linear on an odd trailing interval) and the
    /// interpolant is integrated exactly against the analytic `Psi_n`.
    #[default]
    Product,
}

/// Precomputed weights `W[n][k]` with `int_0^T s Psi_n dt ~ sum_k W[n][k] s(t_k)`.
#[derive(Clone, Debug)]
pub struct TimeProjector {
    n_modes: usize,
    n_samples: usize,
    t_final: f64,
    weights: Vec<f64>,
}

impl TimeProjector {
    pub fn new(basis: &TimeBasis, grid: &TimeGrid, rule: ProjectionRule) -> Result<Self> {
        let nt = grid.len();
        if nt < 3 {
            return Err(Error::invalid(format!(
                "need at least 3 time samples, got {nt}"
            )));
        }
        if (grid.t_final() - basis.t_final()).abs() > 1e-12 * basis.t_final() {
            return Err(Error::ShapeMismatch(format!(
                "time grid ends at {} but basis is on [0, {}]",
                grid.t_final(),
                basis.t_final()
            )));
        }
        let n = basis.n_modes();
        let ht = grid.step();
        let mut weights = vec![0.0; n * nt];
        let intervals = nt - 1;
        let paired = intervals - intervals % 2;
        let mut psi = vec![0.0; n];
        match rule {
            ProjectionRule::Simpson => {
                let mut w = vec![0.0; nt];
                for k in (0..paired).step_by(2) {
                    w[k] += ht / 3.0;
                    w[k + 1] += 4.0 * ht / 3.0;
                    w[k + 2] += ht / 3.0;
                }
                if paired < intervals {
                    w[nt - 2] += ht / 2.0;
                    w[nt - 1] += ht / 2.0;
                }
                for (k, &wk) in w.iter().enumerate() {
                    basis.eval_into(grid.time(k), Derivative::Value, &mut psi);
                    for m in 0..n {
                        weights[m * nt + k] += wk * psi[m];
                    }
                }
            }
            ProjectionRule::Product => {
                let local = Quadrature::gauss_legendre(16, 0.0, 1.0);
                let mut panels: Vec<Vec<usize>> = (0..paired)
                    .step_by(2)
                    .map(|k| vec![k, k + 1, k + 2])
                    .collect();
                if paired < intervals {
                    panels.push(vec![nt - 2, nt - 1]);
                }
                for panel in panels {
                    let a = grid.time(panel[0]);
                    let b = grid.time(*panel.last().unwrap());
                    let nodes: Vec<f64> = panel.iter().map(|&k| grid.time(k)).collect();
                    for (&x, &wq) in local.nodes.iter().zip(&local.weights) {
                        let t = a + (b - a) * x;
                        let wt = wq * (b - a);
                        basis.eval_into(t, Derivative::Value, &mut psi);
                        for (ii, &k) in panel.iter().enumerate() {
                            let mut ell = 1.0;
                            for (jj, &tj) in nodes.iter().enumerate() {
                                if jj != ii {
                                    ell *= (t - tj) / (nodes[ii] - tj);
                                }
                            }
                            let f = wt * ell;
                            for m in 0..n {
                                weights[m * nt + k] += f * psi[m];
                            }
                        }
                    }
                }
            }
        }
        Ok(Self {
            n_modes: n,
            n_samples: nt,
            t_final: grid.t_final(),
            weights,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn project(&self, samples: &[f64]) -> Result<Vec<f64>> {
        if samples.len() != self.n_samples {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a {}-point time grid",
                samples.len(),
                self.n_samples
            )));
        }
        Ok((0..self.n_modes)
            .map(|m| {
                dot(
                    &self.weights[m * self.n_samples..(m + 1) * self.n_samples],
                    samples,
                )
            })
            .collect())
    }
}

/// `int_0^T s(t) Psi_n(t) dt` for samples on a uniform grid, composite Simpson.
pub fn project_time_series(samples: &[f64], basis: &TimeBasis) -> Result<Vec<f64>> {
    if samples.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 time samples, got {}",
            samples.len()
        )));
    }
    let grid = TimeGrid::new(basis.t_final(), samples.len())?;
    TimeProjector::new(basis, &grid, ProjectionRule::Simpson)?.project(samples)
}
