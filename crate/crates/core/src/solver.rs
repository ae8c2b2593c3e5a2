//! Preconditioned conjugate gradient for symmetric positive-definite
//! operators (point or block Jacobi), and a banded Cholesky alternative for
//! systems small enough to factor.

use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, DenseMatrix, SymmetricBandMatrix};

/// A square operator that can be applied and knows its own diagonal.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// `y = A x`; `y` is overwritten.
    fn apply(&mut self, x: &[f64], y: &mut [f64]);

    fn diagonal(&self) -> Vec<f64>;

    /// Natural diagonal blocks as `(size, blocks)`: consecutive
    /// `size × size` row-major blocks covering the diagonal. `None` if the
    /// operator has no block structure.
    fn diagonal_blocks(&self) -> Option<(usize, Vec<f64>)> {
        None
    }
}

impl LinearOperator for DenseMatrix {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        self.mul_vec_into(x, y);
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.rows()).map(|i| self[(i, i)]).collect()
    }
}

/// Preconditioner of the conjugate gradient iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    /// Inverse of the diagonal.
    #[default]
    Jacobi,
    /// Exact inverse of the operator's natural diagonal blocks (for the
    /// normal equations: all modes at one node).
    BlockJacobi,
}

/// A factored preconditioner, `z = P⁻¹ r`.
enum Factored {
    Diagonal(Vec<f64>),
    Blocks { size: usize, cholesky: Vec<f64> },
}

impl Factored {
    fn build<O: LinearOperator>(op: &O, kind: Preconditioner) -> Result<Self> {
        match kind {
            Preconditioner::Jacobi => Ok(Factored::Diagonal(
                op.diagonal()
                    .into_iter()
                    .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
                    .collect(),
            )),
            Preconditioner::BlockJacobi => {
                let (k, mut blocks) = op.diagonal_blocks().ok_or_else(|| {
                    Error::invalid("block Jacobi needs an operator with diagonal blocks")
                })?;
                for block in blocks.chunks_mut(k * k) {
                    cholesky_in_place(block, k)?;
                }
                Ok(Factored::Blocks {
                    size: k,
                    cholesky: blocks,
                })
            }
        }
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Factored::Diagonal(inv) => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(inv) {
                    *zi = ri * di;
                }
            }
            Factored::Blocks { size, cholesky } => {
                let k = *size;
                for ((l, rb), zb) in cholesky.chunks(k * k).zip(r.chunks(k)).zip(z.chunks_mut(k)) {
                    zb.copy_from_slice(rb);
                    for i in 0..k {
                        let s: f64 = (0..i).map(|j| l[i * k + j] * zb[j]).sum();
                        zb[i] = (zb[i] - s) / l[i * k + i];
                    }
                    for i in (0..k).rev() {
                        let s: f64 = (i + 1..k).map(|j| l[j * k + i] * zb[j]).sum();
                        zb[i] = (zb[i] - s) / l[i * k + i];
                    }
                }
            }
        }
    }
}

/// Lower Cholesky factor of a small row-major SPD block, in place.
fn cholesky_in_place(a: &mut [f64], k: usize) -> Result<()> {
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = s / d;
        }
    }
    Ok(())
}

/// How the normal equations are solved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Matrix-free Jacobi-preconditioned conjugate gradient.
    #[default]
    Cg,
    /// Banded Cholesky factorization of the assembled normal matrix.
    Direct,
}

/// Largest band storage the direct method will allocate.
pub const DIRECT_MEMORY_LIMIT_BYTES: usize = 2 << 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    #[serde(default)]
    pub method: SolveMethod,
    #[serde(default)]
    pub preconditioner: Preconditioner,
    /// Stop once `‖b - A x‖ / ‖b‖ ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the relative residual of every iteration in the report.
    #[serde(default)]
    pub record_history: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            method: SolveMethod::Cg,
            preconditioner: Preconditioner::Jacobi,
            tol: 1e-10,
            max_iter: 20_000,
            record_history: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative residual of the recursively updated residual vector.
    pub relative_residual: f64,
    pub wall_time: f64,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub residual_history: Vec<f64>,
}

/// Band storage in bytes for an `n × n` matrix of half-bandwidth `k`.
pub fn band_storage_bytes(n: usize, k: usize) -> usize {
    n.saturating_mul(k + 1)
        .saturating_mul(std::mem::size_of::<f64>())
}

/// Solve `A x = b` by banded Cholesky. `op` applies the same matrix and is
/// used only to report the true relative residual; `converged` means it is
/// within `opts.tol`.
pub fn solve_banded<O: LinearOperator>(
    matrix: SymmetricBandMatrix,
    op: &mut O,
    b: &[f64],
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = matrix.dim();
    if b.len() != n || op.dim() != n {
        return Err(Error::ShapeMismatch(format!(
            "rhs has {} entries, matrix {n}, operator {}",
            b.len(),
            op.dim()
        )));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("right-hand side"));
    }
    let start = Instant::now();
    let mut x = b.to_vec();
    matrix.factor()?.solve_in_place(&mut x);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("direct solution"));
    }
    let mut r = vec![0.0; n];
    op.apply(&x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let b_norm = norm2(b);
    let rel = if b_norm == 0.0 {
        0.0
    } else {
        norm2(&r) / b_norm
    };
    let wall_time = start.elapsed().as_secs_f64();
    info!("banded cholesky: n = {n}, relative residual {rel:e}, {wall_time:.1} s");
    Ok((
        x,
        SolveReport {
            iterations: 0,
            relative_residual: rel,
            wall_time,
            converged: rel <= opts.tol,
            residual_history: Vec::new(),
        },
    ))
}

/// Solve `A x = b` from `x = 0`.
pub fn solve<O: LinearOperator>(
    op: &mut O,
    b: &[f64],
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    solve_with_monitor(op, b, opts, |_, _, _| {})
}

/// As [`solve`], calling `monitor(iteration, x, relative_residual)` after
/// every update of the iterate.
pub fn solve_with_monitor<O, F>(
    op: &mut O,
    b: &[f64],
    opts: &SolveOptions,
    mut monitor: F,
) -> Result<(Vec<f64>, SolveReport)>
where
    O: LinearOperator,
    F: FnMut(usize, &[f64], f64),
{
    let n = op.dim();
    if b.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "rhs has {} entries, operator {n}",
            b.len()
        )));
    }
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return Err(Error::invalid(format!(
            "tolerance must lie in (0, 1), got {}",
            opts.tol
        )));
    }
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("right-hand side"));
    }
    let start = Instant::now();
    let precond = Factored::build(op, opts.preconditioner)?;

    let mut x = vec![0.0; n];
    let b_norm = norm2(b);
    let mut history = Vec::new();
    if b_norm == 0.0 {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                relative_residual: 0.0,
                wall_time: start.elapsed().as_secs_f64(),
                converged: true,
                residual_history: history,
            },
        ));
    }
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        op.apply(&p, &mut q);
        let curvature = dot(&p, &q);
        if !curvature.is_finite() {
            return Err(Error::NonFinite("operator application"));
        }
        if curvature <= 0.0 {
            return Err(Error::Breakdown {
                iteration: iterations,
                curvature,
            });
        }
        let alpha = rz / curvature;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        rel = norm2(&r) / b_norm;
        if opts.record_history {
            history.push(rel);
        }
        monitor(iterations, &x, rel);
        if rel <= opts.tol {
            converged = true;
            break;
        }
        precond.apply(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
        if iterations % 1000 == 0 {
            debug!("pcg iteration {iterations}: relative residual {rel:e}");
        }
    }
    let wall_time = start.elapsed().as_secs_f64();
    info!("pcg: {iterations} iterations, relative residual {rel:e}, converged {converged}, {wall_time:.1} s");
    Ok((
        x,
        SolveReport {
            iterations,
            relative_residual: rel,
            wall_time,
            converged,
            residual_history: history,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cholesky_solve;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let gt = g.transpose();
        let mut m = DenseMatrix::from_fn(n, n, |i, j| (0..n).map(|k| gt[(i, k)] * g[(k, j)]).sum());
        for i in 0..n {
            m[(i, i)] += n as f64 * 0.1;
        }
        m
    }

    #[test]
    fn identity_in_one_iteration() {
        let mut m = DenseMatrix::identity(10);
        let b: Vec<f64> = (0..10).map(|i| i as f64 - 3.0).collect();
        let (x, rep) = solve(&mut m, &b, &SolveOptions::default()).unwrap();
        assert_eq!(x, b);
        assert!(rep.converged && rep.iterations <= 2);
    }

    #[test]
    fn matches_cholesky_on_random_spd() {
        let mut m = random_spd(50, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (x, rep) = solve(
            &mut m,
            &b,
            &SolveOptions {
                tol: 1e-13,
                ..Default::default()
            },
        )
        .unwrap();
        let direct = cholesky_solve(&m, &b).unwrap();
        assert!(rep.converged);
        for (a, d) in x.iter().zip(&direct) {
            assert!((a - d).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let mut m = random_spd(8, 1);
        let (x, rep) = solve(&mut m, &[0.0; 8], &SolveOptions::default()).unwrap();
        assert!(x.iter().all(|&v| v == 0.0) && rep.converged && rep.iterations == 0);
    }

    #[test]
    fn energy_decreases_monotonically() {
        let m = random_spd(40, 9);
        let b: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let energy = |x: &[f64]| 0.5 * dot(x, &m.mul_vec(x)) - dot(&b, x);
        let mut values = Vec::new();
        let mut op = m.clone();
        solve_with_monitor(
            &mut op,
            &b,
            &SolveOptions {
                tol: 1e-12,
                ..Default::default()
            },
            |_, x, _| values.push(energy(x)),
        )
        .unwrap();
        for w in values.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs());
        }
    }

    #[test]
    fn indefinite_operator_breaks_down() {
        let mut m = DenseMatrix::identity(3);
        m[(1, 1)] = -1.0;
        let r = solve(&mut m, &[0.0, 1.0, 0.0], &SolveOptions::default());
        assert!(matches!(r, Err(Error::Breakdown { .. })));
    }

    #[test]
    fn non_finite_is_reported() {
        let mut m = DenseMatrix::identity(2);
        m[(0, 0)] = f64::NAN;
        assert!(matches!(
            solve(&mut m, &[1.0, 1.0], &SolveOptions::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn unconverged_report_at_max_iter() {
        let mut m = random_spd(30, 2);
        let b = vec![1.0; 30];
        let opts = SolveOptions {
            tol: 1e-14,
            max_iter: 3,
            record_history: true,
            ..Default::default()
        };
        let (_, rep) = solve(&mut m, &b, &opts).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 3);
        assert_eq!(rep.residual_history.len(), 3);
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"converged\":false"));
    }

    #[test]
    fn banded_solve_matches_cg() {
        let n = 30;
        let mut band = SymmetricBandMatrix::new(n, 2);
        let mut dense = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for (j, v) in [
                (i, 6.0),
                (i.wrapping_sub(1), -1.5),
                (i.wrapping_sub(2), 0.5),
            ] {
                if j < n {
                    band.add_lower(i, j, v);
                    dense[(i, j)] = v;
                    dense[(j, i)] = v;
                }
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let opts = SolveOptions {
            tol: 1e-13,
            ..Default::default()
        };
        let (xd, rep) = solve_banded(band, &mut dense.clone(), &b, &opts).unwrap();
        let (xc, _) = solve(&mut dense, &b, &opts).unwrap();
        assert!(rep.converged && rep.relative_residual < 1e-13);
        for (a, c) in xd.iter().zip(&xc) {
            assert!((a - c).abs() < 1e-10);
        }
        assert_eq!(band_storage_bytes(10, 3), 320);
    }

    struct Blocked<'a> {
        matrix: &'a mut DenseMatrix,
        size: usize,
    }

    impl LinearOperator for Blocked<'_> {
        fn dim(&self) -> usize {
            self.matrix.dim()
        }

        fn apply(&mut self, x: &[f64], y: &mut [f64]) {
            self.matrix.apply(x, y)
        }

        fn diagonal(&self) -> Vec<f64> {
            self.matrix.diagonal()
        }

        fn diagonal_blocks(&self) -> Option<(usize, Vec<f64>)> {
            let k = self.size;
            let m = &*self.matrix;
            let blocks = (0..m.rows() / k)
                .flat_map(|b| (0..k * k).map(move |e| m[(b * k + e / k, b * k + e % k)]))
                .collect();
            Some((k, blocks))
        }
    }

    #[test]
    fn block_jacobi_matches_cholesky_and_needs_blocks() {
        let mut m = random_spd(48, 21);
        let b: Vec<f64> = (0..48).map(|i| (i as f64 * 0.7).cos()).collect();
        let direct = cholesky_solve(&m, &b).unwrap();
        let opts = SolveOptions {
            tol: 1e-13,
            preconditioner: Preconditioner::BlockJacobi,
            ..Default::default()
        };
        let (x, rep) = solve(
            &mut Blocked {
                matrix: &mut m,
                size: 6,
            },
            &b,
            &opts,
        )
        .unwrap();
        assert!(rep.converged);
        for (a, d) in x.iter().zip(&direct) {
            assert!((a - d).abs() < 1e-8);
        }
        // a single block covering everything is an exact preconditioner
        let (_, rep) = solve(
            &mut Blocked {
                matrix: &mut m,
                size: 48,
            },
            &b,
            &opts,
        )
        .unwrap();
        assert!(rep.iterations <= 2);
        assert!(matches!(
            solve(&mut m, &b, &opts),
            Err(Error::InvalidArgument(_))
        ));
    }
}
