//! From mode fields to the recovered source, error metrics, and the
//! truncation (cutoff) study.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::WaveField;
use crate::grid::{FlatIndexMap, Grid};
use crate::time_basis::{BasisKind, ProjectionRule, TimeBasis, TimeProjector};

/// Mode fields and the source they imply.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub n_modes: usize,
    /// Flattened mode fields, node-major.
    pub modes: Vec<f64>,
    /// `p(x) = Σ_n u_n(x) Ψ_n(0)`.
    pub p_comp: Vec<f64>,
}

impl Reconstruction {
    /// Mode field `u_m` (zero-based `m`) over all nodes.
    pub fn mode_field(&self, m: usize) -> Vec<f64> {
        self.modes
            .iter()
            .skip(m)
            .step_by(self.n_modes)
            .copied()
            .collect()
    }
}

pub fn reconstruct_source(u: &[f64], flat: &FlatIndexMap, psi0: &[f64]) -> Result<Reconstruction> {
    if u.len() != flat.len() || psi0.len() != flat.n_modes() {
        return Err(Error::ShapeMismatch(format!(
            "{} unknowns and {} basis values for a map of {} nodes x {} modes",
            u.len(),
            psi0.len(),
            flat.n_nodes(),
            flat.n_modes()
        )));
    }
    let n = flat.n_modes();
    let p_comp = u
        .chunks_exact(n)
        .map(|modes| modes.iter().zip(psi0).map(|(a, b)| a * b).sum())
        .collect();
    Ok(Reconstruction {
        n_modes: n,
        modes: u.to_vec(),
        p_comp,
    })
}

/// A labelled region of the true source with its nominal value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    pub label: String,
    pub value: f64,
    /// Node mask, already dilated.
    pub mask: Vec<bool>,
}

impl Inclusion {
    /// Mask from an indicator sampled at the nodes, grown by one grid cell in
    /// every direction (diagonals included).
    pub fn from_indicator<F: Fn(f64, f64) -> bool>(
        grid: &Grid,
        label: &str,
        value: f64,
        inside: F,
    ) -> Self {
        let raw: Vec<bool> = (0..grid.n_nodes())
            .map(|k| {
                let (x, y) = grid.position(k);
                inside(x, y)
            })
            .collect();
        Self {
            label: label.to_string(),
            value,
            mask: dilate(grid, &raw),
        }
    }
}

/// One-cell dilation of a node mask.
pub fn dilate(grid: &Grid, mask: &[bool]) -> Vec<bool> {
    let nx = grid.nx() as isize;
    let two_d = grid.dim() == 2;
    let mut out = mask.to_vec();
    for k in 0..grid.n_nodes() {
        if !mask[k] {
            continue;
        }
        let [i, j] = grid.indices(k);
        let (i, j) = (i as isize, j as isize);
        let dj: &[isize] = if two_d { &[-1, 0, 1] } else { &[0] };
        for di in [-1, 0, 1] {
            for &dj in dj {
                let (a, b) = (i + di, j + dj);
                if a >= 0 && a < nx && b >= 0 && (b < nx || !two_d) {
                    out[grid.node(a as usize, b as usize)] = true;
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclusionMetric {
    pub label: String,
    pub true_value: f64,
    /// Maximum of the computed source over the mask (minimum for a negative
    /// inclusion).
    pub computed: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rel_l2: f64,
    pub rel_h1: f64,
    /// `max |p - p*| / max |p*|`.
    pub rel_sup: f64,
    pub global_max: f64,
    pub global_min: f64,
    pub inclusions: Vec<InclusionMetric>,
}

/// Error metrics of `p_comp` against `p_true`.
pub fn metrics(
    grid: &Grid,
    p_comp: &[f64],
    p_true: &[f64],
    inclusions: &[Inclusion],
) -> Result<Metrics> {
    let n = grid.n_nodes();
    if p_comp.len() != n || p_true.len() != n {
        return Err(Error::ShapeMismatch("fields do not match the grid".into()));
    }
    let diff: Vec<f64> = p_comp.iter().zip(p_true).map(|(a, b)| a - b).collect();
    let ratio = |num: f64, den: f64| if num == 0.0 { 0.0 } else { num / den };
    let l2 = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h1 = |f: &[f64]| -> Result<f64> {
        let grads = grid.gradient(f)?;
        let g2: f64 = grads.iter().flatten().map(|v| v * v).sum();
        Ok((f.iter().map(|v| v * v).sum::<f64>() + g2).sqrt())
    };
    let sup = |f: &[f64]| f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = Vec::with_capacity(inclusions.len());
    for inc in inclusions {
        if inc.mask.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "mask `{}` does not match the grid",
                inc.label
            )));
        }
        let values = p_comp
            .iter()
            .zip(&inc.mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v);
        let computed = if inc.value >= 0.0 {
            values.fold(f64::NEG_INFINITY, f64::max)
        } else {
            values.fold(f64::INFINITY, f64::min)
        };
        if !computed.is_finite() {
            return Err(Error::invalid(format!(
                "inclusion `{}` has an empty mask",
                inc.label
            )));
        }
        out.push(InclusionMetric {
            label: inc.label.clone(),
            true_value: inc.value,
            computed,
            relative_error: (computed - inc.value).abs() / inc.value.abs(),
        });
    }
    Ok(Metrics {
        rel_l2: ratio(l2(&diff), l2(p_true)),
        rel_h1: ratio(h1(&diff)?, h1(p_true)?),
        rel_sup: ratio(sup(&diff), sup(p_true)),
        global_max: p_comp.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        global_min: p_comp.iter().cloned().fold(f64::INFINITY, f64::min),
        inclusions: out,
    })
}

/// Largest truncation level accepted by [`cutoff_study`].
pub const MAX_CUTOFF_MODES: usize = 35;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffEntry {
    pub n_modes: usize,
    pub sup_error: f64,
    /// `|u(x, 0) - Σ_{n≤N} u_n(x) Ψ_n(0)|` per node.
    #[serde(skip)]
    pub error_field: Vec<f64>,
}

/// Sup-norm error of truncating the time expansion of `field` at each `N`.
pub fn cutoff_study(
    field: &WaveField,
    kind: BasisKind,
    n_list: &[usize],
    rule: ProjectionRule,
) -> Result<Vec<CutoffEntry>> {
    let time = field.time_grid();
    let grid = field.grid();
    let initial = field.step(0);
    let mut out = Vec::with_capacity(n_list.len());
    for &n in n_list {
        if n == 0 || n > MAX_CUTOFF_MODES {
            return Err(Error::invalid(format!(
                "cutoff N = {n} outside [1, {MAX_CUTOFF_MODES}]"
            )));
        }
        let basis = TimeBasis::of_kind(kind, n, time.t_final())?;
        let projector = TimeProjector::new(&basis, time, rule)?;
        let psi0 = basis.mass_matrices().psi0;
        let error_field: Vec<f64> = (0..grid.n_nodes())
            .map(|k| {
                let coeffs = projector.project(&field.series(k))?;
                let approx: f64 = coeffs.iter().zip(&psi0).map(|(c, p)| c * p).sum();
                Ok((initial[k] - approx).abs())
            })
            .collect::<Result<_>>()?;
        out.push(CutoffEntry {
            n_modes: n,
            sup_error: error_field.iter().cloned().fold(0.0, f64::max),
            error_field,
        });
    }
    Ok(out)
}
