//! Collocation matrices, conjugate gradients on the normal equations, and a
//! dense least-squares oracle.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::kernel::ScaledKernel;
use crate::problem::EllipticOperator;

/// Relative pivot threshold below which the QR oracle declares rank deficiency.
pub const RANK_TOL: f64 = 1e-14;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend(r);
        }
        DenseMatrix { rows: n, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Compressed sparse row storage.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    fn from_sparse_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let n = rows.len();
        for r in rows {
            for (j, v) in r {
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            rows: n,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }
}

/// The assembled collocation matrix in either storage.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelMatrix {
    Dense(DenseMatrix),
    Sparse(CsrMatrix),
}

impl KernelMatrix {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            KernelMatrix::Dense(m) => (m.rows, m.cols),
            KernelMatrix::Sparse(m) => (m.rows, m.cols),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, KernelMatrix::Sparse(_))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            KernelMatrix::Dense(m) => m.get(i, j),
            KernelMatrix::Sparse(m) => m.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            KernelMatrix::Dense(m) => m.data.iter().filter(|v| **v != 0.0).count(),
            KernelMatrix::Sparse(m) => m.values.iter().filter(|v| **v != 0.0).count(),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            KernelMatrix::Dense(m) => m.clone(),
            KernelMatrix::Sparse(m) => {
                let mut d = DenseMatrix::zeros(m.rows, m.cols);
                for i in 0..m.rows {
                    for (j, v) in m.row(i) {
                        d.data[i * m.cols + j] = v;
                    }
                }
                d
            }
        }
    }

    /// `A x` into `out`. Each row is an independent, fixed-order dot product.
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        match self {
            KernelMatrix::Dense(m) => out
                .par_iter_mut()
                .enumerate()
                .with_min_len(64)
                .for_each(|(i, o)| *o = dot(m.row(i), x)),
            KernelMatrix::Sparse(m) => out
                .par_iter_mut()
                .enumerate()
                .with_min_len(64)
                .for_each(|(i, o)| *o = m.row(i).map(|(j, v)| v * x[j]).sum()),
        }
    }

    /// `Aᵀ y` into `out`, accumulated row by row in index order.
    pub fn tr_mul_vec(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        match self {
            KernelMatrix::Dense(m) => {
                for (i, &yi) in y.iter().enumerate() {
                    if yi == 0.0 {
                        continue;
                    }
                    for (o, a) in out.iter_mut().zip(m.row(i)) {
                        *o += a * yi;
                    }
                }
            }
            KernelMatrix::Sparse(m) => {
                for (i, &yi) in y.iter().enumerate() {
                    for (j, v) in m.row(i) {
                        out[j] += v * yi;
                    }
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Interior,
    Boundary,
}

/// Storage selection for assembly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Storage {
    /// Sparse when `δ` is smaller than the diameter of the point cloud.
    #[default]
    Auto,
    Dense,
    Sparse,
}

/// Test points split by the equation they carry.
#[derive(Clone, Copy, Debug)]
pub struct TestPoints<'a, const D: usize> {
    pub interior: &'a [Point<D>],
    pub boundary: &'a [Point<D>],
}

/// The oversampled system `A c = b`: interior rows hold `L Φ_δ(· − y_j)`,
/// boundary rows hold `Φ_δ(· − y_j)`, both evaluated at the test point.
#[derive(Clone, Debug)]
pub struct CollocationSystem<const D: usize> {
    pub matrix: KernelMatrix,
    pub rhs: Vec<f64>,
    pub row_kinds: Vec<RowKind>,
    pub row_points: Vec<Point<D>>,
    pub column_centers: Vec<Point<D>>,
    pub delta: f64,
}

impl<const D: usize> CollocationSystem<D> {
    pub fn shape(&self) -> (usize, usize) {
        self.matrix.shape()
    }

    pub fn n_interior_rows(&self) -> usize {
        self.row_kinds.iter().filter(|k| **k == RowKind::Interior).count()
    }

    /// `b − A c`.
    pub fn residual(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut ac = vec![0.0; self.rhs.len()];
        self.matrix.mul_vec(coefficients, &mut ac);
        self.rhs.iter().zip(&ac).map(|(b, a)| b - a).collect()
    }
}

fn bounding_diameter<const D: usize>(sets: &[&[Point<D>]]) -> f64 {
    let mut lo = [f64::INFINITY; D];
    let mut hi = [f64::NEG_INFINITY; D];
    for p in sets.iter().flat_map(|s| s.iter()) {
        for i in 0..D {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    (0..D).map(|i| (hi[i] - lo[i]).powi(2)).sum::<f64>().sqrt()
}

/// Assembles the collocation system for trial centers against test points.
///
/// Right-hand sides are passed as functions so that residual data from
/// earlier levels can be supplied in place of `f` and `g`.
pub fn assemble<const D: usize>(
    trial: &[Point<D>],
    test: TestPoints<'_, D>,
    kernel: &ScaledKernel,
    operator: &EllipticOperator<D>,
    rhs_interior: &(dyn Fn(&Point<D>) -> f64 + Sync),
    rhs_boundary: &(dyn Fn(&Point<D>) -> f64 + Sync),
    storage: Storage,
) -> Result<CollocationSystem<D>> {
    if trial.is_empty() {
        return Err(Error::EmptyInput("trial centers"));
    }
    let rows = test.interior.len() + test.boundary.len();
    if rows == 0 {
        return Err(Error::EmptyInput("test points"));
    }
    if rows <= trial.len() {
        return Err(Error::NotOversampled {
            rows,
            cols: trial.len(),
        });
    }
    operator.check_ellipticity(test.interior)?;
    let coeffs = test
        .interior
        .iter()
        .map(|x| operator.coefficients_at(x))
        .collect::<Result<Vec<_>>>()?;

    let sparse = match storage {
        Storage::Dense => false,
        Storage::Sparse => true,
        Storage::Auto => kernel.delta() < bounding_diameter(&[trial, test.interior, test.boundary]),
    };
    let delta = kernel.delta();
    let n_int = test.interior.len();
    let row_entry = |i: usize, y: &Point<D>| -> f64 {
        if i < n_int {
            kernel.apply_with(&coeffs[i], &test.interior[i], y)
        } else {
            kernel.value(&test.boundary[i - n_int], y)
        }
    };
    let row_point = |i: usize| {
        if i < n_int {
            &test.interior[i]
        } else {
            &test.boundary[i - n_int]
        }
    };

    let matrix = if sparse {
        let rows_data: Vec<Vec<(usize, f64)>> = (0..rows)
            .into_par_iter()
            .map(|i| {
                let x = row_point(i);
                trial
                    .iter()
                    .enumerate()
                    .filter(|(_, y)| x.distance(y) < delta)
                    .map(|(j, y)| (j, row_entry(i, y)))
                    .filter(|&(_, v)| v != 0.0)
                    .collect()
            })
            .collect();
        KernelMatrix::Sparse(CsrMatrix::from_sparse_rows(trial.len(), rows_data))
    } else {
        let rows_data: Vec<Vec<f64>> = (0..rows)
            .into_par_iter()
            .map(|i| trial.iter().map(|y| row_entry(i, y)).collect())
            .collect();
        KernelMatrix::Dense(DenseMatrix::from_rows(rows_data))
    };
    if matrix.nnz() == 0 {
        return Err(Error::ZeroMatrix { delta });
    }

    let mut rhs = Vec::with_capacity(rows);
    rhs.extend(test.interior.par_iter().map(rhs_interior).collect::<Vec<_>>());
    rhs.extend(test.boundary.par_iter().map(rhs_boundary).collect::<Vec<_>>());
    let mut row_kinds = vec![RowKind::Interior; n_int];
    row_kinds.resize(rows, RowKind::Boundary);
    let mut row_points = test.interior.to_vec();
    row_points.extend_from_slice(test.boundary);

    Ok(CollocationSystem {
        matrix,
        rhs,
        row_kinds,
        row_points,
        column_centers: trial.to_vec(),
        delta,
    })
}

/// When conjugate gradients on `AᵀA c = Aᵀb` stops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoppingRule {
    /// `‖Aᵀ(b − Ac)‖₂ / ‖Aᵀb‖₂ ≤ tol`
    #[default]
    Relative,
    /// `‖Aᵀ(b − Ac)‖₂ ≤ tol`
    Absolute,
}

impl std::str::FromStr for StoppingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative" => Ok(StoppingRule::Relative),
            "absolute" => Ok(StoppingRule::Absolute),
            other => Err(Error::param(
                "stopping",
                format!("expected `relative` or `absolute`, got `{other}`"),
            )),
        }
    }
}

impl std::fmt::Display for StoppingRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StoppingRule::Relative => "relative",
            StoppingRule::Absolute => "absolute",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub rule: StoppingRule,
}

impl CgOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        CgOptions {
            tol,
            max_iter,
            rule: StoppingRule::Relative,
        }
    }

    pub fn with_rule(mut self, rule: StoppingRule) -> Self {
        self.rule = rule;
        self
    }

    /// `20 N²` iterations for `N` unknowns.
    pub fn default_max_iter(n_unknowns: usize) -> usize {
        20 * n_unknowns * n_unknowns
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::param("tol", format!("must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    /// `‖Aᵀ(b − Ac)‖₂ / ‖Aᵀb‖₂` at exit (0 when `Aᵀb = 0`).
    pub normal_residual: f64,
    /// `‖Aᵀ(b − Ac)‖₂` at exit.
    pub normal_residual_abs: f64,
    /// `‖b − Ac‖_∞` at exit.
    pub collocation_residual_inf: f64,
    pub converged: bool,
    /// Set when a search direction vanished before the tolerance was met.
    pub breakdown: bool,
}

/// Conjugate gradients on the normal equations (CGLS form), from `c = 0`.
pub fn cg_normal_solve<const D: usize>(
    system: &CollocationSystem<D>,
    options: &CgOptions,
) -> Result<SolveOutcome> {
    cg_normal_solve_observed(system, options, |_, _| {})
}

/// As [`cg_normal_solve`], calling `observe(k, c_k)` after each iteration.
pub fn cg_normal_solve_observed<const D: usize>(
    system: &CollocationSystem<D>,
    options: &CgOptions,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<SolveOutcome> {
    options.validate()?;
    let a = &system.matrix;
    let (m, n) = a.shape();
    if system.rhs.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: system.rhs.len(),
        });
    }

    let mut x = vec![0.0; n];
    let mut r = system.rhs.clone();
    let mut s = vec![0.0; n];
    a.tr_mul_vec(&r, &mut s);
    let norm0 = norm2(&s);
    let mut p = s.clone();
    let mut q = vec![0.0; m];
    let mut gamma = dot(&s, &s);
    let mut iterations = 0;
    let mut breakdown = false;

    let measure = |gamma: f64| match options.rule {
        StoppingRule::Relative if norm0 > 0.0 => gamma.sqrt() / norm0,
        StoppingRule::Relative => 0.0,
        StoppingRule::Absolute => gamma.sqrt(),
    };

    let mut converged = measure(gamma) <= options.tol;
    while !converged && iterations < options.max_iter {
        a.mul_vec(&p, &mut q);
        let qq = dot(&q, &q);
        if !(qq > 0.0) || !qq.is_finite() {
            breakdown = true;
            break;
        }
        let alpha = gamma / qq;
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += alpha * pi;
        }
        for (ri, qi) in r.iter_mut().zip(&q) {
            *ri -= alpha * qi;
        }
        a.tr_mul_vec(&r, &mut s);
        let gamma_next = dot(&s, &s);
        let beta = gamma_next / gamma;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
        gamma = gamma_next;
        iterations += 1;
        observe(iterations, &x);
        converged = measure(gamma) <= options.tol;
    }

    // Report residuals recomputed from the final iterate, not the recursions.
    let r_true = system.residual(&x);
    a.tr_mul_vec(&r_true, &mut s);
    let normal_abs = norm2(&s);
    Ok(SolveOutcome {
        iterations,
        normal_residual: if norm0 > 0.0 { normal_abs / norm0 } else { 0.0 },
        normal_residual_abs: normal_abs,
        collocation_residual_inf: norm_inf(&r_true),
        converged,
        breakdown,
        coefficients: x,
    })
}

/// Least-squares minimizer of `‖Ac − b‖₂` by Householder QR with column
/// pivoting on the largest remaining column norm.
pub fn direct_lsq_solve<const D: usize>(system: &CollocationSystem<D>) -> Result<Vec<f64>> {
    lsq_dense(&system.matrix.to_dense(), &system.rhs)
}

pub(crate) fn lsq_dense(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: b.len(),
        });
    }
    if m < n {
        return Err(Error::NotOversampled { rows: m, cols: n });
    }
    // column-major working copy
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut rhs = b.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut diag = vec![0.0; n];
    let mut largest = 0.0f64;

    for k in 0..n {
        let (piv, piv_norm) = (k..n)
            .map(|j| (j, norm2(&cols[j][k..])))
            .fold((k, -1.0), |best, cand| if cand.1 > best.1 { cand } else { best });
        cols.swap(k, piv);
        perm.swap(k, piv);
        if k == 0 {
            largest = piv_norm;
        }
        if !(piv_norm > RANK_TOL * largest) || largest == 0.0 {
            return Err(Error::Singular {
                step: k,
                pivot: piv_norm,
                largest,
            });
        }
        // v = x + sign(x_k)|x| e_k, R_kk = −sign(x_k)|x|
        let alpha = if cols[k][k] >= 0.0 { -piv_norm } else { piv_norm };
        let mut v = cols[k][k..].to_vec();
        v[0] -= alpha;
        let vv = dot(&v, &v);
        diag[k] = alpha;
        if vv > 0.0 {
            for col in cols.iter_mut().skip(k + 1) {
                let t = 2.0 * dot(&v, &col[k..]) / vv;
                for (c, vi) in col[k..].iter_mut().zip(&v) {
                    *c -= t * vi;
                }
            }
            let t = 2.0 * dot(&v, &rhs[k..]) / vv;
            for (c, vi) in rhs[k..].iter_mut().zip(&v) {
                *c -= t * vi;
            }
        }
        cols[k][k] = alpha;
    }

    let mut z = vec![0.0; n];
    for k in (0..n).rev() {
        let mut acc = rhs[k];
        for j in k + 1..n {
            acc -= cols[j][k] * z[j];
        }
        z[k] = acc / diag[k];
    }
    let mut c = vec![0.0; n];
    for (k, &p) in perm.iter().enumerate() {
        c[p] = z[k];
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub interior_inf: f64,
    pub boundary_inf: f64,
    pub combined_inf: f64,
}

/// Infinity norms of the interior and boundary blocks of `b − Ac`.
pub fn residual_inf<const D: usize>(
    system: &CollocationSystem<D>,
    coefficients: &[f64],
) -> Result<ResidualNorms> {
    let n = system.shape().1;
    if coefficients.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: coefficients.len(),
        });
    }
    let r = system.residual(coefficients);
    let (mut interior_inf, mut boundary_inf) = (0.0f64, 0.0f64);
    for (v, kind) in r.iter().zip(&system.row_kinds) {
        match kind {
            RowKind::Interior => interior_inf = interior_inf.max(v.abs()),
            RowKind::Boundary => boundary_inf = boundary_inf.max(v.abs()),
        }
    }
    Ok(ResidualNorms {
        interior_inf,
        boundary_inf,
        combined_inf: interior_inf.max(boundary_inf),
    })
}

/// Formats like C's `%.17g`.
pub fn format_g17(v: f64) -> String {
    const P: i32 = 17;
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-4..P).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `A` row-major (one row per line, values separated by a space)
/// and `b` one value per line, all as `%.17g`.
pub fn write_system<const D: usize>(
    system: &CollocationSystem<D>,
    matrix_out: &mut impl Write,
    rhs_out: &mut impl Write,
) -> io::Result<()> {
    let dense = system.matrix.to_dense();
    let (m, _) = dense.shape();
    for i in 0..m {
        let line: Vec<String> = dense.row(i).iter().map(|v| format_g17(*v)).collect();
        writeln!(matrix_out, "{}", line.join(" "))?;
    }
    for v in &system.rhs {
        writeln!(rhs_out, "{}", format_g17(*v))?;
    }
    Ok(())
}

/// Reads the matrix half of [`write_system`] back.
pub fn read_matrix(text: &str) -> Result<DenseMatrix> {
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|e| Error::Config {
                        field: format!("matrix row {i}"),
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(w) = rows.first().map(Vec::len) {
        if let Some(bad) = rows.iter().find(|r| r.len() != w) {
            return Err(Error::DimensionMismatch {
                expected: w,
                got: bad.len(),
            });
        }
    }
    Ok(DenseMatrix::from_rows(rows))
}
