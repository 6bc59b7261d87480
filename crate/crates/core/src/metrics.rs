//! Discrete L2 errors, observed orders, the CG tolerance schedule and the
//! per-level convergence report.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Cell-center grid of `m × m` points on `(0,1)²`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub m: usize,
}

impl EvalGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::param(
                "eval_grid",
                format!("needs at least 2 cells per side, got {m}"),
            ));
        }
        Ok(EvalGrid { m })
    }

    pub fn len(&self) -> usize {
        self.m * self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    #[inline]
    pub fn point(&self, ix: usize, iy: usize) -> Point2 {
        let h = 1.0 / self.m as f64;
        Point2::xy((ix as f64 + 0.5) * h, (iy as f64 + 0.5) * h)
    }

    /// Values of `f` at every cell center, row by row in `y`.
    pub fn sample(&self, f: &(dyn Fn(&Point2) -> f64 + Sync)) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        out.par_chunks_mut(self.m).enumerate().for_each(|(iy, row)| {
            for (ix, v) in row.iter_mut().enumerate() {
                *v = f(&self.point(ix, iy));
            }
        });
        out
    }

    /// Adds `f` at every cell center to `values`.
    pub fn accumulate(&self, values: &mut [f64], f: &(dyn Fn(&Point2) -> f64 + Sync)) {
        assert_eq!(values.len(), self.len());
        values.par_chunks_mut(self.m).enumerate().for_each(|(iy, row)| {
            for (ix, v) in row.iter_mut().enumerate() {
                *v += f(&self.point(ix, iy));
            }
        });
    }

    /// Midpoint-rule L2 norm of `values − exact`.
    pub fn l2_error_of_values(&self, values: &[f64], exact: &(dyn Fn(&Point2) -> f64 + Sync)) -> f64 {
        assert_eq!(values.len(), self.len());
        let row_sums: Vec<f64> = values
            .par_chunks(self.m)
            .enumerate()
            .map(|(iy, row)| {
                row.iter()
                    .enumerate()
                    .map(|(ix, v)| {
                        let e = v - exact(&self.point(ix, iy));
                        e * e
                    })
                    .sum()
            })
            .collect();
        (pairwise_sum(&row_sums) / self.len() as f64).sqrt()
    }
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// `sqrt((1/M²) Σ (approx − exact)²)` over the `M × M` cell centers.
pub fn l2_error_on_grid(
    approx: &(dyn Fn(&Point2) -> f64 + Sync),
    exact: &(dyn Fn(&Point2) -> f64 + Sync),
    m: usize,
) -> Result<f64> {
    let grid = EvalGrid::new(m)?;
    Ok(grid.l2_error_of_values(&grid.sample(approx), exact))
}

/// `ln(e_prev / e_curr) / ln(h_prev / h_curr)`.
pub fn observed_order(e_prev: f64, e_curr: f64, h_prev: f64, h_curr: f64) -> Result<f64> {
    if !(e_prev > 0.0 && e_curr > 0.0) {
        return Err(Error::param(
            "error",
            format!("errors must be positive, got {e_prev} and {e_curr}"),
        ));
    }
    if !(h_prev > 0.0 && h_curr > 0.0) || h_prev == h_curr {
        return Err(Error::param(
            "h",
            format!("need distinct positive mesh sizes, got {h_prev} and {h_curr}"),
        ));
    }
    Ok((e_prev / e_curr).ln() / (h_prev / h_curr).ln())
}

/// `σ/(2σ − 4) + σ − 2 − d/2`; 2.4 for `σ = 4.5`, `d = 2`.
pub fn tolerance_exponent(sigma: f64, d: usize) -> Result<f64> {
    let excess = sigma - 2.0 - d as f64 / 2.0;
    if !(excess > 0.0) {
        return Err(Error::param(
            "sigma",
            format!("need σ > d/2 + 2, got σ = {sigma}, d = {d}"),
        ));
    }
    Ok(sigma / (2.0 * sigma - 4.0) + excess)
}

/// CG stopping tolerance `h^{σ/(2σ−4) + σ − 2 − d/2}`.
pub fn cg_tolerance_schedule(h: f64, sigma: f64, d: usize) -> Result<f64> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::param("h", format!("must lie in (0, 1), got {h}")));
    }
    Ok(h.powf(tolerance_exponent(sigma, d)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: usize,
    pub delta: f64,
    /// Interior trial centers.
    pub n: usize,
    pub l2_error: Option<f64>,
    pub order: Option<f64>,
    pub tolerance: f64,
    pub cg_iterations: usize,
    pub seconds: f64,
    pub converged: bool,
    pub nominal_h: f64,
    pub measured_h: f64,
    pub measured_q: f64,
    pub residual_inf: f64,
    /// `δ^{-σ} h^{σ/(2σ−4)+σ−2−d/2}`, the residual target with unit constant.
    pub residual_target: f64,
    pub residual_target_met: bool,
    /// The theory assumes `δ ≤ 1`.
    pub delta_exceeds_theory: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub problem: String,
    pub mode: String,
    pub kernel: String,
    pub sigma: f64,
    pub dimension: usize,
    pub schedule: String,
    pub stopping_rule: String,
    pub eval_grid: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<LevelRow>,
}

pub const CSV_HEADER: &str = "level,delta,N,l2_error,order,tolerance,cg_iters,seconds";

impl ConvergenceReport {
    pub fn new(metadata: ReportMetadata) -> Self {
        ConvergenceReport {
            metadata,
            rows: Vec::new(),
        }
    }

    /// Appends a row, filling in its observed order from the previous row.
    pub fn push(&mut self, mut row: LevelRow) {
        row.order = match (self.rows.last(), row.l2_error) {
            (Some(prev), Some(e)) => prev
                .l2_error
                .and_then(|ep| observed_order(ep, e, prev.nominal_h, row.nominal_h).ok()),
            _ => None,
        };
        self.rows.push(row);
    }

    pub fn errors(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.l2_error).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CSV_HEADER}").unwrap();
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.level,
                r.delta,
                r.n,
                opt(r.l2_error),
                r.order.map(|o| o.to_string()).unwrap_or_default(),
                r.tolerance,
                r.cg_iterations,
                r.seconds
            )
            .unwrap();
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Plain-text table with columns Level, δ, N, L2, Order, Tolerance, CG.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:>5}  {:>6}  {:>5}  {:>10}  {:>6}  {:>9}  {:>7}",
            "Level", "delta", "N", "L2", "Order", "Tolerance", "CG"
        )
        .unwrap();
        for r in &self.rows {
            let l2 = r
                .l2_error
                .map(|e| format!("{e:.3e}"))
                .unwrap_or_else(|| "-".into());
            let order = r.order.map(|o| format!("{o:.3}")).unwrap_or_default();
            let flag = if r.converged { "" } else { " (not converged)" };
            writeln!(
                out,
                "{:>5}  {:>6.1}  {:>5}  {:>10}  {:>6}  {:>9.4}  {:>7}{flag}",
                r.level, r.delta, r.n, l2, order, r.tolerance, r.cg_iterations
            )
            .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn l2_error_examples() {
        let u = |p: &Point2| (PI * p.x()).sin() * (0.5 * PI * p.y()).cos();
        assert_eq!(l2_error_on_grid(&u, &u, 50).unwrap(), 0.0);
        let shifted = |p: &Point2| u(p) + 1.0;
        assert!((l2_error_on_grid(&shifted, &u, 37).unwrap() - 1.0).abs() < 1e-12);
        let e = l2_error_on_grid(&|_| 0.0, &u, 1000).unwrap();
        assert!((e - 0.5).abs() < 1e-4, "{e}");
        assert!(l2_error_on_grid(&u, &u, 1).is_err());
    }

    #[test]
    fn midpoint_rule_converges_quadratically() {
        let u = |p: &Point2| (p.x() + p.y()).exp();
        let exact = 0.5 * (std::f64::consts::E.powi(2) - 1.0);
        let err = |m| (l2_error_on_grid(&|_| 0.0, &u, m).unwrap() - exact).abs();
        let (e1, e2) = (err(40), err(80));
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn observed_order_examples() {
        assert!((observed_order(0.2, 0.1, 0.5, 0.25).unwrap() - 1.0).abs() < 1e-15);
        let o = observed_order(4.936e-01, 3.623e-01, 0.5, 0.25).unwrap();
        assert_eq!(format!("{o:.3}"), "0.446");
        let o = observed_order(3.028e-01, 1.076e-01, 0.25, 0.125).unwrap();
        assert_eq!(format!("{o:.3}"), "1.493");
        assert!(observed_order(0.0, 0.1, 0.5, 0.25).is_err());
        assert!(observed_order(0.1, 0.1, 0.5, 0.5).is_err());
    }

    #[test]
    fn tolerance_schedule_examples() {
        assert!((tolerance_exponent(4.5, 2).unwrap() - 2.4).abs() < 1e-15);
        assert_eq!(
            format!("{:.4}", cg_tolerance_schedule(0.5, 4.5, 2).unwrap()),
            "0.1895"
        );
        assert_eq!(
            format!("{:.4}", cg_tolerance_schedule(0.0625, 4.5, 2).unwrap()),
            "0.0013"
        );
        assert!(cg_tolerance_schedule(1.0, 4.5, 2).is_err());
        assert!(cg_tolerance_schedule(0.5, 3.0, 2).is_err());
    }

    fn row(level: usize, e: f64) -> LevelRow {
        LevelRow {
            level,
            delta: 2.0,
            n: 9,
            l2_error: Some(e),
            order: None,
            tolerance: 0.1,
            cg_iterations: 3,
            seconds: 0.0,
            converged: true,
            nominal_h: 0.5f64.powi(level as i32),
            measured_h: 0.0,
            measured_q: 0.0,
            residual_inf: 0.0,
            residual_target: 0.0,
            residual_target_met: false,
            delta_exceeds_theory: true,
        }
    }

    #[test]
    fn report_layout() {
        let mut rep = ConvergenceReport::new(ReportMetadata {
            problem: "p".into(),
            mode: "one-level".into(),
            kernel: "C6".into(),
            sigma: 4.5,
            dimension: 2,
            schedule: "fixed".into(),
            stopping_rule: "absolute".into(),
            eval_grid: 10,
        });
        rep.push(row(1, 0.4));
        rep.push(row(2, 0.1));
        assert_eq!(rep.rows[0].order, None);
        assert!((rep.rows[1].order.unwrap() - 2.0).abs() < 1e-12);
        let csv = rep.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert!(lines.next().unwrap().starts_with("1,2,9,4e-1,,"));
        let back = ConvergenceReport::from_json(&rep.to_json().unwrap()).unwrap();
        assert_eq!(back, rep);
        assert!(rep.render_table().contains("Tolerance"));
    }

    proptest::proptest! {
        #[test]
        fn order_is_scale_invariant(
            e1 in 1e-6f64..1.0, e2 in 1e-6f64..1.0, s in 1e-3f64..1e3,
        ) {
            let a = observed_order(e1, e2, 0.5, 0.25).unwrap();
            let b = observed_order(s * e1, s * e2, 0.5, 0.25).unwrap();
            proptest::prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
