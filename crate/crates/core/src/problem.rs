//! Second-order elliptic operators and Dirichlet problems.
//!
//! `L u = Σ a_ij ∂_i ∂_j u + Σ b_i ∂_i u + c u`. Coefficients are either
//! constants or pure functions of the point. Smoothness of the fields is the
//! caller's obligation and is not checked.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{Point, Point2};

/// A scalar function of a point. Must be pure.
pub type ScalarField<const D: usize> = Arc<dyn Fn(&Point<D>) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Coefficient<const D: usize> {
    Constant(f64),
    Field(ScalarField<D>),
}

impl<const D: usize> Coefficient<D> {
    pub fn constant(v: f64) -> Self {
        Coefficient::Constant(v)
    }

    pub fn field(f: impl Fn(&Point<D>) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Field(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: &Point<D>) -> f64 {
        match self {
            Coefficient::Constant(v) => *v,
            Coefficient::Field(f) => f(x),
        }
    }
}

impl<const D: usize> fmt::Debug for Coefficient<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(v) => write!(f, "Constant({v})"),
            Coefficient::Field(_) => f.write_str("Field(..)"),
        }
    }
}

/// Coefficients of an operator frozen at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointCoefficients<const D: usize> {
    pub a: [[f64; D]; D],
    pub b: [f64; D],
    pub c: f64,
}

#[derive(Clone, Debug)]
pub struct EllipticOperator<const D: usize> {
    a: [[Coefficient<D>; D]; D],
    b: [Coefficient<D>; D],
    c: Coefficient<D>,
}

impl<const D: usize> EllipticOperator<D> {
    pub fn new(a: [[Coefficient<D>; D]; D], b: [Coefficient<D>; D], c: Coefficient<D>) -> Self {
        EllipticOperator { a, b, c }
    }

    /// `a = I`, `b = 0`, `c = 0`.
    pub fn laplacian() -> Self {
        EllipticOperator {
            a: std::array::from_fn(|i| {
                std::array::from_fn(|j| Coefficient::constant(if i == j { 1.0 } else { 0.0 }))
            }),
            b: std::array::from_fn(|_| Coefficient::constant(0.0)),
            c: Coefficient::constant(0.0),
        }
    }

    pub fn coefficients_at(&self, x: &Point<D>) -> Result<PointCoefficients<D>> {
        let undefined = |field: String| Error::UndefinedCoefficient {
            field,
            at: x.0.to_vec(),
        };
        let mut a = [[0.0; D]; D];
        for i in 0..D {
            for j in 0..D {
                a[i][j] = self.a[i][j].eval(x);
                if !a[i][j].is_finite() {
                    return Err(undefined(format!("a[{i}][{j}]")));
                }
            }
        }
        let mut b = [0.0; D];
        for i in 0..D {
            b[i] = self.b[i].eval(x);
            if !b[i].is_finite() {
                return Err(undefined(format!("b[{i}]")));
            }
        }
        let c = self.c.eval(x);
        if !c.is_finite() {
            return Err(undefined("c".into()));
        }
        Ok(PointCoefficients { a, b, c })
    }

    /// Smallest eigenvalue of the symmetric part of `[a_ij(x)]`.
    pub fn min_eigenvalue_at(&self, x: &Point<D>) -> Result<f64> {
        let coeffs = self.coefficients_at(x)?;
        let sym = DMatrix::from_fn(D, D, |i, j| 0.5 * (coeffs.a[i][j] + coeffs.a[j][i]));
        Ok(SymmetricEigen::new(sym).eigenvalues.min())
    }

    /// Rejects the operator unless it is strictly elliptic at every point.
    pub fn check_ellipticity(&self, points: &[Point<D>]) -> Result<()> {
        for x in points {
            let min_eigenvalue = self.min_eigenvalue_at(x)?;
            if !(min_eigenvalue > 0.0) {
                return Err(Error::NotElliptic {
                    min_eigenvalue,
                    at: x.0.to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Applies `L` to `u` at `x` with central differences of step `h`.
    pub fn apply_fd(&self, u: &dyn Fn(&Point<D>) -> f64, x: &Point<D>, h: f64) -> Result<f64> {
        let coeffs = self.coefficients_at(x)?;
        let shifted = |moves: &[(usize, f64)]| {
            let mut p = *x;
            for &(i, s) in moves {
                p.0[i] += s;
            }
            u(&p)
        };
        let u0 = u(x);
        let mut total = coeffs.c * u0;
        for i in 0..D {
            let up = shifted(&[(i, h)]);
            let um = shifted(&[(i, -h)]);
            total += coeffs.b[i] * (up - um) / (2.0 * h);
            total += coeffs.a[i][i] * (up - 2.0 * u0 + um) / (h * h);
            for j in 0..D {
                if j == i {
                    continue;
                }
                let uxy =
                    (shifted(&[(i, h), (j, h)]) - shifted(&[(i, h), (j, -h)]) - shifted(&[(i, -h), (j, h)])
                        + shifted(&[(i, -h), (j, -h)]))
                        / (4.0 * h * h);
                total += coeffs.a[i][j] * uxy;
            }
        }
        Ok(total)
    }
}

/// `L u = f` in the domain, `u = g` on its boundary.
#[derive(Clone)]
pub struct EllipticBvp<const D: usize> {
    pub operator: EllipticOperator<D>,
    pub f: ScalarField<D>,
    pub g: ScalarField<D>,
    pub exact: Option<ScalarField<D>>,
}

impl<const D: usize> EllipticBvp<D> {
    pub fn new(
        operator: EllipticOperator<D>,
        f: impl Fn(&Point<D>) -> f64 + Send + Sync + 'static,
        g: impl Fn(&Point<D>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        EllipticBvp {
            operator,
            f: Arc::new(f),
            g: Arc::new(g),
            exact: None,
        }
    }

    pub fn with_exact(mut self, exact: impl Fn(&Point<D>) -> f64 + Send + Sync + 'static) -> Self {
        self.exact = Some(Arc::new(exact));
        self
    }

    /// Largest `|L_fd(exact) − f|` over `interior` and `|exact − g|` over
    /// `boundary`. `None` when no exact solution is attached.
    pub fn consistency_residuals(
        &self,
        interior: &[Point<D>],
        boundary: &[Point<D>],
        fd_step: f64,
    ) -> Result<Option<(f64, f64)>> {
        let Some(exact) = &self.exact else {
            return Ok(None);
        };
        let mut pde = 0.0f64;
        for x in interior {
            let lu = self.operator.apply_fd(exact.as_ref(), x, fd_step)?;
            pde = pde.max((lu - (self.f)(x)).abs());
        }
        let bc = boundary
            .iter()
            .map(|x| (exact(x) - (self.g)(x)).abs())
            .fold(0.0, f64::max);
        Ok(Some((pde, bc)))
    }
}

impl<const D: usize> fmt::Debug for EllipticBvp<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EllipticBvp")
            .field("operator", &self.operator)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

/// Names accepted by [`builtin_problem`].
pub const BUILTIN_PROBLEMS: &[&str] = &["poisson-square"];

pub fn builtin_problem(name: &str) -> Result<EllipticBvp<2>> {
    match name {
        "poisson-square" => Ok(poisson_benchmark()),
        other => Err(Error::param(
            "problem",
            format!(
                "unknown problem `{other}` (known: {})",
                BUILTIN_PROBLEMS.join(", ")
            ),
        )),
    }
}

/// `Δu = −(5/4)π² sin(πx) cos(πy/2)` on `(0,1)²`; `u = sin(πx)` on the edge
/// `y = 0` and `u = 0` on the other three edges. Exact solution
/// `u = sin(πx) cos(πy/2)`.
pub fn poisson_benchmark() -> EllipticBvp<2> {
    EllipticBvp::new(
        EllipticOperator::laplacian(),
        |p: &Point2| -1.25 * PI * PI * (PI * p.x()).sin() * (0.5 * PI * p.y()).cos(),
        // Corners belong to both edge groups and evaluate to 0 either way.
        |p: &Point2| {
            if p.y() == 0.0 {
                (PI * p.x()).sin()
            } else {
                0.0
            }
        },
    )
    .with_exact(|p: &Point2| (PI * p.x()).sin() * (0.5 * PI * p.y()).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::boundary_ring;

    #[test]
    fn laplacian_of_simple_functions() {
        let lap = EllipticOperator::<2>::laplacian();
        let x = Point2::xy(0.3, 0.6);
        let quad = lap
            .apply_fd(&|p: &Point2| p.x() * p.x() + p.y() * p.y(), &x, 1e-3)
            .unwrap();
        assert!((quad - 4.0).abs() < 1e-6);
        let mixed = lap.apply_fd(&|p: &Point2| p.x() * p.y(), &x, 1e-3).unwrap();
        assert!(mixed.abs() < 1e-8);
    }

    #[test]
    fn benchmark_values() {
        let bvp = poisson_benchmark();
        let exact = bvp.exact.as_ref().unwrap();
        assert_eq!(exact(&Point2::xy(0.5, 0.0)), 1.0);
        assert!(((bvp.g)(&Point2::xy(0.25, 0.0)) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!((bvp.g)(&Point2::xy(0.25, 1.0)), 0.0);
        let f_mid = (bvp.f)(&Point2::xy(0.5, 0.0));
        assert!((f_mid + 12.337005501361698).abs() < 1e-12);
    }

    #[test]
    fn benchmark_residual_at_a_single_point() {
        let bvp = poisson_benchmark();
        let p = Point2::xy(0.3, 0.7);
        let exact = bvp.exact.as_ref().unwrap();
        let h = 1e-3;
        let lap = bvp.operator.apply_fd(exact.as_ref(), &p, h).unwrap();
        // O(h²) truncation ≈ π⁴/12 · h² ≈ 1e-5
        assert!((lap - (bvp.f)(&p)).abs() < 5e-5);
        let analytic = -(PI * PI + 0.25 * PI * PI) * exact(&p);
        assert!((analytic - (bvp.f)(&p)).abs() < 1e-12);
    }

    #[test]
    fn benchmark_satisfies_pde_and_boundary_data() {
        let bvp = poisson_benchmark();
        let interior: Vec<Point2> = (0..10)
            .flat_map(|i| (0..10).map(move |j| Point2::xy((i as f64 + 0.5) / 10.0, (j as f64 + 0.5) / 10.0)))
            .collect();
        let boundary = boundary_ring(11);
        assert_eq!(boundary.len(), 40);
        let (pde, bc) = bvp
            .consistency_residuals(&interior, &boundary, 1e-4)
            .unwrap()
            .unwrap();
        assert!(pde < 1e-5, "{pde}");
        assert!(bc < 1e-12, "{bc}");
    }

    #[test]
    fn laplacian_is_elliptic_with_unit_eigenvalue() {
        let lap = EllipticOperator::<2>::laplacian();
        let x = Point2::xy(0.1, 0.9);
        assert!((lap.min_eigenvalue_at(&x).unwrap() - 1.0).abs() < 1e-15);
        lap.check_ellipticity(&[x]).unwrap();
    }

    #[test]
    fn rejects_degenerate_and_undefined_operators() {
        let zero = || Coefficient::<2>::constant(0.0);
        let op = EllipticOperator::new(
            [
                [Coefficient::constant(1.0), zero()],
                [zero(), Coefficient::field(|p| p.x() - 0.5)],
            ],
            [zero(), zero()],
            zero(),
        );
        assert!(op.check_ellipticity(&[Point2::xy(0.9, 0.5)]).is_ok());
        assert!(matches!(
            op.check_ellipticity(&[Point2::xy(0.25, 0.5)]),
            Err(Error::NotElliptic { .. })
        ));
        let bad = EllipticOperator::new(
            [
                [Coefficient::constant(1.0), zero()],
                [zero(), Coefficient::constant(1.0)],
            ],
            [zero(), zero()],
            Coefficient::field(|p| p.x().ln()),
        );
        assert!(matches!(
            bad.coefficients_at(&Point2::xy(-1.0, 0.0)),
            Err(Error::UndefinedCoefficient { .. })
        ));
    }

    #[test]
    fn registry() {
        assert!(builtin_problem("poisson-square").is_ok());
        assert!(builtin_problem("heat").is_err());
    }
}
