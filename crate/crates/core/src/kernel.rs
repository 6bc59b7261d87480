//! Wendland compactly supported radial functions and their scaled kernels.
//!
//! Each member of the family is stored in factored form `(1 - r)^p q(r)` and
//! differentiated symbolically once at construction, so the radial
//! derivatives stay exact piecewise polynomials:
//!
//! ```text
//! φ'(r)     = (1 - r)^{p-1} q₁(r),   q₁ = -p q + (1 - r) q'
//! φ'(r) / r = (1 - r)^{p-1} q₁(r) / r          (q₁(0) = 0)
//! φ''(r)    = (1 - r)^{p-2} q₂(r),   q₂ = -(p - 1) q₁ + (1 - r) q₁'
//! ```
//!
//! `q₁` has a vanishing constant term for every Wendland function, so
//! `φ'(r) / r` is itself a polynomial and needs no special case at `r = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::problem::{EllipticOperator, PointCoefficients};

/// Below this scaled distance the direction-dependent Hessian terms are
/// replaced by their isotropic limit.
pub const ORIGIN_CUTOFF: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
struct Poly(Vec<f64>);

impl Poly {
    fn eval(&self, r: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * r + c)
    }

    fn derivative(&self) -> Poly {
        Poly(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        )
    }

    fn scale(&self, s: f64) -> Poly {
        Poly(self.0.iter().map(|c| c * s).collect())
    }

    fn add(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        Poly(
            (0..n)
                .map(|k| self.0.get(k).unwrap_or(&0.0) + other.0.get(k).unwrap_or(&0.0))
                .collect(),
        )
    }

    /// `(1 - r) · self`
    fn times_one_minus_r(&self) -> Poly {
        let mut out = vec![0.0; self.0.len() + 1];
        for (k, &c) in self.0.iter().enumerate() {
            out[k] += c;
            out[k + 1] -= c;
        }
        Poly(out)
    }

    /// Divides by `r`; the constant term must be zero.
    fn div_r(&self) -> Poly {
        debug_assert_eq!(self.0.first().copied().unwrap_or(0.0), 0.0);
        Poly(self.0.iter().skip(1).copied().collect())
    }
}

/// Smoothness class of the Wendland function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Smoothness {
    C2,
    C4,
    C6,
}

impl Smoothness {
    /// Half the number of continuous derivatives (`k` in `C^{2k}`).
    pub fn k(self) -> usize {
        match self {
            Smoothness::C2 => 1,
            Smoothness::C4 => 2,
            Smoothness::C6 => 3,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Smoothness::C2 => "C2",
            Smoothness::C4 => "C4",
            Smoothness::C6 => "C6",
        }
    }

    // (exponent of (1 - r), q) normalized so that φ(0) = 1.
    fn factored_form(self) -> (i32, Poly) {
        match self {
            Smoothness::C2 => (4, Poly(vec![1.0, 4.0])),
            Smoothness::C4 => (6, Poly(vec![1.0, 6.0, 35.0 / 3.0])),
            Smoothness::C6 => (8, Poly(vec![1.0, 8.0, 25.0, 32.0])),
        }
    }
}

impl std::str::FromStr for Smoothness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "C2" => Ok(Smoothness::C2),
            "C4" => Ok(Smoothness::C4),
            "C6" => Ok(Smoothness::C6),
            other => Err(Error::param("smoothness", format!("unknown class `{other}`"))),
        }
    }
}

/// Radial value and derivatives at one radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialDerivatives {
    pub value: f64,
    pub first: f64,
    pub second: f64,
    /// `φ'(r) / r`, continuous at `r = 0` where it equals `φ''(0)`.
    pub first_over_r: f64,
}

/// A Wendland function `φ_{3,k}` with support radius 1, valid in `d ≤ 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct WendlandKernel {
    dimension: usize,
    smoothness: Smoothness,
    exponent: i32,
    q: Poly,
    q1_over_r: Poly,
    q2: Poly,
}

impl WendlandKernel {
    pub fn new(smoothness: Smoothness, dimension: usize) -> Result<Self> {
        if !(1..=3).contains(&dimension) {
            return Err(Error::param(
                "dimension",
                format!(
                    "Wendland functions of this family are positive definite only for d ≤ 3, got {dimension}"
                ),
            ));
        }
        let (p, q) = smoothness.factored_form();
        let q1 = q.scale(-(p as f64)).add(&q.derivative().times_one_minus_r());
        let q2 = q1
            .scale(-((p - 1) as f64))
            .add(&q1.derivative().times_one_minus_r());
        Ok(WendlandKernel {
            dimension,
            smoothness,
            exponent: p,
            q1_over_r: q1.div_r(),
            q,
            q2,
        })
    }

    /// The `C^6` function used for the benchmark, `d = 2`, `σ = 4.5`.
    pub fn c6_2d() -> Self {
        Self::new(Smoothness::C6, 2).expect("C6 is valid in two dimensions")
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    /// Order of the Sobolev space the kernel's native space is equivalent to:
    /// `σ = d/2 + k + 1/2`.
    pub fn sobolev_order(&self) -> f64 {
        self.dimension as f64 / 2.0 + self.smoothness.k() as f64 + 0.5
    }

    pub fn support_radius(&self) -> f64 {
        1.0
    }

    /// `φ(r)`; exactly zero for `r ≥ 1`.
    pub fn radial_value(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::NegativeRadius(r));
        }
        Ok(self.value_unchecked(r))
    }

    #[inline]
    pub(crate) fn value_unchecked(&self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        (1.0 - r).powi(self.exponent) * self.q.eval(r)
    }

    pub fn radial_derivatives(&self, r: f64) -> Result<RadialDerivatives> {
        if !(r >= 0.0) {
            return Err(Error::NegativeRadius(r));
        }
        Ok(self.derivatives_unchecked(r))
    }

    #[inline]
    pub(crate) fn derivatives_unchecked(&self, r: f64) -> RadialDerivatives {
        if r >= 1.0 {
            return RadialDerivatives {
                value: 0.0,
                first: 0.0,
                second: 0.0,
                first_over_r: 0.0,
            };
        }
        let t = 1.0 - r;
        let t_pm2 = t.powi(self.exponent - 2);
        let t_pm1 = t_pm2 * t;
        let first_over_r = t_pm1 * self.q1_over_r.eval(r);
        RadialDerivatives {
            value: t_pm1 * t * self.q.eval(r),
            first: first_over_r * r,
            second: t_pm2 * self.q2.eval(r),
            first_over_r,
        }
    }
}

/// `Φ_δ(x, y) = δ^{-d} φ(|x − y| / δ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledKernel {
    base: WendlandKernel,
    delta: f64,
}

impl ScaledKernel {
    pub fn new(base: WendlandKernel, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::param(
                "delta",
                format!("must be positive and finite, got {delta}"),
            ));
        }
        Ok(ScaledKernel { base, delta })
    }

    pub fn base(&self) -> &WendlandKernel {
        &self.base
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// The convergence theory assumes `δ ≤ 1`; the experiments do not.
    pub fn exceeds_theory_range(&self) -> bool {
        self.delta > 1.0
    }

    fn norm_factor(&self) -> f64 {
        self.delta.powi(-(self.base.dimension as i32))
    }

    /// `Φ_δ` as a function of the distance `r = |x − y|`.
    #[inline]
    pub fn value_at_distance(&self, r: f64) -> f64 {
        self.norm_factor() * self.base.value_unchecked(r / self.delta)
    }

    #[inline]
    pub fn value<const D: usize>(&self, x: &Point<D>, y: &Point<D>) -> f64 {
        debug_assert_eq!(D, self.base.dimension);
        self.value_at_distance(x.distance(y))
    }

    /// `(L_x Φ_δ(· − y))(x)` for coefficients already evaluated at `x`.
    pub fn apply_with<const D: usize>(
        &self,
        coeffs: &PointCoefficients<D>,
        x: &Point<D>,
        y: &Point<D>,
    ) -> f64 {
        debug_assert_eq!(D, self.base.dimension);
        let diff = *x - *y;
        let dist = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s = dist / self.delta;
        if s >= 1.0 {
            return 0.0;
        }
        let rd = self.base.derivatives_unchecked(s);
        let nf = self.norm_factor();
        let hess_scale = nf / (self.delta * self.delta);
        let trace_a: f64 = (0..D).map(|i| coeffs.a[i][i]).sum();

        let (second_order, first_order) = if s < ORIGIN_CUTOFF {
            // Hessian → δ^{-d-2} φ''(0) I, gradient → 0
            (hess_scale * rd.first_over_r * trace_a, 0.0)
        } else {
            let u: [f64; D] = std::array::from_fn(|i| diff[i] / dist);
            let mut uau = 0.0;
            for i in 0..D {
                for j in 0..D {
                    uau += u[i] * coeffs.a[i][j] * u[j];
                }
            }
            let bu: f64 = (0..D).map(|i| coeffs.b[i] * u[i]).sum();
            (
                hess_scale * (rd.second * uau + rd.first_over_r * (trace_a - uau)),
                nf / self.delta * rd.first * bu,
            )
        };
        second_order + first_order + coeffs.c * nf * rd.value
    }

    /// `(L_x Φ_δ(· − y))(x)`, evaluating the operator's coefficients at `x`.
    pub fn apply_operator<const D: usize>(
        &self,
        op: &EllipticOperator<D>,
        x: &Point<D>,
        y: &Point<D>,
    ) -> Result<f64> {
        let coeffs = op.coefficients_at(x)?;
        Ok(self.apply_with(&coeffs, x, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;
    use proptest::prelude::*;

    fn printed_c6(r: f64) -> f64 {
        if r >= 1.0 {
            0.0
        } else {
            (1.0 - r).powi(8) * (32.0 * r.powi(3) + 25.0 * r * r + 8.0 * r + 1.0)
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn radial_value_examples() {
        let k = WendlandKernel::c6_2d();
        assert_eq!(k.radial_value(0.0).unwrap(), 1.0);
        assert_eq!(k.radial_value(0.5).unwrap(), 0.0595703125);
        assert_eq!(k.radial_value(1.5).unwrap(), 0.0);
        assert!(matches!(k.radial_value(-0.1), Err(Error::NegativeRadius(_))));
        assert!(k.radial_derivatives(-1.0).is_err());
    }

    #[test]
    fn closed_form_matches_printed_polynomial() {
        let k = WendlandKernel::c6_2d();
        for i in 0..=100 {
            let r = i as f64 / 80.0;
            let got = k.radial_value(r).unwrap();
            assert!((got - printed_c6(r)).abs() <= 1e-15, "r = {r}");
        }
    }

    #[test]
    fn c6_first_derivative_has_known_factorization() {
        // φ'(r) = -22 r (1 - r)^7 (16 r² + 7 r + 1)
        let k = WendlandKernel::c6_2d();
        for r in [0.0f64, 0.1, 0.37, 0.8] {
            let expect = -22.0 * r * (1.0 - r).powi(7) * (16.0 * r * r + 7.0 * r + 1.0);
            let got = k.radial_derivatives(r).unwrap().first;
            assert!((got - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn derivatives_at_origin_and_support_edge() {
        for sm in [Smoothness::C2, Smoothness::C4, Smoothness::C6] {
            let k = WendlandKernel::new(sm, 2).unwrap();
            let d0 = k.radial_derivatives(0.0).unwrap();
            assert_eq!(d0.value, 1.0);
            assert_eq!(d0.first, 0.0);
            assert_eq!(d0.first_over_r, d0.second);
            let d1 = k.radial_derivatives(1.0).unwrap();
            assert_eq!((d1.value, d1.first, d1.second), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let step = 1e-6;
        for sm in [Smoothness::C2, Smoothness::C4, Smoothness::C6] {
            let k = WendlandKernel::new(sm, 2).unwrap();
            for i in 1..=9 {
                let r = 0.1 * i as f64;
                let d = k.radial_derivatives(r).unwrap();
                let fd1 = (printed_or(&k, r + step) - printed_or(&k, r - step)) / (2.0 * step);
                assert!(rel_err(d.first, fd1) < 1e-6, "{sm:?} φ' at {r}");
                let dp = k.radial_derivatives(r + step).unwrap().first;
                let dm = k.radial_derivatives(r - step).unwrap().first;
                assert!(
                    rel_err(d.second, (dp - dm) / (2.0 * step)) < 1e-6,
                    "{sm:?} φ'' at {r}"
                );
            }
        }

        fn printed_or(k: &WendlandKernel, r: f64) -> f64 {
            k.radial_value(r).unwrap()
        }
    }

    #[test]
    fn sobolev_orders() {
        assert_eq!(WendlandKernel::c6_2d().sobolev_order(), 4.5);
        assert_eq!(
            WendlandKernel::new(Smoothness::C4, 2).unwrap().sobolev_order(),
            3.5
        );
        assert_eq!(
            WendlandKernel::new(Smoothness::C2, 3).unwrap().sobolev_order(),
            3.0
        );
        assert!(WendlandKernel::new(Smoothness::C6, 4).is_err());
        assert!(WendlandKernel::new(Smoothness::C6, 0).is_err());
    }

    #[test]
    fn scaled_value_examples() {
        let k = ScaledKernel::new(WendlandKernel::c6_2d(), 2.0).unwrap();
        let o = Point2::xy(0.3, 0.4);
        assert_eq!(k.value(&o, &o), 0.25);
        assert_eq!(
            k.value(&Point2::xy(0.0, 0.0), &Point2::xy(1.0, 0.0)),
            0.014892578125
        );
        let small = ScaledKernel::new(WendlandKernel::c6_2d(), 0.1).unwrap();
        assert_eq!(small.value(&Point2::xy(0.0, 0.0), &Point2::xy(0.2, 0.0)), 0.0);
        assert!(ScaledKernel::new(WendlandKernel::c6_2d(), 0.0).is_err());
        assert!(ScaledKernel::new(WendlandKernel::c6_2d(), f64::NAN).is_err());
    }

    #[test]
    fn laplacian_at_coincident_points() {
        let k = ScaledKernel::new(WendlandKernel::c6_2d(), 2.0).unwrap();
        let lap = EllipticOperator::<2>::laplacian();
        let x = Point2::xy(0.5, 0.5);
        let phi2_0 = k.base().radial_derivatives(0.0).unwrap().second;
        assert_eq!(k.apply_operator(&lap, &x, &x).unwrap(), phi2_0 / 8.0);
    }

    fn fd_laplacian(k: &ScaledKernel, x: Point2, y: Point2, h: f64) -> f64 {
        let v = |dx: f64, dy: f64| k.value(&Point2::xy(x.x() + dx, x.y() + dy), &y);
        (v(h, 0.0) + v(-h, 0.0) + v(0.0, h) + v(0.0, -h) - 4.0 * v(0.0, 0.0)) / (h * h)
    }

    #[test]
    fn laplacian_matches_five_point_stencil() {
        let k = ScaledKernel::new(WendlandKernel::c6_2d(), 2.0).unwrap();
        let lap = EllipticOperator::<2>::laplacian();
        let y = Point2::xy(0.2, 0.1);
        let x = Point2::xy(0.2 + 0.6, 0.1 + 0.8);
        let exact = k.apply_operator(&lap, &x, &y).unwrap();
        assert!(rel_err(exact, fd_laplacian(&k, x, y, 1e-4)) < 1e-5);
    }

    #[test]
    fn operator_vanishes_outside_support() {
        let k = ScaledKernel::new(WendlandKernel::c6_2d(), 0.3).unwrap();
        let lap = EllipticOperator::<2>::laplacian();
        let y = Point2::xy(0.0, 0.0);
        for x in [Point2::xy(0.3, 0.0), Point2::xy(0.25, 0.25), Point2::xy(1.0, 1.0)] {
            assert_eq!(k.apply_operator(&lap, &x, &y).unwrap(), 0.0);
            assert_eq!(k.value(&x, &y), 0.0);
        }
    }

    #[test]
    fn general_operator_matches_finite_differences() {
        use crate::problem::Coefficient;
        let op = EllipticOperator::<2>::new(
            [
                [Coefficient::constant(2.0), Coefficient::constant(0.3)],
                [Coefficient::constant(0.3), Coefficient::field(|p| 1.0 + p.x())],
            ],
            [Coefficient::constant(-0.7), Coefficient::field(|p| p.y())],
            Coefficient::constant(1.5),
        );
        let k = ScaledKernel::new(WendlandKernel::c6_2d(), 0.9).unwrap();
        let y = Point2::xy(0.35, 0.4);
        let x = Point2::xy(0.6, 0.2);
        let h = 1e-4;
        let v = |dx: f64, dy: f64| k.value(&Point2::xy(x.x() + dx, x.y() + dy), &y);
        let uxx = (v(h, 0.0) - 2.0 * v(0.0, 0.0) + v(-h, 0.0)) / (h * h);
        let uyy = (v(0.0, h) - 2.0 * v(0.0, 0.0) + v(0.0, -h)) / (h * h);
        let uxy = (v(h, h) - v(h, -h) - v(-h, h) + v(-h, -h)) / (4.0 * h * h);
        let ux = (v(h, 0.0) - v(-h, 0.0)) / (2.0 * h);
        let uy = (v(0.0, h) - v(0.0, -h)) / (2.0 * h);
        let fd =
            2.0 * uxx + 2.0 * 0.3 * uxy + (1.0 + x.x()) * uyy - 0.7 * ux + x.y() * uy + 1.5 * v(0.0, 0.0);
        let got = k.apply_operator(&op, &x, &y).unwrap();
        assert!(rel_err(got, fd) < 1e-5, "{got} vs {fd}");
    }

    #[test]
    fn gram_matrix_is_positive_definite() {
        // Cholesky without pivoting succeeds iff the matrix is SPD.
        let k = ScaledKernel::new(WendlandKernel::c6_2d(), 0.8).unwrap();
        let pts = [
            Point2::xy(0.1, 0.2),
            Point2::xy(0.5, 0.5),
            Point2::xy(0.9, 0.1),
            Point2::xy(0.3, 0.8),
            Point2::xy(0.55, 0.45),
        ];
        let n = pts.len();
        let mut g = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                g[i][j] = k.value(&pts[i], &pts[j]);
            }
        }
        for j in 0..n {
            for p in 0..j {
                let l = g[j][p];
                for i in j..n {
                    g[i][j] -= g[i][p] * l;
                }
            }
            assert!(g[j][j] > 0.0, "pivot {j} = {}", g[j][j]);
            let piv = g[j][j].sqrt();
            for i in j..n {
                g[i][j] /= piv;
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric_in_its_arguments(
            x in prop::array::uniform2(-2.0f64..2.0),
            y in prop::array::uniform2(-2.0f64..2.0),
            delta in 0.05f64..3.0,
        ) {
            let k = ScaledKernel::new(WendlandKernel::c6_2d(), delta).unwrap();
            let (x, y) = (Point2::from(x), Point2::from(y));
            prop_assert_eq!(k.value(&x, &y).to_bits(), k.value(&y, &x).to_bits());
        }

        #[test]
        fn compact_support(
            x in prop::array::uniform2(-2.0f64..2.0),
            y in prop::array::uniform2(-2.0f64..2.0),
            delta in 0.05f64..3.0,
        ) {
            let k = ScaledKernel::new(WendlandKernel::c6_2d(), delta).unwrap();
            let (x, y) = (Point2::from(x), Point2::from(y));
            if x.distance(&y) >= delta {
                let lap = EllipticOperator::<2>::laplacian();
                prop_assert_eq!(k.value(&x, &y), 0.0);
                prop_assert_eq!(k.apply_operator(&lap, &x, &y).unwrap(), 0.0);
            }
        }

        #[test]
        fn scaling_identity(r in 0.0f64..4.0, delta in 0.05f64..3.0) {
            let unit = ScaledKernel::new(WendlandKernel::c6_2d(), 1.0).unwrap();
            let k = ScaledKernel::new(WendlandKernel::c6_2d(), delta).unwrap();
            let lhs = k.value_at_distance(r);
            let rhs = delta.powi(-2) * unit.value_at_distance(r / delta);
            prop_assert!((lhs - rhs).abs() <= 1e-14 * rhs.abs().max(1e-300) + 1e-300);
        }

        #[test]
        fn nonincreasing_on_the_support(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let k = WendlandKernel::c6_2d();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(k.radial_value(hi).unwrap() <= k.radial_value(lo).unwrap());
        }
    }
}
