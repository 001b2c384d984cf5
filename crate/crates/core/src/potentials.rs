//! Pair potentials and inverse-temperature schedules.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cutoff for the convexified cosine.
pub const DEFAULT_DELTA: f64 = FRAC_PI_4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    /// `-cos x`
    Cosine,
    /// `-cos x` on `|x| <= delta`, continued by its second-order Taylor
    /// polynomial at `±delta` outside.
    TruncatedConvex { delta: f64 },
    /// `x²/2`
    Quadratic,
    /// `x²/2 + λx⁴`
    Anharmonic { lambda: f64 },
}

/// A pair potential, optionally rescaled to `β V(x/√β)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Potential {
    family: Family,
    /// `β` of the rescaling; `1.0` for the bare potential.
    scale: f64,
}

/// `(V, V', V'')` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

impl Potential {
    pub fn cosine() -> Self {
        Self { family: Family::Cosine, scale: 1.0 }
    }

    pub fn quadratic() -> Self {
        Self { family: Family::Quadratic, scale: 1.0 }
    }

    /// Requires `delta ∈ (0, π/2)`.
    pub fn truncated_convex(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < FRAC_PI_2) {
            return Err(Error::InvalidParameter(format!("delta must lie in (0, pi/2), got {delta}")));
        }
        Ok(Self { family: Family::TruncatedConvex { delta }, scale: 1.0 })
    }

    pub fn anharmonic(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { family: Family::Anharmonic { lambda }, scale: 1.0 })
    }

    pub fn from_family(family: Family) -> Result<Self> {
        match family {
            Family::Cosine => Ok(Self::cosine()),
            Family::Quadratic => Ok(Self::quadratic()),
            Family::TruncatedConvex { delta } => Self::truncated_convex(delta),
            Family::Anharmonic { lambda } => Self::anharmonic(lambda),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn delta(&self) -> Option<f64> {
        match self.family {
            Family::TruncatedConvex { delta } => Some(delta),
            _ => None,
        }
    }

    /// `x ↦ β V(x/√β)`. The quadratic potential is a fixed point.
    pub fn rescaled(&self, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::NonPositiveBeta(beta));
        }
        if self.family == Family::Quadratic {
            return Ok(*self);
        }
        Ok(Self { family: self.family, scale: self.scale * beta })
    }

    pub fn is_convex(&self) -> bool {
        self.family != Family::Cosine
    }

    /// `V''` is constant (the Gaussian case).
    pub fn has_constant_curvature(&self) -> bool {
        match self.family {
            Family::Quadratic => true,
            Family::Anharmonic { lambda } => lambda == 0.0,
            _ => false,
        }
    }

    /// `inf V''`, when the family is convex.
    pub fn c_minus(&self) -> Option<f64> {
        match self.family {
            Family::Cosine => None,
            Family::TruncatedConvex { delta } => Some(delta.cos()),
            Family::Quadratic | Family::Anharmonic { .. } => Some(1.0),
        }
    }

    /// `sup V''`, when finite.
    pub fn c_plus(&self) -> Option<f64> {
        match self.family {
            Family::Cosine => None,
            Family::TruncatedConvex { .. } | Family::Quadratic => Some(1.0),
            Family::Anharmonic { lambda } if lambda == 0.0 => Some(1.0),
            Family::Anharmonic { .. } => None,
        }
    }

    /// Whether the cutoff lies in `(0, π/3]`, where the convex contour
    /// estimate applies.
    pub fn supports_contour_bound(&self) -> bool {
        matches!(self.family, Family::TruncatedConvex { delta } if delta <= FRAC_PI_3 + 1e-15)
    }

    #[inline]
    fn bare_value(&self, x: f64) -> f64 {
        match self.family {
            Family::Cosine => -x.cos(),
            Family::Quadratic => 0.5 * x * x,
            Family::Anharmonic { lambda } => {
                let x2 = x * x;
                0.5 * x2 + lambda * x2 * x2
            }
            Family::TruncatedConvex { delta } => {
                let a = x.abs();
                if a <= delta {
                    -x.cos()
                } else {
                    let u = a - delta;
                    -delta.cos() + delta.sin() * u + 0.5 * delta.cos() * u * u
                }
            }
        }
    }

    #[inline]
    fn bare_first(&self, x: f64) -> f64 {
        match self.family {
            Family::Cosine => x.sin(),
            Family::Quadratic => x,
            Family::Anharmonic { lambda } => x + 4.0 * lambda * x * x * x,
            Family::TruncatedConvex { delta } => {
                let a = x.abs();
                if a <= delta {
                    x.sin()
                } else {
                    (delta.sin() + delta.cos() * (a - delta)).copysign(x)
                }
            }
        }
    }

    #[inline]
    fn bare_second(&self, x: f64) -> f64 {
        match self.family {
            Family::Cosine => x.cos(),
            Family::Quadratic => 1.0,
            Family::Anharmonic { lambda } => 1.0 + 12.0 * lambda * x * x,
            Family::TruncatedConvex { delta } => {
                if x.abs() <= delta {
                    x.cos()
                } else {
                    delta.cos()
                }
            }
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        if self.scale == 1.0 {
            self.bare_value(x)
        } else {
            self.scale * self.bare_value(x / self.scale.sqrt())
        }
    }

    #[inline]
    pub fn first(&self, x: f64) -> f64 {
        if self.scale == 1.0 {
            self.bare_first(x)
        } else {
            let s = self.scale.sqrt();
            s * self.bare_first(x / s)
        }
    }

    #[inline]
    pub fn second(&self, x: f64) -> f64 {
        if self.scale == 1.0 {
            self.bare_second(x)
        } else {
            self.bare_second(x / self.scale.sqrt())
        }
    }

    pub fn eval(&self, x: f64) -> Evaluation {
        Evaluation { value: self.value(x), first: self.first(x), second: self.second(x) }
    }

    /// `V(to) - V(from)`, evaluated without subtracting nearly equal
    /// numbers where the family allows it.
    #[inline]
    pub fn difference(&self, from: f64, to: f64) -> f64 {
        let s = self.scale.sqrt();
        let (u, w) = if self.scale == 1.0 { (from, to) } else { (from / s, to / s) };
        let bare = match self.family {
            Family::Cosine => cos_gap(u, w),
            Family::Quadratic => 0.5 * (w - u) * (w + u),
            Family::Anharmonic { lambda } => {
                let (u2, w2) = (u * u, w * w);
                (w - u) * (w + u) * (0.5 + lambda * (w2 + u2))
            }
            Family::TruncatedConvex { delta } => {
                if u.abs() <= delta && w.abs() <= delta {
                    cos_gap(u, w)
                } else {
                    self.bare_value(w) - self.bare_value(u)
                }
            }
        };
        self.scale * bare
    }
}

/// `cos u - cos w` as a product of sines.
#[inline]
fn cos_gap(u: f64, w: f64) -> f64 {
    2.0 * (0.5 * (w + u)).sin() * (0.5 * (w - u)).sin()
}

/// `β(ε)` as a function of the lattice spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BetaSchedule {
    Constant {
        beta0: f64,
    },
    /// `β(ε) = A + C |log ε|`
    Log {
        #[serde(rename = "A")]
        offset: f64,
        #[serde(rename = "C")]
        slope: f64,
    },
}

/// `β(ε)` together with the margin `β(ε) - 9d|log ε|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaValue {
    pub beta: f64,
    pub margin: f64,
}

impl BetaSchedule {
    /// `β(ε) = 10 + (9d + 1)|log ε|`.
    pub fn default_for(d: usize) -> Self {
        Self::Log { offset: 10.0, slope: 9.0 * d as f64 + 1.0 }
    }

    pub fn beta_at(&self, eps: f64, d: usize) -> Result<BetaValue> {
        let log_eps = match *self {
            Self::Constant { .. } if eps > 0.0 => eps.ln().abs(),
            _ if eps > 0.0 && eps < 1.0 => -eps.ln(),
            _ => return Err(Error::InvalidParameter(format!("eps must lie in (0, 1), got {eps}"))),
        };
        let beta = match *self {
            Self::Constant { beta0 } => beta0,
            Self::Log { offset, slope } => offset + slope * log_eps,
        };
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::NonPositiveBeta(beta));
        }
        Ok(BetaValue { beta, margin: beta - 9.0 * d as f64 * log_eps })
    }

    /// True iff `β(ε) + 9d log ε → ∞` as `ε → 0`.
    pub fn satisfies_growth_condition(&self, d: usize) -> bool {
        match *self {
            Self::Constant { .. } => false,
            Self::Log { slope, .. } => slope > 9.0 * d as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn families() -> Vec<Potential> {
        vec![
            Potential::cosine(),
            Potential::quadratic(),
            Potential::anharmonic(0.0).unwrap(),
            Potential::anharmonic(0.7).unwrap(),
            Potential::truncated_convex(FRAC_PI_4).unwrap(),
            Potential::truncated_convex(FRAC_PI_3).unwrap(),
            Potential::truncated_convex(1.4).unwrap(),
            Potential::truncated_convex(FRAC_PI_4).unwrap().rescaled(37.0).unwrap(),
            Potential::anharmonic(0.1).unwrap().rescaled(5.0).unwrap(),
        ]
    }

    fn grid() -> impl Iterator<Item = f64> {
        (-400..=400).map(|k| k as f64 * 0.0137)
    }

    #[test]
    fn truncated_examples() {
        let v = Potential::truncated_convex(FRAC_PI_3).unwrap();
        let e = v.eval(0.0);
        assert_eq!((e.value, e.first, e.second), (-1.0, 0.0, 1.0));
        let d = FRAC_PI_3;
        let expected = -d.cos() + d.sin() * (PI - d) + 0.5 * d.cos() * (PI - d).powi(2);
        assert_relative_eq!(v.value(PI), expected, epsilon = 1e-14);
        assert!((v.value(PI) - 2.4104).abs() < 1e-4);
    }

    #[test]
    fn quadratic_example() {
        let e = Potential::quadratic().eval(2.0);
        assert_eq!((e.value, e.first, e.second), (2.0, 2.0, 1.0));
    }

    #[test]
    fn truncated_is_c1_at_cutoff() {
        let delta = FRAC_PI_4;
        let v = Potential::truncated_convex(delta).unwrap();
        for s in [-1.0, 1.0] {
            let x = s * delta;
            let inside = (-x.cos(), x.sin());
            let u = delta - delta;
            let outside =
                (-delta.cos() + delta.sin() * u + 0.5 * delta.cos() * u * u, s * (delta.sin() + delta.cos() * u));
            assert_relative_eq!(inside.0, outside.0, epsilon = 1e-15);
            assert_relative_eq!(inside.1, outside.1, epsilon = 1e-15);
            let h = 1e-9;
            assert_relative_eq!(v.value(x + h), v.value(x - h), epsilon = 1e-8);
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(Potential::truncated_convex(2.0).is_err());
        assert!(Potential::truncated_convex(0.0).is_err());
        assert!(Potential::anharmonic(-0.1).is_err());
        assert!(Potential::cosine().rescaled(0.0).is_err());
    }

    #[test]
    fn finite_differences() {
        let h = 1e-4;
        for p in families() {
            for x in grid() {
                let e = p.eval(x);
                let d1 = (p.value(x + h) - p.value(x - h)) / (2.0 * h);
                let d2 = (p.first(x + h) - p.first(x - h)) / (2.0 * h);
                let scale = 1.0 + e.value.abs() + e.first.abs();
                assert!((d1 - e.first).abs() <= 1e-6 * scale, "{p:?} V' at {x}");
                // V'' of the truncated family jumps at ±δ.
                if let Some(delta) = p.delta() {
                    let c = delta * p.scale().sqrt();
                    if (x.abs() - c).abs() < 2.0 * h {
                        continue;
                    }
                }
                assert!((d2 - e.second).abs() <= 1e-6 * (1.0 + e.second.abs()), "{p:?} V'' at {x}");
            }
        }
    }

    #[test]
    fn convexity_and_comparison_bounds() {
        for delta in [0.3, FRAC_PI_4, FRAC_PI_3, 1.5] {
            let v = Potential::truncated_convex(delta).unwrap();
            for x in grid().map(|x| 3.0 * x) {
                assert!(v.second(x) >= delta.cos() - 1e-12);
                assert!(v.value(x) <= x * x / 2.0 - 1.0 + 1e-12);
                assert!(v.value(x) >= -x.cos() - 1e-12);
            }
        }
        for p in [Potential::quadratic(), Potential::anharmonic(0.3).unwrap()] {
            assert!(grid().all(|x| p.second(x) >= 1.0));
        }
    }

    #[test]
    fn symmetric() {
        for p in families() {
            for x in grid() {
                assert_eq!(p.value(-x), p.value(x));
            }
        }
    }

    #[test]
    fn difference_matches_values() {
        for p in families() {
            for x in grid() {
                let y = 0.37 - 0.8 * x;
                let direct = p.value(y) - p.value(x);
                assert!((p.difference(x, y) - direct).abs() <= 1e-12 * (1.0 + direct.abs() + p.value(x).abs()));
            }
        }
    }

    #[test]
    fn rescaling() {
        let q = Potential::quadratic();
        assert_eq!(q.rescaled(13.0).unwrap(), q);

        let v = Potential::truncated_convex(0.5).unwrap();
        let vt = v.rescaled(4.0).unwrap();
        assert_eq!(vt.second(0.0), 1.0);
        for x in grid() {
            assert_relative_eq!(vt.second(x), v.second(x / 2.0), epsilon = 1e-15);
            assert_relative_eq!(vt.value(x), 4.0 * v.value(x / 2.0), epsilon = 1e-13);
        }
        assert_eq!(vt.c_minus(), v.c_minus());

        let a = Potential::anharmonic(1.0).unwrap().rescaled(100.0).unwrap();
        assert_relative_eq!(a.value(1.0), 0.51, epsilon = 1e-12);
    }

    #[test]
    fn schedules() {
        let log = BetaSchedule::Log { offset: 10.0, slope: 19.0 };
        let b = log.beta_at(1.0 / 32.0, 2).unwrap();
        assert_relative_eq!(b.beta, 10.0 + 19.0 * 32f64.ln(), epsilon = 1e-12);
        assert!((b.beta - 75.85).abs() < 0.01);
        assert!((b.margin - 13.47).abs() < 0.01);
        assert!(log.satisfies_growth_condition(2));

        let c = BetaSchedule::Constant { beta0: 50.0 };
        assert_eq!(c.beta_at(0.01, 3).unwrap().beta, 50.0);
        assert!(!c.satisfies_growth_condition(2));

        assert!(!BetaSchedule::Log { offset: 10.0, slope: 18.0 }.satisfies_growth_condition(2));
        assert!(BetaSchedule::default_for(2).satisfies_growth_condition(2));
        assert_eq!(BetaSchedule::default_for(2), log);

        assert!(matches!(
            BetaSchedule::Log { offset: -100.0, slope: 1.0 }.beta_at(0.5, 2),
            Err(Error::NonPositiveBeta(_))
        ));
        assert!(log.beta_at(1.5, 2).is_err());
    }
}
