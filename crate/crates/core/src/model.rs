//! Model descriptors: the quadruple (L, β, α; D) from a closed coefficient catalog.
//!
//! `L = ½∇·a∇ + b·∇` with constant diffusion matrix `a` and a drift from the
//! catalog; `beta` is the mass-creation rate, `alpha` the intensity of the
//! quadratic branching term. Coefficients serialize as tagged JSON objects,
//! e.g. `{"type": "power", "c0": 1.0, "c1": 1.0, "p": 1.0}`.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Scalar coefficient catalog, used for β, α and test functions g.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Coefficient {
    /// `c` everywhere.
    Constant { c: f64 },
    /// `c0 + c1·|x|^p`.
    Power { c0: f64, c1: f64, p: f64 },
    /// `slope·x₁`, signed; only meaningful in one dimension.
    Linear { slope: f64 },
    /// Smooth compactly supported bump `height·exp(1 − 1/(1 − r²))`, `r = |x − center|/radius`.
    Bump {
        center: f64,
        radius: f64,
        height: f64,
    },
    /// `height·exp(−|x − center|²/(2 width²))`.
    Gaussian {
        center: f64,
        width: f64,
        height: f64,
    },
}

impl Coefficient {
    pub const fn constant(c: f64) -> Self {
        Coefficient::Constant { c }
    }

    pub const fn power(c0: f64, c1: f64, p: f64) -> Self {
        Coefficient::Power { c0, c1, p }
    }

    pub const fn bump(center: f64, radius: f64, height: f64) -> Self {
        Coefficient::Bump {
            center,
            radius,
            height,
        }
    }

    /// Evaluate at a point given by its coordinates.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Coefficient::Constant { c } => c,
            Coefficient::Linear { slope } => slope * x[0],
            _ => {
                let r2 = self.radial_sq(x);
                self.eval_radial_sq(r2)
            }
        }
    }

    /// One-dimensional evaluation.
    #[inline]
    pub fn eval1(&self, x: f64) -> f64 {
        match *self {
            Coefficient::Constant { c } => c,
            Coefficient::Linear { slope } => slope * x,
            Coefficient::Power { c0, c1, p } => {
                if p == 0.0 {
                    c0 + c1
                } else if p == 1.0 {
                    c0 + c1 * x.abs()
                } else if p == 2.0 {
                    c0 + c1 * x * x
                } else {
                    c0 + c1 * x.abs().powf(p)
                }
            }
            Coefficient::Bump { center, .. } | Coefficient::Gaussian { center, .. } => {
                let d = x - center;
                self.eval_radial_sq(d * d)
            }
        }
    }

    fn radial_sq(&self, x: &[f64]) -> f64 {
        let c = match *self {
            Coefficient::Bump { center, .. } | Coefficient::Gaussian { center, .. } => center,
            _ => 0.0,
        };
        x.iter().map(|v| (v - c) * (v - c)).sum()
    }

    fn eval_radial_sq(&self, r2: f64) -> f64 {
        match *self {
            Coefficient::Power { c0, c1, p } => {
                if p == 0.0 {
                    c0 + c1
                } else if p == 2.0 {
                    c0 + c1 * r2
                } else {
                    c0 + c1 * r2.powf(p / 2.0)
                }
            }
            Coefficient::Bump { radius, height, .. } => {
                let s = r2 / (radius * radius);
                if s >= 1.0 {
                    0.0
                } else {
                    height * (1.0 - 1.0 / (1.0 - s)).exp()
                }
            }
            Coefficient::Gaussian { width, height, .. } => {
                height * (-r2 / (2.0 * width * width)).exp()
            }
            Coefficient::Constant { c } => c,
            Coefficient::Linear { .. } => unreachable!("linear coefficient is not radial"),
        }
    }

    /// Exact supremum over `|x| ≤ radius` (one-dimensional ball around 0).
    pub fn sup_abs_on(&self, radius: f64) -> f64 {
        match *self {
            Coefficient::Constant { c } => c.abs(),
            Coefficient::Linear { slope } => slope.abs() * radius,
            Coefficient::Power { c0, c1, p } => {
                let edge = c0 + c1 * radius.powf(p);
                let mid = c0 + if p == 0.0 { c1 } else { 0.0 };
                edge.abs().max(mid.abs())
            }
            Coefficient::Bump { height, .. } | Coefficient::Gaussian { height, .. } => height.abs(),
        }
    }

    /// True for bounded, nonnegative catalog entries that vanish outside a compact set.
    pub fn compact_support(&self) -> Option<(f64, f64)> {
        match *self {
            Coefficient::Bump { center, radius, .. } => Some((center - radius, center + radius)),
            _ => None,
        }
    }

    pub fn is_constant(&self) -> Option<f64> {
        match *self {
            Coefficient::Constant { c } => Some(c),
            Coefficient::Power { c0, c1, p } if p == 0.0 || c1 == 0.0 => {
                Some(if p == 0.0 { c0 + c1 } else { c0 })
            }
            _ => None,
        }
    }
}

/// Drift catalog for `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Drift {
    Zero,
    Constant { b: Vec<f64> },
    /// Componentwise polynomial `b_i(x) = Σ_k coeffs[k]·x_i^k`.
    Polynomial { coeffs: Vec<f64> },
}

impl Drift {
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Drift::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            Drift::Constant { b } => out.copy_from_slice(b),
            Drift::Polynomial { coeffs } => {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = coeffs.iter().rev().fold(0.0, |acc, &c| acc * xi + c);
                }
            }
        }
    }

    #[inline]
    pub fn eval1(&self, x: f64) -> f64 {
        match self {
            Drift::Zero => 0.0,
            Drift::Constant { b } => b[0],
            Drift::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Drift::Zero => true,
            Drift::Constant { b } => b.iter().all(|v| *v == 0.0),
            Drift::Polynomial { coeffs } => coeffs.iter().all(|v| *v == 0.0),
        }
    }
}

/// Diffusion catalog for the constant matrix `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Diffusion {
    /// `a = σ²·Id`.
    Scalar { sigma2: f64 },
    /// Full symmetric positive definite matrix, row major.
    Matrix { a: Vec<Vec<f64>> },
}

impl Diffusion {
    /// The scalar `a` in one dimension.
    pub fn scalar1(&self) -> f64 {
        match self {
            Diffusion::Scalar { sigma2 } => *sigma2,
            Diffusion::Matrix { a } => a[0][0],
        }
    }

    /// Lower Cholesky factor of `a` (the square-root used for increments).
    pub fn cholesky(&self, dim: usize) -> Result<Vec<f64>> {
        match self {
            Diffusion::Scalar { sigma2 } => {
                let mut l = vec![0.0; dim * dim];
                for i in 0..dim {
                    l[i * dim + i] = sigma2.sqrt();
                }
                Ok(l)
            }
            Diffusion::Matrix { a } => {
                let mut l = vec![0.0; dim * dim];
                for i in 0..dim {
                    for j in 0..=i {
                        let mut s = a[i][j];
                        for k in 0..j {
                            s -= l[i * dim + k] * l[j * dim + k];
                        }
                        if i == j {
                            if s <= 0.0 {
                                return Err(Error::Model("diffusion matrix is not positive definite".into()));
                            }
                            l[i * dim + i] = s.sqrt();
                        } else {
                            l[i * dim + j] = s / l[j * dim + j];
                        }
                    }
                }
                Ok(l)
            }
        }
    }
}

/// Spatial domain D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Domain {
    WholeSpace,
    Interval { lo: f64, hi: f64 },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Domain {
    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::WholeSpace => true,
            Domain::Interval { lo, hi } => x[0] > *lo && x[0] < *hi,
            Domain::Ball { center, radius } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                r2 < radius * radius
            }
        }
    }

    #[inline]
    pub fn contains1(&self, x: f64) -> bool {
        match self {
            Domain::WholeSpace => true,
            Domain::Interval { lo, hi } => x > *lo && x < *hi,
            Domain::Ball { center, radius } => (x - center[0]).abs() < *radius,
        }
    }

    pub fn is_whole_space(&self) -> bool {
        matches!(self, Domain::WholeSpace)
    }
}

/// Flags attached to a validated model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelFlags {
    /// β grows quadratically: `T_t 1` is finite only up to a finite time.
    pub explosive_expectation: bool,
}

/// The quadruple (L, β, α; D) in dimension `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dim: usize,
    #[serde(default = "default_drift")]
    pub drift: Drift,
    #[serde(default = "default_diffusion")]
    pub diffusion: Diffusion,
    pub beta: Coefficient,
    #[serde(default = "default_alpha")]
    pub alpha: Coefficient,
    #[serde(default = "default_domain")]
    pub domain: Domain,
}

fn default_drift() -> Drift {
    Drift::Zero
}
fn default_diffusion() -> Diffusion {
    Diffusion::Scalar { sigma2: 1.0 }
}
fn default_alpha() -> Coefficient {
    Coefficient::constant(1.0)
}
fn default_domain() -> Domain {
    Domain::WholeSpace
}

impl ModelSpec {
    /// Standard Brownian motion (`L = ½Δ`) on the whole space.
    pub fn brownian(dim: usize, beta: Coefficient, alpha: Coefficient) -> Self {
        Self {
            dim,
            drift: Drift::Zero,
            diffusion: Diffusion::Scalar { sigma2: 1.0 },
            beta,
            alpha,
            domain: Domain::WholeSpace,
        }
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    /// Structural validation of the descriptor. Returns the model flags.
    pub fn validate(&self) -> Result<ModelFlags> {
        if self.dim == 0 {
            return Err(param("dim", "must be positive"));
        }
        match &self.drift {
            Drift::Constant { b } if b.len() != self.dim => {
                return Err(param("drift", "constant drift must have `dim` components"))
            }
            _ => {}
        }
        match &self.diffusion {
            Diffusion::Scalar { sigma2 } if !(*sigma2 > 0.0 && sigma2.is_finite()) => {
                return Err(param("diffusion", "sigma2 must be positive"))
            }
            Diffusion::Matrix { a } => {
                if a.len() != self.dim || a.iter().any(|r| r.len() != self.dim) {
                    return Err(param("diffusion", "matrix must be dim x dim"));
                }
                self.diffusion.cholesky(self.dim)?;
            }
            _ => {}
        }
        match &self.domain {
            Domain::Interval { lo, hi } => {
                if self.dim != 1 {
                    return Err(param("domain", "interval domains are one-dimensional"));
                }
                if !(lo < hi) {
                    return Err(param("domain", "interval requires lo < hi"));
                }
            }
            Domain::Ball { center, radius } => {
                if center.len() != self.dim || !(*radius > 0.0) {
                    return Err(param("domain", "ball needs a dim-vector center and positive radius"));
                }
            }
            Domain::WholeSpace => {}
        }
        let mut flags = ModelFlags::default();
        if let Coefficient::Power { p, .. } = self.beta {
            if !(0.0..=2.0).contains(&p) {
                return Err(param("beta", "power exponent must lie in [0, 2]"));
            }
            if p == 2.0 {
                flags.explosive_expectation = true;
            }
        }
        if matches!(self.beta, Coefficient::Linear { .. }) && self.dim != 1 {
            return Err(param("beta", "signed linear beta is one-dimensional"));
        }
        match self.alpha {
            Coefficient::Constant { c } if c <= 0.0 => return Err(param("alpha", "alpha must be > 0")),
            Coefficient::Power { c0, c1, p } => {
                if c0 <= 0.0 || c1 < 0.0 {
                    return Err(param("alpha", "alpha must be > 0 (need c0 > 0, c1 >= 0)"));
                }
                if p < 0.0 {
                    return Err(param("alpha", "power exponent must be nonnegative"));
                }
            }
            Coefficient::Linear { .. } | Coefficient::Bump { .. } => {
                return Err(param("alpha", "alpha must be strictly positive on D"))
            }
            Coefficient::Gaussian { height, .. } if height <= 0.0 => {
                return Err(param("alpha", "alpha must be > 0"))
            }
            _ => {}
        }
        Ok(flags)
    }

    /// Pointwise check of α > 0 and finiteness of β, α at a touched point.
    #[inline]
    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        let b = self.beta.eval(x);
        let a = self.alpha.eval(x);
        if !b.is_finite() || !a.is_finite() {
            return Err(Error::Model(format!("non-finite coefficient at {x:?}")));
        }
        if a <= 0.0 {
            return Err(Error::Model(format!("alpha <= 0 at {x:?}")));
        }
        Ok(())
    }

    /// True when the motion is a scaled Brownian motion (exact Gaussian increments).
    pub fn is_brownian(&self) -> bool {
        self.drift.is_zero() && matches!(self.diffusion, Diffusion::Scalar { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_evaluation() {
        let b = Coefficient::power(1.0, 1.0, 1.0);
        assert_eq!(b.eval1(-3.0), 4.0);
        assert_eq!(b.eval(&[3.0, 4.0]), 6.0);
        let q = Coefficient::power(1.0, 1.0, 2.0);
        assert_eq!(q.eval1(3.0), 10.0);
        assert_eq!(Coefficient::bump(0.0, 1.0, 1.0).eval1(0.0), 1.0);
        assert_eq!(Coefficient::bump(0.0, 1.0, 1.0).eval1(1.0), 0.0);
        assert_eq!(Coefficient::Linear { slope: 1.0 }.eval1(-2.0), -2.0);
    }

    #[test]
    fn validation_flags_and_errors() {
        let m = ModelSpec::brownian(1, Coefficient::power(1.0, 1.0, 2.0), Coefficient::constant(1.0));
        assert!(m.validate().unwrap().explosive_expectation);
        let bad = ModelSpec::brownian(1, Coefficient::power(0.0, 1.0, 2.5), Coefficient::constant(1.0));
        assert!(bad.validate().is_err());
        let bad_alpha = ModelSpec::brownian(1, Coefficient::constant(1.0), Coefficient::constant(0.0));
        assert!(bad_alpha.validate().is_err());
    }

    #[test]
    fn json_shape() {
        let m = ModelSpec::brownian(1, Coefficient::power(1.0, 1.0, 1.0), Coefficient::constant(1.0));
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"type\":\"power\""));
        let back: ModelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let minimal: ModelSpec =
            serde_json::from_str(r#"{"dim":1,"beta":{"type":"constant","c":0.0}}"#).unwrap();
        assert!(minimal.is_brownian());
    }

    #[test]
    fn cholesky_of_matrix() {
        let d = Diffusion::Matrix {
            a: vec![vec![4.0, 2.0], vec![2.0, 3.0]],
        };
        let l = d.cholesky(2).unwrap();
        assert!((l[0] - 2.0).abs() < 1e-12);
        assert!((l[2] - 1.0).abs() < 1e-12);
        assert!((l[3] - 2f64.sqrt()).abs() < 1e-12);
    }
}
