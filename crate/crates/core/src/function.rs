//! Closed registry of per-agent scalar functions.
//!
//! Every objective and constraint summand is one of a handful of parametric
//! families with exact first and second derivatives. Keeping the set closed
//! means problem descriptions stay declarative (they deserialize straight from
//! config files) and the oracle can use exact Hessians.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar function `R^n -> R` with exact gradient and Hessian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScalarFunction {
    /// The zero function; used by agents that do not contribute to a constraint.
    Zero,
    /// `c + b.x`
    Affine { linear: Vec<f64>, constant: f64 },
    /// `c + b.x + 1/2 x' Q x` with `Q` given row-major (`n*n` entries).
    ///
    /// `Q` must be symmetric; it is symmetrized on evaluation regardless.
    Quadratic {
        hessian: Vec<f64>,
        linear: Vec<f64>,
        constant: f64,
    },
    /// `c + s * exp(a.x + b)`; convex whenever `s >= 0`.
    ExpAffine {
        scale: f64,
        exponent: Vec<f64>,
        offset: f64,
        constant: f64,
    },
    /// Pointwise sum of terms.
    Sum { terms: Vec<ScalarFunction> },
}

fn dot(a: &[f64], x: &[f64]) -> f64 {
    a.iter().zip(x).map(|(a, x)| a * x).sum()
}

impl ScalarFunction {
    /// `1/2 |x - center|^2`
    pub fn half_squared_distance(center: &[f64]) -> Self {
        let n = center.len();
        let mut hessian = vec![0.0; n * n];
        for d in 0..n {
            hessian[d * n + d] = 1.0;
        }
        ScalarFunction::Quadratic {
            hessian,
            linear: center.iter().map(|c| -c).collect(),
            constant: 0.5 * dot(center, center),
        }
    }

    pub fn affine(linear: Vec<f64>, constant: f64) -> Self {
        ScalarFunction::Affine { linear, constant }
    }

    /// Checks that every coefficient vector matches dimension `n`.
    pub fn check_dim(&self, n: usize) -> Result<()> {
        let bad = |what: &str, got: usize| {
            Err(Error::Dimension(format!(
                "{what} has length {got}, expected {}",
                if what == "hessian" { n * n } else { n }
            )))
        };
        match self {
            ScalarFunction::Zero => Ok(()),
            ScalarFunction::Affine { linear, .. } => {
                if linear.len() != n {
                    return bad("linear", linear.len());
                }
                Ok(())
            }
            ScalarFunction::Quadratic {
                hessian, linear, ..
            } => {
                if hessian.len() != n * n {
                    return bad("hessian", hessian.len());
                }
                if linear.len() != n {
                    return bad("linear", linear.len());
                }
                Ok(())
            }
            ScalarFunction::ExpAffine { exponent, .. } => {
                if exponent.len() != n {
                    return bad("exponent", exponent.len());
                }
                Ok(())
            }
            ScalarFunction::Sum { terms } => terms.iter().try_for_each(|t| t.check_dim(n)),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ScalarFunction::Zero => 0.0,
            ScalarFunction::Affine { linear, constant } => constant + dot(linear, x),
            ScalarFunction::Quadratic {
                hessian,
                linear,
                constant,
            } => {
                let n = x.len();
                let mut quad = 0.0;
                for r in 0..n {
                    for c in 0..n {
                        quad += x[r] * hessian[r * n + c] * x[c];
                    }
                }
                constant + dot(linear, x) + 0.5 * quad
            }
            ScalarFunction::ExpAffine {
                scale,
                exponent,
                offset,
                constant,
            } => constant + scale * (dot(exponent, x) + offset).exp(),
            ScalarFunction::Sum { terms } => terms.iter().map(|t| t.value(x)).sum(),
        }
    }

    /// Writes the gradient at `x` into `out` (overwriting it).
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.add_gradient(x, 1.0, out);
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.add_gradient(x, 1.0, &mut g);
        g
    }

    /// `out += weight * grad(x)`
    pub fn add_gradient(&self, x: &[f64], weight: f64, out: &mut [f64]) {
        match self {
            ScalarFunction::Zero => {}
            ScalarFunction::Affine { linear, .. } => {
                for (o, a) in out.iter_mut().zip(linear) {
                    *o += weight * a;
                }
            }
            ScalarFunction::Quadratic {
                hessian, linear, ..
            } => {
                let n = x.len();
                for r in 0..n {
                    let mut acc = linear[r];
                    for c in 0..n {
                        acc += 0.5 * (hessian[r * n + c] + hessian[c * n + r]) * x[c];
                    }
                    out[r] += weight * acc;
                }
            }
            ScalarFunction::ExpAffine {
                scale,
                exponent,
                offset,
                ..
            } => {
                let e = scale * (dot(exponent, x) + offset).exp();
                for (o, a) in out.iter_mut().zip(exponent) {
                    *o += weight * e * a;
                }
            }
            ScalarFunction::Sum { terms } => {
                for t in terms {
                    t.add_gradient(x, weight, out);
                }
            }
        }
    }

    /// `out += weight * hess(x)` for an `n x n` block of `out` starting at `(offset, offset)`.
    pub fn add_hessian(&self, x: &[f64], weight: f64, out: &mut DMatrix<f64>, offset: usize) {
        let n = x.len();
        match self {
            ScalarFunction::Zero | ScalarFunction::Affine { .. } => {}
            ScalarFunction::Quadratic { hessian, .. } => {
                for r in 0..n {
                    for c in 0..n {
                        out[(offset + r, offset + c)] +=
                            weight * 0.5 * (hessian[r * n + c] + hessian[c * n + r]);
                    }
                }
            }
            ScalarFunction::ExpAffine {
                scale,
                exponent,
                offset: b,
                ..
            } => {
                let e = scale * (dot(exponent, x) + b).exp();
                for r in 0..n {
                    for c in 0..n {
                        out[(offset + r, offset + c)] += weight * e * exponent[r] * exponent[c];
                    }
                }
            }
            ScalarFunction::Sum { terms } => {
                for t in terms {
                    t.add_hessian(x, weight, out, offset);
                }
            }
        }
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(x.len(), x.len());
        self.add_hessian(x, 1.0, &mut h, 0);
        h
    }

    /// True for functions whose gradient is constant by construction.
    pub fn is_affine(&self) -> bool {
        match self {
            ScalarFunction::Zero | ScalarFunction::Affine { .. } => true,
            ScalarFunction::Quadratic { hessian, .. } => hessian.iter().all(|h| *h == 0.0),
            ScalarFunction::ExpAffine {
                scale, exponent, ..
            } => *scale == 0.0 || exponent.iter().all(|a| *a == 0.0),
            ScalarFunction::Sum { terms } => terms.iter().all(|t| t.is_affine()),
        }
    }

    /// Structural convexity: PSD quadratic part, nonnegative exponential scales.
    pub fn is_convex(&self) -> bool {
        match self {
            ScalarFunction::Zero | ScalarFunction::Affine { .. } => true,
            ScalarFunction::Quadratic { hessian, .. } => {
                let n = (hessian.len() as f64).sqrt().round() as usize;
                let sym =
                    DMatrix::from_fn(n, n, |r, c| 0.5 * (hessian[r * n + c] + hessian[c * n + r]));
                sym.symmetric_eigenvalues().iter().all(|l| *l >= -1e-12)
            }
            ScalarFunction::ExpAffine { scale, .. } => *scale >= 0.0,
            ScalarFunction::Sum { terms } => terms.iter().all(|t| t.is_convex()),
        }
    }
}

/// Central finite-difference gradient, for checking registered gradients.
pub fn finite_difference_gradient(f: &ScalarFunction, x: &[f64], step: f64) -> DVector<f64> {
    let mut probe = x.to_vec();
    DVector::from_fn(x.len(), |d, _| {
        let orig = probe[d];
        probe[d] = orig + step;
        let up = f.value(&probe);
        probe[d] = orig - step;
        let down = f.value(&probe);
        probe[d] = orig;
        (up - down) / (2.0 * step)
    })
}
