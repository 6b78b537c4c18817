//! Bispectrum inversion: Levenberg-Marquardt on the stacked-real residual
//! b(f) - target with the analytic Jacobian.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bispectrum::{bispectrum, bispectrum_jacobian, BispectrumVector};
use crate::clebsch_gordan::CgTable;
use crate::error::{invalid, Error, Result};
use crate::harmonics::{num_coefficients, ShCoefficients};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionOptions {
    pub max_iterations: usize,
    /// Stop when |J^T r|_inf <= tol * |r| * sqrt(max diag J^T J), a
    /// scale-free form of the first-order optimality test.
    pub gradient_tolerance: f64,
    /// Stop when |step| <= tol * (|x| + tol).
    pub step_tolerance: f64,
    /// Stop when |r| <= tol.
    pub residual_tolerance: f64,
    pub damping_init: f64,
    pub damping_factor: f64,
    /// Optimize over the real-function parameterization (f_{l,-m} tied to f_{l,m}).
    pub enforce_real: bool,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
            residual_tolerance: 1e-14,
            damping_init: 1e-3,
            damping_factor: 10.0,
            enforce_real: true,
        }
    }
}

impl InversionOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("gradient_tolerance", self.gradient_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("residual_tolerance", self.residual_tolerance),
            ("damping_init", self.damping_init),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.damping_factor > 1.0) {
            return invalid(format!("damping_factor must exceed 1, got {}", self.damping_factor));
        }
        if self.max_iterations == 0 {
            return invalid("max_iterations must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Residual,
    Gradient,
    Step,
    MaxIterations,
    /// Damping grew without finding a descent step.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub coefficients: ShCoefficients,
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// Residual norm after every accepted step, starting with the initial one.
    pub history: Vec<f64>,
}

/// Parameter <-> coefficient map and the Jacobian chain rule.
struct Param {
    bandlimit: usize,
    real: bool,
}

impl Param {
    fn dim(&self) -> usize {
        let n = num_coefficients(self.bandlimit);
        if self.real {
            n
        } else {
            2 * n
        }
    }

    fn to_params(&self, f: &ShCoefficients) -> Vec<f64> {
        if self.real {
            f.to_real_params()
        } else {
            let c = f.as_slice();
            c.iter().map(|v| v.re).chain(c.iter().map(|v| v.im)).collect()
        }
    }

    fn to_coeffs(&self, p: &[f64]) -> Result<ShCoefficients> {
        if self.real {
            ShCoefficients::from_real_params(self.bandlimit, p)
        } else {
            let n = num_coefficients(self.bandlimit);
            ShCoefficients::new(self.bandlimit, (0..n).map(|i| Complex64::new(p[i], p[n + i])).collect())
        }
    }

    /// Maps Jacobian column `col` (Re/Im of a coefficient) to a parameter
    /// index and multiplier.
    fn column(&self, col: usize) -> Option<(usize, f64)> {
        if !self.real {
            return Some((col, 1.0));
        }
        let n = num_coefficients(self.bandlimit);
        let (i, imag) = if col < n { (col, false) } else { (col - n, true) };
        let l = (i as f64).sqrt() as usize;
        let l = if (l + 1) * (l + 1) <= i { l + 1 } else { l };
        let m = i as i64 - (l * l + l) as i64;
        // per degree: [f_l0, Re f_l1, Im f_l1, ...] starting at l^2
        let base = l * l;
        let k = m.unsigned_abs() as usize;
        if k == 0 {
            return if imag { None } else { Some((base, 1.0)) };
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let idx = base + 2 * k - 1 + usize::from(imag);
        match (m > 0, imag) {
            (true, _) => Some((idx, 1.0)),
            (false, false) => Some((idx, sign)),
            (false, true) => Some((idx, -sign)),
        }
    }
}

struct Linearization {
    cost: f64,
    jtj: DMatrix<f64>,
    grad: DVector<f64>,
}

fn residual(f: &ShCoefficients, target: &BispectrumVector, cg: &CgTable) -> Result<(Vec<Complex64>, f64)> {
    let b = bispectrum(f, cg)?;
    let r: Vec<Complex64> = b.values().iter().zip(target.values()).map(|(x, y)| x - y).collect();
    let cost = 0.5 * r.iter().map(|v| v.norm_sqr()).sum::<f64>();
    Ok((r, cost))
}

fn linearize(param: &Param, f: &ShCoefficients, target: &BispectrumVector, cg: &CgTable) -> Result<Linearization> {
    let (r, cost) = residual(f, target, cg)?;
    let jac = bispectrum_jacobian(f, cg)?;
    let p = param.dim();
    let mut jtj = DMatrix::<f64>::zeros(p, p);
    let mut grad = DVector::<f64>::zeros(p);
    let mut dense = vec![Complex64::default(); p];
    let mut touched: Vec<usize> = Vec::new();
    for (row, rv) in r.iter().enumerate() {
        let (cols, vals) = jac.row(row);
        for (&c, &v) in cols.iter().zip(vals) {
            if let Some((k, s)) = param.column(c) {
                if dense[k] == Complex64::default() {
                    touched.push(k);
                }
                dense[k] += v * s;
            }
        }
        touched.sort_unstable();
        touched.dedup();
        for (ia, &a) in touched.iter().enumerate() {
            let va = dense[a];
            grad[a] += va.re * rv.re + va.im * rv.im;
            for &b in &touched[ia..] {
                let vb = dense[b];
                let x = va.re * vb.re + va.im * vb.im;
                jtj[(a, b)] += x;
            }
        }
        for &k in &touched {
            dense[k] = Complex64::default();
        }
        touched.clear();
    }
    // mirror the upper triangle
    for a in 0..p {
        for b in 0..a {
            jtj[(a, b)] = jtj[(b, a)];
        }
    }
    Ok(Linearization {
        cost,
        jtj,
        grad,
    })
}

/// 1/2 |b(f) - target|^2 and its gradient in the optimization parameters
/// (real parameterization when `enforce_real`, else [Re f, Im f]).
pub fn objective_gradient(
    target: &BispectrumVector,
    f: &ShCoefficients,
    cg: &CgTable,
    enforce_real: bool,
) -> Result<(f64, Vec<f64>)> {
    check(target, f)?;
    let param = Param {
        bandlimit: f.bandlimit(),
        real: enforce_real,
    };
    let lin = linearize(&param, f, target, cg)?;
    Ok((lin.cost, lin.grad.iter().copied().collect()))
}

/// Parameter vector of `f` in the optimization parameterization.
pub fn parameters(f: &ShCoefficients, enforce_real: bool) -> Vec<f64> {
    Param {
        bandlimit: f.bandlimit(),
        real: enforce_real,
    }
    .to_params(f)
}

pub fn coefficients_from_parameters(bandlimit: usize, p: &[f64], enforce_real: bool) -> Result<ShCoefficients> {
    let param = Param {
        bandlimit,
        real: enforce_real,
    };
    if p.len() != param.dim() {
        return Err(Error::DimensionMismatch(format!("expected {} parameters, got {}", param.dim(), p.len())));
    }
    param.to_coeffs(p)
}

fn check(target: &BispectrumVector, f: &ShCoefficients) -> Result<()> {
    if target.bandlimit() != f.bandlimit() {
        return Err(Error::DimensionMismatch(format!(
            "target bispectrum has bandlimit {}, initial guess {}",
            target.bandlimit(),
            f.bandlimit()
        )));
    }
    Ok(())
}

pub fn invert_bispectrum(
    target: &BispectrumVector,
    init: &ShCoefficients,
    cg: &CgTable,
    opts: &InversionOptions,
) -> Result<InversionResult> {
    opts.validate()?;
    check(target, init)?;
    let param = Param {
        bandlimit: init.bandlimit(),
        real: opts.enforce_real,
    };
    let mut x = DVector::from_vec(param.to_params(init));
    let mut f = param.to_coeffs(x.as_slice())?;
    let mut lin = linearize(&param, &f, target, cg)?;
    let initial = (2.0 * lin.cost).sqrt();
    let mut history = vec![initial];
    let mut mu = opts.damping_init;
    let mut iterations = 0;
    let stop = loop {
        let rnorm = (2.0 * lin.cost).sqrt();
        if rnorm <= opts.residual_tolerance {
            break StopReason::Residual;
        }
        let max_diag = lin.jtj.diagonal().max();
        let gmax = lin.grad.amax();
        if gmax <= opts.gradient_tolerance * rnorm * max_diag.sqrt() {
            break StopReason::Gradient;
        }
        if iterations >= opts.max_iterations {
            break StopReason::MaxIterations;
        }
        if !mu.is_finite() || mu > 1e32 {
            break StopReason::Stalled;
        }
        iterations += 1;
        let floor = if max_diag > 0.0 { 1e-12 * max_diag } else { 1.0 };
        let mut a = lin.jtj.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += mu * lin.jtj[(i, i)].max(floor);
        }
        let Some(chol) = a.cholesky() else {
            mu *= opts.damping_factor;
            continue;
        };
        let step = chol.solve(&(-&lin.grad));
        let trial_x = &x + &step;
        let trial_f = param.to_coeffs(trial_x.as_slice())?;
        let (_, trial_cost) = residual(&trial_f, target, cg)?;
        if trial_cost < lin.cost {
            let small = step.norm() <= opts.step_tolerance * (x.norm() + opts.step_tolerance);
            x = trial_x;
            f = trial_f;
            lin = linearize(&param, &f, target, cg)?;
            history.push((2.0 * lin.cost).sqrt());
            mu = (mu / opts.damping_factor).max(1e-300);
            if small {
                break StopReason::Step;
            }
        } else {
            mu *= opts.damping_factor;
        }
    };
    let converged = matches!(stop, StopReason::Residual | StopReason::Gradient | StopReason::Step);
    if !converged {
        log::warn!("bispectrum inversion stopped without converging ({stop:?}) after {iterations} iterations");
    }
    Ok(InversionResult {
        coefficients: f,
        residual_norm: (2.0 * lin.cost).sqrt(),
        initial_residual_norm: initial,
        iterations,
        converged,
        stop,
        history,
    })
}
