//! Fixed-step and adaptive ODE integrators over `t ∈ [0, 1]`.
//!
//! Every reduction over the state (the adaptive error norm) sums its terms in
//! sorted order, so integrating a permuted state with an equivariant field
//! takes the same steps and returns the permuted result bit for bit.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, FlowError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Solver {
    Euler { steps: usize },
    Midpoint { steps: usize },
    /// Dormand–Prince 5(4) with PI step-size control.
    Dopri5 { rtol: f64, atol: f64 },
}

impl Solver {
    pub fn dopri5() -> Self {
        Self::Dopri5 { rtol: 1e-5, atol: 1e-5 }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Euler { steps } => write!(f, "euler:{steps}"),
            Self::Midpoint { steps } => write!(f, "midpoint:{steps}"),
            Self::Dopri5 { rtol, atol } => write!(f, "dopri5:{rtol:e}:{atol:e}"),
        }
    }
}

impl FromStr for Solver {
    type Err = FlowError;

    /// `euler:STEPS`, `midpoint:STEPS`, `dopri5`, `dopri5:TOL` or `dopri5:RTOL:ATOL`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let bad = || invalid(format!("bad solver {s:?}"));
        let steps = |args: &[&str]| -> Result<usize> {
            match args {
                [n] => n.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(bad),
                _ => Err(bad()),
            }
        };
        let tol = |v: &str| v.parse::<f64>().ok().filter(|&v| v > 0.0).ok_or_else(bad);
        match name {
            "euler" => Ok(Self::Euler { steps: steps(&args)? }),
            "midpoint" => Ok(Self::Midpoint { steps: steps(&args)? }),
            "dopri5" | "dopri" => match args.as_slice() {
                [] => Ok(Self::dopri5()),
                [t] => Ok(Self::Dopri5 { rtol: tol(t)?, atol: tol(t)? }),
                [r, a] => Ok(Self::Dopri5 { rtol: tol(r)?, atol: tol(a)? }),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeSolution {
    pub x: Vec<f64>,
    /// Field evaluations.
    pub nfe: usize,
    /// Accepted steps.
    pub steps: usize,
    pub rejected: usize,
}

pub type Field<'a> = dyn FnMut(f64, &[f64]) -> Result<Vec<f64>> + 'a;

/// Integrates `dx/dt = f(t, x)` from `t = 0` to `t = 1`.
pub fn integrate(f: &mut Field<'_>, x0: &[f64], solver: Solver) -> Result<OdeSolution> {
    match solver {
        Solver::Euler { steps } => fixed(f, x0, steps, false),
        Solver::Midpoint { steps } => fixed(f, x0, steps, true),
        Solver::Dopri5 { rtol, atol } => dopri5(f, x0, rtol, atol),
    }
}

fn axpy(x: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

fn fixed(f: &mut Field<'_>, x0: &[f64], steps: usize, midpoint: bool) -> Result<OdeSolution> {
    if steps == 0 {
        return Err(invalid("fixed-step solver needs at least one step"));
    }
    let h = 1.0 / steps as f64;
    let mut x = x0.to_vec();
    let mut nfe = 0;
    for i in 0..steps {
        let t = i as f64 / steps as f64;
        let k1 = f(t, &x)?;
        nfe += 1;
        let k = if midpoint {
            let xm = axpy(&x, 0.5 * h, &k1);
            nfe += 1;
            f(t + 0.5 * h, &xm)?
        } else {
            k1
        };
        x = axpy(&x, h, &k);
    }
    Ok(OdeSolution {
        x,
        nfe,
        steps,
        rejected: 0,
    })
}

/// RMS of `terms`, summed in sorted order.
fn rms(mut terms: Vec<f64>) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    terms.sort_by(f64::total_cmp);
    (terms.iter().sum::<f64>() / terms.len() as f64).sqrt()
}

fn scaled_norm(v: &[f64], x: &[f64], y: &[f64], rtol: f64, atol: f64) -> f64 {
    rms(v
        .iter()
        .zip(x.iter().zip(y))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .collect())
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;
const ALPHA: f64 = 0.2 - 0.75 * BETA;
const MAX_STEPS: usize = 100_000;

fn dopri5(f: &mut Field<'_>, x0: &[f64], rtol: f64, atol: f64) -> Result<OdeSolution> {
    if !(rtol > 0.0 && atol > 0.0) {
        return Err(invalid(format!("tolerances must be positive, got rtol={rtol} atol={atol}")));
    }
    let mut x = x0.to_vec();
    let mut t = 0.0f64;
    let mut k1 = f(t, &x)?;
    let mut nfe = 1;

    // Initial step from the local scale of x and its derivatives.
    let d0 = scaled_norm(&x, &x, &x, rtol, atol);
    let d1 = scaled_norm(&k1, &x, &x, rtol, atol);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let x1 = axpy(&x, h0, &k1);
    let f1 = f(h0, &x1)?;
    nfe += 1;
    let diff: Vec<f64> = f1.iter().zip(&k1).map(|(a, b)| a - b).collect();
    let d2 = scaled_norm(&diff, &x, &x, rtol, atol) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    let mut h = (100.0 * h0).min(h1).min(1.0);

    let mut err_prev = 1e-4f64;
    let mut steps = 0;
    let mut rejected = 0;
    let mut last_rejected = false;
    while t < 1.0 {
        if steps + rejected >= MAX_STEPS {
            return Err(FlowError::StepUnderflow { t });
        }
        let last = t + h >= 1.0;
        if last {
            h = 1.0 - t;
        }
        if h <= 1e-14 * t.max(1.0) {
            return Err(FlowError::StepUnderflow { t });
        }
        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        k.push(k1.clone());
        let mut x_new = Vec::new();
        for s in 1..7 {
            let mut xs = x.clone();
            for (j, &a) in A[s].iter().enumerate() {
                if a != 0.0 {
                    for (v, kk) in xs.iter_mut().zip(&k[j]) {
                        *v += h * a * kk;
                    }
                }
            }
            k.push(f(t + C[s] * h, &xs)?);
            nfe += 1;
            if s == 6 {
                // The last stage is evaluated at the fifth-order solution.
                x_new = xs;
            }
        }
        let mut errv = vec![0f64; x.len()];
        for (j, &e) in E.iter().enumerate() {
            if e != 0.0 {
                for (v, kk) in errv.iter_mut().zip(&k[j]) {
                    *v += h * e * kk;
                }
            }
        }
        let err = scaled_norm(&errv, &x, &x_new, rtol, atol);
        if err <= 1.0 {
            let fac = if err == 0.0 {
                FAC_MAX
            } else {
                SAFETY * err.powf(-ALPHA) * err_prev.powf(BETA)
            };
            let fac_max = if last_rejected { 1.0 } else { FAC_MAX };
            t = if last { 1.0 } else { t + h };
            x = x_new;
            k1 = k.pop().expect("seven stages");
            err_prev = err.max(1e-4);
            h *= fac.clamp(FAC_MIN, fac_max);
            steps += 1;
            last_rejected = false;
        } else {
            h *= (SAFETY * err.powf(-ALPHA)).max(FAC_MIN);
            rejected += 1;
            last_rejected = true;
        }
    }
    Ok(OdeSolution { x, nfe, steps, rejected })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        assert_eq!("euler:10".parse::<Solver>().unwrap(), Solver::Euler { steps: 10 });
        assert_eq!("midpoint:25".parse::<Solver>().unwrap(), Solver::Midpoint { steps: 25 });
        assert_eq!("dopri5".parse::<Solver>().unwrap(), Solver::dopri5());
        assert_eq!(
            "dopri5:1e-6".parse::<Solver>().unwrap(),
            Solver::Dopri5 { rtol: 1e-6, atol: 1e-6 }
        );
        for bad in ["euler", "euler:0", "rk4:3", "dopri5:-1", "midpoint:x"] {
            assert!(bad.parse::<Solver>().is_err(), "{bad}");
        }
        let s = Solver::Midpoint { steps: 7 };
        assert_eq!(s.to_string().parse::<Solver>().unwrap(), s);
    }

    #[test]
    fn constant_field_is_integrated_exactly() {
        // Dyadic values and power-of-two step counts keep every sum exact.
        let x0 = [0.5, -1.25, 3.0];
        let v = [0.75, 2.0, -0.125];
        for solver in [Solver::Euler { steps: 8 }, Solver::Midpoint { steps: 16 }] {
            let sol = integrate(&mut |_, _| Ok(v.to_vec()), &x0, solver).unwrap();
            let expect: Vec<f64> = x0.iter().zip(&v).map(|(a, b)| a + b).collect();
            assert_eq!(sol.x, expect, "{solver}");
        }
        let sol = integrate(&mut |_, _| Ok(v.to_vec()), &x0, Solver::dopri5()).unwrap();
        for i in 0..3 {
            assert!((sol.x[i] - (x0[i] + v[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn nfe_counts() {
        let mut f = |_: f64, x: &[f64]| Ok(x.iter().map(|v| -v).collect());
        let e = integrate(&mut f, &[1.0], Solver::Euler { steps: 25 }).unwrap();
        assert_eq!(e.nfe, 25);
        let m = integrate(&mut f, &[1.0], Solver::Midpoint { steps: 25 }).unwrap();
        assert_eq!(m.nfe, 50);
        let d = integrate(&mut f, &[1.0], Solver::dopri5()).unwrap();
        assert_eq!(d.nfe, 2 + 6 * (d.steps + d.rejected));
    }

    #[test]
    fn dopri_meets_tolerance_on_decay() {
        let mut f = |_: f64, x: &[f64]| Ok(x.iter().map(|v| -v).collect());
        let d = integrate(&mut f, &[1.0, -2.0], Solver::Dopri5 { rtol: 1e-8, atol: 1e-8 }).unwrap();
        let e = (-1.0f64).exp();
        assert!((d.x[0] - e).abs() < 1e-7 && (d.x[1] + 2.0 * e).abs() < 2e-7);
    }

    #[test]
    fn time_dependent_field() {
        // dx/dt = 2t, x(1) = x0 + 1: midpoint is exact for a linear-in-t field.
        let mut f = |t: f64, x: &[f64]| Ok(vec![2.0 * t; x.len()]);
        let m = integrate(&mut f, &[0.0], Solver::Midpoint { steps: 4 }).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-15);
        let d = integrate(&mut f, &[0.0], Solver::dopri5()).unwrap();
        assert!((d.x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_field_underflows() {
        let mut f = |_: f64, x: &[f64]| Ok(vec![f64::NAN; x.len()]);
        assert!(matches!(
            integrate(&mut f, &[1.0], Solver::dopri5()),
            Err(FlowError::StepUnderflow { .. })
        ));
    }
}
