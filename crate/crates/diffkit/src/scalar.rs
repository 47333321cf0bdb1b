//! Scalar reverse mode.
//!
//! [`Real`] abstracts over plain `f64` and tape-recorded [`Var`]s so a single
//! generic routine can be evaluated cheaply or differentiated. Each `Var` op
//! appends one entry with at most two parents to a [`ScalarTape`].

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;

    /// A constant living in the same context as `self`.
    fn constant(self, v: f64) -> Self;

    fn sqrt(self) -> Self;

    /// Subgradient +1 at zero.
    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }

    fn recip(self) -> Self {
        self.constant(1.0) / self
    }
}

impl Real for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn constant(self, v: f64) -> Self {
        v
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// Wengert list over scalars.
#[derive(Debug, Default)]
pub struct ScalarTape {
    entries: RefCell<Vec<Entry>>,
}

/// A scalar recorded on a [`ScalarTape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t ScalarTape,
    index: u32,
    value: f64,
}

impl ScalarTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            entries: RefCell::new(Vec::with_capacity(n)),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops all entries, keeping the allocation.
    pub fn clear(&mut self) {
        self.entries.get_mut().clear();
    }

    /// An independent input.
    pub fn var(&self, value: f64) -> Var<'_> {
        let index = self.push([0, 0], [0.0, 0.0]);
        Var {
            tape: self,
            index,
            value,
        }
    }

    fn push(&self, parents: [u32; 2], partials: [f64; 2]) -> u32 {
        let mut e = self.entries.borrow_mut();
        e.push(Entry { parents, partials });
        (e.len() - 1) as u32
    }

    /// Adjoints of `output` with respect to every entry, written into `adjoints`
    /// (resized to the tape length).
    pub fn adjoints_into(&self, output: Var<'_>, adjoints: &mut Vec<f64>) {
        let entries = self.entries.borrow();
        adjoints.clear();
        adjoints.resize(entries.len(), 0.0);
        adjoints[output.index as usize] = 1.0;
        for i in (0..=output.index as usize).rev() {
            let a = adjoints[i];
            if a == 0.0 {
                continue;
            }
            let e = entries[i];
            adjoints[e.parents[0] as usize] += e.partials[0] * a;
            adjoints[e.parents[1] as usize] += e.partials[1] * a;
        }
    }

    pub fn adjoints(&self, output: Var<'_>) -> Vec<f64> {
        let mut out = Vec::new();
        self.adjoints_into(output, &mut out);
        out
    }
}

impl<'t> Var<'t> {
    pub fn index(self) -> usize {
        self.index as usize
    }

    fn unary(self, value: f64, d: f64) -> Self {
        let index = self.tape.push([self.index, self.index], [d, 0.0]);
        Var {
            tape: self.tape,
            index,
            value,
        }
    }

    fn binary(self, other: Self, value: f64, da: f64, db: f64) -> Self {
        let index = self.tape.push([self.index, other.index], [da, db]);
        Var {
            tape: self.tape,
            index,
            value,
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        self.binary(o, self.value + o.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self.binary(o, self.value - o.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.binary(o, self.value * o.value, o.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.value / o.value;
        self.binary(o, q, 1.0 / o.value, -q / o.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, c: f64) -> Self {
        self.unary(self.value + c, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, c: f64) -> Self {
        self.unary(self.value - c, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        self.unary(self.value * c, c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, c: f64) -> Self {
        self.unary(self.value / c, 1.0 / c)
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.value
    }

    fn constant(self, v: f64) -> Self {
        self.tape.var(v)
    }

    fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        self.unary(r, 0.5 / r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly<R: Real>(x: R, y: R) -> R {
        // x²y + y/x - 3x
        x * x * y + y / x - x * 3.0
    }

    #[test]
    fn matches_analytic_partials() {
        let tape = ScalarTape::new();
        let (x, y) = (tape.var(1.5), tape.var(-0.5));
        let f = poly(x, y);
        assert!((f.value() - poly(1.5, -0.5)).abs() < 1e-15);
        let adj = tape.adjoints(f);
        let dx = 2.0 * 1.5 * -0.5 - (-0.5) / (1.5 * 1.5) - 3.0;
        let dy = 1.5 * 1.5 + 1.0 / 1.5;
        assert!((adj[x.index()] - dx).abs() < 1e-12);
        assert!((adj[y.index()] - dy).abs() < 1e-12);
    }

    #[test]
    fn fan_out_sums() {
        let tape = ScalarTape::new();
        let x = tape.var(2.0);
        let y = x + x;
        assert_eq!(tape.adjoints(y)[x.index()], 2.0);
    }

    #[test]
    fn sqrt_and_abs() {
        let tape = ScalarTape::new();
        let x = tape.var(-4.0);
        let f = x.abs().sqrt();
        let adj = tape.adjoints(f);
        assert_eq!(f.value(), 2.0);
        assert!((adj[x.index()] + 0.25).abs() < 1e-15);
    }
}
