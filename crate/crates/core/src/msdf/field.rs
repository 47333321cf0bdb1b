//! Evaluation of the blended field and its spatial gradient.
//!
//! The per-grid routine is generic over [`Real`] so the same code evaluates
//! plain `f64` fields and records parameter derivatives on a scalar tape.

use diffkit::scalar::Real;
use rayon::prelude::*;

use super::boxtree::BoxTree;
use super::MosaicSdf;

/// One grid's contribution at a point: unnormalized weight `w̄`, trilinear
/// value `I`, and their spatial gradients (zero when not requested).
#[derive(Clone, Copy, Debug)]
pub struct GridTerm<R> {
    pub grid: usize,
    pub wbar: R,
    pub interp: R,
    pub grad_w: [R; 3],
    pub grad_i: [R; 3],
}

/// Contribution of a grid with center `p`, scale `s` at the point `x`, or
/// `None` when `‖(x - p) / s‖∞ ≥ 1`. `corners(base)` returns the 8 values of
/// the cell whose lowest node has flat index `base`, ordered `dx + 2dy + 4dz`.
#[inline]
pub(crate) fn grid_term<R: Real>(
    grid: usize,
    x: &[f64; 3],
    p: [R; 3],
    s: R,
    k: usize,
    grad: bool,
    corners: impl FnOnce(usize) -> [R; 8],
) -> Option<GridTerm<R>> {
    let u = [
        (-p[0] + x[0]) / s,
        (-p[1] + x[1]) / s,
        (-p[2] + x[2]) / s,
    ];
    let mut m = 0;
    for a in 1..3 {
        if u[a].value().abs() > u[m].value().abs() {
            m = a;
        }
    }
    if !(u[m].value().abs() < 1.0) {
        return None;
    }
    let wbar = -u[m].abs() + 1.0;

    let half = (k - 1) as f64 / 2.0;
    let mut idx = [0usize; 3];
    let mut t = [wbar; 3];
    for a in 0..3 {
        let g = (u[a] + 1.0) * half;
        let i = (g.value().floor().max(0.0) as usize).min(k - 2);
        idx[a] = i;
        t[a] = g - i as f64;
    }
    let c = corners(idx[0] + k * (idx[1] + k * idx[2]));
    let lerp = |a: R, b: R, t: R| a + (b - a) * t;
    let c00 = lerp(c[0], c[1], t[0]);
    let c10 = lerp(c[2], c[3], t[0]);
    let c01 = lerp(c[4], c[5], t[0]);
    let c11 = lerp(c[6], c[7], t[0]);
    let c0 = lerp(c00, c10, t[1]);
    let c1 = lerp(c01, c11, t[1]);
    let interp = lerp(c0, c1, t[2]);

    let zero = wbar.constant(0.0);
    let mut grad_w = [zero; 3];
    let mut grad_i = [zero; 3];
    if grad {
        let inv_s = s.recip();
        grad_w[m] = if u[m].value() < 0.0 { inv_s } else { -inv_s };
        let scale = inv_s * half;
        let d2 = c1 - c0;
        let d1 = lerp(c10 - c00, c11 - c01, t[2]);
        let e0 = lerp(c[1] - c[0], c[3] - c[2], t[1]);
        let e1 = lerp(c[5] - c[4], c[7] - c[6], t[1]);
        let d0 = lerp(e0, e1, t[2]);
        grad_i = [d0 * scale, d1 * scale, d2 * scale];
    }
    Some(GridTerm {
        grid,
        wbar,
        interp,
        grad_w,
        grad_i,
    })
}

fn term_key<R: Real>(t: &GridTerm<R>) -> [f64; 8] {
    [
        t.wbar.value(),
        t.interp.value(),
        t.grad_w[0].value(),
        t.grad_w[1].value(),
        t.grad_w[2].value(),
        t.grad_i[0].value(),
        t.grad_i[1].value(),
        t.grad_i[2].value(),
    ]
}

/// Blends terms into `(F, ∇F)`. Terms are summed in a canonical order that
/// depends only on their values, so the result does not depend on grid order.
/// Returns `None` for an empty set (a point outside the domain).
pub fn eval_terms<R: Real>(terms: &mut [GridTerm<R>], grad: bool) -> Option<(R, [R; 3])> {
    terms.sort_by(|a, b| {
        let (ka, kb) = (term_key(a), term_key(b));
        ka.iter()
            .zip(&kb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let first = terms.first()?;
    let mut num = first.wbar * first.interp;
    let mut den = first.wbar;
    for t in &terms[1..] {
        num = num + t.wbar * t.interp;
        den = den + t.wbar;
    }
    let f = num / den;
    if !grad {
        let z = f.constant(0.0);
        return Some((f, [z; 3]));
    }
    let mut g = [f.constant(0.0); 3];
    for (a, ga) in g.iter_mut().enumerate() {
        let mut gn = first.grad_w[a] * first.interp + first.wbar * first.grad_i[a];
        let mut gd = first.grad_w[a];
        for t in &terms[1..] {
            gn = gn + t.grad_w[a] * t.interp + t.wbar * t.grad_i[a];
            gd = gd + t.grad_w[a];
        }
        *ga = (gn - f * gd) / den;
    }
    Some((f, g))
}

/// Read-only evaluation of a [`MosaicSdf`] with a spatial index over its boxes.
pub struct Evaluator<'a> {
    msdf: &'a MosaicSdf,
    tree: BoxTree,
}

impl<'a> Evaluator<'a> {
    pub fn new(msdf: &'a MosaicSdf) -> Self {
        let centers = msdf.centers().iter().map(|c| c.map(f64::from)).collect();
        let scales = msdf.scales().iter().map(|&s| s as f64).collect();
        Self {
            msdf,
            tree: BoxTree::build(centers, scales),
        }
    }

    pub fn msdf(&self) -> &MosaicSdf {
        self.msdf
    }

    pub fn tree(&self) -> &BoxTree {
        &self.tree
    }

    fn term(&self, i: usize, x: &[f64; 3], grad: bool) -> Option<GridTerm<f64>> {
        let k = self.msdf.k();
        let p = self.msdf.centers()[i].map(f64::from);
        let s = self.msdf.scales()[i] as f64;
        let v = self.msdf.grid_values(i);
        grid_term(i, x, p, s, k, grad, |b| {
            let kk = k * k;
            [
                v[b],
                v[b + 1],
                v[b + k],
                v[b + k + 1],
                v[b + kk],
                v[b + kk + 1],
                v[b + kk + k],
                v[b + kk + k + 1],
            ]
            .map(f64::from)
        })
    }

    fn terms(&self, x: &[f64; 3], grad: bool) -> Vec<GridTerm<f64>> {
        let mut cand = Vec::with_capacity(16);
        self.tree.candidates(x, &mut cand);
        cand.into_iter().filter_map(|i| self.term(i, x, grad)).collect()
    }

    /// Whether `x` lies in the open union of the grids' ∞-balls.
    pub fn in_domain(&self, x: &[f64; 3]) -> bool {
        let mut cand = Vec::with_capacity(16);
        self.tree.candidates(x, &mut cand);
        cand.into_iter().any(|i| self.term(i, x, false).is_some())
    }

    /// Normalized weights `(grid, w_i(x))` of the grids supporting `x`, in grid order.
    pub fn weights(&self, x: &[f64; 3]) -> Vec<(usize, f64)> {
        let mut terms = self.terms(x, false);
        terms.sort_by_key(|t| t.grid);
        let total: f64 = terms.iter().map(|t| t.wbar).sum();
        terms.iter().map(|t| (t.grid, t.wbar / total)).collect()
    }

    /// `w_i(x)`, zero outside the domain.
    pub fn weight(&self, i: usize, x: &[f64; 3]) -> f64 {
        self.weights(x)
            .into_iter()
            .find(|&(g, _)| g == i)
            .map_or(0.0, |(_, w)| w)
    }

    /// `min_i (‖x - p_i‖∞ - s_i)`, the value used outside the domain.
    pub fn fallback(&self, x: &[f64; 3]) -> f64 {
        self.tree.nearest_gap(x)
    }

    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        let mut terms = self.terms(x, false);
        match eval_terms(&mut terms, false) {
            Some((f, _)) => f,
            None => self.fallback(x),
        }
    }

    /// Value and spatial gradient. Outside the domain the gradient is that of
    /// the fallback distance.
    pub fn eval_with_gradient(&self, x: &[f64; 3]) -> (f64, [f64; 3]) {
        let mut terms = self.terms(x, true);
        if let Some(r) = eval_terms(&mut terms, true) {
            return r;
        }
        let (mut best, mut g) = (f64::INFINITY, [0.0; 3]);
        for (i, p) in self.msdf.centers().iter().enumerate() {
            let d: Vec<f64> = (0..3).map(|a| x[a] - p[a] as f64).collect();
            let mut m = 0;
            for a in 1..3 {
                if d[a].abs() > d[m].abs() {
                    m = a;
                }
            }
            let v = d[m].abs() - self.msdf.scales()[i] as f64;
            if v < best {
                best = v;
                g = [0.0; 3];
                g[m] = d[m].signum();
            }
        }
        (best, g)
    }

    pub fn eval_gradient(&self, x: &[f64; 3]) -> [f64; 3] {
        self.eval_with_gradient(x).1
    }

    pub fn eval_many(&self, points: &[[f64; 3]]) -> Vec<f64> {
        points.par_iter().map(|x| self.eval(x)).collect()
    }
}
