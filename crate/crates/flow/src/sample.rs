//! Classifier-free guided sampling and conversion of samples to meshes.

use std::time::Instant;

use msdf_core::extraction::marching_cubes_local;
use msdf_core::geometry::TriangleMesh;
use msdf_core::msdf::{ChannelStats, MosaicSdf};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::model::VelocityModel;
use crate::solver::{integrate, OdeSolution, Solver};

/// Scales are clamped to at least this after denormalization.
pub const MIN_SCALE: f32 = 1e-4;

/// `(1 + ω) U(X, t, c) − ω U(X, t, ∅)`.
///
/// Always two model evaluations for a real class. With `class = None` both
/// terms are the null-conditioned field, so it is returned after one evaluation.
pub fn cfg_velocity(model: &VelocityModel, x: &[f32], t: f32, class: Option<usize>, omega: f32) -> Result<Vec<f32>> {
    if !omega.is_finite() {
        return Err(invalid(format!("guidance scale must be finite, got {omega}")));
    }
    model.condition_row(class)?;
    let uncond = model.velocity(x, t, None)?;
    if class.is_none() {
        return Ok(uncond);
    }
    let cond = model.velocity(x, t, class)?;
    Ok(guide(&cond, &uncond, omega))
}

/// Elementwise guidance recombination of two cached evaluations.
pub fn guide(cond: &[f32], uncond: &[f32], omega: f32) -> Vec<f32> {
    cond.iter().zip(uncond).map(|(&c, &u)| (1.0 + omega) * c - omega * u).collect()
}

/// `n × d` standard Gaussian noise.
pub fn gaussian_noise(n: usize, d: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Integrates the guided field from `x0` at `t = 0` to `t = 1`.
pub fn sample_from(
    model: &VelocityModel,
    x0: &[f32],
    class: Option<usize>,
    omega: f32,
    solver: Solver,
) -> Result<(Vec<f32>, OdeSolution)> {
    model.check_input(x0)?;
    model.condition_row(class)?;
    let start: Vec<f64> = x0.iter().map(|&v| v as f64).collect();
    let mut field = |t: f64, x: &[f64]| -> Result<Vec<f64>> {
        let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let u = cfg_velocity(model, &xf, t as f32, class, omega)?;
        Ok(u.into_iter().map(f64::from).collect())
    };
    let sol = integrate(&mut field, &start, solver)?;
    let x = sol.x.iter().map(|&v| v as f32).collect();
    Ok((x, sol))
}

/// One sample of `n` rows from noise drawn with `seed`.
pub fn sample(
    model: &VelocityModel,
    n: usize,
    class: Option<usize>,
    omega: f32,
    solver: Solver,
    seed: u64,
) -> Result<(Vec<f32>, OdeSolution)> {
    if n == 0 {
        return Err(invalid("cannot sample zero rows"));
    }
    let x0 = gaussian_noise(n, model.config().d, seed);
    sample_from(model, &x0, class, omega, solver)
}

#[derive(Clone, Debug)]
pub struct GeneratedShape {
    pub msdf: MosaicSdf,
    /// `None` when the zero level set is empty.
    pub mesh: Option<TriangleMesh>,
    pub nfe: usize,
    pub sample_seconds: f64,
    pub extract_seconds: f64,
}

/// Denormalizes a sampled matrix, clamps scales and extracts the surface.
pub fn matrix_to_shape(
    matrix: &[f32],
    stats: &ChannelStats,
    k: usize,
    resolution: usize,
) -> Result<(MosaicSdf, Option<TriangleMesh>, f64)> {
    let x = stats.denormalize(k, matrix, MIN_SCALE)?;
    let (mesh, extract) = marching_cubes_local(&x, resolution)?;
    let mesh = if mesh.is_empty() {
        log::warn!("sample has an empty zero level set");
        None
    } else {
        Some(mesh)
    };
    Ok((x, mesh, extract.seconds))
}

/// Samples a shape and extracts its mesh at `resolution`.
#[allow(clippy::too_many_arguments)]
pub fn sample_to_shape(
    model: &VelocityModel,
    stats: &ChannelStats,
    n: usize,
    k: usize,
    class: Option<usize>,
    omega: f32,
    solver: Solver,
    resolution: usize,
    seed: u64,
) -> Result<GeneratedShape> {
    if msdf_core::msdf::row_width(k) != model.config().d {
        return Err(invalid(format!("k = {k} does not match model row width {}", model.config().d)));
    }
    let start = Instant::now();
    let (matrix, sol) = sample(model, n, class, omega, solver, seed)?;
    let sample_seconds = start.elapsed().as_secs_f64();
    let (msdf, mesh, extract_seconds) = matrix_to_shape(&matrix, stats, k, resolution)?;
    Ok(GeneratedShape {
        msdf,
        mesh,
        nfe: sol.nfe,
        sample_seconds,
        extract_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn guidance_extremes() {
        let m = VelocityModel::new(ModelConfig::new(5, 3), 2).unwrap();
        let x = gaussian_noise(6, 5, 1);
        let c = m.velocity(&x, 0.3, Some(1)).unwrap();
        let u = m.velocity(&x, 0.3, None).unwrap();
        assert_eq!(cfg_velocity(&m, &x, 0.3, Some(1), 0.0).unwrap(), c);
        assert_eq!(cfg_velocity(&m, &x, 0.3, Some(1), -1.0).unwrap(), u);
        assert_eq!(cfg_velocity(&m, &x, 0.3, None, 3.0).unwrap(), u);
        assert!(cfg_velocity(&m, &x, 0.3, Some(3), 1.0).is_err());
        assert!(cfg_velocity(&m, &x, 0.3, Some(1), f32::NAN).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        assert_eq!(gaussian_noise(3, 4, 9), gaussian_noise(3, 4, 9));
        assert_ne!(gaussian_noise(3, 4, 9), gaussian_noise(3, 4, 10));
    }
}
