//! Acceptance criteria, one test each, run at full tolerance. Every test
//! writes a single `criterion N [PASS|FAIL]` line to stderr (uncaptured) and
//! then asserts. Tests hold a shared lock so timings never overlap on one core.

use std::io::Write;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use diffkit::ParamStore;
use msdf_core::baselines::{fit_dense_grid, triplane::loss_and_grad as triplane_loss, TriplaneLinear};
use msdf_core::extraction::{chamfer_to_mesh, marching_cubes, marching_cubes_dense, marching_cubes_local};
use msdf_core::geometry::{primitives, SdfOracle, TriangleMesh, Vec3};
use msdf_core::metrics::{chamfer, chamfer_brute, emd, set_metrics, DistanceKind, PointCloud};
use msdf_core::msdf::finetune::{loss_and_grad as msdf_loss, FlatParams, Target};
use msdf_core::msdf::{fine_tune_on, initialize, lattice, normalize_channels, FineTuneConfig, MosaicSdf, SamplePool};
use msdf_flow::train::batch_loss;
use msdf_flow::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {id:2} [{verdict}] {name}: {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{}", line.trim_end());
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

const CHAMFER_SAMPLES: usize = 20_000;
const RES: usize = 256;

fn surface_chamfer(x: &MosaicSdf, mesh: &TriangleMesh, res: usize) -> f64 {
    let (m, _) = marching_cubes_local(x, res).unwrap();
    if m.is_empty() {
        return f64::INFINITY;
    }
    chamfer_to_mesh(&m, mesh, CHAMFER_SAMPLES, 1).unwrap()
}

struct Fitted {
    name: String,
    oracle: SdfOracle,
    init: MosaicSdf,
    /// After 300 fine-tuning steps.
    tuned: MosaicSdf,
}

/// Every test mesh initialized at n=1024, k=7 and fine-tuned for 300 steps.
fn fitted() -> &'static [Fitted] {
    static CELL: OnceLock<Vec<Fitted>> = OnceLock::new();
    CELL.get_or_init(|| {
        msdf_core::fixtures::test_meshes()
            .unwrap()
            .into_iter()
            .map(|(name, mesh)| {
                let oracle = SdfOracle::new(mesh).unwrap();
                let init = initialize(&oracle, 1024, 7, 0).unwrap();
                let cfg = FineTuneConfig { steps: 300, ..FineTuneConfig::default() };
                let pool = SamplePool::build(&oracle, cfg.surface_points, cfg.near_points, cfg.near_variance, 0).unwrap();
                let (tuned, _) = fine_tune_on(&init, &pool, &cfg).unwrap();
                Fitted { name, oracle, init, tuned }
            })
            .collect()
    })
}

fn domain_point(rng: &mut ChaCha8Rng, x: &MosaicSdf) -> [f64; 3] {
    let i = rng.random_range(0..x.n());
    let p = x.centers()[i];
    let s = x.scales()[i] as f64 * 0.999;
    [0, 1, 2].map(|a| p[a] as f64 + rng.random_range(-s..s))
}

#[test]
fn criterion_01_fidelity_ordering() {
    let _g = serial();
    let start = Instant::now();
    let budget = 355_328;
    let mut ours = Vec::new();
    let mut dense = Vec::new();
    let mut names = Vec::new();
    for (name, mesh) in msdf_core::fixtures::test_meshes().unwrap() {
        assert!(mesh.triangles().len() <= 50_000);
        let oracle = SdfOracle::new(mesh.clone()).unwrap();
        let n = budget / (4 + 7 * 7 * 7);
        let x = initialize(&oracle, n, 7, 0).unwrap();
        assert!(x.param_count() <= budget);
        let cfg = FineTuneConfig::default();
        let pool = SamplePool::build(&oracle, cfg.surface_points, cfg.near_points, cfg.near_variance, 0).unwrap();
        let (x, _) = fine_tune_on(&x, &pool, &cfg).unwrap();
        let g = fit_dense_grid(&oracle, budget).unwrap();
        assert!(g.param_count() <= budget);
        ours.push(surface_chamfer(&x, &mesh, RES));
        let (gm, _) = marching_cubes(&g, RES).unwrap();
        dense.push(chamfer_to_mesh(&gm, &mesh, CHAMFER_SAMPLES, 1).unwrap());
        names.push(name);
    }
    let secs = start.elapsed().as_secs_f64();
    let (mo, md) = (median(&ours), median(&dense));
    let wins = ours.iter().zip(&dense).filter(|(a, b)| a < b).count();
    report(
        1,
        "fidelity ordering at 355K parameters",
        names.len() >= 10 && mo < md && secs < 3600.0,
        format!(
            "median Chamfer msdf {mo:.3e} vs dense {md:.3e} over {} meshes (msdf better on {wins}), {secs:.0}s",
            names.len()
        ),
    );
}

#[test]
fn criterion_02_coverage() {
    let _g = serial();
    let mut worst = f64::NEG_INFINITY;
    let mut uncovered = 0;
    for f in fitted() {
        let samples = f.oracle.sample_surface(100_000, 0xc0fe);
        let x = &f.init;
        for p in &samples.points {
            // Smallest margin ‖x − p_i‖∞ − s_i over all grids, by brute force.
            let gap = (0..x.n())
                .map(|i| {
                    let c = x.centers()[i];
                    let d = (p.x - c[0] as f64).abs().max((p.y - c[1] as f64).abs()).max((p.z - c[2] as f64).abs());
                    d - x.scales()[i] as f64
                })
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(gap);
            if gap >= 1e-6 {
                uncovered += 1;
            }
        }
    }
    report(
        2,
        "coverage after initialization",
        uncovered == 0,
        format!("{uncovered} of {} samples uncovered, worst margin {worst:.3e}", 100_000 * fitted().len()),
    );
}

#[test]
fn criterion_03_partition_of_unity() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0f64;
    for f in fitted() {
        let x = &f.tuned;
        let e = x.evaluator();
        for _ in 0..10_000 {
            let p = domain_point(&mut rng, x);
            let w = e.weights(&p);
            let sum: f64 = w.iter().map(|(_, w)| w).sum();
            worst = worst.max((sum - 1.0).abs());
            // Independent normalization of the raw weights.
            let raw: Vec<f64> = w
                .iter()
                .map(|&(i, _)| {
                    let c = x.centers()[i];
                    let m = (0..3).map(|a| ((p[a] - c[a] as f64) / x.scales()[i] as f64).abs()).fold(0.0, f64::max);
                    (1.0 - m).max(0.0)
                })
                .collect();
            let total: f64 = raw.iter().sum();
            for ((_, wi), r) in w.iter().zip(&raw) {
                worst = worst.max((wi - r / total).abs());
            }
        }
    }
    report(3, "partition of unity", worst <= 1e-12, format!("max deviation {worst:.2e} on 10^4 points × {} shapes", fitted().len()));
}

#[test]
fn criterion_04_linear_reproduction() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0f64;
    let nodes = lattice(7);
    for f in fitted() {
        let g: [f64; 4] = [0; 4].map(|_| rng.random_range(-1.0..1.0));
        let affine = |x: &[f64; 3]| g[0] * x[0] + g[1] * x[1] + g[2] * x[2] + g[3];
        let geo = &f.tuned;
        let mut values = Vec::with_capacity(geo.values().len());
        for i in 0..geo.n() {
            let (c, s) = (geo.centers()[i], geo.scales()[i] as f64);
            for node in &nodes {
                values.push(affine(&[0, 1, 2].map(|a| c[a] as f64 + s * node[a])) as f32);
            }
        }
        let x = MosaicSdf::new(7, geo.centers().to_vec(), geo.scales().to_vec(), values).unwrap();
        let e = x.evaluator();
        for _ in 0..10_000 {
            let p = domain_point(&mut rng, &x);
            worst = worst.max((e.eval(&p) - affine(&p)).abs());
        }
    }
    report(4, "linear reproduction", worst <= 1e-6, format!("max error {worst:.2e} for random affine fields on fitted geometry"));
}

fn central(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

fn rel(an: f64, fd: f64, floor: f64) -> f64 {
    (an - fd).abs() / fd.abs().max(floor)
}

fn random_mosaic(rng: &mut ChaCha8Rng, n: usize, k: usize) -> MosaicSdf {
    MosaicSdf::new(
        k,
        (0..n).map(|_| [0; 3].map(|_| rng.random_range(-0.25..0.25f32))).collect(),
        (0..n).map(|_| rng.random_range(0.3..0.6f32)).collect(),
        (0..n * k * k * k).map(|_| rng.random_range(-0.5..0.5f32)).collect(),
    )
    .unwrap()
}

/// Worst relative error of `eval_gradient` at points where every box face,
/// weight kink and lattice face is beyond the stencil.
fn spatial_gradient_error(trials: u64) -> f64 {
    let h = 1e-4;
    let mut worst = 0f64;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let x = random_mosaic(&mut rng, 4, 5);
        let e = x.evaluator();
        let mut checked = 0;
        while checked < 50 {
            let p = domain_point(&mut rng, &x);
            let smooth = (0..x.n()).all(|i| {
                let c = x.centers()[i];
                let s = x.scales()[i] as f64;
                let u = [0, 1, 2].map(|a| (p[a] - c[a] as f64) / s);
                let mut m = u.map(f64::abs);
                m.sort_by(f64::total_cmp);
                let face = u.iter().all(|&ua| {
                    let g = (ua + 1.0) * 2.0;
                    (g - g.round()).abs() * s / 2.0 > 4.0 * h
                });
                (m[2] - 1.0).abs() * s > 4.0 * h && (m[2] - m[1]) * s > 4.0 * h && face
            });
            if !smooth || !e.in_domain(&p) {
                continue;
            }
            let g = e.eval_gradient(&p);
            for a in 0..3 {
                let fd = central(
                    |t| {
                        let mut q = p;
                        q[a] += t;
                        e.eval(&q)
                    },
                    h,
                );
                worst = worst.max(rel(g[a], fd, 1e-2));
            }
            checked += 1;
        }
    }
    worst
}

fn finetune_gradient_error(trials: u64) -> f64 {
    let mut worst = 0f64;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let x = random_mosaic(&mut rng, 2, 3);
        let base = FlatParams::from_msdf(&x);
        let pts: Vec<[f64; 3]> = (0..12).map(|_| domain_point(&mut rng, &x)).collect();
        let targets: Vec<Target> = pts
            .iter()
            .map(|_| (rng.random_range(-0.2..0.2), [0; 3].map(|_| rng.random_range(-1.0..1.0))))
            .collect();
        for lambda in [0.0, 0.1] {
            let (_, grad, _) = msdf_loss(&base, &pts, &targets, lambda);
            for i in 0..base.theta.len() {
                let fd = central(
                    |t| {
                        let mut q = base.clone();
                        q.theta[i] += t;
                        msdf_loss(&q, &pts, &targets, lambda).0
                    },
                    1e-6,
                );
                worst = worst.max(rel(grad[i], fd, 1e-3));
            }
        }
    }
    worst
}

fn triplane_gradient_error(trials: u64) -> f64 {
    let mut worst = 0f64;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let tp = TriplaneLinear::random(4, 2, seed).unwrap();
        let pts: Vec<[f64; 3]> = (0..20).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect();
        // Targets well away from the current values keep each residual's sign
        // fixed under the perturbation.
        let tg: Vec<Target> = pts
            .iter()
            .enumerate()
            .map(|(i, x)| (tp.eval(x) + if i % 2 == 0 { 0.5 } else { -0.5 }, [0.0; 3]))
            .collect();
        let (_, grad) = triplane_loss(&tp, &pts, &tg);
        let h = 1.0 / 64.0;
        let (np, nc) = (tp.planes().len(), tp.channels());
        for i in 0..tp.param_count() {
            let at = |d: f32| {
                let (mut planes, mut weights, mut bias) = (tp.planes().to_vec(), tp.weights().to_vec(), tp.bias());
                let slot = if i < np {
                    &mut planes[i]
                } else if i < np + nc {
                    &mut weights[i - np]
                } else {
                    &mut bias
                };
                let before = *slot;
                *slot += d;
                let actual = (*slot - before) as f64;
                let q = TriplaneLinear::new(tp.resolution(), nc, planes, weights, bias).unwrap();
                (triplane_loss(&q, &pts, &tg).0, actual)
            };
            let ((lp, dp), (lm, dm)) = (at(h), at(-h));
            worst = worst.max(rel(grad[i], (lp - lm) / (dp - dm), 1e-3));
        }
    }
    worst
}

/// ‖analytic − fd‖ / ‖fd‖ over every parameter of a small velocity model's
/// training loss, with a fourth-order stencil in f32.
fn flow_graph_error(trials: u64) -> f64 {
    let mut worst = 0f64;
    for seed in 0..trials {
        let cfg = ModelConfig { hidden: 8, heads: 2, mlp_ratio: 2, ..ModelConfig::new(6, 2) };
        let mut model = VelocityModel::new(cfg, seed).unwrap();
        // Random weights everywhere, including the zero-initialized gates.
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        for i in 0..model.params().len() {
            for v in model.params_mut().get_mut(i).data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let path = CondOtPath::default();
        let x0 = sample::gaussian_noise(5, 6, seed);
        let x1 = sample::gaussian_noise(5, 6, seed + 99);
        let (xt, target) = path.sample(&x0, &x1, 0.35).unwrap();
        let row = model.condition_row(Some(1)).unwrap();
        let batch = vec![(xt, target, 0.35f32, row)];
        let (_, grads) = batch_loss(&model, &batch).unwrap();
        let loss_with = |params: &ParamStore| {
            let m = VelocityModel::from_params(cfg, params.clone()).unwrap();
            batch_loss(&m, &batch).unwrap().0
        };
        let h = 1e-2f32;
        let (mut num, mut den) = (0f64, 0f64);
        for p in 0..model.params().len() {
            for j in 0..model.params().get(p).len() {
                let shifted = |d: f32| {
                    let mut q = model.params().clone();
                    q.get_mut(p).data_mut()[j] += d;
                    loss_with(&q)
                };
                let fd = (8.0 * (shifted(h) - shifted(-h)) - (shifted(2.0 * h) - shifted(-2.0 * h))) / (12.0 * h as f64);
                num += (grads[p].data()[j] as f64 - fd).powi(2);
                den += fd * fd;
            }
        }
        worst = worst.max((num / den).sqrt());
    }
    worst
}

#[test]
fn criterion_05_gradient_suites() {
    let _g = serial();
    let errs = [
        ("eval_gradient", spatial_gradient_error(5)),
        ("fine-tune", finetune_gradient_error(5)),
        ("triplane", triplane_gradient_error(5)),
        ("flow model graph", flow_graph_error(3)),
    ];
    let pass = errs.iter().all(|(_, e)| *e <= 1e-3);
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.2e}")).collect::<Vec<_>>().join(", ");
    report(5, "gradients vs central differences", pass, format!("worst relative error: {detail}"));
}

#[test]
fn criterion_06_finetune_gain() {
    let _g = serial();
    let mut lines = Vec::new();
    let (mut no_worse, mut strict) = (0, 0);
    for f in fitted() {
        let mesh = f.oracle.mesh();
        let (a, b) = (surface_chamfer(&f.init, mesh, RES), surface_chamfer(&f.tuned, mesh, RES));
        no_worse += usize::from(b <= a);
        strict += usize::from(b < a);
        lines.push(format!("{} {a:.2e}->{b:.2e}", f.name));
    }
    let n = fitted().len();
    report(
        6,
        "fine-tuning gain after 300 steps",
        no_worse == n && strict * 5 >= n * 4,
        format!("not worse on {no_worse}/{n}, strictly better on {strict}/{n} [{}]", lines.join(", ")),
    );
}

fn permute(x: &[f32], d: usize, perm: &[usize]) -> Vec<f32> {
    perm.iter().flat_map(|&i| x[i * d..(i + 1) * d].iter().copied()).collect()
}

#[test]
fn criterion_07_equivariance() {
    let _g = serial();
    let d = 31;
    let model = VelocityModel::new(ModelConfig { hidden: 32, ..ModelConfig::new(d, 2) }, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = sample::gaussian_noise(48, d, 1);
    let u = model.velocity(&x, 0.42, Some(1)).unwrap();
    let x0 = sample::gaussian_noise(16, d, 2);
    let solvers = [Solver::Midpoint { steps: 6 }, Solver::Dopri5 { rtol: 1e-4, atol: 1e-4 }];
    let reference: Vec<_> = solvers.iter().map(|&s| sample_from(&model, &x0, Some(0), 2.0, s).unwrap().0).collect();
    let (mut field_ok, mut sampler_ok) = (0, 0);
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..48).collect();
        perm.shuffle(&mut rng);
        field_ok += usize::from(model.velocity(&permute(&x, d, &perm), 0.42, Some(1)).unwrap() == permute(&u, d, &perm));
        let mut perm: Vec<usize> = (0..16).collect();
        perm.shuffle(&mut rng);
        let px0 = permute(&x0, d, &perm);
        sampler_ok += usize::from(solvers.iter().zip(&reference).all(|(&s, r)| {
            sample_from(&model, &px0, Some(0), 2.0, s).unwrap().0 == permute(r, d, &perm)
        }));
    }
    report(
        7,
        "permutation equivariance (bit-exact)",
        field_ok == 20 && sampler_ok == 20,
        format!("velocity {field_ok}/20, sampler (midpoint and dopri5) {sampler_ok}/20"),
    );
}

#[test]
fn criterion_08_cond_ot_identities() {
    let _g = serial();
    let path = CondOtPath::default();
    let sigma = 1e-5f64;
    let rho = 1.0 - sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = 0;
    for _ in 0..100 {
        let len = rng.random_range(1..64);
        let x0: Vec<f32> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x1: Vec<f32> = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (at0, _) = path.sample(&x0, &x1, 0.0).unwrap();
        let (at1, _) = path.sample(&x0, &x1, 1.0).unwrap();
        let (_, v02) = path.sample(&x0, &x1, 0.2).unwrap();
        let (_, v08) = path.sample(&x0, &x1, 0.8).unwrap();
        let t: f64 = rng.random();
        let (xt, _) = path.sample(&x0, &x1, t).unwrap();
        for i in 0..len {
            let (a0, a1) = (x0[i] as f64, x1[i] as f64);
            // f64 references, rounded once to the stored precision.
            let end1 = (a1 + sigma * a0) as f32;
            let vel = (a1 - rho * a0) as f32;
            let mid = (t * a1 + ((1.0 - t) + sigma * t) * a0) as f32;
            let ok = at0[i] == x0[i]
                && (at1[i] - end1).abs() <= f32::EPSILON * end1.abs()
                && v02[i] == vel
                && v08[i] == vel
                && xt[i] == mid;
            failures += usize::from(!ok);
        }
    }
    report(8, "Cond-OT path identities", failures == 0, format!("{failures} mismatches over 100 random tuples (σ = 1e-5)"));
}

#[test]
fn criterion_09_solvers() {
    let _g = serial();
    let x0 = [1.0, -0.5, 2.0, 0.25];
    let exact: Vec<f64> = x0.iter().map(|v| v * (-1.0f64).exp()).collect();
    let err = |solver| {
        let mut f = |_: f64, x: &[f64]| Ok(x.iter().map(|v| -v).collect());
        let sol = integrate(&mut f, &x0, solver).unwrap();
        sol.x.iter().zip(&exact).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max)
    };
    let mid50 = err(Solver::Midpoint { steps: 50 });
    let order_mid = (err(Solver::Midpoint { steps: 32 }) / err(Solver::Midpoint { steps: 64 })).log2();
    let order_eul = (err(Solver::Euler { steps: 32 }) / err(Solver::Euler { steps: 64 })).log2();
    let mut calls = 0;
    let mut counting = |_: f64, x: &[f64]| {
        calls += 1;
        Ok(x.to_vec())
    };
    let nfe = integrate(&mut counting, &x0, Solver::Midpoint { steps: 25 }).unwrap().nfe;
    let model = VelocityModel::new(ModelConfig { hidden: 16, ..ModelConfig::new(5, 0) }, 1).unwrap();
    let model_nfe = sample(&model, 4, None, 0.0, Solver::Midpoint { steps: 25 }, 0).unwrap().1.nfe;
    report(
        9,
        "ODE solvers",
        mid50 <= 1e-3 && (order_mid - 2.0).abs() < 0.1 && (order_eul - 1.0).abs() < 0.1 && nfe == 50 && calls == 50 && model_nfe == 50,
        format!("midpoint-50 rel error {mid50:.2e}, orders midpoint {order_mid:.3} euler {order_eul:.3}, midpoint-25 NFE {nfe} (calls {calls}, model {model_nfe})"),
    );
}

#[test]
fn criterion_10_cfg_algebra() {
    let _g = serial();
    let model = VelocityModel::new(ModelConfig { hidden: 32, ..ModelConfig::new(31, 3) }, 10).unwrap();
    let x = sample::gaussian_noise(20, 31, 10);
    let (c, u) = (model.velocity(&x, 0.3, Some(2)).unwrap(), model.velocity(&x, 0.3, None).unwrap());
    let zero = cfg_velocity(&model, &x, 0.3, Some(2), 0.0).unwrap() == c;
    let minus_one = cfg_velocity(&model, &x, 0.3, Some(2), -1.0).unwrap() == u;
    let mut worst = 0f64;
    for omega in [1.0f32, 2.5, 7.0] {
        let g = cfg_velocity(&model, &x, 0.3, Some(2), omega).unwrap();
        for i in 0..g.len() {
            let direct = (1.0 + omega as f64) * c[i] as f64 - omega as f64 * u[i] as f64;
            worst = worst.max((g[i] as f64 - direct).abs() / direct.abs().max(1.0));
        }
    }
    report(
        10,
        "classifier-free guidance algebra",
        zero && minus_one && worst <= 1e-6,
        format!("ω=0 exact {zero}, ω=-1 exact {minus_one}, recombination error {worst:.2e}"),
    );
}

#[test]
fn criterion_11_overfit_smoke_test() {
    let _g = serial();
    let mesh = msdf_core::fixtures::test_mesh("chair").unwrap();
    let oracle = SdfOracle::new(mesh.clone()).unwrap();
    let x = initialize(&oracle, 256, 5, 0).unwrap();
    let ft = FineTuneConfig { steps: 300, ..FineTuneConfig::default() };
    let pool = SamplePool::build(&oracle, ft.surface_points, ft.near_points, ft.near_variance, 0).unwrap();
    let (x, _) = fine_tune_on(&x, &pool, &ft).unwrap();
    let res = 128;
    let fit_cd = surface_chamfer(&x, &mesh, res);
    let (mats, stats) = normalize_channels(std::slice::from_ref(&x), 100_000, 0).unwrap();

    let cfg = ModelConfig::new(129, 0);
    let mut model = VelocityModel::new(cfg, 0).unwrap();
    let tc = TrainConfig { steps: 2000, batch_size: 4, lr: 1e-3, ..TrainConfig::default() };
    let rep = train(&mut model, &[Example { x: mats[0].clone(), class: None }], &tc).unwrap();
    let head = rep.losses[..10].iter().sum::<f64>() / 10.0;
    let tail = rep.tail_loss(100);

    let g = sample_to_shape(&model, &stats, 256, 5, None, 0.0, Solver::Midpoint { steps: 50 }, res, 11).unwrap();
    let gen_cd = g.mesh.as_ref().map_or(f64::INFINITY, |m| chamfer_to_mesh(m, &mesh, CHAMFER_SAMPLES, 1).unwrap());
    // Distance of the sample to the training matrix under the best row matching.
    let target = &mats[0];
    let generated = g.msdf.to_matrix();
    let mut normalized = generated.clone();
    stats.normalize_matrix(5, &mut normalized);
    let rows = |m: &[f32]| m.chunks_exact(129).map(|r| r.to_vec()).collect::<Vec<_>>();
    let (a, b) = (rows(&normalized), rows(target));
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|r| b.iter().map(|s| r.iter().zip(s).map(|(p, q)| ((p - q) as f64).powi(2)).sum()).collect())
        .collect();
    let assign = msdf_core::metrics::hungarian(&cost);
    let rms = (assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() / target.len() as f64).sqrt();

    let loss_ok = tail < 0.1 * head;
    let time_ok = rep.seconds < 1800.0;
    let mesh_ok = gen_cd <= 2.0 * fit_cd;
    report(
        11,
        "single-shape overfit (n=256, k=5)",
        loss_ok && time_ok && mesh_ok,
        format!(
            "loss {head:.4} -> {tail:.4} ({:.1}% of initial) in {:.0}s; generated Chamfer {gen_cd:.3e} vs fitted {fit_cd:.3e} ({:.1}x), matched normalized RMS error {rms:.3e}",
            100.0 * tail / head,
            rep.seconds,
            gen_cd / fit_cd
        ),
    );
}

#[test]
fn criterion_12_local_extraction() {
    let _g = serial();
    let mut identical = 0;
    let mut speedups = Vec::new();
    let mut fractions = Vec::new();
    for f in fitted() {
        let (dm, ds) = marching_cubes_dense(&f.tuned, RES).unwrap();
        let (lm, ls) = marching_cubes_local(&f.tuned, RES).unwrap();
        identical += usize::from(dm.vertices() == lm.vertices() && dm.triangles() == lm.triangles());
        speedups.push(ds.seconds / ls.seconds);
        fractions.push(ls.cell_fraction());
    }
    let n = fitted().len();
    let min_speed = speedups.iter().copied().fold(f64::INFINITY, f64::min);
    let max_frac = fractions.iter().copied().fold(0.0, f64::max);
    report(
        12,
        "local extraction at R=256",
        identical == n && min_speed >= 2.0 && max_frac < 0.3,
        format!(
            "bit-identical {identical}/{n}, speedup min {min_speed:.1}x median {:.1}x, cell fraction max {:.1}%",
            median(&speedups),
            100.0 * max_frac
        ),
    );
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..n {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect()
}

/// A random ellipsoid with semi-axes drawn from `[0.4, 1]`.
fn random_shape(rng: &mut ChaCha8Rng, id: usize, points: usize) -> PointCloud {
    let r = [0; 3].map(|_| rng.random_range(0.4..1.0));
    let mesh = primitives::icosphere(3, 1.0).map_vertices(|v| Vec3::new(v.x * r[0], v.y * r[1], v.z * r[2]));
    PointCloud::from_mesh(format!("s{id}"), &mesh, points, rng.random()).unwrap()
}

#[test]
fn criterion_13_metric_oracles() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst_cd = 0f64;
    let mut worst_emd = 0f64;
    for _ in 0..50 {
        let (na, nb) = (rng.random_range(1..40), rng.random_range(1..40));
        let (a, b) = (random_cloud(&mut rng, na), random_cloud(&mut rng, nb));
        worst_cd = worst_cd.max((chamfer(&a, &b).unwrap() - chamfer_brute(&a, &b).unwrap()).abs());
        let n = rng.random_range(1..=7);
        let (a, b) = (random_cloud(&mut rng, n), random_cloud(&mut rng, n));
        let brute = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| (0..3).map(|c| (a[i][c] - b[j][c]).powi(2)).sum::<f64>().sqrt()).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        worst_emd = worst_emd.max((emd(&a, &b).unwrap() - brute).abs());
    }

    // Identical sets: full coverage, zero MMD. Two independent draws of the
    // same distribution: 1-NNA near chance.
    let size = 50;
    let set_a: Vec<_> = (0..size).map(|i| random_shape(&mut rng, i, 256)).collect();
    let set_b: Vec<_> = (0..size).map(|i| random_shape(&mut rng, size + i, 256)).collect();
    let mut parts = vec![format!("CD brute-force gap {worst_cd:.1e}, EMD enumeration gap {worst_emd:.1e}")];
    let mut pass = worst_cd <= 1e-9 && worst_emd <= 1e-9;
    for kind in [DistanceKind::Cd, DistanceKind::Emd] {
        let same = set_metrics(&set_a, &set_a, kind).unwrap();
        let iid = set_metrics(&set_a, &set_b, kind).unwrap();
        pass &= same.cov == 1.0 && same.mmd.abs() < 1e-12 && (0.4..=0.6).contains(&iid.nna);
        parts.push(format!(
            "{kind}: identical sets COV {:.0}% MMD {:.1e} (1-NNA {:.0}%), i.i.d. sets 1-NNA {:.1}%",
            100.0 * same.cov,
            same.mmd,
            100.0 * same.nna,
            100.0 * iid.nna
        ));
    }
    report(13, "metric oracles and identical-distribution signature", pass, parts.join("; "));
}
