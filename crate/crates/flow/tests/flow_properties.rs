use diffkit::Tape;
use msdf_core::msdf::{normalize_channels, row_width, ChannelStats, MosaicSdf};
use msdf_flow::model::canonical_order;
use msdf_flow::sample::gaussian_noise;
use msdf_flow::train::batch_loss;
use msdf_flow::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn permute(x: &[f32], d: usize, perm: &[usize]) -> Vec<f32> {
    perm.iter().flat_map(|&i| x[i * d..(i + 1) * d].iter().copied()).collect()
}

fn small_model(d: usize, classes: usize, seed: u64) -> VelocityModel {
    VelocityModel::new(ModelConfig { hidden: 16, ..ModelConfig::new(d, classes) }, seed).unwrap()
}

#[test]
fn path_identities_on_random_tuples() {
    let path = CondOtPath::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let len = rng.random_range(1..40);
        let x0: Vec<f32> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x1: Vec<f32> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let t: f64 = rng.random();
        let (a, _) = path.sample(&x0, &x1, 0.0).unwrap();
        assert_eq!(a, x0);
        let (b, _) = path.sample(&x0, &x1, 1.0).unwrap();
        for i in 0..len {
            let expect = x1[i] as f64 + 1e-5 * x0[i] as f64;
            assert!((b[i] as f64 - expect).abs() <= 1e-6 * expect.abs().max(1.0));
        }
        let (_, u) = path.sample(&x0, &x1, t).unwrap();
        let (_, v) = path.sample(&x0, &x1, 0.2).unwrap();
        let (_, w) = path.sample(&x0, &x1, 0.8).unwrap();
        assert_eq!(u, v);
        assert_eq!(v, w);
        // The path is a straight line: X_t − X_0 = t·(X_1 − ρX_0).
        let (xt, _) = path.sample(&x0, &x1, t).unwrap();
        for i in 0..len {
            let lhs = xt[i] as f64 - x0[i] as f64;
            let rhs = t * (x1[i] as f64 - (1.0 - 1e-5) * x0[i] as f64);
            assert!((lhs - rhs).abs() < 1e-5);
        }
    }
    assert!(path.sample(&[0.0], &[0.0, 1.0], 0.5).is_err());
    assert!(CondOtPath::new(0.0).is_err());
}

#[test]
fn velocity_is_permutation_equivariant_bit_exactly() {
    let (n, d) = (24, 9);
    let m = small_model(d, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = gaussian_noise(n, d, 3);
    let u = m.velocity(&x, 0.37, Some(2)).unwrap();
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let up = m.velocity(&permute(&x, d, &perm), 0.37, Some(2)).unwrap();
        assert_eq!(up, permute(&u, d, &perm));
    }
}

#[test]
fn repeated_rows_get_identical_outputs() {
    let d = 5;
    let m = small_model(d, 0, 1);
    let mut x = gaussian_noise(6, d, 4);
    let row: Vec<f32> = x[..d].to_vec();
    x[3 * d..4 * d].copy_from_slice(&row);
    let u = m.velocity(&x, 0.5, None).unwrap();
    assert_eq!(u[..d], u[3 * d..4 * d]);
}

#[test]
fn sampler_is_permutation_equivariant() {
    let (n, d) = (10, 6);
    let m = small_model(d, 2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = gaussian_noise(n, d, 11);
    for solver in [Solver::Midpoint { steps: 4 }, Solver::Dopri5 { rtol: 1e-3, atol: 1e-3 }] {
        let (a, sa) = sample_from(&m, &x0, Some(1), 1.5, solver).unwrap();
        for _ in 0..3 {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let (b, sb) = sample_from(&m, &permute(&x0, d, &perm), Some(1), 1.5, solver).unwrap();
            assert_eq!(b, permute(&a, d, &perm), "{solver}");
            assert_eq!(sa.nfe, sb.nfe);
        }
    }
}

#[test]
fn guidance_is_the_affine_recombination() {
    let d = 7;
    let m = small_model(d, 4, 9);
    let x = gaussian_noise(12, d, 5);
    let c = m.velocity(&x, 0.6, Some(3)).unwrap();
    let u = m.velocity(&x, 0.6, None).unwrap();
    let g = cfg_velocity(&m, &x, 0.6, Some(3), 1.0).unwrap();
    for i in 0..g.len() {
        let direct = 2.0 * c[i] as f64 - u[i] as f64;
        assert!((g[i] as f64 - direct).abs() <= 1e-6 * direct.abs().max(1.0));
    }
    assert_eq!(cfg_velocity(&m, &x, 0.6, Some(3), 0.0).unwrap(), c);
    assert_eq!(cfg_velocity(&m, &x, 0.6, Some(3), -1.0).unwrap(), u);
}

#[test]
fn solvers_on_linear_decay() {
    let x0 = [1.0, -0.5, 2.0];
    let exact: Vec<f64> = x0.iter().map(|v| v * (-1.0f64).exp()).collect();
    let err = |solver| {
        let mut f = |_: f64, x: &[f64]| Ok(x.iter().map(|v| -v).collect());
        let sol = integrate(&mut f, &x0, solver).unwrap();
        sol.x.iter().zip(&exact).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max)
    };
    assert!(err(Solver::Midpoint { steps: 50 }) < 1e-3);
    let mid = err(Solver::Midpoint { steps: 20 }) / err(Solver::Midpoint { steps: 40 });
    assert!((mid - 4.0).abs() < 0.4, "midpoint ratio {mid}");
    let eul = err(Solver::Euler { steps: 20 }) / err(Solver::Euler { steps: 40 });
    assert!((eul - 2.0).abs() < 0.2, "euler ratio {eul}");
    assert!(err(Solver::dopri5()) < 1e-4);
}

#[test]
fn gaussian_noise_rows_are_exchangeable() {
    // Row sums of standard noise are N(0, d) for every row.
    let (n, d, draws) = (4, 16, 4000);
    let mut sums = vec![Vec::with_capacity(draws); n];
    for s in 0..draws as u64 {
        let x = gaussian_noise(n, d, s);
        for r in 0..n {
            sums[r].push(x[r * d..(r + 1) * d].iter().map(|&v| v as f64).sum::<f64>());
        }
    }
    for r in &sums {
        let mean = r.iter().sum::<f64>() / draws as f64;
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / draws as f64;
        // Five standard errors.
        assert!(mean.abs() < 5.0 * (d as f64 / draws as f64).sqrt(), "{mean}");
        assert!((var / d as f64 - 1.0).abs() < 5.0 * (2.0 / draws as f64).sqrt(), "{var}");
    }
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

/// Lowest loss any row-equivariant model can reach on a single item: the
/// model sees X_t as a set, so its best answer is the posterior mean of the
/// target over all row matchings between X_t and X_1.
fn bayes_floor(x1: &[f64], n: usize, d: usize, samples: usize) -> f64 {
    let perms = permutations(n);
    let rho = 1.0 - 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut total = 0.0;
    for _ in 0..samples {
        let t: f64 = rng.random();
        let x0: Vec<f64> = (0..n * d).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let sd = 1.0 - rho * t;
        let xt: Vec<f64> = (0..n * d).map(|j| t * x1[j] + sd * x0[j]).collect();
        let mut cost = vec![0.0; n * n];
        for i in 0..n {
            for r in 0..n {
                cost[i * n + r] = (0..d).map(|a| (xt[i * d + a] - t * x1[r * d + a]).powi(2)).sum::<f64>() / (2.0 * sd * sd);
            }
        }
        let logw: Vec<f64> = perms.iter().map(|p| -(0..n).map(|i| cost[i * n + p[i]]).sum::<f64>()).collect();
        let top = logw.iter().cloned().fold(f64::MIN, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = w.iter().sum();
        let mut mean = vec![0.0; n * d];
        for (p, wi) in perms.iter().zip(&w) {
            for i in 0..n {
                for a in 0..d {
                    let x1r = x1[p[i] * d + a];
                    mean[i * d + a] += wi / z * (x1r - rho * (xt[i * d + a] - t * x1r) / sd);
                }
            }
        }
        total += (0..n * d).map(|j| (x1[j] - rho * x0[j] - mean[j]).powi(2)).sum::<f64>() / (n * d) as f64;
    }
    total / samples as f64
}

#[test]
fn single_item_training_approaches_the_matching_floor() {
    let (n, d) = (8, 4);
    let x: Vec<f32> = (0..n * d).map(|i| (i * 7 % 11) as f32 / 5.0 - 1.0).collect();
    let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let floor = bayes_floor(&x64, n, d, 300);
    let mut m = VelocityModel::new(ModelConfig::new(d, 0), 3).unwrap();
    let data = [Example { x, class: None }];
    let cfg = TrainConfig {
        steps: 2000,
        batch_size: 8,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let report = train(&mut m, &data, &cfg).unwrap();
    let head = report.losses[..10].iter().sum::<f64>() / 10.0;
    let tail = report.tail_loss(100);
    // The floor alone is about 30% of the initial loss for this item.
    assert!(floor > 0.25 * head, "floor {floor}, initial {head}");
    assert!(tail < 1.3 * floor, "loss {head} -> {tail}, floor {floor}");
}

#[test]
fn null_condition_only_leaves_class_rows_untouched() {
    let d = 5;
    let m = small_model(d, 3, 2);
    let path = CondOtPath::default();
    let x1 = gaussian_noise(6, d, 1);
    let x0 = gaussian_noise(6, d, 2);
    let (xt, target) = path.sample(&x0, &x1, 0.4).unwrap();
    let null = m.condition_row(None).unwrap();
    let (_, grads) = batch_loss(&m, &[(xt, target, 0.4, null)]).unwrap();
    let table = m.params().index_of("cond/table").unwrap();
    let g = grads[table].data();
    let h = m.config().hidden;
    assert!(g[..3 * h].iter().all(|&v| v == 0.0));
    assert!(g[3 * h..].iter().any(|&v| v != 0.0));

    // The same through the training loop: p_uncond = 1 never moves class rows.
    let mut m2 = m.clone();
    let data = [Example { x: x1, class: Some(1) }];
    let cfg = TrainConfig { steps: 5, p_uncond: 1.0, lr: 1e-2, ..TrainConfig::default() };
    train(&mut m2, &data, &cfg).unwrap();
    let before = &m.params().get(table).data()[..3 * h];
    let after = &m2.params().get(table).data()[..3 * h];
    assert_eq!(before, after);
}

#[test]
fn equal_seeds_give_identical_checkpoints() {
    let k = 2;
    let d = row_width(k);
    let data = [Example { x: gaussian_noise(6, d, 4), class: Some(0) }];
    let run = || {
        let cfg = ModelConfig { hidden: 16, ..ModelConfig::new(d, 1) };
        let mut m = VelocityModel::new(cfg, 7).unwrap();
        let tc = TrainConfig { steps: 20, batch_size: 2, seed: 3, ..TrainConfig::default() };
        let rep = train(&mut m, &data, &tc).unwrap();
        Checkpoint {
            meta: CheckpointMeta::new(cfg, tc, 6, k),
            params: m.params().clone(),
            ema: Some(rep.ema),
        }
        .to_bytes()
        .unwrap()
    };
    assert_eq!(run(), run());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    std::fs::write(&path, run()).unwrap();
    let ck = Checkpoint::load(&path).unwrap();
    assert_eq!(ck.to_bytes().unwrap(), run());
}

#[test]
fn non_finite_training_data_aborts() {
    let d = 4;
    let mut m = VelocityModel::new(ModelConfig::new(d, 0), 0).unwrap();
    let mut x = vec![0.5f32; 3 * d];
    x[2] = f32::INFINITY;
    let r = train(&mut m, &[Example { x, class: None }], &TrainConfig { steps: 3, ..TrainConfig::default() });
    assert!(matches!(r, Err(FlowError::NonFiniteLoss { step: 0 })));
}

fn toy_msdf(k: usize, n: usize, seed: u64) -> MosaicSdf {
    // A sphere of radius 0.5 sampled on grids scattered over its surface.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::new();
    let mut scales = Vec::new();
    let mut values = Vec::new();
    for _ in 0..n {
        let v: [f64; 3] = [0; 3].map(|_| rng.random_range(-1.0..1.0));
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-3);
        let p = v.map(|c| (0.5 * c / r) as f32);
        let s: f32 = rng.random_range(0.2..0.3);
        scales.push(s);
        for j in 0..k * k * k {
            let idx = [j % k, j / k % k, j / (k * k)];
            let q: Vec<f64> = (0..3)
                .map(|a| p[a] as f64 + s as f64 * (2.0 * idx[a] as f64 - (k - 1) as f64) / (k - 1) as f64)
                .collect();
            values.push(((q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt() - 0.5) as f32);
        }
        centers.push(p);
    }
    MosaicSdf::new(k, centers, scales, values).unwrap()
}

#[test]
fn matrix_to_shape_round_trips_a_training_shape() {
    let k = 3;
    let x = toy_msdf(k, 200, 1);
    let (mats, stats) = normalize_channels(std::slice::from_ref(&x), 1000, 0).unwrap();
    let (back, mesh, _) = matrix_to_shape(&mats[0], &stats, k, 48).unwrap();
    let direct = msdf_core::extraction::marching_cubes_local(&x, 48).unwrap().0;
    let mesh = mesh.unwrap();
    let cd = msdf_core::extraction::chamfer_to_mesh(&mesh, &direct, 2000, 1).unwrap();
    assert!(cd < 1e-10, "{cd}");
    assert!(back.scales().iter().all(|&s| s > 0.0));
}

#[test]
fn generated_scales_are_positive() {
    let k = 2;
    let d = row_width(k);
    let m = small_model(d, 0, 4);
    let stats = ChannelStats::from_array([0.0, 0.0, 0.0, 1.0, 0.05, 0.5]).unwrap();
    let g = sample_to_shape(&m, &stats, 16, k, None, 0.0, Solver::Euler { steps: 2 }, 16, 1).unwrap();
    assert!(g.msdf.scales().iter().all(|&s| s >= sample::MIN_SCALE));
    assert_eq!(g.nfe, 2);
    assert!(sample_to_shape(&m, &stats, 16, 3, None, 0.0, Solver::Euler { steps: 2 }, 16, 1).is_err());
}

#[test]
fn canonical_order_sorts_rows() {
    let x = [3.0f32, 1.0, -2.0, 5.0, 3.0, 0.0];
    assert_eq!(canonical_order(&x, 2), vec![1, 2, 0]);
    let _ = Tape::new();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn equivariance_holds_for_arbitrary_inputs(seed in 0u64..10_000, n in 1usize..12, t in 0.0f32..1.0) {
        let d = 3;
        let m = small_model(d, 1, seed % 7);
        let x = gaussian_noise(n, d, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let u = m.velocity(&x, t, Some(0)).unwrap();
        prop_assert_eq!(m.velocity(&permute(&x, d, &perm), t, Some(0)).unwrap(), permute(&u, d, &perm));
    }
}
