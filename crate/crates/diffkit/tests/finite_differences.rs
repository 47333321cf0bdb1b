//! Reverse-mode gradients against central differences for composed graphs.

use diffkit::{ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Builds the loss on a fresh tape from the given parameter values.
type Graph = dyn Fn(&mut Tape, &[diffkit::NodeId]) -> diffkit::NodeId;

fn random_params(rng: &mut ChaCha8Rng, shapes: &[&[usize]]) -> ParamStore {
    let mut store = ParamStore::new();
    for (i, s) in shapes.iter().enumerate() {
        let len: usize = s.iter().product();
        let data = (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        store.add(format!("p{i}"), Tensor::new(s, data).unwrap());
    }
    store
}

fn eval(params: &ParamStore, graph: &Graph) -> f64 {
    let mut tape = Tape::new();
    let ids: Vec<_> = (0..params.len())
        .map(|i| tape.param(i, params.get(i).clone()))
        .collect();
    let loss = graph(&mut tape, &ids);
    tape.value(loss).item() as f64
}

/// Relative error ‖analytic − fd‖ / ‖fd‖ over every parameter entry.
fn check(params: &ParamStore, graph: &Graph) -> f64 {
    let mut tape = Tape::new();
    let ids: Vec<_> = (0..params.len())
        .map(|i| tape.param(i, params.get(i).clone()))
        .collect();
    let loss = graph(&mut tape, &ids);
    let grads = tape.backward(loss).unwrap().param_grads(&params.shapes());

    let h = 1e-2f32;
    let (mut num, mut den) = (0f64, 0f64);
    for p in 0..params.len() {
        for j in 0..params.get(p).len() {
            let mut plus = params.clone();
            plus.get_mut(p).data_mut()[j] += h;
            let mut minus = params.clone();
            minus.get_mut(p).data_mut()[j] -= h;
            let mut plus2 = params.clone();
            plus2.get_mut(p).data_mut()[j] += 2.0 * h;
            let mut minus2 = params.clone();
            minus2.get_mut(p).data_mut()[j] -= 2.0 * h;
            // Fourth-order central stencil keeps truncation error below the f32 noise floor.
            let fd = (8.0 * (eval(&plus, graph) - eval(&minus, graph))
                - (eval(&plus2, graph) - eval(&minus2, graph)))
                / (12.0 * h as f64);
            let an = grads[p].data()[j] as f64;
            num += (an - fd).powi(2);
            den += fd.powi(2);
        }
    }
    (num / den.max(1e-30)).sqrt()
}

const TOL: f64 = 1e-3;

fn mlp(tape: &mut Tape, p: &[diffkit::NodeId]) -> (diffkit::NodeId, diffkit::NodeId) {
    let x = p[6];
    let h1 = tape.matmul(x, p[0]).unwrap();
    let h1 = tape.add(h1, p[1]).unwrap();
    let h1 = tape.gelu(h1);
    let h2 = tape.matmul(h1, p[2]).unwrap();
    let pre = tape.add(h2, p[3]).unwrap();
    let h2 = tape.relu(pre);
    let out = tape.matmul(h2, p[4]).unwrap();
    let out = tape.add(out, p[5]).unwrap();
    let sq = tape.mul(out, out).unwrap();
    (tape.mean(sq), pre)
}

#[test]
fn three_layer_mlp() {
    let shapes: &[&[usize]] = &[&[4, 5], &[5], &[5, 6], &[6], &[6, 2], &[2], &[3, 4]];
    let mut checked = 0;
    let mut seed = 0;
    while checked < 5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        seed += 1;
        let params = random_params(&mut rng, shapes);
        // Central differences are only meaningful away from the ReLU kink.
        let mut tape = Tape::new();
        let ids: Vec<_> = (0..params.len())
            .map(|i| tape.param(i, params.get(i).clone()))
            .collect();
        let (_, pre) = mlp(&mut tape, &ids);
        if tape.value(pre).data().iter().any(|z| z.abs() < 0.1) {
            continue;
        }
        let err = check(&params, &|t: &mut Tape, p: &[diffkit::NodeId]| mlp(t, p).0);
        assert!(err < TOL, "seed {seed}: relative error {err}");
        checked += 1;
    }
}

#[test]
fn attention_block_with_layer_norm_and_softmax() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let params = random_params(&mut rng, &[&[5, 4], &[4, 4], &[4, 4], &[4, 4], &[4]]);
        let graph = |tape: &mut Tape, p: &[diffkit::NodeId]| {
            let x = tape.layer_norm(p[0]).unwrap();
            let x = tape.mul(x, p[4]).unwrap();
            let q = tape.matmul(x, p[1]).unwrap();
            let k = tape.matmul(x, p[2]).unwrap();
            let v = tape.matmul(x, p[3]).unwrap();
            let mut heads = Vec::new();
            for h in 0..2 {
                let qh = tape.slice(q, 1, 2 * h, 2).unwrap();
                let kh = tape.slice(k, 1, 2 * h, 2).unwrap();
                let vh = tape.slice(v, 1, 2 * h, 2).unwrap();
                let s = tape.matmul_nt(qh, kh).unwrap();
                let s = tape.scale(s, 0.7);
                let a = tape.softmax(s).unwrap();
                heads.push(tape.matmul(a, vh).unwrap());
            }
            let o = tape.concat(&heads, 1).unwrap();
            let o = tape.add(o, p[0]).unwrap();
            let t = tape.transpose(o).unwrap();
            let r = tape.sum_axis(t, 1).unwrap();
            let r2 = tape.mul(r, r).unwrap();
            tape.sum(r2)
        };
        let err = check(&params, &graph);
        assert!(err < TOL, "seed {seed}: relative error {err}");
    }
}

#[test]
fn gather_broadcast_reshape_sub_and_axis_means() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let params = random_params(&mut rng, &[&[4, 3], &[3], &[2, 6]]);
        let graph = |tape: &mut Tape, p: &[diffkit::NodeId]| {
            let g = tape.gather_rows(p[0], &[3, 0, 0, 2]).unwrap();
            let b = tape.broadcast(p[1], &[4]).unwrap();
            let d = tape.sub(g, b).unwrap();
            let d = tape.mul(d, d).unwrap();
            let m = tape.mean_axis(d, 0).unwrap();
            let r = tape.reshape(p[2], &[4, 3]).unwrap();
            let r = tape.gelu(r);
            let rm = tape.mean_axis(r, 1).unwrap();
            let both = tape.concat(&[m, rm], 0).unwrap();
            let both = tape.softmax(both).unwrap();
            let w = tape.mul(both, both).unwrap();
            tape.sum(w)
        };
        let err = check(&params, &graph);
        assert!(err < TOL, "seed {seed}: relative error {err}");
    }
}

#[test]
fn identical_inputs_give_bit_identical_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = random_params(&mut rng, &[&[16, 8], &[8, 8]]);
    let run = || {
        let mut tape = Tape::new();
        let a = tape.param(0, params.get(0).clone());
        let b = tape.param(1, params.get(1).clone());
        let c = tape.matmul(a, b).unwrap();
        let c = tape.softmax(c).unwrap();
        let loss = tape.sum(c);
        let loss = tape.scale(loss, 0.5);
        tape.backward(loss).unwrap().param_grads(&params.shapes())
    };
    assert_eq!(run(), run());
}
