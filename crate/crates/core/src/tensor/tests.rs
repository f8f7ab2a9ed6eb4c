use super::*;
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

/// Gradient-check a scalar-producing graph built from named parameters.
fn check_graph<F>(params: &[(&str, Array2<f64>)], build: F)
where
    F: Fn(&mut Tape, &ParamStore) -> NodeId,
{
    let mut store = ParamStore::new();
    for (name, value) in params {
        store.register(name, value.clone());
    }
    let mut tape = Tape::new();
    let root = build(&mut tape, &store);
    store.zero_grads();
    tape.backward(root, &mut store);
    let worst = max_grad_disagreement(&mut store, 1e-5, |s| {
        let mut t = Tape::new();
        let r = build(&mut t, s);
        t.scalar(r)
    });
    assert!(worst < 1e-7, "gradient mismatch: {worst:e}");
}

/// Reduce a node to a scalar with non-uniform weights so every entry of the
/// upstream gradient is distinct.
fn weighted_sum(tape: &mut Tape, node: NodeId) -> NodeId {
    let (r, c) = tape.value(node).dim();
    let w = Array2::from_shape_fn((r, c), |(i, j)| 0.3 + 0.7 * (i as f64) + 0.11 * (j as f64));
    let wn = tape.constant(w);
    let prod = tape.mul(node, wn);
    tape.sum_all(prod)
}

#[test]
fn grad_add_sub_mul() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_matrix(&mut rng, 3, 4, -1.0, 1.0);
    let b = random_matrix(&mut rng, 3, 4, -1.0, 1.0);
    check_graph(&[("a", a.clone()), ("b", b.clone())], |t, s| {
        let x = t.param(s, s.id("a").unwrap());
        let y = t.param(s, s.id("b").unwrap());
        let sum = t.add(x, y);
        let diff = t.sub(sum, y);
        let prod = t.mul(diff, y);
        weighted_sum(t, prod)
    });
}

#[test]
fn grad_row_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_matrix(&mut rng, 4, 3, -1.0, 1.0);
    let row = random_matrix(&mut rng, 1, 3, 0.5, 1.5);
    check_graph(&[("a", a), ("row", row)], |t, s| {
        let x = t.param(s, s.id("a").unwrap());
        let r = t.param(s, s.id("row").unwrap());
        let shifted = t.add_row(x, r);
        let scaled = t.mul_row(shifted, r);
        weighted_sum(t, scaled)
    });
}

#[test]
fn grad_scalar_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_matrix(&mut rng, 2, 5, -1.0, 1.0);
    check_graph(&[("a", a)], |t, s| {
        let x = t.param(s, s.id("a").unwrap());
        let y = t.scale(x, -1.7);
        let z = t.add_scalar(y, 0.4);
        weighted_sum(t, z)
    });
}

#[test]
fn grad_matmul_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random_matrix(&mut rng, 3, 4, -1.0, 1.0);
    let b = random_matrix(&mut rng, 4, 2, -1.0, 1.0);
    check_graph(&[("a", a), ("b", b)], |t, s| {
        let x = t.param(s, s.id("a").unwrap());
        let y = t.param(s, s.id("b").unwrap());
        let xy = t.matmul(x, y);
        let xyt = t.transpose(xy);
        let back = t.matmul(xyt, x);
        weighted_sum(t, back)
    });
}

#[test]
fn grad_pointwise_nonlinearities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_matrix(&mut rng, 3, 3, -2.0, 2.0);
    for op in ["exp", "sigmoid", "softplus", "gelu", "tanh"] {
        check_graph(&[("a", a.clone())], |t, s| {
            let x = t.param(s, s.id("a").unwrap());
            let y = match op {
                "exp" => t.exp(x),
                "sigmoid" => t.sigmoid(x),
                "softplus" => t.softplus(x),
                "gelu" => t.gelu(x),
                _ => t.tanh(x),
            };
            weighted_sum(t, y)
        });
    }
}

#[test]
fn grad_clamp_interior_and_exterior() {
    // Values chosen away from the clamp boundaries so finite differences
    // stay on one side of each kink.
    let a = array![[-3.0, -0.5], [0.5, 3.0]];
    check_graph(&[("a", a)], |t, s| {
        let x = t.param(s, s.id("a").unwrap());
        let y = t.clamp(x, -1.0, 1.0);
        weighted_sum(t, y)
    });
}

#[test]
fn grad_row_softmax_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_matrix(&mut rng, 3, 5, -2.0, 2.0);
    for op in ["softmax", "log_softmax", "normalize"] {
        check_graph(&[("a", a.clone())], |t, s| {
            let x = t.param(s, s.id("a").unwrap());
            let y = match op {
                "softmax" => t.row_softmax(x),
                "log_softmax" => t.row_log_softmax(x),
                _ => t.row_normalize(x, 1e-5),
            };
            weighted_sum(t, y)
        });
    }
}

#[test]
fn grad_gather_with_duplicates() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let table = random_matrix(&mut rng, 5, 3, -1.0, 1.0);
    check_graph(&[("table", table)], |t, s| {
        let x = t.param(s, s.id("table").unwrap());
        let picked = t.gather(x, &[0, 2, 2, 4, 0]);
        weighted_sum(t, picked)
    });
}

#[test]
fn grad_concat_slice_select() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random_matrix(&mut rng, 2, 3, -1.0, 1.0);
    let b = random_matrix(&mut rng, 3, 3, -1.0, 1.0);
    let c = random_matrix(&mut rng, 5, 2, -1.0, 1.0);
    check_graph(&[("a", a), ("b", b), ("c", c)], |t, s| {
        let x = t.param(s, s.id("a").unwrap());
        let y = t.param(s, s.id("b").unwrap());
        let z = t.param(s, s.id("c").unwrap());
        let stacked = t.concat_rows(x, y); // 5x3
        let wide = t.concat_cols(stacked, z); // 5x5
        let mid = t.slice_rows(wide, 1, 3); // 3x5
        let picked = t.select_per_row(mid, &[4, 0, 2]); // 3x1
        weighted_sum(t, picked)
    });
}

#[test]
fn grad_mean_all() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_matrix(&mut rng, 4, 4, -1.0, 1.0);
    check_graph(&[("a", a)], |t, s| {
        let x = t.param(s, s.id("a").unwrap());
        let e = t.exp(x);
        t.mean_all(e)
    });
}

#[test]
fn grad_node_reused_twice() {
    // d/dx sum(x * x) = 2x exercises gradient accumulation at a shared node.
    let a = array![[1.0, -2.0], [3.0, 0.5]];
    let mut store = ParamStore::new();
    let id = store.register("x", a.clone());
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let sq = tape.mul(x, x);
    let root = tape.sum_all(sq);
    tape.backward(root, &mut store);
    let expected = &a * 2.0;
    for (g, e) in store.grad(id).iter().zip(expected.iter()) {
        assert!((g - e).abs() < 1e-12);
    }
}

#[test]
fn grad_reaches_constant_leaves() {
    let mut tape = Tape::new();
    let mut store = ParamStore::new();
    let c = tape.constant(array![[2.0, 3.0]]);
    let w = tape.constant(array![[5.0], [7.0]]);
    let prod = tape.matmul(c, w);
    let grads = tape.backward(prod, &mut store);
    let gc = grads.get(c).unwrap();
    assert_eq!(gc, &array![[5.0, 7.0]]);
    let gw = grads.get(w).unwrap();
    assert_eq!(gw, &array![[2.0], [3.0]]);
}

#[test]
fn forward_values_known_cases() {
    let mut tape = Tape::new();
    let x = tape.constant(array![[0.0, 1.0, -1.0]]);
    let sig = tape.sigmoid(x);
    assert!((tape.value(sig)[(0, 0)] - 0.5).abs() < 1e-15);
    let sp = tape.softplus(x);
    assert!((tape.value(sp)[(0, 0)] - std::f64::consts::LN_2).abs() < 1e-15);

    let logits = tape.constant(array![[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]);
    let sm = tape.row_softmax(logits);
    for row in tape.value(sm).rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
    assert!((tape.value(sm)[(1, 0)] - 1.0 / 3.0).abs() < 1e-12);

    let lsm = tape.row_log_softmax(logits);
    let sm_v = tape.value(sm).clone();
    for (l, p) in tape.value(lsm).iter().zip(sm_v.iter()) {
        assert!((l.exp() - p).abs() < 1e-12);
    }

    let nx = tape.constant(array![[1.0, 2.0, 3.0, 4.0]]);
    let norm = tape.row_normalize(nx, 0.0);
    let row = tape.value(norm).row(0).to_owned();
    assert!(row.mean().unwrap().abs() < 1e-12);
    let var = row.mapv(|v| v * v).mean().unwrap();
    assert!((var - 1.0).abs() < 1e-12);
}

#[test]
fn softmax_handles_large_logits() {
    let mut tape = Tape::new();
    let x = tape.constant(array![[1000.0, 0.0, -1e30]]);
    let sm = tape.row_softmax(x);
    let v = tape.value(sm);
    assert!((v[(0, 0)] - 1.0).abs() < 1e-12);
    assert!(v.iter().all(|e| e.is_finite()));
    let lsm = tape.row_log_softmax(x);
    assert!((tape.value(lsm)[(0, 0)] - 0.0).abs() < 1e-12);
}

#[test]
fn adam_first_step_magnitude_is_lr() {
    // With zero moment history, Adam's first update is lr * sign(g) up to eps.
    let mut store = ParamStore::new();
    let id = store.register("w", array![[10.0]]);
    let mut opt = Adam::new(&store, 0.01);
    let mut tape = Tape::new();
    let w = tape.param(&store, id);
    let sq = tape.mul(w, w);
    let root = tape.sum_all(sq);
    store.zero_grads();
    tape.backward(root, &mut store);
    let before = store.value(id)[(0, 0)];
    opt.step(&mut store);
    let after = store.value(id)[(0, 0)];
    assert!(((before - after) - 0.01).abs() < 1e-6);
}

#[test]
fn adam_minimizes_quadratic() {
    let mut store = ParamStore::new();
    let id = store.register("w", array![[-4.0, 9.0]]);
    let mut opt = Adam::new(&store, 0.05);
    for _ in 0..2000 {
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let target = tape.constant(array![[3.0, -1.0]]);
        let d = tape.sub(w, target);
        let sq = tape.mul(d, d);
        let root = tape.sum_all(sq);
        store.zero_grads();
        tape.backward(root, &mut store);
        opt.step(&mut store);
    }
    let w = store.value(id);
    assert!((w[(0, 0)] - 3.0).abs() < 1e-3, "w0 = {}", w[(0, 0)]);
    assert!((w[(0, 1)] + 1.0).abs() < 1e-3, "w1 = {}", w[(0, 1)]);
}

#[test]
fn grad_clipping_rescales_global_norm() {
    let mut store = ParamStore::new();
    let a = store.register("a", array![[3.0]]);
    let b = store.register("b", array![[4.0]]);
    let mut tape = Tape::new();
    let na = tape.param(&store, a);
    let nb = tape.param(&store, b);
    let pa = tape.mul(na, na);
    let pb = tape.mul(nb, nb);
    let tot = tape.add(pa, pb);
    let root = tape.sum_all(tot);
    store.zero_grads();
    tape.backward(root, &mut store);
    // grads are (6, 8), global norm 10
    assert!((store.grad_norm() - 10.0).abs() < 1e-12);
    let pre = store.clip_grad_norm(2.5);
    assert!((pre - 10.0).abs() < 1e-12);
    assert!((store.grad_norm() - 2.5).abs() < 1e-12);
    // clipping below the threshold is a no-op
    store.clip_grad_norm(5.0);
    assert!((store.grad_norm() - 2.5).abs() < 1e-12);
}

#[test]
#[should_panic(expected = "duplicate parameter name")]
fn duplicate_registration_panics() {
    let mut store = ParamStore::new();
    store.register_zeros("w", 1, 1);
    store.register_zeros("w", 2, 2);
}

#[test]
fn store_roundtrip_by_name() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    store.register_normal("emb", 4, 3, 0.02, &mut rng);
    store.register_zeros("bias", 1, 3);
    assert_eq!(store.len(), 2);
    assert_eq!(store.num_scalars(), 15);
    let id = store.id("bias").unwrap();
    assert_eq!(store.name(id), "bias");
    assert!(store.id("missing").is_none());
    let names: Vec<_> = store.iter().map(|(n, _)| n.to_string()).collect();
    assert_eq!(names, vec!["emb", "bias"]);
    assert!(!store.any_non_finite());
    store.value_mut(id)[(0, 0)] = f64::NAN;
    assert!(store.any_non_finite());
}
