use std::sync::Arc;

use hamlet_core::attention::RopeConfig;
use hamlet_core::tensor::{grad_check, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Res = Result<Var, TensorError>;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Contracts `y` with fixed random weights so every output entry matters.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Res {
    let s = tape.shape(y).to_vec();
    let n: usize = s.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(s, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let w = tape.constant(&w);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn check(name: &str, x: &Tensor<f64>, f: impl Fn(&mut Tape<f64>, Var) -> Res) {
    let err = grad_check(|t: &mut Tape<f64>, v| {
        let y = f(t, v)?;
        project(t, y, 77)
    }, x, 1e-6)
    .unwrap();
    assert!(err < 1e-4, "{name}: {err}");
}

#[test]
fn every_primitive_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, 4, 6);
    let other = random(&mut rng, 4, 6);
    let right = random(&mut rng, 6, 3);
    let left = random(&mut rng, 5, 4);
    let row = random(&mut rng, 1, 6);
    let gain = random(&mut rng, 1, 6);
    let offsets: Arc<[usize]> = vec![0, 1, 3, 3, 4].into();
    let nonempty: Arc<[usize]> = vec![0, 1, 3, 4].into();
    let idx: Arc<[usize]> = vec![2, 0, 3, 3, 1].into();
    let scales: Arc<[f64]> = vec![0.5, -2.0, 1.5, 3.0].into();

    check("matmul left", &x, |t, v| {
        let b = t.constant(&right);
        t.matmul(v, b)
    });
    check("matmul right", &x, |t, v| {
        let a = t.constant(&left);
        t.matmul(a, v)
    });
    check("add", &x, |t, v| {
        let o = t.constant(&other);
        t.add(v, o)
    });
    check("sub", &x, |t, v| {
        let o = t.constant(&other);
        t.sub(o, v)
    });
    check("mul", &x, |t, v| t.mul(v, v));
    check("add_row", &row, |t, v| {
        let a = t.constant(&x);
        t.add_row(a, v)
    });
    check("scale", &x, |t, v| t.scale(v, -1.7));
    check("scale_rows", &x, |t, v| t.scale_rows(v, scales.clone()));
    // Entries kept away from the kink at zero.
    let away = Tensor::matrix(4, 6, x.data().iter().map(|&a| if a.abs() < 0.1 { a + 0.3 } else { a }).collect()).unwrap();
    check("relu", &away, |t, v| t.relu(v));
    let positive = Tensor::matrix(4, 6, x.data().iter().map(|a| a.abs() + 0.5).collect()).unwrap();
    check("sqrt", &positive, |t, v| t.sqrt(v));
    check("concat", &x, |t, v| {
        let o = t.constant(&other);
        t.concat(&[o, v, v])
    });
    check("sum", &x, |t, v| t.sum(v));
    check("mean", &x, |t, v| t.mean(v));
    check("transpose", &x, |t, v| t.transpose(v));
    check("gather_rows", &x, |t, v| t.gather_rows(v, idx.clone()));
    check("segment_sum", &x, |t, v| t.segment_sum(v, offsets.clone()));
    check("segment_softmax", &x, |t, v| t.segment_softmax(v, nonempty.clone()));
    check("softmax", &x, |t, v| t.softmax(v));
    check("group_sum", &x, |t, v| t.group_sum(v, 3));
    check("repeat_cols", &x, |t, v| t.repeat_cols(v, 2));
    check("layer_norm input", &x, |t, v| {
        let g = t.constant(&gain);
        let b = t.constant(&row);
        t.layer_norm(v, g, b, 1e-5)
    });
    check("layer_norm gain", &gain, |t, v| {
        let a = t.constant(&x);
        let b = t.constant(&row);
        t.layer_norm(a, v, b, 1e-5)
    });
    check("layer_norm bias", &row, |t, v| {
        let a = t.constant(&x);
        let g = t.constant(&gain);
        t.layer_norm(a, g, v, 1e-5)
    });
    let rope = RopeConfig::for_domain(4, &[(0.0, 1.0), (0.0, 1.0)], 10000.0, 1.0).unwrap();
    let pos = Tensor::matrix(4, 2, (0..8).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let table = Arc::new(rope.table(&pos).unwrap());
    let x4 = random(&mut rng, 4, 8);
    check("rope", &x4, |t, v| t.rope(v, table.clone()));
    check("slice", &x, |t, v| t.slice(v, 5, vec![3, 4]));
    check("reshape", &x, |t, v| t.reshape(v, vec![6, 4]));
    check("linear", &x, |t, v| {
        let w = t.constant(&right);
        let b = t.constant(&random(&mut ChaCha8Rng::seed_from_u64(3), 1, 3));
        t.linear(v, w, Some(b))
    });
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (m, k, n) in [(1, 1, 1), (3, 5, 2), (7, 4, 9), (16, 16, 16)] {
        let a = random(&mut rng, m, k);
        let b = random(&mut rng, k, n);
        let mut t = Tape::new();
        let (av, bv) = (t.constant(&a), t.constant(&b));
        let c = t.matmul(av, bv).unwrap();
        let c = t.tensor(c);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.at(i, p) * b.at(p, j);
                }
                assert!((s - c.at(i, j)).abs() < 1e-14);
            }
        }
    }
}

/// Softmax computed with compensated sums over exactly shifted logits.
fn softmax_oracle(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let (mut s, mut comp) = (0.0_f64, 0.0_f64);
    for &x in &e {
        let y = x - comp;
        let t = s + y;
        comp = (t - s) - y;
        s = t;
    }
    e.iter().map(|x| x / s).collect()
}

#[test]
fn softmax_matches_compensated_oracle_and_survives_large_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for scale in [1.0, 30.0, 700.0] {
        let x = Tensor::matrix(6, 50, (0..300).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut t = Tape::new();
        let v = t.constant(&x);
        let y = t.softmax(v).unwrap();
        let y = t.tensor(y);
        for r in 0..6 {
            let want = softmax_oracle(x.row(r));
            for (a, b) in y.row(r).iter().zip(&want) {
                assert!((a - b).abs() <= 1e-15 + 1e-13 * b.abs());
            }
            assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }
}

#[test]
fn f32_tape_tracks_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random(&mut rng, 5, 7);
    let b = random(&mut rng, 7, 3);
    let mut t64 = Tape::<f64>::new();
    let (x, y) = (t64.constant(&a), t64.constant(&b));
    let z = t64.matmul(x, y).unwrap();
    let z = t64.softmax(z).unwrap();
    let mut t32 = Tape::<f32>::new();
    let (x, y) = (t32.constant(&a.cast()), t32.constant(&b.cast()));
    let w = t32.matmul(x, y).unwrap();
    let w = t32.softmax(w).unwrap();
    assert!(t64.tensor(z).max_abs_diff(&t32.tensor(w).cast()) < 1e-5);
}
