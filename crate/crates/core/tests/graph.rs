use hamlet_core::graph::{build_knn_graph, build_radius_graph, PointSet};
use hamlet_core::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_set(seed: u64) -> PointSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = rng.gen_range(1..=400);
    // Snapping to a lattice creates exact distance ties.
    let snap = seed % 2 == 0;
    let mut pts: Vec<[f64; 2]> = Vec::new();
    while pts.len() < l {
        let mut p = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        if snap {
            p = p.map(|x: f64| (x * 40.0).floor() / 40.0);
        }
        if !pts.contains(&p) {
            pts.push(p);
        }
    }
    PointSet::new(Tensor::matrix(l, 2, pts.concat()).unwrap(), vec![(0.0, 1.0); 2]).unwrap()
}

fn dist(ps: &PointSet<f64>, i: usize, j: usize) -> f64 {
    let (a, b) = (ps.point(i), ps.point(j));
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn brute_radius(ps: &PointSet<f64>, r: f64) -> Vec<Vec<usize>> {
    (0..ps.len()).map(|i| (0..ps.len()).filter(|&j| j == i || dist(ps, i, j) <= r).collect()).collect()
}

fn brute_knn(ps: &PointSet<f64>, k: usize) -> Vec<Vec<usize>> {
    (0..ps.len())
        .map(|i| {
            let mut others: Vec<usize> = (0..ps.len()).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| dist(ps, i, a).total_cmp(&dist(ps, i, b)).then(a.cmp(&b)));
            let mut l: Vec<usize> = std::iter::once(i).chain(others.into_iter().take(k)).collect();
            l.sort_unstable();
            l
        })
        .collect()
}

#[test]
fn radius_graph_equals_brute_force() {
    for seed in 0..50 {
        let ps = random_set(seed);
        for r in [0.025, 0.05, 0.12] {
            let g = build_radius_graph(&ps, r, false).unwrap();
            let want = brute_radius(&ps, r);
            for (i, w) in want.iter().enumerate() {
                assert_eq!(g.neighbors(i), w.as_slice(), "seed {seed} r {r} node {i}");
            }
        }
    }
}

#[test]
fn knn_graph_equals_brute_force() {
    for seed in 0..50 {
        let ps = random_set(seed);
        for k in [1, 4, 8] {
            if k >= ps.len() {
                continue;
            }
            let g = build_knn_graph(&ps, k).unwrap();
            for (i, w) in brute_knn(&ps, k).iter().enumerate() {
                assert_eq!(g.neighbors(i), w.as_slice(), "seed {seed} k {k} node {i}");
            }
        }
    }
}

#[test]
fn radius_edges_are_monotone() {
    for seed in 0..10 {
        let ps = random_set(100 + seed);
        let radii = [0.02, 0.04, 0.08, 0.12, 0.16];
        let graphs: Vec<_> = radii.iter().map(|&r| build_radius_graph(&ps, r, false).unwrap()).collect();
        for w in graphs.windows(2) {
            for i in 0..ps.len() {
                assert!(w[0].neighbors(i).iter().all(|j| w[1].neighbors(i).contains(j)));
            }
            assert!(w[0].edge_count() <= w[1].edge_count());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn radius_graph_is_symmetric_and_reflexive(seed in any::<u64>(), r in 0.01f64..0.5) {
        let ps = random_set(seed);
        let g = build_radius_graph(&ps, r, false).unwrap();
        let adj = g.adjacency();
        for i in 0..ps.len() {
            prop_assert!(adj[i][i]);
            for j in 0..ps.len() {
                prop_assert_eq!(adj[i][j], adj[j][i]);
            }
        }
    }
}
