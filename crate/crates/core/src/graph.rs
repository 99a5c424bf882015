//! Point discretizations and the neighborhood graphs built on them.
//!
//! Every node is its own neighbor. Radius graphs use the closed ball
//! `‖x_i − x_j‖₂ ≤ r` and are symmetric; kNN graphs are left directed.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::Arc;

use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("points {0} and {1} coincide")]
    DuplicatePoint(usize, usize),
    #[error("point {0} lies outside the domain bounds")]
    OutOfBounds(usize),
    #[error("node {0} has no neighbor other than itself")]
    IsolatedNode(usize),
    #[error("expected {expected} rows, got {got}")]
    RowMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// An L-point discretization of an axis-aligned box.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet<T> {
    positions: Tensor<T>,
    bounds: Vec<(T, T)>,
}

impl<T: Real> PointSet<T> {
    /// Validates and wraps an L×n position matrix.
    pub fn new(positions: Tensor<T>, bounds: Vec<(T, T)>) -> Result<Self> {
        if positions.shape().len() != 2 {
            return Err(GraphError::InvalidArgument("positions must be an L×n matrix".into()));
        }
        let n = positions.cols();
        if bounds.len() != n {
            return Err(GraphError::InvalidArgument(format!("{} bounds for {n} axes", bounds.len())));
        }
        if bounds.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(GraphError::InvalidArgument("every axis needs lo < hi".into()));
        }
        for i in 0..positions.rows() {
            let row = positions.row(i);
            if row.iter().zip(&bounds).any(|(&x, &(lo, hi))| !(x >= lo && x <= hi)) {
                return Err(GraphError::OutOfBounds(i));
            }
        }
        let ps = Self { positions, bounds };
        let order = ps.canonical_order();
        for w in order.windows(2) {
            if ps.positions.row(w[0]) == ps.positions.row(w[1]) {
                return Err(GraphError::DuplicatePoint(w[0].min(w[1]), w[0].max(w[1])));
            }
        }
        Ok(ps)
    }

    pub fn len(&self) -> usize {
        self.positions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.positions.cols()
    }

    pub fn positions(&self) -> &Tensor<T> {
        &self.positions
    }

    pub fn bounds(&self) -> &[(T, T)] {
        &self.bounds
    }

    pub fn point(&self, i: usize) -> &[T] {
        self.positions.row(i)
    }

    pub fn distance(&self, i: usize, j: usize) -> T {
        euclid(self.point(i), self.point(j))
    }

    /// Node indices sorted lexicographically by coordinates. Since points are
    /// distinct this order does not depend on how the nodes are numbered.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| lex_cmp(self.point(a), self.point(b)));
        idx
    }

    /// Applies `perm`: row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Self::new(self.positions.select_rows(perm), self.bounds.clone())
    }

    /// Euclidean length of the domain diagonal.
    pub fn diameter(&self) -> T {
        self.bounds.iter().fold(T::zero(), |a, &(lo, hi)| a + (hi - lo) * (hi - lo)).sqrt()
    }
}

/// Lattice-node grid on a 2-D box, row-major with y outer and x inner.
pub fn uniform_grid<T: Real>(nx: usize, ny: usize, bounds: [(T, T); 2]) -> Result<PointSet<T>> {
    if nx < 2 || ny < 2 {
        return Err(GraphError::InvalidArgument(format!("grid needs nx, ny >= 2, got {nx}x{ny}")));
    }
    let coord = |i: usize, n: usize, (lo, hi): (T, T)| -> T {
        let frac = T::count(i) / T::count(n - 1);
        (lo + (hi - lo) * frac).min(hi)
    };
    let mut data = Vec::with_capacity(nx * ny * 2);
    for j in 0..ny {
        for i in 0..nx {
            data.push(coord(i, nx, bounds[0]));
            data.push(coord(j, ny, bounds[1]));
        }
    }
    let positions = Tensor::matrix(nx * ny, 2, data).expect("grid shape");
    PointSet::new(positions, bounds.to_vec())
}

/// Neighborhood structure plus per-node features.
#[derive(Clone, Debug)]
pub struct Graph<T> {
    points: Arc<PointSet<T>>,
    offsets: Arc<[usize]>,
    neighbors: Arc<[usize]>,
    edges: Arc<EdgeList>,
    node_features: Option<Tensor<T>>,
    radius: Option<T>,
    k: Option<usize>,
}

/// Flattened edges grouped by center node. Within a node the neighbors are
/// ordered by [`PointSet::canonical_order`], so reductions over a
/// neighborhood are independent of node numbering.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeList {
    pub offsets: Arc<[usize]>,
    pub centers: Arc<[usize]>,
    pub neighbors: Arc<[usize]>,
}

impl EdgeList {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

impl<T: Real> Graph<T> {
    fn from_lists(points: Arc<PointSet<T>>, lists: Vec<Vec<usize>>, radius: Option<T>, k: Option<usize>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut flat = Vec::new();
        for l in &lists {
            flat.extend_from_slice(l);
            offsets.push(flat.len());
        }
        let mut rank = vec![0usize; points.len()];
        for (r, &i) in points.canonical_order().iter().enumerate() {
            rank[i] = r;
        }
        let mut centers = Vec::with_capacity(flat.len());
        let mut ordered = Vec::with_capacity(flat.len());
        for (i, l) in lists.iter().enumerate() {
            let mut l = l.clone();
            l.sort_by_key(|&j| rank[j]);
            centers.extend(std::iter::repeat(i).take(l.len()));
            ordered.extend(l);
        }
        let offsets: Arc<[usize]> = offsets.into();
        let edges = EdgeList { offsets: offsets.clone(), centers: centers.into(), neighbors: ordered.into() };
        Self {
            points,
            offsets,
            neighbors: flat.into(),
            edges: Arc::new(edges),
            node_features: None,
            radius,
            k,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &PointSet<T> {
        &self.points
    }

    /// `N_i`, sorted ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn edge_list(&self) -> &EdgeList {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn radius(&self) -> Option<T> {
        self.radius
    }

    pub fn k(&self) -> Option<usize> {
        self.k
    }

    pub fn node_features(&self) -> Option<&Tensor<T>> {
        self.node_features.as_ref()
    }

    /// Dense 0/1 adjacency, row `i` marking `N_i`.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut row = vec![false; n];
                self.neighbors(i).iter().for_each(|&j| row[j] = true);
                row
            })
            .collect()
    }

    /// Node features `θ_i ∥ x_i`.
    pub fn assemble_node_features(&self, theta: &Tensor<T>) -> Result<Self> {
        if theta.shape().len() != 2 || theta.rows() != self.len() {
            return Err(GraphError::RowMismatch { expected: self.len(), got: theta.rows() });
        }
        let feats = theta.hcat(self.points.positions()).expect("row counts checked");
        Ok(self.with_features(feats))
    }

    /// Replaces the node features with an arbitrary L-row matrix.
    pub fn with_features(&self, features: Tensor<T>) -> Self {
        assert_eq!(features.rows(), self.len(), "one feature row per node");
        let mut g = self.clone();
        g.node_features = Some(features);
        g
    }
}

/// Radius-ball graph. With `strict`, a node whose only neighbor is itself is
/// an error; otherwise it is reported through the log.
pub fn build_radius_graph<T: Real>(points: &PointSet<T>, r: T, strict: bool) -> Result<Graph<T>> {
    if !(r > T::zero()) || !r.is_finite() {
        return Err(GraphError::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    let n = points.dim();
    let lo: Vec<T> = points.bounds().iter().map(|b| b.0).collect();
    let cell_of = |p: &[T]| -> Vec<i64> {
        p.iter().zip(&lo).map(|(&x, &l)| ((x - l) / r).floor().to_i64().unwrap_or(i64::MAX)).collect()
    };
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for i in 0..points.len() {
        buckets.entry(cell_of(points.point(i))).or_default().push(i);
    }
    let stencil = neighbor_cells(n);
    let mut lists = Vec::with_capacity(points.len());
    let mut isolated = 0usize;
    for i in 0..points.len() {
        let p = points.point(i);
        let c = cell_of(p);
        let mut l = vec![i];
        for off in &stencil {
            let key: Vec<i64> = c.iter().zip(off).map(|(&a, &b)| a.saturating_add(b)).collect();
            if let Some(bucket) = buckets.get(&key) {
                l.extend(bucket.iter().copied().filter(|&j| j != i && euclid(p, points.point(j)) <= r));
            }
        }
        l.sort_unstable();
        if l.len() == 1 {
            if strict {
                return Err(GraphError::IsolatedNode(i));
            }
            isolated += 1;
        }
        lists.push(l);
    }
    if isolated > 0 {
        // Graphs are rebuilt per sample; one warning per process is enough.
        static WARNED: std::sync::Once = std::sync::Once::new();
        WARNED.call_once(|| log::warn!("radius {r}: {isolated} node(s) have no neighbor besides themselves"));
        log::debug!("radius {r}: {isolated} isolated node(s)");
    }
    Ok(Graph::from_lists(Arc::new(points.clone()), lists, Some(r), None))
}

/// Directed kNN graph: `N_i` is `i` plus its `k` nearest other points, ties
/// broken by lower index.
pub fn build_knn_graph<T: Real>(points: &PointSet<T>, k: usize) -> Result<Graph<T>> {
    let len = points.len();
    if k == 0 || k > len {
        return Err(GraphError::InvalidArgument(format!("k must lie in 1..={len}, got {k}")));
    }
    let k = k.min(len - 1);

    #[derive(PartialEq)]
    struct Cand<T>(T, usize);
    impl<T: PartialOrd> Eq for Cand<T> {}
    impl<T: PartialOrd> PartialOrd for Cand<T> {
        fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
            Some(self.cmp(o))
        }
    }
    impl<T: PartialOrd> Ord for Cand<T> {
        fn cmp(&self, o: &Self) -> Ordering {
            self.0.partial_cmp(&o.0).unwrap_or(Ordering::Equal).then(self.1.cmp(&o.1))
        }
    }

    let mut lists = Vec::with_capacity(len);
    for i in 0..len {
        let p = points.point(i);
        let mut heap: BinaryHeap<Cand<T>> = BinaryHeap::with_capacity(k + 1);
        for j in (0..len).filter(|&j| j != i) {
            let cand = Cand(euclid(p, points.point(j)), j);
            if heap.len() < k {
                heap.push(cand);
            } else if heap.peek().is_some_and(|worst| cand < *worst) {
                heap.pop();
                heap.push(cand);
            }
        }
        let mut l: Vec<usize> = heap.into_iter().map(|c| c.1).collect();
        l.push(i);
        l.sort_unstable();
        lists.push(l);
    }
    Ok(Graph::from_lists(Arc::new(points.clone()), lists, None, Some(k)))
}

fn euclid<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y)).sqrt()
}

fn lex_cmp<T: Real>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

fn neighbor_cells(dim: usize) -> Vec<Vec<i64>> {
    let mut cells = vec![Vec::new()];
    for _ in 0..dim {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                (-1..=1).map(move |d| {
                    let mut c = c.clone();
                    c.push(d);
                    c
                })
            })
            .collect();
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> PointSet<f64> {
        let pos = Tensor::matrix(xs.len(), 1, xs.to_vec()).unwrap();
        PointSet::new(pos, vec![(0.0, 1.0)]).unwrap()
    }

    #[test]
    fn grid_corners_and_spacing() {
        let g = uniform_grid::<f64>(2, 2, [(0.0, 1.0), (0.0, 1.0)]).unwrap();
        assert_eq!(g.positions().data(), &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(uniform_grid::<f64>(3, 1, [(0.0, 1.0), (0.0, 1.0)]).is_err());
        let g = uniform_grid::<f64>(64, 64, [(0.0, 1.0), (0.0, 1.0)]).unwrap();
        assert!((g.point(1)[0] - g.point(0)[0] - 1.0 / 63.0).abs() < 1e-15);
    }

    #[test]
    fn collinear_hand_case() {
        let g = build_radius_graph(&line(&[0.0, 0.1, 0.25]), 0.12, false).unwrap();
        assert_eq!(g.neighbors(0), &[0, 1]);
        assert_eq!(g.neighbors(1), &[0, 1]);
        assert_eq!(g.neighbors(2), &[2]);
        assert_eq!(
            build_radius_graph(&line(&[0.0, 0.1, 0.25]), 0.12, true).unwrap_err(),
            GraphError::IsolatedNode(2)
        );
    }

    #[test]
    fn large_radius_is_fully_connected() {
        let pts = uniform_grid::<f64>(4, 3, [(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let g = build_radius_graph(&pts, pts.diameter(), true).unwrap();
        assert!((0..g.len()).all(|i| g.neighbors(i).len() == g.len()));
    }

    #[test]
    fn knn_unit_square_excludes_diagonal() {
        let pts = uniform_grid::<f64>(2, 2, [(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let g = build_knn_graph(&pts, 2).unwrap();
        assert_eq!(g.neighbors(0), &[0, 1, 2]);
        assert_eq!(g.neighbors(3), &[1, 2, 3]);
        let full = build_knn_graph(&pts, 3).unwrap();
        assert!((0..4).all(|i| full.neighbors(i).len() == 4));
        assert!(build_knn_graph(&pts, 0).is_err());
    }

    #[test]
    fn duplicates_and_out_of_bounds_rejected() {
        let pos = Tensor::matrix(2, 1, vec![0.5, 0.5]).unwrap();
        assert_eq!(PointSet::new(pos, vec![(0.0, 1.0)]).unwrap_err(), GraphError::DuplicatePoint(0, 1));
        let pos = Tensor::matrix(1, 1, vec![1.5]).unwrap();
        assert_eq!(PointSet::new(pos, vec![(0.0, 1.0)]).unwrap_err(), GraphError::OutOfBounds(0));
    }

    #[test]
    fn feature_widths() {
        let pts = uniform_grid::<f64>(3, 3, [(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let g = build_radius_graph(&pts, 0.6, false).unwrap();
        let darcy = g.assemble_node_features(&Tensor::zeros(&[9, 1])).unwrap();
        assert_eq!(darcy.node_features().unwrap().cols(), 3);
        let dr = g.assemble_node_features(&Tensor::zeros(&[9, 20])).unwrap();
        let f = dr.node_features().unwrap();
        assert_eq!(f.cols(), 22);
        assert_eq!(&f.row(4)[20..], pts.point(4));
        assert!(f.row(4)[..20].iter().all(|&v| v == 0.0));
        assert!(g.assemble_node_features(&Tensor::zeros(&[8, 1])).is_err());
    }

    #[test]
    fn edge_list_is_numbering_independent() {
        let pts = uniform_grid::<f64>(3, 3, [(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let perm = [4, 0, 8, 2, 6, 1, 3, 5, 7];
        let g = build_radius_graph(&pts, 0.5, false).unwrap();
        let gp = build_radius_graph(&pts.permuted(&perm).unwrap(), 0.5, false).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            let e = gp.edge_list();
            let mapped: Vec<usize> =
                e.neighbors[e.offsets[new]..e.offsets[new + 1]].iter().map(|&j| perm[j]).collect();
            let eo = g.edge_list();
            assert_eq!(mapped, &eo.neighbors[eo.offsets[old]..eo.offsets[old + 1]]);
        }
    }
}
