//! Exact k-nearest-neighbour queries over small-dimensional point sets.
//!
//! Neighbours are ordered by squared Euclidean distance and then by
//! insertion index, so equidistant candidates resolve deterministically.

use std::cmp::Ordering;

const LEAF_SIZE: usize = 8;
const NO_CHILD: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    lo: usize,
    hi: usize,
    axis: usize,
    split: f64,
    left: u32,
    right: u32,
}

/// A neighbour returned by [`KdTree::nearest_k`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Index into the point slice the tree was built from.
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

#[derive(Debug, Clone)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

pub fn dist_sq<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for i in 0..D {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

impl<const D: usize> KdTree<D> {
    pub fn new(points: Vec<[f64; D]>) -> Self {
        let n = points.len();
        let mut tree = KdTree {
            points,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; D]] {
        &self.points
    }

    fn build(&mut self, lo: usize, hi: usize) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            lo,
            hi,
            axis: 0,
            split: 0.0,
            left: NO_CHILD,
            right: NO_CHILD,
        });
        if hi - lo <= LEAF_SIZE {
            return id;
        }
        let mut axis = 0;
        let mut best_spread = f64::NEG_INFINITY;
        for a in 0..D {
            let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[lo..hi] {
                mn = mn.min(self.points[i][a]);
                mx = mx.max(self.points[i][a]);
            }
            if mx - mn > best_spread {
                best_spread = mx - mn;
                axis = a;
            }
        }
        let mid = (lo + hi) / 2;
        let points = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let split = self.points[self.order[mid]][axis];
        let left = self.build(lo, mid);
        let right = self.build(mid, hi);
        let node = &mut self.nodes[id as usize];
        node.axis = axis;
        node.split = split;
        node.left = left;
        node.right = right;
        id
    }

    /// The `k` nearest points, closest first. Returns fewer when the tree
    /// holds fewer than `k` points.
    pub fn nearest_k(&self, query: &[f64; D], k: usize) -> Vec<Neighbor> {
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        if k == 0 || self.points.is_empty() {
            return best;
        }
        self.search(0, query, k, &mut best);
        best
    }

    pub fn nearest(&self, query: &[f64; D]) -> Option<Neighbor> {
        self.nearest_k(query, 1).into_iter().next()
    }

    fn search(&self, node_id: u32, query: &[f64; D], k: usize, best: &mut Vec<Neighbor>) {
        let node = &self.nodes[node_id as usize];
        if node.left == NO_CHILD {
            for &i in &self.order[node.lo..node.hi] {
                let cand = Neighbor {
                    index: i,
                    dist_sq: dist_sq(&self.points[i], query),
                };
                if best.len() == k && cand.cmp_key(&best[k - 1]) != Ordering::Less {
                    continue;
                }
                let pos = best
                    .binary_search_by(|b| b.cmp_key(&cand))
                    .unwrap_or_else(|p| p);
                best.insert(pos, cand);
                best.truncate(k);
            }
            return;
        }
        let diff = query[node.axis] - node.split;
        let (first, second) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(first, query, k, best);
        // Equal distances must still be visited for the index tie-break.
        if best.len() < k || diff * diff <= best[k - 1].dist_sq {
            self.search(second, query, k, best);
        }
    }
}

/// Reference implementation used by tests: full scan with the same ordering.
pub fn brute_force_k<const D: usize>(points: &[[f64; D]], query: &[f64; D], k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = points
        .iter()
        .enumerate()
        .map(|(index, p)| Neighbor {
            index,
            dist_sq: dist_sq(p, query),
        })
        .collect();
    all.sort_by(|a, b| a.cmp_key(b));
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_tree() {
        let t = KdTree::<3>::new(vec![]);
        assert!(t.nearest(&[0.0; 3]).is_none());
    }

    #[test]
    fn ties_break_by_index() {
        let pts = vec![[2.0, 0.0], [0.0, 2.0], [-2.0, 0.0], [0.0, -2.0]];
        let t = KdTree::new(pts);
        let n = t.nearest_k(&[0.0, 0.0], 2);
        assert_eq!(n.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn many_duplicates() {
        let pts = vec![[1.0, 1.0, 1.0]; 100];
        let t = KdTree::new(pts);
        let n = t.nearest_k(&[0.0; 3], 3);
        assert_eq!(n.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    proptest! {
        #[test]
        fn agrees_with_brute_force_on_integer_grid(
            pts in prop::collection::vec((0i32..20, 0i32..20), 1..300),
            q in (0i32..20, 0i32..20),
            k in 1usize..6,
        ) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(a, b)| [a as f64, b as f64]).collect();
            let q = [q.0 as f64, q.1 as f64];
            let tree = KdTree::new(pts.clone());
            prop_assert_eq!(tree.nearest_k(&q, k), brute_force_k(&pts, &q, k));
        }

        #[test]
        fn agrees_with_brute_force_3d(
            pts in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 1..500),
            q in prop::array::uniform3(-12.0f64..12.0),
        ) {
            let tree = KdTree::new(pts.clone());
            prop_assert_eq!(tree.nearest_k(&q, 1), brute_force_k(&pts, &q, 1));
        }
    }
}
