//! Exact k-th nearest neighbour search.
//!
//! Both back ends compute squared distances with the same left-to-right
//! coordinate sum and order candidates by `(distance², index)`, so they
//! return identical neighbours and bit-identical distances.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::SampleMatrix;

/// Above this dimension the k-d tree stops pruning usefully.
pub const KD_TREE_MAX_DIM: usize = 16;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborSearch {
    /// k-d tree for `d <= 16`, exhaustive scan above.
    #[default]
    Auto,
    KdTree,
    BruteForce,
}

/// The k-th nearest other row of a query row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let t = x - y;
        s += t * t;
    }
    s
}

#[inline]
fn cmp_candidate(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Sorted list of the best `k` candidates seen so far.
struct Best {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl Best {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn full(&self) -> bool {
        self.items.len() == self.k
    }

    fn worst(&self) -> f64 {
        if self.full() {
            self.items[self.k - 1].0
        } else {
            f64::INFINITY
        }
    }

    fn offer(&mut self, cand: (f64, usize)) {
        if self.full() && cmp_candidate(cand, self.items[self.k - 1]) != Ordering::Less {
            return;
        }
        let pos = self
            .items
            .partition_point(|&it| cmp_candidate(it, cand) == Ordering::Less);
        self.items.insert(pos, cand);
        self.items.truncate(self.k);
    }

    fn kth(&self) -> Neighbor {
        let (d2, index) = self.items[self.k - 1];
        Neighbor {
            index,
            distance: d2.sqrt(),
        }
    }
}

fn brute_force(s: &SampleMatrix, k: usize) -> Vec<Neighbor> {
    (0..s.n())
        .map(|i| {
            let q = s.row(i);
            let mut best = Best::new(k);
            for j in 0..s.n() {
                if j != i {
                    best.offer((sq_dist(q, s.row(j)), j));
                }
            }
            best.kth()
        })
        .collect()
}

enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static k-d tree over the rows of a sample matrix.
pub struct KdTree<'a> {
    samples: &'a SampleMatrix,
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn build(samples: &'a SampleMatrix) -> Self {
        let mut tree = Self {
            samples,
            perm: (0..samples.n()).collect(),
            nodes: Vec::new(),
        };
        tree.build_node(0, samples.n());
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let s = self.samples;
        let d = s.d();
        // widest coordinate spread
        let mut dim = 0;
        let mut widest = f64::NEG_INFINITY;
        for j in 0..d {
            let (lo, hi) = self.perm[start..end]
                .iter()
                .map(|&i| s.row(i)[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if hi - lo > widest {
                widest = hi - lo;
                dim = j;
            }
        }
        let mid = start + (end - start) / 2;
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            s.row(a)[dim].total_cmp(&s.row(b)[dim]).then(a.cmp(&b))
        });
        let value = s.row(self.perm[mid])[dim];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    fn search(&self, node: usize, qi: usize, best: &mut Best) {
        let q = self.samples.row(qi);
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &j in &self.perm[start..end] {
                    if j != qi {
                        best.offer((sq_dist(q, self.samples.row(j)), j));
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, qi, best);
                // `<=` keeps equal-distance candidates reachable for the index tie-break
                if diff * diff <= best.worst() {
                    self.search(far, qi, best);
                }
            }
        }
    }

    /// k-th nearest other row of row `i`.
    pub fn kth_neighbor(&self, i: usize, k: usize) -> Neighbor {
        let mut best = Best::new(k);
        self.search(0, i, &mut best);
        best.kth()
    }
}

/// k-th nearest other row of every row. `1 <= k < n` is the caller's
/// responsibility.
pub fn kth_neighbors(s: &SampleMatrix, k: usize, search: NeighborSearch) -> Vec<Neighbor> {
    let use_tree = match search {
        NeighborSearch::Auto => s.d() <= KD_TREE_MAX_DIM && s.n() > 2 * LEAF_SIZE,
        NeighborSearch::KdTree => true,
        NeighborSearch::BruteForce => false,
    };
    if use_tree {
        let tree = KdTree::build(s);
        (0..s.n()).map(|i| tree.kth_neighbor(i, k)).collect()
    } else {
        brute_force(s, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    /// Exhaustive oracle: sort all other rows by (distance, index).
    fn oracle(s: &SampleMatrix, k: usize) -> Vec<(usize, f64)> {
        (0..s.n())
            .map(|i| {
                let mut all: Vec<(f64, usize)> = (0..s.n())
                    .filter(|&j| j != i)
                    .map(|j| {
                        let d2: f64 = s
                            .row(i)
                            .iter()
                            .zip(s.row(j))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        (d2, j)
                    })
                    .collect();
                all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                (all[k - 1].1, all[k - 1].0.sqrt())
            })
            .collect()
    }

    #[test]
    fn tiny_line_examples() {
        let s = SampleMatrix::from_column(&[0.0, 1.0, 3.0]).unwrap();
        let r1: Vec<f64> = kth_neighbors(&s, 1, NeighborSearch::BruteForce)
            .iter()
            .map(|n| n.distance)
            .collect();
        assert_eq!(r1, vec![1.0, 1.0, 2.0]);
        let r2: Vec<f64> = kth_neighbors(&s, 2, NeighborSearch::KdTree)
            .iter()
            .map(|n| n.distance)
            .collect();
        assert_eq!(r2, vec![3.0, 2.0, 3.0]);
    }

    #[test]
    fn ties_break_by_index() {
        // row 1 is equidistant from rows 0 and 2
        let s = SampleMatrix::from_column(&[0.0, 1.0, 2.0]).unwrap();
        for search in [NeighborSearch::BruteForce, NeighborSearch::KdTree] {
            let nn = kth_neighbors(&s, 1, search);
            assert_eq!(nn[1].index, 0);
        }
    }

    #[test]
    fn duplicate_rows_have_zero_distance() {
        let s = SampleMatrix::from_column(&[0.0, 0.0]).unwrap();
        let nn = kth_neighbors(&s, 1, NeighborSearch::Auto);
        assert_eq!(nn[0].distance, 0.0);
        assert_eq!(nn[1].distance, 0.0);
    }

    #[test]
    fn tree_handles_heavy_ties() {
        // integer grid with many duplicate coordinates
        let mut g = SplitMix64::stream(3, "grid");
        let vals: Vec<f64> = (0..300 * 3).map(|_| g.below(4) as f64).collect();
        let s = SampleMatrix::new(300, 3, vals).unwrap();
        for k in [1, 2, 5] {
            let a = kth_neighbors(&s, k, NeighborSearch::KdTree);
            let b = kth_neighbors(&s, k, NeighborSearch::BruteForce);
            assert_eq!(a, b);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn tree_equals_exhaustive_scan(
            n in 2usize..=256,
            d in 1usize..=6,
            k in 1usize..=4,
            seed in any::<u64>(),
        ) {
            prop_assume!(k < n);
            let mut g = SplitMix64::stream(seed, "prop");
            let vals: Vec<f64> = (0..n * d).map(|_| g.normal()).collect();
            let s = SampleMatrix::new(n, d, vals).unwrap();
            let tree = kth_neighbors(&s, k, NeighborSearch::KdTree);
            let brute = kth_neighbors(&s, k, NeighborSearch::BruteForce);
            prop_assert_eq!(&tree, &brute);
            let want = oracle(&s, k);
            for (got, (idx, dist)) in tree.iter().zip(want) {
                prop_assert_eq!(got.index, idx);
                prop_assert_eq!(got.distance, dist);
            }
        }
    }
}
