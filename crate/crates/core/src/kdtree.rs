//! Exact k-nearest-neighbour index over a static point set.
//!
//! Results are ordered by `(squared distance, point index)`, so equidistant
//! neighbours always resolve to the lowest index regardless of tree layout.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geom::Vec3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &Vec3 {
        &self.points[index]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let extent = hi - lo;
        let axis = extent.imax();
        if extent[axis] <= 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let points = &self.points;
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Split {
            axis,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id]
        {
            *l = left;
            *r = right;
        }
        id
    }

    /// The `k` nearest points to `query`, nearest first.
    pub fn knn(&self, query: &Vec3, k: usize) -> Vec<Neighbor> {
        self.knn_filtered(query, k, f64::INFINITY, None)
    }

    /// k-NN excluding point `skip` (typically the query point itself).
    pub fn knn_excluding(&self, query: &Vec3, k: usize, skip: usize) -> Vec<Neighbor> {
        self.knn_filtered(query, k, f64::INFINITY, Some(skip))
    }

    /// k-NN restricted to points within `radius` of `query` (inclusive).
    pub fn knn_within(&self, query: &Vec3, k: usize, radius: f64) -> Vec<Neighbor> {
        self.knn_filtered(query, k, radius * radius, None)
    }

    fn knn_filtered(
        &self,
        query: &Vec3,
        k: usize,
        max_dist_sq: f64,
        skip: Option<usize>,
    ) -> Vec<Neighbor> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Neighbor> = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, max_dist_sq, skip, &mut heap);
        heap.into_sorted_vec()
    }

    fn search(
        &self,
        node: usize,
        query: &Vec3,
        k: usize,
        max_dist_sq: f64,
        skip: Option<usize>,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == skip {
                        continue;
                    }
                    let cand = Neighbor {
                        index: i,
                        dist_sq: (self.points[i] - query).norm_squared(),
                    };
                    if cand.dist_sq > max_dist_sq {
                        continue;
                    }
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, max_dist_sq, skip, heap);
                let plane_sq = diff * diff;
                // `<=` keeps equidistant candidates reachable for index tie-breaking
                let bound = if heap.len() < k {
                    max_dist_sq
                } else {
                    heap.peek().map_or(max_dist_sq, |w| w.dist_sq)
                };
                if plane_sq <= bound {
                    self.search(far, query, k, max_dist_sq, skip, heap);
                }
            }
        }
    }
}
