//! Minimal 3D k-d tree for nearest-obstacle queries. Semantics match the
//! brute-force nearest neighbor exactly; the tree is only an accelerator.

use alloc::vec::Vec;
use nalgebra::Vector3;

struct Node {
    point: Vector3<f64>,
    axis: usize,
    left: i32,
    right: i32,
}

pub struct KdTree3 {
    nodes: Vec<Node>,
    root: i32,
}

impl KdTree3 {
    pub fn build(points: &[Vector3<f64>]) -> Self {
        let mut items: Vec<Vector3<f64>> = points.to_vec();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build_recursive(&mut items, 0, &mut nodes);
        Self { nodes, root }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Squared distance to the nearest point; `f64::INFINITY` when empty.
    pub fn nearest_dist_sq(&self, query: &Vector3<f64>) -> f64 {
        if self.root < 0 {
            return f64::INFINITY;
        }
        let mut best = f64::INFINITY;
        self.search(self.root, query, &mut best);
        best
    }

    fn search(&self, idx: i32, query: &Vector3<f64>, best: &mut f64) {
        let node = &self.nodes[idx as usize];
        let d2 = (node.point - query).norm_squared();
        if d2 < *best {
            *best = d2;
        }
        let delta = query[node.axis] - node.point[node.axis];
        let (near, far) = if delta < 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        if near >= 0 {
            self.search(near, query, best);
        }
        if far >= 0 && delta * delta < *best {
            self.search(far, query, best);
        }
    }
}

fn build_recursive(items: &mut [Vector3<f64>], depth: usize, nodes: &mut Vec<Node>) -> i32 {
    if items.is_empty() {
        return -1;
    }
    let axis = depth % 3;
    let mid = items.len() / 2;
    items.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    let point = items[mid];
    let (left_items, rest) = items.split_at_mut(mid);
    let right_items = &mut rest[1..];
    let left = build_recursive(left_items, depth + 1, nodes);
    let right = build_recursive(right_items, depth + 1, nodes);
    nodes.push(Node { point, axis, left, right });
    (nodes.len() - 1) as i32
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_nearest_sq(points: &[Vector3<f64>], q: &Vector3<f64>) -> f64 {
        points
            .iter()
            .map(|p| (p - q).norm_squared())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn empty_tree_returns_infinity() {
        let tree = KdTree3::build(&[]);
        assert_eq!(tree.nearest_dist_sq(&Vector3::zeros()), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            pts in proptest::collection::vec(proptest::array::uniform3(-10.0..10.0f64), 1..200),
            q in proptest::array::uniform3(-12.0..12.0f64),
        ) {
            let points: Vec<Vector3<f64>> =
                pts.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();
            let query = Vector3::new(q[0], q[1], q[2]);
            let tree = KdTree3::build(&points);
            let expected = brute_nearest_sq(&points, &query);
            let got = tree.nearest_dist_sq(&query);
            prop_assert!((got - expected).abs() <= 1e-12 * expected.max(1.0));
        }
    }
}
