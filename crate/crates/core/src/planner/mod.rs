//! Probabilistic roadmap planning over free space derived from the Gaussian
//! centers: the obstacle set is the center point cloud, clearance is a
//! single robot radius.

mod kdtree;

pub use kdtree::KdTree3;

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::Aabb;
use crate::map::SplatMap;
use crate::math;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("start position is within {robot_radius} m of an obstacle")]
    BlockedStart { robot_radius: f64 },
    #[error("goal position is within {robot_radius} m of an obstacle")]
    BlockedGoal { robot_radius: f64 },
    #[error("no collision-free samples after the {budget}-sample budget")]
    Infeasible { budget: usize },
    #[error("start and goal are in disconnected roadmap components")]
    Unreachable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerParams {
    /// Uniform samples drawn inside the inflated map bounds.
    pub sample_count: usize,
    /// Nodes within this distance are candidate neighbors.
    pub connect_radius: f64,
    /// Clearance around obstacle centers.
    pub robot_radius: f64,
    /// Spacing of collision checks along candidate edges.
    pub edge_step: f64,
    pub seed: u64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            sample_count: 2000,
            connect_radius: 0.75,
            robot_radius: 0.25,
            edge_step: 0.05,
            seed: 42,
        }
    }
}

/// Sampled free-space graph. Node 0 is the start, node 1 the goal. Sampled
/// nodes and edge interiors are validated with an extra `edge_step / 2`
/// clearance margin so that any point along a validated edge keeps the plain
/// robot-radius clearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Roadmap {
    pub nodes: Vec<Vector3<f64>>,
    /// Undirected edges `(i, j, length)` with `i < j`, sorted.
    pub edges: Vec<(u32, u32, f64)>,
    pub params: PlannerParams,
}

/// True iff the nearest obstacle center is strictly farther than
/// `robot_radius`. This brute-force definition is the semantic contract;
/// the roadmap internally accelerates it with a k-d tree.
pub fn collision_free(
    point: &Vector3<f64>,
    obstacle_centers: &[Vector3<f64>],
    robot_radius: f64,
) -> bool {
    let r2 = robot_radius * robot_radius;
    obstacle_centers.iter().all(|c| (c - point).norm_squared() > r2)
}

fn free_with(tree: &KdTree3, point: &Vector3<f64>, radius: f64) -> bool {
    tree.nearest_dist_sq(point) > radius * radius
}

/// Builds a PRM over the map's Gaussian centers. Deterministic for a fixed
/// seed; sampling uses the bounding box of the centers plus start and goal,
/// inflated by 10% (at least half the connect radius per side).
pub fn build_roadmap(
    map: &SplatMap,
    start: &Vector3<f64>,
    goal: &Vector3<f64>,
    params: &PlannerParams,
) -> Result<Roadmap, PlanError> {
    let obstacles: Vec<Vector3<f64>> = map.splats.iter().map(|s| s.center).collect();
    let tree = KdTree3::build(&obstacles);

    if !free_with(&tree, start, params.robot_radius) {
        return Err(PlanError::BlockedStart { robot_radius: params.robot_radius });
    }
    if !free_with(&tree, goal, params.robot_radius) {
        return Err(PlanError::BlockedGoal { robot_radius: params.robot_radius });
    }

    let mut bounds = Aabb::from_points(obstacles.iter())
        .map(|b| b.union(&Aabb::new(*start, *start)))
        .unwrap_or(Aabb::new(*start, *start))
        .union(&Aabb::new(*goal, *goal));
    let extent = bounds.extent();
    let pad = Vector3::new(
        (0.05 * extent.x).max(0.5 * params.connect_radius),
        (0.05 * extent.y).max(0.5 * params.connect_radius),
        (0.05 * extent.z).max(0.5 * params.connect_radius),
    );
    bounds = bounds.padded(&pad);

    // Sampled nodes carry the margin clearance; start/goal only the plain
    // radius (their immediate surroundings are covered by edge validation).
    let margin_radius = params.robot_radius + 0.5 * params.edge_step;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut nodes: Vec<Vector3<f64>> = vec![*start, *goal];
    let mut accepted = 0usize;
    for _ in 0..params.sample_count {
        let p = Vector3::new(
            rng.gen_range(bounds.min.x..=bounds.max.x),
            rng.gen_range(bounds.min.y..=bounds.max.y),
            rng.gen_range(bounds.min.z..=bounds.max.z),
        );
        if free_with(&tree, &p, margin_radius) {
            nodes.push(p);
            accepted += 1;
        }
    }
    if params.sample_count > 0 && accepted == 0 {
        return Err(PlanError::Infeasible { budget: params.sample_count });
    }

    let mut edges: Vec<(u32, u32, f64)> = Vec::new();
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            let length = (nodes[j] - nodes[i]).norm();
            if length > params.connect_radius {
                continue;
            }
            if edge_is_free(&tree, &nodes[i], &nodes[j], length, params.edge_step, margin_radius) {
                edges.push((i as u32, j as u32, length));
            }
        }
    }

    Ok(Roadmap { nodes, edges, params: *params })
}

fn edge_is_free(
    tree: &KdTree3,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    length: f64,
    step: f64,
    radius: f64,
) -> bool {
    if length <= step {
        return true;
    }
    let dir = (b - a) / length;
    let mut t = step;
    while t < length {
        if !free_with(&tree, &(a + dir * t), radius) {
            return false;
        }
        t += step;
    }
    true
}

#[derive(PartialEq)]
struct HeapEntry {
    cost: f64,
    node: u32,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed for a min-heap; ties break on the node id for determinism.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact shortest path from start (node 0) to goal (node 1) by Dijkstra.
/// Returns the waypoints (start and goal included) and the total length.
pub fn shortest_path(roadmap: &Roadmap) -> Result<(Vec<Vector3<f64>>, f64), PlanError> {
    let n = roadmap.nodes.len();
    let mut adjacency: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for &(i, j, w) in &roadmap.edges {
        adjacency[i as usize].push((j, w));
        adjacency[j as usize].push((i, w));
    }

    let mut dist = vec![f64::INFINITY; n];
    let mut parent = vec![u32::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[0] = 0.0;
    heap.push(HeapEntry { cost: 0.0, node: 0 });
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        if cost > dist[node as usize] {
            continue;
        }
        if node == 1 {
            break;
        }
        for &(next, w) in &adjacency[node as usize] {
            let candidate = cost + w;
            if candidate < dist[next as usize] {
                dist[next as usize] = candidate;
                parent[next as usize] = node;
                heap.push(HeapEntry { cost: candidate, node: next });
            }
        }
    }

    if !dist[1].is_finite() {
        return Err(PlanError::Unreachable);
    }
    let mut path_nodes = vec![1u32];
    let mut cursor = 1u32;
    while cursor != 0 {
        cursor = parent[cursor as usize];
        path_nodes.push(cursor);
    }
    path_nodes.reverse();
    let waypoints = path_nodes.iter().map(|&i| roadmap.nodes[i as usize]).collect();
    Ok((waypoints, dist[1]))
}

/// Total polyline length of a waypoint list.
pub fn path_length(waypoints: &[Vector3<f64>]) -> f64 {
    waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Checks a returned path densely: every waypoint and every interpolated
/// point at `spacing` along each segment must be collision-free at the plain
/// robot radius.
pub fn verify_path(
    waypoints: &[Vector3<f64>],
    obstacle_centers: &[Vector3<f64>],
    robot_radius: f64,
    spacing: f64,
) -> bool {
    for w in waypoints {
        if !collision_free(w, obstacle_centers, robot_radius) {
            return false;
        }
    }
    for pair in waypoints.windows(2) {
        let length = (pair[1] - pair[0]).norm();
        if length == 0.0 {
            continue;
        }
        let dir = (pair[1] - pair[0]) / length;
        let steps = math::ceil(length / spacing) as usize;
        for s in 1..steps {
            let p = pair[0] + dir * (s as f64 * spacing);
            if !collision_free(&p, obstacle_centers, robot_radius) {
                return false;
            }
        }
    }
    true
}
