//! Incremental kd-tree over 3-D points.
//!
//! Points are inserted one at a time; subtrees that become unbalanced are
//! rebuilt in place (scapegoat style) and deletions are lazy tombstones that
//! are swept out on the next rebuild. Every point carries a monotonically
//! increasing id, and k-NN results are ordered by `(squared distance, id)` so
//! ties resolve to the earliest inserted point.

use nalgebra::Vector3;

const NONE: u32 = u32::MAX;
/// A child holding more than this share of its parent's subtree triggers a rebuild.
const BALANCE: f64 = 0.7;
/// Subtrees smaller than this are never rebuilt for balance.
const MIN_REBUILD: u32 = 32;

#[derive(Debug, Clone)]
struct Node {
    point: Vector3<f64>,
    id: u64,
    axis: u8,
    left: u32,
    right: u32,
    deleted: bool,
    /// Nodes in the subtree, tombstones included.
    size: u32,
    /// Live points in the subtree.
    alive: u32,
    lo: Vector3<f64>,
    hi: Vector3<f64>,
}

/// One k-NN result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    pub point: Vector3<f64>,
    pub dist2: f64,
}

impl Neighbor {
    fn before(&self, other: &Neighbor) -> bool {
        self.dist2 < other.dist2 || (self.dist2 == other.dist2 && self.id < other.id)
    }
}

#[inline]
pub fn dist2(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let d = a - b;
    d.x * d.x + d.y * d.y + d.z * d.z
}

fn box_dist2(q: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        let d = if q[i] < lo[i] {
            lo[i] - q[i]
        } else if q[i] > hi[i] {
            q[i] - hi[i]
        } else {
            0.0
        };
        s += d * d;
    }
    s
}

fn box_max_dist2(q: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> f64 {
    (0..3)
        .map(|i| {
            let d = (q[i] - lo[i]).abs().max((hi[i] - q[i]).abs());
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, Default)]
pub struct KdTree {
    nodes: Vec<Node>,
    free: Vec<u32>,
    root: u32,
    next_id: u64,
    alive: usize,
}

impl KdTree {
    pub fn new() -> Self {
        KdTree { root: NONE, ..Default::default() }
    }

    /// Builds a balanced tree; ids follow slice order starting at 0.
    pub fn from_points(points: &[Vector3<f64>]) -> Self {
        let mut tree = KdTree::new();
        let mut items: Vec<(Vector3<f64>, u64)> = points.iter().enumerate().map(|(i, p)| (*p, i as u64)).collect();
        tree.next_id = points.len() as u64;
        tree.alive = points.len();
        tree.root = tree.build(&mut items);
        tree
    }

    pub fn len(&self) -> usize {
        self.alive
    }

    pub fn is_empty(&self) -> bool {
        self.alive == 0
    }

    /// Live points with their ids, in tree order.
    pub fn points(&self) -> Vec<(u64, Vector3<f64>)> {
        let mut out = Vec::with_capacity(self.alive);
        self.collect(self.root, &mut out);
        out
    }

    fn collect(&self, n: u32, out: &mut Vec<(u64, Vector3<f64>)>) {
        if n == NONE {
            return;
        }
        let node = &self.nodes[n as usize];
        if node.alive == 0 {
            return;
        }
        if !node.deleted {
            out.push((node.id, node.point));
        }
        self.collect(node.left, out);
        self.collect(node.right, out);
    }

    fn alloc(&mut self, node: Node) -> u32 {
        if let Some(i) = self.free.pop() {
            self.nodes[i as usize] = node;
            i
        } else {
            self.nodes.push(node);
            (self.nodes.len() - 1) as u32
        }
    }

    fn build(&mut self, items: &mut [(Vector3<f64>, u64)]) -> u32 {
        if items.is_empty() {
            return NONE;
        }
        let mut lo = items[0].0;
        let mut hi = items[0].0;
        for (p, _) in items.iter() {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let axis = (hi - lo).imax();
        let mid = items.len() / 2;
        items.select_nth_unstable_by(mid, |a, b| a.0[axis].total_cmp(&b.0[axis]).then(a.1.cmp(&b.1)));
        let (point, id) = items[mid];
        let n = items.len() as u32;
        let (left_items, rest) = items.split_at_mut(mid);
        let right_items = &mut rest[1..];
        let left = self.build(left_items);
        let right = self.build(right_items);
        self.alloc(Node { point, id, axis: axis as u8, left, right, deleted: false, size: n, alive: n, lo, hi })
    }

    /// Inserts a point and returns its id.
    pub fn insert(&mut self, point: Vector3<f64>) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.alive += 1;
        let leaf = Node {
            point,
            id,
            axis: 0,
            left: NONE,
            right: NONE,
            deleted: false,
            size: 1,
            alive: 1,
            lo: point,
            hi: point,
        };
        if self.root == NONE {
            self.root = self.alloc(leaf);
            return id;
        }

        let mut path: Vec<u32> = Vec::with_capacity(48);
        let mut cur = self.root;
        loop {
            path.push(cur);
            let node = &mut self.nodes[cur as usize];
            node.size += 1;
            node.alive += 1;
            node.lo = node.lo.inf(&point);
            node.hi = node.hi.sup(&point);
            let axis = node.axis as usize;
            let go_left = point[axis] < node.point[axis];
            let next = if go_left { node.left } else { node.right };
            if next == NONE {
                let child_axis = ((axis + 1) % 3) as u8;
                let new = self.alloc(Node { axis: child_axis, ..leaf });
                let node = &mut self.nodes[cur as usize];
                if go_left {
                    node.left = new;
                } else {
                    node.right = new;
                }
                break;
            }
            cur = next;
        }

        // Rebuild the highest unbalanced subtree on the insertion path.
        let mut depth_parent: Option<(usize, u32)> = None;
        for (depth, &n) in path.iter().enumerate() {
            let node = &self.nodes[n as usize];
            if node.size < MIN_REBUILD {
                break;
            }
            let ls = self.size_of(node.left) as f64;
            let rs = self.size_of(node.right) as f64;
            if ls.max(rs) > BALANCE * node.size as f64 {
                depth_parent = Some((depth, n));
                break;
            }
        }
        if let Some((depth, n)) = depth_parent {
            let rebuilt = self.rebuild(n);
            if depth == 0 {
                self.root = rebuilt;
            } else {
                let parent = path[depth - 1] as usize;
                if self.nodes[parent].left == n {
                    self.nodes[parent].left = rebuilt;
                } else {
                    self.nodes[parent].right = rebuilt;
                }
                self.refresh_path(&path[..depth]);
            }
        }
        id
    }

    fn size_of(&self, n: u32) -> u32 {
        if n == NONE {
            0
        } else {
            self.nodes[n as usize].size
        }
    }

    fn refresh_path(&mut self, path: &[u32]) {
        for &n in path.iter().rev() {
            self.refresh(n);
        }
    }

    fn refresh(&mut self, n: u32) {
        let (left, right, deleted, point) = {
            let node = &self.nodes[n as usize];
            (node.left, node.right, node.deleted, node.point)
        };
        let mut size = 1;
        let mut alive = u32::from(!deleted);
        let mut lo = point;
        let mut hi = point;
        for c in [left, right] {
            if c != NONE {
                let child = &self.nodes[c as usize];
                size += child.size;
                alive += child.alive;
                lo = lo.inf(&child.lo);
                hi = hi.sup(&child.hi);
            }
        }
        let node = &mut self.nodes[n as usize];
        node.size = size;
        node.alive = alive;
        node.lo = lo;
        node.hi = hi;
    }

    fn rebuild(&mut self, n: u32) -> u32 {
        let mut items = Vec::with_capacity(self.nodes[n as usize].alive as usize);
        let mut stack = vec![n];
        while let Some(i) = stack.pop() {
            if i == NONE {
                continue;
            }
            let node = &self.nodes[i as usize];
            if !node.deleted {
                items.push((node.point, node.id));
            }
            stack.push(node.left);
            stack.push(node.right);
            self.free.push(i);
        }
        self.build(&mut items)
    }

    /// Tombstones every point farther than `radius` from `center` and returns
    /// the removed points.
    pub fn retain_within(&mut self, center: &Vector3<f64>, radius: f64) -> Vec<Vector3<f64>> {
        let mut removed = Vec::new();
        let r2 = radius * radius;
        self.prune(self.root, center, r2, &mut removed);
        self.alive -= removed.len();
        if self.root != NONE && (self.alive as u32) * 2 < self.nodes[self.root as usize].size {
            self.root = self.rebuild(self.root);
        }
        removed
    }

    fn prune(&mut self, n: u32, c: &Vector3<f64>, r2: f64, removed: &mut Vec<Vector3<f64>>) {
        if n == NONE {
            return;
        }
        let node = &self.nodes[n as usize];
        if node.alive == 0 || box_max_dist2(c, &node.lo, &node.hi) <= r2 {
            return;
        }
        let (left, right) = (node.left, node.right);
        if !node.deleted && dist2(&node.point, c) > r2 {
            removed.push(node.point);
            self.nodes[n as usize].deleted = true;
        }
        self.prune(left, c, r2, removed);
        self.prune(right, c, r2, removed);
        let node = &self.nodes[n as usize];
        let alive = u32::from(!node.deleted)
            + [node.left, node.right]
                .iter()
                .filter(|c| **c != NONE)
                .map(|c| self.nodes[*c as usize].alive)
                .sum::<u32>();
        self.nodes[n as usize].alive = alive;
    }

    /// The `k` nearest live points ordered by `(squared distance, id)`.
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(self.root, query, k, &mut best);
        }
        best
    }

    fn search(&self, n: u32, q: &Vector3<f64>, k: usize, best: &mut Vec<Neighbor>) {
        if n == NONE {
            return;
        }
        let node = &self.nodes[n as usize];
        if node.alive == 0 {
            return;
        }
        if best.len() == k && box_dist2(q, &node.lo, &node.hi) > best[k - 1].dist2 {
            return;
        }
        if !node.deleted {
            let cand = Neighbor { id: node.id, point: node.point, dist2: dist2(&node.point, q) };
            if best.len() < k || cand.before(&best[k - 1]) {
                let pos = best.iter().position(|b| cand.before(b)).unwrap_or(best.len());
                best.insert(pos, cand);
                best.truncate(k);
            }
        }
        let axis = node.axis as usize;
        let (first, second) = if q[axis] < node.point[axis] {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(first, q, k, best);
        self.search(second, q, k, best);
    }
}

/// Brute-force k-NN with the same ordering as [`KdTree::knn`].
pub fn brute_force_knn(points: &[(u64, Vector3<f64>)], query: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = points
        .iter()
        .map(|(id, p)| Neighbor { id: *id, point: *p, dist2: dist2(p, query) })
        .collect();
    all.sort_by(|a, b| a.dist2.total_cmp(&b.dist2).then(a.id.cmp(&b.id)));
    all.truncate(k);
    all
}
