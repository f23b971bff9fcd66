//! Static 3-d tree for exact nearest-neighbour queries.

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { dim: u8, value: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [[f64; 3]],
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[inline]
pub fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [[f64; 3]]) -> Self {
        let mut tree = KdTree { points, order: (0..points.len() as u32).collect(), nodes: Vec::new() };
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

    fn build(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start: start as u32, end: end as u32 });
            return id;
        }
        // Split on the axis with the widest spread.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = &self.points[i as usize];
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let dim = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
        let mid = start + (end - start) / 2;
        let points = self.points;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| points[a as usize][dim].total_cmp(&points[b as usize][dim]));
        let value = points[self.order[mid] as usize][dim];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id as usize] = Node::Split { dim: dim as u8, value, left, right };
        id
    }

    /// Index of and squared distance to the nearest point.
    pub fn nearest(&self, query: &[f64; 3]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        Some(best)
    }

    fn search(&self, node: u32, q: &[f64; 3], best: &mut (usize, f64)) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let d = squared_distance(q, &self.points[i as usize]);
                    if d < best.1 {
                        *best = (i as usize, d);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff < best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn agrees_with_linear_scan() {
        let mut rng = crate::seed::rng(1);
        let pts: Vec<[f64; 3]> =
            (0..500).map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)]).collect();
        let tree = KdTree::new(&pts);
        for _ in 0..200 {
            let q = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-2.0..2.0)];
            let brute = pts.iter().map(|p| squared_distance(&q, p)).fold(f64::INFINITY, f64::min);
            assert_eq!(tree.nearest(&q).unwrap().1, brute);
        }
    }

    #[test]
    fn handles_duplicates_and_empty() {
        let pts = vec![[1.0, 1.0, 1.0]; 40];
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&[1.0, 1.0, 2.0]).unwrap().1, 1.0);
        assert!(KdTree::new(&[]).nearest(&[0.0; 3]).is_none());
    }
}
