//! Bounding volume hierarchy over the axis-aligned boxes `[p_i - s_i, p_i + s_i]`.

const LEAF_SIZE: usize = 4;

/// Relative padding of the candidate test; the exact inside test is done by
/// the caller in the grid's local coordinates.
const PAD: f64 = 1e-9;

#[derive(Clone, Copy, Debug)]
struct Node {
    lo: [f64; 3],
    hi: [f64; 3],
    start: u32,
    count: u32,
}

#[derive(Clone, Debug)]
pub struct BoxTree {
    nodes: Vec<Node>,
    order: Vec<u32>,
    centers: Vec<[f64; 3]>,
    scales: Vec<f64>,
}

impl BoxTree {
    pub fn build(centers: Vec<[f64; 3]>, scales: Vec<f64>) -> Self {
        assert_eq!(centers.len(), scales.len());
        let n = centers.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut tree = Self {
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
            order: Vec::new(),
            centers,
            scales,
        };
        if n > 0 {
            tree.split(&mut order, 0, n);
        }
        tree.order = order;
        tree
    }

    fn split(&mut self, order: &mut [u32], start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut clo = [f64::INFINITY; 3];
        let mut chi = [f64::NEG_INFINITY; 3];
        for &i in &order[start..end] {
            let (p, s) = (self.centers[i as usize], self.scales[i as usize]);
            for a in 0..3 {
                lo[a] = lo[a].min(p[a] - s * (1.0 + PAD));
                hi[a] = hi[a].max(p[a] + s * (1.0 + PAD));
                clo[a] = clo[a].min(p[a]);
                chi[a] = chi[a].max(p[a]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            start: start as u32,
            count: (end - start) as u32,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let ext = [chi[0] - clo[0], chi[1] - clo[1], chi[2] - clo[2]];
        let axis = if ext[0] >= ext[1] && ext[0] >= ext[2] {
            0
        } else if ext[1] >= ext[2] {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        let centers = &self.centers;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centers[a as usize][axis]
                .total_cmp(&centers[b as usize][axis])
                .then(a.cmp(&b))
        });
        self.split(order, start, mid);
        let right = self.split(order, mid, end);
        self.nodes[id].start = right as u32;
        self.nodes[id].count = 0;
        id
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Grids whose (slightly padded) closed box contains `x`, appended to `out`.
    pub fn candidates(&self, x: &[f64; 3], out: &mut Vec<usize>) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            if (0..3).any(|a| x[a] < node.lo[a] || x[a] > node.hi[a]) {
                continue;
            }
            if node.count > 0 {
                let s = node.start as usize;
                for &i in &self.order[s..s + node.count as usize] {
                    let (p, r) = (self.centers[i as usize], self.scales[i as usize]);
                    let lim = r * (1.0 + PAD);
                    if (0..3).all(|a| (x[a] - p[a]).abs() <= lim) {
                        out.push(i as usize);
                    }
                }
            } else {
                stack.push(node.start);
                stack.push(id + 1);
            }
        }
    }

    /// `min_i (‖x - p_i‖∞ - s_i)`, the ∞-distance to the nearest box when `x`
    /// lies outside every box.
    pub fn nearest_gap(&self, x: &[f64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        if self.nodes.is_empty() {
            return best;
        }
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        stack.push((0, f64::NEG_INFINITY));
        while let Some((id, bound)) = stack.pop() {
            if bound >= best {
                continue;
            }
            let node = &self.nodes[id as usize];
            if node.count > 0 {
                let s = node.start as usize;
                for &i in &self.order[s..s + node.count as usize] {
                    let p = self.centers[i as usize];
                    let d = (x[0] - p[0]).abs().max((x[1] - p[1]).abs()).max((x[2] - p[2]).abs())
                        - self.scales[i as usize];
                    if d < best {
                        best = d;
                    }
                }
                continue;
            }
            let (l, r) = (id + 1, node.start);
            let bl = self.gap_bound(l, x);
            let br = self.gap_bound(r, x);
            if bl <= br {
                stack.push((r, br));
                stack.push((l, bl));
            } else {
                stack.push((l, bl));
                stack.push((r, br));
            }
        }
        best
    }

    /// Lower bound of `‖x - p‖∞ - s` over the boxes below a node.
    fn gap_bound(&self, id: u32, x: &[f64; 3]) -> f64 {
        let n = &self.nodes[id as usize];
        (0..3)
            .map(|a| (n.lo[a] - x[a]).max(x[a] - n.hi[a]))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> BoxTree {
        let centers = (0..n)
            .map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let scales = (0..n).map(|_| rng.random_range(0.02..0.3)).collect();
        BoxTree::build(centers, scales)
    }

    #[test]
    fn queries_match_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tree = random_tree(&mut rng, 300);
        let mut got = Vec::new();
        for _ in 0..2000 {
            let x = [0; 3].map(|_| rng.random_range(-1.3..1.3));
            got.clear();
            tree.candidates(&x, &mut got);
            got.sort();
            let expect: Vec<usize> = (0..tree.len())
                .filter(|&i| (0..3).all(|a| (x[a] - tree.centers[i][a]).abs() <= tree.scales[i]))
                .collect();
            assert_eq!(got, expect);

            let gap = (0..tree.len())
                .map(|i| {
                    (0..3)
                        .map(|a| (x[a] - tree.centers[i][a]).abs())
                        .fold(0.0, f64::max)
                        - tree.scales[i]
                })
                .fold(f64::INFINITY, f64::min);
            assert_eq!(tree.nearest_gap(&x), gap);
        }
    }
}
