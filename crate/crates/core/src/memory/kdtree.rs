//! Static k-d tree over keyed points.
//!
//! The tree is implicit: after construction the point order itself encodes
//! it, with the median of each range at its midpoint. Nearest-neighbour
//! queries compare `(squared distance, key)` lexicographically, so equal
//! distances resolve to the smallest key exactly as a linear scan would.

/// Squared Euclidean distance; shared with the linear-scan path so both
/// produce bit-identical values.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `(distance², key)` comparison used for every nearest-neighbour decision.
pub fn closer(a: (f64, u64), b: (f64, u64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

#[derive(Debug, Clone, Default)]
pub struct KdTree {
    dim: usize,
    /// Flattened coordinates in tree order.
    coords: Vec<f64>,
    keys: Vec<u64>,
}

impl KdTree {
    pub fn build(dim: usize, points: impl IntoIterator<Item = (u64, Vec<f64>)>) -> Self {
        let mut items: Vec<(u64, Vec<f64>)> = points.into_iter().collect();
        debug_assert!(items.iter().all(|(_, p)| p.len() == dim));
        if dim > 0 {
            let n = items.len();
            arrange(&mut items, 0, dim, 0, n);
        }
        let mut coords = Vec::with_capacity(items.len() * dim);
        let mut keys = Vec::with_capacity(items.len());
        for (k, p) in items {
            keys.push(k);
            coords.extend_from_slice(&p);
        }
        KdTree { dim, coords, keys }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Nearest point with key `>= min_key`, as `(distance², key)`.
    pub fn nearest(&self, query: &[f64], min_key: u64) -> Option<(f64, u64)> {
        let mut best = None;
        if !self.is_empty() {
            self.search(query, min_key, 0, self.len(), 0, &mut best);
        }
        best
    }

    fn search(&self, q: &[f64], min_key: u64, lo: usize, hi: usize, depth: usize, best: &mut Option<(f64, u64)>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let key = self.keys[mid];
        if key >= min_key {
            let cand = (dist2(q, self.point(mid)), key);
            if best.is_none_or(|b| closer(cand, b)) {
                *best = Some(cand);
            }
        }
        if self.dim == 0 {
            self.search(q, min_key, lo, mid, depth + 1, best);
            self.search(q, min_key, mid + 1, hi, depth + 1, best);
            return;
        }
        let axis = depth % self.dim;
        let diff = q[axis] - self.point(mid)[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, min_key, near.0, near.1, depth + 1, best);
        // Far-side points are at least |diff| away; skip only when strictly worse.
        if best.is_none_or(|b| diff * diff <= b.0) {
            self.search(q, min_key, far.0, far.1, depth + 1, best);
        }
    }
}

fn arrange(items: &mut [(u64, Vec<f64>)], depth: usize, dim: usize, lo: usize, hi: usize) {
    if hi - lo <= 1 {
        return;
    }
    let axis = depth % dim;
    let mid = lo + (hi - lo) / 2;
    items[lo..hi].select_nth_unstable_by(mid - lo, |a, b| a.1[axis].total_cmp(&b.1[axis]).then(a.0.cmp(&b.0)));
    arrange(items, depth + 1, dim, lo, mid);
    arrange(items, depth + 1, dim, mid + 1, hi);
}
