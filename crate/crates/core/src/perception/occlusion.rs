//! Nearest-first occlusion on the flattened angle line.
//!
//! Each candidate's box interval is added to a growing covered set `S`
//! after its own plate has been tested against the boxes of everything
//! nearer. A plate is visible when its open interval misses `S` entirely.
//! Interval endpoints are discretized into alternating point/gap units and
//! `S` lives in a segment tree, giving `O(|C| log |C|)` overall.

use super::{PerceptionError, ProjectionView};

/// An interval on the real line with independently open or closed ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
    pub lo_open: bool,
    pub hi_open: bool,
}

impl Span {
    pub(crate) const EMPTY: Span = Span { lo: 1.0, hi: 0.0, lo_open: true, hi_open: true };

    pub fn closed(lo: f64, hi: f64) -> Self {
        Span { lo, hi, lo_open: false, hi_open: false }
    }

    pub fn open(lo: f64, hi: f64) -> Self {
        Span { lo, hi, lo_open: true, hi_open: true }
    }
}

/// Marks covered units; coverage only ever grows.
struct CoverTree {
    n: usize,
    full: Vec<bool>,
    any: Vec<bool>,
}

impl CoverTree {
    fn new(n: usize) -> Self {
        let size = 4 * n.max(1);
        CoverTree { n, full: vec![false; size], any: vec![false; size] }
    }

    fn cover(&mut self, l: usize, r: usize) {
        if l <= r {
            self.cover_rec(1, 0, self.n - 1, l, r);
        }
    }

    fn cover_rec(&mut self, node: usize, nl: usize, nr: usize, l: usize, r: usize) {
        if r < nl || nr < l || self.full[node] {
            return;
        }
        if l <= nl && nr <= r {
            self.full[node] = true;
            self.any[node] = true;
            return;
        }
        let mid = (nl + nr) / 2;
        self.cover_rec(2 * node, nl, mid, l, r);
        self.cover_rec(2 * node + 1, mid + 1, nr, l, r);
        self.any[node] = true;
    }

    fn any_covered(&self, l: usize, r: usize) -> bool {
        l <= r && self.query_rec(1, 0, self.n - 1, l, r)
    }

    fn query_rec(&self, node: usize, nl: usize, nr: usize, l: usize, r: usize) -> bool {
        if r < nl || nr < l || !self.any[node] {
            return false;
        }
        if self.full[node] || (l <= nl && nr <= r) {
            return true;
        }
        let mid = (nl + nr) / 2;
        self.query_rec(2 * node, nl, mid, l, r) || self.query_rec(2 * node + 1, mid + 1, nr, l, r)
    }
}

/// Sorted distinct endpoints. Unit `2i` is the point `xs[i]`, unit `2i+1`
/// the open gap `(xs[i], xs[i+1])`.
struct Discretization {
    xs: Vec<f64>,
}

impl Discretization {
    fn index(&self, v: f64) -> usize {
        self.xs.partition_point(|&x| x < v)
    }

    fn units(&self, s: &Span) -> Option<(usize, usize)> {
        let lo = 2 * self.index(s.lo) + usize::from(s.lo_open);
        let hi = (2 * self.index(s.hi)).checked_sub(usize::from(s.hi_open))?;
        (lo <= hi).then_some((lo, hi))
    }

    fn unit_count(&self) -> usize {
        (2 * self.xs.len()).saturating_sub(1)
    }
}

/// Visibility flag for each candidate, in input order. `views` must be
/// sorted ascending by `dist_g`; the first candidate is always visible.
pub fn visible_mask(views: &[ProjectionView]) -> Result<Vec<bool>, PerceptionError> {
    for (i, w) in views.windows(2).enumerate() {
        // written this way so NaN distances also fail
        if !(w[0].dist_g <= w[1].dist_g) {
            return Err(PerceptionError::Unsorted(i + 1));
        }
    }
    if views.is_empty() {
        return Ok(Vec::new());
    }

    let spans: Vec<_> = views.iter().map(|v| (v.box_spans(), v.plate_spans())).collect();
    let mut xs = Vec::with_capacity(views.len() * 8);
    for ((boxes, nb), (plates, np)) in &spans {
        for s in boxes[..*nb].iter().chain(&plates[..*np]) {
            xs.push(s.lo);
            xs.push(s.hi);
        }
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let disc = Discretization { xs };
    let mut tree = CoverTree::new(disc.unit_count());

    let mut out = Vec::with_capacity(views.len());
    for (i, ((boxes, nb), (plates, np))) in spans.iter().enumerate() {
        let hidden = i > 0 && plates[..*np].iter().filter_map(|s| disc.units(s)).any(|(l, r)| tree.any_covered(l, r));
        out.push(!hidden);
        for s in &boxes[..*nb] {
            if let Some((l, r)) = disc.units(s) {
                tree.cover(l, r);
            }
        }
    }
    Ok(out)
}

/// The candidates whose plates are not touched by any nearer box, in input
/// order.
pub fn get_visible_lines(views: &[ProjectionView]) -> Result<Vec<ProjectionView>, PerceptionError> {
    let mask = visible_mask(views)?;
    Ok(views.iter().zip(mask).filter(|(_, v)| *v).map(|(v, _)| *v).collect())
}
