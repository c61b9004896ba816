use serde::{Deserialize, Serialize};

use crate::image::Rect;

/// A raw accepted window and the score of its last cascade stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub rect: Rect,
    pub score: f64,
}

impl From<Rect> for Candidate {
    fn from(rect: Rect) -> Self {
        Candidate { rect, score: 0.0 }
    }
}

/// A grouped face detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub rect: Rect,
    /// Number of raw windows merged into this detection.
    pub neighbors: u32,
    /// Highest final-stage score among the merged windows.
    pub weight: f64,
}

/// Two rectangles are similar when every edge differs by at most
/// `eps * (mean of the smaller width and smaller height)`.
pub fn similar(a: &Rect, b: &Rect, eps: f64) -> bool {
    let delta = eps * (a.w.min(b.w) + a.h.min(b.h)) as f64 * 0.5;
    let close = |p: i32, q: i32| ((p - q).abs() as f64) <= delta;
    close(a.x, b.x) && close(a.y, b.y) && close(a.right(), b.right()) && close(a.bottom(), b.bottom())
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Clusters candidates by transitive similarity, drops clusters with fewer
/// than `min_neighbors + 1` members, and replaces each cluster with its
/// per-coordinate mean rectangle (rounded half to even). A surviving
/// cluster that sits inside a clearly stronger one is suppressed, as the
/// reference cascade runtime does.
///
/// Output keeps cluster order (order of each cluster's first candidate).
pub fn group_rectangles(candidates: &[Candidate], min_neighbors: u32, eps: f64) -> Vec<Detection> {
    assert!(eps >= 0.0, "eps must be non-negative");
    let n = candidates.len();
    let mut sets = DisjointSet::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if similar(&candidates[i].rect, &candidates[j].rect, eps) {
                sets.union(i, j);
            }
        }
    }

    // label -> (count, sums, best score), in first-seen order
    let mut order: Vec<usize> = Vec::new();
    let mut acc: std::collections::HashMap<usize, (u32, [i64; 4], f64)> = Default::default();
    for (i, c) in candidates.iter().enumerate() {
        let root = sets.find(i);
        let entry = acc.entry(root).or_insert_with(|| {
            order.push(root);
            (0, [0; 4], f64::NEG_INFINITY)
        });
        entry.0 += 1;
        entry.1[0] += c.rect.x as i64;
        entry.1[1] += c.rect.y as i64;
        entry.1[2] += c.rect.w as i64;
        entry.1[3] += c.rect.h as i64;
        entry.2 = entry.2.max(c.score);
    }

    let clusters: Vec<Detection> = order
        .iter()
        .map(|root| {
            let (count, s, best) = acc[root];
            let mean = |v: i64| (v as f64 / count as f64).round_ties_even() as i32;
            Detection {
                rect: Rect::new(mean(s[0]), mean(s[1]), mean(s[2]), mean(s[3])),
                neighbors: count,
                weight: best,
            }
        })
        .filter(|d| d.neighbors > min_neighbors)
        .collect();

    clusters
        .iter()
        .enumerate()
        .filter(|(i, d)| {
            !clusters.iter().enumerate().any(|(j, other)| {
                *i != j && nested_in_stronger(d, other, eps)
            })
        })
        .map(|(_, d)| *d)
        .collect()
}

fn nested_in_stronger(inner: &Detection, outer: &Detection, eps: f64) -> bool {
    let (r1, r2) = (&inner.rect, &outer.rect);
    let dx = (r2.w as f64 * eps).round_ties_even() as i32;
    let dy = (r2.h as f64 * eps).round_ties_even() as i32;
    r1.x >= r2.x - dx
        && r1.y >= r2.y - dy
        && r1.right() <= r2.right() + dx
        && r1.bottom() <= r2.bottom() + dy
        && (outer.neighbors > inner.neighbors.max(3) || inner.neighbors < 3)
}
