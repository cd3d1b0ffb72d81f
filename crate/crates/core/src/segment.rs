//! Felzenszwalb–Huttenlocher graph-based segmentation on an 8-connected pixel grid.

use serde::{Deserialize, Serialize};

use crate::types::RgbImage;

/// A partition of an image into connected segments with ids in
/// `0..segment_count`, numbered in raster order of first appearance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentLabeling {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub segment_count: usize,
    pub areas: Vec<usize>,
}

impl SegmentLabeling {
    /// Builds a labeling from arbitrary per-pixel keys, renumbering them in
    /// raster order.
    pub fn from_keys(height: usize, width: usize, keys: &[usize]) -> Self {
        assert_eq!(keys.len(), height * width);
        let mut map = std::collections::HashMap::new();
        let mut labels = Vec::with_capacity(keys.len());
        let mut areas = Vec::new();
        for &k in keys {
            let next = map.len() as u32;
            let id = *map.entry(k).or_insert(next);
            if id as usize == areas.len() {
                areas.push(0);
            }
            areas[id as usize] += 1;
            labels.push(id);
        }
        Self {
            height,
            width,
            labels,
            segment_count: areas.len(),
            areas,
        }
    }

    pub fn area_of_pixel(&self, i: usize) -> usize {
        self.areas[self.labels[i] as usize]
    }

    /// True when both labelings induce the same partition.
    pub fn same_partition(&self, other: &SegmentLabeling) -> bool {
        if self.labels.len() != other.labels.len() || self.segment_count != other.segment_count {
            return false;
        }
        let mut fwd = vec![u32::MAX; self.segment_count];
        let mut bwd = vec![u32::MAX; other.segment_count];
        for (&a, &b) in self.labels.iter().zip(&other.labels) {
            let (fa, fb) = (&mut fwd[a as usize], &mut bwd[b as usize]);
            if (*fa != u32::MAX && *fa != b) || (*fb != u32::MAX && *fb != a) {
                return false;
            }
            *fa = b;
            *fb = a;
        }
        true
    }
}

/// Produces an image partition used to guide pseudo-sensor masking.
pub trait Segmenter {
    fn segment(&self, rgb: &RgbImage) -> SegmentLabeling;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSegmenter {
    /// Merging scale on RGB values in `[0, 255]`.
    pub k: f64,
    pub min_size: usize,
    pub sigma: f64,
}

impl Segmenter for GraphSegmenter {
    fn segment(&self, rgb: &RgbImage) -> SegmentLabeling {
        segment_graph_based(rgb, self.k, self.min_size, self.sigma)
    }
}

#[derive(Clone, Copy, Debug)]
struct Edge {
    w: f64,
    a: u32,
    b: u32,
}

struct DisjointSet {
    parent: Vec<u32>,
    rank: Vec<u8>,
    size: Vec<u32>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    /// Joins two roots and returns the new root.
    fn join(&mut self, x: u32, y: u32) -> u32 {
        let (xi, yi) = (x as usize, y as usize);
        if self.rank[xi] > self.rank[yi] {
            self.parent[yi] = x;
            self.size[xi] += self.size[yi];
            x
        } else {
            self.parent[xi] = y;
            self.size[yi] += self.size[xi];
            if self.rank[xi] == self.rank[yi] {
                self.rank[yi] += 1;
            }
            y
        }
    }

    fn size(&self, root: u32) -> usize {
        self.size[root as usize] as usize
    }
}

/// Separable Gaussian smoothing of each channel with clamp-to-edge borders.
pub fn gaussian_smooth(rgb: &RgbImage, sigma: f64) -> RgbImage {
    if sigma <= 0.0 {
        return rgb.clone();
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= norm);
    let (h, w) = rgb.dims();
    let pass = |src: &[[f64; 3]], horizontal: bool| -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for (ki, kv) in kernel.iter().enumerate() {
                    let o = ki as isize - radius;
                    let (yy, xx) = if horizontal {
                        (y, (x as isize + o).clamp(0, w as isize - 1) as usize)
                    } else {
                        ((y as isize + o).clamp(0, h as isize - 1) as usize, x)
                    };
                    let p = src[yy * w + xx];
                    for c in 0..3 {
                        acc[c] += kv * p[c];
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    let tmp = pass(rgb.pixels(), true);
    let out = pass(&tmp, false);
    RgbImage::new(h, w, out).expect("smoothing preserves shape")
}

fn grid_edges(rgb: &RgbImage) -> Vec<Edge> {
    let (h, w) = rgb.dims();
    let px = rgb.pixels();
    let dist = |a: usize, b: usize| {
        let (p, q) = (px[a], px[b]);
        let dr = (p[0] - q[0]) * 255.0;
        let dg = (p[1] - q[1]) * 255.0;
        let db = (p[2] - q[2]) * 255.0;
        (dr * dr + dg * dg + db * db).sqrt()
    };
    let mut edges = Vec::with_capacity(4 * h * w);
    let mut push = |a: usize, b: usize| {
        let (a, b) = (a.min(b), a.max(b));
        edges.push(Edge {
            w: dist(a, b),
            a: a as u32,
            b: b as u32,
        });
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                push(i, i + 1);
            }
            if y + 1 < h {
                push(i, i + w);
                if x + 1 < w {
                    push(i, i + w + 1);
                }
                if x > 0 {
                    push(i, i + w - 1);
                }
            }
        }
    }
    edges.sort_by(|e, f| e.w.total_cmp(&f.w).then(e.a.cmp(&f.a)).then(e.b.cmp(&f.b)));
    edges
}

/// Segments `rgb` (channels in `[0, 1]`, compared on a `[0, 255]` scale).
///
/// Edges are processed in `(weight, source, target)` order, so the result is
/// fully deterministic. Components smaller than `min_size` are afterwards
/// merged across their lowest-weight boundary edge.
pub fn segment_graph_based(rgb: &RgbImage, k: f64, min_size: usize, sigma: f64) -> SegmentLabeling {
    let smoothed = gaussian_smooth(rgb, sigma);
    let (h, w) = rgb.dims();
    let n = h * w;
    let edges = grid_edges(&smoothed);
    let mut set = DisjointSet::new(n);
    let mut threshold = vec![k; n];
    for e in &edges {
        let a = set.find(e.a);
        let b = set.find(e.b);
        if a != b && e.w <= threshold[a as usize] && e.w <= threshold[b as usize] {
            let root = set.join(a, b);
            threshold[root as usize] = e.w + k / set.size(root) as f64;
        }
    }
    for e in &edges {
        let a = set.find(e.a);
        let b = set.find(e.b);
        if a != b && (set.size(a) < min_size || set.size(b) < min_size) {
            set.join(a, b);
        }
    }
    let keys: Vec<usize> = (0..n as u32).map(|i| set.find(i) as usize).collect();
    SegmentLabeling::from_keys(h, w, &keys)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn halves() -> RgbImage {
        RgbImage::from_fn(8, 8, |_, x| if x < 4 { [0.0; 3] } else { [1.0; 3] }).unwrap()
    }

    #[test]
    fn constant_image_is_one_segment() {
        let img = RgbImage::filled(8, 8, [0.3, 0.6, 0.1]);
        for k in [0.001, 1.0, 500.0] {
            let s = segment_graph_based(&img, k, 1, 0.0);
            assert_eq!(s.segment_count, 1);
            assert_eq!(s.areas, vec![64]);
        }
    }

    #[test]
    fn two_halves_split_in_two() {
        let s = segment_graph_based(&halves(), 10.0, 1, 0.0);
        assert_eq!(s.segment_count, 2);
        assert_eq!(s.areas, vec![32, 32]);
        assert_eq!(s.labels[0], 0);
        assert_eq!(s.labels[7], 1);
    }

    #[test]
    fn min_size_of_whole_image_forces_single_segment() {
        let img = RgbImage::from_fn(6, 5, |y, x| [(y * 5 + x) as f64 / 30.0, 0.0, (x % 2) as f64]).unwrap();
        let s = segment_graph_based(&img, 1.0, 30, 0.8);
        assert_eq!(s.segment_count, 1);
    }

    #[test]
    fn same_partition_ignores_ids() {
        let a = SegmentLabeling::from_keys(1, 4, &[5, 5, 9, 9]);
        let b = SegmentLabeling::from_keys(1, 4, &[1, 1, 0, 0]);
        let c = SegmentLabeling::from_keys(1, 4, &[1, 0, 0, 0]);
        assert!(a.same_partition(&b));
        assert!(!a.same_partition(&c));
    }

    #[test]
    fn smoothing_preserves_constants() {
        let img = RgbImage::filled(5, 7, [0.25, 0.5, 0.75]);
        let s = gaussian_smooth(&img, 0.8);
        for p in s.pixels() {
            assert!((p[0] - 0.25).abs() < 1e-12 && (p[2] - 0.75).abs() < 1e-12);
        }
    }
}
