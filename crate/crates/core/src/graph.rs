//! Patch-level grid graphs built from feature maps.
//!
//! Cell `(i, j)` of an `H x W` map becomes node `i·W + j` with feature
//! `[F[:, i, j]; i/(H-1); j/(W-1)]`. Edges join 4-adjacent cells in both
//! directions and are kept sorted by `(src, dst)`, which fixes the order in
//! which messages are accumulated.

use crate::backbone::FeatureMap;
use crate::error::{Error, Result};
use crate::numeric::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGraph {
    /// `N x (C + 2)`; the last two columns repeat `coords`.
    pub node_features: Tensor,
    /// `N x 2` normalized `(row, col)`.
    pub coords: Tensor,
    pub edges: Vec<(usize, usize)>,
    pub grid_h: usize,
    pub grid_w: usize,
}

pub fn build_patch_graph(fm: &FeatureMap) -> Result<PatchGraph> {
    let (c, h, w) = (fm.channels(), fm.height(), fm.width());
    if h < 2 || w < 2 {
        return Err(Error::DegenerateGrid { h, w });
    }
    let n = h * w;
    let mut features = Tensor::zeros(&[n, c + 2]);
    let mut coords = Tensor::zeros(&[n, 2]);
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let (r, col) = (i as f64 / (h - 1) as f64, j as f64 / (w - 1) as f64);
            let row = features.row_mut(k);
            for ch in 0..c {
                row[ch] = fm.tensor.at3(ch, i, j);
            }
            row[c] = r;
            row[c + 1] = col;
            coords.row_mut(k).copy_from_slice(&[r, col]);
        }
    }
    Ok(PatchGraph {
        node_features: features,
        coords,
        edges: grid_edges(h, w),
        grid_h: h,
        grid_w: w,
    })
}

/// Directed 4-neighbour edges of an `h x w` grid, sorted by `(src, dst)`.
pub fn grid_edges(h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(2 * (h * (w - 1) + w * (h - 1)));
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            // ascending dst order: up, left, right, down
            if i > 0 {
                edges.push((k, k - w));
            }
            if j > 0 {
                edges.push((k, k - 1));
            }
            if j + 1 < w {
                edges.push((k, k + 1));
            }
            if i + 1 < h {
                edges.push((k, k + w));
            }
        }
    }
    edges
}

impl PatchGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_features.rows()
    }

    /// Number of feature-map channels (node feature width minus the two
    /// coordinate columns).
    pub fn channels(&self) -> usize {
        self.node_features.row_len() - 2
    }

    pub fn coord(&self, k: usize) -> [f64; 2] {
        let r = self.coords.row(k);
        [r[0], r[1]]
    }

    pub fn neighbor_displacement(&self, edge: (usize, usize)) -> Result<[f64; 2]> {
        if self.edges.binary_search(&edge).is_err() {
            return Err(Error::EdgeNotFound {
                src: edge.0,
                dst: edge.1,
            });
        }
        let (a, b) = (self.coord(edge.0), self.coord(edge.1));
        Ok([b[0] - a[0], b[1] - a[1]])
    }

    /// In-degree of each node.
    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes()];
        for &(_, dst) in &self.edges {
            deg[dst] += 1;
        }
        deg
    }

    /// Per node `i`, `Σ_{j ∈ N(i)} (c_j − c_i)` accumulated in edge order.
    /// `N(i)` are the sources of edges ending at `i`.
    pub fn displacement_sums(&self) -> Vec<[f64; 2]> {
        let mut sums = vec![[0.0; 2]; self.num_nodes()];
        for &(src, dst) in &self.edges {
            let (cs, cd) = (self.coord(src), self.coord(dst));
            sums[dst][0] += cs[0] - cd[0];
            sums[dst][1] += cs[1] - cd[1];
        }
        sums
    }

    /// Scatter a gradient on `node_features` back onto the `C x H x W` map.
    /// Gradient on the coordinate columns is dropped.
    pub fn feature_map_grad(&self, grad_nodes: &Tensor) -> Tensor {
        let c = self.channels();
        let (h, w) = (self.grid_h, self.grid_w);
        let mut out = Tensor::zeros(&[c, h, w]);
        for i in 0..h {
            for j in 0..w {
                let row = grad_nodes.row(i * w + j);
                for ch in 0..c {
                    out.data_mut()[(ch * h + i) * w + j] = row[ch];
                }
            }
        }
        out
    }

    /// Same graph with node `k` renamed to `perm[k]`; edges re-sorted.
    pub fn relabel(&self, perm: &[usize]) -> PatchGraph {
        let n = self.num_nodes();
        assert_eq!(perm.len(), n);
        let mut features = Tensor::zeros(self.node_features.dims());
        let mut coords = Tensor::zeros(self.coords.dims());
        for k in 0..n {
            features
                .row_mut(perm[k])
                .copy_from_slice(self.node_features.row(k));
            coords.row_mut(perm[k]).copy_from_slice(self.coords.row(k));
        }
        let mut edges: Vec<_> = self
            .edges
            .iter()
            .map(|&(a, b)| (perm[a], perm[b]))
            .collect();
        edges.sort_unstable();
        PatchGraph {
            node_features: features,
            coords,
            edges,
            grid_h: self.grid_h,
            grid_w: self.grid_w,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeLabels {
    pub labels: Vec<u8>,
    pub coverage: Vec<f64>,
}

impl NodeLabels {
    pub fn as_targets(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| l as f64).collect()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Default coverage threshold: any lesion pixel marks the cell positive.
pub const DEFAULT_LABEL_THRESHOLD: f64 = 0.0;

/// Node labels from a binary `1 x S x S` mask (pixels ≥ 0.5 are lesion).
/// Cell `(i, j)` covers pixels `[i·d, (i+1)·d) x [j·d, (j+1)·d)`.
pub fn node_labels_from_mask(mask: &Tensor, fm: &FeatureMap, theta: f64) -> Result<NodeLabels> {
    node_labels_for_grid(mask, fm.height(), fm.width(), fm.downsample, theta)
}

/// [`node_labels_from_mask`] when only the grid geometry is known.
pub fn node_labels_for_grid(
    mask: &Tensor,
    gh: usize,
    gw: usize,
    d: usize,
    theta: f64,
) -> Result<NodeLabels> {
    let md = mask.dims();
    let (mh, mw) = match md {
        [1, h, w] | [h, w] => (*h, *w),
        _ => return Err(Error::Shape(format!("mask must be 1xHxW, got {md:?}"))),
    };
    if mh != gh * d {
        return Err(Error::Alignment {
            size: mh,
            downsample: d,
            grid: gh,
        });
    }
    if mw != gw * d {
        return Err(Error::Alignment {
            size: mw,
            downsample: d,
            grid: gw,
        });
    }
    let px = mask.data();
    let area = (d * d) as f64;
    let mut labels = Vec::with_capacity(gh * gw);
    let mut coverage = Vec::with_capacity(gh * gw);
    for i in 0..gh {
        for j in 0..gw {
            let mut count = 0usize;
            for y in i * d..(i + 1) * d {
                count += px[y * mw + j * d..y * mw + (j + 1) * d]
                    .iter()
                    .filter(|&&v| v >= 0.5)
                    .count();
            }
            let cov = count as f64 / area;
            coverage.push(cov);
            labels.push(u8::from(cov > theta));
        }
    }
    Ok(NodeLabels { labels, coverage })
}
