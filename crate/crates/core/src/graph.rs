//! Skeleton graph with spatial-configuration partitioning.
//!
//! Every vertex `i` aggregates its 1-hop neighbourhood `B(i) = {i} ∪ N(i)`,
//! split into three subsets by hop distance to the center joint: the vertex
//! itself (root), neighbours closer to the center (centripetal; equal
//! distance also lands here) and neighbours farther away (centrifugal).
//! Each subset's row is normalised by its cardinality `Z_i(k)`.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::nn::linalg::gemm_tn;
use crate::nn::Tensor;
use crate::skeleton::SkeletonTopology;

pub const ROOT: usize = 0;
pub const CENTRIPETAL: usize = 1;
pub const CENTRIFUGAL: usize = 2;
pub const PARTITIONS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonGraph {
    joints: usize,
    center: usize,
    hops: Vec<usize>,
    adjacency: Tensor,
    partitions: [Tensor; PARTITIONS],
    normalized: [Tensor; PARTITIONS],
    /// Row-wise nonzeros of `normalized[k]`: `(column, 1/Z)`.
    sparse: [Vec<Vec<(usize, f64)>>; PARTITIONS],
}

pub fn build_graph(topology: &SkeletonTopology) -> Result<SkeletonGraph> {
    SkeletonGraph::from_parents(topology.parents(), topology.center())
}

impl SkeletonGraph {
    /// Builds the graph from a parent array (`-1` marks a root).
    pub fn from_parents(parent: &[i64], center: usize) -> Result<Self> {
        let v = parent.len();
        if v == 0 || center >= v {
            return Err(Error::Topology(format!(
                "center {center} invalid for {v} joints"
            )));
        }
        let mut adj = vec![0.0; v * v];
        for (j, &p) in parent.iter().enumerate() {
            if p < 0 {
                continue;
            }
            let p = p as usize;
            if p >= v || p == j {
                return Err(Error::Topology(format!("joint {j} has invalid parent {p}")));
            }
            adj[j * v + p] = 1.0;
            adj[p * v + j] = 1.0;
        }
        let hops = hop_distances(&adj, v, center);
        if let Some(j) = hops.iter().position(|&h| h == usize::MAX) {
            return Err(Error::Topology(format!(
                "joint {j} is not connected to the center"
            )));
        }

        let mut parts: [Vec<f64>; PARTITIONS] = std::array::from_fn(|_| vec![0.0; v * v]);
        for i in 0..v {
            parts[ROOT][i * v + i] = 1.0;
            for j in 0..v {
                if adj[i * v + j] == 0.0 {
                    continue;
                }
                // Tree neighbours never tie; a tie would count as centripetal.
                let k = if hops[j] > hops[i] {
                    CENTRIFUGAL
                } else {
                    CENTRIPETAL
                };
                parts[k][i * v + j] = 1.0;
            }
        }
        let mut normalized: [Vec<f64>; PARTITIONS] = parts.clone();
        let mut sparse: [Vec<Vec<(usize, f64)>>; PARTITIONS] =
            std::array::from_fn(|_| vec![Vec::new(); v]);
        for k in 0..PARTITIONS {
            for i in 0..v {
                let row = &mut normalized[k][i * v..(i + 1) * v];
                let z = row.iter().filter(|&&x| x != 0.0).count();
                if z == 0 {
                    continue;
                }
                let w = 1.0 / z as f64;
                for (j, x) in row.iter_mut().enumerate() {
                    if *x != 0.0 {
                        *x = w;
                        sparse[k][i].push((j, w));
                    }
                }
            }
        }
        let t = |d: Vec<f64>| Tensor::from_parts(vec![v, v], d);
        let [p0, p1, p2] = parts;
        let [n0, n1, n2] = normalized;
        Ok(SkeletonGraph {
            joints: v,
            center,
            hops,
            adjacency: t(adj),
            partitions: [t(p0), t(p1), t(p2)],
            normalized: [t(n0), t(n1), t(n2)],
            sparse,
        })
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn hops(&self) -> &[usize] {
        &self.hops
    }

    /// Bone adjacency without self-loops.
    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn partition(&self, k: usize) -> &Tensor {
        &self.partitions[k]
    }

    pub fn normalized(&self, k: usize) -> &Tensor {
        &self.normalized[k]
    }

    /// `out[r, i] += Σ_j Ā_k[i, j] · x[r, j]` over rows `r` of a `[rows × V]` slice.
    pub(crate) fn aggregate(&self, k: usize, x: &[f64], out: &mut [f64]) {
        let v = self.joints;
        for (xr, or) in x.chunks_exact(v).zip(out.chunks_exact_mut(v)) {
            for (i, row) in self.sparse[k].iter().enumerate() {
                let mut s = 0.0;
                for &(j, w) in row {
                    s += w * xr[j];
                }
                or[i] += s;
            }
        }
    }

    /// Transpose of [`aggregate`](Self::aggregate): `out[r, j] += Σ_i Ā_k[i, j] · g[r, i]`.
    pub(crate) fn aggregate_transpose(&self, k: usize, g: &[f64], out: &mut [f64]) {
        let v = self.joints;
        for (gr, or) in g.chunks_exact(v).zip(out.chunks_exact_mut(v)) {
            for (i, row) in self.sparse[k].iter().enumerate() {
                let gi = gr[i];
                for &(j, w) in row {
                    or[j] += w * gi;
                }
            }
        }
    }
}

fn hop_distances(adj: &[f64], v: usize, center: usize) -> Vec<usize> {
    let mut hops = vec![usize::MAX; v];
    hops[center] = 0;
    let mut queue = VecDeque::from([center]);
    while let Some(i) = queue.pop_front() {
        for j in 0..v {
            if adj[i * v + j] != 0.0 && hops[j] == usize::MAX {
                hops[j] = hops[i] + 1;
                queue.push_back(j);
            }
        }
    }
    hops
}

/// Single-frame spatial graph convolution
/// `f_out = Σ_k W_kᵀ · f_in · Ā_kᵀ` for `f_in: [C × V]`, `W_k: [C × C']`.
pub fn graph_conv_apply(
    graph: &SkeletonGraph,
    f_in: &Tensor,
    weights: &[Tensor; PARTITIONS],
) -> Result<Tensor> {
    let v = graph.joints();
    if f_in.ndim() != 2 || f_in.dim(1) != v {
        return Err(Error::shape("graph conv input", f_in.shape(), &[0, v]));
    }
    let c = f_in.dim(0);
    let c_out = weights[0].shape().get(1).copied().unwrap_or(0);
    for w in weights {
        if w.shape() != [c, c_out] {
            return Err(Error::shape("graph conv weights", w.shape(), &[c, c_out]));
        }
    }
    let mut out = vec![0.0; c_out * v];
    let mut agg = vec![0.0; c * v];
    for (k, w) in weights.iter().enumerate() {
        agg.iter_mut().for_each(|x| *x = 0.0);
        graph.aggregate(k, f_in.data(), &mut agg);
        gemm_tn(w.data(), &agg, &mut out, c_out, c, v);
    }
    Tensor::new(vec![c_out, v], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_partition_at_middle_node() {
        let g = SkeletonGraph::from_parents(&[-1, 0, 1], 0).unwrap();
        assert_eq!(g.partition(ROOT).get(&[1, 1]), 1.0);
        assert_eq!(g.partition(CENTRIPETAL).get(&[1, 0]), 1.0);
        assert_eq!(g.partition(CENTRIFUGAL).get(&[1, 2]), 1.0);
        for k in 0..3 {
            let row_sum: f64 = (0..3).map(|j| g.partition(k).get(&[1, j])).sum();
            assert_eq!(row_sum, 1.0);
        }
    }

    #[test]
    fn single_joint() {
        let g = SkeletonGraph::from_parents(&[-1], 0).unwrap();
        assert_eq!(g.partition(ROOT).data(), &[1.0]);
        assert_eq!(g.partition(CENTRIPETAL).data(), &[0.0]);
        assert_eq!(g.partition(CENTRIFUGAL).data(), &[0.0]);
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let f = Tensor::new(vec![2, 1], vec![3.0, -4.0]).unwrap();
        let out = graph_conv_apply(&g, &f, &[eye.clone(), eye.clone(), eye]).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn two_joint_edge_hand_evaluation() {
        let g = SkeletonGraph::from_parents(&[-1, 0], 0).unwrap();
        let one = Tensor::scalar(1.0).reshape(&[1, 1]).unwrap();
        let f = Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap();
        let out = graph_conv_apply(&g, &f, &[one.clone(), one.clone(), one]).unwrap();
        assert_eq!(out.data(), &[4.0, 4.0]);
    }

    #[test]
    fn disconnected_topology_is_rejected() {
        assert!(SkeletonGraph::from_parents(&[-1, 0, -1], 0).is_err());
    }
}
