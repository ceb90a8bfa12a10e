//! Scale assignment by repeated Guillard coarsening.
//!
//! Each round keeps a maximal independent set of the current level graph
//! (greedy, ascending node index) and drops the rest. Nodes dropped in the
//! first round form the finest scale; the survivors of the last round form
//! scale 1, the coarsest and smallest set, which is generated first.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::meshgraph::MeshGraph;

#[derive(Debug, Error, PartialEq)]
pub enum HierarchyError {
    #[error("level graph has no nodes")]
    EmptyLevel,
    #[error("number of scales must be at least 1")]
    ZeroScales,
    #[error("graph with {nodes} nodes cannot be split into {scales} nonempty scales (scale {empty} is empty)")]
    Insufficient { nodes: usize, scales: usize, empty: usize },
    #[error("edge ({0}, {1}) is outside the level")]
    BadEdge(usize, usize),
}

/// Coarse-to-fine node partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleHierarchy {
    num_scales: usize,
    /// 1-based scale of every node; 1 is the coarsest.
    scales: Vec<usize>,
    /// `partitions[k - 1]` lists the nodes of scale `k` in ascending order.
    partitions: Vec<Vec<usize>>,
    /// Node set of every coarsening level, in original node ids; level 0 is
    /// the full mesh.
    level_nodes: Vec<Vec<usize>>,
    /// Directed edges of every level, in original node ids.
    level_edges: Vec<Vec<(usize, usize)>>,
    /// Kept mask of every coarsening round, indexed like `level_nodes[round]`.
    kept_masks: Vec<Vec<bool>>,
}

fn incoming_lists(edges: &[(usize, usize)], n: usize) -> Result<Vec<Vec<usize>>, HierarchyError> {
    let mut inc = vec![Vec::new(); n];
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(HierarchyError::BadEdge(i, j));
        }
        inc[j].push(i);
    }
    Ok(inc)
}

/// Greedy coarsening mask: visiting nodes in ascending order, a node that is
/// still unmasked is kept and masks all of its incoming neighbours.
pub fn guillard_mask(level_edges: &[(usize, usize)], num_nodes: usize) -> Result<Vec<bool>, HierarchyError> {
    if num_nodes == 0 {
        return Err(HierarchyError::EmptyLevel);
    }
    let incoming = incoming_lists(level_edges, num_nodes)?;
    let mut mask = vec![true; num_nodes];
    for i in 0..num_nodes {
        if mask[i] {
            for &j in &incoming[i] {
                if j != i {
                    mask[j] = false;
                }
            }
        }
    }
    Ok(mask)
}

/// Connects two kept nodes when they are at most two hops apart in the
/// current level. Indices stay in the current level's numbering.
pub fn coarsen_edges(level_edges: &[(usize, usize)], kept: &[bool]) -> Vec<(usize, usize)> {
    let n = kept.len();
    let mut nbrs = vec![BTreeSet::new(); n];
    for &(i, j) in level_edges {
        nbrs[i].insert(j);
        nbrs[j].insert(i);
    }
    let mut out = BTreeSet::new();
    for u in (0..n).filter(|&u| kept[u]) {
        for &w in &nbrs[u] {
            if kept[w] && w != u {
                out.insert((u, w));
            }
            for &v in &nbrs[w] {
                if kept[v] && v != u {
                    out.insert((u, v));
                }
            }
        }
    }
    out.into_iter().collect()
}

impl ScaleHierarchy {
    /// Runs `num_scales - 1` coarsening rounds over `graph`.
    pub fn build(graph: &MeshGraph, num_scales: usize) -> Result<Self, HierarchyError> {
        Self::from_edges(graph.edges(), graph.num_nodes(), num_scales)
    }

    pub fn from_edges(edges: &[(usize, usize)], num_nodes: usize, num_scales: usize) -> Result<Self, HierarchyError> {
        if num_scales == 0 {
            return Err(HierarchyError::ZeroScales);
        }
        if num_nodes == 0 {
            return Err(HierarchyError::EmptyLevel);
        }
        // Label nodes dropped in round k with k (1-based); survivors get K.
        let mut label = vec![num_scales; num_nodes];
        let mut level_nodes = vec![(0..num_nodes).collect::<Vec<_>>()];
        let mut level_edges = vec![edges.to_vec()];
        let mut local_edges = edges.to_vec();
        let mut kept_masks = Vec::new();
        for round in 1..num_scales {
            let nodes = level_nodes.last().expect("nonempty").clone();
            let mask = guillard_mask(&local_edges, nodes.len())?;
            for (local, &global) in nodes.iter().enumerate() {
                if !mask[local] {
                    label[global] = round;
                }
            }
            let next_local = coarsen_edges(&local_edges, &mask);
            let mut remap = vec![usize::MAX; nodes.len()];
            let mut next_nodes = Vec::new();
            for (local, &keep) in mask.iter().enumerate() {
                if keep {
                    remap[local] = next_nodes.len();
                    next_nodes.push(nodes[local]);
                }
            }
            local_edges = next_local.iter().map(|&(a, b)| (remap[a], remap[b])).collect();
            level_edges.push(next_local.iter().map(|&(a, b)| (nodes[a], nodes[b])).collect());
            level_nodes.push(next_nodes);
            kept_masks.push(mask);
        }
        let scales: Vec<usize> = label.iter().map(|l| num_scales + 1 - l).collect();
        let mut partitions = vec![Vec::new(); num_scales];
        for (i, &s) in scales.iter().enumerate() {
            partitions[s - 1].push(i);
        }
        if let Some(k) = partitions.iter().position(|p| p.is_empty()) {
            return Err(HierarchyError::Insufficient {
                nodes: num_nodes,
                scales: num_scales,
                empty: k + 1,
            });
        }
        Ok(Self {
            num_scales,
            scales,
            partitions,
            level_nodes,
            level_edges,
            kept_masks,
        })
    }

    pub fn num_scales(&self) -> usize {
        self.num_scales
    }

    pub fn num_nodes(&self) -> usize {
        self.scales.len()
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }

    pub fn scale_of(&self, node: usize) -> usize {
        self.scales[node]
    }

    /// Nodes of scale `k` (1-based).
    pub fn partition(&self, k: usize) -> &[usize] {
        &self.partitions[k - 1]
    }

    pub fn partitions(&self) -> &[Vec<usize>] {
        &self.partitions
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.partitions.iter().map(|p| p.len()).collect()
    }

    /// Nodes of scales `1..=k`, concatenated coarse to fine.
    pub fn prefix(&self, k: usize) -> Vec<usize> {
        self.partitions[..k].iter().flatten().copied().collect()
    }

    pub fn level_nodes(&self) -> &[Vec<usize>] {
        &self.level_nodes
    }

    pub fn level_edges(&self) -> &[Vec<(usize, usize)>] {
        &self.level_edges
    }

    pub fn kept_masks(&self) -> &[Vec<bool>] {
        &self.kept_masks
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.partitions.windows(2).all(|w| w[0].len() < w[1].len())
    }

    /// One-hot scale encoding, `num_nodes x K`.
    pub fn scale_onehot(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.num_nodes(), self.num_scales));
        for (i, &s) in self.scales.iter().enumerate() {
            out[[i, s - 1]] = 1.0;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bidir(und: &[(usize, usize)]) -> Vec<(usize, usize)> {
        und.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect()
    }

    #[test]
    fn path_of_four_keeps_even_nodes() {
        let e = bidir(&[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(guillard_mask(&e, 4).unwrap(), vec![true, false, true, false]);
    }

    #[test]
    fn single_node_is_kept() {
        assert_eq!(guillard_mask(&[], 1).unwrap(), vec![true]);
        assert_eq!(guillard_mask(&[], 0), Err(HierarchyError::EmptyLevel));
    }

    #[test]
    fn triangle_keeps_first_node_only() {
        let e = bidir(&[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(guillard_mask(&e, 3).unwrap(), vec![true, false, false]);
        assert!(coarsen_edges(&e, &[true, false, false]).is_empty());
    }

    #[test]
    fn two_hop_closure_on_path() {
        let e = bidir(&[(0, 1), (1, 2), (2, 3)]);
        let kept = [true, false, true, false];
        assert_eq!(coarsen_edges(&e, &kept), vec![(0, 2), (2, 0)]);
    }

    #[test]
    fn distant_kept_nodes_stay_disconnected() {
        // 0-1-2-3-4 with 0 and 4 kept: three hops apart.
        let e = bidir(&[(0, 1), (1, 2), (2, 3), (3, 4)]);
        assert!(coarsen_edges(&e, &[true, false, false, false, true]).is_empty());
    }

    #[test]
    fn path_of_four_two_scales() {
        let e = bidir(&[(0, 1), (1, 2), (2, 3)]);
        let h = ScaleHierarchy::from_edges(&e, 4, 2).unwrap();
        assert_eq!(h.partition(1), &[0, 2]);
        assert_eq!(h.partition(2), &[1, 3]);
        assert_eq!(h.scales(), &[1, 2, 1, 2]);
    }

    #[test]
    fn single_scale_is_trivial() {
        let e = bidir(&[(0, 1), (1, 2)]);
        let h = ScaleHierarchy::from_edges(&e, 3, 1).unwrap();
        assert_eq!(h.partition(1), &[0, 1, 2]);
        assert!(h.scale_onehot().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn too_many_scales_fails() {
        let e = bidir(&[(0, 1)]);
        assert!(matches!(
            ScaleHierarchy::from_edges(&e, 2, 3),
            Err(HierarchyError::Insufficient { .. })
        ));
    }

    #[test]
    fn onehot_rows() {
        let e = bidir(&[(0, 1), (1, 2), (2, 3)]);
        let h = ScaleHierarchy::from_edges(&e, 4, 2).unwrap();
        let oh = h.scale_onehot();
        assert_eq!(oh.row(0).to_vec(), vec![1.0, 0.0]);
        for r in oh.rows() {
            assert_eq!(r.sum(), 1.0);
        }
    }
}
