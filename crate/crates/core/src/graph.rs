//! Undirected token and patch graphs for graph attention.

use crate::error::{Error, Result};

/// Symmetric adjacency. Self-loops are implicit and never stored in `neighbors`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModalityGraph {
    neighbors: Vec<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Connectivity {
    /// Up, down, left, right.
    #[default]
    Four,
    /// Four plus diagonals.
    Eight,
}

impl Connectivity {
    pub fn from_count(count: u32) -> Result<Self> {
        match count {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::Config(format!("grid connectivity must be 4 or 8, got {other}"))),
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

impl ModalityGraph {
    fn from_pairs(node_count: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut neighbors = vec![Vec::new(); node_count];
        for (i, j) in pairs {
            if i != j {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        ModalityGraph { neighbors }
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    /// N(i), sorted, excluding `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Undirected edges as `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Row-major `k×k` mask of `N(i) ∪ {i}`.
    pub fn attention_mask(&self) -> Vec<bool> {
        let k = self.node_count();
        let mut mask = vec![false; k * k];
        for (i, ns) in self.neighbors.iter().enumerate() {
            mask[i * k + i] = true;
            for &j in ns {
                mask[i * k + j] = true;
            }
        }
        mask
    }
}

/// Dependency graph over `n` tokens. Edge direction and duplicates are discarded.
pub fn build_text_graph(edges: &[(usize, usize)], n: usize) -> Result<ModalityGraph> {
    if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i >= n || j >= n) {
        return Err(Error::Contract(format!("edge ({i},{j}) out of range for {n} nodes")));
    }
    Ok(ModalityGraph::from_pairs(n, edges.iter().copied()))
}

/// `p×p` patch lattice in row-major node order.
pub fn build_grid_graph(p: usize, connectivity: Connectivity) -> Result<ModalityGraph> {
    if p == 0 {
        return Err(Error::Config("grid side must be positive".into()));
    }
    let id = |r: usize, c: usize| r * p + c;
    let mut pairs = Vec::new();
    for r in 0..p {
        for c in 0..p {
            if c + 1 < p {
                pairs.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < p {
                pairs.push((id(r, c), id(r + 1, c)));
            }
            if connectivity == Connectivity::Eight && r + 1 < p {
                if c + 1 < p {
                    pairs.push((id(r, c), id(r + 1, c + 1)));
                }
                if c > 0 {
                    pairs.push((id(r, c), id(r + 1, c - 1)));
                }
            }
        }
    }
    Ok(ModalityGraph::from_pairs(p * p, pairs))
}
