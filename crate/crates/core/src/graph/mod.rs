//! Exphormer graph on a molecular grid: local radial/angular edges,
//! permutation-model expander edges and global reservoir vertices.

mod edges;
mod spectral;

use serde::{Deserialize, Serialize};

pub use edges::{
    angular_edges, expander_edges, expander_multigraph, global_edges, haversine, mean_angular_degree, radial_edges,
    shell_angular_pairs, Pair,
};
pub use spectral::{spectral_gap, spectral_gap_dense, Adjacency, SpectralReport};

use crate::error::{Error, Result};
use crate::geometry::distance;
use crate::grid::MolecularGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Local = 0,
    Expander = 1,
    Global = 2,
}

impl EdgeKind {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
    /// Euclidean length in Bohr; zero for global edges.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub alpha: f64,
    pub expander_degree: usize,
    pub n_global: usize,
    pub seed: u64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { alpha: 0.5, expander_degree: 6, n_global: 10, seed: 0 }
    }
}

/// Undirected graph, every edge stored once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectronGraph {
    pub n_grid: usize,
    pub n_global: usize,
    pub expander_degree: usize,
    pub alpha: f64,
    pub seed: u64,
    pub edges: Vec<Edge>,
}

/// Directed message list: each undirected edge in both directions, sorted
/// by destination then source.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageGraph {
    pub n_vertices: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub kind: Vec<EdgeKind>,
    pub distance: Vec<f64>,
}

impl MessageGraph {
    pub fn n_messages(&self) -> usize {
        self.src.len()
    }

    /// In-degree per vertex.
    pub fn in_degree(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_vertices];
        self.dst.iter().for_each(|&i| d[i] += 1);
        d
    }

    /// Restricts to messages of the given kinds; vertex set unchanged.
    pub fn filter(&self, keep: impl Fn(EdgeKind) -> bool) -> MessageGraph {
        let idx: Vec<usize> = (0..self.n_messages()).filter(|&m| keep(self.kind[m])).collect();
        MessageGraph {
            n_vertices: self.n_vertices,
            src: idx.iter().map(|&m| self.src[m]).collect(),
            dst: idx.iter().map(|&m| self.dst[m]).collect(),
            kind: idx.iter().map(|&m| self.kind[m]).collect(),
            distance: idx.iter().map(|&m| self.distance[m]).collect(),
        }
    }
}

impl ElectronGraph {
    pub fn n_vertices(&self) -> usize {
        self.n_grid + self.n_global
    }

    pub fn count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    pub fn pairs(&self, kind: EdgeKind) -> Vec<Pair> {
        self.edges.iter().filter(|e| e.kind == kind).map(|e| (e.src, e.dst)).collect()
    }

    pub fn messages(&self) -> MessageGraph {
        let mut m: Vec<(usize, usize, EdgeKind, f64)> = Vec::with_capacity(2 * self.edges.len());
        for e in &self.edges {
            m.push((e.src, e.dst, e.kind, e.distance));
            m.push((e.dst, e.src, e.kind, e.distance));
        }
        m.sort_by(|a, b| (a.1, a.0, a.2).cmp(&(b.1, b.0, b.2)));
        MessageGraph {
            n_vertices: self.n_vertices(),
            src: m.iter().map(|x| x.0).collect(),
            dst: m.iter().map(|x| x.1).collect(),
            kind: m.iter().map(|x| x.2).collect(),
            distance: m.iter().map(|x| x.3).collect(),
        }
    }

    /// Checks the structural invariants of a loaded or assembled graph.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.edges {
            if e.src == e.dst {
                return Err(Error::Config(format!("self-loop at vertex {}", e.src)));
            }
            let (a, b) = (e.src.min(e.dst), e.src.max(e.dst));
            if b >= self.n_vertices() {
                return Err(Error::Config(format!("edge ({a},{b}) exceeds {} vertices", self.n_vertices())));
            }
            if e.kind != EdgeKind::Global && b >= self.n_grid {
                return Err(Error::Config(format!("{:?} edge touches global vertex {b}", e.kind)));
            }
            if !seen.insert((a, b, e.kind)) {
                return Err(Error::Config(format!("duplicate {:?} edge ({a},{b})", e.kind)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: ElectronGraph = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }
}

/// Union of local, expander and global edges on `grid`.
pub fn assemble(grid: &MolecularGrid, cfg: &GraphConfig) -> Result<ElectronGraph> {
    let n = grid.len();
    let pts = &grid.points;
    let mut local: Vec<Pair> = radial_edges(grid);
    local.extend(angular_edges(grid, cfg.alpha)?);
    let expander = expander_edges(n, cfg.expander_degree, cfg.seed)?;
    let mut edges = Vec::with_capacity(local.len() + expander.len() + cfg.n_global * n);
    let mut push = |pairs: Vec<Pair>, kind: EdgeKind| {
        for (a, b) in pairs {
            let distance = if kind == EdgeKind::Global { 0.0 } else { distance(&pts[a], &pts[b]) };
            edges.push(Edge { src: a, dst: b, kind, distance });
        }
    };
    push(local, EdgeKind::Local);
    push(expander, EdgeKind::Expander);
    push(global_edges(n, cfg.n_global), EdgeKind::Global);
    Ok(ElectronGraph {
        n_grid: n,
        n_global: cfg.n_global,
        expander_degree: cfg.expander_degree,
        alpha: cfg.alpha,
        seed: cfg.seed,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;
    use crate::grid::{build_grid, GridPreset};

    fn h2_coarse() -> MolecularGrid {
        build_grid(&Geometry::h2(1.4), &GridPreset::Coarse).unwrap()
    }

    #[test]
    fn assembled_graph_is_valid_and_typed() {
        let g = assemble(&h2_coarse(), &GraphConfig::default()).unwrap();
        g.validate().unwrap();
        assert_eq!(g.count(EdgeKind::Global), 10 * 1040);
        assert!(g.edges.iter().filter(|e| e.kind == EdgeKind::Global).all(|e| e.distance == 0.0 && e.dst >= 1040));
        assert!(g.edges.iter().filter(|e| e.kind != EdgeKind::Global).all(|e| e.distance > 0.0));
    }

    #[test]
    fn edge_count_stable_across_seeds() {
        let grid = h2_coarse();
        let counts: Vec<f64> = (0..5)
            .map(|s| assemble(&grid, &GraphConfig { seed: s, ..Default::default() }).unwrap().edges.len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / 5.0;
        assert!(counts.iter().all(|c| (c - mean).abs() / mean < 0.01), "{counts:?}");
    }

    #[test]
    fn local_only_configuration() {
        let g = assemble(&h2_coarse(), &GraphConfig { expander_degree: 0, n_global: 0, ..Default::default() }).unwrap();
        assert!(g.edges.iter().all(|e| e.kind == EdgeKind::Local));
    }

    #[test]
    fn messages_are_symmetric_and_sorted() {
        let g = assemble(&h2_coarse(), &GraphConfig::default()).unwrap();
        let m = g.messages();
        assert_eq!(m.n_messages(), 2 * g.edges.len());
        assert!(m.dst.windows(2).all(|w| w[0] <= w[1]));
        let mut fwd: Vec<_> = (0..m.n_messages()).map(|k| (m.src[k], m.dst[k], m.kind[k])).collect();
        let mut rev: Vec<_> = (0..m.n_messages()).map(|k| (m.dst[k], m.src[k], m.kind[k])).collect();
        fwd.sort();
        rev.sort();
        assert_eq!(fwd, rev);
        let deg = m.in_degree();
        assert!(deg[1040..].iter().all(|&d| d == 1040));
    }

    #[test]
    fn json_round_trip_and_rejection() {
        let g = assemble(&h2_coarse(), &GraphConfig { n_global: 2, ..Default::default() }).unwrap();
        let back = ElectronGraph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(g, back);
        let mut bad = g.clone();
        bad.edges.push(bad.edges[0]);
        assert!(ElectronGraph::from_json(&bad.to_json().unwrap()).is_err());
    }

    #[test]
    fn edges_scale_linearly_with_chain_length() {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for n in [1, 2, 4] {
            let grid = build_grid(&Geometry::chain(n, 1.4), &GridPreset::Coarse).unwrap();
            xs.push(grid.len() as f64);
            ys.push(assemble(&grid, &GraphConfig::default()).unwrap().edges.len() as f64);
        }
        assert!(crate::stats::r_squared(&xs, &ys) > 0.999);
    }
}
