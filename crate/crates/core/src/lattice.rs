//! Interaction graphs with all-pairs distances and ball-growth bookkeeping.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::PauliString;

/// Distance value used for disconnected vertex pairs.
pub const UNREACHABLE: usize = usize::MAX;

/// Effective-dimension parameters `(D, C1, C2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimParams {
    pub d: u32,
    pub c1: f64,
    pub c2: f64,
}

/// Graph description as it appears in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSpec {
    Path { n: usize },
    Ring { n: usize },
    Grid { width: usize, height: usize },
    Edges { n: usize, edges: Vec<(usize, usize)> },
}

impl GraphSpec {
    pub fn build(&self) -> Result<InteractionGraph> {
        match *self {
            GraphSpec::Path { n } => Ok(InteractionGraph::path(n)),
            GraphSpec::Ring { n } => Ok(InteractionGraph::ring(n)),
            GraphSpec::Grid { width, height } => Ok(InteractionGraph::grid(width, height)),
            GraphSpec::Edges { n, ref edges } => {
                InteractionGraph::from_edges(n, edges, DimParams { d: 1, c1: 3.0, c2: 2.0 })
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct InteractionGraph {
    adj: Vec<Vec<usize>>,
    dist: Vec<Vec<usize>>,
    pub dim: DimParams,
}

/// Outcome of [`InteractionGraph::check_dimension`].
#[derive(Clone, Debug, PartialEq)]
pub struct DimensionReport {
    pub holds: bool,
    /// First violating `(vertex, radius)` pair, if any.
    pub witness: Option<(usize, usize)>,
    pub worst_ball_ratio: f64,
    pub worst_shell_ratio: f64,
}

impl InteractionGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)], dim: DimParams) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n {
                return Err(Error::UnknownVertex(a));
            }
            if b >= n {
                return Err(Error::UnknownVertex(b));
            }
            if a != b && !adj[a].contains(&b) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for l in adj.iter_mut() {
            l.sort_unstable();
        }
        let dist = (0..n).map(|s| bfs(&adj, s)).collect();
        Ok(InteractionGraph { adj, dist, dim })
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges, DimParams { d: 1, c1: 3.0, c2: 2.0 }).unwrap()
    }

    pub fn ring(n: usize) -> Self {
        let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        if n > 2 {
            edges.push((n - 1, 0));
        }
        Self::from_edges(n, &edges, DimParams { d: 1, c1: 3.0, c2: 2.0 }).unwrap()
    }

    /// Row-major `width x height` grid; vertex `(x, y)` has index `y * width + x`.
    pub fn grid(width: usize, height: usize) -> Self {
        let mut edges = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let v = y * width + x;
                if x + 1 < width {
                    edges.push((v, v + 1));
                }
                if y + 1 < height {
                    edges.push((v, v + width));
                }
            }
        }
        Self::from_edges(width * height, &edges, DimParams { d: 2, c1: 9.0, c2: 18.0 }).unwrap()
    }

    pub fn with_dim(mut self, dim: DimParams) -> Self {
        self.dim = dim;
        self
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e = Vec::new();
        for (a, l) in self.adj.iter().enumerate() {
            for &b in l {
                if a < b {
                    e.push((a, b));
                }
            }
        }
        e
    }

    pub fn dist(&self, a: usize, b: usize) -> usize {
        self.dist[a][b]
    }

    /// Largest finite distance.
    pub fn diameter(&self) -> usize {
        self.dist
            .iter()
            .flat_map(|r| r.iter().copied())
            .filter(|&d| d != UNREACHABLE)
            .max()
            .unwrap_or(0)
    }

    pub fn ball(&self, v: usize, r: usize) -> Result<BTreeSet<usize>> {
        if v >= self.n() {
            return Err(Error::UnknownVertex(v));
        }
        Ok((0..self.n()).filter(|&u| self.dist[v][u] <= r).collect())
    }

    pub fn enlarge(&self, s: &BTreeSet<usize>, r: usize) -> Result<BTreeSet<usize>> {
        if s.is_empty() {
            return Err(Error::Invalid("enlarge needs a nonempty set".into()));
        }
        if let Some(&v) = s.iter().find(|&&v| v >= self.n()) {
            return Err(Error::UnknownVertex(v));
        }
        Ok((0..self.n())
            .filter(|&u| s.iter().any(|&v| self.dist[v][u] <= r))
            .collect())
    }

    /// Distance from `v` to the nearest vertex of `s`.
    pub fn dist_to_set(&self, v: usize, s: &BTreeSet<usize>) -> usize {
        s.iter().map(|&u| self.dist[v][u]).min().unwrap_or(UNREACHABLE)
    }

    /// Exhaustive check of `|B_r(v)| <= C1 r^D` and `|B_r| - |B_{r-1}| <= C2 r^{D-1}`.
    pub fn check_dimension(&self) -> DimensionReport {
        let DimParams { d, c1, c2 } = self.dim;
        let diam = self.diameter();
        let mut report = DimensionReport {
            holds: true,
            witness: None,
            worst_ball_ratio: 0.0,
            worst_shell_ratio: 0.0,
        };
        for v in 0..self.n() {
            let mut counts = vec![0usize; diam + 1];
            for u in 0..self.n() {
                let du = self.dist[v][u];
                if du <= diam {
                    counts[du] += 1;
                }
            }
            let mut prev = 0usize;
            for r in 0..=diam {
                let ball = prev + counts[r];
                // r = 0 is checked with r^D read as 1 so a single vertex passes with C1 >= 1
                let rf = (r.max(1)) as f64;
                let ball_cap = c1 * rf.powi(d as i32);
                let shell_cap = c2 * rf.powi(d as i32 - 1);
                let br = ball as f64 / ball_cap;
                report.worst_ball_ratio = report.worst_ball_ratio.max(br);
                let mut bad = br > 1.0;
                if r >= 1 {
                    let sr = counts[r] as f64 / shell_cap;
                    report.worst_shell_ratio = report.worst_shell_ratio.max(sr);
                    bad |= sr > 1.0;
                }
                if bad && report.holds {
                    report.holds = false;
                    report.witness = Some((v, r));
                }
                prev = ball;
            }
        }
        report
    }

    /// Maximum pairwise distance over the support of `p`.
    pub fn geometric_diameter(&self, p: &PauliString) -> Result<usize> {
        if p.n() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: p.n(),
            });
        }
        let s = p.support();
        let mut m = 0;
        for (i, &a) in s.iter().enumerate() {
            for &b in &s[i + 1..] {
                m = m.max(self.dist[a][b]);
            }
        }
        Ok(m)
    }

    /// Radius of a vertex set: the smallest `r` with `S ⊆ B_r(v)` for some `v ∈ S`.
    pub fn set_radius(&self, s: &BTreeSet<usize>) -> usize {
        s.iter()
            .map(|&v| s.iter().map(|&u| self.dist[v][u]).max().unwrap_or(0))
            .min()
            .unwrap_or(0)
    }
}

fn bfs(adj: &[Vec<usize>], s: usize) -> Vec<usize> {
    let mut d = vec![UNREACHABLE; adj.len()];
    let mut q = VecDeque::new();
    d[s] = 0;
    q.push_back(s);
    while let Some(u) = q.pop_front() {
        for &w in &adj[u] {
            if d[w] == UNREACHABLE {
                d[w] = d[u] + 1;
                q.push_back(w);
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn path_ball() {
        let g = InteractionGraph::path(5);
        assert_eq!(g.ball(2, 1).unwrap(), set(&[1, 2, 3]));
        assert!(g.ball(7, 1).is_err());
    }

    #[test]
    fn enlarge_zero() {
        let g = InteractionGraph::grid(3, 3);
        assert_eq!(g.enlarge(&set(&[0]), 0).unwrap(), set(&[0]));
        let all: BTreeSet<usize> = (0..9).collect();
        assert_eq!(g.enlarge(&set(&[4]), g.diameter()).unwrap(), all);
    }

    #[test]
    fn grid_ball_size() {
        let g = InteractionGraph::grid(4, 4);
        // center vertex (1,1)
        assert_eq!(g.ball(5, 2).unwrap().len(), 11);
    }

    #[test]
    fn dimension_checks() {
        let g = InteractionGraph::path(20);
        assert!(g.check_dimension().holds);
        let edges: Vec<_> = (1..=10).map(|i| (0, i)).collect();
        let star = InteractionGraph::from_edges(11, &edges, DimParams { d: 1, c1: 2.0, c2: 2.0 }).unwrap();
        let r = star.check_dimension();
        assert!(!r.holds);
        assert_eq!(r.witness, Some((0, 1)));
        let single = InteractionGraph::path(1).with_dim(DimParams { d: 1, c1: 1.0, c2: 1.0 });
        assert!(single.check_dimension().holds);
    }

    #[test]
    fn diameters() {
        let g = InteractionGraph::path(4);
        assert_eq!(g.geometric_diameter(&"XIIX".parse().unwrap()).unwrap(), 3);
        assert_eq!(g.geometric_diameter(&"ZZII".parse().unwrap()).unwrap(), 1);
        assert_eq!(g.geometric_diameter(&"IIII".parse().unwrap()).unwrap(), 0);
    }
}
