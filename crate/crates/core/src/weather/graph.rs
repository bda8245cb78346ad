//! Station graphs: triangulation edges with the longest ones pruned.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use super::delaunay::{triangle_edges, triangulate};
use crate::error::{GrnnError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub length: f64,
}

/// Undirected station graph; every edge is stored once with `u < v`.
#[derive(Clone, Debug, PartialEq)]
pub struct StationGraph {
    pub num_nodes: usize,
    pub edges: Vec<Edge>,
    /// Longest kept edge length.
    pub threshold: f64,
    /// Edge count before pruning.
    pub total_edges: usize,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Number of edges kept out of `total`: `ceil(keep_frac * total)`.
pub fn kept_count(total: usize, keep_frac: f64) -> usize {
    // guard against 0.95 * 100 = 95.00000000000001
    let x = keep_frac * total as f64;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (k as usize).min(total)
}

/// Keeps the `ceil(keep_frac * |E|)` shortest edges, ties broken by endpoints.
pub fn prune_edges(mut edges: Vec<Edge>, keep_frac: f64) -> Result<(Vec<Edge>, f64)> {
    if !(keep_frac > 0.0 && keep_frac <= 1.0) {
        return Err(GrnnError::InvalidArgument(format!("keep fraction {keep_frac} outside (0, 1]")));
    }
    edges.sort_by(|a, b| a.length.total_cmp(&b.length).then((a.u, a.v).cmp(&(b.u, b.v))));
    edges.truncate(kept_count(edges.len(), keep_frac));
    let threshold = edges.last().map_or(0.0, |e| e.length);
    edges.sort_by_key(|e| (e.u, e.v));
    Ok((edges, threshold))
}

/// Delaunay graph over `points`, pruned to `keep_frac` of its edges.
///
/// Stations sharing a position are merged for the triangulation; each copy is
/// then linked to the first station at that position with a zero-length edge.
pub fn build_graph(points: &[[f64; 2]], keep_frac: f64) -> Result<StationGraph> {
    let mut first_at: HashMap<(u64, u64), usize> = HashMap::new();
    let mut reps = Vec::new();
    let mut rep_of = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let key = (p[0].to_bits(), p[1].to_bits());
        let r = *first_at.entry(key).or_insert_with(|| {
            reps.push(i);
            i
        });
        rep_of.push(r);
    }
    let rep_points: Vec<[f64; 2]> = reps.iter().map(|&i| points[i]).collect();
    let tris = triangulate(&rep_points)?;
    let mut edges: Vec<Edge> = triangle_edges(&tris)
        .into_iter()
        .map(|(a, b)| {
            let (u, v) = (reps[a].min(reps[b]), reps[a].max(reps[b]));
            Edge {
                u,
                v,
                length: dist(points[u], points[v]),
            }
        })
        .collect();
    let duplicates = points.len() - reps.len();
    if duplicates > 0 {
        log::warn!("{duplicates} stations share a position with another station");
        for (i, &r) in rep_of.iter().enumerate() {
            if r != i {
                edges.push(Edge { u: r, v: i, length: 0.0 });
            }
        }
    }
    let total_edges = edges.len();
    let (edges, threshold) = prune_edges(edges, keep_frac)?;
    let g = StationGraph {
        num_nodes: points.len(),
        edges,
        threshold,
        total_edges,
    };
    let comps = g.components();
    if comps > 1 {
        log::warn!("pruned station graph has {comps} connected components");
    }
    Ok(g)
}

impl StationGraph {
    /// Number of connected components.
    pub fn components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.num_nodes).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut count = self.num_nodes;
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.u), find(&mut parent, e.v));
            if a != b {
                parent[a] = b;
                count -= 1;
            }
        }
        count
    }

    /// Endpoint pairs, each once.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.u, e.v)).collect()
    }

    /// Both directions of every edge.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        self.edges.iter().flat_map(|e| [(e.u, e.v), (e.v, e.u)]).collect()
    }

    /// Edge list: a `# nodes N threshold X total M` line, then `u v length`.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# nodes {} threshold {:?} total {}",
            self.num_nodes, self.threshold, self.total_edges
        )?;
        for e in &self.edges {
            writeln!(w, "{} {} {:?}", e.u, e.v, e.length)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let bad = |line: usize, msg: &str| GrnnError::format(path, format!("line {line}: {msg}"));
        let mut lines = r.lines().enumerate();
        let header = match lines.next() {
            Some((_, l)) => l.map_err(|e| GrnnError::io(path, e))?,
            None => return Err(bad(1, "empty file")),
        };
        let h: Vec<&str> = header.split_whitespace().collect();
        let (num_nodes, threshold, total_edges) = match h.as_slice() {
            ["#", "nodes", n, "threshold", t, "total", m] => (
                n.parse().map_err(|_| bad(1, "node count"))?,
                t.parse().map_err(|_| bad(1, "threshold"))?,
                m.parse().map_err(|_| bad(1, "edge total"))?,
            ),
            _ => return Err(bad(1, "expected header")),
        };
        let mut edges = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| GrnnError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let [u, v, len] = f.as_slice() else {
                return Err(bad(i + 1, "expected `u v length`"));
            };
            let e = Edge {
                u: u.parse().map_err(|_| bad(i + 1, "endpoint"))?,
                v: v.parse().map_err(|_| bad(i + 1, "endpoint"))?,
                length: len.parse().map_err(|_| bad(i + 1, "length"))?,
            };
            if e.u >= e.v || e.v >= num_nodes {
                return Err(bad(i + 1, "endpoints must satisfy u < v < nodes"));
            }
            edges.push(e);
        }
        Ok(StationGraph {
            num_nodes,
            edges,
            threshold,
            total_edges,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| GrnnError::io(path, e))?;
        self.write(std::io::BufWriter::new(f)).map_err(|e| GrnnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| GrnnError::io(path, e))?;
        Self::read(std::io::BufReader::new(f), path)
    }
}
