//! Graph-structured datasets: nodes, equivalence classes, relation graphs and
//! per-node time series.
//!
//! An edge `(u, v)` in relation `k` means `v` is a neighbor of `u` under `k`:
//! `u` summarizes `v`'s hidden state, so information flows from `v` to `u`.
//! Edges are directed; undirected graphs are stored as edge pairs.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GrnnError, Result};
use crate::ndmath::Tensor;

/// One equivalence class: its members share cell parameters and dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub members: Vec<usize>,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Multiplier of this class's per-prediction losses in the aggregate loss.
    #[serde(default = "one")]
    pub loss_weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub num_nodes: usize,
    pub num_steps: usize,
    pub classes: Vec<ClassSpec>,
    /// Per relation, directed edges `(u, v)` with `v` in `N(u, k)`.
    pub relations: Vec<Vec<(usize, usize)>>,
    /// Per node, `[T x p]` inputs.
    pub inputs: Vec<Tensor>,
    /// Per node, `[T x q]` targets.
    pub targets: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    PartitionOverlap { node: usize, classes: Vec<usize> },
    UnassignedNode(usize),
    MemberOutOfRange { class: usize, node: usize },
    DanglingEndpoint { relation: usize, edge: (usize, usize) },
    DuplicateEdge { relation: usize, edge: (usize, usize) },
    ZeroSteps,
    ZeroDim { class: usize },
    SeriesCount { what: &'static str, found: usize },
    SeriesShape { what: &'static str, node: usize, found: Vec<usize>, expected: Vec<usize> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::PartitionOverlap { node, classes } => {
                write!(f, "partition overlap: node {node} in classes {classes:?}")
            }
            Violation::UnassignedNode(u) => write!(f, "partition gap: node {u} has no class"),
            Violation::MemberOutOfRange { class, node } => {
                write!(f, "class {class} lists node {node} outside V")
            }
            Violation::DanglingEndpoint { relation, edge } => {
                write!(f, "dangling endpoint: edge {edge:?} in relation {relation}")
            }
            Violation::DuplicateEdge { relation, edge } => {
                write!(f, "duplicate edge {edge:?} in relation {relation}")
            }
            Violation::ZeroSteps => write!(f, "scenario has no time steps"),
            Violation::ZeroDim { class } => write!(f, "class {class} has a zero dimension"),
            Violation::SeriesCount { what, found } => {
                write!(f, "{found} {what} series, expected one per node")
            }
            Violation::SeriesShape {
                what,
                node,
                found,
                expected,
            } => write!(f, "{what} of node {node} has shape {found:?}, expected {expected:?}"),
        }
    }
}

impl Scenario {
    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Checks every structural constraint and returns all violations found.
    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let mut v = Vec::new();
        if self.num_steps == 0 {
            v.push(Violation::ZeroSteps);
        }
        let mut owners: Vec<Vec<usize>> = vec![Vec::new(); self.num_nodes];
        for (c, class) in self.classes.iter().enumerate() {
            if class.input_dim == 0 || class.output_dim == 0 {
                v.push(Violation::ZeroDim { class: c });
            }
            for &u in &class.members {
                match owners.get_mut(u) {
                    Some(o) => o.push(c),
                    None => v.push(Violation::MemberOutOfRange { class: c, node: u }),
                }
            }
        }
        for (u, o) in owners.iter().enumerate() {
            match o.len() {
                0 => v.push(Violation::UnassignedNode(u)),
                1 => {}
                _ => {
                    let mut classes = o.clone();
                    classes.dedup();
                    v.push(Violation::PartitionOverlap { node: u, classes });
                }
            }
        }
        for (k, edges) in self.relations.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for &(a, b) in edges {
                if a >= self.num_nodes || b >= self.num_nodes {
                    v.push(Violation::DanglingEndpoint {
                        relation: k,
                        edge: (a, b),
                    });
                } else if !seen.insert((a, b)) {
                    v.push(Violation::DuplicateEdge {
                        relation: k,
                        edge: (a, b),
                    });
                }
            }
        }
        for (what, series) in [("input", &self.inputs), ("target", &self.targets)] {
            if series.len() != self.num_nodes {
                v.push(Violation::SeriesCount {
                    what,
                    found: series.len(),
                });
                continue;
            }
            for (u, o) in owners.iter().enumerate() {
                let [c] = o[..] else { continue };
                let class = &self.classes[c];
                let width = if what == "input" {
                    class.input_dim
                } else {
                    class.output_dim
                };
                let expected = vec![self.num_steps, width];
                if series[u].shape() != expected.as_slice() {
                    v.push(Violation::SeriesShape {
                        what,
                        node: u,
                        found: series[u].shape().to_vec(),
                        expected,
                    });
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    /// `validate` folded into a single error.
    pub fn ensure_valid(&self) -> Result<()> {
        self.validate().map_err(|vs| {
            GrnnError::InvalidScenario(
                vs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
            )
        })
    }

    /// Node-to-class lookup table. Assumes a valid partition.
    pub fn class_table(&self) -> Vec<usize> {
        let mut table = vec![usize::MAX; self.num_nodes];
        for (c, class) in self.classes.iter().enumerate() {
            for &u in &class.members {
                if u < self.num_nodes {
                    table[u] = c;
                }
            }
        }
        table
    }

    /// The unique class containing `u`.
    pub fn class_of(&self, u: usize) -> Result<usize> {
        if u >= self.num_nodes {
            return Err(GrnnError::OutOfRange {
                what: "node",
                index: u,
                limit: self.num_nodes,
            });
        }
        self.classes
            .iter()
            .position(|c| c.members.contains(&u))
            .ok_or_else(|| GrnnError::InvalidScenario(format!("node {u} has no class")))
    }

    pub fn input(&self, u: usize, t: usize) -> &[f64] {
        self.inputs[u].row(t)
    }

    pub fn target(&self, u: usize, t: usize) -> &[f64] {
        self.targets[u].row(t)
    }

    /// Hop distance `dist(v -> u)` from every node `v` to `u` over the union of
    /// all relations, following the direction information flows.
    pub fn distances_to(&self, u: usize) -> Vec<Option<usize>> {
        let index = NeighborIndex::build(self);
        let mut dist = vec![None; self.num_nodes];
        dist[u] = Some(0);
        let mut queue = VecDeque::from([u]);
        while let Some(w) = queue.pop_front() {
            let dw = dist[w].expect("queued nodes have a distance");
            for k in 0..index.num_relations() {
                for &v in index.neighbors_unchecked(w, k) {
                    if dist[v].is_none() {
                        dist[v] = Some(dw + 1);
                        queue.push_back(v);
                    }
                }
            }
        }
        dist
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::save(self, dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        io::load(dir)
    }

    /// The same scenario with node `u` renamed to `perm[u]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Scenario> {
        let n = self.num_nodes;
        let mut seen = vec![false; n];
        if perm.len() != n || !perm.iter().all(|&p| p < n && !std::mem::replace(&mut seen[p], true)) {
            return Err(GrnnError::InvalidArgument(format!("{perm:?} is not a permutation of 0..{n}")));
        }
        let mut inputs = self.inputs.clone();
        let mut targets = self.targets.clone();
        for u in 0..n {
            inputs[perm[u]] = self.inputs[u].clone();
            targets[perm[u]] = self.targets[u].clone();
        }
        Ok(Scenario {
            num_nodes: n,
            num_steps: self.num_steps,
            classes: self
                .classes
                .iter()
                .map(|c| ClassSpec {
                    members: c.members.iter().map(|&u| perm[u]).collect(),
                    ..c.clone()
                })
                .collect(),
            relations: self
                .relations
                .iter()
                .map(|r| r.iter().map(|&(a, b)| (perm[a], perm[b])).collect())
                .collect(),
            inputs,
            targets,
        })
    }
}

/// Sorted, duplicate-free in-neighbor lists per relation and node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborIndex {
    lists: Vec<Vec<Vec<usize>>>,
}

impl NeighborIndex {
    pub fn build(s: &Scenario) -> Self {
        let lists = s
            .relations
            .iter()
            .map(|edges| {
                let mut per_node = vec![Vec::new(); s.num_nodes];
                for &(a, b) in edges {
                    if a < s.num_nodes && b < s.num_nodes {
                        per_node[a].push(b);
                    }
                }
                for l in &mut per_node {
                    l.sort_unstable();
                    l.dedup();
                }
                per_node
            })
            .collect();
        NeighborIndex { lists }
    }

    pub fn num_relations(&self) -> usize {
        self.lists.len()
    }

    /// `N(u, k)`; `k` is 0-based.
    pub fn neighbors(&self, u: usize, k: usize) -> Result<&[usize]> {
        let rel = self.lists.get(k).ok_or(GrnnError::OutOfRange {
            what: "relation",
            index: k,
            limit: self.lists.len(),
        })?;
        rel.get(u).map(Vec::as_slice).ok_or(GrnnError::OutOfRange {
            what: "node",
            index: u,
            limit: rel.len(),
        })
    }

    pub(crate) fn neighbors_unchecked(&self, u: usize, k: usize) -> &[usize] {
        &self.lists[k][u]
    }

    /// True if every relation is symmetric.
    pub fn is_symmetric(&self) -> bool {
        self.lists.iter().all(|rel| {
            rel.iter()
                .enumerate()
                .all(|(u, ns)| ns.iter().all(|&v| rel[v].binary_search(&u).is_ok()))
        })
    }
}

/// Incremental construction helper.
#[derive(Clone, Debug)]
pub struct ScenarioBuilder {
    num_nodes: usize,
    num_steps: usize,
    classes: Vec<ClassSpec>,
    relations: Vec<Vec<(usize, usize)>>,
    undirected: Vec<bool>,
}

impl ScenarioBuilder {
    pub fn new(num_nodes: usize, num_steps: usize) -> Self {
        ScenarioBuilder {
            num_nodes,
            num_steps,
            classes: Vec::new(),
            relations: Vec::new(),
            undirected: Vec::new(),
        }
    }

    pub fn class(mut self, members: Vec<usize>, input_dim: usize, output_dim: usize) -> Self {
        self.classes.push(ClassSpec {
            members,
            input_dim,
            output_dim,
            loss_weight: 1.0,
        });
        self
    }

    pub fn weighted_class(
        mut self,
        members: Vec<usize>,
        input_dim: usize,
        output_dim: usize,
        loss_weight: f64,
    ) -> Self {
        self.classes.push(ClassSpec {
            members,
            input_dim,
            output_dim,
            loss_weight,
        });
        self
    }

    /// Adds a directed relation; returns its index through `self.relations.len() - 1`.
    pub fn directed(mut self, edges: Vec<(usize, usize)>) -> Self {
        self.relations.push(edges);
        self.undirected.push(false);
        self
    }

    /// Adds a relation with both directions of every listed pair.
    pub fn undirected(mut self, pairs: &[(usize, usize)]) -> Self {
        let mut edges = Vec::with_capacity(pairs.len() * 2);
        let mut seen = BTreeSet::new();
        for &(a, b) in pairs {
            for e in [(a, b), (b, a)] {
                if seen.insert(e) {
                    edges.push(e);
                }
            }
        }
        self.relations.push(edges);
        self.undirected.push(true);
        self
    }

    /// Attaches series and validates.
    pub fn build(self, inputs: Vec<Tensor>, targets: Vec<Tensor>) -> Result<Scenario> {
        let s = Scenario {
            num_nodes: self.num_nodes,
            num_steps: self.num_steps,
            classes: self.classes,
            relations: self.relations,
            inputs,
            targets,
        };
        s.ensure_valid()?;
        let index = NeighborIndex::build(&s);
        for (k, &und) in self.undirected.iter().enumerate() {
            if und {
                let rel = &index.lists[k];
                let symmetric = rel
                    .iter()
                    .enumerate()
                    .all(|(u, ns)| ns.iter().all(|&v| rel[v].binary_search(&u).is_ok()));
                assert!(symmetric, "undirected relation {k} is not symmetric");
            }
        }
        Ok(s)
    }
}

mod io {
    use super::*;

    const FORMAT: &str = "grnn-scenario";
    const VERSION: u32 = 1;

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Header {
        format: String,
        version: u32,
        num_nodes: usize,
        num_steps: usize,
        num_relations: usize,
        classes: Vec<ClassSpec>,
    }

    fn write(path: &Path, contents: String) -> Result<()> {
        fs::write(path, contents).map_err(|e| GrnnError::io(path, e))
    }

    fn read(path: &Path) -> Result<String> {
        fs::read_to_string(path).map_err(|e| GrnnError::io(path, e))
    }

    pub(super) fn save(s: &Scenario, dir: &Path) -> Result<()> {
        s.ensure_valid()?;
        for sub in ["relations", "series"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| GrnnError::io(&p, e))?;
        }
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            num_nodes: s.num_nodes,
            num_steps: s.num_steps,
            num_relations: s.relations.len(),
            classes: s.classes.clone(),
        };
        let text = toml::to_string_pretty(&header)
            .map_err(|e| GrnnError::format(dir.join("scenario.toml"), e.to_string()))?;
        write(&dir.join("scenario.toml"), text)?;
        for (k, edges) in s.relations.iter().enumerate() {
            let body: String = edges.iter().map(|(a, b)| format!("{a} {b}\n")).collect();
            write(&dir.join("relations").join(format!("rel{k}.edges")), body)?;
        }
        for u in 0..s.num_nodes {
            let (x, y) = (&s.inputs[u], &s.targets[u]);
            let (p, q) = (x.shape()[1], y.shape()[1]);
            let mut out = String::new();
            let header: Vec<String> = (0..p)
                .map(|i| format!("x{i}"))
                .chain((0..q).map(|i| format!("y{i}")))
                .collect();
            out.push_str(&header.join(","));
            out.push('\n');
            for t in 0..s.num_steps {
                let row: Vec<String> = x
                    .row(t)
                    .iter()
                    .chain(y.row(t))
                    .map(|v| format!("{v:?}"))
                    .collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
            write(&dir.join("series").join(format!("node{u}.csv")), out)?;
        }
        Ok(())
    }

    pub(super) fn load(dir: &Path) -> Result<Scenario> {
        let hpath = dir.join("scenario.toml");
        let header: Header =
            toml::from_str(&read(&hpath)?).map_err(|e| GrnnError::format(&hpath, e.to_string()))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(GrnnError::format(
                &hpath,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        let mut relations = Vec::with_capacity(header.num_relations);
        for k in 0..header.num_relations {
            let path = dir.join("relations").join(format!("rel{k}.edges"));
            let mut edges = Vec::new();
            for (ln, line) in read(&path)?.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let mut it = line.split_whitespace().map(str::parse::<usize>);
                match (it.next(), it.next(), it.next()) {
                    (Some(Ok(a)), Some(Ok(b)), None) => edges.push((a, b)),
                    _ => {
                        return Err(GrnnError::format(
                            &path,
                            format!("line {}: expected \"u v\"", ln + 1),
                        ))
                    }
                }
            }
            relations.push(edges);
        }
        let mut dims = vec![(0usize, 0usize); header.num_nodes];
        for c in &header.classes {
            for &u in &c.members {
                if let Some(d) = dims.get_mut(u) {
                    *d = (c.input_dim, c.output_dim);
                }
            }
        }
        let mut inputs = Vec::with_capacity(header.num_nodes);
        let mut targets = Vec::with_capacity(header.num_nodes);
        for (u, &(p, q)) in dims.iter().enumerate() {
            let path = dir.join("series").join(format!("node{u}.csv"));
            let mut rdr = csv::Reader::from_path(&path)
                .map_err(|e| GrnnError::format(&path, e.to_string()))?;
            let mut xs = Vec::with_capacity(header.num_steps * p);
            let mut ys = Vec::with_capacity(header.num_steps * q);
            let mut rows = 0;
            for rec in rdr.records() {
                let rec = rec.map_err(|e| GrnnError::format(&path, e.to_string()))?;
                if rec.len() != p + q {
                    return Err(GrnnError::format(
                        &path,
                        format!("row {rows}: {} fields, expected {}", rec.len(), p + q),
                    ));
                }
                for (i, field) in rec.iter().enumerate() {
                    let v: f64 = field.trim().parse().map_err(|_| {
                        GrnnError::format(&path, format!("row {rows}: bad number {field:?}"))
                    })?;
                    if i < p {
                        xs.push(v)
                    } else {
                        ys.push(v)
                    }
                }
                rows += 1;
            }
            inputs.push(Tensor::new(vec![rows, p], xs)?);
            targets.push(Tensor::new(vec![rows, q], ys)?);
        }
        let s = Scenario {
            num_nodes: header.num_nodes,
            num_steps: header.num_steps,
            classes: header.classes,
            relations,
            inputs,
            targets,
        };
        s.ensure_valid()?;
        Ok(s)
    }
}
