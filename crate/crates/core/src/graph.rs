//! Undirected attributed graphs with binary labels and a binary sensitive
//! attribute, plus the on-disk node/edge formats.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{fmt_num, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Canonical unordered node pair with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub u: usize,
    pub v: usize,
}

impl Pair {
    /// Returns `None` for a self-loop.
    pub fn new(a: usize, b: usize) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Pair { u: a, v: b }),
            std::cmp::Ordering::Greater => Some(Pair { u: b, v: a }),
            std::cmp::Ordering::Equal => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipKind {
    Add,
    Remove,
}

impl fmt::Display for FlipKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlipKind::Add => "add",
            FlipKind::Remove => "remove",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeFlip {
    pub u: usize,
    pub v: usize,
    pub kind: FlipKind,
    pub iteration: usize,
}

impl EdgeFlip {
    pub fn pair(&self) -> Pair {
        Pair { u: self.u, v: self.v }
    }
}

/// Label/sensitive pattern of an edge: first letter compares labels, second
/// compares sensitive values (E = equal, D = different).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeGroup {
    EE,
    ED,
    DE,
    DD,
}

impl EdgeGroup {
    pub const ALL: [EdgeGroup; 4] = [EdgeGroup::EE, EdgeGroup::ED, EdgeGroup::DE, EdgeGroup::DD];
}

impl fmt::Display for EdgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Symmetric 0/1 structure: sorted neighbor lists plus a pair set for O(1)
/// membership. Self-loops are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
    pairs: HashSet<Pair>,
}

impl Adjacency {
    pub fn new(n: usize) -> Self {
        Self {
            neighbors: vec![Vec::new(); n],
            pairs: HashSet::new(),
        }
    }

    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = Pair>) -> Self {
        let mut adj = Self::new(n);
        for p in pairs {
            if adj.pairs.insert(p) {
                adj.neighbors[p.u].push(p.v);
                adj.neighbors[p.v].push(p.u);
            }
        }
        for list in &mut adj.neighbors {
            list.sort_unstable();
        }
        adj
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.pairs.len()
    }

    #[inline]
    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        Pair::new(a, b).is_some_and(|p| self.pairs.contains(&p))
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Toggles the pair and returns the kind of flip applied.
    pub fn toggle(&mut self, pair: Pair) -> FlipKind {
        let Pair { u, v } = pair;
        if self.pairs.remove(&pair) {
            let pos = self.neighbors[u].binary_search(&v).expect("symmetric lists");
            self.neighbors[u].remove(pos);
            let pos = self.neighbors[v].binary_search(&u).expect("symmetric lists");
            self.neighbors[v].remove(pos);
            FlipKind::Remove
        } else {
            self.pairs.insert(pair);
            let pos = self.neighbors[u].binary_search(&v).unwrap_err();
            self.neighbors[u].insert(pos, v);
            let pos = self.neighbors[v].binary_search(&u).unwrap_err();
            self.neighbors[v].insert(pos, u);
            FlipKind::Add
        }
    }

    /// All edges in canonical sorted order.
    pub fn edges(&self) -> Vec<Pair> {
        let mut out: Vec<Pair> = self.pairs.iter().copied().collect();
        out.sort_unstable();
        out
    }

    /// Whether flipping `pair` keeps every node with at least one neighbor.
    pub fn flip_keeps_no_singletons(&self, pair: Pair) -> bool {
        !self.pairs.contains(&pair) || (self.degree(pair.u) > 1 && self.degree(pair.v) > 1)
    }

    /// Checks symmetry, sortedness and the absence of self-loops.
    pub fn validate(&self) -> Result<()> {
        let mut count = 0usize;
        for (i, list) in self.neighbors.iter().enumerate() {
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Invariant(format!("neighbor list of {i} not strictly sorted")));
            }
            for &j in list {
                if j == i {
                    return Err(Error::Invariant(format!("self-loop on node {i}")));
                }
                if self.neighbors[j].binary_search(&i).is_err() {
                    return Err(Error::Invariant(format!("asymmetric edge ({i}, {j})")));
                }
                if !self.has_edge(i, j) {
                    return Err(Error::Invariant(format!("edge ({i}, {j}) missing from pair set")));
                }
                count += 1;
            }
        }
        if count != 2 * self.pairs.len() {
            return Err(Error::Invariant("pair set and neighbor lists disagree".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Adjacency,
    features: Matrix,
    labels: Vec<Option<u8>>,
    sensitive: Vec<u8>,
    split: Vec<Split>,
}

impl Graph {
    /// Builds a graph and checks every structural and split invariant.
    pub fn new(
        adjacency: Adjacency,
        features: Matrix,
        labels: Vec<Option<u8>>,
        sensitive: Vec<u8>,
        split: Vec<Split>,
    ) -> Result<Self> {
        let g = Self {
            adjacency,
            features,
            labels,
            sensitive,
            split,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.adjacency.node_count();
        if self.features.rows() != n || self.labels.len() != n || self.sensitive.len() != n || self.split.len() != n {
            return Err(Error::Invariant("per-node arrays disagree on node count".into()));
        }
        self.adjacency.validate()?;
        for i in 0..n {
            if self.sensitive[i] > 1 {
                return Err(Error::Invariant(format!("node {i}: sensitive value must be 0 or 1")));
            }
            match self.labels[i] {
                Some(y) if y > 1 => return Err(Error::Invariant(format!("node {i}: label must be 0, 1 or unlabeled"))),
                None if self.split[i] == Split::Train => {
                    return Err(Error::Invariant(format!("train node {i} is unlabeled")))
                }
                _ => {}
            }
        }
        for s in 0..=1u8 {
            if !self.sensitive.contains(&s) {
                return Err(Error::Invariant(format!("empty sensitive group {s}")));
            }
            let in_test = (0..n).any(|i| self.sensitive[i] == s && self.split[i] == Split::Test);
            if !in_test {
                return Err(Error::Invariant(format!("sensitive group {s} has no test nodes")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.adjacency.node_count()
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.adjacency.edge_count()
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[Option<u8>] {
        &self.labels
    }

    pub fn sensitive(&self) -> &[u8] {
        &self.sensitive
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency.has_edge(a, b)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency.degree(i)
    }

    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| self.split[i] == split).collect()
    }

    /// Train nodes (all labeled by invariant).
    pub fn train_nodes(&self) -> Vec<usize> {
        self.nodes_in(Split::Train)
    }

    pub fn test_nodes(&self) -> Vec<usize> {
        self.nodes_in(Split::Test)
    }

    /// Returns a copy with `(a, b)` toggled.
    pub fn flip_edge(&self, a: usize, b: usize) -> Result<Graph> {
        let pair = Pair::new(a, b).ok_or(Error::SelfLoop(a))?;
        let mut g = self.clone();
        g.adjacency.toggle(pair);
        Ok(g)
    }

    /// Replaces the structure, keeping node data. Used to materialize an
    /// attacked adjacency.
    pub fn with_adjacency(&self, adjacency: Adjacency) -> Result<Graph> {
        if adjacency.node_count() != self.node_count() {
            return Err(Error::Dimension("adjacency node count differs".into()));
        }
        let mut g = self.clone();
        g.adjacency = adjacency;
        Ok(g)
    }

    /// Describes the flip of `(a, b)` in the current structure.
    pub fn describe_flip(&self, a: usize, b: usize, iteration: usize) -> Result<EdgeFlip> {
        let pair = Pair::new(a, b).ok_or(Error::SelfLoop(a))?;
        let kind = if self.adjacency.pairs.contains(&pair) {
            FlipKind::Remove
        } else {
            FlipKind::Add
        };
        Ok(EdgeFlip {
            u: pair.u,
            v: pair.v,
            kind,
            iteration,
        })
    }

    /// False iff `flip` removes an edge whose endpoint would become isolated.
    pub fn check_feasible(&self, flip: &EdgeFlip) -> bool {
        match flip.kind {
            FlipKind::Add => true,
            FlipKind::Remove => self.degree(flip.u) > 1 && self.degree(flip.v) > 1,
        }
    }

    pub fn classify_edge_group(&self, a: usize, b: usize) -> Result<EdgeGroup> {
        let ya = self.labels[a].ok_or(Error::Unlabeled(a))?;
        let yb = self.labels[b].ok_or(Error::Unlabeled(b))?;
        let same_label = ya == yb;
        let same_sens = self.sensitive[a] == self.sensitive[b];
        Ok(match (same_label, same_sens) {
            (true, true) => EdgeGroup::EE,
            (true, false) => EdgeGroup::ED,
            (false, true) => EdgeGroup::DE,
            (false, false) => EdgeGroup::DD,
        })
    }

    /// Writes the nodes CSV and edges TSV.
    pub fn save(&self, nodes_path: &Path, edges_path: &Path) -> Result<()> {
        let mut nodes = String::new();
        nodes.push_str("id,sensitive,label,split");
        for k in 0..self.feature_dim() {
            nodes.push_str(&format!(",f{k}"));
        }
        nodes.push('\n');
        for i in 0..self.node_count() {
            let label = self.labels[i].map_or(-1, i64::from);
            nodes.push_str(&format!("{i},{},{label},{}", self.sensitive[i], self.split[i]));
            for &x in self.features.row(i) {
                nodes.push(',');
                nodes.push_str(&fmt_num(x));
            }
            nodes.push('\n');
        }
        write_atomic(nodes_path, nodes.as_bytes())?;

        let mut edges = String::new();
        for p in self.adjacency.edges() {
            edges.push_str(&format!("{}\t{}\n", p.u, p.v));
        }
        write_atomic(edges_path, edges.as_bytes())
    }
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Loads a graph from a nodes CSV and an edges TSV.
///
/// Reversed and repeated edge lines collapse to one undirected edge;
/// self-loop lines are rejected.
pub fn load_graph(nodes_path: &Path, edges_path: &Path) -> Result<Graph> {
    let nodes_text = fs::read_to_string(nodes_path)?;
    let mut lines = nodes_text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(nodes_path, 1, "missing header"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 4 || cols[..4] != ["id", "sensitive", "label", "split"] {
        return Err(parse_err(
            nodes_path,
            1,
            "header must start with `id,sensitive,label,split`",
        ));
    }
    for (k, c) in cols[4..].iter().enumerate() {
        if *c != format!("f{k}") {
            return Err(parse_err(nodes_path, 1, format!("expected column f{k}, found `{c}`")));
        }
    }
    let d = cols.len() - 4;

    let mut rows: Vec<(usize, u8, Option<u8>, Split, Vec<f64>)> = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 4 {
            return Err(parse_err(
                nodes_path,
                lineno,
                format!("expected {} fields, found {}", d + 4, fields.len()),
            ));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(nodes_path, lineno, format!("bad id `{}`", fields[0])))?;
        let sensitive: u8 = match fields[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(nodes_path, lineno, format!("bad sensitive value `{other}`"))),
        };
        let label = match fields[2] {
            "0" => Some(0),
            "1" => Some(1),
            "-1" => None,
            other => return Err(parse_err(nodes_path, lineno, format!("bad label `{other}`"))),
        };
        let split: Split = fields[3].parse().map_err(|e| parse_err(nodes_path, lineno, e))?;
        let feats = fields[4..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(nodes_path, lineno, format!("bad feature `{s}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((id, sensitive, label, split, feats));
    }

    let n = rows.len();
    let mut seen = vec![false; n];
    let mut features = Matrix::zeros(n, d);
    let mut labels = vec![None; n];
    let mut sensitive = vec![0u8; n];
    let mut split = vec![Split::Train; n];
    for (row_idx, (id, s, y, sp, feats)) in rows.into_iter().enumerate() {
        if id >= n || seen[id] {
            return Err(parse_err(
                nodes_path,
                row_idx + 2,
                format!("node ids must be a permutation of 0..{n}; got {id}"),
            ));
        }
        seen[id] = true;
        features.row_mut(id).copy_from_slice(&feats);
        labels[id] = y;
        sensitive[id] = s;
        split[id] = sp;
    }

    let edges_text = fs::read_to_string(edges_path)?;
    let mut pairs = Vec::new();
    for (idx, line) in edges_text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(edges_path, lineno, "expected `u<TAB>v`"));
        };
        let parse_id = |s: &str| -> Result<usize> {
            let id: usize = s
                .trim()
                .parse()
                .map_err(|_| parse_err(edges_path, lineno, format!("bad node id `{s}`")))?;
            if id >= n {
                return Err(parse_err(edges_path, lineno, format!("node id {id} out of range")));
            }
            Ok(id)
        };
        let (a, b) = (parse_id(a)?, parse_id(b)?);
        let pair = Pair::new(a, b).ok_or_else(|| parse_err(edges_path, lineno, format!("self-loop on node {a}")))?;
        pairs.push(pair);
    }

    Graph::new(Adjacency::from_pairs(n, pairs), features, labels, sensitive, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, edges: &[(usize, usize)]) -> Graph {
        let pairs = edges.iter().map(|&(a, b)| Pair::new(a, b).unwrap());
        let sensitive = (0..n).map(|i| (i % 2) as u8).collect();
        let split = vec![Split::Test; n];
        Graph::new(
            Adjacency::from_pairs(n, pairs),
            Matrix::zeros(n, 1),
            (0..n).map(|i| Some((i / 2 % 2) as u8)).collect(),
            sensitive,
            split,
        )
        .unwrap()
    }

    #[test]
    fn flip_twice_is_identity() {
        let g = tiny(4, &[(0, 1), (1, 2)]);
        let back = g.flip_edge(2, 0).unwrap().flip_edge(0, 2).unwrap();
        assert_eq!(back.adjacency(), g.adjacency());
    }

    #[test]
    fn flip_completes_triangle() {
        let g = tiny(3, &[(0, 1), (1, 2)]);
        let k3 = g.flip_edge(0, 2).unwrap();
        assert_eq!(k3.edge_count(), 3);
        assert!(k3.has_edge(2, 0));
        k3.adjacency().validate().unwrap();
    }

    #[test]
    fn self_loop_flip_rejected() {
        let g = tiny(3, &[(0, 1)]);
        assert!(matches!(g.flip_edge(1, 1), Err(Error::SelfLoop(1))));
    }

    #[test]
    fn feasibility_on_path_and_cycle() {
        let path = tiny(3, &[(0, 1), (1, 2)]);
        for (a, b) in [(0, 1), (1, 2)] {
            let f = path.describe_flip(a, b, 0).unwrap();
            assert_eq!(f.kind, FlipKind::Remove);
            assert!(!path.check_feasible(&f));
        }
        let add = path.describe_flip(0, 2, 0).unwrap();
        assert!(path.check_feasible(&add));

        let c4 = tiny(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        for p in c4.adjacency().edges() {
            let f = c4.describe_flip(p.u, p.v, 0).unwrap();
            assert!(c4.check_feasible(&f));
        }
    }

    #[test]
    fn edge_groups() {
        // labels: 0,0,1,1 ; sensitive: 0,1,0,1
        let g = tiny(4, &[]);
        assert_eq!(g.classify_edge_group(0, 0).unwrap(), EdgeGroup::EE);
        assert_eq!(g.classify_edge_group(0, 1).unwrap(), EdgeGroup::ED);
        assert_eq!(g.classify_edge_group(0, 2).unwrap(), EdgeGroup::DE);
        assert_eq!(g.classify_edge_group(0, 3).unwrap(), EdgeGroup::DD);
    }

    #[test]
    fn unlabeled_endpoint_rejected() {
        let mut g = tiny(4, &[]);
        g.labels[3] = None;
        assert!(matches!(g.classify_edge_group(0, 3), Err(Error::Unlabeled(3))));
    }

    #[test]
    fn unlabeled_train_node_is_invalid() {
        let adj = Adjacency::new(4);
        let r = Graph::new(
            adj,
            Matrix::zeros(4, 1),
            vec![None, Some(0), Some(1), Some(1)],
            vec![0, 1, 0, 1],
            vec![Split::Train, Split::Test, Split::Test, Split::Test],
        );
        assert!(matches!(r, Err(Error::Invariant(_))));
    }
}
