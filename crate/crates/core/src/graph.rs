//! Undirected graphs over response labels, separation queries and Markov
//! blankets.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct LabeledGraph {
    vertices: Vec<String>,
    adjacency: Vec<BTreeSet<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct GraphRepr {
    vertices: Vec<String>,
    edges: Vec<[String; 2]>,
}

impl TryFrom<GraphRepr> for LabeledGraph {
    type Error = Error;

    fn try_from(r: GraphRepr) -> Result<Self> {
        let mut g = LabeledGraph::new(r.vertices)?;
        for [a, b] in &r.edges {
            g.add_edge(a, b)?;
        }
        Ok(g)
    }
}

impl From<LabeledGraph> for GraphRepr {
    fn from(g: LabeledGraph) -> Self {
        let edges = g
            .edges()
            .into_iter()
            .map(|(i, j)| [g.vertices[i].clone(), g.vertices[j].clone()])
            .collect();
        GraphRepr {
            vertices: g.vertices,
            edges,
        }
    }
}

impl LabeledGraph {
    /// Edgeless graph on the given labels.
    pub fn new(vertices: Vec<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for v in &vertices {
            if !seen.insert(v.as_str()) {
                return Err(Error::Input(format!("duplicate vertex label '{v}'")));
            }
        }
        let n = vertices.len();
        Ok(Self {
            vertices,
            adjacency: vec![BTreeSet::new(); n],
        })
    }

    pub fn from_edges(vertices: Vec<String>, edges: &[(&str, &str)]) -> Result<Self> {
        let mut g = Self::new(vertices)?;
        for (a, b) in edges {
            g.add_edge(a, b)?;
        }
        Ok(g)
    }

    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.vertices
            .iter()
            .position(|v| v == label)
            .ok_or_else(|| Error::Input(format!("unknown vertex label '{label}'")))
    }

    pub fn add_edge(&mut self, a: &str, b: &str) -> Result<()> {
        let (i, j) = (self.index_of(a)?, self.index_of(b)?);
        self.add_edge_index(i, j)
    }

    pub fn add_edge_index(&mut self, i: usize, j: usize) -> Result<()> {
        if i == j {
            return Err(Error::Input(format!("self-loop on '{}'", self.vertices[i])));
        }
        self.adjacency[i].insert(j);
        self.adjacency[j].insert(i);
        Ok(())
    }

    pub fn remove_edge_index(&mut self, i: usize, j: usize) {
        self.adjacency[i].remove(&j);
        self.adjacency[j].remove(&i);
    }

    pub fn has_edge_index(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].contains(&j)
    }

    pub fn has_edge(&self, a: &str, b: &str) -> bool {
        match (self.index_of(a), self.index_of(b)) {
            (Ok(i), Ok(j)) => self.has_edge_index(i, j),
            _ => false,
        }
    }

    pub fn neighbors(&self, i: usize) -> &BTreeSet<usize> {
        &self.adjacency[i]
    }

    /// Edges as index pairs `(i, j)`, `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nb) in self.adjacency.iter().enumerate() {
            out.extend(nb.range(i + 1..).map(|&j| (i, j)));
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn labels_of(&self, idx: impl IntoIterator<Item = usize>) -> Vec<String> {
        idx.into_iter().map(|i| self.vertices[i].clone()).collect()
    }

    pub fn is_forest(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (i, j) in self.edges() {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a == b {
                return false;
            }
            parent[a] = b;
        }
        true
    }

    /// Maximum-cardinality search order. Ties go to the smallest index.
    pub fn mcs_order(&self) -> Vec<usize> {
        let n = self.len();
        let mut weight = vec![0usize; n];
        let mut numbered = vec![false; n];
        let mut order = Vec::with_capacity(n);
        for _ in 0..n {
            let v = (0..n)
                .filter(|&v| !numbered[v])
                .max_by(|&a, &b| weight[a].cmp(&weight[b]).then(b.cmp(&a)))
                .expect("unnumbered vertex");
            numbered[v] = true;
            order.push(v);
            for &w in &self.adjacency[v] {
                if !numbered[w] {
                    weight[w] += 1;
                }
            }
        }
        order
    }

    /// For each vertex in MCS order, the neighbours numbered before it.
    /// For a chordal graph each such set is complete.
    pub fn mcs_parents(&self) -> Vec<(usize, Vec<usize>)> {
        let order = self.mcs_order();
        let mut position = vec![0; self.len()];
        for (k, &v) in order.iter().enumerate() {
            position[v] = k;
        }
        order
            .iter()
            .map(|&v| {
                let mut pa: Vec<usize> = self.adjacency[v]
                    .iter()
                    .copied()
                    .filter(|&w| position[w] < position[v])
                    .collect();
                pa.sort_by_key(|&w| position[w]);
                (v, pa)
            })
            .collect()
    }

    /// Chordality test on the MCS ordering: for each vertex, its earlier
    /// neighbours minus the latest of them must be earlier neighbours of
    /// that latest one.
    pub fn is_chordal(&self) -> bool {
        let parents = self.mcs_parents();
        let mut earlier: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.len()];
        for (v, pa) in &parents {
            earlier[*v] = pa.iter().copied().collect();
        }
        parents.iter().all(|(_, pa)| match pa.split_last() {
            None => true,
            Some((&last, rest)) => rest.iter().all(|w| earlier[last].contains(w)),
        })
    }

    /// Largest clique size of a chordal graph.
    pub fn max_clique_size(&self) -> usize {
        self.mcs_parents()
            .iter()
            .map(|(_, pa)| pa.len() + 1)
            .max()
            .unwrap_or(0)
    }

    /// Same graph with labels mapped through `f`.
    pub fn relabel(&self, f: impl Fn(&str) -> String) -> Result<Self> {
        let mut g = Self::new(self.vertices.iter().map(|v| f(v)).collect())?;
        g.adjacency = self.adjacency.clone();
        Ok(g)
    }

    fn label_set(&self, labels: &[String], what: &str) -> Result<BTreeSet<usize>> {
        let mut set = BTreeSet::new();
        for l in labels {
            if !set.insert(self.index_of(l).map_err(|_| {
                Error::Input(format!("unknown vertex label '{l}' in {what}"))
            })?) {
                return Err(Error::Input(format!("label '{l}' repeated in {what}")));
            }
        }
        Ok(set)
    }
}

/// True when every path from `set_a` to `set_b` passes through `set_s`.
pub fn is_separator(
    graph: &LabeledGraph,
    set_a: &[String],
    set_b: &[String],
    set_s: &[String],
) -> Result<bool> {
    let a = graph.label_set(set_a, "A")?;
    let b = graph.label_set(set_b, "B")?;
    let s = graph.label_set(set_s, "S")?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input("sets A and B must be non-empty".into()));
    }
    if !a.is_disjoint(&b) || !a.is_disjoint(&s) || !b.is_disjoint(&s) {
        return Err(Error::Input("sets A, B and S must be pairwise disjoint".into()));
    }
    let mut seen = vec![false; graph.len()];
    let mut queue: VecDeque<usize> = a.iter().copied().collect();
    for &v in &a {
        seen[v] = true;
    }
    while let Some(v) = queue.pop_front() {
        if b.contains(&v) {
            return Ok(false);
        }
        for &w in graph.neighbors(v) {
            if !seen[w] && !s.contains(&w) {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    Ok(true)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct MarkovBlanket {
    pub targets: Vec<String>,
    /// Neighbours of the targets, in vertex order.
    pub blanket: Vec<String>,
    /// Vertices neither in the targets nor in the blanket.
    pub separated: Vec<String>,
    /// The conditional-independence conclusion for the responses.
    pub statement: String,
}

/// Neighbours of `targets` outside `targets`: the smallest set separating
/// the targets from every vertex not adjacent to them.
pub fn minimal_markov_blanket(graph: &LabeledGraph, targets: &[String]) -> Result<MarkovBlanket> {
    let t = graph.label_set(targets, "targets")?;
    if t.is_empty() {
        return Err(Error::Input("targets must be non-empty".into()));
    }
    let mut blanket = BTreeSet::new();
    for &v in &t {
        blanket.extend(graph.neighbors(v).iter().filter(|w| !t.contains(w)));
    }
    let blanket = graph.labels_of(blanket.iter().copied());
    let separated: Vec<String> = (0..graph.len())
        .filter(|v| !t.contains(v) && !blanket.contains(&graph.vertices()[*v]))
        .map(|v| graph.vertices()[v].clone())
        .collect();
    let target_labels = graph.labels_of(t.iter().copied());
    let statement = induced_separation_statement(&target_labels, &separated, &blanket);
    Ok(MarkovBlanket {
        targets: target_labels,
        blanket,
        separated,
        statement,
    })
}

fn list(labels: &[String]) -> String {
    if labels.is_empty() {
        "{}".to_owned()
    } else {
        format!("{{{}}}", labels.join(", "))
    }
}

/// Conclusion for the observed responses when `given` separates the random
/// components of `a` from those of `b`.
pub fn induced_separation_statement(a: &[String], b: &[String], given: &[String]) -> String {
    if b.is_empty() {
        return format!(
            "Every other response is adjacent to {}; no response is separated from it.",
            list(a)
        );
    }
    if given.is_empty() {
        format!(
            "The responses {} are independent of the responses {}.",
            list(b),
            list(a)
        )
    } else {
        format!(
            "Given the random components of {}, the responses {} are conditionally independent of the responses {}.",
            list(given),
            list(b),
            list(a)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VertexClass {
    Target,
    Blanket,
    Peripheral,
}

impl VertexClass {
    pub fn as_str(self) -> &'static str {
        match self {
            VertexClass::Target => "target",
            VertexClass::Blanket => "blanket",
            VertexClass::Peripheral => "peripheral",
        }
    }
}

fn dot_id(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz DOT with a `class` attribute per vertex: the targets, their
/// blanket, and everything else.
pub fn to_dot(graph: &LabeledGraph, targets: &[String]) -> Result<String> {
    let mut class = vec![VertexClass::Peripheral; graph.len()];
    if !targets.is_empty() {
        let mb = minimal_markov_blanket(graph, targets)?;
        for t in &mb.targets {
            class[graph.index_of(t)?] = VertexClass::Target;
        }
        for b in &mb.blanket {
            class[graph.index_of(b)?] = VertexClass::Blanket;
        }
    }
    let mut out = String::from("graph mglmm {\n");
    for (v, c) in graph.vertices().iter().zip(&class) {
        let _ = writeln!(out, "  {} [class=\"{}\"];", dot_id(v), c.as_str());
    }
    for (i, j) in graph.edges() {
        let _ = writeln!(
            out,
            "  {} -- {};",
            dot_id(&graph.vertices()[i]),
            dot_id(&graph.vertices()[j])
        );
    }
    out.push_str("}\n");
    Ok(out)
}

fn parse_quoted(s: &str) -> Option<(String, &str)> {
    let s = s.trim_start();
    let mut chars = s.char_indices();
    match chars.next() {
        Some((_, '"')) => {}
        _ => {
            // Bare identifier.
            let end = s
                .find(|c: char| !(c.is_alphanumeric() || c == '_' || c == '.'))
                .unwrap_or(s.len());
            return (end > 0).then(|| (s[..end].to_owned(), &s[end..]));
        }
    }
    let mut out = String::new();
    let mut escaped = false;
    for (i, c) in chars {
        if escaped {
            out.push(c);
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == '"' {
            return Some((out, &s[i + 1..]));
        } else {
            out.push(c);
        }
    }
    None
}

/// Parse the DOT subset written by [`to_dot`]: one vertex or one edge
/// statement per line.
pub fn from_dot(text: &str) -> Result<LabeledGraph> {
    let mut vertices = Vec::new();
    let mut edges = Vec::new();
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    match lines.next() {
        Some(l) if l.starts_with("graph") && l.ends_with('{') => {}
        _ => return Err(Error::Input("DOT input must start with 'graph ... {'".into())),
    }
    for line in lines {
        if line == "}" {
            break;
        }
        let stmt = line.trim_end_matches(';');
        let (first, rest) = parse_quoted(stmt)
            .ok_or_else(|| Error::Input(format!("cannot parse DOT line '{line}'")))?;
        let rest = rest.trim_start();
        if let Some(after) = rest.strip_prefix("--") {
            let (second, _) = parse_quoted(after)
                .ok_or_else(|| Error::Input(format!("cannot parse DOT edge '{line}'")))?;
            edges.push((first, second));
        } else if rest.is_empty() || rest.starts_with('[') {
            vertices.push(first);
        } else {
            return Err(Error::Input(format!("cannot parse DOT line '{line}'")));
        }
    }
    for (a, b) in &edges {
        for v in [a, b] {
            if !vertices.contains(v) {
                vertices.push(v.clone());
            }
        }
    }
    let mut g = LabeledGraph::new(vertices)?;
    for (a, b) in &edges {
        g.add_edge(a, b)?;
    }
    Ok(g)
}
