//! Dual graphs: finite sets of flags and vertices with an incidence map, a
//! gluing involution, genus labels, and optional flag directions.
//!
//! Legs are the fixed points of the involution, edges its 2-cycles. The
//! genus of a component is `sum of vertex genera + 1 - euler characteristic`
//! and the component is stable when every vertex satisfies
//! `2 g(v) - 2 + n(v) > 0`. Identifiers are opaque ordered strings and all
//! derived sets come out sorted, so equal graphs serialize to equal bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a flag (half-edge).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlagId(pub String);

/// Identifier of a vertex.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexId(pub String);

impl FlagId {
    pub fn new(id: impl Into<String>) -> Self {
        FlagId(id.into())
    }
}

impl VertexId {
    pub fn new(id: impl Into<String>) -> Self {
        VertexId(id.into())
    }
}

impl fmt::Display for FlagId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<&str> for FlagId {
    fn from(s: &str) -> Self {
        FlagId(s.to_string())
    }
}

impl From<&str> for VertexId {
    fn from(s: &str) -> Self {
        VertexId(s.to_string())
    }
}

/// Direction of a flag in a digraph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Out,
    In,
}

impl Direction {
    pub fn opposite(self) -> Direction {
        match self {
            Direction::Out => Direction::In,
            Direction::In => Direction::Out,
        }
    }
}

/// A dual graph, stored exactly as its defining data.
///
/// The `direction` map, when present, must be total on flags and partition
/// every edge into one outgoing and one incoming flag.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualGraph {
    pub flags: BTreeSet<FlagId>,
    pub vertices: BTreeSet<VertexId>,
    pub incidence: BTreeMap<FlagId, VertexId>,
    pub involution: BTreeMap<FlagId, FlagId>,
    pub genus: BTreeMap<VertexId, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<BTreeMap<FlagId, Direction>>,
}

/// A failed graph invariant. Violations are data, not failures: `validate`
/// reports all of them at once.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("flag {flag} has no incidence entry")]
    MissingIncidence { flag: FlagId },
    #[error("incidence entry for unknown flag {flag}")]
    IncidenceOfUnknownFlag { flag: FlagId },
    #[error("incidence of flag {flag} names unknown vertex {vertex}")]
    UnknownIncidenceVertex { flag: FlagId, vertex: VertexId },
    #[error("flag {flag} has no involution entry")]
    MissingInvolution { flag: FlagId },
    #[error("involution entry for unknown flag {flag}")]
    InvolutionOfUnknownFlag { flag: FlagId },
    #[error("involution of flag {flag} names unknown flag {image}")]
    UnknownInvolutionImage { flag: FlagId, image: FlagId },
    #[error("involution not self-inverse at {flag}")]
    InvolutionNotSelfInverse { flag: FlagId },
    #[error("vertex {vertex} has no genus entry")]
    MissingGenus { vertex: VertexId },
    #[error("genus entry for unknown vertex {vertex}")]
    GenusOfUnknownVertex { vertex: VertexId },
    #[error("flag {flag} has no direction entry")]
    MissingDirection { flag: FlagId },
    #[error("direction entry for unknown flag {flag}")]
    DirectionOfUnknownFlag { flag: FlagId },
    #[error("edge {{{a}, {b}}} lacks an in-flag")]
    EdgeLacksInFlag { a: FlagId, b: FlagId },
    #[error("edge {{{a}, {b}}} lacks an out-flag")]
    EdgeLacksOutFlag { a: FlagId, b: FlagId },
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum GenusError {
    #[error("component at {representative}: genus formula yields negative value {value}")]
    Negative {
        representative: VertexId,
        value: i128,
    },
    #[error("component at {representative}: genus arithmetic overflow")]
    Overflow { representative: VertexId },
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum DirectionError {
    #[error("graph carries no direction data")]
    Missing,
}

/// A connected component: one equivalence class of vertices under the edge
/// relation, with its legs and edge count cached.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Component {
    pub vertices: BTreeSet<VertexId>,
    pub legs: BTreeSet<FlagId>,
    pub edge_count: usize,
}

impl Component {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Number of legs, the paper-facing arity of the component.
    pub fn leg_count(&self) -> usize {
        self.legs.len()
    }

    /// Euler characteristic `|V(C)| - |E(C)|`.
    pub fn euler_characteristic(&self) -> i128 {
        self.vertices.len() as i128 - self.edge_count as i128
    }

    /// Smallest vertex id; used as the deterministic name of the component.
    pub fn representative(&self) -> &VertexId {
        self.vertices.iter().next().expect("component is nonempty")
    }
}

impl DualGraph {
    pub fn new() -> Self {
        DualGraph::default()
    }

    pub fn is_directed(&self) -> bool {
        self.direction.is_some()
    }

    /// All invariant violations; empty exactly when the graph is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for f in &self.flags {
            match self.incidence.get(f) {
                None => out.push(Violation::MissingIncidence { flag: f.clone() }),
                Some(v) if !self.vertices.contains(v) => {
                    out.push(Violation::UnknownIncidenceVertex {
                        flag: f.clone(),
                        vertex: v.clone(),
                    })
                }
                Some(_) => {}
            }
            match self.involution.get(f) {
                None => out.push(Violation::MissingInvolution { flag: f.clone() }),
                Some(g) if !self.flags.contains(g) => out.push(Violation::UnknownInvolutionImage {
                    flag: f.clone(),
                    image: g.clone(),
                }),
                Some(g) => {
                    if self.involution.get(g) != Some(f) {
                        out.push(Violation::InvolutionNotSelfInverse { flag: f.clone() });
                    }
                }
            }
        }
        for f in self.incidence.keys() {
            if !self.flags.contains(f) {
                out.push(Violation::IncidenceOfUnknownFlag { flag: f.clone() });
            }
        }
        for f in self.involution.keys() {
            if !self.flags.contains(f) {
                out.push(Violation::InvolutionOfUnknownFlag { flag: f.clone() });
            }
        }
        for v in &self.vertices {
            if !self.genus.contains_key(v) {
                out.push(Violation::MissingGenus { vertex: v.clone() });
            }
        }
        for v in self.genus.keys() {
            if !self.vertices.contains(v) {
                out.push(Violation::GenusOfUnknownVertex { vertex: v.clone() });
            }
        }
        if let Some(dir) = &self.direction {
            for f in &self.flags {
                if !dir.contains_key(f) {
                    out.push(Violation::MissingDirection { flag: f.clone() });
                }
            }
            for f in dir.keys() {
                if !self.flags.contains(f) {
                    out.push(Violation::DirectionOfUnknownFlag { flag: f.clone() });
                }
            }
            for (a, b) in self.edges() {
                match (dir.get(&a), dir.get(&b)) {
                    (Some(Direction::Out), Some(Direction::Out)) => {
                        out.push(Violation::EdgeLacksInFlag { a, b })
                    }
                    (Some(Direction::In), Some(Direction::In)) => {
                        out.push(Violation::EdgeLacksOutFlag { a, b })
                    }
                    _ => {}
                }
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    pub fn sigma(&self, f: &FlagId) -> Option<&FlagId> {
        self.involution.get(f)
    }

    pub fn vertex_of(&self, f: &FlagId) -> Option<&VertexId> {
        self.incidence.get(f)
    }

    pub fn genus_at(&self, v: &VertexId) -> u64 {
        self.genus.get(v).copied().unwrap_or(0)
    }

    /// Fixed points of the involution.
    pub fn legs(&self) -> BTreeSet<FlagId> {
        self.flags
            .iter()
            .filter(|f| self.involution.get(f) == Some(f))
            .cloned()
            .collect()
    }

    /// Legs split into outgoing and incoming.
    pub fn directed_legs(&self) -> Result<(BTreeSet<FlagId>, BTreeSet<FlagId>), DirectionError> {
        let dir = self.direction.as_ref().ok_or(DirectionError::Missing)?;
        let mut out = BTreeSet::new();
        let mut inc = BTreeSet::new();
        for f in self.legs() {
            match dir.get(&f) {
                Some(Direction::Out) => {
                    out.insert(f);
                }
                _ => {
                    inc.insert(f);
                }
            }
        }
        Ok((out, inc))
    }

    /// The 2-cycles of the involution, each as a sorted pair, each once.
    pub fn edges(&self) -> BTreeSet<(FlagId, FlagId)> {
        let mut out = BTreeSet::new();
        for f in &self.flags {
            if let Some(g) = self.involution.get(f) {
                if g != f && self.flags.contains(g) {
                    let pair = if f < g {
                        (f.clone(), g.clone())
                    } else {
                        (g.clone(), f.clone())
                    };
                    out.insert(pair);
                }
            }
        }
        out
    }

    /// Flags meeting a vertex, sorted.
    pub fn flags_at(&self, v: &VertexId) -> Vec<FlagId> {
        self.flags
            .iter()
            .filter(|f| self.incidence.get(f) == Some(v))
            .cloned()
            .collect()
    }

    /// Number of flags meeting a vertex.
    pub fn arity_at(&self, v: &VertexId) -> usize {
        self.flags
            .iter()
            .filter(|f| self.incidence.get(f) == Some(v))
            .count()
    }

    /// Connected components, sorted by smallest vertex id.
    pub fn components(&self) -> Vec<Component> {
        let verts: Vec<&VertexId> = self.vertices.iter().collect();
        let index: BTreeMap<&VertexId, usize> =
            verts.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let mut parent: Vec<usize> = (0..verts.len()).collect();
        fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        let edges = self.edges();
        for (a, b) in &edges {
            let (Some(va), Some(vb)) = (self.incidence.get(a), self.incidence.get(b)) else {
                continue;
            };
            let (Some(&ia), Some(&ib)) = (index.get(va), index.get(vb)) else {
                continue;
            };
            let (ra, rb) = (find(&mut parent, ia), find(&mut parent, ib));
            if ra != rb {
                parent[ra] = rb;
            }
        }
        let mut groups: BTreeMap<usize, Component> = BTreeMap::new();
        for (i, v) in verts.iter().enumerate() {
            let root = find(&mut parent, i);
            groups
                .entry(root)
                .or_insert_with(|| Component {
                    vertices: BTreeSet::new(),
                    legs: BTreeSet::new(),
                    edge_count: 0,
                })
                .vertices
                .insert((*v).clone());
        }
        let mut by_rep: BTreeMap<VertexId, Component> = groups
            .into_values()
            .map(|c| (c.representative().clone(), c))
            .collect();
        for f in self.legs() {
            if let Some(v) = self.incidence.get(&f) {
                for c in by_rep.values_mut() {
                    if c.vertices.contains(v) {
                        c.legs.insert(f.clone());
                        break;
                    }
                }
            }
        }
        for (a, _) in &edges {
            if let Some(v) = self.incidence.get(a) {
                for c in by_rep.values_mut() {
                    if c.vertices.contains(v) {
                        c.edge_count += 1;
                        break;
                    }
                }
            }
        }
        by_rep.into_values().collect()
    }

    /// Component containing a vertex.
    pub fn component_of(&self, v: &VertexId) -> Option<Component> {
        self.components().into_iter().find(|c| c.vertices.contains(v))
    }

    /// Genus of a component: `sum of vertex genera + 1 - e(C)`.
    pub fn component_genus(&self, component: &Component) -> Result<u64, GenusError> {
        let rep = component.representative().clone();
        let mut sum: i128 = 0;
        for v in &component.vertices {
            sum = sum
                .checked_add(self.genus_at(v) as i128)
                .ok_or(GenusError::Overflow {
                    representative: rep.clone(),
                })?;
        }
        let value = sum + 1 - component.euler_characteristic();
        if value < 0 {
            return Err(GenusError::Negative {
                representative: rep,
                value,
            });
        }
        u64::try_from(value).map_err(|_| GenusError::Overflow { representative: rep })
    }

    /// True when every vertex satisfies `2 g(v) - 2 + n(v) > 0`.
    pub fn is_stable(&self) -> bool {
        self.vertices
            .iter()
            .all(|v| 2 * self.genus_at(v) as i128 - 2 + self.arity_at(v) as i128 > 0)
    }

    /// True when every component is simply connected (`e(C) = 1`).
    pub fn is_forest(&self) -> bool {
        self.components()
            .iter()
            .all(|c| c.euler_characteristic() == 1)
    }

    /// True when orienting each edge from its in-flag's vertex towards its
    /// out-flag's vertex yields a directed cycle.
    pub fn has_directed_circuit(&self) -> Result<bool, DirectionError> {
        let dir = self.direction.as_ref().ok_or(DirectionError::Missing)?;
        let verts: Vec<&VertexId> = self.vertices.iter().collect();
        let index: BTreeMap<&VertexId, usize> =
            verts.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); verts.len()];
        for (a, b) in self.edges() {
            let (out_flag, in_flag) = match (dir.get(&a), dir.get(&b)) {
                (Some(Direction::Out), _) => (a, b),
                (_, Some(Direction::Out)) => (b, a),
                _ => continue,
            };
            let (Some(vo), Some(vi)) = (self.incidence.get(&out_flag), self.incidence.get(&in_flag))
            else {
                continue;
            };
            let (Some(&io), Some(&ii)) = (index.get(vo), index.get(vi)) else {
                continue;
            };
            succ[ii].push(io);
        }
        // DFS with colors: 0 unseen, 1 on stack, 2 done.
        let mut color = vec![0u8; verts.len()];
        fn dfs(u: usize, succ: &[Vec<usize>], color: &mut [u8]) -> bool {
            color[u] = 1;
            for &w in &succ[u] {
                if color[w] == 1 || (color[w] == 0 && dfs(w, succ, color)) {
                    return true;
                }
            }
            color[u] = 2;
            false
        }
        for u in 0..verts.len() {
            if color[u] == 0 && dfs(u, &succ, &mut color) {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// Convenience builder used throughout tests and the enumeration code.
#[derive(Clone, Debug, Default)]
pub struct GraphBuilder {
    graph: DualGraph,
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder::default()
    }

    /// Starts a digraph: the direction map is present and must be fed by the
    /// `*_dir` methods.
    pub fn directed() -> Self {
        let mut b = GraphBuilder::default();
        b.graph.direction = Some(BTreeMap::new());
        b
    }

    pub fn vertex(mut self, id: &str, genus: u64) -> Self {
        let v = VertexId::from(id);
        self.graph.vertices.insert(v.clone());
        self.graph.genus.insert(v, genus);
        self
    }

    fn add_flag(&mut self, id: &str, vertex: &str) -> FlagId {
        let f = FlagId::from(id);
        self.graph.flags.insert(f.clone());
        self.graph.incidence.insert(f.clone(), VertexId::from(vertex));
        f
    }

    pub fn leg(mut self, id: &str, vertex: &str) -> Self {
        let f = self.add_flag(id, vertex);
        self.graph.involution.insert(f.clone(), f);
        self
    }

    pub fn leg_dir(mut self, id: &str, vertex: &str, dir: Direction) -> Self {
        let f = self.add_flag(id, vertex);
        self.graph.involution.insert(f.clone(), f.clone());
        if let Some(map) = self.graph.direction.as_mut() {
            map.insert(f, dir);
        }
        self
    }

    pub fn edge(mut self, f1: &str, v1: &str, f2: &str, v2: &str) -> Self {
        let a = self.add_flag(f1, v1);
        let b = self.add_flag(f2, v2);
        self.graph.involution.insert(a.clone(), b.clone());
        self.graph.involution.insert(b, a);
        self
    }

    /// Directed edge: the first flag is the outgoing one.
    pub fn edge_dir(mut self, out_flag: &str, v1: &str, in_flag: &str, v2: &str) -> Self {
        let a = self.add_flag(out_flag, v1);
        let b = self.add_flag(in_flag, v2);
        self.graph.involution.insert(a.clone(), b.clone());
        self.graph.involution.insert(b.clone(), a.clone());
        if let Some(map) = self.graph.direction.as_mut() {
            map.insert(a, Direction::Out);
            map.insert(b, Direction::In);
        }
        self
    }

    pub fn try_build(self) -> Result<DualGraph, Vec<Violation>> {
        let violations = self.graph.validate();
        if violations.is_empty() {
            Ok(self.graph)
        } else {
            Err(violations)
        }
    }

    /// Builds, panicking on invalid data; for statically known-good graphs.
    pub fn build(self) -> DualGraph {
        self.try_build().expect("builder produced an invalid graph")
    }
}
