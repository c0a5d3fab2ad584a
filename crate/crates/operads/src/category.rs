//! The symmetric monoidal category of dual graphs and its flavors.
//!
//! An object is an edge-free dual graph. A morphism from `(L1,V1,p1,g1)` to
//! `(L2,V2,p2,g2)` is a dual graph on the source's flags and vertices
//! together with bijections identifying the target's legs with the glue
//! graph's legs and the target's vertices with the glue graph's components.
//! Composition glues those pairs of source legs that correspond to edges of
//! the outer morphism's glue graph.
//!
//! Objects are compared by equality of their (sorted) data, never up to
//! isomorphism; isomorphism slack lives in explicit invertible morphisms.
//! Tensoring namespaces all identifiers with a block prefix so the disjoint
//! union is collision-free and interchange holds as data equality.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::graph::{Component, Direction, DualGraph, FlagId, GenusError, Violation, VertexId};

/// An object: a dual graph with no edges, i.e. data `(L, V, p, g)` plus an
/// optional direction map in the directed flavors.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct GObject {
    graph: DualGraph,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ObjectError {
    #[error("object graph has edges")]
    HasEdges,
    #[error("invalid object graph: {0}")]
    Invalid(Violation),
}

impl GObject {
    pub fn new(graph: DualGraph) -> Result<Self, ObjectError> {
        if let Some(v) = graph.validate().into_iter().next() {
            return Err(ObjectError::Invalid(v));
        }
        if !graph.edges().is_empty() {
            return Err(ObjectError::HasEdges);
        }
        Ok(GObject { graph })
    }

    /// The monoidal unit: no flags, no vertices.
    pub fn empty() -> Self {
        GObject {
            graph: DualGraph::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.graph.vertices.is_empty() && self.graph.flags.is_empty()
    }

    /// Single vertex of the given genus with the given legs.
    pub fn corolla(vertex: &str, genus: u64, legs: &[FlagId]) -> Self {
        let mut graph = DualGraph::new();
        let v = VertexId::from(vertex);
        graph.vertices.insert(v.clone());
        graph.genus.insert(v.clone(), genus);
        for l in legs {
            graph.flags.insert(l.clone());
            graph.incidence.insert(l.clone(), v.clone());
            graph.involution.insert(l.clone(), l.clone());
        }
        GObject { graph }
    }

    /// Single vertex with directed legs.
    pub fn directed_corolla(vertex: &str, genus: u64, legs: &[(FlagId, Direction)]) -> Self {
        let mut obj = GObject::corolla(
            vertex,
            genus,
            &legs.iter().map(|(l, _)| l.clone()).collect::<Vec<_>>(),
        );
        obj.graph.direction = Some(legs.iter().cloned().collect());
        obj
    }

    pub fn graph(&self) -> &DualGraph {
        &self.graph
    }

    /// Legs of the object; with no edges these are exactly the flags.
    pub fn legs(&self) -> &BTreeSet<FlagId> {
        &self.graph.flags
    }

    pub fn vertices(&self) -> &BTreeSet<VertexId> {
        &self.graph.vertices
    }

    pub fn is_directed(&self) -> bool {
        self.graph.is_directed()
    }

    /// Relabels every identifier with a prefix.
    pub fn prefixed(&self, prefix: &str) -> GObject {
        let fm = |f: &FlagId| FlagId::new(format!("{prefix}{f}"));
        let vm = |v: &VertexId| VertexId::new(format!("{prefix}{v}"));
        GObject {
            graph: DualGraph {
                flags: self.graph.flags.iter().map(&fm).collect(),
                vertices: self.graph.vertices.iter().map(&vm).collect(),
                incidence: self
                    .graph
                    .incidence
                    .iter()
                    .map(|(f, v)| (fm(f), vm(v)))
                    .collect(),
                involution: self
                    .graph
                    .involution
                    .iter()
                    .map(|(f, h)| (fm(f), fm(h)))
                    .collect(),
                genus: self.graph.genus.iter().map(|(v, &g)| (vm(v), g)).collect(),
                direction: self
                    .graph
                    .direction
                    .as_ref()
                    .map(|d| d.iter().map(|(f, &x)| (fm(f), x)).collect()),
            },
        }
    }

    /// Tensor product: disjoint union with block prefixes `0:`, `1:`, ...
    pub fn tensor(objs: &[GObject]) -> GObject {
        let mut out = GObject::empty();
        if objs.iter().any(GObject::is_directed) {
            out.graph.direction = Some(BTreeMap::new());
        }
        for (i, obj) in objs.iter().enumerate() {
            let pre = obj.prefixed(&block_prefix(i, objs.len()));
            out.graph.flags.extend(pre.graph.flags);
            out.graph.vertices.extend(pre.graph.vertices);
            out.graph.incidence.extend(pre.graph.incidence);
            out.graph.involution.extend(pre.graph.involution);
            out.graph.genus.extend(pre.graph.genus);
            if let (Some(dst), Some(src)) = (out.graph.direction.as_mut(), pre.graph.direction) {
                dst.extend(src);
            }
        }
        out
    }
}

impl<'de> Deserialize<'de> for GObject {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let graph = DualGraph::deserialize(deserializer)?;
        GObject::new(graph).map_err(D::Error::custom)
    }
}

fn block_prefix(i: usize, total: usize) -> String {
    let width = total.saturating_sub(1).max(1).to_string().len();
    format!("{i:0width$}:")
}

/// Flavors of the graph category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Flavor {
    /// All dual graphs.
    G,
    /// Stable graphs: `2 g(v) - 2 + n(v) > 0` everywhere.
    GStable,
    /// Forests; functors on this flavor are cyclic operads.
    G0,
    /// Stable forests: every vertex meets at least three flags.
    G0Stable,
    /// Dual digraphs; functors on this flavor are modular dioperads.
    D,
    /// Directed forests; functors on this flavor are dioperads.
    D0,
    /// Genus zero, no directed circuits; functors on this flavor are props.
    DP,
    /// Invertible morphisms only (edge-free glue).
    H,
    /// Invertible morphisms between stable graphs.
    HStable,
}

impl Flavor {
    pub const ALL: [Flavor; 9] = [
        Flavor::G,
        Flavor::GStable,
        Flavor::G0,
        Flavor::G0Stable,
        Flavor::D,
        Flavor::D0,
        Flavor::DP,
        Flavor::H,
        Flavor::HStable,
    ];

    pub fn requires_direction(self) -> bool {
        matches!(self, Flavor::D | Flavor::D0 | Flavor::DP)
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Flavor::G => "g",
            Flavor::GStable => "g-stable",
            Flavor::G0 => "g0",
            Flavor::G0Stable => "g0-stable",
            Flavor::D => "d",
            Flavor::D0 => "d0",
            Flavor::DP => "d-p",
            Flavor::H => "h",
            Flavor::HStable => "h-stable",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Flavor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "g" => Ok(Flavor::G),
            "g-stable" => Ok(Flavor::GStable),
            "g0" => Ok(Flavor::G0),
            "g0-stable" => Ok(Flavor::G0Stable),
            "d" => Ok(Flavor::D),
            "d0" => Ok(Flavor::D0),
            "d-p" => Ok(Flavor::DP),
            "h" => Ok(Flavor::H),
            "h-stable" => Ok(Flavor::HStable),
            other => Err(format!("unknown flavor {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum MorphismError {
    #[error("invalid source object: {0}")]
    BadSource(ObjectError),
    #[error("invalid target object: {0}")]
    BadTarget(ObjectError),
    #[error("invalid glue graph: {0}")]
    InvalidGlue(Violation),
    #[error("glue flags must equal the source legs")]
    GlueFlagsMismatch,
    #[error("glue vertices must equal the source vertices")]
    GlueVerticesMismatch,
    #[error("glue incidence must equal the source incidence")]
    GlueIncidenceMismatch,
    #[error("glue genus must equal the source genus")]
    GlueGenusMismatch,
    #[error("direction data present on only part of the morphism")]
    PartialDirection,
    #[error("glue direction must equal the source direction")]
    GlueDirectionMismatch,
    #[error("alpha is not a bijection from the target legs onto the glue legs")]
    AlphaNotBijection,
    #[error("beta is not a bijection from the target vertices onto the glue components")]
    BetaNotBijection,
    #[error("incidence clash at target leg {leg}")]
    IncidenceClash { leg: FlagId },
    #[error(
        "genus clash at target vertex {vertex}: component genus {found}, target genus {expected}"
    )]
    GenusClash {
        vertex: VertexId,
        found: u64,
        expected: u64,
    },
    #[error("alpha does not preserve direction at target leg {leg}")]
    AlphaDirection { leg: FlagId },
    #[error("objects mismatch")]
    ObjectsMismatch,
    #[error("direction clash: gluing pairs two same-direction legs {a} and {b}")]
    DirectionClash { a: FlagId, b: FlagId },
    #[error("gluing pair repeats or is not a pair of distinct source legs ({a}, {b})")]
    BadGluingPair { a: FlagId, b: FlagId },
    #[error("component genus error: {0}")]
    Genus(#[from] GenusError),
    #[error("block permutation is not a permutation")]
    NotAPermutation,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum FlavorError {
    #[error("flavor {0} requires direction data the morphism lacks")]
    DirectionRequired(Flavor),
}

/// A morphism of the graph category: a glue graph on the source's flags and
/// vertices plus identifications `alpha` (target legs to glue legs) and
/// `beta` (target vertices to glue components, named by their smallest
/// vertex).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(into = "MorphismData")]
pub struct GMorphism {
    source: GObject,
    target: GObject,
    glue: DualGraph,
    alpha: BTreeMap<FlagId, FlagId>,
    beta: BTreeMap<VertexId, VertexId>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MorphismData {
    source: GObject,
    target: GObject,
    glue: DualGraph,
    alpha: BTreeMap<FlagId, FlagId>,
    beta: BTreeMap<VertexId, VertexId>,
}

impl From<GMorphism> for MorphismData {
    fn from(m: GMorphism) -> Self {
        MorphismData {
            source: m.source,
            target: m.target,
            glue: m.glue,
            alpha: m.alpha,
            beta: m.beta,
        }
    }
}

impl<'de> Deserialize<'de> for GMorphism {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let data = MorphismData::deserialize(deserializer)?;
        GMorphism::new(data.source, data.target, data.glue, data.alpha, data.beta)
            .map_err(D::Error::custom)
    }
}

impl GMorphism {
    /// Validating constructor; checks every morphism invariant, including
    /// genus conservation on each glued component.
    pub fn new(
        source: GObject,
        target: GObject,
        glue: DualGraph,
        alpha: BTreeMap<FlagId, FlagId>,
        beta: BTreeMap<VertexId, VertexId>,
    ) -> Result<Self, MorphismError> {
        if let Some(v) = glue.validate().into_iter().next() {
            return Err(MorphismError::InvalidGlue(v));
        }
        if glue.flags != source.graph.flags {
            return Err(MorphismError::GlueFlagsMismatch);
        }
        if glue.vertices != source.graph.vertices {
            return Err(MorphismError::GlueVerticesMismatch);
        }
        if glue.incidence != source.graph.incidence {
            return Err(MorphismError::GlueIncidenceMismatch);
        }
        if glue.genus != source.graph.genus {
            return Err(MorphismError::GlueGenusMismatch);
        }
        let directed = source.is_directed();
        if directed != target.is_directed() || directed != glue.is_directed() {
            return Err(MorphismError::PartialDirection);
        }
        if directed && glue.direction != source.graph.direction {
            return Err(MorphismError::GlueDirectionMismatch);
        }

        let glue_legs = glue.legs();
        if alpha.len() != target.legs().len()
            || !alpha.keys().all(|l| target.legs().contains(l))
            || alpha.values().collect::<BTreeSet<_>>().len() != alpha.len()
            || !alpha.values().all(|l| glue_legs.contains(l))
            || alpha.len() != glue_legs.len()
        {
            return Err(MorphismError::AlphaNotBijection);
        }

        let components = glue.components();
        let reps: BTreeSet<&VertexId> = components.iter().map(Component::representative).collect();
        if beta.len() != target.vertices().len()
            || !beta.keys().all(|v| target.vertices().contains(v))
            || beta.values().collect::<BTreeSet<_>>().len() != beta.len()
            || !beta.values().all(|r| reps.contains(r))
            || beta.len() != reps.len()
        {
            return Err(MorphismError::BetaNotBijection);
        }

        let comp_of_vertex: BTreeMap<&VertexId, usize> = components
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.vertices.iter().map(move |v| (v, i)))
            .collect();
        let comp_of_rep: BTreeMap<&VertexId, usize> = components
            .iter()
            .enumerate()
            .map(|(i, c)| (c.representative(), i))
            .collect();

        // p o alpha = beta o p2.
        for (l, glue_leg) in &alpha {
            let p_alpha = &glue.incidence[glue_leg];
            let p2 = &target.graph.incidence[l];
            if comp_of_vertex[p_alpha] != comp_of_rep[&beta[p2]] {
                return Err(MorphismError::IncidenceClash { leg: l.clone() });
            }
        }

        // Genus conservation: the component genus must match the target.
        for (v, rep) in &beta {
            let found = glue.component_genus(&components[comp_of_rep[rep]])?;
            let expected = target.graph.genus_at(v);
            if found != expected {
                return Err(MorphismError::GenusClash {
                    vertex: v.clone(),
                    found,
                    expected,
                });
            }
        }

        if directed {
            let gd = glue.direction.as_ref().expect("checked directed");
            let td = target.graph.direction.as_ref().expect("checked directed");
            for (l, glue_leg) in &alpha {
                if gd.get(glue_leg) != td.get(l) {
                    return Err(MorphismError::AlphaDirection { leg: l.clone() });
                }
            }
        }

        Ok(GMorphism {
            source,
            target,
            glue,
            alpha,
            beta,
        })
    }

    pub fn source(&self) -> &GObject {
        &self.source
    }

    pub fn target(&self) -> &GObject {
        &self.target
    }

    pub fn glue(&self) -> &DualGraph {
        &self.glue
    }

    pub fn alpha(&self) -> &BTreeMap<FlagId, FlagId> {
        &self.alpha
    }

    pub fn beta(&self) -> &BTreeMap<VertexId, VertexId> {
        &self.beta
    }

    pub fn is_directed(&self) -> bool {
        self.glue.is_directed()
    }

    /// Identity: the object itself as glue graph, identities on legs and
    /// vertices.
    pub fn identity(obj: &GObject) -> GMorphism {
        GMorphism {
            source: obj.clone(),
            target: obj.clone(),
            glue: obj.graph.clone(),
            alpha: obj.legs().iter().map(|l| (l.clone(), l.clone())).collect(),
            beta: obj
                .vertices()
                .iter()
                .map(|v| (v.clone(), v.clone()))
                .collect(),
        }
    }

    /// Morphism gluing pairs of source legs. The target keeps the surviving
    /// leg identifiers; its vertices are the glued components, named by
    /// their smallest source vertex and weighted by the component genus.
    pub fn gluing(
        source: &GObject,
        pairs: &[(FlagId, FlagId)],
    ) -> Result<GMorphism, MorphismError> {
        let mut glue = source.graph.clone();
        let mut seen: BTreeSet<FlagId> = BTreeSet::new();
        for (a, b) in pairs {
            if a == b
                || !source.legs().contains(a)
                || !source.legs().contains(b)
                || !seen.insert(a.clone())
                || !seen.insert(b.clone())
            {
                return Err(MorphismError::BadGluingPair {
                    a: a.clone(),
                    b: b.clone(),
                });
            }
            if let Some(dir) = &source.graph.direction {
                if dir.get(a) == dir.get(b) {
                    return Err(MorphismError::DirectionClash {
                        a: a.clone(),
                        b: b.clone(),
                    });
                }
            }
            glue.involution.insert(a.clone(), b.clone());
            glue.involution.insert(b.clone(), a.clone());
        }

        let components = glue.components();
        let mut target_graph = DualGraph::new();
        if source.is_directed() {
            target_graph.direction = Some(BTreeMap::new());
        }
        let mut beta = BTreeMap::new();
        for c in &components {
            let rep = c.representative().clone();
            let genus = glue.component_genus(c)?;
            target_graph.vertices.insert(rep.clone());
            target_graph.genus.insert(rep.clone(), genus);
            for leg in &c.legs {
                target_graph.flags.insert(leg.clone());
                target_graph.incidence.insert(leg.clone(), rep.clone());
                target_graph.involution.insert(leg.clone(), leg.clone());
                if let (Some(td), Some(sd)) =
                    (target_graph.direction.as_mut(), &source.graph.direction)
                {
                    if let Some(&d) = sd.get(leg) {
                        td.insert(leg.clone(), d);
                    }
                }
            }
            beta.insert(rep.clone(), rep);
        }
        let target = GObject::new(target_graph).map_err(MorphismError::BadTarget)?;
        let alpha = target
            .legs()
            .iter()
            .map(|l| (l.clone(), l.clone()))
            .collect();
        GMorphism::new(source.clone(), target, glue, alpha, beta)
    }

    /// Composition in diagrammatic order: `self: A -> B`, then
    /// `other: B -> C`. Requires the boundary objects to be equal as data.
    pub fn compose(&self, other: &GMorphism) -> Result<GMorphism, MorphismError> {
        if self.target != other.source {
            return Err(MorphismError::ObjectsMismatch);
        }
        let inv_alpha1: BTreeMap<&FlagId, &FlagId> =
            self.alpha.iter().map(|(k, v)| (v, k)).collect();

        let mut glue = self.glue.clone();
        for f in self.glue.flags.iter() {
            let s1 = &self.glue.involution[f];
            if s1 != f {
                continue; // already an edge of the inner glue
            }
            let l = inv_alpha1[f];
            let s2 = &other.glue.involution[l];
            if s2 == l {
                continue; // stays a leg
            }
            let partner = self.alpha[s2].clone();
            if let Some(dir) = &glue.direction {
                if dir.get(f) == dir.get(&partner) {
                    return Err(MorphismError::DirectionClash {
                        a: f.clone(),
                        b: partner,
                    });
                }
            }
            glue.involution.insert(f.clone(), partner);
        }

        let alpha: BTreeMap<FlagId, FlagId> = other
            .alpha
            .iter()
            .map(|(l3, l2)| (l3.clone(), self.alpha[l2].clone()))
            .collect();

        let components = glue.components();
        let mut beta = BTreeMap::new();
        for (w, rep2) in &other.beta {
            // rep2 is a vertex of the middle object; its inner component
            // representative is a source vertex lying in w's final component.
            let inner_rep = &self.beta[rep2];
            let comp = components
                .iter()
                .find(|c| c.vertices.contains(inner_rep))
                .expect("inner representative lies in some component");
            beta.insert(w.clone(), comp.representative().clone());
        }

        GMorphism::new(
            self.source.clone(),
            other.target.clone(),
            glue,
            alpha,
            beta,
        )
    }

    /// Tensor product of morphisms; all identifiers acquire block prefixes.
    /// The empty tensor is the identity of the monoidal unit.
    pub fn tensor(ms: &[GMorphism]) -> Result<GMorphism, MorphismError> {
        let sources: Vec<GObject> = ms.iter().map(|m| m.source.clone()).collect();
        let targets: Vec<GObject> = ms.iter().map(|m| m.target.clone()).collect();
        let source = GObject::tensor(&sources);
        let target = GObject::tensor(&targets);
        let mut glue = source.graph().clone();
        let mut alpha = BTreeMap::new();
        let mut beta = BTreeMap::new();
        for (i, m) in ms.iter().enumerate() {
            let pre = block_prefix(i, ms.len());
            let fm = |f: &FlagId| FlagId::new(format!("{pre}{f}"));
            let vm = |v: &VertexId| VertexId::new(format!("{pre}{v}"));
            for (f, h) in &m.glue.involution {
                glue.involution.insert(fm(f), fm(h));
            }
            for (l, g) in &m.alpha {
                alpha.insert(fm(l), fm(g));
            }
            for (w, r) in &m.beta {
                beta.insert(vm(w), vm(r));
            }
        }
        GMorphism::new(source, target, glue, alpha, beta)
    }

    /// Invertible morphism from explicit bijections. `leg_map` and
    /// `vertex_map` go from the target's data to the source's.
    pub fn from_bijections(
        source: &GObject,
        target: &GObject,
        leg_map: BTreeMap<FlagId, FlagId>,
        vertex_map: BTreeMap<VertexId, VertexId>,
    ) -> Result<GMorphism, MorphismError> {
        GMorphism::new(
            source.clone(),
            target.clone(),
            source.graph.clone(),
            leg_map,
            vertex_map,
        )
    }

    /// Block permutation `tensor(objs) -> tensor(reordered)` sending block
    /// `i` to block `dest[i]`.
    pub fn block_permutation(
        objs: &[GObject],
        dest: &[usize],
    ) -> Result<GMorphism, MorphismError> {
        let n = objs.len();
        let mut inv = vec![usize::MAX; n];
        if dest.len() != n {
            return Err(MorphismError::NotAPermutation);
        }
        for (i, &j) in dest.iter().enumerate() {
            if j >= n || inv[j] != usize::MAX {
                return Err(MorphismError::NotAPermutation);
            }
            inv[j] = i;
        }
        let source = GObject::tensor(objs);
        let reordered: Vec<GObject> = inv.iter().map(|&i| objs[i].clone()).collect();
        let target = GObject::tensor(&reordered);
        let mut leg_map = BTreeMap::new();
        let mut vertex_map = BTreeMap::new();
        for (j, &i) in inv.iter().enumerate() {
            let tp = block_prefix(j, n);
            let sp = block_prefix(i, n);
            for l in objs[i].legs() {
                leg_map.insert(
                    FlagId::new(format!("{tp}{l}")),
                    FlagId::new(format!("{sp}{l}")),
                );
            }
            for v in objs[i].vertices() {
                vertex_map.insert(
                    VertexId::new(format!("{tp}{v}")),
                    VertexId::new(format!("{sp}{v}")),
                );
            }
        }
        GMorphism::from_bijections(&source, &target, leg_map, vertex_map)
    }

    /// The symmetry `a (x) b -> b (x) a`.
    pub fn symmetry(a: &GObject, b: &GObject) -> Result<GMorphism, MorphismError> {
        GMorphism::block_permutation(&[a.clone(), b.clone()], &[1, 0])
    }

    /// A morphism is invertible exactly when its glue graph has no edges.
    pub fn is_invertible(&self) -> bool {
        self.glue.edges().is_empty()
    }

    /// Inverse of an invertible morphism.
    pub fn inverse(&self) -> Option<GMorphism> {
        if !self.is_invertible() {
            return None;
        }
        let leg_map = self
            .alpha
            .iter()
            .map(|(l, g)| (g.clone(), l.clone()))
            .collect();
        let vertex_map = self
            .beta
            .iter()
            .map(|(w, r)| (r.clone(), w.clone()))
            .collect();
        GMorphism::from_bijections(&self.target, &self.source, leg_map, vertex_map).ok()
    }

    /// Membership in a flavor, checked on the source, target, and glue.
    pub fn in_flavor(&self, flavor: Flavor) -> Result<bool, FlavorError> {
        if flavor.requires_direction() && !self.is_directed() {
            return Err(FlavorError::DirectionRequired(flavor));
        }
        let graphs = [self.source.graph(), &self.glue, self.target.graph()];
        Ok(match flavor {
            Flavor::G | Flavor::D => true,
            Flavor::GStable => graphs.iter().all(|g| g.is_stable()),
            Flavor::G0 | Flavor::D0 => self.glue.is_forest(),
            Flavor::G0Stable => {
                self.glue.is_forest()
                    && graphs
                        .iter()
                        .all(|g| g.vertices.iter().all(|v| g.arity_at(v) >= 3))
            }
            Flavor::DP => {
                graphs.iter().all(|g| g.genus.values().all(|&x| x == 0))
                    && !self
                        .glue
                        .has_directed_circuit()
                        .expect("direction checked above")
            }
            Flavor::H => self.is_invertible(),
            Flavor::HStable => self.is_invertible() && graphs.iter().all(|g| g.is_stable()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(ids: &[&str]) -> Vec<FlagId> {
        ids.iter().map(|s| FlagId::from(*s)).collect()
    }

    fn corolla3(v: &str, legs: [&str; 3]) -> GObject {
        GObject::corolla(v, 0, &flags(&legs))
    }

    #[test]
    fn identity_laws_hold_on_the_nose() {
        let a = corolla3("v", ["a", "b", "c"]);
        let id = GMorphism::identity(&a);
        assert_eq!(id.compose(&id).unwrap(), id);

        let empty_id = GMorphism::identity(&GObject::empty());
        assert_eq!(empty_id.compose(&empty_id).unwrap(), empty_id);

        let pair = GObject::tensor(&[
            corolla3("v", ["a", "b", "c"]),
            corolla3("w", ["x", "y", "z"]),
        ]);
        let f = GMorphism::gluing(&pair, &[(FlagId::from("0:a"), FlagId::from("1:x"))]).unwrap();
        assert_eq!(GMorphism::identity(&pair).compose(&f).unwrap(), f);
        assert_eq!(f.compose(&GMorphism::identity(f.target())).unwrap(), f);
    }

    #[test]
    fn gluing_two_corollas_gives_a_connected_four_leg_target() {
        let pair = GObject::tensor(&[
            corolla3("v", ["a", "b", "c"]),
            corolla3("w", ["x", "y", "z"]),
        ]);
        let f = GMorphism::gluing(&pair, &[(FlagId::from("0:a"), FlagId::from("1:x"))]).unwrap();
        assert_eq!(f.target().legs().len(), 4);
        assert_eq!(f.target().vertices().len(), 1);
        let v = f.target().vertices().iter().next().unwrap();
        assert_eq!(f.target().graph().genus_at(v), 0);
        assert_eq!(f.glue().components().len(), 1);
    }

    #[test]
    fn composition_agrees_with_one_shot_gluing() {
        // Independent oracle: gluing pair-by-pair composes to gluing both
        // pairs at once, as raw data.
        let triple = GObject::tensor(&[
            corolla3("v", ["a", "b", "c"]),
            corolla3("w", ["x", "y", "z"]),
            corolla3("u", ["p", "q", "r"]),
        ]);
        let p1 = (FlagId::from("0:a"), FlagId::from("1:x"));
        let p2 = (FlagId::from("1:y"), FlagId::from("2:p"));
        let f = GMorphism::gluing(&triple, &[p1.clone()]).unwrap();
        let h = GMorphism::gluing(f.target(), &[p2.clone()]).unwrap();
        let composite = f.compose(&h).unwrap();
        let oracle = GMorphism::gluing(&triple, &[p1, p2]).unwrap();
        assert_eq!(composite, oracle);
    }

    #[test]
    fn loop_closing_raises_genus() {
        let a = corolla3("v", ["a", "b", "c"]);
        let f = GMorphism::gluing(&a, &[(FlagId::from("a"), FlagId::from("b"))]).unwrap();
        assert_eq!(f.target().legs().len(), 1);
        let v = f.target().vertices().iter().next().unwrap();
        assert_eq!(f.target().graph().genus_at(v), 1);
    }

    #[test]
    fn tensor_unit_and_interchange() {
        assert_eq!(
            GMorphism::tensor(&[]).unwrap(),
            GMorphism::identity(&GObject::empty())
        );

        let a = corolla3("v", ["a", "b", "c"]);
        let b = corolla3("w", ["x", "y", "z"]);
        let ids = GMorphism::tensor(&[GMorphism::identity(&a), GMorphism::identity(&b)]).unwrap();
        assert_eq!(
            ids,
            GMorphism::identity(&GObject::tensor(&[a.clone(), b.clone()]))
        );

        // Interchange: tensor then compose equals compose then tensor.
        let f = GMorphism::gluing(&a, &[(FlagId::from("a"), FlagId::from("b"))]).unwrap();
        let f2 = GMorphism::gluing(f.target(), &[]).unwrap();
        let g = GMorphism::gluing(&b, &[(FlagId::from("x"), FlagId::from("y"))]).unwrap();
        let g2 = GMorphism::gluing(g.target(), &[]).unwrap();
        let lhs = GMorphism::tensor(&[f.compose(&f2).unwrap(), g.compose(&g2).unwrap()]).unwrap();
        let rhs = GMorphism::tensor(&[f.clone(), g.clone()])
            .unwrap()
            .compose(&GMorphism::tensor(&[f2, g2]).unwrap())
            .unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn symmetry_is_involutive() {
        let a = corolla3("v", ["a", "b", "c"]);
        let b = GObject::corolla("w", 1, &flags(&["x"]));
        let s_ab = GMorphism::symmetry(&a, &b).unwrap();
        let s_ba = GMorphism::symmetry(&b, &a).unwrap();
        let round = s_ba.compose(&s_ab).unwrap();
        assert_eq!(round, GMorphism::identity(&GObject::tensor(&[b, a])));
    }

    #[test]
    fn symmetry_of_empty_is_a_relabeling() {
        let a = corolla3("v", ["a", "b", "c"]);
        let s = GMorphism::symmetry(&GObject::empty(), &a).unwrap();
        assert!(s.is_invertible());
        assert!(s.glue().edges().is_empty());
    }

    #[test]
    fn hexagon_on_three_corollas() {
        // Both composites of block transpositions realise the 3-cycle; the
        // hexagon holds as data equality.
        let a = corolla3("u", ["a1", "a2", "a3"]);
        let b = corolla3("v", ["b1", "b2", "b3"]);
        let c = corolla3("w", ["c1", "c2", "c3"]);
        let abc = [a.clone(), b.clone(), c.clone()];
        // (a b c) -> (b a c) -> (b c a) by two adjacent swaps.
        let swap01 = GMorphism::block_permutation(&abc, &[1, 0, 2]).unwrap();
        let bac = [b.clone(), a.clone(), c.clone()];
        let swap12 = GMorphism::block_permutation(&bac, &[0, 2, 1]).unwrap();
        let two_step = swap01.compose(&swap12).unwrap();
        // One shot: a to slot 2, b to slot 0, c to slot 1.
        let one_shot = GMorphism::block_permutation(&abc, &[2, 0, 1]).unwrap();
        assert_eq!(two_step, one_shot);
    }

    #[test]
    fn invertibility_is_edge_freeness() {
        let a = corolla3("v", ["a", "b", "c"]);
        assert!(GMorphism::identity(&a).is_invertible());

        let pair = GObject::tensor(&[
            corolla3("v", ["a", "b", "c"]),
            corolla3("w", ["x", "y", "z"]),
        ]);
        let f = GMorphism::gluing(&pair, &[(FlagId::from("0:a"), FlagId::from("1:x"))]).unwrap();
        assert!(!f.is_invertible());

        let b = corolla3("w", ["x", "y", "z"]);
        let relabel = GMorphism::from_bijections(
            &a,
            &b,
            BTreeMap::from([
                ("x".into(), "a".into()),
                ("y".into(), "b".into()),
                ("z".into(), "c".into()),
            ]),
            BTreeMap::from([("w".into(), "v".into())]),
        )
        .unwrap();
        assert!(relabel.is_invertible());
        let inv = relabel.inverse().unwrap();
        assert_eq!(relabel.compose(&inv).unwrap(), GMorphism::identity(&a));
    }

    #[test]
    fn flavor_membership() {
        let pair = GObject::tensor(&[
            corolla3("v", ["a", "b", "c"]),
            corolla3("w", ["x", "y", "z"]),
        ]);
        let stable_gluing =
            GMorphism::gluing(&pair, &[(FlagId::from("0:a"), FlagId::from("1:x"))]).unwrap();
        assert!(stable_gluing.in_flavor(Flavor::GStable).unwrap());
        assert!(stable_gluing.in_flavor(Flavor::G0).unwrap());
        assert!(stable_gluing.in_flavor(Flavor::G0Stable).unwrap());
        assert!(!stable_gluing.in_flavor(Flavor::H).unwrap());

        let a = corolla3("v", ["a", "b", "c"]);
        let loop_closing =
            GMorphism::gluing(&a, &[(FlagId::from("a"), FlagId::from("b"))]).unwrap();
        assert!(!loop_closing.in_flavor(Flavor::G0).unwrap());
        assert!(loop_closing.in_flavor(Flavor::G).unwrap());

        // Directed two-vertex cycle: out of the prop flavor.
        let mk_x = || {
            GObject::directed_corolla(
                "x",
                0,
                &[
                    ("xo".into(), Direction::Out),
                    ("xi".into(), Direction::In),
                    ("xl".into(), Direction::Out),
                ],
            )
        };
        let mk_y = || {
            GObject::directed_corolla(
                "y",
                0,
                &[
                    ("yo".into(), Direction::Out),
                    ("yi".into(), Direction::In),
                    ("yl".into(), Direction::In),
                ],
            )
        };
        let both = GObject::tensor(&[mk_x(), mk_y()]);
        let cycle = GMorphism::gluing(
            &both,
            &[
                (FlagId::from("0:xo"), FlagId::from("1:yi")),
                (FlagId::from("1:yo"), FlagId::from("0:xi")),
            ],
        )
        .unwrap();
        assert!(!cycle.in_flavor(Flavor::DP).unwrap());
        assert!(cycle.in_flavor(Flavor::D).unwrap());
        assert!(!cycle.in_flavor(Flavor::D0).unwrap());

        // Acyclic directed gluing stays a prop morphism.
        let both2 = GObject::tensor(&[mk_x(), mk_y()]);
        let chain =
            GMorphism::gluing(&both2, &[(FlagId::from("0:xo"), FlagId::from("1:yi"))]).unwrap();
        assert!(chain.in_flavor(Flavor::DP).unwrap());

        // Direction-flavor queries on undirected data are errors.
        assert_eq!(
            loop_closing.in_flavor(Flavor::DP),
            Err(FlavorError::DirectionRequired(Flavor::DP))
        );
    }

    #[test]
    fn direction_clash_is_rejected() {
        let x = GObject::directed_corolla(
            "x",
            0,
            &[
                ("a".into(), Direction::Out),
                ("b".into(), Direction::Out),
                ("c".into(), Direction::In),
            ],
        );
        let err = GMorphism::gluing(&x, &[(FlagId::from("a"), FlagId::from("b"))]).unwrap_err();
        assert!(matches!(err, MorphismError::DirectionClash { .. }));
    }

    #[test]
    fn objects_mismatch_is_rejected() {
        let a = corolla3("v", ["a", "b", "c"]);
        let b = corolla3("w", ["x", "y", "z"]);
        let f = GMorphism::identity(&a);
        let h = GMorphism::identity(&b);
        assert_eq!(f.compose(&h), Err(MorphismError::ObjectsMismatch));
    }

    #[test]
    fn validation_rejects_genus_clash() {
        let a = corolla3("v", ["a", "b", "c"]);
        // Claim the loop-closed target has genus 0 instead of 1.
        let mut glue = a.graph().clone();
        glue.involution.insert("a".into(), "b".into());
        glue.involution.insert("b".into(), "a".into());
        let bogus_target = GObject::corolla("v", 0, &flags(&["c"]));
        let err = GMorphism::new(
            a.clone(),
            bogus_target,
            glue,
            BTreeMap::from([("c".into(), "c".into())]),
            BTreeMap::from([("v".into(), "v".into())]),
        )
        .unwrap_err();
        assert!(matches!(err, MorphismError::GenusClash { .. }));
    }

    #[test]
    fn leg_conservation_via_alpha() {
        let pair = GObject::tensor(&[
            corolla3("v", ["a", "b", "c"]),
            corolla3("w", ["x", "y", "z"]),
        ]);
        let f = GMorphism::gluing(&pair, &[(FlagId::from("0:b"), FlagId::from("1:z"))]).unwrap();
        assert_eq!(f.alpha().len(), f.target().legs().len());
        assert_eq!(f.alpha().len(), f.glue().legs().len());
    }

    #[test]
    fn morphism_json_round_trips() {
        let pair = GObject::tensor(&[
            corolla3("v", ["a", "b", "c"]),
            corolla3("w", ["x", "y", "z"]),
        ]);
        let f = GMorphism::gluing(&pair, &[(FlagId::from("0:a"), FlagId::from("1:x"))]).unwrap();
        let json = serde_json::to_string(&f).unwrap();
        let back: GMorphism = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);

        // A corrupted beta is rejected on parse.
        let mut val: serde_json::Value = serde_json::from_str(&json).unwrap();
        val["beta"] = serde_json::json!({});
        assert!(serde_json::from_value::<GMorphism>(val).is_err());
    }

    #[test]
    fn associativity_on_handcrafted_triples() {
        let quad = GObject::tensor(&[
            corolla3("v", ["a", "b", "c"]),
            corolla3("w", ["x", "y", "z"]),
            corolla3("u", ["p", "q", "r"]),
            GObject::corolla("t", 1, &flags(&["m"])),
        ]);
        let f = GMorphism::gluing(&quad, &[(FlagId::from("0:a"), FlagId::from("1:x"))]).unwrap();
        let g =
            GMorphism::gluing(f.target(), &[(FlagId::from("1:y"), FlagId::from("2:p"))]).unwrap();
        let h =
            GMorphism::gluing(g.target(), &[(FlagId::from("2:q"), FlagId::from("3:m"))]).unwrap();
        let left = f.compose(&g).unwrap().compose(&h).unwrap();
        let right = f.compose(&g.compose(&h).unwrap()).unwrap();
        assert_eq!(left, right);
    }
}
