//! Canonical labelling, isomorphism testing, and automorphism groups of
//! dual graphs, at desk scale.
//!
//! The canonical form refines vertices by local invariants (genus, flag
//! count, leg adjacency, direction profile) and then minimises the relabeled
//! graph over the vertex orderings compatible with the refined partition.
//! Two graphs are isomorphic exactly when their canonical forms are equal as
//! data. Correctness outranks asymptotics here; the brute-force oracle in
//! the tests keeps the search honest.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use thiserror::Error;

use crate::graph::{Direction, DualGraph, FlagId, VertexId};

/// Default cap on the size of an explicitly listed automorphism group.
pub const DEFAULT_AUT_BOUND: usize = 1_000_000;

/// An isomorphism of dual graphs: a flag bijection and a vertex bijection
/// commuting with incidence and involution and preserving genus and
/// direction.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct GraphIso {
    pub flag_map: BTreeMap<FlagId, FlagId>,
    pub vertex_map: BTreeMap<VertexId, VertexId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum AutomorphismError {
    #[error("automorphism group order exceeds the configured bound {bound}")]
    GroupTooLarge { bound: usize },
}

impl GraphIso {
    pub fn identity(g: &DualGraph) -> Self {
        GraphIso {
            flag_map: g.flags.iter().map(|f| (f.clone(), f.clone())).collect(),
            vertex_map: g.vertices.iter().map(|v| (v.clone(), v.clone())).collect(),
        }
    }

    pub fn flag(&self, f: &FlagId) -> &FlagId {
        &self.flag_map[f]
    }

    pub fn vertex(&self, v: &VertexId) -> &VertexId {
        &self.vertex_map[v]
    }

    /// `self` followed by `other`.
    pub fn then(&self, other: &GraphIso) -> GraphIso {
        GraphIso {
            flag_map: self
                .flag_map
                .iter()
                .map(|(a, b)| (a.clone(), other.flag_map[b].clone()))
                .collect(),
            vertex_map: self
                .vertex_map
                .iter()
                .map(|(a, b)| (a.clone(), other.vertex_map[b].clone()))
                .collect(),
        }
    }

    pub fn inverse(&self) -> GraphIso {
        GraphIso {
            flag_map: self
                .flag_map
                .iter()
                .map(|(a, b)| (b.clone(), a.clone()))
                .collect(),
            vertex_map: self
                .vertex_map
                .iter()
                .map(|(a, b)| (b.clone(), a.clone()))
                .collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.flag_map.iter().all(|(a, b)| a == b) && self.vertex_map.iter().all(|(a, b)| a == b)
    }

    pub fn fixes(&self, flags: &BTreeSet<FlagId>) -> bool {
        flags.iter().all(|f| self.flag_map.get(f) == Some(f))
    }

    /// Relabels a graph along the isomorphism.
    pub fn apply(&self, g: &DualGraph) -> DualGraph {
        DualGraph {
            flags: g.flags.iter().map(|f| self.flag_map[f].clone()).collect(),
            vertices: g
                .vertices
                .iter()
                .map(|v| self.vertex_map[v].clone())
                .collect(),
            incidence: g
                .incidence
                .iter()
                .map(|(f, v)| (self.flag_map[f].clone(), self.vertex_map[v].clone()))
                .collect(),
            involution: g
                .involution
                .iter()
                .map(|(f, h)| (self.flag_map[f].clone(), self.flag_map[h].clone()))
                .collect(),
            genus: g
                .genus
                .iter()
                .map(|(v, &k)| (self.vertex_map[v].clone(), k))
                .collect(),
            direction: g.direction.as_ref().map(|dir| {
                dir.iter()
                    .map(|(f, &d)| (self.flag_map[f].clone(), d))
                    .collect()
            }),
        }
    }

    /// True when applying the map to `from` reproduces `to` exactly.
    pub fn is_isomorphism(&self, from: &DualGraph, to: &DualGraph) -> bool {
        from.flags.iter().all(|f| self.flag_map.contains_key(f))
            && from.vertices.iter().all(|v| self.vertex_map.contains_key(v))
            && self.apply(from) == *to
    }
}

/// Indexed view of a graph for the search routines.
struct Idx {
    verts: Vec<VertexId>,
    flags: Vec<FlagId>,
    genus: Vec<u64>,
    fvert: Vec<usize>,
    fsig: Vec<usize>,
    fdir: Vec<Option<Direction>>,
    flags_at: Vec<Vec<usize>>,
    is_leg: Vec<bool>,
}

impl Idx {
    fn new(g: &DualGraph) -> Idx {
        let verts: Vec<VertexId> = g.vertices.iter().cloned().collect();
        let flags: Vec<FlagId> = g.flags.iter().cloned().collect();
        let vpos: BTreeMap<&VertexId, usize> =
            verts.iter().enumerate().map(|(i, v)| (v, i)).collect();
        let fpos: BTreeMap<&FlagId, usize> =
            flags.iter().enumerate().map(|(i, f)| (f, i)).collect();
        let genus = verts.iter().map(|v| g.genus_at(v)).collect();
        let fvert: Vec<usize> = flags.iter().map(|f| vpos[&g.incidence[f]]).collect();
        let fsig: Vec<usize> = flags.iter().map(|f| fpos[&g.involution[f]]).collect();
        let fdir: Vec<Option<Direction>> = flags
            .iter()
            .map(|f| g.direction.as_ref().and_then(|d| d.get(f).copied()))
            .collect();
        let mut flags_at = vec![Vec::new(); verts.len()];
        for (i, &v) in fvert.iter().enumerate() {
            flags_at[v].push(i);
        }
        let is_leg = fsig.iter().enumerate().map(|(i, &s)| i == s).collect();
        Idx {
            verts,
            flags,
            genus,
            fvert,
            fsig,
            fdir,
            flags_at,
            is_leg,
        }
    }
}

type FlagProfile = Vec<((bool, Option<Direction>), usize)>;

/// Vertex colors from invariant refinement. Lower color = earlier cell.
fn refine(idx: &Idx, fix_legs: bool) -> Vec<usize> {
    let k = idx.verts.len();
    // Initial key: genus, arity, flag profile by (leg?, direction), and,
    // when legs are pinned, the exact leg ids at the vertex.
    let initial: Vec<(u64, usize, FlagProfile, Vec<FlagId>)> = (0..k)
        .map(|v| {
            let mut profile: Vec<(bool, Option<Direction>)> = idx.flags_at[v]
                .iter()
                .map(|&f| (idx.is_leg[f], idx.fdir[f]))
                .collect();
            profile.sort();
            let grouped: FlagProfile = profile
                .into_iter()
                .dedup_with_count()
                .map(|(c, p)| (p, c))
                .collect();
            let legs: Vec<FlagId> = if fix_legs {
                idx.flags_at[v]
                    .iter()
                    .filter(|&&f| idx.is_leg[f])
                    .map(|&f| idx.flags[f].clone())
                    .collect()
            } else {
                Vec::new()
            };
            (idx.genus[v], idx.flags_at[v].len(), grouped, legs)
        })
        .collect();
    let mut colors = rank(&initial);
    loop {
        let keys: Vec<(usize, Vec<(usize, usize)>)> = (0..k)
            .map(|v| {
                let mut nbr: Vec<usize> = idx.flags_at[v]
                    .iter()
                    .filter(|&&f| !idx.is_leg[f])
                    .map(|&f| colors[idx.fvert[idx.fsig[f]]])
                    .collect();
                nbr.sort_unstable();
                let grouped = nbr.into_iter().dedup_with_count().map(|(c, x)| (x, c)).collect();
                (colors[v], grouped)
            })
            .collect();
        let next = rank(&keys);
        if next == colors {
            return colors;
        }
        colors = next;
    }
}

fn rank<T: Ord + Clone>(keys: &[T]) -> Vec<usize> {
    let sorted: BTreeSet<&T> = keys.iter().collect();
    let index: BTreeMap<&T, usize> = sorted.into_iter().enumerate().map(|(i, k)| (k, i)).collect();
    keys.iter().map(|k| index[k]).collect()
}

fn cells_of(colors: &[usize]) -> Vec<Vec<usize>> {
    let mut cells: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (v, &c) in colors.iter().enumerate() {
        cells.entry(c).or_default().push(v);
    }
    cells.into_values().collect()
}

fn digits(n: usize) -> usize {
    n.max(1).to_string().len()
}

/// Relabels the graph along a chosen vertex order and propagates canonical
/// flag numbers. Interchangeable flags (legs of equal direction, parallel
/// edges, loops) receive numbers in an order that cannot affect the output
/// bytes.
fn relabel(idx: &Idx, order: &[usize], fix_legs: bool) -> (DualGraph, GraphIso) {
    let k = order.len();
    let mut vpos = vec![0usize; k];
    for (pos, &v) in order.iter().enumerate() {
        vpos[v] = pos;
    }
    let vwidth = digits(k.saturating_sub(1));
    let vname = |pos: usize| VertexId::new(format!("v{pos:0vwidth$}"));

    let named_flag_count = if fix_legs {
        idx.flags.len() - idx.is_leg.iter().filter(|&&l| l).count()
    } else {
        idx.flags.len()
    };
    let fwidth = digits(named_flag_count.saturating_sub(1));
    let prefix: String = if fix_legs {
        let m = idx
            .flags
            .iter()
            .enumerate()
            .filter(|(i, _)| idx.is_leg[*i])
            .map(|(_, f)| f.0.chars().take_while(|&c| c == '#').count())
            .max()
            .unwrap_or(0)
            + 1;
        "#".repeat(m)
    } else {
        "f".to_string()
    };
    let fname = |n: usize| FlagId::new(format!("{prefix}{n:0fwidth$}"));

    let dir_rank = |f: usize| match idx.fdir[f] {
        Some(Direction::Out) => 1u8,
        Some(Direction::In) => 2,
        None => 0,
    };

    let mut assigned: Vec<Option<usize>> = vec![None; idx.flags.len()];
    let mut counter = 0usize;
    for &v in order {
        let pos = vpos[v];
        let mut legs = Vec::new();
        let mut back = Vec::new();
        let mut loops = Vec::new();
        let mut forward = Vec::new();
        for &f in &idx.flags_at[v] {
            if idx.is_leg[f] {
                legs.push((dir_rank(f), f));
            } else {
                let partner = idx.fsig[f];
                let q = vpos[idx.fvert[partner]];
                if q < pos {
                    back.push((assigned[partner].expect("partner numbered earlier"), f));
                } else if q == pos {
                    if f < partner {
                        loops.push(f);
                    }
                } else {
                    forward.push((q, dir_rank(f), f));
                }
            }
        }
        if !fix_legs {
            legs.sort();
            for (_, f) in legs {
                assigned[f] = Some(counter);
                counter += 1;
            }
        }
        back.sort();
        for (_, f) in back {
            assigned[f] = Some(counter);
            counter += 1;
        }
        loops.sort();
        for f in loops {
            let partner = idx.fsig[f];
            // Directed loop: number the out-flag first.
            let (first, second) = if dir_rank(partner) < dir_rank(f) {
                (partner, f)
            } else {
                (f, partner)
            };
            assigned[first] = Some(counter);
            assigned[second] = Some(counter + 1);
            counter += 2;
        }
        forward.sort();
        for (_, _, f) in forward {
            assigned[f] = Some(counter);
            counter += 1;
        }
    }

    let new_flag = |f: usize| -> FlagId {
        match assigned[f] {
            Some(n) => fname(n),
            None => idx.flags[f].clone(),
        }
    };

    let iso = GraphIso {
        flag_map: (0..idx.flags.len())
            .map(|f| (idx.flags[f].clone(), new_flag(f)))
            .collect(),
        vertex_map: (0..k)
            .map(|v| (idx.verts[v].clone(), vname(vpos[v])))
            .collect(),
    };
    let graph = DualGraph {
        flags: (0..idx.flags.len()).map(new_flag).collect(),
        vertices: (0..k).map(|v| vname(vpos[v])).collect(),
        incidence: (0..idx.flags.len())
            .map(|f| (new_flag(f), vname(vpos[idx.fvert[f]])))
            .collect(),
        involution: (0..idx.flags.len())
            .map(|f| (new_flag(f), new_flag(idx.fsig[f])))
            .collect(),
        genus: (0..k).map(|v| (vname(vpos[v]), idx.genus[v])).collect(),
        direction: if idx.fdir.iter().any(Option::is_some) {
            Some(
                (0..idx.flags.len())
                    .filter_map(|f| idx.fdir[f].map(|d| (new_flag(f), d)))
                    .collect(),
            )
        } else {
            None
        },
    };
    (graph, iso)
}

fn canon(g: &DualGraph, fix_legs: bool) -> (DualGraph, GraphIso) {
    debug_assert!(g.is_valid(), "canonical form requires a valid graph");
    let idx = Idx::new(g);
    let colors = refine(&idx, fix_legs);
    let cells = cells_of(&colors);
    let mut best: Option<(DualGraph, GraphIso)> = None;
    for order in orders(&cells) {
        let (cand, iso) = relabel(&idx, &order, fix_legs);
        if best.as_ref().map_or(true, |(b, _)| cand < *b) {
            best = Some((cand, iso));
        }
    }
    best.unwrap_or_else(|| (DualGraph::new(), GraphIso::identity(g)))
}

/// All vertex orders compatible with the refined cells.
fn orders(cells: &[Vec<usize>]) -> Vec<Vec<usize>> {
    if cells.is_empty() {
        return vec![Vec::new()];
    }
    cells
        .iter()
        .map(|cell| {
            cell.iter()
                .copied()
                .permutations(cell.len())
                .collect::<Vec<_>>()
        })
        .multi_cartesian_product()
        .map(|parts| parts.into_iter().flatten().collect())
        .collect()
}

/// Canonical form with free legs: two graphs are isomorphic iff their
/// canonical forms are byte-identical. Idempotent and deterministic.
pub fn canonical_form(g: &DualGraph) -> (DualGraph, GraphIso) {
    canon(g, false)
}

/// Canonical form with legs pinned pointwise: two graphs with the same legs
/// are leg-fixing isomorphic iff their canonical forms are byte-identical.
pub fn canonical_form_legs_fixed(g: &DualGraph) -> (DualGraph, GraphIso) {
    canon(g, true)
}

/// Witness isomorphism between two graphs, or `None`. With `fix_legs` the
/// graphs must share their leg set and the witness is the identity on legs.
pub fn are_isomorphic(g1: &DualGraph, g2: &DualGraph, fix_legs: bool) -> Option<GraphIso> {
    if g1.flags.len() != g2.flags.len()
        || g1.vertices.len() != g2.vertices.len()
        || g1.is_directed() != g2.is_directed()
    {
        return None;
    }
    if fix_legs && g1.legs() != g2.legs() {
        return None;
    }
    let (c1, i1) = canon(g1, fix_legs);
    let (c2, i2) = canon(g2, fix_legs);
    if c1 != c2 {
        return None;
    }
    Some(i1.then(&i2.inverse()))
}

/// The full automorphism group as an explicit list. Contains the identity
/// and is closed under composition and inverse.
pub fn automorphisms(g: &DualGraph, fix_legs: bool) -> Result<Vec<GraphIso>, AutomorphismError> {
    automorphisms_bounded(g, fix_legs, DEFAULT_AUT_BOUND)
}

pub fn automorphisms_bounded(
    g: &DualGraph,
    fix_legs: bool,
    bound: usize,
) -> Result<Vec<GraphIso>, AutomorphismError> {
    let idx = Idx::new(g);
    let colors = refine(&idx, fix_legs);
    let k = idx.verts.len();
    let mut out: Vec<GraphIso> = Vec::new();
    let mut vmap: Vec<Option<usize>> = vec![None; k];
    let mut vused = vec![false; k];
    search_vertices(
        &idx, &colors, fix_legs, bound, 0, &mut vmap, &mut vused, &mut out,
    )?;
    out.sort();
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn search_vertices(
    idx: &Idx,
    colors: &[usize],
    fix_legs: bool,
    bound: usize,
    v: usize,
    vmap: &mut Vec<Option<usize>>,
    vused: &mut Vec<bool>,
    out: &mut Vec<GraphIso>,
) -> Result<(), AutomorphismError> {
    let k = idx.verts.len();
    if v == k {
        let mut fmap: Vec<Option<usize>> = vec![None; idx.flags.len()];
        let mut fused = vec![false; idx.flags.len()];
        return search_flags(idx, fix_legs, bound, 0, vmap, &mut fmap, &mut fused, out);
    }
    for w in 0..k {
        if vused[w] || colors[w] != colors[v] {
            continue;
        }
        vmap[v] = Some(w);
        vused[w] = true;
        search_vertices(idx, colors, fix_legs, bound, v + 1, vmap, vused, out)?;
        vused[w] = false;
        vmap[v] = None;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn search_flags(
    idx: &Idx,
    fix_legs: bool,
    bound: usize,
    f: usize,
    vmap: &[Option<usize>],
    fmap: &mut Vec<Option<usize>>,
    fused: &mut Vec<bool>,
    out: &mut Vec<GraphIso>,
) -> Result<(), AutomorphismError> {
    let m = idx.flags.len();
    if f == m {
        if out.len() >= bound {
            return Err(AutomorphismError::GroupTooLarge { bound });
        }
        out.push(GraphIso {
            flag_map: (0..m)
                .map(|i| (idx.flags[i].clone(), idx.flags[fmap[i].unwrap()].clone()))
                .collect(),
            vertex_map: (0..idx.verts.len())
                .map(|v| (idx.verts[v].clone(), idx.verts[vmap[v].unwrap()].clone()))
                .collect(),
        });
        return Ok(());
    }
    let target_vertex = vmap[idx.fvert[f]].unwrap();
    let candidates: Vec<usize> = if idx.is_leg[f] {
        if fix_legs {
            vec![f]
        } else {
            idx.flags_at[target_vertex]
                .iter()
                .copied()
                .filter(|&h| idx.is_leg[h])
                .collect()
        }
    } else {
        idx.flags_at[target_vertex].iter().copied().collect()
    };
    for h in candidates {
        if fused[h]
            || idx.fvert[h] != target_vertex
            || idx.is_leg[h] != idx.is_leg[f]
            || idx.fdir[h] != idx.fdir[f]
        {
            continue;
        }
        // Involution consistency.
        let partner = idx.fsig[f];
        if partner != f {
            let h_partner = idx.fsig[h];
            if h_partner == h {
                continue;
            }
            if idx.fvert[h_partner] != vmap[idx.fvert[partner]].unwrap() {
                continue;
            }
            match fmap[partner] {
                Some(assigned) if assigned != h_partner => continue,
                _ => {}
            }
        } else if idx.fsig[h] != h {
            continue;
        }
        fmap[f] = Some(h);
        fused[h] = true;
        search_flags(idx, fix_legs, bound, f + 1, vmap, fmap, fused, out)?;
        fused[h] = false;
        fmap[f] = None;
    }
    Ok(())
}
