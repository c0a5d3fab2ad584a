//! Finitely supported modules of symmetric-group representations.
//!
//! A module assigns to each pair `(g, n)` a carrier: a finite set with an
//! action of the symmetric group on `n` letters, or an exact-rational vector
//! space with representation matrices. Actions are stored on the adjacent
//! transpositions; arbitrary permutations act through a bubble-sort
//! decomposition, and `check_equivariance` verifies the defining relations
//! exhaustively. Keys absent from the table denote the empty set or zero
//! space.

use std::collections::BTreeMap;
use std::fmt;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::category::{GMorphism, GObject};
use crate::graph::{FlagId, VertexId};
use crate::linalg::{parse_q, QMatrix};

/// Genus/arity index of a carrier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GNKey {
    pub g: u64,
    pub n: u64,
}

impl GNKey {
    pub fn new(g: u64, n: u64) -> Self {
        GNKey { g, n }
    }

    /// The stability weight `2g - 2 + n`.
    pub fn weight(&self) -> i128 {
        2 * self.g as i128 - 2 + self.n as i128
    }

    pub fn is_stable(&self) -> bool {
        self.weight() > 0
    }
}

impl fmt::Display for GNKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.g, self.n)
    }
}

/// Base category of the carriers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Base {
    #[serde(rename = "set")]
    Set,
    #[serde(rename = "vect")]
    Vect,
}

/// Permutations over `0..n-1`, stored as image vectors.
pub mod perm {
    /// Composition `a o b`: apply `b` first.
    pub fn compose(a: &[usize], b: &[usize]) -> Vec<usize> {
        b.iter().map(|&i| a[i]).collect()
    }

    pub fn inverse(p: &[usize]) -> Vec<usize> {
        let mut out = vec![0; p.len()];
        for (i, &j) in p.iter().enumerate() {
            out[j] = i;
        }
        out
    }

    pub fn identity(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    pub fn is_permutation(p: &[usize]) -> bool {
        let mut seen = vec![false; p.len()];
        p.iter().all(|&i| {
            if i >= p.len() || seen[i] {
                false
            } else {
                seen[i] = true;
                true
            }
        })
    }

    /// Adjacent transposition positions whose left-to-right application
    /// realises `p`: `p = s(t_m) o ... o s(t_1)`.
    pub fn adjacent_factorisation(p: &[usize]) -> Vec<usize> {
        let mut arr = p.to_vec();
        let mut swaps = Vec::new();
        // Bubble sort to the identity, recording swap positions.
        loop {
            let mut done = true;
            for j in 0..arr.len().saturating_sub(1) {
                if arr[j] > arr[j + 1] {
                    arr.swap(j, j + 1);
                    swaps.push(j);
                    done = false;
                }
            }
            if done {
                break;
            }
        }
        swaps
    }
}

/// Finite set with a symmetric-group action given on adjacent
/// transpositions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SetCarrier {
    pub elements: Vec<String>,
    /// `transpositions[i]` is the image permutation of the swap `(i, i+1)`.
    pub transpositions: Vec<Vec<usize>>,
}

impl SetCarrier {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    fn generator(&self, i: usize) -> &[usize] {
        &self.transpositions[i]
    }

    /// Action of an arbitrary permutation of the `n` slots on an element.
    pub fn act(&self, slot_perm: &[usize], elem: usize) -> usize {
        let mut e = elem;
        for t in perm::adjacent_factorisation(slot_perm) {
            e = self.generator(t)[e];
        }
        e
    }
}

/// Exact-rational vector space with representation matrices on adjacent
/// transpositions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VectCarrier {
    pub dim: usize,
    pub transpositions: Vec<QMatrix>,
}

impl VectCarrier {
    /// Representation matrix of an arbitrary slot permutation.
    pub fn act(&self, slot_perm: &[usize]) -> QMatrix {
        let mut m = QMatrix::identity(self.dim);
        for t in perm::adjacent_factorisation(slot_perm) {
            m = self.transpositions[t].mul(&m);
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Carrier {
    Set(SetCarrier),
    Vect(VectCarrier),
}

impl Carrier {
    /// Number of elements (set) or dimension (vect).
    pub fn size(&self) -> usize {
        match self {
            Carrier::Set(c) => c.len(),
            Carrier::Vect(c) => c.dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SModuleError {
    #[error("carrier base does not match the module base")]
    BaseMismatch,
    #[error("duplicate key {0}")]
    DuplicateKey(GNKey),
    #[error("key {key}: expected {expected} generator actions, found {found}")]
    WrongGeneratorCount {
        key: GNKey,
        expected: usize,
        found: usize,
    },
    #[error("key {key}: generator {generator} is not a map on the carrier")]
    BadGeneratorShape { key: GNKey, generator: usize },
    #[error("key {key}: duplicate element name {name:?}")]
    DuplicateElement { key: GNKey, name: String },
    #[error("stable module cannot carry the unstable key {0}")]
    UnstableKey(GNKey),
    #[error("cannot parse entry: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no carrier at key {0} (strict mode)")]
    MissingCarrier(GNKey),
    #[error("leg labeling is not a bijection onto 1..n")]
    BadLabeling,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ActError {
    #[error("morphism is not invertible")]
    NotInvertible,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A relation of the symmetric group violated by stored data, or a shape
/// defect that prevents the action from being one.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EquivarianceFailure {
    #[error("key {key}: expected {expected} generators, found {found}")]
    WrongGeneratorCount {
        key: GNKey,
        expected: usize,
        found: usize,
    },
    #[error("key {key}: generator {generator} is not a permutation")]
    NotPermutation { key: GNKey, generator: usize },
    #[error("key {key}: generator {generator} matrix is not square of the carrier dimension")]
    BadMatrixShape { key: GNKey, generator: usize },
    #[error("key {key}: generator {generator} matrix is not invertible")]
    NotInvertible { key: GNKey, generator: usize },
    #[error("key {key}: involution relation fails: s{i}^2 != id")]
    Involution { key: GNKey, i: usize },
    #[error("key {key}: commutation relation fails: s{i} s{j} != s{j} s{i}")]
    Commutation { key: GNKey, i: usize, j: usize },
    #[error("key {key}: braid relation fails: s{i} s{j} s{i} != s{j} s{i} s{j}", j = i + 1)]
    Braid { key: GNKey, i: usize },
    #[error("stable-marked module carries unstable key {key}")]
    UnstableKey { key: GNKey },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EquivarianceReport {
    pub failures: Vec<EquivarianceFailure>,
}

impl EquivarianceReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Evaluated carrier of a module at an object: the product over components.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Evaluated {
    /// Tuples of element names, one slot per component in sorted vertex
    /// order.
    Set(Vec<Vec<String>>),
    Vect { factor_dims: Vec<usize>, dim: usize },
}

impl Evaluated {
    pub fn size(&self) -> usize {
        match self {
            Evaluated::Set(tuples) => tuples.len(),
            Evaluated::Vect { dim, .. } => *dim,
        }
    }
}

/// The map induced on evaluated carriers by an invertible morphism.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CarrierMap {
    /// `map[i]` is the target tuple index of source tuple `i`.
    Set(Vec<usize>),
    /// `target_dim x source_dim` matrix.
    Vect(QMatrix),
}

/// Bijection from an object's legs onto `1..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LegLabeling(pub BTreeMap<FlagId, usize>);

impl LegLabeling {
    /// The labeling by sorted leg order.
    pub fn sorted(obj: &GObject) -> Self {
        LegLabeling(
            obj.legs()
                .iter()
                .enumerate()
                .map(|(i, l)| (l.clone(), i + 1))
                .collect(),
        )
    }

    fn validate(&self, obj: &GObject) -> Result<(), EvalError> {
        let n = obj.legs().len();
        if self.0.len() != n
            || !obj.legs().iter().all(|l| self.0.contains_key(l))
            || !(1..=n).all(|i| self.0.values().any(|&v| v == i))
        {
            return Err(EvalError::BadLabeling);
        }
        Ok(())
    }
}

/// A finitely supported module: `(g,n) -> carrier with S_n action`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SModule {
    base: Base,
    stable: bool,
    table: BTreeMap<GNKey, Carrier>,
}

impl SModule {
    pub fn new(base: Base, stable: bool) -> Self {
        SModule {
            base,
            stable,
            table: BTreeMap::new(),
        }
    }

    /// One-element set carrier at a single key, with the trivial action.
    pub fn one_point(key: GNKey) -> Self {
        let mut m = SModule::new(Base::Set, key.is_stable());
        m.insert_set(
            key,
            vec!["x".to_string()],
            vec![vec![0]; (key.n as usize).saturating_sub(1)],
        )
        .expect("one-point carrier is well-formed");
        m
    }

    pub fn base(&self) -> Base {
        self.base
    }

    /// Whether the module is marked stable (all keys satisfy `2g-2+n > 0`).
    pub fn stable_marked(&self) -> bool {
        self.stable
    }

    pub fn keys(&self) -> impl Iterator<Item = &GNKey> {
        self.table.keys()
    }

    pub fn carrier(&self, key: GNKey) -> Option<&Carrier> {
        self.table.get(&key)
    }

    pub fn set_carrier(&self, key: GNKey) -> Option<&SetCarrier> {
        match self.table.get(&key) {
            Some(Carrier::Set(c)) => Some(c),
            _ => None,
        }
    }

    pub fn vect_carrier(&self, key: GNKey) -> Option<&VectCarrier> {
        match self.table.get(&key) {
            Some(Carrier::Vect(c)) => Some(c),
            _ => None,
        }
    }

    pub fn insert_set(
        &mut self,
        key: GNKey,
        elements: Vec<String>,
        transpositions: Vec<Vec<usize>>,
    ) -> Result<(), SModuleError> {
        if self.base != Base::Set {
            return Err(SModuleError::BaseMismatch);
        }
        self.check_key(key)?;
        let expected = (key.n as usize).saturating_sub(1);
        if transpositions.len() != expected {
            return Err(SModuleError::WrongGeneratorCount {
                key,
                expected,
                found: transpositions.len(),
            });
        }
        if let Some(name) = elements.iter().duplicates().next() {
            return Err(SModuleError::DuplicateElement {
                key,
                name: name.clone(),
            });
        }
        for (i, t) in transpositions.iter().enumerate() {
            if t.len() != elements.len() || t.iter().any(|&x| x >= elements.len()) {
                return Err(SModuleError::BadGeneratorShape { key, generator: i });
            }
        }
        self.table.insert(
            key,
            Carrier::Set(SetCarrier {
                elements,
                transpositions,
            }),
        );
        Ok(())
    }

    pub fn insert_vect(
        &mut self,
        key: GNKey,
        dim: usize,
        transpositions: Vec<QMatrix>,
    ) -> Result<(), SModuleError> {
        if self.base != Base::Vect {
            return Err(SModuleError::BaseMismatch);
        }
        self.check_key(key)?;
        let expected = (key.n as usize).saturating_sub(1);
        if transpositions.len() != expected {
            return Err(SModuleError::WrongGeneratorCount {
                key,
                expected,
                found: transpositions.len(),
            });
        }
        for (i, m) in transpositions.iter().enumerate() {
            if m.rows() != dim || m.cols() != dim {
                return Err(SModuleError::BadGeneratorShape { key, generator: i });
            }
        }
        self.table
            .insert(key, Carrier::Vect(VectCarrier { dim, transpositions }));
        Ok(())
    }

    fn check_key(&self, key: GNKey) -> Result<(), SModuleError> {
        if self.table.contains_key(&key) {
            return Err(SModuleError::DuplicateKey(key));
        }
        if self.stable && !key.is_stable() {
            return Err(SModuleError::UnstableKey(key));
        }
        Ok(())
    }

    /// Exhaustively verifies the symmetric-group relations on every carrier.
    pub fn check_equivariance(&self) -> EquivarianceReport {
        let mut failures = Vec::new();
        for (&key, carrier) in &self.table {
            if self.stable && !key.is_stable() {
                failures.push(EquivarianceFailure::UnstableKey { key });
            }
            let n = key.n as usize;
            let expected = n.saturating_sub(1);
            let found = match carrier {
                Carrier::Set(c) => c.transpositions.len(),
                Carrier::Vect(c) => c.transpositions.len(),
            };
            if found != expected {
                failures.push(EquivarianceFailure::WrongGeneratorCount {
                    key,
                    expected,
                    found,
                });
                continue;
            }
            // Shape checks per generator.
            let mut shape_ok = true;
            match carrier {
                Carrier::Set(c) => {
                    for (i, t) in c.transpositions.iter().enumerate() {
                        if t.len() != c.len() || !perm::is_permutation(t) {
                            failures.push(EquivarianceFailure::NotPermutation {
                                key,
                                generator: i,
                            });
                            shape_ok = false;
                        }
                    }
                }
                Carrier::Vect(c) => {
                    for (i, m) in c.transpositions.iter().enumerate() {
                        if m.rows() != c.dim || m.cols() != c.dim {
                            failures.push(EquivarianceFailure::BadMatrixShape {
                                key,
                                generator: i,
                            });
                            shape_ok = false;
                        } else if m.inverse().is_none() {
                            failures.push(EquivarianceFailure::NotInvertible {
                                key,
                                generator: i,
                            });
                            shape_ok = false;
                        }
                    }
                }
            }
            if !shape_ok {
                continue;
            }
            // Group relations. `gen(i)` below is either a permutation or a
            // matrix; both compose associatively.
            enum Rep<'a> {
                Set(&'a SetCarrier),
                Vect(&'a VectCarrier),
            }
            let rep = match carrier {
                Carrier::Set(c) => Rep::Set(c),
                Carrier::Vect(c) => Rep::Vect(c),
            };
            let equal_word = |a: &[usize], b: &[usize]| -> bool {
                match &rep {
                    Rep::Set(c) => {
                        let fold = |w: &[usize]| {
                            w.iter().rev().fold(perm::identity(c.len()), |acc, &i| {
                                perm::compose(c.generator(i), &acc)
                            })
                        };
                        fold(a) == fold(b)
                    }
                    Rep::Vect(c) => {
                        let fold = |w: &[usize]| {
                            w.iter().rev().fold(QMatrix::identity(c.dim), |acc, &i| {
                                c.transpositions[i].mul(&acc)
                            })
                        };
                        fold(a) == fold(b)
                    }
                }
            };
            for i in 0..expected {
                if !equal_word(&[i, i], &[]) {
                    failures.push(EquivarianceFailure::Involution { key, i });
                }
                if i + 1 < expected && !equal_word(&[i, i + 1, i], &[i + 1, i, i + 1]) {
                    failures.push(EquivarianceFailure::Braid { key, i });
                }
                for j in i + 2..expected {
                    if !equal_word(&[i, j], &[j, i]) {
                        failures.push(EquivarianceFailure::Commutation { key, i, j });
                    }
                }
            }
        }
        EquivarianceReport { failures }
    }

    /// Value at an object: the product over components, in sorted vertex
    /// order. Missing keys yield the empty set or zero space unless `strict`.
    pub fn evaluate(
        &self,
        obj: &GObject,
        labeling: &LegLabeling,
        strict: bool,
    ) -> Result<Evaluated, EvalError> {
        labeling.validate(obj)?;
        let keys = component_keys(obj);
        match self.base {
            Base::Set => {
                let mut factors: Vec<&SetCarrier> = Vec::new();
                for (_, key) in &keys {
                    match self.set_carrier(*key) {
                        Some(c) => factors.push(c),
                        None => {
                            if strict {
                                return Err(EvalError::MissingCarrier(*key));
                            }
                            return Ok(Evaluated::Set(Vec::new()));
                        }
                    }
                }
                let tuples = factors
                    .iter()
                    .map(|c| c.elements.clone())
                    .multi_cartesian_product()
                    .collect::<Vec<_>>();
                // The empty product is a single empty tuple.
                if keys.is_empty() {
                    return Ok(Evaluated::Set(vec![Vec::new()]));
                }
                Ok(Evaluated::Set(tuples))
            }
            Base::Vect => {
                let mut dims = Vec::new();
                for (_, key) in &keys {
                    match self.vect_carrier(*key) {
                        Some(c) => dims.push(c.dim),
                        None => {
                            if strict {
                                return Err(EvalError::MissingCarrier(*key));
                            }
                            dims.push(0);
                        }
                    }
                }
                let dim = dims.iter().product();
                Ok(Evaluated::Vect {
                    factor_dims: dims,
                    dim,
                })
            }
        }
    }

    /// Functorial action of an invertible morphism on evaluated carriers.
    pub fn act(&self, iso: &GMorphism) -> Result<CarrierMap, ActError> {
        if !iso.is_invertible() {
            return Err(ActError::NotInvertible);
        }
        let labeling = LegLabeling::sorted(iso.source());
        let source_eval = self.evaluate(iso.source(), &labeling, true)?;
        let source_keys = component_keys(iso.source());
        let target_keys = component_keys(iso.target());
        let src_pos: BTreeMap<&VertexId, usize> = source_keys
            .iter()
            .enumerate()
            .map(|(i, (v, _))| (v, i))
            .collect();

        // Per target component: source slot and slot permutation.
        let mut wiring: Vec<(usize, Vec<usize>)> = Vec::new();
        for (w, _) in &target_keys {
            let u = &iso.beta()[w];
            let src_slot = src_pos[u];
            let src_legs = iso.source().graph().flags_at(u);
            let tgt_legs = iso.target().graph().flags_at(w);
            let mut phi = vec![0usize; src_legs.len()];
            for (t_rank, l) in tgt_legs.iter().enumerate() {
                let src_leg = &iso.alpha()[l];
                let s_rank = src_legs
                    .iter()
                    .position(|x| x == src_leg)
                    .expect("alpha lands at the matched vertex");
                phi[s_rank] = t_rank;
            }
            wiring.push((src_slot, phi));
        }

        match (&source_eval, self.base) {
            (Evaluated::Set(src_tuples), Base::Set) => {
                let factors: Vec<&SetCarrier> = source_keys
                    .iter()
                    .map(|(_, key)| self.set_carrier(*key).expect("strict evaluate succeeded"))
                    .collect();
                let tgt_dims: Vec<usize> = wiring.iter().map(|(s, _)| factors[*s].len()).collect();
                let elem_index = |c: &SetCarrier, name: &str| {
                    c.elements.iter().position(|e| e == name).expect("element")
                };
                let map = src_tuples
                    .iter()
                    .map(|tuple| {
                        let mut tgt_idx = 0usize;
                        for (j, (src_slot, phi)) in wiring.iter().enumerate() {
                            let c = factors[*src_slot];
                            let e = elem_index(c, &tuple[*src_slot]);
                            tgt_idx = tgt_idx * tgt_dims[j] + c.act(phi, e);
                        }
                        tgt_idx
                    })
                    .collect();
                Ok(CarrierMap::Set(map))
            }
            (Evaluated::Vect { factor_dims, dim }, Base::Vect) => {
                let factors: Vec<&VectCarrier> = source_keys
                    .iter()
                    .map(|(_, key)| self.vect_carrier(*key).expect("strict evaluate succeeded"))
                    .collect();
                let gen_mats: Vec<QMatrix> = wiring
                    .iter()
                    .map(|(s, phi)| factors[*s].act(phi))
                    .collect();
                let tgt_dims: Vec<usize> = wiring.iter().map(|(s, _)| factor_dims[*s]).collect();
                let tgt_dim: usize = tgt_dims.iter().product();
                let mut out = QMatrix::zeros(tgt_dim, *dim);
                for s_idx in 0..*dim {
                    let s_tuple = unindex(s_idx, factor_dims);
                    for t_idx in 0..tgt_dim {
                        let t_tuple = unindex(t_idx, &tgt_dims);
                        let mut entry = crate::linalg::qi(1);
                        for (j, (src_slot, _)) in wiring.iter().enumerate() {
                            entry = entry * gen_mats[j].get(t_tuple[j], s_tuple[*src_slot]);
                            if entry == crate::linalg::qi(0) {
                                break;
                            }
                        }
                        if entry != crate::linalg::qi(0) {
                            out.set(t_idx, s_idx, entry);
                        }
                    }
                }
                Ok(CarrierMap::Vect(out))
            }
            _ => unreachable!("evaluate respects the module base"),
        }
    }
}

/// Component keys of an edge-free object in sorted vertex order.
fn component_keys(obj: &GObject) -> Vec<(VertexId, GNKey)> {
    obj.vertices()
        .iter()
        .map(|v| {
            (
                v.clone(),
                GNKey::new(obj.graph().genus_at(v), obj.graph().arity_at(v) as u64),
            )
        })
        .collect()
}

fn unindex(mut idx: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for j in (0..dims.len()).rev() {
        if dims[j] > 0 {
            out[j] = idx % dims[j];
            idx /= dims[j];
        }
    }
    out
}

// JSON schema: {"base": "set"|"vect", "stable"?: bool, "entries": [...]}
// with set entries {"g","n","elements","transpositions"?} (index
// permutations) and vect entries {"g","n","dim","transpositions"} (rational
// matrices).
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SModuleJson {
    base: Base,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stable: Option<bool>,
    entries: Vec<EntryJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryJson {
    g: u64,
    n: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    elements: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transpositions: Option<TranspositionsJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TranspositionsJson {
    Perms(Vec<Vec<usize>>),
    Matrices(Vec<Vec<Vec<String>>>),
}

impl Serialize for SModule {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let entries = self
            .table
            .iter()
            .map(|(key, carrier)| match carrier {
                Carrier::Set(c) => EntryJson {
                    g: key.g,
                    n: key.n,
                    elements: Some(c.elements.clone()),
                    dim: None,
                    transpositions: Some(TranspositionsJson::Perms(c.transpositions.clone())),
                },
                Carrier::Vect(c) => EntryJson {
                    g: key.g,
                    n: key.n,
                    elements: None,
                    dim: Some(c.dim),
                    transpositions: Some(TranspositionsJson::Matrices(
                        c.transpositions
                            .iter()
                            .map(|m| {
                                (0..m.rows())
                                    .map(|i| m.row(i).iter().map(ToString::to_string).collect())
                                    .collect()
                            })
                            .collect(),
                    )),
                },
            })
            .collect();
        SModuleJson {
            base: self.base,
            stable: Some(self.stable),
            entries,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SModule {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let json = SModuleJson::deserialize(deserializer)?;
        // Unmarked modules count as stable when every key is stable.
        let stable = json.stable.unwrap_or_else(|| {
            json.entries
                .iter()
                .all(|e| GNKey::new(e.g, e.n).is_stable())
        });
        let mut module = SModule::new(json.base, stable);
        for entry in json.entries {
            let key = GNKey::new(entry.g, entry.n);
            match json.base {
                Base::Set => {
                    let elements = entry.elements.ok_or_else(|| {
                        D::Error::custom(format!("set entry {key} lacks \"elements\""))
                    })?;
                    let transpositions = match entry.transpositions {
                        None => vec![perm::identity(elements.len()); (key.n as usize).saturating_sub(1)],
                        Some(TranspositionsJson::Perms(p)) => {
                            if p.is_empty() && key.n > 1 {
                                vec![perm::identity(elements.len()); (key.n as usize) - 1]
                            } else {
                                p
                            }
                        }
                        Some(TranspositionsJson::Matrices(_)) => {
                            return Err(D::Error::custom(format!(
                                "set entry {key} carries matrices"
                            )))
                        }
                    };
                    module
                        .insert_set(key, elements, transpositions)
                        .map_err(D::Error::custom)?;
                }
                Base::Vect => {
                    let dim = entry.dim.ok_or_else(|| {
                        D::Error::custom(format!("vect entry {key} lacks \"dim\""))
                    })?;
                    let transpositions = match entry.transpositions {
                        None => Vec::new(),
                        Some(TranspositionsJson::Matrices(ms)) => ms
                            .iter()
                            .map(|rows| {
                                let parsed: Result<Vec<Vec<crate::linalg::Q>>, _> = rows
                                    .iter()
                                    .map(|r| r.iter().map(|s| parse_q(s)).collect())
                                    .collect();
                                parsed.and_then(QMatrix::from_rows)
                            })
                            .collect::<Result<Vec<_>, _>>()
                            .map_err(D::Error::custom)?,
                        Some(TranspositionsJson::Perms(p)) if p.is_empty() => Vec::new(),
                        Some(TranspositionsJson::Perms(_)) => {
                            return Err(D::Error::custom(format!(
                                "vect entry {key} carries index permutations"
                            )))
                        }
                    };
                    module
                        .insert_vect(key, dim, transpositions)
                        .map_err(D::Error::custom)?;
                }
            }
        }
        Ok(module)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{qi, QMatrix};

    fn corolla3(v: &str, legs: [&str; 3]) -> GObject {
        GObject::corolla(v, 0, &legs.map(FlagId::from))
    }

    #[test]
    fn adjacent_factorisation_reconstructs_permutations() {
        for n in 0..5usize {
            for p in (0..n).permutations(n) {
                let swaps = perm::adjacent_factorisation(&p);
                let mut rebuilt = perm::identity(n);
                for &t in swaps.iter().rev() {
                    let mut s = perm::identity(n);
                    s.swap(t, t + 1);
                    rebuilt = perm::compose(&rebuilt, &s);
                }
                // rebuilt = s_{t1} o s_{t2} o ... applied right-to-left.
                let mut direct = perm::identity(n);
                for &t in &swaps {
                    let mut s = perm::identity(n);
                    s.swap(t, t + 1);
                    direct = perm::compose(&s, &direct);
                }
                assert_eq!(direct, p, "n={n}");
                assert_eq!(rebuilt, p, "n={n} (fold order)");
            }
        }
    }

    #[test]
    fn evaluate_products_over_components() {
        let p = SModule::one_point(GNKey::new(0, 3));
        let one = corolla3("v", ["a", "b", "c"]);
        let lab = LegLabeling::sorted(&one);
        assert_eq!(
            p.evaluate(&one, &lab, false).unwrap(),
            Evaluated::Set(vec![vec!["x".to_string()]])
        );

        let two = GObject::tensor(&[corolla3("v", ["a", "b", "c"]), corolla3("w", ["x", "y", "z"])]);
        let lab2 = LegLabeling::sorted(&two);
        assert_eq!(
            p.evaluate(&two, &lab2, false).unwrap(),
            Evaluated::Set(vec![vec!["x".to_string(), "x".to_string()]])
        );

        let outside = GObject::corolla("v", 2, &["a".into()]);
        let lab3 = LegLabeling::sorted(&outside);
        assert_eq!(
            p.evaluate(&outside, &lab3, false).unwrap(),
            Evaluated::Set(Vec::new())
        );
        assert_eq!(
            p.evaluate(&outside, &lab3, true),
            Err(EvalError::MissingCarrier(GNKey::new(2, 1)))
        );

        // Empty object: the empty product is a single empty tuple.
        let empty = GObject::empty();
        assert_eq!(
            p.evaluate(&empty, &LegLabeling::sorted(&empty), true).unwrap(),
            Evaluated::Set(vec![Vec::new()])
        );
    }

    /// The regular S4-set: elements are the 24 permutations, generators act
    /// by left multiplication.
    fn regular_s4() -> SModule {
        let elems: Vec<Vec<usize>> = (0..4).permutations(4).collect();
        let names: Vec<String> = elems.iter().map(|p| format!("{p:?}")).collect();
        let gen = |i: usize| -> Vec<usize> {
            let mut s = perm::identity(4);
            s.swap(i, i + 1);
            elems
                .iter()
                .map(|p| {
                    let q = perm::compose(&s, p);
                    elems.iter().position(|r| r == &q).unwrap()
                })
                .collect()
        };
        let mut m = SModule::new(Base::Set, true);
        m.insert_set(GNKey::new(0, 4), names, vec![gen(0), gen(1), gen(2)])
            .unwrap();
        m
    }

    #[test]
    fn act_identity_is_identity() {
        let p = regular_s4();
        let obj = GObject::corolla("v", 0, &["1".into(), "2".into(), "3".into(), "4".into()]);
        let id = GMorphism::identity(&obj);
        match p.act(&id).unwrap() {
            CarrierMap::Set(map) => assert_eq!(map, (0..24).collect::<Vec<_>>()),
            _ => panic!("set module"),
        }
    }

    #[test]
    fn leg_transposition_acts_as_left_multiplication() {
        let p = regular_s4();
        let legs: Vec<FlagId> = ["1", "2", "3", "4"].map(FlagId::from).to_vec();
        let obj = GObject::corolla("v", 0, &legs);
        // Swap legs 1 and 2: the target leg "1" comes from source leg "2".
        let mut leg_map = BTreeMap::new();
        leg_map.insert(FlagId::from("1"), FlagId::from("2"));
        leg_map.insert(FlagId::from("2"), FlagId::from("1"));
        leg_map.insert(FlagId::from("3"), FlagId::from("3"));
        leg_map.insert(FlagId::from("4"), FlagId::from("4"));
        let iso = GMorphism::from_bijections(
            &obj,
            &obj,
            leg_map,
            BTreeMap::from([("v".into(), "v".into())]),
        )
        .unwrap();
        let CarrierMap::Set(map) = p.act(&iso).unwrap() else {
            panic!("set module")
        };
        // Oracle: left multiplication by the transposition (0 1) on the
        // regular set.
        let elems: Vec<Vec<usize>> = (0..4).permutations(4).collect();
        let mut s = perm::identity(4);
        s.swap(0, 1);
        for (i, e) in elems.iter().enumerate() {
            let expected = elems
                .iter()
                .position(|r| r == &perm::compose(&s, e))
                .unwrap();
            assert_eq!(map[i], expected);
        }
    }

    #[test]
    fn component_swap_swaps_factors() {
        let mut p = SModule::new(Base::Set, true);
        p.insert_set(
            GNKey::new(0, 3),
            vec!["a".into(), "b".into()],
            vec![perm::identity(2), perm::identity(2)],
        )
        .unwrap();
        let u = corolla3("v", ["a", "b", "c"]);
        let w = corolla3("v", ["a", "b", "c"]);
        let swap = GMorphism::symmetry(&u, &w).unwrap();
        let CarrierMap::Set(map) = p.act(&swap).unwrap() else {
            panic!("set module")
        };
        // Tuples in order (a,a),(a,b),(b,a),(b,b): the swap exchanges the
        // middle two.
        assert_eq!(map, vec![0, 2, 1, 3]);
    }

    #[test]
    fn act_is_functorial_on_sets_and_spaces() {
        let p = regular_s4();
        let legs: Vec<FlagId> = ["1", "2", "3", "4"].map(FlagId::from).to_vec();
        let obj = GObject::corolla("v", 0, &legs);
        let make = |pairs: [(&str, &str); 4]| {
            let lm: BTreeMap<FlagId, FlagId> = pairs
                .iter()
                .map(|(a, b)| (FlagId::from(*a), FlagId::from(*b)))
                .collect();
            GMorphism::from_bijections(
                &obj,
                &obj,
                lm,
                BTreeMap::from([("v".into(), "v".into())]),
            )
            .unwrap()
        };
        let f = make([("1", "2"), ("2", "1"), ("3", "3"), ("4", "4")]);
        let g = make([("1", "1"), ("2", "3"), ("3", "2"), ("4", "4")]);
        let fg = f.compose(&g).unwrap();
        let CarrierMap::Set(mf) = p.act(&f).unwrap() else { panic!() };
        let CarrierMap::Set(mg) = p.act(&g).unwrap() else { panic!() };
        let CarrierMap::Set(mfg) = p.act(&fg).unwrap() else { panic!() };
        let composed: Vec<usize> = mf.iter().map(|&i| mg[i]).collect();
        assert_eq!(mfg, composed);

        // Vect version: the standard 3-dim permutation representation.
        let mut v = SModule::new(Base::Vect, true);
        let perm_mat = |a: usize, b: usize| {
            let mut p = perm::identity(3);
            p.swap(a, b);
            QMatrix::permutation(&p)
        };
        v.insert_vect(GNKey::new(0, 3), 3, vec![perm_mat(0, 1), perm_mat(1, 2)])
            .unwrap();
        let tri = corolla3("v", ["a", "b", "c"]);
        let mk = |pairs: [(&str, &str); 3]| {
            let lm: BTreeMap<FlagId, FlagId> = pairs
                .iter()
                .map(|(a, b)| (FlagId::from(*a), FlagId::from(*b)))
                .collect();
            GMorphism::from_bijections(
                &tri,
                &tri,
                lm,
                BTreeMap::from([("v".into(), "v".into())]),
            )
            .unwrap()
        };
        let f2 = mk([("a", "b"), ("b", "a"), ("c", "c")]);
        let g2 = mk([("a", "a"), ("b", "c"), ("c", "b")]);
        let fg2 = f2.compose(&g2).unwrap();
        let CarrierMap::Vect(a) = v.act(&f2).unwrap() else { panic!() };
        let CarrierMap::Vect(b) = v.act(&g2).unwrap() else { panic!() };
        let CarrierMap::Vect(ab) = v.act(&fg2).unwrap() else { panic!() };
        assert_eq!(ab, b.mul(&a));
    }

    #[test]
    fn act_rejects_non_invertible() {
        let p = SModule::one_point(GNKey::new(0, 3));
        let obj = corolla3("v", ["a", "b", "c"]);
        let gluing = GMorphism::gluing(&obj, &[("a".into(), "b".into())]).unwrap();
        assert_eq!(p.act(&gluing), Err(ActError::NotInvertible));
    }

    #[test]
    fn equivariance_trivial_actions_pass() {
        let p = SModule::one_point(GNKey::new(0, 3));
        assert!(p.check_equivariance().passed());
        assert!(regular_s4().check_equivariance().passed());
    }

    #[test]
    fn equivariance_braid_failure_is_named() {
        let mut p = SModule::new(Base::Set, true);
        // s0 swaps the two elements, s1 is the identity: the braid relation
        // s0 s1 s0 = s1 s0 s1 fails.
        p.insert_set(
            GNKey::new(0, 3),
            vec!["a".into(), "b".into()],
            vec![vec![1, 0], vec![0, 1]],
        )
        .unwrap();
        let report = p.check_equivariance();
        assert!(!report.passed());
        assert!(report
            .failures
            .contains(&EquivarianceFailure::Braid {
                key: GNKey::new(0, 3),
                i: 0
            }));
        assert!(report.failures[0].to_string().contains("braid"));
    }

    #[test]
    fn sign_representation_passes() {
        let mut p = SModule::new(Base::Vect, true);
        let neg = QMatrix::from_rows(vec![vec![qi(-1)]]).unwrap();
        p.insert_vect(GNKey::new(0, 3), 1, vec![neg.clone(), neg])
            .unwrap();
        assert!(p.check_equivariance().passed());
    }

    #[test]
    fn evaluate_is_multiplicative_under_tensor() {
        let mut p = SModule::new(Base::Set, true);
        p.insert_set(
            GNKey::new(0, 3),
            vec!["a".into(), "b".into()],
            vec![perm::identity(2), perm::identity(2)],
        )
        .unwrap();
        p.insert_set(GNKey::new(1, 1), vec!["z".into()], vec![])
            .unwrap();
        let x = corolla3("v", ["a", "b", "c"]);
        let y = GObject::corolla("w", 1, &["m".into()]);
        let xy = GObject::tensor(&[x.clone(), y.clone()]);
        let ex = p.evaluate(&x, &LegLabeling::sorted(&x), true).unwrap();
        let ey = p.evaluate(&y, &LegLabeling::sorted(&y), true).unwrap();
        let exy = p.evaluate(&xy, &LegLabeling::sorted(&xy), true).unwrap();
        let (Evaluated::Set(tx), Evaluated::Set(ty), Evaluated::Set(txy)) = (ex, ey, exy) else {
            panic!()
        };
        let product: Vec<Vec<String>> = tx
            .iter()
            .cartesian_product(ty.iter())
            .map(|(a, b)| a.iter().chain(b.iter()).cloned().collect())
            .collect();
        assert_eq!(txy, product);
    }

    #[test]
    fn smodule_json_round_trips() {
        let mut p = SModule::new(Base::Vect, true);
        let neg = QMatrix::from_rows(vec![vec![qi(-1)]]).unwrap();
        p.insert_vect(GNKey::new(0, 3), 1, vec![neg.clone(), neg])
            .unwrap();
        let json = serde_json::to_string(&p).unwrap();
        let back: SModule = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);

        let q = SModule::one_point(GNKey::new(0, 3));
        let json = serde_json::to_string(&q).unwrap();
        let back: SModule = serde_json::from_str(&json).unwrap();
        assert_eq!(back, q);

        // Entries without transpositions get the trivial action.
        let raw = r#"{"base":"set","entries":[{"g":0,"n":3,"elements":["x"]}]}"#;
        let parsed: SModule = serde_json::from_str(raw).unwrap();
        assert_eq!(parsed, q);
        assert!(parsed.stable_marked());
    }
}
