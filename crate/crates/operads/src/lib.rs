//! Dual graphs and the operadic structures built on them.
//!
//! The crate implements, over finite sets and exact-rational vector spaces:
//!
//! * [`graph`] — dual graphs (flags, vertices, incidence, involution, genus,
//!   optional flag directions) and their local invariants;
//! * [`canon`] — canonical labelling, isomorphism testing, and automorphism
//!   groups at desk scale;
//! * [`category`] — the symmetric monoidal category of dual graphs: objects,
//!   gluing morphisms, composition, tensor, symmetry, and flavor membership
//!   (stable, forest, directed, prop, groupoid);
//! * [`smodule`] — finitely supported modules of symmetric-group
//!   representations indexed by genus and arity;
//! * [`free`] — stable-graph enumeration, the free modular operad by
//!   decorated graphs modulo automorphism, and the substitution monad with
//!   its law checkers;
//! * [`end`] — endomorphism operads of a space with bilinear form, realised
//!   by tensor contraction along glue-graph edges;
//! * [`morita`] — checkers for one-dimensional classifications: associative
//!   algebras with trace and Morita contexts with trace.
//!
//! All arithmetic on linear data is exact rational ([`linalg`]); every
//! operation is a pure function over immutable values and all set-like
//! outputs are emitted in a deterministic sorted order.

pub mod canon;
pub mod category;
pub mod end;
pub mod free;
pub mod graph;
pub mod linalg;
pub mod morita;
pub mod smodule;
