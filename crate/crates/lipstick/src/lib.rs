//! Lipstick: a workflow engine for a Pig Latin fragment that records
//! fine-grained, semiring-based provenance as a graph while it executes,
//! and answers provenance queries (zoom, deletion propagation, subgraph,
//! dependency) over that graph.
//!
//! The crate is organised as a pipeline:
//!
//! * [`relmodel`] — nested-relational bags, schemas, and their text format.
//! * [`pigparse`] — parser and type checker for the Pig Latin fragment.
//! * [`provgraph`] — the provenance graph store, its polynomial semantics,
//!   and bit-exact serialization.
//! * [`evalengine`] — evaluates programs over annotated relations while
//!   extending the provenance graph.
//! * [`workflow`] — module/workflow model, definition files, and the
//!   execution driver for single executions and sequences.
//! * [`provquery`] — read-only queries over frozen graphs.
//! * [`workflowgen`] — benchmark workflow generators and the bench runner.

pub mod evalengine;
pub mod pigparse;
pub mod provgraph;
pub mod provquery;
pub mod relmodel;
pub mod workflow;
pub mod workflowgen;
