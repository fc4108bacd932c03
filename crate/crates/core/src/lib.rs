//! Desk-scale software-heritage data layer: a sharded content-addressable
//! store of git objects plus the cross-reference maps derived from it.

pub mod gitcore;
pub mod store;
pub mod ingest;
pub mod xref;
pub mod augment;
pub mod langmaps;
