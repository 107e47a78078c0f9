//! Dynamic top-k range reporting in a simulated external-memory model.

pub mod aurs;
pub mod bench;
pub mod bigk;
pub mod bitpack;
pub mod em;
pub mod heap_select;
pub mod error;
pub mod facade;
pub mod flgroup;
pub mod key;
pub mod osbtree;
pub mod sketch;
pub mod smallk;
pub mod wbb;

pub use error::{Error, Result};
