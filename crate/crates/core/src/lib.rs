//! Toolkit for interactive OpenMP programming books.
//!
//! - [`protocol`]: kernel messaging wire format, signing, connection files
//! - [`exec`]: compile and run OpenMP cells, judge determinism
//! - [`kernel`]: the notebook kernel serving the five protocol channels
//! - [`book`]: markdown chapters to deterministic notebooks
//! - [`validator`]: compile/run every example of a book and report
//! - [`authoring`]: LLM prompt sequences, outline review and merging

pub mod authoring;
pub mod book;
pub mod canonical;
pub mod exec;
pub mod kernel;
pub mod protocol;
pub mod validator;

pub use exec::{CellDirectives, ExecutionOutcome, Expect, Lang, ToolchainConfig};
pub use protocol::{ConnectionInfo, KernelMessage, MessageHeader, MsgType, WireFrames};

/// Kernel name used when a manifest or install does not choose one.
pub const DEFAULT_KERNEL_NAME: &str = "ompbook";
pub const KERNEL_DISPLAY_NAME: &str = "OpenMP (C/C++/Fortran)";
