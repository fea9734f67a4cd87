//! # docrefine-core
//!
//! Instruction-driven document refinement: given a layout-annotated document
//! and a natural-language instruction, produce a refined document plus a
//! verification report (semantic consistency, layout fidelity, instruction
//! adherence), iterating under a closed feedback loop until thresholds or
//! budget are reached.
//!
//! ## Pipeline
//!
//! 1. [`layout`] — ingest (layout JSON or best-effort PDF) into a validated
//!    [`ir::DocumentIR`]: elements, XY-cut reading order, heading hierarchy,
//!    caption associations.
//! 2. [`semantics`] — extract the semantic representation: table grids,
//!    figure descriptions, provenance-linked facts and entities.
//! 3. [`plan`] — decompose the instruction into validated atomic ops.
//! 4. [`refine`] — execute ops; untargeted elements are guaranteed
//!    byte-identical, text that would overflow its box warns instead of
//!    moving neighbors.
//! 5. [`verify`] — score the result (SCS/LFI/IAR), judge per-op adherence,
//!    and emit routed corrective feedback.
//! 6. [`orchestrator`] — close the loop: feedback becomes follow-up ops or a
//!    re-decomposition, best iteration wins.
//!
//! All model access goes through [`backend::Backend`]; the scripted
//! [`backend::mock::MockBackend`] makes every run replayable offline and
//! byte-deterministic.

pub mod backend;
pub mod canon;
pub mod ir;
pub mod layout;
pub mod orchestrator;
pub mod plan;
pub mod refine;
pub mod semantics;
pub mod synth;
pub mod verify;

pub use backend::{Backend, BackendConfig, BackendError, BackendMode, BackendRequest};
pub use ir::{deserialize_ir, diff_ir, serialize_ir, validate_ir, DocumentIR, Element, ElementId};
pub use layout::{analyze, IngestSource, LayoutParams};
pub use orchestrator::{run, LoopConfig, PipelineOutcome};
pub use plan::{decompose, validate_ops, AtomicOp, Instruction};
pub use refine::{apply_ops, generate_summary, reflow, RefinementResult};
pub use semantics::{table_to_grid, understand, SemanticRep};
pub use verify::{
    compute_lfi, compute_scs, cosine, ssim, verify, GrayImage, Thresholds, VerificationReport,
};
