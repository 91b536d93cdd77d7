//! Error types for the engine crates.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors produced by the computation graph and parameter store.
#[derive(Debug, Clone, PartialEq)]
pub enum DiffError {
    /// Operand shapes are incompatible for the named op.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A placeholder input was never bound before forward.
    UnboundInput { node: usize },
    /// backward was called on a non-scalar root.
    NonScalarRoot { shape: Vec<usize> },
    /// backward was called before forward evaluated the root.
    BackwardBeforeForward,
    /// A tensor with NaN/Inf entries crossed an API boundary.
    NonFinite { context: &'static str },
    /// Parameter slot name registered twice.
    DuplicateSlot { name: String },
    /// Parameter slot name not found in the store.
    UnknownSlot { name: String },
    /// Optimizer learning rate must be positive.
    InvalidLearningRate,
    /// Tensor construction with inconsistent shape/data length.
    BadTensor {
        shape: Vec<usize>,
        data_len: usize,
    },
}

impl fmt::Display for DiffError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")
            }
            DiffError::UnboundInput { node } => write!(f, "input node {node} is unbound"),
            DiffError::NonScalarRoot { shape } => {
                write!(f, "backward root must be scalar, got shape {shape:?}")
            }
            DiffError::BackwardBeforeForward => {
                write!(f, "backward called before forward evaluated the root")
            }
            DiffError::NonFinite { context } => {
                write!(f, "non-finite value encountered in {context}")
            }
            DiffError::DuplicateSlot { name } => write!(f, "parameter slot `{name}` already exists"),
            DiffError::UnknownSlot { name } => write!(f, "unknown parameter slot `{name}`"),
            DiffError::InvalidLearningRate => write!(f, "learning rate must be > 0"),
            DiffError::BadTensor { shape, data_len } => {
                write!(f, "tensor data length {data_len} does not match shape {shape:?}")
            }
        }
    }
}

impl core::error::Error for DiffError {}

/// Errors from parsing a reasoning program record.
#[derive(Debug, Clone, PartialEq)]
pub enum ParseError {
    /// The record is not valid JSON of the expected shape.
    MalformedJson(String),
    /// Opcode unknown after consolidation.
    UnknownOpcode { name: String },
    /// A dependency references the current or a later step.
    ForwardReference { step: usize, dep: usize },
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseError::MalformedJson(msg) => write!(f, "malformed program record: {msg}"),
            ParseError::UnknownOpcode { name } => write!(f, "unknown opcode `{name}`"),
            ParseError::ForwardReference { step, dep } => {
                write!(f, "step {step} depends on step {dep}, which is not an earlier step")
            }
        }
    }
}

impl core::error::Error for ParseError {}

/// Errors from plan instantiation and execution.
#[derive(Debug, Clone, PartialEq)]
pub enum ExecError {
    /// Program failed validation; first diagnostic is reported.
    InvalidProgram { step: usize, reason: String },
    /// A text argument has no embedding in the feature set.
    MissingEmbedding { arg: String },
    /// Answer vocabulary does not cover a required answer/candidate.
    VocabMismatch { what: String },
    /// Ground truth required by the policy but not supplied.
    GtRequired { step: usize },
    /// Ground truth not available for a step the oracle-substitute mode needs.
    GtMissingForStep { step: usize },
    /// A step produced NaN/Inf values.
    NonFinite { step: usize },
    /// A module was wired with missing or wrongly-kinded inputs.
    BadModuleInput { op: String, reason: String },
    /// Graph-level failure while wiring or evaluating a module.
    Graph(DiffError),
}

impl fmt::Display for ExecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecError::InvalidProgram { step, reason } => {
                write!(f, "invalid program at step {step}: {reason}")
            }
            ExecError::MissingEmbedding { arg } => {
                write!(f, "no embedding for text argument `{arg}`")
            }
            ExecError::VocabMismatch { what } => write!(f, "answer vocabulary mismatch: {what}"),
            ExecError::GtRequired { step } => {
                write!(f, "policy epsilon > 0 but no ground truth supplied (step {step})")
            }
            ExecError::GtMissingForStep { step } => {
                write!(f, "oracle substitution needs ground truth for step {step}")
            }
            ExecError::NonFinite { step } => write!(f, "non-finite output at step {step}"),
            ExecError::BadModuleInput { op, reason } => {
                write!(f, "bad input for module `{op}`: {reason}")
            }
            ExecError::Graph(e) => write!(f, "graph error: {e}"),
        }
    }
}

impl From<DiffError> for ExecError {
    fn from(e: DiffError) -> Self {
        ExecError::Graph(e)
    }
}

impl core::error::Error for ExecError {}

/// Errors from synthetic data generation and guidance configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    /// Vocabulary cannot satisfy a uniqueness constraint.
    VocabTooSmall { need: usize, have: usize },
    /// No template could be instantiated on the scene.
    NoSatisfiableTemplate,
    /// A name/attribute/predicate is not in the closed vocabulary.
    UnknownConcept { name: String },
    /// Oracle query target is not unique (template bug).
    NonUniqueQuery { step: usize, found: usize },
    /// Invalid generation or schedule configuration.
    InvalidConfig(String),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::VocabTooSmall { need, have } => {
                write!(f, "vocabulary too small: need {need}, have {have}")
            }
            DataError::NoSatisfiableTemplate => write!(f, "no satisfiable template for scene"),
            DataError::UnknownConcept { name } => write!(f, "unknown concept `{name}`"),
            DataError::NonUniqueQuery { step, found } => {
                write!(f, "query at step {step} expects a unique target, found {found}")
            }
            DataError::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl core::error::Error for DataError {}
