use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Operand shapes do not line up.
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// Every softmax entry was masked out.
    EmptySupport,
    /// A sequence is shorter than an operation requires.
    Length { needed: usize, got: usize },
    /// A NaN or infinity showed up where a finite value was required.
    NumericalFault(String),
    /// A storyline names an entity its event never declared.
    DanglingReference { line: usize, name: String },
    /// Malformed input data.
    Schema(String),
    /// An entity has no projected image vector yet.
    UnprojectedEntity(String),
    /// Requested synthetic corpus cannot be built.
    Infeasible(String),
    /// No unvisited candidate remains at a generation step.
    ExhaustedVocabulary { step: usize },
    /// A trajectory takes a zero-probability action.
    InvalidTrajectory { step: usize },
    /// Unseen vocabulary vectors do not match the trained dimension.
    Transfer { expected: usize, got: usize },
    /// Invalid configuration value.
    Config(String),
    /// A wrapped error with phase information.
    Context {
        context: String,
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub fn dimension(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: alloc::boxed::Box::new(self),
        }
    }

    /// The innermost error, with all context layers stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Error::EmptySupport => f.write_str("softmax: every entry is masked"),
            Error::Length { needed, got } => {
                write!(f, "sequence length {got} is shorter than required {needed}")
            }
            Error::NumericalFault(what) => write!(f, "numerical fault: {what}"),
            Error::DanglingReference { line, name } => {
                write!(
                    f,
                    "line {line}: storyline references undeclared entity {name:?}"
                )
            }
            Error::Schema(msg) => write!(f, "schema error: {msg}"),
            Error::UnprojectedEntity(name) => {
                write!(f, "entity {name:?} has no projected image vector")
            }
            Error::Infeasible(msg) => write!(f, "infeasible request: {msg}"),
            Error::ExhaustedVocabulary { step } => {
                write!(f, "no unvisited candidate left at step {step}")
            }
            Error::InvalidTrajectory { step } => {
                write!(f, "trajectory revisits an entity at step {step}")
            }
            Error::Transfer { expected, got } => {
                write!(
                    f,
                    "vector dimension {got} does not match trained dimension {expected}"
                )
            }
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Context { context, source } => write!(f, "{context}: {source}"),
        }
    }
}

impl core::error::Error for Error {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        match self {
            Error::Context { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}
