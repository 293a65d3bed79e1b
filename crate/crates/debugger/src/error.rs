use tardisp_core::frontend::{FrontendError, SyntaxError};
use tardisp_core::storage::{FixtureError, StorageError};
use tardisp_core::timetravel::TimeTravelError;
use tardisp_core::tracer::TraceError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    TimeTravel(#[from] TimeTravelError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error("the console is read-only; INSERT, UPDATE and DELETE are not allowed")]
    ReadOnly,
    #[error("no session {0}")]
    UnknownSession(String),
    #[error("no variable {0}")]
    UnknownVariable(String),
    #[error("step {step} is outside the run ({first}..={last})")]
    OutOfRange { step: u64, first: u64, last: u64 },
    #[error("{0}")]
    BadRequest(String),
}

impl SessionError {
    /// Stable machine-readable code for the error envelope.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::Frontend(FrontendError::Syntax(_)) | SessionError::Syntax(_) => "syntax_error",
            SessionError::Frontend(FrontendError::UndeclaredVariable { .. }) => "undeclared_variable",
            SessionError::Frontend(FrontendError::Invalid { .. }) => "invalid_procedure",
            SessionError::Trace(e) | SessionError::TimeTravel(TimeTravelError::Trace(e)) => trace_code(e),
            SessionError::TimeTravel(e) => match e {
                TimeTravelError::UnknownStep { .. } => "unknown_step",
                TimeTravelError::UnknownStepName(_) => "unknown_step_name",
                TimeTravelError::NoKeyColumns => "no_key_columns",
                TimeTravelError::DuplicateDiffKey(_) => "duplicate_diff_key",
                TimeTravelError::Engine(_) => "query_error",
                TimeTravelError::Storage(_) => "storage_error",
                TimeTravelError::Invalid(_) => "invalid_query",
                TimeTravelError::Trace(_) => unreachable!(),
            },
            SessionError::Storage(_) => "storage_error",
            SessionError::Fixture(_) => "fixture_error",
            SessionError::ReadOnly => "read_only",
            SessionError::UnknownSession(_) => "unknown_session",
            SessionError::UnknownVariable(_) => "unknown_variable",
            SessionError::OutOfRange { .. } => "out_of_range",
            SessionError::BadRequest(_) => "bad_request",
        }
    }

    /// Line and column for errors tied to a source position.
    pub fn position(&self) -> Option<(usize, usize)> {
        match self {
            SessionError::Frontend(e) => Some(e.position()),
            SessionError::Syntax(e) => Some((e.line, e.col)),
            _ => None,
        }
    }

    pub fn is_not_found(&self) -> bool {
        matches!(
            self,
            SessionError::UnknownSession(_)
                | SessionError::UnknownVariable(_)
                | SessionError::Trace(TraceError::UnknownVariable(_) | TraceError::UnknownTrace(_))
        )
    }

    pub fn is_internal(&self) -> bool {
        matches!(self, SessionError::Storage(_) | SessionError::Trace(TraceError::Storage(_) | TraceError::MalformedTrace(_)))
    }
}

fn trace_code(e: &TraceError) -> &'static str {
    match e {
        TraceError::UnknownTrace(_) => "unknown_trace",
        TraceError::UnknownVariable(_) => "unknown_variable",
        TraceError::UnboundAtStep { .. } => "unbound_variable",
        TraceError::NotAScalar(_) | TraceError::NotATable(_) => "wrong_variable_kind",
        TraceError::Engine(_) => "query_error",
        _ => "trace_error",
    }
}
