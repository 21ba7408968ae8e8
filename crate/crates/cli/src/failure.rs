use std::fmt;
use std::process::ExitCode;

/// Exit status classes of the command-line contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad flags or configuration.
    Usage = 1,
    /// Unreadable, malformed or unusable input data.
    Data = 2,
    /// A bug or an unexpected environment failure.
    Internal = 3,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

pub type CliResult<T> = Result<T, Failure>;

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self {
            kind: Kind::Usage,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self {
            kind: Kind::Data,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn internal(msg: impl fmt::Display) -> Self {
        Self {
            kind: Kind::Internal,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind as u8)
    }
}

fn kind_of(err: &ebgolf::Error) -> Kind {
    use ebgolf::Error as E;
    match err {
        E::InvalidAlpha(_) | E::InvalidConfig(_) | E::InvalidMapping(_) | E::KTooLarge { .. } => Kind::Usage,
        E::Replication { source, .. } => kind_of(source),
        E::MissingColumn { .. }
        | E::Row { .. }
        | E::TooFewGolfers { .. }
        | E::MixedCategories { .. }
        | E::DegenerateModel { .. }
        | E::NonPositiveVariance { .. }
        | E::EmptyInput(_)
        | E::TooFewForPercentiles { .. }
        | E::Misaligned { .. }
        | E::MissingFit(_)
        | E::Csv(_)
        | E::Json(_)
        | E::Io(_) => Kind::Data,
    }
}

impl From<ebgolf::Error> for Failure {
    fn from(err: ebgolf::Error) -> Self {
        Self {
            kind: kind_of(&err),
            error: err.into(),
        }
    }
}

/// Attaches context to a failing result without changing its exit class.
pub trait Context<T> {
    fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> CliResult<T>;
    fn with_context<C: fmt::Display + Send + Sync + 'static>(self, f: impl FnOnce() -> C) -> CliResult<T>;
}

impl<T, E: Into<Failure>> Context<T> for Result<T, E> {
    fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> CliResult<T> {
        self.map_err(|e| {
            let f: Failure = e.into();
            Failure {
                kind: f.kind,
                error: f.error.context(msg),
            }
        })
    }

    fn with_context<C: fmt::Display + Send + Sync + 'static>(self, f: impl FnOnce() -> C) -> CliResult<T> {
        self.context(f())
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        ebgolf::Error::Io(err).into()
    }
}
