use otfuse_core::fusion::FusionError;
use otfuse_core::model::{DatasetError, IdxError, ModelError, ModelFileError};
use otfuse_core::pipeline::PipelineError;
use otfuse_core::train::TrainError;
use thiserror::Error;

/// Failure category; decides the exit code and the tag on the error line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Architecture,
    Runtime,
    Numerical,
    Io,
    Format,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage | Kind::Architecture => 1,
            Kind::Runtime | Kind::Numerical => 2,
            Kind::Io | Kind::Format => 3,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Architecture => "architecture",
            Kind::Runtime => "runtime",
            Kind::Numerical => "numerical",
            Kind::Io => "io",
            Kind::Format => "format",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    ModelFile(#[from] ModelFileError),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Numerical(String),
}

fn model_kind(e: &ModelError) -> Kind {
    match e {
        ModelError::ArchitectureMismatch { .. } | ModelError::ActivationMismatch(_) => {
            Kind::Architecture
        }
        ModelError::NonFiniteParameter { .. } => Kind::Numerical,
        _ => Kind::Usage,
    }
}

fn train_kind(e: &TrainError) -> Kind {
    match e {
        TrainError::Model(m) => model_kind(m),
        TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteGradient { .. } => Kind::Numerical,
        TrainError::EmptyClass(_) | TrainError::EmptyDataset => Kind::Runtime,
        _ => Kind::Usage,
    }
}

impl CliError {
    pub fn kind(&self) -> Kind {
        match self {
            CliError::Usage(_) => Kind::Usage,
            CliError::Io { .. } | CliError::Csv { .. } => Kind::Io,
            CliError::ModelFile(ModelFileError::Io { .. }) => Kind::Io,
            CliError::ModelFile(_) => Kind::Format,
            CliError::Idx(IdxError::Io { .. }) => Kind::Io,
            CliError::Idx(_) => Kind::Format,
            CliError::Model(e) => model_kind(e),
            CliError::Dataset(_) => Kind::Usage,
            CliError::Fusion(FusionError::Model(e)) => model_kind(e),
            CliError::Fusion(FusionError::Ot { .. }) => Kind::Numerical,
            CliError::Fusion(_) => Kind::Usage,
            CliError::Train(e) => train_kind(e),
            CliError::Pipeline(e) => match e {
                PipelineError::Io { .. } | PipelineError::Csv(_) => Kind::Io,
                PipelineError::MalformedSpec(_) | PipelineError::Idx(_) => Kind::Format,
                PipelineError::InvalidSpec(_) => Kind::Usage,
                PipelineError::Train(t) => train_kind(t),
                PipelineError::Stage { .. } | PipelineError::AllSeedsFailed(_) => Kind::Runtime,
            },
            CliError::Numerical(_) => Kind::Numerical,
        }
    }

    /// The single error line: `otfuse error [kind]: message`.
    pub fn line(&self) -> String {
        let mut message = self.to_string();
        let mut source = std::error::Error::source(self);
        while let Some(s) = source {
            let text = s.to_string();
            if !message.contains(&text) {
                message = format!("{message}: {text}");
            }
            source = s.source();
        }
        format!(
            "otfuse error [{}]: {}",
            self.kind().tag(),
            one_line(&message)
        )
    }
}

pub fn one_line(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn csv_err(path: &std::path::Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv {
        path: path.display().to_string(),
        source,
    }
}
