use thiserror::Error;

use crate::Category;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required column `{column}` (logical field `{field}`)")]
    MissingColumn { field: &'static str, column: String },

    #[error("invalid column mapping: {0}")]
    InvalidMapping(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("{category}: need at least 2 golfers to fit the between-golfer variance, found {found}")]
    TooFewGolfers { category: Category, found: usize },

    #[error("aggregates passed to one fit span several categories ({first} and {other})")]
    MixedCategories { first: Category, other: Category },

    #[error("golfer {golfer} ({category}): noise and prior variance are both zero")]
    DegenerateModel { golfer: String, category: Category },

    #[error("golfer {golfer} ({category}): posterior variance {variance} is not positive")]
    NonPositiveVariance {
        golfer: String,
        category: Category,
        variance: f64,
    },

    #[error("significance level {0} is outside the open interval (0, 1)")]
    InvalidAlpha(f64),

    #[error("{0}")]
    EmptyInput(&'static str),

    #[error("{category}: {found} golfers, at least {required} needed")]
    TooFewForPercentiles {
        category: Category,
        found: usize,
        required: usize,
    },

    #[error("{category}: top-{k} requested but only {available} golfers")]
    KTooLarge {
        category: Category,
        k: usize,
        available: usize,
    },

    #[error("no posterior for golfer {golfer} ({category})")]
    Misaligned { golfer: String, category: Category },

    #[error("no fit found for category {0}")]
    MissingFit(Category),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("replication {index}: {source}")]
    Replication {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
