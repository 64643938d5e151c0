use thiserror::Error;

/// Errors shared across the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse failure in {path} at line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("open or non-manifold mesh: facet {facet:?} is shared by {count} simplices")]
    NonManifold { facet: Vec<usize>, count: usize },
    #[error("mesh is disconnected")]
    Disconnected,
    #[error("mesh is not orientable (conflict at simplex {simplex})")]
    NonOrientable { simplex: usize },
    #[error("degenerate simplex {simplex}: measure {measure:e} below tolerance {tol:e}")]
    DegenerateSimplex {
        simplex: usize,
        measure: f64,
        tol: f64,
    },
    #[error("embedding violation: non-adjacent simplices {a} and {b} intersect")]
    SelfIntersection { a: usize, b: usize },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("region selection is empty")]
    EmptySelection,
    #[error("region selection is disconnected")]
    DisconnectedSelection,
    #[error("region selection covers the whole manifold; no boundary")]
    SelectionIsWholeManifold,
    #[error("target set is empty")]
    EmptyTarget,
    #[error("chart build failed at simplex {simplex}: {reason}")]
    ChartBuild { simplex: usize, reason: String },
    #[error("no valid chart radius found down to diam * 2^-{max_level}: manifold too irregular at mesh scale")]
    NoValidEpsilon { max_level: u32 },
    #[error("covering check failed: node {node:?} is not covered by any patch")]
    CoveringFailure { node: [f64; 3] },
    #[error("partition of unity undefined: zero denominator at node {node:?}")]
    ZeroDenominator { node: [f64; 3] },
    #[error("field does not vanish outside the compact support: |u| = {value:e} at node {node:?}")]
    NonVanishing { value: f64, node: [f64; 3] },
    #[error("sets touch: dist(complement, support) = 0")]
    TouchingSets,
    #[error("cutoff out of range [0, 1]: value {value} at vertex {vertex}")]
    CutoffOutOfRange { value: f64, vertex: usize },
    #[error("domain mismatch: {reason}")]
    DomainMismatch { reason: String },
    #[error("boundary pull-back is not the graph of a function: abscissa {abscissa} visited twice")]
    NotAGraph { abscissa: f64 },
    #[error("extension disagrees with input on the region: residual {residual:e} at node {node:?}")]
    AgreementResidual { residual: f64, node: [f64; 3] },
    #[error("config error in field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("fixture `{name}` drifted: stored {stored}, recomputed {current}, tolerance {tol}")]
    FixtureDrift {
        name: String,
        stored: f64,
        current: f64,
        tol: f64,
    },
    #[error("no records to emit")]
    NoRecords,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
