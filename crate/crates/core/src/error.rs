use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("channel chain mismatch: layer {layer} expects {expected} input channels, previous layer produces {found}")]
    ChannelChain {
        layer: usize,
        expected: usize,
        found: usize,
    },

    #[error("layer {layer}: kernel {kernel} larger than padded input {padded}")]
    KernelTooLarge {
        layer: usize,
        kernel: usize,
        padded: usize,
    },

    #[error("layer {layer}: tensor holds non-finite values")]
    NonFinite { layer: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("model has no decomposable layer")]
    NoDecomposableLayer,

    #[error("genome length {found} does not match schema length {expected}")]
    GenomeLength { expected: usize, found: usize },

    #[error("gene {index} value {value} outside its domain")]
    GeneDomain { index: usize, value: f64 },

    #[error("layer {layer}: rank {rank} is not representable, nearest code is {nearest_code}")]
    UnrepresentableRank {
        layer: usize,
        rank: usize,
        nearest_code: u32,
    },

    #[error("plan does not match model: {0}")]
    PlanMismatch(String),

    #[error("layer {layer} has no maskable activation site")]
    NotMaskable { layer: usize },

    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("SVD did not converge after {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("infeasible accuracy threshold: uncompressed accuracy {base_accuracy} does not exceed acc_thr {acc_thr}")]
    Infeasible { base_accuracy: f64, acc_thr: f64 },

    #[error("warm initialization accepted only {accepted} of {wanted} individuals after {attempts} draws; lower acc_thr")]
    InitExhausted {
        accepted: usize,
        wanted: usize,
        attempts: usize,
    },

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("protocol error: {0}")]
    Protocol(String),
}
