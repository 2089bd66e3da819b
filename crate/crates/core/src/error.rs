use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by all modules.
#[derive(Debug, Error)]
pub enum Error {
    /// A potential or vector field returned NaN/±∞ at a non-singular point.
    #[error("non-finite value encountered at {context}")]
    NonFinite { context: String },

    /// Khasminskii criterion unusable: α_{t*} ≥ 1 at the chosen t*.
    #[error("alpha_t = {alpha} >= 1 at t* = {t_star}; Khasminskii bound unusable")]
    AlphaTooLarge { alpha: f64, t_star: f64 },

    /// A singular k- or ball-integral did not converge under refinement.
    #[error("quadrature did not converge: {context} (last two estimates {a}, {b})")]
    QuadratureFailure { context: String, a: f64, b: f64 },

    /// Born iteration diverged and no fallback was possible.
    #[error("Born iteration diverged after {iterations} iterations (residual {residual})")]
    BornDivergence { iterations: usize, residual: f64 },

    /// Diagonal-cell correction of the Lippmann-Schwinger kernel failed.
    #[error("singular quadrature of the diagonal kernel cell failed: {context}")]
    SingularQuadrature { context: String },

    /// A cutoff profile has mass at k = 0.
    #[error("cutoff support violation: {context}")]
    SupportViolation { context: String },

    /// The U part of an ℰ-decomposition failed the L^p quadrature test.
    #[error("decomposition not in E: {context}")]
    NotInE { context: String },

    /// The discrete field quadratic form came out below -1e-6.
    #[error("negative effective action {value}; kernel PSD violation or quadrature failure")]
    NegativeAction { value: f64 },

    /// e^{-∫V} exceeded 1e300 on some path.
    #[error("path weight overflow at sample {sample_index} (exponent {exponent})")]
    WeightOverflow { sample_index: u64, exponent: f64 },

    /// Log-linear energy fit residual above the declared threshold.
    #[error("energy fit unstable: residual {residual} > threshold {threshold}")]
    FitUnstable { residual: f64, threshold: f64 },

    /// W(x) ≥ γ|x|^{2n} failed on the test shell.
    #[error("growth condition violated on test shell: {context}")]
    GrowthViolation { context: String },

    /// No (c, ε) pair satisfies the confining-case-2 smallness conditions.
    #[error("no feasible (c_level, eps) pair on the scanned lattice: {context}")]
    ParameterInfeasible { context: String },

    /// Σ ≤ E in the non-confining envelope.
    #[error("gap violation: Sigma = {sigma} <= E = {energy}")]
    GapViolation { sigma: f64, energy: f64 },

    /// Power iteration sup norm grew monotonically over 5 iterations.
    #[error("power iteration diverged: {context}")]
    Divergence { context: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
