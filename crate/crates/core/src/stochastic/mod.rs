//! Stochastic encoders and decoders: marginalization, mixtures, the
//! Bayesian change of variables, Markov chains, VAEs, conditional and
//! augmented flows, and ELBO-based consistency diagnostics.

pub mod chain;
pub mod conditional;
pub mod cov;
pub mod kernels;
pub mod limit;
pub mod vae;

pub use chain::{cov_markov_chain, cov_markov_chain_path, gaussian_chain, markov_path_spread, MarkovChainModel};
pub use conditional::{
    cov_augmented, cov_conditional_bijective, cov_conditional_nf_pair, AffineConditionalFlow, AugmentedEstimate,
    ConditionalFlow, ConditionalFlowPair, FlowKernel,
};
pub use cov::{
    bayes_spread, cov_bayes, cov_decoder_marginalization, cov_gmm, elbo, gmm_posterior, kl_variance_diagnostic,
    ElboEstimate, KlVarianceScore, MarginalEstimate, Marginalization,
};
pub use kernels::{AffineFn, ConditionalKernel, GaussianKernel, Unconditional};
pub use limit::{NarrowDecoder, NarrowEncoder};
pub use vae::{cov_vae, VaeModel};
