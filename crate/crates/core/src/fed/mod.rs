//! Round protocol: client-side local training, cluster selection and
//! server-side aggregation, plus the point-weight FedAvg baseline.
//!
//! Only localized-global tuples (and cluster ids) ever leave a client: the
//! [`Upload`] type has no slot for personal parameters.

mod client;
mod server;

pub use client::{
    client_update, client_update_cfedbayes, fedavg_update, select_cluster, ClientState,
    LocalConfig, LocalOutcome,
};
pub use server::{
    aggregate, aggregate_clusters, fedavg_aggregate, sample_participants, sparsity_mask, RoundPlan,
    ServerState, SparsityMask, Upload,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Personalized Gaussian posteriors.
    PFedBayes,
    /// Spike-and-slab posteriors.
    SFedBayes,
    /// `K` global priors, one selected per client per round.
    CFedBayes,
    /// Point-weight averaging baseline.
    FedAvg,
}

impl Algorithm {
    pub fn is_sparse(self) -> bool {
        self == Algorithm::SFedBayes
    }
}
