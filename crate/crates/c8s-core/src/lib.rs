//! Hardware-free reference implementation and deterministic discrete-event
//! simulation of a confidential-Kubernetes trust fabric: emulated TEE
//! attestation, the Certificate Distribution Service (verifier / mesh CA /
//! beacon / key broker), image-policy gating at both boundaries, the raTLS
//! mesh, multi-recipient encrypted ingress, the attestation-aware client, and
//! an adversary harness that runs the threat model as scripted scenarios.
//!
//! Everything is seeded and single-threaded by construction: running the same
//! scenario twice produces byte-identical event logs.

pub mod cds;
pub mod client;
pub mod crypto;
pub mod envelope;
pub mod ingress;
pub mod mesh;
pub mod policy;
pub mod sim;
pub mod tee;
pub mod wire;

#[cfg(test)]
pub(crate) mod testutil;
