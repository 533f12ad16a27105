//! Software emulation of the hardware root of trust: manufacturer endorsement
//! chain, CVM launch with measured components, attestation-report generation,
//! and composed node+pod evidence.
//!
//! A [`Manufacturer`] is the issuing capability; holding one is the only way
//! to mint platform keys whose reports chain to its root. A [`CvmHandle`]'s
//! guest memory is reachable only through guest accessors; the host-facing
//! read path returns sealed bytes.

use rand_core::RngCore;
use thiserror::Error;

use crate::crypto::{
    self, aead_seal, digest, sign, verify, Digest, KeyPair, PublicKey, Signature, SymmetricKey,
};
use crate::wire::{Decoder, Encoder, WireError};

pub const REPORT_DATA_LEN: usize = 64;
pub const NONCE_LEN: usize = 32;

const ENDORSEMENT_DOMAIN: &str = "endorsement";
const ATTESTATION_DOMAIN: &str = "attestation";
const COMPOSED_DOMAIN: &str = "composed-evidence";
/// Prefix marking host-visible CVM memory snapshots as ciphertext.
pub const SEALED_MEMORY_TAG: &[u8; 6] = b"CVMENC";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TeeError {
    #[error("launch requires at least one measured component")]
    EmptyComponents,
    #[error("report data exceeds {REPORT_DATA_LEN} bytes")]
    OversizedReportData,
}

/// Launch measurement: digest over the ordered, length-prefixed component
/// digests. Recomputable offline from the component list alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Measurement(pub Digest);

impl Measurement {
    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TcbVersion(pub u64);

pub fn measurement_of(components: &[(String, Digest)]) -> Measurement {
    let mut enc = Encoder::new();
    for (_, d) in components {
        enc = enc.bytes(d.as_bytes());
    }
    Measurement(digest(&enc.finish()))
}

/// Manufacturer-rooted key chain carried inside every report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndorsementChain {
    pub manufacturer_root: PublicKey,
    pub platform_key: PublicKey,
    pub platform_cert: Signature,
}

impl EndorsementChain {
    pub fn verify(&self) -> bool {
        verify(
            &self.manufacturer_root,
            ENDORSEMENT_DOMAIN,
            &self.platform_key.to_bytes(),
            &self.platform_cert,
        )
    }

    fn encode(&self, enc: Encoder) -> Encoder {
        enc.raw(&self.manufacturer_root.to_bytes())
            .raw(&self.platform_key.to_bytes())
            .raw(&self.platform_cert.to_bytes())
    }

    fn decode(d: &mut Decoder) -> Result<Self, WireError> {
        Ok(EndorsementChain {
            manufacturer_root: PublicKey::from_bytes(&d.array()?),
            platform_key: PublicKey::from_bytes(&d.array()?),
            platform_cert: Signature(d.array()?),
        })
    }
}

/// The hardware manufacturer's root of trust; the value itself is the issuing
/// capability. Without one, no report can chain to its root.
pub struct Manufacturer {
    root: KeyPair,
}

impl Manufacturer {
    pub fn create(rng: &mut dyn RngCore) -> Self {
        Manufacturer { root: KeyPair::generate(rng) }
    }

    pub fn root_pubkey(&self) -> PublicKey {
        self.root.public()
    }

    /// Mint a platform signing key endorsed by this root.
    pub fn new_platform(&self, rng: &mut dyn RngCore) -> Platform {
        let key = KeyPair::generate(rng);
        let cert = sign(&self.root, ENDORSEMENT_DOMAIN, &key.public().to_bytes());
        Platform {
            key: key.clone(),
            chain: EndorsementChain {
                manufacturer_root: self.root.public(),
                platform_key: key.public(),
                platform_cert: cert,
            },
        }
    }
}

/// One emulated TEE-capable machine: its endorsed platform key launches CVMs
/// and signs their reports.
#[derive(Clone)]
pub struct Platform {
    key: KeyPair,
    chain: EndorsementChain,
}

impl Platform {
    pub fn chain(&self) -> &EndorsementChain {
        &self.chain
    }

    pub fn launch_cvm(
        &self,
        components: &[(String, Vec<u8>)],
        tcb: TcbVersion,
        rng: &mut dyn RngCore,
    ) -> Result<CvmHandle, TeeError> {
        if components.is_empty() {
            return Err(TeeError::EmptyComponents);
        }
        let measured: Vec<(String, Digest)> =
            components.iter().map(|(name, bytes)| (name.clone(), digest(bytes))).collect();
        Ok(CvmHandle {
            components: measured,
            tcb,
            platform_key: self.key.clone(),
            chain: self.chain.clone(),
            memory: CvmMemory::new(rng),
            live: true,
        })
    }
}

/// Encrypted guest memory. Plaintext is reachable only through the guest
/// accessors; the host read path returns sealed bytes under a hardware key
/// that never leaves this struct.
pub struct CvmMemory {
    store: std::collections::BTreeMap<String, Vec<u8>>,
    hardware_key: SymmetricKey,
}

impl CvmMemory {
    fn new(rng: &mut dyn RngCore) -> Self {
        CvmMemory { store: Default::default(), hardware_key: SymmetricKey::generate(rng) }
    }
}

/// Handle to a launched CVM.
pub struct CvmHandle {
    components: Vec<(String, Digest)>,
    pub tcb: TcbVersion,
    platform_key: KeyPair,
    chain: EndorsementChain,
    memory: CvmMemory,
    live: bool,
}

impl CvmHandle {
    pub fn measurement(&self) -> Measurement {
        measurement_of(&self.components)
    }

    pub fn components(&self) -> &[(String, Digest)] {
        &self.components
    }

    pub fn is_live(&self) -> bool {
        self.live
    }

    pub fn terminate(&mut self) {
        self.live = false;
        self.memory.store.clear();
    }

    /// Guest-side write. Only code modeled as running inside the CVM calls
    /// this; the observer and adversary surfaces have no path to it.
    pub fn guest_write(&mut self, label: &str, bytes: Vec<u8>) {
        self.memory.store.insert(label.to_string(), bytes);
    }

    pub fn guest_read(&self, label: &str) -> Option<&[u8]> {
        self.memory.store.get(label).map(|v| v.as_slice())
    }

    /// Labels of everything resident in guest memory, for key-minimization
    /// audits. Exposes names, not contents.
    pub fn guest_inventory(&self) -> Vec<String> {
        self.memory.store.keys().cloned().collect()
    }

    /// What the hypervisor sees when it snapshots this CVM's memory:
    /// ciphertext-tagged bytes sealed under the hardware key.
    pub fn host_memory_snapshot(&self, rng: &mut dyn RngCore) -> Vec<u8> {
        let mut plain = Vec::new();
        for (label, bytes) in &self.memory.store {
            plain.extend_from_slice(label.as_bytes());
            plain.push(0);
            plain.extend_from_slice(bytes);
        }
        let sealed = aead_seal(&self.memory.hardware_key, &plain, SEALED_MEMORY_TAG, rng);
        let mut out = SEALED_MEMORY_TAG.to_vec();
        out.extend_from_slice(&sealed.to_bytes());
        out
    }

    /// Produce a signed attestation report. `report_data` is zero-padded to
    /// 64 bytes; the bound-key digest commits to `bound_key`.
    pub fn generate_report(
        &self,
        report_data: &[u8],
        bound_key: &PublicKey,
        nonce: Option<[u8; NONCE_LEN]>,
    ) -> Result<AttestationReport, TeeError> {
        if report_data.len() > REPORT_DATA_LEN {
            return Err(TeeError::OversizedReportData);
        }
        let mut padded = [0u8; REPORT_DATA_LEN];
        padded[..report_data.len()].copy_from_slice(report_data);
        let mut report = AttestationReport {
            measurement: self.measurement(),
            tcb: self.tcb,
            report_data: padded,
            bound_key_digest: bound_key.digest(),
            nonce,
            chain: self.chain.clone(),
            signature: Signature([0; 64]),
        };
        report.signature = sign(&self.platform_key, ATTESTATION_DOMAIN, &report.signing_bytes());
        Ok(report)
    }
}

/// Signed evidence binding measurement, TCB, REPORT_DATA, and a bound-key
/// digest to an emulated hardware root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationReport {
    pub measurement: Measurement,
    pub tcb: TcbVersion,
    pub report_data: [u8; REPORT_DATA_LEN],
    pub bound_key_digest: Digest,
    pub nonce: Option<[u8; NONCE_LEN]>,
    pub chain: EndorsementChain,
    pub signature: Signature,
}

impl AttestationReport {
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new()
            .raw(self.measurement.0.as_bytes())
            .u64(self.tcb.0)
            .raw(&self.report_data)
            .raw(self.bound_key_digest.as_bytes());
        enc = match &self.nonce {
            Some(n) => enc.u8(1).raw(n),
            None => enc.u8(0),
        };
        self.chain.encode(enc).finish()
    }

    /// Signature by the platform key over all other fields.
    pub fn signature_valid(&self) -> bool {
        verify(&self.chain.platform_key, ATTESTATION_DOMAIN, &self.signing_bytes(), &self.signature)
    }

    /// Endorsement chain verifies and terminates at one of `known_roots`.
    pub fn chain_valid(&self, known_roots: &[PublicKey]) -> bool {
        known_roots.contains(&self.chain.manufacturer_root) && self.chain.verify()
    }

    pub fn verify(&self, known_roots: &[PublicKey]) -> bool {
        self.chain_valid(known_roots) && self.signature_valid()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        Encoder::new()
            .raw(&self.signing_bytes())
            .raw(&self.signature.to_bytes())
            .finish()
    }

    pub fn from_bytes(raw: &[u8]) -> Result<Self, WireError> {
        let mut d = Decoder::new(raw);
        let report = Self::decode(&mut d)?;
        d.finish()?;
        Ok(report)
    }

    pub(crate) fn decode(d: &mut Decoder) -> Result<Self, WireError> {
        let measurement = Measurement(Digest(d.array()?));
        let tcb = TcbVersion(d.u64()?);
        let report_data = d.array()?;
        let bound_key_digest = Digest(d.array()?);
        let nonce = match d.u8()? {
            0 => None,
            1 => Some(d.array()?),
            _ => return Err(WireError::Malformed { offset: d.pos() - 1, what: "nonce flag" }),
        };
        let chain = EndorsementChain::decode(d)?;
        let signature = Signature(d.array()?);
        Ok(AttestationReport { measurement, tcb, report_data, bound_key_digest, nonce, chain, signature })
    }

    pub(crate) fn encode(&self, enc: Encoder) -> Encoder {
        enc.raw(&self.signing_bytes()).raw(&self.signature.to_bytes())
    }
}

/// Node-level evidence: the node's TEE report plus a per-pod workload digest,
/// identity, and ephemeral key, signed by the node attestation service's
/// CDS-issued key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComposedEvidence {
    pub node_report: AttestationReport,
    pub pod_digest: Digest,
    pub namespace: String,
    pub pod_uid: String,
    pub pod_pubkey: PublicKey,
    pub service_pubkey: PublicKey,
    pub service_signature: Signature,
}

impl ComposedEvidence {
    fn signing_bytes(&self) -> Vec<u8> {
        Encoder::new()
            .bytes(&self.node_report.to_bytes())
            .raw(self.pod_digest.as_bytes())
            .text(&self.namespace)
            .text(&self.pod_uid)
            .raw(&self.pod_pubkey.to_bytes())
            .raw(&self.service_pubkey.to_bytes())
            .finish()
    }

    pub fn signature_valid(&self) -> bool {
        verify(&self.service_pubkey, COMPOSED_DOMAIN, &self.signing_bytes(), &self.service_signature)
    }
}

pub fn compose_evidence(
    service_key: &KeyPair,
    node_report: AttestationReport,
    pod_digest: Digest,
    namespace: &str,
    pod_uid: &str,
    pod_pubkey: PublicKey,
) -> ComposedEvidence {
    let mut evidence = ComposedEvidence {
        node_report,
        pod_digest,
        namespace: namespace.to_string(),
        pod_uid: pod_uid.to_string(),
        pod_pubkey,
        service_pubkey: service_key.public(),
        service_signature: Signature([0; 64]),
    };
    evidence.service_signature = sign(service_key, COMPOSED_DOMAIN, &evidence.signing_bytes());
    evidence
}
