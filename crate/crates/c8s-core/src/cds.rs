//! Certificate Distribution Service: the Verifier and mesh CA.
//!
//! Challenge issuance, five-check appraisal, per-pod certificate issuance
//! with key binding, manifest signing, the freshness beacon, replica
//! enrollment, allow-list versioning, and attestation-gated key brokering in
//! wrapped and direct modes.
//!
//! A [`Cds`] value is one replica. It runs inside an emulated CVM; the CA
//! signing key seed lives in that CVM's guest memory and leaves it only
//! wrapped to an enrolled replica's attested key. Issuance is deterministic
//! given the same inputs, so replicas never need consensus.

use std::collections::{BTreeMap, BTreeSet};

use rand_core::RngCore;
use thiserror::Error;

use crate::crypto::{
    digest, sign, verify, wrap_key, Digest, KeyPair, PublicKey, Signature, SymmetricKey, WrappedKey,
};
use crate::tee::{
    AttestationReport, ComposedEvidence, CvmHandle, Measurement, Platform, TcbVersion,
};
use crate::wire::{Decoder, Encoder, WireError};

pub const ALLOWLIST_DOMAIN: &str = "allowlist";
pub const MANIFEST_DOMAIN: &str = "manifest";
pub const MESH_CERT_DOMAIN: &str = "mesh-cert";
/// Fixed separator for the freshness beacon; the beacon-signing operation can
/// never be confused with any other CDS signature.
pub const BEACON_DOMAIN: &str = "c8s/freshness-beacon/v1";

const REPLICA_WRAP_INFO: &[u8] = b"c8s/cds-replica/v1";

// ---------------------------------------------------------------------------
// Reference values

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Workload,
    Ingress,
    Cds,
    AttestationService,
}

impl Role {
    pub fn code(self) -> u8 {
        match self {
            Role::Workload => 0,
            Role::Ingress => 1,
            Role::Cds => 2,
            Role::AttestationService => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Role::Workload,
            1 => Role::Ingress,
            2 => Role::Cds,
            3 => Role::AttestationService,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Workload => "workload",
            Role::Ingress => "ingress",
            Role::Cds => "cds",
            Role::AttestationService => "attestation_service",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct AllowListEntry {
    pub measurement: Measurement,
    pub min_tcb: TcbVersion,
    pub role: Role,
}

/// Operator-signed reference values: permitted measurements per role plus the
/// authorized image digests the signed manifest carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllowList {
    pub version: u64,
    pub entries: BTreeSet<AllowListEntry>,
    pub images: BTreeSet<(Digest, String)>,
    pub operator_signature: Signature,
}

impl AllowList {
    fn signing_bytes(version: u64, entries: &BTreeSet<AllowListEntry>, images: &BTreeSet<(Digest, String)>) -> Vec<u8> {
        let mut enc = Encoder::new().u64(version).u64(entries.len() as u64);
        for e in entries {
            enc = enc.raw(e.measurement.0.as_bytes()).u64(e.min_tcb.0).u8(e.role.code());
        }
        enc = enc.u64(images.len() as u64);
        for (d, name) in images {
            enc = enc.raw(d.as_bytes()).text(name);
        }
        enc.finish()
    }

    pub fn signed(
        operator: &KeyPair,
        version: u64,
        entries: BTreeSet<AllowListEntry>,
        images: BTreeSet<(Digest, String)>,
    ) -> Self {
        let sig = sign(operator, ALLOWLIST_DOMAIN, &Self::signing_bytes(version, &entries, &images));
        AllowList { version, entries, images, operator_signature: sig }
    }

    pub fn verify(&self, operator: &PublicKey) -> bool {
        verify(
            operator,
            ALLOWLIST_DOMAIN,
            &Self::signing_bytes(self.version, &self.entries, &self.images),
            &self.operator_signature,
        )
    }

    pub fn lookup(&self, measurement: Measurement, role: Role) -> Option<&AllowListEntry> {
        self.entries.iter().find(|e| e.measurement == measurement && e.role == role)
    }

    pub fn has_image(&self, image: Digest) -> bool {
        self.images.iter().any(|(d, _)| *d == image)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        Encoder::new()
            .raw(&Self::signing_bytes(self.version, &self.entries, &self.images))
            .raw(&self.operator_signature.to_bytes())
            .finish()
    }

    pub fn from_bytes(raw: &[u8]) -> Result<Self, WireError> {
        let mut d = Decoder::new(raw);
        let list = Self::decode(&mut d)?;
        d.finish()?;
        Ok(list)
    }

    fn decode(d: &mut Decoder) -> Result<Self, WireError> {
        let version = d.u64()?;
        let entry_count = d.u64()?;
        let mut entries = BTreeSet::new();
        for _ in 0..entry_count {
            let measurement = Measurement(Digest(d.array()?));
            let min_tcb = TcbVersion(d.u64()?);
            let at = d.pos();
            let role = Role::from_code(d.u8()?)
                .ok_or(WireError::Malformed { offset: at, what: "role code" })?;
            entries.insert(AllowListEntry { measurement, min_tcb, role });
        }
        let image_count = d.u64()?;
        let mut images = BTreeSet::new();
        for _ in 0..image_count {
            let dig = Digest(d.array()?);
            let name = d.text()?;
            images.insert((dig, name));
        }
        let operator_signature = Signature(d.array()?);
        Ok(AllowList { version, entries, images, operator_signature })
    }
}

/// One member of the manifest's attested pod pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolEntry {
    pub pubkey: PublicKey,
    pub routing_hint: String,
}

/// CDS-signed enforcement manifest: reference values, authorized images, the
/// CDS key itself, the ingress identity, and the currently attested pod pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyManifest {
    pub allowlist: AllowList,
    pub image_digests: BTreeSet<(Digest, String)>,
    pub cds_pubkey: PublicKey,
    pub ingress_identity: Option<(Measurement, Role)>,
    pub pool: BTreeMap<String, PoolEntry>,
    pub cds_signature: Signature,
}

impl PolicyManifest {
    fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new()
            .bytes(&self.allowlist.to_bytes())
            .u64(self.image_digests.len() as u64);
        for (d, name) in &self.image_digests {
            enc = enc.raw(d.as_bytes()).text(name);
        }
        enc = enc.raw(&self.cds_pubkey.to_bytes());
        enc = match &self.ingress_identity {
            Some((m, role)) => enc.u8(1).raw(m.0.as_bytes()).u8(role.code()),
            None => enc.u8(0),
        };
        enc = enc.u64(self.pool.len() as u64);
        for (pod, entry) in &self.pool {
            enc = enc.text(pod).raw(&entry.pubkey.to_bytes()).text(&entry.routing_hint);
        }
        enc.finish()
    }

    pub fn verify(&self, cds_pubkey: &PublicKey) -> bool {
        verify(cds_pubkey, MANIFEST_DOMAIN, &self.signing_bytes(), &self.cds_signature)
    }

    pub fn has_image(&self, image: Digest) -> bool {
        self.image_digests.iter().any(|(d, _)| *d == image)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        Encoder::new().raw(&self.signing_bytes()).raw(&self.cds_signature.to_bytes()).finish()
    }
}

// ---------------------------------------------------------------------------
// Issued credentials

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum CertError {
    #[error("certificate does not chain to the CDS key")]
    UntrustedIssuer,
    #[error("certificate expired")]
    Expired,
    #[error("certificate not yet valid")]
    NotYetValid,
}

/// Short-lived per-pod credential embedding the attestation-bound public key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeshCertificate {
    pub namespace: String,
    pub pod_uid: String,
    pub subject_pubkey: PublicKey,
    pub measurement: Measurement,
    pub not_before: u64,
    pub not_after: u64,
    pub issuer_signature: Signature,
}

impl MeshCertificate {
    fn signing_bytes(&self) -> Vec<u8> {
        Encoder::new()
            .text(&self.namespace)
            .text(&self.pod_uid)
            .raw(&self.subject_pubkey.to_bytes())
            .raw(self.measurement.0.as_bytes())
            .u64(self.not_before)
            .u64(self.not_after)
            .finish()
    }

    /// Valid iff signed by the CDS key and `not_before <= now <= not_after`.
    pub fn verify(&self, cds_pubkey: &PublicKey, now: u64) -> Result<(), CertError> {
        if !verify(cds_pubkey, MESH_CERT_DOMAIN, &self.signing_bytes(), &self.issuer_signature) {
            return Err(CertError::UntrustedIssuer);
        }
        if now < self.not_before {
            return Err(CertError::NotYetValid);
        }
        if now > self.not_after {
            return Err(CertError::Expired);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        Encoder::new().raw(&self.signing_bytes()).raw(&self.issuer_signature.to_bytes()).finish()
    }

    pub fn from_bytes(raw: &[u8]) -> Result<Self, WireError> {
        let mut d = Decoder::new(raw);
        let namespace = d.text()?;
        let pod_uid = d.text()?;
        let subject_pubkey = PublicKey::from_bytes(&d.array()?);
        let measurement = Measurement(Digest(d.array()?));
        let not_before = d.u64()?;
        let not_after = d.u64()?;
        let issuer_signature = Signature(d.array()?);
        d.finish()?;
        Ok(MeshCertificate {
            namespace,
            pod_uid,
            subject_pubkey,
            measurement,
            not_before,
            not_after,
            issuer_signature,
        })
    }
}

/// CDS signature over a domain-separated timestamp. Carried in REPORT_DATA to
/// bound attestation staleness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreshnessBeacon {
    pub timestamp: u64,
    pub signature: Signature,
}

impl FreshnessBeacon {
    pub fn verify(&self, cds_pubkey: &PublicKey) -> bool {
        verify(cds_pubkey, BEACON_DOMAIN, &self.timestamp.to_be_bytes(), &self.signature)
    }
}

// ---------------------------------------------------------------------------
// Appraisal

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    BadChain,
    BadSignature,
    UnknownMeasurement,
    TcbTooLow,
    NonceMismatch,
    KeyBindingMismatch,
}

impl RejectReason {
    pub fn name(self) -> &'static str {
        match self {
            RejectReason::BadChain => "BadChain",
            RejectReason::BadSignature => "BadSignature",
            RejectReason::UnknownMeasurement => "UnknownMeasurement",
            RejectReason::TcbTooLow => "TcbTooLow",
            RejectReason::NonceMismatch => "NonceMismatch",
            RejectReason::KeyBindingMismatch => "KeyBindingMismatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppraisalResult {
    pub verdict: Verdict,
    pub appraised_at: u64,
    /// Digest of the evidence this verdict belongs to; issuance refuses a
    /// verdict paired with different evidence.
    pub evidence_digest: Digest,
}

/// Attestation evidence: a direct per-CVM report or composed node+pod
/// evidence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Evidence {
    Direct(AttestationReport),
    Composed(ComposedEvidence),
}

impl Evidence {
    pub fn report(&self) -> &AttestationReport {
        match self {
            Evidence::Direct(r) => r,
            Evidence::Composed(c) => &c.node_report,
        }
    }

    pub fn measurement(&self) -> Measurement {
        self.report().measurement
    }

    pub fn tcb(&self) -> TcbVersion {
        self.report().tcb
    }

    /// The key the evidence binds: the report's bound key digest for direct
    /// evidence, the pod's ephemeral key for composed evidence.
    pub fn bound_key_matches(&self, presented: &PublicKey) -> bool {
        match self {
            Evidence::Direct(r) => r.bound_key_digest == presented.digest(),
            Evidence::Composed(c) => c.pod_pubkey == *presented,
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        match self {
            Evidence::Direct(r) => Encoder::new().u8(0).raw(&r.to_bytes()).finish(),
            Evidence::Composed(c) => Encoder::new()
                .u8(1)
                .bytes(&c.node_report.to_bytes())
                .raw(c.pod_digest.as_bytes())
                .text(&c.namespace)
                .text(&c.pod_uid)
                .raw(&c.pod_pubkey.to_bytes())
                .raw(&c.service_pubkey.to_bytes())
                .raw(&c.service_signature.to_bytes())
                .finish(),
        }
    }

    pub fn digest(&self) -> Digest {
        digest(&self.canonical_bytes())
    }
}

// ---------------------------------------------------------------------------
// Key brokering

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReleaseMode {
    Wrapped,
    Direct,
}

/// Per-key release policy: the (measurement, image digest) pairs a secret may
/// be released to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReleasePolicy {
    pub secret_id: String,
    pub allowed: BTreeSet<(Measurement, Digest)>,
    pub mode: ReleaseMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReleaseCondition {
    SubstrateAttestation,
    WorkloadAuthorization,
    PerKeyPolicy,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BrokerError {
    #[error("release condition failed: {0:?}")]
    ReleaseDenied(ReleaseCondition),
    #[error("no release policy registered for secret")]
    UnknownSecret,
    #[error("deposit service refused release")]
    DepositRefused,
    #[error("kms refused release")]
    KmsRefused,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrokerRequest {
    pub secret_id: String,
    pub evidence: Evidence,
    pub requester_pub: PublicKey,
    pub image_digest: Digest,
}

/// What came back from a brokered release. In wrapped mode the CDS handled
/// ciphertext only; in direct mode the plaintext key transited CDS memory for
/// the duration of the hop.
pub enum BrokerOutcome {
    Wrapped(WrappedKey),
    Direct(SymmetricKey),
}

/// Customer-side key deposit service (wrapped mode). Holds plaintext secrets
/// and independently re-verifies attestation before wrapping to the pod key.
pub struct DepositService {
    known_roots: Vec<PublicKey>,
    secrets: BTreeMap<String, (SymmetricKey, BTreeSet<(Measurement, Digest)>)>,
}

impl DepositService {
    pub fn new(known_roots: Vec<PublicKey>) -> Self {
        DepositService { known_roots, secrets: BTreeMap::new() }
    }

    pub fn deposit(&mut self, secret_id: &str, key: SymmetricKey, allowed: BTreeSet<(Measurement, Digest)>) {
        self.secrets.insert(secret_id.to_string(), (key, allowed));
    }

    /// Independent re-verification, then wrap to the requester's key. The
    /// ciphertext is all the CDS ever sees.
    pub fn release(
        &self,
        secret_id: &str,
        evidence: &Evidence,
        image_digest: Digest,
        requester_pub: &PublicKey,
        rng: &mut dyn RngCore,
    ) -> Result<WrappedKey, BrokerError> {
        let (key, allowed) = self.secrets.get(secret_id).ok_or(BrokerError::DepositRefused)?;
        let report = evidence.report();
        if !report.verify(&self.known_roots)
            || !evidence.bound_key_matches(requester_pub)
            || !allowed.contains(&(evidence.measurement(), image_digest))
        {
            return Err(BrokerError::DepositRefused);
        }
        Ok(wrap_key(requester_pub, key, secret_id.as_bytes(), rng))
    }
}

/// Customer KMS (direct mode): releases plaintext only to a caller that
/// presents a valid CDS attestation report.
pub struct Kms {
    known_roots: Vec<PublicKey>,
    expected_cds_measurement: Measurement,
    secrets: BTreeMap<String, SymmetricKey>,
}

impl Kms {
    pub fn new(known_roots: Vec<PublicKey>, expected_cds_measurement: Measurement) -> Self {
        Kms { known_roots, expected_cds_measurement, secrets: BTreeMap::new() }
    }

    pub fn deposit(&mut self, secret_id: &str, key: SymmetricKey) {
        self.secrets.insert(secret_id.to_string(), key);
    }

    pub fn release(&self, cds_report: &AttestationReport, secret_id: &str) -> Result<SymmetricKey, BrokerError> {
        if !cds_report.verify(&self.known_roots) || cds_report.measurement != self.expected_cds_measurement {
            return Err(BrokerError::KmsRefused);
        }
        self.secrets.get(secret_id).cloned().ok_or(BrokerError::KmsRefused)
    }
}

// ---------------------------------------------------------------------------
// The CDS itself

#[derive(Debug, Clone)]
pub struct CdsConfig {
    pub cert_lifetime: u64,
    pub nonce_ttl: u64,
    pub known_roots: Vec<PublicKey>,
    pub operator_pubkey: PublicKey,
}

impl CdsConfig {
    pub fn new(known_roots: Vec<PublicKey>, operator_pubkey: PublicKey) -> Self {
        // Lifetime in hours, not days; nonce single-use within a minute.
        CdsConfig { cert_lifetime: 6 * 3600, nonce_ttl: 60, known_roots, operator_pubkey }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BootstrapError {
    #[error("operator rejected the CDS attestation")]
    OperatorRejected,
    #[error("allow-list operator signature invalid")]
    BadAllowListSignature,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UpdateError {
    #[error("allow-list operator signature invalid")]
    BadSignature,
    #[error("allow-list version not newer than current")]
    StaleVersion,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IssueError {
    #[error("no accepted appraisal for this evidence")]
    NotAppraised,
    #[error("presented key does not match the attestation-bound key")]
    KeyBindingMismatch,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnrollError {
    #[error("replica appraisal failed: {0:?}")]
    AppraisalFailed(RejectReason),
    #[error("replica measurement differs from the enrolling CDS")]
    MeasurementMismatch,
    #[error("replica key does not match the attestation-bound key")]
    KeyBindingMismatch,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BeaconError {
    #[error("caller holds no live mesh certificate")]
    Unauthenticated,
}

struct NonceState {
    requester: String,
    issued_at: u64,
    consumed: bool,
}

/// One CDS replica.
pub struct Cds {
    cvm: CvmHandle,
    signing: KeyPair,
    config: CdsConfig,
    current: AllowList,
    previous: Option<AllowList>,
    ingress_identity: Option<(Measurement, Role)>,
    nonces: BTreeMap<[u8; 32], NonceState>,
    /// pod id -> (certificate, routing hint); backs the manifest pool.
    issued: BTreeMap<String, (MeshCertificate, String)>,
    policies: BTreeMap<String, ReleasePolicy>,
}

impl Cds {
    /// One-time manual attestation event. The operator callback receives the
    /// CDS's own report; the signing key is generated inside the CVM and is
    /// discarded if the operator rejects.
    pub fn bootstrap(
        platform: &Platform,
        components: &[(String, Vec<u8>)],
        tcb: TcbVersion,
        config: CdsConfig,
        initial_allowlist: AllowList,
        operator_check: &mut dyn FnMut(&AttestationReport) -> bool,
        rng: &mut dyn RngCore,
    ) -> Result<Cds, BootstrapError> {
        let mut cvm = platform
            .launch_cvm(components, tcb, rng)
            .expect("cds launch components are non-empty");
        let signing = KeyPair::generate(rng);
        let report = cvm
            .generate_report(b"", &signing.public(), None)
            .expect("empty report data fits");
        if !operator_check(&report) {
            return Err(BootstrapError::OperatorRejected);
        }
        if !initial_allowlist.verify(&config.operator_pubkey) {
            return Err(BootstrapError::BadAllowListSignature);
        }
        cvm.guest_write("ca-seed", signing.seed().to_vec());
        Ok(Cds {
            cvm,
            signing,
            config,
            current: initial_allowlist,
            previous: None,
            ingress_identity: None,
            nonces: BTreeMap::new(),
            issued: BTreeMap::new(),
            policies: BTreeMap::new(),
        })
    }

    pub fn public_key(&self) -> PublicKey {
        self.signing.public()
    }

    pub fn measurement(&self) -> Measurement {
        self.cvm.measurement()
    }

    pub fn config(&self) -> &CdsConfig {
        &self.config
    }

    /// The CDS's own attestation report, served to bootstrapping clients and
    /// to a KMS attesting the CDS.
    pub fn self_report(&self) -> AttestationReport {
        self.cvm
            .generate_report(b"", &self.signing.public(), None)
            .expect("empty report data fits")
    }

    pub fn set_ingress_identity(&mut self, identity: (Measurement, Role)) {
        self.ingress_identity = Some(identity);
    }

    pub fn register_policy(&mut self, policy: ReleasePolicy) {
        self.policies.insert(policy.secret_id.clone(), policy);
    }

    pub fn issue_challenge(&mut self, requester: &str, now: u64, rng: &mut dyn RngCore) -> [u8; 32] {
        let mut nonce = [0u8; 32];
        rng.fill_bytes(&mut nonce);
        self.nonces.insert(nonce, NonceState { requester: requester.to_string(), issued_at: now, consumed: false });
        nonce
    }

    /// Five-check appraisal in fixed (a)..(e) order; the reported reason is
    /// the first failing check. Composed evidence folds its extra checks into
    /// (b) (service signature under a live attestation-service certificate)
    /// and (c) (workload digest in the manifest image set). The nonce is
    /// consumed exactly when check (e) passes.
    pub fn appraise(&mut self, evidence: &Evidence, expected_nonce: &[u8; 32], claimed_role: Role, now: u64) -> AppraisalResult {
        let verdict = self.appraise_inner(evidence, expected_nonce, claimed_role, now);
        AppraisalResult { verdict, appraised_at: now, evidence_digest: evidence.digest() }
    }

    fn appraise_inner(&mut self, evidence: &Evidence, expected_nonce: &[u8; 32], claimed_role: Role, now: u64) -> Verdict {
        let report = evidence.report();
        // (a) endorsement chain terminates at a known manufacturer root
        if !report.chain_valid(&self.config.known_roots) {
            return Verdict::Rejected(RejectReason::BadChain);
        }
        // (b) report signature, plus the composed service signature
        if !report.signature_valid() {
            return Verdict::Rejected(RejectReason::BadSignature);
        }
        if let Evidence::Composed(composed) = evidence {
            if !composed.signature_valid() || !self.service_credential_live(&composed.service_pubkey, now) {
                return Verdict::Rejected(RejectReason::BadSignature);
            }
        }
        // (c) measurement on the allow-list for the claimed role, plus the
        // composed workload digest against the manifest image set
        let Some(entry) = self.current.lookup(evidence.measurement(), claimed_role) else {
            return Verdict::Rejected(RejectReason::UnknownMeasurement);
        };
        if let Evidence::Composed(composed) = evidence {
            if !self.current.has_image(composed.pod_digest) {
                return Verdict::Rejected(RejectReason::UnknownMeasurement);
            }
        }
        // (d) TCB floor
        if evidence.tcb() < entry.min_tcb {
            return Verdict::Rejected(RejectReason::TcbTooLow);
        }
        // (e) nonce matches, is known, unexpired, and unconsumed
        if report.nonce != Some(*expected_nonce) {
            return Verdict::Rejected(RejectReason::NonceMismatch);
        }
        match self.nonces.get_mut(expected_nonce) {
            Some(state) if !state.consumed && now <= state.issued_at + self.config.nonce_ttl => {
                state.consumed = true;
                Verdict::Accepted
            }
            _ => Verdict::Rejected(RejectReason::NonceMismatch),
        }
    }

    fn service_credential_live(&self, service_pubkey: &PublicKey, now: u64) -> bool {
        self.issued.values().any(|(cert, _)| {
            cert.subject_pubkey == *service_pubkey
                && cert.verify(&self.signing.public(), now).is_ok()
                && self
                    .current
                    .lookup(cert.measurement, Role::AttestationService)
                    .is_some()
        })
    }

    /// Issue a mesh certificate for an accepted appraisal. Refuses if the
    /// presented key is not the attestation-bound key.
    pub fn issue_certificate(
        &mut self,
        result: &AppraisalResult,
        presented_key: &PublicKey,
        evidence: &Evidence,
        subject: (&str, &str),
        routing_hint: &str,
        now: u64,
    ) -> Result<MeshCertificate, IssueError> {
        if result.verdict != Verdict::Accepted || result.evidence_digest != evidence.digest() {
            return Err(IssueError::NotAppraised);
        }
        if !evidence.bound_key_matches(presented_key) {
            return Err(IssueError::KeyBindingMismatch);
        }
        let (namespace, pod_uid) = match evidence {
            Evidence::Composed(c) => (c.namespace.as_str(), c.pod_uid.as_str()),
            Evidence::Direct(_) => subject,
        };
        let mut cert = MeshCertificate {
            namespace: namespace.to_string(),
            pod_uid: pod_uid.to_string(),
            subject_pubkey: *presented_key,
            measurement: evidence.measurement(),
            not_before: now,
            not_after: now + self.config.cert_lifetime,
            issuer_signature: Signature([0; 64]),
        };
        cert.issuer_signature = sign(&self.signing, MESH_CERT_DOMAIN, &cert.signing_bytes());
        self.issued
            .insert(pod_uid.to_string(), (cert.clone(), routing_hint.to_string()));
        Ok(cert)
    }

    /// Sign the current timestamp under the beacon separator. Served only
    /// over an existing raTLS connection, i.e. to a live certificate holder.
    pub fn issue_beacon(&self, caller: &MeshCertificate, now: u64) -> Result<FreshnessBeacon, BeaconError> {
        if caller.verify(&self.signing.public(), now).is_err() {
            return Err(BeaconError::Unauthenticated);
        }
        let signature = sign(&self.signing, BEACON_DOMAIN, &now.to_be_bytes());
        Ok(FreshnessBeacon { timestamp: now, signature })
    }

    /// Wrap the CA signing key to an attested replica with the same
    /// measurement. The plaintext seed never leaves CVM memory.
    pub fn enroll_replica(
        &mut self,
        replica_report: &AttestationReport,
        replica_pub: &PublicKey,
        expected_nonce: &[u8; 32],
        now: u64,
        rng: &mut dyn RngCore,
    ) -> Result<WrappedKey, EnrollError> {
        let evidence = Evidence::Direct(replica_report.clone());
        match self.appraise(&evidence, expected_nonce, Role::Cds, now).verdict {
            Verdict::Accepted => {}
            Verdict::Rejected(reason) => return Err(EnrollError::AppraisalFailed(reason)),
        }
        if replica_report.measurement != self.cvm.measurement() {
            return Err(EnrollError::MeasurementMismatch);
        }
        if replica_report.bound_key_digest != replica_pub.digest() {
            return Err(EnrollError::KeyBindingMismatch);
        }
        let seed = SymmetricKey(self.signing.seed());
        Ok(wrap_key(replica_pub, &seed, REPLICA_WRAP_INFO, rng))
    }

    /// Build a replica from an enrollment wrap. State is replicated from the
    /// enrolling instance; the seed is unwrapped inside the new CVM.
    pub fn join_replica(
        wrapped: &WrappedKey,
        replica_key: &KeyPair,
        mut cvm: CvmHandle,
        from: &Cds,
    ) -> Result<Cds, crate::crypto::CryptoError> {
        let seed = crate::crypto::unwrap_key(replica_key, wrapped, REPLICA_WRAP_INFO)?;
        let signing = KeyPair::from_seed(seed.0);
        cvm.guest_write("ca-seed", signing.seed().to_vec());
        Ok(Cds {
            cvm,
            signing,
            config: from.config.clone(),
            current: from.current.clone(),
            previous: from.previous.clone(),
            ingress_identity: from.ingress_identity,
            nonces: BTreeMap::new(),
            issued: from.issued.clone(),
            policies: from.policies.clone(),
        })
    }

    /// The currently active allow-list and the immediately previous version.
    pub fn allowlist_versions(&self) -> (&AllowList, Option<&AllowList>) {
        (&self.current, self.previous.as_ref())
    }

    pub fn update_allowlist(&mut self, update: AllowList) -> Result<(), UpdateError> {
        if !update.verify(&self.config.operator_pubkey) {
            return Err(UpdateError::BadSignature);
        }
        if update.version <= self.current.version {
            return Err(UpdateError::StaleVersion);
        }
        self.previous = Some(std::mem::replace(&mut self.current, update));
        Ok(())
    }

    /// The signed manifest as of `now`; the pool carries only currently valid
    /// certificates.
    pub fn manifest(&self, now: u64) -> PolicyManifest {
        let pool: BTreeMap<String, PoolEntry> = self
            .issued
            .iter()
            .filter(|(_, (cert, _))| cert.verify(&self.signing.public(), now).is_ok())
            .map(|(pod, (cert, hint))| {
                (pod.clone(), PoolEntry { pubkey: cert.subject_pubkey, routing_hint: hint.clone() })
            })
            .collect();
        let mut manifest = PolicyManifest {
            allowlist: self.current.clone(),
            image_digests: self.current.images.clone(),
            cds_pubkey: self.signing.public(),
            ingress_identity: self.ingress_identity,
            pool,
            cds_signature: Signature([0; 64]),
        };
        manifest.cds_signature = sign(&self.signing, MANIFEST_DOMAIN, &manifest.signing_bytes());
        manifest
    }

    /// Evaluate the three release conditions, then dispatch to the deposit
    /// service (wrapped) or the KMS (direct). The CDS persists nothing in
    /// either mode.
    pub fn broker_secret(
        &self,
        request: &BrokerRequest,
        deposit: Option<&DepositService>,
        kms: Option<&Kms>,
        rng: &mut dyn RngCore,
    ) -> Result<BrokerOutcome, BrokerError> {
        let policy = self.policies.get(&request.secret_id).ok_or(BrokerError::UnknownSecret)?;
        let report = request.evidence.report();
        // (1) substrate attestation: chain, signature, allow-listed measurement, TCB
        let entry = self.current.lookup(request.evidence.measurement(), Role::Workload);
        let substrate_ok = report.verify(&self.config.known_roots)
            && request.evidence.bound_key_matches(&request.requester_pub)
            && entry.is_some_and(|e| request.evidence.tcb() >= e.min_tcb);
        if !substrate_ok {
            return Err(BrokerError::ReleaseDenied(ReleaseCondition::SubstrateAttestation));
        }
        // (2) workload authorization: image digest in the signed manifest
        if !self.current.has_image(request.image_digest) {
            return Err(BrokerError::ReleaseDenied(ReleaseCondition::WorkloadAuthorization));
        }
        // (3) per-key policy
        if !policy.allowed.contains(&(request.evidence.measurement(), request.image_digest)) {
            return Err(BrokerError::ReleaseDenied(ReleaseCondition::PerKeyPolicy));
        }
        match policy.mode {
            ReleaseMode::Wrapped => {
                let deposit = deposit.ok_or(BrokerError::DepositRefused)?;
                let wrapped = deposit.release(
                    &request.secret_id,
                    &request.evidence,
                    request.image_digest,
                    &request.requester_pub,
                    rng,
                )?;
                Ok(BrokerOutcome::Wrapped(wrapped))
            }
            ReleaseMode::Direct => {
                let kms = kms.ok_or(BrokerError::KmsRefused)?;
                let key = kms.release(&self.self_report(), &request.secret_id)?;
                Ok(BrokerOutcome::Direct(key))
            }
        }
    }

    /// Key-minimization audit over the replica's guest memory: label of every
    /// long-lived private key, and of anything that looks like an application
    /// secret at rest.
    pub fn state_inventory(&self) -> (Vec<String>, Vec<String>) {
        let mut keys = Vec::new();
        let mut secrets = Vec::new();
        for label in self.cvm.guest_inventory() {
            if label == "ca-seed" {
                keys.push(label);
            } else {
                secrets.push(label);
            }
        }
        (keys, secrets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::fixture;
    use crate::tee::Manufacturer;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn bootstrap_operator_reject_and_bad_allowlist() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let manufacturer = Manufacturer::create(&mut rng);
        let platform = manufacturer.new_platform(&mut rng);
        let operator = KeyPair::generate(&mut rng);
        let allowlist = AllowList::signed(&operator, 1, BTreeSet::new(), BTreeSet::new());
        let config = CdsConfig::new(vec![manufacturer.root_pubkey()], operator.public());

        let err = Cds::bootstrap(
            &platform,
            &[("cds".into(), b"img".to_vec())],
            TcbVersion(1),
            config.clone(),
            allowlist.clone(),
            &mut |_| false,
            &mut rng,
        )
        .unwrap_err();
        assert_eq!(err, BootstrapError::OperatorRejected);

        let mut tampered = allowlist;
        tampered.version = 9; // signature no longer covers the content
        let err = Cds::bootstrap(
            &platform,
            &[("cds".into(), b"img".to_vec())],
            TcbVersion(1),
            config,
            tampered,
            &mut |_| true,
            &mut rng,
        )
        .unwrap_err();
        assert_eq!(err, BootstrapError::BadAllowListSignature);
    }

    #[test]
    fn bootstrap_serves_verifiable_manifest() {
        let fx = fixture();
        let manifest = fx.cds.manifest(0);
        assert!(manifest.verify(&fx.cds.public_key()));
        assert!(!manifest.verify(&fx.operator.public()));
    }

    #[test]
    fn challenges_are_unique_and_single_use() {
        let mut fx = fixture();
        let now = 10;
        let n1 = fx.cds.issue_challenge("pod-1", now, &mut fx.rng);
        let n2 = fx.cds.issue_challenge("pod-1", now, &mut fx.rng);
        assert_ne!(n1, n2);

        let (pod_key, _, evidence) = fx.attested_workload("pod-1", now);
        // The nonce inside `evidence` was consumed by the accepted appraisal.
        let Evidence::Direct(report) = &evidence else { unreachable!() };
        let nonce = report.nonce.unwrap();
        let replay = fx.cds.appraise(&evidence, &nonce, Role::Workload, now);
        assert_eq!(replay.verdict, Verdict::Rejected(RejectReason::NonceMismatch));
        let _ = pod_key;
    }

    #[test]
    fn expired_nonce_rejected() {
        let mut fx = fixture();
        let nonce = fx.cds.issue_challenge("pod-1", 0, &mut fx.rng);
        let cvm = fx.platform.launch_cvm(&fx.workload_components, TcbVersion(2), &mut fx.rng).unwrap();
        let pod_key = KeyPair::generate(&mut fx.rng);
        let report = cvm.generate_report(b"", &pod_key.public(), Some(nonce)).unwrap();
        let ttl = fx.cds.config().nonce_ttl;
        let result = fx.cds.appraise(&Evidence::Direct(report), &nonce, Role::Workload, ttl + 1);
        assert_eq!(result.verdict, Verdict::Rejected(RejectReason::NonceMismatch));
    }

    #[test]
    fn appraisal_rejects_unknown_measurement_and_tcb_boundary() {
        let mut fx = fixture();
        let now = 5;

        // Unknown measurement: same platform, different component list.
        let rogue = fx
            .platform
            .launch_cvm(&[("other".into(), b"other-img".to_vec())], TcbVersion(9), &mut fx.rng)
            .unwrap();
        let key = KeyPair::generate(&mut fx.rng);
        let nonce = fx.cds.issue_challenge("rogue", now, &mut fx.rng);
        let report = rogue.generate_report(b"", &key.public(), Some(nonce)).unwrap();
        let result = fx.cds.appraise(&Evidence::Direct(report), &nonce, Role::Workload, now);
        assert_eq!(result.verdict, Verdict::Rejected(RejectReason::UnknownMeasurement));

        // TCB boundary: min_tcb for the workload entry is 2.
        for (tcb, expected) in [
            (TcbVersion(1), Verdict::Rejected(RejectReason::TcbTooLow)),
            (TcbVersion(2), Verdict::Accepted),
        ] {
            let cvm = fx.platform.launch_cvm(&fx.workload_components, tcb, &mut fx.rng).unwrap();
            let key = KeyPair::generate(&mut fx.rng);
            let nonce = fx.cds.issue_challenge("pod-t", now, &mut fx.rng);
            let report = cvm.generate_report(b"", &key.public(), Some(nonce)).unwrap();
            let result = fx.cds.appraise(&Evidence::Direct(report), &nonce, Role::Workload, now);
            assert_eq!(result.verdict, expected, "tcb {tcb:?}");
        }
    }

    #[test]
    fn wrong_role_is_unknown_measurement() {
        let mut fx = fixture();
        let cvm = fx.platform.launch_cvm(&fx.workload_components, TcbVersion(2), &mut fx.rng).unwrap();
        let key = KeyPair::generate(&mut fx.rng);
        let nonce = fx.cds.issue_challenge("pod-1", 0, &mut fx.rng);
        let report = cvm.generate_report(b"", &key.public(), Some(nonce)).unwrap();
        let result = fx.cds.appraise(&Evidence::Direct(report), &nonce, Role::Ingress, 0);
        assert_eq!(result.verdict, Verdict::Rejected(RejectReason::UnknownMeasurement));
    }

    #[test]
    fn issuance_enforces_key_binding_and_lifetime() {
        let mut fx = fixture();
        let now = 7;
        let cvm = fx.platform.launch_cvm(&fx.workload_components, TcbVersion(2), &mut fx.rng).unwrap();
        let pod_key = KeyPair::generate(&mut fx.rng);
        let other_key = KeyPair::generate(&mut fx.rng);
        let nonce = fx.cds.issue_challenge("pod-1", now, &mut fx.rng);
        let report = cvm.generate_report(b"", &pod_key.public(), Some(nonce)).unwrap();
        let evidence = Evidence::Direct(report);
        let result = fx.cds.appraise(&evidence, &nonce, Role::Workload, now);

        let err = fx
            .cds
            .issue_certificate(&result, &other_key.public(), &evidence, ("default", "pod-1"), "h", now)
            .unwrap_err();
        assert_eq!(err, IssueError::KeyBindingMismatch);

        let cert = fx
            .cds
            .issue_certificate(&result, &pod_key.public(), &evidence, ("default", "pod-1"), "h", now)
            .unwrap();
        assert!(cert.verify(&fx.cds.public_key(), now).is_ok());
        assert_eq!(cert.not_after - cert.not_before, fx.cds.config().cert_lifetime);
        // Boundary semantics.
        assert!(cert.verify(&fx.cds.public_key(), cert.not_after).is_ok());
        assert_eq!(cert.verify(&fx.cds.public_key(), cert.not_after + 1), Err(CertError::Expired));
        assert_eq!(cert.verify(&fx.cds.public_key(), cert.not_before.saturating_sub(1)), Err(CertError::NotYetValid));
    }

    #[test]
    fn issuance_requires_matching_appraisal() {
        let mut fx = fixture();
        let now = 3;
        let (pod_key, _, evidence) = fx.attested_workload("pod-1", now);
        // A rejected verdict, or a verdict for different evidence, never issues.
        let rejected = AppraisalResult {
            verdict: Verdict::Rejected(RejectReason::BadChain),
            appraised_at: now,
            evidence_digest: evidence.digest(),
        };
        assert_eq!(
            fx.cds
                .issue_certificate(&rejected, &pod_key.public(), &evidence, ("default", "x"), "h", now)
                .unwrap_err(),
            IssueError::NotAppraised
        );
        let mismatched = AppraisalResult {
            verdict: Verdict::Accepted,
            appraised_at: now,
            evidence_digest: digest(b"some other evidence"),
        };
        assert_eq!(
            fx.cds
                .issue_certificate(&mismatched, &pod_key.public(), &evidence, ("default", "x"), "h", now)
                .unwrap_err(),
            IssueError::NotAppraised
        );
    }

    #[test]
    fn renewal_fails_after_allowlist_removal() {
        let mut fx = fixture();
        let now = 0;
        let (_, cert, _) = fx.attested_workload("pod-1", now);

        // Operator ships a new allow-list without the workload measurement.
        let mut entries = fx.cds.current.entries.clone();
        entries.retain(|e| e.role != Role::Workload);
        let update = AllowList::signed(&fx.operator, 2, entries, fx.cds.current.images.clone());
        fx.cds.update_allowlist(update).unwrap();

        let cvm = fx.platform.launch_cvm(&fx.workload_components, TcbVersion(2), &mut fx.rng).unwrap();
        let new_key = KeyPair::generate(&mut fx.rng);
        let nonce = fx.cds.issue_challenge("pod-1", now + 10, &mut fx.rng);
        let report = cvm.generate_report(b"", &new_key.public(), Some(nonce)).unwrap();
        let result = fx.cds.appraise(&Evidence::Direct(report), &nonce, Role::Workload, now + 10);
        assert_eq!(result.verdict, Verdict::Rejected(RejectReason::UnknownMeasurement));
        // The old certificate still validates until expiry.
        assert!(cert.verify(&fx.cds.public_key(), now + 10).is_ok());
    }

    #[test]
    fn beacon_domain_isolation_and_auth() {
        let mut fx = fixture();
        let now = 42;
        let (_, cert, _) = fx.attested_workload("pod-1", now);
        let beacon = fx.cds.issue_beacon(&cert, now).unwrap();
        assert_eq!(beacon.timestamp, now);
        assert!(beacon.verify(&fx.cds.public_key()));
        // A beacon signature must not verify under any other CDS domain.
        assert!(!verify(&fx.cds.public_key(), MESH_CERT_DOMAIN, &now.to_be_bytes(), &beacon.signature));
        assert!(!verify(&fx.cds.public_key(), MANIFEST_DOMAIN, &now.to_be_bytes(), &beacon.signature));

        let expired = MeshCertificate { not_after: now - 1, not_before: now - 2, ..cert };
        assert_eq!(fx.cds.issue_beacon(&expired, now).unwrap_err(), BeaconError::Unauthenticated);
    }

    #[test]
    fn allowlist_versions_track_last_two() {
        let mut fx = fixture();
        let (v1, prev) = fx.cds.allowlist_versions();
        assert_eq!(v1.version, 1);
        assert!(prev.is_none());

        let base = fx.cds.current.clone();
        let v2 = AllowList::signed(&fx.operator, 2, base.entries.clone(), base.images.clone());
        fx.cds.update_allowlist(v2).unwrap();
        let (cur, prev) = fx.cds.allowlist_versions();
        assert_eq!((cur.version, prev.unwrap().version), (2, 1));

        let v3 = AllowList::signed(&fx.operator, 3, base.entries.clone(), base.images.clone());
        fx.cds.update_allowlist(v3).unwrap();
        let (cur, prev) = fx.cds.allowlist_versions();
        assert_eq!((cur.version, prev.unwrap().version), (3, 2));
    }

    #[test]
    fn allowlist_update_rejects_bad_sig_and_stale_version() {
        let mut fx = fixture();
        let base = fx.cds.current.clone();
        let intruder = KeyPair::generate(&mut fx.rng);
        let unsigned = AllowList::signed(&intruder, 2, base.entries.clone(), base.images.clone());
        assert_eq!(fx.cds.update_allowlist(unsigned), Err(UpdateError::BadSignature));
        let stale = AllowList::signed(&fx.operator, 1, base.entries.clone(), base.images.clone());
        assert_eq!(fx.cds.update_allowlist(stale), Err(UpdateError::StaleVersion));
    }

    #[test]
    fn replica_enrollment_and_idempotent_issuance() {
        let mut fx = fixture();
        let now = 0;

        // Replica runs the same CDS image on the same platform.
        let replica_cvm = fx
            .platform
            .launch_cvm(&[("cds-image".to_string(), b"cds-v1".to_vec())], TcbVersion(1), &mut fx.rng)
            .unwrap();
        let replica_key = KeyPair::generate(&mut fx.rng);
        let nonce = fx.cds.issue_challenge("cds-replica", now, &mut fx.rng);
        let report = replica_cvm.generate_report(b"", &replica_key.public(), Some(nonce)).unwrap();
        let wrapped = fx
            .cds
            .enroll_replica(&report, &replica_key.public(), &nonce, now, &mut fx.rng)
            .unwrap();
        let mut replica = Cds::join_replica(&wrapped, &replica_key, replica_cvm, &fx.cds).unwrap();
        assert_eq!(replica.public_key(), fx.cds.public_key());

        // Identical inputs on both replicas produce byte-identical certificates.
        let cvm = fx.platform.launch_cvm(&fx.workload_components, TcbVersion(2), &mut fx.rng).unwrap();
        let pod_key = KeyPair::generate(&mut fx.rng);
        let n1 = fx.cds.issue_challenge("pod-i", now, &mut fx.rng);
        let report = cvm.generate_report(b"", &pod_key.public(), Some(n1)).unwrap();
        let evidence = Evidence::Direct(report.clone());
        let r1 = fx.cds.appraise(&evidence, &n1, Role::Workload, now);
        let c1 = fx
            .cds
            .issue_certificate(&r1, &pod_key.public(), &evidence, ("default", "pod-i"), "h", now)
            .unwrap();

        replica.nonces.insert(n1, NonceState { requester: "pod-i".into(), issued_at: now, consumed: false });
        let r2 = replica.appraise(&evidence, &n1, Role::Workload, now);
        let c2 = replica
            .issue_certificate(&r2, &pod_key.public(), &evidence, ("default", "pod-i"), "h", now)
            .unwrap();
        assert_eq!(c1.to_bytes(), c2.to_bytes());
    }

    #[test]
    fn replica_with_workload_measurement_rejected() {
        let mut fx = fixture();
        let now = 0;
        let impostor_cvm = fx.platform.launch_cvm(&fx.workload_components, TcbVersion(2), &mut fx.rng).unwrap();
        let key = KeyPair::generate(&mut fx.rng);
        let nonce = fx.cds.issue_challenge("impostor", now, &mut fx.rng);
        let report = impostor_cvm.generate_report(b"", &key.public(), Some(nonce)).unwrap();
        // The workload measurement is not on the allow-list under role Cds.
        let err = fx.cds.enroll_replica(&report, &key.public(), &nonce, now, &mut fx.rng).unwrap_err();
        assert_eq!(err, EnrollError::AppraisalFailed(RejectReason::UnknownMeasurement));
    }

    #[test]
    fn key_minimization_inventory() {
        let fx = fixture();
        let (keys, secrets) = fx.cds.state_inventory();
        assert_eq!(keys, vec!["ca-seed".to_string()]);
        assert!(secrets.is_empty());
    }

    #[test]
    fn manifest_pool_drops_expired_certs() {
        let mut fx = fixture();
        let now = 0;
        let (_, cert, _) = fx.attested_workload("pod-1", now);
        let manifest = fx.cds.manifest(now);
        assert!(manifest.pool.contains_key("pod-1"));
        let manifest_late = fx.cds.manifest(cert.not_after + 1);
        assert!(!manifest_late.pool.contains_key("pod-1"));
    }

    #[test]
    fn broker_release_conditions() {
        let mut fx = fixture();
        let now = 0;
        let (pod_key, _, evidence) = fx.attested_workload("pod-1", now);
        let echo_digest = digest(b"echo-image");
        let other_digest = digest(b"provider-b-image");

        let secret = SymmetricKey::generate(&mut fx.rng);
        let mut deposit = DepositService::new(vec![fx.manufacturer.root_pubkey()]);
        let mut allowed = BTreeSet::new();
        allowed.insert((fx.workload_measurement, echo_digest));
        deposit.deposit("model-key", secret.clone(), allowed.clone());
        fx.cds.register_policy(ReleasePolicy {
            secret_id: "model-key".into(),
            allowed,
            mode: ReleaseMode::Wrapped,
        });

        // Cross-tenant: provider B's digest on the same substrate is denied by
        // condition (2) or (3), never released.
        let req_b = BrokerRequest {
            secret_id: "model-key".into(),
            evidence: evidence.clone(),
            requester_pub: pod_key.public(),
            image_digest: other_digest,
        };
        match fx.cds.broker_secret(&req_b, Some(&deposit), None, &mut fx.rng) {
            Err(BrokerError::ReleaseDenied(_)) => {}
            other => panic!("expected denial, got {:?}", other.is_ok()),
        }

        // Matching request: wrapped to the pod key; CDS sees ciphertext only.
        let req = BrokerRequest {
            secret_id: "model-key".into(),
            evidence,
            requester_pub: pod_key.public(),
            image_digest: echo_digest,
        };
        let outcome = fx.cds.broker_secret(&req, Some(&deposit), None, &mut fx.rng).unwrap();
        let BrokerOutcome::Wrapped(wrapped) = outcome else { panic!("expected wrapped") };
        assert!(!wrapped.to_bytes().windows(32).any(|w| w == secret.0));
        let unwrapped = crate::crypto::unwrap_key(&pod_key, &wrapped, b"model-key").unwrap();
        assert_eq!(unwrapped, secret);
    }

    #[test]
    fn direct_mode_kms_attests_the_cds() {
        let mut fx = fixture();
        let now = 0;
        let (pod_key, _, evidence) = fx.attested_workload("pod-1", now);
        let echo_digest = digest(b"echo-image");

        let secret = SymmetricKey::generate(&mut fx.rng);
        let mut kms = Kms::new(vec![fx.manufacturer.root_pubkey()], fx.cds.measurement());
        kms.deposit("db-cred", secret.clone());
        let mut allowed = BTreeSet::new();
        allowed.insert((fx.workload_measurement, echo_digest));
        fx.cds.register_policy(ReleasePolicy { secret_id: "db-cred".into(), allowed, mode: ReleaseMode::Direct });

        let req = BrokerRequest {
            secret_id: "db-cred".into(),
            evidence,
            requester_pub: pod_key.public(),
            image_digest: echo_digest,
        };
        let outcome = fx.cds.broker_secret(&req, None, Some(&kms), &mut fx.rng).unwrap();
        let BrokerOutcome::Direct(key) = outcome else { panic!("expected direct") };
        assert_eq!(key, secret);

        // A KMS expecting a different CDS measurement refuses.
        let strict = Kms::new(vec![fx.manufacturer.root_pubkey()], fx.workload_measurement);
        assert_eq!(strict.release(&fx.cds.self_report(), "db-cred").unwrap_err(), BrokerError::KmsRefused);
    }
}
