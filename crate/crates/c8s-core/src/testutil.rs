//! Shared test fixtures: a bootstrapped CDS with one allow-listed workload
//! image, plus helpers to attest workloads against it.

use std::collections::BTreeSet;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::cds::{AllowList, AllowListEntry, Cds, CdsConfig, Evidence, MeshCertificate, Role, Verdict};
use crate::crypto::{digest, Digest, KeyPair};
use crate::tee::{measurement_of, Manufacturer, Measurement, Platform, TcbVersion};

pub struct Fixture {
    pub rng: ChaCha20Rng,
    pub manufacturer: Manufacturer,
    pub platform: Platform,
    pub operator: KeyPair,
    pub cds: Cds,
    pub cds_components: Vec<(String, Vec<u8>)>,
    pub workload_components: Vec<(String, Vec<u8>)>,
    pub workload_measurement: Measurement,
    pub ingress_components: Vec<(String, Vec<u8>)>,
    pub ingress_measurement: Measurement,
    pub echo_image_digest: Digest,
}

pub fn measure(components: &[(String, Vec<u8>)]) -> Measurement {
    let measured: Vec<(String, Digest)> =
        components.iter().map(|(n, b)| (n.clone(), digest(b))).collect();
    measurement_of(&measured)
}

pub fn fixture() -> Fixture {
    fixture_seeded(0xc8)
}

pub fn fixture_seeded(seed: u64) -> Fixture {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let manufacturer = Manufacturer::create(&mut rng);
    let platform = manufacturer.new_platform(&mut rng);
    let operator = KeyPair::generate(&mut rng);

    let cds_components = vec![("cds-image".to_string(), b"cds-v1".to_vec())];
    let workload_components = vec![
        ("firmware".to_string(), b"fw-v1".to_vec()),
        ("kernel".to_string(), b"kernel-v1".to_vec()),
        ("workload".to_string(), b"echo-v1".to_vec()),
    ];
    let ingress_components = vec![
        ("firmware".to_string(), b"fw-v1".to_vec()),
        ("ingress".to_string(), b"ingress-v1".to_vec()),
    ];
    let workload_measurement = measure(&workload_components);
    let ingress_measurement = measure(&ingress_components);
    let cds_measurement = measure(&cds_components);
    let echo_image_digest = digest(b"echo-image");

    let mut entries = BTreeSet::new();
    entries.insert(AllowListEntry { measurement: workload_measurement, min_tcb: TcbVersion(2), role: Role::Workload });
    entries.insert(AllowListEntry { measurement: ingress_measurement, min_tcb: TcbVersion(1), role: Role::Ingress });
    entries.insert(AllowListEntry { measurement: cds_measurement, min_tcb: TcbVersion(1), role: Role::Cds });
    let mut images = BTreeSet::new();
    images.insert((echo_image_digest, "echo".to_string()));
    let allowlist = AllowList::signed(&operator, 1, entries, images);

    let config = CdsConfig::new(vec![manufacturer.root_pubkey()], operator.public());
    let mut cds = Cds::bootstrap(
        &platform,
        &cds_components,
        TcbVersion(1),
        config,
        allowlist,
        &mut |report| report.verify(&[manufacturer.root_pubkey()]),
        &mut rng,
    )
    .expect("fixture bootstrap succeeds");
    cds.set_ingress_identity((ingress_measurement, Role::Ingress));

    Fixture {
        rng,
        manufacturer,
        platform,
        operator,
        cds,
        cds_components,
        workload_components,
        workload_measurement,
        ingress_components,
        ingress_measurement,
        echo_image_digest,
    }
}

impl Fixture {
    /// Launch, challenge, appraise, and certify one workload pod.
    pub fn attested_workload(&mut self, pod_uid: &str, now: u64) -> (KeyPair, MeshCertificate, Evidence) {
        let cvm = self
            .platform
            .launch_cvm(&self.workload_components, TcbVersion(2), &mut self.rng)
            .unwrap();
        let pod_key = KeyPair::generate(&mut self.rng);
        let nonce = self.cds.issue_challenge(pod_uid, now, &mut self.rng);
        let report = cvm.generate_report(b"", &pod_key.public(), Some(nonce)).unwrap();
        let evidence = Evidence::Direct(report);
        let result = self.cds.appraise(&evidence, &nonce, Role::Workload, now);
        assert_eq!(result.verdict, Verdict::Accepted, "fixture workload must appraise");
        let hint = format!("{pod_uid}.svc");
        let cert = self
            .cds
            .issue_certificate(&result, &pod_key.public(), &evidence, ("default", pod_uid), &hint, now)
            .unwrap();
        (pod_key, cert, evidence)
    }

    /// Launch, challenge, appraise, and certify the ingress pod.
    pub fn attested_ingress(&mut self, now: u64) -> (KeyPair, MeshCertificate, crate::tee::CvmHandle) {
        let cvm = self
            .platform
            .launch_cvm(&self.ingress_components, TcbVersion(1), &mut self.rng)
            .unwrap();
        let key = KeyPair::generate(&mut self.rng);
        let nonce = self.cds.issue_challenge("ingress", now, &mut self.rng);
        let report = cvm.generate_report(b"", &key.public(), Some(nonce)).unwrap();
        let evidence = Evidence::Direct(report);
        let result = self.cds.appraise(&evidence, &nonce, Role::Ingress, now);
        assert_eq!(result.verdict, Verdict::Accepted, "fixture ingress must appraise");
        let cert = self
            .cds
            .issue_certificate(&result, &key.public(), &evidence, ("infra", "ingress"), "ingress.svc", now)
            .unwrap();
        (key, cert, cvm)
    }
}
