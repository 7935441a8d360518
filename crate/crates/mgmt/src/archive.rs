//! Package archives: a ZIP with `manifest.json` at the root and payload
//! files under `payload/`.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};

use irs_core::{validate_manifest, ManifestError, PackageManifest, RawManifest};
use sha2::{Digest, Sha256};
use zip::write::SimpleFileOptions;

pub const MANIFEST_PATH: &str = "manifest.json";
pub const PAYLOAD_DIR: &str = "payload/";

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("not a readable zip archive: {0}")]
    Zip(String),
    #[error("archive has no manifest.json")]
    MissingManifest,
    #[error("manifest.json is not valid JSON: {0}")]
    ManifestJson(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("unexpected entry `{0}` outside payload/")]
    StrayEntry(String),
}

impl From<zip::result::ZipError> for ArchiveError {
    fn from(e: zip::result::ZipError) -> Self {
        ArchiveError::Zip(e.to_string())
    }
}

impl From<std::io::Error> for ArchiveError {
    fn from(e: std::io::Error) -> Self {
        ArchiveError::Zip(e.to_string())
    }
}

/// SHA-256 over the payload file contents concatenated in ascending path order.
pub fn payload_digest(payload: &BTreeMap<String, Vec<u8>>) -> String {
    let mut h = Sha256::new();
    for bytes in payload.values() {
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackageArchive {
    pub manifest: PackageManifest,
    /// Keyed by path relative to `payload/`.
    pub payload: BTreeMap<String, Vec<u8>>,
}

impl PackageArchive {
    /// Builds an archive whose manifest digest matches `payload`.
    pub fn new(mut manifest: PackageManifest, payload: BTreeMap<String, Vec<u8>>) -> Self {
        manifest.payload_digest = payload_digest(&payload);
        PackageArchive { manifest, payload }
    }

    pub fn actual_digest(&self) -> String {
        payload_digest(&self.payload)
    }

    pub fn digest_matches(&self) -> bool {
        self.actual_digest() == self.manifest.payload_digest
    }

    pub fn payload_size(&self) -> u64 {
        self.payload.values().map(|b| b.len() as u64).sum()
    }

    /// Serializes to ZIP bytes. Entries are written in sorted order with a
    /// fixed timestamp, so equal archives give equal bytes.
    pub fn to_zip(&self) -> Vec<u8> {
        let mut w = zip::ZipWriter::new(Cursor::new(Vec::new()));
        let opts = SimpleFileOptions::default().compression_method(zip::CompressionMethod::Deflated);
        let manifest = serde_json::to_vec_pretty(&self.manifest.to_raw()).expect("manifest serializes");
        w.start_file(MANIFEST_PATH, opts).expect("in-memory zip");
        w.write_all(&manifest).expect("in-memory zip");
        for (path, bytes) in &self.payload {
            w.start_file(format!("{PAYLOAD_DIR}{path}"), opts).expect("in-memory zip");
            w.write_all(bytes).expect("in-memory zip");
        }
        w.finish().expect("in-memory zip").into_inner()
    }

    /// Parses and validates the manifest. The payload digest is not checked
    /// here; callers decide what a mismatch means.
    pub fn from_zip(bytes: &[u8]) -> Result<Self, ArchiveError> {
        let mut z = zip::ZipArchive::new(Cursor::new(bytes))?;
        let mut raw: Option<RawManifest> = None;
        let mut payload = BTreeMap::new();
        for i in 0..z.len() {
            let mut f = z.by_index(i)?;
            if f.is_dir() {
                continue;
            }
            let name = f.name().to_owned();
            let mut buf = Vec::new();
            f.read_to_end(&mut buf)?;
            if name == MANIFEST_PATH {
                raw = Some(serde_json::from_slice(&buf).map_err(|e| ArchiveError::ManifestJson(e.to_string()))?);
            } else if let Some(rel) = name.strip_prefix(PAYLOAD_DIR) {
                payload.insert(rel.to_owned(), buf);
            } else {
                return Err(ArchiveError::StrayEntry(name));
            }
        }
        let raw = raw.ok_or(ArchiveError::MissingManifest)?;
        Ok(PackageArchive {
            manifest: validate_manifest(&raw)?,
            payload,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use irs_core::{PackageType, ResourceQuota};

    fn manifest() -> PackageManifest {
        PackageManifest {
            name: "tls-demo".into(),
            version: "1.0.0".parse().unwrap(),
            pkg_type: PackageType::Function,
            depends: vec![],
            priority: 100,
            quota: ResourceQuota::default(),
            payload_digest: String::new(),
        }
    }

    fn payload() -> BTreeMap<String, Vec<u8>> {
        BTreeMap::from([
            ("b/run.sh".to_string(), b"echo b".to_vec()),
            ("a.bin".to_string(), vec![1, 2, 3]),
        ])
    }

    #[test]
    fn digest_is_over_sorted_paths() {
        let mut h = Sha256::new();
        h.update([1u8, 2, 3]);
        h.update(b"echo b");
        assert_eq!(payload_digest(&payload()), hex::encode(h.finalize()));
    }

    #[test]
    fn zip_roundtrip_is_byte_stable() {
        let a = PackageArchive::new(manifest(), payload());
        let bytes = a.to_zip();
        assert_eq!(bytes, a.to_zip());
        let back = PackageArchive::from_zip(&bytes).unwrap();
        assert_eq!(back, a);
        assert!(back.digest_matches());
    }

    #[test]
    fn tampered_payload_is_detected() {
        let mut a = PackageArchive::new(manifest(), payload());
        a.payload.insert("a.bin".into(), vec![9]);
        let back = PackageArchive::from_zip(&a.to_zip()).unwrap();
        assert!(!back.digest_matches());
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(PackageArchive::from_zip(b"not a zip"), Err(ArchiveError::Zip(_))));
        let mut w = zip::ZipWriter::new(Cursor::new(Vec::new()));
        w.start_file("payload/x", SimpleFileOptions::default()).unwrap();
        w.write_all(b"x").unwrap();
        let bytes = w.finish().unwrap().into_inner();
        assert!(matches!(PackageArchive::from_zip(&bytes), Err(ArchiveError::MissingManifest)));

        let mut w = zip::ZipWriter::new(Cursor::new(Vec::new()));
        w.start_file(MANIFEST_PATH, SimpleFileOptions::default()).unwrap();
        w.write_all(br#"{"name":"fm-agent","type":"MANAGEMENT","priority":10}"#).unwrap();
        let bytes = w.finish().unwrap().into_inner();
        assert!(matches!(
            PackageArchive::from_zip(&bytes),
            Err(ArchiveError::Manifest(ManifestError::InvariantViolation(_)))
        ));
    }
}
