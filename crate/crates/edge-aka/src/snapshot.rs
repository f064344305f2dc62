//! Store persistence.
//!
//! Every role serializes its long-term state to a line-delimited record
//! file: one record per line, a lowercase kind token followed by
//! hex-encoded fields, single-space separated. Identity strings are
//! hex-encoded like everything else, so arbitrary identities never break
//! the framing. In-flight state (pending exchanges, replay caches,
//! meters) is deliberately not persisted: a restarted party starts with
//! clean caches and re-rejects anything stale.
//!
//! Saves are atomic: the file is written to `<name>.tmp` and renamed over
//! the target, so a crash mid-write leaves the old store intact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::crypto::Digest;

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {0}: empty record")]
    EmptyRecord(usize),
    #[error("line {0}: field is not valid hex")]
    BadHex(usize),
    #[error("expected a `{expected}` store, found `{found}`")]
    WrongRole { expected: &'static str, found: String },
    #[error("unsupported store version {0}")]
    UnsupportedVersion(u32),
    #[error("record {0}: missing or malformed field")]
    BadRecord(&'static str),
    #[error("store is missing its `{0}` record")]
    MissingRecord(&'static str),
}

/// One line of a store file: a kind token and raw byte fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub kind: String,
    pub fields: Vec<Vec<u8>>,
}

impl Record {
    pub fn new(kind: &str) -> Record {
        Record {
            kind: kind.into(),
            fields: Vec::new(),
        }
    }

    pub fn push_bytes(mut self, raw: &[u8]) -> Record {
        self.fields.push(raw.to_vec());
        self
    }

    pub fn push_digest(self, d: &Digest) -> Record {
        self.push_bytes(d.as_bytes())
    }

    pub fn push_str(self, s: &str) -> Record {
        self.push_bytes(s.as_bytes())
    }

    pub fn push_u32(self, v: u32) -> Record {
        self.push_bytes(&v.to_be_bytes())
    }

    pub fn push_bool(self, v: bool) -> Record {
        self.push_bytes(&[u8::from(v)])
    }

    pub fn bytes(&self, i: usize) -> Result<&[u8], SnapshotError> {
        self.fields
            .get(i)
            .map(|f| f.as_slice())
            .ok_or(SnapshotError::BadRecord("truncated"))
    }

    pub fn digest(&self, i: usize) -> Result<Digest, SnapshotError> {
        Digest::from_slice(self.bytes(i)?).ok_or(SnapshotError::BadRecord("digest width"))
    }

    pub fn string(&self, i: usize) -> Result<String, SnapshotError> {
        String::from_utf8(self.bytes(i)?.to_vec())
            .map_err(|_| SnapshotError::BadRecord("identity utf-8"))
    }

    pub fn u32(&self, i: usize) -> Result<u32, SnapshotError> {
        let raw: [u8; 4] = self
            .bytes(i)?
            .try_into()
            .map_err(|_| SnapshotError::BadRecord("u32 width"))?;
        Ok(u32::from_be_bytes(raw))
    }

    pub fn bool(&self, i: usize) -> Result<bool, SnapshotError> {
        match self.bytes(i)? {
            [0] => Ok(false),
            [1] => Ok(true),
            _ => Err(SnapshotError::BadRecord("flag byte")),
        }
    }

    fn to_line(&self) -> String {
        let mut line = self.kind.clone();
        for f in &self.fields {
            line.push(' ');
            line.push_str(&hex::encode(f));
        }
        line
    }

    fn parse(line: &str, lineno: usize) -> Result<Record, SnapshotError> {
        let mut parts = line.split(' ');
        let kind = parts.next().filter(|k| !k.is_empty());
        let Some(kind) = kind else {
            return Err(SnapshotError::EmptyRecord(lineno));
        };
        let mut fields = Vec::new();
        for tok in parts {
            fields.push(hex::decode(tok).map_err(|_| SnapshotError::BadHex(lineno))?);
        }
        Ok(Record {
            kind: kind.into(),
            fields,
        })
    }
}

/// Serializes records to the text they are stored as.
pub fn records_to_string(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Parses a store file's text back into records.
pub fn records_from_string(text: &str) -> Result<Vec<Record>, SnapshotError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Record::parse(l, i + 1))
        .collect()
}

/// Checks the leading role record (`<role> <version>`) and returns the
/// remaining records.
pub fn expect_role<'a>(
    records: &'a [Record],
    role: &'static str,
) -> Result<&'a [Record], SnapshotError> {
    let head = records
        .first()
        .ok_or(SnapshotError::MissingRecord("role header"))?;
    if head.kind != role {
        return Err(SnapshotError::WrongRole {
            expected: role,
            found: head.kind.clone(),
        });
    }
    let version = head.u32(0)?;
    if version != 1 {
        return Err(SnapshotError::UnsupportedVersion(version));
    }
    Ok(&records[1..])
}

/// Builds the leading role record.
pub fn role_header(role: &str) -> Record {
    Record::new(role).push_u32(1)
}

/// Writes records to `path` atomically (`<path>.tmp`, then rename).
pub fn write_records(path: &Path, records: &[Record]) -> Result<(), SnapshotError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(records_to_string(records).as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a record file written by [`write_records`].
pub fn read_records(path: &Path) -> Result<Vec<Record>, SnapshotError> {
    records_from_string(&fs::read_to_string(path)?)
}

/// `ta.snap` under `dir`.
pub fn ta_path(dir: &Path) -> PathBuf {
    dir.join("ta.snap")
}

/// `device_<hex(uid)>_<hex(id)>.snap` under `dir`.
pub fn device_path(dir: &Path, user_id: &str, device_id: &str) -> PathBuf {
    dir.join(format!(
        "device_{}_{}.snap",
        hex::encode(user_id),
        hex::encode(device_id)
    ))
}

/// `es_<hex(eid)>.snap` under `dir`.
pub fn edge_path(dir: &Path, edge_id: &str) -> PathBuf {
    dir.join(format!("es_{}.snap", hex::encode(edge_id)))
}

/// `cs_<hex(cid)>.snap` under `dir`.
pub fn cloud_path(dir: &Path, cloud_id: &str) -> PathBuf {
    dir.join(format!("cs_{}.snap", hex::encode(cloud_id)))
}

/// `es_<hex(eid)>.caps` under `dir`: the edge server's routing table.
pub fn edge_caps_path(dir: &Path, edge_id: &str) -> PathBuf {
    dir.join(format!("es_{}.caps", hex::encode(edge_id)))
}

/// `cs_<hex(cid)>.caps` under `dir`: the cloud server's service list.
pub fn cloud_services_path(dir: &Path, cloud_id: &str) -> PathBuf {
    dir.join(format!("cs_{}.caps", hex::encode(cloud_id)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;

    #[test]
    fn record_lines_round_trip() {
        let records = vec![
            role_header("ta"),
            Record::new("secret").push_digest(&hash(&[b"s"])),
            Record::new("identity").push_str("alice").push_str(""),
            Record::new("flags").push_bool(true).push_u32(7),
        ];
        let text = records_to_string(&records);
        assert_eq!(records_from_string(&text).unwrap(), records);
        // the empty identity survives as an empty field
        let parsed = records_from_string(&text).unwrap();
        assert_eq!(parsed[2].string(1).unwrap(), "");
    }

    #[test]
    fn parse_rejects_bad_hex() {
        assert!(matches!(
            records_from_string("secret zz\n"),
            Err(SnapshotError::BadHex(1))
        ));
    }

    #[test]
    fn role_check_catches_mismatch_and_version() {
        let ta = vec![role_header("ta")];
        assert!(expect_role(&ta, "ta").is_ok());
        assert!(matches!(
            expect_role(&ta, "device"),
            Err(SnapshotError::WrongRole { .. })
        ));
        let future = vec![Record::new("ta").push_u32(9)];
        assert!(matches!(
            expect_role(&future, "ta"),
            Err(SnapshotError::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn files_round_trip_and_leave_no_tmp() {
        let dir = tempfile::tempdir().unwrap();
        let path = ta_path(dir.path());
        let records = vec![role_header("ta"), Record::new("secret").push_digest(&hash(&[b"x"]))];
        write_records(&path, &records).unwrap();
        assert_eq!(read_records(&path).unwrap(), records);
        assert!(!path.with_extension("tmp").exists());
        // overwrite is atomic through the same tmp file
        write_records(&path, &records[..1].to_vec()).unwrap();
        assert_eq!(read_records(&path).unwrap().len(), 1);
    }

    #[test]
    fn store_filenames_hex_encode_identities() {
        let dir = Path::new("/tmp");
        assert_eq!(
            device_path(dir, "alice", "d/0"),
            Path::new("/tmp/device_616c696365_642f30.snap")
        );
        assert_eq!(edge_path(dir, "ES1"), Path::new("/tmp/es_455331.snap"));
        assert_eq!(cloud_path(dir, "CS1"), Path::new("/tmp/cs_435331.snap"));
    }
}
