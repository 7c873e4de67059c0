//! Binary container of named f64 arrays, shared by datasets and checkpoints.
//!
//! Layout (all integers little-endian): a 4-byte magic, a `u32` format
//! version, then one record per array — name length (`u32`), name bytes,
//! rank (`u32`), one `u32` extent per mode, and the payload as `f64`
//! column-major — with the records ordered by name (lexicographic, byte
//! order), and finally a CRC32 of every preceding byte. The fixed record
//! order makes writes byte-deterministic; the trailing checksum catches
//! corruption that still parses.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::tensor::DenseTensor;

/// Current (and only) format version.
pub const FORMAT_VERSION: u32 = 1;

/// One named array: extents plus a column-major payload.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayEntry {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// An in-memory collection of named arrays with binary (de)serialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArrayFile {
    entries: BTreeMap<String, ArrayEntry>,
}

impl ArrayFile {
    pub fn new() -> ArrayFile {
        ArrayFile::default()
    }

    /// Number of stored arrays.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Names in serialization (lexicographic) order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    /// Store an array under `name`. Names must be unique, nonempty, and the
    /// payload length must match the product of the extents.
    pub fn insert(&mut self, name: &str, dims: Vec<usize>, data: Vec<f64>) -> Result<()> {
        if name.is_empty() {
            return Err(Error::InvalidArgument("array name must be nonempty".into()));
        }
        let want: usize = dims.iter().product();
        if data.len() != want {
            return Err(Error::ShapeMismatch(format!(
                "array `{name}`: extents {dims:?} imply {want} values, got {}",
                data.len()
            )));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::InvalidArgument(format!(
                "array `{name}`: extent exceeds the u32 range"
            )));
        }
        if self.entries.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate array name `{name}`")));
        }
        self.entries.insert(name.to_string(), ArrayEntry { dims, data });
        Ok(())
    }

    pub fn insert_mat(&mut self, name: &str, m: &Mat) -> Result<()> {
        self.insert(name, vec![m.rows(), m.cols()], m.data().to_vec())
    }

    pub fn insert_tensor(&mut self, name: &str, t: &DenseTensor) -> Result<()> {
        self.insert(name, t.dims().to_vec(), t.data().to_vec())
    }

    pub fn insert_vec(&mut self, name: &str, v: &[f64]) -> Result<()> {
        self.insert(name, vec![v.len()], v.to_vec())
    }

    pub fn insert_scalar(&mut self, name: &str, v: f64) -> Result<()> {
        self.insert(name, vec![1], vec![v])
    }

    pub fn get(&self, name: &str) -> Option<&ArrayEntry> {
        self.entries.get(name)
    }

    /// Fetch a required array, failing with the missing name.
    pub fn require(&self, name: &str) -> Result<&ArrayEntry> {
        self.entries.get(name).ok_or_else(|| Error::MissingArray(name.to_string()))
    }

    /// Fetch a required rank-2 array as a matrix.
    pub fn require_mat(&self, name: &str) -> Result<Mat> {
        let e = self.require(name)?;
        if e.dims.len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "array `{name}` has rank {}, expected 2",
                e.dims.len()
            )));
        }
        Mat::from_col_major(e.dims[0], e.dims[1], e.data.clone())
    }

    pub fn require_tensor(&self, name: &str) -> Result<DenseTensor> {
        let e = self.require(name)?;
        DenseTensor::new(e.dims.clone(), e.data.clone())
    }

    pub fn require_vec(&self, name: &str) -> Result<Vec<f64>> {
        let e = self.require(name)?;
        if e.dims.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "array `{name}` has rank {}, expected 1",
                e.dims.len()
            )));
        }
        Ok(e.data.clone())
    }

    pub fn require_scalar(&self, name: &str) -> Result<f64> {
        let v = self.require_vec(name)?;
        if v.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "array `{name}` has {} values, expected a single scalar",
                v.len()
            )));
        }
        Ok(v[0])
    }

    /// Serialize under the given magic.
    pub fn to_bytes(&self, magic: [u8; 4]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&magic);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(entry.dims.len() as u32).to_le_bytes());
            for &d in &entry.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &entry.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parse bytes written by [`ArrayFile::to_bytes`], verifying the magic,
    /// version, record structure and trailing checksum.
    pub fn from_bytes(bytes: &[u8], magic: [u8; 4]) -> Result<ArrayFile> {
        let mut cur = Cursor { bytes, pos: 0 };
        let found = cur.take(4, "header")?;
        let found: [u8; 4] = found.try_into().expect("sized slice");
        if found != magic {
            return Err(Error::BadMagic { expected: magic, found });
        }
        let version = cur.read_u32("header")?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { expected: FORMAT_VERSION, found: version });
        }
        if bytes.len() < cur.pos + 4 {
            return Err(Error::Truncated { array: "checksum".into() });
        }
        let body_end = bytes.len() - 4;

        // Records are parsed before the checksum is verified: chopping the
        // file off mid-array then reports the affected array by name, while
        // a length-preserving corruption still fails the checksum below.
        let mut file = ArrayFile::new();
        let mut last_name: Option<String> = None;
        while cur.pos < body_end {
            let name_len = cur.read_u32_within("directory", body_end)? as usize;
            let name_bytes = cur.take_within(name_len, "directory", body_end)?;
            let name = String::from_utf8(name_bytes.to_vec()).map_err(|_| {
                Error::InvalidArgument("array name is not valid UTF-8".into())
            })?;
            if let Some(prev) = &last_name {
                if *prev >= name {
                    return Err(Error::InvalidArgument(format!(
                        "array names out of order: `{prev}` before `{name}`"
                    )));
                }
            }
            let rank = cur.read_u32_within(&name, body_end)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(cur.read_u32_within(&name, body_end)? as usize);
            }
            let count: usize = dims.iter().product();
            let payload = cur.take_within(count * 8, &name, body_end)?;
            let data: Vec<f64> = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("sized chunk")))
                .collect();
            last_name = Some(name.clone());
            file.insert(&name, dims, data)?;
        }

        let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("sized slice"));
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        Ok(file)
    }

    /// Write to a file under the given magic.
    pub fn write(&self, path: &Path, magic: [u8; 4]) -> Result<()> {
        std::fs::write(path, self.to_bytes(magic))?;
        Ok(())
    }

    /// Read a file written by [`ArrayFile::write`].
    pub fn read(path: &Path, magic: [u8; 4]) -> Result<ArrayFile> {
        let bytes = std::fs::read(path)?;
        ArrayFile::from_bytes(&bytes, magic)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated { array: context.to_string() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    /// Like `take`, but also refuses to run into the checksum footer.
    fn take_within(&mut self, n: usize, context: &str, end: usize) -> Result<&'a [u8]> {
        if self.pos + n > end {
            return Err(Error::Truncated { array: context.to_string() });
        }
        self.take(n, context)
    }

    fn read_u32(&mut self, context: &str) -> Result<u32> {
        let s = self.take(4, context)?;
        Ok(u32::from_le_bytes(s.try_into().expect("sized slice")))
    }

    fn read_u32_within(&mut self, context: &str, end: usize) -> Result<u32> {
        if self.pos + 4 > end {
            return Err(Error::Truncated { array: context.to_string() });
        }
        self.read_u32(context)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{randn_mat, rng_for};

    const MAGIC: [u8; 4] = *b"TEST";

    fn sample_file() -> ArrayFile {
        let mut f = ArrayFile::new();
        let mut rng = rng_for(3, 0);
        f.insert_mat("beta", &randn_mat(&mut rng, 4, 3, 1.0)).unwrap();
        f.insert_vec("alpha", &[1.0, -2.5, f64::MIN_POSITIVE]).unwrap();
        f.insert_scalar("gamma/step", 42.0).unwrap();
        f.insert("delta", vec![2, 2, 2], vec![0.0; 8]).unwrap();
        f
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let f = sample_file();
        let bytes = f.to_bytes(MAGIC);
        let g = ArrayFile::from_bytes(&bytes, MAGIC).unwrap();
        assert_eq!(f, g);
        // Same content serializes to the same bytes.
        assert_eq!(bytes, g.to_bytes(MAGIC));
    }

    #[test]
    fn records_are_lexicographically_ordered() {
        let f = sample_file();
        let names: Vec<&str> = f.names().collect();
        assert_eq!(names, vec!["alpha", "beta", "delta", "gamma/step"]);
    }

    #[test]
    fn bad_magic_is_reported() {
        let bytes = sample_file().to_bytes(MAGIC);
        match ArrayFile::from_bytes(&bytes, *b"NTDS") {
            Err(Error::BadMagic { expected, found }) => {
                assert_eq!(&expected, b"NTDS");
                assert_eq!(&found, b"TEST");
            }
            other => panic!("expected a bad-magic error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = sample_file().to_bytes(MAGIC);
        bytes[4] = 9; // version field
        let end = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..end]);
        bytes[end..].copy_from_slice(&crc.to_le_bytes());
        match ArrayFile::from_bytes(&bytes, MAGIC) {
            Err(Error::VersionMismatch { expected: 1, found: 9 }) => {}
            other => panic!("expected a version error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_names_the_interrupted_array() {
        let f = sample_file();
        let bytes = f.to_bytes(MAGIC);
        // Cut inside the payload of "beta" (after header + "alpha" record),
        // then re-append a valid checksum so truncation is what's detected.
        let alpha_record = 4 + 5 + 4 + 4 + 3 * 8;
        let cut = 8 + alpha_record + 4 + 4 + 4 + 4 + 4 + 9; // mid-payload of beta
        let mut cut_bytes = bytes[..cut].to_vec();
        let crc = crc32fast::hash(&cut_bytes);
        cut_bytes.extend_from_slice(&crc.to_le_bytes());
        match ArrayFile::from_bytes(&cut_bytes, MAGIC) {
            Err(Error::Truncated { array }) => assert_eq!(array, "beta"),
            other => panic!("expected a truncation error, got {other:?}"),
        }
    }

    #[test]
    fn checksum_corruption_is_reported() {
        let mut bytes = sample_file().to_bytes(MAGIC);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        match ArrayFile::from_bytes(&bytes, MAGIC) {
            Err(Error::ChecksumMismatch { .. }) => {}
            other => panic!("expected a checksum error, got {other:?}"),
        }
    }

    #[test]
    fn missing_array_lookup_fails_by_name() {
        let f = sample_file();
        match f.require("nonexistent") {
            Err(Error::MissingArray(name)) => assert_eq!(name, "nonexistent"),
            other => panic!("expected a missing-array error, got {other:?}"),
        }
        assert!(f.require_mat("beta").is_ok());
    }

    #[test]
    fn duplicate_and_misshapen_inserts_are_rejected() {
        let mut f = ArrayFile::new();
        f.insert_vec("a", &[1.0]).unwrap();
        assert!(matches!(f.insert_vec("a", &[2.0]), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            f.insert("b", vec![2, 3], vec![0.0; 5]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn scalar_and_tensor_helpers_round_trip() {
        use crate::rng::randn_tensor;
        let mut f = ArrayFile::new();
        let mut rng = rng_for(4, 0);
        let t = randn_tensor(&mut rng, vec![2, 3, 4], 1.0);
        f.insert_tensor("t", &t).unwrap();
        f.insert_scalar("s", -7.25).unwrap();
        let bytes = f.to_bytes(MAGIC);
        let g = ArrayFile::from_bytes(&bytes, MAGIC).unwrap();
        assert_eq!(g.require_tensor("t").unwrap(), t);
        assert_eq!(g.require_scalar("s").unwrap(), -7.25);
    }
}
