//! On-disk record files used for history and latest stores, the
//! resilient-stream write-ahead log and the registry entry table.
//!
//! Layout (all integers big-endian):
//!
//! ```text
//! header:  magic "RGMT" | version u16 | schema hash [u8; 32] | epoch u64
//! record:  length u32 | crc32 u32 | JSON body (length bytes)
//! ```
//!
//! A record whose length runs past the end of the file, or whose checksum
//! does not match, marks a torn tail: it and everything after it are
//! truncated on open.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::ModelError;

pub const MAGIC: &[u8; 4] = b"RGMT";
pub const VERSION: u16 = 1;
const HEADER_LEN: u64 = 4 + 2 + 32 + 8;
const MAX_RECORD: u32 = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Durability {
    /// `fsync` after every append batch.
    Sync,
    /// Leave flushing to the OS. Survives process crashes, not power loss.
    Buffered,
}

pub struct RecordFile<T> {
    path: PathBuf,
    file: File,
    hash: [u8; 32],
    epoch: u64,
    durability: Durability,
    records: u64,
    _marker: PhantomData<T>,
}

impl<T: Serialize + DeserializeOwned> RecordFile<T> {
    /// Opens or creates the file and returns every intact record. A new file
    /// gets `new_epoch` in its header; an existing one keeps its own.
    pub fn open(
        path: impl AsRef<Path>,
        hash: [u8; 32],
        new_epoch: u64,
        durability: Durability,
    ) -> Result<(Self, Vec<T>), ModelError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(&path)?;
        let len = file.metadata()?.len();
        let (epoch, records, good_len) = if len == 0 {
            write_header(&mut file, &hash, new_epoch)?;
            file.sync_all()?;
            (new_epoch, Vec::new(), HEADER_LEN)
        } else {
            read_all(&mut file, &hash, len)?
        };
        if good_len < len {
            file.set_len(good_len)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::Start(good_len))?;
        let count = records.len() as u64;
        Ok((
            RecordFile { path, file, hash, epoch, durability, records: count, _marker: PhantomData },
            records,
        ))
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record_count(&self) -> u64 {
        self.records
    }

    pub fn append(&mut self, record: &T) -> Result<(), ModelError> {
        self.append_batch(std::slice::from_ref(record))
    }

    /// Appends records and, with `Durability::Sync`, flushes them to stable
    /// storage before returning.
    pub fn append_batch(&mut self, records: &[T]) -> Result<(), ModelError> {
        let mut buf = Vec::new();
        for r in records {
            encode_record(&mut buf, r)?;
        }
        self.file.write_all(&buf)?;
        if self.durability == Durability::Sync {
            self.file.sync_data()?;
        }
        self.records += records.len() as u64;
        Ok(())
    }

    /// Replaces the file contents atomically (write to a sibling, rename).
    pub fn rewrite(&mut self, records: &[T]) -> Result<(), ModelError> {
        let tmp = self.path.with_extension("rewrite");
        {
            let mut f = File::create(&tmp)?;
            write_header(&mut f, &self.hash, self.epoch)?;
            let mut w = BufWriter::new(&mut f);
            let mut buf = Vec::new();
            for r in records {
                buf.clear();
                encode_record(&mut buf, r)?;
                w.write_all(&buf)?;
            }
            w.flush()?;
            drop(w);
            f.sync_all()?;
        }
        std::fs::rename(&tmp, &self.path)?;
        let mut file = OpenOptions::new().read(true).write(true).open(&self.path)?;
        file.seek(SeekFrom::End(0))?;
        self.file = file;
        self.records = records.len() as u64;
        Ok(())
    }

    /// Reads every record currently in the file.
    pub fn read_back(&self) -> Result<Vec<T>, ModelError> {
        let mut f = File::open(&self.path)?;
        let len = f.metadata()?.len();
        Ok(read_all(&mut f, &self.hash, len)?.1)
    }
}

fn write_header(f: &mut File, hash: &[u8; 32], epoch: u64) -> Result<(), ModelError> {
    let mut h = Vec::with_capacity(HEADER_LEN as usize);
    h.extend_from_slice(MAGIC);
    h.extend_from_slice(&VERSION.to_be_bytes());
    h.extend_from_slice(hash);
    h.extend_from_slice(&epoch.to_be_bytes());
    f.write_all(&h)?;
    Ok(())
}

fn encode_record<T: Serialize>(buf: &mut Vec<u8>, r: &T) -> Result<(), ModelError> {
    let body = serde_json::to_vec(r).map_err(|e| ModelError::Format(e.to_string()))?;
    buf.extend_from_slice(&(body.len() as u32).to_be_bytes());
    buf.extend_from_slice(&crc32fast::hash(&body).to_be_bytes());
    buf.extend_from_slice(&body);
    Ok(())
}

/// Returns (epoch, records, length of the intact prefix).
fn read_all<T: DeserializeOwned>(f: &mut File, hash: &[u8; 32], len: u64) -> Result<(u64, Vec<T>, u64), ModelError> {
    f.seek(SeekFrom::Start(0))?;
    let mut r = BufReader::new(f);
    let mut header = [0u8; HEADER_LEN as usize];
    if len < HEADER_LEN {
        return Err(ModelError::Format("file shorter than its header".into()));
    }
    r.read_exact(&mut header)?;
    if &header[0..4] != MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let version = u16::from_be_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(ModelError::Format(format!("unsupported table file version {version}")));
    }
    if &header[6..38] != hash {
        return Err(ModelError::Format("schema hash mismatch".into()));
    }
    let epoch = u64::from_be_bytes(header[38..46].try_into().expect("8 bytes"));

    let mut records = Vec::new();
    let mut pos = HEADER_LEN;
    loop {
        if pos + 8 > len {
            break;
        }
        let mut pre = [0u8; 8];
        r.read_exact(&mut pre)?;
        let n = u32::from_be_bytes(pre[0..4].try_into().unwrap());
        let crc = u32::from_be_bytes(pre[4..8].try_into().unwrap());
        if n > MAX_RECORD || pos + 8 + n as u64 > len {
            break;
        }
        let mut body = vec![0u8; n as usize];
        r.read_exact(&mut body)?;
        if crc32fast::hash(&body) != crc {
            break;
        }
        match serde_json::from_slice(&body) {
            Ok(rec) => records.push(rec),
            Err(_) => break,
        }
        pos += 8 + n as u64;
    }
    Ok((epoch, records, pos))
}
