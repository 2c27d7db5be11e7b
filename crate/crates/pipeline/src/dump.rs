//! Replay dump files: an 8-byte magic, a u16 LE format version, then
//! records of host arrival time (u64 LE, ms), datagram length (u32 LE) and
//! the datagram bytes exactly as received.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{PipelineError, Result};

pub const DUMP_MAGIC: &[u8; 8] = b"GRTDUMP\0";
pub const DUMP_VERSION: u16 = 1;
const MAX_DATAGRAM: u32 = 65_507;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpRecord {
    pub arrival_ms: u64,
    pub bytes: Vec<u8>,
}

pub struct DumpWriter<W: Write> {
    out: W,
    records: u64,
}

impl DumpWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| PipelineError::io(path, e))?;
        DumpWriter::new(BufWriter::new(f)).map_err(|e| PipelineError::io(path, e))
    }
}

impl<W: Write> DumpWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        out.write_all(DUMP_MAGIC)?;
        out.write_all(&DUMP_VERSION.to_le_bytes())?;
        Ok(Self { out, records: 0 })
    }

    pub fn write(&mut self, arrival_ms: u64, bytes: &[u8]) -> io::Result<()> {
        self.out.write_all(&arrival_ms.to_le_bytes())?;
        self.out.write_all(&(bytes.len() as u32).to_le_bytes())?;
        self.out.write_all(bytes)?;
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Writes a whole dump in one go.
pub fn write_dump(path: &Path, records: &[DumpRecord]) -> Result<()> {
    let mut w = DumpWriter::create(path)?;
    for r in records {
        w.write(r.arrival_ms, &r.bytes).map_err(|e| PipelineError::io(path, e))?;
    }
    w.finish().map_err(|e| PipelineError::io(path, e))?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<Vec<DumpRecord>> {
    let f = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| PipelineError::io(path, e))?;
    parse_dump(&bytes)
}

pub fn parse_dump(bytes: &[u8]) -> Result<Vec<DumpRecord>> {
    let bad = |offset: usize, msg: &str| PipelineError::DumpFormat {
        offset: offset as u64,
        msg: msg.to_string(),
    };
    if bytes.len() < 10 || &bytes[..8] != DUMP_MAGIC {
        return Err(bad(0, "not a gaitrt dump"));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != DUMP_VERSION {
        return Err(bad(8, &format!("unsupported dump version {version}")));
    }
    let mut records = Vec::new();
    let mut at = 10;
    while at < bytes.len() {
        if bytes.len() - at < 12 {
            return Err(bad(at, "truncated record header"));
        }
        let arrival_ms = u64::from_le_bytes(bytes[at..at + 8].try_into().expect("eight bytes"));
        let len = u32::from_le_bytes(bytes[at + 8..at + 12].try_into().expect("four bytes"));
        if len > MAX_DATAGRAM {
            return Err(bad(at + 8, &format!("record length {len} exceeds a datagram")));
        }
        let start = at + 12;
        let end = start + len as usize;
        if end > bytes.len() {
            return Err(bad(at, "truncated record payload"));
        }
        if records.last().is_some_and(|r: &DumpRecord| r.arrival_ms > arrival_ms) {
            return Err(bad(at, "arrival times go backwards"));
        }
        records.push(DumpRecord {
            arrival_ms,
            bytes: bytes[start..end].to_vec(),
        });
        at = end;
    }
    Ok(records)
}
