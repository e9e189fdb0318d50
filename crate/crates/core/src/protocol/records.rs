//! Per-round records and their binary file format.
//!
//! Little-endian throughout. Header:
//!
//! | field   | type      |
//! |---------|-----------|
//! | magic   | `b"CVQK"` |
//! | version | `u16`     |
//! | rounds  | `u64`     |
//! | params  | 8 × `f64`: `N_A, N_B, loss_A_dB, loss_B_dB, ξ_A, ξ_B, a, b` |
//! | seed    | `u64`     |
//!
//! followed by `rounds` frames of [`FRAME_DOUBLES`] `f64`s:
//! `q_A p_A q_B p_B q_Z p_Z q_A⁰ p_A⁰ q_B⁰ p_B⁰`. Absent preparation values
//! (entanglement-based runs) are NaN.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussian::ComplexSample;

pub const MAGIC: [u8; 4] = *b"CVQK";
pub const VERSION: u16 = 1;
pub const FRAME_DOUBLES: usize = 10;
const HEADER_BYTES: usize = 4 + 2 + 8 + 8 * 8 + 8;

/// One protocol round.
///
/// `alice`/`bob` are heterodyne outcomes (EB) or displaced prepared amplitudes
/// (PM). `alice0`/`bob0` hold the PM amplitudes before displacement.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundRecord {
    pub alice: ComplexSample,
    pub bob: ComplexSample,
    pub relay_z: ComplexSample,
    pub alice0: Option<ComplexSample>,
    pub bob0: Option<ComplexSample>,
}

impl RoundRecord {
    fn to_frame(self) -> [f64; FRAME_DOUBLES] {
        let opt = |c: Option<ComplexSample>| c.map_or((f64::NAN, f64::NAN), |c| (c.q, c.p));
        let (a0q, a0p) = opt(self.alice0);
        let (b0q, b0p) = opt(self.bob0);
        [self.alice.q, self.alice.p, self.bob.q, self.bob.p, self.relay_z.q, self.relay_z.p, a0q, a0p, b0q, b0p]
    }

    fn from_frame(f: &[f64; FRAME_DOUBLES]) -> Result<Self> {
        let opt = |q: f64, p: f64| -> Result<Option<ComplexSample>> {
            match (q.is_nan(), p.is_nan()) {
                (true, true) => Ok(None),
                (false, false) => Ok(Some(ComplexSample::new(q, p))),
                _ => Err(Error::Format("half-present preparation amplitude".into())),
            }
        };
        if f[..6].iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite measurement value in frame".into()));
        }
        Ok(RoundRecord {
            alice: ComplexSample::new(f[0], f[1]),
            bob: ComplexSample::new(f[2], f[3]),
            relay_z: ComplexSample::new(f[4], f[5]),
            alice0: opt(f[6], f[7])?,
            bob0: opt(f[8], f[9])?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordHeader {
    pub version: u16,
    pub rounds: u64,
    /// `N_A, N_B, loss_A_dB, loss_B_dB, ξ_A, ξ_B, a, b`
    pub params: [f64; 8],
    pub seed: u64,
}

impl RecordHeader {
    pub fn new(rounds: u64, params: [f64; 8], seed: u64) -> Self {
        RecordHeader { version: VERSION, rounds, params, seed }
    }

    fn to_bytes(self) -> [u8; HEADER_BYTES] {
        let mut b = [0u8; HEADER_BYTES];
        b[..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..14].copy_from_slice(&self.rounds.to_le_bytes());
        for (i, v) in self.params.iter().enumerate() {
            b[14 + 8 * i..22 + 8 * i].copy_from_slice(&v.to_le_bytes());
        }
        b[78..86].copy_from_slice(&self.seed.to_le_bytes());
        b
    }

    fn from_bytes(b: &[u8; HEADER_BYTES]) -> Result<Self> {
        if b[..4] != MAGIC {
            return Err(Error::Format("bad magic; not a record file".into()));
        }
        let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().expect("8 bytes"));
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported record version {version}")));
        }
        let params = std::array::from_fn(|i| f64::from_bits(u64_at(14 + 8 * i)));
        Ok(RecordHeader { version, rounds: u64_at(6), params, seed: u64_at(78) })
    }
}

/// Streaming writer. The round count is fixed in the header up front and checked
/// on [`RecordWriter::finish`].
pub struct RecordWriter<W: Write> {
    inner: W,
    expected: u64,
    written: u64,
}

impl RecordWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: RecordHeader) -> Result<Self> {
        RecordWriter::new(BufWriter::new(File::create(path)?), header)
    }
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut inner: W, header: RecordHeader) -> Result<Self> {
        inner.write_all(&header.to_bytes())?;
        Ok(RecordWriter { inner, expected: header.rounds, written: 0 })
    }

    pub fn write(&mut self, record: &RoundRecord) -> Result<()> {
        if self.written == self.expected {
            return Err(Error::Format(format!("more than {} records written", self.expected)));
        }
        for v in record.to_frame() {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.expected {
            return Err(Error::Format(format!("header promises {} records, wrote {}", self.expected, self.written)));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Streaming reader; yields records one at a time.
pub struct RecordReader<R: Read> {
    inner: R,
    header: RecordHeader,
    read: u64,
}

impl RecordReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        RecordReader::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> RecordReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut b = [0u8; HEADER_BYTES];
        inner.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("truncated header".into()),
            _ => Error::Io(e),
        })?;
        let header = RecordHeader::from_bytes(&b)?;
        Ok(RecordReader { inner, header, read: 0 })
    }

    pub fn header(&self) -> &RecordHeader {
        &self.header
    }

    fn next_record(&mut self) -> Result<RoundRecord> {
        let mut b = [0u8; 8 * FRAME_DOUBLES];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                Error::Format(format!("file ends after {} of {} records", self.read, self.header.rounds))
            }
            _ => Error::Io(e),
        })?;
        let frame = std::array::from_fn(|i| f64::from_le_bytes(b[8 * i..8 * i + 8].try_into().expect("8 bytes")));
        self.read += 1;
        RoundRecord::from_frame(&frame)
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<RoundRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        (self.read < self.header.rounds).then(|| self.next_record())
    }
}

pub fn write_records(path: impl AsRef<Path>, header: RecordHeader, records: &[RoundRecord]) -> Result<()> {
    if header.rounds != records.len() as u64 {
        return Err(Error::usage("header round count does not match record slice"));
    }
    let mut w = RecordWriter::create(path, header)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_records(path: impl AsRef<Path>) -> Result<(RecordHeader, Vec<RoundRecord>)> {
    let reader = RecordReader::open(path)?;
    let header = *reader.header();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(i: usize, pm: bool) -> RoundRecord {
        let f = i as f64;
        RoundRecord {
            alice: ComplexSample::new(f, -f),
            bob: ComplexSample::new(0.5 * f, 2.0),
            relay_z: ComplexSample::new(-1.0, f * f),
            alice0: pm.then(|| ComplexSample::new(3.0, f)),
            bob0: pm.then(|| ComplexSample::new(f, 4.0)),
        }
    }

    #[test]
    fn round_trip_in_memory() {
        let recs: Vec<_> = (0..5).map(|i| sample(i, i % 2 == 0)).collect();
        let header = RecordHeader::new(5, [10.0, 10.0, 1.0, 1.0, 0.01, 0.01, -0.7, -0.7], 42);
        let mut w = RecordWriter::new(Vec::new(), header).unwrap();
        for r in &recs {
            w.write(r).unwrap();
        }
        let bytes = w.finish().unwrap();
        assert_eq!(bytes.len(), HEADER_BYTES + 5 * 8 * FRAME_DOUBLES);
        let r = RecordReader::new(bytes.as_slice()).unwrap();
        assert_eq!(*r.header(), header);
        let back: Vec<_> = r.collect::<Result<_>>().unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.bin");
        let recs: Vec<_> = (0..3).map(|i| sample(i, true)).collect();
        let header = RecordHeader::new(3, [1.0; 8], 7);
        write_records(&path, header, &recs).unwrap();
        assert_eq!(read_records(&path).unwrap(), (header, recs));
    }

    #[test]
    fn rejects_corruption() {
        let header = RecordHeader::new(2, [0.0; 8], 0);
        let mut w = RecordWriter::new(Vec::new(), header).unwrap();
        w.write(&sample(1, false)).unwrap();
        w.write(&sample(2, false)).unwrap();
        let good = w.finish().unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(RecordReader::new(bad_magic.as_slice()), Err(Error::Format(_))));

        let truncated = &good[..good.len() - 3];
        let res: Result<Vec<_>> = RecordReader::new(truncated).unwrap().collect();
        assert!(matches!(res, Err(Error::Format(_))));

        assert!(matches!(RecordReader::new(&good[..10]), Err(Error::Format(_))));

        let mut short = RecordWriter::new(Vec::new(), header).unwrap();
        short.write(&sample(0, false)).unwrap();
        assert!(short.finish().is_err());
    }

    proptest! {
        #[test]
        fn frames_round_trip(v in prop::array::uniform10(-1e6f64..1e6), pm in any::<bool>()) {
            let rec = RoundRecord {
                alice: ComplexSample::new(v[0], v[1]),
                bob: ComplexSample::new(v[2], v[3]),
                relay_z: ComplexSample::new(v[4], v[5]),
                alice0: pm.then(|| ComplexSample::new(v[6], v[7])),
                bob0: pm.then(|| ComplexSample::new(v[8], v[9])),
            };
            prop_assert_eq!(RoundRecord::from_frame(&rec.to_frame()).unwrap(), rec);
        }
    }
}
