//! Binary dataset container and CSV export.
//!
//! Layout (all little endian):
//!
//! ```text
//! magic        8 bytes  "TMSDATA\0"
//! version      u32
//! n_channels   u32
//! n_classes    u32
//! seed         u64
//! n_traj       u64
//! per trajectory index entry:
//!     offset        u64   byte offset of the record block
//!     n_samples     u64
//!     label         u32
//!     split         u8    0 train, 1 validation, 2 test
//!     slot_duration f64
//! record blocks: n_samples * n_channels f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, Dataset, DatasetSplit, Observation, SplitKind, Trajectory, N_CHANNELS};

pub const MAGIC: &[u8; 8] = b"TMSDATA\0";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: u64 = 8 + 4 + 4 + 4 + 8 + 8;
const INDEX_ENTRY_LEN: u64 = 8 + 8 + 4 + 1 + 8;

fn split_code(kind: Option<SplitKind>) -> u8 {
    match kind {
        Some(SplitKind::Train) => 0,
        Some(SplitKind::Validation) => 1,
        Some(SplitKind::Test) => 2,
        None => u8::MAX,
    }
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<(), DataError> {
    let n = ds.trajectories.len();
    let mut kinds = vec![None; n];
    for kind in [SplitKind::Train, SplitKind::Validation, SplitKind::Test] {
        for &i in ds.split.indices(kind) {
            kinds[i] = Some(kind);
        }
    }
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(N_CHANNELS as u32).to_le_bytes())?;
    w.write_all(&(ds.n_classes as u32).to_le_bytes())?;
    w.write_all(&ds.generator_seed.to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())?;

    let mut offset = HEADER_LEN + INDEX_ENTRY_LEN * n as u64;
    for (t, kind) in ds.trajectories.iter().zip(&kinds) {
        w.write_all(&offset.to_le_bytes())?;
        w.write_all(&(t.len() as u64).to_le_bytes())?;
        w.write_all(&(t.label as u32).to_le_bytes())?;
        w.write_all(&[split_code(*kind)])?;
        w.write_all(&t.slot_duration.to_le_bytes())?;
        offset += (t.len() * N_CHANNELS * 8) as u64;
    }
    for t in &ds.trajectories {
        for s in &t.samples {
            for x in s.to_array() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
    record: usize,
}

impl<R: Read> Cursor<R> {
    fn bytes<const K: usize>(&mut self) -> Result<[u8; K], DataError> {
        let mut buf = [0u8; K];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => DataError::Truncated {
                offset: self.offset,
                record: self.record,
            },
            _ => DataError::Io(e),
        })?;
        self.offset += K as u64;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

pub fn read_dataset<R: Read>(r: R) -> Result<Dataset, DataError> {
    let mut c = Cursor {
        inner: r,
        offset: 0,
        record: 0,
    };
    if &c.bytes::<8>()? != MAGIC {
        return Err(DataError::BadMagic);
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(DataError::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n_channels = c.u32()? as usize;
    if n_channels != N_CHANNELS {
        return Err(DataError::Malformed {
            record: 0,
            reason: format!("expected {N_CHANNELS} channels, found {n_channels}"),
        });
    }
    let n_classes = c.u32()? as usize;
    let seed = c.u64()?;
    let n = c.u64()? as usize;

    struct Entry {
        offset: u64,
        len: usize,
        label: usize,
        split: u8,
        dt: f64,
    }
    let mut index = Vec::with_capacity(n.min(1 << 20));
    for i in 0..n {
        c.record = i;
        index.push(Entry {
            offset: c.u64()?,
            len: c.u64()? as usize,
            label: c.u32()? as usize,
            split: c.bytes::<1>()?[0],
            dt: c.f64()?,
        });
    }

    let mut split = DatasetSplit::default();
    let mut trajectories = Vec::with_capacity(n.min(1 << 20));
    for (i, e) in index.into_iter().enumerate() {
        c.record = i;
        if e.offset != c.offset {
            return Err(DataError::Malformed {
                record: i,
                reason: format!("index offset {} but record starts at {}", e.offset, c.offset),
            });
        }
        if e.label >= n_classes {
            return Err(DataError::Malformed {
                record: i,
                reason: format!("label {} >= n_classes {n_classes}", e.label),
            });
        }
        match e.split {
            0 => split.train.push(i),
            1 => split.validation.push(i),
            2 => split.test.push(i),
            u8::MAX => {}
            other => {
                return Err(DataError::Malformed {
                    record: i,
                    reason: format!("unknown split code {other}"),
                })
            }
        }
        let mut samples = Vec::with_capacity(e.len.min(1 << 24));
        for _ in 0..e.len {
            let mut x = [0.0; N_CHANNELS];
            for v in x.iter_mut() {
                *v = c.f64()?;
            }
            samples.push(Observation::from_array(x));
        }
        trajectories.push(Trajectory {
            label: e.label,
            samples,
            slot_duration: e.dt,
        });
    }
    Ok(Dataset {
        trajectories,
        split,
        generator_seed: seed,
        n_classes,
    })
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// One row per sample: `t,q,v,a,f,tq,label,traj_id`.
pub fn export_csv<W: Write>(ds: &Dataset, w: W) -> Result<(), DataError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "q", "v", "a", "f", "tq", "label", "traj_id"])?;
    for (id, t) in ds.trajectories.iter().enumerate() {
        for (i, s) in t.samples.iter().enumerate() {
            wr.write_record(&[
                format!("{}", i as f64 * t.slot_duration),
                s.q.to_string(),
                s.v.to_string(),
                s.a.to_string(),
                s.f.to_string(),
                s.tq.to_string(),
                t.label.to_string(),
                id.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, GeneratorConfig};

    fn small() -> Dataset {
        generate_dataset(10, 0.3, 8, &GeneratorConfig::default()).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let ds = small();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(&buf[..]).unwrap();
        assert_eq!(ds, back);
        let mut again = Vec::new();
        write_dataset(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn truncation_names_offset() {
        let mut buf = Vec::new();
        write_dataset(&small(), &mut buf).unwrap();
        let cut = buf.len() - 3;
        match read_dataset(&buf[..cut]) {
            Err(DataError::Truncated { offset, record }) => {
                assert_eq!(record, 39);
                assert!(offset <= cut as u64);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut buf = Vec::new();
        write_dataset(&small(), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_dataset(&bad[..]), Err(DataError::BadMagic)));
        let mut bad = buf;
        bad[8] = 9;
        assert!(matches!(
            read_dataset(&bad[..]),
            Err(DataError::UnsupportedVersion { found: 9, .. })
        ));
    }

    #[test]
    fn csv_has_one_row_per_sample() {
        let ds = small();
        let mut out = Vec::new();
        export_csv(&ds, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), ds.total_points() + 1);
        assert!(text.starts_with("t,q,v,a,f,tq,label,traj_id\n"));
    }
}
