//! Versioned binary checkpoint: layer shapes, parameters and named numeric
//! metadata (normalisation statistics, state-encoding descriptors, ...).
//! All values little endian; parameters round-trip bit-exactly.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, Array3};

use super::{Activation, Conv1d, Dense, Layer, Lstm, Network, NnError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSNNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_DENSE: u8 = 1;
const KIND_CONV: u8 = 2;
const KIND_LSTM: u8 = 3;
const KIND_POOL: u8 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub metadata: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(network: Network) -> Self {
        Self {
            network,
            metadata: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, values: Vec<f64>) -> Self {
        self.metadata.push((key.to_string(), values));
        self
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_slice())
    }

    pub fn require(&self, key: &str) -> Result<&[f64], NnError> {
        self.get(key)
            .ok_or_else(|| NnError::Checkpoint(format!("missing metadata entry `{key}`")))
    }
}

fn put_f64s<W: Write>(w: &mut W, xs: &[f64]) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn put_act<W: Write>(w: &mut W, act: Activation) -> std::io::Result<()> {
    let (tag, p) = act.tag();
    w.write_all(&[tag])?;
    w.write_all(&p.to_le_bytes())
}

pub fn write_checkpoint<W: Write>(ck: &Checkpoint, mut w: W) -> Result<(), NnError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(ck.network.layers.len() as u32).to_le_bytes())?;
    for layer in &ck.network.layers {
        match layer {
            Layer::Dense(d) => {
                w.write_all(&[KIND_DENSE])?;
                put_act(&mut w, d.act)?;
                for n in [d.outputs(), d.inputs()] {
                    w.write_all(&(n as u64).to_le_bytes())?;
                }
            }
            Layer::Conv1d(c) => {
                w.write_all(&[KIND_CONV])?;
                put_act(&mut w, c.act)?;
                for n in [c.filters(), c.channels(), c.width()] {
                    w.write_all(&(n as u64).to_le_bytes())?;
                }
            }
            Layer::Lstm(l) => {
                w.write_all(&[KIND_LSTM])?;
                for n in [l.inputs(), l.hidden()] {
                    w.write_all(&(n as u64).to_le_bytes())?;
                }
            }
            Layer::GlobalAvgPool => w.write_all(&[KIND_POOL])?,
        }
        for p in layer.params() {
            put_f64s(&mut w, p)?;
        }
    }
    w.write_all(&(ck.metadata.len() as u32).to_le_bytes())?;
    for (k, v) in &ck.metadata {
        w.write_all(&(k.len() as u32).to_le_bytes())?;
        w.write_all(k.as_bytes())?;
        w.write_all(&(v.len() as u64).to_le_bytes())?;
        put_f64s(&mut w, v)?;
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const K: usize>(&mut self) -> Result<[u8; K], NnError> {
        let mut b = [0u8; K];
        self.r.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => NnError::Checkpoint("truncated file".into()),
            _ => NnError::Io(e),
        })?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn dim(&mut self) -> Result<usize, NnError> {
        let n = u64::from_le_bytes(self.bytes()?);
        if n == 0 || n > (1 << 24) {
            return Err(NnError::Checkpoint(format!("implausible dimension {n}")));
        }
        Ok(n as usize)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NnError> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }
    fn act(&mut self) -> Result<Activation, NnError> {
        let tag = self.u8()?;
        let p = f64::from_le_bytes(self.bytes()?);
        Activation::from_tag(tag, p).ok_or_else(|| NnError::Checkpoint(format!("unknown activation tag {tag}")))
    }
}

fn shape_err(e: ndarray::ShapeError) -> NnError {
    NnError::Checkpoint(e.to_string())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Checkpoint, NnError> {
    let mut rd = Reader { r };
    if &rd.bytes::<8>()? != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = rd.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let n_layers = rd.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(64));
    for _ in 0..n_layers {
        let layer = match rd.u8()? {
            KIND_DENSE => {
                let act = rd.act()?;
                let (o, i) = (rd.dim()?, rd.dim()?);
                Layer::Dense(Dense {
                    w: Array2::from_shape_vec((o, i), rd.f64s(o * i)?).map_err(shape_err)?,
                    b: Array1::from(rd.f64s(o)?),
                    act,
                })
            }
            KIND_CONV => {
                let act = rd.act()?;
                let (f, c, k) = (rd.dim()?, rd.dim()?, rd.dim()?);
                Layer::Conv1d(Conv1d {
                    w: Array3::from_shape_vec((f, c, k), rd.f64s(f * c * k)?).map_err(shape_err)?,
                    b: Array1::from(rd.f64s(f)?),
                    act,
                })
            }
            KIND_LSTM => {
                let (i, h) = (rd.dim()?, rd.dim()?);
                Layer::Lstm(Lstm {
                    wx: Array2::from_shape_vec((i, 4 * h), rd.f64s(i * 4 * h)?).map_err(shape_err)?,
                    wh: Array2::from_shape_vec((h, 4 * h), rd.f64s(h * 4 * h)?).map_err(shape_err)?,
                    b: Array1::from(rd.f64s(4 * h)?),
                })
            }
            KIND_POOL => Layer::GlobalAvgPool,
            other => return Err(NnError::Checkpoint(format!("unknown layer kind {other}"))),
        };
        layers.push(layer);
    }
    let network = Network::new(layers)?;
    let n_meta = rd.u32()? as usize;
    let mut metadata = Vec::with_capacity(n_meta.min(256));
    for _ in 0..n_meta {
        let klen = rd.u32()? as usize;
        let mut kb = vec![0u8; klen];
        rd.r.read_exact(&mut kb)
            .map_err(|_| NnError::Checkpoint("truncated metadata key".into()))?;
        let key = String::from_utf8(kb).map_err(|_| NnError::Checkpoint("metadata key is not UTF-8".into()))?;
        let n = u64::from_le_bytes(rd.bytes()?) as usize;
        metadata.push((key, rd.f64s(n)?));
    }
    Ok(Checkpoint { network, metadata })
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), NnError> {
        write_checkpoint(self, std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, NnError> {
        read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        write_checkpoint(self, &mut v).expect("writing to memory");
        v
    }
}
