use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array3, ArrayView2, Axis};

use super::CANONICAL_CHANNELS;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EEGE";
const VERSION: u16 = 1;

/// A stack of equal-length multi-channel epochs, `[epoch][channel][sample]`,
/// in microvolts.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochArray {
    data: Array3<f64>,
    fs: f64,
    channels: Vec<String>,
}

impl EpochArray {
    pub fn new(data: Array3<f64>, fs: f64, channels: Vec<String>) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if channels.len() != data.shape()[1] {
            return Err(Error::invalid(format!(
                "{} channel names for {} data channels",
                channels.len(),
                data.shape()[1]
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &channels {
            if !seen.insert(c.as_str()) {
                return Err(Error::invalid(format!("duplicate channel name {c:?}")));
            }
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at flat index {pos}")));
        }
        Ok(Self { data, fs, channels })
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn n_epochs(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_samples(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn epoch(&self, i: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), i)
    }

    /// Concatenates the epochs back into a continuous `[channel][sample]`
    /// signal, in recording order.
    pub fn concatenated(&self) -> Array2<f64> {
        let (ne, nc, ns) = self.data.dim();
        let mut out = Array2::zeros((nc, ne * ns));
        for e in 0..ne {
            for c in 0..nc {
                for s in 0..ns {
                    out[[c, e * ns + s]] = self.data[[e, c, s]];
                }
            }
        }
        out
    }

    /// Keeps the epochs whose mask entry is true, preserving order.
    pub fn select_epochs(&self, keep: &[bool]) -> Self {
        let idx: Vec<usize> = keep
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
            .collect();
        self.take_epochs(&idx)
    }

    pub fn take_epochs(&self, idx: &[usize]) -> Self {
        Self {
            data: self.data.select(Axis(0), idx),
            fs: self.fs,
            channels: self.channels.clone(),
        }
    }

    /// Reorders channels into the canonical 29-channel order (matching
    /// names case-insensitively) and drops any extra channels.
    pub fn to_canonical(&self) -> Result<Self> {
        let mut idx = Vec::with_capacity(CANONICAL_CHANNELS.len());
        let mut missing = Vec::new();
        for name in CANONICAL_CHANNELS {
            match self.channels.iter().position(|c| c.eq_ignore_ascii_case(name)) {
                Some(i) => idx.push(i),
                None => missing.push(name),
            }
        }
        if !missing.is_empty() {
            return Err(Error::invalid(format!(
                "missing canonical channels: {}",
                missing.join(", ")
            )));
        }
        Ok(Self {
            data: self.data.select(Axis(1), &idx),
            fs: self.fs,
            channels: CANONICAL_CHANNELS.iter().map(|s| s.to_string()).collect(),
        })
    }
}

/// Writes an `EEGE` v1 file. Samples are stored as `f32`.
pub fn write_epochs(path: &Path, ea: &EpochArray) -> Result<()> {
    let (ne, nc, ns) = ea.data.dim();
    let too_big = |what: &str| Error::invalid(format!("{what} does not fit the EEGE header"));
    let mut buf = Vec::with_capacity(24 + nc * 8 + ne * nc * ns * 4);
    buf.extend_from_slice(MAGIC);
    buf.write_u16::<LittleEndian>(VERSION).unwrap();
    buf.write_u16::<LittleEndian>(u16::try_from(nc).map_err(|_| too_big("n_channels"))?)
        .unwrap();
    buf.write_u32::<LittleEndian>(u32::try_from(ne).map_err(|_| too_big("n_epochs"))?)
        .unwrap();
    buf.write_u32::<LittleEndian>(u32::try_from(ns).map_err(|_| too_big("n_samples"))?)
        .unwrap();
    buf.write_f64::<LittleEndian>(ea.fs).unwrap();
    for name in &ea.channels {
        let bytes = name.as_bytes();
        buf.write_u16::<LittleEndian>(u16::try_from(bytes.len()).map_err(|_| too_big("channel name"))?)
            .unwrap();
        buf.extend_from_slice(bytes);
    }
    for v in ea.data.iter() {
        buf.write_f32::<LittleEndian>(*v as f32).unwrap();
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads an `EEGE` v1 file, promoting samples to `f64`.
pub fn read_epochs(path: &Path) -> Result<EpochArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|msg| Error::Format {
        path: path.to_path_buf(),
        msg,
    })
}

fn decode(bytes: &[u8]) -> std::result::Result<EpochArray, String> {
    let mut cur = Cursor::new(bytes);
    let truncated = |what: &str| format!("truncated file while reading {what}");
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| truncated("magic"))?;
    if &magic != MAGIC {
        return Err(format!("bad magic {:?}", String::from_utf8_lossy(&magic)));
    }
    let version = cur.read_u16::<LittleEndian>().map_err(|_| truncated("version"))?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let nc = cur.read_u16::<LittleEndian>().map_err(|_| truncated("header"))? as usize;
    let ne = cur.read_u32::<LittleEndian>().map_err(|_| truncated("header"))? as usize;
    let ns = cur.read_u32::<LittleEndian>().map_err(|_| truncated("header"))? as usize;
    let fs = cur.read_f64::<LittleEndian>().map_err(|_| truncated("header"))?;

    let mut channels = Vec::with_capacity(nc);
    for i in 0..nc {
        let len = cur.read_u16::<LittleEndian>().map_err(|_| truncated("channel names"))? as usize;
        let mut name = vec![0u8; len];
        cur.read_exact(&mut name).map_err(|_| truncated("channel names"))?;
        channels.push(String::from_utf8(name).map_err(|_| format!("channel {i}: invalid UTF-8"))?);
    }

    let n = ne
        .checked_mul(nc)
        .and_then(|v| v.checked_mul(ns))
        .ok_or("header dimensions overflow")?;
    let start = cur.position() as usize;
    let payload = &bytes[start..];
    let expected = n * 4;
    if payload.len() < expected {
        return Err(format!(
            "truncated payload: header declares {ne} epochs x {nc} channels x {ns} samples \
             ({expected} bytes), found {} bytes",
            payload.len()
        ));
    }
    if payload.len() > expected {
        return Err(format!(
            "header/payload size mismatch: expected {expected} payload bytes, found {}",
            payload.len()
        ));
    }

    let mut values = Vec::with_capacity(n);
    let mut rd = Cursor::new(payload);
    for i in 0..n {
        let v = rd.read_f32::<LittleEndian>().map_err(|_| truncated("payload"))?;
        if !v.is_finite() {
            let (e, rest) = (i / (nc * ns), i % (nc * ns));
            return Err(format!(
                "non-finite sample at epoch {e}, channel {}, sample {}",
                rest / ns,
                rest % ns
            ));
        }
        values.push(f64::from(v));
    }
    let data = Array3::from_shape_vec((ne, nc, ns), values).map_err(|e| e.to_string())?;
    EpochArray::new(data, fs, channels).map_err(|e| e.to_string())
}
