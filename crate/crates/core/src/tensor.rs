//! Dense f64 tensors and their binary file format.
//!
//! Images and activations are stored channels-first (`C × H × W`), row-major.
//! Every public constructor rejects non-finite values, so a `Tensor` in hand
//! always holds finite data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Magic prefix of the binary tensor format.
pub const TENSOR_MAGIC: &[u8; 8] = b"SXTENSR\0";

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {:?} holds {} values but {} were given", shape, numel, data.len()),
            ));
        }
        check_finite("Tensor::new", &data)?;
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor from data already known to be finite and of the right length.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    /// Like [`Tensor::from_parts`] but verifies finiteness, naming `op` on failure.
    pub(crate) fn checked(op: &'static str, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_finite(op, &data)?;
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Tensor::new(vec![], vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Result<Self> {
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(&mut f).collect();
        Tensor::new(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        Ok(Tensor::from_parts(shape.to_vec(), self.data.clone()))
    }

    /// Returns `(channels, height, width)` for a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape("chw", format!("expected rank 3, got shape {:?}", self.shape))),
        }
    }

    /// Returns `(height, width)` for a rank-2 tensor.
    pub fn hw(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [h, w] => Ok((h, w)),
            _ => Err(Error::shape("hw", format!("expected rank 2, got shape {:?}", self.shape))),
        }
    }

    /// One channel of a `C × H × W` tensor as an `H × W` tensor.
    pub fn channel(&self, index: usize) -> Result<Tensor> {
        let (c, h, w) = self.chw()?;
        if index >= c {
            return Err(Error::shape("channel", format!("channel {index} of {c}")));
        }
        let plane = h * w;
        Ok(Tensor::from_parts(vec![h, w], self.data[index * plane..(index + 1) * plane].to_vec()))
    }

    /// Sum in index-ascending order.
    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc + v)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Applies `f` to each element; fails if any result is non-finite.
    pub fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        Tensor::checked(op, self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        writer.write_all(TENSOR_MAGIC)?;
        writer.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &extent in &self.shape {
            writer.write_all(&(extent as u64).to_le_bytes())?;
        }
        for &v in &self.data {
            writer.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut reader: R) -> Result<Tensor> {
        let mut magic = [0u8; 8];
        read_exact(&mut reader, &mut magic, "magic")?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::format("tensor", "bad magic"));
        }
        let rank = read_u32(&mut reader)? as usize;
        if rank > 16 {
            return Err(Error::format("tensor", format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let extent = read_u64(&mut reader)?;
            shape.push(usize::try_from(extent).map_err(|_| Error::format("tensor", "extent overflow"))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|&n| n <= (1 << 32))
            .ok_or_else(|| Error::format("tensor", format!("implausible shape {shape:?}")))?;
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            read_exact(&mut reader, &mut buf, "values")?;
            data.push(f64::from_le_bytes(buf));
        }
        Tensor::new(shape, data).map_err(|e| Error::format("tensor", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        self.write_to(&mut writer).and_then(|_| writer.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Tensor::read_from(BufReader::new(file))
    }
}

pub(crate) fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { op, index }),
        None => Ok(()),
    }
}

pub(crate) fn read_exact<R: Read>(reader: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    reader
        .read_exact(buf)
        .map_err(|_| Error::format("tensor", format!("truncated while reading {what}")))
}

pub(crate) fn read_u32<R: Read>(reader: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(reader, &mut buf, "u32 field")?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64<R: Read>(reader: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(reader, &mut buf, "u64 field")?;
    Ok(u64::from_le_bytes(buf))
}
