//! PTNS tensors: `b"PTNS"`, a `u32` rank, `rank` `u32` dims, then
//! little-endian `f32` data in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use debias_core::Matrix;

const MAGIC: &[u8; 4] = b"PTNS";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        ensure!(n == data.len(), "tensor dims {dims:?} need {n} values, got {}", data.len());
        Ok(Self { dims, data })
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            dims: vec![m.rows(), m.cols()],
            data: m.as_slice().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_vector(v: &[f64]) -> Self {
        Self {
            dims: vec![v.len()],
            data: v.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        ensure!(self.dims.len() == 2, "expected a rank-2 tensor, got rank {}", self.dims.len());
        let data = self.data.iter().map(|&v| f64::from(v)).collect();
        Ok(Matrix::from_vec(self.dims[0], self.dims[1], data)?)
    }

    pub fn to_vector(&self) -> Result<Vec<f64>> {
        ensure!(self.dims.len() == 1, "expected a rank-1 tensor, got rank {}", self.dims.len());
        Ok(self.data.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_reader(mut r: impl Read) -> Result<Self> {
        let mut word = [0u8; 4];
        r.read_exact(&mut word).context("reading magic")?;
        if &word != MAGIC {
            bail!("bad magic {:?}, expected PTNS", String::from_utf8_lossy(&word));
        }
        r.read_exact(&mut word).context("reading rank")?;
        let rank = u32::from_le_bytes(word) as usize;
        ensure!(rank <= 8, "unsupported tensor rank {rank}");
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut word).context("reading dims")?;
            dims.push(u32::from_le_bytes(word) as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .context("tensor size overflows")?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        ensure!(
            bytes.len() == 4 * n,
            "tensor dims {dims:?} need {} data bytes, file has {}",
            4 * n,
            bytes.len()
        );
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }
}

pub fn read(path: &Path) -> Result<Tensor> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Tensor::from_reader(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(&t.to_bytes())?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    read(path)?.to_matrix().with_context(|| format!("in {}", path.display()))
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write(path, &Tensor::from_matrix(m))
}
