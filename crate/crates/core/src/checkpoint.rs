//! Binary checkpoints.
//!
//! A module blob is `SGNN`, version `u32`, `d` and `k` as `u64`, then `W`
//! (d×k) and `U` (d×d) row-major `f64`, then a head flag byte followed, when
//! set, by `c` as `u64` and `R` (k×c). Everything is little-endian.
//!
//! A stack file is `SGST`, version `u32`, `L` as `u64`, the `L+1` widths as
//! `u64`, a loss byte, the propagation kind (tag byte, then `m` as `u64` and
//! `α` as `f64` where applicable), then per module an activation byte, a ψ
//! byte and the module blob.

use std::path::Path;

use crate::dataset::write_atomic;
use crate::graph::PropKind;
use crate::linalg::DenseMatrix;
use crate::module::{Activation, Psi, SeparableModule};
use crate::trainer::{LossKind, TrainedStack};
use crate::{Error, Result, Scalar};

const MODULE_MAGIC: &[u8; 4] = b"SGNN";
const STACK_MAGIC: &[u8; 4] = b"SGST";
const VERSION: u32 = 1;

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_matrix<T: Scalar>(out: &mut Vec<u8>, m: &DenseMatrix<T>) {
    for &v in m.data() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
}

/// Serializes one module's parameters.
pub fn encode_module<T: Scalar>(m: &SeparableModule<T>) -> Vec<u8> {
    let (d, k) = m.w.shape();
    let mut out = Vec::with_capacity(4 + 4 + 16 + 8 * (d * k + d * d) + 1);
    out.extend_from_slice(MODULE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u64(&mut out, d);
    put_u64(&mut out, k);
    put_matrix(&mut out, &m.w);
    put_matrix(&mut out, &m.u);
    match &m.head {
        Some(r) => {
            out.push(1);
            put_u64(&mut out, r.cols());
            put_matrix(&mut out, r);
        }
        None => out.push(0),
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} = {v} does not fit")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize, what: &str) -> Result<DenseMatrix<T>> {
        let count = rows
            .checked_mul(cols)
            .filter(|c| c.checked_mul(8).is_some_and(|b| b <= self.buf.len() - self.pos))
            .ok_or_else(|| Error::Checkpoint(format!("{what} ({rows}x{cols}) exceeds the file")))?;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let v = self.f64(what)?;
            if !v.is_finite() {
                return Err(Error::Checkpoint(format!("non-finite entry in {what}")));
            }
            data.push(T::c(v));
        }
        DenseMatrix::new(rows, cols, data)
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != want {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            )));
        }
        let version = self.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        Ok(())
    }
}

fn read_module<T: Scalar>(r: &mut Reader<'_>, activation: Activation, prop: PropKind) -> Result<SeparableModule<T>> {
    r.magic(MODULE_MAGIC)?;
    let d = r.u64("d")?;
    let k = r.u64("k")?;
    let w = r.matrix(d, k, "W")?;
    let u = r.matrix(d, d, "U")?;
    let head = match r.u8("head flag")? {
        0 => None,
        1 => {
            let c = r.u64("c")?;
            Some(r.matrix(k, c, "R")?)
        }
        f => return Err(Error::Checkpoint(format!("bad head flag {f}"))),
    };
    SeparableModule::from_parts(w, u, head, activation, prop)
}

/// Parses a single module blob; activation and propagation are supplied by
/// the caller since the blob holds parameters only.
pub fn decode_module<T: Scalar>(bytes: &[u8], activation: Activation, prop: PropKind) -> Result<SeparableModule<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let m = read_module(&mut r, activation, prop)?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(m)
}

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Linear => 0,
        Activation::Relu => 1,
        Activation::Tanh => 2,
    }
}

fn psi_tag(p: Psi) -> u8 {
    match p {
        Psi::Identity => 0,
        Psi::Tanh => 1,
    }
}

pub fn encode_stack<T: Scalar>(stack: &TrainedStack<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(STACK_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u64(&mut out, stack.modules.len());
    for d in stack.dims() {
        put_u64(&mut out, d);
    }
    out.push(match stack.loss {
        LossKind::Gae => 0,
        LossKind::Classification => 1,
    });
    match stack.prop {
        PropKind::GcnFirstOrder => out.push(0),
        PropKind::GcnPower(m) => {
            out.push(1);
            put_u64(&mut out, m);
        }
        PropKind::SsgcAverage { m, alpha } => {
            out.push(2);
            put_u64(&mut out, m);
            out.extend_from_slice(&alpha.to_le_bytes());
        }
    }
    for m in &stack.modules {
        out.push(activation_tag(m.activation));
        out.push(psi_tag(m.psi));
        out.extend_from_slice(&encode_module(m));
    }
    out
}

pub fn decode_stack<T: Scalar>(bytes: &[u8]) -> Result<TrainedStack<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.magic(STACK_MAGIC)?;
    let l = r.u64("L")?;
    if l == 0 || l > 1 << 16 {
        return Err(Error::Checkpoint(format!("implausible module count {l}")));
    }
    let dims: Vec<usize> = (0..=l).map(|_| r.u64("dims")).collect::<Result<_>>()?;
    let loss = match r.u8("loss kind")? {
        0 => LossKind::Gae,
        1 => LossKind::Classification,
        t => return Err(Error::Checkpoint(format!("bad loss tag {t}"))),
    };
    let prop = match r.u8("propagation kind")? {
        0 => PropKind::GcnFirstOrder,
        1 => PropKind::GcnPower(r.u64("m")?),
        2 => {
            let m = r.u64("m")?;
            let alpha = r.f64("alpha")?;
            PropKind::SsgcAverage { m, alpha }
        }
        t => return Err(Error::Checkpoint(format!("bad propagation tag {t}"))),
    };
    let mut modules = Vec::with_capacity(l);
    for t in 0..l {
        let activation = match r.u8("activation")? {
            0 => Activation::Linear,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            a => return Err(Error::Checkpoint(format!("bad activation tag {a}"))),
        };
        let psi = match r.u8("psi")? {
            0 => Psi::Identity,
            1 => Psi::Tanh,
            p => return Err(Error::Checkpoint(format!("bad psi tag {p}"))),
        };
        let mut m: SeparableModule<T> = read_module(&mut r, activation, prop)?;
        m.psi = psi;
        if (m.in_dim(), m.out_dim()) != (dims[t], dims[t + 1]) {
            return Err(Error::Checkpoint(format!(
                "module {} is {}x{} but the header says {}x{}",
                t + 1,
                m.in_dim(),
                m.out_dim(),
                dims[t],
                dims[t + 1]
            )));
        }
        modules.push(m);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(TrainedStack { modules, loss, prop })
}

pub fn save_stack<T: Scalar>(stack: &TrainedStack<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_stack(stack))
}

pub fn load_stack<T: Scalar>(path: &Path) -> Result<TrainedStack<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_stack(&bytes)
}
