//! Exact binary state serialization.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   4 bytes  "MPS1"
//! version u32      currently 1
//! sites   u64      chain length L
//! phys    u64      physical dimension d
//! center  i64      canonical center, -1 when unset
//! offset  f64      accumulated log-norm offset
//! per site: dl u64, dr u64, then d*dl*dr entries as (re f64, im f64)
//!           in (physical, left, right) row-major order
//! ```
//!
//! Round trips are bit exact: entries are written as raw IEEE 754 doubles.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::mps::MatrixProductState;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MPS1";
const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Snapshot(e.to_string())
}

pub fn write_snapshot<W: Write>(mut w: W, psi: &MatrixProductState) -> Result<()> {
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(psi.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(psi.phys_dim() as u64).to_le_bytes()).map_err(io_err)?;
    let center: i64 = psi.canonical_center().map_or(-1, |c| c as i64);
    w.write_all(&center.to_le_bytes()).map_err(io_err)?;
    w.write_all(&psi.log_norm_offset().to_le_bytes()).map_err(io_err)?;
    for i in 0..psi.len() {
        let t = psi.site(i);
        let sh = t.shape();
        w.write_all(&(sh[1] as u64).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(sh[2] as u64).to_le_bytes()).map_err(io_err)?;
        for z in t.data() {
            w.write_all(&z.re.to_le_bytes()).map_err(io_err)?;
            w.write_all(&z.im.to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<MatrixProductState> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Snapshot("bad magic, not a state snapshot".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io_err)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported snapshot version {version}")));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(io_err)?;
    let l = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf).map_err(io_err)?;
    let d = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf).map_err(io_err)?;
    let center = i64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf).map_err(io_err)?;
    let offset = f64::from_le_bytes(u64buf);
    if l == 0 || l > 1_000_000 || d == 0 || d > 1024 {
        return Err(Error::Snapshot(format!("implausible header: {l} sites, d = {d}")));
    }

    let mut sites = Vec::with_capacity(l);
    for _ in 0..l {
        r.read_exact(&mut u64buf).map_err(io_err)?;
        let dl = u64::from_le_bytes(u64buf) as usize;
        r.read_exact(&mut u64buf).map_err(io_err)?;
        let dr = u64::from_le_bytes(u64buf) as usize;
        let len = d
            .checked_mul(dl)
            .and_then(|x| x.checked_mul(dr))
            .ok_or_else(|| Error::Snapshot("tensor size overflow".into()))?;
        let mut data = Vec::with_capacity(len);
        let mut f64buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut f64buf).map_err(io_err)?;
            let re = f64::from_le_bytes(f64buf);
            r.read_exact(&mut f64buf).map_err(io_err)?;
            let im = f64::from_le_bytes(f64buf);
            data.push(C64::new(re, im));
        }
        sites.push(
            Tensor::new(vec![d, dl, dr], data)
                .map_err(|e| Error::Snapshot(format!("invalid site tensor: {e}")))?,
        );
    }
    let mut psi = MatrixProductState::from_sites(sites)
        .map_err(|e| Error::Snapshot(format!("inconsistent chain: {e}")))?;
    if center >= 0 {
        if center as usize >= l {
            return Err(Error::Snapshot(format!("center {center} out of range")));
        }
        psi.set_canonical_center(Some(center as usize));
    }
    psi.set_log_norm_offset(offset);
    Ok(psi)
}

pub fn save_to_path<P: AsRef<Path>>(path: P, psi: &MatrixProductState) -> Result<()> {
    let f = File::create(path.as_ref())
        .map_err(|e| Error::Snapshot(format!("{}: {e}", path.as_ref().display())))?;
    write_snapshot(BufWriter::new(f), psi)
}

pub fn load_from_path<P: AsRef<Path>>(path: P) -> Result<MatrixProductState> {
    let f = File::open(path.as_ref())
        .map_err(|e| Error::Snapshot(format!("{}: {e}", path.as_ref().display())))?;
    read_snapshot(BufReader::new(f))
}
