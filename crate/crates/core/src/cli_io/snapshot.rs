//! Binary field snapshots.
//!
//! Layout: a 64-byte ASCII header
//!
//! ```text
//! BEQT2D\n
//! version=1\n
//! n=<grid size>\n
//! t=<time, shortest round-trip decimal>\n
//! <space padding>\n
//! ```
//!
//! followed by `u1`, `u2`, `p`, `q`, each `n * n` little-endian IEEE-754
//! doubles in row-major order (`index = i * n + j`).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fields::{Grid, QTensorField, SimState, VelocityField};

pub const MAGIC: &str = "BEQT2D\n";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;

pub fn encode_snapshot(state: &SimState) -> Vec<u8> {
    let n = state.grid().n();
    let mut header = format!("{MAGIC}version={VERSION}\nn={n}\nt={:e}\n", state.t).into_bytes();
    assert!(header.len() < HEADER_LEN, "header overflow");
    header.resize(HEADER_LEN - 1, b' ');
    header.push(b'\n');
    let mut out = header;
    out.reserve(4 * 8 * n * n);
    for field in [&state.u.u1, &state.u.u2, &state.q.p, &state.q.q] {
        for v in field.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn header_value<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str> {
    line.and_then(|l| l.strip_prefix(key))
        .and_then(|l| l.strip_prefix('='))
        .ok_or_else(|| Error::Snapshot(format!("header is missing `{key}=`")))
}

/// Parses a snapshot. `expected` rejects a snapshot of another grid size.
pub fn decode_snapshot(bytes: &[u8], expected: Option<Grid>) -> Result<SimState> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Snapshot(format!(
            "file has {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    let header = std::str::from_utf8(&bytes[..HEADER_LEN]).map_err(|_| Error::Snapshot("header is not ASCII".into()))?;
    let rest = header
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::Snapshot("bad magic, not a BEQT2D snapshot".into()))?;
    let mut lines = rest.lines();
    let version: u32 = header_value(lines.next(), "version")?
        .parse()
        .map_err(|_| Error::Snapshot("unreadable version".into()))?;
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}, expected {VERSION}")));
    }
    let n: usize = header_value(lines.next(), "n")?
        .parse()
        .map_err(|_| Error::Snapshot("unreadable grid size".into()))?;
    let t: f64 = header_value(lines.next(), "t")?
        .parse()
        .map_err(|_| Error::Snapshot("unreadable time".into()))?;
    let grid = Grid::new(n)?;
    if let Some(g) = expected {
        if g != grid {
            return Err(Error::GridMismatch {
                expected: g.n(),
                found: n,
            });
        }
    }
    let body = &bytes[HEADER_LEN..];
    let want = 4 * 8 * grid.len();
    if body.len() != want {
        return Err(Error::Snapshot(format!(
            "payload has {} bytes, expected {want} for n={n}",
            body.len()
        )));
    }
    let mut arrays = body.chunks_exact(8 * grid.len()).map(|chunk| {
        chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect::<Vec<f64>>()
    });
    let mut next = || arrays.next().expect("four arrays");
    let (u1, u2, p, q) = (next(), next(), next(), next());
    SimState::new(t, VelocityField::new(grid, u1, u2)?, QTensorField::new(grid, p, q)?)
}

pub fn write_snapshot(path: &Path, state: &SimState) -> Result<()> {
    fs::write(path, encode_snapshot(state)).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path, expected: Option<Grid>) -> Result<SimState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes, expected)
}
