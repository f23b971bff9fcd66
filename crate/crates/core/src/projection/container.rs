//! `LGRD` grid container.
//!
//! ```text
//! "LGRD" | version u32 | H u32 | W u32 | C u32 | count u64 | repr u8 | normalized u8
//! count x ( H*W*C f32 channels | H*W u8 mask )
//! ```
//! All integers and floats little-endian.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{GridScan, Representation};
use crate::{Error, Result};

pub const LGRD_MAGIC: &[u8; 4] = b"LGRD";
pub const LGRD_VERSION: u32 = 1;

pub fn write_grids_to<W: Write>(mut w: W, grids: &[GridScan]) -> Result<()> {
    let (h, wd, repr, normalized) = match grids.first() {
        Some(g) => (g.height, g.width, g.representation, g.normalized),
        None => (0, 0, Representation::Cartesian, false),
    };
    if let Some(i) =
        grids.iter().position(|g| (g.height, g.width, g.representation, g.normalized) != (h, wd, repr, normalized))
    {
        return Err(Error::Shape(format!("grid {i} differs in shape, representation or normalization")));
    }
    let c = repr.channels();
    w.write_all(LGRD_MAGIC)?;
    w.write_all(&LGRD_VERSION.to_le_bytes())?;
    for v in [h, wd, c] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&(grids.len() as u64).to_le_bytes())?;
    w.write_all(&[repr.tag(), normalized as u8])?;
    let mut buf = Vec::with_capacity(h * wd * (4 * c + 1));
    for g in grids {
        buf.clear();
        for v in &g.channels {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend(g.mask.iter().map(|&m| m as u8));
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_grids(path: impl AsRef<Path>, grids: &[GridScan]) -> Result<()> {
    write_grids_to(BufWriter::new(std::fs::File::create(path)?), grids)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_grids_from<R: Read>(mut r: R) -> Result<Vec<GridScan>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != LGRD_MAGIC {
        return Err(Error::Format("not an LGRD container".into()));
    }
    let version = read_u32(&mut r)?;
    if version != LGRD_VERSION {
        return Err(Error::Format(format!("unsupported LGRD version {version}")));
    }
    let (h, w, c) = (read_u32(&mut r)? as usize, read_u32(&mut r)? as usize, read_u32(&mut r)? as usize);
    let mut count = [0u8; 8];
    r.read_exact(&mut count)?;
    let count = u64::from_le_bytes(count) as usize;
    let mut flags = [0u8; 2];
    r.read_exact(&mut flags)?;
    let repr = Representation::from_tag(flags[0])
        .ok_or_else(|| Error::Format(format!("unknown representation tag {}", flags[0])))?;
    if repr.channels() != c {
        return Err(Error::Format(format!("{repr} grids need {} channels, header says {c}", repr.channels())));
    }
    let normalized = match flags[1] {
        0 => false,
        1 => true,
        f => return Err(Error::Format(format!("bad normalized flag {f}"))),
    };
    let cells = h * w;
    let mut buf = vec![0u8; cells * (4 * c + 1)];
    let mut grids = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        let (vals, mask) = buf.split_at(cells * c * 4);
        grids.push(GridScan {
            representation: repr,
            height: h,
            width: w,
            channels: vals.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect(),
            mask: mask.iter().map(|&m| m != 0).collect(),
            normalized,
        });
    }
    Ok(grids)
}

pub fn read_grids(path: impl AsRef<Path>) -> Result<Vec<GridScan>> {
    read_grids_from(BufReader::new(std::fs::File::open(path)?))
}
