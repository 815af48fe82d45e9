//! Network checkpoints. Binary layout, all little-endian:
//!
//! ```text
//! magic "VSNN" | version u16 | layer_count u16 |
//! input_c u16 | input_h u16 | input_w u16 |
//! pixel_mean f32 | pixel_std f32 | dropout_p f32 |
//! layer table | raw f32 parameters
//! ```
//!
//! Layer-table entries are convolution (tag 0: out_c u16, in_c u16, kh u8,
//! kw u8, stride u8, pad u8) or fully connected (tag 1: out u32, in u32).
//! Parameters follow in layer order, weights before biases. Round-trips are
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::layers::{Conv2d, Linear};
use super::network::Network;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"VSNN";
pub const VERSION: u16 = 1;

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    w.write_all(&MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    let layer_count = (net.convs.len() + 1) as u16;
    w.write_all(&layer_count.to_le_bytes()).map_err(io)?;
    w.write_all(&(net.input_c as u16).to_le_bytes()).map_err(io)?;
    w.write_all(&(net.input_h as u16).to_le_bytes()).map_err(io)?;
    w.write_all(&(net.input_w as u16).to_le_bytes()).map_err(io)?;
    w.write_all(&net.pixel_mean.to_le_bytes()).map_err(io)?;
    w.write_all(&net.pixel_std.to_le_bytes()).map_err(io)?;
    w.write_all(&net.dropout_p.to_le_bytes()).map_err(io)?;

    for conv in &net.convs {
        w.write_all(&[0u8]).map_err(io)?;
        w.write_all(&(conv.out_c as u16).to_le_bytes()).map_err(io)?;
        w.write_all(&(conv.in_c as u16).to_le_bytes()).map_err(io)?;
        w.write_all(&[conv.kh as u8, conv.kw as u8, conv.stride as u8, conv.pad as u8])
            .map_err(io)?;
    }
    w.write_all(&[1u8]).map_err(io)?;
    w.write_all(&(net.fc.out_dim as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(net.fc.in_dim as u32).to_le_bytes()).map_err(io)?;

    for conv in &net.convs {
        write_f32s(&mut w, &conv.w, path)?;
        write_f32s(&mut w, &conv.b, path)?;
    }
    write_f32s(&mut w, &net.fc.w, path)?;
    write_f32s(&mut w, &net.fc.b, path)?;

    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .sync_all()
        .map_err(io)?;
    Ok(())
}

fn write_f32s(w: &mut impl Write, vals: &[f32], path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(vals.len() * 4);
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let total = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = Reader {
        inner: BufReader::new(file),
        path,
        consumed: 0,
        total,
    };

    let magic = r.bytes::<4>()?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            supported: VERSION,
        });
    }
    let layer_count = r.u16()? as usize;
    let input_c = r.u16()? as usize;
    let input_h = r.u16()? as usize;
    let input_w = r.u16()? as usize;
    let pixel_mean = r.f32()?;
    let pixel_std = r.f32()?;
    let dropout_p = r.f32()?;
    if layer_count < 2 {
        return Err(Error::ShapeMismatch {
            context: format!("layer table holds {layer_count} layers, need at least 2"),
        });
    }

    let mut convs = Vec::with_capacity(layer_count - 1);
    let mut fc: Option<Linear> = None;
    for i in 0..layer_count {
        let tag = r.bytes::<1>()?[0];
        match (tag, i == layer_count - 1) {
            (0, false) => {
                let out_c = r.u16()? as usize;
                let in_c = r.u16()? as usize;
                let [kh, kw, stride, pad] = r.bytes::<4>()?;
                if out_c == 0 || in_c == 0 || kh == 0 || kw == 0 || stride == 0 {
                    return Err(Error::ShapeMismatch {
                        context: format!("layer {i}: degenerate convolution entry"),
                    });
                }
                let mut conv = Conv2d::new(in_c, out_c, kh as usize, stride as usize, pad as usize);
                conv.kw = kw as usize;
                conv.w = vec![0.0; out_c * in_c * kh as usize * kw as usize];
                convs.push(conv);
            }
            (1, true) => {
                let out_dim = r.u32()? as usize;
                let in_dim = r.u32()? as usize;
                if out_dim == 0 || in_dim == 0 {
                    return Err(Error::ShapeMismatch {
                        context: format!("layer {i}: degenerate fully connected entry"),
                    });
                }
                fc = Some(Linear::new(in_dim, out_dim));
            }
            _ => {
                return Err(Error::ShapeMismatch {
                    context: format!("layer {i}: unexpected layer tag {tag}"),
                });
            }
        }
    }
    let fc = fc.expect("table ends with the fully connected layer");

    let mut net = Network {
        convs,
        fc,
        dropout_p,
        input_c,
        input_h,
        input_w,
        pixel_mean,
        pixel_std,
    };

    // The declared shapes must chain together and leave exactly the right
    // number of parameter bytes in the file.
    let mut c = net.input_c;
    for (i, conv) in net.convs.iter().enumerate() {
        if conv.in_c != c {
            return Err(Error::ShapeMismatch {
                context: format!("conv{}: input channels {} after {}", i + 1, conv.in_c, c),
            });
        }
        c = conv.out_c;
    }
    if net.flat_dim() != net.fc.in_dim {
        return Err(Error::ShapeMismatch {
            context: format!(
                "fully connected input {} does not match conv output {}",
                net.fc.in_dim,
                net.flat_dim()
            ),
        });
    }
    let expected = r.consumed + 4 * net.param_count() as u64;
    if total != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: total,
        });
    }

    let mut params = vec![0.0f32; net.param_count()];
    r.f32s(&mut params)?;
    let mut offset = 0;
    let mut take = |dst: &mut [f32]| {
        dst.copy_from_slice(&params[offset..offset + dst.len()]);
        offset += dst.len();
    };
    for conv in &mut net.convs {
        take(&mut conv.w);
        take(&mut conv.b);
    }
    take(&mut net.fc.w);
    take(&mut net.fc.b);
    debug_assert_eq!(offset, params.len());

    Ok(net)
}

struct Reader<'a> {
    inner: BufReader<File>,
    path: &'a Path,
    consumed: u64,
    total: u64,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        if self.consumed + N as u64 > self.total {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: self.consumed + N as u64,
                found: self.total,
            });
        }
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::io(self.path, e))?;
        self.consumed += N as u64;
        Ok(buf)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes::<2>()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes::<4>()?))
    }

    fn f32s(&mut self, out: &mut [f32]) -> Result<()> {
        let mut buf = vec![0u8; out.len() * 4];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::io(self.path, e))?;
        self.consumed += buf.len() as u64;
        for (v, chunk) in out.iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(())
    }
}
