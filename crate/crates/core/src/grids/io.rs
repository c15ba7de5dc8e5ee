//! Field container (`PFLD`) and 8-bit PGM export.
//!
//! Field layout, little-endian: `"PFLD"`, version `u32 = 1`, height `u32`,
//! width `u32`, then `height * width` `f32` values in row-major order.

use std::fs;
use std::path::Path;

use super::Grid;
use crate::error::FieldFormatError;
use crate::{Error, Result};

pub const FIELD_MAGIC: &[u8; 4] = b"PFLD";
pub const FIELD_VERSION: u32 = 1;
const HEADER_LEN: u64 = 16;

pub fn field_bytes(grid: &Grid) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN as usize + 4 * grid.values().len());
    buf.extend_from_slice(FIELD_MAGIC);
    buf.extend_from_slice(&FIELD_VERSION.to_le_bytes());
    buf.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    for v in grid.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn save_field(grid: &Grid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if u32::try_from(grid.height()).is_err() || u32::try_from(grid.width()).is_err() {
        return Err(Error::Shape {
            op: "save_field",
            detail: format!("{}x{} exceeds u32 dims", grid.height(), grid.width()),
        });
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, field_bytes(grid)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().expect("four bytes"))
}

pub fn parse_field(bytes: &[u8]) -> std::result::Result<Grid, FieldFormatError> {
    let actual = bytes.len() as u64;
    let truncated = |expected| FieldFormatError::Truncated { expected, actual };
    if bytes.len() < 4 {
        return Err(truncated(HEADER_LEN));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
    if &magic != FIELD_MAGIC {
        return Err(FieldFormatError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN as usize {
        return Err(truncated(HEADER_LEN));
    }
    let version = u32_at(bytes, 4);
    if version != FIELD_VERSION {
        return Err(FieldFormatError::UnsupportedVersion(version));
    }
    let (height, width) = (u32_at(bytes, 8), u32_at(bytes, 12));
    if height == 0 || width == 0 {
        return Err(FieldFormatError::EmptyDimensions { height, width });
    }
    let payload = u64::from(height)
        .checked_mul(u64::from(width))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .filter(|&n| usize::try_from(n).is_ok() && n <= isize::MAX as u64)
        .ok_or(FieldFormatError::DimensionOverflow { height, width })?;
    if actual < payload {
        return Err(truncated(payload));
    }
    if actual > payload {
        return Err(FieldFormatError::TrailingBytes(actual - payload));
    }
    let values = bytes[HEADER_LEN as usize..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
        .collect();
    Ok(Grid::new(height as usize, width as usize, values).expect("dims validated"))
}

pub fn load_field(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_field(&bytes).map_err(|source| Error::FieldFormat {
        path: path.to_path_buf(),
        source,
    })
}

/// Binary P5 raster with maxval 255; pixel = round-half-up of
/// `255 * min(v / vmax, 1)`, negatives map to 0.
pub fn pgm_bytes(grid: &Grid, vmax: f32) -> Result<Vec<u8>> {
    if !(vmax > 0.0 && vmax.is_finite()) {
        return Err(Error::Domain(format!("pgm vmax must be positive, got {vmax}")));
    }
    let header = format!("P5\n{} {}\n255\n", grid.width(), grid.height());
    let mut buf = header.into_bytes();
    buf.extend(grid.values().iter().map(|&v| {
        let scaled = 255.0 * (f64::from(v) / f64::from(vmax)).clamp(0.0, 1.0);
        (scaled + 0.5).floor() as u8
    }));
    Ok(buf)
}

pub fn export_pgm(grid: &Grid, path: impl AsRef<Path>, vmax: f32) -> Result<()> {
    let path = path.as_ref();
    let bytes = pgm_bytes(grid, vmax)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_value_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.pfld");
        save_field(&Grid::new(1, 1, vec![3.5]).unwrap(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"PFLD");
        assert_eq!(u32_at(&bytes, 4), 1);
        assert_eq!(load_field(&path).unwrap().values(), &[3.5]);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = field_bytes(&Grid::new(2, 2, vec![1.0; 4]).unwrap());
        bytes[0] = b'X';
        assert!(matches!(parse_field(&bytes), Err(FieldFormatError::BadMagic(_))));
    }

    #[test]
    fn load_errors_are_distinct() {
        let good = field_bytes(&Grid::new(2, 3, vec![1.0; 6]).unwrap());
        assert!(matches!(
            parse_field(&good[..good.len() - 1]),
            Err(FieldFormatError::Truncated { .. })
        ));
        let mut extra = good.clone();
        extra.push(0);
        assert!(matches!(parse_field(&extra), Err(FieldFormatError::TrailingBytes(1))));
        let mut version = good.clone();
        version[4] = 9;
        assert!(matches!(
            parse_field(&version),
            Err(FieldFormatError::UnsupportedVersion(9))
        ));
        let mut huge = good[..16].to_vec();
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        let err = parse_field(&huge).unwrap_err();
        assert!(
            matches!(
                err,
                FieldFormatError::DimensionOverflow { .. } | FieldFormatError::Truncated { .. }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn load_error_carries_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pfld");
        fs::write(&path, b"NOPE0000").unwrap();
        match load_field(&path) {
            Err(Error::FieldFormat { path: p, source: FieldFormatError::BadMagic(_) }) => {
                assert_eq!(p, path)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pgm_quantisation() {
        let g = Grid::new(1, 4, vec![0.0, 10.0, 5.0, 20.0]).unwrap();
        let bytes = pgm_bytes(&g, 10.0).unwrap();
        let header = b"P5\n4 1\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 255, 128, 255]);
        assert!(pgm_bytes(&g, 0.0).is_err());
    }

    #[test]
    fn pgm_zero_field_is_black() {
        let g = Grid::filled(3, 2, 0.0).unwrap();
        let bytes = pgm_bytes(&g, 1.0).unwrap();
        assert!(bytes[bytes.len() - 6..].iter().all(|&b| b == 0));
    }

    proptest! {
        #[test]
        fn field_roundtrip_is_bit_exact(
            h in 1usize..6,
            w in 1usize..6,
            seed in any::<u64>(),
        ) {
            let values: Vec<f32> = (0..h * w)
                .map(|i| f32::from_bits((seed.rotate_left(i as u32) as u32) & 0x7f7f_ffff))
                .collect();
            let g = Grid::new(h, w, values).unwrap();
            let back = parse_field(&field_bytes(&g)).unwrap();
            prop_assert_eq!(back.dims(), g.dims());
            for (a, b) in back.values().iter().zip(g.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
