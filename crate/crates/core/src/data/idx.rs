//! Classic MNIST IDX layout (big-endian):
//! images `0x00000803, count, rows, cols, u8 pixels…`;
//! labels `0x00000801, count, u8 labels…`.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{MudalError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// A raw single-domain image set with pixels scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxDataset {
    pub rows: usize,
    pub cols: usize,
    pub images: Array2<f64>,
    pub labels: Vec<usize>,
}

impl IdxDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.rows * self.cols
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| MudalError::Idx {
            offset: offset as u64,
            msg: format!("truncated header (file is {} bytes)", bytes.len()),
        })
}

fn expect_magic(bytes: &[u8], want: u32) -> Result<()> {
    let got = read_u32(bytes, 0)?;
    if got != want {
        return Err(MudalError::Idx {
            offset: 0,
            msg: format!("magic number 0x{got:08x}, expected 0x{want:08x}"),
        });
    }
    Ok(())
}

/// Parse an IDX image file; returns `(rows, cols, images)` with one
/// flattened row-major image per row, scaled by `1/255`.
pub fn read_idx_images(bytes: &[u8]) -> Result<(usize, usize, Array2<f64>)> {
    expect_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| MudalError::Idx {
            offset: 4,
            msg: "image dimensions overflow".into(),
        })?;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(MudalError::Idx {
            offset: (16 + body.len()) as u64,
            msg: format!("truncated pixel data: {} of {need} bytes present", body.len()),
        });
    }
    let images = Array2::from_shape_fn((count, rows * cols), |(i, k)| body[i * rows * cols + k] as f64 / 255.0);
    Ok((rows, cols, images))
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    expect_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(MudalError::Idx {
            offset: (8 + body.len()) as u64,
            msg: format!("truncated label data: {} of {count} bytes present", body.len()),
        });
    }
    Ok(body[..count].iter().map(|&b| b as usize).collect())
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<IdxDataset> {
    let (rows, cols, images) = read_idx_images(&std::fs::read(images_path)?)?;
    let labels = read_idx_labels(&std::fs::read(labels_path)?)?;
    if labels.len() != images.nrows() {
        return Err(MudalError::Idx {
            offset: 4,
            msg: format!("{} images but {} labels", images.nrows(), labels.len()),
        });
    }
    Ok(IdxDataset {
        rows,
        cols,
        images,
        labels,
    })
}

pub fn write_idx_images<W: Write>(w: &mut W, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let per = rows * cols;
    if per == 0 || !pixels.len().is_multiple_of(per) {
        return Err(MudalError::invalid("pixel buffer is not a whole number of images"));
    }
    w.write_all(&IMAGES_MAGIC.to_be_bytes())?;
    for v in [pixels.len() / per, rows, cols] {
        w.write_all(&(v as u32).to_be_bytes())?;
    }
    w.write_all(pixels)?;
    Ok(())
}

pub fn write_idx_labels<W: Write>(w: &mut W, labels: &[u8]) -> Result<()> {
    w.write_all(&LABELS_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    Ok(())
}

/// Rotate a row-major image counter-clockwise by `deg` about its centre
/// using bilinear sampling; pixels mapped from outside the frame are 0.
pub fn rotate_image(img: ArrayView1<f64>, rows: usize, cols: usize, deg: f64) -> Array1<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    let (cy, cx) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let at = |r: isize, q: isize| -> f64 {
        if r < 0 || q < 0 || r >= rows as isize || q >= cols as isize {
            0.0
        } else {
            img[r as usize * cols + q as usize]
        }
    };
    let mut out = Array1::zeros(rows * cols);
    for r in 0..rows {
        for q in 0..cols {
            // inverse map: rotate the destination back by -deg (y axis points down)
            let (dx, dy) = (q as f64 - cx, cy - r as f64);
            let sx = c * dx + s * dy + cx;
            let sy = cy - (-s * dx + c * dy);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            out[r * cols + q] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (Vec<u8>, Vec<u8>) {
        let pixels: Vec<u8> = (0..3 * 4 * 5).map(|v| (v * 7 % 256) as u8).collect();
        let mut img = Vec::new();
        write_idx_images(&mut img, 4, 5, &pixels).unwrap();
        let mut lab = Vec::new();
        write_idx_labels(&mut lab, &[3, 0, 9]).unwrap();
        (img, lab)
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let (img, lab) = tiny();
        assert_eq!(&img[..16], &[0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0, 5]);
        assert_eq!(&lab[..8], &[0, 0, 8, 1, 0, 0, 0, 3]);
    }

    #[test]
    fn writer_reader_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = tiny();
        std::fs::write(dir.path().join("i"), &img).unwrap();
        std::fs::write(dir.path().join("l"), &lab).unwrap();
        let ds = load_idx(dir.path().join("i"), dir.path().join("l")).unwrap();
        assert_eq!((ds.rows, ds.cols, ds.feature_dim()), (4, 5, 20));
        assert_eq!(ds.labels, vec![3, 0, 9]);
        for (k, v) in ds.images.iter().enumerate() {
            assert_eq!(*v, ((k * 7 % 256) as u8) as f64 / 255.0);
        }
    }

    #[test]
    fn mnist_shaped_header() {
        let mut img = Vec::new();
        write_idx_images(&mut img, 28, 28, &vec![0u8; 2 * 784]).unwrap();
        let (r, c, x) = read_idx_images(&img).unwrap();
        assert_eq!((r * c, x.nrows()), (784, 2));
        let mut lab = Vec::new();
        write_idx_labels(&mut lab, &(0..10).collect::<Vec<u8>>()).unwrap();
        let l = read_idx_labels(&lab).unwrap();
        assert_eq!(l.len(), 10);
        assert!(l.iter().all(|&y| y <= 9));
    }

    #[test]
    fn malformed_files_report_offsets() {
        let (img, lab) = tiny();
        let mut bad = img.clone();
        bad[3] = 1;
        assert!(matches!(read_idx_images(&bad), Err(MudalError::Idx { offset: 0, .. })));
        assert!(matches!(
            read_idx_images(&img[..10]),
            Err(MudalError::Idx { offset: 8, .. })
        ));
        match read_idx_images(&img[..30]) {
            Err(MudalError::Idx { offset, .. }) => assert_eq!(offset, 30),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_idx_labels(&img), Err(MudalError::Idx { offset: 0, .. })));
        assert!(read_idx_labels(&lab[..9]).is_err());
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = tiny();
        let mut lab = Vec::new();
        write_idx_labels(&mut lab, &[1, 2]).unwrap();
        std::fs::write(dir.path().join("i"), &img).unwrap();
        std::fs::write(dir.path().join("l"), &lab).unwrap();
        assert!(load_idx(dir.path().join("i"), dir.path().join("l")).is_err());
    }

    #[test]
    fn quarter_turn_moves_pixels() {
        // 3x3 with a single lit pixel at the top-middle
        let mut img = Array1::zeros(9);
        img[1] = 1.0;
        let r = rotate_image(img.view(), 3, 3, 90.0);
        // counter-clockwise: top-middle goes to middle-left
        assert!((r[3] - 1.0).abs() < 1e-12, "{r:?}");
        assert!((r.sum() - 1.0).abs() < 1e-12);
        let same = rotate_image(img.view(), 3, 3, 0.0);
        assert_eq!(same, img);
    }
}
