//! IDX binary tensors (the MNIST distribution format).
//!
//! Layout: two zero bytes, a type code, the number of dimensions `D`, then `D`
//! big-endian `u32` extents followed by the row-major payload. Only the
//! unsigned-byte element type (`0x08`) is supported.

use std::path::Path;

use nalgebra::DMatrix;

use crate::data::LabeledDataset;
use crate::{Error, Result};

pub const TYPE_U8: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub elements: Vec<u8>,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

/// Parses an IDX buffer.
pub fn load_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "buffer shorter than the 4-byte magic word"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(0, "magic word must start with two zero bytes"));
    }
    if bytes[2] != TYPE_U8 {
        return Err(format_err(2, format!("unsupported element type code 0x{:02x}", bytes[2])));
    }
    let ndim = bytes[3] as usize;
    let header_len = 4 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(format_err(
            bytes.len(),
            format!("header declares {ndim} extents but the buffer ends early (need {header_len} bytes)"),
        ));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|k| {
            let o = 4 + 4 * k;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(4, "extent product overflows"))?;
    let expected = header_len + count;
    if bytes.len() != expected {
        return Err(format_err(
            expected.min(bytes.len()),
            format!(
                "payload size mismatch: expected total length {expected}, found {}",
                bytes.len()
            ),
        ));
    }
    Ok(IdxTensor {
        dims,
        elements: bytes[header_len..].to_vec(),
    })
}

/// Serializes a tensor back to IDX bytes.
pub fn serialize_idx(tensor: &IdxTensor) -> Result<Vec<u8>> {
    if tensor.dims.len() > u8::MAX as usize {
        return Err(Error::invalid("too many dimensions for IDX"));
    }
    let count: usize = tensor.dims.iter().product();
    if count != tensor.elements.len() {
        return Err(Error::invalid(format!(
            "extent product {count} does not match {} elements",
            tensor.elements.len()
        )));
    }
    let mut out = Vec::with_capacity(4 + 4 * tensor.dims.len() + count);
    out.extend_from_slice(&[0, 0, TYPE_U8, tensor.dims.len() as u8]);
    for &d in &tensor.dims {
        let d = u32::try_from(d).map_err(|_| Error::invalid("extent exceeds u32"))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&tensor.elements);
    Ok(out)
}

pub fn read_idx_file(path: impl AsRef<Path>) -> Result<IdxTensor> {
    let bytes = std::fs::read(path)?;
    load_idx(&bytes)
}

/// Builds a dataset from an image tensor `[N, rows, cols]` (or `[N, features]`)
/// and a label tensor `[N]`. Pixels are mapped to `[0, 1]` by dividing by 255.
pub fn to_dataset(images: &IdxTensor, labels: &IdxTensor, class_count: usize) -> Result<LabeledDataset> {
    if images.dims.is_empty() || labels.dims.len() != 1 {
        return Err(Error::invalid("expected image tensor [N, ...] and label tensor [N]"));
    }
    let count = images.dims[0];
    if labels.dims[0] != count {
        return Err(Error::invalid(format!(
            "{count} images but {} labels",
            labels.dims[0]
        )));
    }
    let dim: usize = images.dims[1..].iter().product();
    let features = DMatrix::from_fn(dim, count, |i, j| images.elements[j * dim + i] as f64 / 255.0);
    let labels: Vec<usize> = labels.elements.iter().map(|&l| l as usize).collect();
    LabeledDataset::new(features, labels, class_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_one_dimensional_tensor() {
        let t = load_idx(&[0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3]).unwrap();
        assert_eq!(t.dims, vec![3]);
        assert_eq!(t.elements, vec![1, 2, 3]);
    }

    #[test]
    fn parses_three_dimensional_tensor() {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend(0..8u8);
        assert_eq!(load_idx(&b).unwrap().dims, vec![2, 2, 2]);
    }

    #[test]
    fn short_payload_reports_expected_length() {
        let err = load_idx(&[0, 0, 8, 1, 0, 0, 0, 3, 1, 2]).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 10),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn rejects_bad_magic_and_type() {
        assert!(matches!(load_idx(&[1, 0, 8, 0]), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(load_idx(&[0, 0, 0x0d, 0]), Err(Error::Format { offset: 2, .. })));
        assert!(matches!(load_idx(&[0, 0]), Err(Error::Format { .. })));
        assert!(matches!(load_idx(&[0, 0, 8, 2, 0, 0]), Err(Error::Format { .. })));
    }

    #[test]
    fn images_scale_to_unit_interval() {
        let images = IdxTensor { dims: vec![2, 1, 2], elements: vec![0, 255, 51, 102] };
        let labels = IdxTensor { dims: vec![2], elements: vec![1, 0] };
        let d = to_dataset(&images, &labels, 2).unwrap();
        assert_eq!(d.features[(1, 0)], 1.0);
        assert_eq!(d.features[(0, 1)], 0.2);
        assert_eq!(d.labels, vec![1, 0]);
    }

    fn valid_idx() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(1usize..4, 0..4).prop_flat_map(|dims| {
            let count: usize = dims.iter().product();
            prop::collection::vec(any::<u8>(), count).prop_map(move |payload| {
                let mut b = vec![0, 0, 8, dims.len() as u8];
                for &d in &dims {
                    b.extend_from_slice(&(d as u32).to_be_bytes());
                }
                b.extend(payload);
                b
            })
        })
    }

    proptest! {
        #[test]
        fn serialize_inverts_parse(bytes in valid_idx()) {
            let t = load_idx(&bytes).unwrap();
            prop_assert_eq!(serialize_idx(&t).unwrap(), bytes);
        }
    }
}
