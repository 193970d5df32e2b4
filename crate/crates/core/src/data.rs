//! MNIST ingestion: the IDX container, pixel scaling and stratified samples.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dense::Matrix;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// An unsigned-byte tensor decoded from IDX.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn magic(&self) -> u32 {
        0x0000_0800 | self.dims.len() as u32
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::IdxTruncated {
            needed: offset + 4,
            available: bytes.len(),
        })
}

/// Decodes an IDX blob with unsigned-byte payload (type code `0x08`).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let magic = read_u32(bytes, 0)?;
    let ndim = (magic & 0xff) as usize;
    if magic & 0xffff_ff00 != 0x0000_0800 || ndim == 0 {
        return Err(Error::IdxBadMagic(magic));
    }
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        dims.push(read_u32(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndim;
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::IdxDimOverflow)?;
    let needed = header.checked_add(len).ok_or(Error::IdxDimOverflow)?;
    if bytes.len() < needed {
        return Err(Error::IdxTruncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok(IdxTensor {
        dims,
        data: bytes[header..needed].to_vec(),
    })
}

pub fn encode_idx(tensor: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * tensor.dims.len() + tensor.data.len());
    out.extend_from_slice(&tensor.magic().to_be_bytes());
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&tensor.data);
    out
}

/// Total byte length implied by an IDX header, if the header is complete.
pub fn idx_expected_len(header: &[u8]) -> Result<usize> {
    let magic = read_u32(header, 0)?;
    let ndim = (magic & 0xff) as usize;
    if magic & 0xffff_ff00 != 0x0000_0800 || ndim == 0 {
        return Err(Error::IdxBadMagic(magic));
    }
    let mut len = 1usize;
    for d in 0..ndim {
        len = len
            .checked_mul(read_u32(header, 4 + 4 * d)? as usize)
            .ok_or(Error::IdxDimOverflow)?;
    }
    len.checked_add(4 + 4 * ndim).ok_or(Error::IdxDimOverflow)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images scaled to `[0, 1]` with labels in `0..=9`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Vec<Matrix>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn from_idx(images: &IdxTensor, labels: &IdxTensor, split: Split) -> Result<Self> {
        if images.magic() != IDX_IMAGES_MAGIC {
            return Err(Error::IdxBadMagic(images.magic()));
        }
        if labels.magic() != IDX_LABELS_MAGIC {
            return Err(Error::IdxBadMagic(labels.magic()));
        }
        let (n, h, w) = (images.dims[0], images.dims[1], images.dims[2]);
        if labels.dims[0] != n {
            return Err(Error::shape("label count", n, labels.dims[0]));
        }
        if let Some((index, &value)) = labels.data.iter().enumerate().find(|(_, &l)| l > 9) {
            return Err(Error::LabelOutOfRange { index, value });
        }
        let images = images
            .data
            .chunks_exact(h * w)
            .map(|px| Matrix::from_vec(h, w, px.iter().map(|&b| f64::from(b) / 255.0).collect()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            images,
            labels: labels.data.clone(),
            split,
        })
    }

    pub fn load(images_path: &Path, labels_path: &Path, split: Split) -> Result<Self> {
        let images = parse_idx(&std::fs::read(images_path)?)?;
        let labels = parse_idx(&std::fs::read(labels_path)?)?;
        Self::from_idx(&images, &labels, split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Draws `per_class` distinct indices from each of the ten classes,
/// uniformly without replacement. The result is sorted and depends only on
/// `labels`, `per_class` and `seed`.
pub fn stratified_sample(labels: &[u8], per_class: usize, seed: u64) -> Result<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 10];
    for (i, &l) in labels.iter().enumerate() {
        let class = by_class
            .get_mut(l as usize)
            .ok_or(Error::LabelOutOfRange { index: i, value: l })?;
        class.push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * 10);
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < per_class {
            return Err(Error::InsufficientClass {
                class,
                available: members.len(),
                requested: per_class,
            });
        }
        let (chosen, _) = members.partial_shuffle(&mut rng, per_class);
        out.extend_from_slice(chosen);
    }
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_blob() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend_from_slice(&[0, 1, 2, 3, 252, 253, 254, 255]);
        b
    }

    #[test]
    fn hand_built_blob_decodes() {
        let t = parse_idx(&tiny_blob()).unwrap();
        assert_eq!(t.dims, vec![2, 2, 2]);
        assert_eq!(t.data, vec![0, 1, 2, 3, 252, 253, 254, 255]);
        assert_eq!(encode_idx(&t), tiny_blob());
        assert_eq!(idx_expected_len(&tiny_blob()[..16]).unwrap(), 24);
    }

    #[test]
    fn malformed_inputs_have_distinct_errors() {
        assert!(matches!(parse_idx(&[]), Err(Error::IdxTruncated { .. })));
        let mut bad = tiny_blob();
        bad[2] = 0x0d;
        assert!(matches!(parse_idx(&bad), Err(Error::IdxBadMagic(0x0000_0d03))));
        let short = &tiny_blob()[..20];
        assert!(matches!(parse_idx(short), Err(Error::IdxTruncated { needed: 24, .. })));
        let huge = [0, 0, 8, 3, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255];
        if usize::BITS == 64 {
            assert!(matches!(parse_idx(&huge), Err(Error::IdxDimOverflow)));
        }
    }

    #[test]
    fn dataset_scales_pixels() {
        let images = parse_idx(&tiny_blob()).unwrap();
        let labels = IdxTensor {
            dims: vec![2],
            data: vec![3, 9],
        };
        let ds = Dataset::from_idx(&images, &labels, Split::Train).unwrap();
        assert_eq!(ds.images[1][(1, 1)], 1.0);
        assert_eq!(ds.images[0][(0, 1)], 1.0 / 255.0);
        let bad = IdxTensor {
            dims: vec![2],
            data: vec![3, 10],
        };
        assert!(matches!(
            Dataset::from_idx(&images, &bad, Split::Train),
            Err(Error::LabelOutOfRange { index: 1, value: 10 })
        ));
    }

    #[test]
    fn stratified_sample_basics() {
        let labels: Vec<u8> = (0..500).map(|i| (i % 10) as u8).collect();
        let s = stratified_sample(&labels, 7, 1).unwrap();
        assert_eq!(s.len(), 70);
        let mut hist = [0; 10];
        for &i in &s {
            hist[labels[i] as usize] += 1;
        }
        assert_eq!(hist, [7; 10]);
        assert_eq!(s, stratified_sample(&labels, 7, 1).unwrap());
        assert_ne!(s, stratified_sample(&labels, 7, 2).unwrap());
        assert!(stratified_sample(&labels, 0, 1).unwrap().is_empty());
        assert!(matches!(
            stratified_sample(&labels, 51, 1),
            Err(Error::InsufficientClass { requested: 51, .. })
        ));
    }
}
