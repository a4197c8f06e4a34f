//! Readers for the on-disk formats of the published datasets.
//!
//! Expected layout under the data root:
//!
//! ```text
//! cifar10/data_batch_{1..5}.bin, cifar10/test_batch.bin   (binary version)
//! svhn/train_32x32.mat, svhn/test_32x32.mat               (MATLAB v5)
//! emnist/emnist-balanced-{train,test}-{images-idx3,labels-idx1}-ubyte[.gz]
//! ```
//!
//! CIFAR files may also sit in a `cifar-10-batches-bin/` subdirectory, as
//! unpacked from the official archive.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::{GzDecoder, ZlibDecoder};
use sha2::{Digest, Sha256};

use super::{Dataset, DatasetHandle};
use crate::config::DatasetName;
use crate::error::{fsx, Error, Result};

const CIFAR_URL: &str = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";
const SVHN_URL: &str = "http://ufldl.stanford.edu/housenumbers/";
const EMNIST_URL: &str = "https://www.nist.gov/itl/products-and-services/emnist-dataset";

type Loaded = (Dataset, Dataset, BTreeMap<String, String>);

pub(super) fn load_published(name: DatasetName, root: &Path, handle: &DatasetHandle) -> Result<Loaded> {
    let dir = root.join(name.as_str());
    let mut sums = BTreeMap::new();
    let (train, test) = match name {
        DatasetName::Cifar10 => {
            let base = if dir.join("cifar-10-batches-bin").is_dir() {
                dir.join("cifar-10-batches-bin")
            } else {
                dir.clone()
            };
            let train_files: Vec<PathBuf> = (1..=5).map(|i| base.join(format!("data_batch_{i}.bin"))).collect();
            let test_file = base.join("test_batch.bin");
            require(name, CIFAR_URL, train_files.iter().chain([&test_file]))?;
            let mut train_raw = Vec::new();
            for f in &train_files {
                train_raw.extend(read_summed(f, &mut sums)?);
            }
            let test_raw = read_summed(&test_file, &mut sums)?;
            (
                parse_cifar(&train_raw, handle, &base)?,
                parse_cifar(&test_raw, handle, &test_file)?,
            )
        }
        DatasetName::Svhn => {
            let (tr, te) = (dir.join("train_32x32.mat"), dir.join("test_32x32.mat"));
            require(name, SVHN_URL, [&tr, &te])?;
            (
                parse_svhn(&read_summed(&tr, &mut sums)?, handle, &tr)?,
                parse_svhn(&read_summed(&te, &mut sums)?, handle, &te)?,
            )
        }
        DatasetName::Emnist => {
            let file = |split: &str, kind: &str| -> PathBuf {
                let plain = dir.join(format!("emnist-balanced-{split}-{kind}-ubyte"));
                let gz = dir.join(format!("emnist-balanced-{split}-{kind}-ubyte.gz"));
                if !plain.exists() && gz.exists() {
                    gz
                } else {
                    plain
                }
            };
            let paths = [
                file("train", "images-idx3"),
                file("train", "labels-idx1"),
                file("test", "images-idx3"),
                file("test", "labels-idx1"),
            ];
            require(name, EMNIST_URL, paths.iter())?;
            let mut bytes = Vec::new();
            for p in &paths {
                bytes.push(read_summed(p, &mut sums)?);
            }
            (
                parse_emnist(&bytes[0], &bytes[1], handle, &paths[0])?,
                parse_emnist(&bytes[2], &bytes[3], handle, &paths[2])?,
            )
        }
        DatasetName::Synthetic => unreachable!("synthetic data is generated, not loaded"),
    };
    Ok((train, test, sums))
}

fn require<'a>(name: DatasetName, url: &str, paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(Error::MissingData {
                dataset: name.to_string(),
                expected: p.clone(),
                source_url: url.to_string(),
            });
        }
    }
    Ok(())
}

/// Read a file, record its SHA-256 under its file name, and gunzip `.gz` files.
fn read_summed(path: &Path, sums: &mut BTreeMap<String, String>) -> Result<Vec<u8>> {
    let raw = fsx::read(path)?;
    let key = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    sums.insert(key, hex::encode(Sha256::digest(&raw)));
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: {msg}", path.display()))
}

/// CIFAR binary batches: records of one label byte and 3072 CHW pixel bytes.
pub(super) fn parse_cifar(raw: &[u8], handle: &DatasetHandle, path: &Path) -> Result<Dataset> {
    let len = handle.image_shape.len();
    let rec = len + 1;
    if !raw.len().is_multiple_of(rec) {
        return Err(bad(
            path,
            format!("size {} is not a multiple of {rec}-byte records", raw.len()),
        ));
    }
    let n = raw.len() / rec;
    let mut images = Vec::with_capacity(n * len);
    let mut labels = Vec::with_capacity(n);
    for r in raw.chunks_exact(rec) {
        labels.push(r[0] as usize);
        images.extend_from_slice(&r[1..]);
    }
    Dataset::new(
        &handle.name,
        handle.image_shape,
        handle.category_names.clone(),
        images,
        labels,
    )
    .map_err(|e| bad(path, e))
}

fn read_be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(b[at..at + 4].try_into().unwrap())
}

/// EMNIST IDX pair. Images are stored transposed and are flipped back here.
pub(super) fn parse_emnist(images: &[u8], labels: &[u8], handle: &DatasetHandle, path: &Path) -> Result<Dataset> {
    if images.len() < 16 || read_be_u32(images, 0) != 0x0803 {
        return Err(bad(path, "not an IDX3 image file"));
    }
    if labels.len() < 8 || read_be_u32(labels, 0) != 0x0801 {
        return Err(bad(path, "companion label file is not an IDX1 file"));
    }
    let n = read_be_u32(images, 4) as usize;
    let (rows, cols) = (read_be_u32(images, 8) as usize, read_be_u32(images, 12) as usize);
    let shape = handle.image_shape;
    if (1, rows, cols) != (shape.channels, shape.height, shape.width) {
        return Err(bad(path, format!("image size {rows}x{cols} does not match {shape}")));
    }
    if read_be_u32(labels, 4) as usize != n || images.len() != 16 + n * rows * cols || labels.len() != 8 + n {
        return Err(bad(path, "truncated IDX data or image/label count mismatch"));
    }
    let mut out = vec![0u8; n * rows * cols];
    for i in 0..n {
        let src = &images[16 + i * rows * cols..16 + (i + 1) * rows * cols];
        let dst = &mut out[i * rows * cols..(i + 1) * rows * cols];
        for y in 0..rows {
            for x in 0..cols {
                dst[y * cols + x] = src[x * rows + y];
            }
        }
    }
    let labels = labels[8..].iter().map(|&l| l as usize).collect();
    Dataset::new(&handle.name, shape, handle.category_names.clone(), out, labels).map_err(|e| bad(path, e))
}

fn parse_svhn(raw: &[u8], handle: &DatasetHandle, path: &Path) -> Result<Dataset> {
    let vars = read_mat_v5(raw).map_err(|m| bad(path, m))?;
    let x = vars
        .iter()
        .find(|v| v.name == "X")
        .ok_or_else(|| bad(path, "no variable X"))?;
    let y = vars
        .iter()
        .find(|v| v.name == "y")
        .ok_or_else(|| bad(path, "no variable y"))?;
    let shape = handle.image_shape;
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    if x.dims.len() != 4 || x.dims[..3] != [h, w, c] {
        return Err(bad(
            path,
            format!("X has dims {:?}, expected [{h}, {w}, {c}, N]", x.dims),
        ));
    }
    let n = x.dims[3];
    if y.len() != n {
        return Err(bad(path, format!("y has {} entries for {n} images", y.len())));
    }
    let xv = x.to_u8();
    // Column-major [h, w, c, n] to row-major CHW per image.
    let mut images = vec![0u8; n * c * h * w];
    for i in 0..n {
        for ch in 0..c {
            for col in 0..w {
                for row in 0..h {
                    images[((i * c + ch) * h + row) * w + col] = xv[row + h * (col + w * (ch + c * i))];
                }
            }
        }
    }
    let labels = y
        .to_f64()
        .into_iter()
        .map(|v| if v == 10.0 { 0 } else { v as usize })
        .collect();
    Dataset::new(&handle.name, shape, handle.category_names.clone(), images, labels).map_err(|e| bad(path, e))
}

/// Numeric payload of a MAT-file array.
#[derive(Debug, Clone, PartialEq)]
pub enum MatData {
    U8(Vec<u8>),
    F64(Vec<f64>),
}

/// One numeric variable from a MAT v5 file.
#[derive(Debug, Clone, PartialEq)]
pub struct MatArray {
    pub name: String,
    /// Column-major dimensions as stored.
    pub dims: Vec<usize>,
    pub data: MatData,
}

impl MatArray {
    pub fn len(&self) -> usize {
        match &self.data {
            MatData::U8(v) => v.len(),
            MatData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            MatData::U8(v) => v.iter().map(|&b| b as f64).collect(),
            MatData::F64(v) => v.clone(),
        }
    }

    pub fn to_u8(&self) -> std::borrow::Cow<'_, [u8]> {
        match &self.data {
            MatData::U8(v) => std::borrow::Cow::Borrowed(v),
            MatData::F64(v) => std::borrow::Cow::Owned(v.iter().map(|&f| f.clamp(0.0, 255.0) as u8).collect()),
        }
    }
}

const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT16: u32 = 3;
const MI_UINT16: u32 = 4;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_SINGLE: u32 = 7;
const MI_DOUBLE: u32 = 9;
const MI_INT64: u32 = 12;
const MI_UINT64: u32 = 13;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    swap: bool,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> std::result::Result<u32, String> {
        let b = self.take(4)?;
        let v = u32::from_le_bytes(b.try_into().unwrap());
        Ok(if self.swap { v.swap_bytes() } else { v })
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or("truncated MAT data")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn done(&self) -> bool {
        self.pos >= self.buf.len()
    }

    /// Next element as (type, payload); handles the small-element form and padding.
    fn element(&mut self) -> std::result::Result<(u32, &'a [u8]), String> {
        let tag = self.u32()?;
        if tag >> 16 != 0 {
            let (ty, n) = (tag & 0xffff, (tag >> 16) as usize);
            let data = self.take(4)?;
            return Ok((ty, &data[..n.min(4)]));
        }
        let n = self.u32()? as usize;
        let data = self.take(n)?;
        if tag != MI_COMPRESSED {
            let pad = (8 - n % 8) % 8;
            self.pos = (self.pos + pad).min(self.buf.len());
        }
        Ok((tag, data))
    }
}

fn numeric(ty: u32, raw: &[u8], swap: bool) -> std::result::Result<MatData, String> {
    macro_rules! conv {
        ($t:ty, $n:expr) => {
            raw.chunks_exact($n)
                .map(|c| {
                    let mut b: [u8; $n] = c.try_into().unwrap();
                    if swap {
                        b.reverse();
                    }
                    <$t>::from_le_bytes(b) as f64
                })
                .collect()
        };
    }
    Ok(match ty {
        MI_UINT8 => MatData::U8(raw.to_vec()),
        MI_INT8 => MatData::F64(raw.iter().map(|&b| b as i8 as f64).collect()),
        MI_INT16 => MatData::F64(conv!(i16, 2)),
        MI_UINT16 => MatData::F64(conv!(u16, 2)),
        MI_INT32 => MatData::F64(conv!(i32, 4)),
        MI_UINT32 => MatData::F64(conv!(u32, 4)),
        MI_SINGLE => MatData::F64(conv!(f32, 4)),
        MI_DOUBLE => MatData::F64(conv!(f64, 8)),
        MI_INT64 => MatData::F64(conv!(i64, 8)),
        MI_UINT64 => MatData::F64(conv!(u64, 8)),
        other => return Err(format!("unsupported MAT numeric type {other}")),
    })
}

fn parse_matrix(payload: &[u8], swap: bool) -> std::result::Result<Option<MatArray>, String> {
    let mut r = Reader {
        buf: payload,
        pos: 0,
        swap,
    };
    let (_, flags) = r.element()?;
    let class = flags.first().copied().unwrap_or(0);
    // Skip cells, structs, objects, chars, sparse.
    if !(6..=15).contains(&class) {
        return Ok(None);
    }
    let (_, dims_raw) = r.element()?;
    let dims = match numeric(MI_INT32, dims_raw, swap)? {
        MatData::F64(v) => v.into_iter().map(|d| d as usize).collect::<Vec<_>>(),
        MatData::U8(_) => unreachable!(),
    };
    let (_, name) = r.element()?;
    let name = String::from_utf8_lossy(name).into_owned();
    let (ty, real) = r.element()?;
    let data = numeric(ty, real, swap)?;
    let arr = MatArray { name, dims, data };
    if arr.len() != arr.dims.iter().product::<usize>() {
        return Err(format!(
            "array {} has {} values for dims {:?}",
            arr.name,
            arr.len(),
            arr.dims
        ));
    }
    Ok(Some(arr))
}

fn parse_elements(buf: &[u8], swap: bool, out: &mut Vec<MatArray>) -> std::result::Result<(), String> {
    let mut r = Reader { buf, pos: 0, swap };
    while !r.done() {
        let (ty, data) = r.element()?;
        match ty {
            MI_MATRIX => out.extend(parse_matrix(data, swap)?),
            MI_COMPRESSED => {
                let mut inner = Vec::new();
                ZlibDecoder::new(data)
                    .read_to_end(&mut inner)
                    .map_err(|e| format!("bad compressed element: {e}"))?;
                parse_elements(&inner, swap, out)?;
            }
            _ => {}
        }
    }
    Ok(())
}

/// Numeric arrays of a MATLAB level-5 MAT file (compressed or not).
pub fn read_mat_v5(raw: &[u8]) -> std::result::Result<Vec<MatArray>, String> {
    if raw.len() < 128 {
        return Err("file shorter than the 128-byte MAT header".into());
    }
    let swap = match &raw[126..128] {
        b"IM" => false,
        b"MI" => true,
        _ => return Err("not a MAT v5 file (bad endian indicator)".into()),
    };
    let mut out = Vec::new();
    parse_elements(&raw[128..], swap, &mut out)?;
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use std::io::Write;

    use flate2::write::ZlibEncoder;
    use flate2::Compression;

    use super::*;

    fn element(ty: u32, data: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend(ty.to_le_bytes());
        v.extend((data.len() as u32).to_le_bytes());
        v.extend(data);
        while v.len() % 8 != 0 {
            v.push(0);
        }
        v
    }

    fn matrix(name: &str, class: u8, dims: &[i32], ty: u32, data: &[u8]) -> Vec<u8> {
        let mut body = element(MI_UINT32, &[class, 0, 0, 0, 0, 0, 0, 0]);
        body.extend(element(
            MI_INT32,
            &dims.iter().flat_map(|d| d.to_le_bytes()).collect::<Vec<_>>(),
        ));
        body.extend(element(MI_INT8, name.as_bytes()));
        body.extend(element(ty, data));
        element(MI_MATRIX, &body)
    }

    /// A MAT v5 file holding SVHN-style `X` (uint8, [h,w,c,n]) and `y` (double, [n,1]).
    pub(crate) fn svhn_mat(h: usize, w: usize, c: usize, x: &[u8], y: &[f64], compress: bool) -> Vec<u8> {
        let n = y.len();
        let mut out = vec![b' '; 116];
        out.extend([0u8; 8]);
        out.extend(0x0100u16.to_le_bytes());
        out.extend(b"IM");
        let mut elems = matrix("X", 9, &[h as i32, w as i32, c as i32, n as i32], MI_UINT8, x);
        let yb: Vec<u8> = y.iter().flat_map(|v| v.to_le_bytes()).collect();
        elems.extend(matrix("y", 6, &[n as i32, 1], MI_DOUBLE, &yb));
        if compress {
            let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
            enc.write_all(&elems).unwrap();
            let z = enc.finish().unwrap();
            out.extend(MI_COMPRESSED.to_le_bytes());
            out.extend((z.len() as u32).to_le_bytes());
            out.extend(z);
        } else {
            out.extend(elems);
        }
        out
    }

    fn handle(c: usize, side: usize, k: usize) -> DatasetHandle {
        DatasetHandle {
            name: "t".into(),
            image_shape: crate::tensor::ImageShape::new(c, side, side),
            num_categories: k,
            train_size: 0,
            test_size: 0,
            category_names: (0..k).map(|i| i.to_string()).collect(),
        }
    }

    #[test]
    fn mat_column_major_and_label_ten() {
        let (h, w, c, n) = (2, 3, 2, 2);
        // value encodes its own (row, col, ch, img) position
        let mut x = vec![0u8; h * w * c * n];
        for i in 0..n {
            for ch in 0..c {
                for col in 0..w {
                    for row in 0..h {
                        x[row + h * (col + w * (ch + c * i))] = (i * 100 + ch * 10 + row * 3 + col) as u8;
                    }
                }
            }
        }
        for compress in [false, true] {
            let raw = svhn_mat(h, w, c, &x, &[10.0, 3.0], compress);
            let hd = DatasetHandle {
                image_shape: crate::tensor::ImageShape::new(c, h, w),
                ..handle(c, h, 10)
            };
            let d = parse_svhn(&raw, &hd, Path::new("x.mat")).unwrap();
            assert_eq!(d.labels(), &[0, 3]);
            let img = d.raw(1);
            assert_eq!(img[(h + 1) * w + 2], 100 + 10 + 3 + 2);
            assert_eq!(img[0], 100);
        }
    }

    #[test]
    fn mat_rejects_garbage() {
        assert!(read_mat_v5(&[0u8; 10]).is_err());
        assert!(read_mat_v5(&[0u8; 200]).is_err());
    }

    #[test]
    fn cifar_records() {
        let hd = handle(3, 2, 10);
        let mut raw = vec![7u8];
        raw.extend(0..12u8);
        raw.push(2);
        raw.extend([9u8; 12]);
        let d = parse_cifar(&raw, &hd, Path::new("b.bin")).unwrap();
        assert_eq!(d.labels(), &[7, 2]);
        assert_eq!(d.raw(0), &(0..12u8).collect::<Vec<_>>()[..]);
        assert!(parse_cifar(&raw[1..], &hd, Path::new("b.bin")).is_err());
    }

    #[test]
    fn emnist_is_transposed() {
        let hd = handle(1, 2, 47);
        let mut img = Vec::new();
        img.extend(0x0803u32.to_be_bytes());
        img.extend(1u32.to_be_bytes());
        img.extend(2u32.to_be_bytes());
        img.extend(2u32.to_be_bytes());
        img.extend([1, 2, 3, 4]);
        let mut lab = Vec::new();
        lab.extend(0x0801u32.to_be_bytes());
        lab.extend(1u32.to_be_bytes());
        lab.push(46);
        let d = parse_emnist(&img, &lab, &hd, Path::new("e")).unwrap();
        assert_eq!(d.raw(0), &[1, 3, 2, 4]);
        assert_eq!(d.labels(), &[46]);
    }

    #[test]
    fn gz_files_are_summed_raw_and_decoded() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.gz");
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(b"hello").unwrap();
        let gz = enc.finish().unwrap();
        std::fs::write(&p, &gz).unwrap();
        let mut sums = BTreeMap::new();
        assert_eq!(read_summed(&p, &mut sums).unwrap(), b"hello");
        assert_eq!(sums["a.gz"], hex::encode(Sha256::digest(&gz)));
    }
}
