//! Datasets: the synthetic linear-regression generator with its binary
//! cache format, MNIST in the IDX format, and epoch-shuffled batching.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::LinRegDataset;
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Environment variable consulted for the MNIST directory.
pub const DATA_DIR_ENV: &str = "SWALP_DATA_DIR";

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
pub const SYNTHETIC_MAGIC: &[u8; 8] = b"SWLP0001";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d: usize,
    pub n: usize,
    pub sigma_x: f64,
    pub sigma_u: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 256 features, 4096 points, unit feature and label noise.
    pub fn standard(seed: u64) -> Self {
        Self {
            d: 256,
            n: 4096,
            sigma_x: 1.0,
            sigma_u: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n <= self.d {
            return Err(Error::InvalidArgument(format!(
                "synthetic dataset needs n > d > 0 (n={}, d={})",
                self.n, self.d
            )));
        }
        if !(self.sigma_x > 0.0) || !(self.sigma_u >= 0.0) {
            return Err(Error::InvalidArgument("synthetic sigmas must be positive".into()));
        }
        Ok(())
    }
}

/// `x_i ~ N(0, σ_x² I)`, `w_init ~ U[-1, 1]^d`, `y_i ~ N(w_initᵀ x_i, σ_u²)`.
///
/// Draw order: all of `w_init`, then for each row its `d` features followed
/// by its label noise.
pub fn gen_synthetic_linreg(spec: &SyntheticSpec) -> Result<LinRegDataset> {
    spec.validate()?;
    let SyntheticSpec {
        d,
        n,
        sigma_x,
        sigma_u,
        seed,
    } = *spec;
    let mut rng = RngStream::new(seed);
    let w_init: Vec<f64> = (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let start = x.len();
        for _ in 0..d {
            x.push(sigma_x * rng.normal());
        }
        let mean = crate::tensor::dot(&x[start..], &w_init);
        let noise = rng.normal();
        y.push(mean + sigma_u * noise);
    }
    LinRegDataset::new(Tensor::matrix(n, d, x)?, Tensor::vector(y), Tensor::vector(w_init))
}

/// Serialize as `SWLP0001`, `n`, `d` (u64 LE), then `X`, `y`, `w_init` as
/// row-major f64 LE.
pub fn write_synthetic(path: &Path, data: &LinRegDataset) -> Result<()> {
    let (n, d) = (data.n(), data.d());
    let mut buf = Vec::with_capacity(24 + 8 * (n * d + n + d));
    buf.extend_from_slice(SYNTHETIC_MAGIC);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(d as u64).to_le_bytes());
    for v in data.x.data().iter().chain(data.y.data()).chain(data.w_init.data()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_synthetic(path: &Path) -> Result<LinRegDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 || &bytes[..8] != SYNTHETIC_MAGIC {
        return Err(Error::Data(format!("{}: not a synthetic dataset file", path.display())));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let count = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_add(n + d))
        .ok_or_else(|| Error::Data("synthetic header overflows".into()))?;
    if bytes.len() != 24 + 8 * count {
        return Err(Error::Data(format!("{}: truncated file", path.display())));
    }
    let values: Vec<f64> = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let x = values[..n * d].to_vec();
    let y = values[n * d..n * d + n].to_vec();
    let w = values[n * d + n..].to_vec();
    LinRegDataset::new(Tensor::matrix(n, d, x)?, Tensor::vector(y), Tensor::vector(w))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MnistDataset {
    /// `[n, rows * cols]`, pixels scaled to `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl MnistDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.images.cols()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.images.row(i)
    }

    /// The first `n` examples.
    pub fn take(&self, n: usize) -> MnistDataset {
        let n = n.min(self.len());
        let f = self.features();
        MnistDataset {
            images: Tensor::matrix(n, f, self.images.data()[..n * f].to_vec()).expect("prefix shape"),
            labels: self.labels[..n].to_vec(),
            split: self.split,
        }
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
}

/// Parse an IDX image file (magic `0x00000803`, then `n, rows, cols`).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    match be_u32(bytes, 0) {
        Some(IDX_IMAGE_MAGIC) => {}
        _ => return Err(Error::Data("not an IDX image file".into())),
    }
    let (Some(n), Some(rows), Some(cols)) = (be_u32(bytes, 4), be_u32(bytes, 8), be_u32(bytes, 12)) else {
        return Err(Error::Data("truncated file".into()));
    };
    let (n, pixels) = (n as usize, rows as usize * cols as usize);
    let body = &bytes[16..];
    if body.len() < n * pixels {
        return Err(Error::Data("truncated file".into()));
    }
    Ok((n, pixels, body[..n * pixels].to_vec()))
}

/// Parse an IDX label file (magic `0x00000801`, then `n`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    match be_u32(bytes, 0) {
        Some(IDX_LABEL_MAGIC) => {}
        _ => return Err(Error::Data("not an IDX label file".into())),
    }
    let Some(n) = be_u32(bytes, 4) else {
        return Err(Error::Data("truncated file".into()));
    };
    let body = &bytes[8..];
    if body.len() < n as usize {
        return Err(Error::Data("truncated file".into()));
    }
    let labels = body[..n as usize].to_vec();
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Data(format!("label {bad} outside 0..=9")));
    }
    Ok(labels)
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<MnistDataset> {
    let img_bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lbl_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let (n, pixels, raw) = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lbl_bytes)?;
    if labels.len() != n {
        return Err(Error::Data(format!(
            "image count {n} does not match label count {}",
            labels.len()
        )));
    }
    let data = raw.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(MnistDataset {
        images: Tensor::matrix(n, pixels, data)?,
        labels,
        split,
    })
}

/// Load `{train,t10k}-{images-idx3,labels-idx1}-ubyte` from `dir`.
pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<MnistDataset> {
    let p = split.prefix();
    load_mnist_idx(
        &dir.join(format!("{p}-images-idx3-ubyte")),
        &dir.join(format!("{p}-labels-idx1-ubyte")),
        split,
    )
}

/// The MNIST directory from an explicit flag, else the environment.
pub fn resolve_data_dir(flag: Option<&Path>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
}

/// Endless mini-batch index stream, reshuffled at every epoch boundary.
/// The final short batch of an epoch is kept.
#[derive(Debug, Clone)]
pub struct BatchIter {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    epoch: usize,
    rng: RngStream,
}

impl BatchIter {
    pub fn new(n: usize, batch_size: usize, rng: RngStream) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("cannot batch an empty dataset".into()));
        }
        let mut it = Self {
            order: (0..n).collect(),
            batch_size,
            pos: 0,
            epoch: 0,
            rng,
        };
        it.order.shuffle(&mut it.rng);
        Ok(it)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
        }
        let start = self.pos;
        let end = (start + self.batch_size).min(self.order.len());
        self.pos = end;
        &self.order[start..end]
    }
}

impl Iterator for BatchIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGE_MAGIC, n, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn idx_fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..2 * 784).map(|i| (i * 7 % 256) as u8).collect();
        let img = idx_images(2, 28, 28, &pixels);
        assert_eq!(img.len(), 16 + 2 * 784);
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        fs::write(&ip, &img).unwrap();
        fs::write(&lp, idx_labels(&[7, 2])).unwrap();
        let ds = load_mnist_idx(&ip, &lp, Split::Train).unwrap();
        assert_eq!(ds.images.shape(), &[2, 784]);
        assert_eq!(ds.labels, vec![7, 2]);
        for (v, &b) in ds.images.data().iter().zip(&pixels) {
            assert_eq!(*v, f64::from(b) / 255.0);
        }
    }

    #[test]
    fn idx_errors() {
        let img = idx_images(2, 28, 28, &vec![0u8; 2 * 784]);
        assert_eq!(parse_idx_labels(&img).unwrap_err().to_string(), "not an IDX label file");
        assert_eq!(
            parse_idx_images(&idx_labels(&[1])).unwrap_err().to_string(),
            "not an IDX image file"
        );
        let short = idx_images(2, 28, 28, &vec![0u8; 784]);
        assert_eq!(parse_idx_images(&short).unwrap_err().to_string(), "truncated file");
        assert_eq!(parse_idx_images(&img[..10]).unwrap_err().to_string(), "truncated file");
        let mut lbl = idx_labels(&[1, 2, 3]);
        lbl.pop();
        assert_eq!(parse_idx_labels(&lbl).unwrap_err().to_string(), "truncated file");
    }

    #[test]
    fn idx_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        fs::write(&ip, idx_images(2, 28, 28, &vec![0u8; 2 * 784])).unwrap();
        fs::write(&lp, idx_labels(&[1, 2, 3])).unwrap();
        assert!(load_mnist_idx(&ip, &lp, Split::Test).is_err());
    }

    #[test]
    fn batches_cover_epoch() {
        let mut it = BatchIter::new(5, 2, RngStream::new(1)).unwrap();
        let sizes: Vec<usize> = (0..3).map(|_| it.next_batch().len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        let mut it = BatchIter::new(5, 2, RngStream::new(1)).unwrap();
        let mut seen: Vec<usize> = (0..3).flat_map(|_| it.next_batch().to_vec()).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(it.epoch(), 0);
        it.next_batch();
        assert_eq!(it.epoch(), 1);
    }

    #[test]
    fn full_batch_and_determinism() {
        let mut it = BatchIter::new(6, 6, RngStream::new(2)).unwrap();
        assert_eq!(it.next_batch().len(), 6);
        let a: Vec<Vec<usize>> = BatchIter::new(50, 7, RngStream::new(3)).unwrap().take(20).collect();
        let b: Vec<Vec<usize>> = BatchIter::new(50, 7, RngStream::new(3)).unwrap().take(20).collect();
        assert_eq!(a, b);
        assert!(BatchIter::new(5, 0, RngStream::new(0)).is_err());
    }

    #[test]
    fn synthetic_determinism_and_noiseless_recovery() {
        let spec = SyntheticSpec {
            d: 8,
            n: 64,
            sigma_x: 1.0,
            sigma_u: 0.0,
            seed: 5,
        };
        let a = gen_synthetic_linreg(&spec).unwrap();
        let b = gen_synthetic_linreg(&spec).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        let c = gen_synthetic_linreg(&SyntheticSpec { seed: 6, ..spec }).unwrap();
        assert_ne!(a.x, c.x);
        let w = crate::models::linreg_solve_exact(&a).unwrap();
        for (wi, ti) in w.data().iter().zip(a.w_init.data()) {
            assert!((wi - ti).abs() < 1e-8);
        }
        assert!(a.w_init.data().iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn synthetic_rejects_bad_spec() {
        let bad = SyntheticSpec {
            d: 8,
            n: 8,
            sigma_x: 1.0,
            sigma_u: 1.0,
            seed: 0,
        };
        assert!(gen_synthetic_linreg(&bad).is_err());
    }

    #[test]
    fn synthetic_cache_round_trip() {
        let spec = SyntheticSpec {
            d: 5,
            n: 40,
            sigma_x: 1.0,
            sigma_u: 1.0,
            seed: 9,
        };
        let data = gen_synthetic_linreg(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lin.bin");
        write_synthetic(&p, &data).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"SWLP0001");
        assert_eq!(bytes.len(), 24 + 8 * (40 * 5 + 40 + 5));
        let back = read_synthetic(&p).unwrap();
        assert_eq!(back.x, data.x);
        assert_eq!(back.y, data.y);
        assert_eq!(back.w_init, data.w_init);
        fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(read_synthetic(&p).is_err());
    }
}
