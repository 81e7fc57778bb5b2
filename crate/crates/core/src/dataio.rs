//! MNIST IDX files, splits, shuffling and synthetic tasks.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::loss::argmax;
use crate::numerics::Matrix;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const DEV_SIZE: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Fixed-width examples, one per row of `features`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: features.rows(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::IndexOutOfRange {
                op: "Dataset label",
                index: bad,
                universe: num_classes,
            });
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Copies the listed examples into a batch matrix and label vector.
    pub fn gather(&self, idx: &[usize]) -> (Matrix, Vec<usize>) {
        let d = self.dim();
        let mut x = Matrix::zeros(idx.len(), d);
        let mut y = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).copy_from_slice(self.features.row(i));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    pub fn slice(&self, range: std::ops::Range<usize>, split: Split) -> Dataset {
        let d = self.dim();
        let data = self.features.as_slice()[range.start * d..range.end * d].to_vec();
        Dataset {
            features: Matrix::from_vec(range.len(), d, data).expect("slice shape"),
            labels: self.labels[range].to_vec(),
            num_classes: self.num_classes,
            split,
        }
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn parse_idx<'a>(bytes: &'a [u8], path: &Path, magic: u32) -> Result<(Vec<usize>, &'a [u8])> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: 4,
            found: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            path: path.into(),
            found,
            expected: magic,
        });
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Truncated {
            path: path.into(),
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..ndim).map(|d| be_u32(bytes, 4 + 4 * d) as usize).collect();
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            found: bytes.len(),
        });
    }
    Ok((dims, &bytes[header..expected]))
}

/// Parses an IDX image/label pair. Pixels are scaled to `[0, 1]`.
pub fn load_mnist(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let image_bytes = read_maybe_gz(images_path)?;
    let label_bytes = read_maybe_gz(labels_path)?;
    let (idims, pixels) = parse_idx(&image_bytes, images_path, IMAGE_MAGIC)?;
    let (ldims, labels) = parse_idx(&label_bytes, labels_path, LABEL_MAGIC)?;
    if idims[0] != ldims[0] {
        return Err(Error::CountMismatch {
            images: idims[0],
            labels: ldims[0],
        });
    }
    let d = idims[1] * idims[2];
    let features = Matrix::from_vec(
        idims[0],
        d,
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )?;
    Dataset::new(features, labels.iter().map(|&l| l as usize).collect(), 10, split)
}

fn first_existing(dir: &Path, stem: &str) -> PathBuf {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(&name);
        if p.exists() {
            return p;
        }
    }
    dir.join(stem)
}

/// Loads `train-*` and `t10k-*` from a directory (plain or `.gz`).
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_mnist(
        &first_existing(dir, "train-images-idx3-ubyte"),
        &first_existing(dir, "train-labels-idx1-ubyte"),
        Split::Train,
    )?;
    let test = load_mnist(
        &first_existing(dir, "t10k-images-idx3-ubyte"),
        &first_existing(dir, "t10k-labels-idx1-ubyte"),
        Split::Test,
    )?;
    Ok((train, test))
}

/// Inverse of the loader for square images; pixels are rounded back to bytes.
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let d = dataset.dim();
    let side = (d as f64).sqrt() as usize;
    if side * side != d {
        return Err(Error::invalid("dataset", format!("{d} features is not a square image")));
    }
    let n = dataset.len() as u32;
    let mut img = Vec::with_capacity(16 + dataset.len() * d);
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for v in [n, side as u32, side as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(dataset.features.as_slice().iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut lab = Vec::with_capacity(8 + dataset.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend(dataset.labels.iter().map(|&l| l as u8));
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

/// First `DEV_SIZE` examples in file order become the dev set.
pub fn split_dev(train: &Dataset) -> Result<(Dataset, Dataset)> {
    split_dev_at(train, DEV_SIZE)
}

pub fn split_dev_at(train: &Dataset, dev_size: usize) -> Result<(Dataset, Dataset)> {
    if train.len() < dev_size {
        return Err(Error::invalid(
            "train",
            format!("{} examples, need at least {dev_size}", train.len()),
        ));
    }
    Ok((
        train.slice(dev_size..train.len(), Split::Train),
        train.slice(0..dev_size, Split::Dev),
    ))
}

/// Visiting order of one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_add(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone)]
pub struct BatchIterator {
    len: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
}

impl BatchIterator {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        Ok(BatchIterator {
            len,
            batch_size,
            seed,
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Batches of the current epoch; advances the epoch counter.
    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let order = epoch_order(self.len, self.seed, self.epoch);
        self.epoch += 1;
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Standard-normal features labelled by a random linear teacher.
pub fn synth_linear_timing(
    n_features: usize,
    n_outputs: usize,
    n_examples: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_examples == 0 || n_features == 0 || n_outputs == 0 {
        return Err(Error::invalid("synth_linear_timing", "all sizes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let teacher = Matrix::from_fn(n_outputs, n_features, |_, _| rng.sample(StandardNormal));
    let features = Matrix::from_fn(n_examples, n_features, |_, _| rng.sample(StandardNormal));
    let labels = (0..n_examples)
        .map(|r| {
            let x = features.row(r);
            let scores: Vec<f64> = (0..n_outputs)
                .map(|o| teacher.row(o).iter().zip(x).map(|(w, v)| w * v).sum())
                .collect();
            argmax(&scores)
        })
        .collect();
    Dataset::new(features, labels, n_outputs, Split::Train)
}

/// Number of token classes in the synthetic tagging task (`token % 3`).
pub const TOKEN_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub tokens: Vec<Vec<usize>>,
    pub tags: Vec<Vec<usize>>,
    pub vocab: usize,
    pub num_tags: usize,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_positions(&self) -> usize {
        self.tokens.iter().map(Vec::len).sum()
    }

    pub fn split_at(&self, at: usize) -> (SequenceDataset, SequenceDataset) {
        let at = at.min(self.len());
        let part = |r: std::ops::Range<usize>| SequenceDataset {
            tokens: self.tokens[r.clone()].to_vec(),
            tags: self.tags[r].to_vec(),
            vocab: self.vocab,
            num_tags: self.num_tags,
        };
        (part(0..at), part(at..self.len()))
    }
}

/// Tag of each position: `class(cur) * (C + 1) + class(prev)`, with `C`
/// standing in for the missing predecessor of the first token.
pub fn sequence_tag_rule(tokens: &[usize]) -> Vec<usize> {
    let c = TOKEN_CLASSES;
    tokens
        .iter()
        .enumerate()
        .map(|(t, &tok)| {
            let prev = if t == 0 { c } else { tokens[t - 1] % c };
            (tok % c) * (c + 1) + prev
        })
        .collect()
}

pub fn synth_sequence_task(
    vocab: usize,
    seq_len: usize,
    n_examples: usize,
    seed: u64,
) -> Result<SequenceDataset> {
    if vocab == 0 || seq_len == 0 || n_examples == 0 {
        return Err(Error::invalid("synth_sequence_task", "all sizes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens: Vec<Vec<usize>> = (0..n_examples)
        .map(|_| (0..seq_len).map(|_| rng.random_range(0..vocab)).collect())
        .collect();
    let tags = tokens.iter().map(|t| sequence_tag_rule(t)).collect();
    Ok(SequenceDataset {
        tokens,
        tags,
        vocab,
        num_tags: TOKEN_CLASSES * (TOKEN_CLASSES + 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    fn idx_pair(dir: &Path, n: u32, labels_n: u32) -> (PathBuf, PathBuf) {
        let mut img = Vec::new();
        img.extend_from_slice(&[0, 0, 8, 3]);
        for v in [n, 2, 2] {
            img.extend_from_slice(&v.to_be_bytes());
        }
        for i in 0..n * 4 {
            img.push(if i == 0 { 255 } else { (i * 7 % 256) as u8 });
        }
        let mut lab = vec![0, 0, 8, 1];
        lab.extend_from_slice(&labels_n.to_be_bytes());
        for i in 0..labels_n {
            lab.push(if i == 0 { 9 } else { (i % 10) as u8 });
        }
        let ip = dir.join("img");
        let lp = dir.join("lab");
        fs::write(&ip, img).unwrap();
        fs::write(&lp, lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn parses_header_labels_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = idx_pair(dir.path(), 3, 3);
        let d = load_mnist(&ip, &lp, Split::Train).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dim(), 4);
        assert_eq!(d.labels[0], 9);
        assert_eq!(d.features.get(0, 0), 1.0);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = idx_pair(dir.path(), 3, 2);
        assert!(matches!(
            load_mnist(&ip, &lp, Split::Train),
            Err(Error::CountMismatch { images: 3, labels: 2 })
        ));
        assert!(matches!(
            load_mnist(&lp, &lp, Split::Train),
            Err(Error::BadMagic { found: 0x801, .. })
        ));
        let mut bytes = fs::read(&ip).unwrap();
        bytes.truncate(bytes.len() - 1);
        fs::write(&ip, bytes).unwrap();
        assert!(matches!(load_mnist(&ip, &lp, Split::Train), Err(Error::Truncated { .. })));
        assert!(matches!(
            load_mnist(&dir.path().join("nope"), &lp, Split::Train),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn gzip_is_sniffed() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = idx_pair(dir.path(), 4, 4);
        let plain = load_mnist(&ip, &lp, Split::Test).unwrap();
        let gz = dir.path().join("img.gz");
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&fs::read(&ip).unwrap()).unwrap();
        fs::write(&gz, enc.finish().unwrap()).unwrap();
        assert_eq!(load_mnist(&gz, &lp, Split::Test).unwrap(), plain);
    }

    #[test]
    fn round_trip_through_writer() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = idx_pair(dir.path(), 5, 5);
        let a = load_mnist(&ip, &lp, Split::Train).unwrap();
        let (ip2, lp2) = (dir.path().join("i2"), dir.path().join("l2"));
        write_idx(&a, &ip2, &lp2).unwrap();
        assert_eq!(fs::read(&ip).unwrap(), fs::read(&ip2).unwrap());
        assert_eq!(load_mnist(&ip2, &lp2, Split::Train).unwrap(), a);
    }

    #[test]
    fn dev_split_is_file_order_prefix() {
        let n = 12;
        let features = Matrix::from_fn(n, 2, |r, c| (r * 2 + c) as f64);
        let d = Dataset::new(features, (0..n).map(|i| i % 10).collect(), 10, Split::Train).unwrap();
        let (train, dev) = split_dev_at(&d, 5).unwrap();
        assert_eq!(train.len(), 7);
        assert_eq!(dev.len(), 5);
        assert_eq!(dev.features.row(0), d.features.row(0));
        assert_eq!(train.features.row(0), d.features.row(5));
        assert!(split_dev_at(&d, 13).is_err());
    }

    #[test]
    fn shuffle_is_deterministic_per_epoch() {
        assert_eq!(epoch_order(100, 3, 0), epoch_order(100, 3, 0));
        assert_ne!(epoch_order(100, 3, 0), epoch_order(100, 3, 1));
        let mut it = BatchIterator::new(23, 5, 1).unwrap();
        let batches = it.next_epoch();
        assert_eq!(batches.len(), 5);
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
        assert_eq!(it.epoch(), 1);
    }

    #[test]
    fn synthetic_timing_data() {
        let a = synth_linear_timing(8, 3, 20, 5).unwrap();
        assert_eq!(a, synth_linear_timing(8, 3, 20, 5).unwrap());
        assert!(a.labels.iter().all(|&l| l < 3));
        assert!(synth_linear_timing(8, 3, 0, 5).is_err());
    }

    #[test]
    fn synthetic_sequences() {
        let a = synth_sequence_task(20, 1, 30, 2).unwrap();
        assert!(a.tags.iter().all(|t| t.len() == 1));
        // One token: the tag only depends on its class.
        for (tok, tag) in a.tokens.iter().zip(&a.tags) {
            assert_eq!(tag[0], (tok[0] % TOKEN_CLASSES) * (TOKEN_CLASSES + 1) + TOKEN_CLASSES);
        }
        let b = synth_sequence_task(20, 7, 30, 2).unwrap();
        assert_eq!(b, synth_sequence_task(20, 7, 30, 2).unwrap());
        for (tok, tag) in b.tokens.iter().zip(&b.tags) {
            assert_eq!(&sequence_tag_rule(tok), tag);
            assert!(tag.iter().all(|&t| t < b.num_tags));
        }
    }
}
