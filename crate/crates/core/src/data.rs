//! Synthetic datasets, long-tail subsampling, and file ingestion.
//!
//! Pixel values are canonicalized to f32-representable doubles in [0, 1] at
//! creation so both on-disk formats round-trip bit-exactly.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Tensor;

/// Magic for the binary dataset layout.
pub const DATASET_MAGIC: &[u8; 4] = b"TGD1";

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    /// N×C×H×W pixel tensor.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: String,
    pub class_counts: Vec<usize>,
}

fn count_classes(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}

fn canon(v: f64) -> f64 {
    (v as f32) as f64
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, split: impl Into<String>) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 {
            return Err(Error::shape(format!("dataset images must be N×C×H×W, got {shape:?}")));
        }
        if shape[0] != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                shape[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::usage(format!("label {bad} out of range for {classes} classes")));
        }
        let class_counts = count_classes(&labels, classes);
        Ok(LabeledDataset {
            images,
            labels,
            classes,
            split: split.into(),
            class_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// (C, H, W) of one image.
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// Materialize a batch as a constant B×C×H×W tensor plus labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let (c, h, w) = self.dims();
        let stride = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &ix in indices {
            if ix >= self.len() {
                return Err(Error::usage(format!("batch index {ix} out of range")));
            }
            data.extend_from_slice(&self.images.data()[ix * stride..(ix + 1) * stride]);
            labels.push(self.labels[ix]);
        }
        Ok((Tensor::from_vec(vec![indices.len(), c, h, w], data)?, labels))
    }

    /// Keep only the given instance indices (ascending order preserved).
    fn subset(&self, keep: &[usize], split: impl Into<String>) -> Result<LabeledDataset> {
        let (tensor, labels) = self.batch(keep)?;
        LabeledDataset::new(tensor, labels, self.classes, split)
    }
}

/// Balanced prototype-plus-noise dataset, split 80/20 stratified.
pub struct SynthSplits {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Each class gets a seeded random prototype in [0.2, 0.8]; images add
/// Gaussian pixel noise and clamp back to [0, 1].
pub fn synth_dataset(
    classes: usize,
    per_class: usize,
    c: usize,
    h: usize,
    w: usize,
    noise: f64,
    seed: u64,
) -> Result<SynthSplits> {
    if classes < 2 {
        return Err(Error::config(format!("need at least 2 classes, got {classes}")));
    }
    if per_class == 0 {
        return Err(Error::config("per_class must be positive".to_string()));
    }
    if noise < 0.0 {
        return Err(Error::config(format!("noise must be >= 0, got {noise}")));
    }
    let dim = c * h * w;
    let mut proto_rng = stream(seed, &["synth-prototypes"]);
    let prototypes: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| proto_rng.random_range(0.2..0.8)).collect())
        .collect();

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut noise_rng = stream(seed, &["synth-noise"]);
    let mut make_images = |count: usize, class: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(count * dim);
        for _ in 0..count {
            for &p in &prototypes[class] {
                let sample: f64 = normal.sample(&mut noise_rng);
                out.push(canon((p + noise * sample).clamp(0.0, 1.0)));
            }
        }
        out
    };

    let train_per_class = (per_class * 4) / 5;
    let mut train_data = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_data = Vec::new();
    let mut test_labels = Vec::new();
    for class in 0..classes {
        let imgs = make_images(per_class, class);
        let cut = train_per_class * dim;
        train_data.extend_from_slice(&imgs[..cut]);
        test_data.extend_from_slice(&imgs[cut..]);
        train_labels.extend(std::iter::repeat(class).take(train_per_class));
        test_labels.extend(std::iter::repeat(class).take(per_class - train_per_class));
    }
    let train = LabeledDataset::new(
        Tensor::from_vec(vec![train_labels.len(), c, h, w], train_data)?,
        train_labels,
        classes,
        "train",
    )?;
    let test = LabeledDataset::new(
        Tensor::from_vec(vec![test_labels.len(), c, h, w], test_data)?,
        test_labels,
        classes,
        "test",
    )?;
    Ok(SynthSplits { train, test })
}

/// Exponential long-tail profile: class `c` keeps
/// `ceil(n_max · ρ^(−c/(K−1)))` instances, chosen without replacement.
pub fn long_tail_subsample(ds: &LabeledDataset, rho: f64, seed: u64) -> Result<LabeledDataset> {
    if rho < 1.0 {
        return Err(Error::config(format!("imbalance rate must be >= 1, got {rho}")));
    }
    if rho == 1.0 || ds.classes < 2 {
        return ds.subset(&(0..ds.len()).collect::<Vec<_>>(), ds.split.clone());
    }
    let n_max = *ds.class_counts.iter().max().expect("nonempty") as f64;
    let mut rng = stream(seed, &["long-tail"]);
    let mut keep = Vec::new();
    for class in 0..ds.classes {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        let exponent = -(class as f64) / (ds.classes as f64 - 1.0);
        let target = (n_max * rho.powf(exponent)).ceil() as usize;
        let target = target.min(members.len()).max(1);
        // partial Fisher-Yates over the member list
        let mut pool = members;
        for i in 0..target {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        let mut picked: Vec<usize> = pool[..target].to_vec();
        picked.sort_unstable();
        keep.extend(picked);
    }
    keep.sort_unstable();
    ds.subset(&keep, ds.split.clone())
}

// ── CSV format: `label,p0,p1,...`, header optional ─────────────────────

pub fn save_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    let (c, h, w) = ds.dims();
    let dim = c * h * w;
    write!(out, "label")?;
    for i in 0..dim {
        write!(out, ",p{i}")?;
    }
    writeln!(out)?;
    for (i, &label) in ds.labels.iter().enumerate() {
        write!(out, "{label}")?;
        for v in &ds.images.data()[i * dim..(i + 1) * dim] {
            write!(out, ",{:.17e}", v)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Parse a CSV dataset. The caller supplies class count and image dims; rows
/// of the wrong width, bad labels, or unparsable pixels fail with their line
/// number. Values with magnitude above 1 are assumed 8-bit and divided by 255.
pub fn load_csv(path: &Path, classes: usize, c: usize, h: usize, w: usize) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let dim = c * h * w;
    let mut labels = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let first = fields.next().unwrap_or("").trim();
        if lineno == 1 && first.parse::<usize>().is_err() {
            continue; // header
        }
        let label: usize = first
            .parse()
            .map_err(|_| Error::parse(format!("line {lineno}: bad label {first:?}")))?;
        if label >= classes {
            return Err(Error::parse(format!(
                "line {lineno}: label {label} out of range for {classes} classes"
            )));
        }
        let mut row = Vec::with_capacity(dim);
        for (fi, field) in fields.enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(format!("line {lineno}: bad pixel {fi}: {field:?}")))?;
            row.push(v);
        }
        if row.len() != dim {
            return Err(Error::parse(format!(
                "line {lineno}: expected {dim} pixels, found {}",
                row.len()
            )));
        }
        labels.push(label);
        data.extend(row);
    }
    if labels.is_empty() {
        return Err(Error::parse(format!("{}: no data rows", path.display())));
    }
    let max = data.iter().cloned().fold(0.0f64, f64::max);
    if max > 1.0 {
        for v in &mut data {
            *v /= 255.0;
        }
    }
    for v in &mut data {
        *v = canon(*v);
    }
    LabeledDataset::new(
        Tensor::from_vec(vec![labels.len(), c, h, w], data)?,
        labels,
        classes,
        "loaded",
    )
}

// ── Binary format: magic, u32 dims, u32 labels, f32 pixels (LE) ────────

pub fn save_binary(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    let (c, h, w) = ds.dims();
    out.write_all(DATASET_MAGIC)?;
    for v in [ds.len(), ds.classes, c, h, w] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    for &label in &ds.labels {
        out.write_all(&(label as u32).to_le_bytes())?;
    }
    for &v in ds.images.data() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn load_binary(path: &Path) -> Result<LabeledDataset> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < 24 || &bytes[..4] != DATASET_MAGIC {
        return Err(Error::parse(format!(
            "{}: not a dataset file (missing TGD1 magic)",
            path.display()
        )));
    }
    let mut pos = 4;
    let mut next_u32 = |bytes: &[u8]| -> Result<u32> {
        if pos + 4 > bytes.len() {
            return Err(Error::parse("dataset file truncated".to_string()));
        }
        let v = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
        pos += 4;
        Ok(v)
    };
    let n = next_u32(&bytes)? as usize;
    let classes = next_u32(&bytes)? as usize;
    let c = next_u32(&bytes)? as usize;
    let h = next_u32(&bytes)? as usize;
    let w = next_u32(&bytes)? as usize;
    if n == 0 {
        return Err(Error::parse("dataset file holds zero instances".to_string()));
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(next_u32(&bytes)? as usize);
    }
    let dim = c * h * w;
    if pos + n * dim * 4 != bytes.len() {
        return Err(Error::parse(format!(
            "dataset file has {} pixel bytes, expected {}",
            bytes.len() - pos,
            n * dim * 4
        )));
    }
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n * dim {
        let off = pos + i * 4;
        data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
    }
    LabeledDataset::new(Tensor::from_vec(vec![n, c, h, w], data)?, labels, classes, "loaded")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_synth(noise: f64) -> SynthSplits {
        synth_dataset(4, 20, 1, 4, 4, noise, 9).unwrap()
    }

    #[test]
    fn synth_counts_and_split_are_stratified() {
        let splits = synth_dataset(10, 200, 1, 4, 4, 0.2, 1).unwrap();
        assert_eq!(splits.train.len() + splits.test.len(), 2000);
        assert!(splits.train.class_counts.iter().all(|&c| c == 160));
        assert!(splits.test.class_counts.iter().all(|&c| c == 40));
    }

    /// With zero noise every image equals its prototype, so a 1-NN match
    /// against any train image classifies the test split perfectly.
    #[test]
    fn noise_free_synth_is_separable() {
        let splits = tiny_synth(0.0);
        let (c, h, w) = splits.train.dims();
        let dim = c * h * w;
        let train = &splits.train;
        for i in 0..splits.test.len() {
            let img = &splits.test.images.data()[i * dim..(i + 1) * dim];
            let mut best = (f64::INFINITY, 0usize);
            for j in 0..train.len() {
                let other = &train.images.data()[j * dim..(j + 1) * dim];
                let d: f64 = img.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, train.labels[j]);
                }
            }
            assert_eq!(best.1, splits.test.labels[i]);
        }
    }

    /// Nearest-centroid fit on the train split lands strictly between chance
    /// and perfect under moderate noise, and is reproducible per seed.
    #[test]
    fn moderate_noise_leaves_headroom() {
        let accuracy = |seed: u64| -> f64 {
            let splits = synth_dataset(4, 40, 1, 4, 4, 0.6, seed).unwrap();
            let (c, h, w) = splits.train.dims();
            let dim = c * h * w;
            let mut centroids = vec![vec![0.0; dim]; 4];
            for i in 0..splits.train.len() {
                let y = splits.train.labels[i];
                for (acc, v) in centroids[y]
                    .iter_mut()
                    .zip(&splits.train.images.data()[i * dim..(i + 1) * dim])
                {
                    *acc += v;
                }
            }
            for (cls, count) in splits.train.class_counts.iter().enumerate() {
                for v in &mut centroids[cls] {
                    *v /= *count as f64;
                }
            }
            let mut hits = 0;
            for i in 0..splits.test.len() {
                let img = &splits.test.images.data()[i * dim..(i + 1) * dim];
                let mut best = (f64::INFINITY, 0usize);
                for (cls, cen) in centroids.iter().enumerate() {
                    let d: f64 = img.iter().zip(cen).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best.0 {
                        best = (d, cls);
                    }
                }
                if best.1 == splits.test.labels[i] {
                    hits += 1;
                }
            }
            hits as f64 / splits.test.len() as f64
        };
        let a = accuracy(33);
        assert!(a > 0.25 && a < 1.0, "accuracy {a}");
        assert_eq!(a, accuracy(33));
    }

    #[test]
    fn long_tail_counts_follow_the_exponential_profile() {
        let splits = synth_dataset(10, 250, 1, 4, 4, 0.1, 2).unwrap();
        let train = splits.train; // 200 per class
        let lt = long_tail_subsample(&train, 10.0, 5).unwrap();
        assert_eq!(lt.class_counts[0], 200);
        assert_eq!(lt.class_counts[9], 20);
        for c in 1..10 {
            assert!(lt.class_counts[c] < lt.class_counts[c - 1]);
        }
        let ratio = lt.class_counts[0] as f64 / lt.class_counts[9] as f64;
        assert!((ratio - 10.0).abs() / 10.0 <= 0.1);

        let unchanged = long_tail_subsample(&train, 1.0, 5).unwrap();
        assert_eq!(unchanged.class_counts, train.class_counts);
        assert_eq!(unchanged.images.data(), train.images.data());

        let steep = long_tail_subsample(&train, 100.0, 5).unwrap();
        for c in 1..10 {
            assert!(steep.class_counts[c] < steep.class_counts[c - 1]);
        }
        assert!(long_tail_subsample(&train, 0.5, 5).is_err());
    }

    #[test]
    fn long_tail_keeps_image_contents_intact() {
        let splits = tiny_synth(0.3);
        let lt = long_tail_subsample(&splits.train, 4.0, 7).unwrap();
        let (c, h, w) = splits.train.dims();
        let dim = c * h * w;
        // every retained image must literally appear in the source
        'outer: for i in 0..lt.len() {
            let img = &lt.images.data()[i * dim..(i + 1) * dim];
            for j in 0..splits.train.len() {
                if &splits.train.images.data()[j * dim..(j + 1) * dim] == img {
                    continue 'outer;
                }
            }
            panic!("retained image {i} not found in the source dataset");
        }
    }

    #[test]
    fn csv_roundtrip_is_bit_identical() {
        let splits = tiny_synth(0.4);
        let dir = std::env::temp_dir().join(format!("tgd-data-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.csv");
        save_csv(&splits.test, &path).unwrap();
        let loaded = load_csv(&path, 4, 1, 4, 4).unwrap();
        assert_eq!(loaded.labels, splits.test.labels);
        assert_eq!(loaded.images.data(), splits.test.images.data());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn binary_roundtrip_is_bit_identical() {
        let splits = tiny_synth(0.4);
        let dir = std::env::temp_dir().join(format!("tgd-bin-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.bin");
        save_binary(&splits.train, &path).unwrap();
        let loaded = load_binary(&path).unwrap();
        assert_eq!(loaded.labels, splits.train.labels);
        assert_eq!(loaded.images.data(), splits.train.images.data());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_errors_name_the_line() {
        let dir = std::env::temp_dir().join(format!("tgd-csv-err-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();

        let bad_label = dir.join("bad_label.csv");
        std::fs::write(&bad_label, "label,p0\n0,0.5\n7,0.5\n").unwrap();
        let err = load_csv(&bad_label, 2, 1, 1, 1).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");

        let empty = dir.join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(load_csv(&empty, 2, 1, 1, 1).is_err());

        let bad_width = dir.join("bad_width.csv");
        std::fs::write(&bad_width, "0,0.5,0.5\n").unwrap();
        let err = load_csv(&bad_width, 2, 1, 1, 1).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");

        std::fs::remove_dir_all(&dir).ok();
    }
}
