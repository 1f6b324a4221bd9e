//! Fashion-MNIST ingestion and heterogeneous node partitioning.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use ndarray::{Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rng::seeded_rng;

pub const NUM_CLASSES: usize = 10;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub type Histogram = [usize; NUM_CLASSES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Images scaled to `[0, 1]`, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Array2<f32>,
    labels: Vec<u8>,
    source: Split,
}

impl Dataset {
    pub fn new(images: Array2<f32>, labels: Vec<u8>, source: Split) -> Result<Self> {
        if images.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.nrows(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Shape(format!("label {l} out of range")));
        }
        Ok(Dataset {
            images,
            labels,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.ncols()
    }

    pub fn images(&self) -> &Array2<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn source(&self) -> Split {
        self.source
    }

    /// Copies the rows at `indices` into a new dataset.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            source: self.source,
        }
    }

    pub fn batch(&self) -> Result<Batch<'_, f32>> {
        Batch::new(self.images.view(), &self.labels)
    }

    /// Number of samples of each class.
    pub fn class_counts(&self) -> Histogram {
        let mut h = [0; NUM_CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Seeded stand-in with learnable structure, for tests and benchmarks.
    ///
    /// Each class has a random prototype image; samples are the prototype plus
    /// uniform noise, clipped to `[0, 1]`. Labels cycle through the classes.
    pub fn synthetic(per_class: usize, dim: usize, noise: f32, seed: u64, source: Split) -> Self {
        let mut rng = seeded_rng(seed);
        let prototypes = Array2::from_shape_simple_fn((NUM_CLASSES, dim), || {
            if rng.random_bool(0.3) {
                rng.random_range(0.5f32..1.0)
            } else {
                0.0
            }
        });
        let n = per_class * NUM_CLASSES;
        let labels: Vec<u8> = (0..n).map(|i| (i % NUM_CLASSES) as u8).collect();
        let mut images = Array2::zeros((n, dim));
        for (mut row, &label) in images.rows_mut().into_iter().zip(&labels) {
            for (px, &proto) in row.iter_mut().zip(prototypes.row(label as usize)) {
                *px = (proto + rng.random_range(-noise..=noise)).clamp(0.0, 1.0);
            }
        }
        Dataset {
            images,
            labels,
            source,
        }
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        MultiGzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct IdxFile<'a> {
    path: &'a Path,
    dims: Vec<usize>,
    payload: &'a [u8],
}

fn format_err(path: &Path, field: &'static str, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        field,
        message: message.into(),
    }
}

fn parse_idx<'a>(path: &'a Path, bytes: &'a [u8], magic: u32, ndims: usize) -> Result<IdxFile<'a>> {
    let word = |k: usize| -> Option<u32> {
        bytes
            .get(4 * k..4 * k + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
    };
    let found = word(0).ok_or_else(|| format_err(path, "magic", "file shorter than 4 bytes"))?;
    if found != magic {
        return Err(format_err(
            path,
            "magic",
            format!("expected {magic:#010x}, found {found:#010x}"),
        ));
    }
    let dims = (1..=ndims)
        .map(|k| word(k).map(|d| d as usize))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| format_err(path, "dimensions", "header truncated"))?;
    let header = 4 * (ndims + 1);
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(format_err(
            path,
            "payload",
            format!(
                "dimensions {dims:?} need {expected} bytes, found {}",
                payload.len()
            ),
        ));
    }
    Ok(IdxFile {
        path,
        dims,
        payload,
    })
}

/// Parses a big-endian IDX image/label pair (optionally gzip-compressed).
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    source: Split,
) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = read_maybe_gz(images_path)?;
    let label_bytes = read_maybe_gz(labels_path)?;
    let images = parse_idx(images_path, &image_bytes, IMAGES_MAGIC, 3)?;
    let labels = parse_idx(labels_path, &label_bytes, LABELS_MAGIC, 1)?;

    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(format_err(
            labels.path,
            "item count",
            format!("{} labels but {n} images", labels.dims[0]),
        ));
    }
    if let Some(&bad) = labels.payload.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(format_err(
            labels.path,
            "label",
            format!("value {bad} out of range"),
        ));
    }
    let dim = images.dims[1] * images.dims[2];
    let pixels = images.payload.iter().map(|&b| b as f32 / 255.0).collect();
    let images = Array2::from_shape_vec((n, dim), pixels).expect("payload length checked");
    Dataset::new(images, labels.payload.to_vec(), source)
}

fn find_file(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    if plain.exists() {
        plain
    } else {
        dir.join(format!("{stem}.gz"))
    }
}

/// Loads the standard `train-*` and `t10k-*` IDX files from `dir`.
pub fn load_fashion_mnist(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train = load_idx(
        find_file(dir, "train-images-idx3-ubyte"),
        find_file(dir, "train-labels-idx1-ubyte"),
        Split::Train,
    )?;
    let test = load_idx(
        find_file(dir, "t10k-images-idx3-ubyte"),
        find_file(dir, "t10k-labels-idx1-ubyte"),
        Split::Test,
    )?;
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Gold,
    Silver,
    Bronze,
    Garbage,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Gold,
        Category::Silver,
        Category::Bronze,
        Category::Garbage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Gold => "gold",
            Category::Silver => "silver",
            Category::Bronze => "bronze",
            Category::Garbage => "garbage",
        }
    }
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub category: Category,
    pub nodes: usize,
    pub samples_per_node: usize,
    pub classes_per_node: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSpec {
    pub categories: Vec<CategorySpec>,
    /// Falls back to a seed derived from the run seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for PartitionSpec {
    /// Five nodes in each of the four categories, 7000 samples in total.
    fn default() -> Self {
        let entry = |category, samples_per_node, classes_per_node| CategorySpec {
            category,
            nodes: 5,
            samples_per_node,
            classes_per_node,
        };
        PartitionSpec {
            categories: vec![
                entry(Category::Gold, 500, 10),
                entry(Category::Silver, 200, 10),
                entry(Category::Bronze, 500, 2),
                entry(Category::Garbage, 200, 2),
            ],
            seed: None,
        }
    }
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.categories.iter().enumerate() {
            let key = |field: &str| format!("partition.categories[{i}].{field}");
            if !(1..=NUM_CLASSES).contains(&c.classes_per_node) {
                return Err(Error::config(
                    key("classes_per_node"),
                    format!("must be in 1..={NUM_CLASSES}, got {}", c.classes_per_node),
                ));
            }
            if c.samples_per_node < c.classes_per_node {
                return Err(Error::config(
                    key("samples_per_node"),
                    format!(
                        "{} samples cannot cover {} classes",
                        c.samples_per_node, c.classes_per_node
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.categories.iter().map(|c| c.nodes).sum()
    }

    pub fn total_samples(&self) -> usize {
        self.categories
            .iter()
            .map(|c| c.nodes * c.samples_per_node)
            .sum()
    }
}

/// One node's share of the training set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDataset {
    pub node_id: usize,
    pub category: Category,
    pub indices: Vec<usize>,
    pub label_histogram: Histogram,
}

impl NodeDataset {
    pub fn sample_count(&self) -> usize {
        self.indices.len()
    }

    pub fn class_count(&self) -> usize {
        self.label_histogram.iter().filter(|&&n| n > 0).count()
    }
}

/// Class counts of `indices` into `labels`.
pub fn label_histogram(labels: &[u8], indices: &[usize]) -> Histogram {
    let mut h = [0; NUM_CLASSES];
    for &i in indices {
        h[labels[i] as usize] += 1;
    }
    h
}

/// Per-class pools of dataset indices, each shuffled once.
fn shuffled_pools(dataset: &Dataset, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut pools = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in dataset.labels.iter().enumerate() {
        pools[l as usize].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }
    pools
}

/// Splits `total` as evenly as possible over `parts`; earlier parts take the remainder.
fn even_split(total: usize, parts: usize) -> impl Iterator<Item = usize> {
    let (base, extra) = (total / parts, total % parts);
    (0..parts).map(move |k| base + usize::from(k < extra))
}

fn draw(pool: &mut Vec<usize>, class: usize, count: usize) -> Result<Vec<usize>> {
    if pool.len() < count {
        return Err(Error::Capacity {
            class,
            needed: count,
            available: pool.len(),
        });
    }
    Ok(pool.split_off(pool.len() - count))
}

/// Assigns disjoint, class-balanced subsets of `dataset` to nodes.
///
/// Node ids follow the order of `spec.categories`. Each node draws its class
/// set uniformly without repetition, then takes its quota split evenly over
/// those classes. Samples are drawn without replacement across all nodes.
pub fn partition(dataset: &Dataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<NodeDataset>> {
    spec.validate()?;
    if spec.total_samples() > dataset.len() {
        return Err(Error::config(
            "partition",
            format!(
                "{} samples requested from a dataset of {}",
                spec.total_samples(),
                dataset.len()
            ),
        ));
    }
    let mut rng = seeded_rng(seed);
    let mut pools = shuffled_pools(dataset, &mut rng);
    let mut nodes = Vec::with_capacity(spec.node_count());
    for entry in &spec.categories {
        for _ in 0..entry.nodes {
            let mut classes = if entry.classes_per_node == NUM_CLASSES {
                (0..NUM_CLASSES).collect()
            } else {
                index::sample(&mut rng, NUM_CLASSES, entry.classes_per_node).into_vec()
            };
            classes.sort_unstable();
            let mut indices = Vec::with_capacity(entry.samples_per_node);
            for (&class, quota) in classes
                .iter()
                .zip(even_split(entry.samples_per_node, classes.len()))
            {
                indices.extend(draw(&mut pools[class], class, quota)?);
            }
            indices.sort_unstable();
            nodes.push(NodeDataset {
                node_id: nodes.len(),
                category: entry.category,
                label_histogram: label_histogram(&dataset.labels, &indices),
                indices,
            });
        }
    }
    Ok(nodes)
}

/// Indices of a class-stratified random subset of `size` samples.
pub fn stratified_subset(dataset: &Dataset, size: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = seeded_rng(seed);
    let mut pools = shuffled_pools(dataset, &mut rng);
    let mut out = Vec::with_capacity(size);
    for (class, quota) in even_split(size, NUM_CLASSES).enumerate() {
        out.extend(draw(&mut pools[class], class, quota)?);
    }
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::io::Write;

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend(d.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn parses_tiny_idx_pair() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(
            dir.path(),
            "img",
            &idx_bytes(IMAGES_MAGIC, &[2, 2, 2], &[0, 255, 51, 102, 1, 2, 3, 4]),
        );
        let lab = write(dir.path(), "lab", &idx_bytes(LABELS_MAGIC, &[2], &[3, 9]));
        let ds = load_idx(&img, &lab, Split::Test).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.labels(), &[3, 9]);
        assert_eq!(ds.images()[[0, 1]], 1.0);
        assert_eq!(ds.images()[[0, 2]], 0.2);
        assert_eq!(ds.source(), Split::Test);
    }

    #[test]
    fn gzip_is_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let gz = |bytes: &[u8]| {
            let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
            enc.write_all(bytes).unwrap();
            enc.finish().unwrap()
        };
        let img = write(
            dir.path(),
            "img.gz",
            &gz(&idx_bytes(IMAGES_MAGIC, &[1, 1, 2], &[0, 255])),
        );
        let lab = write(
            dir.path(),
            "lab.gz",
            &gz(&idx_bytes(LABELS_MAGIC, &[1], &[7])),
        );
        let ds = load_idx(&img, &lab, Split::Train).unwrap();
        assert_eq!(ds.labels(), &[7]);
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(
            dir.path(),
            "img",
            &idx_bytes(IMAGES_MAGIC, &[1, 1, 1], &[0]),
        );
        let lab = write(
            dir.path(),
            "lab",
            &idx_bytes(IMAGES_MAGIC, &[1, 1, 1], &[0]),
        );
        let err = load_idx(&img, &lab, Split::Train).unwrap_err();
        assert!(
            matches!(err, Error::Format { field: "magic", ref path, .. } if path == &lab),
            "{err}"
        );
    }

    #[test]
    fn truncated_payload_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(
            dir.path(),
            "img",
            &idx_bytes(IMAGES_MAGIC, &[2, 1, 2], &[0, 1, 2]),
        );
        let lab = write(dir.path(), "lab", &idx_bytes(LABELS_MAGIC, &[2], &[0, 1]));
        let err = load_idx(&img, &lab, Split::Train).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Format {
                    field: "payload",
                    ..
                }
            ),
            "{err}"
        );

        let img = write(
            dir.path(),
            "img",
            &idx_bytes(IMAGES_MAGIC, &[1, 1, 2], &[0, 1]),
        );
        let err = load_idx(&img, &lab, Split::Train).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Format {
                    field: "item count",
                    ..
                }
            ),
            "{err}"
        );

        let short = write(dir.path(), "short", &[0, 0, 8]);
        let err = load_idx(&short, &lab, Split::Train).unwrap_err();
        assert!(matches!(err, Error::Format { field: "magic", .. }), "{err}");
    }

    fn pool() -> Dataset {
        Dataset::synthetic(3000, 4, 0.1, 1, Split::Train)
    }

    #[test]
    fn default_partition_counts() {
        let ds = pool();
        let nodes = partition(&ds, &PartitionSpec::default(), 3).unwrap();
        assert_eq!(nodes.len(), 20);
        assert_eq!(
            nodes.iter().map(NodeDataset::sample_count).sum::<usize>(),
            7000
        );
        for node in &nodes {
            assert_eq!(
                label_histogram(ds.labels(), &node.indices),
                node.label_histogram
            );
            match node.category {
                Category::Gold => assert_eq!(node.label_histogram, [50; 10]),
                Category::Silver => assert_eq!(node.label_histogram, [20; 10]),
                Category::Bronze => {
                    let mut h = node.label_histogram.to_vec();
                    h.sort_unstable();
                    assert_eq!(h, [0, 0, 0, 0, 0, 0, 0, 0, 250, 250]);
                }
                Category::Garbage => assert_eq!(node.class_count(), 2),
            }
        }
        let ids: Vec<_> = nodes.iter().map(|n| n.node_id).collect();
        assert_eq!(ids, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn partition_is_disjoint_and_reproducible() {
        let ds = pool();
        let a = partition(&ds, &PartitionSpec::default(), 9).unwrap();
        let b = partition(&ds, &PartitionSpec::default(), 9).unwrap();
        assert_eq!(a, b);
        let mut seen = HashSet::new();
        for n in &a {
            for &i in &n.indices {
                assert!(seen.insert(i));
            }
        }
    }

    #[test]
    fn uneven_quota_spreads_remainder() {
        let ds = pool();
        let spec = PartitionSpec {
            categories: vec![CategorySpec {
                category: Category::Garbage,
                nodes: 1,
                samples_per_node: 7,
                classes_per_node: 3,
            }],
            seed: None,
        };
        let node = &partition(&ds, &spec, 0).unwrap()[0];
        let mut counts: Vec<_> = node
            .label_histogram
            .iter()
            .copied()
            .filter(|&n| n > 0)
            .collect();
        counts.sort_unstable();
        assert_eq!(counts, vec![2, 2, 3]);
    }

    #[test]
    fn capacity_and_config_errors() {
        let ds = Dataset::synthetic(10, 4, 0.1, 1, Split::Train);
        let spec = PartitionSpec {
            categories: vec![CategorySpec {
                category: Category::Gold,
                nodes: 2,
                samples_per_node: 30,
                classes_per_node: 2,
            }],
            seed: None,
        };
        assert!(matches!(
            partition(&ds, &spec, 0),
            Err(Error::Capacity { .. })
        ));

        let too_many = PartitionSpec::default();
        assert!(matches!(
            partition(&ds, &too_many, 0),
            Err(Error::Config { .. })
        ));

        let mut bad = PartitionSpec::default();
        bad.categories[0].classes_per_node = 11;
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
        let mut bad = PartitionSpec::default();
        bad.categories[0].samples_per_node = 0;
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn stratified_subset_is_balanced() {
        let ds = pool();
        let idx = stratified_subset(&ds, 1000, 5).unwrap();
        assert_eq!(idx.len(), 1000);
        assert_eq!(label_histogram(ds.labels(), &idx), [100; 10]);
        assert_eq!(idx, stratified_subset(&ds, 1000, 5).unwrap());
    }
}
