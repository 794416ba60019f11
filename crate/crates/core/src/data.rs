//! Task streams: IDX decoding, permuted and split benchmarks, synthetic
//! Gaussian tasks and mini-batch ordering.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HeadMode, HeadPolicy};
use crate::rng::{standard_normal, stream_rng, stream};
use crate::tensor::Tensor;

/// Labeled examples sharing one input width.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledData {
    inputs: Tensor,
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabeledData {
    /// `inputs` is `[N x D]`; `n_classes` must exceed every label.
    pub fn new(inputs: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if inputs.shape().len() != 2 || inputs.rows() != labels.len() {
            return Err(Error::dim("labeled data", inputs.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Index {
                op: "labeled data",
                index: bad,
                bound: n_classes,
            });
        }
        if let Some(i) = inputs.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite input value at {i}")));
        }
        Ok(LabeledData {
            inputs,
            labels,
            n_classes,
        })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn subset(&self, rows: &[usize]) -> Result<LabeledData> {
        let inputs = self.inputs.gather_rows(rows)?;
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        Ok(LabeledData {
            inputs,
            labels,
            n_classes: self.n_classes,
        })
    }

    /// First `n` examples (all of them when `n >= len`).
    pub fn truncate(&self, n: usize) -> Result<LabeledData> {
        let rows: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&rows)
    }
}

/// Decoded IDX image file.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `[N x rows*cols]`, pixel bytes scaled to `[0, 1]`.
    pub inputs: Tensor,
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

fn idx_body<'a>(bytes: &'a [u8], header: usize, count: usize, what: &str) -> Result<&'a [u8]> {
    let body = &bytes[header..];
    if body.len() < count {
        return Err(Error::Format(format!(
            "{what}: truncated body, expected {count} bytes, found {}",
            body.len()
        )));
    }
    if body.len() > count {
        return Err(Error::Format(format!(
            "{what}: {} trailing bytes after {count} expected",
            body.len() - count
        )));
    }
    Ok(body)
}

/// Decodes an unsigned-byte 3-D IDX image file (magic `0x00000803`) and
/// flattens every image to a feature vector.
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "images: bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let body = idx_body(bytes, 16, n * rows * cols, "images")?;
    let data = body.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(IdxImages {
        rows,
        cols,
        inputs: Tensor::matrix(n, rows * cols, data)?,
    })
}

/// Decodes an unsigned-byte 1-D IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "labels: bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let body = idx_body(bytes, 8, n, "labels")?;
    Ok(body.iter().map(|&b| usize::from(b)).collect())
}

/// Pairs decoded images and labels into a dataset.
pub fn idx_dataset(images: &[u8], labels: &[u8]) -> Result<(LabeledData, usize)> {
    let img = parse_idx_images(images)?;
    let lab = parse_idx_labels(labels)?;
    if img.inputs.rows() != lab.len() {
        return Err(Error::Format(format!(
            "image count {} does not match label count {}",
            img.inputs.rows(),
            lab.len()
        )));
    }
    let n_classes = lab.iter().max().map_or(0, |m| m + 1).max(1);
    let side = img.rows;
    Ok((LabeledData::new(img.inputs, lab, n_classes)?, side))
}

/// Averages non-overlapping 2x2 pixel blocks of square `side x side`
/// images (28x28 becomes 14x14).
pub fn downsample_2x(data: &LabeledData, side: usize) -> Result<LabeledData> {
    if side * side != data.dim() || side % 2 != 0 {
        return Err(Error::config(format!(
            "cannot 2x-pool {}-wide rows as {side}x{side} images",
            data.dim()
        )));
    }
    let half = side / 2;
    let mut out = Vec::with_capacity(data.len() * half * half);
    for i in 0..data.len() {
        let img = data.inputs.row(i);
        for r in 0..half {
            for c in 0..half {
                let at = |dr: usize, dc: usize| img[(2 * r + dr) * side + 2 * c + dc];
                out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0);
            }
        }
    }
    LabeledData::new(
        Tensor::matrix(data.len(), half * half, out)?,
        data.labels.clone(),
        data.n_classes,
    )
}

/// Examples of one task, as seen by the network: inputs possibly permuted,
/// labels remapped to the task's local classes.
#[derive(Clone, Debug)]
pub struct TaskDataset {
    task_id: usize,
    source: Arc<LabeledData>,
    rows: Option<Vec<usize>>,
    permutation: Option<Arc<Vec<usize>>>,
    labels: Vec<usize>,
    class_map: Vec<(usize, usize)>,
    n_classes: usize,
}

impl TaskDataset {
    /// Every example of `source`, with labels kept as they are.
    pub fn whole(task_id: usize, source: Arc<LabeledData>) -> Self {
        let n = source.n_classes();
        TaskDataset {
            task_id,
            labels: source.labels().to_vec(),
            class_map: (0..n).map(|c| (c, c)).collect(),
            n_classes: n,
            rows: None,
            permutation: None,
            source,
        }
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    /// Local class indices.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `(original class, local class)` pairs.
    pub fn class_map(&self) -> &[(usize, usize)] {
        &self.class_map
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn permutation(&self) -> Option<&[usize]> {
        self.permutation.as_deref().map(Vec::as_slice)
    }

    fn source_row(&self, i: usize) -> usize {
        self.rows.as_ref().map_or(i, |r| r[i])
    }

    fn write_row(&self, i: usize, out: &mut Vec<f64>) {
        let src = self.source.inputs().row(self.source_row(i));
        match &self.permutation {
            Some(p) => out.extend(p.iter().map(|&j| src[j])),
            None => out.extend_from_slice(src),
        }
    }

    /// Input vector of example `i`.
    pub fn input(&self, i: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.write_row(i, &mut out);
        out
    }

    /// `[positions.len() x D]` inputs of the given examples.
    pub fn gather(&self, positions: &[usize]) -> Result<Tensor> {
        let mut out = Vec::with_capacity(positions.len() * self.dim());
        for &i in positions {
            if i >= self.len() {
                return Err(Error::Index {
                    op: "gather",
                    index: i,
                    bound: self.len(),
                });
            }
            self.write_row(i, &mut out);
        }
        Tensor::matrix(positions.len(), self.dim(), out)
    }

    pub fn gather_labels(&self, positions: &[usize]) -> Vec<usize> {
        positions.iter().map(|&i| self.labels[i]).collect()
    }

    /// All inputs, materialized.
    pub fn inputs(&self) -> Tensor {
        let all: Vec<usize> = (0..self.len()).collect();
        self.gather(&all).expect("positions in range")
    }
}

/// Train and test data of one task.
#[derive(Clone, Debug)]
pub struct TaskSplit {
    pub train: TaskDataset,
    pub test: TaskDataset,
}

/// Ordered tasks `0..N` and the head layout they require.
#[derive(Clone, Debug)]
pub struct TaskStream {
    tasks: Vec<TaskSplit>,
    head: HeadPolicy,
}

impl TaskStream {
    pub fn new(tasks: Vec<TaskSplit>, head: HeadPolicy) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::config("a task stream needs at least one task"));
        }
        for (i, t) in tasks.iter().enumerate() {
            if t.train.task_id != i || t.test.task_id != i {
                return Err(Error::contract(format!("task {i} is out of stream order")));
            }
            if t.train.class_map != t.test.class_map {
                return Err(Error::contract(format!(
                    "task {i}: train and test class maps differ"
                )));
            }
            if t.train.n_classes > head.classes_per_head {
                return Err(Error::config(format!(
                    "task {i} has {} classes but heads have {}",
                    t.train.n_classes, head.classes_per_head
                )));
            }
        }
        Ok(TaskStream { tasks, head })
    }

    pub fn tasks(&self) -> &[TaskSplit] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn head_policy(&self) -> HeadPolicy {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.tasks[0].train.dim()
    }
}

/// Permutation `0..dim` drawn from `rng`.
pub fn random_permutation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..dim).collect();
    p.shuffle(rng);
    p
}

/// Permuted-feature benchmark with one shared head. Task 0 keeps the
/// original feature order; every later task applies its own fixed random
/// permutation to both train and test inputs.
pub fn permuted_tasks(
    train: Arc<LabeledData>,
    test: Arc<LabeledData>,
    n_tasks: usize,
    seed: u64,
) -> Result<TaskStream> {
    if n_tasks == 0 {
        return Err(Error::config("n_tasks must be at least 1"));
    }
    if train.dim() != test.dim() {
        return Err(Error::dim("permuted_tasks", &[train.dim()], &[test.dim()]));
    }
    let dim = train.dim();
    let mut rng = stream_rng(seed, stream::DATA);
    let identity: Vec<usize> = (0..dim).collect();
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    seen.insert(identity);
    let n_classes = train.n_classes().max(test.n_classes());
    let mut tasks = Vec::with_capacity(n_tasks);
    for t in 0..n_tasks {
        let permutation = if t == 0 {
            None
        } else {
            let mut p = random_permutation(dim, &mut rng);
            while dim > 1 && seen.contains(&p) {
                p = random_permutation(dim, &mut rng);
            }
            seen.insert(p.clone());
            Some(Arc::new(p))
        };
        let make = |src: &Arc<LabeledData>| TaskDataset {
            permutation: permutation.clone(),
            n_classes,
            class_map: (0..n_classes).map(|c| (c, c)).collect(),
            ..TaskDataset::whole(t, Arc::clone(src))
        };
        tasks.push(TaskSplit {
            train: make(&train),
            test: make(&test),
        });
    }
    TaskStream::new(tasks, HeadPolicy::shared(n_classes))
}

/// Split-class benchmark with per-task heads: task `k` holds the original
/// classes `[k*c, (k+1)*c)` relabeled to `0..c`.
pub fn split_tasks(
    train: Arc<LabeledData>,
    test: Arc<LabeledData>,
    classes_per_task: usize,
) -> Result<TaskStream> {
    let n_classes = train.n_classes().max(test.n_classes());
    if classes_per_task == 0 || n_classes % classes_per_task != 0 {
        return Err(Error::config(format!(
            "{n_classes} classes cannot be split into groups of {classes_per_task}"
        )));
    }
    let n_tasks = n_classes / classes_per_task;
    let select = |src: &Arc<LabeledData>, k: usize| {
        let lo = k * classes_per_task;
        let hi = lo + classes_per_task;
        let rows: Vec<usize> = (0..src.len())
            .filter(|&i| (lo..hi).contains(&src.labels()[i]))
            .collect();
        TaskDataset {
            task_id: k,
            labels: rows.iter().map(|&i| src.labels()[i] - lo).collect(),
            rows: Some(rows),
            permutation: None,
            class_map: (lo..hi).map(|c| (c, c - lo)).collect(),
            n_classes: classes_per_task,
            source: Arc::clone(src),
        }
    };
    let tasks = (0..n_tasks)
        .map(|k| TaskSplit {
            train: select(&train, k),
            test: select(&test, k),
        })
        .collect();
    TaskStream::new(tasks, HeadPolicy::per_task(classes_per_task))
}

/// Parameters of the Gaussian-cluster task generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_tasks: usize,
    pub dim: usize,
    pub classes: usize,
    pub n_per_class: usize,
    pub n_test_per_class: usize,
    /// Minimum distance between class means of one task, in units of `noise`.
    pub separation: f64,
    /// Per-coordinate standard deviation of every cluster.
    pub noise: f64,
    pub head: HeadMode,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_tasks: 3,
            dim: 20,
            classes: 2,
            n_per_class: 200,
            n_test_per_class: 100,
            separation: 4.0,
            noise: 1.0,
            head: HeadMode::PerTask,
        }
    }
}

/// Gaussian clusters, one per class, with fresh means for every task.
/// Class means inside a task are at least `separation * noise` apart.
pub fn synthetic_tasks(spec: &SyntheticSpec, seed: u64) -> Result<TaskStream> {
    if spec.dim < 2 {
        return Err(Error::config("synthetic tasks need dim >= 2"));
    }
    if spec.n_tasks == 0 || spec.classes == 0 || spec.n_per_class == 0 || spec.n_test_per_class == 0
    {
        return Err(Error::config("synthetic task sizes must be positive"));
    }
    if !(spec.noise > 0.0 && spec.separation >= 0.0) {
        return Err(Error::config("synthetic noise must be positive"));
    }
    let mut rng = stream_rng(seed, stream::DATA);
    let min_gap = spec.separation * spec.noise;
    // expected distance between two means drawn with this scale is 2*min_gap
    let scale = 2.0 * min_gap / libm::sqrt(2.0 * spec.dim as f64);
    let total_classes = match spec.head {
        HeadMode::PerTask => spec.classes,
        HeadMode::Shared => spec.classes,
    };

    let mut tasks = Vec::with_capacity(spec.n_tasks);
    for t in 0..spec.n_tasks {
        let means = loop {
            let means: Vec<Vec<f64>> = (0..spec.classes)
                .map(|_| (0..spec.dim).map(|_| scale * standard_normal(&mut rng)).collect())
                .collect();
            let ok = means.iter().enumerate().all(|(i, a)| {
                means[i + 1..].iter().all(|b| {
                    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    libm::sqrt(d2) >= min_gap
                })
            });
            if ok {
                break means;
            }
        };
        let mut draw = |per_class: usize| -> Result<LabeledData> {
            let mut x = Vec::with_capacity(per_class * spec.classes * spec.dim);
            let mut y = Vec::with_capacity(per_class * spec.classes);
            for _ in 0..per_class {
                for (k, mean) in means.iter().enumerate() {
                    x.extend(mean.iter().map(|&m| m + spec.noise * standard_normal(&mut rng)));
                    y.push(k);
                }
            }
            LabeledData::new(Tensor::matrix(y.len(), spec.dim, x)?, y, spec.classes)
        };
        let train = Arc::new(draw(spec.n_per_class)?);
        let test = Arc::new(draw(spec.n_test_per_class)?);
        tasks.push(TaskSplit {
            train: TaskDataset::whole(t, train),
            test: TaskDataset::whole(t, test),
        });
    }
    let head = match spec.head {
        HeadMode::PerTask => HeadPolicy::per_task(total_classes),
        HeadMode::Shared => HeadPolicy::shared(total_classes),
    };
    TaskStream::new(tasks, head)
}

/// Shuffled mini-batches of positions `0..n` for one epoch.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Uniform sample of `k` distinct positions out of `0..n` (all of them
/// when `k >= n`), in sampled order.
pub fn sample_without_replacement<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    rand::seq::index::sample(rng, n, k).into_vec()
}
