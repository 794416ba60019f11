//! Dataset files and task-stream construction.

use std::path::Path;
use std::sync::Arc;

use driftguard_core::data::{
    downsample_2x, idx_dataset, permuted_tasks, split_tasks, synthetic_tasks, LabeledData, TaskStream,
};

use crate::config::{Benchmark, ExperimentConfig};
use crate::error::{HarnessError, Result};

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| HarnessError::io(path, e))
}

/// Reads one IDX image/label pair. Pixels are scaled to `[0, 1]`.
pub fn load_idx_pair(images: &Path, labels: &Path) -> Result<(LabeledData, usize)> {
    let (data, side) = idx_dataset(&read(images)?, &read(labels)?).map_err(|e| match e {
        driftguard_core::Error::Format(m) => HarnessError::Config(format!("{}: {m}", images.display())),
        other => other.into(),
    })?;
    Ok((data, side))
}

/// MNIST train and test splits from `root`.
#[derive(Clone, Debug)]
pub struct Mnist {
    pub train: LabeledData,
    pub test: LabeledData,
    pub side: usize,
}

impl Mnist {
    /// True when all four files are present under `root`.
    pub fn available(root: &Path) -> bool {
        [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS]
            .iter()
            .all(|f| root.join(f).is_file())
    }

    pub fn load(root: &Path) -> Result<Self> {
        for f in [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS] {
            let p = root.join(f);
            if !p.is_file() {
                return Err(HarnessError::Config(format!(
                    "missing dataset file {} (set data.root or ${})",
                    p.display(),
                    crate::config::DATA_ENV
                )));
            }
        }
        let (train, side) = load_idx_pair(&root.join(TRAIN_IMAGES), &root.join(TRAIN_LABELS))?;
        let (test, test_side) = load_idx_pair(&root.join(TEST_IMAGES), &root.join(TEST_LABELS))?;
        if side != test_side {
            return Err(HarnessError::Config(format!(
                "train images are {side} wide but test images are {test_side}"
            )));
        }
        Ok(Mnist { train, test, side })
    }

    /// 2x2 average pooling of both splits.
    pub fn downsampled(&self) -> Result<Self> {
        Ok(Mnist {
            train: downsample_2x(&self.train, self.side)?,
            test: downsample_2x(&self.test, self.side)?,
            side: self.side / 2,
        })
    }

    pub fn limited(&self, train: Option<usize>, test: Option<usize>) -> Result<Self> {
        Ok(Mnist {
            train: match train {
                Some(n) => self.train.truncate(n)?,
                None => self.train.clone(),
            },
            test: match test {
                Some(n) => self.test.truncate(n)?,
                None => self.test.clone(),
            },
            side: self.side,
        })
    }
}

/// Builds the configured stream, reading MNIST from disk when needed.
pub fn load_stream(cfg: &ExperimentConfig) -> Result<TaskStream> {
    match cfg.benchmark {
        Benchmark::Synthetic => {
            let mut spec = cfg.synthetic.clone();
            spec.n_tasks = cfg.n_tasks;
            Ok(synthetic_tasks(&spec, cfg.seed)?)
        }
        _ => {
            let mnist = Mnist::load(&cfg.data.resolved_root())?;
            stream_from_mnist(cfg, &mnist)
        }
    }
}

/// Builds the configured MNIST stream from already loaded data (downsampling
/// and limits from `cfg` are applied here).
pub fn stream_from_mnist(cfg: &ExperimentConfig, mnist: &Mnist) -> Result<TaskStream> {
    let mut m = mnist.limited(cfg.data.train_limit, cfg.data.test_limit)?;
    if cfg.data.downsample {
        m = m.downsampled()?;
    }
    let train = Arc::new(m.train);
    let test = Arc::new(m.test);
    match cfg.benchmark {
        Benchmark::Permuted => Ok(permuted_tasks(train, test, cfg.n_tasks, cfg.seed)?),
        Benchmark::Split => {
            let full = split_tasks(train, test, cfg.data.classes_per_task)?;
            if cfg.n_tasks > full.len() {
                return Err(HarnessError::Config(format!(
                    "split benchmark has {} tasks of {} classes, {} requested",
                    full.len(),
                    cfg.data.classes_per_task,
                    cfg.n_tasks
                )));
            }
            Ok(TaskStream::new(full.tasks()[..cfg.n_tasks].to_vec(), full.head_policy())?)
        }
        Benchmark::Synthetic => Err(HarnessError::Config("synthetic streams are not built from MNIST".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_idx(dir: &Path, n: usize, side: usize) {
        let mut img = vec![0, 0, 8, 3];
        for v in [n, side, side] {
            img.extend((v as u32).to_be_bytes());
        }
        img.extend((0..n * side * side).map(|i| (i % 256) as u8));
        let mut lab = vec![0, 0, 8, 1];
        lab.extend((n as u32).to_be_bytes());
        lab.extend((0..n).map(|i| (i % 10) as u8));
        for (name, bytes) in [(TRAIN_IMAGES, &img), (TEST_IMAGES, &img), (TRAIN_LABELS, &lab), (TEST_LABELS, &lab)] {
            std::fs::write(dir.join(name), bytes).unwrap();
        }
    }

    #[test]
    fn loads_and_builds_streams() {
        let dir = tempfile::tempdir().unwrap();
        assert!(!Mnist::available(dir.path()));
        write_idx(dir.path(), 20, 4);
        assert!(Mnist::available(dir.path()));
        let mnist = Mnist::load(dir.path()).unwrap();
        assert_eq!(mnist.train.len(), 20);
        assert_eq!(mnist.train.dim(), 16);
        assert!(mnist.train.inputs().data().iter().all(|&v| (0.0..=1.0).contains(&v)));

        let mut cfg = ExperimentConfig {
            n_tasks: 3,
            ..ExperimentConfig::default()
        };
        cfg.data.downsample = true;
        let s = stream_from_mnist(&cfg, &mnist).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.input_dim(), 4);

        cfg.benchmark = Benchmark::Split;
        cfg.data.downsample = false;
        cfg.n_tasks = 5;
        let s = stream_from_mnist(&cfg, &mnist).unwrap();
        assert_eq!(s.len(), 5);
        cfg.n_tasks = 6;
        assert!(stream_from_mnist(&cfg, &mnist).is_err());
    }

    #[test]
    fn missing_files_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = Mnist::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains(TRAIN_IMAGES), "{err}");
    }
}
