//! Artifact files: CSV tables, embedding export, memory dump, checkpoints.
//!
//! Raw blocks are little-endian `f64` values with no header; their shape
//! lives in the JSON file written next to them.

use std::fmt::Write as _;
use std::path::Path;

use driftguard_core::data::TaskDataset;
use driftguard_core::memory::ReplayMemory;
use driftguard_core::metrics::RMatrix;
use driftguard_core::pca::Pca;
use driftguard_core::{Architecture, Network};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

pub fn f64_le_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f64_from_le_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(HarnessError::Report(format!(
            "raw f64 block of {} bytes is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_rmatrix(r: &RMatrix, path: &Path) -> Result<()> {
    write_file(path, r.to_csv())
}

/// `task,accuracy_task0`: accuracy on the first task after each task.
pub fn write_trajectory(trajectory: &[f64], path: &Path) -> Result<()> {
    let mut s = String::from("task,accuracy_task0\n");
    for (i, a) in trajectory.iter().enumerate() {
        let _ = writeln!(s, "{i},{a}");
    }
    write_file(path, s)
}

/// Writes `label,pc1,pc2,h0,...` for every test example of `task`: its
/// task-local label, its 2D PCA coordinates and its embedding.
pub fn export_embeddings(net: &Network, task: &TaskDataset, path: &Path) -> Result<()> {
    let h = net.embeddings(&task.inputs())?;
    let k = h.cols().min(2);
    let coords = Pca::fit(&h, k)?.project(&h)?;
    let mut s = String::from("label");
    for c in 0..2 {
        let _ = write!(s, ",pc{}", c + 1);
    }
    for j in 0..h.cols() {
        let _ = write!(s, ",h{j}");
    }
    s.push('\n');
    for i in 0..h.rows() {
        let _ = write!(s, "{}", task.labels()[i]);
        for c in 0..2 {
            match coords.row(i).get(c) {
                Some(v) => write!(s, ",{v}"),
                None => write!(s, ",0"),
            }
            .expect("writing to a String");
        }
        for v in h.row(i) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    write_file(path, s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryIndexEntry {
    pub task: usize,
    pub p: f64,
    pub pick_count: u64,
    pub last_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryIndex {
    pub count: usize,
    pub x_dim: usize,
    pub h_dim: usize,
    pub per_task_budget: usize,
    pub weighting: driftguard_core::memory::Weighting,
    pub entries: Vec<MemoryIndexEntry>,
}

/// `index.json` plus `x.f64` (`count x x_dim`) and `h.f64` (`count x h_dim`).
pub fn dump_memory(mem: &ReplayMemory, dir: &Path) -> Result<()> {
    let entries = mem.entries();
    let index = MemoryIndex {
        count: entries.len(),
        x_dim: entries.first().map_or(0, |e| e.x.len()),
        h_dim: entries.first().map_or(0, |e| e.h.len()),
        per_task_budget: mem.per_task_budget(),
        weighting: mem.weighting(),
        entries: entries
            .iter()
            .map(|e| MemoryIndexEntry {
                task: e.task,
                p: e.p,
                pick_count: e.pick_count,
                last_distance: e.last_distance,
            })
            .collect(),
    };
    let xs: Vec<f64> = entries.iter().flat_map(|e| e.x.iter().copied()).collect();
    let hs: Vec<f64> = entries.iter().flat_map(|e| e.h.iter().copied()).collect();
    write_file(&dir.join("index.json"), to_json(&index)?)?;
    write_file(&dir.join("x.f64"), f64_le_bytes(&xs))?;
    write_file(&dir.join("h.f64"), f64_le_bytes(&hs))
}

/// `architecture.json` plus `params.f64`.
pub fn save_checkpoint(net: &Network, dir: &Path) -> Result<()> {
    write_file(&dir.join("architecture.json"), to_json(net.architecture())?)?;
    write_file(&dir.join("params.f64"), f64_le_bytes(net.params()))
}

pub fn load_checkpoint(dir: &Path) -> Result<Network> {
    let arch_path = dir.join("architecture.json");
    let text = std::fs::read_to_string(&arch_path).map_err(|e| HarnessError::io(&arch_path, e))?;
    let arch: Architecture =
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", arch_path.display())))?;
    let params_path = dir.join("params.f64");
    let bytes = std::fs::read(&params_path).map_err(|e| HarnessError::io(&params_path, e))?;
    Ok(Network::from_params(arch, f64_from_le_bytes(&bytes)?)?)
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Report(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use driftguard_core::rng::{stream, stream_rng};
    use driftguard_core::HeadPolicy;

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let arch = Architecture::new(6, vec![5, 4], HeadPolicy::per_task(3), 2).unwrap();
        let net = Network::new(arch, &mut stream_rng(3, stream::INIT));
        save_checkpoint(&net, dir.path()).unwrap();
        assert_eq!(load_checkpoint(dir.path()).unwrap(), net);
    }

    #[test]
    fn raw_blocks() {
        let v = [1.5, -0.0, f64::MAX, 1e-300];
        assert_eq!(f64_from_le_bytes(&f64_le_bytes(&v)).unwrap(), v);
        assert!(f64_from_le_bytes(&[0; 7]).is_err());
    }

    #[test]
    fn trajectory_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trajectory(&[0.9, 0.85], &p).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "task,accuracy_task0\n0,0.9\n1,0.85\n");
    }
}
