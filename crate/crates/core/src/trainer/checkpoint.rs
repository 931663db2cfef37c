//! Checkpoint archive: parameter snapshots along the training trajectory
//! plus the stage transitions, with disk round-tripping. Snapshots are dense
//! around vocabulary introductions so the backtracking analysis can walk the
//! history at fine resolution where it matters.
//!
//! On disk an archive is a directory holding `archive.json` (index, stage
//! metadata, transitions, metrics) and one binary file per snapshot: a
//! versioned header followed by the parameter values as little-endian f64 in
//! the flat parameter order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{LstmOutput, RnnParameters, UnitType};
use crate::real::Real;

/// Loss and stage accuracy at snapshot time; either may be unknown (e.g.
/// the step-zero snapshot precedes any measurement).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SnapshotMetrics {
    pub loss: Option<f64>,
    pub stage_accuracy: Option<f64>,
}

/// Network parameters at one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    pub step: u64,
    pub stage: usize,
    pub metrics: SnapshotMetrics,
    pub params: RnnParameters<T>,
}

/// A stage handover: after the update at `step`, training continued in
/// `to_stage`. `introduced_class` is set when the new stage grew the
/// vocabulary by one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTransition {
    pub step: u64,
    pub to_stage: usize,
    pub introduced_class: Option<usize>,
    pub t_max: usize,
}

/// What each stage trained on; copied from the schedule so an archive is
/// self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMeta {
    pub vocabulary: Vec<usize>,
    pub t_max: usize,
}

#[derive(Debug, Clone)]
pub struct CheckpointArchive<T> {
    pub run_seed: u64,
    pub cadence: u64,
    pub dense_cadence: u64,
    pub stages: Vec<StageMeta>,
    snapshots: Vec<Snapshot<T>>,
    transitions: Vec<StageTransition>,
}

impl<T: Real> CheckpointArchive<T> {
    pub fn new(run_seed: u64, cadence: u64, dense_cadence: u64, stages: Vec<StageMeta>) -> Self {
        assert!(cadence > 0 && dense_cadence > 0, "snapshot cadences must be positive");
        CheckpointArchive { run_seed, cadence, dense_cadence, stages, snapshots: Vec::new(), transitions: Vec::new() }
    }

    pub fn snapshots(&self) -> &[Snapshot<T>] {
        &self.snapshots
    }

    pub fn transitions(&self) -> &[StageTransition] {
        &self.transitions
    }

    /// Insert keeping steps strictly increasing; a snapshot already present
    /// at the same step is kept and the new one dropped.
    pub fn add_snapshot(&mut self, snap: Snapshot<T>) {
        match self.snapshots.binary_search_by_key(&snap.step, |s| s.step) {
            Ok(_) => {}
            Err(pos) => self.snapshots.insert(pos, snap),
        }
    }

    pub fn add_transition(&mut self, tr: StageTransition) -> Result<()> {
        if let Some(last) = self.transitions.last() {
            if tr.step <= last.step {
                return Err(Error::Checkpoint(format!(
                    "transition at step {} does not follow the previous one at {}",
                    tr.step, last.step
                )));
            }
        }
        if tr.to_stage >= self.stages.len() {
            return Err(Error::Checkpoint(format!("transition targets unknown stage {}", tr.to_stage)));
        }
        self.transitions.push(tr);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn final_snapshot(&self) -> Option<&Snapshot<T>> {
        self.snapshots.last()
    }

    pub fn final_step(&self) -> u64 {
        self.snapshots.last().map_or(0, |s| s.step)
    }

    /// Snapshot closest to `step` (ties resolve to the earlier one).
    pub fn nearest_snapshot(&self, step: u64) -> Option<&Snapshot<T>> {
        if self.snapshots.is_empty() {
            return None;
        }
        let pos = self.snapshots.partition_point(|s| s.step < step);
        let candidates = [pos.checked_sub(1), (pos < self.snapshots.len()).then_some(pos)];
        candidates
            .into_iter()
            .flatten()
            .map(|i| &self.snapshots[i])
            .min_by_key(|s| s.step.abs_diff(step))
    }

    /// Snapshot within `tolerance` steps of `step`, or [`Error::MissingSnapshot`].
    pub fn snapshot_within(&self, step: u64, tolerance: u64) -> Result<&Snapshot<T>> {
        self.nearest_snapshot(step)
            .filter(|s| s.step.abs_diff(step) <= tolerance)
            .ok_or(Error::MissingSnapshot { step, tolerance })
    }

    /// All snapshots with `start <= step <= end`, in step order.
    pub fn snapshots_between(&self, start: u64, end: u64) -> &[Snapshot<T>] {
        let lo = self.snapshots.partition_point(|s| s.step < start);
        let hi = self.snapshots.partition_point(|s| s.step <= end);
        &self.snapshots[lo..hi]
    }

    /// The `(class, step)` pairs at which the vocabulary grew.
    pub fn class_introductions(&self) -> Vec<(usize, u64)> {
        self.transitions
            .iter()
            .filter_map(|t| t.introduced_class.map(|c| (c, t.step)))
            .collect()
    }

    /// Classes trained before the transition at `intro_step`.
    pub fn classes_before(&self, intro_step: u64) -> Option<&[usize]> {
        let tr = self.transitions.iter().find(|t| t.step == intro_step)?;
        let prev_stage = tr.to_stage.checked_sub(1)?;
        Some(&self.stages[prev_stage].vocabulary)
    }

    /// Write the archive to a directory, creating it if needed.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut index_entries = Vec::with_capacity(self.snapshots.len());
        for snap in &self.snapshots {
            let file = format!("snap_{:010}.bin", snap.step);
            write_snapshot_file(&dir.join(&file), snap)?;
            index_entries.push(IndexEntry { step: snap.step, stage: snap.stage, metrics: snap.metrics, file });
        }
        let index = ArchiveIndex {
            format_version: FORMAT_VERSION,
            run_seed: self.run_seed,
            cadence: self.cadence,
            dense_cadence: self.dense_cadence,
            stages: self.stages.clone(),
            transitions: self.transitions.clone(),
            snapshots: index_entries,
        };
        let json = serde_json::to_string_pretty(&index)
            .map_err(|e| Error::Checkpoint(format!("index serialization: {e}")))?;
        fs::write(dir.join("archive.json"), json)?;
        Ok(())
    }

    /// Read an archive written by [`write_dir`].
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let index_path = dir.join("archive.json");
        let json = fs::read_to_string(&index_path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", index_path.display())))?;
        let index: ArchiveIndex =
            serde_json::from_str(&json).map_err(|e| Error::Checkpoint(format!("{}: {e}", index_path.display())))?;
        if index.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported archive format version {} (this build reads {FORMAT_VERSION})",
                index.format_version
            )));
        }
        let mut archive = CheckpointArchive::new(index.run_seed, index.cadence, index.dense_cadence, index.stages);
        archive.transitions = index.transitions;
        for entry in index.snapshots {
            let (step, stage, params) = read_snapshot_file(&dir.join(&entry.file))?;
            if step != entry.step || stage != entry.stage {
                return Err(Error::Checkpoint(format!(
                    "{}: header says step {step} stage {stage}, index says step {} stage {}",
                    entry.file, entry.step, entry.stage
                )));
            }
            archive.add_snapshot(Snapshot { step, stage, metrics: entry.metrics, params });
        }
        Ok(archive)
    }
}

const FORMAT_VERSION: u32 = 1;
const SNAPSHOT_MAGIC: &[u8; 8] = b"MEMSNAP1";

#[derive(Serialize, Deserialize)]
struct ArchiveIndex {
    format_version: u32,
    run_seed: u64,
    cadence: u64,
    dense_cadence: u64,
    stages: Vec<StageMeta>,
    transitions: Vec<StageTransition>,
    snapshots: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    step: u64,
    stage: usize,
    #[serde(flatten)]
    metrics: SnapshotMetrics,
    file: String,
}

fn write_snapshot_file<T: Real>(path: &Path, snap: &Snapshot<T>) -> Result<()> {
    let p = &snap.params;
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u8(match p.unit_type() {
        UnitType::Gru => 0,
        UnitType::Lstm => 1,
    })?;
    w.write_u8(match p.lstm_output {
        LstmOutput::PrevCell => 0,
        LstmOutput::NewCell => 1,
    })?;
    w.write_u16::<LittleEndian>(0)?;
    w.write_u32::<LittleEndian>(p.d as u32)?;
    w.write_u32::<LittleEndian>(p.n_in as u32)?;
    w.write_u32::<LittleEndian>(p.n_out as u32)?;
    w.write_u64::<LittleEndian>(snap.step)?;
    w.write_u32::<LittleEndian>(snap.stage as u32)?;
    let flat = p.to_flat();
    w.write_u64::<LittleEndian>(flat.len() as u64)?;
    for v in flat {
        w.write_f64::<LittleEndian>(v.as_f64())?;
    }
    Ok(())
}

fn read_snapshot_file<T: Real>(path: &Path) -> Result<(u64, usize, RnnParameters<T>)> {
    let mut r = std::io::BufReader::new(
        fs::File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?,
    );
    let bad = |what: &str| Error::Checkpoint(format!("{}: {what}", path.display()));

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(bad("wrong magic bytes"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported snapshot version {version}")));
    }
    let unit = match r.read_u8().map_err(|_| bad("truncated header"))? {
        0 => UnitType::Gru,
        1 => UnitType::Lstm,
        other => return Err(bad(&format!("unknown unit tag {other}"))),
    };
    let lstm_output = match r.read_u8().map_err(|_| bad("truncated header"))? {
        0 => LstmOutput::PrevCell,
        1 => LstmOutput::NewCell,
        other => return Err(bad(&format!("unknown output-variant tag {other}"))),
    };
    let _pad = r.read_u16::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    let d = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    let n_in = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    let n_out = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    let step = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    let stage = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    if d == 0 || n_in == 0 || n_out == 0 {
        return Err(bad("zero dimension in header"));
    }

    let mut params = RnnParameters::<T>::zeros(unit, d, n_in, n_out, lstm_output);
    let n_values = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    if n_values != params.n_params() {
        return Err(bad(&format!("{} values for a network with {} parameters", n_values, params.n_params())));
    }
    let mut flat = Vec::with_capacity(n_values);
    for _ in 0..n_values {
        flat.push(T::of(r.read_f64::<LittleEndian>().map_err(|_| bad("truncated values"))?));
    }
    params.copy_from_flat(&flat);
    Ok((step, stage, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::init_params;

    fn snap(step: u64, stage: usize, seed: u64) -> Snapshot<f64> {
        Snapshot {
            step,
            stage,
            metrics: SnapshotMetrics { loss: Some(0.5 + step as f64), stage_accuracy: (step > 0).then_some(0.9) },
            params: init_params(UnitType::Gru, 3, 4, 3, LstmOutput::PrevCell, seed),
        }
    }

    fn archive_with_steps(steps: &[u64]) -> CheckpointArchive<f64> {
        let mut a = CheckpointArchive::new(7, 100, 20, vec![StageMeta { vocabulary: vec![0, 1], t_max: 6 }]);
        for &s in steps {
            a.add_snapshot(snap(s, 0, s));
        }
        a
    }

    #[test]
    fn snapshots_stay_sorted_and_deduped() {
        let a = archive_with_steps(&[300, 100, 200, 100]);
        let steps: Vec<u64> = a.snapshots().iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![100, 200, 300]);
        assert_eq!(a.final_step(), 300);
    }

    #[test]
    fn nearest_lookup_and_tolerance() {
        let a = archive_with_steps(&[0, 100, 200]);
        assert_eq!(a.nearest_snapshot(130).unwrap().step, 100);
        assert_eq!(a.nearest_snapshot(170).unwrap().step, 200);
        assert_eq!(a.nearest_snapshot(150).unwrap().step, 100, "ties go to the earlier step");
        assert_eq!(a.snapshot_within(160, 40).unwrap().step, 200);
        assert!(matches!(a.snapshot_within(160, 10), Err(Error::MissingSnapshot { step: 160, tolerance: 10 })));
    }

    #[test]
    fn transitions_must_advance_in_time() {
        let mut a = CheckpointArchive::<f64>::new(
            1,
            100,
            20,
            vec![
                StageMeta { vocabulary: vec![0, 1], t_max: 20 },
                StageMeta { vocabulary: vec![0, 1, 2], t_max: 20 },
            ],
        );
        a.add_transition(StageTransition { step: 500, to_stage: 1, introduced_class: Some(2), t_max: 20 }).unwrap();
        assert!(a.add_transition(StageTransition { step: 500, to_stage: 1, introduced_class: None, t_max: 20 }).is_err());
        assert!(a.add_transition(StageTransition { step: 900, to_stage: 5, introduced_class: None, t_max: 20 }).is_err());
        assert_eq!(a.class_introductions(), vec![(2, 500)]);
        assert_eq!(a.classes_before(500), Some(&[0usize, 1][..]));
    }

    #[test]
    fn disk_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = CheckpointArchive::new(
            9,
            50,
            10,
            vec![
                StageMeta { vocabulary: vec![0, 1], t_max: 6 },
                StageMeta { vocabulary: vec![0, 1, 2], t_max: 6 },
            ],
        );
        a.add_snapshot(Snapshot {
            step: 0,
            stage: 0,
            metrics: SnapshotMetrics::default(),
            params: init_params::<f64>(UnitType::Lstm, 4, 5, 4, LstmOutput::NewCell, 3),
        });
        a.add_snapshot(snap(50, 0, 4));
        a.add_snapshot(snap(100, 1, 5));
        a.add_transition(StageTransition { step: 60, to_stage: 1, introduced_class: Some(2), t_max: 6 }).unwrap();

        a.write_dir(dir.path()).unwrap();
        let b = CheckpointArchive::<f64>::read_dir(dir.path()).unwrap();
        assert_eq!(b.run_seed, 9);
        assert_eq!(b.cadence, 50);
        assert_eq!(b.dense_cadence, 10);
        assert_eq!(b.stages, a.stages);
        assert_eq!(b.transitions(), a.transitions());
        assert_eq!(b.snapshots().len(), 3);
        for (x, y) in a.snapshots().iter().zip(b.snapshots()) {
            assert_eq!(x, y, "snapshot at step {} must round-trip bit-exactly", x.step);
        }
    }

    #[test]
    fn corrupted_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let a = archive_with_steps(&[0, 100]);
        a.write_dir(dir.path()).unwrap();

        // Truncate one snapshot.
        let victim = dir.path().join("snap_0000000100.bin");
        let bytes = fs::read(&victim).unwrap();
        fs::write(&victim, &bytes[..bytes.len() / 2]).unwrap();
        let err = CheckpointArchive::<f64>::read_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        // And a missing index.
        fs::remove_file(dir.path().join("archive.json")).unwrap();
        assert!(CheckpointArchive::<f64>::read_dir(dir.path()).is_err());
    }
}
