//! Corpus manifests and binary keyword tasks.
//!
//! A corpus is a directory of word-named subdirectories holding 16 kHz mono
//! 16-bit WAV files, split into train/validation/test by two list files of
//! relative paths (the Speech Commands convention). A [`TaskSpec`] turns a
//! manifest into a balanced target-vs-rest problem for one keyword, plus the
//! hold-out set the online learner checks its updates against.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use hound::{SampleFormat, WavReader};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use crate::audio::load_clip;
use crate::seed::rng_for;
use crate::{AudioClip, Error, Label, Result, SAMPLE_RATE};

pub const SCHEMA_VERSION: u32 = 1;

/// The eight keywords of the evaluation protocol.
pub const DEFAULT_WORDS: [&str; 8] = ["down", "go", "left", "no", "right", "stop", "up", "yes"];

/// Default hold-out size: 128 clips per class.
pub const DEFAULT_HOLDOUT_SIZE: usize = 256;

/// Every clip is fitted to this many samples (1 s) before feature extraction.
pub const CLIP_LEN: usize = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the corpus root, `/`-separated.
    pub path: String,
    pub word: String,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub path: String,
    pub word: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub schema_version: u32,
    pub target_word: String,
    pub root: PathBuf,
    pub seed: u64,
    pub train: Vec<TaskEntry>,
    pub validation: Vec<TaskEntry>,
    pub test: Vec<TaskEntry>,
    pub holdout: Vec<TaskEntry>,
}

fn read_list(path: Option<&Path>) -> Result<HashSet<String>> {
    let Some(path) = path else {
        return Ok(HashSet::new());
    };
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .map(|l| l.replace('\\', "/"))
        .collect())
}

fn check_header(path: &Path) -> Result<()> {
    let reader = WavReader::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::format(
            path,
            format!("sample rate {} Hz, expected {SAMPLE_RATE} Hz", spec.sample_rate),
        ));
    }
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return Err(Error::format(path, "expected 16-bit PCM mono"));
    }
    Ok(())
}

/// Scans a corpus directory into a manifest.
///
/// Subdirectories whose names start with `_` or `.` (such as Speech Commands'
/// `_background_noise_`) are skipped. Files named in neither list go to train.
pub fn ingest_corpus(root: &Path, validation_list: Option<&Path>, test_list: Option<&Path>) -> Result<Manifest> {
    if !root.is_dir() {
        return Err(Error::CorpusNotFound(root.to_path_buf()));
    }
    let validation = read_list(validation_list)?;
    let test = read_list(test_list)?;

    let mut words: Vec<(String, PathBuf)> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .filter(|(name, _)| !name.starts_with('_') && !name.starts_with('.'))
        .collect();
    words.sort();

    let mut files = Vec::new();
    for (word, dir) in &words {
        let mut names: Vec<String> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.to_ascii_lowercase().ends_with(".wav"))
            .collect();
        names.sort();
        files.extend(names.into_iter().map(|n| (word.clone(), format!("{word}/{n}"))));
    }

    files
        .par_iter()
        .try_for_each(|(_, rel)| check_header(&root.join(rel)))?;

    let entries = files
        .into_iter()
        .map(|(word, path)| {
            let partition = match (validation.contains(&path), test.contains(&path)) {
                (true, true) => {
                    return Err(Error::Config(format!("{path} is listed as both validation and test")))
                }
                (true, false) => Partition::Validation,
                (false, true) => Partition::Test,
                (false, false) => Partition::Train,
            };
            Ok(ManifestEntry { path, word, partition })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Manifest {
        schema_version: SCHEMA_VERSION,
        root: root.to_path_buf(),
        entries,
    })
}

impl Manifest {
    pub fn words(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.word.as_str()).collect()
    }

    fn partition(&self, p: Partition) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.partition == p)
    }
}

fn entry(e: &ManifestEntry, label: Label) -> TaskEntry {
    TaskEntry {
        path: e.path.clone(),
        word: e.word.clone(),
        label,
    }
}

fn balanced_partition(manifest: &Manifest, word: &str, part: Partition, seed: u64) -> Result<Vec<TaskEntry>> {
    let mut positives: Vec<&ManifestEntry> = manifest.partition(part).filter(|e| e.word == word).collect();
    let mut pool: Vec<&ManifestEntry> = manifest.partition(part).filter(|e| e.word != word).collect();
    positives.sort_by(|a, b| a.path.cmp(&b.path));
    pool.sort_by(|a, b| a.path.cmp(&b.path));
    if pool.len() < positives.len() {
        return Err(Error::Capacity(format!(
            "{} partition has {} clips of {word:?} but only {} other clips",
            part.name(),
            positives.len(),
            pool.len()
        )));
    }
    let mut rng = rng_for(seed, &format!("task/{word}/{}", part.name()));
    pool.shuffle(&mut rng);
    let mut out: Vec<TaskEntry> = positives
        .iter()
        .map(|e| entry(e, Label::Target))
        .chain(pool[..positives.len()].iter().map(|e| entry(e, Label::NonTarget)))
        .collect();
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Builds the balanced binary task for `target_word`.
///
/// Negatives are drawn without replacement from every other word in the same
/// partition. The hold-out set is a balanced subsample of validation.
pub fn build_task(manifest: &Manifest, target_word: &str, holdout_size: usize, seed: u64) -> Result<TaskSpec> {
    if !manifest.entries.iter().any(|e| e.word == target_word) {
        return Err(Error::UnknownKeyword(target_word.to_string()));
    }
    let train = balanced_partition(manifest, target_word, Partition::Train, seed)?;
    let validation = balanced_partition(manifest, target_word, Partition::Validation, seed)?;
    let test = balanced_partition(manifest, target_word, Partition::Test, seed)?;

    let want_pos = holdout_size.div_ceil(2);
    let want_neg = holdout_size / 2;
    let mut pos: Vec<&TaskEntry> = validation.iter().filter(|e| e.label == Label::Target).collect();
    let mut neg: Vec<&TaskEntry> = validation.iter().filter(|e| e.label == Label::NonTarget).collect();
    if pos.len() < want_pos || neg.len() < want_neg {
        return Err(Error::Capacity(format!(
            "hold-out of {holdout_size} needs {want_pos}+{want_neg} validation clips, have {}+{}",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = rng_for(seed, &format!("task/{target_word}/holdout"));
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut holdout: Vec<TaskEntry> = pos[..want_pos]
        .iter()
        .chain(&neg[..want_neg])
        .map(|e| (*e).clone())
        .collect();
    holdout.sort_by(|a, b| a.path.cmp(&b.path));

    Ok(TaskSpec {
        schema_version: SCHEMA_VERSION,
        target_word: target_word.to_string(),
        root: manifest.root.clone(),
        seed,
        train,
        validation,
        test,
        holdout,
    })
}

impl TaskSpec {
    /// Loads the clips of one partition, fitted to 1 s, in partition order.
    pub fn load(&self, entries: &[TaskEntry]) -> Result<Vec<(AudioClip, Label)>> {
        entries
            .par_iter()
            .map(|e| Ok((load_clip(self.root.join(&e.path))?.fit_to_len(CLIP_LEN), e.label)))
            .collect()
    }

    /// Loads clips at their original length, for stream construction.
    pub fn load_raw(&self, entries: &[TaskEntry]) -> Result<Vec<(AudioClip, Label)>> {
        entries
            .par_iter()
            .map(|e| Ok((load_clip(self.root.join(&e.path))?, e.label)))
            .collect()
    }
}

/// Writes any schema-versioned document as pretty JSON.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Deserialize)]
struct Versioned {
    schema_version: Option<u32>,
}

/// Reads a JSON document, rejecting any `schema_version` other than 1.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    let v: Versioned = serde_json::from_str(&text)?;
    match v.schema_version {
        Some(SCHEMA_VERSION) => Ok(serde_json::from_str(&text)?),
        other => Err(Error::Schema(format!(
            "{}: schema_version {other:?}, expected {SCHEMA_VERSION}",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::write_clip_pcm16;

    fn write_wav(path: &Path, rate: u32) {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for i in 0..160 {
            w.write_sample((i * 10) as i16).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn six_files_no_lists_all_train() {
        let dir = tempfile::tempdir().unwrap();
        for w in ["a", "b"] {
            for i in 0..3 {
                write_wav(&dir.path().join(w).join(format!("{i}.wav")), 16000);
            }
        }
        let m = ingest_corpus(dir.path(), None, None).unwrap();
        assert_eq!(m.entries.len(), 6);
        assert!(m.entries.iter().all(|e| e.partition == Partition::Train));
    }

    #[test]
    fn eight_khz_file_is_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        write_wav(&dir.path().join("a/ok.wav"), 16000);
        write_wav(&dir.path().join("a/slow.wav"), 8000);
        let err = ingest_corpus(dir.path(), None, None).unwrap_err();
        assert!(err.to_string().contains("slow.wav"), "{err}");
    }

    #[test]
    fn missing_root() {
        let err = ingest_corpus(Path::new("/nonexistent/corpus"), None, None).unwrap_err();
        assert!(matches!(err, Error::CorpusNotFound(_)));
    }

    #[test]
    fn lists_assign_partitions_and_skip_background() {
        let dir = tempfile::tempdir().unwrap();
        write_wav(&dir.path().join("a/0.wav"), 16000);
        write_wav(&dir.path().join("a/1.wav"), 16000);
        write_wav(&dir.path().join("a/2.wav"), 16000);
        write_wav(&dir.path().join("_background_noise_/n.wav"), 16000);
        fs::write(dir.path().join("val.txt"), "a/1.wav\n").unwrap();
        fs::write(dir.path().join("test.txt"), "a/2.wav\n").unwrap();
        let m = ingest_corpus(
            dir.path(),
            Some(&dir.path().join("val.txt")),
            Some(&dir.path().join("test.txt")),
        )
        .unwrap();
        let parts: Vec<_> = m.entries.iter().map(|e| e.partition).collect();
        assert_eq!(parts, vec![Partition::Train, Partition::Validation, Partition::Test]);
    }

    fn synthetic_manifest() -> Manifest {
        let mut entries = Vec::new();
        for w in ["yes", "no", "up", "down"] {
            for (p, n) in [(Partition::Train, 10), (Partition::Validation, 6), (Partition::Test, 4)] {
                for i in 0..n {
                    entries.push(ManifestEntry {
                        path: format!("{w}/{:?}{i}.wav", p),
                        word: w.into(),
                        partition: p,
                    });
                }
            }
        }
        Manifest {
            schema_version: 1,
            root: PathBuf::from("/corpus"),
            entries,
        }
    }

    #[test]
    fn task_is_balanced_and_deterministic() {
        let m = synthetic_manifest();
        let t = build_task(&m, "yes", 8, 42).unwrap();
        for part in [&t.train, &t.validation, &t.test, &t.holdout] {
            let pos = part.iter().filter(|e| e.label == Label::Target).count();
            let neg = part.len() - pos;
            assert!(pos.abs_diff(neg) <= 1);
        }
        assert!(t
            .train
            .iter()
            .chain(&t.validation)
            .chain(&t.test)
            .filter(|e| e.label == Label::Target)
            .all(|e| e.word == "yes"));
        let val: HashSet<_> = t.validation.iter().map(|e| &e.path).collect();
        assert!(t.holdout.iter().all(|e| val.contains(&e.path)));
        let again = build_task(&m, "yes", 8, 42).unwrap();
        assert_eq!(
            serde_json::to_string(&t).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn task_errors() {
        let m = synthetic_manifest();
        assert!(matches!(build_task(&m, "left", 8, 0), Err(Error::UnknownKeyword(_))));
        assert!(matches!(build_task(&m, "yes", 100, 0), Err(Error::Capacity(_))));
    }

    #[test]
    fn json_rejects_other_schema_versions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let mut m = synthetic_manifest();
        write_json(&m, &p).unwrap();
        assert_eq!(read_json::<Manifest>(&p).unwrap(), m);
        m.schema_version = 2;
        write_json(&m, &p).unwrap();
        assert!(matches!(read_json::<Manifest>(&p), Err(Error::Schema(_))));
    }

    #[test]
    fn task_loads_fitted_clips() {
        let dir = tempfile::tempdir().unwrap();
        let clip = AudioClip::new(vec![0.25; 8000], None, "x").unwrap();
        fs::create_dir_all(dir.path().join("yes")).unwrap();
        write_clip_pcm16(&clip, dir.path().join("yes/a.wav")).unwrap();
        let task = TaskSpec {
            schema_version: 1,
            target_word: "yes".into(),
            root: dir.path().to_path_buf(),
            seed: 0,
            train: vec![TaskEntry {
                path: "yes/a.wav".into(),
                word: "yes".into(),
                label: Label::Target,
            }],
            validation: vec![],
            test: vec![],
            holdout: vec![],
        };
        let loaded = task.load(&task.train).unwrap();
        assert_eq!(loaded[0].0.len(), CLIP_LEN);
        assert_eq!(loaded[0].0.word.as_deref(), Some("yes"));
        assert_eq!(task.load_raw(&task.train).unwrap()[0].0.len(), 8000);
    }
}
