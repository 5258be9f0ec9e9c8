//! The pipeline steps behind each subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use coolkws::audio::load_any_mono;
use coolkws::dataset::{build_task, ingest_corpus, read_json, write_json, TaskSpec};
use coolkws::dsp::{FeatureWindow, MfccExtractor};
use coolkws::model::{checkpoint_bytes, parse_checkpoint, save_checkpoint, ModelParams};
use coolkws::online::{read_run_log, run_features, stream_features, write_run_log, RunLog, RunMeta, RunMode};
use coolkws::report::{
    average_curves, curve_csv, cumulative_curve, scenario_accuracy, sequential_gains_across, table1_csv,
    table1_text, table2, table2_csv, table2_text, table3_csv, table3_text, ScenarioAccuracy, Table1Row,
};
use coolkws::seed::{derive_seed, rng_for};
use coolkws::stream::{
    build_sequential_stream, concat_with_labels, estimate_word_extent, load_stream, mix_noise, save_stream,
    LabeledStream, Scenario, StreamClip,
};
use coolkws::trainer::{pretrain, read_history_csv, write_history_csv, TrainConfig};
use coolkws::{AudioClip, Label};
use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::exit::{data, usage};

/// Name of the stream that chains every scenario.
pub const SEQUENTIAL: &str = "Sequential";

/// Where every artifact lives under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn task(&self, word: &str) -> PathBuf {
        self.root.join("tasks").join(format!("{word}.json"))
    }

    pub fn checkpoint(&self, word: &str) -> PathBuf {
        self.root.join("models").join(format!("{word}.ckpt"))
    }

    pub fn history(&self, word: &str) -> PathBuf {
        self.root.join("models").join(format!("{word}.history.csv"))
    }

    pub fn stream(&self, word: &str, name: &str) -> PathBuf {
        self.root.join("streams").join(word).join(format!("{name}.wav"))
    }

    pub fn run(&self, word: &str, stream: &str, mode: RunMode) -> PathBuf {
        self.root.join("runs").join(word).join(format!("{stream}.{}.jsonl", mode.name()))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// Options shared by every step.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub words: Option<Vec<String>>,
    pub force: bool,
}

impl Common {
    fn words(&self, cfg: &ExperimentConfig) -> Vec<String> {
        self.words.clone().unwrap_or_else(|| cfg.words.clone())
    }
}

fn guard(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    if let Some(p) = paths.iter().find(|p| p.exists()) {
        return Err(usage(format!("{} already exists; pass --force to overwrite", p.display())));
    }
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn load_task(layout: &Layout, word: &str) -> Result<TaskSpec> {
    let path = layout.task(word);
    if !path.exists() {
        return Err(usage(format!("no task for {word:?} at {}; run prepare-data first", path.display())));
    }
    Ok(read_json(&path)?)
}

/// Scans the corpus and writes the manifest plus one task per word.
pub fn prepare_data(cfg: &ExperimentConfig, opts: &Common) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.output_dir);
    let words = opts.words(cfg);
    let mut outputs = vec![layout.manifest()];
    outputs.extend(words.iter().map(|w| layout.task(w)));
    guard(&outputs, opts.force)?;

    let lists = [cfg.validation_list(), cfg.testing_list()];
    for l in &lists {
        if !l.exists() {
            log::warn!("{} not found; its clips will count as training data", l.display());
        }
    }
    let existing = |p: &PathBuf| p.exists().then(|| p.clone());
    let manifest = ingest_corpus(
        &cfg.gsc_root,
        existing(&lists[0]).as_deref(),
        existing(&lists[1]).as_deref(),
    )?;
    log::info!("{} clips of {} words", manifest.entries.len(), manifest.words().len());
    create_parent(&layout.task("x"))?;
    write_json(&manifest, &layout.manifest())?;
    for w in &words {
        let task = build_task(&manifest, w, cfg.holdout_size, derive_seed(cfg.seed, "dataset"))
            .with_context(|| format!("building the task for {w:?}"))?;
        log::info!(
            "{w}: {} train, {} validation, {} test, {} hold-out",
            task.train.len(),
            task.validation.len(),
            task.test.len(),
            task.holdout.len()
        );
        write_json(&task, &layout.task(w))?;
    }
    Ok(outputs)
}

/// Trains the base model of each task.
pub fn pretrain_models(cfg: &ExperimentConfig, opts: &Common) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.output_dir);
    let words = opts.words(cfg);
    let tasks = words
        .iter()
        .map(|w| load_task(&layout, w))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<PathBuf> = words
        .iter()
        .flat_map(|w| [layout.checkpoint(w), layout.history(w)])
        .collect();
    guard(&outputs, opts.force)?;
    create_parent(&layout.checkpoint("x"))?;
    for (w, task) in words.iter().zip(&tasks) {
        let train = TrainConfig {
            seed: derive_seed(cfg.seed, &format!("pretrain/{w}")),
            ..cfg.train.clone()
        };
        let out = pretrain(task, &cfg.dsp, &train, cfg.arch).with_context(|| format!("pretraining {w:?}"))?;
        save_checkpoint(&out.params, &layout.checkpoint(w))?;
        write_history_csv(&out.history, &layout.history(w))?;
        if let Some(best) = out.history.get(out.best_epoch.max(1) - 1) {
            log::info!(
                "{w}: best epoch {} of {}, val loss {:.4}, val acc {:.4}",
                out.best_epoch,
                out.history.len(),
                best.val_loss,
                best.val_acc
            );
        }
    }
    Ok(outputs)
}

/// Parses a scenario or stream name; `Sequential` is accepted when `allow_sequential`.
pub fn parse_stream_name(name: &str, allow_sequential: bool) -> Result<String> {
    if allow_sequential && name.eq_ignore_ascii_case(SEQUENTIAL) {
        return Ok(SEQUENTIAL.to_string());
    }
    match Scenario::parse(name) {
        Some(s) => Ok(s.name().to_string()),
        None => Err(usage(format!(
            "unknown scenario {name:?}; expected one of Clean, BabyCrying, GlassBreak, GunShot{}",
            if allow_sequential { ", Sequential" } else { "" }
        ))),
    }
}

/// One noise clip per recording or folder of recordings, concatenated in name order.
pub fn load_noise(path: &Path) -> Result<AudioClip> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .collect();
        v.sort();
        v
    } else if path.exists() {
        vec![path.to_path_buf()]
    } else {
        return Err(usage(format!("noise path {} does not exist", path.display())));
    };
    if files.is_empty() {
        return Err(data(format!("no WAV files under {}", path.display())));
    }
    let mut samples = Vec::new();
    for f in &files {
        samples.extend(load_any_mono(f)?.samples);
    }
    Ok(AudioClip::new(samples, None, path.display().to_string())?)
}

/// The test partition as stream clips, in a seeded shuffled order.
fn test_clips(task: &TaskSpec, seed: u64) -> Result<Vec<StreamClip>> {
    let mut clips: Vec<StreamClip> = task
        .load_raw(&task.test)?
        .into_iter()
        .map(|(clip, label)| StreamClip {
            word_extent: estimate_word_extent(&clip),
            clip,
            label,
        })
        .collect();
    clips.shuffle(&mut rng_for(seed, &format!("stream/{}/order", task.target_word)));
    Ok(clips)
}

/// Builds the requested per-scenario streams of each task and, when every
/// scenario is built, the sequential stream too.
pub fn build_streams(cfg: &ExperimentConfig, opts: &Common, names: Option<&[String]>) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.output_dir);
    let words = opts.words(cfg);
    let names: Vec<String> = match names {
        Some(n) => n.iter().map(|s| parse_stream_name(s, true)).collect::<Result<_>>()?,
        None => Scenario::ALL
            .iter()
            .map(|s| s.name().to_string())
            .chain([SEQUENTIAL.to_string()])
            .collect(),
    };
    let sequential = names.iter().any(|n| n == SEQUENTIAL);
    let needed: Vec<Scenario> = Scenario::ALL
        .into_iter()
        .filter(|s| sequential || names.iter().any(|n| n == s.name()))
        .collect();
    let mut noise: BTreeMap<&str, AudioClip> = BTreeMap::new();
    for s in &needed {
        if *s == Scenario::Clean {
            continue;
        }
        let Some(p) = cfg.noise_path(*s) else {
            return Err(usage(format!("config has no dcase entry for {}", s.name())));
        };
        noise.insert(s.name(), load_noise(p).with_context(|| format!("loading {} noise", s.name()))?);
    }
    let tasks = words
        .iter()
        .map(|w| load_task(&layout, w))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<PathBuf> = words
        .iter()
        .flat_map(|w| names.iter().map(move |n| (w, n)))
        .map(|(w, n)| layout.stream(w, n))
        .collect();
    guard(&outputs, opts.force)?;

    for (w, task) in words.iter().zip(&tasks) {
        let clean = concat_with_labels(&test_clips(task, cfg.seed)?, &cfg.stream)?;
        let mut built: BTreeMap<&str, LabeledStream> = BTreeMap::new();
        for s in &needed {
            let stream = match noise.get(s.name()) {
                None => clean.clone(),
                Some(n) => {
                    let mixed = mix_noise(&clean, n, cfg.stream.snr_db, derive_seed(cfg.seed, &format!("stream/{w}/{}", s.name())))?;
                    log::info!(
                        "{w}/{}: noise gain {:.4}, {} clipped samples",
                        s.name(),
                        mixed.gain,
                        mixed.clipped
                    );
                    mixed.stream
                }
            };
            built.insert(s.name(), build_sequential_stream(&[(s.name().to_string(), stream)])?);
        }
        create_parent(&layout.stream(w, "x"))?;
        for n in &names {
            let stream = if n == SEQUENTIAL {
                let parts: Vec<(String, LabeledStream)> = Scenario::SEQUENTIAL
                    .iter()
                    .map(|s| (s.name().to_string(), built[s.name()].clone()))
                    .collect();
                build_sequential_stream(&parts)?
            } else {
                built[n.as_str()].clone()
            };
            log::info!("{w}/{n}: {} windows", stream.windows.len());
            save_stream(&stream, &layout.stream(w, n))?;
        }
    }
    Ok(outputs)
}

fn holdout_features(task: &TaskSpec, ex: &MfccExtractor) -> Result<Vec<(FeatureWindow, Label)>> {
    task.load(&task.holdout)?
        .into_iter()
        .map(|(c, y)| Ok((ex.extract(&c.samples, 0)?, y)))
        .collect()
}

fn streams_on_disk(layout: &Layout, word: &str) -> Vec<String> {
    let mut names: Vec<String> = Scenario::ALL.iter().map(|s| s.name().to_string()).collect();
    names.push(SEQUENTIAL.into());
    names.retain(|n| layout.stream(word, n).exists());
    names
}

/// Runs each learner over each stream of each task, always from the task's base model.
pub fn run_learners(
    cfg: &ExperimentConfig,
    opts: &Common,
    names: Option<&[String]>,
    modes: Option<&[RunMode]>,
) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.output_dir);
    let words = opts.words(cfg);
    let modes = modes.map_or_else(|| cfg.online.modes.clone(), |m| m.to_vec());
    let requested: Option<Vec<String>> = names
        .map(|n| n.iter().map(|s| parse_stream_name(s, true)).collect::<Result<_>>())
        .transpose()?;

    let mut plan = Vec::new();
    for w in &words {
        let task = load_task(&layout, w)?;
        let ckpt = layout.checkpoint(w);
        if !ckpt.exists() {
            return Err(usage(format!("no model for {w:?} at {}; run pretrain first", ckpt.display())));
        }
        let streams = requested.clone().unwrap_or_else(|| streams_on_disk(&layout, w));
        if streams.is_empty() {
            return Err(usage(format!("no streams for {w:?}; run build-stream first")));
        }
        for s in &streams {
            if !layout.stream(w, s).exists() {
                return Err(usage(format!("stream {s} of {w:?} not found; run build-stream first")));
            }
        }
        if modes.contains(&RunMode::Cool) && task.holdout.is_empty() {
            return Err(usage(format!("mode cool needs a hold-out set, task {w:?} has none")));
        }
        plan.push((w, task, ckpt, streams));
    }
    let mut outputs = Vec::new();
    for (w, _, _, streams) in &plan {
        for s in streams {
            outputs.extend(modes.iter().map(|m| layout.run(w, s, *m)));
        }
    }
    guard(&outputs, opts.force)?;

    let ex = MfccExtractor::new(&cfg.dsp)?;
    for (w, task, ckpt, streams) in plan {
        let bytes = fs::read(&ckpt)?;
        let m0: ModelParams<f32> = parse_checkpoint(&bytes)?;
        if m0.arch != cfg.arch {
            log::warn!("{w}: checkpoint architecture differs from the config; using the checkpoint's");
        }
        let hash = sha256_hex(&checkpoint_bytes(&m0));
        let holdout = holdout_features(&task, &ex)?;
        create_parent(&layout.run(w, "x", RunMode::Frozen))?;
        for s in &streams {
            let stream = load_stream(&layout.stream(w, s))?;
            let items = stream_features(&stream, &cfg.dsp)?;
            for &mode in &modes {
                let mut out = run_features(&m0, Some(&holdout), &items, &stream.scenarios, mode, &cfg.online.learner)?;
                out.log.meta = RunMeta {
                    task: w.clone(),
                    stream: s.clone(),
                    checkpoint_hash: hash.clone(),
                };
                let kept = out.log.decisions.iter().filter(|d| d.consolidated).count();
                log::info!(
                    "{w}/{s}/{}: accuracy {:.4}, {kept} of {} updates kept",
                    mode.name(),
                    out.log.accuracy(),
                    out.log.decisions.len()
                );
                write_run_log(&out.log, &layout.run(w, s, mode))?;
            }
        }
    }
    Ok(outputs)
}

fn find_logs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "jsonl") {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes Table 1/2/3-style outputs and cumulative-accuracy curves from run
/// logs. Tables whose inputs are missing are skipped with a warning.
pub fn report(cfg: &ExperimentConfig, opts: &Common, logs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.output_dir);
    let dir = layout.report();
    guard(&[dir.clone()], opts.force)?;
    let paths = if logs.is_empty() {
        find_logs(&layout.root.join("runs"))?
    } else {
        logs.to_vec()
    };
    if paths.is_empty() {
        return Err(usage("no run logs to report on; run the learners first"));
    }
    let logs: Vec<RunLog> = paths
        .iter()
        .map(|p| read_run_log(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<_>>()?;
    fs::create_dir_all(dir.join("curves"))?;
    let mut written = Vec::new();
    let (conv, kind) = (cfg.report.gain, cfg.report.std);
    let mut emit = |name: &str, text: &str| -> Result<()> {
        let p = dir.join(name);
        write(&p, text)?;
        written.push(p);
        Ok(())
    };

    let mut t1 = Vec::new();
    for w in opts.words(cfg) {
        let h = layout.history(&w);
        if !h.exists() {
            continue;
        }
        let history = read_history_csv(&h)?;
        if let Some(best) = history.iter().min_by(|a, b| a.val_loss.total_cmp(&b.val_loss)) {
            t1.push(Table1Row { word: w, metrics: *best });
        }
    }
    if t1.is_empty() {
        log::warn!("no training histories; skipping table 1");
    } else {
        emit("table1.csv", &table1_csv(&t1))?;
        emit("table1.txt", &table1_text(&t1))?;
    }

    let isolated: Vec<&RunLog> = logs.iter().filter(|l| l.meta.stream != SEQUENTIAL).collect();
    let mut rows: Vec<ScenarioAccuracy> = isolated.iter().flat_map(|l| scenario_accuracy(l)).collect();
    // table rows follow the canonical scenario order, whatever order the logs came in
    rows.sort_by_key(|r| Scenario::ALL.iter().position(|s| s.name() == r.scenario).unwrap_or(usize::MAX));
    let mut acc = String::from("task,stream,mode,scenario,segment,correct,windows,accuracy\n");
    for l in &logs {
        for r in scenario_accuracy(l) {
            acc.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.task,
                l.meta.stream,
                r.mode.name(),
                r.scenario,
                r.segment,
                r.correct,
                r.window_count,
                r.accuracy
            ));
        }
    }
    emit("accuracy.csv", &acc)?;
    let pick = |m: RunMode| rows.iter().filter(|r| r.mode == m).cloned().collect::<Vec<_>>();
    let (base, cool) = (pick(RunMode::Frozen), pick(RunMode::Cool));
    if base.is_empty() || cool.is_empty() {
        log::warn!("table 2 needs frozen and cool runs on per-scenario streams; skipped");
    } else {
        let t2 = table2(&base, &cool, kind, conv)?;
        emit("table2.csv", &table2_csv(&t2))?;
        emit("table2.txt", &table2_text(&t2, kind, conv))?;
    }

    let seq = |m: RunMode| -> BTreeMap<&str, &RunLog> {
        logs.iter()
            .filter(|l| l.meta.stream == SEQUENTIAL && l.mode == m)
            .map(|l| (l.meta.task.as_str(), l))
            .collect()
    };
    let (seq_base, seq_cool) = (seq(RunMode::Frozen), seq(RunMode::Cool));
    let pairs: Vec<(RunLog, RunLog)> = seq_base
        .iter()
        .filter_map(|(t, b)| seq_cool.get(t).map(|c| ((*b).clone(), (*c).clone())))
        .collect();
    if pairs.is_empty() {
        log::warn!("table 3 needs frozen and cool runs on sequential streams; skipped");
    } else {
        let t3 = sequential_gains_across(&pairs, conv)?;
        emit("table3.csv", &table3_csv(&t3))?;
        emit("table3.txt", &table3_text(&t3, conv))?;
    }

    for mode in RunMode::ALL {
        let runs = seq(mode);
        if runs.is_empty() {
            continue;
        }
        let mut curves = Vec::new();
        for (task, l) in &runs {
            let c = cumulative_curve(l)?;
            emit(&format!("curves/{task}.{}.csv", mode.name()), &curve_csv(&c))?;
            curves.push(c);
        }
        emit(&format!("curves/mean.{}.csv", mode.name()), &curve_csv(&average_curves(&curves)?))?;
    }
    Ok(written)
}
