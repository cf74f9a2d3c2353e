use std::fs;
use std::path::{Path, PathBuf};

use beatrack::data::{
    read_manifest, synthesize_click_track, write_manifest, BeatAnnotation, ClickTrackSpec, ManifestEntry, MeterSequence,
    Piece, Split, TempoCurve,
};
use beatrack::dsp::AudioBuffer;
use beatrack::metrics::{evaluate_piece, EvalReport};
use beatrack::model::ModelConfig;
use beatrack::postprocess::BeatPredictions;
use beatrack::predict::BeatTracker;
use beatrack::trainer::{TrainConfig, Trainer};
use beatrack_tensor::Checkpoint;
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::failure::{Failure, Outcome};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for wav files, annotations and `manifest.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pieces: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Length of every piece in seconds.
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    /// Amplitude of the background noise.
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    /// One tempo curve per line as `time:bpm` knots; pieces cycle through
    /// them. Without it every piece gets a constant tempo in 60-180 BPM.
    #[arg(long)]
    tempo_curves: Option<PathBuf>,
    /// One meter sequence per line as `measure:beats` entries; pieces cycle
    /// through them. Without it every piece is in 3 or 4.
    #[arg(long)]
    meters: Option<PathBuf>,
    /// Number of pieces, taken from the end, assigned to the test split.
    #[arg(long, default_value_t = 0)]
    test: usize,
    /// Number of pieces, preceding the test pieces, assigned to the
    /// validation split.
    #[arg(long, default_value_t = 0)]
    valid: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// TOML file with optional `[model]` and `[train]` tables. Required
    /// unless resuming.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from the latest checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// A single mono 22050 Hz wav file; `--out` names the annotation file.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    audio: Option<PathBuf>,
    /// A manifest; `--out` names a directory receiving `<piece_id>.beats`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Split of the manifest to process; all pieces when absent.
    #[arg(long, value_parser = parse_split, requires = "data")]
    split: Option<Split>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Manifest or directory of `.beats` reference files.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Directory of `<piece_id>.beats` estimates.
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Restrict a manifest reference to one split.
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split `{s}`, expected train, valid or test")),
    }
}

fn require_file(path: &Path, what: &str) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{what} `{}` does not exist", path.display())))
    }
}

fn parse_lines<T>(path: &Path, parse: impl Fn(&str) -> Result<T, String>) -> Outcome<Vec<T>> {
    require_file(path, "file")?;
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(parse(line).map_err(|e| Failure::usage(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    if out.is_empty() {
        return Err(Failure::usage(format!("{} has no entries", path.display())));
    }
    Ok(out)
}

fn pairs<A: std::str::FromStr, B: std::str::FromStr>(line: &str) -> Result<Vec<(A, B)>, String> {
    line.split_whitespace()
        .map(|tok| {
            let (a, b) = tok.split_once(':').ok_or_else(|| format!("expected `a:b`, got `{tok}`"))?;
            let a = a.parse().map_err(|_| format!("bad number `{a}`"))?;
            let b = b.parse().map_err(|_| format!("bad number `{b}`"))?;
            Ok((a, b))
        })
        .collect()
}

pub fn synth(args: SynthArgs) -> Outcome {
    if args.valid + args.test > args.pieces {
        return Err(Failure::usage("`--valid` plus `--test` exceeds `--pieces`"));
    }
    if !(args.duration > 0.0) {
        return Err(Failure::usage("`--duration` must be positive"));
    }
    let curves = match &args.tempo_curves {
        Some(p) => Some(parse_lines(p, |l| {
            TempoCurve::new(pairs(l)?).map_err(|e| e.to_string())
        })?),
        None => None,
    };
    let meters = match &args.meters {
        Some(p) => Some(parse_lines(p, |l| {
            MeterSequence::new(pairs(l)?).map_err(|e| e.to_string())
        })?),
        None => None,
    };
    fs::create_dir_all(&args.out)?;
    let mut entries = Vec::with_capacity(args.pieces);
    for i in 0..args.pieces {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        rng.set_stream(i as u64);
        let tempo = match &curves {
            Some(c) => c[i % c.len()].clone(),
            None => TempoCurve::constant(rng.random_range(60.0..180.0))?,
        };
        let meter = match &meters {
            Some(m) => m[i % m.len()].clone(),
            None => MeterSequence::constant(if rng.random_bool(0.5) { 3 } else { 4 })?,
        };
        let mut spec = ClickTrackSpec::new(args.duration, tempo, meter);
        spec.start_offset = rng.random_range(0.0..1.0);
        spec.noise = args.noise;
        let (audio, annotation) = synthesize_click_track(&spec, &mut rng)?;
        let id = format!("synth{i:04}");
        log::info!(
            "{id}: tempo {:?}, meter {:?}, offset {:.3} s, {} beats",
            spec.tempo.knots(),
            spec.meter.entries(),
            spec.start_offset,
            annotation.events().len()
        );
        let wav = args.out.join(format!("{id}.wav"));
        let beats = args.out.join(format!("{id}.beats"));
        audio.write_wav(&wav)?;
        annotation.write(&beats)?;
        let split = if i >= args.pieces - args.test {
            Split::Test
        } else if i >= args.pieces - args.test - args.valid {
            Split::Valid
        } else {
            Split::Train
        };
        entries.push(ManifestEntry {
            piece_id: id.clone(),
            wav_path: format!("{id}.wav").into(),
            beats_path: format!("{id}.beats").into(),
            split,
        });
    }
    write_manifest(args.out.join("manifest.csv"), &entries)?;
    println!("wrote {} pieces to {}", args.pieces, args.out.display());
    Ok(())
}

/// Contents of a training configuration file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn read_config(path: &Path) -> Outcome<RunConfig> {
    require_file(path, "config")?;
    let text = fs::read_to_string(path)?;
    let cfg: RunConfig =
        toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {}", path.display(), e.message())))?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

fn load_split(manifest: &[ManifestEntry], split: Split) -> Outcome<Vec<Piece>> {
    manifest
        .iter()
        .filter(|e| e.split == split)
        .map(|e| Piece::load(e).map_err(Failure::from))
        .collect()
}

fn latest_checkpoint(dir: &Path) -> Outcome<Option<(usize, PathBuf)>> {
    let mut best = None;
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let epoch = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("epoch")?.strip_suffix(".ckpt")?.parse::<usize>().ok());
        if let Some(e) = epoch {
            if best.as_ref().is_none_or(|(b, _)| e > *b) {
                best = Some((e, path));
            }
        }
    }
    Ok(best)
}

pub fn train(args: TrainArgs) -> Outcome {
    require_file(&args.data, "manifest")?;
    let manifest = read_manifest(&args.data)?;
    let occupied = args.out.exists() && fs::read_dir(&args.out)?.next().is_some();
    let mut trainer = if args.resume {
        let (epoch, path) = latest_checkpoint(&args.out)?
            .ok_or_else(|| Failure::usage(format!("no checkpoint to resume in {}", args.out.display())))?;
        let trainer = Trainer::resume(&Checkpoint::load(&path)?)?;
        if let Some(path) = &args.config {
            let cfg = read_config(path)?;
            if &cfg.model != trainer.model.config() || cfg.train != trainer.cfg {
                return Err(Failure::usage(format!(
                    "{} differs from the configuration of the run being resumed",
                    path.display()
                )));
            }
        }
        log::info!("resuming after epoch {epoch} from {}", path.display());
        trainer
    } else {
        if occupied {
            return Err(Failure::usage(format!(
                "{} already exists; pass --resume to continue it or choose a new directory",
                args.out.display()
            )));
        }
        let path = args
            .config
            .as_ref()
            .ok_or_else(|| Failure::usage("`--config` is required unless resuming"))?;
        let mut cfg = read_config(path)?;
        if let Some(seed) = args.seed {
            cfg.train.seed = seed;
        }
        let train = load_split(&manifest, Split::Train)?;
        if train.is_empty() {
            return Err(Failure::usage("the manifest has no training pieces"));
        }
        fs::create_dir_all(&args.out)?;
        let text = toml::to_string(&cfg).map_err(|e| Failure::runtime(e.to_string()))?;
        fs::write(args.out.join("config.toml"), text)?;
        Trainer::new(cfg.model, cfg.train, &train)?
    };
    let train = load_split(&manifest, Split::Train)?;
    let valid = load_split(&manifest, Split::Valid)?;
    log::info!(
        "{} training and {} validation pieces, {} trainable parameters, {} optimizer steps",
        train.len(),
        valid.len(),
        trainer.model.num_parameters(),
        trainer.total_steps()
    );
    trainer = trainer.with_output(&args.out);
    trainer.run(&train, &valid)?;
    let last = args.out.join(format!("epoch{}.ckpt", trainer.epochs_done()));
    println!("trained {} epochs; final checkpoint {}", trainer.epochs_done(), last.display());
    Ok(())
}

fn summary(id: &str, preds: &BeatPredictions, seconds: f64) -> String {
    format!(
        "{id}: {} beats, {} downbeats, {seconds:.2} s",
        preds.beats.len(),
        preds.downbeats.len()
    )
}

fn predict_file(tracker: &BeatTracker, id: &str, audio: &Path, out: &Path) -> Outcome<String> {
    require_file(audio, "audio file")?;
    let buffer = AudioBuffer::read_wav(audio)?;
    let preds = tracker.predict_audio(&buffer)?;
    BeatAnnotation::from_predictions(&preds)?.write(out)?;
    Ok(summary(id, &preds, buffer.duration()))
}

pub fn predict(args: PredictArgs) -> Outcome {
    require_file(&args.model, "checkpoint")?;
    let tracker = BeatTracker::load(&args.model)?;
    if let Some(audio) = &args.audio {
        println!("{}", predict_file(&tracker, &stem(audio), audio, &args.out)?);
        return Ok(());
    }
    let manifest_path = args.data.as_ref().expect("clap enforces --audio or --data");
    require_file(manifest_path, "manifest")?;
    let manifest = read_manifest(manifest_path)?;
    fs::create_dir_all(&args.out)?;
    for entry in manifest.iter().filter(|e| args.split.is_none_or(|s| e.split == s)) {
        let out = args.out.join(format!("{}.beats", entry.piece_id));
        println!("{}", predict_file(&tracker, &entry.piece_id, &entry.wav_path, &out)?);
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn references(path: &Path, split: Option<Split>) -> Outcome<Vec<(String, PathBuf)>> {
    if path.is_dir() {
        let mut out = Vec::new();
        for entry in fs::read_dir(path)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "beats") {
                out.push((stem(&p), p));
            }
        }
        out.sort();
        return Ok(out);
    }
    require_file(path, "reference")?;
    Ok(read_manifest(path)?
        .into_iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .map(|e| (e.piece_id, e.beats_path))
        .collect())
}

pub fn eval(args: EvalArgs) -> Outcome {
    if !args.est.is_dir() {
        return Err(Failure::usage(format!("estimate directory `{}` does not exist", args.est.display())));
    }
    let mut report = EvalReport::default();
    for (id, ref_path) in references(&args.reference, args.split)? {
        let reference = BeatAnnotation::read(&ref_path)?;
        let est_path = args.est.join(format!("{id}.beats"));
        let preds = if est_path.is_file() {
            let est = BeatAnnotation::read(&est_path)?;
            BeatPredictions {
                beats: est.beats(),
                downbeats: est.downbeats(),
            }
        } else {
            log::warn!("no estimate for {id}; scoring it as zero");
            BeatPredictions::default()
        };
        report.push(evaluate_piece(
            &id,
            &reference.beats(),
            reference.downbeats_if_known().as_deref(),
            &preds,
        ));
    }
    report.write_csv(&args.report)?;
    print!("{}", report.to_table());
    Ok(())
}
