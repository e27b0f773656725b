use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use signtime::config::{help_text, Config};
use signtime::convnet::{load_checkpoint, save_checkpoint, Network};
use signtime::eval::{
    evaluate_localization, format_ap_table, ground_truth, read_detections, serialize_detections,
};
use signtime::keypoints::{read_candidate_file, read_track_file, smooth_track, write_track_file};
use signtime::kinetogram::{encode, export_ppm, render_visualization};
use signtime::pipeline::{acceptance_summary, class_names, repro};
use signtime::saliency::{export_pgm, localize, localize_clip};
use signtime::synthdata::{generate_dataset, stats_report};
use signtime::trainer::data::{load_annotated_clips, load_training_clips};
use signtime::trainer::train;
use signtime::{Error, Result};

/// Weakly supervised sign spotting in keypoint tracks.
#[derive(Parser, Debug)]
#[command(name = "signtime", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic dataset: tracks, split manifests, stats.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Pick a smooth keypoint path through per-frame candidates.
    Smooth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Candidate files (`KCAND 1`).
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Directory for the smoothed `.ktrack` files.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Encode a track as a kinetogram PPM.
    Encode {
        track: PathBuf,
        /// Raw kinetogram bytes as a binary PPM.
        #[arg(long, short)]
        out: PathBuf,
        /// Also write a decoded false-colour view.
        #[arg(long)]
        visual: Option<PathBuf>,
    },
    /// Train a network from clip-level labels.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory with train.manifest and val.manifest.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to write.
        #[arg(long, short)]
        out: PathBuf,
        /// Per-epoch loss and mAP log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Localize the labeled signs of each clip from saliency.
    Localize {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Detections CSV.
        #[arg(long, short)]
        out: PathBuf,
        /// Directory for raw and smoothed saliency maps as PGM.
        #[arg(long)]
        pgm_dir: Option<PathBuf>,
    },
    /// Score detections against annotated intervals.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        detections: PathBuf,
        /// Manifest with ground-truth intervals.
        #[arg(long)]
        manifest: PathBuf,
        /// Report file.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Generate, train, localize and evaluate in one go.
    Repro {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Master seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides `out_dir`).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn classes_of(net: &Network<f32>, cfg: &Config) -> Result<usize> {
    if net.classes() != cfg.gen.classes {
        log::warn!(
            "model has {} classes, config says {}; using the model",
            net.classes(),
            cfg.gen.classes
        );
    }
    Ok(net.classes())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Generate { cfg, out } => {
            let cfg = cfg.load()?;
            let ds = generate_dataset(&cfg.gen, &out)?;
            log::info!("wrote {} clips to {}", cfg.gen.total_clips(), out.display());
            log::debug!("{}", stats_report(&ds));
        }
        Cmd::Smooth { cfg, inputs, out } => {
            let cfg = cfg.load()?;
            std::fs::create_dir_all(&out)?;
            for input in inputs {
                let track = smooth_track(&read_candidate_file(&input)?, cfg.smooth_lambda)?;
                let stem = input.file_stem().unwrap_or_default();
                let dest = out.join(stem).with_extension("ktrack");
                write_track_file(&track, &dest)?;
                log::info!("{} -> {}", input.display(), dest.display());
            }
        }
        Cmd::Encode { track, out, visual } => {
            let k = encode(&read_track_file(&track)?);
            export_ppm(&k, &out)?;
            if let Some(v) = visual {
                render_visualization(&k, &v)?;
            }
        }
        Cmd::Train { cfg, data, out, log } => {
            let cfg = cfg.load()?;
            let classes = cfg.gen.classes;
            let tr = load_training_clips(&data.join("train.manifest"), classes)?;
            let val_path = data.join("val.manifest");
            let val = if val_path.exists() {
                Some(load_training_clips(&val_path, classes)?)
            } else {
                None
            };
            let (net, train_log) = train(&tr, val.as_deref(), &cfg.network_spec()?, &cfg.train)?;
            save_checkpoint(&net, &out)?;
            if let Some(p) = log {
                write_file(&p, &train_log.to_csv())?;
            }
        }
        Cmd::Localize {
            cfg,
            model,
            manifest,
            out,
            pgm_dir,
        } => {
            let cfg = cfg.load()?;
            let net: Network<f32> = load_checkpoint(&model)?;
            let clips = load_training_clips(&manifest, classes_of(&net, &cfg)?)?;
            let dets = localize(&net, &clips, &cfg.localize)?;
            write_file(&out, &serialize_detections(&dets))?;
            if let Some(dir) = pgm_dir {
                std::fs::create_dir_all(&dir)?;
                for clip in &clips {
                    for &class in &clip.labels {
                        let r = localize_clip(&net, clip, class, &cfg.localize)?;
                        export_pgm(&r.raw, &dir.join(format!("{}_c{class}_raw.pgm", clip.id)))?;
                        export_pgm(&r.smoothed, &dir.join(format!("{}_c{class}_smooth.pgm", clip.id)))?;
                    }
                }
            }
        }
        Cmd::Evaluate {
            cfg,
            detections,
            manifest,
            out,
        } => {
            let cfg = cfg.load()?;
            let classes = cfg.gen.classes;
            let clips = load_annotated_clips(&manifest, classes)?;
            let dets = read_detections(&detections)?;
            let res = evaluate_localization(&dets, &ground_truth(&clips), classes, cfg.eval.threshold, cfg.eval.metric);
            let title = format!("Localization AP at {} >= {}", cfg.eval.metric, cfg.eval.threshold);
            write_file(&out, &format_ap_table(&title, &res, &class_names(classes)))?;
            log::info!("mAP {:?}", res.map);
        }
        Cmd::Repro { cfg, seed, out } => {
            let mut c = cfg.load()?;
            if let Some(s) = seed {
                c.set("seed", &s.to_string())?;
            }
            if let Some(o) = out {
                c.out_dir = o;
            }
            let outcome = repro(&c)?;
            print!("{}", outcome.report);
            print!("\n{}", acceptance_summary(&outcome));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let keys = help_text();
    let mut command = Cli::command().after_help(keys.clone());
    for name in ["generate", "smooth", "train", "localize", "evaluate", "repro"] {
        command = command.mut_subcommand(name, |s| s.after_help(keys.clone()));
    }
    let cli = match command.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
