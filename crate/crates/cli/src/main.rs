//! `hnsf`: feature extraction, training, synthesis and inspection.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hnsf::autodiff::Checkpoint;
use hnsf::dsp::extract_features;
use hnsf::gradcheck::{run_suite, SuiteConfig};
use hnsf::io::{
    mvf_rows, read_features, response_rows, wav_read, wav_write, write_features, write_rows, RunConfig,
};
use hnsf::model::{train, HnsfModel, Utterance, Variant};
use serde_json::json;

#[derive(Parser)]
#[command(name = "hnsf", version, about = "Harmonic-plus-noise neural source-filter vocoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract F0 and log-mel features from a 16 kHz mono PCM16 WAV.
    Extract {
        #[arg(long)]
        wav: PathBuf,
        /// Feature payload; a `.json` sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a WAV file or a directory of WAV files.
    Train {
        /// JSON run configuration; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and the loss curve.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured number of steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Generate a waveform from features.
    Synth {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        feats: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reject checkpoints of any other variant.
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Finite-difference checks of the filter and layer gradients.
    Gradcheck {
        #[arg(long = "M", default_value_t = 31)]
        m: usize,
        #[arg(long, default_value_t = 0.3)]
        fc: f64,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
    },
    /// Write the magnitude responses of the merge filters at one cutoff.
    FilterInspect {
        #[arg(long)]
        fc: f64,
        #[arg(long = "M", default_value_t = 31)]
        m: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1024)]
        n_fft: usize,
    },
    /// Export the per-frame cutoff trajectory predicted for some features.
    Mvf {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        feats: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn log_run(command: &str, cfg: &RunConfig, options: serde_json::Value) {
    let line = json!({ "command": command, "run_config": cfg, "options": options });
    println!("{line}");
}

fn with_paths(mut cfg: RunConfig, paths: &[(&str, &Path)]) -> RunConfig {
    for (k, p) in paths {
        cfg.paths.insert((*k).to_string(), p.to_path_buf());
    }
    cfg
}

fn load_model(ckpt: &Path, variant: Option<Variant>) -> Result<HnsfModel> {
    let ckpt = Checkpoint::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    Ok(HnsfModel::from_checkpoint(&ckpt, variant)?)
}

fn training_files(data: &Path) -> Result<Vec<PathBuf>> {
    if data.is_file() {
        return Ok(vec![data.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(data)
        .with_context(|| format!("reading {}", data.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .wav files in {}", data.display());
    }
    Ok(files)
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Extract { wav, out } => {
            log_run("extract", &with_paths(RunConfig::default(), &[("wav", &wav), ("out", &out)]), json!({}));
            let w = wav_read(&wav)?;
            let feats = extract_features(&w);
            write_features(&feats, &out)?;
            let voiced = feats.f0.iter().filter(|f| **f > 0.0).count();
            log::info!("{} frames ({voiced} voiced) written to {}", feats.frames(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            steps,
        } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
                None => RunConfig::default(),
            };
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            let cfg = with_paths(cfg, &[("data", &data), ("out", &out)]);
            log_run("train", &cfg, json!({}));
            let utterances = training_files(&data)?
                .iter()
                .map(|p| Ok(Utterance::from_waveform(&wav_read(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let model = HnsfModel::new(cfg.model.clone(), cfg.init_seed)?;
            std::fs::create_dir_all(&out)?;
            cfg.save(&out.join("run_config.json"))?;
            let outcome = train(model, utterances, &cfg.train, &out)?;
            let last = outcome.curve.last().map(|r| r.report.total).unwrap_or(f64::NAN);
            log::info!("final loss {last:.5}; checkpoint {}", outcome.final_checkpoint.display());
        }
        Command::Synth {
            ckpt,
            feats,
            out,
            seed,
            variant,
        } => {
            let model = load_model(&ckpt, variant)?;
            let cfg = RunConfig {
                model: model.config().clone(),
                ..RunConfig::default()
            };
            let cfg = with_paths(cfg, &[("ckpt", &ckpt), ("feats", &feats), ("out", &out)]);
            log_run("synth", &cfg, json!({ "seed": seed }));
            let f = read_features(&feats)?;
            let w = model.synthesize(&f, seed)?;
            wav_write(&w, &out)?;
            log::info!("{:.2} s written to {}", w.duration_secs(), out.display());
        }
        Command::Gradcheck { m, fc, eps } => {
            let mut cfg = RunConfig::default();
            cfg.model.filter_len = m;
            let suite = SuiteConfig {
                filter_len: m,
                fc,
                eps,
            };
            log_run("gradcheck", &cfg, serde_json::to_value(suite)?);
            let reports = run_suite(&suite)?;
            let mut ok = true;
            for r in &reports {
                let status = if r.passed() { "ok" } else { "FAIL" };
                println!("{:<30} {:>10.3e}  < {:.0e}  {status}", r.name, r.max_rel_error, r.threshold);
                ok &= r.passed();
            }
            return Ok(ok);
        }
        Command::FilterInspect { fc, m, out, n_fft } => {
            let mut cfg = RunConfig::default();
            cfg.model.filter_len = m;
            let cfg = with_paths(cfg, &[("out", &out)]);
            log_run("filter-inspect", &cfg, json!({ "fc": fc, "n_fft": n_fft }));
            let rows = response_rows(fc, m, n_fft)?;
            write_rows(&out, &rows)?;
            log::info!("{} rows written to {}", rows.len(), out.display());
        }
        Command::Mvf { ckpt, feats, out } => {
            let model = load_model(&ckpt, None)?;
            let cfg = RunConfig {
                model: model.config().clone(),
                ..RunConfig::default()
            };
            let cfg = with_paths(cfg, &[("ckpt", &ckpt), ("feats", &feats), ("out", &out)]);
            log_run("mvf", &cfg, json!({}));
            let f = read_features(&feats)?;
            let traj = model.cutoff_trajectory(&f)?;
            write_rows(&out, &mvf_rows(&f, &traj))?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
