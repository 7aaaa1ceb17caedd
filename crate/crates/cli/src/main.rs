use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use arm_cli::BenchArgs;
use arm_service::ServiceConfig;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "arm", version, about = "Augmented reality microscope simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write demo slides, detector models and a labeled FOV manifest.
    MakeDemo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the HTTP and WebSocket API.
    Serve {
        #[arg(long)]
        slides: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 512)]
        fov: usize,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Latency and throughput of the four execution configurations.
    Bench {
        #[arg(long)]
        slides: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        fov: usize,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        frames: u64,
        #[arg(long)]
        slide: Option<String>,
    },
    /// Full-frame vs patch equivalence on random FOVs; exits 1 on mismatch.
    Check {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        fov_side: usize,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// ROC, AUC and operating points with bootstrap intervals.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        bootstrap: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Scores rows that list an image but no score.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Hue-saturation-density summaries of every slide.
    Colors {
        #[arg(long)]
        slides: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::MakeDemo { out, seed } => {
            let s = arm_cli::make_demo(&out, seed)?;
            println!("slides: {}", s.slide_ids.join(", "));
            println!("models: {}", s.models_dir.display());
            println!("manifest: {} ({} FOVs)", s.manifest.display(), s.rows.len());
        }
        Cmd::Serve {
            slides,
            models,
            port,
            fov,
            host,
        } => {
            let mut config = ServiceConfig::new(slides, models);
            config.fov_px = fov;
            let addr: SocketAddr = format!("{host}:{port}").parse()?;
            println!("listening on http://{addr}");
            tokio::runtime::Runtime::new()?.block_on(arm_service::serve(config, addr))?;
        }
        Cmd::Bench {
            slides,
            models,
            fov,
            reps,
            out,
            frames,
            slide,
        } => {
            let rows = arm_cli::run_bench(&BenchArgs {
                slides,
                models,
                slide_id: slide,
                fov_px: fov,
                reps,
                frames,
                out: Some(out),
            })?;
            for r in rows {
                println!(
                    "{:<22} latency {:>9.2} ± {:<7.2} ms  fps {:>7.2} ± {:.2}",
                    r.config, r.latency_ms_mean, r.latency_ms_sd, r.fps_mean, r.fps_sd
                );
            }
        }
        Cmd::Check {
            model,
            fov_side,
            trials,
            seed,
        } => {
            let r = arm_cli::check(&model, fov_side, trials, seed)?;
            println!(
                "fov_side={} trials={} max_abs_diff={:e} {}",
                r.fov_side,
                r.trials,
                r.max_abs_diff,
                if r.pass { "PASS" } else { "FAIL" }
            );
            if !r.pass {
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Eval {
            manifest,
            out,
            bootstrap,
            seed,
            model,
        } => {
            let r = arm_cli::eval(&manifest, &out, model.as_deref(), bootstrap, seed)?;
            match r.auc_ci {
                Some((lo, hi)) => println!("AUC {:.4} [{lo:.4}, {hi:.4}] over {} FOVs", r.roc.auc, r.fovs.len()),
                None => println!("AUC {:.4} over {} FOVs", r.roc.auc, r.fovs.len()),
            }
            for p in &r.points {
                let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
                println!(
                    "{:<15} t={:.4} acc={} prec={} rec={}",
                    p.name.as_str(),
                    p.threshold,
                    f(p.accuracy.value),
                    f(p.precision.value),
                    f(p.recall.value)
                );
            }
        }
        Cmd::Colors { slides, out } => {
            for r in arm_cli::colors(&slides, &out)? {
                println!(
                    "{:<12} hue {:>7.3} sat {:.3} density {:.3}{}",
                    r.image_id,
                    r.hue,
                    r.saturation,
                    r.density,
                    if r.excluded { " (excluded)" } else { "" }
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
