use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use elastiq::http;
use elastiq::Engine;
use elastiq_core::metrics::MetricsReport;
use elastiq_core::sim::{run_scenario, run_sweep, Scenario};
use elastiq_core::{ServiceConfig, System};

/// Elastic image-classification pipeline: serve it live or simulate it.
#[derive(Parser)]
#[command(name = "elastiq", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the gateway service with the controller and worker pool.
    Serve {
        /// JSON config file; defaults apply for missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Address to listen on.
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        /// Persist blob-store objects under this directory.
        #[arg(long)]
        store_dir: Option<PathBuf>,
    },
    /// Upload image files to a running service as one job.
    Submit {
        /// Image files; the file name becomes the image name.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        endpoint: String,
    },
    /// Show a job's state and its `image, label` result lines.
    Status {
        job_id: String,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        endpoint: String,
    },
    /// Fetch the metrics report from a running service.
    Metrics {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        endpoint: String,
    },
    /// Run a scenario on the simulated clock and print the report.
    Simulate {
        /// Scenario JSON file; omitted means the default calibrated batch.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Emit CSV (one row per run) instead of JSON.
        #[arg(long)]
        csv: bool,
        /// Sweep the image count over an inclusive range, e.g. `0..30`;
        /// one run per count.
        #[arg(long, value_name = "A..B")]
        sweep_images: Option<String>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    // `serve` emits the decision log as JSON lines by default; for the
    // other commands the log stays quiet unless RUST_LOG asks for more.
    let default_filter = match &cli.command {
        Command::Serve { .. } => "info",
        _ => "warn",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_filter))
        .init();
    match cli.command {
        Command::Serve {
            config,
            listen,
            store_dir,
        } => serve(config, &listen, store_dir),
        Command::Submit { files, endpoint } => submit(&files, &endpoint),
        Command::Status { job_id, endpoint } => status(&job_id, &endpoint),
        Command::Metrics { endpoint } => metrics(&endpoint),
        Command::Simulate {
            scenario,
            out,
            csv,
            sweep_images,
        } => simulate(scenario, out, csv, sweep_images),
    }
}

fn serve(config: Option<PathBuf>, listen: &str, store_dir: Option<PathBuf>) -> Result<()> {
    let config = match config {
        Some(path) => ServiceConfig::from_file(&path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ServiceConfig::default(),
    };
    let sys = Arc::new(System::from_config(&config, store_dir)?);
    let listener = std::net::TcpListener::bind(listen)
        .with_context(|| format!("binding {listen}"))?;
    log::info!("gateway listening on {}", listener.local_addr()?);
    let engine = Engine::start(Arc::clone(&sys));
    let result = http::serve_blocking(sys, listener);
    engine.shutdown();
    result
}

fn submit(files: &[PathBuf], endpoint: &str) -> Result<()> {
    let mut form = reqwest::blocking::multipart::Form::new();
    for path in files {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        form = form.part(
            "file",
            reqwest::blocking::multipart::Part::bytes(bytes).file_name(name),
        );
    }
    let response = reqwest::blocking::Client::new()
        .post(format!("{endpoint}/jobs"))
        .multipart(form)
        .send()?;
    let status = response.status();
    let body = response.text()?;
    if !status.is_success() {
        bail!("submit failed ({status}): {body}");
    }
    println!("{body}");
    Ok(())
}

fn status(job_id: &str, endpoint: &str) -> Result<()> {
    let response = reqwest::blocking::get(format!("{endpoint}/jobs/{job_id}"))?;
    let status = response.status();
    let body = response.text()?;
    if !status.is_success() {
        bail!("status failed ({status}): {body}");
    }
    let parsed: serde_json::Value = serde_json::from_str(&body)?;
    println!("state: {}", parsed["state"].as_str().unwrap_or("?"));
    if let Some(ms) = parsed["response_time_ms"].as_u64() {
        println!("response_time_ms: {ms}");
    }
    if let Some(results) = parsed["results"].as_array() {
        for entry in results {
            println!(
                "{}, {}",
                entry["image"].as_str().unwrap_or("?"),
                entry["label"].as_str().unwrap_or("?")
            );
        }
    }
    Ok(())
}

fn metrics(endpoint: &str) -> Result<()> {
    let response = reqwest::blocking::get(format!("{endpoint}/metrics"))?;
    let status = response.status();
    let body = response.text()?;
    if !status.is_success() {
        bail!("metrics failed ({status}): {body}");
    }
    let parsed: serde_json::Value = serde_json::from_str(&body)?;
    println!("{}", serde_json::to_string_pretty(&parsed)?);
    Ok(())
}

fn simulate(
    scenario_path: Option<PathBuf>,
    out: Option<PathBuf>,
    csv: bool,
    sweep_images: Option<String>,
) -> Result<()> {
    let scenario = match &scenario_path {
        Some(path) => {
            let json = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Scenario::from_json(&json)?
        }
        None => Scenario::default(),
    };

    let output = if let Some(range) = &sweep_images {
        let counts = parse_inclusive_range(range)?;
        let reports = run_sweep(&scenario, &counts)?;
        if csv {
            render_csv(counts.iter().copied().zip(reports.iter()))
        } else {
            serde_json::to_string(&reports)?
        }
    } else {
        let report = run_scenario(&scenario)?;
        if csv {
            render_csv(std::iter::once((scenario.n_images, &report)))
        } else {
            serde_json::to_string(&report)?
        }
    };

    match out {
        Some(path) => {
            let mut file = std::fs::File::create(&path)
                .with_context(|| format!("creating {}", path.display()))?;
            writeln!(file, "{output}")?;
        }
        None => println!("{output}"),
    }
    Ok(())
}

fn parse_inclusive_range(range: &str) -> Result<Vec<usize>> {
    let (start, end) = range
        .split_once("..")
        .context("range must look like A..B")?;
    let start: usize = start.trim().parse().context("range start")?;
    let end: usize = end.trim().trim_start_matches('=').parse().context("range end")?;
    if end < start {
        bail!("range end before start");
    }
    Ok((start..=end).collect())
}

fn render_csv<'a>(rows: impl Iterator<Item = (usize, &'a MetricsReport)>) -> String {
    let mut out = String::from(
        "n_images,response_time_ms,mean_boot_time_ms,instances_launched,peak_active,messages_redelivered\n",
    );
    for (n, report) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            n,
            report.response_time_ms,
            report
                .mean_boot_time_ms
                .map(|v| v.to_string())
                .unwrap_or_default(),
            report.instances_launched,
            report.peak_active,
            report.messages_redelivered
        ));
    }
    out.pop();
    out
}
