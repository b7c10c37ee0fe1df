use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use bistatic_sbl::bench::runner::{prepare_trial, run_estimator, write_atomic};
use bistatic_sbl::bench::{run_experiment, trial_seed, Estimator, ExperimentConfig, ExperimentReport};
use bistatic_sbl::dictionary::{read_grid_csv, sample_grid, write_grid_csv, Dictionary};
use bistatic_sbl::postproc::{filter_clutter, TargetEstimate, TargetRecord};
use bistatic_sbl::scene::io::{read_batch, write_batch};
use bistatic_sbl::scene::GroundTruth;
use bistatic_sbl::Error;

#[derive(Parser)]
#[command(name = "bsbl", version, about = "Bistatic MIMO radar sparse recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one snapshot batch; also writes the ground truth and a grid
    /// next to it.
    Simulate(Common),
    /// Run estimators on a stored batch.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Batch file written by `simulate`.
        #[arg(long)]
        input: PathBuf,
        /// Grid CSV; defaults to the one written alongside the batch.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Full Monte Carlo sweep.
    Sweep(Common),
    /// CRB / BCRB table over the sweep.
    Bounds(Common),
    /// Sample a grid, or inspect an existing grid CSV.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        inspect: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated list, e.g. `sbl,somp`.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

fn load_config(c: &Common) -> Result<ExperimentConfig, Error> {
    let path = c.config.display().to_string();
    let mut cfg = ExperimentConfig::load(&c.config).map_err(|e| match e {
        Error::Config { field, reason } => Error::Config {
            field: format!("{path}: {field}"),
            reason,
        },
        other => Error::Config {
            field: path.clone(),
            reason: other.to_string(),
        },
    })?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.trials {
        cfg.trials = t;
    }
    if let Some(list) = &c.estimators {
        cfg.estimators = list.iter().map(|s| Estimator::parse(s)).collect::<Result<_, _>>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn truth_json(truth: &GroundTruth) -> serde_json::Value {
    let comps: Vec<_> = truth
        .components
        .iter()
        .map(|c| {
            let g = &c.geometry;
            json!({
                "kind": g.kind,
                "aod_rad": g.aod,
                "aoa_rad": g.aoa,
                "doppler_rad": g.doppler,
                "velocity_mps": g.velocity,
                "position_m": [g.position.0, g.position.1],
                "sum_distance_m": g.sum_distance,
                "rcs": c.rcs.iter().map(|b| [b.re, b.im]).collect::<Vec<_>>(),
                "effective_rcs": c.effective_rcs.iter().map(|b| [b.re, b.im]).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({ "schema_version": 1, "components": comps })
}

fn simulate(c: &Common) -> anyhow::Result<ExitCode> {
    let cfg = load_config(c)?;
    let Some(out) = c.out.as_deref() else {
        bail!("simulate needs --out");
    };
    let setup = cfg.base_point()?;
    let data = prepare_trial(&setup, cfg.grid.jitter, trial_seed(cfg.seed, 0, 0), true)?;
    write_batch(out, &data.batch).with_context(|| format!("writing {}", out.display()))?;
    let truth = serde_json::to_string_pretty(&truth_json(&data.truth))?;
    write_atomic(&sidecar(out, ".truth.json"), truth.as_bytes())?;
    if let Some(dict) = &data.dict {
        write_grid_csv(&sidecar(out, ".grid.csv"), &dict.grid)?;
    }
    eprintln!("wrote {} ({} snapshots)", out.display(), data.batch.n_snapshots());
    Ok(ExitCode::SUCCESS)
}

fn estimate(c: &Common, input: &Path, grid: Option<&Path>) -> anyhow::Result<ExitCode> {
    let cfg = load_config(c)?;
    let setup = cfg.base_point()?;
    let batch = read_batch(input).with_context(|| format!("reading {}", input.display()))?;
    let grid_path = grid.map_or_else(|| sidecar(input, ".grid.csv"), Path::to_path_buf);
    let grid = read_grid_csv(&grid_path, setup.spans).with_context(|| format!("reading {}", grid_path.display()))?;
    let dict = Dictionary::build(grid, &setup.scene.waveform, &batch.tx)?;
    let receiver = setup.scene.receiver_polar;
    let wf = &setup.scene.waveform;

    let mut json_out = serde_json::Map::new();
    let mut csv_out = csv::Writer::from_writer(Vec::new());
    csv_out.write_record(["estimator", "aod_deg", "aoa_deg", "doppler_rad", "x_m", "y_m", "sum_distance_m", "v_mps", "rcs_abs"])?;
    let mut failed = 0;
    for &est in &cfg.estimators {
        let sparse = match run_estimator(est, &batch, &dict, &setup, &cfg) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("{}: {e}", est.tag());
                failed += 1;
                json_out.insert(est.tag().into(), json!({ "error": e.to_string() }));
                continue;
            }
        };
        let (targets, clutter) = filter_clutter(&sparse.to_tuples(), &setup.clutter_rule);
        let mut records = Vec::new();
        for t in &targets {
            match TargetEstimate::from_tuple(t, receiver, wf) {
                Ok(te) => records.push(TargetRecord::from(&te)),
                Err(e) => eprintln!("{}: skipping tuple: {e}", est.tag()),
            }
        }
        for r in &records {
            let fields = [r.aod_deg, r.aoa_deg, r.doppler_rad, r.x_m, r.y_m, r.sum_distance_m, r.v_mps, r.rcs_abs];
            let mut row = vec![est.tag().to_string()];
            row.extend(fields.iter().map(f64::to_string));
            csv_out.write_record(&row)?;
        }
        let clutter: Vec<_> = clutter.iter().map(|t| json!({ "aod_rad": t.aod, "aoa_rad": t.aoa, "doppler_rad": t.doppler })).collect();
        json_out.insert(
            est.tag().into(),
            json!({ "estimate": sparse.to_json(), "targets": records, "clutter": clutter }),
        );
    }
    let text = match c.format {
        Format::Json => serde_json::to_string_pretty(&json!({ "schema_version": 1, "estimators": json_out }))? + "\n",
        Format::Csv => String::from_utf8(csv_out.into_inner()?)?,
    };
    emit(c.out.as_deref(), &text)?;
    Ok(if failed > 0 { ExitCode::from(EXIT_PARTIAL) } else { ExitCode::SUCCESS })
}

fn write_report(c: &Common, cfg: &ExperimentConfig, rep: &ExperimentReport) -> anyhow::Result<()> {
    let out = c.out.clone().or_else(|| cfg.output.csv.clone());
    match (c.format, out) {
        (Format::Csv, Some(p)) => {
            let meta = rep.write(cfg, &p, cfg.output.metadata.as_deref())?;
            eprintln!("wrote {} and {}", p.display(), meta.display());
        }
        (Format::Csv, None) => emit(None, &rep.csv_string()?)?,
        (Format::Json, out) => {
            let text = serde_json::to_string_pretty(&json!({ "metadata": rep.metadata(cfg), "rows": rep.rows }))? + "\n";
            emit(out.as_deref(), &text)?;
        }
    }
    Ok(())
}

fn sweep(c: &Common, bounds_only: bool) -> anyhow::Result<ExitCode> {
    let mut cfg = load_config(c)?;
    if bounds_only {
        cfg.estimators.clear();
        cfg.bounds = true;
    }
    let rep = run_experiment(&cfg)?;
    write_report(c, &cfg, &rep)?;
    let rate = rep.failure_rate();
    if rate > 0.0 {
        eprintln!("{} failed runs ({:.1}%)", rep.failures().len(), 100.0 * rate);
    }
    Ok(if rate > cfg.failure_threshold { ExitCode::from(EXIT_PARTIAL) } else { ExitCode::SUCCESS })
}

fn grid(c: &Common, inspect: Option<&Path>) -> anyhow::Result<ExitCode> {
    let cfg = load_config(c)?;
    let spans = cfg.grid.spans()?;
    let g = match inspect {
        Some(p) => read_grid_csv(p, spans).with_context(|| format!("reading {}", p.display()))?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let g = sample_grid(cfg.grid.size, spans, cfg.grid.jitter, &mut rng)?;
            let Some(out) = c.out.as_deref() else {
                bail!("grid needs --out or --inspect");
            };
            write_grid_csv(out, &g)?;
            g
        }
    };
    let scale = g.cell_scale();
    let stats = json!({
        "size": g.len(),
        "distinct": g.is_distinct(),
        "max_gap": { "aod_deg": g.max_gap(0).to_degrees(), "aoa_deg": g.max_gap(1).to_degrees(), "doppler_rad": g.max_gap(2) },
        "cell_scale": { "aod_deg": scale[0].to_degrees(), "aoa_deg": scale[1].to_degrees(), "doppler_rad": scale[2] },
    });
    eprintln!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Estimate { common, input, grid } => estimate(common, input, grid.as_deref()),
        Command::Sweep(c) => sweep(c, false),
        Command::Bounds(c) => sweep(c, true),
        Command::Grid { common, inspect } => grid(common, inspect.as_deref()),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config { .. }) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
