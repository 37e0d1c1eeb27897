//! `tweetflow`: run the museum-visit pipeline, models and calibration
//! against files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tweetflow::calibration::{BetaGrid, Calibrator, Execution, SweepResult};
use tweetflow::io;
use tweetflow::model::{Marginals, PreparedModel};
use tweetflow::pipeline::{
    assign_home_zone, extract_museums, filter_corpus, frame_for_zones, infer_home_locations, run_pipeline,
    zone_coverage_summary, PipelineConfig, PipelineReport, Stage,
};
use tweetflow::synth::{generate_corpus, recovery_report, SynthConfig, SyntheticRegion, DEFAULT_SEED};
use tweetflow::{Constraint, FlowMatrix, ModelSpec, Museum, SpecPreset, Zone};

#[derive(Parser)]
#[command(name = "tweetflow", version, about = "Museum-visit flows from geotagged tweets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract museums from tagged map features.
    Museums {
        #[arg(long)]
        features: PathBuf,
        /// Same-name features closer than this are merged.
        #[arg(long, default_value_t = 50.0)]
        merge_radius_m: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run the filtering stages and write the surviving tweets.
    Filter {
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Infer each user's home cell and zone.
    Homes {
        #[arg(long)]
        tweets: PathBuf,
        #[arg(long)]
        zones: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        grid_m: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Build the observed flow matrix and its flow-line map.
    Flows {
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long)]
        museums: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Evaluate a model at one β.
    Model {
        #[arg(long)]
        zones: PathBuf,
        #[arg(long)]
        museums: PathBuf,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value = "baseline", conflicts_with = "baseline")]
        spec: SpecPreset,
        /// Shorthand for `--spec baseline`.
        #[arg(long)]
        baseline: bool,
        #[arg(long, default_value = "unconstrained")]
        constraint: Constraint,
        /// Observed matrix supplying the margins of constrained models.
        #[arg(long)]
        observed: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sweep β and report the fit at every grid point.
    Calibrate {
        #[arg(long)]
        zones: PathBuf,
        #[arg(long)]
        museums: PathBuf,
        /// Observed matrix CSV; without it the pipeline is run on `--tweets`.
        #[arg(long)]
        observed: Option<PathBuf>,
        #[command(flatten)]
        source: TweetSourceArgs,
        /// baseline, attract, attract-demand or all
        #[arg(long, default_value = "all")]
        spec: String,
        #[arg(long, default_value = "unconstrained")]
        constraint: Constraint,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Generate a synthetic corpus and check that calibration recovers β.
    Simulate {
        /// Zones file; a square grid of synthetic zones is generated without it.
        #[arg(long, requires = "museums")]
        zones: Option<PathBuf>,
        #[arg(long, requires = "zones")]
        museums: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        n_zones: usize,
        #[arg(long, default_value_t = 5)]
        n_museums: usize,
        #[arg(long, default_value = "baseline")]
        spec: SpecPreset,
        #[arg(long, default_value_t = 0.95)]
        beta: f64,
        #[arg(long, default_value_t = 5000)]
        trips: usize,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Print a pipeline report, either saved or computed from the inputs.
    Report {
        /// A report.json written by `filter` or `flows`.
        #[arg(long, conflicts_with_all = ["tweets", "zones"])]
        report: Option<PathBuf>,
        #[arg(long, requires = "zones")]
        tweets: Option<PathBuf>,
        #[arg(long, requires = "tweets")]
        zones: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OutArgs {
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    tweets: PathBuf,
    #[arg(long)]
    zones: PathBuf,
    /// Museum footprints; enables the spatial stage.
    #[arg(long)]
    footprints: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    keywords: Option<Vec<String>>,
    #[arg(long, default_value_t = 10.0)]
    buffer_m: f64,
    /// Comma-separated subset of bots,semantic,spatial,dedup,checkins.
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<Stage>>,
}

#[derive(Args)]
struct TweetSourceArgs {
    #[arg(long, conflicts_with = "observed")]
    tweets: Option<PathBuf>,
    #[arg(long, requires = "tweets")]
    footprints: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', requires = "tweets")]
    keywords: Option<Vec<String>>,
    #[arg(long, default_value_t = 10.0)]
    buffer_m: f64,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = 0.01)]
    beta_start: f64,
    #[arg(long, default_value_t = 0.01)]
    beta_step: f64,
    #[arg(long, default_value_t = 200)]
    beta_count: usize,
}

impl GridArgs {
    fn grid(&self) -> BetaGrid {
        BetaGrid {
            start: self.beta_start,
            step: self.beta_step,
            count: self.beta_count,
        }
    }
}

fn load_zones(path: &Path) -> Result<Vec<Zone>> {
    io::read_zones(path).with_context(|| format!("reading zones from {}", path.display()))
}

fn load_museums(path: &Path) -> Result<Vec<Museum>> {
    io::read_museums(path).with_context(|| format!("reading museums from {}", path.display()))
}

fn load_matrix(path: &Path) -> Result<FlowMatrix> {
    io::read_matrix_file(path).with_context(|| format!("reading matrix from {}", path.display()))
}

fn pipeline_config(
    footprints: Option<&Path>,
    keywords: Option<&Vec<String>>,
    buffer_m: f64,
    stages: Option<&Vec<Stage>>,
) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig {
        buffer_m,
        ..Default::default()
    };
    if let Some(k) = keywords {
        cfg.keywords = k
            .iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
    }
    if let Some(path) = footprints {
        cfg.footprints =
            io::read_footprints(path).with_context(|| format!("reading footprints from {}", path.display()))?;
        cfg.stages.push(Stage::Spatial);
    }
    if let Some(s) = stages {
        cfg.stages = s.clone();
    }
    Ok(cfg)
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig> {
        pipeline_config(
            self.footprints.as_deref(),
            self.keywords.as_ref(),
            self.buffer_m,
            self.stages.as_ref(),
        )
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<fs::File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let mut w = create(dir, name)?;
    w.write_all(text.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_matrix(dir: &Path, name: &str, m: &FlowMatrix) -> Result<()> {
    let mut w = create(dir, name)?;
    io::write_matrix_csv(&mut w, m)?;
    w.flush()?;
    Ok(())
}

fn write_sweeps(dir: &Path, sweeps: &[SweepResult]) -> Result<()> {
    let mut w = create(dir, "sweep.csv")?;
    io::write_sweep_csv(&mut w, sweeps)?;
    w.flush()?;
    write_text(dir, "sweep.json", &io::to_json_pretty(&sweeps)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Museums {
            features,
            merge_radius_m,
            out,
        } => {
            let features = io::read_tagged_features(&features)
                .with_context(|| format!("reading features from {}", features.display()))?;
            let museums = extract_museums(&features, merge_radius_m)?;
            write_text(&out.out, "museums.geojson", &io::museums_to_geojson(&museums))?;
            println!("{} museums from {} features", museums.len(), features.len());
        }
        Command::Filter { pipeline, out } => {
            let cfg = pipeline.config()?;
            let zones = load_zones(&pipeline.zones)?;
            let tweets = io::read_tweets_file(&pipeline.tweets)
                .with_context(|| format!("reading tweets from {}", pipeline.tweets.display()))?;
            let frame = frame_for_zones(&zones)?;
            let filtered = filter_corpus(tweets, &frame, &cfg)?;
            let mut w = create(&out.out, "filtered.ndjson")?;
            io::write_tweets(&mut w, &filtered.selected)?;
            w.flush()?;
            write_text(&out.out, "report.json", &io::to_json_pretty(&filtered.report)?)?;
            print!("{}", filtered.report);
        }
        Command::Homes {
            tweets,
            zones,
            grid_m,
            out,
        } => {
            let zones = load_zones(&zones)?;
            let tweets =
                io::read_tweets_file(&tweets).with_context(|| format!("reading tweets from {}", tweets.display()))?;
            let frame = frame_for_zones(&zones)?;
            let homes = assign_home_zone(infer_home_locations(&tweets, &frame, grid_m)?, &zones, &frame)?;
            let mut w = create(&out.out, "homes.csv")?;
            io::write_homes_csv(&mut w, &homes)?;
            w.flush()?;
            let zoned = homes.iter().filter(|h| h.zone_id.is_some()).count();
            println!("{} users, {zoned} with a home inside a zone", homes.len());
        }
        Command::Flows { pipeline, museums, out } => {
            let cfg = pipeline.config()?;
            let zones = load_zones(&pipeline.zones)?;
            let museums = load_museums(&museums)?;
            let tweets = io::read_tweets_file(&pipeline.tweets)
                .with_context(|| format!("reading tweets from {}", pipeline.tweets.display()))?;
            let frame = frame_for_zones(&zones)?;
            let outcome = run_pipeline(tweets, &zones, &museums, &frame, &cfg)?;
            let matrix = &outcome.observed.matrix;
            write_matrix(&out.out, "observed.csv", matrix)?;
            write_text(
                &out.out,
                "flows.geojson",
                &io::flow_lines_geojson(matrix, &zones, &museums)?,
            )?;
            write_text(&out.out, "report.json", &io::to_json_pretty(&outcome.report)?)?;
            print!("{}", outcome.report);
            println!("observed total {}", matrix.total());
        }
        Command::Model {
            zones,
            museums,
            beta,
            spec,
            baseline,
            constraint,
            observed,
            out,
        } => {
            let zones = load_zones(&zones)?;
            let museums = load_museums(&museums)?;
            let preset = if baseline { SpecPreset::Baseline } else { spec };
            let spec = ModelSpec::preset(preset, beta).with_constraint(constraint);
            let marginals = match (constraint, observed) {
                (Constraint::Unconstrained, None) => None,
                (Constraint::Unconstrained, Some(_)) => bail!("--observed only applies to constrained models"),
                (_, None) => bail!("a {constraint} model needs --observed for its margins"),
                (_, Some(path)) => {
                    let m = load_matrix(&path)?.aligned_to(
                        &zones.iter().map(|z| z.id.clone()).collect::<Vec<_>>(),
                        &museums.iter().map(|m| m.id.clone()).collect::<Vec<_>>(),
                    )?;
                    Some(Marginals::of(&m))
                }
            };
            let t = PreparedModel::new(&zones, &museums, &spec, marginals)?.flows(beta)?;
            write_matrix(&out.out, "model.csv", &t)?;
            println!("{} at beta {beta}: total {}", spec.label(), t.total());
        }
        Command::Calibrate {
            zones,
            museums,
            observed,
            source,
            spec,
            constraint,
            grid,
            out,
        } => {
            let presets: Vec<SpecPreset> = if spec == "all" {
                SpecPreset::ALL.to_vec()
            } else {
                vec![spec.parse()?]
            };
            let zones = load_zones(&zones)?;
            let museums = load_museums(&museums)?;
            let observed = match (observed, &source.tweets) {
                (Some(path), _) => load_matrix(&path)?,
                (None, Some(tweets)) => {
                    let cfg = pipeline_config(
                        source.footprints.as_deref(),
                        source.keywords.as_ref(),
                        source.buffer_m,
                        None,
                    )?;
                    let corpus = io::read_tweets_file(tweets)
                        .with_context(|| format!("reading tweets from {}", tweets.display()))?;
                    let frame = frame_for_zones(&zones)?;
                    run_pipeline(corpus, &zones, &museums, &frame, &cfg)?.observed.matrix
                }
                (None, None) => bail!("calibrate needs --observed or --tweets"),
            };
            let grid = grid.grid();
            let sweeps = presets
                .iter()
                .map(|p| {
                    let spec = ModelSpec::preset(*p, grid.start).with_constraint(constraint);
                    Calibrator::new(&zones, &museums, &observed, &spec)?.sweep(&grid, Execution::default())
                })
                .collect::<tweetflow::Result<Vec<_>>>()?;
            write_sweeps(&out.out, &sweeps)?;
            for s in &sweeps {
                println!("{:<32} best beta {:<6} r {:.4}", s.spec.label(), s.best_beta, s.best_r);
            }
        }
        Command::Simulate {
            zones,
            museums,
            n_zones,
            n_museums,
            spec,
            beta,
            trips,
            noise,
            seed,
            grid,
            out,
        } => {
            let (zones, museums) = match (zones, museums) {
                (Some(z), Some(m)) => (load_zones(&z)?, load_museums(&m)?),
                _ => {
                    let region = SyntheticRegion::new(n_zones, n_museums, seed)?;
                    write_text(&out.out, "zones.geojson", &io::zones_to_geojson(&region.zones))?;
                    write_text(&out.out, "museums.geojson", &io::museums_to_geojson(&region.museums))?;
                    (region.zones, region.museums)
                }
            };
            let cfg = SynthConfig::new(ModelSpec::preset(spec, beta), trips, noise, seed);
            let corpus = generate_corpus(&zones, &museums, &cfg)?;
            let mut w = create(&out.out, "corpus.ndjson")?;
            io::write_tweets(&mut w, &corpus.tweets)?;
            w.flush()?;
            write_matrix(&out.out, "ground_truth.csv", &corpus.ground_truth)?;
            let report = recovery_report(&zones, &museums, &cfg, &grid.grid())?;
            write_text(&out.out, "recovery.json", &io::to_json_pretty(&report)?)?;
            println!(
                "{} tweets; best beta {} (true {}), error {:.3}, r {:.4}",
                corpus.tweets.len(),
                report.best_beta,
                report.true_beta,
                report.abs_error,
                report.best_r
            );
        }
        Command::Report { report, tweets, zones } => match (report, tweets, zones) {
            (Some(path), _, _) => {
                let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let report: PipelineReport =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                print!("{report}");
            }
            (None, Some(tweets), Some(zones_path)) => {
                let zones = load_zones(&zones_path)?;
                let corpus = io::read_tweets_file(&tweets)
                    .with_context(|| format!("reading tweets from {}", tweets.display()))?;
                let frame = frame_for_zones(&zones)?;
                let filtered = filter_corpus(corpus, &frame, &PipelineConfig::default())?;
                print!("{}", filtered.report);
                let level = zones_path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                for row in zone_coverage_summary(&filtered.selected, &[(level, zones)], &frame)? {
                    println!(
                        "{}: {} zones, {} with tweets, {:.2} tweets per non-empty zone",
                        row.level, row.n_zones, row.n_zones_with_tweets, row.tweets_per_nonempty_zone
                    );
                }
            }
            _ => bail!("report needs --report, or --tweets with --zones"),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
