//! Synthetic geotagged corpora drawn from a known model.
//!
//! Randomness comes from ChaCha8 seeded with a 64-bit integer, so a given
//! configuration yields the same corpus on every platform.
//!
//! Each sampled trip becomes one user: a burst of keyword-free tweets from the
//! centre of a 100 m cell inside the origin zone, then one museum tweet at the
//! destination. Decoys are spread evenly over four kinds: plain chatter,
//! check-ins, re-posts of a trip tweet with a different link, and stray
//! keyword tweets from users with random homes. Only the last kind survives
//! the pipeline and perturbs the observed matrix.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{BetaGrid, Calibrator, Execution, SweepResult};
use crate::error::{Error, Result};
use crate::geometry::{snap_to_grid, GeoPoint, GeoPolygon, LocalFrame, PlanarPoint, DEFAULT_GRID_M};
use crate::model::{Constraint, FlowMatrix, ModelSpec, Museum, PreparedModel, Zone};
use crate::pipeline::{frame_for_zones, run_pipeline, PipelineConfig, PipelineReport, Tweet, ZoneIndex};

pub const DEFAULT_SEED: u64 = 20_110_622;

const HOME_TEXTS: [&str; 8] = [
    "Morning coffee before work",
    "Stuck in traffic again",
    "Lovely evening at home",
    "Watching the football tonight",
    "Rainy day in Yorkshire",
    "Just finished dinner",
    "Cannot wait for the weekend",
    "Walking the dog around the park",
];

const VISIT_TEXTS: [&str; 6] = [
    "Great afternoon at the museum",
    "Loving the new exhibition here",
    "Gallery visit with the kids",
    "This exhibit is brilliant",
    "Spent hours in the museum today",
    "Finally made it to the gallery",
];

const STRAY_TEXTS: [&str; 3] = [
    "Thinking about visiting a gallery someday",
    "Anyone know a good museum podcast",
    "Documentary about an exhibition tonight",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomeTweets {
    pub min: usize,
    pub max: usize,
}

impl Default for HomeTweets {
    fn default() -> Self {
        HomeTweets { min: 3, max: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub true_spec: ModelSpec,
    pub n_trips: usize,
    pub home_tweets: HomeTweets,
    /// Share of museum-related output that is decoy, in [0, 1).
    pub noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(true_spec: ModelSpec, n_trips: usize, noise: f64, seed: u64) -> Self {
        SynthConfig {
            true_spec,
            n_trips,
            home_tweets: HomeTweets::default(),
            noise,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trips < 1 {
            return Err(Error::InvalidParameter("n_trips must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::InvalidParameter(format!(
                "noise must be in [0, 1), got {}",
                self.noise
            )));
        }
        // a strict majority at home keeps the home cell the mode
        if self.home_tweets.min < 2 || self.home_tweets.max < self.home_tweets.min {
            return Err(Error::InvalidParameter("home tweets need 2 <= min <= max".into()));
        }
        if self.true_spec.constraint != Constraint::Unconstrained {
            return Err(Error::InvalidParameter(
                "synthetic corpora are drawn from unconstrained models".into(),
            ));
        }
        Ok(())
    }

    pub fn n_decoys(&self) -> usize {
        (self.noise / (1.0 - self.noise) * self.n_trips as f64).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub tweets: Vec<Tweet>,
    /// Exact sampled trip counts.
    pub ground_truth: FlowMatrix,
    /// The model matrix the trips were drawn from.
    pub expected: FlowMatrix,
}

struct Emitter {
    clock: DateTime<Utc>,
    next_id: usize,
    tweets: Vec<Tweet>,
}

impl Emitter {
    fn emit(&mut self, user: &str, location: GeoPoint, text: String, source: Option<String>) -> usize {
        self.clock += Duration::seconds(60);
        self.next_id += 1;
        self.tweets.push(Tweet {
            id: format!("t{:08}", self.next_id),
            user_id: user.to_string(),
            timestamp: self.clock,
            location,
            text,
            source,
        });
        self.tweets.len() - 1
    }
}

fn bounding_box(zones: &[Zone]) -> (GeoPoint, GeoPoint) {
    let points = zones
        .iter()
        .flat_map(|z| std::iter::once(z.centroid).chain(z.boundary.iter().flat_map(|b| b.exterior.iter().copied())));
    let (mut lo, mut hi) = (
        GeoPoint {
            lat: f64::INFINITY,
            lon: f64::INFINITY,
        },
        GeoPoint {
            lat: f64::NEG_INFINITY,
            lon: f64::NEG_INFINITY,
        },
    );
    for p in points {
        lo.lat = lo.lat.min(p.lat);
        lo.lon = lo.lon.min(p.lon);
        hi.lat = hi.lat.max(p.lat);
        hi.lon = hi.lon.max(p.lon);
    }
    (lo, hi)
}

/// Centre of the home-grid cell holding each zone's centroid, checked to lie
/// inside that zone when boundaries are known.
fn home_points(zones: &[Zone], frame: &LocalFrame) -> Result<Vec<GeoPoint>> {
    let index = if zones.iter().all(|z| z.boundary.is_some()) {
        Some(ZoneIndex::new(zones, frame)?)
    } else {
        None
    };
    zones
        .iter()
        .enumerate()
        .map(|(k, z)| {
            let centre = snap_to_grid(frame.project(z.centroid)?, DEFAULT_GRID_M)?.center(DEFAULT_GRID_M);
            if let Some(index) = &index {
                if index.locate_planar(centre)? != Some(k) {
                    return Err(Error::InvalidGeometry(format!(
                        "home cell of zone `{}` falls outside the zone",
                        z.id
                    )));
                }
            }
            frame.unproject(centre)
        })
        .collect()
}

pub fn generate_corpus(zones: &[Zone], museums: &[Museum], cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let model = PreparedModel::new(zones, museums, &cfg.true_spec, None)?;
    let expected = model.flows(cfg.true_spec.deterrence.beta)?;
    let weights = expected.values();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cumulative.push(acc);
    }
    if !(acc > 0.0) || !acc.is_finite() {
        return Err(Error::DegenerateModel);
    }

    let frame = frame_for_zones(zones)?;
    let homes = home_points(zones, &frame)?;
    let (lo, hi) = bounding_box(zones);
    let m = museums.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Emitter {
        clock: Utc.with_ymd_and_hms(2011, 6, 22, 0, 0, 0).unwrap(),
        next_id: 0,
        tweets: Vec::new(),
    };
    let mut ground_truth = FlowMatrix::zeros(expected.origin_ids().to_vec(), expected.destination_ids().to_vec());
    let mut trip_tweets = Vec::with_capacity(cfg.n_trips);

    for trip in 0..cfg.n_trips {
        let u = rng.gen::<f64>() * acc;
        let cell = cumulative.partition_point(|c| *c <= u).min(weights.len() - 1);
        let (i, j) = (cell / m, cell % m);
        ground_truth.add(i, j, 1.0);

        let user = format!("u{trip:06}");
        let n_home = rng.gen_range(cfg.home_tweets.min..=cfg.home_tweets.max);
        for _ in 0..n_home {
            let text = HOME_TEXTS[rng.gen_range(0..HOME_TEXTS.len())].to_string();
            out.emit(&user, homes[i], text, None);
        }
        let text = format!(
            "{} #{}",
            VISIT_TEXTS[rng.gen_range(0..VISIT_TEXTS.len())],
            museums[j].name.replace(' ', "")
        );
        trip_tweets.push(out.emit(&user, museums[j].location, text, None));
    }

    let random_point = |rng: &mut ChaCha8Rng| GeoPoint {
        lat: lo.lat + rng.gen::<f64>() * (hi.lat - lo.lat),
        lon: lo.lon + rng.gen::<f64>() * (hi.lon - lo.lon),
    };
    for k in 0..cfg.n_decoys() {
        let user = format!("d{k:06}");
        match k % 4 {
            0 => {
                let p = random_point(&mut rng);
                let text = HOME_TEXTS[rng.gen_range(0..HOME_TEXTS.len())].to_string();
                out.emit(&user, p, text, None);
            }
            1 => {
                let museum = &museums[rng.gen_range(0..m)];
                let text = format!("I'm at the museum: {} http://4sq.com/{k:x}", museum.name);
                out.emit(&user, museum.location, text, Some("foursquare".into()));
            }
            2 => {
                let orig = out.tweets[trip_tweets[rng.gen_range(0..trip_tweets.len())]].clone();
                let text = format!("{} http://t.co/{k:x}", orig.text);
                out.emit(&orig.user_id, orig.location, text, None);
            }
            _ => {
                let home = random_point(&mut rng);
                for _ in 0..cfg.home_tweets.min {
                    out.emit(
                        &user,
                        home,
                        HOME_TEXTS[rng.gen_range(0..HOME_TEXTS.len())].to_string(),
                        None,
                    );
                }
                let text = STRAY_TEXTS[rng.gen_range(0..STRAY_TEXTS.len())].to_string();
                out.emit(&user, random_point(&mut rng), text, None);
            }
        }
    }

    Ok(SyntheticCorpus {
        tweets: out.tweets,
        ground_truth,
        expected,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub true_beta: f64,
    pub best_beta: f64,
    pub abs_error: f64,
    pub best_r: f64,
    pub n_trips: usize,
    pub observed_total: f64,
    pub pipeline: PipelineReport,
    pub sweep: SweepResult,
}

/// Generate, filter and aggregate, then sweep β under the generating spec.
pub fn recovery_report(
    zones: &[Zone],
    museums: &[Museum],
    cfg: &SynthConfig,
    grid: &BetaGrid,
) -> Result<RecoveryReport> {
    recovery_report_with(zones, museums, cfg, grid, Execution::default())
}

pub fn recovery_report_with(
    zones: &[Zone],
    museums: &[Museum],
    cfg: &SynthConfig,
    grid: &BetaGrid,
    exec: Execution,
) -> Result<RecoveryReport> {
    let corpus = generate_corpus(zones, museums, cfg)?;
    let frame = frame_for_zones(zones)?;
    let outcome = run_pipeline(corpus.tweets, zones, museums, &frame, &PipelineConfig::default())?;
    let sweep = Calibrator::new(zones, museums, &outcome.observed.matrix, &cfg.true_spec)?.sweep(grid, exec)?;
    let true_beta = cfg.true_spec.deterrence.beta;
    Ok(RecoveryReport {
        true_beta,
        best_beta: sweep.best_beta,
        abs_error: (sweep.best_beta - true_beta).abs(),
        best_r: sweep.best_r,
        n_trips: cfg.n_trips,
        observed_total: outcome.observed.matrix.total(),
        pipeline: outcome.report,
        sweep,
    })
}

/// Square zones on a regular grid with randomly placed museums.
#[derive(Debug, Clone)]
pub struct SyntheticRegion {
    pub zones: Vec<Zone>,
    pub museums: Vec<Museum>,
}

impl SyntheticRegion {
    pub const CENTRE: GeoPoint = GeoPoint {
        lat: 53.7997,
        lon: -1.5492,
    };
    pub const ZONE_SIZE_M: f64 = 2000.0;

    pub fn new(n_zones: usize, n_museums: usize, seed: u64) -> Result<Self> {
        if n_zones == 0 || n_museums == 0 {
            return Err(Error::EmptyInput("synthetic region"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame = LocalFrame::new(Self::CENTRE)?;
        let cols = (n_zones as f64).sqrt().ceil() as usize;
        let rows = n_zones.div_ceil(cols);
        let size = Self::ZONE_SIZE_M;
        let (x0, y0) = (-(cols as f64) * size / 2.0, -(rows as f64) * size / 2.0);
        let at = |x: f64, y: f64| frame.unproject(PlanarPoint::new(x, y));

        let zones = (0..n_zones)
            .map(|k| {
                let (cx, cy) = (x0 + (k % cols) as f64 * size, y0 + (k / cols) as f64 * size);
                let ring = vec![
                    at(cx, cy)?,
                    at(cx + size, cy)?,
                    at(cx + size, cy + size)?,
                    at(cx, cy + size)?,
                ];
                let boundary = GeoPolygon {
                    exterior: ring,
                    holes: vec![],
                };
                // keep the centroid on a point the zone surely contains
                let centroid = at(cx + size / 2.0 + 7.0, cy + size / 2.0 + 7.0)?;
                Ok(Zone {
                    id: format!("Z{:03}", k + 1),
                    name: format!("Zone {}", k + 1),
                    centroid,
                    boundary: Some(boundary),
                    population: rng.gen_range(2_000.0..15_000.0f64).round(),
                    arts_share: (rng.gen_range(0.02..0.30f64) * 1000.0).round() / 1000.0,
                    earnings_proxy: (rng.gen_range(5.0..40.0f64) * 10.0).round() / 10.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let (w, h) = (cols as f64 * size, rows as f64 * size);
        let museums = (0..n_museums)
            .map(|k| {
                let location = at(x0 + rng.gen_range(0.1..0.9) * w, y0 + rng.gen_range(0.1..0.9) * h)?;
                // heavy-tailed mention counts, like real press coverage
                let mentions = (rng.gen::<f64>().powi(4) * 250.0).round() as u64;
                Ok(Museum {
                    id: format!("M{:02}", k + 1),
                    name: format!("Museum {}", k + 1),
                    location,
                    floor_area_m2: rng.gen_range(500.0..5_000.0f64).round(),
                    media_mentions: mentions,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SyntheticRegion { zones, museums })
    }
}
