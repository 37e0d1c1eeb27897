//! From a raw geotagged corpus to the observed flow matrix.
//!
//! Stages run in a fixed order: automated-account removal, semantic filter,
//! spatial filter, de-duplication, check-in removal. Home locations are
//! inferred from the corpus as it stands after automated-account removal,
//! so they reflect all of a user's activity rather than only museum tweets.

mod filters;
mod homes;
mod museums;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use filters::{
    dedup, is_checkin, matches_keywords, normalize_text, remove_automated_accounts, remove_checkins, semantic_filter,
    spatial_filter, tokenize, BotParams, Footprint, DEFAULT_BUFFER_M, DEFAULT_CHECKIN_PATTERNS, DEFAULT_KEYWORDS,
};
pub use homes::{
    assign_home_zone, assign_nearest_museum, build_observed_matrix, infer_home_locations, nearest_museum,
    zone_coverage_summary, CoverageRow, ObservedFlows, UserHome, ZoneIndex,
};
pub use museums::{extract_museums, FeatureGeometry, TaggedFeature, FALLBACK_FLOOR_AREA_M2};

use crate::error::{Error, Result};
use crate::geometry::{GeoPoint, LocalFrame, DEFAULT_GRID_M};
use crate::model::{Museum, Zone};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tweet {
    pub id: String,
    pub user_id: String,
    pub timestamp: DateTime<Utc>,
    pub location: GeoPoint,
    pub text: String,
    #[serde(default)]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub tweets_in: usize,
    pub tweets_out: usize,
    pub users_remaining: usize,
}

impl StageReport {
    pub fn new(stage: &str, tweets_in: usize, kept: &[Tweet]) -> Self {
        StageReport {
            stage: stage.to_string(),
            tweets_in,
            tweets_out: kept.len(),
            users_remaining: distinct_users(kept),
        }
    }
}

pub fn distinct_users(tweets: &[Tweet]) -> usize {
    tweets.iter().map(|t| t.user_id.as_str()).collect::<HashSet<_>>().len()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stages: Vec<StageReport>,
}

impl PipelineReport {
    pub fn push(&mut self, stage: StageReport) {
        self.stages.push(stage);
    }

    /// Every stage keeps at most what it was given, and each stage starts
    /// from what the previous one produced.
    pub fn is_monotone(&self) -> bool {
        self.stages.iter().all(|s| s.tweets_out <= s.tweets_in)
            && self.stages.windows(2).all(|w| w[1].tweets_in <= w[0].tweets_out)
    }
}

impl fmt::Display for PipelineReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} {:>10} {:>10} {:>8}", "stage", "in", "out", "users")?;
        for s in &self.stages {
            writeln!(
                f,
                "{:<20} {:>10} {:>10} {:>8}",
                s.stage, s.tweets_in, s.tweets_out, s.users_remaining
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Bots,
    Semantic,
    Spatial,
    Dedup,
    Checkins,
}

impl Stage {
    pub const DEFAULT: [Stage; 4] = [Stage::Bots, Stage::Semantic, Stage::Dedup, Stage::Checkins];
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bots" => Ok(Stage::Bots),
            "semantic" => Ok(Stage::Semantic),
            "spatial" => Ok(Stage::Spatial),
            "dedup" => Ok(Stage::Dedup),
            "checkins" => Ok(Stage::Checkins),
            other => Err(Error::InvalidParameter(format!("unknown stage `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub stages: Vec<Stage>,
    pub keywords: Vec<String>,
    pub checkin_patterns: Vec<String>,
    pub bots: BotParams,
    pub footprints: Vec<Footprint>,
    pub buffer_m: f64,
    pub grid_m: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stages: Stage::DEFAULT.to_vec(),
            keywords: DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            checkin_patterns: DEFAULT_CHECKIN_PATTERNS.iter().map(|s| s.to_string()).collect(),
            bots: BotParams::default(),
            footprints: Vec::new(),
            buffer_m: DEFAULT_BUFFER_M,
            grid_m: DEFAULT_GRID_M,
        }
    }
}

/// Output of [`filter_corpus`].
#[derive(Debug, Clone)]
pub struct Filtered {
    /// Corpus after automated-account removal only; the input to home inference.
    pub cleaned: Vec<Tweet>,
    /// Tweets that survived every selected stage.
    pub selected: Vec<Tweet>,
    pub report: PipelineReport,
}

/// Runs the selected stages in their canonical order.
pub fn filter_corpus(corpus: Vec<Tweet>, frame: &LocalFrame, cfg: &PipelineConfig) -> Result<Filtered> {
    let mut stages = cfg.stages.clone();
    stages.sort();
    stages.dedup();
    if stages.contains(&Stage::Spatial) && cfg.footprints.is_empty() {
        return Err(Error::InvalidParameter(
            "spatial stage selected without footprints".into(),
        ));
    }
    let mut report = PipelineReport::default();
    report.push(StageReport::new("input", corpus.len(), &corpus));

    let cleaned = if stages.contains(&Stage::Bots) {
        let (kept, r) = remove_automated_accounts(corpus, frame, cfg.bots)?;
        report.push(r);
        kept
    } else {
        corpus
    };
    let mut current = cleaned.clone();
    for stage in stages {
        let (kept, r) = match stage {
            Stage::Bots => continue,
            Stage::Semantic => semantic_filter(current, &cfg.keywords)?,
            Stage::Spatial => spatial_filter(current, &cfg.footprints, cfg.buffer_m)?,
            Stage::Dedup => dedup(current),
            Stage::Checkins => remove_checkins(current, &cfg.checkin_patterns)?,
        };
        report.push(r);
        current = kept;
    }
    Ok(Filtered {
        cleaned,
        selected: current,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub museum_tweets: Vec<Tweet>,
    pub homes: Vec<UserHome>,
    pub observed: ObservedFlows,
    pub report: PipelineReport,
}

/// Filters, infers and zones homes, and aggregates the observed matrix.
pub fn run_pipeline(
    corpus: Vec<Tweet>,
    zones: &[Zone],
    museums: &[Museum],
    frame: &LocalFrame,
    cfg: &PipelineConfig,
) -> Result<PipelineOutcome> {
    let Filtered {
        cleaned,
        selected,
        mut report,
    } = filter_corpus(corpus, frame, cfg)?;
    let homes = infer_home_locations(&cleaned, frame, cfg.grid_m)?;
    drop(cleaned);
    let homes = assign_home_zone(homes, zones, frame)?;
    let observed = build_observed_matrix(&selected, &homes, zones, museums)?;
    report.push(StageReport {
        stage: "zoned_home".into(),
        tweets_in: selected.len(),
        tweets_out: observed.contributing,
        users_remaining: {
            let zoned: HashSet<&str> = homes
                .iter()
                .filter(|h| h.zone_id.is_some())
                .map(|h| h.user_id.as_str())
                .collect();
            selected
                .iter()
                .filter(|t| zoned.contains(t.user_id.as_str()))
                .map(|t| t.user_id.as_str())
                .collect::<HashSet<_>>()
                .len()
        },
    });
    Ok(PipelineOutcome {
        museum_tweets: selected,
        homes,
        observed,
        report,
    })
}

/// The frame every pipeline stage shares: centred on the zones' extent.
pub fn frame_for_zones(zones: &[Zone]) -> Result<LocalFrame> {
    LocalFrame::around(zones.iter().map(|z| z.centroid))
}
