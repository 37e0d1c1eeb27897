//! Per-tweet cleaning and filtering stages.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use regex::Regex;

use super::{StageReport, Tweet};
use crate::error::{Error, Result};
use crate::geometry::{distance_to_polygon_m, snap_to_grid, GeoPolygon, LocalFrame, PolygonM};

pub const DEFAULT_KEYWORDS: [&str; 4] = ["museum", "gallery", "exhibition", "exhibit"];
pub const DEFAULT_CHECKIN_PATTERNS: [&str; 2] = ["4sq.com", "foursquare"];
pub const DEFAULT_BUFFER_M: f64 = 10.0;

const TOKEN_SEPARATORS: [char; 6] = ['.', ',', '!', '?', ':', ';'];

/// Thresholds for spotting automated, geographically static accounts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BotParams {
    /// Accounts with more tweets than this are candidates.
    pub activity_threshold: usize,
    /// Minimum share of a candidate's tweets in its busiest grid cell.
    pub static_fraction: f64,
    pub resolution_m: f64,
}

impl Default for BotParams {
    fn default() -> Self {
        BotParams {
            activity_threshold: 1000,
            static_fraction: 0.95,
            resolution_m: crate::geometry::DEFAULT_GRID_M,
        }
    }
}

pub fn remove_automated_accounts(
    corpus: Vec<Tweet>,
    frame: &LocalFrame,
    params: BotParams,
) -> Result<(Vec<Tweet>, StageReport)> {
    if params.activity_threshold < 1 {
        return Err(Error::InvalidParameter("activity threshold must be at least 1".into()));
    }
    if !(params.static_fraction > 0.0 && params.static_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "static fraction must be in (0, 1], got {}",
            params.static_fraction
        )));
    }
    let mut per_user: HashMap<&str, HashMap<crate::geometry::GridCell, usize>> = HashMap::new();
    for t in &corpus {
        let cell = snap_to_grid(frame.project(t.location)?, params.resolution_m)?;
        *per_user.entry(&t.user_id).or_default().entry(cell).or_default() += 1;
    }
    let bots: HashSet<String> = per_user
        .into_iter()
        .filter(|(_, cells)| {
            let total: usize = cells.values().sum();
            let busiest = cells.values().copied().max().unwrap_or(0);
            total > params.activity_threshold && busiest as f64 >= params.static_fraction * total as f64
        })
        .map(|(u, _)| u.to_string())
        .collect();
    let n_in = corpus.len();
    let kept: Vec<Tweet> = corpus.into_iter().filter(|t| !bots.contains(&t.user_id)).collect();
    let report = StageReport::new("automated_accounts", n_in, &kept);
    Ok((kept, report))
}

/// Splits on whitespace and `. , ! ? : ;`, dropping words of one or two
/// characters.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split(|c: char| c.is_whitespace() || TOKEN_SEPARATORS.contains(&c))
        .filter(|w| w.chars().count() > 2)
        .collect()
}

/// True if any token starts with any (lower-cased) keyword.
pub fn matches_keywords(text: &str, keywords: &[String]) -> bool {
    tokenize(text).into_iter().any(|tok| {
        let tok = tok.to_lowercase();
        keywords.iter().any(|k| tok.starts_with(k.as_str()))
    })
}

pub fn semantic_filter(corpus: Vec<Tweet>, keywords: &[String]) -> Result<(Vec<Tweet>, StageReport)> {
    if keywords.is_empty() {
        return Err(Error::InvalidParameter("keyword list is empty".into()));
    }
    let keywords: Vec<String> = keywords.iter().map(|k| k.to_lowercase()).collect();
    let n_in = corpus.len();
    let kept: Vec<Tweet> = corpus
        .into_iter()
        .filter(|t| matches_keywords(&t.text, &keywords))
        .collect();
    let report = StageReport::new("semantic", n_in, &kept);
    Ok((kept, report))
}

/// A museum floor plan in geographic coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub museum_id: String,
    pub polygon: GeoPolygon,
}

struct PreparedFootprint {
    frame: LocalFrame,
    polygon: PolygonM,
}

pub fn spatial_filter(
    corpus: Vec<Tweet>,
    footprints: &[Footprint],
    buffer_m: f64,
) -> Result<(Vec<Tweet>, StageReport)> {
    if !(buffer_m >= 0.0) || !buffer_m.is_finite() {
        return Err(Error::InvalidParameter(format!("buffer must be >= 0, got {buffer_m}")));
    }
    let prepared = footprints
        .iter()
        .map(|fp| {
            let first =
                *fp.polygon.exterior.first().ok_or_else(|| {
                    Error::InvalidGeometry(format!("footprint of `{}` has no vertices", fp.museum_id))
                })?;
            let frame = LocalFrame::new(first)?;
            Ok(PreparedFootprint {
                frame,
                polygon: frame.project_polygon(&fp.polygon)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let near = |t: &Tweet| {
        prepared.iter().any(|fp| match fp.frame.project(t.location) {
            Ok(p) => distance_to_polygon_m(p, &fp.polygon) <= buffer_m,
            // too far away to be in any buffer
            Err(_) => false,
        })
    };
    let n_in = corpus.len();
    let kept: Vec<Tweet> = corpus.into_iter().filter(|t| near(t)).collect();
    let report = StageReport::new("spatial", n_in, &kept);
    Ok((kept, report))
}

fn url_pattern() -> &'static Regex {
    static URL: OnceLock<Regex> = OnceLock::new();
    URL.get_or_init(|| Regex::new(r"(?i)(?:[a-z][a-z0-9+.\-]*://\S*|\bt\.co/\S*)").expect("valid url regex"))
}

/// Text with URL-shaped substrings removed and whitespace collapsed.
pub fn normalize_text(text: &str) -> String {
    let stripped = url_pattern().replace_all(text, " ");
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Keeps the earliest tweet of each (user, normalised text) pair.
pub fn dedup(corpus: Vec<Tweet>) -> (Vec<Tweet>, StageReport) {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| {
        (&corpus[a].user_id, corpus[a].timestamp, a).cmp(&(&corpus[b].user_id, corpus[b].timestamp, b))
    });
    let mut seen: HashSet<(&str, String)> = HashSet::new();
    let mut keep = vec![false; corpus.len()];
    for i in order {
        let t = &corpus[i];
        keep[i] = seen.insert((t.user_id.as_str(), normalize_text(&t.text)));
    }
    let n_in = corpus.len();
    let kept: Vec<Tweet> = corpus
        .into_iter()
        .zip(keep)
        .filter_map(|(t, k)| k.then_some(t))
        .collect();
    let report = StageReport::new("dedup", n_in, &kept);
    (kept, report)
}

pub fn is_checkin(t: &Tweet, patterns: &[String]) -> bool {
    let text = t.text.to_lowercase();
    let source = t.source.as_deref().map(str::to_lowercase);
    patterns.iter().any(|p| {
        let p = p.to_lowercase();
        text.contains(&p) || source.as_deref().is_some_and(|s| s.contains(&p))
    })
}

pub fn remove_checkins(corpus: Vec<Tweet>, patterns: &[String]) -> Result<(Vec<Tweet>, StageReport)> {
    if patterns.is_empty() {
        return Err(Error::InvalidParameter("check-in pattern list is empty".into()));
    }
    let n_in = corpus.len();
    let kept: Vec<Tweet> = corpus.into_iter().filter(|t| !is_checkin(t, patterns)).collect();
    let report = StageReport::new("checkins", n_in, &kept);
    Ok((kept, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeoPoint;
    use crate::pipeline::tests::tweet;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn keywords() -> Vec<String> {
        strings(&DEFAULT_KEYWORDS)
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("Joust time!"), vec!["Joust", "time"]);
        assert_eq!(tokenize("at a museum; great"), vec!["museum", "great"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("café,déjà  vu?!"), vec!["café", "déjà"]);
    }

    #[test]
    fn semantic_examples() {
        let corpus = vec![
            tweet("1", "u", 0, 53.8, -1.55, "Visited the museum today"),
            tweet("2", "u", 1, 53.8, -1.55, "Two MUSEUMS in one day"),
            tweet("3", "u", 2, 53.8, -1.55, "amusement park"),
            tweet("4", "u", 3, 53.8, -1.55, "new exhibitions opening"),
        ];
        let (kept, report) = semantic_filter(corpus, &keywords()).unwrap();
        let ids: Vec<_> = kept.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, ["1", "2", "4"]);
        assert_eq!((report.tweets_in, report.tweets_out), (4, 3));
        assert!(semantic_filter(vec![], &[]).is_err());
    }

    #[test]
    fn bot_rules() {
        let frame = LocalFrame::new(GeoPoint { lat: 53.8, lon: -1.55 }).unwrap();
        let mut corpus = Vec::new();
        for k in 0..2000 {
            corpus.push(tweet(&format!("s{k}"), "static", k, 53.8001, -1.5501, "weather update"));
        }
        for k in 0..2000 {
            // 50 cells, 40 tweets each, spaced about a kilometre apart
            let cell = (k % 50) as f64;
            corpus.push(tweet(&format!("m{k}"), "mobile", k, 53.7 + cell * 0.01, -1.55, "hello"));
        }
        for k in 0..500 {
            corpus.push(tweet(&format!("q{k}"), "quiet", k, 53.8001, -1.5501, "hi there"));
        }
        let (kept, report) = remove_automated_accounts(corpus, &frame, BotParams::default()).unwrap();
        assert_eq!(kept.len(), 2500);
        assert!(kept.iter().all(|t| t.user_id != "static"));
        assert_eq!(report.users_remaining, 2);
    }

    #[test]
    fn spatial_buffer() {
        let origin = GeoPoint { lat: 53.79, lon: -1.53 };
        let frame = LocalFrame::new(origin).unwrap();
        let square: Vec<GeoPoint> = [(0.0, 0.0), (40.0, 0.0), (40.0, 40.0), (0.0, 40.0)]
            .iter()
            .map(|&(x, y)| frame.unproject(crate::geometry::PlanarPoint::new(x, y)).unwrap())
            .collect();
        let fp = Footprint {
            museum_id: "armouries".into(),
            polygon: GeoPolygon {
                exterior: square,
                holes: vec![],
            },
        };
        let at = |x: f64, y: f64| frame.unproject(crate::geometry::PlanarPoint::new(x, y)).unwrap();
        let corpus = vec![
            tweet("in", "u", 0, at(20.0, 20.0).lat, at(20.0, 20.0).lon, "x"),
            tweet("nine", "u", 1, at(49.0, 20.0).lat, at(49.0, 20.0).lon, "x"),
            tweet("eleven", "u", 2, at(51.0, 20.0).lat, at(51.0, 20.0).lon, "x"),
            tweet("faraway", "u", 3, 10.0, 10.0, "x"),
        ];
        let (kept, _) = spatial_filter(corpus, &[fp], 10.0).unwrap();
        let ids: Vec<_> = kept.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, ["in", "nine"]);
    }

    #[test]
    fn dedup_rules() {
        let corpus = vec![
            tweet("a", "u1", 5, 53.8, -1.5, "At the museum"),
            tweet("b", "u1", 1, 53.8, -1.5, "At the museum"),
            tweet("c", "u1", 7, 53.8, -1.5, "Nice gallery http://t.co/abc"),
            tweet("d", "u1", 8, 53.8, -1.5, "Nice gallery  https://example.org/x?y=1"),
            tweet("e", "u2", 9, 53.8, -1.5, "At the museum"),
        ];
        let (kept, report) = dedup(corpus);
        let ids: Vec<_> = kept.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, ["b", "c", "e"]);
        assert_eq!(report.tweets_out, 3);
        assert_eq!(normalize_text("hi  there t.co/xyz "), "hi there");
    }

    #[test]
    fn checkin_rules() {
        let patterns = strings(&DEFAULT_CHECKIN_PATTERNS);
        let mut via_source = tweet("c", "u", 2, 53.8, -1.5, "Lovely museum");
        via_source.source = Some("<a href=\"http://foursquare.com\">Foursquare</a>".into());
        let corpus = vec![
            tweet(
                "a",
                "u",
                0,
                53.8,
                -1.5,
                "I'm at Royal Armouries (@ Royal Armouries) http://4sq.com/x",
            ),
            tweet("b", "u", 1, 53.8, -1.5, "I love this museum"),
            via_source,
        ];
        let (kept, _) = remove_checkins(corpus, &patterns).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "b");
    }
}
