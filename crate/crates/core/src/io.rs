//! File formats: NDJSON tweets, GeoJSON zones/museums/footprints, CSV
//! matrices and sweep tables, flow-line GeoJSON.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use geojson::{feature::Id, Feature, FeatureCollection, GeoJson, Geometry, JsonObject, JsonValue, Value};
use serde::{Deserialize, Serialize};

use crate::calibration::SweepResult;
use crate::error::{Error, Result};
use crate::geometry::{GeoPoint, GeoPolygon};
use crate::model::{FlowMatrix, Museum, Zone};
use crate::pipeline::{FeatureGeometry, Footprint, TaggedFeature, Tweet, UserHome};

#[derive(Serialize, Deserialize)]
struct TweetRecord {
    id: String,
    user_id: String,
    timestamp: String,
    lat: f64,
    lon: f64,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|n| n.and_utc())
}

/// Reads one tweet per non-blank line. Tweet ids must be unique.
pub fn read_tweets(reader: impl BufRead) -> Result<Vec<Tweet>> {
    let mut tweets = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = || format!("tweets line {}", n + 1);
        let rec: TweetRecord = serde_json::from_str(&line).map_err(|e| Error::parse(ctx(), e))?;
        let timestamp = parse_timestamp(&rec.timestamp)
            .ok_or_else(|| Error::parse(ctx(), format!("bad timestamp `{}`", rec.timestamp)))?;
        let location = GeoPoint {
            lat: rec.lat,
            lon: rec.lon,
        };
        location.validate()?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::parse(ctx(), format!("duplicate tweet id `{}`", rec.id)));
        }
        tweets.push(Tweet {
            id: rec.id,
            user_id: rec.user_id,
            timestamp,
            location,
            text: rec.text,
            source: rec.source,
        });
    }
    Ok(tweets)
}

pub fn read_tweets_file(path: impl AsRef<Path>) -> Result<Vec<Tweet>> {
    read_tweets(std::io::BufReader::new(fs::File::open(path)?))
}

pub fn write_tweets(mut writer: impl Write, tweets: &[Tweet]) -> Result<()> {
    for t in tweets {
        let rec = TweetRecord {
            id: t.id.clone(),
            user_id: t.user_id.clone(),
            timestamp: t.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
            lat: t.location.lat,
            lon: t.location.lon,
            text: t.text.clone(),
            source: t.source.clone(),
        };
        serde_json::to_writer(&mut writer, &rec).map_err(|e| Error::parse("tweets", e))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

fn features(text: &str, what: &str) -> Result<Vec<Feature>> {
    match text.parse::<GeoJson>().map_err(|e| Error::parse(what, e))? {
        GeoJson::FeatureCollection(fc) => Ok(fc.features),
        GeoJson::Feature(f) => Ok(vec![f]),
        GeoJson::Geometry(_) => Err(Error::parse(what, "expected a FeatureCollection")),
    }
}

fn position(p: &[f64]) -> Result<GeoPoint> {
    match p {
        [lon, lat, ..] => {
            let g = GeoPoint { lat: *lat, lon: *lon };
            g.validate()?;
            Ok(g)
        }
        _ => Err(Error::InvalidGeometry("position needs two coordinates".into())),
    }
}

fn polygon(rings: &[Vec<Vec<f64>>]) -> Result<GeoPolygon> {
    let mut rings = rings
        .iter()
        .map(|r| r.iter().map(|p| position(p)).collect::<Result<Vec<_>>>());
    let exterior = rings
        .next()
        .ok_or_else(|| Error::InvalidGeometry("polygon without rings".into()))??;
    Ok(GeoPolygon {
        exterior,
        holes: rings.collect::<Result<_>>()?,
    })
}

fn feature_geometry(f: &Feature) -> Result<FeatureGeometry> {
    let g = f
        .geometry
        .as_ref()
        .ok_or_else(|| Error::InvalidGeometry("feature without geometry".into()))?;
    match &g.value {
        Value::Point(p) => Ok(FeatureGeometry::Point(position(p)?)),
        Value::Polygon(rings) => Ok(FeatureGeometry::Polygon(polygon(rings)?)),
        Value::MultiPolygon(parts) if parts.len() == 1 => Ok(FeatureGeometry::Polygon(polygon(&parts[0])?)),
        other => Err(Error::InvalidGeometry(format!(
            "unsupported geometry type {}",
            other.type_name()
        ))),
    }
}

fn feature_id(f: &Feature) -> Option<String> {
    match &f.id {
        Some(Id::String(s)) => Some(s.clone()),
        Some(Id::Number(n)) => Some(n.to_string()),
        None => None,
    }
}

fn prop<'a>(f: &'a Feature, key: &str) -> Option<&'a JsonValue> {
    f.properties.as_ref()?.get(key).filter(|v| !v.is_null())
}

fn prop_string(f: &Feature, key: &str) -> Option<String> {
    prop(f, key).map(|v| match v {
        JsonValue::String(s) => s.clone(),
        other => other.to_string(),
    })
}

fn prop_f64(f: &Feature, key: &str, what: &str) -> Result<f64> {
    match prop(f, key) {
        Some(JsonValue::Number(n)) => n.as_f64(),
        Some(JsonValue::String(s)) => s.trim().parse().ok(),
        _ => None,
    }
    .ok_or_else(|| Error::InvalidAttribute(format!("{what}: missing or non-numeric `{key}`")))
}

fn ident(f: &Feature, index: usize, what: &str) -> Result<String> {
    prop_string(f, "id")
        .or_else(|| feature_id(f))
        .ok_or_else(|| Error::InvalidAttribute(format!("{what} feature {index} has no id")))
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::InvalidAttribute(format!("duplicate {what} id `{id}`")));
        }
    }
    Ok(())
}

/// Zone features: Polygon geometry (the centroid is computed) or Point
/// geometry (centroid only).
pub fn parse_zones(text: &str) -> Result<Vec<Zone>> {
    let zones = features(text, "zones")?
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let id = ident(f, k, "zone")?;
            let what = format!("zone `{id}`");
            let (centroid, boundary) = match feature_geometry(f)? {
                FeatureGeometry::Point(p) => (p, None),
                FeatureGeometry::Polygon(poly) => (poly.centroid_area()?.0, Some(poly)),
            };
            let zone = Zone {
                name: prop_string(f, "name").unwrap_or_else(|| id.clone()),
                id,
                centroid,
                boundary,
                population: prop_f64(f, "population", &what)?,
                arts_share: prop_f64(f, "arts_share", &what)?,
                earnings_proxy: prop_f64(f, "earnings_proxy", &what)?,
            };
            zone.validate()?;
            Ok(zone)
        })
        .collect::<Result<Vec<_>>>()?;
    check_unique(zones.iter().map(|z| z.id.as_str()), "zone")?;
    Ok(zones)
}

pub fn parse_museums(text: &str) -> Result<Vec<Museum>> {
    let museums = features(text, "museums")?
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let id = ident(f, k, "museum")?;
            let what = format!("museum `{id}`");
            let location = match feature_geometry(f)? {
                FeatureGeometry::Point(p) => p,
                FeatureGeometry::Polygon(poly) => poly.centroid_area()?.0,
            };
            let mentions = prop_f64(f, "media_mentions", &what)?;
            if !(mentions >= 0.0) || mentions.fract() != 0.0 {
                return Err(Error::InvalidAttribute(format!("{what}: media_mentions = {mentions}")));
            }
            let museum = Museum {
                name: prop_string(f, "name").unwrap_or_else(|| id.clone()),
                id,
                location,
                floor_area_m2: prop_f64(f, "floor_area_m2", &what)?,
                media_mentions: mentions as u64,
            };
            museum.validate()?;
            Ok(museum)
        })
        .collect::<Result<Vec<_>>>()?;
    check_unique(museums.iter().map(|m| m.id.as_str()), "museum")?;
    Ok(museums)
}

/// Footprint polygons keyed by their `museum_id` property (or `id`).
pub fn parse_footprints(text: &str) -> Result<Vec<Footprint>> {
    features(text, "footprints")?
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let museum_id = prop_string(f, "museum_id")
                .map(Ok)
                .unwrap_or_else(|| ident(f, k, "footprint"))?;
            match feature_geometry(f)? {
                FeatureGeometry::Polygon(polygon) => Ok(Footprint { museum_id, polygon }),
                FeatureGeometry::Point(_) => Err(Error::InvalidGeometry(format!(
                    "footprint of `{museum_id}` is not a polygon"
                ))),
            }
        })
        .collect()
}

/// Map features with their properties flattened to string tags.
pub fn parse_tagged_features(text: &str) -> Result<Vec<TaggedFeature>> {
    features(text, "features")?
        .iter()
        .map(|f| {
            let tags: BTreeMap<String, String> = f
                .properties
                .iter()
                .flatten()
                .filter(|(_, v)| !v.is_null())
                .map(|(k, v)| {
                    let v = match v {
                        JsonValue::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    (k.clone(), v)
                })
                .collect();
            Ok(TaggedFeature {
                id: feature_id(f),
                geometry: feature_geometry(f)?,
                tags,
            })
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::parse(path.display().to_string(), e))
}

pub fn read_zones(path: impl AsRef<Path>) -> Result<Vec<Zone>> {
    parse_zones(&read_text(path.as_ref())?)
}

pub fn read_museums(path: impl AsRef<Path>) -> Result<Vec<Museum>> {
    parse_museums(&read_text(path.as_ref())?)
}

pub fn read_footprints(path: impl AsRef<Path>) -> Result<Vec<Footprint>> {
    parse_footprints(&read_text(path.as_ref())?)
}

pub fn read_tagged_features(path: impl AsRef<Path>) -> Result<Vec<TaggedFeature>> {
    parse_tagged_features(&read_text(path.as_ref())?)
}

fn pos(p: GeoPoint) -> Vec<f64> {
    vec![p.lon, p.lat]
}

fn ring(points: &[GeoPoint]) -> Vec<Vec<f64>> {
    let mut r: Vec<Vec<f64>> = points.iter().map(|p| pos(*p)).collect();
    if points.first() != points.last() {
        r.push(pos(points[0]));
    }
    r
}

fn feature(geometry: Value, properties: JsonObject) -> Feature {
    Feature {
        bbox: None,
        geometry: Some(Geometry::new(geometry)),
        id: None,
        properties: Some(properties),
        foreign_members: None,
    }
}

fn collection(features: Vec<Feature>) -> String {
    let fc = FeatureCollection {
        bbox: None,
        features,
        foreign_members: None,
    };
    GeoJson::from(fc).to_string()
}

fn object(pairs: Vec<(&str, JsonValue)>) -> JsonObject {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn zones_to_geojson(zones: &[Zone]) -> String {
    collection(
        zones
            .iter()
            .map(|z| {
                let geometry = match &z.boundary {
                    Some(b) => Value::Polygon(std::iter::once(&b.exterior).chain(&b.holes).map(|r| ring(r)).collect()),
                    None => Value::Point(pos(z.centroid)),
                };
                feature(
                    geometry,
                    object(vec![
                        ("id", z.id.clone().into()),
                        ("name", z.name.clone().into()),
                        ("population", z.population.into()),
                        ("arts_share", z.arts_share.into()),
                        ("earnings_proxy", z.earnings_proxy.into()),
                    ]),
                )
            })
            .collect(),
    )
}

pub fn museums_to_geojson(museums: &[Museum]) -> String {
    collection(
        museums
            .iter()
            .map(|m| {
                feature(
                    Value::Point(pos(m.location)),
                    object(vec![
                        ("id", m.id.clone().into()),
                        ("name", m.name.clone().into()),
                        ("floor_area_m2", m.floor_area_m2.into()),
                        ("media_mentions", m.media_mentions.into()),
                    ]),
                )
            })
            .collect(),
    )
}

/// Straight lines from zone centroid to museum, one per nonzero cell, with
/// the flow in a `count` property.
pub fn flow_lines_geojson(matrix: &FlowMatrix, zones: &[Zone], museums: &[Museum]) -> Result<String> {
    let aligned = matrix.aligned_to(
        &zones.iter().map(|z| z.id.clone()).collect::<Vec<_>>(),
        &museums.iter().map(|m| m.id.clone()).collect::<Vec<_>>(),
    )?;
    let mut out = Vec::new();
    for (i, z) in zones.iter().enumerate() {
        for (j, m) in museums.iter().enumerate() {
            let count = aligned.get(i, j);
            if count == 0.0 {
                continue;
            }
            out.push(feature(
                Value::LineString(vec![pos(z.centroid), pos(m.location)]),
                object(vec![
                    ("origin", z.id.clone().into()),
                    ("destination", m.id.clone().into()),
                    ("count", count.into()),
                ]),
            ));
        }
    }
    Ok(collection(out))
}

/// Header row `origin,<destination ids>`, then one row per origin.
pub fn write_matrix_csv(writer: impl Write, matrix: &FlowMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::parse("matrix csv", e);
    w.write_record(std::iter::once("origin").chain(matrix.destination_ids().iter().map(String::as_str)))
        .map_err(csv_err)?;
    for (i, id) in matrix.origin_ids().iter().enumerate() {
        let row = matrix.row(i).iter().map(|v| v.to_string());
        w.write_record(std::iter::once(id.clone()).chain(row))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(reader: impl Read) -> Result<FlowMatrix> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = r.records();
    let header = records
        .next()
        .ok_or(Error::EmptyInput("matrix csv"))?
        .map_err(|e| Error::parse("matrix csv", e))?;
    let destinations: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let (mut origins, mut values) = (Vec::new(), Vec::new());
    for (n, rec) in records.enumerate() {
        let ctx = || format!("matrix csv row {}", n + 2);
        let rec = rec.map_err(|e| Error::parse(ctx(), e))?;
        let mut fields = rec.iter();
        origins.push(fields.next().unwrap_or_default().to_string());
        for v in fields {
            values.push(v.trim().parse::<f64>().map_err(|e| Error::parse(ctx(), e))?);
        }
    }
    FlowMatrix::new(origins, destinations, values)
}

pub fn read_matrix_file(path: impl AsRef<Path>) -> Result<FlowMatrix> {
    read_matrix_csv(fs::File::open(path)?)
}

/// Columns `beta,r,rms,spec`; an undefined grid point leaves `r` and `rms` empty.
pub fn write_sweep_csv(writer: impl Write, sweeps: &[SweepResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::parse("sweep csv", e);
    w.write_record(["beta", "r", "rms", "spec"]).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for s in sweeps {
        let label = s.spec.label();
        for k in 0..s.betas.len() {
            w.write_record([
                s.betas[k].to_string(),
                opt(s.r_values[k]),
                opt(s.rms_values[k]),
                label.clone(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per user: home cell, its centre and the zone it falls in.
pub fn write_homes_csv(writer: impl Write, homes: &[UserHome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::parse("homes csv", e);
    w.write_record(["user_id", "zone_id", "lat", "lon", "cell_x", "cell_y", "tweets_at_cell"])
        .map_err(csv_err)?;
    for h in homes {
        w.write_record([
            h.user_id.clone(),
            h.zone_id.clone().unwrap_or_default(),
            h.location.lat.to_string(),
            h.location.lon.to_string(),
            h.cell.ix.to_string(),
            h.cell.iy.to_string(),
            h.tweet_count_at_cell.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::parse("json", e))
}
