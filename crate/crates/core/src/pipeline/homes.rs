//! Home-location inference, zone assignment and the observed flow matrix.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::Tweet;
use crate::error::{Error, Result};
use crate::geometry::{
    haversine_km, point_in_polygon, snap_to_grid, GeoPoint, GridCell, LocalFrame, PlanarPoint, PolygonM,
};
use crate::model::{FlowMatrix, Museum, Zone};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserHome {
    pub user_id: String,
    pub cell: GridCell,
    pub resolution_m: f64,
    pub tweet_count_at_cell: usize,
    /// Centre of the home cell.
    pub location: GeoPoint,
    pub zone_id: Option<String>,
}

// cell -> (count, earliest (timestamp, index))
type CellTally = HashMap<GridCell, (usize, (DateTime<Utc>, usize))>;

/// The busiest grid cell of every user. Ties go to the cell holding the
/// user's earliest tweet among the tied cells (then input order).
pub fn infer_home_locations(corpus: &[Tweet], frame: &LocalFrame, resolution_m: f64) -> Result<Vec<UserHome>> {
    let mut per_user: BTreeMap<&str, CellTally> = BTreeMap::new();
    for (idx, t) in corpus.iter().enumerate() {
        let cell = snap_to_grid(frame.project(t.location)?, resolution_m)?;
        let entry = per_user
            .entry(&t.user_id)
            .or_default()
            .entry(cell)
            .or_insert((0, (t.timestamp, idx)));
        entry.0 += 1;
        entry.1 = entry.1.min((t.timestamp, idx));
    }
    per_user
        .into_iter()
        .map(|(user, cells)| {
            let (cell, (count, _)) = cells
                .into_iter()
                .min_by(|(_, (ca, ea)), (_, (cb, eb))| cb.cmp(ca).then(ea.cmp(eb)))
                .expect("every user has at least one tweet");
            Ok(UserHome {
                user_id: user.to_string(),
                cell,
                resolution_m,
                tweet_count_at_cell: count,
                location: frame.unproject(cell.center(resolution_m))?,
                zone_id: None,
            })
        })
        .collect()
}

/// Zone polygons projected into a shared frame.
pub struct ZoneIndex<'a> {
    frame: LocalFrame,
    zones: &'a [Zone],
    polygons: Vec<PolygonM>,
}

impl<'a> ZoneIndex<'a> {
    pub fn new(zones: &'a [Zone], frame: &LocalFrame) -> Result<Self> {
        let polygons = zones
            .iter()
            .map(|z| {
                let b = z
                    .boundary
                    .as_ref()
                    .ok_or_else(|| Error::InvalidGeometry(format!("zone `{}` has no boundary", z.id)))?;
                frame.project_polygon(b)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ZoneIndex {
            frame: *frame,
            zones,
            polygons,
        })
    }

    /// Index of the zone containing `p`. A point on a shared boundary goes to
    /// the first containing zone in input order; a point strictly inside two
    /// zones is an error.
    pub fn locate_planar(&self, p: PlanarPoint) -> Result<Option<usize>> {
        let mut first_hit = None;
        let mut strict: Option<usize> = None;
        for (k, poly) in self.polygons.iter().enumerate() {
            if !point_in_polygon(p, poly) {
                continue;
            }
            first_hit.get_or_insert(k);
            if poly.contains_strictly(p) {
                if let Some(prev) = strict {
                    return Err(Error::AmbiguousZone(
                        self.zones[prev].id.clone(),
                        self.zones[k].id.clone(),
                    ));
                }
                strict = Some(k);
            }
        }
        Ok(strict.or(first_hit))
    }

    pub fn locate(&self, p: GeoPoint) -> Result<Option<usize>> {
        match self.frame.project(p) {
            Ok(pp) => self.locate_planar(pp),
            Err(Error::OutOfProjectionRange { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// First zone containing `p`, without the ambiguity check.
    pub fn first_containing(&self, p: GeoPoint) -> Option<usize> {
        let pp = self.frame.project(p).ok()?;
        self.polygons.iter().position(|poly| point_in_polygon(pp, poly))
    }

    pub fn zones(&self) -> &[Zone] {
        self.zones
    }
}

pub fn assign_home_zone(homes: Vec<UserHome>, zones: &[Zone], frame: &LocalFrame) -> Result<Vec<UserHome>> {
    let index = ZoneIndex::new(zones, frame)?;
    homes
        .into_iter()
        .map(|mut h| {
            let centre = h.cell.center(h.resolution_m);
            h.zone_id = index.locate_planar(centre)?.map(|k| zones[k].id.clone());
            Ok(h)
        })
        .collect()
}

/// Index of the nearest museum; ties go to the lexicographically smaller id.
pub fn nearest_museum(location: GeoPoint, museums: &[Museum]) -> Result<usize> {
    if museums.is_empty() {
        return Err(Error::EmptyInput("museums"));
    }
    let mut best: Option<(f64, usize)> = None;
    for (k, m) in museums.iter().enumerate() {
        let d = haversine_km(location, m.location)?;
        let better = match best {
            None => true,
            Some((bd, bk)) => d < bd || (d == bd && m.id < museums[bk].id),
        };
        if better {
            best = Some((d, k));
        }
    }
    Ok(best.map(|(_, k)| k).expect("museums is non-empty"))
}

pub fn assign_nearest_museum<'m>(t: &Tweet, museums: &'m [Museum]) -> Result<&'m str> {
    Ok(&museums[nearest_museum(t.location, museums)?].id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedFlows {
    pub matrix: FlowMatrix,
    /// Tweets counted into the matrix.
    pub contributing: usize,
    /// Museum tweets whose author has no home inside the zone system.
    pub without_zoned_home: usize,
}

/// Counts each museum tweet into (home zone of its author, nearest museum).
pub fn build_observed_matrix(
    museum_tweets: &[Tweet],
    homes: &[UserHome],
    zones: &[Zone],
    museums: &[Museum],
) -> Result<ObservedFlows> {
    let zone_index: HashMap<&str, usize> = zones.iter().enumerate().map(|(i, z)| (z.id.as_str(), i)).collect();
    let home_zone: HashMap<&str, usize> = homes
        .iter()
        .filter_map(|h| {
            let zid = h.zone_id.as_deref()?;
            Some(
                zone_index
                    .get(zid)
                    .map(|&i| (h.user_id.as_str(), i))
                    .ok_or_else(|| Error::Shape(format!("home zone `{zid}` is not among the zones"))),
            )
        })
        .collect::<Result<_>>()?;
    let mut matrix = FlowMatrix::zeros(
        zones.iter().map(|z| z.id.clone()).collect(),
        museums.iter().map(|m| m.id.clone()).collect(),
    );
    let (mut contributing, mut without) = (0, 0);
    for t in museum_tweets {
        match home_zone.get(t.user_id.as_str()) {
            Some(&i) => {
                matrix.add(i, nearest_museum(t.location, museums)?, 1.0);
                contributing += 1;
            }
            None => without += 1,
        }
    }
    Ok(ObservedFlows {
        matrix,
        contributing,
        without_zoned_home: without,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub level: String,
    pub n_zones: usize,
    pub n_zones_with_tweets: usize,
    pub tweets_per_nonempty_zone: f64,
}

/// Per zoning level: zones, zones holding at least one tweet, and mean
/// tweets per non-empty zone.
pub fn zone_coverage_summary(
    tweets: &[Tweet],
    zonings: &[(String, Vec<Zone>)],
    frame: &LocalFrame,
) -> Result<Vec<CoverageRow>> {
    zonings
        .iter()
        .map(|(level, zones)| {
            let index = ZoneIndex::new(zones, frame)?;
            let mut counts = vec![0usize; zones.len()];
            for t in tweets {
                if let Some(k) = index.first_containing(t.location) {
                    counts[k] += 1;
                }
            }
            let nonempty = counts.iter().filter(|c| **c > 0).count();
            let in_zones: usize = counts.iter().sum();
            Ok(CoverageRow {
                level: level.clone(),
                n_zones: zones.len(),
                n_zones_with_tweets: nonempty,
                tweets_per_nonempty_zone: if nonempty == 0 {
                    0.0
                } else {
                    in_zones as f64 / nonempty as f64
                },
            })
        })
        .collect()
}
