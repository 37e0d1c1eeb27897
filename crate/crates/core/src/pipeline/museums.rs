//! Museum extraction from tagged map features.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::Result;
use crate::geometry::{haversine_km, point_in_polygon, GeoPoint, GeoPolygon, LocalFrame};
use crate::model::Museum;

/// Floor area assigned to a point-only museum with no `floor_area_m2` tag.
pub const FALLBACK_FLOOR_AREA_M2: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureGeometry {
    Point(GeoPoint),
    Polygon(GeoPolygon),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggedFeature {
    pub id: Option<String>,
    pub geometry: FeatureGeometry,
    pub tags: BTreeMap<String, String>,
}

impl TaggedFeature {
    fn tag(&self, key: &str) -> Option<&str> {
        self.tags.get(key).map(String::as_str)
    }

    fn name(&self) -> Option<&str> {
        self.tag("name").map(str::trim).filter(|n| !n.is_empty())
    }

    fn is_museum(&self) -> bool {
        self.tag("tourism")
            .is_some_and(|t| t.trim().eq_ignore_ascii_case("museum"))
            || self.name().is_some_and(|n| n.to_lowercase().contains("museum"))
    }
}

struct Candidate<'a> {
    feature: &'a TaggedFeature,
    location: GeoPoint,
    area_m2: Option<f64>,
}

/// Selects museum features and resolves them into one point per museum.
///
/// A point lying inside a kept polygon with the same name is dropped, and
/// same-name features within `merge_radius_m` of each other (single linkage)
/// are merged. Location is the area-weighted centroid of the merged polygons,
/// or the mean of the points when there are none.
pub fn extract_museums(features: &[TaggedFeature], merge_radius_m: f64) -> Result<Vec<Museum>> {
    let mut candidates = Vec::new();
    for f in features.iter().filter(|f| f.is_museum()) {
        let (location, area_m2) = match &f.geometry {
            FeatureGeometry::Point(p) => {
                p.validate()?;
                (*p, None)
            }
            FeatureGeometry::Polygon(poly) => {
                let (c, a) = poly.centroid_area()?;
                (c, Some(a))
            }
        };
        candidates.push(Candidate {
            feature: f,
            location,
            area_m2,
        });
    }

    let key = |c: &Candidate| c.feature.name().map(str::to_lowercase);

    // duplicate points inside a same-name polygon
    let mut dropped = HashSet::new();
    for (i, c) in candidates.iter().enumerate() {
        let FeatureGeometry::Point(p) = c.feature.geometry else {
            continue;
        };
        let Some(name) = key(c) else { continue };
        for other in &candidates {
            let FeatureGeometry::Polygon(poly) = &other.feature.geometry else {
                continue;
            };
            if key(other).as_deref() != Some(name.as_str()) {
                continue;
            }
            let frame = LocalFrame::new(other.location)?;
            if let Ok(pp) = frame.project(p) {
                if point_in_polygon(pp, &frame.project_polygon(poly)?) {
                    dropped.insert(i);
                    break;
                }
            }
        }
    }
    let kept: Vec<&Candidate> = candidates
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, c)| c)
        .collect();

    // single-linkage clusters among same-name features
    let mut parent: Vec<usize> = (0..kept.len()).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        parent[i] = r;
        r
    }
    for i in 0..kept.len() {
        for j in (i + 1)..kept.len() {
            let same_name = key(kept[i]).is_some() && key(kept[i]) == key(kept[j]);
            if same_name && 1000.0 * haversine_km(kept[i].location, kept[j].location)? <= merge_radius_m {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<&Candidate>> = BTreeMap::new();
    for (i, c) in kept.iter().enumerate() {
        clusters.entry(find(&mut parent, i)).or_default().push(c);
    }

    let mut used_ids: HashMap<String, usize> = HashMap::new();
    let mut museums = Vec::with_capacity(clusters.len());
    for (n, members) in clusters.into_values().enumerate() {
        let first = members[0].feature;
        let name = members
            .iter()
            .find_map(|c| c.feature.name())
            .unwrap_or("unnamed museum")
            .to_string();
        let polygons: Vec<&&Candidate> = members.iter().filter(|c| c.area_m2.is_some()).collect();
        let location = if polygons.is_empty() {
            mean_point(members.iter().map(|c| (c.location, 1.0)))
        } else {
            mean_point(polygons.iter().map(|c| (c.location, c.area_m2.unwrap_or(0.0))))
        };
        let tagged_area = members
            .iter()
            .find_map(|c| {
                c.feature
                    .tag("floor_area_m2")
                    .and_then(|v| v.trim().parse::<f64>().ok())
            })
            .filter(|a| *a > 0.0);
        let polygon_area: f64 = members.iter().filter_map(|c| c.area_m2).sum();
        let floor_area_m2 = tagged_area.unwrap_or(if polygon_area > 0.0 {
            polygon_area
        } else {
            FALLBACK_FLOOR_AREA_M2
        });
        let media_mentions = members
            .iter()
            .find_map(|c| {
                c.feature
                    .tag("media_mentions")
                    .and_then(|v| v.trim().parse::<u64>().ok())
            })
            .unwrap_or(0);

        let base = first
            .tag("id")
            .map(str::to_string)
            .or_else(|| first.id.clone())
            .unwrap_or_else(|| format!("museum-{}", n + 1));
        let count = used_ids.entry(base.clone()).or_insert(0);
        *count += 1;
        let id = if *count == 1 { base } else { format!("{base}-{count}") };

        museums.push(Museum {
            id,
            name,
            location,
            floor_area_m2,
            media_mentions,
        });
    }
    Ok(museums)
}

fn mean_point(points: impl Iterator<Item = (GeoPoint, f64)>) -> GeoPoint {
    let (mut lat, mut lon, mut w) = (0.0, 0.0, 0.0);
    for (p, weight) in points {
        lat += p.lat * weight;
        lon += p.lon * weight;
        w += weight;
    }
    GeoPoint {
        lat: lat / w,
        lon: lon / w,
    }
}
