use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use geojson::{Feature, FeatureCollection, GeoJson, JsonObject, JsonValue, Value};

use super::{ArealDataset, Geometry, Partition, Polygon, QuantityKind, Region};
use crate::error::{Error, Result};

/// Parses a GeoJSON FeatureCollection into a partition. Each feature needs a
/// polygonal geometry and a string `id` property; document order becomes the
/// partition order.
pub fn load_partition(name: &str, document: &str) -> Result<Partition> {
    let gj: GeoJson = document.parse().map_err(|e| Error::parse(name, e))?;
    let fc = match gj {
        GeoJson::FeatureCollection(fc) => fc,
        _ => return Err(Error::parse(name, "expected a FeatureCollection")),
    };
    if fc.features.is_empty() {
        return Err(Error::parse(name, "FeatureCollection has no features"));
    }
    let mut regions = Vec::with_capacity(fc.features.len());
    for (k, feature) in fc.features.iter().enumerate() {
        let id = feature_id(feature)
            .ok_or_else(|| Error::parse(name, format!("feature {k} has no string `id` property")))?;
        let geometry = feature
            .geometry
            .as_ref()
            .ok_or_else(|| Error::parse(name, format!("feature `{id}` has no geometry")))?;
        let geometry = convert_geometry(&geometry.value)
            .ok_or_else(|| Error::parse(name, format!("feature `{id}` is not a valid polygon")))?;
        regions.push(Region::new(id, geometry)?);
    }
    let partition = Partition::new(name, regions)?;
    warn_if_geographic(&partition);
    Ok(partition)
}

pub fn load_partition_file(path: &Path) -> Result<Partition> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    load_partition(&name, &text)
}

fn feature_id(f: &Feature) -> Option<String> {
    if let Some(JsonValue::String(s)) = f.property("id") {
        return Some(s.clone());
    }
    match &f.id {
        Some(geojson::feature::Id::String(s)) => Some(s.clone()),
        _ => None,
    }
}

fn convert_ring(ring: &[Vec<f64>]) -> Option<Vec<[f64; 2]>> {
    let pts: Option<Vec<[f64; 2]>> = ring.iter().map(|p| (p.len() >= 2).then(|| [p[0], p[1]])).collect();
    let pts = pts?;
    (pts.len() >= 3).then_some(pts)
}

fn convert_polygon(rings: &[Vec<Vec<f64>>]) -> Option<Polygon> {
    let (ext, holes) = rings.split_first()?;
    let exterior = convert_ring(ext)?;
    let holes = holes.iter().map(|h| convert_ring(h)).collect::<Option<Vec<_>>>()?;
    Some(Polygon::new(exterior, holes))
}

fn convert_geometry(value: &Value) -> Option<Geometry> {
    match value {
        Value::Polygon(rings) => Some(Geometry::polygon(convert_polygon(rings)?)),
        Value::MultiPolygon(polys) => {
            let polygons = polys.iter().map(|p| convert_polygon(p)).collect::<Option<Vec<_>>>()?;
            (!polygons.is_empty()).then_some(Geometry { polygons })
        }
        _ => None,
    }
}

/// Coordinates that sit far from the origin relative to their spread, inside
/// the lon/lat ranges, are most likely degrees. They are used as planar
/// coordinates regardless.
fn warn_if_geographic(p: &Partition) {
    let bb = p.bounding_box();
    let in_range = bb.min[0] >= -180.0 && bb.max[0] <= 180.0 && bb.min[1] >= -90.0 && bb.max[1] <= 90.0;
    let centre = [(bb.min[0] + bb.max[0]) / 2.0, (bb.min[1] + bb.max[1]) / 2.0];
    let offset = centre[0].abs().max(centre[1].abs());
    if in_range && offset > 10.0 * bb.extent() {
        log::warn!(
            "partition `{}` looks like longitude/latitude; treating coordinates as planar",
            p.name
        );
    }
}

/// Serializes a partition back to a GeoJSON FeatureCollection.
pub fn partition_to_geojson(p: &Partition) -> String {
    let ring = |r: &Vec<[f64; 2]>| -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = r.iter().map(|v| vec![v[0], v[1]]).collect();
        if let Some(first) = out.first().cloned() {
            out.push(first);
        }
        out
    };
    let features = p
        .regions()
        .iter()
        .map(|r| {
            let polys: Vec<Vec<Vec<Vec<f64>>>> = r
                .geometry
                .polygons
                .iter()
                .map(|poly| std::iter::once(&poly.exterior).chain(&poly.holes).map(ring).collect())
                .collect();
            let value = if polys.len() == 1 {
                Value::Polygon(polys.into_iter().next().unwrap())
            } else {
                Value::MultiPolygon(polys)
            };
            let mut props = JsonObject::new();
            props.insert("id".into(), JsonValue::String(r.id.clone()));
            Feature {
                bbox: None,
                geometry: Some(geojson::Geometry::new(value)),
                id: None,
                properties: Some(props),
                foreign_members: None,
            }
        })
        .collect();
    FeatureCollection {
        bbox: None,
        features,
        foreign_members: None,
    }
    .to_string()
}

/// Reads `region_id,value` rows and orders them by the partition. Missing,
/// unknown or repeated ids are errors.
pub fn parse_dataset_csv<R: Read>(
    id: &str,
    partition: Arc<Partition>,
    kind: QuantityKind,
    reader: R,
) -> Result<ArealDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse(id, e))?.clone();
    if headers.len() < 2 || &headers[0] != "region_id" || &headers[1] != "value" {
        return Err(Error::parse(id, "expected header `region_id,value`"));
    }
    let mut values = vec![None; partition.len()];
    let mut extra = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(id, e))?;
        let rid = rec.get(0).unwrap_or_default();
        let v: f64 = rec
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|e| Error::parse(id, format!("region `{rid}`: {e}")))?;
        match partition.index_of(rid) {
            Some(k) => {
                if values[k].replace(v).is_some() {
                    return Err(Error::Validation(format!("dataset `{id}` repeats region `{rid}`")));
                }
            }
            None => extra.push(rid.to_string()),
        }
    }
    if !extra.is_empty() {
        return Err(Error::Validation(format!(
            "dataset `{id}` has unknown regions: {}",
            extra.join(", ")
        )));
    }
    let missing: Vec<&str> = values
        .iter()
        .zip(partition.ids())
        .filter(|(v, _)| v.is_none())
        .map(|(_, rid)| rid)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "dataset `{id}` is missing regions: {}",
            missing.join(", ")
        )));
    }
    ArealDataset::new(id, partition, values.into_iter().flatten().collect(), kind)
}

pub fn load_dataset_csv(id: &str, partition: Arc<Partition>, kind: QuantityKind, path: &Path) -> Result<ArealDataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset_csv(id, partition, kind, f)
}

pub fn write_dataset_csv<W: Write>(ids: &[&str], values: &[f64], w: W) -> Result<()> {
    if ids.len() != values.len() {
        return Err(Error::Shape(format!("{} ids for {} values", ids.len(), values.len())));
    }
    let unique: HashSet<_> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::Validation("duplicate region ids".into()));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["region_id", "value"])
        .map_err(|e| Error::parse("csv output", e))?;
    for (rid, v) in ids.iter().zip(values) {
        out.write_record([rid.to_string(), v.to_string()])
            .map_err(|e| Error::parse("csv output", e))?;
    }
    out.flush().map_err(|e| Error::io("csv output", e))?;
    Ok(())
}
