//! Partitions, areal datasets and the coarse-over-fine aggregation operator.

mod aggregation;
mod io;
mod polygon;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use aggregation::{aggregate, build_aggregation, AggregationMap};
pub use io::{
    load_dataset_csv, load_partition, load_partition_file, parse_dataset_csv, partition_to_geojson, write_dataset_csv,
};
pub use polygon::{BoundingBox, Containment, Geometry, Polygon};

/// A point in the (planar) study area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x1: f64,
    pub x2: f64,
}

impl Location {
    pub const fn new(x1: f64, x2: f64) -> Self {
        Location { x1, x2 }
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite()
    }

    pub fn sq_dist(&self, other: &Location) -> f64 {
        let d1 = self.x1 - other.x1;
        let d2 = self.x2 - other.x2;
        d1 * d1 + d2 * d2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub geometry: Geometry,
    pub centroid: Location,
    pub area: f64,
}

impl Region {
    /// Builds a region, computing its area and area-weighted centroid.
    pub fn new(id: impl Into<String>, geometry: Geometry) -> Result<Self> {
        let id = id.into();
        if geometry.vertices().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::Validation(format!("region `{id}` has non-finite coordinates")));
        }
        let (area, centroid) = geometry.area_centroid();
        if !(area > 0.0) {
            return Err(Error::Validation(format!("region `{id}` is degenerate (zero area)")));
        }
        Ok(Region {
            id,
            geometry,
            centroid,
            area,
        })
    }
}

/// An ordered set of regions. The order defines vector indexing everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub name: String,
    regions: Vec<Region>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Partition {
    pub fn new(name: impl Into<String>, regions: Vec<Region>) -> Result<Self> {
        let name = name.into();
        if regions.is_empty() {
            return Err(Error::Validation(format!("partition `{name}` has no regions")));
        }
        let mut index = HashMap::with_capacity(regions.len());
        for (k, r) in regions.iter().enumerate() {
            if index.insert(r.id.clone(), k).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate region id `{}` in partition `{name}`",
                    r.id
                )));
            }
        }
        Ok(Partition { name, regions, index })
    }

    /// Regular `nx × ny` grid of rectangular cells over `[x0, x1] × [y0, y1]`.
    /// Cells are ordered row by row from the bottom-left; ids are
    /// `{prefix}{row:03}_{col:03}` so lexicographic order matches index order.
    pub fn grid(name: impl Into<String>, prefix: &str, nx: usize, ny: usize, bounds: [f64; 4]) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Validation(format!("invalid grid size {nx}x{ny}")));
        }
        let [x0, y0, x1, y1] = bounds;
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::Validation(format!("invalid grid bounds {bounds:?}")));
        }
        let dx = (x1 - x0) / nx as f64;
        let dy = (y1 - y0) / ny as f64;
        let mut regions = Vec::with_capacity(nx * ny);
        for row in 0..ny {
            for col in 0..nx {
                let cx0 = x0 + col as f64 * dx;
                let cy0 = y0 + row as f64 * dy;
                // Snap the last edge to the bounds so neighbouring cells share exact vertices.
                let cx1 = if col + 1 == nx { x1 } else { x0 + (col + 1) as f64 * dx };
                let cy1 = if row + 1 == ny { y1 } else { y0 + (row + 1) as f64 * dy };
                regions.push(Region::new(
                    format!("{prefix}{row:03}_{col:03}"),
                    Geometry::polygon(Polygon::rectangle(cx0, cy0, cx1, cy1)),
                )?);
            }
        }
        Partition::new(name, regions)
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, k: usize) -> &Region {
        &self.regions[k]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        if self.index.len() == self.regions.len() {
            self.index.get(id).copied()
        } else {
            // deserialized without the index
            self.regions.iter().position(|r| r.id == id)
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.regions.iter().map(|r| r.id.as_str())
    }

    pub fn centroids(&self) -> Vec<Location> {
        self.regions.iter().map(|r| r.centroid).collect()
    }

    pub fn areas(&self) -> Vec<f64> {
        self.regions.iter().map(|r| r.area).collect()
    }

    pub fn bounding_box(&self) -> BoundingBox {
        self.regions
            .iter()
            .filter_map(|r| r.geometry.bounding_box())
            .reduce(|a, b| a.union(&b))
            .expect("partition has at least one region")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantityKind {
    Intensive,
    Extensive,
}

/// One real value per region of a partition.
#[derive(Debug, Clone)]
pub struct ArealDataset {
    pub id: String,
    partition: Arc<Partition>,
    values: Vec<f64>,
    kind: QuantityKind,
}

impl ArealDataset {
    pub fn new(id: impl Into<String>, partition: Arc<Partition>, values: Vec<f64>, kind: QuantityKind) -> Result<Self> {
        let id = id.into();
        if values.len() != partition.len() {
            return Err(Error::Shape(format!(
                "dataset `{id}` has {} values for {} regions",
                values.len(),
                partition.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "dataset `{id}` has a non-finite value for region `{}`",
                partition.region(k).id
            )));
        }
        Ok(ArealDataset {
            id,
            partition,
            values,
            kind,
        })
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> QuantityKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Divides extensive values by region area.
///
/// Calling this on an already intensive dataset is an error rather than a
/// no-op so values are never divided twice.
pub fn to_intensive(d: &ArealDataset) -> Result<ArealDataset> {
    if d.kind == QuantityKind::Intensive {
        return Err(Error::Validation(format!("dataset `{}` is already intensive", d.id)));
    }
    let values = d
        .values
        .iter()
        .zip(d.partition.regions())
        .map(|(v, r)| {
            if r.area > 0.0 {
                Ok(v / r.area)
            } else {
                Err(Error::Validation(format!("region `{}` has zero area", r.id)))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ArealDataset::new(d.id.clone(), d.partition.clone(), values, QuantityKind::Intensive)
}
