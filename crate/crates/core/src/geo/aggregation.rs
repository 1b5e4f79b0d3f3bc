use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Containment, Partition};
use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic operator `H` mapping fine-partition values to coarse
/// averages.
#[derive(Debug, Clone)]
pub struct AggregationMap {
    coarse: Arc<Partition>,
    fine: Arc<Partition>,
    h: DMatrix<f64>,
    /// For each fine region, the coarse region with the largest weight in its column.
    membership: Vec<usize>,
    simple: bool,
}

impl AggregationMap {
    /// Wraps a user-supplied matrix (e.g. population weights), checking it
    /// is finite, nonnegative and row-stochastic, and that every fine region
    /// contributes somewhere.
    pub fn from_matrix(coarse: Arc<Partition>, fine: Arc<Partition>, h: DMatrix<f64>) -> Result<Self> {
        if h.nrows() != coarse.len() || h.ncols() != fine.len() {
            return Err(Error::Shape(format!(
                "aggregation matrix is {}x{}, partitions are {}x{}",
                h.nrows(),
                h.ncols(),
                coarse.len(),
                fine.len()
            )));
        }
        if let Some(v) = h.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Validation(format!(
                "aggregation matrix entry {v} is negative or non-finite"
            )));
        }
        for (i, row) in h.row_iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Validation(format!(
                    "row `{}` of the aggregation matrix sums to {s}",
                    coarse.region(i).id
                )));
            }
        }
        let mut membership = Vec::with_capacity(fine.len());
        let mut simple = true;
        for (j, col) in h.column_iter().enumerate() {
            let mut best: Option<(usize, f64)> = None;
            let mut nonzero = 0;
            for (i, &v) in col.iter().enumerate() {
                if v > 0.0 {
                    nonzero += 1;
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((i, v));
                    }
                }
            }
            match best {
                Some((i, _)) => membership.push(i),
                None => {
                    return Err(Error::Validation(format!(
                        "fine region `{}` has no weight in any coarse region",
                        fine.region(j).id
                    )))
                }
            }
            simple &= nonzero == 1;
        }
        if simple {
            // uniform weights within each row
            for i in 0..h.nrows() {
                let members: Vec<f64> = h.row(i).iter().copied().filter(|v| *v > 0.0).collect();
                let n = members.len() as f64;
                simple &= members.iter().all(|v| (v - 1.0 / n).abs() <= ROW_SUM_TOL);
            }
        }
        Ok(AggregationMap {
            coarse,
            fine,
            h,
            membership,
            simple,
        })
    }

    pub fn coarse(&self) -> &Arc<Partition> {
        &self.coarse
    }

    pub fn fine(&self) -> &Arc<Partition> {
        &self.fine
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    /// Fine-region indices assigned to coarse region `i`.
    pub fn members(&self, i: usize) -> Vec<usize> {
        (0..self.fine.len()).filter(|&j| self.membership[j] == i).collect()
    }

    /// Whether this is the uniform one-coarse-region-per-fine-region operator.
    pub fn is_simple(&self) -> bool {
        self.simple
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["coarse_id".to_string()];
        header.extend(self.fine.ids().map(str::to_string));
        out.write_record(&header).map_err(csv_err)?;
        for (i, row) in self.h.row_iter().enumerate() {
            let mut rec = vec![self.coarse.region(i).id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("aggregation csv", e))?;
        Ok(())
    }

    /// Reads a matrix exported by [`AggregationMap::write_csv`]. Rows and
    /// columns are matched by id, so their order in the file is free.
    pub fn read_csv<R: Read>(coarse: Arc<Partition>, fine: Arc<Partition>, r: R) -> Result<Self> {
        let src = "aggregation matrix";
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rdr.headers().map_err(|e| Error::parse(src, e))?.clone();
        let mut col_of = Vec::with_capacity(header.len().saturating_sub(1));
        for id in header.iter().skip(1) {
            let j = fine
                .index_of(id)
                .ok_or_else(|| Error::Validation(format!("unknown fine region `{id}` in {src}")))?;
            col_of.push(j);
        }
        let mut seen_cols = vec![false; fine.len()];
        for &j in &col_of {
            if std::mem::replace(&mut seen_cols[j], true) {
                return Err(Error::Validation(format!(
                    "fine region `{}` repeated in {src}",
                    fine.region(j).id
                )));
            }
        }
        if let Some(j) = seen_cols.iter().position(|s| !s) {
            return Err(Error::Validation(format!(
                "fine region `{}` missing from {src}",
                fine.region(j).id
            )));
        }
        let mut h = DMatrix::zeros(coarse.len(), fine.len());
        let mut seen_rows = vec![false; coarse.len()];
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::parse(src, e))?;
            let id = rec.get(0).unwrap_or_default();
            let i = coarse
                .index_of(id)
                .ok_or_else(|| Error::Validation(format!("unknown coarse region `{id}` in {src}")))?;
            if std::mem::replace(&mut seen_rows[i], true) {
                return Err(Error::Validation(format!("coarse region `{id}` repeated in {src}")));
            }
            for (field, &j) in rec.iter().skip(1).zip(&col_of) {
                h[(i, j)] = field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(src, format!("row `{id}`: {e}")))?;
            }
        }
        if let Some(i) = seen_rows.iter().position(|s| !s) {
            return Err(Error::Validation(format!(
                "coarse region `{}` missing from {src}",
                coarse.region(i).id
            )));
        }
        AggregationMap::from_matrix(coarse, fine, h)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::parse("csv output", e)
}

/// Assigns each fine region to the coarse region containing its centroid and
/// builds the uniform averaging matrix. A centroid on a shared boundary goes
/// to the lexicographically smallest coarse id.
pub fn build_aggregation(coarse: Arc<Partition>, fine: Arc<Partition>) -> Result<AggregationMap> {
    let mut membership = Vec::with_capacity(fine.len());
    let mut unassigned = Vec::new();
    for region in fine.regions() {
        let owner = coarse
            .regions()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.geometry.contains(region.centroid) != Containment::Outside)
            .min_by(|(_, a), (_, b)| a.id.cmp(&b.id))
            .map(|(i, _)| i);
        match owner {
            Some(i) => membership.push(i),
            None => unassigned.push(region.id.clone()),
        }
    }
    if !unassigned.is_empty() {
        return Err(Error::UnassignedRegions(unassigned));
    }
    let mut counts = vec![0usize; coarse.len()];
    for &i in &membership {
        counts[i] += 1;
    }
    let empty: Vec<String> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(i, _)| coarse.region(i).id.clone())
        .collect();
    if !empty.is_empty() {
        return Err(Error::EmptyCoarseRegions(empty));
    }
    let mut h = DMatrix::zeros(coarse.len(), fine.len());
    for (j, &i) in membership.iter().enumerate() {
        h[(i, j)] = 1.0 / counts[i] as f64;
    }
    Ok(AggregationMap {
        coarse,
        fine,
        h,
        membership,
        simple: true,
    })
}

/// `H · fine_values`. For the uniform operator this is computed as member
/// sums divided by member counts, so a constant field maps to exactly the
/// same constant.
pub fn aggregate(map: &AggregationMap, fine_values: &[f64]) -> Result<DVector<f64>> {
    if fine_values.len() != map.fine.len() {
        return Err(Error::Shape(format!(
            "{} fine values for {} fine regions",
            fine_values.len(),
            map.fine.len()
        )));
    }
    if map.simple {
        let mut sums = vec![0.0; map.coarse.len()];
        let mut counts = vec![0usize; map.coarse.len()];
        for (j, &i) in map.membership.iter().enumerate() {
            sums[i] += fine_values[j];
            counts[i] += 1;
        }
        Ok(DVector::from_iterator(
            sums.len(),
            sums.iter().zip(&counts).map(|(s, &c)| s / c as f64),
        ))
    } else {
        Ok(&map.h * DVector::from_column_slice(fine_values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Geometry, Polygon, Region};

    fn rect(id: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> Region {
        Region::new(id, Geometry::polygon(Polygon::rectangle(x0, y0, x1, y1))).unwrap()
    }

    fn halves() -> Arc<Partition> {
        Arc::new(Partition::new("coarse", vec![rect("A", 0., 0., 0.5, 1.), rect("B", 0.5, 0., 1., 1.)]).unwrap())
    }

    fn quad() -> Arc<Partition> {
        // column order (cell11, cell21, cell12, cell22): cellRC with R the row from the bottom
        Arc::new(
            Partition::new(
                "fine",
                vec![
                    rect("cell11", 0., 0., 0.5, 0.5),
                    rect("cell21", 0.5, 0., 1., 0.5),
                    rect("cell12", 0., 0.5, 0.5, 1.),
                    rect("cell22", 0.5, 0.5, 1., 1.),
                ],
            )
            .unwrap(),
        )
    }

    #[test]
    fn halves_over_quad() {
        let m = build_aggregation(halves(), quad()).unwrap();
        let expected = DMatrix::from_row_slice(2, 4, &[0.5, 0., 0.5, 0., 0., 0.5, 0., 0.5]);
        assert_eq!(m.matrix(), &expected);
        assert_eq!(aggregate(&m, &[1., 2., 3., 4.]).unwrap().as_slice(), &[2.0, 3.0]);
        assert_eq!(m.members(0), vec![0, 2]);
        assert!(aggregate(&m, &[1.0]).is_err());
    }

    #[test]
    fn identical_partitions_give_identity() {
        let m = build_aggregation(quad(), quad()).unwrap();
        assert_eq!(m.matrix(), &DMatrix::identity(4, 4));
        let v = [0.3, -1.0, 7.5, 2.0];
        assert_eq!(aggregate(&m, &v).unwrap().as_slice(), &v);
    }

    #[test]
    fn boundary_tie_goes_to_smallest_id() {
        // fine cell centred exactly on x = 0.5
        let fine = Arc::new(
            Partition::new(
                "f",
                vec![
                    rect("mid", 0.25, 0., 0.75, 1.),
                    rect("l", 0., 0., 0.25, 1.),
                    rect("r", 0.75, 0., 1., 1.),
                ],
            )
            .unwrap(),
        );
        let coarse =
            Arc::new(Partition::new("c", vec![rect("Z", 0.5, 0., 1., 1.), rect("Y", 0., 0., 0.5, 1.)]).unwrap());
        let m = build_aggregation(coarse, fine).unwrap();
        assert_eq!(m.membership()[0], 1, "Y < Z");
    }

    #[test]
    fn unassigned_and_empty_errors() {
        let fine =
            Arc::new(Partition::new("f", vec![rect("in", 0., 0., 0.5, 1.), rect("out", 5., 5., 6., 6.)]).unwrap());
        match build_aggregation(halves(), fine) {
            Err(Error::UnassignedRegions(ids)) => assert_eq!(ids, vec!["out".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
        let fine = Arc::new(Partition::new("f", vec![rect("in", 0., 0., 0.5, 1.)]).unwrap());
        match build_aggregation(halves(), fine) {
            Err(Error::EmptyCoarseRegions(ids)) => assert_eq!(ids, vec!["B".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_field_preserved_exactly() {
        let coarse = Arc::new(Partition::grid("c", "c", 3, 1, [0., 0., 1., 1.]).unwrap());
        let fine = Arc::new(Partition::grid("f", "f", 9, 7, [0., 0., 1., 1.]).unwrap());
        let m = build_aggregation(coarse, fine.clone()).unwrap();
        let ones = vec![1.0; fine.len()];
        assert!(aggregate(&m, &ones).unwrap().iter().all(|v| *v == 1.0));
        for row in m.matrix().row_iter() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
        for col in m.matrix().column_iter() {
            assert_eq!(col.iter().filter(|v| **v != 0.0).count(), 1);
        }
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let m = build_aggregation(halves(), quad()).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("coarse_id,cell11,cell21,cell12,cell22\n"));
        let back = AggregationMap::read_csv(halves(), quad(), buf.as_slice()).unwrap();
        assert_eq!(back.matrix(), m.matrix());
        assert!(back.is_simple());

        let bad = "coarse_id,cell11,cell21,cell12,cell22\nA,0.5,0,0.4,0\nB,0,0.5,0,0.5\n";
        assert!(AggregationMap::read_csv(halves(), quad(), bad.as_bytes()).is_err());
        let weighted = "coarse_id,cell11,cell21,cell12,cell22\nA,0.25,0.25,0.5,0\nB,0,0.5,0,0.5\n";
        let w = AggregationMap::read_csv(halves(), quad(), weighted.as_bytes()).unwrap();
        assert!(!w.is_simple());
        let agg = aggregate(&w, &[1., 2., 3., 4.]).unwrap();
        assert!((agg[0] - (0.25 + 0.5 + 1.5)).abs() < 1e-15);
    }
}
