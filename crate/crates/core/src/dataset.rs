//! Data containers, CSV interchange and partition comparison.
//!
//! A [`Dataset`] is an N×M matrix of finite reals with one opaque id per row
//! and, optionally, one ground-truth class per row. Rows with no class (for
//! example injected outliers) carry `None`.
//!
//! Partitions are compared through their contingency table. Label alignment
//! and clustering accuracy both solve the resulting assignment problem
//! exactly with the Hungarian method.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;

use crate::error::{Error, Result};
use crate::metric::argmax;

/// Tolerance on membership column sums.
pub const COLUMN_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Array2<f64>,
    ids: Vec<String>,
    labels: Option<Vec<Option<usize>>>,
}

impl Dataset {
    pub fn new(
        points: Array2<f64>,
        ids: Vec<String>,
        labels: Option<Vec<Option<usize>>>,
    ) -> Result<Self> {
        let (n, m) = points.dim();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if m == 0 {
            return Err(Error::invalid("dataset needs at least one feature column"));
        }
        if ids.len() != n {
            return Err(Error::shape(format!("{} ids for {} rows", ids.len(), n)));
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "row {}, column {}",
                pos / m,
                pos % m
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::shape(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    n
                )));
            }
        }
        Ok(Dataset { points, ids, labels })
    }

    /// Dataset with row-number ids and no labels.
    pub fn from_points(points: Array2<f64>) -> Result<Self> {
        let ids = (0..points.nrows()).map(|i| i.to_string()).collect();
        Dataset::new(points, ids, None)
    }

    /// Dataset with row-number ids and a class for every row.
    pub fn with_labels(points: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let ids = (0..points.nrows()).map(|i| i.to_string()).collect();
        Dataset::new(points, ids, Some(labels.into_iter().map(Some).collect()))
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> Option<&[Option<usize>]> {
        self.labels.as_deref()
    }

    /// Number of ground-truth classes (largest class index + 1), if labelled.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().flatten().map(|&c| c + 1).max().unwrap_or(0))
    }

    /// New dataset holding the given rows in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Dataset> {
        let m = self.dim();
        let mut data = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            if r >= self.len() {
                return Err(Error::shape(format!("row {r} out of range")));
            }
            data.extend(self.points.row(r).iter().copied());
        }
        let points = Array2::from_shape_vec((rows.len(), m), data)
            .map_err(|e| Error::shape(e.to_string()))?;
        let ids = rows.iter().map(|&r| self.ids[r].clone()).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&r| l[r]).collect());
        Dataset::new(points, ids, labels)
    }

    /// Same rows with replaced feature values.
    pub fn with_points(&self, points: Array2<f64>) -> Result<Dataset> {
        Dataset::new(points, self.ids.clone(), self.labels.clone())
    }
}

/// Reads a dataset from CSV.
///
/// The first row is a header. A first column named `id` holds row ids and a
/// last column named `label` holds ground-truth classes; every other column
/// must be numeric. An empty label cell, `-1` or `outlier` marks a row with no
/// class.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    let has_id = header.first().is_some_and(|h| h.eq_ignore_ascii_case("id"));
    let has_label = header.len() > usize::from(has_id)
        && header.last().is_some_and(|h| h.eq_ignore_ascii_case("label"));
    let first = usize::from(has_id);
    let last = header.len() - usize::from(has_label);
    if last <= first {
        return Err(Error::invalid("no numeric feature columns"));
    }
    let m = last - first;

    let mut values = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| csv_error(e, line))?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        ids.push(if has_id {
            record[0].to_string()
        } else {
            row_idx.to_string()
        });
        for col in first..last {
            let cell = &record[col];
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric value {cell:?} in column {:?}", header[col]),
            })?;
            values.push(v);
        }
        if has_label {
            labels.push(parse_label(&record[header.len() - 1], line)?);
        }
    }
    if ids.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let points = Array2::from_shape_vec((ids.len(), m), values)
        .map_err(|e| Error::shape(e.to_string()))?;
    Dataset::new(points, ids, has_label.then_some(labels))
}

fn parse_label(cell: &str, line: usize) -> Result<Option<usize>> {
    if cell.is_empty() || cell == "-1" || cell.eq_ignore_ascii_case("outlier") {
        return Ok(None);
    }
    cell.parse().map(Some).map_err(|_| Error::Parse {
        line,
        message: format!("invalid label {cell:?}"),
    })
}

fn csv_error(e: csv::Error, line: usize) -> Error {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(line);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Writes `id,f0..f{M-1}[,label]` rows. Outlier rows get label `-1`.
pub fn write_csv<W: std::io::Write>(data: &Dataset, mut out: W) -> std::io::Result<()> {
    let mut header = vec!["id".to_string()];
    header.extend((0..data.dim()).map(|j| format!("f{j}")));
    if data.labels.is_some() {
        header.push("label".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for i in 0..data.len() {
        write!(out, "{}", data.ids[i])?;
        for v in data.points.row(i) {
            write!(out, ",{v:?}")?;
        }
        if let Some(labels) = &data.labels {
            match labels[i] {
                Some(c) => write!(out, ",{c}")?,
                None => write!(out, ",-1")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_csv(data, &mut w).map_err(|e| Error::io(path, e))?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

/// Crisp assignment of N points to `k` clusters.
///
/// Construction only checks that labels are below `k`. Clusterers in this
/// crate never return empty clusters; [`Partition::compact`] removes them from
/// partitions built by hand.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    assignment: Vec<usize>,
    k: usize,
}

impl Partition {
    pub fn new(assignment: Vec<usize>, k: usize) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(&bad) = assignment.iter().find(|&&a| a >= k) {
            return Err(Error::invalid(format!("label {bad} out of range for k = {k}")));
        }
        Ok(Partition { assignment, k })
    }

    /// Partition whose `k` is one more than the largest label.
    pub fn from_labels(assignment: Vec<usize>) -> Result<Self> {
        let k = assignment.iter().max().map_or(0, |&m| m + 1);
        Partition::new(assignment, k)
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[usize] {
        &self.assignment
    }

    pub fn label(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn into_labels(self) -> Vec<usize> {
        self.assignment
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    /// True when every label in `0..k` is used.
    pub fn is_compact(&self) -> bool {
        self.cluster_sizes().iter().all(|&s| s > 0)
    }

    /// Drops empty clusters and renumbers the rest densely in increasing
    /// order of their old label. Returns the new partition and, for each old
    /// label, its new label (or `None` if it was empty).
    pub fn compact(&self) -> (Partition, Vec<Option<usize>>) {
        let sizes = self.cluster_sizes();
        let mut mapping = vec![None; self.k];
        let mut next = 0;
        for (old, &s) in sizes.iter().enumerate() {
            if s > 0 {
                mapping[old] = Some(next);
                next += 1;
            }
        }
        let assignment = self
            .assignment
            .iter()
            .map(|&a| mapping[a].expect("used label"))
            .collect();
        (Partition { assignment, k: next }, mapping)
    }

    /// Applies `perm[old] = new`; `perm` must be a permutation of `0..k`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Partition> {
        if perm.len() != self.k {
            return Err(Error::shape(format!(
                "permutation of length {} for k = {}",
                perm.len(),
                self.k
            )));
        }
        let mut seen = vec![false; self.k];
        for &p in perm {
            if p >= self.k || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid("relabeling is not a permutation"));
            }
        }
        Ok(Partition {
            assignment: self.assignment.iter().map(|&a| perm[a]).collect(),
            k: self.k,
        })
    }

    /// Restricts the partition to the given point indices.
    pub fn subset(&self, rows: &[usize]) -> Result<Partition> {
        Partition::new(rows.iter().map(|&r| self.assignment[r]).collect(), self.k)
    }
}

/// Fuzzy assignment stored as a c×n membership matrix with unit column sums.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyPartition {
    memberships: Array2<f64>,
}

impl FuzzyPartition {
    pub fn new(memberships: Array2<f64>) -> Result<Self> {
        let (c, n) = memberships.dim();
        if c == 0 || n == 0 {
            return Err(Error::shape("membership matrix must be non-empty"));
        }
        for (k, col) in memberships.columns().into_iter().enumerate() {
            if col.iter().any(|&u| !u.is_finite() || !(0.0..=1.0).contains(&u)) {
                return Err(Error::invalid(format!(
                    "membership of point {k} outside [0, 1]"
                )));
            }
            let s: f64 = col.sum();
            if (s - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Error::invalid(format!(
                    "memberships of point {k} sum to {s}"
                )));
            }
        }
        Ok(FuzzyPartition { memberships })
    }

    /// Crisp memberships: 1 on the assigned cluster, 0 elsewhere.
    pub fn from_partition(p: &Partition) -> FuzzyPartition {
        let mut u = Array2::zeros((p.k(), p.len()));
        for (i, &a) in p.labels().iter().enumerate() {
            u[[a, i]] = 1.0;
        }
        FuzzyPartition { memberships: u }
    }

    pub fn c(&self) -> usize {
        self.memberships.nrows()
    }

    pub fn n(&self) -> usize {
        self.memberships.ncols()
    }

    pub fn memberships(&self) -> ArrayView2<'_, f64> {
        self.memberships.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.memberships
    }

    /// Argmax membership per point, ties to the lowest cluster index. The
    /// result keeps `k = c` and may contain empty clusters.
    pub fn harden(&self) -> Partition {
        let assignment = self
            .memberships
            .columns()
            .into_iter()
            .map(|col| argmax(col.iter()))
            .collect();
        Partition {
            assignment,
            k: self.c(),
        }
    }

    /// Largest absolute entrywise difference to another partition of the same shape.
    pub fn max_abs_diff(&self, other: &FuzzyPartition) -> f64 {
        self.memberships
            .iter()
            .zip(other.memberships.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Counts `(a, b)` co-occurrences: entry `[a, b]` is the number of points with
/// label `a` in `p` and `b` in `q`.
pub fn contingency(p: &Partition, q: &Partition) -> Result<Array2<usize>> {
    if p.len() != q.len() {
        return Err(Error::shape(format!(
            "partitions over {} and {} points",
            p.len(),
            q.len()
        )));
    }
    let mut table = Array2::zeros((p.k(), q.k()));
    for (&a, &b) in p.labels().iter().zip(q.labels()) {
        table[[a, b]] += 1;
    }
    Ok(table)
}

/// Maximum-weight matching between the rows and columns of a count table.
/// Returns the matched total and, for each row, its column (`None` for rows
/// left unmatched when there are more rows than columns).
fn best_matching(table: &Array2<usize>) -> (usize, Vec<Option<usize>>) {
    let (rows, cols) = table.dim();
    if rows == 0 || cols == 0 {
        return (0, vec![None; rows]);
    }
    if rows <= cols {
        let w = Matrix::from_fn(rows, cols, |(r, c)| table[[r, c]] as i64);
        let (total, assign) = kuhn_munkres(&w);
        (total as usize, assign.into_iter().map(Some).collect())
    } else {
        let w = Matrix::from_fn(cols, rows, |(c, r)| table[[r, c]] as i64);
        let (total, assign) = kuhn_munkres(&w);
        let mut out = vec![None; rows];
        for (c, r) in assign.into_iter().enumerate() {
            out[r] = Some(c);
        }
        (total as usize, out)
    }
}

/// Relabels `p` so that its labels agree with `reference` on as many points as
/// possible. Both partitions must have the same `k`.
pub fn align_labels(p: &Partition, reference: &Partition) -> Result<Partition> {
    alignment_permutation(p, reference).and_then(|(perm, _)| p.relabel(&perm))
}

/// The optimal relabeling `perm[old] = new` of `p` against `reference` and
/// the number of points on which they then agree.
pub fn alignment_permutation(p: &Partition, reference: &Partition) -> Result<(Vec<usize>, usize)> {
    if p.k() != reference.k() {
        return Err(Error::invalid(format!(
            "cannot align k = {} against reference with k = {}",
            p.k(),
            reference.k()
        )));
    }
    let table = contingency(p, reference)?;
    let (agreement, assign) = best_matching(&table);
    // Keep the current labels whenever they are already optimal, which makes
    // alignment idempotent even when several permutations tie.
    let trace: usize = (0..p.k()).map(|a| table[[a, a]]).sum();
    if trace == agreement {
        return Ok(((0..p.k()).collect(), agreement));
    }
    let perm = assign.into_iter().map(|a| a.expect("square table")).collect();
    Ok((perm, agreement))
}

/// Fraction of points on which `a` and `b` carry the same label.
pub fn agreement(a: &Partition, b: &Partition) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("partitions of different length"));
    }
    let same = a.labels().iter().zip(b.labels()).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

/// Accuracy of a clustering against class labels under the best one-to-one
/// mapping of clusters to classes.
///
/// When the cluster and class counts differ, the smaller side is matched
/// injectively into the larger one and unmatched points count as errors.
pub fn clustering_accuracy(pred: &Partition, truth: &[usize]) -> Result<f64> {
    if truth.is_empty() || pred.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let classes = truth.iter().max().map_or(0, |&m| m + 1);
    let truth = Partition {
        assignment: truth.to_vec(),
        k: classes,
    };
    let table = contingency(pred, &truth)?;
    let (matched, _) = best_matching(&table);
    Ok(matched as f64 / pred.len() as f64)
}
