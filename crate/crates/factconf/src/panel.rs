//! Panel data model, CSV ingestion, orientation switch and interference neighborhoods.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which axis is treated as i.i.d. replicates of the factor model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// Rows are units, columns are time points (replicates).
    ReplicateOverTime,
    /// Rows are time points, columns are units (replicates).
    ReplicateOverSpace,
}

impl Orientation {
    pub fn flipped(self) -> Self {
        match self {
            Orientation::ReplicateOverTime => Orientation::ReplicateOverSpace,
            Orientation::ReplicateOverSpace => Orientation::ReplicateOverTime,
        }
    }
}

/// Observed panel. Matrices are indexed (coordinate, replicate): under
/// `ReplicateOverTime` that is (unit, time), otherwise (time, unit).
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    pub exposures: DMatrix<f64>,
    pub outcomes: DMatrix<f64>,
    /// One matrix per covariate, same shape as `exposures`.
    pub covariates: Vec<DMatrix<f64>>,
    /// Spatial coordinates, one row per unit regardless of orientation.
    pub coords: DMatrix<f64>,
    pub unit_ids: Vec<String>,
    pub time_ids: Vec<String>,
    pub orientation: Orientation,
}

impl PanelData {
    /// Builds a panel in `ReplicateOverTime` orientation and validates it.
    pub fn new(
        exposures: DMatrix<f64>,
        outcomes: DMatrix<f64>,
        covariates: Vec<DMatrix<f64>>,
        coords: DMatrix<f64>,
    ) -> Result<Self> {
        let (n, t) = exposures.shape();
        let panel = PanelData {
            exposures,
            outcomes,
            covariates,
            coords: if coords.nrows() == 0 && coords.ncols() == 0 { DMatrix::zeros(n, 0) } else { coords },
            unit_ids: (1..=n).map(|i| i.to_string()).collect(),
            time_ids: (1..=t).map(|i| i.to_string()).collect(),
            orientation: Orientation::ReplicateOverTime,
        };
        panel.validate()?;
        Ok(panel)
    }

    /// Number of coordinates (rows of the data matrices).
    pub fn n_coords(&self) -> usize {
        self.exposures.nrows()
    }

    /// Number of replicates (columns of the data matrices).
    pub fn n_replicates(&self) -> usize {
        self.exposures.ncols()
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_times(&self) -> usize {
        self.time_ids.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.len()
    }

    /// Coordinates of the unit owning cell (row, col).
    pub fn cell_coords(&self, row: usize, col: usize) -> Vec<f64> {
        let unit = match self.orientation {
            Orientation::ReplicateOverTime => row,
            Orientation::ReplicateOverSpace => col,
        };
        self.coords.row(unit).iter().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.exposures.shape();
        let (n, t) = match self.orientation {
            Orientation::ReplicateOverTime => shape,
            Orientation::ReplicateOverSpace => (shape.1, shape.0),
        };
        if self.outcomes.shape() != shape {
            return Err(Error::DimensionMismatch(format!(
                "outcomes {:?} vs exposures {:?}",
                self.outcomes.shape(),
                shape
            )));
        }
        for (k, x) in self.covariates.iter().enumerate() {
            if x.shape() != shape {
                return Err(Error::DimensionMismatch(format!("covariate {k} has shape {:?}", x.shape())));
            }
        }
        if self.unit_ids.len() != n || self.time_ids.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "{} unit ids and {} time ids for a {n}x{t} panel",
                self.unit_ids.len(),
                self.time_ids.len()
            )));
        }
        if self.coords.nrows() != n {
            return Err(Error::DimensionMismatch(format!("{} coordinate rows for {n} units", self.coords.nrows())));
        }
        if n == 0 || t == 0 {
            return Err(Error::DimensionMismatch("empty panel".into()));
        }
        crate::numerics::ensure_finite(&self.exposures, "exposure")?;
        crate::numerics::ensure_finite(&self.outcomes, "outcome")?;
        for x in &self.covariates {
            crate::numerics::ensure_finite(x, "covariate")?;
        }
        crate::numerics::ensure_finite(&self.coords, "coordinate")?;
        Ok(())
    }

    /// Same data with rows restricted to the given replicate columns (used by the bootstrap).
    pub fn select_replicates(&self, cols: &[usize]) -> PanelData {
        let pick = |m: &DMatrix<f64>| m.select_columns(cols);
        let mut out = self.clone();
        out.exposures = pick(&self.exposures);
        out.outcomes = pick(&self.outcomes);
        out.covariates = self.covariates.iter().map(pick).collect();
        match self.orientation {
            Orientation::ReplicateOverTime => {
                out.time_ids = cols.iter().map(|&c| self.time_ids[c].clone()).collect();
            }
            Orientation::ReplicateOverSpace => {
                out.unit_ids = cols.iter().map(|&c| self.unit_ids[c].clone()).collect();
                out.coords = self.coords.select_rows(cols);
            }
        }
        out
    }

    /// Copy with exposures and outcomes replaced and covariates dropped.
    pub fn with_residuals(&self, exposures: DMatrix<f64>, outcomes: DMatrix<f64>) -> PanelData {
        let mut out = self.clone();
        out.exposures = exposures;
        out.outcomes = outcomes;
        out.covariates.clear();
        out
    }

    /// Panel in `ReplicateOverTime` orientation.
    pub fn canonical(&self) -> PanelData {
        orient(self, Orientation::ReplicateOverTime)
    }
}

/// Switches the replicate axis. Applying it twice restores the input.
pub fn orient(panel: &PanelData, target: Orientation) -> PanelData {
    if panel.orientation == target {
        return panel.clone();
    }
    PanelData {
        exposures: panel.exposures.transpose(),
        outcomes: panel.outcomes.transpose(),
        covariates: panel.covariates.iter().map(|x| x.transpose()).collect(),
        coords: panel.coords.clone(),
        unit_ids: panel.unit_ids.clone(),
        time_ids: panel.time_ids.clone(),
        orientation: target,
    }
}

/// Column names used when reading long-format files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub unit: String,
    pub time: String,
    pub value: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema { unit: "unit_id".into(), time: "time_id".into(), value: "value".into() }
    }
}

struct LongTable {
    file: String,
    columns: Vec<String>,
    cells: HashMap<(String, String), Vec<f64>>,
    units: Vec<String>,
    times: Vec<String>,
}

fn read_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Csv { path: path.to_path_buf(), message: e.to_string() }
}

fn column_index(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers.iter().position(|h| h.trim() == name).ok_or_else(|| read_err(path, format!("missing column {name:?}")))
}

/// Reads a long-format file. `value_cols` = None takes every non-key column.
fn read_long(path: &Path, schema: &Schema, value_cols: Option<&[&str]>) -> Result<LongTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| read_err(path, e))?.clone();
    let ui = column_index(&headers, &schema.unit, path)?;
    let ti = column_index(&headers, &schema.time, path)?;
    let vis: Vec<usize> = match value_cols {
        Some(names) => names.iter().map(|n| column_index(&headers, n, path)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&c| c != ui && c != ti).collect(),
    };
    let file = path.display().to_string();
    let columns: Vec<String> = vis.iter().map(|&c| headers[c].trim().to_string()).collect();
    let mut cells = HashMap::new();
    let mut units = Vec::new();
    let mut times = Vec::new();
    let mut seen_u = std::collections::HashSet::new();
    let mut seen_t = std::collections::HashSet::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| read_err(path, e))?;
        let unit = rec.get(ui).unwrap_or("").to_string();
        let time = rec.get(ti).unwrap_or("").to_string();
        let mut vals = Vec::with_capacity(vis.len());
        for (k, &c) in vis.iter().enumerate() {
            let raw = rec.get(c).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::NonNumericValue {
                file: file.clone(),
                unit: unit.clone(),
                time: time.clone(),
                column: columns[k].clone(),
                value: raw.to_string(),
            })?;
            vals.push(v);
        }
        if seen_u.insert(unit.clone()) {
            units.push(unit.clone());
        }
        if seen_t.insert(time.clone()) {
            times.push(time.clone());
        }
        if cells.insert((unit.clone(), time.clone()), vals).is_some() {
            return Err(Error::DuplicateCell { file, unit, time });
        }
    }
    Ok(LongTable { file, columns, cells, units, times })
}

/// Orders ids numerically when they all parse as numbers, lexicographically otherwise.
fn sort_ids(ids: &mut [String]) {
    let numeric: Option<Vec<f64>> = ids.iter().map(|s| s.parse::<f64>().ok()).collect();
    if numeric.is_some() {
        ids.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()).then(a.cmp(b)));
    } else {
        ids.sort();
    }
}

fn grid(table: &LongTable, units: &[String], times: &[String], col: usize) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(units.len(), times.len());
    for (i, u) in units.iter().enumerate() {
        for (t, tm) in times.iter().enumerate() {
            let cell = table.cells.get(&(u.clone(), tm.clone())).ok_or_else(|| Error::MissingCell {
                file: table.file.clone(),
                unit: u.clone(),
                time: tm.clone(),
            })?;
            m[(i, t)] = cell[col];
        }
    }
    Ok(m)
}

fn check_ids(table: &LongTable, units: &[String], times: &[String]) -> Result<()> {
    // Extra ids not present in the exposure grid make the grid inconsistent.
    let ut: std::collections::HashSet<&String> = units.iter().collect();
    let tt: std::collections::HashSet<&String> = times.iter().collect();
    for (u, t) in table.cells.keys() {
        if !ut.contains(u) || !tt.contains(t) {
            return Err(Error::DimensionMismatch(format!("{}: cell ({u}, {t}) outside the exposure grid", table.file)));
        }
    }
    Ok(())
}

/// Reads long-format exposure, outcome, covariate and coordinate files into a validated panel.
pub fn load_panel(
    exposure_path: &Path,
    outcome_path: &Path,
    covariate_paths: &[PathBuf],
    coord_path: Option<&Path>,
    schema: &Schema,
) -> Result<PanelData> {
    let value = [schema.value.as_str()];
    let exp = read_long(exposure_path, schema, Some(&value))?;
    let mut units = exp.units.clone();
    let mut times = exp.times.clone();
    sort_ids(&mut units);
    sort_ids(&mut times);
    let exposures = grid(&exp, &units, &times, 0)?;
    let out = read_long(outcome_path, schema, Some(&value))?;
    check_ids(&out, &units, &times)?;
    let outcomes = grid(&out, &units, &times, 0)?;
    let mut covariates = Vec::new();
    for path in covariate_paths {
        let table = read_long(path, schema, None)?;
        check_ids(&table, &units, &times)?;
        for c in 0..table.columns.len() {
            covariates.push(grid(&table, &units, &times, c)?);
        }
    }
    let coords = match coord_path {
        Some(path) => read_coords(path, schema, &units)?,
        None => DMatrix::zeros(units.len(), 0),
    };
    let panel = PanelData {
        exposures,
        outcomes,
        covariates,
        coords,
        unit_ids: units,
        time_ids: times,
        orientation: Orientation::ReplicateOverTime,
    };
    panel.validate()?;
    Ok(panel)
}

fn read_coords(path: &Path, schema: &Schema, units: &[String]) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| read_err(path, e))?.clone();
    let ui = column_index(&headers, &schema.unit, path)?;
    let vis: Vec<usize> = (0..headers.len()).filter(|&c| c != ui).collect();
    let file = path.display().to_string();
    let mut rows: HashMap<String, Vec<f64>> = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| read_err(path, e))?;
        let unit = rec.get(ui).unwrap_or("").to_string();
        let mut vals = Vec::new();
        for &c in &vis {
            let raw = rec.get(c).unwrap_or("");
            vals.push(raw.parse().map_err(|_| Error::NonNumericValue {
                file: file.clone(),
                unit: unit.clone(),
                time: "-".into(),
                column: headers[c].to_string(),
                value: raw.to_string(),
            })?);
        }
        if rows.insert(unit.clone(), vals).is_some() {
            return Err(Error::DuplicateCell { file, unit, time: "-".into() });
        }
    }
    let mut m = DMatrix::zeros(units.len(), vis.len());
    for (i, u) in units.iter().enumerate() {
        let row =
            rows.get(u).ok_or_else(|| Error::MissingCell { file: file.clone(), unit: u.clone(), time: "-".into() })?;
        for (k, v) in row.iter().enumerate() {
            m[(i, k)] = *v;
        }
    }
    Ok(m)
}

/// Canonical file names inside a panel directory.
pub const EXPOSURE_FILE: &str = "exposure.csv";
pub const OUTCOME_FILE: &str = "outcome.csv";
pub const COVARIATE_FILE: &str = "covariates.csv";
pub const COORD_FILE: &str = "coords.csv";

/// Loads a directory written by [`write_panel`] (covariates and coordinates optional).
pub fn load_panel_dir(dir: &Path, schema: &Schema) -> Result<PanelData> {
    let cov = dir.join(COVARIATE_FILE);
    let coords = dir.join(COORD_FILE);
    let covs = if cov.exists() { vec![cov] } else { vec![] };
    load_panel(
        &dir.join(EXPOSURE_FILE),
        &dir.join(OUTCOME_FILE),
        &covs,
        coords.exists().then_some(coords.as_path()),
        schema,
    )
}

/// Writes the panel as canonical long-format CSV files into `dir`.
pub fn write_panel(dir: &Path, panel: &PanelData) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = panel.canonical();
    let long = |m: &DMatrix<f64>| {
        let mut s = String::from("unit_id,time_id,value\n");
        for (i, u) in p.unit_ids.iter().enumerate() {
            for (t, tm) in p.time_ids.iter().enumerate() {
                s.push_str(&format!("{u},{tm},{}\n", m[(i, t)]));
            }
        }
        s
    };
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(path, e))
    };
    write(EXPOSURE_FILE, long(&p.exposures))?;
    write(OUTCOME_FILE, long(&p.outcomes))?;
    if !p.covariates.is_empty() {
        let mut s = String::from("unit_id,time_id");
        for k in 1..=p.covariates.len() {
            s.push_str(&format!(",x{k}"));
        }
        s.push('\n');
        for (i, u) in p.unit_ids.iter().enumerate() {
            for (t, tm) in p.time_ids.iter().enumerate() {
                s.push_str(&format!("{u},{tm}"));
                for x in &p.covariates {
                    s.push_str(&format!(",{}", x[(i, t)]));
                }
                s.push('\n');
            }
        }
        write(COVARIATE_FILE, s)?;
    }
    if p.coords.ncols() > 0 {
        let mut s = String::from("unit_id");
        for k in 1..=p.coords.ncols() {
            s.push_str(&format!(",s{k}"));
        }
        s.push('\n');
        for (i, u) in p.unit_ids.iter().enumerate() {
            s.push_str(u);
            for v in p.coords.row(i).iter() {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        write(COORD_FILE, s)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeighborhoodKind {
    None,
    KNearest(usize),
    Explicit,
}

/// Interference neighborhoods over the coordinate axis. Each list is sorted and contains its owner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    pub kind: NeighborhoodKind,
    pub neighbors: Vec<Vec<usize>>,
}

impl NeighborhoodSpec {
    pub fn none(n: usize) -> Self {
        NeighborhoodSpec { kind: NeighborhoodKind::None, neighbors: (0..n).map(|i| vec![i]).collect() }
    }

    /// Self plus the `k` nearest units in Euclidean distance; ties go to the smaller index.
    pub fn k_nearest(coords: &DMatrix<f64>, k: usize) -> Result<Self> {
        let n = coords.nrows();
        if k >= n {
            return Err(Error::InvalidNeighborhood(format!("k = {k} needs more than {n} units")));
        }
        if coords.ncols() == 0 {
            return Err(Error::InvalidNeighborhood("k-nearest neighborhoods need coordinates".into()));
        }
        let neighbors = (0..n)
            .map(|i| {
                let mut others: Vec<(f64, usize)> =
                    (0..n).filter(|&j| j != i).map(|j| ((coords.row(i) - coords.row(j)).norm_squared(), j)).collect();
                others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut set: Vec<usize> = others[..k].iter().map(|&(_, j)| j).collect();
                set.push(i);
                set.sort_unstable();
                set
            })
            .collect();
        Ok(NeighborhoodSpec { kind: NeighborhoodKind::KNearest(k), neighbors })
    }

    pub fn explicit(n: usize, lists: Vec<Vec<usize>>) -> Result<Self> {
        if lists.len() != n {
            return Err(Error::InvalidNeighborhood(format!("{} lists for {n} units", lists.len())));
        }
        let mut neighbors = Vec::with_capacity(n);
        for (i, mut set) in lists.into_iter().enumerate() {
            if let Some(&bad) = set.iter().find(|&&j| j >= n) {
                return Err(Error::InvalidNeighborhood(format!("index {bad} out of range for unit {i}")));
            }
            set.push(i);
            set.sort_unstable();
            set.dedup();
            neighbors.push(set);
        }
        Ok(NeighborhoodSpec { kind: NeighborhoodKind::Explicit, neighbors })
    }

    /// Reads `unit_id,neighbor_id` pairs; ids resolve against `unit_ids`.
    pub fn from_file(path: &Path, unit_ids: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let index: BTreeMap<&str, usize> = unit_ids.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
        let mut lists = vec![Vec::new(); unit_ids.len()];
        for rec in reader.records() {
            let rec = rec.map_err(|e| read_err(path, e))?;
            let lookup = |k: usize| -> Result<usize> {
                let id = rec.get(k).unwrap_or("");
                index.get(id).copied().ok_or_else(|| Error::InvalidNeighborhood(format!("unknown unit id {id:?}")))
            };
            let (i, j) = (lookup(0)?, lookup(1)?);
            lists[i].push(j);
        }
        Self::explicit(unit_ids.len(), lists)
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// True when every unit only neighbors itself.
    pub fn is_trivial(&self) -> bool {
        self.neighbors.iter().all(|s| s.len() == 1)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Neighbors of `i` other than `i` itself.
    pub fn others(&self, i: usize) -> Vec<usize> {
        self.neighbors[i].iter().copied().filter(|&j| j != i).collect()
    }

    /// Off-neighborhood indicator: `mask[i][j]` is true when j is not in the neighborhood of i.
    pub fn off_mask(&self) -> Vec<Vec<bool>> {
        let n = self.len();
        (0..n).map(|i| (0..n).map(|j| !self.contains(i, j)).collect()).collect()
    }

    /// Mean exposure of each unit's other neighbors, per replicate (zero when a unit has none).
    pub fn neighbor_mean(&self, exposures: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(exposures.nrows(), exposures.ncols());
        for i in 0..self.len() {
            let others = self.others(i);
            if others.is_empty() {
                continue;
            }
            let w = 1.0 / others.len() as f64;
            for &j in &others {
                let add = exposures.row(j) * w;
                let mut row = out.row_mut(i);
                row += add;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PanelData {
        let d = DMatrix::from_fn(3, 5, |i, t| (i * 10 + t) as f64);
        let y = DMatrix::from_fn(3, 5, |i, t| (i as f64) - (t as f64) * 0.5);
        let x = DMatrix::from_fn(3, 5, |i, t| ((i + t) % 3) as f64);
        let s = DMatrix::from_fn(3, 2, |i, k| (i + k) as f64);
        PanelData::new(d, y, vec![x], s).unwrap()
    }

    #[test]
    fn orient_is_involution() {
        let p = small();
        let q = orient(&p, Orientation::ReplicateOverSpace);
        assert_eq!(q.exposures.shape(), (5, 3));
        assert_eq!(q.orientation, Orientation::ReplicateOverSpace);
        assert_eq!(orient(&q, Orientation::ReplicateOverTime), p);
    }

    #[test]
    fn knn_includes_self_and_breaks_ties_by_index() {
        // Unit 0 at origin; units 1 and 2 equidistant; unit 3 far.
        let s = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 5.0, 5.0]);
        let nb = NeighborhoodSpec::k_nearest(&s, 1).unwrap();
        assert_eq!(nb.neighbors[0], vec![0, 1]);
        assert!(nb.neighbors.iter().enumerate().all(|(i, set)| set.contains(&i) && set.len() == 2));
    }

    #[test]
    fn neighbor_mean_excludes_self() {
        let nb = NeighborhoodSpec::explicit(3, vec![vec![1, 2], vec![], vec![0]]).unwrap();
        let d = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 4.0]);
        let m = nb.neighbor_mean(&d);
        assert_eq!(m[(0, 0)], 3.0);
        assert_eq!(m[(1, 0)], 0.0);
        assert_eq!(m[(2, 0)], 1.0);
        assert!(!nb.off_mask()[0][1] && nb.off_mask()[1][0]);
    }

    #[test]
    fn explicit_rejects_out_of_range() {
        assert!(NeighborhoodSpec::explicit(2, vec![vec![5], vec![]]).is_err());
    }

    #[test]
    fn validation_rejects_nan() {
        let mut d = DMatrix::zeros(2, 2);
        d[(1, 0)] = f64::NAN;
        assert!(matches!(
            PanelData::new(d, DMatrix::zeros(2, 2), vec![], DMatrix::zeros(2, 0)),
            Err(Error::NonFinite { row: 1, col: 0, .. })
        ));
    }

    #[test]
    fn id_sort_is_numeric_when_possible() {
        let mut ids = vec!["10".to_string(), "9".into(), "100".into()];
        sort_ids(&mut ids);
        assert_eq!(ids, vec!["9", "10", "100"]);
        let mut names = vec!["b".to_string(), "a".into()];
        sort_ids(&mut names);
        assert_eq!(names, vec!["a", "b"]);
    }
}
