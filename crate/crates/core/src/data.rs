//! Role-labelled datasets and strict CSV ingestion.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sample_variance, Scalar};

pub const MIN_ROWS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Instrument,
    Treatment,
    Outcome,
    Unused,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Instrument => "Instrument",
            Role::Treatment => "Treatment",
            Role::Outcome => "Outcome",
            Role::Unused => "Unused",
        };
        f.write_str(s)
    }
}

/// Column name to role, in the order the caller listed them.
pub type RoleMap = Vec<(String, Role)>;

pub fn iv_roles(instruments: &[&str], treatment: &str, outcome: &str) -> RoleMap {
    let mut roles: RoleMap = instruments
        .iter()
        .map(|z| (z.to_string(), Role::Instrument))
        .collect();
    roles.push((treatment.to_string(), Role::Treatment));
    roles.push((outcome.to_string(), Role::Outcome));
    roles
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column<T> {
    pub name: String,
    pub role: Role,
    pub values: Vec<T>,
}

/// Complete-case numeric data with instrument/treatment/outcome roles.
///
/// Construction validates every invariant, so a `Dataset` in hand is always
/// usable by the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    columns: Vec<Column<T>>,
    n: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(columns: Vec<Column<T>>) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.values.len());
        let ds = Self { columns, n };
        ds.validate()?;
        Ok(ds)
    }

    /// Three-column dataset named `z`, `x`, `y`.
    pub fn from_iv(z: Vec<T>, x: Vec<T>, y: Vec<T>) -> Result<Self> {
        Self::new(vec![
            Column { name: "z".into(), role: Role::Instrument, values: z },
            Column { name: "x".into(), role: Role::Treatment, values: x },
            Column { name: "y".into(), role: Role::Outcome, values: y },
        ])
    }

    /// Checks every invariant, reporting the first violation found.
    pub fn validate(&self) -> Result<()> {
        let mut treatment = 0;
        let mut outcome = 0;
        let mut instruments = 0;
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate column name `{}`", c.name)));
            }
            match c.role {
                Role::Treatment => treatment += 1,
                Role::Outcome => outcome += 1,
                Role::Instrument => instruments += 1,
                Role::Unused => {}
            }
        }
        if treatment > 1 {
            return Err(Error::DuplicateRole(Role::Treatment.to_string()));
        }
        if outcome > 1 {
            return Err(Error::DuplicateRole(Role::Outcome.to_string()));
        }
        if treatment == 0 {
            return Err(Error::MissingRole(Role::Treatment.to_string()));
        }
        if outcome == 0 {
            return Err(Error::MissingRole(Role::Outcome.to_string()));
        }
        if instruments == 0 {
            return Err(Error::MissingRole(Role::Instrument.to_string()));
        }
        for c in &self.columns {
            if c.values.len() != self.n {
                return Err(Error::LengthMismatch(self.n, c.values.len()));
            }
        }
        if self.n < MIN_ROWS {
            return Err(Error::TooFewObservations { needed: MIN_ROWS, given: self.n });
        }
        for c in &self.columns {
            if c.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue(c.name.clone()));
            }
            if !(sample_variance(&c.values) > T::zero()) {
                return Err(Error::ZeroVarianceColumn(c.name.clone()));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn columns(&self) -> &[Column<T>] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column<T>> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn instruments(&self) -> impl Iterator<Item = &Column<T>> {
        self.columns.iter().filter(|c| c.role == Role::Instrument)
    }

    pub fn instrument_count(&self) -> usize {
        self.instruments().count()
    }

    pub fn treatment(&self) -> &Column<T> {
        self.role_column(Role::Treatment)
    }

    pub fn outcome(&self) -> &Column<T> {
        self.role_column(Role::Outcome)
    }

    fn role_column(&self, role: Role) -> &Column<T> {
        self.columns
            .iter()
            .find(|c| c.role == role)
            .expect("validated dataset carries every role")
    }

    /// Role columns in canonical order: instruments (as listed), treatment, outcome.
    pub fn role_columns(&self) -> Vec<&Column<T>> {
        let mut cols: Vec<&Column<T>> = self.instruments().collect();
        cols.push(self.treatment());
        cols.push(self.outcome());
        cols
    }

    /// Trivariate dataset `(instrument, treatment, outcome)` for one instrument.
    pub fn single_instrument(&self, instrument: &str) -> Result<Self> {
        let z = self
            .instruments()
            .find(|c| c.name == instrument)
            .ok_or_else(|| Error::MissingColumn(instrument.to_string()))?;
        Self::new(vec![z.clone(), self.treatment().clone(), self.outcome().clone()])
    }

    /// Rows picked by `idx` (with repetition allowed). Skips validation:
    /// a resample may legitimately degenerate and the estimators report it.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                role: c.role,
                values: idx.iter().map(|&i| c.values[i]).collect(),
            })
            .collect();
        Self { columns, n: idx.len() }
    }

    /// Same data with the named column's values reordered by `perm`.
    pub fn permute_column(&self, name: &str, perm: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        let col = out
            .columns
            .iter_mut()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        col.values = perm.iter().map(|&i| self.column(name).unwrap().values[i]).collect();
        Ok(out)
    }

    pub fn roles(&self) -> RoleMap {
        self.columns.iter().map(|c| (c.name.clone(), c.role)).collect()
    }

    /// Writes a header row and one record per observation. Values use the
    /// shortest decimal form that parses back to the identical bits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for i in 0..self.n {
            w.write_record(self.columns.iter().map(|c| c.values[i].to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Reads a headered CSV, keeping the columns named in `roles`.
///
/// Strict mode: any row with an empty or non-numeric cell in a selected
/// column rejects the whole file, reporting the first offending cell
/// (1-based data row) and the number of bad rows.
pub fn read_csv<T: Scalar, R: Read>(reader: R, roles: &RoleMap) -> Result<Dataset<T>> {
    let mut seen_roles: BTreeMap<Role, usize> = BTreeMap::new();
    for (_, role) in roles {
        *seen_roles.entry(*role).or_default() += 1;
    }
    for role in [Role::Treatment, Role::Outcome] {
        if seen_roles.get(&role).copied().unwrap_or(0) > 1 {
            return Err(Error::DuplicateRole(role.to_string()));
        }
    }

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let positions = roles
        .iter()
        .map(|(name, _)| {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut values: Vec<Vec<T>> = vec![Vec::new(); roles.len()];
    let mut first_bad: Option<(usize, String)> = None;
    let mut rejected = 0;
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let mut parsed = Vec::with_capacity(roles.len());
        let mut bad_col = None;
        for (k, &pos) in positions.iter().enumerate() {
            match record.get(pos).map(str::trim).and_then(|s| s.parse::<T>().ok()) {
                Some(v) => parsed.push(v),
                None => {
                    bad_col = Some(roles[k].0.clone());
                    break;
                }
            }
        }
        match bad_col {
            Some(col) => {
                rejected += 1;
                first_bad.get_or_insert((row + 1, col));
            }
            None => {
                for (k, v) in parsed.into_iter().enumerate() {
                    values[k].push(v);
                }
            }
        }
    }
    if let Some((row, column)) = first_bad {
        return Err(Error::NonNumericCell { row, column, rejected });
    }
    let columns = roles
        .iter()
        .zip(values)
        .map(|((name, role), values)| Column { name: name.clone(), role: *role, values })
        .collect();
    Dataset::new(columns)
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, roles: &RoleMap) -> Result<Dataset<T>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(std::io::BufReader::new(file), roles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn roles() -> RoleMap {
        iv_roles(&["z"], "x", "y")
    }

    #[test]
    fn loads_clean_file() {
        let mut s = String::from("z,x,y\n");
        for i in 0..500 {
            let f = i as f64;
            s.push_str(&format!("{},{},{}\n", f.sin(), f.cos(), (0.3 * f).sin()));
        }
        let ds: Dataset<f64> = read_csv(s.as_bytes(), &roles()).unwrap();
        assert_eq!(ds.n(), 500);
        assert_eq!(ds.treatment().name, "x");
    }

    #[test]
    fn blank_cell_is_rejected_with_position() {
        let mut s = String::from("z,x,y\n");
        for i in 0..10 {
            let x = if i == 6 { String::new() } else { format!("{}", i * i) };
            s.push_str(&format!("{},{},{}\n", i, x, 3 * i % 7));
        }
        let err = read_csv::<f64, _>(s.as_bytes(), &roles()).unwrap_err();
        assert_eq!(err, Error::NonNumericCell { row: 7, column: "x".into(), rejected: 1 });
    }

    #[test]
    fn missing_column() {
        let err = read_csv::<f64, _>("a,x,y\n1,2,3\n".as_bytes(), &roles()).unwrap_err();
        assert_eq!(err, Error::MissingColumn("z".into()));
    }

    #[test]
    fn constant_column() {
        let err = Dataset::from_iv(vec![1.0, 2.0, 3.0, 4.0], vec![5.0; 4], vec![1.0, 0.0, 1.0, 2.0])
            .unwrap_err();
        assert_eq!(err, Error::ZeroVarianceColumn("x".into()));
    }

    #[test]
    fn two_outcomes() {
        let col = |name: &str, role| Column { name: name.into(), role, values: vec![1.0, 2.0, 4.0] };
        let err = Dataset::new(vec![
            col("z", Role::Instrument),
            col("x", Role::Treatment),
            col("y", Role::Outcome),
            col("w", Role::Outcome),
        ])
        .unwrap_err();
        assert_eq!(err, Error::DuplicateRole("Outcome".into()));

        let mut roles = roles();
        roles.push(("w".into(), Role::Outcome));
        let err = read_csv::<f64, _>("z,x,y,w\n1,2,3,4\n".as_bytes(), &roles).unwrap_err();
        assert_eq!(err, Error::DuplicateRole("Outcome".into()));
    }

    #[test]
    fn valid_trivariate() {
        let ds = Dataset::from_iv(vec![1.0, 2.0, 0.5], vec![0.0, 1.0, 3.0], vec![2.0, 1.0, 0.0]).unwrap();
        assert!(ds.validate().is_ok());
    }

    #[test]
    fn too_few_rows_and_non_finite() {
        assert!(matches!(
            Dataset::from_iv(vec![1.0, 2.0], vec![0.0, 1.0], vec![2.0, 1.0]),
            Err(Error::TooFewObservations { .. })
        ));
        assert_eq!(
            Dataset::from_iv(vec![1.0, 2.0, f64::NAN], vec![0.0, 1.0, 2.0], vec![2.0, 1.0, 0.0]).unwrap_err(),
            Error::NonFiniteValue("z".into())
        );
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            rows in prop::collection::vec((any::<f64>(), any::<f64>(), any::<f64>()), 3..40)
        ) {
            let finite = |v: f64| if v.is_finite() { v } else { 1.5 };
            let z: Vec<f64> = rows.iter().enumerate().map(|(i, r)| finite(r.0) + i as f64).collect();
            let x: Vec<f64> = rows.iter().enumerate().map(|(i, r)| finite(r.1) - i as f64).collect();
            let y: Vec<f64> = rows.iter().enumerate().map(|(i, r)| finite(r.2) * 0.5 + (i * i) as f64).collect();
            if let Ok(ds) = Dataset::from_iv(z, x, y) {
                let text = ds.to_csv_string();
                let back: Dataset<f64> = read_csv(text.as_bytes(), &ds.roles()).unwrap();
                for (a, b) in ds.columns().iter().zip(back.columns()) {
                    let ab: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
                    let bb: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
                    prop_assert_eq!(ab, bb);
                }
            }
        }
    }
}
