//! Delimited-text ingestion of the on-disk layout:
//! `data_root/{forcings,discharge}/<basin_id>.csv` plus `attributes.csv`.
//! Dates are ISO-8601, discharge uses -999.0 as its missing sentinel, and
//! forcings must be complete and daily.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

use super::{BasinDataset, CAMELS_ATTRIBUTE_NAMES, FORCING_NAMES, MISSING_DISCHARGE_SENTINEL};

/// Which attribute schema `attributes.csv` must follow. `Camels` enforces
/// the 27-column canonical schema; `Custom` accepts any numeric columns
/// (synthetic fixtures carry their own generator attributes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeSchema {
    Camels,
    Custom,
}

/// The static attribute table: one row per basin, shared column names.
#[derive(Debug, Clone)]
pub struct AttributeTable {
    pub names: Vec<String>,
    rows: BTreeMap<String, Vec<f64>>,
}

impl AttributeTable {
    pub fn basin_ids(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(|s| s.as_str())
    }

    pub fn get(&self, basin_id: &str) -> Option<&[f64]> {
        self.rows.get(basin_id).map(|v| v.as_slice())
    }
}

/// Normalize a header token: lowercase, trimmed, with any unit suffix in
/// parentheses removed, so `PRCP(mm/day)` matches `prcp`.
fn normalize_header(raw: &str) -> String {
    let t = raw.trim().to_ascii_lowercase();
    match t.find('(') {
        Some(idx) => t[..idx].trim().to_string(),
        None => t,
    }
}

/// Aliases for the canonical forcing names as they appear in the original
/// Maurer-forcing column layout.
fn forcing_column(name: &str) -> Option<usize> {
    let canon = match name {
        "prcp" | "precipitation" => "prcp",
        "tmin" | "t_min" => "tmin",
        "tmax" | "t_max" => "tmax",
        "srad" | "swrad" => "srad",
        "vp" | "vapor_pressure" | "vap" => "vp",
        _ => return None,
    };
    FORCING_NAMES.iter().position(|n| *n == canon)
}

fn is_discharge_column(name: &str) -> bool {
    matches!(name, "discharge" | "qobs" | "q" | "obs")
}

fn is_date_column(name: &str) -> bool {
    matches!(name, "date" | "day")
}

fn parse_date(raw: &str, path: &Path, line: usize) -> Result<NaiveDate> {
    raw.trim().parse::<NaiveDate>().map_err(|_| {
        Error::Parse(format!(
            "{}: line {}: '{}' is not an ISO-8601 date",
            path.display(),
            line,
            raw
        ))
    })
}

fn parse_number(raw: &str, path: &Path, line: usize, column: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| {
        Error::Parse(format!(
            "{}: line {}: column '{}': '{}' is not a number",
            path.display(),
            line,
            column,
            raw
        ))
    })
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))
}

fn read_forcings(path: &Path) -> Result<(Vec<NaiveDate>, Array2<f64>)> {
    let mut reader = open_reader(path)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {}", path.display(), e)))?
        .iter()
        .map(normalize_header)
        .collect();

    let date_idx = headers
        .iter()
        .position(|h| is_date_column(h))
        .ok_or_else(|| Error::Data(format!("{}: no date column", path.display())))?;
    let mut col_map = vec![None; headers.len()];
    let mut seen = [false; 5];
    for (idx, h) in headers.iter().enumerate() {
        if idx == date_idx {
            continue;
        }
        match forcing_column(h) {
            Some(c) => {
                if seen[c] {
                    return Err(Error::Data(format!(
                        "{}: duplicate forcing column '{}'",
                        path.display(),
                        h
                    )));
                }
                seen[c] = true;
                col_map[idx] = Some(c);
            }
            None => {
                return Err(Error::Data(format!(
                    "{}: unknown forcing column '{}'",
                    path.display(),
                    h
                )))
            }
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Data(format!(
            "{}: missing forcing column '{}'",
            path.display(),
            FORCING_NAMES[missing]
        )));
    }

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut rows: Vec<[f64; 5]> = Vec::new();
    for (rec_no, record) in reader.records().enumerate() {
        let line = rec_no + 2; // header is line 1
        let record = record.map_err(|e| Error::Parse(format!("{}: {}", path.display(), e)))?;
        let d = parse_date(&record[date_idx], path, line)?;
        if let Some(prev) = dates.last() {
            let gap = (d - *prev).num_days();
            if gap != 1 {
                return Err(Error::Data(format!(
                    "{}: non-daily cadence: {} follows {}",
                    path.display(),
                    d,
                    prev
                )));
            }
        }
        let mut row = [0.0; 5];
        for (idx, target) in col_map.iter().enumerate() {
            if let Some(c) = target {
                row[*c] = parse_number(&record[idx], path, line, &headers[idx])?;
                if !row[*c].is_finite() {
                    return Err(Error::Data(format!(
                        "{}: line {}: non-finite forcing value in '{}'",
                        path.display(),
                        line,
                        headers[idx]
                    )));
                }
            }
        }
        dates.push(d);
        rows.push(row);
    }
    if dates.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let mut forcings = Array2::zeros((rows.len(), 5));
    for (r, row) in rows.iter().enumerate() {
        for c in 0..5 {
            forcings[[r, c]] = row[c];
        }
    }
    Ok((dates, forcings))
}

fn read_discharge(path: &Path) -> Result<(Vec<NaiveDate>, Vec<f64>)> {
    let mut reader = open_reader(path)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {}", path.display(), e)))?
        .iter()
        .map(normalize_header)
        .collect();
    let date_idx = headers
        .iter()
        .position(|h| is_date_column(h))
        .ok_or_else(|| Error::Data(format!("{}: no date column", path.display())))?;
    let q_idx = headers
        .iter()
        .position(|h| is_discharge_column(h))
        .ok_or_else(|| Error::Data(format!("{}: no discharge column", path.display())))?;

    let mut dates = Vec::new();
    let mut values = Vec::new();
    for (rec_no, record) in reader.records().enumerate() {
        let line = rec_no + 2;
        let record = record.map_err(|e| Error::Parse(format!("{}: {}", path.display(), e)))?;
        dates.push(parse_date(&record[date_idx], path, line)?);
        let v = parse_number(&record[q_idx], path, line, &headers[q_idx])?;
        values.push(if v <= MISSING_DISCHARGE_SENTINEL {
            f64::NAN
        } else {
            v
        });
    }
    Ok((dates, values))
}

/// Load the shared attribute table. Under the `Camels` schema the columns
/// must be exactly the canonical 27 names in canonical order.
pub fn load_attribute_table(path: &Path, schema: AttributeSchema) -> Result<AttributeTable> {
    let mut reader = open_reader(path)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {}", path.display(), e)))?
        .iter()
        .map(normalize_header)
        .collect();
    let id_ok = matches!(
        headers.first().map(|s| s.as_str()),
        Some("basin_id") | Some("gauge_id")
    );
    if !id_ok {
        return Err(Error::Data(format!(
            "{}: first column must be basin_id",
            path.display()
        )));
    }
    let names: Vec<String> = headers[1..].to_vec();
    match schema {
        AttributeSchema::Camels => {
            if names.len() != CAMELS_ATTRIBUTE_NAMES.len() {
                return Err(Error::Data(format!(
                    "{}: expected {} attribute columns, got {}",
                    path.display(),
                    CAMELS_ATTRIBUTE_NAMES.len(),
                    names.len()
                )));
            }
            for (pos, (got, want)) in names.iter().zip(CAMELS_ATTRIBUTE_NAMES).enumerate() {
                if got != want {
                    return Err(Error::Data(format!(
                        "{}: unknown attribute column '{}' at position {} (expected '{}')",
                        path.display(),
                        got,
                        pos + 1,
                        want
                    )));
                }
            }
        }
        AttributeSchema::Custom => {
            if names.is_empty() {
                return Err(Error::Data(format!(
                    "{}: attribute table has no attribute columns",
                    path.display()
                )));
            }
        }
    }

    let mut rows = BTreeMap::new();
    for (rec_no, record) in reader.records().enumerate() {
        let line = rec_no + 2;
        let record = record.map_err(|e| Error::Parse(format!("{}: {}", path.display(), e)))?;
        let id = record[0].trim().to_string();
        let mut values = Vec::with_capacity(names.len());
        for (k, name) in names.iter().enumerate() {
            values.push(parse_number(&record[k + 1], path, line, name)?);
        }
        if rows.insert(id.clone(), values).is_some() {
            return Err(Error::Data(format!(
                "{}: duplicate basin id '{}'",
                path.display(),
                id
            )));
        }
    }
    Ok(AttributeTable { names, rows })
}

/// Load one basin from its forcing and discharge files plus the shared
/// attribute table. Forcing and discharge dates must align exactly.
pub fn load_basin(
    forcing_path: &Path,
    discharge_path: &Path,
    attributes: &AttributeTable,
    basin_id: &str,
) -> Result<BasinDataset> {
    let (dates, forcings) = read_forcings(forcing_path)?;
    let (q_dates, discharge) = read_discharge(discharge_path)?;
    if dates != q_dates {
        let detail = if dates.len() != q_dates.len() {
            format!(
                "{} forcing days vs {} discharge days",
                dates.len(),
                q_dates.len()
            )
        } else {
            let idx = dates
                .iter()
                .zip(&q_dates)
                .position(|(a, b)| a != b)
                .unwrap();
            format!("first mismatch at {} vs {}", dates[idx], q_dates[idx])
        };
        return Err(Error::Data(format!(
            "basin {}: forcing and discharge dates misaligned ({})",
            basin_id, detail
        )));
    }
    let attr_values = attributes.get(basin_id).ok_or_else(|| {
        Error::Data(format!(
            "basin {} absent from the attribute table",
            basin_id
        ))
    })?;

    let ds = BasinDataset {
        basin_id: basin_id.to_string(),
        dates,
        forcings,
        attribute_names: attributes.names.clone(),
        attributes: Array1::from_vec(attr_values.to_vec()),
        discharge,
    };
    ds.check_internal()?;
    Ok(ds)
}

/// Load every basin listed in `<root>/attributes.csv` from the canonical
/// directory layout, in basin-id order.
pub fn load_data_root(root: &Path, schema: AttributeSchema) -> Result<Vec<BasinDataset>> {
    let table = load_attribute_table(&root.join("attributes.csv"), schema)?;
    let ids: Vec<String> = table.basin_ids().map(|s| s.to_string()).collect();
    ids.iter()
        .map(|id| {
            load_basin(
                &root.join("forcings").join(format!("{id}.csv")),
                &root.join("discharge").join(format!("{id}.csv")),
                &table,
                id,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(path: &Path, contents: &str) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, contents).unwrap();
    }

    fn ten_day_root(dir: &Path) {
        let mut forcing = String::from("date,prcp,tmin,tmax,srad,vp\n");
        let mut q = String::from("date,discharge\n");
        for d in 1..=10 {
            forcing.push_str(&format!(
                "2000-01-{:02},{},{},{},{},{}\n",
                d,
                d as f64 * 0.5,
                -1.0,
                5.0 + d as f64,
                200.0,
                900.0
            ));
            let qv = if d == 3 { -999.0 } else { d as f64 * 0.1 };
            q.push_str(&format!("2000-01-{:02},{}\n", d, qv));
        }
        write(&dir.join("forcings/basin_a.csv"), &forcing);
        write(&dir.join("discharge/basin_a.csv"), &q);
        write(
            &dir.join("attributes.csv"),
            "basin_id,storage_rate,runoff_coeff\nbasin_a,0.25,0.8\n",
        );
    }

    #[test]
    fn well_formed_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        ten_day_root(dir.path());
        let basins = load_data_root(dir.path(), AttributeSchema::Custom).unwrap();
        assert_eq!(basins.len(), 1);
        let ds = &basins[0];
        assert_eq!(ds.n_days(), 10);
        assert_eq!(ds.attribute_names, vec!["storage_rate", "runoff_coeff"]);
        assert_eq!(ds.attributes[1], 0.8);
        assert_eq!(ds.forcings[[4, 0]], 2.5);
    }

    #[test]
    fn sentinel_discharge_becomes_missing() {
        let dir = tempfile::tempdir().unwrap();
        ten_day_root(dir.path());
        let basins = load_data_root(dir.path(), AttributeSchema::Custom).unwrap();
        assert!(basins[0].discharge[2].is_nan());
        assert!(!basins[0].discharge[3].is_nan());
    }

    #[test]
    fn forcing_gap_is_rejected_with_date() {
        let dir = tempfile::tempdir().unwrap();
        ten_day_root(dir.path());
        let forcing = "date,prcp,tmin,tmax,srad,vp\n\
                       2000-01-01,1,0,5,200,900\n\
                       2000-01-03,1,0,5,200,900\n";
        write(&dir.path().join("forcings/basin_a.csv"), forcing);
        let err = load_data_root(dir.path(), AttributeSchema::Custom).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("non-daily"), "{msg}");
        assert!(msg.contains("2000-01-03"), "{msg}");
    }

    #[test]
    fn misaligned_dates_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        ten_day_root(dir.path());
        let q = "date,discharge\n2000-01-02,0.5\n2000-01-03,0.5\n";
        write(&dir.path().join("discharge/basin_a.csv"), q);
        let err = load_data_root(dir.path(), AttributeSchema::Custom).unwrap_err();
        assert!(err.to_string().contains("misaligned"), "{err}");
    }

    #[test]
    fn camels_schema_rejects_unknown_attribute_column() {
        let dir = tempfile::tempdir().unwrap();
        let mut hdr: Vec<&str> = CAMELS_ATTRIBUTE_NAMES.to_vec();
        hdr[3] = "bogus_column";
        let contents = format!(
            "basin_id,{}\nb1,{}\n",
            hdr.join(","),
            vec!["1.0"; 27].join(",")
        );
        write(&dir.path().join("attributes.csv"), &contents);
        let err = load_attribute_table(&dir.path().join("attributes.csv"), AttributeSchema::Camels)
            .unwrap_err();
        assert!(err.to_string().contains("bogus_column"), "{err}");
    }

    #[test]
    fn camels_schema_accepts_canonical_table() {
        let dir = tempfile::tempdir().unwrap();
        let contents = format!(
            "basin_id,{}\nb1,{}\n",
            CAMELS_ATTRIBUTE_NAMES.join(","),
            (0..27)
                .map(|i| format!("{}", i as f64))
                .collect::<Vec<_>>()
                .join(",")
        );
        write(&dir.path().join("attributes.csv"), &contents);
        let table =
            load_attribute_table(&dir.path().join("attributes.csv"), AttributeSchema::Camels)
                .unwrap();
        assert_eq!(table.names.len(), 27);
        assert_eq!(table.get("b1").unwrap()[26], 26.0);
    }

    #[test]
    fn maurer_style_headers_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        ten_day_root(dir.path());
        // Same data, original column spellings and a different column order.
        let forcing = "Date,PRCP(mm/day),SRAD(W/m2),Tmax(C),Tmin(C),Vp(Pa)\n\
                       2000-01-01,1.0,200,6,-1,900\n\
                       2000-01-02,2.0,200,7,-1,900\n";
        let q = "date,QObs\n2000-01-01,0.1\n2000-01-02,0.2\n";
        write(&dir.path().join("forcings/basin_a.csv"), forcing);
        write(&dir.path().join("discharge/basin_a.csv"), q);
        let basins = load_data_root(dir.path(), AttributeSchema::Custom).unwrap();
        let ds = &basins[0];
        assert_eq!(ds.forcings[[1, 0]], 2.0); // prcp
        assert_eq!(ds.forcings[[1, 2]], 7.0); // tmax reordered into slot 2
        assert_eq!(ds.discharge[1], 0.2);
    }
}
