use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::dataset::{Column, Dataset};
use super::schema::{ColumnKind, FeatureSchema};
use crate::error::{Error, Result};

enum Slot {
    Response,
    Exposure,
    Feature(usize),
}

/// Reads a claim table. Header columns not named by the schema (such as a policy
/// id) are ignored; every schema column must be present. Empty fields and `NA`
/// are rejected as missing values.
pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut slots: Vec<Option<Slot>> = Vec::with_capacity(headers.len());
    let mut found = vec![false; schema.columns.len() + 2];
    for h in headers.iter() {
        let slot = if h == schema.response_column {
            found[0] = true;
            Some(Slot::Response)
        } else if h == schema.exposure_column {
            found[1] = true;
            Some(Slot::Exposure)
        } else if let Ok(i) = schema.index_of(h) {
            found[i + 2] = true;
            Some(Slot::Feature(i))
        } else {
            None
        };
        slots.push(slot);
    }
    let names: Vec<&str> = [
        schema.response_column.as_str(),
        schema.exposure_column.as_str(),
    ]
    .into_iter()
    .chain(schema.feature_names())
    .collect();
    if let Some(missing) = found.iter().position(|f| !f) {
        return Err(Error::Schema(format!(
            "column '{}' missing from CSV header",
            names[missing]
        )));
    }

    let mut claims = Vec::new();
    let mut exposure = Vec::new();
    let mut columns: Vec<Column> = schema
        .columns
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Numeric => Column::Numeric(Vec::new()),
            ColumnKind::Categorical { .. } => Column::Categorical(Vec::new()),
        })
        .collect();

    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for (field, slot) in record.iter().zip(&slots) {
            let Some(slot) = slot else { continue };
            let column_name = match slot {
                Slot::Response => &schema.response_column,
                Slot::Exposure => &schema.exposure_column,
                Slot::Feature(i) => &schema.columns[*i].name,
            };
            if field.is_empty() || field.eq_ignore_ascii_case("na") {
                return Err(Error::MissingValue {
                    row,
                    column: column_name.clone(),
                });
            }
            let parse_err = |message: String| Error::Parse {
                row,
                column: column_name.clone(),
                message,
            };
            match slot {
                Slot::Response => {
                    let v: f64 = field.parse().map_err(|e| parse_err(format!("{e}")))?;
                    if !(v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64) {
                        return Err(parse_err(format!(
                            "claim count must be a non-negative integer, got '{field}'"
                        )));
                    }
                    claims.push(v as u32);
                }
                Slot::Exposure => {
                    let v: f64 = field.parse().map_err(|e| parse_err(format!("{e}")))?;
                    if !(v.is_finite() && v > 0.0) {
                        return Err(parse_err(format!(
                            "exposure must be positive, got '{field}'"
                        )));
                    }
                    exposure.push(v);
                }
                Slot::Feature(i) => match (&schema.columns[*i].kind, &mut columns[*i]) {
                    (ColumnKind::Numeric, Column::Numeric(v)) => {
                        let x: f64 = field.parse().map_err(|e| parse_err(format!("{e}")))?;
                        if !x.is_finite() {
                            return Err(parse_err(format!("non-finite value '{field}'")));
                        }
                        v.push(x);
                    }
                    (ColumnKind::Categorical { categories, .. }, Column::Categorical(v)) => {
                        let code = categories.iter().position(|c| c == field).ok_or_else(|| {
                            Error::UnknownCategory {
                                row,
                                column: column_name.clone(),
                                value: field.to_string(),
                            }
                        })?;
                        v.push(code as u32);
                    }
                    _ => unreachable!("columns built from schema"),
                },
            }
        }
    }
    Dataset::new(schema.clone(), claims, exposure, columns)
}

/// Writes the response, exposure and features in schema order. Floats use the
/// shortest representation that parses back to the identical value.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_csv_to(data, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_csv_to<W: Write>(data: &Dataset, w: &mut W) -> std::io::Result<()> {
    let schema = data.schema();
    let mut header = vec![
        schema.response_column.clone(),
        schema.exposure_column.clone(),
    ];
    header.extend(schema.feature_names().map(csv_field));
    writeln!(w, "{}", header.join(","))?;
    let mut line = String::new();
    for i in 0..data.len() {
        use std::fmt::Write as _;
        line.clear();
        let _ = write!(line, "{},{}", data.claims()[i], data.exposure()[i]);
        for (spec, col) in schema.columns.iter().zip(data.columns()) {
            match col {
                Column::Numeric(v) => {
                    let _ = write!(line, ",{}", v[i]);
                }
                Column::Categorical(v) => {
                    let label = &spec.categories().expect("categorical spec")[v[i] as usize];
                    let _ = write!(line, ",{}", csv_field(label));
                }
            }
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::ColumnSpec;

    fn mtpl_schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                ColumnSpec::numeric("DrivAge"),
                ColumnSpec::categorical("VehBrand", ["B1", "B2", "B12"], 0),
                ColumnSpec::categorical("VehGas", ["Diesel", "Regular"], 0),
            ],
            "ClaimNb",
            "Exposure",
        )
        .unwrap()
    }

    #[test]
    fn reads_well_formed_rows_and_ignores_extra_columns() {
        let text = "IDpol,ClaimNb,Exposure,DrivAge,VehBrand,VehGas\n\
                    1,0,0.1,55,B12,\"Regular\"\n\
                    3,1,0.77,46,B1,Diesel\n\
                    5,0,0.75,52,B2,Diesel\n";
        let d = read_csv(text.as_bytes(), &mtpl_schema()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.claims(), &[0, 1, 0]);
        assert_eq!(d.categorical("VehBrand").unwrap().0, &[2, 0, 1]);
    }

    #[test]
    fn unknown_category_names_row_and_column() {
        let text =
            "ClaimNb,Exposure,DrivAge,VehBrand,VehGas\n0,1,30,B1,Diesel\n0,1,30,B99,Diesel\n";
        match read_csv(text.as_bytes(), &mtpl_schema()).unwrap_err() {
            Error::UnknownCategory { row, column, value } => {
                assert_eq!(
                    (row, column.as_str(), value.as_str()),
                    (2, "VehBrand", "B99")
                );
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_and_malformed_values_rejected() {
        let missing = "ClaimNb,Exposure,DrivAge,VehBrand,VehGas\n0,1,,B1,Diesel\n";
        assert!(matches!(
            read_csv(missing.as_bytes(), &mtpl_schema()).unwrap_err(),
            Error::MissingValue { row: 1, .. }
        ));
        let bad = "ClaimNb,Exposure,DrivAge,VehBrand,VehGas\n0,1,old,B1,Diesel\n";
        assert!(matches!(
            read_csv(bad.as_bytes(), &mtpl_schema()).unwrap_err(),
            Error::Parse { row: 1, .. }
        ));
        let frac = "ClaimNb,Exposure,DrivAge,VehBrand,VehGas\n0.5,1,30,B1,Diesel\n";
        assert!(read_csv(frac.as_bytes(), &mtpl_schema()).is_err());
        let no_col = "ClaimNb,Exposure,VehBrand,VehGas\n0,1,B1,Diesel\n";
        assert!(matches!(
            read_csv(no_col.as_bytes(), &mtpl_schema()).unwrap_err(),
            Error::Schema(_)
        ));
    }

    #[test]
    fn synthetic_round_trip_is_exact() {
        let d = crate::data::generate_synthetic(300, 5, true).unwrap();
        let mut buf = Vec::new();
        write_csv_to(&d, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), d.schema()).unwrap();
        assert_eq!(back, d);
    }
}
