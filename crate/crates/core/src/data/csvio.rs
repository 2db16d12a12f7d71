use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use super::dataset::{Column, ColumnKind, Dataset};
use crate::error::{Error, Result};

/// Integer-valued columns with at most this many distinct values load as categorical.
pub const CATEGORICAL_MAX_LEVELS: usize = 10;

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    read_csv(file)
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().any(String::is_empty) {
        return Err(Error::Data("header has empty column names".into()));
    }
    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != header.len() {
            return Err(Error::Data(format!(
                "line {line}: {} fields, header has {}",
                rec.len(),
                header.len()
            )));
        }
        for (j, field) in rec.iter().enumerate() {
            let f = field.trim();
            let missing = || Error::Data(format!("line {line}, column `{}`: missing value", header[j]));
            if f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan") {
                return Err(missing());
            }
            let v: f64 = f
                .parse()
                .map_err(|_| Error::Data(format!("line {line}, column `{}`: `{f}` is not a number", header[j])))?;
            if !v.is_finite() {
                return Err(missing());
            }
            raw[j].push(v);
        }
    }
    let columns = header.iter().zip(raw).map(|(name, values)| infer_column(name, values)).collect();
    Dataset::new(columns)
}

fn infer_column(name: &str, values: Vec<f64>) -> Column {
    let integral = !values.is_empty() && values.iter().all(|v| v.fract() == 0.0 && v.abs() < 9.0e15);
    if integral {
        let levels: BTreeSet<i64> = values.iter().map(|&v| v as i64).collect();
        if levels.len() <= CATEGORICAL_MAX_LEVELS {
            let levels: Vec<i64> = levels.into_iter().collect();
            let codes = values
                .iter()
                .map(|&v| levels.binary_search(&(v as i64)).expect("level present") as f64)
                .collect();
            return Column::categorical(name, levels, codes);
        }
    }
    Column::continuous(name, values)
}

pub fn write_csv_to<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(data.names())?;
    for i in 0..data.n_rows() {
        let rec: Vec<String> = data
            .columns()
            .iter()
            .map(|c| match &c.kind {
                ColumnKind::Continuous => format!("{}", c.values[i]),
                ColumnKind::Categorical { levels } => levels[c.values[i] as usize].to_string(),
            })
            .collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(data, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let d = read_csv("a,b\n1.5,2\n".as_bytes()).unwrap();
        assert_eq!((d.n_cols(), d.n_rows()), (2, 1));
    }

    #[test]
    fn binary_column_is_categorical() {
        let d = read_csv("g\n0\n1\n1\n".as_bytes()).unwrap();
        assert_eq!(d.column("g").unwrap().levels(), Some(&[0i64, 1][..]));
    }

    #[test]
    fn threshold_rule() {
        let ten: String = (0..10).map(|v| format!("{v}\n")).collect();
        let eleven: String = (0..11).map(|v| format!("{v}\n")).collect();
        assert!(read_csv(format!("q\n{ten}").as_bytes()).unwrap().columns()[0].levels().is_some());
        assert!(read_csv(format!("q\n{eleven}").as_bytes()).unwrap().columns()[0].levels().is_none());
        assert!(read_csv("q\n0.5\n1\n".as_bytes()).unwrap().columns()[0].levels().is_none());
    }

    #[test]
    fn missing_value_is_addressed() {
        let err = read_csv("a,b\n1,2\n3,\n".as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("`b`"), "{err}");
    }

    #[test]
    fn ragged_row_is_rejected() {
        let err = read_csv("a,b\n1,2\n3\n".as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn roundtrip_preserves_values_and_levels() {
        let src = "x,level\n0.1,3\n-2.5e-7,7\n12345.678,3\n";
        let d = read_csv(src.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_csv_to(&d, &mut out).unwrap();
        let back = read_csv(out.as_slice()).unwrap();
        assert_eq!(d, back);
    }
}
