//! Wide CSV panels: a `t` column followed by `y_<name>`, `x_<name>` pairs.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use sucpr::model::PanelData;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub t: Vec<i64>,
    pub names: Vec<String>,
    /// `n × T`.
    pub y: DMatrix<f64>,
    /// `n × T`.
    pub x: DMatrix<f64>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl Dataset {
    pub fn read<R: Read>(reader: R) -> Result<Self, CliError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers().map_err(|e| invalid(format!("unreadable header: {e}")))?.clone();
        if header.get(0).map(str::trim) != Some("t") {
            return Err(invalid("the first column must be named 't'"));
        }
        let cols: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        if cols.is_empty() || cols.len() % 2 != 0 {
            return Err(invalid("expected pairs of y_<name> and x_<name> columns after 't'"));
        }
        let mut names = Vec::new();
        for pair in cols.chunks(2) {
            let yn = pair[0]
                .strip_prefix("y_")
                .ok_or_else(|| invalid(format!("column '{}' should start with 'y_'", pair[0])))?;
            let xn = pair[1]
                .strip_prefix("x_")
                .ok_or_else(|| invalid(format!("column '{}' should start with 'x_'", pair[1])))?;
            if yn != xn || yn.is_empty() {
                return Err(invalid(format!("columns '{}' and '{}' do not form a pair", pair[0], pair[1])));
            }
            if names.iter().any(|n| n == yn) {
                return Err(invalid(format!("unit '{yn}' appears twice")));
            }
            names.push(yn.to_string());
        }

        let mut t = Vec::new();
        let mut values: Vec<Vec<f64>> = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| invalid(format!("line {line}: {e}")))?;
            if rec.len() != header.len() {
                return Err(invalid(format!("line {line}: expected {} fields, found {}", header.len(), rec.len())));
            }
            let tv: i64 = rec[0]
                .trim()
                .parse()
                .map_err(|_| invalid(format!("line {line}: t = '{}' is not an integer", &rec[0])))?;
            if t.last().is_some_and(|&prev| tv <= prev) {
                return Err(invalid(format!("line {line}: t must be strictly increasing")));
            }
            t.push(tv);
            let row = rec
                .iter()
                .skip(1)
                .enumerate()
                .map(|(c, s)| {
                    let s = s.trim();
                    if s.is_empty() {
                        return Err(invalid(format!("line {line}: missing value in '{}'", cols[c])));
                    }
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| invalid(format!("line {line}: '{s}' in '{}' is not a finite number", cols[c])))
                })
                .collect::<Result<Vec<f64>, _>>()?;
            values.push(row);
        }
        if t.is_empty() {
            return Err(invalid("the dataset has no rows"));
        }
        let n = names.len();
        let y = DMatrix::from_fn(n, t.len(), |i, s| values[s][2 * i]);
        let x = DMatrix::from_fn(n, t.len(), |i, s| values[s][2 * i + 1]);
        Ok(Self { t, names, y, x })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, CliError> {
        let file = std::fs::File::open(path).map_err(|e| invalid(format!("cannot open {}: {e}", path.display())))?;
        Self::read(file)
    }

    /// Writes the dataset with round-trip number formatting.
    pub fn write<W: Write>(&self, writer: W) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        for name in &self.names {
            header.push(format!("y_{name}"));
            header.push(format!("x_{name}"));
        }
        w.write_record(&header).map_err(CliError::io)?;
        for (s, tv) in self.t.iter().enumerate() {
            let mut row = vec![tv.to_string()];
            for i in 0..self.names.len() {
                row.push(self.y[(i, s)].to_string());
                row.push(self.x[(i, s)].to_string());
            }
            w.write_record(&row).map_err(CliError::io)?;
        }
        w.flush().map_err(CliError::io)
    }

    pub fn panel(&self) -> Result<PanelData, CliError> {
        Ok(PanelData::new(self.y.clone(), self.x.clone())?)
    }

    pub fn unit_index(&self, name: &str) -> Result<usize, CliError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| invalid(format!("unknown unit '{name}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let text = "t,y_a,x_a,y_b,x_b\n1,0.1,1e-3,2,3\n2,0.30000000000000004,-1.5,4,5\n";
        let ds = Dataset::read(text.as_bytes()).unwrap();
        assert_eq!(ds.names, vec!["a", "b"]);
        assert_eq!(ds.y[(0, 1)], 0.30000000000000004);
        let mut buf = Vec::new();
        ds.write(&mut buf).unwrap();
        assert_eq!(Dataset::read(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn rejects_malformed_input() {
        for text in [
            "year,y_a,x_a\n1,1,1\n",
            "t,y_a,x_b\n1,1,1\n",
            "t,y_a\n1,1\n",
            "t,y_a,x_a\n1,1,1\n1,2,2\n",
            "t,y_a,x_a\n1,1,\n",
            "t,y_a,x_a\n1,1,nan\n",
            "t,y_a,x_a\n1,1\n",
            "t,y_a,x_a\n",
        ] {
            assert!(matches!(Dataset::read(text.as_bytes()), Err(CliError::Validation(_))), "{text}");
        }
    }
}
