use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Five-point judgment scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Grade {
    Bad = 1,
    Fair = 2,
    Good = 3,
    Excellent = 4,
    Perfect = 5,
}

impl Grade {
    pub fn from_label(label: f64) -> Option<Self> {
        match label.round() as i64 {
            1 => Some(Grade::Bad),
            2 => Some(Grade::Fair),
            3 => Some(Grade::Good),
            4 => Some(Grade::Excellent),
            5 => Some(Grade::Perfect),
            _ => None,
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "bad" => Some(Grade::Bad),
            "fair" => Some(Grade::Fair),
            "good" => Some(Grade::Good),
            "excellent" => Some(Grade::Excellent),
            "perfect" => Some(Grade::Perfect),
            _ => None,
        }
    }

    pub fn value(self) -> f64 {
        self as i64 as f64
    }
}

/// Row-major feature matrix with labels and a named schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn new(schema: Vec<String>) -> Self {
        Self {
            schema,
            rows: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>, label: f64) -> Result<()> {
        if row.len() != self.schema.len() {
            return Err(Error::SchemaMismatch {
                expected: self.schema.len(),
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) || !label.is_finite() {
            return Err(Error::NonFinite);
        }
        self.rows.push(row);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    /// Parses `feature_1,...,feature_n,label`. The label column may hold a
    /// number or a grade name (Bad .. Perfect).
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        if headers.len() < 2 || headers.get(headers.len() - 1) != Some("label") {
            return Err(Error::Parse {
                line: 1,
                message: "header must be feature columns followed by 'label'".into(),
            });
        }
        let schema: Vec<String> = headers.iter().take(headers.len() - 1).map(str::to_string).collect();
        let mut ds = Dataset::new(schema);
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 2);
            let bad = |message: String| Error::Parse { line, message };
            if rec.len() != headers.len() {
                return Err(bad(format!("expected {} fields, got {}", headers.len(), rec.len())));
            }
            let row: Vec<f64> = rec
                .iter()
                .take(rec.len() - 1)
                .map(|f| f.parse::<f64>().map_err(|e| bad(format!("bad number {f:?}: {e}"))))
                .collect::<Result<_>>()?;
            let raw = &rec[rec.len() - 1];
            let label = match raw.parse::<f64>() {
                Ok(v) => v,
                Err(_) => Grade::parse(raw)
                    .map(Grade::value)
                    .ok_or_else(|| bad(format!("bad label {raw:?}")))?,
            };
            ds.push(row, label).map_err(|e| bad(e.to_string()))?;
        }
        Ok(ds)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.schema.clone();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, label) in self.rows.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(label.to_string());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }
}
