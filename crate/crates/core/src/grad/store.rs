use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::GradError;

/// A named region of a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Logical shape (rows, cols); a bias vector is `(len, 1)`.
    pub shape: (usize, usize),
}

impl Slice {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Flat storage for all trainable parameters of one network.
///
/// The layout slices are disjoint and cover `values` exactly. A frozen store
/// refuses mutable access through [`ParameterStore::values_mut`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    values: Vec<f64>,
    layout: Vec<Slice>,
    frozen: bool,
}

impl Default for ParameterStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            layout: Vec::new(),
            frozen: false,
        }
    }

    /// Builds a store from raw values with a single anonymous slice.
    pub fn from_values(values: Vec<f64>) -> Self {
        let len = values.len();
        let layout = if len == 0 {
            Vec::new()
        } else {
            vec![Slice {
                name: "theta".into(),
                offset: 0,
                len,
                shape: (len, 1),
            }]
        };
        Self {
            values,
            layout,
            frozen: false,
        }
    }

    /// Appends a named region and returns its offset.
    pub fn push_slice(&mut self, name: impl Into<String>, shape: (usize, usize), init: &[f64]) -> usize {
        let len = shape.0 * shape.1;
        assert_eq!(init.len(), len, "slice initializer length mismatch");
        let offset = self.values.len();
        self.values.extend_from_slice(init);
        self.layout.push(Slice {
            name: name.into(),
            offset,
            len,
            shape,
        });
        offset
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> Result<&mut [f64], GradError> {
        if self.frozen {
            return Err(GradError::FrozenStore);
        }
        Ok(&mut self.values)
    }

    pub fn layout(&self) -> &[Slice] {
        &self.layout
    }

    pub fn slice(&self, name: &str) -> Option<&Slice> {
        self.layout.iter().find(|s| s.name == name)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    /// Checks that the layout slices are disjoint and cover the value array.
    pub fn check_layout(&self) -> Result<(), GradError> {
        let mut slices: Vec<&Slice> = self.layout.iter().collect();
        slices.sort_by_key(|s| s.offset);
        let mut cursor = 0;
        for s in slices {
            if s.offset != cursor || s.shape.0 * s.shape.1 != s.len {
                return Err(GradError::Layout(format!(
                    "slice `{}` at offset {} (len {}) does not continue at {cursor}",
                    s.name, s.offset, s.len
                )));
            }
            cursor += s.len;
        }
        if cursor != self.values.len() {
            return Err(GradError::Layout(format!(
                "slices cover {cursor} of {} values",
                self.values.len()
            )));
        }
        Ok(())
    }

    /// Writes the text snapshot format: a layout header followed by one
    /// value per line in shortest round-trip notation.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = String::new();
        writeln!(header, "hipinn-params v1").unwrap();
        writeln!(header, "frozen {}", self.frozen).unwrap();
        writeln!(header, "len {}", self.values.len()).unwrap();
        for s in &self.layout {
            writeln!(header, "slice {} {} {} {} {}", s.name, s.offset, s.len, s.shape.0, s.shape.1).unwrap();
        }
        writeln!(header, "values").unwrap();
        out.write_all(header.as_bytes())?;
        for v in &self.values {
            writeln!(out, "{v:e}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self, GradError> {
        let bad = |msg: String| GradError::Snapshot(msg);
        let mut lines = input.lines();
        let mut next = || -> Result<String, GradError> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of snapshot".into()))?
                .map_err(|e| bad(e.to_string()))
        };
        if next()?.trim() != "hipinn-params v1" {
            return Err(bad("missing `hipinn-params v1` header".into()));
        }
        let frozen = match next()?.trim() {
            "frozen true" => true,
            "frozen false" => false,
            other => return Err(bad(format!("expected frozen flag, got `{other}`"))),
        };
        let len_line = next()?;
        let len: usize = len_line
            .trim()
            .strip_prefix("len ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(format!("expected `len <n>`, got `{len_line}`")))?;
        let mut layout = Vec::new();
        loop {
            let line = next()?;
            let line = line.trim();
            if line == "values" {
                break;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{line}: {e}")));
            match parts.as_slice() {
                ["slice", name, offset, n, rows, cols] => layout.push(Slice {
                    name: (*name).to_string(),
                    offset: parse(offset)?,
                    len: parse(n)?,
                    shape: (parse(rows)?, parse(cols)?),
                }),
                _ => return Err(bad(format!("malformed layout line `{line}`"))),
            }
        }
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            let line = next()?;
            values.push(line.trim().parse::<f64>().map_err(|e| bad(format!("value `{line}`: {e}")))?);
        }
        let store = Self { values, layout, frozen };
        store.check_layout()?;
        Ok(store)
    }
}
