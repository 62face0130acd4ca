//! CSV tables and where they go.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};

/// One CSV cell.
#[derive(Debug, Clone)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self, precision: usize) -> String {
        match self {
            Cell::Num(x) => format!("{:.*e}", precision - 1, x),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<Option<u32>> for Cell {
    fn from(x: Option<u32>) -> Self {
        x.map_or(Cell::Empty, |n| Cell::Int(n.into()))
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_owned())
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Table {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Numbers in scientific notation with `precision` significant digits.
    pub fn render(&self, precision: usize) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|c| c.render(precision)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Output destination: a file or stdout.
pub struct Sink(Option<PathBuf>);

impl Sink {
    pub fn new(path: Option<PathBuf>) -> Self {
        Sink(path)
    }

    pub fn write(&self, text: &str) -> Result<()> {
        match &self.0 {
            Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
            None => std::io::stdout().lock().write_all(text.as_bytes()).context("writing to stdout"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_significant_digits() {
        let mut t = Table::new(&["a", "b", "c", "d"]);
        t.push(vec![Cell::Num(1.0 / 3.0), Cell::from(None::<f64>), Cell::Int(7), Cell::from("wcp")]);
        assert_eq!(t.render(4), "a,b,c,d\n3.333e-1,,7,wcp\n");
    }
}
