//! Plain-text reports: fixed key order, 6 significant digits.

use std::fmt::Write as _;

use mirrorscan::numfmt::fmt_sig;

pub const REPORT_DIGITS: usize = 6;

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Report {
    text: String,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn section(&mut self, name: &str) -> &mut Self {
        let _ = writeln!(self.text, "{name}");
        self
    }

    pub fn num(&mut self, key: &str, value: f64) -> &mut Self {
        let _ = writeln!(self.text, "  {key}: {}", fmt_sig(value, REPORT_DIGITS));
        self
    }

    pub fn opt(&mut self, key: &str, value: Option<f64>) -> &mut Self {
        match value {
            Some(v) => self.num(key, v),
            None => self.text(key, "none"),
        }
    }

    pub fn int(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.text, "  {key}: {value}");
        self
    }

    pub fn text(&mut self, key: &str, value: &str) -> &mut Self {
        let _ = writeln!(self.text, "  {key}: {value}");
        self
    }

    pub fn append(&mut self, other: &Report) -> &mut Self {
        self.text.push_str(&other.text);
        self
    }

    pub fn raw(&mut self, text: &str) -> &mut Self {
        self.text.push_str(text);
        self
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}
