use std::collections::BTreeMap;

use super::parser::placeholder_unchecked;
use super::{format_expr, Expr, Literal};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum RawPart {
    Text(String),
    Placeholder(String),
}

/// Splits a template into literal text and `{...}` placeholder sources. `{{` and `}}` are literal braces.
pub(crate) fn split_template(text: &str) -> Result<Vec<RawPart>, String> {
    let mut parts = Vec::new();
    let mut buf = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                buf.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                buf.push('}');
            }
            '{' => {
                if !buf.is_empty() {
                    parts.push(RawPart::Text(std::mem::take(&mut buf)));
                }
                let mut inner = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some('{') => return Err("nested `{` in placeholder".into()),
                        Some(ch) => inner.push(ch),
                        None => return Err("unclosed `{` in template".into()),
                    }
                }
                parts.push(RawPart::Placeholder(inner.trim().to_string()));
            }
            '}' => return Err("unmatched `}` in template (write `}}` for a literal brace)".into()),
            other => buf.push(other),
        }
    }
    if !buf.is_empty() {
        parts.push(RawPart::Text(buf));
    }
    Ok(parts)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TemplatePart {
    Text(String),
    /// A reference; its canonical text keys the inputs snapshot.
    Value {
        key: String,
        expr: Expr,
    },
}

/// A pre-split explanation template.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Template {
    pub parts: Vec<TemplatePart>,
}

impl Template {
    /// Compiles a template that already passed rule parsing. Malformed placeholders render verbatim.
    pub fn compile(text: &str) -> Template {
        let parts = match split_template(text) {
            Ok(raw) => raw
                .into_iter()
                .map(|p| match p {
                    RawPart::Text(t) => TemplatePart::Text(t),
                    RawPart::Placeholder(src) => match placeholder_unchecked(&src) {
                        Some(expr) => TemplatePart::Value {
                            key: format_expr(&expr),
                            expr,
                        },
                        None => TemplatePart::Text(format!("{{{src}}}")),
                    },
                })
                .collect(),
            Err(_) => vec![TemplatePart::Text(text.to_string())],
        };
        Template { parts }
    }

    pub fn references(&self) -> impl Iterator<Item = &Expr> {
        self.parts.iter().filter_map(|p| match p {
            TemplatePart::Value { expr, .. } => Some(expr),
            TemplatePart::Text(_) => None,
        })
    }

    /// Substitutes snapshot values; unknown keys render as `?`.
    pub fn render(&self, snapshot: &BTreeMap<String, Literal>) -> String {
        let mut out = String::new();
        for part in &self.parts {
            match part {
                TemplatePart::Text(t) => out.push_str(t),
                TemplatePart::Value { key, .. } => match snapshot.get(key) {
                    Some(Literal::Num(n)) => out.push_str(&format_number(*n)),
                    Some(Literal::Str(s)) => out.push_str(s),
                    Some(Literal::Bool(b)) => out.push_str(if *b { "yes" } else { "no" }),
                    None => out.push('?'),
                },
            }
        }
        out
    }
}

/// Integers print without a fraction; other values with at most four decimals.
pub fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        return format!("{}", n as i64);
    }
    let s = format!("{n:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}
