use std::fmt::Write;

use super::{Expr, Literal, RuleSet, RuleSource};

const PREC_NOT: u8 = 3;
const PREC_SUM: u8 = 5;
const PREC_UNARY: u8 = 7;
const PREC_ATOM: u8 = 8;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Lit(_) | Expr::Feature(_) | Expr::Model(_) | Expr::Call(_) => PREC_ATOM,
        Expr::Neg(_) => PREC_UNARY,
        Expr::Not(_) => PREC_NOT,
        Expr::Binary { op, .. } => op.precedence(),
    }
}

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn write_expr(e: &Expr, out: &mut String) {
    match e {
        Expr::Lit(Literal::Num(n)) => {
            let _ = write!(out, "{n}");
        }
        Expr::Lit(Literal::Str(s)) => out.push_str(&quote(s)),
        Expr::Lit(Literal::Bool(b)) => out.push_str(if *b { "true" } else { "false" }),
        Expr::Feature(f) => {
            let _ = write!(out, "case.{f}");
        }
        Expr::Model(m) => {
            let _ = write!(out, "model.{m}");
        }
        Expr::Call(c) => {
            let _ = write!(out, "{c}");
        }
        Expr::Not(inner) => {
            out.push_str("not ");
            write_child(inner, PREC_NOT, out);
        }
        Expr::Neg(inner) => {
            // Always parenthesized: `-3` would reparse as a negative literal.
            out.push_str("-(");
            write_expr(inner, out);
            out.push(')');
        }
        Expr::Binary { op, lhs, rhs } => {
            let p = op.precedence();
            let (lmin, rmin) = if op.is_comparison() {
                (PREC_SUM, PREC_SUM)
            } else {
                (p, p + 1)
            };
            write_child(lhs, lmin, out);
            let _ = write!(out, " {} ", op.symbol());
            write_child(rhs, rmin, out);
        }
    }
}

fn write_child(e: &Expr, min: u8, out: &mut String) {
    if precedence(e) < min {
        out.push('(');
        write_expr(e, out);
        out.push(')');
    } else {
        write_expr(e, out);
    }
}

/// Canonical text of an expression with the minimal parentheses needed to reparse it identically.
pub fn format_expr(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(e, &mut out);
    out
}

/// Canonical rule-file text. An empty, kind-less set formats as the empty string.
pub fn format_rules(rs: &RuleSet) -> String {
    let mut blocks: Vec<String> = Vec::new();
    if let Some(kind) = rs.kind {
        blocks.push(format!("kind: {kind}\n"));
    }
    for r in &rs.rules {
        let mut b = String::new();
        let _ = writeln!(b, "rule {} {{", quote(&r.name));
        let _ = writeln!(b, "    weight: {}", r.tier);
        if let Some(c) = r.contribution {
            let _ = writeln!(b, "    contribution: {c}");
        }
        let _ = writeln!(b, "    when: {}", format_expr(&r.condition));
        if !r.explanation.is_empty() {
            let _ = writeln!(b, "    explain: {}", quote(&r.explanation));
        }
        if r.source == RuleSource::ModelBacked {
            b.push_str("    source: model\n");
        }
        b.push_str("}\n");
        blocks.push(b);
    }
    for s in &rs.synergies {
        let names: Vec<String> = s.rule_names.iter().map(|n| quote(n)).collect();
        blocks.push(format!(
            "combo {{\n    rules: [{}]\n    bonus: {}\n}}\n",
            names.join(", "),
            s.bonus
        ));
    }
    blocks.join("\n")
}
