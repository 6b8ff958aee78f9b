use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use super::template::{split_template, RawPart};
use super::{BinOp, Expr, Literal, RuleDef, RuleSet, RuleSource, SourceCall, SynergyDef};
use crate::domain::{CaseKind, FeatureSchema, FeatureType, WeightTier};

const MAX_DEPTH: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    UnknownFeature,
    UnknownModel,
    UnknownCall,
    TypeMismatch,
    DuplicateRule,
    DanglingSynergy,
    InvalidValue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: {:?}: {}",
            self.line, self.column, self.kind, self.message
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} rule parse error(s):\n{}", .0.len(), .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n"))]
pub struct ParseErrors(pub Vec<ParseError>);

impl ParseErrors {
    pub fn has_kind(&self, kind: ParseErrorKind) -> bool {
        self.0.iter().any(|e| e.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Punct(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Str(s) => write!(f, "string {s:?}"),
            Tok::Num(n) => write!(f, "number {n}"),
            Tok::Punct(p) => write!(f, "`{p}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Pos {
    line: usize,
    column: usize,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: Pos,
}

const PUNCTS: [&str; 16] = [
    "<=", ">=", "==", "!=", "{", "}", "[", "]", "(", ")", ":", ",", ".", "+", "-", "*",
];

fn lex(src: &str, base: Pos, errors: &mut Vec<ParseError>) -> Vec<Token> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = base.line;
    let mut col = base.column;
    let err = |errors: &mut Vec<ParseError>, line, column, message: String| {
        errors.push(ParseError {
            line,
            column,
            kind: ParseErrorKind::Syntax,
            message,
        })
    };
    while i < chars.len() {
        let c = chars[i];
        let start = Pos { line, column: col };
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let s = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - s;
            out.push(Token {
                tok: Tok::Ident(chars[s..i].iter().collect()),
                pos: start,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let s = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            col += i - s;
            let text: String = chars[s..i].iter().collect();
            match text.parse::<f64>() {
                Ok(n) if n.is_finite() => out.push(Token {
                    tok: Tok::Num(n),
                    pos: start,
                }),
                _ => err(
                    errors,
                    start.line,
                    start.column,
                    format!("number {text} out of range"),
                ),
            }
            continue;
        }
        if c == '"' {
            i += 1;
            col += 1;
            let mut s = String::new();
            let mut closed = false;
            while i < chars.len() {
                let ch = chars[i];
                if ch == '"' {
                    i += 1;
                    col += 1;
                    closed = true;
                    break;
                }
                if ch == '\n' {
                    break;
                }
                if ch == '\\' {
                    let Some(&next) = chars.get(i + 1) else { break };
                    let mapped = match next {
                        '"' => '"',
                        '\\' => '\\',
                        'n' => '\n',
                        't' => '\t',
                        other => {
                            err(errors, line, col, format!("unknown escape \\{other}"));
                            other
                        }
                    };
                    s.push(mapped);
                    i += 2;
                    col += 2;
                    continue;
                }
                s.push(ch);
                i += 1;
                col += 1;
            }
            if !closed {
                err(
                    errors,
                    start.line,
                    start.column,
                    "unterminated string".into(),
                );
            }
            out.push(Token {
                tok: Tok::Str(s),
                pos: start,
            });
            continue;
        }
        if c == '/' {
            out.push(Token {
                tok: Tok::Punct("/"),
                pos: start,
            });
            i += 1;
            col += 1;
            continue;
        }
        if c == '<' || c == '>' {
            let two = chars.get(i + 1) == Some(&'=');
            let p = match (c, two) {
                ('<', true) => "<=",
                ('<', false) => "<",
                ('>', true) => ">=",
                _ => ">",
            };
            let n = if two { 2 } else { 1 };
            out.push(Token {
                tok: Tok::Punct(p),
                pos: start,
            });
            i += n;
            col += n;
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        if let Some(p) = PUNCTS.iter().find(|p| rest.starts_with(**p)) {
            out.push(Token {
                tok: Tok::Punct(p),
                pos: start,
            });
            i += p.len();
            col += p.len();
            continue;
        }
        err(errors, line, col, format!("unexpected character {c:?}"));
        i += 1;
        col += 1;
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: Pos { line, column: col },
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Num,
    Str,
    Bool,
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ty::Num => "number",
            Ty::Str => "string",
            Ty::Bool => "bool",
        })
    }
}

/// Raised on the first syntax error inside a block; the caller resynchronizes.
struct Abort;

struct Parser<'a> {
    toks: Vec<Token>,
    at: usize,
    schema: &'a FeatureSchema,
    models: &'a BTreeSet<String>,
    errors: Vec<ParseError>,
    depth: usize,
    fatal: bool,
}

type PResult<T> = Result<T, Abort>;

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.toks[self.at]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error_at(&mut self, pos: Pos, kind: ParseErrorKind, message: impl Into<String>) {
        self.errors.push(ParseError {
            line: pos.line,
            column: pos.column,
            kind,
            message: message.into(),
        });
    }

    fn syntax<T>(&mut self, expected: &str) -> PResult<T> {
        let t = self.peek().clone();
        self.error_at(
            t.pos,
            ParseErrorKind::Syntax,
            format!("expected {expected}, found {}", t.tok),
        );
        Err(Abort)
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(&self.peek().tok, Tok::Punct(q) if *q == p)
    }

    fn is_ident(&self, word: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(w) if w == word)
    }

    fn expect_punct(&mut self, p: &str) -> PResult<Pos> {
        if self.is_punct(p) {
            Ok(self.next().pos)
        } else {
            self.syntax(&format!("`{p}`"))
        }
    }

    fn expect_keyword(&mut self, word: &str) -> PResult<Pos> {
        if self.is_ident(word) {
            Ok(self.next().pos)
        } else {
            self.syntax(&format!("`{word}`"))
        }
    }

    fn expect_ident(&mut self) -> PResult<(String, Pos)> {
        match self.peek().tok.clone() {
            Tok::Ident(s) => {
                let pos = self.next().pos;
                Ok((s, pos))
            }
            _ => self.syntax("identifier"),
        }
    }

    fn expect_string(&mut self) -> PResult<(String, Pos)> {
        match self.peek().tok.clone() {
            Tok::Str(s) => {
                let pos = self.next().pos;
                Ok((s, pos))
            }
            _ => self.syntax("string"),
        }
    }

    fn expect_number(&mut self) -> PResult<(f64, Pos)> {
        match self.peek().tok.clone() {
            Tok::Num(n) => {
                let pos = self.next().pos;
                Ok((n, pos))
            }
            _ => self.syntax("number"),
        }
    }

    fn skip_to_block_start(&mut self) {
        loop {
            match &self.peek().tok {
                Tok::Eof => return,
                Tok::Ident(w) if w == "rule" || w == "combo" || w == "kind" => {
                    // Only resynchronize on a block keyword followed by its expected opener.
                    let next = self.toks.get(self.at + 1).map(|t| &t.tok);
                    let opens = match w.as_str() {
                        "rule" => matches!(next, Some(Tok::Str(_))),
                        "combo" => matches!(next, Some(Tok::Punct("{"))),
                        _ => matches!(next, Some(Tok::Punct(":"))),
                    };
                    if opens {
                        return;
                    }
                    self.next();
                }
                _ => {
                    self.next();
                }
            }
        }
    }

    fn file(&mut self) -> RuleSet {
        let mut rs = RuleSet::default();
        let mut rule_pos: HashMap<String, Pos> = HashMap::new();
        let mut combos: Vec<(SynergyDef, Pos)> = Vec::new();
        let mut kind_seen = false;
        while !matches!(self.peek().tok, Tok::Eof) && !self.fatal {
            let before = self.errors.len();
            let result = if self.is_ident("rule") {
                self.rule().map(|(r, pos)| {
                    if let Some(prev) = rule_pos.get(&r.name) {
                        let msg = format!(
                            "duplicate rule name {:?} (first defined at {}:{})",
                            r.name, prev.line, prev.column
                        );
                        self.error_at(pos, ParseErrorKind::DuplicateRule, msg);
                    } else if self.errors.len() == before {
                        rule_pos.insert(r.name.clone(), pos);
                        rs.rules.push(r);
                    }
                })
            } else if self.is_ident("combo") {
                self.combo().map(|c| combos.push(c))
            } else if self.is_ident("kind") {
                let pos = self.peek().pos;
                self.kind_decl().map(|k| {
                    if kind_seen {
                        self.error_at(pos, ParseErrorKind::Syntax, "kind declared twice");
                    }
                    kind_seen = true;
                    rs.kind = Some(k);
                })
            } else {
                self.syntax("`rule`, `combo` or `kind`")
            };
            if result.is_err() {
                self.skip_to_block_start();
            }
        }
        for (combo, pos) in combos {
            let dangling: Vec<_> = combo
                .rule_names
                .iter()
                .filter(|n| !rule_pos.contains_key(*n))
                .cloned()
                .collect();
            if dangling.is_empty() {
                rs.synergies.push(combo);
            } else {
                self.error_at(
                    pos,
                    ParseErrorKind::DanglingSynergy,
                    format!("combo references unknown rule(s): {}", dangling.join(", ")),
                );
            }
        }
        rs
    }

    fn kind_decl(&mut self) -> PResult<CaseKind> {
        self.expect_keyword("kind")?;
        self.expect_punct(":")?;
        let (word, pos) = self.expect_ident()?;
        match word.parse::<CaseKind>() {
            Ok(k) => Ok(k),
            Err(_) => {
                self.error_at(
                    pos,
                    ParseErrorKind::InvalidValue,
                    format!("unknown case kind `{word}`"),
                );
                Err(Abort)
            }
        }
    }

    fn rule(&mut self) -> PResult<(RuleDef, Pos)> {
        self.expect_keyword("rule")?;
        let (name, name_pos) = self.expect_string()?;
        if name.trim().is_empty() {
            self.error_at(
                name_pos,
                ParseErrorKind::InvalidValue,
                "rule name must be non-empty",
            );
        }
        self.expect_punct("{")?;
        self.expect_keyword("weight")?;
        self.expect_punct(":")?;
        let (tier_word, tier_pos) = self.expect_ident()?;
        let tier = match tier_word.as_str() {
            "LOW" => WeightTier::Low,
            "MED" => WeightTier::Med,
            "HIGH" => WeightTier::High,
            _ => {
                self.error_at(
                    tier_pos,
                    ParseErrorKind::InvalidValue,
                    format!("unknown weight `{tier_word}`, expected LOW, MED or HIGH"),
                );
                return Err(Abort);
            }
        };
        let mut contribution = None;
        if self.is_ident("contribution") {
            self.next();
            self.expect_punct(":")?;
            let (c, pos) = self.expect_number()?;
            if !(c > 0.0 && c <= 1.0) {
                self.error_at(
                    pos,
                    ParseErrorKind::InvalidValue,
                    format!("contribution {c} outside (0, 1]"),
                );
            }
            contribution = Some(c);
        }
        self.expect_keyword("when")?;
        self.expect_punct(":")?;
        let cond_pos = self.peek().pos;
        let (condition, ty) = self.expr()?;
        if ty != Ty::Bool {
            self.error_at(
                cond_pos,
                ParseErrorKind::TypeMismatch,
                format!("condition must be bool, found {ty}"),
            );
        }
        let mut explanation = String::new();
        let mut explain_pos = None;
        if self.is_ident("explain") {
            self.next();
            self.expect_punct(":")?;
            let (text, pos) = self.expect_string()?;
            explanation = text;
            explain_pos = Some(pos);
        }
        let mut source = RuleSource::Expert;
        if self.is_ident("source") {
            self.next();
            self.expect_punct(":")?;
            let (word, pos) = self.expect_ident()?;
            source = match word.as_str() {
                "expert" => RuleSource::Expert,
                "model" => RuleSource::ModelBacked,
                _ => {
                    self.error_at(
                        pos,
                        ParseErrorKind::InvalidValue,
                        format!("unknown source `{word}`, expected expert or model"),
                    );
                    return Err(Abort);
                }
            };
        }
        let close = self.expect_punct("}")?;
        if source == RuleSource::Expert && explanation.trim().is_empty() {
            self.error_at(
                close,
                ParseErrorKind::InvalidValue,
                format!("expert rule {name:?} needs a non-empty explain"),
            );
        }
        if let Some(pos) = explain_pos {
            self.check_template(&explanation, pos);
        }
        Ok((
            RuleDef {
                name,
                tier,
                contribution,
                condition,
                explanation,
                source,
            },
            name_pos,
        ))
    }

    fn check_template(&mut self, text: &str, pos: Pos) {
        match split_template(text) {
            Err(msg) => self.error_at(
                pos,
                ParseErrorKind::Syntax,
                format!("explanation template: {msg}"),
            ),
            Ok(parts) => {
                for part in parts {
                    if let RawPart::Placeholder(src) = part {
                        if let Err(errs) =
                            parse_placeholder(&src, Some((self.schema, self.models)), pos)
                        {
                            self.errors.extend(errs);
                        }
                    }
                }
            }
        }
    }

    fn combo(&mut self) -> PResult<(SynergyDef, Pos)> {
        let pos = self.expect_keyword("combo")?;
        self.expect_punct("{")?;
        self.expect_keyword("rules")?;
        self.expect_punct(":")?;
        self.expect_punct("[")?;
        let mut names = BTreeSet::new();
        loop {
            let (name, npos) = self.expect_string()?;
            if !names.insert(name.clone()) {
                self.error_at(
                    npos,
                    ParseErrorKind::InvalidValue,
                    format!("rule {name:?} listed twice in combo"),
                );
            }
            if self.is_punct(",") {
                self.next();
                continue;
            }
            break;
        }
        self.expect_punct("]")?;
        if names.len() < 2 {
            self.error_at(
                pos,
                ParseErrorKind::InvalidValue,
                "combo needs at least two rules",
            );
        }
        self.expect_keyword("bonus")?;
        self.expect_punct(":")?;
        let (bonus, bpos) = self.expect_number()?;
        if !(bonus > 0.0 && bonus <= 1.0) {
            self.error_at(
                bpos,
                ParseErrorKind::InvalidValue,
                format!("bonus {bonus} outside (0, 1]"),
            );
        }
        self.expect_punct("}")?;
        Ok((
            SynergyDef {
                rule_names: names,
                bonus,
            },
            pos,
        ))
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            let pos = self.peek().pos;
            self.error_at(
                pos,
                ParseErrorKind::Syntax,
                format!("expression nested deeper than {MAX_DEPTH}"),
            );
            self.fatal = true;
            return Err(Abort);
        }
        Ok(())
    }

    fn expr(&mut self) -> PResult<(Expr, Ty)> {
        self.enter()?;
        let r = self.or_expr();
        self.depth -= 1;
        r
    }

    fn bool_operand(&mut self, pos: Pos, ty: Ty, op: &str) {
        if ty != Ty::Bool {
            self.error_at(
                pos,
                ParseErrorKind::TypeMismatch,
                format!("`{op}` needs bool operands, found {ty}"),
            );
        }
    }

    fn or_expr(&mut self) -> PResult<(Expr, Ty)> {
        let pos = self.peek().pos;
        let (mut lhs, ty) = self.and_expr()?;
        let mut out_ty = ty;
        if self.is_ident("or") {
            self.bool_operand(pos, ty, "or");
            out_ty = Ty::Bool;
        }
        while self.is_ident("or") {
            self.next();
            let rpos = self.peek().pos;
            let (rhs, rty) = self.and_expr()?;
            self.bool_operand(rpos, rty, "or");
            lhs = Expr::binary(BinOp::Or, lhs, rhs);
        }
        Ok((lhs, out_ty))
    }

    fn and_expr(&mut self) -> PResult<(Expr, Ty)> {
        let pos = self.peek().pos;
        let (mut lhs, ty) = self.not_expr()?;
        let mut out_ty = ty;
        if self.is_ident("and") {
            self.bool_operand(pos, ty, "and");
            out_ty = Ty::Bool;
        }
        while self.is_ident("and") {
            self.next();
            let rpos = self.peek().pos;
            let (rhs, rty) = self.not_expr()?;
            self.bool_operand(rpos, rty, "and");
            lhs = Expr::binary(BinOp::And, lhs, rhs);
        }
        Ok((lhs, out_ty))
    }

    fn not_expr(&mut self) -> PResult<(Expr, Ty)> {
        if self.is_ident("not") {
            self.next();
            self.enter()?;
            let pos = self.peek().pos;
            let r = self.not_expr();
            self.depth -= 1;
            let (inner, ty) = r?;
            self.bool_operand(pos, ty, "not");
            return Ok((Expr::Not(Box::new(inner)), Ty::Bool));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<(Expr, Ty)> {
        let (lhs, lty) = self.sum()?;
        let op = match &self.peek().tok {
            Tok::Punct("<") => BinOp::Lt,
            Tok::Punct("<=") => BinOp::Le,
            Tok::Punct(">") => BinOp::Gt,
            Tok::Punct(">=") => BinOp::Ge,
            Tok::Punct("==") => BinOp::Eq,
            Tok::Punct("!=") => BinOp::Ne,
            _ => return Ok((lhs, lty)),
        };
        let op_pos = self.next().pos;
        let (rhs, rty) = self.sum()?;
        let ok = match op {
            BinOp::Eq | BinOp::Ne => lty == rty,
            _ => lty == Ty::Num && rty == Ty::Num,
        };
        if !ok {
            let msg = match op {
                BinOp::Eq | BinOp::Ne => format!("`{}` compares {lty} with {rty}", op.symbol()),
                _ => format!("`{}` needs numbers, found {lty} and {rty}", op.symbol()),
            };
            self.error_at(op_pos, ParseErrorKind::TypeMismatch, msg);
        }
        Ok((Expr::binary(op, lhs, rhs), Ty::Bool))
    }

    fn num_operand(&mut self, pos: Pos, ty: Ty, op: &str) {
        if ty != Ty::Num {
            self.error_at(
                pos,
                ParseErrorKind::TypeMismatch,
                format!("`{op}` needs numbers, found {ty}"),
            );
        }
    }

    fn sum(&mut self) -> PResult<(Expr, Ty)> {
        let pos = self.peek().pos;
        let (mut lhs, ty) = self.product()?;
        let mut out_ty = ty;
        let mut first = true;
        loop {
            let op = match &self.peek().tok {
                Tok::Punct("+") => BinOp::Add,
                Tok::Punct("-") => BinOp::Sub,
                _ => break,
            };
            if first {
                self.num_operand(pos, ty, op.symbol());
                out_ty = Ty::Num;
                first = false;
            }
            self.next();
            let rpos = self.peek().pos;
            let (rhs, rty) = self.product()?;
            self.num_operand(rpos, rty, op.symbol());
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok((lhs, out_ty))
    }

    fn product(&mut self) -> PResult<(Expr, Ty)> {
        let pos = self.peek().pos;
        let (mut lhs, ty) = self.unary()?;
        let mut out_ty = ty;
        let mut first = true;
        loop {
            let op = match &self.peek().tok {
                Tok::Punct("*") => BinOp::Mul,
                Tok::Punct("/") => BinOp::Div,
                _ => break,
            };
            if first {
                self.num_operand(pos, ty, op.symbol());
                out_ty = Ty::Num;
                first = false;
            }
            self.next();
            let rpos = self.peek().pos;
            let (rhs, rty) = self.unary()?;
            self.num_operand(rpos, rty, op.symbol());
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok((lhs, out_ty))
    }

    fn unary(&mut self) -> PResult<(Expr, Ty)> {
        if self.is_punct("-") {
            let pos = self.next().pos;
            if let Tok::Num(n) = self.peek().tok {
                self.next();
                return Ok((Expr::Lit(Literal::Num(-n)), Ty::Num));
            }
            self.enter()?;
            let r = self.unary();
            self.depth -= 1;
            let (inner, ty) = r?;
            self.num_operand(pos, ty, "-");
            return Ok((Expr::Neg(Box::new(inner)), Ty::Num));
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<(Expr, Ty)> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Num(n) => {
                self.next();
                Ok((Expr::Lit(Literal::Num(n)), Ty::Num))
            }
            Tok::Str(s) => {
                self.next();
                Ok((Expr::Lit(Literal::Str(s)), Ty::Str))
            }
            Tok::Punct("(") => {
                self.next();
                let r = self.expr()?;
                self.expect_punct(")")?;
                Ok(r)
            }
            Tok::Ident(word) => {
                self.next();
                match word.as_str() {
                    "true" => Ok((Expr::Lit(Literal::Bool(true)), Ty::Bool)),
                    "false" => Ok((Expr::Lit(Literal::Bool(false)), Ty::Bool)),
                    "case" => {
                        self.expect_punct(".")?;
                        let (name, pos) = self.expect_ident()?;
                        let ty = match self.schema.type_of(&name) {
                            Some(FeatureType::Number) => Ty::Num,
                            Some(FeatureType::Text) => Ty::Str,
                            Some(FeatureType::Flag) => Ty::Bool,
                            None => {
                                self.error_at(
                                    pos,
                                    ParseErrorKind::UnknownFeature,
                                    format!("unknown feature `{name}`"),
                                );
                                Ty::Num
                            }
                        };
                        Ok((Expr::Feature(name), ty))
                    }
                    "model" => {
                        self.expect_punct(".")?;
                        let (id, pos) = self.expect_ident()?;
                        if !self.models.contains(&id) {
                            self.error_at(
                                pos,
                                ParseErrorKind::UnknownModel,
                                format!("unknown model `{id}`"),
                            );
                        }
                        Ok((Expr::Model(id), Ty::Num))
                    }
                    _ if matches!(self.peek().tok, Tok::Punct("(")) => self.call(word, t.pos),
                    _ => {
                        self.error_at(
                            t.pos,
                            ParseErrorKind::Syntax,
                            format!("unexpected identifier `{word}` in expression"),
                        );
                        Err(Abort)
                    }
                }
            }
            _ => self.syntax("expression"),
        }
    }

    fn call(&mut self, name: String, pos: Pos) -> PResult<(Expr, Ty)> {
        self.expect_punct("(")?;
        let mut arg = None;
        if !self.is_punct(")") {
            let (a, apos) = self.expect_ident()?;
            arg = Some((a, apos));
        }
        self.expect_punct(")")?;
        let nullary = |call: SourceCall, this: &mut Self| {
            if let Some((_, apos)) = &arg {
                this.error_at(
                    *apos,
                    ParseErrorKind::TypeMismatch,
                    format!("`{name}` takes no arguments"),
                );
            }
            call
        };
        let call = match name.as_str() {
            "watchlist_links" => nullary(SourceCall::WatchlistLinks, self),
            "companies_at_address" => nullary(SourceCall::CompaniesAtAddress, self),
            "months_since_last_vat_return" => nullary(SourceCall::MonthsSinceLastVatReturn, self),
            "uid_invalid_count" => nullary(SourceCall::UidInvalidCount, self),
            "peer_ratio" | "peer_zscore" => {
                let Some((feature, apos)) = arg.clone() else {
                    self.error_at(
                        pos,
                        ParseErrorKind::TypeMismatch,
                        format!("`{name}` takes one feature name"),
                    );
                    return Err(Abort);
                };
                match self.schema.type_of(&feature) {
                    Some(FeatureType::Number) => {}
                    Some(_) => self.error_at(
                        apos,
                        ParseErrorKind::TypeMismatch,
                        format!("`{name}` needs a numeric feature, `{feature}` is not"),
                    ),
                    None => self.error_at(
                        apos,
                        ParseErrorKind::UnknownFeature,
                        format!("unknown feature `{feature}`"),
                    ),
                }
                if name == "peer_ratio" {
                    SourceCall::PeerRatio(feature)
                } else {
                    SourceCall::PeerZscore(feature)
                }
            }
            _ => {
                self.error_at(
                    pos,
                    ParseErrorKind::UnknownCall,
                    format!("unknown call `{name}()`"),
                );
                return Err(Abort);
            }
        };
        Ok((Expr::Call(call), Ty::Num))
    }
}

/// Parses a rule file, type-checking every condition against the schema and model ids.
///
/// Either the full, checked [`RuleSet`] or every error found; never a partial set.
pub fn parse_rules(
    text: &str,
    schema: &FeatureSchema,
    model_ids: &BTreeSet<String>,
) -> Result<RuleSet, ParseErrors> {
    let mut errors = Vec::new();
    let toks = lex(text, Pos { line: 1, column: 1 }, &mut errors);
    let mut p = Parser {
        toks,
        at: 0,
        schema,
        models: model_ids,
        errors,
        depth: 0,
        fatal: false,
    };
    let rs = p.file();
    if p.errors.is_empty() {
        Ok(rs)
    } else {
        let mut errs = p.errors;
        errs.sort_by_key(|e| (e.line, e.column));
        Err(ParseErrors(errs))
    }
}

/// Byte-level entry point; invalid UTF-8 is a syntax error at its offset.
pub fn parse_rules_bytes(
    bytes: &[u8],
    schema: &FeatureSchema,
    model_ids: &BTreeSet<String>,
) -> Result<RuleSet, ParseErrors> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_rules(text, schema, model_ids),
        Err(e) => {
            let valid = &bytes[..e.valid_up_to()];
            let line = 1 + valid.iter().filter(|b| **b == b'\n').count();
            let column = 1 + valid.iter().rev().take_while(|b| **b != b'\n').count();
            Err(ParseErrors(vec![ParseError {
                line,
                column,
                kind: ParseErrorKind::Syntax,
                message: "input is not valid UTF-8".into(),
            }]))
        }
    }
}

/// Parses one `{...}` template placeholder: a feature, model or source-call reference.
///
/// With `check` set, references are validated against the schema and model ids.
pub(crate) fn parse_placeholder(
    src: &str,
    check: Option<(&FeatureSchema, &BTreeSet<String>)>,
    pos: Pos,
) -> Result<Expr, Vec<ParseError>> {
    let empty_schema;
    let empty_models;
    let (schema, models, checked) = match check {
        Some((s, m)) => (s, m, true),
        None => {
            empty_schema = FeatureSchema::default();
            empty_models = BTreeSet::new();
            (&empty_schema, &empty_models, false)
        }
    };
    let mut errors = Vec::new();
    let toks = lex(src, pos, &mut errors);
    let mut p = Parser {
        toks,
        at: 0,
        schema,
        models,
        errors,
        depth: 0,
        fatal: false,
    };
    let parsed = p.primary();
    if parsed.is_ok() && !matches!(p.peek().tok, Tok::Eof) {
        let _ = p.syntax::<()>("end of placeholder");
    }
    if !checked {
        p.errors.retain(|e| {
            !matches!(
                e.kind,
                ParseErrorKind::UnknownFeature
                    | ParseErrorKind::UnknownModel
                    | ParseErrorKind::TypeMismatch
            )
        });
    }
    match parsed {
        Ok((e @ (Expr::Feature(_) | Expr::Model(_) | Expr::Call(_)), _)) if p.errors.is_empty() => {
            Ok(e)
        }
        Ok(_) if p.errors.is_empty() => Err(vec![ParseError {
            line: pos.line,
            column: pos.column,
            kind: ParseErrorKind::Syntax,
            message: format!(
                "placeholder {{{src}}} must be a case., model. or source-call reference"
            ),
        }]),
        _ => Err(p.errors),
    }
}

pub(crate) fn placeholder_unchecked(src: &str) -> Option<Expr> {
    parse_placeholder(src, None, Pos { line: 1, column: 1 }).ok()
}
