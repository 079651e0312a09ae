//! Model description language.
//!
//! One statement per line (`;` also separates statements), `#` starts a comment:
//!
//! ```text
//! eta3 ~ x1 + x2          # regression: eta3 depends on x1 and x2
//! eta1 =~ 2*y1 + y2 + y3  # measurement: eta1 is measured by y1 (loading fixed to 2), y2, y3
//! y5 ~~ y6                # covariance between y5 and y6
//! y1, y2 is ordinal       # type declaration
//! ```

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};

/// A right-hand-side variable with an optional fixed coefficient (`c*name`).
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub name: String,
    pub fixed: Option<f64>,
}

impl Term {
    pub fn free(name: impl Into<String>) -> Self {
        Term {
            name: name.into(),
            fixed: None,
        }
    }

    pub fn fixed(name: impl Into<String>, value: f64) -> Self {
        Term {
            name: name.into(),
            fixed: Some(value),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.fixed {
            Some(v) => write!(f, "{}*{}", v, self.name),
            None => f.write_str(&self.name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarType {
    Ordinal,
}

impl VarType {
    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "ordinal" => Some(VarType::Ordinal),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VarType::Ordinal => "ordinal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatementKind {
    Regression,
    Loading,
    Covariance,
    TypeDecl,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    /// `lhs ~ rhs1 + rhs2 ...`
    Regression { lhs: String, rhs: Vec<Term> },
    /// `latent =~ manifest1 + manifest2 ...`
    Loading { latent: String, rhs: Vec<Term> },
    /// `lhs ~~ rhs`; a line with several right-hand terms becomes several statements.
    Covariance { lhs: String, rhs: Term },
    /// `v1, v2 is ordinal`
    TypeDecl { vars: Vec<String>, tag: VarType },
}

impl Statement {
    pub fn kind(&self) -> StatementKind {
        match self {
            Statement::Regression { .. } => StatementKind::Regression,
            Statement::Loading { .. } => StatementKind::Loading,
            Statement::Covariance { .. } => StatementKind::Covariance,
            Statement::TypeDecl { .. } => StatementKind::TypeDecl,
        }
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn join(f: &mut fmt::Formatter<'_>, terms: &[Term]) -> fmt::Result {
            for (i, t) in terms.iter().enumerate() {
                if i > 0 {
                    f.write_str(" + ")?;
                }
                write!(f, "{t}")?;
            }
            Ok(())
        }
        match self {
            Statement::Regression { lhs, rhs } => {
                write!(f, "{lhs} ~ ")?;
                join(f, rhs)
            }
            Statement::Loading { latent, rhs } => {
                write!(f, "{latent} =~ ")?;
                join(f, rhs)
            }
            Statement::Covariance { lhs, rhs } => write!(f, "{lhs} ~~ {rhs}"),
            Statement::TypeDecl { vars, tag } => {
                write!(f, "{} is {}", vars.join(", "), tag.as_str())
            }
        }
    }
}

/// Parsed model: statements in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelDescription {
    pub statements: Vec<Statement>,
}

impl ModelDescription {
    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn regressions(&self) -> impl Iterator<Item = (&str, &Term)> {
        self.statements.iter().flat_map(|s| match s {
            Statement::Regression { lhs, rhs } => rhs.iter().map(move |t| (lhs.as_str(), t)).collect(),
            _ => Vec::new(),
        })
    }

    pub fn loadings(&self) -> impl Iterator<Item = (&str, &Term)> {
        self.statements.iter().flat_map(|s| match s {
            Statement::Loading { latent, rhs } => {
                rhs.iter().map(move |t| (latent.as_str(), t)).collect()
            }
            _ => Vec::new(),
        })
    }

    pub fn covariances(&self) -> impl Iterator<Item = (&str, &Term)> {
        self.statements.iter().filter_map(|s| match s {
            Statement::Covariance { lhs, rhs } => Some((lhs.as_str(), rhs)),
            _ => None,
        })
    }

    pub fn type_decls(&self) -> impl Iterator<Item = (&[String], VarType)> {
        self.statements.iter().filter_map(|s| match s {
            Statement::TypeDecl { vars, tag } => Some((vars.as_slice(), *tag)),
            _ => None,
        })
    }
}

impl fmt::Display for ModelDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.statements {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for ModelDescription {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Tilde,
    TildeTilde,
    EqTilde,
    Plus,
    Star,
    Comma,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Ident(s) => write!(f, "`{s}`"),
            Token::Number(v) => write!(f, "number `{v}`"),
            Token::Tilde => f.write_str("`~`"),
            Token::TildeTilde => f.write_str("`~~`"),
            Token::EqTilde => f.write_str("`=~`"),
            Token::Plus => f.write_str("`+`"),
            Token::Star => f.write_str("`*`"),
            Token::Comma => f.write_str("`,`"),
        }
    }
}

fn syntax(line: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        message: message.into(),
    }
}

fn lex(src: &str, line: usize) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\r' => i += 1,
            // `=~` must win over `~`
            b'=' => {
                if bytes.get(i + 1) == Some(&b'~') {
                    tokens.push(Token::EqTilde);
                    i += 2;
                } else {
                    return Err(syntax(line, "malformed operator `=` (did you mean `=~`?)"));
                }
            }
            b'~' => {
                if bytes.get(i + 1) == Some(&b'~') {
                    tokens.push(Token::TildeTilde);
                    i += 2;
                } else {
                    tokens.push(Token::Tilde);
                    i += 1;
                }
            }
            b'+' => {
                tokens.push(Token::Plus);
                i += 1;
            }
            b'*' => {
                tokens.push(Token::Star);
                i += 1;
            }
            b',' => {
                tokens.push(Token::Comma);
                i += 1;
            }
            b'A'..=b'Z' | b'a'..=b'z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push(Token::Ident(src[start..i].to_string()));
            }
            b'0'..=b'9' | b'.' | b'-' => {
                let start = i;
                if c == b'-' {
                    i += 1;
                }
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let value: f64 = text
                    .parse()
                    .map_err(|_| syntax(line, format!("invalid number `{text}`")))?;
                if !value.is_finite() {
                    return Err(syntax(line, format!("fixed value `{text}` is not finite")));
                }
                if i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
                    return Err(syntax(
                        line,
                        format!("expected `*` between fixed value `{text}` and variable name"),
                    ));
                }
                tokens.push(Token::Number(value));
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(syntax(line, format!("unexpected character `{ch}`")));
            }
        }
    }
    Ok(tokens)
}

fn parse_terms(tokens: &[Token], line: usize) -> Result<Vec<Term>> {
    if tokens.is_empty() {
        return Err(syntax(line, "missing right-hand side"));
    }
    let mut terms = Vec::new();
    let mut i = 0;
    loop {
        let fixed = match (tokens.get(i), tokens.get(i + 1)) {
            (Some(Token::Number(v)), Some(Token::Star)) => {
                i += 2;
                Some(*v)
            }
            (Some(Token::Number(v)), _) => {
                return Err(syntax(line, format!("expected `*` after fixed value `{v}`")))
            }
            (Some(Token::Ident(name)), Some(Token::Star)) => {
                return Err(syntax(
                    line,
                    format!("non-numeric fixed-value prefix `{name}`"),
                ))
            }
            _ => None,
        };
        match tokens.get(i) {
            Some(Token::Ident(name)) => {
                terms.push(Term {
                    name: name.clone(),
                    fixed,
                });
                i += 1;
            }
            Some(Token::Plus) => return Err(syntax(line, "dangling `+`")),
            Some(tok) => return Err(syntax(line, format!("unexpected {tok} in right-hand side"))),
            None => return Err(syntax(line, "missing variable name after `*`")),
        }
        match tokens.get(i) {
            None => return Ok(terms),
            Some(Token::Plus) => {
                i += 1;
                if i >= tokens.len() {
                    return Err(syntax(line, "dangling `+`"));
                }
            }
            Some(tok) => {
                return Err(syntax(
                    line,
                    format!("expected `+` between terms, found {tok}"),
                ))
            }
        }
    }
}

fn single_lhs(tokens: &[Token], line: usize, op: &str) -> Result<String> {
    match tokens {
        [Token::Ident(name)] => Ok(name.clone()),
        [] => Err(syntax(line, format!("missing left-hand side of `{op}`"))),
        [Token::Number(_), ..] => Err(syntax(
            line,
            format!("fixed values are not allowed on the left-hand side of `{op}`"),
        )),
        _ => Err(syntax(
            line,
            format!("left-hand side of `{op}` must be a single variable"),
        )),
    }
}

fn parse_statement(tokens: &[Token], line: usize, out: &mut Vec<Statement>) -> Result<()> {
    let op_pos = tokens
        .iter()
        .position(|t| matches!(t, Token::Tilde | Token::TildeTilde | Token::EqTilde));
    if let Some(pos) = op_pos {
        let (lhs, rest) = tokens.split_at(pos);
        let rhs = &rest[1..];
        if let Some(extra) = rhs
            .iter()
            .find(|t| matches!(t, Token::Tilde | Token::TildeTilde | Token::EqTilde))
        {
            return Err(syntax(line, format!("more than one operator (second is {extra})")));
        }
        if rhs.contains(&Token::Comma) {
            return Err(syntax(line, "`,` is only allowed in type declarations"));
        }
        match &rest[0] {
            Token::Tilde => out.push(Statement::Regression {
                lhs: single_lhs(lhs, line, "~")?,
                rhs: parse_terms(rhs, line)?,
            }),
            Token::EqTilde => out.push(Statement::Loading {
                latent: single_lhs(lhs, line, "=~")?,
                rhs: parse_terms(rhs, line)?,
            }),
            Token::TildeTilde => {
                let lhs = single_lhs(lhs, line, "~~")?;
                for term in parse_terms(rhs, line)? {
                    out.push(Statement::Covariance {
                        lhs: lhs.clone(),
                        rhs: term,
                    });
                }
            }
            _ => unreachable!(),
        }
        return Ok(());
    }

    let is_pos = tokens
        .iter()
        .position(|t| matches!(t, Token::Ident(s) if s == "is"));
    let Some(pos) = is_pos else {
        return Err(syntax(
            line,
            "expected an operator (`~`, `=~`, `~~` or `is`)",
        ));
    };
    let (lhs, rest) = tokens.split_at(pos);
    let tag = match &rest[1..] {
        [Token::Ident(tag)] => tag,
        [] => return Err(syntax(line, "missing type after `is`")),
        _ => return Err(syntax(line, "expected a single type name after `is`")),
    };
    let tag = VarType::from_tag(tag)
        .ok_or_else(|| syntax(line, format!("unknown type `{tag}` (expected `ordinal`)")))?;
    let mut vars = Vec::new();
    let mut expect_name = true;
    for tok in lhs {
        match (tok, expect_name) {
            (Token::Ident(name), true) => {
                vars.push(name.clone());
                expect_name = false;
            }
            (Token::Comma, false) => expect_name = true,
            (tok, _) => {
                return Err(syntax(
                    line,
                    format!("unexpected {tok} in type declaration"),
                ))
            }
        }
    }
    if vars.is_empty() || expect_name {
        return Err(syntax(line, "type declaration needs a comma-separated variable list"));
    }
    out.push(Statement::TypeDecl { vars, tag });
    Ok(())
}

#[derive(Hash, PartialEq, Eq)]
enum Key {
    Edge(StatementKind, String, String),
    Cov(String, String),
    Type(String),
}

fn keys(stmt: &Statement) -> Vec<(Key, String)> {
    match stmt {
        Statement::Regression { lhs, rhs } => rhs
            .iter()
            .map(|t| {
                (
                    Key::Edge(StatementKind::Regression, lhs.clone(), t.name.clone()),
                    format!("{lhs} ~ {}", t.name),
                )
            })
            .collect(),
        Statement::Loading { latent, rhs } => rhs
            .iter()
            .map(|t| {
                (
                    Key::Edge(StatementKind::Loading, latent.clone(), t.name.clone()),
                    format!("{latent} =~ {}", t.name),
                )
            })
            .collect(),
        Statement::Covariance { lhs, rhs } => {
            let (a, b) = if *lhs <= rhs.name {
                (lhs.clone(), rhs.name.clone())
            } else {
                (rhs.name.clone(), lhs.clone())
            };
            vec![(Key::Cov(a, b), format!("{lhs} ~~ {}", rhs.name))]
        }
        Statement::TypeDecl { vars, .. } => vars
            .iter()
            .map(|v| (Key::Type(v.clone()), format!("type of {v}")))
            .collect(),
    }
}

/// Parses model text into statements, in file order.
pub fn parse(text: &str) -> Result<ModelDescription> {
    let mut statements = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        for chunk in content.split(';') {
            let tokens = lex(chunk, line)?;
            if tokens.is_empty() {
                continue;
            }
            let start = statements.len();
            parse_statement(&tokens, line, &mut statements)?;
            for stmt in &statements[start..] {
                for (key, label) in keys(stmt) {
                    if !seen.insert(key) {
                        return Err(syntax(line, format!("duplicate statement `{label}`")));
                    }
                }
            }
        }
    }
    Ok(ModelDescription { statements })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err_line(text: &str) -> (usize, String) {
        match parse(text) {
            Err(Error::Syntax { line, message }) => (line, message),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn regression() {
        let d = parse("eta3 ~ x1 + x2").unwrap();
        assert_eq!(
            d.statements,
            vec![Statement::Regression {
                lhs: "eta3".into(),
                rhs: vec![Term::free("x1"), Term::free("x2")],
            }]
        );
    }

    #[test]
    fn loading_with_fixed_prefix() {
        let d = parse("eta =~ 2*y1 + y2 + y3").unwrap();
        assert_eq!(
            d.statements,
            vec![Statement::Loading {
                latent: "eta".into(),
                rhs: vec![Term::fixed("y1", 2.0), Term::free("y2"), Term::free("y3")],
            }]
        );
    }

    #[test]
    fn empty_and_comments() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("# only a comment\n\n   \n").unwrap().is_empty());
        let d = parse("x1 ~ x2 # trailing").unwrap();
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn type_declaration() {
        let d = parse("y1, y2 is ordinal").unwrap();
        assert_eq!(
            d.statements,
            vec![Statement::TypeDecl {
                vars: vec!["y1".into(), "y2".into()],
                tag: VarType::Ordinal,
            }]
        );
        let (line, msg) = err_line("\ny1 is nominal");
        assert_eq!(line, 2);
        assert!(msg.contains("unknown type"), "{msg}");
    }

    #[test]
    fn covariance_with_several_terms_expands() {
        let d = parse("x1 ~~ 5*x2 + x3").unwrap();
        assert_eq!(
            d.statements,
            vec![
                Statement::Covariance {
                    lhs: "x1".into(),
                    rhs: Term::fixed("x2", 5.0)
                },
                Statement::Covariance {
                    lhs: "x1".into(),
                    rhs: Term::free("x3")
                },
            ]
        );
    }

    #[test]
    fn semicolon_separates_statements() {
        let d = parse("eta =~ y1 + y2; y1 =~ z").unwrap();
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(err_line("x1 ~ x2\nx3 ~ x4 +").0, 2);
        assert!(err_line("x3 ~ x4 + + x5").1.contains("dangling"));
        assert!(err_line("x3 ~ + x5").1.contains("dangling"));
        assert!(err_line("x3 ~ a*x5").1.contains("non-numeric"));
        assert!(err_line("x3 = x5").1.contains("malformed"));
        assert!(err_line("x3 x5").1.contains("expected an operator"));
        assert!(err_line("x1 ~ x2 ~ x3").1.contains("more than one operator"));
        assert!(err_line("2*x1 ~~ x2").1.contains("left-hand side"));
        assert!(err_line("x1 ~ 2x2").1.contains("`*`"));
        assert!(err_line("x1 ~ 1e999*x2").1.contains("finite"));
    }

    #[test]
    fn duplicates_are_errors() {
        let (line, msg) = err_line("x1 ~ x2\n\nx1 ~ x3 + x2");
        assert_eq!(line, 3);
        assert!(msg.contains("duplicate"));
        assert!(parse("a ~~ b\nb ~~ a").is_err());
        assert!(parse("x1 ~ x2 + x2").is_err());
        // same pair under different operators is fine
        assert!(parse("x1 ~ x2\nx1 ~~ x2").is_ok());
    }

    #[test]
    fn longest_match_operators() {
        let d = parse("f=~y1+y2\na~~b\nc~d").unwrap();
        assert_eq!(d.statements[0].kind(), StatementKind::Loading);
        assert_eq!(d.statements[1].kind(), StatementKind::Covariance);
        assert_eq!(d.statements[2].kind(), StatementKind::Regression);
    }

    #[test]
    fn negative_and_exponent_fixed_values() {
        let d = parse("y ~ -0.5*x1 + 1e-3*x2 + 2.5E2*x3").unwrap();
        let Statement::Regression { rhs, .. } = &d.statements[0] else {
            panic!()
        };
        assert_eq!(rhs[0].fixed, Some(-0.5));
        assert_eq!(rhs[1].fixed, Some(1e-3));
        assert_eq!(rhs[2].fixed, Some(250.0));
    }

    #[test]
    fn display_reparses() {
        let text = "eta ~ 1*x1 + x2\neta =~ 2*y1 + y2 + y3\nx1 ~~ 5*x2\ny1, y2 is ordinal\n";
        let d = parse(text).unwrap();
        assert_eq!(d.to_string(), text);
        assert_eq!(parse(&d.to_string()).unwrap(), d);
    }
}
