//! Minimal HTML-table markup subset: `<table>`, `<tr>` and `<td>` with
//! optional `rowspan`/`colspan` attributes and optional cell text.
//!
//! Serialization is canonical (rowspan before colspan, double quotes, no
//! extra whitespace) so downstream token-level metrics are byte-stable.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MarkupError {
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("offset {0}: unexpected tag `{1}`")]
    UnexpectedTag(usize, String),
    #[error("offset {0}: bad attribute `{1}`")]
    BadAttribute(usize, String),
    #[error("offset {0}: text outside of a cell")]
    StrayText(usize),
    #[error("unclosed tags at end of input")]
    Unclosed,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    TableOpen,
    TableClose,
    RowOpen,
    RowClose,
    CellOpen { rowspan: usize, colspan: usize },
    Text(String),
    CellClose,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::TableOpen => f.write_str("<table>"),
            Token::TableClose => f.write_str("</table>"),
            Token::RowOpen => f.write_str("<tr>"),
            Token::RowClose => f.write_str("</tr>"),
            Token::CellOpen { rowspan, colspan } => {
                f.write_str("<td")?;
                if *rowspan > 1 {
                    write!(f, " rowspan=\"{rowspan}\"")?;
                }
                if *colspan > 1 {
                    write!(f, " colspan=\"{colspan}\"")?;
                }
                f.write_str(">")
            }
            Token::Text(text) => f.write_str(&escape(text)),
            Token::CellClose => f.write_str("</td>"),
        }
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn unescape(text: &str) -> String {
    text.replace("&lt;", "<").replace("&gt;", ">").replace("&amp;", "&")
}

/// A well-nested token stream for one table.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkupSequence {
    pub tokens: Vec<Token>,
}

impl fmt::Display for MarkupSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for token in &self.tokens {
            fmt::Display::fmt(token, f)?;
        }
        Ok(())
    }
}

impl MarkupSequence {
    /// Token strings as consumed by token-level metrics.
    pub fn token_strings(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.to_string()).collect()
    }

    /// Tokenizes and checks nesting: rows only inside the table, cells only
    /// inside rows, text only inside cells.
    pub fn parse(input: &str) -> Result<Self, MarkupError> {
        let mut tokens = Vec::new();
        let bytes = input.as_bytes();
        let mut pos = 0;
        // depth: 0 outside, 1 in table, 2 in row, 3 in cell
        let mut depth = 0usize;
        while pos < bytes.len() {
            if bytes[pos] == b'<' {
                let end = input[pos..]
                    .find('>')
                    .map(|off| pos + off)
                    .ok_or(MarkupError::UnexpectedEnd)?;
                let tag = &input[pos + 1..end];
                let token = match (tag, depth) {
                    ("table", 0) => {
                        depth = 1;
                        Token::TableOpen
                    }
                    ("/table", 1) => {
                        depth = 0;
                        Token::TableClose
                    }
                    ("tr", 1) => {
                        depth = 2;
                        Token::RowOpen
                    }
                    ("/tr", 2) => {
                        depth = 1;
                        Token::RowClose
                    }
                    ("/td", 3) => {
                        depth = 2;
                        Token::CellClose
                    }
                    (t, 2) if t == "td" || t.starts_with("td ") => {
                        depth = 3;
                        parse_cell_open(pos, t)?
                    }
                    (t, _) => return Err(MarkupError::UnexpectedTag(pos, t.to_string())),
                };
                tokens.push(token);
                pos = end + 1;
            } else {
                let next_tag = input[pos..].find('<').map(|off| pos + off).unwrap_or(bytes.len());
                let text = &input[pos..next_tag];
                if depth == 3 {
                    tokens.push(Token::Text(unescape(text)));
                } else if !text.trim().is_empty() {
                    return Err(MarkupError::StrayText(pos));
                }
                pos = next_tag;
            }
        }
        if depth != 0 {
            return Err(MarkupError::Unclosed);
        }
        Ok(Self { tokens })
    }
}

fn parse_cell_open(pos: usize, tag: &str) -> Result<Token, MarkupError> {
    let mut rowspan = 1;
    let mut colspan = 1;
    for attr in tag["td".len()..].split_whitespace() {
        let (key, value) = attr
            .split_once('=')
            .ok_or_else(|| MarkupError::BadAttribute(pos, attr.to_string()))?;
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .ok_or_else(|| MarkupError::BadAttribute(pos, attr.to_string()))?;
        let span: usize = value
            .parse()
            .ok()
            .filter(|&v| v >= 1)
            .ok_or_else(|| MarkupError::BadAttribute(pos, attr.to_string()))?;
        match key {
            "rowspan" => rowspan = span,
            "colspan" => colspan = span,
            _ => return Err(MarkupError::BadAttribute(pos, attr.to_string())),
        }
    }
    Ok(Token::CellOpen { rowspan, colspan })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_serialization() {
        let seq = MarkupSequence {
            tokens: vec![
                Token::TableOpen,
                Token::RowOpen,
                Token::CellOpen { rowspan: 2, colspan: 3 },
                Token::Text("a<b".into()),
                Token::CellClose,
                Token::RowClose,
                Token::TableClose,
            ],
        };
        assert_eq!(
            seq.to_string(),
            "<table><tr><td rowspan=\"2\" colspan=\"3\">a&lt;b</td></tr></table>"
        );
    }

    #[test]
    fn parse_round_trips_canonical_text() {
        let text = "<table><tr><td rowspan=\"2\">x</td><td></td></tr><tr><td colspan=\"2\"></td></tr></table>";
        let seq = MarkupSequence::parse(text).unwrap();
        assert_eq!(seq.to_string(), text);
    }

    #[test]
    fn rejects_bad_nesting() {
        assert!(MarkupSequence::parse("<tr></tr>").is_err());
        assert!(MarkupSequence::parse("<table><td></td></table>").is_err());
        assert_eq!(MarkupSequence::parse("<table><tr>"), Err(MarkupError::Unclosed));
    }

    #[test]
    fn rejects_bad_attributes() {
        assert!(matches!(
            MarkupSequence::parse("<table><tr><td rowspan=\"0\"></td></tr></table>"),
            Err(MarkupError::BadAttribute(..))
        ));
        assert!(matches!(
            MarkupSequence::parse("<table><tr><td class=\"x\"></td></tr></table>"),
            Err(MarkupError::BadAttribute(..))
        ));
    }

    #[test]
    fn accepts_attribute_order_variation_but_emits_canonical() {
        let seq =
            MarkupSequence::parse("<table><tr><td colspan=\"2\" rowspan=\"3\"></td></tr></table>")
                .unwrap();
        assert_eq!(
            seq.to_string(),
            "<table><tr><td rowspan=\"3\" colspan=\"2\"></td></tr></table>"
        );
    }
}
