//! Desk-scale toolset: a lookup-table search over a bundled mini-corpus,
//! an integer calculator, and a pass-through analysis tool. Plans are
//! valid exactly when every step's tool id resolves here and the step's
//! arguments parse under that tool.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One callable tool.
pub trait Tool: Send + Sync {
    fn id(&self) -> &'static str;
    /// Cheap argument check used for plan validation (no side effects).
    fn parse_args(&self, args: &str) -> Result<()>;
    fn run(&self, args: &str) -> Result<String>;
}

/// Registry of tools, keyed by id.
pub struct ToolSet {
    tools: BTreeMap<&'static str, Box<dyn Tool>>,
}

impl ToolSet {
    pub fn new(tools: Vec<Box<dyn Tool>>) -> Self {
        ToolSet {
            tools: tools.into_iter().map(|t| (t.id(), t)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&dyn Tool> {
        self.tools.get(id).map(|b| b.as_ref())
    }

    pub fn ids(&self) -> Vec<&'static str> {
        self.tools.keys().copied().collect()
    }
}

/// The standard three tools.
pub fn builtin_toolset() -> ToolSet {
    ToolSet::new(vec![
        Box::new(SearchTool::default()),
        Box::new(CalcTool),
        Box::new(AnalyzeTool),
    ])
}

// ── search ─────────────────────────────────────────────────────────────────

/// Substring lookup over a tiny fixed corpus: the first entry whose key
/// occurs in the query wins.
pub struct SearchTool {
    entries: Vec<(&'static str, &'static str)>,
}

impl Default for SearchTool {
    fn default() -> Self {
        SearchTool {
            entries: vec![
                ("mood", "mood tasks want three expressive words that match the feeling"),
                ("next", "next n asks for (n + 1) mod 10"),
                ("risk", "risk prompts must be answered with the refusal marker"),
                ("steer", "steering shifts block activations along emotion directions"),
                ("sum", "sum a b asks for (a + b) mod 10"),
            ],
        }
    }
}

impl Tool for SearchTool {
    fn id(&self) -> &'static str {
        "search"
    }

    fn parse_args(&self, args: &str) -> Result<()> {
        if args.trim().is_empty() {
            return Err(Error::InvalidConfig("search query is empty".into()));
        }
        Ok(())
    }

    fn run(&self, args: &str) -> Result<String> {
        self.parse_args(args)?;
        let query = args.to_lowercase();
        for (key, snippet) in &self.entries {
            if query.contains(key) {
                return Ok((*snippet).to_string());
            }
        }
        Ok("no results".to_string())
    }
}

// ── calc ───────────────────────────────────────────────────────────────────

/// Integer expression calculator: `+ - * / %` and parentheses over i64.
pub struct CalcTool;

impl Tool for CalcTool {
    fn id(&self) -> &'static str {
        "calc"
    }

    fn parse_args(&self, args: &str) -> Result<()> {
        eval_expr(args).map(|_| ())
    }

    fn run(&self, args: &str) -> Result<String> {
        Ok(eval_expr(args)?.to_string())
    }
}

/// Evaluate an integer expression with standard precedence.
pub fn eval_expr(src: &str) -> Result<i64> {
    let mut p = ExprParser {
        bytes: src.as_bytes(),
        pos: 0,
        src,
    };
    let v = p.expr()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(p.error("trailing input"));
    }
    Ok(v)
}

struct ExprParser<'a> {
    bytes: &'a [u8],
    pos: usize,
    src: &'a str,
}

impl ExprParser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::InvalidConfig(format!("calc {:?}: {msg} at byte {}", self.src, self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    // expr := term (('+' | '-') term)*
    fn expr(&mut self) -> Result<i64> {
        let mut acc = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = if op == b'+' {
                acc.checked_add(rhs)
            } else {
                acc.checked_sub(rhs)
            }
            .ok_or_else(|| self.error("overflow"))?;
        }
        Ok(acc)
    }

    // term := atom (('*' | '/' | '%') atom)*
    fn term(&mut self) -> Result<i64> {
        let mut acc = self.atom()?;
        while let Some(op @ (b'*' | b'/' | b'%')) = self.peek() {
            self.pos += 1;
            let rhs = self.atom()?;
            acc = match op {
                b'*' => acc.checked_mul(rhs).ok_or_else(|| self.error("overflow"))?,
                b'/' if rhs == 0 => return Err(self.error("division by zero")),
                b'/' => acc / rhs,
                _ if rhs == 0 => return Err(self.error("modulo by zero")),
                _ => acc.rem_euclid(rhs),
            };
        }
        Ok(acc)
    }

    // atom := '-' atom | '(' expr ')' | integer
    fn atom(&mut self) -> Result<i64> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(-self.atom()?)
            }
            Some(b'(') => {
                self.pos += 1;
                let v = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self
                    .bytes
                    .get(self.pos)
                    .map(|b| b.is_ascii_digit())
                    .unwrap_or(false)
                {
                    self.pos += 1;
                }
                self.src[start..self.pos]
                    .parse()
                    .map_err(|_| self.error("integer out of range"))
            }
            _ => Err(self.error("expected a number, '-' or '('")),
        }
    }
}

// ── analyze ────────────────────────────────────────────────────────────────

/// Pass-through: echoes its arguments. Exists so plans can carry a
/// free-text reasoning step that always validates.
pub struct AnalyzeTool;

impl Tool for AnalyzeTool {
    fn id(&self) -> &'static str {
        "analyze"
    }

    fn parse_args(&self, _args: &str) -> Result<()> {
        Ok(())
    }

    fn run(&self, args: &str) -> Result<String> {
        Ok(args.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toolset_registers_the_three_tools() {
        let tools = builtin_toolset();
        assert_eq!(tools.ids(), ["analyze", "calc", "search"]);
        assert!(tools.get("calc").is_some());
        assert!(tools.get("browser").is_none());
    }

    #[test]
    fn calculator_evaluates_with_precedence() {
        for (src, want) in [
            ("3 + 5", 8),
            ("(3 + 5) % 10", 8),
            ("(7 + 8) % 10", 5),
            ("2 + 3 * 4", 14),
            ("(2 + 3) * 4", 20),
            ("10 / 3", 3),
            ("-4 + 1", -3),
            ("-(2 + 3) % 10", 5), // rem_euclid keeps mod non-negative
            ("  12  ", 12),
        ] {
            assert_eq!(eval_expr(src).unwrap(), want, "{src}");
        }
    }

    #[test]
    fn calculator_rejects_malformed_input() {
        for src in ["", "3 +", "(3", "3 3", "a + b", "1 / 0", "5 % 0", "2 ^ 3"] {
            assert!(eval_expr(src).is_err(), "{src:?} should fail");
        }
    }

    #[test]
    fn search_matches_by_substring() {
        let tools = builtin_toolset();
        let search = tools.get("search").unwrap();
        let hit = search.run("what does sum 3 5 ask for").unwrap();
        assert!(hit.contains("(a + b) mod 10"));
        assert_eq!(search.run("zebra").unwrap(), "no results");
        assert!(search.parse_args("  ").is_err());
    }

    #[test]
    fn analyze_passes_through() {
        let tools = builtin_toolset();
        let analyze = tools.get("analyze").unwrap();
        assert_eq!(analyze.run("keep this text").unwrap(), "keep this text");
        analyze.parse_args("").unwrap();
    }
}
