//! EBNF-like grammar files and an Earley recognizer.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GrammarError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("rule `{0}` is used but never defined")]
    Undefined(String),
    #[error("grammar file has no `version` line")]
    NoVersion,
    #[error("grammar file defines no rules")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    T(usize),
    N(usize),
}

/// A context-free grammar in plain BNF form (alternatives already split).
#[derive(Debug, Clone)]
pub struct Grammar {
    pub version: u32,
    pub terminals: Vec<String>,
    pub nonterminals: Vec<String>,
    /// `(lhs, rhs)`; an empty `rhs` is an ε-production.
    pub rules: Vec<(usize, Vec<Symbol>)>,
    pub start: usize,
    nullable: Vec<bool>,
    by_lhs: Vec<Vec<usize>>,
    terminal_ids: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(u32),
    Punct(char),
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, GrammarError> {
    let mut out = Vec::new();
    for (ln, line) in src.lines().enumerate() {
        let line_no = ln + 1;
        let mut chars = line.char_indices().peekable();
        while let Some(&(i, c)) = chars.peek() {
            match c {
                '#' => break,
                c if c.is_whitespace() => {
                    chars.next();
                }
                '=' | '|' | '[' | ']' | '{' | '}' | '(' | ')' | ';' => {
                    out.push((Tok::Punct(c), line_no));
                    chars.next();
                }
                '"' => {
                    chars.next();
                    let rest = &line[i + 1..];
                    let end = rest.find('"').ok_or_else(|| GrammarError::Syntax {
                        line: line_no,
                        msg: "unterminated string".into(),
                    })?;
                    let s = &rest[..end];
                    if s.is_empty() || s.contains(char::is_whitespace) {
                        return Err(GrammarError::Syntax {
                            line: line_no,
                            msg: format!("terminal {s:?} must be one non-empty token"),
                        });
                    }
                    out.push((Tok::Str(s.to_string()), line_no));
                    for _ in 0..=s.chars().count() {
                        chars.next();
                    }
                }
                c if c.is_ascii_digit() => {
                    let mut n = String::new();
                    while let Some(&(_, d)) = chars.peek() {
                        if !d.is_ascii_digit() {
                            break;
                        }
                        n.push(d);
                        chars.next();
                    }
                    out.push((Tok::Num(n.parse().expect("digits")), line_no));
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let mut id = String::new();
                    while let Some(&(_, d)) = chars.peek() {
                        if !(d.is_ascii_alphanumeric() || d == '_') {
                            break;
                        }
                        id.push(d);
                        chars.next();
                    }
                    out.push((Tok::Ident(id), line_no));
                }
                other => {
                    return Err(GrammarError::Syntax {
                        line: line_no,
                        msg: format!("unexpected character {other:?}"),
                    })
                }
            }
        }
    }
    Ok(out)
}

/// EBNF expression tree, before desugaring.
#[derive(Debug, Clone)]
enum Expr {
    Ref(String),
    Lit(String),
    Seq(Vec<Expr>),
    Alt(Vec<Expr>),
    Opt(Box<Expr>),
    Rep(Box<Expr>),
}

struct Reader {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Reader {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or(self.toks.last())
            .map_or(0, |t| t.1)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, GrammarError> {
        Err(GrammarError::Syntax {
            line: self.line(),
            msg: msg.into(),
        })
    }

    fn expect(&mut self, c: char) -> Result<(), GrammarError> {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{c}`, found {:?}", self.peek()))
        }
    }

    fn alt(&mut self) -> Result<Expr, GrammarError> {
        let mut alts = vec![self.seq()?];
        while self.peek() == Some(&Tok::Punct('|')) {
            self.pos += 1;
            alts.push(self.seq()?);
        }
        Ok(if alts.len() == 1 {
            alts.pop().unwrap()
        } else {
            Expr::Alt(alts)
        })
    }

    fn seq(&mut self) -> Result<Expr, GrammarError> {
        let mut items = Vec::new();
        loop {
            let item = match self.peek().cloned() {
                Some(Tok::Ident(id)) => {
                    self.pos += 1;
                    Expr::Ref(id)
                }
                Some(Tok::Str(s)) => {
                    self.pos += 1;
                    Expr::Lit(s)
                }
                Some(Tok::Punct(open @ ('[' | '{' | '('))) => {
                    self.pos += 1;
                    let inner = self.alt()?;
                    match open {
                        '[' => {
                            self.expect(']')?;
                            Expr::Opt(Box::new(inner))
                        }
                        '{' => {
                            self.expect('}')?;
                            Expr::Rep(Box::new(inner))
                        }
                        _ => {
                            self.expect(')')?;
                            inner
                        }
                    }
                }
                _ => break,
            };
            items.push(item);
        }
        if items.is_empty() {
            return self.err("empty alternative");
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Expr::Seq(items)
        })
    }
}

struct Builder {
    terminals: Vec<String>,
    terminal_ids: HashMap<String, usize>,
    nonterminals: Vec<String>,
    nonterminal_ids: HashMap<String, usize>,
    rules: Vec<(usize, Vec<Symbol>)>,
    fresh: usize,
}

impl Builder {
    fn nonterminal(&mut self, name: &str) -> usize {
        if let Some(&i) = self.nonterminal_ids.get(name) {
            return i;
        }
        let i = self.nonterminals.len();
        self.nonterminals.push(name.to_string());
        self.nonterminal_ids.insert(name.to_string(), i);
        i
    }

    fn terminal(&mut self, s: &str) -> usize {
        if let Some(&i) = self.terminal_ids.get(s) {
            return i;
        }
        let i = self.terminals.len();
        self.terminals.push(s.to_string());
        self.terminal_ids.insert(s.to_string(), i);
        i
    }

    fn helper(&mut self, parent: usize) -> usize {
        self.fresh += 1;
        let name = format!("{}~{}", self.nonterminals[parent], self.fresh);
        self.nonterminal(&name)
    }

    /// Alternatives (each a symbol string) equivalent to `e`.
    fn lower(&mut self, parent: usize, e: &Expr) -> Vec<Vec<Symbol>> {
        match e {
            Expr::Ref(name) => vec![vec![Symbol::N(self.nonterminal(name))]],
            Expr::Lit(s) => vec![vec![Symbol::T(self.terminal(s))]],
            Expr::Alt(alts) => alts.iter().flat_map(|a| self.lower(parent, a)).collect(),
            Expr::Seq(items) => {
                let mut out = vec![Vec::new()];
                for item in items {
                    let sym = self.single(parent, item);
                    for alt in &mut out {
                        alt.push(sym);
                    }
                }
                out
            }
            Expr::Opt(inner) => {
                let mut alts = self.lower(parent, inner);
                alts.push(Vec::new());
                alts
            }
            Expr::Rep(inner) => {
                let h = self.helper(parent);
                for mut alt in self.lower(parent, inner) {
                    alt.push(Symbol::N(h));
                    self.rules.push((h, alt));
                }
                self.rules.push((h, Vec::new()));
                vec![vec![Symbol::N(h)]]
            }
        }
    }

    /// A single symbol standing for `e`, introducing a helper if needed.
    fn single(&mut self, parent: usize, e: &Expr) -> Symbol {
        match e {
            Expr::Ref(name) => Symbol::N(self.nonterminal(name)),
            Expr::Lit(s) => Symbol::T(self.terminal(s)),
            _ => {
                let alts = self.lower(parent, e);
                if let [one] = alts.as_slice() {
                    if let [sym] = one.as_slice() {
                        return *sym;
                    }
                }
                let h = self.helper(parent);
                for alt in alts {
                    self.rules.push((h, alt));
                }
                Symbol::N(h)
            }
        }
    }
}

impl Grammar {
    /// Reads a grammar file. The file must contain `version = N ;` and at
    /// least one rule; the first rule is the start symbol.
    pub fn parse(src: &str) -> Result<Self, GrammarError> {
        let mut r = Reader {
            toks: lex(src)?,
            pos: 0,
        };
        let mut version = None;
        let mut defs: Vec<(String, Expr)> = Vec::new();
        while let Some(tok) = r.peek().cloned() {
            let Tok::Ident(name) = tok else {
                return r.err("expected a rule name");
            };
            r.pos += 1;
            r.expect('=')?;
            if name == "version" {
                match r.peek() {
                    Some(&Tok::Num(n)) => version = Some(n),
                    _ => return r.err("version must be a number"),
                }
                r.pos += 1;
            } else {
                defs.push((name, r.alt()?));
            }
            r.expect(';')?;
        }
        let version = version.ok_or(GrammarError::NoVersion)?;
        if defs.is_empty() {
            return Err(GrammarError::Empty);
        }
        let mut b = Builder {
            terminals: Vec::new(),
            terminal_ids: HashMap::new(),
            nonterminals: Vec::new(),
            nonterminal_ids: HashMap::new(),
            rules: Vec::new(),
            fresh: 0,
        };
        for (name, _) in &defs {
            b.nonterminal(name);
        }
        for (i, (_, e)) in defs.iter().enumerate() {
            for alt in b.lower(i, e) {
                b.rules.push((i, alt));
            }
        }
        if let Some(name) = b.nonterminals[defs.len()..]
            .iter()
            .find(|n| !n.contains('~'))
        {
            return Err(GrammarError::Undefined(name.clone()));
        }
        Ok(Self::assemble(
            version,
            b.terminals,
            b.terminal_ids,
            b.nonterminals,
            b.rules,
        ))
    }

    fn assemble(
        version: u32,
        terminals: Vec<String>,
        terminal_ids: HashMap<String, usize>,
        nonterminals: Vec<String>,
        rules: Vec<(usize, Vec<Symbol>)>,
    ) -> Self {
        let mut nullable = vec![false; nonterminals.len()];
        loop {
            let mut changed = false;
            for (lhs, rhs) in &rules {
                if !nullable[*lhs]
                    && rhs
                        .iter()
                        .all(|s| matches!(s, Symbol::N(n) if nullable[*n]))
                {
                    nullable[*lhs] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let mut by_lhs = vec![Vec::new(); nonterminals.len()];
        for (i, (lhs, _)) in rules.iter().enumerate() {
            by_lhs[*lhs].push(i);
        }
        Self {
            version,
            terminals,
            nonterminals,
            rules,
            start: 0,
            nullable,
            by_lhs,
            terminal_ids,
        }
    }

    pub fn terminal_id(&self, token: &str) -> Option<usize> {
        self.terminal_ids.get(token).copied()
    }

    pub fn is_nullable(&self, nonterminal: usize) -> bool {
        self.nullable[nonterminal]
    }

    /// Earley membership test for a token sequence.
    pub fn recognizes<S: AsRef<str>>(&self, tokens: &[S]) -> bool {
        let Some(input) = tokens
            .iter()
            .map(|t| self.terminal_id(t.as_ref()))
            .collect::<Option<Vec<usize>>>()
        else {
            return false;
        };
        // item = (rule, dot, origin)
        type Item = (usize, usize, usize);
        let n = input.len();
        let mut sets: Vec<Vec<Item>> = vec![Vec::new(); n + 1];
        let mut seen: Vec<HashSet<Item>> = vec![HashSet::new(); n + 1];
        for &r in &self.by_lhs[self.start] {
            if seen[0].insert((r, 0, 0)) {
                sets[0].push((r, 0, 0));
            }
        }
        for k in 0..=n {
            let mut i = 0;
            while i < sets[k].len() {
                let (rule, dot, origin) = sets[k][i];
                i += 1;
                let rhs = &self.rules[rule].1;
                let mut add = |set: usize, item: Item, sets: &mut Vec<Vec<Item>>| {
                    if seen[set].insert(item) {
                        sets[set].push(item);
                    }
                };
                match rhs.get(dot) {
                    Some(Symbol::N(b)) => {
                        for &r in &self.by_lhs[*b] {
                            add(k, (r, 0, k), &mut sets);
                        }
                        if self.nullable[*b] {
                            add(k, (rule, dot + 1, origin), &mut sets);
                        }
                    }
                    Some(Symbol::T(t)) => {
                        if k < n && input[k] == *t {
                            add(k + 1, (rule, dot + 1, origin), &mut sets);
                        }
                    }
                    None => {
                        let lhs = self.rules[rule].0;
                        let waiting: Vec<Item> = sets[origin]
                            .iter()
                            .filter(|(r, d, _)| self.rules[*r].1.get(*d) == Some(&Symbol::N(lhs)))
                            .copied()
                            .collect();
                        for (r, d, o) in waiting {
                            add(k, (r, d + 1, o), &mut sets);
                        }
                    }
                }
            }
        }
        sets[n]
            .iter()
            .any(|&(r, d, o)| o == 0 && self.rules[r].0 == self.start && d == self.rules[r].1.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_small_grammar() {
        let g = Grammar::parse("version = 2 ;\ns = \"a\" { \"b\" } [ \"c\" ] ;").unwrap();
        assert_eq!(g.version, 2);
        assert!(g.recognizes(&["a"]));
        assert!(g.recognizes(&["a", "b", "b", "c"]));
        assert!(!g.recognizes(&["a", "c", "b"]));
        assert!(!g.recognizes::<&str>(&[]));
        assert!(!g.recognizes(&["z"]));
    }

    #[test]
    fn nullable_start_accepts_empty() {
        let g = Grammar::parse("version = 1; s = [ \"a\" ] t ; t = { \"b\" } ;").unwrap();
        assert!(g.recognizes::<&str>(&[]));
        assert!(g.recognizes(&["a", "b"]));
    }

    #[test]
    fn errors_are_reported() {
        assert_eq!(
            Grammar::parse("s = \"a\" ;").unwrap_err(),
            GrammarError::NoVersion
        );
        assert_eq!(
            Grammar::parse("version = 1; s = t ;").unwrap_err(),
            GrammarError::Undefined("t".into())
        );
        assert!(matches!(
            Grammar::parse("version = 1;\ns = \"a b\" ;"),
            Err(GrammarError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            Grammar::parse("version = 1; s = ;"),
            Err(GrammarError::Syntax { .. })
        ));
    }
}
