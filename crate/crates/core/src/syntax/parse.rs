//! Concrete-syntax parser.
//!
//! The surface syntax is line-oriented: `;` or a newline separates
//! statements, and indentation delimits `fun` bodies (a brace-delimited
//! inline form `fun x: { ...; ret y }` is also accepted, which is what the
//! inline printer emits). Sugar — re-binding, tuple patterns at binding
//! sites, and nested tuples/literals in variable positions — is expanded
//! here, so `parse` always yields a core-form expression.

use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{Expr, Handle, Operation, PrimValue, Statement, Var};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

const RESERVED: &[&str] = &["fun", "ret", "prj"];

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Assign, // :=
    Colon,
    Semi,
    Comma,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Lt,
    Gt,
    Amp,
    At,
    HashMark,
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

struct Lexer;

impl Lexer {
    fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
        let mut out = Vec::new();
        let mut indents: Vec<usize> = vec![0];
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw;
            // Indentation.
            let mut indent = 0;
            let mut chars = line.char_indices().peekable();
            while let Some(&(_, c)) = chars.peek() {
                if c == ' ' {
                    indent += 1;
                    chars.next();
                } else if c == '\t' {
                    return Err(ParseError {
                        line: lineno,
                        col: indent + 1,
                        message: "tabs are not allowed in indentation".into(),
                    });
                } else {
                    break;
                }
            }
            // Skip blank and comment-only lines entirely.
            let rest: &str = &line[indent..];
            if rest.is_empty() || rest.starts_with('#') {
                continue;
            }
            let current = *indents.last().unwrap();
            if indent > current {
                indents.push(indent);
                out.push(Spanned {
                    tok: Tok::Indent,
                    line: lineno,
                    col: 1,
                });
            } else if indent < current {
                while *indents.last().unwrap() > indent {
                    indents.pop();
                    out.push(Spanned {
                        tok: Tok::Dedent,
                        line: lineno,
                        col: 1,
                    });
                }
                if *indents.last().unwrap() != indent {
                    return Err(ParseError {
                        line: lineno,
                        col: indent + 1,
                        message: "indentation does not match any enclosing block".into(),
                    });
                }
            }
            Self::lex_line(line, indent, lineno, &mut out)?;
            out.push(Spanned {
                tok: Tok::Newline,
                line: lineno,
                col: line.len() + 1,
            });
        }
        while indents.len() > 1 {
            indents.pop();
            out.push(Spanned {
                tok: Tok::Dedent,
                line: usize::MAX,
                col: 1,
            });
        }
        out.push(Spanned {
            tok: Tok::Eof,
            line: usize::MAX,
            col: 1,
        });
        Ok(out)
    }

    fn lex_line(
        line: &str,
        start: usize,
        lineno: usize,
        out: &mut Vec<Spanned>,
    ) -> Result<(), ParseError> {
        let bytes: Vec<char> = line.chars().collect();
        let mut i = start;
        while i < bytes.len() {
            let c = bytes[i];
            let col = i + 1;
            let push = |out: &mut Vec<Spanned>, tok: Tok| {
                out.push(Spanned {
                    tok,
                    line: lineno,
                    col,
                })
            };
            match c {
                ' ' => {
                    i += 1;
                }
                '#' => {
                    // `#` right after `&` is part of an anonymous-handle
                    // literal; anywhere else it starts a comment.
                    let after_amp = out
                        .last()
                        .is_some_and(|s| s.tok == Tok::Amp && s.line == lineno && s.col == col - 1);
                    if after_amp {
                        push(out, Tok::HashMark);
                        i += 1;
                    } else {
                        break;
                    }
                }
                ';' => {
                    push(out, Tok::Semi);
                    i += 1;
                }
                ',' => {
                    push(out, Tok::Comma);
                    i += 1;
                }
                '(' => {
                    push(out, Tok::LParen);
                    i += 1;
                }
                ')' => {
                    push(out, Tok::RParen);
                    i += 1;
                }
                '{' => {
                    push(out, Tok::LBrace);
                    i += 1;
                }
                '}' => {
                    push(out, Tok::RBrace);
                    i += 1;
                }
                '<' => {
                    push(out, Tok::Lt);
                    i += 1;
                }
                '>' => {
                    push(out, Tok::Gt);
                    i += 1;
                }
                '&' => {
                    push(out, Tok::Amp);
                    i += 1;
                }
                '@' => {
                    push(out, Tok::At);
                    i += 1;
                }
                ':' => {
                    if bytes.get(i + 1) == Some(&'=') {
                        push(out, Tok::Assign);
                        i += 2;
                    } else {
                        push(out, Tok::Colon);
                        i += 1;
                    }
                }
                '"' => {
                    let mut s = String::new();
                    let mut j = i + 1;
                    loop {
                        match bytes.get(j) {
                            None => {
                                return Err(ParseError {
                                    line: lineno,
                                    col,
                                    message: "unterminated string literal".into(),
                                })
                            }
                            Some('"') => {
                                j += 1;
                                break;
                            }
                            Some('\\') => {
                                match bytes.get(j + 1) {
                                    Some('n') => s.push('\n'),
                                    Some('t') => s.push('\t'),
                                    Some('\\') => s.push('\\'),
                                    Some('"') => s.push('"'),
                                    other => {
                                        return Err(ParseError {
                                            line: lineno,
                                            col: j + 1,
                                            message: format!(
                                                "unknown escape sequence {:?}",
                                                other
                                            ),
                                        })
                                    }
                                }
                                j += 2;
                            }
                            Some(other) => {
                                s.push(*other);
                                j += 1;
                            }
                        }
                    }
                    push(out, Tok::Str(s));
                    i = j;
                }
                '-' => {
                    let mut j = i + 1;
                    let mut digits = String::from("-");
                    while let Some(d) = bytes.get(j).filter(|d| d.is_ascii_digit()) {
                        digits.push(*d);
                        j += 1;
                    }
                    if digits.len() == 1 {
                        return Err(ParseError {
                            line: lineno,
                            col,
                            message: "unexpected character '-'".into(),
                        });
                    }
                    let n: i64 = digits.parse().map_err(|_| ParseError {
                        line: lineno,
                        col,
                        message: "integer literal out of range".into(),
                    })?;
                    push(out, Tok::Int(n));
                    i = j;
                }
                c if c.is_ascii_digit() => {
                    let mut j = i;
                    let mut digits = String::new();
                    while let Some(d) = bytes.get(j).filter(|d| d.is_ascii_digit()) {
                        digits.push(*d);
                        j += 1;
                    }
                    let n: i64 = digits.parse().map_err(|_| ParseError {
                        line: lineno,
                        col,
                        message: "integer literal out of range".into(),
                    })?;
                    push(out, Tok::Int(n));
                    i = j;
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let mut j = i;
                    let mut id = String::new();
                    while let Some(d) = bytes
                        .get(j)
                        .filter(|d| d.is_ascii_alphanumeric() || **d == '_')
                    {
                        id.push(*d);
                        j += 1;
                    }
                    push(out, Tok::Ident(id));
                    i = j;
                }
                other => {
                    return Err(ParseError {
                        line: lineno,
                        col,
                        message: format!("unexpected character {other:?}"),
                    })
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Sugared AST
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum SArg {
    Var(String),
    Lit(PrimValue),
    Tuple(Vec<SArg>),
}

#[derive(Debug, Clone)]
enum SOp {
    Alias(String),
    Call(String, SArg),
    Tuple(Vec<SArg>),
    Prim(PrimValue),
    Proj(u32, SArg),
    Fun(SPattern, Box<SBlock>),
}

#[derive(Debug, Clone)]
enum SPattern {
    One(String),
    Unit,
    Tuple(Vec<String>),
}

#[derive(Debug, Clone)]
struct SStmt {
    pattern: SPattern,
    op: SOp,
}

#[derive(Debug, Clone)]
enum SRet {
    Var(String),
    Op(SOp),
    Missing,
}

#[derive(Debug, Clone)]
struct SBlock {
    stmts: Vec<SStmt>,
    ret: SRet,
}

// ---------------------------------------------------------------------------
// Parser proper
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    /// Every identifier token seen, used to keep generated names fresh.
    names_seen: HashSet<String>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn here(&self) -> (usize, usize) {
        let s = &self.toks[self.pos.min(self.toks.len() - 1)];
        (s.line, s.col)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        ParseError {
            line,
            col,
            message: message.into(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == &tok {
            self.bump();
            Ok(())
        } else {
            Err(self.err(format!("expected {what}, found {:?}", self.peek())))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(id) => {
                if RESERVED.contains(&id.as_str()) {
                    return Err(self.err(format!("reserved word `{id}` used as {what}")));
                }
                self.bump();
                self.names_seen.insert(id.clone());
                Ok(id)
            }
            other => Err(self.err(format!("expected {what}, found {other:?}"))),
        }
    }

    fn skip_separators(&mut self) {
        while matches!(self.peek(), Tok::Newline | Tok::Semi) {
            self.bump();
        }
    }

    /// A block terminated by `end` (Dedent for indented blocks, RBrace for
    /// inline ones, Eof/Newline boundary for single-line bodies and the
    /// program itself).
    fn block(&mut self, stop: &dyn Fn(&Tok) -> bool) -> Result<SBlock, ParseError> {
        let mut stmts = Vec::new();
        let mut ret = SRet::Missing;
        loop {
            self.skip_separators();
            if stop(self.peek()) {
                break;
            }
            if !matches!(ret, SRet::Missing) {
                return Err(self.err("statements after the return position"));
            }
            match self.peek().clone() {
                Tok::Ident(id) if id == "ret" => {
                    self.bump();
                    let v = self.ident("return variable")?;
                    ret = SRet::Var(v);
                }
                _ => {
                    let item = self.stmt_or_bare(stop)?;
                    match item {
                        StmtOrBare::Stmt(s) => stmts.push(s),
                        StmtOrBare::BareVar(v) => ret = SRet::Var(v),
                        StmtOrBare::BareOp(op) => ret = SRet::Op(op),
                    }
                }
            }
        }
        Ok(SBlock { stmts, ret })
    }

    fn stmt_or_bare(&mut self, stop: &dyn Fn(&Tok) -> bool) -> Result<StmtOrBare, ParseError> {
        // Pattern binding?
        let save = self.pos;
        if let Ok(pattern) = self.try_pattern() {
            if self.peek() == &Tok::Assign {
                self.bump();
                let op = self.sop(stop)?;
                return Ok(StmtOrBare::Stmt(SStmt { pattern, op }));
            }
        }
        self.pos = save;
        // Bare final: a lone variable or an operation.
        let op = self.sop(stop)?;
        if let SOp::Alias(v) = &op {
            return Ok(StmtOrBare::BareVar(v.clone()));
        }
        Ok(StmtOrBare::BareOp(op))
    }

    fn try_pattern(&mut self) -> Result<SPattern, ParseError> {
        match self.peek().clone() {
            Tok::Ident(_) => Ok(SPattern::One(self.ident("binding name")?)),
            Tok::LParen => {
                self.bump();
                if self.peek() == &Tok::RParen {
                    self.bump();
                    return Ok(SPattern::Unit);
                }
                let mut names = vec![self.ident("pattern variable")?];
                while self.peek() == &Tok::Comma {
                    self.bump();
                    names.push(self.ident("pattern variable")?);
                }
                self.expect(Tok::RParen, "`)`")?;
                Ok(SPattern::Tuple(names))
            }
            other => Err(self.err(format!("expected binding pattern, found {other:?}"))),
        }
    }

    fn sop(&mut self, stop: &dyn Fn(&Tok) -> bool) -> Result<SOp, ParseError> {
        match self.peek().clone() {
            Tok::Ident(id) if id == "fun" => {
                self.bump();
                let param = self.try_pattern()?;
                self.expect(Tok::Colon, "`:` after fun parameter")?;
                let body = self.fun_body(stop)?;
                Ok(SOp::Fun(param, Box::new(body)))
            }
            Tok::Ident(id) if id == "prj" => {
                self.bump();
                let idx = match self.bump() {
                    Tok::Int(n) if n >= 1 => n as u32,
                    _ => return Err(self.err("expected positive projection index")),
                };
                let target = self.sarg()?;
                Ok(SOp::Proj(idx, target))
            }
            Tok::Ident(id) if id == "ret" => Err(self.err("`ret` is not an operation")),
            Tok::Ident(_) => {
                let f = self.ident("variable")?;
                // A call if an argument follows on the same line.
                match self.peek() {
                    Tok::Ident(id) if RESERVED.contains(&id.as_str()) => {
                        Err(self.err(format!("reserved word `{id}` used as call argument")))
                    }
                    Tok::Ident(_) | Tok::LParen | Tok::Lt => {
                        let arg = self.sarg()?;
                        Ok(SOp::Call(f, arg))
                    }
                    _ => Ok(SOp::Alias(f)),
                }
            }
            Tok::Lt => {
                self.bump();
                let lit = self.literal()?;
                self.expect(Tok::Gt, "`>` closing the literal")?;
                Ok(SOp::Prim(lit))
            }
            Tok::LParen => {
                self.bump();
                if self.peek() == &Tok::RParen {
                    self.bump();
                    return Ok(SOp::Tuple(vec![]));
                }
                let mut parts = vec![self.sarg()?];
                while self.peek() == &Tok::Comma {
                    self.bump();
                    parts.push(self.sarg()?);
                }
                self.expect(Tok::RParen, "`)`")?;
                Ok(SOp::Tuple(parts))
            }
            other => Err(self.err(format!("expected operation, found {other:?}"))),
        }
    }

    fn fun_body(&mut self, outer_stop: &dyn Fn(&Tok) -> bool) -> Result<SBlock, ParseError> {
        match self.peek() {
            Tok::Newline => {
                // Indented block form.
                self.bump();
                self.skip_separators();
                self.expect(Tok::Indent, "indented fun body")?;
                let block = self.block(&|t| matches!(t, Tok::Dedent | Tok::Eof))?;
                if self.peek() == &Tok::Dedent {
                    self.bump();
                }
                Ok(block)
            }
            Tok::LBrace => {
                // Inline braced form.
                self.bump();
                let block = self.block(&|t| matches!(t, Tok::RBrace | Tok::Eof))?;
                self.expect(Tok::RBrace, "`}` closing the fun body")?;
                Ok(block)
            }
            _ => {
                // Single-line form: body extends to the end of the line (or
                // to whatever ends the enclosing block).
                let block = self.block(&|t| {
                    matches!(t, Tok::Newline | Tok::Eof | Tok::Dedent | Tok::RBrace)
                        || outer_stop(t)
                })?;
                Ok(block)
            }
        }
    }

    fn sarg(&mut self) -> Result<SArg, ParseError> {
        match self.peek().clone() {
            Tok::Ident(_) => Ok(SArg::Var(self.ident("variable")?)),
            Tok::Lt => {
                self.bump();
                let lit = self.literal()?;
                self.expect(Tok::Gt, "`>` closing the literal")?;
                Ok(SArg::Lit(lit))
            }
            Tok::LParen => {
                self.bump();
                if self.peek() == &Tok::RParen {
                    self.bump();
                    return Ok(SArg::Tuple(vec![]));
                }
                let mut parts = vec![self.sarg()?];
                while self.peek() == &Tok::Comma {
                    self.bump();
                    parts.push(self.sarg()?);
                }
                self.expect(Tok::RParen, "`)`")?;
                if parts.len() == 1 {
                    // `f (x)` is just `f x`.
                    Ok(parts.pop().unwrap())
                } else {
                    Ok(SArg::Tuple(parts))
                }
            }
            other => Err(self.err(format!("expected argument, found {other:?}"))),
        }
    }

    fn literal(&mut self) -> Result<PrimValue, ParseError> {
        match self.bump() {
            Tok::Int(n) => Ok(PrimValue::Int(n)),
            Tok::Str(s) => Ok(PrimValue::Str(s)),
            Tok::Ident(id) if id == "t" => Ok(PrimValue::Bool(true)),
            Tok::Ident(id) if id == "f" => Ok(PrimValue::Bool(false)),
            Tok::LParen => {
                self.expect(Tok::RParen, "`)` in unit literal")?;
                Ok(PrimValue::Unit)
            }
            Tok::Amp => match self.peek().clone() {
                Tok::Ident(name) => {
                    self.bump();
                    Ok(PrimValue::Handle(Handle::named(&name)))
                }
                Tok::HashMark => {
                    self.bump();
                    match self.bump() {
                        Tok::Int(n) if n >= 0 => {
                            Ok(PrimValue::Handle(Handle::anonymous(n as u64)))
                        }
                        _ => Err(self.err("expected handle serial after `&#`")),
                    }
                }
                _ => Err(self.err("expected handle name after `&`")),
            },
            Tok::At => {
                let name = self.ident("external function name")?;
                Ok(PrimValue::extern_fn(name))
            }
            other => Err(self.err(format!("expected literal, found {other:?}"))),
        }
    }
}

enum StmtOrBare {
    Stmt(SStmt),
    BareVar(String),
    BareOp(SOp),
}

// ---------------------------------------------------------------------------
// Desugaring
// ---------------------------------------------------------------------------

struct Desugarer {
    /// All names appearing in the source or generated so far.
    taken: HashSet<String>,
    /// Names already referenced or bound during traversal.
    seen: HashSet<String>,
    /// Occurrence counts of every name in the whole source.
    source_counts: NameCounts,
    /// Monotone counter for anonymous temporaries (`x0`, `x1`, ...).
    anon_next: u32,
    /// Per-base counters for renamed bindings (`stdout1`, `stdout2`, ...).
    rename_next: HashMap<String, u32>,
}

/// Scope chain of name remappings, innermost last.
type Scopes = Vec<HashMap<String, Var>>;

impl Desugarer {
    fn new(taken: HashSet<String>, source_counts: NameCounts) -> Self {
        Desugarer {
            taken,
            seen: HashSet::new(),
            source_counts,
            anon_next: 0,
            rename_next: HashMap::new(),
        }
    }

    fn fresh_anon(&mut self) -> Var {
        loop {
            let name = format!("x{}", self.anon_next);
            self.anon_next += 1;
            if self.taken.insert(name.clone()) {
                self.seen.insert(name.clone());
                return Var::new(name);
            }
        }
    }

    fn fresh_renamed(&mut self, base: &str) -> Var {
        let next = self.rename_next.entry(base.to_string()).or_insert(1);
        loop {
            let name = format!("{base}{next}");
            *next += 1;
            if self.taken.insert(name.clone()) {
                self.seen.insert(name.clone());
                return Var::new(name);
            }
        }
    }

    fn resolve(&mut self, name: &str, scopes: &Scopes) -> Var {
        self.seen.insert(name.to_string());
        for scope in scopes.iter().rev() {
            if let Some(v) = scope.get(name) {
                return v.clone();
            }
        }
        Var::new(name)
    }

    /// Bind `name` in the innermost scope, renaming when the name is already
    /// in use anywhere relevant: bound in the scope chain, referenced earlier,
    /// or occurring outside the subtree being desugared (`occurs_elsewhere`).
    fn bind(&mut self, name: &str, scopes: &mut Scopes, occurs_elsewhere: bool) -> Var {
        let in_scope = scopes.iter().any(|s| s.contains_key(name));
        let needs_rename = in_scope || self.seen.contains(name) || occurs_elsewhere;
        let var = if needs_rename {
            self.fresh_renamed(name)
        } else {
            self.seen.insert(name.to_string());
            Var::new(name)
        };
        scopes
            .last_mut()
            .unwrap()
            .insert(name.to_string(), var.clone());
        var
    }

    fn block(&mut self, b: &SBlock, scopes: &mut Scopes) -> Result<Expr, ParseError> {
        let mut stmts = Vec::new();
        for s in &b.stmts {
            self.stmt(s, scopes, &mut stmts)?;
        }
        let ret = match &b.ret {
            SRet::Var(name) => self.resolve(name, scopes),
            SRet::Op(op) => {
                let v = self.fresh_anon();
                let core = self.op(op, scopes, &mut stmts)?;
                stmts.push(Statement {
                    bound: v.clone(),
                    op: core,
                });
                v
            }
            SRet::Missing => {
                return Err(ParseError {
                    line: 0,
                    col: 0,
                    message: "block is missing a return (expected `ret x` or a final value)"
                        .into(),
                })
            }
        };
        Ok(Expr { stmts, ret })
    }

    fn stmt(
        &mut self,
        s: &SStmt,
        scopes: &mut Scopes,
        out: &mut Vec<Statement>,
    ) -> Result<(), ParseError> {
        // Desugar the operation first: uses on the right-hand side refer to
        // the bindings in force before this statement.
        let core = self.op(&s.op, scopes, out)?;
        match &s.pattern {
            SPattern::One(name) => {
                let bound = self.bind(name, scopes, false);
                out.push(Statement { bound, op: core });
            }
            SPattern::Unit => {
                let bound = self.fresh_anon();
                out.push(Statement { bound, op: core });
            }
            SPattern::Tuple(names) => {
                let tmp = match &core {
                    Operation::Alias(v) => v.clone(),
                    _ => {
                        let tmp = self.fresh_anon();
                        out.push(Statement {
                            bound: tmp.clone(),
                            op: core,
                        });
                        tmp
                    }
                };
                for (i, name) in names.iter().enumerate() {
                    let bound = self.bind(name, scopes, false);
                    out.push(Statement {
                        bound,
                        op: Operation::Proj {
                            index: i as u32 + 1,
                            tuple: tmp.clone(),
                        },
                    });
                }
            }
        }
        Ok(())
    }

    fn op(
        &mut self,
        op: &SOp,
        scopes: &mut Scopes,
        out: &mut Vec<Statement>,
    ) -> Result<Operation, ParseError> {
        Ok(match op {
            SOp::Alias(name) => Operation::Alias(self.resolve(name, scopes)),
            SOp::Prim(c) => Operation::Prim(c.clone()),
            SOp::Call(f, arg) => {
                let f = self.resolve(f, scopes);
                let arg = self.arg(arg, scopes, out)?;
                Operation::Call { f, arg }
            }
            SOp::Tuple(parts) => {
                let vars = parts
                    .iter()
                    .map(|a| self.arg(a, scopes, out))
                    .collect::<Result<Vec<_>, _>>()?;
                Operation::Tuple(vars)
            }
            SOp::Proj(index, target) => {
                let tuple = self.arg(target, scopes, out)?;
                Operation::Proj {
                    index: *index,
                    tuple,
                }
            }
            SOp::Fun(param, body) => {
                // A parameter is renamed when its name occurs anywhere outside
                // this fun's own subtree.
                let body_names = block_names_with(param, body);
                scopes.push(HashMap::new());
                let (param_var, mut prologue) = match param {
                    SPattern::One(name) => {
                        let occurs_outside = self.occurs_outside(name, &body_names);
                        (self.bind(name, scopes, occurs_outside), Vec::new())
                    }
                    SPattern::Unit => (self.fresh_anon(), Vec::new()),
                    SPattern::Tuple(names) => {
                        let tmp = self.fresh_anon();
                        let mut prologue = Vec::new();
                        for (i, name) in names.iter().enumerate() {
                            let occurs_outside = self.occurs_outside(name, &body_names);
                            let bound = self.bind(name, scopes, occurs_outside);
                            prologue.push(Statement {
                                bound,
                                op: Operation::Proj {
                                    index: i as u32 + 1,
                                    tuple: tmp.clone(),
                                },
                            });
                        }
                        (tmp, prologue)
                    }
                };
                let mut body_expr = self.block(body, scopes)?;
                scopes.pop();
                prologue.append(&mut body_expr.stmts);
                Operation::Fun {
                    param: param_var,
                    body: Expr {
                        stmts: prologue,
                        ret: body_expr.ret,
                    },
                }
            }
        })
    }

    /// Whether `name` occurs in the program outside the subtree whose names
    /// are `subtree`. `taken` holds every source occurrence, so a name that
    /// is in `taken` but whose only occurrences are inside the subtree does
    /// not need renaming.
    fn occurs_outside(&self, name: &str, subtree: &NameCounts) -> bool {
        let total = self.source_counts.get(name).copied().unwrap_or(0);
        let inside = subtree.get(name).copied().unwrap_or(0);
        total > inside
    }

    fn arg(
        &mut self,
        arg: &SArg,
        scopes: &mut Scopes,
        out: &mut Vec<Statement>,
    ) -> Result<Var, ParseError> {
        Ok(match arg {
            SArg::Var(name) => self.resolve(name, scopes),
            SArg::Lit(c) => {
                let v = self.fresh_anon();
                out.push(Statement {
                    bound: v.clone(),
                    op: Operation::Prim(c.clone()),
                });
                v
            }
            SArg::Tuple(parts) => {
                let vars = parts
                    .iter()
                    .map(|a| self.arg(a, scopes, out))
                    .collect::<Result<Vec<_>, _>>()?;
                let v = self.fresh_anon();
                out.push(Statement {
                    bound: v.clone(),
                    op: Operation::Tuple(vars),
                });
                v
            }
        })
    }
}

type NameCounts = HashMap<String, usize>;

fn bump_name(counts: &mut NameCounts, name: &str) {
    *counts.entry(name.to_string()).or_insert(0) += 1;
}

fn arg_names(a: &SArg, counts: &mut NameCounts) {
    match a {
        SArg::Var(n) => bump_name(counts, n),
        SArg::Lit(_) => {}
        SArg::Tuple(parts) => parts.iter().for_each(|p| arg_names(p, counts)),
    }
}

fn sop_names(op: &SOp, counts: &mut NameCounts) {
    match op {
        SOp::Alias(n) => bump_name(counts, n),
        SOp::Call(f, a) => {
            bump_name(counts, f);
            arg_names(a, counts);
        }
        SOp::Tuple(parts) => parts.iter().for_each(|p| arg_names(p, counts)),
        SOp::Prim(_) => {}
        SOp::Proj(_, a) => arg_names(a, counts),
        SOp::Fun(param, body) => {
            pattern_names(param, counts);
            sblock_names(body, counts);
        }
    }
}

fn pattern_names(p: &SPattern, counts: &mut NameCounts) {
    match p {
        SPattern::One(n) => bump_name(counts, n),
        SPattern::Unit => {}
        SPattern::Tuple(ns) => ns.iter().for_each(|n| bump_name(counts, n)),
    }
}

fn sblock_names(b: &SBlock, counts: &mut NameCounts) {
    for s in &b.stmts {
        pattern_names(&s.pattern, counts);
        sop_names(&s.op, counts);
    }
    match &b.ret {
        SRet::Var(n) => bump_name(counts, n),
        SRet::Op(op) => sop_names(op, counts),
        SRet::Missing => {}
    }
}

fn block_names_with(param: &SPattern, body: &SBlock) -> NameCounts {
    let mut counts = NameCounts::new();
    pattern_names(param, &mut counts);
    sblock_names(body, &mut counts);
    counts
}

/// Parse concrete syntax into a core-form expression.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let toks = Lexer::lex(text)?;
    let mut parser = Parser {
        toks,
        pos: 0,
        names_seen: HashSet::new(),
    };
    let block = parser.block(&|t| matches!(t, Tok::Eof))?;
    parser.expect(Tok::Eof, "end of input")?;
    let mut counts = NameCounts::new();
    sblock_names(&block, &mut counts);
    let mut d = Desugarer::new(parser.names_seen, counts);
    let mut scopes: Scopes = vec![HashMap::new()];
    d.block(&block, &mut scopes)
}
