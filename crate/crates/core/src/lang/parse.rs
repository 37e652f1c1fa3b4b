use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}, col {col}: expected {expected}, found {found}")]
    Syntax { line: usize, col: usize, expected: String, found: String },
    #[error("line {line}: duplicate label {label}")]
    DuplicateLabel { line: usize, label: Label },
    #[error("line {line}: variable `{var}` used before definition")]
    UseBeforeDef { line: usize, var: String },
    #[error("line {line}: variable `{var}` is assigned more than once")]
    Reassign { line: usize, var: String },
    #[error("line {line}: {message}")]
    CoreTable { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Sym(&'static str),
}

impl Tok {
    fn show(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(i) => format!("`{i}`"),
            Tok::Str(s) => format!("{s:?}"),
            Tok::Sym(s) => format!("`{s}`"),
        }
    }
}

const SYMS: [&str; 16] = [":=", "==", "!=", ":", "(", ")", "{", "}", "[", "]", ",", "*", "+", "-", "<", "!"];

const KEYWORDS: [&str; 17] = [
    "skip", "input", "secret", "core_api", "callback", "fork", "if", "else", "while", "bound", "new", "core_alloc",
    "core_call", "on", "io", "caps", "nil",
];

fn lex(line: &str, lineno: usize) -> Result<Vec<(usize, Tok)>, ParseError> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            break;
        }
        let col = i + 1;
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((col, Tok::Ident(chars[start..i].iter().collect())));
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse().map_err(|_| ParseError::Syntax {
                line: lineno,
                col,
                expected: "integer literal".into(),
                found: s.clone(),
            })?;
            out.push((col, Tok::Int(v)));
        } else if c == '"' {
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => {
                        return Err(ParseError::Syntax {
                            line: lineno,
                            col,
                            expected: "closing `\"`".into(),
                            found: "end of line".into(),
                        })
                    }
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        match chars.get(i + 1) {
                            Some('n') => s.push('\n'),
                            Some(&e) => s.push(e),
                            None => {}
                        }
                        i += 2;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            out.push((col, Tok::Str(s)));
        } else {
            let rest: String = chars[i..].iter().take(2).collect();
            let sym = SYMS.iter().find(|s| rest.starts_with(**s)).ok_or_else(|| ParseError::Syntax {
                line: lineno,
                col,
                expected: "token".into(),
                found: format!("`{c}`"),
            })?;
            i += sym.len();
            out.push((col, Tok::Sym(sym)));
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    toks: &'a [(usize, Tok)],
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn peek_at(&self, n: usize) -> Option<&Tok> {
        self.toks.get(self.pos + n).map(|t| &t.1)
    }

    fn err<T>(&self, expected: &str) -> Result<T, ParseError> {
        let (col, found) = match self.toks.get(self.pos) {
            Some((c, t)) => (*c, t.show()),
            None => (self.toks.last().map(|t| t.0 + 1).unwrap_or(1), "end of line".to_string()),
        };
        Err(ParseError::Syntax { line: self.line, col, expected: expected.to_string(), found })
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.peek() == Some(&Tok::Sym(leak(s))) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(&format!("`{s}`"))
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.err(&format!("`{kw}`"))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("identifier"),
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        match self.peek() {
            Some(Tok::Int(i)) => {
                let i = *i;
                self.pos += 1;
                Ok(i)
            }
            _ => self.err("integer"),
        }
    }

    fn string(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("string literal"),
        }
    }

    fn end(&self) -> Result<(), ParseError> {
        if self.pos == self.toks.len() {
            Ok(())
        } else {
            self.err("end of line")
        }
    }

    fn operand(&mut self) -> Result<Operand, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Ident(s)) if s == "nil" => {
                self.pos += 1;
                Ok(Operand::Nil)
            }
            Some(Tok::Ident(_)) => Ok(Operand::Var(self.ident()?)),
            Some(Tok::Int(i)) => {
                self.pos += 1;
                Ok(Operand::Int(i))
            }
            Some(Tok::Sym("-")) => {
                self.pos += 1;
                Ok(Operand::Int(-self.int()?))
            }
            Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok(Operand::Str(s))
            }
            _ => self.err("operand"),
        }
    }

    fn list<T>(&mut self, close: &str, mut item: impl FnMut(&mut Self) -> Result<T, ParseError>) -> Result<Vec<T>, ParseError> {
        let mut out = Vec::new();
        if self.eat_sym(close) {
            return Ok(out);
        }
        loop {
            out.push(item(self)?);
            if self.eat_sym(close) {
                return Ok(out);
            }
            self.sym(",")?;
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.additive()?;
        let op = match self.peek() {
            Some(Tok::Sym("==")) => BinOp::Eq,
            Some(Tok::Sym("!=")) => BinOp::Ne,
            Some(Tok::Sym("<")) => BinOp::Lt,
            _ => return Ok(lhs),
        };
        self.pos += 1;
        let rhs = self.additive()?;
        Ok(Expr::Bin(op, Box::new(lhs), Box::new(rhs)))
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Sym("+")) => BinOp::Add,
                Some(Tok::Sym("-")) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while self.eat_sym("*") {
            let rhs = self.unary()?;
            lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_sym("!") {
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        if self.eat_sym("(") {
            let e = self.expr()?;
            self.sym(")")?;
            return Ok(e);
        }
        Ok(Expr::Atom(self.operand()?))
    }
}

fn leak(s: &str) -> &'static str {
    SYMS.iter().copied().find(|x| *x == s).expect("known symbol")
}

enum Frame {
    Root,
    Callback { label: Label, name: String, params: Vec<String>, scope: BTreeSet<String> },
    Fork { label: Label, captured: Vec<String> },
    Then { label: Label, cond: Expr },
    Else { label: Label, cond: Expr, then_b: Vec<Stmt> },
    Loop { label: Label, cond: Expr, bound: u32 },
}

struct Builder {
    frames: Vec<(Frame, Vec<Stmt>, Vec<String>)>,
    labels: BTreeMap<Label, usize>,
    next_label: u32,
    defined: BTreeSet<String>,
    visible: BTreeSet<String>,
    program: Program,
}

impl Builder {
    fn in_callback(&mut self) -> Option<&mut BTreeSet<String>> {
        self.frames.iter_mut().rev().find_map(|(f, _, _)| match f {
            Frame::Callback { scope, .. } => Some(scope),
            _ => None,
        })
    }

    fn label(&mut self, explicit: Option<u32>, line: usize) -> Result<Label, ParseError> {
        let l = Label(explicit.unwrap_or(self.next_label));
        if self.labels.insert(l, line).is_some() {
            return Err(ParseError::DuplicateLabel { line, label: l });
        }
        self.next_label = l.0 + 1;
        Ok(l)
    }

    fn use_var(&mut self, v: &str, line: usize) -> Result<(), ParseError> {
        let ok = match self.in_callback() {
            Some(scope) => scope.contains(v),
            None => self.visible.contains(v),
        };
        if ok {
            Ok(())
        } else {
            Err(ParseError::UseBeforeDef { line, var: v.to_string() })
        }
    }

    fn def_var(&mut self, v: &str, line: usize) -> Result<(), ParseError> {
        if !self.defined.insert(v.to_string()) {
            return Err(ParseError::Reassign { line, var: v.to_string() });
        }
        self.visible.insert(v.to_string());
        if let Some(scope) = self.in_callback() {
            scope.insert(v.to_string());
        }
        if let Some((_, _, locals)) = self.frames.last_mut() {
            locals.push(v.to_string());
        }
        Ok(())
    }

    fn push_stmt(&mut self, s: Stmt, line: usize) -> Result<(), ParseError> {
        for u in s.uses() {
            self.use_var(u, line)?;
        }
        for d in s.defs() {
            self.def_var(d, line)?;
        }
        self.frames.last_mut().expect("root frame").1.push(s);
        Ok(())
    }

    fn close(&mut self, line: usize, cur: &Cursor) -> Result<(), ParseError> {
        if self.frames.len() <= 1 {
            return cur.err("statement (unbalanced `}`)");
        }
        let (frame, block, locals) = self.frames.pop().expect("frame");
        let drop_scope = matches!(frame, Frame::Fork { .. } | Frame::Callback { .. });
        if drop_scope {
            for v in &locals {
                self.visible.remove(v);
            }
        }
        // locals of branches and loops stay visible, so they are also locals
        // of the enclosing frame for scoping purposes
        if !drop_scope {
            if let Some((_, _, outer)) = self.frames.last_mut() {
                outer.extend(locals);
            }
        }
        let stmt = match frame {
            Frame::Root => unreachable!(),
            Frame::Callback { label, name, params, .. } => {
                self.program.callbacks.push(Callback { label, name, params, body: block });
                return Ok(());
            }
            Frame::Fork { label, captured } => Stmt { label, kind: StmtKind::Fork { captured, body: block } },
            Frame::Then { label, cond } => {
                Stmt { label, kind: StmtKind::Branch { cond, then_b: block, else_b: Vec::new() } }
            }
            Frame::Else { label, cond, then_b } => {
                Stmt { label, kind: StmtKind::Branch { cond, then_b, else_b: block } }
            }
            Frame::Loop { label, cond, bound } => Stmt { label, kind: StmtKind::Loop { cond, bound, body: block } },
        };
        self.frames.last_mut().expect("frame").1.push(stmt);
        let _ = line;
        Ok(())
    }
}

/// Parses the line-oriented surface syntax.
pub fn parse_program(source: &str) -> Result<Program, ParseError> {
    parse_with_lines(source).map(|(p, _)| p)
}

/// Like [`parse_program`], also returning the 1-based source line of every
/// label.
pub fn parse_with_lines(source: &str) -> Result<(Program, BTreeMap<Label, usize>), ParseError> {
    let mut b = Builder {
        frames: vec![(Frame::Root, Vec::new(), Vec::new())],
        labels: BTreeMap::new(),
        next_label: 0,
        defined: BTreeSet::new(),
        visible: BTreeSet::new(),
        program: Program::default(),
    };
    let mut last_line = 0;
    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let toks = lex(raw, line)?;
        if toks.is_empty() {
            continue;
        }
        let mut c = Cursor { toks: &toks, pos: 0, line };

        if c.eat_sym("}") {
            if c.eat_kw("else") {
                c.sym("{")?;
                c.end()?;
                let top = b.frames.pop().expect("frame");
                match top {
                    (Frame::Then { label, cond }, then_b, locals) => {
                        b.frames.push((Frame::Else { label, cond, then_b }, Vec::new(), locals));
                    }
                    _ => return c.err("`}` closing an `if` block"),
                }
            } else {
                c.end()?;
                b.close(line, &c)?;
            }
            continue;
        }

        let explicit = match (c.peek(), c.peek_at(1)) {
            (Some(Tok::Ident(s)), Some(Tok::Sym(":"))) if is_label(s) => {
                let n = s[1..].parse::<u32>().ok();
                c.pos += 2;
                n
            }
            _ => None,
        };

        if c.eat_kw("core_api") {
            let k = c.int()? as usize;
            let name = c.ident()?;
            let kind = match c.peek() {
                Some(Tok::Ident(s)) if s == "ctor" => ApiKind::Ctor,
                Some(Tok::Ident(s)) if s == "call" => ApiKind::Call,
                Some(Tok::Ident(s)) if s == "vin" => ApiKind::Vin,
                Some(Tok::Ident(s)) if s == "vout" => ApiKind::Vout,
                _ => return c.err("`ctor`, `call`, `vin` or `vout`"),
            };
            c.pos += 1;
            c.end()?;
            if b.program.apis.iter().any(|a| a.k == k || a.name == name) {
                return Err(ParseError::CoreTable { line, message: format!("duplicate core api entry {k} `{name}`") });
            }
            b.program.apis.push(CoreApi { k, name, kind });
            continue;
        }

        let label = b.label(explicit, line)?;

        if c.eat_kw("input") {
            let name = c.ident()?;
            let secret = c.eat_kw("secret");
            let value = if c.eat_sym(":=") { Some(c.operand()?) } else { None };
            c.end()?;
            if b.frames.len() != 1 {
                return c.err("statement (`input` is only allowed at top level)");
            }
            b.def_var(&name, line)?;
            b.program.inputs.push(Input { label, name, secret, value });
            continue;
        }
        if c.eat_kw("callback") {
            let name = c.ident()?;
            c.sym("(")?;
            let params = c.list(")", |c| c.ident())?;
            c.sym("{")?;
            c.end()?;
            if b.frames.len() != 1 {
                return c.err("statement (`callback` is only allowed at top level)");
            }
            b.frames.push((
                Frame::Callback { label, name, params: params.clone(), scope: BTreeSet::new() },
                Vec::new(),
                Vec::new(),
            ));
            for p in &params {
                b.def_var(p, line)?;
            }
            continue;
        }
        if c.eat_kw("fork") {
            c.sym("(")?;
            let captured = c.list(")", |c| c.ident())?;
            c.sym("{")?;
            c.end()?;
            for v in &captured {
                b.use_var(v, line)?;
            }
            b.frames.push((Frame::Fork { label, captured }, Vec::new(), Vec::new()));
            continue;
        }
        if c.eat_kw("if") {
            c.sym("(")?;
            let cond = c.expr()?;
            c.sym(")")?;
            c.sym("{")?;
            c.end()?;
            for v in cond.vars() {
                b.use_var(v, line)?;
            }
            b.frames.push((Frame::Then { label, cond }, Vec::new(), Vec::new()));
            continue;
        }
        if c.eat_kw("while") {
            c.sym("(")?;
            let cond = c.expr()?;
            c.sym(")")?;
            let bound = if c.eat_kw("bound") { c.int()? as u32 } else { 1 };
            c.sym("{")?;
            c.end()?;
            for v in cond.vars() {
                b.use_var(v, line)?;
            }
            b.frames.push((Frame::Loop { label, cond, bound }, Vec::new(), Vec::new()));
            continue;
        }

        let kind = parse_simple(&mut c)?;
        c.end()?;
        b.push_stmt(Stmt { label, kind }, line)?;
    }
    if b.frames.len() != 1 {
        return Err(ParseError::Syntax {
            line: last_line + 1,
            col: 1,
            expected: "`}`".into(),
            found: "end of input".into(),
        });
    }
    let mut program = b.program;
    program.body = b.frames.pop().expect("root").1;
    program.callbacks.sort_by_key(|cb| cb.label);
    check_core_table(&program)?;
    Ok((program, b.labels))
}

fn check_core_table(p: &Program) -> Result<(), ParseError> {
    let mut ks: Vec<usize> = p.apis.iter().map(|a| a.k).collect();
    ks.sort();
    if ks.iter().enumerate().any(|(i, k)| i != *k) {
        return Err(ParseError::CoreTable { line: 0, message: "core api indices must be dense from 0".into() });
    }
    for s in p.all_stmts() {
        if let StmtKind::CoreCall { k, .. } = &s.kind {
            if p.api(*k).is_none() {
                return Err(ParseError::CoreTable { line: 0, message: format!("{}: undeclared core api {k}", s.label) });
            }
        }
    }
    Ok(())
}

fn is_label(s: &str) -> bool {
    s.len() > 1 && s.starts_with('L') && s[1..].chars().all(|c| c.is_ascii_digit())
}

fn parse_simple(c: &mut Cursor) -> Result<StmtKind, ParseError> {
    if c.eat_kw("skip") {
        return Ok(StmtKind::Skip);
    }
    if c.eat_sym("*") {
        let x = c.ident()?;
        c.sym(":=")?;
        let e = c.operand()?;
        return Ok(StmtKind::HeapWrite { x, e });
    }
    if matches!(c.peek(), Some(Tok::Ident(s)) if s == "core_call") {
        return core_call(c, Vec::new());
    }
    if matches!(c.peek(), Some(Tok::Ident(s)) if s == "io") {
        return io_call(c, None);
    }
    let mut lhs = vec![c.ident()?];
    while c.eat_sym(",") {
        lhs.push(c.ident()?);
    }
    c.sym(":=")?;
    if matches!(c.peek(), Some(Tok::Ident(s)) if s == "core_call") {
        return core_call(c, lhs);
    }
    if lhs.len() != 1 {
        return c.err("`core_call` (only core calls return several values)");
    }
    let x = lhs.pop().expect("one lhs");
    if c.eat_kw("new") {
        c.sym("(")?;
        c.sym(")")?;
        return Ok(StmtKind::HeapAlloc { x });
    }
    if c.eat_sym("*") {
        let e = c.ident()?;
        return Ok(StmtKind::HeapRead { x, e });
    }
    if c.eat_kw("core_alloc") {
        c.sym("(")?;
        let args = c.list(")", |c| c.operand())?;
        return Ok(StmtKind::CoreAlloc { c: x, args });
    }
    if matches!(c.peek(), Some(Tok::Ident(s)) if s == "io") {
        return io_call(c, Some(x));
    }
    let e = c.expr()?;
    Ok(StmtKind::Assign { x, e })
}

fn core_call(c: &mut Cursor, rets: Vec<String>) -> Result<StmtKind, ParseError> {
    c.kw("core_call")?;
    let k = c.int()? as usize;
    c.kw("on")?;
    let recv = c.ident()?;
    c.sym("(")?;
    let args = c.list(")", |c| c.operand())?;
    Ok(StmtKind::CoreCall { k, c: recv, args, rets })
}

fn io_call(c: &mut Cursor, ret: Option<String>) -> Result<StmtKind, ParseError> {
    c.kw("io")?;
    let op = c.string()?;
    c.sym("(")?;
    let args = c.list(")", |c| c.operand())?;
    c.kw("caps")?;
    c.sym("[")?;
    let caps = c.list("]", |c| {
        let name = c.ident()?;
        match Cap::from_name(&name) {
            Some(cap) => Ok(cap),
            None => {
                c.pos -= 1;
                c.err("capability tag")
            }
        }
    })?;
    Ok(StmtKind::IoCall { op, args, caps, ret })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_program() {
        let p = parse_program("skip").unwrap();
        assert_eq!(p.body, vec![Stmt { label: Label(0), kind: StmtKind::Skip }]);
    }

    #[test]
    fn use_before_def_is_rejected() {
        let e = parse_program("x := *y").unwrap_err();
        assert!(matches!(e, ParseError::UseBeforeDef { ref var, .. } if var == "y"), "{e}");
    }

    #[test]
    fn reassignment_is_rejected() {
        let e = parse_program("x := new()\nx := new()").unwrap_err();
        assert!(matches!(e, ParseError::Reassign { line: 2, .. }));
    }

    #[test]
    fn duplicate_labels_are_rejected() {
        let e = parse_program("L1: x := new()\nL1: y := new()").unwrap_err();
        assert!(matches!(e, ParseError::DuplicateLabel { label: Label(1), .. }));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let e = parse_program("skip\nx := new(").unwrap_err();
        match e {
            ParseError::Syntax { line, expected, .. } => {
                assert_eq!(line, 2);
                assert_eq!(expected, "`)`");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn implicit_labels_follow_explicit_ones() {
        let p = parse_program("L5: x := new()\ny := new()\nL9: skip\nskip").unwrap();
        let labels: Vec<u32> = p.body.iter().map(|s| s.label.0).collect();
        assert_eq!(labels, vec![5, 6, 9, 10]);
    }

    #[test]
    fn surface_forms() {
        let src = r#"
            input psk secret
            core_api 0 send call
            L1: k := new()
            L2: *k := psk
            L3: c := core_alloc(k, nil)
            L4: fork(k) {
              L5: m := new()
            }
            L6: r, s := core_call 0 on c (k)
            L7: io "printf" ("hi", 3) caps[fs_write, net_write]
            L8: if (psk == "x") {
              L9: skip
            } else {
              L10: skip
            }
            L11: while (!(1 < 2)) bound 3 {
              L12: t := 1 + 2 * 3
            }
        "#;
        let p = parse_program(src).unwrap();
        assert_eq!(p.inputs.len(), 1);
        assert!(p.inputs[0].secret);
        assert_eq!(p.body.len(), 8);
        match &p.body[4].kind {
            StmtKind::CoreCall { k, c, args, rets } => {
                assert_eq!((*k, c.as_str(), args.len(), rets.len()), (0, "c", 1, 2));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn child_locals_are_not_visible_after_fork() {
        let e = parse_program("fork() {\n m := new()\n}\nx := *m").unwrap_err();
        assert!(matches!(e, ParseError::UseBeforeDef { .. }));
    }

    #[test]
    fn undeclared_core_api_is_rejected() {
        let e = parse_program("c := core_alloc()\ncore_call 1 on c ()").unwrap_err();
        assert!(matches!(e, ParseError::CoreTable { .. }));
    }
}
