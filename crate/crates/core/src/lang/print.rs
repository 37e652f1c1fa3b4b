use std::fmt::Write;

use super::*;

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for i in &p.inputs {
        let _ = write!(out, "{}: input {}", i.label, i.name);
        if i.secret {
            out.push_str(" secret");
        }
        if let Some(v) = &i.value {
            let _ = write!(out, " := {}", operand(v));
        }
        out.push('\n');
    }
    for a in &p.apis {
        let _ = writeln!(out, "core_api {} {} {}", a.k, a.name, a.kind.name());
    }
    for cb in &p.callbacks {
        let _ = writeln!(out, "{}: callback {}({}) {{", cb.label, cb.name, cb.params.join(", "));
        block(&cb.body, 1, &mut out);
        out.push_str("}\n");
    }
    block(&p.body, 0, &mut out);
    out
}

fn block(stmts: &[Stmt], depth: usize, out: &mut String) {
    for s in stmts {
        stmt(s, depth, out);
    }
}

fn stmt(s: &Stmt, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    let _ = write!(out, "{pad}{}: {}", s.label, head(&s.kind));
    match &s.kind {
        StmtKind::Fork { body, .. } | StmtKind::Loop { body, .. } => {
            out.push_str(" {\n");
            block(body, depth + 1, out);
            let _ = writeln!(out, "{pad}}}");
        }
        StmtKind::Branch { then_b, else_b, .. } => {
            out.push_str(" {\n");
            block(then_b, depth + 1, out);
            if else_b.is_empty() {
                let _ = writeln!(out, "{pad}}}");
            } else {
                let _ = writeln!(out, "{pad}}} else {{");
                block(else_b, depth + 1, out);
                let _ = writeln!(out, "{pad}}}");
            }
        }
        _ => out.push('\n'),
    }
}

/// The statement text without label and without nested blocks.
pub(crate) fn head(k: &StmtKind) -> String {
    match k {
        StmtKind::Skip => "skip".into(),
        StmtKind::HeapAlloc { x } => format!("{x} := new()"),
        StmtKind::HeapRead { x, e } => format!("{x} := *{e}"),
        StmtKind::HeapWrite { x, e } => format!("*{x} := {}", operand(e)),
        StmtKind::CoreAlloc { c, args } => format!("{c} := core_alloc({})", operands(args)),
        StmtKind::CoreCall { k, c, args, rets } => {
            let call = format!("core_call {k} on {c} ({})", operands(args));
            if rets.is_empty() {
                call
            } else {
                format!("{} := {call}", rets.join(", "))
            }
        }
        StmtKind::Fork { captured, .. } => format!("fork({})", captured.join(", ")),
        StmtKind::IoCall { op, args, caps, ret } => {
            let caps: Vec<&str> = caps.iter().map(|c| c.name()).collect();
            let call = format!("io {} ({}) caps[{}]", quote(op), operands(args), caps.join(", "));
            match ret {
                Some(r) => format!("{r} := {call}"),
                None => call,
            }
        }
        StmtKind::Branch { cond, .. } => format!("if ({})", expr(cond)),
        StmtKind::Loop { cond, bound, .. } => format!("while ({}) bound {bound}", expr(cond)),
        StmtKind::Assign { x, e } => format!("{x} := {}", expr(e)),
    }
}

pub(crate) fn operand(o: &Operand) -> String {
    match o {
        Operand::Var(v) => v.clone(),
        Operand::Nil => "nil".into(),
        Operand::Int(i) => i.to_string(),
        Operand::Str(s) => quote(s),
    }
}

fn operands(v: &[Operand]) -> String {
    v.iter().map(operand).collect::<Vec<_>>().join(", ")
}

fn quote(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

pub(crate) fn expr(e: &Expr) -> String {
    match e {
        Expr::Atom(o) => operand(o),
        Expr::Not(inner) => match **inner {
            Expr::Atom(_) => format!("!{}", expr(inner)),
            _ => format!("!({})", expr(inner)),
        },
        Expr::Bin(op, a, b) => format!("{} {} {}", sub(a), op.symbol(), sub(b)),
    }
}

fn sub(e: &Expr) -> String {
    match e {
        Expr::Bin(..) => format!("({})", expr(e)),
        _ => expr(e),
    }
}
