//! Textual form of worker bytecode: `LABEL:` lines and indented
//! `OP a, b, c` lines. `#` starts a comment.

use std::collections::BTreeMap;

use super::isa::{BadRegister, FuncRef, InstrError, Instruction, Opcode, Operand, Reg, UnknownOpcode};
use super::WorkerBytecode;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AsmError {
    #[error("line {line}: {source}")]
    Opcode { line: usize, source: UnknownOpcode },
    #[error("line {line}: {source}")]
    Register { line: usize, source: BadRegister },
    #[error("line {line}: malformed operand `{text}`")]
    Operand { line: usize, text: String },
    #[error("line {line}: {source}")]
    Instr { line: usize, source: InstrError },
    #[error("line {line}: label `{label}` defined twice")]
    DuplicateLabel { line: usize, label: String },
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
}

pub fn disassemble(wb: &WorkerBytecode) -> String {
    let mut by_pc: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (name, &pc) in &wb.labels {
        by_pc.entry(pc).or_default().push(name);
    }
    let mut out = format!("# worker {}\n", wb.worker);
    for pc in 0..=wb.instructions.len() {
        if let Some(names) = by_pc.get(&pc) {
            for n in names {
                out.push_str(n);
                out.push_str(":\n");
            }
        }
        if let Some(x) = wb.instructions.get(pc) {
            out.push_str("    ");
            out.push_str(&x.to_string());
            out.push('\n');
        }
    }
    out
}

fn operand(line: usize, text: &str) -> Result<Operand, AsmError> {
    if text.starts_with('$') {
        return text
            .parse::<Reg>()
            .map(Operand::Reg)
            .map_err(|source| AsmError::Register { line, source });
    }
    if let Some(f) = text.strip_prefix('@') {
        let bad = || AsmError::Operand { line, text: text.to_string() };
        let (kind, arg) = f.split_once(':').ok_or_else(bad)?;
        let num = || arg.parse::<usize>().map_err(|_| bad());
        return Ok(Operand::Func(match kind {
            "reaction" => FuncRef::Reaction(arg.to_string()),
            "pre_conn" => FuncRef::PreConn(num()?),
            "post_conn" => FuncRef::PostConn(num()?),
            _ => return Err(bad()),
        }));
    }
    if let Ok(v) = text.parse::<i64>() {
        return Ok(Operand::Imm(v));
    }
    let ident = text.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && text.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
    if ident {
        Ok(Operand::Label(text.to_string()))
    } else {
        Err(AsmError::Operand { line, text: text.to_string() })
    }
}

/// Parses the text form back into bytecode for `worker`.
pub fn assemble(text: &str, worker: usize) -> Result<WorkerBytecode, AsmError> {
    let mut instructions = Vec::new();
    let mut labels = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let src = raw.split('#').next().unwrap_or("").trim();
        if src.is_empty() {
            continue;
        }
        if let Some(name) = src.strip_suffix(':') {
            if labels.insert(name.to_string(), instructions.len()).is_some() {
                return Err(AsmError::DuplicateLabel { line, label: name.to_string() });
            }
            continue;
        }
        let (mnemonic, rest) = src.split_once(char::is_whitespace).unwrap_or((src, ""));
        let op: Opcode = mnemonic.parse().map_err(|source| AsmError::Opcode { line, source })?;
        let operands = rest
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| operand(line, s))
            .collect::<Result<Vec<_>, _>>()?;
        let x = Instruction::new(op, operands);
        x.check().map_err(|source| AsmError::Instr { line, source })?;
        instructions.push(x);
    }
    for x in &instructions {
        for o in &x.operands {
            if let Some(l) = o.label() {
                if !labels.contains_key(l) {
                    return Err(AsmError::UndefinedLabel(l.to_string()));
                }
            }
        }
    }
    Ok(WorkerBytecode { worker, instructions, labels })
}
