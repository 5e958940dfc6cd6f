use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Opcode {
    ADD,
    ADDI,
    ADV,
    ADVI,
    BEQ,
    BGE,
    BLT,
    BNE,
    DU,
    EXE,
    JAL,
    JALR,
    STP,
    WLT,
    WU,
}

impl Opcode {
    pub const ALL: [Opcode; 15] = [
        Opcode::ADD,
        Opcode::ADDI,
        Opcode::ADV,
        Opcode::ADVI,
        Opcode::BEQ,
        Opcode::BGE,
        Opcode::BLT,
        Opcode::BNE,
        Opcode::DU,
        Opcode::EXE,
        Opcode::JAL,
        Opcode::JALR,
        Opcode::STP,
        Opcode::WLT,
        Opcode::WU,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Opcode::ADD => "ADD",
            Opcode::ADDI => "ADDI",
            Opcode::ADV => "ADV",
            Opcode::ADVI => "ADVI",
            Opcode::BEQ => "BEQ",
            Opcode::BGE => "BGE",
            Opcode::BLT => "BLT",
            Opcode::BNE => "BNE",
            Opcode::DU => "DU",
            Opcode::EXE => "EXE",
            Opcode::JAL => "JAL",
            Opcode::JALR => "JALR",
            Opcode::STP => "STP",
            Opcode::WLT => "WLT",
            Opcode::WU => "WU",
        }
    }

    /// Expected operand kinds.
    pub fn signature(self) -> &'static [Kind] {
        use Kind::*;
        match self {
            Opcode::ADD => &[Reg, Reg, Reg],
            Opcode::ADDI => &[Reg, Reg, Imm],
            Opcode::ADV => &[Reg, Reg, Reg],
            Opcode::ADVI => &[Reg, Reg, Imm],
            Opcode::BEQ | Opcode::BGE | Opcode::BLT | Opcode::BNE => &[Reg, Reg, Label],
            Opcode::DU => &[Reg, Imm],
            Opcode::EXE => &[Func, Imm],
            Opcode::JAL => &[Reg, Label],
            Opcode::JALR => &[Reg, Reg, Imm],
            Opcode::STP => &[],
            Opcode::WLT | Opcode::WU => &[Reg, Imm],
        }
    }

    /// Whether the first operand is a register the instruction writes.
    pub fn writes_first(self) -> bool {
        matches!(
            self,
            Opcode::ADD | Opcode::ADDI | Opcode::ADV | Opcode::ADVI | Opcode::JAL | Opcode::JALR
        )
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown opcode `{0}`")]
pub struct UnknownOpcode(pub String);

impl FromStr for Opcode {
    type Err = UnknownOpcode;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Opcode::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| UnknownOpcode(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Reg,
    Imm,
    Label,
    Func,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Reg {
    /// Always reads 0.
    Zero,
    /// Always reads 1; the comparand for presence tests.
    One,
    StartTime,
    Timeout,
    TimeOffset,
    OffsetInc,
    Counter(usize),
    ReturnAddr(usize),
    BinarySema(usize),
    /// Current logical time of a reactor.
    Tag(String),
    /// Presence flag of an output port `Reactor.port`.
    Present(String),
    Value(String),
    /// Tag time of the oldest event in a connection buffer, -1 when empty.
    BufHead(usize),
}

impl Reg {
    pub fn is_read_only(&self) -> bool {
        matches!(self, Reg::Zero | Reg::One | Reg::BufHead(_))
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reg::Zero => write!(f, "$zero"),
            Reg::One => write!(f, "$one"),
            Reg::StartTime => write!(f, "$start_time"),
            Reg::Timeout => write!(f, "$timeout"),
            Reg::TimeOffset => write!(f, "$time_offset"),
            Reg::OffsetInc => write!(f, "$offset_inc"),
            Reg::Counter(w) => write!(f, "$counter[{w}]"),
            Reg::ReturnAddr(w) => write!(f, "$return_addr[{w}]"),
            Reg::BinarySema(w) => write!(f, "$binary_sema[{w}]"),
            Reg::Tag(r) => write!(f, "$tag[{r}]"),
            Reg::Present(p) => write!(f, "$present[{p}]"),
            Reg::Value(p) => write!(f, "$value[{p}]"),
            Reg::BufHead(c) => write!(f, "$buf_head[{c}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed register `{0}`")]
pub struct BadRegister(pub String);

impl FromStr for Reg {
    type Err = BadRegister;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BadRegister(s.to_string());
        let body = s.strip_prefix('$').ok_or_else(bad)?;
        let simple = match body {
            "zero" => Some(Reg::Zero),
            "one" => Some(Reg::One),
            "start_time" => Some(Reg::StartTime),
            "timeout" => Some(Reg::Timeout),
            "time_offset" => Some(Reg::TimeOffset),
            "offset_inc" => Some(Reg::OffsetInc),
            _ => None,
        };
        if let Some(r) = simple {
            return Ok(r);
        }
        let (name, rest) = body.split_once('[').ok_or_else(bad)?;
        let arg = rest.strip_suffix(']').ok_or_else(bad)?;
        let num = || arg.parse::<usize>().map_err(|_| bad());
        Ok(match name {
            "counter" => Reg::Counter(num()?),
            "return_addr" => Reg::ReturnAddr(num()?),
            "binary_sema" => Reg::BinarySema(num()?),
            "buf_head" => Reg::BufHead(num()?),
            "tag" => Reg::Tag(arg.to_string()),
            "present" => Reg::Present(arg.to_string()),
            "value" => Reg::Value(arg.to_string()),
            _ => return Err(bad()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FuncRef {
    /// A reaction body, by `Reactor.priority` name.
    Reaction(String),
    /// Pushes the sender's current output into a connection buffer.
    PreConn(usize),
    /// Pops the buffer head / clears a consumed zero-delay presence flag.
    PostConn(usize),
}

impl fmt::Display for FuncRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FuncRef::Reaction(n) => write!(f, "@reaction:{n}"),
            FuncRef::PreConn(c) => write!(f, "@pre_conn:{c}"),
            FuncRef::PostConn(c) => write!(f, "@post_conn:{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operand {
    Reg(Reg),
    Imm(i64),
    Label(String),
    Func(FuncRef),
}

impl Operand {
    pub fn kind(&self) -> Kind {
        match self {
            Operand::Reg(_) => Kind::Reg,
            Operand::Imm(_) => Kind::Imm,
            Operand::Label(_) => Kind::Label,
            Operand::Func(_) => Kind::Func,
        }
    }

    pub fn reg(&self) -> Option<&Reg> {
        match self {
            Operand::Reg(r) => Some(r),
            _ => None,
        }
    }

    pub fn imm(&self) -> Option<i64> {
        match self {
            Operand::Imm(v) => Some(*v),
            _ => None,
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            Operand::Label(l) => Some(l),
            _ => None,
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(v) => write!(f, "{v}"),
            Operand::Label(l) => write!(f, "{l}"),
            Operand::Func(func) => write!(f, "{func}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub op: Opcode,
    pub operands: Vec<Operand>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InstrError {
    #[error("{op} expects {expected} operands, got {got}")]
    Arity { op: Opcode, expected: usize, got: usize },
    #[error("{op} operand {pos} has the wrong kind")]
    Kind { op: Opcode, pos: usize },
    #[error("{op} writes read-only register {reg}")]
    ReadOnly { op: Opcode, reg: Reg },
}

impl Instruction {
    pub fn new(op: Opcode, operands: Vec<Operand>) -> Self {
        Instruction { op, operands }
    }

    /// Checks operand arity and kinds against the opcode signature and
    /// rejects writes to constant registers (a JAL/JALR link into `$zero`
    /// means "discard the return address" and is allowed).
    pub fn check(&self) -> Result<(), InstrError> {
        let sig = self.op.signature();
        if sig.len() != self.operands.len() {
            return Err(InstrError::Arity {
                op: self.op,
                expected: sig.len(),
                got: self.operands.len(),
            });
        }
        for (pos, (k, o)) in sig.iter().zip(&self.operands).enumerate() {
            if *k != o.kind() {
                return Err(InstrError::Kind { op: self.op, pos });
            }
        }
        if self.op.writes_first() {
            let rd = self.operands[0].reg().expect("checked kind");
            let link = matches!(self.op, Opcode::JAL | Opcode::JALR) && *rd == Reg::Zero;
            if rd.is_read_only() && !link {
                return Err(InstrError::ReadOnly { op: self.op, reg: rd.clone() });
            }
        }
        Ok(())
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.op)?;
        for (i, o) in self.operands.iter().enumerate() {
            write!(f, "{}{o}", if i == 0 { " " } else { ", " })?;
        }
        Ok(())
    }
}

/// Shorthand constructors used by the generator and tests.
pub mod build {
    use super::*;

    pub fn r(reg: Reg) -> Operand {
        Operand::Reg(reg)
    }

    pub fn i(v: i64) -> Operand {
        Operand::Imm(v)
    }

    pub fn l(label: impl Into<String>) -> Operand {
        Operand::Label(label.into())
    }

    pub fn ins(op: Opcode, operands: Vec<Operand>) -> Instruction {
        Instruction::new(op, operands)
    }
}
