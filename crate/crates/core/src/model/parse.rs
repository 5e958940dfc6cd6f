//! Line-oriented program text format.
//!
//! ```text
//! reactor Sensor {
//!   timer t offset 0 period 10ms;
//!   output out;
//!   reaction 1 triggers(t) effects(out) wcet 1ms body { busy_spin 500us; emit out 1; }
//! }
//! connection Sensor.out -> Sink.in after 5ms;
//! timeout 1s;
//! ```
//!
//! `#` starts a comment that runs to the end of the line.

use std::collections::HashSet;

use super::program::*;
use super::time::TimeValue;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: unknown {what} `{name}`")]
    Unknown {
        line: usize,
        col: usize,
        what: &'static str,
        name: String,
    },
    #[error("{line}:{col}: duplicate priority {priority} in reactor `{reactor}`")]
    DuplicatePriority {
        line: usize,
        col: usize,
        reactor: String,
        priority: u32,
    },
    #[error("{line}:{col}: direction error: {msg}")]
    Direction { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: duplicate name `{name}`")]
    Duplicate { line: usize, col: usize, name: String },
    #[error("no reactors")]
    NoReactors,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Sym(char),
    Arrow,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    for (li, raw) in text.lines().enumerate() {
        let line = li + 1;
        let src = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let chars: Vec<char> = src.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            if c.is_whitespace() {
                i += 1;
            } else if c == '-' && chars.get(i + 1) == Some(&'>') {
                out.push(Token { tok: Tok::Arrow, line, col });
                i += 2;
            } else if c.is_alphanumeric() || c == '_' || c == '-' {
                let start = i;
                i += 1;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                out.push(Token { tok: Tok::Word(word), line, col });
            } else if "{}();,.".contains(c) {
                out.push(Token { tok: Tok::Sym(c), line, col });
                i += 1;
            } else {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    msg: format!("unexpected character `{c}`"),
                });
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

/// A reaction as written, before trigger/effect names are resolved.
struct RawReaction {
    line: usize,
    col: usize,
    priority: u32,
    triggers: Vec<(String, usize, usize)>,
    effects: Vec<(String, usize, usize)>,
    wcet: TimeValue,
    body: Vec<RawBodyOp>,
}

enum RawBodyOp {
    Spin(TimeValue),
    Emit(String, i64, usize, usize),
    Noop,
}

impl Parser {
    fn eof_pos(&self) -> (usize, usize) {
        self.toks
            .last()
            .map(|t| (t.line, t.col + 1))
            .unwrap_or((1, 1))
    }

    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn pos(&self) -> (usize, usize) {
        self.peek().map(|t| (t.line, t.col)).unwrap_or_else(|| self.eof_pos())
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let (line, col) = self.pos();
        Err(ParseError::Syntax { line, col, msg: msg.into() })
    }

    fn word(&mut self) -> Result<(String, usize, usize), ParseError> {
        match self.peek().cloned() {
            Some(Token { tok: Tok::Word(w), line, col }) => {
                self.pos += 1;
                Ok((w, line, col))
            }
            Some(t) => self.syntax(format!("expected a name, found {:?}", t.tok)),
            None => self.syntax("unexpected end of input"),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(Token { tok: Tok::Word(w), .. }) if w == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => self.syntax(format!("expected `{kw}`")),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Word(w), .. }) if w == kw)
    }

    fn at_sym(&self, c: char) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Sym(s), .. }) if *s == c)
    }

    fn sym(&mut self, c: char) -> Result<(), ParseError> {
        if self.at_sym(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.syntax(format!("expected `{c}`"))
        }
    }

    fn duration(&mut self) -> Result<TimeValue, ParseError> {
        let (w, line, col) = self.word()?;
        w.parse::<TimeValue>().map_err(|e| ParseError::Syntax {
            line,
            col,
            msg: e.to_string(),
        })
    }

    fn integer<T: std::str::FromStr>(&mut self) -> Result<T, ParseError> {
        let (w, line, col) = self.word()?;
        w.parse::<T>().map_err(|_| ParseError::Syntax {
            line,
            col,
            msg: format!("expected an integer, found `{w}`"),
        })
    }

    fn name_list(&mut self) -> Result<Vec<(String, usize, usize)>, ParseError> {
        self.sym('(')?;
        let mut names = Vec::new();
        while !self.at_sym(')') {
            names.push(self.word()?);
            if self.at_sym(',') {
                self.pos += 1;
            }
        }
        self.sym(')')?;
        Ok(names)
    }

    fn reaction(&mut self) -> Result<RawReaction, ParseError> {
        let (line, col) = self.pos();
        self.keyword("reaction")?;
        let priority: u32 = self.integer()?;
        if priority == 0 {
            return Err(ParseError::Syntax { line, col, msg: "priorities start at 1".into() });
        }
        self.keyword("triggers")?;
        let triggers = self.name_list()?;
        let effects = if self.at_keyword("effects") {
            self.pos += 1;
            self.name_list()?
        } else {
            Vec::new()
        };
        if !self.at_keyword("wcet") {
            return self.syntax("missing `wcet` annotation");
        }
        self.pos += 1;
        let wcet = self.duration()?;
        let mut body = Vec::new();
        if self.at_keyword("body") {
            self.pos += 1;
            self.sym('{')?;
            while !self.at_sym('}') {
                let (op, l, c) = self.word()?;
                match op.as_str() {
                    "busy_spin" => body.push(RawBodyOp::Spin(self.duration()?)),
                    "emit" => {
                        let (p, pl, pc) = self.word()?;
                        let v: i64 = self.integer()?;
                        body.push(RawBodyOp::Emit(p, v, pl, pc));
                    }
                    "noop" => body.push(RawBodyOp::Noop),
                    _ => {
                        return Err(ParseError::Syntax {
                            line: l,
                            col: c,
                            msg: format!("unknown body operation `{op}`"),
                        })
                    }
                }
                self.sym(';')?;
            }
            self.sym('}')?;
        }
        if self.at_sym(';') {
            self.pos += 1;
        }
        Ok(RawReaction { line, col, priority, triggers, effects, wcet, body })
    }

    fn reactor(&mut self) -> Result<ReactorDef, ParseError> {
        self.keyword("reactor")?;
        let (name, ..) = self.word()?;
        self.sym('{')?;
        let mut reactor = ReactorDef {
            name,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timers: Vec::new(),
            reactions: Vec::new(),
        };
        let mut raw = Vec::new();
        let mut names: HashSet<String> = HashSet::new();
        let mut declare = |n: &str, line, col| {
            if matches!(n, "startup" | "shutdown") || !names.insert(n.to_string()) {
                Err(ParseError::Duplicate { line, col, name: n.to_string() })
            } else {
                Ok(())
            }
        };
        while !self.at_sym('}') {
            let (line, col) = self.pos();
            if self.at_keyword("timer") {
                self.pos += 1;
                let (n, l, c) = self.word()?;
                declare(&n, l, c)?;
                self.keyword("offset")?;
                let offset = self.duration()?;
                self.keyword("period")?;
                let period = self.duration()?;
                self.sym(';')?;
                reactor.timers.push(TimerDef { name: n, offset, period });
            } else if self.at_keyword("input") || self.at_keyword("output") {
                let is_input = self.at_keyword("input");
                self.pos += 1;
                let (n, l, c) = self.word()?;
                declare(&n, l, c)?;
                self.sym(';')?;
                if is_input {
                    reactor.inputs.push(n);
                } else {
                    reactor.outputs.push(n);
                }
            } else if self.at_keyword("reaction") {
                raw.push(self.reaction()?);
            } else {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    msg: "expected `timer`, `input`, `output` or `reaction`".into(),
                });
            }
        }
        self.sym('}')?;

        let mut seen = HashSet::new();
        for r in raw {
            if !seen.insert(r.priority) {
                return Err(ParseError::DuplicatePriority {
                    line: r.line,
                    col: r.col,
                    reactor: reactor.name.clone(),
                    priority: r.priority,
                });
            }
            let mut triggers = Vec::new();
            for (t, line, col) in &r.triggers {
                let trig = match t.as_str() {
                    "startup" => TriggerRef::Startup,
                    "shutdown" => TriggerRef::Shutdown,
                    _ => {
                        if let Some(i) = reactor.timers.iter().position(|x| &x.name == t) {
                            TriggerRef::Timer(i)
                        } else if let Some(i) = reactor.inputs.iter().position(|x| x == t) {
                            TriggerRef::Input(i)
                        } else if reactor.outputs.contains(t) {
                            return Err(ParseError::Direction {
                                line: *line,
                                col: *col,
                                msg: format!("output `{t}` cannot trigger a reaction"),
                            });
                        } else {
                            return Err(ParseError::Unknown {
                                line: *line,
                                col: *col,
                                what: "trigger",
                                name: t.clone(),
                            });
                        }
                    }
                };
                triggers.push(trig);
            }
            let resolve_output = |p: &str, line: usize, col: usize| {
                if let Some(i) = reactor.outputs.iter().position(|x| x == p) {
                    Ok(i)
                } else if reactor.inputs.iter().any(|x| x == p) {
                    Err(ParseError::Direction {
                        line,
                        col,
                        msg: format!("input `{p}` cannot be written by a reaction"),
                    })
                } else {
                    Err(ParseError::Unknown { line, col, what: "output port", name: p.into() })
                }
            };
            let mut effects = Vec::new();
            for (e, line, col) in &r.effects {
                effects.push(resolve_output(e, *line, *col)?);
            }
            let mut body = Vec::new();
            for op in r.body {
                body.push(match op {
                    RawBodyOp::Spin(d) => BodyOp::BusySpin(d),
                    RawBodyOp::Noop => BodyOp::Noop,
                    RawBodyOp::Emit(p, value, line, col) => {
                        let port = resolve_output(&p, line, col)?;
                        if !effects.contains(&port) {
                            return Err(ParseError::Syntax {
                                line,
                                col,
                                msg: format!("`emit {p}` requires `{p}` in effects"),
                            });
                        }
                        BodyOp::Emit { port, value }
                    }
                });
            }
            reactor.reactions.push(ReactionDef {
                priority: r.priority,
                triggers,
                effects,
                wcet: r.wcet,
                body,
            });
        }
        Ok(reactor)
    }

    fn port_ref(
        &mut self,
        reactors: &[ReactorDef],
    ) -> Result<(ReactorIdx, String, usize, usize), ParseError> {
        let (rname, line, col) = self.word()?;
        self.sym('.')?;
        let (pname, ..) = self.word()?;
        let ri = reactors.iter().position(|r| r.name == rname).ok_or(ParseError::Unknown {
            line,
            col,
            what: "reactor",
            name: rname,
        })?;
        Ok((ri, pname, line, col))
    }

    fn connection(&mut self, reactors: &[ReactorDef]) -> Result<ConnectionDef, ParseError> {
        self.keyword("connection")?;
        let (fr, fp, fl, fc) = self.port_ref(reactors)?;
        match self.peek() {
            Some(Token { tok: Tok::Arrow, .. }) => self.pos += 1,
            _ => return self.syntax("expected `->`"),
        }
        let (tr, tp, tl, tc) = self.port_ref(reactors)?;
        let delay = if self.at_keyword("after") {
            self.pos += 1;
            Some(self.duration()?)
        } else {
            None
        };
        self.sym(';')?;

        let src = &reactors[fr];
        let from = match src.outputs.iter().position(|p| *p == fp) {
            Some(port) => PortRef { reactor: fr, port },
            None if src.inputs.contains(&fp) => {
                return Err(ParseError::Direction {
                    line: fl,
                    col: fc,
                    msg: format!("connection source `{}.{fp}` is an input", src.name),
                })
            }
            None => {
                return Err(ParseError::Unknown {
                    line: fl,
                    col: fc,
                    what: "port",
                    name: format!("{}.{fp}", src.name),
                })
            }
        };
        let dst = &reactors[tr];
        let to = match dst.inputs.iter().position(|p| *p == tp) {
            Some(port) => PortRef { reactor: tr, port },
            None if dst.outputs.contains(&tp) => {
                return Err(ParseError::Direction {
                    line: tl,
                    col: tc,
                    msg: format!("connection destination `{}.{tp}` is an output", dst.name),
                })
            }
            None => {
                return Err(ParseError::Unknown {
                    line: tl,
                    col: tc,
                    what: "port",
                    name: format!("{}.{tp}", dst.name),
                })
            }
        };
        Ok(ConnectionDef { from, to, delay })
    }
}

/// Parses program text into a [`ProgramDef`]. Name resolution, port
/// directions and per-reactor priority uniqueness are checked here; the
/// remaining invariants are reported by [`crate::model::validate`].
pub fn parse_program(text: &str) -> Result<ProgramDef, ParseError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let mut reactors: Vec<ReactorDef> = Vec::new();
    let mut connections = Vec::new();
    let mut timeout = None;
    while p.peek().is_some() {
        if p.at_keyword("reactor") {
            let (line, col) = p.pos();
            let r = p.reactor()?;
            if reactors.iter().any(|x| x.name == r.name) {
                return Err(ParseError::Duplicate { line, col, name: r.name });
            }
            reactors.push(r);
        } else if p.at_keyword("connection") {
            connections.push(p.connection(&reactors)?);
        } else if p.at_keyword("timeout") {
            p.pos += 1;
            if timeout.is_some() {
                return p.syntax("timeout given twice");
            }
            timeout = Some(p.duration()?);
            p.sym(';')?;
        } else {
            return p.syntax("expected `reactor`, `connection` or `timeout`");
        }
    }
    if reactors.is_empty() {
        return Err(ParseError::NoReactors);
    }
    Ok(ProgramDef { reactors, connections, timeout })
}
