//! Reactor program data model, text format and structural validation.

mod parse;
mod print;
mod program;
mod time;
mod validate;

pub use parse::{parse_program, ParseError};
pub use print::print_program;
pub use program::*;
pub use time::{DurationParseError, Tag, TimeValue};
pub use validate::{find_cycle, precedence_graph, reaction_ranks, validate};
