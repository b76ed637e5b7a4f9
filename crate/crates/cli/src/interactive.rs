use std::io::{BufRead, Write};

use census_core::lca::{Decision, ReviewOutcome, ReviewRequest};
use census_core::matchers::{ChannelError, ReviewChannel};

/// Human reviews typed on a terminal: `s`, `d` or `i` per request. End of
/// input suspends the run.
pub struct PromptChannel<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> PromptChannel<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self { input, output }
    }
}

fn parse_answer(line: &str) -> Option<Decision> {
    match line.trim().to_ascii_lowercase().as_str() {
        "s" | "same" => Some(Decision::Same),
        "d" | "different" => Some(Decision::Different),
        "i" | "incomparable" => Some(Decision::Incomparable),
        _ => None,
    }
}

impl<R: BufRead, W: Write> ReviewChannel for PromptChannel<R, W> {
    fn review(&mut self, request: &ReviewRequest) -> Result<ReviewOutcome, ChannelError> {
        loop {
            let _ = write!(
                self.output,
                "review #{}: {} vs {} [s]ame/[d]ifferent/[i]ncomparable? ",
                request.request_id, request.pair.0, request.pair.1
            );
            let _ = self.output.flush();
            let mut line = String::new();
            match self.input.read_line(&mut line) {
                Ok(0) | Err(_) => return Err(ChannelError::Closed),
                Ok(_) => {}
            }
            match parse_answer(&line) {
                Some(d) => return Ok(ReviewOutcome::human(d)),
                None => {
                    let _ = writeln!(self.output, "please answer s, d or i");
                }
            }
        }
    }
}
