//! Text form of a pulse sequence.
//!
//! ```text
//! sequence := [ event* ";" ] block
//! block    := "[" event* "]" "*" INT
//! event    := ANGLE "(" PHASE ")" | "d(" TIME ")" | "echo(" PHASE ")"
//! ```
//!
//! Angles are degrees. Times take a unit suffix `s`, `ms`/`m`, `us`/`u` or
//! `ns`/`n`. Phases are `X`, `-X`, `Y`, `-Y` (optionally `+`-prefixed) or a
//! number of degrees. Whitespace is free and `#` starts a comment. Prologue
//! pulses are instantaneous; pulses in the block follow the pulse model.

use std::fmt::Write;

use super::{PulseWidth, Sequence, SequenceEvent};
use crate::error::{Error, Result};
use crate::spinops::SpinAxis;

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error<T>(&self, at: usize, message: impl Into<String>) -> Result<T> {
        let before = &self.src[..at];
        let line = before.matches('\n').count() + 1;
        let column = before.rfind('\n').map_or(at, |nl| at - nl - 1) + 1;
        Err(Error::Syntax {
            line,
            column,
            offset: at,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        loop {
            let rest = &self.src[self.pos..];
            let trimmed = rest.trim_start();
            self.pos += rest.len() - trimmed.len();
            if trimmed.starts_with('#') {
                self.pos += trimmed.find('\n').unwrap_or(trimmed.len());
            } else {
                break;
            }
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            let found = self.peek().map_or("end of input".to_string(), |f| format!("'{f}'"));
            self.error(self.pos, format!("expected '{c}', found {found}"))
        }
    }

    fn eat_keyword(&mut self, word: &str) -> bool {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        if rest.len() >= word.len() && rest[..word.len()].eq_ignore_ascii_case(word) {
            let after = rest[word.len()..].trim_start();
            if after.starts_with('(') {
                self.pos += word.len();
                return true;
            }
        }
        false
    }

    /// Decimal literal: optional sign, digits, fraction, exponent.
    fn number_text(&mut self) -> Option<(usize, &'a str)> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut i = self.pos;
        if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
            i += 1;
        }
        let digits_start = i;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        if i == digits_start {
            return None;
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            let exp_start = j;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j > exp_start {
                i = j;
            }
        }
        self.pos = i;
        Some((start, &self.src[start..i]))
    }

    fn number(&mut self, what: &str) -> Result<f64> {
        let at = self.pos;
        match self.number_text() {
            Some((start, text)) => match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => self.error(start, format!("invalid {what} '{text}'")),
            },
            None => self.error(at.max(self.pos), format!("expected {what}")),
        }
    }

    fn phase(&mut self) -> Result<SpinAxis> {
        self.skip_ws();
        let at = self.pos;
        let rest = &self.src[self.pos..];
        let (sign, skip) = match rest.chars().next() {
            Some('+') => (1, 1),
            Some('-') => (-1, 1),
            _ => (1, 0),
        };
        let after = rest[skip..].trim_start();
        let letter = after.chars().next().map(|c| c.to_ascii_uppercase());
        if let Some(l @ ('X' | 'Y')) = letter {
            self.pos += rest.len() - after.len() + 1;
            return Ok(match (l, sign) {
                ('X', 1) => SpinAxis::PlusX,
                ('X', _) => SpinAxis::MinusX,
                ('Y', 1) => SpinAxis::PlusY,
                _ => SpinAxis::MinusY,
            });
        }
        match self.number_text() {
            Some((start, text)) => match text.parse::<f64>() {
                Ok(deg) if deg.is_finite() => Ok(SpinAxis::from_phase(deg.to_radians())),
                _ => self.error(start, format!("invalid phase '{text}'")),
            },
            None => self.error(at, "expected phase (X, -X, Y, -Y or degrees)"),
        }
    }

    fn time(&mut self) -> Result<f64> {
        self.skip_ws();
        let at = self.pos;
        let (_, text) = match self.number_text() {
            Some(t) => t,
            None => return self.error(at, "expected time"),
        };
        let rest = &self.src[self.pos..];
        let units: [(&str, i32); 8] = [
            ("ms", -3),
            ("us", -6),
            ("µs", -6),
            ("ns", -9),
            ("s", 0),
            ("m", -3),
            ("u", -6),
            ("n", -9),
        ];
        for (suffix, exp) in units {
            if rest.starts_with(suffix) {
                self.pos += suffix.len();
                return scaled_decimal(text, exp)
                    .filter(|v| *v >= 0.0)
                    .map_or_else(|| self.error(at, format!("invalid time '{text}'")), Ok);
            }
        }
        self.error(self.pos, "expected time unit (s, ms, us, ns)")
    }

    fn event(&mut self, width: PulseWidth) -> Result<SequenceEvent> {
        if self.eat_keyword("echo") {
            self.expect('(')?;
            let phase = self.phase()?;
            self.expect(')')?;
            return Ok(SequenceEvent::echo(phase));
        }
        if self.eat_keyword("d") {
            self.expect('(')?;
            let tau = self.time()?;
            self.expect(')')?;
            return Ok(SequenceEvent::delay(tau));
        }
        let at = self.pos;
        let degrees = self.number("pulse angle or event")?;
        if !(degrees > 0.0) {
            return self.error(at, "pulse angle must be positive");
        }
        self.expect('(')?;
        let phase = self.phase()?;
        self.expect(')')?;
        Ok(SequenceEvent::Pulse {
            angle: degrees.to_radians(),
            phase,
            width,
        })
    }

    fn events_until(&mut self, stop: &[char], width: PulseWidth) -> Result<Vec<SequenceEvent>> {
        let mut events = Vec::new();
        loop {
            match self.peek() {
                Some(c) if stop.contains(&c) => return Ok(events),
                None => return Ok(events),
                _ => events.push(self.event(width)?),
            }
        }
    }

    fn sequence(&mut self) -> Result<Sequence> {
        let lead = self.pos;
        let prologue = self.events_until(&[';', '['], PulseWidth::Delta)?;
        if !self.eat(';') && !prologue.is_empty() {
            return self.error(lead, "prologue must end with ';'");
        }
        self.expect('[')?;
        let cycle = self.events_until(&[']'], PulseWidth::Finite)?;
        self.expect(']')?;
        self.expect('*')?;
        self.skip_ws();
        let at = self.pos;
        let digits: String = self.src[self.pos..].chars().take_while(|c| c.is_ascii_digit()).collect();
        if digits.is_empty() {
            return self.error(at, "expected repeat count");
        }
        self.pos += digits.len();
        let repeats: usize = match digits.parse() {
            Ok(r) => r,
            Err(_) => return self.error(at, "repeat count out of range"),
        };
        if let Some(c) = self.peek() {
            return self.error(self.pos, format!("unexpected '{c}' after repeat count"));
        }
        Sequence::new(prologue, cycle, repeats).or_else(|e| self.error(at, e.to_string()))
    }
}

/// `text × 10^exp` rounded once from the decimal representation.
fn scaled_decimal(text: &str, exp: i32) -> Option<f64> {
    let (mantissa, e) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    format!("{mantissa}e{}", e + exp).parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn parse_sequence(text: &str) -> Result<Sequence> {
    Parser { src: text, pos: 0 }.sequence()
}

/// Shortest decimal `s` near `approx` with `decode(s) == target`.
fn shortest_decimal(approx: f64, target: f64, decode: impl Fn(&str) -> Option<f64>) -> Option<String> {
    let mut candidates = vec![approx];
    let (mut up, mut down) = (approx, approx);
    for _ in 0..4 {
        up = up.next_up();
        down = down.next_down();
        candidates.push(up);
        candidates.push(down);
    }
    candidates
        .into_iter()
        .map(|c| format!("{c}"))
        .filter(|s| decode(s) == Some(target))
        .min_by_key(|s| s.len())
}

fn render_degrees(radians: f64) -> String {
    shortest_decimal(radians.to_degrees(), radians, |s| {
        s.parse::<f64>().ok().map(f64::to_radians)
    })
    .unwrap_or_else(|| format!("{}", radians.to_degrees()))
}

fn render_phase(axis: SpinAxis, signed: bool) -> String {
    let plus = if signed { "+" } else { "" };
    match axis {
        SpinAxis::PlusX => format!("{plus}X"),
        SpinAxis::MinusX => "-X".into(),
        SpinAxis::PlusY => format!("{plus}Y"),
        SpinAxis::MinusY => "-Y".into(),
        SpinAxis::Phase(phi) => render_degrees(phi),
        SpinAxis::Z => "Z".into(),
    }
}

fn render_time(seconds: f64) -> String {
    let units = [("u", -6), ("m", -3), ("n", -9), ("s", 0)];
    let preferred = units.iter().position(|&(_, e)| {
        let scaled = seconds / 10f64.powi(e);
        (1.0..1000.0).contains(&scaled.abs())
    });
    let order = preferred.into_iter().chain(0..units.len());
    for idx in order {
        let (suffix, exp) = units[idx];
        let approx = seconds / 10f64.powi(exp);
        if let Some(s) = shortest_decimal(approx, seconds, |s| scaled_decimal(s, exp)) {
            return format!("{s}{suffix}");
        }
    }
    format!("{seconds:e}s")
}

fn render_event(out: &mut String, event: &SequenceEvent) {
    match *event {
        SequenceEvent::Pulse { angle, phase, .. } => {
            let _ = write!(out, "{}({})", render_degrees(angle), render_phase(phase, false));
        }
        SequenceEvent::Delay { tau } => {
            let _ = write!(out, "d({})", render_time(tau));
        }
        SequenceEvent::Echo { expected_phase } => {
            let _ = write!(out, "echo({})", render_phase(expected_phase, true));
        }
    }
}

/// Canonical text form; `parse_sequence` reads it back unchanged.
pub fn render_sequence(seq: &Sequence) -> String {
    let mut out = String::new();
    if !seq.prologue.is_empty() {
        for e in &seq.prologue {
            render_event(&mut out, e);
            out.push(' ');
        }
        out.push_str("; ");
    }
    out.push('[');
    for e in &seq.cycle {
        out.push(' ');
        render_event(&mut out, e);
    }
    let _ = write!(out, " ]*{}", seq.repeats);
    out
}
