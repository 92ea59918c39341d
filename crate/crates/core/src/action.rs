//! Action grammar: parsing model output, canonical rendering, and validation
//! against the current screen.
//!
//! ```text
//! click [N]            longclick [N]          text [N] [S]        swipe [N] [D]
//! click [X,Y]          longclick [X,Y]        text [X,Y] [S]      swipe [X1,Y1] [X2,Y2]
//! press [K]    K in back | home | restart | wait | enter | stop
//! ```
//!
//! Verbs, keys and directions are case-insensitive. The text payload runs up
//! to the last `]` on the line, so it may itself contain brackets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::UIScreen;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s))
    }

    /// Dominant direction of finger travel from `from` to `to`; `None` when
    /// the motion is zero or exactly diagonal.
    pub fn of_motion(from: Point, to: Point) -> Option<Self> {
        let dx = i64::from(to.x) - i64::from(from.x);
        let dy = i64::from(to.y) - i64::from(from.y);
        if dx.abs() == dy.abs() {
            return None;
        }
        Some(if dx.abs() > dy.abs() {
            if dx > 0 {
                Direction::Right
            } else {
                Direction::Left
            }
        } else if dy > 0 {
            Direction::Down
        } else {
            Direction::Up
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Key {
    Back,
    Home,
    Restart,
    Wait,
    Enter,
    Stop,
}

impl Key {
    pub const ALL: [Key; 6] = [
        Key::Back,
        Key::Home,
        Key::Restart,
        Key::Wait,
        Key::Enter,
        Key::Stop,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Key::Back => "back",
            Key::Home => "home",
            Key::Restart => "restart",
            Key::Wait => "wait",
            Key::Enter => "enter",
            Key::Stop => "stop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Click,
    #[serde(rename = "longclick")]
    LongClick,
    Text,
    Swipe,
    Press,
}

impl Verb {
    pub const ALL: [Verb; 5] = [
        Verb::Click,
        Verb::LongClick,
        Verb::Text,
        Verb::Swipe,
        Verb::Press,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Verb::Click => "click",
            Verb::LongClick => "longclick",
            Verb::Text => "text",
            Verb::Swipe => "swipe",
            Verb::Press => "press",
        }
    }

    pub fn parse(word: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(word))
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One agent action; each variant is a row of the action table.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    ClickElem(u32),
    LongClickElem(u32),
    TextElem(u32, String),
    SwipeElem(u32, Direction),
    ClickXY(Point),
    LongClickXY(Point),
    TextXY(Point, String),
    SwipeXYXY(Point, Point),
    Press(Key),
}

/// What an action is aimed at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Element(u32),
    Point(Point),
    None,
}

impl Action {
    pub fn verb(&self) -> Verb {
        match self {
            Action::ClickElem(_) | Action::ClickXY(_) => Verb::Click,
            Action::LongClickElem(_) | Action::LongClickXY(_) => Verb::LongClick,
            Action::TextElem(..) | Action::TextXY(..) => Verb::Text,
            Action::SwipeElem(..) | Action::SwipeXYXY(..) => Verb::Swipe,
            Action::Press(_) => Verb::Press,
        }
    }

    pub fn target(&self) -> Target {
        match self {
            Action::ClickElem(i)
            | Action::LongClickElem(i)
            | Action::TextElem(i, _)
            | Action::SwipeElem(i, _) => Target::Element(*i),
            Action::ClickXY(p) | Action::LongClickXY(p) | Action::TextXY(p, _) => Target::Point(*p),
            Action::SwipeXYXY(from, _) => Target::Point(*from),
            Action::Press(_) => Target::None,
        }
    }

    pub fn payload(&self) -> Option<&str> {
        match self {
            Action::TextElem(_, s) | Action::TextXY(_, s) => Some(s),
            _ => None,
        }
    }

    pub fn direction(&self) -> Option<Direction> {
        match self {
            Action::SwipeElem(_, d) => Some(*d),
            Action::SwipeXYXY(from, to) => Direction::of_motion(*from, *to),
            _ => None,
        }
    }

    pub fn key(&self) -> Option<Key> {
        match self {
            Action::Press(k) => Some(*k),
            _ => None,
        }
    }

    pub fn is_stop(&self) -> bool {
        matches!(self, Action::Press(Key::Stop))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_action(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatReason {
    UnknownVerb,
    Arity,
    BadIndexLiteral,
    BadCoordinate,
    BadDirection,
    BadKey,
    MultilineText,
}

impl FormatReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FormatReason::UnknownVerb => "unknown_verb",
            FormatReason::Arity => "arity",
            FormatReason::BadIndexLiteral => "bad_index_literal",
            FormatReason::BadCoordinate => "bad_coordinate",
            FormatReason::BadDirection => "bad_direction",
            FormatReason::BadKey => "bad_key",
            FormatReason::MultilineText => "multiline_text",
        }
    }
}

/// Model output that does not follow the action grammar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatFailure {
    pub raw: String,
    pub reason: FormatReason,
}

impl fmt::Display for FormatFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "malformed action ({}): {:?}", self.reason.as_str(), self.raw)
    }
}

impl std::error::Error for FormatFailure {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationFailure {
    IndexOutOfRange,
    NotEditable,
    CoordOutOfBounds,
}

impl ValidationFailure {
    pub fn as_str(&self) -> &'static str {
        match self {
            ValidationFailure::IndexOutOfRange => "index_out_of_range",
            ValidationFailure::NotEditable => "not_editable",
            ValidationFailure::CoordOutOfBounds => "coord_out_of_bounds",
        }
    }
}

impl fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::error::Error for ValidationFailure {}

// ---------------------------------------------------------------------------
// Parsing

fn is_inline_space(c: char) -> bool {
    c.is_whitespace() && c != '\n' && c != '\r'
}

struct Cursor<'a> {
    rest: &'a str,
}

impl<'a> Cursor<'a> {
    fn skip_space(&mut self) {
        self.rest = self.rest.trim_start_matches(is_inline_space);
    }

    /// A `[...]` group without nested brackets; returns the inner text.
    fn group(&mut self) -> Result<&'a str, FormatReason> {
        self.skip_space();
        let after = self.rest.strip_prefix('[').ok_or(FormatReason::Arity)?;
        let close = after.find(']').ok_or(FormatReason::Arity)?;
        let inner = &after[..close];
        if inner.contains('[') {
            return Err(FormatReason::Arity);
        }
        self.rest = &after[close + 1..];
        Ok(inner)
    }

    /// The free-text payload: from the next `[` to the last `]` on the line.
    fn payload(&mut self) -> Result<&'a str, FormatReason> {
        self.skip_space();
        let after = self.rest.strip_prefix('[').ok_or(FormatReason::Arity)?;
        let close = after.rfind(']').ok_or(FormatReason::Arity)?;
        let inner = &after[..close];
        if inner.contains(['\n', '\r']) {
            return Err(FormatReason::MultilineText);
        }
        self.rest = &after[close + 1..];
        Ok(inner)
    }

    fn end(&mut self) -> Result<(), FormatReason> {
        self.skip_space();
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(FormatReason::Arity)
        }
    }
}

fn parse_uint(s: &str) -> Option<u32> {
    let s = s.trim_matches(is_inline_space);
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn parse_point(s: &str) -> Result<Point, FormatReason> {
    let (x, y) = s.split_once(',').ok_or(FormatReason::BadCoordinate)?;
    match (parse_uint(x), parse_uint(y)) {
        (Some(x), Some(y)) => Ok(Point::new(x, y)),
        _ => Err(FormatReason::BadCoordinate),
    }
}

fn parse_target(s: &str) -> Result<Target, FormatReason> {
    if s.contains(',') {
        parse_point(s).map(Target::Point)
    } else {
        parse_uint(s)
            .map(Target::Element)
            .ok_or(FormatReason::BadIndexLiteral)
    }
}

/// Leading alphabetic word of a line, used to recognise verbs.
fn leading_word(s: &str) -> &str {
    let end = s
        .find(|c: char| !c.is_ascii_alphabetic())
        .unwrap_or(s.len());
    &s[..end]
}

fn parse_inner(s: &str) -> Result<Action, FormatReason> {
    let word = leading_word(s);
    let verb = Verb::parse(word).ok_or(FormatReason::UnknownVerb)?;
    let mut cur = Cursor {
        rest: &s[word.len()..],
    };
    let action = match verb {
        Verb::Click | Verb::LongClick => {
            let target = parse_target(cur.group()?)?;
            cur.end()?;
            match (verb, target) {
                (Verb::Click, Target::Element(i)) => Action::ClickElem(i),
                (Verb::Click, Target::Point(p)) => Action::ClickXY(p),
                (_, Target::Element(i)) => Action::LongClickElem(i),
                (_, Target::Point(p)) => Action::LongClickXY(p),
                (_, Target::None) => unreachable!("parse_target never yields None"),
            }
        }
        Verb::Text => {
            let target = parse_target(cur.group()?)?;
            let payload = cur.payload()?.to_string();
            cur.end()?;
            match target {
                Target::Element(i) => Action::TextElem(i, payload),
                Target::Point(p) => Action::TextXY(p, payload),
                Target::None => unreachable!("parse_target never yields None"),
            }
        }
        Verb::Swipe => match parse_target(cur.group()?)? {
            Target::Element(i) => {
                let dir = cur.group()?;
                let dir = Direction::parse(dir.trim_matches(is_inline_space))
                    .ok_or(FormatReason::BadDirection)?;
                cur.end()?;
                Action::SwipeElem(i, dir)
            }
            Target::Point(from) => {
                let to = parse_point(cur.group()?)?;
                cur.end()?;
                Action::SwipeXYXY(from, to)
            }
            Target::None => unreachable!("parse_target never yields None"),
        },
        Verb::Press => {
            let key = cur.group()?;
            let key = Key::parse(key.trim_matches(is_inline_space)).ok_or(FormatReason::BadKey)?;
            cur.end()?;
            Action::Press(key)
        }
    };
    Ok(action)
}

/// Parse one action line. Total: any input yields an action or a typed failure.
pub fn parse_action(line: &str) -> Result<Action, FormatFailure> {
    parse_inner(line.trim()).map_err(|reason| FormatFailure {
        raw: line.to_string(),
        reason,
    })
}

/// Canonical lowercase rendering, the inverse of [`parse_action`].
pub fn render_action(a: &Action) -> String {
    match a {
        Action::ClickElem(i) => format!("click [{i}]"),
        Action::LongClickElem(i) => format!("longclick [{i}]"),
        Action::TextElem(i, s) => format!("text [{i}] [{s}]"),
        Action::SwipeElem(i, d) => format!("swipe [{i}] [{}]", d.as_str()),
        Action::ClickXY(p) => format!("click [{},{}]", p.x, p.y),
        Action::LongClickXY(p) => format!("longclick [{},{}]", p.x, p.y),
        Action::TextXY(p, s) => format!("text [{},{}] [{s}]", p.x, p.y),
        Action::SwipeXYXY(a, b) => format!("swipe [{},{}] [{},{}]", a.x, a.y, b.x, b.y),
        Action::Press(k) => format!("press [{}]", k.as_str()),
    }
}

fn point_in_screen(p: Point, screen: &UIScreen) -> bool {
    p.x < screen.width() && p.y < screen.height()
}

/// Check that an action can be executed on `screen`.
pub fn validate(a: &Action, screen: &UIScreen) -> Result<(), ValidationFailure> {
    let elements = screen.interactables();
    match a {
        Action::Press(_) => Ok(()),
        Action::ClickElem(i) | Action::LongClickElem(i) | Action::SwipeElem(i, _) => {
            if (*i as usize) < elements.len() {
                Ok(())
            } else {
                Err(ValidationFailure::IndexOutOfRange)
            }
        }
        Action::TextElem(i, _) => match elements.get(*i as usize) {
            None => Err(ValidationFailure::IndexOutOfRange),
            Some(e) if e.node.editable => Ok(()),
            Some(_) => Err(ValidationFailure::NotEditable),
        },
        Action::ClickXY(p) | Action::LongClickXY(p) => {
            if point_in_screen(*p, screen) {
                Ok(())
            } else {
                Err(ValidationFailure::CoordOutOfBounds)
            }
        }
        Action::TextXY(p, _) => {
            if !point_in_screen(*p, screen) {
                return Err(ValidationFailure::CoordOutOfBounds);
            }
            match screen.hit_test(i64::from(p.x), i64::from(p.y)) {
                Some(e) if e.node.editable => Ok(()),
                _ => Err(ValidationFailure::NotEditable),
            }
        }
        Action::SwipeXYXY(from, to) => {
            if point_in_screen(*from, screen) && point_in_screen(*to, screen) {
                Ok(())
            } else {
                Err(ValidationFailure::CoordOutOfBounds)
            }
        }
    }
}

/// Split a ReAct-style response into its reasoning and its action line.
///
/// The action line is the last line whose first word is a grammar verb.
pub fn extract_action(response: &str) -> Result<(String, String), FormatFailure> {
    let lines: Vec<&str> = response.split('\n').collect();
    let found = lines.iter().rposition(|line| {
        let t = line.trim_start();
        Verb::parse(leading_word(t)).is_some()
    });
    match found {
        Some(i) => {
            let thought = lines[..i].join("\n").trim().to_string();
            Ok((thought, lines[i].trim().to_string()))
        }
        None => Err(FormatFailure {
            raw: response.to_string(),
            reason: FormatReason::UnknownVerb,
        }),
    }
}

/// Extract then parse; the failure keeps the full response as `raw`.
pub fn action_from_response(response: &str) -> Result<Action, FormatFailure> {
    let (_, line) = extract_action(response)?;
    parse_action(&line).map_err(|f| FormatFailure {
        raw: response.to_string(),
        reason: f.reason,
    })
}
