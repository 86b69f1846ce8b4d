//! Recursive-descent reader turning a grammatical token string into clauses.
//!
//! It follows the grammar file rule for rule. Where the grammar leaves a
//! choice, the longest reading wins: `turn left and get ...` is one step
//! (turn, then fetch) rather than a turn followed by a separator.

use serde::{Deserialize, Serialize};

use crate::hexworld::{CardColor, CardProps, LandmarkColor, LandmarkKind, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Turn {
    Left,
    Right,
    Around,
}

impl Turn {
    /// Orientation change in counter-clockwise sixths.
    pub fn steps(self) -> u8 {
        match self {
            Turn::Left => 1,
            Turn::Right => 5,
            Turn::Around => 3,
        }
    }
}

/// Card attributes named by a referring expression; `None` is unspecified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Descriptor {
    pub count: Option<u8>,
    pub color: Option<CardColor>,
    pub shape: Option<Shape>,
}

impl Descriptor {
    pub fn full(p: &CardProps) -> Self {
        Self {
            count: Some(p.count),
            color: Some(p.color),
            shape: Some(p.shape),
        }
    }

    pub fn matches(&self, p: &CardProps) -> bool {
        self.count.is_none_or(|n| n == p.count)
            && self.color.is_none_or(|c| c == p.color)
            && self.shape.is_none_or(|s| s == p.shape)
    }

    pub fn is_full(&self) -> bool {
        self.count.is_some() && self.color.is_some() && self.shape.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Anchor {
    pub color: Option<LandmarkColor>,
    pub kind: Option<LandmarkKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Clause {
    Wait,
    Turn {
        turn: Turn,
    },
    Fetch {
        card: Descriptor,
        anchor: Option<Anchor>,
    },
}

pub(crate) fn card_color(t: &str) -> Option<CardColor> {
    Some(match t {
        "red" => CardColor::Red,
        "green" => CardColor::Green,
        "black" => CardColor::Black,
        "orange" => CardColor::Orange,
        _ => return None,
    })
}

pub(crate) fn color_word(c: CardColor) -> &'static str {
    match c {
        CardColor::Red => "red",
        CardColor::Green => "green",
        CardColor::Black => "black",
        CardColor::Orange => "orange",
    }
}

pub(crate) fn shape_word(s: Shape, plural: bool) -> &'static str {
    match (s, plural) {
        (Shape::Plus, false) => "plus",
        (Shape::Heart, false) => "heart",
        (Shape::Diamond, false) => "diamond",
        (Shape::Triangle, false) => "triangle",
        (Shape::Plus, true) => "pluses",
        (Shape::Heart, true) => "hearts",
        (Shape::Diamond, true) => "diamonds",
        (Shape::Triangle, true) => "triangles",
    }
}

fn shape(t: &str, plural: bool) -> Option<Shape> {
    Shape::ALL.into_iter().find(|s| shape_word(*s, plural) == t)
}

pub(crate) fn landmark_color_word(c: LandmarkColor) -> &'static str {
    match c {
        LandmarkColor::Blue => "blue",
        LandmarkColor::Yellow => "yellow",
        LandmarkColor::White => "white",
    }
}

pub(crate) fn kind_word(k: LandmarkKind) -> &'static str {
    match k {
        LandmarkKind::House => "house",
        LandmarkKind::Tree => "tree",
        LandmarkKind::Tower => "tower",
        LandmarkKind::Rock => "rock",
        LandmarkKind::Well => "well",
        LandmarkKind::Windmill => "windmill",
        LandmarkKind::Tent => "tent",
        LandmarkKind::Lamp => "lamp",
    }
}

fn one(t: &str) -> bool {
    matches!(t, "1" | "one" | "single")
}

fn many(t: &str) -> Option<u8> {
    match t {
        "2" | "two" => Some(2),
        "3" | "three" => Some(3),
        _ => None,
    }
}

struct Reader<'a> {
    toks: &'a [&'a str],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<&'a str> {
        self.toks.get(self.pos + 1).copied()
    }

    fn eat(&mut self, t: &str) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn bump(&mut self) -> Option<&'a str> {
        let t = self.peek()?;
        self.pos += 1;
        Some(t)
    }

    fn wait(&mut self) -> Option<()> {
        let pair = (self.peek()?, self.peek2());
        let n = match pair {
            ("hold", Some("still")) | ("wait", Some("here")) | ("stay", Some("put")) => 2,
            ("do", Some("not")) if self.toks.get(self.pos + 2) == Some(&"move") => 3,
            _ => return None,
        };
        self.pos += n;
        Some(())
    }

    fn turn(&mut self) -> Option<Turn> {
        if self.peek() != Some("turn") {
            return None;
        }
        let t = match self.peek2()? {
            "left" => Turn::Left,
            "right" => Turn::Right,
            "around" => Turn::Around,
            _ => return None,
        };
        self.pos += 2;
        Some(t)
    }

    fn verb(&mut self) -> Option<()> {
        match self.peek()? {
            "get" | "grab" | "collect" | "take" | "select" => self.pos += 1,
            "pick" if self.peek2() == Some("up") => self.pos += 2,
            "go" | "walk" if self.peek2() == Some("to") => self.pos += 2,
            _ => return None,
        }
        Some(())
    }

    /// `one [color] shape` or `many [color] shapes`, without any suffix.
    fn counted(&mut self) -> Option<Descriptor> {
        let t = self.bump()?;
        let (count, plural) = if one(t) { (1, false) } else { (many(t)?, true) };
        let color = self.peek().and_then(card_color);
        if color.is_some() {
            self.pos += 1;
        }
        let s = shape(self.bump()?, plural)?;
        Some(Descriptor {
            count: Some(count),
            color,
            shape: Some(s),
        })
    }

    fn card(&mut self) -> Option<Descriptor> {
        let t = self.peek()?;
        if t == "card" {
            self.pos += 1;
            if !self.eat("with") {
                return None;
            }
            return self.counted();
        }
        if one(t) {
            let d = self.counted()?;
            self.eat("card");
            return Some(d);
        }
        if many(t).is_some() {
            return self.counted();
        }
        let color = card_color(t);
        if color.is_some() {
            self.pos += 1;
            if self.eat("card") {
                return Some(Descriptor {
                    color,
                    ..Descriptor::default()
                });
            }
        }
        let s = shape(self.bump()?, false)?;
        if !self.eat("card") {
            return None;
        }
        Some(Descriptor {
            count: None,
            color,
            shape: Some(s),
        })
    }

    fn anchor(&mut self) -> Option<Option<Anchor>> {
        match (self.peek(), self.peek2()) {
            (Some("near" | "by"), _) => self.pos += 1,
            (Some("next"), Some("to")) => self.pos += 2,
            _ => return Some(None),
        }
        if !self.eat("the") {
            return None;
        }
        let t = self.bump()?;
        let color = LandmarkColor::ALL
            .into_iter()
            .find(|c| landmark_color_word(*c) == t);
        let word = if color.is_some() { self.bump()? } else { t };
        let kind = LandmarkKind::ALL
            .into_iter()
            .find(|k| kind_word(*k) == word);
        match (color, kind, word) {
            (Some(_), None, "landmark") | (_, Some(_), _) => Some(Some(Anchor { color, kind })),
            _ => None,
        }
    }

    fn fetch(&mut self) -> Option<Clause> {
        self.verb()?;
        self.eat("the");
        let card = self.card()?;
        let anchor = self.anchor()?;
        Some(Clause::Fetch { card, anchor })
    }

    fn step(&mut self, out: &mut Vec<Clause>) -> Option<()> {
        if let Some(turn) = self.turn() {
            out.push(Clause::Turn { turn });
            if self.peek() == Some("and") && self.peek2() != Some("then") {
                self.pos += 1;
                out.push(self.fetch()?);
            }
            return Some(());
        }
        out.push(self.fetch()?);
        Some(())
    }

    fn sep(&mut self) -> bool {
        match (self.peek(), self.peek2()) {
            (Some("then"), _) => self.pos += 1,
            (Some("and"), Some("then")) => self.pos += 2,
            (Some(","), Some("then")) => self.pos += 2,
            (Some(","), _) => self.pos += 1,
            _ => return false,
        }
        true
    }
}

/// Reads a token string into clauses; `None` when it is not a sentence of
/// the grammar.
pub fn read_clauses(tokens: &[&str]) -> Option<Vec<Clause>> {
    let mut r = Reader {
        toks: tokens,
        pos: 0,
    };
    let mut out = Vec::new();
    if r.wait().is_some() {
        out.push(Clause::Wait);
    } else {
        r.step(&mut out)?;
        while r.sep() {
            r.step(&mut out)?;
        }
    }
    (r.pos == tokens.len()).then_some(out)
}
