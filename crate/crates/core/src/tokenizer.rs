//! Reference tokenizer.
//!
//! Text is split into pieces: maximal alphanumeric runs and single
//! punctuation characters. A single ASCII space directly before a piece is
//! folded into that piece (`" rejects"`), any other whitespace becomes its
//! own piece. Pieces found in the vocabulary map to one id; everything else
//! falls back to one id per UTF-8 byte, so `decode(encode(text)) == text`
//! for every input.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub type TokenId = u32;

/// Reserved marker tokens. Their ids are never produced by [`Tokenizer::encode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Marker {
    Cls,
    Sep,
    Prefix,
    Type,
    Text,
}

impl Marker {
    pub const ALL: [Marker; 5] = [Marker::Cls, Marker::Sep, Marker::Prefix, Marker::Type, Marker::Text];

    pub fn id(self) -> TokenId {
        self as TokenId
    }

    pub fn from_id(id: TokenId) -> Option<Marker> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Marker::Cls => "[CLS]",
            Marker::Sep => "[SEP]",
            Marker::Prefix => "[P]",
            Marker::Type => "[T]",
            Marker::Text => "[Text]",
        }
    }
}

const BYTE_BASE: TokenId = Marker::ALL.len() as TokenId;
const PIECE_BASE: TokenId = BYTE_BASE + 256;

/// One encoded token and the character interval `[start, end)` it covers in
/// the source text. A folded leading space is not part of the interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub id: TokenId,
    pub start: usize,
    pub end: usize,
}

/// The contract query construction relies on.
pub trait Tokenize: Sync {
    fn encode(&self, text: &str) -> Vec<Token>;
    fn decode(&self, ids: &[TokenId]) -> String;
    fn vocab_size(&self) -> usize;

    fn marker_id(&self, marker: Marker) -> TokenId {
        marker.id()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pieces: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

struct Piece {
    text_start: usize,
    byte_range: std::ops::Range<usize>,
    leading_space: bool,
    char_start: usize,
    char_end: usize,
}

fn split_pieces(text: &str) -> Vec<Piece> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_at = |ci: usize| chars.get(ci).map_or(text.len(), |&(b, _)| b);
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i].1;
        let mut leading_space = false;
        let mut body = i;
        if c == ' ' {
            match chars.get(i + 1) {
                Some(&(_, next)) if !next.is_whitespace() => {
                    leading_space = true;
                    body = i + 1;
                }
                _ => {
                    out.push(Piece {
                        text_start: i,
                        byte_range: byte_at(i)..byte_at(i + 1),
                        leading_space: false,
                        char_start: i,
                        char_end: i + 1,
                    });
                    i += 1;
                    continue;
                }
            }
        }
        let first = chars[body].1;
        let mut end = body + 1;
        if first.is_alphanumeric() {
            while end < chars.len() && chars[end].1.is_alphanumeric() {
                end += 1;
            }
        }
        out.push(Piece {
            text_start: i,
            byte_range: byte_at(i)..byte_at(end),
            leading_space,
            char_start: body,
            char_end: end,
        });
        i = end;
    }
    out
}

impl Tokenizer {
    /// A tokenizer with no learned pieces: every character is byte-encoded.
    pub fn bytes_only() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from every piece seen in `texts`, in first-seen order.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tok = Self::default();
        for text in texts {
            for piece in split_pieces(text) {
                let s = &text[piece.byte_range.clone()];
                if !s.chars().all(char::is_whitespace) {
                    tok.add_piece(s);
                }
            }
        }
        tok
    }

    fn add_piece(&mut self, piece: &str) {
        if !self.index.contains_key(piece) {
            let id = PIECE_BASE + self.pieces.len() as TokenId;
            self.index.insert(piece.to_string(), id);
            self.pieces.push(piece.to_string());
        }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), PIECE_BASE + i as TokenId))
            .collect();
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    /// Textual form of a single id; markers render as their bracket names.
    pub fn id_to_string(&self, id: TokenId) -> String {
        if let Some(m) = Marker::from_id(id) {
            m.as_str().to_string()
        } else {
            self.decode(&[id])
        }
    }
}

impl Tokenize for Tokenizer {
    fn encode(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        for piece in split_pieces(text) {
            let s = &text[piece.byte_range.clone()];
            if let Some(&id) = self.index.get(s) {
                out.push(Token { id, start: piece.char_start, end: piece.char_end });
                continue;
            }
            let mut ci = piece.text_start;
            if piece.leading_space {
                out.push(Token { id: BYTE_BASE + b' ' as TokenId, start: ci, end: ci + 1 });
                ci += 1;
            }
            let body_bytes = if piece.leading_space { &s[1..] } else { s };
            for ch in body_bytes.chars() {
                let mut buf = [0u8; 4];
                for b in ch.encode_utf8(&mut buf).bytes() {
                    out.push(Token { id: BYTE_BASE + b as TokenId, start: ci, end: ci + 1 });
                }
                ci += 1;
            }
        }
        out
    }

    fn decode(&self, ids: &[TokenId]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            if let Some(m) = Marker::from_id(id) {
                bytes.extend_from_slice(m.as_str().as_bytes());
            } else if id < PIECE_BASE {
                bytes.push((id - BYTE_BASE) as u8);
            } else if let Some(p) = self.pieces.get((id - PIECE_BASE) as usize) {
                bytes.extend_from_slice(p.as_bytes());
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }

    fn vocab_size(&self) -> usize {
        PIECE_BASE as usize + self.pieces.len()
    }
}
