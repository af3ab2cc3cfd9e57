//! Unigram-language-model subword vocabularies.
//!
//! A [`Vocabulary`] is an ordered piece table: IDs 0–3 are the specials
//! `<pad>`, `</s>`, `<unk>`, `<s>`; learned pieces follow; sentinel mask
//! tokens occupy the highest IDs (`sentinel_id(k) = size - 1 - k`).
//! Pieces carry a word-initial marker glyph so decoding restores single
//! spaces exactly.

mod train;

pub use train::{train_vocab, VocabTrainConfig};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const PAD_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
pub const BOS_ID: u32 = 3;
pub const NUM_SPECIALS: u32 = 4;

/// Word-initial marker carried by pieces; restored to a space on decode.
pub const WORD_MARKER: char = '\u{2581}';

/// Log-probability charged per unknown character during segmentation.
const UNK_SCORE: f64 = -1.0e4;

const SPECIAL_SURFACES: [&str; 4] = ["<pad>", "</s>", "<unk>", "<s>"];

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: invalid vocabulary file: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid piece table: {0}")]
    InvalidPieces(String),
    #[error("id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: u32 },
    #[error("sentinel index {k} out of range (sentinel_count {count})")]
    SentinelOutOfRange { k: u32, count: u32 },
    #[error("target size {target} unreachable: only {available} candidate pieces; use a smaller --size")]
    TargetUnreachable { target: usize, available: usize },
    #[error("vocabulary training requires a non-empty sentence stream")]
    EmptyStream,
    #[error(
        "target size {target} must exceed specials + sentinels ({reserved}) with room for pieces"
    )]
    TargetTooSmall { target: usize, reserved: usize },
}

/// One vocabulary entry: surface form and unigram log probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub surface: String,
    pub log_prob: f64,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    pieces: Vec<Piece>,
    lookup: HashMap<String, u32>,
    sentinel_count: u32,
    max_piece_chars: usize,
}

impl Vocabulary {
    /// Assemble a vocabulary from learned pieces (ordered; IDs start at 4).
    pub fn from_learned_pieces(
        learned: Vec<Piece>,
        sentinel_count: u32,
    ) -> Result<Vocabulary, VocabError> {
        let mut pieces = Vec::with_capacity(learned.len() + 4 + sentinel_count as usize);
        for surface in SPECIAL_SURFACES {
            pieces.push(Piece {
                surface: surface.to_string(),
                log_prob: 0.0,
            });
        }
        pieces.extend(learned);
        for k in (0..sentinel_count).rev() {
            pieces.push(Piece {
                surface: format!("<extra_id_{k}>"),
                log_prob: 0.0,
            });
        }
        Self::from_full_table(pieces, sentinel_count)
    }

    fn from_full_table(pieces: Vec<Piece>, sentinel_count: u32) -> Result<Vocabulary, VocabError> {
        let size = pieces.len() as u32;
        if size < NUM_SPECIALS + sentinel_count {
            return Err(VocabError::InvalidPieces(format!(
                "size {size} below specials + sentinels"
            )));
        }
        let mut lookup = HashMap::new();
        let mut max_piece_chars = 1;
        for (id, piece) in pieces.iter().enumerate() {
            let id = id as u32;
            if !piece.log_prob.is_finite() || piece.log_prob > 0.0 {
                return Err(VocabError::InvalidPieces(format!(
                    "piece {:?} has invalid log probability {}",
                    piece.surface, piece.log_prob
                )));
            }
            if id < NUM_SPECIALS || id >= size - sentinel_count {
                continue;
            }
            if lookup.insert(piece.surface.clone(), id).is_some() {
                return Err(VocabError::InvalidPieces(format!(
                    "duplicate piece {:?}",
                    piece.surface
                )));
            }
            max_piece_chars = max_piece_chars.max(piece.surface.chars().count());
        }
        Ok(Vocabulary {
            pieces,
            lookup,
            sentinel_count,
            max_piece_chars,
        })
    }

    pub fn size(&self) -> u32 {
        self.pieces.len() as u32
    }

    pub fn sentinel_count(&self) -> u32 {
        self.sentinel_count
    }

    /// First sentinel ID; learned-piece IDs are `4..first_sentinel_id()`.
    pub fn first_sentinel_id(&self) -> u32 {
        self.size() - self.sentinel_count
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn piece_id(&self, surface: &str) -> Option<u32> {
        self.lookup.get(surface).copied()
    }

    /// ID of the k-th sentinel mask token: `size - 1 - k`.
    pub fn sentinel_id(&self, k: u32) -> Result<u32, VocabError> {
        if k >= self.sentinel_count {
            return Err(VocabError::SentinelOutOfRange {
                k,
                count: self.sentinel_count,
            });
        }
        Ok(self.size() - 1 - k)
    }

    /// True for IDs that may appear in plain encoded text (no specials,
    /// no sentinels).
    pub fn is_text_id(&self, id: u32) -> bool {
        id >= NUM_SPECIALS && id < self.first_sentinel_id()
    }

    /// Deterministic maximum-log-probability segmentation.
    ///
    /// A word-initial marker is inserted at each whitespace boundary
    /// before matching; characters outside the vocabulary map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            let marked: Vec<char> = std::iter::once(WORD_MARKER).chain(word.chars()).collect();
            self.viterbi_word(&marked, &mut ids);
        }
        ids
    }

    /// Total log probability of an encoded sequence (unknowns contribute
    /// the unk penalty). Used to cross-check segmentation optimality.
    pub fn score_ids(&self, ids: &[u32]) -> f64 {
        ids.iter()
            .map(|&id| {
                if id == UNK_ID {
                    UNK_SCORE
                } else {
                    self.pieces[id as usize].log_prob
                }
            })
            .sum()
    }

    fn viterbi_word(&self, chars: &[char], out: &mut Vec<u32>) {
        let n = chars.len();
        // best[i]: (score of best segmentation of chars[i..], length of its
        // first piece). Ties prefer the longer leading piece.
        let mut best: Vec<(f64, usize, u32)> = vec![(f64::NEG_INFINITY, 0, UNK_ID); n + 1];
        best[n] = (0.0, 0, UNK_ID);
        let mut buf = String::new();
        for i in (0..n).rev() {
            // Unknown single character is always available as a fallback.
            let mut cell = (UNK_SCORE + best[i + 1].0, 1, UNK_ID);
            buf.clear();
            for len in 1..=self.max_piece_chars.min(n - i) {
                buf.push(chars[i + len - 1]);
                if let Some(&id) = self.lookup.get(buf.as_str()) {
                    let score = self.pieces[id as usize].log_prob + best[i + len].0;
                    if score > cell.0 || (score == cell.0 && len > cell.1) {
                        cell = (score, len, id);
                    }
                }
            }
            best[i] = cell;
        }
        let mut i = 0;
        while i < n {
            let (_, len, id) = best[i];
            out.push(id);
            i += len;
        }
    }

    /// Render IDs back to text. Specials and sentinels render as their
    /// canonical printable forms.
    pub fn decode(&self, ids: &[u32]) -> Result<String, VocabError> {
        let mut out = String::new();
        for &id in ids {
            if id >= self.size() {
                return Err(VocabError::IdOutOfRange {
                    id,
                    size: self.size(),
                });
            }
            out.push_str(&self.pieces[id as usize].surface);
        }
        let mut text = String::with_capacity(out.len());
        for c in out.chars() {
            if c == WORD_MARKER {
                text.push(' ');
            } else {
                text.push(c);
            }
        }
        Ok(text.strip_prefix(' ').map(str::to_string).unwrap_or(text))
    }

    /// Write the vocabulary file: a header line, then one
    /// `<piece>\t<log_prob>` line per piece in ID order.
    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        let mut out = String::new();
        writeln!(
            out,
            "#ctvocab v1 size={} sentinels={}",
            self.size(),
            self.sentinel_count
        )
        .expect("writing to string");
        for (id, piece) in self.pieces.iter().enumerate() {
            let id = id as u32;
            if id < NUM_SPECIALS || id >= self.first_sentinel_id() {
                writeln!(out, "{}\t0", piece.surface).expect("writing to string");
            } else {
                writeln!(out, "{}\t{:.8e}", piece.surface, piece.log_prob)
                    .expect("writing to string");
            }
        }
        fs::write(path, out).map_err(|source| VocabError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Vocabulary, VocabError> {
        let text = fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |line: usize, message: String| VocabError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty file".to_string()))?;
        let rest = header
            .strip_prefix("#ctvocab v1 size=")
            .ok_or_else(|| parse_err(1, "bad header".to_string()))?;
        let (size_str, sentinel_str) = rest
            .split_once(" sentinels=")
            .ok_or_else(|| parse_err(1, "bad header".to_string()))?;
        let size: u32 = size_str
            .parse()
            .map_err(|_| parse_err(1, "bad size".to_string()))?;
        let sentinel_count: u32 = sentinel_str
            .parse()
            .map_err(|_| parse_err(1, "bad sentinel count".to_string()))?;
        let mut pieces = Vec::with_capacity(size as usize);
        for (idx, line) in lines {
            let line_no = idx + 1;
            let (surface, log_prob) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(line_no, "missing tab".to_string()))?;
            let log_prob: f64 = log_prob
                .parse()
                .map_err(|_| parse_err(line_no, "bad log probability".to_string()))?;
            pieces.push(Piece {
                surface: surface.to_string(),
                log_prob,
            });
        }
        if pieces.len() != size as usize {
            return Err(parse_err(
                1,
                format!("header says {} pieces, file has {}", size, pieces.len()),
            ));
        }
        for (id, expected) in SPECIAL_SURFACES.iter().enumerate() {
            if pieces.get(id).map(|p| p.surface.as_str()) != Some(*expected) {
                return Err(parse_err(id + 2, format!("piece {id} must be {expected}")));
            }
        }
        for k in 0..sentinel_count {
            let id = (size - 1 - k) as usize;
            let expected = format!("<extra_id_{k}>");
            if pieces[id].surface != expected {
                return Err(parse_err(id + 2, format!("piece {id} must be {expected}")));
            }
        }
        Self::from_full_table(pieces, sentinel_count)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Hand-built vocabulary over a tiny piece set.
    pub(crate) fn toy_vocab() -> Vocabulary {
        let learned = [
            ("\u{2581}", -4.0),
            ("a", -2.5),
            ("b", -2.5),
            ("ab", -1.2),
            ("\u{2581}ab", -1.0),
            ("\u{2581}select", -1.6),
            ("\u{2581}time", -1.7),
            ("s", -3.0),
            ("e", -3.0),
            ("l", -3.0),
            ("c", -3.0),
            ("t", -3.0),
            ("i", -3.0),
            ("m", -3.0),
        ]
        .iter()
        .map(|&(s, p)| Piece {
            surface: s.to_string(),
            log_prob: p,
        })
        .collect();
        Vocabulary::from_learned_pieces(learned, 3).unwrap()
    }

    #[test]
    fn special_ids_are_fixed() {
        let v = toy_vocab();
        assert_eq!(v.pieces()[0].surface, "<pad>");
        assert_eq!(v.pieces()[1].surface, "</s>");
        assert_eq!(v.pieces()[2].surface, "<unk>");
        assert_eq!(v.pieces()[3].surface, "<s>");
    }

    #[test]
    fn sentinels_occupy_top_ids() {
        let v = toy_vocab();
        assert_eq!(v.sentinel_id(0).unwrap(), v.size() - 1);
        assert_eq!(v.sentinel_id(1).unwrap(), v.size() - 2);
        assert!(v.sentinel_id(3).is_err());
        assert_eq!(
            v.pieces()[v.sentinel_id(0).unwrap() as usize].surface,
            "<extra_id_0>"
        );
    }

    #[test]
    fn encode_empty_is_empty() {
        assert!(toy_vocab().encode("").is_empty());
    }

    #[test]
    fn round_trip_on_covered_text() {
        let v = toy_vocab();
        for text in ["select time", "ab ab", "select ab time"] {
            let ids = v.encode(text);
            assert_eq!(v.decode(&ids).unwrap(), text);
        }
    }

    #[test]
    fn unknown_characters_map_to_unk() {
        let v = toy_vocab();
        let ids = v.encode("aZb");
        assert!(ids.contains(&UNK_ID));
        assert_eq!(v.decode(&ids).unwrap(), "a<unk>b");
    }

    #[test]
    fn decode_of_specials_renders_canonical_forms() {
        let v = toy_vocab();
        assert_eq!(v.decode(&[UNK_ID]).unwrap(), "<unk>");
        assert_eq!(v.decode(&[PAD_ID, BOS_ID, EOS_ID]).unwrap(), "<pad><s></s>");
    }

    #[test]
    fn decode_rejects_out_of_range_ids() {
        let v = toy_vocab();
        let err = v.decode(&[v.size()]).unwrap_err();
        assert!(matches!(err, VocabError::IdOutOfRange { .. }));
    }

    #[test]
    fn encode_prefers_highest_probability_segmentation() {
        let v = toy_vocab();
        // "▁ab" (-1.0) beats "▁"+"ab" (-5.2) and "▁"+"a"+"b" (-9.0).
        let ids = v.encode("ab");
        assert_eq!(ids, vec![v.piece_id("\u{2581}ab").unwrap()]);
    }

    #[test]
    fn encode_is_deterministic() {
        let v = toy_vocab();
        let a = v.encode("select time ab select");
        let b = v.encode("select time ab select");
        assert_eq!(a, b);
    }

    #[test]
    fn save_load_round_trip() {
        let v = toy_vocab();
        let f = tempfile::NamedTempFile::new().unwrap();
        v.save(f.path()).unwrap();
        let loaded = Vocabulary::load(f.path()).unwrap();
        assert_eq!(loaded.size(), v.size());
        assert_eq!(loaded.sentinel_count(), v.sentinel_count());
        assert_eq!(loaded.encode("select time"), v.encode("select time"));
        // Saving the loaded table reproduces the file bytes.
        let f2 = tempfile::NamedTempFile::new().unwrap();
        loaded.save(f2.path()).unwrap();
        assert_eq!(
            fs::read(f.path()).unwrap(),
            fs::read(f2.path()).unwrap()
        );
    }

    #[test]
    fn load_rejects_bad_specials() {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(
            f.path(),
            "#ctvocab v1 size=5 sentinels=0\n<pad>\t0\n</s>\t0\n<unk>\t0\n<bos>\t0\nx\t-1.0\n",
        )
        .unwrap();
        assert!(matches!(
            Vocabulary::load(f.path()),
            Err(VocabError::Parse { .. })
        ));
    }
}
