//! VAD lexicon: term → (valence, arousal, dominance), rescaled at ingest
//! from the file's native range to [−10, 10], plus the text scorer used to
//! read affect out of generated strings.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::vad::{VadVector, VAD_MAX, VAD_MIN};

/// Term coordinates in [−10, 10]; lowercase unique terms.
#[derive(Debug, Clone, PartialEq)]
pub struct VadLexicon {
    terms: HashMap<String, VadVector>,
}

impl VadLexicon {
    pub fn get(&self, term: &str) -> Option<&VadVector> {
        self.terms.get(term)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Parse the tab-separated `term	v	a	d` format. A `#range lo hi`
    /// header declares the file's native coordinate range, which is mapped
    /// affinely onto [−10, 10]; other `#` lines and blanks are ignored.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut range: Option<(f64, f64)> = None;
        let mut terms = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(decl) = line.strip_prefix("#range") {
                let parts: Vec<&str> = decl.split_whitespace().collect();
                let parse_err = |msg: &str| Error::LexiconParse {
                    line: line_no,
                    msg: msg.to_string(),
                };
                if parts.len() != 2 {
                    return Err(parse_err("expected `#range lo hi`"));
                }
                let lo: f64 = parts[0]
                    .parse()
                    .map_err(|_| parse_err("range bound is not a number"))?;
                let hi: f64 = parts[1]
                    .parse()
                    .map_err(|_| parse_err("range bound is not a number"))?;
                if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                    return Err(parse_err("range must satisfy lo < hi"));
                }
                range = Some((lo, hi));
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let (lo, hi) = range.ok_or_else(|| Error::LexiconParse {
                line: line_no,
                msg: "data before a `#range lo hi` header".to_string(),
            })?;
            let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::LexiconParse {
                    line: line_no,
                    msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
                });
            }
            let term = fields[0].to_lowercase();
            if term.is_empty() {
                return Err(Error::LexiconParse {
                    line: line_no,
                    msg: "empty term".to_string(),
                });
            }
            let mut coords = [0.0f64; 3];
            for (slot, field) in coords.iter_mut().zip(&fields[1..]) {
                let native: f64 = field.parse().map_err(|_| Error::LexiconParse {
                    line: line_no,
                    msg: format!("coordinate {field:?} is not a number"),
                })?;
                if !native.is_finite() || native < lo || native > hi {
                    return Err(Error::LexiconParse {
                        line: line_no,
                        msg: format!("coordinate {native} outside native range [{lo}, {hi}]"),
                    });
                }
                *slot = VAD_MIN + (native - lo) / (hi - lo) * (VAD_MAX - VAD_MIN);
            }
            let vad = VadVector::new(coords[0], coords[1], coords[2])?;
            if terms.insert(term.clone(), vad).is_some() {
                return Err(Error::LexiconParse {
                    line: line_no,
                    msg: format!("duplicate term {term:?}"),
                });
            }
        }
        if terms.is_empty() {
            return Err(Error::EmptyInput("lexicon"));
        }
        Ok(VadLexicon { terms })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_tsv(&text)
    }
}

/// Raw TSV the bundled lexicon is built from (native range [0, 1]).
pub const BUILTIN_LEXICON_TSV: &str = include_str!("../../data/vad_lexicon.tsv");

/// The lexicon shipped with the crate (native range [0, 1]).
pub fn builtin_vad_lexicon() -> VadLexicon {
    VadLexicon::from_tsv(BUILTIN_LEXICON_TSV).expect("bundled lexicon must parse")
}

/// A text's mean lexicon coordinates plus match coverage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LexiconScore {
    /// Mean over matched terms; (0,0,0) when nothing matched.
    pub vad: VadVector,
    /// Word tokens that hit the lexicon.
    pub matched: usize,
    /// All word tokens in the text.
    pub total_words: usize,
}

/// Lowercase alphabetic word tokens of `text`.
fn word_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

/// Average the coordinates of every lexicon word in `text`. A no-match
/// result is (0,0,0) with `matched == 0` — flagged, not an error.
pub fn lexicon_vad_score(text: &str, lexicon: &VadLexicon) -> LexiconScore {
    let mut sum = [0.0f64; 3];
    let mut matched = 0usize;
    let mut total = 0usize;
    for word in word_tokens(text) {
        total += 1;
        if let Some(vad) = lexicon.get(&word) {
            matched += 1;
            for (s, c) in sum.iter_mut().zip(vad.components()) {
                *s += c;
            }
        }
    }
    let vad = if matched == 0 {
        VadVector::NEUTRAL
    } else {
        let n = matched as f64;
        VadVector::clamped(sum[0] / n, sum[1] / n, sum[2] / n)
    };
    LexiconScore {
        vad,
        matched,
        total_words: total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "# comment\n#range 0 1\nhappy\t0.9\t0.65\t0.6\nsad\t0.1\t0.6\t0.5\ncalm\t0.6\t0.1\t0.55\n";

    #[test]
    fn parses_and_rescales() {
        let lex = VadLexicon::from_tsv(TOY).unwrap();
        assert_eq!(lex.len(), 3);
        // Affine [0,1] → [−10,10]: x ↦ 20x − 10.
        let happy = lex.get("happy").unwrap();
        assert!((happy.e_v - 8.0).abs() < 1e-12);
        assert!((happy.e_a - 3.0).abs() < 1e-12);
        assert!((happy.e_d - 2.0).abs() < 1e-12);
        let sad = lex.get("sad").unwrap();
        assert!((sad.e_v + 8.0).abs() < 1e-12);
    }

    #[test]
    fn case_and_duplicate_handling() {
        let lex = VadLexicon::from_tsv("#range 0 1\nHaPPy\t0.9\t0.5\t0.5\n").unwrap();
        assert!(lex.get("happy").is_some());
        let dup = "#range 0 1\nhappy\t0.9\t0.5\t0.5\nHAPPY\t0.1\t0.5\t0.5\n";
        assert!(matches!(
            VadLexicon::from_tsv(dup),
            Err(Error::LexiconParse { line: 3, .. })
        ));
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        for (text, want_line) in [
            ("happy\t0.9\t0.5\t0.5\n", 1),              // data before #range
            ("#range 0\nhappy\t0.9\t0.5\t0.5\n", 1),    // short header
            ("#range 1 0\nx\t0.5\t0.5\t0.5\n", 1),      // inverted range
            ("#range 0 1\nhappy\t0.9\t0.5\n", 2),       // missing field
            ("#range 0 1\nhappy\tjunk\t0.5\t0.5\n", 2), // non-numeric
            ("#range 0 1\nhappy\t1.5\t0.5\t0.5\n", 2),  // outside native range
            ("#range 0 1\n\t0.5\t0.5\t0.5\n", 2),       // empty term
        ] {
            match VadLexicon::from_tsv(text) {
                Err(Error::LexiconParse { line, .. }) => {
                    assert_eq!(line, want_line, "input {text:?}")
                }
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
        assert!(matches!(
            VadLexicon::from_tsv("#range 0 1\n# only comments\n"),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn builtin_lexicon_is_well_formed() {
        let lex = builtin_vad_lexicon();
        assert!(lex.len() >= 50);
        // Sign sanity at the extremes of each axis.
        assert!(lex.get("happy").unwrap().e_v > 0.0);
        assert!(lex.get("miserable").unwrap().e_v < 0.0);
        assert!(lex.get("excited").unwrap().e_a > 0.0);
        assert!(lex.get("sleepy").unwrap().e_a < 0.0);
        assert!(lex.get("dominant").unwrap().e_d > 0.0);
        assert!(lex.get("submissive").unwrap().e_d < 0.0);
    }

    #[test]
    fn single_word_scores_exactly() {
        let lex = builtin_vad_lexicon();
        let happy = *lex.get("happy").unwrap();
        let score = lexicon_vad_score("happy", &lex);
        assert_eq!(score.vad, happy);
        assert_eq!(score.matched, 1);
        assert_eq!(score.total_words, 1);
        // Punctuation and case do not break matching.
        let score = lexicon_vad_score("So HAPPY!", &lex);
        assert_eq!(score.vad, happy);
        assert_eq!(score.matched, 1);
        assert_eq!(score.total_words, 2);
    }

    #[test]
    fn no_match_is_flagged_neutral() {
        let lex = builtin_vad_lexicon();
        let score = lexicon_vad_score("zzz qqq 123", &lex);
        assert_eq!(score.vad, VadVector::NEUTRAL);
        assert_eq!(score.matched, 0);
        assert_eq!(score.total_words, 2); // "123" is not alphabetic
    }

    #[test]
    fn concatenation_averages() {
        let lex = builtin_vad_lexicon();
        let a = lexicon_vad_score("happy", &lex);
        let b = lexicon_vad_score("sad", &lex);
        let both = lexicon_vad_score("happy sad", &lex);
        for ((x, y), z) in a
            .vad
            .components()
            .iter()
            .zip(b.vad.components())
            .zip(both.vad.components())
        {
            assert!((0.5 * (x + y) - z).abs() < 1e-12);
        }
        assert_eq!(both.matched, 2);
    }

    #[test]
    fn load_from_disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.tsv");
        std::fs::write(&path, TOY).unwrap();
        let lex = VadLexicon::load(&path).unwrap();
        assert_eq!(lex, VadLexicon::from_tsv(TOY).unwrap());
        assert!(VadLexicon::load(&dir.path().join("missing.tsv")).is_err());
    }
}
