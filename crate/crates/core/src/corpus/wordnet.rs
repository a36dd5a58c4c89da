//! Reader for the WordNet database (WNDB) files `index.<pos>` / `data.<pos>`.
//!
//! Only lemma/synset membership and glosses are kept. Pointers and verb
//! frames are validated against the file grammar but not retained.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, CorpusError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pos {
    Noun,
    Verb,
    Adj,
    Adv,
}

impl Pos {
    pub const ALL: [Pos; 4] = [Pos::Noun, Pos::Verb, Pos::Adj, Pos::Adv];

    pub fn file_suffix(self) -> &'static str {
        match self {
            Pos::Noun => "noun",
            Pos::Verb => "verb",
            Pos::Adj => "adj",
            Pos::Adv => "adv",
        }
    }

    pub fn letter(self) -> char {
        match self {
            Pos::Noun => 'n',
            Pos::Verb => 'v',
            Pos::Adj => 'a',
            Pos::Adv => 'r',
        }
    }

    fn from_letter(c: &str) -> Option<Pos> {
        match c {
            "n" => Some(Pos::Noun),
            "v" => Some(Pos::Verb),
            "a" | "s" => Some(Pos::Adj),
            "r" => Some(Pos::Adv),
            _ => None,
        }
    }
}

/// A synset is addressed by its part of speech and byte offset in `data.<pos>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SynsetId {
    pub pos: Pos,
    pub offset: u64,
}

impl fmt::Display for SynsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08}-{}", self.offset, self.pos.letter())
    }
}

#[derive(Debug, Clone, Default)]
pub struct WordNetIndex {
    lemma_to_synsets: BTreeMap<(String, Pos), BTreeSet<SynsetId>>,
    synset_to_lemmas: BTreeMap<SynsetId, BTreeSet<String>>,
    synset_gloss: BTreeMap<SynsetId, String>,
}

impl WordNetIndex {
    pub fn lemma_to_synsets(&self) -> &BTreeMap<(String, Pos), BTreeSet<SynsetId>> {
        &self.lemma_to_synsets
    }

    pub fn synset_to_lemmas(&self) -> &BTreeMap<SynsetId, BTreeSet<String>> {
        &self.synset_to_lemmas
    }

    pub fn gloss(&self, id: SynsetId) -> Option<&str> {
        self.synset_gloss.get(&id).map(String::as_str)
    }

    pub fn lemmas(&self, id: SynsetId) -> Option<&BTreeSet<String>> {
        self.synset_to_lemmas.get(&id)
    }

    /// Number of senses (synsets) of a word across all parts of speech.
    pub fn sense_count(&self, word: &str) -> usize {
        synsets_of(self, word, None).len()
    }

    pub fn synset_count(&self) -> usize {
        self.synset_to_lemmas.len()
    }

    /// Checks that lemma and synset membership agree in both directions.
    pub fn check_symmetry(&self) -> Result<(), CorpusError> {
        for ((lemma, _), ids) in &self.lemma_to_synsets {
            for id in ids {
                match self.synset_to_lemmas.get(id) {
                    None => return Err(CorpusError::Inconsistent(format!("{lemma} lists missing synset {id}"))),
                    Some(ls) if !ls.contains(lemma) => {
                        return Err(CorpusError::Inconsistent(format!("{lemma} lists {id}, which does not list it back")))
                    }
                    _ => {}
                }
            }
        }
        for (id, lemmas) in &self.synset_to_lemmas {
            for lemma in lemmas {
                let listed = self
                    .lemma_to_synsets
                    .get(&(lemma.clone(), id.pos))
                    .is_some_and(|s| s.contains(id));
                if !listed {
                    return Err(CorpusError::Inconsistent(format!("{id} lists {lemma}, which does not list it back")));
                }
            }
        }
        Ok(())
    }
}

/// Case-insensitive lookup; underscores and spaces are interchangeable.
/// With `pos == None` the result is the union over all parts of speech.
pub fn synsets_of(index: &WordNetIndex, token: &str, pos: Option<Pos>) -> BTreeSet<SynsetId> {
    let key = normalize_lemma(token.trim());
    if key.is_empty() {
        return BTreeSet::new();
    }
    let mut out = BTreeSet::new();
    for p in Pos::ALL {
        if pos.is_some_and(|want| want != p) {
            continue;
        }
        if let Some(ids) = index.lemma_to_synsets.get(&(key.clone(), p)) {
            out.extend(ids.iter().copied());
        }
    }
    out
}

fn normalize_lemma(raw: &str) -> String {
    let base = match raw.find('(') {
        // adjective syntactic markers: (a), (p), (ip)
        Some(i) if raw.ends_with(')') => &raw[..i],
        _ => raw,
    };
    base.replace('_', " ").to_lowercase()
}

/// Parse a WNDB directory. `index.noun` and `data.noun` are required; the
/// other parts of speech are read when present.
pub fn load_wordnet(db_dir: &Path) -> Result<WordNetIndex, CorpusError> {
    let mut idx = WordNetIndex::default();
    for pos in Pos::ALL {
        let index_path = db_dir.join(format!("index.{}", pos.file_suffix()));
        let data_path = db_dir.join(format!("data.{}", pos.file_suffix()));
        let required = pos == Pos::Noun;
        if !required && !index_path.is_file() && !data_path.is_file() {
            continue;
        }
        let data_text = read_text(&data_path)?;
        parse_data(&data_text, pos, &format!("data.{}", pos.file_suffix()), &mut idx)?;
        let index_text = read_text(&index_path)?;
        parse_index(&index_text, pos, &format!("index.{}", pos.file_suffix()), &mut idx)?;
    }
    idx.check_symmetry()?;
    Ok(idx)
}

/// Iterates `(byte offset, line)` pairs; license/comment lines (leading
/// space) are skipped.
fn content_lines(text: &str) -> impl Iterator<Item = (u64, &str)> {
    let mut offset = 0u64;
    text.split_inclusive('\n').filter_map(move |raw| {
        let here = offset;
        offset += raw.len() as u64;
        let line = raw.strip_suffix('\n').unwrap_or(raw);
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() || line.starts_with(' ') {
            None
        } else {
            Some((here, line))
        }
    })
}

struct Fields<'a> {
    file: &'a str,
    offset: u64,
    it: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn err(&self, reason: impl Into<String>) -> CorpusError {
        CorpusError::ParseError { file: self.file.to_string(), offset: self.offset, reason: reason.into() }
    }

    fn next(&mut self, what: &str) -> Result<&'a str, CorpusError> {
        self.it.next().ok_or_else(|| self.err(format!("missing {what}")))
    }

    fn dec(&mut self, what: &str, width: Option<usize>) -> Result<u64, CorpusError> {
        let s = self.next(what)?;
        if width.is_some_and(|w| s.len() != w) || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(self.err(format!("bad {what} `{s}`")));
        }
        s.parse().map_err(|_| self.err(format!("bad {what} `{s}`")))
    }

    fn hex(&mut self, what: &str, width: usize) -> Result<u64, CorpusError> {
        let s = self.next(what)?;
        if s.len() != width {
            return Err(self.err(format!("bad {what} `{s}`")));
        }
        u64::from_str_radix(s, 16).map_err(|_| self.err(format!("bad {what} `{s}`")))
    }
}

fn parse_index(text: &str, pos: Pos, file: &str, idx: &mut WordNetIndex) -> Result<(), CorpusError> {
    for (offset, line) in content_lines(text) {
        let mut f = Fields { file, offset, it: line.split_whitespace() };
        let lemma = normalize_lemma(f.next("lemma")?);
        let p = f.next("pos")?;
        if Pos::from_letter(p) != Some(pos) {
            return Err(f.err(format!("pos `{p}` does not belong in {file}")));
        }
        let synset_cnt = f.dec("synset_cnt", None)?;
        let p_cnt = f.dec("p_cnt", None)?;
        for _ in 0..p_cnt {
            f.next("ptr_symbol")?;
        }
        let sense_cnt = f.dec("sense_cnt", None)?;
        if sense_cnt != synset_cnt {
            return Err(f.err("sense_cnt differs from synset_cnt"));
        }
        f.dec("tagsense_cnt", None)?;
        let mut ids = BTreeSet::new();
        for _ in 0..synset_cnt {
            ids.insert(SynsetId { pos, offset: f.dec("synset_offset", Some(8))? });
        }
        if let Some(extra) = f.it.next() {
            return Err(f.err(format!("trailing field `{extra}`")));
        }
        idx.lemma_to_synsets.entry((lemma, pos)).or_default().extend(ids);
    }
    Ok(())
}

fn parse_data(text: &str, pos: Pos, file: &str, idx: &mut WordNetIndex) -> Result<(), CorpusError> {
    for (offset, line) in content_lines(text) {
        let (body, gloss) = match line.find(" | ") {
            Some(i) => (&line[..i], line[i + 3..].trim_end()),
            None => (line.trim_end(), ""),
        };
        let mut f = Fields { file, offset, it: body.split_whitespace() };
        let synset_offset = f.dec("synset_offset", Some(8))?;
        if synset_offset != offset {
            return Err(f.err(format!("synset_offset {synset_offset:08} does not match line position")));
        }
        f.dec("lex_filenum", Some(2))?;
        let ss_type = f.next("ss_type")?;
        if Pos::from_letter(ss_type) != Some(pos) {
            return Err(f.err(format!("ss_type `{ss_type}` does not belong in {file}")));
        }
        let w_cnt = f.hex("w_cnt", 2)?;
        if w_cnt == 0 {
            return Err(f.err("synset without words"));
        }
        let mut lemmas = BTreeSet::new();
        for _ in 0..w_cnt {
            lemmas.insert(normalize_lemma(f.next("word")?));
            f.hex("lex_id", 1)?;
        }
        let p_cnt = f.dec("p_cnt", Some(3))?;
        for _ in 0..p_cnt {
            f.next("pointer_symbol")?;
            f.dec("pointer offset", Some(8))?;
            let p = f.next("pointer pos")?;
            if Pos::from_letter(p).is_none() {
                return Err(f.err(format!("bad pointer pos `{p}`")));
            }
            f.hex("source/target", 4)?;
        }
        if pos == Pos::Verb {
            let f_cnt = f.dec("f_cnt", Some(2))?;
            for _ in 0..f_cnt {
                if f.next("frame marker")? != "+" {
                    return Err(f.err("verb frame must start with `+`"));
                }
                f.dec("f_num", Some(2))?;
                f.hex("w_num", 2)?;
            }
        }
        if let Some(extra) = f.it.next() {
            return Err(f.err(format!("trailing field `{extra}`")));
        }
        let id = SynsetId { pos, offset };
        idx.synset_to_lemmas.insert(id, lemmas);
        idx.synset_gloss.insert(id, gloss.to_string());
    }
    Ok(())
}
