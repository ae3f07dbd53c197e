//! Dependency parses and parse providers.
//!
//! The rule-based template converter consumes Universal Dependencies style
//! parses. Parsing itself always happens outside this crate (a real deployment
//! runs a neural parser); here a parse is data — tokens with UPOS tags, head
//! indices, and relation labels — plus a provider trait and a file-backed
//! provider that serves pre-parsed questions from a CoNLL-U file.

use std::collections::HashMap;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseToken {
    pub form: String,
    /// Universal POS tag (NOUN, VERB, AUX, PRON, DET, ADV, ADP, PUNCT, ...).
    pub upos: String,
    /// Head token index (0-based); `None` for the root.
    pub head: Option<usize>,
    /// Universal dependency relation (nsubj, obj, cop, aux, det, advmod, ...).
    pub rel: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseResult {
    tokens: Vec<ParseToken>,
    root: usize,
}

impl ParseResult {
    /// Validate and build: exactly one root, heads in range, no self-heads.
    pub fn new(tokens: Vec<ParseToken>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Parse("empty token list".into()));
        }
        let mut root = None;
        for (i, tok) in tokens.iter().enumerate() {
            match tok.head {
                None => {
                    if root.replace(i).is_some() {
                        return Err(Error::Parse("more than one root token".into()));
                    }
                }
                Some(h) => {
                    if h >= tokens.len() {
                        return Err(Error::Parse(format!(
                            "token {i} ({:?}) has out-of-range head {h}",
                            tok.form
                        )));
                    }
                    if h == i {
                        return Err(Error::Parse(format!(
                            "token {i} ({:?}) is its own head",
                            tok.form
                        )));
                    }
                }
            }
            if tok.rel.is_empty() {
                return Err(Error::Parse(format!("token {i} has an empty relation")));
            }
        }
        let root = root.ok_or_else(|| Error::Parse("no root token".into()))?;
        Ok(ParseResult { tokens, root })
    }

    pub fn tokens(&self) -> &[ParseToken] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn token(&self, i: usize) -> &ParseToken {
        &self.tokens[i]
    }

    /// Direct dependents of `head`, in surface order.
    pub fn children(&self, head: usize) -> Vec<usize> {
        (0..self.tokens.len())
            .filter(|&i| self.tokens[i].head == Some(head))
            .collect()
    }

    /// First direct dependent of `head` with the given relation (exact or
    /// subtype, so "nsubj" also finds "nsubj:pass").
    pub fn child_with_rel(&self, head: usize, rel: &str) -> Option<usize> {
        self.children(head).into_iter().find(|&i| {
            let r = &self.tokens[i].rel;
            r == rel || r.starts_with(&format!("{rel}:"))
        })
    }

    /// All token indices in the subtree rooted at `i`, sorted by position.
    pub fn subtree(&self, i: usize) -> Vec<usize> {
        let mut members = vec![i];
        let mut frontier = vec![i];
        while let Some(h) = frontier.pop() {
            for c in self.children(h) {
                members.push(c);
                frontier.push(c);
            }
        }
        members.sort_unstable();
        members
    }

    /// Surface text of a set of token indices (single-space joined).
    pub fn text_of(&self, indices: &[usize]) -> String {
        indices
            .iter()
            .map(|&i| self.tokens[i].form.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Something that can produce a dependency parse for a question.
pub trait ParseProvider: Send + Sync {
    fn parse(&self, question: &str) -> Result<ParseResult>;
}

impl<T: ParseProvider + ?Sized> ParseProvider for &T {
    fn parse(&self, question: &str) -> Result<ParseResult> {
        (**self).parse(question)
    }
}

impl ParseProvider for Box<dyn ParseProvider> {
    fn parse(&self, question: &str) -> Result<ParseResult> {
        (**self).parse(question)
    }
}

/// Provider backed by a CoNLL-U file of pre-parsed questions, matched by the
/// `# text = ...` comment of each sentence block.
pub struct FileParseProvider {
    parses: HashMap<String, ParseResult>,
}

impl FileParseProvider {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_conllu(&text)
            .map_err(|e| Error::malformed("conllu file", path, e.to_string()))
    }

    pub fn from_conllu(text: &str) -> Result<Self> {
        let mut parses = HashMap::new();
        for block in text.split("\n\n") {
            if block.trim().is_empty() {
                continue;
            }
            let (sentence_text, parse) = parse_conllu_block(block)?;
            let sentence_text = sentence_text.ok_or_else(|| {
                Error::Parse("sentence block without a '# text =' comment".into())
            })?;
            if parses.insert(sentence_text.clone(), parse).is_some() {
                return Err(Error::Parse(format!(
                    "duplicate parse for sentence {sentence_text:?}"
                )));
            }
        }
        if parses.is_empty() {
            return Err(Error::Parse("no sentences in conllu input".into()));
        }
        Ok(FileParseProvider { parses })
    }

    pub fn len(&self) -> usize {
        self.parses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parses.is_empty()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.parses.keys().map(String::as_str)
    }
}

impl ParseProvider for FileParseProvider {
    fn parse(&self, question: &str) -> Result<ParseResult> {
        self.parses
            .get(question)
            .cloned()
            .ok_or_else(|| Error::Parse(format!("no stored parse for question {question:?}")))
    }
}

/// Parse one CoNLL-U sentence block (10 tab-separated columns per token;
/// comment lines start with '#'). Multiword-token ranges ("3-4") and empty
/// nodes ("5.1") are skipped. Returns the `# text` comment if present.
pub fn parse_conllu_block(block: &str) -> Result<(Option<String>, ParseResult)> {
    let mut text = None;
    // (form, upos, 1-based head, rel)
    let mut rows: Vec<(String, String, usize, String)> = Vec::new();
    for line in block.lines() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(t) = comment.trim().strip_prefix("text =") {
                text = Some(t.trim().to_string());
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 8 {
            return Err(Error::Parse(format!(
                "conllu line has {} columns, need at least 8: {line:?}",
                cols.len()
            )));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue; // multiword token range or empty node
        }
        let expected: usize = id
            .parse()
            .map_err(|_| Error::Parse(format!("bad token id {id:?}")))?;
        if expected != rows.len() + 1 {
            return Err(Error::Parse(format!(
                "token ids not consecutive: expected {}, found {id}",
                rows.len() + 1
            )));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| Error::Parse(format!("bad head {:?} for token {id}", cols[6])))?;
        rows.push((
            cols[1].to_string(),
            cols[3].to_string(),
            head,
            cols[7].to_string(),
        ));
    }
    let tokens: Vec<ParseToken> = rows
        .into_iter()
        .map(|(form, upos, head, rel)| ParseToken {
            form,
            upos,
            head: if head == 0 { None } else { Some(head - 1) },
            rel,
        })
        .collect();
    Ok((text, ParseResult::new(tokens)?))
}
