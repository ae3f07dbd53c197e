//! Rule-based question → masked-statement conversion over dependency parses.
//!
//! The rules cover the question shapes that dominate VQA data:
//!
//! * predicate wh-copulars ("What color is the fence?" → "The fence is
//!   [mask].")
//! * subject wh ("Which hand holds the racket?" → "The [mask] hand holds the
//!   racket.")
//! * object/oblique wh with subject-auxiliary inversion, including
//!   do-support removal with re-conjugation ("What does the sign say?" →
//!   "The sign says [mask].")
//! * "how many/much" in subject or object position
//! * "why" questions, which take a trailing "because of [mask]"
//!
//! Yes/no questions are recognized (auxiliary-initial, no wh-word) and
//! rejected with [`Error::NoMaskSlot`] — they have no answer span and take
//! the positive/negative statement route instead. Anything else fails with
//! [`Error::UnsupportedQuestion`]. The conversion is a pure function of the
//! parse: no randomness, no model calls.

use std::collections::BTreeSet;

use super::{MaskedTemplate, TemplateSource, MASK};
use crate::parse::{ParseProvider, ParseResult};
use crate::{Error, Result};

const WH_WORDS: [&str; 9] = [
    "what", "which", "who", "whom", "whose", "where", "when", "why", "how",
];

/// Parse `question` with the provider and convert it.
pub fn generate_template_parsing(
    provider: &dyn ParseProvider,
    question: &str,
) -> Result<MaskedTemplate> {
    let parse = provider.parse(question)?;
    let statement = question_to_statement(&parse)?;
    MaskedTemplate::new(statement, TemplateSource::Parsing, None)
}

/// Convert a parsed question into a masked statement.
pub fn question_to_statement(parse: &ParseResult) -> Result<String> {
    Converter { parse }.convert()
}

struct Converter<'a> {
    parse: &'a ParseResult,
}

/// A question rearranged into declarative order: subject, then any moved
/// auxiliary, then the remaining words (with do-support folded into the
/// re-conjugated main verb).
struct Declarative {
    words: Vec<String>,
    /// Original token index per word in the tail segment, aligned with
    /// `words[tail_start..]`.
    tail_start: usize,
    tail_indices: Vec<usize>,
}

impl<'a> Converter<'a> {
    fn convert(&self) -> Result<String> {
        let content = self.content_tokens();
        if content.is_empty() {
            return Err(Error::Parse("question has no content tokens".into()));
        }
        let wh = content
            .iter()
            .copied()
            .find(|&i| WH_WORDS.contains(&self.form_lower(i).as_str()));
        let Some(wh) = wh else {
            let first = content[0];
            return if self.parse.token(first).upos == "AUX" {
                Err(Error::NoMaskSlot(self.question_text()))
            } else {
                Err(Error::UnsupportedQuestion(self.question_text()))
            };
        };

        match self.form_lower(wh).as_str() {
            "why" => self.convert_why(wh),
            "how" => {
                let next = content.iter().copied().find(|&i| i > wh);
                match next {
                    Some(n) if matches!(self.form_lower(n).as_str(), "many" | "much") => {
                        self.convert_how_many(wh, n)
                    }
                    _ => self.convert_general(wh),
                }
            }
            _ => self.convert_general(wh),
        }
    }

    // ---- handlers -------------------------------------------------------

    /// "Why ..." → declarative order plus a trailing "because of [mask]".
    fn convert_why(&self, wh: usize) -> Result<String> {
        let mut exclude = BTreeSet::new();
        exclude.insert(wh);
        let mut decl = self.declarativize(&exclude)?;
        decl.words.push(format!("because of {MASK}"));
        Ok(render(&decl.words))
    }

    /// "How many/much ..." — the quantified phrase becomes the mask.
    fn convert_how_many(&self, how: usize, many: usize) -> Result<String> {
        let quantified = self.parse.token(many).head.ok_or_else(|| {
            Error::Parse("quantifier is the root of the question".into())
        })?;
        let q_rel = &self.parse.token(quantified).rel;
        let q_is_verb = self.parse.token(quantified).upos == "VERB";

        if !q_is_verb && (q_rel.starts_with("nsubj")) {
            // Subject position: swap "how many" for the mask in place.
            let mut words = Vec::new();
            for i in self.content_tokens() {
                if i == how {
                    words.push(MASK.to_string());
                } else if i == many {
                    continue;
                } else {
                    words.push(self.parse.token(i).form.clone());
                }
            }
            return Ok(render(&words));
        }

        // Object/oblique position (or "how much" hanging off the verb):
        // declarativize and insert "[mask] <noun phrase>" where the object
        // belongs.
        let (exclude, mask_phrase, attach_to_verb) = if q_is_verb {
            let exclude: BTreeSet<usize> = [how, many].into_iter().collect();
            (exclude, MASK.to_string(), false)
        } else {
            let phrase = self.parse.subtree(quantified);
            let rest: Vec<usize> = phrase
                .iter()
                .copied()
                .filter(|&i| i != how && i != many)
                .collect();
            let exclude: BTreeSet<usize> = phrase.into_iter().collect();
            let mask_phrase = format!("{MASK} {}", self.parse.text_of(&rest));
            let attach = q_rel == "obj" || q_rel == "iobj";
            (exclude, mask_phrase, attach)
        };
        let decl = self.declarativize(&exclude)?;
        Ok(render(&insert_mask(decl, mask_phrase, attach_to_verb, self.parse)))
    }

    fn convert_general(&self, wh: usize) -> Result<String> {
        let root = self.parse.root();
        let cop = self.parse.child_with_rel(root, "cop");
        let wh_tok = self.parse.token(wh);

        // Case A: predicate wh-copular. The wh word is (or modifies) the
        // copular predicate; subject + copula + mask.
        let wh_modifies_root = wh_tok.head == Some(root)
            && (matches!(wh_tok.rel.as_str(), "det" | "amod")
                || wh_tok.rel.starts_with("nmod:poss"));
        if let Some(cop) = cop.filter(|_| wh == root || wh_modifies_root) {
            let subj = self.parse.child_with_rel(root, "nsubj").ok_or_else(|| {
                Error::Parse(format!(
                    "copular question without a subject: {}",
                    self.question_text()
                ))
            })?;
            let mut words: Vec<String> = self
                .parse
                .subtree(subj)
                .into_iter()
                .filter(|&i| self.parse.token(i).upos != "PUNCT")
                .map(|i| self.parse.token(i).form.clone())
                .collect();
            words.push(self.parse.token(cop).form.clone());
            words.push(MASK.to_string());
            return Ok(render(&words));
        }

        // Case B: subject wh — either the wh word is the subject itself or it
        // determines the subject noun. No inversion to undo; substitute.
        let subject_noun = if wh_tok.rel.starts_with("nsubj") {
            Some(wh)
        } else if matches!(wh_tok.rel.as_str(), "det" | "amod")
            || wh_tok.rel.starts_with("nmod:poss")
        {
            wh_tok.head.filter(|&h| self.parse.token(h).rel.starts_with("nsubj"))
        } else {
            None
        };
        if let Some(_n) = subject_noun {
            let mut words = Vec::new();
            for i in self.content_tokens() {
                if i == wh {
                    words.push(format!("The {MASK}"));
                } else {
                    words.push(self.parse.token(i).form.clone());
                }
            }
            return Ok(render(&words));
        }

        // Case C: non-subject wh with subject-auxiliary inversion.
        let (exclude, mask_phrase, role) = if matches!(wh_tok.rel.as_str(), "det" | "amod")
            || wh_tok.rel.starts_with("nmod:poss")
        {
            let noun = wh_tok.head.expect("det/amod always has a head");
            let phrase = self.parse.subtree(noun);
            let rest: Vec<usize> = phrase.iter().copied().filter(|&i| i != wh).collect();
            let exclude: BTreeSet<usize> = phrase.into_iter().collect();
            let mask_phrase = format!("{MASK} {}", self.parse.text_of(&rest));
            (exclude, mask_phrase, self.parse.token(noun).rel.clone())
        } else {
            let exclude: BTreeSet<usize> = [wh].into_iter().collect();
            (exclude, MASK.to_string(), wh_tok.rel.clone())
        };
        let attach_to_verb = role == "obj" || role == "iobj";
        let decl = self.declarativize(&exclude)?;
        Ok(render(&insert_mask(decl, mask_phrase, attach_to_verb, self.parse)))
    }

    // ---- shared machinery ------------------------------------------------

    /// Rebuild declarative word order: subject subtree, then any auxiliary
    /// that sat before the subject (deleted and folded into the verb for
    /// do-support), then everything else in surface order. `exclude` tokens
    /// (the wh-phrase) are dropped.
    fn declarativize(&self, exclude: &BTreeSet<usize>) -> Result<Declarative> {
        let root = self.parse.root();
        let subj = self.parse.child_with_rel(root, "nsubj").ok_or_else(|| {
            Error::Parse(format!(
                "cannot undo inversion without a subject: {}",
                self.question_text()
            ))
        })?;
        let subject: Vec<usize> = self
            .parse
            .subtree(subj)
            .into_iter()
            .filter(|&i| self.parse.token(i).upos != "PUNCT" && !exclude.contains(&i))
            .collect();
        let subject_start = subject.first().copied().unwrap_or(0);

        let pre_aux: Vec<usize> = self
            .parse
            .children(root)
            .into_iter()
            .filter(|&i| {
                i < subject_start
                    && (self.parse.token(i).rel.starts_with("aux")
                        || self.parse.token(i).rel == "cop")
            })
            .collect();

        let do_fold = pre_aux.len() == 1
            && matches!(
                self.form_lower(pre_aux[0]).as_str(),
                "do" | "does" | "did"
            )
            && self.parse.token(root).upos == "VERB";

        let consumed: BTreeSet<usize> = subject
            .iter()
            .copied()
            .chain(pre_aux.iter().copied())
            .chain(exclude.iter().copied())
            .collect();

        let mut words: Vec<String> = subject
            .iter()
            .map(|&i| self.parse.token(i).form.clone())
            .collect();
        if !do_fold {
            for &i in &pre_aux {
                words.push(self.parse.token(i).form.clone());
            }
        }
        let tail_start = words.len();
        let mut tail_indices = Vec::new();
        for i in self.content_tokens() {
            if consumed.contains(&i) {
                continue;
            }
            let mut form = self.parse.token(i).form.clone();
            if do_fold && i == root {
                form = match self.form_lower(pre_aux[0]).as_str() {
                    "does" => third_singular(&form),
                    "did" => past_tense(&form),
                    _ => form, // "do": plural/base form is unchanged
                };
            }
            tail_indices.push(i);
            words.push(form);
        }
        Ok(Declarative {
            words,
            tail_start,
            tail_indices,
        })
    }

    fn content_tokens(&self) -> Vec<usize> {
        (0..self.parse.len())
            .filter(|&i| self.parse.token(i).upos != "PUNCT")
            .collect()
    }

    fn form_lower(&self, i: usize) -> String {
        self.parse.token(i).form.to_lowercase()
    }

    fn question_text(&self) -> String {
        self.parse.text_of(&self.content_tokens())
    }
}

/// Place the mask phrase in a declarativized question: directly after the
/// main verb (and a following particle) for objects, at the end otherwise.
fn insert_mask(
    decl: Declarative,
    mask_phrase: String,
    attach_to_verb: bool,
    parse: &ParseResult,
) -> Vec<String> {
    let mut words = decl.words;
    if attach_to_verb {
        let root = parse.root();
        if let Some(pos) = decl.tail_indices.iter().position(|&i| i == root) {
            let mut at = decl.tail_start + pos + 1;
            // keep a phrasal-verb particle glued to its verb
            if let Some(&next_idx) = decl.tail_indices.get(pos + 1) {
                if parse.token(next_idx).rel == "compound:prt" {
                    at += 1;
                }
            }
            words.insert(at, mask_phrase);
            return words;
        }
    }
    words.push(mask_phrase);
    words
}

/// Join words (clitics like "'s" attach without a space), capitalize the
/// first letter unless the statement opens with the mask, and finish with a
/// period.
fn render(words: &[String]) -> String {
    let mut out = String::new();
    for w in words {
        if w.is_empty() {
            continue;
        }
        if !out.is_empty() && !w.starts_with('\'') && w != "n't" {
            out.push(' ');
        }
        out.push_str(w);
    }
    if !out.starts_with(MASK) {
        let mut chars = out.chars();
        if let Some(first) = chars.next() {
            out = first.to_uppercase().collect::<String>() + chars.as_str();
        }
    }
    out.push('.');
    out
}

/// Third-person-singular present form of a base verb.
fn third_singular(base: &str) -> String {
    match base {
        "have" => return "has".to_string(),
        "be" => return "is".to_string(),
        "do" => return "does".to_string(),
        "go" => return "goes".to_string(),
        _ => {}
    }
    let lower = base.to_lowercase();
    if let Some(stem) = lower.strip_suffix('y') {
        let penult = stem.chars().last();
        if penult.is_some_and(|c| !"aeiou".contains(c)) {
            return format!("{stem}ies");
        }
    }
    if ["s", "sh", "ch", "x", "z", "o"]
        .iter()
        .any(|suf| lower.ends_with(suf))
    {
        return format!("{lower}es");
    }
    format!("{lower}s")
}

/// Simple past form of a base verb: irregular table, then -ed rules.
fn past_tense(base: &str) -> String {
    const IRREGULAR: [(&str, &str); 30] = [
        ("have", "had"),
        ("do", "did"),
        ("say", "said"),
        ("go", "went"),
        ("see", "saw"),
        ("eat", "ate"),
        ("wear", "wore"),
        ("hold", "held"),
        ("take", "took"),
        ("make", "made"),
        ("get", "got"),
        ("sit", "sat"),
        ("stand", "stood"),
        ("run", "ran"),
        ("ride", "rode"),
        ("come", "came"),
        ("buy", "bought"),
        ("think", "thought"),
        ("catch", "caught"),
        ("fly", "flew"),
        ("draw", "drew"),
        ("drink", "drank"),
        ("win", "won"),
        ("lose", "lost"),
        ("find", "found"),
        ("keep", "kept"),
        ("sleep", "slept"),
        ("leave", "left"),
        ("put", "put"),
        ("cost", "cost"),
    ];
    let lower = base.to_lowercase();
    if let Some((_, past)) = IRREGULAR.iter().find(|(b, _)| *b == lower) {
        return past.to_string();
    }
    if lower.ends_with('e') {
        return format!("{lower}d");
    }
    if let Some(stem) = lower.strip_suffix('y') {
        let penult = stem.chars().last();
        if penult.is_some_and(|c| !"aeiou".contains(c)) {
            return format!("{stem}ied");
        }
    }
    format!("{lower}ed")
}
