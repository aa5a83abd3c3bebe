//! Rule-based story splitter.
//!
//! The story is cut at every sentence end, temporal connector and comma.
//! While there are more pieces than requested, the weakest boundary is
//! removed (commas before connectors before sentence ends, then the shortest
//! merged result, then the leftmost). Pieces without a subject get the
//! story's subject prefixed.

use crate::{clean_whitespace, finish_sentence, PromptError, PromptRequest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Boundary {
    Comma,
    Connector,
    Sentence,
}

#[derive(Clone, Debug)]
struct Piece {
    text: String,
    /// Boundary before this piece; `None` for the first piece.
    before: Option<Boundary>,
    sentence_start: bool,
}

/// Leading words that mark a new event and are dropped from the prompt.
const CONNECTORS: &[&str] = &[
    "and then",
    "after that",
    "soon after",
    "afterwards",
    "afterward",
    "then",
    "finally",
    "next",
    "later",
    "and",
];

/// Connectors that split a clause even without a preceding comma.
const INLINE_CONNECTORS: &[&str] = &[" and then ", " after that ", " afterwards ", " then "];

const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "his", "her", "their", "its", "my", "our",
    "your", "some",
];

const PRONOUNS: &[&str] = &[
    "he", "she", "it", "they", "we", "i", "you", "someone", "everyone",
];

const PREPOSITIONS: &[&str] = &[
    "in", "on", "at", "with", "of", "from", "near", "by", "under", "over", "across", "through",
    "into", "onto", "and",
];

fn strip_connectors(s: &str) -> &str {
    let mut s = s.trim();
    loop {
        let lower = s.to_lowercase();
        let hit = CONNECTORS.iter().find(|c| {
            lower.starts_with(*c)
                && lower[c.len()..]
                    .chars()
                    .next()
                    .is_none_or(|ch| !ch.is_alphanumeric())
        });
        match hit {
            Some(c) => s = s[c.len()..].trim_start_matches([',', ' ']),
            None => return s,
        }
    }
}

fn starts_with_connector(s: &str) -> bool {
    strip_connectors(s).len() != s.trim().len()
}

fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (i, &(pos, c)) in chars.iter().enumerate() {
        let at_end = i + 1 == chars.len() || chars[i + 1].1.is_whitespace();
        if matches!(c, '.' | '!' | '?') && at_end {
            out.push(&text[start..pos]);
            start = pos + c.len_utf8();
        }
    }
    out.push(&text[start..]);
    out.into_iter()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

fn split_inline(part: &str) -> Vec<&str> {
    let lower = part.to_lowercase();
    let mut cut = None;
    for c in INLINE_CONNECTORS {
        // a connector at position 0 only opens the clause
        if let Some((i, _)) = lower.match_indices(c).find(|&(i, _)| i > 0) {
            if cut.is_none_or(|j| i < j) {
                cut = Some(i);
            }
        }
    }
    match cut {
        Some(i) if i > 0 => {
            let mut rest = split_inline(&part[i + 1..]);
            rest.insert(0, &part[..i]);
            rest
        }
        _ => vec![part],
    }
}

fn pieces(story: &str) -> Vec<Piece> {
    let mut out: Vec<Piece> = Vec::new();
    for sentence in sentences(story) {
        let mut first_in_sentence = true;
        for (k, part) in sentence.split([',', ';']).enumerate() {
            let sep = if k == 0 { None } else { Some(Boundary::Comma) };
            for (j, clause) in split_inline(part).into_iter().enumerate() {
                let mut before = if j == 0 {
                    sep
                } else {
                    Some(Boundary::Connector)
                };
                if starts_with_connector(clause) && before.is_some() {
                    before = Some(Boundary::Connector);
                }
                if first_in_sentence && !out.is_empty() {
                    before = Some(Boundary::Sentence);
                }
                if strip_connectors(clause).is_empty() {
                    // a bare connector such as "Then," only strengthens the next cut
                    continue;
                }
                let before = if out.is_empty() {
                    None
                } else {
                    before.or(Some(Boundary::Comma))
                };
                out.push(Piece {
                    text: clause.trim().to_string(),
                    before,
                    sentence_start: first_in_sentence,
                });
                first_in_sentence = false;
            }
        }
    }
    out
}

fn merge_to(mut pieces: Vec<Piece>, n: usize) -> Vec<Piece> {
    while pieces.len() > n {
        let best = (1..pieces.len())
            .min_by_key(|&i| {
                let len = pieces[i - 1].text.len() + pieces[i].text.len();
                (pieces[i].before, len, i)
            })
            .expect("at least two pieces");
        let next = pieces.remove(best);
        let prev = &mut pieces[best - 1];
        let mut tail = next.text;
        if next.sentence_start {
            let mut cs = tail.chars();
            if let Some(first) = cs.next() {
                tail = format!("{}{}", first.to_lowercase(), cs.as_str());
            }
        }
        prev.text = format!("{}, {}", prev.text, tail);
    }
    pieces
}

fn is_verb_like(word: &str) -> bool {
    let w = word.to_lowercase();
    (w.ends_with('s') && !w.ends_with("ss")) || w.ends_with("ed") || w.ends_with("ing")
}

/// Subject noun phrase of a clause such as "The brown dog" or "Elmo", when
/// one can be recognised.
pub fn story_subject(clause: &str) -> Option<String> {
    let words: Vec<&str> = strip_connectors(clause).split_whitespace().collect();
    let first = *words.first()?;
    let lower = first.to_lowercase();
    if DETERMINERS.contains(&lower.as_str()) {
        let mut phrase = vec![first];
        for (k, w) in words.iter().skip(1).take(4).enumerate() {
            let wl = w.to_lowercase();
            if k > 0 && (PREPOSITIONS.contains(&wl.as_str()) || is_verb_like(w)) {
                break;
            }
            phrase.push(w);
            // a plural head noun ends the phrase
            if wl.ends_with('s') {
                break;
            }
        }
        return (phrase.len() > 1).then(|| phrase.join(" "));
    }
    if PRONOUNS.contains(&lower.as_str()) {
        return None;
    }
    if first.chars().next().is_some_and(char::is_uppercase) {
        let names: Vec<&str> = words
            .iter()
            .take_while(|w| w.chars().next().is_some_and(char::is_uppercase))
            .copied()
            .collect();
        // sentence-initial capitals followed by a lowercase verb: keep only the name
        return Some(names[..names.len().min(2)].join(" "));
    }
    None
}

fn has_subject(clause: &str, subject: &str, sentence_start: bool) -> bool {
    let words: Vec<String> = clause
        .split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .collect();
    let Some(first) = words.first() else {
        return true;
    };
    if DETERMINERS.contains(&first.as_str())
        || words.iter().take(3).any(|w| PRONOUNS.contains(&w.as_str()))
    {
        return true;
    }
    let head = subject
        .split_whitespace()
        .last()
        .unwrap_or("")
        .to_lowercase();
    if !head.is_empty() && words.contains(&head) {
        return true;
    }
    let capitalised = clause.chars().next().is_some_and(char::is_uppercase);
    capitalised && !sentence_start
}

/// Deterministic offline split into exactly `req.num_prompts` prompts.
pub fn split_offline(req: &PromptRequest) -> Result<Vec<String>, PromptError> {
    req.validate()?;
    let story = clean_whitespace(&req.story);
    let prompts = if req.num_prompts == 1 {
        vec![finish_sentence(&story)]
    } else {
        let all = pieces(&story);
        if all.len() < req.num_prompts {
            return Err(PromptError::Unsatisfiable {
                requested: req.num_prompts,
                available: all.len(),
            });
        }
        let merged = merge_to(all, req.num_prompts);
        let subject = story_subject(&merged[0].text);
        merged
            .iter()
            .map(|p| {
                let body = strip_connectors(&p.text);
                let after_connector = body.len() != p.text.trim().len();
                match &subject {
                    Some(s) if !has_subject(body, s, p.sentence_start && !after_connector) => {
                        let mut cs = body.chars();
                        let lowered = cs
                            .next()
                            .map(|c| c.to_lowercase().chain(cs).collect::<String>());
                        finish_sentence(&format!("{s} {}", lowered.unwrap_or_default()))
                    }
                    _ => finish_sentence(body),
                }
            })
            .collect()
    };
    req.check_output(&prompts)?;
    Ok(prompts)
}
