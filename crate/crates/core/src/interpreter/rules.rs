//! Tagger-free prompt parsing: split on relation phrases and conjunctions,
//! read counts and modifiers off each noun phrase.

use super::lexicon::*;
use crate::gateway::schema::DecompositionReply;
use crate::scene::{Attribute, ObjectDescriptor, Relation, RelationKind, COUNT_KEY, FREEFORM_RELATION_KEY};

/// Counts up to this many expand into distinct descriptors.
pub const COUNT_EXPANSION_CAP: u32 = 12;

pub const DEFAULT_BACKGROUND: &str = "a simple, uncluttered background";

#[derive(Debug, Clone, PartialEq)]
enum Item {
    Word(String),
    Rel(RelationKind),
    Free(String),
    Conj { comma: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Link {
    Spatial(RelationKind, f64),
    Freeform(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mention {
    pub name: String,
    pub count: u32,
    pub attributes: Vec<Attribute>,
    pub(crate) links: Vec<(usize, Link)>,
}

#[derive(Debug, Clone, PartialEq)]
enum Phrase {
    Object(Mention),
    Scene(String),
    Position(String),
    Pronoun,
}

/// Result of parsing one prompt.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedPrompt {
    pub mentions: Vec<Mention>,
    pub background: Option<String>,
    pub spatial_cue: bool,
    pub count_cue: bool,
}

impl ParsedPrompt {
    pub fn object_count(&self) -> u32 {
        self.mentions.iter().map(|m| m.count).sum()
    }

    pub fn layout_aware(&self) -> bool {
        self.object_count() >= 2 || self.spatial_cue || self.count_cue
    }

    /// Builds mentions from a model decomposition. Relation targets are
    /// matched by name; phrases outside the closed vocabulary and targets that
    /// name no listed object become freeform attributes.
    pub fn from_reply(reply: &DecompositionReply) -> Self {
        let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let objects: Vec<_> = reply.objects.iter().filter(|o| !norm(&o.name).is_empty()).collect();
        let names: Vec<String> = objects.iter().map(|o| norm(&o.name)).collect();
        let find = |target: &str| {
            let t = norm(target);
            let t = t
                .trim_start_matches("the ")
                .trim_start_matches("a ")
                .trim_start_matches("an ");
            let t = t.split('#').next().unwrap_or(t).trim();
            names
                .iter()
                .position(|n| n == t)
                .or_else(|| names.iter().position(|n| singularize(n) == singularize(t)))
        };
        let mut parsed = ParsedPrompt::default();
        for o in &objects {
            let count = o.count.unwrap_or(1).max(1);
            parsed.count_cue |= count >= 2;
            let attributes = o
                .attributes
                .iter()
                .filter(|(k, v)| !k.trim().is_empty() && !v.trim().is_empty())
                .map(|(k, v)| Attribute::new(k.trim(), v.trim()))
                .collect();
            parsed.mentions.push(Mention {
                name: norm(&o.name),
                count,
                attributes,
                links: Vec::new(),
            });
        }
        for (mi, o) in objects.iter().enumerate() {
            for r in &o.relations {
                let phrase = norm(&r.relation);
                match (find(&r.target), relation_from_phrase(&phrase)) {
                    (Some(t), Some(kind)) if t != mi => {
                        let margin = r.margin.filter(|m| m.is_finite()).unwrap_or(0.0).clamp(0.0, 0.5);
                        parsed.spatial_cue = true;
                        parsed.mentions[mi].links.push((t, Link::Spatial(kind, margin)));
                    }
                    (Some(t), None) if t != mi => parsed.mentions[mi].links.push((t, Link::Freeform(phrase))),
                    _ if !phrase.is_empty() => parsed.mentions[mi].attributes.push(Attribute::new(
                        FREEFORM_RELATION_KEY,
                        format!("{phrase} {}", norm(&r.target)).trim(),
                    )),
                    _ => {}
                }
            }
        }
        parsed
    }

    /// Expands mentions into descriptors with unique ids and resolved relations.
    pub fn descriptors(&self) -> Vec<ObjectDescriptor> {
        // Instance ids per mention.
        let mut bases: Vec<String> = Vec::new();
        let mut per_mention: Vec<Vec<usize>> = Vec::new();
        for m in &self.mentions {
            let n = if m.count > COUNT_EXPANSION_CAP {
                1
            } else {
                m.count.max(1)
            };
            let base = id_base(&m.name);
            let mut idx = Vec::new();
            for _ in 0..n {
                idx.push(bases.len());
                bases.push(base.clone());
            }
            per_mention.push(idx);
        }
        let mut seen_per_base = std::collections::BTreeMap::<&str, u32>::new();
        let totals = bases
            .iter()
            .fold(std::collections::BTreeMap::<&str, u32>::new(), |mut acc, b| {
                *acc.entry(b.as_str()).or_default() += 1;
                acc
            });
        let ids: Vec<String> = bases
            .iter()
            .map(|b| {
                if totals[b.as_str()] > 1 {
                    let k = seen_per_base.entry(b.as_str()).or_default();
                    *k += 1;
                    format!("{b}#{k}")
                } else {
                    b.clone()
                }
            })
            .collect();

        let mut out = Vec::new();
        for (mi, m) in self.mentions.iter().enumerate() {
            for &inst in &per_mention[mi] {
                let mut d = ObjectDescriptor::new(ids[inst].clone(), m.name.clone());
                d.attributes = m.attributes.clone();
                if m.count > COUNT_EXPANSION_CAP {
                    d.attributes.push(Attribute::new(COUNT_KEY, m.count.to_string()));
                }
                for (target, link) in &m.links {
                    if *target == mi {
                        continue;
                    }
                    let target_id = &ids[per_mention[*target][0]];
                    match link {
                        Link::Spatial(kind, margin) => d
                            .relations
                            .push(Relation::new(d.id.clone(), *kind, target_id.clone()).with_margin(*margin)),
                        Link::Freeform(verb) => d.attributes.push(Attribute::new(
                            FREEFORM_RELATION_KEY,
                            format!("{verb} {}", self.mentions[*target].name),
                        )),
                    }
                }
                out.push(d);
            }
        }
        out
    }
}

/// Id stem for a noun: alphanumerics kept, everything else becomes `_`.
/// `#` never survives, so generated `stem#k` ids cannot collide.
fn id_base(name: &str) -> String {
    let stem: String = name
        .trim()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    if stem.chars().all(|c| c == '_') {
        "object".to_string()
    } else {
        stem
    }
}

fn tokenize(text: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(text.len());
    for c in text.to_lowercase().chars() {
        match c {
            ',' | '.' | ';' | ':' | '!' | '?' | '\n' => cleaned.push_str(" , "),
            c if c.is_alphanumeric() || c == '-' => cleaned.push(c),
            '\'' => {}
            _ => cleaned.push(' '),
        }
    }
    cleaned
        .split_whitespace()
        .map(|t| t.trim_matches('-').to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Drops openings such as "a photo of" or "an oil painting of".
fn strip_framing(tokens: &[String]) -> &[String] {
    for (i, t) in tokens.iter().enumerate().take(6) {
        if FRAMING_NOUNS.contains(&t.as_str()) && tokens.get(i + 1).map(String::as_str) == Some("of") {
            return &tokens[i + 2..];
        }
    }
    tokens
}

fn match_phrase(tokens: &[String], i: usize, phrase: &str) -> usize {
    let words: Vec<&str> = phrase.split(' ').collect();
    if i + words.len() > tokens.len() {
        return 0;
    }
    if words.iter().zip(&tokens[i..]).all(|(w, t)| *w == t) {
        words.len()
    } else {
        0
    }
}

fn is_np_start(tok: Option<&String>) -> bool {
    match tok {
        Some(t) => DETERMINERS.contains(&t.as_str()) || number_value(t).is_some() || t == "it" || t == "them",
        None => false,
    }
}

fn items(tokens: &[String]) -> Vec<Item> {
    let mut out = Vec::new();
    let mut i = 0;
    'scan: while i < tokens.len() {
        for (phrase, kind) in RELATION_PHRASES {
            let n = match_phrase(tokens, i, phrase);
            if n > 0 {
                out.push(Item::Rel(*kind));
                i += n;
                continue 'scan;
            }
        }
        let t = tokens[i].as_str();
        if CONJUNCTIONS.contains(&t) {
            out.push(Item::Conj { comma: t == "," });
            i += 1;
            continue;
        }
        let freeform =
            FREEFORM_VERBS.contains(&t) || (t.len() > 4 && t.ends_with("ing") && is_np_start(tokens.get(i + 1)));
        if freeform && !POSTURE_VERBS.contains(&t) {
            let mut verb = t.to_string();
            if let Some(p) = tokens
                .get(i + 1)
                .filter(|p| matches!(p.as_str(), "with" | "at" | "to" | "into" | "toward" | "towards"))
            {
                verb = format!("{verb} {p}");
                i += 1;
            }
            out.push(Item::Free(verb));
            i += 1;
            continue;
        }
        if POSTURE_VERBS.contains(&t) {
            i += 1;
            continue;
        }
        out.push(Item::Word(t.to_string()));
        i += 1;
    }
    out
}

fn parse_phrase(words: &[String]) -> Option<Phrase> {
    let mut count: Option<u32> = None;
    let mut rest: Vec<&str> = Vec::new();
    let mut leading = true;
    for w in words {
        let w = w.as_str();
        if leading {
            if DETERMINERS.contains(&w) {
                continue;
            }
            if let Some(n) = number_value(w) {
                count = Some(count.map_or(n, |c| c * n));
                continue;
            }
            if w == "of" && count.is_some() {
                continue;
            }
            leading = false;
        }
        rest.push(w);
    }
    // "a cup of coffee": keep the head before "of" and the remainder as detail.
    let mut detail_suffix = None;
    if let Some(pos) = rest.iter().position(|w| *w == "of") {
        if pos > 0 && pos + 1 < rest.len() {
            detail_suffix = Some(rest[pos..].join(" "));
        }
        rest.truncate(pos);
    }
    if rest.is_empty() {
        return None;
    }
    if rest.len() == 1 && matches!(rest[0], "it" | "them" | "they" | "him" | "her") {
        return Some(Phrase::Pronoun);
    }
    let phrase_text = rest.join(" ");
    let (head, modifiers) = if rest.len() >= 2 && COMPOUND_NOUNS.contains(&rest[rest.len() - 2..].join(" ").as_str()) {
        (rest[rest.len() - 2..].join(" "), &rest[..rest.len() - 2])
    } else {
        (rest[rest.len() - 1].to_string(), &rest[..rest.len() - 1])
    };
    if POSITION_WORDS.contains(&head.as_str()) {
        return Some(Phrase::Position(head));
    }
    let singular_head = singularize(&head);
    if SCENE_NOUNS.contains(&head.as_str()) || SCENE_NOUNS.contains(&singular_head.as_str()) {
        let article = words
            .first()
            .filter(|w| DETERMINERS.contains(&w.as_str()))
            .map(|w| format!("{w} "))
            .unwrap_or_default();
        return Some(Phrase::Scene(format!("{article}{phrase_text}")));
    }
    let count = count.unwrap_or(1).max(1);
    let name = if count >= 2 { singular_head } else { head };
    let mut attributes: Vec<Attribute> = modifiers
        .iter()
        .filter(|w| !matches!(**w, "of" | "very" | "and"))
        .map(|w| Attribute::new(attribute_key(w), *w))
        .collect();
    if let Some(d) = detail_suffix {
        attributes.push(Attribute::new("detail", d));
    }
    Some(Phrase::Object(Mention {
        name,
        count,
        attributes,
        links: Vec::new(),
    }))
}

/// Parses `text` into object mentions, relations and a background phrase.
pub fn parse_prompt(text: &str) -> ParsedPrompt {
    let tokens = tokenize(text);
    let tokens = strip_framing(&tokens);
    let items = items(tokens);

    // Split into (connector, words) segments.
    let mut segments: Vec<(Option<Item>, Vec<String>)> = vec![(None, Vec::new())];
    for it in items {
        match it {
            Item::Word(w) => {
                let current = &mut segments.last_mut().expect("non-empty").1;
                // A determiner or numeral after a noun starts a new phrase:
                // "a bicycle leaning against a tree", "cats two dogs".
                let opens = DETERMINERS.contains(&w.as_str()) || number_value(&w).is_some();
                let has_head = current
                    .iter()
                    .any(|c| !DETERMINERS.contains(&c.as_str()) && number_value(c).is_none() && c != "of");
                if opens && has_head && current.last().is_some_and(|c| c != "of") {
                    segments.push((None, vec![w]));
                } else {
                    current.push(w);
                }
            }
            other => segments.push((Some(other), Vec::new())),
        }
    }

    let mut parsed = ParsedPrompt::default();
    // Index of the mention that the next relation would attach to.
    let mut last_subject: Option<usize> = None;
    let mut pending: Option<(usize, Link)>;
    for (connector, words) in segments {
        match &connector {
            Some(Item::Rel(kind)) => pending = last_subject.map(|s| (s, Link::Spatial(*kind, 0.0))),
            Some(Item::Free(verb)) => pending = last_subject.map(|s| (s, Link::Freeform(verb.clone()))),
            Some(Item::Conj { .. }) | None | Some(Item::Word(_)) => pending = None,
        }
        let style_tag = matches!(connector, Some(Item::Conj { comma: true }))
            && !parsed.mentions.is_empty()
            && words
                .first()
                .is_some_and(|w| !DETERMINERS.contains(&w.as_str()) && number_value(w).is_none())
            && words.last().is_some_and(|w| STYLE_NOUNS.contains(&w.as_str()));
        if style_tag {
            continue;
        }
        let Some(phrase) = parse_phrase(&words) else {
            continue;
        };
        match phrase {
            Phrase::Object(m) => {
                let idx = parsed.mentions.len();
                parsed.count_cue |= m.count >= 2;
                parsed.mentions.push(m);
                if let Some((subject, link)) = pending.take() {
                    if matches!(link, Link::Spatial(..)) {
                        parsed.spatial_cue = true;
                    }
                    parsed.mentions[subject].links.push((idx, link));
                }
                last_subject = Some(idx);
            }
            Phrase::Pronoun => {
                if let Some((subject, link)) = pending.take() {
                    // Refers to the closest earlier mention other than the subject.
                    if let Some(target) = (0..parsed.mentions.len()).rev().find(|&i| i != subject) {
                        if matches!(link, Link::Spatial(..)) {
                            parsed.spatial_cue = true;
                        }
                        parsed.mentions[subject].links.push((target, link));
                    }
                }
            }
            Phrase::Scene(s) => {
                if parsed.background.is_none() {
                    parsed.background = Some(s);
                }
            }
            Phrase::Position(p) => {
                if let Some((subject, _)) = pending.take() {
                    parsed.mentions[subject].attributes.push(Attribute::new("position", p));
                    parsed.spatial_cue = true;
                }
            }
        }
    }
    parsed
}

/// Caption assembled from name and attributes when no model is available.
pub fn fallback_caption(d: &ObjectDescriptor) -> String {
    if d.attributes.is_empty() {
        return d.name.clone();
    }
    let mut modifiers = Vec::new();
    let mut suffixes = Vec::new();
    let mut count = None;
    for a in &d.attributes {
        match a.key.as_str() {
            FREEFORM_RELATION_KEY => suffixes.push(a.value.clone()),
            "position" => suffixes.push(format!("on the {}", a.value)),
            "detail" if a.value.starts_with("of ") => suffixes.push(a.value.clone()),
            COUNT_KEY => count = Some(a.value.clone()),
            _ => modifiers.push(a.value.clone()),
        }
    }
    let core = modifiers
        .into_iter()
        .chain(std::iter::once(d.name.clone()))
        .collect::<Vec<_>>()
        .join(" ");
    let lead = match count {
        Some(n) => n,
        None if core.starts_with(['a', 'e', 'i', 'o', 'u']) => "an".to_string(),
        None => "a".to_string(),
    };
    let mut caption = format!("{lead} {core}");
    for s in suffixes {
        caption.push(' ');
        caption.push_str(&s);
    }
    caption
}
