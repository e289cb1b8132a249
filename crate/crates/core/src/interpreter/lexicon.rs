//! Word lists used by the rule-based prompt parser.

use crate::scene::RelationKind;

/// Relation phrases, longest first so that greedy matching prefers
/// "in front of" over "in".
pub const RELATION_PHRASES: &[(&str, RelationKind)] = &[
    ("to the left of", RelationKind::LeftOf),
    ("on the left of", RelationKind::LeftOf),
    ("to the right of", RelationKind::RightOf),
    ("on the right of", RelationKind::RightOf),
    ("in front of", RelationKind::InFrontOf),
    ("on top of", RelationKind::OnTopOf),
    ("next to", RelationKind::NextTo),
    ("close to", RelationKind::NextTo),
    ("across from", RelationKind::NextTo),
    ("inside of", RelationKind::Inside),
    ("left of", RelationKind::LeftOf),
    ("right of", RelationKind::RightOf),
    ("underneath", RelationKind::Below),
    ("beneath", RelationKind::Below),
    ("below", RelationKind::Below),
    ("under", RelationKind::Below),
    ("above", RelationKind::Above),
    ("over", RelationKind::Above),
    ("atop", RelationKind::OnTopOf),
    ("on", RelationKind::OnTopOf),
    ("inside", RelationKind::Inside),
    ("within", RelationKind::Inside),
    ("in", RelationKind::Inside),
    ("beside", RelationKind::NextTo),
    ("alongside", RelationKind::NextTo),
    ("near", RelationKind::NextTo),
    ("by", RelationKind::NextTo),
    ("against", RelationKind::NextTo),
    ("around", RelationKind::NextTo),
    ("behind", RelationKind::Behind),
];

/// Extra spellings a model may use for the closed vocabulary.
pub const RELATION_SYNONYMS: &[(&str, RelationKind)] = &[
    ("left", RelationKind::LeftOf),
    ("right", RelationKind::RightOf),
    ("on top", RelationKind::OnTopOf),
    ("on-top-of", RelationKind::OnTopOf),
    ("sitting on", RelationKind::OnTopOf),
    ("standing on", RelationKind::OnTopOf),
    ("resting on", RelationKind::OnTopOf),
    ("lying on", RelationKind::OnTopOf),
    ("in-front-of", RelationKind::InFrontOf),
    ("front of", RelationKind::InFrontOf),
    ("infront of", RelationKind::InFrontOf),
    ("next-to", RelationKind::NextTo),
    ("adjacent to", RelationKind::NextTo),
    ("besides", RelationKind::NextTo),
    ("left-of", RelationKind::LeftOf),
    ("right-of", RelationKind::RightOf),
    ("contained in", RelationKind::Inside),
    ("in back of", RelationKind::Behind),
];

/// Verbs that relate two objects without fixing a geometric relation.
pub const FREEFORM_VERBS: &[&str] = &[
    "holding",
    "riding",
    "wearing",
    "eating",
    "chasing",
    "watching",
    "carrying",
    "playing",
    "looking",
    "hugging",
    "feeding",
    "reading",
    "drinking",
    "pulling",
    "pushing",
    "walking",
    "throwing",
    "catching",
    "kicking",
    "petting",
    "using",
    "driving",
    "flying",
    "facing",
    "touching",
    "covering",
    "surrounding",
];

/// Words that carry no object content before a relation phrase.
pub const POSTURE_VERBS: &[&str] = &[
    "sitting",
    "standing",
    "lying",
    "laying",
    "resting",
    "placed",
    "perched",
    "parked",
    "hanging",
    "floating",
    "sits",
    "stands",
    "lies",
    "is",
    "are",
    "was",
    "were",
    "located",
    "positioned",
    "situated",
    "that",
    "which",
    "who",
    "sleeping",
    "waiting",
    "stacked",
    "seated",
    "set",
    "kept",
    "leaning",
];

pub const CONJUNCTIONS: &[&str] = &[",", "and", "with", "plus", "while", "as", "well", "also", "together"];

pub const DETERMINERS: &[&str] = &[
    "a", "an", "the", "some", "this", "that", "its", "their", "his", "her", "my",
];

pub const NUMBER_WORDS: &[(&str, u32)] = &[
    ("one", 1),
    ("two", 2),
    ("three", 3),
    ("four", 4),
    ("five", 5),
    ("six", 6),
    ("seven", 7),
    ("eight", 8),
    ("nine", 9),
    ("ten", 10),
    ("eleven", 11),
    ("twelve", 12),
    ("thirteen", 13),
    ("fourteen", 14),
    ("fifteen", 15),
    ("twenty", 20),
    ("dozen", 12),
    ("pair", 2),
    ("couple", 2),
    ("several", 3),
    ("few", 3),
    ("both", 2),
];

pub const COLORS: &[&str] = &[
    "red",
    "blue",
    "green",
    "yellow",
    "orange",
    "purple",
    "pink",
    "brown",
    "black",
    "white",
    "gray",
    "grey",
    "silver",
    "golden",
    "gold",
    "beige",
    "violet",
    "turquoise",
    "teal",
    "cyan",
    "magenta",
    "maroon",
    "navy",
    "crimson",
    "ivory",
    "tan",
];

pub const SIZES: &[&str] = &[
    "big",
    "large",
    "small",
    "tiny",
    "huge",
    "tall",
    "short",
    "little",
    "giant",
    "massive",
    "miniature",
    "long",
];

pub const MATERIALS: &[&str] = &[
    "wooden", "metal", "metallic", "glass", "plastic", "stone", "leather", "ceramic", "paper", "marble", "steel",
    "iron", "cotton", "woolen", "rubber", "brick", "concrete",
];

/// Heads that denote a setting rather than a placeable object.
pub const SCENE_NOUNS: &[&str] = &[
    "kitchen",
    "beach",
    "park",
    "street",
    "forest",
    "field",
    "room",
    "garden",
    "city",
    "desert",
    "sky",
    "ocean",
    "sea",
    "lake",
    "mountains",
    "snow",
    "meadow",
    "office",
    "background",
    "countryside",
    "jungle",
    "living room",
    "bedroom",
    "classroom",
    "library",
    "night",
    "sunset",
    "studio",
    "space",
    "water",
    "road",
    "river",
    "valley",
    "village",
    "town",
    "landscape",
    "scene",
    "yard",
    "backyard",
    "restaurant",
    "cafe",
];

/// Words that name a canvas region rather than an object.
pub const POSITION_WORDS: &[&str] = &[
    "left",
    "right",
    "top",
    "bottom",
    "center",
    "middle",
    "corner",
    "side",
    "foreground",
];

/// Heads of trailing style tags such as ", digital art" or ", oil painting".
pub const STYLE_NOUNS: &[&str] = &[
    "art",
    "painting",
    "illustration",
    "render",
    "rendering",
    "photo",
    "photograph",
    "photography",
    "sketch",
    "drawing",
    "watercolor",
    "style",
    "artwork",
    "anime",
    "wallpaper",
    "4k",
    "8k",
    "hd",
];

/// Framing nouns stripped from "a photo of ..." style openings.
pub const FRAMING_NOUNS: &[&str] = &[
    "photo",
    "image",
    "picture",
    "painting",
    "drawing",
    "illustration",
    "render",
    "rendering",
    "sketch",
    "photograph",
    "scene",
    "view",
    "shot",
    "portrait",
    "depiction",
];

pub const COMPOUND_NOUNS: &[&str] = &[
    "teddy bear",
    "fire hydrant",
    "traffic light",
    "stop sign",
    "parking meter",
    "hot dog",
    "cell phone",
    "wine glass",
    "tennis racket",
    "baseball bat",
    "baseball glove",
    "dining table",
    "potted plant",
    "hair drier",
    "sports ball",
    "coffee cup",
    "coffee table",
    "street lamp",
    "christmas tree",
    "ice cream",
    "living room",
    "soccer ball",
    "computer mouse",
    "pine tree",
    "palm tree",
    "picnic table",
    "water bottle",
    "flower pot",
    "tea pot",
    "book shelf",
    "apple tree",
    "race car",
    "fire truck",
    "school bus",
];

pub const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("people", "person"),
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("mice", "mouse"),
    ("geese", "goose"),
    ("teeth", "tooth"),
    ("feet", "foot"),
    ("sheep", "sheep"),
    ("fish", "fish"),
    ("deer", "deer"),
    ("knives", "knife"),
    ("leaves", "leaf"),
    ("wolves", "wolf"),
    ("shelves", "shelf"),
    ("loaves", "loaf"),
    ("scarves", "scarf"),
    ("oxen", "ox"),
    ("glasses", "glass"),
    ("buses", "bus"),
    ("dice", "die"),
];

pub fn number_value(word: &str) -> Option<u32> {
    if let Ok(n) = word.parse::<u32>() {
        return Some(n);
    }
    NUMBER_WORDS.iter().find(|(w, _)| *w == word).map(|(_, n)| *n)
}

/// Best-effort singular form of an English noun.
pub fn singularize(word: &str) -> String {
    if let Some((_, s)) = IRREGULAR_PLURALS.iter().find(|(p, _)| *p == word) {
        return s.to_string();
    }
    let n = word.len();
    if n > 4 && word.ends_with("ies") {
        return format!("{}y", &word[..n - 3]);
    }
    for suffix in ["ches", "shes", "sses", "xes", "zes", "oes"] {
        if n > suffix.len() + 1 && word.ends_with(suffix) {
            return word[..n - 2].to_string();
        }
    }
    if n > 3 && word.ends_with('s') && !word.ends_with("ss") && !word.ends_with("us") && !word.ends_with("is") {
        return word[..n - 1].to_string();
    }
    word.to_string()
}

/// Maps a relation phrase from free text onto the closed vocabulary.
pub fn relation_from_phrase(phrase: &str) -> Option<RelationKind> {
    let norm = phrase
        .trim()
        .to_lowercase()
        .replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    if let Ok(k) = norm.parse::<RelationKind>() {
        return Some(k);
    }
    let norm = norm.trim_start_matches("is ").trim_start_matches("are ").to_string();
    RELATION_PHRASES
        .iter()
        .chain(RELATION_SYNONYMS)
        .find(|(p, _)| *p == norm)
        .map(|(_, k)| *k)
}

pub fn attribute_key(word: &str) -> &'static str {
    if COLORS.contains(&word) {
        "color"
    } else if SIZES.contains(&word) {
        "size"
    } else if MATERIALS.contains(&word) {
        "material"
    } else {
        "detail"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_forms() {
        for (p, s) in [
            ("cats", "cat"),
            ("dogs", "dog"),
            ("boxes", "box"),
            ("benches", "bench"),
            ("puppies", "puppy"),
            ("tomatoes", "tomato"),
            ("people", "person"),
            ("glasses", "glass"),
            ("bus", "bus"),
            ("grass", "grass"),
            ("cactus", "cactus"),
        ] {
            assert_eq!(singularize(p), s, "{p}");
        }
    }

    #[test]
    fn relation_phrases_map() {
        assert_eq!(relation_from_phrase("to the left of"), Some(RelationKind::LeftOf));
        assert_eq!(relation_from_phrase("Left-Of"), Some(RelationKind::LeftOf));
        assert_eq!(relation_from_phrase("is under"), Some(RelationKind::Below));
        assert_eq!(relation_from_phrase("in front of"), Some(RelationKind::InFrontOf));
        assert_eq!(relation_from_phrase("riding"), None);
    }

    #[test]
    fn phrases_are_longest_first_within_prefix_families() {
        for (i, (a, _)) in RELATION_PHRASES.iter().enumerate() {
            for (b, _) in &RELATION_PHRASES[i + 1..] {
                assert!(!b.starts_with(&format!("{a} ")), "`{b}` is shadowed by `{a}`");
            }
        }
    }
}
