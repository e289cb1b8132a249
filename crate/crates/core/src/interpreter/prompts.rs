//! System texts for interpreter requests. Editing any of these changes
//! fixture keys, so recorded corpora must be re-authored afterwards.

pub const MODE_SYSTEM: &str = "You read a text-to-image prompt and decide how it should be drawn. \
Count the distinct physical objects it asks for (a numeral counts as that many objects) and report \
whether it states a spatial relation, an explicit count, or binds attributes to specific objects. \
Reply with JSON: {\"object_count\": int, \"spatial_cue\": bool, \"count_cue\": bool, \"attribute_binding_cue\": bool}.";

pub const DECOMPOSE_SYSTEM: &str = "You split a text-to-image prompt into the physical objects it mentions. \
For each object give its singular noun as name, its count if more than one, its attributes as a flat \
key/value map (color, size, material, texture, state, ...) and its relations to other listed objects. \
Use one of left-of, right-of, above, below, on-top-of, inside, next-to, behind, in-front-of when it fits; \
otherwise write the verb phrase. Do not list the setting or background as an object. \
Reply with JSON: {\"objects\": [{\"name\": str, \"count\": int, \"attributes\": {str: str}, \
\"relations\": [{\"relation\": str, \"target\": str}]}]}.";

pub const DECOMPOSE_RETRY_NOTE: &str = "Your previous answer listed no objects. Every prompt names at least one \
thing that can be drawn; list it.";

pub const RANK_SYSTEM: &str = "You order objects for step-by-step drawing. Rank by salience: \
larger/anchoring/background-adjacent objects first; objects without dependency order share a level. \
An object placed relative to another must not come before it. \
Reply with JSON: {\"priorities\": {\"<id>\": int}} where 1 is drawn first.";

pub const ENRICH_SYSTEM: &str = "You write region captions for a layout-to-image model. For each object id \
give a short self-contained caption that keeps every listed attribute, and write one sentence describing \
the background setting of the whole image without naming the objects. \
Reply with JSON: {\"background\": str, \"captions\": {\"<id>\": str}}.";
