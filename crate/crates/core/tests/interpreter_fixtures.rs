//! Long prompts decomposed from recorded replies.

mod common;

use std::sync::Arc;

use easel_core::gateway::stub::ScriptedChat;
use easel_core::gateway::{FixtureStore, Gateway, GatewayConfig, GatewayMode, MissPolicy, ModelAccess};
use easel_core::interpreter::Interpreter;
use easel_core::scene::{Prompt, COUNT_KEY};
use serde::Deserialize;

#[derive(Deserialize)]
struct LongPrompt {
    id: String,
    text: String,
    decomposition: String,
    expected_ids: Vec<String>,
}

#[test]
fn replayed_decompositions_match_hand_counts() {
    let cases: Vec<LongPrompt> = serde_json::from_str(&common::read_corpus("long_prompts.json")).unwrap();
    assert_eq!(cases.len(), 10);
    let store = Arc::new(FixtureStore::in_memory());
    let policy = MissPolicy::Fail;
    for case in &cases {
        let chat = Arc::new(ScriptedChat::new([case.decomposition.as_str()]));
        let cfg = GatewayConfig {
            endpoint: Some("http://scripted/v1/chat/completions".into()),
            token_env: None,
            retries: 0,
            ..GatewayConfig::default()
        };
        let recorder = Gateway::new(cfg, GatewayMode::Record, chat, store.clone());
        let prompt = Prompt::with_id(&case.id, &case.text).unwrap();
        Interpreter::new(ModelAccess::new(&recorder, &policy))
            .decompose(&prompt, &mut Vec::new())
            .unwrap();
    }
    assert_eq!(store.len(), 10);

    let replay = Gateway::replay(store);
    let interpreter = Interpreter::new(ModelAccess::new(&replay, &policy));
    for case in &cases {
        let prompt = Prompt::with_id(&case.id, &case.text).unwrap();
        let descriptors = interpreter.decompose(&prompt, &mut Vec::new()).unwrap();
        let ids: Vec<&str> = descriptors.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, case.expected_ids, "{}", case.id);
        for d in &descriptors {
            for r in &d.relations {
                assert!(
                    ids.contains(&r.object_id.as_str()),
                    "{}: dangling relation {r:?}",
                    case.id
                );
            }
        }
    }
}

#[test]
fn counts_beyond_the_cap_stay_one_descriptor() {
    let cases: Vec<LongPrompt> = serde_json::from_str(&common::read_corpus("long_prompts.json")).unwrap();
    let flock = cases.iter().find(|c| c.id == "l07").unwrap();
    let store = Arc::new(FixtureStore::in_memory());
    let chat = Arc::new(ScriptedChat::new([flock.decomposition.as_str()]));
    let cfg = GatewayConfig {
        endpoint: Some("http://scripted/v1/chat/completions".into()),
        token_env: None,
        ..GatewayConfig::default()
    };
    let gateway = Gateway::new(cfg, GatewayMode::Record, chat, store);
    let policy = MissPolicy::Fail;
    let prompt = Prompt::with_id(&flock.id, &flock.text).unwrap();
    let d = Interpreter::new(ModelAccess::new(&gateway, &policy))
        .decompose(&prompt, &mut Vec::new())
        .unwrap();
    assert_eq!(d[0].id, "seagull");
    assert_eq!(d[0].attribute(COUNT_KEY), Some("40"));
    assert_eq!(d[0].multiplicity(), 40);
}
