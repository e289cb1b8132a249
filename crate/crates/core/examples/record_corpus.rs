//! Rebuilds `corpus/fixtures.jsonl` from the hand-written replies in
//! `corpus/scripts.json`, then rewrites `corpus/golden.json`.
//!
//!     cargo run -p easel-core --example record_corpus [corpus-dir]

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use easel_core::clock::LogicalClock;
use easel_core::corpus::{Corpus, Digest};
use easel_core::gateway::stub::ScriptedChat;
use easel_core::gateway::{
    ExchangeOutcome, FixtureStore, Gateway, GatewayConfig, GatewayMode, MissPolicy, ModelAccess,
};
use easel_core::orchestrator::{generate, Agents};
use easel_core::painter::PainterBackend;

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus"));
    let corpus = Corpus::load(&dir).expect("corpus");
    let fixtures = dir.join(&corpus.settings.fixtures);
    let _ = fs::remove_file(&fixtures);
    let _ = fs::remove_dir_all(dir.join("images"));

    let scripts: BTreeMap<String, Vec<String>> =
        serde_json::from_str(&fs::read_to_string(dir.join("scripts.json")).expect("scripts.json")).expect("scripts");
    let store = Arc::new(FixtureStore::open(&fixtures).expect("fixture store"));
    let cfg = corpus.run_config();
    for (id, replies) in &scripts {
        let prompt = corpus
            .prompts
            .iter()
            .find(|p| &p.id == id)
            .unwrap_or_else(|| panic!("no prompt {id}"));
        let chat = Arc::new(ScriptedChat::new(replies.iter().map(String::as_str)));
        let gcfg = GatewayConfig {
            endpoint: Some("http://scripted/v1/chat/completions".into()),
            token_env: None,
            retries: 0,
            ..GatewayConfig::default()
        };
        let gateway = Gateway::new(gcfg, GatewayMode::Record, chat.clone(), store.clone());
        let policy = MissPolicy::Fail;
        let painter = PainterBackend::mock(cfg.seed, corpus.settings.width, corpus.settings.height);
        let clock = LogicalClock::default();
        let agents = Agents {
            access: ModelAccess::new(&gateway, &policy),
            painter: &painter,
            clock: &clock,
            detector: None,
        };
        let run = generate(prompt, &cfg, &agents);
        assert!(run.error.is_none(), "{id}: {:?}", run.error);
        assert_eq!(chat.remaining(), 0, "{id}: unused replies");
        assert!(
            run.transcript.exchanges().all(|x| x.outcome == ExchangeOutcome::Live),
            "{id}: a scripted reply was rejected"
        );
        println!("recorded {id}: {} exchanges", run.transcript.exchanges().count());
    }

    let corpus = Corpus::load(&dir).expect("corpus");
    let golden: BTreeMap<String, Digest> = corpus
        .prompts
        .iter()
        .map(|p| {
            let run = corpus.run(p, &cfg);
            assert!(run.error.is_none(), "{}: {:?}", p.id, run.error);
            (p.id.clone(), Digest::of(&run))
        })
        .collect();
    fs::write(
        corpus.golden_path(),
        serde_json::to_string_pretty(&golden).expect("golden") + "\n",
    )
    .expect("write golden");
    println!("blessed {} digests", golden.len());
}
