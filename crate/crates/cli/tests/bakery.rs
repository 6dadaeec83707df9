//! End-to-end runs of the bakery scenario through the library API.

mod common;

use std::path::Path;

use common::*;
use webtdd_core::gateway::{Cassette, Gateway, ProviderConfig};
use webtdd_core::orchestrator::layout;

const GOLDEN_ROUNDS: usize = 3;

fn golden_dir() -> std::path::PathBuf {
    fixtures().join("golden/bakery")
}

fn copy_goldens(run_dir: &Path, rounds: usize) {
    let dest = golden_dir();
    let _ = std::fs::remove_dir_all(&dest);
    std::fs::create_dir_all(&dest).unwrap();
    std::fs::copy(run_dir.join(layout::SUITE), dest.join(layout::SUITE)).unwrap();
    std::fs::copy(run_dir.join("selected-tree-hash"), dest.join(layout::TREE_HASH)).ok();
    for k in 0..rounds {
        let src = run_dir.join(layout::round_dir(k));
        let out = dest.join(format!("round-{k}"));
        std::fs::create_dir_all(&out).unwrap();
        for name in [layout::TREE_HASH, layout::FEEDBACK] {
            if src.join(name).exists() {
                std::fs::copy(src.join(name), out.join(name)).unwrap();
            }
        }
    }
}

/// Rewrites the checked-in cassette and goldens. Run with
/// WEBTDD_REGENERATE_FIXTURES=1 after changing prompts or the fixture model.
#[test]
#[ignore]
fn regenerate_fixtures() {
    if std::env::var_os("WEBTDD_REGENERATE_FIXTURES").is_none() {
        eprintln!("set WEBTDD_REGENERATE_FIXTURES=1 to rewrite fixtures");
        return;
    }
    let cassette_path = fixtures().join("cassettes/bakery.jsonl");
    std::fs::create_dir_all(cassette_path.parent().unwrap()).unwrap();
    let _ = std::fs::remove_file(&cassette_path);
    let config = pipeline_config(GOLDEN_ROUNDS, 4);
    let tmp = tempfile::tempdir().unwrap();
    let recorder = Gateway::record(config.provider.clone(), provider(2), Cassette::open_for_record(&cassette_path).unwrap()).unwrap();
    let run_dir = tmp.path().join("run");
    let result = run_bakery(&recorder, &config, &run_dir);
    drop(recorder);
    let selected = run_dir.join(layout::round_dir(result.selected_round)).join(layout::TREE_HASH);
    std::fs::copy(selected, run_dir.join("selected-tree-hash")).unwrap();
    copy_goldens(&run_dir, result.records.len());
}

#[test]
fn bakery_converges_once_contact_form_lands() {
    let tmp = tempfile::tempdir().unwrap();
    let config = pipeline_config(3, 4);
    let gateway = recorded_gateway(2, &config, tmp.path());
    let result = run_bakery(&gateway, &config, &tmp.path().join("replay"));
    assert_eq!(gateway.provider_calls(), 0);
    let rates: Vec<Option<f64>> = result.records.iter().map(|r| r.tdd_pass_rate).collect();
    assert_eq!(rates.len(), 3, "{rates:?}");
    assert!(rates[0].unwrap() < 1.0);
    assert_eq!(rates[2], Some(1.0));
    assert_eq!(result.selected_round, 2);
}

#[test]
fn replay_matches_checked_in_cassette() {
    let config = pipeline_config(GOLDEN_ROUNDS, 4);
    let gateway = Gateway::replay_file(ProviderConfig::default(), &fixtures().join("cassettes/bakery.jsonl")).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    let result = run_bakery(&gateway, &config, &run_dir);
    assert_eq!(gateway.provider_calls(), 0);
    let golden = golden_dir();
    assert_eq!(
        std::fs::read_to_string(run_dir.join(layout::SUITE)).unwrap(),
        std::fs::read_to_string(golden.join(layout::SUITE)).unwrap()
    );
    for (k, _) in result.records.iter().enumerate() {
        let round = run_dir.join(layout::round_dir(k));
        for name in [layout::TREE_HASH, layout::FEEDBACK] {
            let want = golden.join(format!("round-{k}")).join(name);
            if want.exists() {
                assert_eq!(std::fs::read_to_string(round.join(name)).unwrap(), std::fs::read_to_string(&want).unwrap(), "round {k} {name}");
            }
        }
    }
}
