use std::path::{Path, PathBuf};
use std::sync::Arc;

use webtdd_core::devagent::{DevAgent, DevConfig, DevTask};
use webtdd_core::gateway::{Gateway, PromptBundle, ProviderConfig, ScriptedProvider};
use webtdd_core::prompts::PromptSet;
use webtdd_core::testgen::UserRequest;
use webtdd_core::workspace::{RelPath, TemplateStore, WorkspaceState};

fn templates() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/templates")
}

const EDITS: &str = r#"Updating the page.
<Action type="file" filePath="index.html">
```html
<h1>Hello &amp; welcome</h1>
```
</Action>
<Action type="file" filePath="site.json">{"hacked": true}</Action>
<Action type="file" filePath="style.css" diff="true">
@@ -1,1 +1,1 @@
-not the first line
+body {}
</Action>
<Action type="file" filePath="js/app.js">console.log("hi");</Action>
<Action type="file" filePath="broken.js">never closed
"#;

fn provider(b: &PromptBundle) -> String {
    let text = b.user_text();
    if text.contains("Select only the files relevant") {
        "<FileSelection><IncludeFile path=\"index.html\"/><IncludeFile path=\"nope.html\"/></FileSelection>".into()
    } else {
        EDITS.into()
    }
}

#[test]
fn one_step_applies_skips_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let store = TemplateStore::load(&templates()).unwrap();
    let mut ws = WorkspaceState::init_from_template(store.get("static-site").unwrap(), &dir.path().join("ws")).unwrap();
    let gateway = Gateway::passthrough(ProviderConfig::default(), Arc::new(ScriptedProvider::new(|b| Ok(provider(b))))).unwrap();
    let agent = DevAgent::new(&gateway, Arc::new(PromptSet::builtin()), DevConfig::default());
    let css_before = std::fs::read(ws.root().join("style.css")).unwrap();

    let summary = agent.develop_step(&mut ws, &DevTask::new("Add a welcome heading.", 0)).unwrap();

    let applied: Vec<&str> = summary.applied.iter().map(|a| a.path.as_str()).collect();
    assert_eq!(applied, ["index.html", "js/app.js"]);
    assert_eq!(summary.skipped.len(), 1);
    assert_eq!(summary.skipped[0].path, "site.json");
    assert_eq!(summary.rejected.len(), 1);
    assert_eq!(summary.rejected[0].path, "style.css");
    assert!(!summary.diagnostics.is_empty());
    assert!(summary.warnings.iter().any(|w| w.contains("nope.html")), "{:?}", summary.warnings);
    assert!(!summary.unproductive);

    assert_eq!(std::fs::read_to_string(ws.root().join("index.html")).unwrap(), "<h1>Hello & welcome</h1>\n");
    assert_eq!(std::fs::read(ws.root().join("style.css")).unwrap(), css_before);
    assert!(ws.buffered_paths().contains(&RelPath::new("index.html").unwrap()));
    let history = ws.chat_summary();
    assert!(history.contains("[round 0]") && history.contains("site.json"), "{history}");
}

#[test]
fn unknown_template_reply_uses_fallback() {
    let store = TemplateStore::load(&templates()).unwrap();
    let gateway = Gateway::passthrough(ProviderConfig::default(), Arc::new(ScriptedProvider::constant("a rocket ship"))).unwrap();
    let config = DevConfig { fallback_template: "static-site".into(), ..DevConfig::default() };
    let agent = DevAgent::new(&gateway, Arc::new(PromptSet::builtin()), config);
    let chosen = agent.select_template(&UserRequest::new("Anything").unwrap(), store.templates()).unwrap();
    assert_eq!(chosen.id, "static-site");
}
