//! Deterministic stand-in model for the bakery fixture. It answers every
//! prompt the pipeline sends by looking at the prompt text alone, so the
//! same prompts always get the same replies.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;
use webtdd_core::gateway::{Cassette, Gateway, PromptBundle, ProviderConfig, ScriptedProvider};
use webtdd_core::orchestrator::{run_pipeline, PipelineConfig, PipelineEnv, PipelineResult};
use webtdd_core::prompts::PromptSet;
use webtdd_core::testgen::UserRequest;
use webtdd_core::testrunner::HttpDriver;
use webtdd_core::workspace::TemplateStore;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn fixtures() -> PathBuf {
    repo_root().join("fixtures")
}

pub fn bakery_request() -> String {
    std::fs::read_to_string(fixtures().join("requests/bakery.txt")).unwrap()
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> &'a str {
    let Some(i) = text.find(start) else { return "" };
    let rest = &text[i + start.len()..];
    match rest.find(end) {
        Some(j) => &rest[..j],
        None => rest,
    }
}

fn quoted(text: &str) -> Vec<String> {
    text.split('"').skip(1).step_by(2).map(str::to_string).collect()
}

fn requirement_id(text: &str, marker: &str) -> String {
    let i = text.find(marker).map(|i| i + marker.len()).unwrap_or(0);
    text[i..].chars().take_while(|c| c.is_ascii_alphanumeric()).collect()
}

fn requirements() -> serde_json::Value {
    json!([
        {"id": "R1", "statement": "The home page shows the bakery name.", "kind": "design-element", "origin": "explicit"},
        {"id": "R2", "statement": "A menu page lists the pastries with their prices.", "kind": "functionality", "origin": "explicit"},
        {"id": "R3", "statement": "A contact page has a form that takes a visitor's name and shows a thank-you message.", "kind": "functionality", "origin": "explicit"},
        {"id": "R4", "statement": "Every page links back to the home page.", "kind": "layout-constraint", "origin": "inferred"}
    ])
}

fn test_case(id: &str) -> serde_json::Value {
    match id {
        "R1" => json!({"persona": {"name": "Maya", "goal": "find the bakery's website"}, "category": "design-validation",
            "steps": [{"action": "Navigate to /", "expected": "The page shows \"Sweet Crumb Bakery\""}]}),
        "R2" => json!({"persona": {"name": "Tom", "goal": "check pastry prices before visiting"}, "category": "data-display",
            "steps": [
                {"action": "Navigate to /", "expected": "The page shows \"Menu\""},
                {"action": "Click \"Menu\"", "expected": "The page shows \"Croissant\" and \"$3.50\""}
            ]}),
        "R3" => json!({"persona": {"name": "Ann", "goal": "leave her name for a catering request"}, "category": "functionality",
            "steps": [
                {"action": "Navigate to /contact.html", "expected": "The page shows \"Contact us\""},
                {"action": "Type \"Ann\" into \"name\"", "expected": "The field holds \"Ann\""},
                {"action": "Click \"Send\"", "expected": "The page shows \"Thanks, we will be in touch\""}
            ]}),
        _ => json!({"persona": {"name": "Leo", "goal": "return home after browsing the menu"}, "category": "functionality",
            "steps": [
                {"action": "Navigate to /menu.html", "expected": "The page shows \"Our menu\""},
                {"action": "Click \"Home\"", "expected": "The page shows \"Sweet Crumb Bakery\""}
            ]}),
    }
}

fn detail(id: &str) -> serde_json::Value {
    let data = if id == "R2" {
        json!([{"kind": "inline-dataset", "content": [
            {"name": "Croissant", "price": "$3.50"},
            {"name": "Cinnamon roll", "price": "$4.25"},
            {"name": "Sourdough loaf", "price": "$7.00"}
        ]}])
    } else {
        json!([])
    };
    json!([{
        "requirement_id": id,
        "functional_spec": format!("Implement requirement {id} as static pages."),
        "static_ui_spec": "Simple centered layout with a navigation bar.",
        "interaction_spec": if id == "R3" { "Submitting the form opens the thank-you page." } else { "Navigation links open the named pages." },
        "data_sources": data
    }])
}

const NAV: &str = "<nav><a href=\"index.html\">Home</a> <a href=\"menu.html\">Menu</a> <a href=\"contact.html\">Contact</a></nav>";

fn page(title: &str, body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n  <meta charset=\"utf-8\">\n  <title>{title}</title>\n  <link rel=\"stylesheet\" href=\"style.css\">\n</head>\n<body>\n  {NAV}\n  <main>\n{body}\n  </main>\n</body>\n</html>\n"
    )
}

fn action(path: &str, content: &str) -> String {
    format!("<Action type=\"file\" filePath=\"{path}\">\n{content}</Action>\n")
}

/// Development reply for `round`; the contact page is complete from
/// `pass_after` on, a stub before that, and missing in round 0.
fn develop_reply(round: usize, pass_after: usize) -> String {
    let mut out = String::from("Here are the changes.\n\n");
    out += &action("index.html", &page("Sweet Crumb Bakery", "    <h1>Sweet Crumb Bakery</h1>\n    <p>Fresh bread and pastries every morning.</p>"));
    out += &action(
        "menu.html",
        &page("Menu", "    <h1>Our menu</h1>\n    <ul>\n      <li>Croissant - $3.50</li>\n      <li>Cinnamon roll - $4.25</li>\n      <li>Sourdough loaf - $7.00</li>\n    </ul>"),
    );
    if round == 0 {
        // Locked by the template; the workspace must skip this.
        out += &action("site.json", "{\"name\": \"bakery\"}\n");
        return out;
    }
    if round == 1 {
        out += "<Action type=\"file\" filePath=\"style.css\" diff=\"true\">\n@@ -4,3 +4,6 @@\n   padding: 2rem;\n   color: #222;\n }\n+nav a {\n+  margin-right: 1rem;\n+}\n</Action>\n";
    }
    if round >= pass_after {
        out += &action(
            "contact.html",
            &page("Contact", "    <h1>Contact us</h1>\n    <form action=\"thanks.html\" method=\"get\">\n      <input id=\"name\" name=\"name\" placeholder=\"Your name\">\n      <button type=\"submit\">Send</button>\n    </form>"),
        );
        out += &action("thanks.html", &page("Thanks", "    <h1>Thanks, we will be in touch</h1>"));
    } else {
        out += &action("contact.html", &page("Contact", "    <h1>Contact us</h1>\n    <p>Call us at 555-0100.</p>"));
    }
    out
}

fn selection_reply(text: &str) -> String {
    let files = between(text, "You have access to the following files: \n\n", "\n\nYou have the following code");
    let mut out = String::from("<FileSelection>\n");
    for line in files.lines() {
        if let Some(p) = line.strip_prefix("- ") {
            out += &format!("  <IncludeFile path=\"{p}\"/>\n");
        }
    }
    out + "</FileSelection>"
}

fn tester_reply(text: &str, forced: bool) -> String {
    let step = between(text, "Step action: ", "\n");
    let expected = between(text, "Expected outcome: ", "\n");
    let history = if forced {
        between(text, "Actions taken for this step:\n", "\n\nCurrent page:")
    } else {
        between(text, "Actions already taken for this step:\n", "\n\nCurrent page:")
    };
    let visible = between(text, "Visible text:\n", "\nInteractive elements:");
    let elements = between(text, "Interactive elements:\n", "\n\n");
    let fresh = history.trim() == "(none yet)";
    if fresh && !forced {
        if let Some(path) = step.strip_prefix("Navigate to ") {
            return json!([{"action": "navigate", "path": path.trim()}]).to_string();
        }
        let q = quoted(step);
        if step.starts_with("Click") {
            let label = q.first().cloned().unwrap_or_default();
            let selector = elements
                .lines()
                .filter_map(|l| l.strip_prefix("- "))
                .find(|l| l.ends_with(&format!("> {label}")))
                .and_then(|l| l.split(" <").next())
                .unwrap_or("#missing")
                .to_string();
            return json!([{"action": "click", "selector": selector}]).to_string();
        }
        if step.starts_with("Type") && q.len() == 2 {
            let field = &q[1];
            let selector = elements
                .lines()
                .filter_map(|l| l.strip_prefix("- "))
                .filter_map(|l| l.split(" <").next())
                .find(|s| s.contains(&format!("\"{field}\"")) || *s == format!("#{field}"))
                .unwrap_or("#missing")
                .to_string();
            return json!([{"action": "type", "selector": selector, "text": q[0]}]).to_string();
        }
    }
    let first_line = visible.lines().next().unwrap_or("(empty page)");
    if history.contains("no element matches") {
        return json!([{"action": "judge", "verdict": "unmet", "observation": format!("the element could not be found; the page starts with {first_line:?}"),
            "category": "element-not-found", "recommendation": "Add the missing element to the page."}]).to_string();
    }
    let wanted = quoted(expected);
    let missing: Vec<&String> = wanted.iter().filter(|w| !visible.contains(w.as_str())).collect();
    if missing.is_empty() {
        json!([{"action": "judge", "verdict": "met", "observation": format!("saw {}", wanted.join(", "))}]).to_string()
    } else {
        json!([{"action": "judge", "verdict": "unmet", "observation": format!("missing {:?}; the page starts with {first_line:?}", missing),
            "category": "assertion-mismatch", "recommendation": format!("Make the page show {:?}.", missing)}]).to_string()
    }
}

/// Reply function for the bakery scenario.
pub fn bakery_model(pass_after: usize) -> impl Fn(&PromptBundle) -> String + Send + Sync + 'static {
    move |bundle: &PromptBundle| {
        let text = bundle.user_text();
        if text.contains("break it into a list of discrete requirements") {
            requirements().to_string()
        } else if text.contains("Expand one high-level requirement") {
            detail(&requirement_id(&text, "Requirement to elaborate:\n{\"id\":\"")).to_string()
        } else if text.contains("soap-opera test cases") {
            json!([test_case(&requirement_id(&text, "\"requirement_id\": \""))]).to_string()
        } else if text.contains("AI Product Manager") {
            let mut reqs = requirements();
            for r in reqs.as_array_mut().unwrap() {
                let id = r["id"].as_str().unwrap().to_string();
                r["test_case"] = test_case(&id);
            }
            format!("```json\n{reqs}\n```")
        } else if text.contains("choosing a starter project") {
            "static-site".to_string()
        } else if text.contains("Select only the files relevant") {
            selection_reply(&text)
        } else if text.contains("Please make necessary updates") {
            develop_reply(text.matches("[round ").count(), pass_after)
        } else if text.contains("You are executing step") {
            tester_reply(&text, false)
        } else if text.contains("interaction limit") {
            tester_reply(&text, true)
        } else if text.contains("freshly launched") {
            "NO\nThe page renders a normal web page.".to_string()
        } else if text.contains("UI reviewer") {
            "NONE".to_string()
        } else {
            panic!("fixture model got an unexpected prompt:\n{text}")
        }
    }
}

pub fn provider(pass_after: usize) -> Arc<ScriptedProvider> {
    let model = bakery_model(pass_after);
    Arc::new(ScriptedProvider::new(move |b| Ok(model(b))))
}

pub fn quiet(_: &webtdd_core::orchestrator::ProgressEvent) {}

/// Run the bakery pipeline with the given gateway into `run_dir`.
pub fn run_bakery(gateway: &Gateway, config: &PipelineConfig, run_dir: &Path) -> PipelineResult {
    let store = TemplateStore::load(&fixtures().join("templates")).unwrap();
    let env = PipelineEnv {
        gateway,
        driver: Arc::new(HttpDriver::new()),
        store: &store,
        prompts: Arc::new(PromptSet::builtin()),
        progress: &quiet,
    };
    let request = UserRequest::new(bakery_request()).unwrap();
    run_pipeline(&request, config, &env, run_dir).unwrap()
}

/// Record a fresh cassette for the bakery scenario, then return a replay
/// gateway over it.
pub fn recorded_gateway(pass_after: usize, config: &PipelineConfig, dir: &Path) -> Gateway {
    let cassette_path = dir.join("cassette.jsonl");
    let recorder = Gateway::record(config.provider.clone(), provider(pass_after), Cassette::open_for_record(&cassette_path).unwrap()).unwrap();
    run_bakery(&recorder, config, &dir.join("record-run"));
    Gateway::replay_file(ProviderConfig::default(), &cassette_path).unwrap()
}

pub fn pipeline_config(max_iter: usize, parallelism: usize) -> PipelineConfig {
    let mut config = PipelineConfig { max_iter, ..PipelineConfig::default() };
    config.runner.parallelism = parallelism;
    config.runner.base_port = free_base_port();
    config
}

/// A base port unlikely to collide with concurrently running tests.
pub fn free_base_port() -> u16 {
    let l = std::net::TcpListener::bind(("127.0.0.1", 0)).unwrap();
    l.local_addr().unwrap().port()
}
