//! Browser drivers. `HttpDriver` is a static-HTML browser (links and forms,
//! no script execution) used for fixtures; `CdpDriver` speaks the Chrome
//! remote-debugging protocol against a headless browser.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use image::{ImageBuffer, Rgb};
use scraper::{ElementRef, Html, Selector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};
use url::Url;

use crate::gateway::Raster;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DriverError {
    /// Worth retrying: connection resets, timeouts.
    #[error("transient driver failure: {0}")]
    Transient(String),
    #[error("no element matches {0}")]
    ElementNotFound(String),
    #[error("navigation failed: {0}")]
    Navigation(String),
    #[error("driver failure: {0}")]
    Fatal(String),
}

impl DriverError {
    pub fn is_transient(&self) -> bool {
        matches!(self, DriverError::Transient(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementInfo {
    pub selector: String,
    pub tag: String,
    pub label: String,
}

/// What the simulated user can see. Paths only, never host or port, so
/// prompts built from snapshots are stable across runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageSnapshot {
    pub path: String,
    pub status: u16,
    pub title: String,
    pub text: String,
    pub elements: Vec<ElementInfo>,
}

impl PageSnapshot {
    pub fn render(&self) -> String {
        let mut out = format!("Path: {}\nStatus: {}\nTitle: {}\n\nVisible text:\n", self.path, self.status, self.title);
        if self.text.trim().is_empty() {
            out.push_str("(empty page)\n");
        } else {
            out.push_str(self.text.trim_end());
            out.push('\n');
        }
        out.push_str("\nInteractive elements:\n");
        if self.elements.is_empty() {
            out.push_str("(none)\n");
        }
        for e in &self.elements {
            out.push_str(&format!("- {} <{}> {}\n", e.selector, e.tag, e.label));
        }
        out
    }
}

pub trait BrowserSession: Send {
    fn navigate(&mut self, path: &str) -> Result<(), DriverError>;
    fn click(&mut self, selector: &str) -> Result<(), DriverError>;
    fn type_text(&mut self, selector: &str, text: &str) -> Result<(), DriverError>;
    fn wait(&mut self, ms: u64) {
        std::thread::sleep(Duration::from_millis(ms.min(10_000)));
    }
    fn snapshot(&mut self) -> Result<PageSnapshot, DriverError>;
    fn screenshot(&mut self) -> Result<Raster, DriverError>;
}

pub trait BrowserDriver: Send + Sync {
    fn open(&self, base_url: &str) -> Result<Box<dyn BrowserSession>, DriverError>;
}

// ---- static HTML driver -----------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct HttpDriver {
    pub timeout: Duration,
}

impl HttpDriver {
    pub fn new() -> Self {
        HttpDriver { timeout: Duration::from_secs(10) }
    }
}

impl BrowserDriver for HttpDriver {
    fn open(&self, base_url: &str) -> Result<Box<dyn BrowserSession>, DriverError> {
        let base = Url::parse(base_url).map_err(|e| DriverError::Fatal(e.to_string()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(if self.timeout.is_zero() { Duration::from_secs(10) } else { self.timeout }))
            .build()
            .into();
        Ok(Box::new(HttpSession {
            agent,
            base,
            current: None,
            status: 0,
            html: String::new(),
            values: BTreeMap::new(),
        }))
    }
}

struct HttpSession {
    agent: ureq::Agent,
    base: Url,
    current: Option<Url>,
    status: u16,
    html: String,
    /// Typed field values keyed by the field's name (or selector when unnamed).
    values: BTreeMap<String, String>,
}

fn classify_transport(e: ureq::Error) -> DriverError {
    match e {
        ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed => DriverError::Transient(e.to_string()),
        other => DriverError::Navigation(other.to_string()),
    }
}

fn visible_text(doc: &Html) -> String {
    let mut lines = Vec::new();
    let body = Selector::parse("body").expect("static selector");
    let root = doc.select(&body).next().unwrap_or_else(|| doc.root_element());
    collect_text(root, &mut lines);
    lines.join("\n")
}

fn collect_text(el: ElementRef<'_>, lines: &mut Vec<String>) {
    let name = el.value().name();
    if matches!(name, "script" | "style" | "head" | "template" | "noscript") {
        return;
    }
    if el.value().attr("hidden").is_some() {
        return;
    }
    let mut inline = String::new();
    for child in el.children() {
        if let Some(t) = child.value().as_text() {
            inline.push_str(t);
        } else if let Some(child_el) = ElementRef::wrap(child) {
            let flush = inline.split_whitespace().collect::<Vec<_>>().join(" ");
            if !flush.is_empty() {
                lines.push(flush);
            }
            inline.clear();
            collect_text(child_el, lines);
        }
    }
    let flush = inline.split_whitespace().collect::<Vec<_>>().join(" ");
    if !flush.is_empty() {
        lines.push(flush);
    }
}

fn element_label(el: &ElementRef<'_>) -> String {
    let text = el.text().collect::<Vec<_>>().join(" ");
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if !text.is_empty() {
        return text;
    }
    for attr in ["aria-label", "placeholder", "value", "title", "alt", "name"] {
        if let Some(v) = el.value().attr(attr).filter(|v| !v.trim().is_empty()) {
            return v.trim().to_string();
        }
    }
    String::new()
}

fn selector_for(el: &ElementRef<'_>) -> String {
    let v = el.value();
    if let Some(id) = v.id() {
        return format!("#{id}");
    }
    if let Some(name) = v.attr("name") {
        return format!("{}[name=\"{}\"]", v.name(), name);
    }
    if v.name() == "a" {
        if let Some(href) = v.attr("href") {
            return format!("a[href=\"{href}\"]");
        }
    }
    format!("text={}", element_label(el))
}

const INTERACTIVE: &str = "a[href], button, input:not([type=hidden]), select, textarea";

fn interactive_elements(doc: &Html) -> Vec<ElementInfo> {
    let sel = Selector::parse(INTERACTIVE).expect("static selector");
    doc.select(&sel)
        .map(|el| {
            let tag = match el.value().attr("type") {
                Some(t) if el.value().name() == "input" => format!("input type={t}"),
                _ => el.value().name().to_string(),
            };
            ElementInfo { selector: selector_for(&el), tag, label: element_label(&el) }
        })
        .collect()
}

/// Resolve a selector: CSS first, then the `text=` form matched against labels.
fn find<'a>(doc: &'a Html, selector: &str) -> Option<ElementRef<'a>> {
    let selector = selector.trim();
    if let Some(label) = selector.strip_prefix("text=") {
        let sel = Selector::parse(INTERACTIVE).expect("static selector");
        let label = label.trim();
        return doc.select(&sel).find(|el| element_label(el) == label).or_else(|| {
            doc.select(&sel).find(|el| element_label(el).to_lowercase().contains(&label.to_lowercase()))
        });
    }
    let sel = Selector::parse(selector).ok()?;
    doc.select(&sel).next()
}

fn field_key(el: &ElementRef<'_>, selector: &str) -> String {
    el.value().attr("name").map(str::to_string).unwrap_or_else(|| selector.to_string())
}

impl HttpSession {
    fn load(&mut self, url: Url, form: Option<(&str, Vec<(String, String)>)>) -> Result<(), DriverError> {
        if url.origin() != self.base.origin() {
            return Err(DriverError::Navigation(format!("refusing to leave the application ({})", url.path())));
        }
        let result = match form {
            Some(("post", fields)) => {
                let pairs: Vec<(&str, &str)> = fields.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
                self.agent.post(url.as_str()).send_form(pairs)
            }
            _ => self.agent.get(url.as_str()).call(),
        };
        let mut resp = result.map_err(classify_transport)?;
        self.status = resp.status().as_u16();
        self.html = resp.body_mut().read_to_string().map_err(classify_transport)?;
        self.current = Some(url);
        self.values.clear();
        Ok(())
    }

    fn resolve(&self, href: &str) -> Result<Url, DriverError> {
        let from = self.current.as_ref().unwrap_or(&self.base);
        from.join(href).map_err(|e| DriverError::Navigation(format!("{href}: {e}")))
    }

    fn submit(&mut self, form_html: &str, action: Option<&str>, method: &str) -> Result<(), DriverError> {
        let doc = Html::parse_fragment(form_html);
        let sel = Selector::parse("input[name], select[name], textarea[name]").expect("static selector");
        let mut fields = Vec::new();
        for el in doc.select(&sel) {
            let name = el.value().attr("name").unwrap_or_default().to_string();
            let kind = el.value().attr("type").unwrap_or("text");
            if matches!(kind, "submit" | "button" | "reset") {
                continue;
            }
            if matches!(kind, "checkbox" | "radio") && el.value().attr("checked").is_none() && !self.values.contains_key(&name) {
                continue;
            }
            let value = self
                .values
                .get(&name)
                .cloned()
                .or_else(|| el.value().attr("value").map(str::to_string))
                .unwrap_or_default();
            fields.push((name, value));
        }
        let target = self.resolve(action.unwrap_or(""))?;
        if method.eq_ignore_ascii_case("post") {
            self.load(target, Some(("post", fields)))
        } else {
            let mut url = target;
            url.query_pairs_mut().clear().extend_pairs(fields.iter());
            self.load(url, None)
        }
    }
}

impl BrowserSession for HttpSession {
    fn navigate(&mut self, path: &str) -> Result<(), DriverError> {
        let url = self.resolve(path)?;
        self.load(url, None)
    }

    fn click(&mut self, selector: &str) -> Result<(), DriverError> {
        enum Then {
            Follow(String),
            Submit(String, Option<String>, String),
            Toggle(String),
            Nothing,
        }
        let then = {
            let doc = Html::parse_document(&self.html);
            let el = find(&doc, selector).ok_or_else(|| DriverError::ElementNotFound(selector.to_string()))?;
            let v = el.value();
            let kind = v.attr("type").unwrap_or("");
            if v.name() == "a" {
                Then::Follow(v.attr("href").unwrap_or("").to_string())
            } else if (v.name() == "button" && kind != "button" && kind != "reset") || (v.name() == "input" && kind == "submit") {
                let form = el.ancestors().filter_map(ElementRef::wrap).find(|a| a.value().name() == "form");
                match form {
                    Some(f) => Then::Submit(
                        f.html(),
                        f.value().attr("action").map(str::to_string),
                        f.value().attr("method").unwrap_or("get").to_string(),
                    ),
                    None => Then::Nothing,
                }
            } else if v.name() == "input" && matches!(kind, "checkbox" | "radio") {
                Then::Toggle(field_key(&el, selector))
            } else {
                Then::Nothing
            }
        };
        match then {
            Then::Follow(href) => self.navigate(&href),
            Then::Submit(html, action, method) => self.submit(&html, action.as_deref(), &method),
            Then::Toggle(key) => {
                self.values.insert(key, "on".into());
                Ok(())
            }
            Then::Nothing => Ok(()),
        }
    }

    fn type_text(&mut self, selector: &str, text: &str) -> Result<(), DriverError> {
        let key = {
            let doc = Html::parse_document(&self.html);
            let el = find(&doc, selector).ok_or_else(|| DriverError::ElementNotFound(selector.to_string()))?;
            if !matches!(el.value().name(), "input" | "textarea" | "select") {
                return Err(DriverError::ElementNotFound(format!("{selector} is not an input field")));
            }
            field_key(&el, selector)
        };
        self.values.insert(key, text.to_string());
        Ok(())
    }

    fn wait(&mut self, _ms: u64) {
        // Static pages do not change on their own.
    }

    fn snapshot(&mut self) -> Result<PageSnapshot, DriverError> {
        let doc = Html::parse_document(&self.html);
        let title_sel = Selector::parse("title").expect("static selector");
        let title = doc
            .select(&title_sel)
            .next()
            .map(|t| t.text().collect::<String>().trim().to_string())
            .unwrap_or_default();
        let mut text = visible_text(&doc);
        if !self.values.is_empty() {
            let typed = self.values.iter().map(|(k, v)| format!("{k} = {v:?}")).collect::<Vec<_>>().join("\n");
            text = format!("{text}\n\nEntered values:\n{typed}");
        }
        let path = match &self.current {
            Some(u) => match u.query() {
                Some(q) => format!("{}?{q}", u.path()),
                None => u.path().to_string(),
            },
            None => "about:blank".into(),
        };
        Ok(PageSnapshot { path, status: self.status, title, text, elements: interactive_elements(&doc) })
    }

    fn screenshot(&mut self) -> Result<Raster, DriverError> {
        let doc = Html::parse_document(&self.html);
        let text = if self.status >= 400 { String::new() } else { visible_text(&doc) };
        Ok(synthetic_render(&text))
    }
}

pub const SYNTHETIC_WIDTH: u32 = 160;
pub const SYNTHETIC_HEIGHT: u32 = 120;

/// Deterministic stand-in for a rendered page: white canvas, one dark cell
/// per visible glyph in reading order. An empty page renders uniformly white.
pub fn synthetic_render(text: &str) -> Raster {
    let mut img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_pixel(SYNTHETIC_WIDTH, SYNTHETIC_HEIGHT, Rgb([255, 255, 255]));
    let cols = SYNTHETIC_WIDTH / 2;
    let (mut x, mut y) = (0u32, 0u32);
    for line in text.lines() {
        for ch in line.chars() {
            if y >= SYNTHETIC_HEIGHT / 2 {
                break;
            }
            if !ch.is_whitespace() {
                let shade = 40 + (ch as u32 % 80) as u8;
                img.put_pixel(x * 2, y * 2, Rgb([shade, shade, shade]));
                img.put_pixel(x * 2 + 1, y * 2, Rgb([shade, shade, shade]));
            }
            x += 1;
            if x >= cols {
                x = 0;
                y += 1;
            }
        }
        x = 0;
        y += 1;
    }
    let mut bytes = Vec::new();
    image::DynamicImage::ImageRgb8(img)
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("png encoding to memory");
    Raster::png(bytes)
}

// ---- remote debugging protocol driver ---------------------------------------

/// Drives a headless Chromium-family browser over its remote-debugging
/// websocket. Either attaches to `http://host:port` of a running browser or
/// launches `binary` itself.
pub struct CdpDriver {
    http_endpoint: String,
    browser: Mutex<Option<Child>>,
    pub navigation_timeout: Duration,
}

impl CdpDriver {
    pub fn attach(http_endpoint: impl Into<String>) -> Self {
        CdpDriver { http_endpoint: http_endpoint.into(), browser: Mutex::new(None), navigation_timeout: Duration::from_secs(15) }
    }

    pub fn launch(binary: &str, port: u16) -> Result<Self, DriverError> {
        let profile = std::env::temp_dir().join(format!("webtdd-browser-{port}"));
        let mut child = Command::new(binary)
            .args([
                "--headless=new",
                "--disable-gpu",
                "--no-first-run",
                "--no-sandbox",
                "--window-size=1280,800",
                &format!("--remote-debugging-port={port}"),
                &format!("--user-data-dir={}", profile.display()),
                "about:blank",
            ])
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| DriverError::Fatal(format!("cannot start {binary}: {e}")))?;
        // The browser announces readiness on stderr.
        let stderr = child.stderr.take().ok_or_else(|| DriverError::Fatal("browser stderr unavailable".into()))?;
        let mut ready = false;
        for line in BufReader::new(stderr).lines().map_while(Result::ok) {
            if line.contains("DevTools listening on") {
                ready = true;
                break;
            }
        }
        if !ready {
            let _ = child.kill();
            return Err(DriverError::Fatal("browser exited before opening the debugging port".into()));
        }
        let driver = CdpDriver::attach(format!("http://127.0.0.1:{port}"));
        *driver.browser.lock().expect("browser lock") = Some(child);
        Ok(driver)
    }

    fn new_target(&self) -> Result<String, DriverError> {
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        let url = format!("{}/json/new?about:blank", self.http_endpoint);
        let mut resp = agent.put(&url).send_empty().map_err(|e| DriverError::Transient(e.to_string()))?;
        if !resp.status().is_success() {
            resp = agent.get(&url).call().map_err(|e| DriverError::Transient(e.to_string()))?;
        }
        let body: Value = serde_json::from_str(&resp.body_mut().read_to_string().map_err(|e| DriverError::Transient(e.to_string()))?)
            .map_err(|e| DriverError::Fatal(format!("unexpected /json/new reply: {e}")))?;
        body.get("webSocketDebuggerUrl")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| DriverError::Fatal("target has no websocket url".into()))
    }
}

impl Drop for CdpDriver {
    fn drop(&mut self) {
        if let Some(mut child) = self.browser.lock().ok().and_then(|mut b| b.take()) {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl BrowserDriver for CdpDriver {
    fn open(&self, base_url: &str) -> Result<Box<dyn BrowserSession>, DriverError> {
        let ws_url = self.new_target()?;
        let (socket, _) = tungstenite::connect(ws_url.as_str()).map_err(|e| DriverError::Transient(e.to_string()))?;
        let base = Url::parse(base_url).map_err(|e| DriverError::Fatal(e.to_string()))?;
        let mut session = CdpSession { socket, next_id: 0, base, timeout: self.navigation_timeout };
        session.call("Page.enable", json!({}))?;
        session.call("Runtime.enable", json!({}))?;
        Ok(Box::new(session))
    }
}

struct CdpSession {
    socket: WebSocket<MaybeTlsStream<TcpStream>>,
    next_id: u64,
    base: Url,
    timeout: Duration,
}

const SNAPSHOT_JS: &str = r#"(() => {
  const sel = 'a[href], button, input:not([type=hidden]), select, textarea';
  const label = (e) => (e.innerText || e.getAttribute('aria-label') || e.placeholder || e.value || e.title || e.alt || e.name || '').trim().replace(/\s+/g, ' ');
  const css = (e) => e.id ? '#' + e.id : e.name ? e.tagName.toLowerCase() + '[name="' + e.name + '"]'
    : (e.tagName === 'A' && e.getAttribute('href')) ? 'a[href="' + e.getAttribute('href') + '"]' : 'text=' + label(e);
  return JSON.stringify({
    path: location.pathname + location.search,
    title: document.title,
    text: document.body ? document.body.innerText : '',
    elements: Array.from(document.querySelectorAll(sel)).filter(e => e.offsetParent !== null)
      .map(e => ({selector: css(e), tag: e.tagName.toLowerCase() + (e.type && e.tagName === 'INPUT' ? ' type=' + e.type : ''), label: label(e)}))
  });
})()"#;

const FIND_JS: &str = r#"((s) => {
  const sel = 'a[href], button, input:not([type=hidden]), select, textarea';
  if (s.startsWith('text=')) {
    const want = s.slice(5).trim().toLowerCase();
    return Array.from(document.querySelectorAll(sel)).find(e => (e.innerText || e.value || '').trim().toLowerCase().includes(want)) || null;
  }
  try { return document.querySelector(s); } catch (_) { return null; }
})"#;

impl CdpSession {
    fn call(&mut self, method: &str, params: Value) -> Result<Value, DriverError> {
        self.next_id += 1;
        let id = self.next_id;
        let msg = json!({"id": id, "method": method, "params": params});
        self.socket
            .send(Message::Text(msg.to_string()))
            .map_err(|e| DriverError::Transient(e.to_string()))?;
        let deadline = Instant::now() + self.timeout;
        loop {
            if Instant::now() > deadline {
                return Err(DriverError::Transient(format!("{method} timed out")));
            }
            let frame = self.socket.read().map_err(|e| DriverError::Transient(e.to_string()))?;
            let Message::Text(text) = frame else { continue };
            let Ok(value) = serde_json::from_str::<Value>(text.as_ref()) else { continue };
            if value.get("id").and_then(Value::as_u64) != Some(id) {
                continue; // protocol event
            }
            if let Some(err) = value.get("error") {
                return Err(DriverError::Fatal(format!("{method}: {err}")));
            }
            return Ok(value.get("result").cloned().unwrap_or(Value::Null));
        }
    }

    fn eval(&mut self, expression: &str) -> Result<Value, DriverError> {
        let result = self.call(
            "Runtime.evaluate",
            json!({"expression": expression, "returnByValue": true, "awaitPromise": true}),
        )?;
        if let Some(ex) = result.get("exceptionDetails") {
            return Err(DriverError::Fatal(format!("script error: {ex}")));
        }
        Ok(result.pointer("/result/value").cloned().unwrap_or(Value::Null))
    }

    fn settle(&mut self) -> Result<(), DriverError> {
        let deadline = Instant::now() + self.timeout;
        while Instant::now() < deadline {
            if self.eval("document.readyState")?.as_str() == Some("complete") {
                return Ok(());
            }
            std::thread::sleep(Duration::from_millis(50));
        }
        Err(DriverError::Transient("page did not finish loading".into()))
    }

    fn with_element(&mut self, selector: &str, body: &str) -> Result<(), DriverError> {
        let expr = format!(
            "(() => {{ const e = {FIND_JS}({}); if (!e) return false; {body}; return true; }})()",
            serde_json::to_string(selector).expect("string serializes")
        );
        match self.eval(&expr)? {
            Value::Bool(true) => Ok(()),
            _ => Err(DriverError::ElementNotFound(selector.to_string())),
        }
    }
}

impl BrowserSession for CdpSession {
    fn navigate(&mut self, path: &str) -> Result<(), DriverError> {
        let url = self.base.join(path).map_err(|e| DriverError::Navigation(e.to_string()))?;
        let result = self.call("Page.navigate", json!({"url": url.as_str()}))?;
        if let Some(err) = result.get("errorText").and_then(Value::as_str) {
            return Err(DriverError::Navigation(err.to_string()));
        }
        self.settle()
    }

    fn click(&mut self, selector: &str) -> Result<(), DriverError> {
        self.with_element(selector, "e.scrollIntoView(); e.click()")?;
        std::thread::sleep(Duration::from_millis(100));
        self.settle()
    }

    fn type_text(&mut self, selector: &str, text: &str) -> Result<(), DriverError> {
        let body = format!(
            "e.focus(); e.value = {}; e.dispatchEvent(new Event('input', {{bubbles: true}})); e.dispatchEvent(new Event('change', {{bubbles: true}}))",
            serde_json::to_string(text).expect("string serializes")
        );
        self.with_element(selector, &body)
    }

    fn snapshot(&mut self) -> Result<PageSnapshot, DriverError> {
        let raw = self.eval(SNAPSHOT_JS)?;
        let parsed: Value = serde_json::from_str(raw.as_str().unwrap_or("{}")).map_err(|e| DriverError::Fatal(e.to_string()))?;
        Ok(PageSnapshot {
            path: parsed["path"].as_str().unwrap_or("/").to_string(),
            status: 200,
            title: parsed["title"].as_str().unwrap_or("").to_string(),
            text: parsed["text"].as_str().unwrap_or("").to_string(),
            elements: serde_json::from_value(parsed["elements"].clone()).unwrap_or_default(),
        })
    }

    fn screenshot(&mut self) -> Result<Raster, DriverError> {
        let result = self.call("Page.captureScreenshot", json!({"format": "png"}))?;
        let data = result.get("data").and_then(Value::as_str).ok_or_else(|| DriverError::Fatal("no screenshot data".into()))?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(data)
            .map_err(|e| DriverError::Fatal(e.to_string()))?;
        Ok(Raster::png(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAGE: &str = r#"<html><head><title>Shop</title><style>p{}</style></head>
<body><h1>Welcome</h1><p>Hello <b>there</b></p><script>var x = 1;</script>
<a href="/cart">Cart</a>
<form action="/login" method="post"><input id="user" name="user"><input type="password" name="pw"><button>Log in</button></form>
<button type="button">Menu</button></body></html>"#;

    #[test]
    fn text_skips_scripts_and_styles() {
        let doc = Html::parse_document(PAGE);
        let text = visible_text(&doc);
        assert!(text.starts_with("Welcome\nHello\nthere"));
        assert!(!text.contains("var x"));
    }

    #[test]
    fn elements_get_resolvable_selectors() {
        let doc = Html::parse_document(PAGE);
        let els = interactive_elements(&doc);
        let sels: Vec<&str> = els.iter().map(|e| e.selector.as_str()).collect();
        assert_eq!(sels, ["a[href=\"/cart\"]", "#user", "input[name=\"pw\"]", "text=Log in", "text=Menu"]);
        for s in sels {
            assert!(find(&doc, s).is_some(), "{s}");
        }
    }

    #[test]
    fn empty_page_renders_uniformly() {
        let blank = synthetic_render("");
        let img = image::load_from_memory(&blank.bytes).unwrap().to_rgb8();
        assert!(img.pixels().all(|p| *p == Rgb([255, 255, 255])));
        let busy = synthetic_render("Hello world");
        assert_ne!(blank.bytes, busy.bytes);
        assert_eq!(busy.bytes, synthetic_render("Hello world").bytes);
    }
}
