use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use i2mv_core::data::{ClassEntry, Split, ViewCorpus};
use i2mv_promptgen::{
    cache_key, generate_views, merge_views, plan_prompts, Error, Example, ExamplePool, GenerateConfig, HttpClient,
    LlmClient, LlmRequest, LlmResponse, MockClient, PromptPlan, Target,
};

fn pool() -> ExamplePool {
    let ex = |n: &str, d: &str| Example {
        class_name: n.into(),
        description: d.into(),
    };
    ExamplePool::new(
        "animals",
        vec![
            ex("zebra", "Striped grazer."),
            ex("elephant", "Grey, with a trunk."),
            ex("owl", "Nocturnal bird."),
            ex("cheetah", "Spotted runner."),
        ],
        3,
        2,
    )
    .unwrap()
}

fn plan(n: usize) -> PromptPlan {
    let targets: Vec<Target> = (0..n)
        .map(|i| Target {
            name: format!("species {i}"),
            split: if i % 2 == 0 { Split::Seen } else { Split::Unseen },
        })
        .collect();
    plan_prompts(&pool(), &targets).unwrap()
}

/// Answers with a prefix of the key, so responses differ per prompt.
struct Echo {
    calls: Mutex<usize>,
}

impl Echo {
    fn new() -> Self {
        Self { calls: Mutex::new(0) }
    }
}

impl LlmClient for Echo {
    fn complete(&self, key: &str, request: &LlmRequest) -> Result<LlmResponse, String> {
        *self.calls.lock().unwrap() += 1;
        Ok(LlmResponse {
            text: format!("{} {}", &key[..8], request.prompt.len()),
        })
    }

    fn calls(&self) -> usize {
        *self.calls.lock().unwrap()
    }
}

#[test]
fn cold_cache_sends_every_request_and_warm_cache_none() {
    let dir = tempfile::tempdir().unwrap();
    let plan = plan(5);
    let cold = Echo::new();
    let (a, sa) = generate_views(&plan, &cold, &GenerateConfig::default(), dir.path()).unwrap();
    assert_eq!(cold.calls(), 15);
    assert_eq!((sa.requests, sa.cache_hits), (15, 0));
    let warm = Echo::new();
    let (b, sb) = generate_views(&plan, &warm, &GenerateConfig::default(), dir.path()).unwrap();
    assert_eq!(warm.calls(), 0);
    assert_eq!((sb.requests, sb.cache_hits), (0, 15));
    assert_eq!(a, b);
    assert!(a.classes.iter().all(|c| c.source_tags == Some(vec!["llm".to_owned(); 3])));
    assert_eq!(a.classes[1].split, Split::Unseen);
}

#[test]
fn cache_key_covers_prompt_temperature_and_model() {
    let k = cache_key("p", 0.9, "m");
    assert_eq!(k.len(), 64);
    assert_eq!(k, cache_key("p", 0.9, "m"));
    assert_ne!(k, cache_key("p ", 0.9, "m"));
    assert_ne!(k, cache_key("p", 0.8, "m"));
    assert_ne!(k, cache_key("p", 0.9, "n"));

    let dir = tempfile::tempdir().unwrap();
    let plan = plan(2);
    generate_views(&plan, &Echo::new(), &GenerateConfig::default(), dir.path()).unwrap();
    let hotter = GenerateConfig {
        temperature: 1.2,
        ..GenerateConfig::default()
    };
    let client = Echo::new();
    generate_views(&plan, &client, &hotter, dir.path()).unwrap();
    assert_eq!(client.calls(), 6);
}

fn write_fixtures(plan: &PromptPlan, config: &GenerateConfig, dir: &Path) -> Vec<Vec<String>> {
    plan.classes
        .iter()
        .map(|c| {
            c.prompts
                .iter()
                .enumerate()
                .map(|(v, p)| {
                    let text = format!("  {} view {v}: verbatim\ntext  ", c.name);
                    let key = cache_key(&p.text, config.temperature, &config.model_id);
                    std::fs::write(dir.join(format!("{key}.txt")), &text).unwrap();
                    text
                })
                .collect()
        })
        .collect()
}

#[test]
fn mock_fixtures_come_back_verbatim() {
    let fixtures = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let plan = plan(4);
    let config = GenerateConfig::default();
    let expected = write_fixtures(&plan, &config, fixtures.path());
    let mock = MockClient::new(fixtures.path());
    let (corpus, _) = generate_views(&plan, &mock, &config, cache.path()).unwrap();
    assert_eq!(mock.calls(), 12);
    let got: Vec<Vec<String>> = corpus.classes.iter().map(|c| c.views.clone()).collect();
    assert_eq!(got, expected);
}

#[test]
fn missing_fixture_names_class_and_view() {
    let fixtures = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let err = generate_views(&plan(1), &MockClient::new(fixtures.path()), &GenerateConfig::default(), cache.path())
        .unwrap_err();
    match err {
        Error::Request { class, .. } => assert_eq!(class, "species 0"),
        other => panic!("{other}"),
    }
}

struct Blank;

impl LlmClient for Blank {
    fn complete(&self, _: &str, _: &LlmRequest) -> Result<LlmResponse, String> {
        Ok(LlmResponse { text: " \n".into() })
    }

    fn calls(&self) -> usize {
        0
    }
}

#[test]
fn empty_generation_is_an_error_and_not_cached() {
    let cache = tempfile::tempdir().unwrap();
    let err = generate_views(&plan(1), &Blank, &GenerateConfig::default(), cache.path()).unwrap_err();
    assert!(matches!(err, Error::EmptyGeneration { .. }), "{err}");
    assert_eq!(std::fs::read_dir(cache.path()).unwrap().count(), 0);
}

#[test]
fn temperature_outside_range_is_rejected() {
    for t in [-0.1, 2.5, f64::NAN] {
        assert!(matches!(LlmRequest::new("p".into(), t, 512), Err(Error::Config(_))));
    }
    assert!(LlmRequest::new("p".into(), 2.0, 512).is_ok());
    let cache = tempfile::tempdir().unwrap();
    let hot = GenerateConfig {
        temperature: 3.0,
        ..GenerateConfig::default()
    };
    assert!(matches!(generate_views(&plan(1), &Echo::new(), &hot, cache.path()), Err(Error::Config(_))));
}

/// Tracks how many requests are in flight at once.
struct Slow {
    now: Mutex<(usize, usize)>,
}

impl LlmClient for Slow {
    fn complete(&self, key: &str, _: &LlmRequest) -> Result<LlmResponse, String> {
        {
            let mut g = self.now.lock().unwrap();
            g.0 += 1;
            g.1 = g.1.max(g.0);
        }
        std::thread::sleep(Duration::from_millis(20));
        self.now.lock().unwrap().0 -= 1;
        Ok(LlmResponse { text: key.into() })
    }

    fn calls(&self) -> usize {
        0
    }
}

#[test]
fn in_flight_requests_respect_the_cap() {
    let cache = tempfile::tempdir().unwrap();
    let client = Slow {
        now: Mutex::new((0, 0)),
    };
    let config = GenerateConfig {
        max_in_flight: 2,
        ..GenerateConfig::default()
    };
    let (corpus, _) = generate_views(&plan(4), &client, &config, cache.path()).unwrap();
    assert!(client.now.lock().unwrap().1 <= 2);
    // Results land in plan order regardless of completion order.
    let p = plan(4);
    for (c, pc) in corpus.classes.iter().zip(&p.classes) {
        for (v, pp) in c.views.iter().zip(&pc.prompts) {
            assert_eq!(v, &cache_key(&pp.text, 0.9, "default"));
        }
    }
}

fn corpus(names: &[(&str, Split)], views: usize, tag: Option<&str>) -> ViewCorpus {
    ViewCorpus {
        classes: names
            .iter()
            .map(|(n, s)| ClassEntry {
                name: n.to_string(),
                split: *s,
                views: (0..views).map(|v| format!("{n} {v}")).collect(),
                source_tags: tag.map(|t| vec![t.to_owned(); views]),
            })
            .collect(),
    }
}

#[test]
fn merging_one_wiki_view_gives_four() {
    let names = [("a", Split::Seen), ("b", Split::Unseen)];
    let llm = corpus(&names, 3, Some("llm"));
    let wiki = corpus(&[("b", Split::Unseen), ("a", Split::Seen)], 1, Some("wiki"));
    let merged = merge_views(&llm, &wiki).unwrap();
    assert_eq!(merged.views_per_class(), Some(4));
    assert_eq!(merged.classes[0].views[3], "a 0");
    assert_eq!(
        merged.classes[1].source_tags.as_deref().unwrap(),
        ["llm", "llm", "llm", "wiki"]
    );
    assert_eq!(merge_views(&llm, &ViewCorpus::default()).unwrap(), llm);
}

#[test]
fn merging_mismatched_classes_fails() {
    let llm = corpus(&[("a", Split::Seen), ("b", Split::Unseen)], 3, Some("llm"));
    let other_unseen = corpus(&[("a", Split::Seen), ("c", Split::Unseen)], 1, None);
    assert!(matches!(merge_views(&llm, &other_unseen), Err(Error::Config(_))));
    let moved = corpus(&[("a", Split::Seen), ("b", Split::Val)], 1, None);
    assert!(matches!(merge_views(&llm, &moved), Err(Error::Config(_))));
    let fewer = corpus(&[("a", Split::Seen)], 1, None);
    assert!(matches!(merge_views(&llm, &fewer), Err(Error::Config(_))));
}

/// Minimal HTTP/1.1 responder: one request per connection, statuses
/// served in order, request bodies and auth headers recorded.
struct Server {
    url: String,
    seen: Arc<Mutex<Vec<(Option<String>, serde_json::Value)>>>,
}

fn serve(script: Vec<(u16, &'static str)>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/generate", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    std::thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = Some(line["authorization:".len()..].trim().to_owned());
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push((auth, serde_json::from_slice(&buf).unwrap()));
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    Server { url, seen }
}

#[test]
fn http_client_posts_the_neutral_body() {
    let server = serve(vec![(200, r#"{"text":"A tall animal."}"#)]);
    let client = HttpClient::new(&server.url, Some("secret".into()));
    let req = LlmRequest::new("describe".into(), 0.9, 512).unwrap();
    assert_eq!(client.complete("k", &req).unwrap().text, "A tall animal.");
    let seen = server.seen.lock().unwrap();
    assert_eq!(seen[0].0.as_deref(), Some("Bearer secret"));
    assert_eq!(
        seen[0].1,
        serde_json::json!({"prompt": "describe", "temperature": 0.9, "max_tokens": 512})
    );
}

#[test]
fn http_client_retries_server_errors_with_backoff() {
    let server = serve(vec![(503, "{}"), (500, "{}"), (200, r#"{"text":"ok"}"#)]);
    let client = HttpClient::new(&server.url, None).with_retries(3, Duration::from_millis(10));
    let req = LlmRequest::new("p".into(), 0.9, 8).unwrap();
    let start = std::time::Instant::now();
    assert_eq!(client.complete("k", &req).unwrap().text, "ok");
    assert!(start.elapsed() >= Duration::from_millis(30));
    assert_eq!(server.seen.lock().unwrap().len(), 3);
    assert_eq!(client.calls(), 1);
}

#[test]
fn http_client_gives_up_after_the_retries() {
    let server = serve(vec![(500, "{}"); 4]);
    let client = HttpClient::new(&server.url, None).with_retries(3, Duration::from_millis(1));
    let err = client.complete("k", &LlmRequest::new("p".into(), 0.9, 8).unwrap()).unwrap_err();
    assert!(err.contains("HTTP 500") && err.contains("4 attempts"), "{err}");
}

#[test]
fn http_client_does_not_retry_client_errors() {
    let server = serve(vec![(401, r#"{"error":"bad key"}"#)]);
    let client = HttpClient::new(&server.url, None).with_retries(3, Duration::from_millis(1));
    let err = client.complete("k", &LlmRequest::new("p".into(), 0.9, 8).unwrap()).unwrap_err();
    assert!(err.contains("HTTP 401"), "{err}");
    assert_eq!(server.seen.lock().unwrap().len(), 1);
}

#[test]
fn unreachable_endpoint_is_a_request_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = HttpClient::new(format!("http://127.0.0.1:{port}/x"), None).with_retries(1, Duration::from_millis(1));
    let cache = tempfile::tempdir().unwrap();
    let err = generate_views(&plan(1), &client, &GenerateConfig::default(), cache.path()).unwrap_err();
    assert!(matches!(err, Error::Request { .. }), "{err}");
}
