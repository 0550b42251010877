//! Remote provider protocols against a scripted in-process HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use faqrag_core::dense::{embed, RemoteEmbeddingProvider};
use faqrag_core::generation::{ChatClient, Decoding, Pipeline, RemoteChatClient};
use faqrag_core::harness::{Engine, GeneratorConfig, RunConfig};
use faqrag_core::remote::{JsonClient, RemoteConfig};
use faqrag_core::{Error, FALLBACK_ANSWER};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Recorded {
    headers: Vec<(String, String)>,
    body: Value,
}

/// Serves the scripted `(status, body)` replies in order, repeating the last one.
struct MockServer {
    url: String,
    requests: Arc<Mutex<Vec<Recorded>>>,
}

impl MockServer {
    fn start(replies: Vec<(u16, Value)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/endpoint", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        thread::spawn(move || {
            for (n, stream) in listener.incoming().enumerate() {
                let Ok(mut stream) = stream else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let mut headers = Vec::new();
                let mut len = 0;
                loop {
                    line.clear();
                    reader.read_line(&mut line).unwrap();
                    let trimmed = line.trim_end();
                    if trimmed.is_empty() {
                        break;
                    }
                    let (k, v) = trimmed.split_once(':').unwrap();
                    let (k, v) = (k.trim().to_ascii_lowercase(), v.trim().to_string());
                    if k == "content-length" {
                        len = v.parse().unwrap();
                    }
                    headers.push((k, v));
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                log.lock().unwrap().push(Recorded {
                    headers,
                    body: serde_json::from_slice(&body).unwrap_or(Value::Null),
                });
                let (status, reply) = &replies[n.min(replies.len() - 1)];
                let payload = reply.to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                );
            }
        });
        Self { url, requests }
    }

    fn config(&self, max_retries: u32) -> RemoteConfig {
        RemoteConfig {
            endpoint: self.url.clone(),
            max_retries,
            initial_backoff_ms: 1,
            timeout_ms: 5_000,
            ..RemoteConfig::default()
        }
    }

    fn requests(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }
}

fn texts(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("passage {i}")).collect()
}

fn vectors(n: usize, dim: usize) -> Value {
    json!({"vectors": vec![vec![0.5; dim]; n], "dim": dim})
}

#[test]
fn embedding_request_and_response_shape() {
    let server = MockServer::start(vec![(200, vectors(3, 4))]);
    let provider = RemoteEmbeddingProvider::new(JsonClient::new(server.config(0)).unwrap(), Some(4));
    let out = embed(&provider, &texts(3)).unwrap();
    assert_eq!(out.len(), 3);
    assert!(out.iter().all(|v| v.len() == 4));
    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].body, json!({"texts": ["passage 0", "passage 1", "passage 2"]}));
}

#[test]
fn embedding_count_mismatch_is_an_error() {
    let server = MockServer::start(vec![(200, vectors(119, 4))]);
    let provider = RemoteEmbeddingProvider::new(JsonClient::new(server.config(0)).unwrap(), None);
    let err = embed(&provider, &texts(120)).unwrap_err();
    assert!(
        matches!(err, Error::CountMismatch { expected: 120, actual: 119 }),
        "{err}"
    );
}

#[test]
fn embedding_dimension_mismatch_is_an_error() {
    let server = MockServer::start(vec![(200, vectors(2, 3))]);
    let provider = RemoteEmbeddingProvider::new(JsonClient::new(server.config(0)).unwrap(), Some(4));
    let err = embed(&provider, &texts(2)).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { expected: 4, actual: 3 }), "{err}");
}

#[test]
fn server_errors_and_throttling_are_retried() {
    let server = MockServer::start(vec![
        (503, json!({"error": "busy"})),
        (429, json!({"error": "slow down"})),
        (200, vectors(1, 2)),
    ]);
    let provider = RemoteEmbeddingProvider::new(JsonClient::new(server.config(3)).unwrap(), Some(2));
    embed(&provider, &texts(1)).unwrap();
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(vec![(400, json!({"error": "bad"}))]);
    let provider = RemoteEmbeddingProvider::new(JsonClient::new(server.config(3)).unwrap(), Some(2));
    let err = embed(&provider, &texts(1)).unwrap_err();
    assert!(matches!(err, Error::Transport(ref m) if m.contains("400")), "{err}");
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn retries_give_up_after_the_configured_attempts() {
    let server = MockServer::start(vec![(500, json!({}))]);
    let provider = RemoteEmbeddingProvider::new(JsonClient::new(server.config(2)).unwrap(), Some(2));
    let err = embed(&provider, &texts(1)).unwrap_err();
    assert!(err.to_string().contains("gave up after 3 attempts"), "{err}");
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn chat_request_shape_and_bearer_token() {
    let server = MockServer::start(vec![(200, json!({"choices": [{"message": {"role": "assistant", "content": "Four years."}}]}))]);
    std::env::set_var("FAQRAG_TEST_CHAT_TOKEN", "s3cret");
    let config = RemoteConfig {
        api_key_env: Some("FAQRAG_TEST_CHAT_TOKEN".into()),
        ..server.config(0)
    };
    let client = RemoteChatClient::new(
        JsonClient::new(config).unwrap(),
        Some("local-model".into()),
        Decoding {
            temperature: 0.0,
            max_tokens: 64,
        },
    );
    assert_eq!(client.complete("How long is the degree?").unwrap(), "Four years.");
    let req = &server.requests()[0];
    assert_eq!(
        req.body,
        json!({
            "model": "local-model",
            "messages": [{"role": "user", "content": "How long is the degree?"}],
            "temperature": 0.0,
            "max_tokens": 64
        })
    );
    assert!(req.headers.iter().any(|(k, v)| k == "authorization" && v == "Bearer s3cret"));
}

fn remote_generator_engine(server: &MockServer) -> Engine {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/testbed/config.json");
    let mut config = RunConfig::load(path).unwrap();
    config.pipelines = vec![Pipeline::RagBm25];
    config.generator = serde_json::from_value::<GeneratorConfig>(json!({
        "kind": "remote",
        "remote": {"endpoint": server.url, "max_retries": 0}
    }))
    .unwrap();
    Engine::build(config).unwrap()
}

#[test]
fn rag_prompt_carries_the_retrieved_passages_and_na_maps_to_fallback() {
    let server = MockServer::start(vec![(200, json!({"choices": [{"message": {"content": "NA."}}]}))]);
    let engine = remote_generator_engine(&server);
    let (answer, ranking) = engine.answer(Pipeline::RagBm25, "x", "how many credits do I need", 3).unwrap();
    assert!(!answer.answered);
    assert_eq!(answer.text, FALLBACK_ANSWER);
    assert!(!ranking.is_empty());
    let prompt = server.requests()[0].body["messages"][0]["content"].as_str().unwrap().to_string();
    assert!(prompt.contains("how many credits do I need"));
    for e in &ranking.entries {
        let text = &engine.collection().passages().get(&e.passage_id).unwrap().text;
        assert!(prompt.contains(text.as_str()), "prompt lacks passage {}", e.passage_id);
    }
}

#[test]
fn generated_answers_are_passed_through() {
    let server = MockServer::start(vec![(200, json!({"choices": [{"message": {"content": "You need 120 credits."}}]}))]);
    let engine = remote_generator_engine(&server);
    let (answer, _) = engine.answer(Pipeline::RagBm25, "x", "how many credits do I need", 1).unwrap();
    assert!(answer.answered);
    assert_eq!(answer.text, "You need 120 credits.");
}
