mod common;

use std::time::Duration;

use common::mock_http::MockServer;
use hmrag::gateway::{
    caption_image, complete_chat, embed_text, ChatTurn, DecodingParams, HttpCaptioner, HttpChat, HttpEmbedder,
    ModelBackendConfig,
};
use hmrag::retrieval::web::{search, SearchConfig, SerperClient};
use hmrag::HmragError;
use serde_json::json;

fn backend(endpoint: &str, key_env: &str, retries: u32) -> ModelBackendConfig {
    ModelBackendConfig {
        endpoint: format!("{endpoint}/v1"),
        model_name: "small-model".into(),
        api_key_env: key_env.into(),
        timeout_s: 5.0,
        retries,
    }
}

fn chat_reply(text: &str) -> (u16, String) {
    (200, json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string())
}

#[tokio::test]
async fn chat_request_carries_greedy_decoding_and_auth() {
    std::env::set_var("HMRAG_TEST_CHAT_KEY", "sk-test");
    let (server, url) = MockServer::start(vec![chat_reply("Granite.")]).await;
    let chat = HttpChat::new(backend(&url, "HMRAG_TEST_CHAT_KEY", 0)).unwrap();
    let turns = [ChatTurn::system("Be brief."), ChatTurn::user("Which rock is igneous?")];
    let out = complete_chat(&chat, &turns, &DecodingParams::default()).await.unwrap();
    assert_eq!(out, "Granite.");

    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].path, "/v1/chat/completions");
    assert_eq!(reqs[0].headers["authorization"], "Bearer sk-test");
    let body = &reqs[0].body;
    assert_eq!(body["model"], "small-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["top_p"], 1.0);
    assert_eq!(body["stream"], false);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "Which rock is igneous?");
}

#[tokio::test]
async fn server_errors_are_retried() {
    let (server, url) = MockServer::start(vec![
        (503, "busy".into()),
        (429, "slow down".into()),
        chat_reply("ok"),
    ])
    .await;
    let chat = HttpChat::new(backend(&url, "", 2)).unwrap();
    let out = complete_chat(&chat, &[ChatTurn::user("hi")], &DecodingParams::default()).await;
    assert_eq!(out.unwrap(), "ok");
    assert_eq!(server.requests().len(), 3);
}

#[tokio::test]
async fn retry_budget_is_reported() {
    let (server, url) = MockServer::start(vec![(500, "down".into())]).await;
    let chat = HttpChat::new(backend(&url, "", 1)).unwrap();
    let err = complete_chat(&chat, &[ChatTurn::user("hi")], &DecodingParams::default())
        .await
        .unwrap_err();
    assert!(matches!(err, HmragError::BackendUnreachable { attempts: 2, .. }), "{err}");
    assert_eq!(server.requests().len(), 2);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let (server, url) = MockServer::start(vec![(400, "bad request".into())]).await;
    let chat = HttpChat::new(backend(&url, "", 3)).unwrap();
    let err = complete_chat(&chat, &[ChatTurn::user("hi")], &DecodingParams::default())
        .await
        .unwrap_err();
    assert!(matches!(err, HmragError::BackendResponse(_)));
    assert_eq!(server.requests().len(), 1);
}

#[tokio::test]
async fn closed_port_is_unreachable() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let chat = HttpChat::new(backend(&url, "", 0)).unwrap();
    let err = complete_chat(&chat, &[ChatTurn::user("hi")], &DecodingParams::default())
        .await
        .unwrap_err();
    assert!(err.is_retryable());
}

#[tokio::test]
async fn embeddings_keep_their_dimension() {
    let (server, url) = MockServer::start(vec![
        (200, json!({"data": [{"embedding": [0.5, 0.25, 0.125]}]}).to_string()),
        (200, json!({"data": [{"embedding": [1.0, 0.0]}]}).to_string()),
    ])
    .await;
    let e = HttpEmbedder::new(backend(&url, "", 0)).unwrap();
    assert_eq!(embed_text(&e, "granite").await.unwrap(), vec![0.5, 0.25, 0.125]);
    let err = embed_text(&e, "basalt").await.unwrap_err();
    assert!(matches!(err, HmragError::DimensionMismatch { expected: 3, actual: 2 }));
    let reqs = server.requests();
    assert_eq!(reqs[0].path, "/v1/embeddings");
    assert_eq!(reqs[0].body["input"], json!(["granite"]));
}

#[tokio::test]
async fn local_images_are_inlined() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("soil.png");
    std::fs::write(&img, [0x89, b'P', b'N', b'G']).unwrap();
    let (server, url) = MockServer::start(vec![chat_reply("Layers of soil.")]).await;
    let c = HttpCaptioner::new(backend(&url, "", 0), "Describe the image.").unwrap();
    let out = caption_image(&c, img.to_str().unwrap()).await.unwrap();
    assert_eq!(out, "Layers of soil.");
    let body = &server.requests()[0].body;
    let parts = &body["messages"][0]["content"];
    assert_eq!(parts[0]["text"], "Describe the image.");
    let image_url = parts[1]["image_url"]["url"].as_str().unwrap();
    assert!(image_url.starts_with("data:image/png;base64,"));
}

#[tokio::test]
async fn serper_request_and_parse() {
    std::env::set_var("HMRAG_TEST_SERPER_KEY", "serp");
    let payload = json!({"organic": [
        {"title": "Moons", "link": "https://ex.org/b", "snippet": "Second.", "position": 2},
        {"title": "Jupiter", "link": "https://ex.org/a", "snippet": "Largest planet.", "position": 1}
    ]});
    let (server, url) = MockServer::start(vec![(200, payload.to_string())]).await;
    let client = SerperClient::new(format!("{url}/search"), "HMRAG_TEST_SERPER_KEY", Duration::from_secs(5)).unwrap();
    let cfg = SearchConfig {
        num_results: 3,
        ..SearchConfig::default()
    };
    let results = search("largest planet", &cfg, &client).await.unwrap();
    assert_eq!(results[0].title, "Jupiter");
    assert_eq!(results.len(), 2);
    let req = &server.requests()[0];
    assert_eq!(req.path, "/search");
    assert_eq!(req.headers["x-api-key"], "serp");
    assert_eq!(req.body, json!({"q": "largest planet", "num": 3, "hl": "en"}));

    let news = SearchConfig {
        type_: "news".into(),
        ..cfg
    };
    search("largest planet", &news, &client).await.unwrap();
    assert_eq!(server.requests()[1].body["type"], "news");
}
