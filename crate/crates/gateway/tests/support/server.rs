// A gateway on an ephemeral port over an in-memory store, plus stub
// upstreams for feeds and proxied pages.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;

use axum::Router;
use dashgate_core::config::SeedFeed;
use dashgate_core::store::{MemoryStore, Store};
use dashgate_core::{Clock, Platform, SystemClock};
use dashgate_gateway::{router, AppState, GatewayConfig};
use reqwest::header::HeaderMap;
use reqwest::StatusCode;
use serde_json::{json, Value};
use tokio::net::TcpListener;

pub const PASSWORD: &str = "correct horse";

pub struct TestServer {
    pub base: String,
    pub addr: SocketAddr,
    pub state: AppState,
    pub http: reqwest::Client,
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Value,
}

impl Reply {
    pub fn data(&self) -> &Value {
        assert_eq!(self.body["ok"], json!(true), "expected success, got {} {}", self.status, self.body);
        &self.body["data"]
    }

    pub fn code(&self) -> &str {
        self.body["error"]["code"].as_str().unwrap_or("")
    }
}

pub fn base_config() -> GatewayConfig {
    let mut c = GatewayConfig::default();
    c.platform.password_rounds = 1_000;
    c.platform.admin_users = vec!["root".to_owned()];
    // No real network in tests.
    c.platform.catalog.feeds.clear();
    c.poll.wait_s = 2;
    c
}

pub fn feed_seed(title: &str, url: &str) -> SeedFeed {
    SeedFeed {
        title: title.to_owned(),
        source: url.to_owned(),
        refresh: 1,
    }
}

pub async fn spawn(config: GatewayConfig) -> TestServer {
    spawn_with_clock(config, Arc::new(SystemClock)).await
}

pub async fn spawn_with_clock(config: GatewayConfig, clock: Arc<dyn Clock>) -> TestServer {
    spawn_on(config, Arc::new(MemoryStore::new()), clock).await
}

pub async fn spawn_on(mut config: GatewayConfig, store: Arc<dyn Store>, clock: Arc<dyn Clock>) -> TestServer {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    config.platform.gateway_base = format!("http://{addr}/proxy");
    let platform = Platform::open(
        store,
        clock,
        config.platform,
        &[addr.to_string(), format!("localhost:{}", addr.port())],
    )
    .unwrap();
    let state = AppState::new(Arc::new(platform), config.poll, config.ui);
    let app = router(state.clone());
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    TestServer {
        base: format!("http://{addr}"),
        addr,
        state,
        http: reqwest::Client::new(),
    }
}

pub async fn stub(app: Router) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    addr
}

impl TestServer {
    pub fn platform(&self) -> &Platform {
        &self.state.platform
    }

    async fn finish(resp: reqwest::Response) -> Reply {
        let status = resp.status();
        let headers = resp.headers().clone();
        let text = resp.text().await.unwrap();
        let body = serde_json::from_str(&text).unwrap_or(Value::String(text));
        Reply { status, headers, body }
    }

    pub async fn get(&self, path: &str, token: Option<&str>) -> Reply {
        let mut req = self.http.get(format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        Self::finish(req.send().await.unwrap()).await
    }

    pub async fn post(&self, path: &str, token: Option<&str>, body: Value) -> Reply {
        let mut req = self.http.post(format!("{}{path}", self.base)).json(&body);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        Self::finish(req.send().await.unwrap()).await
    }

    pub async fn delete(&self, path: &str, token: Option<&str>) -> Reply {
        let mut req = self.http.delete(format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        Self::finish(req.send().await.unwrap()).await
    }

    /// Registers `name` and returns a fresh session token.
    pub async fn user(&self, name: &str) -> String {
        let r = self
            .post("/api/register", None, json!({"username": name, "password": PASSWORD}))
            .await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.body);
        self.login(name).await
    }

    pub async fn login(&self, name: &str) -> String {
        let r = self
            .post("/api/login", None, json!({"username": name, "password": PASSWORD}))
            .await;
        r.data()["token"].as_str().unwrap().to_owned()
    }

    pub async fn layout(&self, token: &str) -> Value {
        self.get("/api/layout", Some(token)).await.data().clone()
    }

    pub async fn catalog_id(&self, token: &str, title: &str) -> String {
        let r = self.get("/api/catalog", Some(token)).await;
        r.data()
            .as_array()
            .unwrap()
            .iter()
            .find(|d| d["title"] == title)
            .unwrap_or_else(|| panic!("no catalog entry {title}"))["descriptor_id"]
            .as_str()
            .unwrap()
            .to_owned()
    }

    /// Adds a widget to the first tab and returns its instance id.
    pub async fn add_widget(&self, token: &str, descriptor_id: &str, config: Value) -> String {
        let layout = self.layout(token).await;
        let r = self
            .post(
                "/api/layout/ops",
                Some(token),
                json!({
                    "version": layout["version"],
                    "op": "add",
                    "args": {"tab_id": layout["tabs"][0]["tab_id"], "descriptor_id": descriptor_id, "config": config},
                }),
            )
            .await;
        r.data()["instance"]["instance_id"].as_str().unwrap().to_owned()
    }

    pub async fn token_of(&self, token: &str, instance: &str) -> String {
        let r = self.get(&format!("/api/module/{instance}/update"), Some(token)).await;
        r.data()["state_token"].as_str().unwrap().to_owned()
    }
}
