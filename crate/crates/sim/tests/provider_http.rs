use std::sync::Arc;

use hub_core::broker::pkce;
use hub_sim::schema::FORMS;
use hub_sim::{generate_fixture, serve_provider, MockProvider};
use serde_json::{json, Value};

#[tokio::test(flavor = "multi_thread")]
async fn oauth_and_graphql_over_http() {
    let provider = Arc::new(MockProvider::new(&generate_fixture(FORMS, 9, 5, 1).unwrap()).unwrap());
    let server = serve_provider(provider.clone()).await.unwrap();
    let base = server.base_url();
    let http = reqwest::Client::builder().redirect(reqwest::redirect::Policy::none()).build().unwrap();

    let verifier = pkce::generate_verifier();
    let resp = http
        .get(format!("{base}/authorize"))
        .query(&[
            ("client_id", "c"),
            ("redirect_uri", "http://127.0.0.1/cb"),
            ("state", "xyz"),
            ("code_challenge", &pkce::challenge_for(&verifier)),
            ("code_challenge_method", "S256"),
        ])
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 302);
    let location = url::Url::parse(resp.headers()["location"].to_str().unwrap()).unwrap();
    let pairs: std::collections::HashMap<_, _> = location.query_pairs().into_owned().collect();
    assert_eq!(pairs["state"], "xyz");

    let token = |verifier: String| {
        let http = http.clone();
        let code = pairs["code"].clone();
        let base = base.clone();
        async move {
            http.post(format!("{base}/token"))
                .json(&json!({"grant_type": "authorization_code", "code": code, "code_verifier": verifier}))
                .send()
                .await
                .unwrap()
        }
    };
    let ok = token(verifier.clone()).await;
    assert_eq!(ok.status(), 200);
    let access = ok.json::<Value>().await.unwrap()["access_token"].as_str().unwrap().to_string();
    assert_eq!(token(verifier).await.status(), 400);

    let pull = |query: &'static str, bearer: String| {
        let http = http.clone();
        let base = base.clone();
        async move {
            http.post(format!("{base}/pull"))
                .bearer_auth(bearer)
                .json(&json!({"resource_type": FORMS, "query": query}))
                .send()
                .await
                .unwrap()
        }
    };
    let resp = pull("{ responses(formId) { responseId valid } }", access.clone()).await;
    assert_eq!(resp.status(), 200);
    let body: Value = resp.json().await.unwrap();
    let items = body["responses"].as_array().unwrap();
    assert_eq!(items.len(), 9);
    assert!(items.iter().all(|r| r.as_object().unwrap().len() == 2));
    assert_eq!(items.iter().filter(|r| r["valid"] == true).count(), 5);

    assert_eq!(pull("{ responses { nope } }", access.clone()).await.status(), 400);
    assert_eq!(pull("{ responses { ...F } }", access.clone()).await.status(), 400);
    assert_eq!(pull("{ responses { valid } }", "bogus".into()).await.status(), 401);
    assert_eq!(provider.pull_count(), 3);
}
