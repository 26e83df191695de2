#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::mpsc;

use axum::Router;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/e2e")
}

pub fn fixture(name: &str) -> PathBuf {
    fixture_dir().join(name)
}

/// Serve `router` on an ephemeral port from a background thread; returns the base URL.
pub fn spawn_server(router: Router) -> String {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}
