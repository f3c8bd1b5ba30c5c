//! Cluster answers with an HTTP entailment service.
//!
//! The service receives `POST {"premise": .., "hypothesis": ..}` and answers
//! `{"entails": true}` or `{"score": 0.93}`. Point the example at one with
//!
//! COE_NLI_ENDPOINT=http://localhost:8000/nli cargo run --example remote_oracle
//!
//! Without an endpoint the example starts a tiny local stand-in service.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use coe::clustering::{cluster_pool, ResponseSample};
use coe::harness::{CachedOracle, EntailmentCache, RemoteConfig, RemoteOracle, ENDPOINT_ENV};

/// Serves "entails" whenever both texts mention the same first word.
fn local_service() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let url = format!("http://{}/nli", listener.local_addr().expect("addr"));
    std::thread::spawn(move || {
        for mut stream in listener.incoming().flatten() {
            let mut reader = BufReader::new(stream.try_clone().expect("clone"));
            let mut length = 0;
            let mut line = String::new();
            while reader.read_line(&mut line).unwrap_or(0) > 0 && line != "\r\n" {
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
                line.clear();
            }
            let mut body = vec![0; length];
            let _ = reader.read_exact(&mut body);
            let req: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
            let head = |k: &str| {
                let text = req[k].as_str().unwrap_or("").to_lowercase();
                text.split(|c: char| !c.is_alphanumeric())
                    .find(|w| !w.is_empty())
                    .unwrap_or("")
                    .to_string()
            };
            let reply = format!(
                r#"{{"score": {}}}"#,
                if head("premise") == head("hypothesis") {
                    0.9
                } else {
                    0.1
                }
            );
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    url
}

fn main() -> coe::error::Result<()> {
    let config = match RemoteConfig::from_env_or(None) {
        Ok(c) => c,
        Err(_) => {
            println!("{ENDPOINT_ENV} not set; using a local stand-in service");
            RemoteConfig::new(local_service())
        }
    };
    let remote = RemoteOracle::new(config)?;

    let samples: Vec<ResponseSample> = [
        "Jupiter is largest",
        "jupiter",
        "Saturn",
        "Saturn, probably",
        "Neptune",
    ]
    .iter()
    .enumerate()
    .map(|(i, t)| ResponseSample::text_only(i % 2, *t))
    .collect();

    let cache = EntailmentCache::new();
    let cached = CachedOracle::new(&remote, &cache);
    let space = cluster_pool(&samples, &cached)?;
    println!("clusters: {:?}", space.assignments());
    println!(
        "requests sent: {}, cache hits: {}",
        remote.requests(),
        cached.hits()
    );
    Ok(())
}
