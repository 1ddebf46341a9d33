use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use handguide::dataset::{Captioner, HttpCaptioner, ItemMeta};
use handguide::Error;

struct Seen {
    auth: Option<String>,
    body_len: usize,
}

/// Serves `replies` in order, one connection each, and records what it saw.
fn serve(replies: Vec<(u16, &'static str)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/caption", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
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
                    auth = Some(line["authorization:".len()..].trim().to_string());
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen { auth, body_len: len });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn client(url: &str, retries: usize) -> HttpCaptioner {
    HttpCaptioner {
        url: url.to_string(),
        timeout: Duration::from_secs(5),
        retries,
        token: Some("secret".into()),
    }
}

#[test]
fn posts_png_and_reads_caption() {
    let (url, seen) = serve(vec![(200, r#"{"caption":"A person waving"}"#)]);
    let c = client(&url, 0).caption(&[1, 2, 3, 4], &ItemMeta::default()).unwrap();
    assert_eq!(c, "A person waving");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].body_len, 4);
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer secret"));
}

#[test]
fn retries_after_a_server_error() {
    let (url, seen) = serve(vec![(500, "{}"), (200, r#"{"caption":"ok"}"#)]);
    assert_eq!(client(&url, 1).caption(&[0], &ItemMeta::default()).unwrap(), "ok");
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn gives_up_after_the_retry_budget() {
    let (url, _) = serve(vec![(503, "{}"), (200, r#"{"nope":1}"#)]);
    let err = client(&url, 1).caption(&[0], &ItemMeta::default()).unwrap_err();
    assert!(matches!(err, Error::Caption(_)), "{err}");
    assert!(err.to_string().contains("2 attempts"), "{err}");
}
