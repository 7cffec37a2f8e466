use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::thread;

use qgaf_core::marketdata::{fetch_csv_url, parse_csv, CsvSchema, MarketDataError};

const BODY: &str = "date,close\n2024-01-02,100.0\n2024-01-03,101.5\n2024-01-04,\n2024-01-05,99.0\n";

/// Serves exactly one request with the given status line and body.
fn serve_once(status: &'static str, body: &'static str) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut line = String::new();
        while reader.read_line(&mut line).unwrap() > 0 && line != "\r\n" {
            line.clear();
        }
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 {status}\r\nContent-Type: text/csv\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
    });
    format!("http://{addr}/prices.csv")
}

#[test]
fn fetched_csv_matches_local_parse() {
    let url = serve_once("200 OK", BODY);
    let schema = CsvSchema::default();
    let fetched = fetch_csv_url(&url, &schema).unwrap();
    assert_eq!(fetched, parse_csv(BODY, &schema).unwrap());
    assert_eq!(fetched.missing_count(), 1);
}

#[test]
fn http_error_status_is_reported() {
    let url = serve_once("404 Not Found", "missing");
    let err = fetch_csv_url(&url, &CsvSchema::default()).unwrap_err();
    assert!(matches!(err, MarketDataError::HttpStatus { status: 404 }), "{err:?}");
}

#[test]
fn refused_connection_is_a_network_error() {
    // Bind then drop to get a port with nothing listening.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = fetch_csv_url(&format!("http://127.0.0.1:{port}/x.csv"), &CsvSchema::default()).unwrap_err();
    assert!(matches!(err, MarketDataError::Network(_)), "{err:?}");
}
