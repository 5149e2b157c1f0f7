//! Scriptable test double for the external evaluator protocol.
//!
//! Answers with the `clx-like` synthetic surface of the space named in the
//! handshake. Behaviour is chosen with `--mode`:
//!
//! - `echo`: answer every request in order
//! - `shuffle`: answer each burst of pipelined requests in reverse order
//! - `fault`: ids divisible by 3 get an error response
//! - `crash-after N`: exit with status 1 after N answers
//! - `malformed`: ids with `id % 4 == 1` get a result whose objectives are not numbers
//! - `slow MS`: sleep MS milliseconds before each answer
//! - `bad-handshake`: reply to hello with something other than ready
//! - `missing-objective`: leave the last requested objective out of results

use std::io::{BufRead, BufReader, Write};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use subnas_core::evalmgr::protocol::{Request, Response};
use subnas_core::evalmgr::SyntheticSurface;
use subnas_core::space::{Genotype, SearchSpace};

enum Mode {
    Echo,
    Shuffle,
    Fault,
    CrashAfter(usize),
    Malformed,
    Slow(u64),
    BadHandshake,
    MissingObjective,
}

fn parse_mode(args: &[String]) -> Mode {
    let mut mode = Mode::Echo;
    let mut i = 0;
    while i < args.len() {
        if args[i] == "--mode" {
            let name = args.get(i + 1).map(String::as_str).unwrap_or("echo");
            let arg = args.get(i + 2).and_then(|a| a.parse::<u64>().ok());
            mode = match name {
                "shuffle" => Mode::Shuffle,
                "fault" => Mode::Fault,
                "crash-after" => Mode::CrashAfter(arg.unwrap_or(1) as usize),
                "malformed" => Mode::Malformed,
                "slow" => Mode::Slow(arg.unwrap_or(100)),
                "bad-handshake" => Mode::BadHandshake,
                "missing-objective" => Mode::MissingObjective,
                _ => Mode::Echo,
            };
        }
        i += 1;
    }
    mode
}

fn answer(surface: &Option<SyntheticSurface>, id: u64, genes: Vec<i64>, objectives: &[String]) -> Response {
    let Some(s) = surface else {
        return Response::Error { id, message: "unknown space".into() };
    };
    let g = Genotype::new(genes);
    if s.space.validate(&g).is_err() {
        return Response::Error { id, message: "invalid genotype".into() };
    }
    let mut map = serde_json::Map::new();
    for name in objectives {
        let v = if name.contains("latency") { s.latency(&g) } else { s.accuracy(&g) };
        map.insert(name.clone(), serde_json::json!(v));
    }
    Response::Result { id, objectives: map }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = parse_mode(&args);
    let (tx, rx) = mpsc::channel::<String>();
    thread::spawn(move || {
        for line in BufReader::new(std::io::stdin()).lines() {
            match line {
                Ok(l) => {
                    if tx.send(l).is_err() {
                        break;
                    }
                }
                Err(_) => break,
            }
        }
    });
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let send = |line: String, out: &mut std::io::StdoutLock| {
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    };

    let mut surface = None;
    let mut objectives = Vec::new();
    let mut answered = 0usize;
    while let Ok(line) = rx.recv() {
        let mut burst = vec![line];
        if matches!(mode, Mode::Shuffle) {
            while let Ok(more) = rx.recv_timeout(Duration::from_millis(50)) {
                burst.push(more);
            }
            burst.reverse();
        }
        for line in burst {
            let req: Request = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(_) => continue,
            };
            match req {
                Request::Hello { objectives: names, space } => {
                    if matches!(mode, Mode::BadHandshake) {
                        send(r#"{"type":"welcome"}"#.to_string(), &mut out);
                        continue;
                    }
                    surface = SearchSpace::resolve(&space).ok().and_then(|sp| SyntheticSurface::preset(&sp, "clx-like").ok());
                    objectives = names;
                    if matches!(mode, Mode::MissingObjective) {
                        objectives.pop();
                    }
                    send(Response::Ready.to_line(), &mut out);
                }
                Request::Eval { id, genes } => {
                    if let Mode::CrashAfter(n) = mode {
                        if answered >= n {
                            std::process::exit(1);
                        }
                    }
                    if let Mode::Slow(ms) = mode {
                        thread::sleep(Duration::from_millis(ms));
                    }
                    let line = match mode {
                        Mode::Fault if id % 3 == 0 => Response::Error { id, message: format!("injected fault for {id}") }.to_line(),
                        Mode::Malformed if id % 4 == 1 => format!(r#"{{"type":"result","id":{id},"objectives":"garbled"}}"#),
                        _ => answer(&surface, id, genes, &objectives).to_line(),
                    };
                    send(line, &mut out);
                    answered += 1;
                }
                Request::Bye => return,
            }
        }
    }
}
