//! Shared plumbing: bounded worker pool, token-bucket rate limiter, ISO week
//! labels, and ephemeral-port socket helpers.

use std::fmt;
use std::net::{IpAddr, UdpSocket};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{Datelike, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Run `f` over `items` on up to `workers` threads, preserving input order in
/// the result vector.
pub fn run_parallel<T, R, F>(items: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let workers = workers.max(1);
    let n = items.len();
    if n == 0 {
        return Vec::new();
    }
    let queue: Mutex<Vec<(usize, T)>> = Mutex::new(items.into_iter().enumerate().rev().collect());
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(n) {
            scope.spawn(|| loop {
                let next = queue.lock().unwrap().pop();
                match next {
                    Some((idx, item)) => {
                        let r = f(item);
                        out.lock().unwrap()[idx] = Some(r);
                    }
                    None => break,
                }
            });
        }
    });
    out.into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("worker completed"))
        .collect()
}

/// Token-bucket limiter shared across scan workers. `acquire` blocks until a
/// token is available, keeping the sustained send rate at or below
/// `per_second`.
pub struct RateLimiter {
    per_second: f64,
    state: Mutex<BucketState>,
}

struct BucketState {
    tokens: f64,
    last: Instant,
}

impl RateLimiter {
    pub fn new(per_second: f64) -> Self {
        let per_second = per_second.max(0.001);
        RateLimiter {
            per_second,
            state: Mutex::new(BucketState {
                // Start with a single token so the first send is immediate but
                // bursts stay bounded.
                tokens: 1.0,
                last: Instant::now(),
            }),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().unwrap();
                let now = Instant::now();
                let elapsed = now.duration_since(st.last).as_secs_f64();
                st.tokens = (st.tokens + elapsed * self.per_second).min(self.per_second.max(1.0));
                st.last = now;
                if st.tokens >= 1.0 {
                    st.tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.tokens) / self.per_second)
            };
            std::thread::sleep(wait.min(Duration::from_millis(50)));
        }
    }
}

/// ISO week label of the form `2021-W27`, used to bucket resolver snapshots.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeekLabel(String);

impl WeekLabel {
    /// Parse and validate a `YYYY-Www` label.
    pub fn parse(s: &str) -> Result<Self, WeekLabelError> {
        let bytes = s.as_bytes();
        let ok = bytes.len() == 8
            && bytes[0..4].iter().all(u8::is_ascii_digit)
            && bytes[4] == b'-'
            && bytes[5] == b'W'
            && bytes[6..8].iter().all(u8::is_ascii_digit)
            && matches!(s[6..8].parse::<u8>(), Ok(1..=53));
        if ok {
            Ok(WeekLabel(s.to_string()))
        } else {
            Err(WeekLabelError(s.to_string()))
        }
    }

    /// The current ISO week in UTC.
    pub fn current() -> Self {
        let wk = Utc::now().iso_week();
        WeekLabel(format!("{}-W{:02}", wk.year(), wk.week()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for WeekLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid ISO week label: {0:?} (expected e.g. 2021-W27)")]
pub struct WeekLabelError(pub String);

/// Inclusive bounds of the ephemeral port range probes draw from.
pub const EPHEMERAL_PORT_RANGE: (u16, u16) = (32768, 60999);

/// Draw a source port uniformly from the ephemeral range.
pub fn random_ephemeral_port() -> u16 {
    rand::rng().random_range(EPHEMERAL_PORT_RANGE.0..=EPHEMERAL_PORT_RANGE.1)
}

/// Bind a UDP socket on `ip` with a uniformly random ephemeral source port,
/// retrying on collisions with ports already in use.
pub fn bind_random_udp(ip: IpAddr) -> std::io::Result<UdpSocket> {
    let mut last_err = None;
    for _ in 0..32 {
        let port = random_ephemeral_port();
        match UdpSocket::bind((ip, port)) {
            Ok(s) => return Ok(s),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| std::io::Error::other("no ephemeral port available")))
}

static CORRELATION_COUNTER: AtomicUsize = AtomicUsize::new(0);

/// Process-unique correlation id for warming/measurement record pairs.
pub fn correlation_id() -> String {
    let seq = CORRELATION_COUNTER.fetch_add(1, Ordering::Relaxed);
    let salt: u64 = rand::rng().random();
    format!("{salt:016x}-{seq:06}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_preserves_order() {
        let items: Vec<u32> = (0..100).collect();
        let out = run_parallel(items, 8, |x| x * 2);
        assert_eq!(out, (0..100).map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn parallel_empty_input() {
        let out: Vec<u32> = run_parallel(Vec::<u32>::new(), 4, |x| x);
        assert!(out.is_empty());
    }

    #[test]
    fn rate_limiter_bounds_sustained_rate() {
        let limiter = RateLimiter::new(200.0);
        let start = Instant::now();
        for _ in 0..20 {
            limiter.acquire();
        }
        // 20 sends at 200/s need at least ~95 ms beyond the initial token.
        assert!(start.elapsed() >= Duration::from_millis(80));
    }

    #[test]
    fn week_labels() {
        assert!(WeekLabel::parse("2021-W27").is_ok());
        assert!(WeekLabel::parse("2021-w27").is_err());
        assert!(WeekLabel::parse("2021-W54").is_err());
        assert!(WeekLabel::parse("garbage").is_err());
        let current = WeekLabel::current();
        assert!(WeekLabel::parse(current.as_str()).is_ok());
    }

    #[test]
    fn ephemeral_ports_in_range_and_rarely_repeating() {
        let mut repeats = 0;
        let mut prev = None;
        for _ in 0..1000 {
            let p = random_ephemeral_port();
            assert!((EPHEMERAL_PORT_RANGE.0..=EPHEMERAL_PORT_RANGE.1).contains(&p));
            if prev == Some(p) {
                repeats += 1;
            }
            prev = Some(p);
        }
        // Uniform draws over ~28k ports: consecutive repeats are ~0.003%.
        assert!(repeats <= 2, "too many consecutive repeats: {repeats}");
    }
}
