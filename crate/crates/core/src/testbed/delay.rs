//! Delayed UDP endpoint: the testbed's socket layer.
//!
//! Every inbound datagram is handed to the protocol handler only after
//! `one_way_delay` (plus jitter), and every handler reply waits the same
//! delay before hitting the socket, so a client across the loopback observes
//! a symmetric emulated path. Pacing lives here, per endpoint, rather than in
//! OS traffic shaping.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::Rng;

/// A datagram-level protocol handler: consumes one due inbound datagram,
/// returns the datagrams to send in response.
pub type Handler = Box<dyn FnMut(SocketAddr, Vec<u8>) -> Vec<(SocketAddr, Vec<u8>)> + Send>;

#[derive(PartialEq, Eq)]
enum Direction {
    Inbound,
    Outbound,
}

struct Entry {
    due: Instant,
    seq: u64,
    dir: Direction,
    peer: SocketAddr,
    bytes: Vec<u8>,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.due == other.due && self.seq == other.seq
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Ties broken by arrival order so bursts stay FIFO.
        self.due.cmp(&other.due).then(self.seq.cmp(&other.seq))
    }
}

struct Shared {
    heap: Mutex<BinaryHeap<Reverse<Entry>>>,
    cv: Condvar,
    stop: AtomicBool,
    seq: AtomicU64,
    delay: Duration,
    jitter: Duration,
}

impl Shared {
    fn delayed_due(&self) -> Instant {
        let mut delay = self.delay;
        if !self.jitter.is_zero() {
            let j = self.jitter.as_secs_f64();
            let offset = rand::rng().random_range(-j..=j);
            let base = delay.as_secs_f64() + offset;
            delay = Duration::from_secs_f64(base.max(0.0));
        }
        Instant::now() + delay
    }

    fn push(&self, dir: Direction, peer: SocketAddr, bytes: Vec<u8>) {
        let entry = Entry {
            due: self.delayed_due(),
            seq: self.seq.fetch_add(1, Ordering::Relaxed),
            dir,
            peer,
            bytes,
        };
        self.heap.lock().unwrap().push(Reverse(entry));
        self.cv.notify_one();
    }
}

/// Running endpoint; dropping it stops both threads.
pub struct DelayedEndpoint {
    pub local_addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl DelayedEndpoint {
    pub fn spawn(
        sock: UdpSocket,
        delay: Duration,
        jitter: Duration,
        mut handler: Handler,
    ) -> std::io::Result<DelayedEndpoint> {
        let local_addr = sock.local_addr()?;
        let shared = Arc::new(Shared {
            heap: Mutex::new(BinaryHeap::new()),
            cv: Condvar::new(),
            stop: AtomicBool::new(false),
            seq: AtomicU64::new(0),
            delay,
            jitter,
        });

        let recv_sock = sock.try_clone()?;
        recv_sock.set_read_timeout(Some(Duration::from_millis(50)))?;
        let recv_shared = Arc::clone(&shared);
        let receiver = std::thread::spawn(move || {
            let mut buf = [0u8; 65535];
            while !recv_shared.stop.load(Ordering::Relaxed) {
                match recv_sock.recv_from(&mut buf) {
                    Ok((n, peer)) => recv_shared.push(Direction::Inbound, peer, buf[..n].to_vec()),
                    Err(e)
                        if e.kind() == std::io::ErrorKind::WouldBlock
                            || e.kind() == std::io::ErrorKind::TimedOut => {}
                    Err(_) => break,
                }
            }
        });

        let pacer_shared = Arc::clone(&shared);
        let pacer = std::thread::spawn(move || {
            loop {
                let due_entry = {
                    let mut heap = pacer_shared.heap.lock().unwrap();
                    loop {
                        if pacer_shared.stop.load(Ordering::Relaxed) {
                            return;
                        }
                        let now = Instant::now();
                        match heap.peek() {
                            Some(Reverse(e)) if e.due <= now => break heap.pop().unwrap().0,
                            Some(Reverse(e)) => {
                                let wait = e.due - now;
                                let (h, _) = pacer_shared.cv.wait_timeout(heap, wait).unwrap();
                                heap = h;
                            }
                            None => {
                                let (h, _) = pacer_shared
                                    .cv
                                    .wait_timeout(heap, Duration::from_millis(100))
                                    .unwrap();
                                heap = h;
                            }
                        }
                    }
                };
                match due_entry.dir {
                    Direction::Inbound => {
                        for (peer, bytes) in handler(due_entry.peer, due_entry.bytes) {
                            pacer_shared.push(Direction::Outbound, peer, bytes);
                        }
                    }
                    Direction::Outbound => {
                        let _ = sock.send_to(&due_entry.bytes, due_entry.peer);
                    }
                }
            }
        });

        Ok(DelayedEndpoint {
            local_addr,
            shared,
            threads: vec![receiver, pacer],
        })
    }

    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        self.shared.cv.notify_all();
    }
}

impl Drop for DelayedEndpoint {
    fn drop(&mut self) {
        self.stop();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn echo_endpoint(delay: Duration, jitter: Duration) -> DelayedEndpoint {
        let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
        DelayedEndpoint::spawn(
            sock,
            delay,
            jitter,
            Box::new(|peer, bytes| vec![(peer, bytes)]),
        )
        .unwrap()
    }

    fn ping(addr: SocketAddr) -> Duration {
        let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
        sock.connect(addr).unwrap();
        sock.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        let start = Instant::now();
        sock.send(b"ping").unwrap();
        let mut buf = [0u8; 16];
        let n = sock.recv(&mut buf).unwrap();
        assert_eq!(&buf[..n], b"ping");
        start.elapsed()
    }

    #[test]
    fn round_trip_is_twice_one_way_delay() {
        let ep = echo_endpoint(Duration::from_millis(25), Duration::ZERO);
        let rtt = ping(ep.local_addr);
        assert!(rtt >= Duration::from_millis(50), "rtt {rtt:?}");
        assert!(rtt <= Duration::from_millis(80), "rtt {rtt:?}");
    }

    #[test]
    fn zero_delay_is_fast() {
        let ep = echo_endpoint(Duration::ZERO, Duration::ZERO);
        let rtt = ping(ep.local_addr);
        assert!(rtt <= Duration::from_millis(30), "rtt {rtt:?}");
    }

    #[test]
    fn jitter_bounds_respected() {
        let ep = echo_endpoint(Duration::from_millis(20), Duration::from_millis(5));
        for _ in 0..10 {
            let rtt = ping(ep.local_addr);
            assert!(rtt >= Duration::from_millis(30), "rtt {rtt:?}");
            assert!(rtt <= Duration::from_millis(75), "rtt {rtt:?}");
        }
    }

    #[test]
    fn bursts_preserve_order() {
        // Two datagrams sent back to back must come back in order even with
        // identical due times.
        let ep = echo_endpoint(Duration::from_millis(10), Duration::ZERO);
        let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
        sock.connect(ep.local_addr).unwrap();
        sock.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        for i in 0..8u8 {
            sock.send(&[i]).unwrap();
        }
        let mut buf = [0u8; 4];
        for i in 0..8u8 {
            let n = sock.recv(&mut buf).unwrap();
            assert_eq!((n, buf[0]), (1, i));
        }
    }
}
