//! Per-endpoint concurrency cap and token-bucket rate limiter.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

pub struct EndpointLimiter {
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    bucket: Option<Mutex<Bucket>>,
}

struct Bucket {
    rate: f64,
    capacity: f64,
    tokens: f64,
    last: Instant,
}

impl Bucket {
    /// Time to wait before a token is available, taking it if there is one.
    fn take(&mut self) -> Option<Duration> {
        let now = Instant::now();
        self.tokens = (self.tokens + now.duration_since(self.last).as_secs_f64() * self.rate)
            .min(self.capacity);
        self.last = now;
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            None
        } else {
            Some(Duration::from_secs_f64((1.0 - self.tokens) / self.rate))
        }
    }
}

pub struct Permit<'a> {
    limiter: &'a EndpointLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock().expect("limiter poisoned");
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

impl EndpointLimiter {
    pub fn new(max_in_flight: usize, rate_per_sec: Option<f64>) -> Self {
        EndpointLimiter {
            max_in_flight: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            bucket: rate_per_sec.filter(|r| *r > 0.0).map(|rate| {
                Mutex::new(Bucket {
                    rate,
                    capacity: rate.max(1.0),
                    tokens: rate.max(1.0),
                    last: Instant::now(),
                })
            }),
        }
    }

    /// Block until a slot and a rate token are available.
    pub fn acquire(&self) -> Permit<'_> {
        if let Some(bucket) = &self.bucket {
            loop {
                let wait = bucket.lock().expect("bucket poisoned").take();
                match wait {
                    None => break,
                    Some(d) => std::thread::sleep(d),
                }
            }
        }
        let mut n = self.in_flight.lock().expect("limiter poisoned");
        while *n >= self.max_in_flight {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        Permit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().expect("limiter poisoned")
    }
}
