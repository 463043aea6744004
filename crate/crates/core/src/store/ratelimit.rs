use crate::clock::Micros;

/// Sustained request rate plus burst allowance for a store's client writes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateLimitPolicy {
    pub sustained_rate: f64,
    pub burst: u32,
}

impl RateLimitPolicy {
    pub fn new(sustained_rate: f64, burst: u32) -> Option<Self> {
        (sustained_rate > 0.0 && burst >= 1).then_some(Self {
            sustained_rate,
            burst,
        })
    }

    pub fn tenant_default() -> Self {
        Self {
            sustained_rate: 100.0,
            burst: 200,
        }
    }
}

#[derive(Debug)]
pub(crate) struct TokenBucket {
    policy: RateLimitPolicy,
    tokens: f64,
    last: Micros,
}

impl TokenBucket {
    pub(crate) fn new(policy: RateLimitPolicy, now: Micros) -> Self {
        Self {
            policy,
            tokens: f64::from(policy.burst),
            last: now,
        }
    }

    /// Takes one token, or returns how long until one is available.
    pub(crate) fn try_acquire(&mut self, now: Micros) -> Result<(), Micros> {
        let elapsed = now.saturating_sub(self.last) as f64 / 1e6;
        self.tokens =
            (self.tokens + elapsed * self.policy.sustained_rate).min(f64::from(self.policy.burst));
        self.last = now.max(self.last);
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            Ok(())
        } else {
            let wait = (1.0 - self.tokens) / self.policy.sustained_rate * 1e6;
            Err((wait.ceil() as Micros).max(1))
        }
    }
}
