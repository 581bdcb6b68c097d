//! Bounded retry with exponential backoff inside a caller deadline.

use std::future::Future;
use std::time::Duration;

use tokio::time::Instant;

pub const MAX_RETRIES: u32 = 2;
pub const BASE_BACKOFF: Duration = Duration::from_millis(100);

/// Errors that say whether another attempt could succeed.
pub trait Retryable {
    fn is_retryable(&self) -> bool;
}

/// Runs `attempt` up to `1 + MAX_RETRIES` times. A retry only starts if its
/// backoff still fits before `deadline`; otherwise the last error is returned.
pub async fn with_retries<T, E, F, Fut>(deadline: Instant, mut attempt: F) -> Result<T, E>
where
    E: Retryable,
    F: FnMut() -> Fut,
    Fut: Future<Output = Result<T, E>>,
{
    let mut tries = 0;
    loop {
        match attempt().await {
            Ok(v) => return Ok(v),
            Err(e) if e.is_retryable() && tries < MAX_RETRIES => {
                let backoff = BASE_BACKOFF * 2u32.pow(tries);
                if Instant::now() + backoff >= deadline {
                    return Err(e);
                }
                tracing::debug!(attempt = tries + 1, ?backoff, "retrying");
                tokio::time::sleep(backoff).await;
                tries += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    #[derive(Debug, PartialEq)]
    struct Flaky(bool);
    impl Retryable for Flaky {
        fn is_retryable(&self) -> bool {
            self.0
        }
    }

    #[tokio::test(start_paused = true)]
    async fn retries_twice_then_gives_up() {
        let calls = AtomicU32::new(0);
        let deadline = Instant::now() + Duration::from_secs(5);
        let r: Result<(), _> = with_retries(deadline, || async {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(Flaky(true))
        })
        .await;
        assert_eq!(r, Err(Flaky(true)));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[tokio::test(start_paused = true)]
    async fn permanent_errors_are_not_retried() {
        let calls = AtomicU32::new(0);
        let deadline = Instant::now() + Duration::from_secs(5);
        let _: Result<(), _> = with_retries(deadline, || async {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(Flaky(false))
        })
        .await;
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[tokio::test(start_paused = true)]
    async fn backoff_respects_deadline() {
        let calls = AtomicU32::new(0);
        let deadline = Instant::now() + Duration::from_millis(150);
        let _: Result<(), _> = with_retries(deadline, || async {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(Flaky(true))
        })
        .await;
        // 100 ms fits, the following 200 ms backoff does not.
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }
}
