//! Process-wide accounting of outbound network operations.
//!
//! Every component that talks to the network calls [`begin_call`] first, so
//! tests can forbid the network and assert that nothing tried to use it.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

static CALLS: AtomicU64 = AtomicU64::new(0);
static FORBIDDEN: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
#[error("network access is forbidden in this mode")]
pub struct NetworkForbidden;

/// Records one network operation, failing if the network is forbidden.
pub fn begin_call() -> Result<(), NetworkForbidden> {
    CALLS.fetch_add(1, Ordering::SeqCst);
    if FORBIDDEN.load(Ordering::SeqCst) {
        Err(NetworkForbidden)
    } else {
        Ok(())
    }
}

/// Number of network operations attempted so far, forbidden ones included.
pub fn calls() -> u64 {
    CALLS.load(Ordering::SeqCst)
}

pub fn set_forbidden(forbidden: bool) {
    FORBIDDEN.store(forbidden, Ordering::SeqCst);
}

pub fn is_forbidden() -> bool {
    FORBIDDEN.load(Ordering::SeqCst)
}
