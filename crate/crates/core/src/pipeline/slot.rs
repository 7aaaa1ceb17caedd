use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use crossbeam_channel::{Receiver, Sender};

/// Capacity-1 handoff where a new item replaces an unconsumed one.
#[derive(Debug)]
pub struct LatestSlot<T> {
    state: Mutex<(Option<T>, bool)>,
    ready: Condvar,
    dropped: Arc<AtomicU64>,
}

impl<T> LatestSlot<T> {
    pub fn new(dropped: Arc<AtomicU64>) -> Self {
        Self {
            state: Mutex::new((None, false)),
            ready: Condvar::new(),
            dropped,
        }
    }

    /// Never blocks. Returns `true` when an older item was discarded.
    pub fn put(&self, item: T) -> bool {
        let mut st = self.state.lock().expect("slot poisoned");
        let replaced = st.0.replace(item).is_some();
        if replaced {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        self.ready.notify_one();
        replaced
    }

    /// Blocks until an item arrives; `None` once closed and empty.
    pub fn take(&self) -> Option<T> {
        let mut st = self.state.lock().expect("slot poisoned");
        loop {
            if let Some(item) = st.0.take() {
                return Some(item);
            }
            if st.1 {
                return None;
            }
            st = self.ready.wait(st).expect("slot poisoned");
        }
    }

    /// A pending item is still delivered after close.
    pub fn close(&self) {
        self.state.lock().expect("slot poisoned").1 = true;
        self.ready.notify_all();
    }
}

/// Sending half of an inter-stage link. Dropping it closes the link.
pub(crate) enum Tx<T> {
    Lossless(Sender<T>),
    Latest(Arc<LatestSlot<T>>),
}

pub(crate) enum Rx<T> {
    Lossless(Receiver<T>),
    Latest(Arc<LatestSlot<T>>),
}

impl<T> Tx<T> {
    /// `false` when the receiver is gone.
    pub fn send(&self, item: T) -> bool {
        match self {
            Tx::Lossless(s) => s.send(item).is_ok(),
            Tx::Latest(slot) => {
                slot.put(item);
                true
            }
        }
    }
}

impl<T> Drop for Tx<T> {
    fn drop(&mut self) {
        if let Tx::Latest(slot) = self {
            slot.close();
        }
    }
}

impl<T> Rx<T> {
    pub fn recv(&self) -> Option<T> {
        match self {
            Rx::Lossless(r) => r.recv().ok(),
            Rx::Latest(slot) => slot.take(),
        }
    }
}

pub(crate) fn link<T>(latest: bool, dropped: &Arc<AtomicU64>) -> (Tx<T>, Rx<T>) {
    if latest {
        let slot = Arc::new(LatestSlot::new(dropped.clone()));
        (Tx::Latest(slot.clone()), Rx::Latest(slot))
    } else {
        let (s, r) = crossbeam_channel::bounded(1);
        (Tx::Lossless(s), Rx::Lossless(r))
    }
}
