//! Bounded FIFO of candidates waiting for another dispatch attempt.

use std::collections::VecDeque;

use crate::prefilter::VlmCandidate;

#[derive(Debug, Clone)]
pub struct RetryEntry {
    pub candidate: VlmCandidate,
    pub enqueued_ms: u64,
    /// Failed attempts so far. Rate-limit denials do not count.
    pub attempts_used: u32,
}

#[derive(Debug, Clone)]
pub struct RetryQueue {
    cap: usize,
    entries: VecDeque<RetryEntry>,
}

impl RetryQueue {
    pub fn new(cap: usize) -> Self {
        RetryQueue { cap: cap.max(1), entries: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn front(&self) -> Option<&RetryEntry> {
        self.entries.front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RetryEntry> {
        self.entries.iter()
    }

    /// Appends, dropping and returning the oldest entry when full.
    pub fn enqueue(&mut self, entry: RetryEntry) -> Option<RetryEntry> {
        let dropped = if self.entries.len() >= self.cap { self.entries.pop_front() } else { None };
        self.entries.push_back(entry);
        dropped
    }

    /// Removes entries resident for longer than `window_ms`.
    pub fn expire(&mut self, now_ms: u64, window_ms: u64) -> Vec<RetryEntry> {
        let (gone, kept): (Vec<_>, Vec<_>) = self
            .entries
            .drain(..)
            .partition(|e| now_ms.saturating_sub(e.enqueued_ms) > window_ms);
        self.entries = kept.into();
        gone
    }

    pub(crate) fn pop_front(&mut self) -> Option<RetryEntry> {
        self.entries.pop_front()
    }

    pub(crate) fn restore(&mut self, entries: VecDeque<RetryEntry>) {
        debug_assert!(self.entries.is_empty());
        self.entries = entries;
    }
}
