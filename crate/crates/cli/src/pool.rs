//! Bounded per-shape worker pool, per-shape seeds and a shared append log.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed of one shape: the global seed mixed with a hash of its id, so results
/// do not depend on manifest order or scheduling.
pub fn shape_seed(global: u64, id: &str) -> u64 {
    // splitmix64 finalizer over the combined words.
    let mut z = global ^ fnv1a(id.as_bytes()).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs `job` over `items` on up to `workers` threads. Results keep input order.
pub fn run_jobs<T: Sync, R: Send>(items: &[T], workers: usize, job: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = job(&items[i]);
                results.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// CSV file shared by workers; each row is written whole under the lock.
pub struct AppendLog {
    file: Mutex<File>,
}

impl AppendLog {
    /// Opens `path` for appending, writing `header` if the file is new or empty.
    pub fn open(path: &Path, header: &str) -> std::io::Result<Self> {
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if file.metadata()?.len() == 0 {
            writeln!(file, "{header}")?;
        }
        Ok(Self { file: Mutex::new(file) })
    }

    pub fn append(&self, row: &str) -> std::io::Result<()> {
        let mut f = self.file.lock().expect("log poisoned");
        f.write_all(format!("{row}\n").as_bytes())?;
        f.flush()
    }
}

/// Makes free text safe for one CSV field.
pub fn csv_field(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so a
/// crash never leaves a truncated output that a resumed run would skip.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
