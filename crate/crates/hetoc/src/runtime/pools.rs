use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::{ThreadPool, ThreadPoolBuilder};

type Pools = Mutex<HashMap<(String, usize), Arc<ThreadPool>>>;

/// Worker pools are expensive to start, so one is kept per device id and
/// size for the life of the process.
pub(crate) fn pool(device: &str, threads: usize) -> Arc<ThreadPool> {
    static POOLS: OnceLock<Pools> = OnceLock::new();
    let threads = threads.clamp(1, 256);
    let mut pools = POOLS.get_or_init(Mutex::default).lock().unwrap();
    pools
        .entry((device.to_string(), threads))
        .or_insert_with(|| {
            let name = device.to_string();
            Arc::new(
                ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .thread_name(move |i| format!("{name}#{i}"))
                    .build()
                    .expect("worker pool"),
            )
        })
        .clone()
}
