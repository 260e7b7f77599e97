//! Virtual core mesh: a fixed pool of lockstep workers exchanging shard
//! segments through deterministic collectives.
//!
//! The mesh emulates the *effect* of an accelerator pod's interconnect — a
//! fast all-to-all between `2^{N_g}` cores — on a multicore host. One worker
//! thread is spawned per shard and lives for the lifetime of the [`Mesh`].
//! Execution follows the SIMD paradigm: every worker runs the identical
//! closure on its own shard id, and collectives are the only synchronization
//! points. Since each collective folds or routes data in a fixed order
//! (ascending shard id), outputs are bit-identical across runs regardless of
//! how the OS schedules the threads.
//!
//! Collectives must be entered by all workers with consistent arguments.
//! Divergence is a programming error; debug builds detect it with a
//! per-collective tag check and panic.

use std::any::Any;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use num_complex::Complex64;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Poisonable barrier
// ---------------------------------------------------------------------------

/// Reusable barrier that can be poisoned.
///
/// When a worker panics mid-job, peers may already be parked inside a
/// collective. Poisoning wakes them and makes their `wait` panic in turn, so
/// every worker unwinds to its job boundary instead of deadlocking.
struct Barrier {
    lock: Mutex<BarrierState>,
    cvar: Condvar,
    parties: usize,
}

struct BarrierState {
    waiting: usize,
    generation: u64,
    poisoned: bool,
}

impl Barrier {
    fn new(parties: usize) -> Self {
        Barrier {
            lock: Mutex::new(BarrierState { waiting: 0, generation: 0, poisoned: false }),
            cvar: Condvar::new(),
            parties,
        }
    }

    fn wait(&self) {
        let mut st = self.lock.lock().unwrap();
        if st.poisoned {
            panic!("mesh barrier poisoned by a worker panic");
        }
        st.waiting += 1;
        if st.waiting == self.parties {
            st.waiting = 0;
            st.generation += 1;
            self.cvar.notify_all();
            return;
        }
        let gen = st.generation;
        while st.generation == gen && !st.poisoned {
            st = self.cvar.wait(st).unwrap();
        }
        if st.poisoned {
            panic!("mesh barrier poisoned by a worker panic");
        }
    }

    fn poison(&self) {
        let mut st = self.lock.lock().unwrap();
        st.poisoned = true;
        self.cvar.notify_all();
    }
}

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

/// Bijective routing for [`WorkerCtx::all_to_all`]: maps each
/// `(sender, slot)` pair to a `(receiver, out_slot)` pair.
#[derive(Clone, Debug)]
pub struct Routing {
    num_shards: usize,
    /// `dest[sender * S + slot] = (receiver, out_slot)`
    dest: Vec<(u32, u32)>,
    /// `src[receiver * S + out_slot] = (sender, slot)` (inverse map)
    src: Vec<(u32, u32)>,
}

impl Routing {
    /// Builds a routing from a map `(sender, slot) -> (receiver, out_slot)`
    /// and validates that it is a bijection on `[0,S) × [0,S)`.
    pub fn from_fn(num_shards: usize, f: impl Fn(usize, usize) -> (usize, usize)) -> Result<Self> {
        let s = num_shards;
        let mut dest = vec![(u32::MAX, u32::MAX); s * s];
        let mut src = vec![(u32::MAX, u32::MAX); s * s];
        for sender in 0..s {
            for slot in 0..s {
                let (r, j) = f(sender, slot);
                if r >= s || j >= s {
                    return Err(Error::Contract(format!(
                        "routing maps ({sender},{slot}) out of range to ({r},{j})"
                    )));
                }
                if src[r * s + j] != (u32::MAX, u32::MAX) {
                    return Err(Error::Contract(format!(
                        "routing is not a bijection: ({r},{j}) hit twice"
                    )));
                }
                dest[sender * s + slot] = (r as u32, j as u32);
                src[r * s + j] = (sender as u32, slot as u32);
            }
        }
        Ok(Routing { num_shards: s, dest, src })
    }

    /// The identity routing: every segment stays where it is.
    pub fn identity(num_shards: usize) -> Self {
        Self::from_fn(num_shards, |s, k| (s, k)).expect("identity is a bijection")
    }

    /// The inverse routing.
    pub fn inverse(&self) -> Self {
        let s = self.num_shards;
        Self::from_fn(s, |sender, slot| {
            let (r, j) = self.src[sender * s + slot];
            (r as usize, j as usize)
        })
        .expect("inverse of a bijection is a bijection")
    }

    pub fn num_shards(&self) -> usize {
        self.num_shards
    }

    fn source(&self, receiver: usize, out_slot: usize) -> (usize, usize) {
        let (s, k) = self.src[receiver * self.num_shards + out_slot];
        (s as usize, k as usize)
    }
}

// ---------------------------------------------------------------------------
// Collective exchange table
// ---------------------------------------------------------------------------

#[cfg(debug_assertions)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct Tag {
    kind: u8,
    seq: u64,
}

struct Deposit {
    #[cfg(debug_assertions)]
    tag: Tag,
    payload: Option<Box<dyn Any + Send>>,
}

struct Exchange {
    slots: Vec<Mutex<Option<Deposit>>>,
    barrier: Barrier,
}

impl Exchange {
    fn new(parties: usize) -> Self {
        Exchange {
            slots: (0..parties).map(|_| Mutex::new(None)).collect(),
            barrier: Barrier::new(parties),
        }
    }
}

// ---------------------------------------------------------------------------
// Mesh
// ---------------------------------------------------------------------------

type Job = *const (dyn Fn(usize) + Sync);

struct JobSlot(Mutex<Option<Job>>);
// SAFETY: the raw closure pointer is only dereferenced between the start and
// end barriers of `Mesh::run`, while the coordinator provably keeps the
// closure alive (it blocks on the end barrier).
unsafe impl Send for JobSlot {}
unsafe impl Sync for JobSlot {}

struct MeshInner {
    num_shards: usize,
    start: Barrier,
    end: Barrier,
    job: JobSlot,
    exchange: Exchange,
    shutdown: AtomicBool,
    panicked: Mutex<Option<Box<dyn Any + Send>>>,
    all_to_all_calls: AtomicU64,
}

/// A fixed pool of `2^{N_g}` lockstep workers, one per shard.
///
/// Cloning is cheap (shared handle). The worker threads are joined when the
/// last handle is dropped.
#[derive(Clone)]
pub struct Mesh {
    inner: Arc<MeshInner>,
    joiner: Arc<Joiner>,
}

struct Joiner {
    inner: Arc<MeshInner>,
    handles: Mutex<Vec<JoinHandle<()>>>,
}

impl Drop for Joiner {
    fn drop(&mut self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
        self.inner.start.wait();
        for h in self.handles.lock().unwrap().drain(..) {
            let _ = h.join();
        }
    }
}

impl Mesh {
    /// Spawns a mesh of `num_shards` idle workers.
    ///
    /// `num_shards` must be a power of two (shard ids are the values of the
    /// `N_g = log2(num_shards)` global qubits).
    pub fn spawn(num_shards: usize) -> Result<Mesh> {
        if num_shards == 0 || !num_shards.is_power_of_two() {
            return Err(Error::Config(format!(
                "mesh size must be a power of two, got {num_shards}"
            )));
        }
        let inner = Arc::new(MeshInner {
            num_shards,
            start: Barrier::new(num_shards + 1),
            end: Barrier::new(num_shards + 1),
            job: JobSlot(Mutex::new(None)),
            exchange: Exchange::new(num_shards),
            shutdown: AtomicBool::new(false),
            panicked: Mutex::new(None),
            all_to_all_calls: AtomicU64::new(0),
        });
        let mut handles = Vec::with_capacity(num_shards);
        for shard in 0..num_shards {
            let inner = Arc::clone(&inner);
            handles.push(
                std::thread::Builder::new()
                    .name(format!("qsv-worker-{shard}"))
                    .spawn(move || worker_loop(shard, inner))?,
            );
        }
        let joiner = Arc::new(Joiner { inner: Arc::clone(&inner), handles: Mutex::new(handles) });
        Ok(Mesh { inner, joiner })
    }

    pub fn num_shards(&self) -> usize {
        self.inner.num_shards
    }

    /// `N_g`: number of global qubits, `log2(num_shards)`.
    pub fn global_bits(&self) -> usize {
        self.inner.num_shards.trailing_zeros() as usize
    }

    /// Two handles compare equal iff they drive the same worker pool.
    pub fn same_mesh(&self, other: &Mesh) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    /// Total number of `all_to_all` collectives issued so far.
    pub fn all_to_all_count(&self) -> u64 {
        self.inner.all_to_all_calls.load(Ordering::Relaxed)
    }

    /// Runs `f` on every worker in lockstep and returns the per-shard
    /// results in shard order. Blocks until all workers finish.
    ///
    /// Inside `f`, collectives on the [`WorkerCtx`] must be entered by all
    /// workers (SIMD contract). A panic in any worker poisons the mesh and is
    /// re-raised here.
    pub fn run<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&WorkerCtx) -> T + Sync,
    {
        struct ResultCell<T>(std::cell::UnsafeCell<Option<T>>);
        // SAFETY: each worker writes only its own cell, before the end barrier.
        unsafe impl<T: Send> Sync for ResultCell<T> {}

        let inner = &*self.inner;
        let results: Vec<ResultCell<T>> =
            (0..inner.num_shards).map(|_| ResultCell(std::cell::UnsafeCell::new(None))).collect();

        let seq_base = inner.all_to_all_calls.load(Ordering::Relaxed);
        let wrapper = |shard: usize| {
            let ctx = WorkerCtx { shard, inner, seq: std::cell::Cell::new(seq_base) };
            let out = f(&ctx);
            // SAFETY: unique writer for this index (one worker per shard).
            unsafe { *results[shard].0.get() = Some(out) };
        };
        let job: &(dyn Fn(usize) + Sync) = &wrapper;
        // SAFETY: the pointer outlives the job execution because we block on
        // the end barrier below before `wrapper` goes out of scope.
        let job_ptr: Job = unsafe { std::mem::transmute::<_, &'static (dyn Fn(usize) + Sync)>(job) };
        *inner.job.0.lock().unwrap() = Some(job_ptr);

        inner.start.wait();
        inner.end.wait();

        if let Some(payload) = inner.panicked.lock().unwrap().take() {
            panic::resume_unwind(payload);
        }
        results
            .into_iter()
            .map(|c| c.0.into_inner().expect("worker produced no result"))
            .collect()
    }
}

fn worker_loop(shard: usize, inner: Arc<MeshInner>) {
    loop {
        inner.start.wait();
        if inner.shutdown.load(Ordering::SeqCst) {
            return;
        }
        let job = inner.job.0.lock().unwrap().expect("job slot empty after start barrier");
        // SAFETY: coordinator keeps the closure alive until the end barrier.
        let res = panic::catch_unwind(AssertUnwindSafe(|| unsafe { (*job)(shard) }));
        if let Err(payload) = res {
            let mut slot = inner.panicked.lock().unwrap();
            if slot.is_none() {
                *slot = Some(payload);
            }
            // Release peers that may be parked inside a collective.
            inner.exchange.barrier.poison();
        }
        inner.end.wait();
    }
}

// ---------------------------------------------------------------------------
// Worker context and collectives
// ---------------------------------------------------------------------------

/// Handle given to each worker inside [`Mesh::run`].
pub struct WorkerCtx<'a> {
    shard: usize,
    inner: &'a MeshInner,
    seq: std::cell::Cell<u64>,
}

const KIND_ALL_TO_ALL: u8 = 1;
const KIND_REDUCE: u8 = 2;
const KIND_BROADCAST: u8 = 3;

impl<'a> WorkerCtx<'a> {
    pub fn shard_id(&self) -> usize {
        self.shard
    }

    pub fn num_shards(&self) -> usize {
        self.inner.num_shards
    }

    fn next_seq(&self) -> u64 {
        let s = self.seq.get() + 1;
        self.seq.set(s);
        s
    }

    fn deposit(&self, _kind: u8, _seq: u64, payload: Box<dyn Any + Send>) {
        let dep = Deposit {
            #[cfg(debug_assertions)]
            tag: Tag { kind: _kind, seq: _seq },
            payload: Some(payload),
        };
        *self.inner.exchange.slots[self.shard].lock().unwrap() = Some(dep);
    }

    #[cfg(debug_assertions)]
    fn check_tags(&self, kind: u8, seq: u64) {
        let expect = Tag { kind, seq };
        for (i, slot) in self.inner.exchange.slots.iter().enumerate() {
            let guard = slot.lock().unwrap();
            let dep = guard.as_ref().expect("collective slot empty");
            assert_eq!(
                dep.tag, expect,
                "SIMD contract violated: worker {i} entered a different collective \
                 (saw {:?}, expected {:?})",
                dep.tag, expect
            );
        }
    }

    #[cfg(not(debug_assertions))]
    fn check_tags(&self, _kind: u8, _seq: u64) {}

    fn clear_own_slot(&self) {
        *self.inner.exchange.slots[self.shard].lock().unwrap() = None;
    }

    /// Exchanges equal-size segments between all workers.
    ///
    /// Every worker provides `num_shards` buffers; worker `r` receives, in
    /// slot order, exactly the segments the `routing` bijection sends to it.
    /// Total data is conserved (buffers are moved, not copied).
    pub fn all_to_all<T: Send + 'static>(
        &self,
        segments: Vec<Vec<T>>,
        routing: &Routing,
    ) -> Result<Vec<Vec<T>>> {
        let s = self.num_shards();
        if segments.len() != s {
            return Err(Error::Contract(format!(
                "all_to_all needs {s} segments per worker, got {}",
                segments.len()
            )));
        }
        if routing.num_shards() != s {
            return Err(Error::Contract("routing built for a different mesh size".into()));
        }
        let seg_len = segments.first().map_or(0, Vec::len);
        if segments.iter().any(|b| b.len() != seg_len) {
            return Err(Error::Contract("all_to_all segments must have equal sizes".into()));
        }

        if self.shard == 0 {
            self.inner.all_to_all_calls.fetch_add(1, Ordering::Relaxed);
        }
        let seq = self.next_seq();
        let boxed: Vec<Option<Vec<T>>> = segments.into_iter().map(Some).collect();
        self.deposit(KIND_ALL_TO_ALL, seq, Box::new(boxed));
        self.inner.exchange.barrier.wait();
        self.check_tags(KIND_ALL_TO_ALL, seq);

        let mut out: Vec<Vec<T>> = Vec::with_capacity(s);
        for j in 0..s {
            let (sender, slot) = routing.source(self.shard, j);
            let mut guard = self.inner.exchange.slots[sender].lock().unwrap();
            let dep = guard.as_mut().expect("collective slot empty");
            let bufs = dep
                .payload
                .as_mut()
                .expect("payload consumed")
                .downcast_mut::<Vec<Option<Vec<T>>>>()
                .expect("all_to_all segment type mismatch");
            let seg = bufs[slot].take().expect("segment taken twice: routing not a bijection");
            debug_assert_eq!(seg.len(), seg_len, "segment sizes differ across workers");
            out.push(seg);
        }
        self.inner.exchange.barrier.wait();
        self.clear_own_slot();
        Ok(out)
    }

    /// Sums one complex scalar per worker; every worker receives the same
    /// total, accumulated in ascending shard-id order.
    pub fn all_reduce_sum(&self, local: Complex64) -> Complex64 {
        self.reduce_fold(local, |acc, v| acc + v)
    }

    fn reduce_fold<T: Copy + Send + 'static>(&self, local: T, fold: impl Fn(T, T) -> T) -> T {
        let seq = self.next_seq();
        self.deposit(KIND_REDUCE, seq, Box::new(local));
        self.inner.exchange.barrier.wait();
        self.check_tags(KIND_REDUCE, seq);
        let mut acc: Option<T> = None;
        for slot in self.inner.exchange.slots.iter() {
            let guard = slot.lock().unwrap();
            let dep = guard.as_ref().expect("collective slot empty");
            let v = *dep
                .payload
                .as_ref()
                .expect("payload consumed")
                .downcast_ref::<T>()
                .expect("all_reduce type mismatch");
            acc = Some(match acc {
                None => v,
                Some(a) => fold(a, v),
            });
        }
        self.inner.exchange.barrier.wait();
        self.clear_own_slot();
        acc.expect("mesh has at least one worker")
    }

    /// Elementwise deterministic sum of equal-length buffers, chunked to
    /// bound the size of any single exchange.
    pub fn all_reduce_sum_buffer(&self, local: &mut [Complex64]) {
        const CHUNK: usize = 1 << 15;
        let num = self.num_shards();
        if num == 1 {
            // Still a collective entry point; keep the tag sequence aligned.
            let _ = self.next_seq();
            return;
        }
        let mut start = 0;
        while start < local.len() {
            let end = (start + CHUNK).min(local.len());
            let seq = self.next_seq();
            self.deposit(KIND_REDUCE, seq, Box::new(local[start..end].to_vec()));
            self.inner.exchange.barrier.wait();
            self.check_tags(KIND_REDUCE, seq);
            for (i, slot) in self.inner.exchange.slots.iter().enumerate() {
                if i == self.shard {
                    continue;
                }
                let guard = slot.lock().unwrap();
                let dep = guard.as_ref().expect("collective slot empty");
                let v = dep
                    .payload
                    .as_ref()
                    .expect("payload consumed")
                    .downcast_ref::<Vec<Complex64>>()
                    .expect("all_reduce_sum_buffer type mismatch");
                debug_assert_eq!(v.len(), end - start);
                for (dst, src) in local[start..end].iter_mut().zip(v) {
                    *dst += *src;
                }
            }
            self.inner.exchange.barrier.wait();
            self.clear_own_slot();
            start = end;
        }
    }

    /// Replicates `value` from worker `root` to every worker.
    pub fn broadcast<T: Clone + Send + 'static>(&self, value: Option<T>, root: usize) -> Result<T> {
        if root >= self.num_shards() {
            return Err(Error::Config(format!(
                "broadcast root {root} out of range for {} workers",
                self.num_shards()
            )));
        }
        let seq = self.next_seq();
        if self.shard == root {
            let v = value.ok_or_else(|| Error::Contract("broadcast root must supply a value".into()))?;
            self.deposit(KIND_BROADCAST, seq, Box::new(v));
        } else {
            self.deposit(KIND_BROADCAST, seq, Box::new(()));
        }
        self.inner.exchange.barrier.wait();
        let out = {
            let guard = self.inner.exchange.slots[root].lock().unwrap();
            let dep = guard.as_ref().expect("collective slot empty");
            #[cfg(debug_assertions)]
            assert_eq!(dep.tag.seq, seq, "SIMD contract violated in broadcast");
            dep.payload
                .as_ref()
                .expect("payload consumed")
                .downcast_ref::<T>()
                .expect("broadcast type mismatch")
                .clone()
        };
        self.inner.exchange.barrier.wait();
        self.clear_own_slot();
        Ok(out)
    }

    /// Plain synchronization point.
    pub fn barrier(&self) {
        self.inner.exchange.barrier.wait();
    }
}

// Buffers moved through the exchange table are plain data; the mesh requires
// elements to be Send.
static_assert_send::<Complex64>();
const fn static_assert_send<T: Send>() {}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64 as C;

    #[test]
    fn spawn_rejects_non_power_of_two() {
        assert!(matches!(Mesh::spawn(3), Err(Error::Config(_))));
        assert!(matches!(Mesh::spawn(0), Err(Error::Config(_))));
    }

    #[test]
    fn spawn_single_worker_mesh() {
        let mesh = Mesh::spawn(1).unwrap();
        assert_eq!(mesh.num_shards(), 1);
        assert_eq!(mesh.global_bits(), 0);
        let out = mesh.run(|ctx| ctx.shard_id());
        assert_eq!(out, vec![0]);
    }

    #[test]
    fn spawn_board_sized_mesh() {
        // One board worth of cores: 8 workers, N_g = 3.
        let mesh = Mesh::spawn(8).unwrap();
        assert_eq!(mesh.global_bits(), 3);
        let out = mesh.run(|ctx| ctx.shard_id() * 10);
        assert_eq!(out, (0..8).map(|i| i * 10).collect::<Vec<_>>());
    }

    #[test]
    fn all_reduce_sum_ones() {
        let mesh = Mesh::spawn(4).unwrap();
        let out = mesh.run(|ctx| ctx.all_reduce_sum(C::new(1.0, 0.0)));
        assert!(out.iter().all(|v| *v == C::new(4.0, 0.0)));
    }

    #[test]
    fn all_reduce_sum_cancellation() {
        let mesh = Mesh::spawn(4).unwrap();
        let vals = [C::new(1.0, 0.0), C::new(-1.0, 0.0), C::new(0.0, 1.0), C::new(0.0, -1.0)];
        let out = mesh.run(|ctx| ctx.all_reduce_sum(vals[ctx.shard_id()]));
        assert!(out.iter().all(|v| *v == C::new(0.0, 0.0)));
    }

    #[test]
    fn all_reduce_matches_serial_left_to_right_sum() {
        let mesh = Mesh::spawn(8).unwrap();
        let vals: Vec<C> = (0..8)
            .map(|i| C::new(0.1 * (i as f64) + 0.37, -0.2 * (i as f64) + 1.0 / 3.0))
            .collect();
        let serial = vals.iter().fold(C::new(0.0, 0.0), |a, b| a + b);
        let v2 = vals.clone();
        let out = mesh.run(move |ctx| ctx.all_reduce_sum(v2[ctx.shard_id()]));
        for v in out {
            assert_eq!(v, serial, "fixed-order reduction must match serial sum bit-exactly");
        }
    }

    #[test]
    fn all_to_all_identity_is_noop() {
        let mesh = Mesh::spawn(4).unwrap();
        let routing = Routing::identity(4);
        let out = mesh.run(|ctx| {
            let me = ctx.shard_id() as i64;
            let segs: Vec<Vec<i64>> = (0..4).map(|k| vec![me * 10 + k, me]).collect();
            let expect = segs.clone();
            let got = ctx.all_to_all(segs, &routing).unwrap();
            got == expect
        });
        assert!(out.iter().all(|b| *b));
    }

    #[test]
    fn all_to_all_swap_two_workers() {
        let mesh = Mesh::spawn(2).unwrap();
        // Swap slot contents across workers, keeping slot order.
        let routing = Routing::from_fn(2, |s, k| (1 - s, k)).unwrap();
        let out = mesh.run(|ctx| {
            let me = ctx.shard_id() as i32;
            let segs = vec![vec![me, 0], vec![me, 1]];
            ctx.all_to_all(segs, &routing).unwrap()
        });
        assert_eq!(out[0], vec![vec![1, 0], vec![1, 1]]);
        assert_eq!(out[1], vec![vec![0, 0], vec![0, 1]]);
    }

    #[test]
    fn all_to_all_roundtrip_restores_bits() {
        let mesh = Mesh::spawn(4).unwrap();
        // An arbitrary bijection and its inverse restore the input exactly.
        let routing = Routing::from_fn(4, |s, k| ((s + k) % 4, (3 * k + s) % 4)).unwrap();
        let inverse = routing.inverse();
        let ok = mesh.run(|ctx| {
            let me = ctx.shard_id() as u64;
            let segs: Vec<Vec<u64>> =
                (0..4).map(|k| (0..5).map(|i| me * 1000 + (k as u64) * 10 + i).collect()).collect();
            let expect = segs.clone();
            let routed = ctx.all_to_all(segs, &routing).unwrap();
            let back = ctx.all_to_all(routed, &inverse).unwrap();
            back == expect
        });
        assert!(ok.iter().all(|b| *b));
    }

    #[test]
    fn all_to_all_rejects_mismatched_sizes() {
        let mesh = Mesh::spawn(2).unwrap();
        let routing = Routing::identity(2);
        let out = mesh.run(|ctx| {
            let segs = vec![vec![1u8, 2], vec![3u8]];
            ctx.all_to_all(segs, &routing).err().is_some()
        });
        assert!(out.iter().all(|b| *b));
    }

    #[test]
    fn routing_rejects_non_bijection() {
        assert!(Routing::from_fn(2, |_, _| (0, 0)).is_err());
    }

    #[test]
    fn broadcast_replicates_buffer() {
        let mesh = Mesh::spawn(8).unwrap();
        // A 128x128 block matrix broadcast from worker 0.
        let block: Vec<C> = (0..128 * 128).map(|i| C::new(i as f64, -(i as f64))).collect();
        let expect = block.clone();
        let out = mesh.run(move |ctx| {
            let v = if ctx.shard_id() == 0 { Some(block.clone()) } else { None };
            ctx.broadcast(v, 0).unwrap()
        });
        assert!(out.iter().all(|b| *b == expect));
    }

    #[test]
    fn broadcast_single_worker_is_noop() {
        let mesh = Mesh::spawn(1).unwrap();
        let out = mesh.run(|ctx| ctx.broadcast(Some(42u32), 0).unwrap());
        assert_eq!(out, vec![42]);
    }

    #[test]
    fn broadcast_rejects_bad_root() {
        let mesh = Mesh::spawn(2).unwrap();
        let out = mesh.run(|ctx| ctx.broadcast(Some(1u8), 5).err().is_some());
        assert!(out.iter().all(|b| *b));
    }

    #[test]
    fn reduce_linearity_is_exact_for_representable_values() {
        // With a fixed fold order, reduce(a) + reduce(b) == reduce(a+b)
        // exactly whenever all partial sums are exactly representable
        // (dyadic values well within the mantissa).
        let mesh = Mesh::spawn(4).unwrap();
        let a = [1.5, -2.25, 4.0, 0.125].map(|x| C::new(x, 2.0 * x));
        let b = [3.0, 0.5, -1.75, 8.0].map(|x| C::new(-x, x));
        let ra = mesh.run(|ctx| ctx.all_reduce_sum(a[ctx.shard_id()]))[0];
        let rb = mesh.run(|ctx| ctx.all_reduce_sum(b[ctx.shard_id()]))[0];
        let rab = mesh.run(|ctx| ctx.all_reduce_sum(a[ctx.shard_id()] + b[ctx.shard_id()]))[0];
        assert_eq!(ra + rb, rab);
    }

    #[test]
    fn buffer_reduce_matches_scalar_reduce() {
        let mesh = Mesh::spawn(4).unwrap();
        let out = mesh.run(|ctx| {
            let me = ctx.shard_id();
            let mut buf: Vec<C> = (0..10).map(|i| C::new((me * 10 + i) as f64, 0.5)).collect();
            ctx.all_reduce_sum_buffer(&mut buf);
            buf
        });
        for j in 0..10 {
            let expect: C = (0..4).map(|w| C::new((w * 10 + j) as f64, 0.5)).sum();
            for w in 0..4 {
                assert_eq!(out[w][j], expect);
            }
        }
    }

    #[test]
    fn worker_panic_propagates_to_coordinator() {
        let mesh = Mesh::spawn(2).unwrap();
        let res = panic::catch_unwind(AssertUnwindSafe(|| {
            mesh.run(|ctx| {
                if ctx.shard_id() == 1 {
                    panic!("boom");
                }
                // Worker 0 parks in a collective; poisoning must release it.
                ctx.all_reduce_sum(C::new(1.0, 0.0));
            });
        }));
        assert!(res.is_err());
    }
}
