#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace gsct {

namespace detail {

inline std::atomic<int>& thread_count_storage() {
  static std::atomic<int> count{-1};  // -1: not yet resolved from env
  return count;
}

}  // namespace detail

// Caps every parallel section in the library. 0 (or negative) restores the
// default of one worker per hardware thread.
inline void set_thread_count(int n) {
  detail::thread_count_storage().store(n > 0 ? n : 0);
}

inline int thread_count() {
  int n = detail::thread_count_storage().load();
  if (n == -1) {
    int from_env = 0;
    if (const char* env = std::getenv("GSCT_THREADS")) from_env = std::atoi(env);
    n = from_env > 0 ? from_env : 0;
    detail::thread_count_storage().store(n);
  }
  if (n > 0) return n;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

namespace detail {

// Persistent worker pool behind parallel_for / parallel_reduce_sum. One job
// runs at a time; the calling thread participates. Each task index is claimed
// exactly once, so any function whose task i only writes state owned by i is
// schedule-independent.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  void run(std::int64_t n_tasks, const std::function<void(std::int64_t)>& fn) {
    if (n_tasks <= 0) return;
    const int threads = thread_count();
    // Nested sections run inline on the calling worker; only the outermost
    // level fans out.
    if (threads <= 1 || n_tasks == 1 || inside_task()) {
      for (std::int64_t i = 0; i < n_tasks; ++i) fn(i);
      return;
    }
    auto job = std::make_shared<Job>();
    job->fn = &fn;
    job->end = n_tasks;
    job->helpers = threads - 1;
    ensure_workers(threads - 1);
    {
      std::lock_guard<std::mutex> lock(mutex_);
      job_ = job;
      ++generation_;
    }
    wake_.notify_all();
    drain(*job);
    {
      std::unique_lock<std::mutex> lock(mutex_);
      done_.wait(lock, [&] { return job->completed.load() == job->end; });
      if (job_ == job) job_.reset();
    }
    if (job->failed.load()) std::rethrow_exception(job->error);
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      stop_ = true;
    }
    wake_.notify_all();
    for (auto& worker : workers_) worker.join();
  }

 private:
  struct Job {
    const std::function<void(std::int64_t)>* fn{nullptr};
    std::int64_t end{0};
    int helpers{0};
    std::atomic<std::int64_t> next{0};
    std::atomic<std::int64_t> completed{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
  };

  ThreadPool() = default;

  static bool& inside_task_flag() {
    thread_local bool inside = false;
    return inside;
  }

  static bool inside_task() { return inside_task_flag(); }

  void drain(Job& job) {
    for (;;) {
      const std::int64_t i = job.next.fetch_add(1, std::memory_order_relaxed);
      if (i >= job.end) break;
      if (!job.failed.load(std::memory_order_relaxed)) {
        inside_task_flag() = true;
        try {
          (*job.fn)(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(job.error_mutex);
          if (!job.failed.exchange(true)) job.error = std::current_exception();
        }
        inside_task_flag() = false;
      }
      if (job.completed.fetch_add(1, std::memory_order_acq_rel) + 1 == job.end) {
        std::lock_guard<std::mutex> lock(mutex_);
        done_.notify_all();
      }
    }
  }

  void worker_loop(int id) {
    std::uint64_t seen = 0;
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock<std::mutex> lock(mutex_);
        wake_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        job = job_;
      }
      if (job && id < job->helpers) drain(*job);
    }
  }

  void ensure_workers(int n) {
    std::lock_guard<std::mutex> lock(spawn_mutex_);
    while (static_cast<int>(workers_.size()) < n) {
      const int id = static_cast<int>(workers_.size());
      workers_.emplace_back([this, id] { worker_loop(id); });
    }
  }

  std::mutex mutex_;
  std::mutex spawn_mutex_;
  std::condition_variable wake_;
  std::condition_variable done_;
  std::shared_ptr<Job> job_;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace detail

// Parallel loop over [begin, end). Indices are grouped into contiguous chunks
// claimed dynamically; each index runs exactly once.
template <class Fn>
void parallel_for(std::int64_t begin, std::int64_t end, Fn&& fn, std::int64_t grain = 1) {
  const std::int64_t n = end - begin;
  if (n <= 0) return;
  const int threads = thread_count();
  if (threads <= 1 || n <= grain) {
    for (std::int64_t i = begin; i < end; ++i) fn(i);
    return;
  }
  const std::int64_t chunk =
      std::max<std::int64_t>(grain, n / (static_cast<std::int64_t>(threads) * 8));
  const std::int64_t n_chunks = (n + chunk - 1) / chunk;
  const std::function<void(std::int64_t)> task = [&](std::int64_t c) {
    const std::int64_t lo = begin + c * chunk;
    const std::int64_t hi = std::min(end, lo + chunk);
    for (std::int64_t i = lo; i < hi; ++i) fn(i);
  };
  detail::ThreadPool::instance().run(n_chunks, task);
}

// Sum reduction with a schedule-independent result: chunk boundaries depend
// only on n, partials are merged in ascending chunk order. chunk_fn(lo, hi)
// returns the sequential partial sum over [lo, hi).
template <class T, class ChunkFn>
T parallel_reduce_sum(std::int64_t n, ChunkFn&& chunk_fn, std::int64_t chunk = 8192) {
  if (n <= 0) return T{};
  const std::int64_t n_chunks = (n + chunk - 1) / chunk;
  std::vector<T> partial(static_cast<std::size_t>(n_chunks), T{});
  const std::function<void(std::int64_t)> task = [&](std::int64_t c) {
    const std::int64_t lo = c * chunk;
    const std::int64_t hi = std::min(n, lo + chunk);
    partial[static_cast<std::size_t>(c)] = chunk_fn(lo, hi);
  };
  detail::ThreadPool::instance().run(n_chunks, task);
  T total{};
  for (const T& p : partial) total += p;
  return total;
}

}  // namespace gsct
