#include "lsanet/parallel.hpp"

#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace lsanet {
namespace {

thread_local bool g_inside_worker = false;

int read_thread_env() {
  if (const char* env = std::getenv("LSANET_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

// Fork-join pool: parallel_for wakes the workers, hands each a fixed chunk
// index, and the caller runs chunk 0 itself.
class Pool {
 public:
  Pool() : nthreads_(read_thread_env()) {
    for (int t = 1; t < nthreads_; ++t) {
      workers_.emplace_back([this, t] { worker_loop(t); });
    }
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  int size() const { return nthreads_; }

  void run(int chunks, const std::function<void(int)>& body) {
    if (chunks <= 1 || nthreads_ == 1 || g_inside_worker) {
      for (int c = 0; c < chunks; ++c) body(c);
      return;
    }
    {
      std::lock_guard<std::mutex> lk(mu_);
      body_ = &body;
      chunks_ = chunks;
      next_chunk_ = 1;  // caller takes chunk 0
      pending_ = chunks - 1;
      error_ = nullptr;
      ++generation_;
    }
    cv_.notify_all();
    run_guarded(body, 0);
    // Help drain remaining chunks.
    for (;;) {
      int c;
      {
        std::lock_guard<std::mutex> lk(mu_);
        if (next_chunk_ >= chunks_) break;
        c = next_chunk_++;
      }
      run_guarded(body, c);
      done_one();
    }
    std::exception_ptr err;
    {
      std::unique_lock<std::mutex> lk(mu_);
      done_cv_.wait(lk, [this] { return pending_ == 0; });
      body_ = nullptr;
      err = error_;
      error_ = nullptr;
    }
    if (err) std::rethrow_exception(err);
  }

 private:
  void worker_loop(int /*id*/) {
    g_inside_worker = true;
    uint64_t seen = 0;
    for (;;) {
      const std::function<void(int)>* body = nullptr;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
        seen = generation_;
        if (stop_) return;
        body = body_;
      }
      if (!body) continue;
      for (;;) {
        int c;
        {
          std::lock_guard<std::mutex> lk(mu_);
          if (next_chunk_ >= chunks_ || body_ != body) break;
          c = next_chunk_++;
        }
        run_guarded(*body, c);
        done_one();
      }
    }
  }

  // First exception wins and is rethrown on the calling thread.
  void run_guarded(const std::function<void(int)>& body, int c) {
    try {
      body(c);
    } catch (...) {
      std::lock_guard<std::mutex> lk(mu_);
      if (!error_) error_ = std::current_exception();
    }
  }

  void done_one() {
    std::lock_guard<std::mutex> lk(mu_);
    if (--pending_ == 0) done_cv_.notify_all();
  }

  int nthreads_;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(int)>* body_ = nullptr;
  int chunks_ = 0;
  int next_chunk_ = 0;
  int pending_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
  std::exception_ptr error_ = nullptr;
};

Pool& pool() {
  static Pool p;
  return p;
}

}  // namespace

int max_threads() { return pool().size(); }

int num_chunks(int64_t n, int64_t min_parallel) {
  if (n < min_parallel) return 1;
  int64_t c = std::min<int64_t>(pool().size(), (n + min_parallel - 1) / min_parallel);
  return static_cast<int>(std::max<int64_t>(1, c));
}

void parallel_for_chunked(int64_t n, const std::function<void(int, int64_t, int64_t)>& fn,
                          int64_t min_parallel) {
  if (n <= 0) return;
  const int chunks = num_chunks(n, min_parallel);
  if (chunks == 1) {
    fn(0, 0, n);
    return;
  }
  const int64_t per = (n + chunks - 1) / chunks;
  pool().run(chunks, [&](int c) {
    const int64_t b = c * per;
    const int64_t e = std::min<int64_t>(n, b + per);
    if (b < e) fn(c, b, e);
  });
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn,
                  int64_t min_parallel) {
  parallel_for_chunked(n, [&](int, int64_t b, int64_t e) { fn(b, e); }, min_parallel);
}

}  // namespace lsanet
