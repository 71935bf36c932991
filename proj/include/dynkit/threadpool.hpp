#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dynkit {

// Fixed-size worker pool for data-parallel kernels. Work is split into
// contiguous index ranges; every output element is written by exactly one
// worker and inner accumulation order is fixed, so results do not depend
// on the thread count. DYNKIT_THREADS caps the pool size.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool(default_threads());
    return pool;
  }

  static int default_threads() {
    if (const char* env = std::getenv("DYNKIT_THREADS")) {
      int n = std::atoi(env);
      if (n >= 1) return std::min(n, 64);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(std::min(hw, 16u));
  }

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  // fn(begin, end) over [0, n), chunked across workers. Runs inline when
  // the pool has a single thread or the range is small.
  void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn,
                    int64_t grain = 1024) {
    if (n <= 0) return;
    const int nthreads = size();
    if (nthreads == 1 || n < 2 * grain) {
      fn(0, n);
      return;
    }
    const int chunks = static_cast<int>(
        std::min<int64_t>(nthreads, (n + grain - 1) / grain));
    const int64_t per = (n + chunks - 1) / chunks;
    {
      std::unique_lock<std::mutex> lock(mu_);
      pending_ = 0;
      for (int c = 1; c < chunks; ++c) {
        const int64_t b = c * per;
        const int64_t e = std::min<int64_t>(n, b + per);
        if (b >= e) continue;
        tasks_.push_back([&fn, b, e] { fn(b, e); });
        ++pending_;
      }
    }
    cv_.notify_all();
    fn(0, std::min<int64_t>(n, per));
    std::unique_lock<std::mutex> lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0 && tasks_.empty(); });
  }

  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

 private:
  explicit ThreadPool(int nthreads) {
    for (int i = 1; i < nthreads; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  void worker_loop() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [this] { return stop_ || !tasks_.empty(); });
        if (stop_ && tasks_.empty()) return;
        task = std::move(tasks_.back());
        tasks_.pop_back();
      }
      task();
      {
        std::unique_lock<std::mutex> lock(mu_);
        --pending_;
      }
      done_cv_.notify_all();
    }
  }

  std::vector<std::thread> workers_;
  std::vector<std::function<void()>> tasks_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  int pending_ = 0;
  bool stop_ = false;
};

inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn,
                         int64_t grain = 1024) {
  ThreadPool::instance().parallel_for(n, fn, grain);
}

}  // namespace dynkit
