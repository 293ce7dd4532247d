#ifndef FIBERLOOP_THREAD_POOL_HPP_
#define FIBERLOOP_THREAD_POOL_HPP_

#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace fiberloop {

// Persistent worker pool for stepping independent env instances. Work items
// are indexed; workers take fixed strides, so the partition (and therefore
// every result) is independent of scheduling.
class ThreadPool {
 public:
  explicit ThreadPool(int n_threads) {
    n_threads = std::max(1, n_threads);
    for (int w = 0; w < n_threads; ++w) {
      workers_.emplace_back([this, w] { run(w); });
    }
  }

  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  int size() const { return static_cast<int>(workers_.size()); }

  // Blocks until fn(i) has run for every i in [0, n).
  void parallel_for(int n, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    if (workers_.size() == 1 || n == 1) {
      for (int i = 0; i < n; ++i) fn(i);
      return;
    }
    {
      std::unique_lock<std::mutex> lock(mu_);
      fn_ = &fn;
      count_ = n;
      pending_ = static_cast<int>(workers_.size());
      ++generation_;
    }
    cv_.notify_all();
    {
      std::unique_lock<std::mutex> lock(mu_);
      done_cv_.wait(lock, [this] { return pending_ == 0; });
      fn_ = nullptr;
    }
  }

 private:
  void run(int worker) {
    long long seen = 0;
    for (;;) {
      const std::function<void(int)>* fn = nullptr;
      int count = 0;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        fn = fn_;
        count = count_;
      }
      const int stride = static_cast<int>(workers_.size());
      for (int i = worker; i < count; i += stride) (*fn)(i);
      {
        std::unique_lock<std::mutex> lock(mu_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* fn_ = nullptr;
  int count_ = 0;
  int pending_ = 0;
  long long generation_ = 0;
  bool stop_ = false;
};

}  // namespace fiberloop

#endif  // FIBERLOOP_THREAD_POOL_HPP_
