#include "qtraj/parallel.hpp"

#include <algorithm>

namespace qtraj::par {

Pool::Pool(int n_threads) {
  int n = n_threads;
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  workers_.reserve(static_cast<std::size_t>(n - 1));
  for (int i = 0; i < n - 1; ++i) {
    workers_.emplace_back([this] { worker_loop(); });
  }
}

Pool::~Pool() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    stop_ = true;
  }
  cv_work_.notify_all();
  for (auto& w : workers_) w.join();
}

void Pool::run_chunks(Task& t) {
  for (;;) {
    const std::size_t i = t.next.fetch_add(1, std::memory_order_relaxed);
    if (i >= t.n_chunks) break;
    const std::size_t b = i * t.chunk;
    const std::size_t e = std::min(t.n, b + t.chunk);
    try {
      (*t.fn)(i, b, e);
    } catch (...) {
      (*t.errors)[i] = std::current_exception();
    }
  }
}

void Pool::worker_loop() {
  std::uint64_t seen = 0;
  for (;;) {
    Task* task = nullptr;
    {
      std::unique_lock<std::mutex> lock(mutex_);
      cv_work_.wait(lock, [&] { return stop_ || epoch_ != seen; });
      if (stop_) return;
      seen = epoch_;
      task = task_;
    }
    run_chunks(*task);
    {
      std::lock_guard<std::mutex> lock(mutex_);
      if (--running_ == 0) cv_done_.notify_all();
    }
  }
}

void Pool::for_chunks(std::size_t n, std::size_t chunk_size,
                      const std::function<void(std::size_t, std::size_t,
                                               std::size_t)>& fn) {
  if (n == 0) return;
  if (chunk_size == 0) chunk_size = 1;

  Task t;
  t.n = n;
  t.chunk = chunk_size;
  t.n_chunks = (n + chunk_size - 1) / chunk_size;
  t.fn = &fn;
  std::vector<std::exception_ptr> errors(t.n_chunks);
  t.errors = &errors;

  if (workers_.empty()) {
    run_chunks(t);
  } else {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      task_ = &t;
      ++epoch_;
      running_ = static_cast<int>(workers_.size());
    }
    cv_work_.notify_all();
    run_chunks(t);
    {
      std::unique_lock<std::mutex> lock(mutex_);
      cv_done_.wait(lock, [&] { return running_ == 0; });
      task_ = nullptr;
    }
  }

  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace qtraj::par
