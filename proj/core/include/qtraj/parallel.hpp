#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

namespace qtraj::par {

/// Persistent worker pool running an index range in fixed-size chunks.
///
/// Chunk boundaries depend only on (n, chunk_size), never on the worker
/// count, so any computation that writes one result slot per chunk and
/// folds the slots in index order yields bit-identical output for any
/// pool size.  Calls must not be nested from inside a task.
class Pool {
 public:
  /// n_threads == 0 picks the hardware concurrency.
  explicit Pool(int n_threads = 0);
  ~Pool();
  Pool(const Pool&) = delete;
  Pool& operator=(const Pool&) = delete;

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  /// Runs fn(chunk_index, begin, end) over [0, n).  Blocks until all
  /// chunks finish; rethrows the exception of the lowest-index failing
  /// chunk, if any.
  void for_chunks(std::size_t n, std::size_t chunk_size,
                  const std::function<void(std::size_t, std::size_t,
                                           std::size_t)>& fn);

 private:
  struct Task {
    std::size_t n = 0;
    std::size_t chunk = 1;
    std::size_t n_chunks = 0;
    const std::function<void(std::size_t, std::size_t, std::size_t)>* fn =
        nullptr;
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr>* errors = nullptr;
  };

  void worker_loop();
  static void run_chunks(Task& t);

  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable cv_work_;
  std::condition_variable cv_done_;
  Task* task_ = nullptr;
  std::uint64_t epoch_ = 0;
  int running_ = 0;
  bool stop_ = false;
};

/// Pairwise in-place reduction over ordered slots.  The combination tree
/// is a function of the slot count alone, keeping floating-point results
/// independent of how the slots were produced.
template <class T, class F>
T tree_reduce(std::span<T> slots, F&& combine) {
  const std::size_t n = slots.size();
  if (n == 0) return T{};
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t i = 0; i + width < n; i += 2 * width) {
      combine(slots[i], slots[i + width]);
    }
  }
  return slots[0];
}

}  // namespace qtraj::par
