#include "relstate/schedule.hpp"

#include <chrono>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace relstate {

SweepExecutor::SweepExecutor(const BlockPartition& partition, const Coloring& coloring,
                             int workers)
    : blocks_(partition.blocks), workers_(workers) {
  if (workers < 1) throw std::invalid_argument("worker count must be at least 1");
  if (static_cast<int>(coloring.color.size()) != partition.block_count())
    throw std::invalid_argument("coloring does not match the partition");
  classes_.reserve(coloring.classes.size());
  for (const auto& cls : coloring.classes) {
    std::vector<int> active;
    for (int id : cls)
      if (!blocks_[id].frozen) active.push_back(id);
    if (!active.empty()) classes_.push_back(std::move(active));
  }
}

void SweepExecutor::run_sweep(const std::function<void(const Block&)>& fn) {
  using clock = std::chrono::steady_clock;
  for (const std::vector<int>& cls : classes_) {
    std::vector<double> times(cls.size(), 0.0);
    auto run_one = [&](size_t k) {
      const auto start = clock::now();
      fn(blocks_[cls[k]]);
      times[k] = std::chrono::duration<double>(clock::now() - start).count();
    };
    const int threads = std::min<int>(workers_, static_cast<int>(cls.size()));
    if (threads <= 1 || cls.size() < 2) {
      for (size_t k = 0; k < cls.size(); ++k) run_one(k);
    } else {
      std::exception_ptr error;
      std::mutex error_mutex;
      std::vector<std::thread> pool;
      pool.reserve(threads);
      for (int t = 0; t < threads; ++t) {
        const size_t lo = cls.size() * t / threads;
        const size_t hi = cls.size() * (t + 1) / threads;
        pool.emplace_back([&, lo, hi] {
          try {
            for (size_t k = lo; k < hi; ++k) run_one(k);
          } catch (...) {
            std::lock_guard<std::mutex> guard(error_mutex);
            if (!error) error = std::current_exception();
          }
        });
      }
      for (std::thread& t : pool) t.join();
      if (error) std::rethrow_exception(error);
    }
    double slowest = 0.0;
    for (double t : times) {
      slowest = std::max(slowest, t);
      serial_ += t;
    }
    parallel_ += slowest;
  }
  ++sweeps_;
}

}  // namespace relstate
