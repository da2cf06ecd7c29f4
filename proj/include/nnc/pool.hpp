// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Fixed-size worker pool with full-rendezvous phases.

#pragma once

#include <barrier>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace nnc {

/// `run(job)` calls job(w) once on each of `size()` workers and returns when
/// all have finished; no worker starts the next job before every worker has
/// finished the current one. The calling thread acts as worker 0.
class WorkerPool {
 public:
  explicit WorkerPool(std::size_t workers);
  ~WorkerPool();

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  std::size_t size() const { return workers_; }

  /// Rethrows the first exception any worker raised.
  void run(const std::function<void(std::size_t)>& job);

 private:
  void loop(std::size_t worker);
  void record(std::exception_ptr e);

  std::size_t workers_;
  std::barrier<> start_;
  std::barrier<> done_;
  const std::function<void(std::size_t)>* job_ = nullptr;
  bool stop_ = false;
  std::mutex error_mutex_;
  std::exception_ptr error_;
  std::vector<std::thread> threads_;
};

}  // namespace nnc
