// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include "nnc/pool.hpp"

#include "nnc/types.hpp"

namespace nnc {

WorkerPool::WorkerPool(std::size_t workers)
    : workers_(workers),
      start_(static_cast<std::ptrdiff_t>(workers == 0 ? 1 : workers)),
      done_(static_cast<std::ptrdiff_t>(workers == 0 ? 1 : workers)) {
  if (workers == 0) throw ExecError("worker pool needs at least one worker");
  threads_.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) threads_.emplace_back([this, w] { loop(w); });
}

WorkerPool::~WorkerPool() {
  if (threads_.empty()) return;
  stop_ = true;
  start_.arrive_and_wait();
  for (auto& t : threads_) t.join();
}

void WorkerPool::record(std::exception_ptr e) {
  std::lock_guard lock(error_mutex_);
  if (!error_) error_ = e;
}

void WorkerPool::loop(std::size_t worker) {
  for (;;) {
    start_.arrive_and_wait();
    if (stop_) return;
    try {
      (*job_)(worker);
    } catch (...) {
      record(std::current_exception());
    }
    done_.arrive_and_wait();
  }
}

void WorkerPool::run(const std::function<void(std::size_t)>& job) {
  if (threads_.empty()) {
    job(0);
    return;
  }
  job_ = &job;
  start_.arrive_and_wait();
  try {
    job(0);
  } catch (...) {
    record(std::current_exception());
  }
  done_.arrive_and_wait();
  job_ = nullptr;
  if (error_) {
    std::exception_ptr e;
    std::swap(e, error_);
    std::rethrow_exception(e);
  }
}

}  // namespace nnc
