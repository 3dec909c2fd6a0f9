// Copyright 2026 The Gracile Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal fork-join helper. Work items are handed out in fixed-size chunks
// from a shared counter; callers write results into pre-sized slots indexed
// by item, which makes the output independent of the worker count.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gracile/errors.hpp"

namespace gracile {

// Worker count from an explicit value, else the GRACILE_WORKERS environment
// variable, else the hardware concurrency.
inline std::size_t resolve_workers(std::optional<long long> requested) {
  if (requested) {
    if (*requested < 1) throw ConfigError("worker count must be at least 1, got " + std::to_string(*requested));
    return static_cast<std::size_t>(*requested);
  }
  if (const char* env = std::getenv("GRACILE_WORKERS"); env && *env) {
    char* end = nullptr;
    const long long v = std::strtoll(env, &end, 10);
    if (*end != '\0' || v < 1) {
      throw ConfigError(std::string("GRACILE_WORKERS must be a positive integer, got '") + env + "'");
    }
    return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Calls fn(worker, item) for every item in [0, count) on `workers` threads.
// The first exception thrown by any call is rethrown after all threads join.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn, std::size_t chunk = 1) {
  if (workers == 0) throw ConfigError("worker count must be at least 1");
  workers = std::max<std::size_t>(1, std::min(workers, count));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::atomic<bool> stop{false};
  auto body = [&](std::size_t worker) {
    try {
      while (!stop.load(std::memory_order_relaxed)) {
        const std::size_t begin = next.fetch_add(chunk);
        if (begin >= count) break;
        const std::size_t end = std::min(count, begin + chunk);
        for (std::size_t i = begin; i < end; ++i) fn(worker, i);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
      stop = true;
    }
  };
  if (workers == 1) {
    body(0);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(body, w);
    for (auto& t : threads) t.join();
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace gracile
