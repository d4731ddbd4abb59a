// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace retroquant {

/// Upper bound on worker threads used by library routines. 0 restores the
/// default (hardware concurrency).
void set_max_threads(std::size_t n) noexcept;
std::size_t max_threads() noexcept;

/// Runs body(i) for i in [0, count). Each index runs exactly once; callers
/// write results into per-index slots so output never depends on scheduling.
/// The first exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace retroquant
