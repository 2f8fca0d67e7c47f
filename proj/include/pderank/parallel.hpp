#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <optional>
#include <thread>
#include <vector>

namespace pderank {

// Runs work(chunk) for chunk in [0, n_chunks) on up to `threads` workers and
// feeds the results to reduce() strictly in chunk order, so the reduction is
// identical for every thread count.
template <typename Work, typename Reduce>
void ordered_parallel_chunks(std::size_t n_chunks, int threads, Work&& work, Reduce&& reduce) {
  using Partial = decltype(work(std::size_t{0}));
  const std::size_t wave = static_cast<std::size_t>(std::max(1, threads));
  if (wave == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) reduce(work(c));
    return;
  }
  for (std::size_t begin = 0; begin < n_chunks; begin += wave) {
    const std::size_t end = std::min(n_chunks, begin + wave);
    std::vector<std::optional<Partial>> results(end - begin);
    std::vector<std::exception_ptr> errors(end - begin);
    std::vector<std::thread> pool;
    pool.reserve(end - begin);
    for (std::size_t c = begin; c < end; ++c)
      pool.emplace_back([&, c] {
        try {
          results[c - begin].emplace(work(c));
        } catch (...) {
          errors[c - begin] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    for (auto& r : results) reduce(std::move(*r));
  }
}

}  // namespace pderank
