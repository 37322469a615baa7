#include <cstdlib>
#include <numeric>
#include <stdexcept>

#include "doctest.h"
#include "mba/parallel.hpp"

using namespace mba;

TEST_CASE("parallel_for visits every index once") {
  for (int workers : {1, 2, 5}) {
    WorkerPool pool(workers);
    CHECK(pool.workers() == workers);
    for (std::size_t count : {0u, 1u, 7u, 1000u}) {
      std::vector<int> hits(count, 0);
      pool.parallel_for(count, [&](std::size_t i) { hits[i] += 1; });
      CHECK(std::accumulate(hits.begin(), hits.end(), 0) == static_cast<int>(count));
      for (int h : hits) CHECK(h == 1);
    }
  }
}

TEST_CASE("parallel_for rethrows and stays usable") {
  WorkerPool pool(3);
  CHECK_THROWS_AS(pool.parallel_for(100, [](std::size_t i) {
    if (i == 42) throw std::runtime_error("boom");
  }), std::runtime_error);
  std::vector<int> out(10, 0);
  pool.parallel_for(10, [&](std::size_t i) { out[i] = static_cast<int>(i); });
  CHECK(out[9] == 9);
}

TEST_CASE("worker count from the environment") {
  ::setenv("MBA_WORKERS", "3", 1);
  CHECK(resolve_worker_count(1) == 3);
  ::setenv("MBA_WORKERS", "zero", 1);
  CHECK(resolve_worker_count(2) == 2);
  ::unsetenv("MBA_WORKERS");
  CHECK(resolve_worker_count(4) == 4);
}
