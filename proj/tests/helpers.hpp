#pragma once

#include <dunroll/dunroll.hpp>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace testutil {

using namespace dunroll;

inline InstanceConfig small_config(int n, int e, int d, int m, std::uint64_t seed, double snr = 50.0) {
  InstanceConfig c;
  c.n_nodes = n;
  c.n_edges = e;
  c.d = d;
  c.m_total = m;
  c.snr_db = snr;
  c.seed = seed;
  return c;
}

inline LassoInstance small_instance(int n, int e, int d, int m, std::uint64_t seed, double snr = 50.0) {
  return sample_instance(small_config(n, e, d, m, seed, snr));
}

/// Instance with hand-picked parts; y = A x* exactly.
inline LassoInstance exact_instance(CommGraph g, std::vector<Matrix> a, Vector x_star) {
  LassoInstance inst;
  inst.graph = std::move(g);
  inst.x_star = std::move(x_star);
  for (const auto& ai : a) inst.y.push_back(ai * inst.x_star);
  inst.A = std::move(a);
  return inst;
}

inline Matrix random_matrix(Rng& rng, int r, int c) {
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

inline Vector random_vector(Rng& rng, int n) { return random_matrix(rng, n, 1); }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dunroll_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
