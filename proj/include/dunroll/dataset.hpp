#pragma once

// Plain-text dataset persistence. Reals are written with 17 significant
// digits so a write/read cycle is bit-exact.

#include "core.hpp"
#include "instance.hpp"

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace dunroll {

struct DatasetHeader {
  int n_nodes = 0;
  int d = 0;
  int m_i = 0;
  double sigma = 0.0;
  double p_s = 0.0;
  std::uint64_t seed = 0;
};

struct Dataset {
  DatasetHeader header;
  std::vector<LassoInstance> samples;
};

/// count instances from cfg, sample k seeded with split_seed(master_seed, k).
inline Dataset generate_dataset(const InstanceConfig& cfg, std::size_t count,
                                std::uint64_t master_seed) {
  cfg.validate();
  Dataset ds;
  ds.header = {cfg.n_nodes, cfg.d, cfg.m_per_agent(), 0.0, cfg.sparsity(), master_seed};
  ds.samples.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    InstanceConfig c = cfg;
    c.seed = split_seed(master_seed, k);
    ds.samples.push_back(sample_instance(c));
  }
  ds.header.sigma = cfg.sigma ? *cfg.sigma : noise_sigma_from_snr(cfg.snr_db, cfg.sparsity());
  return ds;
}

namespace detail {

class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}

  std::istringstream next(std::string_view what) {
    if (!std::getline(is_, line_)) throw ParseError("unexpected end of file, expected " + std::string(what), line_no_ + 1);
    ++line_no_;
    return std::istringstream(line_);
  }

  std::vector<std::string> tokens(std::string_view what) {
    auto ss = next(what);
    std::vector<std::string> out;
    std::string t;
    while (ss >> t) out.push_back(std::move(t));
    return out;
  }

  /// Expects "<key> <value>".
  std::string keyed(std::string_view key) {
    auto t = tokens(key);
    if (t.size() != 2 || t[0] != key) fail("expected '" + std::string(key) + " <value>'");
    return t[1];
  }

  void parse_reals(const std::vector<std::string>& toks, std::size_t first, double* out,
                   std::size_t n) {
    if (toks.size() != first + n)
      fail("expected " + std::to_string(n) + " values, found " + std::to_string(toks.size() - first));
    for (std::size_t k = 0; k < n; ++k)
      if (!parse_real(toks[first + k], out[k])) fail("bad real '" + toks[first + k] + "'");
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, line_no_); }

  std::istream& stream() { return is_; }
  std::size_t line_no() const { return line_no_; }
  void advance(std::size_t n) { line_no_ += n; }

 private:
  std::istream& is_;
  std::string line_;
  std::size_t line_no_ = 0;
};

inline void write_row(std::ostream& os, const double* v, Eigen::Index n) {
  for (Eigen::Index k = 0; k < n; ++k) {
    if (k) os << ' ';
    os << format_real(v[k]);
  }
}

}  // namespace detail

inline constexpr std::string_view kDatasetMagic = "dunroll-dataset 1";

inline void write_dataset(std::ostream& os, const Dataset& ds) {
  const auto& h = ds.header;
  os << kDatasetMagic << '\n'
     << "n_nodes " << h.n_nodes << '\n'
     << "d " << h.d << '\n'
     << "m_i " << h.m_i << '\n'
     << "sigma " << format_real(h.sigma) << '\n'
     << "p_s " << format_real(h.p_s) << '\n'
     << "seed " << h.seed << '\n'
     << "count " << ds.samples.size() << '\n';
  for (std::size_t s = 0; s < ds.samples.size(); ++s) {
    const auto& inst = ds.samples[s];
    inst.validate();
    if (inst.n_agents() != h.n_nodes || inst.dim() != h.d)
      throw ValidationError("sample " + std::to_string(s) + " does not match the header shape");
    os << "sample " << s << '\n' << "sigma " << format_real(inst.sigma) << '\n' << "graph\n";
    write_graph(os, inst.graph);
    os << "x_star ";
    detail::write_row(os, inst.x_star.data(), inst.x_star.size());
    os << '\n';
    for (int i = 0; i < inst.n_agents(); ++i) {
      const auto& a = inst.A[i];
      if (a.rows() != h.m_i) throw ValidationError("agent block does not match header m_i");
      os << "agent " << i << '\n';
      for (Eigen::Index r = 0; r < a.rows(); ++r) {
        Vector row = a.row(r).transpose();
        detail::write_row(os, row.data(), row.size());
        os << '\n';
      }
      os << "y ";
      detail::write_row(os, inst.y[i].data(), inst.y[i].size());
      os << '\n';
    }
  }
  os << "end\n";
}

inline Dataset read_dataset(std::istream& is) {
  detail::LineReader rd(is);
  {
    auto ss = rd.next("header");
    std::string line;
    std::getline(ss, line);
    if (line != kDatasetMagic) rd.fail("not a dunroll dataset (bad magic)");
  }
  Dataset ds;
  auto& h = ds.header;
  std::size_t count = 0;
  auto as_int = [&](const std::string& s, auto& out) {
    if (!parse_int(s, out)) rd.fail("bad integer '" + s + "'");
  };
  auto as_real = [&](const std::string& s, double& out) {
    if (!parse_real(s, out)) rd.fail("bad real '" + s + "'");
  };
  as_int(rd.keyed("n_nodes"), h.n_nodes);
  as_int(rd.keyed("d"), h.d);
  as_int(rd.keyed("m_i"), h.m_i);
  as_real(rd.keyed("sigma"), h.sigma);
  as_real(rd.keyed("p_s"), h.p_s);
  as_int(rd.keyed("seed"), h.seed);
  as_int(rd.keyed("count"), count);
  if (h.n_nodes <= 0 || h.d <= 0 || h.m_i <= 0) rd.fail("header dimensions must be positive");

  ds.samples.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    std::size_t idx = 0;
    as_int(rd.keyed("sample"), idx);
    if (idx != s) rd.fail("sample index out of order");
    LassoInstance inst;
    as_real(rd.keyed("sigma"), inst.sigma);
    {
      auto t = rd.tokens("graph");
      if (t.size() != 1 || t[0] != "graph") rd.fail("expected 'graph'");
    }
    const std::size_t before = rd.line_no();
    inst.graph = read_graph(rd.stream(), before);
    rd.advance(1 + static_cast<std::size_t>(inst.graph.n_edges()));
    if (inst.graph.n_nodes() != h.n_nodes) rd.fail("graph size does not match header");

    inst.x_star.resize(h.d);
    {
      auto t = rd.tokens("x_star");
      if (t.empty() || t[0] != "x_star") rd.fail("expected 'x_star'");
      rd.parse_reals(t, 1, inst.x_star.data(), h.d);
    }
    for (int i = 0; i < h.n_nodes; ++i) {
      int agent = -1;
      as_int(rd.keyed("agent"), agent);
      if (agent != i) rd.fail("agent index out of order");
      Matrix a(h.m_i, h.d);
      std::vector<double> row(h.d);
      for (int r = 0; r < h.m_i; ++r) {
        auto t = rd.tokens("matrix row");
        rd.parse_reals(t, 0, row.data(), row.size());
        for (int c = 0; c < h.d; ++c) a(r, c) = row[c];
      }
      Vector y(h.m_i);
      auto t = rd.tokens("y");
      if (t.empty() || t[0] != "y") rd.fail("expected 'y'");
      rd.parse_reals(t, 1, y.data(), h.m_i);
      inst.A.push_back(std::move(a));
      inst.y.push_back(std::move(y));
    }
    ds.samples.push_back(std::move(inst));
  }
  {
    auto t = rd.tokens("end");
    if (t.size() != 1 || t[0] != "end") rd.fail("expected 'end'");
  }
  return ds;
}

inline void write_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_dataset(os, ds);
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  try {
    return read_dataset(is);
  } catch (const ParseError& e) {
    throw e.with_source(path);
  }
}

}  // namespace dunroll
