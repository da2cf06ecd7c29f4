// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include "nnc/autotune.hpp"

#include <unistd.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <sstream>

#include "nnc/kernels.hpp"
#include "nnc/pool.hpp"
#include "nnc/types.hpp"

namespace nnc {

namespace {

std::size_t floor_pow2(std::size_t x) { return x == 0 ? 0 : std::bit_floor(x); }

std::vector<std::size_t> pow2_axis(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> axis;
  for (std::size_t v = std::bit_ceil(std::max<std::size_t>(lo, 1)); v <= hi; v *= 2) axis.push_back(v);
  if (axis.empty()) axis.push_back(hi);
  return axis;
}

void check_axis(const std::vector<std::size_t>& axis, const char* name) {
  if (axis.empty()) throw TuneError(std::string("axis ") + name + " is empty");
  for (std::size_t i = 0; i < axis.size(); ++i) {
    if (!std::has_single_bit(axis[i])) {
      throw TuneError(std::string("axis ") + name + " value " + std::to_string(axis[i]) +
                      " is not a power of 2");
    }
    if (i > 0 && axis[i] <= axis[i - 1]) {
      throw TuneError(std::string("axis ") + name + " is not strictly increasing");
    }
  }
}

bool on_axis(const std::vector<std::size_t>& axis, std::size_t v) {
  return std::binary_search(axis.begin(), axis.end(), v);
}

}  // namespace

void TuneTable::check() const {
  check_axis(m_axis, "m");
  check_axis(k_axis, "k");
  check_axis(n_axis, "n");
  check_axis(b_axis, "b");
  check_axis(t_axis, "t");
  for (const auto& [key, s] : seconds) {
    if (!on_axis(m_axis, key[0]) || !on_axis(k_axis, key[1]) || !on_axis(n_axis, key[2]) ||
        !on_axis(b_axis, key[3]) || !on_axis(t_axis, key[4])) {
      throw TuneError("entry off the grid");
    }
    if (!(s > 0.0) || !std::isfinite(s)) throw TuneError("entry seconds must be positive");
  }
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

CalibrationGrid calibration_grid(const CalibrationConfig& c) {
  if (c.reps < 3) throw TuneError("calibration needs reps >= 3");
  if (c.max_dim == 0 || c.max_block == 0 || c.max_threads == 0) {
    throw TuneError("calibration maxima must be positive");
  }
  CalibrationGrid g;
  const std::size_t dim_hi = floor_pow2(c.max_dim);
  g.dims = pow2_axis(std::min(c.min_dim, dim_hi), dim_hi);
  g.blocks = pow2_axis(1, floor_pow2(c.max_block));
  g.threads = pow2_axis(1, floor_pow2(c.max_threads));
  return g;
}

namespace {

std::size_t parse_size_suffix(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  if (s.empty()) return 0;
  std::size_t mult = 1;
  if (s.back() == 'K') mult = 1024;
  if (s.back() == 'M') mult = 1024 * 1024;
  if (mult != 1) s.pop_back();
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() ? v * mult : 0;
}

std::string read_line(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  return line;
}

/// Nanoseconds per dependent load over a random cyclic permutation.
double chase_latency(std::size_t bytes) {
  const std::size_t n = std::max<std::size_t>(bytes / sizeof(std::size_t), 16);
  std::vector<std::size_t> next(n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(7);
  std::shuffle(order.begin() + 1, order.end(), rng);
  for (std::size_t i = 0; i < n; ++i) next[order[i]] = order[(i + 1) % n];
  const std::size_t steps = 1 << 20;
  std::size_t p = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t s = 0; s < steps; ++s) p = next[p];
  const auto t1 = std::chrono::steady_clock::now();
  volatile std::size_t sink = p;
  (void)sink;
  return std::chrono::duration<double, std::nano>(t1 - t0).count() / steps;
}

/// Stride-scan fallback: the working-set sizes after which latency jumps.
std::array<std::size_t, 2> measure_cache_sizes() {
  std::array<std::size_t, 2> found{0, 0};
  std::size_t level = 0;
  double previous = chase_latency(4096);
  for (std::size_t bytes = 8192; bytes <= (std::size_t{16} << 20) && level < 2; bytes *= 2) {
    const double now = chase_latency(bytes);
    if (now > 1.6 * previous) found[level++] = bytes / 2;
    previous = now;
  }
  return found;
}

}  // namespace

std::array<std::size_t, 2> query_cache_sizes() {
  std::array<std::size_t, 2> sizes{0, 0};
  for (int idx = 0; idx < 8; ++idx) {
    const std::string base = "/sys/devices/system/cpu/cpu0/cache/index" + std::to_string(idx) + "/";
    const std::string level = read_line(base + "level");
    const std::string type = read_line(base + "type");
    if (level.empty()) continue;
    const std::size_t bytes = parse_size_suffix(read_line(base + "size"));
    if (level == "1" && (type == "Data" || type == "Unified")) sizes[0] = bytes;
    if (level == "2") sizes[1] = bytes;
  }
#ifdef _SC_LEVEL1_DCACHE_SIZE
  if (sizes[0] == 0) sizes[0] = static_cast<std::size_t>(std::max(0L, sysconf(_SC_LEVEL1_DCACHE_SIZE)));
  if (sizes[1] == 0) sizes[1] = static_cast<std::size_t>(std::max(0L, sysconf(_SC_LEVEL2_CACHE_SIZE)));
#endif
  return sizes;
}

CalibrationReport calibrate(const CalibrationConfig& config) {
  const CalibrationGrid grid = calibration_grid(config);
  CalibrationReport report;
  TuneTable& table = report.table;
  table.m_axis = table.k_axis = table.n_axis = grid.dims;
  table.b_axis = grid.blocks;
  table.t_axis = grid.threads;
  auto caches = query_cache_sizes();
  if (caches[0] == 0 || caches[1] == 0) caches = measure_cache_sizes();
  table.meta.l1_bytes = caches[0];
  table.meta.l2_bytes = caches[1];
  table.meta.timestamp = std::chrono::duration_cast<std::chrono::seconds>(
                             std::chrono::system_clock::now().time_since_epoch())
                             .count();

  std::vector<std::unique_ptr<WorkerPool>> pools;
  for (std::size_t t : grid.threads) pools.push_back(std::make_unique<WorkerPool>(t));

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  auto random = [&](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& v : m.values()) v = dist(rng);
    return m;
  };

  for (std::size_t m : grid.dims) {
    for (std::size_t k : grid.dims) {
      for (std::size_t n : grid.dims) {
        const std::size_t bytes = sizeof(double) * (m * k + k * n + m * n);
        if (bytes > config.max_bytes) {
          for (std::size_t b : grid.blocks)
            for (std::size_t t : grid.threads) report.skipped.push_back({m, k, n, b, t});
          continue;
        }
        const Matrix a = random(m, k), bm = random(k, n);
        for (std::size_t b : grid.blocks) {
          auto pa = PackedMatrix::pack(a, SparsityPattern::dense(), {"a", Format::DenseBlocked, b});
          auto pb = PackedMatrix::pack(bm, SparsityPattern::dense(), {"b", Format::DenseBlocked, b});
          PackedMatrix out(Shape{m, n}, SparsityPattern::dense(), {"c", Format::DenseBlocked, b});
          const std::size_t units = out.blocks().size();
          for (std::size_t ti = 0; ti < grid.threads.size(); ++ti) {
            WorkerPool& pool = *pools[ti];
            const std::size_t t = grid.threads[ti];
            const std::function<void(std::size_t)> job = [&](std::size_t w) {
              for (std::size_t u = w; u < units; u += t)
                kernels::product_block(OpKind::MatMul, pa, pb, out, u);
            };
            std::vector<double> samples;
            for (std::size_t r = 0; r < config.reps; ++r) {
              const auto t0 = std::chrono::steady_clock::now();
              pool.run(job);
              const auto t1 = std::chrono::steady_clock::now();
              samples.push_back(std::chrono::duration<double>(t1 - t0).count());
            }
            std::nth_element(samples.begin(), samples.begin() + samples.size() / 2, samples.end());
            table.seconds[{m, k, n, b, t}] = std::max(samples[samples.size() / 2], 1e-9);
          }
        }
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

namespace {

std::string join(const std::vector<std::size_t>& axis) {
  std::string s;
  for (std::size_t i = 0; i < axis.size(); ++i) s += (i ? "," : "") + std::to_string(axis[i]);
  return s;
}

std::string decimal(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
  if (ec != std::errc()) throw TuneError("cannot format seconds value");
  return {buf, p};
}

template <typename T>
T parse_number(std::string_view s, const std::string& what) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw TuneError("malformed " + what + ": '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  return parts;
}

std::vector<std::string> words(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

/// "key=value" with a fixed key.
std::string field(const std::string& token, const std::string& key, int line) {
  if (token.rfind(key + "=", 0) != 0) {
    throw TuneError("line " + std::to_string(line) + ": expected '" + key + "=', got '" + token + "'");
  }
  return token.substr(key.size() + 1);
}

}  // namespace

std::string format_table(const TuneTable& table) {
  table.check();
  std::ostringstream os;
  os << "SONNC-TUNE v" << kTuneFormatVersion << "\n";
  os << "cache l1=" << table.meta.l1_bytes << " l2=" << table.meta.l2_bytes
     << " timestamp=" << table.meta.timestamp << "\n";
  os << "axes m=" << join(table.m_axis) << " k=" << join(table.k_axis) << " n=" << join(table.n_axis)
     << " b=" << join(table.b_axis) << " t=" << join(table.t_axis) << "\n";
  for (const auto& [key, s] : table.seconds) {
    os << key[0] << ' ' << key[1] << ' ' << key[2] << ' ' << key[3] << ' ' << key[4] << ' '
       << decimal(s) << "\n";
  }
  return os.str();
}

TuneTable parse_table(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw TuneError("empty tune table");
  const auto header = words(line);
  if (header.size() != 2 || header[0] != "SONNC-TUNE" || header[1].size() < 2 || header[1][0] != 'v') {
    throw TuneError("line 1: not a tune table header");
  }
  const int version = parse_number<int>(std::string_view(header[1]).substr(1), "format version");
  if (version != kTuneFormatVersion) {
    throw TuneError("tune table format version " + std::to_string(version) + " is not supported (reader is v" +
                    std::to_string(kTuneFormatVersion) + ")");
  }

  TuneTable t;
  if (!std::getline(in, line)) throw TuneError("line 2: missing cache line");
  auto cache = words(line);
  if ((cache.size() != 3 && cache.size() != 4) || cache[0] != "cache") {
    throw TuneError("line 2: expected 'cache l1=<bytes> l2=<bytes>'");
  }
  t.meta.l1_bytes = parse_number<std::size_t>(field(cache[1], "l1", 2), "l1 bytes");
  t.meta.l2_bytes = parse_number<std::size_t>(field(cache[2], "l2", 2), "l2 bytes");
  if (cache.size() == 4) {
    t.meta.timestamp = parse_number<std::int64_t>(field(cache[3], "timestamp", 2), "timestamp");
  }

  if (!std::getline(in, line)) throw TuneError("line 3: missing axes line");
  auto axes = words(line);
  if (axes.size() != 6 || axes[0] != "axes") throw TuneError("line 3: expected 'axes m=.. k=.. n=.. b=.. t=..'");
  const char* names[] = {"m", "k", "n", "b", "t"};
  std::vector<std::size_t>* targets[] = {&t.m_axis, &t.k_axis, &t.n_axis, &t.b_axis, &t.t_axis};
  for (int a = 0; a < 5; ++a) {
    for (const auto& v : split(field(axes[a + 1], names[a], 3), ','))
      targets[a]->push_back(parse_number<std::size_t>(v, std::string("axis ") + names[a]));
  }

  int lineno = 3;
  std::optional<TuneKey> previous;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto w = words(line);
    if (w.size() != 6) throw TuneError("line " + std::to_string(lineno) + ": expected 6 fields");
    TuneKey key{};
    for (int i = 0; i < 5; ++i) key[i] = parse_number<std::size_t>(w[i], "grid coordinate");
    const double s = parse_number<double>(w[5], "seconds");
    if (previous && !(*previous < key)) {
      throw TuneError("line " + std::to_string(lineno) + ": entries not sorted by (m,k,n,b,t)");
    }
    previous = key;
    t.seconds.emplace(key, s);
  }
  t.check();
  return t;
}

void save_table(const TuneTable& table, const std::filesystem::path& path) {
  const std::string text = format_table(table);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TuneError("cannot write tune table " + path.string());
  out << text;
  if (!out) throw TuneError("failed writing tune table " + path.string());
}

TuneTable load_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TuneError("cannot read tune table " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_table(ss.str());
}

// ---------------------------------------------------------------------------
// Estimation and selection
// ---------------------------------------------------------------------------

namespace {

struct Corner {
  std::size_t value;
  double weight;
};

/// Interpolation stencil along one axis. An extrapolating stencil holds the
/// last two grid points and the weight of the far one.
struct Stencil {
  std::vector<Corner> corners;
  bool extrapolating = false;
};

Stencil stencil(const std::vector<std::size_t>& axis, std::size_t q, bool log_space, Estimate& flags) {
  if (axis.size() == 1 || q == axis.front()) {
    if (q < axis.front()) flags.clamped = true;
    if (q > axis.back()) flags.extrapolated = true;
    return {{{axis.front(), 1.0}}};
  }
  if (q < axis.front()) {
    flags.clamped = true;
    return {{{axis.front(), 1.0}}};
  }
  if (q > axis.back()) {
    flags.extrapolated = true;
    const double lo = static_cast<double>(axis[axis.size() - 2]);
    const double hi = static_cast<double>(axis.back());
    const double w = (static_cast<double>(q) - lo) / (hi - lo);
    return {{{axis[axis.size() - 2], 1.0 - w}, {axis.back(), w}}, true};
  }
  auto it = std::lower_bound(axis.begin(), axis.end(), q);
  if (*it == q) return {{{q, 1.0}}};
  const std::size_t hi = *it, lo = *(it - 1);
  auto pos = [&](std::size_t v) { return log_space ? std::log2(static_cast<double>(v)) : static_cast<double>(v); };
  const double f = (pos(q) - pos(lo)) / (pos(hi) - pos(lo));
  return {{{lo, 1.0 - f}, {hi, f}}};
}

/// Reduces the axes one at a time. Extrapolation continues the line through
/// the last two points with its slope floored at zero: a larger product never
/// gets cheaper, and across several axes the raw line multiplies timing noise
/// by the product of the extrapolation weights.
double reduce(const TuneTable& table, const std::array<Stencil, 5>& stencils, TuneKey& key, std::size_t axis) {
  if (axis == stencils.size()) {
    auto it = table.seconds.find(key);
    return it == table.seconds.end() ? std::numeric_limits<double>::infinity() : it->second;
  }
  const Stencil& s = stencils[axis];
  if (s.extrapolating) {
    key[axis] = s.corners[0].value;
    const double lo = reduce(table, stencils, key, axis + 1);
    key[axis] = s.corners[1].value;
    const double hi = reduce(table, stencils, key, axis + 1);
    if (std::isinf(lo) || std::isinf(hi)) return std::numeric_limits<double>::infinity();
    return hi + (s.corners[1].weight - 1.0) * std::max(hi - lo, 0.0);
  }
  double total = 0.0;
  for (const Corner& c : s.corners) {
    if (c.weight == 0.0) continue;
    key[axis] = c.value;
    const double v = reduce(table, stencils, key, axis + 1);
    if (std::isinf(v)) return v;
    total += c.weight * v;
  }
  return total;
}

}  // namespace

Estimate estimate_time(const TuneTable& table, std::size_t m, std::size_t k, std::size_t n,
                       std::size_t b, std::size_t t) {
  if (table.seconds.empty()) throw TuneError("tune table has no entries");
  Estimate est;
  std::array<Stencil, 5> stencils{stencil(table.m_axis, m, true, est), stencil(table.k_axis, k, true, est),
                                  stencil(table.n_axis, n, true, est), stencil(table.b_axis, b, true, est),
                                  {}};
  Estimate t_flags;
  stencils[4] = stencil(table.t_axis, t, false, t_flags);
  if (t_flags.extrapolated) {
    // Thread counts beyond the calibrated maximum are not extrapolated.
    stencils[4] = {{{table.t_axis.back(), 1.0}}};
    est.clamped = true;
  }
  est.clamped = est.clamped || t_flags.clamped;
  TuneKey key{};
  est.seconds = std::max(reduce(table, stencils, key, 0), 0.0);
  return est;
}

std::string Selection::describe() const {
  std::ostringstream os;
  os << "selection b=" << block << " t=" << threads << " predicted=" << predicted_seconds << "s";
  if (clamped) os << " clamped";
  if (forced) os << " forced";
  return os.str();
}

Selection select_params(const TuneTable& table, const std::vector<TuneQuery>& queries) {
  if (queries.empty()) throw TuneError("select_params: no queries");
  if (table.seconds.empty()) throw TuneError("tune table has no entries");
  Selection best;
  double best_total = std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t t : table.t_axis) {
    for (std::size_t b : table.b_axis) {
      double total = 0.0;
      bool clamped = false;
      std::map<std::string, double> parts;
      for (const TuneQuery& q : queries) {
        const Estimate e = estimate_time(table, q.m, q.k, q.n, b, t);
        total += q.weight * e.seconds;
        parts[q.label] += q.weight * e.seconds;
        clamped = clamped || e.clamped;
      }
      if (total < best_total) {
        best_total = total;
        best.block = b;
        best.threads = t;
        best.predicted_seconds = total;
        best.per_query = std::move(parts);
        best.clamped = clamped;
        found = true;
      }
    }
  }
  if (!found) throw TuneError("select_params: no (b, t) cell has a finite estimate");
  return best;
}

}  // namespace nnc
