#include "sllab/measures.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>

#include "sllab/error.hpp"
#include "sllab/numerics.hpp"

namespace sllab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_dim(std::size_t dim) {
  if (dim == 0) {
    throw LabError(ErrorKind::kInvalidDimension, "dimension must be positive");
  }
}

struct Registry {
  std::mutex mutex;
  std::map<std::string, MeasureFactory> factories;

  Registry() {
    factories["gaussian"] = make_gaussian;
    factories["exponential"] = make_product_exponential;
    factories["cube"] = make_uniform_cube;
  }
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

std::vector<double> MeasureModel::sample(std::uint64_t seed) const {
  std::vector<double> x(dim);
  Philox rng(seed);
  sampler(rng, x);
  return x;
}

Factor1D gaussian_factor() {
  Factor1D f;
  f.name = "gaussian";
  f.log_normalizer = 0.5 * std::log(2.0 * std::numbers::pi);
  f.log_density = [](double x) { return -0.5 * x * x; };
  f.d1 = [](double x) { return -x; };
  f.d2 = [](double) { return -1.0; };
  f.sample = [](Philox& rng) { return rng.normal(); };
  f.window_lo = -9.0;
  f.window_hi = 9.0;
  f.spectral_lo = -8.0;
  f.spectral_hi = 8.0;
  f.smooth = true;
  return f;
}

Factor1D exponential_factor() {
  Factor1D f;
  f.name = "exponential";
  f.lo = -1.0;
  f.log_density = [](double x) { return x < -1.0 ? kNegInf : -(x + 1.0); };
  f.d1 = [](double) { return -1.0; };
  f.d2 = [](double) { return 0.0; };
  f.sample = [](Philox& rng) { return rng.exponential() - 1.0; };
  f.window_lo = -1.0;
  f.window_hi = 39.0;
  // The generator has continuous spectrum above 1/4, and a truncation of
  // length L lifts the gap by about pi^2/L^2, so the window must be long.
  f.spectral_lo = -1.0;
  f.spectral_hi = 119.0;
  return f;
}

Factor1D cube_factor() {
  const double a = std::sqrt(3.0);
  Factor1D f;
  f.name = "cube";
  f.lo = -a;
  f.hi = a;
  f.log_normalizer = std::log(2.0 * a);
  f.log_density = [a](double x) { return (x < -a || x > a) ? kNegInf : 0.0; };
  f.d1 = [](double) { return 0.0; };
  f.d2 = [](double) { return 0.0; };
  f.sample = [a](Philox& rng) { return a * (2.0 * rng.uniform() - 1.0); };
  f.window_lo = -a;
  f.window_hi = a;
  f.spectral_lo = -a;
  f.spectral_hi = a;
  return f;
}

MeasureModel make_product(const Factor1D& factor, std::size_t dim,
                          std::string key) {
  require_dim(dim);
  MeasureModel m;
  m.key = std::move(key);
  m.dim = dim;
  m.factor = factor;
  m.log_normalizer = static_cast<double>(dim) * factor.log_normalizer;
  m.log_density = [factor](std::span<const double> x) {
    double s = 0.0;
    for (double xi : x) {
      const double v = factor.log_density(xi);
      if (v == kNegInf) return kNegInf;
      s += v;
    }
    return s;
  };
  m.grad_log_density = [factor](std::span<const double> x,
                                std::span<double> g) {
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = factor.d1(x[i]);
  };
  if (factor.smooth) {
    m.hessian_log_density = [factor](std::span<const double> x) {
      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(x.size(), x.size());
      for (std::size_t i = 0; i < x.size(); ++i) h(i, i) = factor.d2(x[i]);
      return h;
    };
  }
  m.sampler = [factor](Philox& rng, std::span<double> out) {
    for (double& v : out) v = factor.sample(rng);
  };
  return m;
}

MeasureModel make_gaussian(std::size_t dim) {
  MeasureModel m = make_product(gaussian_factor(), dim, "gaussian");
  ClosedFormOracle o;
  o.posterior_mean = [](double t, const Eigen::VectorXd& theta) {
    return Eigen::VectorXd(theta / (1.0 + t));
  };
  o.posterior_cov = [dim](double t, const Eigen::VectorXd&) {
    return Eigen::MatrixXd(Eigen::MatrixXd::Identity(dim, dim) / (1.0 + t));
  };
  o.var_norm_sq = 2.0 * static_cast<double>(dim);
  o.spectral_gap = 1.0;
  m.oracle = o;
  return m;
}

MeasureModel make_product_exponential(std::size_t dim) {
  MeasureModel m = make_product(exponential_factor(), dim, "exponential");
  ClosedFormOracle o;
  o.var_norm_sq = 8.0 * static_cast<double>(dim);
  o.spectral_gap = 0.25;
  m.oracle = o;
  return m;
}

MeasureModel make_uniform_cube(std::size_t dim) {
  MeasureModel m = make_product(cube_factor(), dim, "cube");
  ClosedFormOracle o;
  o.var_norm_sq = 0.8 * static_cast<double>(dim);
  m.oracle = o;
  return m;
}

void register_measure(const std::string& key, MeasureFactory factory) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.factories[key] = std::move(factory);
}

MeasureModel make_measure(const std::string& key, std::size_t dim) {
  MeasureFactory factory;
  {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    auto it = r.factories.find(key);
    if (it == r.factories.end()) {
      throw LabError(ErrorKind::kConfig, "unknown measure '" + key + "'");
    }
    factory = it->second;
  }
  return factory(dim);
}

std::vector<std::string> measure_keys() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> keys;
  for (const auto& [k, v] : r.factories) keys.push_back(k);
  return keys;
}

SamplePool draw_pool(const MeasureModel& model, std::size_t count,
                     std::uint64_t seed) {
  if (count == 0) {
    throw LabError(ErrorKind::kInvalidDimension, "pool count must be positive");
  }
  SamplePool pool;
  pool.dim = model.dim;
  pool.count = count;
  pool.seed = seed;
  pool.points.resize(count * model.dim);
  parallel_for(count, [&](std::size_t i) {
    Philox rng(stream_key(seed, i));
    model.sampler(rng, {pool.points.data() + i * model.dim, model.dim});
  });
  return pool;
}

namespace {

constexpr char kPoolMagic[8] = {'S', 'L', 'P', 'O', 'O', 'L', '1', '\0'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) {
    throw LabError(ErrorKind::kIo, "truncated pool file");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_pool(const SamplePool& pool, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LabError(ErrorKind::kIo, "cannot write " + path);
  os.write(kPoolMagic, 8);
  put_u64(os, pool.dim);
  put_u64(os, pool.count);
  put_u64(os, pool.seed);
  for (double x : pool.points) put_u64(os, std::bit_cast<std::uint64_t>(x));
  if (!os) throw LabError(ErrorKind::kIo, "write failed for " + path);
}

SamplePool load_pool(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LabError(ErrorKind::kIo, "cannot read " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kPoolMagic, 8) != 0) {
    throw LabError(ErrorKind::kIo, "bad pool magic in " + path);
  }
  SamplePool pool;
  pool.dim = get_u64(is);
  pool.count = get_u64(is);
  pool.seed = get_u64(is);
  pool.points.resize(pool.dim * pool.count);
  for (double& x : pool.points) x = std::bit_cast<double>(get_u64(is));
  return pool;
}

}  // namespace sllab
