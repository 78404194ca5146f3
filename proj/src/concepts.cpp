#include "iin/concepts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>
#include <stdexcept>

#include "iin/errors.hpp"
#include "iin/linalg.hpp"

namespace iin {

// ---------------------------------------------------------------------------
// ScoreAccumulator
// ---------------------------------------------------------------------------

ScoreAccumulator::ScoreAccumulator(std::size_t n)
    : mean_a_(n, 0.0),
      mean_b_(n, 0.0),
      m2_a_(n, 0.0),
      m2_b_(n, 0.0),
      co_(n, 0.0),
      identical_(n, true),
      negated_(n, true) {}

void ScoreAccumulator::add_pair(const double* a, const double* b) {
  ++count_;
  const double inv = 1.0 / static_cast<double>(count_);
  for (std::size_t j = 0; j < mean_a_.size(); ++j) {
    identical_[j] = identical_[j] && a[j] == b[j];
    negated_[j] = negated_[j] && a[j] == -b[j];
    const double da = a[j] - mean_a_[j];
    const double db = b[j] - mean_b_[j];
    mean_a_[j] += da * inv;
    mean_b_[j] += db * inv;
    m2_a_[j] += da * (a[j] - mean_a_[j]);
    m2_b_[j] += db * (b[j] - mean_b_[j]);
    co_[j] += da * (b[j] - mean_b_[j]);
  }
}

void ScoreAccumulator::add(const Tensor& za, const Tensor& zb) {
  if (za.rank() != 2 || !za.same_shape(zb) || za.cols() != mean_a_.size())
    throw std::invalid_argument("ScoreAccumulator: batch shape mismatch");
  for (std::size_t i = 0; i < za.rows(); ++i)
    add_pair(za.data() + i * za.cols(), zb.data() + i * zb.cols());
}

double ScoreAccumulator::score() const {
  if (count_ < 2) throw std::invalid_argument("score: need at least 2 pairs");
  const double denom = static_cast<double>(count_ - 1);
  double s = 0.0;
  for (std::size_t j = 0; j < mean_a_.size(); ++j) {
    const double va = m2_a_[j] / denom;
    const double vb = m2_b_[j] / denom;
    if (va < kVarEps || vb < kVarEps) continue;  // constant component: corr 0
    if (identical_[j]) {
      s += 1.0;
      continue;
    }
    if (negated_[j]) {
      s -= 1.0;
      continue;
    }
    double corr = (co_[j] / denom) / (std::sqrt(va) * std::sqrt(vb));
    corr = std::clamp(corr, -1.0, 1.0);
    s += corr;
  }
  return s;
}

double score_concept(const std::vector<PairBatch>& batches) {
  if (batches.empty()) throw std::invalid_argument("score_concept: no data");
  ScoreAccumulator acc(batches.front().za.cols());
  for (const PairBatch& pb : batches) acc.add(pb.za, pb.zb);
  return acc.score();
}

double score_concept(const Tensor& za, const Tensor& zb) {
  ScoreAccumulator acc(za.cols());
  acc.add(za, zb);
  return acc.score();
}

// ---------------------------------------------------------------------------
// allocate_dims
// ---------------------------------------------------------------------------

std::vector<double> ConceptScores::all() const {
  std::vector<double> out;
  out.reserve(semantic.size() + 1);
  out.push_back(residual());
  out.insert(out.end(), semantic.begin(), semantic.end());
  return out;
}

FactorLayout allocate_dims(const ConceptScores& scores, std::size_t n) {
  const std::size_t k = scores.semantic.size();
  if (n < k + 1)
    throw std::invalid_argument("allocate_dims: need at least K+1 = " + std::to_string(k + 1) +
                                " dims, got " + std::to_string(n));
  const std::vector<double> s = scores.all();
  const double m = *std::max_element(s.begin(), s.end());
  std::vector<double> e(s.size());
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    e[i] = std::exp(s[i] - m);
    z += e[i];
  }
  std::vector<std::size_t> dims(s.size());
  std::size_t used = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    dims[i] = static_cast<std::size_t>(std::floor(e[i] / z * static_cast<double>(n)));
    used += dims[i];
  }
  dims[0] += n - used;  // flooring leftovers go to the residual
  for (std::size_t i = 1; i < dims.size(); ++i)
    if (dims[i] == 0) {
      dims[i] = 1;
      dims[0] -= 1;
    }
  return FactorLayout(std::move(dims));
}

// ---------------------------------------------------------------------------
// SyntheticWorld
// ---------------------------------------------------------------------------

void WorldConfig::validate() const {
  dims.validate();
  if (!(sigma_true > 0.0 && sigma_true < 1.0))
    throw std::invalid_argument("WorldConfig: sigma_true must lie in (0,1)");
}

namespace {

double nonlinear_fwd(double x, double a) { return x + a * std::tanh(x); }

double nonlinear_inv(double v, double a, double tol) {
  // Newton on the strictly increasing map x + a*tanh(x); derivative >= 1.
  double y = v;
  for (int it = 0; it < 64; ++it) {
    const double t = std::tanh(y);
    const double f = y + a * t - v;
    if (std::abs(f) < tol) break;
    y -= f / (1.0 + a * (1.0 - t * t));
  }
  return y;
}

Tensor apply_orth(const Tensor& x, const Tensor& q, bool transposed) {
  // Row batches: y_row = x_row * Q^T (or * Q when inverting).
  const std::size_t b = x.rows(), n = x.cols();
  Tensor y(Shape{b, n});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t r = 0; r < n; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < n; ++c)
        acc += (transposed ? q.at(c, r) : q.at(r, c)) * x.at(i, c);
      y.at(i, r) = acc;
    }
  return y;
}

}  // namespace

SyntheticWorld::SyntheticWorld(WorldConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(Rng::mix(cfg_.seed, 0x776f726cULL));  // dedicated stream for the mixing map
  const std::size_t n = cfg_.dims.total();
  for (int i = 0; i < 3; ++i) orth_.push_back(random_orthogonal(n, rng));
}

Tensor SyntheticWorld::mix(const Tensor& g) const {
  Tensor x = apply_orth(g, orth_[0], false);
  for (std::size_t idx = 1; idx < orth_.size(); ++idx) {
    for (std::size_t i = 0; i < x.size(); ++i)
      x.data()[i] = nonlinear_fwd(x.data()[i], kNonlinearGain);
    x = apply_orth(x, orth_[idx], false);
  }
  return x;
}

Tensor SyntheticWorld::unmix(const Tensor& z) const {
  Tensor x = z;
  for (std::size_t idx = orth_.size(); idx-- > 0;) {
    x = apply_orth(x, orth_[idx], true);
    if (idx > 0)
      for (std::size_t i = 0; i < x.size(); ++i)
        x.data()[i] = nonlinear_inv(x.data()[i], kNonlinearGain, kNewtonTol);
  }
  return x;
}

Tensor SyntheticWorld::sample_ground_truth(std::size_t batch, std::uint64_t counter) const {
  Rng rng(Rng::mix(cfg_.seed, Rng::mix(0x67726f756eULL, counter)));
  Tensor g(Shape{batch, dim()});
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  return g;
}

Tensor SyntheticWorld::sample_latents(std::size_t batch, std::uint64_t counter) const {
  return mix(sample_ground_truth(batch, counter));
}

PairBatch SyntheticWorld::sample_pairs(std::size_t factor, std::size_t batch,
                                       std::uint64_t counter) const {
  if (factor == 0 || factor >= cfg_.dims.factors())
    throw std::invalid_argument("sample_pairs: factor index out of range");
  Rng rng(Rng::mix(cfg_.seed, Rng::mix(factor, counter)));
  const std::size_t n = dim();
  const std::size_t off = cfg_.dims.offset(factor);
  const std::size_t w = cfg_.dims.dims[factor];
  const double sig = cfg_.sigma_true;
  const double res = std::sqrt(1.0 - sig * sig);

  Tensor ga(Shape{batch, n});
  Tensor gb(Shape{batch, n});
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = 0; j < n; ++j) ga.at(i, j) = rng.normal();
    for (std::size_t j = 0; j < n; ++j) {
      if (j >= off && j < off + w)
        gb.at(i, j) = sig * ga.at(i, j) + res * rng.normal();
      else
        gb.at(i, j) = rng.normal();
    }
  }
  PairBatch pb;
  pb.za = mix(ga);
  pb.zb = mix(gb);
  pb.factor = factor;
  pb.mode = PairMode::share;
  return pb;
}

// ---------------------------------------------------------------------------
// Pair files
// ---------------------------------------------------------------------------

namespace {

constexpr char kPairMagic[4] = {'I', 'L', 'P', '1'};
constexpr std::uint32_t kPairVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError(path + ": truncated file");
  return v;
}

constexpr std::uint64_t kPairHeaderBytes = 4 + 4 + 4 + 8 + 2 + 1;

}  // namespace

void write_pairs(const std::string& path, const std::vector<PairBatch>& batches) {
  if (batches.empty()) throw std::invalid_argument("write_pairs: no batches");
  const std::size_t n = batches.front().za.cols();
  const std::size_t factor = batches.front().factor;
  const PairMode mode = batches.front().mode;
  std::uint64_t rows = 0;
  for (const PairBatch& pb : batches) {
    if (pb.za.rank() != 2 || !pb.za.same_shape(pb.zb) || pb.za.cols() != n ||
        pb.factor != factor || pb.mode != mode)
      throw std::invalid_argument("write_pairs: batches disagree in shape, factor, or mode");
    rows += pb.za.rows();
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write(kPairMagic, 4);
  write_pod(out, kPairVersion);
  write_pod(out, static_cast<std::uint32_t>(n));
  write_pod(out, rows);
  write_pod(out, static_cast<std::uint16_t>(factor));
  write_pod(out, static_cast<std::uint8_t>(mode));
  for (const PairBatch& pb : batches)
    out.write(reinterpret_cast<const char*>(pb.za.data()),
              static_cast<std::streamsize>(pb.za.size() * sizeof(double)));
  for (const PairBatch& pb : batches)
    out.write(reinterpret_cast<const char*>(pb.zb.data()),
              static_cast<std::streamsize>(pb.zb.size() * sizeof(double)));
  if (!out) throw FormatError(path + ": write failed");
}

PairFileReader::PairFileReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
  if (!in_) throw FormatError(path + ": cannot open");
  char magic[4];
  in_.read(magic, 4);
  if (!in_ || std::memcmp(magic, kPairMagic, 4) != 0)
    throw FormatError(path + ": bad magic, not a latent pair file");
  const auto version = read_pod<std::uint32_t>(in_, path_);
  if (version != kPairVersion)
    throw FormatError(path + ": unsupported version " + std::to_string(version));
  header_.n = read_pod<std::uint32_t>(in_, path_);
  header_.rows = read_pod<std::uint64_t>(in_, path_);
  header_.factor = read_pod<std::uint16_t>(in_, path_);
  const auto mode = read_pod<std::uint8_t>(in_, path_);
  if (mode > 1) throw FormatError(path + ": bad mode byte");
  header_.mode = static_cast<PairMode>(mode);
  if (header_.n == 0) throw FormatError(path + ": zero dimension");

  // Validate total length up front so truncation surfaces as a format error.
  in_.seekg(0, std::ios::end);
  const std::uint64_t actual = static_cast<std::uint64_t>(in_.tellg());
  const std::uint64_t expected =
      kPairHeaderBytes + 2 * header_.rows * header_.n * sizeof(double);
  if (actual != expected)
    throw FormatError(path + ": size mismatch between header and payload (streams must hold " +
                      std::to_string(header_.rows) + " rows each)");
  offset_a_ = kPairHeaderBytes;
  offset_b_ = kPairHeaderBytes + header_.rows * header_.n * sizeof(double);
}

std::optional<PairBatch> PairFileReader::next(std::size_t max_rows) {
  if (cursor_ >= header_.rows) return std::nullopt;
  const std::size_t take =
      static_cast<std::size_t>(std::min<std::uint64_t>(max_rows, header_.rows - cursor_));
  const std::size_t n = header_.n;
  PairBatch pb;
  pb.za = Tensor(Shape{take, n});
  pb.zb = Tensor(Shape{take, n});
  pb.factor = header_.factor;
  pb.mode = header_.mode;

  in_.seekg(static_cast<std::streamoff>(offset_a_ + cursor_ * n * sizeof(double)));
  in_.read(reinterpret_cast<char*>(pb.za.data()),
           static_cast<std::streamsize>(take * n * sizeof(double)));
  in_.seekg(static_cast<std::streamoff>(offset_b_ + cursor_ * n * sizeof(double)));
  in_.read(reinterpret_cast<char*>(pb.zb.data()),
           static_cast<std::streamsize>(take * n * sizeof(double)));
  if (!in_) throw FormatError(path_ + ": truncated payload");
  cursor_ += take;
  return pb;
}

std::vector<PairBatch> read_pairs(const std::string& path, std::size_t batch_rows) {
  PairFileReader reader(path);
  std::vector<PairBatch> out;
  while (auto pb = reader.next(batch_rows)) out.push_back(std::move(*pb));
  return out;
}

// ---------------------------------------------------------------------------
// CSV import
// ---------------------------------------------------------------------------

namespace {

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

}  // namespace

Tensor read_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  std::vector<double> values;
  std::size_t cols = 0, rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string tok;
    std::size_t c = 0;
    while (std::getline(ss, tok, ',')) {
      try {
        values.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw FormatError(path + ": bad number '" + tok + "'");
      }
      ++c;
    }
    if (c == 0) continue;
    if (cols == 0) cols = c;
    if (c != cols) throw FormatError(path + ": ragged rows");
    ++rows;
  }
  if (rows == 0) throw FormatError(path + ": empty");
  return Tensor(Shape{rows, cols}, std::move(values));
}

void write_csv_matrix(const std::string& path, const Tensor& m) {
  if (m.rank() != 2) throw std::invalid_argument("write_csv_matrix: rank-2 expected");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  char buf[32];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m.at(i, j));
      out << (j ? "," : "") << buf;
    }
    out << "\n";
  }
}

PairBatch read_pairs_csv(const std::string& meta_path) {
  const auto kv = read_kv_file(meta_path);
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(meta_path + ": missing key '" + key + "'");
    return it->second;
  };
  const std::filesystem::path base = std::filesystem::path(meta_path).parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };
  PairBatch pb;
  pb.za = read_csv_matrix(resolve(need("a")));
  pb.zb = read_csv_matrix(resolve(need("b")));
  if (!pb.za.same_shape(pb.zb))
    throw FormatError(meta_path + ": streams a and b disagree in shape");
  pb.factor = static_cast<std::size_t>(std::stoul(need("factor")));
  const std::string mode = need("mode");
  if (mode == "share")
    pb.mode = PairMode::share;
  else if (mode == "differ")
    pb.mode = PairMode::differ;
  else
    throw FormatError(meta_path + ": mode must be 'share' or 'differ'");
  return pb;
}

std::vector<PairBatch> load_pairs(const std::string& path, std::size_t batch_rows) {
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".meta")
    return {read_pairs_csv(path)};
  return read_pairs(path, batch_rows);
}

}  // namespace iin
