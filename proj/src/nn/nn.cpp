#include "alqa/nn/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "alqa/common/error.hpp"
#include "alqa/common/hash.hpp"

namespace alqa::nn {

namespace {

constexpr char kMagic[8] = {'A', 'L', 'Q', 'A', 'P', 'R', 'M', '1'};

template <typename T>
void put(std::vector<std::uint8_t>& out, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DataError("parameter blob truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

Parameter& ParameterSet::add(std::string name, Eigen::Index rows, Eigen::Index cols, double scale,
                             std::mt19937_64& rng, bool anchored) {
  Parameter p;
  p.name = std::move(name);
  p.value = Matrix::Zero(rows, cols);
  if (scale > 0) {
    std::normal_distribution<double> normal(0.0, scale);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = normal(rng);
  }
  p.grad = Matrix::Zero(rows, cols);
  p.anchored = anchored;
  params_.push_back(std::move(p));
  return params_.back();
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

double ParameterSet::grad_norm() const {
  double sq = 0;
  for (const auto& p : params_) sq += p.grad.squaredNorm();
  return std::sqrt(sq);
}

void ParameterSet::scale_grad(double factor) {
  for (auto& p : params_) p.grad *= factor;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::uint64_t ParameterSet::hash() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : params_) {
    h = fnv1a(p.name, h);
    h = fnv1a_bytes(std::as_bytes(std::span(p.value.data(), static_cast<std::size_t>(p.value.size()))), h);
  }
  return h;
}

std::vector<std::uint8_t> ParameterSet::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint64_t>(out, params_.size());
  for (const auto& p : params_) {
    put<std::uint64_t>(out, p.name.size());
    out.insert(out.end(), p.name.begin(), p.name.end());
    put<std::int64_t>(out, p.value.rows());
    put<std::int64_t>(out, p.value.cols());
    const auto* data = reinterpret_cast<const std::uint8_t*>(p.value.data());
    out.insert(out.end(), data, data + sizeof(double) * static_cast<std::size_t>(p.value.size()));
  }
  return out;
}

void ParameterSet::deserialize(std::span<const std::uint8_t> in) {
  if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a parameter blob");
  }
  std::size_t pos = sizeof(kMagic);
  const auto count = take<std::uint64_t>(in, pos);
  if (count != params_.size()) throw DataError("parameter count mismatch");
  for (auto& p : params_) {
    const auto name_len = take<std::uint64_t>(in, pos);
    if (pos + name_len > in.size()) throw DataError("parameter blob truncated");
    const std::string name(reinterpret_cast<const char*>(in.data() + pos), name_len);
    pos += name_len;
    const auto rows = take<std::int64_t>(in, pos);
    const auto cols = take<std::int64_t>(in, pos);
    if (name != p.name || rows != p.value.rows() || cols != p.value.cols()) {
      throw DataError("parameter '" + name + "' does not match '" + p.name + "'");
    }
    const std::size_t bytes = sizeof(double) * static_cast<std::size_t>(rows * cols);
    if (pos + bytes > in.size()) throw DataError("parameter blob truncated");
    std::memcpy(p.value.data(), in.data() + pos, bytes);
    pos += bytes;
  }
}

void ParameterSet::save(const std::filesystem::path& file) const {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  const auto bytes = serialize();
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void ParameterSet::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  deserialize(bytes);
}

Adam::Adam(ParameterSet& params) : params_(params) {
  for (const auto& p : params_.params()) {
    m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
  set_anchor();
}

void Adam::set_anchor() {
  anchor_.clear();
  for (const auto& p : params_.params()) anchor_.push_back(p.anchored ? p.value : Matrix());
}

void Adam::step(double learning_rate, const AdamOptions& o) {
  auto& ps = params_.params();
  if (o.anchor_decay > 0) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (ps[i].anchored) ps[i].grad += o.anchor_decay * (ps[i].value - anchor_[i]);
    }
  }
  if (o.max_grad_norm > 0) {
    const double norm = params_.grad_norm();
    if (norm > o.max_grad_norm) params_.scale_grad(o.max_grad_norm / norm);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i];
    m_[i] = o.beta1 * m_[i] + (1.0 - o.beta1) * p.grad;
    v_[i] = o.beta2 * v_[i] + (1.0 - o.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + o.epsilon);
  }
}

Vector dropout_mask(Eigen::Index n, double rate, std::mt19937_64& rng) {
  Vector mask = Vector::Ones(n);
  if (rate <= 0) return mask;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < n; ++i) mask[i] = u(rng) < rate ? 0.0 : keep;
  return mask;
}

Vector keyed_dropout_mask(Eigen::Index n, double rate, std::uint64_t seed, std::uint64_t key) {
  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(key)));
  return dropout_mask(n, rate, rng);
}

double logsumexp(const Vector& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

Vector log_softmax(const Vector& v) { return v.array() - logsumexp(v); }

Matrix window_inputs(const Matrix& embeddings, std::span<const TokenId> ids, const Matrix& features, int radius) {
  const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
  const Eigen::Index d = embeddings.cols();
  const Eigen::Index width = 2 * radius + 1;
  Matrix out(n, width * d + features.cols());
  for (Eigen::Index j = 0; j < n; ++j) {
    for (int k = -radius; k <= radius; ++k) {
      const Eigen::Index pos = j + k;
      const TokenId id = (pos >= 0 && pos < n) ? ids[static_cast<std::size_t>(pos)] : corpus::kPad;
      out.block(j, (k + radius) * d, 1, d) = embeddings.row(id);
    }
    if (features.cols() > 0) out.block(j, width * d, 1, features.cols()) = features.row(j);
  }
  return out;
}

void window_inputs_backward(const Matrix& d_inputs, std::span<const TokenId> ids, int radius, Matrix& d_embeddings) {
  const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
  const Eigen::Index d = d_embeddings.cols();
  for (Eigen::Index j = 0; j < n; ++j) {
    for (int k = -radius; k <= radius; ++k) {
      const Eigen::Index pos = j + k;
      const TokenId id = (pos >= 0 && pos < n) ? ids[static_cast<std::size_t>(pos)] : corpus::kPad;
      d_embeddings.row(id) += d_inputs.block(j, (k + radius) * d, 1, d);
    }
  }
}

double warmup_linear_lr(double base, std::size_t step, std::size_t total_steps, double warmup_fraction) {
  if (total_steps == 0) return base;
  const double total = static_cast<double>(total_steps);
  const double s = static_cast<double>(step) + 1.0;
  const double warm = warmup_fraction * total;
  if (s <= warm) return base * s / warm;
  return base * std::max(0.0, total - s + 1.0) / std::max(1.0, total - warm);
}

}  // namespace alqa::nn
