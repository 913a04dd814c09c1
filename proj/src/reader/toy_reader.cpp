#include "alqa/reader/toy_reader.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "alqa/common/error.hpp"

namespace alqa::reader {

using nn::Matrix;
using nn::Vector;

namespace {

constexpr int kFeatures = 15;
constexpr int kReach[3] = {2, 4, 6};

Matrix context_features(std::span<const TokenId> q, std::span<const TokenId> c) {
  const auto n = static_cast<Eigen::Index>(c.size());
  std::unordered_set<TokenId> qset(q.begin(), q.end());
  std::vector<int> m(c.size());
  for (std::size_t j = 0; j < c.size(); ++j) m[j] = qset.count(c[j]) ? 1 : 0;
  // prefix sums make the "within k" flags O(1)
  std::vector<int> pre(c.size() + 1, 0);
  for (std::size_t j = 0; j < c.size(); ++j) pre[j + 1] = pre[j] + m[j];
  auto count = [&](Eigen::Index lo, Eigen::Index hi) {  // matches in [lo, hi)
    lo = std::clamp<Eigen::Index>(lo, 0, n);
    hi = std::clamp<Eigen::Index>(hi, 0, n);
    return hi > lo ? pre[static_cast<std::size_t>(hi)] - pre[static_cast<std::size_t>(lo)] : 0;
  };
  Matrix f = Matrix::Zero(n, kFeatures);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (int o = -3; o <= 3; ++o) {
      const auto k = j + o;
      if (k >= 0 && k < n) f(j, o + 3) = m[static_cast<std::size_t>(k)];
    }
    for (int r = 0; r < 3; ++r) {
      f(j, 7 + r) = count(j + 1, j + 1 + kReach[r]) > 0 ? 1.0 : 0.0;
      f(j, 10 + r) = count(j - kReach[r], j) > 0 ? 1.0 : 0.0;
    }
    f(j, 13) = j == 0 ? 1.0 : 0.0;
    f(j, 14) = j == n - 1 ? 1.0 : 0.0;
  }
  return f;
}

}  // namespace

struct SpanReader::Forward {
  Matrix X, h_raw, mask, h;
  Vector qbar, qh, as, ae, lps, lpe;
};

SpanReader::SpanReader(Dims dims, std::uint64_t init_seed) : dims_(dims) {
  if (dims_.vocab <= static_cast<std::size_t>(corpus::kSpecialCount)) throw ConfigError("toy-span-reader: vocabulary too small");
  if (dims_.embed <= 0 || dims_.hidden <= 0 || dims_.radius < 0) throw ConfigError("toy-span-reader: bad dimensions");
  if (!(dims_.dropout >= 0 && dims_.dropout < 1)) throw ConfigError("toy-span-reader: dropout must lie in [0, 1)");
  std::mt19937_64 rng(init_seed);
  const auto V = static_cast<Eigen::Index>(dims_.vocab);
  const Eigen::Index d = dims_.embed, H = dims_.hidden;
  const Eigen::Index in = (2 * dims_.radius + 1) * d + kFeatures;
  params_.add("embed", V, d, 0.1, rng, true);
  params_.add("enc_w", H, in, 1.0 / std::sqrt(static_cast<double>(in)), rng, true);
  params_.add("enc_b", H, 1, 0.0, rng, true);
  params_.add("q_w", H, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  params_.add("q_b", H, 1, 0.0, rng);
  params_.add("start_w", H, H, 1.0 / std::sqrt(static_cast<double>(H)), rng);
  params_.add("start_v", H, 1, 1.0 / std::sqrt(static_cast<double>(H)), rng);
  params_.add("end_w", H, H, 1.0 / std::sqrt(static_cast<double>(H)), rng);
  params_.add("end_v", H, 1, 1.0 / std::sqrt(static_cast<double>(H)), rng);
}

SpanReader::SpanReader(const SpanReader& other)
    : ReaderBackend(),
      dims_(other.dims_),
      params_(other.params_),
      stochastic_(other.stochastic_),
      stochastic_seed_(other.stochastic_seed_) {}

std::unique_ptr<ReaderBackend> SpanReader::clone() const { return std::make_unique<SpanReader>(*this); }

void SpanReader::set_stochastic(bool enabled, std::uint64_t seed) {
  stochastic_ = enabled;
  stochastic_seed_ = seed;
}

void SpanReader::forward(std::span<const TokenId> q, std::span<const TokenId> c, std::mt19937_64* rng,
                         Forward& f) const {
  if (c.empty()) throw PreconditionError("toy-span-reader: empty context");
  for (auto ids : {q, c})
    for (TokenId t : ids)
      if (t < 0 || static_cast<std::size_t>(t) >= dims_.vocab) throw PreconditionError("toy-span-reader: token id out of range");
  const auto L = static_cast<Eigen::Index>(c.size());
  const Eigen::Index H = dims_.hidden, d = dims_.embed;
  f.X = nn::window_inputs(w(kEmbed), c, context_features(q, c), dims_.radius);
  Matrix pre = f.X * w(kEncW).transpose();
  pre.rowwise() += w(kEncB).col(0).transpose();
  f.h_raw = pre.array().tanh();
  f.mask.resize(L, H);
  for (Eigen::Index j = 0; j < L; ++j) {
    if (rng) f.mask.row(j) = nn::dropout_mask(H, dims_.dropout, *rng).transpose();
    else if (stochastic_) f.mask.row(j) = nn::keyed_dropout_mask(H, dims_.dropout, stochastic_seed_, static_cast<std::uint64_t>(j)).transpose();
    else f.mask.row(j).setOnes();
  }
  f.h = f.h_raw.cwiseProduct(f.mask);
  f.qbar = Vector::Zero(d);
  for (TokenId t : q) f.qbar += w(kEmbed).row(t).transpose();
  if (!q.empty()) f.qbar /= static_cast<double>(q.size());
  f.qh = (w(kQW) * f.qbar + w(kQB).col(0)).array().tanh();
  f.as = w(kStartW) * f.qh + w(kStartV).col(0);
  f.ae = w(kEndW) * f.qh + w(kEndV).col(0);
  f.lps = nn::log_softmax(f.h * f.as);
  f.lpe = nn::log_softmax(f.h * f.ae);
}

SpanDistributions SpanReader::span_distributions(std::span<const TokenId> question,
                                                 std::span<const TokenId> context) const {
  Forward f;
  forward(question, context, nullptr, f);
  SpanDistributions out;
  out.start.assign(f.lps.data(), f.lps.data() + f.lps.size());
  out.end.assign(f.lpe.data(), f.lpe.data() + f.lpe.size());
  return out;
}

double SpanReader::example_loss(const ReaderExample& ex, bool grad, std::mt19937_64* rng) {
  if (ex.start > ex.end || ex.end >= ex.context.size()) throw PreconditionError("toy-span-reader: answer outside the chunk");
  Forward f;
  forward(ex.question, ex.context, rng, f);
  const auto s = static_cast<Eigen::Index>(ex.start), e = static_cast<Eigen::Index>(ex.end);
  const double loss = -f.lps[s] - f.lpe[e];
  if (!grad) return loss;
  Vector gs = f.lps.array().exp();
  gs[s] -= 1.0;
  Vector ge = f.lpe.array().exp();
  ge[e] -= 1.0;
  Matrix dh = gs * f.as.transpose() + ge * f.ae.transpose();
  const Vector das = f.h.transpose() * gs;
  const Vector dae = f.h.transpose() * ge;
  g(kStartW) += das * f.qh.transpose();
  g(kStartV).col(0) += das;
  g(kEndW) += dae * f.qh.transpose();
  g(kEndV).col(0) += dae;
  const Vector dqh = w(kStartW).transpose() * das + w(kEndW).transpose() * dae;
  const Vector dqpre = dqh.cwiseProduct((1.0 - f.qh.array().square()).matrix());
  g(kQW) += dqpre * f.qbar.transpose();
  g(kQB).col(0) += dqpre;
  if (!ex.question.empty()) {
    const Vector dq = w(kQW).transpose() * dqpre / static_cast<double>(ex.question.size());
    for (TokenId t : ex.question) g(kEmbed).row(t) += dq.transpose();
  }
  const Matrix dpre = dh.cwiseProduct(f.mask).cwiseProduct((1.0 - f.h_raw.array().square()).matrix());
  g(kEncW) += dpre.transpose() * f.X;
  g(kEncB).col(0) += dpre.colwise().sum().transpose();
  nn::window_inputs_backward(dpre * w(kEncW), ex.context, dims_.radius, g(kEmbed));
  return loss;
}

void SpanReader::begin_training() {
  adam_ = std::make_unique<nn::Adam>(params_);
  adam_->set_anchor();
}

nn::EpochResult SpanReader::train_epoch(std::span<const ReaderExample> examples, const nn::EpochPlan& plan) {
  if (!adam_) begin_training();
  std::mt19937_64 rng(plan.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t bs = std::max<std::size_t>(1, plan.batch_size);
  nn::AdamOptions opts;
  opts.anchor_decay = plan.anchor_decay;
  nn::EpochResult r;
  double total = 0.0;
  for (std::size_t b = 0; b < order.size(); b += bs) {
    params_.zero_grad();
    const std::size_t n = std::min(order.size(), b + bs) - b;
    for (std::size_t k = b; k < b + n; ++k) total += example_loss(examples[order[k]], true, &rng);
    params_.scale_grad(1.0 / static_cast<double>(n));
    adam_->step(plan.learning_rate ? plan.learning_rate(plan.first_step + r.steps) : 1e-3, opts);
    ++r.steps;
  }
  r.mean_loss = examples.empty() ? 0.0 : total / static_cast<double>(examples.size());
  return r;
}

namespace {

json dims_json(const SpanReader::Dims& d) {
  return json{{"backend_id", SpanReader::kBackendId}, {"vocab", d.vocab},   {"embed", d.embed},
              {"hidden", d.hidden},                  {"radius", d.radius}, {"dropout", d.dropout}};
}

SpanReader::Dims dims_from(const json& j, SpanReader::Dims d) {
  d.vocab = j.value("vocab", d.vocab);
  d.embed = j.value("embed", d.embed);
  d.hidden = j.value("hidden", d.hidden);
  d.radius = j.value("radius", d.radius);
  d.dropout = j.value("dropout", d.dropout);
  return d;
}

}  // namespace

void SpanReader::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_json_file(dir / "backend.json", dims_json(dims_));
  params_.save(dir / "params.bin");
}

void SpanReader::load(const std::filesystem::path& dir) {
  auto j = read_json_file(dir / "backend.json");
  if (j.value("backend_id", std::string()) != kBackendId) throw DataError("checkpoint " + dir.string() + " is not a toy-span-reader backend");
  if (dims_json(dims_from(j, {})) != dims_json(dims_)) throw DataError("checkpoint " + dir.string() + ": dimension mismatch");
  params_.load(dir / "params.bin");
}

std::unique_ptr<SpanReader> SpanReader::from_directory(const std::filesystem::path& dir) {
  auto r = std::make_unique<SpanReader>(dims_from(read_json_file(dir / "backend.json"), {}), 0);
  r->load(dir);
  return r;
}

ReaderBackendPtr make_reader_backend(const std::string& backend_id, std::size_t vocab_size, std::uint64_t seed,
                                     const json& options) {
  if (backend_id == SpanReader::kBackendId) {
    auto d = dims_from(options, {});
    d.vocab = vocab_size;
    return std::make_unique<SpanReader>(d, seed);
  }
  throw ConfigError("unknown reader backend '" + backend_id + "'");
}

ReaderBackendPtr load_reader_backend(const std::filesystem::path& dir) {
  auto id = read_json_file(dir / "backend.json").value("backend_id", std::string());
  if (id == SpanReader::kBackendId) return SpanReader::from_directory(dir);
  throw DataError("checkpoint " + dir.string() + ": unknown reader backend '" + id + "'");
}

}  // namespace alqa::reader
