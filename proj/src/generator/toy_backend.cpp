#include "alqa/generator/toy_backend.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "alqa/common/error.hpp"
#include "alqa/common/jsonl.hpp"

namespace alqa::generator {

using nn::Matrix;
using nn::Vector;

struct CopyGenerator::Encoded : EncodedSource {
  TokenIds src;
  Matrix X;
  Matrix h_raw;
  Matrix mask;
  Matrix h;
  std::vector<Eigen::Index> segment;
  Vector qmean;
  std::unordered_map<TokenId, std::vector<Eigen::Index>> where;
};

struct CopyGenerator::Step {
  TokenId p1 = corpus::kPad;
  TokenId p2 = corpus::kPad;
  Vector u, s_raw, mask, s, a, cf, z;
  double log_z = 0.0;
};

namespace {

constexpr int kFeatures = 6;
constexpr std::uint64_t kDecoderKey = 1ULL << 40;

Matrix source_features(std::span<const TokenId> src, std::vector<Eigen::Index>& segment) {
  const auto n = static_cast<Eigen::Index>(src.size());
  Matrix f = Matrix::Zero(n, kFeatures);
  auto open = std::find(src.begin(), src.end(), corpus::kQuestionOpen);
  segment.clear();
  if (open == src.end()) return f;
  auto qs = open - src.begin();
  auto close = std::find(open, src.end(), corpus::kQuestionClose);
  auto qe = close == src.end() ? n - 1 : close - src.begin();
  std::unordered_set<TokenId> qtokens;
  for (auto j = qs; j <= qe; ++j) {
    segment.push_back(j);
    f(j, 5) = 1.0;
    if (j != qs && j != qe) qtokens.insert(src[static_cast<std::size_t>(j)]);
  }
  std::vector<double> match(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index j = 0; j < qs; ++j) match[static_cast<std::size_t>(j)] = qtokens.count(src[static_cast<std::size_t>(j)]) ? 1.0 : 0.0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (int o = -2; o <= 2; ++o) {
      auto k = j + o;
      if (k >= 0 && k < n) f(j, o + 2) = match[static_cast<std::size_t>(k)];
    }
  return f;
}

Vector tanh_v(const Vector& v) { return v.array().tanh(); }

}  // namespace

CopyGenerator::CopyGenerator(Dims dims, std::uint64_t init_seed) : dims_(dims) {
  if (dims_.vocab <= static_cast<std::size_t>(corpus::kSpecialCount)) throw ConfigError("toy-copy-gen: vocabulary too small");
  if (dims_.embed <= 0 || dims_.hidden <= 0 || dims_.radius < 0) throw ConfigError("toy-copy-gen: bad dimensions");
  if (!(dims_.dropout >= 0 && dims_.dropout < 1)) throw ConfigError("toy-copy-gen: dropout must lie in [0, 1)");
  std::mt19937_64 rng(init_seed);
  const auto V = static_cast<Eigen::Index>(dims_.vocab);
  const Eigen::Index d = dims_.embed, H = dims_.hidden;
  const Eigen::Index in = (2 * dims_.radius + 1) * d + kFeatures;
  const Eigen::Index din = 2 * d + 2 * H;
  params_.add("embed", V, d, 0.1, rng);
  params_.add("enc_w", H, in, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  params_.add("enc_b", H, 1, 0.0, rng);
  params_.add("dec_w", H, din, 1.0 / std::sqrt(static_cast<double>(din)), rng);
  params_.add("dec_b", H, 1, 0.0, rng);
  params_.add("out_w", V, H, 1.0 / std::sqrt(static_cast<double>(H)), rng);
  params_.add("out_b", V, 1, 0.0, rng);
  params_.add("att_w", H, H, 1.0 / std::sqrt(static_cast<double>(H)), rng);
  params_.add("cont", 1, 1, 0.0, rng);
}

CopyGenerator::CopyGenerator(const CopyGenerator& other)
    : GenerationBackend(),
      dims_(other.dims_),
      params_(other.params_),
      stochastic_(other.stochastic_),
      stochastic_seed_(other.stochastic_seed_) {}

std::unique_ptr<GenerationBackend> CopyGenerator::clone() const { return std::make_unique<CopyGenerator>(*this); }

void CopyGenerator::set_stochastic(bool enabled, std::uint64_t seed) {
  stochastic_ = enabled;
  stochastic_seed_ = seed;
}

Vector CopyGenerator::mask_for(Eigen::Index n, std::uint64_t key, std::mt19937_64* rng) const {
  if (rng) return nn::dropout_mask(n, dims_.dropout, *rng);
  if (stochastic_) return nn::keyed_dropout_mask(n, dims_.dropout, stochastic_seed_, key);
  return Vector::Ones(n);
}

std::unique_ptr<CopyGenerator::Encoded> CopyGenerator::encode_impl(std::span<const TokenId> source,
                                                                   std::mt19937_64* rng) const {
  auto e = std::make_unique<Encoded>();
  e->src.assign(source.begin(), source.end());
  for (TokenId t : e->src)
    if (t < 0 || static_cast<std::size_t>(t) >= dims_.vocab) throw PreconditionError("toy-copy-gen: token id out of range");
  const auto L = static_cast<Eigen::Index>(e->src.size());
  const Eigen::Index H = dims_.hidden;
  Matrix f = source_features(e->src, e->segment);
  e->X = nn::window_inputs(w(kEmbed), e->src, f, dims_.radius);
  Matrix pre = e->X * w(kEncW).transpose();
  pre.rowwise() += w(kEncB).col(0).transpose();
  e->h_raw = pre.array().tanh();
  e->mask.resize(L, H);
  for (Eigen::Index j = 0; j < L; ++j) e->mask.row(j) = mask_for(H, static_cast<std::uint64_t>(j), rng).transpose();
  e->h = e->h_raw.cwiseProduct(e->mask);
  e->qmean = Vector::Zero(H);
  for (auto j : e->segment) e->qmean += e->h.row(j).transpose();
  if (!e->segment.empty()) e->qmean /= static_cast<double>(e->segment.size());
  for (Eigen::Index j = 0; j < L; ++j) e->where[e->src[static_cast<std::size_t>(j)]].push_back(j);
  return e;
}

std::unique_ptr<EncodedSource> CopyGenerator::encode(std::span<const TokenId> source) const {
  return encode_impl(source, nullptr);
}

void CopyGenerator::step_impl(const Encoded& enc, std::span<const TokenId> prefix, std::mt19937_64* rng,
                              Step& st) const {
  if (prefix.empty()) throw PreconditionError("toy-copy-gen: prefix must start with a bos token");
  const Eigen::Index d = dims_.embed, H = dims_.hidden;
  const auto L = static_cast<Eigen::Index>(enc.src.size());
  st.p1 = prefix.back();
  st.p2 = prefix.size() >= 2 ? prefix[prefix.size() - 2] : corpus::kPad;
  Vector cont = Vector::Zero(H);
  if (auto it = enc.where.find(st.p1); it != enc.where.end()) {
    for (auto j : it->second) cont += enc.h.row(j).transpose();
    cont /= static_cast<double>(it->second.size());
  }
  st.u.resize(2 * d + 2 * H);
  st.u << w(kEmbed).row(st.p1).transpose(), w(kEmbed).row(st.p2).transpose(), enc.qmean, cont;
  st.s_raw = tanh_v(w(kDecW) * st.u + w(kDecB).col(0));
  st.mask = mask_for(H, kDecoderKey + prefix.size(), rng);
  st.s = st.s_raw.cwiseProduct(st.mask);
  st.a = w(kAttW) * st.s;
  st.cf = Vector::Zero(L);
  for (Eigen::Index j = 1; j < L; ++j)
    if (enc.src[static_cast<std::size_t>(j - 1)] == st.p1) st.cf[j] = 1.0;
  const auto V = static_cast<Eigen::Index>(dims_.vocab);
  st.z.resize(V + L);
  st.z.head(V) = w(kOutW) * st.s + w(kOutB).col(0);
  if (L > 0) st.z.tail(L) = enc.h * st.a + w(kCont)(0, 0) * st.cf;
  st.log_z = nn::logsumexp(st.z);
}

std::vector<double> CopyGenerator::next_logprobs(const EncodedSource& source, std::span<const TokenId> prefix) const {
  const auto& enc = dynamic_cast<const Encoded&>(source);
  Step st;
  step_impl(enc, prefix, nullptr, st);
  const auto V = static_cast<Eigen::Index>(dims_.vocab);
  std::vector<double> mass(dims_.vocab);
  for (Eigen::Index k = 0; k < V; ++k) mass[static_cast<std::size_t>(k)] = std::exp(st.z[k] - st.log_z);
  for (std::size_t j = 0; j < enc.src.size(); ++j)
    mass[static_cast<std::size_t>(enc.src[j])] += std::exp(st.z[V + static_cast<Eigen::Index>(j)] - st.log_z);
  for (auto& m : mass) m = std::log(m);
  return mass;
}

double CopyGenerator::pair_loss(const TrainingPair& pair, bool grad, std::mt19937_64* rng) {
  auto enc = encode_impl(pair.source, rng);
  const Eigen::Index d = dims_.embed, H = dims_.hidden;
  const auto V = static_cast<Eigen::Index>(dims_.vocab);
  const auto L = static_cast<Eigen::Index>(enc->src.size());
  Matrix dh;
  if (grad) dh = Matrix::Zero(L, H);
  TokenIds prefix{pair.bos};
  double total = 0.0;
  for (TokenId y : pair.target) {
    Step st;
    step_impl(*enc, prefix, rng, st);
    std::vector<Eigen::Index> idx{y};
    if (auto it = enc->where.find(y); it != enc->where.end())
      for (auto j : it->second) idx.push_back(V + j);
    Vector zs(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) zs[static_cast<Eigen::Index>(k)] = st.z[idx[k]];
    const double log_s = nn::logsumexp(zs);
    total -= log_s - st.log_z;
    if (grad) {
      Vector gz = (st.z.array() - st.log_z).exp();
      for (auto k : idx) gz[k] -= std::exp(st.z[k] - log_s);
      const Vector gzv = gz.head(V);
      const Vector gzc = gz.tail(L);
      g(kOutW) += gzv * st.s.transpose();
      g(kOutB).col(0) += gzv;
      Vector ds = w(kOutW).transpose() * gzv;
      if (L > 0) {
        const Vector da = enc->h.transpose() * gzc;
        g(kAttW) += da * st.s.transpose();
        ds += w(kAttW).transpose() * da;
        dh += gzc * st.a.transpose();
        g(kCont)(0, 0) += gzc.dot(st.cf);
      }
      const Vector dpre = ds.cwiseProduct(st.mask).cwiseProduct((1.0 - st.s_raw.array().square()).matrix());
      g(kDecW) += dpre * st.u.transpose();
      g(kDecB).col(0) += dpre;
      const Vector du = w(kDecW).transpose() * dpre;
      g(kEmbed).row(st.p1) += du.segment(0, d).transpose();
      g(kEmbed).row(st.p2) += du.segment(d, d).transpose();
      if (!enc->segment.empty()) {
        const Vector dq = du.segment(2 * d, H) / static_cast<double>(enc->segment.size());
        for (auto j : enc->segment) dh.row(j) += dq.transpose();
      }
      if (auto it = enc->where.find(st.p1); it != enc->where.end()) {
        const Vector dc = du.segment(2 * d + H, H) / static_cast<double>(it->second.size());
        for (auto j : it->second) dh.row(j) += dc.transpose();
      }
    }
    prefix.push_back(y);
  }
  if (grad && L > 0) {
    const Matrix dpre = dh.cwiseProduct(enc->mask).cwiseProduct((1.0 - enc->h_raw.array().square()).matrix());
    g(kEncW) += dpre.transpose() * enc->X;
    g(kEncB).col(0) += dpre.colwise().sum().transpose();
    const Matrix dX = dpre * w(kEncW);
    nn::window_inputs_backward(dX, enc->src, dims_.radius, g(kEmbed));
  }
  return total;
}

double CopyGenerator::loss(std::span<const TrainingPair> pairs) const {
  double nll = 0.0;
  std::size_t tokens = 0;
  auto& self = const_cast<CopyGenerator&>(*this);  // grad=false leaves state untouched
  for (const auto& p : pairs) {
    nll += self.pair_loss(p, false, nullptr);
    tokens += p.target.size();
  }
  return tokens ? nll / static_cast<double>(tokens) : 0.0;
}

void CopyGenerator::begin_training() {
  adam_ = std::make_unique<nn::Adam>(params_);
  adam_->set_anchor();
}

EpochResult CopyGenerator::train_epoch(std::span<const TrainingPair> pairs, const EpochPlan& plan) {
  if (!adam_) begin_training();
  std::mt19937_64 rng(plan.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t bs = std::max<std::size_t>(1, plan.batch_size);
  nn::AdamOptions opts;
  opts.anchor_decay = plan.anchor_decay;
  EpochResult r;
  double nll = 0.0;
  std::size_t tokens = 0;
  for (std::size_t b = 0; b < order.size(); b += bs) {
    params_.zero_grad();
    double batch_nll = 0.0;
    std::size_t batch_tokens = 0;
    for (std::size_t k = b; k < std::min(order.size(), b + bs); ++k) {
      const auto& p = pairs[order[k]];
      batch_nll += pair_loss(p, true, &rng);
      batch_tokens += p.target.size();
    }
    if (batch_tokens == 0) continue;
    params_.scale_grad(1.0 / static_cast<double>(batch_tokens));
    const double lr = plan.learning_rate ? plan.learning_rate(plan.first_step + r.steps) : 1e-3;
    adam_->step(lr, opts);
    ++r.steps;
    nll += batch_nll;
    tokens += batch_tokens;
  }
  r.mean_loss = tokens ? nll / static_cast<double>(tokens) : 0.0;
  return r;
}

namespace {

json dims_json(const CopyGenerator::Dims& d) {
  return json{{"backend_id", CopyGenerator::kBackendId}, {"vocab", d.vocab},   {"embed", d.embed},
              {"hidden", d.hidden},                     {"radius", d.radius}, {"dropout", d.dropout}};
}

CopyGenerator::Dims dims_from(const json& j, CopyGenerator::Dims d) {
  d.vocab = j.value("vocab", d.vocab);
  d.embed = j.value("embed", d.embed);
  d.hidden = j.value("hidden", d.hidden);
  d.radius = j.value("radius", d.radius);
  d.dropout = j.value("dropout", d.dropout);
  return d;
}

}  // namespace

void CopyGenerator::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_json_file(dir / "backend.json", dims_json(dims_));
  params_.save(dir / "params.bin");
}

void CopyGenerator::load(const std::filesystem::path& dir) {
  auto j = read_json_file(dir / "backend.json");
  if (j.value("backend_id", std::string()) != kBackendId) throw DataError("checkpoint " + dir.string() + " is not a toy-copy-gen backend");
  if (dims_json(dims_from(j, {})) != dims_json(dims_)) throw DataError("checkpoint " + dir.string() + ": dimension mismatch");
  params_.load(dir / "params.bin");
}

std::unique_ptr<CopyGenerator> CopyGenerator::from_directory(const std::filesystem::path& dir) {
  auto j = read_json_file(dir / "backend.json");
  auto g = std::make_unique<CopyGenerator>(dims_from(j, {}), 0);
  g->load(dir);
  return g;
}

GenerationBackendPtr make_generation_backend(const std::string& backend_id, std::size_t vocab_size,
                                             std::uint64_t seed, const json& options) {
  if (backend_id == CopyGenerator::kBackendId) {
    CopyGenerator::Dims d;
    d = dims_from(options, d);
    d.vocab = vocab_size;
    return std::make_unique<CopyGenerator>(d, seed);
  }
  throw ConfigError("unknown generation backend '" + backend_id + "'");
}

GenerationBackendPtr load_generation_backend(const std::filesystem::path& dir) {
  auto j = read_json_file(dir / "backend.json");
  auto id = j.value("backend_id", std::string());
  if (id == CopyGenerator::kBackendId) return CopyGenerator::from_directory(dir);
  throw DataError("checkpoint " + dir.string() + ": unknown generation backend '" + id + "'");
}

}  // namespace alqa::generator
