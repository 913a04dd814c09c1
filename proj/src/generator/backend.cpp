#include "alqa/generator/backend.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "alqa/common/error.hpp"

namespace alqa::generator {

double GenerationBackend::loss(std::span<const TrainingPair> pairs) const {
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& p : pairs) {
    for (double lp : sequence_logprobs(p.source, p.bos, p.target)) nll -= lp;
    tokens += p.target.size();
  }
  return tokens ? nll / static_cast<double>(tokens) : 0.0;
}

std::vector<double> GenerationBackend::sequence_logprobs(std::span<const TokenId> source, TokenId bos,
                                                         std::span<const TokenId> target) const {
  auto enc = encode(source);
  TokenIds prefix{bos};
  std::vector<double> out;
  out.reserve(target.size());
  for (TokenId t : target) {
    auto lp = next_logprobs(*enc, prefix);
    out.push_back(lp.at(static_cast<std::size_t>(t)));
    prefix.push_back(t);
  }
  return out;
}

namespace {

std::vector<std::size_t> order_by_prob(std::span<const double> logprobs) {
  std::vector<std::size_t> idx(logprobs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return logprobs[a] > logprobs[b]; });
  return idx;
}

// Smallest prefix of `kept` (sorted by probability) whose mass reaches p of the kept total.
std::size_t nucleus_cut(std::span<const std::size_t> kept, std::span<const double> probs, double p) {
  double total = 0.0;
  for (auto i : kept) total += probs[i];
  double acc = 0.0;
  for (std::size_t n = 0; n < kept.size(); ++n) {
    acc += probs[kept[n]];
    if (acc >= p * total - 1e-12) return n + 1;
  }
  return kept.size();
}

}  // namespace

std::vector<double> truncated_distribution(std::span<const double> logprobs, const DecodeConfig& cfg) {
  std::vector<double> probs(logprobs.size());
  for (std::size_t i = 0; i < logprobs.size(); ++i) probs[i] = std::exp(logprobs[i]);
  auto order = order_by_prob(logprobs);
  std::size_t keep;
  if (cfg.order == TopKOrder::topk_then_nucleus) {
    std::size_t k = std::min(cfg.top_k, order.size());
    keep = nucleus_cut(std::span(order).first(k), probs, cfg.nucleus_p);
  } else {
    keep = std::min(cfg.top_k, nucleus_cut(order, probs, cfg.nucleus_p));
  }
  std::vector<double> out(logprobs.size(), 0.0);
  double total = 0.0;
  for (std::size_t n = 0; n < keep; ++n) total += probs[order[n]];
  for (std::size_t n = 0; n < keep; ++n) out[order[n]] = probs[order[n]] / total;
  return out;
}

std::size_t sample_truncated(std::span<const double> logprobs, const DecodeConfig& cfg, double uniform01) {
  auto dist = truncated_distribution(logprobs, cfg);
  auto order = order_by_prob(logprobs);
  double acc = 0.0;
  std::size_t last = order.front();
  for (auto i : order) {
    if (dist[i] <= 0.0) break;
    acc += dist[i];
    last = i;
    if (uniform01 < acc) return i;
  }
  return last;
}

TokenIds GenerationBackend::sample(std::span<const TokenId> source, TokenId bos, const DecodeConfig& cfg,
                                   std::size_t max_len, TokenId end, std::uint64_t seed) const {
  auto enc = encode(source);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  TokenIds prefix{bos};
  TokenIds out;
  while (out.size() < max_len) {
    auto lp = next_logprobs(*enc, prefix);
    auto tok = static_cast<TokenId>(sample_truncated(lp, cfg, unif(rng)));
    out.push_back(tok);
    prefix.push_back(tok);
    if (tok == end) break;
  }
  return out;
}

TokenIds GenerationBackend::beam_decode(std::span<const TokenId> source, TokenId bos, std::size_t beam_size,
                                        std::size_t max_len, TokenId end) const {
  if (beam_size == 0) throw PreconditionError("beam_decode: beam_size must be positive");
  struct Hyp {
    TokenIds tokens;
    double score;
  };
  auto better = [](const Hyp& a, const Hyp& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
  };
  auto enc = encode(source);
  std::vector<Hyp> open{{{}, 0.0}};
  std::vector<Hyp> finished;
  for (std::size_t step = 0; step < max_len && !open.empty(); ++step) {
    std::vector<Hyp> cand;
    for (const auto& h : open) {
      TokenIds prefix{bos};
      prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
      auto lp = next_logprobs(*enc, prefix);
      auto order = order_by_prob(lp);
      for (std::size_t n = 0; n < std::min(beam_size, order.size()); ++n) {
        Hyp c{h.tokens, h.score + lp[order[n]]};
        c.tokens.push_back(static_cast<TokenId>(order[n]));
        cand.push_back(std::move(c));
      }
    }
    std::sort(cand.begin(), cand.end(), better);
    open.clear();
    for (auto& c : cand) {
      if (open.size() >= beam_size) break;
      if (c.tokens.back() == end) finished.push_back(std::move(c));
      else open.push_back(std::move(c));
    }
    std::sort(finished.begin(), finished.end(), better);
    if (finished.size() >= beam_size) break;
    // Log-probs only decrease, so no open hypothesis can overtake the best finished one.
    if (!finished.empty() && (open.empty() || finished.front().score >= open.front().score)) break;
  }
  if (!finished.empty()) return finished.front().tokens;
  if (!open.empty()) return open.front().tokens;
  return {};
}

}  // namespace alqa::generator
