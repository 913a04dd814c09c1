#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "alqa/corpus/tokenizer.hpp"
#include "alqa/generator/config.hpp"
#include "alqa/nn/training.hpp"

namespace alqa::generator {

using corpus::TokenId;
using corpus::TokenIds;

struct TrainingPair {
  enum class Kind { question, answer };
  Kind kind = Kind::question;
  TokenIds source;
  TokenId bos = corpus::kQuestionOpen;
  TokenIds target;  // modelled tokens after bos, ending with the matching end marker
};

using nn::EpochPlan;
using nn::EpochResult;

// Backend-specific state produced by encoding one source sequence.
class EncodedSource {
 public:
  virtual ~EncodedSource() = default;
};

// Conditional sequence model p(y_t | y_<t, x). Implementations provide the model
// core; decoding procedures are built on top of encode/next_logprobs.
//
// Stochastic mode applies inference-time dropout. Masks are a pure function of the
// seed given to set_stochastic, so one seed is one fixed subnetwork and repeated
// calls agree. With stochastic mode off every call is deterministic.
class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;

  virtual std::string backend_id() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::unique_ptr<GenerationBackend> clone() const = 0;

  virtual std::unique_ptr<EncodedSource> encode(std::span<const TokenId> source) const = 0;
  // Log-probabilities over the vocabulary for the token following `prefix` (prefix[0] is bos).
  virtual std::vector<double> next_logprobs(const EncodedSource& source, std::span<const TokenId> prefix) const = 0;

  virtual void set_stochastic(bool enabled, std::uint64_t seed) = 0;
  virtual bool stochastic() const = 0;

  // Resets optimizer state; anchored weights decay toward the current values.
  virtual void begin_training() = 0;
  virtual EpochResult train_epoch(std::span<const TrainingPair> pairs, const EpochPlan& plan) = 0;
  // Mean per-token negative log-likelihood.
  virtual double loss(std::span<const TrainingPair> pairs) const;

  virtual std::vector<std::uint8_t> snapshot() const = 0;
  virtual void restore(std::span<const std::uint8_t> snapshot) = 0;
  virtual std::uint64_t weights_hash() const = 0;
  virtual void save(const std::filesystem::path& dir) const = 0;
  virtual void load(const std::filesystem::path& dir) = 0;

  // Per-step log p(target_t | target_<t, source), teacher-forced from bos.
  std::vector<double> sequence_logprobs(std::span<const TokenId> source, TokenId bos,
                                        std::span<const TokenId> target) const;
  // Ancestral sampling with top-k / nucleus truncation. Stops after `end` or max_len tokens.
  TokenIds sample(std::span<const TokenId> source, TokenId bos, const DecodeConfig& cfg, std::size_t max_len,
                  TokenId end, std::uint64_t seed) const;
  // Beam search without length normalization. The result lacks `end` only when no
  // hypothesis finished within max_len.
  TokenIds beam_decode(std::span<const TokenId> source, TokenId bos, std::size_t beam_size, std::size_t max_len,
                       TokenId end) const;
};

// Index drawn from a truncated distribution; exposed for testing the truncation rule.
std::size_t sample_truncated(std::span<const double> logprobs, const DecodeConfig& cfg, double uniform01);
// Probabilities (normalized) of the truncated distribution; zero outside the kept set.
std::vector<double> truncated_distribution(std::span<const double> logprobs, const DecodeConfig& cfg);

using GenerationBackendPtr = std::unique_ptr<GenerationBackend>;

}  // namespace alqa::generator
