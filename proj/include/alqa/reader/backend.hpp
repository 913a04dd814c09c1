#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "alqa/common/jsonl.hpp"
#include "alqa/corpus/tokenizer.hpp"
#include "alqa/nn/training.hpp"

namespace alqa::reader {

using corpus::TokenId;
using corpus::TokenIds;

// Per-token log-probabilities of the answer starting / ending at each context token.
struct SpanDistributions {
  std::vector<double> start;
  std::vector<double> end;
};

// One supervised chunk: the answer occupies context tokens [start, end] (inclusive).
struct ReaderExample {
  TokenIds question;
  TokenIds context;
  std::size_t start = 0;
  std::size_t end = 0;
};

// Span-extraction model over (question, context chunk). Stochastic mode applies
// inference-time dropout with masks fixed by the seed given to set_stochastic.
class ReaderBackend {
 public:
  virtual ~ReaderBackend() = default;

  virtual std::string backend_id() const = 0;
  virtual std::unique_ptr<ReaderBackend> clone() const = 0;

  virtual SpanDistributions span_distributions(std::span<const TokenId> question,
                                               std::span<const TokenId> context) const = 0;

  virtual void set_stochastic(bool enabled, std::uint64_t seed) = 0;
  virtual bool stochastic() const = 0;

  // Resets optimizer state and records the current encoder weights as the decay anchor.
  virtual void begin_training() = 0;
  virtual nn::EpochResult train_epoch(std::span<const ReaderExample> examples, const nn::EpochPlan& plan) = 0;

  virtual std::vector<std::uint8_t> snapshot() const = 0;
  virtual void restore(std::span<const std::uint8_t> snapshot) = 0;
  virtual std::uint64_t weights_hash() const = 0;
  virtual void save(const std::filesystem::path& dir) const = 0;
  virtual void load(const std::filesystem::path& dir) = 0;
};

using ReaderBackendPtr = std::unique_ptr<ReaderBackend>;

ReaderBackendPtr make_reader_backend(const std::string& backend_id, std::size_t vocab_size, std::uint64_t seed,
                                     const json& options = json::object());
ReaderBackendPtr load_reader_backend(const std::filesystem::path& dir);

}  // namespace alqa::reader
