#pragma once

#include <random>

#include "alqa/nn/nn.hpp"
#include "alqa/reader/backend.hpp"

namespace alqa::reader {

// Small from-scratch span reader. Each context token sees a +-radius window of
// embeddings plus question-match features (shifted match flags and "a question token
// occurs within k tokens to the left/right"); one tanh layer gives token states that
// are scored against a question vector by separate start and end bilinear heads.
// Embeddings and the encoder layer are anchored for decay-to-pretrained.
class SpanReader final : public ReaderBackend {
 public:
  static constexpr const char* kBackendId = "toy-span-reader";

  struct Dims {
    std::size_t vocab = 0;
    int embed = 24;
    int hidden = 48;
    int radius = 2;
    double dropout = 0.1;
  };

  SpanReader(Dims dims, std::uint64_t init_seed);
  SpanReader(const SpanReader& other);

  std::string backend_id() const override { return kBackendId; }
  std::unique_ptr<ReaderBackend> clone() const override;

  SpanDistributions span_distributions(std::span<const TokenId> question,
                                       std::span<const TokenId> context) const override;

  void set_stochastic(bool enabled, std::uint64_t seed) override;
  bool stochastic() const override { return stochastic_; }

  void begin_training() override;
  nn::EpochResult train_epoch(std::span<const ReaderExample> examples, const nn::EpochPlan& plan) override;

  std::vector<std::uint8_t> snapshot() const override { return params_.serialize(); }
  void restore(std::span<const std::uint8_t> s) override { params_.deserialize(s); }
  std::uint64_t weights_hash() const override { return params_.hash(); }
  void save(const std::filesystem::path& dir) const override;
  void load(const std::filesystem::path& dir) override;

  // Loss -log p(start) - log p(end); with `grad`, gradients are added into the parameters.
  double example_loss(const ReaderExample& ex, bool grad, std::mt19937_64* rng);

  nn::ParameterSet& parameters() { return params_; }

  static std::unique_ptr<SpanReader> from_directory(const std::filesystem::path& dir);

 private:
  struct Forward;
  enum Slot { kEmbed, kEncW, kEncB, kQW, kQB, kStartW, kStartV, kEndW, kEndV, kSlotCount };
  nn::Matrix& w(Slot s) { return params_.params()[s].value; }
  const nn::Matrix& w(Slot s) const { return params_.params()[s].value; }
  nn::Matrix& g(Slot s) { return params_.params()[s].grad; }

  void forward(std::span<const TokenId> question, std::span<const TokenId> context, std::mt19937_64* rng,
               Forward& f) const;

  Dims dims_;
  nn::ParameterSet params_;
  std::unique_ptr<nn::Adam> adam_;
  bool stochastic_ = false;
  std::uint64_t stochastic_seed_ = 0;
};

}  // namespace alqa::reader
