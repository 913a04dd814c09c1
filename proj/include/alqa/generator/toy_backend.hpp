#pragma once

#include <memory>
#include <random>

#include "alqa/generator/backend.hpp"
#include "alqa/nn/nn.hpp"

namespace alqa::generator {

// Small from-scratch copy-attention generator.
//
// Encoder: each source position sees a +-radius window of token embeddings plus six
// features (five shifted "token also occurs in the question segment" flags and a
// question-segment flag), followed by one tanh layer.
// Decoder: state from the two previous tokens, the mean encoder state over the
// question segment and the mean encoder state at positions holding the previous token.
// Output: one softmax over vocabulary logits and per-position copy logits; copy
// logits get a learned bonus where the preceding source token equals the previous
// output token, which lets multi-token spans continue.
class CopyGenerator final : public GenerationBackend {
 public:
  static constexpr const char* kBackendId = "toy-copy-gen";

  struct Dims {
    std::size_t vocab = 0;
    int embed = 24;
    int hidden = 48;
    int radius = 2;
    double dropout = 0.1;
  };

  CopyGenerator(Dims dims, std::uint64_t init_seed);
  CopyGenerator(const CopyGenerator& other);

  std::string backend_id() const override { return kBackendId; }
  std::size_t vocab_size() const override { return dims_.vocab; }
  std::unique_ptr<GenerationBackend> clone() const override;

  std::unique_ptr<EncodedSource> encode(std::span<const TokenId> source) const override;
  std::vector<double> next_logprobs(const EncodedSource& source, std::span<const TokenId> prefix) const override;

  void set_stochastic(bool enabled, std::uint64_t seed) override;
  bool stochastic() const override { return stochastic_; }

  void begin_training() override;
  EpochResult train_epoch(std::span<const TrainingPair> pairs, const EpochPlan& plan) override;
  double loss(std::span<const TrainingPair> pairs) const override;

  std::vector<std::uint8_t> snapshot() const override { return params_.serialize(); }
  void restore(std::span<const std::uint8_t> snapshot) override { params_.deserialize(snapshot); }
  std::uint64_t weights_hash() const override { return params_.hash(); }
  void save(const std::filesystem::path& dir) const override;
  void load(const std::filesystem::path& dir) override;

  // Summed NLL of one pair. With `grad` set, gradients are added into the parameters.
  // Dropout is drawn from `rng` when given, and disabled otherwise.
  double pair_loss(const TrainingPair& pair, bool grad, std::mt19937_64* rng);

  nn::ParameterSet& parameters() { return params_; }
  const Dims& dims() const { return dims_; }

  static std::unique_ptr<CopyGenerator> from_directory(const std::filesystem::path& dir);

 private:
  struct Encoded;
  struct Step;

  enum Slot { kEmbed, kEncW, kEncB, kDecW, kDecB, kOutW, kOutB, kAttW, kCont, kSlotCount };
  nn::Matrix& w(Slot s) { return params_.params()[s].value; }
  const nn::Matrix& w(Slot s) const { return params_.params()[s].value; }
  nn::Matrix& g(Slot s) { return params_.params()[s].grad; }

  std::unique_ptr<Encoded> encode_impl(std::span<const TokenId> source, std::mt19937_64* rng) const;
  void step_impl(const Encoded& enc, std::span<const TokenId> prefix, std::mt19937_64* rng, Step& out) const;
  nn::Vector mask_for(Eigen::Index n, std::uint64_t key, std::mt19937_64* rng) const;

  Dims dims_;
  nn::ParameterSet params_;
  std::unique_ptr<nn::Adam> adam_;
  bool stochastic_ = false;
  std::uint64_t stochastic_seed_ = 0;
};

// Builds a fresh backend by id. `options` may override dimensions.
GenerationBackendPtr make_generation_backend(const std::string& backend_id, std::size_t vocab_size,
                                             std::uint64_t seed, const json& options = json::object());
// Restores a backend saved with GenerationBackend::save.
GenerationBackendPtr load_generation_backend(const std::filesystem::path& dir);

}  // namespace alqa::generator
