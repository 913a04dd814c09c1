#pragma once

// Small dense-network toolkit behind the toy backends: parameter storage with
// binary (de)serialization, Adam, dropout masks and a windowed token encoder.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "alqa/corpus/tokenizer.hpp"

namespace alqa::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using corpus::TokenId;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool anchored = false;  // subject to decay toward the weights at training start
};

class ParameterSet {
 public:
  // Gaussian init with standard deviation `scale` (0 gives zeros).
  Parameter& add(std::string name, Eigen::Index rows, Eigen::Index cols, double scale, std::mt19937_64& rng,
                 bool anchored = false);

  std::deque<Parameter>& params() { return params_; }
  const std::deque<Parameter>& params() const { return params_; }
  void zero_grad();
  double grad_norm() const;
  void scale_grad(double factor);
  std::size_t scalar_count() const;

  std::uint64_t hash() const;
  std::vector<std::uint8_t> serialize() const;
  // Fails unless names and shapes match the existing parameters.
  void deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& file) const;
  void load(const std::filesystem::path& file);

 private:
  std::deque<Parameter> params_;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double anchor_decay = 0.0;  // lambda of the L2 pull toward the anchor weights
  double max_grad_norm = 5.0;
};

class Adam {
 public:
  explicit Adam(ParameterSet& params);
  // Records the current values of anchored parameters as decay targets.
  void set_anchor();
  void step(double learning_rate, const AdamOptions& options);
  std::size_t steps() const { return t_; }

 private:
  ParameterSet& params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::vector<Matrix> anchor_;
  std::size_t t_ = 0;
};

// Inverted-dropout keep mask: entries are 0 or 1/(1-rate).
Vector dropout_mask(Eigen::Index n, double rate, std::mt19937_64& rng);
// Same, drawn from a stream determined by (seed, key) alone.
Vector keyed_dropout_mask(Eigen::Index n, double rate, std::uint64_t seed, std::uint64_t key);

double logsumexp(const Vector& v);
Vector log_softmax(const Vector& v);
inline double log_add_exp(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == -std::numeric_limits<double>::infinity()) return a;
  return a + std::log1p(std::exp(b - a));
}

// Rows [E(x_{j-r}) .. E(x_{j+r}), features_j]; out-of-range neighbours use E(pad).
Matrix window_inputs(const Matrix& embeddings, std::span<const TokenId> ids, const Matrix& features, int radius);
// Scatters d(window_inputs) back onto embedding rows.
void window_inputs_backward(const Matrix& d_inputs, std::span<const TokenId> ids, int radius, Matrix& d_embeddings);

// Linear warm-up over the first warmup_fraction of steps then linear decay to zero.
double warmup_linear_lr(double base, std::size_t step, std::size_t total_steps, double warmup_fraction);

}  // namespace alqa::nn
