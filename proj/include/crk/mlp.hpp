#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace crk {

enum class Activation { Tanh, Identity };

struct MlpConfig {
  std::vector<int> hidden{64, 64};
  Activation activation = Activation::Tanh;
  int epochs = 500;
  double learning_rate = 0.01;  // Adam step size
  int batch_size = 0;           // 0 = full batch
  std::uint64_t seed = 0;
};

/// Dense regression network with smooth hidden activations and a linear
/// scalar output. Inputs and the response are standardized internally;
/// predictions and gradients are on the caller's scale.
class Mlp {
 public:
  struct Layer {
    Eigen::MatrixXd weights;  // fan_in x fan_out
    Eigen::VectorXd bias;     // fan_out
  };

  Mlp() = default;
  /// The last layer must have a single output. Inputs are mapped to
  /// (x - input_mean) / input_scale and the raw output to
  /// output_mean + output_scale * out.
  Mlp(std::vector<Layer> layers, Activation activation, Eigen::VectorXd input_mean, Eigen::VectorXd input_scale,
      double output_mean = 0.0, double output_scale = 1.0);

  Eigen::Index input_dim() const { return input_mean_.size(); }
  const std::vector<Layer>& layers() const { return layers_; }
  const std::vector<double>& loss_history() const { return loss_history_; }

  double predict(std::span<const double> row) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& rows) const;

  /// d output / d input for every row (rows x input_dim), by backpropagation.
  Eigen::MatrixXd input_gradients(const Eigen::MatrixXd& rows) const;

 private:
  friend Mlp fit_mlp(const Eigen::VectorXd&, const Eigen::MatrixXd&, const MlpConfig&);

  // Hidden pre-activations per layer and the standardized output.
  Eigen::VectorXd forward(const Eigen::MatrixXd& standardized, std::vector<Eigen::MatrixXd>* pre) const;
  Eigen::MatrixXd standardize(const Eigen::MatrixXd& rows) const;

  std::vector<Layer> layers_;
  Activation activation_ = Activation::Tanh;
  Eigen::VectorXd input_mean_;
  Eigen::VectorXd input_scale_;
  double output_mean_ = 0.0;
  double output_scale_ = 1.0;
  std::vector<double> loss_history_;
};

/// Trains with Adam on mean squared error. Throws NumericalError if the loss
/// becomes non-finite.
Mlp fit_mlp(const Eigen::VectorXd& y, const Eigen::MatrixXd& design, const MlpConfig& config);

inline Eigen::MatrixXd mlp_input_gradients(const Mlp& mlp, const Eigen::MatrixXd& rows) {
  return mlp.input_gradients(rows);
}

}  // namespace crk
