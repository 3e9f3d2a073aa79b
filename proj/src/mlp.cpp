#include "crk/mlp.hpp"

#include "crk/errors.hpp"
#include "crk/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace crk {

namespace {

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation a) {
  return a == Activation::Tanh ? Eigen::MatrixXd(z.array().tanh()) : z;
}

// Derivative of the activation evaluated at pre-activation z.
Eigen::MatrixXd activate_prime(const Eigen::MatrixXd& z, Activation a) {
  if (a == Activation::Identity) return Eigen::MatrixXd::Ones(z.rows(), z.cols());
  return 1.0 - z.array().tanh().square();
}

struct Adam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int t = 0;
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;

  Adam(double rate, const std::vector<Mlp::Layer>& layers) : lr(rate) {
    for (const auto& l : layers) {
      mw.push_back(Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()));
      vw.push_back(mw.back());
      mb.push_back(Eigen::VectorXd::Zero(l.bias.size()));
      vb.push_back(mb.back());
    }
  }

  void step(std::vector<Mlp::Layer>& layers, const std::vector<Eigen::MatrixXd>& gw,
            const std::vector<Eigen::VectorXd>& gb) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, t), c2 = 1.0 - std::pow(beta2, t);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      mw[l] = beta1 * mw[l] + (1 - beta1) * gw[l];
      vw[l] = beta2 * vw[l] + (1 - beta2) * gw[l].cwiseProduct(gw[l]);
      layers[l].weights.array() -= lr * (mw[l].array() / c1) / ((vw[l].array() / c2).sqrt() + eps);
      mb[l] = beta1 * mb[l] + (1 - beta1) * gb[l];
      vb[l] = beta2 * vb[l] + (1 - beta2) * gb[l].cwiseProduct(gb[l]);
      layers[l].bias.array() -= lr * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + eps);
    }
  }
};

}  // namespace

Mlp::Mlp(std::vector<Layer> layers, Activation activation, Eigen::VectorXd input_mean, Eigen::VectorXd input_scale,
         double output_mean, double output_scale)
    : layers_(std::move(layers)),
      activation_(activation),
      input_mean_(std::move(input_mean)),
      input_scale_(std::move(input_scale)),
      output_mean_(output_mean),
      output_scale_(output_scale) {
  if (layers_.empty()) throw std::invalid_argument("network needs at least one layer");
  if (input_mean_.size() != input_scale_.size() || layers_.front().weights.rows() != input_mean_.size())
    throw std::invalid_argument("input standardization does not match the first layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].bias.size() != layers_[l].weights.cols()) throw std::invalid_argument("bias size mismatch");
    if (l > 0 && layers_[l].weights.rows() != layers_[l - 1].weights.cols())
      throw std::invalid_argument("layer shapes do not chain");
  }
  if (layers_.back().weights.cols() != 1) throw std::invalid_argument("output layer must have one unit");
}

Eigen::MatrixXd Mlp::standardize(const Eigen::MatrixXd& rows) const {
  if (rows.cols() != input_dim()) throw std::invalid_argument("input has wrong width");
  return (rows.rowwise() - input_mean_.transpose()).array().rowwise() / input_scale_.transpose().array();
}

Eigen::VectorXd Mlp::forward(const Eigen::MatrixXd& standardized, std::vector<Eigen::MatrixXd>* pre) const {
  Eigen::MatrixXd a = standardized;
  if (pre) pre->clear();
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    Eigen::MatrixXd z = (a * layers_[l].weights).rowwise() + layers_[l].bias.transpose();
    a = activate(z, activation_);
    if (pre) pre->push_back(std::move(z));
  }
  const auto& out = layers_.back();
  return ((a * out.weights).rowwise() + out.bias.transpose()).col(0);
}

double Mlp::predict(std::span<const double> row) const {
  const Eigen::MatrixXd r = Eigen::Map<const Eigen::RowVectorXd>(row.data(), static_cast<Eigen::Index>(row.size()));
  return predict(r)[0];
}

Eigen::VectorXd Mlp::predict(const Eigen::MatrixXd& rows) const {
  return (forward(standardize(rows), nullptr).array() * output_scale_ + output_mean_).matrix();
}

Eigen::MatrixXd Mlp::input_gradients(const Eigen::MatrixXd& rows) const {
  std::vector<Eigen::MatrixXd> pre;
  forward(standardize(rows), &pre);
  // delta starts as d out / d a_L for every row.
  Eigen::MatrixXd delta = Eigen::MatrixXd::Ones(rows.rows(), 1) * layers_.back().weights.transpose();
  for (std::size_t l = layers_.size() - 1; l-- > 0;) {
    delta = delta.cwiseProduct(activate_prime(pre[l], activation_));
    delta = delta * layers_[l].weights.transpose();
  }
  // Chain through the input standardization and output scaling.
  return (delta.array().rowwise() / input_scale_.transpose().array()) * output_scale_;
}

Mlp fit_mlp(const Eigen::VectorXd& y, const Eigen::MatrixXd& design, const MlpConfig& config) {
  if (design.rows() != y.size()) throw std::invalid_argument("mlp: design rows differ from response length");
  if (design.rows() < 2) throw std::invalid_argument("mlp needs at least 2 rows");
  if (config.epochs < 1 || !(config.learning_rate > 0)) throw std::invalid_argument("invalid mlp training config");
  for (int h : config.hidden)
    if (h < 1) throw std::invalid_argument("hidden layer width must be >= 1");

  const Eigen::Index n = design.rows(), d = design.cols();
  Eigen::VectorXd mean = design.colwise().mean().transpose();
  Eigen::VectorXd scale(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double sd = std::sqrt((design.col(j).array() - mean[j]).square().mean());
    scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  const double y_mean = y.mean();
  double y_scale = std::sqrt((y.array() - y_mean).square().mean());
  if (!(y_scale > 1e-12)) y_scale = 1.0;

  Rng rng = make_rng(config.seed, {stream::kMlpInit});
  std::vector<Mlp::Layer> layers;
  Eigen::Index fan_in = d;
  std::vector<int> widths = config.hidden;
  widths.push_back(1);
  for (int w : widths) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + w));
    std::uniform_real_distribution<double> unif(-limit, limit);
    Mlp::Layer layer{Eigen::MatrixXd(fan_in, w), Eigen::VectorXd::Zero(w)};
    for (Eigen::Index i = 0; i < fan_in; ++i)
      for (Eigen::Index j = 0; j < w; ++j) layer.weights(i, j) = unif(rng);
    layers.push_back(std::move(layer));
    fan_in = w;
  }
  Mlp mlp(std::move(layers), config.activation, mean, scale, y_mean, y_scale);

  const Eigen::MatrixXd x = mlp.standardize(design);
  const Eigen::VectorXd target = (y.array() - y_mean) / y_scale;
  Adam adam(config.learning_rate, mlp.layers_);
  const Eigen::Index batch = config.batch_size > 0 ? std::min<Eigen::Index>(config.batch_size, n) : n;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  const std::size_t L = mlp.layers_.size();
  std::vector<Eigen::MatrixXd> gw(L);
  std::vector<Eigen::VectorXd> gb(L);
  std::vector<Eigen::MatrixXd> pre, acts;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (batch < n) std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index m = std::min(batch, n - start);
      std::vector<Eigen::Index> idx(order.begin() + start, order.begin() + start + m);
      const Eigen::MatrixXd xb = batch < n ? Eigen::MatrixXd(x(idx, Eigen::all)) : x;
      const Eigen::VectorXd yb = batch < n ? Eigen::VectorXd(target(idx)) : target;

      // Forward, keeping activations for the backward pass.
      acts.assign(1, xb);
      pre.clear();
      for (std::size_t l = 0; l + 1 < L; ++l) {
        pre.push_back((acts.back() * mlp.layers_[l].weights).rowwise() + mlp.layers_[l].bias.transpose());
        acts.push_back(activate(pre.back(), mlp.activation_));
      }
      const Eigen::VectorXd out = ((acts.back() * mlp.layers_[L - 1].weights).rowwise() +
                                   mlp.layers_[L - 1].bias.transpose()).col(0);
      const Eigen::VectorXd err = out - yb;
      epoch_loss += 0.5 * err.squaredNorm();

      Eigen::MatrixXd delta = err / static_cast<double>(m);
      for (std::size_t l = L; l-- > 0;) {
        gw[l] = acts[l].transpose() * delta;
        gb[l] = delta.colwise().sum().transpose();
        if (l > 0) {
          delta = (delta * mlp.layers_[l].weights.transpose()).cwiseProduct(activate_prime(pre[l - 1], mlp.activation_));
        }
      }
      adam.step(mlp.layers_, gw, gb);
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss))
      throw NumericalError("mlp training diverged at epoch " + std::to_string(epoch + 1));
    mlp.loss_history_.push_back(epoch_loss);
  }
  return mlp;
}

}  // namespace crk
