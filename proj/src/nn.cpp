#include "ssda/nn.hpp"

#include "ssda/errors.hpp"
#include "ssda/hash.hpp"

#include <cmath>

namespace ssda {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kSoftmax: return "softmax";
  }
  return "linear";
}

Activation activation_from_string(std::string_view name) {
  if (name == "linear") return Activation::kLinear;
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "softmax") return Activation::kSoftmax;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

Tensor activate(const Tensor& x, Activation a) {
  switch (a) {
    case Activation::kLinear: return x;
    case Activation::kRelu: return relu(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kSoftmax: return softmax_rows(x);
  }
  return x;
}

Matrix glorot_uniform(Index fan_in, Index fan_out, std::mt19937_64& rng) {
  if (fan_in <= 0 || fan_out <= 0) throw DimensionError("glorot_uniform: extents must be positive");
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(fan_in, fan_out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return w;
}

Matrix init_weights(Index fan_in, Index fan_out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return glorot_uniform(fan_in, fan_out, rng);
}

// ---------------------------------------------------------------------------

DenseLayer DenseLayer::create(Index in_dim, Index out_dim, Activation act, std::mt19937_64& rng) {
  DenseLayer layer;
  layer.weights = Tensor(glorot_uniform(in_dim, out_dim, rng), true);
  layer.bias = Tensor(Matrix::Zero(1, out_dim), true);
  layer.activation = act;
  return layer;
}

Tensor DenseLayer::forward(const Tensor& x) const {
  if (x.cols() != in_dim()) {
    throw DimensionError("dense layer expects width " + std::to_string(in_dim()) + ", got " +
                         to_string(x.shape()));
  }
  return activate(add(matmul(x, weights), bias), activation);
}

void DenseLayer::validate() const {
  if (!weights.defined() || !bias.defined()) throw ContractError("dense layer not initialized");
  if (bias.rows() != 1 || bias.cols() != weights.cols()) {
    throw DimensionError("bias " + to_string(bias.shape()) + " inconsistent with weights " +
                         to_string(weights.shape()));
  }
}

DenseLayer DenseLayer::clone() const {
  DenseLayer out;
  out.weights = Tensor(weights.value(), true);
  out.bias = Tensor(bias.value(), true);
  out.activation = activation;
  out.trainable = trainable;
  return out;
}

Tensor run_layers(std::span<const DenseLayer> layers, const Tensor& x) {
  Tensor h = x;
  for (const auto& layer : layers) h = layer.forward(h);
  return h;
}

std::vector<DenseLayer> clone_layers(std::span<const DenseLayer> layers) {
  std::vector<DenseLayer> out;
  out.reserve(layers.size());
  for (const auto& l : layers) out.push_back(l.clone());
  return out;
}

// ---------------------------------------------------------------------------

void AutoEncoder::validate() const {
  if (encoder.empty() || decoder.empty()) throw ContractError("auto-encoder has no layers");
  for (const auto& l : encoder) l.validate();
  for (const auto& l : decoder) l.validate();
  for (std::size_t i = 1; i < encoder.size(); ++i) {
    if (encoder[i].in_dim() != encoder[i - 1].out_dim()) {
      throw DimensionError("encoder layer " + std::to_string(i) + " width mismatch");
    }
  }
  for (std::size_t i = 1; i < decoder.size(); ++i) {
    if (decoder[i].in_dim() != decoder[i - 1].out_dim()) {
      throw DimensionError("decoder layer " + std::to_string(i) + " width mismatch");
    }
  }
  if (decoder.front().in_dim() != bottleneck()) {
    throw DimensionError("decoder input width differs from bottleneck width");
  }
  if (decoder.back().out_dim() != input_dim()) {
    throw DimensionError("decoder output width differs from encoder input width");
  }
  if (decoder.back().activation != Activation::kSigmoid) {
    throw ContractError("decoder must end in a sigmoid reconstruction layer");
  }
}

AutoEncoder AutoEncoder::clone() const {
  return AutoEncoder{clone_layers(encoder), clone_layers(decoder)};
}

AutoEncoder make_autoencoder(const AutoEncoderSpec& spec, std::uint64_t seed) {
  if (spec.input_dim <= 0 || spec.bottleneck <= 0) {
    throw ConfigError("auto-encoder input and bottleneck widths must be positive");
  }
  std::mt19937_64 rng(seed);
  AutoEncoder ae;
  Index width = spec.input_dim;
  for (Index h : spec.hidden) {
    ae.encoder.push_back(DenseLayer::create(width, h, Activation::kRelu, rng));
    width = h;
  }
  ae.encoder.push_back(DenseLayer::create(width, spec.bottleneck, Activation::kLinear, rng));
  width = spec.bottleneck;
  for (auto it = spec.hidden.rbegin(); it != spec.hidden.rend(); ++it) {
    ae.decoder.push_back(DenseLayer::create(width, *it, Activation::kRelu, rng));
    width = *it;
  }
  ae.decoder.push_back(DenseLayer::create(width, spec.input_dim, Activation::kSigmoid, rng));
  return ae;
}

Tensor encode(const AutoEncoder& ae, const Tensor& x) { return run_layers(ae.encoder, x); }

Tensor decode(const AutoEncoder& ae, const Tensor& features) {
  return run_layers(ae.decoder, features);
}

Tensor reconstruct(const AutoEncoder& ae, const Tensor& x) { return decode(ae, encode(ae, x)); }

// ---------------------------------------------------------------------------

void Classifier::validate() const {
  if (layers.empty()) throw ContractError("classifier has no layers");
  for (const auto& l : layers) l.validate();
  if (layers.back().activation != Activation::kSoftmax) {
    throw ContractError("classifier must end in a softmax layer");
  }
}

Classifier Classifier::clone() const { return Classifier{clone_layers(layers)}; }

Classifier make_classifier(Index bottleneck, Index classes, std::uint64_t seed,
                           const std::vector<Index>& hidden) {
  if (bottleneck <= 0 || classes <= 0) throw ConfigError("classifier widths must be positive");
  std::mt19937_64 rng(seed);
  Classifier clf;
  Index width = bottleneck;
  for (Index h : hidden) {
    clf.layers.push_back(DenseLayer::create(width, h, Activation::kRelu, rng));
    width = h;
  }
  clf.layers.push_back(DenseLayer::create(width, classes, Activation::kSoftmax, rng));
  return clf;
}

Tensor classify(const Classifier& clf, const Tensor& features) {
  return run_layers(clf.layers, features);
}

Tensor predict_proba(const TargetModel& model, const Tensor& x) {
  return classify(model.classifier, run_layers(model.encoder, x));
}

// ---------------------------------------------------------------------------

std::vector<Tensor> parameters(std::span<const DenseLayer> layers) {
  std::vector<Tensor> out;
  out.reserve(layers.size() * 2);
  for (const auto& l : layers) {
    out.push_back(l.weights);
    out.push_back(l.bias);
  }
  return out;
}

FreezeMask freeze_mask(std::span<const DenseLayer> layers) {
  FreezeMask mask;
  for (const auto& l : layers) {
    mask.trainable.push_back(l.trainable);
    mask.trainable.push_back(l.trainable);
  }
  return mask;
}

void set_trainable(std::span<DenseLayer> layers, bool trainable) {
  for (auto& l : layers) l.trainable = trainable;
}

std::vector<Tensor> parameters(const AutoEncoder& ae) {
  auto out = parameters(ae.encoder);
  auto dec = parameters(ae.decoder);
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

FreezeMask freeze_mask(const AutoEncoder& ae) {
  auto mask = freeze_mask(ae.encoder);
  auto dec = freeze_mask(ae.decoder);
  mask.trainable.insert(mask.trainable.end(), dec.trainable.begin(), dec.trainable.end());
  return mask;
}

std::string parameter_hash(std::span<const DenseLayer> layers) {
  Fnv1a h;
  for (const auto& l : layers) {
    h.update(l.weights.value().data(), l.weights.size());
    h.update(l.bias.value().data(), l.bias.size());
  }
  return h.hex();
}

void adam_step(std::span<Tensor> params, AdamState& state, const FreezeMask& mask) {
  if (mask.trainable.size() != params.size()) {
    throw ContractError("freeze mask has " + std::to_string(mask.trainable.size()) +
                        " flags for " + std::to_string(params.size()) + " parameters");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
      state.second_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ContractError("optimizer state tracks " + std::to_string(state.first_moment.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].rows() != params[i].rows() ||
        state.first_moment[i].cols() != params[i].cols()) {
      throw ContractError("optimizer moment shape differs from parameter " + std::to_string(i));
    }
    if (params[i].has_grad() && params[i].grad().rows() != params[i].rows()) {
      throw ContractError("gradient shape differs from parameter " + std::to_string(i));
    }
  }

  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!mask.trainable[i]) {
      p.zero_grad();
      continue;
    }
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    if (p.has_grad()) {
      const Matrix& g = p.grad();
      m = c.beta1 * m + (1.0 - c.beta1) * g;
      v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    } else {
      m *= c.beta1;
      v *= c.beta2;
    }
    Matrix next = p.value();
    next.array() -= c.learning_rate * (m.array() / bias1) / ((v.array() / bias2).sqrt() + c.epsilon);
    if (!next.allFinite()) throw NumericError("non-finite parameter after Adam step");
    p.mutable_value() = std::move(next);
    p.zero_grad();
  }
}

}  // namespace ssda
